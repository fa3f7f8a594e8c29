"""Contact Poincare-Steklov operator of the coupled two-body problem.

Maps a nodal gap field w on the master contact trace to the elastic response
of both bodies; every application costs one backsolve against the factorized
influence matrices.  Calculus is exact at the discrete level: with the
coupled system K x = r + W w, the elastic potential of the solved state is
Phi(w) = -x^T (r + W w) / 2, so grad_w Phi = -W^T x and the contact Hessian
is -W^T K^{-1} W.  The Hessian is positive semidefinite; its nullspace holds
the rigid motions of a body that is supported through the contact alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    BoundarySolution,
    InfluenceMatrices,
    _master_w_columns,
    known_data_vector,
    mass_matrix,
    solve_tbvp,
)


class SteklovError(RuntimeError):
    pass


@dataclass
class SteklovOperator:
    """Affine solution map w -> boundary state, with contact calculus.

    The boundary data (g_D, f_N) enter through a cached offset solution; the
    homogeneous part is linear in w.
    """

    im: InfluenceMatrices
    g_D: list = None
    f_N: list = None
    offset: BoundarySolution = None
    _M_w: np.ndarray = field(default=None, repr=False)  # B contact mass, w cols
    _wcols: np.ndarray = field(default=None, repr=False)
    _r: np.ndarray = field(default=None, repr=False)
    _H: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        pair = self.im.pair
        if pair is None:
            raise SteklovError("contact operator needs a two-domain assembly")
        self._wcols = _master_w_columns(pair)
        M_C = mass_matrix(pair.mesh_B, "C")
        self._M_w = M_C[:, self._wcols]
        if self.g_D is None:
            self.g_D = [None, None]
        if self.f_N is None:
            self.f_N = [None, None]
        self._r = self.im.R_known @ known_data_vector(self.im, self.g_D, self.f_N)
        self.offset = solve_tbvp(
            self.im, self.g_D, self.f_N, w=np.zeros(self.n_w)
        )

    @property
    def n_w(self) -> int:
        """Number of scalar gap dofs (two per master contact node)."""
        return len(self._wcols)

    def apply(self, w: np.ndarray) -> BoundarySolution:
        """Homogeneous response to the gap field alone (zero boundary data)."""
        return solve_tbvp(self.im, [None, None], [None, None], w=w)

    def solve(self, w: np.ndarray) -> BoundarySolution:
        """Full affine state for the stored boundary data and gap w."""
        return solve_tbvp(self.im, self.g_D, self.f_N, w=w)

    def trace_master(self, sol: BoundarySolution) -> np.ndarray:
        """Master-side contact displacement trace, nodal (2 per node)."""
        return sol.v[1][self._wcols]

    def gradient(self, sol: BoundarySolution) -> np.ndarray:
        """d(elastic potential)/dw of the solved state (exact discretely)."""
        return -self.im.W.T @ sol.x

    def traction_master(self, sol: BoundarySolution) -> np.ndarray:
        """Master-side contact traction projected onto the nodal basis.

        Converges to -grad_w but is assembled from the master traction trace,
        so it serves as an independent diagnostic.
        """
        return self._M_w.T @ sol.p[1]

    def potential(self, sol: BoundarySolution) -> float:
        """Elastic potential of a solved state (includes data work terms)."""
        return float(-0.5 * sol.x @ sol.rhs)

    def energy_pairing(self, sol: BoundarySolution) -> float:
        """Boundary-pairing elastic energy (1/2) <p, v> per domain.

        Independent of the potential calculus; agrees up to discretization
        error and exactly on states the trial spaces represent exactly.
        """
        e = 0.0
        for p, v, Mg in zip(sol.p, sol.v, self.im.Mg):
            e += 0.5 * (p @ (Mg @ v))
        return float(e)

    def hessian(self) -> np.ndarray:
        """Dense contact Hessian: one backsolve per gap dof.

        Load-independent, so it is cached on the assembly and shared by all
        operators built on the same factorization.
        """
        if self._H is None:
            H = getattr(self.im, "_contact_hessian", None)
            if H is None:
                n = self.n_w
                H = np.empty((n, n))
                e = np.zeros(n)
                for i in range(n):
                    e[i] = 1.0
                    H[:, i] = self.gradient(self.apply(e))
                    e[i] = 0.0
                H = 0.5 * (H + H.T)
                self.im._contact_hessian = H
            self._H = H
        return self._H

    def gradient_offset(self) -> np.ndarray:
        """Gradient contribution of the boundary data (gradient at w = 0)."""
        return self.gradient(self.offset)
