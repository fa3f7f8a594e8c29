"""Semi-implicit time stepping of the visco-elastic contact problem.

Each step minimizes the incremental boundary functional through the
bound-constrained QP, recovers the fictitious displacement v^k, and updates
the real displacement and the contact gap by the convex recursions

    u^k = (tau v^k + chi u^{k-1}) / (tau + chi),
    z^k = (tau w^k + chi z^{k-1}) / (tau + chi).

The discrete energy estimate is evaluated with every bulk integral rewritten
as boundary work: all displacement fields involved are equilibrium elastic
fields, so  int e(a):C:e(b) dOmega  equals the symmetrized boundary pairing
(<p(a), b> + <p(b), a>)/2 of stored tractions and traces.  Its residuum
drives the optional time-step adaptivity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import solve_tbvp
from .contact import (
    ContactLaw,
    GapState,
    awb_to_y,
    contact_mass,
    frame_join,
    y_to_awb,
)
from .qp import QPError, build_qp, mprgp_solve
from .steklov import SteklovOperator


class EvolveError(RuntimeError):
    pass


class DeadlockError(EvolveError):
    """Adaptivity cannot satisfy the tolerance even at the minimum step."""


@dataclass
class LoadProgram:
    """Piecewise-linear-in-time boundary data for both domains.

    g_D[d] is None or an array (n_times, 2 * n_nodes) of nodal Dirichlet
    values; f_N[d] is None or (n_times, 2 * n_phi) of traction coefficients.
    Values are clamped outside [times[0], times[-1]].
    """

    times: np.ndarray
    g_D: list
    f_N: list

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) < 1 or np.any(np.diff(self.times) <= 0.0):
            raise EvolveError("load breakpoints must be strictly increasing")

    def _interp(self, table, t):
        if table is None:
            return None
        t = min(max(t, self.times[0]), self.times[-1])
        j = int(np.searchsorted(self.times, t, side="right")) - 1
        j = min(max(j, 0), len(self.times) - 2) if len(self.times) > 1 else 0
        if len(self.times) == 1:
            return np.asarray(table[0], dtype=float)
        t0, t1 = self.times[j], self.times[j + 1]
        lam = (t - t0) / (t1 - t0)
        return (1 - lam) * np.asarray(table[j]) + lam * np.asarray(table[j + 1])

    def g_at(self, t):
        return [self._interp(tab, t) for tab in self.g_D]

    def f_at(self, t):
        return [self._interp(tab, t) for tab in self.f_N]


def modified_dirichlet(loads: LoadProgram, t: float, tau: float, chi: float):
    """Dirichlet data of the fictitious step problem at time t."""
    if not tau > 0.0:
        raise EvolveError(f"time step must be positive: {tau}")
    g_now = loads.g_at(t)
    g_old = loads.g_at(t - tau)
    out = []
    for gn, go in zip(g_now, g_old):
        out.append(None if gn is None else gn + (chi / tau) * (gn - go))
    return out


@dataclass
class EnergyResiduum:
    """Terms of the per-step discrete energy estimate (N mm).

    delta = right side - left side >= 0 up to roundoff; accepted steps in
    adaptive mode additionally satisfy delta <= eps.
    """

    r1: float  # friction dissipation increment
    visc: float  # viscous dissipation (2/tau) R2 increment
    stored_new: float
    stored_old: float
    work_mixed: float  # C/D stress work on the Dirichlet-lift increment
    work_lift: float  # elastic energy of the lift increment
    work_ext: float  # Neumann work on the displacement increment
    gap: float = 0.0  # minimality gap of the incremental functional

    @property
    def delta(self) -> float:
        """Energy imbalance of the step, exact in the discrete system.

        Evaluated as the incremental functional at the do-nothing competitor
        (gap state frozen, slip zero) minus its minimum; nonnegative up to
        the QP solver tolerance, unlike the boundary-pairing decomposition
        below, which carries signed discretization error.
        """
        return self.gap

    @property
    def delta_pairing(self) -> float:
        """Same imbalance from the logged decomposition terms (diagnostic)."""
        right = self.stored_old + self.work_mixed + self.work_lift + self.work_ext
        left = self.r1 + self.visc + self.stored_new
        return right - left

    @property
    def scale(self) -> float:
        return max(abs(self.stored_new), abs(self.stored_old), self.r1,
                   abs(self.visc), abs(self.work_ext), 1e-30)


@dataclass
class EvolutionState:
    """Accepted solution history needed to take the next step."""

    k: int
    t: float
    z: GapState
    u: list  # per-domain nodal displacement traces at step k
    pu: list  # per-domain elastic tractions of the field u^k
    stored: float  # discrete stored energy E at step k
    y_warm: np.ndarray = None
    ledger: dict = field(default_factory=lambda: {
        "r1": 0.0, "visc": 0.0, "work": 0.0, "delta": 0.0})

    @classmethod
    def initial(cls, im, z0: GapState = None) -> "EvolutionState":
        pair = im.pair
        z = z0 if z0 is not None else GapState.rest(pair.n_master_nodes)
        u = [np.zeros(2 * dd.mesh.n_nodes) for dd in im.layout.domains]
        pu = [np.zeros(2 * dd.n_phi) for dd in im.layout.domains]
        return cls(k=0, t=0.0, z=z, u=u, pu=pu, stored=0.0)


def _pairing(Mg, p, v):
    return float(p @ (Mg @ v))


def _stored_energy(im, law, M, u, pu, z: GapState) -> float:
    e = 0.0
    for Mg, p, v in zip(im.Mg, pu, u):
        e += 0.5 * _pairing(Mg, p, v)
    beta = z.beta_prev()
    e += 0.5 * law.k_g * beta @ (M @ beta)
    return e


@dataclass
class StepResult:
    state: EvolutionState
    residuum: EnergyResiduum
    sol: object  # fictitious boundary solution at step k
    qp_iterations: int
    qp_backsolves: int


def step(im, law: ContactLaw, chi: float, loads: LoadProgram,
         state: EvolutionState, tau: float, qp_rtol: float = 1e-8,
         qp_telemetry: list = None) -> StepResult:
    """One semi-implicit step of size tau from the given accepted state."""
    pair = im.pair
    M = contact_mass(pair)
    t_k = state.t + tau
    g_tilde = modified_dirichlet(loads, t_k, tau, chi)
    f_k = loads.f_at(t_k)
    op = SteklovOperator(im, g_D=g_tilde, f_N=f_k)
    qp = build_qp(op, law, tau, chi, state.z)
    qsol = mprgp_solve(qp, y0=state.y_warm, rtol=qp_rtol,
                       telemetry=qp_telemetry)
    _, beta, w_t, w_n = y_to_awb(qsol.y)
    # at nodes with zero friction weight the slip magnitude is indeterminate
    # (flat objective direction); snap it to its tight value so the stored
    # state satisfies the optimality characterization exactly
    alpha = np.abs(w_t - state.z.z_t)
    y_tight = awb_to_y(alpha, beta, w_t, w_n)
    # energy residuum: minimality gap of the incremental functional against
    # the do-nothing competitor (previous gap state carried over unchanged),
    # mapped from the fictitious to the physical displacement scale by the
    # same convex factor as the state recursion
    beta_c = np.maximum(0.0, -(1.0 + chi / tau) * state.z.z_n)
    y_comp = awb_to_y(np.zeros_like(alpha), beta_c, state.z.z_t, state.z.z_n)
    gap = (tau / (tau + chi)) * (qp.objective(y_comp) - qp.objective(y_tight))
    sol = op.solve(frame_join(pair, w_t, w_n))

    lam = tau / (tau + chi)
    z_new = GapState(z_t=lam * w_t + (1 - lam) * state.z.z_t,
                     z_n=lam * w_n + (1 - lam) * state.z.z_n)
    u_new = [lam * v + (1 - lam) * u for v, u in zip(sol.v, state.u)]
    pu_new = [lam * p + (1 - lam) * q for p, q in zip(sol.p, state.pu)]

    stored_new = _stored_energy(im, law, M, u_new, pu_new, z_new)
    du = [a - b for a, b in zip(u_new, state.u)]
    dp = [a - b for a, b in zip(pu_new, state.pu)]

    beta_prev = state.z.beta_prev()
    r1 = law.mu * law.k_g * beta_prev @ (M @ np.abs(z_new.z_t - state.z.z_t))
    visc = (chi / tau) * sum(
        _pairing(Mg, q, v) for Mg, q, v in zip(im.Mg, dp, du))

    work_mixed = 0.0
    work_lift = 0.0
    g_now, g_old = loads.g_at(t_k), loads.g_at(state.t)
    dg = [None if gn is None else gn - go for gn, go in zip(g_now, g_old)]
    if any(g is not None and np.any(g) for g in dg):
        # lift increment: glued-interface equilibrium field with the
        # Dirichlet increment as data and traction-free elsewhere
        lift = solve_tbvp(im, dg, [None] * len(dg),
                          w=np.zeros(2 * pair.n_master_nodes))
        for d, Mg in enumerate(im.Mg):
            work_mixed += 0.5 * (_pairing(Mg, state.pu[d], lift.v[d])
                                 + _pairing(Mg, lift.p[d], state.u[d]))
            work_mixed += (chi / tau) * 0.5 * (
                _pairing(Mg, dp[d], lift.v[d])
                + _pairing(Mg, lift.p[d], du[d]))
            work_lift += 0.5 * _pairing(Mg, lift.p[d], lift.v[d])

    work_ext = 0.0
    for d, Mg in enumerate(im.Mg):
        if f_k[d] is not None:
            work_ext += _pairing(Mg, f_k[d], du[d])

    res = EnergyResiduum(r1=r1, visc=visc, stored_new=stored_new,
                         stored_old=state.stored, work_mixed=work_mixed,
                         work_lift=work_lift, work_ext=work_ext, gap=gap)
    ledger = dict(state.ledger)
    ledger["r1"] += r1
    ledger["visc"] += visc
    ledger["work"] += work_mixed + work_lift + work_ext
    ledger["delta"] += res.delta
    new_state = EvolutionState(k=state.k + 1, t=t_k, z=z_new, u=u_new,
                               pu=pu_new, stored=stored_new, y_warm=y_tight,
                               ledger=ledger)
    return StepResult(state=new_state, residuum=res, sol=sol,
                      qp_iterations=qsol.iterations,
                      qp_backsolves=qsol.n_backsolves)


def adapt_tau(res: EnergyResiduum, eps: float, tau: float, tau_min: float,
              tau_max: float, grow_factor: float = 0.1):
    """Accept/reject rule on the energy residuum; returns (accept, new tau)."""
    if not eps > 0.0:
        raise EvolveError(f"residual tolerance must be positive: {eps}")
    if res.delta > eps:
        if tau <= tau_min * (1 + 1e-12):
            return True, tau_min  # cannot refine further; accept and warn
        return False, max(0.5 * tau, tau_min)
    if res.delta < grow_factor * eps:
        return True, min(2.0 * tau, tau_max)
    return True, tau


def contact_tractions(im, sol):
    """Nodal (p_t, p_n) of the physical contact traction on the master side.

    The Kelvin-Voigt traction at step k equals the elastic traction of the
    fictitious field v^k.  It is recovered consistently: the exact nodal
    contact forces (the gap gradient of the elastic potential) are mapped
    back to a traction through the contact mass matrix, which is more
    accurate than the raw traction trace near singular corners.
    """
    pair = im.pair
    force = im.W.T @ sol.x  # nodal force of the contact traction, xy comps
    M = contact_mass(pair)
    p_vec = np.empty((pair.n_master_nodes, 2))
    p_vec[:, 0] = np.linalg.solve(M, force[0::2])
    p_vec[:, 1] = np.linalg.solve(M, force[1::2])
    p_t = np.einsum("ij,ij->i", p_vec, pair.tangent)
    p_n = np.einsum("ij,ij->i", p_vec, pair.normal)
    return p_t, p_n


@dataclass
class StepRecord:
    k: int
    t: float
    tau: float
    z: GapState
    p_t: np.ndarray
    p_n: np.ndarray
    slip: np.ndarray  # nodal slip flags
    residuum: EnergyResiduum
    qp_iterations: int
    stored: float
    u: list  # per-domain nodal displacement traces
    y: np.ndarray = None  # transformed optimizer state of the step


def run(im, law: ContactLaw, chi: float, loads: LoadProgram, *, t_end: float,
        tau: float, tau_min: float = None, tau_max: float = None,
        eps: float = None, qp_rtol: float = 1e-8, max_rejects: int = 60,
        on_step=None) -> list:
    """March the evolution to t_end; fixed step if eps is None.

    Returns the records of the accepted steps.  on_step, if given, is called
    with each accepted StepRecord (streaming output).
    """
    if tau_min is None:
        tau_min = tau
    if tau_max is None:
        tau_max = tau
    state = EvolutionState.initial(im)
    records = []
    rejects = 0
    while state.t < t_end - 1e-12 * t_end:
        tau_k = min(tau, t_end - state.t)
        try:
            result = step(im, law, chi, loads, state, tau_k, qp_rtol=qp_rtol)
        except QPError as exc:
            raise EvolveError(f"QP failed at t={state.t + tau_k:.6g}: {exc}")
        if eps is not None:
            accept, tau = adapt_tau(result.residuum, eps, tau_k, tau_min,
                                    tau_max)
            if not accept:
                rejects += 1
                if rejects > max_rejects:
                    raise DeadlockError(
                        f"step {state.k + 1}: rejected {rejects} times in a "
                        f"row at tau_min={tau_min}")
                continue
        rejects = 0
        state = result.state
        p_t, p_n = contact_tractions(im, result.sol)
        prev_zt = records[-1].z.z_t if records else np.zeros_like(p_t)
        slip = np.abs(state.z.z_t - prev_zt) > 1e-10
        rec = StepRecord(k=state.k, t=state.t, tau=tau_k, z=state.z,
                         p_t=p_t, p_n=p_n, slip=slip,
                         residuum=result.residuum,
                         qp_iterations=result.qp_iterations,
                         stored=state.stored, u=state.u, y=state.y_warm)
        records.append(rec)
        if on_step is not None:
            on_step(rec)
    return records
