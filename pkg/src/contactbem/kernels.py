"""Plane-strain Kelvin kernels and Galerkin double integrals.

Public entry points: pointwise kernel evaluation (kelvin_U, kelvin_T) and
galerkin_integral for a single element pair.  Whole-mesh assembly calls the
compiled driver in _kernels_impl directly.
"""

from __future__ import annotations

import numpy as np

from . import _kernels_impl as impl
from .mesh import BoundaryMesh, Material, element_frame

KERNEL_KINDS = ("U", "T", "T*", "S")

_G8 = impl.gauss01(8)
_G10 = impl.gauss01(10)


class KernelError(ValueError):
    pass


def kelvin_U(x, y, mat: Material) -> np.ndarray:
    """Kelvin fundamental solution U_kl(x, y), symmetric 2x2 (mm/MPa scale)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r_vec = y - x
    r = np.hypot(r_vec[0], r_vec[1])
    if r == 0.0:
        raise KernelError("coincident points")
    G = mat.shear_modulus
    nu = mat.poisson_ratio
    d = r_vec / r
    c = 1.0 / (8.0 * np.pi * G * (1.0 - nu))
    return c * (-(3.0 - 4.0 * nu) * np.log(r) * np.eye(2) + np.outer(d, d))


def kelvin_T(x, y, n_y, mat: Material) -> np.ndarray:
    """Traction kernel T_kl(x, y): traction at y (normal n_y) of the Kelvin
    field loaded at x in direction k."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = np.asarray(n_y, dtype=float)
    r_vec = y - x
    r = np.hypot(r_vec[0], r_vec[1])
    if r == 0.0:
        raise KernelError("coincident points")
    nu = mat.poisson_ratio
    d = r_vec / r
    o2 = 1.0 - 2.0 * nu
    drn = d @ n
    c = -1.0 / (4.0 * np.pi * (1.0 - nu) * r)
    return c * (
        drn * (o2 * np.eye(2) + 2.0 * np.outer(d, d))
        - o2 * (np.outer(d, n) - np.outer(n, d))
    )


def classify_pairs(mesh: BoundaryMesh):
    """Pair classification for one mesh: 0 disjoint, 1 adjacent, 2 coincident.

    For adjacent pairs, info bit 0 says the shared vertex starts element i,
    bit 1 says it starts element j.
    """
    m = mesh.n_elements
    kind = np.zeros((m, m), dtype=np.int64)
    info = np.zeros((m, m), dtype=np.int64)
    el = mesh.elements
    for i in range(m):
        kind[i, i] = 2
        for j in range(i + 1, m):
            shared = set(el[i]) & set(el[j])
            if len(shared) == 2:
                raise KernelError(f"elements {i} and {j} overlap")
            if len(shared) == 1:
                v = shared.pop()
                kind[i, j] = kind[j, i] = 1
                bi = 1 if el[i][0] == v else 0
                bj = 2 if el[j][0] == v else 0
                info[i, j] = bi | bj
                # swapped roles for the (j, i) ordering
                info[j, i] = (1 if el[j][0] == v else 0) | (2 if el[i][0] == v else 0)
    return kind, info


def mesh_geometry_arrays(mesh: BoundaryMesh):
    m = mesh.n_elements
    P = np.empty((m, 4))
    Ls = np.empty(m)
    Ns = np.empty((m, 2))
    for e in range(m):
        a, b = mesh.elements[e]
        P[e, 0:2] = mesh.nodes[a]
        P[e, 2:4] = mesh.nodes[b]
        _, n, L = element_frame(mesh, e)
        Ls[e] = L
        Ns[e] = n
    return P, Ls, Ns


def all_pair_blocks(mesh: BoundaryMesh, mat: Material):
    """U, T, S Galerkin blocks for every element pair of one domain.

    Returns (U, T, S) with shape (m, m, 4, 4); index (2m+k, 2n+l) pairs test
    shape m / component k with trial shape n / component l.  T[i, j] is
    tested on element i.
    """
    P, Ls, Ns = mesh_geometry_arrays(mesh)
    kind, info = classify_pairs(mesh)
    U, T, S, err = impl.compute_pair_blocks(
        P, Ls, Ns, kind, info,
        mat.shear_modulus, mat.poisson_ratio,
        _G8[0], _G8[1], _G10[0], _G10[1],
    )
    if err:
        raise KernelError("overlapping but non-identical elements in mesh")
    return U, T, S


def galerkin_integral(mesh: BoundaryMesh, e_test: int, e_trial: int, kind: str,
                      mat: Material) -> np.ndarray:
    """Galerkin double integral over one element pair, as a 4x4 block.

    Both shape families are linear per element; the phi/psi distinction
    (traction jumps at junctions) only matters during global assembly.
    """
    if kind not in KERNEL_KINDS:
        raise KernelError(f"unsupported kernel kind {kind!r}")
    if kind == "T*":
        return galerkin_integral(mesh, e_trial, e_test, "T", mat).T
    G = mat.shear_modulus
    nu = mat.poisson_ratio
    Ub = np.zeros((4, 4))
    Tij = np.zeros((4, 4))
    Tji = np.zeros((4, 4))
    Sb = np.zeros((4, 4))
    _, ni, Li = element_frame(mesh, e_test)
    ai, bi = mesh.elements[e_test]
    p0, p1 = mesh.nodes[ai], mesh.nodes[bi]
    if e_test == e_trial:
        impl._pair_coincident(p0[0], p0[1], p1[0], p1[1], Li, G, nu, Ub, Tij, Sb)
    else:
        _, nj, Lj = element_frame(mesh, e_trial)
        aj, bj = mesh.elements[e_trial]
        q0, q1 = mesh.nodes[aj], mesh.nodes[bj]
        shared = set(mesh.elements[e_test]) & set(mesh.elements[e_trial])
        if len(shared) == 2:
            raise KernelError("overlapping but non-identical elements")
        if len(shared) == 1:
            v = shared.pop()
            impl._pair_adjacent(
                p0[0], p0[1], p1[0], p1[1], q0[0], q0[1], q1[0], q1[1],
                Li, Lj, ni[0], ni[1], nj[0], nj[1],
                ai == v, aj == v,
                G, nu, _G10[0], _G10[1], Ub, Tij, Tji, Sb,
            )
        else:
            rc = impl._pair_separated(
                p0[0], p0[1], p1[0], p1[1], q0[0], q0[1], q1[0], q1[1],
                Li, Lj, ni[0], ni[1], nj[0], nj[1],
                G, nu, _G8[0], _G8[1], Ub, Tij, Tji, Sb,
            )
            if rc:
                raise KernelError("overlapping but non-identical elements")
    return {"U": Ub, "T": Tij, "S": Sb}[kind]
