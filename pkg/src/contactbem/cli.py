"""Scenario configuration, shipped presets, run orchestration and outputs.

A scenario is a strict YAML document: two domain specs (polyline, per-segment
part tags and subdivisions, material), the contact law, the relaxation time,
a piecewise-linear load schedule attached to polyline segments, and solver
settings.  The three shipped presets realize a receding layer-on-block
problem, a flat punch on a stiff foundation under non-proportional loading,
and a skewed punch that is pushed sideways until separation.

Outputs per run: contact_series.csv (one row per accepted step and master
contact node), energy_log.csv, optional snapshots/*.svg of the deformed
boundary, and run_manifest.yaml with the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .assembly import assemble, geometry_hash
from .contact import ContactError, ContactLaw
from .evolve import (
    DeadlockError,
    EvolveError,
    LoadProgram,
    run,
)
from .mesh import Material, MeshError, build_mesh, pair_contacts
from .qp import QPError


class ConfigError(ValueError):
    pass


# -- strict schema helpers ----------------------------------------------------

def _take(d: dict, key, path, required=True, default=None):
    if key not in d:
        if required:
            raise ConfigError(f"{path}: missing key {key!r}")
        return default
    return d.pop(key)


def _done(d: dict, path):
    if d:
        raise ConfigError(f"{path}: unknown keys {sorted(d)}")


def _number(v, path, lo=None, hi=None):
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    v = float(v)
    if lo is not None and v < lo:
        raise ConfigError(f"{path}: value {v} below minimum {lo}")
    if hi is not None and v > hi:
        raise ConfigError(f"{path}: value {v} above maximum {hi}")
    return v


@dataclass
class DomainSpec:
    label: str
    material: Material
    polyline: list
    parts: list
    allow_floating: bool = False


@dataclass
class SolverConfig:
    t_end: float
    tau: float
    tau_min: float = None
    tau_max: float = None
    eps: float = None  # N mm; adaptivity off when None
    qp_rtol: float = 1e-8
    plot_every: int = 0
    magnification: float = 1000.0


@dataclass
class Scenario:
    name: str
    chi: float
    law: ContactLaw
    domains: list  # [DomainSpec A, DomainSpec B]
    load_times: list
    neumann_loads: list  # {domain, segment, traction: (m, 2)}
    dirichlet_loads: list  # {domain, segment, values: (m, 2)}
    solver: SolverConfig


def _parse_parts(raw, path):
    parts = []
    for i, p in enumerate(raw):
        p = dict(p)
        tag = _take(p, "tag", f"{path}[{i}]")
        n = int(_number(_take(p, "n", f"{path}[{i}]"), f"{path}[{i}].n", lo=1))
        part = {"tag": tag, "n": n}
        grade = _take(p, "grade", f"{path}[{i}]", required=False)
        if grade is not None:
            if (not isinstance(grade, (list, tuple)) or len(grade) != 2
                    or grade[0] not in ("start", "end", "both")):
                raise ConfigError(f"{path}[{i}].grade: expected "
                                  f"[start|end|both, min_len]")
            part["grade"] = (grade[0], _number(grade[1], f"{path}[{i}].grade",
                                               lo=1e-12))
        _done(p, f"{path}[{i}]")
        parts.append(part)
    return parts


def _parse_loads(raw, path, n_times, value_key):
    out = []
    for i, entry in enumerate(raw or []):
        entry = dict(entry)
        p = f"{path}[{i}]"
        dom = int(_number(_take(entry, "domain", p), f"{p}.domain", lo=0, hi=1))
        seg = int(_number(_take(entry, "segment", p), f"{p}.segment", lo=0))
        vals = _take(entry, value_key, p)
        _done(entry, p)
        arr = np.asarray(vals, dtype=float)
        if arr.shape != (n_times, 2):
            raise ConfigError(f"{p}.{value_key}: expected shape "
                              f"({n_times}, 2), got {arr.shape}")
        out.append({"domain": dom, "segment": seg, "values": arr})
    return out


def parse_scenario(doc) -> Scenario:
    """Validate a scenario document (YAML text or mapping), strictly."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = yaml.safe_load(doc)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a mapping")
    doc = dict(doc)
    name = str(_take(doc, "name", "scenario"))
    chi = _number(_take(doc, "chi", "scenario"), "chi", lo=0.0)
    law_raw = dict(_take(doc, "contact", "scenario"))
    try:
        law = ContactLaw(
            mu=_number(_take(law_raw, "mu", "contact"), "contact.mu"),
            k_g=_number(_take(law_raw, "k_g", "contact"), "contact.k_g"),
        )
    except ContactError as exc:
        raise ConfigError(f"contact: {exc}")
    _done(law_raw, "contact")

    raw_domains = _take(doc, "domains", "scenario")
    if not isinstance(raw_domains, list) or len(raw_domains) != 2:
        raise ConfigError("domains: exactly two domains (A then B) required")
    domains = []
    for j, rd in enumerate(raw_domains):
        rd = dict(rd)
        p = f"domains[{j}]"
        mat_raw = dict(_take(rd, "material", p))
        E = _number(_take(mat_raw, "E", f"{p}.material"), f"{p}.material.E",
                    lo=1e-12)
        nu = _number(_take(mat_raw, "nu", f"{p}.material"), f"{p}.material.nu",
                     lo=0.0, hi=0.5 - 1e-12)
        _done(mat_raw, f"{p}.material")
        poly = _take(rd, "polyline", p)
        parts = _parse_parts(_take(rd, "parts", p), f"{p}.parts")
        floating = bool(_take(rd, "allow_floating", p, required=False,
                              default=False))
        label = str(_take(rd, "label", p, required=False, default="AB"[j]))
        _done(rd, p)
        if len(poly) != len(parts):
            raise ConfigError(f"{p}: one part per polyline segment required")
        domains.append(DomainSpec(
            label=label, material=Material(young_modulus=E, poisson_ratio=nu,
                                           relaxation_time=chi),
            polyline=[[_number(c, f"{p}.polyline") for c in v] for v in poly],
            parts=parts, allow_floating=floating))

    loads_raw = dict(_take(doc, "loads", "scenario"))
    times = [_number(t, "loads.times") for t in _take(loads_raw, "times",
                                                      "loads")]
    if len(times) < 1 or any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigError("loads.times: strictly increasing sequence needed")
    neumann = _parse_loads(_take(loads_raw, "neumann", "loads",
                                 required=False), "loads.neumann",
                           len(times), "traction")
    dirichlet = _parse_loads(_take(loads_raw, "dirichlet", "loads",
                                   required=False), "loads.dirichlet",
                             len(times), "values")
    _done(loads_raw, "loads")

    sol_raw = dict(_take(doc, "solver", "scenario"))
    tau = _number(_take(sol_raw, "tau", "solver"), "solver.tau", lo=1e-15)
    sc = SolverConfig(
        t_end=_number(_take(sol_raw, "t_end", "solver"), "solver.t_end",
                      lo=1e-15),
        tau=tau,
        tau_min=_number(_take(sol_raw, "tau_min", "solver", required=False,
                              default=tau), "solver.tau_min", lo=1e-15),
        tau_max=_number(_take(sol_raw, "tau_max", "solver", required=False,
                              default=tau), "solver.tau_max", lo=1e-15),
        eps=(None if sol_raw.get("eps") is None
             else _number(sol_raw.get("eps"), "solver.eps", lo=1e-30)),
        qp_rtol=_number(_take(sol_raw, "qp_rtol", "solver", required=False,
                              default=1e-8), "solver.qp_rtol", lo=1e-16),
        plot_every=int(_number(_take(sol_raw, "plot_every", "solver",
                                     required=False, default=0),
                               "solver.plot_every", lo=0)),
        magnification=_number(_take(sol_raw, "magnification", "solver",
                                    required=False, default=1000.0),
                              "solver.magnification", lo=0.0),
    )
    sol_raw.pop("eps", None)
    _done(sol_raw, "solver")
    _done(doc, "scenario")
    return Scenario(name=name, chi=chi, law=law, domains=domains,
                    load_times=times, neumann_loads=neumann,
                    dirichlet_loads=dirichlet, solver=sc)


# -- shipped presets ----------------------------------------------------------

def preset_receding(refine: int = 10) -> dict:
    """Elastic layer on a fixed square block, pressed by a central strip load.

    refine is the number of uniform contact elements in the central fine
    band; 10, 20 and 40 reproduce the three published discretizations.
    """
    if refine % 10 != 0:
        raise ConfigError("receding preset: refine must be a multiple of 10")
    s = refine // 10
    lmin = 4.0 / s
    tau = 1e-3 / s
    # block 200 x 200 fixed at the bottom; layer 160 x 10 centred on top;
    # load strip of width 10 centred at x = 100 (75 from the layer edge)
    block = {
        "label": "B",
        "material": {"E": 4.0e3, "nu": 0.35},
        "polyline": [[0, 0], [200, 0], [200, 200], [180, 200], [120, 200],
                     [80, 200], [20, 200], [0, 200]],
        "parts": [
            {"tag": "D", "n": 10 * s},
            {"tag": "N", "n": 10 * s},
            {"tag": "N", "n": 2 * s},
            {"tag": "C", "n": 6 * s, "grade": ["end", lmin]},
            {"tag": "C", "n": refine},
            {"tag": "C", "n": 6 * s, "grade": ["start", lmin]},
            {"tag": "N", "n": 2 * s},
            {"tag": "N", "n": 10 * s},
        ],
    }
    layer = {
        "label": "A",
        "material": {"E": 4.0e3, "nu": 0.35},
        "allow_floating": True,
        "polyline": [[20, 200], [80, 200], [120, 200], [180, 200],
                     [180, 210], [105, 210], [95, 210], [20, 210]],
        "parts": [
            {"tag": "C", "n": 6 * s, "grade": ["end", lmin]},
            {"tag": "C", "n": refine},
            {"tag": "C", "n": 6 * s, "grade": ["start", lmin]},
            {"tag": "N", "n": 2 * s},
            {"tag": "N", "n": 4 * s},
            {"tag": "N", "n": 2 * s},
            {"tag": "N", "n": 4 * s},
            {"tag": "N", "n": 2 * s},
        ],
    }
    t_end = 0.02
    return {
        "name": f"receding-N{refine}",
        "chi": 1e-3,
        "contact": {"mu": 0.8, "k_g": 4.0e5},
        "domains": [layer, block],
        "loads": {
            "times": [0.0, t_end],
            "neumann": [
                {"domain": 0, "segment": 5,
                 "traction": [[0.0, 0.0], [0.0, -0.5]]},
            ],
        },
        "solver": {"tau": tau, "t_end": t_end, "magnification": 5000.0},
    }


def preset_conforming() -> dict:
    """Flat elastic punch on a stiffer block: press down, then push the
    block sideways until it slides under the held punch."""
    E = 4.0e3
    return {
        "name": "conforming",
        "chi": 1e-3,
        "contact": {"mu": 0.2, "k_g": 4.0e5},
        "domains": [
            {  # punch, 100 x 50, horizontally held on top, pressed by f2
                "label": "A",
                "material": {"E": E, "nu": 0.35},
                "polyline": [[50, 300], [150, 300], [150, 350], [50, 350]],
                "parts": [
                    {"tag": "C", "n": 48, "grade": ["both", 0.11]},
                    {"tag": "N", "n": 10, "grade": ["start", 0.11]},
                    {"tag": "DxNy", "n": 8},
                    {"tag": "N", "n": 10, "grade": ["end", 0.11]},
                ],
            },
            {  # block 200 x 300, simply supported bottom and left
                "label": "B",
                "material": {"E": 4 * E, "nu": 0.35},
                "polyline": [[0, 0], [200, 0], [200, 300], [150, 300],
                             [50, 300], [0, 300]],
                "parts": [
                    {"tag": "NxDy", "n": 10},
                    {"tag": "N", "n": 15},
                    {"tag": "N", "n": 12, "grade": ["end", 0.11]},
                    {"tag": "C", "n": 48, "grade": ["both", 0.11]},
                    {"tag": "N", "n": 12, "grade": ["start", 0.11]},
                    {"tag": "DxNy", "n": 15},
                ],
            },
        ],
        "loads": {
            "times": [0.0, 0.01, 0.015, 0.04],
            "neumann": [
                {"domain": 0, "segment": 2,
                 "traction": [[0, 0], [0, -1.0], [0, -1.0], [0, -1.0]]},
            ],
            "dirichlet": [
                {"domain": 1, "segment": 5,
                 "values": [[0, 0], [0, 0], [0, 0], [0.1, 0]]},
            ],
        },
        "solver": {"tau": 2.5e-4, "t_end": 0.04, "magnification": 500.0},
    }


def preset_skewed() -> dict:
    """Skewed punch seated on an inclined face cut into the block's top;
    vertical seating displacement, then a lateral push of the block to
    separation.  The punch's deep (left) end carries a short chamfered nose
    facet, tilted 5 degrees off the block surface and left out of the
    contact zone, so contact terminates smoothly there and high friction
    cannot lock the corner in place."""
    E = 4.0e3
    phi = math.atan(0.5)
    # punch 25 wide, 80 tall, on a 200 x 300 block; contact on the incline
    # [x1, x2] climbing right at phi, nose facet on [x0, x1] diverging from
    # the block face by 5 degrees
    x0, x1, xm, x2 = 87.5, 92.5, 102.5, 112.5
    y0 = 300.0
    y_top = 380.0
    yn = y0 + (x1 - x0) * math.tan(phi)
    ya = yn - (x1 - x0) * math.tan(phi - math.radians(5.0))
    ym = yn + (xm - x1) * math.tan(phi)
    y1 = yn + (x2 - x1) * math.tan(phi)
    return {
        "name": "skewed",
        "chi": 1e-3,
        "contact": {"mu": 0.2, "k_g": 4.0e5},
        "domains": [
            {  # punch: free nose + inclined contact, top fully prescribed
                "label": "A",
                "material": {"E": E, "nu": 0.35},
                "polyline": [[x0, ya], [x1, yn], [xm, ym],
                             [x2, y1], [x2, y_top], [x0, y_top]],
                "parts": [
                    {"tag": "N", "n": 4},
                    {"tag": "C", "n": 12, "grade": ["start", 0.25]},
                    {"tag": "C", "n": 12, "grade": ["end", 0.25]},
                    {"tag": "N", "n": 6},
                    {"tag": "D", "n": 4},
                    {"tag": "N", "n": 6},
                ],
            },
            {  # block with the skewed wedge cut in its top face
                "label": "B",
                "material": {"E": 4 * E, "nu": 0.35},
                "polyline": [[0, 0], [200, 0], [200, y1], [x2, y1],
                             [xm, ym], [x1, yn], [x0, y0], [0, y0]],
                "parts": [
                    {"tag": "NxDy", "n": 10},
                    {"tag": "N", "n": 10},
                    {"tag": "N", "n": 6, "grade": ["end", 0.5]},
                    {"tag": "C", "n": 12, "grade": ["start", 0.25]},
                    {"tag": "C", "n": 12, "grade": ["end", 0.25]},
                    {"tag": "N", "n": 3},
                    {"tag": "N", "n": 6, "grade": ["start", 0.5]},
                    {"tag": "DxNy", "n": 10},
                ],
            },
        ],
        # the lateral push is two-rate: a gentle ramp during which a
        # low-friction contact slides out gradually, then a fast shove that
        # makes a still-wedged high-friction contact let go all at once
        "loads": {
            "times": [0.0, 0.005, 0.008, 0.029, 0.030, 0.035],
            "dirichlet": [
                {"domain": 0, "segment": 4,
                 "values": [[0, 0], [0, -0.02], [0, -0.02], [0, -0.02],
                            [0, -0.02], [0, -0.02]]},
                {"domain": 1, "segment": 7,
                 "values": [[0, 0], [0, 0], [0, 0], [0.21, 0],
                            [0.56, 0], [0.56, 0]]},
            ],
        },
        "solver": {"tau": 1e-3, "t_end": 0.035, "tau_min": 1e-7,
                   "tau_max": 2e-3, "eps": 1e-3, "magnification": 350.0},
    }


PRESETS = {
    "receding": preset_receding,
    "conforming": preset_conforming,
    "skewed": preset_skewed,
}


# -- system construction ------------------------------------------------------

def _segment_elements(mesh, polyline, seg):
    """Elements whose midpoints lie on polyline segment seg."""
    poly = np.asarray(polyline, dtype=float)
    if not 0 <= seg < len(poly):
        raise ConfigError(f"load references segment {seg}; polyline has "
                          f"{len(poly)} segments")
    a = poly[seg]
    b = poly[(seg + 1) % len(poly)]
    ab = b - a
    L2 = float(ab @ ab)
    out = []
    for e in range(mesh.n_elements):
        mid = 0.5 * (mesh.nodes[mesh.elements[e][0]]
                     + mesh.nodes[mesh.elements[e][1]])
        t = float((mid - a) @ ab) / L2
        if -1e-9 <= t <= 1 + 1e-9:
            d = mid - (a + t * ab)
            if float(d @ d) <= 1e-16 * max(L2, 1.0):
                out.append(e)
    if not out:
        raise ConfigError(f"load references empty segment {seg}")
    return out


@dataclass
class BuiltSystem:
    scenario: Scenario
    meshes: list
    pair: object
    im: object
    loads: LoadProgram


def build_system(sc: Scenario) -> BuiltSystem:
    meshes = []
    for ds in sc.domains:
        meshes.append(build_mesh(ds.polyline, ds.parts,
                                 domain_label=ds.label,
                                 allow_floating=ds.allow_floating))
    pair = pair_contacts(meshes[0], meshes[1])
    im = assemble(meshes, pair, [d.material for d in sc.domains])
    m = len(sc.load_times)
    g_tabs = [np.zeros((m, 2 * mesh.n_nodes)) for mesh in meshes]
    f_tabs = [np.zeros((m, 2 * dd.n_phi)) for dd in im.layout.domains]
    for entry in sc.dirichlet_loads:
        d, mesh = entry["domain"], meshes[entry["domain"]]
        nodes = sorted({n for e in _segment_elements(
            mesh, sc.domains[d].polyline, entry["segment"])
            for n in mesh.elements[e]})
        for j in range(m):
            for n in nodes:
                g_tabs[d][j, 2 * n:2 * n + 2] = entry["values"][j]
    for entry in sc.neumann_loads:
        d = entry["domain"]
        dd = im.layout.domains[d]
        els = _segment_elements(meshes[d], sc.domains[d].polyline,
                                entry["segment"])
        for j in range(m):
            for e in els:
                dofs = dd.phi_dofs_of_element(e)
                f_tabs[d][j, dofs[0]] = entry["values"][j][0]
                f_tabs[d][j, dofs[1]] = entry["values"][j][1]
                f_tabs[d][j, dofs[2]] = entry["values"][j][0]
                f_tabs[d][j, dofs[3]] = entry["values"][j][1]
    loads = LoadProgram(times=sc.load_times, g_D=g_tabs, f_N=f_tabs)
    return BuiltSystem(scenario=sc, meshes=meshes, pair=pair, im=im,
                       loads=loads)


# -- artifact emission --------------------------------------------------------

CONTACT_COLUMNS = ("step", "t", "node", "s", "x1", "x2", "p_n", "p_t",
                   "z_n", "z_t", "slip")
ENERGY_COLUMNS = ("t", "tau", "E", "R1", "twoR2", "work", "deltaE",
                  "qp_iters")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def contact_rows(pair, rec):
    pos = pair.mesh_B.nodes[pair.nodes_B]
    for i in range(pair.n_master_nodes):
        yield (rec.k, rec.t, i, pair.arclength_B[i], pos[i, 0], pos[i, 1],
               rec.p_n[i], rec.p_t[i], rec.z.z_n[i], rec.z.z_t[i],
               rec.slip[i])


def energy_row(rec):
    r = rec.residuum
    work = r.work_mixed + r.work_lift + r.work_ext
    return (rec.t, rec.tau, rec.stored, r.r1, r.visc, work, r.delta,
            rec.qp_iterations)


def emit_contact_csv(pair, records, path):
    with open(path, "w") as fh:
        fh.write(",".join(CONTACT_COLUMNS) + "\n")
        for rec in records:
            for row in contact_rows(pair, rec):
                fh.write(",".join(_fmt(v) for v in row) + "\n")


def emit_energy_csv(records, path):
    with open(path, "w") as fh:
        fh.write(",".join(ENERGY_COLUMNS) + "\n")
        for rec in records:
            fh.write(",".join(_fmt(v) for v in energy_row(rec)) + "\n")


def _outline(mesh, disp=None, mag=0.0):
    pts = mesh.nodes.copy()
    if disp is not None:
        pts = pts + mag * disp.reshape(-1, 2)
    order = [mesh.elements[0][0]]
    for e in range(mesh.n_elements):
        order.append(mesh.elements[e][1])
    return pts[order]


def _svg_path(pts, sx, sy, ox, oy):
    cmd = []
    for i, (x, y) in enumerate(pts):
        cmd.append(f"{'M' if i == 0 else 'L'}{ox + sx * x:.2f} "
                   f"{oy - sy * y:.2f}")
    return " ".join(cmd)


def emit_snapshot_svg(meshes, displacements, magnification, path,
                      pair=None, p_n=None):
    """Undeformed and deformed boundary outlines, plus an optional contact
    pressure profile drawn along the master contact curve."""
    allpts = [_outline(m) for m in meshes]
    allpts += [_outline(m, d, magnification)
               for m, d in zip(meshes, displacements)]
    stack = np.vstack(allpts)
    lo, hi = stack.min(axis=0), stack.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    W, H, pad = 720.0, 540.0, 40.0
    s = min((W - 2 * pad) / span[0], (H - 2 * pad) / span[1])
    ox = pad - s * lo[0]
    oy = H - pad + s * lo[1]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" '
             f'height="{H:.0f}" viewBox="0 0 {W:.0f} {H:.0f}">']
    for m in meshes:
        parts.append(f'<path d="{_svg_path(_outline(m), s, s, ox, oy)} Z" '
                     'fill="none" stroke="#999999" stroke-width="1"/>')
    for m, d in zip(meshes, displacements):
        parts.append(
            f'<path d="{_svg_path(_outline(m, d, magnification), s, s, ox, oy)}'
            ' Z" fill="none" stroke="#cc2222" stroke-width="1.5"/>')
    if pair is not None and p_n is not None and np.abs(p_n).max() > 0:
        pos = pair.mesh_B.nodes[pair.nodes_B]
        scale = 0.15 * max(span) / np.abs(p_n).max()
        prof = pos + pair.normal * (scale * np.abs(p_n))[:, None]
        parts.append(f'<path d="{_svg_path(prof, s, s, ox, oy)}" fill="none" '
                     'stroke="#2244cc" stroke-width="1"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "name": sc.name,
        "chi": sc.chi,
        "contact": {"mu": sc.law.mu, "k_g": sc.law.k_g},
        "domains": [
            {"label": d.label,
             "material": {"E": d.material.young_modulus,
                          "nu": d.material.poisson_ratio},
             "polyline": [list(v) for v in d.polyline],
             "parts": [dict(p, grade=list(p["grade"])) if "grade" in p
                       else dict(p) for p in d.parts],
             "allow_floating": d.allow_floating}
            for d in sc.domains],
        "loads": {
            "times": list(sc.load_times),
            "neumann": [{"domain": e["domain"], "segment": e["segment"],
                         "traction": e["values"].tolist()}
                        for e in sc.neumann_loads],
            "dirichlet": [{"domain": e["domain"], "segment": e["segment"],
                           "values": e["values"].tolist()}
                          for e in sc.dirichlet_loads],
        },
        "solver": {
            "t_end": sc.solver.t_end, "tau": sc.solver.tau,
            "tau_min": sc.solver.tau_min, "tau_max": sc.solver.tau_max,
            "eps": sc.solver.eps, "qp_rtol": sc.solver.qp_rtol,
            "plot_every": sc.solver.plot_every,
            "magnification": sc.solver.magnification,
        },
    }


def run_scenario(sc: Scenario, out_dir) -> list:
    """Execute a scenario, streaming artifacts into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    system = build_system(sc)
    manifest = {
        "scenario": scenario_to_dict(sc),
        "version": __version__,
        "geometry": geometry_hash(system.meshes,
                                  [d.material for d in sc.domains]),
    }
    (out / "run_manifest.yaml").write_text(
        yaml.safe_dump(manifest, sort_keys=False))
    snap_dir = out / "snapshots"
    if sc.solver.plot_every:
        snap_dir.mkdir(exist_ok=True)
    contact_fh = open(out / "contact_series.csv", "w")
    energy_fh = open(out / "energy_log.csv", "w")
    contact_fh.write(",".join(CONTACT_COLUMNS) + "\n")
    energy_fh.write(",".join(ENERGY_COLUMNS) + "\n")

    def on_step(rec):
        for row in contact_rows(system.pair, rec):
            contact_fh.write(",".join(_fmt(v) for v in row) + "\n")
        energy_fh.write(",".join(_fmt(v) for v in energy_row(rec)) + "\n")
        contact_fh.flush()
        energy_fh.flush()
        if sc.solver.plot_every and rec.k % sc.solver.plot_every == 0:
            emit_snapshot_svg(
                system.meshes, rec.u, sc.solver.magnification,
                snap_dir / f"step_{rec.k:05d}.svg",
                pair=system.pair, p_n=rec.p_n)

    try:
        records = run(system.im, sc.law, sc.chi, system.loads,
                      t_end=sc.solver.t_end, tau=sc.solver.tau,
                      tau_min=sc.solver.tau_min, tau_max=sc.solver.tau_max,
                      eps=sc.solver.eps, qp_rtol=sc.solver.qp_rtol,
                      on_step=on_step)
    finally:
        contact_fh.close()
        energy_fh.close()
    return records


# -- command line -------------------------------------------------------------

def _build_parser():
    ap = argparse.ArgumentParser(
        prog="contactbem",
        description="Quasistatic SGBEM solver for two-body frictional "
                    "contact with normal compliance and Coulomb friction")
    sub = ap.add_subparsers(dest="command", required=True)
    rp = sub.add_parser("run", help="run a scenario file or a preset")
    rp.add_argument("scenario", nargs="?", help="scenario YAML file")
    rp.add_argument("--preset", choices=sorted(PRESETS),
                    help="use a shipped preset instead of a file")
    rp.add_argument("--refine", type=int, default=10,
                    help="contact refinement of the receding preset")
    rp.add_argument("--export", action="store_true",
                    help="print the resolved scenario YAML and exit")
    rp.add_argument("--out", default=None, help="output directory")
    rp.add_argument("--tau", type=float, default=None,
                    help="override the initial/fixed time step")
    rp.add_argument("--adaptive", action="store_true",
                    help="enable energy-residuum time adaptivity")
    rp.add_argument("--eps", type=float, default=None,
                    help="residuum tolerance for --adaptive (N mm)")
    rp.add_argument("--plot-every", type=int, default=None,
                    help="snapshot cadence in accepted steps (0 = off)")
    return ap


def _load_scenario(args) -> Scenario:
    if args.preset and args.scenario:
        raise ConfigError("give either a scenario file or --preset, not both")
    if args.preset:
        doc = (preset_receding(args.refine) if args.preset == "receding"
               else PRESETS[args.preset]())
    elif args.scenario:
        path = Path(args.scenario)
        if not path.exists():
            raise ConfigError(f"scenario file not found: {path}")
        doc = path.read_text()
    else:
        raise ConfigError("a scenario file or --preset is required")
    sc = parse_scenario(doc)
    if args.tau is not None:
        sc.solver.tau = args.tau
        sc.solver.tau_min = min(sc.solver.tau_min or args.tau, args.tau)
        sc.solver.tau_max = max(sc.solver.tau_max or args.tau, args.tau)
    if args.adaptive:
        if args.eps is None and sc.solver.eps is None:
            raise ConfigError("--adaptive needs --eps (or a preset default)")
        if args.eps is not None:
            sc.solver.eps = args.eps
    elif args.eps is not None:
        raise ConfigError("--eps requires --adaptive")
    if args.plot_every is not None:
        sc.solver.plot_every = args.plot_every
    return sc


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        sc = _load_scenario(args)
    except (ConfigError, MeshError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.export:
        print(yaml.safe_dump(scenario_to_dict(sc), sort_keys=False), end="")
        return 0
    out = args.out or f"out-{sc.name}"
    try:
        records = run_scenario(sc, out)
    except (ConfigError, MeshError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DeadlockError as exc:
        print(f"time-step deadlock: {exc}", file=sys.stderr)
        return 4
    except (EvolveError, QPError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    last = records[-1]
    print(f"{sc.name}: {len(records)} accepted steps to t={last.t:.6g}s, "
          f"stored energy {last.stored:.6g} N mm, output in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
