"""Assembly and solvers for the planar beam + cable model.

Conventions: dofs per node are (ux, uy, rz); loads and displacements are in
global coordinates with y up, so vehicle weights enter as negative-y point
forces. Internal sagging moment at an element end is -m_i at the i end and
+m_j at the j end of the local end-force vector; both are corrected for
equivalent nodal loads applied to the element itself, which makes end
moments exact for point loads on Euler-Bernoulli members.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

from ..errors import FatalError, ResolvableError
from .model import BeamElement, StructuralModel

GRAVITY_KN_TO_N = 1000.0


class MechanismError(FatalError):
    """Constrained stiffness matrix is singular: the model is a mechanism."""


# --- element matrices ------------------------------------------------------

def beam_local_stiffness(E: float, I: float, A: float, L: float) -> np.ndarray:
    k = np.zeros((6, 6))
    ax = E * A / L
    k[0, 0] = k[3, 3] = ax
    k[0, 3] = k[3, 0] = -ax
    b = E * I / L**3
    kb = b * np.array([
        [12, 6 * L, -12, 6 * L],
        [6 * L, 4 * L**2, -6 * L, 2 * L**2],
        [-12, -6 * L, 12, -6 * L],
        [6 * L, 2 * L**2, -6 * L, 4 * L**2],
    ])
    idx = [1, 2, 4, 5]
    k[np.ix_(idx, idx)] += kb
    return k


def beam_local_mass(rho: float, A: float, L: float) -> np.ndarray:
    m = np.zeros((6, 6))
    c = rho * A * L
    m[0, 0] = m[3, 3] = c / 3.0
    m[0, 3] = m[3, 0] = c / 6.0
    mb = (c / 420.0) * np.array([
        [156, 22 * L, 54, -13 * L],
        [22 * L, 4 * L**2, 13 * L, -3 * L**2],
        [54, 13 * L, 156, -22 * L],
        [-13 * L, -3 * L**2, -22 * L, 4 * L**2],
    ])
    idx = [1, 2, 4, 5]
    m[np.ix_(idx, idx)] += mb
    return m


def beam_transform(c: float, s: float) -> np.ndarray:
    T = np.eye(6)
    T[0, 0] = T[1, 1] = T[3, 3] = T[4, 4] = c
    T[0, 1] = T[3, 4] = s
    T[1, 0] = T[4, 3] = -s
    return T


# --- assembled system -------------------------------------------------------

@dataclass
class Assembled:
    model: StructuralModel
    K: np.ndarray
    M: np.ndarray
    free: list[int]
    beam_dofs: list[np.ndarray]      # per beam element, 6 global dof indices
    beam_geom: list[tuple[float, float, float]]   # (c, s, L) per beam element
    cable_dofs: list[np.ndarray]     # per cable element, 4 global dof indices
    cable_geom: list[tuple[float, float, float]]  # (c, s, L)
    _chol: Optional[tuple] = field(default=None, repr=False)

    @property
    def K_ff(self) -> np.ndarray:
        return self.K[np.ix_(self.free, self.free)]

    @property
    def M_ff(self) -> np.ndarray:
        return self.M[np.ix_(self.free, self.free)]

    def damping_ff(self) -> np.ndarray:
        return self.model.damping_alpha * self.M_ff + self.model.damping_beta * self.K_ff

    def cholesky(self):
        if self._chol is None:
            try:
                self._chol = cho_factor(self.K_ff)
            except np.linalg.LinAlgError as exc:
                raise MechanismError(f"mechanism detected: {exc}")
        return self._chol

    def solve_static(self, F: np.ndarray) -> np.ndarray:
        """Full-length load vector -> full-length displacement vector."""
        u = np.zeros(self.model.n_dofs)
        if self.free:
            u[self.free] = cho_solve(self.cholesky(), F[self.free])
        return u


def assemble(model: StructuralModel) -> Assembled:
    n = model.n_dofs
    K = np.zeros((n, n))
    M = np.zeros((n, n))
    beam_dofs, beam_geom = [], []
    for el in model.beam_elements:
        ni, nj = model.node(el.node_i), model.node(el.node_j)
        L = model.beam_length(el)
        if L <= 0:
            raise FatalError("zero-length beam element")
        c, s = (nj.x - ni.x) / L, (nj.y - ni.y) / L
        T = beam_transform(c, s)
        k = T.T @ beam_local_stiffness(el.E, el.I, el.A, L) @ T
        m = T.T @ beam_local_mass(el.rho, el.A, L) @ T
        dofs = np.array([model.dof_index(el.node_i, d) for d in ("ux", "uy", "rz")]
                        + [model.dof_index(el.node_j, d) for d in ("ux", "uy", "rz")])
        K[np.ix_(dofs, dofs)] += k
        M[np.ix_(dofs, dofs)] += m
        beam_dofs.append(dofs)
        beam_geom.append((c, s, L))
    cable_dofs, cable_geom = [], []
    for el in model.cable_elements:
        ni, nj = model.node(el.node_i), model.node(el.node_j)
        L = float(np.hypot(nj.x - ni.x, nj.y - ni.y))
        if L <= 0:
            raise FatalError("zero-length cable element")
        c, s = (nj.x - ni.x) / L, (nj.y - ni.y) / L
        k = (el.EA / L) * np.outer([-c, -s, c, s], [-c, -s, c, s])
        dofs = np.array([model.dof_index(el.node_i, "ux"), model.dof_index(el.node_i, "uy"),
                         model.dof_index(el.node_j, "ux"), model.dof_index(el.node_j, "uy")])
        K[np.ix_(dofs, dofs)] += k
        cable_dofs.append(dofs)
        cable_geom.append((c, s, L))

    sys = Assembled(model=model, K=K, M=M, free=model.free_dofs(),
                    beam_dofs=beam_dofs, beam_geom=beam_geom,
                    cable_dofs=cable_dofs, cable_geom=cable_geom)
    if sys.free:
        sys.cholesky()   # positive definiteness gate
    return sys


# --- modal analysis ----------------------------------------------------------

def modal_analysis(sys: Assembled, n: int) -> tuple[np.ndarray, np.ndarray]:
    """First n natural frequencies (Hz, ascending) and mass-normalized mode
    shapes on the full dof vector, shape (n_modes, n_dofs). Asking for more
    modes than free dofs returns all of them."""
    n_free = len(sys.free)
    if n_free == 0:
        return np.zeros(0), np.zeros((0, sys.model.n_dofs))
    n_take = min(n, n_free)
    w2, vecs = eigh(sys.K_ff, sys.M_ff, subset_by_index=[0, n_take - 1])
    freqs = np.sqrt(np.maximum(w2, 0.0)) / (2 * np.pi)
    shapes = np.zeros((n_take, sys.model.n_dofs))
    for k in range(n_take):
        shapes[k, sys.free] = vecs[:, k]
    return freqs, shapes


# --- load cases --------------------------------------------------------------

@dataclass
class StaticCase:
    """Global load vector plus the per-beam-element local equivalent loads
    needed to recover exact internal forces."""
    F: np.ndarray
    elem_local: dict[int, np.ndarray] = field(default_factory=dict)


def hermite_rows(xi: np.ndarray, L: float) -> np.ndarray:
    """Consistent allocation of a unit transverse point load at xi in [0,1]:
    columns (w_i, th_i, w_j, th_j)."""
    xi = np.asarray(xi, dtype=float)
    n1 = 1 - 3 * xi**2 + 2 * xi**3
    n2 = L * (xi - 2 * xi**2 + xi**3)
    n3 = 3 * xi**2 - 2 * xi**3
    n4 = L * (-(xi**2) + xi**3)
    return np.stack([n1, n2, n3, n4], axis=-1)


def point_load_local(fx: float, fy: float, xi: float, L: float) -> np.ndarray:
    """Local 6-vector of equivalent nodal loads for a point load (local
    components fx along, fy across) at relative position xi."""
    h = hermite_rows(np.array([xi]), L)[0]
    return np.array([fx * (1 - xi), fy * h[0], fy * h[1],
                     fx * xi, fy * h[2], fy * h[3]])


class LaneGeometry:
    """Maps a coordinate along a lane to (beam element index, xi)."""

    def __init__(self, sys: Assembled, lane_name: str):
        model = sys.model
        lane = model.lane(lane_name)
        pair_to_elem = {}
        for idx, el in enumerate(model.beam_elements):
            pair_to_elem[(el.node_i, el.node_j)] = idx
            pair_to_elem[(el.node_j, el.node_i)] = idx
        self.elements: list[int] = []
        self.starts: list[float] = []
        pos = 0.0
        for a, b in zip(lane.nodes, lane.nodes[1:]):
            if (a, b) not in pair_to_elem:
                raise FatalError(f"lane {lane_name!r}: nodes {a}-{b} are not joined by a beam element")
            idx = pair_to_elem[(a, b)]
            el = model.beam_elements[idx]
            self.starts.append(pos)
            self.elements.append(idx)
            self.reversed_flag = el.node_i != a
            pos += model.beam_length(el)
        self.length = pos
        self.starts_arr = np.array(self.starts)
        self.lengths = np.array([sys.model.beam_length(sys.model.beam_elements[i])
                                 for i in self.elements])
        # orientation flags: lane direction vs element i->j direction
        self.forward = np.array([sys.model.beam_elements[i].node_i == a
                                 for i, (a, b) in zip(self.elements,
                                                      zip(lane.nodes, lane.nodes[1:]))])
        self.sys = sys

    def locate(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Lane coordinate -> (segment index, element index, xi along element)."""
        s = np.asarray(s, dtype=float)
        seg = np.clip(np.searchsorted(self.starts_arr, s, side="right") - 1, 0,
                      len(self.elements) - 1)
        xi = (s - self.starts_arr[seg]) / self.lengths[seg]
        xi = np.clip(xi, 0.0, 1.0)
        xi = np.where(np.take(self.forward, seg), xi, 1.0 - xi)
        elem = np.take(np.array(self.elements), seg)
        return seg, elem, xi


def apply_point_load(sys: Assembled, case: StaticCase, elem_idx: int, xi: float,
                     fx_global: float, fy_global: float) -> None:
    c, s, L = sys.beam_geom[elem_idx]
    fx_l = c * fx_global + s * fy_global
    fy_l = -s * fx_global + c * fy_global
    f_local = point_load_local(fx_l, fy_l, xi, L)
    T = beam_transform(c, s)
    case.F[sys.beam_dofs[elem_idx]] += T.T @ f_local
    case.elem_local[elem_idx] = case.elem_local.get(elem_idx, np.zeros(6)) + f_local


def lane_udl_case(sys: Assembled, lane_name: str, w_n_per_m: float) -> StaticCase:
    """Consistent nodal loads for a downward uniform load along a lane."""
    geom = LaneGeometry(sys, lane_name)
    case = StaticCase(F=np.zeros(sys.model.n_dofs))
    for elem_idx in geom.elements:
        c, s, L = sys.beam_geom[elem_idx]
        fy_l = c * (-w_n_per_m)          # local transverse share of global -y UDL
        fx_l = s * (-w_n_per_m)
        f_local = np.array([
            fx_l * L / 2, fy_l * L / 2, fy_l * L**2 / 12,
            fx_l * L / 2, fy_l * L / 2, -fy_l * L**2 / 12,
        ])
        T = beam_transform(c, s)
        case.F[sys.beam_dofs[elem_idx]] += T.T @ f_local
        case.elem_local[elem_idx] = case.elem_local.get(elem_idx, np.zeros(6)) + f_local
    return case


# --- response extraction ------------------------------------------------------

VALID_QUANTITIES = ("displacement", "moment", "shear", "cable_stress")


def beam_end_forces(sys: Assembled, elem_idx: int, u: np.ndarray,
                    case: Optional[StaticCase] = None) -> np.ndarray:
    c, s, L = sys.beam_geom[elem_idx]
    el = sys.model.beam_elements[elem_idx]
    T = beam_transform(c, s)
    u_local = T @ u[sys.beam_dofs[elem_idx]]
    f = beam_local_stiffness(el.E, el.I, el.A, L) @ u_local
    if case is not None and elem_idx in case.elem_local:
        f = f - case.elem_local[elem_idx]
    return f


def cable_force(sys: Assembled, cable_idx: int, u: np.ndarray) -> float:
    """Axial force change from displacement (N), tension positive."""
    c, s, L = sys.cable_geom[cable_idx]
    el = sys.model.cable_elements[cable_idx]
    d = u[sys.cable_dofs[cable_idx]]
    elong = (d[2] - d[0]) * c + (d[3] - d[1]) * s
    return float(el.EA / L * elong)


def cable_stress_mpa(sys: Assembled, cable_idx: int, u: np.ndarray) -> float:
    """Total stress: initial tension offset plus live change, in MPa."""
    el = sys.model.cable_elements[cable_idx]
    force = el.initial_tension + cable_force(sys, cable_idx, u)
    return force / el.area / 1e6


@dataclass
class ResponseTarget:
    quantity: str
    label: str
    node: Optional[int] = None
    dof: str = "uy"
    elem_idx: Optional[int] = None
    at_j_end: bool = True
    cable_idx: Optional[int] = None

    def extract(self, sys: Assembled, u: np.ndarray, case: Optional[StaticCase] = None) -> float:
        if self.quantity == "displacement":
            return float(u[sys.model.dof_index(self.node, self.dof)])
        if self.quantity == "cable_stress":
            return cable_stress_mpa(sys, self.cable_idx, u)
        f = beam_end_forces(sys, self.elem_idx, u, case)
        if self.quantity == "moment":
            return float(f[5]) if self.at_j_end else float(-f[2])
        # shear, internal V positive per sagging convention
        return float(-f[4]) if self.at_j_end else float(f[1])


def resolve_target(sys: Assembled, quantity: str, location: str) -> ResponseTarget:
    """Location grammar: sensor name, 'node:<id>', 'cable_<k>', or a bare
    node id. Moment/shear at a node use the beam element ending there."""
    model = sys.model
    if quantity not in VALID_QUANTITIES:
        raise ResolvableError(
            f"unknown quantity {quantity!r}; valid: {', '.join(VALID_QUANTITIES)}")
    loc = str(location).strip()
    if quantity == "cable_stress":
        idx = None
        if loc.startswith("cable_"):
            try:
                idx = int(loc.split("_", 1)[1])
            except ValueError:
                idx = None
        elif loc.isdigit():
            idx = int(loc)
        if idx is None or not (0 <= idx < len(model.cable_elements)):
            names = ", ".join(f"cable_{i}" for i in range(len(model.cable_elements)))
            raise ResolvableError(f"unknown cable {location!r}; valid: {names}")
        return ResponseTarget(quantity=quantity, label=loc, cable_idx=idx)

    node_id: Optional[int] = None
    dof = "uy"
    for sensor in model.sensors:
        if sensor.name == loc:
            node_id, dof = sensor.node, sensor.dof
            break
    if node_id is None:
        raw = loc.split(":", 1)[1] if loc.startswith("node:") else loc
        try:
            node_id = int(raw)
            model.node(node_id)
        except (ValueError, KeyError):
            names = ", ".join(s.name for s in model.sensors)
            raise ResolvableError(
                f"unknown location {location!r}; valid sensors: {names or 'none'}, or node:<id>")
    if quantity == "displacement":
        return ResponseTarget(quantity=quantity, label=loc, node=node_id, dof=dof)
    for idx, el in enumerate(model.beam_elements):
        if el.node_j == node_id:
            return ResponseTarget(quantity=quantity, label=loc, elem_idx=idx, at_j_end=True)
    for idx, el in enumerate(model.beam_elements):
        if el.node_i == node_id:
            return ResponseTarget(quantity=quantity, label=loc, elem_idx=idx, at_j_end=False)
    raise ResolvableError(f"no beam element touches node {node_id} for {quantity}")


# --- influence lines ----------------------------------------------------------

def influence_line(sys: Assembled, lane_name: str, quantity: str, location: str,
                   step: float) -> tuple[np.ndarray, np.ndarray]:
    """Response per unit downward load marched along the lane at `step` m."""
    out = influence_lines_multi(sys, lane_name, {"_": (quantity, location)}, step)
    return out["_"]


def influence_lines_multi(sys: Assembled, lane_name: str,
                          targets: dict[str, tuple[str, str]],
                          step: float) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Influence lines for several responses from one march of the unit load
    (one static solve per position, all targets extracted from it)."""
    geom = LaneGeometry(sys, lane_name)
    resolved = {key: resolve_target(sys, q, loc) for key, (q, loc) in targets.items()}
    positions = np.arange(0.0, geom.length + step * 0.5, step)
    positions[-1] = min(positions[-1], geom.length)
    values = {key: np.zeros_like(positions) for key in targets}
    for i, s in enumerate(positions):
        _, elem, xi = geom.locate(np.array([s]))
        case = StaticCase(F=np.zeros(sys.model.n_dofs))
        apply_point_load(sys, case, int(elem[0]), float(xi[0]), 0.0, -1.0)
        u = sys.solve_static(case.F)
        for key, target in resolved.items():
            values[key][i] = target.extract(sys, u, case)
    return {key: (positions.copy(), values[key]) for key in targets}


# --- transient ------------------------------------------------------------------

@dataclass
class TransientResult:
    dt: float
    U: np.ndarray    # (n_steps+1, n_free)
    V: np.ndarray
    A: np.ndarray

    def full_row(self, sys: Assembled, k: int) -> np.ndarray:
        u = np.zeros(sys.model.n_dofs)
        u[sys.free] = self.U[k]
        return u


def newmark_transient(sys: Assembled, load_history: np.ndarray, dt: float,
                      u0: Optional[np.ndarray] = None,
                      v0: Optional[np.ndarray] = None) -> TransientResult:
    """Average-acceleration Newmark (gamma=1/2, beta=1/4) with Rayleigh
    damping. load_history has shape (n_steps+1, n_free)."""
    if dt <= 0:
        raise FatalError("dt must be positive")
    F = np.asarray(load_history, dtype=float)
    if not np.all(np.isfinite(F)):
        raise FatalError("load history contains non-finite values")
    n_free = len(sys.free)
    if F.ndim != 2 or F.shape[1] != n_free:
        raise FatalError(f"load history must be (n_steps+1, {n_free})")
    gamma, beta = 0.5, 0.25
    K, M, C = sys.K_ff, sys.M_ff, sys.damping_ff()
    n_steps = F.shape[0] - 1
    U = np.zeros((n_steps + 1, n_free))
    V = np.zeros((n_steps + 1, n_free))
    A = np.zeros((n_steps + 1, n_free))
    U[0] = 0.0 if u0 is None else u0
    V[0] = 0.0 if v0 is None else v0
    A[0] = np.linalg.solve(M, F[0] - C @ V[0] - K @ U[0])
    a0 = 1.0 / (beta * dt**2)
    a1 = gamma / (beta * dt)
    a2 = 1.0 / (beta * dt)
    a3 = 1.0 / (2 * beta) - 1.0
    a4 = gamma / beta - 1.0
    a5 = dt * (gamma / (2 * beta) - 1.0)
    Keff = K + a0 * M + a1 * C
    chol = cho_factor(Keff)
    for k in range(n_steps):
        rhs = (F[k + 1]
               + M @ (a0 * U[k] + a2 * V[k] + a3 * A[k])
               + C @ (a1 * U[k] + a4 * V[k] + a5 * A[k]))
        U[k + 1] = cho_solve(chol, rhs)
        A[k + 1] = a0 * (U[k + 1] - U[k]) - a2 * V[k] - a3 * A[k]
        V[k + 1] = V[k] + dt * ((1 - gamma) * A[k] + gamma * A[k + 1])
    return TransientResult(dt=dt, U=U, V=V, A=A)


# --- moving loads ----------------------------------------------------------------

def moving_load_history(sys: Assembled, vehicles: Iterable, lane_names: Iterable[str],
                        dt: float, duration: float) -> np.ndarray:
    """Nodal load history (n_steps+1, n_free) for a set of vehicles.

    Each vehicle needs attributes arrival_time, lane, speed (m/s),
    axle_weights (kN), axle_spacings (m). Axles enter the lane at its start
    and drop out past its end; weights act as downward point loads allocated
    with beam shape functions.
    """
    geoms = {name: LaneGeometry(sys, name) for name in lane_names}
    n_steps = int(np.floor(duration / dt))
    times = np.arange(n_steps + 1) * dt
    F_full = np.zeros((n_steps + 1, sys.model.n_dofs))
    for veh in vehicles:
        geom = geoms.get(veh.lane if isinstance(veh.lane, str) else str(veh.lane))
        if geom is None:
            continue
        offsets = np.concatenate([[0.0], np.cumsum(np.asarray(veh.axle_spacings, dtype=float))])
        for w_kn, off in zip(veh.axle_weights, offsets):
            s = veh.speed * (times - veh.arrival_time) - off
            on = (s >= 0.0) & (s <= geom.length)
            if not np.any(on):
                continue
            t_idx = np.nonzero(on)[0]
            _, elems, xis = geom.locate(s[on])
            force = -GRAVITY_KN_TO_N * float(w_kn)
            for e in np.unique(elems):
                mask = elems == e
                c, se, L = sys.beam_geom[int(e)]
                h = hermite_rows(xis[mask], L)
                fy_local = c * force           # -s*Fx + c*Fy with Fx=0
                fx_local = se * force          # c*Fx + s*Fy with Fx=0
                xi_m = xis[mask]
                f_local = np.zeros((mask.sum(), 6))
                f_local[:, 0] = fx_local * (1 - xi_m)
                f_local[:, 3] = fx_local * xi_m
                f_local[:, 1] = fy_local * h[:, 0]
                f_local[:, 2] = fy_local * h[:, 1]
                f_local[:, 4] = fy_local * h[:, 2]
                f_local[:, 5] = fy_local * h[:, 3]
                T = beam_transform(c, se)
                f_global = f_local @ T          # row-wise T.T @ f
                rows = t_idx[mask]
                np.add.at(F_full, (rows[:, None], sys.beam_dofs[int(e)][None, :]), f_global)
    return F_full[:, sys.free]
