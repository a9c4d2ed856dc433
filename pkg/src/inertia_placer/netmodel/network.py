"""Network description, operating point and Kron reduction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import scipy.linalg as sla
import yaml

BUS_TYPES = ("machine", "vi-candidate", "passive")


class NetworkError(ValueError):
    """Invalid network description. ``path`` names the offending field."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class Bus:
    id: str
    type: str
    p: float = 0.0


@dataclass(frozen=True)
class Line:
    src: str
    dst: str
    b: float


@dataclass(frozen=True)
class Machine:
    bus: str
    inertia: float
    damping: float
    droop_gain: float
    gov_time: float


@dataclass(frozen=True)
class DisturbancePort:
    bus: str
    strength: float = 1.0


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    machines: tuple[Machine, ...]
    disturbances: tuple[DisturbancePort, ...]
    base_mva: float = 100.0
    frequency_hz: float = 50.0
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {b.id: i for i, b in enumerate(self.buses)})
        validate(self)

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    def bus_type(self, bus_id: str) -> str:
        return self.buses[self.index[bus_id]].type

    def laplacian(self, weights: np.ndarray | None = None) -> np.ndarray:
        """Susceptance Laplacian; ``weights`` replaces the line susceptances."""
        w = np.array([ln.b for ln in self.lines]) if weights is None else weights
        n = self.n_buses
        L = np.zeros((n, n))
        for ln, wk in zip(self.lines, w):
            i, j = self.index[ln.src], self.index[ln.dst]
            L[i, i] += wk
            L[j, j] += wk
            L[i, j] -= wk
            L[j, i] -= wk
        return L

    def injections(self) -> np.ndarray:
        return np.array([b.p for b in self.buses], dtype=float)

    def reference(self) -> int:
        """Index of the reference bus (the first machine's bus)."""
        return self.index[self.machines[0].bus]


def validate(model: NetworkModel) -> None:
    seen = set()
    for k, bus in enumerate(model.buses):
        if bus.id in seen:
            raise NetworkError(f"duplicate bus id {bus.id!r}", f"buses[{k}].id")
        seen.add(bus.id)
        if bus.type not in BUS_TYPES:
            raise NetworkError(f"unknown bus type {bus.type!r}", f"buses[{k}].type")
        if not np.isfinite(bus.p):
            raise NetworkError("injection must be finite", f"buses[{k}].p")
    for k, ln in enumerate(model.lines):
        for end, name in ((ln.src, "from"), (ln.dst, "to")):
            if end not in model.index:
                raise NetworkError(f"unknown bus {end!r}", f"lines[{k}].{name}")
        if ln.src == ln.dst:
            raise NetworkError("line endpoints must differ", f"lines[{k}]")
        if not ln.b > 0:
            raise NetworkError("susceptance must be positive", f"lines[{k}].b")
    if not model.machines:
        raise NetworkError("at least one machine is required", "machines")
    machine_buses = set()
    for k, m in enumerate(model.machines):
        path = f"machines[{k}]"
        if m.bus not in model.index:
            raise NetworkError(f"unknown bus {m.bus!r}", f"{path}.bus")
        if model.bus_type(m.bus) != "machine":
            raise NetworkError("machine must sit on a bus of type 'machine'", f"{path}.bus")
        if m.bus in machine_buses:
            raise NetworkError("one machine per bus", f"{path}.bus")
        machine_buses.add(m.bus)
        if not m.inertia > 0:
            raise NetworkError("inertia must be positive", f"{path}.inertia")
        if not m.damping >= 0:
            raise NetworkError("damping must be nonnegative", f"{path}.damping")
        if not m.droop_gain >= 0:
            raise NetworkError("droop gain must be nonnegative", f"{path}.droop_gain")
        if not m.gov_time > 0:
            raise NetworkError("governor time constant must be positive", f"{path}.gov_time")
    for k, bus in enumerate(model.buses):
        if bus.type == "machine" and bus.id not in machine_buses:
            raise NetworkError("machine bus without machine data", f"buses[{k}]")
    for k, d in enumerate(model.disturbances):
        if d.bus not in model.index:
            raise NetworkError(f"unknown bus {d.bus!r}", f"disturbances[{k}].bus")
        if not d.strength > 0:
            raise NetworkError("disturbance strength must be positive", f"disturbances[{k}].strength")
    if not model.base_mva > 0:
        raise NetworkError("base power must be positive", "base.mva")
    if not model.frequency_hz > 0:
        raise NetworkError("nominal frequency must be positive", "base.frequency_hz")
    if not _connected(model):
        raise NetworkError("network graph is disconnected", "lines")


def _connected(model: NetworkModel) -> bool:
    adj: dict[str, set[str]] = {b.id: set() for b in model.buses}
    for ln in model.lines:
        adj[ln.src].add(ln.dst)
        adj[ln.dst].add(ln.src)
    start = model.buses[0].id
    seen = {start}
    stack = [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(model.buses)


def _req(doc: dict, key: str, path: str) -> Any:
    if not isinstance(doc, dict):
        raise NetworkError("expected a mapping", path)
    if key not in doc:
        raise NetworkError(f"missing key {key!r}", path)
    return doc[key]


def _num(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise NetworkError("expected a number", path)
    return float(value)


def _check_keys(doc: dict, allowed: set[str], path: str) -> None:
    extra = set(doc) - allowed
    if extra:
        raise NetworkError(f"unknown keys {sorted(extra)}", path)


def network_from_dict(doc: dict) -> NetworkModel:
    """Build a validated model from the parsed document (see README for the schema)."""
    if not isinstance(doc, dict):
        raise NetworkError("network document must be a mapping")
    _check_keys(doc, {"buses", "lines", "machines", "disturbances", "base", "name"}, "")
    base = doc.get("base", {})
    _check_keys(base, {"mva", "frequency_hz"}, "base")
    buses = []
    for k, b in enumerate(_req(doc, "buses", "")):
        path = f"buses[{k}]"
        _check_keys(b, {"id", "type", "p"}, path)
        buses.append(Bus(str(_req(b, "id", path)), str(_req(b, "type", path)),
                         _num(b.get("p", 0.0), f"{path}.p")))
    lines = []
    for k, ln in enumerate(_req(doc, "lines", "")):
        path = f"lines[{k}]"
        _check_keys(ln, {"from", "to", "b"}, path)
        lines.append(Line(str(_req(ln, "from", path)), str(_req(ln, "to", path)),
                          _num(_req(ln, "b", path), f"{path}.b")))
    machines = []
    for k, m in enumerate(_req(doc, "machines", "")):
        path = f"machines[{k}]"
        _check_keys(m, {"bus", "inertia", "damping", "droop_gain", "gov_time"}, path)
        machines.append(Machine(
            str(_req(m, "bus", path)),
            _num(_req(m, "inertia", path), f"{path}.inertia"),
            _num(m.get("damping", 0.0), f"{path}.damping"),
            _num(m.get("droop_gain", 0.0), f"{path}.droop_gain"),
            _num(m.get("gov_time", 1.0), f"{path}.gov_time"),
        ))
    ports = []
    for k, d in enumerate(doc.get("disturbances", [])):
        path = f"disturbances[{k}]"
        _check_keys(d, {"bus", "strength"}, path)
        ports.append(DisturbancePort(str(_req(d, "bus", path)),
                                     _num(d.get("strength", 1.0), f"{path}.strength")))
    return NetworkModel(
        tuple(buses), tuple(lines), tuple(machines), tuple(ports),
        base_mva=_num(base.get("mva", 100.0), "base.mva"),
        frequency_hz=_num(base.get("frequency_hz", 50.0), "base.frequency_hz"),
    )


def network_to_dict(model: NetworkModel) -> dict:
    return {
        "base": {"mva": model.base_mva, "frequency_hz": model.frequency_hz},
        "buses": [{"id": b.id, "type": b.type, "p": b.p} for b in model.buses],
        "lines": [{"from": ln.src, "to": ln.dst, "b": ln.b} for ln in model.lines],
        "machines": [
            {"bus": m.bus, "inertia": m.inertia, "damping": m.damping,
             "droop_gain": m.droop_gain, "gov_time": m.gov_time}
            for m in model.machines
        ],
        "disturbances": [{"bus": d.bus, "strength": d.strength} for d in model.disturbances],
    }


def load_network(document: str | Path | dict) -> NetworkModel:
    """Parse a network from a path, a JSON/YAML string, or an already parsed mapping."""
    if isinstance(document, dict):
        return network_from_dict(document)
    if isinstance(document, Path) or (isinstance(document, str) and "\n" not in document
                                      and not document.lstrip().startswith(("{", "["))):
        text = Path(document).read_text(encoding="utf-8")
    else:
        text = document
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise NetworkError(f"unparseable document: {exc}") from exc
    return network_from_dict(doc)


def dump_network(model: NetworkModel) -> str:
    return json.dumps(network_to_dict(model), indent=2)


@dataclass(frozen=True)
class OperatingPoint:
    angles: np.ndarray
    flows: np.ndarray
    injections: np.ndarray
    method: str = "dc"

    def line_weights(self, model: NetworkModel) -> np.ndarray:
        """Linearized line couplings b_ij cos(theta_i - theta_j)."""
        return np.array([
            ln.b * np.cos(self.angles[model.index[ln.src]] - self.angles[model.index[ln.dst]])
            for ln in model.lines
        ])


def _balanced(model: NetworkModel, ref: int) -> np.ndarray:
    p = model.injections()
    p[ref] -= p.sum()
    return p


def _line_arrays(model: NetworkModel):
    src = np.array([model.index[ln.src] for ln in model.lines], dtype=int)
    dst = np.array([model.index[ln.dst] for ln in model.lines], dtype=int)
    b = np.array([ln.b for ln in model.lines], dtype=float)
    return src, dst, b


def equilibrium(model: NetworkModel, method: str = "dc", tol: float = 1e-13,
                max_iter: int = 50) -> OperatingPoint:
    """Operating point with the reference (first machine) angle at zero.

    ``method="dc"`` solves the reduced Laplacian system.  ``method="ac"`` refines
    that solution by Newton iteration on the lossless sinusoidal flow equations,
    which is the point the nonlinear surrogate actually rests at.  The slack at
    the reference bus absorbs any injection residual.
    """
    ref = model.reference()
    p = _balanced(model, ref)
    L = model.laplacian()
    keep = np.array([i for i in range(model.n_buses) if i != ref], dtype=int)
    theta = np.zeros(model.n_buses)
    if keep.size:
        Lk = L[np.ix_(keep, keep)]
        try:
            theta[keep] = sla.solve(Lk, p[keep], assume_a="sym")
        except (sla.LinAlgError, ValueError) as exc:
            raise NetworkError("reduced Laplacian is singular (disconnected network)") from exc
    if method == "ac" and keep.size:
        src, dst, b = _line_arrays(model)
        for _ in range(max_iter):
            flow = b * np.sin(theta[src] - theta[dst])
            out = np.zeros(model.n_buses)
            np.add.at(out, src, flow)
            np.add.at(out, dst, -flow)
            resid = out[keep] - p[keep]
            if np.max(np.abs(resid)) < tol:
                break
            J = model.laplacian(b * np.cos(theta[src] - theta[dst]))[np.ix_(keep, keep)]
            theta[keep] -= np.linalg.solve(J, resid)
        else:
            raise NetworkError("AC operating point did not converge (injections too large?)")
        if np.any(np.abs(theta[src] - theta[dst]) >= np.pi / 2):
            raise NetworkError("AC operating point beyond the steady-state stability limit")
    elif method not in ("dc", "ac"):
        raise ValueError(f"unknown method {method!r}")
    src, dst, b = _line_arrays(model)
    dtheta = theta[src] - theta[dst]
    flows = b * (np.sin(dtheta) if method == "ac" else dtheta)
    out = np.zeros(model.n_buses)
    np.add.at(out, src, flows)
    np.add.at(out, dst, -flows)
    return OperatingPoint(theta, flows, out, method)


@dataclass(frozen=True)
class KronReduction:
    """Result of eliminating buses from a Laplacian.

    ``reduced`` couples the retained buses, ``injection`` maps eliminated-bus
    injections onto retained buses and ``recovery`` gives the eliminated angles
    from retained angles (plus ``inv_eliminated`` times eliminated injections).
    """

    reduced: np.ndarray
    injection: np.ndarray
    recovery: np.ndarray
    inv_eliminated: np.ndarray
    retained: np.ndarray
    eliminated: np.ndarray


def kron_reduce(L: np.ndarray, retained: Sequence[int]) -> KronReduction:
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    r = np.asarray(list(retained), dtype=int)
    if len(set(r.tolist())) != r.size or np.any((r < 0) | (r >= n)):
        raise ValueError("retained indices must be unique and in range")
    e = np.array([i for i in range(n) if i not in set(r.tolist())], dtype=int)
    Lrr = L[np.ix_(r, r)]
    if e.size == 0:
        return KronReduction(Lrr.copy(), np.zeros((r.size, 0)), np.zeros((0, r.size)),
                             np.zeros((0, 0)), r, e)
    Lee = L[np.ix_(e, e)]
    Lre = L[np.ix_(r, e)]
    try:
        lu = sla.lu_factor(Lee, check_finite=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise NetworkError("eliminated block is singular") from exc
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-12 * max(1.0, np.abs(Lee).max()):
        raise NetworkError("eliminated block is singular")
    inv_ee = sla.lu_solve(lu, np.eye(e.size))
    inv_ee = 0.5 * (inv_ee + inv_ee.T)
    T = -Lre @ inv_ee
    reduced = Lrr + T @ Lre.T
    reduced = 0.5 * (reduced + reduced.T)
    recovery = -inv_ee @ L[np.ix_(e, r)]
    return KronReduction(reduced, T, recovery, inv_ee, r, e)
