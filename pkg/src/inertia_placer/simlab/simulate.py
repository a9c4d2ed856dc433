"""Fixed-step RK4 simulation of linear closed loops and the nonlinear surrogate."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..devices import ClosedLoop
from ..netmodel import NonlinearSystem, signal_groups

ROCOF_FILTER = 0.1
DIVERGENCE_LIMIT = 1e6
SHAPES = ("step", "impulse")


class SimulationDivergence(ArithmeticError):
    """State norm left the admissible range during integration."""

    def __init__(self, time: float, norm: float):
        self.time = time
        self.norm = norm
        super().__init__(f"trajectory diverged at t={time:.4g} s (state norm {norm:.3g})")


@dataclass(frozen=True)
class FaultSpec:
    """Active-power disturbance at a port; negative magnitude is a load increase."""

    bus: str
    magnitude: float
    shape: str = "step"
    start: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "bus", str(self.bus))
        if self.shape not in SHAPES:
            raise ValueError(f"fault shape must be one of {SHAPES}")
        if self.magnitude == 0 or not np.isfinite(self.magnitude):
            raise ValueError("fault magnitude must be nonzero and finite")
        if self.start < 0:
            raise ValueError("fault start must be nonnegative")

    def to_dict(self) -> dict:
        return {"bus": self.bus, "magnitude": self.magnitude, "shape": self.shape,
                "start": self.start}


@dataclass(eq=False)
class Trajectory:
    """Sampled response, stored as deviations from the operating point.

    ``signals`` holds, per machine bus ``b``: ``omega[b]``, ``rocof[b]`` (raw,
    from the state equation), ``rocof_f[b]`` (low-pass filtered derivative),
    ``p_gen[b]``; and per device bus: ``p_vi[b]``.
    """

    time: np.ndarray
    signals: dict[str, np.ndarray]
    states: np.ndarray
    state_labels: tuple[str, ...]
    fault: FaultSpec
    kind: str
    machine_buses: tuple[str, ...] = ()
    device_buses: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.time, dtype=float)
        if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        for k, v in self.signals.items():
            if len(v) != t.size:
                raise ValueError(f"signal {k} length does not match the time grid")
        if self.states.shape[0] != t.size:
            raise ValueError("state history length does not match the time grid")
        self.time = t

    def family(self, name: str) -> np.ndarray:
        """Stack of one signal family, shape (n_time, n_members)."""
        cols = [v for k, v in self.signals.items() if k.split("[", 1)[0] == name]
        if not cols:
            return np.zeros((self.time.size, 0))
        return np.column_stack(cols)

    def write_csv(self, path: str | Path, digits: int = 12) -> None:
        names = list(self.signals)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + names)
            cols = [self.time] + [self.signals[n] for n in names]
            for row in zip(*cols):
                w.writerow([f"{v:.{digits}g}" for v in row])

    def write_long_csv(self, path: str | Path, digits: int = 12) -> None:
        """Plot-ready long format: time, signal, bus, value."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "signal", "bus", "value"])
            for name, vals in self.signals.items():
                fam, bus = name.split("[", 1)
                bus = bus.rstrip("]")
                for t, v in zip(self.time, vals):
                    w.writerow([f"{t:.{digits}g}", fam, bus, f"{v:.{digits}g}"])


def _grid(horizon: float, dt: float) -> tuple[np.ndarray, float]:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if horizon < 10 * dt:
        raise ValueError("horizon must be at least 10 time steps")
    n = int(round(horizon / dt))
    return np.linspace(0.0, n * dt, n + 1), horizon / n


def _port_column(port_buses, fault: FaultSpec) -> int:
    if fault.bus not in port_buses:
        raise ValueError(f"bus {fault.bus} is not a disturbance port")
    return list(port_buses).index(fault.bus)


def _rk4_maps(A: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """RK4 step for x' = A x + u with u constant over the step: x+ = Phi x + Psi u."""
    n = A.shape[0]
    eye = np.eye(n)
    hA = h * A
    hA2 = hA @ hA
    hA3 = hA2 @ hA
    Phi = eye + hA + hA2 / 2 + hA3 / 6 + hA3 @ hA / 24
    Psi = h * (eye + hA / 2 + hA2 / 6 + hA3 / 24)
    return Phi, Psi


def _check(x: np.ndarray, t: float) -> None:
    nrm = float(np.linalg.norm(x))
    if not np.isfinite(nrm) or nrm > DIVERGENCE_LIMIT:
        raise SimulationDivergence(t, nrm)


def simulate_linear(cl: ClosedLoop, fault: FaultSpec, horizon: float, dt: float,
                    t_filter: float = ROCOF_FILTER) -> Trajectory:
    time, h = _grid(horizon, dt)
    j = _port_column(cl.port_buses, fault)
    g = cl.G[:, j] * fault.magnitude
    groups = signal_groups(cl.signal_labels)
    wj = np.zeros(len(cl.port_buses))
    wj[j] = cl.strengths[j] * fault.magnitude
    S, Sw = cl.signals, cl.signal_feedthrough @ wj
    om = groups["omega"]
    n, n_f = cl.A.shape[0], len(om)
    # augment with filter states wf' = (omega - wf)/T_f
    Aa = np.zeros((n + n_f, n + n_f))
    Aa[:n, :n] = cl.A
    Aa[n:, :n] = S[om] / t_filter
    Aa[n:, n:] = -np.eye(n_f) / t_filter
    Phi, Psi = _rk4_maps(Aa, h)
    ga = np.concatenate([g, np.zeros(n_f)])
    drive = Psi @ ga
    k0 = int(round(fault.start / h))
    if k0 >= time.size - 1:
        raise ValueError("fault starts after the horizon")
    z = np.zeros((time.size, n + n_f))
    active = np.zeros(time.size, dtype=bool)
    active[k0:] = True
    zk = np.zeros(n + n_f)
    for k in range(time.size):
        if k == k0 and fault.shape == "impulse":
            zk = zk + ga
            zk[n:] = S[om] @ zk[:n]
        z[k] = zk
        if k + 1 < time.size:
            zk = Phi @ zk
            if fault.shape == "step" and active[k]:
                zk = zk + drive
            if k % 500 == 0:
                _check(zk, time[k + 1])
    _check(zk, time[-1])
    x, wf = z[:, :n], z[:, n:]
    sig = x @ S.T
    if fault.shape == "step":
        sig = sig + np.outer(active, Sw)
    signals = _pack(cl.signal_labels, sig, groups, x @ S[om].T, wf, t_filter)
    machine_buses = tuple(cl.signal_labels[i][6:-1] for i in om)
    dev = tuple(cl.signal_labels[i][5:-1] for i in groups["p_vi"])
    return Trajectory(time, signals, x, cl.state_labels, fault, "linear", machine_buses, dev)


def _pack(labels, sig, groups, omega, wf, t_filter) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for fam in ("omega", "rocof"):
        for i in groups[fam]:
            out[labels[i]] = sig[:, i].copy()
    for c, i in enumerate(groups["omega"]):
        out["rocof_f" + labels[i][5:]] = (omega[:, c] - wf[:, c]) / t_filter
    for fam in ("p_gen", "p_vi"):
        for i in groups[fam]:
            out[labels[i]] = sig[:, i].copy()
    return out


def simulate_nonlinear(nl: NonlinearSystem, fault: FaultSpec, horizon: float, dt: float,
                       t_filter: float = ROCOF_FILTER, impulse_map: np.ndarray | None = None
                       ) -> Trajectory:
    """RK4 on the nonlinear surrogate.

    Impulse faults jump the state by ``impulse_map[:, port] * magnitude``,
    the linearized disturbance map of the closed loop (required for impulses).
    """
    time, h = _grid(horizon, dt)
    j = _port_column(nl.port_buses, fault)
    nl.reset()
    n_w = len(nl.port_buses)
    w_on = np.zeros(n_w)
    w_on[j] = nl.model.disturbances[j].strength * fault.magnitude
    w_off = np.zeros(n_w)
    lay = nl.layout
    om_idx = np.array(lay.omega_idx)
    gov_idx = np.array(lay.gov_idx)
    n_g = om_idx.size
    n = nl.n_x

    def field_(z, w):
        dx, p_out = nl.rhs(z[:n], w)
        dwf = (z[om_idx] - z[n:]) / t_filter
        return np.concatenate([dx, dwf]), dx, p_out

    k0 = int(round(fault.start / h))
    if k0 >= time.size - 1:
        raise ValueError("fault starts after the horizon")
    z = np.concatenate([nl.x0, np.zeros(n_g)])
    n_t = time.size
    states = np.zeros((n_t, n))
    omega = np.zeros((n_t, n_g))
    rocof = np.zeros((n_t, n_g))
    rocof_f = np.zeros((n_t, n_g))
    p_gen = np.zeros((n_t, n_g))
    p_vi = np.zeros((n_t, len(nl._dev)))
    _, p_out0 = nl.rhs(nl.x0, w_off)
    p_vi0 = np.array([p_out0[pos] if kind == "forming" else 0.0 for kind, _, pos, _ in nl._dev])
    for k in range(n_t):
        w = w_on if (fault.shape == "step" and k >= k0) else w_off
        if k == k0 and fault.shape == "impulse":
            if impulse_map is None:
                raise ValueError("impulse faults on the nonlinear model need the linear disturbance map")
            z[:n] = z[:n] + impulse_map[:, j] * fault.magnitude
            z[n:] = z[om_idx]
        k1, dx, p_out = field_(z, w)
        states[k] = z[:n] - nl.x0
        omega[k] = z[om_idx]
        rocof[k] = dx[om_idx]
        rocof_f[k] = k1[n:]
        p_gen[k] = z[gov_idx]
        for c, (kind, off, pos, _) in enumerate(nl._dev):
            p_vi[k, c] = p_out[pos] - p_vi0[c] if kind == "forming" else z[off + 3]
        if k + 1 == n_t:
            break
        k2 = field_(z + 0.5 * h * k1, w)[0]
        k3 = field_(z + 0.5 * h * k2, w)[0]
        k4 = field_(z + h * k3, w)[0]
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if k % 500 == 0:
            _check(z[:n] - nl.x0, time[k + 1])
    mb = tuple(m.bus for m in nl.model.machines)
    db = tuple(dev.bus for dev in nl.devices.devices)
    signals: dict[str, np.ndarray] = {}
    for c, b in enumerate(mb):
        signals[f"omega[{b}]"] = omega[:, c]
    for c, b in enumerate(mb):
        signals[f"rocof[{b}]"] = rocof[:, c]
    for c, b in enumerate(mb):
        signals[f"rocof_f[{b}]"] = rocof_f[:, c]
    for c, b in enumerate(mb):
        signals[f"p_gen[{b}]"] = p_gen[:, c]
    for c, b in enumerate(db):
        signals[f"p_vi[{b}]"] = p_vi[:, c]
    return Trajectory(time, signals, states, nl.state_labels, fault, "nonlinear", mb, db)


def simulate(system, fault: FaultSpec, horizon: float = 20.0, dt: float = 1e-3,
             t_filter: float = ROCOF_FILTER, impulse_map: np.ndarray | None = None) -> Trajectory:
    """Simulate a linear :class:`ClosedLoop` or a :class:`NonlinearSystem`."""
    if not t_filter > 0:
        raise ValueError("filter time constant must be positive")
    if isinstance(system, ClosedLoop):
        return simulate_linear(system, fault, horizon, dt, t_filter)
    if isinstance(system, NonlinearSystem):
        return simulate_nonlinear(system, fault, horizon, dt, t_filter, impulse_map)
    raise TypeError(f"cannot simulate {type(system).__name__}")
