"""Linearized swing-network model with virtual-inertia devices appended.

State layout, per machine k (in file order): ``delta[k]`` (omitted for the
first machine, which is the angle reference), ``omega[k]``, ``gov[k]``;
then each device's local block (see :func:`inertia_placer.devices.device_block`).
All angles are measured relative to the first machine, which removes the
uniform-angle-shift mode.

Passive and candidate buses are algebraic and eliminated by Kron reduction;
grid-forming devices add an internal node behind their filter susceptance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..devices import MODES, DeviceError, DeviceSet, device_block
from .network import NetworkError, NetworkModel, OperatingPoint, equilibrium, kron_reduce


@dataclass(frozen=True)
class PerformanceWeights:
    omega: float = 1.0
    rocof: float = 0.0
    gen: float = 0.0
    vi: float = 0.0

    def __post_init__(self):
        vals = (self.omega, self.rocof, self.gen, self.vi)
        if any(v < 0 for v in vals):
            raise ValueError("performance weights must be nonnegative")
        if not any(v > 0 for v in vals):
            raise ValueError("at least one performance weight must be positive")


@dataclass(eq=False)
class LinearSystem:
    """Open-loop linearization x' = A x + B u + E w, y = C x + Dy w.

    ``w`` holds 1 pu power injections at the disturbance ports; ``G = E*Pi``
    applies the port strengths.  ``signals`` (with ``signal_feedthrough``)
    are the unweighted physical outputs omega_G, domega_G, P_G, P_VI and
    ``Cp`` weights their state part by the square-root penalties.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Dy: np.ndarray
    E: np.ndarray
    strengths: np.ndarray
    signals: np.ndarray
    signal_feedthrough: np.ndarray
    signal_weights: np.ndarray
    state_labels: tuple[str, ...]
    input_labels: tuple[str, ...]
    output_labels: tuple[str, ...]
    signal_labels: tuple[str, ...]
    port_buses: tuple[str, ...]
    machine_buses: tuple[str, ...]
    device_buses: tuple[str, ...]
    mode: str
    weights: PerformanceWeights
    operating_point: OperatingPoint
    open_loop_stable: bool = True

    @property
    def G(self) -> np.ndarray:
        return self.E * self.strengths

    @property
    def Dg(self) -> np.ndarray:
        return self.Dy * self.strengths

    @property
    def Cp(self) -> np.ndarray:
        return np.sqrt(self.signal_weights)[:, None] * self.signals

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    def state_index(self, label: str) -> int:
        return self.state_labels.index(label)


class Layout:
    """Node/edge bookkeeping shared by the linear and nonlinear models."""

    def __init__(self, model: NetworkModel, devices: DeviceSet, op: OperatingPoint):
        for k, dev in enumerate(devices.devices):
            if dev.bus not in model.index:
                raise DeviceError(f"devices[{k}]: unknown bus {dev.bus!r}")
            if model.bus_type(dev.bus) != "vi-candidate":
                raise DeviceError(f"devices[{k}]: bus {dev.bus} is not a vi-candidate bus")
        self.model = model
        self.devices = devices
        self.op = op
        nb = model.n_buses
        forming = [d for d in devices.devices if d.mode == "forming"]
        self.node_ids = [b.id for b in model.buses] + [f"vi:{d.bus}" for d in forming]
        self.n_nodes = len(self.node_ids)
        src = [model.index[ln.src] for ln in model.lines]
        dst = [model.index[ln.dst] for ln in model.lines]
        b = [ln.b for ln in model.lines]
        self.internal = {}
        for j, d in enumerate(forming):
            self.internal[d.bus] = nb + j
            src.append(model.index[d.bus])
            dst.append(nb + j)
            b.append(d.susceptance)
        self.src = np.array(src, dtype=int)
        self.dst = np.array(dst, dtype=int)
        self.b = np.array(b, dtype=float)
        self.incidence = np.zeros((self.n_nodes, self.src.size))
        self.incidence[self.src, np.arange(self.src.size)] = 1.0
        self.incidence[self.dst, np.arange(self.src.size)] = -1.0

        theta0 = np.concatenate([op.angles, [op.angles[model.index[d.bus]] for d in forming]])
        self.theta0 = theta0 - op.angles[model.reference()]
        p0 = np.concatenate([op.injections, np.zeros(len(forming))])
        self.p0 = p0
        self.weights = self.b * np.cos(self.theta0[self.src] - self.theta0[self.dst])
        L = (self.incidence * self.weights) @ self.incidence.T

        machine_nodes = [model.index[m.bus] for m in model.machines]
        self.retained = np.array(machine_nodes + [self.internal[d.bus] for d in forming], dtype=int)
        self.kron = kron_reduce(L, self.retained)
        self.eliminated = self.kron.eliminated
        self.e_pos = {int(n): i for i, n in enumerate(self.eliminated)}
        self.r_pos = {int(n): i for i, n in enumerate(self.retained)}

        # state layout
        labels: list[str] = []
        self.delta_idx: list[int | None] = []
        self.omega_idx: list[int] = []
        self.gov_idx: list[int] = []
        for k, m in enumerate(model.machines):
            if k == 0:
                self.delta_idx.append(None)
            else:
                self.delta_idx.append(len(labels))
                labels.append(f"delta[{m.bus}]")
            self.omega_idx.append(len(labels))
            labels.append(f"omega[{m.bus}]")
            self.gov_idx.append(len(labels))
            labels.append(f"gov[{m.bus}]")
        self.blocks = []
        self.block_offset = []
        for d in devices.devices:
            blk = device_block(d)
            self.blocks.append(blk)
            self.block_offset.append(len(labels))
            labels.extend(blk.labels)
        self.state_labels = tuple(labels)
        n_x = len(labels)
        self.n_x = n_x

        # relative retained angles theta_r = Theta x
        n_r = self.retained.size
        Theta = np.zeros((n_r, n_x))
        for k, idx in enumerate(self.delta_idx):
            if idx is not None:
                Theta[k, idx] = 1.0
        fi = 0
        for blk, off, d in zip(self.blocks, self.block_offset, devices.devices):
            if d.mode == "forming":
                Theta[len(machine_nodes) + fi, off + blk.angle_state] = 1.0
                fi += 1
        self.Theta = Theta

        ports = model.disturbances
        self.port_buses = tuple(p.bus for p in ports)
        n_e = self.eliminated.size
        self.W_r = np.zeros((n_r, len(ports)))
        self.F_w = np.zeros((n_e, len(ports)))
        for p, port in enumerate(ports):
            node = model.index[port.bus]
            if node in self.r_pos:
                self.W_r[self.r_pos[node], p] = 1.0
            else:
                self.F_w[self.e_pos[node], p] = 1.0
        self.F_x = np.zeros((n_e, n_x))
        for blk, off, d in zip(self.blocks, self.block_offset, devices.devices):
            if blk.injection_state is not None:
                self.F_x[self.e_pos[model.index[d.bus]], off + blk.injection_state] = 1.0

    def device_node(self, dev) -> int:
        if dev.mode == "forming":
            return self.internal[dev.bus]
        return self.model.index[dev.bus]


def assemble_open_loop(model: NetworkModel, devices: DeviceSet, weights: PerformanceWeights,
                       mode: str | None = None, op: OperatingPoint | None = None) -> LinearSystem:
    mode = devices.mode if mode is None else mode
    if mode not in MODES:
        raise DeviceError(f"unknown mode {mode!r}")
    if devices.mode != mode:
        raise DeviceError(f"device set is {devices.mode}, requested {mode}")
    if not model.machines:
        raise NetworkError("no machines", "machines")
    if op is None:
        op = equilibrium(model, "ac")
    lay = Layout(model, devices, op)
    kr = lay.kron
    n_x, n_w = lay.n_x, len(lay.port_buses)
    n_c = len(devices)
    n_g = len(model.machines)

    # retained electrical power out: P_r = Pr_x x + Pr_w w
    Pr_x = kr.reduced @ lay.Theta - kr.injection @ lay.F_x
    Pr_w = -kr.injection @ lay.F_w
    # eliminated relative angles: theta_e = Th_x x + Th_w w
    Th_x = kr.recovery @ lay.Theta + kr.inv_eliminated @ lay.F_x
    Th_w = kr.inv_eliminated @ lay.F_w

    A = np.zeros((n_x, n_x))
    E = np.zeros((n_x, n_w))
    B = np.zeros((n_x, n_c))
    C = np.zeros((2 * n_c, n_x))
    Dy = np.zeros((2 * n_c, n_w))
    w0 = lay.omega_idx[0]
    for k, m in enumerate(model.machines):
        io, ig, idl = lay.omega_idx[k], lay.gov_idx[k], lay.delta_idx[k]
        A[io] = -Pr_x[k] / m.inertia
        A[io, io] -= m.damping / m.inertia
        A[io, ig] += 1.0 / m.inertia
        E[io] = (lay.W_r[k] - Pr_w[k]) / m.inertia
        A[ig, ig] = -1.0 / m.gov_time
        A[ig, io] = -m.droop_gain / m.gov_time
        if idl is not None:
            A[idl, io] += 1.0
            A[idl, w0] -= 1.0

    out_labels = []
    for j, (dev, blk, off) in enumerate(zip(devices.devices, lay.blocks, lay.block_offset)):
        loc = slice(off, off + len(blk.labels))
        node = lay.device_node(dev)
        if dev.mode == "forming":
            net_x, net_w = Pr_x[lay.r_pos[node]], Pr_w[lay.r_pos[node]]
        else:
            net_x, net_w = Th_x[lay.e_pos[node]], Th_w[lay.e_pos[node]]
        A[loc, loc] += blk.A
        A[loc] += np.outer(blk.b_network, net_x)
        E[loc] += np.outer(blk.b_network, net_w)
        A[off + blk.angle_state, w0] -= 1.0
        B[loc, j] = blk.b_u
        C[2 * j:2 * j + 2, loc] = blk.C
        C[2 * j:2 * j + 2] += np.outer(blk.d_network, net_x)
        Dy[2 * j:2 * j + 2] = np.outer(blk.d_network, net_w)
        out_labels.extend(blk.output_labels)

    # physical signals: omega_G, domega_G, P_G, P_VI
    rows_x, rows_w, labels, wts = [], [], [], []
    for k, m in enumerate(model.machines):
        rows_x.append(np.eye(n_x)[lay.omega_idx[k]])
        rows_w.append(np.zeros(n_w))
        labels.append(f"omega[{m.bus}]")
        wts.append(weights.omega)
    for k, m in enumerate(model.machines):
        rows_x.append(A[lay.omega_idx[k]].copy())
        rows_w.append(E[lay.omega_idx[k]].copy())
        labels.append(f"rocof[{m.bus}]")
        wts.append(weights.rocof)
    for k, m in enumerate(model.machines):
        rows_x.append(np.eye(n_x)[lay.gov_idx[k]])
        rows_w.append(np.zeros(n_w))
        labels.append(f"p_gen[{m.bus}]")
        wts.append(weights.gen)
    for dev, blk, off in zip(devices.devices, lay.blocks, lay.block_offset):
        if dev.mode == "forming":
            r = lay.r_pos[lay.device_node(dev)]
            rows_x.append(Pr_x[r].copy())
            rows_w.append(Pr_w[r].copy())
        else:
            rows_x.append(np.eye(n_x)[off + blk.injection_state])
            rows_w.append(np.zeros(n_w))
        labels.append(f"p_vi[{dev.bus}]")
        wts.append(weights.vi)

    S = np.array(rows_x).reshape(-1, n_x)
    Sw = np.array(rows_w).reshape(-1, n_w)
    abscissa = np.max(np.linalg.eigvals(A).real) if n_x else -np.inf
    stable = bool(abscissa < -1e-8)
    if not stable and mode == "following":
        warnings.warn(f"open-loop system is not asymptotically stable (abscissa {abscissa:.3g})",
                      RuntimeWarning, stacklevel=2)
    return LinearSystem(
        A=A, B=B, C=C, Dy=Dy, E=E,
        strengths=np.array([p.strength for p in model.disturbances], dtype=float),
        signals=S, signal_feedthrough=Sw, signal_weights=np.array(wts, dtype=float),
        state_labels=lay.state_labels,
        input_labels=tuple(f"u[{b}]" for b in devices.buses),
        output_labels=tuple(out_labels),
        signal_labels=tuple(labels),
        port_buses=lay.port_buses,
        machine_buses=tuple(m.bus for m in model.machines),
        device_buses=devices.buses,
        mode=mode,
        weights=weights,
        operating_point=op,
        open_loop_stable=stable,
    )


def signal_groups(labels: tuple[str, ...]) -> dict[str, list[int]]:
    """Row indices of each signal family in a signal/trajectory label list."""
    groups: dict[str, list[int]] = {"omega": [], "rocof": [], "p_gen": [], "p_vi": []}
    for i, lab in enumerate(labels):
        groups[lab.split("[", 1)[0]].append(i)
    return groups
