"""Virtual-inertia device models and their static output-feedback gains.

Both device kinds are treated as local controllers: each device contributes
one control input and two measured outputs, and its tunable inertia and
damping live in a 1x2 block of a block-diagonal feedback matrix.

Sign conventions.  P_VI always denotes power injected into the grid.  A
grid-following device's set-point ``u = d*omega_hat + m*domega_hat`` is the
power it *absorbs*, so its current source tracks -u; nonnegative gains then
oppose frequency deviations.  For grid-forming devices the second measured output is the
power *absorbed* from the grid, -P_VI, so that ``u = alpha*omega_VI +
beta*(-P_VI)`` with ``alpha = -d/m`` and ``beta = 1/m`` is exactly
``m*domega_VI/dt = -d*omega_VI - P_VI``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence, Union

import numpy as np

if TYPE_CHECKING:
    from .netmodel.assembly import LinearSystem

MODES = ("following", "forming")

PLL_TAU = 0.05
PLL_KP = 20.0
PLL_KI = 100.0
TAU_FOLL = 0.1
FORMING_SUSCEPTANCE = 5.0


class DeviceError(ValueError):
    pass


@dataclass(frozen=True)
class GridFollowingVI:
    bus: str
    tau: float = PLL_TAU
    kp: float = PLL_KP
    ki: float = PLL_KI
    tau_foll: float = TAU_FOLL
    inertia: float = 0.0
    damping: float = 0.0

    mode = "following"

    def __post_init__(self):
        for name in ("tau", "kp", "ki", "tau_foll"):
            if not getattr(self, name) > 0:
                raise DeviceError(f"{name} must be positive (device at bus {self.bus})")
        if self.inertia < 0 or self.damping < 0:
            raise DeviceError(f"gains must be nonnegative (device at bus {self.bus})")


@dataclass(frozen=True)
class GridFormingVI:
    bus: str
    inertia: float = 1.0
    damping: float = 0.0
    susceptance: float = FORMING_SUSCEPTANCE

    mode = "forming"

    def __post_init__(self):
        if not self.inertia > 0:
            raise DeviceError(f"inertia must be positive for grid-forming (bus {self.bus})")
        if self.damping < 0:
            raise DeviceError(f"damping must be nonnegative (bus {self.bus})")
        if not self.susceptance > 0:
            raise DeviceError(f"filter susceptance must be positive (bus {self.bus})")


Device = Union[GridFollowingVI, GridFormingVI]


@dataclass(frozen=True)
class DeviceSite:
    """A candidate location with the parameters needed by either device kind."""

    bus: str
    p_max: float | None = None
    tau: float = PLL_TAU
    kp: float = PLL_KP
    ki: float = PLL_KI
    tau_foll: float = TAU_FOLL
    susceptance: float = FORMING_SUSCEPTANCE

    def make(self, mode: str, inertia: float | None = None, damping: float = 0.0) -> Device:
        if mode == "following":
            return GridFollowingVI(self.bus, self.tau, self.kp, self.ki, self.tau_foll,
                                   0.0 if inertia is None else inertia, damping)
        if mode == "forming":
            return GridFormingVI(self.bus, 1.0 if inertia is None else inertia, damping,
                                 self.susceptance)
        raise DeviceError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class DeviceSet:
    mode: str
    devices: tuple[Device, ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise DeviceError(f"unknown mode {self.mode!r}")
        buses = [d.bus for d in self.devices]
        if len(set(buses)) != len(buses):
            raise DeviceError("at most one device per bus")
        for d in self.devices:
            if d.mode != self.mode:
                raise DeviceError(f"device at bus {d.bus} is {d.mode}, set is {self.mode}")

    @classmethod
    def from_sites(cls, sites: Sequence[DeviceSite], mode: str,
                   alloc: "Allocation | None" = None) -> "DeviceSet":
        if alloc is None:
            return cls(mode, tuple(s.make(mode) for s in sites))
        by_bus = dict(zip(alloc.buses, zip(alloc.inertia, alloc.damping)))
        missing = [s.bus for s in sites if s.bus not in by_bus]
        if missing:
            raise DeviceError(f"allocation lacks buses {missing}")
        return cls(mode, tuple(s.make(mode, float(by_bus[s.bus][0]), float(by_bus[s.bus][1]))
                               for s in sites))

    @property
    def buses(self) -> tuple[str, ...]:
        return tuple(d.bus for d in self.devices)

    def __len__(self) -> int:
        return len(self.devices)

    def allocation(self) -> "Allocation":
        return Allocation(self.buses,
                          np.array([d.inertia for d in self.devices], dtype=float),
                          np.array([d.damping for d in self.devices], dtype=float))

    def with_allocation(self, alloc: "Allocation") -> "DeviceSet":
        by_bus = dict(zip(alloc.buses, zip(alloc.inertia, alloc.damping)))
        out = []
        for d in self.devices:
            m, dd = by_bus[d.bus]
            if isinstance(d, GridFollowingVI):
                out.append(GridFollowingVI(d.bus, d.tau, d.kp, d.ki, d.tau_foll, float(m), float(dd)))
            else:
                out.append(GridFormingVI(d.bus, float(m), float(dd), d.susceptance))
        return DeviceSet(self.mode, tuple(out))


@dataclass(frozen=True)
class DeviceBlock:
    """Local linear model of one device.

    ``network`` is the device's scalar coupling signal: the (absolute) bus
    angle for a grid-following device, the injected power P_VI for a
    grid-forming device.  Outputs are ``C @ x_local + d_network * network``.
    """

    labels: tuple[str, ...]
    A: np.ndarray
    b_u: np.ndarray
    b_network: np.ndarray
    C: np.ndarray
    d_network: np.ndarray
    output_labels: tuple[str, ...]
    angle_state: int
    injection_state: int | None = None


def device_block(device: Device) -> DeviceBlock:
    tag = f"[{device.bus}]"
    if isinstance(device, GridFollowingVI):
        tau, kp, ki = device.tau, device.kp, device.ki
        # states: theta_hat, omega_hat, int v_q, P_VI;  v_q = theta_hat - theta_bus
        A = np.array([
            [0.0, 1.0, 0.0, 0.0],
            [-kp / tau, -1.0 / tau, -ki / tau, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, -1.0 / device.tau_foll],
        ])
        # the set-point is in load convention: the source injects -P*
        b_u = np.array([0.0, 0.0, 0.0, -1.0 / device.tau_foll])
        b_net = np.array([0.0, kp / tau, -1.0, 0.0])
        C = np.vstack([[0.0, 1.0, 0.0, 0.0], A[1]])
        d_net = np.array([0.0, kp / tau])
        return DeviceBlock(
            ("theta_pll" + tag, "omega_pll" + tag, "int_vq" + tag, "p_vi" + tag),
            A, b_u, b_net, C, d_net, ("omega_pll" + tag, "rocof_pll" + tag),
            angle_state=0, injection_state=3,
        )
    if isinstance(device, GridFormingVI):
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
        return DeviceBlock(
            ("theta_vi" + tag, "omega_vi" + tag),
            A, np.array([0.0, 1.0]), np.zeros(2),
            np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([0.0, -1.0]),
            ("omega_vi" + tag, "neg_p_vi" + tag),
            angle_state=0,
        )
    raise DeviceError(f"not a device: {device!r}")


@dataclass(eq=False)
class Allocation:
    """Per-device virtual inertia and damping."""

    buses: tuple[str, ...]
    inertia: np.ndarray
    damping: np.ndarray

    def __post_init__(self):
        self.buses = tuple(str(b) for b in self.buses)
        self.inertia = np.asarray(self.inertia, dtype=float).reshape(-1)
        self.damping = np.asarray(self.damping, dtype=float).reshape(-1)
        if not (len(self.buses) == self.inertia.size == self.damping.size):
            raise DeviceError("allocation arrays must match the bus list")

    @classmethod
    def zeros(cls, buses: Sequence[str]) -> "Allocation":
        return cls(tuple(buses), np.zeros(len(buses)), np.zeros(len(buses)))

    @classmethod
    def from_vector(cls, buses: Sequence[str], x: np.ndarray) -> "Allocation":
        n = len(buses)
        return cls(tuple(buses), x[:n].copy(), x[n:].copy())

    def vector(self) -> np.ndarray:
        """Stacked decision vector (inertia..., damping...)."""
        return np.concatenate([self.inertia, self.damping])

    def __len__(self) -> int:
        return len(self.buses)

    def to_dict(self) -> dict:
        return {"devices": [{"bus": b, "inertia": float(m), "damping": float(d)}
                            for b, m, d in zip(self.buses, self.inertia, self.damping)]}

    @classmethod
    def from_dict(cls, doc: dict) -> "Allocation":
        rows = doc["devices"] if isinstance(doc, dict) else doc
        return cls(tuple(str(r["bus"]) for r in rows),
                   np.array([float(r["inertia"]) for r in rows]),
                   np.array([float(r["damping"]) for r in rows]))


@dataclass(eq=False)
class GainMatrix:
    """Block-diagonal static output feedback, one 1x2 row block per device."""

    mode: str
    buses: tuple[str, ...]
    blocks: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=float).reshape(-1, 2)
        if self.mode not in MODES:
            raise DeviceError(f"unknown mode {self.mode!r}")
        if self.blocks.shape[0] != len(self.buses):
            raise DeviceError("one block per device required")

    @property
    def structure(self) -> np.ndarray:
        n = len(self.buses)
        S = np.zeros((n, 2 * n), dtype=bool)
        for j in range(n):
            S[j, 2 * j:2 * j + 2] = True
        return S

    @property
    def matrix(self) -> np.ndarray:
        n = len(self.buses)
        K = np.zeros((n, 2 * n))
        for j in range(n):
            K[j, 2 * j:2 * j + 2] = self.blocks[j]
        return K

    @classmethod
    def from_matrix(cls, mode: str, buses: Sequence[str], K: np.ndarray) -> "GainMatrix":
        n = len(buses)
        K = np.asarray(K, dtype=float)
        if K.shape != (n, 2 * n):
            raise DeviceError(f"expected a {n}x{2 * n} gain matrix, got {K.shape}")
        g = cls(mode, tuple(buses), np.array([K[j, 2 * j:2 * j + 2] for j in range(n)]))
        if np.any(K[~g.structure] != 0):
            raise DeviceError("gain matrix violates the block-diagonal structure")
        return g


def gains_to_feedback(alloc: Allocation, mode: str) -> GainMatrix:
    m, d = alloc.inertia, alloc.damping
    if mode == "following":
        return GainMatrix(mode, alloc.buses, np.column_stack([d, m]))
    if mode == "forming":
        if np.any(m <= 0):
            raise DeviceError("inertia must be positive for grid-forming")
        return GainMatrix(mode, alloc.buses, np.column_stack([-d / m, 1.0 / m]))
    raise DeviceError(f"unknown mode {mode!r}")


def feedback_to_gains(K: GainMatrix) -> Allocation:
    a, b = K.blocks[:, 0], K.blocks[:, 1]
    if K.mode == "following":
        return Allocation(K.buses, b.copy(), a.copy())
    if np.any(b <= 0):
        raise DeviceError("grid-forming feedback needs beta > 0")
    m = 1.0 / b
    return Allocation(K.buses, m, -a * m)


@dataclass(eq=False)
class ClosedLoop:
    """Closed-loop model x' = A x + E w, performance z = Cp x.

    ``E`` is the per-port power-injection map (1 pu per port); ``G`` scales it
    by the port strengths.  ``signals``/``signal_feedthrough`` give the
    unweighted physical outputs used for time-domain metrics.
    """

    A: np.ndarray
    E: np.ndarray
    strengths: np.ndarray
    Cp: np.ndarray
    signals: np.ndarray
    signal_feedthrough: np.ndarray
    signal_labels: tuple[str, ...]
    state_labels: tuple[str, ...]
    port_buses: tuple[str, ...]
    system: "LinearSystem | None" = None
    gains: GainMatrix | None = None

    @property
    def G(self) -> np.ndarray:
        return self.E * self.strengths

    @property
    def n_states(self) -> int:
        return self.A.shape[0]


def close_loop(sys: "LinearSystem", K: GainMatrix) -> ClosedLoop:
    if K.mode != sys.mode:
        raise DeviceError(f"gain mode {K.mode} does not match system mode {sys.mode}")
    if tuple(K.buses) != tuple(sys.device_buses):
        raise DeviceError(f"gain buses {K.buses} do not match system devices {sys.device_buses}")
    Km = K.matrix
    if Km.shape != (sys.B.shape[1], sys.C.shape[0]):
        raise DeviceError("gain dimensions do not match the system")
    BK = sys.B @ Km
    return ClosedLoop(
        A=sys.A + BK @ sys.C,
        E=sys.E + BK @ sys.Dy,
        strengths=sys.strengths,
        Cp=sys.Cp,
        signals=sys.signals,
        signal_feedthrough=sys.signal_feedthrough,
        signal_labels=sys.signal_labels,
        state_labels=sys.state_labels,
        port_buses=sys.port_buses,
        system=sys,
        gains=K,
    )
