"""Nonlinear swing-network surrogate: sinusoidal line flows and PLL phase detector.

States use the same coordinates and ordering as :func:`assemble_open_loop`,
but hold absolute values (relative to the first machine) instead of
deviations; :attr:`NonlinearSystem.x0` is the operating point.
"""

from __future__ import annotations

import numpy as np

from ..devices import DeviceSet
from .assembly import Layout
from .network import NetworkModel, OperatingPoint, equilibrium


class NonlinearSystem:
    newton_tol = 1e-13
    newton_max_iter = 30

    def __init__(self, model: NetworkModel, devices: DeviceSet, op: OperatingPoint | None = None):
        if op is None:
            op = equilibrium(model, "ac")
        lay = Layout(model, devices, op)
        self.layout = lay
        self.model = model
        self.devices = devices
        self.n_x = lay.n_x
        self.state_labels = lay.state_labels
        self.port_buses = lay.port_buses
        self._ret = lay.retained
        self._elim = lay.eliminated
        self._inc_e = lay.incidence[self._elim]
        self._inc_r = lay.incidence[self._ret]
        self._inc_t = lay.incidence.T.copy()
        kr = lay.kron
        self._recovery = kr.recovery
        self._inv_ee = kr.inv_eliminated
        self._theta0_r = lay.theta0[self._ret]
        self._theta0_e = lay.theta0[self._elim]
        self._p0_e = lay.p0[self._elim]
        self._p_mech0 = lay.p0[self._ret][: len(model.machines)]
        self._mach = model.machines
        self.M = np.array([m.inertia for m in model.machines])
        self.D = np.array([m.damping for m in model.machines])
        self.R = np.array([m.droop_gain for m in model.machines])
        self.Tg = np.array([m.gov_time for m in model.machines])
        self._omega = np.array(lay.omega_idx)
        self._gov = np.array(lay.gov_idx)
        self._delta = np.array([i for i in lay.delta_idx if i is not None], dtype=int)
        self._delta_m = np.array([k for k, i in enumerate(lay.delta_idx) if i is not None], dtype=int)
        self._theta_sel = [np.flatnonzero(row) for row in lay.Theta]
        self._theta_pos = np.array([s[0] if s.size else -1 for s in self._theta_sel])
        self._theta_mask = self._theta_pos >= 0
        self._theta_take = self._theta_pos[self._theta_mask]
        self._b = np.asarray(lay.b, float)
        self._F_x = lay.F_x
        self._F_w = lay.F_w
        self._W_r = lay.W_r
        self._warm = None

        x0 = np.zeros(self.n_x)
        x0[self._delta] = lay.theta0[self._ret][self._delta_m]
        self._dev = []
        n_g = len(model.machines)
        fi = 0
        for dev, blk, off in zip(devices.devices, lay.blocks, lay.block_offset):
            node = lay.device_node(dev)
            if dev.mode == "forming":
                x0[off] = lay.theta0[node]
                self._dev.append(("forming", off, n_g + fi, dev))
                fi += 1
            else:
                x0[off] = lay.theta0[node]
                self._dev.append(("following", off, lay.e_pos[node], dev))
        self.x0 = x0

    def _angles(self, x: np.ndarray) -> np.ndarray:
        th = np.zeros(self._ret.size)
        th[self._theta_mask] = x[self._theta_take]
        return th

    def network(self, x: np.ndarray, w: np.ndarray):
        """Solve the algebraic buses; return (retained power out, all node angles).

        Newton's method is started from the previous solution shifted by the
        linear sensitivity, which is within round-off of the root during
        time stepping, so usually one correction suffices.
        """
        lay = self.layout
        th_r = self._angles(x)
        p_e = self._p0_e + self._F_x @ x + self._F_w @ w
        theta = np.empty(lay.n_nodes)
        theta[self._ret] = th_r
        if self._elim.size:
            if self._warm is None:
                th_e = (self._theta0_e + self._recovery @ (th_r - self._theta0_r)
                        + self._inv_ee @ (p_e - self._p0_e))
            else:
                wr, wp, we = self._warm
                th_e = we + self._recovery @ (th_r - wr) + self._inv_ee @ (p_e - wp)
            scalar = self._elim.size == 1
            for _ in range(self.newton_max_iter):
                theta[self._elim] = th_e
                diff = self._inc_t @ theta
                resid = self._inc_e @ (self._b * np.sin(diff)) - p_e
                if abs(resid).max() < self.newton_tol:
                    break
                J = (self._inc_e * (self._b * np.cos(diff))) @ self._inc_e.T
                th_e = th_e - (resid / J[0, 0] if scalar else np.linalg.solve(J, resid))
            else:
                raise FloatingPointError("algebraic network solve did not converge")
            theta[self._elim] = th_e
            self._warm = (th_r, p_e, th_e)
        p_out = self._inc_r @ (self._b * np.sin(self._inc_t @ theta))
        return p_out, theta

    def reset(self) -> None:
        """Forget the Newton warm start (makes a run independent of earlier calls)."""
        self._warm = None

    def rhs(self, x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """State derivative and the retained-node electrical power outputs."""
        p_out, theta = self.network(x, w)
        dx = np.zeros(x.size)
        n_g = self.M.size
        om = x[self._omega]
        g = x[self._gov]
        p_ext = self._W_r[:n_g] @ w
        dx[self._omega] = (-self.D * om + self._p_mech0 + g + p_ext - p_out[:n_g]) / self.M
        dx[self._gov] = (-g - self.R * om) / self.Tg
        dx[self._delta] = om[self._delta_m] - om[0]
        for kind, off, pos, dev in self._dev:
            if kind == "forming":
                ov = x[off + 1]
                dx[off] = ov - om[0]
                dx[off + 1] = (-dev.damping * ov - p_out[pos]) / dev.inertia
            else:
                th_hat, w_hat, z, p_vi = x[off:off + 4]
                vq = np.sin(th_hat - theta[self._elim[pos]])
                dw = (-w_hat - dev.kp * vq - dev.ki * z) / dev.tau
                dx[off] = w_hat - om[0]
                dx[off + 1] = dw
                dx[off + 2] = vq
                dx[off + 3] = (-p_vi - dev.damping * w_hat - dev.inertia * dw) / dev.tau_foll
        return dx, p_out


def nonlinear_rhs(model: NetworkModel, devices: DeviceSet, mode: str, state: np.ndarray,
                  disturbance: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Pure-function form of :meth:`NonlinearSystem.rhs` (rebuilds the model each call)."""
    if devices.mode != mode:
        raise ValueError(f"device set is {devices.mode}, requested {mode}")
    sys = NonlinearSystem(model, devices)
    state = np.asarray(state, dtype=float)
    if state.shape != (sys.n_x,):
        raise ValueError(f"state must have {sys.n_x} entries")
    w = np.zeros(len(sys.port_buses)) if disturbance is None else np.asarray(disturbance, float)
    return sys.rhs(state, w)[0]
