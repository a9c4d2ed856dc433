"""Frequency-stability metrics of a simulated trajectory."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from ..netmodel import PerformanceWeights
from .simulate import Trajectory

ENERGY_FAMILIES = {"omega": "omega", "rocof": "rocof", "gen": "p_gen", "vi": "p_vi"}


@dataclass
class MetricsReport:
    """Peaks are maxima of |.| over the whole grid; energies integrate over [0, tau].

    ``nadir`` is the largest frequency excursion |omega_k|, which for a load
    increase is the depth of the frequency dip.  ``max_rocof`` uses the
    filtered derivative; ``max_rocof_raw`` the state-equation derivative.
    """

    tau: float
    nadir: dict[str, float]
    max_rocof: dict[str, float]
    max_rocof_raw: dict[str, float]
    peak_p_gen: dict[str, float]
    peak_p_vi: dict[str, float]
    peak_sum_p_gen: float
    peak_sum_p_vi: float
    energy: dict[str, float]
    cost: float
    h2: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def max_nadir(self) -> float:
        return max(self.nadir.values(), default=0.0)

    @property
    def max_rocof_all(self) -> float:
        return max(self.max_rocof.values(), default=0.0)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "nadir": self.nadir,
            "max_rocof": self.max_rocof,
            "max_rocof_raw": self.max_rocof_raw,
            "peak_p_gen": self.peak_p_gen,
            "peak_p_vi": self.peak_p_vi,
            "peak_sum_p_gen": self.peak_sum_p_gen,
            "peak_sum_p_vi": self.peak_sum_p_vi,
            "energy": self.energy,
            "cost": self.cost,
            "h2": self.h2,
        }


def _peaks(traj: Trajectory, family: str) -> dict[str, float]:
    out = {}
    for name, v in traj.signals.items():
        fam, bus = name.split("[", 1)
        if fam == family:
            out[bus[:-1]] = float(np.max(np.abs(v))) if v.size else 0.0
    return out


def energy_curves(traj: Trajectory) -> dict[str, np.ndarray]:
    """Running energies t -> integral_0^t sum_k s_k^2 for each family (trapezoid rule)."""
    curves = {}
    for key, fam in ENERGY_FAMILIES.items():
        X = traj.family(fam)
        integrand = np.sum(X * X, axis=1) if X.shape[1] else np.zeros(traj.time.size)
        curves[key] = cumulative_trapezoid(integrand, traj.time, initial=0.0)
    return curves


def metrics(traj: Trajectory, weights: PerformanceWeights, tau: float | None = None,
            h2: float | None = None) -> MetricsReport:
    t_end = float(traj.time[-1])
    tau = t_end if tau is None else float(tau)
    if tau > t_end * (1 + 1e-12):
        raise ValueError("tau exceeds the simulated horizon")
    # energies over [0, tau], interpolating the running integral at tau
    curves = energy_curves(traj)
    energy = {k: float(np.interp(tau, traj.time, c)) for k, c in curves.items()}
    cost = (weights.omega * energy["omega"] + weights.rocof * energy["rocof"]
            + weights.gen * energy["gen"] + weights.vi * energy["vi"])
    p_vi = traj.family("p_vi")
    p_gen = traj.family("p_gen")
    return MetricsReport(
        tau=tau,
        nadir=_peaks(traj, "omega"),
        max_rocof=_peaks(traj, "rocof_f"),
        max_rocof_raw=_peaks(traj, "rocof"),
        peak_p_gen=_peaks(traj, "p_gen"),
        peak_p_vi=_peaks(traj, "p_vi"),
        peak_sum_p_gen=float(np.max(np.abs(p_gen.sum(axis=1)))) if p_gen.shape[1] else 0.0,
        peak_sum_p_vi=float(np.max(np.abs(p_vi.sum(axis=1)))) if p_vi.shape[1] else 0.0,
        energy=energy,
        cost=float(cost),
        h2=h2,
    )
