"""Linear versus nonlinear response over a grid of step faults."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..devices import Allocation, DeviceSet, close_loop, gains_to_feedback
from ..netmodel import NetworkModel, NonlinearSystem, PerformanceWeights, assemble_open_loop, equilibrium
from .metrics import metrics
from .simulate import FaultSpec, SimulationDivergence, simulate

STUDY_METRICS = ("nadir", "max_rocof", "peak_p_vi", "peak_p_gen")
BIN_WIDTH = 5.0
BIN_LIMIT = 100.0
DENOMINATOR_GUARD = 1e-9
DEFAULT_RANGE = 0.25


def default_magnitudes(limit: float = DEFAULT_RANGE, count: int = 5) -> list[float]:
    """Symmetric magnitudes +-limit*k/count, k = 1..count (zero excluded)."""
    steps = [limit * k / count for k in range(1, count + 1)]
    return [-s for s in reversed(steps)] + steps


def scalar_metrics(traj) -> dict[str, float]:
    rep = metrics(traj, PerformanceWeights())
    return {
        "nadir": rep.max_nadir,
        "max_rocof": rep.max_rocof_all,
        "peak_p_vi": max(rep.peak_p_vi.values(), default=0.0),
        "peak_p_gen": max(rep.peak_p_gen.values(), default=0.0),
    }


@dataclass
class StudySample:
    port: str
    magnitude: float
    linear: dict[str, float] = field(default_factory=dict)
    nonlinear: dict[str, float] = field(default_factory=dict)
    error: dict[str, float] = field(default_factory=dict)   # percent; nan if excluded
    diverged: bool = False
    message: str = ""


@dataclass
class StudyResult:
    samples: list[StudySample]
    edges: np.ndarray
    histograms: dict[str, np.ndarray]
    excluded: dict[str, int]
    diverged: int

    def errors(self, metric: str) -> np.ndarray:
        e = np.array([s.error.get(metric, np.nan) for s in self.samples], dtype=float)
        return e[np.isfinite(e)]

    def within(self, band: float = 10.0) -> dict[str, float]:
        """Fraction of retained samples with |error| <= band percent, per metric."""
        out = {}
        for m in STUDY_METRICS:
            e = self.errors(m)
            out[m] = float(np.mean(np.abs(e) <= band)) if e.size else float("nan")
        return out

    def histogram_rows(self) -> list[list]:
        rows = []
        for i in range(self.edges.size - 1):
            rows.append([self.edges[i], self.edges[i + 1]]
                        + [int(self.histograms[m][i]) for m in STUDY_METRICS])
        return rows

    def write_histograms(self, path: str | Path, digits: int = 12) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_low", "bin_high", *STUDY_METRICS])
            for row in self.histogram_rows():
                w.writerow([f"{row[0]:.{digits}g}", f"{row[1]:.{digits}g}", *row[2:]])

    def write_samples(self, path: str | Path, digits: int = 12) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["port", "magnitude", "metric", "linear", "nonlinear", "error_percent",
                        "status"])
            for s in self.samples:
                if s.diverged:
                    w.writerow([s.port, f"{s.magnitude:.{digits}g}", "", "", "", "", "diverged"])
                    continue
                for m in STUDY_METRICS:
                    err = s.error[m]
                    w.writerow([s.port, f"{s.magnitude:.{digits}g}", m,
                                f"{s.linear[m]:.{digits}g}", f"{s.nonlinear[m]:.{digits}g}",
                                f"{err:.{digits}g}" if np.isfinite(err) else "",
                                "ok" if np.isfinite(err) else "excluded"])


def bin_edges() -> np.ndarray:
    inner = np.arange(-BIN_LIMIT, BIN_LIMIT + BIN_WIDTH / 2, BIN_WIDTH)
    return np.concatenate([[-np.inf], inner, [np.inf]])


def relative_error(lin: float, nonlin: float) -> float:
    if abs(nonlin) < DENOMINATOR_GUARD:
        return float("nan")
    return 100.0 * (lin - nonlin) / nonlin


def linearization_error_study(model: NetworkModel, devices: DeviceSet, mode: str, alloc: Allocation,
                              magnitudes: Sequence[float] | None = None,
                              ports: Sequence[str] | None = None, horizon: float = 10.0,
                              dt: float = 2e-3, workers: int | None = None) -> StudyResult:
    """Compare linear and nonlinear step responses for every (port, magnitude)."""
    if devices.mode != mode:
        raise ValueError(f"device set is {devices.mode}, requested {mode}")
    magnitudes = default_magnitudes() if magnitudes is None else list(magnitudes)
    devices = devices.with_allocation(alloc)
    op = equilibrium(model, "ac")
    sys = assemble_open_loop(model, devices, PerformanceWeights(), mode, op)
    cl = close_loop(sys, gains_to_feedback(alloc, mode))
    ports = list(sys.port_buses) if ports is None else [str(p) for p in ports]
    grid = [(p, float(a)) for p in ports for a in magnitudes]

    def run(item):
        port, mag = item
        fault = FaultSpec(port, mag, "step")
        sample = StudySample(port, mag)
        try:
            nl = NonlinearSystem(model, devices, op)
            nonlin = scalar_metrics(simulate(nl, fault, horizon, dt))
        except (SimulationDivergence, FloatingPointError, np.linalg.LinAlgError) as exc:
            sample.diverged = True
            sample.message = str(exc)
            return sample
        lin = scalar_metrics(simulate(cl, fault, horizon, dt))
        sample.linear, sample.nonlinear = lin, nonlin
        sample.error = {m: relative_error(lin[m], nonlin[m]) for m in STUDY_METRICS}
        return sample

    if workers is None:
        workers = int(os.environ.get("INERTIA_PLACER_THREADS", "1") or 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(run, grid))
    else:
        samples = [run(g) for g in grid]

    edges = bin_edges()
    hist, excluded = {}, {}
    for m in STUDY_METRICS:
        e = np.array([s.error[m] for s in samples if not s.diverged], dtype=float)
        excluded[m] = int(np.sum(~np.isfinite(e)))
        hist[m] = np.histogram(e[np.isfinite(e)], bins=edges)[0]
    return StudyResult(samples, edges, hist, excluded, sum(s.diverged for s in samples))
