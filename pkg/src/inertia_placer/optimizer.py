"""Projected-gradient tuning of virtual inertia and damping gains."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .devices import Allocation, close_loop, gains_to_feedback
from .h2core import (HURWITZ_MARGIN, GradientReport, UnstableSystemError, h2_difference, h2_gradient,
                     h2_norm, spectral_abscissa)
from .netmodel import LinearSystem

log = logging.getLogger(__name__)

THREADS_ENV = "INERTIA_PLACER_THREADS"


class OptimizationError(RuntimeError):
    pass


@dataclass(eq=False)
class ConstraintSet:
    """Box and damping-budget constraints on (inertia, damping).

    Per-device caps follow from converter ratings: ``m_cap = p_max/rocof_max``
    and ``d_cap = p_max/omega_max``.
    """

    d_sum: float
    d_cap: np.ndarray
    m_cap: np.ndarray
    m_floor: float = 0.0

    def __post_init__(self):
        self.d_cap = np.atleast_1d(np.asarray(self.d_cap, dtype=float))
        self.m_cap = np.atleast_1d(np.asarray(self.m_cap, dtype=float))
        if self.d_cap.shape != self.m_cap.shape:
            raise ValueError("d_cap and m_cap must have one entry per device")
        if not self.d_sum > 0:
            raise ValueError("d_sum must be positive")
        if np.any(self.d_cap <= 0) or np.any(self.m_cap <= 0):
            raise ValueError("caps must be positive")
        if self.m_floor < 0:
            raise ValueError("m_floor must be nonnegative")
        if np.any(self.m_floor > self.m_cap):
            raise ValueError("infeasible constraints: m_floor exceeds an inertia cap")

    @classmethod
    def from_ratings(cls, p_max: Sequence[float], omega_max: float, rocof_max: float,
                     d_sum: float, m_floor: float = 0.0) -> "ConstraintSet":
        p = np.asarray(p_max, dtype=float)
        if omega_max <= 0 or rocof_max <= 0:
            raise ValueError("omega_max and rocof_max must be positive")
        return cls(d_sum, p / omega_max, p / rocof_max, m_floor)

    @classmethod
    def uniform(cls, n: int, d_sum: float, d_cap: float, m_cap: float,
                m_floor: float = 0.0) -> "ConstraintSet":
        return cls(d_sum, np.full(n, float(d_cap)), np.full(n, float(m_cap)), m_floor)

    @property
    def n(self) -> int:
        return self.d_cap.size

    def is_feasible(self, alloc: Allocation, tol: float = 1e-10) -> bool:
        m, d = alloc.inertia, alloc.damping
        return bool(
            np.all(m >= self.m_floor - tol) and np.all(m <= self.m_cap + tol)
            and np.all(d >= -tol) and np.all(d <= self.d_cap + tol)
            and d.sum() <= self.d_sum + tol
        )

    def to_dict(self) -> dict:
        return {"d_sum": self.d_sum, "d_cap": self.d_cap.tolist(),
                "m_cap": self.m_cap.tolist(), "m_floor": self.m_floor}


def _project_damping(v: np.ndarray, cap: np.ndarray, budget: float) -> np.ndarray:
    d = np.clip(v, 0.0, cap)
    if d.sum() <= budget:
        return d
    lo, hi = 0.0, float(np.max(v))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.clip(v - mid, 0.0, cap).sum() > budget:
            lo = mid
        else:
            hi = mid
    d = np.clip(v - hi, 0.0, cap)
    # polish the multiplier on the identified free set
    free = (v - hi > 0.0) & (v - hi < cap)
    if free.any():
        upper = v - hi >= cap
        lam = (v[free].sum() + cap[upper].sum() - budget) / free.sum()
        if lo <= lam <= hi:
            cand = np.clip(v - lam, 0.0, cap)
            if cand.sum() <= budget + 1e-12 * max(1.0, budget):
                d = cand
    return d


def project_constraints(alloc: Allocation, cons: ConstraintSet) -> Allocation:
    """Euclidean projection onto the feasible set.

    Inertia is clipped per device.  Damping is projected onto the box
    intersected with the budget half-space by bisection on the budget
    multiplier: d = clip(v - lam, 0, cap).
    """
    if len(alloc) != cons.n:
        raise ValueError("allocation and constraint set sizes differ")
    m = np.clip(alloc.inertia, cons.m_floor, cons.m_cap)
    d = _project_damping(alloc.damping, cons.d_cap, cons.d_sum)
    return Allocation(alloc.buses, m, d)


@dataclass
class OptimizerOptions:
    max_iters: int = 5000
    tol: float = 1e-6
    step0: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    l1: float = 0.0
    restarts: int = 1
    min_step: float = 1e-14

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if not 0 < self.armijo <= 0.5:
            raise ValueError("armijo coefficient must lie in (0, 0.5]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.l1 < 0:
            raise ValueError("l1 weight must be nonnegative")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")


@dataclass(eq=False)
class OptimizationResult:
    allocation: Allocation
    cost: float
    h2: float
    pg_norm: float
    iterations: int
    cost_trace: list[float]
    iterates: list[np.ndarray]
    abscissa_trace: list[float]
    active: dict
    status: str
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == "converged"


class Objective:
    """Total cost H2^2 + l1 * sum(m + d) over the stacked vector (m..., d...)."""

    def __init__(self, sys: LinearSystem, l1: float = 0.0):
        self.sys = sys
        self.l1 = l1
        self.buses = sys.device_buses
        self.mode = sys.mode

    def alloc(self, x: np.ndarray) -> Allocation:
        return Allocation.from_vector(self.buses, x)

    def h2(self, x: np.ndarray) -> float:
        return h2_norm(close_loop(self.sys, gains_to_feedback(self.alloc(x), self.mode)))

    def value(self, x: np.ndarray) -> float:
        try:
            return self.h2(x) + self.l1 * float(np.sum(x))
        except UnstableSystemError:
            return np.inf

    def value_and_grad(self, x: np.ndarray, report: bool = False):
        rep = h2_gradient(self.sys, gains_to_feedback(self.alloc(x), self.mode))
        out = rep.value + self.l1 * float(np.sum(x)), rep.physical_vector + self.l1
        return (*out, rep) if report else out

    def difference(self, rep: GradientReport, x_old: np.ndarray, x_new: np.ndarray) -> float:
        """cost(x_new) - cost(x_old), using the Gramian held by ``rep`` (taken at x_old).

        +inf when x_new is not stabilizing.
        """
        try:
            cl1 = close_loop(self.sys, gains_to_feedback(self.alloc(x_new), self.mode))
            dh = h2_difference(rep.closed_loop, rep.P, cl1)
        except UnstableSystemError:
            return np.inf
        return dh + self.l1 * float(np.sum(x_new - x_old))

    def abscissa(self, x: np.ndarray) -> float:
        return spectral_abscissa(close_loop(self.sys, gains_to_feedback(self.alloc(x), self.mode)).A)


def allocation_cost(sys: LinearSystem, alloc: Allocation, l1: float = 0.0) -> float:
    """Total cost of an allocation; +inf when the closed loop is unstable."""
    return Objective(sys, l1).value(alloc.vector())


def _proj_vec(x: np.ndarray, cons: ConstraintSet, buses) -> np.ndarray:
    return project_constraints(Allocation.from_vector(buses, x), cons).vector()


def active_report(alloc: Allocation, cons: ConstraintSet, tol: float = 1e-9) -> dict:
    m, d = alloc.inertia, alloc.damping
    return {
        "budget": bool(d.sum() >= cons.d_sum - tol),
        "devices": [
            {
                "bus": b,
                "inertia": "floor" if m[k] <= cons.m_floor + tol else
                           "cap" if m[k] >= cons.m_cap[k] - tol else "free",
                "damping": "zero" if d[k] <= tol else
                           "cap" if d[k] >= cons.d_cap[k] - tol else "free",
            }
            for k, b in enumerate(alloc.buses)
        ],
    }


def default_init(sys: LinearSystem, cons: ConstraintSet) -> Allocation:
    """Zero gains for grid-following; a stable uniform allocation for grid-forming."""
    buses = sys.device_buses
    if sys.mode == "following":
        return project_constraints(Allocation.zeros(buses), cons)
    obj = Objective(sys)
    n = len(buses)
    d_each = min(float(np.min(cons.d_cap)), cons.d_sum / max(n, 1))
    for frac in (0.5, 0.25, 0.75, 0.1, 1.0, 0.05, 0.01):
        cand = project_constraints(
            Allocation(buses, np.full(n, frac * float(np.min(cons.m_cap))),
                       np.full(n, 0.5 * d_each)), cons)
        if np.isfinite(obj.value(cand.vector())):
            return cand
    raise OptimizationError("no stable feasible uniform initialization found")


def uniform_allocation(total_inertia: float, total_damping: float, buses,
                       cons: ConstraintSet) -> Allocation:
    """Equal split of the given totals over all devices, projected onto the constraints."""
    n = len(buses)
    return project_constraints(
        Allocation(buses, np.full(n, total_inertia / n), np.full(n, total_damping / n)), cons)


def optimize(sys: LinearSystem, mode: str, cons: ConstraintSet,
             opts: OptimizerOptions | None = None, init: Allocation | None = None) -> OptimizationResult:
    """Projected gradient descent with Armijo backtracking and Barzilai-Borwein steps."""
    opts = opts or OptimizerOptions()
    if mode != sys.mode:
        raise ValueError(f"system is {sys.mode}, requested {mode}")
    if cons.n != len(sys.device_buses):
        raise ValueError("constraint set does not match the device count")
    if mode == "forming" and cons.m_floor <= 0:
        raise ValueError("grid-forming optimization requires m_floor > 0")
    t0 = time.perf_counter()
    buses = sys.device_buses
    obj = Objective(sys, opts.l1)
    if init is None:
        init = default_init(sys, cons)
    x = _proj_vec(init.vector(), cons, buses)
    if not np.isfinite(obj.value(x)):
        raise OptimizationError("initial allocation does not stabilize the closed loop")
    f, g, rep = obj.value_and_grad(x, report=True)
    trace = [f]
    iterates = [x.copy()]
    absc = [obj.abscissa(x)]
    step = opts.step0
    status = "max_iters"
    it = 0
    pg = np.linalg.norm(x - _proj_vec(x - g, cons, buses))
    while True:
        if pg <= opts.tol:
            status = "converged"
            break
        if it >= opts.max_iters:
            break
        s = step
        x_new = None
        while s >= opts.min_step:
            trial = _proj_vec(x - s * g, cons, buses)
            dx = trial - x
            if not np.any(dx):
                break
            df = obj.difference(rep, x, trial)
            if df <= opts.armijo * float(g @ dx):
                x_new, f_new = trial, f + df
                break
            s *= opts.shrink
        if x_new is None:
            status = "line_search_collapse"
            log.warning("line search collapsed at iteration %d (pg=%.3e)", it, pg)
            break
        _, g_new, rep = obj.value_and_grad(x_new, report=True)
        it += 1
        sx, sg = x_new - x, g_new - g
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        iterates.append(x.copy())
        absc.append(obj.abscissa(x))
        curv = float(sx @ sg)
        step = float(np.clip(sx @ sx / curv, 1e-10, 1e10)) if curv > 0 else opts.step0
        pg = np.linalg.norm(x - _proj_vec(x - g, cons, buses))
    alloc = Allocation.from_vector(buses, x)
    return OptimizationResult(
        allocation=alloc,
        cost=obj.value(x),
        h2=obj.h2(x),
        pg_norm=float(pg),
        iterations=it,
        cost_trace=trace,
        iterates=iterates,
        abscissa_trace=absc,
        active=active_report(alloc, cons),
        status=status,
        wall_time=time.perf_counter() - t0,
    )


def random_feasible(sys: LinearSystem, cons: ConstraintSet, rng: np.random.Generator,
                    anchor: Allocation | None = None) -> Allocation:
    """Random feasible allocation, pulled towards ``anchor`` until it is stabilizing."""
    buses = sys.device_buses
    n = len(buses)
    anchor = anchor or default_init(sys, cons)
    m = rng.uniform(cons.m_floor, cons.m_cap)
    d = rng.uniform(0.0, cons.d_cap) * min(1.0, cons.d_sum / max(cons.d_cap.sum(), 1e-300))
    x = _proj_vec(np.concatenate([m, d]), cons, buses)
    obj = Objective(sys)
    a = anchor.vector()
    for _ in range(40):
        if np.isfinite(obj.value(x)):
            return Allocation.from_vector(buses, x)
        x = _proj_vec(a + 0.5 * (x - a), cons, buses)
    return anchor if n else Allocation.zeros(buses)


@dataclass(eq=False)
class MultistartResult:
    best: OptimizationResult
    runs: list[OptimizationResult | None]
    costs: list[float]
    failures: list[str] = field(default_factory=list)

    @property
    def spread(self) -> float:
        ok = [c for c in self.costs if np.isfinite(c)]
        return float(max(ok) - min(ok)) if ok else float("nan")


def multistart(sys: LinearSystem, mode: str, cons: ConstraintSet,
               opts: OptimizerOptions | None = None, seeds: int | None = None, seed: int = 0,
               workers: int | None = None) -> MultistartResult:
    """Run ``seeds`` independent optimizations and keep the cheapest.

    ``seeds`` defaults to ``opts.restarts``.  Run 0 starts from
    :func:`default_init`; the others start from random feasible allocations
    drawn from ``numpy.random.default_rng(seed)``.
    """
    opts = opts or OptimizerOptions()
    seeds = opts.restarts if seeds is None else seeds
    if seeds < 1:
        raise ValueError("seeds must be >= 1")
    anchor = default_init(sys, cons)
    rng = np.random.default_rng(seed)
    inits = [anchor] + [random_feasible(sys, cons, rng, anchor) for _ in range(seeds - 1)]
    if workers is None:
        workers = int(os.environ.get(THREADS_ENV, "1") or 1)

    def run(init):
        try:
            return optimize(sys, mode, cons, opts, init), None
        except (OptimizationError, UnstableSystemError, np.linalg.LinAlgError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, inits))
    else:
        outcomes = [run(i) for i in inits]
    runs = [r for r, _ in outcomes]
    failures = [f"run {k}: {err}" for k, (_, err) in enumerate(outcomes) if err]
    costs = [r.cost if r is not None else np.inf for r in runs]
    ok = [k for k, r in enumerate(runs) if r is not None]
    if not ok:
        raise OptimizationError("all multistart runs failed: " + "; ".join(failures))
    best = min(ok, key=lambda k: (costs[k], k))
    return MultistartResult(runs[best], runs, costs, failures)


__all__ = [
    "ConstraintSet", "HURWITZ_MARGIN", "MultistartResult", "Objective", "OptimizationError",
    "OptimizationResult", "OptimizerOptions", "active_report", "allocation_cost",
    "default_init", "multistart", "optimize", "project_constraints", "random_feasible",
    "uniform_allocation",
]
