"""Side-by-side metrics for no VI, optimal grid-following and optimal grid-forming VI."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence

from ..devices import Allocation, DeviceSet, DeviceSite, close_loop, gains_to_feedback
from ..h2core import h2_norm
from ..netmodel import NetworkModel, PerformanceWeights, assemble_open_loop, equilibrium
from ..optimizer import ConstraintSet, OptimizerOptions, multistart
from .metrics import MetricsReport, metrics
from .simulate import FaultSpec, simulate

COLUMNS = ("no-VI", "following-optimal", "forming-optimal")
FORMING_FLOOR = 1e-3

# (key, label, unit) in report order
ROW_SCHEMA = (
    ("h2", "H2 norm squared", "pu"),
    ("sum_m", "sum of virtual inertia", "s^2/rad pu"),
    ("sum_d", "sum of virtual damping", "s/rad pu"),
    ("nadir", "frequency nadir max |omega|", "mHz"),
    ("max_rocof", "max filtered RoCoF", "Hz/s"),
    ("peak_sum_p_gen", "peak sum of P_G", "MW"),
    ("peak_sum_p_vi", "peak sum of P_VI", "MW"),
    ("energy_omega", "frequency energy", "pu"),
    ("energy_rocof", "RoCoF energy", "pu"),
    ("energy_gen", "generator power energy", "pu"),
    ("energy_vi", "VI power energy", "pu"),
    ("cost", "weighted cost J", "pu"),
)


@dataclass
class ScenarioColumn:
    name: str
    report: MetricsReport
    h2: float
    allocation: Allocation | None = None
    status: str = "ok"

    def values(self, base_mva: float) -> dict[str, float | None]:
        r = self.report
        has_vi = self.allocation is not None
        two_pi = 2 * math.pi
        return {
            "h2": self.h2,
            "sum_m": float(self.allocation.inertia.sum()) if has_vi else None,
            "sum_d": float(self.allocation.damping.sum()) if has_vi else None,
            "nadir": 1e3 * r.max_nadir / two_pi,
            "max_rocof": r.max_rocof_all / two_pi,
            "peak_sum_p_gen": r.peak_sum_p_gen * base_mva,
            "peak_sum_p_vi": r.peak_sum_p_vi * base_mva if has_vi else None,
            "energy_omega": r.energy["omega"],
            "energy_rocof": r.energy["rocof"],
            "energy_gen": r.energy["gen"],
            "energy_vi": r.energy["vi"] if has_vi else None,
            "cost": r.cost,
        }


@dataclass
class Comparison:
    columns: list[ScenarioColumn]
    fault: FaultSpec
    base_mva: float
    frequency_hz: float

    def column(self, name: str) -> ScenarioColumn:
        return next(c for c in self.columns if c.name == name)

    def to_dict(self) -> dict:
        return {
            "fault": self.fault.to_dict(),
            "rows": [{"key": k, "label": lab, "unit": unit} for k, lab, unit in ROW_SCHEMA],
            "columns": [
                {"name": c.name, "status": c.status,
                 "values": c.values(self.base_mva),
                 "allocation": c.allocation.to_dict() if c.allocation is not None else None}
                for c in self.columns
            ],
        }

    def table(self, digits: int = 4) -> str:
        """Aligned human-readable table; blank cells mark quantities without VI."""
        vals = [c.values(self.base_mva) for c in self.columns]
        head = ["metric", "unit"] + [c.name for c in self.columns]
        rows = [head]
        for key, label, unit in ROW_SCHEMA:
            cells = ["" if v[key] is None else f"{v[key]:.{digits}g}" for v in vals]
            rows.append([label, unit] + cells)
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = []
        for n, r in enumerate(rows):
            lines.append("  ".join(c.ljust(w) if i < 2 else c.rjust(w)
                                   for i, (c, w) in enumerate(zip(r, widths))).rstrip())
            if n == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)


def compare_scenarios(model: NetworkModel, sites: Sequence[DeviceSite], cons: ConstraintSet,
                      weights: PerformanceWeights, fault: FaultSpec,
                      opts: OptimizerOptions | None = None, horizon: float = 20.0,
                      dt: float = 1e-3, tau: float | None = None, seeds: int = 1,
                      seed: int = 0) -> Comparison:
    """Optimize both device kinds and simulate the fault for each configuration.

    The following-mode run uses ``cons`` with a zero inertia floor; the
    forming-mode run raises the floor to at least 1e-3.
    """
    op = equilibrium(model, "ac")
    columns = []

    base = assemble_open_loop(model, DeviceSet("following", ()), weights, "following", op)
    cl0 = close_loop(base, gains_to_feedback(Allocation.zeros(()), "following"))
    h0 = h2_norm(cl0)
    rep0 = metrics(simulate(cl0, fault, horizon, dt), weights, tau, h0)
    columns.append(ScenarioColumn("no-VI", rep0, h0))

    for mode, name in (("following", "following-optimal"), ("forming", "forming-optimal")):
        floor = 0.0 if mode == "following" else max(cons.m_floor, FORMING_FLOOR)
        c = dataclasses.replace(cons, m_floor=floor)
        devices = DeviceSet.from_sites(sites, mode)
        sys = assemble_open_loop(model, devices, weights, mode, op)
        best = multistart(sys, mode, c, opts, seeds=seeds, seed=seed).best
        cl = close_loop(sys, gains_to_feedback(best.allocation, mode))
        rep = metrics(simulate(cl, fault, horizon, dt), weights, tau, best.h2)
        columns.append(ScenarioColumn(name, rep, best.h2, best.allocation, best.status))
    return Comparison(columns, fault, model.base_mva, model.frequency_hz)


__all__ = ["COLUMNS", "Comparison", "ROW_SCHEMA", "ScenarioColumn", "compare_scenarios"]
