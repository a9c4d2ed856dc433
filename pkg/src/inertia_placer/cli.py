"""Command-line entry point: ``inertia-placer check|optimize|simulate|study|compare``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, ScenarioConfig, load_config, read_document
from .devices import Allocation, DeviceError, DeviceSet, close_loop, gains_to_feedback
from .h2core import UnstableSystemError, h2_norm, spectral_abscissa
from .netmodel import NetworkError, NonlinearSystem, assemble_open_loop, equilibrium
from .optimizer import OptimizationError, allocation_cost, multistart, uniform_allocation
from .simlab import (SimulationDivergence, compare_scenarios, linearization_error_study, metrics,
                     simulate)

COMMANDS = ("check", "optimize", "simulate", "study", "compare")
EXIT_CONFIG, EXIT_NUMERIC, EXIT_UNSTABLE = 2, 3, 4
DIGITS = 12

log = logging.getLogger("inertia_placer")


class UsageError(Exception):
    """Precondition failure that maps to the configuration exit code."""


def _clean(obj: Any) -> Any:
    """Round floats to 12 significant digits; NaN/inf become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(f"{x:.{DIGITS}g}") if math.isfinite(x) else None
    return obj


class Outputs:
    def __init__(self, root: Path):
        self.root = root
        self.files: list[str] = []
        root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.root / name

    def json(self, name: str, doc: Any) -> None:
        self.path(name).write_text(json.dumps(_clean(doc), indent=2) + "\n", encoding="utf-8")

    def text(self, name: str, text: str) -> None:
        self.path(name).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


def _devices(cfg: ScenarioConfig, alloc: Allocation | None = None) -> DeviceSet:
    return DeviceSet.from_sites(cfg.sites, cfg.mode, alloc)


def _allocation(cfg: ScenarioConfig, out: Outputs) -> Allocation:
    if cfg.allocation is not None:
        alloc = cfg.allocation
    else:
        prior = out.root / "allocation.json"
        if not prior.exists():
            raise UsageError("allocation required: run optimize first or set 'allocation' in the config")
        doc = read_document(prior)
        if doc.get("mode", cfg.mode) != cfg.mode:
            raise UsageError(f"allocation in {prior} is for mode {doc.get('mode')}, config is {cfg.mode}")
        alloc = Allocation.from_dict(doc)
    if set(alloc.buses) != {s.bus for s in cfg.sites}:
        raise UsageError("allocation buses do not match the configured device sites")
    order = [s.bus for s in cfg.sites]
    idx = [alloc.buses.index(b) for b in order]
    return Allocation(tuple(order), alloc.inertia[idx], alloc.damping[idx])


def cmd_check(cfg: ScenarioConfig, out: Outputs) -> dict:
    model = cfg.network
    devices = _devices(cfg)
    sys_ = assemble_open_loop(model, devices, cfg.weights, cfg.mode)
    eig = np.linalg.eigvals(sys_.A)
    summary = {
        "scenario": cfg.name,
        "buses": len(model.buses),
        "lines": len(model.lines),
        "machines": len(model.machines),
        "disturbance_ports": list(sys_.port_buses),
        "mode": cfg.mode,
        "devices": list(devices.buses),
        "states": sys_.n_states,
        "inputs": sys_.B.shape[1],
        "outputs": sys_.C.shape[0],
        "performance_rows": sys_.signals.shape[0],
        "state_labels": list(sys_.state_labels),
        "open_loop_max_real": float(np.max(eig.real)),
        "open_loop_min_real": float(np.min(eig.real)),
        "open_loop_stable": sys_.open_loop_stable,
        "constraints": cfg.constraints.to_dict(),
    }
    if cfg.allocation is not None:
        cl = close_loop(sys_, gains_to_feedback(_allocation(cfg, out), cfg.mode))
        summary["closed_loop_abscissa"] = spectral_abscissa(cl.A)
    out.json("check.json", summary)
    print(f"scenario {cfg.name}: {summary['buses']} buses, {summary['lines']} lines, "
          f"{summary['machines']} machines, ports {', '.join(summary['disturbance_ports'])}")
    print(f"mode {cfg.mode}, {len(devices)} device(s) at bus {', '.join(devices.buses)}")
    print(f"{summary['states']} states, {summary['inputs']} inputs, {summary['outputs']} outputs")
    print(f"open-loop eigenvalue real parts in [{summary['open_loop_min_real']:.4g}, "
          f"{summary['open_loop_max_real']:.4g}]")
    return summary


def cmd_optimize(cfg: ScenarioConfig, out: Outputs) -> dict:
    sys_ = assemble_open_loop(cfg.network, _devices(cfg), cfg.weights, cfg.mode)
    t0 = time.perf_counter()
    ms = multistart(sys_, cfg.mode, cfg.constraints, cfg.optimizer, seeds=cfg.seeds, seed=cfg.seed)
    best = ms.best
    alloc = best.allocation
    uni = uniform_allocation(float(alloc.inertia.sum()), float(alloc.damping.sum()), alloc.buses,
                             cfg.constraints)
    uni_cost = allocation_cost(sys_, uni, cfg.optimizer.l1)
    out.json("allocation.json", {"mode": cfg.mode, **alloc.to_dict()})
    with open(out.path("cost_trace.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "cost"])
        for k, c in enumerate(best.cost_trace):
            w.writerow([k, f"{c:.{DIGITS}g}"])
    report = {
        "mode": cfg.mode,
        "status": best.status,
        "cost": best.cost,
        "h2": best.h2,
        "projected_gradient_norm": best.pg_norm,
        "iterations": best.iterations,
        "active_constraints": best.active,
        "uniform_equal_totals_cost": uni_cost,
        "improvement_over_uniform": uni_cost - best.cost,
        "multistart": {"seeds": cfg.seeds, "seed": cfg.seed, "costs": ms.costs,
                       "spread": ms.spread, "failures": ms.failures},
    }
    out.json("optimization.json", report)
    print(f"{cfg.mode} optimum: cost {best.cost:.4g}, H2^2 {best.h2:.4g}, "
          f"|pg| {best.pg_norm:.2e}, {best.iterations} iterations ({best.status})")
    for b, m, d in zip(alloc.buses, alloc.inertia, alloc.damping):
        print(f"  bus {b}: m = {m:.4g}, d = {d:.4g}")
    print(f"uniform allocation with equal totals: {uni_cost:.4g}")
    print(f"wall time {time.perf_counter() - t0:.2f} s")
    return report


def cmd_simulate(cfg: ScenarioConfig, out: Outputs) -> dict:
    alloc = _allocation(cfg, out)
    if not cfg.faults:
        raise UsageError("at least one fault is required to simulate")
    op = equilibrium(cfg.network, "ac")
    devices = _devices(cfg, alloc)
    sys_ = assemble_open_loop(cfg.network, devices, cfg.weights, cfg.mode, op)
    cl = close_loop(sys_, gains_to_feedback(alloc, cfg.mode))
    h2 = h2_norm(cl)
    s = cfg.simulation
    results = []
    for k, fault in enumerate(cfg.faults):
        if s.model == "linear":
            traj = simulate(cl, fault, s.horizon, s.dt, s.t_filter)
        else:
            traj = simulate(NonlinearSystem(cfg.network, devices, op), fault, s.horizon, s.dt,
                            s.t_filter, impulse_map=cl.G)
        rep = metrics(traj, cfg.weights, s.tau, h2)
        traj.write_csv(out.path(f"trajectory_{k}.csv"), DIGITS)
        traj.write_long_csv(out.path(f"trajectory_{k}_long.csv"), DIGITS)
        doc = {"fault": fault.to_dict(), "model": s.model, **rep.to_dict()}
        out.json(f"metrics_{k}.json", doc)
        results.append(doc)
        print(f"fault {k} at bus {fault.bus} ({fault.magnitude:+.4g} pu {fault.shape}): "
              f"max |omega| {rep.max_nadir:.4g} rad/s, max RoCoF {rep.max_rocof_all:.4g} rad/s^2, "
              f"J {rep.cost:.4g}")
    return {"h2": h2, "faults": results}


def cmd_study(cfg: ScenarioConfig, out: Outputs) -> dict:
    alloc = _allocation(cfg, out)
    st = cfg.study
    res = linearization_error_study(cfg.network, _devices(cfg), cfg.mode, alloc, st.magnitudes,
                                    st.ports, st.horizon, st.dt)
    res.write_histograms(out.path("study_histograms.csv"), DIGITS)
    res.write_samples(out.path("study_samples.csv"), DIGITS)
    within = res.within(10.0)
    doc = {"samples": len(res.samples), "diverged": res.diverged, "excluded": res.excluded,
           "within_10_percent": within, "magnitudes": st.magnitudes,
           "ports": sorted({s.port for s in res.samples})}
    out.json("study.json", doc)
    print(f"{len(res.samples)} samples, {res.diverged} diverged")
    for m, f in within.items():
        print(f"  {m}: {100 * f:.4g}% within +-10%")
    return doc


def cmd_compare(cfg: ScenarioConfig, out: Outputs) -> dict:
    if not cfg.faults:
        raise UsageError("at least one fault is required to compare scenarios")
    s = cfg.simulation
    comp = compare_scenarios(cfg.network, cfg.sites, cfg.constraints, cfg.weights, cfg.faults[0],
                             cfg.optimizer, s.horizon, s.dt, s.tau, cfg.seeds, cfg.seed)
    doc = comp.to_dict()
    out.json("comparison.json", doc)
    table = comp.table(4)
    out.text("comparison.txt", table)
    print(table)
    return doc


HANDLERS = {"check": cmd_check, "optimize": cmd_optimize, "simulate": cmd_simulate,
            "study": cmd_study, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inertia-placer",
                                description="Tune and place virtual inertia by H2 optimization.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="scenario file (YAML or JSON)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set optimizer.l1=0.1 (repeatable)")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _error(out_dir: Path | None, code: int, exc: BaseException, command: str) -> int:
    record = {"command": command, "exit_code": code, "error": type(exc).__name__,
              "message": str(exc)}
    path = getattr(exc, "path", None)
    if path:
        record["field"] = path
    print(json.dumps(record), file=sys.stderr)
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "error.json").write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
        except OSError:
            pass
    return code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    out_dir = Path(args.out) if args.out else None
    try:
        cfg = load_config(args.config, overrides)
        out_dir = out_dir or cfg.output or Path("out")
        out = Outputs(out_dir)
        stale = out_dir / "error.json"
        if stale.exists():
            stale.unlink()
        HANDLERS[args.command](cfg, out)
        out.json(f"manifest_{args.command}.json", {
            "tool": "inertia-placer",
            "version": __version__,
            "command": args.command,
            "config": cfg.source.name if cfg.source else None,
            "config_sha256": cfg.digest(),
            "seed": cfg.seed,
            "overrides": overrides,
            "outputs": sorted(out.files + [f"manifest_{args.command}.json"]),
        })
        return 0
    except (ConfigError, NetworkError, DeviceError, UsageError) as exc:
        return _error(out_dir, EXIT_CONFIG, exc, args.command)
    except (UnstableSystemError, SimulationDivergence) as exc:
        return _error(out_dir, EXIT_UNSTABLE, exc, args.command)
    except (OptimizationError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        return _error(out_dir, EXIT_NUMERIC, exc, args.command)


if __name__ == "__main__":
    sys.exit(main())
