"""Scenario configuration files (YAML or JSON).

Quantities with a ``_mw`` suffix are given in MW-based units (MW, MW s/rad,
MW s^2/rad) and are divided by the network's base MVA at load time; the
un-suffixed keys are per-unit.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .devices import FORMING_SUSCEPTANCE, PLL_KI, PLL_KP, PLL_TAU, TAU_FOLL, Allocation, DeviceSite
from .netmodel import NetworkModel, PerformanceWeights, load_network, network_to_dict
from .optimizer import ConstraintSet, OptimizerOptions
from .simlab import ROCOF_FILTER, FaultSpec, default_magnitudes


class ConfigError(ValueError):
    """Invalid scenario configuration; ``path`` names the offending field."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


TOP_KEYS = {"name", "network", "mode", "devices", "weights", "constraints", "optimizer", "faults",
            "simulation", "study", "allocation", "seed", "output"}
SECTION_KEYS = {
    "devices": {"sites", "pll", "tau_foll", "susceptance"},
    "site": {"bus", "p_max", "p_max_mw", "tau", "kp", "ki", "tau_foll", "susceptance"},
    "pll": {"tau", "kp", "ki"},
    "weights": {"omega", "rocof", "gen", "vi"},
    "constraints": {"d_sum", "d_sum_mw", "d_cap", "d_cap_mw", "m_cap", "m_cap_mw", "m_floor",
                    "omega_max", "rocof_max"},
    "optimizer": {"max_iters", "tol", "step0", "shrink", "armijo", "l1", "seeds"},
    "fault": {"bus", "magnitude", "magnitude_mw", "shape", "start"},
    "simulation": {"dt", "horizon", "tau", "t_filter", "model"},
    "study": {"magnitudes", "range", "count", "ports", "horizon", "dt"},
}


def _keys(doc: Any, allowed: set[str], path: str) -> dict:
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError("expected a mapping", path)
    extra = sorted(set(doc) - allowed)
    if extra:
        raise ConfigError(f"unknown keys {extra}", path)
    return doc


def _float(v: Any, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError("expected a number", path)
    return float(v)


def _pick(doc: dict, key: str, path: str, base: float, required: bool = True,
          default: float | None = None) -> float | None:
    """Value of ``key`` (per unit) or ``key_mw`` (divided by base); not both."""
    pu, mw = doc.get(key), doc.get(f"{key}_mw")
    if pu is not None and mw is not None:
        raise ConfigError(f"give either {key} or {key}_mw, not both", path)
    if pu is not None:
        return _float(pu, f"{path}.{key}")
    if mw is not None:
        return _float(mw, f"{path}.{key}_mw") / base
    if required:
        raise ConfigError(f"missing {key} (or {key}_mw)", path)
    return default


@dataclass
class SimulationSettings:
    dt: float = 1e-3
    horizon: float = 20.0
    tau: float | None = None
    t_filter: float = ROCOF_FILTER
    model: str = "linear"


@dataclass
class StudySettings:
    magnitudes: list[float] = field(default_factory=default_magnitudes)
    ports: list[str] | None = None
    horizon: float = 10.0
    dt: float = 2e-3


@dataclass
class ScenarioConfig:
    name: str
    source: Path | None
    raw: dict
    network: NetworkModel
    network_path: Path | None
    mode: str
    sites: list[DeviceSite]
    weights: PerformanceWeights
    constraints: ConstraintSet
    optimizer: OptimizerOptions
    seeds: int
    faults: list[FaultSpec]
    simulation: SimulationSettings
    study: StudySettings
    allocation: Allocation | None
    seed: int
    output: Path | None
    overrides: list[str] = field(default_factory=list)

    def digest(self) -> str:
        """SHA-256 of the effective configuration (after overrides) and the network."""
        doc = {"config": self.raw, "network": network_to_dict(self.network)}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``key.sub=value`` assignments; values are parsed as YAML scalars/lists."""
    doc = copy.deepcopy(doc)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", "--set")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if not all(parts):
            raise ConfigError(f"bad override key {key!r}", "--set")
        try:
            parsed = yaml.safe_load(value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value of {key}: {exc}", "--set") from exc
        node = doc
        for i, p in enumerate(parts[:-1]):
            if isinstance(node, list):
                try:
                    node = node[int(p)]
                except (ValueError, IndexError) as exc:
                    raise ConfigError(f"bad list index {p!r}", f"--set {key}") from exc
                continue
            node = node.setdefault(p, {})
            if not isinstance(node, (dict, list)):
                raise ConfigError(f"{'.'.join(parts[:i + 1])} is not a section", f"--set {key}")
        last = parts[-1]
        if isinstance(node, list):
            try:
                node[int(last)] = parsed
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"bad list index {last!r}", f"--set {key}") from exc
        else:
            node[last] = parsed
    return doc


def read_document(path: str | Path) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}", "config") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"unparseable document: {exc}", "config") from exc
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping", "config")
    return doc


def load_config(path: str | Path, overrides: list[str] | None = None) -> ScenarioConfig:
    overrides = list(overrides or [])
    doc = apply_overrides(read_document(path), overrides)
    return parse_config(doc, Path(path).resolve().parent, Path(path), overrides)


def _resolve(base: Path, value: Any, key: str) -> Path:
    if not isinstance(value, str):
        raise ConfigError("expected a file path", key)
    p = Path(value)
    p = p if p.is_absolute() else base / p
    if not p.exists():
        raise ConfigError(f"file not found: {value}", key)
    return p


def _sites(doc: dict, base_mva: float) -> list[DeviceSite]:
    dev = _keys(doc.get("devices"), SECTION_KEYS["devices"], "devices")
    pll = _keys(dev.get("pll"), SECTION_KEYS["pll"], "devices.pll")
    defaults = {
        "tau": _float(pll.get("tau", PLL_TAU), "devices.pll.tau"),
        "kp": _float(pll.get("kp", PLL_KP), "devices.pll.kp"),
        "ki": _float(pll.get("ki", PLL_KI), "devices.pll.ki"),
        "tau_foll": _float(dev.get("tau_foll", TAU_FOLL), "devices.tau_foll"),
        "susceptance": _float(dev.get("susceptance", FORMING_SUSCEPTANCE), "devices.susceptance"),
    }
    rows = dev.get("sites")
    if not isinstance(rows, list) or not rows:
        raise ConfigError("at least one device site is required", "devices.sites")
    out = []
    for i, row in enumerate(rows):
        path = f"devices.sites[{i}]"
        if not isinstance(row, dict):
            row = {"bus": row}
        row = _keys(row, SECTION_KEYS["site"], path)
        if "bus" not in row:
            raise ConfigError("missing bus", path)
        p_max = _pick(row, "p_max", path, base_mva, required=False)
        kw = {k: _float(row.get(k, v), f"{path}.{k}") for k, v in defaults.items()}
        out.append(DeviceSite(str(row["bus"]), p_max, **kw))
    return out


def _constraints(doc: dict, sites: list[DeviceSite], mode: str, base_mva: float) -> ConstraintSet:
    path = "constraints"
    c = _keys(doc.get("constraints"), SECTION_KEYS["constraints"], path)
    n = len(sites)
    d_sum = _pick(c, "d_sum", path, base_mva)
    d_cap = _pick(c, "d_cap", path, base_mva, required=False)
    m_cap = _pick(c, "m_cap", path, base_mva, required=False)
    if d_cap is None or m_cap is None:
        # derive the missing caps from converter ratings and a-priori excursion bounds
        missing = [s.bus for s in sites if s.p_max is None]
        if missing:
            raise ConfigError(f"caps need p_max for sites {missing} or explicit d_cap/m_cap", path)
        p = [s.p_max for s in sites]
        if d_cap is None:
            if "omega_max" not in c:
                raise ConfigError("omega_max is required to derive d_cap from ratings", path)
            om = _float(c["omega_max"], f"{path}.omega_max")
            if om <= 0:
                raise ConfigError("must be positive", f"{path}.omega_max")
            d_caps = [pi / om for pi in p]
        if m_cap is None:
            if "rocof_max" not in c:
                raise ConfigError("rocof_max is required to derive m_cap from ratings", path)
            rf = _float(c["rocof_max"], f"{path}.rocof_max")
            if rf <= 0:
                raise ConfigError("must be positive", f"{path}.rocof_max")
            m_caps = [pi / rf for pi in p]
    if d_cap is not None:
        d_caps = [d_cap] * n
    if m_cap is not None:
        m_caps = [m_cap] * n
    floor_default = 1e-3 if mode == "forming" else 0.0
    m_floor = _float(c.get("m_floor", floor_default), f"{path}.m_floor")
    if mode == "forming" and m_floor <= 0:
        raise ConfigError("m_floor must be positive for grid-forming devices", f"{path}.m_floor")
    try:
        return ConstraintSet(d_sum, d_caps, m_caps, m_floor)
    except ValueError as exc:
        raise ConfigError(str(exc), path) from exc


def _faults(doc: dict, model: NetworkModel) -> list[FaultSpec]:
    rows = doc.get("faults") or []
    if not isinstance(rows, list):
        raise ConfigError("expected a list", "faults")
    out = []
    for i, row in enumerate(rows):
        path = f"faults[{i}]"
        row = _keys(row, SECTION_KEYS["fault"], path)
        if "bus" not in row:
            raise ConfigError("missing bus", path)
        mag = _pick(row, "magnitude", path, model.base_mva)
        try:
            f = FaultSpec(str(row["bus"]), mag, str(row.get("shape", "step")),
                          _float(row.get("start", 0.0), f"{path}.start"))
        except ValueError as exc:
            raise ConfigError(str(exc), path) from exc
        if f.bus not in {p.bus for p in model.disturbances}:
            raise ConfigError(f"bus {f.bus} is not a disturbance port", f"{path}.bus")
        out.append(f)
    return out


def parse_config(doc: dict, base_dir: Path, source: Path | None = None,
                 overrides: list[str] | None = None) -> ScenarioConfig:
    doc = _keys(doc, TOP_KEYS, "config")
    if "network" not in doc:
        raise ConfigError("missing network", "network")
    net_path = _resolve(base_dir, doc["network"], "network")
    try:
        model = load_network(net_path)
    except ValueError as exc:
        sub = getattr(exc, "path", "")
        raise ConfigError(str(exc), f"network{'.' + sub if sub else ''}") from exc
    mode = doc.get("mode", "forming")
    if mode not in ("following", "forming"):
        raise ConfigError("mode must be 'following' or 'forming'", "mode")
    sites = _sites(doc, model.base_mva)
    for i, s in enumerate(sites):
        if s.bus not in model.index or model.bus_type(s.bus) != "vi-candidate":
            raise ConfigError(f"bus {s.bus} is not a vi-candidate bus", f"devices.sites[{i}].bus")

    w = _keys(doc.get("weights"), SECTION_KEYS["weights"], "weights")
    try:
        weights = PerformanceWeights(**{k: _float(v, f"weights.{k}") for k, v in w.items()})
    except ValueError as exc:
        raise ConfigError(str(exc), "weights") from exc

    cons = _constraints(doc, sites, mode, model.base_mva)

    o = dict(_keys(doc.get("optimizer"), SECTION_KEYS["optimizer"], "optimizer"))
    seeds = o.pop("seeds", 1)
    if isinstance(seeds, bool) or not isinstance(seeds, int) or seeds < 1:
        raise ConfigError("seeds must be a positive integer", "optimizer.seeds")
    try:
        if "max_iters" in o and (isinstance(o["max_iters"], bool) or not isinstance(o["max_iters"], int)):
            raise ValueError("max_iters must be an integer")
        opts = OptimizerOptions(**{k: (v if k == "max_iters" else _float(v, f"optimizer.{k}"))
                                   for k, v in o.items()})
    except ValueError as exc:
        raise ConfigError(str(exc), "optimizer") from exc

    faults = _faults(doc, model)

    s = _keys(doc.get("simulation"), SECTION_KEYS["simulation"], "simulation")
    sim = SimulationSettings(
        dt=_float(s.get("dt", 1e-3), "simulation.dt"),
        horizon=_float(s.get("horizon", 20.0), "simulation.horizon"),
        tau=None if s.get("tau") is None else _float(s["tau"], "simulation.tau"),
        t_filter=_float(s.get("t_filter", ROCOF_FILTER), "simulation.t_filter"),
        model=str(s.get("model", "linear")),
    )
    if sim.model not in ("linear", "nonlinear"):
        raise ConfigError("model must be 'linear' or 'nonlinear'", "simulation.model")
    if sim.dt <= 0 or sim.horizon < 10 * sim.dt or sim.t_filter <= 0:
        raise ConfigError("need dt > 0, horizon >= 10 dt and t_filter > 0", "simulation")
    if sim.tau is not None and not 0 < sim.tau <= sim.horizon:
        raise ConfigError("tau must lie in (0, horizon]", "simulation.tau")

    st = _keys(doc.get("study"), SECTION_KEYS["study"], "study")
    if "magnitudes" in st:
        mags = st["magnitudes"]
        if not isinstance(mags, list) or not mags:
            raise ConfigError("expected a nonempty list", "study.magnitudes")
        mags = [_float(m, f"study.magnitudes[{i}]") for i, m in enumerate(mags)]
    else:
        mags = default_magnitudes(_float(st.get("range", 0.25), "study.range"),
                                  int(st.get("count", 5)))
    if any(m == 0 for m in mags):
        raise ConfigError("magnitudes must be nonzero", "study.magnitudes")
    study = StudySettings(
        magnitudes=mags,
        ports=None if st.get("ports") is None else [str(p) for p in st["ports"]],
        horizon=_float(st.get("horizon", 10.0), "study.horizon"),
        dt=_float(st.get("dt", 2e-3), "study.dt"),
    )

    alloc = None
    if doc.get("allocation") is not None:
        a = doc["allocation"]
        if isinstance(a, str):
            a = read_document(_resolve(base_dir, a, "allocation"))
        try:
            alloc = Allocation.from_dict(a)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed allocation: {exc}", "allocation") from exc

    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer", "seed")
    out = doc.get("output")
    output = None if out is None else (Path(out) if Path(out).is_absolute() else base_dir / out)

    return ScenarioConfig(
        name=str(doc.get("name", source.stem if source else "scenario")),
        source=source, raw=doc, network=model, network_path=net_path, mode=mode, sites=sites,
        weights=weights, constraints=cons, optimizer=opts, seeds=seeds, faults=faults,
        simulation=sim, study=study, allocation=alloc, seed=seed, output=output,
        overrides=list(overrides or []),
    )
