import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import build
from inertia_placer import fixtures as fx
from inertia_placer.devices import Allocation, DeviceSet, DeviceSite
from inertia_placer.h2core import spectral_abscissa
from inertia_placer.netmodel import PerformanceWeights, assemble_open_loop, network_from_dict
from inertia_placer.optimizer import (ConstraintSet, OptimizationError, OptimizerOptions,
                                      allocation_cost, multistart, optimize, project_constraints)

import oracles

FLOOR = 1e-3


def cons_for(n, mode, d_cap=2.0, m_cap=1.0, d_sum=None):
    return ConstraintSet.uniform(n, 1.5 * n if d_sum is None else d_sum, d_cap, m_cap,
                                 FLOOR if mode == "forming" else 0.0)


def test_constraint_invariants():
    with pytest.raises(ValueError, match="infeasible"):
        ConstraintSet.uniform(2, 1.0, 1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        ConstraintSet.uniform(2, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ConstraintSet.uniform(2, 1.0, -1.0, 1.0)


def test_caps_from_ratings():
    c = ConstraintSet.from_ratings([0.2, 0.4], omega_max=0.5, rocof_max=2.0, d_sum=1.0)
    np.testing.assert_allclose(c.d_cap, [0.4, 0.8])
    np.testing.assert_allclose(c.m_cap, [0.1, 0.2])


@pytest.mark.parametrize("kw", [{"shrink": 1.0}, {"shrink": 0.0}, {"armijo": 0.0}, {"armijo": 0.6},
                                {"tol": 0.0}, {"l1": -1.0}, {"restarts": 0}])
def test_options_invariants(kw):
    with pytest.raises(ValueError):
        OptimizerOptions(**kw)


def test_projection_uniform_shift():
    c = ConstraintSet(4.0, [10.0, 10.0], [1.0, 1.0])
    p = project_constraints(Allocation(("a", "b"), [0.5, 0.5], [3.0, 2.0]), c)
    np.testing.assert_allclose(p.damping, [2.5, 1.5], atol=1e-15)


def test_projection_interior_identity():
    c = ConstraintSet(4.0, [10.0, 10.0], [1.0, 1.0])
    a = Allocation(("a", "b"), [0.2, 0.7], [1.0, 0.5])
    p = project_constraints(a, c)
    np.testing.assert_array_equal(p.vector(), a.vector())


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_projection_matches_bruteforce(seed, n):
    rng = np.random.default_rng(seed)
    cap = rng.uniform(0.1, 3.0, n)
    m_cap = rng.uniform(0.1, 3.0, n)
    budget = rng.uniform(0.05, 1.2) * cap.sum()
    c = ConstraintSet(budget, cap, m_cap, 0.0)
    v = rng.normal(0.5, 2.0, n)
    mv = rng.normal(0.5, 2.0, n)
    p = project_constraints(Allocation(tuple(map(str, range(n))), mv, v), c)
    np.testing.assert_allclose(p.damping, oracles.project_box_budget_bruteforce(v, cap, budget),
                               atol=1e-8)
    np.testing.assert_allclose(p.inertia, np.clip(mv, 0.0, m_cap), atol=0)
    assert c.is_feasible(p)
    # idempotent
    np.testing.assert_allclose(project_constraints(p, c).vector(), p.vector(), atol=1e-12)


def run_checks(res, sys, cons):
    trace = np.array(res.cost_trace)
    assert np.all(np.diff(trace) <= 0)
    for x in res.iterates:
        a = Allocation.from_vector(sys.device_buses, x)
        assert cons.is_feasible(a, tol=1e-10)
    assert max(res.abscissa_trace) < 0


@pytest.mark.parametrize("name, buses", [("triangle", ["3"]), ("six_bus", ["4", "5"])])
@pytest.mark.parametrize("mode", ["following", "forming"])
def test_optimum_matches_reference(derived, name, buses, mode):
    _, sys = build(name, mode, buses)
    cons = cons_for(len(buses), mode)
    res = optimize(sys, mode, cons)
    run_checks(res, sys, cons)
    assert res.converged and res.pg_norm <= 1e-6
    ref = derived[f"{name}_opt_{mode}"]
    assert res.cost <= ref["cost"] * (1 + 1e-9)
    assert res.cost == pytest.approx(ref["cost"], rel=1e-7)


def coupled_pair():
    model = network_from_dict(fx.two_bus((0.0, 0.0), 50.0))
    devices = DeviceSet.from_sites([DeviceSite("2", p_max=1.0, susceptance=50.0)], "forming")
    return assemble_open_loop(model, devices, PerformanceWeights(1, 0, 0, 0), "forming")


def test_frequency_only_damping_hits_bound():
    """Damping goes to its cap; confirmed by a 2-D grid search of the cost surface."""
    sys = coupled_pair()
    cons = ConstraintSet.uniform(1, 10.0, 5.0, 2.0, FLOOR)
    res = optimize(sys, "forming", cons)
    assert res.allocation.damping[0] == pytest.approx(5.0, abs=1e-12)
    ms = np.linspace(FLOOR, 2.0, 41)
    ds = np.linspace(0.0, 5.0, 41)
    grid = np.array([[allocation_cost(sys, Allocation(("2",), [m], [d])) for d in ds] for m in ms])
    i, j = np.unravel_index(np.argmin(grid), grid.shape)
    assert ds[j] == 5.0
    assert res.cost <= grid.min() + 1e-12


def test_large_l1_sparsifies():
    _, sys = build("six_bus", "following", ["4", "5"])
    cons = cons_for(2, "following")
    dense = optimize(sys, "following", cons)
    sparse = optimize(sys, "following", cons, OptimizerOptions(l1=2.0))
    used = lambda a: int(np.sum((a.inertia > 1e-9) | (a.damping > 1e-9)))
    assert used(dense.allocation) == 2
    assert used(sparse.allocation) < used(dense.allocation)


def test_large_l1_triangle_floor():
    _, sys = build("triangle", "following", ["3"])
    res = optimize(sys, "following", cons_for(1, "following"), OptimizerOptions(l1=50.0))
    assert res.allocation.inertia[0] == 0.0 and res.allocation.damping[0] == 0.0
    # a forming device cannot switch off: inertia drops to its floor, some damping remains
    _, sys = build("triangle", "forming", ["3"])
    res = optimize(sys, "forming", cons_for(1, "forming"), OptimizerOptions(l1=50.0))
    assert res.allocation.inertia[0] == FLOOR
    assert 0.0 < res.allocation.damping[0] < 0.1


@pytest.mark.parametrize("mode", ["following", "forming"])
def test_restart_at_optimum(mode):
    _, sys = build("six_bus", mode, ["4", "5"])
    cons = cons_for(2, mode)
    first = optimize(sys, mode, cons)
    again = optimize(sys, mode, cons, init=first.allocation)
    assert again.iterations <= 2
    assert again.cost == pytest.approx(first.cost, abs=1e-8)


@pytest.mark.parametrize("mode", ["following", "forming"])
def test_coordinate_probe_audit(mode):
    _, sys = build("six_bus", mode, ["4", "5"])
    cons = cons_for(2, mode)
    res = optimize(sys, mode, cons)
    x = res.allocation.vector()
    f0 = allocation_cost(sys, res.allocation)
    for i, s in itertools.product(range(x.size), (1e-4, -1e-4)):
        y = x.copy()
        y[i] += s
        a = Allocation.from_vector(sys.device_buses, y)
        if not cons.is_feasible(a):
            continue
        assert f0 - allocation_cost(sys, a) <= 1e-6


def test_uniform_not_better():
    from inertia_placer.optimizer import uniform_allocation
    for name, buses in (("triangle", ["3"]), ("six_bus", ["4", "5"])):
        for mode in ("following", "forming"):
            _, sys = build(name, mode, buses)
            cons = cons_for(len(buses), mode)
            res = optimize(sys, mode, cons)
            a = res.allocation
            uni = uniform_allocation(a.inertia.sum(), a.damping.sum(), a.buses, cons)
            assert res.cost <= allocation_cost(sys, uni)


def test_forming_requires_floor():
    _, sys = build("triangle", "forming", ["3"])
    with pytest.raises(ValueError, match="m_floor"):
        optimize(sys, "forming", ConstraintSet.uniform(1, 1.5, 2.0, 1.0, 0.0))


def test_unstable_init_rejected():
    # an undamped machine with no governor and a passive following device is marginal
    doc = fx.two_bus()
    doc["machines"][0].update(damping=0.0, droop_gain=0.0)
    model = network_from_dict(doc)
    with pytest.warns(RuntimeWarning):
        sys = assemble_open_loop(model, DeviceSet.from_sites(fx.sites(["2"]), "following"),
                                 PerformanceWeights(), "following")
    with pytest.raises(OptimizationError, match="stabiliz"):
        optimize(sys, "following", ConstraintSet.uniform(1, 1.0, 1.0, 1.0))


def test_multistart_single_seed_equals_optimize():
    _, sys = build("triangle", "forming", ["3"])
    cons = cons_for(1, "forming")
    a = optimize(sys, "forming", cons)
    b = multistart(sys, "forming", cons, seeds=1).best
    np.testing.assert_array_equal(a.allocation.vector(), b.allocation.vector())
    assert a.cost_trace == b.cost_trace


def test_multistart_best_and_spread():
    _, sys = build("triangle", "following", ["3"])
    ms = multistart(sys, "following", cons_for(1, "following"), seeds=8, seed=3)
    assert len(ms.costs) == 8 and not ms.failures
    assert all(ms.best.cost <= c for c in ms.costs)
    assert ms.spread == max(ms.costs) - min(ms.costs)


def test_multistart_thread_independent(monkeypatch):
    _, sys = build("six_bus", "forming", ["4", "5"])
    cons = cons_for(2, "forming")
    one = multistart(sys, "forming", cons, seeds=4, seed=1, workers=1)
    four = multistart(sys, "forming", cons, seeds=4, seed=1, workers=4)
    assert one.costs == four.costs
    np.testing.assert_array_equal(one.best.allocation.vector(), four.best.allocation.vector())


def test_symmetric_fixture_symmetric_optimum():
    model = network_from_dict(fx.symmetric_star())
    devices = DeviceSet.from_sites(fx.sites(["2", "3"]), "forming")
    sys = assemble_open_loop(model, devices, PerformanceWeights(1, 0.1, 0.1, 0.1), "forming")
    ms = multistart(sys, "forming", cons_for(2, "forming"), seeds=6, seed=0)
    near = [r for r in ms.runs if r is not None and r.cost <= ms.best.cost + 1e-6]
    assert near
    sym = [r for r in near
           if np.allclose(r.allocation.inertia[0], r.allocation.inertia[1], atol=1e-4)
           and np.allclose(r.allocation.damping[0], r.allocation.damping[1], atol=1e-4)]
    assert sym
    assert max(r.cost for r in near) - min(r.cost for r in near) <= 1e-6
