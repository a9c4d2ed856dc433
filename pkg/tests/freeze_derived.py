"""Regenerate tests/derived_values.json from the reference computations in oracles.py.

Run with ``python tests/freeze_derived.py``.  The package contributes only
the assembled plant matrices; every number stored here is produced by scipy
solvers or closed forms.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

import oracles
from inertia_placer import fixtures as fx
from inertia_placer.devices import Allocation, DeviceSet
from inertia_placer.netmodel import PerformanceWeights, assemble_open_loop, network_from_dict

OUT = Path(__file__).with_name("derived_values.json")
WEIGHTS = PerformanceWeights(1.0, 0.1, 0.1, 0.1)
FORMING_FLOOR = 1e-3


def plant(name, mode, buses):
    model = network_from_dict(fx.NETWORKS[name]())
    devices = DeviceSet.from_sites(fx.sites(buses), mode)
    return assemble_open_loop(model, devices, WEIGHTS, mode)


def closed_A(sys, mode, m, d):
    """Closed-loop matrices written out from the device laws, not from GainMatrix."""
    n = len(m)
    K = np.zeros((n, 2 * n))
    for j in range(n):
        if mode == "following":
            K[j, 2 * j:2 * j + 2] = (d[j], m[j])
        else:
            K[j, 2 * j:2 * j + 2] = (-d[j] / m[j], 1.0 / m[j])
    A = sys.A + sys.B @ K @ sys.C
    G = (sys.E + sys.B @ K @ sys.Dy) * sys.strengths
    return A, G, sys.Cp


def cost(sys, mode, x):
    n = x.size // 2
    A, G, Cp = closed_A(sys, mode, x[:n], x[n:])
    if np.max(np.linalg.eigvals(A).real) >= 0:
        return 1e6
    return oracles.lyap_h2(A, G, Cp)


def reference_optimum(sys, mode, d_sum, d_cap, m_cap, floor, starts):
    n = len(sys.device_buses)
    bounds = [(floor, m_cap)] * n + [(0.0, d_cap)] * n
    cons = [{"type": "ineq", "fun": lambda x: d_sum - np.sum(x[n:])}]
    best = None
    for x0 in starts:
        r = minimize(lambda x: cost(sys, mode, x), x0, method="SLSQP", bounds=bounds,
                     constraints=cons, options={"ftol": 1e-15, "maxiter": 2000})
        # polish with the trust-constr solver from the SLSQP point
        r2 = minimize(lambda x: cost(sys, mode, x), r.x, method="trust-constr", bounds=bounds,
                      constraints=cons, options={"gtol": 1e-12, "xtol": 1e-14, "maxiter": 5000})
        for cand in (r, r2):
            x = np.clip(cand.x, [b[0] for b in bounds], [b[1] for b in bounds])
            if np.sum(x[n:]) > d_sum:
                continue
            f = cost(sys, mode, x)
            if best is None or f < best[0]:
                best = (f, x)
    return best


def main():
    out = {}

    # equilibrium: 3-bus, p = (0.3, -0.3, 0), b = 10, reference bus 1
    L = np.array([[20.0, -10, -10], [-10, 20, -10], [-10, -10, 20]])
    p = np.array([0.3, -0.3, 0.0])
    theta = np.zeros(3)
    theta[1:] = np.linalg.solve(L[1:, 1:], p[1:])
    out["triangle_dc_angles"] = theta.tolist()

    # zero allocation (following) and undamped unit inertia (forming) on the 3-bus fixture
    for mode, m0 in (("following", 0.0), ("forming", 1.0)):
        sys = plant("triangle", mode, ["3"])
        A, G, Cp = closed_A(sys, mode, [m0], [0.0])
        out[f"triangle_h2_base_{mode}"] = oracles.lyap_h2(A, G, Cp)

    # constrained optima (SLSQP + trust-constr on scipy Lyapunov costs)
    rng = np.random.default_rng(7)
    cases = {"triangle": ["3"], "six_bus": ["4", "5"]}
    for name, buses in cases.items():
        n = len(buses)
        for mode in ("following", "forming"):
            floor = FORMING_FLOOR if mode == "forming" else 0.0
            sys = plant(name, mode, buses)
            starts = [np.r_[np.full(n, max(floor, 0.5)), np.full(n, 0.5)]]
            starts += [np.r_[rng.uniform(max(floor, 0.05), 1.0, n), rng.uniform(0, 1.5, n)]
                       for _ in range(4)]
            f, x = reference_optimum(sys, mode, 1.5 * n, 2.0, 1.0, floor, starts)
            out[f"{name}_opt_{mode}"] = {"cost": f, "x": x.tolist()}
            print(name, mode, f, x)

    OUT.write_text(json.dumps(out, indent=2) + "\n")
    print("wrote", OUT)


if __name__ == "__main__":
    main()
