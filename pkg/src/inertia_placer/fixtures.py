"""Small reference networks used by the tests, the examples and the CLI demo."""

from __future__ import annotations

from .devices import DeviceSite
from .netmodel import NetworkModel, network_from_dict


def _machine(bus, M, D, R=0.0, Tg=1.0):
    return {"bus": bus, "inertia": M, "damping": D, "droop_gain": R, "gov_time": Tg}


def single_machine(M: float = 2.0, D: float = 0.5, droop_gain: float = 0.0,
                   gov_time: float = 1.0) -> dict:
    return {
        "base": {"mva": 100.0, "frequency_hz": 50.0},
        "buses": [{"id": "1", "type": "machine"}],
        "lines": [],
        "machines": [_machine("1", M, D, droop_gain, gov_time)],
        "disturbances": [{"bus": "1", "strength": 1.0}],
    }


def two_bus(p: tuple[float, float] = (0.0, 0.0), b: float = 10.0) -> dict:
    """One machine and one candidate bus joined by a single line."""
    return {
        "base": {"mva": 100.0, "frequency_hz": 50.0},
        "buses": [{"id": "1", "type": "machine", "p": p[0]},
                  {"id": "2", "type": "vi-candidate", "p": p[1]}],
        "lines": [{"from": "1", "to": "2", "b": b}],
        "machines": [_machine("1", 2.0, 0.5, 2.0, 1.5)],
        "disturbances": [{"bus": "1", "strength": 1.0}, {"bus": "2", "strength": 1.0}],
    }


def triangle(p: tuple[float, float, float] = (0.0, 0.0, 0.0), b: float = 10.0) -> dict:
    """Machines at buses 1 and 2, candidate at bus 3, all lines equal."""
    return {
        "base": {"mva": 100.0, "frequency_hz": 50.0},
        "buses": [{"id": "1", "type": "machine", "p": p[0]},
                  {"id": "2", "type": "machine", "p": p[1]},
                  {"id": "3", "type": "vi-candidate", "p": p[2]}],
        "lines": [{"from": "1", "to": "2", "b": b}, {"from": "2", "to": "3", "b": b},
                  {"from": "1", "to": "3", "b": b}],
        "machines": [_machine("1", 2.0, 0.5, 3.0, 2.0), _machine("2", 1.5, 0.4, 2.5, 2.5)],
        "disturbances": [{"bus": "1", "strength": 1.0}, {"bus": "2", "strength": 1.0},
                         {"bus": "3", "strength": 1.0}],
    }


def six_bus() -> dict:
    """Three machines, two candidate buses, one passive load bus; loaded operating point."""
    return {
        "base": {"mva": 100.0, "frequency_hz": 50.0},
        "buses": [
            {"id": "1", "type": "machine", "p": 0.6},
            {"id": "2", "type": "machine", "p": 0.3},
            {"id": "3", "type": "machine", "p": 0.2},
            {"id": "4", "type": "vi-candidate", "p": -0.4},
            {"id": "5", "type": "vi-candidate", "p": -0.3},
            {"id": "6", "type": "passive", "p": -0.4},
        ],
        "lines": [
            {"from": "1", "to": "4", "b": 8.0},
            {"from": "4", "to": "6", "b": 6.0},
            {"from": "6", "to": "5", "b": 6.0},
            {"from": "5", "to": "2", "b": 7.0},
            {"from": "2", "to": "3", "b": 5.0},
            {"from": "3", "to": "6", "b": 4.0},
            {"from": "1", "to": "2", "b": 3.0},
        ],
        "machines": [
            _machine("1", 3.0, 0.6, 4.0, 2.0),
            _machine("2", 1.2, 0.3, 2.0, 3.0),
            _machine("3", 0.8, 0.2, 1.5, 2.5),
        ],
        "disturbances": [{"bus": "4", "strength": 1.0}, {"bus": "5", "strength": 1.0},
                         {"bus": "6", "strength": 1.0}, {"bus": "3", "strength": 1.0}],
    }


def symmetric_star() -> dict:
    """A machine hub with two identical candidate spokes (mirror symmetric)."""
    return {
        "base": {"mva": 100.0, "frequency_hz": 50.0},
        "buses": [{"id": "1", "type": "machine"},
                  {"id": "2", "type": "vi-candidate"},
                  {"id": "3", "type": "vi-candidate"}],
        "lines": [{"from": "1", "to": "2", "b": 4.0}, {"from": "1", "to": "3", "b": 4.0}],
        "machines": [_machine("1", 2.0, 0.4, 3.0, 2.0)],
        "disturbances": [{"bus": "2", "strength": 1.0}, {"bus": "3", "strength": 1.0}],
    }


def load(name: str) -> NetworkModel:
    return network_from_dict(NETWORKS[name]())


def sites(buses) -> list[DeviceSite]:
    return [DeviceSite(str(b), p_max=1.0) for b in buses]


NETWORKS = {
    "single_machine": single_machine,
    "two_bus": two_bus,
    "triangle": triangle,
    "six_bus": six_bus,
    "symmetric_star": symmetric_star,
}
