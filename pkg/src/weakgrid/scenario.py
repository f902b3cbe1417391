"""Scenario files: the single human-editable description of one study.

A scenario bundles the system base, the network, the converter fleet
(analytic parameters or an imported frequency scan per converter) and
the dispatch, plus solver options.  Files are YAML with an explicit
``schema`` version so bundled studies stay reproducible across
releases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .base import SystemBase
from .converter import ConverterParams
from .network import (
    Branch,
    Bus,
    NetworkSpec,
    OperatingPoint,
    PQInjection,
    PUInjection,
    Shunt,
)

SCHEMA_VERSION = 1
DISPATCH_MODES = ("pq", "pu", "operating_point")


class ScenarioError(ValueError):
    """Malformed scenario file; the message names the offending field."""


@dataclass(frozen=True)
class ConverterSpec:
    """One converter: either analytic parameters or an imported scan."""

    bus: int
    params: ConverterParams | None = None
    response_csv: str | None = None

    def __post_init__(self) -> None:
        if (self.params is None) == (self.response_csv is None):
            raise ScenarioError(
                f"converter at bus {self.bus}: give exactly one of params/response_csv"
            )


@dataclass(frozen=True)
class SolverOptions:
    freq_points: int = 400
    f_min_hz: float = 0.01
    f_max_hz: float = 2000.0
    pf_tol: float = 1e-8
    pf_max_iter: int = 50
    sim_termination_c: float = 0.0

    def frequency_grid(self) -> np.ndarray:
        return 2.0 * math.pi * np.geomspace(self.f_min_hz, self.f_max_hz, self.freq_points)


@dataclass(frozen=True)
class Scenario:
    name: str
    base: SystemBase
    net: NetworkSpec
    converters: tuple[ConverterSpec, ...]
    dispatch_mode: str
    dispatch: tuple[Mapping[str, float], ...]
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self) -> None:
        if self.dispatch_mode not in DISPATCH_MODES:
            raise ScenarioError(f"dispatch.mode must be one of {DISPATCH_MODES}")
        conv_buses = set(self.net.converter_buses)
        spec_buses = [c.bus for c in self.converters]
        if len(set(spec_buses)) != len(spec_buses):
            raise ScenarioError("duplicate converter entries")
        if set(spec_buses) != conv_buses:
            raise ScenarioError(
                f"converters must cover exactly the converter buses {sorted(conv_buses)}"
            )
        if {v["bus"] for v in self.dispatch} != conv_buses:
            raise ScenarioError("dispatch must cover exactly the converter buses")

    def converter_at(self, bus: int) -> ConverterSpec:
        for c in self.converters:
            if c.bus == bus:
                return c
        raise ScenarioError(f"no converter at bus {bus}")

    def injections(self) -> list[PQInjection | PUInjection]:
        if self.dispatch_mode == "pq":
            return [PQInjection(v["bus"], v["p"], v["q"]) for v in self.dispatch]
        if self.dispatch_mode == "pu":
            return [PUInjection(v["bus"], v["p"], v["u"]) for v in self.dispatch]
        # explicit operating points still define PQ injections
        return [PQInjection(v["bus"], v["p"], v["q"]) for v in self.dispatch]

    def explicit_operating_point(self) -> OperatingPoint | None:
        if self.dispatch_mode != "operating_point":
            return None
        by_bus = {v["bus"]: v for v in self.dispatch}
        buses = self.net.converter_buses
        return OperatingPoint(
            buses=buses,
            p=np.array([by_bus[b]["p"] for b in buses]),
            q=np.array([by_bus[b]["q"] for b in buses]),
            u=np.array([by_bus[b]["u"] for b in buses]),
            delta=np.array([by_bus[b]["delta"] for b in buses]),
        )


def _need(mapping: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in mapping:
        raise ScenarioError(f"missing field {key!r} in {where}")
    return mapping[key]


def scenario_from_dict(data: Mapping[str, Any], name: str = "scenario") -> Scenario:
    if not isinstance(data, Mapping):
        raise ScenarioError("scenario file must be a mapping")
    schema = _need(data, "schema", "scenario")
    if schema != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema version {schema} (expected {SCHEMA_VERSION})")

    base_raw = _need(data, "base", "scenario")
    base = SystemBase(
        f0_hz=float(_need(base_raw, "f0_hz", "base")),
        s_base_mva=float(base_raw.get("s_base_mva", 100.0)),
    )

    net_raw = _need(data, "network", "scenario")
    buses = tuple(
        Bus(
            id=int(_need(b, "id", "network.buses")),
            kind=str(_need(b, "kind", "network.buses")),
            e=float(b.get("e", 1.0)),
        )
        for b in _need(net_raw, "buses", "network")
    )
    branches = tuple(
        Branch(
            from_bus=int(_need(br, "from", "network.branches")),
            to_bus=int(_need(br, "to", "network.branches")),
            r=float(br.get("r", 0.0)),
            x=float(_need(br, "x", "network.branches")),
        )
        for br in _need(net_raw, "branches", "network")
    )
    shunts = tuple(
        Shunt(
            bus=int(_need(sh, "bus", "network.shunts")),
            r=float(sh.get("r", 0.0)),
            x=float(sh.get("x", 0.0)),
            b=(float(sh["b"]) if "b" in sh else None),
        )
        for sh in net_raw.get("shunts", [])
    )
    net = NetworkSpec(buses=buses, branches=branches, shunts=shunts)

    converters = []
    for c in _need(data, "converters", "scenario"):
        bus = int(_need(c, "bus", "converters"))
        params = None
        if "params" in c:
            try:
                params = ConverterParams(**{str(k): float(v) for k, v in c["params"].items()})
            except TypeError as exc:
                raise ScenarioError(f"converter at bus {bus}: unknown parameter ({exc})") from exc
        converters.append(
            ConverterSpec(bus=bus, params=params, response_csv=c.get("response_csv"))
        )

    disp_raw = _need(data, "dispatch", "scenario")
    mode = str(_need(disp_raw, "mode", "dispatch"))
    values = []
    for v in _need(disp_raw, "values", "dispatch"):
        entry = {"bus": int(_need(v, "bus", "dispatch.values"))}
        for key in ("p", "q", "u", "delta"):
            if key in v:
                entry[key] = float(v[key])
        required = {"pq": ("p", "q"), "pu": ("p", "u"), "operating_point": ("p", "q", "u", "delta")}
        for key in required.get(mode, ()):
            if key not in entry:
                raise ScenarioError(
                    f"dispatch.values for bus {entry['bus']}: missing {key!r} for mode {mode!r}"
                )
        values.append(entry)

    solver_raw = data.get("solver", {})
    solver = SolverOptions(
        freq_points=int(solver_raw.get("freq_points", 400)),
        f_min_hz=float(solver_raw.get("f_min_hz", 0.01)),
        f_max_hz=float(solver_raw.get("f_max_hz", 2000.0)),
        pf_tol=float(solver_raw.get("pf_tol", 1e-8)),
        pf_max_iter=int(solver_raw.get("pf_max_iter", 50)),
        sim_termination_c=float(solver_raw.get("sim_termination_c", 0.0)),
    )

    return Scenario(
        name=str(data.get("name", name)),
        base=base,
        net=net,
        converters=tuple(converters),
        dispatch_mode=mode,
        dispatch=tuple(values),
        solver=solver,
    )


def scenario_to_dict(sc: Scenario) -> dict[str, Any]:
    """Inverse of ``scenario_from_dict`` (round-trips exactly)."""
    data: dict[str, Any] = {
        "schema": SCHEMA_VERSION,
        "name": sc.name,
        "base": {"f0_hz": sc.base.f0_hz, "s_base_mva": sc.base.s_base_mva},
        "network": {
            "buses": [
                {"id": b.id, "kind": b.kind, **({"e": b.e} if b.kind == "infinite" else {})}
                for b in sc.net.buses
            ],
            "branches": [
                {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x}
                for br in sc.net.branches
            ],
            "shunts": [
                {"bus": sh.bus, **({"b": sh.b} if sh.b is not None else {"r": sh.r, "x": sh.x})}
                for sh in sc.net.shunts
            ],
        },
        "converters": [
            {
                "bus": c.bus,
                **(
                    {"params": {k: getattr(c.params, k) for k in c.params.__dataclass_fields__}}
                    if c.params is not None
                    else {"response_csv": c.response_csv}
                ),
            }
            for c in sc.converters
        ],
        "dispatch": {"mode": sc.dispatch_mode, "values": [dict(v) for v in sc.dispatch]},
        "solver": {
            "freq_points": sc.solver.freq_points,
            "f_min_hz": sc.solver.f_min_hz,
            "f_max_hz": sc.solver.f_max_hz,
            "pf_tol": sc.solver.pf_tol,
            "pf_max_iter": sc.solver.pf_max_iter,
            "sim_termination_c": sc.solver.sim_termination_c,
        },
    }
    return data


def bundled_scenario_names() -> list[str]:
    root = resources.files("weakgrid").joinpath("scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_scenario(source: str | Path) -> Scenario:
    """Load a scenario from a file path or a bundled scenario name."""
    path = Path(source)
    if path.exists():
        text = path.read_text(encoding="utf-8")
        name = path.stem
    else:
        candidate = resources.files("weakgrid").joinpath("scenarios", f"{source}.yaml")
        if not candidate.is_file():
            raise ScenarioError(
                f"scenario {source!r} is neither a file nor a bundled scenario "
                f"(bundled: {', '.join(bundled_scenario_names())})"
            )
        text = candidate.read_text(encoding="utf-8")
        name = str(source)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"invalid YAML in scenario {name!r}: {exc}") from exc
    return scenario_from_dict(data, name=name)


def dump_scenario(sc: Scenario, path: str | Path) -> None:
    Path(path).write_text(
        yaml.safe_dump(scenario_to_dict(sc), sort_keys=False), encoding="utf-8"
    )
