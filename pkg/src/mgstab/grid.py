"""Electrical and cyber topology of a DC microgrid.

Element parameters are stored in SI units. Every generator, line and load
keeps a ``connected`` flag; the matrices consumed by the dynamics are built
from the connected subset only, so a disconnection changes state dimensions.
Disconnecting a load removes its consumption (conductance and constant
current) but keeps the bus and its shunt capacitance.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np


class TopologyError(ValueError):
    """Raised for invalid or unsupported grid configurations."""


def per_unit_to_si(value: float, base: float) -> float:
    if base <= 0:
        raise ValueError(f"base must be positive, got {base}")
    return value * base


@dataclass(frozen=True)
class GeneratorParams:
    rated_current: float
    resistance: float
    inductance: float
    bus: int
    connected: bool = True

    def __post_init__(self):
        if self.rated_current <= 0 or self.resistance <= 0 or self.inductance <= 0:
            raise TopologyError(f"generator parameters must be positive: {self}")


@dataclass(frozen=True)
class LineParams:
    resistance: float
    inductance: float
    endpoints: tuple[int, int]
    connected: bool = True

    def __post_init__(self):
        if self.resistance <= 0 or self.inductance <= 0:
            raise TopologyError(f"line parameters must be positive: {self}")
        a, b = self.endpoints
        if a == b:
            raise TopologyError(f"line endpoints must differ: {self.endpoints}")


@dataclass(frozen=True)
class LoadParams:
    capacitance: float
    conductance: float
    const_current: float
    connected: bool = True

    def __post_init__(self):
        if self.capacitance <= 0 or self.conductance < 0:
            raise TopologyError(f"invalid load parameters: {self}")


def build_laplacian(adjacency) -> np.ndarray:
    """L = D - A for a symmetric, nonnegative adjacency of a connected graph."""
    a = np.asarray(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise TopologyError("adjacency must be square")
    if np.any(a < 0) or np.any(np.diag(a) != 0):
        raise TopologyError("adjacency must be nonnegative with zero diagonal")
    if not np.allclose(a, a.T):
        raise TopologyError("adjacency must be symmetric")
    if not is_connected(a):
        raise TopologyError("communication graph is disconnected; consensus is impossible")
    return np.diag(a.sum(axis=1)) - a


def is_connected(adjacency) -> bool:
    a = np.asarray(adjacency) > 0
    n = a.shape[0]
    if n == 0:
        return False
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(a[i]):
            if j not in seen:
                seen.add(int(j))
                stack.append(int(j))
    return len(seen) == n


@dataclass(frozen=True)
class Network:
    """Matrices of the connected part of a grid, ready for the dynamics."""

    gen_ids: np.ndarray
    line_ids: np.ndarray
    beta_g: np.ndarray
    beta_e: np.ndarray
    r_g: np.ndarray
    l_g: np.ndarray
    r_e: np.ndarray
    l_e: np.ndarray
    c_n: np.ndarray
    g_cte: np.ndarray
    i_cte: np.ndarray
    i_rated: np.ndarray
    adjacency: np.ndarray
    laplacian: np.ndarray

    @property
    def n_gen(self) -> int:
        return len(self.gen_ids)

    @property
    def n_line(self) -> int:
        return len(self.line_ids)

    @property
    def n_bus(self) -> int:
        return len(self.c_n)

    @property
    def lam(self) -> np.ndarray:
        """Diagonal of Lambda = diag(1 / rated current)."""
        return 1.0 / self.i_rated


@dataclass(frozen=True)
class TopologyEvent:
    action: Literal["disconnect", "reconnect"]
    element: Literal["generator", "line", "load"]
    index: int


@dataclass(frozen=True)
class GridSpec:
    generators: tuple[GeneratorParams, ...]
    lines: tuple[LineParams, ...]
    loads: tuple[LoadParams, ...]
    adjacency: tuple[tuple[float, ...], ...]
    base_resistance: float = 0.15
    base_inductance: float = 300e-6
    nominal_voltage: float = 48.0
    notes: str = field(default="", compare=False)

    def __post_init__(self):
        n_i, n_k = len(self.generators), len(self.loads)
        a = np.asarray(self.adjacency, dtype=float)
        if a.shape != (n_i, n_i):
            raise TopologyError(f"adjacency shape {a.shape} does not match {n_i} generators")
        for g in self.generators:
            if not 0 <= g.bus < n_k:
                raise TopologyError(f"generator bus {g.bus} out of range")
        for ln in self.lines:
            if not all(0 <= e < n_k for e in ln.endpoints):
                raise TopologyError(f"line endpoints {ln.endpoints} out of range")
        if not any(g.connected for g in self.generators):
            raise TopologyError("at least one generator must be connected")
        # validates symmetry and connectivity of the active cyber graph
        build_laplacian(a[np.ix_(self.active_generators, self.active_generators)])

    @property
    def active_generators(self) -> list[int]:
        return [i for i, g in enumerate(self.generators) if g.connected]

    @property
    def active_lines(self) -> list[int]:
        return [j for j, ln in enumerate(self.lines) if ln.connected]

    @property
    def n_bus(self) -> int:
        return len(self.loads)

    def network(self) -> Network:
        gi = np.array(self.active_generators, dtype=int)
        li = np.array(self.active_lines, dtype=int)
        n_k = self.n_bus
        beta_g = np.zeros((len(gi), n_k))
        for r, i in enumerate(gi):
            beta_g[r, self.generators[i].bus] = 1.0
        beta_e = np.zeros((len(li), n_k))
        for r, j in enumerate(li):
            a, b = self.lines[j].endpoints
            beta_e[r, a] = 1.0
            beta_e[r, b] = -1.0
        gens = [self.generators[i] for i in gi]
        lines = [self.lines[j] for j in li]
        adj = np.asarray(self.adjacency, dtype=float)[np.ix_(gi, gi)]
        return Network(
            gen_ids=gi,
            line_ids=li,
            beta_g=beta_g,
            beta_e=beta_e,
            r_g=np.array([g.resistance for g in gens]),
            l_g=np.array([g.inductance for g in gens]),
            r_e=np.array([ln.resistance for ln in lines]),
            l_e=np.array([ln.inductance for ln in lines]),
            c_n=np.array([ld.capacitance for ld in self.loads]),
            g_cte=np.array([ld.conductance if ld.connected else 0.0 for ld in self.loads]),
            i_cte=np.array([ld.const_current if ld.connected else 0.0 for ld in self.loads]),
            i_rated=np.array([g.rated_current for g in gens]),
            adjacency=adj,
            laplacian=build_laplacian(adj),
        )

    # -- derived specs -------------------------------------------------

    def scale_load(self, index: int, conductance: float = 1.0, const_current: float = 1.0) -> "GridSpec":
        loads = list(self.loads)
        ld = loads[index]
        loads[index] = replace(
            ld, conductance=ld.conductance * conductance, const_current=ld.const_current * const_current
        )
        return replace(self, loads=tuple(loads))

    def scale_generator_resistance(self, factor: float) -> "GridSpec":
        gens = tuple(replace(g, resistance=g.resistance * factor) for g in self.generators)
        return replace(self, generators=gens)

    def scale_rated_current(self, factor: float) -> "GridSpec":
        gens = tuple(replace(g, rated_current=g.rated_current * factor) for g in self.generators)
        return replace(self, generators=gens)

    def permuted(self, perm) -> "GridSpec":
        """Relabel generators so that new generator r is old generator perm[r]."""
        perm = list(perm)
        a = np.asarray(self.adjacency, dtype=float)[np.ix_(perm, perm)]
        return replace(
            self,
            generators=tuple(self.generators[p] for p in perm),
            adjacency=tuple(tuple(row) for row in a),
        )

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "per_unit": False,
            "base_resistance": self.base_resistance,
            "base_inductance": self.base_inductance,
            "nominal_voltage": self.nominal_voltage,
            "generators": [asdict(g) for g in self.generators],
            "lines": [{**asdict(ln), "endpoints": list(ln.endpoints)} for ln in self.lines],
            "loads": [asdict(ld) for ld in self.loads],
            "adjacency": [list(row) for row in self.adjacency],
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        """Parse a grid document.

        With ``"per_unit": true`` generator and line resistances/inductances are
        read in p.u. of ``base_resistance``/``base_inductance``. Generators may use
        their own ``generator_base_resistance``.
        """
        per_unit = bool(d.get("per_unit", False))
        rb = float(d.get("base_resistance", 0.15))
        lb = float(d.get("base_inductance", 300e-6))
        rb_gen = float(d.get("generator_base_resistance", rb))

        def conv(v, base):
            return per_unit_to_si(float(v), base) if per_unit else float(v)

        gens = tuple(
            GeneratorParams(
                rated_current=float(g["rated_current"]),
                resistance=conv(g["resistance"], rb_gen),
                inductance=conv(g["inductance"], lb),
                bus=int(g["bus"]),
                connected=bool(g.get("connected", True)),
            )
            for g in d["generators"]
        )
        lines = tuple(
            LineParams(
                resistance=conv(ln["resistance"], rb),
                inductance=conv(ln["inductance"], lb),
                endpoints=(int(ln["endpoints"][0]), int(ln["endpoints"][1])),
                connected=bool(ln.get("connected", True)),
            )
            for ln in d.get("lines", [])
        )
        loads = tuple(
            LoadParams(
                capacitance=float(ld["capacitance"]),
                conductance=float(ld["conductance"]),
                const_current=float(ld["const_current"]),
                connected=bool(ld.get("connected", True)),
            )
            for ld in d["loads"]
        )
        adjacency = d.get("adjacency")
        if adjacency is None:
            raise TopologyError("grid document is missing 'adjacency'")
        return cls(
            generators=gens,
            lines=lines,
            loads=loads,
            adjacency=tuple(tuple(float(x) for x in row) for row in adjacency),
            base_resistance=rb,
            base_inductance=lb,
            nominal_voltage=float(d.get("nominal_voltage", 48.0)),
            notes=str(d.get("notes", "")),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path) -> "GridSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def apply_topology_event(spec: GridSpec, event: TopologyEvent) -> GridSpec:
    """Return a copy of ``spec`` with one element's ``connected`` flag toggled."""
    connect = {"disconnect": False, "reconnect": True}[event.action]
    group = {"generator": "generators", "line": "lines", "load": "loads"}[event.element]
    items = list(getattr(spec, group))
    if not 0 <= event.index < len(items):
        raise TopologyError(f"no {event.element} with index {event.index}")
    items[event.index] = replace(items[event.index], connected=connect)
    if event.element == "generator" and not any(g.connected for g in items):
        raise TopologyError("cannot disconnect the last connected generator")
    try:
        return replace(spec, **{group: tuple(items)})
    except TopologyError as exc:
        raise TopologyError(f"{event.action} of {event.element} {event.index} is not allowed: {exc}") from exc


def active_index_map(old: GridSpec, new: GridSpec, element: str = "generator") -> dict[int, int]:
    """Map positions in the old active ordering to positions in the new one.

    Elements that are inactive in either spec are absent from the map.
    """
    attr = {"generator": "active_generators", "line": "active_lines"}[element]
    old_ids, new_ids = getattr(old, attr), getattr(new, attr)
    pos_new = {gid: p for p, gid in enumerate(new_ids)}
    return {p: pos_new[gid] for p, gid in enumerate(old_ids) if gid in pos_new}


def ring_adjacency(n: int, weight: float = 1.0) -> np.ndarray:
    a = np.zeros((n, n))
    for i in range(n):
        j = (i + 1) % n
        if i != j:
            a[i, j] = a[j, i] = weight
    return a
