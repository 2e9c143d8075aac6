"""Event-driven fixed-step RK4 simulation of the closed loop.

A run is split into event-free segments. Each segment is integrated by the
compiled kernel in :mod:`mgstab._kernel`; at an event the grid spec is
updated and the state vector remapped to the new active topology.

Output is kept in a *global* layout with one column per element of the
original grid; elements that are disconnected at a sample read NaN.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np

from . import _kernel
from .control import ConfigError, ControllerParams, derive_gains
from .dynamics import (
    FullState,
    ReducedState,
    algebraic_lambda,
    full_derivative,
    initial_state,
    reduced_derivative,
)
from .grid import GridSpec, Network, TopologyEvent, apply_topology_event

EVENT_KINDS = ("load-step", "disconnect", "reconnect", "controller-activate")
RK4_REAL_LIMIT = 2.5  # a bit inside the 2.785 real-axis bound


class SimulationError(RuntimeError):
    def __init__(self, msg: str, t: float | None = None):
        super().__init__(msg if t is None else f"{msg} at t = {t:.9g} s")
        self.t = t


class StepSizeError(ConfigError):
    pass


@dataclass(frozen=True)
class Event:
    """A timed change.

    Payloads:
      load-step: ``{"load": k, "conductance": factor, "const_current": factor}``;
        factors are relative to the scenario's nominal load, an absent key
        leaves that quantity unchanged
      disconnect / reconnect: ``{"element": "generator"|"line"|"load", "index": i}``
      controller-activate: ``{}``
    """

    time: float
    kind: str
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ConfigError(f"unknown event kind {self.kind!r}")
        if self.kind in ("disconnect", "reconnect"):
            if self.payload.get("element") not in ("generator", "line", "load") or "index" not in self.payload:
                raise ConfigError(f"{self.kind} event needs 'element' and 'index': {self.payload}")
        if self.kind == "load-step" and "load" not in self.payload:
            raise ConfigError(f"load-step event needs 'load': {self.payload}")

    def to_dict(self) -> dict:
        return {"time": self.time, "kind": self.kind, "payload": dict(self.payload)}


@dataclass(frozen=True)
class Delay:
    """Communication delay of values sent by ``sender``; ``receiver=None`` means every neighbour."""

    sender: int
    delay: float
    receiver: int | None = None


@dataclass(frozen=True)
class Scenario:
    grid: GridSpec
    controller: ControllerParams
    events: tuple[Event, ...] = ()
    delays: tuple[Delay, ...] = ()
    t_end: float = 1.0
    dt: float = 5e-7
    model: Literal["full", "reduced"] = "full"
    output_stride: int = 10
    initial: Literal["steady", "equilibrium"] = "steady"
    v_ref_auto: bool = False
    force: bool = False
    name: str = ""
    notes: str = field(default="", compare=False)

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0:
            raise ConfigError("dt and t_end must be positive")
        if self.model not in ("full", "reduced"):
            raise ConfigError(f"model must be 'full' or 'reduced', got {self.model!r}")
        if self.output_stride < 1:
            raise ConfigError("output_stride must be >= 1")
        times = [e.time for e in self.events]
        if any(not 0 <= t < self.t_end for t in times):
            raise ConfigError("event times must lie in [0, t_end)")
        if times != sorted(times):
            raise ConfigError("events must be time-ordered")
        n = len(self.grid.generators)
        for d in self.delays:
            if d.delay < 0:
                raise ConfigError("delays must be nonnegative")
            if not 0 <= d.sender < n or (d.receiver is not None and not 0 <= d.receiver < n):
                raise ConfigError(f"delay references unknown generator: {d}")
        if self.delays and self.model == "reduced":
            raise ConfigError("communication delays need the full model (lambda is algebraic in the reduced one)")

    def delay_matrix(self) -> np.ndarray:
        """Global matrix D[receiver, sender] of delays in seconds."""
        n = len(self.grid.generators)
        d = np.zeros((n, n))
        for item in self.delays:
            if item.receiver is None:
                d[:, item.sender] = item.delay
            else:
                d[item.receiver, item.sender] = item.delay
        np.fill_diagonal(d, 0.0)
        return d

    def with_(self, **kw) -> "Scenario":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        ctrl = self.controller.to_dict()
        if self.v_ref_auto:
            ctrl["v_ref"] = "auto"
        return {
            "name": self.name,
            "notes": self.notes,
            "grid": self.grid.to_dict(),
            "controller": ctrl,
            "events": [e.to_dict() for e in self.events],
            "delays": [
                {"sender": d.sender, "delay": d.delay, **({} if d.receiver is None else {"receiver": d.receiver})}
                for d in self.delays
            ],
            "t_end": self.t_end,
            "dt": self.dt,
            "model": self.model,
            "output_stride": self.output_stride,
            "initial": self.initial,
            "force": self.force,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "Scenario":
        grid = d.get("grid")
        if isinstance(grid, str):
            grid = GridSpec.from_json(_resolve(grid, base_dir))
        elif isinstance(grid, dict):
            grid = GridSpec.from_dict(grid)
        else:
            raise ConfigError("scenario needs a 'grid' object or path")
        ctrl = d.get("controller", {})
        if isinstance(ctrl, str):
            ctrl = json.loads(_resolve(ctrl, base_dir).read_text())
        ctrl = dict(ctrl)
        auto = ctrl.get("v_ref") == "auto"
        if auto:
            ctrl["v_ref"] = 0.0
        known = {
            "name", "notes", "grid", "controller", "events", "delays", "t_end", "dt",
            "model", "output_stride", "initial", "force",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(
            grid=grid,
            controller=ControllerParams.from_dict(ctrl),
            events=tuple(Event(float(e["time"]), e["kind"], dict(e.get("payload", {}))) for e in d.get("events", [])),
            delays=tuple(
                Delay(int(x["sender"]), float(x["delay"]), None if x.get("receiver") is None else int(x["receiver"]))
                for x in d.get("delays", [])
            ),
            t_end=float(d.get("t_end", 1.0)),
            dt=float(d.get("dt", 5e-7)),
            model=d.get("model", "full"),
            output_stride=int(d.get("output_stride", 10)),
            initial=d.get("initial", "steady"),
            v_ref_auto=auto,
            force=bool(d.get("force", False)),
            name=str(d.get("name", "")),
            notes=str(d.get("notes", "")),
        )

    @classmethod
    def from_json(cls, path) -> "Scenario":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _resolve(p: str, base_dir: Path | None) -> Path:
    path = Path(p)
    if path.is_absolute() or base_dir is None:
        return path
    return base_dir / path


def column_names(spec: GridSpec) -> list[str]:
    ng, nl, nk = len(spec.generators), len(spec.lines), len(spec.loads)
    cols = ["t"]
    cols += [f"ig_{i + 1}" for i in range(ng)]
    cols += [f"ie_{j + 1}" for j in range(nl)]
    cols += [f"vn_{k + 1}" for k in range(nk)]
    for name in ("v", "lam", "zeta"):
        cols += [f"{name}_{i + 1}" for i in range(ng)]
    return cols


@dataclass
class SimResult:
    """Decimated trajectory in global layout.

    ``data[:, 0]`` is time; the remaining columns follow :func:`column_names`.
    ``window[s]`` is the number of events applied before sample ``s``;
    ``specs[w]`` is the grid in force during window ``w``.
    """

    data: np.ndarray
    columns: list[str]
    event_log: list[dict]
    controller_active: np.ndarray
    window: np.ndarray
    specs: list[GridSpec]
    params: ControllerParams
    model: str
    metrics: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.data[:, 0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def block(self, prefix: str) -> np.ndarray:
        idx = [c for c, name in enumerate(self.columns) if name.startswith(prefix + "_")]
        return self.data[:, idx]

    @property
    def i_gen(self) -> np.ndarray:
        return self.block("ig")

    @property
    def v_node(self) -> np.ndarray:
        return self.block("vn")

    @property
    def v_ctrl(self) -> np.ndarray:
        return self.block("v")

    @property
    def lam(self) -> np.ndarray:
        return self.block("lam")

    @property
    def zeta(self) -> np.ndarray:
        return self.block("zeta")

    def window_slice(self, w: int) -> np.ndarray:
        return np.flatnonzero(self.window == w)

    def state(self, s: int) -> FullState | ReducedState:
        """Sample ``s`` as a state of the topology active at that time."""
        spec = self.specs[self.window[s]]
        gi, li = spec.active_generators, spec.active_lines
        parts = [self.i_gen[s, gi], self.block("ie")[s, li], self.v_node[s], self.v_ctrl[s, gi]]
        if self.model == "full":
            return FullState(*parts, self.lam[s, gi], self.zeta[s, gi])
        return ReducedState(*parts, self.zeta[s, gi])

    def to_csv(self, path) -> None:
        np.savetxt(path, self.data, delimiter=",", header=",".join(self.columns), comments="", fmt="%.10g")


def delayed_value(history_t, history_v, t: float, delay: float) -> float:
    """Value of a sampled signal at ``t - delay`` with linear interpolation.

    Queries before the first sample return the first sample; queries past the
    last return the last.
    """
    ht = np.asarray(history_t, dtype=float)
    hv = np.asarray(history_v, dtype=float)
    return float(np.interp(t - delay, ht, hv))


# -- integration -------------------------------------------------------


@dataclass
class _Globals:
    """Per-element state in the original grid's indexing."""

    i_gen: np.ndarray
    i_line: np.ndarray
    v_node: np.ndarray
    v_ctrl: np.ndarray
    lam: np.ndarray
    zeta: np.ndarray


def _to_globals(x, net: Network, g: _Globals, reduced: bool, gains) -> None:
    st = (ReducedState if reduced else FullState).from_vector(x, net)
    g.i_gen[net.gen_ids] = st.i_gen
    g.i_line[net.line_ids] = st.i_line
    g.v_node[:] = st.v_node
    g.v_ctrl[net.gen_ids] = st.v_ctrl
    g.zeta[net.gen_ids] = st.zeta
    g.lam[net.gen_ids] = algebraic_lambda(st.i_gen, st.zeta, net, gains) if reduced else st.lam


def _from_globals(g: _Globals, net: Network, reduced: bool) -> np.ndarray:
    gi, li = net.gen_ids, net.line_ids
    parts = [g.i_gen[gi], g.i_line[li], g.v_node, g.v_ctrl[gi]]
    if not reduced:
        parts.append(g.lam[gi])
    parts.append(g.zeta[gi])
    return np.concatenate(parts)


def apply_event(spec: GridSpec, event: Event, nominal: GridSpec | None = None) -> GridSpec:
    """Apply one event; load steps are taken relative to ``nominal`` (default: ``spec``)."""
    if event.kind == "load-step":
        p = event.payload
        k = int(p["load"])
        if not 0 <= k < spec.n_bus:
            raise ConfigError(f"no load with index {k}")
        ref = (nominal or spec).loads[k]
        now = spec.loads[k]
        loads = list(spec.loads)
        loads[k] = replace(
            now,
            conductance=ref.conductance * float(p["conductance"]) if "conductance" in p else now.conductance,
            const_current=ref.const_current * float(p["const_current"]) if "const_current" in p else now.const_current,
        )
        return replace(spec, loads=tuple(loads))
    if event.kind in ("disconnect", "reconnect"):
        return apply_topology_event(
            spec, TopologyEvent(event.kind, event.payload["element"], int(event.payload["index"]))
        )
    return spec


def resolve_params(scenario: Scenario) -> ControllerParams:
    """Controller parameters with ``v_ref = "auto"`` replaced by the nominal B = 0 regulator states."""
    if not scenario.v_ref_auto:
        return scenario.controller
    from .equilibrium import nominal_v_ref

    v = nominal_v_ref(scenario.grid, scenario.controller)
    full = np.zeros(len(scenario.grid.generators))
    full[scenario.grid.active_generators] = v
    return scenario.controller.with_(v_ref=tuple(float(x) for x in full))


def stable_step_bound(spec: GridSpec, params: ControllerParams, model: str = "full") -> float:
    """Largest dt for which RK4 stays inside its real-axis stability bound at the initial point."""
    from .linearization import numerical_jacobian

    net = spec.network()
    x0 = initial_state(net, params)
    if model == "full":
        fun = _full_fun(net, params)
        x = x0.to_vector()
    else:
        gains = derive_gains(net, params)
        fun = _reduced_fun(net, params, gains)
        x = ReducedState(x0.i_gen, x0.i_line, x0.v_node, x0.v_ctrl, x0.zeta).to_vector()
    jac = numerical_jacobian(fun, x)
    radius = float(np.max(np.abs(np.linalg.eigvals(jac))))
    return RK4_REAL_LIMIT / radius if radius > 0 else math.inf


def _full_fun(net, params):
    return lambda x: full_derivative(FullState.from_vector(x, net), net, params).to_vector()


def _reduced_fun(net, params, gains):
    return lambda x: reduced_derivative(ReducedState.from_vector(x, net), net, params, gains).to_vector()


def check_step(scenario: Scenario, params: ControllerParams | None = None) -> None:
    params = params or scenario.controller
    fast = params.tau_p if scenario.model == "full" else params.tau_d
    limit = min(fast / 5, stable_step_bound(scenario.grid, params, scenario.model))
    if scenario.dt > limit:
        msg = f"dt = {scenario.dt:.3g} s exceeds the resolvable step {limit:.3g} s"
        if not scenario.force:
            raise StepSizeError(msg + " (set force to override)")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)


def integrate(scenario: Scenario) -> SimResult:
    params = resolve_params(scenario)
    check_step(scenario, params)
    reduced = scenario.model == "reduced"
    spec = scenario.grid
    ng_t, nl_t, nk = len(spec.generators), len(spec.lines), len(spec.loads)
    dt, stride = scenario.dt, scenario.output_stride

    net = spec.network()
    gains = derive_gains(net, params)
    active = scenario.initial == "equilibrium"
    if scenario.initial == "equilibrium":
        from .equilibrium import solve

        st = solve(net, params).state
    else:
        st = initial_state(net, params)
    g = _Globals(
        np.zeros(ng_t), np.zeros(nl_t), np.zeros(nk), np.zeros(ng_t), np.zeros(ng_t), np.zeros(ng_t)
    )
    g.i_gen[net.gen_ids] = st.i_gen
    g.i_line[net.line_ids] = st.i_line
    g.v_node[:] = st.v_node
    g.v_ctrl[net.gen_ids] = st.v_ctrl
    g.lam[net.gen_ids] = st.lam
    g.zeta[net.gen_ids] = st.zeta
    x = _from_globals(g, net, reduced)

    delay_global = scenario.delay_matrix()
    use_delay = bool(np.any(delay_global > 0)) and not reduced
    if use_delay:
        nbuf = int(math.ceil(delay_global.max() / dt)) + 4
        hist_t = np.full(nbuf, 0.0)
        hist_l = np.zeros((nbuf, ng_t))
        hist_z = np.zeros((nbuf, ng_t))
        hist_l[0], hist_z[0] = g.lam, g.zeta
        head, count = 0, 1
    else:
        hist_t, hist_l, hist_z = np.zeros(1), np.zeros((1, ng_t)), np.zeros((1, ng_t))
        head, count = 0, 1

    bounds = [e.time for e in scenario.events] + [scenario.t_end]
    chunks_t, chunks_x, chunk_win, chunk_act = [], [], [], []
    specs = [spec]
    log: list[dict] = []
    # initial sample
    chunks_t.append(np.array([0.0]))
    chunks_x.append(_rows_to_global(x[None, :], net, gains, reduced, ng_t, nl_t, nk))
    chunk_win.append(np.array([0]))
    chunk_act.append(np.array([active]))

    t = 0.0
    ev_iter = iter(scenario.events)
    for w, t_next in enumerate(bounds):
        if t_next > t:
            n_est = int(math.ceil((t_next - t) / dt / stride)) + 2
            out_t = np.empty(n_est)
            out_x = np.empty((n_est, x.size))
            frozen_l, frozen_z = g.lam.copy(), g.zeta.copy()
            delay = delay_global[np.ix_(net.gen_ids, net.gen_ids)].copy()
            x, stored, status, t_fail, head, count = _kernel.rk4_segment(
                x, t, t_next, dt, stride, *_model_args(net, params, gains, active, reduced),
                delay, use_delay, net.gen_ids.astype(np.int64), hist_t, hist_l, hist_z, head, count,
                frozen_l, frozen_z, out_t, out_x,
            )
            if status != 0:
                raise SimulationError("non-finite state", t_fail)
            rows = _rows_to_global(out_x[:stored], net, gains, reduced, ng_t, nl_t, nk)
            chunks_t.append(out_t[:stored].copy())
            chunks_x.append(rows)
            chunk_win.append(np.full(stored, w))
            chunk_act.append(np.full(stored, active))
            _to_globals(x, net, g, reduced, gains)
            t = t_next
        if w == len(bounds) - 1:
            break
        ev = next(ev_iter)
        old_net = net
        spec = apply_event(spec, ev, scenario.grid)
        if ev.kind == "controller-activate":
            active = True
        net = spec.network()
        _on_topology_change(g, old_net, net)
        gains = derive_gains(net, params)
        x = _from_globals(g, net, reduced)
        specs.append(spec)
        log.append({"time": ev.time, "kind": ev.kind, "payload": dict(ev.payload)})

    times = np.concatenate(chunks_t)
    body = np.concatenate(chunks_x)
    data = np.column_stack([times, body])
    window = np.concatenate(chunk_win)
    act = np.concatenate(chunk_act).astype(bool)
    # a sample taken exactly at an event time belongs to the window it closes;
    # keep the first occurrence of each timestamp
    keep = np.concatenate([[True], np.diff(times) > 0])
    return SimResult(
        data=data[keep],
        columns=column_names(scenario.grid),
        event_log=log,
        controller_active=act[keep],
        window=window[keep],
        specs=specs,
        params=params,
        model=scenario.model,
    )


def _model_args(net: Network, params: ControllerParams, gains, active: bool, reduced: bool) -> tuple:
    """Kernel arguments describing one topology and controller."""
    ng = net.n_gen
    gbus = np.argmax(net.beta_g, axis=1).astype(np.int64)
    la = np.argmax(net.beta_e, axis=1).astype(np.int64) if net.n_line else np.zeros(0, np.int64)
    lb = np.argmin(net.beta_e, axis=1).astype(np.int64) if net.n_line else np.zeros(0, np.int64)
    return (
        ng, net.n_line, net.n_bus, gbus, la, lb,
        net.r_g, net.l_g, net.r_e, net.l_e, net.c_n, net.g_cte, net.i_cte, net.lam,
        net.adjacency, np.full(ng, params.tau), np.full(ng, params.tau_p), np.full(ng, params.tau_d),
        np.full(ng, params.k_v), params.k, params.v_star_center, params.delta, params.alpha,
        params.b_steep, params.v_pos, params.v_neg, np.full(ng, params.const_leak), params.zeta_leak,
        params.v_ref_vector(net.gen_ids), active, reduced, gains.K1, net.laplacian,
    )


def step_free(x0, net: Network, params: ControllerParams, t_end: float, dt: float,
              active: bool = True, model: str = "full", stride: int | None = None):
    """Integrate an arbitrary state vector with the compiled RK4 (no events, no delays).

    Returns (times, states) sampled every ``stride`` steps (default: end only).
    """
    reduced = model == "reduced"
    gains = derive_gains(net, params)
    n_steps = int(math.ceil(t_end / dt - 1e-9))
    stride = stride or n_steps
    n_out = n_steps // stride + 2
    x0 = np.asarray(x0, dtype=float)
    out_t, out_x = np.empty(n_out), np.empty((n_out, x0.size))
    ng = net.n_gen
    x, stored, status, t_fail, _, _ = _kernel.rk4_segment(
        x0, 0.0, t_end, dt, stride, *_model_args(net, params, gains, active, reduced),
        np.zeros((ng, ng)), False, net.gen_ids.astype(np.int64), np.zeros(1), np.zeros((1, ng)),
        np.zeros((1, ng)), 0, 1, np.zeros(ng), np.zeros(ng), out_t, out_x,
    )
    if status != 0:
        raise SimulationError("non-finite state", t_fail)
    return out_t[:stored].copy(), out_x[:stored].copy()


def _on_topology_change(g: _Globals, old: Network, new: Network) -> None:
    """Zero the currents of elements that were just disconnected or reconnected.

    Controller states of a removed DG stay frozen in ``g`` and resume on reconnection.
    """
    for gid in set(old.gen_ids.tolist()) ^ set(new.gen_ids.tolist()):
        g.i_gen[gid] = 0.0
    for lid in set(old.line_ids.tolist()) ^ set(new.line_ids.tolist()):
        g.i_line[lid] = 0.0


def _rows_to_global(xs, net: Network, gains, reduced: bool, ng_t: int, nl_t: int, nk: int):
    """Scatter active-layout samples into the global layout; inactive elements are NaN."""
    m = xs.shape[0]
    ng, nl = net.n_gen, net.n_line
    out = np.full((m, 4 * ng_t + nl_t + nk), np.nan)
    gi, li = net.gen_ids, net.line_ids
    o = 0
    i_gen = xs[:, :ng]
    out[:, o + gi] = i_gen
    o += ng_t
    out[:, o + li] = xs[:, ng:ng + nl]
    o += nl_t
    out[:, o:o + nk] = xs[:, ng + nl:ng + nl + nk]
    o += nk
    base = ng + nl + nk
    out[:, o + gi] = xs[:, base:base + ng]
    o += ng_t
    if reduced:
        zeta = xs[:, base + ng:base + 2 * ng]
        lam = (i_gen * net.lam - zeta @ net.laplacian.T) @ gains.K1.T
    else:
        lam = xs[:, base + ng:base + 2 * ng]
        zeta = xs[:, base + 2 * ng:base + 3 * ng]
    out[:, o + gi] = lam
    o += ng_t
    out[:, o + gi] = zeta
    return out
