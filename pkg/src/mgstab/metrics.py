"""Case-study metrics computed from a simulated trajectory."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .control import ControllerParams, rho
from .grid import GridSpec
from .simulate import SimResult

LAMBDA_FLOOR = 1e-9
SETTLE_FRACTION = 0.1
RISE_BAND = 0.01


@dataclass
class Metrics:
    max_sharing_deviation: float
    settled_max_deviation: float
    containment_violations: int
    v_node_range: tuple[float, float]
    rise_times: list[dict]
    leakage_active_intervals: dict[int, list[tuple[float, float]]]
    windows: list[dict] = field(default_factory=list)
    skipped_samples: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["v_node_range"] = list(self.v_node_range)
        d["leakage_active_intervals"] = {
            str(k): [list(iv) for iv in v] for k, v in self.leakage_active_intervals.items()
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        d = dict(d)
        d["v_node_range"] = tuple(d["v_node_range"])
        d["leakage_active_intervals"] = {
            int(k): [tuple(iv) for iv in v] for k, v in d["leakage_active_intervals"].items()
        }
        return cls(**d)


def sharing_deviation(result: SimResult) -> tuple[np.ndarray, int]:
    """|(lambda_i - Lambda_i I_i) / lambda_i| per sample and DG (NaN where undefined)."""
    ratings = np.array([g.rated_current for g in result.specs[0].generators])
    lam = result.lam
    share = result.i_gen / ratings
    small = np.abs(lam) < LAMBDA_FLOOR
    with np.errstate(invalid="ignore", divide="ignore"):
        dev = np.abs((lam - share) / lam)
    dev[small] = np.nan
    return dev, int(np.sum(small & np.isfinite(lam)))


def _intervals(times: np.ndarray, mask: np.ndarray) -> list[tuple[float, float]]:
    out = []
    if not mask.any():
        return out
    edges = np.diff(mask.astype(int))
    starts = list(np.flatnonzero(edges == 1) + 1)
    ends = list(np.flatnonzero(edges == -1))
    if mask[0]:
        starts.insert(0, 0)
    if mask[-1]:
        ends.append(mask.size - 1)
    return [(float(times[a]), float(times[b])) for a, b in zip(starts, ends)]


def _settle_time(t: np.ndarray, y: np.ndarray, t0: float) -> float | None:
    """Time from t0 until y stays within the band around its final-10% mean."""
    n = y.size
    tail = y[int(np.floor(n * (1 - SETTLE_FRACTION))):]
    ss = float(np.mean(tail))
    band = RISE_BAND * max(abs(ss), 1e-6)
    outside = np.abs(y - ss) > band
    if outside[-1]:
        return None
    if not outside.any():
        return 0.0
    last = int(np.flatnonzero(outside)[-1])
    return float(t[last + 1] - t0)


def compute_metrics(
    result: SimResult,
    spec: GridSpec | None = None,
    params: ControllerParams | None = None,
    v_bounds: tuple[float, float] = (0.95, 1.05),
) -> Metrics:
    """Sharing deviation, containment, rise times and leakage activity.

    Deviation statistics use samples with the controller active. Per window the
    settled deviation is the maximum over the final 10% of the window; the
    rise time is the longest settle time of the node voltages and the
    per-unit generator currents after the window's opening event.
    """
    spec = spec or result.specs[0]
    params = params or result.params
    t = result.times
    act = result.controller_active
    dev, skipped = sharing_deviation(result)
    dev_act = np.where(act[:, None], dev, np.nan)
    per_sample = np.nanmax(np.where(np.isnan(dev_act), -np.inf, dev_act), axis=1)
    per_sample[~np.isfinite(per_sample)] = np.nan

    v_n = spec.nominal_voltage
    vn = result.v_node
    lo, hi = v_bounds[0] * v_n, v_bounds[1] * v_n
    violations = int(np.sum(np.any((vn < lo) | (vn > hi), axis=1)))

    ratings = np.array([g.rated_current for g in spec.generators])
    pu = result.i_gen / ratings
    windows, rises = [], []
    starts = [0.0] + [e["time"] for e in result.event_log]
    for w in range(len(result.specs)):
        idx = result.window_slice(w)
        if idx.size < 2:
            continue
        ps = per_sample[idx]
        n_tail = max(1, int(np.ceil(SETTLE_FRACTION * idx.size)))
        info = {
            "window": w,
            "t_start": float(starts[w]) if w < len(starts) else float(t[idx[0]]),
            "t_end": float(t[idx[-1]]),
            "event": result.event_log[w - 1] if w > 0 else None,
            "controller_active": bool(act[idx[-1]]),
            "raw_max_deviation": float(np.nanmax(ps)) if np.isfinite(ps).any() else None,
            "settled_deviation": float(np.nanmax(ps[-n_tail:])) if np.isfinite(ps[-n_tail:]).any() else None,
        }
        windows.append(info)
        if w == 0:
            continue
        sig = np.column_stack([vn[idx], pu[idx]])
        times = []
        for c in range(sig.shape[1]):
            y = sig[:, c]
            if np.all(np.isfinite(y)):
                times.append(_settle_time(t[idx], y, info["t_start"]))
        resolved = all(x is not None for x in times) and bool(times)
        rises.append({
            "window": w,
            "event": result.event_log[w - 1],
            "rise_time": max(times) if resolved else None,
            "resolved": resolved,
        })

    vc = result.v_ctrl
    leak = {}
    for i in range(vc.shape[1]):
        y = vc[:, i]
        ok = np.isfinite(y) & act
        mask = np.zeros(y.size, bool)
        mask[ok] = rho(y[ok], params) > 0.01 * params.alpha
        leak[i] = _intervals(t, mask)

    settled = [w["settled_deviation"] for w in windows if w["controller_active"] and w["settled_deviation"] is not None]
    return Metrics(
        max_sharing_deviation=float(np.nanmax(per_sample)) if np.isfinite(per_sample).any() else 0.0,
        settled_max_deviation=float(max(settled)) if settled else 0.0,
        containment_violations=violations,
        v_node_range=(float(np.nanmin(vn)), float(np.nanmax(vn))),
        rise_times=rises,
        leakage_active_intervals=leak,
        windows=windows,
        skipped_samples=skipped,
    )
