"""Closed-loop steady states and their optimality.

Two directions are undetermined by the steady-state equations alone:

* with ``zeta_leak == 0``, zeta enters only through L zeta, so any shift
  along the all-ones vector is again a steady state;
* with ``const_leak == 0`` and no active anti-windup, only the ratios of the
  shared currents are fixed, leaving a one-parameter family of operating
  points. Along trajectories in that regime the quantity
  sum_i (tau v_i / k_v + tau_p lambda_i) is conserved, and it selects the
  member of the family a simulation converges to.

Both are pinned to their values at the initial guess. If the second pin is
inconsistent (anti-windup active at the solution) the solve is repeated
without it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import ControllerParams, omega, rho
from .dynamics import FullState, full_derivative, full_inertia, initial_state
from .grid import GridSpec, Network


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, best_residual: float):
        super().__init__(f"{msg} (best residual {best_residual:.3e})")
        self.best_residual = best_residual


@dataclass
class EquilibriumReport:
    state: FullState
    residual_norm: float
    lambda_consensus: float
    lambda_spread: float
    zeta_values: np.ndarray
    saturated: np.ndarray
    sharing_error: np.ndarray
    iterations: int = 0
    pins: tuple[str, ...] = ()
    gen_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def relative_sharing_error(self) -> np.ndarray:
        return self.sharing_error / self.state.lam

    def to_dict(self) -> dict:
        s = self.state
        return {
            "residual_norm": float(self.residual_norm),
            "lambda_consensus": float(self.lambda_consensus),
            "lambda_spread": float(self.lambda_spread),
            "lambda": s.lam.tolist(),
            "zeta": s.zeta.tolist(),
            "v_ctrl": s.v_ctrl.tolist(),
            "i_gen": s.i_gen.tolist(),
            "i_line": s.i_line.tolist(),
            "v_node": s.v_node.tolist(),
            "saturated": [bool(x) for x in self.saturated],
            "sharing_error": self.sharing_error.tolist(),
            "iterations": int(self.iterations),
            "pins": list(self.pins),
            "generators": [int(g) for g in self.gen_ids],
        }


def default_guess(net: Network, params: ControllerParams) -> FullState:
    x0 = initial_state(net, params)
    x0.lam = np.full(net.n_gen, float(np.mean(x0.lam)))
    return x0


def _pin_rows(net: Network, params: ControllerParams, names) -> np.ndarray:
    g, j, k = net.n_gen, net.n_line, net.n_bus
    n = 4 * g + j + k
    rows = []
    off_v = g + j + k
    off_l, off_z = off_v + g, off_v + 2 * g
    for name in names:
        r = np.zeros(n)
        if name == "zeta":
            r[off_z:off_z + g] = 1.0
        elif name == "v_family":
            r[off_v:off_v + g] = params.tau / params.k_v
            r[off_l:off_l + g] = params.tau_p
        rows.append(r)
    return np.array(rows).reshape(len(rows), n)


def _fd_jacobian(fun, x, f0=None):
    n = x.size
    jac = np.empty((f0.size if f0 is not None else fun(x).size, n))
    for i in range(n):
        h = 1e-7 * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        jac[:, i] = (fun(xp) - fun(xm)) / (2 * h)
    return jac


def _newton(x0, residual, pins, targets, tol, max_iter):
    def stacked(x):
        return np.concatenate([residual(x), pins @ x - targets])

    x = x0.copy()
    r = stacked(x)
    best = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        jac = _fd_jacobian(stacked, x, r)
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        norm0 = np.linalg.norm(r)
        t = 1.0
        while True:
            x_new = x + t * step
            r_new = stacked(x_new)
            if np.all(np.isfinite(r_new)) and np.linalg.norm(r_new) < norm0 * (1 - 1e-4 * t):
                break
            t *= 0.5
            if t < 1e-8:
                break
        if t < 1e-8:
            break
        x, r = x_new, r_new
        best = min(best, np.max(np.abs(r)))
        if np.max(np.abs(r)) < tol and np.max(np.abs(t * step)) < 1e-12 * max(1.0, np.max(np.abs(x))):
            break
    return x, r, it


def solve(
    spec: GridSpec | Network,
    params: ControllerParams,
    initial_guess: FullState | None = None,
    tol: float = 1e-9,
    max_iter: int = 100,
) -> EquilibriumReport:
    """Damped Gauss-Newton on the steady-state equations of the full model."""
    net = spec.network() if isinstance(spec, GridSpec) else spec
    guess = initial_guess if initial_guess is not None else default_guess(net, params)
    guess.check(net)
    x0 = guess.to_vector()
    inertia = full_inertia(net, params)

    def deriv(x):
        return full_derivative(FullState.from_vector(x, net), net, params).to_vector()

    def residual(x):
        return deriv(x) * inertia

    pin_sets = []
    base = ["zeta"] if params.zeta_leak == 0 else []
    if params.const_leak == 0 and params.k_v > 0:
        pin_sets.append(base + ["v_family"])
    pin_sets.append(base)

    best_res = np.inf
    for names in pin_sets:
        pins = _pin_rows(net, params, names)
        targets = pins @ x0
        x, r, it = _newton(x0, residual, pins, targets, tol * 1e-3, max_iter)
        res = float(np.max(np.abs(deriv(x))))
        best_res = min(best_res, res)
        if res < tol and np.max(np.abs(r[len(x):]), initial=0.0) < 1e-8:
            return _report(FullState.from_vector(x, net), net, params, res, it, tuple(names))
    raise ConvergenceError("equilibrium solve did not converge", best_res)


def _report(state, net, params, res, it, pins) -> EquilibriumReport:
    share = net.lam * state.i_gen
    act = rho(state.v_ctrl, params) >= 0.01 * params.alpha
    return EquilibriumReport(
        state=state,
        residual_norm=res,
        lambda_consensus=float(np.mean(state.lam)),
        lambda_spread=float(np.ptp(state.lam)),
        zeta_values=state.zeta.copy(),
        saturated=act,
        sharing_error=state.lam - share,
        iterations=it,
        pins=pins,
        gen_ids=np.asarray(net.gen_ids),
    )


def classify(report: EquilibriumReport, tol: float = 0.05) -> str:
    if np.any(report.saturated):
        return "sub-optimal"
    dev = np.max(np.abs(report.sharing_error)) / abs(report.lambda_consensus)
    return "optimal" if dev < tol else "sub-optimal"


def nominal_v_ref(spec: GridSpec | Network, params: ControllerParams) -> np.ndarray:
    """Regulator states of the nominal operating point reached by the B = 0 controller.

    The controller is taken to start from v = 0 with lambda at the local measured
    ratio, which fixes the member of the B = 0 equilibrium family.
    """
    net = spec.network() if isinstance(spec, GridSpec) else spec
    p0 = params.with_(const_leak=0.0, zeta_leak=0.0)
    rep = solve(net, p0, initial_guess=initial_state(net, p0))
    return rep.state.v_ctrl


def node_voltage_setpoints(report: EquilibriumReport, params: ControllerParams) -> np.ndarray:
    return omega(report.state.v_ctrl, params)
