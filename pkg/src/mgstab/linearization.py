"""Small-signal analysis of the full closed loop about an equilibrium."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import ControllerParams
from .dynamics import FullState, full_derivative
from .equilibrium import solve
from .grid import GridSpec, Network

STRUCTURAL_ZERO_TOL = 1e-7


class LinearizationError(RuntimeError):
    pass


def numerical_jacobian(fun, x, rel: float = 1e-6, floor: float = 1e-6) -> np.ndarray:
    """Central differences with steps h_i = max(floor, rel * |x_i|)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        h = max(floor, rel * abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((fun(xp) - fun(xm)) / (2 * h))
    return np.column_stack(cols)


def jacobian(
    spec: GridSpec | Network,
    params: ControllerParams,
    equilibrium: FullState,
    residual_tol: float = 1e-6,
) -> np.ndarray:
    """d(x')/dx of the full model (time-constant normalized) at ``equilibrium``."""
    net = spec.network() if isinstance(spec, GridSpec) else spec

    def fun(x):
        return full_derivative(FullState.from_vector(x, net), net, params).to_vector()

    x0 = equilibrium.to_vector()
    r = np.max(np.abs(fun(x0)))
    if not r < residual_tol:
        raise LinearizationError(f"state is not an equilibrium (residual {r:.3e})")
    jac = numerical_jacobian(fun, x0)
    if not np.all(np.isfinite(jac)):
        raise LinearizationError("non-finite Jacobian entries")
    return jac


@dataclass
class EigenReport:
    tau_p: float
    tau_d: float
    params_point: dict
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    max_real_part: float = float("nan")
    stable: bool = False
    zero_modes: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "tau_p": self.tau_p,
            "tau_d": self.tau_d,
            "params_point": self.params_point,
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "max_real_part": float(self.max_real_part),
            "stable": bool(self.stable),
            "zero_modes": int(self.zero_modes),
            "error": self.error,
        }


def analyze(jac: np.ndarray, zero_tol: float = STRUCTURAL_ZERO_TOL) -> tuple[np.ndarray, float, bool, int]:
    """Eigenvalues, max real part outside structural zeros, verdict, zero-mode count."""
    eig = np.linalg.eigvals(jac)
    eig = eig[np.lexsort((eig.imag, eig.real))]
    zero = np.abs(eig.real) < zero_tol
    rest = eig.real[~zero]
    max_re = float(rest.max()) if rest.size else 0.0
    return eig, max_re, bool(max_re < 0), int(zero.sum())


def _point(params: ControllerParams) -> dict:
    return {
        "tau_p": params.tau_p,
        "tau_d": params.tau_d,
        "B": params.const_leak,
        "B_zeta": params.zeta_leak,
        "k": params.k,
        "delta": params.delta,
    }


def eigen_report(spec, params: ControllerParams, equilibrium: FullState,
                 zero_tol: float = STRUCTURAL_ZERO_TOL) -> EigenReport:
    rep = EigenReport(params.tau_p, params.tau_d, _point(params))
    try:
        eig, max_re, stable, nz = analyze(jacobian(spec, params, equilibrium), zero_tol)
    except (LinearizationError, np.linalg.LinAlgError) as exc:
        rep.error = str(exc)
        return rep
    rep.eigenvalues, rep.max_real_part, rep.stable, rep.zero_modes = eig, max_re, stable, nz
    return rep


def eigen_sweep(
    spec: GridSpec,
    params: ControllerParams,
    grid,
    b_zeta: float | None = None,
    zero_tol: float = STRUCTURAL_ZERO_TOL,
    equilibrium: FullState | None = None,
) -> list[EigenReport]:
    """One report per (tau_p, tau_d) pair.

    Time constants do not move the equilibrium, so it is solved once (after
    applying ``b_zeta``) and reused at every point.
    """
    if b_zeta is not None:
        params = params.with_(zeta_leak=float(b_zeta))
    net = spec.network()
    if equilibrium is None:
        equilibrium = solve(net, params).state
    out = []
    for tau_p, tau_d in grid:
        try:
            p = params.with_(tau_p=float(tau_p), tau_d=float(tau_d))
        except ValueError as exc:
            out.append(EigenReport(float(tau_p), float(tau_d), _point(params), error=str(exc)))
            continue
        out.append(eigen_report(net, p, equilibrium, zero_tol))
    return out


def log_grid(lo: float = 1e-5, hi: float = 1e-2, n: int = 10) -> list[tuple[float, float]]:
    """Cartesian log-spaced (tau_p, tau_d) grid."""
    vals = np.logspace(np.log10(lo), np.log10(hi), n)
    return [(float(a), float(b)) for a in vals for b in vals]
