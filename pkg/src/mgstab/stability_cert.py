"""Stability certificate and singular-perturbation bound ingredients.

B* is the constant leakage above which the reduced closed loop is monotone
(hence exponentially stable for any saturation slope), and the bound
ingredients (alpha_y, Xi1, Xi2, gamma) give an estimate of how fast the
estimator layer must be for the two-time-scale argument to hold.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .control import ConfigError, ControllerParams, DerivedGains, consensus_projector, derive_gains
from .control import omega, omega_integral, rho
from .dynamics import DimensionError, FullState, ReducedState
from .equilibrium import solve
from .grid import GridSpec, Network

GAMMA_FLOOR = 1e-9


def _net(spec) -> Network:
    return spec.network() if isinstance(spec, GridSpec) else spec


def _gains(net: Network, params: ControllerParams) -> DerivedGains:
    """Derived gains, tolerating a communication graph without edges (K2 = 0 then)."""
    try:
        return derive_gains(net, params)
    except ConfigError:
        n = net.n_gen
        eye = np.eye(n)
        L = net.laplacian
        K1 = np.linalg.solve(eye + params.k * L, eye)
        K2 = np.linalg.pinv(L @ K1 @ L, rcond=1e-10) @ L @ K1
        h = params.k_v * (K1 - K1 @ L @ K2 - eye)
        H = -0.5 * (eye + np.diag(net.lam) @ h.T)
        return DerivedGains(K1=K1, K2=K2, h=h, H=H)


def compute_b_star(spec: GridSpec | Network, params: ControllerParams) -> float:
    """Largest eigenvalue of sym(H^T R_G^-1 H) times omega'_max (= 1)."""
    net = _net(spec)
    g = _gains(net, params)
    m = g.H.T @ np.diag(1.0 / net.r_g) @ g.H
    m = 0.5 * (m + m.T)
    return float(max(np.linalg.eigvalsh(m).max(), 0.0) * g.omega_prime_max)


def alpha_y(spec: GridSpec | Network, params: ControllerParams) -> float:
    """Second-smallest eigenvalue of sym(L K1 L): the rate on the consensus complement."""
    net = _net(spec)
    L = net.laplacian
    if net.n_gen < 2:
        return 0.0
    g = _gains(net, params)
    p = L @ g.K1 @ L
    ev = np.linalg.eigvalsh(0.5 * (p + p.T))
    return float(max(ev[1], 0.0))


@dataclass
class CertReport:
    b_star: float
    b_configured: float
    theorem1_satisfied: bool
    timescale_ratios: tuple[float, float]
    timescale_ok: bool
    ratio_threshold: float
    alpha_y: float
    xi1: float
    xi2: float
    gamma_margin: float
    d_star: float
    epsilon_star: float
    flags: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.theorem1_satisfied and self.timescale_ok

    def to_dict(self) -> dict:
        d = asdict(self)
        d["timescale_ratios"] = list(self.timescale_ratios)
        for k in ("xi1", "xi2", "d_star", "epsilon_star", "gamma_margin"):
            if not np.isfinite(d[k]):
                d[k] = "inf" if d[k] > 0 else ("-inf" if d[k] < 0 else "nan")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CertReport":
        d = dict(d)
        for k in ("xi1", "xi2", "d_star", "epsilon_star", "gamma_margin"):
            d[k] = float(d[k])
        d["timescale_ratios"] = tuple(d["timescale_ratios"])
        return cls(**d)


@dataclass
class EpsilonEstimate:
    xi1: float
    xi2: float
    d_star: float
    epsilon_star: float
    gamma: float
    alpha_y: float
    flags: list[str] = field(default_factory=list)

    def __iter__(self):
        # unpacks as (xi1, xi2, d_star, epsilon_star)
        return iter((self.xi1, self.xi2, self.d_star, self.epsilon_star))


def timescale_ratios(params: ControllerParams) -> tuple[float, float]:
    tau_eff = params.tau / max(params.const_leak, 1.0)
    return params.tau_d / params.tau_p, tau_eff / params.tau_d


def xi1(spec: GridSpec | Network, params: ControllerParams) -> float:
    """Frobenius norm of tau K_v K1 L with the slope bound chi <= 1."""
    net = _net(spec)
    g = _gains(net, params)
    return float(np.linalg.norm(params.tau * params.k_v * g.K1 @ net.laplacian, "fro"))


def xi2_bound(spec: GridSpec | Network, params: ControllerParams) -> float:
    """State-free bound on Xi2: chi = I in K2 Lambda (L_G)^-1 [-R_G | 0 | -beta_G | chi]."""
    net = _net(spec)
    g = _gains(net, params)
    a = g.K2 @ np.diag(net.lam / net.l_g)
    blocks = [-np.diag(net.r_g), np.zeros((net.n_gen, net.n_line)), -net.beta_g, np.eye(net.n_gen)]
    return float(np.linalg.norm(a @ np.hstack(blocks), "fro"))


def _increments(state, eq: FullState, net: Network):
    di = state.i_gen - eq.i_gen
    de = state.i_line - eq.i_line
    dn = state.v_node - eq.v_node
    dv = state.v_ctrl - eq.v_ctrl
    return di, de, dn, dv


def _check_dims(state, net: Network) -> None:
    if isinstance(state, (FullState, ReducedState)):
        state.check(net)
    else:
        raise DimensionError(f"unsupported state type {type(state).__name__}")


def monotonicity_ratio(state, eq: FullState, net: Network, params: ControllerParams,
                       gains: DerivedGains) -> float:
    """x~^T (M(x) - M(x_bar)) / |x~|^2 for one sample (nan at the equilibrium)."""
    di, de, dn, dv = _increments(state, eq, net)
    big_omega = omega(state.v_ctrl, params) - omega(eq.v_ctrl, params)
    num = (di @ (net.r_g * di) + de @ (net.r_e * de) + dn @ (net.g_cte * dn)
           - di @ ((np.eye(net.n_gen) + np.diag(net.lam) @ gains.h.T) @ big_omega)
           + params.const_leak * (dv @ big_omega))
    den = di @ di + de @ de + dn @ dn + dv @ dv
    return float(num / den) if den > 0 else float("nan")


def xi2_sample(state, eq: FullState, net: Network, params: ControllerParams, gains: DerivedGains) -> float:
    """|K2 Lambda dI_G/dt| / |x~| along the reduced dynamics, for one sample."""
    di, de, dn, dv = _increments(state, eq, net)
    big_omega = omega(state.v_ctrl, params) - omega(eq.v_ctrl, params)
    di_dot = (big_omega - net.beta_g @ dn - net.r_g * di) / net.l_g
    den = np.sqrt(di @ di + de @ de + dn @ dn + dv @ dv)
    if den == 0:
        return float("nan")
    return float(np.linalg.norm(gains.K2 @ (net.lam * di_dot)) / den)


def estimate_epsilon_star(
    spec: GridSpec | Network,
    params: ControllerParams,
    state_samples,
    equilibrium: FullState | None = None,
    gamma: float | None = None,
) -> EpsilonEstimate:
    """Sample-based estimate of (Xi1, Xi2, d*, eps*).

    Xi1 uses the worst-case slope bound. Xi2 and, unless given, gamma are the
    sup/inf of their state-dependent expressions over ``state_samples``, so the
    resulting eps* is an estimate, not a certificate.
    """
    net = _net(spec)
    samples = list(state_samples)
    if not samples:
        raise ValueError("state_samples is empty")
    for s in samples:
        _check_dims(s, net)
    g = _gains(net, params)
    eq = equilibrium if equilibrium is not None else solve(net, params).state
    flags = ["xi2-sampled"]

    x1 = xi1(net, params)
    vals = [xi2_sample(s, eq, net, params, g) for s in samples]
    vals = [v for v in vals if np.isfinite(v)]
    x2 = max(vals) if vals else 0.0

    if gamma is None:
        ratios = [monotonicity_ratio(s, eq, net, params, g) for s in samples]
        ratios = [r for r in ratios if np.isfinite(r)]
        gamma = min(ratios) if ratios else float("nan")
        flags.append("gamma-sampled")
        if not np.isfinite(gamma) or gamma <= 0:
            if params.const_leak >= compute_b_star(net, params):
                gamma = GAMMA_FLOOR
                flags.append("gamma-floored")
    ay = alpha_y(net, params)

    if x1 == 0 or x2 == 0:
        flags.append("no-interconnection")
        return EpsilonEstimate(x1, x2, float(x1 / (x1 + x2)) if x1 + x2 > 0 else 0.0,
                               float("inf"), float(gamma), ay, flags)
    d_star = x1 / (x1 + x2)
    eps = gamma * ay / (x1 * x2)
    if not eps > 0:
        flags.append("margins-not-positive")
    return EpsilonEstimate(float(x1), float(x2), float(d_star), float(eps), float(gamma), ay, flags)


def linear_gamma(spec: GridSpec | Network, params: ControllerParams) -> float:
    """Smallest eigenvalue of the symmetric monotonicity matrix at full slope."""
    net = _net(spec)
    g = _gains(net, params)
    ng, nl, nk = net.n_gen, net.n_line, net.n_bus
    n = ng + nl + nk + ng
    m = np.zeros((n, n))
    m[:ng, :ng] = np.diag(net.r_g)
    m[ng:ng + nl, ng:ng + nl] = np.diag(net.r_e)
    m[ng + nl:ng + nl + nk, ng + nl:ng + nl + nk] = np.diag(net.g_cte)
    ov = ng + nl + nk
    m[:ng, ov:] = g.H
    m[ov:, :ng] = g.H.T
    m[ov:, ov:] = params.const_leak * np.eye(ng)
    return float(np.linalg.eigvalsh(m).min())


def check(
    spec: GridSpec | Network,
    params: ControllerParams,
    ratio_threshold: float = 10.0,
    state_samples=None,
    equilibrium: FullState | None = None,
) -> CertReport:
    net = _net(spec)
    b_star = compute_b_star(net, params)
    b = params.const_leak
    r1, r2 = timescale_ratios(params)
    flags = []
    thm = bool(b >= b_star)
    ts_ok = bool(r1 >= ratio_threshold and r2 >= ratio_threshold)
    if not ts_ok:
        flags.append(f"timescale ratios below {ratio_threshold:g}")
    if state_samples is not None:
        est = estimate_epsilon_star(net, params, state_samples, equilibrium)
        flags += est.flags
        x1, x2, d, eps, gam, ay = est.xi1, est.xi2, est.d_star, est.epsilon_star, est.gamma, est.alpha_y
    else:
        x1, x2 = xi1(net, params), xi2_bound(net, params)
        gam = linear_gamma(net, params)
        if gam <= 0 and thm:
            gam = GAMMA_FLOOR
            flags.append("gamma-floored")
        ay = alpha_y(net, params)
        flags += ["xi2-worst-case", "gamma-linear"]
        if x1 == 0 or x2 == 0:
            d, eps = (x1 / (x1 + x2) if x1 + x2 > 0 else 0.0), float("inf")
            flags.append("no-interconnection")
        else:
            d, eps = x1 / (x1 + x2), gam * ay / (x1 * x2)
    if np.isfinite(eps) and eps > 0 and params.tau_d > eps:
        flags.append("tau_d exceeds epsilon* estimate")
    return CertReport(
        b_star=b_star, b_configured=b, theorem1_satisfied=thm,
        timescale_ratios=(float(r1), float(r2)), timescale_ok=ts_ok, ratio_threshold=float(ratio_threshold),
        alpha_y=float(ay), xi1=float(x1), xi2=float(x2), gamma_margin=float(gam),
        d_star=float(d), epsilon_star=float(eps), flags=flags,
    )


# ---------------------------------------------------------------- audit

def storage_values(state, eq: FullState, net: Network, params: ControllerParams,
                   gains: DerivedGains) -> tuple[float, float]:
    """(V_s, W_f) at one state about ``eq``.

    The estimator error uses the consensus-complement part of zeta~, since the
    consensus component of zeta is conserved and not an error.
    """
    di, de, dn, dv = _increments(state, eq, net)
    quad = 0.5 * (di @ (net.l_g * di) + de @ (net.l_e * de) + dn @ (net.c_n * dn))
    vs = quad + params.tau * float(np.sum(omega_integral(dv, eq.v_ctrl, params)))
    dz = consensus_projector(net.n_gen) @ (state.zeta - eq.zeta)
    y = dz - gains.K2 @ (net.lam * di)
    return float(vs), float(0.5 * y @ y)


def _storage_batch(batch, eq: FullState, net: Network, params: ControllerParams, gains: DerivedGains):
    """Row-wise :func:`storage_values` for arrays of samples."""
    ig, ie, vn, vc, zt = batch
    di, de, dn, dv = ig - eq.i_gen, ie - eq.i_line, vn - eq.v_node, vc - eq.v_ctrl
    quad = 0.5 * ((di * di) @ net.l_g + (de * de) @ net.l_e + (dn * dn) @ net.c_n)
    vs = quad + params.tau * omega_integral(dv, eq.v_ctrl, params).sum(axis=1)
    dz = (zt - eq.zeta) @ consensus_projector(net.n_gen).T
    y = dz - (di * net.lam) @ gains.K2.T
    return vs, 0.5 * np.sum(y * y, axis=1)


@dataclass
class LyapunovAudit:
    times: np.ndarray
    window: np.ndarray
    v_s: np.ndarray
    w_f: np.ndarray
    composite: np.ndarray
    d: float
    windows: list[dict]
    tol: float

    @property
    def v_s_nonincreasing(self) -> bool:
        return all(w["v_s_nonincreasing"] for w in self.windows)

    @property
    def w_f_decays(self) -> bool:
        return all(w["w_f_decays"] for w in self.windows)

    def to_dict(self) -> dict:
        return {"d": self.d, "tol": self.tol, "windows": self.windows,
                "v_s_nonincreasing": self.v_s_nonincreasing, "w_f_decays": self.w_f_decays}


def audit_lyapunov(
    trajectory,
    spec: GridSpec | None = None,
    params: ControllerParams | None = None,
    equilibrium=None,
    tol: float = 1e-6,
    decay_fraction: float = 1e-2,
) -> LyapunovAudit:
    """Evaluate V_s, W_f and (1-d*)V_s + d* W_f along a simulated trajectory.

    ``equilibrium`` may be one FullState (single window), a list with one entry
    per window, or None to solve each post-event configuration. Windows before
    controller activation are skipped. A window fails the V_s check if V_s rises
    more than ``tol * V_s(window start)`` above its running minimum; W_f decays
    if its final value is below ``decay_fraction`` of its window maximum.
    """
    res = trajectory
    params = params if params is not None else res.params
    n_win = len(res.specs)
    if equilibrium is None or isinstance(equilibrium, (list, tuple)):
        eqs = list(equilibrium) if equilibrium is not None else [None] * n_win
    else:
        eqs = [equilibrium] * n_win
    if len(eqs) != n_win:
        raise DimensionError(f"{len(eqs)} equilibria for {n_win} windows")

    times = res.times
    vs = np.full(times.size, np.nan)
    wf = np.full(times.size, np.nan)
    d_vals = []
    nets = {}
    ig, ie, vn, vc, zt = res.i_gen, res.block("ie"), res.v_node, res.v_ctrl, res.zeta
    for w in range(n_win):
        idx = res.window_slice(w)
        idx = idx[res.controller_active[idx]] if idx.size else idx
        if idx.size == 0:
            continue
        wspec = res.specs[w] if spec is None or n_win > 1 else spec
        net = wspec.network()
        eq = eqs[w]
        if eq is None:
            eq = solve(net, params).state
        if hasattr(eq, "state"):
            eq = eq.state
        try:
            eq.check(net)
        except DimensionError as exc:
            raise DimensionError(f"window {w}: {exc}") from exc
        g = _gains(net, params)
        nets[w] = (net, eq, g)
        x1, x2 = xi1(net, params), xi2_bound(net, params)
        d_vals.append(x1 / (x1 + x2) if x1 + x2 > 0 else 0.0)
        spec_w = res.specs[w]
        gi, li = spec_w.active_generators, spec_w.active_lines
        batch = (ig[np.ix_(idx, gi)], ie[np.ix_(idx, li)], vn[idx], vc[np.ix_(idx, gi)], zt[np.ix_(idx, gi)])
        vs[idx], wf[idx] = _storage_batch(batch, eq, net, params, g)

    d = float(max(d_vals)) if d_vals else 0.0
    comp = (1 - d) * vs + d * wf
    windows = []
    for w in nets:
        idx = res.window_slice(w)
        idx = idx[np.isfinite(vs[idx])]
        v = vs[idx]
        run_min = np.minimum.accumulate(v)
        rise = float(np.max(v - run_min))
        allowed = tol * max(v[0], np.finfo(float).tiny)
        f = wf[idx]
        windows.append({
            "window": int(w),
            "t_start": float(times[idx[0]]),
            "t_end": float(times[idx[-1]]),
            "v_s_start": float(v[0]),
            "v_s_end": float(v[-1]),
            "max_rise": rise,
            "v_s_nonincreasing": bool(rise <= allowed),
            "w_f_max": float(f.max()),
            "w_f_end": float(f[-1]),
            "w_f_decays": bool(f[-1] <= decay_fraction * f.max() or f.max() < 1e-20),
        })
    return LyapunovAudit(times, res.window.copy(), vs, wf, comp, d, windows, tol)


def leakage_active(v_ctrl, params: ControllerParams) -> np.ndarray:
    return rho(v_ctrl, params) > 0.01 * params.alpha
