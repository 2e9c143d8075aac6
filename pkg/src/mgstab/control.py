"""Nonlinear current-sharing / voltage-containment controller.

Per DG i the controller is

    u_i        = omega(v_i) = V* + delta * tanh(v_i / delta)
    tau   v_i' = -rho(v_i) v_i + k_v (lambda_i - Lambda_i I_i) - B (v_i - v_ref)
    tau_p l_i' = Lambda_i I_i - lambda_i - (L zeta)_i - k (L lambda)_i
    tau_d z_i' = (L lambda)_i - B_zeta zeta_i

with the anti-windup leakage ``rho`` switching on near the voltage limits.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .grid import GridSpec, Network


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ControllerParams:
    tau: float = 1e-3
    tau_p: float = 1e-5
    tau_d: float = 1e-4
    k_v: float = 48.0
    k: float = 10.0
    alpha: float = 50.4
    b_steep: float = 10.0
    v_star_center: float = 48.0
    delta: float = 2.4
    v_tol: float = 0.1
    const_leak: float = 0.0
    zeta_leak: float = 0.0
    v_ref: tuple[float, ...] | float = 0.0
    notes: str = field(default="", compare=False)

    def __post_init__(self):
        if min(self.tau, self.tau_p, self.tau_d) <= 0:
            raise ConfigError("time constants must be positive")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if not 0 <= self.v_tol < self.delta:
            raise ConfigError("v_tol must lie in [0, delta)")
        if self.const_leak < 0 or self.zeta_leak < 0 or self.k < 0:
            raise ConfigError("const_leak, zeta_leak and k must be nonnegative")
        if isinstance(self.v_ref, list):
            object.__setattr__(self, "v_ref", tuple(float(x) for x in self.v_ref))

    @property
    def v_pos(self) -> float:
        return self.delta * _atanh_checked((self.delta - self.v_tol) / self.delta)

    @property
    def v_neg(self) -> float:
        return self.delta * _atanh_checked((-self.delta + self.v_tol) / self.delta)

    def v_ref_vector(self, gen_ids) -> np.ndarray:
        """Per-DG v_ref for the given (global) generator indices."""
        gen_ids = np.asarray(gen_ids, dtype=int)
        if np.isscalar(self.v_ref):
            return np.full(gen_ids.size, float(self.v_ref))
        v = np.asarray(self.v_ref, dtype=float)
        if gen_ids.size and gen_ids.max() >= v.size:
            raise ConfigError(f"v_ref has {v.size} entries, generator {gen_ids.max()} requested")
        return v[gen_ids]

    def with_(self, **kw) -> "ControllerParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.v_ref, tuple):
            d["v_ref"] = list(self.v_ref)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown controller fields: {sorted(unknown)}")
        kw = dict(d)
        if isinstance(kw.get("v_ref"), list):
            kw["v_ref"] = tuple(float(x) for x in kw["v_ref"])
        return cls(**kw)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path) -> "ControllerParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _atanh_checked(x: float) -> float:
    if not -1.0 < x < 1.0:
        raise ConfigError(f"leakage band argument {x} outside (-1, 1); check v_tol")
    return float(np.arctanh(x))


def omega(v, params: ControllerParams):
    d = params.delta
    return params.v_star_center + d * np.tanh(np.asarray(v) / d)


def omega_prime(v, params: ControllerParams):
    c = np.cosh(np.asarray(v, dtype=float) / params.delta)
    return 1.0 / (c * c)


def rho(v, params: ControllerParams):
    v = np.asarray(v, dtype=float)
    b = params.b_steep
    return params.alpha * (
        1.0 + 0.5 * (np.tanh(b * (v - params.v_pos)) - np.tanh(b * (v - params.v_neg)))
    )


def increments(v, v_bar, params: ControllerParams):
    """Incremental nonlinearities (Omega, Gamma, chi) about ``v_bar``.

    ``chi`` is the diagonal of Omega_i / (v_i - v_bar_i), with the derivative
    limit omega'(v_bar) where the increment vanishes.
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    v_bar = np.atleast_1d(np.asarray(v_bar, dtype=float))
    big_omega = omega(v, params) - omega(v_bar, params)
    gamma = rho(v, params) * v - rho(v_bar, params) * v_bar
    dv = v - v_bar
    small = np.abs(dv) < 1e-10
    chi = np.where(small, omega_prime(v_bar, params), big_omega / np.where(small, 1.0, dv))
    return big_omega, gamma, chi


def omega_integral(v_tilde, v_bar, params: ControllerParams):
    """Closed form of the integral of Omega from 0 to v_tilde, per component."""
    d = params.delta
    v_tilde = np.asarray(v_tilde, dtype=float)
    v_bar = np.asarray(v_bar, dtype=float)
    return d * d * (_log_cosh((v_bar + v_tilde) / d) - _log_cosh(v_bar / d)) - v_tilde * d * np.tanh(v_bar / d)


def _log_cosh(x):
    return np.logaddexp(x, -x) - np.log(2.0)


@dataclass(frozen=True)
class DerivedGains:
    K1: np.ndarray
    K2: np.ndarray
    h: np.ndarray
    H: np.ndarray
    omega_prime_max: float = 1.0


def consensus_projector(n: int) -> np.ndarray:
    return np.eye(n) - np.ones((n, n)) / n


def derive_gains(spec: GridSpec | Network, params: ControllerParams) -> DerivedGains:
    net = spec.network() if isinstance(spec, GridSpec) else spec
    L = net.laplacian
    n = L.shape[0]
    eye = np.eye(n)
    K1 = np.linalg.solve(eye + params.k * L, eye)
    P = L @ K1 @ L
    P = 0.5 * (P + P.T)
    # L K1 L is singular along 1; pseudo-inverse acts on the consensus complement
    P_pinv = np.linalg.pinv(P, rcond=1e-10, hermitian=True)
    rank = np.linalg.matrix_rank(P, tol=1e-10 * max(1.0, np.abs(P).max()))
    if rank < n - 1:
        raise ConfigError(f"L K1 L has rank {rank}, expected {n - 1}")
    K2 = P_pinv @ L @ K1
    kv = params.k_v * eye
    h = kv @ (K1 - K1 @ L @ K2 - eye)
    lam = np.diag(net.lam)
    H = -0.5 * (eye + lam @ h.T)
    return DerivedGains(K1=K1, K2=K2, h=h, H=H, omega_prime_max=1.0)
