"""Closed-loop right-hand sides of the full and the reduced model.

These are the reference (numpy) implementations. The time integrator uses a
compiled kernel with the same equations; tests compare the two.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .control import ControllerParams, DerivedGains, derive_gains, omega, rho
from .grid import GridSpec, Network


class DimensionError(ValueError):
    pass


@dataclass
class FullState:
    i_gen: np.ndarray
    i_line: np.ndarray
    v_node: np.ndarray
    v_ctrl: np.ndarray
    lam: np.ndarray
    zeta: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(getattr(self, f.name), dtype=float) for f in fields(self)])

    @classmethod
    def from_vector(cls, x, net: Network) -> "FullState":
        sizes = cls.sizes(net)
        x = np.asarray(x, dtype=float)
        if x.size != sum(sizes):
            raise DimensionError(f"state has {x.size} entries, expected {sum(sizes)}")
        parts = np.split(x, np.cumsum(sizes)[:-1])
        return cls(*[p.copy() for p in parts])

    @staticmethod
    def sizes(net: Network) -> list[int]:
        g, j, k = net.n_gen, net.n_line, net.n_bus
        return [g, j, k, g, g, g]

    def check(self, net: Network) -> None:
        for f, n in zip(fields(self), self.sizes(net)):
            if np.shape(getattr(self, f.name)) != (n,):
                raise DimensionError(f"{f.name} has shape {np.shape(getattr(self, f.name))}, expected ({n},)")


@dataclass
class ReducedState:
    i_gen: np.ndarray
    i_line: np.ndarray
    v_node: np.ndarray
    v_ctrl: np.ndarray
    zeta: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(getattr(self, f.name), dtype=float) for f in fields(self)])

    @classmethod
    def from_vector(cls, x, net: Network) -> "ReducedState":
        sizes = cls.sizes(net)
        x = np.asarray(x, dtype=float)
        if x.size != sum(sizes):
            raise DimensionError(f"state has {x.size} entries, expected {sum(sizes)}")
        parts = np.split(x, np.cumsum(sizes)[:-1])
        return cls(*[p.copy() for p in parts])

    @staticmethod
    def sizes(net: Network) -> list[int]:
        g, j, k = net.n_gen, net.n_line, net.n_bus
        return [g, j, k, g, g]

    def check(self, net: Network) -> None:
        for f, n in zip(fields(self), self.sizes(net)):
            if np.shape(getattr(self, f.name)) != (n,):
                raise DimensionError(f"{f.name} has shape {np.shape(getattr(self, f.name))}, expected ({n},)")


def _net(spec) -> Network:
    return spec.network() if isinstance(spec, GridSpec) else spec


def _laplacian_term(adj, x, seen=None):
    """(L x)_i = sum_j a_ij (x_i - x_j), with x_j replaced by seen[i, j] if given."""
    if seen is None:
        return (np.diag(adj.sum(axis=1)) - adj) @ x
    return adj.sum(axis=1) * x - (adj * seen).sum(axis=1)


def electrical_derivative(net: Network, u, i_gen, i_line, v_node):
    di_g = (u - net.beta_g @ v_node - net.r_g * i_gen) / net.l_g
    di_e = (-net.beta_e @ v_node - net.r_e * i_line) / net.l_e
    dv_n = (net.beta_e.T @ i_line + net.beta_g.T @ i_gen - net.g_cte * v_node - net.i_cte) / net.c_n
    return di_g, di_e, dv_n


def full_derivative(
    state: FullState,
    spec: GridSpec | Network,
    params: ControllerParams,
    delayed_neighbor_values: dict | None = None,
    controller_active: bool = True,
) -> FullState:
    """Time derivative of the full closed loop.

    ``delayed_neighbor_values`` may hold ``"lam"`` and ``"zeta"`` matrices where
    entry [i, j] is DG j's value as currently received by DG i.
    """
    net = _net(spec)
    state.check(net)
    s = state
    di_g, di_e, dv_n = electrical_derivative(net, omega(s.v_ctrl, params), s.i_gen, s.i_line, s.v_node)
    share = net.lam * s.i_gen
    n = net.n_gen
    if not controller_active:
        # outer loop and regulator idle; lambda only filters the local measurement
        zero = np.zeros(n)
        return FullState(di_g, di_e, dv_n, zero, (share - s.lam) / params.tau_p, zero.copy())
    seen_l = seen_z = None
    if delayed_neighbor_values is not None:
        seen_l = delayed_neighbor_values.get("lam")
        seen_z = delayed_neighbor_values.get("zeta")
    adj = net.adjacency
    l_lam = _laplacian_term(adj, s.lam, seen_l)
    l_zeta = _laplacian_term(adj, s.zeta, seen_z)
    v_ref = params.v_ref_vector(net.gen_ids)
    dv = (-rho(s.v_ctrl, params) * s.v_ctrl + params.k_v * (s.lam - share)
          - params.const_leak * (s.v_ctrl - v_ref)) / params.tau
    dl = (share - s.lam - l_zeta - params.k * l_lam) / params.tau_p
    dz = (l_lam - params.zeta_leak * s.zeta) / params.tau_d
    return FullState(di_g, di_e, dv_n, dv, dl, dz)


def algebraic_lambda(i_gen, zeta, net: Network, gains: DerivedGains) -> np.ndarray:
    """Quasi-steady lambda = K1 Lambda I - K1 L zeta."""
    return gains.K1 @ (net.lam * i_gen) - gains.K1 @ net.laplacian @ zeta


def reduced_derivative(
    state: ReducedState,
    spec: GridSpec | Network,
    params: ControllerParams,
    gains: DerivedGains | None = None,
    controller_active: bool = True,
) -> ReducedState:
    net = _net(spec)
    state.check(net)
    if gains is None:
        gains = derive_gains(net, params)
    s = state
    di_g, di_e, dv_n = electrical_derivative(net, omega(s.v_ctrl, params), s.i_gen, s.i_line, s.v_node)
    n = net.n_gen
    if not controller_active:
        zero = np.zeros(n)
        return ReducedState(di_g, di_e, dv_n, zero, zero.copy())
    L = net.laplacian
    share = net.lam * s.i_gen
    lam = algebraic_lambda(s.i_gen, s.zeta, net, gains)
    v_ref = params.v_ref_vector(net.gen_ids)
    dv = (-rho(s.v_ctrl, params) * s.v_ctrl + params.k_v * (lam - share)
          - params.const_leak * (s.v_ctrl - v_ref)) / params.tau
    dz = (L @ gains.K1 @ share - L @ gains.K1 @ L @ s.zeta - params.zeta_leak * s.zeta) / params.tau_d
    return ReducedState(di_g, di_e, dv_n, dv, dz)


def full_inertia(net: Network, params: ControllerParams) -> np.ndarray:
    """Diagonal multiplying the full-state derivative: (L^G, L^E, C^N, tau, tau_p, tau_d)."""
    n = net.n_gen
    return np.concatenate([
        net.l_g, net.l_e, net.c_n,
        np.full(n, params.tau), np.full(n, params.tau_p), np.full(n, params.tau_d),
    ])


def full_rhs(x, net: Network, params: ControllerParams) -> np.ndarray:
    return full_derivative(FullState.from_vector(x, net), net, params).to_vector()


def reduced_rhs(x, net: Network, params: ControllerParams, gains: DerivedGains) -> np.ndarray:
    return reduced_derivative(ReducedState.from_vector(x, net), net, params, gains).to_vector()


def electrical_steady_state(net: Network, u) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linear power flow: electrical equilibrium for fixed source voltages ``u``."""
    # nodal form: (beta_g^T R_g^-1 beta_g + beta_e^T R_e^-1 beta_e + G) V = beta_g^T R_g^-1 u - I_cte
    y = net.beta_g.T @ np.diag(1 / net.r_g) @ net.beta_g + net.beta_e.T @ np.diag(1 / net.r_e) @ net.beta_e
    y = y + np.diag(net.g_cte)
    rhs = net.beta_g.T @ (np.asarray(u) / net.r_g) - net.i_cte
    v_node = np.linalg.solve(y, rhs)
    i_gen = (u - net.beta_g @ v_node) / net.r_g
    i_line = -(net.beta_e @ v_node) / net.r_e
    return i_gen, i_line, v_node


def initial_state(net: Network, params: ControllerParams, v_ctrl=None) -> FullState:
    """Electrical steady state for the given regulator states, lambda = Lambda I, zeta = 0."""
    n = net.n_gen
    v = np.zeros(n) if v_ctrl is None else np.asarray(v_ctrl, dtype=float)
    i_gen, i_line, v_node = electrical_steady_state(net, omega(v, params))
    return FullState(i_gen, i_line, v_node, v.copy(), net.lam * i_gen, np.zeros(n))
