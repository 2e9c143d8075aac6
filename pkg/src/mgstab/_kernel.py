"""Compiled fixed-step RK4 for one event-free segment.

State layouts match ``FullState`` / ``ReducedState`` vectors. Communication
delays read sender values from a ring buffer of past step-end samples with
linear interpolation; a delay of zero uses the live stage value.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _deriv(x, dx, ng, nl, nk, gbus, la, lb, rg, lg, re, le, cn, gc, ic, lamr, adj,
           tau, taup, taud, kv, kk, vstar, dlt, alpha, bst, vpos, vneg, bl, bz, vref,
           active, reduced, k1, lap, seen_l, seen_z, use_seen, share, work):
    ovn = ng + nl
    ov = ovn + nk
    ol = ov + ng
    oz = ol if reduced else ol + ng
    for k in range(nk):
        dx[ovn + k] = -gc[k] * x[ovn + k] - ic[k]
    for i in range(ng):
        u = vstar + dlt * np.tanh(x[ov + i] / dlt)
        b = gbus[i]
        dx[i] = (u - x[ovn + b] - rg[i] * x[i]) / lg[i]
        dx[ovn + b] += x[i]
        share[i] = lamr[i] * x[i]
    for j in range(nl):
        a = la[j]
        c = lb[j]
        dx[ng + j] = (-(x[ovn + a] - x[ovn + c]) - re[j] * x[ng + j]) / le[j]
        dx[ovn + a] += x[ng + j]
        dx[ovn + c] -= x[ng + j]
    for k in range(nk):
        dx[ovn + k] /= cn[k]

    if not active:
        for i in range(ng):
            dx[ov + i] = 0.0
            dx[oz + i] = 0.0
            if not reduced:
                dx[ol + i] = (share[i] - x[ol + i]) / taup[i]
        return

    if reduced:
        # work[:ng] = lambda = K1 (share - L zeta); work[ng:] = L lambda
        for i in range(ng):
            acc = 0.0
            for j in range(ng):
                acc += lap[i, j] * x[oz + j]
            work[ng + i] = share[i] - acc
        for i in range(ng):
            acc = 0.0
            for j in range(ng):
                acc += k1[i, j] * work[ng + j]
            work[i] = acc
        for i in range(ng):
            acc = 0.0
            for j in range(ng):
                acc += lap[i, j] * work[j]
            work[ng + i] = acc
        for i in range(ng):
            v = x[ov + i]
            rho = alpha * (1.0 + 0.5 * (np.tanh(bst * (v - vpos)) - np.tanh(bst * (v - vneg))))
            dx[ov + i] = (-rho * v + kv[i] * (work[i] - share[i]) - bl[i] * (v - vref[i])) / tau[i]
            dx[oz + i] = (work[ng + i] - bz * x[oz + i]) / taud[i]
        return

    for i in range(ng):
        llam = 0.0
        lz = 0.0
        for j in range(ng):
            a = adj[i, j]
            if a != 0.0:
                if use_seen:
                    lj = seen_l[i, j]
                    zj = seen_z[i, j]
                else:
                    lj = x[ol + j]
                    zj = x[oz + j]
                llam += a * (x[ol + i] - lj)
                lz += a * (x[oz + i] - zj)
        v = x[ov + i]
        rho = alpha * (1.0 + 0.5 * (np.tanh(bst * (v - vpos)) - np.tanh(bst * (v - vneg))))
        dx[ov + i] = (-rho * v + kv[i] * (x[ol + i] - share[i]) - bl[i] * (v - vref[i])) / tau[i]
        dx[ol + i] = (share[i] - x[ol + i] - lz - kk * llam) / taup[i]
        dx[oz + i] = (llam - bz * x[oz + i]) / taud[i]


@njit(cache=True)
def _hist_value(hist_t, hist_v, head, count, col, tq):
    nbuf = hist_t.shape[0]
    if tq >= hist_t[head]:
        return hist_v[head, col]
    oldest = (head - count + 1) % nbuf
    if tq <= hist_t[oldest]:
        return hist_v[oldest, col]
    lo = 0
    hi = count - 1
    # invariant: t(lo) <= tq < t(hi), logical indices from the oldest sample
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if hist_t[(oldest + mid) % nbuf] <= tq:
            lo = mid
        else:
            hi = mid
    p0 = (oldest + lo) % nbuf
    p1 = (oldest + hi) % nbuf
    t0 = hist_t[p0]
    t1 = hist_t[p1]
    w = (tq - t0) / (t1 - t0)
    return hist_v[p0, col] + w * (hist_v[p1, col] - hist_v[p0, col])


@njit(cache=True)
def _fill_seen(xs, t, ng, ol, oz, adj, delay, gid, hist_t, hist_l, hist_z, head, count, seen_l, seen_z):
    for i in range(ng):
        for j in range(ng):
            if adj[i, j] != 0.0:
                d = delay[i, j]
                if d > 0.0:
                    seen_l[i, j] = _hist_value(hist_t, hist_l, head, count, gid[j], t - d)
                    seen_z[i, j] = _hist_value(hist_t, hist_z, head, count, gid[j], t - d)
                else:
                    seen_l[i, j] = xs[ol + j]
                    seen_z[i, j] = xs[oz + j]


@njit(cache=True)
def rk4_segment(x0, t0, t1, dt, stride, ng, nl, nk, gbus, la, lb, rg, lg, re, le, cn, gc, ic,
                lamr, adj, tau, taup, taud, kv, kk, vstar, dlt, alpha, bst, vpos, vneg, bl, bz,
                vref, active, reduced, k1, lap, delay, use_delay, gid, hist_t, hist_l, hist_z,
                hist_head, hist_count, frozen_l, frozen_z, out_t, out_x):
    """Integrate from t0 to t1. Returns (x, n_stored, status, t_fail, head, count).

    status 0 = ok, 1 = non-finite state. Samples are written every ``stride``
    steps and at t1.
    """
    n = x0.shape[0]
    x = x0.copy()
    k1v = np.empty(n)
    k2v = np.empty(n)
    k3v = np.empty(n)
    k4v = np.empty(n)
    xs = np.empty(n)
    share = np.empty(ng)
    work = np.empty(2 * ng)
    seen_l = np.zeros((ng, ng))
    seen_z = np.zeros((ng, ng))
    ov = ng + nl + nk
    ol = ov + ng
    oz = ol + ng
    use_seen = use_delay and active and not reduced
    head = hist_head
    count = hist_count
    nbuf = hist_t.shape[0]

    n_steps = int(np.ceil((t1 - t0) / dt - 1e-9))
    if n_steps < 1:
        n_steps = 1
    stored = 0
    t = t0
    for step in range(n_steps):
        h = dt
        if step == n_steps - 1:
            h = t1 - t
        if use_seen:
            _fill_seen(x, t, ng, ol, oz, adj, delay, gid, hist_t, hist_l, hist_z, head, count, seen_l, seen_z)
        _deriv(x, k1v, ng, nl, nk, gbus, la, lb, rg, lg, re, le, cn, gc, ic, lamr, adj, tau, taup, taud,
               kv, kk, vstar, dlt, alpha, bst, vpos, vneg, bl, bz, vref, active, reduced, k1, lap,
               seen_l, seen_z, use_seen, share, work)
        for m in range(n):
            xs[m] = x[m] + 0.5 * h * k1v[m]
        if use_seen:
            _fill_seen(xs, t + 0.5 * h, ng, ol, oz, adj, delay, gid, hist_t, hist_l, hist_z, head, count, seen_l, seen_z)
        _deriv(xs, k2v, ng, nl, nk, gbus, la, lb, rg, lg, re, le, cn, gc, ic, lamr, adj, tau, taup, taud,
               kv, kk, vstar, dlt, alpha, bst, vpos, vneg, bl, bz, vref, active, reduced, k1, lap,
               seen_l, seen_z, use_seen, share, work)
        for m in range(n):
            xs[m] = x[m] + 0.5 * h * k2v[m]
        if use_seen:
            _fill_seen(xs, t + 0.5 * h, ng, ol, oz, adj, delay, gid, hist_t, hist_l, hist_z, head, count, seen_l, seen_z)
        _deriv(xs, k3v, ng, nl, nk, gbus, la, lb, rg, lg, re, le, cn, gc, ic, lamr, adj, tau, taup, taud,
               kv, kk, vstar, dlt, alpha, bst, vpos, vneg, bl, bz, vref, active, reduced, k1, lap,
               seen_l, seen_z, use_seen, share, work)
        for m in range(n):
            xs[m] = x[m] + h * k3v[m]
        if use_seen:
            _fill_seen(xs, t + h, ng, ol, oz, adj, delay, gid, hist_t, hist_l, hist_z, head, count, seen_l, seen_z)
        _deriv(xs, k4v, ng, nl, nk, gbus, la, lb, rg, lg, re, le, cn, gc, ic, lamr, adj, tau, taup, taud,
               kv, kk, vstar, dlt, alpha, bst, vpos, vneg, bl, bz, vref, active, reduced, k1, lap,
               seen_l, seen_z, use_seen, share, work)
        for m in range(n):
            x[m] += h / 6.0 * (k1v[m] + 2.0 * k2v[m] + 2.0 * k3v[m] + k4v[m])
        t = t0 + (step + 1) * dt if step < n_steps - 1 else t1

        if use_delay and not reduced:
            head = (head + 1) % nbuf
            if count < nbuf:
                count += 1
            hist_t[head] = t
            for c in range(frozen_l.shape[0]):
                hist_l[head, c] = frozen_l[c]
                hist_z[head, c] = frozen_z[c]
            for i in range(ng):
                hist_l[head, gid[i]] = x[ol + i]
                hist_z[head, gid[i]] = x[oz + i]

        if (step + 1) % stride == 0 or step == n_steps - 1:
            ok = True
            for m in range(n):
                if not np.isfinite(x[m]):
                    ok = False
                    break
            if not ok:
                return x, stored, 1, t, head, count
            out_t[stored] = t
            for m in range(n):
                out_x[stored, m] = x[m]
            stored += 1
    return x, stored, 0, t, head, count
