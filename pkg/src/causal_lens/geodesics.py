"""Geodesic flow, parallel transport and Jacobi fields.

A vectorized Dormand-Prince 5(4) stepper advances a batch of rows at once,
each with its own step size, affine span and stop conditions. The tableau
comes from scipy; stepping, error control, dense output and event location
are done here so that thousands of rays share one set of numpy calls.

Row state layout: ``[x (n), v (n), frame (k*n), payload (p)]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate._ivp.rk import RK45

from .errors import DomainError, EscapeError, IntegrationError, NonExitingError, StiffnessError
from .models import PointVector, inner, make_boundary_vector

RTOL = 1e-10
ATOL = 1e-10
MAX_STEPS = 200_000
ORTHO_EVERY = 50
TRANSVERSAL_MARGIN = 1e-6

_A = RK45.A
_B = RK45.B
_C = RK45.C
_E = RK45.E
_P = RK45.P

# row status codes
RUNNING, SPAN, BOUNDARY, EVENT, ESCAPE, BUDGET, STIFF = range(7)
STATUS_NAMES = {
    RUNNING: "running",
    SPAN: "span",
    BOUNDARY: "boundary",
    EVENT: "event",
    ESCAPE: "escape",
    BUDGET: "budget",
    STIFF: "stiff",
}


@dataclass
class GeodesicState:
    x: np.ndarray
    v: np.ndarray
    s: float = 0.0
    frame: list | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)


@dataclass
class JacobiState:
    A: np.ndarray
    Ap: np.ndarray

    def wronskian(self):
        return self.A.T @ self.Ap - self.Ap.T @ self.A


@dataclass
class Event:
    """Custom stop condition. ``fn(y)`` maps rows (B, D) to values (B,).

    ``direction`` +1 triggers on upward zero crossings, -1 downward, 0 both.
    """

    fn: object
    direction: int = 0


@dataclass
class FlowResult:
    y: np.ndarray
    s: np.ndarray
    status: np.ndarray
    steps: np.ndarray
    trajectory: list | None = field(default=None)

    def x(self, n):
        return self.y[:, :n]

    def v(self, n):
        return self.y[:, n : 2 * n]


def curvature_matrix(model, x, v, frames):
    """R_ij = g(E_i, Rm(E_j, v) v) for batched frames (B, k, n)."""
    Rm = model.riemann(x)
    g = model.metric(x)
    Rv = np.einsum("...bcde,...c,...jd,...e->...jb", Rm, v, frames, v)
    return np.einsum("...ia,...ab,...jb->...ij", frames, g, Rv)


class _System:
    """Right-hand side for a batch; payload terms are optional callbacks."""

    def __init__(self, model, k, payload_dim=0, payload_rhs=None):
        self.model = model
        self.n = model.n
        self.k = k
        self.p = payload_dim
        self.payload_rhs = payload_rhs

    @property
    def dim(self):
        return 2 * self.n + self.k * self.n + self.p

    def split(self, y):
        n, k = self.n, self.k
        x = y[:, :n]
        v = y[:, n : 2 * n]
        E = y[:, 2 * n : 2 * n + k * n].reshape(y.shape[0], k, n)
        P = y[:, 2 * n + k * n :]
        return x, v, E, P

    def __call__(self, y):
        x, v, E, P = self.split(y)
        G = self.model.christoffel(x)
        out = np.empty_like(y)
        n, k = self.n, self.k
        out[:, :n] = v
        out[:, n : 2 * n] = -np.einsum("bkij,bi,bj->bk", G, v, v)
        if k:
            out[:, 2 * n : 2 * n + k * n] = -np.einsum("bkij,bi,bmj->bmk", G, v, E).reshape(-1, k * n)
        if self.p:
            out[:, 2 * n + k * n :] = self.payload_rhs(self.model, x, v, E, P)
        return out


def _rk_step(sys, y, f0, h):
    K = np.empty((7,) + y.shape)
    K[0] = f0
    for i in range(1, 6):
        dy = np.tensordot(_A[i, :i], K[:i], axes=(0, 0))
        K[i] = sys(y + h[:, None] * dy)
    y_new = y + h[:, None] * np.tensordot(_B, K[:6], axes=(0, 0))
    K[6] = sys(y_new)
    err = h[:, None] * np.tensordot(_E, K, axes=(0, 0))
    return y_new, err, K


def _dense(y, h, K, theta):
    Q = np.einsum("sbd,sj->bdj", K, _P)
    powers = np.stack([theta ** (j + 1) for j in range(_P.shape[1])], axis=-1)
    return y + h[:, None] * np.einsum("bdj,bj->bd", Q, powers)


def integrate(
    sys,
    y0,
    span,
    *,
    stop_at_boundary=False,
    events=(),
    max_steps=MAX_STEPS,
    rtol=RTOL,
    atol=ATOL,
    record=False,
    charts=None,
    enforce_chart=True,
    polish_boundary=True,
):
    """Integrate rows of ``y0`` over signed affine ``span`` (array (B,)).

    ``span`` may be +-inf when a stop condition is expected. Returns a
    FlowResult in chart 0 coordinates.
    """
    model = sys.model
    n, k = sys.n, sys.k
    y = np.array(y0, dtype=float, ndmin=2)
    B = y.shape[0]
    span = np.broadcast_to(np.asarray(span, dtype=float), (B,)).copy()
    sign = np.where(span < 0, -1.0, 1.0)
    target = np.abs(span)
    s = np.zeros(B)
    status = np.full(B, RUNNING)
    status[target == 0] = SPAN
    steps = np.zeros(B, dtype=int)
    chart = np.zeros(B, dtype=int) if charts is None else np.asarray(charts).copy()
    traj = [[(0.0, y[i].copy(), int(chart[i]))] for i in range(B)] if record else None

    # chart switch at start if needed
    need = model.switch_needed(y[:, :n], chart) & (status == RUNNING)
    if model.n_charts > 1 and need.any():
        y[need], chart[need] = _switch_rows(sys, y[need], chart[need])

    speed = np.linalg.norm(y[:, n : 2 * n], axis=1)
    speed = np.where(speed > 0, speed, 1.0)
    hmax = 0.05 / speed
    h = np.minimum(np.minimum(1e-3 / speed, hmax), np.where(target > 0, target, 1.0))
    f = np.zeros_like(y)
    act = status == RUNNING
    if act.any():
        f[act] = _signed_rhs(sys, y[act], sign[act])

    ev_old = [None] * len(events)
    if events:
        for j, ev in enumerate(events):
            ev_old[j] = np.full(B, np.nan)
            ev_old[j][act] = ev.fn(_to_chart0(sys, y[act], chart[act]))
    F_old = model.boundary(y[:, :n])[0] if stop_at_boundary else None

    while True:
        act = np.flatnonzero(status == RUNNING)
        if act.size == 0:
            break
        ya = y[act]
        ha = np.minimum(h[act], target[act] - s[act])
        y_new, err, K = _rk_step(_SignedSys(sys, sign[act]), ya, f[act], ha)
        scale = atol + rtol * np.maximum(np.abs(ya), np.abs(y_new))
        enorm = np.sqrt(np.mean((err / scale) ** 2, axis=1))
        enorm = np.where(np.isfinite(enorm), enorm, np.inf)
        ok = enorm <= 1.0
        fac = np.where(enorm == 0, 10.0, 0.9 * np.where(enorm > 0, enorm, 1.0) ** -0.2)
        fac = np.clip(fac, 0.2, 10.0)
        steps[act] += 1

        # rejected rows
        rej = act[~ok]
        h[rej] = ha[~ok] * np.minimum(fac[~ok], 0.9)
        tiny = h[rej] < 1e-13 * (1.0 + s[rej])
        status[rej[tiny]] = STIFF

        acc = act[ok]
        if acc.size:
            yo, yn, Ka, hk = ya[ok], y_new[ok], K[:, ok], ha[ok]
            theta = np.ones(acc.size)
            kind = np.full(acc.size, RUNNING)
            # span end
            reach = s[acc] + hk >= target[acc] * (1 - 1e-15)
            kind[reach] = SPAN
            if stop_at_boundary:
                Fn = model.boundary(yn[:, :n])[0]
                Fo = F_old[acc]
                cross = (Fo >= 0) & (Fn < 0)
                if cross.any():
                    idx = np.flatnonzero(cross)
                    th = _bisect(
                        lambda yy: model.boundary(yy[:, :n])[0],
                        yo[idx], hk[idx], Ka[:, idx], old_vals=Fo[idx],
                    )
                    better = th <= theta[idx]
                    theta[idx[better]] = th[better]
                    kind[idx[better]] = BOUNDARY
                F_old[acc] = Fn
            for j, ev in enumerate(events):
                vn = ev.fn(_to_chart0(sys, yn, chart[acc]))
                vo = ev_old[j][acc]
                if ev.direction > 0:
                    trig = (vo < 0) & (vn >= 0)
                elif ev.direction < 0:
                    trig = (vo > 0) & (vn <= 0)
                else:
                    trig = np.sign(vo) * np.sign(vn) < 0
                ev_old[j][acc] = vn
                if trig.any():
                    idx = np.flatnonzero(trig)
                    ch = chart[acc][idx]
                    th = _bisect(
                        lambda yy, ch=ch: ev.fn(_to_chart0(sys, yy, ch)),
                        yo[idx], hk[idx], Ka[:, idx], old_vals=vo[idx],
                    )
                    better = th < theta[idx]
                    theta[idx[better]] = th[better]
                    kind[idx[better]] = EVENT
            # recompute stopped rows with an exact partial step
            stop = (kind != RUNNING) & (kind != SPAN) | ((kind == SPAN) & (theta < 1))
            if stop.any():
                idx = np.flatnonzero(stop)
                hp = hk[idx] * theta[idx]
                ys = yo[idx]
                yp, _, _ = _rk_step(_SignedSys(sys, sign[acc][idx]), ys, f[acc][idx], hp)
                yn = yn.copy()
                yn[idx] = yp
                hk = hk.copy()
                hk[idx] = hp
                if stop_at_boundary and polish_boundary:
                    bidx = idx[kind[idx] == BOUNDARY]
                    if bidx.size:
                        yn[bidx], dh = _newton_polish(sys, yn[bidx], sign[acc][bidx])
                        hk[bidx] += dh
            s[acc] += hk
            y[acc] = yn
            f_new = Ka[6].copy()
            if stop.any():
                f_new[stop] = 0.0
            f[acc] = f_new
            h[acc] = np.minimum(ha[ok] * fac[ok], hmax[acc])
            done = kind != RUNNING
            status[acc[done]] = kind[done]
            # escape
            if enforce_chart:
                out = ~model.in_chart(yn[:, :n]) & (status[acc] == RUNNING)
                status[acc[out]] = ESCAPE
            live = acc[status[acc] == RUNNING]
            # periodic frame re-orthonormalization
            if k and live.size:
                due = live[steps[live] % ORTHO_EVERY == 0]
                if due.size:
                    y[due] = _reorthonormalize(sys, y[due])
                    f[due] = _signed_rhs(sys, y[due], sign[due])
            if model.n_charts > 1 and live.size:
                sw = live[model.switch_needed(y[live, :n], chart[live])]
                if sw.size:
                    y[sw], chart[sw] = _switch_rows(sys, y[sw], chart[sw])
                    f[sw] = _signed_rhs(sys, y[sw], sign[sw])
                    if stop_at_boundary:
                        F_old[sw] = model.boundary(y[sw, :n])[0]
            if record:
                for i in acc:
                    traj[i].append((float(s[i] * sign[i]), y[i].copy(), int(chart[i])))
        over = act[(steps[act] >= max_steps) & (status[act] == RUNNING)]
        status[over] = BUDGET

    y = _to_chart0(sys, y, chart)
    y[:, :n] = model.canonicalize(y[:, :n])
    if record:
        traj = [
            [(si, _to_chart0(sys, yi[None], np.array([ci]))[0]) for si, yi, ci in rows] for rows in traj
        ]
    return FlowResult(y=y, s=s * sign, status=status, steps=steps, trajectory=traj)


class _SignedSys:
    """Integrate in |s| while the true parameter runs with ``sign``."""

    def __init__(self, sys, sign):
        self.sys = sys
        self.sign = sign

    def __call__(self, y):
        return _signed_rhs(self.sys, y, self.sign)


def _signed_rhs(sys, y, sign):
    return sys(y) * sign[:, None]


def _bisect(fn, y, h, K, old_vals=None, iters=60):
    """Locate the first sign change of fn along the dense output on (0, 1]."""
    lo = np.zeros(y.shape[0])
    hi = np.ones(y.shape[0])
    f_lo = fn(y) if old_vals is None else old_vals
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fn(_dense(y, h, K, mid))
        same = np.sign(fm) == np.sign(f_lo)
        same &= fm != 0
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
        if np.all(hi - lo < 1e-15):
            break
    return hi


def _newton_polish(sys, y, sign, iters=2):
    """Newton on F(x(s)) using dF(v); a linear step keeps v consistent."""
    model = sys.model
    n = sys.n
    total = np.zeros(y.shape[0])
    for _ in range(iters):
        F, dF = model.boundary(y[:, :n])
        rate = np.sum(dF * y[:, n : 2 * n], axis=1) * sign
        ok = np.abs(rate) > 1e-14
        dh = np.where(ok, -F / np.where(ok, rate, 1.0), 0.0)
        dh = np.clip(dh, -1e-6, 1e-6)
        if np.all(np.abs(dh) < 1e-16):
            break
        # Euler step in state is second-order accurate for |dh| <= 1e-6
        y = y + dh[:, None] * _signed_rhs(sys, y, sign)
        total += dh
    return y, total


def _reorthonormalize(sys, y):
    """Gram-Schmidt of frame vectors in the screen (orthogonal to v)."""
    model = sys.model
    x, v, E, P = sys.split(y)
    g = model.metric(x)
    out = []
    for i in range(sys.k):
        e = E[:, i, :].copy()
        for u in out:
            e = e - inner(g, e, u)[:, None] * u
        nrm = inner(g, e, e)
        out.append(e / np.sqrt(np.where(nrm > 0, nrm, 1.0))[:, None])
    y = y.copy()
    y[:, 2 * sys.n : 2 * sys.n + sys.k * sys.n] = np.stack(out, axis=1).reshape(y.shape[0], -1)
    return y


def _switch_rows(sys, y, chart):
    n, k = sys.n, sys.k
    x, v, E, P = sys.split(y)
    vecs = np.concatenate([v[:, None, :], E], axis=1)
    x2, vecs2, chart2 = sys.model.switch_chart(x, vecs, chart)
    out = y.copy()
    out[:, :n] = x2
    out[:, n : 2 * n] = vecs2[:, 0]
    if k:
        out[:, 2 * n : 2 * n + k * n] = vecs2[:, 1:].reshape(y.shape[0], -1)
    return out, chart2


def _to_chart0(sys, y, chart):
    chart = np.asarray(chart)
    if sys.model.n_charts == 1 or not np.any(chart != 0):
        return y
    y = y.copy()
    sel = chart != 0
    y[sel], _ = _switch_rows(sys, y[sel], chart[sel])
    return y


def pack(x, v, frames=None, payload=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    parts = [x, v]
    if frames is not None:
        frames = np.asarray(frames, dtype=float)
        parts.append(frames.reshape(x.shape[0], -1))
    if payload is not None:
        parts.append(np.asarray(payload, dtype=float).reshape(x.shape[0], -1))
    return np.concatenate(parts, axis=1)


def _raise_for(status, what="geodesic"):
    bad = status[(status == ESCAPE) | (status == STIFF) | (status == BUDGET)]
    if bad.size == 0:
        return
    code = bad[0]
    if code == ESCAPE:
        raise EscapeError(f"{what} left the chart box")
    if code == STIFF:
        raise StiffnessError(f"{what}: step size underflow")
    raise NonExitingError(f"{what}: affine budget exhausted")


# -- public operations ---------------------------------------------------


def flow_batch(model, x, v, ds, frames=None):
    """Flow rows (x, v[, frames]) by affine ``ds``; returns (x, v, frames)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(model.in_chart(x)):
        raise DomainError("initial point outside chart box")
    k = 0 if frames is None else np.asarray(frames).shape[1]
    sys = _System(model, k)
    res = integrate(sys, pack(x, v, frames), ds)
    _raise_for(res.status)
    xo, vo, E, _ = sys.split(res.y)
    return xo, vo, (E if k else None)


def flow(model, state, ds):
    frames = None if state.frame is None else np.asarray(state.frame, dtype=float)[None]
    x, v, E = flow_batch(model, state.x[None], state.v[None], ds, frames)
    frame = None if E is None else [e for e in E[0]]
    return GeodesicState(x[0], v[0], state.s + ds, frame)


def exit_batch(model, x, v, sign=1.0, max_affine=None, frames=None, payload_dim=0, payload_rhs=None,
               payload=None, events=(), raise_errors=True, record=False):
    """Flow rows until the boundary is crossed in the direction ``sign``.

    Returns (sys, FlowResult). ``max_affine`` defaults to a generous multiple
    of the chart box diameter divided by the speed.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    B = x.shape[0]
    k = 0 if frames is None else np.asarray(frames).shape[1]
    sys = _System(model, k, payload_dim, payload_rhs)
    if max_affine is None:
        lo = np.where(np.isfinite(model.chart_lo), model.chart_lo, -math.pi)
        hi = np.where(np.isfinite(model.chart_hi), model.chart_hi, math.pi)
        diam = float(np.linalg.norm(hi - lo))
        speed = np.linalg.norm(v, axis=1)
        max_affine = 50.0 * diam / np.where(speed > 0, speed, 1.0)
    span = np.sign(sign) * np.broadcast_to(max_affine, (B,))
    res = integrate(sys, pack(x, v, frames, payload), span, stop_at_boundary=True, events=events, record=record)
    if raise_errors:
        _raise_for(res.status)
        if np.any(res.status == SPAN):
            raise NonExitingError("no boundary crossing within the affine budget")
    return sys, res


def time_to_boundary(model, pv, direction="forward"):
    """First boundary crossing of the geodesic of ``pv``; returns (T, exit)."""
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    x = np.asarray(pv.x, dtype=float)
    if not bool(model.in_chart(x)):
        raise DomainError("point outside chart box")
    F, _ = model.boundary(x)
    if F <= 1e-9:
        raise DomainError("time_to_boundary needs a strictly interior point")
    sign = 1.0 if direction == "forward" else -1.0
    sys, res = exit_batch(model, x, pv.v, sign)
    xo, vo, _, _ = sys.split(res.y)
    return abs(float(res.s[0])), make_boundary_vector(model, xo[0], vo[0], TRANSVERSAL_MARGIN)


def time_to_boundary_batch(model, x, v, sign=1.0, raise_errors=True):
    sys, res = exit_batch(model, x, v, sign, raise_errors=raise_errors)
    xo, vo, _, _ = sys.split(res.y)
    return np.abs(res.s), xo, vo, res.status


def alpha(model, pv):
    """Boundary footprint of a lightlike vector along its past-pointing flow."""
    from .models import causal_classify

    causal, direction = causal_classify(model, pv)
    if causal != "lightlike":
        from .errors import ClassificationError

        raise ClassificationError(f"alpha needs a lightlike vector, got {causal}")
    T, bv = time_to_boundary(model, pv, "backward" if direction == "future" else "forward")
    return bv


def jacobi_rhs(model, x, v, E, P):
    m = E.shape[1]
    A = P[:, : m * m].reshape(-1, m, m)
    Ap = P[:, m * m :].reshape(-1, m, m)
    R = curvature_matrix(model, x, v, E)
    return np.concatenate([Ap.reshape(-1, m * m), -(R @ A).reshape(-1, m * m)], axis=1)


def jacobi_flow(model, state, J, ds):
    """Advance (A, A') along the lightlike geodesic of ``state`` by ``ds``."""
    frames = np.asarray(state.frame, dtype=float)[None]
    m = frames.shape[1]
    sys = _System(model, m, 2 * m * m, jacobi_rhs)
    payload = np.concatenate([np.ravel(J.A), np.ravel(J.Ap)])[None]
    res = integrate(sys, pack(state.x, state.v, frames, payload), ds)
    _raise_for(res.status, "jacobi flow")
    x, v, E, P = sys.split(res.y)
    A = P[0, : m * m].reshape(m, m)
    Ap = P[0, m * m :].reshape(m, m)
    return GeodesicState(x[0], v[0], state.s + ds, [e for e in E[0]]), JacobiState(A, Ap)


def as_point_vector(x, v):
    return PointVector(np.asarray(x, float), np.asarray(v, float))


__all__ = [
    "GeodesicState",
    "JacobiState",
    "Event",
    "FlowResult",
    "flow",
    "flow_batch",
    "time_to_boundary",
    "time_to_boundary_batch",
    "alpha",
    "jacobi_flow",
    "curvature_matrix",
    "integrate",
    "exit_batch",
    "IntegrationError",
]
