"""Analytic single-chart Lorentzian manifolds with boundary.

Every model evaluates on batches: a chart point array ``x`` of shape
``(..., n)`` returns metric ``(..., n, n)``, Christoffel symbols
``G[..., k, i, j] = Gamma^k_ij`` and Riemann components
``R[..., a, b, c, d] = R^a_{bcd}`` with the convention

    R^a_{bcd} = d_c Gamma^a_{db} - d_d Gamma^a_{cb}
                + Gamma^a_{ce} Gamma^e_{db} - Gamma^a_{de} Gamma^e_{cb},

so that ``(Rm(X, Y) Z)^a = R^a_{bcd} Z^b X^c Y^d`` and the Jacobi equation
reads ``J'' + Rm(J, v) v = 0``.

The boundary is the zero set of a defining function ``F`` (positive inside).
Cornered regions are rounded by p-norm smoothing (exponent 8) of the face
distances, active only within ``cap`` of two faces at once, so faces stay
exactly flat away from edges.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ClassificationError, ConfigError, DomainError, ZeroVectorError

CLASSIFICATION_TOL = 1e-9
BOUNDARY_TOL = 1e-9
SMOOTHING_EXPONENT = 8


@dataclass(frozen=True, eq=False)
class PointVector:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))

    def scaled(self, lam):
        return PointVector(self.x, lam * self.v)


@dataclass(frozen=True, eq=False)
class BoundaryVector:
    pv: PointVector
    causal: str
    direction: str
    transversal: bool = True

    @property
    def x(self):
        return self.pv.x

    @property
    def v(self):
        return self.pv.v

    def scaled(self, lam):
        direction = self.direction if lam > 0 else _flip(self.direction)
        return BoundaryVector(self.pv.scaled(lam), self.causal, direction, self.transversal)


def _flip(direction):
    return {"future": "past", "past": "future"}.get(direction, direction)


def _face_boundary(d, dd, cap, p=SMOOTHING_EXPONENT):
    """Smoothed min of face distances.

    ``d`` has shape (..., m) (signed distances to m faces, positive inside),
    ``dd`` has shape (m, n) (constant gradients of the distances).
    Returns F = cap - ||(cap - d)_+||_p and its gradient.
    """
    w = np.clip(cap - d, 0.0, None)
    wmax = w.max(axis=-1, keepdims=True)
    safe = np.where(wmax > 0, wmax, 1.0)
    r = w / safe
    s = safe[..., 0] * np.sum(r**p, axis=-1) ** (1.0 / p)
    s = np.where(wmax[..., 0] > 0, s, 0.0)
    F = cap - s
    # dF/dx = S^(1-p) * sum_j w_j^(p-1) dd_j, written with normalized weights
    coef = np.where(
        wmax > 0, r ** (p - 1) / np.where(wmax > 0, (s[..., None] / safe), 1.0) ** (p - 1), 0.0
    )
    dF = coef @ dd
    return F, dF


@dataclass(frozen=True, eq=False)
class MetricModel:
    """Base class; concrete models override the geometric hooks."""

    n: int
    name: str = "model"
    params: dict = field(default_factory=dict)

    n_charts = 1

    # -- geometry -------------------------------------------------------
    def metric(self, x):
        raise NotImplementedError

    def christoffel(self, x):
        raise NotImplementedError

    def christoffel_derivative(self, x):
        """dG[..., c, k, i, j] = d_c Gamma^k_ij."""
        raise NotImplementedError

    def riemann(self, x):
        x = np.asarray(x, dtype=float)
        G = self.christoffel(x)
        dG = self.christoffel_derivative(x)
        return riemann_from_christoffel(G, dG)

    def tau(self, x):
        x = np.asarray(x, dtype=float)
        t = np.zeros(x.shape)
        t[..., 0] = 1.0
        return t

    def boundary(self, x):
        raise NotImplementedError

    # -- chart plumbing -------------------------------------------------
    @property
    def chart_lo(self):
        raise NotImplementedError

    @property
    def chart_hi(self):
        raise NotImplementedError

    def in_chart(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.chart_lo) & (x <= self.chart_hi), axis=-1)

    def canonicalize(self, x):
        return np.asarray(x, dtype=float)

    def switch_needed(self, x, chart):
        return np.zeros(np.shape(x)[:-1], dtype=bool)

    def switch_chart(self, x, vecs, chart):
        """Map points and a stack of tangent vectors to the other chart."""
        return x, vecs, chart

    def embed(self, x):
        """Coordinates in which Euclidean distance is chart-independent."""
        return np.asarray(x, dtype=float)

    def embed_vectors(self, x, v):
        return np.asarray(v, dtype=float)

    def chart_delta(self, x, p):
        """x - p with periodic coordinates wrapped."""
        return np.asarray(x, dtype=float) - np.asarray(p, dtype=float)

    def is_sample_safe(self, x, pole_margin=None):
        return np.ones(np.shape(x)[:-1], dtype=bool)

    def sample_candidates(self, rng, count):
        lo = np.where(np.isfinite(self.chart_lo), self.chart_lo, -math.pi)
        hi = np.where(np.isfinite(self.chart_hi), self.chart_hi, math.pi)
        return rng.uniform(lo, hi, size=(count, self.n))

    def describe(self):
        return {"name": self.name, "params": dict(self.params)}


def riemann_from_christoffel(G, dG):
    t1 = np.einsum("...cadb->...abcd", dG)
    t2 = np.einsum("...dacb->...abcd", dG)
    t3 = np.einsum("...ace,...edb->...abcd", G, G)
    t4 = np.einsum("...ade,...ecb->...abcd", G, G)
    return t1 - t2 + t3 - t4


@dataclass(frozen=True, eq=False)
class MinkowskiBlock(MetricModel):
    """Flat metric diag(-1, 1, ..., 1) on the unit cube [0, 1]^n."""

    cap: float = 0.1
    name: str = "minkowski-block"

    def __post_init__(self):
        if self.n < 3:
            raise ConfigError("models need n >= 3")
        self.params.setdefault("n", self.n)

    @property
    def eta(self):
        e = np.eye(self.n)
        e[0, 0] = -1.0
        return e

    def metric(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.eta, x.shape[:-1] + (self.n, self.n)).copy()

    def christoffel(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.n,) * 3)

    def christoffel_derivative(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.n,) * 4)

    def riemann(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.n,) * 4)

    @property
    def chart_lo(self):
        return np.full(self.n, -0.25)

    @property
    def chart_hi(self):
        return np.full(self.n, 1.25)

    def _faces(self):
        dd = np.zeros((2 * self.n, self.n))
        for i in range(self.n):
            dd[2 * i, i] = 1.0
            dd[2 * i + 1, i] = -1.0
        return dd

    def boundary(self, x):
        x = np.asarray(x, dtype=float)
        d = np.empty(x.shape[:-1] + (2 * self.n,))
        d[..., 0::2] = x
        d[..., 1::2] = 1.0 - x
        return _face_boundary(d, self._faces(), self.cap)

    def sample_candidates(self, rng, count):
        return rng.uniform(0.0, 1.0, size=(count, self.n))


@dataclass(frozen=True, eq=False)
class ConformalBlock(MinkowskiBlock):
    """Omega(x)^2 * eta on the unit cube with Omega = 1 + amp * x[axis]."""

    amp: float = 0.1
    axis: int = 1
    name: str = "conformal-block"

    def __post_init__(self):
        super().__post_init__()
        self.params.setdefault("amp", self.amp)
        self.params.setdefault("axis", self.axis)

    def omega(self, x):
        x = np.asarray(x, dtype=float)
        return 1.0 + self.amp * x[..., self.axis]

    def _log_derivs(self, x):
        x = np.asarray(x, dtype=float)
        om = self.omega(x)
        df = np.zeros(x.shape)
        df[..., self.axis] = self.amp / om
        ddf = np.zeros(x.shape + (self.n,))
        ddf[..., self.axis, self.axis] = -((self.amp / om) ** 2)
        return df, ddf

    def metric(self, x):
        om = self.omega(x)
        return (om**2)[..., None, None] * super().metric(x)

    def christoffel(self, x):
        df, _ = self._log_derivs(x)
        eye = np.eye(self.n)
        eta = self.eta
        up = df @ eta  # eta is its own inverse
        return (
            np.einsum("ki,...j->...kij", eye, df)
            + np.einsum("kj,...i->...kij", eye, df)
            - np.einsum("ij,...k->...kij", eta, up)
        )

    def christoffel_derivative(self, x):
        _, ddf = self._log_derivs(x)
        eye = np.eye(self.n)
        eta = self.eta
        up = np.einsum("kl,...lc->...kc", eta, ddf)
        return (
            np.einsum("ki,...jc->...ckij", eye, ddf)
            + np.einsum("kj,...ic->...ckij", eye, ddf)
            - np.einsum("ij,...kc->...ckij", eta, up)
        )

    def riemann(self, x):
        return MetricModel.riemann(self, x)


_Q = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True, eq=False)
class Cylinder(MetricModel):
    """[0, T] x S^2 with -dt^2 + round metric, chart (t, theta, phi).

    Chart 1 is the same coordinate form on a rotated sphere, used when a
    geodesic nears the poles of chart 0.
    """

    T: float = 3.0
    cap: float = 0.5
    pole_switch: float = 0.3
    name: str = "cylinder"
    n_charts = 2

    def __post_init__(self):
        if self.n != 3:
            raise ConfigError("cylinder model is implemented for n = 3 only")
        if self.T <= 0:
            raise ConfigError("cylinder height T must be positive")
        self.params.setdefault("T", self.T)

    def metric(self, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape[:-1] + (3, 3))
        g[..., 0, 0] = -1.0
        g[..., 1, 1] = 1.0
        g[..., 2, 2] = np.sin(x[..., 1]) ** 2
        return g

    def christoffel(self, x):
        x = np.asarray(x, dtype=float)
        th = x[..., 1]
        G = np.zeros(x.shape[:-1] + (3, 3, 3))
        G[..., 1, 2, 2] = -np.sin(th) * np.cos(th)
        cot = np.cos(th) / np.sin(th)
        G[..., 2, 1, 2] = cot
        G[..., 2, 2, 1] = cot
        return G

    def christoffel_derivative(self, x):
        x = np.asarray(x, dtype=float)
        th = x[..., 1]
        dG = np.zeros(x.shape[:-1] + (3, 3, 3, 3))
        dG[..., 1, 1, 2, 2] = -np.cos(2 * th)
        csc2 = -1.0 / np.sin(th) ** 2
        dG[..., 1, 2, 1, 2] = csc2
        dG[..., 1, 2, 2, 1] = csc2
        return dG

    def riemann(self, x):
        x = np.asarray(x, dtype=float)
        s2 = np.sin(x[..., 1]) ** 2
        R = np.zeros(x.shape[:-1] + (3, 3, 3, 3))
        R[..., 1, 2, 1, 2] = s2
        R[..., 1, 2, 2, 1] = -s2
        R[..., 2, 1, 2, 1] = 1.0
        R[..., 2, 1, 1, 2] = -1.0
        return R

    def boundary(self, x):
        x = np.asarray(x, dtype=float)
        t = x[..., 0]
        d = np.stack([t, self.T - t], axis=-1)
        dd = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        return _face_boundary(d, dd, min(self.cap, self.T / 2))

    @property
    def chart_lo(self):
        return np.array([-0.25, 0.0, -np.inf])

    @property
    def chart_hi(self):
        return np.array([self.T + 0.25, math.pi, np.inf])

    def canonicalize(self, x):
        x = np.array(x, dtype=float)
        x[..., 2] = (x[..., 2] + math.pi) % (2 * math.pi) - math.pi
        return x

    def switch_needed(self, x, chart):
        return np.abs(np.sin(np.asarray(x)[..., 1])) < self.pole_switch

    @staticmethod
    def _unit(th, ph):
        return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)

    def switch_chart(self, x, vecs, chart):
        """x: (B, 3); vecs: (B, k, 3); chart: (B,) int. Rows are all switched."""
        x = np.asarray(x, dtype=float)
        th, ph = x[:, 1], x[:, 2]
        u = self._unit(th, ph)
        e_th = np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)], axis=-1)
        e_ph = np.stack([-np.sin(ph), np.cos(ph), np.zeros_like(ph)], axis=-1)
        to1 = (chart == 0)[:, None, None]
        Rm = np.where(to1, _Q, _Q.T)
        u2 = np.einsum("bij,bj->bi", Rm, u)
        th2 = np.arccos(np.clip(u2[:, 2], -1.0, 1.0))
        ph2 = np.arctan2(u2[:, 1], u2[:, 0])
        e_th2 = np.stack([np.cos(th2) * np.cos(ph2), np.cos(th2) * np.sin(ph2), -np.sin(th2)], axis=-1)
        e_ph2 = np.stack([-np.sin(ph2), np.cos(ph2), np.zeros_like(ph2)], axis=-1)
        # tangent map: d(unit) = e_th dth + sin(th) e_ph dph
        du = vecs[..., 1:2] * e_th[:, None, :] + (np.sin(th)[:, None, None] * vecs[..., 2:3]) * e_ph[:, None, :]
        du2 = np.einsum("bij,bkj->bki", Rm, du)
        out = np.empty_like(vecs)
        out[..., 0] = vecs[..., 0]
        out[..., 1] = np.einsum("bki,bi->bk", du2, e_th2)
        out[..., 2] = np.einsum("bki,bi->bk", du2, e_ph2) / np.sin(th2)[:, None]
        x2 = np.stack([x[:, 0], th2, ph2], axis=-1)
        return x2, out, 1 - chart

    def embed(self, x):
        x = np.asarray(x, dtype=float)
        return np.concatenate([x[..., :1], self._unit(x[..., 1], x[..., 2])], axis=-1)

    def embed_vectors(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        th, ph = x[..., 1], x[..., 2]
        e_th = np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)], axis=-1)
        e_ph = np.stack([-np.sin(ph), np.cos(ph), np.zeros_like(ph)], axis=-1)
        spatial = v[..., 1:2] * e_th + (np.sin(th) * v[..., 2])[..., None] * e_ph
        return np.concatenate([v[..., :1], spatial], axis=-1)

    def chart_delta(self, x, p):
        d = np.asarray(x, dtype=float) - np.asarray(p, dtype=float)
        d[..., 2] = (d[..., 2] + math.pi) % (2 * math.pi) - math.pi
        return d

    def is_sample_safe(self, x, pole_margin=None):
        pole_margin = 0.05 if pole_margin is None else pole_margin
        th = np.asarray(x)[..., 1]
        return (th > pole_margin) & (th < math.pi - pole_margin)

    def sample_candidates(self, rng, count):
        t = rng.uniform(0.0, self.T, size=count)
        z = rng.uniform(-1.0, 1.0, size=count)
        ph = rng.uniform(-math.pi, math.pi, size=count)
        return np.stack([t, np.arccos(z), ph], axis=-1)


MODEL_NAMES = ("minkowski-block", "cylinder", "conformal-block")


def make_model(name, n=3, **params):
    """Build a model by CLI name. Unknown parameters are rejected."""
    try:
        if name == "minkowski-block":
            return MinkowskiBlock(n=int(n), **params)
        if name == "cylinder":
            T = float(params.pop("T", 3.0))
            return Cylinder(n=int(n), T=T, **params)
        if name == "conformal-block":
            return ConformalBlock(n=int(n), **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for model {name!r}: {exc}") from exc
    raise ConfigError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")


def model_from_description(desc):
    params = dict(desc.get("params", {}))
    n = params.pop("n", 3)
    return make_model(desc["name"], n=n, **params)


# -- single-vector operations ------------------------------------------


def _check_domain(model, x):
    if not bool(model.in_chart(x)):
        raise DomainError(f"point {np.asarray(x).tolist()} outside chart box of {model.name}")


def metric_at(model, x):
    x = np.asarray(x, dtype=float)
    _check_domain(model, x)
    g = model.metric(x)
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def inner(g, u, w):
    return np.einsum("...i,...ij,...j->...", u, g, w)


def classify(g, v, tau, tol=CLASSIFICATION_TOL):
    """Vectorized causal/direction tags; returns (causal, direction) arrays of str."""
    q = inner(g, v, v)
    scale = np.sum(v * v, axis=-1)
    causal = np.where(np.abs(q) <= tol * scale, "lightlike", np.where(q < 0, "timelike", "spacelike"))
    direction = np.where(inner(g, v, tau) < 0, "future", "past")
    return causal, direction


def causal_classify(model, pv, tol=CLASSIFICATION_TOL):
    v = np.asarray(pv.v, dtype=float)
    norm2 = float(v @ v)
    if norm2 == 0.0:
        raise ZeroVectorError("zero vector has no causal type")
    if norm2 < 1e-24:
        warnings.warn("vector norm below 1e-12; causal tag is ill-conditioned", RuntimeWarning)
    g = metric_at(model, pv.x)
    causal, direction = classify(g, v, model.tau(pv.x), tol)
    return str(causal), str(direction)


def normalize_timelike(model, pv):
    causal, _ = causal_classify(model, pv)
    if causal != "timelike":
        raise ClassificationError(f"expected a timelike vector, got {causal}")
    g = metric_at(model, pv.x)
    return PointVector(pv.x, pv.v / math.sqrt(-inner(g, pv.v, pv.v)))


def screen_frames(g, v, tau):
    """Batch screen frames: (..., n-2, n) g-orthonormal vectors orthogonal to
    the lightlike v and to the unit time direction."""
    n = v.shape[-1]
    that = tau / np.sqrt(-inner(g, tau, tau))[..., None]
    spatial = v + inner(g, v, that)[..., None] * that
    shat = spatial / np.sqrt(inner(g, spatial, spatial))[..., None]
    basis = []
    for i in range(n):
        e = np.zeros(v.shape)
        e[..., i] = 1.0
        for u, sign in ((that, -1.0), (shat, 1.0)):
            e = e - sign * inner(g, e, u)[..., None] * u
        for u in basis:
            e = e - inner(g, e, u)[..., None] * u
        nrm2 = inner(g, e, e)
        basis.append((e, nrm2))
        # keep the normalized vector, or a zero marker if degenerate
        ok = nrm2 > 1e-8
        basis[-1] = np.where(ok[..., None], e / np.sqrt(np.where(ok, nrm2, 1.0))[..., None], 0.0)
    stack = np.stack(basis, axis=-2)
    norms = np.sum(stack * stack, axis=-1)
    # pick the first n-2 nondegenerate vectors, preserving coordinate order
    order = np.argsort(norms == 0, axis=-1, kind="stable")[..., : n - 2]
    return np.take_along_axis(stack, order[..., None], axis=-2)


def screen_frame(model, pv):
    causal, _ = causal_classify(model, pv)
    if causal != "lightlike":
        raise ClassificationError(f"screen frame needs a lightlike vector, got {causal}")
    g = metric_at(model, pv.x)
    frame = screen_frames(g, np.asarray(pv.v, float), model.tau(pv.x))
    return [frame[i] for i in range(model.n - 2)]


def boundary_eval(model, x):
    x = np.asarray(x, dtype=float)
    _check_domain(model, x)
    F, dF = model.boundary(x)
    return float(F), dF


def make_boundary_vector(model, x, v, margin=1e-6):
    x = model.canonicalize(np.asarray(x, dtype=float))
    v = np.asarray(v, dtype=float)
    g = model.metric(x)
    causal, direction = classify(g, v, model.tau(x))
    return BoundaryVector(PointVector(x, v), str(causal), str(direction), bool(is_transversal(model, x, v, margin)))


def is_transversal(model, x, v, margin=1e-6):
    _, dF = model.boundary(x)
    grad = np.einsum("...ij,...j->...i", np.linalg.inv(model.metric(x)), dF)
    lhs = np.abs(np.sum(dF * v, axis=-1))
    return lhs > margin * np.linalg.norm(v, axis=-1) * np.linalg.norm(grad, axis=-1)


def project_to_cone(g, v):
    """Rescale the time component of v so that g(v, v) = 0.

    The root closest to the current time component is taken; the spatial
    components are never altered.
    """
    v = np.array(v, dtype=float)
    A = g[..., 0, 0]
    Bq = 2.0 * np.einsum("...i,...i->...", g[..., 0, 1:], v[..., 1:])
    C = np.einsum("...i,...ij,...j->...", v[..., 1:], g[..., 1:, 1:], v[..., 1:])
    disc = np.sqrt(np.maximum(Bq * Bq - 4 * A * C, 0.0))
    r1 = (-Bq + disc) / (2 * A)
    r2 = (-Bq - disc) / (2 * A)
    v[..., 0] = np.where(np.abs(r1 - v[..., 0]) <= np.abs(r2 - v[..., 0]), r1, r2)
    return v


def orthonormal_frame(model, x):
    """g-orthonormal frame at x (rows), first vector the unit future time direction."""
    x = np.asarray(x, dtype=float)
    g = model.metric(x)
    tau = model.tau(x)
    e0 = tau / np.sqrt(-inner(g, tau, tau))[..., None]
    vecs = [e0]
    for i in range(1, model.n):
        e = np.zeros(x.shape)
        e[..., i] = 1.0
        for j, u in enumerate(vecs):
            sgn = -1.0 if j == 0 else 1.0
            e = e - sgn * inner(g, e, u)[..., None] * u
        e = e / np.sqrt(inner(g, e, e))[..., None]
        vecs.append(e)
    return np.stack(vecs, axis=-2)
