"""Norming constants ``Q_k(alpha)`` of the monomial sections.

Two independent quadrature routes compute the same number:

* rho-space: ``int_{R^m} exp(<alpha, rho> - k phi(rho)) det Hess phi(rho) d rho``
* x-space: ``int_P exp(k (u(x) + <alpha/k - x, grad u(x)>)) dx``

The torus fiber is integrated out with unit mass, so both equal the x-space
integral with Lebesgue measure on P. The Laplace approximation gives the
leading term of the large-k asymptotics at interior points.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from ._kernels import gauss_legendre, log_tensor_quadrature
from .potential import (
    NonInteriorPointError,
    SymplecticPotential,
    ToricPotential,
    _newton_batch,
    invert_moment_map,
)
from .polytope import DelzantPolytope

__all__ = [
    "QuadratureSpec",
    "NormingConstant",
    "AlphaOutsidePolytopeError",
    "BoundaryAlphaError",
    "log_norming_constants_rho",
    "log_norming_constants_x",
    "norming_constant_rho",
    "norming_constant_x",
    "norming_constant_laplace",
]

log = logging.getLogger(__name__)

# log-integrand drop that defines the integration box for boundary points
_TAIL_DROP = 40.0


class AlphaOutsidePolytopeError(ValueError):
    pass


class BoundaryAlphaError(ValueError):
    """``alpha / k`` is too close to the boundary for the Laplace formula."""


@dataclass(frozen=True)
class QuadratureSpec:
    nodes_per_axis: int = 80
    recenter: bool = True
    route: Literal["rho", "x"] = "rho"
    truncation_radius: float = 12.0
    rel_tol: float = 1e-9

    def __post_init__(self):
        if self.nodes_per_axis < 8:
            raise ValueError("nodes_per_axis must be >= 8")
        if self.truncation_radius < 4:
            raise ValueError("truncation_radius must be >= 4")
        if self.route not in ("rho", "x"):
            raise ValueError(f"route must be 'rho' or 'x', got {self.route!r}")
        if not 0 < self.rel_tol < 1:
            raise ValueError("rel_tol must lie in (0, 1)")


@dataclass(frozen=True)
class NormingConstant:
    alpha: tuple[int, ...]
    k: int
    log_value: float
    est_error: float
    route: str = "rho"
    boundary: bool = False

    @property
    def value(self) -> float:
        return float(np.exp(self.log_value))


def _check_alphas(P: DelzantPolytope, alphas: np.ndarray, k: int) -> np.ndarray:
    """Validate lattice points of kP and flag the boundary ones."""
    num = np.array([a.numerator for a in P.offsets], dtype=np.int64)
    den = np.array([a.denominator for a in P.offsets], dtype=np.int64)
    lhs = (alphas @ P.normals.T) * den
    rhs = k * num
    if np.any(lhs < rhs):
        bad = alphas[np.any(lhs < rhs, axis=1)][0]
        raise AlphaOutsidePolytopeError(f"alpha={bad.tolist()} is not in {k}P")
    return np.any(lhs == rhs, axis=1)


def _prepare_alphas(phi: ToricPotential, alphas, k: int):
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer")
    a = np.asarray(alphas)
    if not np.all(a == np.round(a)):
        raise ValueError("alpha must be an integer vector")
    a = np.atleast_2d(a.astype(np.int64))
    if phi.dim == 1 and a.shape[0] == 1 and a.shape[1] != 1:
        a = a.T
    if a.shape[1] != phi.dim:
        raise ValueError(f"alpha has dimension {a.shape[1]}, potential has {phi.dim}")
    return a, _check_alphas(phi.polytope, a, int(k))


def _log_integrand_rho(phi: ToricPotential, alphas, k, rho):
    g = np.sum(alphas * rho, axis=-1) - k * phi.value(rho) + phi.log_det_hess(rho)
    return np.where(np.isnan(g), -np.inf, g)


def _scan_extent(phi, alphas, k, center, direction, g0, drop):
    """Distance along ``direction`` until the log-integrand falls by ``drop``."""
    B = alphas.shape[0]
    lo = np.zeros(B)
    hi = np.ones(B)
    active = np.arange(B)
    for _ in range(40):
        g = _log_integrand_rho(
            phi, alphas[active], k, center[active] + hi[active, None] * direction[active]
        )
        below = g < g0[active] - drop
        lo[active[~below]] = hi[active[~below]]
        hi[active[~below]] *= 2.0
        active = active[~below]
        if active.size == 0:
            break
    for _ in range(6):
        mid = 0.5 * (lo + hi)
        g = _log_integrand_rho(phi, alphas, k, center + mid[:, None] * direction)
        b = g < g0 - drop
        hi = np.where(b, mid, hi)
        lo = np.where(b, lo, mid)
    return hi


def _slow_directions(P: DelzantPolytope) -> np.ndarray:
    """Unit directions along which integrands of near-facet points decay slowly."""
    v = P.normals.astype(float)
    dirs = [v, -v]
    R = len(v)
    for i in range(R):
        for j in range(i + 1, R):
            dirs.append(-(v[i] + v[j])[None])
            dirs.append((v[i] - v[j])[None])
    d = np.vstack(dirs)
    n = np.linalg.norm(d, axis=1)
    d = d[n > 1e-12] / n[n > 1e-12, None]
    return np.unique(np.round(d, 12), axis=0)


# lattice distance to a facet below which the slow directions are also scanned
_NEAR_FACET = 60


def _boundary_centers(phi: ToricPotential, alphas, k):
    """Approximate maximizers of the rho-space integrand for boundary lattice points."""
    P = phi.polytope
    lo, hi = P.bounding_box()
    # Chebyshev-like interior anchor: average of the box corners projected into P
    anchor = _interior_anchor(P)
    m = phi.dim
    t = (m + 1.0) / (k + m + 1.0)
    x0 = (1 - t) * alphas / k + t * anchor
    rho = _newton_batch(phi, x0, tol=1e-8, maxiter=200)
    # a few gradient-free polish steps along coordinate axes
    for _ in range(3):
        for j in range(m):
            e = np.zeros(m)
            e[j] = 1e-3
            gp = _log_integrand_rho(phi, alphas, k, rho + e)
            gm = _log_integrand_rho(phi, alphas, k, rho - e)
            g0 = _log_integrand_rho(phi, alphas, k, rho)
            d1 = (gp - gm) / 2e-3
            d2 = (gp - 2 * g0 + gm) / 1e-6
            step = np.where(d2 < 0, -d1 / np.where(d2 < 0, d2, -1.0), 0.0)
            step = np.clip(step, -2.0, 2.0)
            rho[:, j] += step
    return rho


def _interior_anchor(P: DelzantPolytope) -> np.ndarray:
    from scipy.optimize import linprog

    A = -P.normals.astype(float)
    norms = np.linalg.norm(P.normals, axis=1)
    m = P.dim
    c = np.zeros(m + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=np.hstack([A, norms[:, None]]), b_ub=-P.offsets_float,
                  bounds=[(None, None)] * m + [(0, None)], method="highs")
    return res.x[:m]


def _rho_boxes(phi: ToricPotential, alphas, k, boundary, spec: QuadratureSpec):
    """Recentered integration boxes ``(center, half_width)`` for each alpha."""
    B, m = alphas.shape
    af = alphas.astype(float)
    centers = np.empty((B, m))
    halves = np.empty((B, m))
    inner = ~boundary
    R = spec.truncation_radius
    if spec.recenter:
        if np.any(inner):
            rs = _newton_batch(phi, af[inner] / k, tol=1e-10, maxiter=200)
            lam = np.linalg.eigvalsh(phi.hess(rs))[:, 0]
            centers[inner] = rs
            halves[inner] = (R / np.sqrt(k * lam))[:, None]
        if np.any(boundary):
            centers[boundary] = _boundary_centers(phi, af[boundary], k)
            halves[boundary] = 0.0
    else:
        centers[:] = 0.0
        lam = np.linalg.eigvalsh(phi.hess(np.zeros(m)))[0]
        halves[:] = R / np.sqrt(k * lam)
    # widen every box until the integrand has decayed by _TAIL_DROP on each face
    c = centers
    g0 = _log_integrand_rho(phi, af, k, c)
    H = k * phi.hess(c)
    cov = np.linalg.inv(H)
    lo = c.copy()
    hi = c.copy()
    for j in range(m):
        d = cov[:, :, j] / np.sqrt(cov[:, j, j])[:, None]
        for sgn in (1.0, -1.0):
            t = _scan_extent(phi, af, k, c, sgn * d, g0, _TAIL_DROP)
            reach = c[:, j] + sgn * t * np.abs(d[:, j])
            lo[:, j] = np.minimum(lo[:, j], reach)
            hi[:, j] = np.maximum(hi[:, j], reach)
    slack = (alphas @ phi.polytope.normals.T) - k * phi.polytope.offsets_float
    near = np.flatnonzero(slack.min(axis=1) < _NEAR_FACET)
    if near.size:
        for d in _slow_directions(phi.polytope):
            dn = np.broadcast_to(d, (near.size, m))
            t = _scan_extent(phi, af[near], k, c[near], dn, g0[near], _TAIL_DROP)
            reach = c[near] + t[:, None] * dn
            lo[near] = np.minimum(lo[near], reach)
            hi[near] = np.maximum(hi[near], reach)
    lo = np.minimum(lo, c - halves)
    hi = np.maximum(hi, c + halves)
    return 0.5 * (lo + hi), 0.5 * (hi - lo)


_MAX_NODES = {1: 2560, 2: 640, 3: 160}


def _refine(evaluate, n: int, m: int, n_alpha: int, tol: float):
    """Gauss-Legendre on a ladder of node counts growing by ``sqrt(2)``.

    Every point starts at ``n`` with ``n / sqrt(2)`` as reference and climbs
    until two consecutive levels agree to ``tol`` or the per-dimension cap
    is hit. ``evaluate(n, idx)`` returns log-integrals for the alpha indices
    ``idx``. Returns the finest log value and its relative change from the
    previous level.
    """
    idx = np.arange(n_alpha)
    log_q = evaluate(n, idx)
    rel = np.abs(np.expm1(evaluate(max(4, int(round(n / np.sqrt(2)))), idx) - log_q))
    cap = max(n, _MAX_NODES.get(m, n))
    level = n
    step = 1
    while level < cap:
        todo = np.flatnonzero(rel > tol)
        if todo.size == 0:
            break
        level = min(cap, int(round(n * 2 ** (step / 2))))
        step += 1
        finer = evaluate(level, todo)
        rel[todo] = np.abs(np.expm1(log_q[todo] - finer))
        log_q[todo] = finer
    # roundoff floor: summing in log space loses about eps * |log Q|
    return log_q, np.maximum(rel, 64 * np.finfo(float).eps * (1.0 + np.abs(log_q)))


def log_norming_constants_rho(
    phi: ToricPotential, alphas, k: int, spec: QuadratureSpec = QuadratureSpec(), backend=None
):
    """Batch rho-space route.

    Returns ``(log_Q, rel_err, boundary)``. ``rel_err`` is the relative change
    between the last two levels of the node ladder; points are refined until
    that change is below ``spec.rel_tol``.
    """
    alphas, boundary = _prepare_alphas(phi, alphas, k)
    if np.any(boundary) and spec.recenter:
        log.debug("%d boundary lattice points at k=%d use widened boxes", boundary.sum(), k)
    centers, halves = _rho_boxes(phi, alphas, k, boundary, spec)

    def evaluate(n, idx):
        return log_tensor_quadrature(phi, alphas[idx], centers[idx], halves[idx], k, n, backend)

    log_q, rel = _refine(evaluate, spec.nodes_per_axis, phi.dim, len(alphas), spec.rel_tol)
    return log_q, rel, boundary


def _iterated_nodes(P: DelzantPolytope, n: int, window_lo, window_hi):
    """Iterated Gauss-Legendre nodes over ``P`` intersected with a box."""
    t, w = gauss_legendre(n)
    pts = np.zeros((1, 0))
    wts = np.ones(1)
    for j, (A, b) in enumerate(P.projections):
        prev = A[:, :j]
        coef = A[:, j]
        rest = b[None, :] - pts @ prev.T  # coef * x_j >= rest
        lo = np.full(pts.shape[0], window_lo[j])
        hi = np.full(pts.shape[0], window_hi[j])
        pos, neg = coef > 1e-12, coef < -1e-12
        if np.any(pos):
            lo = np.maximum(lo, np.max(rest[:, pos] / coef[pos], axis=1))
        if np.any(neg):
            hi = np.minimum(hi, np.min(rest[:, neg] / coef[neg], axis=1))
        half = np.maximum(0.5 * (hi - lo), 0.0)
        mid = 0.5 * (hi + lo)
        xj = mid[:, None] + half[:, None] * t[None, :]
        pts = np.concatenate(
            [np.repeat(pts, n, axis=0), xj.reshape(-1, 1)], axis=1
        )
        wts = (wts[:, None] * half[:, None] * w[None, :]).reshape(-1)
    keep = wts > 0
    return pts[keep], wts[keep]




_X_NODE_CACHE: dict = {}


def _x_nodes(u: SymplecticPotential, n: int):
    """Nodes over P with ``u`` and ``grad u`` evaluated there; cached per potential."""
    key = (id(u.phi), n)
    hit = _X_NODE_CACHE.get(key)
    if hit is not None and hit[0] is u.phi:
        return hit[1]
    P = u.polytope
    lo, hi = P.bounding_box()
    pts, wts = _iterated_nodes(P, n, lo, hi)
    inside = P.is_interior(pts, 0.0)
    pts, wts = pts[inside], wts[inside]
    rho = _newton_batch(u.phi, pts, tol=1e-9, maxiter=200)
    uval = np.sum(pts * rho, axis=-1) - u.phi.value(rho)
    data = (pts, np.log(wts), rho, uval)
    if len(_X_NODE_CACHE) > 16:
        _X_NODE_CACHE.clear()
    _X_NODE_CACHE[key] = (u.phi, data)
    return data


def _x_log_quadrature(u: SymplecticPotential, alphas, k, n):
    pts, logw, rho, uval = _x_nodes(u, n)
    # k (u + <alpha/k - x, grad u>) = k (u - <x, rho>) + <alpha, rho>
    base = k * (uval - np.sum(pts * rho, axis=-1)) + logw
    out = np.empty(len(alphas))
    chunk = max(1, 4_000_000 // len(pts))
    for s in range(0, len(alphas), chunk):
        g = base[None, :] + alphas[s:s + chunk] @ rho.T
        mx = g.max(axis=1)
        out[s:s + chunk] = mx + np.log(np.exp(g - mx[:, None]).sum(axis=1))
    return out


def log_norming_constants_x(
    u: SymplecticPotential, P: DelzantPolytope, alphas, k: int, spec: QuadratureSpec = QuadratureSpec()
):
    """Batch x-space route over all of P; same return convention as the rho route."""
    if P != u.polytope:
        raise ValueError("polytope does not match the symplectic potential")
    alphas, boundary = _prepare_alphas(u.phi, alphas, k)
    af = alphas.astype(float)

    def evaluate(n, idx):
        return _x_log_quadrature(u, af[idx], k, n)

    log_q, rel = _refine(evaluate, spec.nodes_per_axis, u.dim, len(alphas), spec.rel_tol)
    return log_q, rel, boundary


def _single(log_q, rel, boundary, alpha, k, route):
    lq = float(log_q[0])
    return NormingConstant(
        tuple(int(v) for v in np.ravel(alpha)), int(k), lq, float(rel[0] * np.exp(lq)),
        route, bool(boundary[0]),
    )


def norming_constant_rho(
    phi: ToricPotential, alpha, k: int, spec: QuadratureSpec = QuadratureSpec(), backend=None
) -> NormingConstant:
    a = np.asarray(alpha).reshape(1, phi.dim)
    lq, rel, bnd = log_norming_constants_rho(phi, a, k, spec, backend)
    return _single(lq, rel, bnd, a, k, "rho")


def norming_constant_x(
    u: SymplecticPotential, P: DelzantPolytope, alpha, k: int, spec: QuadratureSpec = QuadratureSpec()
) -> NormingConstant:
    a = np.asarray(alpha).reshape(1, u.dim)
    lq, rel, bnd = log_norming_constants_x(u, P, a, k, spec)
    return _single(lq, rel, bnd, a, k, "x")


def norming_constant_laplace(
    u: SymplecticPotential, alpha, k: int, margin: float = 0.02
) -> NormingConstant:
    """Leading steepest-descent term at an interior point.

    ``Q ~ k^{-m/2} (2 pi)^{m/2} |det Hess u(alpha/k)|^{-1/2} exp(k u(alpha/k))``;
    ``est_error`` is the nominal ``Q / k`` size of the dropped remainder.
    """
    a = np.asarray(alpha, dtype=np.int64).reshape(u.dim)
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer")
    x = a / k
    if not u.polytope.contains(x, 0.0):
        raise AlphaOutsidePolytopeError(f"alpha={a.tolist()} is not in {k}P")
    if not u.polytope.is_interior(x, margin):
        raise BoundaryAlphaError(
            f"alpha/k={x.tolist()} is within {margin} of the boundary of P"
        )
    try:
        uval, rho = u.evaluate(x)
    except NonInteriorPointError as exc:  # pragma: no cover - guarded above
        raise BoundaryAlphaError(str(exc)) from exc
    m = u.dim
    # log det Hess u = -log det Hess phi at the dual point
    logdet_u = -float(u.phi.log_det_hess(rho))
    lq = -0.5 * m * np.log(k) + 0.5 * m * np.log(2 * np.pi) - 0.5 * logdet_u + k * float(uval)
    return NormingConstant(tuple(int(v) for v in a), int(k), lq, float(np.exp(lq) / k), "laplace")
