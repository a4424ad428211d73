"""Gaussian targets, test functions and error sweeps for the lattice measures.

Every error function takes a :class:`~toric_clt.bergman.BergmanModel`, a
base point and a level ``k``; :func:`sweep` runs one over a list of levels and
:func:`fit_rate` turns the result into a log-log convergence order.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np

from .bergman import (
    BergmanMeasure,
    BergmanModel,
    build_measure,
    char_fn,
    moments,
    recentered_dilated,
)
from .potential import BasePoint, SymplecticPotential
from .quadrature import norming_constant_laplace

__all__ = [
    "GaussianLaw",
    "TestFunction",
    "ConvergenceReport",
    "EmptyWindowError",
    "RateFitError",
    "default_test_functions",
    "default_t_grid",
    "gaussian_integral",
    "integrate_against_dilated",
    "clt_error",
    "llt_error",
    "charfn_error",
    "mean_error",
    "covariance_error",
    "density_error",
    "laplace_ratio_error",
    "mass_outside",
    "fit_rate",
    "sweep",
]


def _points(x, m: int) -> np.ndarray:
    """``(..., m)`` view of ``x``; in one dimension a bare array is a list of points."""
    x = np.asarray(x, dtype=float)
    if m == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    return x


class RateFitError(ValueError):
    """Errors that cannot be fitted on a log-log scale (too few, zero or negative)."""


class EmptyWindowError(ValueError):
    """No lattice point falls in the local-limit window."""


@dataclass(frozen=True)
class GaussianLaw:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match the mean")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov)[0] <= 0:
            raise ValueError("covariance must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def logpdf(self, x) -> np.ndarray:
        x = _points(x, self.dim)
        d = x.reshape(-1, self.dim) - self.mean
        L = np.linalg.cholesky(self.covariance)
        y = np.linalg.solve(L, d.T)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        out = -0.5 * np.sum(y * y, axis=0) - 0.5 * self.dim * np.log(2 * np.pi) - 0.5 * logdet
        return out.reshape(x.shape[:-1])

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))


@dataclass(frozen=True)
class TestFunction:
    """``amplitude * w(x)`` or ``amplitude * cos(<xi, x - a>) w(x)``, ``w = exp(-|x - a|^2 / 2 s^2)``."""

    __test__ = False  # keep pytest from collecting this class

    kind: Literal["gaussian-bump", "cosine-gaussian"]
    center: tuple[float, ...]
    width: float
    freq: tuple[float, ...] | None = None
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian-bump", "cosine-gaussian"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if not self.width > 0:
            raise ValueError("width must be positive")
        c = tuple(float(v) for v in np.atleast_1d(self.center))
        object.__setattr__(self, "center", c)
        if self.kind == "cosine-gaussian":
            if self.freq is None:
                raise ValueError("cosine-gaussian needs a frequency")
            xi = tuple(float(v) for v in np.atleast_1d(self.freq))
            if len(xi) != len(c):
                raise ValueError("frequency and center dimensions differ")
            object.__setattr__(self, "freq", xi)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def label(self) -> str:
        a = ",".join(f"{v:g}" for v in self.center)
        if self.kind == "gaussian-bump":
            return f"bump(s={self.width:g};a={a})"
        xi = ",".join(f"{v:g}" for v in self.freq)
        return f"cos(s={self.width:g};a={a};xi={xi})"

    def __call__(self, x) -> np.ndarray:
        x = _points(x, self.dim)
        d = x.reshape(-1, self.dim) - np.array(self.center)
        out = np.exp(-0.5 * np.sum(d * d, axis=1) / self.width**2)
        if self.kind == "cosine-gaussian":
            out = out * np.cos(d @ np.array(self.freq))
        out = self.amplitude * out
        return out.reshape(x.shape[:-1])

    def scaled(self, c: float) -> "TestFunction":
        return TestFunction(self.kind, self.center, self.width, self.freq, self.amplitude * c)


def default_test_functions(m: int) -> list[TestFunction]:
    """Five gaussian bumps and four cosine-gaussians with ``|xi| <= 2``."""
    zero = (0.0,) * m
    e1 = (0.7,) + (0.0,) * (m - 1)
    fs = [TestFunction("gaussian-bump", zero, s) for s in (0.5, 1.0, 2.0)]
    fs += [TestFunction("gaussian-bump", e1, s) for s in (0.5, 1.0)]
    freqs = [(c,) + (0.0,) * (m - 1) for c in (0.5, 1.0, 1.5)]
    freqs.append((2.0,) if m == 1 else (np.sqrt(2.0), np.sqrt(2.0)) + (0.0,) * (m - 2))
    fs += [TestFunction("cosine-gaussian", zero, 1.0, xi) for xi in freqs]
    return fs


def gaussian_integral(f: TestFunction, gamma: GaussianLaw) -> float:
    """Closed-form ``int f d gamma``.

    With ``y = x - a ~ N(c, S)``, ``B = I / s^2`` and ``b = i xi`` (zero for a
    bump), ``E exp(-y'By/2 + b'y) = det(I + S B)^{-1/2}
    exp((b + S^-1 c)' (B + S^-1)^-1 (b + S^-1 c) / 2 - c' S^-1 c / 2)``.
    """
    if f.dim != gamma.dim:
        raise ValueError("test function and gaussian dimensions differ")
    m = f.dim
    S = gamma.covariance
    c = gamma.mean - np.array(f.center)
    Si = np.linalg.inv(S)
    B = np.eye(m) / f.width**2
    b = 1j * np.array(f.freq) if f.kind == "cosine-gaussian" else np.zeros(m)
    v = b + Si @ c
    quad = v @ np.linalg.solve(B + Si, v)
    _, logdet = np.linalg.slogdet(np.eye(m) + S @ B)
    val = np.exp(0.5 * quad - 0.5 * c @ Si @ c - 0.5 * logdet)
    return float(f.amplitude * np.real(val))


def integrate_against_dilated(f: TestFunction, dilated) -> float:
    pts = np.asarray(dilated.points, dtype=float).reshape(-1, f.dim)
    return float(np.sum(f(pts) * dilated.probs))


def _target(model: BergmanModel, z: BasePoint) -> GaussianLaw:
    return GaussianLaw(np.zeros(model.dim), model.phi.hess(np.asarray(z.rho)))


def _measure(model, z, k, measure):
    return measure if measure is not None else build_measure(model, k, z)


def clt_error(model: BergmanModel, z: BasePoint, k: int, f: TestFunction,
              measure: BergmanMeasure | None = None) -> float:
    """``|<f, dilated measure> - int f d N(0, Hess phi(rho_z))|``."""
    mu = _measure(model, z, k, measure)
    lhs = integrate_against_dilated(f, recentered_dilated(mu, model.phi))
    return abs(lhs - gaussian_integral(f, _target(model, z)))


def llt_error(model: BergmanModel, z: BasePoint, k: int, radius: float = 2.0,
              measure: BergmanMeasure | None = None) -> float:
    """Worst relative error of ``p_alpha`` against ``k^{-m/2}`` times the gaussian density.

    Only atoms with ``|alpha/k - mu(z)| <= radius / sqrt(k)`` are compared.
    """
    mu = _measure(model, z, k, measure)
    X = recentered_dilated(mu, model.phi)
    inside = np.linalg.norm(X.points, axis=1) <= radius * (1 + 1e-12)
    if not np.any(inside):
        raise EmptyWindowError(f"no lattice point within {radius}/sqrt(k) of mu(z) at k={k}")
    m = model.dim
    log_ref = _target(model, z).logpdf(X.points[inside]) - 0.5 * m * np.log(k)
    ratio = np.exp(np.log(X.probs[inside]) - log_ref)
    return float(np.max(np.abs(ratio - 1.0)))


def default_t_grid(m: int, radius: float = 3.0, step: float = 0.25) -> np.ndarray:
    """Regular grid points ``t`` with ``|t| <= radius``."""
    ax = np.arange(-radius, radius + step / 2, step)
    grid = np.stack(np.meshgrid(*([ax] * m), indexing="ij"), -1).reshape(-1, m)
    return grid[np.linalg.norm(grid, axis=1) <= radius + 1e-12]


def charfn_error(model: BergmanModel, z: BasePoint, k: int, t_grid=None,
                 measure: BergmanMeasure | None = None) -> float:
    """``max_t |char_fn(t) - exp(-<H t, t> / 2)|`` over the grid."""
    mu = _measure(model, z, k, measure)
    T = default_t_grid(model.dim) if t_grid is None else np.asarray(t_grid, float).reshape(-1, model.dim)
    H = model.phi.hess(np.asarray(z.rho))
    target = np.exp(-0.5 * np.einsum("ti,ij,tj->t", T, H, T))
    return float(np.max(np.abs(char_fn(mu, model.phi, T) - target)))


def mean_error(model: BergmanModel, z: BasePoint, k: int,
               measure: BergmanMeasure | None = None) -> float:
    """``|m_k(z) - mu(z)|`` (euclidean)."""
    mu = _measure(model, z, k, measure)
    return float(np.linalg.norm(moments(mu).mean - model.phi.grad(np.asarray(z.rho))))


def covariance_error(model: BergmanModel, z: BasePoint, k: int,
                     measure: BergmanMeasure | None = None) -> float:
    """Spectral norm of ``k Sigma_k(z) - Hess phi(rho_z)``."""
    mu = _measure(model, z, k, measure)
    d = k * moments(mu).covariance - model.phi.hess(np.asarray(z.rho))
    return float(np.linalg.norm(d, 2))


def density_error(model: BergmanModel, z: BasePoint, k: int,
                  measure: BergmanMeasure | None = None) -> float:
    """``|Pi_k(z) / k^m - 1|``."""
    mu = _measure(model, z, k, measure)
    return float(abs(np.expm1(mu.log_density - model.dim * np.log(k))))


def laplace_ratio_error(model: BergmanModel, k: int, x) -> float:
    """``|Q_laplace / Q_quadrature - 1|`` at ``alpha = round(k x)``."""
    alpha = np.rint(np.asarray(x, dtype=float).reshape(model.dim) * k).astype(np.int64)
    lap = norming_constant_laplace(SymplecticPotential(model.phi), alpha, k)
    return float(abs(np.expm1(lap.log_value - model.log_norming_at(alpha, k))))


def mass_outside(measure: BergmanMeasure, mu, radius: float) -> float:
    """Probability of the atoms farther than ``radius`` from ``mu``."""
    d = np.linalg.norm(measure.points - np.asarray(mu, dtype=float), axis=1)
    return float(np.sum(measure.probabilities[d > radius]))


@dataclass(frozen=True)
class ConvergenceReport:
    ks: tuple[int, ...]
    errors: tuple[float, ...]
    fitted_slope: float
    intercept: float
    r_squared: float

    def fitted(self) -> np.ndarray:
        """Fitted errors ``exp(intercept) k^slope`` at ``ks``."""
        return np.exp(self.intercept + self.fitted_slope * np.log(np.array(self.ks, dtype=float)))


def fit_rate(ks: Sequence[int], errors: Sequence[float]) -> ConvergenceReport:
    """Least squares line through ``(log k, log error)``."""
    k = np.asarray(ks, dtype=float)
    e = np.asarray(errors, dtype=float)
    if k.shape != e.shape or k.ndim != 1:
        raise RateFitError("ks and errors must be 1-d sequences of equal length")
    if k.size < 4:
        raise RateFitError(f"need at least 4 points to fit a rate, got {k.size}")
    if np.any(k <= 0):
        raise RateFitError("ks must be positive")
    if np.any(~np.isfinite(e)) or np.any(e <= 0):
        raise RateFitError("errors must be finite and positive to fit a log-log rate")
    x, y = np.log(k), np.log(e)
    A = np.column_stack([x, np.ones_like(x)])
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([slope, icpt])
    sst = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / sst if sst > 0 else 1.0
    return ConvergenceReport(
        tuple(int(v) for v in ks), tuple(float(v) for v in e), float(slope), float(icpt), float(r2)
    )


def sweep(error_fn: Callable[[int], float], ks: Sequence[int], threads: int = 1) -> ConvergenceReport:
    """Evaluate ``error_fn`` at every level and fit the rate.

    Levels are independent; with ``threads > 1`` they run in a thread pool and
    are collected in the order of ``ks``.
    """
    ks = [int(k) for k in ks]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            errors = list(pool.map(error_fn, ks))
    else:
        errors = [error_fn(k) for k in ks]
    return fit_rate(ks, errors)
