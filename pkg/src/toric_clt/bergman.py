"""Lattice measures built from the norming constants.

For a base point ``z`` (recorded by ``rho``) and a level ``k`` every lattice
point ``alpha`` of ``kP`` carries the weight

    w_alpha = exp(<alpha, rho> - k phi(rho)) / Q_k(alpha),

their sum is the density of states ``Pi_k(z)``, and the normalized weights form
a probability measure on ``P`` with atoms ``alpha / k``. Everything is kept in
log scale since ``exp(-k phi)`` underflows at moderate ``k``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .potential import BasePoint, SymplecticPotential, ToricPotential, base_point
from .quadrature import (
    QuadratureSpec,
    _check_alphas,
    log_norming_constants_rho,
    log_norming_constants_x,
)

__all__ = [
    "BergmanModel",
    "BergmanMeasure",
    "MomentSummary",
    "DilatedMeasure",
    "weight",
    "build_measure",
    "density_of_states",
    "log_density_at",
    "moments",
    "recentered_dilated",
    "char_fn",
    "write_measure_csv",
    "write_measure_json",
    "measure_summary",
]


class BergmanModel:
    """A potential together with a quadrature recipe and a cache of ``log Q``.

    ``log_norming(k)`` evaluates every lattice point of ``kP`` once; measures at
    any number of base points then reuse the same constants.

    Parameters
    ----------
    phi : ToricPotential
    spec : QuadratureSpec, optional
        ``spec.route`` picks the rho-space or x-space integral for all points.
    backend : {"numba", "numpy"}, optional
        Kernel backend of the rho route; automatic by default.
    """

    def __init__(self, phi: ToricPotential, spec: QuadratureSpec | None = None, backend=None):
        self.phi = phi
        self.spec = spec if spec is not None else QuadratureSpec()
        self.backend = backend
        self._levels: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self._single: dict[tuple[int, tuple[int, ...]], float] = {}

    @property
    def dim(self) -> int:
        return self.phi.dim

    @property
    def polytope(self):
        return self.phi.polytope

    def _compute(self, alphas, k):
        if self.spec.route == "x":
            u = SymplecticPotential(self.phi)
            return log_norming_constants_x(u, self.polytope, alphas, k, self.spec)
        return log_norming_constants_rho(self.phi, alphas, k, self.spec, self.backend)

    def log_norming(self, k: int):
        """``(alphas, log_Q, rel_err)`` for all lattice points of ``kP``."""
        k = int(k)
        if k not in self._levels:
            alphas = self.polytope.lattice_points(k)
            log_q, rel, _ = self._compute(alphas, k)
            for arr in (alphas, log_q, rel):
                arr.setflags(write=False)
            self._levels[k] = (alphas, log_q, rel)
        return self._levels[k]

    def log_norming_at(self, alpha, k: int) -> float:
        """``log Q_k(alpha)`` for a single lattice point, reusing the level cache."""
        k = int(k)
        a = np.asarray(alpha, dtype=np.int64).reshape(1, self.dim)
        key = (k, tuple(int(v) for v in a[0]))
        if k in self._levels:
            alphas, log_q, _ = self._levels[k]
            _check_alphas(self.polytope, a, k)
            hit = np.flatnonzero(np.all(alphas == a, axis=1))
            return float(log_q[hit[0]])
        if key not in self._single:
            self._single[key] = float(self._compute(a, k)[0][0])
        return self._single[key]

    def clear(self) -> None:
        self._levels.clear()
        self._single.clear()

    def __repr__(self):
        return f"BergmanModel({self.phi.name!r}, route={self.spec.route!r})"


@dataclass(frozen=True)
class MomentSummary:
    mean: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True)
class BergmanMeasure:
    """Weights of the lattice points of ``kP`` at the base point ``z``.

    Attributes
    ----------
    alphas : (N, m) int array
        Lattice points of ``kP`` in lexicographic order.
    log_weights : (N,) array
        ``log w_alpha``.
    log_density : float
        ``log Pi_k(z) = logsumexp(log_weights)``.
    """

    z: BasePoint
    k: int
    alphas: np.ndarray
    log_weights: np.ndarray
    log_density: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "log_density", float(logsumexp(self.log_weights)))

    @property
    def dim(self) -> int:
        return self.alphas.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def density(self) -> float:
        return float(np.exp(self.log_density))

    @property
    def probabilities(self) -> np.ndarray:
        """Normalized weights ``w_alpha / Pi``."""
        return np.exp(self.log_weights - self.log_density)

    @property
    def points(self) -> np.ndarray:
        """Atoms ``alpha / k`` in P."""
        return self.alphas / self.k

    def atoms(self):
        return [(tuple(int(v) for v in a), float(w)) for a, w in zip(self.alphas, self.weights)]

    def __len__(self):
        return len(self.alphas)


def _log_weights(phi: ToricPotential, alphas, log_q, k, rho):
    return alphas @ rho - k * float(phi.value(rho)) - log_q


def weight(model: BergmanModel, alpha, k: int, z: BasePoint) -> float:
    """``exp(<alpha, rho_z> - k phi(rho_z)) / Q_k(alpha)``."""
    rho = np.asarray(z.rho, dtype=float)
    a = np.asarray(alpha, dtype=np.int64).reshape(model.dim)
    lq = model.log_norming_at(a, k)
    return float(np.exp(_log_weights(model.phi, a[None].astype(float), lq, int(k), rho)[0]))


def build_measure(model: BergmanModel, k: int, z: BasePoint) -> BergmanMeasure:
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer")
    z = base_point(model.phi, z.rho)
    alphas, log_q, _ = model.log_norming(int(k))
    logw = _log_weights(model.phi, alphas.astype(float), log_q, int(k), z.vec)
    return BergmanMeasure(z, int(k), alphas, logw)


def density_of_states(measure: BergmanMeasure) -> float:
    return measure.density


def log_density_at(model: BergmanModel, k: int, rho) -> float:
    """``log Pi_k`` at an arbitrary ``rho`` (no interior check); used for derivative tests."""
    rho = np.asarray(rho, dtype=float).reshape(model.dim)
    alphas, log_q, _ = model.log_norming(int(k))
    return float(logsumexp(_log_weights(model.phi, alphas.astype(float), log_q, int(k), rho)))


def moments(measure: BergmanMeasure) -> MomentSummary:
    p = measure.probabilities
    x = measure.points
    mean = p @ x
    d = x - mean
    cov = (d * p[:, None]).T @ d
    return MomentSummary(mean, 0.5 * (cov + cov.T))


@dataclass(frozen=True)
class DilatedMeasure:
    """Atoms ``sqrt(k) (alpha/k - mu(z))`` with their probabilities."""

    points: np.ndarray
    probs: np.ndarray

    def __iter__(self):
        return iter(zip(self.points, self.probs))

    def __len__(self):
        return len(self.probs)


def recentered_dilated(measure: BergmanMeasure, phi: ToricPotential) -> DilatedMeasure:
    mu = phi.grad(measure.z.vec)
    pts = np.sqrt(measure.k) * (measure.points - mu)
    return DilatedMeasure(pts, measure.probabilities)


def char_fn(measure: BergmanMeasure, phi: ToricPotential, t):
    """``E exp(-i <t, X>)`` for ``X`` the recentered dilated atom.

    ``t`` is a single ``m``-vector (complex scalar result) or a ``(T, m)``
    array of them.
    """
    t = np.asarray(t, dtype=float)
    single = t.ndim == 0 or (t.ndim == 1 and t.shape[0] == measure.dim)
    T = t.reshape(-1, measure.dim)
    X = recentered_dilated(measure, phi)
    phase = X.points @ T.T
    # sum in cos/sin so the result stays exact for real measures
    vals = X.probs @ np.cos(phase) - 1j * (X.probs @ np.sin(phase))
    return complex(vals[0]) if single else vals


def write_measure_csv(measure: BergmanMeasure, path) -> Path:
    """Columns ``alpha_0 .. alpha_{m-1}, weight, normalized_weight``."""
    path = Path(path)
    p = measure.probabilities
    w = measure.weights
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow([f"alpha_{j}" for j in range(measure.dim)] + ["weight", "normalized_weight"])
        for a, wi, pi in zip(measure.alphas, w, p):
            out.writerow([int(v) for v in a] + ["%.17g" % wi, "%.17g" % pi])
    return path


def measure_summary(measure: BergmanMeasure) -> dict:
    mom = moments(measure)
    return {
        "k": measure.k,
        "z_rho": list(measure.z.rho),
        "atoms": len(measure),
        "density": measure.density,
        "mean": mom.mean.tolist(),
        "covariance": mom.covariance.tolist(),
    }


def write_measure_json(measure: BergmanMeasure, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(measure_summary(measure), indent=2, sort_keys=True) + "\n")
    return path
