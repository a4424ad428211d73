"""Toric Kähler potentials on R^m, their moment maps and Legendre duals.

All evaluation methods are vectorized: ``rho`` (or ``x``) has shape
``(..., m)`` and results carry the same leading shape.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .polytope import DelzantPolytope, product_polytope, simplex

__all__ = [
    "ToricPotential",
    "SymplecticPotential",
    "BasePoint",
    "KernelSpec",
    "Bump",
    "BUMPS",
    "NonInteriorPointError",
    "NonConvergenceError",
    "PositivityError",
    "fubini_study",
    "product_potential",
    "perturbed_potential",
    "shifted_potential",
    "moment_map",
    "invert_moment_map",
    "legendre_dual",
    "rate_function",
    "base_point",
]

FD_STEP = 1e-5


class NonInteriorPointError(ValueError):
    """A point expected in the interior of the moment polytope is not."""


class NonConvergenceError(RuntimeError):
    pass


class PositivityError(ValueError):
    """A perturbed potential lost strict convexity on the check grid."""


@dataclass(frozen=True)
class KernelSpec:
    """Closed-form description of a potential for the compiled quadrature kernel.

    ``phi(rho) = sum_b log(1 + sum_{j in b} e^{rho_j}) + <lin, rho> + const
    + eps * bump(rho)`` with Fubini-Study blocks of sizes ``blocks``.
    ``bump_kind`` is 0 (none), 1 (gaussian) or 2 (lorentzian).
    """

    blocks: tuple[int, ...]
    lin: tuple[float, ...]
    const: float = 0.0
    bump_kind: int = 0
    eps: float = 0.0


@dataclass(frozen=True, eq=False)
class ToricPotential:
    """Strictly convex ``phi(rho)`` whose gradient maps R^m onto the interior of ``polytope``."""

    dim: int
    polytope: DelzantPolytope
    value_fn: Callable[[np.ndarray], np.ndarray]
    grad_fn: Callable[[np.ndarray], np.ndarray]
    hess_fn: Callable[[np.ndarray], np.ndarray]
    logdet_fn: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "potential"
    kernel_spec: KernelSpec | None = None

    def _arg(self, rho):
        rho = np.asarray(rho, dtype=float)
        if rho.shape[-1:] != (self.dim,):
            if self.dim == 1 and rho.ndim == 0:
                return rho[None]
            raise ValueError(f"expected trailing dimension {self.dim}, got shape {rho.shape}")
        return rho

    def value(self, rho):
        return self.value_fn(self._arg(rho))

    def grad(self, rho):
        return self.grad_fn(self._arg(rho))

    def hess(self, rho):
        return self.hess_fn(self._arg(rho))

    def log_det_hess(self, rho):
        rho = self._arg(rho)
        if self.logdet_fn is not None:
            return self.logdet_fn(rho)
        with np.errstate(divide="ignore", invalid="ignore"):
            sign, logdet = np.linalg.slogdet(self.hess_fn(rho))
        return np.where(sign > 0, logdet, np.nan)

    def __call__(self, rho):
        return self.value(rho)

    def __repr__(self):
        return f"ToricPotential({self.name!r}, m={self.dim})"


def fubini_study(m: int) -> ToricPotential:
    """``phi(rho) = log(1 + sum_j e^{rho_j})`` on CP^m; polytope is the unit simplex."""
    if m < 1:
        raise ValueError("m must be >= 1")

    def value(rho):
        z = np.zeros(rho.shape[:-1] + (1,))
        return logsumexp(np.concatenate([z, rho], axis=-1), axis=-1)

    def grad(rho):
        return np.exp(rho - value(rho)[..., None])

    def hess(rho):
        p = grad(rho)
        return np.einsum("...i,ij->...ij", p, np.eye(m)) - p[..., :, None] * p[..., None, :]

    def logdet(rho):
        # det(diag p - p p^T) = p_1 ... p_m (1 - sum p)
        return rho.sum(axis=-1) - (m + 1) * value(rho)

    return ToricPotential(
        m, simplex(m), value, grad, hess, logdet, name=f"fs({m})",
        kernel_spec=KernelSpec((m,), (0.0,) * m),
    )


def product_potential(factors: Sequence[ToricPotential]) -> ToricPotential:
    """``phi(rho) = sum_i phi_i(rho_i-block)``; the polytope is the product."""
    factors = list(factors)
    if not factors:
        raise ValueError("need at least one factor")
    if len(factors) == 1:
        return factors[0]
    dims = [f.dim for f in factors]
    cuts = np.cumsum([0] + dims)
    m = int(cuts[-1])
    sl = [slice(int(a), int(b)) for a, b in zip(cuts[:-1], cuts[1:])]

    def value(rho):
        return sum(f.value(rho[..., s]) for f, s in zip(factors, sl))

    def grad(rho):
        return np.concatenate([f.grad(rho[..., s]) for f, s in zip(factors, sl)], axis=-1)

    def hess(rho):
        out = np.zeros(rho.shape[:-1] + (m, m))
        for f, s in zip(factors, sl):
            out[..., s, s] = f.hess(rho[..., s])
        return out

    def logdet(rho):
        return sum(f.log_det_hess(rho[..., s]) for f, s in zip(factors, sl))

    spec = None
    specs = [f.kernel_spec for f in factors]
    if all(s is not None and s.bump_kind == 0 for s in specs):
        spec = KernelSpec(
            tuple(b for s in specs for b in s.blocks),
            tuple(c for s in specs for c in s.lin),
            float(sum(s.const for s in specs)),
        )
    name = " x ".join(f.name for f in factors)
    return ToricPotential(
        m, product_polytope([f.polytope for f in factors]), value, grad, hess, logdet,
        name=name, kernel_spec=spec,
    )


@dataclass(frozen=True)
class Bump:
    """Smooth perturbation ``psi(rho)`` with bounded derivatives."""

    name: str
    kind: int
    value: Callable
    grad: Callable
    hess: Callable


def _gaussian_bump():
    def value(rho):
        return np.exp(-0.5 * np.sum(rho * rho, axis=-1))

    def grad(rho):
        return -rho * value(rho)[..., None]

    def hess(rho):
        m = rho.shape[-1]
        v = value(rho)[..., None, None]
        return v * (rho[..., :, None] * rho[..., None, :] - np.eye(m))

    return Bump("gaussian", 1, value, grad, hess)


def _lorentzian_bump():
    def value(rho):
        return 1.0 / (1.0 + np.sum(rho * rho, axis=-1))

    def grad(rho):
        return -2.0 * rho * value(rho)[..., None] ** 2

    def hess(rho):
        m = rho.shape[-1]
        v = value(rho)[..., None, None]
        return 8.0 * v**3 * rho[..., :, None] * rho[..., None, :] - 2.0 * v**2 * np.eye(m)

    return Bump("lorentzian", 2, value, grad, hess)


BUMPS = {"gaussian": _gaussian_bump(), "lorentzian": _lorentzian_bump()}


def _fd_bump(fn: Callable, h: float = FD_STEP) -> Bump:
    """Wrap a bare callable ``psi`` with central-difference derivatives."""

    def value(rho):
        return np.asarray(fn(rho), dtype=float)

    def grad(rho):
        m = rho.shape[-1]
        e = np.eye(m) * h
        return np.stack([(value(rho + e[j]) - value(rho - e[j])) / (2 * h) for j in range(m)], -1)

    def hess(rho):
        m = rho.shape[-1]
        e = np.eye(m) * h
        cols = [(grad(rho + e[j]) - grad(rho - e[j])) / (2 * h) for j in range(m)]
        H = np.stack(cols, axis=-1)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    return Bump(getattr(fn, "__name__", "custom"), 0, value, grad, hess)


def perturbed_potential(
    base: ToricPotential,
    eps: float,
    bump: str | Bump | Callable = "gaussian",
    grid_radius: float = 12.0,
    grid_points: int = 25,
) -> ToricPotential:
    """``phi + eps * psi``, rejected unless the Hessian stays positive on a grid.

    The grid is ``[-grid_radius, grid_radius]^m`` with ``grid_points`` per
    axis; positivity away from the grid is not checked.
    """
    if isinstance(bump, str):
        try:
            bump = BUMPS[bump]
        except KeyError:
            raise ValueError(f"unknown bump {bump!r}; choose from {sorted(BUMPS)}") from None
    elif not isinstance(bump, Bump):
        bump = _fd_bump(bump)
    eps = float(eps)
    m = base.dim
    axis = np.linspace(-grid_radius, grid_radius, grid_points)
    grid = np.stack(np.meshgrid(*([axis] * m), indexing="ij"), -1).reshape(-1, m)
    H = base.hess(grid) + eps * bump.hess(grid)
    lam = np.linalg.eigvalsh(H)[:, 0]
    if not np.all(lam > 0):
        bad = grid[np.argmin(lam)]
        raise PositivityError(
            f"Hessian of phi + {eps} psi is not positive definite near rho={bad.tolist()}"
        )

    def value(rho):
        return base.value(rho) + eps * bump.value(rho)

    def grad(rho):
        return base.grad(rho) + eps * bump.grad(rho)

    def hess(rho):
        return base.hess(rho) + eps * bump.hess(rho)

    spec = None
    bs = base.kernel_spec
    if bs is not None and bs.bump_kind == 0 and bump.kind in (1, 2):
        spec = replace(bs, bump_kind=bump.kind, eps=eps)
    if eps == 0.0:
        spec = bs
    return ToricPotential(
        m, base.polytope, value, grad, hess, None,
        name=f"{base.name}+{eps:g}*{bump.name}", kernel_spec=spec,
    )


def shifted_potential(phi: ToricPotential, const: float = 0.0, linear=None) -> ToricPotential:
    """``phi + const + <linear, rho>``; an integer ``linear`` translates the polytope."""
    m = phi.dim
    lam = np.zeros(m) if linear is None else np.asarray(linear, dtype=float).reshape(m)
    if not np.all(lam == np.round(lam)):
        raise ValueError("linear shift must be an integer vector")
    const = float(const)

    def value(rho):
        return phi.value(rho) + const + rho @ lam

    def grad(rho):
        return phi.grad(rho) + lam

    spec = phi.kernel_spec
    if spec is not None:
        spec = replace(
            spec, lin=tuple(float(a + b) for a, b in zip(spec.lin, lam)), const=spec.const + const
        )
    return ToricPotential(
        m, phi.polytope.translate(lam.astype(np.int64)), value, grad, phi.hess_fn, phi.logdet_fn,
        name=f"{phi.name}+shift", kernel_spec=spec,
    )


def moment_map(phi: ToricPotential, rho) -> np.ndarray:
    return phi.grad(rho)


def _check_interior(phi: ToricPotential, x: np.ndarray, margin: float) -> None:
    inside = phi.polytope.is_interior(x, margin)
    if not np.all(inside):
        bad = np.asarray(x).reshape(-1, phi.dim)[~np.asarray(inside).reshape(-1)][0]
        raise NonInteriorPointError(f"x={bad.tolist()} is not in the interior of {phi.polytope}")


def _newton_batch(phi: ToricPotential, X: np.ndarray, tol: float, maxiter: int) -> np.ndarray:
    """Minimize ``phi(rho) - <x, rho>`` row-wise for ``X`` of shape ``(N, m)``."""
    N, m = X.shape
    rho = np.zeros((N, m))
    active = np.ones(N, dtype=bool)
    for _ in range(maxiter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        r, x = rho[idx], X[idx]
        g = phi.grad(r) - x
        H = phi.hess(r)
        step = -np.linalg.solve(H, g[..., None])[..., 0]
        f0 = phi.value(r) - np.sum(x * r, axis=-1)
        gn0 = np.linalg.norm(g, axis=-1)
        t = np.ones(idx.size)
        todo = np.ones(idx.size, dtype=bool)
        for _ in range(60):
            trial = r[todo] + t[todo, None] * step[todo]
            f1 = phi.value(trial) - np.sum(x[todo] * trial, axis=-1)
            ok = f1 <= f0[todo]
            # at round-off level the objective stalls; accept if the gradient shrinks
            stall = ~ok & (np.abs(f1 - f0[todo]) <= 1e-15 * (1 + np.abs(f0[todo])))
            if np.any(stall):
                gt = np.linalg.norm(phi.grad(trial[stall]) - x[todo][stall], axis=-1)
                ok[stall] = gt < gn0[todo][stall]
            sub = np.flatnonzero(todo)
            todo[sub[ok]] = False
            t[sub[~ok]] *= 0.5
            if not np.any(todo):
                break
        t[todo] = 0.0
        new = r + t[:, None] * step
        rho[idx] = new
        small = np.linalg.norm(t[:, None] * step, axis=-1) <= 1e-14 * (1 + np.linalg.norm(new, axis=-1))
        done = small | ((gn0 <= 1e-15) & (t > 0))
        active[idx[done | (t == 0.0)]] = False
    resid = np.linalg.norm(phi.grad(rho) - X, axis=-1)
    if np.any(resid > tol):
        worst = int(np.argmax(resid))
        raise NonConvergenceError(
            f"moment-map inversion did not converge at x={X[worst].tolist()} "
            f"(residual {resid[worst]:.3g} after {maxiter} iterations)"
        )
    return rho


def invert_moment_map(
    phi: ToricPotential, x, tol: float = 1e-10, maxiter: int = 200, margin: float = 1e-12
) -> np.ndarray:
    """Solve ``grad phi(rho) = x`` by damped Newton on ``phi(rho) - <x, rho>``."""
    x = np.asarray(x, dtype=float)
    if phi.dim == 1 and x.ndim == 0:
        x = x[None]
    _check_interior(phi, x, margin)
    X = x.reshape(-1, phi.dim)
    return _newton_batch(phi, X, tol, maxiter).reshape(x.shape)


@dataclass(frozen=True, eq=False)
class SymplecticPotential:
    """Legendre dual ``u(x) = <x, rho(x)> - phi(rho(x))`` on the interior of P."""

    phi: ToricPotential

    @property
    def dim(self) -> int:
        return self.phi.dim

    @property
    def polytope(self) -> DelzantPolytope:
        return self.phi.polytope

    def rho(self, x) -> np.ndarray:
        return invert_moment_map(self.phi, x)

    def value(self, x, rho=None):
        x = self.phi._arg(x)
        r = self.rho(x) if rho is None else rho
        return np.sum(x * r, axis=-1) - self.phi.value(r)

    def grad(self, x):
        return self.rho(x)

    def hess(self, x, rho=None):
        r = self.rho(x) if rho is None else rho
        return np.linalg.inv(self.phi.hess(r))

    def evaluate(self, x):
        """``(u, grad u)`` from a single moment-map inversion."""
        x = self.phi._arg(x)
        r = self.rho(x)
        return np.sum(x * r, axis=-1) - self.phi.value(r), r


def legendre_dual(phi: ToricPotential) -> SymplecticPotential:
    return SymplecticPotential(phi)


@dataclass(frozen=True)
class BasePoint:
    """Point ``z = e^{rho/2 + i theta}`` of the open orbit, recorded by ``rho``."""

    rho: tuple[float, ...]

    def __init__(self, rho):
        r = np.atleast_1d(np.asarray(rho, dtype=float))
        if r.ndim != 1 or not np.all(np.isfinite(r)):
            raise ValueError("rho must be a finite vector")
        object.__setattr__(self, "rho", tuple(float(v) for v in r))

    @property
    def vec(self) -> np.ndarray:
        return np.array(self.rho)


def base_point(phi: ToricPotential, rho) -> BasePoint:
    """Validated base point: the moment map at ``rho`` must lie in P°."""
    z = BasePoint(rho)
    if len(z.rho) != phi.dim:
        raise ValueError(f"base point has dimension {len(z.rho)}, potential has {phi.dim}")
    _check_interior(phi, phi.grad(z.vec), 0.0)
    return z


def rate_function(phi: ToricPotential, z: BasePoint, x) -> np.ndarray:
    """``I^z(x) = u(x) - <x, rho_z> + phi(rho_z)``; vanishes at the moment map of z."""
    u = legendre_dual(phi)
    x = phi._arg(x)
    rz = z.vec
    return u.value(x) - x @ rz + phi.value(rz)
