"""Delzant polytopes given by facet inequalities and lattice points of their dilates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "DelzantPolytope",
    "UnboundedPolytopeError",
    "simplex",
    "cube",
    "interval",
    "product_polytope",
]


class UnboundedPolytopeError(ValueError):
    """The facet inequalities do not cut out a bounded set with interior."""


def _as_fraction(a) -> Fraction:
    if isinstance(a, float):
        return Fraction(a).limit_denominator(10**9)
    return Fraction(a)


@dataclass(frozen=True)
class DelzantPolytope:
    """Polytope ``P = {x : <x, v_r> - a_r >= 0 for all r}``.

    Parameters
    ----------
    normals : (R, m) int array_like
        Primitive inward facet normals ``v_r``.
    offsets : sequence of rationals
        Facet offsets ``a_r``. Stored exactly as :class:`fractions.Fraction`
        so that lattice membership of ``alpha / k`` is decided in integer
        arithmetic.
    """

    normals: np.ndarray
    offsets: tuple[Fraction, ...]
    _bbox: tuple[np.ndarray, np.ndarray] = field(init=False, repr=False, compare=False)

    def __init__(self, normals, offsets):
        v = np.asarray(normals)
        if v.ndim == 1:
            v = v[:, None]
        if not np.issubdtype(v.dtype, np.integer):
            if not np.all(v == np.round(v)):
                raise ValueError("facet normals must be integer vectors")
        v = np.array(v, dtype=np.int64)
        if v.ndim != 2 or v.shape[0] == 0:
            raise ValueError("normals must be a nonempty (R, m) array")
        offs = tuple(_as_fraction(a) for a in offsets)
        if len(offs) != v.shape[0]:
            raise ValueError(f"{v.shape[0]} normals but {len(offs)} offsets")
        for row in v:
            if math.gcd(*(int(c) for c in row)) != 1:
                raise ValueError(f"facet normal {row.tolist()} is not primitive")
        v.setflags(write=False)
        object.__setattr__(self, "normals", v)
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "_bbox", self._compute_bounding_box())

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence]) -> "DelzantPolytope":
        """Build from rows ``v_1 ... v_m a``; the dimension is inferred."""
        rows = [list(r) for r in rows]
        if not rows:
            raise ValueError("no facet rows")
        widths = {len(r) for r in rows}
        if len(widths) != 1 or widths.pop() < 2:
            raise ValueError("facet rows must all have m + 1 >= 2 entries")
        normals = [[int(Fraction(c)) if Fraction(c).denominator == 1 else c for c in r[:-1]]
                   for r in rows]
        return cls(normals, [Fraction(str(r[-1])) for r in rows])

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @cached_property
    def offsets_float(self) -> np.ndarray:
        return np.array([float(a) for a in self.offsets])

    def facet_values(self, x) -> np.ndarray:
        """Evaluate all ``l_r(x)``; ``x`` has shape ``(..., m)``, result ``(..., R)``."""
        x = np.asarray(x, dtype=float)
        return x @ self.normals.T.astype(float) - self.offsets_float

    def contains(self, x, tol: float = 0.0):
        if tol < 0:
            raise ValueError("tol must be nonnegative")
        return np.all(self.facet_values(x) >= -tol, axis=-1)

    def is_interior(self, x, margin: float = 0.0):
        if margin < 0:
            raise ValueError("margin must be nonnegative")
        return np.all(self.facet_values(x) > margin, axis=-1)

    def _compute_bounding_box(self):
        m = self.dim
        A_ub = -self.normals.astype(float)
        b_ub = -self.offsets_float
        lo, hi = np.empty(m), np.empty(m)
        for j in range(m):
            c = np.zeros(m)
            for sign, out in ((1.0, lo), (-1.0, hi)):
                c[j] = sign
                res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * m, method="highs")
                if res.status == 3:
                    raise UnboundedPolytopeError(f"coordinate {j} is unbounded over P")
                if res.status == 2:
                    raise UnboundedPolytopeError("facet inequalities are infeasible")
                if res.status != 0:
                    raise UnboundedPolytopeError(f"bounding-box LP failed: {res.message}")
                out[j] = sign * res.fun
        # Chebyshev-style slack: interior is nonempty iff some x has all l_r(x) > 0.
        norms = np.linalg.norm(self.normals, axis=1)
        c = np.zeros(m + 1)
        c[-1] = -1.0
        A = np.hstack([A_ub, norms[:, None]])
        res = linprog(c, A_ub=A, b_ub=b_ub, bounds=[(None, None)] * m + [(0, 1)], method="highs")
        if res.status != 0 or -res.fun <= 1e-12:
            raise UnboundedPolytopeError("polytope has empty interior")
        lo.setflags(write=False)
        hi.setflags(write=False)
        return lo, hi

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self._bbox

    def lattice_points(self, k: int) -> np.ndarray:
        """Integer points of ``kP`` as an ``(N, m)`` array in lexicographic order."""
        if int(k) != k or k < 1:
            raise ValueError("k must be a positive integer")
        k = int(k)
        lo, hi = self._bbox
        lo_i = np.floor(k * lo - 1e-9).astype(np.int64)
        hi_i = np.ceil(k * hi + 1e-9).astype(np.int64)
        axes = [np.arange(a, b + 1, dtype=np.int64) for a, b in zip(lo_i, hi_i)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        # <alpha, v_r> * den_r >= k * num_r, all in integers
        num = np.array([a.numerator for a in self.offsets], dtype=np.int64)
        den = np.array([a.denominator for a in self.offsets], dtype=np.int64)
        lhs = (grid @ self.normals.T) * den
        keep = np.all(lhs >= k * num, axis=1)
        return grid[keep]

    def contains_lattice(self, alpha, k: int) -> bool:
        """Exact test of ``alpha / k in P`` for an integer vector ``alpha``."""
        alpha = np.asarray(alpha, dtype=np.int64).reshape(self.dim)
        return all(
            Fraction(int(np.dot(alpha, v))) >= k * a for v, a in zip(self.normals, self.offsets)
        )

    def is_interior_lattice(self, alpha, k: int) -> bool:
        alpha = np.asarray(alpha, dtype=np.int64).reshape(self.dim)
        return all(
            Fraction(int(np.dot(alpha, v))) > k * a for v, a in zip(self.normals, self.offsets)
        )

    def translate(self, shift) -> "DelzantPolytope":
        """``P + shift`` for an integer vector ``shift``."""
        shift = np.asarray(shift, dtype=np.int64).reshape(self.dim)
        return DelzantPolytope(
            self.normals, [a + int(np.dot(v, shift)) for v, a in zip(self.normals, self.offsets)]
        )

    @cached_property
    def projections(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Fourier-Motzkin projections of P onto the leading coordinates.

        Entry ``j`` is ``(A, b)`` with ``A x[:j+1] >= b`` describing the
        projection onto ``x_0 .. x_j``; used for iterated integration over P.
        """
        A = self.normals.astype(float)
        b = self.offsets_float.copy()
        out = [None] * self.dim
        for j in range(self.dim - 1, -1, -1):
            out[j] = (A.copy(), b.copy())
            if j == 0:
                break
            col = A[:, j]
            pos, neg, zero = col > 1e-12, col < -1e-12, np.abs(col) <= 1e-12
            rows = [A[zero, :j]]
            rhs = [b[zero]]
            for p in np.flatnonzero(pos):
                for q in np.flatnonzero(neg):
                    rows.append((A[p, :j] * -col[q] + A[q, :j] * col[p])[None])
                    rhs.append(np.array([b[p] * -col[q] + b[q] * col[p]]))
            A = np.vstack(rows)
            b = np.concatenate(rhs)
            A, b = _dedupe(A, b)
        return out

    def _facet_key(self):
        return tuple(sorted(zip(map(tuple, self.normals.tolist()), self.offsets)))

    def __eq__(self, other):
        """Same set of facet inequalities, in any order."""
        if not isinstance(other, DelzantPolytope):
            return NotImplemented
        return self._facet_key() == other._facet_key()

    def __hash__(self):
        return hash(self._facet_key())

    def __repr__(self):
        rows = ", ".join(
            f"{v.tolist()}·x >= {a}" for v, a in zip(self.normals, self.offsets)
        )
        return f"DelzantPolytope(m={self.dim}: {rows})"


def _dedupe(A: np.ndarray, b: np.ndarray):
    scale = np.max(np.abs(A), axis=1)
    scale[scale == 0] = 1.0
    A, b = A / scale[:, None], b / scale
    trivial = np.all(np.abs(A) < 1e-12, axis=1)
    if np.any(trivial & (b > 1e-12)):
        raise UnboundedPolytopeError("inconsistent projection")
    A, b = A[~trivial], b[~trivial]
    key = np.round(np.hstack([A, b[:, None]]), 10)
    _, idx = np.unique(key, axis=0, return_index=True)
    idx.sort()
    return A[idx], b[idx]


def simplex(m: int) -> DelzantPolytope:
    """Unit simplex ``{x_j >= 0, sum x_j <= 1}`` (moment polytope of CP^m)."""
    normals = np.vstack([np.eye(m, dtype=np.int64), -np.ones((1, m), dtype=np.int64)])
    return DelzantPolytope(normals, [0] * m + [-1])


def cube(m: int) -> DelzantPolytope:
    """Unit cube ``[0, 1]^m`` (moment polytope of (CP^1)^m)."""
    eye = np.eye(m, dtype=np.int64)
    return DelzantPolytope(np.vstack([eye, -eye]), [0] * m + [-1] * m)


def interval() -> DelzantPolytope:
    return simplex(1)


def product_polytope(polys: Sequence[DelzantPolytope]) -> DelzantPolytope:
    dims = [p.dim for p in polys]
    m = sum(dims)
    normals, offsets = [], []
    start = 0
    for p, d in zip(polys, dims):
        for v, a in zip(p.normals, p.offsets):
            row = np.zeros(m, dtype=np.int64)
            row[start:start + d] = v
            normals.append(row)
            offsets.append(a)
        start += d
    return DelzantPolytope(np.array(normals), offsets)

