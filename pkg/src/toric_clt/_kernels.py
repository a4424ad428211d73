"""Hot loops of the rho-space norming-constant quadrature.

Two interchangeable backends compute, for a batch of lattice points, the log
of a tensor Gauss-Legendre sum of ``exp(<alpha, rho> - k phi(rho) + log det
Hess phi(rho))`` over per-point boxes:

* ``numba``: compiled kernel for potentials carrying a :class:`KernelSpec`
  (Fubini-Study blocks, integer shift, optional gaussian/lorentzian bump);
* ``numpy``: vectorized fallback that works for any potential.

Set ``TORIC_CLT_NUMBA=0`` to force the numpy path. The compiled kernel
releases the GIL, so batches are split over ``get_threads()`` worker threads;
the split is by lattice point, which keeps results independent of scheduling.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

try:
    import numba as nb

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    nb = None
    NUMBA_AVAILABLE = False

__all__ = [
    "NUMBA_AVAILABLE",
    "numba_enabled",
    "log_tensor_quadrature",
    "gauss_legendre",
    "set_threads",
    "get_threads",
]

_NUMPY_CHUNK_NODES = 2_000_000
_threads: int | None = None


def set_threads(n: int | None) -> None:
    """Worker threads for the compiled kernel; ``None`` defers to ``TORIC_CLT_THREADS``."""
    global _threads
    if n is not None and int(n) < 1:
        raise ValueError("thread count must be >= 1")
    _threads = None if n is None else int(n)


def get_threads() -> int:
    if _threads is not None:
        return _threads
    raw = os.environ.get("TORIC_CLT_THREADS", "").strip()
    if not raw:
        return 1
    n = int(raw)
    if n < 1:
        raise ValueError("TORIC_CLT_THREADS must be >= 1")
    return n


def numba_enabled() -> bool:
    flag = os.environ.get("TORIC_CLT_NUMBA", "1").strip().lower()
    return NUMBA_AVAILABLE and flag not in ("0", "false", "no", "off")


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        x.setflags(write=False)
        w.setflags(write=False)
        _GL_CACHE[n] = (x, w)
    return _GL_CACHE[n]


if NUMBA_AVAILABLE:

    @nb.njit(cache=True, fastmath=False)
    def _log_integrand(rho, alpha, k, blocks, lin, const, bump_kind, eps, H):
        m = rho.shape[0]
        phi = const
        logdet = 0.0
        for i in range(m):
            phi += lin[i] * rho[i]
        if bump_kind != 0:
            for i in range(m):
                for j in range(m):
                    H[i, j] = 0.0
        start = 0
        for b in range(blocks.shape[0]):
            mb = blocks[b]
            mx = 0.0
            for j in range(start, start + mb):
                if rho[j] > mx:
                    mx = rho[j]
            s = np.exp(-mx)
            for j in range(start, start + mb):
                s += np.exp(rho[j] - mx)
            lse = mx + np.log(s)
            phi += lse
            if bump_kind == 0:
                acc = 0.0
                for j in range(start, start + mb):
                    acc += rho[j]
                logdet += acc - (mb + 1) * lse
            else:
                for i in range(start, start + mb):
                    pi = np.exp(rho[i] - lse)
                    H[i, i] += pi
                    for j in range(start, start + mb):
                        H[i, j] -= pi * np.exp(rho[j] - lse)
            start += mb
        if bump_kind != 0:
            r2 = 0.0
            for i in range(m):
                r2 += rho[i] * rho[i]
            if bump_kind == 1:
                v = np.exp(-0.5 * r2)
                phi += eps * v
                for i in range(m):
                    for j in range(m):
                        H[i, j] += eps * v * rho[i] * rho[j]
                    H[i, i] -= eps * v
            else:
                v = 1.0 / (1.0 + r2)
                phi += eps * v
                for i in range(m):
                    for j in range(m):
                        H[i, j] += eps * 8.0 * v * v * v * rho[i] * rho[j]
                    H[i, i] -= eps * 2.0 * v * v
            # Cholesky in place; a non-positive pivot means the Hessian left the cone
            for j in range(m):
                d = H[j, j]
                for p in range(j):
                    d -= H[j, p] * H[j, p]
                if d <= 0.0:
                    return -np.inf
                d = np.sqrt(d)
                H[j, j] = d
                logdet += 2.0 * np.log(d)
                for i in range(j + 1, m):
                    t = H[i, j]
                    for p in range(j):
                        t -= H[i, p] * H[j, p]
                    H[i, j] = t / d
        dot = 0.0
        for i in range(m):
            dot += alpha[i] * rho[i]
        return dot - k * phi + logdet

    @nb.njit(cache=True, nogil=True)
    def _numba_log_quadrature(alphas, centers, halves, k, nodes, weights,
                              blocks, lin, const, bump_kind, eps):
        B, m = alphas.shape
        n = nodes.shape[0]
        total = n ** m
        out = np.empty(B)
        rho = np.empty(m)
        H = np.empty((m, m))
        idx = np.zeros(m, dtype=np.int64)
        r_ax = np.empty((m, n))
        e_ax = np.empty((m, n))
        for b in range(B):
            logvol = 0.0
            safe = True
            for i in range(m):
                logvol += np.log(halves[b, i])
                for t in range(n):
                    r = centers[b, i] + halves[b, i] * nodes[t]
                    r_ax[i, t] = r
                    e_ax[i, t] = np.exp(r)
                    if r > 700.0:
                        safe = False
            fast = safe and bump_kind == 0
            mx = -np.inf
            acc = 0.0
            for i in range(m):
                idx[i] = 0
            for t in range(total):
                w = 1.0
                for i in range(m):
                    rho[i] = r_ax[i, idx[i]]
                    w *= weights[idx[i]]
                if fast:
                    # Fubini-Study blocks: log det = sum rho - (m_b + 1) lse_b
                    g = -k * const
                    for i in range(m):
                        g += (alphas[b, i] - k * lin[i] + 1.0) * rho[i]
                    start = 0
                    for q in range(blocks.shape[0]):
                        mb = blocks[q]
                        s = 0.0
                        for j in range(start, start + mb):
                            s += e_ax[j, idx[j]]
                        g -= (k + mb + 1.0) * np.log1p(s)
                        start += mb
                else:
                    g = _log_integrand(rho, alphas[b], k, blocks, lin, const, bump_kind, eps, H)
                if g > mx:
                    acc = acc * np.exp(mx - g) + w
                    mx = g
                elif g > -np.inf:
                    acc += w * np.exp(g - mx)
                # odometer over the tensor grid
                i = m - 1
                while i >= 0:
                    idx[i] += 1
                    if idx[i] < n:
                        break
                    idx[i] = 0
                    i -= 1
            out[b] = mx + np.log(acc) + logvol
        return out


def _numpy_log_quadrature(phi, alphas, centers, halves, k, nodes, weights):
    B, m = alphas.shape
    n = nodes.shape[0]
    grids = np.stack(np.meshgrid(*([nodes] * m), indexing="ij"), -1).reshape(-1, m)
    wts = np.prod(np.stack(np.meshgrid(*([weights] * m), indexing="ij"), -1).reshape(-1, m), axis=1)
    logw = np.log(wts)
    out = np.empty(B)
    chunk = max(1, _NUMPY_CHUNK_NODES // grids.shape[0])
    for s in range(0, B, chunk):
        sl = slice(s, min(B, s + chunk))
        rho = centers[sl, None, :] + halves[sl, None, :] * grids[None]
        g = np.einsum("bi,bni->bn", alphas[sl], rho) - k * phi.value(rho) + phi.log_det_hess(rho)
        g = np.where(np.isnan(g), -np.inf, g) + logw
        mx = g.max(axis=1)
        out[sl] = mx + np.log(np.exp(g - mx[:, None]).sum(axis=1)) + np.log(halves[sl]).sum(1)
    return out


def log_tensor_quadrature(phi, alphas, centers, halves, k, n, backend=None) -> np.ndarray:
    """Log of the n-point-per-axis Gauss-Legendre sum over ``center +- half`` boxes.

    ``backend`` is ``"numba"``, ``"numpy"`` or ``None`` (numba when enabled
    and the potential has a kernel spec).
    """
    alphas = np.ascontiguousarray(alphas, dtype=float)
    centers = np.ascontiguousarray(centers, dtype=float)
    halves = np.ascontiguousarray(halves, dtype=float)
    nodes, weights = gauss_legendre(n)
    spec = phi.kernel_spec
    if backend is None:
        backend = "numba" if (numba_enabled() and spec is not None) else "numpy"
    if backend == "numba":
        if not NUMBA_AVAILABLE:
            raise RuntimeError("numba backend requested but numba is not installed")
        if spec is None:
            raise ValueError(f"{phi!r} has no closed-form kernel spec; use the numpy backend")
        args = (
            float(k), np.asarray(nodes), np.asarray(weights),
            np.array(spec.blocks, dtype=np.int64), np.array(spec.lin, dtype=float),
            float(spec.const), int(spec.bump_kind), float(spec.eps),
        )
        threads = min(get_threads(), len(alphas))
        if threads <= 1:
            return _numba_log_quadrature(alphas, centers, halves, *args)
        parts = np.array_split(np.arange(len(alphas)), threads)
        with ThreadPoolExecutor(threads) as pool:
            outs = pool.map(
                lambda ix: _numba_log_quadrature(alphas[ix], centers[ix], halves[ix], *args), parts
            )
            return np.concatenate(list(outs))
    if backend != "numpy":
        raise ValueError(f"unknown backend {backend!r}")
    return _numpy_log_quadrature(phi, alphas, centers, halves, float(k), nodes, weights)
