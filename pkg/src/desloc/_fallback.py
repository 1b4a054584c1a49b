"""Pure numpy versions of the hot kernels.

Every routine here mirrors ``_kernels.pyx`` operation for operation so the two
backends produce bit-identical results. Arrays are float64, C-contiguous, with
one row per worker. Routines ending in ``_step`` update their arguments in place.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


_SPLIT = 134217729.0  # 2**27 + 1


def mean_rows(a: np.ndarray) -> np.ndarray:
    """Mean over rows in double-double precision, accumulated in row order.

    Each row is folded into a (hi, lo) pair with an error-free two-sum, and the
    division by ``n`` recovers its remainder exactly (``n < 2**26``), so the
    result is within about one rounding of the true mean. Identical rows come
    back unchanged because their exact mean is representable. The result is
    clamped to the per-coordinate range of the inputs.
    """
    n = a.shape[0]
    hi = a[0].copy()
    lo = np.zeros_like(hi)
    mn = hi.copy()
    mx = hi.copy()
    for j in range(1, n):
        v = a[j]
        s = hi + v
        bb = s - hi
        lo = lo + ((hi - (s - bb)) + (v - bb))
        hi = s
        np.minimum(mn, v, out=mn)
        np.maximum(mx, v, out=mx)
    q = hi / n
    c = _SPLIT * q
    qh = c - (c - q)
    ql = q - qh
    r = ((hi - qh * n) - ql * n) + lo
    out = q + r / n
    np.maximum(out, mn, out=out)
    np.minimum(out, mx, out=out)
    return out


def clip_rows(g: np.ndarray, rho: float) -> None:
    np.minimum(g, rho, out=g)
    np.maximum(g, -rho, out=g)


def row_norms(g: np.ndarray) -> np.ndarray:
    acc = np.zeros(g.shape[0])
    for j in range(g.shape[1]):
        col = g[:, j]
        acc += col * col
    return np.sqrt(acc)


def clip_rows_norm(g: np.ndarray, rho: float) -> None:
    norms = row_norms(g)
    for i in np.nonzero(norms > rho)[0]:
        g[i] *= rho / norms[i]


def rosenbrock_grad(x: np.ndarray, out: np.ndarray) -> None:
    x1 = x[:, 0]
    x2 = x[:, 1]
    r = x2 - x1 * x1
    out[:, 0] = -2.0 * (1.0 - x1) - 400.0 * x1 * r
    out[:, 1] = 200.0 * r


def quadratic_grad(x: np.ndarray, centers: np.ndarray, curvature: np.ndarray,
                   out: np.ndarray) -> None:
    np.multiply(curvature, x - centers, out=out)


def _adam_rows(x, u, v, vt, g, b1, c1, b2, c2, lam2, eta, amsgrad):
    u *= b1
    u += c1 * g
    v *= b2
    v += c2 * (g * g)
    if amsgrad:
        np.maximum(vt, v, out=vt)
        veff = vt
    else:
        veff = v
    x -= (eta / np.sqrt(veff + lam2)) * u


def _adopt_rows(x, m, v, g, b1, c1, b2, c2, eps, eta):
    denom = np.maximum(np.sqrt(v), eps)
    v *= b2
    v += c2 * (g * g)
    m *= b1
    m += c1 * (g / denom)
    x -= eta * m


def _sgdm_rows(x, u, g, beta, c, eta):
    u *= beta
    u += c * g
    x -= eta * u


def _chunked(fn, arrays, scalars, threads):
    n = arrays[0].shape[0]
    if threads <= 1 or n < 2:
        fn(*arrays, *scalars)
        return
    bounds = np.linspace(0, n, min(threads, n) + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            pool.submit(fn, *(a[lo:hi] for a in arrays), *scalars)
            for lo, hi in zip(bounds[:-1], bounds[1:])
        ]
        for f in futures:
            f.result()


def adam_step(x, u, v, vt, g, beta1, beta2, lam2, eta, amsgrad, threads=1):
    arrays = [x, u, v, vt if amsgrad else v, g]
    scalars = (beta1, 1.0 - beta1, beta2, 1.0 - beta2, lam2, eta, amsgrad)
    _chunked(_adam_rows, arrays, scalars, threads)


def adopt_step(x, m, v, g, beta1, beta2, eps, eta, threads=1):
    scalars = (beta1, 1.0 - beta1, beta2, 1.0 - beta2, eps, eta)
    _chunked(_adopt_rows, [x, m, v, g], scalars, threads)


def sgdm_step(x, u, g, beta, eta, threads=1):
    _chunked(_sgdm_rows, [x, u, g], (beta, 1.0 - beta, eta), threads)
