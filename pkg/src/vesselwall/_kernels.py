"""Inner loops that dominate runtime.

Each kernel has a numba-compiled path and a numpy/pure-Python fallback.  The
fallback is used when numba is missing or when ``VESSELWALL_NO_JIT`` is set to
a truthy value.  ``set_jit(False)`` switches at runtime (benchmarks, tests).

Interpolation uses the ``a + (b - a) * f`` form so constants survive exactly.
"""

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _env_disabled():
    flag = os.environ.get("VESSELWALL_NO_JIT", "").strip().lower()
    return flag not in ("", "0", "false", "no", "off")


USE_NUMBA = numba is not None and not _env_disabled()


def set_jit(enabled):
    """Select the numba path (``True``) or the numpy fallback (``False``)."""
    global USE_NUMBA
    if enabled and numba is None:
        raise RuntimeError("numba is not installed")
    USE_NUMBA = bool(enabled)


def jit_enabled():
    return USE_NUMBA


if numba is not None:
    _jit = numba.njit(cache=True, nogil=True)
else:  # pragma: no cover
    def _jit(f):
        return f


# -- bilinear sampling ----------------------------------------------------------

def _bilinear_numpy(img, ys, xs, wrap_rows):
    h, w = img.shape
    x = np.clip(xs, 0.0, w - 1.0)
    x0 = np.floor(x).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    fx = x - x0
    if wrap_rows:
        yf = np.floor(ys)
        fy = ys - yf
        y0 = yf.astype(np.intp) % h
        y1 = (y0 + 1) % h
    else:
        y = np.clip(ys, 0.0, h - 1.0)
        yf = np.floor(y)
        fy = y - yf
        y0 = yf.astype(np.intp)
        y1 = np.minimum(y0 + 1, h - 1)
    a = img[y0, x0]
    top = a + (img[y0, x1] - a) * fx
    c = img[y1, x0]
    bot = c + (img[y1, x1] - c) * fx
    return top + (bot - top) * fy


def _bilinear_loop(img, ys, xs, wrap_rows, out):
    h, w = img.shape
    for i in range(ys.shape[0]):
        x = min(max(xs[i], 0.0), w - 1.0)
        xf = math.floor(x)
        x0 = int(xf)
        x1 = min(x0 + 1, w - 1)
        fx = x - xf
        if wrap_rows:
            yf = math.floor(ys[i])
            fy = ys[i] - yf
            y0 = int(yf) % h
            y1 = (y0 + 1) % h
        else:
            y = min(max(ys[i], 0.0), h - 1.0)
            yf = math.floor(y)
            fy = y - yf
            y0 = int(yf)
            y1 = min(y0 + 1, h - 1)
        a = img[y0, x0]
        top = a + (img[y0, x1] - a) * fx
        c = img[y1, x0]
        bot = c + (img[y1, x1] - c) * fx
        out[i] = top + (bot - top) * fy


_bilinear_nb = _jit(_bilinear_loop)


def bilinear_sample(img, ys, xs, wrap_rows=False):
    """Sample ``img`` at fractional ``(row, col)`` index coordinates.

    Columns are clamped to the image.  Rows are clamped too unless
    ``wrap_rows`` is set, in which case they are taken modulo the height.
    Returns float64 values shaped like ``ys``.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    shape = ys.shape
    if USE_NUMBA:
        out = np.empty(ys.size, dtype=np.float64)
        _bilinear_nb(img, np.ascontiguousarray(ys).ravel(), np.ascontiguousarray(xs).ravel(),
                     bool(wrap_rows), out)
        return out.reshape(shape)
    return _bilinear_numpy(img, ys.ravel(), xs.ravel(), bool(wrap_rows)).reshape(shape)


# -- periodic radius snake --------------------------------------------------------

_STEPS = np.array([0.0, -0.5, 0.5, -1.0, 1.0])


def _snake_total(rho, grad, sign, alpha, beta, gamma):
    n = rho.shape[0]
    nr = grad.shape[1]
    e = 0.0
    for k in range(n):
        d1 = rho[(k + 1) % n] - rho[k]
        d2 = rho[(k + 1) % n] - 2.0 * rho[k] + rho[(k - 1) % n]
        r = rho[k]
        i0 = int(math.floor(r))
        if i0 >= nr - 1:
            g = grad[k, nr - 1]
        else:
            g0 = grad[k, i0]
            g = g0 + (grad[k, i0 + 1] - g0) * (r - i0)
        e += alpha * d1 * d1 + beta * d2 * d2 + gamma * sign * g
    return e


def _snake_descend(rho, grad, sign, alpha, beta, gamma, max_iter, energies):
    # energies[0] holds the starting total; each accepted move lowers it by
    # exactly the change of the node's local terms
    n = rho.shape[0]
    nr = grad.shape[1]
    hi = nr - 1.0
    sweeps = 0
    for _ in range(max_iter):
        changed = False
        drop = 0.0
        for k in range(n):
            a = rho[(k - 1) % n]
            aa = rho[(k - 2) % n]
            b = rho[(k + 1) % n]
            bb = rho[(k + 2) % n]
            cur = rho[k]
            best_r = cur
            best_e = 0.0
            cur_e = 0.0
            # candidate 0 is the current position; later ones must beat it strictly
            for j in range(_STEPS.shape[0]):
                r = cur + _STEPS[j]
                if r < 0.0 or r > hi:
                    continue
                i0 = int(math.floor(r))
                if i0 >= nr - 1:
                    g = grad[k, nr - 1]
                else:
                    g0 = grad[k, i0]
                    g = g0 + (grad[k, i0 + 1] - g0) * (r - i0)
                e = alpha * ((r - a) ** 2 + (b - r) ** 2)
                e += beta * ((r - 2.0 * a + aa) ** 2 + (b - 2.0 * r + a) ** 2
                             + (bb - 2.0 * b + r) ** 2)
                e += gamma * sign * g
                if j == 0:
                    best_e = e
                    cur_e = e
                elif e < best_e - 1e-12:
                    best_e = e
                    best_r = r
            if best_r != cur:
                drop += cur_e - best_e
                rho[k] = best_r
                changed = True
        sweeps += 1
        energies[sweeps] = energies[sweeps - 1] - drop
        if not changed:
            break
    return sweeps


_snake_total_nb = _jit(_snake_total)
_snake_descend_nb = _jit(_snake_descend)


def snake_descend(rho, grad, sign, alpha, beta, gamma, max_iter):
    """Coordinate descent on a periodic radius function.

    Args:
        rho: initial radius per angle row.
        grad: ``(rows, radii)`` map sampled linearly along each row.
        sign: ``-1`` rewards high ``grad`` (lumen), ``+1`` rewards low (outer).
        alpha, beta, gamma: elasticity, stiffness and image weights.
        max_iter: maximum number of full sweeps.

    Returns:
        ``(rho, energies)``; ``energies[i]`` is the total energy after sweep
        ``i`` (``energies[0]`` is the starting energy).
    """
    rho = np.array(rho, dtype=np.float64)
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    energies = np.empty(int(max_iter) + 1, dtype=np.float64)
    energies[0] = snake_energy(rho, grad, sign, alpha, beta, gamma)
    fn = _snake_descend_nb if USE_NUMBA else _snake_descend
    sweeps = fn(rho, grad, float(sign), float(alpha), float(beta), float(gamma),
                int(max_iter), energies)
    return rho, energies[: sweeps + 1].copy()


def snake_energy(rho, grad, sign, alpha, beta, gamma):
    rho = np.ascontiguousarray(rho, dtype=np.float64)
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    fn = _snake_total_nb if USE_NUMBA else _snake_total
    return float(fn(rho, grad, float(sign), float(alpha), float(beta), float(gamma)))
