"""Hot numeric kernels for the network vector field and the cost gradients.

Every kernel has an explicit-loop form (compiled with numba when the numba
backend is active) and a vectorized numpy form. Module-level names point at
whichever the backend selected; both forms stay importable so they can be
cross-checked and benchmarked against each other.
"""

import numpy as np

from ._backend import BACKEND, HAS_NUMBA, njit

# radial profile codes, see costs.RadialCost
SIN = 0
COSLOG = 1
POWER = 2
SQUARE = 3
SOFT = 4


# --------------------------------------------------------------------------
# network vector field

def field_loops(adj, x, v, w, sigma, grads, wdiag, dx, dv, dw, dsigma):
    """Per-agent right-hand side of the adaptive algorithm, written as loops.

    Shapes: ``adj`` (N, N), ``x``/``v``/``grads`` (N, n), ``w`` (N, N),
    ``sigma``/``wdiag`` (N,). Results are written into the ``d*`` arrays.
    """
    N, n = x.shape
    e = np.empty(n)
    for i in range(N):
        rho = 0.0
        for k in range(n):
            acc = 0.0
            lap_v = 0.0
            for j in range(N):
                a = adj[i, j]
                if a != 0.0:
                    acc += a * (x[i, k] - x[j, k])
                    lap_v += a * (v[i, k] - v[j, k])
            e[k] = acc
            rho += acc * acc
            dx[i, k] = -lap_v
        gain = sigma[i] + rho
        for k in range(n):
            dx[i, k] += -grads[i, k] / wdiag[i] - gain * e[k]
            dv[i, k] = gain * e[k]
        for m in range(N):
            acc = 0.0
            for j in range(N):
                a = adj[i, j]
                if a != 0.0:
                    acc += a * (w[i, m] - w[j, m])
            dw[i, m] = -acc
        dsigma[i] = rho


def field_numpy(adj, x, v, w, sigma, grads, wdiag, dx, dv, dw, dsigma):
    """Vectorized twin of :func:`field_loops`."""
    lap = np.diag(adj.sum(axis=1)) - adj
    e = lap @ x
    rho = np.einsum("ik,ik->i", e, e)
    gain = (sigma + rho)[:, None]
    dx[...] = -grads / wdiag[:, None] - gain * e - lap @ v
    dv[...] = gain * e
    dw[...] = -(lap @ w)
    dsigma[...] = rho


# --------------------------------------------------------------------------
# radial cost family: value = scale * phi(||s - center||)

def radial_profile(kind, r, scale, param):
    """Return ``(phi(r), phi'(r) / r)`` scaled, with the singular-point rules.

    ``phi'(r)/r`` multiplies ``s - center`` to give the gradient. At ``r = 0``
    the gradient factor is defined so the field stays finite.
    """
    if kind == SIN:
        val = np.sin(r)
        fac = np.cos(r) / r if r > 0.0 else 0.0
    elif kind == COSLOG:
        rc = r if r > param else param
        val = np.cos(np.log(rc))
        fac = -np.sin(np.log(rc)) / (rc * r) if r > param else 0.0
    elif kind == POWER:
        val = r ** param
        fac = param * r ** (param - 2.0) if r > 0.0 else 0.0
    elif kind == SQUARE:
        val = r * r
        fac = 2.0
    else:  # SOFT
        q = r * r + param
        val = r * r / np.sqrt(q)
        fac = (r * r + 2.0 * param) / (q * np.sqrt(q))
    return scale * val, scale * fac


def radial_gradients_loops(kinds, centers, scales, params, X, out):
    N, n = X.shape
    for i in range(N):
        r2 = 0.0
        for k in range(n):
            d = X[i, k] - centers[i, k]
            r2 += d * d
        _, fac = radial_profile_jit(kinds[i], np.sqrt(r2), scales[i], params[i])
        for k in range(n):
            out[i, k] = fac * (X[i, k] - centers[i, k])


def radial_gradients_numpy(kinds, centers, scales, params, X, out):
    U = X - centers
    r = np.sqrt(np.einsum("ik,ik->i", U, U))
    fac = np.array([radial_profile(kinds[i], r[i], scales[i], params[i])[1]
                    for i in range(len(r))])
    out[...] = fac[:, None] * U


# --------------------------------------------------------------------------
# Huber sums: componentwise sum_j H(Q_j, s) and its derivative in s

def huber_sums_loops(data, s, tol, val, grad):
    m, n = data.shape
    for k in range(n):
        val[k] = 0.0
        grad[k] = 0.0
    for j in range(m):
        for k in range(n):
            r = s[k] - data[j, k]
            if r > tol:
                val[k] += tol * r - 0.5 * tol * tol
                grad[k] += tol
            elif r < -tol:
                val[k] += -tol * r - 0.5 * tol * tol
                grad[k] -= tol
            else:
                val[k] += 0.5 * r * r
                grad[k] += r


def huber_sums_numpy(data, s, tol, val, grad):
    r = s[None, :] - data
    a = np.abs(r)
    quad = a <= tol
    val[...] = np.where(quad, 0.5 * r * r, tol * a - 0.5 * tol * tol).sum(axis=0)
    grad[...] = np.clip(r, -tol, tol).sum(axis=0)


# --------------------------------------------------------------------------
# mixed cost table: every agent is either radial (ctype 0) or Huber (ctype 1).
# Huber data is zero-padded to (N, m_max, n); ``hcount[i]`` rows are live.

def mixed_gradients_loops(ctype, kinds, centers, scales, params, hdata, hcount, htol, X, out):
    N, n = X.shape
    for i in range(N):
        if ctype[i] == 0:
            r2 = 0.0
            for k in range(n):
                d = X[i, k] - centers[i, k]
                r2 += d * d
            _, fac = radial_profile_jit(kinds[i], np.sqrt(r2), scales[i], params[i])
            for k in range(n):
                out[i, k] = fac * (X[i, k] - centers[i, k])
        else:
            tol = htol[i]
            for k in range(n):
                val = 0.0
                grad = 0.0
                for j in range(hcount[i]):
                    r = X[i, k] - hdata[i, j, k]
                    if r > tol:
                        val += tol * r - 0.5 * tol * tol
                        grad += tol
                    elif r < -tol:
                        val += -tol * r - 0.5 * tol * tol
                        grad -= tol
                    else:
                        val += 0.5 * r * r
                        grad += r
                if val > 0.0:
                    out[i, k] = grad
                elif val < 0.0:
                    out[i, k] = -grad
                else:
                    out[i, k] = 0.0


def mixed_gradients_numpy(ctype, kinds, centers, scales, params, hdata, hcount, htol, X, out):
    N, n = X.shape
    for i in range(N):
        if ctype[i] == 0:
            radial_gradients_numpy(kinds[i:i + 1], centers[i:i + 1], scales[i:i + 1],
                                   params[i:i + 1], X[i:i + 1], out[i:i + 1])
        else:
            val = np.empty(n)
            grad = np.empty(n)
            huber_sums_numpy(hdata[i, :hcount[i]], X[i], htol[i], val, grad)
            out[i] = np.sign(val) * grad


# --------------------------------------------------------------------------
# fused RK4: advance the flat state [x, v, w, sigma] several steps in one call

def _fused_field(adj, y, N, n, ctype, kinds, centers, scales, params, hdata, hcount, htol,
                 wfix, grads, dy):
    # returns False on a positivity fault or a non-finite gradient
    a, b, c = N * n, 2 * N * n, 2 * N * n + N * N
    x = y[:a].reshape((N, n))
    v = y[a:b].reshape((N, n))
    w = y[b:c].reshape((N, N))
    sigma = y[c:]
    if wfix.shape[0] == N:
        wdiag = wfix
    else:
        wdiag = np.empty(N)
        for i in range(N):
            wdiag[i] = w[i, i]
            if not wdiag[i] > 0.0:
                return False
    mixed_gradients(ctype, kinds, centers, scales, params, hdata, hcount, htol, x, grads)
    if not np.isfinite(grads).all():
        return False
    network_field(adj, x, v, w, sigma, grads, wdiag,
                  dy[:a].reshape((N, n)), dy[a:b].reshape((N, n)),
                  dy[b:c].reshape((N, N)), dy[c:])
    return True


def rk4_block_loops(adj, y, h, n_steps, N, n, ctype, kinds, centers, scales, params,
                    hdata, hcount, htol, wfix):
    """Take up to ``n_steps`` RK4 steps of size ``h`` in place on ``y``.

    Stops before any step that would hit a positivity fault, a non-finite
    gradient or a non-finite result, leaving ``y`` at the last good state.
    Returns the number of completed steps. ``wfix`` of length N pins
    ``w_i^i``; an empty array means the learned diagonal is used.
    """
    size = y.shape[0]
    grads = np.empty((N, n))
    k1 = np.empty(size)
    k2 = np.empty(size)
    k3 = np.empty(size)
    k4 = np.empty(size)
    tmp = np.empty(size)
    for step in range(n_steps):
        if not _fused_field(adj, y, N, n, ctype, kinds, centers, scales, params, hdata,
                            hcount, htol, wfix, grads, k1):
            return step
        for q in range(size):
            tmp[q] = y[q] + 0.5 * h * k1[q]
        if not _fused_field(adj, tmp, N, n, ctype, kinds, centers, scales, params, hdata,
                            hcount, htol, wfix, grads, k2):
            return step
        for q in range(size):
            tmp[q] = y[q] + 0.5 * h * k2[q]
        if not _fused_field(adj, tmp, N, n, ctype, kinds, centers, scales, params, hdata,
                            hcount, htol, wfix, grads, k3):
            return step
        for q in range(size):
            tmp[q] = y[q] + h * k3[q]
        if not _fused_field(adj, tmp, N, n, ctype, kinds, centers, scales, params, hdata,
                            hcount, htol, wfix, grads, k4):
            return step
        ok = True
        for q in range(size):
            tmp[q] = y[q] + (h / 6.0) * (k1[q] + 2.0 * (k2[q] + k3[q]) + k4[q])
            if not np.isfinite(tmp[q]):
                ok = False
        if not ok:
            return step
        for q in range(size):
            y[q] = tmp[q]
    return n_steps


def rk4_block_numpy(adj, y, h, n_steps, N, n, ctype, kinds, centers, scales, params,
                    hdata, hcount, htol, wfix):
    """Vectorized twin of :func:`rk4_block_loops` (same stopping rule)."""
    grads = np.empty((N, n))

    def f(z):
        dz = np.empty_like(z)
        ok = _fused_field(adj, z, N, n, ctype, kinds, centers, scales, params, hdata,
                          hcount, htol, wfix, grads, dz)
        return dz if ok else None

    for step in range(n_steps):
        k1 = f(y)
        k2 = None if k1 is None else f(y + (0.5 * h) * k1)
        k3 = None if k2 is None else f(y + (0.5 * h) * k2)
        k4 = None if k3 is None else f(y + h * k3)
        if k4 is None:
            return step
        y_new = y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        if not np.isfinite(y_new).all():
            return step
        y[:] = y_new
    return n_steps


if HAS_NUMBA:
    radial_profile_jit = njit(cache=True)(radial_profile)
    network_field = njit(cache=True)(field_loops)
    radial_gradients = njit(cache=True)(radial_gradients_loops)
    huber_sums = njit(cache=True)(huber_sums_loops)
    mixed_gradients = njit(cache=True)(mixed_gradients_loops)
    _fused_field = njit(cache=True)(_fused_field)
    rk4_block = njit(cache=True)(rk4_block_loops)
else:
    radial_profile_jit = radial_profile
    network_field = field_numpy
    radial_gradients = radial_gradients_numpy
    huber_sums = huber_sums_numpy
    mixed_gradients = mixed_gradients_numpy
    rk4_block = rk4_block_numpy

__all__ = [
    "BACKEND",
    "network_field",
    "radial_gradients",
    "huber_sums",
    "radial_profile",
    "field_loops",
    "field_numpy",
    "radial_gradients_loops",
    "radial_gradients_numpy",
    "huber_sums_loops",
    "huber_sums_numpy",
    "mixed_gradients",
    "mixed_gradients_loops",
    "mixed_gradients_numpy",
    "rk4_block",
    "rk4_block_loops",
    "rk4_block_numpy",
]
