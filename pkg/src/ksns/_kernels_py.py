"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and return values; results agree with the compiled
backend to rounding (summation order differs).
"""

import numpy as np

BACKEND = "python"


def stencil_apply(diag, wx, wy, x):
    out = diag * x
    out[:, 1:] -= wx[:, 1:-1] * x[:, :-1]
    out[:, :-1] -= wx[:, 1:-1] * x[:, 1:]
    out[1:, :] -= wy[1:-1, :] * x[:-1, :]
    out[:-1, :] -= wy[1:-1, :] * x[1:, :]
    return out


def pcg_smoothed(diag, wx, wy, b, x0, inv_m, tol, max_iter):
    x = np.array(x0, dtype=float, copy=True)
    r = b - stencil_apply(diag, wx, wy, x)
    z = inv_m * r
    p = z.copy()
    rz = float(np.vdot(r, z))
    y = x.copy()
    s = r.copy()
    history = [float(np.sqrt(np.vdot(s, s)))]
    k = 0
    while k < max_iter:
        if np.max(np.abs(s)) <= tol:
            break
        q = stencil_apply(diag, wx, wy, p)
        pq = float(np.vdot(p, q))
        if pq <= 0.0:
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        d = r - s
        dd = float(np.vdot(d, d))
        eta = -float(np.vdot(s, d)) / dd if dd > 0.0 else 0.0
        y += eta * (x - y)
        s += eta * d
        z = inv_m * r
        rz_new = float(np.vdot(r, z))
        k += 1
        history.append(float(np.sqrt(np.vdot(s, s))))
        if rz == 0.0:
            break
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return y, k, np.asarray(history)


def upwind_flux(vel, q, axis):
    out = np.zeros_like(vel)
    if axis == 1:
        v = vel[:, 1:-1]
        out[:, 1:-1] = np.where(v > 0.0, v * q[:, :-1], np.where(v < 0.0, v * q[:, 1:], 0.0))
    else:
        v = vel[1:-1, :]
        out[1:-1, :] = np.where(v > 0.0, v * q[:-1, :], np.where(v < 0.0, v * q[1:, :], 0.0))
    return out
