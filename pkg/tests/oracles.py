"""Independent reference computations used by several test modules."""

import numpy as np
from scipy.special import comb

from ksns.diagnostics import GronwallProblem


def pulse_train(t, B, sigma, k):
    """Smooth ``sigma``-periodic pulses ``h >= 0`` whose integral over every
    window of length ``sigma`` is exactly ``B``."""
    mean = comb(2 * k, k) / 4.0**k  # mean of sin^(2k) over a period
    return (B / sigma) * np.sin(np.pi * t / sigma) ** (2 * k) / mean


def gronwall_batch(rng, count, samples=5000, substeps=2):
    """RK4 solutions of ``y' = -A y + h`` for random ``(y0, A, B, sigma)``,
    integrated side by side."""
    y0 = rng.uniform(0.0, 10.0, count)
    A = 10.0 ** rng.uniform(-1, 1, count)
    B = 10.0 ** rng.uniform(-2, 1, count)
    sigma = 10.0 ** rng.uniform(-1, 0.3, count)
    k = rng.integers(1, 5, count)
    T = 6 * sigma + np.minimum(3 / A, 20 * sigma)
    dt = T / (samples * substeps)

    def h(t):
        return pulse_train(t, B, sigma, k)

    ys = np.empty((samples + 1, count))
    ys[0] = y = y0.copy()
    t = np.zeros(count)
    h0 = h(t)
    for s in range(samples):
        for _ in range(substeps):
            # forcing at the step ends is shared with the neighbouring steps
            hm, h1 = h(t + dt / 2), h(t + dt)
            k1 = -A * y + h0
            k2 = -A * (y + dt / 2 * k1) + hm
            k3 = -A * (y + dt / 2 * k2) + hm
            k4 = -A * (y + dt * k3) + h1
            y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t = t + dt
            h0 = h1
        ys[s + 1] = y
    out = []
    for i in range(count):
        ts = np.linspace(0.0, T[i], samples + 1)
        out.append(GronwallProblem(y0[i], A[i], B[i], sigma[i], ts, ys[:, i],
                                   pulse_train(ts, B[i], sigma[i], k[i])))
    return out


def key_functional_loops(n, c, h, mask, m, eps):
    """``sum h^2 (n + eps)^m + sum h^2 |grad c|^2`` with the cell value of
    ``|grad c|^2`` the mean of the squared one-sided differences per axis
    (zero across walls), written with explicit loops."""
    ny, nx = n.shape
    total = 0.0
    for j in range(ny):
        for i in range(nx):
            if not mask[j, i]:
                continue
            total += h * h * (max(n[j, i], 0.0) + eps) ** m
            sq = 0.0
            for dj, di in ((0, -1), (0, 1)):
                jj, ii = j + dj, i + di
                if 0 <= ii < nx and mask[jj, ii]:
                    sq += 0.5 * ((c[jj, ii] - c[j, i]) / h) ** 2
            for dj, di in ((-1, 0), (1, 0)):
                jj, ii = j + dj, i + di
                if 0 <= jj < ny and mask[jj, ii]:
                    sq += 0.5 * ((c[jj, ii] - c[j, i]) / h) ** 2
            total += h * h * sq
    return total
