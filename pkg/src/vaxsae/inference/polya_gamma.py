"""Exact Polya-Gamma sampling by the alternating-series method.

``PG(1, c)`` is drawn as ``J*(1, |c|/2) / 4`` using Devroye's rejection
scheme with the truncation point ``t = 0.64``: proposals come from a mixture of
a truncated inverse Gaussian on ``(0, t]`` and a shifted exponential on
``(t, inf)``, and are accepted by bracketing the target density between
partial sums of its alternating series. ``PG(b, c)`` for integer ``b`` is a
sum of ``b`` independent ``PG(1, c)`` draws.

Everything is vectorized: all pending draws advance together and only the
rejected ones are re-proposed.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_ndtr

TRUNC = 0.64
_PI2 = np.pi**2


def _series_coef(n: int, x: np.ndarray) -> np.ndarray:
    """n-th coefficient of the J*(1, 0) density series at ``x``."""
    k = (n + 0.5) * np.pi
    out = np.empty_like(x)
    hi = x > TRUNC
    out[hi] = k * np.exp(-0.5 * k * k * x[hi])
    lo = ~hi
    xl = x[lo]
    with np.errstate(divide="ignore"):
        expnt = -1.5 * (np.log(0.5 * np.pi) + np.log(xl)) + np.log(k) - 2.0 * (n + 0.5) ** 2 / xl
    out[lo] = np.where(xl > 0, np.exp(expnt), 0.0)
    return out


def _prob_exponential_piece(z: np.ndarray) -> np.ndarray:
    """Mixture weight of the exponential proposal piece."""
    t = TRUNC
    fz = _PI2 / 8.0 + 0.5 * z * z
    b = np.sqrt(1.0 / t) * (t * z - 1.0)
    a = -np.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = np.log(fz) + fz * t
    xb = x0 - z + log_ndtr(b)
    xa = x0 + z + log_ndtr(a)
    # 1 / (1 + q/p) in log space; q/p overflows for large z
    log_q_over_p = np.log(4.0 / np.pi) + np.logaddexp(xb, xa)
    return expit(-log_q_over_p)


def _truncated_inverse_gaussian(z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """IG(mean 1/z, shape 1) restricted to ``(0, TRUNC]``."""
    t = TRUNC
    out = np.empty_like(z)
    mu = np.where(z > 0, 1.0 / np.maximum(z, 1e-300), np.inf)
    small_z = mu > t

    # mu > t: propose from the truncated 1/chi^2_1 and accept with exp(-z^2 x / 2)
    idx = np.flatnonzero(small_z)
    while idx.size:
        e1 = rng.standard_exponential(idx.size)
        e2 = rng.standard_exponential(idx.size)
        bad = e1 * e1 > 2.0 * e2 / t
        while bad.any():
            e1[bad] = rng.standard_exponential(bad.sum())
            e2[bad] = rng.standard_exponential(bad.sum())
            bad = e1 * e1 > 2.0 * e2 / t
        x = t / (1.0 + t * e1) ** 2
        accept = rng.random(idx.size) <= np.exp(-0.5 * z[idx] ** 2 * x)
        out[idx[accept]] = x[accept]
        idx = idx[~accept]

    # mu <= t: plain IG draws (Michael-Schucany-Haas) until one lands below t
    idx = np.flatnonzero(~small_z)
    while idx.size:
        m = mu[idx]
        y = rng.standard_normal(idx.size) ** 2
        x = m + 0.5 * m * m * y - 0.5 * m * np.sqrt(4.0 * m * y + (m * y) ** 2)
        flip = rng.random(idx.size) > m / (m + x)
        x = np.where(flip, m * m / x, x)
        ok = x <= t
        out[idx[ok]] = x[ok]
        idx = idx[~ok]
    return out


def _pg1(c: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    z = 0.5 * np.abs(c)
    out = np.empty_like(z)
    fz = _PI2 / 8.0 + 0.5 * z * z
    p_exp = _prob_exponential_piece(z)
    pending = np.arange(z.size)
    while pending.size:
        zp = z[pending]
        use_exp = rng.random(pending.size) < p_exp[pending]
        x = np.empty(pending.size)
        ne = int(use_exp.sum())
        x[use_exp] = TRUNC + rng.standard_exponential(ne) / fz[pending][use_exp]
        if ne < pending.size:
            x[~use_exp] = _truncated_inverse_gaussian(zp[~use_exp], rng)
        s = _series_coef(0, x)
        u = rng.random(pending.size) * s
        decided = np.zeros(pending.size, dtype=bool)
        accepted = np.zeros(pending.size, dtype=bool)
        n = 0
        while not decided.all():
            n += 1
            live = ~decided
            a_n = np.zeros(pending.size)
            a_n[live] = _series_coef(n, x[live])
            if n % 2 == 1:
                s = s - a_n
                hit = live & (u <= s)
                accepted |= hit
                decided |= hit
            else:
                s = s + a_n
                miss = live & (u > s)
                decided |= miss
        out[pending[accepted]] = 0.25 * x[accepted]
        pending = pending[~accepted]
    return out


def sample_polya_gamma(b, c, rng: np.random.Generator):
    """Draw ``PG(b, c)`` for integer ``b >= 1``; broadcasts ``b`` against ``c``.

    Returns a float for scalar inputs, otherwise an array of the broadcast
    shape.
    """
    b_arr, c_arr = np.broadcast_arrays(np.asarray(b), np.asarray(c, dtype=float))
    if np.any(b_arr < 1) or np.any(b_arr != np.round(b_arr)):
        raise ValueError("b must be a positive integer")
    shape = c_arr.shape
    b_flat = b_arr.astype(np.int64).ravel()
    c_flat = c_arr.ravel()
    reps = np.repeat(np.arange(c_flat.size), b_flat)
    draws = _pg1(c_flat[reps], rng)
    out = np.bincount(reps, weights=draws, minlength=c_flat.size).reshape(shape)
    return float(out) if out.ndim == 0 else out


def pg_mean(b, c):
    """``E[PG(b, c)] = b tanh(c/2) / (2c)``, with the limit ``b/4`` at 0."""
    b = np.asarray(b, dtype=float)
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-6
    safe = np.where(small, 1.0, c)
    return np.where(small, b / 4.0 * (1.0 - c * c / 12.0), b * np.tanh(safe / 2.0) / (2.0 * safe))
