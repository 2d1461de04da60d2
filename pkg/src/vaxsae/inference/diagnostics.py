"""Split R-hat and effective sample size for multi-chain draws.

R-hat is the split version, taking the worst of the rank-normalized bulk,
the rank-normalized folded and the raw-scale statistics; ESS sums autocorrelations
in pairs and stops at the first pair whose sum is negative (Geyer's initial
positive sequence), with the monotone adjustment.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np
from scipy.stats import norm, rankdata


class DiagnosticsError(ValueError):
    pass


def _check(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DiagnosticsError("expected draws of shape (chains, draws)")
    if x.shape[0] < 2 or x.shape[1] < 4:
        raise DiagnosticsError("need at least 2 chains with at least 4 draws each")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, -half:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average").reshape(x.shape)
    return norm.ppf((r - 0.375) / (x.size + 0.25))


def _is_constant(x: np.ndarray) -> bool:
    return bool(np.ptp(x) <= 1e-12 * max(1.0, np.abs(x).max()))


def _rhat_basic(x: np.ndarray) -> float:
    m, n = x.shape
    chain_var = x.var(axis=1, ddof=1)
    W = chain_var.mean()
    B = n * x.mean(axis=1).var(ddof=1)
    if W <= 0:
        return np.nan
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def rhat(draws) -> float:
    """Split R-hat: the largest of the rank-normalized bulk and folded
    versions and the classic version on the raw draws.

    Ranks cap the bulk value for fully separated chains (about 1.83 for two
    chains), so the raw-scale value is kept to flag gross disagreement.
    Constant draws give ``nan``.
    """
    x = _check(draws)
    if _is_constant(x):
        return float("nan")
    xs = _split(x)
    bulk = _rhat_basic(_rank_normalize(xs))
    folded = np.abs(xs - np.median(xs))
    tail = _rhat_basic(_rank_normalize(folded)) if not _is_constant(folded) else bulk
    return float(max(bulk, tail, _rhat_basic(xs)))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Autocovariance along the last axis via FFT."""
    n = x.shape[-1]
    xc = x - x.mean(axis=-1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, n=size)
    acov = np.fft.irfft(f * np.conj(f), n=size)[..., :n] / n
    return acov


def ess(draws) -> float:
    """Effective sample size of the (split) chains.

    Constant draws give ``nan`` instead of dividing by zero.
    """
    x = _check(draws)
    if _is_constant(x):
        return float("nan")
    x = _split(x)
    m, n = x.shape
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if var_plus <= 0:
        return float("nan")
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum consecutive pairs while positive, force monotone decrease
    pairs = []
    t = 0
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s < 0:
            break
        pairs.append(s)
        t += 2
    pairs = np.minimum.accumulate(np.asarray(pairs)) if pairs else np.asarray([1.0])
    tau_hat = -1.0 + 2.0 * pairs.sum()
    tau_hat = max(tau_hat, 1.0 / np.log10(m * n))
    return float(m * n / tau_hat)


def summarize_diagnostics(params: Mapping[str, np.ndarray]) -> dict:
    """R-hat and ESS for every named ``(chains, draws)`` array.

    Parameters whose draws are constant are reported as ``None`` and listed
    under ``degenerate``.
    """
    out_r, out_e, degenerate = {}, {}, []
    for name, x in params.items():
        r, e = rhat(x), ess(x)
        if np.isnan(r):
            degenerate.append(name)
            out_r[name] = out_e[name] = None
        else:
            out_r[name], out_e[name] = r, e
    finite = [v for v in out_r.values() if v is not None]
    return {
        "rhat": out_r,
        "ess": out_e,
        "degenerate": degenerate,
        "max_rhat": float(max(finite)) if finite else float("nan"),
        "min_ess": float(min(v for v in out_e.values() if v is not None)) if finite else float("nan"),
    }
