"""Convergence diagnostics: effective sample size and split-R̂."""
import logging
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.fft import irfft, next_fast_len, rfft

from splinecos.errors import ValidationError
from splinecos.predict import PosteriorSamples

logger = logging.getLogger(__name__)


def _as_chains(ary: np.ndarray) -> np.ndarray:
    ary = np.asarray(ary, dtype=float)
    if ary.ndim == 1:
        ary = ary[None, :]
    if ary.ndim != 2 or ary.shape[1] < 4:
        raise ValidationError(f"need (chains, draws) with at least 4 draws, got shape {ary.shape}")
    return ary


def split_chains(ary: np.ndarray) -> np.ndarray:
    """Stack the first and last halves of every chain as separate chains."""
    ary = _as_chains(ary)
    half = ary.shape[1] // 2
    return np.vstack((ary[:, :half], ary[:, -half:]))


def autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of a 1D series at every lag, via FFT."""
    n = len(x)
    size = next_fast_len(2 * n)
    centred = x - x.mean()
    spectrum = rfft(centred, n=size)
    return irfft(spectrum * np.conjugate(spectrum), n=size)[:n] / n


def effective_sample_size(ary: np.ndarray, split: bool = True) -> float:
    """ESS with Geyer's initial monotone sequence estimator."""
    ary = split_chains(ary) if split else _as_chains(ary)
    if not np.all(np.isfinite(ary)):
        return np.nan
    n_chain, n_draw = ary.shape
    acov = np.asarray([autocovariance(chain) for chain in ary])
    chain_mean = ary.mean(axis=1)
    mean_var = np.mean(acov[:, 0]) * n_draw / (n_draw - 1.0)
    var_plus = mean_var * (n_draw - 1.0) / n_draw
    if n_chain > 1:
        var_plus += np.var(chain_mean, ddof=1)
    if var_plus <= 0:
        return np.nan

    rho = np.zeros(n_draw)
    rho_even = 1.0
    rho[0] = rho_even
    rho_odd = 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    rho[1] = rho_odd

    # initial positive sequence
    t = 1
    while t < n_draw - 2 and rho_even + rho_odd >= 0.0:
        rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        rho[t + 1] = rho_even
        if rho_even + rho_odd >= 0:
            rho[t + 2] = rho_odd
        t += 2
    max_t = t

    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = 0.5 * (rho[t - 1] + rho[t])
            rho[t + 2] = rho[t + 1]
        t += 2

    tau = -1.0 + 2.0 * np.sum(rho[:max_t]) + np.sum(rho[max_t + 1:max_t + 2])
    # antithetic chains: cap ESS at n * log10(n)
    tau = max(tau, 1.0 / np.log10(n_chain * n_draw))
    return float(n_chain * n_draw / tau)


def split_rhat(ary: np.ndarray) -> float:
    """R̂ with within-chain variance from split halves and between-chain variance from chains.

    Copies of one chain give exactly 1. Drift inside a chain shrinks the half-chain
    variances, so chains that drift apart are flagged sooner than with full-chain variances.
    """
    chains = _as_chains(ary)
    halves = split_chains(chains)
    within = np.mean(np.var(halves, axis=1, ddof=1))
    if within <= 0:
        return np.nan
    between_over_n = np.var(chains.mean(axis=1), ddof=1) if len(chains) > 1 else 0.0
    return float(np.sqrt((within + between_over_n) / within))


def diagnose(samples: PosteriorSamples, names: Optional[Sequence[str]] = None,
             include_fields: bool = False) -> pd.DataFrame:
    """Per-parameter mean, sd, ESS and (with two or more chains) split-R̂."""
    if names is None:
        names = samples.columns if include_fields else samples.scalar_columns
    multi_chain = samples.n_chains > 1
    rows = []
    for name in names:
        chains = samples.by_chain(name)
        values = chains.ravel()
        row = {
            "parameter": name,
            "mean": float(values.mean()),
            "sd": float(values.std(ddof=1)) if values.size > 1 else 0.0,
            "ess": effective_sample_size(chains),
        }
        if multi_chain:
            row["rhat"] = split_rhat(chains)
        rows.append(row)
    table = pd.DataFrame(rows, columns=["parameter", "mean", "sd", "ess"] + (["rhat"] if multi_chain else []))
    if multi_chain:
        flagged = table[table["rhat"] >= 1.05]
        if len(flagged):
            logger.warning("%d parameters have split R-hat >= 1.05: %s", len(flagged),
                           ", ".join(flagged["parameter"].head(10)))
    return table
