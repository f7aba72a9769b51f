"""Synthetic occurrence generation from a fitted model.

The first r+1 days of a run are one unconditional draw from the start
month's full covariance; every later day is drawn conditionally on the
previous r latent vectors using the current day's month parameters (the
conditional coefficients and the Cholesky factor of the conditional
covariance are cached once per month). Latent values above the site's
monthly threshold map to WET.
"""

from __future__ import annotations

import datetime as dt
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import OccurrenceRecord, date_range, months_of, DRY, WET
from .errors import FactorizationError, SimulationError
from .model import FittedModel
from .numerics import RngStream, cholesky, make_symmetric

__all__ = [
    "SimulationConfig",
    "LatentState",
    "init_block",
    "cond_step",
    "simulate",
    "simulate_ensemble",
]


@dataclass(frozen=True)
class SimulationConfig:
    start_date: dt.date
    end_date: dt.date
    n_replicates: int = 1
    base_seed: int = 0

    @property
    def n_days(self) -> int:
        return (self.end_date - self.start_date).days + 1


@dataclass(frozen=True)
class LatentState:
    """Last r latent vectors, most recent first."""

    history: tuple  # r arrays of length s


@dataclass(frozen=True)
class _MonthKernel:
    chol_all: np.ndarray       # Cholesky of the full covariance
    cond_coef: np.ndarray      # (s, r*s) conditional mean coefficients
    chol_cond: np.ndarray      # Cholesky of the Schur complement


def _month_kernel(model: FittedModel, month: int) -> _MonthKernel:
    cov = model.covariances[month]
    if not cov.adjusted:
        raise SimulationError(f"covariance for month {month} is not adjusted")
    m = cov.matrix
    s = cov.n_sites
    try:
        chol_all = cholesky(m)
    except FactorizationError as exc:
        raise SimulationError(f"month {month}: full covariance not PD ({exc})") from exc
    if cov.max_lag == 0:
        cond_coef = np.zeros((s, 0))
        cond_cov = m.copy()
    else:
        s12 = m[:s, s:]
        s22 = m[s:, s:]
        cond_coef = np.linalg.solve(s22, s12.T).T
        cond_cov = make_symmetric(m[:s, :s] - cond_coef @ s12.T)
    try:
        chol_cond = cholesky(cond_cov)
    except FactorizationError as exc:
        raise SimulationError(
            f"month {month}: conditional covariance degenerate ({exc})"
        ) from exc
    return _MonthKernel(chol_all=chol_all, cond_coef=cond_coef, chol_cond=chol_cond)


def prepare_kernels(model: FittedModel) -> dict:
    """Per-month conditional kernels, computed once per model."""
    return {month: _month_kernel(model, month) for month in range(1, 13)}


def init_block(model: FittedModel, month: int, rng) -> np.ndarray:
    """Unconditional draw for the first r+1 days, returned oldest-first (r+1, s)."""
    kernel = _month_kernel(model, month)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return _unstack_init(kernel, model, gen)


def _unstack_init(kernel: _MonthKernel, model: FittedModel, gen) -> np.ndarray:
    r, s = model.max_lag, model.n_sites
    draw = kernel.chol_all @ gen.standard_normal(s * (r + 1))
    # stacked most-recent-first: entries [0:s] are the newest day
    block = draw.reshape(r + 1, s)
    return block[::-1]


def cond_step(model: FittedModel, month: int, state: LatentState, rng) -> np.ndarray:
    """One conditional latent vector given the previous r days."""
    kernel = _month_kernel(model, month)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    history = np.concatenate(state.history) if state.history else np.zeros(0)
    if history.shape != (kernel.cond_coef.shape[1],):
        raise SimulationError(
            f"history length {history.shape} does not match lag order "
            f"{kernel.cond_coef.shape[1]}"
        )
    mu = kernel.cond_coef @ history
    return mu + kernel.chol_cond @ gen.standard_normal(model.n_sites)


def simulate(
    model: FittedModel,
    config: SimulationConfig,
    replicate_id: int = 0,
    keep_latent: bool = False,
    kernels: dict = None,
):
    """One occurrence record for [start_date, end_date], deterministic in
    (base_seed, replicate_id). With keep_latent, also returns the latent
    (n_days, s) matrix."""
    r, s = model.max_lag, model.n_sites
    n_days = config.n_days
    if n_days < r + 1:
        raise SimulationError(
            f"simulation span of {n_days} days is shorter than the "
            f"unconditional block of {r + 1} days"
        )
    if kernels is None:
        kernels = prepare_kernels(model)
    dates = date_range(config.start_date, n_days)
    months = months_of(dates)
    gen = RngStream(config.base_seed, replicate_id).generator()

    latent = np.empty((n_days, s))
    latent[: r + 1] = _unstack_init(kernels[int(months[0])], model, gen)
    noise = gen.standard_normal((n_days - (r + 1), s))
    for t in range(r + 1, n_days):
        kernel = kernels[int(months[t])]
        history = latent[t - r : t][::-1].reshape(-1)
        latent[t] = kernel.cond_coef @ history + kernel.chol_cond @ noise[t - (r + 1)]

    thresholds = model.marginals.c_hat[:, months - 1].T  # (n_days, s)
    states = np.where(latent > thresholds, WET, DRY).astype(np.int8)
    occ = OccurrenceRecord(dates=dates, sites=model.sites, states=states)
    if keep_latent:
        return occ, latent
    return occ


def simulate_ensemble(
    model: FittedModel, config: SimulationConfig, threads: int = 1
) -> list:
    """n_replicates independent records, ordered by replicate_id."""
    kernels = prepare_kernels(model)

    def run(rep):
        try:
            return simulate(model, config, replicate_id=rep, kernels=kernels)
        except SimulationError as exc:
            raise SimulationError(f"replicate {rep}: {exc}") from exc

    reps = range(config.n_replicates)
    if threads <= 1:
        return [run(rep) for rep in reps]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, reps))
