"""Model calibration: thresholds, latent correlations, covariance repair.

Each calendar month is fitted separately. For a month the estimated
lag blocks S_0..S_r are stacked into the block-Toeplitz matrix

    [ S_0    S_1   ...  S_r   ]
    [ S_1^T  S_0   ...  S_r-1 ]
    [  ...               ...  ]
    [ S_r^T  ...   S_1^T  S_0 ]

whose near-singularity is repaired by flooring eigenvalues at eps2
(after adding eps1 to every off-diagonal entry) and rescaling back to
unit diagonal; eps1 is chosen so the repair leaves the matrix unchanged
on average.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import data as _data
from .errors import (
    AdjustmentError,
    DegenerateMarginalError,
    EstimationError,
    InsufficientDataError,
)
from .numerics import (
    bivariate_normal_cdf,
    find_root,
    make_symmetric,
    std_normal_quantile,
    sym_eigen,
)

MODEL_FORMAT_VERSION = 1

DEFAULT_EPS2 = 0.05
DEFAULT_MAX_LAG = 2

_RHO_EDGE = 1.0 - 1e-12  # solver bracket for latent correlations
_EPS1_BRACKET = 0.5


@dataclass(frozen=True)
class MonthlyMarginals:
    """Per-site, per-month wet probabilities and latent thresholds."""

    sites: tuple
    p_hat: np.ndarray  # (s, 12)
    c_hat: np.ndarray  # (s, 12), c = Phi^-1(1 - p)


@dataclass(frozen=True)
class LagCorrBlocks:
    """Latent correlation blocks S_0..S_r for one calendar month."""

    month: int
    max_lag: int
    blocks: tuple  # r+1 arrays, each (s, s)


@dataclass(frozen=True)
class FullCovariance:
    """Block-Toeplitz latent covariance for one month, possibly repaired."""

    month: int
    matrix: np.ndarray  # (s(r+1), s(r+1))
    n_sites: int
    max_lag: int
    adjusted: bool = False
    eps1: float = 0.0
    eps2: float = DEFAULT_EPS2

    def block(self, i: int, j: int) -> np.ndarray:
        """Block at block-row i, block-column j (most-recent-first order)."""
        s = self.n_sites
        return self.matrix[i * s : (i + 1) * s, j * s : (j + 1) * s]


@dataclass(frozen=True)
class FittedModel:
    """Everything needed to simulate: marginals plus 12 adjusted covariances."""

    sites: tuple
    max_lag: int
    marginals: MonthlyMarginals
    covariances: dict  # month -> FullCovariance
    wet_threshold_mm: float = 1.0
    provenance: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def simulation_ready(self) -> bool:
        return all(self.covariances[m].adjusted for m in range(1, 13))


def estimate_marginals(occ: _data.OccurrenceRecord) -> MonthlyMarginals:
    """Observed wet fractions and thresholds per site-month (missing excluded)."""
    s = len(occ.sites)
    months = _data.months_of(occ.dates)
    p_hat = np.full((s, 12), np.nan)
    failures = []
    for month in range(1, 13):
        states = occ.states[months == month]
        n_wet = (states == _data.WET).sum(axis=0)
        n_obs = (states != _data.MISSING).sum(axis=0)
        for i in range(s):
            if n_wet[i] == 0:
                failures.append(DegenerateMarginalError(occ.sites[i], month, "dry"))
            elif n_wet[i] == n_obs[i]:
                failures.append(DegenerateMarginalError(occ.sites[i], month, "wet"))
            else:
                p_hat[i, month - 1] = n_wet[i] / n_obs[i]
    if len(failures) == 1:
        raise failures[0]
    if failures:
        raise EstimationError(
            "degenerate site-months:\n" + "\n".join(str(f) for f in failures)
        )
    c_hat = np.vectorize(std_normal_quantile)(1.0 - p_hat)
    return MonthlyMarginals(sites=occ.sites, p_hat=p_hat, c_hat=c_hat)


def _site_index(occ: _data.OccurrenceRecord, site) -> int:
    return site if isinstance(site, (int, np.integer)) else occ.sites.index(site)


def estimate_joint_prob(occ: _data.OccurrenceRecord, u, v, k: int, month: int) -> float:
    """Fraction of (day t in month, day t-k) pairs with both sites wet.

    Pairs where either member is missing are excluded from numerator and
    denominator; day t-k may fall in the previous month.
    """
    iu, iv = _site_index(occ, u), _site_index(occ, v)
    joint_wet, joint_obs = _joint_counts(occ, k, month)
    if joint_obs[iu, iv] == 0:
        raise InsufficientDataError(
            f"no valid pairs for sites ({occ.sites[iu]!r}, {occ.sites[iv]!r}), "
            f"lag {k}, month {month}"
        )
    return joint_wet[iu, iv] / joint_obs[iu, iv]


def _joint_counts(occ: _data.OccurrenceRecord, k: int, month: int):
    """(s, s) matrices of both-wet and both-observed pair counts for lag k."""
    idx = _data.month_slice(occ, month)
    idx = idx[idx >= k]
    a = occ.states[idx]
    b = occ.states[idx - k]
    wet_a = (a == _data.WET).astype(float)
    wet_b = (b == _data.WET).astype(float)
    obs_a = (a != _data.MISSING).astype(float)
    obs_b = (b != _data.MISSING).astype(float)
    return wet_a.T @ wet_b, obs_a.T @ obs_b


def solve_latent_corr(
    c_u: float,
    c_v: float,
    p_u: float,
    p_v: float,
    p_joint: float,
    warnings: Optional[list] = None,
) -> float:
    """Latent correlation rho with Phi2(c_u, c_v | rho) = 1 - p_u - p_v + p_joint.

    p_joint is clamped into its Frechet bounds first; a violation beyond
    1e-9 is recorded in `warnings` (if given) before clamping. The target
    is monotone in rho, so the bracketed solve always succeeds; targets at
    or beyond the attainable range return +/-(1 - 1e-12).
    """
    lo_bound = max(0.0, p_u + p_v - 1.0)
    hi_bound = min(p_u, p_v)
    if warnings is not None and (p_joint < lo_bound - 1e-9 or p_joint > hi_bound + 1e-9):
        warnings.append(
            f"joint probability {p_joint} outside Frechet bounds "
            f"[{lo_bound}, {hi_bound}]; clamped"
        )
    p_joint = min(hi_bound, max(lo_bound, p_joint))
    target = 1.0 - p_u - p_v + p_joint

    def resid(rho):
        return bivariate_normal_cdf(c_u, c_v, rho) - target

    lo, hi = -_RHO_EDGE, _RHO_EDGE
    if resid(lo) >= 0.0:
        return lo
    if resid(hi) <= 0.0:
        return hi
    return find_root(resid, lo, hi, tol=1e-13)


def estimate_lag_blocks(
    occ: _data.OccurrenceRecord,
    month: int,
    max_lag: int,
    marginals: Optional[MonthlyMarginals] = None,
    warnings: Optional[list] = None,
) -> LagCorrBlocks:
    """Estimate S_0..S_r for one month via the pairwise CDF inversion.

    S_0 has an imposed unit diagonal; lagged blocks include the site-with-
    itself autocorrelation entries, fitted like any other pair.
    """
    if marginals is None:
        marginals = estimate_marginals(occ)
    s = len(occ.sites)
    p = marginals.p_hat[:, month - 1]
    c = marginals.c_hat[:, month - 1]
    blocks = []
    for k in range(max_lag + 1):
        joint_wet, joint_obs = _joint_counts(occ, k, month)
        block = np.empty((s, s))
        for u in range(s):
            for v in range(s):
                if k == 0 and u == v:
                    block[u, v] = 1.0
                    continue
                if k == 0 and v < u:
                    block[u, v] = block[v, u]
                    continue
                if joint_obs[u, v] == 0:
                    raise InsufficientDataError(
                        f"no valid pairs for sites ({occ.sites[u]!r}, "
                        f"{occ.sites[v]!r}), lag {k}, month {month}"
                    )
                p_joint = joint_wet[u, v] / joint_obs[u, v]
                block[u, v] = solve_latent_corr(c[u], c[v], p[u], p[v], p_joint, warnings)
        blocks.append(make_symmetric(block) if k == 0 else block)
    return LagCorrBlocks(month=month, max_lag=max_lag, blocks=tuple(blocks))


def assemble_sigma_all(blocks: LagCorrBlocks) -> FullCovariance:
    """Stack lag blocks into the block-Toeplitz full covariance (unadjusted)."""
    r = blocks.max_lag
    s = blocks.blocks[0].shape[0]
    n = s * (r + 1)
    matrix = np.empty((n, n))
    for i in range(r + 1):
        for j in range(r + 1):
            blk = blocks.blocks[j - i] if j >= i else blocks.blocks[i - j].T
            matrix[i * s : (i + 1) * s, j * s : (j + 1) * s] = blk
    return FullCovariance(
        month=blocks.month, matrix=matrix, n_sites=s, max_lag=r, adjusted=False
    )


def eig_repair(m, eps1: float, eps2: float) -> np.ndarray:
    """Floor the eigenvalues of m + eps1*(1 - I) at eps2, rescale to unit diagonal."""
    if not eps2 > 0:
        raise ValueError(f"eps2 must be positive, got {eps2}")
    m = make_symmetric(m)
    n = m.shape[0]
    perturbed = m + eps1 * (np.ones((n, n)) - np.eye(n))
    pair = sym_eigen(perturbed)
    values = np.maximum(pair.values, eps2)
    recon = (pair.vectors * values) @ pair.vectors.T
    scale = 1.0 / np.sqrt(np.diag(recon))
    out = make_symmetric(recon * np.outer(scale, scale))
    np.fill_diagonal(out, 1.0)
    return out


def adjust_sigma_all(cov: FullCovariance, eps2: float = DEFAULT_EPS2) -> FullCovariance:
    """Repair cov so it is strictly PD while leaving it unchanged on average.

    eps1 is found by root-finding so the sum of elementwise deltas
    between the repaired and the raw matrix vanishes. A no-op (eps1 ~ 0)
    when the raw eigenvalues already clear eps2.
    """
    if cov.adjusted:
        raise ValueError("covariance is already adjusted")
    raw = cov.matrix

    def total_delta(eps1):
        return float((eig_repair(raw, eps1, eps2) - raw).sum())

    d0 = total_delta(0.0)
    if abs(d0) <= 1e-10:
        eps1 = 0.0
    else:
        eps1 = _solve_eps1(total_delta, d0)
    repaired = eig_repair(raw, eps1, eps2)
    return replace(cov, matrix=repaired, adjusted=True, eps1=eps1, eps2=eps2)


def _solve_eps1(total_delta, d0: float) -> float:
    # total_delta is increasing in eps1; expand from 0 toward the sign change.
    direction = -1.0 if d0 > 0.0 else 1.0
    prev = 0.0
    for step in (1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.35, _EPS1_BRACKET):
        cand = direction * step
        if total_delta(cand) * d0 <= 0.0:
            lo, hi = sorted((prev, cand))
            return find_root(total_delta, lo, hi, tol=1e-13)
        prev = cand
    raise AdjustmentError(
        f"eps1 not bracketed in [-{_EPS1_BRACKET}, {_EPS1_BRACKET}] (delta at 0: {d0})"
    )


def fit(
    occ: _data.OccurrenceRecord,
    max_lag: int = DEFAULT_MAX_LAG,
    eps2: float = DEFAULT_EPS2,
    wet_threshold_mm: float = 1.0,
    provenance: Optional[dict] = None,
) -> FittedModel:
    """Calibrate the full model: marginals plus 12 adjusted covariances."""
    marginals = estimate_marginals(occ)
    warnings: list = []
    covariances = {}
    per_month = {}
    for month in range(1, 13):
        blocks = estimate_lag_blocks(occ, month, max_lag, marginals, warnings)
        raw = assemble_sigma_all(blocks)
        min_eig = float(sym_eigen(raw.matrix).values[-1])
        adjusted = adjust_sigma_all(raw, eps2)
        covariances[month] = adjusted
        per_month[str(month)] = {
            "min_eigenvalue_raw": min_eig,
            "eps1": adjusted.eps1,
            "max_abs_delta": float(np.abs(adjusted.matrix - raw.matrix).max()),
        }
    return FittedModel(
        sites=occ.sites,
        max_lag=max_lag,
        marginals=marginals,
        covariances=covariances,
        wet_threshold_mm=wet_threshold_mm,
        provenance=provenance or {},
        diagnostics={"per_month": per_month, "warnings": warnings},
    )


def make_model(
    sites,
    p_wet,
    blocks_by_month,
    wet_threshold_mm: float = 1.0,
    eps2: float = DEFAULT_EPS2,
) -> FittedModel:
    """Build a simulation-ready model from explicit parameters.

    p_wet: (s, 12) wet probabilities (a (s,) vector is broadcast across
    months). blocks_by_month: month -> sequence of lag blocks S_0..S_r
    (a single sequence is reused for every month).
    """
    sites = tuple(sites)
    s = len(sites)
    p_hat = np.asarray(p_wet, dtype=float)
    if p_hat.ndim == 1:
        p_hat = np.repeat(p_hat[:, None], 12, axis=1)
    if p_hat.shape != (s, 12) or np.any(p_hat <= 0) or np.any(p_hat >= 1):
        raise ValueError("p_wet must be (s,) or (s, 12) with entries in (0, 1)")
    c_hat = np.vectorize(std_normal_quantile)(1.0 - p_hat)
    if not isinstance(blocks_by_month, dict):
        blocks_by_month = {m: blocks_by_month for m in range(1, 13)}
    covariances = {}
    for month in range(1, 13):
        raw_blocks = [np.asarray(b, dtype=float) for b in blocks_by_month[month]]
        if np.any([np.abs(b).max() > 1.0 for b in raw_blocks]):
            raise ValueError("latent correlations must lie in [-1, 1]")
        blocks = LagCorrBlocks(
            month=month, max_lag=len(raw_blocks) - 1, blocks=tuple(raw_blocks)
        )
        covariances[month] = adjust_sigma_all(assemble_sigma_all(blocks), eps2)
    return FittedModel(
        sites=sites,
        max_lag=covariances[1].max_lag,
        marginals=MonthlyMarginals(sites=sites, p_hat=p_hat, c_hat=c_hat),
        covariances=covariances,
        wet_threshold_mm=wet_threshold_mm,
    )


def implied_occurrence_corr(model: FittedModel, month: int, k: int, a: int, b: int) -> float:
    """Occurrence-scale (phi) correlation implied by the latent model.

    Forward map of the calibration equation: the latent correlation for
    (lag k, sites a, b) gives the joint wet probability, which with the
    marginals yields the Pearson correlation of the 0/1 series.
    """
    p_a = model.marginals.p_hat[a, month - 1]
    p_b = model.marginals.p_hat[b, month - 1]
    c_a = model.marginals.c_hat[a, month - 1]
    c_b = model.marginals.c_hat[b, month - 1]
    rho = model.covariances[month].block(0, k)[a, b]
    p_joint = p_a + p_b - 1.0 + bivariate_normal_cdf(c_a, c_b, rho)
    denom = np.sqrt(p_a * (1 - p_a) * p_b * (1 - p_b))
    return float((p_joint - p_a * p_b) / denom)


def model_to_dict(model: FittedModel) -> dict:
    """JSON-ready representation; floats survive round-trip bit-exactly."""
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "sites": list(model.sites),
        "max_lag": model.max_lag,
        "wet_threshold_mm": model.wet_threshold_mm,
        "marginals": {
            "p_hat": model.marginals.p_hat.tolist(),
            "c_hat": model.marginals.c_hat.tolist(),
        },
        "covariances": [
            {
                "month": month,
                "order": int(cov.matrix.shape[0]),
                "matrix": cov.matrix.flatten().tolist(),
                "adjusted": cov.adjusted,
                "eps1": cov.eps1,
                "eps2": cov.eps2,
            }
            for month, cov in sorted(model.covariances.items())
        ],
        "provenance": model.provenance,
        "diagnostics": model.diagnostics,
    }


def model_from_dict(doc: dict) -> FittedModel:
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise EstimationError(
            f"unsupported model format version {doc.get('format_version')!r}"
        )
    sites = tuple(doc["sites"])
    s = len(sites)
    max_lag = doc["max_lag"]
    covariances = {}
    for entry in doc["covariances"]:
        order = entry["order"]
        covariances[entry["month"]] = FullCovariance(
            month=entry["month"],
            matrix=np.array(entry["matrix"], dtype=float).reshape(order, order),
            n_sites=s,
            max_lag=max_lag,
            adjusted=entry["adjusted"],
            eps1=entry["eps1"],
            eps2=entry["eps2"],
        )
    return FittedModel(
        sites=sites,
        max_lag=max_lag,
        marginals=MonthlyMarginals(
            sites=sites,
            p_hat=np.array(doc["marginals"]["p_hat"], dtype=float),
            c_hat=np.array(doc["marginals"]["c_hat"], dtype=float),
        ),
        covariances=covariances,
        wet_threshold_mm=doc["wet_threshold_mm"],
        provenance=doc.get("provenance", {}),
        diagnostics=doc.get("diagnostics", {}),
    )


def save_model(model: FittedModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path) -> FittedModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
