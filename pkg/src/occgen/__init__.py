"""Latent-Gaussian multisite daily precipitation occurrence modeling."""

from .data import (
    DRY,
    MISSING,
    WET,
    OccurrenceRecord,
    PrecipRecord,
    SeasonMap,
    binarize,
    load_record,
    month_slice,
    synth_record,
    write_record,
)
from .evaluate import (
    aggregate_totals,
    compare,
    lagged_interstation_corr,
    max_dry_run,
    pct_wet,
)
from .model import (
    FittedModel,
    FullCovariance,
    LagCorrBlocks,
    MonthlyMarginals,
    adjust_sigma_all,
    assemble_sigma_all,
    eig_repair,
    estimate_joint_prob,
    estimate_marginals,
    fit,
    load_model,
    make_model,
    save_model,
    solve_latent_corr,
)
from .numerics import (
    RngStream,
    bivariate_normal_cdf,
    cholesky,
    find_root,
    mvn_sample,
    std_normal_cdf,
    std_normal_quantile,
    sym_eigen,
)
# the simulate *function* stays namespaced (occgen.simulate.simulate) so the
# occgen.simulate module itself is importable as an attribute
from .simulate import SimulationConfig, cond_step, init_block, simulate_ensemble

__version__ = "0.1.0"
