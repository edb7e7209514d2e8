"""Finite-state versus collective-state analysis of cooperative run lengths."""

from .fsm import (
    Machine,
    asymptotic_decay,
    convergence_ratio,
    convergence_ratio_offset,
    decompose_classes,
    repeat_probability,
    sample_unifilar,
    simulate,
    spectral_radius,
    stratified_sample_by_radius,
    word_matrix,
)
from .ingest import (
    PageHistory,
    RevisionRecord,
    agreement_report,
    coarse_grain,
    detect_revert_comment,
    fetch_api,
    parse_dump,
    parse_tsv,
)
from .models import (
    CSParams,
    FitOptions,
    LimitCSParams,
    NExpParams,
    fit_mle,
    laplace_evidence,
    poisson_loglike,
    select_model,
    significance_band,
    synth_sample,
)
from .runstats import RunHistogram, SymbolSequence, augment_user_changes, count_runs

__version__ = "0.1.0"
