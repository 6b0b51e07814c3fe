"""Python bindings for the profuse survival-fusion library.

The heavy lifting lives in the compiled ``_core`` extension; this package
re-exports the pieces that are useful from scripts and notebooks.
"""

from ._core import (
    concordance_index,
    cox_loss,
    cox_loss_gradient,
    early_stop_epoch,
    fit_cph,
    oracle_cindex,
    roc_auc,
    run_cli,
    summarize,
    ttr_from_log_risk,
)

__all__ = [
    "concordance_index",
    "cox_loss",
    "cox_loss_gradient",
    "early_stop_epoch",
    "fit_cph",
    "oracle_cindex",
    "roc_auc",
    "run_cli",
    "summarize",
    "ttr_from_log_risk",
]
