"""Python interface to the contrastlab C++ core.

Exposes corpus generation and splits, batch planning, the symmetric InfoNCE
objective, the warmup+cosine schedule, and single-experiment runs with
zero-shot evaluation.
"""

from ._contrastlab import (
    Corpus,
    SyntheticConfig,
    case_balanced_batches,
    evaluate_checkpoint,
    framing_for_step,
    generate_synthetic_corpus,
    infonce_grads,
    infonce_loss,
    lr_at_step,
    ratio_from_percent,
    run_single_experiment,
    section_balanced_batches,
    shuffled_batches,
    split_patient_level,
    stratified_subsample,
    __version__,
)

__all__ = [
    "Corpus",
    "SyntheticConfig",
    "case_balanced_batches",
    "evaluate_checkpoint",
    "framing_for_step",
    "generate_synthetic_corpus",
    "infonce_grads",
    "infonce_loss",
    "lr_at_step",
    "ratio_from_percent",
    "run_single_experiment",
    "section_balanced_batches",
    "shuffled_batches",
    "split_patient_level",
    "stratified_subsample",
    "__version__",
]
