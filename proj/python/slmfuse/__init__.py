"""Multimodal embedding fusion through a frozen language model."""

from ._core import (
    Checkpoint,
    Dataset,
    NumericalError,
    TrainConfig,
    ValidationError,
    asl_term,
    bss_select,
    class_weights,
    cli,
    generate_planted,
    generate_table1,
    gradcheck,
    label_counts,
    lm_hash,
    load_checkpoint,
    make_splits,
    planted_threshold,
    precision_recall,
    predict,
    predict_bss,
    read_dataset,
    save_checkpoint,
    split_by_patient,
    train,
    ts_features,
    wbce_term,
    write_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
