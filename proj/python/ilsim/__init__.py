"""Instruction-latency learning and trace-driven CPU simulation."""

from ._core import (
    IlsimError,
    build_dataset,
    cpi_error_percent,
    des_run,
    evaluate,
    gen_workload,
    model_flops,
    partition_starts,
    prediction_error,
    simulate,
    train,
    __version__,
)

__all__ = [
    "IlsimError",
    "build_dataset",
    "cpi_error_percent",
    "des_run",
    "evaluate",
    "gen_workload",
    "model_flops",
    "partition_starts",
    "prediction_error",
    "simulate",
    "train",
    "__version__",
]
