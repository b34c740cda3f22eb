"""Alternating optimization of the precoders and the STAR-RIS coefficients."""

from .ao import (
    InitializationError,
    OuterIteration,
    SolveError,
    SolveOptions,
    SolveTrace,
    StepRecord,
    ao_solve,
    initialize,
    ris_step,
    transmit_step,
)
from .ris import Recovery, recover_rank_one
from .surrogate import qt_objective, update_alpha

__all__ = [
    "InitializationError",
    "OuterIteration",
    "Recovery",
    "SolveError",
    "SolveOptions",
    "SolveTrace",
    "StepRecord",
    "ao_solve",
    "initialize",
    "qt_objective",
    "recover_rank_one",
    "ris_step",
    "transmit_step",
    "update_alpha",
]
