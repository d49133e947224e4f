"""Python access to the ouroboros core: genome codec, gradient check, simulator and log tools."""

from ._ouroboros import (
    Genome,
    InsufficientData,
    IoError,
    ParseError,
    cost_epoch,
    gradient_check,
    mutate,
    parse_genome,
    serialize_genome,
    sim_run,
    summarize_log,
    validate_log,
)

__all__ = [
    "Genome",
    "InsufficientData",
    "IoError",
    "ParseError",
    "cost_epoch",
    "gradient_check",
    "mutate",
    "parse_genome",
    "serialize_genome",
    "sim_run",
    "summarize_log",
    "validate_log",
]
