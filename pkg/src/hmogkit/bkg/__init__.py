"""Biometric key generation: Lee-metric codes, fuzzy commitments, and
attacker-effort analysis."""

from .code import (
    CodeConstructionError,
    CodeParams,
    DecodeFailure,
    codebook,
    decode,
    decode_brute,
    encode,
    grs_build,
)
from .commitment import (
    DEFAULT_CONTEXT,
    Commitment,
    DiscretizationSpec,
    OpenFailure,
    assign_d_range,
    commit,
    derive_key,
    derive_tag,
    ds,
    fit_discretization,
    open_commitment,
    read_commitment,
    write_commitment,
)
from .field import (
    centered,
    inv_mod,
    is_prime,
    lee_distance,
    lee_weight,
    lee_weight_total,
)
from .guessing import GuessingReport, guessing_distance, open_matrix

__all__ = [
    "DEFAULT_CONTEXT",
    "CodeConstructionError",
    "CodeParams",
    "Commitment",
    "DecodeFailure",
    "DiscretizationSpec",
    "GuessingReport",
    "OpenFailure",
    "assign_d_range",
    "centered",
    "codebook",
    "commit",
    "decode",
    "decode_brute",
    "derive_key",
    "derive_tag",
    "ds",
    "encode",
    "fit_discretization",
    "grs_build",
    "guessing_distance",
    "inv_mod",
    "is_prime",
    "lee_distance",
    "lee_weight",
    "lee_weight_total",
    "open_commitment",
    "open_matrix",
    "read_commitment",
    "write_commitment",
]
