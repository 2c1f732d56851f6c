"""Structure-aware exemplar retrieval for semantic parsing."""

from ._core import (
    Encoder,
    ParseTree,
    RetrievalIndex,
    StareError,
    anonymize_leaves,
    bm25_topk,
    build_prompt,
    extract_features,
    lsh_params,
    parse,
    run,
    set_log_level,
    sim_struct,
    ted,
    write_fixture,
)

__all__ = [
    "Encoder",
    "ParseTree",
    "RetrievalIndex",
    "StareError",
    "anonymize_leaves",
    "bm25_topk",
    "build_prompt",
    "extract_features",
    "lsh_params",
    "parse",
    "run",
    "set_log_level",
    "sim_struct",
    "ted",
    "write_fixture",
]
