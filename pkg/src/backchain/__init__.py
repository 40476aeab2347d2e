"""Confidence-weighted backward chainer with fuzzy unification, dynamic rule
generation, a master-worker proof-graph builder, and exact top-k proof
extraction."""

__version__ = "0.1.0"

from .engine import ArtifactSet, Engine, EngineConfig, run_query
from .extraction import render_explanation
from .session import ArtifactTexts, execute_query, make_config, parse_artifacts
from .textio import parse_kb, parse_query

__all__ = [
    "ArtifactSet",
    "ArtifactTexts",
    "Engine",
    "EngineConfig",
    "__version__",
    "execute_query",
    "make_config",
    "parse_artifacts",
    "parse_kb",
    "parse_query",
    "render_explanation",
    "run_query",
]
