"""Uniform sampling and approximate counting over join-project queries."""

from .access import OpCounters, make_rng
from .engine import Engine, build_engine
from .model import (Instance, JoinSketchError, QueryShape, QuerySpec, Relation, ShapeKind,
                    classify_query)

__version__ = "0.1.0"

__all__ = ["Engine", "Instance", "JoinSketchError", "OpCounters", "QueryShape", "QuerySpec",
           "Relation", "ShapeKind", "build_engine", "classify_query", "make_rng", "__version__"]
