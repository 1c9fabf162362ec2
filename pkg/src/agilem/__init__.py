"""Concept classifiers from text phrases, trained on frozen co-embeddings.

Workflow: define a concept from phrases, expand it with nearest-neighbor
search over a cached embedding corpus, rate the candidates, train a small
MLP head, then loop with margin-based active learning.
"""

__version__ = "0.1.0"

from agilem.errors import (
    AgilemError,
    CorpusExhaustedError,
    FormatError,
    LedgerError,
    PhaseError,
    TrainingDivergedError,
    ValidationError,
)

__all__ = [
    "AgilemError",
    "CorpusExhaustedError",
    "FormatError",
    "LedgerError",
    "PhaseError",
    "TrainingDivergedError",
    "ValidationError",
    "__version__",
]
