"""Meta-embedding toolkit.

Combines several pre-trained embedding tables into one representation, either
with fixed ensemble transforms (concatenation, SVD compression, generalized
CCA) or with trained attention-weighted mixtures, and evaluates the result on
sentence-similarity and classification tasks.
"""

from .errors import (
    ConvergenceError,
    FileFormatError,
    MetaEmbedError,
    NonFiniteLossError,
    NotPositiveDefiniteError,
    ValidationError,
    ZeroRowWarning,
)

__version__ = "0.1.0"

__all__ = [
    "MetaEmbedError",
    "ValidationError",
    "FileFormatError",
    "NotPositiveDefiniteError",
    "ConvergenceError",
    "NonFiniteLossError",
    "ZeroRowWarning",
    "__version__",
]
