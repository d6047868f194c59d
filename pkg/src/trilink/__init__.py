"""Three-party secret-shared record linkage."""

from .config import Disclosure, LinkageConfig, default_weights
from .linkage import RawRecord, best_match_plain, encode_record
from .protocol import MatchResult, expected_rounds

__version__ = "0.1.0"

__all__ = [
    "Disclosure",
    "LinkageConfig",
    "MatchResult",
    "RawRecord",
    "best_match_plain",
    "default_weights",
    "encode_record",
    "expected_rounds",
]
