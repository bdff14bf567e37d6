"""doorkeep: face-gated office entry with a PIN second factor,
speech-driven guest routing, and delivery notices, split across an
outdoor door unit and an indoor controller talking a framed TCP
protocol."""

__version__ = "0.1.0"

from .crypto import CipherKey, xor_transform
from .directory import (
    Directory,
    DirectoryConfig,
    EmployeeRecord,
    TemplateStore,
    load_directory,
    lookup_first_by_name,
)
from .flows import AccessController, FlowConfig, Outcome, SessionKind
from .recognition import MatchResult, RecognitionConfig, decide_access
from .transcription import Band, NameMatch, match_name, similarity

__all__ = [
    "AccessController",
    "Band",
    "CipherKey",
    "Directory",
    "DirectoryConfig",
    "EmployeeRecord",
    "FlowConfig",
    "MatchResult",
    "NameMatch",
    "Outcome",
    "RecognitionConfig",
    "SessionKind",
    "TemplateStore",
    "decide_access",
    "load_directory",
    "lookup_first_by_name",
    "match_name",
    "similarity",
    "xor_transform",
    "__version__",
]
