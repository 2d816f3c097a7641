from .base import Provider, VerifyResult, parse_verify_reply, select_candidate
from .http import HttpProvider
from .mock import MockOracleProvider

__all__ = [
    "Provider",
    "VerifyResult",
    "parse_verify_reply",
    "select_candidate",
    "HttpProvider",
    "MockOracleProvider",
]
