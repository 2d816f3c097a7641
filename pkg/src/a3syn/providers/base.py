"""Generative backend interface and candidate selection.

A provider turns rendered views into inpainted targets, dense feature
maps, and yes/no verification verdicts. The optional observe_view hook
lets in-process providers see which cameras and vertices produced the
images they are handed; remote providers ignore it.
"""

from __future__ import annotations

import abc
import json
import re
from dataclasses import dataclass

import numpy as np

from ..correspondence import FeatureMap


@dataclass
class VerifyResult:
    is_valid: bool
    raw: str


_FENCE = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)


def parse_verify_reply(text: str) -> VerifyResult:
    """Extract {"is_valid": ...} from a model reply; malformed fails closed."""
    candidates = _FENCE.findall(text)
    if not candidates:
        start = text.find("{")
        end = text.rfind("}")
        if start >= 0 and end > start:
            candidates = [text[start : end + 1]]
    for blob in candidates:
        try:
            doc = json.loads(blob)
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict) and isinstance(doc.get("is_valid"), bool):
            return VerifyResult(is_valid=doc["is_valid"], raw=text)
    return VerifyResult(is_valid=False, raw=text)


class Provider(abc.ABC):
    """Inpainting, feature extraction, and verification backend."""

    def capabilities(self) -> dict:
        return {}

    @abc.abstractmethod
    def inpaint(
        self,
        image: np.ndarray,
        mask: np.ndarray,
        prompt: str,
        gamma: float,
        seed: int,
    ) -> np.ndarray:
        """Fill the masked region; gamma in [0, 1] is denoise strength."""

    @abc.abstractmethod
    def extract_features(self, image: np.ndarray) -> FeatureMap:
        """Dense semantic features, possibly coarser than the image."""

    @abc.abstractmethod
    def verify(self, image: np.ndarray, prompt: str) -> VerifyResult:
        """Ask whether the image shows a plausible interaction."""

    def observe_view(self, cameras, posed_vertices: np.ndarray) -> None:
        """Bind upcoming requests to cameras and posed geometry. No-op
        for backends that work from pixels alone."""


def select_candidate(
    provider: Provider,
    candidates: list[np.ndarray],
    prompt: str,
    max_retries: int = 2,
    regenerate=None,
) -> tuple[np.ndarray, int]:
    """First candidate the verifier accepts, regenerating when all fail.

    Returns (image, verify_calls). After max_retries regenerations with
    no accepted image, falls back to the first candidate of the last
    batch.
    """
    if not candidates:
        raise ValueError("no candidates to select from")
    calls = 0
    batch = list(candidates)
    for attempt in range(max_retries + 1):
        for image in batch:
            calls += 1
            if provider.verify(image, prompt).is_valid:
                return image, calls
        if attempt == max_retries or regenerate is None:
            break
        batch = list(regenerate(attempt))
        if not batch:
            break
    return batch[0], calls
