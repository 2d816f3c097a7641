"""HTTP client for a diffusion/feature sidecar service.

Wire format: JSON bodies, images as base64 PNG, feature tensors as
base64 little-endian float32 row-major. Non-2xx replies carry
{"error": "..."}; transport failures and error replies raise distinct
exceptions so callers can retry sensibly.
"""

from __future__ import annotations

import base64
import io
import os

import numpy as np
import requests
from PIL import Image

from ..correspondence import FeatureMap
from ..errors import ProviderError, TransportError
from .base import Provider, VerifyResult

TOKEN_ENV = "A3SYN_PROVIDER_TOKEN"


def encode_image(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image(data: str) -> np.ndarray:
    raw = base64.b64decode(data)
    return np.asarray(Image.open(io.BytesIO(raw)).convert("RGB"))


def encode_mask(mask: np.ndarray) -> str:
    img = (np.asarray(mask, dtype=bool) * np.uint8(255)).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class HttpProvider(Provider):
    def __init__(
        self,
        base_url: str,
        token: str | None = None,
        timeout: float = 120.0,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        self.timeout = timeout
        self.session = session or requests.Session()

    def _headers(self) -> dict:
        if self.token:
            return {"Authorization": f"Bearer {self.token}"}
        return {}

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        url = f"{self.base_url}{path}"
        try:
            resp = self.session.request(
                method,
                url,
                json=payload,
                headers=self._headers(),
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"{method} {url}: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            try:
                detail = resp.json().get("error", resp.text)
            except ValueError:
                detail = resp.text
            raise ProviderError(f"{method} {path} -> {resp.status_code}: {detail}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProviderError(f"{method} {path}: non-JSON reply") from exc

    def capabilities(self) -> dict:
        return self._request("GET", "/capabilities")

    def inpaint(self, image, mask, prompt, gamma, seed) -> np.ndarray:
        reply = self._request(
            "POST",
            "/inpaint",
            {
                "image": encode_image(image),
                "mask": encode_mask(mask),
                "prompt": prompt,
                "gamma": float(gamma),
                "seed": int(seed),
            },
        )
        if "image" not in reply:
            raise ProviderError("inpaint reply is missing 'image'")
        return decode_image(reply["image"])

    def extract_features(self, image) -> FeatureMap:
        reply = self._request("POST", "/features", {"image": encode_image(image)})
        try:
            h, w, d = int(reply["h"]), int(reply["w"]), int(reply["d"])
            raw = base64.b64decode(reply["data"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed features reply: {exc}") from exc
        data = np.frombuffer(raw, dtype="<f4")
        if data.size != h * w * d:
            raise ProviderError(
                f"features payload holds {data.size} floats, expected {h * w * d}"
            )
        return FeatureMap(data.reshape(h, w, d).copy())

    def verify(self, image, prompt) -> VerifyResult:
        reply = self._request(
            "POST", "/verify", {"image": encode_image(image), "prompt": prompt}
        )
        if not isinstance(reply.get("is_valid"), bool):
            raise ProviderError("verify reply is missing boolean 'is_valid'")
        return VerifyResult(is_valid=reply["is_valid"], raw=str(reply.get("raw", "")))
