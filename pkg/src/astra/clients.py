"""Embedding and prompt-normalization clients.

HTTP clients speak the sidecar wire protocol (POST /embed, POST /normalize,
JSON bodies). The built-in hash embedder is a deterministic stand-in used
when no embedding endpoint is configured; it hashes lowercase alphanumeric
tokens into signed bins and L2-normalizes, so identical text always maps to
the identical unit vector.
"""

from __future__ import annotations

import re
from typing import Protocol, runtime_checkable

import httpx
import numpy as np

from .errors import ClientError
from .index import EMBED_DIM

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_FNV_OFFSET = 2166136261
_FNV_PRIME = 16777619


@runtime_checkable
class EmbeddingClient(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


@runtime_checkable
class NormalizationClient(Protocol):
    def normalize(self, text: str) -> str: ...


def fnv1a32(token: str) -> int:
    """32-bit FNV-1a hash over the token's UTF-8 bytes."""
    h = _FNV_OFFSET
    for b in token.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & 0xFFFFFFFF
    return h


class HashEmbedder:
    """Deterministic token-hash featurizer emitting unit-norm vectors."""

    def __init__(self, dim: int = EMBED_DIM) -> None:
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            raise ClientError("text has no embeddable tokens")
        acc = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            h = fnv1a32(token)
            idx = (h & 0x7FFFFFFF) % self.dim
            acc[idx] += -1.0 if (h >> 31) & 1 else 1.0
        norm = float(np.linalg.norm(acc))
        if norm == 0.0:
            raise ClientError("token hashes cancelled out; cannot embed")
        return acc / norm


class PassthroughNormalizer:
    """Returns the prompt unchanged."""

    def normalize(self, text: str) -> str:
        return text


class HttpEmbeddingClient:
    def __init__(self, base_url: str, timeout: float = 2.0, transport=None) -> None:
        self._client = httpx.Client(base_url=base_url, timeout=timeout, transport=transport)

    def embed(self, text: str) -> np.ndarray:
        try:
            resp = self._client.post("/embed", json={"text": text})
            resp.raise_for_status()
            vector = resp.json()["vector"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise ClientError(f"embedding request failed: {exc!r}") from exc
        arr = np.asarray(vector, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != EMBED_DIM:
            raise ClientError(f"embedding service returned shape {arr.shape}, expected ({EMBED_DIM},)")
        return arr

    def close(self) -> None:
        self._client.close()


class HttpNormalizationClient:
    def __init__(self, base_url: str, timeout: float = 2.0, transport=None) -> None:
        self._client = httpx.Client(base_url=base_url, timeout=timeout, transport=transport)

    def normalize(self, text: str) -> str:
        try:
            resp = self._client.post("/normalize", json={"text": text})
            resp.raise_for_status()
            canonical = resp.json()["canonical"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise ClientError(f"normalization request failed: {exc!r}") from exc
        if not isinstance(canonical, str):
            raise ClientError("normalization service returned a non-string canonical query")
        return canonical

    def close(self) -> None:
        self._client.close()
