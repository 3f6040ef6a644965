"""Prompt-to-pose retrieval: normalization, embedding, gated exact search.

The pipeline never fabricates a pose: a Hit is returned only when the best
stored entry's similarity strictly exceeds the confidence threshold;
otherwise retrieval reports Bypassed and the caller falls back to
text-only conditioning.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .clients import EmbeddingClient, NormalizationClient
from .errors import ClientError, ValidationError
from .index import l2_normalize, mean_pool

logger = logging.getLogger(__name__)

DEFAULT_ALPHA_U = 0.55


@dataclass(frozen=True)
class UserPrompt:
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValidationError("prompt must be nonempty")


@dataclass(frozen=True)
class CanonicalQuery:
    text: str
    source: Literal["normalized", "passthrough"]


@dataclass(frozen=True)
class GateConfig:
    alpha_u: float = DEFAULT_ALPHA_U

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha_u <= 1.0:
            raise ValidationError(f"alpha_u must lie in [0, 1], got {self.alpha_u!r}")


@dataclass(frozen=True)
class RetrievalClients:
    embedder: EmbeddingClient
    normalizer: NormalizationClient | None = None


@dataclass(frozen=True)
class RetrievalOutcome:
    kind: Literal["hit", "bypassed"]
    canonical_query: CanonicalQuery
    pose_ref: str | None = None
    score: float | None = None
    entry_id: int | None = None
    best_score: float | None = None

    @property
    def is_hit(self) -> bool:
        return self.kind == "hit"


def normalize_prompt(
    prompt: UserPrompt, client: NormalizationClient | None
) -> CanonicalQuery:
    """Rewrite the prompt into a canonical query via the client.

    Without a client (passthrough mode), or when the client fails, the raw
    prompt is returned with source="passthrough"; failures log a warning
    rather than raising.
    """
    if client is None:
        return CanonicalQuery(prompt.text, "passthrough")
    try:
        canonical = client.normalize(prompt.text)
    except ClientError as exc:
        logger.warning("prompt normalization failed, using raw prompt: %s", exc)
        return CanonicalQuery(prompt.text, "passthrough")
    if not canonical.strip():
        logger.warning("normalization returned empty text, using raw prompt")
        return CanonicalQuery(prompt.text, "passthrough")
    return CanonicalQuery(canonical, "normalized")


def gate(score: float, cfg: GateConfig) -> bool:
    """True when the similarity score strictly exceeds the threshold."""
    return score > cfg.alpha_u


def embed_query(text: str, embedder: EmbeddingClient, dim: int | None = None) -> np.ndarray:
    """Embed text to a unit vector; token-matrix outputs are mean-pooled."""
    raw = np.asarray(embedder.embed(text), dtype=np.float64)
    if raw.ndim == 2:
        raw = mean_pool(raw)
    return l2_normalize(raw, dim=dim)


def retrieve(
    prompt: UserPrompt,
    index,
    clients: RetrievalClients,
    cfg: GateConfig = GateConfig(),
) -> RetrievalOutcome:
    """Full retrieval: normalize, embed, exact top-1 search, confidence gate."""
    canonical = normalize_prompt(prompt, clients.normalizer)
    query = embed_query(canonical.text, clients.embedder, dim=index.dim)
    hits = index.search(query, k=1)
    if not hits:
        return RetrievalOutcome("bypassed", canonical)
    top = hits[0]
    if gate(top.score, cfg):
        return RetrievalOutcome(
            "hit",
            canonical,
            pose_ref=index.entry(top.id).pose_ref,
            score=top.score,
            entry_id=top.id,
        )
    return RetrievalOutcome("bypassed", canonical, best_score=top.score)
