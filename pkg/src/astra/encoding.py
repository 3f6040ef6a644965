"""Token-sequence assembly and two-axis rotary position encoding.

Desk-scale reference kernel for the asymmetric conditioning scheme: pose
tokens are bound to the latent canvas (native grid positions), reference
tokens are re-indexed beyond the canvas so their index sets never collide
with latent positions, and text tokens sit at a constant position. The two
symmetric modes reproduce the ablation configurations in which either all
image tokens are canvas-bound or the pose is offset like a reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ValidationError

ROPE_BASE = 10000.0


class Role(str, Enum):
    TEXT = "text"
    REF = "ref"
    POSE = "pose"
    LATENT = "latent"


class EncodingMode(str, Enum):
    ASYMMETRIC = "asymmetric"
    SYMMETRIC_ROPE = "symmetric_rope"
    SYMMETRIC_UNOPE = "symmetric_unope"


class PositionIndex(NamedTuple):
    i: int
    j: int


@dataclass(frozen=True)
class Token:
    role: Role
    features: np.ndarray
    position: PositionIndex
    ref_index: int | None = None

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 1 or feats.shape[0] == 0 or feats.shape[0] % 2 != 0:
            raise ValidationError(
                f"token features must be a 1-D even-length vector, got shape {feats.shape}"
            )
        object.__setattr__(self, "features", feats)


@dataclass(frozen=True)
class LayoutSpec:
    """Patch-grid extents: latent canvas, ordered references, pose, text length.

    Grid extents are (width, height) in patches.
    """

    latent: tuple[int, int]
    refs: tuple[tuple[int, int], ...] = ()
    pose: tuple[int, int] | None = None
    text_len: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "refs", tuple(tuple(r) for r in self.refs))
        object.__setattr__(self, "latent", tuple(self.latent))
        if self.pose is not None:
            object.__setattr__(self, "pose", tuple(self.pose))
        for w, h in (self.latent, *self.refs) + ((self.pose,) if self.pose else ()):
            if w < 1 or h < 1:
                raise ValidationError("all grid extents must be >= 1 patch")
        if self.pose is not None and (
            self.pose[0] > self.latent[0] or self.pose[1] > self.latent[1]
        ):
            raise ValidationError("pose grid must not exceed the latent canvas")
        if self.text_len < 0:
            raise ValidationError("text_len must be non-negative")


@dataclass(frozen=True)
class PositionTable:
    text: tuple[PositionIndex, ...]
    refs: tuple[tuple[PositionIndex, ...], ...]
    pose: tuple[PositionIndex, ...]
    latent: tuple[PositionIndex, ...]


def _grid(w: int, h: int, offset: tuple[int, int] = (0, 0)) -> tuple[PositionIndex, ...]:
    return tuple(
        PositionIndex(i + offset[0], j + offset[1]) for j in range(h) for i in range(w)
    )


def assign_positions(layout: LayoutSpec, mode: EncodingMode) -> PositionTable:
    """Assign 2-D rotary positions to every token slot of the layout.

    asymmetric: latent and pose share native canvas coordinates; reference k
    is offset by the cumulative extents of the latent plus all preceding
    references, so its index set is disjoint from the canvas and from every
    other reference. symmetric_rope: every image token keeps native grid
    coordinates. symmetric_unope: the pose is offset like one more reference.
    Text tokens always sit at (0, 0).
    """
    w0, h0 = layout.latent
    text = tuple(PositionIndex(0, 0) for _ in range(layout.text_len))
    latent = _grid(w0, h0)

    if mode is EncodingMode.SYMMETRIC_ROPE:
        refs = tuple(_grid(w, h) for w, h in layout.refs)
        pose = _grid(*layout.pose) if layout.pose else ()
        return PositionTable(text, refs, pose, latent)

    off_w, off_h = w0, h0
    refs = []
    for w, h in layout.refs:
        refs.append(_grid(w, h, (off_w, off_h)))
        off_w += w
        off_h += h
    if layout.pose is None:
        pose: tuple[PositionIndex, ...] = ()
    elif mode is EncodingMode.ASYMMETRIC:
        pose = _grid(*layout.pose)
    else:  # SYMMETRIC_UNOPE: pose offset as an additional reference
        pose = _grid(*layout.pose, (off_w, off_h))
    return PositionTable(text, tuple(refs), pose, latent)


def tokenize_image(patch_grid, role: Role, ref_index: int | None = None) -> list[Token]:
    """Flatten an (height, width, d) patch-feature grid into row-major tokens.

    Each token records its native grid coordinate (i = column, j = row).
    """
    grid = np.asarray(patch_grid, dtype=np.float64)
    if grid.ndim != 3:
        raise ValidationError(f"patch grid must be height x width x features, got shape {grid.shape}")
    h, w, _d = grid.shape
    if h == 0 or w == 0:
        raise ValidationError("patch grid is empty")
    return [
        Token(role, grid[j, i].copy(), PositionIndex(i, j), ref_index)
        for j in range(h)
        for i in range(w)
    ]


def text_tokens(features) -> list[Token]:
    """Wrap an (L, d) matrix as text tokens at the constant position (0, 0)."""
    mat = np.asarray(features, dtype=np.float64)
    if mat.ndim != 2:
        raise ValidationError(f"text features must be L x d, got shape {mat.shape}")
    return [Token(Role.TEXT, row.copy(), PositionIndex(0, 0)) for row in mat]


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[Token, ...]
    mode: EncodingMode

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


def _grid_dims(tokens: Sequence[Token], what: str) -> tuple[int, int]:
    positions = {t.position for t in tokens}
    w = max(p.i for p in positions) + 1
    h = max(p.j for p in positions) + 1
    if positions != set(_grid(w, h)):
        raise ValidationError(f"{what} tokens do not form a full {w}x{h} grid")
    return w, h


def _check_roles(tokens: Sequence[Token], role: Role, what: str) -> None:
    for t in tokens:
        if t.role is not role:
            raise ValidationError(f"{what} slot contains a {t.role.value!r} token")


def assemble_sequence(
    text_toks: Sequence[Token],
    ref_token_lists: Sequence[Sequence[Token]],
    pose_toks: Sequence[Token],
    latent_toks: Sequence[Token],
    mode: EncodingMode,
) -> TokenSequence:
    """Concatenate text, references, pose and latent tokens in stream order,
    with positions reassigned according to the encoding mode."""
    _check_roles(text_toks, Role.TEXT, "text")
    for k, ref in enumerate(ref_token_lists):
        _check_roles(ref, Role.REF, f"reference {k}")
    _check_roles(pose_toks, Role.POSE, "pose")
    _check_roles(latent_toks, Role.LATENT, "latent")
    if not latent_toks:
        raise ValidationError("latent token list must be nonempty")

    layout = LayoutSpec(
        latent=_grid_dims(latent_toks, "latent"),
        refs=tuple(_grid_dims(ref, f"reference {k}") for k, ref in enumerate(ref_token_lists)),
        pose=_grid_dims(pose_toks, "pose") if pose_toks else None,
        text_len=len(text_toks),
    )
    table = assign_positions(layout, mode)

    ordered: list[Token] = []
    ordered.extend(replace(t, position=p) for t, p in zip(text_toks, table.text))
    for k, ref in enumerate(ref_token_lists):
        ordered.extend(
            replace(t, position=p, ref_index=k) for t, p in zip(ref, table.refs[k])
        )
    ordered.extend(replace(t, position=p) for t, p in zip(pose_toks, table.pose))
    ordered.extend(replace(t, position=p) for t, p in zip(latent_toks, table.latent))
    return TokenSequence(tuple(ordered), mode)


def rope_apply(features, pos, base: float = ROPE_BASE) -> np.ndarray:
    """Rotate feature pairs by position-dependent angles (two-axis rotary).

    The first half of the pairs is rotated by angles i * base^(-2m/d_axis),
    the second half by j-angles, with d_axis = d/2 features per axis.
    Position (0, 0) is the identity, and the map is an isometry.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] == 0 or x.shape[0] % 4 != 0:
        raise ValidationError(
            f"feature dimension must be a positive multiple of 4, got shape {x.shape}"
        )
    d = x.shape[0]
    i, j = pos
    m = np.arange(d // 4, dtype=np.float64)
    freqs = base ** (-2.0 * m / (d / 2))
    angles = np.concatenate([i * freqs, j * freqs])
    cos, sin = np.cos(angles), np.sin(angles)
    pairs = x.reshape(-1, 2)
    out = np.empty_like(pairs)
    out[:, 0] = pairs[:, 0] * cos - pairs[:, 1] * sin
    out[:, 1] = pairs[:, 0] * sin + pairs[:, 1] * cos
    return out.reshape(d)


@dataclass(frozen=True)
class AttentionParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray

    def __post_init__(self) -> None:
        for name in ("wq", "wk", "wv"):
            mat = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, mat)
            if mat.ndim != 2 or mat.shape != self.wq.shape or mat.shape[0] != mat.shape[1]:
                raise ValidationError("projection matrices must be square and same-shape")


def init_attention_params(rng: np.random.Generator, d: int) -> AttentionParams:
    scale = 1.0 / math.sqrt(d)
    return AttentionParams(
        wq=rng.normal(0.0, scale, (d, d)),
        wk=rng.normal(0.0, scale, (d, d)),
        wv=rng.normal(0.0, scale, (d, d)),
    )


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def attention_logits(
    seq: TokenSequence, params: AttentionParams, base: float = ROPE_BASE
) -> np.ndarray:
    """Pre-softmax attention logits (n x n) with rotary Q/K rotation."""
    x = np.stack([t.features for t in seq.tokens])
    d = params.wq.shape[0]
    if x.shape[1] != d:
        raise ValidationError(
            f"token feature dim {x.shape[1]} does not match projection dim {d}"
        )
    q = x @ params.wq
    k = x @ params.wk
    for n, token in enumerate(seq.tokens):
        q[n] = rope_apply(q[n], token.position, base)
        k[n] = rope_apply(k[n], token.position, base)
    return (q @ k.T) / math.sqrt(d)


def attention_forward(
    seq: TokenSequence, params: AttentionParams, base: float = ROPE_BASE
) -> np.ndarray:
    """Single-head scaled dot-product attention with rotary Q/K rotation.

    Returns one output vector per token (n x d). Deterministic.
    """
    logits = attention_logits(seq, params, base)
    v = np.stack([t.features for t in seq.tokens]) @ params.wv
    return _softmax_rows(logits) @ v
