"""Cross-attention adapter that modulates text embeddings with visual features.

Text rows act as queries over visual keys/values; the attended values pass
through an output projection that is zero-initialized, so a fresh adapter
is an exact identity modulation (offset 0). A hierarchical variant emits
one global offset plus independent per-layer offsets. Analytic gradients
are hand-written and checked against central finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError


def _as_matrix(name: str, value) -> np.ndarray:
    mat = np.asarray(value, dtype=np.float64)
    if mat.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D matrix, got shape {mat.shape}")
    if not np.isfinite(mat).all():
        raise ValidationError(f"{name} contains non-finite entries")
    return mat


@dataclass(frozen=True)
class HeadParams:
    """One modulation head: query/key/value projections and output projection."""

    wq: np.ndarray  # (d_text, d_attn)
    wk: np.ndarray  # (d_visual, d_attn)
    wv: np.ndarray  # (d_visual, d_attn)
    wo: np.ndarray  # (d_attn, d_text)

    def __post_init__(self) -> None:
        for name in ("wq", "wk", "wv", "wo"):
            object.__setattr__(self, name, _as_matrix(name, getattr(self, name)))
        d_attn = self.wq.shape[1]
        if self.wk.shape[1] != d_attn or self.wv.shape[1] != d_attn:
            raise ValidationError("wq, wk, wv must share the attention dimension")
        if self.wk.shape[0] != self.wv.shape[0]:
            raise ValidationError("wk and wv must share the visual dimension")
        if self.wo.shape != (d_attn, self.wq.shape[0]):
            raise ValidationError(
                f"wo must have shape ({d_attn}, {self.wq.shape[0]}), got {self.wo.shape}"
            )

    @property
    def d_text(self) -> int:
        return self.wq.shape[0]

    @property
    def d_visual(self) -> int:
        return self.wk.shape[0]

    @property
    def d_attn(self) -> int:
        return self.wq.shape[1]


@dataclass(frozen=True)
class AdapterParams:
    """Global modulation head plus optional per-layer heads."""

    base: HeadParams
    layer_heads: tuple[HeadParams, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_heads", tuple(self.layer_heads))
        for head in self.layer_heads:
            if (head.d_text, head.d_visual) != (self.base.d_text, self.base.d_visual):
                raise ValidationError("layer heads must match the base head dimensions")


def init_head(
    rng: np.random.Generator,
    d_text: int,
    d_visual: int,
    d_attn: int | None = None,
    zero_output: bool = True,
) -> HeadParams:
    """Random projections scaled by 1/sqrt(dim); output projection zeroed by default."""
    d_attn = d_attn or d_text
    wo = (
        np.zeros((d_attn, d_text))
        if zero_output
        else rng.normal(0.0, 1.0 / math.sqrt(d_attn), (d_attn, d_text))
    )
    return HeadParams(
        wq=rng.normal(0.0, 1.0 / math.sqrt(d_text), (d_text, d_attn)),
        wk=rng.normal(0.0, 1.0 / math.sqrt(d_visual), (d_visual, d_attn)),
        wv=rng.normal(0.0, 1.0 / math.sqrt(d_visual), (d_visual, d_attn)),
        wo=wo,
    )


def init_adapter_params(
    rng: np.random.Generator,
    d_text: int,
    d_visual: int,
    d_attn: int | None = None,
    n_layers: int = 0,
    zero_output: bool = True,
) -> AdapterParams:
    return AdapterParams(
        base=init_head(rng, d_text, d_visual, d_attn, zero_output),
        layer_heads=tuple(
            init_head(rng, d_text, d_visual, d_attn, zero_output) for _ in range(n_layers)
        ),
    )


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _resolve_head(params: AdapterParams | HeadParams) -> HeadParams:
    return params.base if isinstance(params, AdapterParams) else params


def _check_shapes(text_emb: np.ndarray, visual: np.ndarray, head: HeadParams) -> None:
    if text_emb.shape[1] != head.d_text:
        raise ValidationError(
            f"text embedding dim {text_emb.shape[1]} != head text dim {head.d_text}"
        )
    if visual.shape[1] != head.d_visual:
        raise ValidationError(
            f"visual feature dim {visual.shape[1]} != head visual dim {head.d_visual}"
        )
    if visual.shape[0] < 1:
        raise ValidationError("visual features must have at least one token")


def _head_forward(
    text_emb: np.ndarray, visual: np.ndarray, head: HeadParams
) -> tuple[np.ndarray, dict]:
    q = text_emb @ head.wq
    k = visual @ head.wk
    v = visual @ head.wv
    logits = (q @ k.T) / math.sqrt(head.d_attn)
    attn = _softmax_rows(logits)
    attended = attn @ v
    delta = attended @ head.wo
    cache = {"q": q, "k": k, "v": v, "attn": attn, "attended": attended}
    return delta, cache


def dsm_forward(
    text_emb, visual, params: AdapterParams | HeadParams
) -> np.ndarray:
    """Semantic offset for the text embeddings (same L x d shape as the input)."""
    head = _resolve_head(params)
    e = _as_matrix("text embeddings", text_emb)
    f = _as_matrix("visual features", visual)
    _check_shapes(e, f, head)
    delta, _ = _head_forward(e, f, head)
    return delta


def modulate(text_emb, delta) -> np.ndarray:
    """Apply the offset: modulated = text + delta (shapes must match exactly)."""
    e = _as_matrix("text embeddings", text_emb)
    d = _as_matrix("offset", delta)
    if e.shape != d.shape:
        raise ValidationError(f"shape mismatch: text {e.shape} vs offset {d.shape}")
    return e + d


def hierarchical_offsets(
    text_emb, visual, params: AdapterParams, n_layers: int
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Global offset plus one independent per-layer offset per requested layer."""
    if n_layers < 1:
        raise ValidationError(f"n_layers must be >= 1, got {n_layers}")
    if len(params.layer_heads) < n_layers:
        raise ValidationError(
            f"adapter has {len(params.layer_heads)} layer heads, {n_layers} requested"
        )
    e = _as_matrix("text embeddings", text_emb)
    f = _as_matrix("visual features", visual)
    _check_shapes(e, f, params.base)
    global_delta, _ = _head_forward(e, f, params.base)
    layer_deltas = [
        _head_forward(e, f, head)[0] for head in params.layer_heads[:n_layers]
    ]
    return global_delta, layer_deltas


@dataclass(frozen=True)
class HeadGrads:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    text_emb: np.ndarray
    visual: np.ndarray


def head_gradients(
    text_emb: np.ndarray,
    visual: np.ndarray,
    head: HeadParams,
    d_delta: np.ndarray,
) -> HeadGrads:
    """Backward pass of the head given the upstream gradient on the offset."""
    delta, cache = _head_forward(text_emb, visual, head)
    if d_delta.shape != delta.shape:
        raise ValidationError("upstream gradient shape mismatch")
    q, k, v, attn, attended = (
        cache["q"],
        cache["k"],
        cache["v"],
        cache["attn"],
        cache["attended"],
    )
    d_wo = attended.T @ d_delta
    d_attended = d_delta @ head.wo.T
    d_attn = d_attended @ v.T
    d_v = attn.T @ d_attended
    # softmax backward, row-wise: dS = A * (dA - sum(dA * A, axis=1))
    d_logits = attn * (d_attn - (d_attn * attn).sum(axis=1, keepdims=True))
    scale = 1.0 / math.sqrt(head.d_attn)
    d_q = d_logits @ k * scale
    d_k = d_logits.T @ q * scale
    return HeadGrads(
        wq=text_emb.T @ d_q,
        wk=visual.T @ d_k,
        wv=visual.T @ d_v,
        wo=d_wo,
        text_emb=d_q @ head.wq.T,
        visual=d_k @ head.wk.T + d_v @ head.wv.T,
    )


def _sum_squares_loss(out: np.ndarray) -> float:
    return float((out * out).sum())


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max())


def _fd_grad(loss_fn: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.shape[0]):
        original = flat[idx]
        flat[idx] = original + step
        hi = loss_fn(x)
        flat[idx] = original - step
        lo = loss_fn(x)
        flat[idx] = original
        gflat[idx] = (hi - lo) / (2.0 * step)
    return grad


def grad_check(
    op: str,
    inputs: Sequence[np.ndarray],
    params: HeadParams | AdapterParams | None = None,
    step: float = 1e-5,
) -> float:
    """Compare analytic gradients of sum(output^2) against central differences.

    Returns the maximum relative error over every input and parameter
    coordinate. ``op`` is "dsm_forward" or "modulate".
    """
    if op == "modulate":
        e, delta = (np.asarray(a, dtype=np.float64).copy() for a in inputs)
        out = modulate(e, delta)
        analytic = {"text_emb": 2.0 * out, "delta": 2.0 * out}
        arrays = {"text_emb": e, "delta": delta}

        def loss_for(name):
            def fn(_x):
                return _sum_squares_loss(modulate(arrays["text_emb"], arrays["delta"]))

            return fn

    elif op == "dsm_forward":
        if params is None:
            raise ValidationError("dsm_forward grad check requires params")
        head = _resolve_head(params)
        e, f = (np.asarray(a, dtype=np.float64).copy() for a in inputs)
        _check_shapes(e, f, head)
        arrays = {
            "text_emb": e,
            "visual": f,
            "wq": head.wq.copy(),
            "wk": head.wk.copy(),
            "wv": head.wv.copy(),
            "wo": head.wo.copy(),
        }

        def current_head() -> HeadParams:
            return HeadParams(arrays["wq"], arrays["wk"], arrays["wv"], arrays["wo"])

        out, _ = _head_forward(e, f, head)
        grads = head_gradients(e, f, head, 2.0 * out)
        analytic = {
            "text_emb": grads.text_emb,
            "visual": grads.visual,
            "wq": grads.wq,
            "wk": grads.wk,
            "wv": grads.wv,
            "wo": grads.wo,
        }

        def loss_for(name):
            def fn(_x):
                delta, _ = _head_forward(
                    arrays["text_emb"], arrays["visual"], current_head()
                )
                return _sum_squares_loss(delta)

            return fn

    else:
        raise ValidationError(f"unknown op {op!r}")

    worst = 0.0
    for name, arr in arrays.items():
        if not np.isfinite(arr).all():
            raise ValidationError(f"{name} contains non-finite values")
        numeric = _fd_grad(loss_for(name), arr, step)
        worst = max(worst, max_relative_error(analytic[name], numeric))
    return worst


def load_visual_features(path) -> np.ndarray:
    """Load an M x d_v feature matrix from .jsonl rows or a raw f32 block.

    The raw format is two little-endian uint32 (rows, cols) followed by
    rows * cols float32 values.
    """
    path = str(path)
    if path.endswith(".jsonl"):
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for n, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                if not isinstance(row, list):
                    raise ValidationError(f"{path}: line {n} is not a JSON array")
                rows.append(row)
        if not rows:
            raise ValidationError(f"{path} contains no feature rows")
        return np.asarray(rows, dtype=np.float64)
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) != 8:
            raise ValidationError(f"{path}: missing shape header")
        rows, cols = (int(v) for v in np.frombuffer(head, dtype="<u4"))
        raw = fh.read(rows * cols * 4)
        if len(raw) != rows * cols * 4:
            raise ValidationError(f"{path}: truncated feature block")
        return np.frombuffer(raw, dtype="<f4").reshape(rows, cols).astype(np.float64)


PARAMS_FORMAT_VERSION = 1


def save_adapter_params(path, params: AdapterParams) -> None:
    arrays = {
        "version": np.array([PARAMS_FORMAT_VERSION], dtype=np.int64),
        "n_layers": np.array([len(params.layer_heads)], dtype=np.int64),
    }
    heads = [("base", params.base)] + [
        (f"layer{n}", head) for n, head in enumerate(params.layer_heads)
    ]
    for prefix, head in heads:
        for name in ("wq", "wk", "wv", "wo"):
            arrays[f"{prefix}_{name}"] = getattr(head, name)
    np.savez(path, **arrays)


def load_adapter_params(path) -> AdapterParams:
    with np.load(path) as data:
        if int(data["version"][0]) != PARAMS_FORMAT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {data['version'][0]}")
        n_layers = int(data["n_layers"][0])

        def head(prefix: str) -> HeadParams:
            return HeadParams(
                data[f"{prefix}_wq"],
                data[f"{prefix}_wk"],
                data[f"{prefix}_wv"],
                data[f"{prefix}_wo"],
            )

        return AdapterParams(
            base=head("base"),
            layer_heads=tuple(head(f"layer{n}") for n in range(n_layers)),
        )
