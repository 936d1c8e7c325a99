"""Residual self-attention encoder with interior loss taps.

Each layer is pre-norm: the input is layer-normalized before the
attention and feed-forward sublayers and added back through residual
connections.  With K loss levels, levels 1..K-1 tap the stream after
layers floor(k*E/K); each tap projects the running states to that
level's vocabulary, softmaxes them into posteriors, and (when
conditioning is on) injects a linear map of the posteriors back into
the stream.  The final level reads the layer-normalized output of
layer E.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError
from .tensor import (Tensor, add, attention, gelu, layer_norm, matmul, mul,
                     softmax)


@dataclass
class EncoderConfig:
    layers: int                      # encoder depth E
    levels: int                      # number of loss levels K
    d_model: int
    n_heads: int
    d_ff: int
    level_vocab_sizes: tuple[int, ...]
    conditioning: bool = False
    frame_stack: int = 1
    dropout: float = 0.0

    def __post_init__(self):
        self.level_vocab_sizes = tuple(int(v) for v in self.level_vocab_sizes)
        self.validate()

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigurationError(f"layers must be >= 1, got {self.layers}")
        if self.levels < 1:
            raise ConfigurationError(f"levels must be >= 1, got {self.levels}")
        if self.levels > 1 and self.levels > self.layers:
            raise ConfigurationError(
                f"levels ({self.levels}) cannot exceed layers ({self.layers})")
        if len(self.level_vocab_sizes) != self.levels:
            raise ConfigurationError(
                f"{self.levels} levels need {self.levels} vocabulary sizes, "
                f"got {self.level_vocab_sizes}")
        if any(v < 2 for v in self.level_vocab_sizes):
            raise ConfigurationError("every level needs at least blank plus one token")
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError(
                f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if self.frame_stack < 1:
            raise ConfigurationError(f"frame_stack must be >= 1, got {self.frame_stack}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")


def tap_positions(layers: int, levels: int) -> tuple[list[int], int]:
    """Interior tap layers floor(k*E/K) for k=1..K-1, plus the final layer E."""
    if not 1 < levels <= layers:
        raise ConfigurationError(
            f"interior taps need 1 < levels <= layers, got levels={levels}, "
            f"layers={layers}")
    interior = [(k * layers) // levels for k in range(1, levels)]
    return interior, layers


@dataclass
class EncoderOutput:
    """Everything a loss or decoder needs from one utterance's forward pass."""

    final_states: Tensor                  # (T', d_model), layer-normalized
    final_logits: Tensor                  # (T', |V_K|)
    tap_logits: dict[int, Tensor]         # level k -> (T', |V_k|), interior only
    tap_posteriors: dict[int, Tensor]
    attention_maps: list[tuple[int, np.ndarray]] = field(default_factory=list)
    config: EncoderConfig | None = None
    params: dict[str, Tensor] | None = None


# ---------------------------------------------------------------------------
# parameters


def _glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


def init_params(config: EncoderConfig, feature_dim: int, objective: str,
                seed: int = 0) -> dict[str, Tensor]:
    """Build the named parameter set for one model.

    The objective decides which extras exist: tapped objectives with
    conditioning get zero-initialized injection projections, the
    parallel objective gets identity-initialized per-level adapters.
    """
    rng = np.random.default_rng(seed)
    d = config.d_model
    stacked = feature_dim * config.frame_stack
    params: dict[str, Tensor] = {}

    def param(name, data):
        params[name] = Tensor(np.asarray(data), requires_grad=True)

    param("input.w", _glorot(rng, stacked, d))
    param("input.b", np.zeros(d))
    for i in range(config.layers):
        p = f"layer{i}."
        param(p + "ln1.g", np.ones(d))
        param(p + "ln1.b", np.zeros(d))
        for nm in ("wq", "wk", "wv", "wo"):
            param(p + "attn." + nm, _glorot(rng, d, d))
        for nm in ("bq", "bk", "bv", "bo"):
            param(p + "attn." + nm, np.zeros(d))
        param(p + "ln2.g", np.ones(d))
        param(p + "ln2.b", np.zeros(d))
        param(p + "ffn.w1", _glorot(rng, d, config.d_ff))
        param(p + "ffn.b1", np.zeros(config.d_ff))
        param(p + "ffn.w2", _glorot(rng, config.d_ff, d))
        param(p + "ffn.b2", np.zeros(d))
    param("final_ln.g", np.ones(d))
    param("final_ln.b", np.zeros(d))

    for k, width in enumerate(config.level_vocab_sizes, start=1):
        param(f"head{k}.w", _glorot(rng, d, width))
        param(f"head{k}.b", np.zeros(width))
    if objective in ("sc-ctc", "hc-ctc") and config.conditioning:
        for k, width in enumerate(config.level_vocab_sizes[:-1], start=1):
            param(f"cond{k}.w", np.zeros((width, d)))
            param(f"cond{k}.b", np.zeros(d))
    if objective == "para-ctc":
        for k in range(1, config.levels):
            param(f"adapter{k}.w", np.eye(d))
            param(f"adapter{k}.b", np.zeros(d))
    return params


# ---------------------------------------------------------------------------
# forward pieces


def stack_frames(features: np.ndarray, factor: int) -> np.ndarray:
    """Concatenate groups of ``factor`` frames; the tail pads with zeros."""
    T, D = features.shape
    if factor == 1:
        return features
    groups = -(-T // factor)
    padded = np.zeros((groups * factor, D), dtype=features.dtype)
    padded[:T] = features
    return padded.reshape(groups, D * factor)


def sinusoidal_positions(n_frames: int, d_model: int, dtype) -> np.ndarray:
    pos = np.arange(n_frames, dtype=np.float64)[:, None]
    idx = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, idx / d_model)
    pe = np.zeros((n_frames, d_model))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d_model // 2])
    return pe.astype(dtype)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def _maybe_dropout(x: Tensor, rate: float, rng) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep))


def encoder_layer_forward(x: Tensor, params: dict[str, Tensor], index: int,
                          config: EncoderConfig,
                          dropout_rng=None) -> tuple[Tensor, np.ndarray]:
    """One pre-norm block: x + attn(ln(x)), then + ffn(ln(.))."""
    p = f"layer{index}."
    if p + "ln1.g" not in params:
        raise ContractError(f"no parameters for layer index {index}")
    normed = layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
    q = _linear(normed, params[p + "attn.wq"], params[p + "attn.bq"])
    k = _linear(normed, params[p + "attn.wk"], params[p + "attn.bk"])
    v = _linear(normed, params[p + "attn.wv"], params[p + "attn.bv"])
    heads = attention(q, k, v, config.n_heads)
    weights = heads.meta["weights"]
    projected = _linear(heads, params[p + "attn.wo"], params[p + "attn.bo"])
    x = add(x, _maybe_dropout(projected, config.dropout, dropout_rng))

    normed2 = layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"])
    hidden = gelu(_linear(normed2, params[p + "ffn.w1"], params[p + "ffn.b1"]))
    ff = _linear(hidden, params[p + "ffn.w2"], params[p + "ffn.b2"])
    x = add(x, _maybe_dropout(ff, config.dropout, dropout_rng))
    return x, weights


def condition_inject(x: Tensor, params: dict[str, Tensor], level: int,
                     layer_index: int, config: EncoderConfig
                     ) -> tuple[Tensor, Tensor, Tensor]:
    """Project the stream to level ``level``'s posteriors at a tap layer.

    Returns (x_next, logits, posteriors).  With conditioning on, the
    posteriors pass through the injection projection and add back into
    the stream; off, the stream passes through untouched while the
    posteriors still feed the loss.
    """
    interior, _ = tap_positions(config.layers, config.levels)
    if layer_index not in interior:
        raise ContractError(
            f"layer {layer_index} is not a tap position (taps at {interior})")
    logits = _linear(x, params[f"head{level}.w"], params[f"head{level}.b"])
    posteriors = softmax(logits)
    if config.conditioning:
        injected = _linear(posteriors, params[f"cond{level}.w"],
                           params[f"cond{level}.b"])
        x = add(x, injected)
    return x, logits, posteriors


def encode(features: np.ndarray, config: EncoderConfig,
           params: dict[str, Tensor], *, interior_taps: bool = True,
           want_attention: bool = False, dropout_rng=None) -> EncoderOutput:
    """Run the full stack over one utterance's (T, D) feature matrix.

    interior_taps=False skips the tap heads entirely (single-loss and
    parallel objectives); the final head always runs on the normalized
    output of the last layer.
    """
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ContractError(
            f"features must be a non-empty (T, D) matrix, got shape {features.shape}")
    expected = params["input.w"].data.shape[0]
    stacked = stack_frames(features, config.frame_stack)
    if stacked.shape[1] != expected:
        raise DimensionError(
            f"stacked feature width {stacked.shape[1]} does not match "
            f"input projection width {expected}")

    dtype = params["input.w"].data.dtype
    x = _linear(Tensor(stacked.astype(dtype)), params["input.w"], params["input.b"])
    x = add(x, Tensor(sinusoidal_positions(x.data.shape[0], config.d_model, dtype)))

    level_of_layer: dict[int, int] = {}
    if interior_taps and config.levels > 1:
        interior, _ = tap_positions(config.layers, config.levels)
        level_of_layer = {layer: k for k, layer in enumerate(interior, start=1)}

    tap_logits: dict[int, Tensor] = {}
    tap_posteriors: dict[int, Tensor] = {}
    attention_maps: list[tuple[int, np.ndarray]] = []
    for i in range(config.layers):
        x, weights = encoder_layer_forward(x, params, i, config, dropout_rng)
        if want_attention:
            attention_maps.append((i + 1, weights))
        level = level_of_layer.get(i + 1)
        if level is not None:
            x, logits, posteriors = condition_inject(x, params, level, i + 1, config)
            tap_logits[level] = logits
            tap_posteriors[level] = posteriors

    final_states = layer_norm(x, params["final_ln.g"], params["final_ln.b"])
    final_logits = _linear(final_states, params[f"head{config.levels}.w"],
                           params[f"head{config.levels}.b"])
    return EncoderOutput(final_states=final_states, final_logits=final_logits,
                         tap_logits=tap_logits, tap_posteriors=tap_posteriors,
                         attention_maps=attention_maps, config=config,
                         params=params)
