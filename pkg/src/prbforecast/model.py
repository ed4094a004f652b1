"""Sequence-to-sequence transformer with a hybrid output head.

A post-norm encoder (full self-attention over the N-step history) feeds a
decoder whose layers run causal self-attention, cross-attention over the
encoder output, and a position-wise feed-forward block. The head maps each
decoder position to 8 deterministic KPI values plus 3 residual-PRB
quantiles (q = 0.1, 0.5, 0.9). At inference the quantiles are sorted
ascending and clipped to [0,1]; training sees the raw head outputs so each
pinball term keeps its own gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import N_DET_FEATURES, N_FEATURES
from .embedding import EmbeddingTables, _uniform, embed_tokens
from .tensor import Tensor

N_QUANTILES = 3
QUANTILES = (0.1, 0.5, 0.9)


@dataclass
class Hyperparams:
    d_emb: int = 64
    n_enc_layers: int = 2
    n_dec_layers: int = 3
    heads: int = 8
    d_ff: int = 256
    dropout: float = 0.1
    n_past: int = 4
    n_future: int = 2
    quantiles: tuple = QUANTILES
    n_features: int = N_FEATURES
    n_det: int = N_DET_FEATURES

    def validate(self):
        if self.d_emb % self.heads != 0:
            raise ValueError(f"d_emb {self.d_emb} not divisible by heads {self.heads}")
        qs = tuple(self.quantiles)
        if any(not 0 < q < 1 for q in qs) or list(qs) != sorted(set(qs)):
            raise ValueError(f"quantiles must be strictly increasing in (0,1): {qs}")
        if self.n_det != self.n_features - 1:
            raise ValueError("n_det must equal n_features - 1")
        for name in ("d_emb", "n_enc_layers", "n_dec_layers", "heads", "d_ff",
                     "n_past", "n_future"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0,1)")

    def to_dict(self) -> dict:
        return {"d_emb": self.d_emb, "n_enc_layers": self.n_enc_layers,
                "n_dec_layers": self.n_dec_layers, "heads": self.heads,
                "d_ff": self.d_ff, "dropout": self.dropout,
                "n_past": self.n_past, "n_future": self.n_future,
                "quantiles": list(self.quantiles)}

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        d = dict(d)
        if "quantiles" in d:
            d["quantiles"] = tuple(d["quantiles"])
        hp = cls(**d)
        hp.validate()
        return hp


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    @classmethod
    def create(cls, d: int) -> "LayerNormParams":
        return cls(Tensor(np.ones(d, dtype=np.float32), requires_grad=True),
                   Tensor(np.zeros(d, dtype=np.float32), requires_grad=True))

    def named(self, prefix):
        return [(f"{prefix}.gain", self.gain), (f"{prefix}.bias", self.bias)]


@dataclass
class AttentionParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    @classmethod
    def create(cls, d: int, rng) -> "AttentionParams":
        def w():
            return _uniform(rng, (d, d), d)

        def b():
            return Tensor(np.zeros(d, dtype=np.float32), requires_grad=True)

        return cls(w(), b(), w(), b(), w(), b(), w(), b())

    def named(self, prefix):
        return [(f"{prefix}.{n}", getattr(self, n))
                for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def create(cls, d: int, d_ff: int, rng) -> "FeedForwardParams":
        return cls(_uniform(rng, (d, d_ff), d),
                   Tensor(np.zeros(d_ff, dtype=np.float32), requires_grad=True),
                   _uniform(rng, (d_ff, d), d_ff),
                   Tensor(np.zeros(d, dtype=np.float32), requires_grad=True))

    def named(self, prefix):
        return [(f"{prefix}.{n}", getattr(self, n)) for n in ("w1", "b1", "w2", "b2")]


@dataclass
class EncoderLayer:
    attn: AttentionParams
    ff: FeedForwardParams
    ln1: LayerNormParams
    ln2: LayerNormParams

    @classmethod
    def create(cls, hp, rng):
        return cls(AttentionParams.create(hp.d_emb, rng),
                   FeedForwardParams.create(hp.d_emb, hp.d_ff, rng),
                   LayerNormParams.create(hp.d_emb),
                   LayerNormParams.create(hp.d_emb))

    def named(self, prefix):
        return (self.attn.named(f"{prefix}.attn") + self.ff.named(f"{prefix}.ff")
                + self.ln1.named(f"{prefix}.ln1") + self.ln2.named(f"{prefix}.ln2"))


@dataclass
class DecoderLayer:
    self_attn: AttentionParams
    cross_attn: AttentionParams
    ff: FeedForwardParams
    ln1: LayerNormParams
    ln2: LayerNormParams
    ln3: LayerNormParams

    @classmethod
    def create(cls, hp, rng):
        return cls(AttentionParams.create(hp.d_emb, rng),
                   AttentionParams.create(hp.d_emb, rng),
                   FeedForwardParams.create(hp.d_emb, hp.d_ff, rng),
                   LayerNormParams.create(hp.d_emb),
                   LayerNormParams.create(hp.d_emb),
                   LayerNormParams.create(hp.d_emb))

    def named(self, prefix):
        return (self.self_attn.named(f"{prefix}.self_attn")
                + self.cross_attn.named(f"{prefix}.cross_attn")
                + self.ff.named(f"{prefix}.ff")
                + self.ln1.named(f"{prefix}.ln1")
                + self.ln2.named(f"{prefix}.ln2")
                + self.ln3.named(f"{prefix}.ln3"))


@dataclass
class DecoderOutput:
    det: np.ndarray        # (B, M, 8) deterministic KPI predictions, normalized units
    quantiles: np.ndarray  # (B, M, 3) residual-PRB quantiles, ascending, in [0,1]


def causal_mask(steps: int) -> np.ndarray:
    """(T, T) additive mask: position k attends only to positions <= k."""
    visible = np.tril(np.ones((steps, steps), dtype=bool))
    return np.where(visible, 0.0, -np.inf)


def _attention(params: AttentionParams, q_in: Tensor, kv_in: Tensor, heads: int,
               mask: np.ndarray | None, dropout_rate: float, training: bool) -> Tensor:
    batch, t_q, d = q_in.shape
    t_kv = kv_in.shape[1]
    head_dim = d // heads

    def split(x, steps):
        x = T.reshape(x, (batch, steps, heads, head_dim))
        return T.transpose(x, (0, 2, 1, 3))  # (B, h, T, k)

    q = split(T.add(T.matmul(q_in, params.wq), params.bq), t_q)
    k = split(T.add(T.matmul(kv_in, params.wk), params.bk), t_kv)
    v = split(T.add(T.matmul(kv_in, params.wv), params.bv), t_kv)

    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(head_dim))
    weights = T.softmax_lastdim(scores, mask=mask)
    ctx = T.matmul(weights, v)                       # (B, h, T_q, k)
    ctx = T.transpose(ctx, (0, 2, 1, 3))
    ctx = T.reshape(ctx, (batch, t_q, d))
    out = T.add(T.matmul(ctx, params.wo), params.bo)
    return T.dropout(out, dropout_rate, training)


def _feed_forward(params: FeedForwardParams, x: Tensor,
                  dropout_rate: float, training: bool) -> Tensor:
    h = T.relu(T.add(T.matmul(x, params.w1), params.b1))
    out = T.add(T.matmul(h, params.w2), params.b2)
    return T.dropout(out, dropout_rate, training)


class ForecastModel:
    """All learnable state plus the forward passes (teacher-forced and
    autoregressive block inference)."""

    def __init__(self, hp: Hyperparams, rng: np.random.Generator | None = None):
        hp.validate()
        self.hp = hp
        rng = rng if rng is not None else T.get_rng()
        self.embed = EmbeddingTables.create(hp.d_emb, hp.n_past, hp.n_future, rng)
        self.enc_layers = [EncoderLayer.create(hp, rng) for _ in range(hp.n_enc_layers)]
        self.dec_layers = [DecoderLayer.create(hp, rng) for _ in range(hp.n_dec_layers)]
        n_out = hp.n_det + len(hp.quantiles)
        self.w_head = _uniform(rng, (hp.d_emb, n_out), hp.d_emb)
        self.b_head = Tensor(np.zeros(n_out, dtype=np.float32), requires_grad=True)

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = list(self.embed.named())
        for i, layer in enumerate(self.enc_layers):
            out += layer.named(f"enc.{i}")
        for i, layer in enumerate(self.dec_layers):
            out += layer.named(f"dec.{i}")
        out += [("head.w", self.w_head), ("head.b", self.b_head)]
        return out

    def params(self) -> list[Tensor]:
        return [t for _, t in self.named_params()]

    def zero_grads(self):
        for p in self.params():
            p.grad = None

    # -- forward passes ----------------------------------------------------

    def encode(self, tokens: Tensor, training: bool = False) -> Tensor:
        hp = self.hp
        x = tokens
        for layer in self.enc_layers:
            a = _attention(layer.attn, x, x, hp.heads, None, hp.dropout, training)
            x = T.layer_norm(T.add(x, a), layer.ln1.gain, layer.ln1.bias)
            f = _feed_forward(layer.ff, x, hp.dropout, training)
            x = T.layer_norm(T.add(x, f), layer.ln2.gain, layer.ln2.bias)
        return x

    def decode(self, z: Tensor, dec_tokens: Tensor,
               training: bool = False) -> tuple[Tensor, Tensor]:
        """Returns raw (det, quantile) head outputs as tensors."""
        hp = self.hp
        mask = causal_mask(dec_tokens.shape[1])
        x = dec_tokens
        for layer in self.dec_layers:
            a = _attention(layer.self_attn, x, x, hp.heads, mask, hp.dropout, training)
            x = T.layer_norm(T.add(x, a), layer.ln1.gain, layer.ln1.bias)
            c = _attention(layer.cross_attn, x, z, hp.heads, None, hp.dropout, training)
            x = T.layer_norm(T.add(x, c), layer.ln2.gain, layer.ln2.bias)
            f = _feed_forward(layer.ff, x, hp.dropout, training)
            x = T.layer_norm(T.add(x, f), layer.ln3.gain, layer.ln3.bias)
        out = T.add(T.matmul(x, self.w_head), self.b_head)
        det = T.slice_lastdim(out, 0, hp.n_det)
        quant = T.slice_lastdim(out, hp.n_det, hp.n_det + len(hp.quantiles))
        return det, quant

    def _decoder_continuous_teacher(self, targets: np.ndarray) -> np.ndarray:
        """Shift ground truth by one step; step 0 gets the zero vector."""
        shifted = np.zeros_like(targets)
        shifted[:, 1:, :] = targets[:, :-1, :]
        return shifted

    def forward_training(self, enc_x: np.ndarray, enc_meta: np.ndarray,
                         targets: np.ndarray, dec_meta: np.ndarray,
                         training: bool = True) -> tuple[Tensor, Tensor]:
        hp = self.hp
        enc_tokens = embed_tokens(self.embed, enc_x, enc_meta, "encoder",
                                  hp.dropout, training)
        z = self.encode(enc_tokens, training)
        dec_cont = self._decoder_continuous_teacher(np.asarray(targets))
        dec_tokens = embed_tokens(self.embed, dec_cont, dec_meta, "decoder",
                                  hp.dropout, training)
        return self.decode(z, dec_tokens, training)

    def forward_block(self, enc_x: np.ndarray, enc_meta: np.ndarray,
                      dec_meta: np.ndarray) -> DecoderOutput:
        """Autoregressive-block inference: decoder continuous inputs are all
        zero; quantiles come back sorted ascending and clipped to [0,1]."""
        hp = self.hp
        enc_x = np.asarray(enc_x)
        if enc_x.ndim == 2:
            enc_x = enc_x[None]
            enc_meta = np.asarray(enc_meta)[None]
            dec_meta = np.asarray(dec_meta)[None]
        with T.no_grad():
            enc_tokens = embed_tokens(self.embed, enc_x, enc_meta, "encoder")
            z = self.encode(enc_tokens, training=False)
            dec_cont = np.zeros((enc_x.shape[0], hp.n_future, hp.n_features),
                                dtype=np.float32)
            dec_tokens = embed_tokens(self.embed, dec_cont, dec_meta, "decoder")
            det, quant = self.decode(z, dec_tokens, training=False)
        quantiles = np.clip(np.sort(quant.data, axis=-1), 0.0, 1.0)
        return DecoderOutput(det=det.data.copy(), quantiles=quantiles)


def param_count(hp: Hyperparams) -> int:
    """Closed-form learnable-parameter total for a given configuration."""
    d, ff = hp.d_emb, hp.d_ff
    embed = (hp.n_features * d + d            # projection + bias
             + hp.n_past * d + hp.n_future * d
             + (12 + 7 + 24 + 4 + 21) * d)
    attn = 4 * (d * d + d)
    ffn = d * ff + ff + ff * d + d
    ln = 2 * d
    enc = hp.n_enc_layers * (attn + ffn + 2 * ln)
    dec = hp.n_dec_layers * (2 * attn + ffn + 3 * ln)
    n_out = hp.n_det + len(hp.quantiles)
    head = d * n_out + n_out
    return embed + enc + dec + head
