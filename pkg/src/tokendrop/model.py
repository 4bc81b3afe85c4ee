"""Transformer encoder-decoder with drop-aware embedding and auxiliary heads.

The encoder doubles as the generator whose hidden states feed two extra
heads: a per-position linear discriminator that scores whether a token was
dropped, and a dropped-token prediction head whose output projection is the
input embedding matrix itself (weight tying: one storage object).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .dropping import ZERO_OUT


@dataclass
class ModelConfig:
    d_model: int = 64
    d_ffn: int = 128
    n_layers: int = 2
    n_heads: int = 4
    src_vocab_size: int = 0
    tgt_vocab_size: int = 0
    p_dropout: float = 0.1
    max_len: int = 256
    shared_embedding: bool = False
    tie_dtp: bool = True
    tie_output: bool = False

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def sinusoidal_encoding(max_len, d_model):
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    dim = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (dim // 2) / d_model)
    enc = np.zeros((max_len, d_model))
    enc[:, 0::2] = np.sin(angle[:, 0::2])
    enc[:, 1::2] = np.cos(angle[:, 1::2])
    return enc


def init_parameters(cfg, rng):
    """Build the parameter dict in a stable, serializable order."""
    params = {}

    def xavier(name, fan_in, fan_out):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        params[name] = ad.Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                                 requires_grad=True)

    def vector(name, n, value=0.0):
        params[name] = ad.Tensor(np.full(n, value, dtype=np.float64), requires_grad=True)

    scale = cfg.d_model**-0.5
    params["src_emb"] = ad.Tensor(rng.normal(0.0, scale, size=(cfg.src_vocab_size, cfg.d_model)),
                                  requires_grad=True)
    if cfg.shared_embedding:
        if cfg.src_vocab_size != cfg.tgt_vocab_size:
            raise ValueError("shared embedding requires equal vocabulary sizes")
        params["tgt_emb"] = params["src_emb"]
    else:
        params["tgt_emb"] = ad.Tensor(
            rng.normal(0.0, scale, size=(cfg.tgt_vocab_size, cfg.d_model)), requires_grad=True)

    def attention_block(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            xavier(f"{prefix}.{w}", cfg.d_model, cfg.d_model)

    def ffn_block(prefix):
        xavier(f"{prefix}.w1", cfg.d_model, cfg.d_ffn)
        vector(f"{prefix}.b1", cfg.d_ffn)
        xavier(f"{prefix}.w2", cfg.d_ffn, cfg.d_model)
        vector(f"{prefix}.b2", cfg.d_model)

    def ln_block(prefix):
        vector(f"{prefix}.gain", cfg.d_model, 1.0)
        vector(f"{prefix}.bias", cfg.d_model, 0.0)

    for i in range(cfg.n_layers):
        attention_block(f"enc{i}.attn")
        ln_block(f"enc{i}.ln1")
        ffn_block(f"enc{i}.ffn")
        ln_block(f"enc{i}.ln2")
    for i in range(cfg.n_layers):
        attention_block(f"dec{i}.self")
        ln_block(f"dec{i}.ln1")
        attention_block(f"dec{i}.cross")
        ln_block(f"dec{i}.ln2")
        ffn_block(f"dec{i}.ffn")
        ln_block(f"dec{i}.ln3")

    if not cfg.tie_output:
        xavier("out_proj", cfg.d_model, cfg.tgt_vocab_size)
    vector("out_bias", cfg.tgt_vocab_size)
    xavier("rtd.w", cfg.d_model, 1)
    vector("rtd.b", 1)
    if not cfg.tie_dtp:
        xavier("dtp_proj", cfg.d_model, cfg.src_vocab_size)
    # With tying the DTP projection is the source embedding matrix itself.
    return params


def unique_parameters(params):
    """Parameters with aliases (tied tensors) collapsed, in insertion order."""
    seen = {}
    for name, t in params.items():
        if id(t) not in seen:
            seen[id(t)] = (name, t)
    return list(seen.values())


def parameter_count(params):
    return sum(t.data.size for _, t in unique_parameters(params))


@dataclass
class EncodedBatch:
    hidden: ad.Tensor  # [batch, src_len, d_model]
    pad_mask: np.ndarray  # True at pad positions


NEG_INF = -1e9


def _dropout(x, p, train, rng):
    if not train or p <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return ad.mul(x, keep)


def embed(params, ids, mask, strategy, side, cfg, train=False, rng=None):
    """Embedding lookup scaled by sqrt(d_model), plus sinusoidal positions.

    Under the zero-out strategy, rows where `mask` is set are zeroed before
    the positional encoding is added, so position information survives.
    """
    table = params["src_emb"] if side == "src" else params["tgt_emb"]
    x = ad.mul(ad.embedding(table, ids), math.sqrt(cfg.d_model))
    if strategy == ZERO_OUT and mask is not None:
        x = ad.mul(x, 1.0 - np.asarray(mask, dtype=np.float64)[:, :, None])
    length = ids.shape[1]
    if length > cfg.max_len:
        raise ValueError(f"sequence length {length} exceeds max_len {cfg.max_len}")
    x = ad.add(x, sinusoidal_encoding(cfg.max_len, cfg.d_model)[:length])
    return _dropout(x, cfg.p_dropout, train, rng)


def _split_heads(x, b, length, cfg):
    h = ad.reshape(x, (b, length, cfg.n_heads, cfg.d_model // cfg.n_heads))
    return ad.transpose(h, (0, 2, 1, 3))


def _merge_heads(x, b, length, cfg):
    h = ad.transpose(x, (0, 2, 1, 3))
    return ad.reshape(h, (b, length, cfg.d_model))


def _attention(params, prefix, q_in, kv_in, bias, cfg):
    b, lq = q_in.data.shape[0], q_in.data.shape[1]
    lk = kv_in.data.shape[1]
    q = _split_heads(ad.matmul(q_in, params[f"{prefix}.wq"]), b, lq, cfg)
    k = _split_heads(ad.matmul(kv_in, params[f"{prefix}.wk"]), b, lk, cfg)
    v = _split_heads(ad.matmul(kv_in, params[f"{prefix}.wv"]), b, lk, cfg)
    d_head = cfg.d_model // cfg.n_heads
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d_head))
    scores = ad.add(scores, bias)
    ctx = ad.matmul(ad.softmax(scores, -1), v)
    return ad.matmul(_merge_heads(ctx, b, lq, cfg), params[f"{prefix}.wo"])


def _pad_bias(pad_mask):
    # [batch, 1, 1, key_len]: NEG_INF at pad keys
    return np.where(pad_mask, NEG_INF, 0.0)[:, None, None, :]


def _causal_bias(length):
    return np.triu(np.full((length, length), NEG_INF), k=1)[None, None, :, :]


def _sublayer(params, prefix, x, fx, cfg, train, rng):
    # Post-norm residual: LN(x + dropout(sublayer(x)))
    y = ad.add(x, _dropout(fx, cfg.p_dropout, train, rng))
    return ad.layer_norm(y, params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def _ffn(params, prefix, x):
    h = ad.relu(ad.add(ad.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return ad.add(ad.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def encode(source, params, cfg, strategy, train=False, rng=None):
    """Run the encoder over a corrupted source batch."""
    from .vocab import PAD_ID

    pad_mask = source.original_ids == PAD_ID
    x = embed(params, source.corrupted_ids, source.mask, strategy, "src", cfg, train, rng)
    bias = _pad_bias(pad_mask)
    for i in range(cfg.n_layers):
        attn = _attention(params, f"enc{i}.attn", x, x, bias, cfg)
        x = _sublayer(params, f"enc{i}.ln1", x, attn, cfg, train, rng)
        x = _sublayer(params, f"enc{i}.ln2", x, _ffn(params, f"enc{i}.ffn", x), cfg, train, rng)
    return EncodedBatch(hidden=x, pad_mask=pad_mask)


def decode(target_input, enc, params, cfg, strategy, train=False, rng=None):
    """Run the decoder; returns translation logits [batch, tgt_len, V_target]."""
    from .vocab import PAD_ID

    ids = target_input.corrupted_ids
    tgt_pad = target_input.original_ids == PAD_ID
    x = embed(params, ids, target_input.mask, strategy, "tgt", cfg, train, rng)
    self_bias = _causal_bias(ids.shape[1]) + _pad_bias(tgt_pad)
    cross_bias = _pad_bias(enc.pad_mask)
    for i in range(cfg.n_layers):
        attn = _attention(params, f"dec{i}.self", x, x, self_bias, cfg)
        x = _sublayer(params, f"dec{i}.ln1", x, attn, cfg, train, rng)
        cross = _attention(params, f"dec{i}.cross", x, enc.hidden, cross_bias, cfg)
        x = _sublayer(params, f"dec{i}.ln2", x, cross, cfg, train, rng)
        x = _sublayer(params, f"dec{i}.ln3", x, _ffn(params, f"dec{i}.ffn", x), cfg, train, rng)
    if cfg.tie_output:
        proj = ad.transpose(params["tgt_emb"], (1, 0))
    else:
        proj = params["out_proj"]
    return ad.add(ad.matmul(x, proj), params["out_bias"])


def rtd_head(enc, params):
    """Per-position drop probability through a single linear map + logistic."""
    b, length = enc.hidden.data.shape[:2]
    logits = ad.add(ad.matmul(enc.hidden, params["rtd.w"]), params["rtd.b"])
    # clamp away exact 0/1 so downstream logs stay finite even when the
    # logistic saturates in double precision
    probs = ad.clip(ad.sigmoid(logits), 1e-12, 1.0 - 1e-12)
    return ad.reshape(probs, (b, length))


def dtp_head(enc, dropped_batch_idx, dropped_pos_idx, params, cfg):
    """Project hidden states at dropped positions through the tied embedding."""
    h = ad.take_positions(enc.hidden, dropped_batch_idx, dropped_pos_idx)
    if cfg.tie_dtp:
        return ad.matmul(h, ad.transpose(params["src_emb"], (1, 0)))
    return ad.matmul(h, params["dtp_proj"])
