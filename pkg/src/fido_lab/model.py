"""Fusion-in-Decoder transformer with layer-sparse cross-attention and multi-query attention.

The block is a simplified T5 layer: pre-RMSNorm, a two-matrix ReLU MLP of
hidden width ``4d``, learned absolute position embeddings, no biases.

Instrumentation
---------------
Every matrix product inside the encoder and decoder layer stacks is counted in
a :class:`Counters` object as ``output elements x inner dimension`` multiplies.
Elementwise work (norms, softmax, score scaling, residual adds), the embedding
lookup and the output vocabulary projection are not counted, so the totals are
exactly the per-layer expressions used by :mod:`fido_lab.costmodel`.

Bytes follow the accelerator worst case: each weight matrix used by a call is
loaded once per call (once per decode step during incremental decoding), and
each cached key/value row read by attention is loaded once per step. Widths
use ``config.float_bytes`` regardless of the float64 arithmetic used here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import ModelConfig, lsa_schedule
from .numerics import Rng, relu, rms_norm, seeded_init, softmax_rows

PAD_ID = 0
DECODER_START_ID = 0


class TokenError(ValueError):
    pass


class CacheExhaustedError(RuntimeError):
    pass


@dataclass
class Counters:
    multiplies: int = 0
    bytes_weights: int = 0
    bytes_kv: int = 0
    # Multiplies per call site, e.g. "dec3.cross" or "enc1.mlp".
    by_site: dict[str, int] = field(default_factory=dict)

    def count(self, site: str, multiplies: int, weight_bytes: int = 0) -> None:
        self.multiplies += multiplies
        self.bytes_weights += weight_bytes
        self.by_site[site] = self.by_site.get(site, 0) + multiplies

    def reset(self) -> None:
        self.multiplies = self.bytes_weights = self.bytes_kv = 0
        self.by_site.clear()

    def __iadd__(self, other: "Counters") -> "Counters":
        self.multiplies += other.multiplies
        self.bytes_weights += other.bytes_weights
        self.bytes_kv += other.bytes_kv
        for k, v in other.by_site.items():
            self.by_site[k] = self.by_site.get(k, 0) + v
        return self

    def copy(self) -> "Counters":
        return Counters(self.multiplies, self.bytes_weights, self.bytes_kv, dict(self.by_site))

    def to_dict(self) -> dict[str, int]:
        return {"multiplies": self.multiplies, "bytes_weights": self.bytes_weights, "bytes_kv": self.bytes_kv}


def weight_layout(config: ModelConfig) -> list[tuple[str, int, int]]:
    """Canonical ``(name, rows, cols)`` order of every parameter matrix.

    This order is both the initialisation draw order and the on-disk order.
    Norm gains are stored as ``1 x width`` matrices.
    """
    E, D, kv = config.d, config.dec_d, config.kv_width
    out = [("enc.embed", config.vocab, E), ("enc.pos", config.n_p, E)]
    for i in range(1, config.L_enc + 1):
        p = f"enc.{i}."
        out += [(p + "attn_norm", 1, E), (p + "wq", E, E), (p + "wk", E, E), (p + "wv", E, E), (p + "wo", E, E),
                (p + "mlp_norm", 1, E), (p + "w_in", E, 4 * E), (p + "w_out", 4 * E, E)]
    out.append(("enc.final_norm", 1, E))
    out += [("dec.embed", config.vocab, D), ("dec.pos", config.n_t_max, D)]
    lsa = config.lsa_layers
    for j in range(1, config.L_dec + 1):
        p = f"dec.{j}."
        out += [(p + "self_norm", 1, D), (p + "wq", D, D), (p + "wk", D, kv), (p + "wv", D, kv), (p + "wo", D, D)]
        if j in lsa:
            out += [(p + "cross_norm", 1, D), (p + "cq", D, D), (p + "ck", E, kv), (p + "cv", E, kv), (p + "co", D, D)]
        out += [(p + "mlp_norm", 1, D), (p + "w_in", D, 4 * D), (p + "w_out", 4 * D, D)]
    out += [("dec.final_norm", 1, D), ("lm_head", D, config.vocab)]
    return out


class Model:
    """Config plus read-only weights. Safe to share between threads."""

    def __init__(self, config: ModelConfig, weights: dict[str, np.ndarray]):
        layout = weight_layout(config)
        expected = {name: (r, c) for name, r, c in layout}
        if set(weights) != set(expected):
            missing = sorted(set(expected) - set(weights))
            extra = sorted(set(weights) - set(expected))
            raise ValueError(f"weights do not match config: missing={missing[:5]} extra={extra[:5]}")
        frozen = {}
        for name, r, c in layout:
            w = np.array(weights[name], dtype=np.float64)
            if w.shape != (r, c):
                raise ValueError(f"weight {name!r} has shape {w.shape}, config expects {(r, c)}")
            w.setflags(write=False)
            frozen[name] = w
        self.config = config
        self.weights = frozen

    def __getitem__(self, name: str) -> np.ndarray:
        return self.weights[name]


def init_model(config: ModelConfig, seed: int = 0) -> Model:
    rng = Rng(seed)
    weights = {}
    for name, rows, cols in weight_layout(config):
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("norm"):
            weights[name] = np.ones((rows, cols))
        elif leaf == "embed":
            weights[name] = seeded_init(rng, rows, cols, 1.0)
        elif leaf == "pos":
            weights[name] = seeded_init(rng, rows, cols, 0.5)
        else:
            weights[name] = seeded_init(rng, rows, cols, 1.0 / np.sqrt(rows))
    return Model(config, weights)


def expand_mqa_to_mha(model: Model) -> Model:
    """Build the MHA model whose every key/value head is a copy of the MQA head.

    The result computes the same function as ``model``; it is the tied-head
    oracle for multi-query attention.
    """
    cfg = model.config
    if cfg.attention_kind != "MQA":
        raise ValueError("model already uses multi-head attention")
    mha = cfg.replace(attention_kind="MHA")
    weights = dict(model.weights)
    for name in weights:
        if name.startswith("dec.") and name.rsplit(".", 1)[-1] in ("wk", "wv", "ck", "cv"):
            weights[name] = np.tile(weights[name], (1, cfg.dec_h))
    return Model(mha, weights)


# ---------------------------------------------------------------------------
# inputs and outputs


@dataclass(frozen=True)
class FiDInput:
    question: tuple[int, ...]
    passages: tuple[tuple[int, ...], ...]

    def __init__(self, question: Sequence[int], passages: Sequence[Sequence[int]]):
        object.__setattr__(self, "question", tuple(int(t) for t in question))
        object.__setattr__(self, "passages", tuple(tuple(int(t) for t in p) for p in passages))
        if not self.passages:
            raise ValueError("FiDInput needs at least one passage")

    def fused(self, n_p: int) -> list[tuple[int, ...]]:
        """Question prepended to each passage, truncated to ``n_p`` tokens."""
        return [(self.question + p)[:n_p] for p in self.passages]

    def to_dict(self) -> dict:
        return {"question": list(self.question), "passages": [list(p) for p in self.passages]}

    @classmethod
    def from_dict(cls, raw: dict) -> "FiDInput":
        return cls(raw["question"], raw["passages"])


@dataclass(frozen=True)
class EncoderOutput:
    fused: np.ndarray  # (n_s, d)
    boundaries: tuple[int, ...]  # row offsets, one per passage plus the end
    lengths: tuple[int, ...]  # unpadded tokens per passage
    key_mask: np.ndarray  # (n_s,) True for real tokens

    @property
    def n_s(self) -> int:
        return self.fused.shape[0]

    @property
    def n_passages(self) -> int:
        return len(self.lengths)

    def block(self, i: int) -> np.ndarray:
        return self.fused[self.boundaries[i]:self.boundaries[i + 1]]


def random_fid_input(config: ModelConfig, rng: Rng, n_passages: int | None = None,
                     question_len: int = 6) -> FiDInput:
    """Random question and passages; some fused sequences overflow ``n_p``, some are padded."""
    n = config.n_passages if n_passages is None else n_passages
    question = rng.integers(1, config.vocab, size=question_len).tolist()
    passages = []
    for _ in range(n):
        length = int(rng.integers(1, config.n_p + 4))
        passages.append(rng.integers(1, config.vocab, size=length).tolist())
    return FiDInput(question, passages)


# ---------------------------------------------------------------------------
# kernels with instrumentation


def _mm(a: np.ndarray, b: np.ndarray, counters: Counters | None, site: str,
        weight_bytes: int = 0) -> np.ndarray:
    out = a @ b
    if counters is not None:
        counters.count(site, int(out.size) * int(a.shape[-1]), weight_bytes)
    return out


def _proj(x: np.ndarray, w: np.ndarray, counters: Counters | None, site: str, float_bytes: int) -> np.ndarray:
    return _mm(x, w, counters, site, int(w.size) * float_bytes)


def _attend(q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int, mask: np.ndarray | None,
            counters: Counters | None, site: str) -> np.ndarray:
    """Multi-head attention for one sequence.

    ``q`` is ``(T, D)``; ``k``/``v`` are ``(S, D)`` for MHA or ``(S, D/heads)``
    for MQA, in which case the single key/value head is shared by all query
    heads. ``mask`` broadcasts to ``(T, S)``; False entries are excluded.
    """
    T, D = q.shape
    S = k.shape[0]
    dh = D // heads
    qh = q.reshape(T, heads, dh).transpose(1, 0, 2)
    if k.shape[1] == D:
        kh = k.reshape(S, heads, dh).transpose(1, 0, 2)
        vh = v.reshape(S, heads, dh).transpose(1, 0, 2)
    else:
        kh, vh = k[None], v[None]
    scores = _mm(qh, kh.transpose(0, 2, 1), counters, site) / np.sqrt(dh)
    if mask is not None:
        scores = np.where(mask, scores, -np.inf)
    probs = softmax_rows(scores)
    out = _mm(probs, vh, counters, site)
    return out.transpose(1, 0, 2).reshape(T, D)


def _fuse_tokens(config: ModelConfig, inp: FiDInput) -> tuple[np.ndarray, np.ndarray]:
    seqs = inp.fused(config.n_p)
    tokens = np.full((len(seqs), config.n_p), PAD_ID, dtype=np.int64)
    lengths = np.zeros(len(seqs), dtype=np.int64)
    for i, seq in enumerate(seqs):
        if not seq:
            raise ValueError(f"passage {i} is empty after prepending the question")
        bad = [t for t in seq if t < 0 or t >= config.vocab]
        if bad:
            raise TokenError(f"token id {bad[0]} outside vocabulary of size {config.vocab}")
        tokens[i, :len(seq)] = seq
        lengths[i] = len(seq)
    return tokens, lengths


def encode(model: Model, inp: FiDInput, counters: Counters | None = None) -> EncoderOutput:
    """Encode every question+passage independently and concatenate in passage order.

    All passages run as one batched computation; attention never crosses a
    passage boundary. Each fused sequence is right-padded to ``n_p`` and padded
    keys are masked, so ``n_s = n_passages * n_p`` rows are always produced.
    """
    cfg, W, fb = model.config, model.weights, model.config.float_bytes
    tokens, lengths = _fuse_tokens(cfg, inp)
    P, n_p, E, H = tokens.shape[0], cfg.n_p, cfg.d, cfg.h
    dh = E // H
    valid = np.arange(n_p)[None, :] < lengths[:, None]
    key_mask = valid[:, None, None, :]

    x = W["enc.embed"][tokens] + W["enc.pos"][None]
    for i in range(1, cfg.L_enc + 1):
        p, site = f"enc.{i}.", f"enc{i}"
        hdn = rms_norm(x, W[p + "attn_norm"])
        q = _proj(hdn, W[p + "wq"], counters, site + ".proj", fb).reshape(P, n_p, H, dh).transpose(0, 2, 1, 3)
        k = _proj(hdn, W[p + "wk"], counters, site + ".proj", fb).reshape(P, n_p, H, dh).transpose(0, 2, 1, 3)
        v = _proj(hdn, W[p + "wv"], counters, site + ".proj", fb).reshape(P, n_p, H, dh).transpose(0, 2, 1, 3)
        scores = _mm(q, k.transpose(0, 1, 3, 2), counters, site + ".attn") / np.sqrt(dh)
        probs = softmax_rows(np.where(key_mask, scores, -np.inf))
        o = _mm(probs, v, counters, site + ".attn").transpose(0, 2, 1, 3).reshape(P, n_p, E)
        x = x + _proj(o, W[p + "wo"], counters, site + ".proj", fb)
        hdn = rms_norm(x, W[p + "mlp_norm"])
        hid = relu(_proj(hdn, W[p + "w_in"], counters, site + ".mlp", fb))
        x = x + _proj(hid, W[p + "w_out"], counters, site + ".mlp", fb)
    x = rms_norm(x, W["enc.final_norm"])

    return EncoderOutput(
        fused=x.reshape(P * n_p, E),
        boundaries=tuple(int(b) for b in range(0, P * n_p + 1, n_p)),
        lengths=tuple(int(n) for n in lengths),
        key_mask=valid.reshape(-1),
    )


def encode_separately(model: Model, inp: FiDInput, counters: Counters | None = None) -> EncoderOutput:
    """Loop of single-passage encodes, concatenated. Oracle for :func:`encode`."""
    parts = [encode(model, FiDInput(inp.question, [p]), counters) for p in inp.passages]
    n_p = model.config.n_p
    return EncoderOutput(
        fused=np.concatenate([e.fused for e in parts], axis=0),
        boundaries=tuple(range(0, len(parts) * n_p + 1, n_p)),
        lengths=tuple(e.lengths[0] for e in parts),
        key_mask=np.concatenate([e.key_mask for e in parts]),
    )


# ---------------------------------------------------------------------------
# decoder


@dataclass
class KVCache:
    """Per-sequence decoder state. Owned by exactly one decode stream.

    ``self_k``/``self_v`` are preallocated ``(n_t_max, kv_width)`` buffers of
    which the first ``steps_filled`` rows are live. Cross-attention keys and
    values exist only for the LSA layers and never change after init.
    """

    config: ModelConfig
    self_k: dict[int, np.ndarray]
    self_v: dict[int, np.ndarray]
    cross_k: dict[int, np.ndarray]
    cross_v: dict[int, np.ndarray]
    cross_mask: np.ndarray
    steps_filled: int = 0

    def self_kv(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        n = self.steps_filled
        return self.self_k[layer][:n], self.self_v[layer][:n]

    def fork(self) -> "KVCache":
        """Copy of the self-attention state; cross-attention entries are shared."""
        return KVCache(
            self.config,
            {j: a.copy() for j, a in self.self_k.items()},
            {j: a.copy() for j, a in self.self_v.items()},
            self.cross_k, self.cross_v, self.cross_mask, self.steps_filled,
        )


def _cross_kv(model: Model, enc: EncoderOutput, layer: int, counters: Counters | None):
    W, fb = model.weights, model.config.float_bytes
    p, site = f"dec.{layer}.", f"dec{layer}.cross"
    k = _proj(enc.fused, W[p + "ck"], counters, site, fb)
    v = _proj(enc.fused, W[p + "cv"], counters, site, fb)
    return k, v


def init_cache(model: Model, enc: EncoderOutput, counters: Counters | None = None) -> KVCache:
    """Empty self-attention buffers plus cross-attention keys/values at LSA layers."""
    cfg = model.config
    if enc.fused.shape[1] != cfg.d:
        raise ValueError(f"encoder output width {enc.fused.shape[1]} != d={cfg.d}")
    cross_k, cross_v = {}, {}
    for j in sorted(cfg.lsa_layers):
        k, v = _cross_kv(model, enc, j, counters)
        k.setflags(write=False)
        v.setflags(write=False)
        cross_k[j], cross_v[j] = k, v
    kv = cfg.kv_width
    layers = range(1, cfg.L_dec + 1)
    return KVCache(
        cfg,
        {j: np.zeros((cfg.n_t_max, kv)) for j in layers},
        {j: np.zeros((cfg.n_t_max, kv)) for j in layers},
        cross_k, cross_v, enc.key_mask,
    )


def _check_token(cfg: ModelConfig, tok: int) -> None:
    if not 0 <= tok < cfg.vocab:
        raise TokenError(f"token id {tok} outside vocabulary of size {cfg.vocab}")


def decoder_step(model: Model, cache: KVCache, prev_token: int, counters: Counters | None = None) -> np.ndarray:
    """Run one incremental step and return next-token logits of length ``vocab``.

    Appends one key/value row per layer to ``cache``; cross entries are read only.
    """
    cfg, W, fb = model.config, model.weights, model.config.float_bytes
    t = cache.steps_filled
    if t >= cfg.n_t_max:
        raise CacheExhaustedError(f"KV cache full after {t} steps (n_t_max={cfg.n_t_max})")
    _check_token(cfg, prev_token)
    H, kv = cfg.dec_h, cfg.kv_width
    lsa = cfg.lsa_layers
    n_s = cache.cross_mask.shape[0]

    x = (W["dec.embed"][prev_token] + W["dec.pos"][t])[None, :]
    for j in range(1, cfg.L_dec + 1):
        p, site = f"dec.{j}.", f"dec{j}"
        hdn = rms_norm(x, W[p + "self_norm"])
        q = _proj(hdn, W[p + "wq"], counters, site + ".self", fb)
        cache.self_k[j][t] = _proj(hdn, W[p + "wk"], counters, site + ".self", fb)[0]
        cache.self_v[j][t] = _proj(hdn, W[p + "wv"], counters, site + ".self", fb)[0]
        if counters is not None:
            counters.bytes_kv += 2 * (t + 1) * kv * fb
        o = _attend(q, cache.self_k[j][:t + 1], cache.self_v[j][:t + 1], H, None, counters, site + ".self")
        x = x + _proj(o, W[p + "wo"], counters, site + ".self", fb)
        if j in lsa:
            hdn = rms_norm(x, W[p + "cross_norm"])
            q = _proj(hdn, W[p + "cq"], counters, site + ".cross", fb)
            if counters is not None:
                counters.bytes_kv += 2 * n_s * kv * fb
            o = _attend(q, cache.cross_k[j], cache.cross_v[j], H, cache.cross_mask[None, :], counters, site + ".cross")
            x = x + _proj(o, W[p + "co"], counters, site + ".cross", fb)
        hdn = rms_norm(x, W[p + "mlp_norm"])
        hid = relu(_proj(hdn, W[p + "w_in"], counters, site + ".mlp", fb))
        x = x + _proj(hid, W[p + "w_out"], counters, site + ".mlp", fb)
    cache.steps_filled = t + 1
    x = rms_norm(x, W["dec.final_norm"])
    return (x @ W["lm_head"])[0]


def teacher_forced_forward(model: Model, enc: EncoderOutput, target: Sequence[int],
                           counters: Counters | None = None) -> np.ndarray:
    """Full causal decoder pass over a known target, without any cache.

    Row ``t`` holds the logits predicting ``target[t]`` given the start token and
    ``target[:t]``. Self-attention scores are formed for the whole ``T x T``
    matrix and then causally masked.
    """
    cfg, W, fb = model.config, model.weights, model.config.float_bytes
    target = [int(t) for t in target]
    T = len(target)
    if T > cfg.n_t_max:
        raise CacheExhaustedError(f"target length {T} exceeds n_t_max={cfg.n_t_max}")
    if T == 0:
        return np.zeros((0, cfg.vocab))
    inputs = [DECODER_START_ID] + target[:-1]
    for tok in inputs:
        _check_token(cfg, tok)
    H = cfg.dec_h
    causal = np.tril(np.ones((T, T), dtype=bool))
    lsa = cfg.lsa_layers

    x = W["dec.embed"][inputs] + W["dec.pos"][:T]
    for j in range(1, cfg.L_dec + 1):
        p, site = f"dec.{j}.", f"dec{j}"
        hdn = rms_norm(x, W[p + "self_norm"])
        q = _proj(hdn, W[p + "wq"], counters, site + ".self", fb)
        k = _proj(hdn, W[p + "wk"], counters, site + ".self", fb)
        v = _proj(hdn, W[p + "wv"], counters, site + ".self", fb)
        o = _attend(q, k, v, H, causal, counters, site + ".self")
        x = x + _proj(o, W[p + "wo"], counters, site + ".self", fb)
        if j in lsa:
            ck, cv = _cross_kv(model, enc, j, counters)
            hdn = rms_norm(x, W[p + "cross_norm"])
            q = _proj(hdn, W[p + "cq"], counters, site + ".cross", fb)
            o = _attend(q, ck, cv, H, enc.key_mask[None, :], counters, site + ".cross")
            x = x + _proj(o, W[p + "co"], counters, site + ".cross", fb)
        hdn = rms_norm(x, W[p + "mlp_norm"])
        hid = relu(_proj(hdn, W[p + "w_in"], counters, site + ".mlp", fb))
        x = x + _proj(hid, W[p + "w_out"], counters, site + ".mlp", fb)
    x = rms_norm(x, W["dec.final_norm"])
    return x @ W["lm_head"]


# ---------------------------------------------------------------------------
# memory accounting


def cross_kv_bytes(config: ModelConfig, b: int, n_s: int) -> int:
    return b * len(lsa_schedule(config.L_dec, config.K)) * 2 * n_s * config.kv_width * config.float_bytes


def self_kv_bytes(config: ModelConfig, b: int, n_t: int) -> int:
    return b * config.L_dec * 2 * n_t * config.kv_width * config.float_bytes


def kv_cache_bytes(config: ModelConfig, b: int, n_s: int, n_t: int) -> int:
    """Bytes held by the decoder KV cache for a batch after ``n_t`` steps.

    Cross-attention keys/values exist only at LSA layers; self-attention
    keys/values grow by one row per step at every layer.
    """
    if b < 1 or n_s < 0 or n_t < 0:
        raise ValueError(f"invalid sizes b={b}, n_s={n_s}, n_t={n_t}")
    return cross_kv_bytes(config, b, n_s) + self_kv_bytes(config, b, n_t)
