"""Greedy and beam-search drivers over the incremental decoder."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import (DECODER_START_ID, Counters, FiDInput, KVCache, Model, decoder_step, encode,
                    init_cache, teacher_forced_forward)
from .numerics import log_softmax


@dataclass
class DecodeResult:
    tokens: list[int]
    log_prob: float
    encoder_counters: Counters
    decoder_counters: Counters
    wall_encoder: float
    wall_decoder: float
    wall_total: float
    steps: int  # decoder_step calls, summed over hypotheses
    cache_init_multiplies: int
    # Beam search only: (normalised score, tokens) of every hypothesis it finished.
    finished: list[tuple[float, list[int]]] = field(default_factory=list)

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "tokens": list(self.tokens),
            "log_prob": self.log_prob,
            "steps": self.steps,
            "encoder_counters": self.encoder_counters.to_dict(),
            "decoder_counters": self.decoder_counters.to_dict(),
            "cache_init_multiplies": self.cache_init_multiplies,
        }
        if timing:
            out.update(wall_encoder=self.wall_encoder, wall_decoder=self.wall_decoder, wall_total=self.wall_total)
        return out


def _check_len(model: Model, max_len: int) -> None:
    if max_len < 0 or max_len > model.config.n_t_max:
        raise ValueError(f"max_len={max_len} outside [0, n_t_max={model.config.n_t_max}]")


def _encode_and_init(model: Model, inp: FiDInput):
    t0 = time.perf_counter()
    enc_c = Counters()
    enc = encode(model, inp, enc_c)
    t1 = time.perf_counter()
    dec_c = Counters()
    cache = init_cache(model, enc, dec_c)
    return t0, t1, enc_c, dec_c, cache


def greedy_decode(model: Model, inp: FiDInput, max_len: int, eos_token: int | None = None) -> DecodeResult:
    """Pick the arg-max token each step (lowest id on ties); stop at ``eos_token`` or ``max_len``."""
    _check_len(model, max_len)
    t0, t1, enc_c, dec_c, cache = _encode_and_init(model, inp)
    init_mults = dec_c.multiplies
    tokens: list[int] = []
    total = 0.0
    prev = DECODER_START_ID
    for _ in range(max_len):
        lp = log_softmax(decoder_step(model, cache, prev, dec_c))
        tok = int(np.argmax(lp))
        tokens.append(tok)
        total += float(lp[tok])
        if tok == eos_token:
            break
        prev = tok
    t2 = time.perf_counter()
    return DecodeResult(tokens, total, enc_c, dec_c, t1 - t0, t2 - t1, t2 - t0, len(tokens), init_mults)


@dataclass
class _Hyp:
    tokens: list[int]
    log_prob: float
    cache: KVCache


def beam_decode(model: Model, inp: FiDInput, beam_width: int, max_len: int,
                eos_token: int | None = None) -> DecodeResult:
    """Length-normalised beam search (score = cumulative log-prob / length).

    Each step keeps the ``beam_width`` best extensions of the active beam.
    Extensions ending in ``eos_token`` move to the finished set and the beam
    shrinks accordingly. Search stops once no active hypothesis can still beat
    the best finished score: cumulative log-probs only decrease, so an active
    hypothesis can at best reach ``log_prob / max_len``.
    """
    if beam_width < 1:
        raise ValueError(f"beam_width must be >= 1, got {beam_width}")
    _check_len(model, max_len)
    t0, t1, enc_c, dec_c, cache = _encode_and_init(model, inp)
    init_mults = dec_c.multiplies
    steps = 0

    active = [_Hyp([], 0.0, cache)]
    finished: list[tuple[float, list[int], float]] = []
    for _ in range(max_len):
        if not active:
            break
        candidates = []
        for hi, hyp in enumerate(active):
            prev = hyp.tokens[-1] if hyp.tokens else DECODER_START_ID
            lp = log_softmax(decoder_step(model, hyp.cache, prev, dec_c))
            steps += 1
            for tok in np.argsort(-lp, kind="stable")[:beam_width]:
                candidates.append((hyp.log_prob + float(lp[tok]), hi, int(tok)))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

        taken: set[int] = set()
        next_active = []
        for score, hi, tok in candidates[:beam_width]:
            parent = active[hi]
            toks = parent.tokens + [tok]
            if tok == eos_token:
                finished.append((score / len(toks), toks, score))
                continue
            c = parent.cache.fork() if hi in taken else parent.cache
            taken.add(hi)
            next_active.append(_Hyp(toks, score, c))
        active = next_active

        if finished and active:
            best_done = max(f[0] for f in finished)
            if best_done >= max(h.log_prob for h in active) / max_len:
                break

    finished += [(h.log_prob / len(h.tokens), h.tokens, h.log_prob) for h in active if h.tokens]
    if finished:
        _, tokens, total = max(finished, key=lambda f: f[0])
    else:
        tokens, total = [], 0.0
    t2 = time.perf_counter()
    return DecodeResult(tokens, total, enc_c, dec_c, t1 - t0, t2 - t1, t2 - t0, steps, init_mults,
                        [(f[0], f[1]) for f in finished])


def sequence_log_prob(model: Model, inp: FiDInput, tokens: list[int]) -> float:
    """Model log-probability of ``tokens`` (used to compare decoders)."""
    if not tokens:
        return 0.0
    logits = teacher_forced_forward(model, encode(model, inp), tokens)
    lp = log_softmax(logits)
    return float(sum(lp[t, tok] for t, tok in enumerate(tokens)))
