"""Oracle suites run by ``fido-lab verify``."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import costmodel as cm
from . import weights_io
from .config import TOY, ModelConfig
from .decoding import beam_decode, greedy_decode
from .model import (Counters, Model, decoder_step, encode, encode_separately, expand_mqa_to_mha, init_cache,
                    init_model, random_fid_input, teacher_forced_forward)
from .numerics import Rng

LOGIT_TOL = 1e-9
ENCODE_TOL = 1e-12


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


def incremental_logits(model: Model, enc, target: list[int], counters: Counters | None = None) -> np.ndarray:
    cache = init_cache(model, enc, counters)
    rows, prev = [], 0
    for tok in target:
        rows.append(decoder_step(model, cache, prev, counters))
        prev = tok
    return np.array(rows)


def max_incremental_error(model: Model, seed: int, n_steps: int = 8) -> float:
    rng = Rng(seed)
    inp = random_fid_input(model.config, rng)
    target = rng.integers(1, model.config.vocab, size=n_steps).tolist()
    enc = encode(model, inp)
    full = teacher_forced_forward(model, enc, target)
    return float(np.max(np.abs(incremental_logits(model, enc, target) - full)))


def max_mqa_tie_error(mqa: Model, seed: int, n_steps: int = 8) -> float:
    rng = Rng(seed)
    inp = random_fid_input(mqa.config, rng)
    target = rng.integers(1, mqa.config.vocab, size=n_steps).tolist()
    mha = expand_mqa_to_mha(mqa)
    a = incremental_logits(mqa, encode(mqa, inp), target)
    b = incremental_logits(mha, encode(mha, inp), target)
    return float(np.max(np.abs(a - b)))


def _variant(model: Model, seed: int, **changes) -> Model:
    cfg = model.config
    if all(getattr(cfg, k) == v for k, v in changes.items()):
        return model
    return init_model(cfg.replace(**changes), seed)


def suite_incremental(model: Model, seed: int) -> SuiteResult:
    errs = [max_incremental_error(m, seed + i) for i, m in
            enumerate([model, _variant(model, seed, attention_kind="MQA", K=2)])]
    worst = max(errs)
    return SuiteResult("incremental-vs-teacher-forced", worst <= LOGIT_TOL, f"max |diff| = {worst:.3e}")


def suite_mqa_tie(model: Model, seed: int) -> SuiteResult:
    mqa = _variant(model, seed, attention_kind="MQA")
    err = max_mqa_tie_error(mqa, seed)
    return SuiteResult("mqa-tied-heads", err <= LOGIT_TOL, f"max |diff| = {err:.3e}")


def suite_lsa_zero(model: Model, seed: int) -> SuiteResult:
    m = model if model.config.K > 1 else _variant(model, seed, K=2)
    cfg = m.config
    counters = greedy_decode(m, random_fid_input(cfg, Rng(seed)), min(4, cfg.n_t_max)).decoder_counters
    bad = [j for j in range(1, cfg.L_dec + 1)
           if (counters.by_site.get(f"dec{j}.cross", 0) > 0) != (j in cfg.lsa_layers)]
    detail = f"K={cfg.K}, cross-attention layers {sorted(cfg.lsa_layers)}"
    if bad:
        detail += f"; mismatched layers {bad}"
    return SuiteResult("lsa-zero-cross-attention", not bad, detail)


def suite_counters(model: Model, seed: int) -> SuiteResult:
    cfg = model.config
    inp = random_fid_input(cfg, Rng(seed))
    n_t = min(8, cfg.n_t_max)
    res = greedy_decode(model, inp, n_t)
    c = cm.CostInput.from_model_config(cfg, b=1, n_t=res.steps, n_passages=len(inp.passages))
    checks = {
        "encoder multiplies": (res.encoder_counters.multiplies, cm.encoder_flops_exact(c)),
        "decoder multiplies": (res.decoder_counters.multiplies, cm.decoder_flops_exact(c, incremental=True)),
        "decoder bytes": (res.decoder_counters.bytes_weights + res.decoder_counters.bytes_kv,
                          cm.decoder_bytes(c, b=1)),
    }
    tf = Counters()
    enc = encode(model, inp)
    teacher_forced_forward(model, enc, res.tokens, tf)
    checks["teacher-forced multiplies"] = (tf.multiplies, cm.decoder_flops_exact(c))
    bad = [k for k, (got, want) in checks.items() if got != want]
    detail = "; ".join(f"{k}: {got} vs {want}" for k, (got, want) in checks.items() if k in bad) or \
        "engine counters equal closed-form expressions"
    return SuiteResult("counter-equality", not bad, detail)


def suite_beam_greedy(model: Model, seed: int) -> SuiteResult:
    inp = random_fid_input(model.config, Rng(seed))
    n_t = min(8, model.config.n_t_max)
    g = greedy_decode(model, inp, n_t).tokens
    b = beam_decode(model, inp, 1, n_t).tokens
    return SuiteResult("beam1-equals-greedy", g == b, f"greedy={g} beam1={b}" if g != b else f"{len(g)} tokens")


def suite_encoder_independence(model: Model, seed: int) -> SuiteResult:
    inp = random_fid_input(model.config, Rng(seed))
    err = float(np.max(np.abs(encode(model, inp).fused - encode_separately(model, inp).fused)))
    return SuiteResult("per-passage-encoding", err <= ENCODE_TOL, f"max |diff| = {err:.3e}")


SUITES: list[Callable[[Model, int], SuiteResult]] = [
    suite_incremental, suite_mqa_tie, suite_lsa_zero, suite_counters, suite_beam_greedy,
    suite_encoder_independence,
]


def run_all(seed: int = 0, weights: str | Path | None = None, config: ModelConfig | None = None) -> list[SuiteResult]:
    """Run every suite on the toy model (or on the model in ``weights``)."""
    results = []
    if weights is not None:
        try:
            model = weights_io.load(weights)
        except (OSError, weights_io.WeightFileError, ValueError) as exc:
            results.append(SuiteResult("weight-file", False, str(exc)))
            return results + [SuiteResult(s.__name__.replace("suite_", ""), False, "skipped: no model")
                              for s in SUITES]
        results.append(SuiteResult("weight-file", True, f"loaded {weights}"))
    else:
        model = init_model(config or TOY, seed)
    for suite in SUITES:
        try:
            results.append(suite(model, seed))
        except Exception as exc:  # a crashing suite is a failing suite
            results.append(SuiteResult(suite.__name__.replace("suite_", ""), False, f"{type(exc).__name__}: {exc}"))
    return results
