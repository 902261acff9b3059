"""Instrumented toy-scale inference runs, cross-checked against the cost model.

Wall-clock numbers are informational only; the multiply and byte counters are
the verifiable output and must agree with :mod:`fido_lab.costmodel` exactly.
"""

from __future__ import annotations

import csv
import json
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import costmodel as cm
from .config import ModelConfig
from .decoding import DecodeResult, greedy_decode
from .model import Counters, FiDInput, init_model, random_fid_input
from .numerics import Rng

MAX_BENCH_D = 1024
MAX_BENCH_N_S = 16384
THREADS_ENV = "FIDO_LAB_THREADS"


class BenchGuardError(ValueError):
    pass


def _rel_err(measured: float, expected: float) -> float:
    if expected == 0:
        return 0.0 if measured == 0 else float("inf")
    return abs(measured - expected) / abs(expected)


def check_guard(config: ModelConfig) -> None:
    if max(config.d, config.dec_d) > MAX_BENCH_D or config.n_s > MAX_BENCH_N_S:
        raise BenchGuardError(
            f"config too large for a desk run (d={config.d}, d_dec={config.dec_d}, n_s={config.n_s}; "
            f"limits d<={MAX_BENCH_D}, n_s<={MAX_BENCH_N_S}); use `fido-lab analyze` for cost-model-only analysis"
        )


def thread_count(batch: int) -> int:
    raw = os.environ.get(THREADS_ENV)
    cap = int(raw) if raw else (os.cpu_count() or 1)
    return max(1, min(batch, cap))


@dataclass
class BenchReport:
    config: ModelConfig
    batch: int
    repeats: int
    seed: int
    n_t: int
    threads: int
    timings_total: list[float]
    timings_encoder: list[float]
    timings_decoder: list[float]
    encoder_counters: Counters  # one representative sample
    decoder_counters: Counters
    batch_encoder_counters: Counters
    batch_decoder_counters: Counters
    rel_error: dict[str, float] = field(default_factory=dict)
    decoder_to_encoder_multiplies: float = 0.0
    expected_decoder_to_encoder: float = 0.0

    @property
    def median_total(self) -> float:
        return statistics.median(self.timings_total)

    @property
    def median_encoder(self) -> float:
        return statistics.median(self.timings_encoder)

    @property
    def median_decoder(self) -> float:
        return statistics.median(self.timings_decoder)

    @property
    def samples_per_sec(self) -> float:
        return self.batch / self.median_total if self.median_total > 0 else float("inf")

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "batch": self.batch,
            "repeats": self.repeats,
            "seed": self.seed,
            "n_t": self.n_t,
            "threads": self.threads,
            "wall": {
                "total": {"raw": self.timings_total, "median": self.median_total},
                "encoder": {"raw": self.timings_encoder, "median": self.median_encoder},
                "decoder": {"raw": self.timings_decoder, "median": self.median_decoder},
            },
            "samples_per_sec": self.samples_per_sec,
            "counters": {
                "encoder": self.encoder_counters.to_dict(),
                "decoder": self.decoder_counters.to_dict(),
                "batch_encoder": self.batch_encoder_counters.to_dict(),
                "batch_decoder": self.batch_decoder_counters.to_dict(),
            },
            "rel_error": dict(self.rel_error),
            "decoder_to_encoder_multiplies": self.decoder_to_encoder_multiplies,
            "expected_decoder_to_encoder": self.expected_decoder_to_encoder,
        }

    def csv_row(self) -> dict[str, Any]:
        c = self.config
        return {
            "d": c.d, "d_dec": c.dec_d, "L_enc": c.L_enc, "L_dec": c.L_dec, "K": c.K,
            "attention_kind": c.attention_kind, "n_p": c.n_p, "n_passages": c.n_passages, "n_t": self.n_t,
            "batch": self.batch, "repeats": self.repeats, "seed": self.seed,
            "median_total": self.median_total, "median_encoder": self.median_encoder,
            "median_decoder": self.median_decoder, "samples_per_sec": self.samples_per_sec,
            "encoder_multiplies": self.encoder_counters.multiplies,
            "decoder_multiplies": self.decoder_counters.multiplies,
            "max_rel_error": max(self.rel_error.values()) if self.rel_error else 0.0,
        }


CSV_COLUMNS = ("d", "d_dec", "L_enc", "L_dec", "K", "attention_kind", "n_p", "n_passages", "n_t", "batch",
               "repeats", "seed", "median_total", "median_encoder", "median_decoder", "samples_per_sec",
               "encoder_multiplies", "decoder_multiplies", "max_rel_error")


def append_csv(report: BenchReport, path: str | Path) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        if new:
            writer.writeheader()
        writer.writerow(report.csv_row())


def counter_errors(config: ModelConfig, inp: FiDInput, result: DecodeResult) -> dict[str, float]:
    """Relative error of engine counters against the closed-form cost model (batch 1)."""
    c = cm.CostInput.from_model_config(config, b=1, n_t=result.steps, n_passages=len(inp.passages))
    enc, dec = result.encoder_counters, result.decoder_counters
    return {
        "encoder_multiplies": _rel_err(enc.multiplies, cm.encoder_flops_exact(c)),
        "decoder_multiplies": _rel_err(dec.multiplies, cm.decoder_flops_exact(c, incremental=True)),
        "encoder_bytes": _rel_err(enc.bytes_weights + enc.bytes_kv, cm.encoder_weight_bytes(c)),
        "decoder_bytes": _rel_err(dec.bytes_weights + dec.bytes_kv, cm.decoder_bytes(c, b=1)),
    }


def run_bench(config: ModelConfig, batch: int, repeats: int, seed: int = 0,
              max_len: int | None = None) -> BenchReport:
    check_guard(config)
    if batch < 1 or repeats < 1:
        raise ValueError(f"batch and repeats must be >= 1, got batch={batch}, repeats={repeats}")
    n_t = config.n_t_max if max_len is None else max_len
    model = init_model(config, seed)
    rng = Rng(seed + 1)
    inputs = [random_fid_input(config, rng) for _ in range(batch)]
    workers = thread_count(batch)

    def one(inp: FiDInput) -> DecodeResult:
        return greedy_decode(model, inp, n_t, eos_token=None)

    one(inputs[0])  # warm-up, not timed
    totals, encs, decs = [], [], []
    first: list[DecodeResult] = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for r in range(repeats):
            t0 = time.perf_counter()
            results = list(pool.map(one, inputs))
            totals.append(time.perf_counter() - t0)
            encs.append(sum(x.wall_encoder for x in results))
            decs.append(sum(x.wall_decoder for x in results))
            if r == 0:
                first = results

    batch_enc, batch_dec = Counters(), Counters()
    for res in first:
        batch_enc += res.encoder_counters
        batch_dec += res.decoder_counters
    rep = first[0]
    c = cm.CostInput.from_model_config(config, b=1, n_t=rep.steps, n_passages=len(inputs[0].passages))
    return BenchReport(
        config=config, batch=batch, repeats=repeats, seed=seed, n_t=n_t, threads=workers,
        timings_total=totals, timings_encoder=encs, timings_decoder=decs,
        encoder_counters=rep.encoder_counters, decoder_counters=rep.decoder_counters,
        batch_encoder_counters=batch_enc, batch_decoder_counters=batch_dec,
        rel_error=counter_errors(config, inputs[0], rep),
        decoder_to_encoder_multiplies=rep.decoder_counters.multiplies / rep.encoder_counters.multiplies,
        expected_decoder_to_encoder=cm.decoder_flops_exact(c, incremental=True) / cm.encoder_flops_exact(c),
    )


def report_json(report: BenchReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
