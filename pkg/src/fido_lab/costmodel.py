"""Closed-form FLOPs, inverse operational intensity and roofline time for FiD variants.

FLOPs here are multiplication counts, the convention of the analysis this
model reproduces; multiply-accumulate counters that report ``2 x MACs`` will
read twice these numbers.

Notation: ``E``/``D`` are encoder/decoder widths (equal unless the decoder is
asymmetric), ``kv`` is the decoder key/value width (``D`` for MHA, ``D/h`` for
MQA), ``S`` is the set of decoder layers that keep cross-attention.

Bytes follow the same rules as the engine's counters (see ``fido_lab.model``):
weights are loaded once per pass or decode step and shared by the batch, KV
rows are loaded once per step per sample, activations are ignored. All times
and bytes in a :class:`CostReport` are per sample.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

from .config import ArchMixin, ConfigError, ModelConfig, check_arch, parse_fields
from .model import kv_cache_bytes

ATTENTION_RATIO_KINDS = ("self-MHA", "cross-MHA", "cross-MQA")
SWEEP_AXES = ("n_passages", "n_t")


@dataclass(frozen=True)
class CostInput(ArchMixin):
    b: int
    d: int
    h: int
    L_enc: int
    L_dec: int
    n_p: int
    n_passages: int
    n_t: int
    K: int = 1
    attention_kind: str = "MHA"
    float_bytes: int = 8
    d_dec: int | None = None
    h_dec: int | None = None

    def __post_init__(self):
        check_arch(self, ("b", "d", "h", "L_enc", "L_dec", "n_p", "K", "float_bytes"))
        for name in ("n_passages", "n_t"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ConfigError(name, f"must be a non-negative integer, got {v!r}")

    def replace(self, **changes) -> "CostInput":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "CostInput":
        return cls(**parse_fields(cls, raw, ("b", "d", "h", "L_enc", "L_dec", "n_p", "n_passages", "n_t")))

    @classmethod
    def from_model_config(cls, config: ModelConfig, b: int = 1, n_t: int | None = None,
                          n_passages: int | None = None) -> "CostInput":
        return cls(b=b, d=config.d, h=config.h, L_enc=config.L_enc, L_dec=config.L_dec, n_p=config.n_p,
                   n_passages=config.n_passages if n_passages is None else n_passages,
                   n_t=config.n_t_max if n_t is None else n_t, K=config.K,
                   attention_kind=config.attention_kind, float_bytes=config.float_bytes,
                   d_dec=config.d_dec, h_dec=config.h_dec)


@dataclass(frozen=True)
class DeviceProfile:
    peak_flops: float = 2.75e14
    bandwidth: float = 1.2e12

    def __post_init__(self):
        for name in ("peak_flops", "bandwidth"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(name, f"must be a positive number, got {v!r}")

    def to_dict(self) -> dict[str, float]:
        return {"peak_flops": self.peak_flops, "bandwidth": self.bandwidth}

    @classmethod
    def from_dict(cls, raw: dict) -> "DeviceProfile":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "device profile must be a JSON object")
        kwargs = {}
        for key in ("peak_flops", "bandwidth"):
            if key in raw:
                kwargs[key] = raw[key]
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# FLOPs


def encoder_flops_exact(c: CostInput) -> int:
    """Per-layer MLP, QKVO projection and attention-score multiplies, summed over layers."""
    return c.L_enc * (12 * c.n_s * c.d ** 2 + 2 * c.n_s * c.n_p * c.d)


def encoder_flops_approx(c: CostInput) -> int:
    return 12 * c.n_s * c.d ** 2 * c.L_enc


def decoder_cache_init_flops(c: CostInput) -> int:
    """Cross-attention key/value projections of the encoder output, at LSA layers only."""
    return len(c.lsa_layers) * 2 * c.n_s * c.d * c.kv_width


def _decoder_layer_projection_flops(c: CostInput, n_t: int) -> int:
    D, kv = c.dec_d, c.kv_width
    per_layer = 8 * n_t * D * D + 2 * n_t * D * D + 2 * n_t * D * kv
    cross = 2 * n_t * D * D + 2 * n_t * c.n_s * D
    return c.L_dec * per_layer + len(c.lsa_layers) * cross


def decoder_flops_exact(c: CostInput, incremental: bool = False) -> int:
    """Decoder multiplies for ``n_t`` output tokens.

    Every layer: MLP ``8 n_t D^2``, self-attention Q/O ``2 n_t D^2``, K/V
    ``2 n_t D kv`` and scores. LSA layers add cross Q/O ``2 n_t D^2``, cross K/V
    over the encoder output ``2 n_s E kv`` and cross scores ``2 n_t n_s D``.

    The self-attention score term is ``2 n_t^2 D`` for a full causal pass
    (``incremental=False``) and ``n_t (n_t + 1) D`` when decoding one token at a
    time against a growing cache.
    """
    if c.n_t == 0:
        return 0
    n_t, D = c.n_t, c.dec_d
    scores = n_t * (n_t + 1) * D if incremental else 2 * n_t * n_t * D
    return _decoder_layer_projection_flops(c, n_t) + c.L_dec * scores + decoder_cache_init_flops(c)


def decoder_flops_approx(c: CostInput) -> int:
    """Dominant decoder term: cross-attention K/V projections (``2 n_s d^2 L`` for vanilla FiD)."""
    return 2 * c.n_s * c.d * c.kv_width * len(c.lsa_layers)


def decoder_step_flops(c: CostInput, t: np.ndarray | int) -> np.ndarray | int:
    """Multiplies of the incremental step that leaves ``t`` tokens in the self-attention cache."""
    D = c.dec_d
    return _decoder_layer_projection_flops(c, 1) + c.L_dec * 2 * t * D


# ---------------------------------------------------------------------------
# bytes


def encoder_weight_bytes(c: CostInput) -> int:
    return c.L_enc * 12 * c.d * c.d * c.float_bytes


def decoder_step_weight_bytes(c: CostInput) -> int:
    D, kv = c.dec_d, c.kv_width
    per_layer = 8 * D * D + 2 * D * D + 2 * D * kv
    return (c.L_dec * per_layer + len(c.lsa_layers) * 2 * D * D) * c.float_bytes


def decoder_init_weight_bytes(c: CostInput) -> int:
    return len(c.lsa_layers) * 2 * c.d * c.kv_width * c.float_bytes


def decoder_step_kv_bytes(c: CostInput, t: np.ndarray | int) -> np.ndarray | int:
    """Per-sample KV bytes read by the step that leaves ``t`` tokens in the cache."""
    kv, fb = c.kv_width, c.float_bytes
    return c.L_dec * 2 * t * kv * fb + len(c.lsa_layers) * 2 * c.n_s * kv * fb


def decoder_bytes(c: CostInput, b: int | None = None) -> float:
    """Per-sample decoder bytes over ``n_t`` steps with weights amortised over batch ``b``."""
    b = c.b if b is None else b
    t = np.arange(1, c.n_t + 1)
    steps = c.n_t * decoder_step_weight_bytes(c) / b + float(np.sum(decoder_step_kv_bytes(c, t)))
    return decoder_init_weight_bytes(c) / b + steps


# ---------------------------------------------------------------------------
# operational intensity and roofline


def inv_intensity_mlp(c: CostInput) -> float:
    return 1.0 / c.b + 1.0 / c.dec_d


def inv_intensity_attention(c: CostInput, kind: str) -> float:
    d = c.dec_d
    if kind == "self-MHA":
        return 1.0 / c.b + c.n_t / d
    if kind == "cross-MHA":
        return 1.0 / c.b + c.n_s / d
    if kind == "cross-MQA":
        return 1.0 / c.b + 1.0 / d + c.n_s / (d * c.dec_h)
    raise ValueError(f"unknown attention kind {kind!r}; expected one of {ATTENTION_RATIO_KINDS}")


def roofline_time(flops: float, nbytes: float, dev: DeviceProfile) -> float:
    """Execution time when limited by whichever of compute or memory traffic is slower."""
    return max(flops / dev.peak_flops, nbytes / dev.bandwidth)


def _roofline_vec(flops: np.ndarray, nbytes: np.ndarray, dev: DeviceProfile) -> np.ndarray:
    return np.maximum(flops / dev.peak_flops, nbytes / dev.bandwidth)


def encoder_time(c: CostInput, dev: DeviceProfile) -> float:
    return roofline_time(encoder_flops_exact(c), encoder_weight_bytes(c) / c.b, dev)


def decoder_time(c: CostInput, dev: DeviceProfile) -> float:
    """Cache init plus one roofline evaluation per decode step."""
    init = roofline_time(decoder_cache_init_flops(c), decoder_init_weight_bytes(c) / c.b, dev)
    if c.n_t == 0:
        return init
    t = np.arange(1, c.n_t + 1, dtype=np.float64)
    step_bytes = decoder_step_weight_bytes(c) / c.b + decoder_step_kv_bytes(c, t)
    steps = _roofline_vec(decoder_step_flops(c, t).astype(np.float64), step_bytes, dev)
    return init + float(steps.sum())


# ---------------------------------------------------------------------------
# reports

CSV_COLUMNS = (
    "b", "d", "h", "d_dec", "h_dec", "L_enc", "L_dec", "K", "attention_kind", "n_p", "n_passages", "n_s",
    "n_t", "float_bytes", "peak_flops", "bandwidth",
    "flops_enc_exact", "flops_enc_approx", "flops_dec_exact", "flops_dec_approx", "flops_dec_incremental",
    "inv_intensity_mlp", "inv_intensity_self_mha", "inv_intensity_cross_mha", "inv_intensity_cross_mqa",
    "bytes_enc", "bytes_dec", "kv_bytes",
    "predicted_time_enc", "predicted_time_dec", "predicted_time_total",
    "encoder_flops_share", "decoder_time_share",
)


@dataclass(frozen=True)
class CostReport:
    input: CostInput
    device: DeviceProfile
    flops_enc_exact: int
    flops_enc_approx: int
    flops_dec_exact: int
    flops_dec_approx: int
    flops_dec_incremental: int
    inv_intensity: dict[str, float]
    bytes_enc: float
    bytes_dec: float
    kv_bytes: int
    predicted_time_enc: float
    predicted_time_dec: float

    @property
    def predicted_time_total(self) -> float:
        return self.predicted_time_enc + self.predicted_time_dec

    @property
    def encoder_flops_share(self) -> float:
        total = self.flops_enc_exact + self.flops_dec_exact
        return self.flops_enc_exact / total if total else 0.0

    @property
    def decoder_time_share(self) -> float:
        total = self.predicted_time_total
        return self.predicted_time_dec / total if total else 0.0

    def row(self) -> dict[str, Any]:
        c = self.input
        out: dict[str, Any] = {k: getattr(c, k) for k in CSV_COLUMNS[:14] if k != "n_s"}
        out["d_dec"], out["h_dec"], out["n_s"] = c.dec_d, c.dec_h, c.n_s
        out.update(self.device.to_dict())
        for k in ("flops_enc_exact", "flops_enc_approx", "flops_dec_exact", "flops_dec_approx",
                  "flops_dec_incremental", "bytes_enc", "bytes_dec", "kv_bytes", "predicted_time_enc",
                  "predicted_time_dec", "predicted_time_total", "encoder_flops_share", "decoder_time_share"):
            out[k] = getattr(self, k)
        for k, v in self.inv_intensity.items():
            out["inv_intensity_" + k] = v
        return {k: out[k] for k in CSV_COLUMNS}

    def to_dict(self) -> dict[str, Any]:
        d = self.row()
        d["inv_intensity"] = dict(self.inv_intensity)
        for k in list(d):
            if k.startswith("inv_intensity_"):
                del d[k]
        return d


def predict_split(c: CostInput, dev: DeviceProfile | None = None) -> CostReport:
    dev = dev or DeviceProfile()
    inv = {
        "mlp": inv_intensity_mlp(c),
        "self_mha": inv_intensity_attention(c, "self-MHA"),
        "cross_mha": inv_intensity_attention(c, "cross-MHA"),
        "cross_mqa": inv_intensity_attention(c, "cross-MQA"),
    }
    return CostReport(
        input=c, device=dev,
        flops_enc_exact=encoder_flops_exact(c),
        flops_enc_approx=encoder_flops_approx(c),
        flops_dec_exact=decoder_flops_exact(c),
        flops_dec_approx=decoder_flops_approx(c),
        flops_dec_incremental=decoder_flops_exact(c, incremental=True),
        inv_intensity=inv,
        bytes_enc=encoder_weight_bytes(c) / c.b,
        bytes_dec=decoder_bytes(c),
        kv_bytes=kv_cache_bytes(c, c.b, c.n_s, c.n_t),
        predicted_time_enc=encoder_time(c, dev),
        predicted_time_dec=decoder_time(c, dev),
    )


def sweep(base: CostInput, dev: DeviceProfile | None, axis: str, values: Iterable[int]) -> list[CostReport]:
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    return [predict_split(base.replace(**{axis: int(v)}), dev) for v in values]


def reports_to_csv(reports: Sequence[CostReport], header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    if header:
        writer.writeheader()
    for r in reports:
        writer.writerow(r.row())
    return buf.getvalue()


def reports_to_json(reports: Sequence[CostReport] | CostReport) -> str:
    if isinstance(reports, CostReport):
        payload: Any = reports.to_dict()
    else:
        payload = [r.to_dict() for r in reports]
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
