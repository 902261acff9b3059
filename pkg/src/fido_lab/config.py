"""Architecture hyperparameters shared by the engine and the cost model.

One JSON object describes both: the engine reads the ``ModelConfig`` keys,
the cost model additionally reads workload keys (``b``, ``n_t``). Key names
are identical to the dataclass field names.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

ATTENTION_KINDS = ("MHA", "MQA")


class ConfigError(ValueError):
    """Invalid or missing configuration field. ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field {field!r}: {message}")


def lsa_schedule(L_dec: int, K: int) -> frozenset[int]:
    """1-indexed decoder layers that keep cross-attention under sparsity ``K``.

    Multiples of ``K`` up to ``L_dec``; when ``K > L_dec`` the last layer is
    kept so there is always at least one cross-attention layer.
    """
    if L_dec < 1 or K < 1:
        raise ValueError(f"need L_dec >= 1 and K >= 1, got L_dec={L_dec}, K={K}")
    layers = frozenset(range(K, L_dec + 1, K))
    return layers or frozenset({L_dec})


def _require(raw: dict, key: str, kind=int):
    if key not in raw:
        raise ConfigError(key, "missing")
    return _coerce(key, raw[key], kind)


def _coerce(key: str, value, kind):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    return kind(value)


class ArchMixin:
    """Derived architecture quantities shared by ModelConfig and CostInput."""

    d: int
    h: int
    L_dec: int
    K: int
    attention_kind: str
    n_p: int
    n_passages: int
    d_dec: int | None
    h_dec: int | None

    @property
    def dec_d(self) -> int:
        return self.d if self.d_dec is None else self.d_dec

    @property
    def dec_h(self) -> int:
        return self.h if self.h_dec is None else self.h_dec

    @property
    def kv_width(self) -> int:
        """Width of one decoder key (or value) row: ``d`` for MHA, ``d/h`` for MQA."""
        return self.dec_d if self.attention_kind == "MHA" else self.dec_d // self.dec_h

    @property
    def n_s(self) -> int:
        return self.n_passages * self.n_p

    @property
    def lsa_layers(self) -> frozenset[int]:
        return lsa_schedule(self.L_dec, self.K)


def check_arch(obj, positive: tuple[str, ...]) -> None:
    for name in positive:
        v = getattr(obj, name)
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ConfigError(name, f"must be a positive integer, got {v!r}")
    for name in ("d_dec", "h_dec"):
        v = getattr(obj, name)
        if v is not None and (isinstance(v, bool) or not isinstance(v, int) or v < 1):
            raise ConfigError(name, f"must be a positive integer, got {v!r}")
    if obj.attention_kind not in ATTENTION_KINDS:
        raise ConfigError("attention_kind", f"must be one of {ATTENTION_KINDS}, got {obj.attention_kind!r}")
    if obj.d % obj.h:
        raise ConfigError("h", f"d={obj.d} is not divisible by h={obj.h}")
    if obj.dec_d % obj.dec_h:
        raise ConfigError("h_dec", f"d_dec={obj.dec_d} is not divisible by h_dec={obj.dec_h}")


def parse_fields(cls, raw: dict, required: tuple[str, ...]) -> dict:
    """Validate a JSON object against a dataclass; unknown keys are ignored."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a JSON object")
    kwargs = {key: _require(raw, key) for key in required}
    for f in dataclasses.fields(cls):
        if f.name in kwargs or f.name not in raw:
            continue
        if f.name in ("d_dec", "h_dec") and raw[f.name] is None:
            continue
        kind = str if f.name == "attention_kind" else int
        kwargs[f.name] = _coerce(f.name, raw[f.name], kind)
    return kwargs


@dataclass(frozen=True)
class ModelConfig(ArchMixin):
    d: int
    h: int
    L_enc: int
    L_dec: int
    K: int = 1
    attention_kind: str = "MHA"
    vocab: int = 512
    n_p: int = 32
    n_passages: int = 8
    n_t_max: int = 32
    # Asymmetric decoder; None means "same as the encoder".
    d_dec: int | None = None
    h_dec: int | None = None
    float_bytes: int = 8

    def __post_init__(self):
        check_arch(self, ("d", "h", "L_enc", "L_dec", "K", "vocab", "n_p", "n_passages", "n_t_max", "float_bytes"))

    @property
    def d_ff(self) -> int:
        return 4 * self.d

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        return cls(**parse_fields(cls, raw, ("d", "h", "L_enc", "L_dec")))


def load_json(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"{path} is not valid JSON: {exc}") from exc


# Toy model used for oracle tests: small enough for brute force in milliseconds.
TOY = ModelConfig(d=64, h=4, L_enc=4, L_dec=4, K=1, attention_kind="MHA", vocab=512,
                  n_p=32, n_passages=8, n_t_max=32)

# Base-sized FiD with 40 passages of 256 tokens (vocab is T5's, it does not
# enter any cost formula). Accelerator weights/KV are bf16.
FID_BASE = ModelConfig(d=768, h=12, L_enc=12, L_dec=12, K=1, attention_kind="MHA", vocab=32128,
                        n_p=256, n_passages=40, n_t_max=512, float_bytes=2)
BASE_LSA = FID_BASE.replace(K=6)
BASE_LSA_MQA = BASE_LSA.replace(attention_kind="MQA")
# Base encoder with an XL-sized decoder.
FIDO_BASE_XL = BASE_LSA_MQA.replace(d_dec=2048, h_dec=32, L_dec=24)
