"""Fusion-in-Decoder inference engine with layer-sparse cross-attention, multi-query
attention and asymmetric decoders, plus a closed-form FLOPs/roofline cost model."""

from .config import ConfigError, ModelConfig, lsa_schedule
from .costmodel import CostInput, CostReport, DeviceProfile, predict_split, sweep
from .decoding import DecodeResult, beam_decode, greedy_decode
from .model import (Counters, EncoderOutput, FiDInput, KVCache, Model, decoder_step, encode, init_cache,
                    init_model, kv_cache_bytes, teacher_forced_forward)

__all__ = [
    "ConfigError", "ModelConfig", "lsa_schedule", "CostInput", "CostReport", "DeviceProfile", "predict_split",
    "sweep", "DecodeResult", "beam_decode", "greedy_decode", "Counters", "EncoderOutput", "FiDInput", "KVCache",
    "Model", "decoder_step", "encode", "init_cache", "init_model", "kv_cache_bytes", "teacher_forced_forward",
]
