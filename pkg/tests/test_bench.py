import numpy as np
import pytest

from fido_lab.bench import BenchGuardError, append_csv, run_bench, thread_count
from fido_lab.config import TOY
from fido_lab.decoding import greedy_decode
from fido_lab.model import Counters, encode, init_model, random_fid_input
from fido_lab.numerics import Rng

SMALL = TOY.replace(n_passages=2, n_t_max=6)


def test_counter_errors_are_zero():
    report = run_bench(SMALL, batch=2, repeats=1)
    assert set(report.rel_error) == {"encoder_multiplies", "decoder_multiplies", "encoder_bytes", "decoder_bytes"}
    assert all(v == 0.0 for v in report.rel_error.values())


def test_repeats_recorded():
    report = run_bench(SMALL, batch=1, repeats=5)
    assert len(report.timings_total) == 5
    assert report.to_dict()["wall"]["total"]["median"] == report.median_total


def test_decoder_to_encoder_ratio_matches_formula():
    report = run_bench(TOY, batch=1, repeats=1, max_len=8)
    assert report.decoder_to_encoder_multiplies == pytest.approx(report.expected_decoder_to_encoder, rel=1e-12)


def test_counters_deterministic_across_runs():
    a, b = run_bench(SMALL, 2, 1, seed=3), run_bench(SMALL, 2, 1, seed=3)
    assert a.batch_encoder_counters == b.batch_encoder_counters
    assert a.batch_decoder_counters == b.batch_decoder_counters


def test_guard_rejects_large_config():
    with pytest.raises(BenchGuardError, match="analyze"):
        run_bench(TOY.replace(d=4096, h=4), 1, 1)


def test_guard_rejects_long_context():
    with pytest.raises(BenchGuardError):
        run_bench(TOY.replace(n_p=512, n_passages=40), 1, 1)


def test_encoder_multiplies_linear_in_passages():
    model = init_model(TOY, 0)
    xs, ys = [2, 4, 6, 8], []
    for n in xs:
        counters = Counters()
        encode(model, random_fid_input(TOY, Rng(n), n_passages=n), counters)
        ys.append(counters.multiplies)
    assert all(b > a for a, b in zip(ys, ys[1:]))
    r = np.corrcoef(xs, ys)[0, 1]
    assert r * r >= 0.999


def test_batch_counters_sum_samples():
    report = run_bench(SMALL, batch=3, repeats=1)
    model = init_model(SMALL, 0)
    rng = Rng(1)
    total = sum(greedy_decode(model, random_fid_input(SMALL, rng), 6).encoder_counters.multiplies
                for _ in range(3))
    assert report.batch_encoder_counters.multiplies == total


def test_thread_env_cap(monkeypatch):
    monkeypatch.setenv("FIDO_LAB_THREADS", "2")
    assert thread_count(8) == 2
    assert thread_count(1) == 1


def test_csv_header_written_once(tmp_path):
    report = run_bench(SMALL, batch=1, repeats=1)
    path = tmp_path / "b.csv"
    append_csv(report, path)
    append_csv(report, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("d,")
