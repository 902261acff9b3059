import numpy as np
import pytest

from fido_lab import weights_io
from fido_lab.config import TOY
from fido_lab.model import init_model, weight_layout
from fido_lab.weights_io import MAGIC, WeightFileError


@pytest.fixture(scope="module")
def small():
    return init_model(TOY.replace(d=16, h=2, L_enc=1, L_dec=2, K=2, vocab=20, n_p=4, n_passages=2), 1)


def test_round_trip(small, tmp_path):
    path = tmp_path / "w.bin"
    weights_io.save(small, path)
    back = weights_io.load(path)
    assert back.config == small.config
    for name, _, _ in weight_layout(small.config):
        assert np.array_equal(back[name], small[name])


def test_starts_with_magic(small):
    assert weights_io.dumps(small).startswith(MAGIC)


def test_dumps_deterministic(small):
    assert weights_io.dumps(small) == weights_io.dumps(init_model(small.config, 1))


@pytest.mark.parametrize("mutate", [
    lambda b: b"FIDO2" + b[5:],
    lambda b: b[:-3],
    lambda b: b + b"\x00",
    lambda b: b[:40],
])
def test_corruption_rejected(small, mutate):
    with pytest.raises(WeightFileError):
        weights_io.loads(mutate(weights_io.dumps(small)))


def test_non_finite_rejected(small):
    data = bytearray(weights_io.dumps(small))
    data[-8:] = np.array([np.nan]).astype("<f8").tobytes()
    with pytest.raises(WeightFileError, match="finite"):
        weights_io.loads(bytes(data))
