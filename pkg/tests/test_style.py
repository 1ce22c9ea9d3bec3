import numpy as np
import pytest

from linearizer.cores import DenseCore
from linearizer.data import dataset
from linearizer.maps import coupling_stack
from linearizer.operators import ContractError
from linearizer.rng import RngStream
from linearizer.style import ALPHA_GRID, StyleLinearizer, bend, rotate, style_interp, train_styles


def test_alpha_grid():
    assert ALPHA_GRID == (0.0, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 1.0)


def test_targets():
    x = np.array([[1.0, 0.0]])
    np.testing.assert_allclose(rotate(x, np.pi / 2), [[0.0, 1.0]], atol=1e-15)
    assert np.array_equal(bend(np.array([[2.0, 1.0]])), [[2.0, 3.0]])


def test_styles_share_g_and_endpoints_are_exact():
    data = dataset("two-moons", 300, 0)
    a, b = train_styles(data, steps=40, batch=32, rng=RngStream(1), blocks=2, width=16)
    assert a.g is b.g
    out = style_interp(a, b, data[:20])
    assert list(out) == list(ALPHA_GRID)
    assert np.array_equal(out[1.0], a.linearizer()(data[:20]))
    assert np.array_equal(out[0.0], b.linearizer()(data[:20]))


def test_training_reduces_style_loss():
    rows = []
    train_styles(dataset("two-moons", 300, 0), steps=60, batch=64, rng=RngStream(2), blocks=2, width=16,
                 log_every=60, log=rows.append)
    assert rows[-1]["loss"] < rows[0]["loss"]


def test_basis_mismatch_rejected():
    a = StyleLinearizer(coupling_stack(2, 1, rng=RngStream(1)), DenseCore.of(np.eye(2)))
    b = StyleLinearizer(coupling_stack(2, 1, rng=RngStream(2)), DenseCore.of(np.eye(2)))
    with pytest.raises(ContractError):
        style_interp(a, b, np.zeros((1, 2)))
