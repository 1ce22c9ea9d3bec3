import numpy as np
import pytest

from linearizer import autograd as ad
from linearizer.autograd import Tensor
from linearizer.cores import BinaryDiagonalCore
from linearizer.data import dataset, embed
from linearizer.gradcheck import grad_check
from linearizer.ign import (DEFAULT_WEIGHTS, IGNModel, frozen_surrogate, ign_loss, ign_terms, ste_binarize,
                            train_ign)
from linearizer.maps import identity_map
from linearizer.operators import idempotency_residual
from linearizer.rng import RngStream


def _data(n=64, seed=0):
    return embed(dataset("two-moons", n, seed), 16)


def test_default_weights():
    assert DEFAULT_WEIGHTS == {"rec": 1.0, "sparse": 0.75, "iso": 0.001}


def test_ste_binarize_values_and_gradient():
    logits = Tensor(np.log(np.array([0.9, 0.1]) / np.array([0.1, 0.9])), requires_grad=True)
    p = ad.sigmoid(logits)
    lam = ste_binarize(p)
    np.testing.assert_array_equal(lam.data, [1.0, 0.0])
    lam.sum().backward()
    np.testing.assert_allclose(logits.grad, p.data * (1 - p.data), rtol=1e-12)


def test_identity_map_identity_core_losses():
    m = IGNModel(identity_map(16), BinaryDiagonalCore(16, logits=np.full(16, 3.0)))
    terms = ign_terms(m, _data())
    assert terms["rec"].item() == 0.0
    assert terms["sparse"].item() == 1.0
    assert terms["iso"].item() == 0.0


def test_zero_core_losses():
    m = IGNModel.create(16, blocks=2, rng=RngStream(1))
    m.core.logits.data = np.full(16, -3.0)
    x = _data()
    terms = ign_terms(m, x)
    zero = m.linearizer().Y.zero_vector()
    assert terms["sparse"].item() == 0.0
    assert terms["rec"].item() == pytest.approx(np.mean(np.sum((zero - x) ** 2, axis=1)), rel=1e-12)


def test_sparse_term_monotone_in_active_entries():
    m = IGNModel(identity_map(8), BinaryDiagonalCore(8, logits=np.full(8, -1.0)))
    values = []
    for k in range(9):
        m.core.logits.data = np.where(np.arange(8) < k, 1.0, -1.0)
        values.append(ign_terms(m, np.zeros((2, 8)))["sparse"].item())
        assert m.rank() == k
    assert values == sorted(values) and values[0] == 0.0 and values[-1] == 1.0


def test_components_finite_and_gradients_check():
    for seed in range(3):
        m = IGNModel.create(16, blocks=2, width=16, rng=RngStream(seed))
        x = _data(32, seed)
        _, parts = ign_loss(m, x)
        assert all(np.isfinite(v) for v in parts.values())
        diag = frozen_surrogate(m)
        assert np.array_equal(diag().data, m.core.diagonal().data)
        rep = grad_check(lambda: ign_terms(m, x, diag())["total"], m.parameters(), max_coords=12,
                         rng=RngStream(seed))
        assert rep.max_error < 1e-4, rep.errors


def test_ste_gradient_equals_surrogate_gradient():
    m = IGNModel.create(16, blocks=2, width=16, rng=RngStream(4))
    x = _data(16)
    ign_terms(m, x)["total"].backward()
    ste = m.core.logits.grad.copy()
    for p in m.parameters():
        p.grad = None
    ign_terms(m, x, frozen_surrogate(m)())["total"].backward()
    np.testing.assert_allclose(ste, m.core.logits.grad, rtol=1e-12, atol=1e-15)


def test_projection_is_idempotent_off_manifold():
    m = IGNModel.create(16, blocks=3, rng=RngStream(5))
    m.core.logits.data = RngStream(6).normal(16)
    x = RngStream(7).normal((1000, 16), 3.0)
    x[:10] *= 10 / np.linalg.norm(x[:10], axis=1, keepdims=True)
    assert idempotency_residual(m.linearizer(), x) < 1e-6
    fx = m.project(x)
    assert np.abs(m.project(fx) - fx).max() < 1e-6


def test_identity_core_projection_is_identity():
    m = IGNModel.create(16, blocks=2, rng=RngStream(8))
    m.core.logits.data = np.full(16, 5.0)
    x = RngStream(9).normal((50, 16))
    assert np.abs(m.project(x) - x).max() < 1e-9
    assert m.rank() == 16


def test_short_training_keeps_global_idempotency():
    m = IGNModel.create(16, blocks=2, width=32, rng=RngStream(10))
    probe = RngStream(11).normal((300, 16), 3.0)
    res = train_ign(m, _data(400), steps=40, batch=32, rng=RngStream(12), log_every=10, probe=probe)
    assert [h["step"] for h in res.history] == [0, 10, 20, 30, 40]
    assert max(res.idempotency) < 1e-6
    assert all("g_zero_norm" in h for h in res.history)


def test_config_roundtrip():
    m = IGNModel.create(16, blocks=2, rng=RngStream(13))
    clone = IGNModel.from_config(m.config())
    clone.load_state_dict(m.state_dict())
    x = RngStream(14).normal((5, 16))
    assert np.array_equal(clone.project(x), m.project(x))
    assert clone.weights == m.weights
