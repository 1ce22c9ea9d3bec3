import numpy as np
import pytest

from linearizer.data import DataError, dataset, embed, ingest_csv, ring_centers
from linearizer.nn import MLP
from linearizer.optim import Adam
from linearizer.autograd import Tensor
from linearizer.rng import RngStream


def test_same_seed_and_counter_same_draws():
    a, b = RngStream(7, 3), RngStream(7, 3)
    assert np.array_equal(a.normal(10), b.normal(10))
    assert np.array_equal(a.uniform(4), b.uniform(4))
    assert a.state() == b.state() == {"seed": 7, "counter": 5}


def test_state_roundtrip_resumes_stream():
    a = RngStream(1)
    a.normal(3)
    b = RngStream.from_state(a.state())
    assert np.array_equal(a.normal(5), b.normal(5))


def test_substreams_differ_and_do_not_advance():
    a = RngStream(1)
    s0, s1 = a.substream(0), a.substream(1)
    assert a.counter == 0
    assert not np.array_equal(s0.normal(4), s1.normal(4))


def test_training_trajectory_is_bit_identical():
    def run():
        r = RngStream(5)
        net = MLP([2, 16, 16, 1], r)
        opt = Adam(net.parameters())
        x = r.normal((32, 2))
        y = np.sin(x[:, :1])
        for _ in range(100):
            opt.zero_grad()
            loss = ((net(Tensor(x)) - y) ** 2).mean()
            loss.backward()
            opt.step()
        return net.state_dict()

    a, b = run(), run()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    (p * np.array([3.0, -0.01])).sum().backward()
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -0.9], rtol=1e-6)


@pytest.mark.parametrize("name", ["two-moons", "8gaussians", "checkerboard"])
def test_datasets_deterministic(name):
    a, b = dataset(name, 500, seed=3), dataset(name, 500, seed=3)
    assert a.shape == (500, 2) and np.array_equal(a, b)
    assert not np.array_equal(a, dataset(name, 500, seed=4))


def test_eight_gaussians_has_eight_modes():
    pts = dataset("8gaussians", 4000, seed=0)
    centers = ring_centers()
    nearest = np.argmin(((pts[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
    counts = np.bincount(nearest, minlength=8)
    assert (counts > 4000 / 8 * 0.7).all()


def test_checkerboard_occupies_alternate_cells():
    pts = dataset("checkerboard", 4000, seed=0)
    cells = np.floor(pts + 2.0).astype(int)
    assert ((cells[:, 0] + cells[:, 1]) % 2 == 0).all()


def test_unknown_dataset():
    with pytest.raises(DataError):
        dataset("spirals", 10)


def test_embed_zero_pads():
    x = np.array([[1.0, 2.0]])
    assert np.array_equal(embed(x, 4), [[1.0, 2.0, 0.0, 0.0]])
    with pytest.raises(DataError):
        embed(np.ones((1, 5)), 4)


def test_ingest_csv_with_header(tmp_path):
    p = tmp_path / "pts.csv"
    p.write_text("x,y\n1,2\n3.5,-4\n")
    assert np.array_equal(ingest_csv(p), [[1.0, 2.0], [3.5, -4.0]])


@pytest.mark.parametrize("body, line", [("1,2\n3\n", 2), ("1,2\n3,abc\n", 2), ("1,2\n1,2\nnan,1\n", 3)])
def test_ingest_csv_names_bad_line(tmp_path, body, line):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(DataError, match=f":{line}:"):
        ingest_csv(p)


def test_ingest_csv_empty(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("x,y\n")
    with pytest.raises(DataError):
        ingest_csv(p)
