import numpy as np
import pytest

from op_cases import OPS, gradcheck_op
from nursesched import numcore as nc
from nursesched.numcore import ParamStore, Tensor
from nursesched.rng import Rng


@pytest.mark.parametrize("op", OPS)
def test_gradients_match_finite_differences(op):
    for seed in range(5):
        assert gradcheck_op(op, seed) < 1e-4


def test_matmul_examples_and_errors():
    m = np.arange(6.0).reshape(2, 3)
    assert (nc.matmul(np.eye(2), m).data == m).all()
    assert nc.matmul(np.array([[2.0]]), np.array([[3.0]])).data.tolist() == [[6.0]]
    with pytest.raises(nc.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        nc.matmul(m, m)
    assert gradcheck_op("matmul", 11) < 1e-6


def test_masked_softmax_properties():
    rng = np.random.default_rng(0)
    for _ in range(50):
        logits = rng.normal(size=(4, 9)) * 10
        mask = rng.random((4, 9)) < 0.5
        mask[np.arange(4), rng.integers(0, 9, 4)] = True
        p = nc.masked_softmax(Tensor(logits), mask).data
        assert (p >= 0).all() and (p[~mask] == 0).all()
        assert np.abs(p.sum(axis=-1) - 1).max() <= 1e-12
        lp = nc.masked_log_softmax(Tensor(logits), mask).data
        assert np.isneginf(lp[~mask]).all()
        assert np.allclose(np.exp(lp[mask]), p[mask], rtol=1e-12, atol=0)
    one = nc.masked_softmax(Tensor([3.0, 1.0, 2.0]), [False, True, False]).data
    assert one.tolist() == [0.0, 1.0, 0.0]
    uni = nc.masked_softmax(Tensor(np.zeros(5)), [True, True, False, True, False]).data
    assert np.allclose(uni, [1 / 3, 1 / 3, 0, 1 / 3, 0], rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        nc.masked_softmax(Tensor(np.zeros(3)), [False] * 3)


def test_masked_entries_get_no_gradient():
    x = Tensor(np.random.default_rng(1).normal(size=6), requires_grad=True)
    mask = np.array([1, 0, 1, 1, 0, 1], dtype=bool)
    lp = nc.masked_log_softmax(x, mask)
    nc.backward(nc.where(mask, lp, 0.0).sum() + nc.masked_softmax(x, mask)[2])
    assert (x.grad[~mask] == 0).all()


def test_layer_norm_normalises_rows():
    x = np.random.default_rng(2).normal(size=(6, 16)) * 5 + 3
    y = nc.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    assert np.abs(y.mean(axis=-1)).max() < 1e-9
    assert np.abs(y.var(axis=-1) * (1 + 1e-5 / x.var(axis=-1)) - 1).max() < 1e-9
    const = nc.layer_norm(Tensor(np.full((1, 4), 7.0)), Tensor(np.ones(4)), Tensor(np.zeros(4))).data
    assert (const == 0).all()


def test_mean_pool_examples():
    x = Tensor(np.array([[[0.0], [2.0], [100.0]]]))
    assert nc.mean_pool(x, [[True, True, False]]).data.tolist() == [[1.0]]
    assert nc.mean_pool(x, [[False, True, False]]).data.tolist() == [[2.0]]
    with pytest.raises(ValueError):
        nc.mean_pool(x, [[False, False, False]])


def test_backward_accumulates_shared_subexpressions():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    nc.backward((x + x).sum())
    assert x.grad.tolist() == [2.0, 2.0]
    nc.backward((x * x).sum())  # second call accumulates into .grad
    assert x.grad.tolist() == [5.0, -2.0]


def test_backward_simple_cases():
    w = Tensor(np.ones((2, 3)), requires_grad=True)
    nc.backward(w.sum())
    assert (w.grad == 1).all()
    w.zero_grad()
    nc.backward((w * 0.0).sum())
    assert (w.grad == 0).all()
    with pytest.raises(ValueError):
        nc.backward(w * 2.0)


def test_no_grad_records_nothing():
    w = Tensor(np.ones(3), requires_grad=True)
    with nc.no_grad():
        y = (w * 2.0).sum()
    assert not y.requires_grad


def _scalar_store(value, grad):
    s = ParamStore()
    s.add("x", np.array(value))
    s["x"].grad = np.array(grad)
    return s


def test_adam_matches_hand_computation():
    s = _scalar_store(1.0, 0.5)
    s.m["x"][...] = 0.2
    s.v["x"][...] = 0.01
    s.step = 3
    nc.adam_step(s, lr=0.1, clip_norm=None)
    m = 0.9 * 0.2 + 0.1 * 0.5
    v = 0.999 * 0.01 + 0.001 * 0.25
    mhat, vhat = m / (1 - 0.9**4), v / (1 - 0.999**4)
    assert abs(s["x"].data - (1.0 - 0.1 * mhat / (np.sqrt(vhat) + 1e-8))) < 1e-15
    assert s.step == 4


def test_adam_zero_gradients_leave_parameters_unchanged():
    s = ParamStore()
    s.add("a", np.arange(4.0))
    s["a"].grad = np.zeros(4)
    nc.adam_step(s)
    assert s["a"].data.tolist() == [0.0, 1.0, 2.0, 3.0]


def test_global_norm_clipping_scales_gradient():
    clipped, ref = _scalar_store(0.0, 10.0), _scalar_store(0.0, 1.0)
    norm = nc.adam_step(clipped, lr=1e-3, clip_norm=1.0)
    nc.adam_step(ref, lr=1e-3, clip_norm=None)
    assert norm == 10.0
    assert clipped.m["x"] == ref.m["x"] and clipped.v["x"] == ref.v["x"]


def test_non_finite_gradient_names_parameter():
    s = ParamStore()
    s.add("layer0.attn.q.W", np.zeros(2))
    s["layer0.attn.q.W"].grad = np.array([0.0, np.nan])
    with pytest.raises(nc.TrainingError, match="layer0.attn.q.W"):
        nc.adam_step(s)


def test_checkpoint_roundtrip(tmp_path):
    rng = Rng(0)
    s = ParamStore()
    s.add("w", nc.glorot_uniform(rng, 3, 4, (3, 4)))
    s.add("b", np.zeros(4))
    s.add("scalar", np.array(0.25))
    s["w"].grad = np.ones((3, 4))
    nc.adam_step(s)
    nc.save_checkpoint(s, tmp_path / "c.bin", {"epoch": 3})
    t, meta = nc.load_checkpoint(tmp_path / "c.bin")
    assert meta == {"epoch": 3} and t.step == s.step
    assert t.describe() == s.describe()
    for name, p in s:
        assert p.data.tobytes() == t[name].data.tobytes()
        assert s.m[name].tobytes() == t.m[name].tobytes() and s.v[name].tobytes() == t.v[name].tobytes()
    raw = (tmp_path / "c.bin").read_bytes()
    assert raw[:8] == nc.MAGIC
    (tmp_path / "bad.bin").write_bytes(b"garbage!" + raw[8:])
    with pytest.raises(ValueError):
        nc.load_checkpoint(tmp_path / "bad.bin")


def test_param_store_rejects_duplicates_and_initialisers_are_seeded():
    s = ParamStore()
    s.add("x", np.zeros(1))
    with pytest.raises(KeyError):
        s.add("x", np.zeros(1))
    a = nc.glorot_uniform(Rng(1), 10, 20, (10, 20))
    assert (a == nc.glorot_uniform(Rng(1), 10, 20, (10, 20))).all()
    assert np.abs(a).max() <= np.sqrt(6 / 30)
    z = nc.normal_init(Rng(2), (50, 40), 0.02)
    assert abs(z.std() - 0.02) < 0.002
