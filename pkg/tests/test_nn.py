import numpy as np
import pytest

from movrptw import nn
from movrptw.nn import autodiff


def f64(x):
    return nn.as_tensor(np.asarray(x, dtype=np.float64))


def check_fn(build, store, n=40, tol=1e-3, seed=0):
    report = nn.grad_check(build, store, n_params=n, tol=tol,
                           rng=np.random.default_rng(seed))
    assert report.passed, f"max rel error {report.max_rel_error:.3e}"
    return report


class TestLinear:
    def test_identity(self):
        w = f64(np.eye(3))
        b = f64(np.zeros(3))
        x = f64([[1.0, 2.0, 3.0]])
        assert np.allclose(nn.linear(x, w, b).data, [[1, 2, 3]])

    def test_hand_example(self):
        # W rows act on x: y = W x
        w = f64([[1.0, 1.0], [0.0, 1.0]])
        b = f64([0.0, 0.0])
        x = f64([[1.0, 2.0]])
        assert np.allclose(nn.linear(x, w, b).data, [[3.0, 2.0]])

    def test_bias_gradient_is_ones(self):
        store = nn.ParamStore(dtype=np.float64)
        store.add_param("w", np.zeros((3, 2)))
        store.add_param("b", np.zeros(3))
        x = np.array([[0.3, -0.7], [1.1, 0.4]])
        with nn.Tape() as tape:
            y = nn.linear(nn.as_tensor(x), store["w"], store["b"])
            loss = nn.sum_(y)
            tape.backward(loss)
        assert np.allclose(store["b"].grad, [2.0, 2.0, 2.0])  # two rows summed

    def test_gradcheck(self):
        rng = np.random.default_rng(3)
        store = nn.ParamStore(dtype=np.float32)
        store.add_param("w", rng.normal(size=(4, 5)).astype(np.float32))
        store.add_param("b", rng.normal(size=4).astype(np.float32))
        x = rng.normal(size=(7, 5))

        def build(s):
            return nn.sum_(nn.tanh(nn.linear(nn.as_tensor(x, s.dtype), s["w"], s["b"])))
        check_fn(build, store)


class TestMaskedSoftmax:
    def test_mask_dominance(self):
        probs = nn.masked_softmax(f64([[1.0, 1.0]]), np.array([[0, 1]])).data
        assert probs[0, 1] < 1e-6
        assert probs[0, 0] == pytest.approx(1.0)

    def test_uniform(self):
        probs = nn.masked_softmax(f64([[0.0, 0.0, 0.0]]), np.zeros((1, 3))).data
        assert np.allclose(probs, 1 / 3)

    def test_analytic(self):
        probs = nn.masked_softmax(f64([[np.log(2.0), 0.0]]), np.zeros((1, 2))).data
        assert np.allclose(probs, [[2 / 3, 1 / 3]])

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(50, 9)) * 5
        mask = rng.random((50, 9)) < 0.4
        mask[:, 0] = False
        probs = nn.masked_softmax(f64(logits), mask).data
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-5)
        assert probs[mask].max() < 1e-6

    def test_all_masked_raises(self):
        with pytest.raises(nn.MaskError):
            nn.masked_softmax(f64([[1.0, 1.0]]), np.array([[1, 1]]))

    def test_small_negative_rejected(self):
        with pytest.raises(ValueError):
            nn.masked_softmax(f64([[1.0]]), np.array([[0]]), big_negative=-10.0)


class TestBatchNorm:
    def _stats(self, d):
        return np.zeros(d), np.ones(d)

    def test_two_point_feature(self):
        rm, rv = self._stats(1)
        x = f64([[1.0], [3.0]])
        out = nn.batch_norm(x, f64(np.ones(1)), f64(np.zeros(1)), rm, rv, mode="train")
        assert np.allclose(out.data, [[-1.0], [1.0]], atol=1e-2)

    def test_gamma_zero_collapses_to_beta(self):
        rm, rv = self._stats(4)
        x = f64(np.random.default_rng(0).normal(size=(6, 4)))
        out = nn.batch_norm(x, f64(np.zeros(4)), f64(np.full(4, 0.7)), rm, rv, mode="train")
        assert np.allclose(out.data, 0.7)

    def test_infer_mode_pure(self):
        rm, rv = np.array([0.3]), np.array([2.0])
        x = f64([[1.0], [2.0]])
        a = nn.batch_norm(x, f64(np.ones(1)), f64(np.zeros(1)), rm, rv, mode="infer").data
        b = nn.batch_norm(x, f64(np.ones(1)), f64(np.zeros(1)), rm, rv, mode="infer").data
        assert np.array_equal(a, b)
        assert np.array_equal(rm, [0.3]) and np.array_equal(rv, [2.0])

    def test_train_normalizes_batch_and_nodes(self):
        rng = np.random.default_rng(1)
        x = rng.normal(loc=3.0, scale=2.5, size=(8, 5, 6))
        rm, rv = self._stats(6)
        out = nn.batch_norm(f64(x), f64(np.ones(6)), f64(np.zeros(6)), rm, rv,
                            mode="train").data
        flat = out.reshape(-1, 6)
        assert np.abs(flat.mean(axis=0)).max() < 1e-4
        assert np.abs(flat.var(axis=0) - 1.0).max() < 1e-3

    def test_population_of_one_rejected(self):
        rm, rv = self._stats(2)
        with pytest.raises(ValueError):
            nn.batch_norm(f64([[1.0, 2.0]]), f64(np.ones(2)), f64(np.zeros(2)),
                          rm, rv, mode="train")

    def test_running_stats_update(self):
        rm, rv = np.zeros(1), np.ones(1)
        x = f64([[4.0], [6.0]])
        nn.batch_norm(x, f64(np.ones(1)), f64(np.zeros(1)), rm, rv, mode="train",
                      momentum=0.1, update_stats=True)
        assert rm[0] == pytest.approx(0.5)          # 0.9*0 + 0.1*5
        assert rv[0] == pytest.approx(0.9 + 0.1)    # var = 1.0

    def test_gradcheck_train_mode(self):
        rng = np.random.default_rng(5)
        store = nn.ParamStore(dtype=np.float32)
        store.add_param("g", rng.normal(size=3).astype(np.float32))
        store.add_param("b", rng.normal(size=3).astype(np.float32))
        store.add_param("w", rng.normal(size=(3, 3)).astype(np.float32))
        x = rng.normal(size=(6, 3))
        rm, rv = np.zeros(3), np.ones(3)

        def build(s):
            h = nn.linear(nn.as_tensor(x, s.dtype), s["w"])
            y = nn.batch_norm(h, s["g"], s["b"], rm.astype(s.dtype), rv.astype(s.dtype),
                              mode="train", update_stats=False)
            return nn.sum_(nn.tanh(y))
        check_fn(build, store)


class TestAttention:
    def test_zero_query_averages_values(self):
        rng = np.random.default_rng(2)
        v = rng.normal(size=(1, 5, 8))
        att = nn.softmax(nn.as_tensor(np.zeros((1, 5, 5))), axis=-1)
        out = nn.matmul(att, nn.as_tensor(v)).data
        assert np.allclose(out, v.mean(axis=1, keepdims=True))

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        q = rng.normal(size=(2, 4, 8))
        k = rng.normal(size=(2, 4, 8))
        att = nn.softmax(nn.matmul(nn.as_tensor(q), nn.permute(nn.as_tensor(k), (0, 2, 1))),
                         axis=-1).data
        assert np.allclose(att.sum(axis=-1), 1.0)


class TestOpsGradients:
    """Central-difference checks for each differentiable op."""

    def _store_with(self, name, arr):
        store = nn.ParamStore(dtype=np.float32)
        store.add_param(name, arr.astype(np.float32))
        return store

    @pytest.mark.parametrize("opname", [
        "add", "mul", "matmul", "concat", "softmax", "gather", "permute",
        "reshape", "relu", "tanh", "log", "mean",
    ])
    def test_op(self, opname):
        rng = np.random.default_rng(hash(opname) % 2 ** 31)
        a = rng.normal(size=(3, 4))
        store = self._store_with("p", a)
        other = rng.normal(size=(3, 4))
        mat = rng.normal(size=(4, 3))
        idx = np.array([2, 0, 1])

        def build(s):
            p = s["p"]
            if opname == "add":
                y = nn.add(p, nn.as_tensor(other, s.dtype))
            elif opname == "mul":
                y = nn.mul(p, nn.as_tensor(other, s.dtype))
            elif opname == "matmul":
                y = nn.matmul(p, nn.as_tensor(mat, s.dtype))
            elif opname == "concat":
                y = nn.concat([p, nn.as_tensor(other, s.dtype)], axis=1)
            elif opname == "softmax":
                y = nn.softmax(p, axis=-1)
            elif opname == "gather":
                y = nn.gather_cols(p, idx)
            elif opname == "permute":
                y = nn.permute(p, (1, 0))
            elif opname == "reshape":
                y = nn.reshape(p, (2, 6))
            elif opname == "relu":
                y = nn.relu(p)
            elif opname == "tanh":
                y = nn.tanh(p)
            elif opname == "log":
                y = nn.log(nn.add_const(nn.mul(p, p), 1.0))
            elif opname == "mean":
                y = nn.mean(p, axis=1)
            return nn.sum_(nn.mul(y, nn.as_tensor(np.ones_like(y.data))))
        check_fn(build, store, n=12)

    def test_corrupted_backward_detected(self, monkeypatch):
        # flip the sign of tanh's backward: the check must fail
        original = autodiff.tanh

        def bad_tanh(a):
            y = np.tanh(a.data)
            out = autodiff.Tensor(y)

            def back(g):
                autodiff._acc(a, -g * (1.0 - y * y))
            autodiff._record(out, back)
            return out

        rng = np.random.default_rng(9)
        store = nn.ParamStore(dtype=np.float32)
        store.add_param("p", rng.normal(size=(3, 3)).astype(np.float32))

        def build(s):
            return nn.sum_(bad_tanh(s["p"]))
        report = nn.grad_check(build, store, n_params=5, rng=np.random.default_rng(0))
        assert not report.passed


class TestAdam:
    def test_first_step_magnitude(self):
        store = nn.ParamStore(dtype=np.float32)
        p = store.add_param("x", np.array([1.0], dtype=np.float32))
        p.grad = np.array([1.0], dtype=np.float32)
        store.adam_step(lr=1e-4)
        assert p.data[0] == pytest.approx(1.0 - 1e-4, abs=1e-7)

    def test_zero_gradient_no_move(self):
        store = nn.ParamStore(dtype=np.float32)
        p = store.add_param("x", np.array([2.0], dtype=np.float32))
        p.grad = np.zeros(1, dtype=np.float32)
        store.adam_step(lr=1e-2)
        assert p.data[0] == 2.0

    def test_decay_halves_lr_at_1e6(self):
        store = nn.ParamStore(dtype=np.float32)
        store.add_param("x", np.array([0.0], dtype=np.float32))
        store.step_count = 10 ** 6 - 1
        lr_t = store.adam_step(lr=1e-4, decay=1e-6)
        assert lr_t == pytest.approx(0.5e-4)

    def test_nonfinite_gradient_names_param(self):
        store = nn.ParamStore(dtype=np.float32)
        p = store.add_param("w.bad", np.zeros(2, dtype=np.float32))
        p.grad = np.array([np.nan, 0.0], dtype=np.float32)
        with pytest.raises(nn.GradientError, match="w.bad"):
            store.adam_step(lr=1e-4)

    def test_grads_cleared_after_step(self):
        store = nn.ParamStore(dtype=np.float32)
        p = store.add_param("x", np.zeros(2, dtype=np.float32))
        p.grad = np.ones(2, dtype=np.float32)
        store.adam_step(lr=1e-3)
        assert p.grad is None


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        store = nn.ParamStore(dtype=np.float32)
        store.add_param("a.w", rng.normal(size=(3, 2)).astype(np.float32))
        store.add_param("a.b", rng.normal(size=3).astype(np.float32))
        store.add_buffer("bn.mean", rng.normal(size=3).astype(np.float32))
        store._m["a.w"] += 0.5
        store.step_count = 17
        meta = {"config": {"epochs": 2}, "epoch": 1, "seed": 9}
        path = tmp_path / "model.ckpt"
        nn.save_checkpoint(path, store, meta)
        back, meta2 = nn.load_checkpoint(path)
        assert meta2 == meta
        assert back.step_count == 17
        for name in store.params:
            assert np.array_equal(back[name].data, store[name].data)
        assert np.array_equal(back.buffers["bn.mean"], store.buffers["bn.mean"])
        assert np.array_equal(back._m["a.w"], store._m["a.w"])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\0" * 32)
        with pytest.raises(nn.CheckpointError, match="magic"):
            nn.load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        rng = np.random.default_rng(4)
        store = nn.ParamStore(dtype=np.float32)
        store.add_param("w", rng.normal(size=(8, 8)).astype(np.float32))
        path = tmp_path / "model.ckpt"
        nn.save_checkpoint(path, store, {})
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(nn.CheckpointError, match="truncated"):
            nn.load_checkpoint(path)


class TestTapeSemantics:
    def test_no_tape_means_no_recording(self):
        x = f64([[1.0, 2.0]])
        y = nn.tanh(x)
        assert y.grad is None and x.grad is None

    def test_gradient_accumulates_across_uses(self):
        store = nn.ParamStore(dtype=np.float64)
        p = store.add_param("x", np.array([3.0]))
        with nn.Tape() as tape:
            y = nn.add(nn.mul(p, p), p)  # x^2 + x, dy/dx = 2x + 1 = 7
            tape.backward(nn.sum_(y))
        assert p.grad[0] == pytest.approx(7.0)

    def test_forward_deterministic(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(4, 4))
        a = nn.softmax(nn.tanh(f64(x)), axis=-1).data
        b = nn.softmax(nn.tanh(f64(x)), axis=-1).data
        assert np.array_equal(a, b)
