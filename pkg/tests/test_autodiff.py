"""Reverse-mode autodiff core: op gradients vs central finite differences,
optimizer arithmetic, checkpoint byte format."""

import math

import numpy as np
import pytest

import docgraph.autodiff as ad
from docgraph.autodiff import (
    AutodiffError,
    NonFiniteError,
    ParamStore,
    Tensor,
    adamw_step,
    load_checkpoint,
    save_checkpoint,
)

EPS = 1e-6


def fd_check(build, leaves, rel_tol=1e-6, abs_tol=1e-9):
    """Compare analytic gradients of ``build(leaves) -> scalar Tensor``
    against central finite differences on every leaf coordinate."""
    out = build(*leaves)
    assert out.data.shape == ()
    out.backward()
    for leaf in leaves:
        assert leaf.grad is not None, "missing gradient"
        grad = leaf.grad.copy()
        it = np.nditer(leaf.data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = leaf.data[idx]
            leaf.data[idx] = orig + EPS
            hi = float(build(*leaves).data)
            leaf.data[idx] = orig - EPS
            lo = float(build(*leaves).data)
            leaf.data[idx] = orig
            num = (hi - lo) / (2 * EPS)
            ana = grad[idx]
            assert abs(num - ana) <= abs_tol + rel_tol * max(abs(num), abs(ana)), (
                f"grad mismatch at {idx}: analytic {ana}, numeric {num}"
            )


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape))


class TestBackwardMechanics:
    def test_backward_requires_scalar(self):
        t = Tensor(np.ones((2, 2)))
        with pytest.raises(AutodiffError):
            t.backward()

    def test_simple_chain(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]))
        y = ad.sum_all(ad.relu(x))
        y.backward()
        np.testing.assert_array_equal(x.grad, [1.0, 0.0, 1.0])

    def test_diamond_accumulates(self):
        # the same tensor used twice must receive both contributions
        x = Tensor(np.array([2.0]))
        y = ad.sum_all(ad.add(x, x))
        y.backward()
        np.testing.assert_array_equal(x.grad, [2.0])

    def test_grad_accumulates_across_backwards(self):
        x = Tensor(np.array([1.0]))
        ad.sum_all(x).backward()
        ad.sum_all(x).backward()
        np.testing.assert_array_equal(x.grad, [2.0])
        x.zero_grad()
        assert x.grad is None

    def test_deep_chain_iterative(self):
        # would blow the recursion limit with a recursive backward
        x = Tensor(np.array([0.5]))
        y = x
        for _ in range(5000):
            y = ad.scale(y, 1.0)
        ad.sum_all(y).backward()
        np.testing.assert_array_equal(x.grad, [1.0])


class TestOpGradients:
    def test_matmul(self):
        rng = np.random.default_rng(0)
        a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
        fd_check(lambda a, b: ad.sum_all(ad.matmul(a, b)), [a, b])

    def test_add_same_shape(self):
        rng = np.random.default_rng(1)
        a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
        fd_check(lambda a, b: ad.sum_all(ad.add(a, b)), [a, b])

    def test_add_bias_broadcast(self):
        rng = np.random.default_rng(2)
        a, b = leaf(rng, 3, 4), leaf(rng, 4)
        fd_check(lambda a, b: ad.sum_all(ad.add(a, b)), [a, b])

    def test_scale(self):
        rng = np.random.default_rng(3)
        a = leaf(rng, 5)
        fd_check(lambda a: ad.sum_all(ad.scale(a, -2.5)), [a])

    def test_concat(self):
        rng = np.random.default_rng(4)
        parts = [leaf(rng, 3, 2), leaf(rng, 3, 4), leaf(rng, 3, 1)]
        fd_check(lambda *p: ad.sum_all(ad.relu(ad.concat(list(p)))), parts)

    def test_relu_away_from_kink(self):
        a = Tensor(np.array([[1.0, -1.0, 0.5, -0.5]]))
        fd_check(lambda a: ad.sum_all(ad.relu(a)), [a])

    def test_softmax_rows(self):
        rng = np.random.default_rng(5)
        a = leaf(rng, 4, 3)
        w = ad.constant(rng.standard_normal((3, 2)))
        # projecting the softmax keeps its gradient non-trivial (a plain
        # sum would be constant 1 per row)
        fd_check(lambda a: ad.sum_all(ad.relu(ad.matmul(ad.softmax_rows(a), w))), [a])

    def test_gather_rows_with_repeats(self):
        rng = np.random.default_rng(6)
        a = leaf(rng, 4, 3)
        idx = np.array([0, 2, 2, 3, 0])
        fd_check(lambda a: ad.sum_all(ad.relu(ad.gather_rows(a, idx))), [a])

    def test_mean_all(self):
        rng = np.random.default_rng(7)
        a = leaf(rng, 3, 3)
        fd_check(lambda a: ad.mean_all(a), [a])

    def test_cross_entropy_unweighted(self):
        rng = np.random.default_rng(8)
        logits = leaf(rng, 5, 3)
        targets = np.array([0, 2, 1, 1, 0])
        fd_check(lambda t: ad.cross_entropy(t, targets), [logits])

    def test_cross_entropy_weighted(self):
        rng = np.random.default_rng(9)
        logits = leaf(rng, 6, 4)
        targets = np.array([0, 1, 2, 3, 1, 2])
        weights = np.array([0.5, 2.0, 1.0, 4.0])
        fd_check(lambda t: ad.cross_entropy(t, targets, weights), [logits])

    def test_dropout_gradient_with_fixed_mask(self):
        rng_data = np.random.default_rng(10)
        a = leaf(rng_data, 4, 4)

        def build(a):
            # same seed per call keeps the mask fixed for finite differences
            return ad.sum_all(ad.dropout(a, 0.5, True, np.random.default_rng(3)))

        fd_check(build, [a])


class TestOpValues:
    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        s = ad.softmax_rows(Tensor(rng.standard_normal((6, 5)))).data
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
        assert (s > 0).all()

    def test_softmax_stable_for_large_logits(self):
        s = ad.softmax_rows(Tensor(np.array([[1000.0, 1000.0, 999.0]]))).data
        assert np.isfinite(s).all()

    def test_cross_entropy_uniform_logits(self):
        # equal logits: loss is exactly log(C)
        logits = Tensor(np.zeros((7, 4)))
        out = ad.cross_entropy(logits, np.zeros(7, dtype=np.int64))
        assert math.isclose(float(out.data), math.log(4.0), rel_tol=1e-15)

    def test_cross_entropy_weighted_mean_formula(self):
        logits = Tensor(np.array([[2.0, 0.0], [0.0, 3.0]]))
        targets = np.array([0, 1])
        weights = np.array([1.0, 3.0])
        l0 = math.log(1.0 + math.exp(-2.0))
        l1 = math.log(1.0 + math.exp(-3.0))
        expected = (1.0 * l0 + 3.0 * l1) / 4.0
        out = ad.cross_entropy(logits, targets, weights)
        assert math.isclose(float(out.data), expected, rel_tol=1e-12)

    def test_cross_entropy_rejects_bad_targets(self):
        logits = Tensor(np.zeros((2, 3)))
        with pytest.raises(AutodiffError):
            ad.cross_entropy(logits, np.array([0, 3]))
        with pytest.raises(AutodiffError):
            ad.cross_entropy(logits, np.array([-1, 0]))

    def test_dropout_eval_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        np.testing.assert_array_equal(ad.dropout(x, 0.5, False).data, x.data)
        np.testing.assert_array_equal(ad.dropout(x, 0.0, True).data, x.data)

    def test_dropout_inverted_scaling(self):
        x = Tensor(np.ones((1000, 1)))
        out = ad.dropout(x, 0.25, True, np.random.default_rng(0)).data
        kept = out[out != 0.0]
        np.testing.assert_allclose(kept, 1.0 / 0.75)
        assert 600 < kept.size < 900

    def test_dropout_deterministic_under_seed(self):
        x = Tensor(np.ones((10, 10)))
        a = ad.dropout(x, 0.5, True, np.random.default_rng(42)).data
        b = ad.dropout(x, 0.5, True, np.random.default_rng(42)).data
        np.testing.assert_array_equal(a, b)

    def test_concat_rejects_mismatched_rows(self):
        with pytest.raises(AutodiffError):
            ad.concat([Tensor(np.ones((2, 2))), Tensor(np.ones((3, 2)))])

    def test_finite_check_raises(self):
        big = Tensor(np.array([[1e308, 1e308]]))
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            ad.matmul(big, Tensor(np.array([[1e308], [1e308]])))


class TestParamStore:
    def test_kaiming_uniform_bound(self):
        store = ParamStore(seed=0)
        w = store.kaiming_uniform("w", (50, 20))
        bound = math.sqrt(6.0 / 50)
        assert np.abs(w.data).max() <= bound
        assert np.abs(w.data).max() > 0.5 * bound

    def test_deterministic_by_seed(self):
        a = ParamStore(seed=3).kaiming_uniform("w", (10, 10)).data
        b = ParamStore(seed=3).kaiming_uniform("w", (10, 10)).data
        c = ParamStore(seed=4).kaiming_uniform("w", (10, 10)).data
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_duplicate_name_rejected(self):
        store = ParamStore()
        store.zeros("b", (3,))
        with pytest.raises(AutodiffError):
            store.zeros("b", (3,))

    def test_names_sorted(self):
        store = ParamStore()
        store.zeros("z", (1,))
        store.zeros("a", (1,))
        store.zeros("m", (1,))
        assert store.names == ["a", "m", "z"]

    def test_state_dict_round_trip(self):
        store = ParamStore(seed=1)
        store.kaiming_uniform("w", (4, 4))
        state = store.state_dict()
        other = ParamStore(seed=2)
        other.kaiming_uniform("w", (4, 4))
        other.load_state_dict(state)
        np.testing.assert_array_equal(other.params["w"].data, state["w"])

    def test_load_state_dict_shape_mismatch(self):
        store = ParamStore()
        store.zeros("w", (2, 2))
        with pytest.raises(AutodiffError):
            store.load_state_dict({"w": np.zeros((3, 3))})

    def test_zero_grad_clears(self):
        store = ParamStore()
        w = store.zeros("w", (2,))
        ad.sum_all(w).backward()
        assert w.grad is not None
        store.zero_grad()
        assert w.grad is None


class TestAdamW:
    def test_single_step_matches_hand_computation(self):
        store = ParamStore()
        p = store.zeros("p", (1,))
        p.data[:] = 1.0
        p.grad = np.array([0.5])
        adamw_step(store, lr=0.1, weight_decay=0.01)

        # oracle written out from the update rule with plain floats
        m = 0.1 * 0.5
        v = 0.001 * 0.25
        m_hat = m / (1.0 - 0.9)
        v_hat = v / (1.0 - 0.999)
        expected = 1.0 - 0.1 * (m_hat / (math.sqrt(v_hat) + 1e-8) + 0.01 * 1.0)
        assert math.isclose(float(p.data[0]), expected, rel_tol=1e-15)

    def test_two_steps_match_reference_loop(self):
        store = ParamStore()
        p = store.zeros("p", (2,))
        p.data[:] = [1.0, -2.0]
        grads = [np.array([0.3, -0.1]), np.array([-0.2, 0.4])]

        ref = np.array([1.0, -2.0])
        m = np.zeros(2)
        v = np.zeros(2)
        for t, g in enumerate(grads, start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            m_hat = m / (1.0 - 0.9**t)
            v_hat = v / (1.0 - 0.999**t)
            ref = ref - 0.05 * (m_hat / (np.sqrt(v_hat) + 1e-8) + 0.1 * ref)

        for g in grads:
            store.zero_grad()
            p.grad = g.copy()
            adamw_step(store, lr=0.05, weight_decay=0.1)
        np.testing.assert_allclose(p.data, ref, rtol=1e-14)

    def test_decay_is_decoupled_from_gradient(self):
        # zero gradient on one param: only decay moves it
        store = ParamStore()
        p = store.zeros("p", (1,))
        q = store.zeros("q", (1,))
        p.data[:] = 2.0
        q.data[:] = 2.0
        q.grad = np.array([1.0])
        adamw_step(store, lr=0.1, weight_decay=0.5)
        assert math.isclose(float(p.data[0]), 2.0 - 0.1 * 0.5 * 2.0, rel_tol=1e-15)

    def test_step_without_backward_raises(self):
        store = ParamStore()
        store.zeros("p", (1,))
        with pytest.raises(AutodiffError):
            adamw_step(store, lr=0.1)


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        params = {"a.W": rng.standard_normal((3, 4)), "b": rng.standard_normal(2)}
        config = {"kind": "test", "n": 3}
        path = tmp_path / "model.dgc"
        save_checkpoint(path, params, config)
        loaded, loaded_config = load_checkpoint(path)
        assert loaded_config == config
        assert set(loaded) == set(params)
        for name in params:
            np.testing.assert_array_equal(loaded[name], params[name])
            assert loaded[name].dtype == params[name].dtype

    def test_magic_bytes(self, tmp_path):
        path = tmp_path / "model.dgc"
        save_checkpoint(path, {"p": np.zeros(1)}, {})
        assert path.read_bytes()[:8] == b"DGRCKPT1"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.dgc"
        path.write_bytes(b"NOTAMODEL" + b"\x00" * 32)
        with pytest.raises(AutodiffError):
            load_checkpoint(path)

    def test_header_is_json_with_layout(self, tmp_path):
        import json
        import struct

        path = tmp_path / "model.dgc"
        save_checkpoint(path, {"w": np.ones((2, 2), dtype=np.float64)}, {"x": 1})
        raw = path.read_bytes()
        (header_len,) = struct.unpack("<I", raw[8:12])
        header = json.loads(raw[12:12 + header_len])
        assert header["version"] == 1
        assert header["config"] == {"x": 1}
        entry = header["params"][0]
        assert entry["name"] == "w"
        assert entry["shape"] == [2, 2]
        assert entry["dtype"] == "float64"
        assert entry["nbytes"] == 32
