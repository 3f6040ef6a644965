import numpy as np
import pytest

from astra.adapter import (
    AdapterParams,
    HeadParams,
    dsm_forward,
    grad_check,
    head_gradients,
    hierarchical_offsets,
    init_adapter_params,
    init_head,
    load_adapter_params,
    load_visual_features,
    max_relative_error,
    modulate,
    save_adapter_params,
)
from astra.errors import ValidationError

from oracles import naive_dsm

L, M, D_TEXT, D_VIS, D_ATTN = 3, 4, 8, 5, 6


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture()
def instance(rng):
    text_emb = rng.normal(size=(L, D_TEXT))
    visual = rng.normal(size=(M, D_VIS))
    head = init_head(rng, D_TEXT, D_VIS, D_ATTN, zero_output=False)
    return text_emb, visual, head


def fd_loss_grad(fn, array, step=1e-5):
    """Central-difference gradient of a scalar function, coordinate by coordinate."""
    grad = np.zeros_like(array)
    flat, gflat = array.reshape(-1), grad.reshape(-1)
    for n in range(flat.size):
        original = flat[n]
        flat[n] = original + step
        hi = fn()
        flat[n] = original - step
        lo = fn()
        flat[n] = original
        gflat[n] = (hi - lo) / (2 * step)
    return grad


class TestForward:
    def test_zero_init_gives_exact_zero_offset(self, rng):
        head = init_head(rng, D_TEXT, D_VIS, D_ATTN, zero_output=True)
        delta = dsm_forward(rng.normal(size=(L, D_TEXT)), rng.normal(size=(M, D_VIS)), head)
        assert (delta == 0.0).all()

    def test_single_visual_token_attends_uniformly(self, rng):
        head = init_head(rng, D_TEXT, D_VIS, D_ATTN, zero_output=False)
        text_emb = rng.normal(size=(L, D_TEXT))
        visual = rng.normal(size=(1, D_VIS))
        delta = dsm_forward(text_emb, visual, head)
        expected_row = (visual @ head.wv)[0] @ head.wo
        for row in delta:
            np.testing.assert_allclose(row, expected_row, atol=1e-12)

    def test_matches_dense_oracle(self, instance):
        text_emb, visual, head = instance
        delta = dsm_forward(text_emb, visual, head)
        expected = naive_dsm(
            text_emb.tolist(), visual.tolist(),
            head.wq.tolist(), head.wk.tolist(), head.wv.tolist(), head.wo.tolist(),
        )
        np.testing.assert_allclose(delta, np.asarray(expected), atol=1e-6)

    def test_shape_mismatch(self, instance):
        text_emb, visual, head = instance
        with pytest.raises(ValidationError):
            dsm_forward(text_emb[:, :4], visual, head)
        with pytest.raises(ValidationError):
            dsm_forward(text_emb, visual[:, :2], head)

    def test_permutation_equivariance_over_text_rows(self, instance):
        text_emb, visual, head = instance
        perm = [2, 0, 1]
        delta = dsm_forward(text_emb, visual, head)
        delta_perm = dsm_forward(text_emb[perm], visual, head)
        np.testing.assert_allclose(delta_perm, delta[perm], atol=1e-12)

    def test_offset_rank_bounded_by_visual_tokens(self, rng):
        head = init_head(rng, D_TEXT, D_VIS, d_attn=D_ATTN, zero_output=False)
        text_emb = rng.normal(size=(6, D_TEXT))
        visual = rng.normal(size=(2, D_VIS))
        delta = dsm_forward(text_emb, visual, head)
        assert np.linalg.matrix_rank(delta, tol=1e-9) <= 2

    def test_accepts_adapter_params_wrapper(self, rng):
        params = init_adapter_params(rng, D_TEXT, D_VIS, D_ATTN, n_layers=0, zero_output=False)
        text_emb = rng.normal(size=(L, D_TEXT))
        visual = rng.normal(size=(M, D_VIS))
        np.testing.assert_array_equal(
            dsm_forward(text_emb, visual, params),
            dsm_forward(text_emb, visual, params.base),
        )


class TestModulate:
    def test_zero_offset_is_bitwise_identity(self, rng):
        text_emb = rng.normal(size=(L, D_TEXT))
        out = modulate(text_emb, np.zeros_like(text_emb))
        assert (out == text_emb).all()

    def test_zero_text_returns_offset(self, rng):
        delta = rng.normal(size=(L, D_TEXT))
        np.testing.assert_array_equal(modulate(np.zeros((L, D_TEXT)), delta), delta)

    def test_elementwise_sum(self, rng):
        a, b = rng.normal(size=(L, D_TEXT)), rng.normal(size=(L, D_TEXT))
        out = modulate(a, b)
        for l in range(L):
            for d in range(D_TEXT):
                assert out[l, d] == a[l, d] + b[l, d]

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValidationError):
            modulate(rng.normal(size=(3, 8)), rng.normal(size=(3, 7)))

    def test_zero_init_end_to_end_identity(self, rng):
        head = init_head(rng, D_TEXT, D_VIS, D_ATTN, zero_output=True)
        text_emb = rng.normal(size=(L, D_TEXT))
        visual = rng.normal(size=(M, D_VIS))
        out = modulate(text_emb, dsm_forward(text_emb, visual, head))
        assert (out == text_emb).all()


class TestHierarchical:
    def test_zero_init_single_layer(self, rng):
        params = init_adapter_params(rng, D_TEXT, D_VIS, D_ATTN, n_layers=1)
        text_emb = rng.normal(size=(L, D_TEXT))
        visual = rng.normal(size=(M, D_VIS))
        global_delta, layer_deltas = hierarchical_offsets(text_emb, visual, params, 1)
        assert (global_delta == 0.0).all()
        assert len(layer_deltas) == 1 and (layer_deltas[0] == 0.0).all()

    def test_shape_contract_four_layers(self, rng):
        params = init_adapter_params(rng, D_TEXT, D_VIS, D_ATTN, n_layers=4)
        text_emb = rng.normal(size=(L, D_TEXT))
        visual = rng.normal(size=(M, D_VIS))
        global_delta, layer_deltas = hierarchical_offsets(text_emb, visual, params, 4)
        assert global_delta.shape == (L, D_TEXT)
        assert len(layer_deltas) == 4
        assert all(delta.shape == (L, D_TEXT) for delta in layer_deltas)

    def test_distinct_heads_give_distinct_offsets(self, rng):
        params = init_adapter_params(rng, D_TEXT, D_VIS, D_ATTN, n_layers=3, zero_output=False)
        text_emb = rng.normal(size=(L, D_TEXT))
        visual = rng.normal(size=(M, D_VIS))
        _, layer_deltas = hierarchical_offsets(text_emb, visual, params, 3)
        for a in range(3):
            for b in range(a + 1, 3):
                assert np.abs(layer_deltas[a] - layer_deltas[b]).max() > 1e-6

    def test_layer_count_validation(self, rng):
        params = init_adapter_params(rng, D_TEXT, D_VIS, D_ATTN, n_layers=2)
        text_emb = rng.normal(size=(L, D_TEXT))
        visual = rng.normal(size=(M, D_VIS))
        with pytest.raises(ValidationError):
            hierarchical_offsets(text_emb, visual, params, 0)
        with pytest.raises(ValidationError):
            hierarchical_offsets(text_emb, visual, params, 3)


class TestGradients:
    def test_modulate_gradient_is_exact(self, rng):
        text_emb = rng.normal(size=(L, D_TEXT))
        delta = rng.normal(size=(L, D_TEXT))
        assert grad_check("modulate", (text_emb, delta)) < 1e-9

    def test_dsm_forward_gradient(self, instance):
        text_emb, visual, head = instance
        assert grad_check("dsm_forward", (text_emb, visual), head) < 1e-4

    def test_piecewise_against_test_side_fd(self, instance):
        text_emb, visual, head = instance
        delta = dsm_forward(text_emb, visual, head)
        grads = head_gradients(text_emb, visual, head, 2.0 * delta)
        wq = head.wq.copy()

        def loss():
            current = HeadParams(wq, head.wk, head.wv, head.wo)
            out = dsm_forward(text_emb, visual, current)
            return float((out * out).sum())

        numeric = fd_loss_grad(loss, wq)
        assert max_relative_error(grads.wq, numeric) < 1e-4

    def test_corrupted_gradient_detected(self, instance):
        text_emb, visual, head = instance
        delta = dsm_forward(text_emb, visual, head)
        grads = head_gradients(text_emb, visual, head, 2.0 * delta)
        visual_fixed = visual.copy()

        def loss():
            out = dsm_forward(text_emb, visual_fixed, head)
            return float((out * out).sum())

        numeric = fd_loss_grad(loss, visual_fixed)
        corrupted = grads.visual.copy()
        worst = np.unravel_index(np.abs(corrupted).argmax(), corrupted.shape)
        corrupted[worst] *= 1.1
        assert max_relative_error(corrupted, numeric) >= 1e-2

    def test_non_finite_inputs_rejected(self, instance):
        text_emb, visual, head = instance
        bad = text_emb.copy()
        bad[0, 0] = np.nan
        with pytest.raises(ValidationError):
            grad_check("dsm_forward", (bad, visual), head)

    def test_unknown_op(self, instance):
        text_emb, visual, _head = instance
        with pytest.raises(ValidationError):
            grad_check("softmax", (text_emb, visual))


class TestPersistence:
    def test_checkpoint_round_trip(self, tmp_path, rng):
        params = init_adapter_params(rng, D_TEXT, D_VIS, D_ATTN, n_layers=2, zero_output=False)
        path = tmp_path / "adapter.npz"
        save_adapter_params(path, params)
        loaded = load_adapter_params(path)
        np.testing.assert_array_equal(loaded.base.wq, params.base.wq)
        np.testing.assert_array_equal(loaded.layer_heads[1].wo, params.layer_heads[1].wo)
        assert len(loaded.layer_heads) == 2

    def test_visual_features_jsonl(self, tmp_path):
        path = tmp_path / "feats.jsonl"
        path.write_text("[1.0, 2.0, 3.0]\n[4.0, 5.0, 6.0]\n", encoding="utf-8")
        feats = load_visual_features(path)
        np.testing.assert_array_equal(feats, [[1, 2, 3], [4, 5, 6]])

    def test_visual_features_raw_block(self, tmp_path, rng):
        path = tmp_path / "feats.bin"
        data = rng.normal(size=(3, 5)).astype("<f4")
        with open(path, "wb") as fh:
            fh.write(np.array([3, 5], dtype="<u4").tobytes())
            fh.write(data.tobytes())
        feats = load_visual_features(path)
        np.testing.assert_allclose(feats, data.astype(np.float64), atol=0)

    def test_truncated_raw_block(self, tmp_path):
        path = tmp_path / "feats.bin"
        with open(path, "wb") as fh:
            fh.write(np.array([4, 4], dtype="<u4").tobytes())
            fh.write(b"\x00" * 10)
        with pytest.raises(ValidationError, match="truncated"):
            load_visual_features(path)
