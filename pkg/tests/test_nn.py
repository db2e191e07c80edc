import math

import numpy as np
import pytest

from fullpose import verify
from fullpose.codec import BoxTargets
from fullpose.head import HeadOutput
from fullpose.nn import (
    DenseLayer,
    EmptyGroupError,
    LabelOutOfRangeError,
    MlpParams,
    ProbabilityOutOfRangeError,
    ShapeMismatchError,
    adam_step,
    composite_box_loss,
    cross_entropy,
    focal_loss,
    grad_check,
    init_adam_state,
    init_mlp,
    load_mlps,
    mlp_backward,
    mlp_forward,
    pointnet_aggregate,
    pointnet_backward,
    save_mlps,
    sigmoid,
    smooth_l1,
)


class TestMlpForward:
    def test_identity_network(self):
        params = MlpParams([DenseLayer(np.eye(3), np.zeros(3), "none")])
        x = np.random.default_rng(0).standard_normal((4, 3))
        y, _ = mlp_forward(params, x)
        assert np.array_equal(y, x)

    def test_single_affine_layer(self):
        params = MlpParams([DenseLayer(np.array([[2.0]]), np.array([1.0]), "none")])
        y, _ = mlp_forward(params, np.array([[3.0]]))
        assert y[0, 0] == 7.0

    def test_matches_naive_chain(self):
        rng = np.random.default_rng(1)
        params = init_mlp((4, 6, 5, 2), rng)
        x = rng.standard_normal((7, 4))
        y, _ = mlp_forward(params, x)
        a = x
        for layer in params.layers:
            z = a @ layer.weights.T + layer.bias
            a = np.maximum(z, 0) if layer.activation == "relu" else z
        assert np.abs(y - a).max() < 1e-12

    def test_shape_mismatch(self):
        params = init_mlp((4, 2), np.random.default_rng(2))
        with pytest.raises(ShapeMismatchError):
            mlp_forward(params, np.zeros((3, 5)))


class TestMlpBackward:
    def test_linear_layer_weight_gradient(self):
        rng = np.random.default_rng(3)
        params = MlpParams([DenseLayer(rng.standard_normal((2, 3)), np.zeros(2), "none")])
        x = rng.standard_normal((5, 3))
        dy = rng.standard_normal((5, 2))
        _, cache = mlp_forward(params, x)
        _, grads = mlp_backward(params, cache, dy)
        assert np.abs(grads[0][0] - dy.T @ x).max() < 1e-12
        assert np.abs(grads[0][1] - dy.sum(0)).max() < 1e-12

    def test_zero_upstream_gives_zero_gradients(self):
        rng = np.random.default_rng(4)
        params = init_mlp((3, 4, 2), rng)
        x = rng.standard_normal((6, 3))
        _, cache = mlp_forward(params, x)
        dx, grads = mlp_backward(params, cache, np.zeros((6, 2)))
        assert not dx.any()
        assert all(not dw.any() and not db.any() for dw, db in grads)

    def test_finite_difference(self):
        assert verify.check_mlp(np.random.default_rng(5)) < 1e-6


class TestPointnet:
    def test_singleton_group_is_plain_composition(self):
        rng = np.random.default_rng(6)
        h = init_mlp((3, 4), rng)
        g = init_mlp((4, 2), rng)
        x = rng.standard_normal((1, 3))
        feat, _ = pointnet_aggregate(h, g, x)
        want, _ = mlp_forward(g, mlp_forward(h, x)[0])
        assert np.array_equal(feat, want[0])

    def test_permutation_invariance_exact(self):
        rng = np.random.default_rng(7)
        h = init_mlp((3, 8), rng)
        g = init_mlp((8, 4), rng)
        group = rng.standard_normal((6, 3))
        feat, _ = pointnet_aggregate(h, g, group)
        for _ in range(10):
            perm = rng.permutation(6)
            feat_p, _ = pointnet_aggregate(h, g, group[perm])
            assert np.array_equal(feat, feat_p)

    def test_empty_group(self):
        rng = np.random.default_rng(8)
        with pytest.raises(EmptyGroupError):
            pointnet_aggregate(init_mlp((3, 4), rng), init_mlp((4, 2), rng),
                               np.zeros((0, 3)))

    def test_max_gradient_routes_to_argmax_rows(self):
        rng = np.random.default_rng(9)
        h = MlpParams([DenseLayer(np.eye(2), np.zeros(2), "none")])
        g = MlpParams([DenseLayer(np.eye(2), np.zeros(2), "none")])
        group = np.array([[1.0, 5.0], [3.0, 2.0]])
        feat, cache = pointnet_aggregate(h, g, group)
        assert np.array_equal(feat, [3.0, 5.0])
        dgroup, _, _ = pointnet_backward(h, g, cache, np.array([1.0, 1.0]))
        assert np.array_equal(dgroup, [[0.0, 1.0], [1.0, 0.0]])

    def test_finite_difference(self):
        assert verify.check_pointnet(np.random.default_rng(10)) < 1e-6


class TestSigmoid:
    def test_zero(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5

    def test_saturation_without_overflow(self):
        vals = sigmoid(np.array([800.0, -800.0]))
        assert vals[0] == 1.0 and vals[1] == 0.0

    def test_finite_difference(self):
        assert verify.check_sigmoid(np.random.default_rng(11)) < 1e-6


class TestSmoothL1:
    def test_zero_at_match(self):
        loss, grad = smooth_l1(np.array([2.0]), np.array([2.0]))
        assert loss[0] == 0.0 and grad[0] == 0.0

    def test_quadratic_branch(self):
        loss, grad = smooth_l1(np.array([0.5]), np.array([0.0]))
        assert abs(loss[0] - 0.125) < 1e-15
        assert abs(grad[0] - 0.5) < 1e-15

    def test_linear_branch_with_clamped_gradient(self):
        loss, grad = smooth_l1(np.array([2.0]), np.array([0.0]))
        assert abs(loss[0] - 1.5) < 1e-15
        assert grad[0] == 1.0

    def test_finite_difference(self):
        assert verify.check_smooth_l1(np.random.default_rng(12)) < 1e-6


class TestFocal:
    def test_confident_correct_goes_to_zero(self):
        loss, _ = focal_loss(np.array([0.999999]), np.array([1]))
        assert loss[0] < 1e-10

    def test_hand_value(self):
        loss, _ = focal_loss(np.array([0.9]), np.array([1]))
        want = -0.25 * 0.01 * math.log(0.9)
        assert abs(loss[0] - want) < 1e-12
        assert abs(loss[0] - 2.6341e-4) < 1e-8

    def test_reduces_to_half_bce(self):
        for y in (0, 1):
            for p in (0.2, 0.5, 0.9):
                loss, _ = focal_loss(np.array([p]), np.array([y]), alpha=0.5, gamma_f=0.0)
                bce = -math.log(p if y == 1 else 1.0 - p)
                assert abs(loss[0] - 0.5 * bce) < 1e-12

    def test_probability_range(self):
        with pytest.raises(ProbabilityOutOfRangeError):
            focal_loss(np.array([1.0]), np.array([1]))

    def test_finite_difference(self):
        assert verify.check_focal(np.random.default_rng(13)) < 1e-6


class TestCrossEntropy:
    def test_uniform_logits(self):
        for c in (2, 5, 11):
            loss, _ = cross_entropy(np.zeros(c), 0)
            assert abs(loss - math.log(c)) < 1e-12

    def test_confident_logits(self):
        loss, _ = cross_entropy(np.array([10.0, 0.0]), 0)
        assert abs(loss - math.log(1 + math.exp(-10))) < 1e-15
        assert abs(loss - 4.54e-5) < 1e-7

    def test_gradient_is_softmax_minus_onehot(self):
        logits = np.array([1.0, 2.0, 0.5])
        _, grad = cross_entropy(logits, 1)
        soft = np.exp(logits) / np.exp(logits).sum()
        soft[1] -= 1.0
        assert np.abs(grad - soft).max() < 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(LabelOutOfRangeError):
            cross_entropy(np.zeros(3), 3)

    def test_finite_difference(self):
        assert verify.check_cross_entropy(np.random.default_rng(14)) < 1e-6


def _targets_for(n, rng, n_bins=12):
    fg = np.ones(n, dtype=bool)
    fg[0] = False  # one background row
    ground = (rng.random(n) < 0.5).astype(np.intp)
    ground[~fg] = 0
    return BoxTargets(
        class_label=np.where(fg, 1, 0),
        ground_label=ground,
        yaw_bin=rng.integers(0, n_bins, n),
        yaw_residual=rng.uniform(0.5, 1.5, n),
        tilt=rng.uniform(-0.3, 0.3, (n, 2)),
        log_dims=rng.uniform(-0.5, 1.5, (n, 3)),
        center_offset=rng.uniform(-1, 1, (n, 3)),
        foreground=fg,
    )


def _output_for(targets, rng, n_bins=12, exact=False):
    n = len(targets)
    jitter = (lambda shape: 0.0) if exact else (lambda shape: rng.uniform(-0.4, 0.4, shape))
    class_logits = rng.standard_normal((n, 2))
    if exact:
        class_logits = np.where(
            np.eye(2)[targets.class_label].astype(bool), 20.0, -20.0
        )
    return HeadOutput(
        class_logits=class_logits,
        s_g=np.clip(targets.ground_label + jitter((n,)) * 0.5, 0.01, 0.99)
        if not exact
        else np.clip(targets.ground_label.astype(float), 0.01, 0.99),
        yaw_bin_logits=rng.standard_normal((n, n_bins)),
        yaw_residual=targets.yaw_residual + jitter((n,)),
        tilt=targets.tilt + jitter((n, 2)),
        log_dims=targets.log_dims + jitter((n, 3)),
        center_offset=targets.center_offset + jitter((n, 3)),
    )


def _composite_oracle(out, targets):
    """Scalar re-derivation of every loss term, point by point."""
    n = len(targets)
    fg = [i for i in range(n) if targets.foreground[i]]
    slope = [i for i in fg if targets.ground_label[i] > 0]
    n_p, n_s = len(fg), len(slope)
    if n_p == 0:
        return 0.0

    def sl1(p, t):
        d = p - t
        return 0.5 * d * d if abs(d) < 1.0 else abs(d) - 0.5

    def ce(logits, label):
        m = max(logits)
        return m + math.log(sum(math.exp(v - m) for v in logits)) - logits[label]

    def focal(p, y):
        p_t = p if y == 1 else 1.0 - p
        a_t = 0.25 if y == 1 else 0.75
        return -a_t * (1 - p_t) ** 2 * math.log(p_t)

    cls = sum(ce(list(out.class_logits[i]), targets.class_label[i]) for i in fg) / n_p
    dim = sum(sl1(out.log_dims[i][k], targets.log_dims[i][k]) for i in fg for k in range(3)) / n_p
    posi = sum(sl1(out.center_offset[i][k], targets.center_offset[i][k]) for i in fg for k in range(3)) / n_p
    seg = sum(focal(out.s_g[i], targets.ground_label[i]) for i in fg) / n_p
    tilt = (
        sum(sl1(out.tilt[i][k], targets.tilt[i][k]) for i in slope for k in range(2)) / n_s
        if n_s
        else 0.0
    )
    ybin = sum(ce(list(out.yaw_bin_logits[i]), targets.yaw_bin[i]) for i in fg) / n_p
    yres = sum(sl1(out.yaw_residual[i], targets.yaw_residual[i]) for i in fg) / n_p
    return cls + dim + posi + (seg + tilt) + (ybin + yres)


class TestCompositeLoss:
    def test_matching_predictions_zero_regression_terms(self):
        rng = np.random.default_rng(15)
        targets = _targets_for(8, rng)
        out = _output_for(targets, rng, exact=True)
        _, bd = composite_box_loss(out, targets)
        assert bd.terms["dim"] == 0.0
        assert bd.terms["posi"] == 0.0
        assert bd.terms["tilt"] == 0.0
        assert bd.terms["yaw_res"] == 0.0
        assert bd.terms["cls"] < 1e-8

    def test_no_sloped_points_tilt_term_zero(self):
        rng = np.random.default_rng(16)
        targets = _targets_for(6, rng)
        targets.ground_label[:] = 0
        out = _output_for(targets, rng)
        loss, bd = composite_box_loss(out, targets)
        assert bd.terms["tilt"] == 0.0
        assert math.isfinite(loss)

    def test_all_background_batch_zero_loss(self):
        rng = np.random.default_rng(17)
        targets = _targets_for(5, rng)
        targets.foreground[:] = False
        targets.ground_label[:] = 0
        out = _output_for(targets, rng)
        loss, bd = composite_box_loss(out, targets)
        assert loss == 0.0
        assert not bd.dclass_logits.any()

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(18)
        targets = _targets_for(8, rng)
        out = _output_for(targets, rng)
        loss, _ = composite_box_loss(out, targets)
        assert abs(loss - _composite_oracle(out, targets)) < 1e-10

    def test_additivity_of_terms(self):
        rng = np.random.default_rng(19)
        targets = _targets_for(8, rng)
        out = _output_for(targets, rng)
        loss, bd = composite_box_loss(out, targets)
        silenced = _output_for(targets, rng)
        silenced.log_dims = targets.log_dims.copy()
        loss2, bd2 = composite_box_loss(silenced, targets)
        assert bd2.terms["dim"] == 0.0
        for key in bd.terms:
            if key != "dim":
                assert abs(bd2.terms[key] - composite_box_loss(silenced, targets)[1].terms[key]) < 1e-15

    def test_losses_nonnegative(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            targets = _targets_for(6, rng)
            out = _output_for(targets, rng)
            loss, bd = composite_box_loss(out, targets)
            assert loss >= 0.0
            assert all(v >= 0.0 for v in bd.terms.values())

    def test_weights_hook(self):
        rng = np.random.default_rng(21)
        targets = _targets_for(6, rng)
        out = _output_for(targets, rng)
        loss, bd = composite_box_loss(out, targets)
        silenced, bd2 = composite_box_loss(out, targets, weights={"cls": 0.0})
        assert abs(silenced - (loss - bd.terms["cls"])) < 1e-12
        assert not bd2.dclass_logits.any()
        doubled, _ = composite_box_loss(out, targets, weights={"theta_z": 2.0})
        assert abs(doubled - (loss + bd.terms["yaw_bin"] + bd.terms["yaw_res"])) < 1e-12
        with pytest.raises(ValueError, match="unknown loss weights"):
            composite_box_loss(out, targets, weights={"bogus": 1.0})

    def test_finite_difference(self):
        assert verify.check_composite_loss(np.random.default_rng(21)) < 1e-6


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        params = [np.array([1.0, 2.0])]
        state = init_adam_state(params)
        adam_step(params, [np.zeros(2)], state, lr=0.1)
        assert np.array_equal(params[0], [1.0, 2.0])

    def test_single_scalar_hand_step(self):
        params = [np.array([1.0])]
        state = init_adam_state(params)
        adam_step(params, [np.array([0.5])], state, lr=0.1)
        m_hat = (0.1 * 0.5) / (1 - 0.9)
        v_hat = (0.001 * 0.25) / (1 - 0.999)
        want = 1.0 - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
        assert abs(params[0][0] - want) < 1e-15

    def test_deterministic_across_runs(self):
        def run():
            rng = np.random.default_rng(22)
            params = [rng.standard_normal(4), rng.standard_normal((2, 3))]
            state = init_adam_state(params)
            for _ in range(50):
                grads = [rng.standard_normal(4), rng.standard_normal((2, 3))]
                adam_step(params, grads, state, lr=0.01)
            return params

        a, b = run(), run()
        assert a[0].tobytes() == b[0].tobytes()
        assert a[1].tobytes() == b[1].tobytes()


class TestGradCheck:
    def test_linear_function_near_exact(self):
        w = np.array([2.0, -3.0, 0.5])

        def f(x):
            return float(w @ x), w

        err = grad_check(f, np.array([1.0, 2.0, 3.0]))
        assert err < 1e-10

    def test_full_suite_spot(self):
        results = verify.gradient_suite(seed=0, points=2)
        assert max(results.values()) < 1e-6


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(23)
        mlps = [init_mlp((4, 8, 2), rng), init_mlp((2, 3), rng, output_activation="sigmoid")]
        path = tmp_path / "params.bin"
        save_mlps(mlps, path)
        loaded = load_mlps(path)
        assert len(loaded) == 2
        for a, b in zip(mlps, loaded):
            assert len(a.layers) == len(b.layers)
            for la, lb in zip(a.layers, b.layers):
                assert la.weights.tobytes() == lb.weights.tobytes()
                assert la.bias.tobytes() == lb.bias.tobytes()
                assert la.activation == lb.activation

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_mlps(path)

    def test_truncated(self, tmp_path):
        rng = np.random.default_rng(24)
        path = tmp_path / "params.bin"
        save_mlps([init_mlp((3, 2), rng)], path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="truncated"):
            load_mlps(path)
