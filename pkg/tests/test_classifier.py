import dataclasses

import numpy as np
import pytest

from cmr_forge.classifier.checkpoint import (CheckpointError, decode_checkpoint, encode_checkpoint,
                                             load_checkpoint, save_checkpoint)
from cmr_forge.classifier.gradcheck import check_gradients, grad_check, relative_error
from cmr_forge.classifier.layers import sigmoid
from cmr_forge.classifier.model import (ArchDescriptor, ClassifierModel, backward, class_weights_from_counts,
                                        default_arch, forward, init_model, loss, loss_and_grads,
                                        network_for, predict_proba, sgd_step, tiny_arch)
from cmr_forge.rng import RngStream
from cmr_forge.types import CineSequence
from toydata import SHAPE, toy_arch, toy_set


class TestArch:
    def test_default_layer_counts(self):
        for variant, pools in (("cnn3d", 4), ("lrcn", 3)):
            a = default_arch(variant)
            a.validate()
            assert len(a.conv_channels) == 6 and len(a.pools) == pools
            assert a.dropout_p == 0.5
        assert default_arch("lrcn").feature_width == 64
        assert default_arch("lrcn").hidden == 32

    def test_layer_composition(self):
        from cmr_forge.classifier.layers import LSTM, Conv, Dense, MaxPool
        for variant in ("cnn3d", "lrcn"):
            layers = network_for(default_arch(variant)).layers
            count = lambda t: sum(isinstance(l, t) for l in layers)
            assert count(Conv) == 6
            assert count(MaxPool) == (4 if variant == "cnn3d" else 3)
            assert count(Dense) == (2 if variant == "cnn3d" else 1)
            assert count(LSTM) == (0 if variant == "cnn3d" else 1)

    @pytest.mark.parametrize("bad", [dict(pools=()), dict(conv_channels=(4, 4)), dict(dropout_p=1.0),
                                     dict(variant="rnn")])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            dataclasses.replace(default_arch("lrcn"), **bad).validate()

    def test_dict_roundtrip(self):
        a = default_arch("cnn3d")
        assert ArchDescriptor.from_dict(a.to_dict()) == a


class TestInit:
    def test_same_seed_same_params(self):
        a, b = init_model(tiny_arch("lrcn"), seed=4), init_model(tiny_arch("lrcn"), seed=4)
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
        c = init_model(tiny_arch("lrcn"), seed=5)
        assert not np.array_equal(a.params["lstm.Wx"], c.params["lstm.Wx"])

    def test_paper_gaussian_moments(self):
        w = []
        for s in range(8):
            m = init_model(default_arch("lrcn"), "paper_gaussian", seed=s)
            w += [v.ravel() for k, v in m.params.items() if not k.endswith(".b")]
        w = np.concatenate(w)
        assert w.size >= 100_000
        assert abs(w.mean()) < 0.02 and abs(w.std() - 1) < 0.02

    def test_scaled_std_fan_in_50(self):
        # 2 channels on a 5 x 5 final map feed 50 features into the recurrent unit
        a = ArchDescriptor("lrcn", (4, 20, 20), (2, 2, 2, 2, 2, 2), pools=((0, (2, 2)), (2, (2, 2)), (4, (1, 1))),
                           hidden=32)
        assert a.feature_width == 50
        m = init_model(a, "scaled", seed=0)
        assert network_for(a).fan_ins()["lstm.Wx"] == 50
        assert abs(m.params["lstm.Wx"].std() / np.sqrt(2 / 50) - 1) < 0.05

    def test_biases_and_momentum_zero(self):
        m = init_model(tiny_arch("cnn3d"), seed=1)
        assert all(np.all(v == 0) for k, v in m.params.items() if k.endswith(".b"))
        assert all(np.all(v == 0) for v in m.velocity.values())

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            init_model(tiny_arch("lrcn"), "xavier")

    def test_shape_validation(self):
        m = init_model(tiny_arch("lrcn"))
        bad = dict(m.params, **{"out.b": np.zeros(2, np.float32)})
        with pytest.raises(ValueError):
            ClassifierModel(m.arch, bad)


class TestForward:
    @pytest.mark.parametrize("variant", ["cnn3d", "lrcn"])
    def test_range_and_determinism(self, variant):
        m = init_model(tiny_arch(variant), seed=2)
        x = np.random.default_rng(0).random((5,) + m.arch.input_shape)
        p1, p2 = predict_proba(m, x), predict_proba(m, x)
        assert np.all((p1 > 0) & (p1 < 1))
        assert np.array_equal(p1, p2)
        single = forward(m, CineSequence("a", x[0]))
        assert isinstance(single, float) and single == pytest.approx(p1[0])

    def test_extreme_inputs_stay_in_range(self):
        m = init_model(tiny_arch("cnn3d"), "paper_gaussian", seed=0)
        p = predict_proba(m, np.full((2,) + m.arch.input_shape, 1e3))
        assert np.all((p > 0) & (p < 1)) or np.all(np.isfinite(p))
        assert np.all(sigmoid(np.array([-800.0, 800.0])) >= 0)

    def test_lrcn_is_order_sensitive(self):
        m = init_model(tiny_arch("lrcn"), seed=3)
        x = np.random.default_rng(1).random(m.arch.input_shape)
        perm = x[[3, 1, 4, 0, 2]]
        assert forward(m, x) != forward(m, perm)

    def test_dropout_only_in_train_mode(self):
        m = init_model(toy_arch("lrcn", dropout_p=0.5), seed=0)
        x = toy_set()[0][:2]
        a = forward(m, x, train_mode=True, rng=RngStream(1))
        b = forward(m, x, train_mode=True, rng=RngStream(2))
        assert not np.array_equal(a, b)
        assert np.array_equal(forward(m, x, train_mode=True, rng=RngStream(1)), a)

    def test_shape_mismatch(self):
        m = init_model(tiny_arch("lrcn"))
        with pytest.raises(ValueError):
            forward(m, np.zeros((3, 8, 8)))


class TestLoss:
    def test_max_entropy(self):
        assert loss([0.5, 0.5], [0, 1]) == pytest.approx(np.log(2))

    def test_near_perfect(self):
        assert loss([1 - 1e-7], [1]) <= 2e-7
        assert loss([1.0], [1]) <= 2e-7

    def test_class_ratio(self):
        w_pos, w_neg = class_weights_from_counts(150, 3360)
        assert w_pos / w_neg == pytest.approx(22.4)

    def test_unit_weights_exact(self):
        p, y = np.array([0.2, 0.7, 0.9]), np.array([0, 1, 0])
        assert loss(p, y, (1.0, 1.0)) == loss(p, y)

    def test_weighted_formula(self):
        p, y = np.array([0.2, 0.7]), np.array([0, 1])
        want = -(3 * np.log(0.7) + 0.5 * np.log(0.8)) / 2
        assert loss(p, y, (3.0, 0.5)) == pytest.approx(want)

    def test_empty(self):
        with pytest.raises(ValueError):
            loss([], [])


class TestBackward:
    def test_zero_weights_stationary_bias(self):
        m = init_model(tiny_arch("cnn3d"), seed=0)
        for v in m.params.values():
            v[...] = 0
        x = np.random.default_rng(0).random((2,) + m.arch.input_shape)
        g = backward(m, (x, [0, 1]), train_mode=False)
        assert g["out.b"][0] == 0

    @pytest.mark.parametrize("variant", ["cnn3d", "lrcn"])
    def test_grad_check_tiny(self, variant):
        arch = tiny_arch(variant)
        m = init_model(arch, seed=1, dtype=np.float64)
        g = np.random.default_rng(2)
        x = g.random((3,) + arch.input_shape)
        assert m.n_params <= 5000
        res = grad_check(m, (x, [0, 1, 1]), eps=1e-3, n_coords=200, rng=0)
        assert res.n_checked >= 200
        assert res.max_relative_error < 1e-4

    def test_grad_check_weighted(self):
        m = init_model(tiny_arch("lrcn"), seed=2, dtype=np.float64)
        x = np.random.default_rng(3).random((2,) + m.arch.input_shape)
        res = grad_check(m, (x, [1, 0]), n_coords=200, rng=1, class_weights=(4.0, 0.5))
        assert res.max_relative_error < 1e-4

    def test_linear_model_tight(self):
        g = np.random.default_rng(0)
        X, y = g.normal(size=(20, 6)), (g.random(20) > 0.5).astype(float)
        # near zero logits the cubic term of the loss vanishes, so it is locally quadratic
        params = {"w": g.normal(size=6) * 1e-3, "b": np.array([0.0])}

        def lossf(p):
            return loss(sigmoid(X @ p["w"] + p["b"][0]), y)

        s = sigmoid(X @ params["w"] + params["b"][0])
        analytic = {"w": X.T @ (s - y) / 20, "b": np.array([np.mean(s - y)])}
        res = check_gradients(lossf, params, analytic, eps=1e-3, n_coords=7, rng=0)
        assert res.n_checked == 7 and res.max_relative_error < 1e-8

    def test_same_rng_same_gradients(self):
        m = init_model(toy_arch("lrcn", dropout_p=0.5), seed=0)
        x, y = toy_set()
        g1 = backward(m, (x[:4], y[:4]), rng=RngStream(3).generator())
        g2 = backward(m, (x[:4], y[:4]), rng=RngStream(3).generator())
        assert all(np.array_equal(g1[k], g2[k]) for k in g1)

    def test_dropout_needs_rng(self):
        m = init_model(toy_arch("lrcn", dropout_p=0.5))
        x, y = toy_set()
        with pytest.raises(ValueError):
            loss_and_grads(m, x[:2], y[:2], rng=None, train_mode=True)

    def test_relative_error_floor(self):
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)


def _scalar_model(w=0.0):
    m = init_model(tiny_arch("lrcn"))
    m.params = {"w": np.array([w])}
    m.velocity = {"w": np.zeros(1)}
    return m


class TestSgd:
    def test_plain_step(self):
        m = sgd_step(_scalar_model(), {"w": np.array([1.0])}, lr=0.1, momentum=0.0)
        assert m.params["w"][0] == pytest.approx(-0.1)

    def test_heavy_ball(self):
        m = _scalar_model()
        sgd_step(m, {"w": np.array([1.0])}, 0.1, 0.9)
        assert m.velocity["w"][0] == 1.0 and m.params["w"][0] == pytest.approx(-0.1)
        sgd_step(m, {"w": np.array([1.0])}, 0.1, 0.9)
        assert m.velocity["w"][0] == pytest.approx(1.9) and m.params["w"][0] == pytest.approx(-0.29)

    def test_zero_gradient_noop(self):
        m = init_model(tiny_arch("cnn3d"), seed=0)
        before = m.copy()
        sgd_step(m, {k: np.zeros_like(v) for k, v in m.params.items()}, 0.1, 0.9)
        assert all(np.array_equal(m.params[k], before.params[k]) for k in m.params)

    def test_non_finite_aborts(self):
        m = _scalar_model()
        with pytest.raises(FloatingPointError):
            sgd_step(m, {"w": np.array([np.nan])}, 0.1, 0.9)
        assert m.params["w"][0] == 0.0


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        m = init_model(default_arch("lrcn"), seed=3)
        m.epoch = 7
        save_checkpoint(m, tmp_path / "m.ckpt")
        back = load_checkpoint(tmp_path / "m.ckpt")
        assert back.arch == m.arch and back.seed == 3 and back.epoch == 7
        assert all(back.params[k].tobytes() == m.params[k].tobytes() for k in m.params)
        header = (tmp_path / "m.ckpt").read_bytes().split(b"\n", 1)[0]
        assert b'"arch"' in header and b'"seed":3' in header

    def test_payload_order_and_endianness(self):
        m = init_model(tiny_arch("cnn3d"), seed=0)
        data = encode_checkpoint(m)
        body = data[data.index(b"\n") + 1:]
        first = next(iter(m.params.values())).ravel()
        assert np.frombuffer(body[:4 * first.size], "<f4").tolist() == first.tolist()

    def test_errors(self):
        data = encode_checkpoint(init_model(tiny_arch("lrcn")))
        with pytest.raises(CheckpointError):
            decode_checkpoint(data[:-4])
        with pytest.raises(CheckpointError):
            decode_checkpoint(b"no header")
        with pytest.raises(CheckpointError):
            decode_checkpoint(b"{bad json\n")
