import math

import numpy as np
import pytest

from pcgc import (
    CorruptionError,
    DataError,
    ModelMismatchError,
    ShapeError,
    Tensor,
    TrainConfig,
    VoxelGrid,
    analysis,
    decode,
    encode,
    focal_loss,
    init_model,
    latent_shape,
    quantize,
    rate_bits,
    synthesis,
    train_step,
)
from pcgc.autodiff import AdamState, backward, parameter
from pcgc.codec import SCALE_FLOOR, grid_to_tensor, softplus_inverse

from conftest import random_grid, sphere_grid


def zero_weight_model(n_filters=4, final_bias=0.0):
    params = init_model(n_filters=n_filters, seed=0)
    for layer in params.analysis + params.synthesis:
        layer.weights.data[:] = 0
        if layer.bias is not None:
            layer.bias.data[:] = 0
    params.synthesis[-1].bias.data[:] = final_bias
    return params


class TestAnalysisSynthesis:
    def test_latent_shape_r64(self):
        params = init_model(n_filters=32, seed=1)
        x = grid_to_tensor(sphere_grid(64, 20, 24))
        assert analysis(x, params).shape == (32, 8, 8, 8)

    def test_latent_shape_r512_arithmetic(self):
        assert latent_shape(512, 32) == (32, 64, 64, 64)
        assert latent_shape(64, 32) == (32, 8, 8, 8)

    def test_zero_weights_zero_latent(self):
        params = zero_weight_model()
        x = grid_to_tensor(random_grid(np.random.default_rng(0), r=16))
        assert not analysis(x, params).data.any()

    def test_resolution_not_divisible_by_8(self):
        params = init_model(n_filters=2, seed=0)
        with pytest.raises(ShapeError):
            analysis(Tensor(np.zeros((1, 12, 12, 12), np.float32)), params)

    def test_synthesis_shape(self):
        params = init_model(n_filters=8, seed=0)
        y = Tensor(np.zeros((8, 8, 8, 8), np.float32))
        assert synthesis(y, params).shape == (1, 64, 64, 64)

    def test_synthesis_zero_everything_zero_scores(self):
        params = zero_weight_model()
        y = Tensor(np.zeros((4, 2, 2, 2), np.float32))
        assert not synthesis(y, params).data.any()

    def test_synthesis_channel_mismatch(self):
        params = init_model(n_filters=4, seed=0)
        with pytest.raises(ShapeError):
            synthesis(Tensor(np.zeros((3, 2, 2, 2), np.float32)), params)


class TestQuantize:
    def test_eval_rounds_ties_to_even(self):
        out = quantize(Tensor([0.4, -1.7, 2.5]), "eval")
        assert out.data.tolist() == [0.0, -2.0, 2.0]

    def test_train_noise_bounded(self):
        y = Tensor(np.zeros(10000, np.float32))
        out = quantize(y, "train", seed=4)
        assert np.abs(out.data).max() < 0.5

    def test_eval_idempotent(self, rng):
        y = Tensor(rng.standard_normal(100).astype(np.float32) * 3)
        once = quantize(y, "eval")
        twice = quantize(once, "eval")
        assert np.array_equal(once.data, twice.data)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            quantize(Tensor([1.0]), "test")


class TestRateBits:
    def make_params(self, n=2, loc=0.0, scale=1.0):
        params = init_model(n_filters=n, seed=0)
        params.entropy_loc.data[:] = loc
        params.entropy_scale_raw.data[:] = softplus_inverse(scale - SCALE_FLOOR)
        return params

    def test_zero_latent_closed_form(self):
        # Laplace(0,1): P(bin at 0) = 1 - exp(-1/2); about 1.3458 bits
        params = self.make_params()
        y = Tensor(np.zeros((2, 2, 2, 2), np.float32))
        bits = rate_bits(y, params).item()
        expected = -math.log2(1.0 - math.exp(-0.5)) * y.data.size
        assert bits == pytest.approx(expected, rel=1e-6)
        # closed form evaluates to 1.345675... bits per element
        assert bits / y.data.size == pytest.approx(1.34568, abs=2e-4)

    def test_symmetric_values_equal_bits(self):
        params = self.make_params()
        plus = rate_bits(Tensor(np.full((2, 1, 1, 1), 2.0, np.float32)), params)
        minus = rate_bits(Tensor(np.full((2, 1, 1, 1), -2.0, np.float32)), params)
        assert plus.item() == pytest.approx(minus.item(), rel=1e-7)

    def test_gradient_matches_finite_differences(self, rng):
        params = init_model(n_filters=2, seed=5, dtype=np.float64)
        y = parameter(rng.standard_normal((2, 3, 3, 3)) * 2, np.float64)
        backward(rate_bits(y, params))
        grads = y.grad.copy()
        h = 1e-5
        flat = y.data.ravel()
        for i in rng.choice(flat.size, 20, replace=False):
            orig = flat[i]
            flat[i] = orig + h
            up = rate_bits(Tensor(y.data), params).item()
            flat[i] = orig - h
            down = rate_bits(Tensor(y.data), params).item()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            assert abs(fd - grads.ravel()[i]) / max(abs(fd), 1e-8) < 1e-3

    def test_rate_nonnegative(self, rng):
        params = self.make_params()
        y = Tensor(rng.standard_normal((2, 4, 4, 4)).astype(np.float32) * 10)
        assert rate_bits(y, params).item() >= 0

    def test_channel_mismatch(self):
        params = self.make_params(n=2)
        with pytest.raises(ShapeError):
            rate_bits(Tensor(np.zeros((3, 2, 2, 2), np.float32)), params)


class TestFocalLoss:
    def test_perfect_prediction_vanishes(self):
        grid = VoxelGrid(8, np.array([[0, 0, 0]]))
        scores = np.full((1, 8, 8, 8), 1e-9, np.float32)
        scores[0, 0, 0, 0] = 1.0
        loss = focal_loss(Tensor(scores), grid, 0.9, 2.0).item()
        # only the clamp epsilon keeps it from exact zero
        assert loss < 1e-4

    def test_half_confidence_scalar_value(self):
        # alpha 0.9, gamma 2, p_t = 0.5 on a single occupied voxel:
        # 0.9 * 0.25 * ln 2
        grid = VoxelGrid(2, np.array([[0, 0, 0]]))
        scores = np.zeros((1, 2, 2, 2), np.float32)
        scores[0, 0, 0, 0] = 0.5
        val = focal_loss(Tensor(scores), grid, 0.9, 2.0).item()
        empty_term = -0.1 * 1.0 ** 2.0 * math.log(1 - 1e-7) * 7
        assert val - empty_term == pytest.approx(0.9 * 0.25 * math.log(2), rel=1e-5)
        assert val == pytest.approx(0.155953, abs=1e-4)

    def test_confident_occupied_scalar_value(self):
        grid = VoxelGrid(2, np.array([[0, 0, 0]]))
        scores = np.zeros((1, 2, 2, 2), np.float32)
        scores[0, 0, 0, 0] = 0.9
        val = focal_loss(Tensor(scores), grid, 0.9, 2.0).item()
        expected = -0.9 * 0.1 ** 2 * math.log(0.9)
        assert val == pytest.approx(expected, rel=1e-3)
        assert val == pytest.approx(9.483e-4, rel=1e-3)

    def test_gamma_zero_is_balanced_cross_entropy(self, rng):
        grid = random_grid(rng, r=8, n=40)
        scores = rng.uniform(0.01, 0.99, (1, 8, 8, 8)).astype(np.float64)
        got = focal_loss(Tensor(scores), grid, 0.75, 0.0).item()
        occ = grid.to_dense(bool)[None]
        p = np.clip(scores, 1e-7, 1 - 1e-7)
        ce = np.where(occ, -0.75 * np.log(p), -0.25 * np.log(1 - p)).sum()
        assert abs(got - ce) < 1e-9 * max(1.0, abs(ce))

    def test_gradient_matches_finite_differences(self, rng):
        grid = random_grid(rng, r=4, n=10)
        sc = parameter(rng.uniform(0.05, 0.95, (1, 4, 4, 4)), np.float64)
        backward(focal_loss(sc, grid, 0.9, 2.0))
        grads = sc.grad.copy()
        h = 1e-6
        flat = sc.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = focal_loss(Tensor(sc.data), grid, 0.9, 2.0).item()
            flat[i] = orig - h
            down = focal_loss(Tensor(sc.data), grid, 0.9, 2.0).item()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            assert abs(fd - grads.ravel()[i]) / max(abs(fd), abs(grads.ravel()[i]), 1e-8) < 1e-4

    def test_shape_mismatch(self):
        grid = VoxelGrid(8, np.array([[0, 0, 0]]))
        with pytest.raises(ShapeError):
            focal_loss(Tensor(np.zeros((1, 4, 4, 4), np.float32)), grid, 0.9, 2.0)


class TestTrainStep:
    def test_loss_finite_at_init(self, rng):
        params = init_model(n_filters=4, seed=2)
        grid = random_grid(rng, r=16, n=80)
        cfg = TrainConfig(lam=1e-4, resolution=16, batch_size=2, steps=1)
        stats = train_step([grid], params, cfg, AdamState())
        assert math.isfinite(stats.L) and math.isfinite(stats.D) and math.isfinite(stats.R)
        assert stats.R >= 0
        assert stats.L == pytest.approx(1e-4 * stats.D + stats.R, rel=1e-6)

    def test_empty_batch_rejected(self):
        params = init_model(n_filters=2, seed=0)
        cfg = TrainConfig(resolution=16)
        with pytest.raises(DataError):
            train_step([], params, cfg, AdamState())

    def test_resolution_mismatch_rejected(self, rng):
        params = init_model(n_filters=2, seed=0)
        cfg = TrainConfig(resolution=32)
        with pytest.raises(DataError):
            train_step([random_grid(rng, r=16)], params, cfg, AdamState())

    def test_deterministic_given_seed(self, rng):
        grid = random_grid(rng, r=16, n=60)
        results = []
        for _ in range(2):
            params = init_model(n_filters=2, seed=7)
            cfg = TrainConfig(lam=1e-4, resolution=16, seed=11)
            opt = AdamState(lr=cfg.lr)
            stats = [train_step([grid], params, cfg, opt) for _ in range(3)]
            results.append([(s.D, s.R, s.L) for s in stats])
        assert results[0] == results[1]

    def test_pure_rate_minimization_at_lambda_zero(self, rng):
        # lam=0 leaves only the rate term; R should trend down
        grid = random_grid(rng, r=16, n=80)
        params = init_model(n_filters=4, seed=3)
        cfg = TrainConfig(lam=0.0, lr=1e-3, resolution=16, seed=0)
        opt = AdamState(lr=cfg.lr)
        rs = [train_step([grid], params, cfg, opt).R for _ in range(100)]
        assert np.mean(rs[-20:]) < np.mean(rs[:20])

    def test_overfits_solid_cube(self):
        # acceptance-level check at reduced scale: D collapses on one grid
        r = 32
        idx = np.indices((r, r, r)).reshape(3, -1).T
        inside = np.all((idx >= 10) & (idx < 22), axis=1)
        grid = VoxelGrid(r, idx[inside])
        params = init_model(n_filters=8, seed=1)
        cfg = TrainConfig(lam=1e-4, lr=1e-3, resolution=r, seed=0)
        opt = AdamState(lr=cfg.lr)
        first = train_step([grid], params, cfg, opt)
        last = None
        for _ in range(199):
            last = train_step([grid], params, cfg, opt)
        assert last.D < 0.1 * first.D


class TestEncodeDecode:
    def test_roundtrip_recovers_latents(self, rng):
        from pcgc.codec import decode_latents, grid_to_tensor

        params = init_model(n_filters=4, seed=4)
        for _ in range(10):
            grid = random_grid(rng, r=16, n=int(rng.integers(1, 150)))
            bs = encode(grid, params)
            y = analysis(grid_to_tensor(grid), params)
            assert np.array_equal(decode_latents(bs), np.rint(y.data).astype(np.int64))

    def test_zero_weights_payload_small(self):
        params = zero_weight_model(n_filters=32)
        grid = sphere_grid(64, 20, 24)
        bs = encode(grid, params)
        assert bs.latent_shape == (32, 8, 8, 8)
        from pcgc.codec import decode_latents

        latents = decode_latents(bs)
        assert latents.size == 16384 and not latents.any()
        assert len(bs.payload) < 128

    def test_bpov_reported(self, rng):
        params = init_model(n_filters=4, seed=4)
        grid = random_grid(rng, r=16, n=50)
        bs = encode(grid, params)
        assert bs.bpov == pytest.approx(8.0 * bs.total_bytes / grid.occupied_count)

    def test_full_and_empty_threshold(self):
        # zero weights, final bias 0.6: every score is 0.6 -> full grid
        params = zero_weight_model(final_bias=0.6)
        grid = VoxelGrid(16, np.array([[0, 0, 0]]))
        out = decode(encode(grid, params), params, threshold=0.5)
        assert out.occupied_count == 16 ** 3
        # bias 0.4: every score below threshold -> empty grid
        params = zero_weight_model(final_bias=0.4)
        out = decode(encode(grid, params), params, threshold=0.5)
        assert out.occupied_count == 0

    def test_threshold_monotonicity(self, rng):
        params = init_model(n_filters=4, seed=6)
        grid = random_grid(rng, r=16, n=100)
        bs = encode(grid, params)
        counts = [
            decode(bs, params, threshold=t).occupied_count
            for t in (0.1, 0.3, 0.5, 0.7, 0.9)
        ]
        assert all(b <= a for a, b in zip(counts, counts[1:]))

    def test_model_mismatch_rejected(self, rng):
        params = init_model(n_filters=4, seed=4)
        other = init_model(n_filters=4, seed=5)
        grid = random_grid(rng, r=16, n=30)
        bs = encode(grid, params)
        with pytest.raises(ModelMismatchError):
            decode(bs, other)

    def test_corrupt_payload_rejected(self, rng):
        params = init_model(n_filters=4, seed=4)
        bs = encode(random_grid(rng, r=16, n=30), params)
        bs.payload = bs.payload[:-2]
        with pytest.raises(CorruptionError):
            decode(bs, params)

    def test_resolution_must_divide_by_8(self, rng):
        params = init_model(n_filters=4, seed=4)
        with pytest.raises(ShapeError):
            encode(VoxelGrid(12, np.array([[0, 0, 0]])), params)


class TestConfigValidation:
    def test_alpha_range(self):
        with pytest.raises(DataError):
            TrainConfig(alpha=1.0)

    def test_negative_gamma(self):
        with pytest.raises(DataError):
            TrainConfig(gamma=-0.5)

    def test_negative_lam(self):
        with pytest.raises(DataError):
            TrainConfig(lam=-1e-4)

    def test_resolution_divisibility(self):
        with pytest.raises(DataError):
            TrainConfig(resolution=20)


class TestArchitectureConstants:
    """Layer specs and training defaults pinned by the published design."""

    def test_analysis_layer_specs(self):
        params = init_model(n_filters=32, seed=0)
        specs = [
            (l.kernel, l.stride, l.activation, l.bias is not None)
            for l in params.analysis
        ]
        assert specs == [
            ((9, 9, 9), 2, "relu", True),
            ((5, 5, 5), 2, "relu", True),
            ((5, 5, 5), 2, "none", False),
        ]
        assert [l.out_channels for l in params.analysis] == [32, 32, 32]

    def test_synthesis_layer_specs(self):
        params = init_model(n_filters=32, seed=0)
        specs = [
            (l.kernel, l.stride, l.activation, l.bias is not None)
            for l in params.synthesis
        ]
        assert specs == [
            ((5, 5, 5), 2, "relu", True),
            ((5, 5, 5), 2, "relu", True),
            ((9, 9, 9), 2, "relu", True),
        ]
        assert [l.out_channels for l in params.synthesis] == [32, 32, 1]

    def test_train_config_defaults(self):
        cfg = TrainConfig()
        assert (cfg.alpha, cfg.gamma) == (0.9, 2.0)
        assert (cfg.lr, cfg.beta1, cfg.beta2) == (1e-4, 0.9, 0.999)
        assert cfg.batch_size == 64
        assert cfg.resolution == 64

    def test_default_lambda_sweep(self):
        from pcgc.cli import DEFAULT_LAMBDA_SWEEP

        assert DEFAULT_LAMBDA_SWEEP == (1e-4, 5e-5, 1e-5, 5e-6, 1e-6)
