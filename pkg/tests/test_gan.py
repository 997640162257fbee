import numpy as np
import pytest
import torch

from voxelgan.embeddings import EmbeddingTable
from voxelgan.gan import (
    ConvNet3d,
    ConvNetSpec,
    StackFormatError,
    TrainConfig,
    TrainingDivergedError,
    discriminator_score,
    generator_step,
    init_net,
    load_stack,
    noise_sigma,
    reconstruction_loss,
    run_cascade,
    save_stack,
    train,
    wgan_gp_loss,
)
from voxelgan.pyramid import ScalePyramid, build_pyramid

TINY_SPEC = ConvNetSpec(blocks=2, kernel=3, base_channels=4)


def zeroed(net: ConvNet3d) -> ConvNet3d:
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    return net


def tiny_table(m=2):
    vectors = np.zeros((2, m))
    vectors[0, 0] = 1.0
    vectors[1, 1] = 1.0
    return EmbeddingTable(vectors, ("air", "stone"))


def tiny_training_setup(steps=2, factors=(1.0, 0.5), seed=0, m=2, size=6):
    table = tiny_table(m)
    rng = np.random.default_rng(3)
    voxels = rng.integers(0, 2, size=(size, size, size))
    field = table.vectors[voxels].transpose(3, 0, 1, 2)
    pyramid = build_pyramid(field, factors)
    config = TrainConfig(
        steps_per_scale=steps, generator_steps=1, discriminator_steps=1,
        dimension=m, factors=factors, seed=seed, net=TINY_SPEC,
    )
    return pyramid, config, table


class TestGeneratorStep:
    def test_zero_weights_identity(self):
        net = zeroed(ConvNet3d(2, 2, TINY_SPEC))
        prev = torch.randn(2, 4, 4, 4)
        noise = torch.randn(2, 4, 4, 4)
        out = generator_step(prev, noise, net)
        assert torch.equal(out, prev)

    def test_coarsest_zero_everything(self):
        net = zeroed(ConvNet3d(2, 2, TINY_SPEC))
        zero = torch.zeros(2, 3, 3, 3)
        out = generator_step(zero, zero, net)
        assert torch.equal(out, zero)

    def test_shape_contract(self):
        net = ConvNet3d(2, 2, TINY_SPEC)
        init_net(net, torch.Generator().manual_seed(0))
        out = generator_step(torch.zeros(2, 4, 4, 4), torch.randn(2, 4, 4, 4), net)
        assert out.shape == (2, 4, 4, 4)

    def test_shape_mismatch(self):
        net = ConvNet3d(2, 2, TINY_SPEC)
        with pytest.raises(ValueError, match="differ"):
            generator_step(torch.zeros(2, 4, 4, 4), torch.zeros(2, 4, 4, 5), net)


class TestDiscriminatorScore:
    def test_zero_weights_scores_zero(self):
        net = zeroed(ConvNet3d(2, 1, TINY_SPEC))
        with torch.no_grad():
            assert float(discriminator_score(torch.randn(2, 5, 5, 5), net)) == 0.0

    def test_fully_convolutional_shapes(self):
        net = ConvNet3d(2, 1, TINY_SPEC)
        init_net(net, torch.Generator().manual_seed(1))
        for shape in [(2, 10, 10, 10), (2, 16, 12, 20)]:
            score = discriminator_score(torch.randn(*shape), net)
            assert score.ndim == 0 and torch.isfinite(score)

    def test_linear_layer_matches_window_oracle(self):
        # single unpadded conv: the score is the mean over all valid
        # windows of <w, window>, checked by direct summation
        torch.manual_seed(7)
        conv = torch.nn.Conv3d(2, 1, 3, bias=False).double()
        field = torch.randn(2, 5, 6, 4, dtype=torch.float64)
        with torch.no_grad():
            score = float(discriminator_score(field, conv))
        w = conv.weight[0]
        windows = []
        for d in range(3):
            for h in range(4):
                for v in range(2):
                    window = field[:, d:d + 3, h:h + 3, v:v + 3]
                    windows.append(float((w * window).sum()))
        assert score == pytest.approx(sum(windows) / len(windows), rel=1e-12)

    def test_below_receptive_footprint(self):
        net = ConvNet3d(2, 1, TINY_SPEC)
        with pytest.raises(ValueError, match="receptive footprint"):
            discriminator_score(torch.randn(2, 2, 5, 5), net)


class TestWganGpLoss:
    def test_unit_norm_linear_critic_no_penalty(self):
        w = torch.zeros(2, 3, 3, 3, dtype=torch.float64)
        w[0, 0, 0, 0] = 1.0
        critic = lambda x: (w * x).sum()
        real = torch.randn(2, 3, 3, 3, dtype=torch.float64)
        fake = torch.randn(2, 3, 3, 3, dtype=torch.float64)
        _, penalty = wgan_gp_loss(critic, real, fake, gp_lambda=0.1, seed=0)
        assert float(penalty) == pytest.approx(0.0, abs=1e-12)

    def test_norm_three_closed_form(self):
        w = torch.zeros(1, 2, 2, 2, dtype=torch.float64)
        w[0, 0, 0, 0] = 3.0
        critic = lambda x: (w * x).sum()
        real = torch.randn(1, 2, 2, 2, dtype=torch.float64)
        fake = torch.randn(1, 2, 2, 2, dtype=torch.float64)
        _, penalty = wgan_gp_loss(critic, real, fake, gp_lambda=0.1, seed=3)
        assert float(penalty) == pytest.approx(0.1 * (3.0 - 1.0) ** 2, abs=1e-9)

    def test_equal_inputs_zero_critic_term(self):
        net = ConvNet3d(2, 1, TINY_SPEC)
        init_net(net, torch.Generator().manual_seed(2))
        x = torch.randn(2, 5, 5, 5)
        critic, _ = wgan_gp_loss(lambda t: discriminator_score(t, net),
                                 x, x.clone(), gp_lambda=0.1, seed=1)
        assert float(critic) == 0.0

    def test_closed_form_over_random_directions(self, rng):
        for i in range(10):
            w = torch.from_numpy(rng.normal(size=(2, 3, 3, 3)))
            critic = lambda x: (w * x).sum()
            real = torch.from_numpy(rng.normal(size=(2, 3, 3, 3)))
            fake = torch.from_numpy(rng.normal(size=(2, 3, 3, 3)))
            lam = float(rng.uniform(0.05, 1.0))
            _, penalty = wgan_gp_loss(critic, real, fake, lam, seed=i)
            expected = lam * (float(torch.linalg.vector_norm(w)) - 1.0) ** 2
            assert float(penalty) == pytest.approx(expected, abs=1e-6)

    def test_gradients_match_finite_differences(self):
        # 10-parameter critic: one 1x1x1 conv over 9 channels
        torch.manual_seed(5)
        conv = torch.nn.Conv3d(9, 1, 1).double()
        critic = lambda x: conv(x.unsqueeze(0)).mean()
        real = torch.randn(9, 3, 3, 3, dtype=torch.float64)
        fake = torch.randn(9, 3, 3, 3, dtype=torch.float64)

        def objective():
            critic_term, penalty = wgan_gp_loss(critic, real, fake, 0.1, seed=11)
            return critic_term + penalty

        conv.zero_grad()
        objective().backward()
        step = 1e-4
        for param in conv.parameters():
            grad = param.grad.reshape(-1)
            flat = param.data.reshape(-1)
            for i in range(flat.numel()):
                original = float(flat[i])
                flat[i] = original + step
                up = float(objective())
                flat[i] = original - step
                down = float(objective())
                flat[i] = original
                numeric = (up - down) / (2 * step)
                assert float(grad[i]) == pytest.approx(numeric, rel=1e-3, abs=1e-8)


class TestReconstructionLoss:
    def test_identical(self):
        x = torch.randn(2, 2, 2, 2)
        assert float(reconstruction_loss(x, x)) == 0.0

    def test_constant_offset(self):
        x = torch.zeros(1, 2, 2, 2)
        assert float(reconstruction_loss(x + 2.0, x)) == pytest.approx(4.0)

    def test_single_entry(self):
        a = torch.zeros(1, 2, 2, 2)
        b = a.clone()
        b[0, 0, 0, 0] = 1.0
        assert float(reconstruction_loss(a, b)) == pytest.approx(0.125)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes differ"):
            reconstruction_loss(torch.zeros(1, 2, 2, 2), torch.zeros(1, 2, 2, 3))


class TestNoiseSigma:
    def _constant_pyramid(self, value, shape=(4, 4, 4), factors=(1.0, 0.5)):
        field = np.full((2, *shape), value)
        return build_pyramid(field, factors)

    def _zero_generator_model(self, pyramid, scale):
        from voxelgan.gan import ScaleModel
        net = zeroed(ConvNet3d(2, 2, TINY_SPEC))
        disc = zeroed(ConvNet3d(2, 1, TINY_SPEC))
        noise = torch.zeros((2, *pyramid.shapes[scale]))
        return ScaleModel(net, disc, 1.0, noise)

    def test_coarsest_is_one(self):
        pyramid = self._constant_pyramid(0.3)
        assert noise_sigma(pyramid.num_scales, pyramid, []) == 1.0

    def test_perfect_reconstruction(self):
        pyramid = self._constant_pyramid(0.0)
        model = self._zero_generator_model(pyramid, scale=1)
        assert noise_sigma(0, pyramid, [model]) == 0.0

    def test_constant_offset_rmse(self):
        # zero-weight generator reconstructs 0; the real field is 0.5
        pyramid = self._constant_pyramid(0.5)
        model = self._zero_generator_model(pyramid, scale=1)
        assert noise_sigma(0, pyramid, [model]) == pytest.approx(0.5, abs=1e-7)

    def test_requires_trained_scales(self):
        pyramid = self._constant_pyramid(0.0, factors=(1.0, 0.6, 0.3))
        with pytest.raises(ValueError, match="trained first"):
            noise_sigma(0, pyramid, [])


class TestCascade:
    def test_zero_residual_collapses_to_upsampled_chain(self):
        # with zero residual weights every scale passes its input through,
        # so the finest output equals the chain of upsamplings of the
        # coarsest output
        from voxelgan.gan import ScaleModel
        shapes = [(2, 2, 2), (4, 4, 4)]
        models = [
            ScaleModel(zeroed(ConvNet3d(2, 2, TINY_SPEC)),
                       zeroed(ConvNet3d(2, 1, TINY_SPEC)), 1.0,
                       torch.zeros((2, *shape)))
            for shape in shapes
        ]
        noises = [torch.randn(2, 2, 2, 2), torch.randn(2, 4, 4, 4)]
        out = run_cascade(models, shapes, noises)
        coarse = generator_step(torch.zeros(2, 2, 2, 2), noises[0],
                                models[0].generator)
        from voxelgan.gan import upsample_field
        assert torch.equal(out, upsample_field(coarse, (4, 4, 4)))


class TestTrain:
    def test_zero_steps_returns_initialized_stack(self):
        pyramid, config, table = tiny_training_setup(steps=0)
        stack = train(pyramid, config, table)
        assert len(stack.scales) == 2
        assert stack.scales[0].sigma == 1.0
        assert stack.shapes == pyramid.shapes

    def test_deterministic(self):
        pyramid, config, table = tiny_training_setup(steps=2, seed=9)
        first = train(pyramid, config, table)
        second = train(pyramid, config, table)
        for a, b in zip(first.scales, second.scales):
            assert a.sigma == b.sigma
            assert torch.equal(a.recon_noise, b.recon_noise)
            for pa, pb in zip(a.generator.state_dict().values(),
                              b.generator.state_dict().values()):
                assert torch.equal(pa, pb)
            for pa, pb in zip(a.discriminator.state_dict().values(),
                              b.discriminator.state_dict().values()):
                assert torch.equal(pa, pb)

    def test_nan_input_aborts_with_diagnostics(self):
        pyramid, config, table = tiny_training_setup(steps=2)
        poisoned = ScalePyramid(
            factors=pyramid.factors,
            shapes=pyramid.shapes,
            fields=tuple(np.full_like(f, np.nan) for f in pyramid.fields),
        )
        with pytest.raises(TrainingDivergedError, match="scale"):
            train(poisoned, config, table)

    def test_dimension_mismatch(self):
        pyramid, config, table = tiny_training_setup()
        bad = TrainConfig(dimension=5, factors=config.factors, net=TINY_SPEC,
                          steps_per_scale=0)
        with pytest.raises(ValueError, match="dimension"):
            train(pyramid, bad, table)


class TestTrainConfig:
    def test_round_trip(self):
        config = TrainConfig(alpha=3.0, steps_per_scale=7, dimension=4,
                             factors=(1.0, 0.5), seed=11,
                             net=ConvNetSpec(blocks=3, base_channels=8))
        assert TrainConfig.from_dict(config.to_dict()) == config

    def test_validation(self):
        with pytest.raises(ValueError, match="alpha"):
            TrainConfig(alpha=-1.0)
        with pytest.raises(ValueError, match="gp_lambda"):
            TrainConfig(gp_lambda=0.0)
        with pytest.raises(ValueError, match="blocks"):
            ConvNetSpec(blocks=1)


class TestStackPersistence:
    def test_round_trip_produces_identical_samples(self, tmp_path):
        from voxelgan.generate import sample
        pyramid, config, table = tiny_training_setup(steps=2, seed=4)
        stack = train(pyramid, config, table)
        save_stack(stack, tmp_path / "stack")
        loaded = load_stack(tmp_path / "stack")
        field_a, grid_a = sample(stack, seed=42)
        field_b, grid_b = sample(loaded, seed=42)
        assert np.array_equal(field_a, field_b)
        assert grid_a == grid_b

    def test_truncated_blob(self, tmp_path):
        pyramid, config, table = tiny_training_setup(steps=0)
        stack = train(pyramid, config, table)
        save_stack(stack, tmp_path / "stack")
        blob = tmp_path / "stack" / "scale_1.bin"
        blob.write_bytes(blob.read_bytes()[:-8])
        with pytest.raises(StackFormatError, match="truncated|mismatch"):
            load_stack(tmp_path / "stack")

    def test_version_mismatch(self, tmp_path):
        import json
        pyramid, config, table = tiny_training_setup(steps=0)
        stack = train(pyramid, config, table)
        save_stack(stack, tmp_path / "stack")
        meta_path = tmp_path / "stack" / "config.json"
        meta = json.loads(meta_path.read_text())
        meta["format_version"] = 99
        meta_path.write_text(json.dumps(meta))
        with pytest.raises(StackFormatError, match="format_version"):
            load_stack(tmp_path / "stack")
