"""Multi-scale adversarial trainer for dense voxel fields.

A cascade of fully-convolutional generator/discriminator pairs is
trained one scale at a time, coarsest first.  Each generator adds a
residual to the upsampled output of the previous scale after disturbing
it with Gaussian noise; each discriminator scores overlapping patches
and is trained with the Wasserstein objective plus a gradient penalty.
A reconstruction loss with fixed noise anchors the training sample in
the latent space and its per-scale error sets the noise amplitudes.

Fields are unbatched (m, D, H, W) float32 tensors throughout.  All
randomness flows through explicit generators, so training and sampling
are bitwise reproducible for a fixed seed on a fixed platform.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .embeddings import EmbeddingTable, load_embeddings, save_embeddings
from .pyramid import DEFAULT_FACTORS, ScalePyramid, upsample_dense

STACK_FORMAT_VERSION = 1
ADAM_BETAS = (0.5, 0.999)
LEAKY_SLOPE = 0.2
INIT_STD = 0.02


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss; carries scale/step diagnostics."""


class StackFormatError(ValueError):
    """A persisted stack directory is corrupt or from another version."""


@dataclass(frozen=True)
class ConvNetSpec:
    """Shape of one scale's conv stack.

    The input is zero-padded by blocks * (kernel // 2) per side and the
    convolutions run unpadded, so the output keeps the input's spatial
    shape.
    """

    blocks: int = 5
    kernel: int = 3
    base_channels: int = 32

    def __post_init__(self):
        if self.blocks < 2:
            raise ValueError(f"blocks must be >= 2, got {self.blocks}")
        if self.kernel < 3 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and >= 3, got {self.kernel}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")


class ConvNet3d(nn.Module):
    """Conv blocks of (conv -> norm -> leaky relu), final block linear."""

    def __init__(self, in_channels: int, out_channels: int, spec: ConvNetSpec):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.spec = spec
        self.pad = spec.blocks * (spec.kernel // 2)
        layers: list[nn.Module] = []
        channels = in_channels
        for _ in range(spec.blocks - 1):
            layers.append(nn.Conv3d(channels, spec.base_channels, spec.kernel))
            layers.append(nn.BatchNorm3d(spec.base_channels, track_running_stats=False))
            layers.append(nn.LeakyReLU(LEAKY_SLOPE))
            channels = spec.base_channels
        layers.append(nn.Conv3d(channels, out_channels, spec.kernel))
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        padded = nn.functional.pad(x, [self.pad] * 6)
        return self.body(padded)


def init_net(net: nn.Module, generator: torch.Generator) -> None:
    """Seeded initialization: conv N(0, 0.02), norm gain N(1, 0.02)."""
    for module in net.modules():
        if isinstance(module, nn.Conv3d):
            module.weight.data.normal_(0.0, INIT_STD, generator=generator)
            if module.bias is not None:
                module.bias.data.zero_()
        elif isinstance(module, nn.BatchNorm3d):
            module.weight.data.normal_(1.0, INIT_STD, generator=generator)
            module.bias.data.zero_()


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters; persisted verbatim with the stack."""

    alpha: float = 10.0
    gp_lambda: float = 0.1
    steps_per_scale: int = 2000
    generator_steps: int = 3
    discriminator_steps: int = 3
    lr_generator: float = 5e-4
    lr_discriminator: float = 5e-4
    dimension: int = 32
    factors: tuple[float, ...] = DEFAULT_FACTORS
    seed: int = 0
    net: ConvNetSpec = ConvNetSpec()

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        positives = {
            "gp_lambda": self.gp_lambda,
            "generator_steps": self.generator_steps,
            "discriminator_steps": self.discriminator_steps,
            "lr_generator": self.lr_generator,
            "lr_discriminator": self.lr_discriminator,
            "dimension": self.dimension,
        }
        for name, value in positives.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.steps_per_scale < 0:
            raise ValueError(f"steps_per_scale must be >= 0, got {self.steps_per_scale}")
        object.__setattr__(self, "factors", tuple(float(f) for f in self.factors))

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["factors"] = list(self.factors)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        data["net"] = ConvNetSpec(**data.get("net", {}))
        data["factors"] = tuple(data.get("factors", DEFAULT_FACTORS))
        return cls(**data)


@dataclass
class ScaleModel:
    """One trained scale: nets, noise amplitude, fixed reconstruction noise."""

    generator: ConvNet3d
    discriminator: ConvNet3d
    sigma: float
    recon_noise: torch.Tensor

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass
class GeneratorStack:
    """Everything needed to regenerate samples deterministically.

    ``scales`` is ordered coarse to fine (scale N first); ``shapes``
    keeps the pyramid order (index = scale number, 0 = finest).
    """

    scales: list[ScaleModel]
    shapes: tuple[tuple[int, int, int], ...]
    factors: tuple[float, ...]
    dimension: int
    table: EmbeddingTable
    config: TrainConfig
    seed: int

    @property
    def num_scales(self) -> int:
        return len(self.scales) - 1

    def model_at(self, scale: int) -> ScaleModel:
        """The model for pyramid scale number ``scale`` (0 = finest)."""
        return self.scales[self.num_scales - scale]


def generator_step(prev_upsampled: torch.Tensor, noise: torch.Tensor,
                   net: nn.Module) -> torch.Tensor:
    """One scale's output: prev + residual(noise + prev).

    At the coarsest scale ``prev_upsampled`` is all zero and the
    generator sees the noise alone.
    """
    if prev_upsampled.shape != noise.shape:
        raise ValueError(
            f"prev {tuple(prev_upsampled.shape)} and noise {tuple(noise.shape)} differ"
        )
    if prev_upsampled.dim() != 4:
        raise ValueError(f"expected (m, D, H, W) field, got {tuple(prev_upsampled.shape)}")
    residual = net((noise + prev_upsampled).unsqueeze(0)).squeeze(0)
    return prev_upsampled + residual


def discriminator_score(field: torch.Tensor, net: nn.Module) -> torch.Tensor:
    """Mean of the patch score map; accepts any spatial size >= the kernel."""
    if field.dim() != 4:
        raise ValueError(f"expected (m, D, H, W) field, got {tuple(field.shape)}")
    if isinstance(net, ConvNet3d):
        if field.shape[0] != net.in_channels:
            raise ValueError(
                f"field has {field.shape[0]} channels, net expects {net.in_channels}"
            )
        if min(field.shape[1:]) < net.spec.kernel:
            raise ValueError(
                f"spatial extent {tuple(field.shape[1:])} is below the receptive "
                f"footprint ({net.spec.kernel})"
            )
    return net(field.unsqueeze(0)).mean()


def wgan_gp_loss(discriminator: Callable[[torch.Tensor], torch.Tensor],
                 real: torch.Tensor, fake: torch.Tensor, gp_lambda: float,
                 seed: int | torch.Generator = 0,
                 ) -> tuple[torch.Tensor, torch.Tensor]:
    """Critic term score(fake) - score(real) and the gradient penalty.

    The penalty is gp_lambda * (||grad_x D(x_hat)||_2 - 1)^2 at
    x_hat = eps*real + (1-eps)*fake with eps drawn uniformly from the
    seeded generator.
    """
    if real.shape != fake.shape:
        raise ValueError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} differ")
    if isinstance(seed, torch.Generator):
        generator = seed
    else:
        generator = torch.Generator().manual_seed(seed)
    eps = torch.rand((), generator=generator, dtype=real.dtype)
    x_hat = (eps * real.detach() + (1.0 - eps) * fake.detach()).requires_grad_(True)
    score = discriminator(x_hat)
    grad, = torch.autograd.grad(score, x_hat, create_graph=True)
    penalty = gp_lambda * (grad.norm(2) - 1.0) ** 2
    critic = discriminator(fake) - discriminator(real)
    return critic, penalty


def reconstruction_loss(reconstructed: torch.Tensor,
                        real: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all entries."""
    reconstructed = torch.as_tensor(reconstructed)
    real = torch.as_tensor(real)
    if reconstructed.shape != real.shape:
        raise ValueError(
            f"shapes differ: {tuple(reconstructed.shape)} vs {tuple(real.shape)}"
        )
    return ((reconstructed - real) ** 2).mean()


def upsample_field(field: torch.Tensor, target: Sequence[int]) -> torch.Tensor:
    """Trilinear upsampling of a torch field via the pyramid resampler."""
    dtype = field.dtype
    arr = field.detach().cpu().numpy().astype(np.float64)
    out = upsample_dense(arr, target)
    return torch.from_numpy(out).to(dtype)


def run_cascade(models: Sequence[ScaleModel],
                shapes: Sequence[tuple[int, int, int]],
                noises: Sequence[torch.Tensor]) -> torch.Tensor:
    """Run the coarse-to-fine chain with the given per-scale noises.

    ``models``, ``shapes`` and ``noises`` are aligned coarse to fine;
    every noise tensor fixes its scale's spatial shape.
    """
    if not (len(models) == len(shapes) == len(noises)):
        raise ValueError("models, shapes and noises must be aligned")
    prev = torch.zeros_like(noises[0])
    for model, shape, noise in zip(models, shapes, noises):
        if prev.shape[1:] != tuple(shape):
            prev = upsample_field(prev, shape)
        prev = generator_step(prev, noise, model.generator)
    return prev


def _reconstruction_output(models: Sequence[ScaleModel],
                           shapes_coarse_to_fine: Sequence[tuple[int, int, int]],
                           ) -> torch.Tensor:
    with torch.no_grad():
        return run_cascade(models, shapes_coarse_to_fine,
                           [model.recon_noise for model in models])


def noise_sigma(scale: int, pyramid: ScalePyramid,
                models: Sequence[ScaleModel]) -> float:
    """Noise amplitude for a scale about to be trained.

    The coarsest scale uses 1.0 by convention; finer scales use the RMSE
    between the scale's real field and the upsampled reconstruction from
    the scale above, so the injected detail matches what is still
    missing.  ``models`` holds the already-trained scales, coarse first.
    """
    top = pyramid.num_scales
    if scale == top:
        return 1.0
    trained = top - scale
    if len(models) < trained:
        raise ValueError(f"scales above {scale} must be trained first")
    shapes = [pyramid.shapes[top - i] for i in range(trained)]
    recon = _reconstruction_output(models[:trained], shapes)
    up = upsample_field(recon, pyramid.shapes[scale])
    real = torch.from_numpy(pyramid.fields[scale].astype(np.float32))
    return float(torch.sqrt(((up - real) ** 2).mean()))


def _fresh_prev(models: Sequence[ScaleModel],
                shapes_coarse_to_fine: Sequence[tuple[int, int, int]],
                target_shape: tuple[int, int, int],
                like: torch.Tensor,
                generator: torch.Generator) -> torch.Tensor:
    """Fresh-noise pass through the trained scales, upsampled to the target."""
    if not models:
        return torch.zeros_like(like)
    with torch.no_grad():
        noises = [
            model.sigma * torch.randn((like.shape[0], *shape), generator=generator)
            for model, shape in zip(models, shapes_coarse_to_fine)
        ]
        out = run_cascade(models, shapes_coarse_to_fine, noises)
        return upsample_field(out, target_shape)


def train(pyramid: ScalePyramid, config: TrainConfig, table: EmbeddingTable,
          on_step: Callable[[int, int, dict], None] | None = None,
          ) -> GeneratorStack:
    """Train the cascade coarsest scale first and return the frozen stack.

    Each step alternates discriminator and generator updates on the
    adversarial-plus-reconstruction objective; a finished scale's
    parameters initialize the next one.  Aborts with diagnostics on a
    non-finite loss.  ``on_step`` receives (scale, step, losses) for
    logging.
    """
    m = pyramid.channels
    if config.dimension != m:
        raise ValueError(f"config.dimension {config.dimension} != field channels {m}")
    if table.dimension != m:
        raise ValueError(f"table dimension {table.dimension} != field channels {m}")
    if tuple(config.factors) != tuple(pyramid.factors):
        raise ValueError(f"config factors {config.factors} != pyramid {pyramid.factors}")

    generator = torch.Generator().manual_seed(config.seed)
    fields = [torch.from_numpy(f.astype(np.float32)) for f in pyramid.fields]
    top = pyramid.num_scales
    models: list[ScaleModel] = []

    for scale in range(top, -1, -1):
        real = fields[scale]
        g_net = ConvNet3d(m, m, config.net)
        d_net = ConvNet3d(m, 1, config.net)
        if models:
            g_net.load_state_dict(models[-1].generator.state_dict())
            d_net.load_state_dict(models[-1].discriminator.state_dict())
        else:
            init_net(g_net, generator)
            init_net(d_net, generator)

        sigma = noise_sigma(scale, pyramid, models)
        if scale == top:
            recon_noise = sigma * torch.randn(real.shape, generator=generator)
            recon_prev = torch.zeros_like(real)
        else:
            recon_noise = torch.zeros(real.shape)
            shapes_above = [pyramid.shapes[top - i] for i in range(top - scale)]
            recon_prev = upsample_field(
                _reconstruction_output(models, shapes_above), pyramid.shapes[scale])

        opt_g = torch.optim.Adam(g_net.parameters(), lr=config.lr_generator,
                                 betas=ADAM_BETAS)
        opt_d = torch.optim.Adam(d_net.parameters(), lr=config.lr_discriminator,
                                 betas=ADAM_BETAS)
        shapes_trained = [pyramid.shapes[top - i] for i in range(len(models))]

        for step in range(config.steps_per_scale):
            losses = {}
            for _ in range(config.discriminator_steps):
                opt_d.zero_grad()
                with torch.no_grad():
                    prev = _fresh_prev(models, shapes_trained, pyramid.shapes[scale],
                                       real, generator)
                    z = sigma * torch.randn(real.shape, generator=generator)
                    fake = generator_step(prev, z, g_net)
                critic, penalty = wgan_gp_loss(
                    lambda x: discriminator_score(x, d_net),
                    real, fake, config.gp_lambda, seed=generator)
                d_loss = critic + penalty
                d_loss.backward()
                opt_d.step()
                losses["critic"] = float(critic.detach())
                losses["penalty"] = float(penalty.detach())
            for _ in range(config.generator_steps):
                opt_g.zero_grad()
                prev = _fresh_prev(models, shapes_trained, pyramid.shapes[scale],
                                   real, generator)
                z = sigma * torch.randn(real.shape, generator=generator)
                fake = generator_step(prev, z, g_net)
                adversarial = -discriminator_score(fake, d_net)
                recon_out = generator_step(recon_prev, recon_noise, g_net)
                recon = config.alpha * reconstruction_loss(recon_out, real)
                g_loss = adversarial + recon
                g_loss.backward()
                opt_g.step()
                losses["adversarial"] = float(adversarial.detach())
                losses["reconstruction"] = float(recon.detach())
            if not all(np.isfinite(v) for v in losses.values()):
                raise TrainingDivergedError(
                    f"non-finite loss at scale {scale}, step {step}: {losses}"
                )
            if on_step is not None:
                on_step(scale, step, losses)

        for p in list(g_net.parameters()) + list(d_net.parameters()):
            p.requires_grad_(False)
        models.append(ScaleModel(g_net, d_net, sigma, recon_noise))

    return GeneratorStack(
        scales=models,
        shapes=pyramid.shapes,
        factors=pyramid.factors,
        dimension=m,
        table=table,
        config=config,
        seed=config.seed,
    )


def _net_param_arrays(net: nn.Module) -> list[tuple[str, np.ndarray]]:
    return [(name, tensor.detach().cpu().numpy())
            for name, tensor in net.state_dict().items()]


def save_stack(stack: GeneratorStack, path) -> None:
    """Persist a stack as a directory.

    Layout: ``config.json`` (format version, training config, seed,
    scale shapes), ``sigmas.json``, ``embeddings.json`` (the decoding
    table) and one ``scale_<n>.bin`` per scale number n.  Each blob is
    the concatenation, as little-endian float32, of the generator's
    state-dict arrays, then the discriminator's, then the reconstruction
    noise, each array in row-major order.
    """
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": STACK_FORMAT_VERSION,
        "seed": stack.seed,
        "dimension": stack.dimension,
        "factors": list(stack.factors),
        "shapes": [list(s) for s in stack.shapes],
        "config": stack.config.to_dict(),
    }
    (directory / "config.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (directory / "sigmas.json").write_text(
        json.dumps({"coarse_to_fine": [model.sigma for model in stack.scales]})
        + "\n", encoding="utf-8")
    save_embeddings(stack.table, directory / "embeddings.json")
    top = stack.num_scales
    for i, model in enumerate(stack.scales):
        scale = top - i
        chunks = [arr.astype("<f4").tobytes()
                  for _, arr in _net_param_arrays(model.generator)]
        chunks += [arr.astype("<f4").tobytes()
                   for _, arr in _net_param_arrays(model.discriminator)]
        chunks.append(model.recon_noise.detach().cpu().numpy().astype("<f4").tobytes())
        (directory / f"scale_{scale}.bin").write_bytes(b"".join(chunks))


def _read_blob(blob: bytes, net: nn.Module, offset: int,
               path: Path) -> tuple[dict, int]:
    state = {}
    for name, tensor in net.state_dict().items():
        count = tensor.numel()
        end = offset + count * 4
        if end > len(blob):
            raise StackFormatError(f"{path}: truncated parameter blob")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        state[name] = torch.from_numpy(arr.copy().reshape(tuple(tensor.shape)))
        offset = end
    return state, offset


def load_stack(path) -> GeneratorStack:
    """Rebuild a stack saved by save_stack; inverse up to float32 bits."""
    directory = Path(path)
    config_path = directory / "config.json"
    if not config_path.is_file():
        raise StackFormatError(f"{directory}: missing config.json")
    try:
        meta = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise StackFormatError(f"{config_path}: invalid JSON: {exc.msg}") from exc
    version = meta.get("format_version")
    if version != STACK_FORMAT_VERSION:
        raise StackFormatError(
            f"{directory}: format_version {version!r} unsupported "
            f"(expected {STACK_FORMAT_VERSION})"
        )
    config = TrainConfig.from_dict(meta["config"])
    shapes = tuple(tuple(int(v) for v in s) for s in meta["shapes"])
    factors = tuple(float(f) for f in meta["factors"])
    dimension = int(meta["dimension"])
    table = load_embeddings(directory / "embeddings.json")
    sigmas = json.loads((directory / "sigmas.json").read_text(encoding="utf-8"))
    sigmas = sigmas["coarse_to_fine"]
    top = len(shapes) - 1
    if len(sigmas) != len(shapes):
        raise StackFormatError(f"{directory}: sigma count != scale count")

    scales = []
    for i in range(len(shapes)):
        scale = top - i
        blob_path = directory / f"scale_{scale}.bin"
        if not blob_path.is_file():
            raise StackFormatError(f"{directory}: missing {blob_path.name}")
        blob = blob_path.read_bytes()
        g_net = ConvNet3d(dimension, dimension, config.net)
        d_net = ConvNet3d(dimension, 1, config.net)
        g_state, offset = _read_blob(blob, g_net, 0, blob_path)
        d_state, offset = _read_blob(blob, d_net, offset, blob_path)
        noise_shape = (dimension, *shapes[scale])
        count = int(np.prod(noise_shape))
        if offset + count * 4 != len(blob):
            raise StackFormatError(f"{blob_path}: blob length mismatch")
        noise = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        g_net.load_state_dict(g_state)
        d_net.load_state_dict(d_state)
        for p in list(g_net.parameters()) + list(d_net.parameters()):
            p.requires_grad_(False)
        scales.append(ScaleModel(
            generator=g_net,
            discriminator=d_net,
            sigma=float(sigmas[i]),
            recon_noise=torch.from_numpy(noise.copy().reshape(noise_shape)),
        ))
    return GeneratorStack(
        scales=scales,
        shapes=shapes,
        factors=factors,
        dimension=dimension,
        table=table,
        config=config,
        seed=int(meta["seed"]),
    )
