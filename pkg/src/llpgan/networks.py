"""Discriminator and generator architectures.

The discriminator is a K-logit network read through an over-parameterized
(K+1)-way softmax: a constant zero logit is appended for the fake class, so
``probs[..., K]`` is the fake probability. A designated intermediate layer is
tapped for the feature vector used by feature matching. Architectures are
declarative (:class:`ArchitectureSpec`), so they can be loaded from JSON
config files and stored inside checkpoints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from .exceptions import ConfigurationError, NumericDomainError

LAYER_KINDS = {
    "dense",
    "conv",
    "transposed_conv",
    "dropout",
    "global_mean_pool",
    "flatten",
    "reshape",
}
ACTIVATIONS = {"relu", "tanh", "none"}


def overparam_softmax(logits):
    """Softmax over ``logits`` with a constant zero appended as the fake logit.

    Accepts a single length-K vector or a batch of them; the result has one
    more entry per row, the last being the fake-class probability.
    """
    arr = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericDomainError("logits contain non-finite entries")
    padded = np.concatenate([arr, np.zeros(arr.shape[:-1] + (1,))], axis=-1)
    padded -= padded.max(axis=-1, keepdims=True)
    exp = np.exp(padded)
    return exp / exp.sum(axis=-1, keepdims=True)


def _torch_overparam_softmax(logits: torch.Tensor) -> torch.Tensor:
    zero = logits.new_zeros(logits.shape[:-1] + (1,))
    return torch.softmax(torch.cat([logits, zero], dim=-1), dim=-1)


@dataclass(frozen=True)
class LayerSpec:
    """One declarative layer: operation kind plus its parameters."""

    kind: str
    width: int | None = None
    kernel: int | None = None
    stride: int = 1
    padding: int = 0
    output_padding: int = 0
    batch_norm: bool = False
    rate: float = 0.0
    activation: str = "relu"
    shape: tuple | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.kind in ("dense", "conv", "transposed_conv") and (
            self.width is None or self.width < 1
        ):
            raise ConfigurationError(f"{self.kind} layer needs a positive width")
        if self.kind in ("conv", "transposed_conv") and (self.kernel is None or self.kernel < 1):
            raise ConfigurationError(f"{self.kind} layer needs a positive kernel")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.kind == "reshape" and not self.shape:
            raise ConfigurationError("reshape layer needs a target shape")
        if self.kind in ("dropout", "flatten", "reshape"):
            object.__setattr__(self, "activation", "none")
        if self.shape is not None:
            object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer list plus the feature tap, data shape, and generator noise size.

    ``input_shape`` is the shape of real data: what a discriminator consumes
    and what a generator must produce. Generators start from ``noise_dim``.
    """

    input_shape: tuple
    layers: tuple
    feature_tap: int | None = None
    noise_dim: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        layers = tuple(
            layer if isinstance(layer, LayerSpec) else LayerSpec(**layer)
            for layer in self.layers
        )
        if not layers:
            raise ConfigurationError("architecture needs at least one layer")
        object.__setattr__(self, "layers", layers)
        if self.feature_tap is not None and not 0 <= self.feature_tap < len(layers):
            raise ConfigurationError(
                f"feature tap {self.feature_tap} does not address any of {len(layers)} layers"
            )
        if self.noise_dim is not None and self.noise_dim < 1:
            raise ConfigurationError("noise_dim must be positive")

    def to_dict(self):
        spec = asdict(self)
        spec["layers"] = [
            {k: v for k, v in layer.items() if v is not None} for layer in spec["layers"]
        ]
        return {k: v for k, v in spec.items() if v is not None}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        return cls(
            input_shape=tuple(data["input_shape"]),
            layers=tuple(data["layers"]),
            feature_tap=data.get("feature_tap"),
            noise_dim=data.get("noise_dim"),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def load_architecture(path) -> ArchitectureSpec:
    """Read an :class:`ArchitectureSpec` from a JSON config file."""
    with open(path, "r", encoding="utf-8") as fh:
        return ArchitectureSpec.from_dict(json.load(fh))


def propagate_shapes(layers, start_shape):
    """Per-layer output shapes from ``start_shape``, or a ConfigurationError."""
    shape = tuple(start_shape)
    shapes = []
    for i, layer in enumerate(layers):
        if layer.kind == "dense":
            shape = (layer.width,)
        elif layer.kind == "conv":
            shape = _conv_shape(shape, layer, i)
        elif layer.kind == "transposed_conv":
            shape = _tconv_shape(shape, layer, i)
        elif layer.kind == "global_mean_pool":
            if len(shape) != 3:
                raise ConfigurationError(f"layer {i}: global_mean_pool needs a CHW input")
            shape = (shape[0],)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif layer.kind == "reshape":
            if int(np.prod(shape)) != int(np.prod(layer.shape)):
                raise ConfigurationError(f"layer {i}: cannot reshape {shape} into {layer.shape}")
            shape = layer.shape
        # dropout keeps the shape
        shapes.append(shape)
    return shapes


def _conv_shape(shape, layer, i):
    if len(shape) != 3:
        raise ConfigurationError(f"layer {i}: conv needs a CHW input, got {shape}")
    _, h, w = shape
    oh = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
    ow = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
    if oh < 1 or ow < 1:
        raise ConfigurationError(f"layer {i}: conv output collapses to {oh}x{ow}")
    return (layer.width, oh, ow)


def _tconv_shape(shape, layer, i):
    if len(shape) != 3:
        raise ConfigurationError(f"layer {i}: transposed_conv needs a CHW input, got {shape}")
    _, h, w = shape
    oh = (h - 1) * layer.stride - 2 * layer.padding + layer.kernel + layer.output_padding
    ow = (w - 1) * layer.stride - 2 * layer.padding + layer.kernel + layer.output_padding
    if oh < 1 or ow < 1:
        raise ConfigurationError(f"layer {i}: transposed_conv output collapses to {oh}x{ow}")
    return (layer.width, oh, ow)


@dataclass
class DiscriminatorOutput:
    """Per-instance discriminator readout.

    ``probs`` is the (K+1)-way distribution (last entry = fake class),
    ``features`` the tapped intermediate layer, ``logits`` the K pre-softmax
    values before the fixed zero is appended.
    """

    probs: torch.Tensor
    features: torch.Tensor
    logits: torch.Tensor


class _Block(nn.Module):
    """One spec layer realized as op (+ batch norm) (+ activation)."""

    def __init__(self, layer: LayerSpec, in_shape):
        super().__init__()
        ops = []
        self.kind = layer.kind
        self.pre_flatten = False
        self.reshape_to = layer.shape if layer.kind == "reshape" else None
        if layer.kind == "dense":
            self.pre_flatten = len(in_shape) > 1
            ops.append(nn.Linear(int(np.prod(in_shape)), layer.width))
            if layer.batch_norm:
                ops.append(nn.BatchNorm1d(layer.width))
        elif layer.kind == "conv":
            ops.append(
                nn.Conv2d(in_shape[0], layer.width, layer.kernel, layer.stride, layer.padding)
            )
            if layer.batch_norm:
                ops.append(nn.BatchNorm2d(layer.width))
        elif layer.kind == "transposed_conv":
            ops.append(
                nn.ConvTranspose2d(
                    in_shape[0],
                    layer.width,
                    layer.kernel,
                    layer.stride,
                    layer.padding,
                    layer.output_padding,
                )
            )
            if layer.batch_norm:
                ops.append(nn.BatchNorm2d(layer.width))
        elif layer.kind == "dropout":
            ops.append(nn.Dropout(layer.rate))
        if layer.activation == "relu":
            ops.append(nn.ReLU())
        elif layer.activation == "tanh":
            ops.append(nn.Tanh())
        self.ops = nn.Sequential(*ops)

    def forward(self, x):
        if self.kind == "global_mean_pool":
            return self.ops(x.mean(dim=(2, 3)))
        if self.kind == "flatten":
            return self.ops(torch.flatten(x, 1))
        if self.kind == "reshape":
            return self.ops(x.reshape(x.shape[0], *self.reshape_to))
        if self.pre_flatten:
            x = torch.flatten(x, 1)
        return self.ops(x)


class _SpecNet(nn.Module):
    """Module list built from a layer spec, starting at ``in_shape``."""

    def __init__(self, layers, in_shape):
        super().__init__()
        self.shapes = propagate_shapes(layers, in_shape)
        blocks = []
        shape = tuple(in_shape)
        for layer, out_shape in zip(layers, self.shapes):
            blocks.append(_Block(layer, shape))
            shape = out_shape
        self.blocks = nn.ModuleList(blocks)

    def run(self, x, tap=None):
        tapped = None
        for i, block in enumerate(self.blocks):
            x = block(x)
            if tap is not None and i == tap:
                tapped = torch.flatten(x, 1)
        return x, tapped


class Discriminator(nn.Module):
    """Maps an input batch to per-instance probs, features, and logits."""

    def __init__(self, spec: ArchitectureSpec, k: int, seed: int = 0):
        super().__init__()
        if k < 2:
            raise ConfigurationError(f"k must be >= 2, got {k}")
        if spec.feature_tap is None:
            raise ConfigurationError("discriminator spec needs a feature tap index")
        self.net = _SpecNet(spec.layers, spec.input_shape)
        if self.net.shapes[-1] != (k,):
            raise ConfigurationError(
                f"discriminator spec ends in shape {self.net.shapes[-1]}, expected ({k},)"
            )
        self.spec = spec
        self.k = k
        self.feature_dim = int(np.prod(self.net.shapes[spec.feature_tap]))
        seed_parameters(self, seed)

    def forward(self, x) -> DiscriminatorOutput:
        if tuple(x.shape[1:]) != self.spec.input_shape:
            raise ConfigurationError(
                f"input shape {tuple(x.shape[1:])} does not match spec {self.spec.input_shape}"
            )
        logits, features = self.net.run(x, tap=self.spec.feature_tap)
        return DiscriminatorOutput(
            probs=_torch_overparam_softmax(logits), features=features, logits=logits
        )


class Generator(nn.Module):
    """Maps standard-normal noise to samples shaped like the data, in [-1, 1]."""

    def __init__(self, spec: ArchitectureSpec, seed: int = 0):
        super().__init__()
        if spec.noise_dim is None:
            raise ConfigurationError("generator spec needs a noise_dim")
        self.net = _SpecNet(spec.layers, (spec.noise_dim,))
        out = self.net.shapes[-1]
        if out != spec.input_shape and int(np.prod(out)) != int(np.prod(spec.input_shape)):
            raise ConfigurationError(
                f"generator spec produces shape {out}, expected {spec.input_shape}"
            )
        self.spec = spec
        self.noise_dim = spec.noise_dim
        self.output_shape = spec.input_shape
        seed_parameters(self, seed)

    def forward(self, z) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.noise_dim:
            raise ConfigurationError(
                f"noise batch must be (m, {self.noise_dim}), got {tuple(z.shape)}"
            )
        out, _ = self.net.run(z)
        return out.reshape(z.shape[0], *self.output_shape)


def seed_parameters(model: nn.Module, seed: int):
    """Fan-in-scaled normal init for weights, zeros for biases, seeded."""
    gen = torch.Generator().manual_seed(int(seed))
    for module in model.modules():
        if isinstance(module, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
            weight = module.weight
            if isinstance(module, nn.Linear):
                fan_in = weight.shape[1]
            elif isinstance(module, nn.Conv2d):
                fan_in = weight.shape[1] * weight.shape[2] * weight.shape[3]
            else:
                fan_in = weight.shape[0] * weight.shape[2] * weight.shape[3]
            with torch.no_grad():
                weight.normal_(0.0, 1.0 / math.sqrt(fan_in), generator=gen)
                if module.bias is not None:
                    module.bias.zero_()
        elif isinstance(module, (nn.BatchNorm1d, nn.BatchNorm2d)):
            with torch.no_grad():
                module.weight.fill_(1.0)
                module.bias.zero_()


def build_discriminator(spec: ArchitectureSpec, k: int, seed: int = 0) -> Discriminator:
    return Discriminator(spec, k, seed=seed)


def build_generator(spec: ArchitectureSpec, seed: int = 0) -> Generator:
    return Generator(spec, seed=seed)


def discriminator_forward(model: Discriminator, images, train: bool = False):
    """Structured forward pass; evaluation mode unless ``train`` is set."""
    was_training = model.training
    model.train(train)
    try:
        images = torch.as_tensor(images, dtype=next(model.parameters()).dtype)
        return model(images)
    finally:
        model.train(was_training)


# ---------------------------------------------------------------------------
# Preset specs
# ---------------------------------------------------------------------------


def mlp_discriminator_spec(input_dim: int, k: int, hidden=(64, 64)) -> ArchitectureSpec:
    """Dense discriminator for flat feature vectors; tap = last hidden layer."""
    layers = [LayerSpec("dense", width=h) for h in hidden]
    layers.append(LayerSpec("dense", width=k, activation="none"))
    return ArchitectureSpec(
        input_shape=(input_dim,), layers=tuple(layers), feature_tap=len(hidden) - 1
    )


def mlp_generator_spec(output_dim: int, noise_dim: int = 16, hidden=(64, 64)) -> ArchitectureSpec:
    layers = [LayerSpec("dense", width=h, batch_norm=True) for h in hidden]
    layers.append(LayerSpec("dense", width=output_dim, activation="tanh"))
    return ArchitectureSpec(input_shape=(output_dim,), layers=tuple(layers), noise_dim=noise_dim)


def mnist_discriminator_spec(k: int = 10) -> ArchitectureSpec:
    layers = (
        LayerSpec("conv", width=32, kernel=5, stride=2, padding=2),
        LayerSpec("conv", width=64, kernel=3, stride=2, padding=1),
        LayerSpec("conv", width=32, kernel=1),
        LayerSpec("dense", width=1024),
        LayerSpec("dense", width=k, activation="none"),
    )
    return ArchitectureSpec(input_shape=(1, 28, 28), layers=layers, feature_tap=3)


def mnist_generator_spec(noise_dim: int = 100) -> ArchitectureSpec:
    layers = (
        LayerSpec("dense", width=500, batch_norm=True),
        LayerSpec("dense", width=500, batch_norm=True),
        LayerSpec("dense", width=784, batch_norm=True, activation="tanh"),
        LayerSpec("reshape", shape=(1, 28, 28)),
    )
    return ArchitectureSpec(input_shape=(1, 28, 28), layers=layers, noise_dim=noise_dim)


def cifar10_discriminator_spec(k: int = 10) -> ArchitectureSpec:
    """Also serves SVHN and CIFAR-100, with the final dense width set to K."""
    layers = (
        LayerSpec("dropout", rate=0.2),
        LayerSpec("conv", width=64, kernel=3, padding=1),
        LayerSpec("conv", width=64, kernel=3, padding=1),
        LayerSpec("conv", width=64, kernel=3, stride=2, padding=1),
        LayerSpec("dropout", rate=0.5),
        LayerSpec("conv", width=128, kernel=3, padding=1),
        LayerSpec("conv", width=128, kernel=3, padding=1),
        LayerSpec("conv", width=128, kernel=3, stride=2, padding=1),
        LayerSpec("dropout", rate=0.5),
        LayerSpec("conv", width=256, kernel=3, padding=1),
        LayerSpec("conv", width=128, kernel=1),
        LayerSpec("conv", width=64, kernel=1),
        LayerSpec("global_mean_pool", activation="none"),
        LayerSpec("dense", width=k, activation="none"),
    )
    return ArchitectureSpec(input_shape=(3, 32, 32), layers=layers, feature_tap=12)


def cifar10_generator_spec(noise_dim: int = 100) -> ArchitectureSpec:
    layers = (
        LayerSpec("dense", width=4 * 4 * 512, batch_norm=True),
        LayerSpec("reshape", shape=(512, 4, 4)),
        LayerSpec(
            "transposed_conv", width=256, kernel=5, stride=2, padding=2, output_padding=1,
            batch_norm=True,
        ),
        LayerSpec(
            "transposed_conv", width=128, kernel=5, stride=2, padding=2, output_padding=1,
            batch_norm=True,
        ),
        LayerSpec(
            "transposed_conv", width=3, kernel=5, stride=2, padding=2, output_padding=1,
            activation="tanh",
        ),
    )
    return ArchitectureSpec(input_shape=(3, 32, 32), layers=layers, noise_dim=noise_dim)
