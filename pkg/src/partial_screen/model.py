"""Shared backbone, decoupling head and per-task classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .augment import NoiseScales, lf_uncert
from .decouple import DecoupleParams, DiseaseEmbeddings, decouple
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    num_tasks: int = 4
    in_channels: int = 1
    channels: tuple[int, ...] = (8, 16, 32, 32)
    kernel_size: int = 3
    att_dim: int = 64
    text_dim: int = 32
    zero_init_classifier: bool = False


class Backbone:
    """Stride-2 conv + ReLU blocks; each block halves H and W (rounding up)."""

    def __init__(self, in_channels: int, channels, kernel_size: int, rng: np.random.Generator):
        self.kernel_size = kernel_size
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        cin = in_channels
        for cout in channels:
            fan_in = cin * kernel_size * kernel_size
            w = rng.standard_normal((cout, cin, kernel_size, kernel_size)) * np.sqrt(2.0 / fan_in)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(cout), requires_grad=True))
            cin = cout

    @property
    def num_blocks(self) -> int:
        return len(self.weights)

    def block(self, l: int, x: Tensor) -> Tensor:
        pad = self.kernel_size // 2
        return T.relu(T.conv2d(x, self.weights[l], self.biases[l], stride=2, padding=pad))

    def parameters(self) -> list[Tensor]:
        return [*self.weights, *self.biases]


class Classifier:
    """One linear logit per task on that task's feature vector, then a sigmoid."""

    def __init__(self, num_tasks: int, channels: int, rng: np.random.Generator, zero_init: bool = False):
        w = np.zeros((num_tasks, channels)) if zero_init else rng.standard_normal((num_tasks, channels)) * 0.1
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(num_tasks), requires_grad=True)

    def logits(self, features: Tensor) -> Tensor:
        return T.tsum(features * self.weight, axis=-1) + self.bias

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass
class UncertDraw:
    """Standard-normal draws for every LF-Uncert block: lists of [B, C_l]."""

    z_mu: list[np.ndarray]
    z_sigma: list[np.ndarray]

    @classmethod
    def sample(cls, rng: np.random.Generator, batch: int, channels) -> UncertDraw:
        z_mu, z_sigma = [], []
        for c in channels:
            z_mu.append(rng.standard_normal((batch, c)))
            z_sigma.append(rng.standard_normal((batch, c)))
        return cls(z_mu, z_sigma)


class Network:
    def __init__(self, config: ModelConfig, embeddings: DiseaseEmbeddings | None = None, seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
        self.config = config
        self.embeddings = embeddings if embeddings is not None else DiseaseEmbeddings.default(config.num_tasks, config.text_dim)
        if self.embeddings.num_tasks != config.num_tasks:
            raise ValueError(f"{self.embeddings.num_tasks} embeddings for {config.num_tasks} tasks")
        self.backbone = Backbone(config.in_channels, config.channels, config.kernel_size, rng)
        self.decouple = DecoupleParams(config.channels[-1], self.embeddings.dim, config.att_dim, rng)
        self.classifier = Classifier(config.num_tasks, config.channels[-1], rng, config.zero_init_classifier)

    def parameters(self) -> list[Tensor]:
        return [*self.backbone.parameters(), *self.decouple.parameters(), *self.classifier.parameters()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = [(f"backbone.w{l}", w) for l, w in enumerate(self.backbone.weights)]
        named += [(f"backbone.b{l}", b) for l, b in enumerate(self.backbone.biases)]
        named += [("decouple.W1", self.decouple.W1), ("decouple.W2", self.decouple.W2), ("decouple.v", self.decouple.v)]
        named += [("classifier.weight", self.classifier.weight), ("classifier.bias", self.classifier.bias)]
        return named

    def encode(
        self,
        x,
        noise: NoiseScales | None = None,
        draw: UncertDraw | None = None,
        r: float = 0.2,
    ) -> Tensor:
        """Final feature map; with ``noise`` and ``draw``, LF-Uncert follows every block."""
        h = T.as_tensor(x)
        for l in range(self.backbone.num_blocks):
            h = self.backbone.block(l, h)
            if noise is not None:
                s_mu, s_sigma = noise.scales(l)
                h = lf_uncert(h, s_mu, s_sigma, r, draw.z_mu[l], draw.z_sigma[l])
        return h

    def head(self, features: Tensor) -> tuple[Tensor, Tensor]:
        """Disease features ``[B, T, C]`` and probabilities ``[B, T]``."""
        f = decouple(features, self.embeddings, self.decouple)
        return f, T.sigmoid(self.classifier.logits(f))

    def predict(self, images: np.ndarray, batch_size: int = 200) -> np.ndarray:
        out = []
        with T.no_grad():
            for i in range(0, len(images), batch_size):
                _, probs = self.head(self.encode(images[i : i + batch_size]))
                out.append(probs.data)
        return np.concatenate(out) if out else np.zeros((0, self.config.num_tasks))
