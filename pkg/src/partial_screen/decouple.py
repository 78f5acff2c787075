"""Text-guided semantic decoupling.

Every disease embedding ``d_t`` attends over the spatial positions of the
last feature map; the attention logits are ``v . tanh((W1 F_hw) * (W2 d_t))``
and the disease feature is the attention-weighted sum of ``F_hw``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor


class EmbeddingFileError(ValueError):
    pass


@dataclass
class DiseaseEmbeddings:
    matrix: np.ndarray  # [T, d_text], frozen

    def __post_init__(self):
        # rounded to float32 so a checkpoint stores the exact values in use
        self.matrix = np.asarray(self.matrix, dtype=np.float32).astype(np.float64)
        if self.matrix.ndim != 2:
            raise EmbeddingFileError(f"embeddings must be 2-D, got {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise EmbeddingFileError("embeddings contain non-finite values")

    @property
    def num_tasks(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def default(cls, num_tasks: int, dim: int = 32, seed: int = 1234) -> DiseaseEmbeddings:
        """Seeded unit rows, mutually orthogonal while ``num_tasks <= dim``."""
        rng = np.random.default_rng(seed)
        if num_tasks <= dim:
            q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
            return cls(q[:num_tasks])
        rows = rng.standard_normal((num_tasks, dim))
        return cls(rows / np.linalg.norm(rows, axis=1, keepdims=True))

    @classmethod
    def load(cls, path) -> DiseaseEmbeddings:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
        if not lines:
            raise EmbeddingFileError(f"{path}: empty embedding file")
        try:
            n_tasks, dim = (int(v) for v in lines[0].split())
            rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
        except ValueError as exc:
            raise EmbeddingFileError(f"{path}: {exc}") from None
        if len(rows) != n_tasks or any(len(r) != dim for r in rows):
            raise EmbeddingFileError(f"{path}: header says {n_tasks}x{dim}, body disagrees")
        return cls(np.array(rows))

    def save(self, path) -> None:
        body = "\n".join(" ".join(repr(float(v)) for v in row) for row in self.matrix)
        Path(path).write_text(f"{self.num_tasks} {self.dim}\n{body}\n")


class DecoupleParams:
    def __init__(self, channels: int, text_dim: int, att_dim: int = 64, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W1 = Tensor(rng.standard_normal((att_dim, channels)) / np.sqrt(channels), requires_grad=True)
        self.W2 = Tensor(rng.standard_normal((att_dim, text_dim)) / np.sqrt(text_dim), requires_grad=True)
        self.v = Tensor(rng.standard_normal(att_dim) / np.sqrt(att_dim), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.W1, self.W2, self.v]


def attention_scores(F, embeddings, params: DecoupleParams) -> Tensor:
    """Attention maps ``[..., T, H*W]`` for features ``F[..., C, H, W]``.

    ``embeddings`` may be a :class:`DiseaseEmbeddings`, a ``[T, d]`` array,
    or a single ``[d]`` vector (then the task axis is dropped and the result
    is ``[..., H, W]``).
    """
    F = T.as_tensor(F)
    emb = embeddings.matrix if isinstance(embeddings, DiseaseEmbeddings) else np.asarray(embeddings, dtype=np.float64)
    single = emb.ndim == 1
    if single:
        emb = emb[None, :]
    lead = F.shape[:-3]
    channels, height, width = F.shape[-3:]
    flat = T.reshape(F, lead + (channels, height * width))
    proj_f = T.matmul(params.W1, flat)  # [..., A, P]
    proj_d = T.matmul(params.W2, Tensor(emb.T))  # [A, T]
    att_dim, n_tasks = proj_d.shape
    joint = T.tanh(
        T.reshape(proj_f, lead + (att_dim, 1, height * width))
        * T.reshape(proj_d, (att_dim, n_tasks, 1))
    )  # [..., A, T, P]
    logits = T.tsum(joint * T.reshape(params.v, (att_dim, 1, 1)), axis=-3)  # [..., T, P]
    alpha = T.softmax(logits, axis=-1)
    if single:
        return T.reshape(alpha, lead + (height, width))
    return alpha


def decouple(F, embeddings, params: DecoupleParams) -> Tensor:
    """Disease-aware feature vectors ``[..., T, C]``."""
    F = T.as_tensor(F)
    lead = F.shape[:-3]
    channels, height, width = F.shape[-3:]
    alpha = attention_scores(F, embeddings, params)
    flat = T.reshape(F, lead + (channels, height * width))
    return T.matmul(alpha, T.transpose(flat, tuple(range(len(lead))) + (len(lead) + 1, len(lead))))
