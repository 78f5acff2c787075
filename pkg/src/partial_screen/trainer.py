"""Three-branch partially supervised training with adversarial noise scales.

Each iteration runs two updates:

1. a main step on ``L_total`` over backbone, decoupling and classifier
   parameters, with the LF-Uncert noise scales frozen;
2. an adversarial step on ``L_adv`` over the noise scales only, with every
   other parameter frozen.

Inference uses the teacher path alone.
"""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses as L
from . import tensor as T
from .augment import NoiseScales, lf_dropout
from .datagen import DataBundle, SyntheticDataset
from .decouple import DiseaseEmbeddings
from .labeling import PseudoLabels, generate_pseudo_labels, known_indicator
from .metrics import build_report, evaluate_dataset
from .model import ModelConfig, Network, UncertDraw
from .optim import AdamW, clip_grad_norm
from .tensor import Tensor, read_tensor, write_tensor

log = logging.getLogger(__name__)

BRANCH_PRESETS = {
    "teacher": (False, False, False),
    "ts1": (True, False, False),
    "ts2": (False, True, True),
    "full": (True, True, True),
}


class NumericError(FloatingPointError):
    pass


class BatchCompositionError(AssertionError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.95
    r: float = 0.2
    p: float = 0.2
    lambda1: float = 0.6
    lambda2: float = 0.05
    lambda3: float = 1.0
    batch_size: int = 16
    lr_main: float = 1e-5
    weight_decay: float = 5e-4
    lr_decay_every: int = 10
    lr_decay_factor: float = 0.1
    epochs: int = 20
    lr_adv: float = 1e-3
    noise_init: float = 0.1
    grad_clip: float = 5.0
    flip_prob: float = 0.5
    bandwidth: float | str = "median"
    enable_s1: bool = True
    enable_s2: bool = True
    enable_adversarial: bool = True
    student_view: str = "shared"  # or "independent": students get their own flip draw
    seed: int = 0

    def __post_init__(self):
        if not 0.5 < self.tau < 1.0:
            raise ValueError("tau must lie in (0.5, 1)")
        if not 0.0 < self.r <= 1.0 or not 0.0 <= self.p <= 1.0:
            raise ValueError("r must lie in (0, 1] and p in [0, 1]")
        for name in ("batch_size", "epochs", "lr_decay_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("lr_main", "lr_adv", "weight_decay", "noise_init", "grad_clip", "lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.student_view not in ("shared", "independent"):
            raise ValueError("student_view must be 'shared' or 'independent'")

    @property
    def weights(self) -> L.LossWeights:
        return L.LossWeights(self.lambda1, self.lambda2, self.lambda3)

    def with_branches(self, preset: str) -> TrainConfig:
        s1, s2, adv = BRANCH_PRESETS[preset]
        return dataclasses.replace(self, enable_s1=s1, enable_s2=s2, enable_adversarial=adv)

    def lr_at(self, epoch: int) -> float:
        return self.lr_main * self.lr_decay_factor ** (epoch // self.lr_decay_every)


@dataclass
class BranchOutputs:
    y_hat: Tensor
    f_hat: Tensor
    pseudo: PseudoLabels
    y_tilde: Tensor | None = None
    y_bar: Tensor | None = None
    f_bar: Tensor | None = None
    losses: dict[str, Tensor] = field(default_factory=dict)

    @property
    def total(self) -> Tensor:
        return self.losses["total"]


@dataclass
class TeacherTargets:
    """Teacher quantities the students are trained toward, held as constants."""

    f_hat: np.ndarray
    y_hat: np.ndarray
    pseudo: PseudoLabels


@contextlib.contextmanager
def trainable(train: list[Tensor], frozen: list[Tensor]):
    """Temporarily mark ``train`` as requiring grad and ``frozen`` as constant."""
    saved = [(p, p.requires_grad) for p in [*train, *frozen]]
    for p in frozen:
        p.requires_grad = False
    for p in train:
        p.requires_grad = True
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad = flag


def weak_augment(images: np.ndarray, rng: np.random.Generator, flip_prob: float) -> np.ndarray:
    flips = rng.random(len(images)) < flip_prob
    out = images.copy()
    out[flips] = out[flips][..., ::-1]
    return out


def forward_three_branches(
    net: Network,
    noise: NoiseScales,
    images,
    labels: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
    mask=None,
    draw: UncertDraw | None = None,
    student_images=None,
    targets: TeacherTargets | None = None,
) -> BranchOutputs:
    """Teacher, LF-Dropout student and LF-Uncert student on one batch.

    Randomness is consumed in a fixed order: the dropout mask, then the
    LF-Uncert draws. Frozen ``mask``/``draw`` skip the matching draw.
    ``targets`` replaces the teacher's pseudo labels and detached outputs
    (used when differentiating numerically around a fixed point).
    """
    labels = np.asarray(labels)
    delta = known_indicator(labels)
    x = T.as_tensor(images)
    xs = x if student_images is None else T.as_tensor(student_images)
    feat = net.encode(x)
    f_hat, y_hat = net.head(feat)
    if not np.all(np.isfinite(y_hat.data)):
        raise NumericError("non-finite teacher predictions")
    if targets is None:
        targets = TeacherTargets(f_hat.data, y_hat.data, generate_pseudo_labels(y_hat.data, delta, config.tau))
    pseudo = targets.pseudo
    out = BranchOutputs(y_hat=y_hat, f_hat=f_hat, pseudo=pseudo)
    zero = Tensor(0.0)
    teacher_ce = L.partial_bce(y_hat, labels)
    s1_ce = zero
    s2_total = zero

    if config.enable_s1:
        feat_s1 = feat if student_images is None else net.encode(xs)
        if mask is None:
            dropped = lf_dropout(feat_s1, config.r, config.p, rng=rng)
        else:
            dropped = lf_dropout(feat_s1, config.r, config.p, mask=mask)
        _, y_tilde = net.head(dropped)
        out.y_tilde = y_tilde
        s1_ce = L.partial_bce(y_tilde, pseudo)
        out.losses["s1_ce"] = s1_ce

    if config.enable_s2:
        if draw is None:
            draw = UncertDraw.sample(rng, x.shape[0], net.config.channels)
        feat_s2 = net.encode(xs, noise, draw, config.r)
        f_bar, y_bar = net.head(feat_s2)
        out.y_bar, out.f_bar = y_bar, f_bar
        weights = config.weights
        s2_cls = L.s2_classification_loss(y_bar, labels, pseudo, weights)
        mmd = L.mmd_loss(targets.f_hat, f_bar, L.KernelConfig(config.bandwidth))
        kl = L.kl_known(targets.y_hat, y_bar, delta)
        s2_total = L.s2_total_loss(s2_cls, mmd, kl, weights)
        out.losses.update(s2_cls=s2_cls, mmd=mmd, kl=kl, s2_total=s2_total)

    out.losses["teacher_ce"] = teacher_ce
    out.losses["total"] = L.total_loss(teacher_ce, s1_ce, s2_total)
    return out


def assert_equal_composition(domain_ids: np.ndarray, num_datasets: int, batch_size: int) -> None:
    counts = np.bincount(domain_ids, minlength=num_datasets)
    expected = batch_size // num_datasets
    if len(domain_ids) != batch_size or np.any(counts != expected):
        raise BatchCompositionError(f"batch per-dataset counts {counts.tolist()}, expected {expected} each")


@dataclass
class StepResult:
    loss: float
    grad_norm: float
    skipped: bool = False
    draw: UncertDraw | None = None


class Trainer:
    def __init__(self, config: TrainConfig, model_config: ModelConfig = ModelConfig(), embeddings=None, net: Network | None = None):
        self.config = config
        self.net = net if net is not None else Network(model_config, embeddings, seed=config.seed)
        self.noise = NoiseScales(list(self.net.config.channels), init=config.noise_init)
        self.opt = AdamW(self.net.parameters(), lr=config.lr_main, weight_decay=config.weight_decay)
        self.adv_opt = AdamW(self.noise.parameters(), lr=config.lr_adv, weight_decay=0.0)
        self.epoch = 0  # number of completed epochs
        self.skipped_steps = 0

    # -- single updates -------------------------------------------------
    def main_step(self, images, labels, rng: np.random.Generator, **frozen) -> StepResult:
        params = self.net.parameters()
        with trainable(params, self.noise.parameters()):
            out = forward_three_branches(self.net, self.noise, images, labels, self.config, rng, **frozen)
            loss = out.total
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite L_total ({value}) at epoch {self.epoch}")
            self.opt.zero_grad()
            loss.backward()
        return self._apply(self.opt, params, value)

    def adversarial_loss(self, images, labels, draw: UncertDraw) -> Tensor:
        feat = self.net.encode(images, self.noise, draw, self.config.r)
        _, y_bar = self.net.head(feat)
        return L.adversarial_loss(labels, y_bar)

    def adversarial_step(self, images, labels, rng: np.random.Generator | None = None, draw: UncertDraw | None = None) -> StepResult:
        if draw is None:
            draw = UncertDraw.sample(rng, len(images), self.net.config.channels)
        params = self.noise.parameters()
        with trainable(params, self.net.parameters()):
            loss = self.adversarial_loss(images, labels, draw)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite L_adv ({value}) at epoch {self.epoch}")
            self.adv_opt.zero_grad()
            if loss.requires_grad:
                loss.backward()
        result = self._apply(self.adv_opt, params, value)
        result.draw = draw
        return result

    def _snap_to_float32(self) -> None:
        """Round every stored array to float32 so checkpoints are lossless."""
        for p in [*self.net.parameters(), *self.noise.parameters()]:
            p.data = p.data.astype(np.float32).astype(np.float64)
        for opt in (self.opt, self.adv_opt):
            opt.m = [a.astype(np.float32).astype(np.float64) for a in opt.m]
            opt.v = [a.astype(np.float32).astype(np.float64) for a in opt.v]

    def _apply(self, opt: AdamW, params: list[Tensor], value: float) -> StepResult:
        norm = clip_grad_norm(params, self.config.grad_clip) if self.config.grad_clip > 0 else 0.0
        if not np.isfinite(norm):
            log.warning("skipping step: non-finite gradient norm")
            self.skipped_steps += 1
            opt.zero_grad()
            return StepResult(value, norm, skipped=True)
        opt.step()
        opt.zero_grad()
        return StepResult(value, norm)

    # -- training loop ----------------------------------------------------
    def iterate_batches(self, datasets: list[SyntheticDataset], rng: np.random.Generator):
        """Batches holding exactly ``batch_size / K`` samples from each of K datasets."""
        k = len(datasets)
        per = self.config.batch_size // k
        orders = [rng.permutation(len(ds)) for ds in datasets]
        n_iter = int(np.ceil(max(len(ds) for ds in datasets) / per))
        for it in range(n_iter):
            imgs, labs, dom = [], [], []
            for j, (ds, order) in enumerate(zip(datasets, orders)):
                idx = np.take(order, np.arange(it * per, (it + 1) * per), mode="wrap")
                imgs.append(ds.images[idx])
                labs.append(ds.labels[idx])
                dom.append(np.full(per, j))
            domain_ids = np.concatenate(dom)
            assert_equal_composition(domain_ids, k, self.config.batch_size)
            yield np.concatenate(imgs), np.concatenate(labs), domain_ids

    def train_epoch(self, datasets: list[SyntheticDataset]) -> dict:
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1000 + self.epoch]))
        self.opt.lr = cfg.lr_at(self.epoch)
        totals, advs = [], []
        for images, labels, _ in self.iterate_batches(datasets, rng):
            x = weak_augment(images, rng, cfg.flip_prob)
            frozen = {}
            if cfg.student_view == "independent":
                frozen["student_images"] = weak_augment(images, rng, cfg.flip_prob)
            totals.append(self.main_step(x, labels, rng, **frozen).loss)
            if cfg.enable_s2 and cfg.enable_adversarial:
                advs.append(self.adversarial_step(x, labels, rng).loss)
        self.epoch += 1
        self._snap_to_float32()
        return {
            "epoch": self.epoch,
            "L_total": float(np.mean(totals)),
            "L_adv": float(np.mean(advs)) if advs else 0.0,
            "lr": self.opt.lr,
        }

    def fit(self, bundle: DataBundle, out_dir=None, eval_every_epoch: bool = True) -> FitResult:
        cfg = self.config
        if not bundle.train:
            raise ValueError("fit needs at least one training dataset")
        for ds in bundle.train:
            if len(ds) == 0:
                raise ValueError(f"dataset {ds.name} is empty")
        if cfg.batch_size % len(bundle.train):
            raise ValueError(f"batch size {cfg.batch_size} not divisible by {len(bundle.train)} datasets")
        out_dir = Path(out_dir) if out_dir is not None else None
        records = []
        while self.epoch < cfg.epochs:
            rec = self.train_epoch(bundle.train)
            if eval_every_epoch or self.epoch == cfg.epochs:
                rec.update(flatten_report(evaluate_bundle(self.net, bundle)))
            records.append(rec)
            log.info(format_log_line(rec))
            if out_dir is not None:
                out_dir.mkdir(parents=True, exist_ok=True)
                with open(out_dir / "train.log", "a") as fh:
                    fh.write(format_log_line(rec) + "\n")
        # weights are float32-exact after every epoch, so these numbers are
        # exactly what eval on the saved checkpoint reports
        report = evaluate_bundle(self.net, bundle)
        ckpt = None
        if out_dir is not None:
            ckpt = out_dir / "checkpoint"
            save_checkpoint(self, ckpt)
            (out_dir / "metrics.json").write_text(json.dumps(report, indent=2, sort_keys=True))
        return FitResult(records, report, ckpt)

    def infer(self, images: np.ndarray) -> np.ndarray:
        return infer(self.net, images)


@dataclass
class FitResult:
    log: list[dict]
    report: dict
    checkpoint: Path | None


def fit(config: TrainConfig, bundle: DataBundle, out_dir=None, model_config: ModelConfig = ModelConfig(), embeddings=None) -> FitResult:
    return Trainer(config, model_config, embeddings).fit(bundle, out_dir)


def infer(net: Network, images: np.ndarray) -> np.ndarray:
    """Teacher-path probabilities; no augmentation, no randomness."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1] != net.config.in_channels:
        raise CheckpointError(f"images {images.shape} do not match model input channels {net.config.in_channels}")
    return net.predict(images)


def evaluate_bundle(net: Network, bundle: DataBundle) -> dict:
    in_domain = {ds.name: evaluate_dataset(infer(net, ds.images), ds.labels) for ds in bundle.test}
    ood = {bundle.unseen.name: evaluate_dataset(infer(net, bundle.unseen.images), bundle.unseen.labels)}
    return {"in_domain": build_report(in_domain), "out_of_domain": build_report(ood)}


def flatten_report(report: dict) -> dict:
    flat = {}
    for split in ("in_domain", "out_of_domain"):
        rep = report[split]
        flat[f"{split}_mF"] = rep["mF"]
        flat[f"{split}_mQWK"] = rep["mQWK"]
        for name, tasks in rep["datasets"].items():
            f_vals = [v["F"] for v in tasks.values()]
            k_vals = [v["QWK"] for v in tasks.values()]
            flat[f"{name}_mF"] = 100.0 * float(np.mean(f_vals))
            flat[f"{name}_mQWK"] = 100.0 * float(np.mean(k_vals))
    return flat


def format_log_line(rec: dict) -> str:
    parts = []
    for key, value in rec.items():
        parts.append(f"{key}={value:.6g}" if isinstance(value, float) else f"{key}={value}")
    return " ".join(parts)


# -- checkpoints ----------------------------------------------------------------

def config_hash(config: TrainConfig, model_config: ModelConfig) -> str:
    blob = json.dumps({"train": dataclasses.asdict(config), "model": dataclasses.asdict(model_config)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _named_state(trainer: Trainer) -> list[tuple[str, np.ndarray]]:
    state = [(name, p.data) for name, p in trainer.net.named_parameters()]
    state += [(f"noise.raw_mu{l}", t.data) for l, t in enumerate(trainer.noise.raw_mu)]
    state += [(f"noise.raw_sigma{l}", t.data) for l, t in enumerate(trainer.noise.raw_sigma)]
    state += [(f"opt.{i}", a) for i, a in enumerate(trainer.opt.state_arrays())]
    state += [(f"adv_opt.{i}", a) for i, a in enumerate(trainer.adv_opt.state_arrays())]
    state.append(("embeddings", trainer.net.embeddings.matrix))
    return state


def save_checkpoint(trainer: Trainer, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    state = _named_state(trainer)
    mc = trainer.net.config
    manifest = {
        "config_hash": config_hash(trainer.config, mc),
        "epoch": trainer.epoch,
        "seed": trainer.config.seed,
        "opt_steps": trainer.opt.step_count,
        "adv_opt_steps": trainer.adv_opt.step_count,
        "model": json.dumps(dataclasses.asdict(mc), sort_keys=True),
        "train": json.dumps(dataclasses.asdict(trainer.config), sort_keys=True),
        "tensors": ",".join(name for name, _ in state),
    }
    (directory / "manifest.txt").write_text("".join(f"{k}={v}\n" for k, v in manifest.items()))
    with open(directory / "tensors.bin", "wb") as fh:
        for _, arr in state:
            write_tensor(fh, arr)
    return directory


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.txt"
    if not path.exists():
        raise CheckpointError(f"{directory}: missing manifest.txt")
    return dict(ln.split("=", 1) for ln in path.read_text().splitlines() if "=" in ln)


def load_checkpoint(directory, config: TrainConfig | None = None) -> Trainer:
    directory = Path(directory)
    manifest = read_manifest(directory)
    model_dict = json.loads(manifest["model"])
    model_dict["channels"] = tuple(model_dict["channels"])
    mc = ModelConfig(**model_dict)
    saved_cfg = json.loads(manifest["train"])
    cfg = config if config is not None else TrainConfig(**saved_cfg)
    names = manifest["tensors"].split(",")
    arrays = {}
    with open(directory / "tensors.bin", "rb") as fh:
        for name in names:
            arrays[name] = read_tensor(fh)
    trainer = Trainer(cfg, mc, DiseaseEmbeddings(arrays["embeddings"]))
    for name, p in trainer.net.named_parameters():
        if arrays[name].shape != p.shape:
            raise CheckpointError(f"{name}: checkpoint shape {arrays[name].shape} != model {p.shape}")
        p.data = arrays[name]
    for l, t in enumerate(trainer.noise.raw_mu):
        t.data = arrays[f"noise.raw_mu{l}"]
    for l, t in enumerate(trainer.noise.raw_sigma):
        t.data = arrays[f"noise.raw_sigma{l}"]
    n_opt = len(trainer.opt.params)
    trainer.opt.load_state_arrays([arrays[f"opt.{i}"] for i in range(2 * n_opt)], int(manifest["opt_steps"]))
    n_adv = len(trainer.adv_opt.params)
    trainer.adv_opt.load_state_arrays([arrays[f"adv_opt.{i}"] for i in range(2 * n_adv)], int(manifest["adv_opt_steps"]))
    trainer.epoch = int(manifest["epoch"])
    return trainer
