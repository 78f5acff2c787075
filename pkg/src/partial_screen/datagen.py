"""Synthetic multi-domain, partially labelled screening data.

Each image is ``style + sum(present motifs) + white noise``. Styles live in
the lowest frequencies (a mean offset, a one-cycle cosine ramp and a smooth
random field), so domain identity is a low-frequency property. Task motifs
are Gaussian-windowed gratings well above the style cutoff, so disease
evidence is a high-frequency property.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import read_tensor, write_tensor

IMAGE_SIZE = 64
NOISE_STD = 0.05
STYLE_CUTOFF = 0.15
POSITIVE_RATE = 0.5
SMOOTH_FIELD_MAX_K = 3
MAX_TASKS = 8
MOTIF_WIDTH = 6.0  # Gaussian window scale of a task motif, pixels
MOTIF_FREQUENCIES = (0.22, 0.38)  # lowest and highest grating frequency, cycles per pixel


class DataSpecError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    domain_id: int
    offset: float
    ramp_amplitude: float
    ramp_angle: float
    smooth_gain: float


@dataclass(frozen=True)
class TaskMotif:
    task_id: int
    orientation: float
    frequency: float  # cycles per pixel
    width: float  # Gaussian window std in pixels
    contrast: float

    def render(self, cy: float, cx: float, phase: float, size: int = IMAGE_SIZE) -> np.ndarray:
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        dy, dx = yy - cy, xx - cx
        along = dx * np.cos(self.orientation) + dy * np.sin(self.orientation)
        window = np.exp(-(dx * dx + dy * dy) / (2.0 * self.width**2))
        return self.contrast * window * np.cos(2.0 * np.pi * self.frequency * along + phase)


@dataclass
class SyntheticDataset:
    name: str
    domain_id: int
    images: np.ndarray  # [N, 1, H, W]
    labels: np.ndarray  # [N, T] in {1, 0, -1}
    label_subset: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.images)


@dataclass
class DataBundle:
    train: list[SyntheticDataset]
    test: list[SyntheticDataset]  # in-domain held-out samples, same label subsets
    unseen: SyntheticDataset  # held-out domain, fully labelled
    domains: list[DomainSpec] = field(default_factory=list)
    motifs: list[TaskMotif] = field(default_factory=list)


def default_label_subsets(num_domains: int, num_tasks: int) -> list[tuple[int, ...]]:
    """Domain k labels tasks k and k+1 (mod T), wrapping so every task is covered."""
    subsets = []
    for k in range(num_domains):
        subsets.append(tuple(sorted({k % num_tasks, (k + 1) % num_tasks})))
    return subsets


def make_motifs(num_tasks: int, contrast: float = 1.0) -> list[TaskMotif]:
    """Horizontal and vertical gratings, alternating, at increasing frequencies.

    Both orientations map to themselves under a horizontal flip, so flip
    augmentation never turns one task's motif into another's.
    """
    levels = int(np.ceil(num_tasks / 2))
    freqs = np.linspace(*MOTIF_FREQUENCIES, levels) if levels > 1 else np.array([MOTIF_FREQUENCIES[0]])
    motifs = []
    for t in range(num_tasks):
        orientation = 0.5 * np.pi * (t % 2)
        motifs.append(TaskMotif(t, orientation, float(freqs[t // 2]), width=MOTIF_WIDTH, contrast=contrast))
    return motifs


def make_domains(num_train: int, seed: int, shift: float = 1.0) -> list[DomainSpec]:
    """Training domains inside a box of style parameters plus one outside it.

    The held-out domain's offset and ramp lie beyond every training value.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    offsets = np.linspace(-0.3, 0.3, num_train)
    domains = []
    for k in range(num_train):
        domains.append(
            DomainSpec(
                domain_id=k,
                offset=float(offsets[k]),
                ramp_amplitude=float(rng.uniform(0.1, 0.3)),
                ramp_angle=float(2 * np.pi * k / num_train),
                smooth_gain=float(rng.uniform(0.05, 0.15)),
            )
        )
    domains.append(
        DomainSpec(
            domain_id=num_train,
            offset=0.3 + 0.5 * shift,
            ramp_amplitude=0.3 + 0.3 * shift,
            ramp_angle=float(np.pi / num_train),
            smooth_gain=0.15 + 0.1 * shift,
        )
    )
    return domains


def style_component(domain: DomainSpec, rng: np.random.Generator, size: int = IMAGE_SIZE) -> np.ndarray:
    """Low-frequency style field for one image."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    ramp_phase = rng.uniform(0, 2 * np.pi)
    # integer wave vector nearest the ramp direction keeps the ramp periodic
    # on the grid, so it occupies a single low-frequency bin pair
    kx, ky = round(np.cos(domain.ramp_angle)), round(np.sin(domain.ramp_angle))
    along = (xx * kx + yy * ky) / size
    ramp = domain.ramp_amplitude * np.cos(2 * np.pi * along + ramp_phase)
    # random smooth field restricted to bins with |k| <= SMOOTH_FIELD_MAX_K
    kmax = SMOOTH_FIELD_MAX_K
    spec = np.zeros((size, size), dtype=complex)
    k = np.r_[0 : kmax + 1, size - kmax : size]
    spec[np.ix_(k, k)] = rng.standard_normal((k.size, k.size)) + 1j * rng.standard_normal((k.size, k.size))
    spec[0, 0] = 0.0
    field_ = np.real(np.fft.ifft2(spec))
    field_ *= domain.smooth_gain / field_.std()
    return domain.offset + ramp + field_


@dataclass
class _SampleRecipe:
    style: np.ndarray
    present: np.ndarray  # [T] bool
    centers: np.ndarray  # [T, 2]
    phases: np.ndarray  # [T]
    noise: np.ndarray


def _recipe(domain: DomainSpec, num_tasks: int, rng: np.random.Generator, size: int) -> _SampleRecipe:
    style = style_component(domain, rng, size)
    present = rng.random(num_tasks) < POSITIVE_RATE
    margin = 10.0
    centers = rng.uniform(margin, size - 1 - margin, size=(num_tasks, 2))
    phases = rng.uniform(0, 2 * np.pi, size=num_tasks)
    noise = NOISE_STD * rng.standard_normal((size, size))
    return _SampleRecipe(style, present, centers, phases, noise)


def _render(recipe: _SampleRecipe, motifs: list[TaskMotif], drop: int | None = None, size: int = IMAGE_SIZE) -> np.ndarray:
    img = recipe.style + recipe.noise
    for t, motif in enumerate(motifs):
        if recipe.present[t] and t != drop:
            cy, cx = recipe.centers[t]
            img = img + motif.render(cy, cx, recipe.phases[t], size)
    return img


def generate_domain_samples(
    domain: DomainSpec,
    motifs: list[TaskMotif],
    n: int,
    seed_seq: np.random.SeedSequence,
    size: int = IMAGE_SIZE,
) -> tuple[np.ndarray, np.ndarray]:
    """Fully labelled samples ``(images [n,1,H,W], labels [n,T])`` for a domain."""
    images = np.empty((n, 1, size, size))
    labels = np.empty((n, len(motifs)), dtype=np.int64)
    for i, child in enumerate(seed_seq.spawn(n)):
        recipe = _recipe(domain, len(motifs), np.random.default_rng(child), size)
        # float32-representable so dumps round-trip exactly
        images[i, 0] = _render(recipe, motifs, size=size).astype(np.float32)
        labels[i] = recipe.present.astype(np.int64)
    return images, labels


def twin_pair(
    domain: DomainSpec,
    motifs: list[TaskMotif],
    task: int,
    seed: int,
    size: int = IMAGE_SIZE,
) -> tuple[np.ndarray, np.ndarray]:
    """A positive image for ``task`` and its twin rendered without that motif."""
    rng = np.random.default_rng(seed)
    recipe = _recipe(domain, len(motifs), rng, size)
    recipe.present[task] = True
    return _render(recipe, motifs, size=size), _render(recipe, motifs, drop=task, size=size)


def _mask_labels(labels: np.ndarray, subset: tuple[int, ...]) -> np.ndarray:
    out = np.full_like(labels, -1)
    idx = list(subset)
    out[:, idx] = labels[:, idx]
    return out


def generate(
    seed: int,
    num_domains: int = 4,
    num_tasks: int = 4,
    n_per_dataset: int = 200,
    label_subsets: list[tuple[int, ...]] | None = None,
    n_test: int | None = None,
    n_unseen: int = 400,
    shift: float = 1.0,
    contrast: float = 1.0,
    size: int = IMAGE_SIZE,
) -> DataBundle:
    """Training datasets, matching in-domain test sets, and an unseen-domain test set."""
    if num_domains < 1:
        raise DataSpecError("need at least one training domain (plus the held-out one)")
    if n_per_dataset < 1:
        raise DataSpecError("datasets must not be empty")
    if not 1 <= num_tasks <= MAX_TASKS:
        raise DataSpecError(f"num_tasks must lie in 1..{MAX_TASKS} (motifs stop being distinguishable beyond)")
    subsets = label_subsets if label_subsets is not None else default_label_subsets(num_domains, num_tasks)
    if len(subsets) != num_domains:
        raise DataSpecError(f"{len(subsets)} label subsets for {num_domains} domains")
    covered = set()
    for s in subsets:
        for t in s:
            if not 0 <= t < num_tasks:
                raise DataSpecError(f"task {t} outside 0..{num_tasks - 1}")
        covered.update(s)
    missing = sorted(set(range(num_tasks)) - covered)
    if missing:
        raise DataSpecError(f"tasks {missing} have no labelled training source")
    n_test = n_test if n_test is not None else max(1, n_per_dataset // 2)

    domains = make_domains(num_domains, seed, shift)
    motifs = make_motifs(num_tasks, contrast)
    root = np.random.SeedSequence(seed)
    children = root.spawn(2 * num_domains + 1)
    train, test = [], []
    for k in range(num_domains):
        subset = tuple(sorted(subsets[k]))
        imgs, labs = generate_domain_samples(domains[k], motifs, n_per_dataset, children[2 * k], size)
        train.append(SyntheticDataset(f"train{k}", k, imgs, _mask_labels(labs, subset), subset))
        imgs, labs = generate_domain_samples(domains[k], motifs, n_test, children[2 * k + 1], size)
        test.append(SyntheticDataset(f"test{k}", k, imgs, _mask_labels(labs, subset), subset))
    imgs, labs = generate_domain_samples(domains[-1], motifs, n_unseen, children[-1], size)
    unseen = SyntheticDataset("unseen", num_domains, imgs, labs, tuple(range(num_tasks)))
    return DataBundle(train, test, unseen, domains, motifs)


def lowpass(images: np.ndarray, cutoff: float = STYLE_CUTOFF) -> np.ndarray:
    """Keep only bins with |k_y| <= cutoff*H/2 and |k_x| <= cutoff*W/2."""
    height, width = images.shape[-2:]
    spec = np.fft.fft2(images, axes=(-2, -1))
    ky = np.abs(np.fft.fftfreq(height) * height)
    kx = np.abs(np.fft.fftfreq(width) * width)
    keep = (ky[:, None] <= cutoff * height / 2) & (kx[None, :] <= cutoff * width / 2)
    return np.real(np.fft.ifft2(spec * keep, axes=(-2, -1)))


def high_frequency_fraction(image: np.ndarray, cutoff: float = STYLE_CUTOFF) -> float:
    """Share of spectral energy outside the low-frequency box."""
    height, width = image.shape[-2:]
    power = np.abs(np.fft.fft2(image, axes=(-2, -1))) ** 2
    ky = np.abs(np.fft.fftfreq(height) * height)
    kx = np.abs(np.fft.fftfreq(width) * width)
    low = (ky[:, None] <= cutoff * height / 2) & (kx[None, :] <= cutoff * width / 2)
    total = power.sum()
    return float(power[..., ~low].sum() / total) if total > 0 else 0.0


# -- dump format ------------------------------------------------------------

def save_dataset(ds: SyntheticDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "images.bin", "wb") as fh:
        write_tensor(fh, ds.images)
    rows = [" ".join([str(ds.domain_id), *(str(int(v)) for v in row)]) for row in ds.labels]
    (directory / "labels.txt").write_text("\n".join(rows) + "\n")
    (directory / "meta.txt").write_text(
        f"name={ds.name}\ndomain_id={ds.domain_id}\nlabel_subset={','.join(map(str, ds.label_subset))}\n"
    )


def load_dataset(directory) -> SyntheticDataset:
    directory = Path(directory)
    with open(directory / "images.bin", "rb") as fh:
        images = read_tensor(fh)
    rows = [ln.split() for ln in (directory / "labels.txt").read_text().splitlines() if ln.strip()]
    domain_ids = {int(r[0]) for r in rows}
    labels = np.array([[int(v) for v in r[1:]] for r in rows], dtype=np.int64)
    meta = dict(
        ln.split("=", 1) for ln in (directory / "meta.txt").read_text().splitlines() if "=" in ln
    )
    subset = tuple(int(v) for v in meta.get("label_subset", "").split(",") if v != "")
    if len(domain_ids) != 1:
        raise DataSpecError(f"{directory}: expected a single domain id, got {sorted(domain_ids)}")
    if len(labels) != len(images):
        raise DataSpecError(f"{directory}: {len(labels)} label rows for {len(images)} images")
    return SyntheticDataset(meta.get("name", directory.name), domain_ids.pop(), images, labels, subset)


def save_bundle(bundle: DataBundle, directory) -> None:
    directory = Path(directory)
    for ds in [*bundle.train, *bundle.test, bundle.unseen]:
        save_dataset(ds, directory / ds.name)
    names = [ds.name for ds in bundle.train]
    tests = [ds.name for ds in bundle.test]
    (directory / "manifest.txt").write_text(
        f"train={','.join(names)}\ntest={','.join(tests)}\nunseen={bundle.unseen.name}\n"
    )


def load_bundle(directory) -> DataBundle:
    directory = Path(directory)
    manifest_path = directory / "manifest.txt"
    if not manifest_path.exists():
        raise DataSpecError(f"{directory}: no manifest.txt (not a dataset dump)")
    manifest = dict(ln.split("=", 1) for ln in manifest_path.read_text().splitlines() if "=" in ln)
    train = [load_dataset(directory / n) for n in manifest["train"].split(",") if n]
    test = [load_dataset(directory / n) for n in manifest.get("test", "").split(",") if n]
    unseen = load_dataset(directory / manifest["unseen"])
    return DataBundle(train, test, unseen)
