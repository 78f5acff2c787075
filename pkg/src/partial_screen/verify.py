"""Property suites behind the ``verify`` command.

Each check returns a :class:`CheckResult` with the measured quantity and the
tolerance it was held to. Functions under test are looked up through their
modules at call time, so a patched implementation is what gets checked.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import augment as A
from . import decouple as D
from . import labeling as LB
from . import losses as L
from . import metrics as M
from . import oracles as O
from . import spectral as S
from . import tensor as T
from .gradcheck import check_gradients
from .model import ModelConfig, Network, UncertDraw
from .tensor import Tensor


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""


def _result(name, measured, tolerance, detail="", strict_less=True) -> CheckResult:
    ok = bool(measured < tolerance) if strict_less else bool(measured <= tolerance)
    return CheckResult(name, ok, float(measured), float(tolerance), detail=detail)


# -- numerical core -------------------------------------------------------------

def fft_roundtrip(n: int = 100, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_rt = worst_pv = 0.0
    for _ in range(n):
        shape = (int(rng.integers(1, 9)), int(rng.integers(1, 33)), int(rng.integers(1, 33)))
        x = rng.standard_normal(shape)
        spec = S.fft2_centered(Tensor(x))
        back = S.ifft2_centered(spec).data
        worst_rt = max(worst_rt, float(np.max(np.abs(back - x))))
        energy = float(np.sum(x * x))
        spectral_energy = float(np.sum(spec.amplitude.data**2)) / (shape[1] * shape[2])
        worst_pv = max(worst_pv, abs(spectral_energy - energy) / energy)
    return [
        _result("fft_roundtrip_max_error", worst_rt, 1e-5),
        _result("parseval_relative_error", worst_pv, 1e-4),
    ]


def dft_oracle(seed: int = 1) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 5, 4))
    spec = S.fft2_centered(Tensor(x))
    direct = O.dft2_direct(x)
    err = max(
        float(np.max(np.abs(spec.amplitude.data - np.abs(direct)))),
        float(np.max(np.abs(S.ifft2_centered(spec).data - np.real(O.idft2_direct(direct))))),
    )
    x4 = rng.standard_normal((1, 4, 4))
    mask = A.draw_drop_mask(x4.shape, 0.5, 0.5, rng)
    err_drop = float(np.max(np.abs(A.lf_dropout(x4, 0.5, 0.5, mask=mask).data - O.dropout_direct(x4, mask.values))))
    x2 = rng.standard_normal((2, 4, 4))
    zm, zs = rng.standard_normal(2), rng.standard_normal(2)
    out = A.lf_uncert(x2, 0.1, 0.1, 0.5, zm, zs).data
    err_unc = float(np.max(np.abs(out - O.uncert_direct(x2, 0.1, 0.1, 0.5, zm, zs))))
    return [
        _result("dft_matches_direct_summation", err, 1e-9),
        _result("lf_dropout_matches_direct_oracle", err_drop, 1e-6),
        _result("lf_uncert_matches_direct_oracle", err_unc, 1e-6),
    ]


# -- gradients ------------------------------------------------------------------

def _gradient_problems(seed: int = 2) -> dict[str, tuple[Callable, list]]:
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((3, 4))
    params = D.DecoupleParams(3, 4, att_dim=5, rng=rng)

    def decoupled(F, W1, W2, v):
        params.W1, params.W2, params.v = W1, W2, v
        f = D.decouple(F, emb, params)
        return T.tsum(f * Tensor(np.linspace(-1, 1, f.size).reshape(f.shape)))

    labels = np.array([[1, 0, -1], [-1, 1, 0]])
    probs = rng.uniform(0.1, 0.9, (2, 3))
    pseudo = LB.PseudoLabels(np.array([[-1, -1, 1], [0, -1, -1]]))
    delta = LB.known_indicator(labels)
    teacher_f = rng.standard_normal((2, 3, 4))
    teacher_p = rng.uniform(0.1, 0.9, (2, 3))
    x = rng.standard_normal((2, 6, 6))
    mask = A.draw_drop_mask(x.shape, 0.5, 0.3, rng)
    zm, zs = rng.standard_normal(2), rng.standard_normal(2)

    def weighted(out):
        return T.tsum(out * Tensor(np.cos(np.arange(out.size)).reshape(out.shape)))

    return {
        "decouple": (decoupled, [rng.standard_normal((2, 3, 4, 4)), params.W1.data, params.W2.data, params.v.data]),
        "partial_bce": (lambda p: L.partial_bce(p, labels), [probs]),
        "s2_classification": (lambda p: L.s2_classification_loss(p, labels, pseudo), [probs]),
        "mmd": (lambda f: L.mmd_loss(teacher_f, f, L.KernelConfig(1.5)), [rng.standard_normal((2, 3, 4))]),
        "kl_known": (lambda p: L.kl_known(teacher_p, p, delta), [probs]),
        "adversarial": (lambda p: L.adversarial_loss(labels, p), [probs]),
        "lf_dropout_frozen_mask": (lambda a: weighted(A.lf_dropout(a, 0.5, 0.3, mask=mask)), [x]),
        "lf_uncert_frozen_z": (
            lambda a, sm, ss: weighted(A.lf_uncert(a, T.softplus(sm), T.softplus(ss), 0.5, zm, zs)),
            [x, rng.standard_normal(2), rng.standard_normal(2)],
        ),
    }


def total_loss_problem(seed: int = 3):
    """``L_total`` of a two-block network as a function of every parameter.

    Masks, LF-Uncert draws, the kernel bandwidth and the teacher targets
    (pseudo labels and the detached outputs) are frozen at the starting
    point, matching the stop-gradient the analytic pass applies.
    """
    from .trainer import TeacherTargets, TrainConfig, forward_three_branches

    rng = np.random.default_rng(seed)
    mc = ModelConfig(num_tasks=3, channels=(3, 4), att_dim=4, text_dim=3)
    net = Network(mc, seed=seed)
    noise = A.NoiseScales(list(mc.channels), init=0.3)
    images = rng.standard_normal((2, 1, 16, 16))
    labels = np.array([[1, -1, 0], [-1, 0, 1]])
    cfg = TrainConfig(bandwidth=2.0)
    mask = A.draw_drop_mask((2, mc.channels[-1], 4, 4), cfg.r, 0.5, rng)
    draw = UncertDraw.sample(rng, 2, mc.channels)
    named = net.named_parameters()
    n_net = len(named)
    with T.no_grad():
        f_hat, y_hat = net.head(net.encode(images))
    # confident pseudo labels on two of the unknown entries
    pseudo = LB.PseudoLabels(np.array([[-1, 1, -1], [0, -1, -1]]))
    targets = TeacherTargets(f_hat.data, y_hat.data, pseudo)

    def f(*tensors):
        _bind(net, tensors[:n_net])
        noise.raw_mu = list(tensors[n_net : n_net + len(mc.channels)])
        noise.raw_sigma = list(tensors[n_net + len(mc.channels) :])
        out = forward_three_branches(net, noise, images, labels, cfg, rng, mask=mask, draw=draw, targets=targets)
        return out.total

    inputs = [p.data.copy() for _, p in named]
    inputs += [t.data.copy() for t in noise.raw_mu] + [t.data.copy() for t in noise.raw_sigma]
    return f, inputs


def _bind(net: Network, tensors) -> None:
    it = iter(tensors)
    bb = net.backbone
    bb.weights = [next(it) for _ in bb.weights]
    bb.biases = [next(it) for _ in bb.biases]
    net.decouple.W1, net.decouple.W2, net.decouple.v = next(it), next(it), next(it)
    net.classifier.weight, net.classifier.bias = next(it), next(it)


def gradient_suite(tol: float = 1e-4, include_total: bool = True) -> list[CheckResult]:
    results = []
    problems = _gradient_problems()
    if include_total:
        problems["total_loss_two_blocks"] = total_loss_problem()
    for name, (f, inputs) in problems.items():
        report = check_gradients(f, inputs, eps=1e-5)
        results.append(_result(f"gradcheck_{name}", report.max_rel_error, tol))
    return results


# -- augmentations ------------------------------------------------------------------

def augmentation_identities(seed: int = 4) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 4, 12, 10))
    scale = float(np.max(np.abs(x)))
    zeros = np.zeros((3, 4))
    z = rng.standard_normal((3, 4))
    err_p0 = float(np.max(np.abs(A.lf_dropout(x, 0.2, 0.0, rng=rng).data - x)))
    err_s0 = float(np.max(np.abs(A.lf_uncert(x, 0.0, 0.0, 0.2, z, z).data - x)))
    err_z0 = float(np.max(np.abs(A.lf_uncert(x, 0.7, 0.7, 0.2, zeros, zeros).data - x)))
    const = np.full((1, 2, 8, 8), 3.0)
    err_const = float(np.max(np.abs(A.lf_uncert(const, 0.5, 0.5, 0.5, np.zeros((1, 2)), np.zeros((1, 2))).data - const)))
    full_drop = float(np.max(np.abs(A.lf_dropout(x, 1.0, 1.0, rng=rng).data))) / scale

    spec = S.fft2_centered(Tensor(x))
    region = A.LowFreqRegion(12, 10, 0.2).mask()
    dropped = A.dropout_spectrum(spec, A.draw_drop_mask(x.shape, 0.2, 0.5, rng))
    restyled = A.uncert_spectrum(spec, 0.5, 0.5, 0.2, z, z)
    changed = 0
    for aug in (dropped, restyled):
        changed += int(np.sum(aug.amplitude.data[..., ~region] != spec.amplitude.data[..., ~region]))
        changed += int(np.sum(aug.phase.data != spec.phase.data))
    return [
        _result("lf_dropout_p0_identity", err_p0, 1e-5),
        _result("lf_uncert_zero_scale_identity", err_s0, 1e-5),
        _result("lf_uncert_zero_draw_identity", err_z0, 1e-5),
        _result("lf_uncert_constant_map_identity", err_const, 1e-5),
        _result("lf_dropout_full_relative_max", full_drop, 1e-5),
        _result("high_freq_and_phase_bins_changed", changed, 0, strict_less=False),
    ]


# -- labels and masking -------------------------------------------------------------

def pseudo_label_table(tau: float = 0.95) -> list[CheckResult]:
    grid = np.unique(np.r_[np.linspace(0, 1, 101), tau, 1 - tau, np.nextafter(tau, 1), np.nextafter(tau, 0),
                           np.nextafter(1 - tau, 0), np.nextafter(1 - tau, 1)])
    mismatches = 0
    for delta in (0, 1):
        d = np.full(grid.shape, delta)
        got = LB.generate_pseudo_labels(grid, d, tau).y_psd
        want = np.array([O.pseudo_label_rule(delta, p, tau) for p in grid])
        mismatches += int(np.sum(got != want))
    return [_result("pseudo_label_truth_table_mismatches", mismatches, 0, strict_less=False)]


def masking_invariants(seed: int = 5) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    labels = np.array([[1, -1, 0], [-1, -1, 1]])
    pseudo = np.array([[-1, -1, -1], [1, -1, -1]])
    logits = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    probs = T.sigmoid(logits)
    loss = L.partial_bce(probs, labels) + L.partial_bce(probs, pseudo)
    loss.backward()
    inactive = (labels == -1) & (pseudo == -1)
    leak = float(np.max(np.abs(logits.grad[inactive])))

    empty = np.full((2, 3), -1)
    worst = 0.0
    for fn in (
        lambda p: L.partial_bce(p, empty),
        lambda p: L.kl_known(np.full((2, 3), 0.5), p, np.zeros((2, 3))),
        lambda p: L.adversarial_loss(empty, p),
    ):
        x = Tensor(rng.uniform(0.1, 0.9, (2, 3)), requires_grad=True)
        out = fn(x)
        if out.requires_grad:
            out.backward()
        grad = 0.0 if x.grad is None else float(np.max(np.abs(x.grad)))
        worst = max(worst, abs(out.item()), grad)
    return [
        _result("masked_logit_gradient", leak, 0.0, strict_less=False),
        _result("empty_mask_loss_and_gradient", worst, 0.0, strict_less=False),
    ]


def loss_oracles(seed: int = 6, trials: int = 50) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    err_bce = err_mmd = err_bw = 0.0
    for _ in range(trials):
        shape = (int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        probs = rng.uniform(0, 1, shape)
        labels = rng.integers(-1, 2, shape)
        err_bce = max(err_bce, abs(L.partial_bce(probs, labels).item() - O.partial_bce_loop(probs, labels)))
        ft, fs = rng.standard_normal(shape + (3,)), rng.standard_normal(shape + (3,))
        h = L.median_bandwidth(ft, fs)
        err_bw = max(err_bw, abs(h - O.median_distance_loop(ft, fs)))
        err_mmd = max(err_mmd, abs(L.mmd_loss(ft, fs, L.KernelConfig(h)).item() - O.mmd_loop(ft, fs, h)))
    return [
        _result("partial_bce_matches_loop", err_bce, 1e-10),
        _result("mmd_matches_loop", err_mmd, 1e-10),
        _result("median_bandwidth_matches_loop", err_bw, 1e-10),
    ]


# -- metrics ----------------------------------------------------------------------------

def metric_oracles(trials: int = 1000, seed: int = 7) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    err_f = err_k = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 40))
        preds = rng.integers(0, 2, n)
        labels = rng.integers(0, 2, n)
        err_f = max(err_f, abs(M.macro_f(preds, labels) - O.macro_f_loop(preds, labels)))
        err_k = max(err_k, abs(M.qwk(preds, labels) - O.qwk_loop(preds, labels)))
    averaged = M.aggregate({("A", "glaucoma"): 75.7, ("B", "glaucoma"): 89.5})
    return [
        _result("macro_f_matches_confusion_oracle", err_f, 1e-12),
        _result("qwk_matches_confusion_oracle", err_k, 1e-12),
        _result("two_dataset_average_example", abs(averaged - 82.6), 1e-12),
    ]


SUITES: dict[str, Callable[[], list[CheckResult]]] = {
    "fft": fft_roundtrip,
    "dft_oracle": dft_oracle,
    "gradients": gradient_suite,
    "augmentation": augmentation_identities,
    "pseudo_labels": pseudo_label_table,
    "masking": masking_invariants,
    "losses": loss_oracles,
    "metrics": metric_oracles,
}


def run_all(suites=None) -> dict:
    """Run the named suites (all by default) and return a JSON-ready report."""
    names = list(SUITES) if suites is None else list(suites)
    checks = []
    for name in names:
        start = time.perf_counter()
        results = SUITES[name]()
        elapsed = (time.perf_counter() - start) / max(len(results), 1)
        for r in results:
            r.seconds = elapsed
            r.detail = r.detail or name
            checks.append(asdict(r))
    return {"passed": all(c["passed"] for c in checks), "checks": checks}
