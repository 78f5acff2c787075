import dataclasses

import numpy as np
import pytest

from partial_screen import losses as L
from partial_screen import oracles as O
from partial_screen import tensor as T
from partial_screen.augment import draw_drop_mask
from partial_screen.datagen import DataBundle, SyntheticDataset
from partial_screen.labeling import generate_pseudo_labels, known_indicator
from partial_screen.model import ModelConfig, Network, UncertDraw
from partial_screen.trainer import (
    BatchCompositionError,
    CheckpointError,
    TrainConfig,
    Trainer,
    assert_equal_composition,
    forward_three_branches,
    infer,
    load_checkpoint,
    save_checkpoint,
)

SMALL = ModelConfig(num_tasks=3, channels=(4, 6), att_dim=8, text_dim=8)


def _batch(rng, b=4, tasks=3, size=16):
    images = rng.standard_normal((b, 1, size, size))
    labels = rng.integers(-1, 2, (b, tasks))
    labels[:, 0] = rng.integers(0, 2, b)  # at least one known entry per row
    return images, labels


def _snapshot(tensors):
    return [t.data.copy() for t in tensors]


def _same(before, tensors):
    return all(np.array_equal(a, t.data) for a, t in zip(before, tensors))


def test_branches_agree_when_augmentations_are_off(rng):
    cfg = TrainConfig(p=0.0, noise_init=0.0)
    trainer = Trainer(cfg, SMALL)
    images, labels = _batch(rng)
    out = forward_three_branches(trainer.net, trainer.noise, images, labels, cfg, rng)
    np.testing.assert_allclose(out.y_tilde.data, out.y_hat.data, atol=1e-5)
    np.testing.assert_allclose(out.y_bar.data, out.y_hat.data, atol=1e-5)


def test_forward_is_deterministic_for_a_seed():
    cfg = TrainConfig()
    images, labels = _batch(np.random.default_rng(3))
    values = []
    for _ in range(2):
        trainer = Trainer(cfg, SMALL)
        out = forward_three_branches(trainer.net, trainer.noise, images, labels, cfg, np.random.default_rng(9))
        values.append(out.total.item())
    assert values[0] == values[1]


def test_total_loss_equals_sum_of_oracle_components(rng):
    cfg = TrainConfig(bandwidth=1.5, noise_init=0.3)
    trainer = Trainer(cfg, SMALL)
    images, labels = _batch(rng, b=2)
    mask = draw_drop_mask((2, SMALL.channels[-1], 4, 4), cfg.r, 0.5, rng)
    draw = UncertDraw.sample(rng, 2, SMALL.channels)
    out = forward_three_branches(trainer.net, trainer.noise, images, labels, cfg, rng, mask=mask, draw=draw)
    y_hat, y_tilde, y_bar = out.y_hat.data, out.y_tilde.data, out.y_bar.data
    delta = known_indicator(labels)
    pseudo = generate_pseudo_labels(y_hat, delta, cfg.tau).y_psd
    teacher = np.clip(y_hat, L.EPS, 1 - L.EPS)
    student = np.clip(y_bar, L.EPS, 1 - L.EPS)
    kl = sum(teacher[i, t] * np.log(teacher[i, t] / student[i, t]) for i, t in zip(*np.nonzero(delta))) / delta.sum()
    expected = (
        O.partial_bce_loop(y_hat, labels)
        + O.partial_bce_loop(y_tilde, pseudo)
        + O.partial_bce_loop(y_bar, labels)
        + cfg.lambda1 * O.partial_bce_loop(y_bar, pseudo)
        + cfg.lambda2 * O.mmd_loop(out.f_hat.data, out.f_bar.data, 1.5)
        + cfg.lambda3 * kl
    )
    assert out.total.item() == pytest.approx(expected, abs=1e-6)


def test_main_step_descends_and_leaves_noise_untouched(rng):
    cfg = TrainConfig(lr_main=1e-5, noise_init=0.3)
    trainer = Trainer(cfg, SMALL)
    images, labels = _batch(rng)
    mask = draw_drop_mask((4, SMALL.channels[-1], 4, 4), cfg.r, cfg.p, rng)
    draw = UncertDraw.sample(rng, 4, SMALL.channels)

    def loss():
        with T.no_grad():
            return forward_three_branches(trainer.net, trainer.noise, images, labels, cfg, rng, mask=mask, draw=draw).total.item()

    noise_before = _snapshot(trainer.noise.parameters())
    before = loss()
    trainer.main_step(images, labels, rng, mask=mask, draw=draw)
    assert loss() <= before
    assert _same(noise_before, trainer.noise.parameters())


def test_zero_learning_rate_keeps_parameters_bitwise(rng):
    trainer = Trainer(TrainConfig(lr_main=0.0, weight_decay=0.0), SMALL)
    images, labels = _batch(rng)
    before = _snapshot(trainer.net.parameters())
    trainer.main_step(images, labels, rng)
    assert _same(before, trainer.net.parameters())


def test_adversarial_step_only_moves_noise_scales(rng):
    trainer = Trainer(TrainConfig(), SMALL)
    images, labels = _batch(rng)
    theta = _snapshot(trainer.net.parameters())
    noise = _snapshot(trainer.noise.parameters())
    trainer.adversarial_step(images, labels, rng)
    assert _same(theta, trainer.net.parameters())
    assert not _same(noise, trainer.noise.parameters())


def test_frozen_z_adversarial_steps_push_student_away_from_truth(rng):
    trainer = Trainer(TrainConfig(lr_adv=1e-3, noise_init=0.5), SMALL)
    images, labels = _batch(rng, b=8)
    labels[:, 1] = 1
    draw = UncertDraw.sample(rng, 8, SMALL.channels)
    adv, kl = [], []
    for _ in range(11):
        with T.no_grad():
            value = trainer.adversarial_loss(images, labels, draw).item()
        adv.append(value)
        kl.append(-value)  # one-term KL(y || y_bar) on known tasks
        trainer.adversarial_step(images, labels, draw=draw)
    assert all(b <= a + 1e-8 for a, b in zip(adv, adv[1:]))
    assert all(b >= a - 1e-6 for a, b in zip(kl, kl[1:]))
    assert adv[-1] < adv[0]


def test_pseudo_label_losses_send_no_gradient_to_teacher_outputs(rng):
    cfg = TrainConfig(tau=0.51)
    trainer = Trainer(cfg, SMALL)
    images, labels = _batch(rng)
    labels[:, 1:] = -1
    out = forward_three_branches(trainer.net, trainer.noise, images, labels, cfg, rng)
    assert out.pseudo.zeta.sum() > 0
    y_hat = out.y_hat
    y_hat.requires_grad = True
    unknown = L.partial_bce(out.y_tilde, out.pseudo) + L.partial_bce(out.y_bar, out.pseudo)
    unknown.backward()
    assert y_hat.grad is None or not np.any(y_hat.grad)


def test_batches_hold_equal_samples_per_dataset(tiny_bundle):
    trainer = Trainer(TrainConfig(batch_size=8), ModelConfig())
    rng = np.random.default_rng(0)
    seen = 0
    for _, _, domains in trainer.iterate_batches(tiny_bundle.train, rng):
        np.testing.assert_array_equal(np.bincount(domains, minlength=4), [2, 2, 2, 2])
        seen += 1
    assert seen == 4
    with pytest.raises(BatchCompositionError):
        assert_equal_composition(np.array([0, 0, 1, 2]), 4, 4)


def test_teacher_preset_ignores_student_settings(tiny_bundle):
    base = TrainConfig(epochs=1, batch_size=8, lr_main=1e-3).with_branches("teacher")
    other = dataclasses.replace(base, p=0.9, noise_init=2.0, lambda1=0.0, lambda2=3.0, lr_adv=0.5)
    a = Trainer(base).fit(tiny_bundle, eval_every_epoch=False)
    b = Trainer(other).fit(tiny_bundle, eval_every_epoch=False)
    assert a.log[0]["L_total"] == b.log[0]["L_total"]
    assert a.report == b.report


def test_full_runs_are_deterministic(tiny_bundle):
    cfg = TrainConfig(epochs=1, batch_size=8, lr_main=1e-3)
    a = Trainer(cfg).fit(tiny_bundle)
    b = Trainer(cfg).fit(tiny_bundle)
    assert a.log == b.log and a.report == b.report


def test_infer_is_the_teacher_path(rng):
    cfg = TrainConfig(p=0.0, noise_init=0.0)
    trainer = Trainer(cfg, SMALL)
    images, labels = _batch(rng)
    first, second = infer(trainer.net, images), infer(trainer.net, images)
    assert np.array_equal(first, second)
    out = forward_three_branches(trainer.net, trainer.noise, images, labels, cfg, rng)
    np.testing.assert_allclose(first, out.y_hat.data, atol=1e-6)


def test_zero_initialised_classifier_gives_one_half(rng):
    net = Network(dataclasses.replace(SMALL, zero_init_classifier=True))
    np.testing.assert_array_equal(infer(net, rng.standard_normal((3, 1, 16, 16))), 0.5)


def test_infer_rejects_wrong_input_channels(rng):
    with pytest.raises(CheckpointError):
        infer(Network(SMALL), rng.standard_normal((2, 3, 16, 16)))


def test_non_finite_input_aborts_the_step(rng):
    from partial_screen.trainer import NumericError

    trainer = Trainer(TrainConfig(), SMALL)
    images, labels = _batch(rng)
    images[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericError):
        trainer.main_step(images, labels, rng)


def test_fit_rejects_bad_datasets(tiny_bundle):
    empty = SyntheticDataset("empty", 0, np.zeros((0, 1, 64, 64)), np.zeros((0, 4), dtype=np.int64), (0,))
    bad = DataBundle([*tiny_bundle.train[:3], empty], tiny_bundle.test, tiny_bundle.unseen)
    with pytest.raises(ValueError, match="empty"):
        Trainer(TrainConfig(epochs=1)).fit(bad)
    with pytest.raises(ValueError, match="divisible"):
        Trainer(TrainConfig(epochs=1, batch_size=6)).fit(tiny_bundle)


def test_checkpoint_roundtrip_and_resume(tiny_bundle, tmp_path):
    cfg = TrainConfig(epochs=2, batch_size=8, lr_main=1e-3)
    straight = Trainer(cfg).fit(tiny_bundle, tmp_path / "a")
    log_lines = (tmp_path / "a" / "train.log").read_text().splitlines()
    assert len(log_lines) == 2

    loaded = load_checkpoint(straight.checkpoint)
    assert loaded.epoch == 2
    for (name, p), (_, q) in zip(Trainer(cfg).net.named_parameters(), loaded.net.named_parameters()):
        assert p.shape == q.shape, name

    half = Trainer(dataclasses.replace(cfg, epochs=1))
    half.fit(tiny_bundle, tmp_path / "b")
    resumed = load_checkpoint(tmp_path / "b" / "checkpoint", cfg).fit(tiny_bundle, tmp_path / "c")
    assert resumed.report == straight.report


def test_checkpoint_shape_mismatch_is_rejected(tiny_bundle, tmp_path):
    trainer = Trainer(TrainConfig(), SMALL)
    save_checkpoint(trainer, tmp_path / "ck")
    manifest = (tmp_path / "ck" / "manifest.txt").read_text()
    (tmp_path / "ck" / "manifest.txt").write_text(manifest.replace('"att_dim": 8', '"att_dim": 9'))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "ck")
