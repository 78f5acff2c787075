import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from partial_screen import augment as A
from partial_screen import oracles as O
from partial_screen import spectral as S
from partial_screen import tensor as T
from partial_screen.gradcheck import check_gradients
from partial_screen.tensor import Tensor


@given(st.integers(1, 40), st.integers(1, 40), st.floats(0.01, 1.0))
def test_region_geometry(h, w, r):
    region = A.LowFreqRegion(h, w, r)
    mask = region.mask()
    side_h = max(1, min(h, int(np.floor(r * h + 0.5))))
    side_w = max(1, min(w, int(np.floor(r * w + 0.5))))
    assert mask.sum() == region.size == side_h * side_w
    assert mask[h // 2, w // 2]
    rows, cols = np.nonzero(mask)
    assert rows.max() - rows.min() + 1 == side_h
    assert cols.max() - cols.min() + 1 == side_w


@pytest.mark.parametrize("r", [0.0, -0.1, 1.5])
def test_region_rejects_bad_fraction(r):
    with pytest.raises(A.AugmentError):
        A.LowFreqRegion(8, 8, r)


def test_drop_mask_is_one_outside_region_and_binary_inside(rng):
    mask = A.draw_drop_mask((3, 4, 10, 10), 0.4, 0.5, rng).values
    region = A.LowFreqRegion(10, 10, 0.4).mask()
    assert np.all(mask[..., ~region] == 1)
    assert set(np.unique(mask[..., region])) <= {0.0, 1.0}
    # independent draws per sample and channel
    assert not np.array_equal(mask[0, 0], mask[1, 1])


@pytest.mark.parametrize("p,r", [(-0.1, 0.2), (1.1, 0.2), (0.2, 0.0), (0.2, 1.2)])
def test_lf_dropout_rejects_out_of_range(p, r, rng):
    with pytest.raises(A.AugmentError):
        A.lf_dropout(np.ones((1, 4, 4)), r, p, rng=rng)


def test_lf_dropout_identity_full_drop_and_oracle(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    np.testing.assert_allclose(A.lf_dropout(x, 0.2, 0.0, rng=rng).data, x, atol=1e-5)
    out = A.lf_dropout(x, 1.0, 1.0, rng=rng).data
    assert np.max(np.abs(out)) < 1e-5 * np.max(np.abs(x))
    x4 = rng.standard_normal((1, 4, 4))
    mask = A.draw_drop_mask(x4.shape, 0.5, 0.5, np.random.default_rng(3))
    np.testing.assert_allclose(A.lf_dropout(x4, 0.5, 0.5, mask=mask).data, O.dropout_direct(x4, mask.values), atol=1e-6)


@given(st.integers(0, 1000), st.floats(0.05, 1.0), st.floats(0.0, 1.0))
def test_region_path_equals_full_spectrum_path(seed, r, p):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2, 7, 6))
    mask = A.draw_drop_mask(x.shape, r, p, rng)
    a = A.lf_dropout(x, r, p, mask=mask, method="region").data
    b = A.lf_dropout(x, r, p, mask=mask, method="full").data
    np.testing.assert_allclose(a, b, atol=1e-10)
    z = rng.standard_normal((2, 2, 2))
    a = A.lf_uncert(x, 0.3, 0.2, r, z[0], z[1], method="region").data
    b = A.lf_uncert(x, 0.3, 0.2, r, z[0], z[1], method="full").data
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_augmentations_preserve_phase_and_high_frequencies(rng):
    x = rng.standard_normal((2, 3, 9, 12))
    spec = S.fft2_centered(Tensor(x))
    outside = ~A.LowFreqRegion(9, 12, 0.3).mask()
    z = rng.standard_normal((2, 3))
    for aug in (
        A.dropout_spectrum(spec, A.draw_drop_mask(x.shape, 0.3, 0.5, rng)),
        A.uncert_spectrum(spec, 2.0, 2.0, 0.3, z, z),
    ):
        np.testing.assert_array_equal(aug.phase.data, spec.phase.data)
        np.testing.assert_array_equal(aug.amplitude.data[..., outside], spec.amplitude.data[..., outside])


def test_dropout_expectation_scales_region_by_keep_rate():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 6, 6))
    p, r, n = 0.3, 0.5, 10_000
    spec = S.fft2_centered(Tensor(x))
    masks = A.draw_drop_mask((n,) + x.shape, r, p, rng).values
    samples = spec.amplitude.data * masks
    expected = spec.amplitude.data * np.where(A.LowFreqRegion(6, 6, r).mask(), 1 - p, 1.0)
    stderr = samples.std(axis=0) / np.sqrt(n)
    gap = np.abs(samples.mean(axis=0) - expected)
    assert np.all(gap <= 3 * stderr + 1e-9 * np.abs(expected))


def test_lowfreq_stats_examples(rng):
    const = np.full((2, 6, 6), 4.0)
    stats = A.lowfreq_stats(const, 0.5)
    np.testing.assert_allclose(stats.mu.data, 4.0)
    np.testing.assert_allclose(stats.sigma.data, 0.0)
    two = np.zeros((1, 2, 2))
    two[0] = [[1.0, 3.0], [3.0, 1.0]]
    stats = A.lowfreq_stats(two, 1.0)
    assert stats.mu.data[0] == pytest.approx(2.0)
    assert stats.sigma.data[0] == pytest.approx(1.0)
    amp = rng.uniform(0, 2, (3, 6, 6))
    stats = A.lowfreq_stats(amp, 0.5)
    mu, sigma = O.two_pass_stats(amp[:, 2:5, 2:5])
    np.testing.assert_allclose(stats.mu.data, mu, atol=1e-7)
    np.testing.assert_allclose(stats.sigma.data, sigma, atol=1e-7)


def test_lf_uncert_identities_and_oracle(rng):
    x = rng.standard_normal((2, 4, 8, 8))
    z = rng.standard_normal((2, 4))
    np.testing.assert_allclose(A.lf_uncert(x, 0.0, 0.0, 0.2, z, z).data, x, atol=1e-5)
    np.testing.assert_allclose(A.lf_uncert(x, 0.5, 0.5, 0.2, 0 * z, 0 * z).data, x, atol=1e-5)
    const = np.full((1, 2, 6, 6), -1.5)
    np.testing.assert_allclose(A.lf_uncert(const, 0.5, 0.5, 0.5, np.zeros((1, 2)), np.zeros((1, 2))).data, const, atol=1e-5)
    x2 = rng.standard_normal((2, 4, 4))
    zm, zs = rng.standard_normal(2), rng.standard_normal(2)
    np.testing.assert_allclose(A.lf_uncert(x2, 0.1, 0.1, 0.5, zm, zs).data, O.uncert_direct(x2, 0.1, 0.1, 0.5, zm, zs), atol=1e-6)


def test_lf_uncert_gradients_reach_noise_scales(rng):
    x = rng.standard_normal((2, 3, 6, 6))
    z1, z2 = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    w = rng.standard_normal(x.shape)

    def f(a, sm, ss):
        return T.tsum(A.lf_uncert(a, T.softplus(sm), T.softplus(ss), 0.5, z1, z2) * Tensor(w))

    report = check_gradients(f, [x, rng.standard_normal(3), rng.standard_normal(3)])
    assert report.passed(1e-4)
    assert min(report.per_input[1:]) >= 0  # both scale inputs were probed


def test_lf_dropout_gradient_with_frozen_mask(rng):
    x = rng.standard_normal((2, 6, 6))
    mask = A.draw_drop_mask(x.shape, 0.5, 0.4, rng)
    w = rng.standard_normal(x.shape)
    assert check_gradients(lambda a: T.tsum(A.lf_dropout(a, 0.5, 0.4, mask=mask) * Tensor(w)), [x]).passed(1e-4)


def test_lf_uncert_rejects_negative_scales_and_bad_floor(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    z = np.zeros((1, 2))
    with pytest.raises(A.AugmentError):
        A.lf_uncert(x, -0.1, 0.1, 0.5, z, z)
    with pytest.raises(A.AugmentError):
        A.lf_uncert(x, 0.1, 0.1, 0.5, z, z, floor=0.0)


def test_noise_scales_are_positive_softplus_of_parameters():
    ns = A.NoiseScales([3, 5], init=0.1)
    assert len(ns) == 2 and len(ns.parameters()) == 4
    for l, (mu, sigma) in enumerate(ns.exposed()):
        np.testing.assert_allclose(mu, 0.1)
        np.testing.assert_allclose(sigma, 0.1)
        np.testing.assert_allclose(ns.scales(l)[0].data, mu)
    assert np.all(A.NoiseScales([2], init=0.0).exposed()[0][0] > 0)
    with pytest.raises(A.AugmentError):
        A.NoiseScales([2], init=-1.0)
