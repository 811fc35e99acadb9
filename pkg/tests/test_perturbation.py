import math

import numpy as np
import pytest

from verilime import (
    Image,
    PerturbConfig,
    apply_mask,
    locality_weight,
    sample_masks,
    slic_segment,
)
from verilime.perturbation import masks_to_csv

from conftest import random_image


class TestSampleMasks:
    def test_p_zero_all_ones(self):
        pset = sample_masks(PerturbConfig(n_samples=50, p_blackout=0.0, seed=3), 10)
        assert np.all(pset.masks == 1)

    def test_p_one_all_zeros_except_anchor(self):
        # Row 0 is always the all-ones anchor; every sampled row is fully
        # blacked out at p = 1.
        pset = sample_masks(PerturbConfig(n_samples=50, p_blackout=1.0, seed=3), 10)
        assert np.all(pset.masks[0] == 1)
        assert np.all(pset.masks[1:] == 0)

    def test_anchor_row_and_weight(self):
        pset = sample_masks(PerturbConfig(n_samples=20, p_blackout=0.9, seed=7), 6)
        assert np.all(pset.masks[0] == 1)
        assert pset.weights[0] == 1.0

    def test_deterministic_per_seed(self):
        cfg = PerturbConfig(n_samples=100, p_blackout=0.6, seed=42)
        a = sample_masks(cfg, 12)
        b = sample_masks(cfg, 12)
        assert np.array_equal(a.masks, b.masks)
        assert np.array_equal(a.weights, b.weights)

    def test_different_seeds_differ(self):
        a = sample_masks(PerturbConfig(n_samples=100, seed=1), 12)
        b = sample_masks(PerturbConfig(n_samples=100, seed=2), 12)
        assert not np.array_equal(a.masks, b.masks)

    def test_mean_active_fraction(self):
        pset = sample_masks(PerturbConfig(n_samples=1000, p_blackout=0.6, seed=5), 75)
        assert pset.masks.mean() == pytest.approx(0.40, abs=0.01)

    def test_rejects_zero_superpixels(self):
        with pytest.raises(ValueError):
            sample_masks(PerturbConfig(), 0)

    def test_weights_in_unit_interval(self):
        pset = sample_masks(PerturbConfig(n_samples=200, p_blackout=0.8, seed=1), 5)
        assert np.all(pset.weights > 0) and np.all(pset.weights <= 1)


class TestLocalityWeight:
    def test_all_ones_weight_one(self):
        assert locality_weight(np.ones(9, dtype=np.uint8), 0.25) == 1.0

    def test_all_zeros(self):
        w = locality_weight(np.zeros(9, dtype=np.uint8), 0.25)
        assert w == pytest.approx(math.exp(-16.0), rel=1e-12)
        assert w == pytest.approx(1.1253517471925912e-07, rel=1e-12)

    def test_quarter_active(self):
        w = locality_weight(np.array([1, 0, 0, 0], dtype=np.uint8), 0.25)
        assert w == pytest.approx(math.exp(-4.0), rel=1e-12)
        assert w == pytest.approx(0.01831563888873418, rel=1e-12)

    def test_monotone_in_masked_count(self):
        k = 16
        weights = []
        for m in range(k + 1):
            mask = np.zeros(k, dtype=np.uint8)
            mask[:m] = 1
            weights.append(locality_weight(mask, 0.25))
        assert all(weights[i] <= weights[i + 1] for i in range(k))


class TestApplyMask:
    @pytest.fixture
    def segmented(self, rng):
        img = random_image(rng, 16, 16, 3)
        sp = slic_segment(img, 6)
        return img, sp

    def test_all_ones_bit_exact(self, segmented):
        img, sp = segmented
        out = apply_mask(img, sp, np.ones(sp.k_actual, dtype=np.uint8), (0, 0, 0))
        assert np.array_equal(out.pixels, img.pixels)

    def test_all_zeros_filled(self, segmented):
        img, sp = segmented
        out = apply_mask(img, sp, np.zeros(sp.k_actual, dtype=np.uint8), (9, 8, 7))
        assert np.all(out.pixels == np.array([9, 8, 7], dtype=np.uint8))

    def test_single_superpixel_masked(self, segmented):
        # Independent cross-check: the changed-pixel set must equal the
        # masked label's pixel set (fill chosen off-palette).
        img, sp = segmented
        img = Image(pixels=np.clip(img.pixels, 1, 255))
        mask = np.ones(sp.k_actual, dtype=np.uint8)
        mask[2] = 0
        out = apply_mask(img, sp, mask, (0, 0, 0))
        changed = np.any(out.pixels != img.pixels, axis=2)
        assert np.array_equal(changed, sp.labels == 2)
        assert np.all(out.pixels[changed] == 0)
        assert changed.sum() == sp.region_sizes()[2]

    def test_mask_length_mismatch(self, segmented):
        img, sp = segmented
        with pytest.raises(ValueError):
            apply_mask(img, sp, np.ones(sp.k_actual + 1, dtype=np.uint8), (0, 0, 0))

    def test_dimension_mismatch(self, rng, segmented):
        _, sp = segmented
        other = random_image(rng, 8, 8, 3)
        with pytest.raises(ValueError):
            apply_mask(other, sp, np.ones(sp.k_actual, dtype=np.uint8), (0, 0, 0))

    def test_scalar_fill_broadcasts(self, segmented):
        img, sp = segmented
        out = apply_mask(img, sp, np.zeros(sp.k_actual, dtype=np.uint8), (5,))
        assert np.all(out.pixels == 5)


class TestConfigValidation:
    def test_bad_probability(self):
        with pytest.raises(ValueError):
            PerturbConfig(p_blackout=1.5)

    def test_bad_sample_count(self):
        with pytest.raises(ValueError):
            PerturbConfig(n_samples=0)

    def test_bad_kernel_width(self):
        with pytest.raises(ValueError):
            PerturbConfig(kernel_width=0.0)


def test_masks_csv_export():
    pset = sample_masks(PerturbConfig(n_samples=3, p_blackout=0.5, seed=11), 4)
    text = masks_to_csv(pset)
    lines = text.strip().split("\n")
    assert lines[0] == "sp_0,sp_1,sp_2,sp_3"
    assert lines[1] == "1,1,1,1"  # anchor row
    assert len(lines) == 4
    for line in lines[1:]:
        assert set(line.split(",")) <= {"0", "1"}
