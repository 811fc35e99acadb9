import numpy as np
import pytest

from verilime import (
    ExplainConfig,
    Heatmap,
    RegionEmbedder,
    blackout_above_threshold,
    eer,
    explain,
    generate_pairs,
    random_blackout,
    score_pairs,
)
from verilime.ablation import ablation_sweep, reports_to_csv
from verilime.errors import DataError

from conftest import random_image, region_benchmark


class TestBlackoutAboveThreshold:
    def test_threshold_one_removes_nothing(self, rng):
        img = random_image(rng, 8, 8, 3)
        hmap = Heatmap(values=rng.random((8, 8)))
        out, count = blackout_above_threshold(img, hmap, 1.0, (0, 0, 0))
        assert count == 0
        assert np.array_equal(out.pixels, img.pixels)

    def test_negative_threshold_removes_all(self, rng):
        img = random_image(rng, 8, 8, 3)
        hmap = Heatmap(values=rng.random((8, 8)))
        out, count = blackout_above_threshold(img, hmap, -0.5, (3, 2, 1))
        assert count == 64
        assert np.all(out.pixels == np.array([3, 2, 1], dtype=np.uint8))

    def test_exact_pixel_set(self, rng):
        # Independent scan of the heatmap defines the expected set.
        img = random_image(rng, 10, 10, 3)
        img = type(img)(pixels=np.clip(img.pixels, 1, 255))
        values = rng.random((10, 10))
        expected = {(y, x) for y in range(10) for x in range(10) if values[y, x] > 0.8}
        out, count = blackout_above_threshold(img, Heatmap(values=values), 0.8, (0, 0, 0))
        changed = {
            (y, x)
            for y in range(10)
            for x in range(10)
            if not np.array_equal(out.pixels[y, x], img.pixels[y, x])
        }
        assert count == len(expected)
        assert changed == expected

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            blackout_above_threshold(
                random_image(rng, 8, 8, 3), Heatmap(values=np.zeros((4, 4))), 0.5, (0, 0, 0)
            )


class TestRandomBlackout:
    def test_zero_count_unchanged(self, rng):
        img = random_image(rng, 6, 6, 3)
        out = random_blackout(img, 0, (0, 0, 0), seed=1)
        assert np.array_equal(out.pixels, img.pixels)

    def test_full_count_all_filled(self, rng):
        img = random_image(rng, 6, 6, 3)
        out = random_blackout(img, 36, (7, 7, 7), seed=1)
        assert np.all(out.pixels == 7)

    def test_exact_count_and_determinism(self, rng):
        img = type(random_image(rng, 12, 12, 3))(
            pixels=np.clip(random_image(rng, 12, 12, 3).pixels, 1, 255)
        )
        a = random_blackout(img, 100, (0, 0, 0), seed=77)
        b = random_blackout(img, 100, (0, 0, 0), seed=77)
        assert np.array_equal(a.pixels, b.pixels)
        changed = np.any(a.pixels != img.pixels, axis=2)
        assert int(changed.sum()) == 100

    def test_count_exceeds_total(self, rng):
        with pytest.raises(ValueError):
            random_blackout(random_image(rng, 4, 4, 3), 17, (0, 0, 0), seed=0)


@pytest.fixture(scope="module")
def benchmark():
    rng = np.random.default_rng(1234)
    manifest, images = region_benchmark(rng, n_subjects=4, images_per_subject=3, size=48)
    embedder = RegionEmbedder(sensitive_zone=0, gain=10.0)
    cfg = ExplainConfig(k_target=20, n_samples=250, seed=5, fill=(1, 1, 1))
    heatmaps = {}
    for path in manifest.image_paths():
        heatmap, _, _ = explain(images[path], embedder, cfg)
        heatmaps[path] = heatmap
    return manifest, images, embedder, heatmaps


class TestAblationSweep:
    def test_threshold_one_matches_unablated(self, benchmark):
        manifest, images, embedder, heatmaps = benchmark
        genuine, impostor = generate_pairs(manifest)
        scores, _ = score_pairs(genuine, impostor, embedder, image_loader=images.__getitem__)
        baseline, _ = eer(scores)
        reports = ablation_sweep(
            manifest, embedder, heatmaps, [1.0], (0, 0, 0), seed=3,
            image_loader=images.__getitem__,
        )
        assert reports[0].eer_targeted == pytest.approx(baseline, abs=1e-12)
        assert reports[0].eer_random == pytest.approx(baseline, abs=1e-12)
        assert np.all(reports[0].fraction_removed == 0.0)

    def test_targeted_hurts_similarity_more(self, benchmark):
        manifest, images, embedder, heatmaps = benchmark
        reports = ablation_sweep(
            manifest, embedder, heatmaps, [0.5], (0, 0, 0), seed=3,
            image_loader=images.__getitem__,
        )
        r = reports[0]
        assert r.mean_similarity_targeted < r.mean_similarity_random

    def test_fraction_monotone_in_threshold(self, benchmark):
        manifest, images, embedder, heatmaps = benchmark
        thresholds = [0.9, 0.7, 0.5, 0.3]
        reports = ablation_sweep(
            manifest, embedder, heatmaps, thresholds, (0, 0, 0), seed=3,
            image_loader=images.__getitem__,
        )
        stacked = np.stack([r.fraction_removed for r in reports])
        # thresholds are descending here, so removal must not decrease
        assert np.all(np.diff(stacked, axis=0) >= 0)

    def test_matched_budgets(self, benchmark):
        manifest, images, embedder, heatmaps = benchmark
        path = manifest.image_paths()[0]
        img = images[path]
        ablated, count = blackout_above_threshold(img, heatmaps[path], 0.6, (0, 0, 0))
        randomized = random_blackout(img, count, (0, 0, 0), seed=9)
        changed_t = np.any(ablated.pixels != img.pixels, axis=2).sum()
        changed_r = np.any(randomized.pixels != img.pixels, axis=2).sum()
        # fill=0 against pixels clipped to >= 1, so every removal is visible
        assert changed_t == count
        assert changed_r == count

    def test_missing_heatmap_rejected(self, benchmark):
        manifest, images, embedder, heatmaps = benchmark
        partial = dict(list(heatmaps.items())[:-1])
        with pytest.raises(DataError):
            ablation_sweep(
                manifest, embedder, partial, [0.5], (0, 0, 0), seed=3,
                image_loader=images.__getitem__,
            )

    def test_deterministic(self, benchmark):
        manifest, images, embedder, heatmaps = benchmark
        kwargs = dict(image_loader=images.__getitem__)
        a = ablation_sweep(manifest, embedder, heatmaps, [0.5], (0, 0, 0), 11, **kwargs)
        b = ablation_sweep(manifest, embedder, heatmaps, [0.5], (0, 0, 0), 11, **kwargs)
        assert reports_to_csv(a) == reports_to_csv(b)

    def test_csv_shape(self, benchmark):
        manifest, images, embedder, heatmaps = benchmark
        reports = ablation_sweep(
            manifest, embedder, heatmaps, [1.0, 0.5], (0, 0, 0), seed=3,
            image_loader=images.__getitem__,
        )
        lines = reports_to_csv(reports).strip().split("\n")
        assert lines[0].startswith("threshold,eer_targeted,eer_random,removed_min")
        assert len(lines) == 3
