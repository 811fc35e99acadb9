"""Significance ablation: remove the hottest pixels (or a random matched
budget) and measure how verification accuracy and embedding similarity
degrade.

Per image and threshold, the random branch removes exactly as many pixels
as the targeted branch, re-seeded from the master seed so the whole sweep
is deterministic.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .embedding import Embedder, EmbeddingCache, cosine_similarity, embed
from .errors import DataError
from .perturbation import fill_pixel
from .raster import Heatmap, Image, load_image
from .verification import DatasetManifest, eer, generate_pairs, score_pairs


def blackout_above_threshold(
    img: Image, hmap: Heatmap, threshold: float, fill: tuple[int, ...]
) -> tuple[Image, int]:
    """Fill every pixel with heatmap value strictly above the threshold.

    Strict comparison means a threshold of 1.0 removes nothing even at the
    heatmap maximum.
    """
    if (hmap.height, hmap.width) != (img.height, img.width):
        raise ValueError("heatmap dimensions do not match the image")
    removed = hmap.values > threshold
    count = int(np.count_nonzero(removed))
    if count == 0:
        return Image(pixels=img.pixels.copy(), source=img.source), 0
    fill_px = fill_pixel(fill, img.channels)
    out = np.where(removed[:, :, np.newaxis], fill_px, img.pixels)
    return Image(pixels=out.astype(np.uint8), source=img.source), count


def random_blackout(
    img: Image,
    count: int,
    fill: tuple[int, ...],
    seed: int | np.random.SeedSequence,
) -> Image:
    """Fill exactly `count` uniformly chosen distinct pixels."""
    total = img.height * img.width
    if not 0 <= count <= total:
        raise ValueError(f"count must be in [0, {total}], got {count}")
    if count == 0:
        return Image(pixels=img.pixels.copy(), source=img.source)
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = rng.permutation(total)[:count]
    fill_px = fill_pixel(fill, img.channels)
    flat = img.pixels.reshape(total, img.channels).copy()
    flat[chosen] = fill_px
    return Image(pixels=flat.reshape(img.pixels.shape), source=img.source)


@dataclass(frozen=True)
class AblationReport:
    """Paired EERs and removal statistics for one threshold."""

    threshold: float
    fraction_removed: np.ndarray  # per image, manifest order
    eer_targeted: float
    eer_random: float
    mean_similarity_targeted: float
    mean_similarity_random: float
    n_failures_targeted: int
    n_failures_random: int
    seed: int

    def removal_summary(self) -> tuple[float, float, float, float, float]:
        """(min, q1, median, q3, max) of the per-image removal fraction."""
        f = self.fraction_removed
        q1, med, q3 = np.percentile(f, [25, 50, 75])
        return (float(f.min()), float(q1), float(med), float(q3), float(f.max()))


def ablation_sweep(
    manifest: DatasetManifest,
    embedder: Embedder,
    heatmaps: dict[str, Heatmap],
    thresholds: list[float],
    fill: tuple[int, ...],
    seed: int,
    image_loader: Callable[[str], Image] | None = None,
) -> list[AblationReport]:
    """Rescore the verification protocol on targeted- and random-ablated
    image sets, one report per threshold (input order preserved)."""
    loader = image_loader or load_image
    paths = manifest.image_paths()
    originals: dict[str, Image] = {}
    for path in paths:
        originals[path] = loader(path)
        if path not in heatmaps:
            raise DataError(f"no heatmap supplied for image {path!r}")
        hm = heatmaps[path]
        img = originals[path]
        if (hm.height, hm.width) != (img.height, img.width):
            raise DataError(f"heatmap dimensions do not match image {path!r}")

    genuine_pairs, impostor_pairs = generate_pairs(manifest)
    cache = EmbeddingCache()
    original_embeddings = {p: embed(embedder, originals[p]) for p in paths}

    reports = []
    for t_index, threshold in enumerate(thresholds):
        targeted: dict[str, Image] = {}
        randomized: dict[str, Image] = {}
        fractions = np.empty(len(paths), dtype=np.float64)
        for i, path in enumerate(paths):
            img = originals[path]
            ablated, count = blackout_above_threshold(img, heatmaps[path], threshold, fill)
            targeted[path] = ablated
            branch_seed = np.random.SeedSequence(seed, spawn_key=(t_index, i))
            randomized[path] = random_blackout(img, count, fill, branch_seed)
            fractions[i] = count / (img.height * img.width)

        def rescore(images: dict[str, Image]) -> tuple[float, int]:
            scores, failures = score_pairs(
                genuine_pairs,
                impostor_pairs,
                embedder,
                image_loader=images.__getitem__,
                cache=cache,
            )
            return eer(scores)[0], len(failures)

        eer_targeted, fail_t = rescore(targeted)
        eer_random, fail_r = rescore(randomized)
        sim_t = np.mean(
            [
                cosine_similarity(original_embeddings[p], embed(embedder, targeted[p]))
                for p in paths
            ]
        )
        sim_r = np.mean(
            [
                cosine_similarity(original_embeddings[p], embed(embedder, randomized[p]))
                for p in paths
            ]
        )
        reports.append(
            AblationReport(
                threshold=threshold,
                fraction_removed=fractions,
                eer_targeted=eer_targeted,
                eer_random=eer_random,
                mean_similarity_targeted=float(sim_t),
                mean_similarity_random=float(sim_r),
                n_failures_targeted=fail_t,
                n_failures_random=fail_r,
                seed=seed,
            )
        )
    return reports


def reports_to_csv(reports: list[AblationReport]) -> str:
    """One row per threshold, mirroring the EER and removal-fraction plots."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "threshold",
            "eer_targeted",
            "eer_random",
            "removed_min",
            "removed_q1",
            "removed_median",
            "removed_q3",
            "removed_max",
            "mean_similarity_targeted",
            "mean_similarity_random",
            "failures_targeted",
            "failures_random",
        ]
    )
    for r in reports:
        lo, q1, med, q3, hi = r.removal_summary()
        writer.writerow(
            [
                repr(r.threshold),
                repr(r.eer_targeted),
                repr(r.eer_random),
                repr(lo),
                repr(q1),
                repr(med),
                repr(q3),
                repr(hi),
                repr(r.mean_similarity_targeted),
                repr(r.mean_similarity_random),
                r.n_failures_targeted,
                r.n_failures_random,
            ]
        )
    return buf.getvalue()
