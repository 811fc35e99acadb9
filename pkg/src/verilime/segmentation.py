"""Superpixel segmentation: SLIC-style clustering with connectivity repair.

Deterministic by construction: grid-initialized seeds, a fixed number of
k-means iterations in CIELAB + position space, then each label's stray
fragments are absorbed into the largest adjacent region. Labels are
renumbered densely in first-occurrence scan order, so the i-th mask bit
always refers to the same region for a given input.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.ndimage

from .raster import Image

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class SuperpixelMap:
    """Per-pixel integer labels partitioning an image into k_actual regions.

    Labels are contiguous 0..k_actual-1, each used at least once, and each
    label's pixel set is 4-connected.
    """

    labels: np.ndarray
    k_actual: int

    def __post_init__(self):
        lab = self.labels
        if lab.ndim != 2:
            raise ValueError(f"expected 2-D label array, got shape {lab.shape}")
        object.__setattr__(self, "labels", np.ascontiguousarray(lab, dtype=np.int32))
        present = np.unique(self.labels)
        if present[0] != 0 or present[-1] != self.k_actual - 1 or len(present) != self.k_actual:
            raise ValueError("labels must densely cover 0..k_actual-1")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def region_sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.k_actual)


def _srgb_to_lab(pixels: np.ndarray) -> np.ndarray:
    """Convert (H, W, 1|3) uint8 pixels to flattened (N, 3) CIELAB features.

    Grayscale images map to (L, 0, 0): clustering then depends on intensity
    only, with the same spatial term.
    """
    x = pixels.astype(np.float64) / 255.0
    if x.shape[2] == 1:
        x = np.repeat(x, 3, axis=2)
    linear = np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)
    r, g, b = linear[..., 0], linear[..., 1], linear[..., 2]
    xyz = np.stack(
        [
            0.4124564 * r + 0.3575761 * g + 0.1804375 * b,
            0.2126729 * r + 0.7151522 * g + 0.0721750 * b,
            0.0193339 * r + 0.1191920 * g + 0.9503041 * b,
        ],
        axis=-1,
    )
    xyz /= np.array([0.95047, 1.0, 1.08883])
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    lab = np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)
    return lab.reshape(-1, 3)


def _seed_grid(height: int, width: int, k_target: int) -> tuple[np.ndarray, np.ndarray]:
    """Seed coordinates on a regular grid with at most k_target seeds."""
    ny = min(height, k_target, max(1, round(math.sqrt(k_target * height / width))))
    nx = max(1, min(width, k_target // ny))
    ys = (2 * np.arange(ny) + 1) * height / (2.0 * ny) - 0.5
    xs = (2 * np.arange(nx) + 1) * width / (2.0 * nx) - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return grid_y.ravel(), grid_x.ravel()


def slic_segment(
    img: Image,
    k_target: int,
    compactness: float = 10.0,
    iterations: int = 10,
) -> SuperpixelMap:
    """Partition an image into at most k_target 4-connected superpixels."""
    height, width = img.height, img.width
    n_pixels = height * width
    if k_target < 1:
        raise ValueError(f"k_target must be >= 1, got {k_target}")
    if k_target > n_pixels:
        raise ValueError(f"k_target {k_target} exceeds pixel count {n_pixels}")
    if compactness <= 0:
        raise ValueError(f"compactness must be > 0, got {compactness}")

    feat = _srgb_to_lab(img.pixels)
    yy, xx = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    seed_y, seed_x = _seed_grid(height, width, k_target)
    k_seeds = len(seed_y)

    step = math.sqrt(n_pixels / k_seeds)
    spatial_scale = compactness / step
    # Augmented 5-D space (L, a, b, scaled y, scaled x): Euclidean distance
    # there is the SLIC distance, so assignment is one matrix product.
    points = np.concatenate(
        [
            feat,
            (yy.ravel() * spatial_scale)[:, np.newaxis],
            (xx.ravel() * spatial_scale)[:, np.newaxis],
        ],
        axis=1,
    )
    seed_idx = np.clip(np.rint(seed_y), 0, height - 1).astype(int) * width + np.clip(
        np.rint(seed_x), 0, width - 1
    ).astype(int)
    centers = np.concatenate(
        [
            feat[seed_idx],
            (seed_y * spatial_scale)[:, np.newaxis],
            (seed_x * spatial_scale)[:, np.newaxis],
        ],
        axis=1,
    )

    point_sq = np.einsum("ij,ij->i", points, points)
    labels = np.zeros(n_pixels, dtype=np.int64)
    for _ in range(max(1, iterations)):
        center_sq = np.einsum("ij,ij->i", centers, centers)
        dist = point_sq[:, np.newaxis] - 2.0 * (points @ centers.T) + center_sq
        labels = np.argmin(dist, axis=1)
        counts = np.bincount(labels, minlength=k_seeds).astype(np.float64)
        occupied = counts > 0
        for d in range(points.shape[1]):
            sums = np.bincount(labels, weights=points[:, d], minlength=k_seeds)
            centers[occupied, d] = sums[occupied] / counts[occupied]

    label_map = labels.reshape(height, width).astype(np.int32)
    label_map = _enforce_connectivity(label_map, k_seeds)
    label_map = _relabel_dense(label_map)
    return SuperpixelMap(labels=label_map, k_actual=int(label_map.max()) + 1)


def _enforce_connectivity(label_map: np.ndarray, k: int) -> np.ndarray:
    """Keep each label's largest 4-connected component; absorb the rest.

    Every orphan fragment is merged into the adjacent finalized region with
    the largest current pixel count (ties: smallest label). Orphans with no
    finalized neighbor yet are deferred, which always terminates because the
    pixel grid is connected. Works on the component adjacency graph, so the
    absorption loop never touches pixels.
    """
    comp_id = np.full(label_map.shape, -1, dtype=np.int32)
    comp_label: list[int] = []
    comp_size: list[int] = []
    comp_final: list[int] = []  # assigned label, or -1 while orphaned
    label_sizes = np.zeros(k, dtype=np.int64)

    for lab in range(k):
        mask = label_map == lab
        if not mask.any():
            continue
        comp, n_comp = scipy.ndimage.label(mask, structure=_FOUR_CONN)
        sizes = np.bincount(comp.ravel())[1:]
        keep = int(np.argmax(sizes)) + 1  # ties: earliest in scan order
        base = len(comp_label)
        comp_id[mask] = comp[mask] - 1 + base
        for c in range(n_comp):
            comp_label.append(lab)
            comp_size.append(int(sizes[c]))
            comp_final.append(lab if c + 1 == keep else -1)
        label_sizes[lab] = sizes[keep - 1]

    n_comps = len(comp_label)
    adjacency: list[set[int]] = [set() for _ in range(n_comps)]
    horizontal = np.stack([comp_id[:, :-1].ravel(), comp_id[:, 1:].ravel()])
    vertical = np.stack([comp_id[:-1, :].ravel(), comp_id[1:, :].ravel()])
    edges = np.concatenate([horizontal, vertical], axis=1)
    edges = np.unique(edges[:, edges[0] != edges[1]], axis=1)
    for a, b in edges.T:
        adjacency[a].add(int(b))
        adjacency[b].add(int(a))

    queue = deque(i for i in range(n_comps) if comp_final[i] < 0)
    deferred = 0
    while queue:
        idx = queue.popleft()
        neighbor_labels = {comp_final[j] for j in adjacency[idx] if comp_final[j] >= 0}
        if not neighbor_labels:
            queue.append(idx)
            deferred += 1
            if deferred > len(queue):
                raise AssertionError("orphan absorption stalled")
            continue
        deferred = 0
        target = max(neighbor_labels, key=lambda lab: (label_sizes[lab], -lab))
        comp_final[idx] = target
        label_sizes[target] += comp_size[idx]

    lut = np.asarray(comp_final, dtype=np.int32)
    return lut[comp_id]


def _relabel_dense(label_map: np.ndarray) -> np.ndarray:
    """Renumber labels to 0..k-1 by first occurrence in row-major order."""
    flat = label_map.ravel()
    values, first = np.unique(flat, return_index=True)
    order = np.argsort(first, kind="stable")
    lut = np.empty(int(values.max()) + 1, dtype=np.int32)
    lut[values[order]] = np.arange(len(values), dtype=np.int32)
    return lut[flat].reshape(label_map.shape)


def boundary_overlay(img: Image, sp: SuperpixelMap) -> Image:
    """RGB copy of the image with superpixel boundaries painted red."""
    if (sp.height, sp.width) != (img.height, img.width):
        raise ValueError("superpixel map dimensions do not match the image")
    rgb = img.pixels if img.channels == 3 else np.repeat(img.pixels, 3, axis=2)
    rgb = rgb.copy()
    lab = sp.labels
    edge = np.zeros(lab.shape, dtype=bool)
    edge[1:, :] |= lab[1:, :] != lab[:-1, :]
    edge[:, 1:] |= lab[:, 1:] != lab[:, :-1]
    rgb[edge] = (255, 0, 0)
    return Image(pixels=rgb)


def export_label_pgm(path: str, sp: SuperpixelMap) -> None:
    """Debug export of the label map as a 16-bit PGM."""
    from .raster import write_pgm16

    write_pgm16(path, sp.labels)
