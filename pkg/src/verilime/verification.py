"""Biometric verification harness: pair generation, scoring, EER, fusion.

The pair protocol: genuine pairs are all unordered same-subject image
pairs; impostor pairs compare each subject's first image against the
second image of the next 100 subjects, wrapping circularly so every
subject contributes equally. An optional pose filter restricts both sides
to a pose combination (order-insensitive).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from itertools import combinations
from typing import Callable

import numpy as np

from .embedding import Embedder, EmbeddingCache, cosine_similarity, verification_descriptor
from .errors import DataError, EmbedderError
from .raster import Image, load_image

POSES = ("frontal", "three-quarter", "profile", "untagged")
IMPOSTOR_NEIGHBORS = 100


@dataclass(frozen=True)
class ImageRef:
    path: str
    pose: str = "untagged"

    def __post_init__(self):
        if self.pose not in POSES:
            raise DataError(f"unknown pose {self.pose!r} for {self.path!r}")


@dataclass(frozen=True)
class Subject:
    id: str
    images: tuple[ImageRef, ...]


@dataclass(frozen=True)
class DatasetManifest:
    subjects: tuple[Subject, ...]

    def __post_init__(self):
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise DataError("manifest contains duplicate subject identifiers")

    def image_paths(self) -> list[str]:
        return [ref.path for s in self.subjects for ref in s.images]


def load_manifest(path: str) -> DatasetManifest:
    """Read a manifest JSON; image paths resolve relative to the file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read manifest {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest {path!r}: {exc}") from exc
    base = os.path.dirname(os.path.abspath(path))
    try:
        subjects = []
        for entry in raw["subjects"]:
            images = tuple(
                ImageRef(
                    path=os.path.normpath(os.path.join(base, item["path"])),
                    pose=item.get("pose", "untagged"),
                )
                for item in entry["images"]
            )
            subjects.append(Subject(id=str(entry["id"]), images=images))
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed manifest {path!r}: {exc}") from exc
    return DatasetManifest(subjects=tuple(subjects))


@dataclass(frozen=True)
class Pair:
    subject_a: str
    image_a: str
    subject_b: str
    image_b: str


@dataclass(frozen=True)
class ScoreSet:
    genuine: tuple[tuple[Pair, float], ...]
    impostor: tuple[tuple[Pair, float], ...]

    def genuine_scores(self) -> np.ndarray:
        return np.array([s for _, s in self.genuine], dtype=np.float64)

    def impostor_scores(self) -> np.ndarray:
        return np.array([s for _, s in self.impostor], dtype=np.float64)


def generate_pairs(
    manifest: DatasetManifest,
    pose_filter: tuple[str, str] | None = None,
) -> tuple[list[Pair], list[Pair]]:
    """Genuine and impostor pair lists per the verification protocol."""
    subjects = manifest.subjects
    if len(subjects) < 2:
        raise DataError("pair generation needs at least 2 subjects")

    def side_images(subject: Subject, pose: str | None) -> list[ImageRef]:
        if pose is None:
            return list(subject.images)
        return [ref for ref in subject.images if ref.pose == pose]

    pose_a: str | None = None
    pose_b: str | None = None
    if pose_filter is not None:
        pose_a, pose_b = pose_filter
        for p in (pose_a, pose_b):
            if p not in POSES:
                raise DataError(f"unknown pose {p!r} in pose filter")

    genuine: list[Pair] = []
    for subject in subjects:
        list_a = side_images(subject, pose_a)
        list_b = side_images(subject, pose_b)
        if pose_a == pose_b:
            pairs = combinations(list_a, 2)
        else:
            pairs = ((a, b) for a in list_a for b in list_b)
        for a, b in pairs:
            genuine.append(Pair(subject.id, a.path, subject.id, b.path))

    impostor: list[Pair] = []
    n_subjects = len(subjects)
    reach = min(IMPOSTOR_NEIGHBORS, n_subjects - 1)
    for i, subject in enumerate(subjects):
        probes = side_images(subject, pose_a)
        if not probes:
            raise DataError(
                f"subject {subject.id!r} has no image to probe with"
                + (f" (pose {pose_a!r})" if pose_a else "")
            )
        probe = probes[0]
        for j in range(1, reach + 1):
            target_subject = subjects[(i + j) % n_subjects]
            targets = side_images(target_subject, pose_b)
            if len(targets) < 2:
                raise DataError(
                    f"subject {target_subject.id!r} has < 2 images in impostor role"
                    + (f" (pose {pose_b!r})" if pose_b else "")
                )
            impostor.append(
                Pair(subject.id, probe.path, target_subject.id, targets[1].path)
            )

    if not genuine or not impostor:
        raise DataError("pair generation produced an empty pair list (filter too strict?)")
    return genuine, impostor


@dataclass(frozen=True)
class PairFailure:
    pair: Pair
    reason: str


def score_pairs(
    genuine_pairs: list[Pair],
    impostor_pairs: list[Pair],
    embedder: Embedder,
    image_loader: Callable[[str], Image] | None = None,
    cache: EmbeddingCache | None = None,
) -> tuple[ScoreSet, list[PairFailure]]:
    """Cosine scores over flip-averaged descriptors, one per pair.

    Failed pairs are excluded from the result and reported. ``image_loader``
    lets callers substitute in-memory image sets (ablation) for disk files.
    """
    loader = image_loader or load_image
    cache = cache or EmbeddingCache()
    memo: dict[str, np.ndarray | Exception] = {}

    def descriptor(path: str) -> np.ndarray:
        known = memo.get(path)
        if known is not None:
            if isinstance(known, Exception):
                raise known
            return known
        try:
            img = loader(path)
            vec = cache.get_or_compute(
                embedder, img, lambda: verification_descriptor(embedder, img)
            )
        except (DataError, EmbedderError, ValueError) as exc:
            memo[path] = exc
            raise
        memo[path] = vec
        return vec

    failures: list[PairFailure] = []

    def score_list(pairs: list[Pair]) -> tuple[tuple[Pair, float], ...]:
        out = []
        for pair in pairs:
            try:
                s = cosine_similarity(descriptor(pair.image_a), descriptor(pair.image_b))
            except (DataError, EmbedderError, ValueError) as exc:
                failures.append(PairFailure(pair=pair, reason=str(exc)))
                continue
            out.append((pair, s))
        return tuple(out)

    scores = ScoreSet(genuine=score_list(genuine_pairs), impostor=score_list(impostor_pairs))
    return scores, failures


def eer(scores: ScoreSet) -> tuple[float, float]:
    """Equal error rate in percent, plus the operating threshold.

    Candidate thresholds are the midpoints of adjacent distinct pooled
    scores plus both infinities. FRR(t) = fraction of genuine < t,
    FAR(t) = fraction of impostor >= t. The reported EER is
    (FAR + FRR) / 2 at the threshold minimizing |FAR - FRR| (ties go to
    the smallest threshold).
    """
    return _eer_arrays(scores.genuine_scores(), scores.impostor_scores())


def _eer_arrays(gen: np.ndarray, imp: np.ndarray) -> tuple[float, float]:
    gen = np.sort(gen)
    imp = np.sort(imp)
    if gen.size == 0 or imp.size == 0:
        raise ValueError("EER needs non-empty genuine and impostor score lists")
    if not (np.all(np.isfinite(gen)) and np.all(np.isfinite(imp))):
        raise ValueError("scores must be finite")
    pooled = np.unique(np.concatenate([gen, imp]))
    candidates = np.concatenate(
        [[-np.inf], (pooled[1:] + pooled[:-1]) / 2.0, [np.inf]]
    )
    frr = np.searchsorted(gen, candidates, side="left") / gen.size
    far = (imp.size - np.searchsorted(imp, candidates, side="left")) / imp.size
    best = int(np.argmin(np.abs(far - frr)))
    eer_percent = (far[best] + frr[best]) / 2.0 * 100.0
    return float(eer_percent), float(candidates[best])


def fuse_scores(s1: float, s2: float, a: float) -> float:
    """Convex combination a * s1 + (1 - a) * s2 of two systems' scores."""
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"fusion weight must be in [0, 1], got {a}")
    return a * s1 + (1.0 - a) * s2


@dataclass(frozen=True)
class FusionSweepResult:
    rows: tuple[tuple[float, float], ...]  # (a, eer_percent)
    best_a: float
    best_eer: float


def _check_same_pairs(set1: ScoreSet, set2: ScoreSet) -> None:
    pairs1 = [p for p, _ in set1.genuine] + [p for p, _ in set1.impostor]
    pairs2 = [p for p, _ in set2.genuine] + [p for p, _ in set2.impostor]
    if pairs1 != pairs2:
        raise DataError("score sets cover different pair lists and cannot be fused")


def fuse_score_sets(set1: ScoreSet, set2: ScoreSet, a: float) -> ScoreSet:
    _check_same_pairs(set1, set2)
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"fusion weight must be in [0, 1], got {a}")
    genuine = tuple(
        (p1, a * s1 + (1.0 - a) * s2)
        for (p1, s1), (_, s2) in zip(set1.genuine, set2.genuine)
    )
    impostor = tuple(
        (p1, a * s1 + (1.0 - a) * s2)
        for (p1, s1), (_, s2) in zip(set1.impostor, set2.impostor)
    )
    return ScoreSet(genuine=genuine, impostor=impostor)


def fusion_sweep(set1: ScoreSet, set2: ScoreSet, step: float = 0.01) -> FusionSweepResult:
    """EER of the fused system for a = 0 to 1 by `step`; reports the argmin a."""
    if not 0.0 < step <= 1.0:
        raise ValueError(f"step must be in (0, 1], got {step}")
    _check_same_pairs(set1, set2)
    g1, g2 = set1.genuine_scores(), set2.genuine_scores()
    i1, i2 = set1.impostor_scores(), set2.impostor_scores()
    count = int(math.floor(1.0 / step + 1e-9))
    weights = [min(1.0, i * step) for i in range(count + 1)]
    if weights[-1] < 1.0 - 1e-12:
        weights.append(1.0)
    rows = []
    for a in weights:
        value, _ = _eer_arrays(a * g1 + (1.0 - a) * g2, a * i1 + (1.0 - a) * i2)
        rows.append((a, value))
    best_idx = min(range(len(rows)), key=lambda i: (rows[i][1], rows[i][0]))
    return FusionSweepResult(
        rows=tuple(rows), best_a=rows[best_idx][0], best_eer=rows[best_idx][1]
    )


# ---------------------------------------------------------------------------
# Score persistence (CSV)
# ---------------------------------------------------------------------------

_SCORE_HEADER = ["type", "subject_a", "image_a", "subject_b", "image_b", "score"]


def scores_to_csv(scores: ScoreSet) -> str:
    """Byte-stable CSV: header, genuine block, impostor block, repr floats."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_SCORE_HEADER)
    for kind, entries in (("genuine", scores.genuine), ("impostor", scores.impostor)):
        for pair, score in entries:
            writer.writerow(
                [kind, pair.subject_a, pair.image_a, pair.subject_b, pair.image_b, repr(score)]
            )
    return buf.getvalue()


def scores_from_csv(text: str) -> ScoreSet:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != _SCORE_HEADER:
        raise DataError(f"bad score CSV header: {header}")
    genuine: list[tuple[Pair, float]] = []
    impostor: list[tuple[Pair, float]] = []
    for row in reader:
        if len(row) != 6:
            raise DataError(f"bad score CSV row: {row}")
        kind, sa, ia, sb, ib, score = row
        pair = Pair(sa, ia, sb, ib)
        try:
            value = float(score)
        except ValueError as exc:
            raise DataError(f"bad score value {score!r}") from exc
        if kind == "genuine":
            genuine.append((pair, value))
        elif kind == "impostor":
            impostor.append((pair, value))
        else:
            raise DataError(f"bad score row type {kind!r}")
    return ScoreSet(genuine=tuple(genuine), impostor=tuple(impostor))
