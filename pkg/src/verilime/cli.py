"""Command-line orchestration.

A JSON config file supplies defaults; command-line flags win. Every run
writes its artifacts atomically plus a ``run_manifest.json`` recording the
effective config, seed, tool version and per-stage timings. For a fixed
(config, seed, inputs) triple all CSV and ``.hm`` artifacts are
byte-identical across runs; per-image seeds derive as master_seed XOR
image_index, so parallel and serial runs agree too.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 embedder or
bridge failure, 4 internal numerical failure.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import io
import json
import math
import os
import sys
import threading
import time
from pathlib import Path

import click
import numpy as np

from . import __version__, _atomic
from .ablation import ablation_sweep, reports_to_csv
from .embedding import Embedder, parse_embedder_spec, verification_descriptor, emb_write
from .errors import (
    ConfigError,
    DataError,
    EmbedderError,
    NumericalError,
    VerilimeError,
)
from .perturbation import PRNG_NAME, masks_to_csv
from .raster import (
    Heatmap,
    average_heatmaps,
    heatmap_to_png,
    hm_read,
    hm_write,
    load_image,
    psnr,
    save_image,
)
from .segmentation import boundary_overlay, export_label_pgm, slic_segment
from .surrogate import ExplainConfig, explain
from .verification import (
    POSES,
    eer,
    fusion_sweep,
    generate_pairs,
    load_manifest,
    score_pairs,
    scores_from_csv,
    scores_to_csv,
)

_POSE_ALIASES = {
    "f": "frontal",
    "frontal": "frontal",
    "q": "three-quarter",
    "3/4": "three-quarter",
    "34": "three-quarter",
    "three-quarter": "three-quarter",
    "p": "profile",
    "profile": "profile",
    "u": "untagged",
    "untagged": "untagged",
}


def _parse_pose_filter(text: str) -> tuple[str, str]:
    left, sep, right = text.partition(":")
    if not sep:
        raise ConfigError(f"pose filter must look like A:B, got {text!r}")
    try:
        return _POSE_ALIASES[left.strip().lower()], _POSE_ALIASES[right.strip().lower()]
    except KeyError as exc:
        raise ConfigError(f"unknown pose in filter {text!r}; choose from {POSES}") from exc


def _parse_fill(text: str) -> tuple[int, ...]:
    try:
        parts = tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad fill value {text!r}; expected e.g. 0,0,0") from exc
    if len(parts) not in (1, 3) or any(not 0 <= v <= 255 for v in parts):
        raise ConfigError(f"bad fill value {text!r}; expected 1 or 3 bytes")
    return parts if len(parts) == 3 else parts * 3


class Settings:
    """Layered lookup: command-line flag, then config file, then default."""

    def __init__(self, config_path: str | None):
        self.data: dict = {}
        if config_path:
            try:
                with open(config_path) as fh:
                    self.data = json.load(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config {config_path!r}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"malformed config {config_path!r}: {exc}") from exc
            if not isinstance(self.data, dict):
                raise ConfigError(f"config {config_path!r} must hold a JSON object")

    def get(self, key: str, flag_value, default):
        if flag_value is not None:
            return flag_value
        return self.data.get(key, default)

    def require(self, key: str, flag_value, what: str):
        value = self.get(key, flag_value, None)
        if value is None:
            raise ConfigError(f"missing required {what} (flag or config key {key!r})")
        return value

    def explain_config(self, seed: int, fill: tuple[int, ...] | None, **overrides) -> ExplainConfig:
        section = dict(self.data.get("explain", {}))
        merged = {}
        for name in (
            "k_target",
            "n_samples",
            "p_blackout",
            "sigma",
            "kernel_width",
            "ridge_lambda",
            "flip_average",
        ):
            if overrides.get(name) is not None:
                merged[name] = overrides[name]
            elif name in section:
                merged[name] = section[name]
        if fill is not None:
            merged["fill"] = fill
        elif "fill" in section:
            merged["fill"] = tuple(section["fill"])
        try:
            return ExplainConfig(seed=seed, **merged)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad explain configuration: {exc}") from exc


class RunWriter:
    """Collects timings and writes the run manifest at the end."""

    def __init__(self, command: str, out_dir: str, seed: int | None, config: dict):
        self.command = command
        self.out = Path(out_dir)
        self.seed = seed
        self.config = config
        self.timings: dict[str, float] = {}
        self.extra: dict = {}
        self._t0 = time.monotonic()
        self._stage_start = self._t0

    def stage(self, name: str) -> None:
        now = time.monotonic()
        self.timings[name] = round(now - self._stage_start, 6)
        self._stage_start = now

    def path(self, *parts: str) -> str:
        return str(self.out.joinpath(*parts))

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "tool_version": __version__,
            "prng": PRNG_NAME,
            "seed": self.seed,
            "config": self.config,
            "timings": {**self.timings, "total": round(time.monotonic() - self._t0, 6)},
            **self.extra,
        }
        _atomic.write_text(self.path("run_manifest.json"), _json_dumps(manifest))


def _json_dumps(obj) -> str:
    def default(value):
        if isinstance(value, (np.floating, np.integer)):
            return value.item()
        if isinstance(value, np.ndarray):
            return value.tolist()
        if isinstance(value, float) and not math.isfinite(value):
            return repr(value)
        raise TypeError(f"not JSON serializable: {type(value)}")

    return json.dumps(obj, indent=2, sort_keys=False, default=default) + "\n"


def _finite_or_str(value: float):
    return value if math.isfinite(value) else repr(value)


def artifact_stem(index: int, path: str) -> str:
    """Deterministic, collision-free artifact name for a manifest image."""
    return f"{index:05d}_{Path(path).stem}"


def _check_images_exist(paths: list[str]) -> None:
    for path in paths:
        if not os.path.isfile(path):
            raise DataError(f"image not found: {path}")


class EmbedderPool:
    """One embedder per worker thread for bridge channels; shared otherwise."""

    def __init__(self, spec: str):
        self.spec = spec
        self._is_bridge = spec.partition(":")[0] == "bridge"
        self._local = threading.local()
        self._shared: Embedder | None = None
        self._instances: list[Embedder] = []
        self._lock = threading.Lock()

    def get(self) -> Embedder:
        if not self._is_bridge:
            with self._lock:
                if self._shared is None:
                    self._shared = parse_embedder_spec(self.spec)
                    self._instances.append(self._shared)
            return self._shared
        embedder = getattr(self._local, "embedder", None)
        if embedder is None:
            embedder = parse_embedder_spec(self.spec)
            self._local.embedder = embedder
            with self._lock:
                self._instances.append(embedder)
        return embedder

    def close(self) -> None:
        with self._lock:
            for inst in self._instances:
                close = getattr(inst, "close", None)
                if close:
                    close()
            self._instances.clear()


def _map_ordered(fn, items, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(i, item) for i, item in enumerate(items)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, i, item) for i, item in enumerate(items)]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


@click.group()
def cli():
    """Explanation heatmaps and verification evaluation for embedding models."""


_config_opt = click.option("--config", "config_path", default=None, help="JSON config file.")
_out_opt = click.option("--out", default=None, help="Output directory.")
_seed_opt = click.option("--seed", type=int, default=None, help="Master seed.")
_embedder_opt = click.option(
    "--embedder",
    default=None,
    help="Embedder spec: region[:...], constant[:...], projection[:...], emb:<path>, bridge:<cmd>.",
)
_parallel_opt = click.option("--parallelism", type=int, default=None, help="Worker count.")


@cli.command()
@_config_opt
@_out_opt
@click.option("--image", "image_path", default=None, help="Image to segment.")
@click.option("--k", "k_target", type=int, default=None, help="Superpixel target count.")
@click.option("--compactness", type=float, default=None)
def segment(config_path, out, image_path, k_target, compactness):
    """Segment an image and export the label map and boundary overlay."""
    settings = Settings(config_path)
    out = settings.require("out", out, "output directory")
    image_path = settings.require("image", image_path, "input image")
    k_target = int(settings.get("k_target", k_target, 75))
    compactness = float(settings.get("compactness", compactness, 10.0))
    run = RunWriter("segment", out, None, {"image": image_path, "k_target": k_target,
                                           "compactness": compactness})
    img = load_image(image_path)
    sp = slic_segment(img, k_target, compactness=compactness)
    run.stage("segment")
    stem = Path(image_path).stem
    export_label_pgm(run.path(f"{stem}_labels.pgm"), sp)
    save_image(run.path(f"{stem}_boundaries.png"), boundary_overlay(img, sp))
    run.extra["k_actual"] = sp.k_actual
    run.stage("write")
    run.finish()


@cli.command("explain")
@_config_opt
@_out_opt
@_seed_opt
@_embedder_opt
@_parallel_opt
@click.option("--image", "image_path", default=None, help="Single image to explain.")
@click.option("--manifest", "manifest_path", default=None, help="Dataset manifest JSON.")
@click.option("--k", "k_target", type=int, default=None)
@click.option("--samples", "n_samples", type=int, default=None)
@click.option("--p-blackout", type=float, default=None)
@click.option("--sigma", type=float, default=None)
@click.option("--kernel-width", type=float, default=None)
@click.option("--ridge-lambda", type=float, default=None)
@click.option("--fill", default=None, help="Fill value, e.g. 0,0,0.")
@click.option("--flip-average/--no-flip-average", default=None)
@click.option("--emit-masks", is_flag=True, default=False, help="Also write mask CSVs.")
def explain_cmd(
    config_path, out, seed, embedder, parallelism, image_path, manifest_path,
    k_target, n_samples, p_blackout, sigma, kernel_width, ridge_lambda, fill,
    flip_average, emit_masks,
):
    """Explain one image or every image in a manifest."""
    settings = Settings(config_path)
    out = settings.require("out", out, "output directory")
    spec = settings.require("embedder", embedder, "embedder spec")
    master_seed = int(settings.get("seed", seed, 0))
    workers = int(settings.get("parallelism", parallelism, 1))
    fill_value = _parse_fill(fill) if fill is not None else None
    image_path = settings.get("image", image_path, None)
    manifest_path = settings.get("manifest", manifest_path, None)
    if (image_path is None) == (manifest_path is None):
        raise ConfigError("give exactly one of --image or --manifest")

    if manifest_path:
        manifest = load_manifest(manifest_path)
        paths = manifest.image_paths()
        _check_images_exist(paths)
    else:
        paths = [image_path]

    base_cfg = settings.explain_config(
        master_seed, fill_value,
        k_target=k_target, n_samples=n_samples, p_blackout=p_blackout,
        sigma=sigma, kernel_width=kernel_width, ridge_lambda=ridge_lambda,
        flip_average=flip_average,
    )
    run = RunWriter("explain", out, master_seed,
                    {"explain": base_cfg.to_metadata(), "embedder_spec": spec,
                     "images": paths, "parallelism": workers})
    pool = EmbedderPool(spec)
    try:
        def one(index: int, path: str):
            cfg = dataclasses.replace(base_cfg, seed=master_seed ^ index)
            t0 = time.monotonic()
            img = load_image(path)
            heatmap, fit, sp = explain(img, pool.get(), cfg)
            wall = time.monotonic() - t0
            return (index, path, cfg, heatmap, fit, sp, wall)

        results = _map_ordered(one, paths, workers)
        run.stage("explain")

        embedder_desc = pool.get().descriptor
        for index, path, cfg, heatmap, fit, sp, wall in results:
            stem = artifact_stem(index, path)
            hm_write(run.path("heatmaps", f"{stem}.hm"), heatmap)
            heatmap_to_png(run.path("heatmaps", f"{stem}.png"), heatmap)
            report = {
                "image": path,
                "coefficients": fit.coefficients.tolist(),
                "intercept": fit.intercept,
                "weighted_r2": fit.goodness,
                "k_actual": sp.k_actual,
                "config": cfg.to_metadata(),
                "master_seed": master_seed,
                "embedder": {
                    "name": embedder_desc.name,
                    "dim": embedder_desc.dim,
                    "kind": embedder_desc.kind,
                },
                "wall_time_s": round(wall, 6),
            }
            _atomic.write_text(run.path("fits", f"{stem}.json"), _json_dumps(report))
            if emit_masks:
                from .perturbation import sample_masks

                pset = sample_masks(cfg.perturb_config(), sp.k_actual)
                _atomic.write_text(run.path("masks", f"{stem}.csv"), masks_to_csv(pset))
        run.stage("write")
    finally:
        pool.close()
    run.finish()


@cli.command()
@_config_opt
@_out_opt
@click.option("--dir", "hm_dir", default=None, help="Directory of .hm files.")
def avgmap(config_path, out, hm_dir):
    """Average all heatmaps in a directory."""
    settings = Settings(config_path)
    out = settings.require("out", out, "output directory")
    hm_dir = settings.require("dir", hm_dir, "heatmap directory")
    names = sorted(n for n in os.listdir(hm_dir) if n.endswith(".hm"))
    if not names:
        raise DataError(f"no .hm files in {hm_dir!r}")
    run = RunWriter("avgmap", out, None, {"dir": hm_dir, "count": len(names)})
    maps = [hm_read(os.path.join(hm_dir, n)) for n in names]
    avg = average_heatmaps(maps)
    run.stage("average")
    hm_write(run.path("average.hm"), avg)
    heatmap_to_png(run.path("average.png"), avg)
    run.stage("write")
    run.finish()


@cli.command("psnr-hist")
@_config_opt
@_out_opt
@click.option("--dir-a", default=None, help="First directory of .hm files.")
@click.option("--dir-b", default=None, help="Second directory of .hm files.")
@click.option("--bins", type=int, default=None, help="Histogram bin count.")
@click.option("--range", "bin_range", default=None, help="Histogram range, e.g. 14:33.")
def psnr_hist(config_path, out, dir_a, dir_b, bins, bin_range):
    """Per-image PSNR between two heatmap directories, plus a histogram."""
    settings = Settings(config_path)
    out = settings.require("out", out, "output directory")
    dir_a = settings.require("dir_a", dir_a, "first heatmap directory")
    dir_b = settings.require("dir_b", dir_b, "second heatmap directory")
    bins = int(settings.get("bins", bins, 19))
    if bins < 1:
        raise ConfigError(f"bins must be >= 1, got {bins}")
    range_text = settings.get("range", bin_range, "14:33")
    try:
        lo_text, _, hi_text = str(range_text).partition(":")
        lo, hi = float(lo_text), float(hi_text)
    except ValueError as exc:
        raise ConfigError(f"bad histogram range {range_text!r}") from exc
    if not lo < hi:
        raise ConfigError(f"bad histogram range {range_text!r}")

    names_a = sorted(n for n in os.listdir(dir_a) if n.endswith(".hm"))
    names_b = sorted(n for n in os.listdir(dir_b) if n.endswith(".hm"))
    if names_a != names_b:
        raise DataError(
            f"heatmap filename sets differ between {dir_a!r} and {dir_b!r}"
        )
    if not names_a:
        raise DataError(f"no .hm files in {dir_a!r}")
    run = RunWriter("psnr-hist", out, None,
                    {"dir_a": dir_a, "dir_b": dir_b, "bins": bins, "range": [lo, hi]})

    values = []
    rows = []
    for name in names_a:
        value = psnr(hm_read(os.path.join(dir_a, name)), hm_read(os.path.join(dir_b, name)))
        rows.append((name, value))
        values.append(value)
    run.stage("psnr")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["filename", "psnr_db"])
    for name, value in rows:
        writer.writerow([name, repr(value)])
    _atomic.write_text(run.path("psnr_per_image.csv"), buf.getvalue())

    finite = np.array([v for v in values if math.isfinite(v)], dtype=np.float64)
    counts, edges = np.histogram(np.clip(finite, lo, hi), bins=bins, range=(lo, hi))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bin_low_db", "bin_high_db", "count"])
    for i in range(bins):
        writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(counts[i])])
    _atomic.write_text(run.path("psnr_histogram.csv"), buf.getvalue())
    run.extra["n_images"] = len(rows)
    run.extra["n_infinite"] = len(rows) - int(finite.size)
    run.stage("write")
    run.finish()


@cli.command()
@_config_opt
@_out_opt
@_embedder_opt
@_parallel_opt
@click.option("--manifest", "manifest_path", default=None, help="Dataset manifest JSON.")
@click.option("--pose", default=None, help="Pose pair filter, e.g. f:p.")
def verify(config_path, out, embedder, parallelism, manifest_path, pose):
    """Score genuine/impostor pairs and report the EER."""
    settings = Settings(config_path)
    out = settings.require("out", out, "output directory")
    spec = settings.require("embedder", embedder, "embedder spec")
    manifest_path = settings.require("manifest", manifest_path, "dataset manifest")
    pose = settings.get("pose", pose, None)
    pose_filter = _parse_pose_filter(pose) if pose else None

    manifest = load_manifest(manifest_path)
    _check_images_exist(manifest.image_paths())
    genuine_pairs, impostor_pairs = generate_pairs(manifest, pose_filter)
    run = RunWriter("verify", out, None,
                    {"manifest": manifest_path, "embedder_spec": spec,
                     "pose": list(pose_filter) if pose_filter else None})
    pool = EmbedderPool(spec)
    try:
        scores, failures = score_pairs(genuine_pairs, impostor_pairs, pool.get())
    finally:
        pool.close()
    run.stage("score")
    if not scores.genuine or not scores.impostor:
        raise EmbedderError(
            f"all pairs failed to score ({len(failures)} failures); cannot compute EER"
        )
    eer_percent, threshold = eer(scores)
    _atomic.write_text(run.path("scores.csv"), scores_to_csv(scores))
    if failures:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["subject_a", "image_a", "subject_b", "image_b", "reason"])
        for f in failures:
            writer.writerow([f.pair.subject_a, f.pair.image_a, f.pair.subject_b,
                             f.pair.image_b, f.reason])
        _atomic.write_text(run.path("failures.csv"), buf.getvalue())
    report = {
        "eer_percent": eer_percent,
        "threshold": _finite_or_str(threshold),
        "n_genuine": len(scores.genuine),
        "n_impostor": len(scores.impostor),
        "n_failures": len(failures),
        "config": {
            "manifest": manifest_path,
            "embedder_spec": spec,
            "pose": list(pose_filter) if pose_filter else None,
        },
    }
    _atomic.write_text(run.path("eer_report.json"), _json_dumps(report))
    run.stage("write")
    run.finish()


@cli.command("fuse-sweep")
@_config_opt
@_out_opt
@click.option("--scores-a", default=None, help="Score CSV of system A.")
@click.option("--scores-b", default=None, help="Score CSV of system B.")
@click.option("--step", type=float, default=None, help="Weight step (default 0.01).")
def fuse_sweep(config_path, out, scores_a, scores_b, step):
    """Sweep the fusion weight over two score CSVs and report EER per weight."""
    settings = Settings(config_path)
    out = settings.require("out", out, "output directory")
    scores_a = settings.require("scores_a", scores_a, "first score CSV")
    scores_b = settings.require("scores_b", scores_b, "second score CSV")
    step = float(settings.get("step", step, 0.01))
    run = RunWriter("fuse-sweep", out, None,
                    {"scores_a": scores_a, "scores_b": scores_b, "step": step})

    def read_scores(path):
        try:
            with open(path) as fh:
                return scores_from_csv(fh.read())
        except OSError as exc:
            raise DataError(f"cannot read score CSV {path!r}: {exc}") from exc

    set_a = read_scores(scores_a)
    set_b = read_scores(scores_b)
    result = fusion_sweep(set_a, set_b, step)
    run.stage("sweep")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["a", "eer_percent"])
    for a, value in result.rows:
        writer.writerow([repr(a), repr(value)])
    _atomic.write_text(run.path("fusion_sweep.csv"), buf.getvalue())
    _atomic.write_text(
        run.path("fusion_best.json"),
        _json_dumps({"best_a": result.best_a, "best_eer_percent": result.best_eer}),
    )
    run.stage("write")
    run.finish()


@cli.command()
@_config_opt
@_out_opt
@_seed_opt
@_embedder_opt
@click.option("--manifest", "manifest_path", default=None, help="Dataset manifest JSON.")
@click.option("--heatmap-dir", default=None, help="Directory of per-image .hm files.")
@click.option("--thresholds", default=None, help="Comma-separated thresholds, e.g. 1.0,0.9,0.8.")
@click.option("--fill", default=None, help="Fill value, e.g. 0,0,0.")
def ablate(config_path, out, seed, embedder, manifest_path, heatmap_dir, thresholds, fill):
    """Remove the hottest pixels per heatmap (vs. a random matched budget)
    and rescore verification at each threshold."""
    settings = Settings(config_path)
    out = settings.require("out", out, "output directory")
    spec = settings.require("embedder", embedder, "embedder spec")
    manifest_path = settings.require("manifest", manifest_path, "dataset manifest")
    heatmap_dir = settings.require("heatmap_dir", heatmap_dir, "heatmap directory")
    master_seed = int(settings.get("seed", seed, 0))
    thresholds_text = settings.get("thresholds", thresholds, "1.0,0.9,0.8,0.7,0.6,0.5,0.4,0.3")
    if isinstance(thresholds_text, str):
        try:
            threshold_list = [float(v) for v in thresholds_text.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad thresholds {thresholds_text!r}") from exc
    else:
        threshold_list = [float(v) for v in thresholds_text]

    manifest = load_manifest(manifest_path)
    _check_images_exist(manifest.image_paths())
    pool = EmbedderPool(spec)
    try:
        live = pool.get()
        if fill is not None:
            fill_value = _parse_fill(fill)
        elif "fill" in settings.data:
            fill_value = tuple(settings.data["fill"])
        elif live.descriptor.preferred_fill:
            fill_value = live.descriptor.preferred_fill
        else:
            fill_value = (0, 0, 0)

        heatmaps: dict[str, Heatmap] = {}
        for index, path in enumerate(manifest.image_paths()):
            stem = artifact_stem(index, path)
            candidates = [
                os.path.join(heatmap_dir, f"{stem}.hm"),
                os.path.join(heatmap_dir, f"{Path(path).stem}.hm"),
            ]
            for candidate in candidates:
                if os.path.isfile(candidate):
                    heatmaps[path] = hm_read(candidate)
                    break
            else:
                raise DataError(f"no heatmap found for {path!r} (tried {candidates})")

        run = RunWriter("ablate", out, master_seed,
                        {"manifest": manifest_path, "embedder_spec": spec,
                         "heatmap_dir": heatmap_dir, "thresholds": threshold_list,
                         "fill": list(fill_value)})
        reports = ablation_sweep(
            manifest, live, heatmaps, threshold_list, fill_value, master_seed
        )
    finally:
        pool.close()
    run.stage("sweep")
    _atomic.write_text(run.path("ablation.csv"), reports_to_csv(reports))
    run.stage("write")
    run.finish()


@cli.command("embed-batch")
@_config_opt
@_out_opt
@_embedder_opt
@click.option("--manifest", "manifest_path", default=None, help="Dataset manifest JSON.")
@click.option("--name", "batch_name", default=None, help="Batch file name (default batch.emb).")
@click.option("--flip-average/--no-flip-average", "flip_average", default=True,
              help="Store flip-averaged verification descriptors (default on).")
def embed_batch(config_path, out, embedder, manifest_path, batch_name, flip_average):
    """Precompute descriptors for every manifest image into an .emb file."""
    settings = Settings(config_path)
    out = settings.require("out", out, "output directory")
    spec = settings.require("embedder", embedder, "embedder spec")
    manifest_path = settings.require("manifest", manifest_path, "dataset manifest")
    batch_name = settings.get("name", batch_name, "batch.emb")
    manifest = load_manifest(manifest_path)
    paths = manifest.image_paths()
    _check_images_exist(paths)
    run = RunWriter("embed-batch", out, None,
                    {"manifest": manifest_path, "embedder_spec": spec,
                     "flip_average": flip_average, "count": len(paths)})
    pool = EmbedderPool(spec)
    try:
        live = pool.get()
        rows = np.zeros((len(paths), live.descriptor.dim), dtype=np.float32)
        for i, path in enumerate(paths):
            img = load_image(path)
            if flip_average:
                rows[i] = verification_descriptor(live, img)
            else:
                from .embedding import embed as embed_one

                rows[i] = embed_one(live, img).astype(np.float32)
    finally:
        pool.close()
    run.stage("embed")
    emb_write(run.path(batch_name), rows, paths)
    run.stage("write")
    run.finish()


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except DataError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except EmbedderError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    except (NumericalError, ValueError, ArithmeticError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 4
    except VerilimeError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
