"""Locality-weighted linear surrogate fitting and heatmap rendering.

Two response modes share one pipeline: embedding-similarity mode scores
each perturbed image by cosine similarity against the unperturbed image's
feature vector; scalar mode scores it with a caller-supplied image -> [0,1]
probe (the classic classifier-probability setup).

Responses are recorded at single precision before the fit. Cosine
similarity is scale-invariant in exact arithmetic; quantizing the responses
makes the rendered heatmap bit-stable under positive rescaling of the
embedder's outputs as well.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .embedding import Embedder, cosine_similarity, embed, flip_averaged_descriptor, scalar_probe
from .errors import EmbedderError, SingularSystemError
from .perturbation import PRNG_NAME, PerturbConfig, apply_mask, sample_masks
from .raster import Heatmap, Image, gaussian_smooth, normalize_01
from .segmentation import SuperpixelMap, slic_segment


@dataclass(frozen=True)
class ExplainConfig:
    """Pipeline parameters; the defaults are the reference operating point
    (75 superpixels, 1000 perturbations, 60% blackout, sigma 4)."""

    k_target: int = 75
    n_samples: int = 1000
    p_blackout: float = 0.6
    sigma: float = 4.0
    kernel_width: float = 0.25
    ridge_lambda: float = 1e-3
    fill: tuple[int, ...] = (0, 0, 0)
    seed: int = 0
    flip_average: bool = False

    def __post_init__(self):
        if self.ridge_lambda < 0:
            raise ValueError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")

    def perturb_config(self) -> PerturbConfig:
        return PerturbConfig(
            n_samples=self.n_samples,
            p_blackout=self.p_blackout,
            fill_value=tuple(self.fill),
            kernel_width=self.kernel_width,
            seed=self.seed,
        )

    def to_metadata(self) -> dict:
        return {
            "k_target": self.k_target,
            "n_samples": self.n_samples,
            "p_blackout": self.p_blackout,
            "sigma": self.sigma,
            "kernel_width": self.kernel_width,
            "ridge_lambda": self.ridge_lambda,
            "fill": list(self.fill),
            "seed": self.seed,
            "flip_average": self.flip_average,
            "prng": PRNG_NAME,
        }


@dataclass(frozen=True)
class SurrogateFit:
    """Fitted surrogate: one coefficient per superpixel, plus diagnostics."""

    coefficients: np.ndarray
    intercept: float
    responses: np.ndarray
    weights: np.ndarray
    goodness: float  # weighted R^2

    def __post_init__(self):
        object.__setattr__(
            self, "coefficients", np.ascontiguousarray(self.coefficients, dtype=np.float64)
        )
        object.__setattr__(
            self, "responses", np.ascontiguousarray(self.responses, dtype=np.float32)
        )
        object.__setattr__(
            self, "weights", np.ascontiguousarray(self.weights, dtype=np.float64)
        )


def fit_weighted_ridge(
    X: np.ndarray, y: np.ndarray, w: np.ndarray, ridge_lambda: float
) -> SurrogateFit:
    """Minimize sum_i w_i (y_i - b0 - X_i b)^2 + lambda * |b|^2.

    The intercept is unpenalized. Solved by Cholesky factorization of the
    normal equations; any lambda > 0 makes the system positive definite.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D design matrix")
    n, k = X.shape
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError("y and w must have one entry per design row")
    if np.any(w <= 0):
        raise ValueError("all weights must be positive")
    if ridge_lambda < 0:
        raise ValueError(f"ridge_lambda must be >= 0, got {ridge_lambda}")
    if n < k + 1:
        warnings.warn(
            f"underdetermined fit: {n} samples for {k} features plus intercept",
            stacklevel=2,
        )

    design = np.hstack([np.ones((n, 1)), X])
    weighted = design * w[:, np.newaxis]
    normal = design.T @ weighted
    normal[1:, 1:] += ridge_lambda * np.eye(k)
    rhs = weighted.T @ y
    try:
        factor = scipy.linalg.cho_factor(normal, lower=True)
        theta = scipy.linalg.cho_solve(factor, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            "normal equations are singular; use ridge_lambda > 0 or a full-rank design"
        ) from exc

    predicted = design @ theta
    w_total = w.sum()
    y_mean = float(np.dot(w, y) / w_total)
    tss = float(np.dot(w, (y - y_mean) ** 2))
    rss = float(np.dot(w, (y - predicted) ** 2))
    if tss < 1e-24:
        goodness = 1.0 if rss < 1e-24 else 0.0
    else:
        goodness = 1.0 - rss / tss
    return SurrogateFit(
        coefficients=theta[1:],
        intercept=float(theta[0]),
        responses=y.astype(np.float32),
        weights=w,
        goodness=goodness,
    )


def paint_coefficients(fit: SurrogateFit, sp: SuperpixelMap) -> Heatmap:
    """Raw coefficient map: every pixel takes its superpixel's coefficient."""
    if fit.coefficients.shape != (sp.k_actual,):
        raise ValueError(
            f"fit has {fit.coefficients.shape[0]} coefficients, map has {sp.k_actual} regions"
        )
    return Heatmap(values=fit.coefficients[sp.labels])


def _explain_with_responses(
    img: Image,
    respond: Callable[[Image], float],
    cfg: ExplainConfig,
) -> tuple[Heatmap, SurrogateFit, SuperpixelMap]:
    sp = slic_segment(img, cfg.k_target)
    pset = sample_masks(cfg.perturb_config(), sp.k_actual)
    responses = np.empty(pset.n, dtype=np.float32)
    for i in range(pset.n):
        perturbed = apply_mask(img, sp, pset.masks[i], cfg.fill)
        try:
            responses[i] = respond(perturbed)
        except (EmbedderError, ValueError) as exc:
            raise EmbedderError(
                f"aborted after {i} of {pset.n} perturbation queries: {exc}"
            ) from exc
    fit = fit_weighted_ridge(
        pset.masks, responses.astype(np.float64), pset.weights, cfg.ridge_lambda
    )
    raw = paint_coefficients(fit, sp)
    heatmap = normalize_01(gaussian_smooth(raw, cfg.sigma))
    return heatmap, fit, sp


def explain(
    img: Image,
    embedder: Embedder,
    cfg: ExplainConfig,
    reference: np.ndarray | None = None,
) -> tuple[Heatmap, SurrogateFit, SuperpixelMap]:
    """Embedding-similarity explanation of a single image.

    Each perturbed image's response is the cosine similarity between its
    feature vector and the unperturbed image's. Passing ``reference``
    switches to pair mode: responses are computed against that embedding
    instead (e.g. an enrolled template).
    """
    descriptor_of = flip_averaged_descriptor if cfg.flip_average else embed
    anchor = descriptor_of(embedder, img) if reference is None else np.asarray(
        reference, dtype=np.float64
    )

    def respond(perturbed: Image) -> float:
        return cosine_similarity(anchor, descriptor_of(embedder, perturbed))

    return _explain_with_responses(img, respond, cfg)


def explain_scalar(
    img: Image,
    probe: Callable[[Image], float],
    cfg: ExplainConfig,
) -> tuple[Heatmap, SurrogateFit, SuperpixelMap]:
    """Scalar-score explanation: responses come from an image -> [0,1] probe."""

    def respond(perturbed: Image) -> float:
        return scalar_probe(probe, perturbed)

    return _explain_with_responses(img, respond, cfg)
