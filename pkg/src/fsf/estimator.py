"""Scikit-learn style front end for the attack and reconstruction loops.

``ShapeAttack.fit(image, boxes)`` learns the Fourier coefficients of an
adversarial patch for a scene; ``transform(image)`` composites the learned
patch into an image. ``FourierShapeReconstructor.fit(mask)`` fits
coefficients to a binary target mask. Both expose their hyperparameters
through get_params/set_params so they compose with sklearn tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .engine import AttackConfig, config_from_dict, evaluate_asr, optimize
from .objectives import (
    MaskMatchObjective,
    MeanIntensityObjective,
    TemplateCorrelationObjective,
)
from .placement import TargetBox, apply_patch, check_image, place_mask
from .raster import GridSpec, rasterize
from .shapes import CurveSampling, InvalidInputError
from .toyscene import load_template


def check_boxes(boxes) -> list[TargetBox]:
    out = []
    for b in boxes:
        if isinstance(b, TargetBox):
            out.append(b)
        elif isinstance(b, dict):
            out.append(TargetBox(float(b["cx"]), float(b["cy"]),
                                 float(b["w"]), float(b["h"])))
        else:
            cx, cy, w, h = (float(v) for v in b)
            out.append(TargetBox(cx, cy, w, h))
    if not out:
        raise InvalidInputError("need at least one target box")
    return out


def make_objective(name: str, targets: list[TargetBox] | None = None,
                   reference_mask: np.ndarray | None = None):
    """Objective selector shared by the CLI and the estimators."""
    if name == "mean_intensity":
        if not targets:
            raise InvalidInputError("mean_intensity objective needs target boxes")
        return MeanIntensityObjective(targets)
    if name == "template":
        return TemplateCorrelationObjective(load_template())
    if name == "mask_match":
        if reference_mask is None:
            raise InvalidInputError("mask_match objective needs a reference mask")
        return MaskMatchObjective(reference_mask)
    raise InvalidInputError(f"unknown objective {name!r}")


class ShapeAttack(BaseEstimator, TransformerMixin):
    """Gradient-based shape-patch attack as a fit/transform estimator."""

    def __init__(self, objective="mean_intensity", K=6, grid_size=200,
                 curve_samples=1000, rho=0.6, gray=0.0, alpha=1.0, beta=0.1,
                 gamma=0.1, learning_rate=0.002, max_iters=1000,
                 early_stop_threshold=0.1, early_stop_patience=10,
                 schedule_trigger=None, schedule_factor=0.2, augment=False,
                 association_iou=0.5, seed=0, threads=None):
        self.objective = objective
        self.K = K
        self.grid_size = grid_size
        self.curve_samples = curve_samples
        self.rho = rho
        self.gray = gray
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.max_iters = max_iters
        self.early_stop_threshold = early_stop_threshold
        self.early_stop_patience = early_stop_patience
        self.schedule_trigger = schedule_trigger
        self.schedule_factor = schedule_factor
        self.augment = augment
        self.association_iou = association_iou
        self.seed = seed
        self.threads = threads

    def _config(self) -> AttackConfig:
        return config_from_dict({
            "k": self.K, "grid": self.grid_size, "samples": self.curve_samples,
            "rho": self.rho, "gray": self.gray, "alpha": self.alpha,
            "beta": self.beta, "gamma": self.gamma,
            "learning_rate": self.learning_rate, "max_iters": self.max_iters,
            "early_stop_threshold": self.early_stop_threshold,
            "early_stop_patience": self.early_stop_patience,
            "schedule_trigger": self.schedule_trigger,
            "schedule_factor": self.schedule_factor, "augment": self.augment,
            "association_iou": self.association_iou, "seed": self.seed,
            "threads": self.threads,
        })

    def _objective(self, targets):
        if isinstance(self.objective, str):
            return make_objective(self.objective, targets=targets)
        return self.objective

    def fit(self, X, y):
        """Optimize the patch shape for scene X against target boxes y."""
        image = check_image(np.asarray(X))
        targets = check_boxes(y)
        config = self._config()
        result = optimize(image, targets, self._objective(targets), config)
        self.theta_ = result.theta
        self.trace_ = result.trace
        self.stop_reason_ = result.stop_reason
        self.targets_ = targets
        self.config_ = config
        return self

    def _check_fitted(self):
        if not hasattr(self, "theta_"):
            raise NotFittedError("ShapeAttack is not fitted yet; call fit first")

    @property
    def mask_(self) -> np.ndarray:
        self._check_fitted()
        return rasterize(self.theta_, self.config_.grid, self.config_.sampling,
                         self.config_.threads)

    def transform(self, X):
        """Composite the learned patch onto an image at the fitted targets."""
        self._check_fitted()
        image = check_image(np.asarray(X))
        mask = self.mask_
        m_sum = np.zeros(image.shape)
        for b in self.targets_:
            m_sum += place_mask(mask, b, self.config_.placement.rho, image.shape)
        return apply_patch(image, np.clip(m_sum, 0.0, 1.0),
                           self.config_.placement.gray)

    def score(self, X, y=None) -> float:
        """Mean confidence drop over the fitted targets (higher is better)."""
        self._check_fitted()
        image = check_image(np.asarray(X))
        targets = self.targets_ if y is None else check_boxes(y)
        report = evaluate_asr([(image, targets, self.theta_)],
                              self._objective(targets), [0.5], self.config_)
        return report["mean_confidence_drop"]


class FourierShapeReconstructor(BaseEstimator):
    """Fit Fourier coefficients to a binary target mask (mask-MSE descent)."""

    def __init__(self, K=6, curve_samples=192, learning_rate=0.001,
                 max_iters=800, gamma=0.1, seed=0, threads=None):
        self.K = K
        self.curve_samples = curve_samples
        self.learning_rate = learning_rate
        self.max_iters = max_iters
        self.gamma = gamma
        self.seed = seed
        self.threads = threads

    def fit(self, X, y=None):
        target = np.asarray(X, dtype=np.float64)
        if target.ndim != 2:
            raise InvalidInputError("target mask must be 2D")
        if target.max() <= 0.0:
            raise InvalidInputError("target mask is empty")
        grid = GridSpec(*target.shape)

        # seed the shape from the target's bounding box in shape space
        rows = np.nonzero(target.max(axis=1) > 0.5)[0]
        cols = np.nonzero(target.max(axis=0) > 0.5)[0]
        py, px = grid.pixel_pitch[1], grid.pixel_pitch[0]
        y0, y1 = rows[0] * py - 0.5, rows[-1] * py - 0.5
        x0, x1 = cols[0] * px - 0.5, cols[-1] * px - 0.5
        placement = ((x0 + x1) / 2, (y0 + y1) / 2, max(x1 - x0, 4 * px),
                     max(y1 - y0, 4 * py))

        config = AttackConfig(
            K=self.K, grid=grid, sampling=CurveSampling(self.curve_samples),
            alpha=0.0, beta=0.0, gamma=self.gamma,
            learning_rate=self.learning_rate, max_iters=self.max_iters,
            early_stop_threshold=0.0,  # score-based stop never fires
            seed=self.seed, threads=self.threads, init_placement=placement,
        )
        result = optimize(None, [], MaskMatchObjective(target), config)
        self.theta_ = result.theta
        self.trace_ = result.trace
        self.config_ = config
        self.target_ = target
        return self

    def _check_fitted(self):
        if not hasattr(self, "theta_"):
            raise NotFittedError("FourierShapeReconstructor is not fitted yet")

    def predict(self, X=None) -> np.ndarray:
        """Rasterized mask of the fitted shape."""
        self._check_fitted()
        return rasterize(self.theta_, self.config_.grid, self.config_.sampling,
                         self.config_.threads)

    def score(self, X=None, y=None) -> float:
        """IoU between the fitted mask (> 0.5) and the target (> 0.5)."""
        self._check_fitted()
        fitted = self.predict() > 0.5
        target = self.target_ > 0.5
        union = np.logical_or(fitted, target).sum()
        if union == 0:
            return 1.0
        return float(np.logical_and(fitted, target).sum() / union)
