"""Composite attack loss, Adam optimization loop, and ASR evaluation.

The total loss is L_adv + alpha * L_area + beta * L_reg: the attack term
suppresses every detector proposal associated with a target box, the area
term is the mean of the shape mask, and the regularization term penalizes
high harmonics. One optimization step runs the full differentiable chain
rasterize -> place -> apply -> objective and its exact adjoint back to the
Fourier coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .objectives import DetectionObjective, MaskObjective, Proposal
from .placement import (
    IDENTITY_DRAW,
    AugmentationRanges,
    PlacementParams,
    TargetBox,
    TransformDraw,
    apply_patch,
    applied_mask_gradient,
    check_image,
    place_mask,
    sample_augmentation,
    scatter_to_mask,
)
from .raster import GridSpec, normalize_mask, rasterize_backward, winding_field
from .shapes import (
    CurveSampling,
    FourierCoefficients,
    InvalidInputError,
    init_coefficients,
    reg_loss,
    theta_to_vector,
    vector_to_theta,
)

SCORE_CLAMP = 1.0 - 1e-7


class NumericalAbortError(RuntimeError):
    """Optimization hit a non-finite loss or gradient."""

    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class AttackConfig:
    """Every knob of the attack loop, with the published defaults."""

    K: int = 6
    grid: GridSpec = field(default_factory=lambda: GridSpec(200, 200))
    sampling: CurveSampling = field(default_factory=lambda: CurveSampling(1000))
    placement: PlacementParams = field(default_factory=PlacementParams)
    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 0.1
    learning_rate: float = 0.002
    max_iters: int = 1000
    early_stop_threshold: float = 0.1
    early_stop_patience: int = 10
    schedule_trigger: float | None = None
    schedule_factor: float = 0.2
    augment: bool = False
    augmentation: AugmentationRanges = field(default_factory=AugmentationRanges)
    association_iou: float = 0.5
    seed: int = 0
    threads: int | None = None
    init_placement: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    init_fraction: float = 0.8

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InvalidInputError("alpha and beta must be >= 0")
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be > 0")
        if not 0.0 <= self.early_stop_threshold <= 1.0:
            raise InvalidInputError("early_stop_threshold must be in [0, 1]")
        if self.schedule_trigger is not None and not 0.0 <= self.schedule_trigger <= 1.0:
            raise InvalidInputError("schedule_trigger must be in [0, 1]")
        if self.max_iters < 1 or self.early_stop_patience < 1:
            raise InvalidInputError("max_iters and early_stop_patience must be >= 1")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    adv: float
    area: float
    reg: float
    max_associated_score: float


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    breakdown: LossBreakdown
    lr: float


@dataclass(frozen=True)
class OptimizeResult:
    theta: FourierCoefficients
    trace: list[IterationRecord]
    stop_reason: str  # "early_stop" | "max_iters"

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def final(self) -> LossBreakdown:
        return self.trace[-1].breakdown


def box_iou(a: TargetBox, b: TargetBox) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def associate_proposals(proposals: list[Proposal], targets: list[TargetBox],
                        iou_threshold: float) -> list[list[int]]:
    """Per-target lists of proposal indices with IoU >= threshold.

    A proposal may associate with several targets.
    """
    return [
        [i for i, p in enumerate(proposals) if box_iou(p.box, t) >= iou_threshold]
        for t in targets
    ]


def adv_loss(scores) -> tuple[float, np.ndarray]:
    """L_adv = -sum log(1 - s_i) over the associated scores.

    Scores are clamped to <= 1 - 1e-7 before the log; the gradient w.r.t.
    each (clamped) score is 1 / (1 - s_i).
    """
    s = np.clip(np.asarray(scores, dtype=np.float64), 0.0, SCORE_CLAMP)
    if s.size == 0:
        return 0.0, s
    return float(-np.log1p(-s).sum()), 1.0 / (1.0 - s)


def area_loss(mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean mask value; the gradient is uniform 1/(H_s*W_s)."""
    n = mask.size
    return float(mask.sum() / n), np.full(mask.shape, 1.0 / n)


def max_associated_score(proposals: list[Proposal], associated: list[list[int]]) -> float:
    best = 0.0
    for idxs in associated:
        for i in idxs:
            best = max(best, proposals[i].score)
    return best


def total_loss(
    image: np.ndarray | None,
    targets: list[TargetBox],
    theta: FourierCoefficients,
    objective,
    config: AttackConfig,
    draw: TransformDraw = IDENTITY_DRAW,
) -> tuple[LossBreakdown, np.ndarray]:
    """One full forward + adjoint pass; returns the loss parts and dL/dtheta.

    ``objective`` is either a DetectionObjective (image-space chain) or a
    MaskObjective (loss directly on the shape mask; image and targets are
    ignored). The returned gradient uses the flat real coefficient layout.
    """
    field_ = winding_field(theta, config.grid, config.sampling, config.threads)
    mask = normalize_mask(field_)
    area, d_area = area_loss(mask)
    reg, d_reg = reg_loss(theta, config.gamma)

    if isinstance(objective, MaskObjective):
        adv, d_mask_adv = objective.loss(mask)
        mask_grad = d_mask_adv + config.alpha * d_area
        max_score = 0.0
    elif isinstance(objective, DetectionObjective):
        image = check_image(image)
        rho = config.placement.rho
        gray = float(np.clip(config.placement.gray + draw.gray_jitter, 0.0, 1.0))
        placements = [place_mask(mask, b, rho, image.shape, draw) for b in targets]
        m_sum = np.zeros(image.shape)
        for m in placements:
            m_sum += m
        m_applied = np.clip(m_sum, 0.0, 1.0)
        adv_image = apply_patch(image, m_applied, gray)

        proposals = objective.forward(adv_image)
        associated = associate_proposals(proposals, targets, config.association_iou)
        flat = [i for idxs in associated for i in idxs]
        adv, grads = adv_loss([proposals[i].score for i in flat])
        score_grads = np.zeros(len(proposals))
        for g, i in zip(grads, flat):
            score_grads[i] += g
        max_score = max_associated_score(proposals, associated)

        image_grad = objective.backward(adv_image, proposals, score_grads)
        g_applied = applied_mask_gradient(image, m_applied, gray, image_grad)
        g_sum = g_applied * (m_sum <= 1.0)  # multi-placement clamp gate
        mask_grad = config.alpha * d_area
        for b in targets:
            mask_grad = mask_grad + scatter_to_mask(g_sum, b, rho, mask.shape, draw)
    else:
        raise InvalidInputError(f"unsupported objective type {type(objective)!r}")

    grad = rasterize_backward(theta, config.grid, config.sampling, mask_grad,
                              field=field_, threads=config.threads)
    grad += config.beta * d_reg
    total = adv + config.alpha * area + config.beta * reg
    return LossBreakdown(total=total, adv=adv, area=area, reg=reg,
                         max_associated_score=max_score), grad


class Adam:
    """Plain Adam on a flat parameter vector (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def optimize(
    image: np.ndarray | None,
    targets: list[TargetBox],
    objective,
    config: AttackConfig,
    init_theta: FourierCoefficients | None = None,
) -> OptimizeResult:
    """Adam loop with early stopping and the optional one-shot LR schedule.

    Terminates when max_associated_score stays below early_stop_threshold
    for early_stop_patience consecutive iterations, or at max_iters. The
    whole run is deterministic given the config seed.
    """
    rng = np.random.default_rng(config.seed)
    if init_theta is None:
        init_theta = init_coefficients(config.init_placement, config.K, rng,
                                       gamma=config.gamma,
                                       ellipse_fraction=config.init_fraction)
    if init_theta.K != config.K:
        raise InvalidInputError(f"init theta has K={init_theta.K}, config wants {config.K}")

    params = theta_to_vector(init_theta)
    adam = Adam(lr=config.learning_rate)
    trace: list[IterationRecord] = []
    consecutive = 0
    schedule_fired = False
    stop_reason = "max_iters"

    for it in range(config.max_iters):
        draw = sample_augmentation(config.augmentation, rng) if config.augment \
            else IDENTITY_DRAW
        theta = vector_to_theta(params, config.K)
        breakdown, grad = total_loss(image, targets, theta, objective, config, draw)
        if not (np.isfinite(breakdown.total) and np.all(np.isfinite(grad))):
            raise NumericalAbortError(
                f"non-finite loss or gradient at iteration {it}", trace
            )
        lr_used = adam.lr
        params = adam.step(params, grad)
        if not np.all(np.isfinite(params)):
            raise NumericalAbortError(
                f"parameters became non-finite at iteration {it}", trace
            )
        trace.append(IterationRecord(iteration=it, breakdown=breakdown, lr=lr_used))

        if (config.schedule_trigger is not None and not schedule_fired
                and breakdown.max_associated_score < config.schedule_trigger):
            adam.lr *= config.schedule_factor
            schedule_fired = True
        if breakdown.max_associated_score < config.early_stop_threshold:
            consecutive += 1
            if consecutive >= config.early_stop_patience:
                stop_reason = "early_stop"
                break
        else:
            consecutive = 0

    return OptimizeResult(theta=vector_to_theta(params, config.K), trace=trace,
                          stop_reason=stop_reason)


@dataclass(frozen=True)
class TargetOutcome:
    clean_score: float
    patched_score: float

    @property
    def confidence_drop(self) -> float:
        return self.clean_score - self.patched_score


def evaluate_asr(
    scenes: list[tuple[np.ndarray, list[TargetBox], FourierCoefficients]],
    objective_for,
    thresholds: list[float],
    config: AttackConfig,
) -> dict:
    """ASR(tau) = fraction of targets whose patched max associated score < tau.

    ``objective_for`` is a DetectionObjective or a callable targets ->
    DetectionObjective (for objectives that are built per scene). Also
    reports the mean confidence drop (clean minus patched max associated
    score per target) and flags the run as vacuous when no clean target
    score reaches even the lowest threshold.
    """
    thresholds = sorted(float(t) for t in thresholds)
    if not thresholds or min(thresholds) <= 0.0 or max(thresholds) >= 1.0:
        raise InvalidInputError("thresholds must lie strictly inside (0, 1)")

    outcomes: list[TargetOutcome] = []
    for image, targets, theta in scenes:
        image = check_image(image)
        objective = objective_for(targets) if callable(objective_for) else objective_for
        field_ = winding_field(theta, config.grid, config.sampling, config.threads)
        mask = normalize_mask(field_)
        m_sum = np.zeros(image.shape)
        for b in targets:
            m_sum += place_mask(mask, b, config.placement.rho, image.shape)
        patched = apply_patch(image, np.clip(m_sum, 0.0, 1.0), config.placement.gray)

        def per_target_max(img):
            props = objective.forward(img)
            assoc = associate_proposals(props, targets, config.association_iou)
            return [max((props[i].score for i in idxs), default=0.0)
                    for idxs in assoc]

        outcomes.extend(
            TargetOutcome(c, p)
            for c, p in zip(per_target_max(image), per_target_max(patched))
        )

    n = len(outcomes)
    asr = [sum(o.patched_score < t for o in outcomes) / n for t in thresholds]
    mean_drop = float(np.mean([o.confidence_drop for o in outcomes]))
    vacuous = all(o.clean_score < thresholds[0] for o in outcomes)
    return {
        "thresholds": thresholds,
        "asr": asr,
        "mean_confidence_drop": mean_drop,
        "per_target": [
            {"clean_score": o.clean_score, "patched_score": o.patched_score,
             "confidence_drop": o.confidence_drop}
            for o in outcomes
        ],
        "vacuous": vacuous,
    }


# --- flat config serialization (report echo / config files) -------------------


def config_to_dict(cfg: AttackConfig) -> dict:
    """Flat key/value view matching the CLI flag names."""
    return {
        "k": cfg.K,
        "grid": cfg.grid.h,
        "grid_w": cfg.grid.w,
        "samples": cfg.sampling.n_samples,
        "rho": cfg.placement.rho,
        "gray": cfg.placement.gray,
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "gamma": cfg.gamma,
        "learning_rate": cfg.learning_rate,
        "max_iters": cfg.max_iters,
        "early_stop_threshold": cfg.early_stop_threshold,
        "early_stop_patience": cfg.early_stop_patience,
        "schedule_trigger": cfg.schedule_trigger,
        "schedule_factor": cfg.schedule_factor,
        "augment": cfg.augment,
        "translate_px": cfg.augmentation.translate_px,
        "rotate_deg": cfg.augmentation.rotate_deg,
        "scale_lo": cfg.augmentation.scale_lo,
        "scale_hi": cfg.augmentation.scale_hi,
        "gray_jitter": cfg.augmentation.gray_jitter,
        "association_iou": cfg.association_iou,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
    }


def config_from_dict(data: dict, base: AttackConfig | None = None) -> AttackConfig:
    """Build a config from flat keys; unspecified fields keep base/defaults."""
    cfg = base if base is not None else AttackConfig()
    known = {
        "k", "grid", "grid_w", "samples", "rho", "gray", "alpha", "beta", "gamma",
        "learning_rate", "max_iters", "early_stop_threshold", "early_stop_patience",
        "schedule_trigger", "schedule_factor", "augment", "translate_px",
        "rotate_deg", "scale_lo", "scale_hi", "gray_jitter", "association_iou",
        "seed", "threads",
    }
    unknown = set(data) - known - {"adam_beta1", "adam_beta2", "adam_eps"}
    if unknown:
        raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")

    def pick(key, cur):
        return data[key] if key in data and data[key] is not None else cur

    grid_h = int(pick("grid", cfg.grid.h))
    grid_w = int(pick("grid_w", grid_h if "grid" in data else cfg.grid.w))
    aug = AugmentationRanges(
        translate_px=float(pick("translate_px", cfg.augmentation.translate_px)),
        rotate_deg=float(pick("rotate_deg", cfg.augmentation.rotate_deg)),
        scale_lo=float(pick("scale_lo", cfg.augmentation.scale_lo)),
        scale_hi=float(pick("scale_hi", cfg.augmentation.scale_hi)),
        gray_jitter=float(pick("gray_jitter", cfg.augmentation.gray_jitter)),
    )
    trigger = data.get("schedule_trigger", cfg.schedule_trigger)
    return replace(
        cfg,
        K=int(pick("k", cfg.K)),
        grid=GridSpec(grid_h, grid_w),
        sampling=CurveSampling(int(pick("samples", cfg.sampling.n_samples))),
        placement=PlacementParams(rho=float(pick("rho", cfg.placement.rho)),
                                  gray=float(pick("gray", cfg.placement.gray))),
        alpha=float(pick("alpha", cfg.alpha)),
        beta=float(pick("beta", cfg.beta)),
        gamma=float(pick("gamma", cfg.gamma)),
        learning_rate=float(pick("learning_rate", cfg.learning_rate)),
        max_iters=int(pick("max_iters", cfg.max_iters)),
        early_stop_threshold=float(pick("early_stop_threshold", cfg.early_stop_threshold)),
        early_stop_patience=int(pick("early_stop_patience", cfg.early_stop_patience)),
        schedule_trigger=None if trigger is None else float(trigger),
        schedule_factor=float(pick("schedule_factor", cfg.schedule_factor)),
        augment=bool(pick("augment", cfg.augment)),
        augmentation=aug,
        association_iou=float(pick("association_iou", cfg.association_iou)),
        seed=int(pick("seed", cfg.seed)),
        threads=data.get("threads", cfg.threads),
    )
