"""Mask-constrained momentum sign-gradient attack with input diversity."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import EncoderFailure, InvalidInputError, NumericError
from .geometry import XMask
from .objective import (
    LossBreakdown,
    TextPools,
    WeightSchedule,
    Weights,
    line_smoothness_loss,
    logits_from,
    magnitude_loss,
    margin_loss,
    source_suppression_loss,
    stage_weights,
    target_attraction_loss,
    targeted_loss,
    total_loss,
)

log = logging.getLogger(__name__)

GRAD_EPS = 1e-12


@dataclass(frozen=True)
class DiversityConfig:
    apply_probability: float = 0.5
    min_resize_ratio: float = 0.875
    pad_fill_value: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.apply_probability <= 1.0:
            raise InvalidInputError("apply_probability must lie in [0, 1]")
        if not 0.0 < self.min_resize_ratio <= 1.0:
            raise InvalidInputError("min_resize_ratio must lie in (0, 1]")
        if not 0.0 <= self.pad_fill_value <= 1.0:
            raise InvalidInputError("pad_fill_value must lie in [0, 1]")


@dataclass(frozen=True)
class AttackConfig:
    total_iterations: int = 200
    step_size: float = 1.0 / 255
    momentum_decay: float = 0.9
    budget: float = 64.0 / 255
    diversity: DiversityConfig = field(default_factory=DiversityConfig)
    schedule: WeightSchedule = field(default_factory=WeightSchedule)
    targeted: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if int(self.total_iterations) < 1:
            raise InvalidInputError("total_iterations must be >= 1")
        if not self.step_size >= 0:
            raise InvalidInputError("step_size must be nonnegative")
        if not 0.0 <= self.momentum_decay < 1.0:
            raise InvalidInputError("momentum_decay must lie in [0, 1)")
        if not 0.0 < self.budget <= 1.0:
            raise InvalidInputError("budget must lie in (0, 1]")


@dataclass
class ClassLabels:
    """Text side of the zero-shot head for one image."""

    class_features: torch.Tensor  # K x d, unit rows
    label: int
    target: int | None = None

    def __post_init__(self):
        K = self.class_features.shape[0]
        if not 0 <= self.label < K:
            raise InvalidInputError(f"label {self.label} out of range for {K} classes")
        if self.target is not None and not 0 <= self.target < K:
            raise InvalidInputError(f"target {self.target} out of range for {K} classes")


@dataclass
class AttackState:
    delta: torch.Tensor
    momentum: torch.Tensor
    iteration: int
    best_sample: torch.Tensor
    best_delta: torch.Tensor
    best_score: float
    best_iteration: int = -1
    loss_history: list[LossBreakdown] = field(default_factory=list)


@dataclass
class AttackResult:
    adversarial_image: torch.Tensor
    final_delta: torch.Tensor
    best_delta: torch.Tensor
    loss_history: list[LossBreakdown]
    best_iteration: int  # index into loss_history; -1 means the clean image was kept
    success_on_surrogate: bool
    wall_time: float

    def history_records(self) -> list[dict]:
        out = []
        for rec in self.loss_history:
            d = rec.as_record()
            d["is_best"] = rec.iteration == self.best_iteration
            out.append(d)
        return out


def _check_shapes(x: torch.Tensor, delta: torch.Tensor, mask: XMask) -> None:
    hw = (mask.shape.height, mask.shape.width)
    if x.ndim != 3 or tuple(x.shape[1:]) != hw:
        raise InvalidInputError(f"image shape {tuple(x.shape)} does not match mask {hw}")
    if delta.shape != x.shape:
        raise InvalidInputError(f"delta shape {tuple(delta.shape)} != image shape {tuple(x.shape)}")


def apply_perturbation(x: torch.Tensor, delta: torch.Tensor, mask: XMask) -> torch.Tensor:
    _check_shapes(x, delta, mask)
    m = torch.as_tensor(mask.mask, device=x.device)
    # torch.where keeps off-support pixels bit-identical (no x + 0 * delta rounding)
    return torch.where(m, (x + delta).clamp(0.0, 1.0), x)


def input_diversity(x_adv: torch.Tensor, cfg: DiversityConfig,
                    rng: np.random.Generator) -> torch.Tensor:
    """Random shrink-and-pad of a C x H x W image, back to the original frame."""
    if rng.random() >= cfg.apply_probability:
        return x_adv
    H, W = x_adv.shape[-2:]
    ratio = rng.uniform(cfg.min_resize_ratio, 1.0)
    h, w = max(1, int(round(ratio * H))), max(1, int(round(ratio * W)))
    top = int(rng.integers(0, H - h + 1))
    left = int(rng.integers(0, W - w + 1))
    if (h, w) == (H, W):
        return x_adv
    small = F.interpolate(x_adv.unsqueeze(0), size=(h, w), mode="bilinear",
                          align_corners=False)[0]
    return F.pad(small, (left, W - w - left, top, H - h - top), value=cfg.pad_fill_value)


def momentum_update(m: torch.Tensor, g: torch.Tensor, mu: float) -> torch.Tensor:
    if m.shape != g.shape:
        raise InvalidInputError("momentum and gradient shapes differ")
    if not torch.isfinite(g).all():
        raise NumericError("gradient is not finite", term="gradient")
    return mu * m + g / (g.abs().mean() + GRAD_EPS)


def sign_step(delta: torch.Tensor, m: torch.Tensor, alpha: float) -> torch.Tensor:
    if delta.shape != m.shape:
        raise InvalidInputError("delta and momentum shapes differ")
    return delta - alpha * torch.sign(m)


def project(delta_tilde: torch.Tensor, mask: XMask, eps: float) -> torch.Tensor:
    if not eps > 0:
        raise InvalidInputError(f"budget must be positive, got {eps}")
    hw = (mask.shape.height, mask.shape.width)
    if tuple(delta_tilde.shape[-2:]) != hw:
        raise InvalidInputError(f"delta shape {tuple(delta_tilde.shape)} does not match mask {hw}")
    m = torch.as_tensor(mask.mask, device=delta_tilde.device)
    # float32(eps) can round above eps; clamp to the largest representable value <= eps
    bound = torch.tensor(eps, dtype=delta_tilde.dtype, device=delta_tilde.device)
    if float(bound) > eps:
        bound = torch.nextafter(bound, torch.zeros_like(bound))
    return torch.where(m, delta_tilde.clamp(-bound, bound), torch.zeros_like(delta_tilde))


def is_feasible(delta: torch.Tensor, mask: XMask, eps: float) -> bool:
    m = torch.as_tensor(mask.mask, device=delta.device)
    off = delta[:, ~m]
    return bool((off == 0).all()) and bool((delta.abs() <= eps).all())


class _Objective:
    """Evaluates the joint loss for one image; shared by gradient and scoring passes."""

    def __init__(self, encoder, x, mask, pools: TextPools, labels: ClassLabels, cfg: AttackConfig):
        self.encoder, self.x, self.mask, self.cfg = encoder, x, mask, cfg
        dt = x.dtype
        self.class_features = labels.class_features.to(dt)
        self.tar_pool = TextPools(pools.target_features.to(dt), pools.source_features.to(dt))
        self.labels = labels
        if cfg.targeted and labels.target is None:
            raise InvalidInputError("targeted attack requested without a target label")

    def clip_term(self, logits):
        if self.cfg.targeted:
            return targeted_loss(logits, self.labels.target)
        return margin_loss(logits, self.labels.label)

    def __call__(self, delta, weights: Weights, t: int, rng=None):
        x_adv = apply_perturbation(self.x, delta, self.mask)
        x_in = x_adv if rng is None else input_diversity(x_adv, self.cfg.diversity, rng)
        try:
            v = self.encoder.encode_image(x_in)
        except Exception as exc:
            raise EncoderFailure(f"encoder failed at iteration {t}: {exc}", iteration=t) from exc
        logits = logits_from(v, self.class_features, self.encoder.temperature)
        terms = {
            "clip": self.clip_term(logits),
            "tar": target_attraction_loss(v, self.tar_pool),
            "src": source_suppression_loss(v, self.tar_pool),
            "mag": magnitude_loss(delta, self.mask),
            "line": line_smoothness_loss(delta, self.mask.paths),
        }
        total, rec = total_loss(terms, self.cfg.schedule, t, self.cfg.total_iterations, weights)
        return total, rec, logits

    def score(self, delta, weights, t):
        with torch.no_grad():
            _, rec, _ = self(delta, weights, t)
        return rec

    def success(self, x_adv) -> bool:
        with torch.no_grad():
            v = self.encoder.encode_image(x_adv)
            pred = int(torch.argmax(logits_from(v, self.class_features, self.encoder.temperature)))
        if self.cfg.targeted:
            return pred == self.labels.target
        return pred != self.labels.label


def _step(state: AttackState, objective: _Objective, cfg: AttackConfig, mask: XMask, t: int,
          N: int, rng, current_w: Weights, check_feasibility: bool) -> None:
    w = stage_weights(cfg.schedule, t, N)
    if w != current_w:
        # stage switch: re-score the incumbent so comparisons share weights
        state.best_score = objective.score(state.best_delta, w, t).weighted_total
    delta = state.delta.detach().requires_grad_(True)
    total, _, _ = objective(delta, w, t, rng)
    (g,) = torch.autograd.grad(total, delta)
    state.momentum = momentum_update(state.momentum, g, cfg.momentum_decay)
    state.delta = project(sign_step(state.delta, state.momentum, cfg.step_size),
                          mask, cfg.budget)
    if check_feasibility and not is_feasible(state.delta, mask, cfg.budget):
        raise NumericError(f"iterate {t} left the feasible set", term="projection")
    rec = objective.score(state.delta, w, t)
    state.loss_history.append(rec)
    state.iteration = t + 1
    if rec.weighted_total < state.best_score:
        state.best_score = rec.weighted_total
        state.best_delta = state.delta.clone()
        state.best_iteration = t


def run_attack(x: torch.Tensor, mask: XMask, encoder, pools: TextPools, labels: ClassLabels,
               cfg: AttackConfig, *, check_feasibility: bool = False,
               on_iterate=None) -> AttackResult:
    """Optimize a perturbation confined to ``mask`` and return the best sample.

    ``on_iterate(t, delta, x_adv)`` is called after every projection with the
    new iterate, for external monitoring.
    """
    if x.ndim != 3:
        raise InvalidInputError("image must be C x H x W")
    if float(x.min()) < 0.0 or float(x.max()) > 1.0:
        raise InvalidInputError("image values must lie in [0, 1]")
    start = time.perf_counter()
    N = int(cfg.total_iterations)
    rng = np.random.default_rng(cfg.rng_seed)
    objective = _Objective(encoder, x, mask, pools, labels, cfg)

    zero = torch.zeros_like(x)
    w0 = stage_weights(cfg.schedule, 0, N)
    state = AttackState(delta=zero.clone(), momentum=zero.clone(), iteration=0,
                        best_sample=x.clone(), best_delta=zero.clone(),
                        best_score=objective.score(zero, w0, 0).weighted_total)
    current_w = w0
    for t in range(N):
        try:
            _step(state, objective, cfg, mask, t, N, rng, current_w, check_feasibility)
        except NumericError as exc:
            if exc.snapshot is None:
                exc.snapshot = {"t": t, "delta": state.delta.clone(),
                                "momentum": state.momentum.clone(),
                                "history": list(state.loss_history)}
            raise
        current_w = state.loss_history[-1].weights_used
        if on_iterate is not None:
            on_iterate(t, state.delta, apply_perturbation(x, state.delta, mask))

    best_x = apply_perturbation(x, state.best_delta, mask).clamp(0.0, 1.0)
    elapsed = time.perf_counter() - start
    log.debug("attack finished in %.2fs, best iteration %d", elapsed, state.best_iteration)
    return AttackResult(
        adversarial_image=best_x.detach(),
        final_delta=state.delta.detach(),
        best_delta=state.best_delta.detach(),
        loss_history=state.loss_history,
        best_iteration=state.best_iteration,
        success_on_surrogate=objective.success(best_x),
        wall_time=elapsed,
    )
