"""Loss terms of the joint attack objective and the two-stage weight schedule.

Every term is written so that smaller means a stronger attack; the optimizer
descends on the weighted sum. All functions take and return torch tensors so
gradients flow through them unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import torch
import torch.nn.functional as F

from .errors import InvalidInputError, NumericError

TERMS = ("clip", "tar", "src", "mag", "line")
_NORM_TOL = 1e-5


@dataclass(frozen=True)
class Weights:
    clip: float = 1.0
    tar: float = 0.0
    src: float = 0.0
    mag: float = 0.0
    line: float = 0.0

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in TERMS)

    def replace(self, **kw) -> "Weights":
        d = asdict(self)
        d.update(kw)
        return Weights(**d)


@dataclass(frozen=True)
class WeightSchedule:
    early: Weights = field(default_factory=lambda: Weights(1.0, 0.5, 0.5, 5.0, 5.0))
    late: Weights = field(default_factory=lambda: Weights(1.0, 2.0, 2.0, 5.0, 5.0))
    switch_ratio: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.switch_ratio < 1.0:
            raise InvalidInputError("switch_ratio must lie in (0, 1)")
        for w in (self.early, self.late):
            if any(v < 0 for v in w.as_tuple()):
                raise InvalidInputError("schedule weights must be nonnegative")

    def without(self, term: str) -> "WeightSchedule":
        """Same schedule with one term forced to zero in both stages."""
        return WeightSchedule(self.early.replace(**{term: 0.0}),
                              self.late.replace(**{term: 0.0}),
                              self.switch_ratio)


@dataclass
class SimilarityContext:
    image_feature: torch.Tensor  # (d,)
    class_features: torch.Tensor  # (K, d)
    temperature: float

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidInputError("temperature must be positive")
        _check_unit(self.image_feature, "image feature")
        _check_unit(self.class_features, "class feature")


@dataclass
class TextPools:
    target_features: torch.Tensor  # (N_t, d)
    source_features: torch.Tensor  # (N_s, d)
    target_prompts: list[str] = field(default_factory=list)
    source_prompts: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.target_features.ndim != 2 or self.target_features.shape[0] < 1:
            raise InvalidInputError("target pool is empty")
        if self.source_features.ndim != 2 or self.source_features.shape[0] < 1:
            raise InvalidInputError("source pool is empty")
        _check_unit(self.target_features, "target feature")
        _check_unit(self.source_features, "source feature")


@dataclass
class LossBreakdown:
    clip: float
    tar: float
    src: float
    mag: float
    line: float
    weighted_total: float
    weights_used: Weights
    iteration: int

    def terms(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in TERMS)

    def as_record(self) -> dict:
        rec = {"t": self.iteration}
        rec.update({k: getattr(self, k) for k in TERMS})
        rec["weighted_total"] = self.weighted_total
        return rec


def _check_unit(x: torch.Tensor, what: str) -> None:
    norms = torch.linalg.vector_norm(x.detach(), dim=-1)
    if not torch.all((norms - 1.0).abs() <= _NORM_TOL):
        raise InvalidInputError(f"{what} is not unit-norm (norms {norms.min():.6f}..{norms.max():.6f})")


def similarity_logits(ctx: SimilarityContext) -> torch.Tensor:
    return ctx.class_features @ ctx.image_feature / ctx.temperature


def logits_from(image_feature: torch.Tensor, class_features: torch.Tensor,
                temperature: float) -> torch.Tensor:
    """Unchecked fast path of :func:`similarity_logits` for the inner loop."""
    if not temperature > 0:
        raise InvalidInputError("temperature must be positive")
    return class_features @ image_feature / temperature


def margin_loss(logits: torch.Tensor, y: int) -> torch.Tensor:
    K = logits.shape[-1]
    if K < 2:
        raise InvalidInputError("margin loss needs at least two classes")
    if not 0 <= y < K:
        raise InvalidInputError(f"class index {y} out of range for {K} classes")
    others = torch.cat([logits[:y], logits[y + 1:]])
    return logits[y] - others.max()


def targeted_loss(logits: torch.Tensor, y_t: int) -> torch.Tensor:
    K = logits.shape[-1]
    if not 0 <= y_t < K:
        raise InvalidInputError(f"target index {y_t} out of range for {K} classes")
    return -F.log_softmax(logits, dim=-1)[y_t]


def target_attraction_loss(v: torch.Tensor, pools: TextPools) -> torch.Tensor:
    if pools.target_features.shape[0] == 0:
        raise InvalidInputError("target pool is empty")
    return -(pools.target_features @ v).mean()


def source_suppression_loss(v: torch.Tensor, pools: TextPools) -> torch.Tensor:
    if pools.source_features.shape[0] == 0:
        raise InvalidInputError("source pool is empty")
    return (pools.source_features @ v).mean()


def magnitude_loss(delta: torch.Tensor, mask) -> torch.Tensor:
    """Mean squared channel-vector norm of ``delta`` over the support pixels."""
    m = torch.as_tensor(mask.mask, device=delta.device)
    if delta.ndim != 3 or tuple(delta.shape[1:]) != tuple(m.shape):
        raise InvalidInputError(f"delta shape {tuple(delta.shape)} does not match mask {tuple(m.shape)}")
    return (delta[:, m] ** 2).sum() / mask.support_size


def line_smoothness_loss(delta: torch.Tensor, paths) -> torch.Tensor:
    if len(paths) == 0:
        raise InvalidInputError("no centerline paths")
    total = delta.new_zeros(())
    for p in paths:
        if len(p) < 2:
            raise InvalidInputError("every centerline path needs at least 2 pixels")
        p = torch.as_tensor(p, device=delta.device)
        vals = delta[:, p[:, 0], p[:, 1]]  # C x n
        total = total + ((vals[:, 1:] - vals[:, :-1]) ** 2).sum() / (len(p) - 1)
    return total / len(paths)


def stage_weights(schedule: WeightSchedule, t: int, n_total: int) -> Weights:
    if not 0 <= t < n_total:
        raise InvalidInputError(f"iteration {t} outside [0, {n_total})")
    return schedule.early if t < schedule.switch_ratio * n_total else schedule.late


def total_loss(terms: dict, schedule: WeightSchedule, t: int, n_total: int,
               weights: Weights | None = None):
    """Weighted objective plus its :class:`LossBreakdown`.

    ``terms`` maps each name in :data:`TERMS` to a scalar tensor (or float).
    The returned tensor keeps the autograd graph; the breakdown holds floats.
    """
    w = weights if weights is not None else stage_weights(schedule, t, n_total)
    values = {}
    for k in TERMS:
        v = terms[k]
        fv = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(fv):
            raise NumericError(f"loss term '{k}' is not finite ({fv})", term=k)
        values[k] = fv
    total = sum(getattr(w, k) * terms[k] for k in TERMS)
    breakdown = LossBreakdown(
        **values,
        weighted_total=float(sum(getattr(w, k) * values[k] for k in TERMS)),
        weights_used=w,
        iteration=t,
    )
    return total, breakdown
