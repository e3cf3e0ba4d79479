"""Outcome measurement: zero-shot accuracy, attack success, judge scores, saliency, sweeps."""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import torch

from .encoders import EncoderHandle, class_prompt_features, tokenize
from .errors import (
    ConfigError,
    InvalidInputError,
    JudgeProtocolError,
    JudgeTransportError,
    UndefinedRateError,
)
from .objective import line_smoothness_loss, logits_from, magnitude_loss

log = logging.getLogger(__name__)

TASKS = ("zero_shot", "caption", "vqa")


@dataclass
class EvalRecord:
    image_id: str
    task: str
    clean_metric: float
    adversarial_metric: float
    model_tag: str
    delta: float = field(init=False)

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidInputError(f"unknown task {self.task!r}")
        self.delta = self.adversarial_metric - self.clean_metric


def _features(encoder, class_names, class_features):
    if class_features is not None:
        return class_features
    return class_prompt_features(class_names, encoder)


def predict(encoder: EncoderHandle, images, class_names=None, class_features=None) -> list[int]:
    feats = _features(encoder, class_names, class_features)
    preds = []
    with torch.no_grad():
        for x in images:
            v = encoder.encode_image(x)
            preds.append(int(torch.argmax(logits_from(v, feats.to(v.dtype), encoder.temperature))))
    return preds


def zero_shot_accuracy(encoder, images, labels, class_names=None, *, class_features=None) -> float:
    if len(images) == 0:
        raise InvalidInputError("cannot score an empty image set")
    if len(images) != len(labels):
        raise InvalidInputError("images and labels are not aligned")
    preds = predict(encoder, images, class_names, class_features)
    return sum(p == y for p, y in zip(preds, labels)) / len(labels)


def attack_success_rate(encoder, clean_images, adv_images, labels, class_names=None, *,
                        class_features=None) -> float:
    """Among images classified correctly when clean, the fraction the attack flips."""
    if not (len(clean_images) == len(adv_images) == len(labels)):
        raise InvalidInputError("clean, adversarial and label lists are not aligned")
    feats = _features(encoder, class_names, class_features)
    clean = predict(encoder, clean_images, class_features=feats)
    adv = predict(encoder, adv_images, class_features=feats)
    idx = [i for i, (p, y) in enumerate(zip(clean, labels)) if p == y]
    if not idx:
        raise UndefinedRateError("no clean-correct images: attack success rate is undefined")
    return sum(adv[i] != labels[i] for i in idx) / len(idx)


# --- judge ---------------------------------------------------------------------


@dataclass(frozen=True)
class Rubric:
    rubric_id: str
    low: float
    high: float
    template: str


def _parse_rubric(text: str) -> Rubric:
    head, _, body = text.partition("\n---\n")
    meta = dict(line.split(":", 1) for line in head.strip().splitlines())
    lo, hi = (float(v) for v in meta["range"].strip().split("-"))
    return Rubric(meta["id"].strip(), lo, hi, body.strip() + "\n")


def load_rubrics() -> dict[str, Rubric]:
    out = {}
    for entry in resources.files("xmask_attack.assets").joinpath("judge").iterdir():
        if entry.name.endswith(".txt"):
            r = _parse_rubric(entry.read_text())
            out[r.rubric_id] = r
    return out


TASK_RUBRIC = {"caption": "caption_consistency_v1", "vqa": "vqa_correctness_v1"}


@dataclass
class JudgeRequest:
    template_id: str
    content: str
    rubric_id: str
    reference: str = ""

    def wire(self) -> dict:
        return asdict(self)


@dataclass
class JudgeResponse:
    score: float
    rationale: str


class StubJudgeClient:
    """Offline judge. Answers from a fixture file when the request matches one,
    otherwise scores token overlap (Jaccard) of content against reference."""

    def __init__(self, fixtures: str | Path | None = None):
        self._fixtures = {}
        if fixtures:
            for line in Path(fixtures).read_text().splitlines():
                if line.strip():
                    row = json.loads(line)
                    key = (row["template_id"], row["content"], row["rubric_id"])
                    self._fixtures[key] = {"score": row["score"], "rationale": row.get("rationale", "")}

    def send(self, payload: dict, rubric: Rubric) -> dict:
        key = (payload["template_id"], payload["content"], payload["rubric_id"])
        if key in self._fixtures:
            return dict(self._fixtures[key])
        a, b = set(tokenize(payload["content"])), set(tokenize(payload.get("reference", "")))
        frac = len(a & b) / len(a | b) if (a | b) else 1.0
        score = rubric.low + frac * (rubric.high - rubric.low)
        return {"score": score, "rationale": f"token overlap {frac:.3f}"}


class HttpJudgeClient:
    """POSTs JSON ``{template_id, content, rubric_id, reference}`` and expects
    ``{score, rationale}`` back. The bearer token is read from an environment variable."""

    def __init__(self, endpoint: str, token_env: str = "XMASK_JUDGE_TOKEN",
                 timeout_s: float = 30.0, retries: int = 2, backoff_s: float = 0.5):
        if not endpoint:
            raise ConfigError("judge endpoint is not configured", field="eval.judge.endpoint")
        token = os.environ.get(token_env)
        if not token:
            raise ConfigError(f"judge credentials missing: set ${token_env}",
                              field="eval.judge.token_env")
        self.endpoint, self.timeout_s = endpoint, timeout_s
        self.retries, self.backoff_s = retries, backoff_s
        self._headers = {"Authorization": f"Bearer {token}"}
        self._lock = threading.Lock()

    def send(self, payload: dict, rubric: Rubric) -> dict:
        import requests

        last = None
        for attempt in range(self.retries + 1):
            try:
                with self._lock:
                    r = requests.post(self.endpoint, json=payload, headers=self._headers,
                                      timeout=self.timeout_s)
                r.raise_for_status()
            except requests.RequestException as exc:
                last = exc
                time.sleep(self.backoff_s * attempt)
                continue
            try:
                return r.json()
            except ValueError as exc:
                raise JudgeProtocolError(f"judge reply is not JSON: {r.text[:200]!r}") from exc
        raise JudgeTransportError(f"judge unreachable after {self.retries + 1} attempts: {last}")


class JudgeAudit:
    """Append-only log of every judge call."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.entries: list[dict] = []
        self._lock = threading.Lock()

    def record(self, request: JudgeRequest, response: dict | None, error: str | None = None):
        entry = {"request": request.wire(), "response": response, "error": error}
        with self._lock:
            self.entries.append(entry)
            if self.path is not None:
                with self.path.open("a") as fh:
                    fh.write(json.dumps(entry) + "\n")


def make_judge_client(section) -> StubJudgeClient | HttpJudgeClient | None:
    if section.backend == "none":
        return None
    if section.backend == "stub":
        return StubJudgeClient(section.fixtures or None)
    return HttpJudgeClient(section.endpoint, section.token_env, section.timeout_s, section.retries)


def judge_score(client, request: JudgeRequest, audit: JudgeAudit | None = None,
                rubrics: dict | None = None) -> JudgeResponse:
    rubrics = rubrics or load_rubrics()
    rubric = rubrics.get(request.rubric_id)
    if rubric is None:
        raise JudgeProtocolError(f"unknown rubric {request.rubric_id!r}")
    raw = None
    try:
        raw = client.send(request.wire(), rubric)
        score = raw.get("score") if isinstance(raw, dict) else None
        if isinstance(score, bool) or not isinstance(score, (int, float)) or not math.isfinite(score):
            raise JudgeProtocolError(f"malformed judge score: {raw!r}")
        if not rubric.low <= score <= rubric.high:
            raise JudgeProtocolError(
                f"judge score {score} outside rubric range [{rubric.low}, {rubric.high}]")
        resp = JudgeResponse(float(score), str(raw.get("rationale", "")))
    except (JudgeProtocolError, JudgeTransportError) as exc:
        if audit is not None:
            audit.record(request, raw, error=str(exc))
        raise
    if audit is not None:
        audit.record(request, asdict(resp))
    return resp


# --- saliency ------------------------------------------------------------------


@dataclass
class Saliency:
    heatmap: np.ndarray  # H x W in [0, 1]
    flat: bool


def saliency_map(encoder: EncoderHandle, image: torch.Tensor, text_feature: torch.Tensor) -> Saliency:
    """Input-gradient saliency of the image-text similarity."""
    x = image.detach().clone().requires_grad_(True)
    v = encoder.encode_image(x)
    (g,) = torch.autograd.grad(v @ text_feature.to(v.dtype), x)
    mag = g.abs().sum(0).detach().cpu().numpy().astype(np.float64)
    lo, hi = mag.min(), mag.max()
    if hi - lo <= 1e-12 * max(1.0, hi):
        return Saliency(np.zeros_like(mag), True)
    return Saliency((mag - lo) / (hi - lo), False)


def shift_score(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference of two [0, 1] heatmaps, itself in [0, 1]."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise InvalidInputError("heatmaps differ in shape")
    return float(np.abs(a - b).mean())


# --- ablation sweeps -----------------------------------------------------------

SMOOTHNESS_VARIANTS = {
    "Full": None,
    "w/o Perturb. Magnitude": "mag",
    "w/o Line Smooth": "line",
}

STAT_DEFINITIONS = {
    "asr": "fraction of clean-correct images misclassified after the attack (8-bit quantized)",
    "perturbation_magnitude": "mean over images of the mean |delta| over support entries",
    "smoothness": "mean over images of the magnitude term (mean squared channel norm on support)",
    "line_smoothness": "mean over images of the line term (mean squared step along centerlines)",
}


@dataclass
class SweepConfig:
    axis: str
    grid: list
    base: object  # AttackConfig

    def __post_init__(self):
        if not self.grid:
            raise InvalidInputError("sweep grid is empty")
        if self.axis == "iterations":
            bad = [v for v in self.grid if int(v) != v or v < 1]
        elif self.axis == "budget":
            bad = [v for v in self.grid if not 0 < v <= 1]
        elif self.axis == "smoothness_ablation":
            bad = [v for v in self.grid if v not in SMOOTHNESS_VARIANTS]
        else:
            raise InvalidInputError(f"unknown sweep axis {self.axis!r}")
        if bad:
            raise InvalidInputError(f"invalid {self.axis} grid values: {bad}")

    def point_config(self, value):
        from dataclasses import replace

        if self.axis == "iterations":
            return replace(self.base, total_iterations=int(value))
        if self.axis == "budget":
            return replace(self.base, budget=float(value))
        term = SMOOTHNESS_VARIANTS[value]
        if term is None:
            return self.base
        return replace(self.base, schedule=self.base.schedule.without(term))


@dataclass
class SweepRow:
    setting: object
    asr: float
    perturbation_magnitude: float
    smoothness: float
    line_smoothness: float
    n_images: int
    failures: list = field(default_factory=list)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["failures"] = len(self.failures)
        return d


def quantize(x: torch.Tensor) -> torch.Tensor:
    """Round to the 8-bit grid used by PNG export."""
    return torch.round(x.clamp(0, 1) * 255.0) / 255.0


def perturbation_stats(delta: torch.Tensor, mask) -> dict:
    m = torch.as_tensor(mask.mask)
    with torch.no_grad():
        return {
            "perturbation_magnitude": float(delta[:, m].abs().mean()),
            "smoothness": float(magnitude_loss(delta, mask)),
            "line_smoothness": float(line_smoothness_loss(delta, mask.paths)),
        }


def ablation_sweep(sweep: SweepConfig, fixtures, *, quantize_outputs: bool = True,
                   on_point=None, workers: int = 1) -> list[SweepRow]:
    """Run the attack over every grid point and aggregate the four summary statistics.

    ``fixtures`` provides ``image_ids``, ``images``, ``labels``, ``class_features``,
    ``encoder``, ``mask`` and ``attack(i, cfg) -> AttackResult``.
    """
    rows = []
    for value in sweep.grid:
        cfg = sweep.point_config(value)

        def one(i):
            try:
                return fixtures.attack(i, cfg), None
            except Exception as exc:  # recorded per point, sweep continues
                log.warning("attack failed on %s at %s=%s: %s",
                            fixtures.image_ids[i], sweep.axis, value, exc)
                return None, repr(exc)

        idx = range(len(fixtures.image_ids))
        if workers > 1 and getattr(fixtures.encoder, "concurrent_safe", True):
            with ThreadPoolExecutor(max_workers=workers) as ex:
                outcomes = list(ex.map(one, idx))
        else:
            outcomes = [one(i) for i in idx]

        adv, stats, failures, results = [], [], [], {}
        for i, (res, err) in enumerate(outcomes):
            image_id = fixtures.image_ids[i]
            if res is None:
                failures.append((image_id, err))
                adv.append(fixtures.images[i])
                continue
            results[image_id] = res
            x = res.adversarial_image
            adv.append(quantize(x) if quantize_outputs else x)
            stats.append(perturbation_stats(res.best_delta, fixtures.mask))
        try:
            asr = attack_success_rate(fixtures.encoder, fixtures.images, adv, fixtures.labels,
                                      class_features=fixtures.class_features)
        except UndefinedRateError:
            asr = float("nan")
        agg = {k: float(np.mean([s[k] for s in stats])) if stats else float("nan")
               for k in ("perturbation_magnitude", "smoothness", "line_smoothness")}
        row = SweepRow(value, asr, n_images=len(fixtures.image_ids), failures=failures, **agg)
        rows.append(row)
        if on_point is not None:
            on_point(row, cfg, results)
    return rows
