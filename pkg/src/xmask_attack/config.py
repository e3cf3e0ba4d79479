"""Run configuration: YAML file with sections mask, attack, encoder, pools, eval, sweep.

Unknown keys are rejected with their dotted path and line number. After
loading, every field holds an explicit value; ``provenance`` records whether
each came from the file, from a paper-reported value, or from a non-paper
default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .engine import AttackConfig, DiversityConfig
from .errors import ConfigError, InvalidInputError
from .geometry import XMaskSpec
from .objective import WeightSchedule, Weights

SECTIONS = ("mask", "attack", "encoder", "pools", "eval", "sweep")
PAPER_DEFAULTS = {"attack.total_iterations"}


@dataclass
class MaskSection:
    rho_col: float = 0.5
    rho_row: float = 0.5
    angles: list = field(default_factory=lambda: [math.pi / 4, 3 * math.pi / 4])
    length_ratio: float = 0.4
    line_width: int = 3

    def to_spec(self) -> XMaskSpec:
        return XMaskSpec(self.rho_col, self.rho_row, tuple(self.angles),
                         self.length_ratio, self.line_width)


@dataclass
class DiversitySection:
    apply_probability: float = 0.5
    min_resize_ratio: float = 0.875
    pad_fill_value: float = 0.0


@dataclass
class WeightsSection:
    clip: float = 1.0
    tar: float = 0.5
    src: float = 0.5
    mag: float = 5.0
    line: float = 5.0


@dataclass
class ScheduleSection:
    switch_ratio: float = 0.5
    early: WeightsSection = field(default_factory=WeightsSection)
    late: WeightsSection = field(default_factory=lambda: WeightsSection(tar=2.0, src=2.0))


@dataclass
class AttackSection:
    total_iterations: int = 200
    step_size: float = 1.0 / 255
    momentum_decay: float = 0.9
    budget: float = 64.0 / 255
    targeted: bool = False
    seed: int = 0
    quantization_check: bool = False
    diversity: DiversitySection = field(default_factory=DiversitySection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)

    def to_config(self, rng_seed: int | None = None) -> AttackConfig:
        s = self.schedule
        return AttackConfig(
            total_iterations=self.total_iterations,
            step_size=self.step_size,
            momentum_decay=self.momentum_decay,
            budget=self.budget,
            diversity=DiversityConfig(**dataclasses.asdict(self.diversity)),
            schedule=WeightSchedule(Weights(**dataclasses.asdict(s.early)),
                                    Weights(**dataclasses.asdict(s.late)), s.switch_ratio),
            targeted=self.targeted,
            rng_seed=self.seed if rng_seed is None else rng_seed,
        )


@dataclass
class EncoderSection:
    kind: str = "toy"
    model_id: str = ""
    seed: int = 0
    feature_dim: int = 64
    patch_size: int = 8
    temperature: float = 0.07
    device: str = "cpu"
    local_files_only: bool = False

    def options(self) -> dict:
        if self.kind == "toy":
            return dict(seed=self.seed, feature_dim=self.feature_dim,
                        patch_size=self.patch_size, temperature=self.temperature)
        return dict(backend=self.kind, model_id=self.model_id, device=self.device,
                    local_files_only=self.local_files_only)


@dataclass
class PoolsSection:
    class_names: list = field(default_factory=lambda: [
        "cat", "dog", "bird", "boat", "airplane", "elephant", "bear", "stop sign"])
    template: str = "a photo of a {label}"
    auto_target: str = "runner_up"
    caption_drift_prompts: list = field(default_factory=list)
    vqa_shift_prompts: list = field(default_factory=list)
    source_prompts: list = field(default_factory=list)


@dataclass
class JudgeSection:
    backend: str = "none"
    endpoint: str = ""
    token_env: str = "XMASK_JUDGE_TOKEN"
    timeout_s: float = 30.0
    retries: int = 2
    fixtures: str = ""


@dataclass
class EvalSection:
    tasks: list = field(default_factory=lambda: ["zero_shot"])
    saliency_examples: int = 4
    judge: JudgeSection = field(default_factory=JudgeSection)


@dataclass
class ToySection:
    n_images: int = 64
    image_size: int = 224
    seed: int = 0
    margin_range: list = field(default_factory=lambda: [0.05, 1.5])


@dataclass
class SweepSection:
    axis: str = "iterations"
    grid: list = field(default_factory=lambda: [50, 100, 150, 200])
    dataset: str = "toy"
    inputs: str = ""
    toy: ToySection = field(default_factory=ToySection)


@dataclass
class RunConfig:
    mask: MaskSection = field(default_factory=MaskSection)
    attack: AttackSection = field(default_factory=AttackSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    pools: PoolsSection = field(default_factory=PoolsSection)
    eval: EvalSection = field(default_factory=EvalSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    provenance: dict = field(default_factory=dict, compare=False)

    def as_dict(self, with_provenance: bool = True) -> dict:
        d = {s: dataclasses.asdict(getattr(self, s)) for s in SECTIONS}
        if with_provenance:
            d["provenance"] = dict(sorted(self.provenance.items()))
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(with_provenance=False), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def _line_index(text: str) -> dict:
    """Map dotted key paths to 1-based line numbers."""
    out = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return out

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                out[path] = k.start_mark.line + 1
                walk(v, path)

    if root is not None:
        walk(root, "")
    return out


def _coerce(value, default, path, lines):
    def fail(msg):
        raise ConfigError(f"{path}: {msg} (line {lines.get(path, '?')})", field=path,
                          line=lines.get(path))

    if isinstance(default, bool):
        if not isinstance(value, bool):
            fail(f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            fail(f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail(f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            fail(f"expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            fail(f"expected a list, got {value!r}")
        return list(value)
    return value


def _build(cls, data, prefix, lines, provenance):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix}: expected a mapping (line {lines.get(prefix, '?')})",
                          field=prefix, line=lines.get(prefix))
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            path = f"{prefix}.{key}"
            raise ConfigError(f"unknown key '{key}' at {path} (line {lines.get(path, '?')})",
                              field=path, line=lines.get(path))
    default = cls()
    kwargs = {}
    for name, f in names.items():
        path = f"{prefix}.{name}"
        dval = getattr(default, name)
        if dataclasses.is_dataclass(dval):
            kwargs[name] = _build(type(dval), data.get(name), path, lines, provenance)
            continue
        if name in data:
            kwargs[name] = _coerce(data[name], dval, path, lines)
            provenance[path] = "file"
        else:
            kwargs[name] = dval
            provenance[path] = "paper" if path in PAPER_DEFAULTS else "non-paper-default"
    return cls(**kwargs)


def config_from_dict(data: dict, lines: dict | None = None) -> RunConfig:
    lines = lines or {}
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a mapping", line=1)
    for key in data:
        if key not in SECTIONS and key != "provenance":
            raise ConfigError(f"unknown key '{key}' (line {lines.get(key, '?')})",
                              field=key, line=lines.get(key))
    provenance: dict = {}
    sections = {}
    for s in SECTIONS:
        sections[s] = _build(type(getattr(RunConfig(), s)), data.get(s), s, lines, provenance)
    recorded = data.get("provenance") or {}
    if not isinstance(recorded, dict):
        raise ConfigError("provenance: expected a mapping", field="provenance")
    for key, tag in recorded.items():
        # a serialized effective config keeps its original tags on reload
        if key in provenance and tag in ("paper", "non-paper-default", "override"):
            provenance[key] = tag
    cfg = RunConfig(**sections, provenance=provenance)
    _validate(cfg, lines)
    return cfg


def _validate(cfg: RunConfig, lines: dict) -> None:
    def check(cond, path, msg):
        if not cond:
            raise ConfigError(f"{path}: {msg} (line {lines.get(path, '?')})", field=path,
                              line=lines.get(path))

    from .geometry import ImageShape, validate_spec

    report = validate_spec(cfg.mask.to_spec(), ImageShape(224, 224))
    check(report.ok, "mask", str(report))
    try:
        cfg.attack.to_config()
    except InvalidInputError as exc:
        check(False, "attack", str(exc))
    check(cfg.encoder.kind in ("toy", "transformers", "open_clip"), "encoder.kind",
          "must be toy, transformers or open_clip")
    check(len(cfg.pools.class_names) >= 2, "pools.class_names", "need at least two classes")
    check("{label}" in cfg.pools.template, "pools.template", "must contain '{label}'")
    check(cfg.pools.auto_target in ("runner_up", "none"), "pools.auto_target",
          "must be runner_up or none")
    for t in cfg.eval.tasks:
        check(t in ("zero_shot", "caption", "vqa"), "eval.tasks", f"unknown task {t!r}")
    check(cfg.eval.judge.backend in ("none", "stub", "http"), "eval.judge.backend",
          "must be none, stub or http")
    check(cfg.sweep.axis in ("iterations", "budget", "smoothness_ablation"), "sweep.axis",
          "must be iterations, budget or smoothness_ablation")
    check(len(cfg.sweep.grid) > 0, "sweep.grid", "grid must be non-empty")
    if cfg.sweep.axis == "iterations":
        check(all(isinstance(v, int) and not isinstance(v, bool) and v >= 1
                  for v in cfg.sweep.grid), "sweep.grid", "iterations must be positive integers")
    elif cfg.sweep.axis == "budget":
        check(all(isinstance(v, (int, float)) and 0 < v <= 1 for v in cfg.sweep.grid),
              "sweep.grid", "budgets must lie in (0, 1]")
    else:
        from .evaluation import SMOOTHNESS_VARIANTS

        check(all(v in SMOOTHNESS_VARIANTS for v in cfg.sweep.grid), "sweep.grid",
              f"variants must be among {list(SMOOTHNESS_VARIANTS)}")
    check(cfg.sweep.dataset in ("toy", "dir"), "sweep.dataset", "must be toy or dir")


def load_config(path: str | Path | None) -> RunConfig:
    """Read and validate a run configuration; ``None`` yields the documented defaults."""
    if path is None:
        return config_from_dict({})
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"cannot parse {path} (line {line}): {exc}", line=line) from exc
    return config_from_dict(data, _line_index(text))


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.as_dict(), sort_keys=False)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dump_config(cfg))


def with_overrides(cfg: RunConfig, **paths: Any) -> RunConfig:
    """Return a copy with dotted-path overrides applied, e.g. ``{"attack.seed": 3}``."""
    data = cfg.as_dict(with_provenance=False)
    prov = dict(cfg.provenance)
    for dotted, value in paths.items():
        node = data
        parts = dotted.split(".")
        for p in parts[:-1]:
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown key '{dotted}'", field=dotted)
        node[parts[-1]] = value
        prov[dotted] = "override"
    out = config_from_dict(data)
    out.provenance = prov
    return out
