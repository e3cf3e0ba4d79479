"""Run orchestration: image I/O, per-image attack sessions, persistence, and the commands."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import __version__
from .config import RunConfig, dump_config
from .encoders import AttackSpecText, build_text_pools, class_prompt_features, make_encoder
from .engine import ClassLabels, run_attack
from .errors import ConfigError, InvalidInputError, UndefinedRateError, XMaskAttackError
from .evaluation import (
    STAT_DEFINITIONS,
    TASK_RUBRIC,
    EvalRecord,
    JudgeAudit,
    JudgeRequest,
    SweepConfig,
    ablation_sweep,
    attack_success_rate,
    judge_score,
    make_judge_client,
    perturbation_stats,
    predict,
    quantize,
    saliency_map,
    shift_score,
)
from .geometry import ImageShape, XMask, build_x_mask, mask_coverage, validate_spec, write_mask_png
from .objective import logits_from

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp")
LABELS_FILE = "labels.csv"
TEXTS_FILE = "texts.jsonl"


# --- files ---------------------------------------------------------------------


def _tmp_path(path: Path) -> Path:
    return path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = _tmp_path(path)
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_image(path: str | Path) -> torch.Tensor:
    """Decode any PIL-readable image to a float32 C x H x W tensor in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return torch.from_numpy(arr.copy()).permute(2, 0, 1).float() / 255.0


def to_uint8(x: torch.Tensor) -> np.ndarray:
    return (quantize(x) * 255.0).round().to(torch.uint8).permute(1, 2, 0).cpu().numpy()


def write_png(x: torch.Tensor, path: str | Path) -> None:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(x), mode="RGB").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def write_csv(path: str | Path, rows: list[dict], columns: list[str] | None = None) -> None:
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in columns})
    atomic_write_text(path, buf.getvalue())


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def list_inputs(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise InvalidInputError(f"input directory not found: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def read_labels(directory: str | Path, class_names: list[str]) -> dict:
    """``labels.csv`` with columns filename,label[,target]; labels are class names or indices."""
    path = Path(directory) / LABELS_FILE
    if not path.exists():
        raise InvalidInputError(f"missing {LABELS_FILE} in {directory}")

    def index(v, row):
        v = (v or "").strip()
        if v == "":
            return None
        if v in class_names:
            return class_names.index(v)
        if v.isdigit() and int(v) < len(class_names):
            return int(v)
        raise InvalidInputError(f"{path} line {row}: unknown class {v!r}")

    out = {}
    with path.open(newline="") as fh:
        for n, rec in enumerate(csv.DictReader(fh), start=2):
            label = index(rec.get("label"), n)
            if label is None:
                raise InvalidInputError(f"{path} line {n}: missing label")
            out[Path(rec["filename"]).stem] = (label, index(rec.get("target"), n))
    return out


def image_seed(master_seed: int, image_id: str) -> int:
    h = hashlib.blake2b(f"{master_seed}\x1f{image_id}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


def new_run_id(prefix: str, cfg: RunConfig) -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%f")
    return f"{prefix}-{stamp}-{cfg.config_hash()[:8]}"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


# --- attack session ------------------------------------------------------------


class AttackSession:
    """Everything shared across images of one run: encoder, class head, masks, pools."""

    def __init__(self, cfg: RunConfig, encoder=None):
        self.cfg = cfg
        self.encoder = encoder or make_encoder(cfg.encoder.kind, **cfg.encoder.options())
        self.class_names = list(cfg.pools.class_names)
        self.class_features = class_prompt_features(self.class_names, self.encoder,
                                                    cfg.pools.template)
        self._masks: dict = {}
        self._lock = threading.Lock()

    @property
    def encoder_identity(self) -> str:
        return getattr(self.encoder, "identity", type(self.encoder).__name__)

    def mask_for(self, height: int, width: int) -> XMask:
        with self._lock:
            if (height, width) not in self._masks:
                self._masks[(height, width)] = build_x_mask(self.cfg.mask.to_spec(),
                                                           ImageShape(height, width))
            return self._masks[(height, width)]

    def runner_up(self, x: torch.Tensor, label: int) -> int:
        with torch.no_grad():
            v = self.encoder.encode_image(x)
            logits = logits_from(v, self.class_features.to(v.dtype), self.encoder.temperature)
        logits[label] = -math.inf
        return int(torch.argmax(logits))

    def pools_for(self, x, label: int, target: int | None):
        p = self.cfg.pools
        drift = target
        if drift is None and p.auto_target == "runner_up":
            drift = self.runner_up(x, label)
        spec = AttackSpecText(
            true_label=self.class_names[label],
            target_label=self.class_names[drift] if drift is not None else None,
            caption_drift_prompts=list(p.caption_drift_prompts),
            vqa_shift_prompts=list(p.vqa_shift_prompts),
            source_prompts=list(p.source_prompts),
        )
        return build_text_pools(spec, self.encoder, p.template)

    def attack(self, x, image_id: str, label: int, target: int | None = None,
               attack_cfg=None, on_iterate=None):
        base = attack_cfg or self.cfg.attack.to_config()
        cfg = dataclasses.replace(base, rng_seed=image_seed(self.cfg.attack.seed, image_id))
        mask = self.mask_for(x.shape[-2], x.shape[-1])
        pools = self.pools_for(x, label, target)
        labels = ClassLabels(self.class_features, label, target)
        return run_attack(x, mask, self.encoder, pools, labels, cfg, on_iterate=on_iterate)


def _map(fn, items, workers: int, concurrent_safe: bool = True):
    if workers <= 1 or not concurrent_safe or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _manifest(run_dir: Path, command: str, cfg: RunConfig, session_identity: str, started: str,
              extra: dict) -> dict:
    outputs = {}
    for p in sorted(run_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json" and not p.name.startswith("."):
            outputs[p.relative_to(run_dir).as_posix()] = sha256_file(p)
    man = {
        "run_id": run_dir.name,
        "command": command,
        "package_version": __version__,
        "config_hash": cfg.config_hash(),
        "config": cfg.as_dict(),
        "mask_spec": cfg.mask.to_spec().as_dict(),
        "attack_config": dataclasses.asdict(cfg.attack),
        "encoder": session_identity,
        "seed": cfg.attack.seed,
        "started": started,
        "finished": _now(),
        "outputs": outputs,
    }
    man.update(extra)
    # written last: its presence marks a complete run directory
    atomic_write_text(run_dir / "manifest.json", json.dumps(man, indent=2, sort_keys=True))
    return man


def verify_manifest(run_dir: str | Path) -> list[str]:
    """Problems found when re-checking a finished run (empty list means consistent)."""
    from .config import config_from_dict

    run_dir = Path(run_dir)
    man = json.loads((run_dir / "manifest.json").read_text())
    problems = []
    for rel, digest in man["outputs"].items():
        p = run_dir / rel
        if not p.exists():
            problems.append(f"missing output {rel}")
        elif sha256_file(p) != digest:
            problems.append(f"checksum mismatch {rel}")
    if config_from_dict(man["config"]).config_hash() != man["config_hash"]:
        problems.append("config hash does not match stored config")
    return problems


def _prepare_run_dir(out_dir, prefix, cfg, run_id) -> Path:
    run_dir = Path(out_dir) / (run_id or new_run_id(prefix, cfg))
    if (run_dir / "manifest.json").exists():
        raise InvalidInputError(f"run directory already complete: {run_dir}")
    for sub in ("images", "histories", "tables", "figures"):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)
    atomic_write_text(run_dir / "config.yaml", dump_config(cfg))
    return run_dir


# --- commands ------------------------------------------------------------------


@dataclass
class CommandResult:
    status: int
    run_dir: Path | None = None
    manifest: dict | None = None
    messages: list = field(default_factory=list)


def cmd_mask_preview(cfg: RunConfig, out_path: str | Path, height: int = 224,
                     width: int = 224) -> CommandResult:
    from .plotting import plot_mask

    spec = cfg.mask.to_spec()
    report = validate_spec(spec, ImageShape(height, width))
    if not report.ok:
        return CommandResult(2, messages=[str(report)])
    mask = build_x_mask(spec, ImageShape(height, width))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    plot_mask(mask, out_path)
    write_mask_png(mask, out_path.with_name(out_path.stem + "_mask.png"))
    cov = mask_coverage(mask)
    return CommandResult(0, messages=[f"coverage {cov:.6f} ({100 * cov:.3f}% of pixels, "
                                      f"{mask.support_size} of {height * width})"])


def cmd_attack(cfg: RunConfig, input_dir: str | Path, out_dir: str | Path, *, workers: int = 1,
               run_id: str | None = None, encoder=None) -> CommandResult:
    from .plotting import plot_loss_histories, plot_mask

    try:
        inputs = list_inputs(input_dir)
    except InvalidInputError as exc:
        return CommandResult(2, messages=[str(exc)])
    if not inputs:
        return CommandResult(2, messages=[f"no inputs in {input_dir}"])
    session = AttackSession(cfg, encoder)
    try:
        labels = read_labels(input_dir, session.class_names)
    except InvalidInputError as exc:
        return CommandResult(2, messages=[str(exc)])
    started = _now()
    run_dir = _prepare_run_dir(out_dir, "attack", cfg, run_id)

    def one(path: Path):
        image_id = path.stem
        try:
            if image_id not in labels:
                raise InvalidInputError(f"no label for {path.name} in {LABELS_FILE}")
            label, target = labels[image_id]
            x = read_image(path)
            res = session.attack(x, image_id, label, target)
            write_png(res.adversarial_image, run_dir / "images" / f"{image_id}.png")
            write_csv(run_dir / "histories" / f"{image_id}.csv", res.history_records())
            mask = session.mask_for(x.shape[-2], x.shape[-1])
            side = {
                "image_id": image_id,
                "source": path.name,
                "label": label,
                "target": target,
                "seed": image_seed(cfg.attack.seed, image_id),
                "best_iteration": res.best_iteration,
                "success_on_surrogate": res.success_on_surrogate,
                "wall_time": res.wall_time,
                **perturbation_stats(res.best_delta, mask),
            }
            if cfg.attack.quantization_check:
                xq = read_image(run_dir / "images" / f"{image_id}.png")
                pred = predict(session.encoder, [xq], class_features=session.class_features)[0]
                side["success_after_export"] = (pred == target) if cfg.attack.targeted \
                    else (pred != label)
            atomic_write_text(run_dir / "images" / f"{image_id}.json",
                              json.dumps(side, indent=2, sort_keys=True))
            return side, res
        except Exception as exc:
            log.error("attack failed for %s: %s", path.name, exc)
            return {"image_id": image_id, "error": f"{type(exc).__name__}: {exc}"}, None

    results = _map(one, inputs, workers, getattr(session.encoder, "concurrent_safe", True))
    ok = [s for s, r in results if r is not None]
    failed = [s for s, r in results if r is None]
    cols = ["image_id", "label", "target", "seed", "best_iteration", "success_on_surrogate",
            "perturbation_magnitude", "smoothness", "line_smoothness", "wall_time"]
    if cfg.attack.quantization_check:
        cols.append("success_after_export")
    write_csv(run_dir / "tables" / "attack_summary.csv", ok, cols)
    if ok:
        plot_loss_histories({s["image_id"]: r.history_records() for s, r in results if r},
                            run_dir / "figures" / "loss_histories.png")
        first = read_image(inputs[0])
        mask = session.mask_for(first.shape[-2], first.shape[-1])
        write_mask_png(mask, run_dir / "mask.png")
        plot_mask(mask, run_dir / "figures" / "mask.png")
    man = _manifest(run_dir, "attack", cfg, session.encoder_identity, started, {
        "inputs": str(Path(input_dir).resolve()),
        "n_images": len(inputs),
        "failures": failed,
    })
    msgs = [f"attacked {len(ok)}/{len(inputs)} images -> {run_dir}"]
    msgs += [f"FAILED {f['image_id']}: {f['error']}" for f in failed]
    return CommandResult(1 if failed else 0, run_dir, man, msgs)


def _resolve_images_dir(d: Path) -> Path:
    return d / "images" if (d / "manifest.json").exists() and (d / "images").is_dir() else d


def _load_aligned(clean_dir: Path, adv_dir: Path):
    clean = {p.stem: p for p in list_inputs(clean_dir)}
    adv = {p.stem: p for p in list_inputs(adv_dir)}
    if not clean:
        raise InvalidInputError(f"no inputs in {clean_dir}")
    if set(clean) != set(adv):
        only_c = sorted(set(clean) - set(adv))[:5]
        only_a = sorted(set(adv) - set(clean))[:5]
        raise InvalidInputError(
            f"misaligned image sets: only in clean {only_c}, only in adversarial {only_a}")
    ids = sorted(clean)
    xs, xa = [], []
    for i in ids:
        a, b = read_image(clean[i]), read_image(adv[i])
        if a.shape != b.shape:
            raise InvalidInputError(
                f"misaligned image sets: {i} is {tuple(a.shape)} clean vs {tuple(b.shape)} adversarial")
        xs.append(a)
        xa.append(b)
    return ids, xs, xa


def _read_texts(*dirs: Path) -> list[dict]:
    for d in dirs:
        p = d / TEXTS_FILE
        if p.exists():
            return [json.loads(l) for l in p.read_text().splitlines() if l.strip()]
    return []


def cmd_eval(cfg: RunConfig, clean_dir: str | Path, adv_dir: str | Path, out_dir: str | Path, *,
             run_id: str | None = None, encoder=None) -> CommandResult:
    from .plotting import plot_saliency

    clean_dir, adv_root = Path(clean_dir), Path(adv_dir)
    adv_dir = _resolve_images_dir(adv_root)
    try:
        ids, xs, xa = _load_aligned(clean_dir, adv_dir)
    except InvalidInputError as exc:
        return CommandResult(2, messages=[str(exc)])
    session = AttackSession(cfg, encoder)
    try:
        labels = read_labels(clean_dir, session.class_names)
        missing = [i for i in ids if i not in labels]
        if missing:
            raise InvalidInputError(f"no label for {missing[:5]} in {LABELS_FILE}")
    except InvalidInputError as exc:
        return CommandResult(2, messages=[str(exc)])
    started = _now()
    run_dir = _prepare_run_dir(out_dir, "eval", cfg, run_id)
    tag = session.encoder_identity
    y = [labels[i][0] for i in ids]
    feats = session.class_features
    records: list[EvalRecord] = []
    summary: dict = {"n_images": len(ids), "encoder": tag}
    messages, status = [], 0

    if "zero_shot" in cfg.eval.tasks:
        pc = predict(session.encoder, xs, class_features=feats)
        pa = predict(session.encoder, xa, class_features=feats)
        for i, a, b, t in zip(ids, pc, pa, y):
            records.append(EvalRecord(i, "zero_shot", float(a == t), float(b == t), tag))
        acc_c = sum(a == t for a, t in zip(pc, y)) / len(y)
        acc_a = sum(b == t for b, t in zip(pa, y)) / len(y)
        summary.update(acc_clean=acc_c, acc_adversarial=acc_a, acc_delta=acc_a - acc_c)
        try:
            summary["asr"] = attack_success_rate(session.encoder, xs, xa, y, class_features=feats)
        except UndefinedRateError as exc:
            summary["asr"] = float("nan")
            messages.append(str(exc))

    judge_tasks = [t for t in cfg.eval.tasks if t in TASK_RUBRIC]
    if judge_tasks:
        try:
            client = make_judge_client(cfg.eval.judge)
            if client is None:
                raise ConfigError("judge task requested but eval.judge.backend is none",
                                  field="eval.judge.backend")
            audit = JudgeAudit(run_dir / "tables" / "judge_audit.jsonl")
            texts = _read_texts(adv_root, clean_dir)
            for task in judge_tasks:
                scores = []
                for row in (r for r in texts if r.get("task") == task and r["image_id"] in labels):
                    s = [judge_score(client, JudgeRequest(task, row[k], TASK_RUBRIC[task],
                                                          row.get("reference", "")), audit).score
                         for k in ("clean", "adversarial")]
                    records.append(EvalRecord(row["image_id"], task, s[0], s[1], tag))
                    scores.append(s)
                if scores:
                    summary[f"{task}_judge_clean"] = float(np.mean([s[0] for s in scores]))
                    summary[f"{task}_judge_adversarial"] = float(np.mean([s[1] for s in scores]))
            summary["judge_calls"] = len(audit.entries)
        except XMaskAttackError as exc:
            summary["judge_error"] = str(exc)
            messages.append(f"judge configuration error: {exc}")
            status = 3

    if cfg.eval.saliency_examples > 0:
        rows, pairs = [], []
        for k in range(min(cfg.eval.saliency_examples, len(ids))):
            tf = feats[y[k]]
            a = saliency_map(session.encoder, xs[k], tf)
            b = saliency_map(session.encoder, xa[k], tf)
            rows.append({"image_id": ids[k], "shift_score": shift_score(a.heatmap, b.heatmap),
                         "clean_flat": a.flat, "adversarial_flat": b.flat})
            pairs.append((ids[k], xs[k], xa[k], a.heatmap, b.heatmap))
        write_csv(run_dir / "tables" / "saliency.csv", rows)
        summary["mean_saliency_shift"] = float(np.mean([r["shift_score"] for r in rows]))
        plot_saliency(pairs, run_dir / "figures" / "saliency.png")

    write_csv(run_dir / "tables" / "eval_records.csv", [dataclasses.asdict(r) for r in records],
              ["image_id", "task", "clean_metric", "adversarial_metric", "delta", "model_tag"])
    write_csv(run_dir / "tables" / "summary.csv",
              [{"metric": k, "value": v} for k, v in summary.items()], ["metric", "value"])
    man = _manifest(run_dir, "eval", cfg, tag, started, {
        "clean_dir": str(clean_dir.resolve()), "adversarial_dir": str(adv_dir.resolve()),
        "summary": summary,
    })
    messages.insert(0, f"evaluated {len(ids)} pairs -> {run_dir}")
    for k in ("acc_clean", "acc_adversarial", "asr"):
        if k in summary:
            messages.append(f"{k} {summary[k]:.4f}")
    return CommandResult(status, run_dir, man, messages)


@dataclass
class SweepFixtures:
    image_ids: list
    images: list
    labels: list
    targets: list
    session: AttackSession

    @property
    def encoder(self):
        return self.session.encoder

    @property
    def class_features(self):
        return self.session.class_features

    @property
    def mask(self):
        x = self.images[0]
        return self.session.mask_for(x.shape[-2], x.shape[-1])

    def attack(self, i, attack_cfg):
        return self.session.attack(self.images[i], self.image_ids[i], self.labels[i],
                                   self.targets[i], attack_cfg)


def sweep_fixtures(cfg: RunConfig, encoder=None) -> SweepFixtures:
    from .toydata import make_toy_task

    session = AttackSession(cfg, encoder)
    sw = cfg.sweep
    if sw.dataset == "toy":
        t = sw.toy
        task = make_toy_task(session.encoder, n_images=t.n_images, image_size=t.image_size,
                             class_names=session.class_names, seed=t.seed,
                             margin_range=tuple(t.margin_range))
        return SweepFixtures(task.image_ids, task.images, task.labels,
                             [None] * len(task.images), session)
    if not sw.inputs:
        raise ConfigError("sweep.inputs is required when sweep.dataset is dir", field="sweep.inputs")
    paths = list_inputs(sw.inputs)
    if not paths:
        raise InvalidInputError(f"no inputs in {sw.inputs}")
    labels = read_labels(sw.inputs, session.class_names)
    ids = [p.stem for p in paths]
    missing = [i for i in ids if i not in labels]
    if missing:
        raise InvalidInputError(f"no label for {missing[:5]} in {LABELS_FILE}")
    return SweepFixtures(ids, [read_image(p) for p in paths], [labels[i][0] for i in ids],
                         [labels[i][1] for i in ids], session)


def _setting_slug(value) -> str:
    s = str(value).lower()
    return "".join(c if c.isalnum() or c == "." else "_" for c in s).strip("_")


def cmd_sweep(cfg: RunConfig, out_dir: str | Path, *, workers: int = 1, run_id: str | None = None,
              encoder=None, fixtures: SweepFixtures | None = None) -> CommandResult:
    from .plotting import plot_sweep

    try:
        fx = fixtures or sweep_fixtures(cfg, encoder)
        sweep = SweepConfig(cfg.sweep.axis, list(cfg.sweep.grid), cfg.attack.to_config())
    except XMaskAttackError as exc:
        return CommandResult(2, messages=[str(exc)])
    started = _now()
    run_dir = _prepare_run_dir(out_dir, "sweep", cfg, run_id)
    identity = fx.session.encoder_identity

    def on_point(row, point_cfg, results):
        pdir = run_dir / "points" / f"{sweep.axis}_{_setting_slug(row.setting)}"
        pdir.mkdir(parents=True, exist_ok=True)
        atomic_write_text(pdir / "manifest.json", json.dumps({
            "axis": sweep.axis,
            "setting": row.setting,
            "config_hash": cfg.config_hash(),
            "attack_config": _jsonable(dataclasses.asdict(point_cfg)),
            "row": row.as_dict(),
            "failures": row.failures,
            "best_iterations": {k: r.best_iteration for k, r in results.items()},
        }, indent=2, sort_keys=True))

    rows = ablation_sweep(sweep, fx, on_point=on_point, workers=workers)
    table = [r.as_dict() for r in rows]
    cols = ["setting", "asr", "perturbation_magnitude", "smoothness", "line_smoothness",
            "n_images", "failures"]
    write_csv(run_dir / "tables" / f"sweep_{sweep.axis}.csv", table, cols)
    plot_sweep(rows, sweep.axis, run_dir / "figures" / f"sweep_{sweep.axis}.png")
    failures = sum(len(r.failures) for r in rows)
    man = _manifest(run_dir, "sweep", cfg, identity, started, {
        "axis": sweep.axis,
        "grid": list(cfg.sweep.grid),
        "image_ids": list(fx.image_ids),
        "statistics": STAT_DEFINITIONS,
        "rows": table,
    })
    msgs = [f"sweep over {sweep.axis} ({len(rows)} points, {len(fx.image_ids)} images) -> {run_dir}"]
    msgs += [f"  {r.setting}: ASR {r.asr:.4f}  mag {r.perturbation_magnitude:.5f}  "
             f"smooth {r.smoothness:.5f}  line {r.line_smoothness:.5f}" for r in rows]
    return CommandResult(1 if failures else 0, run_dir, man, msgs)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj
