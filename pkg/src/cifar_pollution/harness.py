"""Training with validation-based model selection, evaluation, sweeps and reports."""

from __future__ import annotations

import csv
import json
import logging
import math
import multiprocessing
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import cifar_io
from .cifar_io import ChannelStats, Dataset, NUM_CLASSES
from .corruption import CorruptionSpec
from .errors import DivergedRunError, EmptyInputError, NumericError, ParameterError
from .nn import checkpoint
from .nn.model import Model, ModelConfig, build_model, loss_and_grad, per_example_loss
from .nn.optim import OptimState, sgd_step
from .pollution import PollutedDataset, PollutionPlan, corrupt_test_set, corrupted_test_seed, pollute
from .rng import substream

log = logging.getLogger(__name__)

WORKERS_ENV = "CIFAR_POLLUTION_WORKERS"

RUN_COLUMNS = (
    "run_id", "noise_type", "intensity", "fraction", "seed", "best_epoch",
    "clean_loss", "clean_acc", "noisy_loss", "noisy_acc",
    *(f"per_class_{k}" for k in range(NUM_CLASSES)),
    "status",
)
METRIC_COLUMNS = RUN_COLUMNS[5:-1]
CELL_KEYS = ("noise_type", "intensity", "fraction")
AGGREGATE_COLUMNS = (
    *CELL_KEYS, "n_runs", "n_failed",
    *(f"{stat}_{m}" for m in METRIC_COLUMNS for stat in ("mean", "std")),
)
CURVE_COLUMNS = ("run_id", "epoch", "train_loss", "val_loss", "val_acc")


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 100
    train_batch: int = 128
    eval_batch: int = 100
    optim: OptimState = field(default_factory=OptimState)
    seed: int = 0
    augment: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.train_batch < 1 or self.eval_batch < 1:
            raise ParameterError("batch sizes must be >= 1")

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(), "epochs": self.epochs,
            "train_batch": self.train_batch, "eval_batch": self.eval_batch,
            "optim": self.optim.hyperparams(), "seed": self.seed,
            "augment": self.augment, "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = d.pop("model", {})
        optim = d.pop("optim", {})
        return cls(model=ModelConfig(**model) if isinstance(model, dict) else model,
                   optim=OptimState(**optim) if isinstance(optim, dict) else optim, **d)


@dataclass
class EvalResult:
    loss: float
    top1: float
    per_class: list[float]


@dataclass
class RunMetrics:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = -1
    clean: EvalResult | None = None
    noisy: EvalResult | None = None


@dataclass
class DataBundle:
    train: Dataset
    val: Dataset
    test: Dataset
    stats: ChannelStats
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Profile:
    """Named bundle of model, schedule, data subset sizes and sweep grid."""

    model: str
    epochs: int
    seeds: tuple[int, ...]
    fractions: tuple[float, ...]
    train_size: int | None = None
    val_size: int | None = None
    test_size: int | None = None


PROFILES = {
    "desk": Profile("small_cnn", 30, (0, 1, 2), (0.0, 0.10), train_size=5000, val_size=1000),
    "paper": Profile("resnet18", 100, tuple(range(10)),
                     (0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.50, 0.75, 1.0)),
}


def load_bundle(data_dir: str | Path, split_seed: int = 0, train_size: int | None = None,
                val_size: int | None = None, test_size: int | None = None) -> DataBundle:
    """Load CIFAR-10, split 45000/5000, optionally take class-balanced subsets,
    and compute normalization statistics on the (clean) training part."""
    full = cifar_io.load_train(data_dir)
    test = cifar_io.load_test(data_dir)
    train, val = cifar_io.split_train_val(full, split_seed)
    if train_size:
        train = cifar_io.stratified_subset(train, train_size, split_seed, "subset/train")
    if val_size:
        val = cifar_io.stratified_subset(val, val_size, split_seed, "subset/val")
    if test_size:
        test = cifar_io.stratified_subset(test, test_size, split_seed, "subset/test")
    stats = cifar_io.compute_channel_stats(train)
    info = {"data_dir": str(data_dir), "split_seed": split_seed, "train": len(train),
            "val": len(val), "test": len(test), "stats": stats.to_dict()}
    return DataBundle(train, val, test, stats, info)


# ---------------------------------------------------------------------------
# evaluation

def _as_model(params: Model | dict, cfg: TrainConfig | None) -> Model:
    if isinstance(params, Model):
        return params
    cfg = cfg or TrainConfig()
    model = build_model(cfg.model, 0, np.dtype(cfg.dtype))
    model.load_state_dict(params)
    return model


def evaluate(params: Model | dict, data: Dataset, stats: ChannelStats,
             spec: CorruptionSpec | None = None, seed: int = 0,
             eval_batch: int = 100, cfg: TrainConfig | None = None) -> EvalResult:
    """Loss, top-1 and per-class accuracy in evaluation mode, without augmentation.

    With ``spec`` every image is corrupted first (see ``corrupt_test_set``).
    """
    if len(data) == 0:
        raise EmptyInputError("cannot evaluate on an empty dataset")
    model = _as_model(params, cfg)
    if spec is not None:
        data = corrupt_test_set(data, spec, seed)
    n = len(data)
    total_loss = 0.0
    preds = np.empty(n, dtype=np.int64)
    for start in range(0, n, eval_batch):
        xb = cifar_io.normalize(data.images[start:start + eval_batch], stats)
        yb = data.labels[start:start + eval_batch]
        logits = model.forward(xb, training=False)
        total_loss += float(per_example_loss(logits, yb).sum())
        preds[start:start + eval_batch] = logits.argmax(axis=1)
    correct = preds == data.labels
    per_class = []
    for k in range(NUM_CLASSES):
        members = data.labels == k
        per_class.append(float(correct[members].mean()) if members.any() else math.nan)
    return EvalResult(total_loss / n, float(correct.mean()), per_class)


# ---------------------------------------------------------------------------
# training

def train(train_data: PollutedDataset | Dataset, val_data: Dataset, cfg: TrainConfig,
          stats: ChannelStats, checkpoint_path: str | Path | None = None) -> tuple[dict, RunMetrics]:
    """Mini-batch SGD keeping the snapshot with the lowest validation loss.

    Every epoch reshuffles the (already corrupted) training images, applies a
    fresh random crop/flip and normalizes. Ties in validation loss keep the
    earliest epoch.
    """
    data = train_data.examples if isinstance(train_data, PollutedDataset) else train_data
    if len(data) == 0 or len(val_data) == 0:
        raise EmptyInputError("training and validation sets must be non-empty")
    model = build_model(cfg.model, cfg.seed, np.dtype(cfg.dtype))
    optim = OptimState(**cfg.optim.hyperparams())
    metrics = RunMetrics()
    best_state: dict | None = None
    best_loss = math.inf
    n = len(data)
    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, "shuffle", epoch).permutation(n)
        aug_rng = substream(cfg.seed, "augment", epoch)
        running = 0.0
        for start in range(0, n, cfg.train_batch):
            idx = order[start:start + cfg.train_batch]
            xb = data.images[idx]
            if cfg.augment:
                xb = cifar_io.augment_batch(xb, aug_rng)
            xb = cifar_io.normalize(xb, stats)
            try:
                loss, grads = loss_and_grad(model, xb, data.labels[idx])
            except NumericError as exc:
                raise DivergedRunError(epoch, f"training diverged at epoch {epoch}: {exc}") from exc
            sgd_step(optim, model.params, grads)
            running += loss * len(idx)
        try:
            val = evaluate(model, val_data, stats, eval_batch=cfg.eval_batch)
        except NumericError as exc:
            raise DivergedRunError(epoch, f"validation diverged at epoch {epoch}: {exc}") from exc
        metrics.train_loss.append(running / n)
        metrics.val_loss.append(val.loss)
        metrics.val_acc.append(val.top1)
        log.info("epoch %d: train_loss=%.4f val_loss=%.4f val_acc=%.4f",
                 epoch, running / n, val.loss, val.top1)
        if val.loss < best_loss:
            best_loss = val.loss
            best_state = model.state_dict()
            metrics.best_epoch = epoch
            if checkpoint_path is not None:
                checkpoint.save(checkpoint_path, best_state, cfg.to_dict())
    return best_state, metrics


# ---------------------------------------------------------------------------
# sweeps

def _q(x: float) -> float:
    """Round to the 9 significant digits used in the per-run CSV."""
    return float(f"{x:.9g}")


@dataclass
class RunRecord:
    run_id: str
    noise_type: str
    intensity: float
    fraction: float
    seed: int
    status: str = "ok"
    values: dict[str, float] = field(default_factory=dict)
    curves: RunMetrics | None = None

    @property
    def cell(self) -> tuple:
        return (self.noise_type, self.intensity, self.fraction)


@dataclass
class CellSummary:
    noise_type: str
    intensity: float
    fraction: float
    n_runs: int
    n_failed: int
    mean: dict[str, float]
    std: dict[str, float]


@dataclass
class SweepReport:
    runs: list[RunRecord]
    cells: list[CellSummary]
    manifest: dict = field(default_factory=dict)


def run_id_for(plan: PollutionPlan) -> str:
    return f"{plan.spec.noise_type}_{plan.spec.param:g}_f{plan.fraction:g}_s{plan.master_seed}"


def run_plan(plan: PollutionPlan, cfg_template: TrainConfig, bundle: DataBundle,
             checkpoint_dir: str | Path | None = None,
             _test_cache: dict | None = None) -> RunRecord:
    """Pollute, train, then evaluate on the clean and fully corrupted test sets."""
    record = RunRecord(run_id_for(plan), plan.spec.noise_type, plan.spec.param,
                       plan.fraction, plan.master_seed)
    cfg = replace(cfg_template, seed=plan.master_seed)
    polluted = pollute(bundle.train, plan)
    ckpt = Path(checkpoint_dir) / f"{record.run_id}.ckpt" if checkpoint_dir else None
    try:
        state, metrics = train(polluted, bundle.val, cfg, bundle.stats, ckpt)
        model = build_model(cfg.model, cfg.seed, np.dtype(cfg.dtype))
        model.load_state_dict(state)
        metrics.clean = evaluate(model, bundle.test, bundle.stats, eval_batch=cfg.eval_batch)
        test_seed = corrupted_test_seed(plan.master_seed)
        key = (plan.spec, test_seed)
        cache = _test_cache if _test_cache is not None else {}
        if key not in cache:
            cache[key] = corrupt_test_set(bundle.test, plan.spec, test_seed)
        metrics.noisy = evaluate(model, cache[key], bundle.stats, eval_batch=cfg.eval_batch)
    except DivergedRunError as exc:
        log.warning("run %s failed: %s", record.run_id, exc)
        record.status = "diverged"
        return record
    record.curves = metrics
    values = {
        "best_epoch": float(metrics.best_epoch),
        "clean_loss": metrics.clean.loss, "clean_acc": metrics.clean.top1,
        "noisy_loss": metrics.noisy.loss, "noisy_acc": metrics.noisy.top1,
    }
    for k, acc in enumerate(metrics.clean.per_class):
        values[f"per_class_{k}"] = acc
    record.values = {k: _q(v) for k, v in values.items()}
    return record


_WORKER_STATE: dict = {}


def _worker_run(plan: PollutionPlan) -> RunRecord:
    s = _WORKER_STATE
    return run_plan(plan, s["cfg"], s["bundle"], s["checkpoint_dir"])


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ParameterError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def _sample_std(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(np.asarray(values, dtype=np.float64), ddof=1))


def aggregate(runs: Sequence[RunRecord]) -> list[CellSummary]:
    """Mean and sample std (n - 1 denominator) per cell over successful runs."""
    cells: dict[tuple, list[RunRecord]] = {}
    for r in runs:
        cells.setdefault(r.cell, []).append(r)
    out = []
    for (noise_type, intensity, fraction), members in cells.items():
        ok = [r for r in members if r.status == "ok"]
        mean, std = {}, {}
        for m in METRIC_COLUMNS:
            vals = [r.values[m] for r in ok]
            mean[m] = float(np.mean(vals)) if vals else math.nan
            std[m] = _sample_std(vals) if vals else math.nan
        out.append(CellSummary(noise_type, intensity, fraction, len(members),
                               len(members) - len(ok), mean, std))
    return out


def run_sweep(plans: Sequence[PollutionPlan], cfg_template: TrainConfig, bundle: DataBundle,
              checkpoint_dir: str | Path | None = None, workers: int | None = None) -> SweepReport:
    if not plans:
        raise ParameterError("a sweep needs at least one plan")
    workers = workers or worker_count()
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    if workers > 1:
        _WORKER_STATE.update(cfg=cfg_template, bundle=bundle, checkpoint_dir=checkpoint_dir)
        with multiprocessing.get_context("fork").Pool(workers) as pool:
            runs = pool.map(_worker_run, plans, chunksize=1)
        _WORKER_STATE.clear()
    else:
        cache: dict = {}
        runs = []
        for i, plan in enumerate(plans):
            log.info("run %d/%d: %s", i + 1, len(plans), run_id_for(plan))
            runs.append(run_plan(plan, cfg_template, bundle, checkpoint_dir, cache))
    manifest = {
        "train_config": cfg_template.to_dict(),
        "plans": [p.to_dict() for p in plans],
        "data": bundle.info,
    }
    return SweepReport(list(runs), aggregate(runs), manifest)


# ---------------------------------------------------------------------------
# report files

def _fmt_run(x) -> str:
    if isinstance(x, float):
        return "" if math.isnan(x) else f"{x:.9g}"
    return str(x)


def _fmt_exact(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def run_rows(runs: Sequence[RunRecord]) -> list[list[str]]:
    rows = []
    for r in runs:
        row = [r.run_id, r.noise_type, _fmt_run(float(r.intensity)), _fmt_run(float(r.fraction)), str(r.seed)]
        for m in METRIC_COLUMNS:
            if r.status != "ok":
                row.append("")
            elif m == "best_epoch":
                row.append(str(int(r.values[m])))
            else:
                row.append(_fmt_run(r.values[m]))
        row.append(r.status)
        rows.append(row)
    return rows


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_aggregate(cells: Sequence[CellSummary], path: str | Path) -> None:
    rows = []
    for c in cells:
        row = [c.noise_type, _fmt_run(float(c.intensity)), _fmt_run(float(c.fraction)),
               str(c.n_runs), str(c.n_failed)]
        for m in METRIC_COLUMNS:
            row += [_fmt_exact(c.mean[m]), _fmt_exact(c.std[m])]
        rows.append(row)
    _write_csv(Path(path), AGGREGATE_COLUMNS, rows)


def emit_report(report: SweepReport, path: str | Path) -> dict[str, Path]:
    """Write runs.csv, aggregate.csv, curves.csv and manifest.json into ``path``."""
    if not report.runs:
        raise ParameterError("cannot emit an empty report")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = {name: out / name for name in ("runs.csv", "aggregate.csv", "curves.csv", "manifest.json")}
    _write_csv(files["runs.csv"], RUN_COLUMNS, run_rows(report.runs))
    write_aggregate(report.cells, files["aggregate.csv"])
    curve_rows = []
    for r in report.runs:
        if r.curves is None:
            continue
        for e, (tl, vl, va) in enumerate(zip(r.curves.train_loss, r.curves.val_loss, r.curves.val_acc)):
            curve_rows.append([r.run_id, str(e), f"{tl:.9g}", f"{vl:.9g}", f"{va:.9g}"])
    _write_csv(files["curves.csv"], CURVE_COLUMNS, curve_rows)
    files["manifest.json"].write_text(json.dumps(report.manifest, indent=2, sort_keys=True) + "\n")
    return files


def read_runs_csv(path: str | Path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RUN_COLUMNS:
            raise ValueError(f"{path}: unexpected per-run CSV header")
        runs = []
        for row in reader:
            status = row["status"]
            values = {m: float(row[m]) if row[m] else math.nan for m in METRIC_COLUMNS} if status == "ok" else {}
            runs.append(RunRecord(row["run_id"], row["noise_type"], float(row["intensity"]),
                                  float(row["fraction"]), int(row["seed"]), status, values))
    return runs


def read_aggregate_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def report_from_runs(runs: Sequence[RunRecord], manifest: dict | None = None) -> SweepReport:
    return SweepReport(list(runs), aggregate(runs), manifest or {})


def metrics_to_dict(metrics: RunMetrics) -> dict:
    return asdict(metrics)
