"""
Report artifacts: epoch logs, manifests, dissection tables, histograms, heatmaps
and comparisons. JSON goes through orjson with sorted keys and CSV floats are
written with repr, so reruns produce byte-identical files.
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Type, TypeVar, Union

import numpy as np
import orjson
from pydantic import BaseModel, ValidationError

from .checkpoint import save_checkpoint
from .errors import DataError
from .models import DissectionReport, EpochLog, SweepResult, SweepSummary
from .noise import manifest_from_record

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
M = TypeVar("M", bound=BaseModel)

EPOCH_LOG_FILE = "epoch_log.csv"
CHECKPOINT_FILE = "checkpoint.dlab"
MANIFEST_FILE = "corruption_manifest.json"

REPORT_METRICS = ("activation_std", "activation_mean", "unresponsive_ratio", "unresponsive_count", "gamut_max_mean")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def model_json(model: BaseModel) -> bytes:
    return orjson.dumps(model.model_dump(mode="json"), option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS)


def write_json(path: PathLike, model: BaseModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(model_json(model))
    return path


def read_json(path: PathLike, model_type: Type[M]) -> M:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    try:
        return model_type.model_validate(orjson.loads(path.read_bytes()))
    except orjson.JSONDecodeError as e:
        raise DataError(f"{path}:{e.lineno}: invalid JSON: {e.msg}")
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ())) or "<root>"
        raise DataError(f"{path}: {where}: {first['msg']}")


# Training outputs

def write_epoch_log(path: PathLike, logs: Sequence[EpochLog]) -> Path:
    return write_csv(path, ["epoch", "train_acc", "test_acc", "loss", "test_acc_mc"],
                     ([log.epoch, log.train_acc, log.test_acc, log.loss, log.test_acc_mc] for log in logs))


def write_run_outputs(result, out_dir: PathLike) -> Dict[str, Path]:
    """epoch_log.csv, checkpoint.dlab and corruption_manifest.json for an ExperimentResult."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = manifest_from_record(result.corruption, result.train_set.num_classes)
    paths = {
        "epoch_log": write_epoch_log(out_dir / EPOCH_LOG_FILE, result.epoch_logs),
        "checkpoint": save_checkpoint(result.network, out_dir / CHECKPOINT_FILE),
        "manifest": write_json(out_dir / MANIFEST_FILE, manifest),
    }
    logger.info(f"Wrote {', '.join(p.name for p in paths.values())} to {out_dir}")
    return paths


# Dissection outputs

def write_report_csv(path: PathLike, report: DissectionReport) -> Path:
    """Flat table: one row per metric, one column per layer (conv0 .. fcN)."""
    header = ["metric"] + [s.layer for s in report.layers]
    rows = [[metric] + [getattr(s, metric) for s in report.layers] for metric in REPORT_METRICS]
    rows.append(["neurons"] + [s.neurons for s in report.layers])
    return write_csv(path, header, rows)


def write_histogram_csv(path: PathLike, histograms: Sequence[Tuple[int, np.ndarray, np.ndarray]]) -> Path:
    rows = []
    for neuron, edges, counts in histograms:
        for b, count in enumerate(counts):
            rows.append([neuron, float(edges[b]), float(edges[b + 1]), int(count)])
    return write_csv(path, ["neuron", "bin_low", "bin_high", "count"], rows)


def write_pgm(path: PathLike, image: np.ndarray, low: float, high: float) -> Path:
    """Plain (P2) graymap, maxval 255, mapping [low, high] linearly onto [0, 255]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise DataError(f"PGM export needs a 2-D map, got shape {image.shape}")
    span = high - low
    scaled = np.zeros(image.shape) if span <= 0 else (image - low) / span * 255.0
    pixels = np.clip(np.rint(scaled), 0, 255).astype(np.int64)
    h, w = image.shape
    lines = ["P2", f"{w} {h}", "255"] + [" ".join(str(v) for v in row) for row in pixels]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def write_heatmaps(out_dir: PathLike, exports: Sequence) -> Path:
    """One PGM per exported neuron under <layer>/ plus an index.csv describing them all."""
    out_dir = Path(out_dir)
    rows = []
    for export in exports:
        low, high = export.scale
        for rank, ((neuron, fmap), gmean) in enumerate(zip(export.neurons, export.gamut_means)):
            rel = Path(export.layer) / f"img{export.image_index}_rank{rank:02d}_neuron{neuron:03d}.pgm"
            write_pgm(out_dir / rel, fmap, low, high)
            rows.append([export.layer, export.image_index, rank, neuron, gmean, low, high, export.rule, rel.as_posix()])
    return write_csv(out_dir / "index.csv",
                     ["layer", "image_index", "rank", "neuron", "gamut_mean", "scale_low", "scale_high", "rule", "file"],
                     rows)


# Comparison of two dissection reports

@dataclass
class LayerDelta:
    layer: str
    neurons: int
    values_a: Dict[str, float]
    values_b: Dict[str, float]

    def delta(self, metric: str) -> float:
        return self.values_b[metric] - self.values_a[metric]


@dataclass
class Comparison:
    layers: List[LayerDelta]
    lower_mean: int  # layers where B's V_l < A's
    lower_std: int  # layers where B's S_l < A's
    higher_unresponsive: int  # layers where B's unresponsive ratio > A's

    @property
    def summary(self) -> str:
        n = len(self.layers)
        return (f"B has lower activation mean on {self.lower_mean}/{n} layers, "
                f"lower activation std on {self.lower_std}/{n}, "
                f"higher unresponsive ratio on {self.higher_unresponsive}/{n}")


COMPARE_METRICS = ("activation_mean", "activation_std", "unresponsive_ratio")


def compare_reports(a: DissectionReport, b: DissectionReport) -> Comparison:
    if a.inventory() != b.inventory():
        raise DataError(f"reports cover different layers: A={a.inventory()} B={b.inventory()}")
    layers = [
        LayerDelta(sa.layer, sa.neurons,
                   {m: getattr(sa, m) for m in COMPARE_METRICS},
                   {m: getattr(sb, m) for m in COMPARE_METRICS})
        for sa, sb in zip(a.layers, b.layers)
    ]
    return Comparison(
        layers=layers,
        lower_mean=sum(d.values_b["activation_mean"] < d.values_a["activation_mean"] for d in layers),
        lower_std=sum(d.values_b["activation_std"] < d.values_a["activation_std"] for d in layers),
        higher_unresponsive=sum(d.values_b["unresponsive_ratio"] > d.values_a["unresponsive_ratio"] for d in layers),
    )


def comparison_table(comparison: Comparison) -> Tuple[List[str], List[list]]:
    header = ["layer", "neurons"]
    for m in COMPARE_METRICS:
        header += [f"{m}_a", f"{m}_b", f"{m}_delta"]
    rows = []
    for d in comparison.layers:
        row = [d.layer, d.neurons]
        for m in COMPARE_METRICS:
            row += [d.values_a[m], d.values_b[m], d.delta(m)]
        rows.append(row)
    return header, rows


def write_comparison_csv(path: PathLike, comparison: Comparison) -> Path:
    return write_csv(path, *comparison_table(comparison))


def print_comparison_csv(comparison: Comparison, stream) -> None:
    header, rows = comparison_table(comparison)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])


# Sweeps

def sweep_column(placement: str, rate: float, several_rates: bool) -> str:
    return f"{placement}@{rate!r}" if several_rates else placement


def curve_values(logs: Sequence[EpochLog]) -> List[float]:
    """Clean-test accuracy per epoch: MC when every epoch has it, deterministic otherwise."""
    if logs and all(log.test_acc_mc is not None for log in logs):
        return [log.test_acc_mc for log in logs]
    return [log.test_acc for log in logs]


def write_accuracy_curves(path: PathLike, curves: Dict[str, Sequence[EpochLog]]) -> Path:
    """epoch x run table of clean-test accuracy, one column per run."""
    columns = list(curves)
    values = {c: curve_values(curves[c]) for c in columns}
    epochs = max((len(v) for v in values.values()), default=0)
    rows = []
    for e in range(epochs):
        rows.append([e + 1] + [values[c][e] if e < len(values[c]) else None for c in columns])
    return write_csv(path, ["epoch"] + columns, rows)


def write_sweep_summary(path: PathLike, results: Sequence[SweepResult]) -> Path:
    return write_csv(path, ["placement", "noise_rate", "final_train_acc", "final_test_acc", "final_test_acc_mc"],
                     ([r.placement, r.noise_rate, r.final_train_acc, r.final_test_acc, r.final_test_acc_mc]
                      for r in results))


def sweep_result(placement: str, rate: float, logs: Sequence[EpochLog]) -> SweepResult:
    last = logs[-1]
    return SweepResult(placement=placement, noise_rate=rate, final_train_acc=last.train_acc,
                       final_test_acc=last.test_acc, final_test_acc_mc=last.test_acc_mc)


def read_report(path: PathLike) -> DissectionReport:
    return read_json(path, DissectionReport)


def empty_or_missing(path: PathLike) -> bool:
    path = Path(path)
    return not path.exists() or (path.is_dir() and not any(path.iterdir()))


def write_sweep_summary_json(path: PathLike, placements: Sequence[str], rates: Sequence[float],
                             results: Sequence[SweepResult]) -> Path:
    summary = SweepSummary(placements=list(placements), noise_rates=list(rates), results=list(results))
    return write_json(path, summary)
