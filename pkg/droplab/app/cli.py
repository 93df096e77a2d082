"""
droplab command line.

    droplab train -c cfg.json [--force]
    droplab dissect -c cfg.json [--checkpoint path] [--force]
    droplab compare A.json B.json [--out deltas.csv]
    droplab sweep -c cfg.json --placements none,all,conv_only,fc_only [--noise-rates 0.15,0.35] [--force]
    droplab selfcheck [--nets 10] [--seed 0]

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal error.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .architectures import PlacementKind, DropoutPlacement, build_model, layer_inventory
from .checkpoint import load_checkpoint
from .config_manager import config_bytes, load_config
from .dissect import capture_activations, layer_histograms, report_from_capture, top_neuron_heatmaps
from .errors import ConfigError, DataError, DropLabError
from .gradcheck import run_self_check
from .mc_infer import mc_predict_dataset, write_uncertainty_csv
from .models import ExperimentConfig
from .noise import manifest_from_record
from .reports import (CHECKPOINT_FILE, compare_reports, empty_or_missing, print_comparison_csv, read_report,
                      sweep_column, sweep_result, write_accuracy_curves, write_comparison_csv, write_heatmaps,
                      write_histogram_csv, write_json, write_report_csv, write_run_outputs, write_sweep_summary,
                      write_sweep_summary_json)
from .train import corrupt_labels, load_datasets, run_experiment
from .utils import configure_logging, derive_seed, parallel_map

logger = logging.getLogger("droplab")

DISSECTION_DIR = "dissection"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _prepare_output(path: Path, force: bool) -> Path:
    if path.exists() and not path.is_dir():
        raise ConfigError(f"{path} exists and is not a directory", key="output.dir")
    if not empty_or_missing(path) and not force:
        raise ConfigError(f"{path} is not empty; pass --force to write into it", key="output.dir")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _split_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def cmd_train(args) -> int:
    config = load_config(args.config)
    out_dir = Path(config.output.dir)
    # Inputs are checked before the output directory is touched
    datasets = load_datasets(config)
    _prepare_output(out_dir, args.force)
    result = run_experiment(config, datasets=datasets)
    write_run_outputs(result, out_dir)
    final = result.final
    logger.info(f"Done in {result.elapsed_s:.1f}s: final train_acc={final.train_acc:.4f}, test_acc={final.test_acc:.4f}"
                + (f", test_acc_mc={final.test_acc_mc:.4f}" if final.test_acc_mc is not None else ""))
    return 0


def _check_inventory(config: ExperimentConfig, net, num_classes: int, sample_shape, source: Path):
    expected_net = build_model(config.arch_spec(num_classes, sample_shape), DropoutPlacement(PlacementKind.NONE), 0)
    expected = layer_inventory(expected_net)
    found = layer_inventory(net)
    if expected != found or tuple(net.input_shape) != tuple(sample_shape):
        raise DataError(f"{source} does not match arch {config.arch}: expected layers {expected} on input "
                        f"{tuple(sample_shape)}, found {found} on input {tuple(net.input_shape)}")


def cmd_dissect(args) -> int:
    config = load_config(args.config)
    d = config.dissect
    if d.heatmaps and not d.full_maps:
        raise ConfigError("heatmaps need full feature maps; set dissect.full_maps to true "
                          "or dissect.heatmaps to false", key="dissect.heatmaps")
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(config.output.dir) / CHECKPOINT_FILE
    net = load_checkpoint(ckpt)
    _, test = load_datasets(config)
    _check_inventory(config, net, test.num_classes, test.sample_shape, ckpt)
    out_dir = _prepare_output(Path(config.output.dir) / DISSECTION_DIR, args.force)

    seed = config.train.seed
    capture = capture_activations(
        net, test, config.mc.k, derive_seed(seed, "dissect"),
        capture_mode=d.capture_mode, full_maps=d.full_maps and d.heatmaps,
        map_images=[d.heatmap_image_index], batch_size=d.batch_size,
    )
    report = report_from_capture(capture, d.epsilon, d.epsilon_mode, arch=config.arch, placement=config.placement)
    write_json(out_dir / "report.json", report)
    write_report_csv(out_dir / "report.csv", report)
    for name in capture.layers:
        write_histogram_csv(out_dir / "histograms" / f"{name}.csv", layer_histograms(capture, name, d.bins))
    if d.heatmaps:
        exports = [top_neuron_heatmaps(capture, name, d.heatmap_image_index, d.top_n)
                   for name, lc in capture.layers.items() if lc.spatial]
        write_heatmaps(out_dir / "heatmaps", exports)
    dist = mc_predict_dataset(net, test, config.mc.k, derive_seed(seed, "dissect-mc"), d.batch_size)
    write_uncertainty_csv(out_dir / "uncertainty.csv", dist)

    for s in report.layers:
        logger.info(f"{s.layer:>6} ({s.neurons:>4} neurons): mean={s.activation_mean:.4f} std={s.activation_std:.4f} "
                    f"unresponsive={s.unresponsive_count}/{s.neurons} ({s.unresponsive_ratio:.4f})")
    logger.info(f"Dissection written to {out_dir} (epsilon={report.epsilon:.3g}, {report.capture_mode}, K={report.k})")
    return 0


def cmd_compare(args) -> int:
    comparison = compare_reports(read_report(args.report_a), read_report(args.report_b))
    if args.out:
        write_comparison_csv(args.out, comparison)
        logger.info(f"Wrote comparison to {args.out}")
    else:
        print_comparison_csv(comparison, sys.stdout)
    print(comparison.summary)
    return 0


def _run_dir_name(label: str, rate: float, several_rates: bool) -> str:
    return sweep_column(label, rate, several_rates).replace(":", "-")


def cmd_sweep(args) -> int:
    base = load_config(args.config)
    labels = [DropoutPlacement.parse(p).label for p in _split_list(args.placements)]
    if not labels:
        raise ConfigError("no placements given", key="--placements")
    try:
        rates = [float(r) for r in _split_list(args.noise_rates)] if args.noise_rates else [base.noise.rate]
    except ValueError:
        raise ConfigError(f"noise rates must be numbers, got {args.noise_rates!r}", key="--noise-rates")
    several = len(rates) > 1
    for rate in rates:
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"noise rate must lie in [0, 1), got {rate}", key="--noise-rates")
    root = Path(base.output.dir)
    datasets = load_datasets(base)
    train_set = datasets[0]
    _prepare_output(root, args.force)

    curves = {}
    results = []
    for rate in rates:
        rate_cfg = base.model_copy(update={"noise": base.noise.model_copy(update={"rate": rate})})
        corruption = corrupt_labels(rate_cfg, train_set)
        manifest_name = f"corruption_manifest@{rate!r}.json" if several else "corruption_manifest.json"
        write_json(root / manifest_name, manifest_from_record(corruption, train_set.num_classes))

        def run_one(label: str):
            cfg = rate_cfg.model_copy(update={"placement": label})
            run_dir = root / _run_dir_name(label, rate, several)
            result = run_experiment(cfg, corruption, datasets)
            write_run_outputs(result, run_dir)
            (run_dir / "config.json").write_bytes(config_bytes(cfg))
            return result

        for label, result in zip(labels, parallel_map(run_one, labels)):
            curves[sweep_column(label, rate, several)] = result.epoch_logs
            results.append(sweep_result(label, rate, result.epoch_logs))
            logger.info(f"[sweep] {label} @ {rate}: final test_acc={result.final.test_acc:.4f}")

    write_accuracy_curves(root / "accuracy_curves.csv", curves)
    write_sweep_summary(root / "sweep_summary.csv", results)
    write_sweep_summary_json(root / "sweep_summary.json", labels, rates, results)
    logger.info(f"Sweep of {len(labels)} placement(s) x {len(rates)} noise rate(s) written to {root}")
    return 0


def cmd_selfcheck(args) -> int:
    results = run_self_check(args.nets, args.seed)
    failed = [r for r in results if not r.passed]
    if failed:
        logger.error(f"Gradient self-check failed for {len(failed)}/{len(results)} network(s)")
        return 3
    logger.info(f"Gradient self-check passed for all {len(results)} network(s)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="droplab", description="MC dropout noisy-label laboratory")
    parser.add_argument("--log-level", default=None, help="overrides DROPLAB_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model on corrupted labels")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--force", action="store_true", help="write into a non-empty output.dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dissect", help="activation statistics of a trained checkpoint")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--checkpoint", default=None, help=f"defaults to <output.dir>/{CHECKPOINT_FILE}")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_dissect)

    p = sub.add_parser("compare", help="per-layer deltas between two dissection reports (B - A)")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--out", default=None, help="CSV path; stdout when omitted")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="train one model per dropout placement on shared noisy labels")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--placements", required=True, help="comma-separated, e.g. none,all,conv_only,fc_only")
    p.add_argument("--noise-rates", default=None, help="comma-separated, e.g. 0.15,0.35")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("selfcheck", help="finite-difference check of the backward pass")
    p.add_argument("--nets", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except DropLabError as e:
        logger.error(str(e))
        return e.exit_code
    except Exception:
        logger.exception("Unexpected failure")
        return 3
