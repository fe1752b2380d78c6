"""Command-line front end: run experiments from config files and compare runs.

Subcommands::

    cals run <config> [--out DIR] [--seed N] [--set key=value ...]
    cals compare <dir>... [--csv PATH]
    cals check-config <config>

``<config>`` is a path or the name of a bundled preset (``cals check-config
longtail``). Exit codes: 0 success, 2 config error, 3 numerical failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .alm import NumericalFailure
from .config import (
    ConfigError,
    ExperimentConfig,
    build_dataset,
    list_presets,
    parse_assignment,
    parse_config,
    resolve_config_path,
    serialize_config,
)
from .data import DataError
from .metrics import EQUAL_WIDTH, PredictionSet, accuracy, aece, bin_predictions, cwce, ece, temperature_search
from .nn import save_network
from .trainer import EpochRecord, TrainingFailure, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

OUTPUT_ROOT_ENV = "CALS_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"

CONFIG_FILE = "config.cfg"
HISTORY_FILE = "history.csv"
PER_CLASS_FILE = "history_per_class.csv"
METRICS_FILE = "metrics.json"
RELIABILITY_FILE = "reliability.json"
CHECKPOINT_FILE = "model.npz"
MANIFEST_FILE = "manifest.txt"
FAILURE_FILE = "FAILED"

HISTORY_COLUMNS = ("epoch", "train_loss", "val_accuracy", "val_ece", "mean_lambda", "mean_rho")


class ReportError(OSError):
    """A run directory lacks a readable, well-formed metrics file."""


@dataclass
class RunOutputs:
    """Tracks every file written to a run directory so the manifest stays exact."""

    directory: Path
    files: list[str] = field(default_factory=list)

    def path(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.directory / name

    def write_text(self, name: str, text: str) -> None:
        self.path(name).write_text(text)

    def write_json(self, name: str, payload) -> None:
        self.write_text(name, json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def write_manifest(self) -> None:
        names = sorted(set(self.files) | {MANIFEST_FILE})
        (self.directory / MANIFEST_FILE).write_text("\n".join(names) + "\n")


def _fmt(value: float) -> str:
    return repr(float(value))


class HistoryWriter:
    """Appends one row per epoch to the scalar and per-class history CSVs."""

    def __init__(self, outputs: RunOutputs, num_classes: int):
        self._scalar = outputs.path(HISTORY_FILE)
        self._per_class = outputs.path(PER_CLASS_FILE)
        k = range(num_classes)
        header = ["epoch"] + [f"lambda_{i}" for i in k] + [f"dbar_{i}" for i in k]
        self._write(self._scalar, HISTORY_COLUMNS, "w")
        self._write(self._per_class, header, "w")

    @staticmethod
    def _write(path: Path, row, mode: str = "a") -> None:
        with open(path, mode, newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(row)

    def __call__(self, rec: EpochRecord) -> None:
        self._write(self._scalar, [rec.epoch] + [_fmt(v) for v in (
            rec.train_loss, rec.val_accuracy, rec.val_ece, rec.mean_lambda, rec.mean_rho)])
        self._write(self._per_class, [rec.epoch] + [_fmt(v) for v in rec.per_class_lambda]
                    + [_fmt(v) for v in rec.per_class_mean_constraint])


def evaluate(val_logits, val_labels, test_logits, test_labels, config: ExperimentConfig) -> dict:
    """Pre- and post-temperature-scaling test metrics; T is fitted on validation ECE."""
    bins = config.evaluation.ece_bins
    test = PredictionSet.from_logits(test_logits, test_labels)
    metrics = {
        "accuracy": accuracy(test),
        "ece": ece(test, bins),
        "aece": aece(test, bins),
        "cwce": cwce(test, bins),
        "num_test": int(test.num_samples),
    }
    metrics["pre_ts"] = {"ece": metrics["ece"], "aece": metrics["aece"], "cwce": metrics["cwce"]}
    if len(val_labels):
        t, val_ece_post = temperature_search(val_logits, val_labels, config.evaluation.temperature_grid, bins)
        val = PredictionSet.from_logits(val_logits, val_labels)
        scaled = PredictionSet.from_logits(test_logits, test_labels, t)
        metrics["validation"] = {"accuracy": accuracy(val), "ece": ece(val, bins), "post_ts_ece": val_ece_post}
        metrics["post_ts"] = {"T": t, "ece": ece(scaled, bins), "aece": aece(scaled, bins),
                              "cwce": cwce(scaled, bins)}
    return metrics


def default_output_dir(config_path: Path, config: ExperimentConfig) -> Path:
    if config.output.dir:
        return Path(config.output.dir)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT)) / config_path.stem


def summary_line(metrics: dict) -> str:
    post = metrics.get("post_ts", {})
    post_ece = f"{post['ece']:.4f}" if "ece" in post else "-"
    temp = f"{post['T']:.1f}" if "T" in post else "-"
    return (f"acc={metrics['accuracy']:.4f} ece={metrics['ece']:.4f} aece={metrics['aece']:.4f} "
            f"post_ts_ece={post_ece} T={temp}")


def run_experiment(config: ExperimentConfig, out_dir) -> dict:
    """Generate data, train, evaluate and write every artefact to ``out_dir``.

    Raises ``OSError`` when the directory cannot be written and
    ``NumericalFailure`` when training diverges; in the latter case the
    partial history is kept and a ``FAILED`` marker is added.
    """
    data = build_dataset(config.dataset)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stale = [p.name for p in out.iterdir()]
    if stale:
        raise FileExistsError(f"output directory {out} is not empty ({', '.join(sorted(stale)[:3])} ...)")
    outputs = RunOutputs(out)
    outputs.write_text(CONFIG_FILE, serialize_config(config))

    history = HistoryWriter(outputs, data.train.num_classes)
    try:
        result = train(config.train_config(), data, config.model.hidden, on_epoch=history)
    except NumericalFailure as exc:
        epoch = getattr(exc, "epoch", None)
        outputs.write_text(FAILURE_FILE, f"numerical failure (epoch {epoch}): {exc}\n")
        outputs.write_manifest()
        raise

    metrics = evaluate(result.val_logits, data.validation.labels, result.test_logits, data.test.labels, config)
    metrics["loss"] = config.training.loss
    metrics["epochs"] = len(result.history)
    if result.history:
        last = result.history[-1]
        metrics["final_mean_lambda"] = last.mean_lambda
        metrics["final_mean_rho"] = last.mean_rho
    outputs.write_json(METRICS_FILE, metrics)

    reliability = bin_predictions(result.test, config.evaluation.reliability_bins, EQUAL_WIDTH).to_dict()
    reliability["split"] = "test"
    outputs.write_json(RELIABILITY_FILE, reliability)
    if config.output.save_checkpoint:
        save_network(result.network, outputs.path(CHECKPOINT_FILE))
    outputs.write_manifest()
    return metrics


# -- compare ---------------------------------------------------------------

COMPARE_COLUMNS = (
    # (header, path into metrics.json, higher is better or None for unranked)
    ("acc", ("accuracy",), True),
    ("ece", ("ece",), False),
    ("aece", ("aece",), False),
    ("cwce", ("cwce",), False),
    ("post_ts_ece", ("post_ts", "ece"), False),
    ("T", ("post_ts", "T"), None),
)
MISSING = "-"


def load_metrics(run_dir) -> dict:
    path = Path(run_dir) / METRICS_FILE
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise ReportError(f"{path}: metrics file not found") from None
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path}: malformed metrics file ({exc.msg}, line {exc.lineno})") from None
    except OSError as exc:
        raise ReportError(f"{path}: cannot read metrics file ({exc})") from None
    if not isinstance(payload, dict):
        raise ReportError(f"{path}: malformed metrics file (expected a JSON object)")
    return payload


def _lookup(metrics: dict, keys) -> Optional[float]:
    value = metrics
    for key in keys:
        if not isinstance(value, dict) or key not in value:
            return None
        value = value[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return None
    return float(value)


def _ranks(values: list[Optional[float]], higher_is_better: bool) -> dict[int, int]:
    """Map row index -> 1 (best) or 2 (second best); ties share the better rank."""
    present = sorted({v for v in values if v is not None}, reverse=higher_is_better)
    top = {v: r for r, v in enumerate(present[:2], start=1)}
    return {i: top[v] for i, v in enumerate(values) if v in top}


def compare(run_dirs: Sequence) -> tuple[str, str]:
    """Side-by-side table of run metrics as ``(text, csv_text)``.

    In the text table the best entry of each ranked column is wrapped in
    ``**`` and the second best in ``_``; absent values show as ``-``.
    """
    if not run_dirs:
        raise ValueError("compare needs at least one run directory")
    names = [Path(d).name or str(d) for d in run_dirs]
    rows = [load_metrics(d) for d in run_dirs]
    table = {h: [_lookup(m, keys) for m in rows] for h, keys, _ in COMPARE_COLUMNS}

    cells = [[name] for name in names]
    for header, _, higher in COMPARE_COLUMNS:
        ranks = _ranks(table[header], higher) if higher is not None and len(rows) > 1 else {}
        for i, v in enumerate(table[header]):
            if v is None:
                cells[i].append(MISSING)
                continue
            text = f"{v:.4f}" if header != "T" else f"{v:.2f}"
            if ranks.get(i) == 1:
                text = f"**{text}**"
            elif ranks.get(i) == 2:
                text = f"_{text}_"
            cells[i].append(text)

    headers = ["run"] + [h for h, _, _ in COMPARE_COLUMNS]
    widths = [max(len(r[j]) for r in [headers] + cells) for j in range(len(headers))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(headers)
    for i, name in enumerate(names):
        writer.writerow([name] + ["" if table[h][i] is None else _fmt(table[h][i]) for h in headers[1:]])
    return "\n".join(lines) + "\n", buf.getvalue()


# -- entry point -------------------------------------------------------------

def _load(config_arg: str, seed: Optional[int] = None, assignments: Sequence[str] = ()):
    path = resolve_config_path(config_arg)
    overrides = dict(parse_assignment(a) for a in assignments)
    if seed is not None:
        overrides["dataset.seed"] = seed
        overrides["training.seed"] = seed
    return path, parse_config(path, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cals", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate one experiment")
    run.add_argument("config", help=f"config file or preset name ({', '.join(list_presets())})")
    run.add_argument("--out", help=f"output directory (default: output.dir, else ${OUTPUT_ROOT_ENV}/<config name>)")
    run.add_argument("--seed", type=int, help="override both dataset.seed and training.seed")
    run.add_argument("--set", dest="assignments", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config key, e.g. --set training.loss=ce (repeatable)")

    cmp_ = sub.add_parser("compare", help="tabulate metrics of finished runs")
    cmp_.add_argument("run_dirs", nargs="+", metavar="dir")
    cmp_.add_argument("--csv", help="also write the table as CSV to this path")

    check = sub.add_parser("check-config", help="validate a config and print it with defaults filled in")
    check.add_argument("config")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "check-config":
            _, config = _load(args.config)
            sys.stdout.write(serialize_config(config))
        elif args.command == "run":
            path, config = _load(args.config, args.seed, args.assignments)
            out = Path(args.out) if args.out else default_output_dir(path, config)
            metrics = run_experiment(config, out)
            print(f"{out}: {summary_line(metrics)}")
        else:
            text, csv_text = compare(args.run_dirs)
            sys.stdout.write(text)
            if args.csv:
                Path(args.csv).write_text(csv_text)
    except (ConfigError, DataError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        where = f" at epoch {exc.epoch}, batch {exc.batch}" if isinstance(exc, TrainingFailure) else ""
        print(f"numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
