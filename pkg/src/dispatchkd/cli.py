"""Command-line front end: ``analyze``, ``distill``, ``ablate`` and ``report``.

Settings come from CLI flags, then an optional ``--config`` file of
``key = value`` lines, then built-in defaults. The effective settings are
echoed into every report.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import category_histogram, histogram_csv, trajectory_records
from .exceptions import DispatchError
from .selection import SelectionCriterion
from .spectral import StftConfig, Waveform, load_wav, stft
from .trainer import (
    STANDARD_SCENARIO,
    OracleTeacherConfig,
    ToyModel,
    TrainConfig,
    corrupted_region_error,
    make_sample,
    make_synthetic_dataset,
    kgs_reports,
    student_error,
    train,
)

logger = logging.getLogger("dispatchkd")

# option name -> (type, default); None default means "unset"
OPTIONS = {
    "seed": (int, None),
    "window_ms": (float, 32.0),
    "hop_ms": (float, 8.0),
    "patch_bins": (int, 20),
    "mssp_low": (int, None),
    "mssp_high": (int, None),
    "crossover_percentile": (float, 0.5),
    "crossover_fixed": (int, None),
    "kd_metric": (str, "mag-l2"),
    "se_metric": (str, "mag-l2"),
    "k_percent": (float, 80.0),
    "alpha": (float, 0.5),
    "criterion": (str, "kgs"),
    "steps": (int, STANDARD_SCENARIO["steps"]),
    "lr": (float, None),
    "checkpoint_interval": (int, 10),
    "delta_threshold": (float, 0.01),
    "samples": (int, STANDARD_SCENARIO["n_samples"]),
    "duration": (float, 1.0),
    "corruption_fraction": (float, STANDARD_SCENARIO["corruption_fraction"]),
    "corruption_gain": (float, STANDARD_SCENARIO["corruption_gain"]),
    "phase_weight": (float, 1.0),
}

MSSP_DEFAULTS = (10, 40)


class CliError(Exception):
    pass


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, keys may use dashes."""
    path = Path(path)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise CliError(f"{path}:{lineno}: unknown key {key!r}")
        typ = OPTIONS[key][0]
        try:
            out[key] = typ(value)
        except ValueError:
            raise CliError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def effective_settings(args) -> dict:
    settings = {k: default for k, (_, default) in OPTIONS.items()}
    if args.config:
        settings.update(read_config_file(args.config))
    for key in OPTIONS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_all(outputs: dict) -> None:
    """Write every report only after all of them have been rendered."""
    for path, text in outputs.items():
        atomic_write(path, text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def train_config(s: dict, **overrides) -> TrainConfig:
    mssp = None
    if s["mssp_low"] is not None or s["mssp_high"] is not None:
        mssp = (s["mssp_low"] or MSSP_DEFAULTS[0], s["mssp_high"] or MSSP_DEFAULTS[1])
    kw = dict(
        alpha=s["alpha"],
        k_percent=s["k_percent"],
        learning_rate=s["lr"],
        steps=s["steps"],
        checkpoint_interval=s["checkpoint_interval"],
        kd_metric=s["kd_metric"],
        se_metric=s["se_metric"],
        criterion=s["criterion"],
        patch_bins=s["patch_bins"],
        mssp=mssp,
        phase_weight=s["phase_weight"],
    )
    kw.update(overrides)
    return TrainConfig(**kw)


def build_dataset(s: dict, args):
    stft_cfg = StftConfig(s["window_ms"], s["hop_ms"])
    if args.clean or args.noisy:
        if len(args.clean or []) != len(args.noisy or []):
            raise CliError("--clean and --noisy need the same number of files")
        for p in list(args.clean) + list(args.noisy):
            if not Path(p).exists():
                raise CliError(f"input file not found: {p}")
        seeds = np.random.SeedSequence(s["seed"]).generate_state(len(args.clean))
        dataset = []
        for i, (cp, np_) in enumerate(zip(args.clean, args.noisy)):
            cw, nw = load_wav(cp), load_wav(np_)
            n = min(len(cw), len(nw))
            clean = stft(Waveform(cw.samples[:n], cw.sample_rate), stft_cfg)
            noisy = stft(Waveform(nw.samples[:n], nw.sample_rate), stft_cfg)
            tcfg = OracleTeacherConfig(s["corruption_fraction"], s["corruption_gain"], int(seeds[i]))
            dataset.append(make_sample(clean, noisy, tcfg, s["crossover_fixed"], s["crossover_percentile"]))
        return dataset
    return make_synthetic_dataset(
        s["samples"], s["seed"], stft_cfg, s["duration"],
        corruption_fraction=s["corruption_fraction"],
        corruption_gain=s["corruption_gain"],
        crossover_percentile=s["crossover_percentile"],
        crossover_fixed=s["crossover_fixed"],
    )


def _require_seed(s):
    if s["seed"] is None:
        raise CliError("--seed is required for experiment subcommands")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_analyze(args, s) -> dict:
    _require_seed(s)
    dataset = build_dataset(s, args)
    cfg = train_config(s)
    model, series, report = train(ToyModel.identity(dataset[0].clean.bins), dataset, cfg, s["delta_threshold"])
    if not series:
        raise CliError("analysis needs at least two checkpoints (steps >= checkpoint_interval)")
    out = Path(args.out)
    lines = []
    for i, matrix in report.trajectories.items():
        lines.extend(trajectory_records(matrix, report.checkpoint_steps, sample=i))
    hists = {i: category_histogram(ser) for i, ser in series.items()}
    header = [f"config: {json.dumps(s, sort_keys=True)}"]
    summary = {
        "command": "analyze",
        "version": __version__,
        "settings": s,
        "train": report.to_dict(),
        "histograms": {
            str(i): {c.value: h.fractions[c] for c in h.fractions} for i, h in hists.items()
        },
    }
    return {
        out / "trajectories.jsonl": "\n".join(lines) + "\n",
        out / "histogram.csv": histogram_csv(hists, header),
        out / "analyze.json": _dumps(summary),
    }


def cmd_distill(args, s) -> dict:
    _require_seed(s)
    dataset = build_dataset(s, args)
    cfg = train_config(s)
    model, _, report = train(ToyModel.identity(dataset[0].clean.bins), dataset, cfg, s["delta_threshold"])
    out = Path(args.out)
    body = report.to_dict()
    body.update({
        "command": "distill",
        "version": __version__,
        "settings": s,
        "final_corrupted_error": corrupted_region_error(model, dataset),
        "final_mean_error": float(np.mean([student_error(model, x).mean() for x in dataset])),
    })
    # selection state of the trained student on the first sample's first distillation grid
    kgs = kgs_reports(model, dataset[0], cfg)[0]
    return {
        out / "report.json": _dumps(body),
        out / "checkpoint.json": json.dumps(model.gains.tolist()) + "\n",
        out / "kgs_report.json": kgs.to_json(sort_keys=True) + "\n",
    }


# initial_loss is the enhancement loss of the shared initial student, so it
# does not depend on the criterion; final_loss is the total objective
ABLATION_COLUMNS = ["criterion", "initial_loss", "final_loss", "final_error", "corrupted_error"]


def cmd_ablate(args, s) -> dict:
    _require_seed(s)
    dataset = build_dataset(s, args)
    buf = io.StringIO()
    buf.write(f"# config: {json.dumps(s, sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ABLATION_COLUMNS)
    F = dataset[0].clean.bins
    for crit in SelectionCriterion:
        cfg = train_config(s, criterion=crit)
        model, _, report = train(ToyModel.identity(F), dataset, cfg, s["delta_threshold"])
        writer.writerow([
            crit.value,
            repr(report.records[0]["loss_se"]),
            repr(report.records[-1]["loss_total"]),
            repr(float(np.mean([student_error(model, x).mean() for x in dataset]))),
            repr(corrupted_region_error(model, dataset)),
        ])
    return {Path(args.out) / "ablation.csv": buf.getvalue()}


def read_commented_csv(path: Path):
    text = "".join(l for l in path.read_text().splitlines(True) if not l.startswith("#"))
    return list(csv.DictReader(io.StringIO(text)))


def cmd_report(args, s) -> dict:
    """Summarize an output directory as plain text on stdout."""
    out = Path(args.out)
    if not out.is_dir():
        raise CliError(f"output directory not found: {out}")
    lines = []
    if (out / "histogram.csv").exists():
        lines.append("patch categories (per sample):")
        for row in read_commented_csv(out / "histogram.csv"):
            lines.append(f"  sample {row['sample']:>3} {row['category']:<12} {float(row['fraction']):7.3%}")
    if (out / "report.json").exists():
        rep = json.loads((out / "report.json").read_text())
        first, last = rep["records"][0], rep["records"][-1]
        lines.append(f"distill: loss {first['loss_total']:.6g} -> {last['loss_total']:.6g} "
                     f"over {last['step']} steps, corrupted-region error {rep['final_corrupted_error']:.6g}")
    if (out / "ablation.csv").exists():
        lines.append("ablation (corrupted-region error):")
        rows = read_commented_csv(out / "ablation.csv")
        best = min(rows, key=lambda r: float(r["corrupted_error"]))
        for row in rows:
            mark = " *" if row is best else ""
            lines.append(f"  {row['criterion']:<10} {float(row['corrupted_error']):.6g}{mark}")
    if not lines:
        raise CliError(f"no reports found in {out}")
    sys.stdout.write("\n".join(lines) + "\n")
    return {}


COMMANDS = {"analyze": cmd_analyze, "distill": cmd_distill, "ablate": cmd_ablate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dispatchkd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("-v", "--verbose", action="store_true")

    exp = argparse.ArgumentParser(add_help=False)
    g = exp.add_argument_group("experiment")
    g.add_argument("--seed", type=int)
    g.add_argument("--synthetic", action="store_true", help="use generated mixtures (default without --clean/--noisy)")
    g.add_argument("--clean", nargs="+", metavar="WAV")
    g.add_argument("--noisy", nargs="+", metavar="WAV")
    g.add_argument("--samples", type=int, help="synthetic mixtures (default 8)")
    g.add_argument("--duration", type=float, help="synthetic mixture length in seconds (default 1)")
    g.add_argument("--window-ms", type=float, help="STFT window (default 32)")
    g.add_argument("--hop-ms", type=float, help="STFT hop (default 8)")
    g.add_argument("--patch-bins", type=int, help="bins per patch (default 20)")
    g.add_argument("--mssp-low", type=int, help="low-band patch bins; enables multi-scale patching (default 10)")
    g.add_argument("--mssp-high", type=int, help="high-band patch bins; enables multi-scale patching (default 40)")
    g.add_argument("--crossover-percentile", type=float, help="energy fraction below the crossover (default 0.5)")
    g.add_argument("--crossover-fixed", type=int, metavar="BIN", help="fixed crossover bin for every frame")
    g.add_argument("--kd-metric", choices=["mag-l1", "mag-l2", "complex-l2", "dfkd"])
    g.add_argument("--se-metric", choices=["mag-l1", "mag-l2", "complex-l2", "dfkd"])
    g.add_argument("--k-percent", type=float, help="percent of patches distilled (default 80)")
    g.add_argument("--alpha", type=float, help="enhancement-loss weight (default 0.5)")
    g.add_argument("--criterion", choices=[c.value for c in SelectionCriterion])
    g.add_argument("--steps", type=int)
    g.add_argument("--lr", type=float, help="learning rate (default: from the loss curvature bound)")
    g.add_argument("--checkpoint-interval", type=int)
    g.add_argument("--delta-threshold", type=float, help="convergence threshold on the fitted change (default 0.01)")
    g.add_argument("--corruption-fraction", type=float)
    g.add_argument("--corruption-gain", type=float)
    g.add_argument("--phase-weight", type=float)

    helps = {
        "analyze": "classify per-patch error trajectories during distillation",
        "distill": "train the toy student with selective distillation",
        "ablate": "compare the five patch-selection criteria",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common, exp], help=text)
    sub.add_parser("report", parents=[common], help="summarize an output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        settings = effective_settings(args)
        outputs = COMMANDS[args.command](args, settings)
        write_all(outputs)
    except (CliError, DispatchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in outputs:
        logger.info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
