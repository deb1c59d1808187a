"""Command-line entry point: ``fusiongru gen|train|eval|predict|gradcheck``.

Exit codes: 0 success, 1 validation failure, 2 usage/config error,
3 data or parse error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import synthdata
from .config import TrainConfig, load_train_config, parse_key_values
from .errors import ConfigError, DatasetParseError
from .training import BASELINES, Checkpoint, baseline_predict, evaluate_predictions, predict, step_errors, train

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3

log = logging.getLogger("fusiongru")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def scenario_from_file(path):
    with open(path, encoding="utf-8") as fh:
        pairs = parse_key_values(fh.read(), str(path))
    fields = {f.name: f for f in dataclasses.fields(synthdata.ScenarioConfig)}
    values = {}
    for key, raw in pairs.items():
        if key not in fields:
            raise ConfigError(f"unknown scene spec key {key!r}", [key])
        kind = type(getattr(synthdata.ScenarioConfig(), key))
        try:
            values[key] = kind(float(raw)) if kind is int else kind(raw)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {raw!r}", [key]) from None
    cfg = synthdata.ScenarioConfig(**values)
    cfg.validate()
    return cfg


def _load_samples(path, config):
    records = synthdata.load(path)
    if not records:
        raise DatasetParseError(f"{path} holds no records")
    return synthdata.build_sample_set(records, config.T_obs, config.N)


def _figure_path(base, suffix):
    base = Path(base)
    return base.with_name(f"{base.stem}_{suffix}.png")


def cmd_gen(args):
    cfg = scenario_from_file(args.spec) if args.spec else synthdata.ScenarioConfig()
    records = synthdata.generate_dataset(cfg, args.scenes, args.seed)
    synthdata.save(args.out, records)
    frames = sum(len(r.frames) for r in records)
    print(json.dumps({"dataset": str(args.out), "scenes": len(records), "frames": frames}))
    return EXIT_OK


def cmd_train(args):
    config = load_train_config(args.config)[0] if args.config else TrainConfig()
    train_set = _load_samples(args.data, config)
    val_set = _load_samples(args.val, config)

    def report(entry):
        print(json.dumps(entry), flush=True)

    checkpoint = train(config, train_set, val_set, on_epoch=report)
    checkpoint.save(args.out)
    if not args.no_figures and checkpoint.history:
        from .plotting import plot_loss_curve

        plot_loss_curve(checkpoint.history, _figure_path(args.out, "loss"))
    print(json.dumps({"checkpoint": str(args.out), "best_epoch": checkpoint.epoch, "best_val_loss": checkpoint.best_val_loss}))
    return EXIT_OK


def _parse_horizons(text):
    try:
        values = [float(h) for h in text.split(",") if h.strip()]
    except ValueError:
        raise ConfigError(f"--horizons must be comma-separated seconds, got {text!r}", ["horizons"]) from None
    if not values or any(h <= 0 for h in values):
        raise ConfigError("--horizons needs positive values", ["horizons"])
    return values


def _format_table(rows):
    header = f"{'predictor':<18}{'horizon':>8}{'ADE px':>10}{'FDE px':>10}{'AIoU':>8}{'FIoU':>8}{'samples':>9}"
    lines = [header, "-" * len(header)]
    for name, reports in rows.items():
        for r in reports:
            lines.append(
                f"{name:<18}{r.horizon_seconds:>7.2f}s{r.ade:>10.2f}{r.fde:>10.2f}{r.aiou:>8.3f}{r.fiou:>8.3f}{r.samples:>9d}"
            )
    return "\n".join(lines)


def _checked_samples(checkpoint, path):
    config = checkpoint.config
    samples = _load_samples(path, config)
    mismatched = []
    if samples.D != config.D:
        mismatched.append("D")
    if checkpoint.data_fps is not None and samples.fps != checkpoint.data_fps:
        mismatched.append("fps")
    if mismatched:
        raise ConfigError(f"checkpoint and dataset disagree on {', '.join(mismatched)}", mismatched)
    return samples


def cmd_eval(args):
    checkpoint = Checkpoint.load(args.checkpoint)
    samples = _checked_samples(checkpoint, args.data)
    horizons = _parse_horizons(args.horizons)
    _, final = predict(checkpoint.params, checkpoint.config, samples)
    predictions = {"model": final}
    for kind in BASELINES:
        predictions[kind] = baseline_predict(kind, samples.boxes, checkpoint.config.N)
    rows = {name: evaluate_predictions(p, samples, horizons) for name, p in predictions.items()}
    document = {
        "checkpoint": str(args.checkpoint),
        "data": str(args.data),
        "fps": samples.fps,
        "metrics": [r.as_dict() for r in rows["model"]],
        "baselines": {k: [r.as_dict() for r in rows[k]] for k in BASELINES},
    }
    if args.report:
        Path(args.report).write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
        if not args.no_figures:
            from .plotting import plot_step_errors

            curves = {name: step_errors(p, samples) for name, p in predictions.items()}
            plot_step_errors(curves, samples.fps, _figure_path(args.report, "errors"))
    print(_format_table(rows))
    return EXIT_OK


PREDICT_COLUMNS = [
    "sample_id",
    "agent_id",
    "step",
    "pred_x",
    "pred_y",
    "pred_w",
    "pred_h",
    "truth_x",
    "truth_y",
    "truth_w",
    "truth_h",
]


def cmd_predict(args):
    checkpoint = Checkpoint.load(args.checkpoint)
    samples = _checked_samples(checkpoint, args.data)
    _, final = predict(checkpoint.params, checkpoint.config, samples)
    scale = np.concatenate([samples.frame_size, samples.frame_size], axis=-1)[:, None, :]
    pred_px, truth_px = final * scale, samples.truth * scale
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICT_COLUMNS)
        for i in range(len(samples)):
            for j in range(pred_px.shape[1]):
                writer.writerow(
                    [i, int(samples.agent_id[i]), j + 1]
                    + [repr(float(v)) for v in pred_px[i, j]]
                    + [repr(float(v)) for v in truth_px[i, j]]
                )
    if not args.no_figures and len(samples):
        from .plotting import plot_overlays

        rng = np.random.default_rng(0)
        picks = sorted(rng.choice(len(samples), size=min(6, len(samples)), replace=False))
        panels = [
            {
                "past": samples.boxes[i] * scale[i],
                "truth": truth_px[i],
                "pred": pred_px[i],
                "title": f"sample {i} / agent {int(samples.agent_id[i])}",
            }
            for i in picks
        ]
        plot_overlays(panels, tuple(samples.frame_size[picks[0]]), _figure_path(args.out, "overlay"))
    print(json.dumps({"predictions": str(args.out), "samples": len(samples), "steps": int(pred_px.shape[1])}))
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import gradient_check

    if args.config:
        config, extra = load_train_config(args.config, extra=("agents",))
    else:
        config, extra = TrainConfig(d=8, k=4, D=16, N=4, T_obs=5), {}
    agents = int(extra.get("agents", 2))
    result = gradient_check(config, seed=args.seed, agents=agents)
    for name, worst in result.worst.items():
        print(f"{name:<16} worst relative error {worst:.3e}")
    for name, idx, analytic, numeric, err in result.failures[:20]:
        print(f"FAIL {name}{list(idx)}: analytic {analytic:.6e} numeric {numeric:.6e} error {err:.3e}")
    status = "PASS" if result.passed else "FAIL"
    print(f"{status}: {result.checked - len(result.failures)}/{result.checked} entries within tolerance in {result.seconds:.1f}s")
    return EXIT_OK if result.passed else EXIT_FAIL


def build_parser():
    parser = _Parser(prog="fusiongru", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="synthesize a dataset")
    p.add_argument("--spec", help="scene distribution, key=value file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=100)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--horizons", default="0.5,1.0")
    p.add_argument("--report")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="per-sample boxes in pixels (CSV)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetParseError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
