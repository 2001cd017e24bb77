"""``inti-lab`` command line: gen, train, eval, flops, viz.

Every command prints one JSON document on stdout. Exit code 0 on success,
2 on a configuration problem, 3 on a numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .compress import StageConfig
from .cost import PRESETS, format_table, report_table, schedule_macs, table_rows
from .data import ClipDataset, generate_moving_shapes
from .errors import ConfigError, ContractError, NumericError, ShapeError
from .train import ExperimentConfig, evaluate, load_model, train
from .viz import export_weight_heatmaps
from .vit import ViTConfig

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def cmd_gen(args) -> dict:
    out = Path(args.out)
    summary = {}
    for split, n in (("train", args.train_size), ("test", args.test_size)):
        ds = generate_moving_shapes(args.seed, n, args.frames, args.size, args.num_classes, split)
        ds.save(out / split)
        summary[split] = {"path": str(out / split), "clips": len(ds)}
    return {"seed": args.seed, "num_classes": args.num_classes, **summary}


def cmd_train(args) -> dict:
    cfg = ExperimentConfig.load(args.config)
    train_set = test_set = None
    if args.data:
        train_set, test_set = _load_splits(args.data)
    result = train(cfg, train_set, test_set, out_dir=args.out)
    return {"checkpoint": str(args.out), "final": result.final, "history": result.history}


def _load_splits(directory) -> tuple[ClipDataset, ClipDataset]:
    d = Path(directory)
    return ClipDataset.load(d / "train"), ClipDataset.load(d / "test")


def _load_eval_set(directory) -> ClipDataset:
    d = Path(directory)
    return ClipDataset.load(d / "test" if (d / "test").is_dir() else d)


def cmd_eval(args) -> dict:
    model, _ = load_model(args.ckpt)
    ds = _load_eval_set(args.data)
    return {"accuracy": evaluate(model, ds, workers=args.workers), "clips": len(ds), "data": str(args.data)}


def _flops_inputs(raw: dict) -> tuple[ViTConfig, int, tuple[StageConfig, ...]]:
    if "preset" in raw:
        unknown = set(raw) - {"preset", "frames", "stages"}
        if unknown:
            raise ConfigError(f"unknown flops keys: {sorted(unknown)}")
        if raw["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {raw['preset']!r}; choose from {sorted(PRESETS)}")
        stages = tuple(StageConfig.from_dict(s) for s in raw.get("stages", []))
        return PRESETS[raw["preset"]], int(raw.get("frames", 16)), stages
    cfg = ExperimentConfig.from_dict(raw)
    return cfg.model, cfg.frames, cfg.stages


def cmd_flops(args) -> dict:
    if args.table:
        rows = table_rows()
        print(format_table(rows), file=sys.stderr)
        return {"rows": rows}
    if not args.config:
        raise ConfigError("flops needs --config FILE or --table")
    model, frames, stages = _flops_inputs(_read_json(args.config))
    report = schedule_macs(model, frames, stages)
    print(report_table(report), file=sys.stderr)
    return report.to_dict()


def cmd_viz(args) -> dict:
    model, cfg = load_model(args.ckpt)
    if args.data:
        ds = _load_eval_set(args.data)
    else:
        d = cfg.data
        ds = generate_moving_shapes(d.seed, d.test_size, cfg.frames, cfg.model.image_size, d.num_classes,
                                    "test", d.noise)
    if not 0 <= args.clip < len(ds):
        raise ConfigError(f"clip index {args.clip} outside [0, {len(ds)})")
    out = export_weight_heatmaps(model, ds.clips[args.clip], args.out)
    return {"csv": str(out["csv"]), "maps": [str(p) for p in out["maps"]],
            "reconstructions": [str(p) for p in out["reconstructions"]], "label": int(ds.labels[args.clip])}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inti-lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a moving-shapes dataset (train/ and test/ splits)")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--train-size", type=int, default=256)
    g.add_argument("--test-size", type=int, default=256)
    g.add_argument("--frames", type=int, default=8)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--num-classes", type=int, default=4)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train from a JSON experiment config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--data", help="dataset directory from `gen`; default: generate from the config")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="top-1 accuracy of a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("flops", help="analytic MAC report for a config")
    f.add_argument("--config")
    f.add_argument("--table", action="store_true", help="naive and InTI rows for the 224px presets")
    f.set_defaults(func=cmd_flops)

    v = sub.add_parser("viz", help="export cumulative fusion-weight maps for one clip")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--clip", type=int, required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--data", help="dataset directory; default: regenerate the config's test split")
    v.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        _emit(args.func(args))
    except NumericError as exc:
        print(f"inti-lab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ShapeError, ContractError, FileNotFoundError) as exc:
        print(f"inti-lab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
