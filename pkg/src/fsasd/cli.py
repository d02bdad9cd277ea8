"""Command-line entry point: ``fsasd {synth,train,score,evaluate,report}``.

Exit codes: 0 success, 1 runtime or data error, 2 usage or configuration
error, 3 test data carries no labels (only ``score`` is possible).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config, pipeline
from .datasets import scan_corpus
from .errors import AsdError, InvalidConfig, UnlabeledData
from .metrics import read_report_csv
from .synthgen import synth_corpus

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_UNLABELED = 0, 1, 2, 3

logger = logging.getLogger("fsasd")


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise InvalidConfig(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _values(args, flag_map: dict[str, str]) -> dict[str, str]:
    values = config.read_flat(args.config) if args.config else {}
    values.update(_overrides(args.set))
    for attr, key in flag_map.items():
        v = getattr(args, attr, None)
        if v is not None:
            values[key] = str(v)
    return values


_RUN_FLAGS = {"corpus": "corpus", "out": "out", "mode": "mode", "seeds": "seeds", "epochs": "epochs", "p": "p"}


def _run_config(args) -> config.RunConfig:
    cfg = config.run_config(_values(args, _RUN_FLAGS), args.preset)
    if cfg.corpus is None or cfg.out is None:
        raise InvalidConfig("--corpus and --out are required (flag or config file)")
    return cfg


def cmd_synth(args) -> int:
    values = _values(args, {"seed": "seed", "out": "out", "burst_gain_db": "burst_gain_db"})
    cfg = config.synth_config(values, args.preset)
    if cfg.root is None:
        raise InvalidConfig("--out is required")
    manifest = synth_corpus(cfg, cfg.root, workers=args.workers)
    for line in manifest.summary_lines():
        print(line)
    return EXIT_OK


def _groups(manifest):
    return sorted(manifest.groups)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    manifest = scan_corpus(cfg.corpus)
    cache = pipeline.FeatureCache(cfg.features)
    for seed in cfg.seeds:
        run_dir = pipeline.seed_dir(cfg.out, seed)
        run_dir.mkdir(parents=True, exist_ok=True)
        for group in _groups(manifest):
            try:
                curve = pipeline.train_section(manifest, group, cfg, seed, run_dir, cache)
            except AsdError as exc:
                raise type(exc)(f"{group[0]} section_{group[1]:02d}: {exc}") from None
            print(f"seed {seed} {group[0]} section_{group[1]:02d}: loss {curve[0]:.6g} -> {curve[-1]:.6g}")
        (run_dir / "mode.txt").write_text(cfg.mode + "\n")
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = _run_config(args)
    manifest = scan_corpus(cfg.corpus)
    cache = pipeline.FeatureCache(cfg.features)
    for seed in cfg.seeds:
        run_dir = pipeline.seed_dir(cfg.out, seed)
        pipeline.check_mode(run_dir, cfg.mode)
        for group in _groups(manifest):
            score_file, _ = pipeline.score_section(manifest, group, cfg, run_dir, cache)
            print(f"seed {seed}: wrote {score_file}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    manifest = scan_corpus(cfg.corpus)
    reports = []
    for seed in cfg.seeds:
        run_dir = pipeline.seed_dir(cfg.out, seed)
        report = pipeline.evaluate_run(manifest, cfg, run_dir)
        reports.append(report)
        print(f"seed {seed}: official_score {report.official_score:.6f}")
    rows = pipeline.write_aggregate(reports, Path(cfg.out) / "aggregate.csv")
    omega = next(mean for key, metric, mean, _ in rows if metric == "official_score")
    print(f"official_score,{omega!r}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    runs = sorted(out.glob("seed_*/report.csv"))
    if not runs:
        raise AsdError(f"{out}: no evaluation reports found (run 'evaluate' first)")
    reports = [read_report_csv(p) for p in runs]
    rows = pipeline.write_aggregate(reports, out / "aggregate.csv")
    table: dict[str, dict[str, tuple[float, float]]] = {}
    for key, metric, mean, std in rows:
        table.setdefault(key, {})[metric] = (mean, std)

    def cell(v):
        mean, std = v
        return f"{100 * mean:6.2f}" + ("" if std != std else f" +/- {100 * std:5.2f}")

    print(f"{len(reports)} run(s) from {out}")
    print(f"{'machine/section':<24} {'AUC source [%]':>17} {'AUC target [%]':>17} {'pAUC [%]':>17}")
    for key in table:
        if key == "all":
            continue
        t = table[key]
        print(f"{key:<24} {cell(t['auc_source']):>17} {cell(t['auc_target']):>17} {cell(t['pauc']):>17}")
    print(f"{'official score':<24} {cell(table['all']['official_score']):>17}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fsasd", description="First-shot anomalous sound detection baseline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--preset", choices=sorted(config.RUN_PRESETS), default="mini")
        p.add_argument("--config", type=Path, help="flat 'key = value' file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    p = sub.add_parser("synth", help="write a synthetic corpus")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--burst-gain-db", type=float, dest="burst_gain_db")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_synth, need_out=True)

    for name, func, helptext in (("train", cmd_train, "train one model per machine/section"),
                                 ("score", cmd_score, "write submission CSVs"),
                                 ("evaluate", cmd_evaluate, "AUC/pAUC/official score per seed")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--corpus", type=Path)
        p.add_argument("--out", type=Path, help="run directory")
        p.add_argument("--mode", choices=config.MODES)
        p.add_argument("--seeds", help="comma-separated training seeds")
        p.add_argument("--epochs", type=int)
        p.add_argument("--p", type=float, help="FPR bound for pAUC")
        p.set_defaults(func=func, need_out=False)

    p = sub.add_parser("report", help="summarize evaluated runs (mean +/- std)")
    p.add_argument("--out", type=Path, required=True, help="run directory")
    p.set_defaults(func=cmd_report, need_out=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.need_out and args.out is None and not args.config:
        parser.error("the following arguments are required: --out")
    try:
        return args.func(args)
    except InvalidConfig as exc:
        print(f"fsasd: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnlabeledData as exc:
        print(f"fsasd: {exc}", file=sys.stderr)
        return EXIT_UNLABELED
    except (AsdError, OSError) as exc:
        print(f"fsasd: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
