"""Command-line entry points.

Verbs: ``run`` (experiment grid from a JSON config), ``pool gen`` /
``pool inspect``, ``estimate`` (one-shot replay of a history file), and
``serve`` (HTTP labeling service).  The config file schema is documented in
the README; every value has a CLI-independent default so configs stay small.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np


def _cmd_run(args) -> int:
    from .harness import ExperimentConfig, export_results, run_experiment
    with open(args.config, encoding="utf-8") as fh:
        doc = json.load(fh)
    if args.seed is not None:
        doc["base_seed"] = args.seed
    if args.workers is not None:
        doc["workers"] = args.workers
    if args.out is not None:
        doc["out_dir"] = args.out
    config = ExperimentConfig.from_dict(doc)
    results = run_experiment(config)
    paths = export_results(results, config.out_dir)
    for p in paths:
        print(p)
    return 0


def _cmd_pool_gen(args) -> int:
    from .harness import SyntheticPoolSpec, generate_synthetic_pool
    from .pool import save_pool_csv
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            spec = SyntheticPoolSpec.from_dict(json.load(fh))
    else:
        spec = SyntheticPoolSpec(M=args.m, imbalance=args.imbalance,
                                 quality=args.quality,
                                 seed=args.seed if args.seed is not None else 0)
    pool = generate_synthetic_pool(spec)
    save_pool_csv(pool, args.out)
    print(args.out)
    return 0


def _cmd_pool_inspect(args) -> int:
    from .pool import load_pool_csv
    pool = load_pool_csv(args.pool)
    info = {
        "name": pool.name,
        "size": pool.size,
        "n_classes": pool.n_classes,
        "content_hash": pool.content_hash(),
        "has_labels": pool.true_labels is not None,
        "score_min": float(pool.raw_scores.min()),
        "score_max": float(pool.raw_scores.max()),
        "score_mean": float(pool.raw_scores.mean()),
    }
    if pool.true_labels is not None:
        counts = np.bincount(pool.true_labels, minlength=pool.n_classes)
        info["label_counts"] = counts.tolist()
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


def _cmd_estimate(args) -> int:
    from .measures import measure_from_spec
    from .pool import load_pool_csv
    from .sampler import RunHistory, estimate_G
    with open(args.history, encoding="utf-8") as fh:
        history = RunHistory.from_jsonl(fh.read())
    pool = load_pool_csv(args.pool)
    spec = json.loads(args.measure) if args.measure else history.measure_spec
    measure = measure_from_spec(spec, pool.predictions())
    report = estimate_G(history, measure, alpha=args.alpha)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn
    from .pool import load_pool_csv
    from .service import ServiceState, create_app
    state = ServiceState(sessions_dir=args.sessions_dir)
    for spec in args.pool or []:
        if "=" in spec:
            pid, path = spec.split("=", 1)
        else:
            pid, path = None, spec
        pool = load_pool_csv(path)
        name = state.add_pool(pool, pid)
        print(f"pool {name!r}: {pool.size} items, {pool.n_classes} classes")
    n = state.load_sessions()
    if n:
        print(f"restored {n} session(s)")
    app = create_app(state, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aiseval",
                                     description="label-efficient model evaluation")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run an experiment grid from a config file")
    p_run.add_argument("--config", required=True, help="JSON experiment config")
    p_run.add_argument("--seed", type=int, default=None, help="override base_seed")
    p_run.add_argument("--workers", type=int, default=None, help="concurrent repeats")
    p_run.add_argument("--out", default=None, help="override output directory")
    p_run.set_defaults(func=_cmd_run)

    p_pool = sub.add_parser("pool", help="pool utilities")
    pool_sub = p_pool.add_subparsers(dest="pool_verb", required=True)

    p_gen = pool_sub.add_parser("gen", help="generate a synthetic pool CSV")
    p_gen.add_argument("--config", default=None, help="JSON synthetic pool spec")
    p_gen.add_argument("--m", type=int, default=10000)
    p_gen.add_argument("--imbalance", type=float, default=1.0)
    p_gen.add_argument("--quality", type=float, default=2.0)
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--out", required=True, help="output CSV path")
    p_gen.set_defaults(func=_cmd_pool_gen)

    p_ins = pool_sub.add_parser("inspect", help="summarize a pool file")
    p_ins.add_argument("pool", help="pool CSV path")
    p_ins.set_defaults(func=_cmd_pool_inspect)

    p_est = sub.add_parser("estimate", help="replay an estimate from a history file")
    p_est.add_argument("--history", required=True, help="JSON-lines run history")
    p_est.add_argument("--pool", required=True, help="pool CSV the history refers to")
    p_est.add_argument("--measure", default=None,
                       help="measure spec JSON (default: the history's own measure)")
    p_est.add_argument("--alpha", type=float, default=0.05)
    p_est.set_defaults(func=_cmd_estimate)

    p_srv = sub.add_parser("serve", help="start the labeling service")
    p_srv.add_argument("--pool", action="append", default=[],
                       help="pool CSV path, optionally as id=path (repeatable)")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8765)
    p_srv.add_argument("--sessions-dir", default=None,
                       help="directory for persisted session documents")
    p_srv.add_argument("--static", default=None,
                       help="directory of console static files to serve at /")
    p_srv.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
