"""Command line entry points: perturb, pipeline, export, serve, eval."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def _load_config(path: "str | None") -> dict:
    if path is None:
        return {}
    obj = json.loads(Path(path).read_text())
    if not isinstance(obj, dict):
        raise SystemExit(f"config file {path} must hold a JSON object")
    return obj


def _resolve(cli_value, config: dict, key: str, default):
    """CLI flag beats config file beats default; flags left at None defer."""
    if cli_value is not None:
        return cli_value
    if key in config:
        return config[key]
    return default


def _parse_classes(text: "str | None") -> "frozenset[int] | None":
    if text is None or text == "":
        return None
    return frozenset(int(tok) for tok in text.split(","))


def _parse_group(text: str):
    from .pipeline import ClassGroup
    try:
        name, rest = text.split("=", 1)
        classes, quota = rest.rsplit(":", 1)
        return ClassGroup(name=name, classes=frozenset(
            int(tok) for tok in classes.split(",")), quota=int(quota))
    except ValueError:
        raise SystemExit(f"bad --group {text!r}; expected name=1,2,3:75")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segaudit",
        description="Label-error detection for semantic segmentation datasets.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("perturb", help="drop ground-truth components to build "
                                       "a benchmark with known label errors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--p-hat", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--size-min", type=int, default=None)
    p.add_argument("--size-max", type=int, default=None)
    p.add_argument("--eligible-classes", default=None,
                   help="comma-separated class ids; default all non-void")
    p.add_argument("--config", default=None, help="JSON file with defaults")

    p = sub.add_parser("pipeline", help="train the meta classifier and rank "
                                        "label-error candidates")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--split-mode", default=None,
                   help="half | kfold:K | manifest")
    p.add_argument("--registry", default=None,
                   help="registry JSONL enabling evaluation against known errors")
    p.add_argument("--balance-classes", action="store_true", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--l2", type=float, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("export", help="write the top-n candidates with crops "
                                      "as a review bundle")
    p.add_argument("--candidates", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--group", action="append", default=None,
                   metavar="NAME=CLASSES:QUOTA",
                   help="e.g. common=1,2,3:75; repeatable, quotas must sum to n")
    p.add_argument("--config", default=None)

    p = sub.add_parser("serve", help="host the review bundle over HTTP")
    p.add_argument("--bundle", required=True)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default=None)
    p.add_argument("--reviewer", default=None)
    p.add_argument("--verdicts", default=None,
                   help="verdict JSONL path; default <bundle>/verdicts.jsonl")
    p.add_argument("--static", default=None,
                   help="directory with a built browser UI to serve at /")
    p.add_argument("--config", default=None)

    p = sub.add_parser("eval", help="score a candidates file against a registry")
    p.add_argument("--candidates", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--t", type=float, default=None,
                   help="review threshold; default sweeps for best F1")
    p.add_argument("--out", default=None, help="optional report JSON path")
    p.add_argument("--config", default=None)
    return parser


def _cmd_perturb(args) -> int:
    from .perturb import PerturbConfig
    from .pipeline import cmd_perturb

    config = _load_config(args.config)
    cfg = PerturbConfig(
        p_hat=_resolve(args.p_hat, config, "p_hat", 0.5),
        size_min=_resolve(args.size_min, config, "size_min", 500),
        size_max=_resolve(args.size_max, config, "size_max", 10000),
        eligible_classes=_parse_classes(
            _resolve(args.eligible_classes, config, "eligible_classes", None)),
        seed=_resolve(args.seed, config, "seed", 0))
    manifest_path = cmd_perturb(args.manifest, cfg, args.out)
    echo = {"p_hat": cfg.p_hat, "size_min": cfg.size_min,
            "size_max": cfg.size_max,
            "eligible_classes": sorted(cfg.eligible_classes)
            if cfg.eligible_classes is not None else None,
            "seed": cfg.seed}
    (Path(args.out) / "perturb_config.json").write_text(
        json.dumps(echo, sort_keys=True, indent=1) + "\n")
    print(f"perturbed manifest: {manifest_path}")
    return 0


def _cmd_pipeline(args) -> int:
    from .pipeline import PipelineConfig, cmd_pipeline

    config = _load_config(args.config)
    pc = PipelineConfig(
        tau=_resolve(args.tau, config, "tau", 0.25),
        seed=_resolve(args.seed, config, "seed", 0),
        split_mode=_resolve(args.split_mode, config, "split_mode", "half"),
        registry=_resolve(args.registry, config, "registry", None),
        balance_classes=_resolve(args.balance_classes, config,
                                 "balance_classes", False),
        epochs=_resolve(args.epochs, config, "epochs", 2000),
        learning_rate=_resolve(args.learning_rate, config, "learning_rate", 0.1),
        l2=_resolve(args.l2, config, "l2", 1e-3))
    report = cmd_pipeline(args.manifest, pc, args.out)
    print(f"candidates: {report['n_candidates']} over {report['n_images']} images")
    if "table" in report:
        print(report["table"])
    return 0


def _cmd_export(args) -> int:
    from .pipeline import cmd_topn_export

    config = _load_config(args.config)
    n = _resolve(args.n, config, "n", 100)
    group_specs = _resolve(args.group, config, "groups", None)
    groups = [_parse_group(g) for g in group_specs] if group_specs else None
    out = cmd_topn_export(args.candidates, args.manifest, args.out, n=n,
                          groups=groups)
    print(f"review bundle: {out}")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve_review

    config = _load_config(args.config)
    serve_review(
        args.bundle,
        port=_resolve(args.port, config, "port", 8000),
        host=_resolve(args.host, config, "host", "127.0.0.1"),
        verdicts_path=_resolve(args.verdicts, config, "verdicts", None),
        default_reviewer=_resolve(args.reviewer, config, "reviewer", "anonymous"),
        static_dir=_resolve(args.static, config, "static", None))
    return 0


def _cmd_eval(args) -> int:
    from .detect import load_candidates
    from .evaluate import (average_precision, best_f1_threshold,
                           evaluate_detection, format_report, per_class_report)
    from .perturb import ErrorRegistry
    from .pipeline import _outcome_dict

    config = _load_config(args.config)
    tau = _resolve(args.tau, config, "tau", 0.25)
    candidates = load_candidates(args.candidates)
    registry = ErrorRegistry.load_jsonl(args.registry)
    t = _resolve(args.t, config, "t", None)
    if t is None:
        t, outcome = best_f1_threshold(candidates, registry, tau)
    else:
        outcome = evaluate_detection(candidates, registry, t, tau)
    curve = average_precision(candidates, registry, tau)
    per_class = per_class_report(candidates, registry, t, tau)
    rows = [{"class": str(cls), "TP": o.tp, "FN": o.fn, "FP": o.fp,
             "Prec": o.precision, "Rec": o.recall, "F1": o.f1}
            for cls, o in sorted(per_class.rows.items())]
    rows.append({"class": "all", "TP": outcome.tp, "FN": outcome.fn,
                 "FP": outcome.fp, "Prec": outcome.precision,
                 "Rec": outcome.recall, "F1": outcome.f1})
    table = format_report(rows)
    print(f"t={t} AP={curve.ap:.4f}")
    print(table)
    if args.out is not None:
        report = {"config": {"tau": tau, "t": t},
                  "method": _outcome_dict(outcome, curve.ap),
                  "per_class": {str(cls): _outcome_dict(o, None)
                                for cls, o in sorted(per_class.rows.items())},
                  "table": table}
        Path(args.out).write_text(json.dumps(report, sort_keys=True, indent=1)
                                  + "\n")
    return 0


_DISPATCH = {
    "perturb": _cmd_perturb,
    "pipeline": _cmd_pipeline,
    "export": _cmd_export,
    "serve": _cmd_serve,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _DISPATCH[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
