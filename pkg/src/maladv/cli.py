"""Command-line front end.

Subcommands: `train` a target classifier, `attack` a saved model with one
attack, `defend` to build the detector pipeline and dump its scores,
`bench` to run a full experiment matrix, and `report` to recompute a
report from a per-sample records dump.  Exit codes: 0 on success, 1 for
configuration problems, 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import (
    ExperimentConfig,
    build_attack,
    build_detector_defense,
    compute_metrics,
    config_from_json,
    config_to_json,
    default_config,
    report_from_records,
    run_experiment,
    write_report_csv,
    _attack_targets,
    _load_dataset,
    _mk_mlp_config,
)
from .errors import BadConfig, MaladvError, NotMalicious
from .features import mode_mask
from .mlp import classification_metrics, load_model, save_model, train
from .oracle import OracleSession

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    # bad flags and missing arguments are configuration mistakes
    def error(self, message):
        self.print_usage(sys.stderr)
        raise BadConfig(message)


def _read_config(path: str) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise BadConfig(f"cannot read config {path}: {exc}") from exc
    return config_from_json(text)


def _parse_arch(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.lower().split("x"))
    except ValueError as exc:
        raise BadConfig(f"bad architecture {text!r}, expected e.g. 200x200") from exc


def cmd_train(args) -> int:
    config = _read_config(args.config)
    vocab, dataset, m = _load_dataset(config)
    arch = _parse_arch(args.arch) if args.arch else config.architectures[0]
    model, report = train(_mk_mlp_config(m, arch, config.training, config.model_seed), dataset)
    save_model(model, args.out)
    print(
        f"arch {'x'.join(str(h) for h in arch)}  "
        f"accuracy {report.test_accuracy:.4f}  fnr {report.test_fnr:.4f}  "
        f"fpr {report.test_fpr:.4f}  saved {args.out}"
    )
    return EXIT_OK


def cmd_attack(args) -> int:
    config = _read_config(args.config)
    vocab, dataset, m = _load_dataset(config)
    model = load_model(args.model)
    if model.config.input_dim != m:
        raise BadConfig(f"model expects m={model.config.input_dim}, dataset has m={m}")
    spec = dict(next((a for a in config.attacks if a.get("name") == args.attack), {"name": args.attack}))
    spec["name"] = args.attack
    name, access, run = build_attack(spec, config.attack_seed)
    mask = mode_mask(vocab, config.mode)
    cap = args.samples if args.samples is not None else config.max_attack_samples
    targets = _attack_targets(model, dataset, cap)
    if not targets:
        raise MaladvError("no correctly classified malicious test samples to attack")
    acc, fnr, fpr = classification_metrics(model, dataset.test)
    results = []
    for s in targets:
        sess = OracleSession(model, access=access, budget=config.query_budget)
        try:
            results.append(run(s, sess, mask))
        except NotMalicious:
            continue
    row = compute_metrics(results, acc, fnr, fpr, attack=name, mode=config.mode)
    print(
        f"{name}: mr {row.mr:.4f}  avg_perturbations {row.avg_perturbations:.2f}  "
        f"avg_queries {row.avg_queries:.1f}  ({row.n_success}/{row.n_total} succeeded)"
    )
    return EXIT_OK


def cmd_defend(args) -> int:
    config = _read_config(args.config)
    vocab, dataset, m = _load_dataset(config)
    model = load_model(args.model)
    mask = mode_mask(vocab, config.mode)
    arch = model.config.hidden
    ctx = build_detector_defense(model, dataset, mask, config, arch, m)
    from .defense import write_score_dump

    write_score_dump(args.out, ctx.score_rows)
    n = len(ctx.score_rows)
    n_adv = sum(1 for r in ctx.score_rows if r["flag"] == 1)
    print(f"detector trained on {n - n_adv} normal and {n_adv} adversarial samples; scores in {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.emit_default_config:
        sys.stdout.write(config_to_json(default_config()))
        return EXIT_OK
    if not args.config:
        raise BadConfig("bench needs --config (or --emit-default-config)")
    config = _read_config(args.config)
    report = run_experiment(config)
    out = Path(config.output_dir)
    print(f"{len(report.rows)} matrix cells; report at {out / 'report.csv'}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = report_from_records(args.records)
    print("arch,attack,mode,defense,mr,avg_perturbations,avg_queries,n_success,n_total")
    for r in rows:
        print(
            f"{r['arch']},{r['attack']},{r['mode']},{r['defense']},"
            f"{r['mr']:.6f},{r['avg_perturbations']:.6f},{r['avg_queries']:.6f},"
            f"{r['n_success']},{r['n_total']}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="maladv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a target classifier")
    p.add_argument("--config", required=True)
    p.add_argument("--arch", default=None, help="hidden sizes, e.g. 200x200")
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("attack", help="run one attack against a saved model")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--attack", required=True)
    p.add_argument("--samples", type=int, default=None)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("defend", help="build the detector and dump its scores")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="score dump to write")
    p.set_defaults(fn=cmd_defend)

    p = sub.add_parser("bench", help="run a full experiment matrix")
    p.add_argument("--config", default=None)
    p.add_argument("--emit-default-config", action="store_true")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("report", help="recompute a report from records.csv")
    p.add_argument("--records", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except BadConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MaladvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"unexpected failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
