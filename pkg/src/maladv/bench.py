"""Experiment orchestration: attack/defense matrices over trained targets.

A run is described by one ExperimentConfig (JSON on disk).  For every
architecture it trains a target, then for every (defense, attack, mode)
cell attacks each correctly classified malicious test sample and reduces
the per-sample outcomes to one metrics row.  Everything lands in the
output directory: `report.csv` (fixed header, machine-readable),
`report.txt` (aligned, with wall-clock), `records.csv` (one line per
attacked sample, sufficient to recompute the report), annealing traces
for the first traced samples, plot-ready series, and detector score
dumps when the detector defense is in the matrix.

Determinism: with identical config and seeds the report bytes are
identical.  Per-sample attack seeds are `attack_seed XOR sample_id`, so
results do not depend on worker scheduling; rows are aggregated in
sample-id order.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .baselines import GenAttackParams, PointwiseParams, genattack, jsmf_attack, pointwise_attack
from .defense import (
    BayesianPredictConfig,
    DetectorModel,
    build_neighbor_index,
    combined_uncertainty,
    defended_predict,
    kernel_density_score,
    lid_score,
    train_detector,
    write_score_dump,
)
from .errors import BadConfig, EmptyResults, MaladvError, NotMalicious
from .features import (
    Dataset,
    FeatureMask,
    MODE_ALL,
    MODE_MANIFEST,
    Sample,
    SynthConfig,
    Vocabulary,
    ingest_samples,
    load_vocabulary,
    mode_mask,
    synthesize_dataset,
)
from .mlp import (
    DistillConfig,
    MlpConfig,
    MlpModel,
    classification_metrics,
    train,
    train_distilled,
    train_minmax_adversarial,
    train_with_attenuation,
)
from .ofei import AttackResult, AttackTrace, OfeiParams, ofei_attack
from .oracle import AccessLevel, OracleSession

logger = logging.getLogger(__name__)

ATTACK_NAMES = ("jsmf", "ofei", "ofei+fgsm", "ofei+deepfool", "genattack", "pointwise")
DEFENSE_NAMES = ("none", "detector", "distillation", "minmax")
WHITE_BOX_ATTACKS = {"jsmf", "ofei+fgsm", "ofei+deepfool"}

REPORT_HEADER = (
    "arch,attack,mode,defense,accuracy,fnr,fpr,mr,"
    "avg_perturbations,avg_queries,n_success,n_total"
)
RECORD_HEADER = "arch,attack,mode,defense,sample_id,success,perturbations,queries"


# ---- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 60
    batch_size: int = 128
    learning_rate: float = 0.1
    dropout: float = 0.0
    # Monte-Carlo dropout rate for the Bayesian scorer used by the detector
    mc_dropout: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one bench run needs, JSON-serializable."""

    # exactly one of the two dataset sources is set
    synth: Optional[dict] = None
    ingest: Optional[dict] = None  # {"vocabulary": path, "samples": path}
    architectures: tuple[tuple[int, ...], ...] = ((200, 200),)
    attacks: tuple[dict, ...] = field(
        default_factory=lambda: (
            {"name": "jsmf"},
            {"name": "ofei"},
            {"name": "genattack"},
            {"name": "pointwise"},
        )
    )
    mode: str = MODE_ALL
    defenses: tuple[str, ...] = ("none",)
    data_seed: Optional[int] = None
    model_seed: Optional[int] = None
    attack_seed: Optional[int] = None
    output_dir: str = "bench-out"
    training: TrainingConfig = field(default_factory=TrainingConfig)
    # None attacks every correctly classified malicious test sample
    max_attack_samples: Optional[int] = None
    query_budget: int = 20000
    trace_samples: int = 30
    workers: int = 1
    detector: dict = field(
        default_factory=lambda: {
            "train_attack": "jsmf",
            "n_train": 100,
            "n_passes": 50,
            "lambda": 0.4,
            "score": "cu",
        }
    )

    def validate(self) -> None:
        if (self.synth is None) == (self.ingest is None):
            raise BadConfig("exactly one dataset source (synth or ingest) is required")
        if not self.architectures:
            raise BadConfig("at least one architecture is required")
        if not self.attacks:
            raise BadConfig("at least one attack is required")
        for spec in self.attacks:
            if spec.get("name") not in ATTACK_NAMES:
                raise BadConfig(f"unknown attack {spec.get('name')!r}")
        if self.mode not in (MODE_ALL, MODE_MANIFEST):
            raise BadConfig(f"unknown mode {self.mode!r}")
        for d in self.defenses:
            if d not in DEFENSE_NAMES:
                raise BadConfig(f"unknown defense {d!r}")
        if self.data_seed is None or self.model_seed is None or self.attack_seed is None:
            raise BadConfig("seeds must be explicit: data_seed, model_seed, attack_seed")
        if self.workers < 1:
            raise BadConfig("workers must be at least 1")
        if self.query_budget < 1:
            raise BadConfig("query_budget must be positive")


def default_config() -> ExperimentConfig:
    """The fully spelled-out default run: every tunable appears explicitly."""
    return ExperimentConfig(
        synth=asdict(SynthConfig()),
        architectures=((200, 200),),
        attacks=(
            {"name": "jsmf", "max_flips": 20},
            {"name": "ofei", **asdict(OfeiParams())},
            {"name": "genattack", **asdict(GenAttackParams())},
            {"name": "pointwise", **asdict(PointwiseParams())},
        ),
        mode=MODE_ALL,
        defenses=("none",),
        data_seed=7,
        model_seed=6,
        attack_seed=1000,
        output_dir="bench-out",
        training=TrainingConfig(),
        max_attack_samples=50,
        query_budget=20000,
        trace_samples=30,
        workers=1,
    )


def config_to_json(config: ExperimentConfig) -> str:
    return json.dumps(asdict(config), indent=2, sort_keys=True) + "\n"


def config_from_json(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BadConfig(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise BadConfig("config must be a JSON object")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise BadConfig(f"unknown config keys: {sorted(unknown)}")
    kw = dict(raw)
    if "architectures" in kw:
        kw["architectures"] = tuple(tuple(int(h) for h in a) for a in kw["architectures"])
    if "attacks" in kw:
        kw["attacks"] = tuple(dict(a) for a in kw["attacks"])
    if "defenses" in kw:
        kw["defenses"] = tuple(kw["defenses"])
    if "training" in kw:
        kw["training"] = TrainingConfig(**kw["training"])
    cfg = ExperimentConfig(**kw)
    cfg.validate()
    return cfg


# ---- metrics ----------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRow:
    arch: str
    attack: str
    mode: str
    defense: str
    accuracy: float
    fnr: float
    fpr: float
    mr: float
    avg_perturbations: float
    avg_queries: float
    n_success: int
    n_total: int
    wall_clock: float = 0.0


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple[MetricsRow, ...]


def compute_metrics(
    results: Sequence[AttackResult],
    accuracy: float,
    fnr: float,
    fpr: float,
    *,
    arch: str = "",
    attack: str = "",
    mode: str = "",
    defense: str = "none",
    wall_clock: float = 0.0,
) -> MetricsRow:
    """Reduce one cell's attack results to a report row.

    MR counts successes over all attacked samples; perturbation and query
    averages run over the successful attacks only.
    """
    if not results:
        raise EmptyResults("no attack results to reduce")
    succ = [r for r in results if r.success]
    mr = len(succ) / len(results)
    avg_p = float(np.mean([r.perturbations for r in succ])) if succ else math.nan
    avg_q = float(np.mean([r.total_queries for r in succ])) if succ else math.nan
    return MetricsRow(
        arch=arch,
        attack=attack,
        mode=mode,
        defense=defense,
        accuracy=accuracy,
        fnr=fnr,
        fpr=fpr,
        mr=mr,
        avg_perturbations=avg_p,
        avg_queries=avg_q,
        n_success=len(succ),
        n_total=len(results),
        wall_clock=wall_clock,
    )


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.6f}"


def write_report_csv(report: MetricsReport, path) -> None:
    """Fixed-header machine-readable report; wall-clock deliberately absent
    so identical runs produce identical bytes."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(REPORT_HEADER + "\n")
        for r in report.rows:
            fh.write(
                f"{r.arch},{r.attack},{r.mode},{r.defense},"
                f"{_fmt(r.accuracy)},{_fmt(r.fnr)},{_fmt(r.fpr)},{_fmt(r.mr)},"
                f"{_fmt(r.avg_perturbations)},{_fmt(r.avg_queries)},"
                f"{r.n_success},{r.n_total}\n"
            )


def write_report_table(report: MetricsReport, path) -> None:
    cols = REPORT_HEADER.split(",") + ["wall_clock"]
    lines = [
        [
            r.arch, r.attack, r.mode, r.defense,
            _fmt(r.accuracy), _fmt(r.fnr), _fmt(r.fpr), _fmt(r.mr),
            _fmt(r.avg_perturbations), _fmt(r.avg_queries),
            str(r.n_success), str(r.n_total), f"{r.wall_clock:.1f}s",
        ]
        for r in report.rows
    ]
    widths = [max(len(c), *(len(row[i]) for row in lines)) if lines else len(c) for i, c in enumerate(cols)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("  ".join(c.ljust(w) for c, w in zip(cols, widths)).rstrip() + "\n")
        for row in lines:
            fh.write("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() + "\n")


def report_from_records(path) -> list[dict]:
    """Recompute per-cell metrics from a records.csv dump.

    The report is a pure function of the raw per-sample records, so this
    is both the `report` subcommand and the cross-check oracle.
    """
    cells: dict[tuple[str, str, str, str], list[dict]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != RECORD_HEADER:
            raise BadConfig(f"unexpected records header: {header!r}")
        for line in fh:
            arch, attack, mode, defense, sid, success, perts, queries = line.rstrip("\n").split(",")
            cells.setdefault((arch, attack, mode, defense), []).append(
                {
                    "sample_id": int(sid),
                    "success": success == "1",
                    "perturbations": int(perts),
                    "queries": int(queries),
                }
            )
    rows = []
    for (arch, attack, mode, defense), recs in sorted(cells.items()):
        succ = [r for r in recs if r["success"]]
        rows.append(
            {
                "arch": arch,
                "attack": attack,
                "mode": mode,
                "defense": defense,
                "mr": len(succ) / len(recs),
                "avg_perturbations": float(np.mean([r["perturbations"] for r in succ])) if succ else math.nan,
                "avg_queries": float(np.mean([r["queries"] for r in succ])) if succ else math.nan,
                "n_success": len(succ),
                "n_total": len(recs),
            }
        )
    return rows


# ---- attack dispatch ---------------------------------------------------------


def _drop(kw: dict, *names: str) -> dict:
    out = {k: v for k, v in kw.items() if k not in names}
    return out


def build_attack(spec: dict, attack_seed: int) -> tuple[str, AccessLevel, Callable]:
    """Map one attack spec onto a callable(sample, session, mask).

    The per-sample seed is attack_seed XOR sample_id, so each sample's
    randomness is fixed regardless of execution order.
    """
    name = spec["name"]
    kw = _drop(dict(spec), "name")
    access = AccessLevel.WHITE_BOX if name in WHITE_BOX_ATTACKS else AccessLevel.SEMI_BLACK_BOX

    if name == "jsmf":
        max_flips = int(kw.pop("max_flips", 20))
        if kw:
            raise BadConfig(f"unknown jsmf params: {sorted(kw)}")

        def run(s: Sample, sess: OracleSession, mask: FeatureMask, trace=None) -> AttackResult:
            return jsmf_attack(s.features, sess, mask, max_flips=max_flips)

        return name, access, run

    if name in ("ofei", "ofei+fgsm", "ofei+deepfool"):
        guidance = {"ofei": "none", "ofei+fgsm": "fgsm", "ofei+deepfool": "deepfool"}[name]
        kw.pop("guidance", None)
        kw.pop("seed", None)
        if "ucb" in kw and isinstance(kw["ucb"], dict):
            from .gp import UcbParams

            kw["ucb"] = UcbParams(**kw["ucb"])
        if "kernel" in kw and isinstance(kw["kernel"], dict):
            from .gp import KernelParams

            kw["kernel"] = KernelParams(**kw["kernel"])
        base = OfeiParams(guidance=guidance, **kw)

        def run(s: Sample, sess: OracleSession, mask: FeatureMask, trace=None) -> AttackResult:
            params = replace(base, seed=attack_seed ^ s.sample_id)
            return ofei_attack(s.features, sess, mask, params, trace=trace)

        return name, access, run

    if name == "genattack":
        kw.pop("seed", None)
        base_ga = GenAttackParams(**kw)

        def run(s: Sample, sess: OracleSession, mask: FeatureMask, trace=None) -> AttackResult:
            return genattack(s.features, sess, mask, params=replace(base_ga, seed=attack_seed ^ s.sample_id))

        return name, access, run

    if name == "pointwise":
        kw.pop("seed", None)
        base_pw = PointwiseParams(**kw)

        def run(s: Sample, sess: OracleSession, mask: FeatureMask, trace=None) -> AttackResult:
            return pointwise_attack(s.features, sess, mask, params=replace(base_pw, seed=attack_seed ^ s.sample_id))

        return name, access, run

    raise BadConfig(f"unknown attack {name!r}")


# ---- defense construction ----------------------------------------------------


@dataclass
class DefenseContext:
    """What one defense row needs: the oracle target and, for the detector,
    a post-hoc re-judgement of attack outputs."""

    target: MlpModel
    rejudge: Optional[Callable[[object], int]] = None
    score_rows: Optional[list[dict]] = None


def _mk_mlp_config(m: int, arch: Sequence[int], tr: TrainingConfig, seed: int, aleatoric: bool = False) -> MlpConfig:
    # the Bayesian scorer needs stochastic passes, so it always carries
    # the MC dropout rate; the plain target uses the training dropout
    return MlpConfig(
        input_dim=m,
        hidden=tuple(int(h) for h in arch),
        epochs=tr.epochs,
        batch_size=tr.batch_size,
        learning_rate=tr.learning_rate,
        dropout=tr.mc_dropout if aleatoric else tr.dropout,
        seed=seed,
        aleatoric=aleatoric,
    )


def build_detector_defense(
    plain: MlpModel,
    dataset: Dataset,
    mask: FeatureMask,
    config: ExperimentConfig,
    arch: Sequence[int],
    m: int,
) -> DefenseContext:
    """Detect-then-classify on the Bayesian service: the aleatoric model is
    both the attacked target and the uncertainty scorer, so crafted inputs
    that barely cross its boundary sit exactly where its uncertainty peaks.
    A CU detector trained on crafted adversarials flags them; flagged
    inputs are declared malicious."""
    det = config.detector
    tr = config.training
    target, _ = train_with_attenuation(
        _mk_mlp_config(m, arch, tr, config.model_seed, aleatoric=True), dataset
    )
    bp = BayesianPredictConfig(n_passes=int(det.get("n_passes", 50)), seed=config.model_seed)
    lam = float(det.get("lambda", 0.4))
    index = build_neighbor_index(target, dataset.train, seed=config.model_seed)

    def cu_of(x) -> float:
        return combined_uncertainty(target, x, bp, lam=lam).cu

    n_train = int(det.get("n_train", 100))
    train_attack = det.get("train_attack", "jsmf")
    _, access, run = build_attack({"name": train_attack}, config.attack_seed ^ 0x5EED)
    normals: list[Sample] = []
    advs = []
    for s in dataset.test:
        if len(advs) >= n_train and len(normals) >= n_train:
            break
        if target.predict(s.features) != s.label:
            continue
        if s.label == 1 and len(advs) < n_train:
            sess = OracleSession(target, access=access, budget=config.query_budget)
            try:
                res = run(s, sess, mask)
            except NotMalicious:
                continue
            if res.success:
                advs.append((s, res.adversarial))
        elif len(normals) < n_train:
            normals.append(s)
    if not advs:
        raise MaladvError("detector defense: no adversarial training examples produced")

    score_rows: list[dict] = []
    scores, labels = [], []
    for flag, pairs in ((0, [(s, s.features) for s in normals]), (1, advs)):
        for s, x in pairs:
            u = combined_uncertainty(target, x, bp, lam=lam)
            scores.append(u.cu)
            labels.append(flag)
            score_rows.append(
                {
                    "sample_id": s.sample_id,
                    "label": s.label,
                    "predicted": target.predict(x),
                    "kd": kernel_density_score(index, target, x),
                    "lid": lid_score(index, target, x),
                    "au": u.au,
                    "eu": u.eu,
                    "cu": u.cu,
                    "flag": flag,
                }
            )
    detector = train_detector(scores, labels)

    def rejudge(x) -> int:
        return defended_predict(detector, target, x, cu_of)

    return DefenseContext(target=target, rejudge=rejudge, score_rows=score_rows)


def build_defense(
    name: str,
    plain: MlpModel,
    dataset: Dataset,
    mask: FeatureMask,
    config: ExperimentConfig,
    arch: Sequence[int],
    m: int,
) -> DefenseContext:
    tr = config.training
    if name == "none":
        return DefenseContext(target=plain)
    if name == "distillation":
        hardened = train_distilled(
            _mk_mlp_config(m, arch, tr, config.model_seed),
            DistillConfig(teacher=plain),
            dataset,
        )
        return DefenseContext(target=hardened)
    if name == "minmax":
        def craft(model: MlpModel, s: Sample):
            sess = OracleSession(model, access=AccessLevel.WHITE_BOX, budget=None)
            try:
                res = jsmf_attack(s.features, sess, mask)
            except NotMalicious:
                return None
            return res.adversarial if res.success else None

        hardened, _ = train_minmax_adversarial(
            _mk_mlp_config(m, arch, tr, config.model_seed), dataset, craft
        )
        return DefenseContext(target=hardened)
    if name == "detector":
        return build_detector_defense(plain, dataset, mask, config, arch, m)
    raise BadConfig(f"unknown defense {name!r}")


# ---- the run -----------------------------------------------------------------


def _load_dataset(config: ExperimentConfig) -> tuple[Vocabulary, Dataset, int]:
    if config.synth is not None:
        synth = SynthConfig(**config.synth)
        vocab, ds = synthesize_dataset(synth, seed=config.data_seed)
        return vocab, ds, synth.m
    vocab = load_vocabulary(config.ingest["vocabulary"])
    ds = ingest_samples(config.ingest["samples"], vocab)
    return vocab, ds, len(vocab.entries)


def _attack_targets(model: MlpModel, dataset: Dataset, cap: Optional[int]) -> list[Sample]:
    """Correctly classified malicious test samples, in test order."""
    out = []
    for s in dataset.test:
        if s.label == 1 and model.predict(s.features) == 1:
            out.append(s)
            if cap is not None and len(out) >= cap:
                break
    return out


def _attack_one(
    run: Callable,
    s: Sample,
    target: MlpModel,
    access: AccessLevel,
    mask: FeatureMask,
    budget: int,
    trace: Optional[AttackTrace],
    rejudge: Optional[Callable],
) -> tuple[int, AttackResult]:
    sess = OracleSession(target, access=access, budget=budget)
    try:
        res = run(s, sess, mask, trace=trace)
    except NotMalicious:
        # the target flipped its verdict between selection and attack;
        # with a deterministic oracle this cannot happen
        res = AttackResult(
            success=False,
            original=s.features,
            adversarial=s.features,
            flipped=(),
            perturbations=0,
            total_queries=sess.query_count,
            failure_reason="not malicious at attack time",
        )
    if res.success and rejudge is not None and rejudge(res.adversarial) == 1:
        res = replace(res, success=False, failure_reason="caught by detector")
    return s.sample_id, res


def run_experiment(
    config: ExperimentConfig,
    on_result: Optional[Callable[[str, str, str, Sample, AttackResult], None]] = None,
) -> MetricsReport:
    """Execute the full matrix and write every artifact under output_dir.

    `on_result`, when given, sees every per-sample outcome as
    (arch, attack, defense, sample, result); auditors hang off this.
    On failure, whatever completed is flushed next to a FAILED marker that
    carries the error, then the error propagates.
    """
    config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(exist_ok=True)
    (out / "plots").mkdir(exist_ok=True)

    rows: list[MetricsRow] = []
    record_lines: list[str] = []
    traces: list[AttackTrace] = []
    try:
        vocab, dataset, m = _load_dataset(config)
        mask = mode_mask(vocab, config.mode)
        for arch in config.architectures:
            arch_name = "x".join(str(h) for h in arch)
            plain, _rep = train(
                _mk_mlp_config(m, arch, config.training, config.model_seed), dataset
            )
            for defense in config.defenses:
                ctx = build_defense(defense, plain, dataset, mask, config, arch, m)
                acc, fnr, fpr = classification_metrics(ctx.target, dataset.test)
                targets = _attack_targets(ctx.target, dataset, config.max_attack_samples)
                if ctx.score_rows is not None:
                    write_score_dump(out / f"scores_{arch_name}.csv", ctx.score_rows)
                for spec in config.attacks:
                    name, access, run = build_attack(spec, config.attack_seed)
                    t0 = time.time()
                    jobs = []
                    for i, s in enumerate(targets):
                        trace = None
                        if name.startswith("ofei") and defense == "none" and i < config.trace_samples:
                            trace = AttackTrace(
                                context={"arch": arch_name, "attack": name, "sample": s.sample_id}
                            )
                            traces.append(trace)
                        jobs.append((s, trace))
                    if config.workers > 1:
                        with ThreadPoolExecutor(max_workers=config.workers) as pool:
                            outcomes = list(
                                pool.map(
                                    lambda j: _attack_one(
                                        run, j[0], ctx.target, access, mask,
                                        config.query_budget, j[1], ctx.rejudge,
                                    ),
                                    jobs,
                                )
                            )
                    else:
                        outcomes = [
                            _attack_one(
                                run, s, ctx.target, access, mask,
                                config.query_budget, trace, ctx.rejudge,
                            )
                            for s, trace in jobs
                        ]
                    outcomes.sort(key=lambda o: o[0])
                    results = [r for _, r in outcomes]
                    if on_result is not None:
                        by_id = {s.sample_id: s for s in targets}
                        for sid, r in outcomes:
                            on_result(arch_name, name, defense, by_id[sid], r)
                    if results:
                        rows.append(
                            compute_metrics(
                                results, acc, fnr, fpr,
                                arch=arch_name, attack=name, mode=config.mode,
                                defense=defense, wall_clock=time.time() - t0,
                            )
                        )
                    for sid, r in outcomes:
                        record_lines.append(
                            f"{arch_name},{name},{config.mode},{defense},"
                            f"{sid},{1 if r.success else 0},{r.perturbations},{r.total_queries}"
                        )
    except Exception as exc:
        _flush(out, rows, record_lines, traces)
        (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise
    _flush(out, rows, record_lines, traces)
    return MetricsReport(rows=tuple(rows))


def _flush(out: Path, rows: list[MetricsRow], record_lines: list[str], traces: list[AttackTrace]) -> None:
    report = MetricsReport(rows=tuple(rows))
    write_report_csv(report, out / "report.csv")
    write_report_table(report, out / "report.txt")
    with open(out / "records.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(RECORD_HEADER + "\n")
        for line in record_lines:
            fh.write(line + "\n")
    for i, tr in enumerate(traces):
        tr.write(out / "traces" / f"trace_{i:03d}.jsonl")
    emit_plot_data(traces, out / "plots")


# ---- plot data ---------------------------------------------------------------

FLIPS_HEADER = "sample,restart,flips,fitness"
STEPS_HEADER = "sample,restart,round,step,fitness"


def emit_plot_data(traces: Sequence[AttackTrace], out_dir) -> tuple[Path, Path]:
    """Comma-separated series ready for any plotting tool.

    `fitness_vs_flips.csv` has one point per annealing round: the accepted
    fitness when that flip was decided, indexed by how many flips preceded
    it.  `fitness_vs_steps.csv` has every inner step of every round.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    flips_path = out_dir / "fitness_vs_flips.csv"
    steps_path = out_dir / "fitness_vs_steps.csv"
    with open(flips_path, "w", encoding="utf-8", newline="\n") as ff, open(
        steps_path, "w", encoding="utf-8", newline="\n"
    ) as fs:
        ff.write(FLIPS_HEADER + "\n")
        fs.write(STEPS_HEADER + "\n")
        for trace in traces:
            sample = trace.context.get("sample", -1)
            last: dict[tuple[int, int], dict] = {}
            for rec in trace.records:
                fs.write(
                    f"{sample},{rec['restart']},{rec['round']},{rec['step']},{rec['fitness']:.10g}\n"
                )
                last[(rec["restart"], rec["round"])] = rec
            for (restart, rnd), rec in sorted(last.items()):
                ff.write(f"{sample},{restart},{rnd},{rec['fitness']:.10g}\n")
    return flips_path, steps_path
