"""Command-line entry point and JSON reporting.

Commands: generate, mine-classical, mine-quantum, tomo-bench, compare, scaling.
Exit codes: 0 success, 1 compare mismatch, 2 usage error, 3 IO failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import jsonschema

from . import qminer, tomo
from .classical import (
    FrequentSet,
    MiningConfig,
    apriori_f1,
    apriori_f2,
    derive_rules,
    near_threshold,
    sampling_mine,
)
from .dataset import (
    FORMATS,
    ParseError,
    ItemSet,
    TransactionDatabase,
    generate_synthetic,
    load_transactions,
    save_transactions,
)
from .qsim import CostLedger, DensityOperator

COMMANDS = ("generate", "mine-classical", "mine-quantum", "tomo-bench", "compare", "scaling")
MINING_COMMANDS = ("mine-classical", "mine-quantum", "compare")
DEFAULT_SEED = 20240601
SEED_ENV = "QARM_SEED"
SCHEMA_VERSION = 1
SCHEMA_FILE = f"report-v{SCHEMA_VERSION}.schema.json"
FLOAT_DIGITS = 12

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


@dataclass
class RunConfig:
    command: str
    seed: int
    db_path: str | None = None
    db_format: str = "item-list"
    mining: MiningConfig | None = None
    tomo: tomo.TomoConfig | None = None
    f1_shots: int | None = None
    sampling_shots: int | None = None
    prep_mode: str = "exact"
    tomo_mode: str = "ideal"
    exact: bool = False
    exact_a: bool = False
    output: str | None = None
    timings: bool = False
    # generate
    num_transactions: int = 64
    num_items: int = 8
    target_a: float = 2.0
    # tomo-bench
    dim: int = 4
    rank: int = 2
    # scaling
    sizes: list[int] = field(default_factory=lambda: [4, 8, 16, 32])
    width: int = 2

    def echo(self) -> dict:
        out: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "seed": self.seed,
            "db_path": self.db_path,
            "db_format": self.db_format,
            "f1_shots": self.f1_shots,
            "sampling_shots": self.sampling_shots,
            "prep_mode": self.prep_mode,
            "tomo_mode": self.tomo_mode,
            "exact": self.exact,
            "exact_a": self.exact_a,
        }
        if self.mining is not None:
            out["mining"] = dict(vars(self.mining))
        if self.tomo is not None:
            out["tomo"] = self.tomo.echo()
        if self.command == "generate":
            out.update(N=self.num_transactions, M=self.num_items, target_a=self.target_a)
        if self.command == "tomo-bench":
            out.update(dim=self.dim, rank=self.rank)
        if self.command == "scaling":
            out.update(sizes=list(self.sizes), width=self.width, N=self.num_transactions)
        return out


def _unit_interval(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qarm", description="Quantum and classical frequent 1/2-itemset mining.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"RNG seed (default ${SEED_ENV} or {DEFAULT_SEED})")
    common.add_argument("--out", default=None, help="output path (default stdout)")
    common.add_argument("--timings", action="store_true", help="record wall-clock timings in the report")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--db", default=None, help="transaction database file")
    data.add_argument("--format", choices=FORMATS, default="item-list")

    mining = argparse.ArgumentParser(add_help=False)
    mining.add_argument("--min-supp", type=_unit_interval, default=None)
    mining.add_argument("--min-conf", type=_unit_interval, default=0.0)
    mining.add_argument("--eps", type=_positive_float, default=0.1)
    mining.add_argument("--conf-denominator", choices=("consequent", "antecedent"), default="consequent")

    quantum = argparse.ArgumentParser(add_help=False)
    quantum.add_argument("--prep-mode", choices=qminer.PREP_MODES, default="exact")
    quantum.add_argument("--mode", dest="tomo_mode", choices=qminer.TOMO_MODES, default="ideal",
                         help="tomography mode")
    quantum.add_argument("--exact", action="store_true", help="use exact probabilities instead of shots")
    quantum.add_argument("--exact-a", action="store_true", help="skip quantum counting, use the true a")
    quantum.add_argument("--f1-shots", type=_positive_int, default=None)
    quantum.add_argument("--kappa", type=float, default=None)
    quantum.add_argument("--eps-eff", type=float, default=None)
    quantum.add_argument("--branch", choices=tomo.BRANCHES, default=None)
    quantum.add_argument("--t0", type=_positive_int, default=None)
    quantum.add_argument("--t", type=_positive_int, default=None)
    quantum.add_argument("--readout", choices=tomo.READOUTS, default="qpe")
    quantum.add_argument("--evolution", choices=("exact", "sliced"), default="exact")
    quantum.add_argument("--qpca-shots", type=_positive_int, default=2000)

    gen = sub.add_parser("generate", parents=[common], help="write a synthetic database")
    gen.add_argument("--n", type=_positive_int, default=64, help="transactions")
    gen.add_argument("--m", type=_positive_int, default=8, help="items")
    gen.add_argument("--a", type=_positive_float, default=2.0, help="target mean items per transaction")
    gen.add_argument("--format", choices=FORMATS, default="item-list")

    sub.add_parser("mine-classical", parents=[common, data, mining], help="Apriori F1/F2 and rules")
    sub.add_parser("mine-quantum", parents=[common, data, mining, quantum], help="quantum pipeline")
    cmp_ = sub.add_parser("compare", parents=[common, data, mining, quantum],
                          help="Apriori, sampling and quantum side by side")
    cmp_.add_argument("--sampling-shots", type=_positive_int, default=None)

    bench = sub.add_parser("tomo-bench", parents=[common, data, mining, quantum],
                           help="pure-state tomography on sigma or a random operator")
    bench.add_argument("--dim", type=_positive_int, default=4)
    bench.add_argument("--rank", type=_positive_int, default=2)

    scal = sub.add_parser("scaling", parents=[common], help="ledger scaling sweep over M")
    scal.add_argument("--sizes", type=_positive_int, nargs="+", default=[4, 8, 16, 32])
    scal.add_argument("--n", type=_positive_int, default=64)
    scal.add_argument("--width", type=_positive_int, default=2)
    scal.add_argument("--eps", type=_positive_float, default=0.1)
    scal.add_argument("--min-supp", type=_unit_interval, default=0.0)
    return parser


def _default_seed(parser: argparse.ArgumentParser) -> int:
    env = os.environ.get(SEED_ENV)
    if env is None or not env.strip():
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        parser.error(f"{SEED_ENV} must be an integer, got {env!r}")


def parse_args(argv: Sequence[str] | None = None) -> RunConfig:
    """Validate argv into a RunConfig. Usage errors exit with status 2."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        parser.print_usage(sys.stderr)
        parser.exit(EXIT_USAGE, "qarm: error: a command is required\n")
    seed = ns.seed if ns.seed is not None else _default_seed(parser)
    cfg = RunConfig(command=ns.command, seed=seed, output=ns.out, timings=ns.timings)

    if ns.command == "generate":
        cfg.num_transactions, cfg.num_items, cfg.target_a = ns.n, ns.m, ns.a
        cfg.db_format = ns.format
        if ns.a > ns.m:
            parser.error("--a cannot exceed --m")
        return cfg

    if ns.command == "scaling":
        if len(set(ns.sizes)) < 3:
            parser.error("scaling needs at least 3 distinct --sizes")
        if min(ns.sizes) <= ns.width:
            parser.error("every size must exceed --width")
        cfg.sizes, cfg.num_transactions, cfg.width = list(ns.sizes), ns.n, ns.width
        cfg.mining = MiningConfig(min_supp=ns.min_supp, epsilon=ns.eps)
        return cfg

    cfg.db_path, cfg.db_format = ns.db, ns.format
    if ns.command in MINING_COMMANDS and cfg.db_path is None:
        parser.error(f"{ns.command} requires --db")
    min_supp = ns.min_supp
    if min_supp is None:
        if ns.command in MINING_COMMANDS or cfg.db_path is not None:
            parser.error(f"{ns.command} requires --min-supp")
        min_supp = 0.0
    try:
        cfg.mining = MiningConfig(min_supp, ns.min_conf, ns.eps, ns.conf_denominator)
    except ValueError as exc:
        parser.error(str(exc))
    if ns.command == "mine-classical":
        return cfg

    if ns.kappa is not None and ns.eps_eff is not None and ns.branch is None:
        parser.error("--kappa and --eps-eff both set: choose one or pass --branch")
    cfg.prep_mode, cfg.tomo_mode = ns.prep_mode, ns.tomo_mode
    cfg.exact, cfg.exact_a, cfg.f1_shots = ns.exact, ns.exact_a, ns.f1_shots
    cfg.sampling_shots = getattr(ns, "sampling_shots", None)
    eps_eff = ns.eps_eff
    if eps_eff is None and ns.kappa is None and ns.branch != "full-rank":
        eps_eff = qminer.default_tomo_config(cfg.mining).epsilon_eff
    try:
        cfg.tomo = tomo.TomoConfig(
            epsilon=ns.eps,
            kappa=ns.kappa,
            epsilon_eff=eps_eff,
            t0=ns.t0,
            t=ns.t,
            branch=ns.branch,
            evolution=ns.evolution,
            readout=ns.readout,
            qpca_shots=ns.qpca_shots,
            seed=seed,
        )
    except ValueError as exc:
        parser.error(str(exc))
    if ns.command == "tomo-bench":
        cfg.dim, cfg.rank = ns.dim, ns.rank
        if ns.rank > ns.dim:
            parser.error("--rank cannot exceed --dim")
    return cfg


# ---------------------------------------------------------------- reporting


def _round_floats(obj: Any) -> Any:
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"non-finite value in report: {x}")
        return float(f"{x:.{FLOAT_DIGITS}g}")
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round_floats(obj.tolist())
    return obj


def load_schema() -> dict:
    text = resources.files("qarm").joinpath("schema", SCHEMA_FILE).read_text(encoding="utf-8")
    return json.loads(text)


def validate_report(report: dict) -> None:
    jsonschema.validate(report, load_schema())


def render_report(report: dict) -> str:
    """Round floats, validate against the shipped schema and serialize."""
    clean = _round_floats(report)
    validate_report(clean)
    return json.dumps(clean, indent=2, sort_keys=True) + "\n"


def _set_json(fs: FrequentSet, db: TransactionDatabase) -> dict:
    items = list(fs.itemset.items)
    return {
        "items": items,
        "labels": [db.item_ids[i] for i in items],
        "support": fs.support,
        "estimated": fs.estimated,
    }


def _sets_json(sets: Sequence[FrequentSet], db: TransactionDatabase) -> list[dict]:
    return [_set_json(fs, db) for fs in sorted(sets, key=lambda x: x.itemset)]


def _rules_json(rules) -> list[dict]:
    return [
        {
            "antecedent": list(r.antecedent.items),
            "consequent": list(r.consequent.items),
            "support": r.support,
            "confidence": r.confidence,
        }
        for r in rules
    ]


def _itemsets_json(sets: Sequence[ItemSet]) -> list[list[int]]:
    return [list(x.items) for x in sorted(set(sets))]


def _diff(a: Sequence[FrequentSet], b: Sequence[FrequentSet]) -> list[list[int]]:
    return _itemsets_json({x.itemset for x in a} ^ {x.itemset for x in b})


def _empty_report(cfg: RunConfig) -> dict:
    return {
        "config_echo": cfg.echo(),
        "f1": [],
        "f2": [],
        "rules": [],
        "ledger": CostLedger().as_dict(),
        "flags": {"near_threshold": [], "clipped": []},
        "baseline_diff": {},
        "timings": {},
    }


def _apriori_ledger(db: TransactionDatabase) -> CostLedger:
    # one classical read per database entry
    ledger = CostLedger()
    ledger.add(oracle_calls=db.num_transactions * db.num_items)
    return ledger


# ---------------------------------------------------------------- commands


def _load_db(cfg: RunConfig) -> TransactionDatabase:
    text = Path(cfg.db_path).read_text(encoding="utf-8")
    return load_transactions(text, cfg.db_format)


def _run_classical(cfg: RunConfig, db: TransactionDatabase, report: dict) -> int:
    f1 = apriori_f1(db, cfg.mining)
    f2 = apriori_f2(db, f1, cfg.mining)
    report.update(
        f1=_sets_json(f1, db),
        f2=_sets_json(f2, db),
        rules=_rules_json(derive_rules(f1, f2, cfg.mining)),
        ledger=_apriori_ledger(db).as_dict(),
    )
    return EXIT_OK


def _quantum(cfg: RunConfig, db: TransactionDatabase) -> qminer.QuantumMiningReport:
    return qminer.mine_full(
        db,
        cfg.mining,
        cfg.tomo,
        cfg.seed,
        prep_mode=cfg.prep_mode,
        tomo_mode=cfg.tomo_mode,
        exact=cfg.exact,
        exact_a=cfg.exact_a,
        f1_shots=cfg.f1_shots,
    )


def _run_quantum(cfg: RunConfig, db: TransactionDatabase, report: dict) -> int:
    q = _quantum(cfg, db)
    report.update(
        f1=_sets_json(q.f1, db),
        f2=_sets_json(q.f2, db),
        rules=_rules_json(q.rules),
        ledger=q.ledger.as_dict(),
        flags={"near_threshold": _itemsets_json(q.uncertainty_flags), "clipped": _itemsets_json(q.clipped)},
        baseline_diff={"quantum": {k: _itemsets_json(v) for k, v in q.baseline_diff.items()}},
    )
    return EXIT_OK


def _run_compare(cfg: RunConfig, db: TransactionDatabase, report: dict) -> int:
    base_f1 = apriori_f1(db, cfg.mining)
    base_f2 = apriori_f2(db, base_f1, cfg.mining)
    seed_sampling, seed_quantum = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    s_f1, s_f2, s_total = sampling_mine(db, cfg.mining, cfg.sampling_shots, seed_sampling)
    s_ledger = CostLedger()
    s_ledger.add(shots=s_total)
    q = _quantum(cfg, db) if int(db.bits.sum()) else None
    q_f1, q_f2 = (q.f1, q.f2) if q else ([], [])
    diffs = {
        "sampling": {"f1": _diff(s_f1, base_f1), "f2": _diff(s_f2, base_f2)},
        "quantum": {"f1": _diff(q_f1, base_f1), "f2": _diff(q_f2, base_f2)},
    }
    near = [fs.itemset for fs in s_f1 + s_f2 if near_threshold(fs.support, cfg.mining)]
    if q:
        near += q.uncertainty_flags
    report.update(
        f1={"apriori": _sets_json(base_f1, db), "sampling": _sets_json(s_f1, db), "quantum": _sets_json(q_f1, db)},
        f2={"apriori": _sets_json(base_f2, db), "sampling": _sets_json(s_f2, db), "quantum": _sets_json(q_f2, db)},
        rules=_rules_json(derive_rules(base_f1, base_f2, cfg.mining)),
        ledger={
            "apriori": _apriori_ledger(db).as_dict(),
            "sampling": s_ledger.as_dict(),
            "quantum": (q.ledger if q else CostLedger()).as_dict(),
        },
        flags={"near_threshold": _itemsets_json(near), "clipped": _itemsets_json(q.clipped if q else [])},
        baseline_diff=diffs,
    )
    mismatch = any(v for method in diffs.values() for v in method.values())
    return EXIT_MISMATCH if mismatch else EXIT_OK


def _random_operator(dim: int, rank: int, seed: int) -> DensityOperator:
    """Random rank-r operator with nonnegative entries, the shape sigma has."""
    rng = np.random.default_rng(seed)
    g = rng.random((rank, dim))
    return DensityOperator.from_gram(g.T @ g)


def _run_tomo_bench(cfg: RunConfig, db: TransactionDatabase | None, report: dict) -> int:
    seed_op, seed_tomo = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    if db is not None:
        f1 = apriori_f1(db, cfg.mining)
        if not f1:
            raise ValueError("no frequent items: sigma is empty")
        rho, _ = qminer.build_sigma(db, f1)
        source = "sigma"
    else:
        rho = _random_operator(cfg.dim, cfg.rank, seed_op)
        source = "random"
    ledger = CostLedger()
    result = tomo.pure_state_tomography(
        rho, cfg.tomo, mode=cfg.tomo_mode, seed=seed_tomo, exact=cfg.exact, ledger=ledger
    )
    err = float(np.sum((result.elements - np.real(rho.matrix)) ** 2))
    details = {
        "source": source,
        "dim": rho.dim,
        "true_eigenvalues": [float(x) for x in rho.eigenvalues],
        "true_B": rho.frobenius_norm,
        "squared_error": err,
        "tomography": result.to_dict(),
    }
    if cfg.tomo_mode == "circuit":
        prep = tomo.prepare_psi_circuit(rho, cfg.tomo, CostLedger())
        details["bures_distance"] = tomo.bures_distance(prep.output, tomo.prepare_psi_ideal(rho))
        details["success_probability"] = prep.success_probability
    report.update(ledger=ledger.as_dict(), details=details)
    return EXIT_OK


def _run_scaling(cfg: RunConfig, report: dict) -> int:
    rep = qminer.ledger_scaling_report(
        cfg.sizes,
        num_transactions=cfg.num_transactions,
        width=cfg.width,
        epsilon=cfg.mining.epsilon,
        min_supp=cfg.mining.min_supp,
        seed=cfg.seed,
    )
    report.update(
        ledger={f"M={row['M']}": row["f1_ledger"] for row in rep.rows},
        details={"rows": rep.rows, "exponents": rep.exponents},
    )
    return EXIT_OK


def _write(text: str, output: str | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")


def run(cfg: RunConfig) -> int:
    """Execute a validated config, write its output and return the exit code."""
    started = time.perf_counter()
    try:
        if cfg.command == "generate":
            db = generate_synthetic(cfg.num_transactions, cfg.num_items, cfg.target_a, cfg.seed)
            _write(save_transactions(db, cfg.db_format), cfg.output)
            return EXIT_OK
        db = _load_db(cfg) if cfg.db_path is not None else None
    except (OSError, ParseError, UnicodeDecodeError) as exc:
        print(f"qarm: error: {exc}", file=sys.stderr)
        return EXIT_IO

    report = _empty_report(cfg)
    if cfg.command == "mine-classical":
        code = _run_classical(cfg, db, report)
    elif cfg.command == "mine-quantum":
        code = _run_quantum(cfg, db, report)
    elif cfg.command == "compare":
        code = _run_compare(cfg, db, report)
    elif cfg.command == "tomo-bench":
        try:
            code = _run_tomo_bench(cfg, db, report)
        except ValueError as exc:
            print(f"qarm: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    elif cfg.command == "scaling":
        code = _run_scaling(cfg, report)
    else:
        raise ValueError(f"unknown command {cfg.command!r}")
    if cfg.timings:
        report["timings"] = {"total_s": time.perf_counter() - started}
    try:
        _write(render_report(report), cfg.output)
    except OSError as exc:
        print(f"qarm: error: {exc}", file=sys.stderr)
        return EXIT_IO
    return code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
