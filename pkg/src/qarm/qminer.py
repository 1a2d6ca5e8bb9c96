"""End-to-end quantum F1/F2 mining with resource accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import qsim, tomo
from .classical import (
    AssociationRule,
    FrequentSet,
    MiningConfig,
    apriori_f1,
    apriori_f2,
    candidate_join,
    derive_rules,
    is_frequent,
    near_threshold,
)
from .dataset import (
    DatabaseStats,
    ItemSet,
    TransactionDatabase,
    db_stats,
    generate_fixed_width,
    project_columns,
    support_matrix_bruteforce,
)
from .qsim import CostLedger, DensityOperator, PureState

PREP_MODES = ("exact", "grover")
TOMO_MODES = ("ideal", "circuit")
DEFAULT_PRECISION_BITS = 8


def _stage_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def phi3_copy_cost(p0_true: float, p0_assumed: float, copies: int) -> tuple[int, int, int]:
    """(grover iterations, oracle calls, attempts) for ``copies`` copies of |phi3>.

    Iterations are chosen from the assumed marked fraction; success uses the
    true one. Each attempt costs 1 + 2k oracle calls and succeeds with
    probability sin^2((2k+1) theta), so the expected totals are charged.
    """
    k = qsim.grover_iteration_count(p0_assumed)
    success = qsim.grover_success_probability(p0_true, k)
    attempts = math.ceil(copies / success - 1e-9)
    calls = math.ceil(copies * (1 + 2 * k) / success - 1e-9)
    return k, calls, attempts


def prepare_phi3(
    db: TransactionDatabase,
    mode: str = "exact",
    ledger: CostLedger | None = None,
    w_estimate: float | None = None,
    copies: int = 1,
) -> PureState:
    """sum_ij D_ij |i>|j> / sqrt(W), from uniform superposition and oracle.

    ``exact`` postselects the flag qubit directly (expected NM/W attempts);
    ``grover`` amplifies the flag-1 branch first, with the iteration count
    taken from ``w_estimate`` when given.
    """
    if mode not in PREP_MODES:
        raise ValueError(f"mode must be one of {PREP_MODES}")
    n, m = db.shape
    w = int(db.bits.sum())
    if w == 0:
        raise qsim.PostselectionError("postselection impossible: database has no ones")
    state = qsim.apply_oracle(qsim.prepare_uniform(n, m), db)
    flag_one = lambda i, j, flag: flag == 1  # noqa: E731
    p0 = w / (n * m)
    if mode == "grover":
        assumed = p0 if not w_estimate else min(1.0, w_estimate / (n * m))
        k, calls, attempts = phi3_copy_cost(p0, assumed, copies)
        state = qsim.amplitude_amplify(state, flag_one, k)
    else:
        attempts = math.ceil(copies / p0 - 1e-9)
        calls = attempts
    state, _ = qsim.postselect(state, "flag", 1)
    if ledger is not None:
        ledger.charge_oracle(calls, n, m)
        ledger.add(postselect_attempts=attempts, state_prep_units=copies)
    return qsim.drop_register(state, "flag")


@dataclass
class F1Estimate:
    supports: np.ndarray
    a_hat: float
    shots: int
    ledger: CostLedger
    clipped: list[int] = field(default_factory=list)


def estimate_f1_supports(
    db: TransactionDatabase,
    config: MiningConfig,
    shots: int | None = None,
    mode: str = "exact",
    seed: int = 0,
    *,
    exact: bool = False,
    exact_a: bool = False,
    precision_bits: int = DEFAULT_PRECISION_BITS,
) -> F1Estimate:
    """s_hat_ii = a_hat * p_hat_ii from N_q diagonal samples of rho = S / a."""
    ledger = CostLedger()
    n, m = db.shape
    w = int(db.bits.sum())
    if w == 0:
        return F1Estimate(np.zeros(m), 0.0, 0, ledger)
    seed_count, seed_shots = _stage_seeds(seed, 2)
    if exact or exact_a:
        w_hat = float(w)
    else:
        w_hat = qsim.quantum_count_ones(db, precision_bits, seed_count, ledger)
    a_hat = w_hat / n
    if exact:
        n_q = 0
    else:
        n_q = shots or max(1, math.ceil(a_hat**2 / config.epsilon**2 - 1e-9))
    phi3 = prepare_phi3(db, mode, ledger, w_estimate=w_hat, copies=max(1, n_q))
    rho = qsim.reduced_density(phi3, "j")
    if exact:
        p_hat = np.real(np.diag(rho.matrix))
    else:
        counts = qsim.sample_computational_basis(rho, n_q, seed_shots, ledger)
        p_hat = np.array([counts.get(i, 0) for i in range(m)]) / n_q
    supports = a_hat * p_hat
    clipped = [int(i) for i in np.flatnonzero(supports > 1.0)]
    return F1Estimate(np.minimum(supports, 1.0), a_hat, n_q, ledger, clipped)


def mine_f1_quantum(
    db: TransactionDatabase,
    config: MiningConfig,
    shots: int | None = None,
    mode: str = "exact",
    seed: int = 0,
    **kwargs,
) -> tuple[list[FrequentSet], CostLedger]:
    if int(db.bits.sum()) == 0:
        return [], CostLedger()
    est = estimate_f1_supports(db, config, shots, mode, seed, **kwargs)
    f1 = [
        FrequentSet(ItemSet((i,)), float(s), estimated=True)
        for i, s in enumerate(est.supports)
        if is_frequent(float(s), config.min_supp)
    ]
    return f1, est.ledger


def _items(f1: Sequence[FrequentSet | ItemSet | int]) -> list[int]:
    items = []
    for x in f1:
        if isinstance(x, (int, np.integer)):
            items.append(int(x))
            continue
        itemset = x.itemset if isinstance(x, FrequentSet) else x
        if len(itemset) != 1:
            raise ValueError(f"F1 must hold 1-itemsets, got {itemset}")
        items.append(itemset.items[0])
    return sorted(set(items))


def build_sigma(
    db: TransactionDatabase,
    f1: Sequence[FrequentSet | ItemSet | int],
    ledger: CostLedger | None = None,
) -> tuple[DensityOperator, DatabaseStats]:
    """sigma = D_f^T D_f / tr(D_f^T D_f) over the F1 columns, with a_f = W_f / N."""
    items = _items(f1)
    if not items:
        raise ValueError("F1 is empty")
    proj = project_columns(db, items)
    stats = db_stats(proj)
    if stats.avg_items_per_transaction > db_stats(db).avg_items_per_transaction:
        raise AssertionError("a_f exceeds a")
    phi3 = prepare_phi3(proj, "exact", ledger)
    return qsim.reduced_density(phi3, "j"), stats


def support_from_amplitude(psi_amplitude: float, B_hat: float, a_f: float) -> float:
    """S_bar_ij = a_f * B * psi_ij, since sigma_ij = B psi_ij and S_bar = a_f sigma."""
    if psi_amplitude < 0 or B_hat < 0 or a_f < 0:
        raise ValueError("inputs must be nonnegative")
    return a_f * B_hat * psi_amplitude


def significant_pair_count(db: TransactionDatabase, items: Sequence[int], min_supp: float) -> int:
    """Test-mode M1': true entries of S_bar at or above min_supp / 2."""
    s = support_matrix_bruteforce(db).values[np.ix_(items, items)]
    return max(1, int(np.sum(s >= min_supp / 2)))


@dataclass
class F2Estimate:
    pairs: list[ItemSet]
    supports: dict[ItemSet, float]
    a_f_hat: float
    m1_prime: int
    tomography: tomo.TomographyResult | None
    ledger: CostLedger
    clipped: list[ItemSet] = field(default_factory=list)


def default_tomo_config(config: MiningConfig) -> tomo.TomoConfig:
    """Low-rank branch with eps_eff = 0.25; only circuit mode reads it."""
    return tomo.TomoConfig(epsilon=config.epsilon, epsilon_eff=0.25)


def estimate_f2_supports(
    db: TransactionDatabase,
    f1: Sequence[FrequentSet | ItemSet | int],
    config: MiningConfig,
    tomo_config: tomo.TomoConfig | None = None,
    seed: int = 0,
    *,
    mode: str = "ideal",
    exact: bool = False,
    exact_a: bool = False,
    m1_prime: int | None = None,
    precision_bits: int = DEFAULT_PRECISION_BITS,
) -> F2Estimate:
    if mode not in TOMO_MODES:
        raise ValueError(f"mode must be one of {TOMO_MODES}")
    ledger = CostLedger()
    items = _items(f1)
    pairs = candidate_join([ItemSet((i,)) for i in items])
    if not pairs:
        return F2Estimate([], {}, 0.0, 0, None, ledger)
    proj = project_columns(db, items)
    if int(proj.bits.sum()) == 0:
        return F2Estimate(pairs, {p: 0.0 for p in pairs}, 0.0, 0, None, ledger)
    seed_count, seed_tomo = _stage_seeds(seed, 2)
    sigma, stats = build_sigma(db, items)
    if exact or exact_a:
        a_f = stats.a
    else:
        a_f = qsim.quantum_count_ones(proj, precision_bits, seed_count, ledger) / db.num_transactions
    if m1_prime is None:
        m1_prime = significant_pair_count(db, items, config.min_supp)
    tomo_config = tomo_config or default_tomo_config(config)
    tomo_ledger = CostLedger()
    result = tomo.pure_state_tomography(
        sigma, tomo_config, mode=mode, d_prime_hint=m1_prime, seed=seed_tomo, exact=exact, ledger=tomo_ledger
    )
    # each copy of sigma is one |phi3> preparation on the projected database
    if tomo_ledger.rho_copies:
        copy_ledger = CostLedger()
        prepare_phi3(proj, "grover", copy_ledger, copies=tomo_ledger.rho_copies)
        ledger.merge(copy_ledger)
    ledger.merge(tomo_ledger)

    psi = (result.elements / result.B_estimate) ** 2
    psi = np.sqrt((psi + psi.T) / 2)
    index = {item: k for k, item in enumerate(items)}
    supports: dict[ItemSet, float] = {}
    clipped = []
    for pair in pairs:
        i, j = (index[x] for x in pair.items)
        s = support_from_amplitude(float(psi[i, j]), result.B_estimate, a_f)
        if s > 1.0:
            clipped.append(pair)
            s = 1.0
        supports[pair] = s
    return F2Estimate(pairs, supports, a_f, m1_prime, result, ledger, clipped)


def mine_f2_quantum(
    db: TransactionDatabase,
    f1: Sequence[FrequentSet | ItemSet],
    config: MiningConfig,
    tomo_config: tomo.TomoConfig | None = None,
    seed: int = 0,
    **kwargs,
) -> tuple[list[FrequentSet], CostLedger]:
    est = estimate_f2_supports(db, f1, config, tomo_config, seed, **kwargs)
    f2 = [
        FrequentSet(pair, est.supports[pair], estimated=True)
        for pair in est.pairs
        if is_frequent(est.supports[pair], config.min_supp)
    ]
    return f2, est.ledger


@dataclass
class QuantumMiningReport:
    f1: list[FrequentSet]
    f2: list[FrequentSet]
    rules: list[AssociationRule]
    ledger: CostLedger
    uncertainty_flags: list[ItemSet]
    baseline_diff: dict[str, list[ItemSet]]
    clipped: list[ItemSet] = field(default_factory=list)

    def matches_baseline(self) -> bool:
        return not any(self.baseline_diff.values())


def _symmetric_diff(a: Sequence[FrequentSet], b: Sequence[FrequentSet]) -> list[ItemSet]:
    return sorted({x.itemset for x in a} ^ {x.itemset for x in b})


def mine_full(
    db: TransactionDatabase,
    config: MiningConfig,
    tomo_config: tomo.TomoConfig | None = None,
    seed: int = 0,
    *,
    prep_mode: str = "exact",
    tomo_mode: str = "ideal",
    exact: bool = False,
    exact_a: bool = False,
    f1_shots: int | None = None,
) -> QuantumMiningReport:
    """F1 by amplitude amplification and sampling, F2 by pure-state
    tomography of sigma, then classical rule derivation and a diff against
    Apriori."""
    if int(db.bits.sum()) == 0:
        return QuantumMiningReport([], [], [], CostLedger(), [], {"f1": [], "f2": []})
    seed1, seed2 = _stage_seeds(seed, 2)
    est1 = estimate_f1_supports(
        db, config, f1_shots, prep_mode, seed1, exact=exact, exact_a=exact_a
    )
    f1 = [
        FrequentSet(ItemSet((i,)), float(s), estimated=True)
        for i, s in enumerate(est1.supports)
        if is_frequent(float(s), config.min_supp)
    ]
    est2 = estimate_f2_supports(
        db, f1, config, tomo_config, seed2, mode=tomo_mode, exact=exact, exact_a=exact_a
    )
    f2 = [
        FrequentSet(pair, est2.supports[pair], estimated=True)
        for pair in est2.pairs
        if is_frequent(est2.supports[pair], config.min_supp)
    ]
    rules = derive_rules(f1, f2, config)
    flags = [ItemSet((i,)) for i, s in enumerate(est1.supports) if near_threshold(float(s), config)]
    flags += [pair for pair in est2.pairs if near_threshold(est2.supports[pair], config)]
    base_f1 = apriori_f1(db, config)
    base_f2 = apriori_f2(db, base_f1, config)
    diff = {"f1": _symmetric_diff(f1, base_f1), "f2": _symmetric_diff(f2, base_f2)}
    clipped = [ItemSet((i,)) for i in est1.clipped] + est2.clipped
    return QuantumMiningReport(
        f1, f2, rules, CostLedger.total(est1.ledger, est2.ledger), sorted(flags), diff, clipped
    )


@dataclass
class ScalingReport:
    rows: list[dict]
    exponents: dict[str, float]


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


def ledger_scaling_report(
    item_counts: Sequence[int],
    *,
    num_transactions: int = 64,
    width: int = 2,
    epsilon: float = 0.1,
    min_supp: float = 0.0,
    seed: int = 0,
) -> ScalingReport:
    """Sweep M at fixed a = width and fit log-log slopes of ledger counts.

    Databases come from :func:`generate_fixed_width`, so every transaction
    holds exactly ``width`` items and a is pinned across the sweep.
    """
    sizes = list(item_counts)
    if len(sizes) < 3 or len(set(sizes)) < 3:
        raise ValueError("scaling sweep needs at least 3 distinct sizes")
    if any(m <= width for m in sizes):
        raise ValueError(f"every M must exceed the transaction width {width}")
    config = MiningConfig(min_supp=min_supp, epsilon=epsilon)
    rows = []
    for k, m in enumerate(sizes):
        db = generate_fixed_width(num_transactions, m, width, seed + k)
        est1 = estimate_f1_supports(db, config, mode="grover", seed=seed + k)
        f1 = [ItemSet((i,)) for i, s in enumerate(est1.supports) if is_frequent(float(s), min_supp)]
        est2 = estimate_f2_supports(db, f1, config, seed=seed + k)
        counting_calls = 2**DEFAULT_PRECISION_BITS
        prep_calls = est1.ledger.oracle_calls - counting_calls
        rows.append(
            {
                "M": m,
                "N": num_transactions,
                "a": db_stats(db).a,
                "M1": len(f1),
                "M1_prime": est2.m1_prime,
                "f1_shots": est1.shots,
                "f1_prep_calls": prep_calls,
                "f1_prep_calls_per_copy": prep_calls / est1.shots,
                "f1_ledger": est1.ledger.as_dict(),
                "f2_shots": est2.ledger.shots,
                "f2_ledger": est2.ledger.as_dict(),
            }
        )
    ms = [r["M"] for r in rows]
    exponents = {
        "f1_prep_calls_vs_M": loglog_slope(ms, [r["f1_prep_calls_per_copy"] for r in rows]),
        "f1_shots_vs_M": loglog_slope(ms, [r["f1_shots"] for r in rows]),
    }
    primes = [r["M1_prime"] for r in rows]
    if len(set(primes)) >= 2:
        exponents["f2_shots_vs_M1_prime"] = loglog_slope(primes, [r["f2_shots"] for r in rows])
    return ScalingReport(rows, exponents)
