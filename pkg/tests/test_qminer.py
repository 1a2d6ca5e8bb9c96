import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qarm import qminer, qsim, tomo
from qarm.classical import MiningConfig, apriori_f1, apriori_f2
from qarm.dataset import ItemSet, TransactionDatabase, db_stats, support_matrix_bruteforce
from qarm.qsim import CostLedger

from conftest import databases


def test_phi3_modes_agree_and_charge(ref_db):
    exact_ledger, grover_ledger = CostLedger(), CostLedger()
    a = qminer.prepare_phi3(ref_db, "exact", exact_ledger)
    b = qminer.prepare_phi3(ref_db, "grover", grover_ledger)
    assert a.distance(b) < 1e-12
    # W = 8 of NM = 12: p0 = 2/3, so exact postselection needs ceil(3/2) attempts
    assert exact_ledger.postselect_attempts == 2
    k, calls, attempts = qminer.phi3_copy_cost(8 / 12, 8 / 12, 1)
    assert k == qsim.grover_iteration_count(8 / 12) == 0
    assert grover_ledger.oracle_calls == calls
    with pytest.raises(ValueError):
        qminer.prepare_phi3(ref_db, "magic")


def test_phi3_copy_cost_closed_form():
    k, calls, attempts = qminer.phi3_copy_cost(1 / 16, 1 / 16, 10)
    success = math.sin(7 * math.asin(0.25)) ** 2
    assert k == 3
    assert attempts == math.ceil(10 / success)
    assert calls == math.ceil(70 / success)


def test_phi3_rejects_empty_database():
    db = TransactionDatabase(np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(qsim.PostselectionError):
        qminer.prepare_phi3(db)


@given(databases(max_n=8, max_m=5))
@settings(max_examples=40, deadline=None)
def test_exact_f1_supports_are_diagonal_of_s(db):
    est = qminer.estimate_f1_supports(db, MiningConfig(min_supp=0.5), exact=True)
    np.testing.assert_allclose(est.supports, np.diag(support_matrix_bruteforce(db).values), atol=1e-9)


def test_sampled_f1_uses_shot_budget(ref_db):
    cfg = MiningConfig(min_supp=0.5, epsilon=0.1)
    est = qminer.estimate_f1_supports(ref_db, cfg, seed=1, exact_a=True)
    assert est.shots == math.ceil(2.0**2 / 0.01)
    assert est.ledger.shots == est.shots
    counted = qminer.estimate_f1_supports(ref_db, cfg, seed=1)
    assert counted.ledger.oracle_calls >= 2**qminer.DEFAULT_PRECISION_BITS


def test_sigma_reference_case(ref_db):
    sigma, stats = qminer.build_sigma(ref_db, [0, 1])
    np.testing.assert_allclose(sigma.matrix, np.array([[3, 2], [2, 3]]) / 6, atol=1e-12)
    assert stats.a == 1.5
    B = sigma.frobenius_norm
    psi01 = sigma.matrix[0, 1].real / B
    assert B == pytest.approx(0.8498, abs=5e-5)
    assert psi01 == pytest.approx(0.3922, abs=5e-5)
    assert qminer.support_from_amplitude(psi01, B, stats.a) == pytest.approx(0.5, abs=1e-12)


def test_support_from_amplitude_validates():
    with pytest.raises(ValueError):
        qminer.support_from_amplitude(-0.1, 1.0, 1.0)


@given(databases(max_n=8, max_m=5), st.sampled_from([0.1, 0.3, 0.5]))
@settings(max_examples=40, deadline=None)
def test_exact_f2_matches_support_matrix(db, min_supp):
    cfg = MiningConfig(min_supp=min_supp)
    f1 = apriori_f1(db, cfg)
    est = qminer.estimate_f2_supports(db, f1, cfg, exact=True)
    s = support_matrix_bruteforce(db).values
    for pair in est.pairs:
        i, j = pair.items
        assert est.supports[pair] == pytest.approx(s[i, j], abs=1e-9)


@given(databases(max_n=8, max_m=5), st.sampled_from([0.1, 0.25, 0.5, 0.75]))
@settings(max_examples=40, deadline=None)
def test_exact_pipeline_equals_apriori(db, min_supp):
    cfg = MiningConfig(min_supp=min_supp)
    report = qminer.mine_full(db, cfg, exact=True)
    f1 = apriori_f1(db, cfg)
    assert {fs.itemset for fs in report.f1} == {fs.itemset for fs in f1}
    assert {fs.itemset for fs in report.f2} == {fs.itemset for fs in apriori_f2(db, f1, cfg)}
    assert report.matches_baseline()


def test_reference_pipeline_rules_and_flags(ref_db):
    cfg = MiningConfig(min_supp=0.5, epsilon=0.1)
    report = qminer.mine_full(ref_db, cfg, exact=True)
    assert [fs.itemset.items for fs in report.f2] == [(0, 1), (0, 2)]
    conf = {(r.antecedent.items, r.consequent.items): r.confidence for r in report.rules}
    assert conf[((0,), (1,))] == pytest.approx(2 / 3)
    # supports of exactly 0.5 sit on the threshold and are flagged
    assert ItemSet.of(2) in report.uncertainty_flags
    assert ItemSet.of(0, 1) in report.uncertainty_flags
    assert report.ledger.oracle_calls > 0


def test_all_zero_database_gives_empty_report():
    db = TransactionDatabase(np.zeros((3, 2), dtype=np.uint8))
    report = qminer.mine_full(db, MiningConfig(min_supp=0.1))
    assert report.f1 == [] and report.f2 == [] and report.ledger.is_zero()
    assert qminer.mine_f1_quantum(db, MiningConfig(min_supp=0.1)) == ([], CostLedger())


def test_supports_clipped_to_one():
    db = TransactionDatabase(np.ones((2, 2), dtype=np.uint8))
    est = qminer.estimate_f1_supports(db, MiningConfig(min_supp=0.5), shots=5, seed=0, exact_a=True)
    assert np.all(est.supports <= 1.0)
    # a = 2 and p = 1/2 per item, so any sampling imbalance overshoots 1
    assert est.clipped or np.allclose(est.supports, 1.0)


def test_circuit_mode_f2_on_reference(ref_db):
    cfg = MiningConfig(min_supp=0.3, epsilon=0.1)
    tcfg = tomo.TomoConfig(epsilon=0.1, epsilon_eff=0.1)
    est = qminer.estimate_f2_supports(ref_db, [0, 1], cfg, tcfg, seed=4, mode="circuit", exact_a=True)
    assert est.tomography.mode == "circuit"
    assert est.supports[ItemSet.of(0, 1)] == pytest.approx(0.5, abs=0.1)
    # sigma copies are paid for in oracle calls
    assert est.ledger.rho_copies > 0 and est.ledger.oracle_calls > 0


def test_scaling_report_needs_three_sizes():
    with pytest.raises(ValueError):
        qminer.ledger_scaling_report([4, 8])
    with pytest.raises(ValueError):
        qminer.ledger_scaling_report([2, 4, 8])


def test_loglog_slope():
    assert qminer.loglog_slope([1, 2, 4], [3, 6, 12]) == pytest.approx(1.0)
    assert qminer.loglog_slope([1, 4, 16], [1, 2, 4]) == pytest.approx(0.5)
