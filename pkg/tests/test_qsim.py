import io
import math
import threading

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qarm import qsim
from qarm.dataset import TransactionDatabase, db_stats, support_matrix_bruteforce
from qarm.qsim import CostLedger, DensityOperator, PureState

from conftest import databases, random_db


def random_state(rng, layout):
    dims = [d for _, d in layout]
    v = rng.normal(size=math.prod(dims)) + 1j * rng.normal(size=math.prod(dims))
    return PureState.from_unnormalized(v, tuple(layout))


# ---------------------------------------------------------------- states


def test_pure_state_validation():
    with pytest.raises(ValueError):
        PureState(np.array([1.0, 1.0]), (("q", 2),))
    with pytest.raises(qsim.LayoutError):
        PureState(np.array([1.0, 0.0]), (("q", 3),))
    with pytest.raises(qsim.LayoutError):
        PureState(np.array([1.0, 0, 0, 0]), (("q", 2), ("q", 2)))


def test_density_validation():
    with pytest.raises(ValueError):
        DensityOperator(np.array([[0.5, 0.1], [0.0, 0.5]]))
    with pytest.raises(ValueError):
        DensityOperator(np.diag([0.7, 0.7]))
    with pytest.raises(ValueError):
        DensityOperator(np.diag([1.2, -0.2]))
    rho = DensityOperator(np.diag([0.75, 0.25]))
    assert rho.kappa() == pytest.approx(4.0)  # 1 / lambda_min
    assert rho.rank() == 2
    assert rho.frobenius_norm == pytest.approx(math.sqrt(0.625))


def test_partial_trace_matches_einsum():
    rng = np.random.default_rng(0)
    state = random_state(rng, [("a", 2), ("b", 3), ("c", 2)])
    t = state.tensor()
    want_b = np.einsum("abc,adc->bd", t, t.conj())
    np.testing.assert_allclose(qsim.reduced_density(state, "b").matrix, want_b, atol=1e-12)
    want_ac = np.einsum("abc,dbe->acde", t, t.conj()).reshape(4, 4)
    np.testing.assert_allclose(qsim.reduced_density(state, ["a", "c"]).matrix, want_ac, atol=1e-12)


@given(databases(max_n=6, max_m=5))
@settings(max_examples=40, deadline=None)
def test_phi3_reduced_density_is_s_over_a(db):
    from qarm.qminer import prepare_phi3

    phi3 = prepare_phi3(db)
    rho = qsim.reduced_density(phi3, "j").matrix
    s = support_matrix_bruteforce(db).values
    np.testing.assert_allclose(rho, s / db_stats(db).a, atol=1e-10)
    # the i register carries row weights |t_i| / W
    rows = qsim.reduced_density(phi3, "i").matrix
    np.testing.assert_allclose(np.diag(rows), db.bits.sum(axis=1) / db.bits.sum(), atol=1e-12)


def test_oracle_is_involution(ref_db):
    ledger = CostLedger()
    s0 = qsim.prepare_uniform(*ref_db.shape)
    s2 = qsim.apply_oracle(qsim.apply_oracle(s0, ref_db, ledger), ref_db, ledger)
    assert s2.distance(s0) < 1e-12
    assert ledger.oracle_calls == 2
    assert ledger.oracle_log_cost == pytest.approx(2 * math.log2(12))
    with pytest.raises(qsim.LayoutError):
        qsim.apply_oracle(qsim.prepare_uniform(3, 3), ref_db)


# ---------------------------------------------------------------- amplification


@pytest.mark.parametrize("p0,k", [(1 / 16, 3), (1 / 8, 2), (1 / 4, 1), (1 / 2, 0), (1.0, 0), (0.01, 7)])
def test_grover_iteration_count(p0, k):
    assert qsim.grover_iteration_count(p0) == k


def test_grover_count_rejects_empty():
    with pytest.raises(ValueError, match="no marked"):
        qsim.grover_iteration_count(0.0)


@pytest.mark.parametrize("marked", [1, 2, 5])
def test_amplify_matches_dense_grover_matrix(marked):
    n = 16
    s = np.full(n, 1 / math.sqrt(n))
    mask = np.zeros(n, dtype=bool)
    mask[:marked] = True
    oracle = np.diag(np.where(mask, -1.0, 1.0))
    g = (2 * np.outer(s, s) - np.eye(n)) @ oracle
    state = PureState(s.astype(complex), (("x", n),))
    for k in range(6):
        want = np.linalg.matrix_power(g, k) @ s
        got = qsim.amplitude_amplify(state, mask, k)
        np.testing.assert_allclose(got.amplitudes, want, atol=1e-12)
        p = qsim.marked_probability(got, mask)
        assert p == pytest.approx(qsim.grover_success_probability(marked / n, k), abs=1e-12)


def test_amplify_charges_oracle():
    state = qsim.prepare_uniform(2, 2)
    mask = np.zeros(8, dtype=bool)
    mask[0] = True
    ledger = CostLedger()
    qsim.amplitude_amplify(state, mask, 3, ledger=ledger, calls_per_iterate=2, db_shape=(2, 2))
    assert ledger.oracle_calls == 6
    with pytest.raises(ValueError):
        qsim.amplitude_amplify(state, np.zeros(8, dtype=bool), 1)


def test_postselect_and_repetitions():
    state = PureState(np.array([math.sqrt(0.75), math.sqrt(0.25)]), (("aux", 2),))
    ledger = CostLedger()
    post, p = qsim.postselect(state, "aux", 1, ledger)
    assert p == pytest.approx(0.25)
    assert ledger.postselect_attempts == 4
    assert abs(post.amplitude(1)) == pytest.approx(1.0)
    qsim.postselect(state, "aux", 1, ledger, amplified=True)
    assert ledger.postselect_attempts == 6
    with pytest.raises(qsim.PostselectionError):
        qsim.postselect(PureState(np.array([1.0, 0.0]), (("aux", 2),)), "aux", 1)


# ---------------------------------------------------------------- counting


def qpe_full_statevector(db, p):
    """Phase estimation of the Grover iterate on the whole i, j, flag space."""
    n, m = db.shape
    s = qsim.apply_oracle(qsim.prepare_uniform(n, m), db).amplitudes
    flag = np.tile([False, True], n * m)
    g = (2 * np.outer(s, s.conj()) - np.eye(s.size)) @ np.diag(np.where(flag, -1.0, 1.0))
    size = 2**p
    branches = [s]
    for _ in range(size - 1):
        branches.append(g @ branches[-1])
    branches = np.array(branches) / math.sqrt(size)
    tau = np.arange(size)
    kernel = np.exp(-2j * np.pi * np.outer(tau, tau) / size) / math.sqrt(size)
    out = kernel @ branches
    return np.sum(np.abs(out) ** 2, axis=1)


@pytest.mark.parametrize("p", [3, 4, 5])
def test_counting_distribution_matches_full_qpe(ref_db, p):
    want = qpe_full_statevector(ref_db, p)
    got = qsim.counting_distribution(int(ref_db.bits.sum()), ref_db.bits.size, p)
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_counting_error_bound_rate():
    rng = np.random.default_rng(2)
    hits = 0
    trials = 300
    for k in range(trials):
        db = random_db(rng, 16, 8, 2.0)
        w = int(db.bits.sum())
        w_hat = qsim.quantum_count_ones(db, 8, seed=k)
        hits += abs(w_hat - w) <= qsim.counting_error_bound(w, 128, 8)
    assert hits / trials >= 8 / math.pi**2


# ---------------------------------------------------------------- circuit pieces


def test_sine_register_values():
    reg = qsim.sine_time_register(4)
    np.testing.assert_allclose(reg.amplitudes.real, [0.27060, 0.65328, 0.65328, 0.27060], atol=5e-6)
    with pytest.raises(ValueError):
        qsim.sine_time_register(1)


def test_fourier_kernel_sign():
    t = 8
    rng = np.random.default_rng(1)
    state = random_state(rng, [("time", t)])
    y, tau = np.meshgrid(np.arange(t), np.arange(t), indexing="ij")
    kernel = np.exp(2j * np.pi * y * tau / t) / math.sqrt(t)
    fwd = qsim.fourier_register(state, "time", "forward")
    np.testing.assert_allclose(fwd.amplitudes, kernel @ state.amplitudes, atol=1e-12)
    back = qsim.fourier_register(fwd, "time", "inverse")
    assert back.distance(state) < 1e-12


def test_controlled_evolution_matches_expm():
    rng = np.random.default_rng(5)
    g = rng.normal(size=(3, 3))
    rho = DensityOperator.from_gram(g @ g.T)
    t, t0 = 4, 2.5
    state = random_state(rng, [("time", t), ("x", 3)])
    out = qsim.controlled_evolution(state, rho, t0, t, target="x", ledger=(ledger := CostLedger()))
    for tau in range(t):
        u = scipy.linalg.expm(-1j * rho.matrix * tau * t0 / t)
        np.testing.assert_allclose(out.tensor()[tau], u @ state.tensor()[tau], atol=1e-12)
    assert ledger.rho_copies == t
    undone = qsim.controlled_evolution(out, rho, t0, t, target="x", inverse=True)
    assert undone.distance(state) < 1e-12


def test_sliced_evolution_error_shrinks_with_t():
    rho = DensityOperator(np.diag([0.5, 0.3, 0.2]).astype(complex))
    base = qsim.sine_time_register(8)
    errs = []
    for t in (8, 32, 128):
        state = qsim.sine_time_register(t).kron(PureState(np.eye(3)[0].astype(complex), (("x", 3),)))
        exact = qsim.controlled_evolution(state, rho, 4.0, t, target="x")
        sliced = qsim.controlled_evolution(state, rho, 4.0, t, target="x", mode="sliced", seed=3)
        errs.append(exact.distance(sliced))
    assert base.dim("time") == 8
    assert errs[0] > errs[1] > errs[2]


# ---------------------------------------------------------------- sampling and ledger


def test_sampling_is_seeded_and_multinomial():
    rho = DensityOperator(np.diag([0.5, 0.25, 0.25]).astype(complex))
    a = qsim.sample_computational_basis(rho, 20000, seed=9)
    assert a == qsim.sample_computational_basis(rho, 20000, seed=9)
    assert sum(a.values()) == 20000
    assert a[0] / 20000 == pytest.approx(0.5, abs=0.015)
    par = qsim.sample_computational_basis(rho, 20000, seed=9, workers=4)
    assert sum(par.values()) == 20000
    assert par == qsim.sample_computational_basis(rho, 20000, seed=9, workers=4)
    state = PureState(np.array([0, 1, 0, 0], dtype=complex), (("a", 2), ("b", 2)))
    assert qsim.sample_computational_basis(state, 5, seed=0) == {(0, 1): 5}


def test_ledger_counters():
    ledger = CostLedger()
    assert ledger.is_zero()
    with pytest.raises(ValueError):
        ledger.add(shots=-1)
    with pytest.raises(KeyError):
        ledger.add(widgets=1)

    def work():
        for _ in range(1000):
            ledger.add(shots=1, rho_copies=2)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert ledger.shots == 8000 and ledger.rho_copies == 16000
    total = CostLedger.total(ledger, ledger)
    assert total.shots == 16000


@given(arrays(np.complex128, st.tuples(st.integers(1, 4), st.integers(1, 4)),
              elements=st.complex_numbers(max_magnitude=1e6, allow_nan=False, allow_infinity=False)))
@settings(max_examples=50, deadline=None)
def test_matrix_dump_round_trip(mat):
    buf = io.StringIO()
    qsim.dump_matrix(mat, buf)
    buf.seek(0)
    np.testing.assert_array_equal(qsim.load_matrix(buf), mat)
