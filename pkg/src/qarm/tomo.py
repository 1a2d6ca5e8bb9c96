"""Pure-state-based tomography.

A density matrix rho with nonnegative entries is turned into the pure state
|psi_rho> = sum_ik rho_ik |i>|k> / B, B = ||rho||_F, by applying rho (x) I to
the maximally entangled state via phase estimation, an eigenvalue-controlled
rotation, uncomputation and postselection. Computational-basis shots on
|psi_rho> then give rho_ik ~ B sqrt(p_ik).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import qsim
from .qsim import CostLedger, DensityOperator, PureState

BRANCHES = ("full-rank", "low-rank")
READOUTS = ("qpe", "ideal")
PAIR_LAYOUT_NAMES = ("row", "col")


def _next_pow2(x: float) -> int:
    return max(2, 1 << max(0, math.ceil(math.log2(max(x, 1.0)) - 1e-12)))


@dataclass(frozen=True)
class TomoConfig:
    """Accuracy knobs for the circuit. Unset ``t0``/``t`` get the defaults
    t0 = ceil(kappa / eps) (full rank) or ceil(1 / (eps_eff * eps)) (low rank)
    and t = smallest power of two >= t0^2 / eps.

    ``readout="ideal"`` replaces phase estimation by an eigenvalue register
    holding the exact eigenvalues, i.e. the idealized step-3 state.
    """

    epsilon: float = 0.1
    kappa: float | None = None
    epsilon_eff: float | None = None
    C: float = 1.0
    t0: int | None = None
    t: int | None = None
    branch: str | None = None
    evolution: str = "exact"
    readout: str = "qpe"
    slice_c: float = 1.0
    amplify: bool = False
    qpca_shots: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        branch = self.branch
        if branch is None:
            if self.kappa is not None and self.epsilon_eff is not None:
                raise ValueError("both kappa and epsilon_eff set: choose a branch explicitly")
            branch = "low-rank" if self.epsilon_eff is not None else "full-rank"
        if branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}")
        if branch == "low-rank" and self.epsilon_eff is None:
            raise ValueError("low-rank branch needs epsilon_eff")
        if self.kappa is not None and self.kappa < 1:
            raise ValueError("kappa must be >= 1")
        if self.epsilon_eff is not None and not 0 < self.epsilon_eff <= 1:
            raise ValueError("epsilon_eff must lie in (0, 1]")
        if not self.C > 0:
            raise ValueError("rotation constant C must be positive")
        if self.evolution not in ("exact", "sliced"):
            raise ValueError("evolution must be 'exact' or 'sliced'")
        if self.readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}")
        object.__setattr__(self, "branch", branch)
        t0 = self.t0
        if t0 is None:
            if branch == "full-rank":
                kappa = 1.0 if self.kappa is None else self.kappa
                t0 = math.ceil(kappa / self.epsilon - 1e-12)
            else:
                t0 = math.ceil(1.0 / (self.epsilon_eff * self.epsilon) - 1e-12)
            object.__setattr__(self, "t0", t0)
        if self.t is None:
            object.__setattr__(self, "t", _next_pow2(t0**2 / self.epsilon))
        if self.t < 2:
            raise ValueError("t must be at least 2")

    @property
    def grid_step(self) -> float:
        """Eigenvalue resolution of the phase register."""
        return 2 * math.pi / self.t0

    def eigenvalue_grid(self) -> np.ndarray:
        y = np.arange(self.t)
        signed = np.where(y < self.t / 2, y, y - self.t)
        return self.grid_step * signed

    def echo(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class CircuitPreparation:
    """Outcome of the six-step circuit.

    ``output`` is the two-register density operator after the eigenvalue
    register is erased and traced out; ``state`` is its principal
    eigenvector (equal to ``output`` whenever the erasure is clean).
    """

    state: PureState
    ledger: CostLedger
    success_probability: float
    output: DensityOperator
    repetitions: int

    @property
    def purity(self) -> float:
        return float(np.sum(self.output.eigenvalues**2))


@dataclass
class TomographyResult:
    elements: np.ndarray
    B_estimate: float
    eigenvalue_estimates: list[float]
    shots_used: int
    ledger: CostLedger
    mode: str
    flagged_eigenvalues: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "elements": self.elements.tolist(),
            "B": self.B_estimate,
            "eigenvalues": list(self.eigenvalue_estimates),
            "flagged_eigenvalues": list(self.flagged_eigenvalues),
            "shots": self.shots_used,
            "mode": self.mode,
            "ledger": self.ledger.as_dict(),
            "config": self.config,
        }


def _pair_layout(d: int) -> qsim.Layout:
    return ((PAIR_LAYOUT_NAMES[0], d), (PAIR_LAYOUT_NAMES[1], d))


def prepare_psi_ideal(rho: DensityOperator) -> PureState:
    """(rho (x) I) sum_k |k>|k>, normalized: amplitude (i, k) is rho_ik / B."""
    B = rho.frobenius_norm
    if B == 0:
        raise ValueError("zero operator")
    return PureState(rho.matrix.reshape(-1) / B, _pair_layout(rho.dim))


def bures_distance(output: DensityOperator | PureState, target: PureState) -> float:
    """sqrt(2 - 2 sqrt(F)), F = <target| output |target>.

    For a pure ``output`` this is the phase-optimal Euclidean distance.
    """
    if isinstance(output, PureState):
        return output.distance(target)
    v = target.amplitudes
    fid = float(np.real(np.vdot(v, output.matrix @ v)))
    return math.sqrt(max(0.0, 2.0 - 2.0 * math.sqrt(max(0.0, fid))))


def _check_branch(rho: DensityOperator, config: TomoConfig) -> None:
    if config.branch == "full-rank":
        if config.kappa is None:
            raise ValueError("full-rank branch needs kappa")
        lam_min = float(rho.eigenvalues[-1])
        if lam_min < 1.0 / config.kappa - 1e-12:
            raise ValueError(
                f"smallest eigenvalue {lam_min:.4g} is below 1/kappa = {1 / config.kappa:.4g}"
            )
    if config.C > 1.0 / float(rho.eigenvalues[0]) + 1e-12:
        raise ValueError("rotation constant C exceeds 1 / lambda_max")


def _rotation_amplitudes(estimates: np.ndarray, config: TomoConfig) -> np.ndarray:
    amp = np.clip(config.C * estimates, 0.0, 1.0)
    if config.branch == "low-rank":
        amp = np.where(estimates >= config.epsilon_eff, amp, 0.0)
    return amp


def _entangled_input(d: int) -> PureState:
    return PureState(np.eye(d).reshape(-1) / math.sqrt(d), _pair_layout(d))


def _principal_state(output: DensityOperator) -> PureState:
    vec = output.eigenvectors[:, 0]
    k = int(np.argmax(np.abs(vec)))
    vec = vec * np.exp(-1j * np.angle(vec[k]))
    return PureState(vec, _pair_layout(math.isqrt(output.dim)))


def prepare_psi_circuit(
    rho: DensityOperator,
    config: TomoConfig,
    ledger: CostLedger | None = None,
) -> CircuitPreparation:
    """Run the six-step preparation of |psi_rho> on the simulator.

    1. sine-weighted time register (x) sum_k |k>|k> / sqrt(d)
    2. controlled exp(-i rho tau t0 / t) on (time, row)
    3. Fourier transform of the time register -> eigenvalue register
    4. rotate an auxiliary qubit by C * lambda_hat
    5. uncompute steps 3 and 2 to erase the eigenvalue register
    6. postselect the auxiliary qubit on |1>
    """
    _check_branch(rho, config)
    d = rho.dim
    ledger = ledger if ledger is not None else CostLedger()

    if config.readout == "ideal":
        amp = _rotation_amplitudes(rho.eigenvalues, config)
        base = _entangled_input(d).tensor()
        vecs = rho.eigenvectors
        coeffs = vecs.conj().T @ base
        one = vecs @ (amp[:, None] * coeffs)
        zero = vecs @ (np.sqrt(1.0 - amp**2)[:, None] * coeffs)
        joint = PureState(np.stack([zero, one], axis=-1).reshape(-1), _pair_layout(d) + (("aux", 2),))
        post, prob = qsim.postselect(joint, "aux", 1)
        reps = qsim.expected_repetitions(prob, config.amplify)
        final = qsim.drop_register(post, "aux")
        output = qsim.reduced_density(final, PAIR_LAYOUT_NAMES)
        ledger.add(postselect_attempts=reps, state_prep_units=reps)
        return CircuitPreparation(final, ledger, prob, output, reps)

    t, t0 = config.t, config.t0
    state = qsim.sine_time_register(t).kron(_entangled_input(d))
    evolve = dict(
        target="row", mode=config.evolution, c=config.slice_c, seed=config.seed
    )
    state = qsim.controlled_evolution(state, rho, t0, t, **evolve)
    state = qsim.fourier_register(state, "time", "forward")

    amp = _rotation_amplitudes(config.eigenvalue_grid(), config)
    tensor = state.tensor()
    rotated = np.stack(
        [tensor * np.sqrt(1.0 - amp**2)[:, None, None], tensor * amp[:, None, None]], axis=-1
    )
    state = PureState(rotated.reshape(-1), state.layout + (("aux", 2),))

    state = qsim.fourier_register(state, "time", "inverse")
    state = qsim.controlled_evolution(state, rho, t0, t, inverse=True, **evolve)

    post, prob = qsim.postselect(state, "aux", 1)
    reps = qsim.expected_repetitions(prob, config.amplify)
    final = qsim.drop_register(post, "aux")
    output = qsim.reduced_density(final, PAIR_LAYOUT_NAMES)
    ledger.add(rho_copies=t * reps, postselect_attempts=reps, state_prep_units=reps)
    return CircuitPreparation(_principal_state(output), ledger, prob, output, reps)


def postselection_probability_exact(rho: DensityOperator, config: TomoConfig) -> float:
    """sum_j (C lambda_j)^2 / d over retained eigenvalues."""
    lam = rho.eigenvalues
    if config.branch == "low-rank":
        lam = lam[lam >= config.epsilon_eff]
    return float(np.sum(np.clip(config.C * lam, 0.0, 1.0) ** 2) / rho.dim)


def eigenvalue_register_distribution(rho: DensityOperator, config: TomoConfig) -> np.ndarray:
    """Born distribution of the eigenvalue register after steps 1-3 with rho
    itself (purified) as the analyzed state."""
    d, t = rho.dim, config.t
    lam, vecs = rho.eigenvalues, rho.eigenvectors
    purified = np.einsum("j,ij,kj->ik", np.sqrt(lam), vecs, vecs.conj())
    state = qsim.sine_time_register(t).kron(PureState(purified.reshape(-1), _pair_layout(d)))
    state = qsim.controlled_evolution(
        state, rho, config.t0, t, target="row", mode=config.evolution, c=config.slice_c, seed=config.seed
    )
    state = qsim.fourier_register(state, "time", "forward")
    return np.sum(np.abs(state.tensor()) ** 2, axis=(1, 2))


def qpca_eigenvalues(
    rho: DensityOperator,
    config: TomoConfig,
    shots: int,
    seed: int,
    ledger: CostLedger | None = None,
) -> list[tuple[float, float]]:
    """Sampled (lambda_hat, frequency) pairs on the phase grid, ascending.

    Eigenvalue j is read out with probability lambda_j, so frequencies
    estimate the eigenvalue weights.
    """
    probs = eigenvalue_register_distribution(rho, config)
    counts = np.random.default_rng(seed).multinomial(shots, probs / probs.sum())
    if ledger is not None:
        ledger.add(rho_copies=shots * (config.t + 1), shots=shots)
    grid = config.eigenvalue_grid()
    pairs = [(float(grid[y]), counts[y] / shots) for y in np.flatnonzero(counts)]
    return sorted(pairs)


def _split_at_valleys(group: list[tuple[float, float]], depth: float) -> list[list[tuple[float, float]]]:
    """Cut a run of adjacent grid points at every valley lower than ``depth``
    times the smaller of the two peaks around it."""
    w = [x for _, x in group]
    peaks = [k for k in range(len(w)) if (k == 0 or w[k] > w[k - 1]) and (k == len(w) - 1 or w[k] >= w[k + 1])]
    cuts = []
    left = peaks[0] if peaks else 0
    for right in peaks[1:]:
        valley = min(range(left, right + 1), key=lambda k: w[k])
        if w[valley] < depth * min(w[left], w[right]):
            cuts.append(valley)
            left = right
        elif w[right] > w[left]:
            left = right
    parts, start = [], 0
    for c in cuts:
        parts.append(group[start : c + 1])
        start = c + 1
    parts.append(group[start:])
    return [p for p in parts if p]


def cluster_eigenvalues(
    estimates: Sequence[tuple[float, float]], grid_step: float, valley_depth: float = 0.5
) -> list[tuple[float, float, int]]:
    """Merge grid-adjacent estimates into (lambda_hat, weight, multiplicity).

    Runs of adjacent grid points are split at pronounced valleys so that the
    leakage tails of two nearby eigenvalues do not fuse them. A cluster's
    weight is the summed frequency; because eigenvalue lambda is drawn with
    probability lambda, weight / lambda_hat counts how many eigenvalues fell
    into the cluster. Clusters where that count rounds to zero are
    phase-estimation leakage and are dropped.
    """
    runs: list[list[tuple[float, float]]] = []
    for lam, w in sorted(estimates):
        if runs and lam - runs[-1][-1][0] <= grid_step * 1.5:
            runs[-1].append((lam, w))
        else:
            runs.append([(lam, w)])
    out = []
    for run in runs:
        for group in _split_at_valleys(run, valley_depth):
            weight = sum(w for _, w in group)
            mean = sum(lam * w for lam, w in group) / weight
            if mean <= 0:
                continue
            mult = round(weight / mean)
            if mult >= 1:
                out.append((mean, weight, mult))
    return out


def eigenvalue_list(clusters: Sequence[tuple[float, float, int]]) -> list[float]:
    return sorted((lam for lam, _, mult in clusters for _ in range(mult)), reverse=True)


def estimate_B(eigen_estimates: Sequence[float], epsilon_eff: float | None = None) -> float:
    """sqrt(sum lambda^2) over retained eigenvalue estimates."""
    if len(eigen_estimates) == 0:
        raise ValueError("no eigenvalue estimates")
    lam = np.asarray(eigen_estimates, dtype=float)
    if np.any(lam < 0):
        raise ValueError("eigenvalue estimates must be nonnegative")
    if epsilon_eff is not None:
        lam = lam[lam >= epsilon_eff]
    return float(math.sqrt(np.sum(lam**2)))


def significant_count(state: PureState, epsilon: float) -> int:
    """Entries of a known pure state above eps / sqrt(2 d)."""
    d = state.dims[0]
    return int(np.sum(np.abs(state.amplitudes) > epsilon / math.sqrt(2 * d)))


def _probability_table(source: PureState | DensityOperator, d: int) -> np.ndarray:
    if isinstance(source, PureState):
        probs = source.probabilities()
    else:
        probs = np.clip(np.real(np.diag(source.matrix)), 0.0, None)
    if probs.size != d * d:
        raise ValueError(f"source has {probs.size} outcomes, expected {d * d}")
    return (probs / probs.sum()).reshape(d, d)


def reconstruct_elements(
    psi_source: PureState | DensityOperator,
    B_hat: float,
    d: int,
    d_prime_hint: int | None,
    epsilon: float,
    seed: int,
    *,
    signed: bool = False,
    exact: bool = False,
    bias_correction: bool = False,
    reference: PureState | None = None,
    ledger: CostLedger | None = None,
) -> TomographyResult:
    """rho_hat_ij = B_hat sqrt(p_hat_ij) from ceil(d'/eps^2) basis shots.

    ``exact=True`` substitutes the Born probabilities for sampled
    frequencies (the infinite-shot limit). Without ``d_prime_hint`` the
    significant-entry count of ``reference`` is used.
    """
    if signed:
        raise ValueError("estimator undefined for signed elements")
    ledger = ledger if ledger is not None else CostLedger()
    probs = _probability_table(psi_source, d)
    if exact:
        p_hat, shots = probs, 0
    else:
        if d_prime_hint is None:
            if reference is None:
                raise ValueError("d_prime_hint required when no reference state is known")
            d_prime_hint = significant_count(reference, epsilon)
        shots = math.ceil(max(1, d_prime_hint) / epsilon**2 - 1e-9)
        counts = np.random.default_rng(seed).multinomial(shots, probs.reshape(-1))
        p_hat = counts.reshape(d, d) / shots
        ledger.add(shots=shots, state_prep_units=shots)
    root = np.sqrt(p_hat)
    if bias_correction and shots:
        nz = p_hat > 0
        root = root.copy()
        root[nz] += (1 - p_hat[nz]) / (8 * shots * np.sqrt(p_hat[nz]))
    return TomographyResult(
        elements=B_hat * root,
        B_estimate=B_hat,
        eigenvalue_estimates=[],
        shots_used=shots,
        ledger=ledger,
        mode="ideal",
    )


def pure_state_tomography(
    rho: DensityOperator,
    config: TomoConfig,
    *,
    mode: str = "ideal",
    d_prime_hint: int | None = None,
    seed: int = 0,
    exact: bool = False,
    bias_correction: bool = False,
    ledger: CostLedger | None = None,
) -> TomographyResult:
    """Prepare |psi_rho>, estimate B and reconstruct the elements of rho.

    ideal mode uses the analytic |psi_rho> and exact spectrum; circuit mode
    runs the six-step preparation and reads eigenvalues by phase estimation.
    """
    if not rho.is_real_nonnegative():
        raise ValueError("estimator undefined for signed elements")
    ledger = ledger if ledger is not None else CostLedger()
    ss = np.random.SeedSequence(seed)
    seed_qpca, seed_shots = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    ideal = prepare_psi_ideal(rho)
    flagged: list[float] = []
    if mode == "ideal":
        source: PureState | DensityOperator = ideal
        eigs = [float(x) for x in rho.eigenvalues if x > 1e-12]
        B_hat = estimate_B(eigs)
    elif mode == "circuit":
        prep = prepare_psi_circuit(rho, config, ledger)
        source = prep.output
        pairs = qpca_eigenvalues(rho, config, config.qpca_shots, seed_qpca, ledger)
        eigs = eigenvalue_list(cluster_eigenvalues(pairs, config.grid_step))
        cutoff = config.epsilon_eff if config.branch == "low-rank" else None
        if cutoff is not None:
            flagged = [x for x in eigs if abs(x - cutoff) < config.grid_step]
        B_hat = estimate_B(eigs, cutoff)
    else:
        raise ValueError(f"mode must be 'ideal' or 'circuit', got {mode!r}")
    result = reconstruct_elements(
        source,
        B_hat,
        rho.dim,
        d_prime_hint,
        config.epsilon,
        seed_shots,
        exact=exact,
        bias_correction=bias_correction,
        reference=ideal,
        ledger=ledger,
    )
    return replace(
        result,
        eigenvalue_estimates=eigs,
        mode=mode,
        flagged_eigenvalues=flagged,
        config=config.echo(),
    )
