"""Dense state-vector / density-operator engine over named qudit registers.

Registers carry arbitrary dimensions (no padding to qubits). States are
immutable; every operation returns a new value. Resource usage is charged to
an optional :class:`CostLedger`.
"""

from __future__ import annotations

import math
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Callable, Sequence, Union

import numpy as np

NORM_TOL = 1e-10
POSTSELECT_MIN = 1e-14

Layout = tuple[tuple[str, int], ...]
Marker = Union[np.ndarray, Callable[..., np.ndarray]]


class LayoutError(ValueError):
    pass


class PostselectionError(RuntimeError):
    pass


@dataclass
class CostLedger:
    """Abstract resource counts standing in for the complexity table rows.

    ``oracle_log_cost`` accumulates log2(N*M) per oracle call: the simulator
    charges one unit per call and records the QRAM depth factor separately.
    """

    oracle_calls: int = 0
    rho_copies: int = 0
    shots: int = 0
    postselect_attempts: int = 0
    state_prep_units: int = 0
    oracle_log_cost: float = 0.0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    COUNTERS = ("oracle_calls", "rho_copies", "shots", "postselect_attempts", "state_prep_units")

    def add(self, **counts: int) -> None:
        for key, value in counts.items():
            if key not in self.COUNTERS:
                raise KeyError(f"unknown ledger counter {key!r}")
            if value < 0:
                raise ValueError(f"ledger counters only increase, got {key}={value}")
        with self._lock:
            for key, value in counts.items():
                setattr(self, key, getattr(self, key) + int(value))

    def charge_oracle(self, calls: int, num_transactions: int, num_items: int) -> None:
        if calls < 0:
            raise ValueError("negative oracle call count")
        log_cost = calls * math.log2(max(2, num_transactions * num_items))
        with self._lock:
            self.oracle_calls += int(calls)
            self.oracle_log_cost += log_cost

    def merge(self, other: "CostLedger") -> None:
        with self._lock:
            for key in self.COUNTERS:
                setattr(self, key, getattr(self, key) + getattr(other, key))
            self.oracle_log_cost += other.oracle_log_cost

    @classmethod
    def total(cls, *ledgers: "CostLedger") -> "CostLedger":
        out = cls()
        for ledger in ledgers:
            out.merge(ledger)
        return out

    def as_dict(self) -> dict:
        out = {key: getattr(self, key) for key in self.COUNTERS}
        out["oracle_log_cost"] = self.oracle_log_cost
        return out

    def is_zero(self) -> bool:
        return not any(getattr(self, key) for key in self.COUNTERS)


def _charge(ledger: CostLedger | None, **counts: int) -> None:
    if ledger is not None:
        ledger.add(**counts)


@dataclass(frozen=True, eq=False)
class PureState:
    """Unit vector over the tensor product of the registers in ``layout``."""

    amplitudes: np.ndarray
    layout: Layout

    def __post_init__(self):
        layout = tuple((str(name), int(dim)) for name, dim in self.layout)
        names = [name for name, _ in layout]
        if len(set(names)) != len(names):
            raise LayoutError(f"duplicate register names in {names}")
        if any(dim < 1 for _, dim in layout):
            raise LayoutError(f"register dimensions must be positive: {layout}")
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != math.prod(dim for _, dim in layout):
            raise LayoutError(f"{amps.size} amplitudes do not fit layout {layout}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state norm {norm} is not 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "layout", layout)

    @classmethod
    def from_unnormalized(cls, vector: np.ndarray, layout: Layout) -> "PureState":
        vector = np.asarray(vector, dtype=complex)
        norm = np.linalg.norm(vector)
        if norm == 0:
            raise ValueError("cannot normalize the zero vector")
        return cls(vector / norm, layout)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.layout)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(dim for _, dim in self.layout)

    def axis(self, register: str) -> int:
        try:
            return self.names.index(register)
        except ValueError:
            raise LayoutError(f"no register {register!r} in {self.names}") from None

    def dim(self, register: str) -> int:
        return self.dims[self.axis(register)]

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.dims)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def amplitude(self, *labels: int) -> complex:
        return complex(self.tensor()[labels])

    def kron(self, other: "PureState") -> "PureState":
        return PureState(np.kron(self.amplitudes, other.amplitudes), self.layout + other.layout)

    def with_tensor(self, tensor: np.ndarray, layout: Layout | None = None) -> "PureState":
        return PureState(tensor.reshape(-1), self.layout if layout is None else layout)

    def overlap(self, other: "PureState") -> complex:
        if self.dims != other.dims:
            raise LayoutError(f"dimension mismatch {self.dims} vs {other.dims}")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def distance(self, other: "PureState") -> float:
        """Euclidean distance minimized over global phase."""
        ov = self.overlap(other)
        phase = ov / abs(ov) if abs(ov) > 0 else 1.0
        return float(np.linalg.norm(self.amplitudes * phase - other.amplitudes))


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Hermitian, PSD, unit-trace matrix with a cached spectral decomposition."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError(f"density operator must be square, got {mat.shape}")
        if np.max(np.abs(mat - mat.conj().T), initial=0.0) > NORM_TOL:
            raise ValueError("density operator is not Hermitian")
        if abs(np.trace(mat) - 1.0) > NORM_TOL:
            raise ValueError(f"density operator trace {np.trace(mat).real} is not 1")
        mat = (mat + mat.conj().T) / 2
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        lowest = self._eigh[0][-1]
        if lowest < -NORM_TOL:
            raise ValueError(f"density operator has negative eigenvalue {lowest}")

    @classmethod
    def from_gram(cls, gram: np.ndarray) -> "DensityOperator":
        gram = np.asarray(gram, dtype=float)
        trace = np.trace(gram)
        if trace <= 0:
            raise ValueError("Gram matrix has zero trace")
        return cls(gram / trace)

    @classmethod
    def from_spectrum(cls, eigenvalues: Sequence[float], eigenvectors: np.ndarray) -> "DensityOperator":
        vecs = np.asarray(eigenvectors)
        return cls((vecs * np.asarray(eigenvalues)) @ vecs.conj().T)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def _eigh(self) -> tuple[np.ndarray, np.ndarray]:
        vals, vecs = np.linalg.eigh(self.matrix)
        order = np.argsort(vals)[::-1]
        return vals[order], vecs[:, order]

    @property
    def eigenvalues(self) -> np.ndarray:
        """Descending; round-off negatives clamped to 0."""
        return np.clip(self._eigh[0], 0.0, None)

    @property
    def eigenvectors(self) -> np.ndarray:
        """Columns match :attr:`eigenvalues`."""
        return self._eigh[1]

    def kappa(self, cutoff: float = 0.0) -> float:
        """1 / smallest eigenvalue above ``cutoff``."""
        kept = self.eigenvalues[self.eigenvalues > max(cutoff, 1e-12)]
        if kept.size == 0:
            raise ValueError(f"no eigenvalue above cutoff {cutoff}")
        return float(1.0 / kept.min())

    def rank(self, tol: float = 1e-10) -> int:
        return int(np.sum(self.eigenvalues > tol))

    @property
    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.matrix))

    def is_real_nonnegative(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.matrix.imag) <= tol) and np.all(self.matrix.real >= -tol))

    def function(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Apply ``f`` to the spectrum: V f(lambda) V^dagger."""
        vecs = self.eigenvectors
        return (vecs * f(self.eigenvalues)) @ vecs.conj().T


def _move_first(tensor: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    return np.moveaxis(tensor, list(axes), list(range(len(axes))))


def _move_back(tensor: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    return np.moveaxis(tensor, list(range(len(axes))), list(axes))


def apply_on_register(state: PureState, register: str, matrix: np.ndarray) -> PureState:
    """Apply a square matrix to one register (not checked for unitarity)."""
    ax = state.axis(register)
    if matrix.shape != (state.dims[ax], state.dims[ax]):
        raise LayoutError(f"matrix {matrix.shape} does not act on {register!r} of dim {state.dims[ax]}")
    out = np.tensordot(matrix, state.tensor(), axes=([1], [ax]))
    return PureState.from_unnormalized(np.moveaxis(out, 0, ax), state.layout)


def project_register(state: PureState, register: str, vector: np.ndarray) -> tuple[np.ndarray, Layout]:
    """Contract ``register`` with <vector|; returns the unnormalized remainder."""
    ax = state.axis(register)
    rest = np.tensordot(np.conj(vector), state.tensor(), axes=([0], [ax]))
    layout = tuple(reg for k, reg in enumerate(state.layout) if k != ax)
    return rest, layout


def drop_register(state: PureState, register: str) -> PureState:
    """Remove a register that sits in a single computational basis state."""
    ax = state.axis(register)
    probs = np.sum(np.moveaxis(np.abs(state.tensor()) ** 2, ax, 0).reshape(state.dims[ax], -1), axis=1)
    occupied = np.flatnonzero(probs > NORM_TOL)
    if occupied.size != 1:
        raise ValueError(f"register {register!r} is not in a basis state")
    basis = np.zeros(state.dims[ax])
    basis[occupied[0]] = 1.0
    rest, layout = project_register(state, register, basis)
    return PureState.from_unnormalized(rest, layout)


def basis_state(layout: Layout, labels: Sequence[int]) -> PureState:
    dims = [dim for _, dim in layout]
    vec = np.zeros(dims, dtype=complex)
    vec[tuple(labels)] = 1.0
    return PureState(vec.reshape(-1), layout)


def prepare_uniform(N: int, M: int) -> PureState:
    """(sum_i |i>)(sum_j |j>)|0> / sqrt(NM)."""
    if N < 1 or M < 1:
        raise ValueError("N and M must be positive")
    tensor = np.zeros((N, M, 2), dtype=complex)
    tensor[:, :, 0] = 1.0 / math.sqrt(N * M)
    return PureState(tensor.reshape(-1), (("i", N), ("j", M), ("flag", 2)))


def apply_oracle(state: PureState, db, ledger: CostLedger | None = None) -> PureState:
    """|i>|j>|b> -> |i>|j>|b XOR D_ij>."""
    n, m = db.shape
    try:
        axes = [state.axis("i"), state.axis("j"), state.axis("flag")]
    except LayoutError as exc:
        raise LayoutError(f"oracle needs registers i, j, flag: {exc}") from None
    dims = [state.dims[a] for a in axes]
    if dims != [n, m, 2]:
        raise LayoutError(f"oracle expects dims (i={n}, j={m}, flag=2), got {dims}")
    tensor = _move_first(state.tensor(), axes)
    out = tensor.copy()
    ones = db.bits.astype(bool)
    out[ones, 0] = tensor[ones, 1]
    out[ones, 1] = tensor[ones, 0]
    if ledger is not None:
        ledger.charge_oracle(1, n, m)
    return state.with_tensor(_move_back(out, axes))


def grover_iteration_count(p0: float) -> int:
    """Iterations maximizing success: round(pi / (4 theta) - 1/2), ties down."""
    if p0 <= 0:
        raise ValueError("no marked elements")
    if p0 > 1:
        raise ValueError(f"marked fraction {p0} exceeds 1")
    theta = math.asin(math.sqrt(p0))
    x = math.pi / (4 * theta) - 0.5
    k = math.ceil(x - 0.5 - 1e-9)
    return max(0, k)


def grover_success_probability(p0: float, k: int) -> float:
    theta = math.asin(math.sqrt(p0))
    return math.sin((2 * k + 1) * theta) ** 2


def _marker_mask(state: PureState, marker: Marker) -> np.ndarray:
    if callable(marker):
        mask = np.asarray(marker(*np.indices(state.dims)), dtype=bool)
        mask = np.broadcast_to(mask, state.dims)
    else:
        mask = np.asarray(marker, dtype=bool)
    return mask.reshape(-1)


def marked_probability(state: PureState, marker: Marker) -> float:
    return float(np.sum(state.probabilities()[_marker_mask(state, marker)]))


def amplitude_amplify(
    state: PureState,
    marker: Marker,
    k: int,
    *,
    reference: PureState | None = None,
    ledger: CostLedger | None = None,
    calls_per_iterate: int = 0,
    db_shape: tuple[int, int] = (1, 1),
) -> PureState:
    """Apply k Grover iterates G = (2|s><s| - I) S_marked.

    ``reference`` is |s> = A|0>; it defaults to ``state`` itself, which is
    the usual case of amplifying freshly prepared A|0>. When A contains the
    database oracle, pass ``calls_per_iterate=2`` (A and A^dagger) so the
    ledger sees the oracle traffic.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    mask = _marker_mask(state, marker)
    if not np.any(np.abs(state.amplitudes[mask]) > 0):
        raise ValueError("marker selects no basis state with nonzero amplitude")
    s = (reference or state).amplitudes
    vec = state.amplitudes.copy()
    for _ in range(k):
        vec[mask] *= -1
        vec = 2 * s * np.vdot(s, vec) - vec
    if ledger is not None and calls_per_iterate and k:
        ledger.charge_oracle(calls_per_iterate * k, *db_shape)
    return PureState.from_unnormalized(vec, state.layout)


def expected_repetitions(probability: float, amplified: bool = False) -> int:
    if amplified:
        return math.ceil(1.0 / math.sqrt(probability) - 1e-12)
    return math.ceil(1.0 / probability - 1e-12)


def postselect(
    state: PureState,
    register: str,
    outcome: int,
    ledger: CostLedger | None = None,
    amplified: bool = False,
) -> tuple[PureState, float]:
    """Condition ``register`` on ``outcome``; the register stays in the layout.

    The ledger receives the expected number of repeat-until-success attempts,
    1/p, or ceil(1/sqrt(p)) when the caller amplifies the success branch.
    """
    ax = state.axis(register)
    if not 0 <= outcome < state.dims[ax]:
        raise LayoutError(f"outcome {outcome} outside register {register!r}")
    tensor = np.moveaxis(state.tensor(), ax, 0)
    kept = np.zeros_like(tensor)
    kept[outcome] = tensor[outcome]
    prob = float(np.sum(np.abs(kept) ** 2))
    if prob < POSTSELECT_MIN:
        raise PostselectionError(f"postselection impossible: P({register}={outcome}) = {prob:.3e}")
    _charge(ledger, postselect_attempts=expected_repetitions(prob, amplified))
    out = np.moveaxis(kept, 0, ax) / math.sqrt(prob)
    return state.with_tensor(out), prob


def reduced_density(state: PureState, register: str | Sequence[str]) -> DensityOperator:
    """Partial trace over every register not named."""
    keep = [register] if isinstance(register, str) else list(register)
    axes = [state.axis(r) for r in keep]
    dim = math.prod(state.dims[a] for a in axes)
    mat = _move_first(state.tensor(), axes).reshape(dim, -1)
    return DensityOperator(mat @ mat.conj().T)


def _born_distribution(source: DensityOperator | PureState) -> tuple[np.ndarray, tuple[int, ...] | None]:
    if isinstance(source, DensityOperator):
        probs = np.clip(np.real(np.diag(source.matrix)), 0.0, None)
        return probs / probs.sum(), None
    probs = source.probabilities()
    return probs / probs.sum(), source.dims


def sample_computational_basis(
    source: DensityOperator | PureState,
    shots: int,
    seed: int | np.random.SeedSequence,
    ledger: CostLedger | None = None,
    workers: int = 1,
) -> Counter:
    """Draw ``shots`` i.i.d. computational-basis outcomes.

    Labels are ints for a density operator and tuples of register indices for
    a pure state. With ``workers > 1`` the shots are split across independent
    substreams spawned from ``seed``; the aggregate is still multinomial.
    """
    if shots < 1:
        raise ValueError("shots must be positive")
    probs, dims = _born_distribution(source)
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    if workers <= 1:
        counts = np.random.default_rng(seq).multinomial(shots, probs)
    else:
        parts = [shots // workers + (w < shots % workers) for w in range(workers)]
        streams = seq.spawn(workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(
                lambda job: np.random.default_rng(job[0]).multinomial(job[1], probs),
                zip(streams, parts),
            )
            counts = np.sum(list(results), axis=0)
    _charge(ledger, shots=shots)
    out: Counter = Counter()
    for flat in np.flatnonzero(counts):
        label = int(flat) if dims is None else tuple(int(x) for x in np.unravel_index(flat, dims))
        out[label] = int(counts[flat])
    return out


def sine_time_register(t: int, name: str = "time") -> PureState:
    """sqrt(2/t) sin(pi (tau + 1/2) / t) over tau = 0..t-1."""
    if t < 2:
        raise ValueError(f"sine register needs t >= 2, got {t}")
    tau = np.arange(t)
    amps = math.sqrt(2.0 / t) * np.sin(np.pi * (tau + 0.5) / t)
    return PureState(amps, ((name, t),))


def random_hermitian_direction(d: int, seed: int) -> np.ndarray:
    """Hermitian matrix of unit spectral norm, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    h = (g + g.conj().T) / 2
    return h / np.linalg.norm(h, 2)


def controlled_evolution(
    state: PureState,
    rho: DensityOperator,
    t0: float,
    t: int,
    *,
    target: str,
    time_register: str = "time",
    mode: str = "exact",
    c: float = 1.0,
    seed: int = 0,
    inverse: bool = False,
    ledger: CostLedger | None = None,
) -> PureState:
    """sum_tau |tau><tau| (x) exp(-i rho tau t0 / t) on (time, target).

    ``sliced`` composes tau copies of a one-slice map whose generator carries
    an extra c (t0/t)^2 H term, H a fixed random Hermitian direction of unit
    norm. That emulates the O(t0^2/t) density-matrix-exponentiation error.
    """
    if mode not in ("exact", "sliced"):
        raise ValueError(f"unknown evolution mode {mode!r}")
    ta, xa = state.axis(time_register), state.axis(target)
    if state.dims[ta] != t:
        raise LayoutError(f"time register has dim {state.dims[ta]}, expected {t}")
    d = rho.dim
    if state.dims[xa] != d:
        raise LayoutError(f"target register {target!r} has dim {state.dims[xa]}, rho is {d}x{d}")
    delta = t0 / t
    if mode == "exact":
        vals, vecs = rho.eigenvalues, rho.eigenvectors
        gen_vals = vals * delta
    else:
        generator = rho.matrix * delta + c * delta**2 * random_hermitian_direction(d, seed)
        gen_vals, vecs = np.linalg.eigh(generator)
    sign = 1.0 if inverse else -1.0
    phases = np.exp(sign * 1j * np.outer(np.arange(t), gen_vals))
    tensor = _move_first(state.tensor(), [ta, xa])
    shape = tensor.shape
    flat = tensor.reshape(t, d, -1)
    coeffs = np.einsum("ji,tjr->tir", vecs.conj(), flat)
    coeffs *= phases[:, :, None]
    flat = np.einsum("ij,tjr->tir", vecs, coeffs)
    _charge(ledger, rho_copies=t)
    return state.with_tensor(_move_back(flat.reshape(shape), [ta, xa]))


def fourier_register(state: PureState, register: str, direction: str = "forward") -> PureState:
    """Unitary DFT on one register; forward kernel exp(+2 pi i y tau / T) / sqrt(T)."""
    ax = state.axis(register)
    if direction == "forward":
        out = np.fft.ifft(state.tensor(), axis=ax, norm="ortho")
    elif direction == "inverse":
        out = np.fft.fft(state.tensor(), axis=ax, norm="ortho")
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return state.with_tensor(out)


def grover_rotation(theta: float) -> np.ndarray:
    """Grover iterate restricted to span{|good>, |bad>}."""
    c, s = math.cos(2 * theta), math.sin(2 * theta)
    return np.array([[c, s], [-s, c]])


def counting_distribution(w: int, total: int, precision_bits: int) -> np.ndarray:
    """Readout distribution of the phase register when counting ``w`` marked
    states out of ``total``.

    The Grover iterate acts on the two-dimensional span of the marked and
    unmarked components, so phase estimation is simulated exactly there: a
    2^p-point uniform control register, controlled powers of the iterate and
    an inverse Fourier transform.
    """
    if precision_bits < 3:
        raise ValueError("quantum counting needs at least 3 precision bits")
    if not 0 <= w <= total:
        raise ValueError(f"marked count {w} outside 0..{total}")
    size = 2**precision_bits
    theta = math.asin(math.sqrt(w / total))
    g = grover_rotation(theta)
    branch = np.empty((size, 2))
    branch[0] = (math.sin(theta), math.cos(theta))
    for tau in range(1, size):
        branch[tau] = g @ branch[tau - 1]
    state = PureState(branch.reshape(-1) / math.sqrt(size), (("phase", size), ("span", 2)))
    state = fourier_register(state, "phase", "inverse")
    probs = np.sum(np.abs(state.tensor()) ** 2, axis=1)
    return probs / probs.sum()


def quantum_count_ones(
    db,
    precision_bits: int,
    seed: int,
    ledger: CostLedger | None = None,
) -> float:
    """Estimate W from one phase-estimation readout y: NM sin^2(pi y / 2^p)."""
    n, m = db.shape
    total = n * m
    probs = counting_distribution(int(db.bits.sum()), total, precision_bits)
    size = probs.size
    y = int(np.random.default_rng(seed).choice(size, p=probs))
    if ledger is not None:
        ledger.charge_oracle(size, n, m)
    return total * math.sin(math.pi * y / size) ** 2


def counting_error_bound(w: float, total: int, precision_bits: int) -> float:
    """|W_hat - W| bound holding with probability >= 8/pi^2."""
    size = 2**precision_bits
    return 2 * math.pi * math.sqrt(w * (total - w)) / size + math.pi**2 * total / size**2


def dump_matrix(array: np.ndarray, stream: IO[str]) -> None:
    """Row-major text dump with a dims header; values round-trip exactly."""
    arr = np.asarray(array, dtype=complex)
    if arr.ndim == 1:
        arr = arr[None, :]
    rows, cols = arr.shape
    stream.write(f"# qarm-matrix {rows} {cols} complex\n")
    for row in arr:
        stream.write(" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row) + "\n")


def load_matrix(stream: IO[str]) -> np.ndarray:
    header = stream.readline().split()
    if len(header) != 5 or header[:2] != ["#", "qarm-matrix"] or header[4] != "complex":
        raise ValueError(f"bad matrix header {' '.join(header)!r}")
    rows, cols = int(header[2]), int(header[3])
    out = np.empty((rows, cols), dtype=complex)
    for r in range(rows):
        cells = stream.readline().split()
        if len(cells) != cols:
            raise ValueError(f"row {r} has {len(cells)} cells, expected {cols}")
        for c, cell in enumerate(cells):
            re, im = cell.split(",")
            out[r, c] = complex(float(re), float(im))
    return out
