"""Probabilistic finite-state (Mealy) machines and repeated-word statistics.

For a machine with symbol matrices ``A(s)`` (``A(s)[i, j]`` is the probability
of moving from state ``i`` to ``j`` while emitting ``s``) the word matrix of
``w = s0 s1 ... s_{m-1}`` is the product ``A(s0) A(s1) ... A(s_{m-1})`` and

    P(w^k) = pi^T A(w)^k 1.

For a finite-state process that can keep emitting ``w`` without doing so
deterministically, ``P(w^k)^(1/k)`` tends (in the lim-sup sense) to the
spectral radius of ``A(w)``, which lies strictly inside ``(0, 1)``.  This
module computes those quantities and runs the ensemble convergence study.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .runstats import THREE_SYMBOL, TWO_SYMBOL, SymbolSequence

log = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-12
LOG_SPACE_STEPS = 64


class AlphabetError(KeyError):
    pass


class MachineError(ValueError):
    pass


class PossibilityConditionWarning(RuntimeWarning):
    """The word matrix is nilpotent: ``P(w^k)`` is eventually zero."""


class PossibilityConditionError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Machine:
    """Mealy machine with ``transitions[s, i, j] = A_ij(alphabet[s])``."""

    alphabet: tuple[str, ...]
    transitions: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alphabet", tuple(self.alphabet))
        t = _frozen(self.transitions)
        pi = _frozen(self.initial)
        object.__setattr__(self, "transitions", t)
        object.__setattr__(self, "initial", pi)
        if t.ndim != 3 or t.shape[1] != t.shape[2] or t.shape[0] != len(self.alphabet):
            raise MachineError(f"transitions shape {t.shape} inconsistent with alphabet")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise MachineError("duplicate alphabet symbols")
        if pi.shape != (t.shape[1],):
            raise MachineError("initial distribution has wrong length")
        if (t < 0).any() or (pi < 0).any():
            raise MachineError("negative probability")
        rows = t.sum(axis=(0, 2))
        if np.abs(rows - 1).max(initial=0) > STOCHASTIC_TOL:
            raise MachineError(f"state out-probabilities do not sum to 1: {rows}")
        if abs(pi.sum() - 1) > STOCHASTIC_TOL:
            raise MachineError("initial distribution does not sum to 1")

    @property
    def num_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def is_unifilar(self) -> bool:
        return bool(((self.transitions > 0).sum(axis=2) <= 1).all())

    def symbol_matrix(self, symbol: str) -> np.ndarray:
        try:
            return self.transitions[self.alphabet.index(symbol)]
        except ValueError:
            raise AlphabetError(f"symbol {symbol!r} not in alphabet {self.alphabet}") from None

    def total_matrix(self) -> np.ndarray:
        """State-to-state transition matrix, summed over emitted symbols."""
        return self.transitions.sum(axis=0)

    @classmethod
    def from_edges(cls, num_states, alphabet, edges, initial=None) -> "Machine":
        """Build from ``(from, symbol, to, prob)`` tuples; uniform ``initial`` by default."""
        alphabet = tuple(alphabet)
        t = np.zeros((len(alphabet), num_states, num_states))
        for i, s, j, prob in edges:
            if s not in alphabet:
                raise AlphabetError(f"symbol {s!r} not in alphabet {alphabet}")
            t[alphabet.index(s), i, j] += prob
        if initial is None:
            initial = np.full(num_states, 1.0 / num_states)
        return cls(alphabet, t, initial)

    def edges(self):
        s, i, j = np.nonzero(self.transitions)
        return [
            (int(a), self.alphabet[b], int(c), float(self.transitions[b, a, c]))
            for b, a, c in sorted(zip(s, i, j), key=lambda e: (e[1], e[0], e[2]))
        ]

    def to_json(self) -> dict:
        return {
            "states": self.num_states,
            "alphabet": list(self.alphabet),
            "initial": self.initial.tolist(),
            "transitions": [
                {"from": i, "symbol": s, "to": j, "prob": p} for i, s, j, p in self.edges()
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Machine":
        edges = [(e["from"], e["symbol"], e["to"], e["prob"]) for e in obj["transitions"]]
        return cls.from_edges(obj["states"], obj["alphabet"], edges, obj.get("initial"))


def load_machine(path) -> Machine:
    return Machine.from_json(json.loads(Path(path).read_text()))


def save_machine(machine: Machine, path) -> None:
    Path(path).write_text(json.dumps(machine.to_json(), indent=2) + "\n")


@dataclass(frozen=True, eq=False)
class WordMatrix:
    word: tuple[str, ...]
    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "word", tuple(self.word))
        object.__setattr__(self, "entries", _frozen(self.entries))

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def _as_word(word) -> tuple[str, ...]:
    w = tuple(word)
    if not w:
        raise ValueError("word must be non-empty")
    return w


def word_matrix(machine: Machine, word: Sequence[str] | str) -> WordMatrix:
    w = _as_word(word)
    m = machine.symbol_matrix(w[0]).copy()
    for s in w[1:]:
        m = m @ machine.symbol_matrix(s)
    return WordMatrix(w, m)


def _scaled_power(m: np.ndarray, k: int) -> tuple[np.ndarray, float]:
    """``m**k`` as ``(scaled, log_scale)`` via repeated squaring with renormalisation."""
    result = np.eye(m.shape[0])
    log_result = 0.0
    base, log_base = m.copy(), 0.0
    while k:
        if k & 1:
            result = result @ base
            log_result += log_base
            s = result.max()
            if s == 0:
                return result, -math.inf
            result /= s
            log_result += math.log(s)
        k >>= 1
        if k:
            base = base @ base
            log_base *= 2
            s = base.max()
            if s == 0:
                return np.zeros_like(m), -math.inf
            base /= s
            log_base += math.log(s)
    return result, log_result


def log_repeat_probability(machine: Machine, word, k: int) -> float:
    """``log P(w^k)``, ``-inf`` when the word cannot be repeated ``k`` times."""
    if k < 1:
        raise ValueError("k must be >= 1")
    wm = word_matrix(machine, word)
    scaled, log_scale = _scaled_power(wm.entries, k)
    total = float(machine.initial @ scaled.sum(axis=1))
    if total <= 0 or log_scale == -math.inf:
        return -math.inf
    return math.log(total) + log_scale


def repeat_probability(machine: Machine, word, k: int) -> float:
    """``P(w^k) = sum_ij pi_i (A(w)^k)_ij``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    w = _as_word(word)
    if k * len(w) <= LOG_SPACE_STEPS:
        wm = word_matrix(machine, w)
        return float(machine.initial @ np.linalg.matrix_power(wm.entries, k).sum(axis=1))
    return math.exp(log_repeat_probability(machine, w, k))


def log_repeat_probabilities(machine: Machine, word, k_max: int) -> np.ndarray:
    """``out[k] = log P(w^k)`` for ``k = 0..k_max`` (``out[0] = 0``)."""
    wm = word_matrix(machine, word).entries
    out = np.full(k_max + 1, -np.inf)
    out[0] = 0.0
    v = machine.initial.copy()
    acc = 0.0
    for k in range(1, k_max + 1):
        v = v @ wm
        s = v.sum()
        if s <= 0:
            break
        acc += math.log(s)
        v /= s
        out[k] = acc
    return out


# -- spectral radius --------------------------------------------------------

def _matrix_of(wm) -> np.ndarray:
    return wm.entries if isinstance(wm, WordMatrix) else np.asarray(wm, dtype=float)


def is_nilpotent(wm) -> bool:
    """True iff the positive-entry digraph is acyclic (so ``A^n = 0``)."""
    m = _matrix_of(wm)
    reach = (m > 0).astype(float)
    power = reach.copy()
    for _ in range(m.shape[0]):
        if not power.any():
            return True
        power = ((power @ reach) > 0).astype(float)
    return not power.any()


def _period(sub: np.ndarray) -> int:
    """Period of an irreducible non-negative matrix (gcd of cycle lengths)."""
    n = sub.shape[0]
    level = [-1] * n
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for v in frontier:
            for u in np.flatnonzero(sub[v] > 0):
                if level[u] < 0:
                    level[u] = level[v] + 1
                    nxt.append(int(u))
        frontier = nxt
    d = 0
    for v, u in zip(*np.nonzero(sub > 0)):
        d = math.gcd(d, level[v] + 1 - level[u])
    return max(d, 1)


def _irreducible_radius(sub: np.ndarray, tol: float, max_iter: int, stall_after: int) -> float:
    """Perron root of an irreducible block by power iteration on ``sub^d``.

    With ``d`` the period, ``sub^d`` has aperiodic irreducible diagonal
    blocks sharing the root ``rho^d``, so iteration from a positive vector
    converges.  Stopping uses the Collatz-Wielandt bracket
    ``min (Bx)_i/x_i <= rho(B) <= max (Bx)_i/x_i``, a guaranteed bound.
    """
    n = sub.shape[0]
    if n == 1:
        return float(sub[0, 0])
    d = _period(sub)
    b = np.linalg.matrix_power(sub, d) if d > 1 else sub
    x = np.full(n, 1.0 / n)
    cap = min(max_iter, stall_after) if n <= 64 else max_iter
    lam = 0.0
    for _ in range(cap):
        y = b @ x
        with np.errstate(divide="ignore", invalid="ignore"):
            r = y / x
        lo, hi = r.min(), r.max()
        lam = y.sum()
        if np.isfinite(hi) and hi - lo <= tol * lam:
            return float(lam) ** (1.0 / d)
        x = y / lam
    if n <= 64:
        return float(np.abs(np.linalg.eigvals(sub)).max())
    warnings.warn("power iteration did not converge", RuntimeWarning, stacklevel=3)
    return float(lam) ** (1.0 / d)


def spectral_radius(
    wm,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    stall_after: int = 2_000,
) -> float:
    """Largest eigenvalue modulus of a non-negative matrix.

    The radius is the largest Perron root over the communicating classes,
    each found by power iteration (see :func:`_irreducible_radius`) to
    relative accuracy ``tol``.  A class that has not converged after
    ``stall_after`` sweeps is handed to a dense QR eigensolve when it is at
    most 64x64.  A nilpotent matrix (no cycles) returns 0 with a
    :class:`PossibilityConditionWarning`.
    """
    m = _matrix_of(wm)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("square matrix required")
    if not np.isfinite(m).all() or (m < 0).any():
        raise ValueError("matrix must be finite and non-negative")
    rho = 0.0
    cyclic = False
    for comp in tarjan_scc(_successors(m)):
        if len(comp) == 1 and m[comp[0], comp[0]] <= 0:
            continue
        cyclic = True
        sub = m[np.ix_(comp, comp)]
        rho = max(rho, _irreducible_radius(sub, tol, max_iter, stall_after))
    if not cyclic:
        warnings.warn(
            "possibility condition violated: word matrix is nilpotent",
            PossibilityConditionWarning,
            stacklevel=2,
        )
    return rho


# -- class structure --------------------------------------------------------

def tarjan_scc(succ: Sequence[Sequence[int]]) -> list[list[int]]:
    """Strongly connected components (iterative Tarjan), in reverse topological order."""
    n = len(succ)
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] >= 0:
            continue
        work = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, pos = work[-1]
            if pos < len(succ[v]):
                work[-1] = (v, pos + 1)
                u = succ[v][pos]
                if index[u] < 0:
                    index[u] = low[u] = counter
                    counter += 1
                    stack.append(u)
                    on_stack[u] = True
                    work.append((u, 0))
                elif on_stack[u]:
                    low[v] = min(low[v], index[u])
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    u = stack.pop()
                    on_stack[u] = False
                    comp.append(u)
                    if u == v:
                        break
                comps.append(sorted(comp))
    return comps


def _successors(m: np.ndarray) -> list[list[int]]:
    return [list(np.flatnonzero(row > 0)) for row in m]


@dataclass(frozen=True)
class ClassDecomposition:
    classes: tuple[tuple[int, ...], ...]
    kinds: tuple[str, ...]  # "essential" | "inessential"
    self_communicating: tuple[bool, ...]
    nuisance_indices: tuple[int, ...]
    dag_edges: frozenset[tuple[int, int]]

    def essential(self) -> list[tuple[int, ...]]:
        return [c for c, k in zip(self.classes, self.kinds) if k == "essential"]


def decompose_classes(wm) -> ClassDecomposition:
    """Communicating-class structure of the positive-entry digraph.

    States with an all-zero out-row are nuisance indices.  Every other state
    falls in exactly one class; a class is essential when no edge leaves it
    (edges into nuisance indices count as leaving).
    """
    m = _matrix_of(wm)
    succ = _successors(m)
    nuisance = tuple(i for i, s in enumerate(succ) if not s)
    nset = set(nuisance)
    comps = [c for c in reversed(tarjan_scc(succ)) if not (len(c) == 1 and c[0] in nset)]
    comps.sort(key=lambda c: c[0])
    owner = {}
    for ci, c in enumerate(comps):
        for v in c:
            owner[v] = ci
    kinds, selfc, edges = [], [], set()
    for ci, c in enumerate(comps):
        leaves = False
        for v in c:
            for u in succ[v]:
                if u in nset:
                    leaves = True
                elif owner[u] != ci:
                    leaves = True
                    edges.add((ci, owner[u]))
        kinds.append("inessential" if leaves else "essential")
        selfc.append(len(c) > 1 or m[c[0], c[0]] > 0)
    return ClassDecomposition(
        tuple(tuple(c) for c in comps), tuple(kinds), tuple(selfc), nuisance, frozenset(edges)
    )


def is_strongly_connected(machine: Machine) -> bool:
    """Strong connectivity of the any-symbol transition graph."""
    return len(tarjan_scc(_successors(machine.total_matrix()))) == 1


# -- asymptotics ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DecayProfile:
    rho: float
    log_probabilities: np.ndarray  # index k -> log P(w^k)
    ratios: np.ndarray  # index k-1 -> P(w^{k+1}) / P(w^k), k = 1..horizon
    running_max: np.ndarray
    non_monotone: bool
    possible: bool


def asymptotic_decay(machine: Machine, word="C", horizon: int = 100) -> DecayProfile:
    """Spectral radius and successive ratios ``P(w^{k+1})/P(w^k)``.

    The ratio sequence is monotone for aperiodic class structure; periodic
    classes make it oscillate, reported via ``non_monotone`` with the running
    maximum alongside (the lim-sup form of the limit).
    """
    wm = word_matrix(machine, word)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PossibilityConditionWarning)
        rho = spectral_radius(wm)
    logp = log_repeat_probabilities(machine, word, horizon + 1)
    possible = rho > 0 and np.isfinite(logp[-1])
    if not possible:
        warnings.warn(
            "possibility condition violated for this word",
            PossibilityConditionWarning,
            stacklevel=2,
        )
    with np.errstate(invalid="ignore"):
        ratios = np.exp(np.diff(logp[1:]))
    ratios = np.nan_to_num(ratios, nan=0.0)
    d = np.diff(ratios)
    non_monotone = bool(possible and (d > 1e-12 * ratios[1:]).any() and (d < -1e-12 * ratios[1:]).any())
    return DecayProfile(
        rho, logp, ratios, np.maximum.accumulate(ratios), non_monotone, bool(possible)
    )


def windowed_decay_rate(machine: Machine, word="C", K: int | None = None) -> float:
    """``exp`` of the least-squares slope of ``log P(w^k)`` over ``k = K..2K``.

    A regression over the whole window averages out the bounded oscillation
    that periodic classes superimpose on the exponential decay; the two-point
    difference ``(log P(w^2K) - log P(w^K)) / K`` does not.
    """
    if K is None:
        K = 10 * machine.num_states
    if K < 1:
        raise ValueError("K must be >= 1")
    logp = log_repeat_probabilities(machine, word, 2 * K)
    window = logp[K:]
    if not np.isfinite(window).all():
        raise PossibilityConditionError("P(w^k) vanishes inside the window")
    k = np.arange(K, 2 * K + 1, dtype=float)
    kc = k - k.mean()
    return math.exp(float(kc @ (window - window.mean()) / (kc @ kc)))


def convergence_curves(machine: Machine, word="C", q: int = 10, k_horizon: int = 30, rho=None):
    """Arrays ``C(k)`` and ``Chat(q, k)`` for ``k = 1..k_horizon``.

    ``C(k) = P(w^k)^(1/k) / rho`` and
    ``Chat(q, k) = (P(w^{q+k}) / P(w^q))^(1/k) / rho``.
    """
    if rho is None:
        rho = spectral_radius(word_matrix(machine, word))
    if rho <= 0:
        raise PossibilityConditionError("spectral radius is zero")
    logp = log_repeat_probabilities(machine, word, q + k_horizon)
    if not np.isfinite(logp[q + k_horizon]):
        raise PossibilityConditionError("P(w^k) vanishes within the horizon")
    k = np.arange(1, k_horizon + 1)
    lr = math.log(rho)
    c = np.exp(logp[1:k_horizon + 1] / k - lr)
    chat = np.exp((logp[q + k] - logp[q]) / k - lr)
    return c, chat


def convergence_ratio(machine: Machine, word, k: int, rho=None) -> float:
    return float(convergence_curves(machine, word, 0, k, rho)[0][k - 1])


def convergence_ratio_offset(machine: Machine, word, q: int, k: int, rho=None) -> float:
    return float(convergence_curves(machine, word, q, k, rho)[1][k - 1])


# -- sampling ---------------------------------------------------------------

def unifilar_structure_count(p: int) -> int:
    """Number of two-symbol unifilar edge structures on ``p`` states, ``(2p + p^2)^p``."""
    return (2 * p + p * p) ** p


def _decode_structures(choice: np.ndarray, weight: np.ndarray, p: int):
    """Batched symbol matrices ``(AC, AR)`` from per-state structure codes.

    Code ``c`` in ``[0, p)``: single C edge to ``c``; ``[p, 2p)``: single R
    edge to ``c - p``; ``[2p, 2p + p^2)``: C edge to ``(c-2p)//p`` with weight
    ``w`` and R edge to ``(c-2p)%p`` with weight ``1 - w``.
    """
    shape = choice.shape  # (..., p)
    ac = np.zeros(shape + (p,))
    ar = np.zeros(shape + (p,))
    two = choice >= 2 * p
    c_only = choice < p
    r_only = (choice >= p) & ~two
    rest = choice - 2 * p
    c_target = np.where(c_only, choice, np.where(two, rest // p, 0))
    r_target = np.where(r_only, choice - p, np.where(two, rest % p, 0))
    c_prob = np.where(c_only, 1.0, np.where(two, weight, 0.0))
    r_prob = np.where(r_only, 1.0, np.where(two, 1.0 - weight, 0.0))
    np.put_along_axis(ac, c_target[..., None], c_prob[..., None], axis=-1)
    np.put_along_axis(ar, r_target[..., None], r_prob[..., None], axis=-1)
    return ac, ar


def _draw_structures(rng: np.random.Generator, p: int, size):
    choice = rng.integers(0, 2 * p + p * p, size=tuple(size) + (p,))
    weight = rng.uniform(0.0, 1.0, size=tuple(size) + (p,))
    weight = np.where(weight == 0.0, 0.5, weight)
    return choice, weight


def sample_unifilar(p: int, rng_seed=None) -> Machine:
    """Uniform draw over unifilar two-symbol structures, edge weights uniform on (0, 1)."""
    if p < 1:
        raise ValueError("p must be >= 1")
    rng = np.random.default_rng(rng_seed)
    choice, weight = _draw_structures(rng, p, ())
    ac, ar = _decode_structures(choice, weight, p)
    return Machine(("C", "R"), np.stack([ac, ar]), np.full(p, 1.0 / p))


def unifilar_structure(machine: Machine) -> tuple[int, ...]:
    """Per-state structure codes (inverse of the sampler's encoding)."""
    p = machine.num_states
    ac, ar = machine.symbol_matrix("C"), machine.symbol_matrix("R")
    codes = []
    for i in range(p):
        c = np.flatnonzero(ac[i] > 0)
        r = np.flatnonzero(ar[i] > 0)
        if len(c) and len(r):
            codes.append(2 * p + int(c[0]) * p + int(r[0]))
        elif len(c):
            codes.append(int(c[0]))
        else:
            codes.append(p + int(r[0]))
    return tuple(codes)


def simulate(machine: Machine, length: int, rng_seed=None, source: str = "") -> SymbolSequence:
    """Emit ``length`` symbols starting from a state drawn from ``pi``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if not set(machine.alphabet) <= set(THREE_SYMBOL):
        raise MachineError("simulate emits C/R/N sequences only")
    rng = np.random.default_rng(rng_seed)
    t = machine.transitions
    n_sym, p, _ = t.shape
    # per state: cumulative distribution over flattened (symbol, next state)
    flat = t.transpose(1, 0, 2).reshape(p, n_sym * p)
    cum = np.cumsum(flat, axis=1)
    cum[:, -1] = np.inf
    u = rng.random(length + 1)
    state = int(np.searchsorted(np.cumsum(machine.initial), u[0], side="right"))
    state = min(state, p - 1)
    out = []
    alphabet = machine.alphabet
    cum_rows = [row for row in cum]
    for x in u[1:]:
        idx = int(np.searchsorted(cum_rows[state], x, side="right"))
        sym, state = divmod(idx, p)
        out.append(alphabet[sym])
    symbols = "".join(out)
    mode = THREE_SYMBOL if "N" in machine.alphabet else TWO_SYMBOL
    return SymbolSequence(symbols, source, mode)


@dataclass(frozen=True, eq=False)
class ConvergenceSample:
    machine_id: int
    rho: float
    bin: int
    q: int
    C: np.ndarray = field(repr=False)
    Chat: np.ndarray = field(repr=False)
    machine: Machine = field(repr=False)


def _strongly_connected_batch(adj: np.ndarray) -> np.ndarray:
    p = adj.shape[-1]
    reach = (adj | np.eye(p, dtype=bool)).astype(np.float32)
    steps = 1
    while steps < p:
        reach = (np.matmul(reach, reach) > 0).astype(np.float32)
        steps *= 2
    return reach.all(axis=(-2, -1))


def _acyclic_batch(a: np.ndarray) -> np.ndarray:
    p = a.shape[-1]
    base = (a > 0).astype(np.float32)
    power = base
    for _ in range(p - 1):
        power = (np.matmul(power, base) > 0).astype(np.float32)
    return ~power.any(axis=(-2, -1))


def stratified_sample_by_radius(
    p: int,
    bins: int = 20,
    per_bin: int = 50,
    rng_seed=0,
    word="C",
    q: int | None = None,
    k_horizon: int = 30,
    attempt_budget: int = 1_000_000,
    batch: int = 4096,
) -> list[ConvergenceSample]:
    """Strongly connected unifilar machines, equal counts per ``rho`` bin.

    ``bins`` equal-width intervals cover ``(0, 1)``.  Candidates are drawn
    uniformly over structures and rejected if not strongly connected, if the
    word matrix is nilpotent (``rho = 0``), if ``rho = 1`` (deterministic
    repetition) or if their bin is full.  A bin still unfilled after
    ``attempt_budget`` consecutive unproductive draws is abandoned with a
    warning.  ``q`` defaults to ``p``.
    """
    if bins < 1 or per_bin < 1:
        raise ValueError("bins and per_bin must be positive")
    word = _as_word(word)
    q = p if q is None else q
    rng = np.random.default_rng(rng_seed)
    filled = [0] * bins
    samples: list[ConvergenceSample] = []
    since_progress = 0
    attempts = 0
    while min(filled) < per_bin and since_progress < attempt_budget:
        choice, weight = _draw_structures(rng, p, (batch,))
        ac, ar = _decode_structures(choice, weight, p)
        attempts += batch
        since_progress += batch
        t = np.stack([ac, ar], axis=1)  # (batch, 2, p, p)
        sym = {"C": 0, "R": 1}
        wmat = t[:, sym[word[0]]]
        for s in word[1:]:
            wmat = np.matmul(wmat, t[:, sym[s]])
        ok = _strongly_connected_batch((ac + ar) > 0) & ~_acyclic_batch(wmat)
        idx = np.flatnonzero(ok)
        if idx.size == 0:
            continue
        rough = np.abs(np.linalg.eigvals(wmat[idx])).max(axis=1)
        for i, r in zip(idx, rough):
            if r >= 1 - 1e-9:
                continue
            b = min(int(r * bins), bins - 1)
            if filled[b] >= per_bin:
                continue
            machine = Machine(("C", "R"), t[i], np.full(p, 1.0 / p))
            rho = spectral_radius(word_matrix(machine, word))
            if not 0 < rho < 1:
                continue
            b = min(int(rho * bins), bins - 1)
            if filled[b] >= per_bin:
                continue
            try:
                c, chat = convergence_curves(machine, word, q, k_horizon, rho)
            except PossibilityConditionError:
                continue
            samples.append(ConvergenceSample(len(samples), rho, b, q, c, chat, machine))
            filled[b] += 1
            since_progress = 0
            if min(filled) >= per_bin:
                break
    if min(filled) < per_bin:
        short = [b for b in range(bins) if filled[b] < per_bin]
        warnings.warn(
            f"bins {short} unfilled after {attempts} attempts", RuntimeWarning, stacklevel=2
        )
    log.debug("stratified sample: %d machines from %d attempts", len(samples), attempts)
    samples.sort(key=lambda s: (s.bin, s.machine_id))
    return samples


STUDY_HEADER = "rho_bin,k,median_C,median_Chat,lo1sigma,hi1sigma"


def summarize_convergence(samples: Sequence[ConvergenceSample], bins: int) -> list[dict]:
    """Per-bin (and pooled ``"all"``) medians and central-68% band of ``Chat`` per k."""
    rows = []
    groups = [(f"{b / bins:.3f}-{(b + 1) / bins:.3f}", [s for s in samples if s.bin == b])
              for b in range(bins)]
    groups.append(("all", list(samples)))
    for label, group in groups:
        if not group:
            continue
        c = np.array([s.C for s in group])
        chat = np.array([s.Chat for s in group])
        for k in range(c.shape[1]):
            lo, med, hi = np.percentile(chat[:, k], [15.865, 50, 84.135])
            rows.append({
                "rho_bin": label,
                "k": k + 1,
                "median_C": float(np.median(c[:, k])),
                "median_Chat": float(med),
                "lo1sigma": float(lo),
                "hi1sigma": float(hi),
            })
    return rows


def format_study_csv(rows: Sequence[dict]) -> str:
    lines = [STUDY_HEADER]
    for r in rows:
        lines.append(
            f"{r['rho_bin']},{r['k']},{r['median_C']:.10g},{r['median_Chat']:.10g},"
            f"{r['lo1sigma']:.10g},{r['hi1sigma']:.10g}"
        )
    return "\n".join(lines) + "\n"
