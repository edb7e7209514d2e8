"""Symbol sequences and bracketed run-length counts.

A coarse-grained edit history is a string over ``{C, R}`` (two-symbol mode)
or ``{C, R, N}`` (three-symbol mode, ``N`` marking a change of user).  The
statistic fitted downstream is ``N(RC^kR)``: the number of maximal runs of
``C`` bracketed on both sides by a delimiter.  Runs touching either end of the
sequence have no bracketing delimiter and are not counted.
"""

from __future__ import annotations

import io
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

TWO_SYMBOL = "CR"
THREE_SYMBOL = "CRN"

MODE_R = "R"
MODE_RN = "RN"

# counts[k] / N above this fraction is no longer a small-count Poisson regime
PROBABILITY_FLAG_FRACTION = 0.05


class SequenceError(ValueError):
    pass


@dataclass(frozen=True)
class SymbolSequence:
    symbols: str
    source: str = ""
    alphabet_mode: str = TWO_SYMBOL

    def __post_init__(self):
        if self.alphabet_mode not in (TWO_SYMBOL, THREE_SYMBOL):
            raise SequenceError(f"unknown alphabet mode {self.alphabet_mode!r}")
        bad = set(self.symbols) - set(self.alphabet_mode)
        if bad:
            raise SequenceError(
                f"symbols {sorted(bad)} not in alphabet {self.alphabet_mode!r}"
            )
        if self.alphabet_mode == THREE_SYMBOL and self.symbols:
            if self.symbols[0] == "N" or "NN" in self.symbols:
                raise SequenceError("N may not lead the sequence or repeat")

    def __len__(self):
        return len(self.symbols)

    def __str__(self):
        return self.symbols


@dataclass(frozen=True)
class RunHistogram:
    """Counts of bracketed runs, ``counts[k] = N(RC^kR)``.

    ``k = 0`` entries (adjacent delimiters) are kept for diagnostics; use
    :meth:`fit_counts` for the ``k >= 1`` part that enters likelihoods.
    """

    counts: Mapping[int, int]
    total_runs: int
    total_symbols: int
    delimiter_mode: str = MODE_R
    source: str = ""

    def __post_init__(self):
        clean = {int(k): int(v) for k, v in self.counts.items() if v}
        if any(k < 0 for k in clean) or any(v < 0 for v in clean.values()):
            raise SequenceError("run lengths and counts must be non-negative")
        if sum((k + 1) * v for k, v in clean.items()) > self.total_symbols:
            raise SequenceError("runs do not fit in total_symbols")
        object.__setattr__(self, "counts", dict(sorted(clean.items())))

    def fit_counts(self) -> dict[int, int]:
        return {k: v for k, v in self.counts.items() if k >= 1}

    @property
    def k_max(self) -> int:
        fc = self.fit_counts()
        return max(fc) if fc else 0

    def scaled(self, factor: int) -> "RunHistogram":
        """Every count (and the symbol total) multiplied by ``factor``."""
        return RunHistogram(
            {k: v * factor for k, v in self.counts.items()},
            self.total_runs * factor,
            self.total_symbols * factor,
            self.delimiter_mode,
            self.source,
        )


def _delimiters(mode: str) -> frozenset[str]:
    if mode == MODE_R:
        return frozenset("R")
    if mode == MODE_RN:
        return frozenset("RN")
    raise SequenceError(f"unknown delimiter mode {mode!r}")


def count_runs(seq: SymbolSequence | str, delimiter_mode: str = MODE_R) -> RunHistogram:
    """Histogram of ``delim C^k delim`` occurrences.

    In ``"R"`` mode an ``N`` symbol is transparent (neither C nor delimiter),
    so the user-change markers of a three-symbol sequence are ignored.
    """
    if isinstance(seq, str):
        seq = SymbolSequence(seq, alphabet_mode=THREE_SYMBOL if "N" in seq else TWO_SYMBOL)
    if not seq.symbols:
        raise SequenceError("empty sequence")
    delims = _delimiters(delimiter_mode)
    counts: dict[int, int] = {}
    run = None  # None until the first delimiter is seen
    for s in seq.symbols:
        if s in delims:
            if run is not None:
                counts[run] = counts.get(run, 0) + 1
            run = 0
        elif s == "C" and run is not None:
            run += 1
    total_symbols = len(seq.symbols)
    if delimiter_mode == MODE_R:
        total_symbols -= seq.symbols.count("N")
    return RunHistogram(
        counts, sum(counts.values()), total_symbols, delimiter_mode, seq.source
    )


def maximal_runs(seq: SymbolSequence | str, delimiter_mode: str = MODE_R) -> list[int]:
    """Lengths of every maximal C-run, boundary runs included (zero-length omitted)."""
    symbols = seq.symbols if isinstance(seq, SymbolSequence) else seq
    delims = _delimiters(delimiter_mode)
    runs, cur = [], 0
    for s in symbols:
        if s in delims:
            if cur:
                runs.append(cur)
            cur = 0
        elif s == "C":
            cur += 1
    if cur:
        runs.append(cur)
    return runs


def empirical_run_probability(hist: RunHistogram) -> dict[int, float]:
    """``P(RC^kR) ~ N(RC^kR) / N``; warns when a count is not small against N."""
    if hist.total_symbols <= 0:
        raise SequenceError("total_symbols must be positive")
    n = hist.total_symbols
    out = {k: v / n for k, v in hist.counts.items()}
    big = [k for k, v in hist.counts.items() if v > PROBABILITY_FLAG_FRACTION * n]
    if big:
        warnings.warn(
            f"counts at k={big} exceed {PROBABILITY_FLAG_FRACTION:g} N; "
            "independent-count approximation is poor",
            RuntimeWarning,
            stacklevel=2,
        )
    return out


def _user_of(record, index):
    user = record.get("user") if isinstance(record, Mapping) else getattr(record, "user", None)
    if user is None:
        raise SequenceError(f"record {index}: missing user field")
    return user


def augment_user_changes(records: Sequence, symbols: SymbolSequence | str) -> SymbolSequence:
    """Insert ``N`` between consecutive edits made by different users.

    ``records`` are aligned one-to-one with the two-symbol ``symbols``; each
    must expose a ``user`` (attribute or mapping key).
    """
    if isinstance(symbols, SymbolSequence):
        source, symbols = symbols.source, symbols.symbols
    else:
        source = ""
    if len(records) != len(symbols):
        raise SequenceError(
            f"{len(records)} records but {len(symbols)} symbols"
        )
    out = []
    prev = None
    for i, (rec, s) in enumerate(zip(records, symbols)):
        user = _user_of(rec, i)
        if i and user != prev:
            out.append("N")
        out.append(s)
        prev = user
    return SymbolSequence("".join(out), source, THREE_SYMBOL)


# -- file formats ---------------------------------------------------------

def write_sequence(seq: SymbolSequence, path) -> None:
    Path(path).write_text(seq.symbols + "\n")


def read_sequence(path, source: str | None = None) -> SymbolSequence:
    text = Path(path).read_text().strip()
    mode = THREE_SYMBOL if "N" in text else TWO_SYMBOL
    return SymbolSequence(text, source if source is not None else Path(path).stem, mode)


def format_histogram(hist: RunHistogram) -> str:
    buf = io.StringIO()
    buf.write(
        f"# total_symbols={hist.total_symbols} total_runs={hist.total_runs} "
        f"mode={hist.delimiter_mode}\n"
    )
    buf.write("k,count\n")
    for k, v in hist.counts.items():
        buf.write(f"{k},{v}\n")
    return buf.getvalue()


def write_histogram(hist: RunHistogram, path) -> None:
    Path(path).write_text(format_histogram(hist))


_HEADER = re.compile(r"#\s*total_symbols=(\d+)\s+total_runs=(\d+)\s+mode=(RN|R)\s*$")


def parse_histogram(lines: Iterable[str], source: str = "") -> RunHistogram:
    lines = [ln.strip() for ln in lines if ln.strip()]
    if not lines:
        raise SequenceError("empty histogram file")
    m = _HEADER.match(lines[0])
    if not m:
        raise SequenceError(f"bad histogram header: {lines[0]!r}")
    if lines[1:2] != ["k,count"]:
        raise SequenceError("missing 'k,count' column header")
    counts = {}
    for lineno, ln in enumerate(lines[2:], start=3):
        try:
            k, v = ln.split(",")
            counts[int(k)] = int(v)
        except ValueError:
            raise SequenceError(f"line {lineno}: expected 'k,count', got {ln!r}") from None
    return RunHistogram(counts, int(m[2]), int(m[1]), m[3], source)


def read_histogram(path) -> RunHistogram:
    with open(path) as fh:
        return parse_histogram(fh, source=Path(path).stem)
