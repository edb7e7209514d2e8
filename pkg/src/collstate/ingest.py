"""Revision histories: parsing, fetching, revert detection and coarse-graining.

A revision is a revert (``R``) when its content SHA1 equals that of some
strictly earlier revision, unless it only restores the immediately
preceding state (a no-op edit) or undoes nothing but edits by its own
author (a self-revert).  Everything else is cooperative (``C``).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import httpx

from .runstats import SymbolSequence, TWO_SYMBOL, augment_user_changes

log = logging.getLogger(__name__)

SHA1_RE = re.compile(r"^[0-9a-f]{40}$")
REVERT_COMMENT_RE = re.compile(r"([Rr][v]+[\ \n]|[Uu]ndid|[Rr]evert)")


class IngestError(ValueError):
    pass


class FetchError(RuntimeError):
    """Network failure after retries; carries what was fetched so far."""

    def __init__(self, message, partial: "PageHistory | None" = None, cursor_path=None):
        super().__init__(message)
        self.partial = partial
        self.cursor_path = cursor_path


class ApiError(RuntimeError):
    def __init__(self, payload: dict):
        super().__init__(json.dumps(payload, sort_keys=True))
        self.payload = payload


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True, slots=True)
class RevisionRecord:
    timestamp: datetime
    user: str
    sha1: str | None
    comment: str = ""
    revision_id: int | None = None

    def __post_init__(self):
        if self.sha1 is not None:
            sha1 = self.sha1.strip().lower()
            if not SHA1_RE.match(sha1):
                raise IngestError(f"bad sha1 {self.sha1!r}")
            object.__setattr__(self, "sha1", sha1)

    @property
    def hash_absent(self) -> bool:
        return self.sha1 is None


def _sort_key(rec: RevisionRecord):
    return (rec.timestamp, -1 if rec.revision_id is None else rec.revision_id)


@dataclass(frozen=True)
class PageHistory:
    title: str
    records: tuple[RevisionRecord, ...]
    rejected: int = 0

    @classmethod
    def build(cls, title: str, records: Iterable[RevisionRecord], rejected: int = 0) -> "PageHistory":
        """Sort by ``(timestamp, revision_id)``, stable for ties; drop repeated ids."""
        seen, out = set(), []
        for rec in sorted(records, key=_sort_key):
            if rec.revision_id is not None:
                if rec.revision_id in seen:
                    continue
                seen.add(rec.revision_id)
            out.append(rec)
        return cls(title, tuple(out), rejected)

    def __len__(self):
        return len(self.records)

    @property
    def hash_absent(self) -> int:
        return sum(r.hash_absent for r in self.records)


# -- XML export ------------------------------------------------------------

def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def iter_dump(stream: IO[bytes] | str | Path) -> Iterator[PageHistory]:
    """Stream ``PageHistory`` objects out of a MediaWiki XML export.

    Revision text is discarded as soon as it is parsed, so memory scales
    with the number of revisions of the current page, not with dump size.
    """
    context = ET.iterparse(stream, events=("start", "end"))
    title = None
    records: list[RevisionRecord] = []
    rejected = 0
    rev: dict | None = None
    page_elem = None
    in_contributor = False
    try:
        for event, elem in context:
            tag = _local(elem.tag)
            if event == "start":
                if tag == "page":
                    title, records, rejected = None, [], 0
                    page_elem = elem
                elif tag == "revision":
                    rev = {}
                elif tag == "contributor":
                    in_contributor = True
                continue
            if rev is not None:
                if tag == "revision":
                    rec = _finish_revision(rev)
                    if rec is None:
                        rejected += 1
                    else:
                        records.append(rec)
                    rev = None
                    elem.clear()
                    if page_elem is not None:
                        page_elem.remove(elem)
                elif tag == "contributor":
                    in_contributor = False
                elif in_contributor and tag in ("username", "ip"):
                    rev.setdefault("user", (elem.text or "").strip())
                elif in_contributor and tag == "id":
                    pass
                elif tag in ("id", "timestamp", "sha1", "comment"):
                    rev[tag] = elem.text or ""
                    elem.clear()
                elif tag == "text":
                    elem.clear()
            elif tag == "title":
                title = (elem.text or "").strip()
            elif tag == "page":
                if rejected:
                    log.warning("page %r: %d revisions without timestamp rejected", title, rejected)
                yield PageHistory.build(title or "", records, rejected)
                elem.clear()
    except ET.ParseError as exc:
        line, col = exc.position
        raise IngestError(f"malformed XML at line {line}, column {col}: {exc}") from None


def _finish_revision(rev: dict) -> RevisionRecord | None:
    ts = rev.get("timestamp", "").strip()
    if not ts:
        return None
    sha1 = rev.get("sha1", "").strip() or None
    rid = rev.get("id", "").strip()
    return RevisionRecord(
        parse_timestamp(ts),
        rev.get("user", ""),
        sha1,
        rev.get("comment", ""),
        int(rid) if rid else None,
    )


def parse_dump(stream) -> list[PageHistory]:
    return list(iter_dump(stream))


# -- TSV -------------------------------------------------------------------

TSV_REQUIRED = ("timestamp", "user", "sha1", "comment")


def parse_tsv(stream: IO[str] | str, title: str = "") -> PageHistory:
    """Records from a tab-separated file with header ``timestamp user sha1 comment``.

    An optional ``revision_id`` column is honoured.  Empty ``sha1`` marks a
    hash-absent revision.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream, delimiter="\t", quoting=csv.QUOTE_NONE)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("line 1: missing header row") from None
    header = [h.strip() for h in header]
    missing = [c for c in TSV_REQUIRED if c not in header]
    if missing:
        raise IngestError(f"line 1: header lacks columns {missing}")
    col = {name: i for i, name in enumerate(header)}
    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or row == [""]:
            continue
        if len(row) != len(header):
            raise IngestError(f"line {lineno}: expected {len(header)} columns, got {len(row)}")
        try:
            rid = row[col["revision_id"]].strip() if "revision_id" in col else ""
            records.append(RevisionRecord(
                parse_timestamp(row[col["timestamp"]]),
                row[col["user"]],
                row[col["sha1"]].strip() or None,
                row[col["comment"]],
                int(rid) if rid else None,
            ))
        except ValueError as exc:
            raise IngestError(f"line {lineno}: {exc}") from None
    return PageHistory.build(title, records)


def _tsv_field(text: str) -> str:
    return text.replace("\t", " ").replace("\r", " ").replace("\n", " ")


def format_tsv(history: PageHistory) -> str:
    out = ["timestamp\tuser\tsha1\tcomment\trevision_id"]
    for r in history.records:
        out.append("\t".join([
            format_timestamp(r.timestamp), _tsv_field(r.user), r.sha1 or "",
            _tsv_field(r.comment), "" if r.revision_id is None else str(r.revision_id),
        ]))
    return "\n".join(out) + "\n"


def read_records(path, title: str | None = None) -> PageHistory:
    path = Path(path)
    with open(path, newline="") as fh:
        return parse_tsv(fh, title if title is not None else path.stem)


# -- MediaWiki API ------------------------------------------------------------

@dataclass
class FetchLimits:
    rate_limit: float = 1.0  # requests per second
    attempts: int = 3
    backoff: float = 1.0  # seconds, doubled per retry
    batch: int = 500
    max_revisions: int | None = None
    timeout: float = 30.0


def _api_revision(rev: dict) -> RevisionRecord:
    user = rev.get("user", "")  # absent when the username is suppressed
    sha1 = rev.get("sha1")
    if rev.get("sha1hidden") or not sha1:
        sha1 = None
    return RevisionRecord(
        parse_timestamp(rev["timestamp"]),
        user,
        sha1,
        rev.get("comment", "") or "",
        rev.get("revid"),
    )


def _record_to_json(r: RevisionRecord) -> dict:
    return {"timestamp": format_timestamp(r.timestamp), "user": r.user, "sha1": r.sha1,
            "comment": r.comment, "revision_id": r.revision_id}


def _record_from_json(d: dict) -> RevisionRecord:
    return RevisionRecord(parse_timestamp(d["timestamp"]), d["user"], d["sha1"],
                          d["comment"], d["revision_id"])


class _RateLimiter:
    def __init__(self, rate: float, clock=time.monotonic, sleep=time.sleep):
        self.interval = 0.0 if rate <= 0 else 1.0 / rate
        self.clock, self.sleep = clock, sleep
        self._last = None

    def wait(self):
        if self._last is not None and self.interval:
            delay = self._last + self.interval - self.clock()
            if delay > 0:
                self.sleep(delay)
        self._last = self.clock()


def fetch_api(
    title: str,
    endpoint: str = "https://en.wikipedia.org/w/api.php",
    limits: FetchLimits | None = None,
    cursor_path: str | Path | None = None,
    client: httpx.Client | None = None,
    sleep=time.sleep,
) -> PageHistory:
    """Page through ``prop=revisions`` oldest-first, following continuation tokens.

    With ``cursor_path`` the records fetched so far and the continuation
    token are saved after every page, and an existing cursor is resumed.
    """
    limits = limits or FetchLimits()
    cursor_path = Path(cursor_path) if cursor_path else None
    records: list[RevisionRecord] = []
    cont: dict | None = {}
    if cursor_path and cursor_path.exists():
        state = json.loads(cursor_path.read_text())
        if state.get("title") != title:
            raise IngestError(f"cursor {cursor_path} belongs to page {state.get('title')!r}")
        records = [_record_from_json(d) for d in state["records"]]
        cont = state["continue"]
        log.info("resuming %r at %d records", title, len(records))
    owns_client = client is None
    client = client or httpx.Client(
        timeout=limits.timeout, headers={"User-Agent": "collstate/0.1 (research)"})
    limiter = _RateLimiter(limits.rate_limit, sleep=sleep)
    try:
        while cont is not None:
            if limits.max_revisions is not None and len(records) >= limits.max_revisions:
                break
            params = {
                "action": "query", "format": "json", "formatversion": "2",
                "prop": "revisions", "titles": title, "rvdir": "newer",
                "rvprop": "timestamp|user|sha1|comment|ids", "rvlimit": str(limits.batch),
            }
            params.update(cont)
            try:
                payload = _get_with_retry(client, endpoint, params, limits, limiter, sleep)
            except FetchError as exc:
                exc.partial = PageHistory.build(title, records)
                exc.cursor_path = cursor_path
                raise
            if "error" in payload:
                raise ApiError(payload["error"])
            for page in _pages(payload):
                for rev in page.get("revisions", []):
                    records.append(_api_revision(rev))
            cont = payload.get("continue")
            if cursor_path:
                cursor_path.write_text(json.dumps({
                    "title": title, "continue": cont,
                    "records": [_record_to_json(r) for r in records],
                }))
    finally:
        if owns_client:
            client.close()
    return PageHistory.build(title, records)


def _pages(payload: dict) -> list[dict]:
    pages = payload.get("query", {}).get("pages", [])
    return list(pages.values()) if isinstance(pages, dict) else list(pages)


RETRY_STATUS = {429, 500, 502, 503, 504}


def _get_with_retry(client, endpoint, params, limits, limiter, sleep) -> dict:
    delay = limits.backoff
    last = None
    for attempt in range(limits.attempts):
        limiter.wait()
        try:
            resp = client.get(endpoint, params=params)
        except httpx.TransportError as exc:
            last = f"transport error: {exc}"
        else:
            if resp.status_code == 200:
                return resp.json()
            last = f"HTTP {resp.status_code}"
            if resp.status_code not in RETRY_STATUS:
                break
            retry_after = resp.headers.get("Retry-After")
            if retry_after and retry_after.isdigit():
                delay = max(delay, float(retry_after))
        if attempt + 1 < limits.attempts:
            log.warning("request failed (%s); retrying in %.1fs", last, delay)
            sleep(delay)
            delay *= 2
    raise FetchError(f"giving up after {limits.attempts} attempts: {last}")


# -- coarse-graining -------------------------------------------------------------

HASH_POLICIES = ("skip", "fail")


def retained_records(history: PageHistory, hash_policy: str = "skip") -> list[RevisionRecord]:
    if hash_policy not in HASH_POLICIES:
        raise ValueError(f"hash_policy must be one of {HASH_POLICIES}")
    absent = history.hash_absent
    if absent and hash_policy == "fail":
        raise IngestError(f"{history.title!r}: {absent} revisions without sha1")
    return [r for r in history.records if not r.hash_absent]


def revert_flags(records: Sequence[RevisionRecord]) -> list[bool]:
    """Per-record SHA1 revert decision (see module docstring)."""
    last_seen: dict[str, int] = {}
    streak_start: list[int] = []  # first index of the same-user streak ending at t
    flags = []
    for t, rec in enumerate(records):
        if t and records[t - 1].user == rec.user:
            streak_start.append(streak_start[-1])
        else:
            streak_start.append(t)
        s = last_seen.get(rec.sha1)
        is_revert = False
        if s is not None and t > 0 and records[t - 1].sha1 != rec.sha1:
            # reverted span is s+1 .. t-1; self-revert if all of it is rec.user's
            prev = t - 1
            self_revert = records[prev].user == rec.user and streak_start[prev] <= s + 1
            is_revert = not self_revert
        flags.append(is_revert)
        last_seen[rec.sha1] = t
    return flags


def coarse_grain(history: PageHistory, hash_policy: str = "skip",
                 three_symbol: bool = False) -> SymbolSequence:
    """``C``/``R`` sequence of the retained records (optionally with ``N`` markers)."""
    records = retained_records(history, hash_policy)
    if len(records) < 2:
        raise IngestError(f"{history.title!r}: need at least 2 records, have {len(records)}")
    seq = SymbolSequence(
        "".join("R" if f else "C" for f in revert_flags(records)), history.title, TWO_SYMBOL)
    if three_symbol:
        return augment_user_changes(records, seq)
    return seq


def detect_revert_comment(comment: str | None) -> bool:
    return bool(comment) and REVERT_COMMENT_RE.search(comment) is not None


def agreement_report(history: PageHistory, hash_policy: str = "skip") -> dict[str, int]:
    """2x2 contingency of the SHA1 and edit-summary revert detectors."""
    records = retained_records(history, hash_policy)
    out = {"both": 0, "sha1_only": 0, "comment_only": 0, "neither": 0}
    for rec, by_hash in zip(records, revert_flags(records)):
        by_comment = detect_revert_comment(rec.comment)
        key = ("both" if by_comment else "sha1_only") if by_hash else (
            "comment_only" if by_comment else "neither")
        out[key] += 1
    return out


def run_report(history: PageHistory, hash_policy: str = "skip") -> dict:
    return {
        "page": history.title,
        "records": len(history),
        "skipped": {"hash_absent": history.hash_absent, "no_timestamp": history.rejected},
        "detector_agreement": agreement_report(history, hash_policy),
    }
