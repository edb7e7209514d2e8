import io
import json
import tracemalloc
from datetime import datetime, timedelta, timezone
from pathlib import Path

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from collstate import ingest
from collstate.ingest import PageHistory, RevisionRecord

FIXTURES = Path(__file__).parent / "fixtures"
T0 = datetime(2006, 3, 21, tzinfo=timezone.utc)


def sha(i):
    return f"{i:040x}"


def rec(minute, user, h, comment="", rid=None):
    return RevisionRecord(T0 + timedelta(minutes=minute), user, h, comment, rid)


def history(*rows):
    return PageHistory.build("t", [rec(i, u, sha(h)) for i, (u, h) in enumerate(rows)])


def gwb_day():
    return ingest.read_records(FIXTURES / "gwb_day.tsv", "George_W._Bush")


def dump_xml(pages):
    """MediaWiki export text for ``[(title, [revision dict, ...]), ...]``."""
    out = ['<mediawiki xmlns="http://www.mediawiki.org/xml/export-0.10/" version="0.10">']
    for title, revs in pages:
        out.append(f"<page><title>{title}</title><ns>0</ns><id>7</id>")
        for r in revs:
            out.append("<revision>")
            if "id" in r:
                out.append(f"<id>{r['id']}</id><parentid>0</parentid>")
            if "timestamp" in r:
                out.append(f"<timestamp>{r['timestamp']}</timestamp>")
            if "ip" in r:
                out.append(f"<contributor><ip>{r['ip']}</ip></contributor>")
            else:
                out.append(f"<contributor><username>{r['user']}</username><id>42</id></contributor>")
            if r.get("comment"):
                out.append(f"<comment>{r['comment']}</comment>")
            out.append('<model>wikitext</model><text xml:space="preserve">body</text>')
            if r.get("sha1"):
                out.append(f"<sha1>{r['sha1']}</sha1>")
            out.append("</revision>")
        out.append("</page>")
    out.append("</mediawiki>")
    return "\n".join(out).encode()


# -- records and TSV ----------------------------------------------------------------

def test_record_sha1_validated_and_lowercased():
    r = rec(0, "a", "ABCDEF" + "0" * 34)
    assert r.sha1 == "abcdef" + "0" * 34
    with pytest.raises(ingest.IngestError):
        rec(0, "a", "xyz")


def test_gwb_day_records():
    h = gwb_day()
    assert len(h) == 11
    assert h.records[0].user == "Sarah" and h.records[-1].user == "Titoxd"
    assert [r.user for r in h.records][2] == "Mhking"


def test_tsv_empty_after_header():
    h = ingest.parse_tsv("timestamp\tuser\tsha1\tcomment\n")
    assert len(h) == 0


def test_tsv_sorted_and_stable():
    text = ("timestamp\tuser\tsha1\tcomment\n"
            f"2006-03-21T05:00:00Z\tb\t{sha(2)}\t\n"
            f"2006-03-21T01:00:00Z\ta\t{sha(1)}\t\n"
            f"2006-03-21T05:00:00Z\tc\t{sha(3)}\t\n")
    h = ingest.parse_tsv(text)
    assert [r.user for r in h.records] == ["a", "b", "c"]


def test_tsv_column_mismatch_line_numbered():
    text = "timestamp\tuser\tsha1\tcomment\n2006-03-21T05:00:00Z\tb\n"
    with pytest.raises(ingest.IngestError, match="line 2"):
        ingest.parse_tsv(text)


def test_tsv_missing_header_column():
    with pytest.raises(ingest.IngestError, match="line 1"):
        ingest.parse_tsv("timestamp\tuser\tcomment\n")


def test_tsv_bad_timestamp_line_numbered():
    text = f"timestamp\tuser\tsha1\tcomment\nyesterday\tb\t{sha(1)}\t\n"
    with pytest.raises(ingest.IngestError, match="line 2"):
        ingest.parse_tsv(text)


def test_tsv_roundtrip():
    h = gwb_day()
    back = ingest.parse_tsv(ingest.format_tsv(h), h.title)
    assert back == h


# -- coarse-graining -------------------------------------------------------------

def test_gwb_day_two_symbol():
    assert ingest.coarse_grain(gwb_day()).symbols == "CCRCCRCCCCC"


def test_gwb_day_three_symbol():
    seq = ingest.coarse_grain(gwb_day(), three_symbol=True)
    assert seq.symbols == "CNCNRNCNCNRNCCCCC"


def test_self_revert_excluded():
    # a edits, then a restores its own earlier version
    assert ingest.coarse_grain(history(("a", 1), ("a", 2), ("a", 1))).symbols == "CCC"


def test_revert_of_other_user():
    assert ingest.coarse_grain(history(("a", 1), ("b", 2), ("a", 1))).symbols == "CCR"


def test_mixed_span_is_revert():
    # the reverted span holds one of a's edits and one of b's
    assert ingest.coarse_grain(history(("x", 1), ("b", 2), ("a", 3), ("a", 1))).symbols == "CCCR"


def test_noop_excluded():
    assert ingest.coarse_grain(history(("a", 1), ("b", 1))).symbols == "CC"


def test_first_record_is_c():
    assert ingest.coarse_grain(history(("a", 1), ("b", 2))).symbols[0] == "C"


def test_needs_two_records():
    with pytest.raises(ingest.IngestError):
        ingest.coarse_grain(history(("a", 1)))


def test_hash_absent_policy():
    recs = [rec(0, "a", sha(1)), rec(1, "b", None), rec(2, "c", sha(2)), rec(3, "d", sha(1))]
    h = PageHistory.build("t", recs)
    assert h.hash_absent == 1
    assert ingest.coarse_grain(h, "skip").symbols == "CCR"
    with pytest.raises(ingest.IngestError):
        ingest.coarse_grain(h, "fail")


@settings(max_examples=300)
@given(rows=st.lists(st.tuples(st.sampled_from("abc"), st.integers(0, 4)), min_size=2, max_size=40))
def test_revert_flags_match_naive_replay(rows):
    h = history(*rows)
    seq = ingest.coarse_grain(h).symbols
    shas = [r.sha1 for r in h.records]
    users = [r.user for r in h.records]
    want = oracles.naive_revert_flags(shas, users)
    assert seq == "".join("R" if f else "C" for f in want)
    assert len(seq) == len(h)
    for t, s in enumerate(seq):
        if s == "R":
            assert shas[t] in shas[:t]


def test_coarse_grain_deterministic():
    assert ingest.coarse_grain(gwb_day()) == ingest.coarse_grain(gwb_day())


# -- comment detector ------------------------------------------------------------

@pytest.mark.parametrize("comment,want", [
    ("rv vandalism", True),
    ("Undid revision 12345 by X", True),
    ("Reverted edits by X", True),
    ("rvv\nagain", True),
    ("reworded intro", False),
    ("", False),
    (None, False),
])
def test_comment_detector(comment, want):
    assert ingest.detect_revert_comment(comment) is want


def test_agreement_gwb_day():
    report = ingest.agreement_report(gwb_day())
    assert report["sha1_only"] >= 2
    assert sum(report.values()) == 11


def test_agreement_all_cooperative():
    h = history(("a", 1), ("b", 2), ("c", 3))
    assert ingest.agreement_report(h) == {"both": 0, "sha1_only": 0, "comment_only": 0, "neither": 3}


def test_agreement_comment_only():
    h = PageHistory.build("t", [rec(0, "a", sha(1)), rec(1, "b", sha(2), "revert spam")])
    assert ingest.agreement_report(h)["comment_only"] == 1


# -- XML ---------------------------------------------------------------------------

def test_dump_three_revisions_ordered():
    data = dump_xml([("P", [
        {"id": 3, "timestamp": "2006-03-21T03:00:00Z", "user": "c", "sha1": sha(3)},
        {"id": 1, "timestamp": "2006-03-21T01:00:00Z", "user": "a", "sha1": sha(1)},
        {"id": 2, "timestamp": "2006-03-21T02:00:00Z", "user": "b", "sha1": sha(2)},
    ])])
    (page,) = ingest.parse_dump(io.BytesIO(data))
    assert page.title == "P"
    assert [r.revision_id for r in page.records] == [1, 2, 3]
    assert [r.user for r in page.records] == ["a", "b", "c"]


def test_dump_ip_contributor():
    data = dump_xml([("P", [{"id": 1, "timestamp": "2006-03-21T01:00:00Z", "ip": "192.0.2.7",
                              "sha1": sha(1)}])])
    assert ingest.parse_dump(io.BytesIO(data))[0].records[0].user == "192.0.2.7"


def test_dump_missing_sha1_and_timestamp():
    data = dump_xml([("P", [
        {"id": 1, "timestamp": "2006-03-21T01:00:00Z", "user": "a"},
        {"id": 2, "user": "b", "sha1": sha(2)},
        {"id": 3, "timestamp": "2006-03-21T03:00:00Z", "user": "c", "sha1": sha(3)},
    ])])
    (page,) = ingest.parse_dump(io.BytesIO(data))
    assert len(page) == 2
    assert page.rejected == 1
    assert page.records[0].hash_absent
    report = ingest.run_report(page)
    assert report["skipped"] == {"hash_absent": 1, "no_timestamp": 1}


def test_dump_several_pages():
    rev = {"id": 1, "timestamp": "2006-03-21T01:00:00Z", "user": "a", "sha1": sha(1)}
    pages = ingest.parse_dump(io.BytesIO(dump_xml([("A", [rev]), ("B", [dict(rev, id=2)])])))
    assert [p.title for p in pages] == ["A", "B"]


def test_dump_malformed_position():
    bad = b"<mediawiki>\n<page><title>x</title>\n<revision><id>1</revision>\n</page></mediawiki>"
    with pytest.raises(ingest.IngestError, match=r"line 3, column \d+"):
        ingest.parse_dump(io.BytesIO(bad))


def test_dump_comment_carried():
    data = dump_xml([("P", [{"id": 1, "timestamp": "2006-03-21T01:00:00Z", "user": "a",
                              "sha1": sha(1), "comment": "rv vandalism"}])])
    assert ingest.parse_dump(io.BytesIO(data))[0].records[0].comment == "rv vandalism"


def test_dump_streams_in_bounded_memory(tmp_path):
    n = 100_000
    path = tmp_path / "big.xml"
    with open(path, "w") as fh:
        fh.write('<mediawiki xmlns="http://www.mediawiki.org/xml/export-0.10/">\n'
                 "<page><title>Big</title><ns>0</ns><id>1</id>\n")
        body = "lorem ipsum " * 200
        for i in range(n):
            fh.write(f"<revision><id>{i + 1}</id><timestamp>2006-01-01T00:00:00Z</timestamp>"
                     f"<contributor><username>u{i % 97}</username><id>1</id></contributor>"
                     f"<comment>edit {i}</comment><text>{body}</text>"
                     f"<sha1>{sha(i % 5000)}</sha1></revision>\n")
        fh.write("</page>\n</mediawiki>\n")
    assert path.stat().st_size > 200e6
    tracemalloc.start()
    try:
        with open(path, "rb") as fh:
            (page,) = ingest.parse_dump(fh)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    assert len(page) == n
    assert peak < 100e6


# -- API ---------------------------------------------------------------------------

API_REVS = [
    {"revid": 10 + i, "timestamp": f"2006-03-21T0{i}:00:00Z", "user": u, "sha1": sha(h),
     "comment": c}
    for i, (u, h, c) in enumerate([("a", 1, ""), ("b", 2, "x"), ("c", 1, "rv"), ("d", 3, ""),
                                   ("e", 4, ""), ("f", 3, "undo")])
]


def mock_api(revs, batch, fail_plan=None, calls=None):
    """Handler paging ``revs`` ``batch`` at a time; ``fail_plan[i]`` is a status for call ``i``."""
    fail_plan = dict(fail_plan or {})
    count = {"n": 0}

    def handler(request):
        i = count["n"]
        count["n"] += 1
        params = dict(request.url.params)
        if calls is not None:
            calls.append(params)
        if i in fail_plan:
            status = fail_plan[i]
            return httpx.Response(status, headers={"Retry-After": "2"} if status == 429 else {})
        start = int(params.get("rvcontinue", 0))
        chunk = revs[start:start + batch]
        body = {"batchcomplete": True,
                "query": {"pages": [{"pageid": 1, "title": params["titles"], "revisions": chunk}]}}
        if start + batch < len(revs):
            body["continue"] = {"rvcontinue": str(start + batch), "continue": "||"}
        return httpx.Response(200, json=body)

    return httpx.Client(transport=httpx.MockTransport(handler))


def fast_limits(**kw):
    return ingest.FetchLimits(rate_limit=0, **kw)


def test_api_continuation_concatenates():
    calls = []
    h = ingest.fetch_api("P", "https://example.test/w/api.php", fast_limits(batch=3),
                         client=mock_api(API_REVS, 3, calls=calls), sleep=lambda s: None)
    assert [r.revision_id for r in h.records] == [10, 11, 12, 13, 14, 15]
    assert len(calls) == 2
    assert calls[0]["rvprop"] == "timestamp|user|sha1|comment|ids"
    assert calls[1]["rvcontinue"] == "3"


def test_api_429_backoff_then_success():
    slept = []
    h = ingest.fetch_api("P", "https://example.test/api", fast_limits(batch=10),
                         client=mock_api(API_REVS, 10, {0: 429}), sleep=slept.append)
    assert len(h) == 6
    assert slept == [2.0]  # Retry-After beats the 1 s base delay


def test_api_exponential_backoff_exhausted(tmp_path):
    slept = []
    cursor = tmp_path / "cursor.json"
    client = mock_api(API_REVS, 2, {1: 503, 2: 503, 3: 503})
    with pytest.raises(ingest.FetchError) as exc:
        ingest.fetch_api("P", "https://example.test/api", fast_limits(batch=2),
                         cursor_path=cursor, client=client, sleep=slept.append)
    assert slept == [1.0, 2.0]
    assert len(exc.value.partial) == 2
    assert exc.value.cursor_path == cursor
    assert json.loads(cursor.read_text())["continue"]["rvcontinue"] == "2"


def test_api_cursor_resume_matches_single_shot(tmp_path):
    one_shot = ingest.fetch_api("P", "https://example.test/api", fast_limits(batch=2),
                                client=mock_api(API_REVS, 2), sleep=lambda s: None)
    cursor = tmp_path / "cursor.json"
    with pytest.raises(ingest.FetchError):
        ingest.fetch_api("P", "https://example.test/api", fast_limits(batch=2, attempts=1),
                         cursor_path=cursor, client=mock_api(API_REVS, 2, {2: 500}),
                         sleep=lambda s: None)
    calls = []
    resumed = ingest.fetch_api("P", "https://example.test/api", fast_limits(batch=2),
                               cursor_path=cursor, client=mock_api(API_REVS, 2, calls=calls),
                               sleep=lambda s: None)
    assert resumed == one_shot
    assert calls[0]["rvcontinue"] == "4"


def test_api_cursor_wrong_page(tmp_path):
    cursor = tmp_path / "c.json"
    cursor.write_text(json.dumps({"title": "Other", "continue": {}, "records": []}))
    with pytest.raises(ingest.IngestError):
        ingest.fetch_api("P", "https://example.test/api", fast_limits(), cursor_path=cursor,
                         client=mock_api(API_REVS, 2), sleep=lambda s: None)


def test_api_error_payload_verbatim():
    err = {"code": "badtitle", "info": "Bad title \"\"."}
    client = httpx.Client(transport=httpx.MockTransport(
        lambda r: httpx.Response(200, json={"error": err})))
    with pytest.raises(ingest.ApiError) as exc:
        ingest.fetch_api("", "https://example.test/api", fast_limits(), client=client)
    assert exc.value.payload == err


def test_api_rate_limit_spacing():
    clock = {"t": 0.0}
    slept = []

    def sleep(s):
        slept.append(s)
        clock["t"] += s

    limiter = ingest._RateLimiter(2.0, clock=lambda: clock["t"], sleep=sleep)
    for _ in range(3):
        limiter.wait()
    assert slept == [0.5, 0.5]


def test_api_and_parsers_agree():
    api = ingest.fetch_api("P", "https://example.test/api", fast_limits(batch=4),
                           client=mock_api(API_REVS, 4), sleep=lambda s: None)
    xml_revs = [{"id": r["revid"], "timestamp": r["timestamp"], "user": r["user"],
                 "sha1": r["sha1"], "comment": r["comment"]} for r in API_REVS]
    (dump,) = ingest.parse_dump(io.BytesIO(dump_xml([("P", xml_revs)])))
    tsv = ingest.parse_tsv(ingest.format_tsv(dump), "P")
    assert api == dump == tsv
    assert ingest.coarse_grain(api) == ingest.coarse_grain(dump)
