"""Per-page CS-vs-nEXP report from revision histories.

Accepts MediaWiki XML dumps and/or per-page TSV record files, coarse-grains
each page, counts bracketed runs and writes the report table plus one JSON
file of fits per page.

    python scripts/page_report.py dump.xml --out-dir report/ --mode R
"""

import argparse
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from collstate import ingest, models, runstats

log = logging.getLogger("page_report")


@dataclass
class ReportConfig:
    inputs: list[Path]
    out_dir: Path
    mode: str = "R"
    n_max: int = 5
    starts: int = 32
    seed: int = 0
    min_runs: int = 10


def histories(paths):
    for path in paths:
        if path.suffix == ".xml":
            yield from ingest.parse_dump(path)
        else:
            yield ingest.read_records(path)


def page_histogram(hist, mode):
    seq = ingest.coarse_grain(hist, three_symbol=mode == runstats.MODE_RN)
    return runstats.count_runs(seq, mode)


def run(cfg: ReportConfig) -> list[models.SelectionReport]:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    opts = models.FitOptions(starts=cfg.starts, seed=cfg.seed)
    cs_model = models.LIMIT_CS if cfg.mode == runstats.MODE_RN else models.CS
    reports = []
    for hist in histories(cfg.inputs):
        try:
            h = page_histogram(hist, cfg.mode)
        except ingest.IngestError as exc:
            log.warning("%s", exc)
            continue
        if sum(h.fit_counts().values()) < cfg.min_runs:
            log.info("%s: %d runs, skipped", hist.title, h.total_runs)
            continue
        rep = models.select_model(h, cfg.n_max, cs_model=cs_model, options=opts, page=hist.title)
        for err in rep.errors.values():
            log.warning("%s: %s", hist.title, err)
        stem = hist.title.replace(" ", "_").replace("/", "_")
        (cfg.out_dir / f"{stem}.json").write_text(json.dumps(rep.to_json(), indent=2))
        reports.append(rep)
    (cfg.out_dir / "table.csv").write_text(models.format_table(reports))
    return reports


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("inputs", nargs="+", type=Path)
    ap.add_argument("--out-dir", type=Path, required=True)
    ap.add_argument("--mode", choices=["R", "RN"], default="R")
    ap.add_argument("--nmax", type=int, default=5)
    ap.add_argument("--starts", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--min-runs", type=int, default=10)
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    reports = run(ReportConfig(a.inputs, a.out_dir, a.mode, a.nmax, a.starts, a.seed, a.min_runs))
    print(models.format_table(reports), end="")


if __name__ == "__main__":
    main()
