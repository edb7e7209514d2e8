"""Command line pipeline: fetch -> ingest -> coarsegrain -> runs -> fit/select, plus pumpstudy.

Results go to ``--out`` (or stdout); logs go to stderr as JSON lines.  Exit
codes: 0 success, 2 input error, 3 fit failure, 4 network failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import fsm, ingest, models, runstats

EXIT_OK, EXIT_INPUT, EXIT_FIT, EXIT_NETWORK = 0, 2, 3, 4

log = logging.getLogger("collstate")


class _JsonLines(logging.Formatter):
    def format(self, record):
        entry = {"level": record.levelname.lower(), "logger": record.name,
                 "msg": record.getMessage()}
        if hasattr(record, "data"):
            entry["data"] = record.data
        return json.dumps(entry, sort_keys=True)


class CliError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    subcommand: str
    inputs: list[Path] = field(default_factory=list)
    out: Path | None = None
    seed: int = 0
    mode: str = runstats.MODE_R
    n_max: int = 5
    k_max: int | None = None
    starts: int = 32
    api_url: str = "https://en.wikipedia.org/w/api.php"
    rate_limit: float = 1.0

    def validate(self):
        for p in self.inputs:
            if not p.exists():
                raise CliError(f"input not found: {p}")
        if self.out is not None and not self.out.parent.exists():
            raise CliError(f"output directory does not exist: {self.out.parent}")
        if self.starts < 1:
            raise CliError("--starts must be positive")


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_history(path: Path, page: str | None = None) -> ingest.PageHistory:
    if path.suffix.lower() == ".xml":
        with open(path, "rb") as fh:
            pages = ingest.parse_dump(fh)
        if page is not None:
            pages = [p for p in pages if p.title == page]
        if len(pages) != 1:
            raise CliError(f"{path}: expected one page, found {len(pages)} (use --page)")
        return pages[0]
    return ingest.read_records(path)


def _options(cfg: RunConfig) -> models.FitOptions:
    return models.FitOptions(starts=cfg.starts, seed=cfg.seed, k_max=cfg.k_max)


def cmd_fetch(args, cfg: RunConfig):
    limits = ingest.FetchLimits(rate_limit=cfg.rate_limit)
    try:
        history = ingest.fetch_api(args.title, cfg.api_url, limits, cursor_path=args.cursor)
    except ingest.FetchError as exc:
        if exc.partial is not None and cfg.out is not None:
            cfg.out.write_text(ingest.format_tsv(exc.partial))
            log.warning("wrote %d partial records; rerun with the same --cursor to resume",
                        len(exc.partial))
        raise
    log.info("fetched %d revisions of %r", len(history), history.title)
    _emit(ingest.format_tsv(history), cfg.out)


def cmd_ingest(args, cfg: RunConfig):
    path = cfg.inputs[0]
    if path.suffix.lower() == ".xml":
        with open(path, "rb") as fh:
            pages = ingest.parse_dump(fh)
    else:
        pages = [ingest.read_records(path)]
    reports = [ingest.run_report(p) for p in pages]
    if cfg.out is not None and cfg.out.is_dir():
        for p in pages:
            name = p.title.replace("/", "_").replace(" ", "_") or "page"
            (cfg.out / f"{name}.tsv").write_text(ingest.format_tsv(p))
    else:
        if len(pages) != 1:
            raise CliError("dump holds several pages; pass a directory to --out")
        _emit(ingest.format_tsv(pages[0]), cfg.out)
    if args.report:
        Path(args.report).write_text(_dumps(reports))
    for r in reports:
        log.info("ingested", extra={"data": r})


def cmd_coarsegrain(args, cfg: RunConfig):
    history = _load_history(cfg.inputs[0], args.page)
    seq = ingest.coarse_grain(history, args.hash_policy, three_symbol=cfg.mode == runstats.MODE_RN)
    _emit(seq.symbols + "\n", cfg.out)
    if args.report:
        Path(args.report).write_text(_dumps(ingest.run_report(history, args.hash_policy)))


def cmd_runs(args, cfg: RunConfig):
    seq = runstats.read_sequence(cfg.inputs[0])
    hist = runstats.count_runs(seq, cfg.mode)
    _emit(runstats.format_histogram(hist), cfg.out)


def cmd_fit(args, cfg: RunConfig):
    hist = runstats.read_histogram(cfg.inputs[0])
    fit = models.fit_mle(hist, args.model, args.n if args.model == models.NEXP else None,
                         _options(cfg))
    _emit(_dumps({"page": hist.source, "N": hist.total_symbols, "fits": [fit.to_json()]}), cfg.out)


def cmd_select(args, cfg: RunConfig):
    reports = []
    for path in cfg.inputs:
        hist = runstats.read_histogram(path)
        cs_model = args.cs_model or (
            models.LIMIT_CS if hist.delimiter_mode == runstats.MODE_RN else models.CS)
        report = models.select_model(hist, cfg.n_max, cs_model, _options(cfg), page=path.stem)
        for name, err in report.errors.items():
            log.warning("%s: %s", path.stem, err)
        reports.append(report)
    payload = [r.to_json() for r in reports]
    if cfg.out is not None:
        cfg.out.write_text(_dumps(payload[0] if len(payload) == 1 else payload))
    table = models.format_table(reports)
    if args.table:
        Path(args.table).write_text(table)
    else:
        sys.stdout.write(table)
    if any(r.delta_E is None for r in reports):
        raise CliError("evidence ratio unavailable for some pages", EXIT_FIT)


def cmd_pumpstudy(args, cfg: RunConfig):
    if args.p < 1:
        raise CliError("--p must be >= 1")
    q = args.q if args.q is not None else args.p
    samples = fsm.stratified_sample_by_radius(
        args.p, args.bins, args.per_bin, cfg.seed, q=q, k_horizon=args.k_horizon)
    rows = fsm.summarize_convergence(samples, args.bins)
    _emit(fsm.format_study_csv(rows), cfg.out)
    pooled = [r for r in rows if r["rho_bin"] == "all" and r["k"] == args.k_horizon]
    if pooled:
        summary = {key: pooled[0][key] for key in ("median_Chat", "lo1sigma", "hi1sigma")}
        log.info("pumpstudy summary",
                 extra={"data": dict(summary, machines=len(samples), k=args.k_horizon)})


COMMANDS = {
    "fetch": cmd_fetch,
    "ingest": cmd_ingest,
    "coarsegrain": cmd_coarsegrain,
    "runs": cmd_runs,
    "fit": cmd_fit,
    "select": cmd_select,
    "pumpstudy": cmd_pumpstudy,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", type=Path)
    common.add_argument("-v", "--verbose", action="store_true")

    fitting = argparse.ArgumentParser(add_help=False)
    fitting.add_argument("--starts", type=int, default=32)
    fitting.add_argument("--kmax", type=int)

    parser = argparse.ArgumentParser(prog="collstate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", parents=[common], help="download revision metadata via the API")
    p.add_argument("title")
    p.add_argument("--api-url", default=RunConfig.api_url)
    p.add_argument("--rate-limit", type=float, default=1.0, help="requests per second")
    p.add_argument("--cursor", type=Path, help="resumable cursor file")

    p = sub.add_parser("ingest", parents=[common], help="XML dump or TSV -> record TSV")
    p.add_argument("input", type=Path)
    p.add_argument("--report", type=Path)

    p = sub.add_parser("coarsegrain", parents=[common], help="records -> symbol sequence")
    p.add_argument("input", type=Path)
    p.add_argument("--mode", choices=["R", "RN"], default="R")
    p.add_argument("--page")
    p.add_argument("--hash-policy", choices=list(ingest.HASH_POLICIES), default="skip")
    p.add_argument("--report", type=Path)

    p = sub.add_parser("runs", parents=[common], help="sequence -> N(RC^kR) histogram")
    p.add_argument("input", type=Path)
    p.add_argument("--mode", choices=["R", "RN"], default="R")

    p = sub.add_parser("fit", parents=[common, fitting], help="fit one model to a histogram")
    p.add_argument("input", type=Path)
    p.add_argument("--model", choices=list(models.FAMILIES), default=models.CS)
    p.add_argument("--n", type=int, default=1)

    p = sub.add_parser("select", parents=[common, fitting], help="CS vs nEXP evidence table")
    p.add_argument("inputs", type=Path, nargs="+")
    p.add_argument("--nmax", type=int, default=5)
    p.add_argument("--cs-model", choices=[models.CS, models.LIMIT_CS])
    p.add_argument("--table", type=Path)

    p = sub.add_parser("pumpstudy", parents=[common], help="convergence of Chat(q, k) to 1")
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--per-bin", type=int, default=50)
    p.add_argument("--q", type=int)
    p.add_argument("--k-horizon", type=int, default=30)
    return parser


def _config(args) -> RunConfig:
    if getattr(args, "inputs", None):
        inputs = list(args.inputs)
    elif getattr(args, "input", None):
        inputs = [args.input]
    else:
        inputs = []
    cfg = RunConfig(args.command, inputs, args.out, args.seed)
    cfg.mode = getattr(args, "mode", cfg.mode)
    cfg.n_max = getattr(args, "nmax", cfg.n_max)
    cfg.k_max = getattr(args, "kmax", None)
    cfg.starts = getattr(args, "starts", cfg.starts)
    cfg.api_url = getattr(args, "api_url", cfg.api_url)
    cfg.rate_limit = getattr(args, "rate_limit", cfg.rate_limit)
    return cfg


def _setup_logging(verbose: bool):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLines())
    root = logging.getLogger("collstate")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


def _fail(exc: Exception, code: int) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                 "exit_code": code}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        cfg = _config(args)
        cfg.validate()
        COMMANDS[args.command](args, cfg)
    except CliError as exc:
        return _fail(exc, exc.code)
    except models.FitError as exc:
        return _fail(exc, EXIT_FIT)
    except (ingest.FetchError, ingest.ApiError, OSError) as exc:
        if isinstance(exc, (FileNotFoundError, IsADirectoryError, PermissionError)):
            return _fail(exc, EXIT_INPUT)
        return _fail(exc, EXIT_NETWORK)
    except (ValueError, KeyError) as exc:
        return _fail(exc, EXIT_INPUT)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
