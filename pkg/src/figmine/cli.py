"""``figmine`` command-line entry point.

Exit codes: 0 ok, 1 usage, 2 I/O, 3 backend exhausted, 4 validation.
Failures print one ``figmine: error code=.. kind=.. msg=..`` line for
machines, then a plain sentence for people, both on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from decimal import Decimal
from pathlib import Path

from . import __version__
from .config import Config, load_config
from .errors import BackendError, FigmineError, IngestionError, StoreError, ValidationError
from .ingest import RasterConfig, build_manifest, default_images_dir, ingest_corpus, read_manifest
from .isotherm import bet_surface_area, detect_hysteresis, detect_plateau, load_curve, parse_range
from .parsing import PARSED_COLUMNS, extraction_to_row, parse_extraction, parse_label_set
from .porosity import compare as compare_porosity
from .porosity import load_computed_db, load_experimental, read_mapping, comparison_rows, write_overlay, write_scatter
from .prompts import PromptText, build_prompt
from .report import evaluate, labelled_from_rows, load_labelled, write_bundle, write_evaluation
from .store import Store
from .vision import HttpBackend, ReplayBackend, estimate_cost, images_for_budget, run_batch

log = logging.getLogger("figmine")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_BACKEND, EXIT_VALIDATION = 0, 1, 2, 3, 4
EXTRACT_MAX_TOKENS = 1024


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _diagnose(code: int, exc: BaseException, hint: str) -> int:
    msg = str(exc).replace("\n", " ")
    print(f"figmine: error code={code} kind={type(exc).__name__} msg={json.dumps(msg)}", file=sys.stderr)
    print(hint, file=sys.stderr)
    return code


def _config(args, **overrides) -> Config:
    return load_config(args.config, overrides)


def _write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


# -- subcommands ---------------------------------------------------------------


def cmd_ingest(args) -> int:
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {corpus}")
    out = Path(args.out)
    images = Path(args.images) if args.images else default_images_dir(out)
    cfg = RasterConfig(dpi=args.dpi, si_suffixes=tuple(args.si_suffix or ("-si.pdf",)))
    records, failures = ingest_corpus(corpus, images, cfg, jobs=args.jobs)
    if not records:
        raise IngestionError(f"no pages rendered from {corpus} ({len(failures)} PDFs failed)")
    build_manifest(records, out)
    main = sum(r.source_kind == "main" for r in records)
    print(f"pages={len(records)} main={main} supporting={len(records) - main} failed_pdfs={len(failures)}")
    print(f"manifest written to {out}")
    return EXIT_OK


def cmd_prompt(args) -> int:
    prompt = build_prompt(args.kind, args.version)
    if args.hash:
        print(f"{prompt.kind} {prompt.version} sha256={prompt.sha256}")
    else:
        sys.stdout.write(prompt.body)
        if not prompt.body.endswith("\n"):
            sys.stdout.write("\n")
    return EXIT_OK


def _select_prompt(args) -> PromptText:
    if args.prompt_file:
        kind = "classification" if args.command == "classify" else "extraction"
        return PromptText.from_file(args.prompt_file, kind)
    if args.command == "classify" and args.prompt == "short":
        return build_prompt("classification")
    return build_prompt("extraction")


def cmd_batch(args) -> int:
    cfg = _config(args, **{
        "api.base_url": args.base_url, "api.model_id": args.model, "api.max_tokens": args.max_tokens,
        "batch.concurrency": args.concurrency, "batch.rate_per_min": args.rate,
        "batch.max_attempts": args.max_attempts,
    })
    # full extraction answers overflow 300 tokens, so extract has its own default
    if args.command == "extract" and not cfg.is_set("api.max_tokens"):
        model = cfg.model_config(max_tokens=EXTRACT_MAX_TOKENS)
    else:
        model = cfg.model_config()
    if args.backend == "replay":
        if not args.replay_dir:
            raise UsageError("--backend replay needs --replay-dir")
        backend = ReplayBackend(args.replay_dir)
    else:
        backend = HttpBackend()
    prompt = _select_prompt(args)
    pages = read_manifest(args.manifest, args.images)
    store_path = Path(args.store) if args.store else Path(args.manifest).parent / "figmine.db"
    run_id = args.run_id or f"{args.command}-{prompt.version}"
    with Store(store_path) as store:
        store.begin_run(run_id, prompt.version, model.model_id, backend.name)
        summary = run_batch(pages, prompt, cfg.batch_policy(), store, run_id, backend,
                            cfg=model, costs=cfg.cost_model())
        store.finish_run(run_id)
        if args.export:
            store.export_csv(run_id, args.export)
    print(json.dumps({"run_id": run_id, **summary.to_dict()}, sort_keys=True))
    if summary.exhausted:
        print(f"{summary.exhausted} pages exhausted their retries; rerun the same command to retry them",
              file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def _parsed_row(img: str, text: str) -> dict:
    labels = parse_label_set(text)
    return {"img": img, "labels": labels.to_field(), "degenerate": str(int(labels.degenerate)),
            **extraction_to_row(parse_extraction(text))}


def cmd_parse(args) -> int:
    out = Path(args.out)
    if args.responses:
        with Path(args.responses).open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if not {"img", "text"} <= set(reader.fieldnames or []):
                raise ValidationError(f"{args.responses}: needs img and text columns")
            rows = sorted((_parsed_row(r["img"], r["text"]) for r in reader), key=lambda r: r["img"])
    else:
        if not args.store or not args.run_id:
            raise UsageError("parse needs --responses CSV or both --store and --run-id")
        if not Path(args.store).is_file():
            raise FileNotFoundError(f"store not found: {args.store}")
        with Store(args.store) as store:
            rows = store.parsed_rows(args.run_id)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=PARSED_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"parsed={len(rows)} written to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args, **{"analysis.iou_threshold": args.iou_threshold})
    ev = evaluate(load_labelled(args.pred), load_labelled(args.truth), cfg.comparator())
    write_evaluation(ev, args.out)
    sys.stdout.write(ev.metrics.to_text())
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _config(args, **{"analysis.bet_range": args.bet_range, "analysis.slope_eps": args.slope_eps,
                           "analysis.gap_tol": args.gap_tol})
    curve = load_curve(args.points, compound=args.compound, doi=args.doi or "")
    result = bet_surface_area(curve, fit_range=cfg["analysis.bet_range"], p_eval=args.p_eval)
    try:
        plateau = detect_plateau(curve, slope_eps=cfg["analysis.slope_eps"])
    except ValidationError as exc:
        log.warning("plateau: %s", exc)
        plateau = None
    out = {
        "compound": curve.compound,
        **result.to_dict(),
        "plateau": list(plateau) if plateau else None,
        "hysteresis": detect_hysteresis(curve, gap_tol=cfg["analysis.gap_tol"]),
    }
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def _porosity_inputs(args, cfg: Config):
    db = load_computed_db(args.db)
    mapping = read_mapping(args.mapping) if args.mapping else None
    rows, curves = load_experimental(args.experimental, mapping, cfg["analysis.bet_range"])
    comparisons, unmatched = compare_porosity(rows, db)
    for u in unmatched:
        log.warning("no computed entry for %s (%s)", u.compound, u.refcode or "no refcode")
    return comparisons, curves


def cmd_compare(args) -> int:
    cfg = _config(args, **{"analysis.bet_range": args.bet_range})
    comparisons, curves = _porosity_inputs(args, cfg)
    out = Path(args.out)
    write_scatter(comparisons, out)
    write_overlay(curves, out / "overlay.csv")
    table = comparison_rows(comparisons)
    _write_csv(out / "table.csv", table[0], table[1:])
    for row in table:
        print("\t".join(row))
    return EXIT_OK


def cmd_cost(args) -> int:
    cfg = _config(args, **{"batch.concurrency": args.concurrency})
    model = cfg.cost_model()
    if args.budget is not None:
        n = images_for_budget(Decimal(args.budget), model)
        est = estimate_cost(n, model, cfg["batch.concurrency"])
        print(f"images {n}")
        print(f"papers {est.whole_papers}")
        return EXIT_OK
    if args.images is None:
        raise UsageError("cost needs --images N or --budget USD")
    est = estimate_cost(args.images, model, cfg["batch.concurrency"])
    if args.json:
        print(json.dumps(est.to_dict(), sort_keys=True))
    else:
        for k, v in est.to_dict().items():
            print(f"{k} {v}")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _config(args, **{"analysis.iou_threshold": args.iou_threshold, "analysis.bet_range": args.bet_range})
    for p in (args.store, args.truth):
        if not Path(p).is_file():
            raise ValidationError(f"missing report input: {p}")
    with Store(args.store) as store:
        if args.run_id not in store.runs():
            raise ValidationError(f"run {args.run_id!r} not found in {args.store}")
        pred = labelled_from_rows(store.parsed_rows(args.run_id), f"{args.store}:{args.run_id}")
    ev = evaluate(pred, load_labelled(args.truth), cfg.comparator())
    comparisons, curves = [], []
    if args.db or args.experimental:
        if not (args.db and args.experimental):
            raise ValidationError("porosity comparison needs both --db and --experimental")
        comparisons, curves = _porosity_inputs(args, cfg)
    files = write_bundle(ev, args.out, comparisons, curves)
    for f in files:
        print(f)
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="figmine", description="Mine figure content from literature page images.")
    p.add_argument("--version", action="version", version=f"figmine {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="flat key=value config file")
        return sp

    sp = sub.add_parser("ingest", help="render PDFs to page images and write the manifest")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--dpi", type=int, default=300)
    sp.add_argument("--out", required=True, help="manifest CSV path")
    sp.add_argument("--images", help="image directory (default: <manifest dir>/pages)")
    sp.add_argument("--si-suffix", action="append", help="supporting-information filename suffix")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("prompt", help="print a stored prompt")
    sp.add_argument("--kind", choices=["classification", "extraction"], default="extraction")
    sp.add_argument("--version", dest="version", default="v1")
    sp.add_argument("--hash", action="store_true", help="print the body hash instead of the body")
    sp.set_defaults(func=cmd_prompt)

    for name in ("classify", "extract"):
        sp = with_config(sub.add_parser(name, help=f"{name} manifest pages with the vision model"))
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--images", help="image directory (default: <manifest dir>/pages)")
        sp.add_argument("--store", help="sqlite store (default: <manifest dir>/figmine.db)")
        sp.add_argument("--run-id")
        sp.add_argument("--backend", choices=["api", "replay"], default="api")
        sp.add_argument("--replay-dir")
        sp.add_argument("--concurrency", type=int)
        sp.add_argument("--rate", type=float, help="requests per minute")
        sp.add_argument("--max-attempts", type=int)
        sp.add_argument("--max-tokens", type=int)
        sp.add_argument("--model")
        sp.add_argument("--base-url")
        sp.add_argument("--prompt-file")
        sp.add_argument("--export", help="also write the flat response CSV here")
        if name == "classify":
            sp.add_argument("--prompt", choices=["short", "full"], default="full")
        sp.set_defaults(func=cmd_batch)

    sp = sub.add_parser("parse", help="parse stored responses into typed records")
    sp.add_argument("--store")
    sp.add_argument("--run-id")
    sp.add_argument("--responses", help="CSV with img,text columns instead of a store")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_parse)

    sp = with_config(sub.add_parser("evaluate", help="score predictions against ground truth"))
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--iou-threshold", type=float)
    sp.set_defaults(func=cmd_evaluate)

    sp = with_config(sub.add_parser("analyze-isotherm", help="BET area, pore volume, plateau, hysteresis"))
    sp.add_argument("--points", required=True)
    sp.add_argument("--compound")
    sp.add_argument("--doi")
    sp.add_argument("--bet-range", type=parse_range)
    sp.add_argument("--p-eval", type=float, default=0.95)
    sp.add_argument("--slope-eps", type=float)
    sp.add_argument("--gap-tol", type=float)
    sp.set_defaults(func=cmd_analyze)

    sp = with_config(sub.add_parser("compare", help="experimental vs computed porosity"))
    sp.add_argument("--db", required=True)
    sp.add_argument("--experimental", required=True)
    sp.add_argument("--mapping")
    sp.add_argument("--bet-range", type=parse_range)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_compare)

    sp = with_config(sub.add_parser("cost", help="estimate cost and time"))
    sp.add_argument("--images", type=int)
    sp.add_argument("--budget", help="USD budget; prints affordable images and papers")
    sp.add_argument("--concurrency", type=int)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_cost)

    sp = with_config(sub.add_parser("report", help="write the plot-data bundle for a run"))
    sp.add_argument("--store", required=True)
    sp.add_argument("--run-id", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--db")
    sp.add_argument("--experimental")
    sp.add_argument("--mapping")
    sp.add_argument("--iou-threshold", type=float)
    sp.add_argument("--bet-range", type=parse_range)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _diagnose(EXIT_USAGE, exc, "Run `figmine --help` for usage.")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        return _diagnose(EXIT_USAGE, exc, "Run `figmine --help` for usage.")
    except BackendError as exc:
        return _diagnose(EXIT_BACKEND, exc, "The model backend could not be used.")
    except ValidationError as exc:
        return _diagnose(EXIT_VALIDATION, exc, "Input failed validation; nothing further was written.")
    except (OSError, StoreError, IngestionError) as exc:
        return _diagnose(EXIT_IO, exc, "A file could not be read or written.")
    except (FigmineError, ValueError) as exc:
        return _diagnose(EXIT_VALIDATION, exc, "Input failed validation.")


if __name__ == "__main__":
    sys.exit(main())
