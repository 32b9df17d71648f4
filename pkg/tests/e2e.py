"""Build the synthetic corpus and drive the full CLI pipeline over it."""
import json
from pathlib import Path

from figmine.cli import main
from figmine.ingest import read_manifest
from figmine.store import hash_file

from pdfgen import make_pdf

E2E = Path(__file__).parent / "fixtures" / "e2e"
PAGE_SIZE = (180, 240)
BUNDLE = ("metrics.csv", "confusion.csv", "descriptors.csv", "sa_scatter.csv", "pv_scatter.csv", "overlay.csv")


def build_corpus(root):
    for pdf in json.loads((E2E / "corpus.json").read_text(encoding="utf-8")):
        make_pdf(Path(root) / pdf["folder"] / pdf["pdf"], pdf["pages"], size=PAGE_SIZE)
    return Path(root)


def write_replay_fixtures(manifest, fx_dir):
    """Key the canned responses (stored by image name) by image hash."""
    fx_dir = Path(fx_dir)
    fx_dir.mkdir(parents=True, exist_ok=True)
    responses = json.loads((E2E / "responses.json").read_text(encoding="utf-8"))
    for rec in read_manifest(manifest):
        key = hash_file(rec.image_path)
        reply = responses[rec.image_name]
        if isinstance(reply, list):
            for attempt, text in enumerate(reply, start=1):
                (fx_dir / f"{key}.{attempt}.txt").write_text(text, encoding="utf-8")
            reply = reply[-1]
        (fx_dir / f"{key}.txt").write_text(reply, encoding="utf-8")
    return fx_dir


def write_config(path):
    Path(path).write_text("# e2e settings\nbatch.backoff_initial_s = 0.01\nbatch.rate_per_min = 6000\n")
    return Path(path)


def cli(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"figmine {' '.join(map(str, argv))} exited {code}"


def ingest(work):
    work = Path(work)
    corpus = build_corpus(work / "corpus")
    manifest = work / "out" / "manifest.csv"
    cli("ingest", "--corpus", corpus, "--dpi", 72, "--out", manifest)
    fx = write_replay_fixtures(manifest, work / "replay")
    return manifest, fx, write_config(work / "figmine.cfg")


def classify(work, manifest, fx, config):
    cli("classify", "--config", config, "--manifest", manifest, "--backend", "replay",
        "--replay-dir", fx, "--concurrency", 4, "--store", Path(work) / "store.db", "--run-id", "e2e")


def finish(work, config):
    work = Path(work)
    cli("parse", "--store", work / "store.db", "--run-id", "e2e", "--out", work / "parsed.csv")
    cli("evaluate", "--config", config, "--pred", work / "parsed.csv", "--truth", E2E / "truth.csv",
        "--out", work / "eval")
    cli("report", "--config", config, "--store", work / "store.db", "--run-id", "e2e",
        "--truth", E2E / "truth.csv", "--db", E2E / "computed.csv",
        "--experimental", E2E / "experimental.csv", "--out", work / "report")
    return {name: (work / "report" / name).read_bytes() for name in BUNDLE}


def run_pipeline(work):
    manifest, fx, config = ingest(work)
    classify(work, manifest, fx, config)
    return finish(work, config)
