"""Rasterize PDFs page by page and record where each image came from.

Corpus layout: ``<corpus>/<folder>/<name>.pdf`` where ``folder`` is a
publisher DOI prefix such as ``10.1021``. Page images are written to
``<images>/<folder>/<pdf-stem>_page_<n>.png``.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence

import pymupdf

from .errors import IngestionError

log = logging.getLogger(__name__)

MANIFEST_HEADER = ("DOI", "Folder Name", "PDF Name", "Image Name", "Page Number")
DEFAULT_SI_SUFFIXES = ("-si.pdf",)


@dataclass(frozen=True)
class RasterConfig:
    dpi: int = 300
    si_suffixes: tuple[str, ...] = DEFAULT_SI_SUFFIXES

    def __post_init__(self):
        if self.dpi <= 0:
            raise ValueError(f"dpi must be positive, got {self.dpi}")
        if self.dpi < 72:
            log.warning("dpi=%d is below 72; page images will be smaller than the page", self.dpi)

    @property
    def scale_factor(self) -> float:
        return self.dpi / 72.0


@dataclass(frozen=True)
class PageRecord:
    doi: str
    folder: str
    pdf_name: str
    image_name: str
    page_number: int
    source_kind: Literal["main", "supporting"]
    image_path: Path
    width_px: int = 0
    height_px: int = 0

    def manifest_row(self) -> list[str]:
        return [self.doi, self.folder, self.pdf_name, self.image_name, str(self.page_number)]


def source_kind(pdf_name: str, si_suffixes: Sequence[str] = DEFAULT_SI_SUFFIXES) -> str:
    return "supporting" if any(pdf_name.endswith(s) for s in si_suffixes) else "main"


def doi_for(folder: str, pdf_name: str, si_suffixes: Sequence[str] = DEFAULT_SI_SUFFIXES) -> str:
    stem = pdf_name
    for suffix in si_suffixes:
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
            break
    else:
        stem = stem[:-4] if stem.lower().endswith(".pdf") else stem
    return f"{folder}/{stem}" if folder else stem


def image_name_for(pdf_name: str, page_number: int) -> str:
    stem = pdf_name[:-4] if pdf_name.lower().endswith(".pdf") else pdf_name
    return f"{stem}_page_{page_number}.png"


def render_pdf_to_pages(pdf_path: str | Path, cfg: RasterConfig, out_dir: str | Path,
                        folder: str | None = None) -> list[PageRecord]:
    """Write one PNG per page of ``pdf_path`` into ``out_dir``."""
    pdf_path, out_dir = Path(pdf_path), Path(out_dir)
    folder = pdf_path.parent.name if folder is None else folder
    try:
        doc = pymupdf.open(pdf_path, filetype="pdf")
    except Exception as exc:
        raise IngestionError(f"cannot open {pdf_path}: {exc}") from exc
    with doc:
        if not doc.is_pdf:
            raise IngestionError(f"{pdf_path} is not a PDF")
        if doc.page_count == 0:
            raise IngestionError(f"{pdf_path} has no pages")
        out_dir.mkdir(parents=True, exist_ok=True)
        matrix = pymupdf.Matrix(cfg.scale_factor, cfg.scale_factor)
        kind = source_kind(pdf_path.name, cfg.si_suffixes)
        doi = doi_for(folder, pdf_path.name, cfg.si_suffixes)
        records = []
        for index, page in enumerate(doc):
            number = index + 1
            name = image_name_for(pdf_path.name, number)
            target = out_dir / name
            try:
                pix = page.get_pixmap(matrix=matrix, alpha=False)
                pix.save(target)
            except Exception as exc:
                raise IngestionError(f"{pdf_path}: page {number} failed to render: {exc}") from exc
            records.append(PageRecord(doi, folder, pdf_path.name, name, number, kind,
                                      target, pix.width, pix.height))
    return records


def expected_pixels(points: float, dpi: int) -> int:
    return math.ceil(points * dpi / 72.0)


def _render_job(args):
    pdf_path, cfg, out_dir, folder = args
    try:
        return render_pdf_to_pages(pdf_path, cfg, out_dir, folder), None
    except IngestionError as exc:
        return [], str(exc)


def discover_pdfs(corpus: str | Path) -> list[tuple[str, Path]]:
    """``(folder, pdf_path)`` pairs sorted by folder then file name."""
    corpus = Path(corpus)
    found = []
    for path in corpus.rglob("*"):
        if path.is_file() and path.suffix.lower() == ".pdf":
            rel = path.parent.relative_to(corpus)
            found.append((rel.as_posix() if rel.parts else "", path))
    return sorted(found, key=lambda t: (t[0], t[1].name))


def ingest_corpus(corpus: str | Path, images_dir: str | Path, cfg: RasterConfig | None = None,
                  jobs: int = 1) -> tuple[list[PageRecord], list[str]]:
    """Render every PDF under ``corpus``.

    A PDF that fails is logged and skipped; the rest of the batch continues.
    Returns the page records in manifest order and the list of failures.
    """
    cfg = cfg or RasterConfig()
    images_dir = Path(images_dir)
    tasks = [(pdf, cfg, images_dir / folder, folder) for folder, pdf in discover_pdfs(corpus)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_render_job, tasks))
    else:
        results = [_render_job(t) for t in tasks]
    records, failures = [], []
    for recs, err in results:
        if err:
            log.error("ingestion failed: %s", err)
            failures.append(err)
        records.extend(recs)
    return sort_records(records), failures


def sort_records(records: Iterable[PageRecord]) -> list[PageRecord]:
    return sorted(records, key=lambda r: (r.folder, r.pdf_name, r.page_number))


def build_manifest(records: Sequence[PageRecord], out: str | Path) -> Path:
    if not records:
        raise ValueError("no page records; manifest not written")
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in sort_records(records):
            writer.writerow(r.manifest_row())
    return out


def default_images_dir(manifest: str | Path) -> Path:
    return Path(manifest).parent / "pages"


def read_manifest(path: str | Path, images_dir: str | Path | None = None,
                  si_suffixes: Sequence[str] = DEFAULT_SI_SUFFIXES) -> list[PageRecord]:
    """Load a manifest; image paths are resolved under ``images_dir/<folder>``."""
    path = Path(path)
    images_dir = Path(images_dir) if images_dir is not None else default_images_dir(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != MANIFEST_HEADER:
            raise ValueError(f"{path}: unexpected manifest header {header}")
        records = []
        for row in reader:
            doi, folder, pdf_name, image_name, page = row
            records.append(PageRecord(
                doi, folder, pdf_name, image_name, int(page),
                source_kind(pdf_name, si_suffixes),  # type: ignore[arg-type]
                images_dir / folder / image_name,
            ))
    return records


def check_contiguous(records: Sequence[PageRecord]) -> None:
    """Raise if any PDF's page numbers are not exactly 1..N."""
    by_pdf: dict[tuple[str, str], list[int]] = {}
    for r in records:
        by_pdf.setdefault((r.folder, r.pdf_name), []).append(r.page_number)
    for key, pages in by_pdf.items():
        if sorted(pages) != list(range(1, len(pages) + 1)):
            raise ValueError(f"{key[0]}/{key[1]}: page numbers not contiguous: {sorted(pages)}")
