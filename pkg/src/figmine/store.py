"""Durable run store (sqlite) with a flat CSV export.

One database holds many runs. A page is identified by the sha256 of its image
bytes, so renaming or re-ingesting a corpus does not cause repeat requests;
the ``pages`` table keeps the manifest identity that points at each hash.
Every write commits immediately with ``synchronous=FULL``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import sqlite3
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path
from typing import Sequence

from .errors import StoreError
from .parsing import PARSED_COLUMNS, extract_fields, extraction_to_row, parse_extraction, parse_label_set
from .prompts import DESCRIPTOR_KEYS, ISOTHERM_KEY

EXPORT_COLUMNS = ("img", "text", "GPT-4V Output", ISOTHERM_KEY) + DESCRIPTOR_KEYS

_SCHEMA = """
CREATE TABLE IF NOT EXISTS runs (
    run_id TEXT PRIMARY KEY,
    prompt_version TEXT NOT NULL,
    model_id TEXT NOT NULL,
    backend TEXT NOT NULL,
    started TEXT NOT NULL,
    finished TEXT
);
CREATE TABLE IF NOT EXISTS pages (
    run_id TEXT NOT NULL,
    folder TEXT NOT NULL,
    img TEXT NOT NULL,
    image_key TEXT NOT NULL,
    PRIMARY KEY (run_id, folder, img)
);
CREATE TABLE IF NOT EXISTS responses (
    run_id TEXT NOT NULL,
    image_key TEXT NOT NULL,
    raw_text TEXT NOT NULL,
    status TEXT NOT NULL,
    attempts INTEGER NOT NULL,
    history TEXT NOT NULL,
    request_tokens INTEGER NOT NULL DEFAULT 0,
    response_tokens INTEGER NOT NULL DEFAULT 0,
    cost_usd TEXT NOT NULL DEFAULT '0',
    labels TEXT NOT NULL DEFAULT '',
    degenerate INTEGER NOT NULL DEFAULT 0,
    extraction TEXT NOT NULL DEFAULT '{}',
    latency_s REAL NOT NULL DEFAULT 0,
    PRIMARY KEY (run_id, image_key)
);
"""

_ROW_FIELDS = ("image_key", "raw_text", "status", "attempts", "history", "request_tokens",
               "response_tokens", "cost_usd", "labels", "degenerate", "extraction")


def hash_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass(frozen=True)
class StoredRow:
    image_key: str
    raw_text: str
    status: str
    attempts: int = 1
    history: str = "[]"
    request_tokens: int = 0
    response_tokens: int = 0
    cost_usd: str = "0"
    labels: str = ""
    degenerate: bool = False
    extraction: str = "{}"
    latency_s: float = field(default=0.0, compare=False)

    @classmethod
    def from_exchange(cls, ex, previous: "StoredRow | None" = None) -> "StoredRow":
        history = (json.loads(previous.history) if previous else []) + list(ex.history)
        text = ex.raw_text
        labels = parse_label_set(text)
        return cls(
            image_key=ex.image_ref,
            raw_text=text,
            status=ex.status,
            attempts=len(history),
            history=json.dumps(history, sort_keys=True),
            request_tokens=ex.request_tokens + (previous.request_tokens if previous else 0),
            response_tokens=ex.response_tokens + (previous.response_tokens if previous else 0),
            cost_usd=str(Decimal(ex.cost_usd) + (Decimal(previous.cost_usd) if previous else 0)),
            labels=labels.to_field(),
            degenerate=labels.degenerate,
            extraction=json.dumps(extract_fields(text), sort_keys=True),
            latency_s=ex.latency_s,
        )


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    prompt_version: str
    model_id: str
    backend: str
    started: str
    finished: str | None
    totals: dict


class Store:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.conn = sqlite3.connect(self.path)
            self.conn.execute("PRAGMA synchronous=FULL")
            self.conn.executescript(_SCHEMA)
            self.conn.commit()
        except (sqlite3.Error, OSError) as exc:
            raise StoreError(f"cannot open store {self.path}: {exc}") from exc

    def close(self):
        self.conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _write(self, sql: str, params=()):
        try:
            with self.conn:
                self.conn.execute(sql, params)
        except sqlite3.Error as exc:
            raise StoreError(f"store write failed: {exc}") from exc

    # -- runs -----------------------------------------------------------------

    def begin_run(self, run_id: str, prompt_version: str, model_id: str, backend: str) -> None:
        """Record a run; re-opening an existing run keeps its original metadata."""
        existing = self.conn.execute(
            "SELECT prompt_version FROM runs WHERE run_id=?", (run_id,)).fetchone()
        if existing and existing[0] != prompt_version:
            raise StoreError(f"run {run_id} was started with prompt {existing[0]}, not {prompt_version}")
        now = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self._write("INSERT OR IGNORE INTO runs VALUES (?,?,?,?,?,NULL)",
                    (run_id, prompt_version, model_id, backend, now))

    def finish_run(self, run_id: str) -> None:
        now = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self._write("UPDATE runs SET finished=? WHERE run_id=?", (now, run_id))

    def run_record(self, run_id: str) -> RunRecord:
        row = self.conn.execute("SELECT * FROM runs WHERE run_id=?", (run_id,)).fetchone()
        if row is None:
            raise KeyError(run_id)
        return RunRecord(*row, totals=self.totals(run_id))

    def runs(self) -> list[str]:
        return [r[0] for r in self.conn.execute("SELECT run_id FROM runs ORDER BY run_id")]

    # -- pages ----------------------------------------------------------------

    def register_pages(self, run_id: str, pages: Sequence) -> dict[str, Path]:
        """Hash each page image and record it; return ``{image_key: path}`` in manifest order."""
        keyed: dict[str, Path] = {}
        rows = []
        for p in pages:
            try:
                key = hash_file(p.image_path)
            except OSError as exc:
                raise StoreError(f"cannot read page image {p.image_path}: {exc}") from exc
            keyed.setdefault(key, Path(p.image_path))
            rows.append((run_id, p.folder, p.image_name, key))
        try:
            with self.conn:
                self.conn.executemany("INSERT OR REPLACE INTO pages VALUES (?,?,?,?)", rows)
        except sqlite3.Error as exc:
            raise StoreError(f"store write failed: {exc}") from exc
        return keyed

    # -- responses ------------------------------------------------------------

    def get(self, run_id: str, image_key: str) -> StoredRow | None:
        row = self.conn.execute(
            f"SELECT {', '.join(_ROW_FIELDS)}, latency_s FROM responses WHERE run_id=? AND image_key=?",
            (run_id, image_key)).fetchone()
        if row is None:
            return None
        values = dict(zip(_ROW_FIELDS + ("latency_s",), row))
        values["degenerate"] = bool(values["degenerate"])
        return StoredRow(**values)

    def upsert(self, run_id: str, row: StoredRow) -> None:
        """Insert or replace the row for ``(run_id, image_key)``; durable on return."""
        if self.get(run_id, row.image_key) == row:
            return
        values = [getattr(row, f) for f in _ROW_FIELDS]
        values[_ROW_FIELDS.index("degenerate")] = int(row.degenerate)
        self._write(
            f"INSERT OR REPLACE INTO responses (run_id, {', '.join(_ROW_FIELDS)}, latency_s) "
            f"VALUES ({', '.join('?' * (len(_ROW_FIELDS) + 2))})",
            [run_id, *values, row.latency_s],
        )

    def upsert_exchange(self, run_id: str, exchange) -> StoredRow:
        row = StoredRow.from_exchange(exchange, self.get(run_id, exchange.image_ref))
        self.upsert(run_id, row)
        return row

    def pending(self, run_id: str, keys: Sequence[str], policy) -> list[str]:
        """Keys that have no usable answer yet, in the given order."""
        from .vision import needs_requeue

        out = []
        for key in keys:
            row = self.get(run_id, key)
            if row is None or row.status != "ok" or needs_requeue(row.raw_text, policy):
                out.append(key)
        return out

    def totals(self, run_id: str) -> dict:
        pages = self.conn.execute(
            "SELECT COUNT(*) FROM pages WHERE run_id=?", (run_id,)).fetchone()[0]
        counts = dict(self.conn.execute(
            "SELECT status, COUNT(*) FROM responses WHERE run_id=? GROUP BY status", (run_id,)))
        cost, tokens = Decimal(0), 0
        for c, rt, st in self.conn.execute(
                "SELECT cost_usd, request_tokens, response_tokens FROM responses WHERE run_id=?", (run_id,)):
            cost += Decimal(c)
            tokens += rt + st
        return {"pages": pages, "ok": counts.get("ok", 0), "exhausted": counts.get("exhausted", 0),
                "cost_usd": cost, "tokens": tokens}

    # -- export ---------------------------------------------------------------

    def _joined(self, run_id: str):
        return self.conn.execute(
            "SELECT p.img, p.folder, r.raw_text, r.labels, r.extraction "
            "FROM pages p LEFT JOIN responses r ON r.run_id=p.run_id AND r.image_key=p.image_key "
            "WHERE p.run_id=? ORDER BY p.img, p.folder", (run_id,)).fetchall()

    def export_rows(self, run_id: str) -> list[list[str]]:
        out = []
        for img, _, text, labels, extraction in self._joined(run_id):
            if text is None:
                out.append([img] + [""] * (len(EXPORT_COLUMNS) - 1))
                continue
            fields = json.loads(extraction)
            out.append([img, text, labels] + [fields.get(k, "") for k in (ISOTHERM_KEY,) + DESCRIPTOR_KEYS])
        return out

    def export_csv(self, run_id: str, out: str | Path) -> Path:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EXPORT_COLUMNS)
            w.writerows(self.export_rows(run_id))
        return out

    def parsed_rows(self, run_id: str) -> list[dict[str, str]]:
        rows = []
        for img, _, text, labels, _ in self._joined(run_id):
            if text is None:
                continue
            ext = parse_extraction(text)
            ls = parse_label_set(text)
            rows.append({"img": img, "labels": ls.to_field(), "degenerate": str(int(ls.degenerate)),
                         **extraction_to_row(ext)})
        return rows

    def export_parsed_csv(self, run_id: str, out: str | Path) -> Path:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=PARSED_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(self.parsed_rows(run_id))
        return out

    def dump(self, run_id: str) -> str:
        """Canonical text of everything in a run except timestamps and latency."""
        lines = [json.dumps(r) for r in self.conn.execute(
            "SELECT folder, img, image_key FROM pages WHERE run_id=? ORDER BY folder, img", (run_id,))]
        lines += [json.dumps(r) for r in self.conn.execute(
            f"SELECT {', '.join(_ROW_FIELDS)} FROM responses WHERE run_id=? ORDER BY image_key", (run_id,))]
        return "\n".join(lines) + "\n"
