"""Header-first JSON Lines and CSV files.

Every file written by the CLI starts with a ``# {json}`` comment line that
carries the run header. The JSON Lines reader returns that header separately.
"""

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

from sdmnav.errors import DatasetFormatError

HEADER_PREFIX = "# "


def header_line(header: dict) -> str:
    return HEADER_PREFIX + json.dumps(header, sort_keys=True) + "\n"


def dump_jsonl(records: Iterable[dict], header: Optional[dict] = None) -> str:
    lines = [header_line(header)] if header is not None else []
    lines.extend(json.dumps(r) + "\n" for r in records)
    return "".join(lines)


def write_jsonl(path: Path, records: Iterable[dict], header: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_jsonl(records, header), encoding="utf-8")
    return path


def parse_jsonl(text: str) -> tuple[Optional[dict], list[dict]]:
    """Split a header-first JSON Lines document into ``(header, records)``."""
    header = None
    records = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            if header is None and line_no == 1:
                header = _parse_header(line, line_no)
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {line_no}: malformed JSON: {exc}") from exc
        if not isinstance(record, dict):
            raise DatasetFormatError(f"line {line_no}: expected a JSON object")
        records.append(record)
    return header, records


def read_jsonl(path: Path) -> tuple[Optional[dict], list[dict]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DatasetFormatError(f"{path}: not UTF-8 text: {exc}") from exc
    return parse_jsonl(text)


def _parse_header(line: str, line_no: int) -> dict:
    try:
        header = json.loads(line[1:].strip())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"line {line_no}: malformed header: {exc}") from exc
    if not isinstance(header, dict):
        raise DatasetFormatError(f"line {line_no}: header must be a JSON object")
    return header


def dump_csv(columns: Sequence[str], rows: Iterable[Sequence], header: Optional[dict] = None) -> str:
    buffer = io.StringIO()
    if header is not None:
        buffer.write(header_line(header))
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buffer.getvalue()


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence], header: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_csv(columns, rows, header), encoding="utf-8")
    return path

