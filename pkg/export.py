"""
Atomic writers for command output files.

Every file is written to a temporary sibling first and moved into place with
``os.replace``, so an interrupted run never leaves a truncated file behind.
"""

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import yaml

PathLike = Union[str, Path]


def format_number(value: Any) -> str:
    """Full-precision decimal text (17 significant digits)."""
    value = getattr(value, "value", value)
    return format(float(value), ".17g")


def atomic_write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(
            [cell if isinstance(cell, str) else format_number(cell) for cell in row]
        )
    return atomic_write_text(path, buffer.getvalue())


def write_json(path: PathLike, data: Any) -> Path:
    return atomic_write_text(
        path, json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    )


def write_yaml(path: PathLike, data: Any) -> Path:
    return atomic_write_text(
        path, yaml.safe_dump(data, allow_unicode=True, sort_keys=False)
    )


__all__ = [
    "format_number",
    "atomic_write_text",
    "write_csv",
    "write_json",
    "write_yaml",
]
