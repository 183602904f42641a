"""Console status lines and deterministic file output."""

from __future__ import annotations

import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

NUMBER_FORMAT = "{:.8e}"


def log(tag: str, message: str) -> None:
    """Tagged status line on stderr; data never goes through here."""
    print(f"[{tag}] {message}", file=sys.stderr, flush=True)


def format_value(value) -> str:
    """9 significant digits for floats, plain text for everything else."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return NUMBER_FORMAT.format(float(value))
    if value is None:
        return "none"
    return str(getattr(value, "value", value))


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """Write ``text`` to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def metadata_lines(metadata: Mapping[str, object], timestamp: bool) -> list:
    lines = []
    if timestamp:
        lines.append(f"# generated={datetime.now(timezone.utc).isoformat(timespec='seconds')}")
    lines.extend(f"# {key}={format_value(value)}" for key, value in metadata.items())
    return lines


def render_table(
    columns: Sequence[str],
    rows: Iterable[Sequence[object]],
    metadata: Optional[Mapping[str, object]] = None,
    timestamp: bool = False,
) -> str:
    """Comma-separated table with one header row and optional ``#`` metadata."""
    lines = metadata_lines(metadata or {}, timestamp)
    lines.append(",".join(columns))
    lines.extend(",".join(format_value(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def render_report(
    entries: Mapping[str, object],
    metadata: Optional[Mapping[str, object]] = None,
    timestamp: bool = False,
) -> str:
    """``key: value`` report, one entry per line."""
    lines = metadata_lines(metadata or {}, timestamp)
    lines.extend(f"{key}: {format_value(value)}" for key, value in entries.items())
    return "\n".join(lines) + "\n"


def emit(text: str, path: Optional[Union[str, Path]] = None) -> None:
    """Write to ``path`` atomically, or to stdout when no path is given."""
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        atomic_write_text(path, text)
