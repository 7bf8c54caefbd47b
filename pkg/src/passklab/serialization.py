"""Text output helpers: fixed-precision floats for CSV, stable JSON."""

import csv
import json
from pathlib import Path


def fmt(x) -> str:
    """Render a number with 17 significant digits (float round-trip safe)."""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_csv(path, header, rows) -> None:
    """Write rows of mixed scalars; floats formatted via fmt()."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_json(path, obj) -> None:
    path = Path(path)
    with path.open("w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
