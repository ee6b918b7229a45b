"""CSV / JSON writers with shortest round-trip float formatting."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

LINEAGE_COLUMNS = ("scheme", "replicate", "survived", "J", "weight", "S", "times", "sizes", "ks")


def fmt(x) -> str:
    """Shortest decimal that round-trips (``repr``); integers stay integers."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def _join(values) -> str:
    return ";".join(fmt(v) for v in values)


def lineage_row(rec) -> list:
    return [
        rec.scheme.value,
        fmt(rec.replicate),
        fmt(rec.survived),
        str(rec.J),
        fmt(rec.weight),
        fmt(rec.marker_S),
        _join(rec.times),
        _join(rec.sizes),
        _join(rec.left_extinct) if rec.left_extinct is not None else "",
    ]


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else fmt(c) for c in row])
    return path


def write_lineages(path, records: Iterable) -> Path:
    return write_csv(path, LINEAGE_COLUMNS, (lineage_row(r) for r in records))


def read_lineages(path):
    """Parse a lineage CSV back into ``LineageRecord`` objects."""
    from .sampling import LineageRecord, Scheme

    def floats(s):
        return tuple(float(x) for x in s.split(";")) if s else ()

    def ints(s):
        return tuple(int(x) for x in s.split(";")) if s else ()

    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            scheme = Scheme(row["scheme"])
            out.append(LineageRecord(
                scheme=scheme,
                survived=row["survived"] == "1",
                times=floats(row["times"]),
                sizes=ints(row["sizes"]),
                left_extinct=ints(row["ks"]) if scheme is Scheme.LEFTMOST else None,
                marker_S=float(row["S"]) if row["S"] else None,
                weight=float(row["weight"]),
                replicate=int(row["replicate"]) if row["replicate"] else None,
            ))
    return out


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def write_genfun(path, table) -> Path:
    def rows():
        for i, t in enumerate(table.t_grid):
            for j, s in enumerate(table.s_grid):
                yield (float(t), float(s), float(table.values[i, j]), float(table.deriv_values[i, j]))
    return write_csv(path, ("t", "s", "F", "dFds"), rows())


def write_trace(path, tree) -> Path:
    rows = ((n.id, "" if n.parent is None else n.parent, n.birth_time, n.death_time, len(n.children))
            for n in tree.nodes)
    return write_csv(path, ("id", "parent", "birth", "death", "n_children"), rows)
