"""CSV/JSON writers and the provenance block attached to every CLI output."""

from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import json
import math
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__


def to_jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return to_jsonable(obj.to_dict())
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True)


def config_hash(config: dict[str, Any]) -> str:
    blob = json.dumps(to_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def provenance(config: dict[str, Any], seed: int | None) -> dict[str, Any]:
    import scipy

    return {
        "seed": seed,
        "config_hash": config_hash(config),
        "versions": {
            "gwinf": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def write_json(path: str | Path | None, payload: dict[str, Any]) -> None:
    """Write to ``path`` (stdout if None); the wall-clock time goes to a sidecar."""
    text = dumps(payload) + "\n"
    if path is None:
        sys.stdout.write(text)
        return
    path = Path(path)
    path.write_text(text)
    meta = path.with_name(path.name + ".meta.json")
    meta.write_text(json.dumps({"written_at": datetime.now(timezone.utc).isoformat()}) + "\n")


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
            n += 1
    return n


def _fmt(x: Any) -> Any:
    if isinstance(x, (float, np.floating)):
        return "" if not math.isfinite(x) else repr(float(x))
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    return x


def write_trace_csv(path, trace) -> int:
    return write_csv(path, ["n", "q", "sup_Q", "ratio_sup", "B", "phi_q"], trace.rows())


def write_eigen_csv(path, es) -> int:
    return write_csv(path, ["index", "v_i", "u_i"], ((i + 1, v, u) for i, (v, u) in enumerate(zip(es.v, es.u))))


def write_trials_csv(path, records) -> int:
    last = len(records.checkpoints) - 1
    header = ["trial"] + [f"survived@{n}" for n in records.checkpoints] + ["final_total"]
    rows = (
        [k] + [bool(a) for a in records.alive[k]] + [int(records.totals[k, last])]
        for k in range(records.trials)
    )
    return write_csv(path, header, rows)


def write_conditioned_csv(path, records, n: int, q_n: float, types: int = 5) -> int:
    """``q(n) Z_j(n)`` for ``j <= types`` over trials alive and not exploded at ``n``."""
    tr, ty, ct = records.cells[n]
    k = records.column(n)
    ok = np.flatnonzero(records.alive[:, k] & ~(records.exploded & (records.exploded_at <= n)))
    table = np.zeros((records.trials, types))
    sel = ty <= types
    np.add.at(table, (tr[sel], ty[sel] - 1), ct[sel])
    header = ["trial"] + [f"qZ_{j}" for j in range(1, types + 1)]
    return write_csv(path, header, ([int(t)] + list(q_n * table[t]) for t in ok))
