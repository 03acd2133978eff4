"""Readers and writers for the on-disk formats.

* Q-matrix CSV: header ``k1,...,kK`` then one integer row per item, with a
  levels sidecar JSON ``{"levels": [M_1, ..., M_K]}``.
* Responses CSV: header row, optional leading ``id`` column, 0/1 entries.
* Fit config JSON: ``{tol, max_iter, cores, init, prior_scheme, flavor}``
  where ``init`` is ``"uniform"`` or ``{"dirichlet_seed": int}``.
* Reports JSON, parameter tables CSV and run manifests.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .attributes import GMatrix, QMatrix, ProfileSpace
from .effects import theta_to_delta
from .vb import FitConfig, FitReport


class InputError(ValueError):
    """Malformed or inconsistent input file."""


def _profile_label(row) -> str:
    return "".join(str(int(v)) for v in row)


# ---------------------------------------------------------------------------
# atomic writes
# ---------------------------------------------------------------------------


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _rows_to_csv(header: Sequence[str], rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Q-matrix and levels
# ---------------------------------------------------------------------------


def read_levels(path) -> np.ndarray:
    try:
        data = json.loads(Path(path).read_text())
        return np.asarray(data["levels"], dtype=np.int64)
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read levels from {path}: {exc}") from exc


def write_levels(path, levels) -> None:
    write_json(path, {"levels": [int(m) for m in levels]})


def read_qmatrix(path, levels=None) -> QMatrix:
    """Read a Q-matrix CSV.

    ``levels`` may be an array, a path to a levels JSON, or None; when None a
    ``levels.json`` next to the CSV is used if present, otherwise each
    attribute gets ``max(q_k) + 1`` levels (at least 2).
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read Q-matrix {path}: {exc}") from exc
    if len(rows) < 2:
        raise InputError(f"{path}: Q-matrix needs a header and at least one item")
    try:
        entries = np.array([[int(v) for v in r] for r in rows[1:] if r], dtype=np.int64)
    except ValueError as exc:
        raise InputError(f"{path}: non-integer Q-matrix entry ({exc})") from exc
    if entries.shape[1] != len(rows[0]):
        raise InputError(f"{path}: header has {len(rows[0])} columns, rows have {entries.shape[1]}")
    if levels is None:
        sidecar = path.with_name("levels.json")
        if sidecar.exists():
            levels = read_levels(sidecar)
        else:
            levels = np.maximum(entries.max(axis=0) + 1, 2)
    elif isinstance(levels, (str, os.PathLike)):
        levels = read_levels(levels)
    try:
        return QMatrix(entries, np.asarray(levels))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def write_qmatrix(path, qmatrix: QMatrix, levels_path=None) -> None:
    header = [f"k{k + 1}" for k in range(qmatrix.n_attributes)]
    atomic_write_text(path, _rows_to_csv(header, qmatrix.entries.tolist()))
    if levels_path is not None:
        write_levels(levels_path, qmatrix.levels)


# ---------------------------------------------------------------------------
# responses
# ---------------------------------------------------------------------------


def read_responses(path) -> tuple[np.ndarray, list[str] | None]:
    """Read a response CSV; returns ``(X, ids)`` with ``ids`` None if absent."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            body = [r for r in reader if r]
    except OSError as exc:
        raise InputError(f"cannot read responses {path}: {exc}") from exc
    if header is None:
        raise InputError(f"{path}: empty response file")
    has_id = header[0].strip().lower() == "id"
    ids = [r[0] for r in body] if has_id else None
    start = 1 if has_id else 0
    try:
        X = np.array([[int(v) for v in r[start:]] for r in body], dtype=np.int64)
    except ValueError as exc:
        raise InputError(f"{path}: non-integer or missing response ({exc})") from exc
    if X.size == 0:
        X = X.reshape(0, len(header) - start)
    if X.shape[1] != len(header) - start:
        raise InputError(f"{path}: ragged response rows")
    if not np.all((X == 0) | (X == 1)):
        raise InputError(f"{path}: responses must be 0/1")
    return X.astype(np.uint8), ids


def write_responses(path, X, ids: Sequence[str] | None = None) -> None:
    X = np.asarray(X, dtype=np.int64)
    header = [f"j{j + 1}" for j in range(X.shape[1])]
    if ids is not None:
        header = ["id"] + header
        rows = ([i] + r for i, r in zip(ids, X.tolist()))
    else:
        rows = X.tolist()
    atomic_write_text(path, _rows_to_csv(header, rows))


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------

_FIT_KEYS = {"tol", "max_iter", "cores", "init", "prior_scheme", "flavor"}


def parse_fit_config(data: dict[str, Any]) -> tuple[FitConfig, str, str]:
    """Turn a config mapping into ``(FitConfig, flavor, prior_scheme)``."""
    unknown = set(data) - _FIT_KEYS
    if unknown:
        raise InputError(f"unknown fit config keys: {sorted(unknown)}")
    init = data.get("init", "uniform")
    seed = None
    if isinstance(init, dict):
        if set(init) != {"dirichlet_seed"}:
            raise InputError("init must be 'uniform' or {'dirichlet_seed': int}")
        seed = int(init["dirichlet_seed"])
        init = "dirichlet"
    elif init != "uniform":
        raise InputError("init must be 'uniform' or {'dirichlet_seed': int}")
    try:
        cfg = FitConfig(tol=float(data.get("tol", 1e-4)), max_iter=int(data.get("max_iter", 2000)),
                        cores=int(data.get("cores", 8)), init=init, seed=seed)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    return cfg, data.get("flavor", "collapsed"), data.get("prior_scheme", "weakly_informative")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read JSON {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def _item_blocks(gmatrices: Sequence[GMatrix], eap, sd, rhat=None) -> list[dict]:
    out = []
    for j, g in enumerate(gmatrices):
        block = {
            "item": j + 1,
            "attributes": (g.attributes + 1).tolist(),
            "patterns": [_profile_label(p) for p in g.patterns],
            "eap": np.asarray(eap[j]).tolist(),
            "sd": np.asarray(sd[j]).tolist(),
        }
        if rhat is not None:
            block["rhat"] = np.asarray(rhat[j]).tolist()
        out.append(block)
    return out


def fit_report_dict(report: FitReport) -> dict:
    space = report.space
    return {
        "profile_order": "lexicographic, last attribute fastest",
        "profiles": [_profile_label(p) for p in space.profiles],
        "converged": report.converged,
        "iterations": report.iterations,
        "wall_time": report.wall_time,
        "vlb": report.vlb,
        "vlb_trace": list(report.state.vlb_trace),
        "theta": _item_blocks(report.gmatrices, report.eap_theta, report.sd_theta),
        "pi": {"eap": report.eap_pi.tolist(), "sd": report.sd_pi.tolist()},
        "map_profiles": report.map_profiles.tolist(),
    }


def gibbs_report_dict(summary) -> dict:
    space = summary.space
    return {
        "profile_order": "lexicographic, last attribute fastest",
        "profiles": [_profile_label(p) for p in space.profiles],
        "wall_time": summary.wall_time,
        "max_rhat": summary.max_rhat,
        "theta": _item_blocks(summary.gmatrices, summary.eap_theta, summary.sd_theta, summary.rhat_theta),
        "pi": {"eap": summary.eap_pi.tolist(), "sd": summary.sd_pi.tolist(),
               "rhat": summary.rhat_pi.tolist()},
        "map_profiles": summary.map_profiles.tolist(),
    }


def theta_table_csv(gmatrices: Sequence[GMatrix], eap, sd) -> str:
    """One row per item; each cell reads ``pattern: EAP (SD)``."""
    width = max(g.n_patterns for g in gmatrices)
    header = ["item", "q_attributes"] + [f"P{p + 1}" for p in range(width)]
    rows = []
    for j, g in enumerate(gmatrices):
        cells = [f"P({_profile_label(pat)}): {e:.4f} ({s:.4f})"
                 for pat, e, s in zip(g.patterns, eap[j], sd[j])]
        cells += [""] * (width - len(cells))
        rows.append([j + 1, " ".join(str(a + 1) for a in g.attributes)] + cells)
    return _rows_to_csv(header, rows)


def pi_table_csv(space: ProfileSpace, eap, sd) -> str:
    rows = [[_profile_label(p), f"{e:.6f}", f"{s:.6f}"] for p, e, s in zip(space.profiles, eap, sd)]
    return _rows_to_csv(["profile", "eap", "sd"], rows)


def gmatrix_csv(g: GMatrix, space: ProfileSpace) -> str:
    """Pattern columns followed by one indicator column per global profile."""
    header = [f"a{k + 1}" for k in g.attributes] + [_profile_label(p) for p in space.profiles]
    rows = [list(pat) + list(row) for pat, row in zip(g.patterns.tolist(), g.rows.tolist())]
    return _rows_to_csv(header, rows)


def effects_csv(gmatrices: Sequence[GMatrix], eap) -> str:
    """Least-squares effects per item (collapsed patterns only)."""
    blocks = []
    for j, g in enumerate(gmatrices):
        eff = theta_to_delta(eap[j], g.patterns)
        blocks.append((j, eff.labels(g.attributes), eff.values))
    columns: list[str] = []
    for _, labels, _ in blocks:
        for lab in labels:
            if lab not in columns:
                columns.append(lab)
    columns.sort(key=lambda s: (len(s), s))
    rows = []
    for j, labels, values in blocks:
        lookup = dict(zip(labels, values))
        rows.append([j + 1] + [f"{lookup[c]:.6f}" if c in lookup else "" for c in columns])
    return _rows_to_csv(["item"] + columns, rows)


def draws_csv(draws: np.ndarray, names: Sequence[str]) -> str:
    """``draws`` shaped (chains, kept, P) -> long CSV with chain/draw columns."""
    header = ["chain", "draw"] + list(names)
    rows = []
    for c in range(draws.shape[0]):
        for d in range(draws.shape[1]):
            rows.append([c + 1, d + 1] + [repr(float(v)) for v in draws[c, d]])
    return _rows_to_csv(header, rows)
