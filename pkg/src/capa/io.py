"""Model files (JSON) and sample tables (CSV).

Model files are written with every float as ``%.17g`` so that a load/save
round trip is exact and two fits with the same inputs give identical bytes.
"""

from __future__ import annotations

import csv
import json
from typing import Optional

import numpy as np

from .core import ConfigurationError, Kind, ModelParams, Solver
from .priors import NeighbourhoodSpec

FORMAT_VERSION = 1


class FormatError(ConfigurationError):
    pass


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _encode(obj, indent=0) -> str:
    pad = "  " * (indent + 1)
    if obj is None or isinstance(obj, (bool, str)):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not np.isfinite(obj):
            raise FormatError(f"cannot serialize non-finite value {obj}")
        text = "%.17g" % obj
        # keep it a JSON float so -0.0 and integral values load unchanged
        return text if any(c in text for c in ".en") else text + ".0"
    if isinstance(obj, list):
        if all(not isinstance(v, (list, dict)) for v in obj):
            return "[" + ", ".join(_encode(v) for v in obj) + "]"
        inner = (",\n" + pad).join(_encode(v, indent + 1) for v in obj)
        return "[\n" + pad + inner + "\n" + "  " * indent + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [json.dumps(k) + ": " + _encode(v, indent + 1) for k, v in obj.items()]
        return "{\n" + pad + (",\n" + pad).join(items) + "\n" + "  " * indent + "}"
    raise FormatError(f"cannot serialize {type(obj).__name__}")


def model_to_dict(params: ModelParams) -> dict:
    W = np.asarray(params.W)
    return _plain({
        "format_version": FORMAT_VERSION,
        "kind": params.kind.value,
        "solver": params.solver.value,
        "F": params.n_features,
        "N": params.latent_dim,
        "W": W,
        "sigma_x2": params.sigma_x2,
        "lambda": params.lambda_,
        "sigma2": params.sigma2,
        "data_mean": params.data_mean,
        "neighbourhood": None if params.neighbourhood is None else params.neighbourhood.to_dict(),
        "fit_meta": params.fit_meta,
    })


def model_from_dict(d: dict) -> ModelParams:
    if d.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported model format_version {d.get('format_version')!r}")
    try:
        kind, solver = Kind(d["kind"]), Solver(d["solver"])
        W = np.asarray(d["W"], dtype=float)
        lam = np.asarray(d["lambda"], dtype=float)
        sigma2 = np.asarray(d["sigma2"], dtype=float)
        mean = np.asarray(d["data_mean"], dtype=float)
        F, N = int(d["F"]), int(d["N"])
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"malformed model file: {exc}") from None
    expected = (N, F) if solver is Solver.ML else (F, N)
    if W.shape != expected or lam.shape != (N,) or sigma2.shape != (N,) or mean.shape != (F,):
        raise FormatError(f"inconsistent shapes in model file (W {W.shape}, F={F}, N={N})")
    nb = d.get("neighbourhood")
    spec = None if nb is None else NeighbourhoodSpec.from_dict(nb)
    return ModelParams(kind, solver, W, float(d["sigma_x2"]), lam, sigma2, mean, spec,
                       dict(d.get("fit_meta") or {}))


def dumps_model(params: ModelParams) -> str:
    return _encode(model_to_dict(params)) + "\n"


def save_model(params: ModelParams, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_model(params))


def load_model(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not a model file ({exc})") from None
    return model_from_dict(d)


def read_csv(path, labels_col: Optional[str] = None):
    """Read a headed CSV with one sample per row.

    Returns ``(X, labels, feature_names, label_names)`` with ``X`` of shape
    (F, T).  Label values are mapped to ids 0..K-1 in sorted order and
    ``label_names`` holds the original values.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise FormatError(f"{path}: empty file")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    if not body:
        raise FormatError(f"{path}: no data rows")
    if labels_col is not None and labels_col not in header:
        raise FormatError(f"{path}: no column named {labels_col!r}")
    li = header.index(labels_col) if labels_col is not None else None
    feat = [i for i in range(len(header)) if i != li]
    if not feat:
        raise FormatError(f"{path}: no feature columns")
    X = np.empty((len(feat), len(body)))
    raw_labels = []
    for t, r in enumerate(body):
        if len(r) != len(header):
            raise FormatError(f"{path}: row {t + 2} has {len(r)} fields, expected {len(header)}")
        try:
            X[:, t] = [float(r[i]) for i in feat]
        except ValueError as exc:
            raise FormatError(f"{path}: row {t + 2}: {exc}") from None
        if li is not None:
            raw_labels.append(r[li].strip())
    labels = names = None
    if li is not None:
        names, labels = np.unique(np.asarray(raw_labels), return_inverse=True)
        # numeric labels sort numerically
        try:
            vals = np.asarray(raw_labels, dtype=float)
            names, labels = np.unique(vals, return_inverse=True)
        except ValueError:
            pass
    return X, labels, [header[i] for i in feat], names


def write_csv(path, header, columns: np.ndarray, extra=None) -> None:
    """Write one row per column of ``columns`` (shape (C, T)), floats as %.17g.

    ``extra`` is an optional ``(name, values)`` pair appended as a column.
    """
    columns = np.atleast_2d(np.asarray(columns, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header) + ([extra[0]] if extra else []))
        for t in range(columns.shape[1]):
            row = ["%.17g" % v for v in columns[:, t]]
            if extra:
                row.append(str(extra[1][t]))
            w.writerow(row)
