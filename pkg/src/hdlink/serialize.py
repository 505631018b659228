"""CSV and JSON input/output for records, matrices and results.

Floats are written with ``repr``, the shortest string that round-trips to
the same double.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict

import numpy as np

from .bases import MUBSet, OperatorSet
from .core import DensityMatrix
from .tomography import CountsRecord, TomographyResult

COUNTS_COLUMNS = ("m_a", "m_b", "a", "b", "counts")


def _num(x: float):
    x = float(x)
    return x if math.isfinite(x) else None


def complex_pairs(matrix) -> list:
    """Nested [re, im] pairs for a complex array of any rank."""
    a = np.asarray(matrix, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def from_complex_pairs(data) -> np.ndarray:
    a = np.asarray(data, dtype=float)
    return a[..., 0] + 1j * a[..., 1]


def density_to_dict(rho, d: int) -> dict:
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    return {"d": int(d), "re": m.real.tolist(), "im": m.imag.tolist()}


def density_from_dict(data: dict) -> np.ndarray:
    re, im = np.asarray(data["re"], dtype=float), np.asarray(data["im"], dtype=float)
    if re.shape != im.shape or re.ndim != 2 or re.shape[0] != re.shape[1]:
        raise ValueError("density matrix JSON needs square 're' and 'im' arrays of equal shape")
    return re + 1j * im


def density_to_csv(rho) -> str:
    """Rows of (row, col, re, im)."""
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "col", "re", "im"])
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            w.writerow([i, j, repr(float(m[i, j].real)), repr(float(m[i, j].imag))])
    return buf.getvalue()


def bases_to_json(bases: MUBSet) -> str:
    return json.dumps({"d": bases.d, "bases": [complex_pairs(b) for b in bases.bases]})


def operators_to_json(ops: OperatorSet) -> str:
    return json.dumps({"d": ops.d, "labels": list(ops.labels),
                       "operators": [complex_pairs(o) for o in ops.operators]})


def records_to_csv(records: list[CountsRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COUNTS_COLUMNS)
    for r in records:
        if r.N != 2:
            raise ValueError("the counts CSV format holds two-party records")
        for a in range(r.d):
            for b in range(r.d):
                w.writerow([r.setting[0], r.setting[1], a, b, repr(float(r.counts[a, b]))])
    return buf.getvalue()


def records_from_csv(text: str, d: int | None = None) -> list[CountsRecord]:
    """Parse a counts CSV; ``d`` defaults to the largest outcome index + 1."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or any(c not in reader.fieldnames for c in COUNTS_COLUMNS):
        raise ValueError(f"counts CSV needs columns {COUNTS_COLUMNS}")
    rows = []
    for line in reader:
        rows.append((int(line["m_a"]), int(line["m_b"]), int(line["a"]), int(line["b"]), float(line["counts"])))
    if not rows:
        raise ValueError("counts CSV is empty")
    if d is None:
        d = 1 + max(max(r[2], r[3]) for r in rows)
    tables: dict[tuple[int, int], np.ndarray] = defaultdict(lambda: np.zeros((d, d)))
    for m_a, m_b, a, b, c in rows:
        if not (0 <= a < d and 0 <= b < d):
            raise ValueError(f"outcome ({a}, {b}) out of range for d={d}")
        tables[(m_a, m_b)][a, b] += c
    return [CountsRecord(d, s, t) for s, t in sorted(tables.items())]


def result_to_dict(result: TomographyResult, d: int) -> dict:
    out = {
        "rho_linear": density_to_dict(result.rho_linear, d),
        "rho_physical": density_to_dict(result.rho_physical, d),
        "fidelity": _num(result.fidelity),
        "fidelity_std": None if result.errors is None else _num(result.errors.fidelity_std),
        "entropy": None if result.entropy is None else _num(result.entropy),
        "entropy_std": None if result.errors is None else _num(result.errors.entropy_std),
        "dimension_witness": result.dimension_witness,
        "witness_raw": None if result.witness_raw is None else _num(result.witness_raw),
        "dimension_witness_std": None if result.errors is None else _num(result.errors.witness_std),
        "cost": _num(result.cost),
        "converged": result.converged,
    }
    if result.errors is not None:
        out["distributions"] = {
            "fidelity": [_num(x) for x in result.errors.fidelities],
            "entropy": [_num(x) for x in result.errors.entropies],
            "dimension_witness": [_num(x) for x in result.errors.witnesses],
        }
    return out


def dumps(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True)


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()
