"""Delimited text readers and writers.

Comma- or tab-delimited files are accepted on input (the delimiter is
taken from the first line); output is always comma-delimited. Reals are
written with 17 significant digits so that values survive a round trip
exactly. Missing values are written and read as ``NA``.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .core import GenotypeMatrix, Pedigree

MISSING = ("NA", "na", "NaN", "nan", ".", "")
_FLAGS = {"true": 1.0, "false": 0.0}


class FileFormatError(ValueError):
    """Malformed input; the message carries ``path:line:column``."""

    def __init__(self, path, line: int, column: int, message: str):
        self.path = str(path)
        self.line = line
        self.column = column
        super().__init__(f"{path}:{line}:{column}: {message}")


def format_real(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "NA"
    return format(x, ".17g")


def _split(line: str, delim: str) -> List[str]:
    return [f.strip() for f in line.rstrip("\r\n").split(delim)]


def _lines(path) -> Tuple[str, List[Tuple[int, List[str]]]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    text = path.read_text().splitlines()
    rows = [(i + 1, line) for i, line in enumerate(text) if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        raise FileFormatError(path, 1, 1, "file is empty")
    delim = "\t" if "\t" in rows[0][1] else ","
    return delim, [(no, _split(line, delim)) for no, line in rows]


def _parse_real(path, line, col, text) -> float:
    if text in MISSING:
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise FileFormatError(path, line, col, f"expected a number, got {text!r}") from None


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# Genotypes
# ---------------------------------------------------------------------------


def read_genotypes(path) -> GenotypeMatrix:
    """Header ``id,<marker ids>``; one row per individual; codes 0/1/2 or NA."""
    _, rows = _lines(path)
    header_line, header = rows[0]
    if len(header) < 2:
        raise FileFormatError(path, header_line, 1, "header needs an id column and at least one marker")
    markers = header[1:]
    p = len(markers)
    ids, codes, missing = [], [], []
    for line, fields in rows[1:]:
        if len(fields) != p + 1:
            raise FileFormatError(path, line, min(len(fields), p + 1), f"expected {p + 1} fields, found {len(fields)}")
        row = np.empty(p, dtype=np.int8)
        miss = np.zeros(p, dtype=bool)
        for j, text in enumerate(fields[1:]):
            if text in ("0", "1", "2"):
                row[j] = int(text)
            elif text in MISSING:
                row[j] = 0
                miss[j] = True
            else:
                raise FileFormatError(path, line, j + 2, f"genotype must be 0, 1, 2 or NA, got {text!r}")
        ids.append(fields[0])
        codes.append(row)
        missing.append(miss)
    if not ids:
        raise FileFormatError(path, header_line + 1, 1, "no genotype rows")
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise FileFormatError(path, rows[1 + ids.index(dup)][0], 1, f"duplicated individual id {dup!r}")
    missing = np.array(missing)
    return GenotypeMatrix(np.array(codes), missing if missing.any() else None, tuple(ids), tuple(markers))


def write_genotypes(path, W: GenotypeMatrix) -> None:
    ids = W.individual_ids or tuple(f"ind{i + 1}" for i in range(W.n))
    markers = W.marker_ids or tuple(f"snp{j + 1}" for j in range(W.p))
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(("id",) + tuple(markers)) + "\n")
        for i in range(W.n):
            row = W.codes[i].astype(str).astype(object)
            if W.missing is not None:
                row[W.missing[i]] = "NA"
            fh.write(ids[i] + "," + ",".join(row) + "\n")


# ---------------------------------------------------------------------------
# Pedigree
# ---------------------------------------------------------------------------


def read_pedigree(path) -> Pedigree:
    """Three columns ``id, sire, dam`` with 0 for an unknown parent; optional header."""
    _, rows = _lines(path)
    if rows[0][1][0].lower() in ("id", "individual", "animal"):
        rows = rows[1:]
    all_ids = {fields[0] for _, fields in rows}
    seen = set()
    records = []
    for line, fields in rows:
        if len(fields) != 3:
            raise FileFormatError(path, line, min(len(fields), 3), f"expected 3 fields, found {len(fields)}")
        ind = fields[0]
        if ind in seen:
            raise FileFormatError(path, line, 1, f"duplicated individual id {ind!r}")
        for col, parent in ((2, fields[1]), (3, fields[2])):
            if parent in ("0", "", ".", "NA") or parent in seen:
                continue
            if parent == ind or parent in all_ids:
                raise FileFormatError(
                    path, line, col, f"parent {parent!r} of {ind!r} is not listed before it (cycle or forward reference)"
                )
            raise FileFormatError(path, line, col, f"parent {parent!r} of {ind!r} has no pedigree record")
        seen.add(ind)
        records.append(tuple(fields))
    return Pedigree.from_records(records)


# ---------------------------------------------------------------------------
# Phenotypes
# ---------------------------------------------------------------------------


class PhenotypeTable:
    """id, trait and optional covariate columns (numeric) or a ``family`` label column."""

    def __init__(self, ids, y, covariates, covariate_names, family=None):
        self.ids = tuple(ids)
        self.y = np.asarray(y, dtype=np.float64)
        self.covariates = np.asarray(covariates, dtype=np.float64).reshape(len(self.ids), -1)
        self.covariate_names = tuple(covariate_names)
        self.family = None if family is None else tuple(family)


def read_phenotypes(path) -> PhenotypeTable:
    _, rows = _lines(path)
    first_line, first = rows[0]
    if len(first) < 2:
        raise FileFormatError(path, first_line, 1, "phenotype rows need at least id and trait value")
    has_header = not _is_number(first[1])
    names = first[2:] if has_header else [f"x{k + 1}" for k in range(len(first) - 2)]
    body = rows[1:] if has_header else rows
    family_col = names.index("family") if "family" in names else None
    ids, y, cov, fam = [], [], [], []
    width = 2 + len(names)
    for line, fields in body:
        if len(fields) != width:
            raise FileFormatError(path, line, min(len(fields), width), f"expected {width} fields, found {len(fields)}")
        value = _parse_real(path, line, 2, fields[1])
        if not math.isfinite(value):
            raise FileFormatError(path, line, 2, f"trait value must be finite, got {fields[1]!r}")
        ids.append(fields[0])
        y.append(value)
        row = []
        for k, text in enumerate(fields[2:]):
            if k == family_col:
                fam.append(text)
                continue
            v = _parse_real(path, line, k + 3, text)
            if not math.isfinite(v):
                raise FileFormatError(path, line, k + 3, f"covariate must be finite, got {text!r}")
            row.append(v)
        cov.append(row)
    if not ids:
        raise FileFormatError(path, first_line, 1, "no phenotype rows")
    seen = set()
    for (line, _), i in zip(body, ids):
        if i in seen:
            raise FileFormatError(path, line, 1, f"duplicated individual id {i!r}")
        seen.add(i)
    cov_names = [nm for k, nm in enumerate(names) if k != family_col]
    return PhenotypeTable(ids, y, np.array(cov).reshape(len(ids), len(cov_names)), cov_names,
                          fam if family_col is not None else None)


def write_phenotypes(path, ids, y, covariates=None, covariate_names=(), family=None) -> None:
    cols = [("trait", [format_real(v) for v in y])]
    if covariates is not None:
        covariates = np.asarray(covariates).reshape(len(ids), -1)
        for k, nm in enumerate(covariate_names):
            cols.append((nm, [format_real(v) for v in covariates[:, k]]))
    if family is not None:
        cols.append(("family", [str(f) for f in family]))
    write_columns(path, "id", ids, cols)


# ---------------------------------------------------------------------------
# Generic tables and key-value files
# ---------------------------------------------------------------------------


def write_columns(path, key_name: str, keys: Sequence, columns: Sequence[Tuple[str, Sequence]]) -> None:
    """Write ``key,<col names>`` rows; numeric columns are formatted with :func:`format_real`."""
    formatted = []
    for name, values in columns:
        vals = list(values)
        if len(vals) != len(keys):
            raise ValueError(f"column {name!r} has {len(vals)} values for {len(keys)} rows")
        formatted.append([v if isinstance(v, str) else format_real(v) for v in vals])
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join([key_name] + [c[0] for c in columns]) + "\n")
        for i, key in enumerate(keys):
            fh.write(",".join([str(key)] + [col[i] for col in formatted]) + "\n")


def read_columns(path) -> Tuple[Tuple[str, ...], Tuple[str, ...], Dict[str, np.ndarray]]:
    """Inverse of :func:`write_columns`: (header, keys, numeric columns by name).

    ``true``/``false`` flags read back as 1.0/0.0.
    """
    _, rows = _lines(path)
    header_line, header = rows[0]
    width = len(header)
    keys = []
    values = [[] for _ in header[1:]]
    for line, fields in rows[1:]:
        if len(fields) != width:
            raise FileFormatError(path, line, min(len(fields), width), f"expected {width} fields, found {len(fields)}")
        keys.append(fields[0])
        for k, text in enumerate(fields[1:]):
            flag = _FLAGS.get(text)
            values[k].append(flag if flag is not None else _parse_real(path, line, k + 2, text))
    return tuple(header), tuple(keys), {name: np.array(v) for name, v in zip(header[1:], values)}


def read_keyed_values(path) -> Dict[str, float]:
    """First column id, second column value; other columns ignored."""
    _, rows = _lines(path)
    first_line, first = rows[0]
    if len(first) < 2:
        raise FileFormatError(path, first_line, 1, "need at least an id and a value column")
    body = rows[1:] if not _is_number(first[1]) else rows
    out = {}
    for line, fields in body:
        if len(fields) < 2:
            raise FileFormatError(path, line, len(fields), "missing value column")
        if fields[0] in out:
            raise FileFormatError(path, line, 1, f"duplicated id {fields[0]!r}")
        out[fields[0]] = _parse_real(path, line, 2, fields[1])
    return out


def write_kv(path, items: Iterable[Tuple[str, object]]) -> None:
    with open(path, "w", newline="\n") as fh:
        for key, value in items:
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = format_real(value)
            elif value is None:
                text = ""
            else:
                text = str(value)
            fh.write(f"{key} = {text}\n")


def read_kv(path) -> List[Tuple[int, str, str]]:
    """(line number, key, raw value) for each ``key = value`` line."""
    out = []
    for i, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FileFormatError(path, i, 1, f"expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        out.append((i, key.strip(), value.strip()))
    return out
