"""Typed tabular decision data.

A :class:`DatasetTable` holds one numpy column per declared attribute plus a
stable ``row_ids`` index (position in the source file, after rejected rows are
dropped). Tables are immutable: every transformation returns a new table.

Schema config (YAML)::

    missing: reject            # or "abort"
    columns:
      race:
        kind: categorical
        role: protected
        protected_value: nonwhite
        recode: {White: white, "*": nonwhite}   # optional, "*" = any other
      UGPA: {kind: continuous, role: nonProtected}
      LSAT: {kind: continuous, role: nonProtected}
      Y:    {kind: categorical, role: outcome}

Columns present in the CSV but absent from the schema are ignored.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from .errors import DataError, SchemaError

log = logging.getLogger(__name__)

KINDS = ("categorical", "continuous", "ordinal", "interval")
ROLES = ("protected", "nonProtected", "outcome")
MISSING_TOKENS = frozenset({"", "NA", "N/A", "NaN", "nan", "null", "NULL", "None"})


@dataclass(frozen=True)
class AttributeSchema:
    name: str
    kind: str
    role: str
    observed_min: float | None = None
    observed_max: float | None = None
    protected_value: str | None = None
    # label -> 0/1 once the protected column has been binary-encoded
    encoding: Mapping[str, int] | None = None
    recode: Mapping[str, str] | None = None
    note: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.observed_min is not None and self.observed_max is not None:
            if not (math.isfinite(self.observed_min) and math.isfinite(self.observed_max)):
                raise SchemaError(f"column {self.name!r}: non-finite observed range")
            if self.observed_min > self.observed_max:
                raise SchemaError(f"column {self.name!r}: observed_min > observed_max")

    @property
    def numeric(self) -> bool:
        return self.kind != "categorical"

    @property
    def encoded(self) -> bool:
        return self.encoding is not None

    @property
    def span(self) -> float | None:
        if self.observed_min is None or self.observed_max is None:
            return None
        return self.observed_max - self.observed_min

    def decode(self, code: float) -> str:
        for label, c in self.encoding.items():
            if c == code:
                return label
        raise DataError(f"column {self.name!r}: no label for code {code!r}")


@dataclass(frozen=True)
class SchemaConfig:
    columns: tuple[AttributeSchema, ...]
    missing: str = "reject"

    def __post_init__(self):
        if self.missing not in ("reject", "abort"):
            raise SchemaError(f"missing policy must be 'reject' or 'abort', got {self.missing!r}")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        if sum(c.role == "outcome" for c in self.columns) > 1:
            raise SchemaError("at most one outcome column may be declared")
        if not any(c.role == "protected" for c in self.columns):
            raise SchemaError("schema declares no protected column")
        if not any(c.role == "nonProtected" for c in self.columns):
            raise SchemaError("schema declares no nonProtected column")
        for c in self.columns:
            if c.role == "protected" and c.protected_value is None:
                raise SchemaError(f"protected column {c.name!r} needs protected_value")

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "SchemaConfig":
        if not isinstance(raw, Mapping) or "columns" not in raw:
            raise SchemaError("schema config must be a mapping with a 'columns' key")
        cols = []
        for name, spec in raw["columns"].items():
            spec = dict(spec or {})
            unknown = set(spec) - {"kind", "role", "protected_value", "recode"}
            if unknown:
                raise SchemaError(f"column {name!r}: unknown keys {sorted(unknown)}")
            pv = spec.get("protected_value")
            recode = spec.get("recode")
            cols.append(
                AttributeSchema(
                    name=str(name),
                    kind=spec.get("kind", "continuous"),
                    role=spec.get("role", "nonProtected"),
                    protected_value=None if pv is None else str(pv),
                    recode=None if recode is None else {str(k): str(v) for k, v in recode.items()},
                )
            )
        return cls(columns=tuple(cols), missing=raw.get("missing", "reject"))

    @classmethod
    def load(cls, path: str | Path) -> "SchemaConfig":
        path = Path(path)
        if not path.exists():
            raise SchemaError(f"schema config not found: {path}")
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))


@dataclass(frozen=True)
class IndividualProfile:
    row_id: int
    x: tuple
    a: Any
    y: int | None


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.flags.writeable:
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DatasetTable:
    """Immutable column store. Categorical columns hold ``str`` objects;
    numeric and encoded-protected columns hold float64; the outcome holds int64."""

    schema: tuple[AttributeSchema, ...]
    columns: Mapping[str, np.ndarray]
    row_ids: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_ids", _freeze(np.asarray(self.row_ids, dtype=np.int64)))
        object.__setattr__(
            self, "columns", MappingProxyType({k: _freeze(v) for k, v in self.columns.items()})
        )
        n = len(self.row_ids)
        for s in self.schema:
            if s.name not in self.columns:
                raise SchemaError(f"column {s.name!r} missing from table")
            if len(self.columns[s.name]) != n:
                raise SchemaError(f"column {s.name!r} has wrong length")
        if len(np.unique(self.row_ids)) != n:
            raise DataError("row ids are not unique")

    @property
    def n(self) -> int:
        return len(self.row_ids)

    def __len__(self) -> int:
        return self.n

    def names(self) -> list[str]:
        return [s.name for s in self.schema]

    def attribute(self, name: str) -> AttributeSchema:
        for s in self.schema:
            if s.name == name:
                return s
        raise SchemaError(f"unknown column {name!r}")

    def column(self, name: str) -> np.ndarray:
        self.attribute(name)
        return self.columns[name]

    @property
    def non_protected(self) -> list[str]:
        return [s.name for s in self.schema if s.role == "nonProtected"]

    @property
    def protected(self) -> list[str]:
        return [s.name for s in self.schema if s.role == "protected"]

    @property
    def outcome(self) -> str | None:
        for s in self.schema:
            if s.role == "outcome":
                return s.name
        return None

    def index_of(self, row_id: int) -> int:
        pos = np.flatnonzero(self.row_ids == row_id)
        if len(pos) == 0:
            raise DataError(f"no row with id {row_id}")
        return int(pos[0])

    def profile(self, row_id: int, protected: str | None = None) -> IndividualProfile:
        i = self.index_of(row_id)
        protected = protected or self.protected[0]
        out = self.outcome
        return IndividualProfile(
            row_id=int(row_id),
            x=tuple(_scalar(self.columns[c][i]) for c in self.non_protected),
            a=_scalar(self.columns[protected][i]),
            y=None if out is None else int(self.columns[out][i]),
        )

    def values(self, row_id: int) -> dict[str, Any]:
        i = self.index_of(row_id)
        return {c: _scalar(self.columns[c][i]) for c in self.names()}

    def with_column(self, attr: AttributeSchema, values: np.ndarray) -> "DatasetTable":
        """Return a new table with ``attr`` added, or replacing a column of the same name."""
        schema = [s for s in self.schema if s.name != attr.name]
        if attr.role == "outcome":
            old = [s.name for s in schema if s.role == "outcome"]
            if old:
                log.info("replacing outcome column %s with %s", old[0], attr.name)
            schema = [s for s in schema if s.role != "outcome"]
        cols = {s.name: self.columns[s.name] for s in schema}
        # keep the original column position when replacing
        names = self.names()
        if attr.name in names:
            pos = names.index(attr.name)
            schema.insert(min(pos, len(schema)), attr)
        else:
            schema.append(attr)
        cols[attr.name] = values
        return DatasetTable(schema=tuple(schema), columns=cols, row_ids=self.row_ids)

    def take(self, mask_or_index: np.ndarray) -> "DatasetTable":
        idx = np.asarray(mask_or_index)
        return DatasetTable(
            schema=self.schema,
            columns={k: v[idx] for k, v in self.columns.items()},
            row_ids=self.row_ids[idx],
        )

    def cell_text(self, name: str, i: int) -> str:
        s = self.attribute(name)
        v = self.columns[name][i]
        if s.encoded:
            return s.decode(float(v))
        if s.role == "outcome":
            return str(int(v))
        if s.numeric:
            return format_number(float(v))
        return str(v)


def _scalar(v):
    return v.item() if isinstance(v, np.generic) else v


def format_number(v: float) -> str:
    """Shortest text that round-trips the float exactly; integral values lose the '.0'."""
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _observed_range(values: np.ndarray) -> tuple[float, float]:
    lo, hi = float(np.min(values)), float(np.max(values))
    if lo == hi:
        log.warning("zero-range numeric column (all values %s); its distance is always 0", lo)
    return lo, hi


def with_ranges(attr: AttributeSchema, values: np.ndarray) -> AttributeSchema:
    if not attr.numeric or attr.role == "outcome" or attr.encoded:
        return attr
    lo, hi = _observed_range(values)
    return replace(attr, observed_min=lo, observed_max=hi)


def _read_rows(path: Path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.reader(lines)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: no rows (empty file)")
        rows = [(reader.line_num, r) for r in reader if r]
    return [h.strip() for h in header], rows


def load_csv(
    path: str | Path,
    schema: SchemaConfig | str | Path,
    *,
    outcome_optional: bool = False,
) -> DatasetTable:
    """Read a CSV into a typed table, validating every cell against ``schema``.

    Rows with missing cells are dropped (and counted) under ``missing: reject``
    and abort the load under ``missing: abort``. When ``outcome_optional`` is set
    a declared outcome column may be absent from the file; it is then left out
    of the table (a decision rule is expected to add it).
    """
    path = Path(path)
    if not isinstance(schema, SchemaConfig):
        schema = SchemaConfig.load(schema)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    header, rows = _read_rows(path)

    attrs = []
    for s in schema.columns:
        if s.name not in header:
            if s.role == "outcome" and outcome_optional:
                continue
            raise SchemaError(f"{path}: missing column {s.name!r}")
        attrs.append(s)
    pos = {s.name: header.index(s.name) for s in attrs}

    raw: dict[str, list] = {s.name: [] for s in attrs}
    ids: list[int] = []
    rejected = 0
    for data_idx, (line_no, row) in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}: line {line_no}: expected {len(header)} cells, got {len(row)}")
        cells = {s.name: row[pos[s.name]].strip() for s in attrs}
        missing = [c for c, v in cells.items() if v in MISSING_TOKENS]
        if missing:
            if schema.missing == "abort":
                raise DataError(f"{path}: line {line_no}: missing value in column {missing[0]!r}")
            rejected += 1
            continue
        for s in attrs:
            raw[s.name].append(_parse_cell(s, cells[s.name], path, line_no))
        ids.append(data_idx)
    if rejected:
        log.warning("%s: rejected %d row(s) with missing values", path, rejected)
    if not ids:
        raise DataError(f"{path}: no rows")

    columns = {}
    final = []
    for s in attrs:
        vals = raw[s.name]
        if s.role == "outcome":
            arr = np.asarray(vals, dtype=np.int64)
        elif s.numeric:
            arr = np.asarray(vals, dtype=np.float64)
        else:
            arr = np.asarray(vals, dtype=object)
        columns[s.name] = arr
        final.append(with_ranges(s, arr))
    table = DatasetTable(schema=tuple(final), columns=columns, row_ids=np.asarray(ids))
    log.info("loaded %d rows from %s", table.n, path)
    return table


def _parse_cell(s: AttributeSchema, text: str, path: Path, line_no: int):
    if s.recode is not None and s.role != "outcome":
        if text in s.recode:
            text = s.recode[text]
        elif "*" in s.recode:
            text = s.recode["*"]
    if s.role == "outcome":
        try:
            v = float(text)
        except ValueError:
            v = None
        if v not in (0.0, 1.0):
            raise DataError(f"{path}: line {line_no}, column {s.name!r}: outcome must be 0 or 1, got {text!r}")
        return int(v)
    if s.numeric:
        try:
            v = float(text)
        except ValueError:
            raise DataError(
                f"{path}: line {line_no}, column {s.name!r}: cannot parse {text!r} as a number"
            ) from None
        if not math.isfinite(v):
            raise DataError(f"{path}: line {line_no}, column {s.name!r}: non-finite value {text!r}")
        return v
    return text


def load_table(path, schema, *, outcome_optional: bool = False) -> DatasetTable:
    """Load a CSV and binary-encode every protected column by its declared protected value."""
    if not isinstance(schema, SchemaConfig):
        schema = SchemaConfig.load(schema)
    table = load_csv(path, schema, outcome_optional=outcome_optional)
    for name in table.protected:
        table = encode_protected(table, name, table.attribute(name).protected_value)
    return table


def encode_protected(table: DatasetTable, column: str, protected_value) -> DatasetTable:
    """Recode a two-level column so that ``protected_value`` maps to 1 and the other level to 0."""
    attr = table.attribute(column)
    values = table.columns[column]
    pv = str(protected_value)
    if attr.encoded:
        if attr.encoding.get(pv) == 1:
            return table
        raise DataError(f"column {column!r} already encoded with a different protected value")
    if attr.numeric:
        levels = sorted({format_number(float(v)) for v in values})
        labels = np.asarray([format_number(float(v)) for v in values], dtype=object)
    else:
        levels = sorted(set(values.tolist()))
        labels = values
    if len(levels) > 2:
        raise DataError(f"column {column!r} has {len(levels)} distinct values; binary required: {levels[:5]}")
    if pv not in levels:
        raise DataError(f"protected value {pv!r} not found in column {column!r} (values: {levels})")
    other = [lv for lv in levels if lv != pv]
    encoding = {(other[0] if other else f"not {pv}"): 0, pv: 1}
    codes = (labels == pv).astype(np.float64)
    new = replace(attr, encoding=encoding, protected_value=pv, observed_min=None, observed_max=None)
    return table.with_column(new, codes)


def summarize(table: DatasetTable) -> dict[str, dict[str, dict[str, float]]]:
    """Counts and shares per level of each protected column and of the outcome."""
    out = {}
    groupings = list(table.protected)
    if table.outcome is not None:
        groupings.append(table.outcome)
    for name in groupings:
        texts = [table.cell_text(name, i) for i in range(table.n)]
        levels, counts = np.unique(np.asarray(texts, dtype=object), return_counts=True)
        out[name] = {
            str(lv): {"count": int(c), "share": int(c) / table.n} for lv, c in zip(levels, counts)
        }
    return out


def write_csv(table: DatasetTable, path: str | Path, header_comment: str | None = None) -> None:
    path = Path(path)
    names = table.names()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(table.n):
            w.writerow([table.cell_text(c, i) for c in names])


def table_records(table: DatasetTable) -> list[dict[str, Any]]:
    names = table.names()
    recs = []
    for i in range(table.n):
        rec: dict[str, Any] = {"row_id": int(table.row_ids[i])}
        for c in names:
            s = table.attribute(c)
            v = table.columns[c][i]
            if s.encoded:
                rec[c] = s.decode(float(v))
            elif s.role == "outcome":
                rec[c] = int(v)
            elif s.numeric:
                rec[c] = float(v)
            else:
                rec[c] = str(v)
        recs.append(rec)
    return recs


def write_json(table: DatasetTable, path: str | Path, extra: Mapping[str, Any] | None = None) -> None:
    doc = dict(extra or {})
    doc["rows"] = table_records(table)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def from_columns(
    columns: Mapping[str, Sequence],
    kinds: Mapping[str, str],
    roles: Mapping[str, str],
    protected_values: Mapping[str, Any] | None = None,
    row_ids: Iterable[int] | None = None,
) -> DatasetTable:
    """Build a table directly from in-memory columns (tests, synthetic data).

    Protected columns given as 0/1 numbers are taken as already encoded with 1 as
    the protected level.
    """
    protected_values = dict(protected_values or {})
    schema, cols = [], {}
    n = None
    for name, vals in columns.items():
        kind, role = kinds.get(name, "continuous"), roles.get(name, "nonProtected")
        if role == "outcome":
            arr = np.asarray(vals, dtype=np.int64)
            if not np.isin(arr, (0, 1)).all():
                raise DataError(f"outcome column {name!r} must be 0/1")
            attr = AttributeSchema(name, kind, role)
        elif role == "protected":
            arr = np.asarray(vals)
            if arr.dtype.kind in "fiub":
                arr = arr.astype(np.float64)
                if not np.isin(arr, (0.0, 1.0)).all():
                    raise DataError(f"numeric protected column {name!r} must be 0/1")
                attr = AttributeSchema(name, kind, role, protected_value="1", encoding={"0": 0, "1": 1})
            else:
                pv = protected_values.get(name)
                if pv is None:
                    raise SchemaError(f"protected column {name!r} needs a protected value")
                cols[name] = np.asarray(vals, dtype=object)
                schema.append(AttributeSchema(name, "categorical", role, protected_value=str(pv)))
                n = len(vals)
                continue
        elif kind == "categorical":
            arr = np.asarray([str(v) for v in vals], dtype=object)
            attr = AttributeSchema(name, kind, role)
        else:
            arr = np.asarray(vals, dtype=np.float64)
            if not np.isfinite(arr).all():
                raise DataError(f"column {name!r} has non-finite values")
            attr = with_ranges(AttributeSchema(name, kind, role), arr)
        cols[name] = arr
        schema.append(attr)
        n = len(arr)
    if not n:
        raise DataError("no rows")
    ids = np.arange(n) if row_ids is None else np.asarray(list(row_ids))
    table = DatasetTable(schema=tuple(schema), columns=cols, row_ids=ids)
    for name in table.protected:
        if not table.attribute(name).encoded:
            table = encode_protected(table, name, table.attribute(name).protected_value)
    return table
