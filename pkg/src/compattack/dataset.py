"""Schema-typed microdata tables, CSV ingest, and overlapping subset sampling.

Values are integer-coded at ingest: numeric attributes keep their integer
value as the code, categorical attributes use the index of the label in the
declared domain. Everything downstream (partitioning, attacks) works on codes;
labels only come back on output.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from compattack.errors import DomainError, ParseError, SchemaError, SizingError, UndefinedMetricError

NUMERIC = "numeric"
CATEGORICAL = "categorical"
QI = "qi"
SENSITIVE = "sensitive"

_ROLE_ALIASES = {
    "qi": QI,
    "quasi": QI,
    "quasi-identifier": QI,
    "quasi_identifier": QI,
    "sensitive": SENSITIVE,
}
_MISSING = {"", "?", "NA", "N/A", "null", "None"}
ID_COLUMN = "id"


@dataclass(frozen=True)
class AttributeSchema:
    """One column of a table.

    For numeric attributes ``domain`` is ``(min, max)`` (inclusive integers);
    for categorical attributes it is the ordered tuple of admissible labels.
    """

    name: str
    kind: str
    role: str
    domain: tuple

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"attribute {self.name!r}: unknown kind {self.kind!r}")
        role = _ROLE_ALIASES.get(self.role)
        if role is None:
            raise SchemaError(f"attribute {self.name!r}: unknown role {self.role!r}")
        object.__setattr__(self, "role", role)
        if self.kind == NUMERIC:
            if len(self.domain) != 2:
                raise SchemaError(f"numeric attribute {self.name!r} needs (min, max)")
            lo, hi = int(self.domain[0]), int(self.domain[1])
            if lo > hi:
                raise SchemaError(f"numeric attribute {self.name!r}: min > max")
            object.__setattr__(self, "domain", (lo, hi))
        else:
            labels = tuple(str(v) for v in self.domain)
            if not labels:
                raise SchemaError(f"categorical attribute {self.name!r} has an empty domain")
            if len(set(labels)) != len(labels):
                raise SchemaError(f"categorical attribute {self.name!r} has duplicate labels")
            object.__setattr__(self, "domain", labels)
            object.__setattr__(self, "_index", {v: i for i, v in enumerate(labels)})

    @classmethod
    def numeric(cls, name: str, lo: int, hi: int, role: str = QI) -> "AttributeSchema":
        return cls(name, NUMERIC, role, (lo, hi))

    @classmethod
    def categorical(cls, name: str, labels: Iterable, role: str = QI) -> "AttributeSchema":
        return cls(name, CATEGORICAL, role, tuple(labels))

    @property
    def is_qi(self) -> bool:
        return self.role == QI

    @property
    def code_range(self) -> tuple[int, int]:
        if self.kind == NUMERIC:
            return self.domain
        return 0, len(self.domain) - 1

    @property
    def size(self) -> int:
        lo, hi = self.code_range
        return hi - lo + 1

    def encode(self, raw) -> int:
        text = str(raw).strip()
        if text in _MISSING:
            raise DomainError(self.name, raw, f"missing value for attribute {self.name!r}")
        if self.kind == NUMERIC:
            try:
                value = int(text)
            except ValueError:
                try:
                    as_float = float(text)
                except ValueError:
                    raise DomainError(self.name, raw) from None
                if not as_float.is_integer():
                    raise DomainError(self.name, raw) from None
                value = int(as_float)
            lo, hi = self.domain
            if not lo <= value <= hi:
                raise DomainError(self.name, raw)
            return value
        try:
            return self._index[text]  # type: ignore[attr-defined]
        except KeyError:
            raise DomainError(self.name, raw) from None

    def decode(self, code: int):
        if self.kind == NUMERIC:
            return int(code)
        return self.domain[int(code)]

    def contains_code(self, code: int) -> bool:
        lo, hi = self.code_range
        return lo <= code <= hi


def _validate_schema(schema: Sequence[AttributeSchema]) -> tuple[AttributeSchema, ...]:
    schema = tuple(schema)
    names = [a.name for a in schema]
    if len(set(names)) != len(names):
        raise SchemaError("attribute names must be unique")
    if ID_COLUMN in names:
        raise SchemaError(f"{ID_COLUMN!r} is reserved for the individual-id column")
    n_sensitive = sum(a.role == SENSITIVE for a in schema)
    if n_sensitive != 1:
        raise SchemaError(f"exactly one sensitive attribute required, found {n_sensitive}")
    return schema


class Record(NamedTuple):
    id: int
    values: tuple


@dataclass(frozen=True, eq=False)
class Table:
    """Immutable integer-coded microdata table.

    ``codes`` has one row per record and one column per schema attribute;
    ``ids`` holds the individual-id of each row.
    """

    schema: tuple[AttributeSchema, ...]
    ids: np.ndarray
    codes: np.ndarray
    _name_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        schema = _validate_schema(self.schema)
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        codes = np.asarray(self.codes, dtype=np.int64)
        if codes.size == 0:
            codes = codes.reshape(len(ids), len(schema))
        if codes.ndim != 2 or codes.shape[1] != len(schema):
            raise SchemaError("record arity does not match schema arity")
        if codes.shape[0] != len(ids):
            raise SchemaError("ids and records differ in length")
        if len(np.unique(ids)) != len(ids):
            raise SchemaError("individual ids must be unique within a table")
        for j, attr in enumerate(schema):
            if len(codes):
                lo, hi = attr.code_range
                col = codes[:, j]
                bad = (col < lo) | (col > hi)
                if bad.any():
                    raise DomainError(attr.name, attr.decode(col[bad][0]) if attr.kind == NUMERIC else int(col[bad][0]))
        ids = ids.copy()
        codes = codes.copy()
        ids.flags.writeable = False
        codes.flags.writeable = False
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "_name_index", {a.name: j for j, a in enumerate(schema)})

    @classmethod
    def from_records(cls, schema: Sequence[AttributeSchema], rows: Iterable[Sequence], ids: Iterable[int] | None = None) -> "Table":
        """Build a table from raw (label/integer) values, validating every cell."""
        schema = _validate_schema(schema)
        encoded = []
        for row in rows:
            if len(row) != len(schema):
                raise SchemaError(f"record {row!r} has {len(row)} values, schema has {len(schema)}")
            encoded.append([attr.encode(v) for attr, v in zip(schema, row)])
        if ids is None:
            ids = range(len(encoded))
        return cls(schema, np.fromiter(ids, dtype=np.int64, count=len(encoded)), np.array(encoded, dtype=np.int64).reshape(len(encoded), len(schema)))

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Table):
            return NotImplemented
        return self.schema == other.schema and np.array_equal(self.ids, other.ids) and np.array_equal(self.codes, other.codes)

    __hash__ = None  # type: ignore[assignment]

    def index_of(self, name: str) -> int:
        try:
            return self._name_index[name]
        except KeyError:
            raise SchemaError(f"no attribute named {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.codes[:, self.index_of(name)]

    @property
    def qi_indices(self) -> tuple[int, ...]:
        return tuple(j for j, a in enumerate(self.schema) if a.is_qi)

    @property
    def qi_schema(self) -> tuple[AttributeSchema, ...]:
        return tuple(a for a in self.schema if a.is_qi)

    @property
    def sensitive_index(self) -> int:
        return next(j for j, a in enumerate(self.schema) if a.role == SENSITIVE)

    @property
    def sensitive_attribute(self) -> AttributeSchema:
        return self.schema[self.sensitive_index]

    @property
    def qi_codes(self) -> np.ndarray:
        return self.codes[:, list(self.qi_indices)]

    @property
    def sensitive_codes(self) -> np.ndarray:
        return self.codes[:, self.sensitive_index]

    def records(self) -> list[Record]:
        return [
            Record(int(i), tuple(a.decode(c) for a, c in zip(self.schema, row)))
            for i, row in zip(self.ids, self.codes)
        ]

    def population(self) -> list[tuple[int, tuple[int, ...]]]:
        """(individual-id, coded QI tuple) pairs, the adversary's view of each person."""
        qi = self.qi_codes
        return [(int(i), tuple(int(v) for v in row)) for i, row in zip(self.ids, qi)]

    def take(self, rows) -> "Table":
        rows = np.asarray(rows, dtype=np.int64)
        return Table(self.schema, self.ids[rows], self.codes[rows])

    def select_ids(self, ids: Iterable[int]) -> "Table":
        pos = {int(v): r for r, v in enumerate(self.ids)}
        try:
            rows = [pos[int(i)] for i in ids]
        except KeyError as exc:
            raise SchemaError(f"id {exc.args[0]} not in table") from None
        return self.take(rows)

    def with_column(self, name: str, codes) -> "Table":
        """Copy of the table with one column's codes replaced."""
        new = np.array(self.codes)
        new[:, self.index_of(name)] = np.asarray(codes, dtype=np.int64)
        return Table(self.schema, self.ids, new)


# --------------------------------------------------------------------- schema files


def parse_schema(text: str) -> list[AttributeSchema]:
    """Parse the key/value schema format.

    Each attribute is a block of ``key = value`` lines starting with ``name``::

        name = age
        kind = numeric
        role = qi
        domain = 0..120

        name = condition
        kind = categorical
        role = sensitive
        domain = AIDS, Flu, "Heart Disease"
    """
    blocks: list[dict[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SchemaError(f"schema line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if key == "name":
            blocks.append({})
        elif not blocks:
            raise SchemaError(f"schema line {lineno}: {key!r} before any 'name'")
        if key in blocks[-1]:
            raise SchemaError(f"schema line {lineno}: duplicate key {key!r}")
        blocks[-1][key] = value
    attrs = []
    for block in blocks:
        missing = {"name", "kind", "role", "domain"} - block.keys()
        if missing:
            raise SchemaError(f"attribute {block.get('name')!r} missing keys {sorted(missing)}")
        kind = block["kind"].lower()
        if kind == NUMERIC:
            lo, sep, hi = block["domain"].partition("..")
            if not sep:
                raise SchemaError(f"numeric domain for {block['name']!r} must be 'min..max'")
            try:
                domain = (int(lo), int(hi))
            except ValueError:
                raise SchemaError(f"numeric domain for {block['name']!r} must be integers") from None
        else:
            domain = tuple(v.strip() for v in next(csv.reader([block["domain"]], skipinitialspace=True)))
        attrs.append(AttributeSchema(block["name"], kind, block["role"].lower(), domain))
    return list(_validate_schema(attrs))


def format_schema(schema: Sequence[AttributeSchema]) -> str:
    out = []
    for a in schema:
        if a.kind == NUMERIC:
            domain = f"{a.domain[0]}..{a.domain[1]}"
        else:
            domain = ", ".join(f'"{v}"' if ("," in v or v != v.strip()) else v for v in a.domain)
        out.append(f"name = {a.name}\nkind = {a.kind}\nrole = {a.role}\ndomain = {domain}\n")
    return "\n".join(out)


def load_schema(path) -> list[AttributeSchema]:
    return parse_schema(Path(path).read_text(encoding="utf-8"))


def save_schema(schema: Sequence[AttributeSchema], path) -> None:
    Path(path).write_text(format_schema(schema), encoding="utf-8")


# ----------------------------------------------------------------------------- CSV


def load_csv(path, schema: Sequence[AttributeSchema]) -> Table:
    """Read a CSV file into a validated :class:`Table`.

    Columns are matched by header name, so their order in the file may differ
    from the schema. An ``id`` column, when present, supplies individual-ids;
    otherwise the 0-based data row index is used.
    """
    schema = _validate_schema(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("file is empty (no header row)", line=1) from None
        has_id = ID_COLUMN in header
        expected = {a.name for a in schema} | ({ID_COLUMN} if has_id else set())
        if set(header) != expected or len(header) != len(expected):
            raise SchemaError(f"header {header} does not match schema names {[a.name for a in schema]}")
        pos = [header.index(a.name) for a in schema]
        id_pos = header.index(ID_COLUMN) if has_id else None
        ids, codes = [], []
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                codes.append([a.encode(row[p]) for a, p in zip(schema, pos)])
            except DomainError as exc:
                raise DomainError(exc.attribute, exc.value, f"line {lineno}: {exc}") from None
            if id_pos is not None:
                try:
                    ids.append(int(row[id_pos]))
                except ValueError:
                    raise ParseError(f"non-integer id {row[id_pos]!r}", line=lineno) from None
            else:
                ids.append(len(ids))
    return Table(schema, np.array(ids, dtype=np.int64), np.array(codes, dtype=np.int64).reshape(len(ids), len(schema)))


def save_csv(table: Table, path) -> None:
    """Write a table with an explicit ``id`` column so that ``load_csv`` restores it exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([ID_COLUMN] + [a.name for a in table.schema])
        for rec in table.records():
            writer.writerow([rec.id, *rec.values])


# ------------------------------------------------------------------------ sampling


@dataclass(frozen=True)
class OverlapDesign:
    subset_sizes: tuple[int, ...]
    overlap: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "subset_sizes", tuple(int(s) for s in self.subset_sizes))

    def validate(self, source_size: int) -> None:
        if not self.subset_sizes:
            raise SizingError("at least one subset size required")
        if self.overlap < 1:
            raise SizingError("overlap size must be positive")
        for size in self.subset_sizes:
            if not self.overlap <= size <= source_size:
                raise SizingError(f"need overlap ({self.overlap}) <= subset size ({size}) <= source size ({source_size})")


@dataclass(frozen=True)
class OverlapSample:
    overlap_ids: tuple[int, ...]
    subsets: list[Table]


def draw_overlapping_subsets(source: Table, design: OverlapDesign) -> OverlapSample:
    """Sample subsets that all contain one designated overlap population.

    The non-overlap part of each subset is drawn independently, without
    replacement, from the rest of the source, so two subsets may share extra
    members by coincidence.
    """
    design.validate(len(source))
    rng = np.random.default_rng(design.seed)
    n = len(source)
    overlap_rows = np.sort(rng.choice(n, size=design.overlap, replace=False))
    rest = np.setdiff1d(np.arange(n), overlap_rows, assume_unique=True)
    subsets = []
    for size in design.subset_sizes:
        extra = rng.choice(rest, size=size - design.overlap, replace=False)
        subsets.append(source.take(np.sort(np.concatenate([overlap_rows, extra]))))
    return OverlapSample(tuple(int(i) for i in source.ids[overlap_rows]), subsets)


def sample_overlapping_subsets(source: Table, design: OverlapDesign) -> list[Table]:
    return draw_overlapping_subsets(source, design).subsets


# ------------------------------------------------------------------------- entropy


def entropy_of_counts(counts) -> float:
    """Shannon entropy (nats) of the empirical distribution given by ``counts``."""
    counts = np.asarray(list(counts), dtype=float)
    counts = counts[counts > 0]
    total = counts.sum()
    if total == 0:
        raise UndefinedMetricError("entropy of an empty distribution is undefined")
    p = counts / total
    h = float(-(p * np.log(p)).sum())
    return max(h, 0.0)


def attribute_entropy(table: Table, attribute: str, base: float = math.e) -> float:
    """Empirical Shannon entropy of one column, in nats unless ``base`` is given."""
    col = table.column(attribute)
    if len(col) == 0:
        raise UndefinedMetricError("entropy of an empty table is undefined")
    h = entropy_of_counts(Counter(col.tolist()).values())
    return h if base == math.e else h / math.log(base)
