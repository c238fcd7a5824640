"""Partition-based anonymization: Mondrian, MDAV microaggregation, and constraint checks.

A :class:`Release` is a partition of a table into equivalence classes. Each
class publishes its recoded quasi-identifiers and the exact multiset of
sensitive values of its members.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from compattack.dataset import NUMERIC, AttributeSchema, Table, _validate_schema
from compattack.errors import ConstraintError, InfeasibleError, ParseError, SchemaError

MONDRIAN = "mondrian"
MICROAGGREGATION = "microaggregation"
SCHEMES = (MONDRIAN, MICROAGGREGATION)

# slack added to every <= comparison on reals
SLACK = 1e-12


# ------------------------------------------------------------- generalized values


@dataclass(frozen=True)
class Interval:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"interval lo {self.lo} > hi {self.hi}")

    def covers(self, code) -> bool:
        return self.lo <= code <= self.hi

    def sort_key(self):
        return (self.lo, self.hi)


@dataclass(frozen=True)
class ValueSet:
    codes: frozenset

    def __post_init__(self):
        if not self.codes:
            raise ValueError("value-set must be non-empty")
        object.__setattr__(self, "codes", frozenset(int(c) for c in self.codes))

    def covers(self, code) -> bool:
        return int(code) in self.codes

    def sort_key(self):
        ordered = tuple(sorted(self.codes))
        return (ordered[0], ordered[-1], ordered)


@dataclass(frozen=True)
class Suppressed:
    def covers(self, code) -> bool:
        return True

    def sort_key(self):
        return (-math.inf, math.inf)


@dataclass(frozen=True)
class Centroid:
    value: float

    def covers(self, code) -> bool:
        # centroid recoding replaces coverage with assignment
        return False

    def sort_key(self):
        return (self.value,)


GeneralizedValue = Union[Interval, ValueSet, Suppressed, Centroid]


# ---------------------------------------------------------------- classes/release


@dataclass(frozen=True)
class EquivalenceClass:
    members: tuple[int, ...]
    recoded: tuple[GeneralizedValue, ...]
    sensitive: tuple[int, ...]

    def __post_init__(self):
        if len(self.members) != len(self.sensitive):
            raise ValueError("member count and sensitive multiset size differ")

    @property
    def size(self) -> int:
        return len(self.sensitive)

    @property
    def sensitive_counts(self) -> Counter:
        return Counter(self.sensitive)

    def covers(self, qi: Sequence[int]) -> bool:
        return all(g.covers(v) for g, v in zip(self.recoded, qi))


@dataclass(frozen=True, eq=False)
class Release:
    classes: tuple[EquivalenceClass, ...]
    scheme: str
    schema: tuple[AttributeSchema, ...]
    k: int
    ell: float | None = None
    t: float | None = None
    # per-QI (mean, std) used by microaggregation distances
    normalization: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    _member_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "schema", _validate_schema(self.schema))
        index = {}
        for ci, ec in enumerate(self.classes):
            if len(ec.recoded) != len(self.qi_schema):
                raise SchemaError("recoded tuple width differs from the number of quasi-identifiers")
            for m in ec.members:
                if m in index:
                    raise ValueError(f"individual {m} appears in two classes")
                index[m] = ci
        object.__setattr__(self, "_member_index", index)

    def __eq__(self, other):
        if not isinstance(other, Release):
            return NotImplemented
        return (self.classes, self.scheme, self.schema, self.k, self.ell, self.t, self.normalization) == (
            other.classes, other.scheme, other.schema, other.k, other.ell, other.t, other.normalization)

    __hash__ = None  # type: ignore[assignment]

    @property
    def qi_schema(self) -> tuple[AttributeSchema, ...]:
        return tuple(a for a in self.schema if a.is_qi)

    @property
    def sensitive_attribute(self) -> AttributeSchema:
        return next(a for a in self.schema if not a.is_qi)

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def n_records(self) -> int:
        return sum(ec.size for ec in self.classes)

    def class_of(self, individual_id: int) -> int | None:
        """Index of the class holding ``individual_id`` (ground truth), if published."""
        return self._member_index.get(int(individual_id))

    def sensitive_distribution(self) -> Counter:
        total = Counter()
        for ec in self.classes:
            total.update(ec.sensitive)
        return total

    def class_sizes(self) -> list[int]:
        return [ec.size for ec in self.classes]

    # ---- serialization

    def to_dict(self, include_members: bool = False) -> dict:
        qi = self.qi_schema
        sens = self.sensitive_attribute
        classes = []
        for ec in self.classes:
            entry = {
                "recoded": [_encode_generalized(g, a) for g, a in zip(ec.recoded, qi)],
                "sensitive": [[sens.decode(c), n] for c, n in sorted(ec.sensitive_counts.items())],
                "count": ec.size,
            }
            if include_members:
                entry["members"] = list(ec.members)
            classes.append(entry)
        return {
            "scheme": self.scheme,
            "params": {"k": self.k, "ell": self.ell, "t": self.t},
            "schema": [schema_to_dict(a) for a in self.schema],
            "normalization": None if self.normalization is None else {
                "mean": list(self.normalization[0]), "std": list(self.normalization[1])},
            "classes": classes,
        }

    def to_json(self, include_members: bool = False) -> str:
        return json.dumps(self.to_dict(include_members), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, doc: dict) -> "Release":
        schema = tuple(schema_from_dict(d) for d in doc["schema"])
        qi = tuple(a for a in schema if a.is_qi)
        sens = next(a for a in schema if not a.is_qi)
        classes = []
        next_id = -1
        for entry in doc["classes"]:
            sensitive = []
            for label, n in entry["sensitive"]:
                sensitive.extend([sens.encode(label)] * int(n))
            if "members" in entry:
                members = tuple(int(m) for m in entry["members"])
            else:
                # anonymous placeholders; negative so they never collide with real ids
                members = tuple(range(next_id, next_id - len(sensitive), -1))
                next_id -= len(sensitive)
            recoded = tuple(_decode_generalized(g, a) for g, a in zip(entry["recoded"], qi))
            classes.append(EquivalenceClass(members, recoded, tuple(sorted(sensitive))))
        norm = doc.get("normalization")
        params = doc.get("params", {})
        return cls(
            tuple(classes), doc["scheme"], schema, int(params.get("k") or min((c.size for c in classes), default=1)),
            params.get("ell"), params.get("t"),
            None if norm is None else (tuple(norm["mean"]), tuple(norm["std"])),
        )

    @classmethod
    def from_json(cls, text: str) -> "Release":
        return cls.from_dict(json.loads(text))

    def to_csv(self, path, include_class: bool = True) -> None:
        """Anonymized table export: one row per record, recoded QI columns, exact sensitive column."""
        qi = self.qi_schema
        sens = self.sensitive_attribute
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow((["class"] if include_class else []) + [a.name for a in qi] + [sens.name])
            for ci, ec in enumerate(self.classes):
                cells = [format_generalized(g, a) for g, a in zip(ec.recoded, qi)]
                for s in ec.sensitive:
                    writer.writerow(([ci] if include_class else []) + cells + [sens.decode(s)])

    @classmethod
    def from_csv(cls, path, schema: Sequence[AttributeSchema], scheme: str = MONDRIAN, k: int | None = None) -> "Release":
        """Read an anonymized table back into a release.

        Rows are grouped by the ``class`` column when present, otherwise by
        identical recoded quasi-identifier cells (in order of first appearance).
        Member ids are not part of the export, so classes get anonymous
        negative placeholder ids. For microaggregated exports the distance
        normalization is estimated from the published centroids.
        """
        schema = _validate_schema(schema)
        qi = tuple(a for a in schema if a.is_qi)
        sens = next(a for a in schema if not a.is_qi)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            has_class = header[:1] == ["class"]
            names = header[1:] if has_class else header
            if names != [a.name for a in qi] + [sens.name]:
                raise SchemaError(f"header {header} does not match schema")
            groups: dict = {}
            for row in reader:
                if not row:
                    continue
                if len(row) != len(header):
                    raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=reader.line_num)
                cells = row[1:] if has_class else row
                key = row[0] if has_class else tuple(c.strip() for c in cells[:-1])
                entry = groups.setdefault(key, [tuple(c.strip() for c in cells[:-1]), []])
                entry[1].append(sens.encode(cells[-1]))
        classes = []
        next_id = -1
        for cells, sensitive in groups.values():
            recoded = tuple(parse_generalized(c, a, scheme == MICROAGGREGATION) for c, a in zip(cells, qi))
            members = tuple(range(next_id, next_id - len(sensitive), -1))
            next_id -= len(sensitive)
            classes.append(EquivalenceClass(members, recoded, tuple(sorted(sensitive))))
        norm = None
        if scheme == MICROAGGREGATION:
            cents = np.array([[g.value for g in ec.recoded] for ec in classes], dtype=float)
            weights = np.array([ec.size for ec in classes], dtype=float)
            mean = np.average(cents, axis=0, weights=weights)
            std = np.sqrt(np.average((cents - mean) ** 2, axis=0, weights=weights))
            std[std == 0] = 1.0
            norm = (tuple(float(v) for v in mean), tuple(float(v) for v in std))
        if k is None:
            k = min((ec.size for ec in classes), default=1)
        return cls(tuple(classes), scheme, schema, k, normalization=norm)


def schema_to_dict(a: AttributeSchema) -> dict:
    return {"name": a.name, "kind": a.kind, "role": a.role, "domain": list(a.domain)}


def schema_from_dict(d: dict) -> AttributeSchema:
    return AttributeSchema(d["name"], d["kind"], d["role"], tuple(d["domain"]))


def _encode_generalized(g: GeneralizedValue, attr: AttributeSchema) -> dict:
    if isinstance(g, Interval):
        return {"interval": [g.lo, g.hi]}
    if isinstance(g, ValueSet):
        return {"set": [attr.decode(c) for c in sorted(g.codes)]}
    if isinstance(g, Centroid):
        return {"centroid": g.value}
    return {"suppressed": True}


def _decode_generalized(d: dict, attr: AttributeSchema) -> GeneralizedValue:
    if "interval" in d:
        return Interval(int(d["interval"][0]), int(d["interval"][1]))
    if "set" in d:
        return ValueSet(frozenset(attr.encode(v) for v in d["set"]))
    if "centroid" in d:
        return Centroid(float(d["centroid"]))
    return Suppressed()


def format_generalized(g: GeneralizedValue, attr: AttributeSchema) -> str:
    if isinstance(g, Interval):
        return str(g.lo) if g.lo == g.hi else f"{g.lo}..{g.hi}"
    if isinstance(g, ValueSet):
        return "|".join(str(attr.decode(c)) for c in sorted(g.codes))
    if isinstance(g, Centroid):
        return repr(g.value)
    return "*"


def parse_generalized(text: str, attr: AttributeSchema, centroid: bool = False) -> GeneralizedValue:
    """Inverse of :func:`format_generalized` (``*`` means suppressed).

    With ``centroid`` set, plain numbers are read as centroids rather than
    single-point intervals.
    """
    text = text.strip()
    if text == "*":
        return Suppressed()
    if centroid:
        try:
            return Centroid(float(text))
        except ValueError:
            raise SchemaError(f"cannot parse {text!r} as a centroid of {attr.name!r}") from None
    if attr.kind == NUMERIC:
        lo, sep, hi = text.partition("..")
        if sep:
            return Interval(attr.encode(lo), attr.encode(hi))
        try:
            return Interval(attr.encode(text), attr.encode(text))
        except Exception:
            try:
                return Centroid(float(text))
            except ValueError:
                raise SchemaError(f"cannot parse {text!r} as a generalized value of {attr.name!r}") from None
    labels = text.split("|")
    try:
        return ValueSet(frozenset(attr.encode(v) for v in labels))
    except Exception:
        try:
            return Centroid(float(text))
        except ValueError:
            raise SchemaError(f"cannot parse {text!r} as a generalized value of {attr.name!r}") from None


# ------------------------------------------------------------------ distributions


def _entropy(counts: np.ndarray) -> float:
    counts = counts[counts > 0]
    if counts.size == 0:
        return 0.0
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def _tv(counts: np.ndarray, reference: np.ndarray) -> float:
    p = counts / counts.sum()
    return 0.5 * float(np.abs(p - reference).sum())


def class_entropy(ec: EquivalenceClass) -> float:
    return _entropy(np.array(list(ec.sensitive_counts.values()), dtype=float))


def total_variation(p: dict, q: dict) -> float:
    """TV distance between two (unnormalized) count dictionaries."""
    sp, sq = sum(p.values()), sum(q.values())
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(s, 0) / sp - q.get(s, 0) / sq) for s in keys)


# ------------------------------------------------------------------------ Mondrian


def _canonical_order(classes: list[EquivalenceClass]) -> tuple[EquivalenceClass, ...]:
    return tuple(sorted(classes, key=lambda ec: (tuple(g.sort_key() for g in ec.recoded), ec.members)))


def _recode_box(schema: Sequence[AttributeSchema], block: np.ndarray) -> tuple[GeneralizedValue, ...]:
    out = []
    for j, attr in enumerate(schema):
        col = block[:, j]
        if attr.kind == NUMERIC:
            out.append(Interval(int(col.min()), int(col.max())))
        else:
            out.append(ValueSet(frozenset(int(v) for v in np.unique(col))))
    return tuple(out)


def _median_split(values: np.ndarray) -> np.ndarray | None:
    """Boolean left-mask for a median cut of ``values``, or None if no cut exists.

    Records at the (lower) median go left. If that empties the right side the
    cut moves below the median. Halves never share a value, so recoded regions
    of sibling classes stay disjoint.
    """
    ordered = np.sort(values, kind="stable")
    median = ordered[(len(ordered) - 1) // 2]
    left = values <= median
    if left.all():
        left = values < median
    if not left.any() or left.all():
        return None
    return left


def mondrian_anonymize(table: Table, k: int, ell: float | None = None, t: float | None = None) -> Release:
    """Greedy top-down multidimensional partitioning.

    A class is cut on the quasi-identifier with the widest range (normalized
    by the whole-table range, ties broken by schema order) at its median. If
    a cut leaves either half violating an active constraint (size >= k,
    entropy >= ln ell, TV distance to the table distribution <= t), the next
    widest attribute is tried; a class with no acceptable cut is final.
    Numeric quasi-identifiers are recoded to [min, max], categorical ones to
    the set of member values.
    """
    k = int(k)
    if k < 1:
        raise InfeasibleError("k must be a positive integer")
    if k > len(table):
        raise InfeasibleError(f"k={k} exceeds table size {len(table)}")
    if ell is not None and ell < 1:
        raise InfeasibleError("ell must be >= 1")
    if t is not None and not 0 <= t <= 1:
        raise InfeasibleError("t must lie in [0, 1]")

    qi_schema = table.qi_schema
    X = table.qi_codes
    ids = table.ids
    sens = table.sensitive_codes
    _, s_idx = np.unique(sens, return_inverse=True)
    n_sens = int(s_idx.max()) + 1 if len(s_idx) else 0
    table_dist = np.bincount(s_idx, minlength=n_sens) / max(len(s_idx), 1)
    spans = (X.max(axis=0) - X.min(axis=0)).astype(float) if len(X) else np.zeros(len(qi_schema))
    log_ell = math.log(ell) if ell is not None else None

    def acceptable(rows: np.ndarray) -> bool:
        if len(rows) < k:
            return False
        if log_ell is None and t is None:
            return True
        counts = np.bincount(s_idx[rows], minlength=n_sens).astype(float)
        if log_ell is not None and _entropy(counts) < log_ell - SLACK:
            return False
        if t is not None and _tv(counts, table_dist) > t + SLACK:
            return False
        return True

    root = np.arange(len(table))
    if len(root) and not acceptable(root):
        raise ConstraintError(f"whole table does not satisfy entropy {ell}-diversity")

    finals: list[np.ndarray] = []
    stack = [root] if len(root) else []
    while stack:
        rows = stack.pop()
        block = X[rows]
        widths = np.divide(block.max(axis=0) - block.min(axis=0), spans, out=np.zeros(len(spans)), where=spans > 0)
        order = sorted((j for j in range(len(spans)) if widths[j] > 0), key=lambda j: (-widths[j], j))
        for j in order:
            left = _median_split(block[:, j])
            if left is None:
                continue
            lrows, rrows = rows[left], rows[~left]
            if acceptable(lrows) and acceptable(rrows):
                stack.append(rrows)
                stack.append(lrows)
                break
        else:
            finals.append(rows)

    classes = []
    for rows in finals:
        order = np.argsort(ids[rows], kind="stable")
        rows = rows[order]
        classes.append(EquivalenceClass(
            tuple(int(i) for i in ids[rows]),
            _recode_box(qi_schema, X[rows]),
            tuple(sorted(int(s) for s in sens[rows])),
        ))
    return Release(_canonical_order(classes), MONDRIAN, table.schema, k, ell, t)


# ----------------------------------------------------------------- microaggregation


def zscore_params(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return mean, std


def microaggregate(table: Table, k: int) -> Release:
    """MDAV-style fixed-size microaggregation on z-scored quasi-identifiers.

    While at least 2k records remain, the record farthest from the mean of the
    remaining records seeds a cluster together with its k-1 nearest
    neighbours. The last fewer-than-2k records form the final cluster, so all
    cluster sizes lie in [k, 2k-1]. Quasi-identifiers are replaced by the
    cluster centroid (in original units).
    """
    k = int(k)
    if k < 1:
        raise InfeasibleError("k must be a positive integer")
    if k > len(table):
        raise InfeasibleError(f"k={k} exceeds table size {len(table)}")
    X = table.qi_codes.astype(float)
    mean, std = zscore_params(X)
    Z = (X - mean) / std
    ids = table.ids
    sens = table.sensitive_codes

    clusters: list[np.ndarray] = []
    remaining = np.arange(len(table))
    while len(remaining) >= 2 * k:
        sub = Z[remaining]
        centre = sub.mean(axis=0)
        far = int(np.argmax(((sub - centre) ** 2).sum(axis=1)))
        dist = ((sub - sub[far]) ** 2).sum(axis=1)
        dist[far] = -1.0  # the seed always belongs to its own cluster
        chosen = np.argsort(dist, kind="stable")[:k]
        clusters.append(remaining[chosen])
        remaining = np.delete(remaining, chosen)
    if len(remaining):
        clusters.append(remaining)

    classes = []
    for rows in clusters:
        rows = rows[np.argsort(ids[rows], kind="stable")]
        centroid = X[rows].mean(axis=0)
        classes.append(EquivalenceClass(
            tuple(int(i) for i in ids[rows]),
            tuple(Centroid(float(c)) for c in centroid),
            tuple(sorted(int(s) for s in sens[rows])),
        ))
    norm = (tuple(float(v) for v in mean), tuple(float(v) for v in std))
    return Release(_canonical_order(classes), MICROAGGREGATION, table.schema, k, normalization=norm)


def anonymize(table: Table, scheme: str, k: int, ell: float | None = None, t: float | None = None) -> Release:
    if scheme == MONDRIAN:
        return mondrian_anonymize(table, k, ell, t)
    if scheme == MICROAGGREGATION:
        if ell is not None or t is not None:
            raise InfeasibleError("microaggregation does not support ell/t constraints")
        return microaggregate(table, k)
    raise ValueError(f"unknown scheme {scheme!r}")


# ------------------------------------------------------------------------ checkers


def check_k_anonymity(release: Release, k: int) -> bool:
    return all(ec.size >= k for ec in release.classes)


def check_entropy_l_diversity(release: Release, ell: float) -> bool:
    threshold = math.log(ell)
    return all(class_entropy(ec) >= threshold - SLACK for ec in release.classes)


def check_t_closeness(release: Release, t: float) -> bool:
    table_dist = release.sensitive_distribution()
    return all(total_variation(ec.sensitive_counts, table_dist) <= t + SLACK for ec in release.classes)


def check_coverage(release: Release, table: Table) -> bool:
    """True iff every member's true QI tuple is covered by its class's recoding."""
    qi = dict(table.population())
    for ec in release.classes:
        for m in ec.members:
            if not ec.covers(qi[m]):
                return False
    return True


def release_summary(release: Release) -> dict:
    sizes = release.class_sizes()
    return {
        "scheme": release.scheme,
        "k": release.k,
        "ell": release.ell,
        "t": release.t,
        "classes": len(sizes),
        "records": sum(sizes),
        "min_class_size": min(sizes, default=0),
        "max_class_size": max(sizes, default=0),
        "mean_class_size": (sum(sizes) / len(sizes)) if sizes else 0.0,
    }


def iter_members(release: Release) -> Iterable[tuple[int, int]]:
    for ci, ec in enumerate(release.classes):
        for m in ec.members:
            yield m, ci
