"""Intersection attack across independently anonymized releases.

The adversary knows each target's quasi-identifiers, finds the target's
class in every release, and intersects the sets of distinct sensitive values
published for those classes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from compattack.anonymizer import (
    MICROAGGREGATION,
    Centroid,
    EquivalenceClass,
    Interval,
    Release,
    ValueSet,
)
from compattack.errors import ArityError, UndefinedMetricError

EXACT_COVER = "exact-cover"
NEAREST_CENTROID = "nearest-centroid"

DEFAULT_CONFIDENCE_GRID = (1.0, 0.5, 0.33, 0.25, 0.2)
_SLACK = 1e-12


@dataclass(frozen=True)
class LocatorResult:
    class_index: int | None
    method: str
    matched: bool
    ambiguous: bool = False
    n_candidates: int = 0


class Locator:
    """Finds the class an individual falls into, given only quasi-identifiers.

    Built once per release; covering tests are vectorized over classes.
    """

    def __init__(self, release: Release):
        self.release = release
        q = len(release.qi_schema)
        n = len(release.classes)
        if release.scheme == MICROAGGREGATION:
            self.method = NEAREST_CENTROID
            mean, std = release.normalization or (np.zeros(q), np.ones(q))
            self._mean = np.asarray(mean, dtype=float)
            self._std = np.asarray(std, dtype=float)
            cents = np.array([[g.value for g in ec.recoded] for ec in release.classes], dtype=float).reshape(n, q)
            self._centroids = (cents - self._mean) / self._std
        else:
            self.method = EXACT_COVER
            self._lo = np.full((n, q), -np.inf)
            self._hi = np.full((n, q), np.inf)
            self._needs_exact = False
            for ci, ec in enumerate(release.classes):
                for j, g in enumerate(ec.recoded):
                    if isinstance(g, Interval):
                        self._lo[ci, j], self._hi[ci, j] = g.lo, g.hi
                    elif isinstance(g, ValueSet):
                        self._lo[ci, j], self._hi[ci, j] = min(g.codes), max(g.codes)
                        if len(g.codes) != max(g.codes) - min(g.codes) + 1:
                            self._needs_exact = True
                    elif isinstance(g, Centroid):
                        raise ValueError("centroid recoding in a non-microaggregation release")

    def locate(self, qi: Sequence[int]) -> LocatorResult:
        qi_arr = np.asarray(qi, dtype=float)
        if qi_arr.shape != (len(self.release.qi_schema),):
            raise ArityError(f"QI tuple has {qi_arr.size} values, release has {len(self.release.qi_schema)} quasi-identifiers")
        if not self.release.classes:
            return LocatorResult(None, self.method, False)
        if self.method == NEAREST_CENTROID:
            z = (qi_arr - self._mean) / self._std
            d = ((self._centroids - z) ** 2).sum(axis=1)
            near = np.flatnonzero(d <= d.min() + _SLACK)
            return LocatorResult(int(near[0]), self.method, True, len(near) > 1, len(near))
        hits = np.flatnonzero(np.all((self._lo <= qi_arr) & (qi_arr <= self._hi), axis=1))
        if self._needs_exact and len(hits):
            hits = np.array([h for h in hits if self.release.classes[h].covers(qi)], dtype=int)
        if len(hits) == 0:
            return LocatorResult(None, self.method, False)
        return LocatorResult(int(hits[0]), self.method, True, len(hits) > 1, len(hits))


def locate(release: Release, qi: Sequence[int]) -> LocatorResult:
    """Locate a coded QI tuple in ``release``.

    Mondrian releases use exact coverage of the recoded values (lowest index
    wins when several classes cover, flagged as ambiguous); microaggregated
    releases use the nearest centroid in z-scored space.
    """
    return Locator(release).locate(qi)


def sensitive_value_set(ec: EquivalenceClass) -> frozenset:
    return frozenset(ec.sensitive)


# ------------------------------------------------------------------- outcomes


@dataclass(frozen=True)
class IndividualAttackOutcome:
    individual_id: int
    class_indices: tuple
    sensitive_sets: tuple
    intersection: frozenset
    prior_ea: tuple
    posterior_ea: int
    anon_drop: int
    confidence: float
    located: bool
    ambiguous: tuple = ()
    # None when the release does not publish member ids
    correctly_located: tuple = ()
    class_sizes: tuple = ()


@dataclass
class AttackReport:
    outcomes: list[IndividualAttackOutcome]
    n_releases: int
    confidence_grid: tuple = DEFAULT_CONFIDENCE_GRID
    sensitive_labels: dict = field(default_factory=dict, repr=False)

    @property
    def located(self) -> list[IndividualAttackOutcome]:
        return [o for o in self.outcomes if o.located]

    @property
    def n_located(self) -> int:
        return sum(o.located for o in self.outcomes)

    @property
    def n_unlocated(self) -> int:
        return len(self.outcomes) - self.n_located

    @property
    def n_ambiguous(self) -> int:
        return sum(any(o.ambiguous) for o in self.located)

    @property
    def vulnerable(self) -> list[int]:
        return [o.individual_id for o in self.located if o.anon_drop > 0]

    @property
    def vp_size(self) -> int:
        return len(self.vulnerable)

    def pvp(self, confidence: float) -> float:
        return pvp(self, confidence)

    def pvp_grid(self) -> dict[float, float]:
        return {c: pvp(self, c) for c in self.confidence_grid}

    def _require_located(self) -> list[IndividualAttackOutcome]:
        located = self.located
        if not located:
            raise UndefinedMetricError("no located individuals")
        return located

    def avg_prior_ea(self) -> list[float]:
        located = self._require_located()
        return [float(np.mean([o.prior_ea[j] for o in located])) for j in range(self.n_releases)]

    def avg_posterior_ea(self) -> float:
        return float(np.mean([o.posterior_ea for o in self._require_located()]))

    def avg_anon_drop(self) -> float:
        return float(np.mean([o.anon_drop for o in self._require_located()]))

    def avg_class_size(self) -> list[float]:
        located = self._require_located()
        return [float(np.mean([o.class_sizes[j] for o in located])) for j in range(self.n_releases)]

    def locator_hit_rate(self) -> list[float | None]:
        """Fraction of located individuals placed in their true class, per release."""
        rates = []
        for j in range(self.n_releases):
            known = [o.correctly_located[j] for o in self.outcomes if o.class_indices[j] is not None and o.correctly_located[j] is not None]
            rates.append(float(np.mean(known)) if known else None)
        return rates

    def aggregates(self) -> dict:
        out = {
            "population": len(self.outcomes),
            "located": self.n_located,
            "unlocated": self.n_unlocated,
            "ambiguous": self.n_ambiguous,
            "n_releases": self.n_releases,
        }
        if self.n_located:
            out.update({
                "vp_size": self.vp_size,
                "pvp": {_fmt_c(c): v for c, v in self.pvp_grid().items()},
                "avg_prior_ea": self.avg_prior_ea(),
                "avg_posterior_ea": self.avg_posterior_ea(),
                "avg_anon_drop": self.avg_anon_drop(),
                "avg_class_size": self.avg_class_size(),
            })
        out["locator_hit_rate"] = self.locator_hit_rate()
        return out

    # ---- serialization

    def _label(self, code):
        return self.sensitive_labels.get(code, code)

    def to_dict(self) -> dict:
        outcomes = []
        for o in self.outcomes:
            outcomes.append({
                "id": o.individual_id,
                "located": o.located,
                "class_indices": list(o.class_indices),
                "sensitive_sets": [sorted(self._label(s) for s in sset) for sset in o.sensitive_sets],
                "intersection": sorted(self._label(s) for s in o.intersection),
                "prior_ea": list(o.prior_ea),
                "posterior_ea": o.posterior_ea,
                "anon_drop": o.anon_drop,
                "confidence": o.confidence,
                "ambiguous": list(o.ambiguous),
                "correctly_located": list(o.correctly_located),
            })
        return {"aggregates": self.aggregates(), "outcomes": outcomes}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=str)

    def summary_rows(self) -> list[tuple[str, str, object]]:
        """(metric, parameter, value) rows; one row per metric and parameter."""
        rows: list[tuple[str, str, object]] = [
            ("population", "", len(self.outcomes)),
            ("located", "", self.n_located),
            ("unlocated", "", self.n_unlocated),
            ("ambiguous", "", self.n_ambiguous),
        ]
        if self.n_located:
            rows.append(("vp_size", "", self.vp_size))
            rows += [("pvp", f"C={_fmt_c(c)}", v) for c, v in self.pvp_grid().items()]
            rows += [("avg_prior_ea", f"release={j + 1}", v) for j, v in enumerate(self.avg_prior_ea())]
            rows.append(("avg_posterior_ea", "", self.avg_posterior_ea()))
            rows.append(("avg_anon_drop", "", self.avg_anon_drop()))
            rows += [("avg_class_size", f"release={j + 1}", v) for j, v in enumerate(self.avg_class_size())]
        rows += [("locator_hit_rate", f"release={j + 1}", v) for j, v in enumerate(self.locator_hit_rate()) if v is not None]
        return rows

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "parameter", "value"])
            writer.writerows(self.summary_rows())


def _fmt_c(c: float) -> str:
    return f"{c:g}"


def pvp(report: AttackReport, confidence: float) -> float:
    """Percentage of located individuals whose confidence level is at least ``confidence``."""
    if not 0 < confidence <= 1:
        raise ValueError("confidence must lie in (0, 1]")
    located = report.located
    if not located:
        raise UndefinedMetricError("PVP is undefined with zero located individuals")
    hits = sum(o.confidence >= confidence - _SLACK for o in located)
    return 100.0 * hits / len(located)


def intersection_attack(
    releases: Sequence[Release],
    population: Iterable[tuple[int, Sequence[int]]],
    confidence_grid: Sequence[float] = DEFAULT_CONFIDENCE_GRID,
) -> AttackReport:
    """Run the intersection attack for every (individual-id, QI tuple) in ``population``.

    Individuals that cannot be located in some release are kept in the report
    (flagged ``located=False``) but excluded from every aggregate. An empty
    intersection (possible only after a wrong nearest-centroid guess) gives
    posterior anonymity 0 and confidence 0.
    """
    releases = list(releases)
    if len(releases) < 2:
        raise ArityError("the intersection attack needs at least two releases")
    locators = [Locator(r) for r in releases]
    value_sets = [[sensitive_value_set(ec) for ec in r.classes] for r in releases]
    outcomes = []
    for individual_id, qi in sorted(population, key=lambda p: p[0]):
        results = [loc.locate(qi) for loc in locators]
        located = all(r.matched for r in results)
        indices = tuple(r.class_index for r in results)
        sets = tuple(value_sets[j][ci] if ci is not None else frozenset() for j, ci in enumerate(indices))
        correct = tuple(
            None if rel.class_of(individual_id) is None or ci is None else rel.class_of(individual_id) == ci
            for rel, ci in zip(releases, indices)
        )
        sizes = tuple(rel.classes[ci].size if ci is not None else 0 for rel, ci in zip(releases, indices))
        if located:
            inter = frozenset.intersection(*sets)
            prior = tuple(len(s) for s in sets)
            post = len(inter)
            drop = min(prior) - post
            conf = 1.0 / post if post else 0.0
        else:
            inter, prior, post, drop, conf = frozenset(), tuple(len(s) for s in sets), 0, 0, 0.0
        outcomes.append(IndividualAttackOutcome(
            int(individual_id), indices, sets, inter, prior, post, drop, conf, located,
            tuple(r.ambiguous for r in results), correct, sizes,
        ))
    sens = releases[0].sensitive_attribute
    labels = {}
    for o in outcomes:
        for sset in o.sensitive_sets:
            for code in sset:
                labels.setdefault(code, sens.decode(code))
    return AttackReport(outcomes, len(releases), tuple(confidence_grid), labels)

