import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compattack.anonymizer import (
    MICROAGGREGATION,
    Centroid,
    EquivalenceClass,
    Interval,
    Release,
    Suppressed,
    ValueSet,
    anonymize,
    check_coverage,
    check_entropy_l_diversity,
    check_k_anonymity,
    check_t_closeness,
    class_entropy,
    format_generalized,
    microaggregate,
    mondrian_anonymize,
    parse_generalized,
)
from compattack.dataset import AttributeSchema, Table, load_csv
from compattack.errors import ConstraintError, InfeasibleError
from conftest import FIXTURES, random_table

SENS = AttributeSchema.categorical("s", ["a", "b", "c", "d", "e", "f", "g", "h"], role="sensitive")


def _one_qi_table(values, sensitive):
    schema = [AttributeSchema.numeric("x", 0, 100), SENS]
    return Table.from_records(schema, list(zip(values, sensitive)))


def _release_from_multisets(multisets, scheme="mondrian"):
    """Release whose classes carry the given sensitive labels; QI recoding is irrelevant here."""
    schema = (AttributeSchema.numeric("x", 0, 100), SENS)
    classes, next_id = [], 0
    for j, labels in enumerate(multisets):
        codes = tuple(sorted(SENS.encode(v) for v in labels))
        classes.append(EquivalenceClass(tuple(range(next_id, next_id + len(codes))), (Interval(j, j),), codes))
        next_id += len(codes)
    return Release(tuple(classes), scheme, schema, 1)


def test_hospital_k4_matches_grouping_shape(hospital_schema):
    table = load_csv(FIXTURES / "hospital_a_raw.csv", hospital_schema)
    release = mondrian_anonymize(table, 4)
    assert release.class_sizes() == [4, 4, 4]
    ages = [ec.recoded[1] for ec in release.classes]
    assert ages == [Interval(22, 28), Interval(31, 35), Interval(41, 55)]
    # Alice (row 0) is grouped with the three other under-30 patients
    assert release.classes[0].members == (0, 1, 2, 3)
    assert check_k_anonymity(release, 4)
    assert not check_k_anonymity(release, 5)


def test_k1_gives_singletons_for_distinct_tuples():
    rng = np.random.default_rng(3)
    table = random_table(rng, 40, (1000, 1000), 4)
    assert len(set(map(tuple, table.qi_codes.tolist()))) == 40
    release = mondrian_anonymize(table, 1)
    assert release.class_sizes() == [1] * 40
    assert check_coverage(release, table)


def test_eight_records_k2():
    table = _one_qi_table(range(1, 9), "abcdefgh")
    release = mondrian_anonymize(table, 2)
    assert [ec.recoded[0] for ec in release.classes] == [Interval(1, 2), Interval(3, 4), Interval(5, 6), Interval(7, 8)]
    assert [ec.members for ec in release.classes] == [(0, 1), (2, 3), (4, 5), (6, 7)]


def test_median_ties_stay_on_one_side():
    # five copies of 5 cannot be separated; the cut falls between 5 and 6
    table = _one_qi_table([5, 5, 5, 5, 5, 6, 7, 8], "aaaaabbb")
    release = mondrian_anonymize(table, 2)
    assert [ec.recoded[0] for ec in release.classes] == [Interval(5, 5), Interval(6, 8)]


def test_categorical_split_by_code_order():
    colour = AttributeSchema.categorical("colour", ["red", "green", "blue", "grey"])
    table = Table.from_records([colour, SENS], [(c, s) for c, s in zip(["red", "green", "blue", "grey"] * 2, "abcdefgh")])
    release = mondrian_anonymize(table, 2)
    assert [ec.recoded[0] for ec in release.classes] == [ValueSet(frozenset({i})) for i in range(4)]
    assert format_generalized(ValueSet(frozenset({0, 1})), colour) == "red|green"


def test_errors():
    table = _one_qi_table(range(4), "aabb")
    with pytest.raises(InfeasibleError):
        mondrian_anonymize(table, 5)
    with pytest.raises(InfeasibleError):
        microaggregate(table, 5)
    with pytest.raises(ConstraintError):
        mondrian_anonymize(_one_qi_table(range(4), "aaaa"), 1, ell=2)
    with pytest.raises(InfeasibleError):
        anonymize(table, MICROAGGREGATION, 2, ell=2)


def test_ell_constraint_blocks_homogeneous_halves():
    table = _one_qi_table(range(8), "aaaabbbb")
    assert mondrian_anonymize(table, 2).class_sizes() == [2, 2, 2, 2]
    constrained = mondrian_anonymize(table, 2, ell=2)
    assert constrained.class_sizes() == [8]
    assert check_entropy_l_diversity(constrained, 2)


def test_microaggregation_identical_records():
    table = _one_qi_table([7, 7, 7, 7], "abcd")
    release = microaggregate(table, 2)
    assert release.class_sizes() == [2, 2]
    assert all(ec.recoded == (Centroid(7.0),) for ec in release.classes)


def _min_sse_partition(points, k):
    """Exhaustive minimum within-cluster SSE over partitions with all parts of size >= k."""
    n = len(points)
    best, best_parts = math.inf, None

    def partitions(items):
        if not items:
            yield []
            return
        head, rest = items[0], items[1:]
        for r in range(len(rest) + 1):
            for mates in itertools.combinations(rest, r):
                remaining = [x for x in rest if x not in mates]
                for tail in partitions(remaining):
                    yield [(head, *mates)] + tail

    for parts in partitions(list(range(n))):
        if min(len(p) for p in parts) < k:
            continue
        sse = sum(((points[list(p)] - points[list(p)].mean(axis=0)) ** 2).sum() for p in parts)
        if sse < best - 1e-12:
            best, best_parts = sse, sorted(parts)
    return best_parts


def test_microaggregation_two_separated_points_matches_oracle():
    schema = [AttributeSchema.numeric("x", 0, 100), AttributeSchema.numeric("y", 0, 100), SENS]
    rows = [(10, 20, "a"), (90, 80, "b"), (10, 20, "c"), (90, 80, "d")]
    table = Table.from_records(schema, rows)
    release = microaggregate(table, 2)
    oracle = _min_sse_partition(table.qi_codes.astype(float), 2)
    assert [ec.members for ec in release.classes] == [tuple(p) for p in oracle] == [(0, 2), (1, 3)]
    assert [ec.recoded for ec in release.classes] == [(Centroid(10.0), Centroid(20.0)), (Centroid(90.0), Centroid(80.0))]


def test_k_anonymity_checker_examples(hospital_releases):
    a, _ = hospital_releases
    assert check_k_anonymity(a, 4) and not check_k_anonymity(a, 5)
    assert a.class_sizes() == [4, 4, 4]
    assert check_k_anonymity(_release_from_multisets([]), 10)


def test_entropy_ell_example():
    group = ["a", "b", "c", "c"]  # two singletons and a pair, as in the first hospital group
    release = _release_from_multisets([group])
    expected = -(0.25 * math.log(0.25) * 2 + 0.5 * math.log(0.5))
    assert class_entropy(release.classes[0]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(1.0397, abs=1e-4)
    assert check_entropy_l_diversity(release, 2)
    assert not check_entropy_l_diversity(release, 3)


@pytest.mark.parametrize("m", [1, 2, 3, 5, 8])
def test_uniform_class_is_exactly_m_diverse(m):
    release = _release_from_multisets([list("abcdefgh"[:m]) * 2])
    assert check_entropy_l_diversity(release, m)
    assert not check_entropy_l_diversity(release, m + 0.01)


def test_t_closeness_examples():
    assert check_t_closeness(_release_from_multisets(["abca"]), 0.0)
    split = _release_from_multisets(["aa", "bb"])
    assert check_t_closeness(split, 0.5)
    assert not check_t_closeness(split, 0.4)


def test_generalized_value_text_round_trip(hospital_schema):
    zip_, age, nat = hospital_schema[:3]
    cases = [(Interval(13000, 13099), zip_), (Interval(28, 28), age), (Suppressed(), nat),
             (ValueSet(frozenset({0, 3})), nat)]
    for value, attr in cases:
        assert parse_generalized(format_generalized(value, attr), attr) == value
    assert parse_generalized(format_generalized(Centroid(31.0), age), age, centroid=True) == Centroid(31.0)


@pytest.mark.parametrize("scheme", ["mondrian", "microaggregation"])
def test_json_and_csv_round_trip(tmp_path, scheme):
    rng = np.random.default_rng(11)
    table = random_table(rng, 60, (30, 12, 5), 6, categorical_last=True)
    release = anonymize(table, scheme, 4)
    assert Release.from_json(release.to_json(include_members=True)) == release
    restored = Release.from_json(release.to_json())
    assert [ec.sensitive for ec in restored.classes] == [ec.sensitive for ec in release.classes]
    assert [ec.recoded for ec in restored.classes] == [ec.recoded for ec in release.classes]
    path = tmp_path / "r.csv"
    release.to_csv(path)
    from_csv = Release.from_csv(path, table.schema, scheme)
    assert [ec.sensitive for ec in from_csv.classes] == [ec.sensitive for ec in release.classes]
    for got, want in zip(from_csv.classes, release.classes):
        for g, w in zip(got.recoded, want.recoded):
            assert g == w or (isinstance(g, Centroid) and g.value == pytest.approx(w.value, rel=1e-12))


table_params = st.tuples(
    st.integers(1, 120),  # rows
    st.lists(st.integers(1, 40), min_size=1, max_size=4),  # QI domain sizes
    st.integers(1, 6),  # sensitive domain size
    st.integers(0, 2**32 - 1),
)


@settings(max_examples=60, deadline=None)
@given(table_params, st.integers(1, 8), st.booleans())
def test_mondrian_invariants(params, k, categorical):
    n, sizes, n_sens, seed = params
    table = random_table(np.random.default_rng(seed), n, sizes, n_sens, categorical_last=categorical)
    k = min(k, n)
    release = mondrian_anonymize(table, k)
    assert check_k_anonymity(release, k)
    assert check_coverage(release, table)
    assert sorted(m for ec in release.classes for m in ec.members) == sorted(table.ids.tolist())
    assert mondrian_anonymize(table, k) == release
    t = 0.3
    closed = mondrian_anonymize(table, k, t=t)
    assert check_k_anonymity(closed, k) and check_t_closeness(closed, t) and check_coverage(closed, table)


@settings(max_examples=60, deadline=None)
@given(table_params, st.integers(1, 8))
def test_mondrian_fewer_classes_as_k_grows(params, k):
    n, sizes, n_sens, seed = params
    table = random_table(np.random.default_rng(seed), n, sizes, n_sens)
    k = min(k, n)
    counts = [len(mondrian_anonymize(table, kk)) for kk in range(k, n + 1, max(1, n // 6))]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


@settings(max_examples=60, deadline=None)
@given(table_params, st.integers(1, 8))
def test_microaggregation_class_sizes(params, k):
    n, sizes, n_sens, seed = params
    table = random_table(np.random.default_rng(seed), n, sizes, n_sens)
    k = min(k, n)
    release = microaggregate(table, k)
    assert all(k <= s <= 2 * k - 1 for s in release.class_sizes())
    assert sum(release.class_sizes()) == n
    assert microaggregate(table, k) == release
