import math
import os
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compattack.dataset import (
    AttributeSchema,
    OverlapDesign,
    Table,
    attribute_entropy,
    draw_overlapping_subsets,
    format_schema,
    load_csv,
    load_schema,
    parse_schema,
    sample_overlapping_subsets,
    save_csv,
)
from compattack.errors import DomainError, ParseError, SchemaError, SizingError, UndefinedMetricError
from conftest import FIXTURES

DATA_DIR = Path(os.environ.get("COMPATTACK_DATA", "/nonexistent"))


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_hospital_raw_loads(hospital_schema):
    table = load_csv(FIXTURES / "hospital_a_raw.csv", hospital_schema)
    assert len(table) == 12
    assert table.sensitive_attribute.name == "condition"
    assert list(table.ids) == list(range(12))
    first = table.records()[0]
    assert first.values == (13012, 28, "American", "AIDS")


def test_header_only_file_gives_empty_table(tmp_path, hospital_schema):
    table = load_csv(_write(tmp_path, "zip,age,nationality,condition\n"), hospital_schema)
    assert len(table) == 0
    assert table.codes.shape == (0, 4)


def test_wrong_arity_reports_line(tmp_path, hospital_schema):
    path = _write(tmp_path, "zip,age,nationality,condition\n13012,28,American,AIDS\n13012,28,American\n")
    with pytest.raises(ParseError, match="line 3"):
        load_csv(path, hospital_schema)


def test_out_of_domain_value_names_attribute(tmp_path, hospital_schema):
    path = _write(tmp_path, "zip,age,nationality,condition\n13012,28,Martian,AIDS\n")
    with pytest.raises(DomainError) as info:
        load_csv(path, hospital_schema)
    assert info.value.attribute == "nationality"
    assert info.value.value == "Martian"
    assert "line 2" in str(info.value)


@pytest.mark.parametrize("cell", ["", "?", "NA"])
def test_missing_values_rejected(tmp_path, hospital_schema, cell):
    path = _write(tmp_path, f"zip,age,nationality,condition\n13012,{cell},American,AIDS\n")
    with pytest.raises(DomainError):
        load_csv(path, hospital_schema)


def test_numeric_bounds_enforced(tmp_path, hospital_schema):
    path = _write(tmp_path, "zip,age,nationality,condition\n13012,121,American,AIDS\n")
    with pytest.raises(DomainError, match="age"):
        load_csv(path, hospital_schema)


def test_header_mismatch(tmp_path, hospital_schema):
    with pytest.raises(SchemaError):
        load_csv(_write(tmp_path, "zip,age,condition\n"), hospital_schema)


def test_id_column_and_column_order(tmp_path, hospital_schema):
    path = _write(tmp_path, "condition,id,age,zip,nationality\nFlu,42,30,13050,Indian\nAIDS,7,28,13012,American\n")
    table = load_csv(path, hospital_schema)
    assert list(table.ids) == [42, 7]
    assert table.records()[1].values == (13012, 28, "American", "AIDS")


def test_duplicate_ids_rejected(tmp_path, hospital_schema):
    path = _write(tmp_path, "id,zip,age,nationality,condition\n1,13012,28,American,AIDS\n1,13012,29,American,Flu\n")
    with pytest.raises(SchemaError):
        load_csv(path, hospital_schema)


def test_schema_validation():
    num = AttributeSchema.numeric("a", 0, 3)
    with pytest.raises(SchemaError):
        Table.from_records([num], [])  # no sensitive attribute
    with pytest.raises(SchemaError):
        Table.from_records([num, AttributeSchema.categorical("s", "xy", "sensitive"),
                            AttributeSchema.categorical("u", "xy", "sensitive")], [])
    with pytest.raises(SchemaError):
        AttributeSchema.numeric("a", 5, 1)
    with pytest.raises(SchemaError):
        AttributeSchema.categorical("c", ["x", "x"])


def test_schema_text_round_trip(hospital_schema):
    assert parse_schema(format_schema(hospital_schema)) == hospital_schema
    assert hospital_schema[3].domain[3] == "Heart Disease"


def test_schema_parse_errors():
    with pytest.raises(SchemaError):
        parse_schema("kind = numeric\n")
    with pytest.raises(SchemaError):
        parse_schema("name = a\nkind = numeric\nrole = qi\ndomain = 5\n")


_labels = ["x", "y, z", "w"]


@st.composite
def tables(draw):
    n = draw(st.integers(0, 25))
    schema = [AttributeSchema.numeric("a", -5, 40), AttributeSchema.categorical("b", _labels),
              AttributeSchema.categorical("s", ["p", "q"], role="sensitive")]
    rows = [(draw(st.integers(-5, 40)), draw(st.sampled_from(_labels)), draw(st.sampled_from("pq"))) for _ in range(n)]
    ids = draw(st.lists(st.integers(0, 10**6), min_size=n, max_size=n, unique=True))
    return Table.from_records(schema, rows, ids)


@settings(max_examples=40, deadline=None)
@given(tables())
def test_csv_round_trip(tmp_path_factory, table):
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    save_csv(table, path)
    assert load_csv(path, table.schema) == table


def _source(n):
    schema = [AttributeSchema.numeric("a", 0, 100), AttributeSchema.categorical("s", ["u", "v"], role="sensitive")]
    return Table.from_records(schema, [(i, "uv"[i % 2]) for i in range(n)], ids=range(100, 100 + n))


def test_overlap_example_sizes_6_6_overlap_4():
    source = _source(10)
    sample = draw_overlapping_subsets(source, OverlapDesign((6, 6), 4, seed=7))
    assert len(sample.overlap_ids) == 4
    for sub in sample.subsets:
        ids = set(sub.ids.tolist())
        assert len(sub) == 6 == len(ids)
        assert set(sample.overlap_ids) <= ids
        assert ids <= set(source.ids.tolist())


def test_overlap_equal_to_source():
    source = _source(8)
    subsets = sample_overlapping_subsets(source, OverlapDesign((8, 8), 8, seed=3))
    assert all(sub == source for sub in subsets)


@pytest.mark.parametrize("design", [OverlapDesign((5, 11), 4), OverlapDesign((5, 5), 6), OverlapDesign((), 1),
                                    OverlapDesign((5,), 0)])
def test_infeasible_designs(design):
    with pytest.raises(SizingError):
        sample_overlapping_subsets(_source(10), design)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 60), data=st.data())
def test_overlap_invariants(n, data):
    overlap = data.draw(st.integers(1, n))
    sizes = tuple(data.draw(st.lists(st.integers(overlap, n), min_size=1, max_size=4)))
    seed = data.draw(st.integers(0, 2**63 - 1))
    source = _source(n)
    design = OverlapDesign(sizes, overlap, seed)
    first = draw_overlapping_subsets(source, design)
    again = draw_overlapping_subsets(source, design)
    assert first.overlap_ids == again.overlap_ids
    assert all(a == b for a, b in zip(first.subsets, again.subsets))
    for sub, size in zip(first.subsets, sizes):
        ids = sub.ids.tolist()
        assert len(ids) == len(set(ids)) == size
        assert set(first.overlap_ids) <= set(ids)


def test_entropy_examples():
    schema = [AttributeSchema.numeric("a", 0, 9), AttributeSchema.categorical("s", "abcd", role="sensitive")]
    table = Table.from_records(schema, [(i, "abcd"[i % 4]) for i in range(8)])
    assert attribute_entropy(table, "s") == pytest.approx(math.log(4), abs=1e-12)
    assert attribute_entropy(table, "s", base=2) == pytest.approx(2.0, abs=1e-12)
    const = Table.from_records(schema, [(1, "a")] * 5)
    assert attribute_entropy(const, "s") == 0.0
    assert attribute_entropy(const, "a") == 0.0
    with pytest.raises(UndefinedMetricError):
        attribute_entropy(Table.from_records(schema, []), "s")


@pytest.mark.skipif(not (DATA_DIR / "adult.csv").exists(), reason="Adult data not supplied")
def test_adult_row_count():
    table = load_csv(DATA_DIR / "adult.csv", load_schema(DATA_DIR / "adult.schema"))
    assert len(table) == 30162


@pytest.mark.skipif(not (DATA_DIR / "ipums.csv").exists(), reason="IPUMS data not supplied")
@pytest.mark.parametrize("column, expected", [("occupation", 4.30), ("industry", 4.35), ("income", 5.56)])
def test_ipums_entropies(column, expected):
    table = load_csv(DATA_DIR / "ipums.csv", load_schema(DATA_DIR / "ipums.schema"))
    in_nats = attribute_entropy(table, column)
    in_bits = attribute_entropy(table, column, base=2)
    assert min(abs(in_nats - expected), abs(in_bits - expected)) <= 0.05
