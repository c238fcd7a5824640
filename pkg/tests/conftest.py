from pathlib import Path

import numpy as np
import pytest

from compattack.anonymizer import Release
from compattack.dataset import AttributeSchema, Table, load_schema

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def hospital_schema():
    return load_schema(FIXTURES / "hospital.schema")


@pytest.fixture
def hospital_releases(hospital_schema):
    a = Release.from_csv(FIXTURES / "hospital_a.csv", hospital_schema)
    b = Release.from_csv(FIXTURES / "hospital_b.csv", hospital_schema)
    return a, b


@pytest.fixture
def alice(hospital_schema):
    zip_, age, nat = hospital_schema[:3]
    return (zip_.encode("13012"), age.encode("28"), nat.encode("American"))


def random_table(rng: np.random.Generator, n_rows: int, qi_sizes, n_sensitive: int, categorical_last=False) -> Table:
    """Uniform random table with numeric QIs (optionally one categorical) and a categorical sensitive column."""
    schema = []
    for j, size in enumerate(qi_sizes):
        if categorical_last and j == len(qi_sizes) - 1:
            schema.append(AttributeSchema.categorical(f"c{j}", [f"v{v}" for v in range(size)]))
        else:
            schema.append(AttributeSchema.numeric(f"q{j}", 0, size - 1))
    schema.append(AttributeSchema.categorical("s", [f"s{v}" for v in range(n_sensitive)], role="sensitive"))
    cols = [rng.integers(0, size, n_rows) for size in qi_sizes] + [rng.integers(0, n_sensitive, n_rows)]
    return Table(tuple(schema), np.arange(n_rows), np.column_stack(cols).reshape(n_rows, -1))
