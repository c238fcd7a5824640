"""Seeded synthetic microdata with a controllable sensitive-attribute entropy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from compattack.dataset import AttributeSchema, Table
from compattack.errors import ConfigError


@dataclass(frozen=True)
class SyntheticSpec:
    records: int
    qi_domain_sizes: tuple[int, ...] = (50, 20, 10)
    sensitive_domain_size: int = 32
    # nats; None means uniform (ln of the domain size)
    sensitive_entropy: float | None = None
    # probability that a record's sensitive value is a function of its first QI
    correlation: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "qi_domain_sizes", tuple(int(s) for s in self.qi_domain_sizes))
        if self.records < 0:
            raise ConfigError("record count must be non-negative")
        if not self.qi_domain_sizes or min(self.qi_domain_sizes) < 1:
            raise ConfigError("need at least one QI attribute with a positive domain size")
        if self.sensitive_domain_size < 1:
            raise ConfigError("sensitive domain must be non-empty")
        if self.sensitive_entropy is not None and not 0 <= self.sensitive_entropy <= math.log(self.sensitive_domain_size) + 1e-12:
            raise ConfigError(f"entropy target {self.sensitive_entropy} outside [0, ln {self.sensitive_domain_size}]")
        if not 0 <= self.correlation <= 1:
            raise ConfigError("correlation must lie in [0, 1]")

    def schema(self) -> list[AttributeSchema]:
        attrs = [AttributeSchema.numeric(f"q{j}", 0, size - 1) for j, size in enumerate(self.qi_domain_sizes)]
        width = len(str(self.sensitive_domain_size - 1))
        labels = [f"s{v:0{width}d}" for v in range(self.sensitive_domain_size)]
        attrs.append(AttributeSchema.categorical("sensitive", labels, role="sensitive"))
        return attrs


def entropy_of(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def distribution_with_entropy(size: int, entropy: float | None) -> np.ndarray:
    """Geometric-shaped distribution p_v proportional to exp(-beta v) with the requested entropy.

    Entropy decreases monotonically in beta, so beta is found by bisection.
    """
    if entropy is None or entropy >= math.log(size) - 1e-12:
        return np.full(size, 1.0 / size)
    if entropy <= 1e-12:
        p = np.zeros(size)
        p[0] = 1.0
        return p
    ranks = np.arange(size)

    def dist(beta):
        w = np.exp(-beta * (ranks - ranks.min()))
        return w / w.sum()

    lo, hi = 0.0, 1.0
    while entropy_of(dist(hi)) > entropy:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if entropy_of(dist(mid)) > entropy:
            lo = mid
        else:
            hi = mid
    return dist(0.5 * (lo + hi))


def generate_sensitive(qi: np.ndarray, spec: SyntheticSpec, entropy: float | None, rng: np.random.Generator) -> np.ndarray:
    p = distribution_with_entropy(spec.sensitive_domain_size, entropy)
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    n = len(qi)
    u = rng.random(n)
    if spec.correlation > 0 and n:
        linked = rng.random(n) < spec.correlation
        # map the first QI onto [0, 1) and push it through the same quantile function
        u_qi = (qi[:, 0] + 0.5) / spec.qi_domain_sizes[0]
        u = np.where(linked, u_qi, u)
    return np.searchsorted(cdf, u, side="right").clip(0, spec.sensitive_domain_size - 1)


def generate_table(spec: SyntheticSpec) -> Table:
    rng = np.random.default_rng(spec.seed)
    qi = np.column_stack([rng.integers(0, size, spec.records) for size in spec.qi_domain_sizes]).reshape(spec.records, -1)
    sens = generate_sensitive(qi, spec, spec.sensitive_entropy, rng)
    return Table(tuple(spec.schema()), np.arange(spec.records), np.column_stack([qi, sens]).reshape(spec.records, -1))


def with_sensitive_entropy(table: Table, spec: SyntheticSpec, entropy: float | None, seed: int) -> Table:
    """Same quasi-identifiers, sensitive column redrawn at a new entropy level."""
    if entropy is not None and entropy > math.log(spec.sensitive_domain_size) + 1e-12:
        raise ConfigError(f"entropy target {entropy} exceeds ln {spec.sensitive_domain_size}")
    rng = np.random.default_rng(seed)
    sens = generate_sensitive(table.qi_codes, spec, entropy, rng)
    return table.with_column(table.sensitive_attribute.name, sens)
