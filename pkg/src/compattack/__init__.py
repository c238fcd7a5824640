"""Composition attacks on partition-based anonymization and exact DP semantics checks."""

from compattack.anonymizer import (
    EquivalenceClass,
    Release,
    check_entropy_l_diversity,
    check_k_anonymity,
    check_t_closeness,
    microaggregate,
    mondrian_anonymize,
)
from compattack.attack import AttackReport, intersection_attack, locate, pvp, sensitive_value_set
from compattack.dataset import AttributeSchema, OverlapDesign, Table, attribute_entropy, load_csv, sample_overlapping_subsets

__version__ = "0.1.0"

__all__ = [
    "AttackReport",
    "AttributeSchema",
    "EquivalenceClass",
    "OverlapDesign",
    "Release",
    "Table",
    "attribute_entropy",
    "check_entropy_l_diversity",
    "check_k_anonymity",
    "check_t_closeness",
    "intersection_attack",
    "load_csv",
    "locate",
    "microaggregate",
    "mondrian_anonymize",
    "pvp",
    "sample_overlapping_subsets",
    "sensitive_value_set",
]
