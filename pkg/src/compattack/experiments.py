"""Configuration-driven studies: breach, anonymity drop, entropy, multi-release, and DP suite.

Every study expands its parameter grid into independent cells, runs them
(optionally on a process pool), and writes one long-format CSV plus a JSON
manifest. Cells that fail keep their row with ``status=error``; nothing is
dropped, and identical configs give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from compattack.anonymizer import MICROAGGREGATION, MONDRIAN, anonymize
from compattack.attack import DEFAULT_CONFIDENCE_GRID, AttackReport, intersection_attack
from compattack.dataset import OverlapDesign, Table, attribute_entropy, draw_overlapping_subsets, load_csv, load_schema
from compattack.dp_semantics import (
    Belief,
    DatabaseSpace,
    build_constant,
    build_publish_one_record,
    build_randomized_response,
    build_truncated_geometric_counter,
    dp_check,
    dp_min_delta,
    good_set_semantic_eval,
    randomized_response_epsilon,
    semantic_privacy_eval,
)
from compattack.errors import CompAttackError, ConfigError
from compattack.synthetic import SyntheticSpec, generate_table, with_sensitive_entropy

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_SCHEME_ALIASES = {
    "mondrian": MONDRIAN,
    "m": MONDRIAN,
    "microaggregation": MICROAGGREGATION,
    "micro": MICROAGGREGATION,
    "mdav": MICROAGGREGATION,
}

STUDIES = ("breach", "drop", "entropy", "multi", "dp")


def parse_scenario(text: str) -> tuple[str, ...]:
    """``"mondrian+micro"`` -> ("mondrian", "microaggregation")."""
    parts = [p.strip().lower() for p in text.split("+") if p.strip()]
    try:
        return tuple(_SCHEME_ALIASES[p] for p in parts)
    except KeyError as exc:
        raise ConfigError(f"unknown scheme {exc.args[0]!r} in scenario {text!r}") from None


def _as_list(value) -> list:
    if value is None:
        return []
    return list(value) if isinstance(value, (list, tuple)) else [value]


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    schema: str | None = None
    synthetic_records: int = 2000
    synthetic_qi_domains: list = field(default_factory=lambda: [50, 20, 10])
    synthetic_sensitive_domain: int = 32
    synthetic_entropy: list = field(default_factory=list)
    synthetic_correlation: float = 0.0
    scenarios: list = field(default_factory=lambda: ["mondrian+mondrian"])
    k: list = field(default_factory=lambda: [5])
    ell: list = field(default_factory=list)
    t: list = field(default_factory=list)
    n_releases: list = field(default_factory=lambda: [2])
    overlap: int = 500
    subset_size: int | None = None
    confidence: list = field(default_factory=lambda: list(DEFAULT_CONFIDENCE_GRID))
    seed: int = 0
    repeats: int = 1
    out: str = "results"
    jobs: int = 1
    dp_mechanisms: list = field(default_factory=lambda: ["rr", "geometric", "publish_one", "constant"])
    dp_n: list = field(default_factory=lambda: [1, 2, 3])
    dp_p: list = field(default_factory=lambda: [0.1, 0.25, 0.4])
    dp_epsilon: list = field(default_factory=lambda: [math.log(2), math.log(3)])
    dp_check_epsilon: list = field(default_factory=lambda: [1.0])
    dp_delta: list = field(default_factory=lambda: [0.0])
    dp_priors: list = field(default_factory=lambda: ["uniform", "dirichlet", "point_mixture"])
    dp_default_rows: list = field(default_factory=lambda: [0, 1])

    _LIST_FIELDS = (
        "synthetic_qi_domains", "synthetic_entropy", "scenarios", "k", "ell", "t", "n_releases", "confidence",
        "dp_mechanisms", "dp_n", "dp_p", "dp_epsilon", "dp_check_epsilon", "dp_delta", "dp_priors", "dp_default_rows",
    )

    def __post_init__(self):
        for name in self._LIST_FIELDS:
            setattr(self, name, _as_list(getattr(self, name)))
        for name in ("k", "n_releases", "scenarios", "confidence"):
            if not getattr(self, name):
                raise ConfigError(f"grid {name!r} must be non-empty")
        for sc in self.scenarios:
            parse_scenario(sc)
        if any(n < 2 for n in self.n_releases):
            raise ConfigError("attack experiments need n >= 2 releases")
        if any(k < 1 for k in self.k):
            raise ConfigError("k values must be positive")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__ if not f.startswith("_")}
        unknown = set(doc) - known - {"study"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in doc.items() if k in known})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        """Read a flat TOML file (``key = value`` with array values)."""
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        nested = [k for k, v in doc.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"config must be flat; found tables {nested}")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if not k.startswith("_")}

    def config_hash(self) -> str:
        doc = self.to_dict()
        # where results go and how many workers run them do not change results
        doc.pop("out")
        doc.pop("jobs")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]

    @property
    def seeds(self) -> list[int]:
        return [self.seed + r for r in range(self.repeats)]

    def synthetic_spec(self, seed: int, entropy: float | None = None) -> SyntheticSpec:
        return SyntheticSpec(
            records=self.synthetic_records,
            qi_domain_sizes=tuple(self.synthetic_qi_domains),
            sensitive_domain_size=self.synthetic_sensitive_domain,
            sensitive_entropy=entropy,
            correlation=self.synthetic_correlation,
            seed=seed,
        )

    def source_table(self, seed: int) -> Table:
        if self.dataset:
            if not self.schema:
                raise ConfigError("dataset given without a schema file")
            return load_csv(self.dataset, load_schema(self.schema))
        return generate_table(self.synthetic_spec(seed, self.synthetic_entropy[0] if self.synthetic_entropy else None))

    def design(self, n: int, seed: int, source_size: int) -> OverlapDesign:
        size = self.subset_size if self.subset_size is not None else min(2 * self.overlap, source_size)
        return OverlapDesign(tuple([size] * n), self.overlap, seed)


# ----------------------------------------------------------------------- cells


@dataclass(frozen=True)
class Cell:
    study: str
    seed: int
    params: tuple  # ((name, value), ...)

    def param(self, name, default=None):
        return dict(self.params).get(name, default)


@dataclass
class CellResult:
    cell: Cell
    rows: list  # (metric, parameter, value)
    error: str | None = None
    extras: dict = field(default_factory=dict)


def _schemes_for(scenario: str, n: int) -> list[str]:
    schemes = list(parse_scenario(scenario))
    while len(schemes) < n:
        schemes.append(schemes[-1])
    return schemes[:n]


def _attack_cell(config: ExperimentConfig, source: Table, scenario: str, k: int, n: int, seed: int,
                 ell: float | None = None, t: float | None = None) -> list[AttackReport]:
    """Sample n overlapping subsets, anonymize each, and attack every prefix of length >= 2."""
    sample = draw_overlapping_subsets(source, config.design(n, seed, len(source)))
    releases = [anonymize(sub, scheme, k, ell, t) for sub, scheme in zip(sample.subsets, _schemes_for(scenario, n))]
    population = source.select_ids(sample.overlap_ids).population()
    return [intersection_attack(releases[:m], population, config.confidence) for m in range(2, n + 1)]


def _breach_rows(report: AttackReport) -> list:
    rows = [("pvp", f"C={c:g}", v) for c, v in report.pvp_grid().items()]
    rows.append(("perfect_breach", "", report.pvp(1.0)))
    rows += [("vp_size", "", report.vp_size), ("located", "", report.n_located),
             ("unlocated", "", report.n_unlocated), ("ambiguous", "", report.n_ambiguous)]
    rows += [("locator_hit_rate", f"release={j + 1}", v) for j, v in enumerate(report.locator_hit_rate()) if v is not None]
    return rows


def _drop_rows(report: AttackReport) -> list:
    rows = [("avg_class_size", f"release={j + 1}", v) for j, v in enumerate(report.avg_class_size())]
    rows += [("avg_prior_ea", f"release={j + 1}", v) for j, v in enumerate(report.avg_prior_ea())]
    rows += [("avg_posterior_ea", "", report.avg_posterior_ea()), ("avg_anon_drop", "", report.avg_anon_drop())]
    return rows


def run_breach_cell(config: ExperimentConfig, cell: Cell) -> CellResult:
    source = config.source_table(cell.seed)
    (report,) = _attack_cell(config, source, cell.param("scenario"), cell.param("k"), 2, cell.seed,
                             cell.param("ell"), cell.param("t"))
    return CellResult(cell, _breach_rows(report))


def run_drop_cell(config: ExperimentConfig, cell: Cell) -> CellResult:
    source = config.source_table(cell.seed)
    (report,) = _attack_cell(config, source, cell.param("scenario"), cell.param("k"), 2, cell.seed,
                             cell.param("ell"), cell.param("t"))
    return CellResult(cell, _drop_rows(report))


def run_entropy_cell(config: ExperimentConfig, cell: Cell) -> CellResult:
    if config.dataset:
        source = config.source_table(cell.seed)
    else:
        base = generate_table(config.synthetic_spec(cell.seed))
        level = cell.param("entropy")
        # same QI columns for every level; the sensitive column alone changes
        source = with_sensitive_entropy(base, config.synthetic_spec(cell.seed), level, seed=cell.seed + 7919)
    (report,) = _attack_cell(config, source, cell.param("scenario"), cell.param("k"), 2, cell.seed)
    rows = [("sensitive_entropy", "", attribute_entropy(source, source.sensitive_attribute.name))]
    rows += _drop_rows(report)
    return CellResult(cell, rows)


def run_multi_cell(config: ExperimentConfig, cell: Cell) -> CellResult:
    source = config.source_table(cell.seed)
    grid = sorted(config.n_releases)
    reports = _attack_cell(config, source, cell.param("scenario"), cell.param("k"), max(grid), cell.seed)
    rows = []
    previous = None
    monotone = True
    for report in reports:
        n = report.n_releases
        if n not in grid:
            continue
        perfect, drop = report.pvp(1.0), report.avg_anon_drop()
        rows += [("perfect_breach", f"n={n}", perfect), ("avg_anon_drop", f"n={n}", drop),
                 ("avg_posterior_ea", f"n={n}", report.avg_posterior_ea())]
        if previous is not None and (perfect < previous[0] - 1e-9 or drop < previous[1] - 1e-9):
            monotone = False
        previous = (perfect, drop)
    rows.append(("severity_monotone_in_n", "", int(monotone)))
    return CellResult(cell, rows)


def _dp_mechanism(spec: tuple, default_row):
    kind, n, param = spec
    space = DatabaseSpace((0, 1), n, default_row)
    if kind == "rr":
        return build_randomized_response(space, param), randomized_response_epsilon(param)
    if kind == "geometric":
        return build_truncated_geometric_counter(space, param), param
    if kind == "publish_one":
        return build_publish_one_record(space), None
    if kind == "constant":
        return build_constant(space), 0.0
    raise ConfigError(f"unknown mechanism {kind!r}")


def _dp_prior(name: str, space: DatabaseSpace, seed: int) -> Belief:
    if name == "uniform":
        return Belief.uniform(space)
    if name == "dirichlet":
        return Belief.dirichlet(space, seed)
    if name in ("point_mixture", "point-mixture"):
        return Belief.point_mixture(space)
    raise ConfigError(f"unknown prior {name!r}")


def run_dp_cell(config: ExperimentConfig, cell: Cell) -> CellResult:
    mech, _ = _dp_mechanism((cell.param("mechanism"), cell.param("n"), cell.param("param")), cell.param("default_row"))
    belief = _dp_prior(cell.param("prior"), mech.space, cell.seed)
    eps, delta = cell.param("epsilon"), cell.param("delta")
    min_delta, pair = dp_min_delta(mech, eps)
    sem = semantic_privacy_eval(mech, belief, eps, delta)
    good = good_set_semantic_eval(mech, belief, eps, delta)
    rows = [
        ("dp_pass", "", int(dp_check(mech, eps, delta))),
        ("min_delta", "", min_delta),
        ("worst_sd", "", sem.worst_sd),
        ("pure_bound", "", sem.pure_bound),
        ("pure_exceedance_mass", "", sem.pure_exceedance_mass),
        ("pure_bound_holds", "", int(sem.pure_bound_holds)),
        ("epsilon_prime", "", sem.epsilon_prime),
        ("exceedance_mass", "", sem.exceedance_mass),
        ("delta_prime", "", sem.delta_prime),
        ("budget_verdict", "", int(sem.budget_verdict)),
        ("good_set_mass", "", good.good_set_mass),
        ("good_set_applicable", "", int(bool(good.good_set_applicable))),
        ("undefined_games", "", sem.undefined_games),
    ]
    if sem.exceedance_ratio is not None:
        rows.append(("exceedance_ratio", "", sem.exceedance_ratio))
    if good.good_set_verdict is not None:
        rows.append(("good_set_verdict", "", int(good.good_set_verdict)))
    extras = {"sd_witness": sem.witness, "dp_witness": pair}
    return CellResult(cell, rows, extras=extras)


# ------------------------------------------------------------------------ grids


def _constraint_variants(config: ExperimentConfig) -> list[tuple[float | None, float | None]]:
    variants = [(None, None)]
    variants += [(float(ell), None) for ell in config.ell]
    variants += [(None, float(t)) for t in config.t]
    return variants


def build_cells(study: str, config: ExperimentConfig) -> list[Cell]:
    cells = []
    if study in ("breach", "drop"):
        for sc in config.scenarios:
            for k in config.k:
                for ell, t in _constraint_variants(config):
                    for seed in config.seeds:
                        cells.append(Cell(study, seed, (("scenario", sc), ("k", int(k)), ("ell", ell), ("t", t))))
    elif study == "entropy":
        levels = config.synthetic_entropy or [None]
        for sc in config.scenarios:
            for k in config.k:
                for h in levels:
                    for seed in config.seeds:
                        cells.append(Cell(study, seed, (("scenario", sc), ("k", int(k)), ("entropy", h))))
    elif study == "multi":
        for sc in config.scenarios:
            for k in config.k:
                for seed in config.seeds:
                    cells.append(Cell(study, seed, (("scenario", sc), ("k", int(k)))))
    elif study == "dp":
        instances = []
        for kind in config.dp_mechanisms:
            for n in config.dp_n:
                if kind == "rr":
                    instances += [(kind, int(n), float(p)) for p in config.dp_p]
                elif kind == "geometric":
                    instances += [(kind, int(n), float(e)) for e in config.dp_epsilon]
                else:
                    instances.append((kind, int(n), None))
        for kind, n, param in instances:
            _, analytic = _dp_mechanism((kind, n, param), 0)
            eps_grid = [analytic] if analytic is not None else [float(e) for e in config.dp_check_epsilon]
            for eps in eps_grid:
                for delta in config.dp_delta:
                    for prior in config.dp_priors:
                        for row in config.dp_default_rows:
                            for seed in config.seeds:
                                cells.append(Cell(study, seed, (
                                    ("mechanism", kind), ("n", n), ("param", param), ("epsilon", eps),
                                    ("delta", float(delta)), ("prior", prior), ("default_row", int(row)))))
    else:
        raise ConfigError(f"unknown study {study!r}")
    return cells


RUNNERS: dict[str, Callable[[ExperimentConfig, Cell], CellResult]] = {
    "breach": run_breach_cell,
    "drop": run_drop_cell,
    "entropy": run_entropy_cell,
    "multi": run_multi_cell,
    "dp": run_dp_cell,
}


def _run_one(args) -> CellResult:
    config, cell = args
    try:
        return RUNNERS[cell.study](config, cell)
    except (CompAttackError, ValueError) as exc:
        return CellResult(cell, [], error=f"{type(exc).__name__}: {exc}")


def run_cells(config: ExperimentConfig, cells: Sequence[Cell], jobs: int = 1) -> list[CellResult]:
    work = [(config, c) for c in cells]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_one, work, chunksize=max(1, len(work) // (4 * jobs))))
    return [_run_one(w) for w in work]


# ---------------------------------------------------------------------- reports


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


@dataclass
class StudyResult:
    study: str
    config_hash: str
    results: list[CellResult]
    files: list[Path]

    @property
    def n_errors(self) -> int:
        return sum(r.error is not None for r in self.results)

    def table(self) -> list[dict]:
        """All per-seed rows as dicts (same content as the CSV, typed values)."""
        out = []
        for r in self.results:
            base = {"seed": r.cell.seed, **dict(r.cell.params)}
            for metric, parameter, value in r.rows:
                out.append({**base, "metric": metric, "parameter": parameter, "value": value})
        return out

    def mean(self, metric: str, parameter: str = "", **params) -> float:
        """Mean of a metric over seeds for the cells matching ``params``."""
        vals = [row["value"] for row in self.table()
                if row["metric"] == metric and row["parameter"] == parameter
                and all(row.get(k) == v for k, v in params.items())]
        if not vals:
            raise KeyError(f"no rows for {metric} {parameter} {params}")
        return float(np.mean(vals))


def write_study(study: str, config: ExperimentConfig, results: list[CellResult], out_dir) -> StudyResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config.config_hash()
    param_names: list[str] = []
    for r in results:
        for name, _ in r.cell.params:
            if name not in param_names:
                param_names.append(name)
    header = ["config_hash", "study", "seed", *param_names, "metric", "parameter", "value", "status", "error"]
    csv_path = out / f"{study}.csv"
    summary: dict[tuple, list] = {}
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in results:
            params = dict(r.cell.params)
            prefix = [chash, study, r.cell.seed, *(_fmt(params.get(p)) for p in param_names)]
            if r.error is not None:
                writer.writerow(prefix + ["", "", "", "error", r.error])
                continue
            for metric, parameter, value in r.rows:
                writer.writerow(prefix + [metric, parameter, _fmt(value), "ok", ""])
                if value is not None:
                    key = (tuple(_fmt(params.get(p)) for p in param_names), metric, parameter)
                    summary.setdefault(key, []).append(float(value))
        if len(config.seeds) > 1:
            for (pvals, metric, parameter), vals in summary.items():
                writer.writerow([chash, study, "mean", *pvals, metric, parameter, _fmt(float(np.mean(vals))), "ok", ""])
    files = [csv_path]
    manifest = {
        "study": study,
        "config_hash": chash,
        "config": config.to_dict(),
        "cells": len(results),
        "errors": sum(r.error is not None for r in results),
        "error_cells": [{"seed": r.cell.seed, **dict(r.cell.params), "error": r.error} for r in results if r.error],
        "files": [csv_path.name],
    }
    if study == "dp":
        witnesses = [{"seed": r.cell.seed, **dict(r.cell.params), **r.extras} for r in results if r.error is None]
        wpath = out / "dp_witnesses.json"
        wpath.write_text(json.dumps(witnesses, indent=2, default=list) + "\n", encoding="utf-8")
        files.append(wpath)
        manifest["files"].append(wpath.name)
        manifest["default_row_stable"] = _default_row_stability(results)
    mpath = out / f"{study}_manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    files.append(mpath)
    return StudyResult(study, chash, results, files)


def _default_row_stability(results: list[CellResult]) -> bool:
    verdicts: dict[tuple, set] = {}
    for r in results:
        if r.error:
            continue
        key = (r.cell.seed,) + tuple(v for k, v in r.cell.params if k != "default_row")
        rows = {m: v for m, _, v in r.rows}
        verdicts.setdefault(key, set()).add((rows["dp_pass"], rows["pure_bound_holds"], rows["pure_exceedance_mass"] == 0))
    return all(len(v) == 1 for v in verdicts.values())


def run_study(study: str, config: ExperimentConfig, out_dir=None, jobs: int | None = None) -> StudyResult:
    cells = build_cells(study, config)
    results = run_cells(config, cells, jobs if jobs is not None else config.jobs)
    return write_study(study, config, results, out_dir if out_dir is not None else config.out)


def run_breach_study(config: ExperimentConfig, out_dir=None, jobs=None) -> StudyResult:
    return run_study("breach", config, out_dir, jobs)


def run_anonymity_drop_study(config: ExperimentConfig, out_dir=None, jobs=None) -> StudyResult:
    return run_study("drop", config, out_dir, jobs)


def run_entropy_study(config: ExperimentConfig, out_dir=None, jobs=None) -> StudyResult:
    return run_study("entropy", config, out_dir, jobs)


def run_multi_release_study(config: ExperimentConfig, out_dir=None, jobs=None) -> StudyResult:
    return run_study("multi", config, out_dir, jobs)


def run_dp_suite(config: ExperimentConfig, out_dir=None, jobs=None) -> StudyResult:
    return run_study("dp", config, out_dir, jobs)


def with_overrides(config: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(config, **{k: v for k, v in changes.items() if v is not None})
