"""Command-line entry point.

Exit codes: 0 success, 2 when some grid cells failed, 1 on fatal errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from compattack.anonymizer import SCHEMES, Release, anonymize, release_summary
from compattack.attack import intersection_attack
from compattack.dataset import ID_COLUMN, load_csv, load_schema
from compattack.errors import CompAttackError, ConfigError, DomainError, ParseError, SchemaError
from compattack.experiments import STUDIES, ExperimentConfig, run_study, with_overrides

log = logging.getLogger("compattack")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat TOML config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes for grid cells")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compattack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "breach": "perfect/partial breach percentages over a k grid",
        "drop": "class sizes and effective anonymity before/after the attack",
        "entropy": "anonymity drop vs sensitive-attribute entropy",
        "multi": "attack severity vs number of releases",
        "dp": "exact differential-privacy / semantic-privacy verification suite",
    }
    for study in STUDIES:
        _common(sub.add_parser(study, help=helps[study]))

    p = sub.add_parser("anonymize", help="anonymize one CSV table")
    _common(p)
    p.add_argument("--input", type=Path, help="CSV data file (config key: dataset)")
    p.add_argument("--schema", type=Path, help="schema file (config key: schema)")
    p.add_argument("--scheme", choices=SCHEMES, default="mondrian")
    p.add_argument("-k", type=int, help="minimum class size (default: first k of the config, else 5)")
    p.add_argument("--ell", type=float)
    p.add_argument("--t", type=float)

    p = sub.add_parser("attack", help="intersection attack over release files")
    _common(p)
    p.add_argument("--release", action="append", type=Path, required=True,
                   help="release JSON, or anonymized CSV (needs --schema); repeat for each release")
    p.add_argument("--population", type=Path, required=True, help="CSV with id and quasi-identifier columns")
    p.add_argument("--schema", type=Path, help="schema file, needed for CSV releases")
    p.add_argument("--scheme", choices=SCHEMES, default="mondrian", help="scheme of CSV releases")
    return parser


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return with_overrides(config, seed=args.seed, out=str(args.out) if args.out else None, jobs=args.jobs)


def load_population(path, qi_schema) -> list[tuple[int, tuple[int, ...]]]:
    """Read (id, coded QI tuple) pairs; extra columns such as the sensitive value are ignored."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [a.name for a in qi_schema if a.name not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"population file lacks columns {missing}")
        out = []
        for row_no, row in enumerate(reader):
            try:
                qi = tuple(a.encode(row[a.name]) for a in qi_schema)
            except DomainError as exc:
                raise DomainError(exc.attribute, exc.value, f"line {reader.line_num}: {exc}") from None
            raw_id = row.get(ID_COLUMN)
            try:
                out.append((int(raw_id) if raw_id not in (None, "") else row_no, qi))
            except ValueError:
                raise ParseError(f"non-integer id {raw_id!r}", line=reader.line_num) from None
    return out


def cmd_anonymize(args) -> int:
    config = _load_config(args)
    data = args.input or (Path(config.dataset) if config.dataset else None)
    schema_path = args.schema or (Path(config.schema) if config.schema else None)
    if data is None or schema_path is None:
        raise ConfigError("anonymize needs --input and --schema (or dataset/schema in the config)")
    k = args.k if args.k is not None else int(config.k[0])
    table = load_csv(data, load_schema(schema_path))
    release = anonymize(table, args.scheme, k, args.ell, args.t)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "release.json").write_text(release.to_json() + "\n", encoding="utf-8")
    release.to_csv(out / "release.csv")
    print(json.dumps(release_summary(release), sort_keys=True))
    return 0


def _load_release(path: Path, schema, scheme: str) -> Release:
    if path.suffix.lower() == ".json":
        return Release.from_json(path.read_text(encoding="utf-8"))
    if schema is None:
        raise ConfigError(f"{path}: CSV releases need --schema")
    return Release.from_csv(path, schema, scheme)


def cmd_attack(args) -> int:
    config = _load_config(args)
    schema_path = args.schema or (Path(config.schema) if config.schema else None)
    schema = load_schema(schema_path) if schema_path else None
    releases = [_load_release(p, schema, args.scheme) for p in args.release]
    qi_schema = releases[0].qi_schema
    population = load_population(args.population, qi_schema)
    report = intersection_attack(releases, population, config.confidence)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "attack.json").write_text(report.to_json() + "\n", encoding="utf-8")
    report.write_summary_csv(out / "attack_summary.csv")
    print(json.dumps(report.aggregates(), sort_keys=True, default=str))
    return 0


def cmd_study(args) -> int:
    config = _load_config(args)
    result = run_study(args.command, config)
    for f in result.files:
        print(f)
    if result.n_errors:
        log.warning("%d of %d cells failed", result.n_errors, len(result.results))
        return 2
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "anonymize":
            return cmd_anonymize(args)
        if args.command == "attack":
            return cmd_attack(args)
        return cmd_study(args)
    except (CompAttackError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
