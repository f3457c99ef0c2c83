"""Command-line front end.

Runs JSON query scripts against CSV tables under a fixed privacy budget.
Three subcommands:

  run       build a session, evaluate every script query in order, write
            result tables, print the remaining budget
  budget    dry-run the accounting only: parse the script, sum the spends,
            and report what would remain; row data is never read
  validate  check CSV files against the schema, no privacy machinery

Exit codes are the contract: 0 success, 2 for config/parse/type errors
raised before any query runs, 3 when the budget runs out (results written
so far are kept), 4 for query compile errors.  Messages go to stderr,
results to stdout or to --out.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import (
    ConfigError,
    InsufficientBudget,
    MissingFile,
    NoisegateError,
    ScriptError,
    TypeParseError,
)
from .metrics import INF, Measure, PureDP, ZCDP
from .session import (
    AddMaxRows,
    AddRemoveId,
    Average,
    Count,
    DEFAULT_GRANULARITY,
    Filter,
    FlatMap,
    GroupBy,
    JoinPrivate,
    JoinPublic,
    KeySet,
    Map,
    PrivacyBudget,
    PrivacyUnit,
    Quantile,
    QueryExpr,
    Source,
    Sum,
    TruncateById,
    build_session,
    keyset_from_tuples,
    parse_budget_amount,
)
from .tabledata import (
    ColumnType,
    Schema,
    Table,
    TableDomain,
    Value,
    csv_text,
    load_csv,
    load_schema_file,
)
from .transformations import ExpansionBranch

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_COMPILE = 4

_NAME_RE = re.compile(r"^[A-Za-z0-9_\-]+$")


# ---------------------------------------------------------------------------
# Config.


@dataclass(frozen=True)
class RunConfig:
    schema_path: Path
    data_dir: Path | None
    script_path: Path
    unit: PrivacyUnit
    measure: Measure
    budget: Any
    seed: int
    out: Path | None
    format: str


def _parse_unit(text: str) -> PrivacyUnit:
    kind, _, rest = text.partition(":")
    if kind == "add-max-rows":
        try:
            k = int(rest)
        except ValueError:
            raise ConfigError(f"--unit add-max-rows needs an integer, got {rest!r}")
        if k < 1:
            raise ConfigError(f"--unit add-max-rows needs a positive integer, got {k}")
        return AddMaxRows(k)
    if kind == "add-remove-id":
        if not rest:
            raise ConfigError("--unit add-remove-id needs a column name")
        return AddRemoveId(rest)
    raise ConfigError(
        f"unknown unit {text!r}; use add-max-rows:<k> or add-remove-id:<column>"
    )


def _parse_measure(text: str) -> Measure:
    if text == "pure":
        return PureDP()
    if text == "zcdp":
        return ZCDP()
    raise ConfigError(f"unknown measure {text!r}; use pure or zcdp")


def _parse_seed(value: int) -> int:
    if not 0 <= value < 2**64:
        raise ConfigError(f"--seed must be a 64-bit unsigned integer, got {value}")
    return value


# ---------------------------------------------------------------------------
# Script parsing.  Everything here rejects bad input before a Session
# exists; no expression is compiled and no table is read.


@dataclass(frozen=True)
class ScriptQuery:
    name: str
    spend: Fraction
    expr: QueryExpr


def _require(obj: Mapping, key: str, where: str):
    if key not in obj:
        raise ScriptError(f"{where}: missing field {key!r}")
    return obj[key]


def _parse_schema_obj(obj, where: str) -> Schema:
    if not isinstance(obj, Mapping) or "columns" not in obj:
        raise ScriptError(f"{where}: expected a schema object with 'columns'")
    columns = []
    for entry in obj["columns"]:
        if not isinstance(entry, Mapping) or "name" not in entry or "type" not in entry:
            raise ScriptError(f"{where}: each column needs 'name' and 'type'")
        try:
            columns.append((entry["name"], ColumnType.from_name(entry["type"])))
        except NoisegateError as exc:
            raise ScriptError(f"{where}: {exc}") from exc
    try:
        return Schema(tuple(columns))
    except NoisegateError as exc:
        raise ScriptError(f"{where}: {exc}") from exc


def _coerce_value(value, ctype: ColumnType, where: str) -> Value:
    if ctype is ColumnType.INT64 and isinstance(value, int) and not isinstance(value, bool):
        return value
    if ctype is ColumnType.FLOAT64 and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if ctype is ColumnType.TEXT and isinstance(value, str):
        return value
    raise ScriptError(f"{where}: value {value!r} does not fit a {ctype.value} column")


def _parse_rows(raw, schema: Schema, where: str) -> list[tuple]:
    rows = []
    for i, row in enumerate(raw):
        if not isinstance(row, Sequence) or isinstance(row, str):
            raise ScriptError(f"{where}: row {i} is not an array")
        if len(row) != len(schema.columns):
            raise ScriptError(
                f"{where}: row {i} has {len(row)} values for "
                f"{len(schema.columns)} columns"
            )
        rows.append(
            tuple(
                _coerce_value(v, ctype, f"{where} row {i}")
                for v, (_, ctype) in zip(row, schema.columns)
            )
        )
    return rows


def _parse_inline_table(obj, where: str) -> Table:
    schema = _parse_schema_obj(obj, where)
    rows = _parse_rows(_require(obj, "rows", where), schema, where)
    try:
        return Table.of(schema, rows)
    except NoisegateError as exc:
        raise ScriptError(f"{where}: {exc}") from exc


def _parse_keyset(obj, where: str) -> KeySet:
    schema = _parse_schema_obj(obj, where)
    rows = _parse_rows(_require(obj, "rows", where), schema, where)
    try:
        return keyset_from_tuples(schema.columns, rows)
    except NoisegateError as exc:
        raise ScriptError(f"{where}: {exc}") from exc


def _parse_granularity(value, where: str) -> Fraction:
    try:
        grain = Fraction(str(value))
    except (ValueError, ZeroDivisionError) as exc:
        raise ScriptError(f"{where}: cannot parse granularity {value!r}") from exc
    return grain


def _parse_columns(obj, where: str) -> dict[str, str]:
    if not isinstance(obj, Mapping):
        raise ScriptError(f"{where}: 'columns' must map names to expressions")
    for name, expr in obj.items():
        if not isinstance(name, str) or not isinstance(expr, str):
            raise ScriptError(f"{where}: 'columns' must map names to expressions")
    return dict(obj)


def _parse_number(value, where: str, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScriptError(f"{where}: {field!r} must be a number")
    return float(value)


def _parse_int(value, where: str, field: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScriptError(f"{where}: {field!r} must be an integer")
    return value


def _parse_expr(obj, where: str) -> QueryExpr:
    if not isinstance(obj, Mapping) or "kind" not in obj:
        raise ScriptError(f"{where}: expected a query node object with 'kind'")
    kind = obj["kind"]
    sub = f"{where}/{kind}"

    def child(field: str = "child") -> QueryExpr:
        return _parse_expr(_require(obj, field, sub), sub)

    if kind == "Source":
        table = _require(obj, "table", sub)
        if not isinstance(table, str):
            raise ScriptError(f"{sub}: 'table' must be a string")
        return Source(table)
    if kind == "Filter":
        predicate = _require(obj, "predicate", sub)
        if not isinstance(predicate, str):
            raise ScriptError(f"{sub}: 'predicate' must be a string")
        return Filter(child(), predicate)
    if kind == "Map":
        columns = _parse_columns(_require(obj, "columns", sub), sub)
        schema = _parse_schema_obj(_require(obj, "schema", sub), sub)
        return Map(child(), columns, schema)
    if kind == "FlatMap":
        branches = []
        for i, branch in enumerate(_require(obj, "branches", sub)):
            if not isinstance(branch, Mapping):
                raise ScriptError(f"{sub}: branch {i} must be an object")
            when = branch.get("when")
            if when is not None and not isinstance(when, str):
                raise ScriptError(f"{sub}: branch {i} 'when' must be a string")
            columns = _parse_columns(
                _require(branch, "columns", f"{sub} branch {i}"), f"{sub} branch {i}"
            )
            branches.append(ExpansionBranch(columns=columns, when=when))
        schema = _parse_schema_obj(_require(obj, "schema", sub), sub)
        max_rows = _parse_int(_require(obj, "max_rows", sub), sub, "max_rows")
        return FlatMap(child(), tuple(branches), schema, max_rows)
    if kind == "JoinPublic":
        table = _parse_inline_table(_require(obj, "table", sub), sub)
        on = _require(obj, "on", sub)
        return JoinPublic(child(), table, tuple(on))
    if kind == "JoinPrivate":
        other = _parse_expr(_require(obj, "other", sub), sub)
        on = _require(obj, "on", sub)
        left_bound = _parse_int(_require(obj, "left_bound", sub), sub, "left_bound")
        right_bound = _parse_int(_require(obj, "right_bound", sub), sub, "right_bound")
        return JoinPrivate(child(), other, tuple(on), left_bound, right_bound)
    if kind == "TruncateById":
        bound = _parse_int(_require(obj, "bound", sub), sub, "bound")
        return TruncateById(child(), bound)
    if kind == "GroupBy":
        keys = _parse_keyset(_require(obj, "keys", sub), sub)
        return GroupBy(child(), keys)
    if kind == "Count":
        return Count(child())
    if kind in ("Sum", "Average"):
        column = _require(obj, "column", sub)
        low = _parse_number(_require(obj, "low", sub), sub, "low")
        high = _parse_number(_require(obj, "high", sub), sub, "high")
        grain = (
            _parse_granularity(obj["granularity"], sub)
            if "granularity" in obj
            else DEFAULT_GRANULARITY
        )
        node = Sum if kind == "Sum" else Average
        return node(child(), column, low, high, grain)
    if kind == "Quantile":
        column = _require(obj, "column", sub)
        q = _parse_number(_require(obj, "q", sub), sub, "q")
        low = _parse_number(_require(obj, "low", sub), sub, "low")
        high = _parse_number(_require(obj, "high", sub), sub, "high")
        bins = _parse_int(_require(obj, "bins", sub), sub, "bins")
        return Quantile(child(), column, q, low, high, bins)
    raise ScriptError(f"{where}: unknown query node kind {kind!r}")


def parse_script(doc) -> list[ScriptQuery]:
    """Parse a script document {"queries": [{name, spend, expr}, ...]}."""
    if not isinstance(doc, Mapping) or "queries" not in doc:
        raise ScriptError("a script is an object with a 'queries' array")
    queries = []
    seen = set()
    for i, entry in enumerate(doc["queries"]):
        where = f"queries[{i}]"
        if not isinstance(entry, Mapping):
            raise ScriptError(f"{where}: expected an object")
        name = _require(entry, "name", where)
        if not isinstance(name, str) or not _NAME_RE.match(name):
            raise ScriptError(
                f"{where}: 'name' must match [A-Za-z0-9_-]+, got {name!r}"
            )
        if name in seen:
            raise ScriptError(f"{where}: duplicate query name {name!r}")
        seen.add(name)
        spend_text = _require(entry, "spend", where)
        if not isinstance(spend_text, str):
            raise ScriptError(f"{where}: 'spend' must be a string, parsed exactly")
        spend = parse_budget_amount(spend_text)
        if spend == INF:
            raise ScriptError(f"{where}: spends must be finite")
        expr = _parse_expr(_require(entry, "expr", where), where)
        queries.append(ScriptQuery(name, spend, expr))
    return queries


def _load_script(path: Path) -> list[ScriptQuery]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MissingFile(f"cannot read script {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScriptError(f"{path} is not valid JSON: {exc}") from exc
    try:
        return parse_script(doc)
    except ScriptError as exc:
        raise ScriptError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Output.


def _format_amount(amount) -> str:
    return "inf" if amount == INF else str(Fraction(amount))


def _row_objects(table: Table) -> list[dict]:
    return [dict(zip(table.schema.names, row)) for row in table.rows]


class _Emitter:
    """Writes result tables to stdout or one file per query under --out."""

    def __init__(self, out: Path | None, fmt: str):
        self.out = out
        self.fmt = fmt
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)

    def emit(self, name: str, table: Table, remaining) -> None:
        if self.fmt == "json":
            payload = {
                "query": name,
                "rows": _row_objects(table),
                "remaining_budget": _format_amount(remaining),
            }
            text = json.dumps(payload) + "\n"
        else:
            text = csv_text(table)
        if self.out is None:
            if self.fmt == "csv":
                sys.stdout.write(f"query: {name}\n{text}\n")
            else:
                sys.stdout.write(text)
        else:
            suffix = "json" if self.fmt == "json" else "csv"
            (self.out / f"{name}.{suffix}").write_text(text, encoding="utf-8")

    def finish(self, remaining) -> None:
        amount = _format_amount(remaining)
        if self.fmt == "json" and self.out is None:
            sys.stdout.write(json.dumps({"remaining_budget": amount}) + "\n")
        else:
            sys.stdout.write(f"remaining_budget: {amount}\n")


def _err(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


# ---------------------------------------------------------------------------
# Commands.


def _load_tables(
    domains: Mapping[str, TableDomain], data_dir: Path
) -> dict[str, Table]:
    tables = {}
    for name in sorted(domains):
        tables[name] = load_csv(data_dir / f"{name}.csv", domains[name].schema)
    return tables


def cmd_run(cfg: RunConfig) -> int:
    try:
        domains = load_schema_file(cfg.schema_path)
        script = _load_script(cfg.script_path)
        if cfg.data_dir is None:
            raise ConfigError("run needs --data")
        tables = _load_tables(domains, cfg.data_dir)
        session = build_session(
            tables, cfg.unit, PrivacyBudget(cfg.measure, cfg.budget), cfg.seed
        )
    except NoisegateError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    emitter = _Emitter(cfg.out, cfg.format)
    for item in script:
        try:
            result = session.evaluate(item.expr, PrivacyBudget(cfg.measure, item.spend))
        except InsufficientBudget as exc:
            _err(f"query {item.name!r}: {exc}")
            emitter.finish(session.remaining_budget().amount)
            return EXIT_BUDGET
        except NoisegateError as exc:
            _err(f"query {item.name!r}: {exc}")
            return EXIT_COMPILE
        emitter.emit(item.name, result, session.remaining_budget().amount)
    emitter.finish(session.remaining_budget().amount)
    return EXIT_OK


def _check_headers(domains: Mapping[str, TableDomain], data_dir: Path) -> None:
    # Budget dry runs may confirm table shape but never ingest rows.
    for name in sorted(domains):
        path = data_dir / f"{name}.csv"
        try:
            with open(path, newline="", encoding="utf-8") as handle:
                header = next(csv.reader(handle), None)
        except OSError as exc:
            raise MissingFile(f"cannot read {path}: {exc}") from exc
        expected = list(domains[name].schema.names)
        if header != expected:
            raise ConfigError(
                f"{path}: header {header!r} does not match schema columns {expected!r}"
            )


def cmd_budget(cfg: RunConfig) -> int:
    try:
        domains = load_schema_file(cfg.schema_path)
        script = _load_script(cfg.script_path)
        if cfg.data_dir is not None:
            _check_headers(domains, cfg.data_dir)
    except NoisegateError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    total = cfg.budget
    spent = sum((item.spend for item in script), Fraction(0))
    if total != INF and spent > total:
        sys.stdout.write(f"deficit: {spent - total}\n")
        return EXIT_BUDGET
    remaining = INF if total == INF else total - spent
    sys.stdout.write(f"remaining_budget: {_format_amount(remaining)}\n")
    return EXIT_OK


def cmd_validate(schema_path: Path, data_dir: Path) -> int:
    try:
        domains = load_schema_file(schema_path)
    except NoisegateError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    failures = 0
    for name in sorted(domains):
        path = data_dir / f"{name}.csv"
        try:
            table = load_csv(path, domains[name].schema)
        except TypeParseError as exc:
            _err(f"{path}:{exc.line}:{exc.column}: {exc}")
            failures += 1
        except NoisegateError as exc:
            _err(f"{path}: {exc}")
            failures += 1
        else:
            sys.stdout.write(f"ok: {name} ({len(table)} rows)\n")
    return EXIT_CONFIG if failures else EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing.


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--schema", required=True, help="schema JSON file")
    parser.add_argument("--data", help="directory holding <table>.csv files")
    parser.add_argument("--script", required=True, help="query script JSON file")
    parser.add_argument(
        "--unit", required=True, help="add-max-rows:<k> or add-remove-id:<column>"
    )
    parser.add_argument("--measure", required=True, help="pure or zcdp")
    parser.add_argument(
        "--budget", required=True, help="exact amount: decimal, a/b, or inf"
    )
    parser.add_argument("--seed", required=True, type=int, help="64-bit unsigned seed")
    parser.add_argument("--out", help="output directory (default: stdout)")
    parser.add_argument(
        "--format", choices=("csv", "json"), default="json", help="output format"
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisegate",
        description="Run differentially private query scripts over CSV tables.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="evaluate a query script")
    _add_run_flags(run_p)
    budget_p = sub.add_parser("budget", help="dry-run the budget accounting")
    _add_run_flags(budget_p)
    val_p = sub.add_parser("validate", help="check CSV files against the schema")
    val_p.add_argument("--schema", required=True, help="schema JSON file")
    val_p.add_argument("--data", required=True, help="directory holding CSV files")
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        schema_path=Path(args.schema).resolve(),
        data_dir=Path(args.data).resolve() if args.data else None,
        script_path=Path(args.script).resolve(),
        unit=_parse_unit(args.unit),
        measure=_parse_measure(args.measure),
        budget=parse_budget_amount(args.budget),
        seed=_parse_seed(args.seed),
        out=Path(args.out).resolve() if args.out else None,
        format=args.format,
    )


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else EXIT_CONFIG
    if args.command == "validate":
        return cmd_validate(Path(args.schema).resolve(), Path(args.data).resolve())
    try:
        cfg = _config_from_args(args)
    except NoisegateError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if args.command == "run":
        return cmd_run(cfg)
    return cmd_budget(cfg)


if __name__ == "__main__":
    sys.exit(main())
