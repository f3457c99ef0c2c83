"""Typed in-memory tables with multiset semantics.

A Table is a schema plus a multiset of rows.  Row order is an artifact of
construction and is never observable through the public operations here:
equality is multiset equality, and canonicalize produces the one fixed
ordering used wherever determinism matters (truncation, serialization).

Values are plain Python ints, floats, and strings.  Floats must be finite
and no cell may be empty; ingestion rejects anything else up front so the
rest of the package never sees a null.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence, Union

from .errors import (
    DomainMismatch,
    DuplicateColumn,
    HeaderMismatch,
    MissingFile,
    MissingIdColumn,
    SchemaMismatch,
    TypeParseError,
    UnknownColumn,
)

Value = Union[int, float, str]
Row = tuple[Value, ...]

_INT64_MIN = -(2**63)
_INT64_MAX = 2**63 - 1

# Locale-independent numeric literals: no underscores, no whitespace, no
# textual infinities.  Anything fancier than this is a parse error.
_INT_RE = re.compile(r"^-?[0-9]+$")
_FLOAT_RE = re.compile(r"^-?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?$")


class ColumnType(enum.Enum):
    INT64 = "int64"
    FLOAT64 = "float64"
    TEXT = "text"

    @classmethod
    def from_name(cls, name: str) -> "ColumnType":
        for member in cls:
            if member.value == name:
                return member
        raise TypeParseError(f"unknown column type {name!r}")


@dataclass(frozen=True)
class Schema:
    """An ordered list of (name, type) columns with unique, non-empty names."""

    columns: tuple[tuple[str, ColumnType], ...]

    def __post_init__(self) -> None:
        if not self.columns:
            raise SchemaMismatch("a schema needs at least one column")
        names = [name for name, _ in self.columns]
        if any(not name for name in names):
            raise SchemaMismatch("column names must be non-empty")
        if len(set(names)) != len(names):
            raise DuplicateColumn(f"duplicate column names in {names}")

    @classmethod
    def of(cls, *columns: tuple[str, ColumnType]) -> "Schema":
        return cls(tuple(columns))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.columns)

    def type_of(self, name: str) -> ColumnType:
        for col, ctype in self.columns:
            if col == name:
                return ctype
        raise UnknownColumn(f"no column named {name!r}; have {list(self.names)}")

    def index_of(self, name: str) -> int:
        for i, (col, _) in enumerate(self.columns):
            if col == name:
                return i
        raise UnknownColumn(f"no column named {name!r}; have {list(self.names)}")

    def has_column(self, name: str) -> bool:
        return any(col == name for col, _ in self.columns)


def _check_value(value: Value, ctype: ColumnType) -> None:
    if ctype is ColumnType.INT64:
        # bool is an int subclass; reject it explicitly.
        if not isinstance(value, int) or isinstance(value, bool):
            raise SchemaMismatch(f"expected int64, got {value!r}")
        if not _INT64_MIN <= value <= _INT64_MAX:
            raise SchemaMismatch(f"{value} is outside the int64 range")
    elif ctype is ColumnType.FLOAT64:
        if not isinstance(value, float):
            raise SchemaMismatch(f"expected float64, got {value!r}")
        if not math.isfinite(value):
            raise SchemaMismatch(f"float values must be finite, got {value!r}")
    else:
        if not isinstance(value, str):
            raise SchemaMismatch(f"expected text, got {value!r}")
        if value == "":
            raise SchemaMismatch("text values must be non-empty")


@dataclass(frozen=True, eq=False)
class Table:
    """A schema and a multiset of rows.

    Tables compare by identity; use table_equal for multiset equality so
    that incidental row order never leaks into program behavior.
    """

    schema: Schema
    rows: tuple[Row, ...]

    def __post_init__(self) -> None:
        width = len(self.schema.columns)
        for row in self.rows:
            if len(row) != width:
                raise SchemaMismatch(
                    f"row {row!r} has {len(row)} values, schema has {width} columns"
                )
            for value, (_, ctype) in zip(row, self.schema.columns):
                _check_value(value, ctype)

    @classmethod
    def of(cls, schema: Schema, rows: Iterable[Sequence[Value]]) -> "Table":
        return cls(schema, tuple(tuple(row) for row in rows))

    @classmethod
    def empty(cls, schema: Schema) -> "Table":
        return cls(schema, ())

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[Row]:
        return iter(self.rows)

    def column(self, name: str) -> tuple[Value, ...]:
        i = self.schema.index_of(name)
        return tuple(row[i] for row in self.rows)

    def multiset(self) -> Counter:
        return Counter(self.rows)


def _sort_key(schema: Schema) -> "callable":
    # Lexicographic by column position; text compares by UTF-8 bytes, which
    # agrees with code-point order and is stable across platforms.
    text_positions = frozenset(
        i for i, (_, ctype) in enumerate(schema.columns) if ctype is ColumnType.TEXT
    )

    def key(row: Row):
        return tuple(
            v.encode("utf-8") if i in text_positions else v for i, v in enumerate(row)
        )

    return key


def canonicalize(table: Table) -> Table:
    """Return the table with rows in the fixed total order.

    The order is lexicographic by column position, numeric columns by value
    and text columns by encoded byte order.  This is the order truncation
    operators and serialization rely on.
    """
    return Table(table.schema, tuple(sorted(table.rows, key=_sort_key(table.schema))))


def table_equal(a: Table, b: Table) -> bool:
    """Multiset equality of rows; schemas must match exactly."""
    if a.schema != b.schema:
        raise SchemaMismatch("cannot compare tables with different schemas")
    return a.multiset() == b.multiset()


def split_by_key(table: Table, key_columns: Sequence[str]) -> dict[tuple, Table]:
    """Partition rows by the tuple of values in key_columns.

    Every row lands in exactly one part and the parts' schemas equal the
    input schema.
    """
    indices = [table.schema.index_of(name) for name in key_columns]
    groups: dict[tuple, list[Row]] = {}
    for row in table.rows:
        key = tuple(row[i] for i in indices)
        groups.setdefault(key, []).append(row)
    return {key: Table(table.schema, tuple(rows)) for key, rows in groups.items()}


# ---------------------------------------------------------------------------
# Domains.


@dataclass(frozen=True)
class TableDomain:
    """All tables with a given schema, optionally carrying an ID column.

    The ID column, when set, names the column holding a contribution
    identifier (for example a user id).  It must exist and must be an
    integer or text column.
    """

    schema: Schema
    id_column: str | None = None

    def __post_init__(self) -> None:
        if self.id_column is not None:
            if not self.schema.has_column(self.id_column):
                raise MissingIdColumn(
                    f"id column {self.id_column!r} is not in the schema"
                )
            if self.schema.type_of(self.id_column) is ColumnType.FLOAT64:
                raise MissingIdColumn("id columns must be int64 or text")

    def contains(self, value: object) -> bool:
        return (
            isinstance(value, Table)
            and value.schema == self.schema
        )


@dataclass(frozen=True)
class TableTupleDomain:
    """Fixed-length tuples of tables, one component domain per position."""

    components: tuple[TableDomain, ...]

    def contains(self, value: object) -> bool:
        return (
            isinstance(value, tuple)
            and len(value) == len(self.components)
            and all(d.contains(v) for d, v in zip(self.components, value))
        )


@dataclass(frozen=True)
class TableListDomain:
    """Fixed-length lists of tables sharing one element domain."""

    element: TableDomain
    length: int

    def contains(self, value: object) -> bool:
        return (
            isinstance(value, (list, tuple))
            and len(value) == self.length
            and all(self.element.contains(v) for v in value)
        )


Domain = Union[TableDomain, TableTupleDomain, TableListDomain]


# ---------------------------------------------------------------------------
# CSV and schema-file ingestion.


def _parse_cell(text: str, ctype: ColumnType, line: int, column: str) -> Value:
    if text == "":
        raise TypeParseError(
            f"line {line}, column {column!r}: empty cells are not allowed",
            line=line,
            column=column,
        )
    if ctype is ColumnType.INT64:
        if not _INT_RE.match(text):
            raise TypeParseError(
                f"line {line}, column {column!r}: {text!r} is not an int64",
                line=line,
                column=column,
            )
        value = int(text)
        if not _INT64_MIN <= value <= _INT64_MAX:
            raise TypeParseError(
                f"line {line}, column {column!r}: {text!r} overflows int64",
                line=line,
                column=column,
            )
        return value
    if ctype is ColumnType.FLOAT64:
        if not _FLOAT_RE.match(text):
            raise TypeParseError(
                f"line {line}, column {column!r}: {text!r} is not a float64",
                line=line,
                column=column,
            )
        value = float(text)
        if not math.isfinite(value):
            raise TypeParseError(
                f"line {line}, column {column!r}: {text!r} overflows float64",
                line=line,
                column=column,
            )
        return value
    return text


def load_csv(path: str | Path, schema: Schema) -> Table:
    """Load a CSV file whose header matches the schema, in order.

    The whole load aborts on the first malformed cell; there is no partial
    ingestion and no null handling.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise HeaderMismatch(f"{path}: file is empty, expected a header row")
        if tuple(header) != schema.names:
            raise HeaderMismatch(
                f"{path}: header {header!r} does not match schema {list(schema.names)}"
            )
        rows: list[Row] = []
        for line_number, record in enumerate(reader, start=2):
            if len(record) != len(schema.columns):
                raise TypeParseError(
                    f"{path}: line {line_number}: expected "
                    f"{len(schema.columns)} cells, got {len(record)}",
                    line=line_number,
                )
            row = tuple(
                _parse_cell(cell, ctype, line_number, name)
                for cell, (name, ctype) in zip(record, schema.columns)
            )
            rows.append(row)
    return Table(schema, tuple(rows))


def _format_cell(value: Value) -> str:
    if isinstance(value, float):
        # repr round-trips doubles exactly, so load(write(t)) == t.
        return repr(value)
    return str(value)


def write_csv(table: Table, path: str | Path) -> None:
    """Serialize a table; loading the result under the same schema gives an
    equal table."""
    Path(path).write_text(csv_text(table), encoding="utf-8", newline="")


def csv_text(table: Table) -> str:
    """The CSV serialization of a table as a string.

    Unix line endings on every platform, so byte-identical runs stay
    byte-identical wherever they execute.
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(table.schema.names)
    for row in table.rows:
        writer.writerow([_format_cell(v) for v in row])
    return buffer.getvalue()


def domain_from_json(obj: Mapping) -> TableDomain:
    """Build a TableDomain from a schema object.

    The object looks like {"columns": [{"name": ..., "type": ...}, ...]}
    with an optional "id_column" entry.
    """
    if not isinstance(obj, Mapping) or "columns" not in obj:
        raise TypeParseError("schema object needs a 'columns' list")
    columns = []
    for entry in obj["columns"]:
        if not isinstance(entry, Mapping) or "name" not in entry or "type" not in entry:
            raise TypeParseError(f"bad column entry {entry!r}")
        columns.append((str(entry["name"]), ColumnType.from_name(str(entry["type"]))))
    id_column = obj.get("id_column")
    if id_column is not None:
        id_column = str(id_column)
    return TableDomain(Schema(tuple(columns)), id_column)


def domain_to_json(domain: TableDomain) -> dict:
    obj: dict = {
        "columns": [
            {"name": name, "type": ctype.value} for name, ctype in domain.schema.columns
        ]
    }
    if domain.id_column is not None:
        obj["id_column"] = domain.id_column
    return obj


def load_schema_file(path: str | Path) -> dict[str, TableDomain]:
    """Load a schema file mapping table names to their domains.

    The file is a JSON object {"tables": {name: schema-object, ...}} where
    each schema object follows the domain_from_json format.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"no such file: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TypeParseError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, Mapping) or "tables" not in raw:
        raise TypeParseError(f"{path}: expected an object with a 'tables' entry")
    tables = raw["tables"]
    if not isinstance(tables, Mapping) or not tables:
        raise TypeParseError(f"{path}: 'tables' must be a non-empty object")
    return {str(name): domain_from_json(obj) for name, obj in tables.items()}
