import json
from pathlib import Path

import pytest

from noisegate.errors import (
    DuplicateColumn,
    HeaderMismatch,
    MissingFile,
    MissingIdColumn,
    SchemaMismatch,
    TypeParseError,
    UnknownColumn,
)
from noisegate.tabledata import (
    ColumnType,
    Schema,
    Table,
    TableDomain,
    TableListDomain,
    TableTupleDomain,
    canonicalize,
    csv_text,
    domain_from_json,
    domain_to_json,
    load_csv,
    load_schema_file,
    split_by_key,
    table_equal,
    write_csv,
)

PEOPLE = Schema.of(
    ("name", ColumnType.TEXT), ("age", ColumnType.INT64), ("score", ColumnType.FLOAT64)
)


def test_schema_basics():
    assert PEOPLE.names == ("name", "age", "score")
    assert PEOPLE.type_of("age") is ColumnType.INT64
    assert PEOPLE.index_of("score") == 2
    assert PEOPLE.has_column("name")
    assert not PEOPLE.has_column("missing")
    with pytest.raises(UnknownColumn):
        PEOPLE.type_of("missing")


def test_schema_rejects_duplicates_and_empty():
    with pytest.raises(DuplicateColumn):
        Schema.of(("a", ColumnType.INT64), ("a", ColumnType.TEXT))
    with pytest.raises(SchemaMismatch):
        Schema(())
    with pytest.raises(SchemaMismatch):
        Schema.of(("", ColumnType.INT64))


def test_table_type_enforcement():
    t = Table.of(PEOPLE, [("ann", 41, 1.5)])
    assert len(t) == 1
    with pytest.raises(SchemaMismatch):
        Table.of(PEOPLE, [("ann", 41)])  # wrong width
    with pytest.raises(SchemaMismatch):
        Table.of(PEOPLE, [("ann", "41", 1.5)])  # text in int column
    with pytest.raises(SchemaMismatch):
        Table.of(PEOPLE, [("ann", True, 1.5)])  # bool is not int64
    with pytest.raises(SchemaMismatch):
        Table.of(PEOPLE, [("ann", 41, float("nan"))])
    with pytest.raises(SchemaMismatch):
        Table.of(PEOPLE, [("ann", 41, float("inf"))])
    with pytest.raises(SchemaMismatch):
        Table.of(PEOPLE, [("ann", 2**63, 1.5)])  # out of int64 range
    with pytest.raises(SchemaMismatch):
        Table.of(PEOPLE, [("ann", 41, 2)])  # int is not float64


def test_table_equality_is_multiset_equality():
    a = Table.of(PEOPLE, [("a", 1, 0.0), ("b", 2, 0.0), ("a", 1, 0.0)])
    b = Table.of(PEOPLE, [("b", 2, 0.0), ("a", 1, 0.0), ("a", 1, 0.0)])
    c = Table.of(PEOPLE, [("b", 2, 0.0), ("a", 1, 0.0)])
    assert table_equal(a, b)
    assert not table_equal(a, c)
    other = Schema.of(("name", ColumnType.TEXT))
    with pytest.raises(SchemaMismatch):
        table_equal(a, Table.of(other, [("a",)]))


def test_canonicalize_orders_rows_deterministically():
    a = Table.of(PEOPLE, [("b", 2, 1.0), ("a", 1, 0.5), ("a", 1, 0.25)])
    c = canonicalize(a)
    assert c.rows == (("a", 1, 0.25), ("a", 1, 0.5), ("b", 2, 1.0))
    assert table_equal(a, c)
    # Text sorts by code point, so the order is locale-independent.
    t = Table.of(Schema.of(("s", ColumnType.TEXT)), [("Z",), ("a",), ("B",)])
    assert canonicalize(t).rows == (("B",), ("Z",), ("a",))


def test_split_by_key():
    t = Table.of(PEOPLE, [("a", 1, 0.0), ("b", 2, 0.0), ("a", 3, 0.0)])
    parts = split_by_key(t, ["name"])
    assert set(parts) == {("a",), ("b",)}
    assert len(parts[("a",)]) == 2
    assert len(parts[("b",)]) == 1
    with pytest.raises(UnknownColumn):
        split_by_key(t, ["nope"])


def test_domains():
    d = TableDomain(PEOPLE, "name")
    assert d.id_column == "name"
    with pytest.raises(MissingIdColumn):
        TableDomain(PEOPLE, "missing")
    with pytest.raises(MissingIdColumn):
        TableDomain(PEOPLE, "score")  # float ids are not allowed
    tup = TableTupleDomain((d, TableDomain(PEOPLE, None)))
    assert len(tup.components) == 2
    lst = TableListDomain(TableDomain(PEOPLE, None), 3)
    assert lst.length == 3


def test_csv_round_trip(tmp_path: Path):
    t = Table.of(
        PEOPLE,
        [("ann, bob", 41, 0.1), ('quote "x"', -5, 2.5e-12), ("plain", 0, 1e300)],
    )
    path = tmp_path / "people.csv"
    write_csv(t, path)
    back = load_csv(path, PEOPLE)
    assert back.rows == t.rows  # exact, including float repr round-trip


def test_load_csv_errors(tmp_path: Path):
    path = tmp_path / "t.csv"
    path.write_text("name,age,score\nann,41,1.5\nbob,abc,2.0\n")
    with pytest.raises(TypeParseError) as exc:
        load_csv(path, PEOPLE)
    assert exc.value.line == 3
    assert exc.value.column == "age"

    path.write_text("name,years,score\n")
    with pytest.raises(HeaderMismatch):
        load_csv(path, PEOPLE)

    with pytest.raises(MissingFile):
        load_csv(tmp_path / "absent.csv", PEOPLE)


def test_strict_cell_parsing(tmp_path: Path):
    path = tmp_path / "t.csv"
    schema = Schema.of(("n", ColumnType.INT64), ("x", ColumnType.FLOAT64))
    path.write_text("n,x\n007,1.5\n-3,2e3\n")
    t = load_csv(path, schema)
    assert t.rows == ((7, 1.5), (-3, 2000.0))
    for bad in ["1_000,1.0", "1.0,1.0", ",1.0", "1,nan", "1,inf", "1,1_0.0", "1,"]:
        path.write_text(f"n,x\n{bad}\n")
        with pytest.raises(TypeParseError):
            load_csv(path, schema)
    path.write_text(f"n,x\n{2**63},1.0\n")
    with pytest.raises(TypeParseError):
        load_csv(path, schema)


def test_csv_text_quotes_and_terminates():
    t = Table.of(Schema.of(("s", ColumnType.TEXT)), [("a,b",)])
    assert csv_text(t) == 's\n"a,b"\n'


def test_domain_json_round_trip():
    d = TableDomain(PEOPLE, "name")
    obj = domain_to_json(d)
    assert domain_from_json(obj) == d
    assert json.loads(json.dumps(obj)) == obj
    bare = domain_to_json(TableDomain(PEOPLE, None))
    assert "id_column" not in bare or bare["id_column"] is None


def test_load_schema_file(tmp_path: Path):
    path = tmp_path / "schema.json"
    path.write_text(
        json.dumps(
            {
                "tables": {
                    "people": {
                        "columns": [
                            {"name": "name", "type": "text"},
                            {"name": "age", "type": "int64"},
                            {"name": "score", "type": "float64"},
                        ]
                    }
                }
            }
        )
    )
    domains = load_schema_file(path)
    assert domains["people"].schema == PEOPLE
