"""Budget-mediated query sessions.

A Session owns private tables, a privacy unit saying what one unit of
protected change is, and a budget in a chosen measure.  Analysts describe
queries as small expression trees (usually through the fluent builder),
and evaluate compiles each tree into a stability-tracked pipeline plus a
calibrated measurement, charges the declared spend, and returns a result
table.  Raw tables are reachable only through evaluate.

Calibration is exact: the compiler solves the mechanism parameter so the
end-to-end privacy function at the session's unit distance equals the
requested spend in rational arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Iterable, Mapping, Sequence, Union

from .errors import (
    EmptyTables,
    ExpressionSyntaxError,
    ExpressionTypeError,
    DuplicateColumn,
    IdColumnDropped,
    KeyTypeMismatch,
    MeasureMismatch,
    MissingIdColumn,
    MissingKeyColumn,
    NonLinearPath,
    NonPositiveBound,
    NonPositiveEpsilon,
    SchemaMismatch,
    TypeCheckError,
    TypeMismatch,
    UnboundedSensitivity,
    UnknownColumn,
)
from .measurements import (
    Measurement,
    PureDpNoise,
    ZcdpNoise,
    compose_per_group,
    make_average,
    make_count,
    make_queryable,
    make_quantile,
    make_sum,
)
from .metrics import (
    INF,
    AddRemoveIds,
    Measure,
    PureDP,
    SymmetricDifference,
    TableTuple,
    ZCDP,
    compose_maps,
    linear_map,
)
from .rng import RngStream
from .tabledata import (
    ColumnType,
    Schema,
    Table,
    TableDomain,
    TableTupleDomain,
    Value,
)
from . import transformations as tf

DEFAULT_GRANULARITY = Fraction(1, 100)


# ---------------------------------------------------------------------------
# Budgets and privacy units.


def parse_budget_amount(text: str):
    """Parse an exact budget amount: 'inf', 'a/b', or a decimal string."""
    text = text.strip()
    if text.lower() in ("inf", "infinity"):
        return INF
    try:
        amount = Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise TypeMismatch(f"cannot parse budget amount {text!r}") from exc
    if amount < 0:
        raise TypeMismatch(f"budget amounts are non-negative, got {text!r}")
    return amount


def _exact_amount(amount):
    if amount == INF:
        return INF
    if isinstance(amount, float):
        raise TypeMismatch(
            "budget amounts must be exact: pass an int, a Fraction, or a "
            "decimal string, not a float"
        )
    if isinstance(amount, str):
        return parse_budget_amount(amount)
    amount = Fraction(amount)
    if amount < 0:
        raise TypeMismatch(f"budget amounts are non-negative, got {amount}")
    return amount


@dataclass(frozen=True)
class PrivacyBudget:
    """An exact amount of privacy loss under a measure.

    Amounts are rationals (math.inf is allowed for a bottomless session).
    Finite floats are rejected so accounting never inherits binary
    rounding; write Fraction('0.4') or just '0.4'.
    """

    measure: Measure
    amount: Any

    def __post_init__(self) -> None:
        object.__setattr__(self, "amount", _exact_amount(self.amount))

    @classmethod
    def pure(cls, amount) -> "PrivacyBudget":
        return cls(PureDP(), amount)

    @classmethod
    def zcdp(cls, amount) -> "PrivacyBudget":
        return cls(ZCDP(), amount)


@dataclass(frozen=True)
class AddMaxRows:
    """Protect any change of at most max_rows rows, across all tables."""

    max_rows: int

    def __post_init__(self) -> None:
        if not isinstance(self.max_rows, int) or self.max_rows < 1:
            raise NonPositiveBound(
                f"max_rows must be a positive int, got {self.max_rows!r}"
            )


@dataclass(frozen=True)
class AddRemoveId:
    """Protect the presence of one identifier, with all its rows."""

    id_column: str


PrivacyUnit = Union[AddMaxRows, AddRemoveId]


# ---------------------------------------------------------------------------
# Key sets.


@dataclass(frozen=True)
class KeySet:
    """The explicit group-by keys a grouped query will report, exactly."""

    schema: Schema
    rows: tuple[tuple, ...]


def keyset_from_tuples(
    columns: Sequence[tuple[str, ColumnType]], tuples: Iterable[Sequence[Value]]
) -> KeySet:
    """Build a KeySet from typed columns and key tuples.

    Tuples must match the declared types exactly; duplicates collapse to
    their first occurrence.  An empty keyset is legal and makes any
    grouped query return an empty table.
    """
    schema = Schema(tuple(columns))
    seen = set()
    rows: list[tuple] = []
    for raw in tuples:
        row = tuple(raw)
        if len(row) != len(schema.columns):
            raise TypeMismatch(
                f"key tuple {row!r} has {len(row)} values for "
                f"{len(schema.columns)} columns"
            )
        for value, (name, ctype) in zip(row, schema.columns):
            ok = (
                (ctype is ColumnType.INT64 and isinstance(value, int) and not isinstance(value, bool))
                or (ctype is ColumnType.FLOAT64 and isinstance(value, float))
                or (ctype is ColumnType.TEXT and isinstance(value, str))
            )
            if not ok:
                raise TypeMismatch(
                    f"key value {value!r} does not fit column {name!r} ({ctype.value})"
                )
        if row not in seen:
            seen.add(row)
            rows.append(row)
    return KeySet(schema, tuple(rows))


# ---------------------------------------------------------------------------
# Query expressions.


class QueryExpr:
    """Base class for query expression nodes."""


@dataclass(frozen=True)
class Source(QueryExpr):
    table: str


@dataclass(frozen=True)
class Filter(QueryExpr):
    child: QueryExpr
    predicate: str


@dataclass(frozen=True)
class Map(QueryExpr):
    child: QueryExpr
    columns: Mapping[str, str]
    schema: Schema


@dataclass(frozen=True)
class FlatMap(QueryExpr):
    child: QueryExpr
    branches: tuple[tf.ExpansionBranch, ...]
    schema: Schema
    max_rows: int


@dataclass(frozen=True)
class JoinPublic(QueryExpr):
    child: QueryExpr
    table: Table
    on: tuple[str, ...]


@dataclass(frozen=True)
class JoinPrivate(QueryExpr):
    child: QueryExpr
    other: QueryExpr
    on: tuple[str, ...]
    left_bound: int
    right_bound: int


@dataclass(frozen=True)
class TruncateById(QueryExpr):
    child: QueryExpr
    bound: int


@dataclass(frozen=True)
class GroupBy(QueryExpr):
    child: QueryExpr
    keys: KeySet


@dataclass(frozen=True)
class Count(QueryExpr):
    child: QueryExpr


@dataclass(frozen=True)
class Sum(QueryExpr):
    child: QueryExpr
    column: str
    low: float
    high: float
    granularity: Fraction = DEFAULT_GRANULARITY


@dataclass(frozen=True)
class Average(QueryExpr):
    child: QueryExpr
    column: str
    low: float
    high: float
    granularity: Fraction = DEFAULT_GRANULARITY


@dataclass(frozen=True)
class Quantile(QueryExpr):
    child: QueryExpr
    column: str
    q: float
    low: float
    high: float
    bins: int


_AGG_NODES = (Count, Sum, Average, Quantile)


class GroupedQuery:
    """A grouped pipeline waiting for its aggregation."""

    def __init__(self, expr: GroupBy):
        self._expr = expr

    def count(self) -> QueryExpr:
        return Count(self._expr)

    def sum(self, column: str, low, high, granularity=DEFAULT_GRANULARITY) -> QueryExpr:
        return Sum(self._expr, column, low, high, Fraction(str(granularity)))

    def average(self, column: str, low, high, granularity=DEFAULT_GRANULARITY) -> QueryExpr:
        return Average(self._expr, column, low, high, Fraction(str(granularity)))

    def quantile(self, column: str, q: float, low, high, bins: int) -> QueryExpr:
        return Quantile(self._expr, column, q, low, high, bins)


class QueryBuilder:
    """Fluent construction of query expressions.

    Relational steps return a new builder; aggregation methods return the
    finished expression.
    """

    def __init__(self, table: str):
        self._expr: QueryExpr = Source(table)

    @classmethod
    def _wrap(cls, expr: QueryExpr) -> "QueryBuilder":
        builder = cls.__new__(cls)
        builder._expr = expr
        return builder

    def filter(self, predicate: str) -> "QueryBuilder":
        return QueryBuilder._wrap(Filter(self._expr, predicate))

    def map(self, columns: Mapping[str, str], schema: Schema) -> "QueryBuilder":
        return QueryBuilder._wrap(Map(self._expr, dict(columns), schema))

    def flat_map(
        self,
        branches: Sequence[tf.ExpansionBranch],
        schema: Schema,
        max_rows: int,
    ) -> "QueryBuilder":
        return QueryBuilder._wrap(
            FlatMap(self._expr, tuple(branches), schema, max_rows)
        )

    def join_public(self, table: Table, on: Sequence[str]) -> "QueryBuilder":
        return QueryBuilder._wrap(JoinPublic(self._expr, table, tuple(on)))

    def join_private(
        self,
        other: "QueryBuilder",
        on: Sequence[str],
        left_bound: int,
        right_bound: int,
    ) -> "QueryBuilder":
        return QueryBuilder._wrap(
            JoinPrivate(self._expr, other._expr, tuple(on), left_bound, right_bound)
        )

    def truncate_by_id(self, bound: int) -> "QueryBuilder":
        return QueryBuilder._wrap(TruncateById(self._expr, bound))

    def group_by(self, keys: KeySet) -> GroupedQuery:
        return GroupedQuery(GroupBy(self._expr, keys))

    def count(self) -> QueryExpr:
        return Count(self._expr)

    def sum(self, column: str, low, high, granularity=DEFAULT_GRANULARITY) -> QueryExpr:
        return Sum(self._expr, column, low, high, Fraction(str(granularity)))

    def average(self, column: str, low, high, granularity=DEFAULT_GRANULARITY) -> QueryExpr:
        return Average(self._expr, column, low, high, Fraction(str(granularity)))

    def quantile(self, column: str, q: float, low, high, bins: int) -> QueryExpr:
        return Quantile(self._expr, column, q, low, high, bins)


def query(table: str) -> QueryBuilder:
    return QueryBuilder(table)


# ---------------------------------------------------------------------------
# Compilation.


@dataclass(frozen=True)
class CompiledQuery:
    """The output of compiling one query expression.

    `measurement` runs end to end on the session's table tuple; its
    privacy function at `unit_distance` equals the requested spend.
    `wrap` turns the raw measurement output into the result table.
    """

    measurement: Measurement
    transformation: tf.Transformation
    output_schema: Schema
    unit_distance: int
    wrap: Callable[[Any], Table]


_TYPE_ERRORS = (
    ExpressionSyntaxError,
    ExpressionTypeError,
    UnknownColumn,
    DuplicateColumn,
    SchemaMismatch,
    KeyTypeMismatch,
    MissingKeyColumn,
    MissingIdColumn,
    IdColumnDropped,
    TypeMismatch,
)


def _unit_metric(unit: PrivacyUnit):
    if isinstance(unit, AddMaxRows):
        return SymmetricDifference()
    if isinstance(unit, AddRemoveId):
        return AddRemoveIds(unit.id_column)
    raise TypeCheckError(f"unknown privacy unit {unit!r}")


def _root_parts(table_domains: Mapping[str, TableDomain], unit: PrivacyUnit):
    names = sorted(table_domains)
    components = tuple(table_domains[name] for name in names)
    metrics = tuple(_unit_metric(unit) for _ in names)
    return names, components, metrics


def _build_chain(
    expr: QueryExpr,
    names: list[str],
    components: tuple[TableDomain, ...],
    metrics,
) -> tf.Transformation:
    """Compile the relational part of a query into one transformation."""
    if isinstance(expr, Source):
        if expr.table not in names:
            raise TypeCheckError(
                f"unknown table {expr.table!r}; the session has {names}"
            )
        return tf.make_select_table(components, metrics, names.index(expr.table))
    if isinstance(expr, Filter):
        upstream = _build_chain(expr.child, names, components, metrics)
        step = tf.make_filter(
            upstream.output_domain, expr.predicate, metric=upstream.output_metric
        )
        return tf.chain(upstream, step)
    if isinstance(expr, Map):
        upstream = _build_chain(expr.child, names, components, metrics)
        step = tf.make_map(
            upstream.output_domain,
            expr.columns,
            expr.schema,
            metric=upstream.output_metric,
        )
        return tf.chain(upstream, step)
    if isinstance(expr, FlatMap):
        upstream = _build_chain(expr.child, names, components, metrics)
        if isinstance(upstream.output_metric, AddRemoveIds):
            raise UnboundedSensitivity(
                "flat_map under identifier accounting is unbounded; "
                "truncate_by_id first"
            )
        step = tf.make_flat_map(
            upstream.output_domain, expr.branches, expr.schema, expr.max_rows
        )
        return tf.chain(upstream, step)
    if isinstance(expr, JoinPublic):
        upstream = _build_chain(expr.child, names, components, metrics)
        if isinstance(upstream.output_metric, AddRemoveIds):
            raise UnboundedSensitivity(
                "a public join under identifier accounting is unbounded; "
                "truncate_by_id first"
            )
        step = tf.make_public_join(upstream.output_domain, expr.table, expr.on)
        return tf.chain(upstream, step)
    if isinstance(expr, JoinPrivate):
        left = _build_chain(expr.child, names, components, metrics)
        right = _build_chain(expr.other, names, components, metrics)
        for side, label in ((left, "left"), (right, "right")):
            if isinstance(side.output_metric, AddRemoveIds):
                raise UnboundedSensitivity(
                    f"the {label} side of a private join is still under "
                    "identifier accounting; truncate_by_id first"
                )
        join = tf.make_private_join(
            left.output_domain,
            right.output_domain,
            expr.on,
            expr.left_bound,
            expr.right_bound,
        )
        slope = tf.private_join_distance_bound(
            expr.left_bound,
            expr.right_bound,
            left.stability.slope,
            right.stability.slope,
        )
        return tf.Transformation(
            input_domain=TableTupleDomain(components),
            output_domain=join.output_domain,
            input_metric=TableTuple(metrics),
            output_metric=SymmetricDifference(),
            stability=linear_map(slope),
            _apply=lambda data: join.apply((left.apply(data), right.apply(data))),
        )
    if isinstance(expr, TruncateById):
        upstream = _build_chain(expr.child, names, components, metrics)
        if not isinstance(upstream.output_metric, AddRemoveIds):
            raise TypeCheckError(
                "truncate_by_id applies only under identifier accounting"
            )
        step = tf.make_truncate_by_id(upstream.output_domain, expr.bound)
        return tf.chain(upstream, step)
    if isinstance(expr, (GroupBy,) + _AGG_NODES):
        raise TypeCheckError(
            "aggregations and group-by may appear only at the root of a query"
        )
    raise TypeCheckError(f"unknown query node {expr!r}")


def _agg_parts(expr: QueryExpr, domain: TableDomain, noise, measure: Measure):
    """Build the per-table aggregation measurement and its value column."""
    if isinstance(expr, Count):
        return make_count(domain, noise), ("count", ColumnType.INT64)
    if isinstance(expr, Sum):
        return (
            make_sum(domain, expr.column, expr.low, expr.high, expr.granularity, noise),
            ("sum", ColumnType.FLOAT64),
        )
    if isinstance(expr, Average):
        return (
            make_average(
                domain, expr.column, expr.low, expr.high, expr.granularity, noise
            ),
            ("average", ColumnType.FLOAT64),
        )
    if isinstance(expr, Quantile):
        if not isinstance(measure, PureDP):
            raise TypeCheckError("quantile queries need a pure-DP session")
        if not isinstance(noise, PureDpNoise):
            raise TypeCheckError("quantile queries need a pure-DP session")
        return (
            make_quantile(
                domain, expr.column, expr.q, expr.low, expr.high, expr.bins,
                noise.epsilon_unit,
            ),
            ("quantile", ColumnType.FLOAT64),
        )
    raise TypeCheckError(f"queries must end in an aggregation, got {expr!r}")


def _combine(chain: tf.Transformation, measurement: Measurement) -> Measurement:
    return Measurement(
        input_domain=chain.input_domain,
        input_metric=chain.input_metric,
        output_measure=measurement.output_measure,
        privacy_function=compose_maps(measurement.privacy_function, chain.stability),
        _eval=lambda data, rng: measurement.eval(chain.apply(data), rng),
    )


def compile_query(
    expr: QueryExpr,
    table_domains: Mapping[str, TableDomain],
    unit: PrivacyUnit,
    measure: Measure,
    spend,
) -> CompiledQuery:
    """Compile a query against table schemas alone; no data is touched.

    The mechanism parameter is solved so the end-to-end privacy function
    at the unit distance equals `spend` exactly.
    """
    spend = _exact_amount(spend)
    if spend == INF:
        raise TypeCheckError(
            "spends must be finite; an infinite budget admits any finite spend"
        )
    try:
        return _compile(expr, table_domains, unit, measure, spend)
    except _TYPE_ERRORS as exc:
        raise TypeCheckError(str(exc)) from exc


def _unit_distance(unit: PrivacyUnit, table_count: int) -> int:
    if isinstance(unit, AddMaxRows):
        return unit.max_rows
    # One identifier may contribute rows to every table at once.
    return table_count


def _compile(
    expr: QueryExpr,
    table_domains: Mapping[str, TableDomain],
    unit: PrivacyUnit,
    measure: Measure,
    spend: Fraction,
) -> CompiledQuery:
    names, components, metrics = _root_parts(table_domains, unit)
    distance = _unit_distance(unit, len(names))

    if not isinstance(expr, _AGG_NODES):
        raise TypeCheckError("queries must end in an aggregation")
    inner = expr.child
    keyset = None
    if isinstance(inner, GroupBy):
        keyset = inner.keys
        relational = inner.child
    else:
        relational = inner

    chain = _build_chain(relational, names, components, metrics)
    if isinstance(chain.output_metric, AddRemoveIds):
        raise UnboundedSensitivity(
            "this query is still under identifier accounting at the "
            "aggregation; add a truncate_by_id step to bound each "
            "identifier's contribution"
        )

    slope = chain.stability.slope
    scaled = slope * distance  # distance seen by the aggregation
    if isinstance(measure, PureDP):
        if scaled == 0:
            noise = PureDpNoise(Fraction(1))
        else:
            epsilon_unit = spend / scaled
            if epsilon_unit <= 0:
                raise NonPositiveEpsilon(
                    f"spend {spend} leaves no budget for noise at stability {slope}"
                )
            noise = PureDpNoise(epsilon_unit)
    elif isinstance(measure, ZCDP):
        if scaled == 0:
            noise = ZcdpNoise(Fraction(1), linearize_at=1 if keyset is not None else None)
        else:
            rho_unit = spend / (scaled * scaled)
            if rho_unit <= 0:
                raise NonPositiveEpsilon(
                    f"spend {spend} leaves no budget for noise at stability {slope}"
                )
            if keyset is not None:
                if scaled.denominator != 1:
                    raise NonLinearPath(
                        f"grouped zCDP queries need an integer stability, got {scaled}"
                    )
                noise = ZcdpNoise(rho_unit, linearize_at=int(scaled))
            else:
                noise = ZcdpNoise(rho_unit)
    else:
        raise TypeCheckError(f"unknown measure {measure!r}")

    per_table, value_column = _agg_parts(expr, chain.output_domain, noise, measure)

    if keyset is None:
        value_name, value_type = value_column
        output_schema = Schema(((value_name, value_type),))
        measurement = _combine(chain, per_table)

        def wrap(result) -> Table:
            if value_type is ColumnType.INT64:
                value: Value = int(result)
            else:
                value = float(result)
            return Table(output_schema, ((value,),))

        return CompiledQuery(
            measurement=measurement,
            transformation=chain,
            output_schema=output_schema,
            unit_distance=distance,
            wrap=wrap,
        )

    view = tf.make_grouped_view(chain.output_domain, keyset.schema)
    grouped = compose_per_group(
        chain.output_domain, keyset.schema, keyset.rows, per_table, value_column
    )
    full_chain = tf.chain(chain, view)
    measurement = _combine(full_chain, grouped)
    output_schema = Schema(tuple(keyset.schema.columns) + (value_column,))
    return CompiledQuery(
        measurement=measurement,
        transformation=full_chain,
        output_schema=output_schema,
        unit_distance=distance,
        wrap=lambda result: result,
    )


# ---------------------------------------------------------------------------
# Sessions.


class Session:
    """Private tables plus a budget; answers compiled queries.

    Build one with build_session.  A failed evaluate, whatever the reason,
    leaves the session exactly as it was: no budget moves and no
    randomness is consumed.
    """

    def __init__(self, *, _queryable, _table_domains, _unit, _measure, _distance):
        self._queryable = _queryable
        self._table_domains = _table_domains
        self._unit = _unit
        self._measure = _measure
        self._distance = _distance

    @property
    def privacy_unit(self) -> PrivacyUnit:
        return self._unit

    @property
    def measure(self) -> Measure:
        return self._measure

    def table_schemas(self) -> dict[str, Schema]:
        return {name: d.schema for name, d in self._table_domains.items()}

    def remaining_budget(self) -> PrivacyBudget:
        return PrivacyBudget(self._measure, self._queryable.remaining())

    def evaluate(self, expr: QueryExpr, spend: PrivacyBudget) -> Table:
        """Compile, charge, and run one query.

        The spend's measure must match the session's.  On success the
        spend is deducted exactly; on any error nothing changes.
        """
        if spend.measure != self._measure:
            raise MeasureMismatch(
                f"the session accounts in {self._measure!r}, "
                f"the spend is in {spend.measure!r}"
            )
        compiled = compile_query(
            expr, self._table_domains, self._unit, self._measure, spend.amount
        )
        raw = self._queryable.ask(compiled.measurement, spend.amount, self._distance)
        return compiled.wrap(raw)


def build_session(
    tables: Mapping[str, Table],
    unit: PrivacyUnit,
    budget: PrivacyBudget,
    seed: int,
) -> Session:
    """Create a session over named tables.

    Under AddRemoveId every table must carry the identifier column (as
    int64 or text).  The seed fixes all randomness: the same seed and the
    same query sequence reproduce the same outputs bit for bit.
    """
    if not tables:
        raise EmptyTables("a session needs at least one table")
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise TypeMismatch(f"the seed must be a 64-bit unsigned int, got {seed!r}")
    domains: dict[str, TableDomain] = {}
    for name in sorted(tables):
        table = tables[name]
        if isinstance(unit, AddRemoveId):
            if not table.schema.has_column(unit.id_column):
                raise MissingIdColumn(
                    f"table {name!r} lacks the id column {unit.id_column!r}"
                )
            domains[name] = TableDomain(table.schema, unit.id_column)
        else:
            domains[name] = TableDomain(table.schema, None)
    names, components, metrics = _root_parts(domains, unit)
    dataset = tuple(tables[name] for name in names)
    queryable = make_queryable(
        dataset,
        TableTuple(metrics),
        budget.measure,
        budget.amount,
        RngStream(seed),
    )
    return Session(
        _queryable=queryable,
        _table_domains=domains,
        _unit=unit,
        _measure=budget.measure,
        _distance=_unit_distance(unit, len(names)),
    )
