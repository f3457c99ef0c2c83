"""Dataset metrics, output measures, and privacy distance maps.

A metric says how far apart two datasets are; a measure says how privacy
loss between output distributions is quantified.  Distance maps tie the
two together: every transformation carries a map bounding how much it can
stretch input distances, and every measurement carries a map from input
distance to privacy loss.  Maps are monotone and send 0 to 0.

The module also holds the brute-force divergence oracles used throughout
testing.  They work directly on finite probability mass functions and are
deliberately independent of any sampling code.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Sequence, Union

import mpmath

from .errors import (
    BadAlpha,
    DomainMismatch,
    NotAPmf,
    SchemaMismatch,
)
from .tabledata import Table, split_by_key

INF = math.inf

Distance = Union[int, Fraction, float]

# Rational arithmetic everywhere, with math.inf as the one non-rational
# distance.  These helpers keep 0 * inf from ever appearing.


def scale_distance(slope: Fraction, d: Distance) -> Distance:
    if slope == 0:
        return Fraction(0)
    if d == INF:
        return INF
    return slope * Fraction(d)


def add_distances(values: Sequence[Distance]) -> Distance:
    if any(v == INF for v in values):
        return INF
    total = Fraction(0)
    for v in values:
        total += Fraction(v)
    return total


# ---------------------------------------------------------------------------
# Output measures.


@dataclass(frozen=True)
class PureDP:
    """Privacy loss is the max-divergence bound epsilon."""


@dataclass(frozen=True)
class ZCDP:
    """Privacy loss is the zero-concentrated bound rho."""


Measure = Union[PureDP, ZCDP]


# ---------------------------------------------------------------------------
# Dataset metrics.


@dataclass(frozen=True)
class SymmetricDifference:
    """Multiset symmetric difference between two tables."""


@dataclass(frozen=True)
class AddRemoveIds:
    """Distance counts whole-identifier additions and removals.

    Replacing the rows of one identifier costs 2 (remove it, add it back
    with new rows); adding or dropping an identifier outright costs 1.
    """

    id_column: str


@dataclass(frozen=True)
class GroupedBy:
    """Partition both tables by key columns, sum inner distances per key."""

    key_columns: tuple[str, ...]
    inner: "Metric"


@dataclass(frozen=True)
class TableTuple:
    """Componentwise distances over a tuple of tables, reduced by L1 sum."""

    components: tuple["Metric", ...]


@dataclass(frozen=True)
class BoundedLists:
    """Positionwise inner distances over lists of tables, summed.

    Lists of unequal length are compared by padding the shorter one with
    empty tables.
    """

    inner: "Metric"


Metric = Union[SymmetricDifference, AddRemoveIds, GroupedBy, TableTuple, BoundedLists]


def _symmetric_difference(x: Table, y: Table) -> int:
    if x.schema != y.schema:
        raise SchemaMismatch("tables under SymmetricDifference must share a schema")
    counts = Counter(x.rows)
    counts.subtract(Counter(y.rows))
    return sum(abs(c) for c in counts.values())


def _add_remove_ids(metric: AddRemoveIds, x: Table, y: Table) -> int:
    if x.schema != y.schema:
        raise SchemaMismatch("tables under AddRemoveIds must share a schema")
    idx = x.schema.index_of(metric.id_column)
    groups_x: dict = {}
    for row in x.rows:
        groups_x.setdefault(row[idx], []).append(row)
    groups_y: dict = {}
    for row in y.rows:
        groups_y.setdefault(row[idx], []).append(row)
    total = 0
    for ident in set(groups_x) | set(groups_y):
        in_x = ident in groups_x
        in_y = ident in groups_y
        if in_x and in_y:
            if Counter(groups_x[ident]) != Counter(groups_y[ident]):
                total += 2
        else:
            total += 1
    return total


def dataset_distance(metric: Metric, x, y) -> Distance:
    """The distance between two datasets under the given metric."""
    if isinstance(metric, SymmetricDifference):
        return _symmetric_difference(x, y)
    if isinstance(metric, AddRemoveIds):
        return _add_remove_ids(metric, x, y)
    if isinstance(metric, GroupedBy):
        if x.schema != y.schema:
            raise SchemaMismatch("tables under GroupedBy must share a schema")
        parts_x = split_by_key(x, metric.key_columns)
        parts_y = split_by_key(y, metric.key_columns)
        schema = x.schema
        total: Distance = 0
        for key in set(parts_x) | set(parts_y):
            a = parts_x.get(key, Table.empty(schema))
            b = parts_y.get(key, Table.empty(schema))
            total += dataset_distance(metric.inner, a, b)
        return total
    if isinstance(metric, TableTuple):
        if len(x) != len(metric.components) or len(y) != len(metric.components):
            raise DomainMismatch(
                f"expected tuples of {len(metric.components)} tables"
            )
        return sum(
            dataset_distance(m, a, b) for m, a, b in zip(metric.components, x, y)
        )
    if isinstance(metric, BoundedLists):
        xs = list(x)
        ys = list(y)
        if not xs and not ys:
            return 0
        schema = (xs[0] if xs else ys[0]).schema
        length = max(len(xs), len(ys))
        xs += [Table.empty(schema)] * (length - len(xs))
        ys += [Table.empty(schema)] * (length - len(ys))
        return sum(dataset_distance(metric.inner, a, b) for a, b in zip(xs, ys))
    raise DomainMismatch(f"unknown metric {metric!r}")


# ---------------------------------------------------------------------------
# Distance maps.


@dataclass(frozen=True)
class DistanceMap:
    """A monotone map from input distance to output distance.

    The shape tag drives composition rules: linear maps compose and sum by
    slope arithmetic and are the only shape parallel composition accepts.
    Everything else is tagged general and treated as opaque.
    """

    shape: str  # "linear" or "general"
    slope: Fraction | None = None
    fn: Callable[[Distance], Distance] | None = None

    def __call__(self, d: Distance) -> Distance:
        if d != INF and d < 0:
            raise ValueError(f"distances are non-negative, got {d!r}")
        if self.shape == "linear":
            return scale_distance(self.slope, d)
        return self.fn(d)


def linear_map(slope: Fraction | int) -> DistanceMap:
    slope = Fraction(slope)
    if slope < 0:
        raise ValueError("a distance map's slope must be non-negative")
    return DistanceMap(shape="linear", slope=slope)


def general_map(fn: Callable[[Distance], Distance]) -> DistanceMap:
    return DistanceMap(shape="general", fn=fn)


def compose_maps(outer: DistanceMap, inner: DistanceMap) -> DistanceMap:
    """The map d -> outer(inner(d))."""
    if outer.shape == "linear" and inner.shape == "linear":
        return linear_map(outer.slope * inner.slope)
    return general_map(lambda d: outer(inner(d)))


def sum_maps(maps: Sequence[DistanceMap]) -> DistanceMap:
    """The pointwise sum of maps, for sequential composition."""
    maps = list(maps)
    if not maps:
        raise ValueError("sum_maps needs at least one map")
    if all(m.shape == "linear" for m in maps):
        return linear_map(sum((m.slope for m in maps), Fraction(0)))
    return general_map(lambda d: add_distances([m(d) for m in maps]))


def max_slope_map(maps: Sequence[DistanceMap]) -> DistanceMap:
    """linear(max slope) over linear maps, for composition over subsets."""
    slopes = []
    for m in maps:
        if m.shape != "linear":
            raise ValueError("max_slope_map needs linear maps")
        slopes.append(m.slope)
    return linear_map(max(slopes))


# ---------------------------------------------------------------------------
# Divergence oracles.
#
# These enumerate finite pmfs directly.  Probabilities may be floats,
# Fractions, or mpmath values; all arithmetic happens in mpmath with enough
# working precision that pmfs built over wide supports do not underflow.

_DPS = 60
_PMF_TOLERANCE = mpmath.mpf("1e-12")


def _as_mpf(value) -> mpmath.mpf:
    if isinstance(value, Fraction):
        return mpmath.mpf(value.numerator) / mpmath.mpf(value.denominator)
    return mpmath.mpf(value)


def _check_pmf(p: Mapping) -> dict:
    out = {}
    total = mpmath.mpf(0)
    for outcome, prob in p.items():
        mass = _as_mpf(prob)
        if mass < 0:
            raise NotAPmf(f"negative mass {prob!r} at outcome {outcome!r}")
        out[outcome] = mass
        total += mass
    if abs(total - 1) > _PMF_TOLERANCE:
        raise NotAPmf(f"masses sum to {float(total)!r}, not 1")
    return out


def pure_dp_divergence(p: Mapping, q: Mapping) -> float:
    """max over outcomes of |ln(p(o) / q(o))|.

    Outcomes where both pmfs place zero mass contribute nothing; an outcome
    where exactly one side has mass makes the divergence infinite.
    """
    with mpmath.workdps(_DPS):
        pp = _check_pmf(p)
        qq = _check_pmf(q)
        worst = mpmath.mpf(0)
        for outcome in set(pp) | set(qq):
            a = pp.get(outcome, mpmath.mpf(0))
            b = qq.get(outcome, mpmath.mpf(0))
            if a == 0 and b == 0:
                continue
            if a == 0 or b == 0:
                return INF
            worst = max(worst, abs(mpmath.log(a / b)))
        return float(worst)


# The default grid of Renyi orders.  The reported value is a lower estimate
# of the true supremum over all orders; refining the grid only increases it.
DEFAULT_ALPHA_GRID: tuple[float, ...] = (1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0)


def zcdp_divergence(
    p: Mapping, q: Mapping, alphas: Sequence[float] = DEFAULT_ALPHA_GRID
) -> float:
    """max over the alpha grid of D_alpha(p || q) / alpha.

    D_alpha is the Renyi divergence of order alpha.  Against the
    zero-concentrated definition, which quantifies over every alpha > 1,
    a finite grid yields a lower estimate.
    """
    alphas = list(alphas)
    if not alphas:
        raise BadAlpha("the alpha grid must be non-empty")
    for alpha in alphas:
        if not (alpha > 1) or alpha == INF or alpha != alpha:
            raise BadAlpha(f"alpha must be finite and > 1, got {alpha!r}")
    with mpmath.workdps(_DPS):
        pp = _check_pmf(p)
        qq = _check_pmf(q)
        best = mpmath.mpf(0)
        for alpha in alphas:
            a = mpmath.mpf(alpha)
            total = mpmath.mpf(0)
            for outcome, mass in pp.items():
                if mass == 0:
                    continue
                other = qq.get(outcome, mpmath.mpf(0))
                if other == 0:
                    return INF
                total += mass ** a * other ** (1 - a)
            divergence = mpmath.log(total) / (a - 1)
            best = max(best, divergence / a)
        return max(0.0, float(best))
