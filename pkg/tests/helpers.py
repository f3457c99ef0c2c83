"""Shared test oracles.

Everything here is computed independently of the library: distances by
brute-force set arithmetic, noise distributions from their closed forms in
high-precision arithmetic.  Tests compare library behavior against these,
never against the library itself.
"""

from __future__ import annotations

import random
from collections import Counter
from fractions import Fraction

import mpmath

from noisegate.tabledata import ColumnType, Schema, Table

DPS = 60


# ---------------------------------------------------------------------------
# Distances, from first principles.


def sd_distance(a: Table, b: Table) -> int:
    """Symmetric-difference distance: rows to add plus rows to remove."""
    ca = Counter(a.rows)
    cb = Counter(b.rows)
    total = 0
    for row in set(ca) | set(cb):
        total += abs(ca.get(row, 0) - cb.get(row, 0))
    return total


def _rows_by_id(table: Table, id_column: str) -> dict:
    idx = table.schema.index_of(id_column)
    groups: dict = {}
    for row in table.rows:
        groups.setdefault(row[idx], Counter())[row] += 1
    return groups


def ari_distance(a: Table, b: Table, id_column: str) -> int:
    """Add/remove-identifier distance.

    Editing one identifier's rows takes removing it and adding it back
    (cost 2); an identifier present on only one side costs 1.
    """
    ga = _rows_by_id(a, id_column)
    gb = _rows_by_id(b, id_column)
    total = 0
    for key in set(ga) | set(gb):
        in_a = key in ga
        in_b = key in gb
        if in_a and in_b:
            if ga[key] != gb[key]:
                total += 2
        else:
            total += 1
    return total


def grouped_distance(a: Table, b: Table, key_columns: tuple[str, ...]) -> int:
    """L1 over groups of the per-group symmetric difference."""
    idxs = [a.schema.index_of(c) for c in key_columns]
    ca = Counter(a.rows)
    cb = Counter(b.rows)
    # Per-group symmetric difference, summed over groups.
    groups = {tuple(row[i] for i in idxs) for row in set(ca) | set(cb)}
    result = 0
    for g in groups:
        for row in set(ca) | set(cb):
            if tuple(row[i] for i in idxs) == g:
                result += abs(ca.get(row, 0) - cb.get(row, 0))
    return result


# ---------------------------------------------------------------------------
# Random tables and neighbor pairs.


INT_SCHEMA = Schema.of(("id", ColumnType.INT64), ("v", ColumnType.INT64))


def random_table(rng: random.Random, max_rows: int, schema: Schema = INT_SCHEMA,
                 id_range: int = 4, value_range: int = 3) -> Table:
    rows = []
    for _ in range(rng.randrange(max_rows + 1)):
        row = []
        for _, ctype in schema.columns:
            if ctype is ColumnType.INT64:
                row.append(rng.randrange(id_range))
            elif ctype is ColumnType.FLOAT64:
                row.append(float(rng.randrange(value_range)))
            else:
                row.append(chr(97 + rng.randrange(id_range)))
        rows.append(tuple(row))
    return Table.of(schema, rows)


def perturb_rows(rng: random.Random, table: Table, ops: int,
                 id_range: int = 4, value_range: int = 3) -> Table:
    """Apply `ops` random row additions/removals to produce a nearby table."""
    rows = list(table.rows)
    for _ in range(ops):
        if rows and rng.random() < 0.5:
            rows.pop(rng.randrange(len(rows)))
        else:
            row = []
            for _, ctype in table.schema.columns:
                if ctype is ColumnType.INT64:
                    row.append(rng.randrange(id_range))
                elif ctype is ColumnType.FLOAT64:
                    row.append(float(rng.randrange(value_range)))
                else:
                    row.append(chr(97 + rng.randrange(id_range)))
            rows.append(tuple(row))
    return Table.of(table.schema, rows)


# ---------------------------------------------------------------------------
# Closed-form noise pmfs (mpmath, normalized over a finite window).

# Window radii are chosen so the truncated tail is far below the 1e-12
# pmf-sum tolerance of the divergence oracles.


def geometric_pmf(rate: Fraction, center: int, lo: int, hi: int) -> dict:
    """P(X = k) proportional to exp(-rate * |k - center|) on [lo, hi]."""
    with mpmath.workdps(DPS):
        r = mpmath.mpf(rate.numerator) / mpmath.mpf(rate.denominator)
        weights = {k: mpmath.e ** (-r * abs(k - center)) for k in range(lo, hi + 1)}
        total = mpmath.fsum(weights.values())
        return {k: w / total for k, w in weights.items()}


def gaussian_pmf(sigma_squared: Fraction, center: int, lo: int, hi: int) -> dict:
    """P(X = k) proportional to exp(-(k-center)^2 / (2 sigma^2)) on [lo, hi]."""
    with mpmath.workdps(DPS):
        s2 = mpmath.mpf(sigma_squared.numerator) / mpmath.mpf(sigma_squared.denominator)
        weights = {
            k: mpmath.e ** (-mpmath.mpf((k - center) ** 2) / (2 * s2))
            for k in range(lo, hi + 1)
        }
        total = mpmath.fsum(weights.values())
        return {k: w / total for k, w in weights.items()}


def product_pmf(components: list[dict]) -> dict:
    """Joint pmf of independent components, keyed by outcome tuples."""
    with mpmath.workdps(DPS):
        joint = {(): mpmath.mpf(1)}
        for comp in components:
            joint = {
                key + (k,): mass * p
                for key, mass in joint.items()
                for k, p in comp.items()
            }
        return joint


def quantile_pmf(values: list, q: float, low: float, high: float,
                 bins: int, epsilon) -> list:
    """Exponential-mechanism bin distribution, from the utility definition."""
    with mpmath.workdps(DPS):
        eps = mpmath.mpf(str(epsilon))
        n = len(values)
        weights = []
        width = (mpmath.mpf(str(high)) - mpmath.mpf(str(low))) / bins
        for b in range(bins):
            mid = mpmath.mpf(str(low)) + width * (2 * b + 1) / 2
            below = sum(1 for v in values if v < mid)
            utility = -abs(below - mpmath.mpf(str(q)) * n)
            weights.append(mpmath.e ** (eps * utility / 2))
        total = mpmath.fsum(weights)
        return [w / total for w in weights]


def _as_mpf(value) -> "mpmath.mpf":
    if isinstance(value, Fraction):
        return mpmath.mpf(value.numerator) / mpmath.mpf(value.denominator)
    return mpmath.mpf(value)


def tv_distance(p: dict, q: dict) -> float:
    with mpmath.workdps(DPS):
        keys = set(p) | set(q)
        return float(
            mpmath.fsum(abs(_as_mpf(p.get(k, 0)) - _as_mpf(q.get(k, 0))) for k in keys) / 2
        )


def empirical_pmf(samples: list) -> dict:
    n = len(samples)
    return {k: Fraction(c, n) for k, c in Counter(samples).items()}
