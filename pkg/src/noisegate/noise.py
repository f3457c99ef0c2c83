"""Exact integer noise samplers.

Both samplers work entirely in rational arithmetic on top of a PRNG's
uniform integers, so the sampled distributions are exactly the stated ones
and draws are reproducible bit for bit on any platform.  The construction
is the usual ladder: exact Bernoulli(exp(-x)) coin flips build a geometric
sampler, two mirrored geometrics build the two-sided geometric, and the
discrete Gaussian comes from rejection against a two-sided geometric
envelope.
"""

from __future__ import annotations

import random
from fractions import Fraction


def _bernoulli(p: Fraction, rng: random.Random) -> bool:
    # Exact coin with P(True) = p, for rational p in [0, 1].
    return rng.randrange(p.denominator) < p.numerator


def _bernoulli_exp_unit(x: Fraction, rng: random.Random) -> bool:
    # Exact coin with P(True) = exp(-x), for 0 <= x <= 1.
    k = 1
    while _bernoulli(x / k, rng):
        k += 1
    return k % 2 == 1


def _bernoulli_exp(x: Fraction, rng: random.Random) -> bool:
    # Exact coin with P(True) = exp(-x), for any x >= 0.
    while x > 1:
        if not _bernoulli_exp_unit(Fraction(1), rng):
            return False
        x = x - 1
    return _bernoulli_exp_unit(x, rng)


def _geometric_exp_slow(x: Fraction, rng: random.Random) -> int:
    # Count of leading successes of a Bernoulli(exp(-x)) coin, so
    # P(G = k) = (1 - exp(-x)) exp(-k x).  Usable only for x >= 1ish.
    k = 0
    while _bernoulli_exp(x, rng):
        k += 1
    return k


def sample_geometric_exp(rate: Fraction, rng: random.Random) -> int:
    """A draw of G with P(G = k) = (1 - exp(-rate)) exp(-k rate), k >= 0."""
    if rate < 0:
        raise ValueError("rate must be non-negative")
    if rate == 0:
        raise ValueError("rate 0 has no normalizable geometric")
    denominator = rate.denominator
    while True:
        shift = rng.randrange(denominator)
        if _bernoulli_exp(Fraction(shift, denominator), rng):
            break
    coarse = _geometric_exp_slow(Fraction(1), rng)
    return (coarse * denominator + shift) // rate.numerator


def sample_two_sided_geometric(rate: Fraction, rng: random.Random) -> int:
    """A draw of Z with P(Z = k) proportional to exp(-|k| * rate).

    Sign and magnitude are drawn independently and the double-counted
    (negative, zero) outcome is rejected, which leaves exactly the
    two-sided geometric law.
    """
    while True:
        negative = _bernoulli(Fraction(1, 2), rng)
        magnitude = sample_geometric_exp(rate, rng)
        if negative and magnitude == 0:
            continue
        return -magnitude if negative else magnitude


def _floor_sqrt(x: Fraction) -> int:
    # floor(sqrt(x)) by doubling then bisection, exact for rational x >= 0.
    lower = 0
    upper = 1
    while upper * upper <= x:
        upper *= 2
    while lower + 1 < upper:
        middle = (lower + upper) // 2
        if middle * middle <= x:
            lower = middle
        else:
            upper = middle
    return lower


def sample_discrete_gaussian(sigma_squared: Fraction, rng: random.Random) -> int:
    """A draw of Z with P(Z = k) proportional to exp(-k^2 / (2 sigma^2)).

    Candidates come from a two-sided geometric envelope with scale near
    sigma; each candidate is accepted with the exact residual bias, so the
    output law is exactly the discrete Gaussian.
    """
    if sigma_squared <= 0:
        raise ValueError("sigma_squared must be positive")
    scale = _floor_sqrt(sigma_squared) + 1
    while True:
        candidate = sample_two_sided_geometric(Fraction(1, scale), rng)
        offset = abs(candidate) - sigma_squared / scale
        bias = offset * offset / (2 * sigma_squared)
        if _bernoulli_exp(bias, rng):
            return candidate
