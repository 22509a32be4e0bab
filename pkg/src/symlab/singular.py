"""Singular (staircase) functions and numerical calculus on them.

Provides exact-rational evaluation of the classical staircase functions
(Cantor, Minkowski question mark), monotone interpolation of sampled
increasing functions, numerical one-sided Dini derivative estimates with a
three-way verdict, a scanner for points with blowing-up difference
quotients, and a grid decomposition of an increasing function into an
absolutely-continuous density plus a singular remainder.

Evaluation is done in exact rational arithmetic wherever the function kind
allows it (the float result is then correctly rounded); difference
quotients computed at rational points are exact up to the configured digit
depth.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Literal, Sequence

import numpy as np

from .errors import DomainError, SpecValidationError

#: Ternary digits resolved by the staircase digit algorithms.
DIGIT_DEPTH = 64

#: Default geometric step schedule for Dini estimates: 3^-1 .. 3^-12, exact.
DEFAULT_H_SCHEDULE: tuple[Fraction, ...] = tuple(
    Fraction(1, 3**n) for n in range(1, 13)
)

Side = Literal["right", "left"]
Envelope = Literal["upper", "lower"]


def cantor_fraction(q: Fraction, depth: int = DIGIT_DEPTH) -> Fraction:
    """Cantor function of an exact rational in [0, 1], truncated at `depth` ternary digits.

    Scans ternary digits until the first digit equal to 1; digits 0/2 map to
    binary digits 0/1 with halved place values.
    """
    if q < 0 or q > 1:
        raise DomainError(f"cantor function is defined on [0, 1], got {float(q)}")
    if q == 1:
        return Fraction(1)
    acc = Fraction(0)
    place = Fraction(1, 2)
    rem = q
    for _ in range(depth):
        rem *= 3
        d = int(rem)
        rem -= d
        if d == 1:
            acc += place
            break
        if d == 2:
            acc += place
        place /= 2
        if rem == 0:
            break
    return acc


def minkowski_fraction(q: Fraction, max_shift: int = 1100) -> Fraction:
    """Minkowski question-mark function of a rational in [0, 1].

    Uses the continued-fraction expansion [0; a1, a2, ...] of q, summing
    alternating dyadic terms 2^(1 - a1 - ... - ak).  The expansion of a
    rational terminates, so the value is exact; terms beyond `max_shift`
    binary digits are dropped (far below double precision).
    """
    if q < 0 or q > 1:
        raise DomainError(f"question-mark function is defined on [0, 1], got {float(q)}")
    if q == 0:
        return Fraction(0)
    if q == 1:
        return Fraction(1)
    acc = Fraction(0)
    shift = 0
    sign = 1
    p, r = q.numerator, q.denominator
    # Euclidean continued fraction of p/r with p < r.
    while p:
        a, rem = divmod(r, p)
        shift += a
        if shift > max_shift:
            break
        acc += sign * Fraction(2) ** (1 - shift)
        sign = -sign
        r, p = p, rem
    return acc


def cantor_eval(t) -> float:
    """Cantor staircase value at t in [0, 1] (float, correctly rounded from the digit scan)."""
    return float(cantor_fraction(Fraction(t)))


def minkowski_eval(t) -> float:
    """Minkowski question-mark value at t in [0, 1]."""
    return float(minkowski_fraction(Fraction(t)))


def staircase_extend(t) -> float:
    """Periodized Cantor staircase floor(t) + C({t}) on t >= 0: increasing, continuous, singular."""
    q = Fraction(t)
    if q < 0:
        raise DomainError(f"extended staircase requires t >= 0, got {float(q)}")
    n = math.floor(q)
    return float(n + cantor_fraction(q - n))


class StaircaseFunction:
    """Evaluable increasing function handle.

    Subclasses set `kind` and implement `_eval_fraction`; evaluation at any
    real-like argument goes through exact rationals so that monotonicity is
    inherited from the underlying algorithm.  `domain` is (lo, hi) with hi
    possibly inf.
    """

    kind: str = "abstract"
    exact: bool = True

    @property
    def domain(self) -> tuple[float, float]:
        return (0.0, 1.0)

    def _eval_fraction(self, q: Fraction) -> Fraction:
        raise NotImplementedError

    def eval_rational(self, q: Fraction) -> Fraction:
        """Exact rational evaluation (available when `exact` is True)."""
        lo, hi = self.domain
        if q < lo or (math.isfinite(hi) and q > hi):
            raise DomainError(f"{self.kind}: {float(q)} outside domain [{lo}, {hi}]")
        return self._eval_fraction(q)

    def __call__(self, t) -> float:
        if isinstance(t, Fraction):
            return float(self.eval_rational(t))
        return float(self.eval_rational(Fraction(float(t))))

    def describe(self) -> str:
        return self.kind


class CantorStaircase(StaircaseFunction):
    """Cantor function on [0, 1], optionally periodized to [0, inf)."""

    kind = "cantor"

    def __init__(self, extended: bool = False, depth: int = DIGIT_DEPTH):
        self.extended = extended
        self.depth = depth

    @property
    def domain(self) -> tuple[float, float]:
        return (0.0, math.inf) if self.extended else (0.0, 1.0)

    def _eval_fraction(self, q: Fraction) -> Fraction:
        if self.extended:
            n = math.floor(q)
            return n + cantor_fraction(q - n, self.depth)
        return cantor_fraction(q, self.depth)


class MinkowskiStaircase(StaircaseFunction):
    """Minkowski question-mark function on [0, 1], optionally periodized."""

    kind = "minkowski"

    def __init__(self, extended: bool = False):
        self.extended = extended

    @property
    def domain(self) -> tuple[float, float]:
        return (0.0, math.inf) if self.extended else (0.0, 1.0)

    def _eval_fraction(self, q: Fraction) -> Fraction:
        if self.extended:
            n = math.floor(q)
            return n + minkowski_fraction(q - n)
        return minkowski_fraction(q)


class SampledStaircase(StaircaseFunction):
    """Increasing function given by samples, evaluated by monotone linear interpolation."""

    kind = "sampled"
    exact = False

    def __init__(self, abscissae: Sequence[float], values: Sequence[float]):
        xs = np.asarray(abscissae, dtype=float)
        ys = np.asarray(values, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or xs.shape != ys.shape:
            raise SpecValidationError("sampled staircase needs two equal-length 1-d columns (>= 2 rows)")
        if not np.all(np.diff(xs) > 0):
            raise SpecValidationError("sampled staircase abscissae must be strictly increasing")
        if not np.all(np.diff(ys) >= 0):
            raise SpecValidationError("sampled staircase values must be nondecreasing")
        self.xs = xs
        self.ys = ys

    @property
    def domain(self) -> tuple[float, float]:
        return (float(self.xs[0]), float(self.xs[-1]))

    def eval_rational(self, q: Fraction) -> Fraction:
        return Fraction(self.__call__(float(q)))

    def __call__(self, t) -> float:
        t = float(t)
        lo, hi = self.domain
        if t < lo or t > hi:
            raise DomainError(f"sampled staircase: {t} outside [{lo}, {hi}]")
        return float(np.interp(t, self.xs, self.ys))

    def describe(self) -> str:
        return f"sampled[{self.xs[0]}..{self.xs[-1]}:{self.xs.size}]"


class AffinePlusStaircase(StaircaseFunction):
    """Composite a*t + b*S(t) for an underlying staircase S; singular part scaled by b."""

    kind = "affine+staircase"

    def __init__(self, slope: float, scale: float, staircase: StaircaseFunction):
        self.slope = slope
        self.scale = scale
        self.staircase = staircase
        self.exact = staircase.exact

    @property
    def domain(self) -> tuple[float, float]:
        return self.staircase.domain

    def _eval_fraction(self, q: Fraction) -> Fraction:
        return Fraction(self.slope) * q + Fraction(self.scale) * self.staircase.eval_rational(q)

    def describe(self) -> str:
        return f"affine({self.slope})+{self.scale}*{self.staircase.describe()}"


def parse_staircase(name: str, extended: bool = False) -> StaircaseFunction:
    """Build a staircase from its config name.

    Accepted: "cantor", "minkowski", "affine+cantor:a,b" (a*t + b*Cantor~(t),
    always on the periodized staircase), "affine+minkowski:a,b".
    """
    name = name.strip()
    if name == "cantor":
        return CantorStaircase(extended=extended)
    if name == "minkowski":
        return MinkowskiStaircase(extended=extended)
    if name.startswith("affine+"):
        body = name[len("affine+"):]
        base_name, sep, params = body.partition(":")
        if not sep:
            raise SpecValidationError(f"staircase '{name}': expected affine+<base>:a,b")
        try:
            a_str, b_str = params.split(",")
            a, b = float(a_str), float(b_str)
        except ValueError:
            raise SpecValidationError(f"staircase '{name}': coefficients must be 'a,b'") from None
        base = parse_staircase(base_name, extended=True)
        return AffinePlusStaircase(a, b, base)
    raise SpecValidationError(f"unknown staircase name '{name}'")


def load_staircase_csv(path) -> SampledStaircase:
    """Load a sampled staircase from a two-column CSV (t, value); header row optional."""
    xs: list[float] = []
    ys: list[float] = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                x, y = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if not xs:
                    continue  # header
                raise SpecValidationError(f"{path}: malformed row {row!r}") from None
            xs.append(x)
            ys.append(y)
    return SampledStaircase(xs, ys)


@dataclass
class DiniEstimate:
    """Numerical surrogate for a one-sided Dini derivative.

    The quotient sequence records (h, (f(x0+h)-f(x0))/h) with h signed by
    side.  The verdict is a finite-scheme stand-in for the limsup/liminf: no
    finite sample can certify an infinite derivative, so "diverging" means
    sustained geometric growth per the (theta, m) rule.
    """

    point: float
    side: Side
    envelope: Envelope
    quotients: list[tuple[float, float]]
    verdict: Literal["finite", "diverging", "inconclusive"]
    value: float | None = None

    @property
    def max_quotient(self) -> float:
        return max(q for _, q in self.quotients)


def _as_exact(value) -> Fraction | None:
    if isinstance(value, (Fraction, int)):
        return Fraction(value)
    return None


def dini(
    f: StaircaseFunction,
    x0,
    side: Side = "right",
    envelope: Envelope = "upper",
    h_schedule: Sequence = DEFAULT_H_SCHEDULE,
    theta: float = 1.2,
    m: int = 4,
    settle_rtol: float = 0.05,
    settle_atol: float = 1e-12,
) -> DiniEstimate:
    """Estimate a one-sided Dini derivative of f at x0 along a decreasing step schedule.

    Verdicts: "diverging" when the last m quotients grow strictly in
    magnitude with ratio >= theta; "finite" when the last m quotients have
    settled (spread within max(settle_atol, settle_rtol * scale)), reporting
    the max (upper) or min (lower) of those tail quotients; otherwise
    "inconclusive".

    When f supports exact evaluation and x0 / the schedule are exact
    rationals, the quotients are computed in rational arithmetic.
    """
    hs = list(h_schedule)
    if not hs:
        raise SpecValidationError("h_schedule must be nonempty")
    if any(h <= 0 for h in hs) or any(b >= a for a, b in zip(hs, hs[1:])):
        raise SpecValidationError("h_schedule must be positive and strictly decreasing")

    x0_exact = _as_exact(x0) if f.exact else None
    quotients: list[tuple[float, float]] = []
    for h in hs:
        h_exact = _as_exact(h)
        if x0_exact is not None and h_exact is not None:
            step = h_exact if side == "right" else -h_exact
            q = (f.eval_rational(x0_exact + step) - f.eval_rational(x0_exact)) / step
            quotients.append((float(step), float(q)))
        else:
            hf = float(h)
            step = hf if side == "right" else -hf
            q = (f(float(x0) + step) - f(float(x0))) / step
            quotients.append((step, q))

    values = [q for _, q in quotients]
    tail = values[-m:]
    verdict: str = "inconclusive"
    value: float | None = None
    mags = [abs(v) for v in tail]
    if len(tail) == m and all(b >= theta * a and b > a for a, b in zip(mags, mags[1:])):
        verdict = "diverging"
    else:
        scale = max(mags) if mags else 0.0
        if max(tail) - min(tail) <= max(settle_atol, settle_rtol * scale):
            verdict = "finite"
            value = max(tail) if envelope == "upper" else min(tail)
    return DiniEstimate(
        point=float(x0),
        side=side,
        envelope=envelope,
        quotients=quotients,
        verdict=verdict,  # type: ignore[arg-type]
        value=value,
    )


def find_infinite_dini(
    f: StaircaseFunction,
    interval: tuple,
    scan_grid_resolution: int = 81,
    threshold: float = 50.0,
    h_schedule: Sequence = DEFAULT_H_SCHEDULE,
) -> list[tuple[float, float]]:
    """Scan an interval for points whose upper-right difference quotients blow up.

    Runs `dini` at each of scan_grid_resolution+1 equispaced grid points
    (steps clipped to the interval) and returns (point, max quotient) for
    every point whose maximal quotient exceeds threshold, sorted by quotient
    descending.  The scan is a heuristic locator: blow-up points between
    grid nodes can be missed.
    """
    a, b = interval
    a_q, b_q = Fraction(a), Fraction(b)
    if not b_q > a_q:
        raise DomainError(f"empty interval [{float(a_q)}, {float(b_q)}]")
    if threshold <= 0:
        raise SpecValidationError("threshold must be > 0")
    if scan_grid_resolution < 1:
        raise SpecValidationError("scan_grid_resolution must be >= 1")

    width = b_q - a_q
    hits: list[tuple[float, float]] = []
    for i in range(scan_grid_resolution + 1):
        x0 = a_q + width * Fraction(i, scan_grid_resolution)
        usable = [h for h in h_schedule if x0 + Fraction(h) <= b_q]
        if not usable:
            continue
        est = dini(f, x0, side="right", envelope="upper", h_schedule=usable)
        mq = est.max_quotient
        if mq > threshold:
            hits.append((float(x0), mq))
    hits.sort(key=lambda pair: -pair[1])
    return hits


@dataclass
class LebesgueDecomposition:
    """Grid decomposition F = cumulative(g)*step + S with S nondecreasing.

    `g` has one entry per grid interval; `cumulative` is the per-grid-point
    float running sum sum_{j<i} g_j * step, recorded so that the
    reconstruction identity holds bit-for-bit with the returned arrays.
    """

    step: float
    values: np.ndarray
    density: np.ndarray
    singular: np.ndarray
    cumulative: np.ndarray = field(repr=False)

    def reconstruction(self) -> np.ndarray:
        return self.cumulative + self.singular


def _median_of_calm_neighbors(d: np.ndarray, i: int, kappa: float, window: int) -> float:
    half = window // 2
    lo, hi = max(0, i - half), min(d.size, i + half + 1)
    nbrs = [d[j] for j in range(lo, hi) if j != i and d[j] <= kappa]
    if not nbrs:
        return 0.0
    return float(np.median(nbrs))


def lebesgue_decompose(
    values: Sequence[float],
    step: float,
    kappa: float = 10.0,
    window: int = 5,
) -> LebesgueDecomposition:
    """Split a nondecreasing grid function into a density and a singular part.

    The density is the per-interval difference quotient with a cap: quotients
    above kappa are treated as singular mass and replaced by the median of
    calm neighbors in a `window`-wide stencil.  The singular part is the
    remainder F - cumulative(g)*step, made nondecreasing by capping each
    increment (never below zero) during a single left-to-right pass; the
    reconstruction F == cumulative + S is maintained exactly in floats.
    """
    F = np.asarray(values, dtype=float)
    if F.ndim != 1 or F.size < 2:
        raise SpecValidationError("need a 1-d grid function with >= 2 samples")
    if step <= 0:
        raise SpecValidationError("grid step must be > 0")
    diffs = np.diff(F)
    bad = np.flatnonzero(diffs < 0)
    if bad.size:
        i = int(bad[0])
        raise SpecValidationError(
            f"input is not nondecreasing: F[{i + 1}]={F[i + 1]!r} < F[{i}]={F[i]!r}"
        )

    d = diffs / step
    g = d.copy()
    for i in np.flatnonzero(d > kappa):
        g[i] = min(_median_of_calm_neighbors(d, int(i), kappa, window), kappa)

    n = F.size
    cum = np.zeros(n)
    S = np.empty(n)
    S[0] = F[0]
    for i in range(n - 1):
        gi = g[i]
        inc = gi * step
        # Monotone projection: never let S dip below its running level.
        if F[i + 1] - (cum[i] + inc) < S[i]:
            gi = max(F[i + 1] - S[i] - cum[i], 0.0) / step
            inc = gi * step
            while F[i + 1] - (cum[i] + inc) < S[i] and gi > 0.0:
                gi = math.nextafter(gi, 0.0)
                inc = gi * step
        g[i] = gi
        c_next = cum[i] + inc
        s_next = F[i + 1] - c_next
        # Float safety: the returned arrays must satisfy cum + S == F exactly.
        while c_next + s_next != F[i + 1]:
            s_next = math.nextafter(
                s_next, math.inf if c_next + s_next < F[i + 1] else -math.inf
            )
        if s_next < S[i] and c_next + S[i] == F[i + 1]:
            s_next = S[i]
        cum[i + 1] = c_next
        S[i + 1] = s_next
    return LebesgueDecomposition(step=float(step), values=F, density=g, singular=S, cumulative=cum)
