"""Process specifications and path samplers.

Four spec kinds are supported, all one-dimensional:

* `LevyTriplet` - constant drift/diffusion plus a finite-activity jump list;
  sampled exactly in law on the grid (Gaussian increments, exponential jump
  inter-arrivals inserted as extra grid points).
* `DiffChar` - state-dependent coefficients (polynomial or tabulated),
  sampled with a weak-order-1 Euler scheme with state-frozen coefficients.
* `ClockedProcess` - a triplet run in operational time tau = F(t) for an
  identity clock, a state-density clock dF = g(X) dt, or a deterministic
  staircase clock F.
* `DetFamily` - the deterministic sawtooth / quadratic families, evaluated
  in closed form.

Randomness is counter-based (Philox keyed from a hash of the seed and the
block/path label), so ensembles are bit-reproducible regardless of worker
count and paths are independent of how the ensemble is chunked.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence, Union

import numpy as np

from .errors import DomainError, SimulationError, SpecValidationError
from .singular import StaircaseFunction

#: Euler defaults: preferred step and the largest accepted step.
DEFAULT_DT = 1e-3
MAX_DT = 1e-2

#: Paths per RNG block in ensemble sampling.
BLOCK = 8192

#: Sentinel returned by first_exit_time when the path never leaves the ball.
NO_EXIT = math.inf


def derive_rng(*parts) -> np.random.Generator:
    """Philox generator keyed from a stable hash of the given labels."""
    label = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(label.encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def _fingerprint(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Coefficients and jump-size samplers
# ---------------------------------------------------------------------------


class Coefficient:
    """Deterministic, vectorizable state-to-value map."""

    def __call__(self, x):
        raise NotImplementedError

    def to_config(self):
        raise NotImplementedError


@dataclass
class PolyCoefficient(Coefficient):
    """Polynomial in x with ascending coefficients."""

    coeffs: tuple[float, ...]

    def __init__(self, coeffs: Sequence[float]):
        self.coeffs = tuple(float(c) for c in coeffs)

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(x, self.coeffs)

    def to_config(self):
        if len(self.coeffs) == 1:
            return self.coeffs[0]
        return {"kind": "poly", "coeffs": list(self.coeffs)}


@dataclass
class TableCoefficient(Coefficient):
    """Continuous piecewise-linear map on a bounded grid; evaluation outside is an error."""

    xs: np.ndarray
    ys: np.ndarray

    def __init__(self, xs: Sequence[float], ys: Sequence[float]):
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        if self.xs.ndim != 1 or self.xs.size < 2 or self.xs.shape != self.ys.shape:
            raise SpecValidationError("table coefficient needs two equal-length columns (>= 2 rows)")
        if not np.all(np.diff(self.xs) > 0):
            raise SpecValidationError("table coefficient grid must be strictly increasing")

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        if arr.min() < self.xs[0] or arr.max() > self.xs[-1]:
            off = float(arr.min() if arr.min() < self.xs[0] else arr.max())
            raise DomainError(f"state {off} outside tabulated range [{self.xs[0]}, {self.xs[-1]}]")
        return np.interp(arr, self.xs, self.ys)

    def to_config(self):
        return {"kind": "table", "x": self.xs.tolist(), "y": self.ys.tolist()}


def make_coefficient(value) -> Coefficient:
    """Coerce a config value (number, poly dict, or table dict) to a Coefficient."""
    if isinstance(value, Coefficient):
        return value
    if isinstance(value, (int, float)):
        return PolyCoefficient([float(value)])
    if isinstance(value, dict):
        kind = value.get("kind")
        if kind == "poly":
            return PolyCoefficient(value["coeffs"])
        if kind == "table":
            return TableCoefficient(value["x"], value["y"])
    raise SpecValidationError(f"cannot interpret coefficient {value!r}")


class JumpSize:
    """Jump-size law with exact sampling and a closed-form / quadrature hook for expectations."""

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def sum_over(self, rng: np.random.Generator, counts: np.ndarray) -> np.ndarray:
        """Sum of `counts[i]` independent sizes for each slot i (vectorized)."""
        total = int(counts.sum())
        out = np.zeros(counts.shape, dtype=float)
        if total:
            idx = np.repeat(np.arange(counts.size), counts)
            np.add.at(out, idx, self.draw(rng, total))
        return out

    def to_config(self):
        raise NotImplementedError


@dataclass
class ConstantJump(JumpSize):
    value: float

    def draw(self, rng, n):
        return np.full(n, self.value)

    def sum_over(self, rng, counts):
        return counts * self.value

    def to_config(self):
        return {"kind": "constant", "value": self.value}


@dataclass
class UniformJump(JumpSize):
    a: float
    b: float

    def __post_init__(self):
        if not self.b > self.a:
            raise SpecValidationError(f"uniform jump needs a < b, got [{self.a}, {self.b}]")

    def draw(self, rng, n):
        return rng.uniform(self.a, self.b, n)

    def to_config(self):
        return {"kind": "uniform", "a": self.a, "b": self.b}


@dataclass
class TwoPointJump(JumpSize):
    first: float
    second: float
    p_first: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.p_first <= 1.0:
            raise SpecValidationError(f"two-point weight must be in [0, 1], got {self.p_first}")

    def draw(self, rng, n):
        pick = rng.random(n) < self.p_first
        return np.where(pick, self.first, self.second)

    def to_config(self):
        return {"kind": "two_point", "first": self.first, "second": self.second, "p_first": self.p_first}


def make_jump_size(value) -> JumpSize:
    if isinstance(value, JumpSize):
        return value
    if isinstance(value, dict):
        kind = value.get("kind")
        if kind == "constant":
            return ConstantJump(float(value["value"]))
        if kind == "uniform":
            return UniformJump(float(value["a"]), float(value["b"]))
        if kind == "two_point":
            return TwoPointJump(
                float(value["first"]), float(value["second"]), float(value.get("p_first", 0.5))
            )
    raise SpecValidationError(f"cannot interpret jump size {value!r}")


@dataclass
class JumpComponent:
    """Finite-activity jump stream: arrival rate per unit (operational) time plus a size law."""

    rate: float
    size: JumpSize

    def __post_init__(self):
        if self.rate < 0:
            raise SpecValidationError(f"jump rate must be >= 0, got {self.rate}")
        self.size = make_jump_size(self.size)

    def to_config(self):
        return {"rate": self.rate, "size": self.size.to_config()}


@dataclass
class StateJumpComponent:
    """Jump stream with state-dependent rate x -> rate(x) and a fixed size law."""

    rate: Coefficient
    size: JumpSize

    def __post_init__(self):
        self.rate = make_coefficient(self.rate)
        self.size = make_jump_size(self.size)

    def to_config(self):
        return {"rate": self.rate.to_config(), "size": self.size.to_config()}


# ---------------------------------------------------------------------------
# Process specs
# ---------------------------------------------------------------------------


@dataclass
class LevyTriplet:
    """Constant coefficients (drift, diffusion, finite jump list)."""

    drift: float = 0.0
    diffusion: float = 0.0
    jumps: list[JumpComponent] = field(default_factory=list)

    kind = "levy"

    def __post_init__(self):
        if self.diffusion < 0:
            raise SpecValidationError(f"diffusion must be >= 0, got {self.diffusion}")
        self.jumps = [
            j if isinstance(j, JumpComponent) else JumpComponent(**j) for j in self.jumps
        ]

    @property
    def total_rate(self) -> float:
        return sum(j.rate for j in self.jumps)

    def to_config(self) -> dict:
        return {
            "kind": self.kind,
            "drift": self.drift,
            "diffusion": self.diffusion,
            "jumps": [j.to_config() for j in self.jumps],
        }

    @property
    def fingerprint(self) -> str:
        return _fingerprint(self.to_config())


@dataclass
class DiffChar:
    """State-dependent differential characteristics (drift, diffusion, jump kernel)."""

    drift: Coefficient
    diffusion: Coefficient
    jumps: list[StateJumpComponent] = field(default_factory=list)

    kind = "levy_type"

    def __post_init__(self):
        self.drift = make_coefficient(self.drift)
        self.diffusion = make_coefficient(self.diffusion)
        self.jumps = [
            j if isinstance(j, StateJumpComponent) else StateJumpComponent(**j)
            for j in self.jumps
        ]

    def to_config(self) -> dict:
        return {
            "kind": self.kind,
            "drift": self.drift.to_config(),
            "diffusion": self.diffusion.to_config(),
            "jumps": [j.to_config() for j in self.jumps],
        }

    @property
    def fingerprint(self) -> str:
        return _fingerprint(self.to_config())


@dataclass
class ClockSpec:
    """Operational-time clock: identity, dF = g(X) dt, or a deterministic staircase F(t)."""

    kind: Literal["identity", "ac_of_state", "staircase"] = "identity"
    g: Coefficient | None = None
    staircase: StaircaseFunction | None = None

    def __post_init__(self):
        if self.kind == "ac_of_state":
            if self.g is None:
                raise SpecValidationError("ac_of_state clock needs a density g")
            self.g = make_coefficient(self.g)
        elif self.kind == "staircase":
            if self.staircase is None:
                raise SpecValidationError("staircase clock needs a staircase function")
        elif self.kind != "identity":
            raise SpecValidationError(f"unknown clock kind {self.kind!r}")

    def to_config(self) -> dict:
        if self.kind == "identity":
            return {"kind": "identity"}
        if self.kind == "ac_of_state":
            return {"kind": "ac_of_state", "g": self.g.to_config()}
        return {"kind": "staircase", "function": self.staircase.describe()}


@dataclass
class ClockedProcess:
    """A constant-coefficient triplet run through an operational-time clock."""

    base: LevyTriplet
    clock: ClockSpec

    kind = "clocked"

    def to_config(self) -> dict:
        return {"kind": self.kind, "base": self.base.to_config(), "clock": self.clock.to_config()}

    @property
    def fingerprint(self) -> str:
        return _fingerprint(self.to_config())


@dataclass
class DetFamily:
    """Deterministic Markov family, evaluated in closed form.

    sawtooth: from x the path drifts at unit speed and wraps to floor(x)
    just before reaching floor(x) + 1.  quadratic: the canonical trajectory
    f(u) = floor(u)^2 + frac(u)/2 started on its orbit
    {m^2 + s/2 : m in N0, s in [0, 1)}.
    """

    family: Literal["sawtooth", "quadratic"]

    kind = "det_family"

    def __post_init__(self):
        if self.family not in ("sawtooth", "quadratic"):
            raise SpecValidationError(f"unknown deterministic family {self.family!r}")

    def evaluate(self, x: float, t: float) -> float:
        return det_family_eval(self, x, t)

    def to_config(self) -> dict:
        return {"kind": self.kind, "family": self.family}

    @property
    def fingerprint(self) -> str:
        return _fingerprint(self.to_config())


ProcessSpec = Union[LevyTriplet, DiffChar, ClockedProcess, DetFamily]


# ---------------------------------------------------------------------------
# Path container
# ---------------------------------------------------------------------------


@dataclass
class PathSample:
    """One discretized trajectory on a time grid."""

    times: np.ndarray
    states: np.ndarray
    seed: int
    fingerprint: str
    start: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.shape != self.states.shape:
            raise SpecValidationError("times and states must have equal length")
        if self.times[0] != 0.0:
            raise SpecValidationError("time grid must start at 0")
        if np.any(np.diff(self.times) <= 0):
            raise SpecValidationError("time grid must be strictly increasing")
        if self.states[0] != self.start:
            raise SpecValidationError("state[0] must equal the configured start")


def _validate_grid(t_grid) -> np.ndarray:
    grid = np.asarray(t_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise SpecValidationError("time grid needs at least two points")
    if grid[0] != 0.0:
        raise SpecValidationError("time grid must start at 0")
    if np.any(np.diff(grid) <= 0):
        raise SpecValidationError("time grid must be strictly increasing")
    return grid


def uniform_grid(horizon: float, n_steps: int) -> np.ndarray:
    if horizon <= 0 or n_steps < 1:
        raise SpecValidationError("horizon must be > 0 and n_steps >= 1")
    return np.linspace(0.0, horizon, n_steps + 1)


# ---------------------------------------------------------------------------
# Exact single-path sampling (constant coefficients, deterministic clock)
# ---------------------------------------------------------------------------


def _clock_inverse(clock_eval: Callable[[float], float], target: float, lo: float, hi: float) -> float:
    """First t in [lo, hi] with F(t) >= target, for continuous nondecreasing F."""
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if clock_eval(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def _single_exact_path(
    triplet: LevyTriplet,
    clock_eval: Callable[[float], float] | None,
    x0: float,
    t_grid: np.ndarray,
    seed: int,
    fingerprint: str,
) -> PathSample:
    rng = derive_rng(seed, "path")
    F_grid = t_grid if clock_eval is None else np.array([clock_eval(t) for t in t_grid])
    dF = np.diff(F_grid)
    if np.any(dF < 0):
        raise SpecValidationError("clock must be nondecreasing along the grid")

    lam = triplet.total_rate
    span_op = float(F_grid[-1] - F_grid[0])
    arrivals_op: list[float] = []
    if lam > 0 and span_op > 0:
        s = rng.exponential(1.0 / lam)
        while s < span_op:
            arrivals_op.append(s)
            s += rng.exponential(1.0 / lam)

    # Map operational arrival times back to calendar times.
    arrival_times: list[float] = []
    for s in arrivals_op:
        level = F_grid[0] + s
        j = int(np.searchsorted(F_grid, level, side="left"))
        j = min(max(j, 1), len(F_grid) - 1)
        if clock_eval is None:
            arrival_times.append(level)
        else:
            arrival_times.append(
                _clock_inverse(clock_eval, level, float(t_grid[j - 1]), float(t_grid[j]))
            )

    jump_sizes: dict[float, float] = {}
    rates = np.array([j.rate for j in triplet.jumps]) if triplet.jumps else np.zeros(0)
    for at in arrival_times:
        u = rng.random()
        comp = int(np.searchsorted(np.cumsum(rates) / lam, u, side="right")) if lam > 0 else 0
        comp = min(comp, len(triplet.jumps) - 1)
        size = float(triplet.jumps[comp].size.draw(rng, 1)[0])
        jump_sizes[at] = jump_sizes.get(at, 0.0) + size

    times = np.unique(np.concatenate([t_grid, np.array(arrival_times)]))
    F_times = times if clock_eval is None else np.array([clock_eval(t) for t in times])
    dF_seg = np.diff(F_times)
    normals = rng.standard_normal(dF_seg.size)

    states = np.empty(times.size)
    states[0] = x0
    x = x0
    for i, (dfi, z) in enumerate(zip(dF_seg, normals)):
        x = x + triplet.drift * dfi + math.sqrt(triplet.diffusion * dfi) * z
        x += jump_sizes.get(float(times[i + 1]), 0.0)
        states[i + 1] = x
    return PathSample(times=times, states=states, seed=seed, fingerprint=fingerprint, start=x0)


def simulate_levy(triplet: LevyTriplet, x0: float, t_grid, seed: int) -> PathSample:
    """Sample a constant-coefficient path, exact in law on the grid.

    Gaussian increments have mean drift*dt and variance diffusion*dt; jumps
    arrive at exact exponential inter-arrival times which are inserted into
    the returned grid.
    """
    grid = _validate_grid(t_grid)
    return _single_exact_path(triplet, None, x0, grid, seed, triplet.fingerprint)


def simulate_clocked(triplet: LevyTriplet, clock: ClockSpec, x0: float, t_grid, seed: int) -> PathSample:
    """Run a triplet in operational time tau = F(t).

    The identity clock reproduces `simulate_levy` bit-for-bit for the same
    seed; a staircase clock uses the deterministic increments
    dF = F(t_{k+1}) - F(t_k); a state-density clock delegates to the Euler
    scheme with coefficients scaled by g(X).
    """
    grid = _validate_grid(t_grid)
    spec = ClockedProcess(triplet, clock)
    if clock.kind == "identity":
        return _single_exact_path(triplet, None, x0, grid, seed, spec.fingerprint)
    if clock.kind == "staircase":
        return _single_exact_path(triplet, clock.staircase, x0, grid, seed, spec.fingerprint)
    char = _scaled_char(triplet, clock.g)
    return _euler_single_path(char, x0, grid, seed, spec.fingerprint)


def _scaled_char(triplet: LevyTriplet, g: Coefficient) -> DiffChar:
    """Triplet with all characteristics running at speed g(x): (l*g, Q*g, N*g)."""

    class _Scaled(Coefficient):
        def __init__(self, factor: float, g: Coefficient):
            self.factor = factor
            self.g = g

        def __call__(self, x):
            return self.factor * np.asarray(self.g(x), dtype=float)

        def to_config(self):
            return {"kind": "poly", "coeffs": [self.factor]}  # config round-trip not needed here

    return DiffChar(
        drift=_Scaled(triplet.drift, g),
        diffusion=_Scaled(triplet.diffusion, g),
        jumps=[StateJumpComponent(rate=_Scaled(j.rate, g), size=j.size) for j in triplet.jumps],
    )


# ---------------------------------------------------------------------------
# Euler sampling (state-dependent coefficients)
# ---------------------------------------------------------------------------


def _euler_single_path(
    char: DiffChar, x0: float, t_grid: np.ndarray, seed: int, fingerprint: str, max_dt: float = MAX_DT
) -> PathSample:
    dts = np.diff(t_grid)
    if np.any(dts > max_dt * (1 + 1e-12)):
        raise SpecValidationError(f"Euler step exceeds max dt {max_dt}")
    rng = derive_rng(seed, "path")
    states = np.empty(t_grid.size)
    states[0] = x0
    x = x0
    for i, dt in enumerate(dts):
        ell = float(char.drift(x))
        q = float(char.diffusion(x))
        if q < 0:
            raise SimulationError(f"negative diffusion coefficient {q} at x={x}")
        z = rng.standard_normal()
        x = x + ell * dt + math.sqrt(q * dt) * z
        for comp in char.jumps:
            lam = float(comp.rate(states[i]))
            if lam < 0:
                raise SimulationError(f"negative jump rate {lam} at x={states[i]}")
            count = int(rng.poisson(lam * dt))
            if count:
                x += float(comp.size.draw(rng, count).sum())
        states[i + 1] = x
    return PathSample(times=t_grid, states=states, seed=seed, fingerprint=fingerprint, start=x0)


def simulate_levy_type(char: DiffChar, x0: float, t_grid, seed: int) -> PathSample:
    """Euler scheme with state-frozen coefficients per step (weak order 1)."""
    grid = _validate_grid(t_grid)
    return _euler_single_path(char, x0, grid, seed, char.fingerprint)


# ---------------------------------------------------------------------------
# Ensemble kernel (vectorized across paths, block-keyed RNG)
# ---------------------------------------------------------------------------


def _operational_increments(spec: ProcessSpec, t_grid: np.ndarray):
    """(dF array, euler_char) - exactly one of the two is not None."""
    if isinstance(spec, LevyTriplet):
        return np.diff(t_grid), None
    if isinstance(spec, ClockedProcess):
        if spec.clock.kind == "identity":
            return np.diff(t_grid), None
        if spec.clock.kind == "staircase":
            F = np.array([spec.clock.staircase(t) for t in t_grid])
            dF = np.diff(F)
            if np.any(dF < 0):
                raise SpecValidationError("clock must be nondecreasing along the grid")
            return dF, None
        return None, _scaled_char(spec.base, spec.clock.g)
    if isinstance(spec, DiffChar):
        return None, spec
    raise SpecValidationError(f"cannot sample ensemble for spec kind {getattr(spec, 'kind', spec)!r}")


def _base_triplet(spec: ProcessSpec) -> LevyTriplet:
    return spec.base if isinstance(spec, ClockedProcess) else spec


def _propagate_block(
    spec: ProcessSpec,
    x0: float,
    t_grid: np.ndarray,
    dF,
    char,
    k: float | None,
    rng: np.random.Generator,
    n: int,
    checkpoints: np.ndarray | None = None,
):
    """Advance one block of paths over the grid.

    Returns (stopped final states, running-sup at checkpoints or None).
    With a stopping radius k, a path freezes at the first grid state with
    |X - x0| > k (the overshoot value is kept, matching the stopped process).
    """
    x = np.full(n, x0)
    frozen = np.zeros(n, dtype=bool)
    sup = np.zeros(n)
    cp_out = None
    cp_idx = None
    if checkpoints is not None:
        cp_out = np.zeros((n, checkpoints.size))
        cp_idx = np.searchsorted(t_grid, checkpoints)

    dts = np.diff(t_grid)
    for i, dt in enumerate(dts):
        if char is None:
            df = dF[i]
            ell = _base_triplet(spec).drift
            q = _base_triplet(spec).diffusion
            drift_term = ell * df
            vol = math.sqrt(q * df)
            z = rng.standard_normal(n)
            inc = drift_term + vol * z
            for comp in _base_triplet(spec).jumps:
                counts = rng.poisson(comp.rate * df, n)
                inc = inc + comp.size.sum_over(rng, counts)
        else:
            ell = np.asarray(char.drift(x), dtype=float)
            q = np.asarray(char.diffusion(x), dtype=float)
            if np.any(q < 0):
                bad = float(x[np.argmin(q)])
                raise SimulationError(f"negative diffusion coefficient at x={bad}")
            z = rng.standard_normal(n)
            inc = ell * dt + np.sqrt(q * dt) * z
            for comp in char.jumps:
                lam = np.asarray(comp.rate(x), dtype=float)
                if np.any(lam < 0):
                    bad = float(x[np.argmin(lam)])
                    raise SimulationError(f"negative jump rate at x={bad}")
                counts = rng.poisson(lam * dt)
                inc = inc + comp.size.sum_over(rng, counts)
        x = np.where(frozen, x, x + inc)
        dev = np.abs(x - x0)
        sup = np.maximum(sup, dev)
        if k is not None:
            frozen = frozen | (dev > k)
        if cp_out is not None:
            hit = cp_idx == (i + 1)
            if np.any(hit):
                cp_out[:, hit] = sup[:, None]
    return x, cp_out


def _block_ranges(n_paths: int):
    return [(b, min(b + BLOCK, n_paths)) for b in range(0, n_paths, BLOCK)]


def ensemble_final_states(
    spec: ProcessSpec,
    x0: float,
    t_grid,
    n_paths: int,
    seed: int,
    k: float | None = None,
    n_workers: int = 1,
    stream: str = "ens",
) -> np.ndarray:
    """Stopped states X^sigma_T at the final grid time for n_paths paths.

    Path i's randomness depends only on (seed, stream, i // BLOCK); outputs
    are merged in path-index order, so results are bit-identical for any
    worker count.
    """
    grid = _validate_grid(t_grid)
    dF, char = _operational_increments(spec, grid)
    out = np.empty(n_paths)

    def run(block):
        lo, hi = block
        rng = derive_rng(seed, stream, lo // BLOCK)
        final, _ = _propagate_block(spec, x0, grid, dF, char, k, rng, hi - lo)
        out[lo:hi] = final

    blocks = _block_ranges(n_paths)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run, blocks))
    else:
        for block in blocks:
            run(block)
    return out


def ensemble_running_sup(
    spec: ProcessSpec,
    x0: float,
    checkpoints,
    dt: float,
    n_paths: int,
    seed: int,
    n_workers: int = 1,
) -> np.ndarray:
    """(n_paths, len(checkpoints)) running suprema of |X - x0| on a uniform grid."""
    cps = np.asarray(checkpoints, dtype=float)
    if np.any(cps <= 0) or np.any(np.diff(cps) <= 0):
        raise SpecValidationError("checkpoints must be positive and strictly increasing")
    horizon = float(cps[-1])
    n_steps = max(1, int(math.ceil(horizon / dt)))
    grid = np.linspace(0.0, horizon, n_steps + 1)
    grid = np.unique(np.concatenate([grid, cps]))
    grid = np.concatenate([[0.0], grid[grid > 0]])
    dF, char = _operational_increments(spec, grid)
    out = np.empty((n_paths, cps.size))

    def run(block):
        lo, hi = block
        rng = derive_rng(seed, "sup", lo // BLOCK)
        _, sups = _propagate_block(spec, x0, grid, dF, char, None, rng, hi - lo, checkpoints=cps)
        out[lo:hi] = sups

    blocks = _block_ranges(n_paths)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run, blocks))
    else:
        for block in blocks:
            run(block)
    return out


# ---------------------------------------------------------------------------
# Deterministic families
# ---------------------------------------------------------------------------


def _frac(y: float) -> float:
    return y - math.floor(y)


def det_family_eval(family: DetFamily, x: float, t: float) -> float:
    """Evaluate a deterministic family at start x and elapsed time t >= 0."""
    if t < 0:
        raise DomainError(f"time must be >= 0, got {t}")
    if family.family == "sawtooth":
        return math.floor(x) + _frac(x + t)
    # quadratic: decode (m, s) with m^2 <= x < m^2 + 1/2, s = 2(x - m^2)
    if x < 0:
        raise DomainError(f"quadratic family start must satisfy m^2 <= x < m^2 + 1/2; got {x} < 0")
    m = math.isqrt(math.floor(x))
    if not (m * m <= x < m * m + 0.5):
        raise DomainError(
            f"start {x} is off-orbit for the quadratic family (decode rule m^2 <= x < m^2 + 1/2)"
        )
    s = 2.0 * (x - m * m)
    tau = m + s
    u = tau + t
    return math.floor(u) ** 2 + _frac(u) / 2.0


def det_family_path(family: DetFamily, x: float, t_grid) -> PathSample:
    """Tabulate a deterministic family on a grid as a PathSample (seed 0, no randomness)."""
    grid = _validate_grid(t_grid)
    states = np.array([det_family_eval(family, x, t) for t in grid])
    return PathSample(times=grid, states=states, seed=0, fingerprint=family.fingerprint, start=x)


# ---------------------------------------------------------------------------
# Exit times and time homogeneity
# ---------------------------------------------------------------------------


def first_exit_time(path: PathSample, x: float, k: float) -> float:
    """First grid time with |state - x| > k (strict); NO_EXIT if the path never leaves."""
    if k <= 0:
        raise SpecValidationError(f"radius k must be > 0, got {k}")
    hits = np.flatnonzero(np.abs(path.states - x) > k)
    return float(path.times[hits[0]]) if hits.size else NO_EXIT


@dataclass
class HomogeneityReport:
    """Outcome of the deterministic-family time-homogeneity probe."""

    passed: bool
    pairs_checked: int
    witness: tuple | None = None  # (x, s, y, t, h, value_x, value_y)

    def __bool__(self):
        return self.passed


def check_time_homogeneity(
    family,
    xs: Sequence[float],
    times: Sequence[float],
    hs: Sequence[float],
    tol: float = 1e-12,
) -> HomogeneityReport:
    """Check f_x(s) == f_y(t)  =>  f_x(s+h) == f_y(t+h) on a finite probe grid.

    `family` is a DetFamily or any callable (x, t) -> value.  Returns pass
    or the first violating tuple in scan order (x, s, y, t, then h).
    """
    ev = family.evaluate if isinstance(family, DetFamily) else family
    xs = list(xs)
    times = list(times)
    hs = list(hs)
    base = [[ev(x, t) for t in times] for x in xs]
    shifted = {h: [[ev(x, t + h) for t in times] for x in xs] for h in hs}

    checked = 0
    for i, x in enumerate(xs):
        for a, s in enumerate(times):
            for j, y in enumerate(xs):
                for b, t in enumerate(times):
                    if abs(base[i][a] - base[j][b]) > tol:
                        continue
                    checked += 1
                    for h in hs:
                        v1 = shifted[h][i][a]
                        v2 = shifted[h][j][b]
                        if abs(v1 - v2) > tol:
                            return HomogeneityReport(
                                passed=False,
                                pairs_checked=checked,
                                witness=(x, s, y, t, h, v1, v2),
                            )
    return HomogeneityReport(passed=True, pairs_checked=checked)


# ---------------------------------------------------------------------------
# Path CSV export
# ---------------------------------------------------------------------------


def export_paths_csv(paths: Sequence[PathSample], file) -> None:
    """Write paths as CSV rows (path_id, t, x) with round-trippable float formatting."""
    writer = csv.writer(file)
    writer.writerow(["path_id", "t", "x"])
    for pid, path in enumerate(paths):
        for t, x in zip(path.times, path.states):
            writer.writerow([pid, repr(float(t)), repr(float(x))])


def read_paths_csv(file) -> list[tuple[np.ndarray, np.ndarray]]:
    """Read (times, states) per path id from the CSV schema written by export_paths_csv."""
    rows = list(csv.reader(file))
    if rows and rows[0] == ["path_id", "t", "x"]:
        rows = rows[1:]
    by_id: dict[int, list[tuple[float, float]]] = {}
    for pid_s, t_s, x_s in rows:
        by_id.setdefault(int(pid_s), []).append((float(t_s), float(x_s)))
    return [
        (np.array([t for t, _ in pts]), np.array([x for _, x in pts]))
        for _, pts in sorted(by_id.items())
    ]
