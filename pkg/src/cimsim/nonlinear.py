"""Half-precision nonlinear datapath: 64-segment piecewise-linear exp LUT,
group softmax, and group RMSNorm with optional global synchronization,
plus wide-precision oracles and the fusion latency model.

Rounding discipline: the simulated datapath stores values as IEEE binary16
and rounds to nearest-even after every operation.  One "operation" is one
hardware step: an elementwise multiply-add (the a*x+b MAC), a divide, or a
full adder-tree reduction.  Reductions accumulate wide and round once at
the tree root, which is what a digital carry-save tree does; rounding every
partial add instead would inject error the hardware does not have.

Oracles (exact_softmax, exact_rmsnorm) run entirely in float64.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .costmodel import DomainError

LUT_SEGMENTS = 64


def fp16(x):
    """Round to binary16 (nearest even), returned as float64 values."""
    return np.float16(x).astype(np.float64) if np.ndim(x) else float(np.float16(x))


def fp16_ulps(a, b):
    """Distance in binary16 representable steps between a and b (scalars or
    arrays), after rounding both to binary16."""
    ha = np.atleast_1d(np.float16(a)).view(np.uint16).astype(np.int32)
    hb = np.atleast_1d(np.float16(b)).view(np.uint16).astype(np.int32)
    ka = np.where(ha & 0x8000, -(ha & 0x7FFF), ha)
    kb = np.where(hb & 0x8000, -(hb & 0x7FFF), hb)
    d = np.abs(ka - kb)
    return int(d[0]) if np.ndim(a) == 0 and np.ndim(b) == 0 else d


class AccumulationMode(Enum):
    FULL = "full"        # tree reduces all lanes to one scalar
    PARTIAL = "partial"  # per-lane a*x+b results emitted in parallel


@dataclass(frozen=True)
class LutSegment:
    a: float  # slope, a binary16 value
    b: float  # intercept, a binary16 value


@dataclass(frozen=True)
class LutTable:
    """Uniform piecewise-linear approximation of exp over [domain_lo, domain_hi].

    Out-of-range policy: inputs below domain_lo evaluate to 0 (the true exp
    is below binary16 softmax significance there); inputs above domain_hi
    clamp to exp(domain_hi)."""
    segments: tuple
    domain_lo: float = -8.0
    domain_hi: float = 0.0

    def __post_init__(self):
        if len(self.segments) != LUT_SEGMENTS:
            raise DomainError(f"expected {LUT_SEGMENTS} segments, "
                              f"got {len(self.segments)}")
        if not self.domain_lo < self.domain_hi:
            raise DomainError("domain_lo must be < domain_hi")

    @property
    def width(self):
        return (self.domain_hi - self.domain_lo) / LUT_SEGMENTS

    def segment_bounds(self, idx):
        lo = self.domain_lo + idx * self.width
        return lo, lo + self.width

    def eval(self, x):
        """Evaluate at binary16 granularity: index the segment, then one
        multiply-add rounded once (the CIM adder tree computes a*x+b wide)."""
        xs = np.asarray(fp16(x), dtype=np.float64)
        scalar = xs.ndim == 0
        xs = np.atleast_1d(xs)
        idx = np.clip(((xs - self.domain_lo) / self.width).astype(np.int64),
                      0, LUT_SEGMENTS - 1)
        a = np.array([s.a for s in self.segments])[idx]
        b = np.array([s.b for s in self.segments])[idx]
        y = fp16(a * xs + b)
        y = np.where(xs < self.domain_lo, 0.0, y)
        y = np.where(xs > self.domain_hi, fp16(math.exp(self.domain_hi)), y)
        return float(y[0]) if scalar else y


def build_lut(domain_lo=-8.0, domain_hi=0.0, method="endpoint") -> LutTable:
    """Construct the 64-segment exp LUT.

    endpoint: each segment's line passes through exp at both segment ends;
    after coefficient rounding, slopes are relaxed downward by a few
    binary16 steps where needed so that evaluation never decreases across a
    boundary (over a negative domain, a slightly smaller slope lifts the
    segment's left edge more than its right, so the correction damps out
    instead of rippling).  minimax: secant slope with the offset split so
    the segment's peak error is halved; smaller max error, but the
    systematically lowered lines leave small downward boundary jumps, so no
    monotonicity guarantee.  Coefficients are computed in float64 and
    rounded to binary16.
    """
    if not domain_lo < domain_hi:
        raise DomainError("domain_lo must be < domain_hi")
    if domain_hi > 0:
        raise DomainError("domain_hi must be <= 0 (softmax operates on "
                          "max-subtracted scores)")
    if method not in ("endpoint", "minimax"):
        raise DomainError(f"unknown construction {method!r}")
    width = (domain_hi - domain_lo) / LUT_SEGMENTS
    slopes, intercepts = [], []
    for i in range(LUT_SEGMENTS):
        lo = domain_lo + i * width
        hi = lo + width
        flo, fhi = math.exp(lo), math.exp(hi)
        a = (fhi - flo) / (hi - lo)
        b = flo - a * lo
        if method == "minimax":
            # for convex exp the error of the secant line peaks at x* where
            # exp'(x*) == a; lowering the line by half that peak equalizes
            # endpoint and interior errors
            x_star = math.log(a)
            peak = (a * x_star + b) - math.exp(x_star)
            b -= peak / 2
        slopes.append(fp16(a))
        intercepts.append(fp16(b))
    if method == "endpoint":
        def dipping():
            found = []
            for j in range(1, LUT_SEGMENTS):
                xb = domain_lo + j * width
                left = fp16(slopes[j - 1] * xb + intercepts[j - 1])
                right = fp16(slopes[j] * xb + intercepts[j])
                if right < left:
                    found.append(j)
            return found
        for _ in range(256):
            dips = dipping()
            if not dips:
                break
            for j in dips:
                slopes[j] = float(np.nextafter(np.float16(slopes[j]),
                                               np.float16(-np.inf)))
        else:
            raise DomainError("monotone slope relaxation did not converge")
    segs = tuple(LutSegment(a, b) for a, b in zip(slopes, intercepts))
    return LutTable(segs, domain_lo, domain_hi)


def lut_max_error(table: LutTable, points=1_000_000, seed=0):
    """Max |LUT(x) - exp(x)| over the domain: dense uniform grid plus random
    fill-in and every segment boundary."""
    rng = np.random.default_rng(seed)
    grid = np.linspace(table.domain_lo, table.domain_hi, points)
    rand = rng.uniform(table.domain_lo, table.domain_hi, size=points // 10)
    bounds = table.domain_lo + table.width * np.arange(LUT_SEGMENTS + 1)
    xs = np.concatenate([grid, rand, bounds])
    return float(np.max(np.abs(table.eval(xs) - np.exp(np.float64(xs)))))


def lut_to_csv(table: LutTable) -> str:
    lines = ["segment,lo,hi,a,b"]
    for i, seg in enumerate(table.segments):
        lo, hi = table.segment_bounds(i)
        lines.append(f"{i},{lo!r},{hi!r},{seg.a!r},{seg.b!r}")
    return "\n".join(lines) + "\n"


def lut_from_csv(text: str) -> LutTable:
    rows = [ln for ln in text.strip().splitlines() if ln]
    if not rows or rows[0] != "segment,lo,hi,a,b":
        raise DomainError("missing LUT CSV header 'segment,lo,hi,a,b'")
    segs, lo0, hi_last = [], None, None
    for expect, ln in enumerate(rows[1:]):
        parts = ln.split(",")
        if len(parts) != 5:
            raise DomainError(f"malformed LUT CSV row: {ln!r}")
        idx = int(parts[0])
        if idx != expect:
            raise DomainError(f"LUT CSV rows out of order at segment {idx}")
        lo, hi, a, b = map(float, parts[1:])
        if lo0 is None:
            lo0 = lo
        hi_last = hi
        segs.append(LutSegment(a, b))
    return LutTable(tuple(segs), lo0, hi_last)


@dataclass(frozen=True)
class GroupSpec:
    group_size: int = 32
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.group_size < 1:
            raise DomainError("group_size must be >= 1")
        if self.epsilon < 0:
            raise DomainError("epsilon must be >= 0")

    def slices(self, length):
        """Partition [0, length) into groups; the last may be short."""
        return [slice(s, min(s + self.group_size, length))
                for s in range(0, length, self.group_size)]


def _check_row(x, name="row"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError(f"{name} must be a non-empty 1-D value row")
    if not np.isfinite(arr).all():
        raise DomainError(f"{name} contains non-finite values")
    return arr


def group_softmax(x, groups: GroupSpec = GroupSpec(), lut: LutTable = None,
                  exactness="lut"):
    """Per-group softmax in the binary16 datapath.

    Each group independently: subtract the group max (so every LUT input is
    <= 0 and nothing can overflow), exponentiate via the LUT (or exact exp
    rounded to binary16), reduce the group sum through the tree, divide.
    Outputs of each group sum to 1 up to binary16 rounding.  No cross-group
    normalization is applied.
    """
    if exactness not in ("lut", "exact_exp"):
        raise DomainError(f"unknown exactness {exactness!r}")
    if exactness == "lut" and lut is None:
        lut = build_lut()

    def run(block):
        # block is (groups, lanes); every step is one datapath operation
        shifted = fp16(block - block.max(axis=1, keepdims=True))
        if exactness == "lut":
            e = lut.eval(shifted)                       # one MAC per lane
        else:
            e = fp16(np.exp(shifted))                   # exact exp, one rounding
        s = fp16(np.sum(e.astype(np.float64), axis=1, keepdims=True))  # tree
        return fp16(e / s)                              # elementwise divide

    arr = fp16(_check_row(x))
    g = groups.group_size
    full = (arr.size // g) * g
    out = np.empty_like(arr)
    if full:
        out[:full] = run(arr[:full].reshape(-1, g)).reshape(-1)
    if full < arr.size:
        out[full:] = run(arr[full:].reshape(1, -1)).reshape(-1)
    return out


def group_rmsnorm(x, gamma, groups: GroupSpec = GroupSpec(), sync="group_only"):
    """Group RMSNorm in the binary16 datapath.

    group_only: each group is normalized by its own RMS (square, tree-sum,
    mean+epsilon, sqrt, divide, gamma scale).

    global_sync: elements are first divided by their group RMS, and the
    correction group_rms/global_rms is folded into the gamma scaling step,
    so each element is multiplied by fp16(gamma * group_rms / global_rms).
    The group RMS cancels algebraically and the result matches direct
    whole-row RMSNorm up to binary16 rounding, without a second pass over
    the data.
    """
    if sync not in ("group_only", "global_sync"):
        raise DomainError(f"unknown sync {sync!r}")
    arr = fp16(_check_row(x))
    gam = fp16(_check_row(gamma, "gamma"))
    if gam.size != arr.size:
        raise DomainError(f"gamma length {gam.size} != row length {arr.size}")

    sq = fp16(arr * arr)                                 # elementwise square
    if sync == "global_sync":
        total = float(np.sum(np.asarray(sq, dtype=np.float64)))
        global_rms = math.sqrt(total / arr.size + groups.epsilon)

    def run(block, gam_block):
        # block is (groups, lanes)
        ssum = np.sum(fp16(block * block).astype(np.float64),
                      axis=1, keepdims=True)             # tree reduction
        mean = fp16(fp16(ssum) / block.shape[1])
        r = fp16(np.sqrt(fp16(mean + groups.epsilon)))   # iterative rsqrt step
        quot = fp16(block / r)                           # elementwise divide
        if sync == "group_only":
            return fp16(quot * gam_block)                # gamma scale
        fold = fp16(gam_block * (r / global_rms))        # one rounded fold
        return fp16(quot * fold)                         # gamma scale

    g = groups.group_size
    full = (arr.size // g) * g
    out = np.empty_like(arr)
    if full:
        out[:full] = run(arr[:full].reshape(-1, g),
                         gam[:full].reshape(-1, g)).reshape(-1)
    if full < arr.size:
        out[full:] = run(arr[full:].reshape(1, -1),
                         gam[full:].reshape(1, -1)).reshape(-1)
    return out


def exact_softmax(x):
    arr = _check_row(x)
    e = np.exp(arr - arr.max())
    return e / e.sum()


def exact_rmsnorm(x, gamma, epsilon=1e-5):
    arr = _check_row(x)
    gam = _check_row(gamma, "gamma")
    if gam.size != arr.size:
        raise DomainError(f"gamma length {gam.size} != row length {arr.size}")
    rms = math.sqrt(float(np.mean(arr * arr)) + epsilon)
    return arr / rms * gam


class NonlinearKind(Enum):
    SOFTMAX = "softmax"
    RMSNORM = "rmsnorm"


@dataclass(frozen=True)
class NonlinearCycleParams:
    """Calibrated cycle costs for the nonlinear datapath.

    The baseline (FULL accumulation only) pushes each elementwise pass
    through the tree full_lanes elements per cycle; with PARTIAL mode
    available, one pass covers a whole group per cycle.  Reductions cost
    one tree traversal each; the scalar step models the iterative
    reciprocal / inverse-sqrt at the end of a group.
    """
    full_lanes: int = 4
    scalar_cycles: int = 3
    softmax_ew_passes: int = 3   # max-subtract, exponentiate, divide
    softmax_reductions: int = 2  # group max, exponential sum
    rmsnorm_ew_passes: int = 2   # square, scale
    rmsnorm_reductions: int = 1  # sum of squares

    def __post_init__(self):
        if self.full_lanes < 1:
            raise DomainError("full_lanes must be >= 1")

    def passes(self, kind: NonlinearKind):
        if kind is NonlinearKind.SOFTMAX:
            return self.softmax_ew_passes, self.softmax_reductions
        return self.rmsnorm_ew_passes, self.rmsnorm_reductions


DEFAULT_CYCLE_PARAMS = NonlinearCycleParams()


@dataclass(frozen=True)
class FusionLatency:
    baseline_cycles: int
    fused_cycles: int

    @property
    def reduction(self):
        if self.baseline_cycles == 0:
            return 0.0
        return 1.0 - self.fused_cycles / self.baseline_cycles

    def cycles(self, fusion: bool):
        return self.fused_cycles if fusion else self.baseline_cycles


def group_cycles(kind: NonlinearKind, group_size: int,
                 params: NonlinearCycleParams = DEFAULT_CYCLE_PARAMS,
                 fused=False) -> int:
    """Cycles to process one group.  Fused mode evaluates each elementwise
    pass over the whole group at once (PARTIAL accumulation); the baseline
    serializes it through full_lanes lanes per cycle."""
    ew, reds = params.passes(kind)
    if fused:
        ew_cycles = ew
    else:
        ew_cycles = ew * (-(-group_size // params.full_lanes))
    return ew_cycles + reds + params.scalar_cycles


def nonlinear_latency(row_len: int, groups: GroupSpec, kind: NonlinearKind,
                      params: NonlinearCycleParams = DEFAULT_CYCLE_PARAMS,
                      partial_available=True) -> FusionLatency:
    """Baseline-vs-fused cycle totals for one row.  Without PARTIAL
    accumulation available there is nothing to fuse and both totals match."""
    if row_len < 1:
        raise DomainError("row_len must be >= 1")
    base = fused = 0
    for sl in groups.slices(row_len):
        size = sl.stop - sl.start
        base += group_cycles(kind, size, params, fused=False)
        fused += group_cycles(kind, size, params,
                              fused=partial_available)
    return FusionLatency(base, fused)


if __name__ == "__main__":
    for method in ("endpoint", "minimax"):
        table = build_lut(method=method)
        err = lut_max_error(table, points=200_000)
        print(f"{method:9s} LUT max |err| vs exp: {err:.3e}")
    rng = np.random.default_rng(0)
    row = rng.normal(size=128)
    sm = group_softmax(row, GroupSpec(32))
    for sl in GroupSpec(32).slices(128):
        assert fp16_ulps(float(np.float16(sm[sl].sum())), 1.0) <= 4
    rn = group_rmsnorm(row, np.ones(128), sync="global_sync")
    ref = exact_rmsnorm(row, np.ones(128))
    print(f"rmsnorm global_sync max ulps vs oracle: "
          f"{int(np.max(fp16_ulps(rn, ref)))}")
    lat = nonlinear_latency(1024, GroupSpec(32), NonlinearKind.SOFTMAX)
    print(f"softmax row 1024: baseline {lat.baseline_cycles} cy, "
          f"fused {lat.fused_cycles} cy, reduction {lat.reduction:.2%}")
