"""Grid functions with jump skeletons and their order calculus.

A GridDomain is a rectangular box sampled on a regular lattice together
with a marked point set (the skeleton). A GridFunction on it is read as a
piecewise continuous function: continuous on the complement of the
skeleton, with jumps only across skeleton points. Off-skeleton values are
finite; skeleton points may carry +inf or -inf.

Under that reading, the lower envelope operator evaluated at a skeleton
point is the minimum of the stored value and the limiting values of the
adjacent continuous pieces, which the lattice approximates by the nearest
unmarked neighbours; the upper operator is dual. Their composition
(normalize) replaces every skeleton value by the minimum adjacent limit
and leaves unmarked points untouched, so it is exactly idempotent.

The skeleton must be discretely nowhere dense: every 2 x ... x 2 block of
interior lattice points contains an unmarked point.

All functions here are pure; none mutates its arguments.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_INF = math.inf


def is_nowhere_dense(mask: np.ndarray) -> bool:
    """True iff every 2 x ... x 2 block of interior points has an unmarked point."""
    mask = np.asarray(mask, dtype=bool)
    n = mask.ndim
    interior = mask[(slice(1, -1),) * n]
    if any(s < 2 for s in interior.shape):
        return True
    full = np.ones(tuple(s - 1 for s in interior.shape), dtype=bool)
    for offsets in itertools.product((0, 1), repeat=n):
        sl = tuple(slice(o, s - 1 + o) for o, s in zip(offsets, interior.shape))
        full &= interior[sl]
    return not full.any()


@dataclass(eq=False)
class GridDomain:
    """Box [lo, hi] sampled on a regular lattice with a marked skeleton."""

    lo: np.ndarray
    hi: np.ndarray
    shape: tuple[int, ...]
    skeleton: np.ndarray

    def __init__(
        self,
        lo: Sequence[float],
        hi: Sequence[float],
        shape: Sequence[int],
        skeleton: np.ndarray | None = None,
    ) -> None:
        self.lo = np.asarray(lo, dtype=float).copy()
        self.hi = np.asarray(hi, dtype=float).copy()
        self.shape = tuple(int(s) for s in shape)
        if self.lo.ndim != 1 or self.lo.shape != self.hi.shape:
            raise ValueError("lo and hi must be 1-d arrays of equal length")
        if len(self.shape) != self.lo.size:
            raise ValueError("shape length must match box dimension")
        if np.any(self.hi <= self.lo):
            raise ValueError("box must have positive extent on every axis")
        if any(s < 3 for s in self.shape):
            raise ValueError("resolution must be at least 3 points per axis")
        if skeleton is None:
            skeleton = np.zeros(self.shape, dtype=bool)
        skeleton = np.asarray(skeleton, dtype=bool).copy()
        if skeleton.shape != self.shape:
            raise ValueError("skeleton shape must match grid shape")
        if not is_nowhere_dense(skeleton):
            raise ValueError("skeleton violates discrete nowhere-density")
        self.skeleton = skeleton
        self.lo.setflags(write=False)
        self.hi.setflags(write=False)
        self.skeleton.setflags(write=False)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.asarray(self.shape, dtype=float) - 1.0)

    def axis(self, d: int) -> np.ndarray:
        return np.linspace(self.lo[d], self.hi[d], self.shape[d])

    def meshes(self) -> list[np.ndarray]:
        """Coordinate arrays of the full lattice, one per axis, grid-shaped."""
        return np.meshgrid(*(self.axis(d) for d in range(self.ndim)), indexing="ij")

    def point(self, idx: tuple[int, ...]) -> np.ndarray:
        return np.array([self.axis(d)[idx[d]] for d in range(self.ndim)])

    def with_skeleton(self, skeleton: np.ndarray) -> "GridDomain":
        return GridDomain(self.lo, self.hi, self.shape, skeleton)

    def same_lattice(self, other: "GridDomain") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GridDomain):
            return NotImplemented
        return self.same_lattice(other) and np.array_equal(self.skeleton, other.skeleton)


@dataclass(eq=False)
class GridFunction:
    """Sampled values over a GridDomain; finite off-skeleton, +-inf allowed on it."""

    domain: GridDomain
    values: np.ndarray
    normalized: bool = False

    def __init__(self, domain: GridDomain, values: np.ndarray, normalized: bool = False):
        self.domain = domain
        vals = np.asarray(values, dtype=float).copy()
        if vals.shape != domain.shape:
            raise ValueError("values shape must match grid shape")
        if np.isnan(vals).any():
            raise ValueError("grid function values must not contain NaN")
        off = ~domain.skeleton
        if not np.all(np.isfinite(vals[off])):
            raise ValueError("grid function must be finite off the skeleton")
        self.values = vals
        self.values.setflags(write=False)
        self.normalized = bool(normalized)

    def with_values(self, values: np.ndarray, normalized: bool = False) -> "GridFunction":
        return GridFunction(self.domain, values, normalized)

    def sup_norm(self) -> float:
        off = ~self.domain.skeleton
        if not off.any():
            return 0.0
        return float(np.max(np.abs(self.values[off])))

    def __add__(self, other: "GridFunction | float") -> "GridFunction":
        if isinstance(other, GridFunction):
            _require_same_domain(self, other)
            return GridFunction(self.domain, self.values + other.values)
        return GridFunction(self.domain, self.values + float(other))

    def __sub__(self, other: "GridFunction | float") -> "GridFunction":
        if isinstance(other, GridFunction):
            _require_same_domain(self, other)
            return GridFunction(self.domain, self.values - other.values)
        return GridFunction(self.domain, self.values - float(other))

    def __mul__(self, c: float) -> "GridFunction":
        return GridFunction(self.domain, self.values * float(c))

    __rmul__ = __mul__

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GridFunction):
            return NotImplemented
        return self.domain == other.domain and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class OrderInterval:
    """Pair of grid functions with lower <= upper off the skeleton."""

    lower: GridFunction
    upper: GridFunction

    def __post_init__(self) -> None:
        _require_same_domain(self.lower, self.upper)
        off = ~self.lower.domain.skeleton
        if not np.all(self.lower.values[off] <= self.upper.values[off]):
            raise ValueError("order interval bounds cross off-skeleton")

    @property
    def domain(self) -> GridDomain:
        return self.lower.domain

    def width(self) -> float:
        off = ~self.domain.skeleton
        return float(np.max(self.upper.values[off] - self.lower.values[off]))


def _require_same_domain(u: GridFunction, v: GridFunction) -> None:
    if u.domain != v.domain:
        raise ValueError("grid functions live on different domains")


# ---------------------------------------------------------------------------
# neighbour machinery


def _neighbor_extreme(domain: GridDomain, values: np.ndarray, minimize: bool) -> np.ndarray:
    """Per point: extreme of values over the nearest unmarked neighbours.

    Ring-1 (Chebyshev) neighbours are handled vectorized; skeleton points
    whose whole immediate neighbourhood is marked fall back to expanding
    ring search. Only needed at skeleton points, computed everywhere.
    """
    skel = domain.skeleton
    n = domain.ndim
    fill = _INF if minimize else -_INF
    acc = np.full(values.shape, fill)
    for offset in itertools.product((-1, 0, 1), repeat=n):
        if all(o == 0 for o in offset):
            continue
        dst = []
        src = []
        for o in offset:
            if o == 1:
                dst.append(slice(0, -1))
                src.append(slice(1, None))
            elif o == -1:
                dst.append(slice(1, None))
                src.append(slice(0, -1))
            else:
                dst.append(slice(None))
                src.append(slice(None))
        dst_t, src_t = tuple(dst), tuple(src)
        nbr_vals = np.where(skel[src_t], fill, values[src_t])
        if minimize:
            acc[dst_t] = np.minimum(acc[dst_t], nbr_vals)
        else:
            acc[dst_t] = np.maximum(acc[dst_t], nbr_vals)
    unresolved = skel & (acc == fill)
    for idx in zip(*np.nonzero(unresolved)):
        acc[idx] = _ring_extreme(domain, values, idx, minimize)
    return acc


def _ring_extreme(
    domain: GridDomain, values: np.ndarray, idx: tuple[int, ...], minimize: bool
) -> float:
    skel = domain.skeleton
    for r in range(2, max(domain.shape)):
        window = tuple(
            slice(max(0, i - r), min(s, i + r + 1)) for i, s in zip(idx, domain.shape)
        )
        free = ~skel[window]
        if free.any():
            vals = values[window][free]
            return float(vals.min() if minimize else vals.max())
    raise ValueError("grid has no unmarked points to borrow a limit value from")


def skeleton_fill(domain: GridDomain, values: np.ndarray) -> np.ndarray:
    """Replace skeleton values by the minimum nearest unmarked neighbour value.

    This is the normalize rule; the off-skeleton entries pass through
    unchanged. Input array is not modified.
    """
    nbr_min = _neighbor_extreme(domain, values, minimize=True)
    out = np.array(values, dtype=float)
    out[domain.skeleton] = nbr_min[domain.skeleton]
    return out


# ---------------------------------------------------------------------------
# envelope operators


def baire_lower(u: GridFunction) -> GridFunction:
    """Lower envelope: min of own value and adjacent-piece limits at marked points."""
    skel = u.domain.skeleton
    nbr = _neighbor_extreme(u.domain, u.values, minimize=True)
    out = np.array(u.values)
    out[skel] = np.minimum(u.values[skel], nbr[skel])
    return GridFunction(u.domain, out)


def baire_upper(u: GridFunction) -> GridFunction:
    """Upper envelope, dual to baire_lower."""
    skel = u.domain.skeleton
    nbr = _neighbor_extreme(u.domain, u.values, minimize=False)
    out = np.array(u.values)
    out[skel] = np.maximum(u.values[skel], nbr[skel])
    return GridFunction(u.domain, out)


def normalize(u: GridFunction) -> GridFunction:
    """Lower-of-upper composition; exactly idempotent on any input."""
    upper = baire_upper(u)
    lower = baire_lower(upper)
    return GridFunction(u.domain, lower.values, normalized=True)


def lattice_sup(u: GridFunction, v: GridFunction) -> GridFunction:
    """Least normalized function dominating u and v off the skeleton."""
    _require_same_domain(u, v)
    return normalize(GridFunction(u.domain, np.maximum(u.values, v.values)))


def lattice_inf(u: GridFunction, v: GridFunction) -> GridFunction:
    _require_same_domain(u, v)
    return normalize(GridFunction(u.domain, np.minimum(u.values, v.values)))


def leq_dense(u: GridFunction, v: GridFunction) -> bool:
    """u <= v at every unmarked point."""
    _require_same_domain(u, v)
    off = ~u.domain.skeleton
    return bool(np.all(u.values[off] <= v.values[off]))


# ---------------------------------------------------------------------------
# convergence certificates

_CHAIN_LEGS = ("lower_monotone", "lower_bracket", "upper_bracket", "upper_monotone")


@dataclass(frozen=True)
class OrderConvergenceCertificate:
    chain_ok: bool
    first_violation: tuple[int, str, float] | None
    sup_gap: float
    inf_gap: float
    tol: float
    passed: bool


def order_convergence_check(
    seq: Sequence[GridFunction],
    lambdas: Sequence[GridFunction],
    mus: Sequence[GridFunction],
    u: GridFunction,
    tol: float | None = None,
) -> OrderConvergenceCertificate:
    """Certify monotone bracketing and terminal gap of an order-convergent triple.

    Checks, exactly and off-skeleton, for every n:
    lambda_n <= lambda_{n+1} <= u_{n+1} <= mu_{n+1} <= mu_n, then measures
    the terminal gaps max(u - lambda_N) and max(mu_N - u). Passes when the
    chain holds and both gaps are below tol (default 1e-8*(1+sup|u|)).
    """
    if not (len(seq) == len(lambdas) == len(mus)) or not seq:
        raise ValueError("sequences must be non-empty and of equal length")
    for g in itertools.chain(seq, lambdas, mus, (u,)):
        if g.domain != u.domain:
            raise ValueError("all grid functions must share one domain")
    if tol is None:
        tol = 1e-8 * (1.0 + u.sup_norm())
    off = ~u.domain.skeleton
    chain_ok = True
    first_violation: tuple[int, str, float] | None = None
    for n in range(len(seq) - 1):
        legs = (
            lambdas[n + 1].values[off] - lambdas[n].values[off],
            seq[n + 1].values[off] - lambdas[n + 1].values[off],
            mus[n + 1].values[off] - seq[n + 1].values[off],
            mus[n].values[off] - mus[n + 1].values[off],
        )
        for leg_name, diff in zip(_CHAIN_LEGS, legs):
            worst = float(diff.min()) if diff.size else 0.0
            if worst < 0.0:
                chain_ok = False
                if first_violation is None:
                    first_violation = (n, leg_name, worst)
    sup_gap = float(np.max(u.values[off] - lambdas[-1].values[off]))
    inf_gap = float(np.max(mus[-1].values[off] - u.values[off]))
    passed = chain_ok and sup_gap < tol and inf_gap < tol
    return OrderConvergenceCertificate(
        chain_ok=chain_ok,
        first_violation=first_violation,
        sup_gap=sup_gap,
        inf_gap=inf_gap,
        tol=float(tol),
        passed=passed,
    )


@dataclass(frozen=True)
class QuasiUniformResult:
    """Exceptional set and per-point entry indices for quasi-uniform decay.

    gamma marks unmarked lattice points where no index N in the provided
    sequence achieves seq[N] - u < eps; n_map holds the minimal such
    1-based N elsewhere (0 on gamma and on the domain skeleton).
    """

    gamma: np.ndarray
    n_map: np.ndarray
    nowhere_dense_ok: bool
    eps: float


def quasi_uniform_check(
    seq: Sequence[GridFunction], u: GridFunction, eps: float
) -> QuasiUniformResult:
    if not seq:
        raise ValueError("sequence must be non-empty")
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    for g in seq:
        if g.domain != u.domain:
            raise ValueError("all grid functions must share one domain")
    off = ~u.domain.skeleton
    for k in range(len(seq) - 1):
        if not np.all(seq[k + 1].values[off] <= seq[k].values[off]):
            raise ValueError(f"sequence is not non-increasing at index {k}")
    if not np.all(u.values[off] <= seq[-1].values[off]):
        raise ValueError("u is not a lower bound of the sequence")
    diffs = np.stack([g.values - u.values for g in seq], axis=0)
    below = diffs < eps
    hit = below.any(axis=0)
    first = below.argmax(axis=0)  # valid only where hit
    n_map = np.where(hit, first + 1, 0).astype(int)
    gamma = off & ~hit
    n_map[~off] = 0
    n_map[gamma] = 0
    gamma_ok = is_nowhere_dense(gamma)
    return QuasiUniformResult(
        gamma=gamma, n_map=n_map, nowhere_dense_ok=gamma_ok, eps=float(eps)
    )


# ---------------------------------------------------------------------------
# CSV serialization


def _format_value(v: float) -> str:
    if math.isinf(v):
        return "+inf" if v > 0 else "-inf"
    return repr(v)


def _parse_value(s: str) -> float:
    if s == "+inf":
        return _INF
    if s == "-inf":
        return -_INF
    return float(s)


def write_csv(gf: GridFunction, path) -> None:
    """One row per lattice point in C order: coordinates, value, skeleton flag."""
    n = gf.domain.ndim
    header = [f"x{d + 1}" for d in range(n)] + ["value", "skeleton"]
    axes = [gf.domain.axis(d) for d in range(n)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for idx in np.ndindex(gf.domain.shape):
            coords = [repr(float(axes[d][idx[d]])) for d in range(n)]
            writer.writerow(
                coords + [_format_value(float(gf.values[idx])), int(gf.domain.skeleton[idx])]
            )


def read_csv(path) -> GridFunction:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if len(header) < 3 or header[-2] != "value" or header[-1] != "skeleton":
        raise ValueError("expected coordinate columns followed by value,skeleton")
    n = len(header) - 2
    coords = [[float(r[d]) for d in range(n)] for r in rows]
    axes = [np.array(sorted({c[d] for c in coords})) for d in range(n)]
    shape = tuple(len(a) for a in axes)
    if int(np.prod(shape)) != len(rows):
        raise ValueError("rows do not form a full lattice")
    index_of = [{v: i for i, v in enumerate(a)} for a in axes]
    values = np.empty(shape)
    skel = np.zeros(shape, dtype=bool)
    for r, c in zip(rows, coords):
        idx = tuple(index_of[d][c[d]] for d in range(n))
        values[idx] = _parse_value(r[n])
        skel[idx] = bool(int(r[n + 1]))
    domain = GridDomain([a[0] for a in axes], [a[-1] for a in axes], shape, skel)
    return GridFunction(domain, values)
