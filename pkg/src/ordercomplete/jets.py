"""Jets, anchored Taylor polynomials, and piecewise-polynomial assemblies.

A jet of order m for a K-component system in n variables assigns one value
per (component, multi-index) pair with |alpha| <= m. Its Taylor polynomial
stores exactly those values as anchored derivative coefficients,

    P(x) = sum_alpha  c_alpha (x - x0)^alpha / alpha!,

so derivative evaluation at the anchor returns the stored jet entry with no
rounding at all: differentiation is an index shift, never arithmetic.

A PiecewisePoly glues per-cell polynomial tuples over a tiling of the box;
sampling it on a lattice marks every point on a cell boundary as skeleton
and fills those values by the normalize rule from grids.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grids import GridDomain, GridFunction, skeleton_fill


@dataclass(frozen=True)
class MultiIndexSet:
    """All multi-indices with |alpha| <= m in n variables, graded-lex ordered."""

    n: int
    m: int
    alphas: tuple[tuple[int, ...], ...]

    def __init__(self, n: int, m: int) -> None:
        if n < 1:
            raise ValueError("need at least one space variable")
        if m < 0:
            raise ValueError("order must be non-negative")
        alphas = sorted(
            (a for a in itertools.product(range(m + 1), repeat=n) if sum(a) <= m),
            key=lambda a: (sum(a), a),
        )
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "alphas", tuple(alphas))
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(alphas)})

    @property
    def count(self) -> int:
        return len(self.alphas)

    def index(self, alpha: tuple[int, ...]) -> int:
        try:
            return self._index[tuple(alpha)]
        except KeyError:
            raise KeyError(f"multi-index {tuple(alpha)} not in set (n={self.n}, m={self.m})")

    def __contains__(self, alpha) -> bool:
        return tuple(alpha) in self._index

    def __iter__(self):
        return iter(self.alphas)


def jet_size(K: int, mis: MultiIndexSet) -> int:
    """Total unknown count M for K components."""
    return K * mis.count


def _factorial_alpha(alpha: tuple[int, ...]) -> float:
    out = 1
    for a in alpha:
        out *= math.factorial(a)
    return float(out)


@dataclass(eq=False)
class Jet:
    """Derivative data at one base point: values[i-1, a] = entry for (i, alpha_a)."""

    base_point: np.ndarray
    values: np.ndarray  # shape (K, mis.count)
    mis: MultiIndexSet

    def __init__(self, base_point, values, mis: MultiIndexSet) -> None:
        self.base_point = np.asarray(base_point, dtype=float).copy()
        self.values = np.asarray(values, dtype=float).copy()
        self.mis = mis
        if self.base_point.ndim != 1 or self.base_point.size != mis.n:
            raise ValueError("base point dimension must match the multi-index set")
        if self.values.ndim != 2 or self.values.shape[1] != mis.count:
            raise ValueError("values must have shape (K, count)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("jet entries must be finite")
        self.base_point.setflags(write=False)
        self.values.setflags(write=False)

    @property
    def K(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, key: tuple[int, tuple[int, ...]]) -> float:
        i, alpha = key
        if not 1 <= i <= self.K:
            raise KeyError(f"component {i} out of range 1..{self.K}")
        return float(self.values[i - 1, self.mis.index(alpha)])

    def flat(self) -> np.ndarray:
        """Component-major flattening, length K*count."""
        return self.values.reshape(-1).copy()

    @staticmethod
    def from_flat(base_point, K: int, mis: MultiIndexSet, vec) -> "Jet":
        vec = np.asarray(vec, dtype=float)
        if vec.size != K * mis.count:
            raise ValueError("flat vector length must be K*count")
        return Jet(base_point, vec.reshape(K, mis.count), mis)


@dataclass(eq=False)
class TaylorPoly:
    """Polynomial anchored at x0, stored by its own derivative values there."""

    anchor: np.ndarray
    coeffs: np.ndarray  # derivative values at the anchor, aligned with mis
    mis: MultiIndexSet

    def __init__(self, anchor, coeffs, mis: MultiIndexSet) -> None:
        self.anchor = np.asarray(anchor, dtype=float).copy()
        self.coeffs = np.asarray(coeffs, dtype=float).copy()
        self.mis = mis
        if self.anchor.size != mis.n or self.coeffs.size != mis.count:
            raise ValueError("anchor/coefficient sizes must match the multi-index set")
        self.anchor.setflags(write=False)
        self.coeffs.setflags(write=False)

    def value(self, x) -> float:
        return float(self.deriv_many((0,) * self.mis.n, np.asarray(x, dtype=float)[None, :])[0])

    def deriv_many(self, alpha: tuple[int, ...], points: np.ndarray) -> np.ndarray:
        """D^alpha of the polynomial at each row of points, exactly at the anchor."""
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.mis.n or any(a < 0 for a in alpha):
            raise ValueError(f"bad multi-index {alpha}")
        if sum(alpha) > self.mis.m:
            raise ValueError(f"derivative order {sum(alpha)} exceeds m={self.mis.m}")
        pts = np.asarray(points, dtype=float)
        dx = pts - self.anchor  # (npts, n)
        out = np.zeros(pts.shape[0])
        rem = self.mis.m - sum(alpha)
        for gamma in MultiIndexSet(self.mis.n, rem):
            beta = tuple(g + a for g, a in zip(gamma, alpha))
            if beta not in self.mis:
                continue
            c = self.coeffs[self.mis.index(beta)]
            if c == 0.0:
                continue
            mono = np.ones(pts.shape[0])
            for d, g in enumerate(gamma):
                if g:
                    mono = mono * dx[:, d] ** g
            out += (c / _factorial_alpha(gamma)) * mono
        return out


def taylor_poly(jet: Jet) -> list[TaylorPoly]:
    """One polynomial per component, matching the jet exactly at its base point."""
    return [TaylorPoly(jet.base_point, jet.values[i], jet.mis) for i in range(jet.K)]


def deriv_eval(p: TaylorPoly, alpha: tuple[int, ...], x) -> float:
    """D^alpha p evaluated at x; equals the stored coefficient when x is the anchor."""
    pt = np.asarray(x, dtype=float)
    return float(p.deriv_many(alpha, pt[None, :])[0])


# ---------------------------------------------------------------------------
# tiling cells and piecewise assemblies


@dataclass(frozen=True)
class Cell:
    """Axis-aligned closed box [lo, hi]."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __init__(self, lo, hi) -> None:
        lo_t = tuple(float(v) for v in np.asarray(lo, dtype=float))
        hi_t = tuple(float(v) for v in np.asarray(hi, dtype=float))
        if len(lo_t) != len(hi_t):
            raise ValueError("cell lo and hi must have equal length")
        if any(a >= b for a, b in zip(lo_t, hi_t)):
            raise ValueError(f"cell has empty extent: lo={lo_t}, hi={hi_t}")
        object.__setattr__(self, "lo", lo_t)
        object.__setattr__(self, "hi", hi_t)

    @property
    def ndim(self) -> int:
        return len(self.lo)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def volume(self) -> float:
        return float(np.prod(self.widths))

    def split(self) -> list["Cell"]:
        """Dyadic split into 2^n congruent children."""
        mids = self.center
        out = []
        for corner in itertools.product((0, 1), repeat=self.ndim):
            lo = [self.lo[d] if c == 0 else mids[d] for d, c in enumerate(corner)]
            hi = [mids[d] if c == 0 else self.hi[d] for d, c in enumerate(corner)]
            out.append(Cell(lo, hi))
        return out


class TilingError(ValueError):
    """Cells fail to tile the box: overlap, gap, or grid misfit."""


@dataclass(eq=False)
class PiecewisePoly:
    """Per-cell polynomial tuples over a tiling of a box."""

    space_dim: int
    components: int
    order: int
    cells: list[Cell]
    polys: list[list[TaylorPoly]]  # polys[c][i-1] for cell c, component i

    def __init__(self, space_dim, components, order, cells, polys) -> None:
        self.space_dim = int(space_dim)
        self.components = int(components)
        self.order = int(order)
        self.cells = list(cells)
        self.polys = [list(ps) for ps in polys]
        if len(self.cells) != len(self.polys):
            raise ValueError("one polynomial tuple required per cell")
        for ps in self.polys:
            if len(ps) != self.components:
                raise ValueError("each cell needs one polynomial per component")


def _classify_grid(
    cells: Sequence[Cell], domain: GridDomain
) -> tuple[np.ndarray, np.ndarray]:
    """(owner index per lattice point, boundary mask).

    A point strictly inside exactly one cell is owned by it; a point within
    snapping tolerance of any covering cell's face is boundary. Overlapping
    interiors and uncovered points raise TilingError.
    """
    n = domain.ndim
    tol = 1e-9 * (domain.hi - domain.lo)
    owner = np.full(domain.shape, -1, dtype=int)
    boundary = np.zeros(domain.shape, dtype=bool)
    axes = [domain.axis(d) for d in range(n)]
    for ci, cell in enumerate(cells):
        inside_axes = []
        closed_axes = []
        near_axes = []
        for d in range(n):
            a = axes[d]
            inside_axes.append((a > cell.lo[d] + tol[d]) & (a < cell.hi[d] - tol[d]))
            closed_axes.append((a >= cell.lo[d] - tol[d]) & (a <= cell.hi[d] + tol[d]))
            near_axes.append(
                (np.abs(a - cell.lo[d]) <= tol[d]) | (np.abs(a - cell.hi[d]) <= tol[d])
            )
        inside = _outer_and(inside_axes)
        closed = _outer_and(closed_axes)
        near = closed & _outer_or(near_axes, closed.shape)
        clash = inside & (owner >= 0)
        if clash.any():
            idx = tuple(int(v) for v in np.argwhere(clash)[0])
            raise TilingError(f"overlapping cell interiors at lattice point {idx}")
        owner[inside] = ci
        boundary |= near
    uncovered = (owner < 0) & ~boundary
    if uncovered.any():
        idx = tuple(int(v) for v in np.argwhere(uncovered)[0])
        raise TilingError(f"tiling does not cover lattice point {idx}")
    owner[boundary] = -1
    return owner, boundary


def _outer_and(axis_masks: list[np.ndarray]) -> np.ndarray:
    out = axis_masks[0]
    for m in axis_masks[1:]:
        out = out[..., None] & m
    return out


def _outer_or(axis_masks: list[np.ndarray], shape) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    n = len(axis_masks)
    for d, m in enumerate(axis_masks):
        idx = [None] * n
        idx[d] = slice(None)
        out |= m[tuple(idx)]
    return out


def _check_tiling(cells: Sequence[Cell], lo: np.ndarray, hi: np.ndarray) -> None:
    vol = sum(c.volume() for c in cells)
    box_vol = float(np.prod(hi - lo))
    if not math.isclose(vol, box_vol, rel_tol=1e-9):
        raise TilingError(f"cell volumes sum to {vol}, box volume is {box_vol}")
    for a, b in itertools.combinations(cells, 2):
        if all(max(a.lo[d], b.lo[d]) < min(a.hi[d], b.hi[d]) - 1e-12 * (hi[d] - lo[d])
               for d in range(len(a.lo))):
            raise TilingError(f"cells {a} and {b} have overlapping interiors")


def assemble(
    cells: Sequence[Cell],
    polys: Sequence[Sequence[TaylorPoly]],
    domain: GridDomain,
) -> tuple[PiecewisePoly, GridDomain]:
    """Glue per-cell polynomials; returns the assembly and the domain with
    every cell-boundary lattice point marked as skeleton."""
    if not cells:
        raise TilingError("no cells supplied")
    n = domain.ndim
    K = len(polys[0])
    mis = polys[0][0].mis
    _check_tiling(cells, domain.lo, domain.hi)
    _, boundary = _classify_grid(cells, domain)
    marked = domain.with_skeleton(boundary)
    v = PiecewisePoly(n, K, mis.m, list(cells), [list(ps) for ps in polys])
    return v, marked


def sample_component(
    v: PiecewisePoly, i: int, alpha: tuple[int, ...], domain: GridDomain
) -> GridFunction:
    """Sample D^alpha of component i on the lattice.

    Owned points take their cell's polynomial derivative; skeleton points are
    filled by the normalize rule, so the output is a normalize fixed point.
    """
    if not 1 <= i <= v.components:
        raise ValueError(f"component {i} out of range 1..{v.components}")
    owner, boundary = _classify_grid(v.cells, domain)
    unmarked = boundary & ~domain.skeleton
    if unmarked.any():
        raise ValueError("domain skeleton does not mark all cell-boundary points")
    meshes = domain.meshes()
    flat_coords = np.stack([m.reshape(-1) for m in meshes], axis=1)
    flat_owner = owner.reshape(-1)
    flat_vals = np.zeros(flat_owner.shape)
    for ci in range(len(v.cells)):
        sel = flat_owner == ci
        if not sel.any():
            continue
        flat_vals[sel] = v.polys[ci][i - 1].deriv_many(alpha, flat_coords[sel])
    values = flat_vals.reshape(domain.shape)
    filled = skeleton_fill(domain, values)
    return GridFunction(domain, filled, normalized=True)


# ---------------------------------------------------------------------------
# JSON serialization


def poly_to_dict(v: PiecewisePoly) -> dict:
    mis = v.polys[0][0].mis if v.polys else MultiIndexSet(v.space_dim, v.order)
    return {
        "space_dim": v.space_dim,
        "components": v.components,
        "order": v.order,
        "alphas": [list(a) for a in mis.alphas],
        "cells": [
            {
                "lo": list(cell.lo),
                "hi": list(cell.hi),
                "polys": [
                    {"anchor": [float(x) for x in p.anchor],
                     "coeffs": [float(c) for c in p.coeffs]}
                    for p in ps
                ],
            }
            for cell, ps in zip(v.cells, v.polys)
        ],
    }


def poly_from_dict(data: dict) -> PiecewisePoly:
    n = int(data["space_dim"])
    K = int(data["components"])
    m = int(data["order"])
    mis = MultiIndexSet(n, m)
    stored = [tuple(a) for a in data["alphas"]]
    if stored != list(mis.alphas):
        raise ValueError("multi-index ordering in file does not match graded-lex")
    cells = []
    polys = []
    for entry in data["cells"]:
        cells.append(Cell(entry["lo"], entry["hi"]))
        ps = entry["polys"]
        if len(ps) != K:
            raise ValueError("cell polynomial count does not match component count")
        polys.append([TaylorPoly(p["anchor"], p["coeffs"], mis) for p in ps])
    return PiecewisePoly(n, K, m, cells, polys)


def write_poly_json(v: PiecewisePoly, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(poly_to_dict(v), fh, sort_keys=True, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def read_poly_json(path) -> PiecewisePoly:
    with open(path) as fh:
        return poly_from_dict(json.load(fh))
