"""PDE systems T_j(x, D)u = F_j(x, u, ..., D^alpha u_i, ...) and their
application to piecewise-polynomial candidates.

The operator acts on jets only; applying it to an assembled candidate
samples the candidate's jets cell by cell, evaluates F off the skeleton,
and completes across the skeleton by the normalize rule, mirroring the
envelope-composed extension of the operator to functions with jumps.

Assumption checks are sampling heuristics. Their verdicts are marked as
evidence and carry witnessed radii; they are never proofs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import expr as ex
from .grids import GridDomain, GridFunction, skeleton_fill
from .jets import Jet, MultiIndexSet, PiecewisePoly, _classify_grid


@dataclass(eq=False)
class PdeSystem:
    """Signature (n, K, m), K operator bodies F_j, K right-hand sides f_j, box."""

    n: int
    K: int
    m: int
    F: list[ex.Expr]
    f: list[ex.Expr]
    box_lo: np.ndarray
    box_hi: np.ndarray

    def __init__(self, n, K, m, F, f, box_lo, box_hi) -> None:
        self.n = int(n)
        self.K = int(K)
        self.m = int(m)
        signature = (self.n, self.K, self.m)
        self.F = [ex.parse(e, signature) if isinstance(e, str) else e for e in F]
        self.f = [ex.parse(e, signature) if isinstance(e, str) else e for e in f]
        if len(self.F) != self.K:
            raise ValueError(f"expected {self.K} operator bodies, got {len(self.F)}")
        if len(self.f) != self.K:
            raise ValueError(f"expected {self.K} right-hand sides, got {len(self.f)}")
        for j, rhs in enumerate(self.f, start=1):
            if ex.has_jet_vars(rhs):
                raise ValueError(f"right-hand side f{j} references jet variables")
        self.box_lo = np.asarray(box_lo, dtype=float).copy()
        self.box_hi = np.asarray(box_hi, dtype=float).copy()
        if self.box_lo.size != self.n or self.box_hi.size != self.n:
            raise ValueError("box bounds must match the space dimension")
        if np.any(self.box_hi <= self.box_lo):
            raise ValueError("box must have positive extent")
        self.box_lo.setflags(write=False)
        self.box_hi.setflags(write=False)
        self.mis = MultiIndexSet(self.n, self.m)
        self._jacobian: list[list[ex.Expr]] | None = None

    @property
    def unknown_count(self) -> int:
        return self.K * self.mis.count

    def flat_vars(self) -> list[tuple[int, tuple[int, ...]]]:
        """Jet variables in flat order: component-major, graded-lex within."""
        return [(i, a) for i in range(1, self.K + 1) for a in self.mis.alphas]

    def jet_jacobian(self) -> list[list[ex.Expr]]:
        """d F_j / d xi_v for every operator body and flat jet variable.

        Raises NondifferentiableError when some body has no derivative
        expression (abs); callers fall back to derivative-free search.
        """
        if self._jacobian is None:
            fv = self.flat_vars()
            self._jacobian = [[ex.diff_jet(Fj, v) for v in fv] for Fj in self.F]
        return self._jacobian

    def rhs_at(self, x) -> np.ndarray:
        return np.array([ex.eval_point(fj, x) for fj in self.f])

    def rhs_on_arrays(self, coords: Sequence[np.ndarray]) -> list[np.ndarray]:
        return [ex.eval_on_arrays(fj, coords) for fj in self.f]


def apply_operator_point(sys: PdeSystem, x, jet: Jet) -> np.ndarray:
    """All K operator values at one point for one jet."""
    return np.array([ex.eval_point(Fj, x, jet) for Fj in sys.F])


def apply_operator(
    sys: PdeSystem, v: PiecewisePoly, domain: GridDomain
) -> list[GridFunction]:
    """Sample T_j v on the lattice, one GridFunction per component.

    Off-skeleton points evaluate F on the owning cell's jets; skeleton
    points are completed by the normalize rule. Outputs are normalized.
    """
    if v.components != sys.K or v.space_dim != sys.n or v.order != sys.m:
        raise ValueError("candidate signature does not match the system")
    owner, boundary = _classify_grid(v.cells, domain)
    if (boundary & ~domain.skeleton).any():
        raise ValueError("domain skeleton does not mark all cell-boundary points")
    meshes = domain.meshes()
    flat_coords = np.stack([m.reshape(-1) for m in meshes], axis=1)
    flat_owner = owner.reshape(-1)
    outs = [np.zeros(flat_owner.shape) for _ in range(sys.K)]
    for ci in range(len(v.cells)):
        sel = flat_owner == ci
        if not sel.any():
            continue
        pts = flat_coords[sel]
        jets = {
            (i, a): v.polys[ci][i - 1].deriv_many(a, pts)
            for i in range(1, sys.K + 1)
            for a in sys.mis.alphas
        }
        coords = [pts[:, d] for d in range(sys.n)]
        for j, Fj in enumerate(sys.F):
            outs[j][sel] = ex.eval_on_arrays(Fj, coords, jets)
    result = []
    for j in range(sys.K):
        vals = skeleton_fill(domain, outs[j].reshape(domain.shape))
        result.append(GridFunction(domain, vals, normalized=True))
    return result


# ---------------------------------------------------------------------------
# assumption evidence


@dataclass(frozen=True)
class AssumptionEvidence:
    """Sampling-based verdict; heuristic is always True, this is not a proof."""

    kind: str
    supported: bool
    witnessed_radius: float
    margin_min: float
    directions: int
    samples_used: int
    r_min: float
    note: str = "sampling evidence; not a proof"
    heuristic: bool = True


def _directions(K: int, extra: int, rng: np.random.Generator) -> np.ndarray:
    axes = np.concatenate([np.eye(K), -np.eye(K)], axis=0)
    if extra <= 0:
        return axes
    raw = rng.normal(size=(extra, K))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    raw = raw[norms[:, 0] > 1e-12]
    norms = norms[norms[:, 0] > 1e-12]
    return np.concatenate([axes, raw / norms], axis=0)


def _principal_directions(images: np.ndarray) -> np.ndarray:
    """Principal axes of the sampled image, both signs.

    A degenerate image (curve or point in R^K) is flat along its smallest
    principal axis, so probing it yields a near-zero margin; random
    directions alone can miss that when the flat axis is oblique.
    """
    centered = images - images.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=True)
    return np.concatenate([vt, -vt], axis=0)


def _image_margins(images: np.ndarray, target: np.ndarray, dirs: np.ndarray) -> float:
    """min over directions of the farthest image reach past the target."""
    rel = images - target  # (S, K)
    proj = rel @ dirs.T  # (S, D)
    return float(proj.max(axis=0).min())


def check_assumption_interior(
    sys: PdeSystem,
    x,
    trial_box: np.ndarray,
    samples: int = 400,
    extra_directions: int = 32,
    r_min: float = 1e-6,
    rng: np.random.Generator | None = None,
) -> AssumptionEvidence:
    """Evidence that f(x) lies in the interior of {F(x, xi) : xi in trial_box}.

    Ball containment is probed along the 2K axis directions plus random
    ones; support requires every directional margin to exceed r_min.
    """
    rng = rng or np.random.default_rng(0)
    box = np.asarray(trial_box, dtype=float)
    if box.shape != (sys.unknown_count, 2):
        raise ValueError("trial box must have shape (M, 2)")
    x = np.asarray(x, dtype=float)
    target = sys.rhs_at(x)
    fv = sys.flat_vars()
    images = []
    for _ in range(samples):
        vec = rng.uniform(box[:, 0], box[:, 1])
        jets = {v: vec[k] for k, v in enumerate(fv)}
        try:
            images.append([ex.eval_point(Fj, x, jets) for Fj in sys.F])
        except ex.EvalDomainError:
            continue
    if not images:
        return AssumptionEvidence(
            kind="interior", supported=False, witnessed_radius=0.0,
            margin_min=float("-inf"), directions=0, samples_used=0, r_min=r_min,
        )
    imgs = np.asarray(images)
    dirs = _directions(sys.K, extra_directions, rng)
    dirs = np.concatenate([dirs, _principal_directions(imgs)], axis=0)
    margin = _image_margins(imgs, target, dirs)
    return AssumptionEvidence(
        kind="interior",
        supported=margin > r_min,
        witnessed_radius=max(margin, 0.0),
        margin_min=margin,
        directions=dirs.shape[0],
        samples_used=imgs.shape[0],
        r_min=r_min,
    )


def _ball_sample(center: np.ndarray, radius: float, rng: np.random.Generator) -> np.ndarray:
    d = center.size
    direction = rng.normal(size=d)
    nrm = np.linalg.norm(direction)
    if nrm < 1e-12:
        return center.copy()
    direction /= nrm
    return center + radius * rng.uniform() ** (1.0 / d) * direction


def check_assumption_open(
    sys: PdeSystem,
    x,
    jet_flat: np.ndarray,
    delta: float,
    eps_ball: float,
    samples: int = 400,
    extra_directions: int = 32,
    r_min: float = 1e-6,
    rng: np.random.Generator | None = None,
    target=None,
) -> AssumptionEvidence:
    """Evidence that F maps B_delta(x) x B_eps(jet) onto a ball around target.

    target defaults to f(x); the refinement scheme probes shifted targets
    f(x) - gamma/(2n). Requires the seed jet to hit the target closely.
    The witnessed ball radius (minimal directional margin) is what the
    scheme uses as a cell openness radius.
    """
    rng = rng or np.random.default_rng(0)
    x = np.asarray(x, dtype=float)
    jet_flat = np.asarray(jet_flat, dtype=float)
    fv = sys.flat_vars()
    if jet_flat.size != len(fv):
        raise ValueError("flat jet length must be K*count")
    target = sys.rhs_at(x) if target is None else np.asarray(target, dtype=float)
    if target.shape != (sys.K,):
        raise ValueError("target must hold one value per component")
    seed_jets = {v: jet_flat[k] for k, v in enumerate(fv)}
    seed_image = np.array([ex.eval_point(Fj, x, seed_jets) for Fj in sys.F])
    if float(np.max(np.abs(seed_image - target))) > 1e-6:
        raise ValueError("seed jet does not hit the probe target F(x, jet) = t")
    images = []
    for _ in range(samples):
        xp = np.clip(_ball_sample(x, delta, rng), sys.box_lo, sys.box_hi)
        vec = _ball_sample(jet_flat, eps_ball, rng)
        jets = {v: vec[k] for k, v in enumerate(fv)}
        try:
            images.append([ex.eval_point(Fj, xp, jets) for Fj in sys.F])
        except ex.EvalDomainError:
            continue
    if not images:
        return AssumptionEvidence(
            kind="openness", supported=False, witnessed_radius=0.0,
            margin_min=float("-inf"), directions=0, samples_used=0, r_min=r_min,
        )
    imgs = np.asarray(images)
    dirs = _directions(sys.K, extra_directions, rng)
    dirs = np.concatenate([dirs, _principal_directions(imgs)], axis=0)
    margin = _image_margins(imgs, target, dirs)
    return AssumptionEvidence(
        kind="openness",
        supported=margin > r_min,
        witnessed_radius=max(margin, 0.0),
        margin_min=margin,
        directions=dirs.shape[0],
        samples_used=imgs.shape[0],
        r_min=r_min,
    )
