"""Hamiltonian/Lagrangian models on a truncated box.

Two closed-form families are built in, both convex and coercive in the
momentum p:

    eikonal    H(x,p) = |p| - f(x)
    quadratic  H(x,p) = |p|^2/2 - f(x)

plus a tabulated family ("sampled") where H is given on a momentum grid
per spatial node (dimension 1 only).  A ``normalization_shift`` c0 is
subtracted from H so that the working critical value can be pinned to 0;
for the built-in families this amounts to replacing the potential f by
F = f + c0.

The module provides the convex conjugate L(x,q) = sup_p [p.q - H(x,p)],
the superlinear surrogate H + (max(0, H - b))^2 with b = max_x H(x,0)
(which leaves every sublevel {H <= a}, a <= b, untouched), the level-set
support function sigma_a(x,q) = max{p.q : H(x,p) <= a}, and a numeric
validator for the standing assumptions (continuity, convexity/coercivity,
and the localization condition comparing the outer-shell values of H on
small momentum balls against max_x min_p H).
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import A3Violated, NonCoercive, NotNormalized

EIKONAL = "eikonal"
QUADRATIC = "quadratic"
SAMPLED = "sampled"

_FAMILIES = (EIKONAL, QUADRATIC, SAMPLED)


# ---------------------------------------------------------------------------
# potential registry
# ---------------------------------------------------------------------------

def _norm(points):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return np.sqrt(np.sum(pts * pts, axis=-1))


POTENTIALS = {
    "abs": lambda pts: _norm(pts),
    "half_square": lambda pts: 0.5 * _norm(pts) ** 2,
    "double_well": lambda pts: (_norm(pts) ** 2 - 1.0) ** 2,
    "inverse_bump": lambda pts: 1.0 / (1.0 + _norm(pts) ** 2),
}


def resolve_potential(spec):
    """Turn a registry name, ``{"name":..., "scale":..., "offset":...}`` dict,
    or a bare callable into a vectorized potential f(points)->values."""
    if callable(spec):
        return spec, {"name": getattr(spec, "__name__", "custom")}
    if isinstance(spec, str):
        spec = {"name": spec}
    name = spec.get("name")
    if name not in POTENTIALS:
        raise KeyError(f"unknown potential {name!r}; registry has {sorted(POTENTIALS)}")
    base = POTENTIALS[name]
    scale = float(spec.get("scale", 1.0))
    offset = float(spec.get("offset", 0.0))
    if scale == 1.0 and offset == 0.0:
        return base, {"name": name}
    return (lambda pts: scale * base(pts) + offset), dict(spec)


# ---------------------------------------------------------------------------
# sampled-family data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampledTable:
    """H tabulated on (node, momentum) pairs; dimension 1 only.

    Rows are convexified once at load time (lower convex envelope along p),
    since duality below is meaningful only for convex H(x, .).
    """

    x_coords: np.ndarray          # (num_x,) node coordinates
    p_grid: np.ndarray            # (P,) momentum samples, increasing
    values: np.ndarray            # (num_x, P)
    convexified: bool = False

    def row_for(self, x):
        x = float(np.asarray(x).reshape(-1)[0])
        i = int(np.argmin(np.abs(self.x_coords - x)))
        return self.values[i]


def lower_convex_envelope(p, v):
    """Lower convex envelope of the points (p_k, v_k); p strictly increasing."""
    hull_p, hull_v = [], []
    for pk, vk in zip(p, v):
        hull_p.append(pk)
        hull_v.append(vk)
        while len(hull_p) >= 3:
            p0, p1, p2 = hull_p[-3:]
            v0, v1, v2 = hull_v[-3:]
            # middle point above the chord -> not on the envelope
            if (v1 - v0) * (p2 - p1) >= (v2 - v1) * (p1 - p0) - 1e-15 * (abs(v2) + abs(v0) + 1):
                del hull_p[-2], hull_v[-2]
            else:
                break
    return np.interp(p, hull_p, hull_v)


def convexify_table(table: SampledTable) -> tuple[SampledTable, float]:
    """Replace each row by its lower convex envelope; returns max correction."""
    vals = np.array(table.values, dtype=float)
    worst = 0.0
    for i in range(vals.shape[0]):
        env = lower_convex_envelope(table.p_grid, vals[i])
        worst = max(worst, float(np.max(vals[i] - env)))
        vals[i] = env
    return dataclasses.replace(table, values=vals, convexified=True), worst


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HamiltonianModel:
    family: str
    potential: Optional[Callable] = None
    dimension: int = 1
    normalization_shift: float = 0.0
    superlinearized: bool = False
    super_b: float = 0.0              # b = max_x H(x,0), frozen at superlinearize time
    sampled: Optional[SampledTable] = None
    potential_spec: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"family must be one of {_FAMILIES}, got {self.family!r}")
        if self.family == SAMPLED:
            if self.sampled is None:
                raise ValueError("sampled family needs a SampledTable")
            if self.dimension != 1:
                raise ValueError("sampled family is implemented for dimension 1 only")
        elif self.potential is None:
            raise ValueError("closed-form families need a potential")


def make_model(family, potential=None, dimension=1, normalization_shift=0.0,
               sampled=None):
    pot_fn, pot_spec = (None, {}) if potential is None else resolve_potential(potential)
    if family == SAMPLED and sampled is not None and not sampled.convexified:
        sampled, worst = convexify_table(sampled)
        if worst > 1e-9:
            warnings.warn(f"sampled table convexified; largest correction {worst:.3g}",
                          stacklevel=2)
    return HamiltonianModel(family=family, potential=pot_fn, dimension=dimension,
                            normalization_shift=float(normalization_shift),
                            sampled=sampled, potential_spec=pot_spec)


def effective_potential(model, points):
    """F = f + c0 so that the working Hamiltonian reads |p|-F or |p|^2/2-F."""
    return model.potential(points) + model.normalization_shift


def _as_points(x, dim):
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if pts.shape[-1] != dim:
        raise ValueError(f"points of dimension {pts.shape[-1]}, model has {dim}")
    return pts


def hamiltonian(model, x, p):
    """H(x,p) after normalization shift (and superlinearization if flagged)."""
    X = _as_points(x, model.dimension)
    P = _as_points(p, model.dimension)
    r = np.sqrt(np.sum(P * P, axis=-1))
    if model.family == SAMPLED:
        base = np.array([np.interp(pv[0], model.sampled.p_grid, model.sampled.row_for(xv))
                         for xv, pv in zip(np.broadcast_to(X, (max(len(X), len(P)), X.shape[1])),
                                           np.broadcast_to(P, (max(len(X), len(P)), P.shape[1])))])
        base = base - model.normalization_shift
    else:
        F = effective_potential(model, X)
        base = (r - F) if model.family == EIKONAL else (0.5 * r * r - F)
    if model.superlinearized and model.family != QUADRATIC:
        base = base + np.maximum(0.0, base - model.super_b) ** 2
    return base if base.size > 1 else float(base[0])


def h_at_zero(model, points):
    """H(x,0) on an array of points (superlinearization never changes it when b>=0)."""
    X = _as_points(points, model.dimension)
    if model.family == SAMPLED:
        vals = np.array([np.interp(0.0, model.sampled.p_grid, model.sampled.row_for(xv))
                         for xv in X]) - model.normalization_shift
        if model.superlinearized:
            vals = vals + np.maximum(0.0, vals - model.super_b) ** 2
        return vals
    return -effective_potential(model, X)


def h_min_over_p(model, points):
    """min_p H(x,p) per point (attained at p=0 for the built-in families)."""
    X = _as_points(points, model.dimension)
    if model.family == SAMPLED:
        return np.array([np.min(model.sampled.row_for(xv)) for xv in X]) - model.normalization_shift
    return -effective_potential(model, X)


def h_max_small_ball(model, points, eps):
    """max_{|p| <= eps} H(x,p) per point (radial profiles are nondecreasing)."""
    X = _as_points(points, model.dimension)
    if model.family == EIKONAL:
        out = eps - effective_potential(model, X)
    elif model.family == QUADRATIC:
        out = 0.5 * eps * eps - effective_potential(model, X)
    else:
        pg = model.sampled.p_grid
        out = np.empty(len(X))
        for i, xv in enumerate(X):
            row = model.sampled.row_for(xv)
            inside = np.abs(pg) <= eps
            cand = [row[inside].max()] if inside.any() else []
            for s in (-eps, eps):
                if pg[0] <= s <= pg[-1]:
                    cand.append(np.interp(s, pg, row))
            out[i] = max(cand)
        out = out - model.normalization_shift
    if model.superlinearized and model.family != QUADRATIC:
        out = out + np.maximum(0.0, out - model.super_b) ** 2
    return out


# ---------------------------------------------------------------------------
# Fenchel transform
# ---------------------------------------------------------------------------

def _eikonal_super_lagrangian(F, b, speed):
    """Conjugate of r -> r - F + (max(0, r - (F+b)))^2 at slope |q| = speed.

    The kink radius is r0 = F + b (nonnegative on the box once b = -min F).
    For speed <= 1 the transform equals F; beyond, the quadratic tail takes
    over and the maximizer sits at r0 + (speed-1)/2.
    """
    F = np.asarray(F, dtype=float)
    speed = np.asarray(speed, dtype=float)
    r0 = np.maximum(F + b, 0.0)
    excess = np.maximum(speed - 1.0, 0.0)
    linear_part = F + r0 * excess
    rstar = np.maximum(r0, (F + b) + 0.5 * (speed - 1.0))
    tail_part = rstar * (speed - 1.0) + F - (rstar - (F + b)) ** 2
    return np.maximum(linear_part, tail_part)


def fenchel_transform(model, x, q):
    """L(x,q) = sup_p [p.q - H(x,p)].

    Closed forms for the built-in families; grid maximization with a
    golden-section refinement for the sampled family.  Raises NonCoercive
    when the supremum runs away along the probe radius (H not superlinear,
    e.g. the raw eikonal family at |q| > 1).
    """
    X = _as_points(x, model.dimension)
    Q = _as_points(q, model.dimension)
    speed = np.sqrt(np.sum(Q * Q, axis=-1))
    if model.family == QUADRATIC:
        out = 0.5 * speed ** 2 + effective_potential(model, X)
        return out if out.size > 1 else float(out[0])
    if model.family == EIKONAL:
        F = effective_potential(model, X)
        if model.superlinearized:
            out = _eikonal_super_lagrangian(F, model.super_b, speed)
        else:
            if np.any(speed > 1.0 + 1e-12):
                raise NonCoercive(
                    "eikonal transform diverges for |q| > 1; superlinearize first")
            out = F
        return out if out.size > 1 else float(out[0])
    # sampled, dimension 1
    out = np.empty(max(len(X), len(Q)))
    Xb = np.broadcast_to(X, (out.size, 1))
    Qb = np.broadcast_to(Q, (out.size, 1))
    for i in range(out.size):
        out[i] = _sampled_transform(model, Xb[i], float(Qb[i][0]))
    return out if out.size > 1 else float(out[0])


def _sampled_h_scalar(model, row, p):
    v = np.interp(p, model.sampled.p_grid, row) - model.normalization_shift
    if model.superlinearized:
        v = v + max(0.0, v - model.super_b) ** 2
    return v


def _sampled_transform(model, x, qv):
    row = model.sampled.row_for(x)
    pg = model.sampled.p_grid
    obj = pg * qv - (row - model.normalization_shift)
    if model.superlinearized:
        h = (row - model.normalization_shift)
        obj = pg * qv - (h + np.maximum(0.0, h - model.super_b) ** 2)
    k = int(np.argmax(obj))
    if k in (0, len(pg) - 1) and abs(qv) > 1e-14:
        # maximizer pushed to the probe boundary: cannot certify the sup
        edge = obj[k] - obj[k - 1 if k else k + 1]
        if edge > 1e-12 * (1 + abs(obj[k])):
            raise NonCoercive("sampled transform maximizer on the p-grid boundary")
    lo = pg[max(k - 1, 0)]
    hi = pg[min(k + 1, len(pg) - 1)]
    # golden-section refinement on the bracketing interval
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    fobj = lambda p: p * qv - _sampled_h_scalar(model, row, p)
    a, bnd = lo, hi
    c = bnd - phi * (bnd - a)
    d = a + phi * (bnd - a)
    fc, fd = fobj(c), fobj(d)
    for _ in range(60):
        if fc >= fd:
            bnd, d, fd = d, c, fc
            c = bnd - phi * (bnd - a)
            fc = fobj(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (bnd - a)
            fd = fobj(d)
    return max(fobj(0.5 * (a + bnd)), float(np.max(obj)))


def lagrangian_table(model, points, velocities):
    """L(x_i, q_j) as an (n_points, n_velocities) array; +inf marks velocities
    where the transform is infinite (raw eikonal beyond the unit ball)."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    V = np.atleast_2d(np.asarray(velocities, dtype=float))
    speed = np.sqrt(np.sum(V * V, axis=-1))
    n, m = len(X), len(V)
    if model.family == QUADRATIC:
        return 0.5 * speed[None, :] ** 2 + effective_potential(model, X)[:, None]
    if model.family == EIKONAL:
        F = effective_potential(model, X)
        if model.superlinearized:
            return _eikonal_super_lagrangian(F[:, None], model.super_b, speed[None, :])
        out = np.where(speed[None, :] <= 1.0 + 1e-12, F[:, None], np.inf)
        return np.broadcast_to(out, (n, m)).copy()
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = _sampled_transform(model, X[i], float(V[j][0]))
    return out


# ---------------------------------------------------------------------------
# superlinearization
# ---------------------------------------------------------------------------

def superlinearize(model, grid):
    """Return the model with H replaced by H + (max(0, H - b))^2, b = max H(x,0).

    The zero sublevel sets (in fact every sublevel below b) are untouched, so
    the critical structure and all subsolutions are preserved; the quadratic
    family is already superlinear and passes through unchanged apart from the
    flag.  Raises A3Violated when b is attained on the outer shell of the box
    (the localization assumption has no interior maximizer) and NotNormalized
    when b < 0 (the model is not normalized to critical value 0).
    """
    pts = grid.node_coords()
    vals = h_at_zero(model, pts)
    k = int(np.argmax(vals))
    b = float(vals[k])
    if grid.shell_mask()[k] and not np.any(vals[~grid.shell_mask()] >= b - 1e-12):
        raise A3Violated("max of H(.,0) attained only on the outer shell")
    if b < -1e-9:
        raise NotNormalized(f"max H(x,0) = {b:.3g} < 0; normalize the model first")
    return dataclasses.replace(model, superlinearized=True, super_b=max(b, 0.0))


# ---------------------------------------------------------------------------
# support function of sublevel sets
# ---------------------------------------------------------------------------

def support_function(model, a, x, q):
    """sigma_a(x,q) = max{p.q : H(x,p) <= a}; None when the sublevel is empty.

    An empty sublevel certifies that the level a is subcritical at x.
    """
    rad = sublevel_radius(model, a, x)
    if rad is None:
        return None
    Q = _as_points(q, model.dimension)
    speed = float(np.sqrt(np.sum(Q * Q, axis=-1))[0])
    if model.family == SAMPLED:
        return _sampled_support(model, a, x, float(Q[0][0]))
    return rad * speed


def sublevel_radius(model, a, x):
    """Radius of {p : H(x,p) <= a} for the radial families; None if empty."""
    if model.family == SAMPLED:
        row = model.sampled.row_for(x) - model.normalization_shift
        if model.superlinearized:
            row = row + np.maximum(0.0, row - model.super_b) ** 2
        if np.min(row) > a:
            return None
        return float(np.max(np.abs(model.sampled.p_grid[row <= a])))
    F = float(effective_potential(model, np.atleast_2d(np.asarray(x, dtype=float)))[0])
    if model.family == QUADRATIC:
        val = F + a
        return math.sqrt(2.0 * val) if val >= 0 else None
    # eikonal; superlinearization only matters above the level b
    if model.superlinearized and a > model.super_b:
        w = F + model.super_b
        s = 0.5 * (-1.0 + math.sqrt(1.0 + 4.0 * (a - model.super_b)))
        return max(w, 0.0) + s if w + s >= 0 else None
    val = F + a
    return val if val >= 0 else None


def support_batch(model, a, points, velocities):
    """sigma_a on (points x velocities); nan marks empty sublevels."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    V = np.atleast_2d(np.asarray(velocities, dtype=float))
    speed = np.sqrt(np.sum(V * V, axis=-1))
    if model.family == SAMPLED:
        out = np.empty((len(X), len(V)))
        for i in range(len(X)):
            for j in range(len(V)):
                s = _sampled_support(model, a, X[i], float(V[j][0]))
                out[i, j] = np.nan if s is None else s
        return out
    rad = np.array([r if (r := sublevel_radius(model, a, xv)) is not None else np.nan
                    for xv in X])
    return rad[:, None] * speed[None, :]


def _sampled_support(model, a, x, qv):
    row = model.sampled.row_for(x) - model.normalization_shift
    if model.superlinearized:
        row = row + np.maximum(0.0, row - model.super_b) ** 2
    pg = model.sampled.p_grid
    keep = row <= a
    if not keep.any():
        return None
    cand = list(pg[keep] * qv)
    # sharpen with the linear crossings of the level a
    for i in range(len(pg) - 1):
        lo, hi = row[i], row[i + 1]
        if (lo - a) * (hi - a) < 0:
            t = (a - lo) / (hi - lo)
            cand.append((pg[i] + t * (pg[i + 1] - pg[i])) * qv)
    return float(max(cand))


# ---------------------------------------------------------------------------
# assumption validation
# ---------------------------------------------------------------------------

@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str = ""
    witness: Optional[tuple] = None


@dataclass
class AssumptionReport:
    a3_lhs: float
    a3_rhs: float
    epsilon_used: float
    margin: float
    verdicts: dict
    coercivity_radius: float = 0.0

    @property
    def all_passed(self):
        return all(v.passed for v in self.verdicts.values())


def validate_assumptions(model, grid, probe_density=2000, eps_sweep=None,
                         rng_seed=0, convexity_tol=None):
    """Numeric check of continuity, convexity/coercivity, and localization.

    The localization check compares, over a sweep of momentum radii eps,
    the largest value of H on small balls over the outermost 10% shell of
    the box against max_x min_p H over the whole box; the most favorable
    margin and its eps witness are reported.  All quantities are concrete
    (witness-based): the report is evidence, not a proof.
    """
    if eps_sweep is None:
        eps_sweep = [k / 100.0 for k in range(1, 101)]
    pts = grid.node_coords()
    rng = np.random.default_rng(rng_seed)
    verdicts = {}

    finite = np.all(np.isfinite(h_at_zero(model, pts)))
    verdicts["A1"] = Verdict("A1", bool(finite), "finite nodal values")

    if convexity_tol is None:
        convexity_tol = 1e-12 if model.family != SAMPLED else 1e-8
    n_tri = min(probe_density, 5000)
    xs = pts[rng.integers(0, len(pts), size=n_tri)]
    p1 = rng.uniform(-3.0, 3.0, size=(n_tri, model.dimension))
    p2 = rng.uniform(-3.0, 3.0, size=(n_tri, model.dimension))
    mid = hamiltonian(model, xs, 0.5 * (p1 + p2))
    avg = 0.5 * (np.asarray(hamiltonian(model, xs, p1)) + np.asarray(hamiltonian(model, xs, p2)))
    conv_gap = float(np.max(np.atleast_1d(mid - avg)))
    verdicts["A2-convexity"] = Verdict(
        "A2-convexity", conv_gap <= convexity_tol, f"worst midpoint gap {conv_gap:.3e}")

    coer_radius = 0.0
    coercive = True
    sample = pts[:: max(1, len(pts) // 64)]
    h0 = h_at_zero(model, sample)
    for radius in (1.0, 2.0, 4.0, 8.0, 16.0, 32.0):
        e = np.zeros(model.dimension)
        e[0] = radius
        vals = np.asarray(hamiltonian(model, sample, np.broadcast_to(e, sample.shape)))
        if np.all(vals >= h0 + 1.0):
            coer_radius = radius
            break
    else:
        coercive = False
    verdicts["A2-coercivity"] = Verdict(
        "A2-coercivity", coercive, f"H(x,p) >= H(x,0)+1 past radius {coer_radius}")

    shell = grid.shell_mask()
    a3_rhs = float(np.max(h_min_over_p(model, pts)))
    best = (-np.inf, eps_sweep[0], np.inf)
    for eps in eps_sweep:
        lhs = float(np.max(h_max_small_ball(model, pts[shell], eps)))
        margin = a3_rhs - lhs
        if margin > best[0]:
            best = (margin, eps, lhs)
    margin, eps_used, a3_lhs = best
    verdicts["A3"] = Verdict(
        "A3", margin > 1e-9,
        f"shell max over |p|<= {eps_used} is {a3_lhs:.6g} vs interior bound {a3_rhs:.6g}")

    return AssumptionReport(a3_lhs=a3_lhs, a3_rhs=a3_rhs, epsilon_used=eps_used,
                            margin=margin, verdicts=verdicts,
                            coercivity_radius=coer_radius)


# ---------------------------------------------------------------------------
# Lagrangian witnesses (velocity bound, core compact, lower bounds)
# ---------------------------------------------------------------------------

@dataclass
class LagrangianEval:
    source: HamiltonianModel
    superlinearized: bool
    velocity_bound: float
    delta0: float = 0.0
    m0: float = 0.0
    core_box: Optional[np.ndarray] = None


def lagrangian_eval(model, grid, velocities):
    """Concrete witnesses for the lower bounds of L outside a core sub-box.

    Finds the smallest centered sub-box K with min_q L > 0 outside it, then
    reports delta0 = min L/|q| and m0 = min_q L over the exterior sample.
    """
    vbound = np.inf
    if model.family == EIKONAL and not model.superlinearized:
        vbound = 1.0
    pts = grid.node_coords()
    V = np.atleast_2d(np.asarray(velocities, dtype=float))
    speed = np.sqrt(np.sum(V * V, axis=-1))
    finite_v = speed <= vbound + 1e-12 if np.isfinite(vbound) else np.ones(len(V), bool)
    L = lagrangian_table(model, pts, V[finite_v])
    spd = speed[finite_v]
    core = None
    for shrink in np.linspace(0.05, 0.95, 19):
        sub = grid.scaled_box(shrink)
        outside = ~grid.box_mask(sub)
        if outside.any() and np.min(L[outside]) > 0:
            core = sub
            break
    if core is None:
        core = grid.box.copy()
    outside = ~grid.box_mask(core)
    if outside.any():
        moving = spd > 1e-12
        delta0 = float(np.min(L[np.ix_(outside, moving)] / spd[moving][None, :])) if moving.any() else 0.0
        m0 = float(np.min(L[outside]))
    else:
        delta0, m0 = 0.0, 0.0
    return LagrangianEval(source=model, superlinearized=model.superlinearized,
                          velocity_bound=vbound, delta0=delta0, m0=m0, core_box=core)
