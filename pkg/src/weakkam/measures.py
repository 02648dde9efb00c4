"""Occupation-measure linear programs and their diagnostics.

Variables are masses mu(i,q) >= 0 on (node, velocity) pairs.  Two programs
are built against the foot-point transition:

  ergodic     minimize <mu, L> over closed probability measures: for every
              node j the outflow sum_q mu(j,q) balances the interpolated
              inflow sum_{i,q} w(i,q->j) mu(i,q); the optimum value equals
              minus the critical value of the model.

  discounted  minimize <mu, L> subject to the holonomy rows
              (1+lambda*h) sum_q mu(j,q) - inflow(j) = lambda*h*[j == z];
              this is the exact linear-programming dual of the discounted
              value iteration, so the optimum equals lambda * u_lambda(z)
              and the stored measure is the normalized occupation measure
              of the discounted problem anchored at z.

Both use the unit-mass normalization; for the discounted program the mass
row is implied exactly by the holonomy rows (their sum reads
lambda*h*(total mass) = lambda*h) and is therefore not repeated, which
also makes the q = 0 self-loop columns a feasible diagonal crash basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grids import build_transition
from .models import lagrangian_table
from .simplex import solve_lp

SUPPORT_TOL = 1e-9


@dataclass
class LPProblem:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    var_pairs: list              # (node, velocity_index) per column
    row_kind: list               # "stationarity" | "mass" | "budget"
    kind: str                    # "ergodic" | "discounted"
    meta: dict = field(default_factory=dict)


@dataclass
class DiscreteMeasure:
    entries: dict                # (node, velocity_index) -> mass
    total_mass: float
    kind: str
    meta: dict = field(default_factory=dict)

    def vector(self, grid, velocity_set):
        out = np.zeros((grid.num_nodes, velocity_set.size))
        for (i, m), v in self.entries.items():
            out[i, m] = v
        return out

    def x_marginal(self, grid, velocity_set):
        return self.vector(grid, velocity_set).sum(axis=1)


@dataclass
class LPResult:
    measure: DiscreteMeasure
    objective: float
    duals: np.ndarray
    iterations: int
    basis: np.ndarray


def _finite_variables(L_flat):
    return np.nonzero(np.isfinite(L_flat))[0]


def _stationarity_matrix(transition, active, factor_out=1.0):
    """Rows j: factor_out * outflow(j) - inflow(j), columns = active (i,q)."""
    grid = transition.grid
    n = grid.num_nodes
    M = transition.velocity_set.size
    K = transition.idx.shape[2]
    nodes = active // M
    A = np.zeros((n, len(active)))
    cols = np.arange(len(active))
    np.add.at(A, (nodes, cols), factor_out)
    idx = transition.idx.reshape(n * M, K)[active]
    w = transition.w.reshape(n * M, K)[active]
    for k in range(K):
        np.add.at(A, (idx[:, k], cols), -w[:, k])
    return A, nodes


def build_ergodic_lp(model, grid, velocity_set, transition=None):
    """min <mu, L> over {mu >= 0, closed, total mass 1}."""
    if transition is None:
        transition = build_transition(grid, velocity_set)
    L = lagrangian_table(model, grid.coords, velocity_set.vectors).reshape(-1)
    active = _finite_variables(L)
    A_st, nodes = _stationarity_matrix(transition, active, factor_out=1.0)
    A = np.vstack([A_st, np.ones((1, len(active)))])
    b = np.zeros(grid.num_nodes + 1)
    b[-1] = 1.0
    M = velocity_set.size
    pairs = [(int(v // M), int(v % M)) for v in active]
    return LPProblem(c=L[active], A=A, b=b, var_pairs=pairs,
                     row_kind=["stationarity"] * grid.num_nodes + ["mass"],
                     kind="ergodic",
                     meta={"grid": grid, "velocity_set": velocity_set,
                           "transition": transition, "active": active})


def build_discounted_lp(model, grid, velocity_set, lam, z, transition=None):
    """min <mu, L> over the discounted holonomy polytope anchored at node z.

    z may be a node index or coordinates (snapped to the nearest node).
    The unnormalized dual has mass 1/(lambda*h); the rows below are already
    scaled so the optimal measure is a probability and <mu, L> equals
    lambda * u_lambda(z) for the value-iteration fixed point u_lambda.
    """
    if transition is None:
        transition = build_transition(grid, velocity_set)
    if not np.isscalar(z):
        z = grid.node_near(z)
    z = int(z)
    L = lagrangian_table(model, grid.coords, velocity_set.vectors).reshape(-1)
    active = _finite_variables(L)
    lam_h = lam * grid.h
    A, nodes = _stationarity_matrix(transition, active, factor_out=1.0 + lam_h)
    b = np.zeros(grid.num_nodes)
    b[z] = lam_h
    # the unit-mass row is implied exactly: summing the holonomy rows gives
    # lam*h*(total mass) = lam*h
    M = velocity_set.size
    pairs = [(int(v // M), int(v % M)) for v in active]
    zero_m = velocity_set.zero_index()
    col_of = {pair: col for col, pair in enumerate(pairs)}
    crash = [col_of.get((i, zero_m)) for i in range(grid.num_nodes)]
    crash = crash if all(cb is not None for cb in crash) else None
    return LPProblem(c=L[active], A=A, b=b, var_pairs=pairs,
                     row_kind=["stationarity"] * grid.num_nodes,
                     kind="discounted",
                     meta={"grid": grid, "velocity_set": velocity_set,
                           "transition": transition, "active": active,
                           "lambda": lam, "z": z, "crash_basis": crash})


def lp_solve(problem, tol=1e-9, basis0=None):
    """Solve the program; returns the measure, the optimum, and the duals
    (the multipliers on the stationarity rows approximate a subsolution
    potential and are reported for diagnostics)."""
    if basis0 is None:
        basis0 = problem.meta.get("crash_basis")
    sol = solve_lp(problem.c, problem.A, problem.b, tol=tol, basis0=basis0)
    entries = {}
    for col, mass in enumerate(sol.x):
        if mass > SUPPORT_TOL:
            entries[problem.var_pairs[col]] = float(mass)
    meta = {k: v for k, v in problem.meta.items()
            if k in ("lambda", "z")}
    measure = DiscreteMeasure(entries=entries, total_mass=float(np.sum(sol.x)),
                              kind=problem.kind, meta=meta)
    return LPResult(measure=measure, objective=sol.objective, duals=sol.duals,
                    iterations=sol.iterations, basis=sol.basis)


# ---------------------------------------------------------------------------
# feasibility rechecks, independent of the solver
# ---------------------------------------------------------------------------

def _flows(mu, grid, velocity_set, transition):
    vec = mu.vector(grid, velocity_set)
    out = vec.sum(axis=1)
    inflow = np.zeros(grid.num_nodes)
    K = transition.idx.shape[2]
    flat = vec.reshape(-1)
    idx = transition.idx.reshape(-1, K)
    w = transition.w.reshape(-1, K)
    for k in range(K):
        np.add.at(inflow, idx[:, k], w[:, k] * flat)
    return out, inflow


def closedness_residual(mu, transition):
    grid = transition.grid
    out, inflow = _flows(mu, grid, transition.velocity_set, transition)
    return float(np.max(np.abs(out - inflow)))


def holonomy_residual(mu, lam, z, transition):
    grid = transition.grid
    if not np.isscalar(z):
        z = grid.node_near(z)
    out, inflow = _flows(mu, grid, transition.velocity_set, transition)
    rhs = np.zeros(grid.num_nodes)
    rhs[int(z)] = lam * grid.h
    return float(np.max(np.abs((1.0 + lam * grid.h) * out - inflow - rhs)))


@dataclass
class SupportReport:
    outside_mass: float
    passed: Optional[bool]       # None for discounted measures (informational)
    dilation: float
    q_bound: float


def support_check(mu, critical, q_bound=None, mass_tol=None):
    """Mass outside (Aubry set dilated by 2h) x {|q| <= q_bound}.

    Pass/fail applies to ergodic measures only; discounted occupation
    measures legitimately ride the approach path and are reported as
    informational.
    """
    grid = critical.grid
    vset = critical.velocity_set
    if q_bound is None:
        q_bound = vset.q_max
    if mass_tol is None:
        mass_tol = 1e-3 + 2.0 * grid.h
    dil = 2.0 * grid.h
    aubry_pts = grid.coords[critical.aubry_nodes]
    speeds = vset.speeds()
    outside = 0.0
    for (i, m), mass in mu.entries.items():
        d = np.min(np.sqrt(np.sum((grid.coords[i] - aubry_pts) ** 2, axis=1)))
        if d > dil + 1e-12 or speeds[m] > q_bound + 1e-12:
            outside += mass
    passed = (outside <= mass_tol) if mu.kind == "ergodic" else None
    return SupportReport(outside_mass=float(outside), passed=passed,
                         dilation=dil, q_bound=float(q_bound))


# ---------------------------------------------------------------------------
# closedness against smooth test fields
# ---------------------------------------------------------------------------

def _bump(points, center, radius, amp):
    u = np.sum((points - center) ** 2, axis=-1) / radius ** 2
    return amp * np.maximum(0.0, 1.0 - u) ** 2


def _bump_grad(points, center, radius, amp):
    u = np.sum((points - center) ** 2, axis=-1) / radius ** 2
    fac = amp * 2.0 * np.maximum(0.0, 1.0 - u) * (-2.0 / radius ** 2)
    return fac[:, None] * (points - center)


def gradient_pairing(mu, grid, velocity_set, transition, psi_values=None,
                     grad_fn=None, mode="upwind"):
    """<mu, Dpsi . q> with psi given on the grid.

    mode "upwind" uses the foot-point difference (psi(x+hq) - psi(x))/h,
    the discrete pairing the stationarity rows annihilate exactly; mode
    "analytic" uses the true gradient and measures the O(h) defect.
    """
    vec = mu.vector(grid, velocity_set)
    if mode == "upwind":
        from .grids import interpolate
        diff = (interpolate(transition, np.asarray(psi_values)) -
                np.asarray(psi_values)[:, None]) / grid.h
        return float(np.sum(vec * diff))
    grads = grad_fn(grid.coords)                      # (n, N)
    dots = grads @ velocity_set.vectors.T             # (n, M)
    return float(np.sum(vec * dots))


def random_bump_residuals(mu, grid, velocity_set, transition, n_fields=20,
                          seed=0, mode="upwind"):
    """|<mu, Dpsi . q>| for seeded random quadratic bumps psi."""
    rng = np.random.default_rng(seed)
    res = []
    for _ in range(n_fields):
        center = np.array([rng.uniform(lo, hi) for lo, hi in grid.box])
        radius = rng.uniform(0.3, 1.0) * float(np.min(grid.box[:, 1] - grid.box[:, 0]))
        amp = rng.uniform(0.5, 2.0)
        if mode == "upwind":
            psi = _bump(grid.coords, center, radius, amp)
            r = gradient_pairing(mu, grid, velocity_set, transition,
                                 psi_values=psi, mode="upwind")
        else:
            r = gradient_pairing(mu, grid, velocity_set, transition,
                                 grad_fn=lambda pts: _bump_grad(pts, center, radius, amp),
                                 mode="analytic")
        res.append(abs(r))
    return np.array(res)


# ---------------------------------------------------------------------------
# the Mather polytope (ergodic feasible set cut at the optimal value)
# ---------------------------------------------------------------------------

@dataclass
class MatherPolytope:
    A: np.ndarray
    b: np.ndarray
    var_pairs: list              # per measure column; final column is the budget slack
    L_active: np.ndarray
    ergodic_objective: float
    c_slack: float
    meta: dict


def build_mather_polytope(model, grid, velocity_set, transition=None,
                          ergodic_result=None, slack=None):
    """Closed unit-mass measures with <mu, L> within `slack` of the optimum.

    The budget row <mu, L> + s = optimum + slack (s >= 0) is appended as an
    extra column so any linear objective over the measures can be optimized
    on the epsilon-argmin face of the ergodic program.
    """
    problem = build_ergodic_lp(model, grid, velocity_set, transition=transition)
    if ergodic_result is None:
        ergodic_result = lp_solve(problem)
    if slack is None:
        slack = 1e-7 * (1.0 + abs(ergodic_result.objective)) + 1e-3 * grid.h ** 2
    nvar = len(problem.var_pairs)
    A = np.zeros((problem.A.shape[0] + 1, nvar + 1))
    A[:-1, :-1] = problem.A
    A[-1, :-1] = problem.c
    A[-1, -1] = 1.0
    b = np.concatenate([problem.b, [ergodic_result.objective + slack]])
    return MatherPolytope(A=A, b=b, var_pairs=problem.var_pairs,
                          L_active=problem.c,
                          ergodic_objective=ergodic_result.objective,
                          c_slack=ergodic_result.objective + slack,
                          meta=dict(problem.meta))


def optimize_over_mather(polytope, objective, basis0=None, tol=1e-9):
    """min objective.mu over the Mather polytope; objective indexed like
    var_pairs (the slack column gets cost 0)."""
    c = np.concatenate([np.asarray(objective, dtype=float), [0.0]])
    sol = solve_lp(c, polytope.A, polytope.b, tol=tol, basis0=basis0)
    entries = {}
    for col, mass in enumerate(sol.x[:-1]):
        if mass > SUPPORT_TOL:
            entries[polytope.var_pairs[col]] = float(mass)
    measure = DiscreteMeasure(entries=entries, total_mass=float(np.sum(sol.x[:-1])),
                              kind="ergodic", meta={"polytope": True})
    return measure, sol


def transport_distance(mu1, mu2, grid, velocity_set):
    """1-Wasserstein distance of the position marginals (per-axis CDFs)."""
    m1 = mu1.x_marginal(grid, velocity_set).reshape(grid.shape)
    m2 = mu2.x_marginal(grid, velocity_set).reshape(grid.shape)
    total = 0.0
    for k in range(grid.dimension):
        axes = tuple(a for a in range(grid.dimension) if a != k)
        c1 = np.cumsum(m1.sum(axis=axes) if axes else m1)
        c2 = np.cumsum(m2.sum(axis=axes) if axes else m2)
        total += float(np.sum(np.abs(c1 - c2)) * grid.h)
    return total
