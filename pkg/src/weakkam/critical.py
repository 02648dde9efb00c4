"""Critical value, intrinsic distances, Aubry set, Peierls barrier, weak KAM.

Everything here lives on the weighted graph whose edges are the unclipped
foot-point transitions (i -> x_i + h*q) with cost h * sigma_a(x_i, q), the
discrete length element of the level-a Finsler metric.  Distances are
computed by min-plus relaxation (Bellman-Ford sweeps) with multilinear
interpolation of the continuation value at off-node feet; negative cycles
certify that the level is subcritical, and the critical value is bracketed
by bisection between max_x min_p H and max_x H(x,0) (the level at which
constants become subsolutions).

A node belongs to the (discrete) Aubry set when some nontrivial cycle
through it has intrinsic cost below eps_aubry; cycle costs at true Aubry
points scale like h^2 * Lip(sigma), which fixes the default threshold.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BracketInvalid, IncompatibleTrace, KTooLarge, NegativeCycle
from .grids import ValueField, build_transition, interpolate
from .models import (
    h_at_zero,
    h_max_small_ball,
    h_min_over_p,
    lagrangian_table,
    support_batch,
    sublevel_radius,
)

INF = 1e30


# ---------------------------------------------------------------------------
# edge costs
# ---------------------------------------------------------------------------

@dataclass
class SubcriticalCertificate:
    """A node with empty sublevel set: the level is strictly below critical."""
    node: int
    coords: np.ndarray
    level: float


def edge_costs(model, grid, velocity_set, a, transition=None):
    """Cost h*sigma_a(x_i, q) per unclipped transition; +INF marks excluded
    edges.  Returns a SubcriticalCertificate instead when some node has an
    empty a-sublevel."""
    if transition is None:
        transition = build_transition(grid, velocity_set)
    sigma = support_batch(model, a, grid.coords, velocity_set.vectors)
    bad = np.isnan(sigma[:, velocity_set.zero_index()])
    if bad.any():
        i = int(np.argmax(bad))
        return SubcriticalCertificate(node=i, coords=grid.coords[i], level=a)
    costs = grid.h * sigma
    costs[transition.clipped] = INF
    return costs


def reverse_edge_costs(model, grid, velocity_set, a, transition):
    """Costs for walking edges backwards: step (j, u) mirrors the forward edge
    foot(j,u) --(-u)--> j, so it pays h*sigma_a(foot(j,u), -u)."""
    n, M = transition.clipped.shape
    feet = transition.feet.reshape(n * M, grid.dimension)
    V = velocity_set.vectors
    if model.family == "sampled":
        out = np.empty((n, M))
        from .models import _sampled_support
        for j in range(n):
            for m in range(M):
                s = _sampled_support(model, a, transition.feet[j, m], float(-V[m][0]))
                out[j, m] = np.nan if s is None else grid.h * s
    else:
        rad = np.array([r if (r := sublevel_radius(model, a, f)) is not None else np.nan
                        for f in feet]).reshape(n, M)
        speed = np.sqrt(np.sum(V ** 2, axis=1))
        out = grid.h * rad * speed[None, :]
    out[np.isnan(out)] = INF
    out[transition.clipped] = INF
    return out


# ---------------------------------------------------------------------------
# min-plus relaxation
# ---------------------------------------------------------------------------

def relax_batch(costs, transition, D0, max_sweeps=None, neg_tol=1e-9, chunk=64):
    """Sweep D <- min(D, min_q [c(i,q) + sum_k w(i,q,k) D(idx(i,q,k))]) to a
    fixed point.  D0 has shape (T, n); rows relax independently.

    Raises NegativeCycle when the sweep cap is hit while values still drop
    by more than neg_tol (the min-plus operator is unbounded below).
    """
    D = np.array(D0, dtype=float)
    T, n = D.shape
    if max_sweeps is None:
        max_sweeps = 2 * n + 64
    idx, w = transition.idx, transition.w
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        improvement = 0.0
        for t0 in range(0, T, chunk):
            block = D[t0:t0 + chunk]
            vals = block[:, idx]                       # (b, n, M, K)
            vals = np.minimum(vals, INF)
            cont = np.einsum("bnmk,nmk->bnm", vals, w)
            cand = np.min(costs[None, :, :] + cont, axis=2)
            new = np.minimum(block, cand)
            improvement = max(improvement, float(np.max(block - new)))
            D[t0:t0 + chunk] = new
        if improvement <= 0.0:
            return D, sweeps
    scale = 1.0 + float(np.max(np.abs(D[D < INF / 2]))) if np.any(D < INF / 2) else 1.0
    if improvement > neg_tol * scale:
        raise NegativeCycle(
            f"min-plus relaxation still improving by {improvement:.3e} after {sweeps} sweeps")
    return D, sweeps


def has_negative_cycle(costs, transition, neg_tol=1e-9, max_sweeps=None):
    """Negative-cycle test: relax from the zero field.  Negative path values
    are legitimate (edges may cost less than nothing); a negative cycle is
    exactly the failure of the relaxation to reach a fixed point."""
    n = costs.shape[0]
    try:
        relax_batch(costs, transition, np.zeros((1, n)),
                    max_sweeps=max_sweeps, neg_tol=neg_tol)
    except NegativeCycle:
        return True
    return False


def _heap_relax(costs, transition, target):
    """Label-correcting relaxation with a priority queue; exact at termination
    (empty heap = fixed point).  Requires nonnegative costs to be efficient."""
    n, M = costs.shape
    idx, w = transition.idx, transition.w
    depend = [[] for _ in range(n)]
    for i in range(n):
        for m in range(M):
            if costs[i, m] >= INF / 2:
                continue
            for k in range(idx.shape[2]):
                if w[i, m, k] > 0:
                    depend[idx[i, m, k]].append((i, m))
    D = np.full(n, INF)
    D[target] = 0.0
    heap = [(0.0, target)]
    while heap:
        d, j = heapq.heappop(heap)
        if d > D[j]:
            continue
        for (i, m) in depend[j]:
            vals = D[idx[i, m]]
            live = w[i, m] > 0
            if np.any(vals[live] >= INF / 2):
                continue
            cand = costs[i, m] + float(np.dot(w[i, m][live], vals[live]))
            if cand < D[i] - 1e-15:
                D[i] = cand
                heapq.heappush(heap, (cand, i))
    return D


def distances_to_targets(costs, transition, targets, method="bellman"):
    """Matrix S[t, i] = least cost of walking from node i to targets[t]."""
    targets = list(targets)
    n = costs.shape[0]
    if method == "dijkstra":
        finite = costs[costs < INF / 2]
        if finite.size and np.min(finite) < 0:
            raise ValueError("dijkstra fast path requires nonnegative costs")
        return np.stack([_heap_relax(costs, transition, t) for t in targets])
    D0 = np.full((len(targets), n), INF)
    for r, t in enumerate(targets):
        D0[r, t] = 0.0
    D, _ = relax_batch(costs, transition, D0)
    return D


def intrinsic_distance(model, grid, velocity_set, a, source, transition=None,
                       direction="from", method="bellman"):
    """Distance field of the level-a metric: S_a(source, .) for direction
    "from" (cost of reaching each node from `source`), S_a(., source) for
    direction "to".  Raises NegativeCycle when a is subcritical."""
    if transition is None:
        transition = build_transition(grid, velocity_set)
    if direction == "from":
        costs = reverse_edge_costs(model, grid, velocity_set, a, transition)
    else:
        ec = edge_costs(model, grid, velocity_set, a, transition)
        if isinstance(ec, SubcriticalCertificate):
            raise NegativeCycle(f"empty sublevel at node {ec.node}: level {a} subcritical")
        costs = ec
    D = distances_to_targets(costs, transition, [source], method=method)[0]
    name = f"S_{a:g}({'., source' if direction == 'to' else 'source, .'})"
    return ValueField(grid=grid, values=D, name=name)


# ---------------------------------------------------------------------------
# critical value by bisection
# ---------------------------------------------------------------------------

@dataclass
class CriticalData:
    c: float
    bracket: tuple
    trace: list = field(default_factory=list)
    aubry_nodes: Optional[np.ndarray] = None
    cycle_cost: Optional[np.ndarray] = None
    cycle_exact: Optional[np.ndarray] = None
    eps_aubry: Optional[float] = None
    level: Optional[float] = None          # level used for distances (c_hi)
    S_from: dict = field(default_factory=dict)
    S_to: dict = field(default_factory=dict)
    grid: object = None
    model: object = None
    velocity_set: object = None
    transition: object = None

    def ensure_fields(self, node):
        """Lazily add the pair of distance fields anchored at `node`."""
        if node not in self.S_from:
            self.S_from[node] = intrinsic_distance(
                self.model, self.grid, self.velocity_set, self.level, node,
                transition=self.transition, direction="from").values
        if node not in self.S_to:
            self.S_to[node] = intrinsic_distance(
                self.model, self.grid, self.velocity_set, self.level, node,
                transition=self.transition, direction="to").values
        return self.S_to[node], self.S_from[node]


def is_subcritical(model, grid, velocity_set, a, transition):
    ec = edge_costs(model, grid, velocity_set, a, transition)
    if isinstance(ec, SubcriticalCertificate):
        return True, "empty-sublevel"
    if has_negative_cycle(ec, transition):
        return True, "negative-cycle"
    return False, "feasible"


def critical_value(model, grid, velocity_set, tol=1e-3, transition=None):
    """Bisection for the critical value between max_x min_p H (below which
    some sublevel empties) and max_x H(x,0) (above which constants are
    subsolutions).  A level is subcritical iff a sublevel is empty or the
    cost graph carries a negative cycle."""
    if transition is None:
        transition = build_transition(grid, velocity_set)
    pts = grid.coords
    a_lo = float(np.max(h_min_over_p(model, pts)))
    a_hi = float(np.max(h_at_zero(model, pts)))
    if a_hi < a_lo - 1e-12 * (1 + abs(a_lo)):
        raise BracketInvalid(f"endpoints disordered: [{a_lo}, {a_hi}]")
    trace = []
    sub_hi, reason = is_subcritical(model, grid, velocity_set, a_hi, transition)
    trace.append((a_hi, sub_hi, reason))
    if sub_hi:
        raise BracketInvalid("upper endpoint max_x H(x,0) tests subcritical; "
                             "discretization too coarse")
    while a_hi - a_lo > tol:
        mid = 0.5 * (a_lo + a_hi)
        sub, reason = is_subcritical(model, grid, velocity_set, mid, transition)
        trace.append((mid, sub, reason))
        if sub:
            a_lo = mid
        else:
            a_hi = mid
    data = CriticalData(c=0.5 * (a_lo + a_hi), bracket=(a_lo, a_hi), trace=trace,
                        level=a_hi, grid=grid, model=model,
                        velocity_set=velocity_set, transition=transition)
    return data


# ---------------------------------------------------------------------------
# Aubry set via small cycles
# ---------------------------------------------------------------------------

def sigma_lipschitz_estimate(model, grid, a):
    """Largest axis-difference quotient of sigma_a(., e) over the grid."""
    e = np.zeros((1, grid.dimension))
    e[0, 0] = 1.0
    vals = support_batch(model, a, grid.coords, e)[:, 0]
    vals = np.where(np.isnan(vals), 0.0, vals).reshape(grid.shape)
    worst = 0.0
    for k in range(grid.dimension):
        d = np.abs(np.diff(vals, axis=k)) / grid.h
        if d.size:
            worst = max(worst, float(np.max(d)))
    return worst


def default_eps_aubry(model, grid, a, q_max=1.0):
    """Cycle costs at true Aubry points scale like Lip(sigma) * h^2."""
    lip = max(sigma_lipschitz_estimate(model, grid, a), 1e-9)
    return 2.0 * lip * grid.h ** 2


def aubry_set(model, grid, velocity_set, c, eps_aubry=None, transition=None,
              candidates="auto"):
    """Nodes traversed by nontrivial cycles of intrinsic cost <= eps_aubry.

    cycle_cost(y) = min over q != 0 of [cost(y,q) + S(foot(y,q) -> y)], with
    the return distance interpolated at the foot.  When all edge costs are
    nonnegative, nodes whose cheapest outgoing edge already exceeds the
    threshold cannot be Aubry (the return leg costs >= 0), so the exact
    cycle cost is only computed on the surviving candidates; elsewhere the
    stored value is that first-edge lower bound (exact mask reports which).
    """
    if transition is None:
        transition = build_transition(grid, velocity_set)
    ec = edge_costs(model, grid, velocity_set, c, transition)
    if isinstance(ec, SubcriticalCertificate):
        raise NegativeCycle(f"level {c} subcritical at node {ec.node}")
    if eps_aubry is None:
        eps_aubry = default_eps_aubry(model, grid, c, velocity_set.q_max)
    n, M = ec.shape
    zero_m = velocity_set.zero_index()
    moving = np.ones(M, dtype=bool)
    moving[zero_m] = False
    first_edge = np.min(np.where(moving[None, :], ec, INF), axis=1)
    finite = ec[ec < INF / 2]
    nonneg = finite.size == 0 or float(np.min(finite)) >= -1e-15
    if candidates == "all" or not nonneg:
        cand_nodes = np.arange(n)
    else:
        cand_nodes = np.nonzero(first_edge <= eps_aubry * (1 + 1e-9) + 1e-15)[0]
    cycle = first_edge.copy()
    exact = np.zeros(n, dtype=bool)
    if len(cand_nodes):
        D = distances_to_targets(ec, transition, list(cand_nodes))
        for r, y in enumerate(cand_nodes):
            cont = np.sum(transition.w[y] * D[r][transition.idx[y]], axis=1)  # (M,)
            vals = ec[y] + cont
            vals[zero_m] = INF
            cycle[y] = float(np.min(vals))
            exact[y] = True
    nodes = np.nonzero(cycle <= eps_aubry)[0]
    return nodes, cycle, exact, eps_aubry


def build_critical_data(model, grid, velocity_set, tol=1e-3, eps_aubry=None,
                        transition=None):
    """Bisection, Aubry detection, and the per-Aubry distance fields."""
    if transition is None:
        transition = build_transition(grid, velocity_set)
    data = critical_value(model, grid, velocity_set, tol=tol, transition=transition)
    nodes, cycle, exact, eps = aubry_set(model, grid, velocity_set, data.level,
                                         eps_aubry=eps_aubry, transition=transition)
    data.aubry_nodes = nodes
    data.cycle_cost = cycle
    data.cycle_exact = exact
    data.eps_aubry = eps
    for z in nodes:
        data.ensure_fields(int(z))
    return data


# ---------------------------------------------------------------------------
# Peierls barrier and weak KAM solutions
# ---------------------------------------------------------------------------

def peierls_barrier(critical, x, y):
    """P(x,y) = min over Aubry z of S(x,z) + S(z,y), from the stored fields."""
    best = np.inf
    for z in critical.aubry_nodes:
        s_to, s_from = critical.ensure_fields(int(z))
        best = min(best, float(s_to[x] + s_from[y]))
    return best


def peierls_field_to(critical, y):
    """P(., y) as a vector over nodes."""
    out = np.full(critical.grid.num_nodes, np.inf)
    for z in critical.aubry_nodes:
        s_to, s_from = critical.ensure_fields(int(z))
        out = np.minimum(out, s_to + s_from[y])
    return out


def weak_kam_solution(critical, v0, tol=1e-9):
    """Field v(x) = min over Aubry y of [v0(y) + S(y,x)].

    v0 maps Aubry nodes to trace values (dict, or array aligned with
    critical.aubry_nodes, or a scalar).  The trace must satisfy
    v0(y) - v0(y') <= S(y', y); otherwise the min formula cannot reproduce
    it and IncompatibleTrace is raised.
    """
    nodes = [int(z) for z in critical.aubry_nodes]
    if np.isscalar(v0):
        trace = {z: float(v0) for z in nodes}
    elif isinstance(v0, dict):
        trace = {int(k): float(v) for k, v in v0.items()}
    else:
        trace = {z: float(v) for z, v in zip(nodes, np.asarray(v0, dtype=float))}
    scale = 1.0 + max(abs(v) for v in trace.values())
    for z in nodes:
        _, s_from = critical.ensure_fields(z)
        for y in nodes:
            if trace[y] - trace[z] > s_from[y] + tol * scale:
                raise IncompatibleTrace(
                    f"v0({y}) - v0({z}) = {trace[y] - trace[z]:.6g} exceeds "
                    f"S({z},{y}) = {s_from[y]:.6g}")
    out = np.full(critical.grid.num_nodes, np.inf)
    for z in nodes:
        _, s_from = critical.ensure_fields(z)
        out = np.minimum(out, trace[z] + s_from)
    return ValueField(grid=critical.grid, values=out, name="weak_kam")


# ---------------------------------------------------------------------------
# subsolution utilities
# ---------------------------------------------------------------------------

def is_subsolution(u, model, grid, velocity_set, a, slack, transition=None):
    """Discrete Fenchel-form check u(foot(i,q)) - u(i) <= h*(L(x_i,q) + a).

    Runs over unclipped (i,q) pairs with finite L; returns (verdict, worst
    residual) where the residual is the largest violation before slack.
    """
    if transition is None:
        transition = build_transition(grid, velocity_set)
    vals = u.values if isinstance(u, ValueField) else np.asarray(u, dtype=float)
    L = lagrangian_table(model, grid.coords, velocity_set.vectors)
    cont = interpolate(transition, vals)
    res = cont - vals[:, None] - grid.h * (L + a)
    mask = (~transition.clipped) & np.isfinite(L)
    worst = float(np.max(res[mask])) if mask.any() else 0.0
    return worst <= slack, worst


def compactify_subsolution(u, core_box, model, grid, level=0.0, eps=None,
                           margin_cells=2):
    """Cap a subsolution so it is constant near the box boundary.

    Builds the cone phi = -(eps/2)|x|, lifts it just above u on the smallest
    centered sub-box C containing `core_box` and every node where
    max_{|p|<=eps} H >= level, and returns max(min(phi + b, u), min_C u),
    which agrees with u on the core and flattens outside.  When eps is not
    given, the steepest slope that still keeps C strictly inside the box is
    used (steeper cones flatten sooner on a truncated domain).  KTooLarge
    when no admissible eps lets C fit.
    """
    vals = u.values if isinstance(u, ValueField) else np.asarray(u, dtype=float)
    core = np.asarray(core_box, dtype=float).reshape(grid.dimension, 2)
    pad = margin_cells * grid.h

    def c_box_for(e):
        bad = h_max_small_ball(model, grid.coords, e) >= level - 1e-12
        lo = core[:, 0].copy()
        hi = core[:, 1].copy()
        if bad.any():
            pts = grid.coords[bad]
            lo = np.minimum(lo, pts.min(axis=0))
            hi = np.maximum(hi, pts.max(axis=0))
        C = np.stack([lo - pad, hi + pad], axis=1)
        fits = not (np.any(C[:, 0] <= grid.box[:, 0] + grid.h - 1e-12)
                    or np.any(C[:, 1] >= grid.box[:, 1] - grid.h + 1e-12))
        return C, fits

    if eps is None:
        for e in np.linspace(1.0, 0.01, 100):
            C, fits = c_box_for(e)
            if fits:
                eps = float(e)
                break
        else:
            raise KTooLarge("no slope keeps the capped set inside the box")
    else:
        C, fits = c_box_for(eps)
        if not fits:
            raise KTooLarge("no room between the core set and the box boundary")
    c_mask = grid.box_mask(C)
    phi = -(eps / 2.0) * np.sqrt(np.sum(grid.coords ** 2, axis=1))
    b = float(np.max(vals[c_mask]) - np.min(phi[c_mask])) + eps * grid.h
    v = np.minimum(phi + b, vals)
    w0 = np.maximum(v, float(np.min(vals[c_mask])))
    return ValueField(grid=grid, values=w0, name="compactified")
