"""Independent brute-force oracles used to pin expected values.

These deliberately avoid the production code paths: distances come from
exhaustive path enumeration, LP optima from basis enumeration or simple
cycle means, so agreement is evidence rather than tautology.
"""

import itertools

import numpy as np

BIG = 1e30


def exact_successors(costs, transition):
    """(node, cost) successor lists; requires every foot to be an exact node
    hit (interpolation weight 1)."""
    n, M = costs.shape
    zero_m = transition.velocity_set.zero_index()
    succ = [[] for _ in range(n)]
    for i in range(n):
        for m in range(M):
            if m == zero_m or costs[i, m] >= BIG / 2:
                continue
            w = transition.w[i, m]
            k = int(np.argmax(w))
            assert abs(w[k] - 1.0) < 1e-12, "oracle needs exact node hits"
            succ[i].append((int(transition.idx[i, m, k]), float(costs[i, m])))
    return succ


def enumerate_paths_min_cost(costs, transition, source, max_depth=20):
    """Least path cost source -> every node over all edge sequences of
    length <= max_depth, by exhaustive depth-first enumeration."""
    succ = exact_successors(costs, transition)
    n = costs.shape[0]
    best = np.full(n, np.inf)
    best[source] = 0.0

    def walk(node, cost, depth):
        if cost < best[node]:
            best[node] = cost
        if depth == 0:
            return
        for j, c in succ[node]:
            walk(j, cost + c, depth - 1)

    walk(source, 0.0, max_depth)
    return best


def min_cycle_mean(costs, transition):
    """Minimum mean cost over self-loops and simple two-cycles (the extreme
    closed flows of an exact-hit line graph)."""
    n, M = costs.shape
    zero_m = transition.velocity_set.zero_index()
    best = np.inf
    for i in range(n):
        if costs[i, zero_m] < BIG / 2:
            best = min(best, costs[i, zero_m])
    succ = exact_successors(costs, transition)
    for i in range(n):
        for j, c_ij in succ[i]:
            for k, c_ji in succ[j]:
                if k == i:
                    best = min(best, 0.5 * (c_ij + c_ji))
    return best


def brute_force_lp(c, A, b, tol=1e-9):
    """Optimal value of min c.x, Ax=b, x>=0 by enumerating basis subsets."""
    m, n = A.shape
    best = np.inf
    for cols in itertools.combinations(range(n), m):
        B = A[:, cols]
        try:
            x = np.linalg.solve(B, b)
        except np.linalg.LinAlgError:
            continue
        if np.min(x) < -tol:
            continue
        best = min(best, float(np.asarray(c)[list(cols)] @ x))
    return best


def make_asymmetric_sampled(grid, offset=0.3, p_span=3.0, p_count=121):
    """Tabulated H(x,p) = |p + offset| - x^2/2: convex, coercive, and with a
    genuinely asymmetric support function (negative edge costs appear)."""
    from weakkam.models import SampledTable, make_model
    pg = np.linspace(-p_span, p_span, p_count)
    f = 0.5 * grid.coords[:, 0] ** 2
    vals = np.abs(pg[None, :] + offset) - f[:, None]
    table = SampledTable(x_coords=grid.coords[:, 0].copy(), p_grid=pg, values=vals)
    return make_model("sampled", sampled=table)
