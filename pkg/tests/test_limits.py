import numpy as np
import pytest

from weakkam.critical import build_critical_data, weak_kam_solution
from weakkam.errors import NoMeasures
from weakkam.grids import ValueField, build_grid, build_transition, build_velocity_set
from weakkam.limits import (
    enric1_values,
    mather_set,
    maximal_trace,
    selected_solution_deflim,
    selected_solution_enric1,
    uniqueness_test,
    vanishing_discount_study,
)
from weakkam.measures import build_ergodic_lp, build_mather_polytope, lp_solve
from weakkam.models import make_model, superlinearize


@pytest.fixture(scope="module")
def quad_setup(quad, grid_c, vs7, tr_c):
    crit = build_critical_data(quad, grid_c, vs7, tol=1e-3, transition=tr_c)
    ergodic = lp_solve(build_ergodic_lp(quad, grid_c, vs7, transition=tr_c))
    poly = build_mather_polytope(quad, grid_c, vs7, transition=tr_c,
                                 ergodic_result=ergodic)
    return crit, ergodic, poly


# ---------------------------------------------------------------------------
# the two estimators
# ---------------------------------------------------------------------------

def test_enric1_barrier_values(quad_setup, grid_c):
    crit, ergodic, poly = quad_setup
    v1, _ = selected_solution_enric1(crit, poly, grid_c.node_near([1.0]))
    assert v1 == pytest.approx(0.5, abs=3 * grid_c.h)
    vz, _ = selected_solution_enric1(crit, poly, int(crit.aubry_nodes[0]))
    assert abs(vz) <= 2 * crit.eps_aubry + 1e-6


def test_enric1_eikonal(grid_c, vs7):
    eik = superlinearize(make_model("eikonal", "abs"), grid_c)
    tr = build_transition(grid_c, vs7)
    crit = build_critical_data(eik, grid_c, vs7, tol=1e-3, transition=tr)
    ergodic = lp_solve(build_ergodic_lp(eik, grid_c, vs7, transition=tr))
    poly = build_mather_polytope(eik, grid_c, vs7, transition=tr,
                                 ergodic_result=ergodic)
    v2, _ = selected_solution_enric1(crit, poly, grid_c.node_near([2.0]))
    assert v2 == pytest.approx(2.0, abs=0.12)


def test_deflim_field_and_trace(quad_setup, grid_c):
    crit, ergodic, poly = quad_setup
    w = selected_solution_deflim(crit, [ergodic.measure])
    xg = grid_c.coords[:, 0]
    mask = np.abs(xg) <= 2.0
    assert np.max(np.abs(w.values - 0.5 * xg ** 2)[mask]) <= 2 * grid_c.h
    t = maximal_trace(crit, [ergodic.measure])
    assert t[grid_c.node_near([0.0])] == pytest.approx(0.0, abs=1e-12)


def test_deflim_requires_measures(quad_setup):
    crit, _, _ = quad_setup
    with pytest.raises(NoMeasures):
        selected_solution_deflim(crit, [])


def test_estimators_agree(quad_setup, grid_c):
    crit, ergodic, poly = quad_setup
    w = selected_solution_deflim(crit, [ergodic.measure])
    nodes = [grid_c.node_near([x]) for x in (-1.5, -0.5, 0.0, 0.5, 1.5)]
    e1 = enric1_values(crit, poly, nodes)
    assert float(np.max(np.abs(e1 - w.values[nodes]))) <= 4 * grid_c.h


def test_deflim_constraint_validates_post_hoc(quad_setup):
    crit, ergodic, _ = quad_setup
    w = selected_solution_deflim(crit, [ergodic.measure])
    pairing = sum(mass * w.values[i] for (i, m), mass in ergodic.measure.entries.items())
    assert pairing <= 4 * crit.grid.h


def test_w_reconstructs_through_min_formula(quad_setup):
    crit, ergodic, _ = quad_setup
    w = selected_solution_deflim(crit, [ergodic.measure])
    trace = {int(z): float(w.values[int(z)]) for z in crit.aubry_nodes}
    rec = weak_kam_solution(crit, trace)
    assert float(np.max(np.abs(rec.values - w.values))) <= 1e-9


# ---------------------------------------------------------------------------
# Mather set
# ---------------------------------------------------------------------------

def test_mather_set_quadratic_single_cluster(quad_setup, grid_c, quad_crit):
    crit, ergodic, poly = quad_setup
    aubry_pts = grid_c.coords[quad_crit.aubry_nodes][:, 0]
    for seed in (0, 1, 7):
        nodes = mather_set(poly, 4, seed, grid_c, base_measure=ergodic.measure)
        pts = grid_c.coords[nodes][:, 0]
        assert grid_c.node_near([0.0]) in set(int(z) for z in nodes)
        # support within the 2h Aubry dilation, plus the one-cell reporting
        # dilation of the set itself
        for p in pts:
            assert np.min(np.abs(aubry_pts - p)) <= 3 * grid_c.h + 1e-12


def test_mather_set_double_well():
    g = build_grid([[-2.0, 2.0]], 0.05)
    vs = build_velocity_set(1.0, 3)
    model = make_model("quadratic", "double_well")
    tr = build_transition(g, vs)
    ergodic = lp_solve(build_ergodic_lp(model, g, vs, transition=tr))
    poly = build_mather_polytope(model, g, vs, transition=tr, ergodic_result=ergodic)
    nodes = mather_set(poly, 8, 0, g, base_measure=ergodic.measure)
    pts = g.coords[nodes][:, 0]
    assert np.min(np.abs(pts - 1.0)) <= g.h + 1e-12
    assert np.min(np.abs(pts + 1.0)) <= g.h + 1e-12


def test_mather_set_zero_objectives(quad_setup, grid_c):
    crit, ergodic, poly = quad_setup
    nodes = mather_set(poly, 0, 0, grid_c, base_measure=ergodic.measure)
    support = {i for (i, m) in ergodic.measure.entries}
    assert support <= set(int(z) for z in nodes)
    assert len(nodes) <= 3 * len(support)


# ---------------------------------------------------------------------------
# uniqueness test
# ---------------------------------------------------------------------------

def test_uniqueness_equal_fields_pass(quad_setup, grid_c):
    crit, ergodic, _ = quad_setup
    w = selected_solution_deflim(crit, [ergodic.measure])
    mnodes = crit.aubry_nodes
    verdict = uniqueness_test(crit, mnodes, w, w, tol=1e-6)
    assert verdict.status == "PASS"
    assert verdict.worst_gap <= 1e-12


def test_uniqueness_vacuous_hypothesis(quad_setup):
    crit, ergodic, _ = quad_setup
    w = selected_solution_deflim(crit, [ergodic.measure])
    v = ValueField(crit.grid, w.values + 1.0)
    verdict = uniqueness_test(crit, crit.aubry_nodes, v, w, tol=1e-6)
    assert verdict.status == "NotApplicable"


def test_uniqueness_ordered_traces(quad_setup):
    crit, ergodic, _ = quad_setup
    w = weak_kam_solution(crit, 0.0)
    v = weak_kam_solution(crit, -0.2)
    verdict = uniqueness_test(crit, crit.aubry_nodes, v, w, tol=1e-6)
    assert verdict.status == "PASS"
    assert verdict.worst_gap <= -0.2 + 1e-9


def test_uniqueness_rejects_non_weak_kam_field(quad_setup):
    crit, ergodic, _ = quad_setup
    bad = ValueField(crit.grid, 2.0 * crit.grid.coords[:, 0] ** 2)
    w = weak_kam_solution(crit, 0.0)
    with pytest.raises(ValueError):
        uniqueness_test(crit, crit.aubry_nodes, bad, w, tol=1e-6)


# ---------------------------------------------------------------------------
# the study driver
# ---------------------------------------------------------------------------

def test_study_single_lambda_row(quad, grid_c, vs7, tr_c):
    rep = vanishing_discount_study(quad, grid_c, vs7, [0.5], probes=[(0.0,)],
                                   solver_tol=1e-6, n_objectives=0,
                                   transition=tr_c)
    assert len(rep.lambda_schedule) == 1
    assert len(rep.sup_gaps) == 1 and np.isfinite(rep.sup_gaps[0])
    assert not rep.failures


def test_study_requires_decreasing_schedule(quad, grid_c, vs7, tr_c):
    with pytest.raises(ValueError):
        vanishing_discount_study(quad, grid_c, vs7, [0.25, 0.5], transition=tr_c)


def test_study_aggregates_failures(quad, grid_c, vs7, tr_c):
    rep = vanishing_discount_study(quad, grid_c, vs7, [0.5, 0.25], probes=[(0.0,)],
                                   solver_tol=1e-12, max_iter=3, n_objectives=0,
                                   transition=tr_c)
    assert len(rep.failures) == 2
    assert all(np.isnan(g) for g in rep.sup_gaps)


def test_study_transport_decreases(grid_c, vs7, tr_c):
    eik = superlinearize(make_model("eikonal", "abs"), grid_c)
    rep = vanishing_discount_study(eik, grid_c, vs7, [0.5, 0.25, 0.125],
                                   probes=[(1.0,)], solver_tol=1e-7,
                                   n_objectives=0, transition=tr_c)
    w1 = [r.transport_to_ergodic for r in rep.rows if r.probe is not None]
    assert all(b <= a + 2 * grid_c.h for a, b in zip(w1, w1[1:]))
    assert all(b < a for a, b in zip(rep.sup_gaps, rep.sup_gaps[1:]))


def test_two_dimensional_smoke():
    # dimension 2 is accepted at coarse resolution: the pipeline must run and
    # keep its exact identities (critical cross-check, duality, closedness)
    from weakkam.discounted import solve_discounted
    from weakkam.measures import build_discounted_lp, closedness_residual
    g = build_grid([[-2.0, 2.0], [-2.0, 2.0]], 0.25)
    vs = build_velocity_set(1.5, 5, dimension=2)
    tr = build_transition(g, vs)
    model = make_model("quadratic", "half_square", dimension=2)
    crit = build_critical_data(model, g, vs, tol=1e-3, transition=tr)
    assert abs(crit.c) <= 1e-3
    assert g.node_near([0.0, 0.0]) in set(int(z) for z in crit.aubry_nodes)
    ergodic = lp_solve(build_ergodic_lp(model, g, vs, transition=tr))
    assert abs(ergodic.objective) <= 1e-9
    assert closedness_residual(ergodic.measure, tr) <= 1e-8
    sol = solve_discounted(model, g, vs, 0.5, tol=1e-6, transition=tr)
    lp = lp_solve(build_discounted_lp(model, g, vs, 0.5, [1.0, 0.0], transition=tr))
    lam_u = 0.5 * float(sol.field.values[g.node_near([1.0, 0.0])])
    assert abs(lp.objective - lam_u) <= 1e-4


def test_w_is_subsolution_at_critical_level(quad_setup, grid_c, quad, vs7, tr_c):
    from weakkam.critical import is_subsolution
    crit, ergodic, _ = quad_setup
    w = selected_solution_deflim(crit, [ergodic.measure])
    lip = 4.0 * 1.5
    ok, worst = is_subsolution(w, quad, grid_c, vs7, crit.level,
                               slack=2 * grid_c.h * lip, transition=tr_c)
    assert ok, worst
