import numpy as np
import pytest

from growup.errors import (
    ConfigError,
    FiberSolveError,
    NonContractionError,
)
from growup.graph_transform import (
    ConeParameters,
    GraphFn,
    attraction_rate,
    check_cone_invariance,
    default_box,
    fiber_solve,
    iterate_to_limit,
    symmetric_box,
    transform,
)
from growup.operator_core import SplitSystem
from growup.presets import get_preset, saturated_random
from growup.semiflow import NonlinearityModel, zero_nonlinearity


def _linear_graph(box, shape):
    return GraphFn.from_function(
        box, shape, lambda p: (2.0 * p[:, :1] - p[:, 1:2])
    )


def test_constant_graph_evaluates_and_clamps():
    g = GraphFn.constant(symmetric_box([2.0]), (5,), [0.7])
    assert g.eval(np.array([0.3]))[0] == pytest.approx(0.7)
    assert g.eval(np.array([99.0]))[0] == pytest.approx(0.7)
    assert g.sup_norm() == pytest.approx(0.7)
    assert g.kappa_hat() == 0.0


def test_multilinear_interp_reproduces_linear_functions():
    box = symmetric_box([3.0, 2.0])
    g = _linear_graph(box, (7, 5))
    rng = np.random.default_rng(1)
    pts = rng.uniform([-3.0, -2.0], [3.0, 2.0], size=(50, 2))
    want = 2.0 * pts[:, :1] - pts[:, 1:2]
    assert np.allclose(g.eval(pts), want, atol=1e-12)
    # constant extrapolation: clamp to the box edge
    outside = np.array([5.0, 0.5])
    assert g.eval(outside)[0] == pytest.approx(2.0 * 3.0 - 0.5)


def test_kappa_hat_of_linear_graph_is_largest_slope():
    g = _linear_graph(symmetric_box([3.0, 2.0]), (13, 9))
    assert g.kappa_hat() == pytest.approx(2.0, rel=1e-12)


def test_graph_json_round_trip(tmp_path):
    box = symmetric_box([1.0, 2.0])
    vals = np.arange(3 * 4 * 2, dtype=float).reshape(3, 4, 2)
    vals = vals + 1j * vals[::-1]
    g = GraphFn(box, vals)
    path = tmp_path / "graph.json"
    g.save_json(path)
    back = GraphFn.load_json(path)
    assert np.allclose(back.values, g.values)
    assert np.allclose(back.box, g.box)
    assert back.to_header()["dims"] == [3, 4, 2]


def test_graph_rejects_bad_shapes():
    with pytest.raises(ConfigError):
        GraphFn(np.array([[1.0, -1.0]]), np.zeros((4, 1)))
    with pytest.raises(ConfigError):
        GraphFn(symmetric_box([1.0]), np.zeros((4,)))
    with pytest.raises(ConfigError):
        GraphFn(symmetric_box([1.0]), np.zeros((1, 2)))


def test_fiber_solve_constant_graph_scalar():
    # q rides the pure decay while the preimage is the linear pullback
    sys, f = get_preset("ex1")
    g = GraphFn.constant(symmetric_box([8.0]), (9,), [0.7])
    p1, q1 = fiber_solve(sys, f, g, 1.0, np.array([2.0]))
    assert p1[0] == pytest.approx(2.0 * np.exp(-1.0), rel=1e-9)
    assert q1[0] == pytest.approx(0.7 * np.exp(-1.0), rel=1e-9)


def test_fiber_solve_decoupled_diagonal():
    sys = SplitSystem(2, [[2.0, 0.0], [0.0, 1.0]], [-1.0])
    f = zero_nonlinearity(sys)
    g = _linear_graph(symmetric_box([6.0, 6.0]), (13, 13))
    t = 0.8
    target = np.array([1.2, -0.5])
    p1, q1 = fiber_solve(sys, f, g, t, target)
    want_p1 = target * np.exp([-2.0 * t, -1.0 * t])
    assert np.allclose(p1, want_p1, rtol=1e-9)
    assert np.allclose(q1, np.exp(-t) * g.eval(want_p1), rtol=1e-8)


def test_fiber_solve_rejects_far_targets():
    sys, f = get_preset("ex1")
    g = GraphFn.constant(symmetric_box([8.0]), (9,), [0.0])
    with pytest.raises(ConfigError):
        fiber_solve(sys, f, g, 1.0, np.array([30.0]))


def test_fiber_solve_reports_best_residual_on_failure():
    # a one-iteration budget cannot polish the nonlinear correction away
    sys, f = saturated_random(7, l_f=0.3)
    g = GraphFn.constant(symmetric_box([8.0]), (9,), [0.0])
    with pytest.raises(FiberSolveError, match="residual"):
        fiber_solve(sys, f, g, 1.0, np.array([2.0]), tol_scale=1e-12,
                    max_iter=1)


def test_transform_of_constant_graph_is_decayed_constant():
    sys, f = get_preset("ex1")
    g = GraphFn.constant(symmetric_box([8.0]), (9,), [1.0])
    out = transform(sys, f, g, 1.0)
    assert out.shape == g.shape
    assert np.allclose(out.box, g.box)
    assert np.allclose(out.values, np.exp(-1.0), atol=1e-12)


def test_transform_zero_graph_zero_field_is_exact():
    sys = SplitSystem(1, [[1.0]], [-2.0])
    g = GraphFn.constant(symmetric_box([5.0]), (11,), [0.0])
    out = transform(sys, zero_nonlinearity(sys), g, 1.0)
    assert np.max(np.abs(out.values)) <= 1e-14


def test_transform_matches_closed_form_for_decoupled_field():
    sys = SplitSystem(2, [[2.0, 0.0], [0.0, 1.0]], [-1.0])
    f = zero_nonlinearity(sys)
    g = _linear_graph(symmetric_box([6.0, 6.0]), (13, 13))
    t = 0.7
    out = transform(sys, f, g, t)
    nodes = g.node_matrix()
    pre = nodes * np.exp([-2.0 * t, -1.0 * t])
    want = np.exp(-t) * g.eval(pre)
    assert np.allclose(out.values.reshape(-1, 1), want, atol=1e-9)


def test_transform_failure_names_the_node():
    sys, f = saturated_random(7, l_f=0.3)
    g = GraphFn.constant(symmetric_box([8.0]), (9,), [0.0])
    with pytest.raises(FiberSolveError, match="node"):
        transform(sys, f, g, 1.0, tol_scale=1e-12, max_iter=1)


def test_iterate_to_limit_pure_decay():
    sys, f = get_preset("ex1")
    g0 = GraphFn.constant(symmetric_box([8.0]), (9,), [1.0])
    limit, info = iterate_to_limit(sys, f, g0, t_step=1.0, tol=1e-8)
    assert limit.sup_norm() <= 1e-7
    assert info["delta"] == pytest.approx(1.0)
    assert info["delta_hat"] == pytest.approx(1.0, rel=0.05)
    assert info["delta_hat"] >= 0.9 * info["delta"]
    assert max(info["kappa_history"]) <= 1.0 + 1e-9


def test_iterate_requires_unit_m():
    sys = SplitSystem(2, [[1.0, 5.0], [0.0, 1.0]], [-1.0])
    g0 = GraphFn.constant(symmetric_box([4.0, 4.0]), (5, 5), [0.0])
    with pytest.raises(ConfigError, match="M = 1"):
        iterate_to_limit(sys, zero_nonlinearity(sys), g0)


def test_iterate_requires_positive_attraction_rate():
    sys, f = saturated_random(7, l_f=0.6)
    g0 = GraphFn.constant(symmetric_box([8.0]), (17,), [0.0])
    with pytest.raises(ConfigError, match="not\\s+positive"):
        iterate_to_limit(sys, f, g0, cone=ConeParameters(1.0))


def test_iterate_raises_when_budget_exhausted():
    sys, f = saturated_random(7, l_f=0.3)
    g0 = GraphFn.constant(symmetric_box([8.0]), (17,), [2.0])
    with pytest.raises(NonContractionError):
        iterate_to_limit(sys, f, g0, tol=1e-10, max_iter=3)


@pytest.fixture(scope="module")
def saturated_limit():
    # tol must dominate the multilinear interpolation bias of the grid,
    # otherwise the fixed point of the discrete transform cannot sit
    # still under a change of step size
    sys, f = saturated_random(7, l_f=0.3)
    g0 = GraphFn.constant(symmetric_box([8.0]), (33,), [0.0])
    limit, info = iterate_to_limit(sys, f, g0, t_step=1.0, tol=1e-4)
    return sys, f, limit, info


def test_iterate_contracts_at_predicted_ladder_rate(saturated_limit):
    sys, f, limit, info = saturated_limit
    assert info["delta_hat"] is not None
    assert info["delta_hat"] >= 0.9 * info["delta"]
    assert max(info["kappa_history"]) <= 1.0 + 1e-9


def test_limit_graph_is_fixed_for_time_ladder(saturated_limit):
    sys, f, limit, _ = saturated_limit
    for t in (0.5, 1.0, 2.0):
        moved = transform(sys, f, limit, t)
        assert moved.diff_sup(limit) <= 2e-4, t


def test_box_default_covers_certified_window():
    box = default_box(2.0, 3)
    assert box.shape == (3, 2)
    assert np.all(box[:, 1] == 8.0)


def test_cone_preserved_for_decoupled_linear():
    sys, f = get_preset("ex1")
    out = check_cone_invariance(sys, f, kappa=1.0, n_pairs=1000, seed=3)
    assert out["violations"] == 0
    assert out["pairs"] == 1000


def _rotation_coupling(l_f):
    def fn(t, p, q):
        return -l_f * np.asarray(q).real, l_f * np.asarray(p)

    return NonlinearityModel(fn, c_f=None, l_f=l_f, name="rotation_coupling")


def test_cone_certified_below_bound():
    sys = SplitSystem(1, [[1.0]], [-1.0])
    con_bound = ConeParameters(1.0).bound
    from growup.absorbing import dichotomy_for

    bound = con_bound(dichotomy_for(sys))
    assert bound == pytest.approx(0.5)
    f = _rotation_coupling(0.9 * bound)
    out = check_cone_invariance(sys, f, kappa=1.0, n_pairs=10 ** 4, seed=5)
    assert out["violations"] == 0


def test_cone_falsified_well_above_bound():
    # recorded falsification: rotation coupling at 3x the certified bound
    sys = SplitSystem(1, [[1.0]], [-1.0])
    f = _rotation_coupling(1.5)
    out = check_cone_invariance(sys, f, kappa=1.0, n_pairs=2000, seed=5)
    assert out["violations"] > 0
    assert out["witnesses"][0]["excess"] > 0


def test_attraction_rate_linear_matches_decay():
    sys = SplitSystem(1, [[1.0]], [-2.0])
    f = zero_nonlinearity(sys)
    g = GraphFn.constant(symmetric_box([50.0]), (5,), [0.0])
    rate = attraction_rate(sys, f, g, (np.array([0.3]), np.array([2.0])),
                           horizon=6.0)
    assert rate == pytest.approx(2.0, rel=0.05)


def test_attraction_rate_ex1():
    sys, f = get_preset("ex1")
    g = GraphFn.constant(symmetric_box([50.0]), (5,), [0.0])
    samples = (np.array([[3.0], [2.5]]), np.array([[0.7], [0.9]]))
    rate = attraction_rate(sys, f, g, samples, horizon=6.0)
    assert rate == pytest.approx(1.0, rel=0.05)


def test_attraction_rate_band_at_half_bound():
    # soft vertical coupling at half the kappa = 3 admissibility bound
    sys = SplitSystem(1, [[1.0]], [-1.0])
    cone = ConeParameters(3.0)
    from growup.absorbing import dichotomy_for

    con = dichotomy_for(sys)
    l_f = 0.5 * cone.bound(con)
    scale = 20.0

    def fn(t, p, q):
        return np.zeros(np.shape(p)), l_f * scale * np.tanh(
            np.asarray(q).real / scale
        )

    f = NonlinearityModel(fn, c_f=l_f * scale, l_f=l_f, name="soft_vertical")
    g0 = GraphFn.constant(symmetric_box([6.0]), (25,), [0.0])
    limit, _ = iterate_to_limit(sys, f, g0, t_step=1.0, tol=1e-7, cone=cone)
    predicted = cone.attraction_delta(l_f, con)
    samples = (np.array([[0.5], [0.2]]), np.array([[0.8], [0.6]]))
    rate = attraction_rate(sys, f, limit, samples, horizon=8.0)
    assert rate >= 0.85 * predicted
    assert rate <= 1.2 * predicted


def test_attraction_rate_floor_guard():
    sys, f = get_preset("ex1")
    g = GraphFn.constant(symmetric_box([50.0]), (5,), [0.0])
    with pytest.raises(ConfigError):
        attraction_rate(sys, f, g, (np.array([0.3]), np.array([0.0])),
                        horizon=6.0)
