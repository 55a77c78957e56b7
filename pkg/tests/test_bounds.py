import logging
import math

import numpy as np
import pytest

from growup.bounds import (
    SHARP_RATIO_M1,
    attractor_cloud_from_ring,
    cutoff,
    decay_exponent,
    gt_bound,
    gt_bound_variational,
    lp_bound,
    lp_bound_sharp_m1,
    lp_bound_simplified,
    lp_feasible,
    lp_first_cap,
    measure_thickness,
    remark_table,
    threshold_table,
)
from growup.errors import ConfigError
from growup.presets import power_envelope, saturated_random


GT_TABLE = {
    (0.1, 0.1): 0.050,
    (1.0, 0.1): 0.090,
    (10.0, 0.1): 0.099,
    (0.1, 1.0): 0.275,
    (1.0, 1.0): 0.500,
    (10.0, 1.0): 0.909,
    (0.1, 10.0): 2.525,
    (1.0, 10.0): 2.750,
    (10.0, 10.0): 5.000,
}


def test_gt_bound_reference_grid():
    for (g1, g2), want in GT_TABLE.items():
        assert gt_bound(g1, g2) == pytest.approx(want, abs=1e-3)


def test_gt_bound_rejects_nonpositive():
    with pytest.raises(ConfigError):
        gt_bound(0.0, 1.0)
    with pytest.raises(ConfigError):
        gt_bound(1.0, -2.0)


def test_gt_bound_equals_variational_form():
    gs = np.logspace(-1, 1, 20)
    for g1 in gs:
        for g2 in gs:
            a = gt_bound(g1, g2)
            b = gt_bound_variational(g1, g2)
            assert abs(a - b) <= 1e-6 * max(1.0, a)


def _lf_sup_at(k, m, g1, g2, variant):
    hi = lp_first_cap(k, m, g1, g2)
    if lp_feasible(hi * (1 - 1e-14), k, m, g1, g2, variant):
        return hi
    lo = 0.0
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        if lp_feasible(mid, k, m, g1, g2, variant):
            lo = mid
        else:
            hi = mid
    return lo


def _bruteforce_lp(g1, g2, m, variant):
    # plain grid scans only, so the comparison does not share the
    # production optimizer's refinement strategy
    coarse = np.logspace(-3, 3, 400)
    vals = [_lf_sup_at(k, m, g1, g2, variant) for k in coarse]
    i = int(np.argmax(vals))
    fine = np.linspace(coarse[max(i - 2, 0)], coarse[min(i + 2, 399)], 2000)
    best, best_k = 0.0, None
    for k in fine:
        v = _lf_sup_at(k, m, g1, g2, variant)
        if v > best:
            best, best_k = v, k
    return best, best_k


@pytest.mark.parametrize("g1,g2,m", [(1.0, 1.0, 1.0), (0.1, 1.0, 1.0),
                                     (10.0, 0.1, 1.0), (1.0, 1.0, 2.0)])
def test_lp_bound_matches_bruteforce(g1, g2, m):
    for variant in ("full", "first_second"):
        rep = lp_bound(g1, g2, m, variant)
        want, _ = _bruteforce_lp(g1, g2, m, variant)
        assert rep.lp_value == pytest.approx(want, rel=1e-3)
        assert rep.feasible


def test_lp_bound_symmetric_closed_form():
    # at equal rates and M = 1 the optimum sits at kappa = 1/2 with
    # threshold 2/9 of the rate sum
    rep = lp_bound(1.0, 1.0, 1.0, "full")
    assert rep.lp_value == pytest.approx(2.0 / 9.0 * 2.0, rel=1e-5)
    assert rep.lp_kappa_star == pytest.approx(0.5, abs=5e-3)
    rep10 = lp_bound(10.0, 10.0, 1.0, "full")
    assert rep10.lp_value == pytest.approx(2.0 / 9.0 * 20.0, rel=1e-5)


def test_lp_bound_scale_covariance():
    base = lp_bound(2.0, 0.5, 1.0).lp_value
    for c in (0.1, 3.0):
        scaled = lp_bound(2.0 * c, 0.5 * c, 1.0).lp_value
        assert scaled == pytest.approx(c * base, rel=1e-5)


def test_lp_below_gt_at_unit_m():
    for g in (0.1, 1.0, 10.0):
        rep = lp_bound(g, g, 1.0, "full")
        assert rep.lp_value < rep.gt_value


def test_lp_bound_input_validation():
    with pytest.raises(ConfigError):
        lp_bound(1.0, 1.0, 0.5)
    with pytest.raises(ConfigError):
        lp_bound(1.0, 1.0, 1.0, variant="other")


def test_simplified_ratio_table():
    r1 = lp_bound_simplified(1.0)
    assert r1["ours"] == pytest.approx(4.829, abs=1e-3)
    assert r1["comparator"] == pytest.approx(5.829, abs=1e-3)
    r2 = lp_bound_simplified(2.0)
    assert r2["ours"] == pytest.approx(14.247, abs=1e-3)
    assert r2["comparator"] == pytest.approx(16.0, abs=1e-9)
    r4 = lp_bound_simplified(4.0)
    assert r4["ours"] == pytest.approx(45.613, abs=1e-3)
    assert r4["comparator"] == pytest.approx(56.0, abs=1e-9)


def test_simplified_ratio_large_m_asymptote():
    r = lp_bound_simplified(100.0)
    assert r["ours"] == pytest.approx(2.0 * 100.0 ** 2, rel=0.05)


def test_sharp_m1_ratio():
    v = lp_bound_sharp_m1()
    assert v == pytest.approx(4.5, abs=1e-2)
    assert v < lp_bound_simplified(1.0)["ours"]
    assert v > 4.0
    assert SHARP_RATIO_M1 == 2.0


def test_cutoff_exterior_is_bit_exact():
    sys, f = saturated_random(11, l_f=0.5)
    g = cutoff(f, 4.0)
    p = np.array([[4.0], [-7.5], [12.0]])
    q = np.array([[0.3], [-1.0], [2.0]])
    fp, fq = f(0.0, p, q)
    gp, gq = g(0.0, p, q)
    assert np.array_equal(fp, gp)
    assert np.array_equal(fq, gq)


def test_cutoff_vanishes_on_kernel():
    sys, f = saturated_random(11, l_f=0.5)
    g = cutoff(f, 4.0)
    gp, gq = g(0.0, np.zeros((3, 1)), np.array([[0.5], [1.0], [-2.0]]))
    assert np.all(gp == 0.0)
    assert np.all(gq == 0.0)


def test_cutoff_keeps_bound_and_lipschitz_factor():
    sys, f = saturated_random(11, l_f=0.5, c_f=1.0)
    r_cut = 2.0 * f.c_f / f.l_f
    g = cutoff(f, r_cut)
    assert g.c_f == f.c_f
    rng = np.random.default_rng(4)
    u = rng.uniform(-8.0, 8.0, size=(10 ** 4, 2))
    v = u + rng.uniform(-1.0, 1.0, size=(10 ** 4, 2))
    fu = np.concatenate(g(0.0, u[:, :1], u[:, 1:]), axis=-1)
    fv = np.concatenate(g(0.0, v[:, :1], v[:, 1:]), axis=-1)
    num = np.linalg.norm(fu - fv, axis=-1)
    den = np.linalg.norm(u - v, axis=-1)
    ratio = np.max(num[den > 0] / den[den > 0])
    assert ratio <= 5.0 * f.l_f + 1e-9


def test_cutoff_rejects_bad_radius():
    sys, f = saturated_random(11)
    with pytest.raises(ConfigError):
        cutoff(f, 0.0)


def test_decay_exponent_power_branches():
    fast = decay_exponent(2.0, 1.0, 3.0, {"kind": "power", "alpha": 1.0})
    assert fast == {"kind": "power", "beta": 0.5, "equality": False}
    slow = decay_exponent(2.0, 1.0, 0.5, {"kind": "power", "alpha": 1.0})
    assert slow == {"kind": "power", "beta": 0.25, "equality": False}
    edge = decay_exponent(2.0, 1.0, 2.0, {"kind": "power", "alpha": 2.0})
    assert edge["beta"] == pytest.approx(1.0)
    assert edge["equality"]


def test_decay_exponent_slow_envelope():
    out = decay_exponent(2.0, 1.0, 1.0,
                         {"kind": "slow", "h": lambda s: 1.0 / np.log(s)})
    rm = out["rate_map"]
    assert rm(1e3) > rm(1e6) > 0.0
    with pytest.raises(ConfigError):
        decay_exponent(2.0, 1.0, 1.0, {"kind": "weird"})


def test_measure_thickness_synthetic_power_law():
    shells = np.geomspace(4.0, 400.0, 9)
    th = np.array([0.0, 0.35, 0.7])
    p, q = [], []
    for lo, hi in zip(shells[:-1], shells[1:]):
        c = np.sqrt(lo * hi)
        for r in (0.95 * c, c, 1.05 * c):
            for a in th:
                d = np.array([np.cos(a), np.sin(a)])
                for s in (-0.5, 0.5):
                    p.append(r * d)
                    q.append([s * r ** -0.5])
    res = measure_thickness(np.array(p), np.array(q), shells, dir_eps=0.02)
    assert res["slope"] == pytest.approx(-0.5, abs=0.02)
    assert not res["skipped"]


def test_measure_thickness_skips_sparse_shells(caplog):
    p = np.array([[1.0, 0.0], [1.05, 0.0], [10.0, 0.0]])
    q = np.array([[0.2], [-0.2], [0.0]])
    with caplog.at_level(logging.WARNING, logger="growup"):
        res = measure_thickness(p, q, [0.5, 2.0, 20.0])
    assert len(res["diameters"]) == 1
    assert res["skipped"] == [(2.0, 20.0)]
    assert "skipped" in caplog.text
    assert res["slope"] is None


def test_thickness_vanishes_for_small_lipschitz():
    sys, f = saturated_random(13, l_f=0.1)
    p_cloud, q_cloud = attractor_cloud_from_ring(
        sys, f, radius=3.0, horizon=9.0, burn=7.0
    )
    r_max = float(np.max(np.linalg.norm(p_cloud, axis=-1)))
    shells = np.geomspace(r_max / 8.0, r_max * 1.01, 4)
    res = measure_thickness(p_cloud, q_cloud, shells, dir_eps=0.1)
    assert res["diameters"]
    assert max(res["diameters"]) <= 0.05


def test_thickness_slope_flat_rate_regime():
    # vertical forcing with a power tail; the contraction rate loses to
    # the tail here, so shells thin out at the flat rate.  The shell
    # window starts past the radius the fastest direction reaches at
    # burn-in, so every shell sees fully aged arrivals.
    sys, f = power_envelope(2.0, 1.0, 0.5, 1.0)
    p_cloud, q_cloud = attractor_cloud_from_ring(
        sys, f, radius=2.0, n_dirs=96, horizon=6.0, burn=2.5
    )
    res = measure_thickness(p_cloud, q_cloud,
                            np.geomspace(400.0, 2.5e5, 8), dir_eps=0.08)
    want = -decay_exponent(2.0, 1.0, 0.5,
                           {"kind": "power", "alpha": 1.0})["beta"]
    assert res["slope"] == pytest.approx(want, rel=0.15)


def test_threshold_table_shape():
    rows = threshold_table(gammas=(1.0,), m=1.0)
    assert len(rows) == 1
    assert rows[0]["lf_gt"] == pytest.approx(0.5)
    assert 0.0 < rows[0]["lf_lp"] < rows[0]["lf_gt"]


def test_remark_table_rows():
    rows = remark_table()
    assert [r["m"] for r in rows] == [1.0, 2.0, 4.0]
    assert rows[0]["gt"] == 4.0
    assert rows[0]["sharp"] == 2.0
    assert math.isnan(rows[1]["gt"])
