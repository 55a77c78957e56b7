"""Pullback sections, bounded cores, and the two omega universes."""

import logging

import numpy as np
import pytest

from growup.errors import ConfigError, InconclusiveError
from growup.graph_transform import GraphFn, iterate_to_limit, symmetric_box
from growup.operator_core import SplitSystem
from growup.presets import saturated_random
from growup.pullback import (NonAutonomousSetFamily, ProcessModel,
                             bounded_core_section, modulated_process,
                             pullback_omega, pullback_section)
from growup.semiflow import integrate_process


SYS = SplitSystem(1, [[1.0]], [-1.0])


def sin_forced():
    # p' = p, q' = -q + sin t
    def fn(t, p, q):
        return np.zeros_like(p), np.sin(t) * np.ones_like(q)

    return ProcessModel(fn, c_f=1.0, l_f=0.0, name="sin-forced")


def zero_process():
    def fn(t, p, q):
        return np.zeros_like(p), np.zeros_like(q)

    return ProcessModel(fn, c_f=0.0, l_f=0.0, name="zero")


def phi(t):
    # the unique bounded complete solution of q' = -q + sin t
    return 0.5 * (np.sin(t) - np.cos(t))


DENSE_LADDER = [-1.3, -3.3, -5.3, -7.3, -9.3, -11.3, -13.3]


class TestProcessMachinery:

    def test_two_parameter_law(self):
        proc = sin_forced()
        u0 = (np.array([[0.5]]), np.array([[0.3]]))
        direct = integrate_process(SYS, proc, u0, 0.0, 3.0, 0.01,
                                   store_every=10 ** 9).final()
        first = integrate_process(SYS, proc, u0, 0.0, 1.5, 0.01,
                                  store_every=10 ** 9).final()
        relay = integrate_process(SYS, proc, first, 1.5, 3.0, 0.01,
                                  store_every=10 ** 9).final()
        assert np.linalg.norm(direct[0] - relay[0]) <= 1e-8
        assert np.linalg.norm(direct[1] - relay[1]) <= 1e-8

    def test_modulated_process_scales_certificates(self):
        _, f = saturated_random(3)
        proc = modulated_process(f, np.cos, 1.0)
        assert proc.c_f == pytest.approx(f.c_f)
        assert proc.l_f == pytest.approx(f.l_f)
        p = np.array([[0.4]])
        q = np.array([[0.2]])
        fp, fq = proc(0.5, p, q)
        gp, gq = f(0.5, p, q)
        assert np.allclose(fp, np.cos(0.5) * gp)
        assert np.allclose(fq, np.cos(0.5) * gq)
        with pytest.raises(ConfigError, match="positive bound"):
            modulated_process(f, np.cos, 0.0)

    def test_family_validation(self):
        sampler = lambda s: (np.zeros((3, 1)), np.zeros((3, 1)))
        with pytest.raises(ConfigError, match="universe"):
            NonAutonomousSetFamily(sampler, 0.0, "other")
        with pytest.raises(ConfigError, match="bound"):
            NonAutonomousSetFamily(sampler, 0.0, "tilde")
        with pytest.raises(ConfigError, match="r_level"):
            NonAutonomousSetFamily(sampler, 0.0, "hat")
        fam = NonAutonomousSetFamily(sampler, 0.0, "tilde", bound=1.0)
        with pytest.raises(ConfigError, match="defined for"):
            fam.sample(0.5)


class TestPullbackSection:

    def test_zero_forcing_gives_zero_section(self):
        section = pullback_section(SYS, zero_process(), 0.3)
        assert np.max(np.abs(section.values)) <= 1e-12

    def test_sin_forced_fiber_is_flat_and_explicit(self):
        # [DERIVED] the only bounded complete solution of q' = -q + sin t
        # is (sin t - cos t)/2, so every fiber of the section carries it
        t = 0.7
        ladder = [t + s for s in DENSE_LADDER]
        section = pullback_section(SYS, sin_forced(), t, s_ladder=ladder,
                                   tol=1e-4)
        assert np.max(np.abs(section.values - phi(t))) <= 1e-3
        assert np.ptp(section.values) <= 1e-9

    def test_autonomous_consistency_with_graph_transform(self):
        _, f = saturated_random(7, l_f=0.3)
        box = symmetric_box([6.0])
        g0 = GraphFn.constant(box, (21,), np.zeros(1))
        gt_limit, _ = iterate_to_limit(SYS, f, g0, t_step=1.0, tol=1e-4)
        proc = ProcessModel(f.fn, c_f=f.c_f, l_f=f.l_f, name="frozen")
        ladder = [s for s in DENSE_LADDER]
        section = pullback_section(SYS, proc, 0.0, s_ladder=ladder,
                                   grid=g0, tol=1e-4)
        nodes = section.node_matrix()
        gap = np.abs(section.values.reshape(-1, 1) - gt_limit.eval(nodes))
        assert np.max(gap) <= 1e-3

    def test_ladder_validation(self):
        proc = zero_process()
        with pytest.raises(ConfigError, match="two ladder depths"):
            pullback_section(SYS, proc, 0.0, s_ladder=[-2.0])
        with pytest.raises(ConfigError, match="decrease"):
            pullback_section(SYS, proc, 0.0, s_ladder=[-2.0, -1.0])
        with pytest.raises(ConfigError, match="decrease"):
            pullback_section(SYS, proc, 0.0, s_ladder=[1.0, -1.0])

    def test_shallow_ladder_raises_inconclusive(self):
        with pytest.raises(InconclusiveError, match="Cauchy"):
            pullback_section(SYS, sin_forced(), 0.7,
                             s_ladder=[0.2, -0.3], tol=1e-9)


class TestBoundedCore:

    def test_zero_forcing_core_is_origin(self):
        proc = zero_process()
        box = symmetric_box([4.0])
        section = GraphFn.constant(box, (17,), np.zeros(1))
        core = bounded_core_section(SYS, proc, 0.0, 1.0, 8.0, section)
        assert not core.empty
        assert core.points_p.shape == (1, 1)
        assert abs(core.points_p[0, 0]) <= 1e-12
        assert abs(core.points_q[0, 0]) <= 1e-12

    def test_sin_forced_core_is_the_bounded_solution(self):
        t = 0.7
        ladder = [t + s for s in DENSE_LADDER]
        proc = sin_forced()
        section = pullback_section(SYS, proc, t, s_ladder=ladder, tol=1e-4)
        core = bounded_core_section(SYS, proc, t, 1.0, 8.0, section)
        assert core.points_p.shape == (1, 1)
        assert abs(core.points_p[0, 0]) <= 1e-12
        assert core.points_q[0, 0] == pytest.approx(phi(t), abs=1e-3)

    def test_empty_core_is_flagged(self, caplog):
        proc = zero_process()
        box = symmetric_box([4.0])
        lifted = GraphFn.constant(box, (9,), np.array([3.0]))
        with caplog.at_level(logging.WARNING, logger="growup"):
            core = bounded_core_section(SYS, proc, 0.0, 1.0, 4.0, lifted)
        assert core.empty
        assert any("empty" in r.message for r in caplog.records)


class TestPullbackOmega:

    def _hat_family(self, level):
        def sampler(s):
            offs = np.linspace(-0.3, 0.3, 5)[:, None]
            return np.zeros((5, 1)), phi(s) + offs

        return NonAutonomousSetFamily(sampler, 10.0, "hat", r_level=level)

    def test_hat_family_finds_the_bounded_solution(self):
        t = 0.7
        cloud = pullback_omega(SYS, sin_forced(), t, self._hat_family(1.0))
        assert cloud.universe == "hat"
        assert cloud.points_p.shape == (1, 1)
        assert abs(cloud.points_p[0, 0]) <= 1e-12
        assert cloud.points_q[0, 0] == pytest.approx(phi(t), abs=1e-2)

    def test_hat_cloud_lies_on_the_bounded_core(self):
        t = 0.7
        proc = sin_forced()
        ladder = [t + s for s in DENSE_LADDER]
        section = pullback_section(SYS, proc, t, s_ladder=ladder, tol=1e-4)
        core = bounded_core_section(SYS, proc, t, 1.0, 8.0, section)
        cloud = pullback_omega(SYS, proc, t, self._hat_family(1.0))
        gap = np.hypot(cloud.points_p[0, 0] - core.points_p[:, 0],
                       cloud.points_q[0, 0] - core.points_q[:, 0])
        assert np.min(gap) <= 1e-2

    def test_tilde_escaping_family_lands_on_the_graph(self):
        # [DERIVED] B(s) = {2 e^{s-t}} rides a backward solution of the
        # linear part, so its images sit at p = 2 for every ladder depth
        # while the fiber value converges to the bounded solution
        t = 0.7
        proc = sin_forced()

        def sampler(s):
            return np.array([[2.0 * np.exp(s - t)]]), np.array([[0.0]])

        family = NonAutonomousSetFamily(sampler, t, "tilde", bound=2.5)
        cloud = pullback_omega(SYS, proc, t, family)
        assert cloud.points_p.shape == (1, 1)
        assert cloud.points_p[0, 0] == pytest.approx(2.0, abs=1e-6)
        assert cloud.points_q[0, 0] == pytest.approx(phi(t), abs=1e-2)
        ladder = [t + s for s in DENSE_LADDER]
        section = pullback_section(SYS, proc, t, s_ladder=ladder, tol=1e-4)
        sigma_at = section.eval(cloud.points_p)[0, 0]
        assert abs(cloud.points_q[0, 0] - sigma_at) <= 1e-2

    def test_tilde_bound_violation_rejected(self):
        sampler = lambda s: (np.array([[2.0]]), np.array([[0.0]]))
        family = NonAutonomousSetFamily(sampler, 10.0, "tilde", bound=0.5)
        with pytest.raises(ConfigError, match="tilde"):
            pullback_omega(SYS, sin_forced(), 0.7, family)

    def test_hat_capture_violation_rejected(self):
        sampler = lambda s: (np.array([[3.0]]), np.array([[0.0]]))
        family = NonAutonomousSetFamily(sampler, 10.0, "hat", r_level=1.0)
        with pytest.raises(ConfigError, match="hat"):
            pullback_omega(SYS, sin_forced(), 0.7, family)

    def test_omega_cloud_is_process_invariant(self):
        t0, t1 = 0.7, 1.5
        proc = sin_forced()
        cloud0 = pullback_omega(SYS, proc, t0, self._hat_family(1.0))
        cloud1 = pullback_omega(SYS, proc, t1, self._hat_family(1.0))
        moved = integrate_process(SYS, proc,
                                  (cloud0.points_p, cloud0.points_q),
                                  t0, t1, 0.01,
                                  store_every=10 ** 9).final()
        gap = np.hypot(moved[0][:, 0] - cloud1.points_p[:, 0],
                       moved[1][:, 0] - cloud1.points_q[:, 0])
        assert np.max(gap) <= 2.0 * 1e-2

    def test_section_is_process_invariant(self):
        s, t = 0.2, 0.7
        proc = sin_forced()
        ladder_s = [s + d for d in DENSE_LADDER]
        ladder_t = [t + d for d in DENSE_LADDER]
        sec_s = pullback_section(SYS, proc, s, s_ladder=ladder_s, tol=1e-4)
        sec_t = pullback_section(SYS, proc, t, s_ladder=ladder_t, tol=1e-4)
        inner = np.linspace(-2.0, 2.0, 9)[:, None]
        qv = sec_s.eval(inner)
        moved = integrate_process(SYS, proc, (inner, qv), s, t, 0.01,
                                  store_every=10 ** 9).final()
        sigma_t = sec_t.eval(moved[0])
        assert np.max(np.abs(moved[1] - sigma_t)) <= 1e-3
