"""Propagator, dichotomy-constant, and Lyapunov-certificate checks.

Closed-form expectations are frozen from hand derivations; the Lyapunov
solve is cross-checked against an independent Kronecker-product solve.
"""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from growup.errors import (
    ConfigError,
    HyperbolicityError,
    RangeOverflowError,
)
from growup.operator_core import (
    SplitSystem,
    estimate_dichotomy,
    load_system,
    propagator_minus,
    propagator_plus,
    shrink_radius,
    solve_lyapunov,
    system_from_dict,
)


def scalar_sys(a=1.0, rate=-1.0):
    return SplitSystem(1, [[a]], [rate])


JORDAN = SplitSystem(2, [[1.0, 1.0], [0.0, 1.0]], [-1.0])


class TestPropagatorPlus:
    def test_identity_at_zero(self):
        assert np.allclose(propagator_plus(scalar_sys(), 0.0), [[1.0]])

    def test_scalar_doubling_time(self):
        assert np.allclose(propagator_plus(scalar_sys(), np.log(2.0)), [[2.0]])

    def test_jordan_block_closed_form(self):
        # e^{At} = e^t [[1, t], [0, 1]] for the 2x2 Jordan block with eigenvalue 1
        got = propagator_plus(JORDAN, 2.0)
        want = np.exp(2.0) * np.array([[1.0, 2.0], [0.0, 1.0]])
        assert np.allclose(got, want, rtol=1e-12)

    def test_overflow_guarded(self):
        stiff = scalar_sys(a=100.0)
        with pytest.raises(RangeOverflowError):
            propagator_plus(stiff, 10.0)

    def test_nonfinite_time_rejected(self):
        with pytest.raises(ConfigError):
            propagator_plus(scalar_sys(), np.inf)

    @settings(max_examples=50, derandomize=True)
    @given(
        t=st.floats(-5.0, 5.0, allow_nan=False),
        s=st.floats(-5.0, 5.0, allow_nan=False),
    )
    def test_group_law(self, t, s):
        sys = SplitSystem(2, [[1.0, 0.5], [-0.3, 2.0]], [-1.0])
        lhs = propagator_plus(sys, t + s)
        rhs = propagator_plus(sys, t) @ propagator_plus(sys, s)
        assert np.linalg.norm(lhs - rhs, 2) <= 1e-10 * max(
            1.0, np.linalg.norm(lhs, 2)
        )


class TestPropagatorMinus:
    def test_identity_at_zero(self):
        assert np.allclose(propagator_minus(scalar_sys(), 0.0), [1.0])

    def test_scalar_halving_time(self):
        assert np.allclose(propagator_minus(scalar_sys(), np.log(2.0)), [0.5])

    def test_two_rates(self):
        sys = SplitSystem(1, [[1.0]], [-1.0, -2.0])
        got = propagator_minus(sys, 1.0)
        assert np.allclose(got, [np.exp(-1.0), np.exp(-2.0)])

    def test_backward_time_rejected(self):
        with pytest.raises(ConfigError):
            propagator_minus(scalar_sys(), -0.5)

    @settings(max_examples=50, derandomize=True)
    @given(
        t=st.floats(0.0, 10.0, allow_nan=False),
        s=st.floats(0.0, 10.0, allow_nan=False),
    )
    def test_semigroup_law(self, t, s):
        sys = SplitSystem(1, [[1.0]], [-0.5, complex(-1.0, 3.0)])
        lhs = propagator_minus(sys, t + s)
        rhs = propagator_minus(sys, t) * propagator_minus(sys, s)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10

    def test_modulus_bounded_by_slowest_rate(self):
        sys = SplitSystem(1, [[1.0]], [-0.5, complex(-1.0, 3.0)])
        for t in np.linspace(0.0, 20.0, 50):
            assert np.max(np.abs(propagator_minus(sys, t))) <= np.exp(-0.5 * t) + 1e-14


class TestEstimateDichotomy:
    def test_diagonal_normal_case(self):
        con = estimate_dichotomy(scalar_sys(1.0, -2.0))
        assert con.m_const == pytest.approx(1.0)
        assert con.gamma1 == pytest.approx(1.0)
        assert con.gamma2 == pytest.approx(2.0)

    def test_diagonal_two_speed_plus(self):
        sys = SplitSystem(2, [[2.0, 0.0], [0.0, 1.0]], [-1.0])
        con = estimate_dichotomy(sys)
        assert con.gamma1 == pytest.approx(1.0)
        assert con.gamma0 == pytest.approx(2.0)
        assert con.m_const == pytest.approx(1.0)

    def test_shear_needs_m_above_one(self):
        sys = SplitSystem(2, [[1.0, 5.0], [0.0, 1.0]], [-1.0])
        con = estimate_dichotomy(sys)
        assert con.m_const > 1.0
        # fitted envelope really dominates the backward propagator norm
        for t in np.linspace(0.0, 10.0, 37):
            nrm = np.linalg.norm(propagator_plus(sys, -t), 2)
            assert nrm <= con.m_const * np.exp(-con.gamma1 * t) * (1.0 + 1e-9)

    def test_envelopes_hold_on_finer_grid_within_slack(self):
        sys = SplitSystem(2, [[1.0, 5.0], [0.0, 1.0]], [-1.0, complex(-2.0, 1.0)])
        con = estimate_dichotomy(sys)
        slack = 1.01
        for t in np.linspace(0.0, 10.0, 1801):
            fwd = np.linalg.norm(propagator_plus(sys, t), 2)
            bwd = np.linalg.norm(propagator_plus(sys, -t), 2)
            dec = np.max(np.abs(propagator_minus(sys, t)))
            assert fwd <= slack * con.m_const * np.exp(con.gamma0 * t)
            assert bwd <= slack * con.m_const * np.exp(-con.gamma1 * t)
            assert dec <= slack * con.m_const * np.exp(-con.gamma2 * t)

    def test_near_imaginary_axis_rejected(self):
        sys = SplitSystem(1, [[1.0]], [-1e-12])
        with pytest.raises(HyperbolicityError):
            estimate_dichotomy(sys)

    def test_rotation_block_rejected(self):
        sys = SplitSystem(
            2, [[0.0, 1.0], [-1.0, 0.0]], [-1.0], allow_nonhyperbolic=True
        )
        with pytest.raises(HyperbolicityError):
            estimate_dichotomy(sys)

    def test_short_grid_rejected(self):
        with pytest.raises(ConfigError):
            estimate_dichotomy(scalar_sys(), time_grid=np.linspace(0.0, 1.0, 10))


class TestSolveLyapunov:
    def test_scalar(self):
        cert = solve_lyapunov(scalar_sys())
        assert np.allclose(cert.n_matrix, [[0.5]])
        assert cert.d1 == pytest.approx(np.sqrt(0.5))
        assert cert.d2 == pytest.approx(np.sqrt(0.5))

    def test_diagonal_decouples(self):
        sys = SplitSystem(2, [[1.0, 0.0], [0.0, 2.0]], [-1.0])
        cert = solve_lyapunov(sys)
        assert np.allclose(cert.n_matrix, [[0.5, 0.0], [0.0, 0.25]])

    def test_jordan_block_against_frozen_solution(self):
        # hand solve of the 3-unknown symmetric system for [[1,1],[0,1]]
        cert = solve_lyapunov(JORDAN)
        want = np.array([[0.5, -0.25], [-0.25, 0.75]])
        assert np.allclose(cert.n_matrix, want, atol=1e-12)

    def test_matches_kronecker_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = rng.integers(1, 5)
            a = rng.normal(size=(n, n))
            shift = max(0.0, -np.min(np.linalg.eigvals(a).real)) + 0.5
            a = a + shift * np.eye(n)
            sys = SplitSystem(n, a, [-1.0])
            cert = solve_lyapunov(sys)
            eye = np.eye(n)
            kron = np.kron(eye, a.T) + np.kron(a.T, eye)
            vec = np.linalg.solve(kron, eye.ravel(order="F"))
            want = vec.reshape((n, n), order="F")
            assert np.allclose(cert.n_matrix, want, atol=1e-9)

    def test_residual_small_on_random_matrices(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            n = int(rng.integers(1, 7))
            a = rng.normal(size=(n, n))
            shift = max(0.0, -np.min(np.linalg.eigvals(a).real)) + 0.3
            a = a + shift * np.eye(n)
            sys = SplitSystem(n, a, [-1.0])
            cert = solve_lyapunov(sys)
            res = np.linalg.norm(
                a.T @ cert.n_matrix + cert.n_matrix @ a - np.eye(n), "fro"
            )
            assert res <= 1e-10

    def test_extreme_eigenvalues_define_d1_d2(self):
        cert = solve_lyapunov(JORDAN)
        eigs = np.linalg.eigvalsh(np.asarray(cert.n_matrix))
        assert cert.d1 ** 2 == pytest.approx(eigs[0], abs=1e-10)
        assert cert.d2 ** 2 == pytest.approx(eigs[-1], abs=1e-10)

    def test_radii_relation(self):
        cert = solve_lyapunov(JORDAN, c_f=2.0)
        assert cert.r1 == pytest.approx((cert.d2 / cert.d1) * cert.r0)
        norm_n = np.linalg.norm(np.asarray(cert.n_matrix), 2)
        assert cert.r0 > 2.0 * cert.c2 ** 2 * 2.0 * norm_n / cert.c1 ** 2

    def test_scalar_radius_formula(self):
        # N = 1/2 so the increasing-form threshold is exactly c_f, plus margin 1
        cert = solve_lyapunov(scalar_sys(), c_f=3.0)
        assert cert.r0 == pytest.approx(4.0)

    def test_quadratic_form_increases_outside_threshold(self):
        # p^T N p must grow along p' = A p + w for any ||w|| <= c_f once
        # ||p|| clears the certified radius
        rng = np.random.default_rng(3)
        sys = JORDAN
        c_f = 1.5
        cert = solve_lyapunov(sys, c_f=c_f)
        n_mat = np.asarray(cert.n_matrix)
        for _ in range(25):
            p = rng.normal(size=2)
            p *= (cert.r0 + rng.uniform(0.0, 3.0)) / np.linalg.norm(p)
            w = rng.normal(size=2)
            w *= c_f * rng.uniform(0.0, 1.0) / np.linalg.norm(w)
            dt = 1e-6
            dp = sys.a_plus @ p + w
            before = p @ n_mat @ p
            after = (p + dt * dp) @ n_mat @ (p + dt * dp)
            assert after > before


class TestNormChoices:
    def test_unknown_norm_rejected(self):
        with pytest.raises(ConfigError):
            SplitSystem(1, [[1.0]], [-1.0], norm_choice="l7")

    @settings(max_examples=50, derandomize=True)
    @given(st.integers(1, 5), st.integers(0, 1000))
    def test_equivalence_constants_bracket_euclidean(self, n, seed):
        rng = np.random.default_rng(seed)
        p = rng.normal(size=n)
        for choice in ("euclidean", "l1", "linf"):
            sys = SplitSystem(n, np.eye(n), [-1.0], norm_choice=choice)
            chosen = sys.norm_plus(p)
            eucl = np.linalg.norm(p)
            assert sys.c1 * chosen <= eucl + 1e-12
            assert eucl <= sys.c2 * chosen + 1e-12


class TestSystemValidation:
    def test_positive_minus_rate_rejected(self):
        with pytest.raises(HyperbolicityError):
            SplitSystem(1, [[1.0]], [0.5])

    def test_stable_a_plus_rejected(self):
        with pytest.raises(HyperbolicityError):
            SplitSystem(1, [[-1.0]], [-1.0])

    def test_rotation_block_needs_flag(self):
        with pytest.raises(HyperbolicityError):
            SplitSystem(2, [[0.0, 1.0], [-1.0, 0.0]], [-1.0])
        sys = SplitSystem(
            2, [[0.0, 1.0], [-1.0, 0.0]], [-1.0], allow_nonhyperbolic=True
        )
        assert not sys.is_hyperbolic()

    def test_arrays_are_immutable(self):
        sys = scalar_sys()
        with pytest.raises(ValueError):
            sys.a_plus[0, 0] = 2.0

    def test_shrink_radius(self):
        cert = solve_lyapunov(JORDAN)
        assert shrink_radius(cert, 4.0) == pytest.approx(4.0 * cert.d1 / cert.d2)


class TestJsonLoader:
    def test_round_trip(self, tmp_path):
        sys = SplitSystem(2, [[1.0, 1.0], [0.0, 1.0]], [complex(-1.0, 2.0)])
        path = tmp_path / "sys.json"
        path.write_text(json.dumps(sys.to_dict()))
        back = load_system(path)
        assert np.allclose(back.a_plus, sys.a_plus)
        assert np.allclose(back.minus_rates, sys.minus_rates)
        assert back.norm_choice == sys.norm_choice

    def test_row_major_flat_matrix(self):
        sys = system_from_dict(
            {
                "n_plus": 2,
                "a_plus": [1.0, 5.0, 0.0, 1.0],
                "minus_rates": [[-1.0, 0.0]],
            }
        )
        assert np.allclose(sys.a_plus, [[1.0, 5.0], [0.0, 1.0]])

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError):
            system_from_dict(
                {
                    "n_plus": 1,
                    "a_plus": [[1.0]],
                    "minus_rates": [[-1.0, 0.0]],
                    "extra": 1,
                }
            )

    def test_loader_always_enforces_hyperbolicity(self):
        with pytest.raises(HyperbolicityError):
            system_from_dict(
                {
                    "n_plus": 2,
                    "a_plus": [0.0, 1.0, -1.0, 0.0],
                    "minus_rates": [[-1.0, 0.0]],
                }
            )
