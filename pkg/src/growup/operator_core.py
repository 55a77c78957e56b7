"""Finite-dimensional spectral splitting X = E+ (+) E-.

The unstable part E+ carries a dense real matrix a_plus with spectrum in
the open right half-plane; the stable part E- is a finite list of complex
decay modes acting diagonally.  Both propagators are exact exponentials,
so every constant measured here (M, gamma_0, gamma_1, gamma_2, Lyapunov
certificates) is a property of the model, not of a discretisation.

The matrix exponential is scipy's scaling-and-squaring Pade implementation
and is the only transcendental kernel in the package.
"""

import json
from collections import namedtuple

import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov

from .errors import (
    ConfigError,
    HyperbolicityError,
    IllConditionedError,
    RangeOverflowError,
)

# Propagating further than this is guaranteed to overflow float64.
_EXP_ARG_LIMIT = 700.0

# Spectrum closer to the imaginary axis than this is treated as touching it.
_HYPERBOLICITY_TOL = 1e-8

_NORM_CHOICES = ("euclidean", "l1", "linf")


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _norm_constants(norm_choice, n):
    """Constants (c1, c2) with c1*|p|_X <= |p|_2 <= c2*|p|_X on R^n."""
    if norm_choice == "euclidean":
        return 1.0, 1.0
    if norm_choice == "l1":
        return 1.0 / np.sqrt(n), 1.0
    if norm_choice == "linf":
        return 1.0, np.sqrt(n)
    raise ConfigError(
        "unknown norm_choice %r, expected one of %s" % (norm_choice, (_NORM_CHOICES,))
    )


class SplitSystem:
    """The operator A in split coordinates, immutable after construction.

    P and I-P are the exact coordinate projections onto the first n_plus
    and the remaining m components.  allow_nonhyperbolic admits spectrum
    of a_plus on the imaginary axis (needed for the pure-rotation example)
    but such systems are rejected by every certificate routine.
    """

    def __init__(self, n_plus, a_plus, minus_rates, norm_choice="euclidean",
                 allow_nonhyperbolic=False):
        n_plus = int(n_plus)
        if n_plus < 1:
            raise ConfigError("n_plus must be >= 1, got %d" % n_plus)
        a_plus = np.asarray(a_plus, dtype=float)
        if a_plus.shape != (n_plus, n_plus):
            raise ConfigError(
                "a_plus must be %d x %d, got shape %s" % (n_plus, n_plus, a_plus.shape)
            )
        if not np.all(np.isfinite(a_plus)):
            raise ConfigError("a_plus contains non-finite entries")
        minus_rates = np.atleast_1d(np.asarray(minus_rates, dtype=complex))
        if minus_rates.ndim != 1 or minus_rates.size < 1:
            raise ConfigError("minus_rates must be a nonempty vector of modes")
        if not np.all(np.isfinite(minus_rates)):
            raise ConfigError("minus_rates contains non-finite entries")

        eig_plus = np.linalg.eigvals(a_plus)
        if np.any(minus_rates.real >= 0.0):
            raise HyperbolicityError(
                "all minus_rates must have negative real part, got %s" % minus_rates
            )
        if not allow_nonhyperbolic and np.any(eig_plus.real <= 0.0):
            raise HyperbolicityError(
                "a_plus spectrum must lie in the open right half-plane, "
                "eigenvalues %s" % eig_plus
            )
        if allow_nonhyperbolic and np.any(eig_plus.real < -_HYPERBOLICITY_TOL):
            raise HyperbolicityError(
                "a_plus eigenvalues with negative real part belong in "
                "minus_rates, got %s" % eig_plus
            )

        c1, c2 = _norm_constants(norm_choice, n_plus)

        self.n_plus = n_plus
        self.m = minus_rates.size
        self.a_plus = _frozen(a_plus)
        self.minus_rates = _frozen(minus_rates)
        self.norm_choice = norm_choice
        self.allow_nonhyperbolic = bool(allow_nonhyperbolic)
        self.c1 = c1
        self.c2 = c2
        self.eig_plus = _frozen(eig_plus)
        self.rho_plus = float(np.max(np.abs(eig_plus))) if n_plus else 0.0

    def norm_plus(self, p):
        """Chosen norm on E+ along the last axis."""
        p = np.asarray(p)
        if self.norm_choice == "euclidean":
            return np.linalg.norm(p, axis=-1)
        if self.norm_choice == "l1":
            return np.abs(p).sum(axis=-1)
        return np.abs(p).max(axis=-1)

    def norm_minus(self, q):
        """Euclidean norm on the truncated E- along the last axis."""
        return np.linalg.norm(np.asarray(q), axis=-1)

    def state_norm(self, p, q):
        return np.hypot(self.norm_plus(p), self.norm_minus(q))

    def is_hyperbolic(self):
        return bool(
            np.all(self.eig_plus.real > _HYPERBOLICITY_TOL)
            and np.all(self.minus_rates.real < -_HYPERBOLICITY_TOL)
        )

    def cache_key(self):
        """Hashable identity used to memoise integrator kernels."""
        return (
            self.n_plus,
            self.a_plus.tobytes(),
            self.minus_rates.tobytes(),
            self.norm_choice,
        )

    def to_dict(self):
        return {
            "n_plus": self.n_plus,
            "a_plus": [float(x) for x in self.a_plus.ravel()],
            "minus_rates": [[float(z.real), float(z.imag)] for z in self.minus_rates],
            "norm_choice": self.norm_choice,
        }

    def __repr__(self):
        return "SplitSystem(n_plus=%d, m=%d, norm=%s)" % (
            self.n_plus, self.m, self.norm_choice,
        )


DichotomyConstants = namedtuple(
    "DichotomyConstants", ["m_const", "gamma0", "gamma1", "gamma2"]
)

LyapunovCertificate = namedtuple(
    "LyapunovCertificate", ["n_matrix", "d1", "d2", "c1", "c2", "r0", "r1"]
)


def propagator_plus(sys, t):
    """e^{a_plus * t}; t of either sign, the E+ flow is a group."""
    t = float(t)
    if not np.isfinite(t):
        raise ConfigError("propagation time must be finite, got %r" % t)
    if abs(t) * sys.rho_plus > _EXP_ARG_LIMIT:
        raise RangeOverflowError(
            "|t| * spectral bound = %.3g exceeds %.0f; the propagator would "
            "overflow" % (abs(t) * sys.rho_plus, _EXP_ARG_LIMIT)
        )
    if t == 0.0:
        return np.eye(sys.n_plus)
    return expm(sys.a_plus * t)


def propagator_minus(sys, t):
    """Entrywise multipliers e^{lambda_j * t} on E-; forward time only."""
    t = float(t)
    if t < 0.0:
        raise ConfigError("the E- semigroup is not invertible; t must be >= 0")
    return np.exp(sys.minus_rates * t)


def default_time_grid(sys, points=600):
    """Grid [0, 10/min|Re lambda|] on which dichotomy constants are fitted."""
    re_all = np.concatenate([sys.eig_plus.real, sys.minus_rates.real])
    scale = np.min(np.abs(re_all))
    if scale < _HYPERBOLICITY_TOL:
        raise HyperbolicityError(
            "an eigenvalue real part is within %g of zero" % _HYPERBOLICITY_TOL
        )
    return np.linspace(0.0, 10.0 / scale, points)


def estimate_dichotomy(sys, time_grid=None):
    """Fit the smallest (M, gamma0, gamma1, gamma2) valid on the grid.

    The rates are the sharp spectral values; M is the worst ratio between
    a measured propagator norm and its rate envelope over the grid, never
    below 1.  Raises if the splitting is not strictly hyperbolic.
    """
    re_plus = sys.eig_plus.real
    re_minus = sys.minus_rates.real
    if np.any(np.abs(re_plus) < _HYPERBOLICITY_TOL) or np.any(
        np.abs(re_minus) < _HYPERBOLICITY_TOL
    ):
        raise HyperbolicityError(
            "an eigenvalue real part is within %g of zero; no exponential "
            "dichotomy" % _HYPERBOLICITY_TOL
        )
    if np.any(re_plus <= 0.0):
        raise HyperbolicityError("a_plus spectrum must be strictly unstable")

    if time_grid is None:
        time_grid = default_time_grid(sys)
    grid = np.asarray(time_grid, dtype=float)
    if grid.size == 0:
        raise ConfigError("time grid is empty")
    span_needed = 10.0 / np.min(np.abs(np.concatenate([re_plus, re_minus])))
    if grid.min() > 1e-12 or grid.max() < span_needed * (1.0 - 1e-9):
        raise ConfigError(
            "time grid must span [0, %.6g], got [%.6g, %.6g]"
            % (span_needed, grid.min(), grid.max())
        )

    gamma1 = float(np.min(re_plus))
    gamma0 = float(np.max(re_plus))
    gamma2 = float(np.min(np.abs(re_minus)))

    m_fit = 1.0
    for t in grid:
        if t < 0.0:
            raise ConfigError("dichotomy grid times must be >= 0")
        fwd = np.linalg.norm(propagator_plus(sys, t), 2)
        bwd = np.linalg.norm(propagator_plus(sys, -t), 2)
        dec = np.max(np.abs(np.exp(sys.minus_rates * t)))
        m_fit = max(
            m_fit,
            fwd * np.exp(-gamma0 * t),
            bwd * np.exp(gamma1 * t),
            dec * np.exp(gamma2 * t),
        )
    return DichotomyConstants(float(m_fit), gamma0, gamma1, gamma2)


def solve_lyapunov(sys, c_f=0.0):
    """Certificate N with a_plus^T N + N a_plus = I and its radii.

    The solve is direct (Bartels-Stewart); conditioning is gauged on the
    equivalent Kronecker system and anything past 1e12 is refused.  The
    thresholds use r0 = 2 c2^2 c_f |N| / c1^2 + 1, strictly above the
    radius where the quadratic form p^T N p starts increasing.
    """
    if np.any(sys.eig_plus.real < _HYPERBOLICITY_TOL):
        raise HyperbolicityError(
            "Lyapunov certificate needs a_plus spectrum strictly in the "
            "right half-plane"
        )
    a = sys.a_plus
    n = sys.n_plus
    eye = np.eye(n)

    kron = np.kron(eye, a.T) + np.kron(a.T, eye)
    cond = np.linalg.cond(kron)
    if not np.isfinite(cond) or cond > 1e12:
        raise IllConditionedError(
            "Lyapunov system condition number %.3g exceeds 1e12" % cond
        )

    n_matrix = solve_continuous_lyapunov(a.T, eye)
    n_matrix = 0.5 * (n_matrix + n_matrix.T)
    residual = np.linalg.norm(a.T @ n_matrix + n_matrix @ a - eye, "fro")
    if residual > 1e-10:
        raise IllConditionedError(
            "Lyapunov residual %.3g exceeds 1e-10" % residual
        )
    eigs = np.linalg.eigvalsh(n_matrix)
    if eigs[0] <= 0.0:
        raise IllConditionedError("Lyapunov solution is not positive definite")

    d1 = float(np.sqrt(eigs[0]))
    d2 = float(np.sqrt(eigs[-1]))
    # |N|_2 = largest eigenvalue for a symmetric positive definite matrix.
    r0 = 2.0 * sys.c2 ** 2 * float(c_f) * eigs[-1] / sys.c1 ** 2 + 1.0
    r1 = (d2 / d1) * r0
    return LyapunovCertificate(_frozen(n_matrix), d1, d2, sys.c1, sys.c2, r0, r1)


def shrink_radius(cert, radius):
    """S(R) = (d1/d2) R: entering {p^T N p <= d1^2 R^2} needs only this much."""
    return (cert.d1 / cert.d2) * radius


def load_system(path):
    """Read a system definition JSON file; hyperbolicity is always enforced."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return system_from_dict(raw)


def system_from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("system definition must be a JSON object")
    allowed = {"n_plus", "a_plus", "minus_rates", "norm_choice"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError("unknown system keys: %s" % sorted(unknown))
    missing = {"n_plus", "a_plus", "minus_rates"} - set(raw)
    if missing:
        raise ConfigError("missing system keys: %s" % sorted(missing))
    n_plus = int(raw["n_plus"])
    a_plus = np.asarray(raw["a_plus"], dtype=float)
    if a_plus.ndim == 1:
        if a_plus.size != n_plus * n_plus:
            raise ConfigError(
                "row-major a_plus must have %d entries, got %d"
                % (n_plus * n_plus, a_plus.size)
            )
        a_plus = a_plus.reshape(n_plus, n_plus)
    pairs = raw["minus_rates"]
    try:
        minus = np.array([complex(re, im) for re, im in pairs])
    except (TypeError, ValueError):
        raise ConfigError("minus_rates must be an array of [re, im] pairs")
    return SplitSystem(
        n_plus, a_plus, minus,
        norm_choice=raw.get("norm_choice", "euclidean"),
    )
