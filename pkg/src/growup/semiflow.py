"""Time integration of u' = Au + f(t, u) in split coordinates.

The scheme is the exponential trapezoidal rule (one predictor and one
corrector pass on the Duhamel integral): the linear part is propagated
exactly, the nonlinearity enters through the phi_1 / phi_2 weights, and
the local error is O(dt^3) on smooth fields.  Constant forcing is
integrated exactly, which keeps the absorbing-strip arithmetic sharp.

Every stored trajectory can be checked against the three a-priori
envelopes (q-contraction into the strip, p upper growth, p lower growth)
with a fixed slack factor; a violation is an error carrying the offending
time, never a warning.
"""

import numpy as np
from scipy.linalg import expm

from .errors import (
    ConfigError,
    DomainExitError,
    EnvelopeViolation,
    IntegrationError,
)
from .operator_core import estimate_dichotomy, propagator_plus

# Hard cap on a single step; larger steps void the local error budget.
DT_MAX = 1.0

ENVELOPE_SLACK = 1.05

_PHI_SERIES_TERMS = 17
_PHI_SERIES_RADIUS = 0.1


class NonlinearityModel:
    """A nonlinearity f with its certified constants.

    fn(t, p, q) -> (fp, fq), vectorised over leading axes of p and q.
    c_f bounds ||f|| globally (None when unbounded); l_f is a Lipschitz
    constant valid on the region named by l_f_scope: "global", a strip
    ("strip", height) in ||q||, or an exterior region ("exterior", r_cut)
    in ||p||.  f0 is the constant part of the splitting f = f0 + f1 and
    decay optionally describes the envelope of ||(I-P)f1|| for large ||p||.
    """

    def __init__(self, fn, c_f=None, l_f=None, l_f_scope="global",
                 f0=None, decay=None, name="custom"):
        self.fn = fn
        self.c_f = None if c_f is None else float(c_f)
        self.l_f = None if l_f is None else float(l_f)
        self.l_f_scope = l_f_scope
        self.f0 = f0
        self.decay = decay
        self.name = name

    def __call__(self, t, p, q):
        fp, fq = self.fn(t, p, q)
        return np.asarray(fp, dtype=float), np.asarray(fq)

    def f1(self, t, p, q):
        """Nonconstant part of the (Hf1) splitting."""
        fp, fq = self(t, p, q)
        if self.f0 is not None:
            fp = fp - self.f0[0]
            fq = fq - self.f0[1]
        return fp, fq

    def __repr__(self):
        return "NonlinearityModel(%s, c_f=%s, l_f=%s)" % (
            self.name, self.c_f, self.l_f,
        )


def certify_nonlinearity(sys, f, n_samples=10000, radius=10.0, seed=0):
    """Monte-Carlo check of the constants a NonlinearityModel declares.

    Samples states in the region named by l_f_scope and returns the
    observed maxima {"sup_f", "lip_ratio", "decay_excess"}; each is None
    when the corresponding constant is undeclared.  Callers assert
    sup_f <= c_f etc.; this function only measures.
    """
    rng = np.random.default_rng(seed)
    n, m = sys.n_plus, sys.m

    def draw(count):
        p = rng.normal(size=(count, n))
        q = rng.normal(size=(count, m))
        scale = rng.uniform(0.0, radius, size=(count, 1))
        norm = np.sqrt(np.sum(p * p, axis=-1) + np.sum(q * q, axis=-1))
        p = p * scale / norm[:, None]
        q = q * scale / norm[:, None]
        scope = f.l_f_scope
        if isinstance(scope, tuple) and scope[0] == "strip":
            q = q * (scope[1] / radius)
        elif isinstance(scope, tuple) and scope[0] == "exterior":
            pn = np.linalg.norm(p, axis=-1, keepdims=True)
            p = p * (1.0 + scope[1] / np.maximum(pn, 1e-12))
        return p, q.astype(_q_dtype(sys))

    report = {"sup_f": None, "lip_ratio": None, "decay_excess": None}

    p, q = draw(n_samples)
    fp, fq = f(0.0, p, q)
    mags = np.hypot(np.linalg.norm(fp, axis=-1),
                    np.linalg.norm(np.abs(fq), axis=-1))
    if f.c_f is not None:
        report["sup_f"] = float(np.max(mags))

    if f.l_f is not None:
        p2, q2 = draw(n_samples)
        fp2, fq2 = f(0.0, p2, q2)
        du = np.hypot(np.linalg.norm(p - p2, axis=-1),
                      np.linalg.norm(np.abs(q - q2), axis=-1))
        df = np.hypot(np.linalg.norm(fp - fp2, axis=-1),
                      np.linalg.norm(np.abs(fq - fq2), axis=-1))
        keep = du > 1e-9
        report["lip_ratio"] = float(np.max(df[keep] / du[keep]))

    if f.decay is not None:
        k_cut = float(f.decay.get("k", 1.0))
        pn = np.linalg.norm(p, axis=-1)
        sel = pn >= k_cut
        if np.any(sel):
            f1p, f1q = f.f1(0.0, p[sel], q[sel])
            minus_mag = np.linalg.norm(np.abs(f1q), axis=-1)
            if f.decay["kind"] == "power":
                env = f.decay["d"] * pn[sel] ** (-f.decay["alpha"])
            else:
                table = np.asarray(f.decay["table"], dtype=float)
                env = np.interp(pn[sel], table[:, 0], table[:, 1])
            report["decay_excess"] = float(np.max(minus_mag - env))
    return report


def zero_nonlinearity(sys, name="zero"):
    def fn(t, p, q):
        return np.zeros_like(np.asarray(p, dtype=float)), np.zeros_like(q)
    return NonlinearityModel(fn, c_f=0.0, l_f=0.0, name=name)


def saturate_field(fn, c_f, dim):
    """Clamp a raw field smoothly so that ||f||_2 <= c_f by construction.

    Componentwise s*tanh(raw/s) with s = c_f/sqrt(dim); the clamp keeps
    the field smooth and does not increase its Lipschitz constant.
    """
    level = float(c_f) / np.sqrt(dim)

    def clamped(t, p, q):
        fp, fq = fn(t, p, q)
        return level * np.tanh(np.asarray(fp) / level), level * np.tanh(
            np.asarray(fq) / level
        )

    return clamped


class Trajectory:
    """Time-stamped (p, q) states on a uniform grid."""

    def __init__(self, times, p_states, q_states, scheme_meta):
        self.times = np.asarray(times, dtype=float)
        self.p_states = np.asarray(p_states)
        self.q_states = np.asarray(q_states)
        self.scheme_meta = dict(scheme_meta)

    def __len__(self):
        return self.times.size

    def state(self, i):
        return self.p_states[i], self.q_states[i]

    def final(self):
        return self.p_states[-1], self.q_states[-1]

    def p_norms(self, sys):
        return sys.norm_plus(self.p_states)

    def q_norms(self, sys):
        return sys.norm_minus(self.q_states)


class _Kernel:
    """Propagator and phi weights for one (system, dt) pair."""

    def __init__(self, sys, dt):
        n = sys.n_plus
        z_plus = sys.a_plus * dt
        # one augmented exponential yields e^Z, phi1(Z), phi2(Z) exactly,
        # including singular Z (rotation blocks, nilpotent shears)
        w = np.zeros((3 * n, 3 * n))
        w[:n, :n] = z_plus
        w[:n, n:2 * n] = np.eye(n)
        w[n:2 * n, 2 * n:] = np.eye(n)
        big = expm(w)
        self.e_plus = big[:n, :n]
        self.phi1_plus = big[:n, n:2 * n]
        self.phi2_plus = big[:n, 2 * n:]

        z = sys.minus_rates * dt
        self.e_minus = np.exp(z)
        self.phi1_minus = _phi_scalar(z, 1)
        self.phi2_minus = _phi_scalar(z, 2)
        if not np.any(sys.minus_rates.imag != 0.0):
            # keep q real for real decay modes
            self.e_minus = self.e_minus.real
            self.phi1_minus = self.phi1_minus.real
            self.phi2_minus = self.phi2_minus.real
        self.dt = dt


def _phi_scalar(z, k):
    """phi_k on a complex vector, series near zero to dodge cancellation."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    small = np.abs(z) <= _PHI_SERIES_RADIUS
    zs = z[small]
    acc = np.zeros_like(zs)
    fact = 1.0
    for j in range(_PHI_SERIES_TERMS - 1, -1, -1):
        # Horner pass for sum_j z^j / (j+k)!
        acc = acc * zs + 1.0 / _factorial(j + k)
    out[small] = acc
    zb = z[~small]
    if k == 1:
        out[~small] = (np.exp(zb) - 1.0) / zb
    else:
        out[~small] = (np.exp(zb) - 1.0 - zb) / zb ** 2
    return out


def _factorial(n):
    r = 1.0
    for i in range(2, n + 1):
        r *= i
    return r


_kernel_cache = {}


def _kernel(sys, dt):
    key = (sys.cache_key(), float(dt).hex())
    kern = _kernel_cache.get(key)
    if kern is None:
        kern = _Kernel(sys, dt)
        _kernel_cache[key] = kern
    return kern


def _q_dtype(sys):
    return complex if np.any(sys.minus_rates.imag != 0.0) else float


def _check_finite(p, q, t):
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise IntegrationError(
            "state became non-finite at t=%.6g" % t, last_time=t
        )


def _step_kernel(kern, f, t, p, q):
    fp0, fq0 = f(t, p, q)
    ap = p @ kern.e_plus.T + kern.dt * (fp0 @ kern.phi1_plus.T)
    aq = q * kern.e_minus + kern.dt * (fq0 * kern.phi1_minus)
    fp1, fq1 = f(t + kern.dt, ap, aq)
    p_new = ap + kern.dt * ((fp1 - fp0) @ kern.phi2_plus.T)
    q_new = aq + kern.dt * ((fq1 - fq0) * kern.phi2_minus)
    return p_new, q_new


def step(sys, f, state, t, dt):
    """One exponential-trapezoidal step from (p, q) at time t."""
    if not 0.0 < dt <= DT_MAX:
        raise ConfigError("dt must lie in (0, %.3g], got %r" % (DT_MAX, dt))
    p = np.asarray(state[0], dtype=float)
    q = np.asarray(state[1], dtype=_q_dtype(sys))
    kern = _kernel(sys, dt)
    p_new, q_new = _step_kernel(kern, f, t, p, q)
    _check_finite(p_new, q_new, t + dt)
    return p_new, q_new


def integrate_process(sys, f, u0, t0, t1, dt, check_envelopes=True,
                      store_every=1, richardson=False):
    """Integrate u' = Au + f(t, u) over [t0, t1] on a fixed grid.

    u0 = (p0, q0); leading axes of p0/q0 are batch dimensions.  The grid
    is uniform with an exact partial final step if (t1-t0)/dt is not an
    integer.  Envelope checks run on the stored states when the system
    is hyperbolic and f carries a global bound.
    """
    if not (np.isfinite(t0) and np.isfinite(t1) and t1 >= t0):
        raise ConfigError("need finite t1 >= t0, got [%r, %r]" % (t0, t1))
    if not 0.0 < dt <= DT_MAX:
        raise ConfigError("dt must lie in (0, %.3g], got %r" % (DT_MAX, dt))
    span = t1 - t0
    n_steps = int(np.floor(span / dt + 1e-9))
    dt_last = span - n_steps * dt
    if dt_last <= 1e-9 * max(1.0, abs(span)):
        dt_last = 0.0

    p = np.asarray(u0[0], dtype=float)
    q = np.asarray(u0[1], dtype=_q_dtype(sys))
    if p.shape[-1] != sys.n_plus or q.shape[-1] != sys.m:
        raise ConfigError(
            "state shapes %s/%s do not match system (%d, %d)"
            % (p.shape, q.shape, sys.n_plus, sys.m)
        )
    _check_finite(p, q, t0)

    kern = _kernel(sys, dt)
    times = [t0]
    p_hist = [p]
    q_hist = [q]
    t = t0
    for k in range(n_steps):
        # non-finite states are trapped explicitly, so transient overflow
        # warnings on the way there carry no information
        with np.errstate(over="ignore", invalid="ignore"):
            p, q = _step_kernel(kern, f, t, p, q)
        t = t0 + (k + 1) * dt
        _check_finite(p, q, t)
        if (k + 1) % store_every == 0 or (k + 1 == n_steps and dt_last == 0.0):
            times.append(t)
            p_hist.append(p)
            q_hist.append(q)
    if dt_last > 0.0:
        kern_last = _kernel(sys, dt_last)
        p, q = _step_kernel(kern_last, f, t, p, q)
        t = t1
        _check_finite(p, q, t)
        times.append(t)
        p_hist.append(p)
        q_hist.append(q)

    meta = {"dt": dt, "order": 2, "scheme": "exp-trapezoid",
            "store_every": store_every, "t0": t0, "t1": t1,
            "step_tol": dt ** 3 * max(1.0, f.c_f or 1.0)}

    if richardson:
        meta["richardson"] = _richardson_gap(sys, f, u0, t0, t1, dt, (p, q))

    traj = Trajectory(np.array(times), np.stack(p_hist), np.stack(q_hist), meta)
    if check_envelopes:
        con = _cached_dichotomy(sys)
        if con is not None and f.c_f is not None:
            verify_envelopes(sys, traj, con, f.c_f)
    return traj


def integrate(sys, f, u0, t_span, dt, **kw):
    """Autonomous wrapper: t_span is (t0, t1) or a final time T meaning (0, T)."""
    if np.isscalar(t_span):
        t0, t1 = 0.0, float(t_span)
    else:
        t0, t1 = float(t_span[0]), float(t_span[1])
    return integrate_process(sys, f, u0, t0, t1, dt, **kw)


def _richardson_gap(sys, f, u0, t0, t1, dt, u_end):
    """Distance between the endpoint and a half-step re-integration."""
    half = integrate_process(sys, f, u0, t0, t1, dt / 2.0,
                             check_envelopes=False, store_every=10 ** 9)
    ph, qh = half.final()
    gap = float(
        np.max(
            np.hypot(
                np.linalg.norm(u_end[0] - ph, axis=-1),
                np.linalg.norm(np.abs(u_end[1] - qh), axis=-1),
            )
        )
    )
    scale = 1.0 + float(np.max(sys.state_norm(ph, np.abs(qh))))
    tol = 100.0 * dt ** 2 * scale
    if gap > tol:
        raise IntegrationError(
            "half-step disagreement %.3g exceeds %.3g" % (gap, tol),
            last_time=t1,
        )
    return gap


_dichotomy_cache = {}


def _cached_dichotomy(sys):
    key = sys.cache_key()
    if key not in _dichotomy_cache:
        if sys.is_hyperbolic():
            _dichotomy_cache[key] = estimate_dichotomy(sys)
        else:
            _dichotomy_cache[key] = None
    return _dichotomy_cache[key]


def verify_envelopes(sys, traj, con, c_f, slack=ENVELOPE_SLACK):
    """Check the three a-priori bounds on all stored state pairs.

    q-bound:  ||q(t)|| <= M e^{-g2 D}||q(s)|| + (M c_f/g2)(1 - e^{-g2 D})
    p-upper:  ||p(t)|| <= M e^{g0 D}||p(s)|| + (M c_f/g0)(e^{g0 D} - 1)
    p-lower:  ||p(t)|| >= e^{g1 D}(||p(s)||/M - c_f/g1)
    with D = t - s >= 0; the upper bounds get the slack factor, the lower
    bound is divided by it.  Raises EnvelopeViolation with the worst pair.
    """
    m_const, g0, g1, g2 = con.m_const, con.gamma0, con.gamma1, con.gamma2
    pn = traj.p_norms(sys)
    qn = traj.q_norms(sys)
    times = traj.times
    n = times.size
    if pn.ndim > 1:
        # batch runs: flatten batch axes, cap the number of base times
        pn = pn.reshape(n, -1)
        qn = qn.reshape(n, -1)
        base = np.unique(np.linspace(0, n - 1, 64).astype(int))
    else:
        pn = pn[:, None]
        qn = qn[:, None]
        base = np.arange(n)
    for i in base:
        delta = times[i:] - times[i]
        decay = np.exp(-g2 * delta)[:, None]
        grow0 = np.exp(g0 * delta)[:, None]
        grow1 = np.exp(g1 * delta)[:, None]
        q_env = m_const * decay * qn[i] + (m_const * c_f / g2) * (1.0 - decay)
        bad = qn[i:] > slack * q_env + 1e-12
        if np.any(bad):
            j = np.argwhere(bad)[0]
            raise EnvelopeViolation(
                "q-contraction envelope failed",
                time=times[i + j[0]],
                observed=float(qn[i + j[0], j[1]]),
                allowed=float(slack * q_env[j[0], j[1]]),
            )
        p_env = m_const * grow0 * pn[i] + (m_const * c_f / g0) * (grow0 - 1.0)
        bad = pn[i:] > slack * p_env + 1e-12
        if np.any(bad):
            j = np.argwhere(bad)[0]
            raise EnvelopeViolation(
                "p upper growth envelope failed",
                time=times[i + j[0]],
                observed=float(pn[i + j[0], j[1]]),
                allowed=float(slack * p_env[j[0], j[1]]),
            )
        floor = grow1 * (pn[i] / m_const - c_f / g1) / slack
        bad = pn[i:] < floor - 1e-12
        if np.any(bad):
            j = np.argwhere(bad)[0]
            raise EnvelopeViolation(
                "p lower growth envelope failed",
                time=times[i + j[0]],
                observed=float(pn[i + j[0], j[1]]),
                allowed=float(floor[j[0], j[1]]),
            )


def duhamel_residuals(sys, f, traj):
    """Residual of the variation-of-constants identity on each stored step.

    The integral is re-done independently with 4-point Gauss-Legendre and
    cubic Hermite reconstruction of the state inside the step, so a bug
    in the phi weights cannot cancel.  Only meaningful when the
    trajectory was stored at every step.
    """
    nodes = np.array([-0.8611363115940526, -0.3399810435848563,
                      0.3399810435848563, 0.8611363115940526])
    weights = np.array([0.3478548451374538, 0.6521451548625461,
                        0.6521451548625461, 0.3478548451374538])
    rates = sys.minus_rates
    if not np.any(rates.imag != 0.0):
        rates = rates.real
    out = []
    for i in range(len(traj) - 1):
        t0, t1 = traj.times[i], traj.times[i + 1]
        h = t1 - t0
        p0, q0 = traj.state(i)
        p1, q1 = traj.state(i + 1)
        f0p, f0q = f(t0, p0, q0)
        f1p, f1q = f(t1, p1, q1)
        d0p = p0 @ sys.a_plus.T + f0p
        d1p = p1 @ sys.a_plus.T + f1p
        d0q = q0 * rates + f0q
        d1q = q1 * rates + f1q
        acc_p = np.zeros_like(p0)
        acc_q = np.zeros_like(q0)
        for x, w in zip(nodes, weights):
            s = t0 + 0.5 * h * (1.0 + x)
            u = 0.5 * (1.0 + x)
            h00 = 2 * u ** 3 - 3 * u ** 2 + 1
            h10 = u ** 3 - 2 * u ** 2 + u
            h01 = -2 * u ** 3 + 3 * u ** 2
            h11 = u ** 3 - u ** 2
            ps = h00 * p0 + h10 * h * d0p + h01 * p1 + h11 * h * d1p
            qs = h00 * q0 + h10 * h * d0q + h01 * q1 + h11 * h * d1q
            fsp, fsq = f(s, ps, qs)
            acc_p = acc_p + w * (fsp @ propagator_plus(sys, t1 - s).T)
            acc_q = acc_q + w * (fsq * np.exp(rates * (t1 - s)))
        int_p = 0.5 * h * acc_p
        int_q = 0.5 * h * acc_q
        res_p = p1 - p0 @ propagator_plus(sys, h).T - int_p
        res_q = q1 - q0 * np.exp(rates * h) - int_q
        out.append(float(np.max(np.hypot(
            np.linalg.norm(res_p, axis=-1),
            np.linalg.norm(np.abs(res_q), axis=-1),
        ))))
    return np.array(out)


def backward_plus_solve(sys, f, sigma, p_end, tau, horizon, dt=0.005,
                        growth_guard=None):
    """Backward E+ path on the graph of sigma, ending at p_end at time tau.

    Solves p' = A p + Pf(t, p + sigma(p)) from t = tau down to
    tau - horizon via the substitution s = tau - t (the reversed system
    is stable on E+, so the march is well conditioned).  sigma=None means
    the zero section.  The path must stay inside sigma's domain box; the
    first exit aborts with the exit time.  The result is always verified
    by forward re-integration back to p_end.

    growth_guard, if given, is (m_const, gamma1, l_f, kappa): the path is
    checked against ||p(t)|| <= M e^{(M l_f (1+kappa) - gamma1)(tau-t)}
    ||p_end|| with the standard slack.

    Returns (times ascending, path) with path[k] at times[k].
    """
    if horizon <= 0.0:
        raise ConfigError("horizon must be positive")
    if not 0.0 < dt <= DT_MAX:
        raise ConfigError("dt must lie in (0, %.3g], got %r" % (DT_MAX, dt))
    p_end = np.asarray(p_end, dtype=float)

    n_steps = int(np.ceil(horizon / dt - 1e-9))
    dts = np.full(n_steps, dt)
    dts[-1] = horizon - dt * (n_steps - 1)

    def eval_q(p):
        if sigma is None:
            return np.zeros(p.shape[:-1] + (sys.m,), dtype=_q_dtype(sys))
        return sigma.eval(p)

    def check_domain(p, t):
        if sigma is not None and not bool(np.all(sigma.contains(p))):
            raise DomainExitError(
                "backward path left the graph domain at t=%.6g" % t,
                exit_time=t,
            )

    def fp_on_graph(t, p):
        fp, _ = f(t, p, eval_q(p))
        return fp

    def g_reversed(s, pp):
        # reversed field: dp/ds = -A p - Pf(tau - s, .)
        return -fp_on_graph(tau - s, pp)

    path = [p_end]
    times = [tau]
    p = p_end
    check_domain(p, tau)
    s = 0.0
    for h in dts:
        kern = _plus_phi_kernel(-sys.a_plus, h)
        fp0 = g_reversed(s, p)
        ap = p @ kern.e.T + h * (fp0 @ kern.phi1.T)
        fp1 = g_reversed(s + h, ap)
        p = ap + h * ((fp1 - fp0) @ kern.phi2.T)
        s += h
        t = tau - s
        if not np.all(np.isfinite(p)):
            raise IntegrationError("backward state non-finite", last_time=t)
        check_domain(p, t)
        times.append(t)
        path.append(p)

    times = np.array(times[::-1])
    path = np.stack(path[::-1])

    if growth_guard is not None:
        m_const, gamma1, l_f, kappa = growth_guard
        rate = m_const * l_f * (1.0 + kappa) - gamma1
        norms = np.linalg.norm(path, axis=-1)
        profile = m_const * np.exp(rate * (tau - times))
        env = profile.reshape((times.size,) + (1,) * (norms.ndim - 1)) \
            * np.linalg.norm(p_end, axis=-1)
        excess = norms - ENVELOPE_SLACK * env
        if np.any(excess > 1e-12):
            worst = np.unravel_index(np.argmax(excess), excess.shape)
            raise EnvelopeViolation(
                "backward growth envelope failed",
                time=float(times[worst[0]]),
                observed=float(norms[worst]),
                allowed=float(ENVELOPE_SLACK * env[worst]),
            )

    # forward re-check with the same scheme; must land back on p_end
    p_fwd = path[0]
    t = times[0]
    for h in dts[::-1]:
        kern = _plus_phi_kernel(sys.a_plus, h)
        fp0 = fp_on_graph(t, p_fwd)
        ap = p_fwd @ kern.e.T + h * (fp0 @ kern.phi1.T)
        fp1 = fp_on_graph(t + h, ap)
        p_fwd = ap + h * ((fp1 - fp0) @ kern.phi2.T)
        t += h
    err = np.linalg.norm(p_fwd - p_end, axis=-1)
    if np.any(err > 1e-6 * (1.0 + np.linalg.norm(p_end, axis=-1))):
        raise IntegrationError(
            "forward re-integration missed the anchor by %.3g"
            % float(np.max(err)),
            last_time=tau,
        )
    return times, path


class _PlusKernel:
    def __init__(self, mat, dt):
        n = mat.shape[0]
        w = np.zeros((3 * n, 3 * n))
        w[:n, :n] = mat * dt
        w[:n, n:2 * n] = np.eye(n)
        w[n:2 * n, 2 * n:] = np.eye(n)
        big = expm(w)
        self.e = big[:n, :n]
        self.phi1 = big[:n, n:2 * n]
        self.phi2 = big[:n, 2 * n:]


_plus_kernel_cache = {}


def _plus_phi_kernel(mat, dt):
    key = (mat.tobytes(), mat.shape[0], float(dt).hex())
    kern = _plus_kernel_cache.get(key)
    if kern is None:
        kern = _PlusKernel(mat, dt)
        _plus_kernel_cache[key] = kern
    return kern
