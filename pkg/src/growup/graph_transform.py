"""Graph transform over a finite box: fibers, iteration, cone checks.

A candidate invariant manifold is a function q = sigma(p) stored on a
rectangular grid and interpolated multilinearly.  Pushing the whole
graph through the flow for time t and reading it back over the same box
requires solving, for each node p_target, the fiber problem

    P S(t) (p1 + sigma(p1)) = p_target,

whose solution exists and is unique whenever differences of solutions
stay in the cone ||dq|| <= kappa ||dp||.  Outside the box the graph is
extended by clamping p to the box (constant extrapolation), which is
consistent with evaluating only targets whose preimages stay interior.
"""

import json
import logging

import numpy as np

from .errors import ConfigError, FiberSolveError, NonContractionError
from .operator_core import propagator_plus
from .semiflow import integrate

log = logging.getLogger("growup")


class GraphFn:
    """Grid-sampled graph q = sigma(p) with multilinear interpolation.

    box is (n, 2) of per-axis [lo, hi]; values has shape grid + (m,) and
    may be complex.  Evaluation clamps to the box.
    """

    def __init__(self, box, values):
        box = np.asarray(box, dtype=float)
        if box.ndim == 1:
            box = box[None, :]
        if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
            raise ConfigError("box must be (n, 2) with lo < hi per axis")
        values = np.array(values)
        n = box.shape[0]
        if values.ndim != n + 1:
            raise ConfigError(
                "values must have one grid axis per box axis plus the "
                "q axis; got shape %r for %d box axes" % (values.shape, n)
            )
        if any(s < 2 for s in values.shape[:-1]):
            raise ConfigError("need at least 2 grid points per axis")
        self.box = box
        self.box.setflags(write=False)
        self.values = values
        self.values.setflags(write=False)
        self.n = n
        self.m = values.shape[-1]
        self.shape = values.shape[:-1]
        self.spacing = (box[:, 1] - box[:, 0]) / (np.array(self.shape) - 1)

    @classmethod
    def from_function(cls, box, shape, fn):
        g = cls(box, np.zeros(tuple(shape) + (1,)))
        nodes = g.node_matrix()
        vals = np.asarray(fn(nodes))
        return cls(box, vals.reshape(tuple(shape) + (-1,)))

    @classmethod
    def constant(cls, box, shape, value):
        value = np.atleast_1d(np.asarray(value))
        vals = np.broadcast_to(value, tuple(shape) + value.shape).copy()
        return cls(box, vals)

    def axes(self):
        return [np.linspace(self.box[i, 0], self.box[i, 1], self.shape[i])
                for i in range(self.n)]

    def node_matrix(self):
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.n)

    def eval(self, p):
        p = np.asarray(p, dtype=float)
        scalar = p.ndim == 1
        p = np.atleast_2d(p)
        t = (p - self.box[:, 0]) / self.spacing
        i0 = np.clip(np.floor(t).astype(int), 0,
                     np.array(self.shape) - 2)
        w = np.clip(t - i0, 0.0, 1.0)
        out = np.zeros(p.shape[:-1] + (self.m,), dtype=self.values.dtype)
        for corner in range(2 ** self.n):
            bits = [(corner >> k) & 1 for k in range(self.n)]
            idx = tuple(i0[..., k] + bits[k] for k in range(self.n))
            weight = np.ones(p.shape[:-1])
            for k in range(self.n):
                weight = weight * np.where(bits[k], w[..., k], 1.0 - w[..., k])
            out = out + weight[..., None] * self.values[idx]
        return out[0] if scalar else out

    def __call__(self, p):
        return self.eval(p)

    def contains(self, p, slack=1e-9):
        """Box membership of p, with a relative slack per axis."""
        p = np.asarray(p, dtype=float)
        tol = slack * (1.0 + self.box[:, 1] - self.box[:, 0])
        ok = (p >= self.box[:, 0] - tol) & (p <= self.box[:, 1] + tol)
        return np.all(ok, axis=-1)

    def sup_norm(self):
        return float(np.max(np.linalg.norm(self.values, axis=-1)))

    def kappa_hat(self):
        """Largest per-axis forward difference quotient (discrete Lipschitz)."""
        worst = 0.0
        for k in range(self.n):
            d = np.diff(self.values, axis=k)
            quot = np.linalg.norm(d, axis=-1) / self.spacing[k]
            worst = max(worst, float(np.max(quot)))
        return worst

    def diff_sup(self, other):
        if self.shape != other.shape or not np.allclose(self.box, other.box):
            raise ConfigError("graphs live on different grids")
        return float(np.max(np.linalg.norm(self.values - other.values,
                                           axis=-1)))

    def to_header(self):
        return {
            "box": self.box.tolist(),
            "spacing": self.spacing.tolist(),
            "dims": list(self.shape) + [self.m],
        }

    def save_json(self, path):
        payload = dict(self.to_header())
        payload["values_real"] = np.real(self.values).tolist()
        if np.iscomplexobj(self.values):
            payload["values_imag"] = np.imag(self.values).tolist()
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load_json(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        vals = np.array(payload["values_real"], dtype=float)
        if "values_imag" in payload:
            vals = vals + 1j * np.array(payload["values_imag"])
        g = cls(np.array(payload["box"]), vals)
        if list(g.shape) + [g.m] != payload["dims"]:
            raise ConfigError("dims header disagrees with stored values")
        return g


def symmetric_box(half_widths):
    half = np.atleast_1d(np.asarray(half_widths, dtype=float))
    return np.stack([-half, half], axis=1)


def default_box(r1, n, factor=4.0):
    """Box wide enough that the certified window sits well inside."""
    return symmetric_box(np.full(n, factor * r1))


class ConeParameters:
    """Cone opening kappa plus admissibility recomputed on demand.

    Nothing is cached: the bound and the attraction rate are functions
    of whatever constants are passed in, so they can never go stale.
    """

    def __init__(self, kappa):
        if not kappa > 0:
            raise ConfigError("kappa must be positive")
        self.kappa = float(kappa)

    def bound(self, con):
        k = self.kappa
        return k / (1.0 + k) ** 2 * (con.gamma1 + con.gamma2)

    def admissible(self, l_f, con):
        if con.m_const > 1.0 + 1e-9:
            return False
        return l_f < self.bound(con)

    def attraction_delta(self, l_f, con):
        return con.gamma2 - l_f * (1.0 + 1.0 / self.kappa)


def _endpoint(sys, f, p, q, t):
    steps = max(10, int(np.ceil(t / 0.05)))
    traj = integrate(sys, f, (p, q), (0.0, t), dt=t / steps,
                     check_envelopes=False, store_every=10 ** 9)
    return traj.final()


def _graph_q(sys, sigma, p):
    if sigma is None:
        dt = complex if np.iscomplexobj(sys.minus_rates) else float
        return np.zeros(p.shape[:-1] + (sys.m,), dtype=dt)
    return sigma.eval(p)


def _target_window_check(sys, f, sigma, t, targets):
    # conservative screen: expansion by at least e^{g1 t}/M minus the
    # worst-case drift from f must keep preimages of these targets in
    # the box
    if sigma is None or not sys.is_hyperbolic():
        return
    from .absorbing import dichotomy_for

    con = dichotomy_for(sys)
    growth = np.exp(con.gamma1 * t) / con.m_const
    drift = 0.0
    if f.c_f:
        drift = con.m_const * f.c_f / con.gamma1 * (np.exp(con.gamma1 * t)
                                                    - 1.0)
    half = 0.5 * (sigma.box[:, 1] - sigma.box[:, 0])
    center = 0.5 * (sigma.box[:, 1] + sigma.box[:, 0])
    allowed = half * growth - drift
    if np.any(np.abs(targets - center) > allowed + 1e-12):
        raise ConfigError(
            "targets fall outside the window whose preimages are certified "
            "to stay in the box; enlarge the box or shorten t"
        )


def _solve_targets(sys, f, sigma, t, targets, seeds=None, tol_scale=1e-8,
                   max_iter=60):
    """Batched damped Newton for the fiber problem at many targets.

    Returns (p1, q_end, residuals, converged).  Seeds default to the
    linear preimage of each target.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n = sys.n_plus
    e_fwd = propagator_plus(sys, t)
    if seeds is None:
        seeds = np.linalg.solve(e_fwd, targets.T).T
    p = np.array(seeds, dtype=float)
    tol = tol_scale * (1.0 + np.linalg.norm(targets, axis=-1))

    def g_of(p_cur):
        pe, _qe = _endpoint(sys, f, p_cur, _graph_q(sys, sigma, p_cur), t)
        return pe - targets

    G = g_of(p)
    res = np.linalg.norm(G, axis=-1)
    lam = np.ones(p.shape[0])
    stuck = np.zeros(p.shape[0], dtype=bool)
    for _ in range(max_iter):
        active = (res > tol) & ~stuck
        if not np.any(active):
            break
        J = np.empty(p.shape[:1] + (n, n))
        eps = 1e-6 * (1.0 + np.abs(p))
        for j in range(n):
            dp = np.zeros_like(p)
            dp[:, j] = eps[:, j]
            J[:, :, j] = (g_of(p + dp) - G) / eps[:, j][:, None]
        try:
            step = np.linalg.solve(J, G[..., None])[..., 0]
        except np.linalg.LinAlgError:
            J = J + 1e-12 * np.eye(n)
            step = np.linalg.solve(J, G[..., None])[..., 0]
        cand = p - lam[:, None] * step
        G_c = g_of(cand)
        res_c = np.linalg.norm(G_c, axis=-1)
        better = (res_c < res) & active
        p[better] = cand[better]
        G[better] = G_c[better]
        res[better] = res_c[better]
        lam[better] = 1.0
        worse = active & ~better
        lam[worse] *= 0.5
        stuck |= lam < 2.0 ** -7
    _pe, q_end = _endpoint(sys, f, p, _graph_q(sys, sigma, p), t)
    return p, q_end, res, res <= tol


def fiber_solve(sys, f, sigma, t, p_target, tol_scale=1e-8, max_iter=60):
    """Preimage node for one target, resolved toward smallest ||p1||.

    Runs the Newton solve from the linear seed plus a few spread starts;
    distinct converged preimages are logged as a multiplicity and the
    smallest-norm one is returned along with the transformed value.
    """
    if t <= 0:
        raise ConfigError("fiber time must be positive")
    p_target = np.atleast_1d(np.asarray(p_target, dtype=float))
    _target_window_check(sys, f, sigma, t, p_target[None, :])
    n = sys.n_plus
    e_fwd = propagator_plus(sys, t)
    lin = np.linalg.solve(e_fwd, p_target)
    rng = np.random.default_rng(0)
    spread = (1.0 + np.linalg.norm(p_target))
    seeds = np.vstack([
        lin,
        np.zeros(n),
        lin + spread * rng.standard_normal((3, n)),
    ])
    targets = np.broadcast_to(p_target, (seeds.shape[0], n))
    p1, q_end, res, ok = _solve_targets(sys, f, sigma, t, targets,
                                        seeds=seeds, tol_scale=tol_scale,
                                        max_iter=max_iter)
    if not np.any(ok):
        raise FiberSolveError(
            "no start converged; best residual %.3g" % float(np.min(res))
        )
    sols = p1[ok]
    qs = q_end[ok]
    order = np.argsort(np.linalg.norm(sols, axis=-1))
    sols, qs = sols[order], qs[order]
    distinct = [0]
    for i in range(1, sols.shape[0]):
        if all(np.linalg.norm(sols[i] - sols[j]) > 1e-6 * spread
               for j in distinct):
            distinct.append(i)
    if len(distinct) > 1:
        log.info("fiber at %s has %d distinct preimages; keeping smallest",
                 np.array2string(p_target, precision=4), len(distinct))
    return sols[0], qs[0]


def transform(sys, f, sigma, t_step=1.0, tol_scale=1e-8, max_iter=60):
    """One graph-transform step: push sigma through the flow for t_step."""
    if t_step <= 0:
        raise ConfigError("t_step must be positive")
    nodes = sigma.node_matrix()
    _target_window_check(sys, f, sigma, t_step, nodes)
    p1, q_end, res, ok = _solve_targets(sys, f, sigma, t_step, nodes,
                                        tol_scale=tol_scale,
                                        max_iter=max_iter)
    if not np.all(ok):
        bad = int(np.argmax(~ok))
        raise FiberSolveError(
            "fiber solve failed at node %d (p = %s), residual %.3g"
            % (bad, np.array2string(nodes[bad], precision=4),
               float(res[bad]))
        )
    new_values = q_end.reshape(sigma.shape + (sigma.m,))
    return GraphFn(sigma.box, new_values)


def iterate_to_limit(sys, f, sigma0, t_step=1.0, tol=1e-6, max_iter=200,
                     cone=None):
    """Iterate the transform until the sup change drops below tol.

    Requires the contraction regime: M = 1 and l_f (1 + 1/kappa) < gamma2.
    Returns (limit graph, info) where info carries the sup-change ladder,
    the fitted decay rate of that ladder, and the kappa_hat history.
    """
    from .absorbing import dichotomy_for

    con = dichotomy_for(sys)
    if cone is None:
        cone = ConeParameters(1.0)
    if con.m_const > 1.0 + 1e-9:
        raise ConfigError(
            "graph iteration is certified only at M = 1; measured M = %.6g"
            % con.m_const
        )
    l_f = f.l_f if f.l_f is not None else 0.0
    delta = cone.attraction_delta(l_f, con)
    if delta <= 0:
        raise ConfigError(
            "attraction rate gamma2 - l_f (1 + 1/kappa) = %.4g is not "
            "positive; iteration is not certified to contract" % delta
        )
    sigma = sigma0
    sups = []
    kappas = [sigma.kappa_hat()]
    for it in range(max_iter):
        nxt = transform(sys, f, sigma, t_step)
        d = nxt.diff_sup(sigma)
        sups.append(d)
        kappas.append(nxt.kappa_hat())
        sigma = nxt
        if d <= tol:
            break
        if len(sups) > 12 and sups[-1] > 0.98 * sups[-11]:
            raise NonContractionError(
                "sup changes stagnated near %.3g after %d steps"
                % (sups[-1], it + 1)
            )
    else:
        raise NonContractionError(
            "no convergence to %.3g within %d steps (last change %.3g)"
            % (tol, max_iter, sups[-1])
        )
    delta_hat = None
    usable = [(k * t_step, np.log(s)) for k, s in enumerate(sups)
              if s > 1e-13]
    if len(usable) >= 3:
        xs, ys = np.array(usable).T
        delta_hat = -float(np.polyfit(xs, ys, 1)[0])
    info = {
        "sup_history": sups,
        "kappa_history": kappas,
        "delta": delta,
        "delta_hat": delta_hat,
        "iterations": len(sups),
    }
    return sigma, info


def check_cone_invariance(sys, f, kappa, n_pairs=1000, seed=0, t=1.0,
                          radius=3.0, probes=8):
    """Sampled check that the difference cone ||dq|| <= kappa ||dp|| is
    forward invariant.

    Pairs start inside the cone; a violation is any stored probe where
    the ratio exceeds kappa beyond rounding.  Returns counts and the
    worst witnesses so falsification runs can be recorded without
    asserting.
    """
    rng = np.random.default_rng(seed)
    n, m = sys.n_plus, sys.m
    p_base = rng.uniform(-radius, radius, size=(n_pairs, n))
    q_base = rng.uniform(-radius, radius, size=(n_pairs, m))
    dp = rng.standard_normal((n_pairs, n))
    dp /= np.linalg.norm(dp, axis=-1, keepdims=True)
    dp *= rng.uniform(0.01, 1.0, size=(n_pairs, 1))
    dq_dir = rng.standard_normal((n_pairs, m))
    dq_dir /= np.linalg.norm(dq_dir, axis=-1, keepdims=True)
    ratio0 = rng.uniform(0.0, 1.0, size=(n_pairs, 1))
    dq = dq_dir * ratio0 * kappa * np.linalg.norm(dp, axis=-1,
                                                  keepdims=True)
    p0 = np.concatenate([p_base, p_base + dp], axis=0)
    q0 = np.concatenate([q_base, q_base + dq], axis=0)
    steps = max(probes * 4, int(np.ceil(t / 0.02)))
    traj = integrate(sys, f, (p0, q0), (0.0, t), dt=t / steps,
                     check_envelopes=False,
                     store_every=max(1, steps // probes))
    dps = traj.p_states[:, n_pairs:] - traj.p_states[:, :n_pairs]
    dqs = traj.q_states[:, n_pairs:] - traj.q_states[:, :n_pairs]
    gap = np.linalg.norm(np.abs(dqs), axis=-1) \
        - kappa * np.linalg.norm(dps, axis=-1)
    worst_per_pair = np.max(gap[1:], axis=0)
    violated = worst_per_pair > 1e-9 * (1.0 + kappa)
    order = np.argsort(worst_per_pair)[::-1]
    witnesses = [
        {"pair": int(i), "excess": float(worst_per_pair[i])}
        for i in order[:5] if violated[i]
    ]
    return {
        "violations": int(np.count_nonzero(violated)),
        "pairs": int(n_pairs),
        "max_excess": float(np.max(worst_per_pair)),
        "witnesses": witnesses,
    }


def attraction_rate(sys, f, sigma, samples, horizon, dt=0.01, burn_in=0.2):
    """Fitted decay rate of the gap ||q(t) - sigma(p(t))|| toward the graph.

    The fit is log-linear on the per-probe worst gap, skipping an
    initial burn-in fraction and any probe at the numerical floor.
    """
    traj = integrate(sys, f, samples, (0.0, horizon), dt=dt,
                     check_envelopes=False,
                     store_every=max(1, int(round(0.05 / dt))))
    sig = (_graph_q(sys, None, traj.p_states) if sigma is None
           else sigma.eval(traj.p_states))
    gap = np.linalg.norm(np.abs(traj.q_states - sig), axis=-1)
    if gap.ndim > 1:
        gap = np.max(gap, axis=tuple(range(1, gap.ndim)))
    keep = (traj.times >= burn_in * horizon) & (gap > 1e-12)
    if np.count_nonzero(keep) < 5:
        raise ConfigError("not enough usable probes above the floor")
    slope = np.polyfit(traj.times[keep], np.log(gap[keep]), 1)[0]
    return -float(slope)
