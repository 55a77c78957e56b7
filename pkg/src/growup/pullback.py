"""Pullback sections and omega-limits for time-dependent forcing.

With the linear part fixed and only f depending on time, the solution
operator becomes a two-parameter process S(t, s).  The attractor section
at time t is reconstructed by pulling grid fibers back along a ladder of
start times and letting the values converge; its bounded core is the
subset whose forward orbits never leave a fixed sublevel set, and the
two omega-limit universes differ in what they demand of the moving
family being evolved (backward boundedness versus strip capture).
"""

import logging
from collections import namedtuple

import numpy as np
from scipy.linalg import expm
from scipy.spatial import cKDTree

from .errors import ConfigError, FiberSolveError, InconclusiveError
from .absorbing import build_family, dichotomy_for, _cluster, _embed
from .graph_transform import GraphFn, symmetric_box
from .semiflow import NonlinearityModel, integrate_process

log = logging.getLogger("growup")


CoreCloud = namedtuple("CoreCloud", ["points_p", "points_q", "empty"])

PullbackCloud = namedtuple("PullbackCloud", ["points_p", "points_q",
                                             "empty", "universe"])


class ProcessModel(NonlinearityModel):
    """Time-dependent forcing whose certificates hold uniformly in t.

    Same calling convention and certificate fields as the autonomous
    model; the separate type records that c_f and l_f were certified
    over all times, which every pullback routine below relies on.
    """


def modulated_process(f, b, b_bound, name=None):
    """Process b(t) * f(u) from an autonomous field and a bounded gain."""
    if b_bound <= 0:
        raise ConfigError("need a positive bound on the gain, got %r"
                          % b_bound)

    def fn(t, p, q):
        fp, fq = f(t, p, q)
        scale = b(t)
        return scale * fp, scale * fq

    c_f = None if f.c_f is None else abs(b_bound) * f.c_f
    l_f = None if f.l_f is None else abs(b_bound) * f.l_f
    return ProcessModel(fn, c_f=c_f, l_f=l_f,
                        name=name or ("modulated(%s)" % f.name))


class NonAutonomousSetFamily:
    """Moving bounded set B(t), sampled, defined for t <= t_max.

    universe "tilde" declares the union of all samples bounded by
    `bound`; universe "hat" declares that evolved samples are captured
    by the strip sublevel H_{r_level} before the evaluation time.
    """

    def __init__(self, sampler, t_max, universe, bound=None, r_level=None,
                 name="family"):
        if universe not in ("tilde", "hat"):
            raise ConfigError("universe must be 'tilde' or 'hat', got %r"
                              % (universe,))
        if universe == "tilde" and bound is None:
            raise ConfigError("the tilde universe needs a declared bound "
                              "on the union of samples")
        if universe == "hat" and r_level is None:
            raise ConfigError("the hat universe needs the capture level "
                              "r_level")
        self.sampler = sampler
        self.t_max = float(t_max)
        self.universe = universe
        self.bound = bound
        self.r_level = r_level
        self.name = name

    def sample(self, s):
        if s > self.t_max + 1e-12:
            raise ConfigError("family %r is only defined for t <= %g, "
                              "asked at %g" % (self.name, self.t_max, s))
        p, q = self.sampler(s)
        return np.atleast_2d(np.asarray(p, dtype=float)), np.atleast_2d(q)


def default_ladder(t):
    return [t - 1.0, t - 2.0, t - 4.0, t - 8.0, t - 16.0]


def _pullback_solve(sys, proc, targets, s, t, dt):
    """Starting fast states at time s whose images at time t hit `targets`.

    Newton iteration on the residual pulled back by exp(-A (t-s)); in
    those coordinates the Jacobian stays O(1) however deep the ladder
    goes, and the subtraction happens before the exponential blow-up can
    eat the mantissa.  Returns the solved starts and the full landing
    states.
    """
    a = np.asarray(sys.a_plus, dtype=float)
    span = t - s
    eback = expm(-a * span)
    n_nodes = targets.shape[0]
    p1 = targets @ eback.T
    # natural scale of a pulled-back fast state
    czero = np.linalg.norm(eback, 2) * (1.0 + np.linalg.norm(targets,
                                                             axis=-1))
    q0 = np.zeros((n_nodes, sys.m))

    def land(p_start):
        traj = integrate_process(sys, proc, (p_start, q0), s, t, dt,
                                 check_envelopes=False, store_every=10 ** 9)
        return traj.final()

    p_t = q_t = None
    for _ in range(50):
        p_t, q_t = land(p1)
        res = (p_t - targets) @ eback.T
        rnorm = np.linalg.norm(res, axis=-1)
        if np.all(rnorm <= 1e-9 * (1.0 + czero)):
            return p1, p_t, q_t
        jac = np.empty((n_nodes, sys.n_plus, sys.n_plus))
        for j in range(sys.n_plus):
            dz = 1e-6 * (np.abs(p1[:, j]) + czero)
            pj = p1.copy()
            pj[:, j] += dz
            res_j = (land(pj)[0] - targets) @ eback.T
            jac[:, :, j] = (res_j - res) / dz[:, None]
        step = np.linalg.solve(jac, res[..., None])[..., 0]
        # clamp runaway first steps; the problem is near-affine so this
        # only ever triggers far from the solution
        lens = np.linalg.norm(step, axis=-1)
        cap = 10.0 * (czero + np.linalg.norm(p1, axis=-1))
        factor = np.minimum(1.0, cap / np.maximum(lens, 1e-300))
        p1 = p1 - step * factor[:, None]
    bad = int(np.sum(np.linalg.norm((p_t - targets) @ eback.T, axis=-1)
                     > 1e-9 * (1.0 + czero)))
    raise FiberSolveError("pullback solve from s = %g did not converge "
                          "at %d of %d nodes" % (s, bad, n_nodes))


def pullback_section(sys, proc, t, s_ladder=None, grid=None, tol=1e-4,
                     dt=0.01):
    """Attractor section at time t as a graph over the fast subspace.

    Each grid fiber is the landing value of an orbit started on the
    strip centerline at ladder time s and steered to pass through the
    node at time t; successive ladder depths must agree within tol
    (a Cauchy stop, not a fixed depth), and the first agreeing value is
    kept.  Deeper starts cost exp((t-s) gamma) in dynamic range, so the
    ladder should not go far below what tol actually needs.
    """
    if proc.c_f is None:
        raise ConfigError("pullback sections need a certified bound c_f")
    con = dichotomy_for(sys)
    if s_ladder is None:
        s_ladder = default_ladder(t)
    s_ladder = [float(s) for s in s_ladder]
    if len(s_ladder) < 2:
        raise ConfigError("need at least two ladder depths for a Cauchy "
                          "stop")
    if any(s >= t for s in s_ladder) or \
            any(b >= a for a, b in zip(s_ladder, s_ladder[1:])):
        raise ConfigError("s_ladder must decrease strictly below t")
    if grid is None:
        half = 4.0 * max(1.0, con.m_const * proc.c_f / con.gamma2)
        grid = GraphFn.constant(symmetric_box([half] * sys.n_plus),
                                (17,) * sys.n_plus, np.zeros(sys.m))
    nodes = grid.node_matrix()

    vals_prev = None
    settled = np.zeros(nodes.shape[0], dtype=bool)
    vals = None
    gap = None
    for s in s_ladder:
        _, _, q_t = _pullback_solve(sys, proc, nodes, s, t, dt)
        if vals is None:
            vals = q_t
        else:
            gap = np.linalg.norm(q_t - vals_prev, axis=-1)
            newly = ~settled & (gap <= tol)
            vals[~settled] = q_t[~settled]
            settled = settled | newly
            if np.all(settled):
                break
        vals_prev = q_t
    if not np.all(settled):
        worst = float(np.max(gap[~settled]))
        raise InconclusiveError(
            "fiber values did not go Cauchy along the ladder at %d nodes "
            "(last gap %.3g > tol %.3g); extend s_ladder"
            % (int(np.sum(~settled)), worst, tol))
    if np.iscomplexobj(vals) and np.max(np.abs(vals.imag)) < 1e-12:
        vals = vals.real
    shape = grid.values.shape[:-1]
    return GraphFn(grid.box, vals.reshape(shape + (sys.m,)))


def bounded_core_section(sys, proc, t, r_level, forward_horizon, section,
                         dt=0.01):
    """Points of the section whose forward orbits stay in H_{r_level}.

    An empty answer at a horizon long enough for several decay times is
    not expected (the core of a complete section is nonempty) and is
    logged as a suspected numerical artifact rather than raised.
    """
    _, fam = build_family(sys, proc)
    nodes = section.node_matrix()
    qv = section.eval(nodes)
    store_every = max(1, int(round(0.05 / dt)))
    traj = integrate_process(sys, proc, (nodes, qv), t, t + forward_horizon,
                             dt, check_envelopes=False,
                             store_every=store_every)
    member = fam.in_h_r(traj.p_states, traj.q_states, r_level)
    stays = np.all(member, axis=0)
    empty = not bool(np.any(stays))
    if empty and forward_horizon >= 3.0 / dichotomy_for(sys).gamma2:
        log.warning("bounded core came out empty at forward horizon %.3g; "
                    "a complete section has a nonempty core, so this "
                    "looks like a grid or level artifact", forward_horizon)
    return CoreCloud(nodes[stays], qv[stays], empty)


def _thin_points(emb, merge_eps):
    labels = _cluster(emb, merge_eps)
    kept = []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        for i in idx:
            if all(np.linalg.norm(emb[i] - emb[j]) > merge_eps
                   for j in kept):
                kept.append(i)
    return np.array(kept, dtype=int)


def _hausdorff(emb_a, emb_b):
    d_ab, _ = cKDTree(emb_b).query(emb_a)
    d_ba, _ = cKDTree(emb_a).query(emb_b)
    return float(max(np.max(d_ab), np.max(d_ba)))


def pullback_omega(sys, proc, t, family, s_ladder=None, merge_eps=1e-2,
                   dt=0.01):
    """Limit cloud of the family's images at time t, pulled from the ladder.

    Each ladder time contributes the evolved sample cloud; the answer is
    the first cloud whose predecessor already agreed with it within
    merge_eps in Hausdorff distance.  Universe preconditions are checked
    on every ladder sample: tilde families must honor their declared
    bound, hat families must be captured by H_{r_level} before t.
    """
    if s_ladder is None:
        s_ladder = default_ladder(t)
    s_ladder = [float(s) for s in s_ladder]
    if any(s >= t for s in s_ladder) or \
            any(b >= a for a, b in zip(s_ladder, s_ladder[1:])):
        raise ConfigError("s_ladder must decrease strictly below t")
    _, nested = build_family(sys, proc)
    store_every = max(1, int(round(0.05 / dt)))

    prev = None
    last_gap = np.inf
    for s in s_ladder:
        p0, q0 = family.sample(s)
        if family.universe == "tilde":
            norms = np.linalg.norm(_embed(p0, q0), axis=-1)
            if np.any(norms > family.bound + 1e-9):
                raise ConfigError(
                    "tilde universe violated: sample at s = %g has norm "
                    "%.4g > declared bound %.4g"
                    % (s, float(np.max(norms)), family.bound))
        traj = integrate_process(sys, proc, (p0, q0), s, t, dt,
                                 check_envelopes=False,
                                 store_every=store_every)
        if family.universe == "hat":
            member = nested.in_h_r(traj.p_states, traj.q_states,
                                   family.r_level)
            if not np.all(np.any(member, axis=0)):
                raise ConfigError(
                    "hat universe violated: a sample from s = %g is never "
                    "captured by H_%.3g before t" % (s, family.r_level))
        p_t, q_t = traj.final()
        emb = _embed(p_t, q_t)
        keep = _thin_points(emb, merge_eps)
        cloud = (p_t[keep], q_t[keep], emb[keep])
        if prev is not None:
            last_gap = _hausdorff(prev[2], cloud[2])
            if last_gap <= merge_eps:
                return PullbackCloud(cloud[0], cloud[1],
                                     cloud[0].size == 0, family.universe)
        prev = cloud
    raise InconclusiveError(
        "pullback images did not stabilize along the ladder "
        "(last Hausdorff gap %.3g > merge_eps %.3g)" % (last_gap, merge_eps))
