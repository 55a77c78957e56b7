"""Absorbing sets, the nested family H_R, and limit-set estimation.

The strip Q = {||q|| <= D2} absorbs every bounded set; inside it the
quadratic form p^T N p grows strictly once ||p|| clears the certified
radius, which makes the exterior Q \\ H_R positively invariant.  That
one-way membership is what turns the trichotomy (escape / capture /
straddle) into something decidable from finitely many probes.

Sets are finite sample clouds plus a bounding radius; set-level claims
become sampled certificates with explicit counts.
"""

from collections import namedtuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, InconclusiveError
from .operator_core import estimate_dichotomy, solve_lyapunov
from .semiflow import integrate

AbsorbingStrip = namedtuple("AbsorbingStrip", ["d1_level", "d2_level"])

SetClassification = namedtuple(
    "SetClassification", ["verdict", "witness_time", "evidence"]
)

_dichotomy_by_system = {}


def dichotomy_for(sys):
    """Fitted dichotomy constants, memoised per system."""
    key = sys.cache_key()
    if key not in _dichotomy_by_system:
        _dichotomy_by_system[key] = estimate_dichotomy(sys)
    return _dichotomy_by_system[key]


class NestedFamily:
    """H_R = Q cap {p^T N p <= d1^2 R^2} for R >= r0, with S(R) = (d1/d2) R.

    The strip membership test uses the computable surrogate
    {||q|| <= d2_level} for Q; after absorption the two agree.
    """

    def __init__(self, cert, strip, sys):
        self.cert = cert
        self.strip = strip
        self.sys = sys
        self.r0 = cert.r0
        self.r1 = cert.r1
        self._n = np.asarray(cert.n_matrix)

    def level(self, radius):
        return self.cert.d1 ** 2 * radius ** 2

    def s_of_r(self, radius):
        return (self.cert.d1 / self.cert.d2) * radius

    def quad(self, p):
        p = np.asarray(p, dtype=float)
        return np.einsum("...i,ij,...j->...", p, self._n, p)

    def in_strip(self, q, slack=1e-9):
        return self.sys.norm_minus(q) <= self.strip.d2_level + slack

    def in_h_r(self, p, q, radius, slack=1e-9):
        return self.in_strip(q, slack) & (self.quad(p) <= self.level(radius))


def build_family(sys, f, cert=None):
    """Absorbing strip plus nested family certified for this nonlinearity.

    D1 = M c_f / gamma2 + 1, D2 = M D1; the Lyapunov radii are rebuilt
    from f's bound so a certificate computed with a placeholder c_f
    cannot leak through.
    """
    if f.c_f is None:
        raise ConfigError(
            "absorbing structures need a global bound c_f; %r has none"
            % f.name
        )
    con = dichotomy_for(sys)
    d1_level = con.m_const * f.c_f / con.gamma2 + 1.0
    d2_level = con.m_const * d1_level
    strip = AbsorbingStrip(d1_level, d2_level)
    if cert is None or cert.r0 != 2.0 * cert.c2 ** 2 * f.c_f * np.linalg.norm(
        np.asarray(cert.n_matrix), 2
    ) / cert.c1 ** 2 + 1.0:
        cert = solve_lyapunov(sys, c_f=f.c_f)
    return strip, NestedFamily(cert, strip, sys)


def ball_samples(center_p, center_q, radius, count, seed=0,
                 include_center=True, min_fraction=0.05):
    """Deterministic sample cloud of a ball, optionally with its center.

    Samples closer to the center than min_fraction*radius are pushed out
    to that floor so escape times stay bounded; the exact center (when
    included) is the only interior exception.
    """
    center_p = np.atleast_1d(np.asarray(center_p, dtype=float))
    center_q = np.atleast_1d(np.asarray(center_q, dtype=float))
    n, m = center_p.size, center_q.size
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(count, n + m))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    radii = radius * rng.uniform(min_fraction, 1.0, size=(count, 1)) ** (
        1.0 / (n + m)
    )
    cloud = raw * radii
    p = center_p + cloud[:, :n]
    q = center_q + cloud[:, n:]
    if include_center:
        p = np.vstack([center_p[None, :], p])
        q = np.vstack([center_q[None, :], q])
    return p, q


def _absorption_bound(con, q_norm_max, d1_level):
    """Analytic entry time into {||q|| <= d1_level} from the q-envelope."""
    margin = max(q_norm_max * con.m_const - (d1_level - 1.0), 1e-12)
    return max(np.log(margin) / con.gamma2, 0.0) + 1.0


def classify(sys, f, samples, horizon, family, radius=None, dt=0.01,
             probes=64):
    """Trichotomy verdict for a sampled bounded set.

    samples = (p0, q0) arrays with at least 10 points.  radius defaults
    to r1.  Membership in H_radius is probed on a uniform schedule; the
    exterior is positively invariant, so an exit is terminal, while the
    Captured/Straddling split is read off the settled tail of the probe
    history.  A tail that is still flipping, or samples that have not
    entered the strip, raise InconclusiveError rather than guessing.
    """
    p0 = np.atleast_2d(np.asarray(samples[0], dtype=float))
    q0 = np.atleast_2d(np.asarray(samples[1]))
    if p0.shape[0] < 10:
        raise ConfigError("need at least 10 sample points, got %d" % p0.shape[0])
    if radius is None:
        radius = family.r1
    if radius < family.r0:
        raise ConfigError("radius %.6g below certified r0 %.6g"
                          % (radius, family.r0))
    con = dichotomy_for(sys)
    q_max = float(np.max(np.linalg.norm(np.abs(q0), axis=-1)))
    t_absorb = _absorption_bound(con, q_max, family.strip.d1_level)
    if horizon < t_absorb:
        raise ConfigError(
            "horizon %.3g below absorption estimate %.3g" % (horizon, t_absorb)
        )

    store_every = max(1, int(round(horizon / dt / probes)))
    traj = integrate(sys, f, (p0, q0), (0.0, horizon), dt=dt,
                     store_every=store_every, check_envelopes=False)
    in_strip = family.in_strip(traj.q_states)
    member = family.in_h_r(traj.p_states, traj.q_states, radius)

    if not np.all(in_strip[-1]):
        raise InconclusiveError(
            "some samples have not entered the absorbing strip by the horizon"
        )
    absorbed_at = np.argmax(np.cumsum(in_strip[::-1], axis=0)[::-1]
                            == np.arange(in_strip.shape[0], 0, -1)[:, None],
                            axis=0)
    t_settle_idx = int(np.max(absorbed_at))

    # the exterior of H_R inside the strip is positively invariant: once a
    # sample is out after absorption, it must stay out
    post = member[t_settle_idx:]
    out_ever = np.logical_not(post).cumsum(axis=0) > 0
    returned = post & out_ever
    if np.any(returned & in_strip[t_settle_idx:]):
        raise InconclusiveError(
            "a sample re-entered H_R after leaving it; certificate violated "
            "or probes too sparse"
        )

    tail = member[-max(2, member.shape[0] // 4):]
    if np.any(tail != tail[-1]):
        raise InconclusiveError(
            "membership still changing in the trailing window; extend the "
            "horizon"
        )

    final_in = member[-1]
    n_in = int(np.count_nonzero(final_in))
    n_out = final_in.size - n_in
    if n_out == 0:
        verdict = "Captured"
    elif n_in == 0:
        verdict = "Escaping"
    else:
        verdict = "Straddling"

    # earliest probe from which every membership already equals its final value
    stable_from = member.shape[0] - 1
    while stable_from > t_settle_idx and np.all(
        member[stable_from - 1] == final_in
    ):
        stable_from -= 1
    evidence = {
        "in_count": n_in,
        "out_count": n_out,
        "radius": float(radius),
        "probe_times": traj.times.tolist(),
        "absorbed_by": float(traj.times[t_settle_idx]),
    }
    return SetClassification(verdict, float(traj.times[stable_from]), evidence)


OmegaCloud = namedtuple("OmegaCloud", ["points_p", "points_q", "empty",
                                       "source_verdict"])


def default_merge_eps(family):
    """1e-3 times the diameter of H_{r0} in the full state metric."""
    diam = 2.0 * (family.cert.d2 / family.cert.d1) * family.r0 \
        + 2.0 * family.strip.d2_level
    return 1e-3 * diam


def _cluster(points, merge_eps):
    """Single-linkage merge: connected components of the eps-proximity graph."""
    if points.shape[0] == 0:
        return np.zeros(0, dtype=int)
    tree = cKDTree(points)
    pairs = tree.query_pairs(merge_eps, output_type="ndarray")
    parent = np.arange(points.shape[0])

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return np.array([find(i) for i in range(points.shape[0])])


def _embed(p, q):
    q = np.asarray(q)
    if np.iscomplexobj(q):
        return np.concatenate([p, q.real, q.imag], axis=-1)
    return np.concatenate([p, q], axis=-1)


def _thin(emb, p_all, q_all, labels, merge_eps):
    """One representative per merge_eps-ball, cluster by cluster.

    A cluster can be an extended continuum (single linkage chains along
    it), so it is thinned to a greedy eps-net of its own points rather
    than collapsed to a centroid, which could land off the set.
    """
    reps_p, reps_q = [], []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        kept = []
        for i in idx:
            if all(np.linalg.norm(emb[i] - emb[j]) > merge_eps for j in kept):
                kept.append(i)
        reps_p.extend(p_all[kept])
        reps_q.extend(q_all[kept])
    return np.array(reps_p), np.array(reps_q)


def omega_limit(sys, f, samples, horizon, family, snapshot_times=None,
                merge_eps=None, radius=None, dt=0.01):
    """Cluster-merged late-time snapshots of the sampled set.

    Escaping sets give the empty cloud with an explicit marker.  For
    Straddling sets the cloud is restricted to the window ||p|| <= radius,
    which is the only region where attraction is asserted.  family=None
    skips classification and windowing (for systems without a quadratic
    certificate); merge_eps is then required.
    """
    verdict = None
    if family is not None:
        if merge_eps is None:
            merge_eps = default_merge_eps(family)
        if radius is None:
            radius = family.r1
        try:
            verdict = classify(sys, f, samples, horizon, family,
                               radius=radius, dt=dt).verdict
        except InconclusiveError:
            verdict = "Straddling"
    elif merge_eps is None:
        raise ConfigError("merge_eps is required when no family is given")
    if verdict == "Escaping":
        n, m = sys.n_plus, sys.m
        return OmegaCloud(np.zeros((0, n)), np.zeros((0, m)), True, verdict)

    if snapshot_times is None:
        snapshot_times = np.linspace(0.75 * horizon, horizon, 9)
    snapshot_times = np.asarray(snapshot_times, dtype=float)

    store_every = max(1, int(round(0.05 / dt)))
    traj = integrate(sys, f, samples, (0.0, horizon), dt=dt,
                     store_every=store_every, check_envelopes=False)
    collected_p = []
    collected_q = []
    for t_snap in snapshot_times:
        i = int(np.argmin(np.abs(traj.times - t_snap)))
        collected_p.append(traj.p_states[i])
        collected_q.append(traj.q_states[i])
    p_all = np.concatenate(collected_p, axis=0)
    q_all = np.concatenate(collected_q, axis=0)
    if radius is not None:
        keep = sys.norm_plus(p_all) <= radius + 1e-9
        p_all, q_all = p_all[keep], q_all[keep]

    emb = _embed(p_all, q_all)
    labels = _cluster(emb, merge_eps)
    reps_p, reps_q = _thin(emb, p_all, q_all, labels, merge_eps)
    return OmegaCloud(reps_p, reps_q, reps_p.shape[0] == 0, verdict)


def alpha_limit_on_attractor(sys, f, sigma, points_p, backward_horizon,
                             t_step=1.0, merge_eps=1e-2):
    """Alpha-limit of attractor points via iterated fiber preimages.

    points_p are E+ coordinates of points on the graph sigma; each
    backward step solves the fiber problem at time t_step.  The cloud is
    the clustered union of the last half of the backward snapshots, and
    the list of Hausdorff distances between consecutive snapshots is
    returned as a convergence diagnostic.
    """
    from .graph_transform import fiber_solve

    p_now = np.atleast_2d(np.asarray(points_p, dtype=float))
    n_steps = max(1, int(round(backward_horizon / t_step)))
    snaps = [p_now]
    for _ in range(n_steps):
        prev = []
        for p_target in p_now:
            p1, _q = fiber_solve(sys, f, sigma, t_step, p_target)
            prev.append(p1)
        p_now = np.array(prev)
        snaps.append(p_now)

    haus = []
    for a, b in zip(snaps[:-1], snaps[1:]):
        d_ab = max(
            float(np.max(np.min(np.linalg.norm(a[:, None] - b[None], axis=-1),
                                axis=1))),
            float(np.max(np.min(np.linalg.norm(b[:, None] - a[None], axis=-1),
                                axis=1))),
        )
        haus.append(d_ab)

    late = snaps[len(snaps) // 2:]
    p_all = np.concatenate(late, axis=0)
    q_all = sigma.eval(p_all) if sigma is not None else np.zeros(
        (p_all.shape[0], sys.m)
    )
    emb = _embed(p_all, q_all)
    labels = _cluster(emb, merge_eps)
    reps_p, reps_q = _thin(emb, p_all, q_all, labels, merge_eps)
    return OmegaCloud(reps_p, reps_q, False, None), haus
