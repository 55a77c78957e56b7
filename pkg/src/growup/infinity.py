"""Direction dynamics of escaping orbits.

Once an orbit has entered the grow-up regime its fast component never
vanishes again, so the normalized direction x(t) = Pu(t)/||Pu(t)|| is
well defined for all later times and obeys

    x' = Ax - (Ax, x)x + g(t),

a projected linear flow on the unit sphere of the fast subspace driven
by a forcing g that the growth of ||Pu|| kills off exponentially.  This
module recovers sphere paths from simulated orbits and cross-checks
them against that equation, iterates the undriven limit flow, clusters
the late-time directions of escaping sets, and predicts the limit
structure from the spectrum of the fast block alone.
"""

import logging
from collections import namedtuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError
from .absorbing import classify, dichotomy_for, _cluster
from .semiflow import integrate

log = logging.getLogger("growup")


SpherePath = namedtuple("SpherePath", [
    "times", "x", "x_ode", "g", "agreement", "norm_dev", "c_b",
    "envelope_rate"])

InfinityCloud = namedtuple("InfinityCloud", ["points", "source_verdict"])


def _sphere_field(a, y, g):
    ay = a @ y
    return ay - (ay @ y) * y + g


def sphere_flow(sys, f, driving):
    """Sphere path of one driving orbit, recomputed two independent ways.

    The direct route normalizes the stored fast states.  The second
    route reads the forcing g(t) off the orbit and re-integrates the
    sphere equation from the initial direction; the maximum gap between
    the two paths is reported as `agreement`.  `norm_dev` is the largest
    per-step drift off the sphere before renormalization, `c_b` the
    measured infimum of exp(-gamma1 t)||Pu(t)||, and `envelope_rate` the
    fitted decay exponent of ||g|| (None when g is identically zero).

    The orbit must stay in the grow-up regime ||Pu|| > M c_f / gamma1
    for the whole stored window, which requires a certified bound c_f.
    """
    if f.c_f is None:
        raise ConfigError("sphere flow needs a certified bound c_f")
    con = dichotomy_for(sys)
    p = np.asarray(driving.p_states, dtype=float)
    q = driving.q_states
    if p.ndim == 3:
        if p.shape[1] != 1:
            raise ConfigError("sphere flow takes one driving orbit, got a "
                              "batch of %d" % p.shape[1])
        p = p[:, 0]
        q = q[:, 0]
    if p.ndim != 2 or p.shape[0] < 2:
        raise ConfigError("driving trajectory must store at least 2 states")
    times = np.asarray(driving.times, dtype=float)
    ts = times - times[0]

    threshold = con.m_const * f.c_f / con.gamma1
    norms = np.linalg.norm(p, axis=-1)
    bad = np.flatnonzero(norms <= threshold)
    if bad.size:
        raise ConfigError(
            "driving orbit is outside the grow-up regime at t = %.6g "
            "(||Pu|| = %.4g <= M c_f / gamma1 = %.4g)"
            % (times[bad[0]], norms[bad[0]], threshold))

    x = p / norms[:, None]
    a = sys.a_plus
    g = np.empty_like(x)
    for k in range(len(times)):
        fp = np.asarray(f(times[k], p[k], q[k])[0], dtype=float)
        g[k] = (fp - (x[k] @ fp) * x[k]) / norms[k]
    g_norms = np.linalg.norm(g, axis=-1)

    c_b = float(np.min(np.exp(-con.gamma1 * ts) * norms))
    envelope = (2.0 * f.c_f / c_b) * np.exp(-con.gamma1 * ts)
    slack = np.max(g_norms - envelope)
    if slack > 1e-9 * max(1.0, f.c_f):
        log.warning("measured forcing exceeds its envelope by %.3g; the "
                    "certified bound c_f may be understated", slack)

    # re-integrate the sphere equation from the same initial direction;
    # classic RK4 with the forcing averaged at the half step
    y = x[0].copy()
    x_ode = np.empty_like(x)
    x_ode[0] = y
    norm_dev = 0.0
    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        gm = 0.5 * (g[k] + g[k + 1])
        k1 = _sphere_field(a, y, g[k])
        k2 = _sphere_field(a, y + 0.5 * h * k1, gm)
        k3 = _sphere_field(a, y + 0.5 * h * k2, gm)
        k4 = _sphere_field(a, y + h * k3, g[k + 1])
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        nn = np.linalg.norm(y)
        norm_dev = max(norm_dev, abs(nn - 1.0))
        y = y / nn
        x_ode[k + 1] = y
    agreement = float(np.max(np.linalg.norm(x - x_ode, axis=-1)))

    envelope_rate = None
    g_max = float(g_norms.max(initial=0.0))
    if g_max > 1e-14:
        usable = g_norms > 1e-13 * max(1.0, g_max)
        if int(usable.sum()) >= 3:
            slope = np.polyfit(ts[usable], np.log(g_norms[usable]), 1)[0]
            envelope_rate = float(-slope)
    return SpherePath(times, x, x_ode, g, agreement, float(norm_dev),
                      c_b, envelope_rate)


def limit_flow_step(a_plus, y, dt):
    """One renormalized RK4 step of x' = Ax - (Ax, x)x from a unit vector."""
    a = np.asarray(a_plus, dtype=float)
    y = np.asarray(y, dtype=float)
    if abs(np.linalg.norm(y) - 1.0) > 1e-6:
        raise ConfigError("limit flow is defined on the unit sphere, "
                          "got ||y|| = %.6g" % np.linalg.norm(y))
    zero = np.zeros_like(y)
    k1 = _sphere_field(a, y, zero)
    k2 = _sphere_field(a, y + 0.5 * dt * k1, zero)
    k3 = _sphere_field(a, y + 0.5 * dt * k2, zero)
    k4 = _sphere_field(a, y + dt * k3, zero)
    y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y / np.linalg.norm(y)


def limit_flow(a_plus, y, horizon, dt=1e-3):
    """Limit flow endpoint after `horizon` time units."""
    n_steps = int(np.floor(horizon / dt + 1e-9))
    for _ in range(n_steps):
        y = limit_flow_step(a_plus, y, dt)
    rest = horizon - n_steps * dt
    if rest > 1e-12:
        y = limit_flow_step(a_plus, y, rest)
    return y


def _limit_flow_batch(a, pts, horizon, dt):
    # vectorized twin of limit_flow for many start directions at once
    a = np.asarray(a, dtype=float)
    y = np.asarray(pts, dtype=float).copy()
    n_steps = int(np.floor(horizon / dt + 1e-9))
    steps = [dt] * n_steps
    rest = horizon - n_steps * dt
    if rest > 1e-12:
        steps.append(rest)

    def field(v):
        av = v @ a.T
        return av - np.sum(av * v, axis=-1, keepdims=True) * v

    for h in steps:
        k1 = field(y)
        k2 = field(y + 0.5 * h * k1)
        k3 = field(y + 0.5 * h * k2)
        k4 = field(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        y = y / np.linalg.norm(y, axis=-1, keepdims=True)
    return y


def limit_invariance_defect(a_plus, points, horizon=0.5, dt=1e-3):
    """Largest distance from the flowed cloud back to the original one."""
    points = np.asarray(points, dtype=float)
    if points.shape[0] == 0:
        return 0.0
    flowed = _limit_flow_batch(a_plus, points, horizon, dt)
    d, _ = cKDTree(points).query(flowed)
    return float(np.max(d))


def omega_infty(sys, f, samples, horizon, family, merge_eps=1e-2, dt=0.01):
    """Merged late-time directions of an escaping sampled set.

    The set is classified first and anything that is not Escaping is
    rejected: directions at infinity only mean something for orbits
    whose fast part actually grows.  Snapshots over the last quarter of
    the run are normalized and thinned to a greedy merge_eps-net, one
    net per proximity cluster.
    """
    cls = classify(sys, f, samples, horizon, family, dt=dt)
    if cls.verdict != "Escaping":
        raise ConfigError("omega at infinity needs an escaping set; "
                          "classification says %s" % cls.verdict)
    store_every = max(1, int(round(0.05 / dt)))
    traj = integrate(sys, f, samples, horizon, dt, store_every=store_every,
                     check_envelopes=False)
    mask = traj.times >= 0.75 * horizon
    p = np.asarray(traj.p_states, dtype=float)[mask]
    p = p.reshape(-1, sys.n_plus)
    norms = np.linalg.norm(p, axis=-1)
    keep = norms > 1e-12
    dirs = p[keep] / norms[keep, None]

    labels = _cluster(dirs, merge_eps)
    reps = []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        kept = []
        for i in idx:
            if all(np.linalg.norm(dirs[i] - dirs[j]) > merge_eps
                   for j in kept):
                kept.append(i)
        reps.extend(dirs[kept])
    return InfinityCloud(np.array(reps), cls.verdict)


def _rank(mat):
    # the cutoff must swallow the cluster width used for the eigenvalues,
    # not just rounding noise, or defective blocks read as full rank
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > 1e-6 * max(1.0, s[0])))


def jordan_prediction(a_plus):
    """Spectral structure report for the limit flow, from the matrix alone.

    Eigenvalues are clustered into groups of equal real part, ordered by
    growth rate; each group is labeled with the invariant set its
    structure forces on the sphere, and connections run from every
    slower group to every faster one.  A badly conditioned eigenvector
    basis is reported (and logged) as suspected defectiveness.
    """
    a = np.asarray(a_plus, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError("need a square matrix, got shape %s" % (a.shape,))
    n = a.shape[0]
    w, v = np.linalg.eig(a)
    cond = float(np.linalg.cond(v))
    defective = bool(cond > 1e8)
    if defective:
        log.warning("eigenvector matrix condition %.3g; nontrivial Jordan "
                    "blocks suspected", cond)
    scale = max(1.0, float(np.linalg.norm(a)))
    tol = 1e-6 * scale

    # distinct eigenvalues with algebraic multiplicities; the cluster
    # width must absorb the sqrt(eps) splitting of defective eigenvalues
    distinct = []
    for lam in w:
        for entry in distinct:
            if abs(lam - entry["value"]) <= tol:
                entry["members"].append(lam)
                break
        else:
            distinct.append({"value": lam, "members": [lam]})
    for entry in distinct:
        lam = np.mean(entry["members"])
        entry["value"] = lam
        entry["alg"] = len(entry["members"])
        b = a.astype(complex) - lam * np.eye(n)
        ranks = [n]
        power = np.eye(n, dtype=complex)
        for _ in range(entry["alg"]):
            power = power @ b
            ranks.append(_rank(power))
        blocks_ge = [ranks[k - 1] - ranks[k] for k in range(1, len(ranks))]
        sizes = []
        for k in range(1, len(blocks_ge) + 1):
            ge_next = blocks_ge[k] if k < len(blocks_ge) else 0
            sizes.extend([k] * (blocks_ge[k - 1] - ge_next))
        entry["sizes"] = sorted(sizes, reverse=True)

    groups = []
    for entry in sorted(distinct, key=lambda e: e["value"].real):
        re = entry["value"].real
        for grp in groups:
            if abs(grp["re"] - re) <= tol:
                grp["entries"].append(entry)
                break
        else:
            groups.append({"re": re, "entries": [entry]})

    out_groups = []
    for grp in groups:
        entries = grp["entries"]
        sizes = sorted((s for e in entries for s in e["sizes"]),
                       reverse=True)
        has_complex = any(abs(e["value"].imag) > tol for e in entries)
        if has_complex:
            label = "rotating circle"
        elif sizes and sizes[0] >= 2:
            label = "parabolic fixed direction"
        elif len(sizes) >= 2:
            label = "fixed sphere"
        else:
            label = "fixed-point pair"
        out_groups.append({
            "re": float(grp["re"]),
            "eigenvalues": [[float(e["value"].real), float(e["value"].imag)]
                            for e in entries],
            "algebraic": [int(e["alg"]) for e in entries],
            "block_sizes": [int(s) for s in sizes],
            "invariant_set": label,
        })
    connections = [[i, j] for i in range(len(out_groups))
                   for j in range(i + 1, len(out_groups))]
    return {"dimension": int(n), "groups": out_groups,
            "connections": connections, "eig_condition": cond,
            "defective": defective}


def ring_coverage(sys, f, radius, horizon, probe_times, net_eps=1e-2,
                  n_samples=None, dt=0.01):
    """Worst covering radius of the evolved ring's direction image.

    A ring of `radius` in the fast subspace is pushed forward and its
    normalized image at each probe time is compared against a reference
    net on the sphere five times finer than net_eps; the return value is
    the largest gap seen.  The projective action of the linear flow is
    a bijection of the sphere, but it compresses preimages of the slow
    directions by exp(-spread t), so the ring sample count grows
    accordingly (and is capped).
    """
    n = sys.n_plus
    if n > 2:
        raise ConfigError("coverage witness is implemented for fast "
                          "dimension 1 or 2, got %d" % n)
    probes = np.atleast_1d(np.asarray(probe_times, dtype=float))
    if probes.size == 0 or np.any(probes < 0) or np.any(probes > horizon):
        raise ConfigError("probe times must lie in [0, horizon]")
    t_max = float(probes.max())
    lam = np.linalg.eigvals(sys.a_plus).real
    spread = float(lam.max() - lam.min())

    if n == 1:
        p0 = np.array([[radius], [-radius]], dtype=float)
        ref = np.array([[1.0], [-1.0]])
    else:
        if n_samples is None:
            n_samples = int(np.ceil(
                2.0 * np.pi * np.exp(spread * t_max) / net_eps * 1.5))
        if n_samples > 500000:
            raise ConfigError("need %d ring samples to resolve the net; "
                              "lower the last probe time" % n_samples)
        th = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
        p0 = radius * np.stack([np.cos(th), np.sin(th)], axis=-1)
        th_ref = np.linspace(0.0, 2.0 * np.pi,
                             int(np.ceil(10.0 * np.pi / net_eps)),
                             endpoint=False)
        ref = np.stack([np.cos(th_ref), np.sin(th_ref)], axis=-1)
    q0 = np.zeros((p0.shape[0], sys.m))

    store_every = max(1, int(round(0.05 / dt)))
    traj = integrate(sys, f, (p0, q0), horizon, dt, store_every=store_every,
                     check_envelopes=False)
    worst = 0.0
    for t in probes:
        idx = int(np.argmin(np.abs(traj.times - t)))
        p = np.asarray(traj.p_states[idx], dtype=float)
        norms = np.linalg.norm(p, axis=-1)
        keep = norms > 1e-12
        dirs = p[keep] / norms[keep, None]
        d, _ = cKDTree(dirs).query(ref)
        worst = max(worst, float(np.max(d)))
    return worst
