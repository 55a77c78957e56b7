"""Inertial graph as the fixed point of a backward integral map.

The graph transform needs M = 1; this module works for any M >= 1 by
iterating the map

    G(Sigma)(p0) = integral_{-t_inf}^{0} e^{-A s} Q g(s, v(s)) ds,

where v(s) is the backward E+ path on the graph of Sigma ending at p0
and g is the nonlinearity translated by a bounded anchor orbit (an
equilibrium by default), so that g(0) = 0 and the zero section is the
natural starting iterate.  Everything is computed on one shared grid;
the improper integral is truncated where its tail drops below the
requested accuracy.
"""

import csv
import logging
import math

import numpy as np

from .absorbing import dichotomy_for
from .bounds import lp_contraction_lhs, lp_feasible
from .errors import ConfigError, DomainExitError, NonContractionError
from .graph_transform import GraphFn, symmetric_box
from .semiflow import NonlinearityModel, _phi_scalar, backward_plus_solve, \
    integrate

log = logging.getLogger("growup")


def _full_residual(sys, f, p, q):
    fp, fq = f(0.0, p[None], q[None])
    rp = sys.a_plus @ p + fp[0]
    rq = sys.minus_rates * q + fq[0]
    return float(np.sqrt(np.sum(np.abs(rp) ** 2) + np.sum(np.abs(rq) ** 2)))


def _unstack(sys, z, complex_q):
    n, m = sys.n_plus, sys.m
    p = z[:n]
    q = z[n:n + m] + (1j * z[n + m:] if complex_q else 0.0)
    return p, q


def find_anchor(sys, f, max_iter=80):
    """Equilibrium of the full field, found by damped iteration from 0.

    Falls back to the endpoint of a long orbit from the origin when no
    equilibrium converges; the trailing drift of that orbit is logged as
    the anchor error term.  Returns (p, q).
    """
    complex_q = bool(np.any(sys.minus_rates.imag != 0.0))

    def res_vec(z):
        p, q = _unstack(sys, z, complex_q)
        fp, fq = f(0.0, p[None], q[None])
        rp = sys.a_plus @ p + fp[0]
        rq = sys.minus_rates * q + fq[0]
        parts = [rp.real, rq.real] + ([rq.imag] if complex_q else [])
        return np.concatenate(parts)

    dim = sys.n_plus + (2 if complex_q else 1) * sys.m
    z = np.zeros(dim)
    r = res_vec(z)
    for _ in range(max_iter):
        if np.linalg.norm(r) <= 1e-12 * max(1.0, np.linalg.norm(z)):
            break
        jac = np.empty((r.size, dim))
        for i in range(dim):
            dz = 1e-7 * (1.0 + abs(z[i]))
            zp = z.copy()
            zp[i] += dz
            jac[:, i] = (res_vec(zp) - r) / dz
        try:
            step = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        while lam >= 2.0 ** -30:
            zn = z - lam * step
            rn = res_vec(zn)
            if np.linalg.norm(rn) < np.linalg.norm(r):
                z, r = zn, rn
                break
            lam *= 0.5
        else:
            break
    p, q = _unstack(sys, z, complex_q)
    if _full_residual(sys, f, p, q) <= 1e-10:
        return p, q

    # no equilibrium converged: take a long orbit from the origin and
    # use its endpoint, provided the orbit stays bounded
    horizon = 40.0
    traj = integrate(sys, f, (np.zeros((1, sys.n_plus)),
                              np.zeros((1, sys.m), dtype=complex if complex_q
                                       else float)),
                     (0.0, horizon), dt=0.01, check_envelopes=False,
                     store_every=100)
    norms = np.sqrt(np.linalg.norm(traj.p_states[:, 0], axis=-1) ** 2
                    + np.linalg.norm(np.abs(traj.q_states[:, 0]),
                                     axis=-1) ** 2)
    cap = 50.0 * (1.0 + (f.c_f if f.c_f is not None else 1.0))
    if norms[-1] > cap:
        raise ConfigError(
            "no equilibrium converged and the fallback orbit from the "
            "origin is unbounded (reached norm %.3g)" % norms[-1]
        )
    half = len(traj.times) // 2
    drift = float(np.sqrt(
        np.linalg.norm(traj.p_states[-1, 0] - traj.p_states[half, 0]) ** 2
        + np.linalg.norm(np.abs(traj.q_states[-1, 0]
                                - traj.q_states[half, 0])) ** 2))
    log.warning("anchor is a bounded-orbit endpoint, not an equilibrium; "
                "trailing drift %.3g enters the error budget", drift)
    return traj.p_states[-1, 0], traj.q_states[-1, 0]


def translated_model(sys, f, anchor):
    """g(t, v) = f(t, v + anchor) - f(t, anchor); g(0) = 0 exactly."""
    p_bar, q_bar = anchor

    def fn(t, p, q):
        fp, fq = f(t, p + p_bar, q + q_bar)
        fp0, fq0 = f(t, p_bar[None], q_bar[None])
        return fp - fp0[0], fq - fq0[0]

    return NonlinearityModel(
        fn,
        c_f=None if f.c_f is None else 2.0 * f.c_f,
        l_f=f.l_f,
        name="translated(%s)" % f.name,
    )


class LPConfig:
    """Shared lattice, cone opening, truncation horizon, and anchor.

    t_inf defaults to the horizon at which the integral tail
    e^{-gamma2 t} 2 M C_f / gamma2 has dropped to half the allowed
    0.1*tol; an explicit t_inf must meet that same bound.  The anchor
    defaults to the equilibrium found from 0; a provided anchor with a
    residual above 1e-10 is accepted as an orbit anchor with a warning.
    """

    def __init__(self, sys, f, kappa, tol, t_inf=None, grid=None,
                 anchor=None, dt=0.01, log_path=None):
        if kappa <= 0.0:
            raise ConfigError("kappa must be positive")
        if tol <= 0.0:
            raise ConfigError("tol must be positive")
        if f.c_f is None:
            raise ConfigError(
                "truncating the backward integral needs a certified "
                "global bound; f declares no c_f"
            )
        self.con = dichotomy_for(sys)
        self.kappa = float(kappa)
        self.tol = float(tol)
        self.dt = float(dt)
        self.log_path = log_path
        self.bound_sup = 2.0 * self.con.m_const * f.c_f / self.con.gamma2
        if t_inf is None:
            if self.bound_sup == 0.0:
                t_inf = 1.0
            else:
                t_inf = math.log(self.bound_sup / (0.05 * tol)) \
                    / self.con.gamma2
                t_inf = max(t_inf, 1.0)
        else:
            tail = math.exp(-self.con.gamma2 * t_inf) * self.bound_sup
            if tail > 0.1 * tol * (1.0 + 1e-9):
                raise ConfigError(
                    "t_inf = %g leaves an integral tail %.3g above the "
                    "allowed 0.1*tol = %.3g" % (t_inf, tail, 0.1 * tol)
                )
        self.t_inf = float(t_inf)
        if grid is None:
            half = 4.0 * max(1.0, self.bound_sup)
            grid = GraphFn.constant(symmetric_box([half] * sys.n_plus),
                                    (33,) * sys.n_plus,
                                    np.zeros(sys.m))
        self.box = grid.box
        self.shape = grid.shape
        if anchor is None:
            anchor = find_anchor(sys, f)
        p_bar = np.asarray(anchor[0], dtype=float)
        q_bar = np.asarray(anchor[1])
        res = _full_residual(sys, f, p_bar, q_bar)
        if res > 1e-10:
            log.warning("anchor residual %.3g exceeds the equilibrium "
                        "tolerance; treating it as an orbit anchor", res)
        self.anchor = (p_bar, q_bar)

    def zero_graph(self, sys):
        return GraphFn.constant(self.box, self.shape, np.zeros(sys.m))


def weighted_sup_gap(a, b):
    """Metric of the candidate space: sup over nodes of ||dq|| / ||p||."""
    nodes = a.node_matrix()
    va = a.values.reshape(-1, a.m)
    vb = b.values.reshape(-1, b.m)
    norms = np.linalg.norm(nodes, axis=-1)
    keep = norms > 1e-12
    gap = np.linalg.norm(np.abs(va - vb), axis=-1)
    return float(np.max(gap[keep] / norms[keep]))


def _check_membership(cfg, sigma, who):
    slack = 1.0 + 1e-9
    if sigma.kappa_hat() > cfg.kappa * slack:
        raise ConfigError("%s has kappa_hat %.4g beyond kappa %.4g"
                          % (who, sigma.kappa_hat(), cfg.kappa))
    if sigma.sup_norm() > cfg.bound_sup * slack + 1e-12:
        raise ConfigError("%s has sup %.4g beyond the bound %.4g"
                          % (who, sigma.sup_norm(), cfg.bound_sup))
    origin = np.linalg.norm(np.abs(sigma.eval(np.zeros(sigma.n))))
    if origin > 1e-8 * (1.0 + cfg.bound_sup):
        raise ConfigError("%s is not pinned at the origin (|sigma(0)| "
                          "= %.3g)" % (who, origin))


def lp_map(sys, f, cfg, sigma):
    """One application of the backward integral map to sigma.

    All nodes march backward together; the quadrature is the
    exponential-weighted trapezoid exact for linear data under the E-
    propagator, applied on the stored backward grid.
    """
    _check_membership(cfg, sigma, "input graph")
    g = translated_model(sys, f, cfg.anchor)
    nodes = sigma.node_matrix()
    guard = None
    if f.l_f is not None:
        guard = (cfg.con.m_const, cfg.con.gamma1, f.l_f, cfg.kappa)
    try:
        times, path = backward_plus_solve(sys, g, sigma, nodes, 0.0,
                                          cfg.t_inf, dt=cfg.dt,
                                          growth_guard=guard)
    except DomainExitError as err:
        for i, node in enumerate(nodes):
            try:
                backward_plus_solve(sys, g, sigma, node, 0.0, cfg.t_inf,
                                    dt=cfg.dt, growth_guard=guard)
            except DomainExitError as single:
                raise DomainExitError(
                    "backward path left the graph domain at node %d "
                    "(p = %s) at t = %.6g" % (i, node, single.exit_time),
                    exit_time=single.exit_time,
                ) from None
        raise err

    sig_path = sigma.eval(path)
    hq = np.stack([g(times[k], path[k], sig_path[k])[1]
                   for k in range(len(times))])

    lam = sys.minus_rates
    dlt = np.diff(times)[:, None]
    w = -lam[None, :] * dlt
    phi1 = _phi_scalar(w, 1)
    phi2 = _phi_scalar(w, 2)
    decay = np.exp(-lam[None, :] * times[:-1, None])
    w_left = (dlt * decay * phi2)[:, None, :]
    w_right = (dlt * decay * (phi1 - phi2))[:, None, :]
    vals = np.sum(w_left * hq[:-1] + w_right * hq[1:], axis=0)

    vals = vals - vals[int(np.argmin(np.linalg.norm(nodes, axis=-1)))]
    if not np.iscomplexobj(sigma.values) \
            and not np.any(sys.minus_rates.imag != 0.0):
        vals = vals.real
    out = GraphFn(cfg.box, vals.reshape(cfg.shape + (sys.m,)))
    slack = 1.01
    if out.kappa_hat() > cfg.kappa * slack \
            or out.sup_norm() > cfg.bound_sup * slack:
        log.warning("mapped graph leaves the candidate space: kappa_hat "
                    "%.4g (kappa %.4g), sup %.4g (bound %.4g)",
                    out.kappa_hat(), cfg.kappa, out.sup_norm(),
                    cfg.bound_sup)
    return out


def lp_fixed_point(sys, f, cfg, tol=None, max_sweeps=60):
    """Iterate the map from the zero section until the metric settles.

    Returns (graph in original coordinates, measured contraction ratio,
    info).  The translated fixed point, every iterate, and the
    convergence log live in info; the graph handed back is
    anchor + fixed_point(p - P anchor) on the shifted box.
    """
    if tol is None:
        tol = cfg.tol
    if f.l_f is None:
        raise ConfigError("contraction needs a certified Lipschitz bound")
    con = cfg.con
    if not lp_feasible(f.l_f, cfg.kappa, con.m_const, con.gamma1,
                       con.gamma2, "full"):
        raise ConfigError(
            "constraints fail at l_f = %g, kappa = %g, M = %g, rates "
            "(%g, %g); no contraction is certified there"
            % (f.l_f, cfg.kappa, con.m_const, con.gamma1, con.gamma2)
        )
    c_bound = lp_contraction_lhs(f.l_f, cfg.kappa, con.m_const,
                                 con.gamma1, con.gamma2)

    sigma = cfg.zero_graph(sys)
    sups, ratios, iterates = [], [], []
    for sweep in range(1, max_sweeps + 1):
        new = lp_map(sys, f, cfg, sigma)
        d = weighted_sup_gap(new, sigma)
        sups.append(d)
        iterates.append(new)
        if len(sups) >= 2 and sups[-2] > 0.0:
            r = d / sups[-2]
            ratios.append(r)
            if r >= 1.0:
                raise NonContractionError(
                    "map expanded at sweep %d: measured ratio %.4g"
                    % (sweep, r)
                )
        sigma = new
        if d <= tol:
            break
    else:
        raise NonContractionError(
            "no convergence within %d sweeps (last diff %.3g)"
            % (max_sweeps, sups[-1])
        )

    c_hat = float(np.median(ratios)) if ratios else 0.0
    if ratios and c_hat > 1.25 * c_bound:
        raise NonContractionError(
            "measured ratio %.4g exceeds the certified constant %.4g "
            "by more than 25%%" % (c_hat, c_bound)
        )
    if cfg.log_path is not None:
        with open(cfg.log_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iteration", "sup_diff", "ratio"])
            for k, d in enumerate(sups):
                wr.writerow([k + 1, repr(d),
                             repr(ratios[k - 1]) if k >= 1 else ""])

    p_bar, q_bar = cfg.anchor
    box_abs = cfg.box + p_bar[:, None]
    vals_abs = sigma.values + q_bar
    sigma_abs = GraphFn(box_abs, vals_abs)
    info = {
        "iterations": len(sups),
        "sup_history": sups,
        "ratio_history": ratios,
        "c_bound": c_bound,
        "c_hat": c_hat,
        "anchor": cfg.anchor,
        "sigma_translated": sigma,
        "iterates": iterates,
    }
    return sigma_abs, c_hat, info


def lp_attraction_rate(sys, f, sigma, samples, horizon, dt=0.01,
                       burn_in=0.2):
    """Fitted decay rate of the vertical gap to the computed graph."""
    from .graph_transform import attraction_rate

    return attraction_rate(sys, f, sigma, samples, horizon, dt=dt,
                           burn_in=burn_in)
