"""Command line driver: runs experiments and emits artifacts.

Every subcommand writes its delimited/JSON outputs and the matching
figures into the output directory, prints one line per asserted check,
and exits 0 only if all checks pass.  Configuration errors exit 2;
failed checks exit 1 and leave a machine-readable failures.json behind.
"""

import argparse
import json
import logging
import os
import sys as _sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import bounds, infinity, plotting, pullback, reporting
from .absorbing import ball_samples, build_family, classify, omega_limit
from .errors import ConfigError, GrowupError
from .graph_transform import GraphFn, iterate_to_limit, symmetric_box
from .lyapunov_perron import LPConfig, lp_fixed_point
from .operator_core import (SplitSystem, load_system, solve_lyapunov,
                            system_from_dict)
from .presets import (ex1, ex2, cex_nonattracting, get_preset, jb_nonclosed,
                      power_envelope, saturated_random)
from .semiflow import NonlinearityModel, integrate, zero_nonlinearity

log = logging.getLogger("growup")

_SECTION_DEFAULTS = {
    "simulate": {"u0_p": [0.5], "u0_q": [0.25], "horizon": 4.0, "dt": 0.01,
                 "store_dt": 0.05},
    "classify": {"center_p": [3.0], "center_q": [0.0], "radius": 0.4,
                 "count": 24, "horizon": 6.0, "dt": 0.01},
    "attractor": {"box_half": None, "nodes": 17, "t_step": 1.0, "tol": 1e-6,
                  "kappa": 1.0, "dt": 0.01},
    "bounds": {"gammas": [0.1, 1.0, 10.0], "m": 1.0, "variant": "full",
               "ms": [1.0, 2.0, 4.0]},
    "thickness": {"gamma0": 2.0, "gamma1": 1.0, "gamma2": 0.5, "alpha": 1.0,
                  "d_const": 1.0, "radius": 3.0, "n_dirs": 48,
                  "horizon": 5.0, "burn": 1.5, "shells": 9, "rel_tol": 0.15},
    "infinity": {"a_plus": [[2.0, 0.0], [0.0, 1.0]], "minus_rates": [-1.0],
                 "forcing": [0.02, 0.0], "sphere_u0_p": [0.0, 3.0],
                 "sphere_horizon": 4.0, "sphere_dt": 1e-3,
                 "ball_center": [3.0, 0.4], "ball_radius": 0.3,
                 "ball_count": 24, "ball_horizon": 9.0, "merge_eps": 0.05,
                 "ring_radius": 5.0, "ring_horizon": 2.0,
                 "probe_times": [0.5, 1.0, 2.0], "net_eps": 0.01,
                 "dt": 0.01},
    "pullback": {"example": "sin-forced", "t": 0.7,
                 "ladder": [-1.3, -3.3, -5.3, -7.3, -9.3, -11.3, -13.3],
                 "tol": 1e-4, "dt": 0.01, "box_half": 6.0, "nodes": 21,
                 "seed": 7},
}

_TOP_KEYS = {"system", "nonlinearity", "seed", "out"} | set(_SECTION_DEFAULTS)


class ExperimentConfig:
    """Validated experiment description; unknown keys are rejected."""

    def __init__(self, raw=None):
        raw = dict(raw or {})
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ConfigError(
                "unknown config keys %s; known: %s"
                % (sorted(unknown), sorted(_TOP_KEYS))
            )
        self.system = raw.get("system")
        self.nonlinearity = raw.get("nonlinearity")
        if self.nonlinearity is not None:
            nl = dict(self.nonlinearity)
            bad = set(nl) - {"preset", "params"}
            if bad:
                raise ConfigError(
                    "unknown nonlinearity keys %s" % sorted(bad))
            if "preset" not in nl:
                raise ConfigError("nonlinearity needs a preset name")
        self.seed = int(raw.get("seed", 0))
        self.out = raw.get("out", "growup-out")
        self.sections = {}
        for name, defaults in _SECTION_DEFAULTS.items():
            given = raw.get(name, {})
            bad = set(given) - set(defaults)
            if bad:
                raise ConfigError(
                    "unknown keys %s in section %r; known: %s"
                    % (sorted(bad), name, sorted(defaults))
                )
            merged = dict(defaults)
            merged.update(given)
            self.sections[name] = merged

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as err:
            raise ConfigError("cannot read config %s: %s" % (path, err))
        except ValueError as err:
            raise ConfigError("config %s is not valid JSON: %s" % (path, err))
        if not isinstance(raw, dict):
            raise ConfigError("config top level must be an object")
        return cls(raw)


def _resolve_model(cfg):
    if cfg.nonlinearity is not None:
        if cfg.system is not None:
            raise ConfigError(
                "nonlinearity presets carry their own system; drop the "
                "system key"
            )
        nl = cfg.nonlinearity
        return get_preset(nl["preset"], **nl.get("params", {}))
    if cfg.system is not None:
        if isinstance(cfg.system, dict):
            sys_ = system_from_dict(cfg.system)
        else:
            sys_ = load_system(cfg.system)
        return sys_, zero_nonlinearity(sys_)
    return saturated_random(cfg.seed, l_f=0.3)


def _drift_field(vec):
    vec = np.asarray(vec, dtype=float)

    def fn(t, p, q):
        p = np.asarray(p, dtype=float)
        return (np.broadcast_to(vec, p.shape).copy(),
                np.zeros(np.asarray(q).shape))

    return NonlinearityModel(fn, c_f=float(np.linalg.norm(vec)) + 0.01,
                             l_f=0.0, name="drift")


def _check(checks, name, passed, detail):
    checks.append({"name": name, "passed": bool(passed), "detail": detail})


def _store_every(dt, store_dt):
    return max(1, int(round(store_dt / dt)))


# ---------------------------------------------------------------- commands


def _cmd_simulate(cfg, args, out):
    sec = cfg.sections["simulate"]
    sys_, f = _resolve_model(cfg)
    u0 = (np.asarray(sec["u0_p"], dtype=float),
          np.asarray(sec["u0_q"], dtype=float))
    traj = integrate(sys_, f, u0, (0.0, sec["horizon"]), dt=sec["dt"],
                     store_every=_store_every(sec["dt"], sec["store_dt"]))
    arts = [
        reporting.trajectory_csv(out / "trajectory.csv", traj,
                                 args.reproducible),
        plotting.plot_trajectory(out / "trajectory.png", traj,
                                 title=f.name),
    ]
    return [], arts


def _cmd_classify(cfg, args, out):
    sec = cfg.sections["classify"]
    sys_, f = _resolve_model(cfg)
    samples = ball_samples(sec["center_p"], sec["center_q"], sec["radius"],
                           sec["count"], seed=cfg.seed)
    _, family = build_family(sys_, f)
    result = classify(sys_, f, samples, sec["horizon"], family,
                      dt=sec["dt"])
    arts = [reporting.classification_json(out / "classification.json",
                                          result, args.reproducible)]
    checks = []
    _check(checks, "classify_verdict", True,
           "%s at witness time %.3g" % (result.verdict, result.witness_time))
    return checks, arts


def _attractor_grid(cfg, sys_, f):
    sec = cfg.sections["attractor"]
    half = sec["box_half"]
    if half is None:
        from .absorbing import dichotomy_for

        con = dichotomy_for(sys_)
        half = 4.0 * max(1.0, con.m_const * (f.c_f or 1.0) / con.gamma2)
    box = symmetric_box([float(half)] * sys_.n_plus)
    shape = (int(sec["nodes"]),) * sys_.n_plus
    return GraphFn.constant(box, shape, np.zeros(sys_.m))


def _cmd_attractor_gt(cfg, args, out):
    sec = cfg.sections["attractor"]
    sys_, f = _resolve_model(cfg)
    sigma0 = _attractor_grid(cfg, sys_, f)
    sigma, info = iterate_to_limit(sys_, f, sigma0, t_step=sec["t_step"],
                                   tol=sec["tol"])
    arts = list(reporting.graph_export(out / "attractor_gt", sigma,
                                       args.reproducible))
    arts.append(plotting.plot_graph(out / "attractor_gt.png", sigma,
                                    title="graph transform limit"))
    arts.append(reporting.write_json(out / "attractor_gt_info.json", info,
                                     args.reproducible))
    checks = []
    _check(checks, "gt_converged", True,
           "%d iterations, last change %.3g"
           % (info["iterations"], info["sup_history"][-1]))
    return checks, arts


def _cmd_attractor_lp(cfg, args, out):
    sec = cfg.sections["attractor"]
    sys_, f = _resolve_model(cfg)
    grid = _attractor_grid(cfg, sys_, f)
    lp_cfg = LPConfig(sys_, f, kappa=sec["kappa"], tol=sec["tol"],
                      grid=grid, dt=sec["dt"],
                      log_path=str(out / "lp_convergence.csv"))
    sigma, c_hat, info = lp_fixed_point(sys_, f, lp_cfg)
    arts = list(reporting.graph_export(out / "attractor_lp", sigma,
                                       args.reproducible))
    arts.append(plotting.plot_graph(out / "attractor_lp.png", sigma,
                                    title="integral map fixed point"))
    arts.append(str(out / "lp_convergence.csv"))
    checks = []
    _check(checks, "lp_converged", True,
           "%d sweeps, measured ratio %.3g" % (info["iterations"], c_hat))
    return checks, arts


def _bounds_rows(gammas, m, variant, workers):
    cells = [(g1, g2) for g1 in gammas for g2 in gammas]

    def cell(pair):
        g1, g2 = pair
        rep = bounds.lp_bound(g1, g2, m, variant)
        return {"gamma1": g1, "gamma2": g2,
                "lf_lp": rep.lp_value, "lf_gt": rep.gt_value}

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(cell, cells))


def _cmd_bounds_table(cfg, args, out):
    sec = cfg.sections["bounds"]
    rows = _bounds_rows(sec["gammas"], sec["m"], sec["variant"],
                        args.workers)
    arts = [
        reporting.write_csv(
            out / "bounds_thresholds.csv",
            ["gamma1", "gamma2", "lf_lp", "lf_gt"],
            [[r["gamma1"], r["gamma2"], r["lf_lp"], r["lf_gt"]]
             for r in rows],
            args.reproducible,
        )
    ]
    remark = bounds.remark_table(sec["ms"])
    arts.append(reporting.write_csv(
        out / "bounds_remark.csv",
        ["m", "comparator", "ours", "gt", "sharp"],
        [[r["m"], r["comparator"], r["ours"], r["gt"], r["sharp"]]
         for r in remark],
        args.reproducible,
    ))
    arts.append(plotting.plot_threshold_curves(
        out / "bounds_thresholds.png", rows, title="threshold tables"))
    checks = []
    worst = 0.0
    for r in rows:
        alt = bounds.gt_bound_variational(r["gamma1"], r["gamma2"])
        worst = max(worst, abs(alt - r["lf_gt"]) / r["lf_gt"])
    _check(checks, "gt_closed_form_vs_variational", worst <= 1e-6,
           "largest relative gap %.3g" % worst)
    ordered = all(r["ours"] < r["comparator"] for r in remark)
    _check(checks, "simplified_below_comparator", ordered,
           "ours < comparator on all rows" if ordered
           else "ordering violated")
    return checks, arts


def _cmd_thickness(cfg, args, out):
    sec = cfg.sections["thickness"]
    sys_, f = power_envelope(sec["gamma0"], sec["gamma1"], sec["gamma2"],
                             alpha=sec["alpha"], d_const=sec["d_const"])
    p, q = bounds.attractor_cloud_from_ring(
        sys_, f, sec["radius"], n_dirs=int(sec["n_dirs"]),
        horizon=sec["horizon"], burn=sec["burn"])
    radii = np.linalg.norm(p, axis=1)
    lo, hi = np.percentile(radii, [8.0, 92.0])
    shells = np.geomspace(lo, hi, int(sec["shells"]))
    res = bounds.measure_thickness(p, q, shells, dir_eps=0.05)
    beta = bounds.decay_exponent(sec["gamma0"], sec["gamma1"],
                                 sec["gamma2"], f.decay)["beta"]
    arts = [
        reporting.write_csv(out / "thickness.csv", ["radius", "diameter"],
                            list(zip(res["radii"], res["diameters"])),
                            args.reproducible),
        reporting.write_json(out / "thickness.json",
                             {"slope": res["slope"],
                              "predicted_beta": beta,
                              "skipped": res["skipped"]},
                             args.reproducible),
        plotting.plot_thickness(out / "thickness.png", res["radii"],
                                res["diameters"], slope=res["slope"],
                                title="fiber diameter decay"),
    ]
    checks = []
    ok = (res["slope"] is not None
          and abs(res["slope"] + beta) <= sec["rel_tol"] * beta)
    _check(checks, "thickness_slope", ok,
           "measured %.4g vs predicted %.4g"
           % (res["slope"] if res["slope"] is not None else float("nan"),
              -beta))
    return checks, arts


def _cmd_infinity(cfg, args, out):
    sec = cfg.sections["infinity"]
    sys_ = SplitSystem(len(sec["a_plus"]), sec["a_plus"],
                       sec["minus_rates"])
    f = _drift_field(sec["forcing"])

    driving = integrate(
        sys_, f,
        (np.asarray(sec["sphere_u0_p"], dtype=float), np.zeros(sys_.m)),
        (0.0, sec["sphere_horizon"]), dt=sec["sphere_dt"])
    path = infinity.sphere_flow(sys_, f, driving)
    from .absorbing import dichotomy_for

    con_gamma1 = dichotomy_for(sys_).gamma1

    samples = ball_samples(sec["ball_center"], [0.0] * sys_.m,
                           sec["ball_radius"], int(sec["ball_count"]),
                           seed=cfg.seed)
    _, family = build_family(sys_, f)
    cloud = infinity.omega_infty(sys_, f, samples, sec["ball_horizon"],
                                 family, merge_eps=sec["merge_eps"],
                                 dt=sec["dt"])
    coverage = infinity.ring_coverage(sys_, f, sec["ring_radius"],
                                      sec["ring_horizon"],
                                      sec["probe_times"],
                                      net_eps=sec["net_eps"], dt=sec["dt"])
    structure = infinity.jordan_prediction(sec["a_plus"])

    arts = [
        reporting.sphere_csv(out / "sphere_path.csv", path.times, path.x,
                             args.reproducible),
        plotting.plot_sphere_path(out / "sphere_path.png", path.times,
                                  path.x, title="direction dynamics"),
        reporting.write_json(out / "structure.json", structure,
                             args.reproducible),
        reporting.write_csv(
            out / "omega_infinity.csv",
            ["x%d" % (i + 1) for i in range(sys_.n_plus)],
            [list(map(float, row)) for row in cloud.points],
            args.reproducible),
        reporting.write_json(
            out / "infinity_report.json",
            {"agreement": path.agreement, "norm_dev": path.norm_dev,
             "c_b": path.c_b, "envelope_rate": path.envelope_rate,
             "coverage": coverage, "omega_points": cloud.points},
            args.reproducible),
    ]
    checks = []
    _check(checks, "sphere_dual_route_agreement", path.agreement <= 1e-6,
           "max gap %.3g" % path.agreement)
    if path.envelope_rate is None:
        _check(checks, "forcing_envelope_rate", False, "no usable samples")
    else:
        rel = abs(path.envelope_rate - con_gamma1) / con_gamma1
        _check(checks, "forcing_envelope_rate", rel <= 0.10,
               "fitted %.4g vs gamma1 %.4g" % (path.envelope_rate,
                                               con_gamma1))
    _check(checks, "ring_coverage", coverage <= sec["net_eps"],
           "gap %.3g at net %.3g" % (coverage, sec["net_eps"]))
    return checks, arts


def _pullback_examples():
    return ("autonomous-consistency", "sin-forced", "oscillating-b")


def _cmd_pullback(cfg, args, out):
    sec = dict(cfg.sections["pullback"])
    if args.example is not None:
        sec["example"] = args.example
    if args.t is not None:
        sec["t"] = args.t
    if args.ladder is not None:
        sec["ladder"] = args.ladder
    if sec["example"] not in _pullback_examples():
        raise ConfigError(
            "unknown pullback example %r; known: %s"
            % (sec["example"], list(_pullback_examples()))
        )
    t = float(sec["t"])
    offsets = [float(o) for o in sec["ladder"]]
    ladder = [t + o for o in offsets]
    sys_ = SplitSystem(1, [[1.0]], [-1.0])
    grid = GraphFn.constant(symmetric_box([sec["box_half"]]),
                            (int(sec["nodes"]),), np.zeros(1))
    checks = []
    arts = []

    if sec["example"] == "sin-forced":
        def fn(time, p, q):
            p = np.asarray(p, dtype=float)
            return (np.zeros_like(p),
                    np.broadcast_to(np.sin(time),
                                    np.asarray(q).shape).copy())

        proc = pullback.ProcessModel(fn, c_f=1.0, l_f=0.0,
                                     name="sin_forced")
        section = pullback.pullback_section(sys_, proc, t, s_ladder=ladder,
                                            grid=grid, tol=sec["tol"],
                                            dt=sec["dt"])
        want = 0.5 * (np.sin(t) - np.cos(t))
        gap = float(np.max(np.abs(section.values - want)))
        _check(checks, "sin_forced_bounded_solution",
               gap <= 10.0 * sec["tol"],
               "max gap to (sin t - cos t)/2 is %.3g" % gap)
    elif sec["example"] == "autonomous-consistency":
        _, f = saturated_random(int(sec["seed"]), l_f=0.3)
        proc = pullback.ProcessModel(f.fn, c_f=f.c_f, l_f=f.l_f,
                                     name="frozen_" + f.name)
        section = pullback.pullback_section(sys_, proc, t, s_ladder=ladder,
                                            grid=grid, tol=sec["tol"],
                                            dt=sec["dt"])
        sigma, _ = iterate_to_limit(sys_, f, grid, t_step=1.0,
                                    tol=sec["tol"])
        gap = float(np.max(np.abs(section.values - sigma.values)))
        arts.extend(reporting.graph_export(out / "pullback_reference",
                                           sigma, args.reproducible))
        _check(checks, "autonomous_consistency", gap <= 10.0 * sec["tol"],
               "max gap to the autonomous section %.3g" % gap)
    else:
        _, base = saturated_random(int(sec["seed"]), l_f=0.3)
        proc = pullback.modulated_process(base, np.cos, 1.0)
        section = pullback.pullback_section(sys_, proc, t, s_ladder=ladder,
                                            grid=grid, tol=sec["tol"],
                                            dt=sec["dt"])
        _check(checks, "oscillating_b_section", True,
               "values in [%.3g, %.3g]"
               % (float(np.real(section.values).min()),
                  float(np.real(section.values).max())))

    arts.extend(reporting.graph_export(out / "pullback_section", section,
                                       args.reproducible))
    arts.append(plotting.plot_graph(out / "pullback_section.png", section,
                                    title="%s at t=%g"
                                    % (sec["example"], t)))
    arts.append(reporting.write_json(
        out / "pullback_run.json",
        {"example": sec["example"], "t": t, "ladder": ladder,
         "tol": sec["tol"]}, args.reproducible))
    return checks, arts


def _examples_ex1(out, reproducible, facts):
    sys_, f = ex1()
    sigma0 = GraphFn.constant(symmetric_box([8.0]), (17,),
                              np.full(1, 0.5))
    sigma, _ = iterate_to_limit(sys_, f, sigma0, t_step=1.0, tol=1e-8)
    sup = float(np.max(np.abs(sigma.values)))
    arts = list(reporting.graph_export(out / "ex1_attractor", sigma,
                                       reproducible))
    proc = pullback.ProcessModel(f.fn, c_f=0.0, l_f=0.0, name="ex1")
    section = GraphFn.constant(symmetric_box([4.0]), (17,), np.zeros(1))
    core = pullback.bounded_core_section(sys_, proc, 0.0, r_level=1.0,
                                         forward_horizon=8.0,
                                         section=section)
    arts.append(reporting.cloud_csv(out / "ex1_core.csv", core.points_p,
                                    core.points_q,
                                    reproducible=reproducible))
    arts.append(plotting.plot_graph(out / "ex1_attractor.png", sigma,
                                    title="J = x-axis, J_b = {origin}",
                                    overlay_points=(core.points_p,
                                                    core.points_q)))
    graph_zero = sup <= 1e-6
    core_origin = (not core.empty
                   and float(np.max(np.abs(core.points_p))) <= 1e-9
                   and float(np.max(np.abs(core.points_q))) <= 1e-9)
    facts.append(("ex1_attractor_is_x_axis", graph_zero,
                  "sup |fiber| = %.3g" % sup))
    facts.append(("ex1_core_is_origin", core_origin,
                  "%d core points" % len(core.points_p)))
    return arts, "J = x-axis, J_b = {origin}"


def _examples_ex2(out, reproducible, facts):
    sys_, f = ex2()
    period = 2.0 * np.pi
    traj = integrate(sys_, f, (np.array([1.0, 0.0]), np.array([1.0])),
                     (0.0, period), dt=0.005, store_every=20)
    arts = [reporting.trajectory_csv(out / "ex2_orbit.csv", traj,
                                     reproducible)]
    end_p = traj.p_states[-1]
    end_q = complex(np.asarray(traj.q_states[-1]).reshape(-1)[0])
    want_q = np.exp(-period)
    return_ok = (float(np.linalg.norm(end_p - [1.0, 0.0])) <= 1e-9
                 and abs(end_q - want_q) <= 1e-9)
    facts.append(("ex2_period_return", return_ok,
                  "(1,0,1) -> (%.6g, %.6g, %.6g) after 2 pi"
                  % (end_p[0], end_p[1], end_q.real)))

    theta = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
    samples = (np.stack([np.cos(theta), np.sin(theta)], axis=1),
               np.ones((64, 1)))
    cloud = omega_limit(sys_, f, samples, horizon=20.0, family=None,
                        merge_eps=0.05, dt=0.01)
    arts.append(reporting.cloud_csv(out / "ex2_omega.csv", cloud.points_p,
                                    cloud.points_q,
                                    reproducible=reproducible))
    arts.append(plotting.plot_cloud(out / "ex2_omega.png", cloud.points_p,
                                    cloud.points_q,
                                    title="omega limit of the unit circle"))
    radii = np.linalg.norm(cloud.points_p, axis=1)
    heights = np.abs(np.asarray(cloud.points_q)).reshape(-1)
    ang = np.sort(np.arctan2(cloud.points_p[:, 1], cloud.points_p[:, 0]))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2.0 * np.pi]]))
    circle_ok = (not cloud.empty
                 and float(np.max(np.abs(radii - 1.0))) <= 0.05
                 and float(np.max(heights)) <= 0.05
                 and float(np.max(gaps)) <= 2.5 * 0.05)
    facts.append(("ex2_omega_is_circle_at_z0", circle_ok,
                  "%d representatives, max |z| %.3g"
                  % (len(radii), float(np.max(heights)) if len(radii)
                     else float("nan"))))
    return arts, "unit circle at z=1 sinks to the circle at z=0"


def _examples_cex(out, reproducible, facts):
    sys_, f = cex_nonattracting()
    traj = integrate(sys_, f, (np.array([1.0]), np.array([0.8])),
                     (0.0, 8.0), dt=0.01, store_every=5)
    arts = [
        reporting.trajectory_csv(out / "cex_trajectory.csv", traj,
                                 reproducible),
        plotting.plot_trajectory(out / "cex_trajectory.png", traj,
                                 title="non-attraction witness"),
    ]
    x_end = float(traj.p_states[-1, 0])
    late = traj.times >= 4.0
    y_late = np.abs(np.real(traj.q_states[late, 0]))
    witness = x_end >= 1e3 and float(np.min(y_late)) >= 0.2
    facts.append(("cex_J_not_attracting", witness,
                  "|Px| reaches %.3g while |y| stays >= %.3g"
                  % (x_end, float(np.min(y_late)))))
    return arts, "the attractor exists but does not attract"


def _examples_jb(out, reproducible, facts):
    sys_, f = jb_nonclosed()
    r_wit = 8.0
    p0 = np.array([[2.0], [2.0], [r_wit], [r_wit]])
    q0 = np.array([[0.9], [1.8], [1.0 / r_wit], [0.0]])
    traj = integrate(sys_, f, (p0, q0), (0.0, 6.0), dt=0.01,
                     store_every=5)
    arts = [
        reporting.trajectory_csv(out / "jb_trajectories.csv", traj,
                                 reproducible),
        plotting.plot_trajectory(out / "jb_trajectories.png", traj,
                                 title="band attractor orbits"),
    ]
    y_in = np.real(traj.q_states[:, 0, 0])
    frozen = float(np.max(np.abs(y_in - 0.9))) <= 1e-9
    facts.append(("jb_band_fibers_invariant", frozen,
                  "|y - 0.9| stays <= %.3g"
                  % float(np.max(np.abs(y_in - 0.9)))))
    y_pull = float(np.real(traj.q_states[-1, 1, 0]))
    facts.append(("jb_band_absorbs_outside", abs(y_pull - 1.0) <= 0.01,
                  "y from 1.8 reaches %.4g" % y_pull))
    x_bound = float(np.abs(traj.p_states[-1, 2, 0]))
    x_grow = float(np.abs(traj.p_states[-1, 3, 0]))
    pair_ok = x_bound <= r_wit + 1e-6 and x_grow >= 100.0
    facts.append(("jb_core_not_closed", pair_ok,
                  "(R, 1/R) holds at |x| = %.6g while (R, 0) reaches "
                  "|x| = %.3g" % (x_bound, x_grow)))
    return arts, "J = R x [-1, 1]; (R, 1/R) is a core point, (R, 0) is not"


def _cmd_examples(cfg, args, out):
    facts = []
    arts = []
    summaries = {}
    for name, fn in (("ex1", _examples_ex1), ("ex2", _examples_ex2),
                     ("cex_nonattracting", _examples_cex),
                     ("jb_nonclosed", _examples_jb)):
        a, summary = fn(out, args.reproducible, facts)
        arts.extend(a)
        summaries[name] = summary
    checks = [{"name": n, "passed": ok, "detail": d} for n, ok, d in facts]
    arts.append(reporting.write_json(
        out / "examples_facts.json",
        {"summaries": summaries,
         "facts": [{"name": n, "passed": ok, "detail": d}
                   for n, ok, d in facts]},
        args.reproducible))
    return checks, arts


# ---------------------------------------------------------------- selftest


def _self_lyapunov(out, reproducible, seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(30):
        dim = int(rng.integers(1, 5))
        raw = rng.standard_normal((dim, dim))
        shift = max(0.0, -float(np.min(np.linalg.eigvals(raw).real))) + 0.3
        a = raw + shift * np.eye(dim)
        sys_ = SplitSystem(dim, a, [-1.0])
        cert = solve_lyapunov(sys_)
        res = np.linalg.norm(a.T @ cert.n_matrix + cert.n_matrix @ a
                             - np.eye(dim), 2)
        worst = max(worst, float(res))
    reporting.write_json(out / "selftest_lyapunov.json",
                         {"max_residual": worst, "trials": 30},
                         reproducible)
    return [{"name": "lyapunov_residual", "passed": worst <= 1e-10,
             "detail": "max residual %.3g" % worst}]


def _self_linear(out, reproducible, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((2, 2))
    shift = max(0.0, -float(np.min(np.linalg.eigvals(a).real))) + 0.5
    a = a + shift * np.eye(2)
    sys_ = SplitSystem(2, a, [-0.7, -1.3])
    f = zero_nonlinearity(sys_)
    p0 = rng.standard_normal(2)
    q0 = rng.standard_normal(2)
    traj = integrate(sys_, f, (p0, q0), (0.0, 5.0), dt=0.01,
                     store_every=20)
    from .operator_core import propagator_minus, propagator_plus

    worst = 0.0
    for k, t in enumerate(traj.times):
        want_p = propagator_plus(sys_, t) @ p0
        want_q = propagator_minus(sys_, t) * q0
        scale = max(1.0, float(np.linalg.norm(want_p)))
        gap = max(float(np.linalg.norm(traj.p_states[k] - want_p)) / scale,
                  float(np.max(np.abs(traj.q_states[k] - want_q))))
        worst = max(worst, gap)
    reporting.trajectory_csv(out / "selftest_linear.csv", traj,
                             reproducible)
    reporting.write_json(out / "selftest_linear.json",
                         {"max_relative_gap": worst}, reproducible)
    return [{"name": "linear_exactness", "passed": worst <= 1e-10,
             "detail": "max relative gap to the closed-form flow %.3g"
                       % worst}]


def _self_classification(out, reproducible, seed):
    sys_, f = saturated_random(seed, l_f=0.3)
    samples = ball_samples([3.0], [0.0], 0.4, 24, seed=seed)
    _, family = build_family(sys_, f)
    result = classify(sys_, f, samples, 6.0, family)
    reporting.classification_json(out / "selftest_classification.json",
                                  result, reproducible)
    return [{"name": "escape_classification",
             "passed": result.verdict == "Escaping",
             "detail": "ball at |p|=3 is %s" % result.verdict}]


def _self_graph_zero(out, reproducible, seed):
    sys_, f = ex1()
    sigma0 = GraphFn.constant(symmetric_box([8.0]), (17,),
                              np.full(1, 0.5))
    sigma, _ = iterate_to_limit(sys_, f, sigma0, t_step=1.0, tol=1e-8)
    sup = float(np.max(np.abs(sigma.values)))
    reporting.graph_export(out / "selftest_graph", sigma, reproducible)
    plotting.plot_graph(out / "selftest_graph.png", sigma,
                        title="zero limit")
    return [{"name": "graph_limit_zero", "passed": sup <= 1e-6,
             "detail": "sup |fiber| = %.3g" % sup}]


def _self_cross_method(out, reproducible, seed):
    sys_, f = saturated_random(7, l_f=0.3)
    grid = GraphFn.constant(symmetric_box([6.0]), (15,), np.zeros(1))
    sigma_gt, _ = iterate_to_limit(sys_, f, grid, t_step=1.0, tol=1e-5)
    lp_cfg = LPConfig(sys_, f, kappa=1.0, tol=1e-5, grid=grid)
    sigma_lp, _, _ = lp_fixed_point(sys_, f, lp_cfg)
    gap = float(np.max(np.abs(sigma_gt.values - sigma_lp.values)))
    reporting.graph_export(out / "selftest_gt", sigma_gt, reproducible)
    reporting.graph_export(out / "selftest_lp", sigma_lp, reproducible)
    reporting.write_json(out / "selftest_cross.json", {"sup_gap": gap},
                         reproducible)
    return [{"name": "cross_method_agreement", "passed": gap <= 2e-4,
             "detail": "sup gap %.3g between the two solvers" % gap}]


def _trunc3(value):
    # printed reference tables cut at the third decimal without rounding
    return int(np.floor(value * 1000.0 + 1e-9))


def _self_thresholds(out, reproducible, seed):
    table = {(0.1, 0.1): 0.050, (1.0, 0.1): 0.090, (10.0, 0.1): 0.099,
             (0.1, 1.0): 0.275, (1.0, 1.0): 0.500, (10.0, 1.0): 0.909,
             (0.1, 10.0): 2.525, (1.0, 10.0): 2.750, (10.0, 10.0): 5.000}
    rows = []
    bad = []
    for (g1, g2), want in sorted(table.items()):
        got = bounds.gt_bound(g1, g2)
        rows.append([g1, g2, got])
        if _trunc3(got) != int(round(want * 1000.0)):
            bad.append((g1, g2))
    reporting.write_csv(out / "selftest_gt_table.csv",
                        ["gamma1", "gamma2", "lf_gt"], rows, reproducible)
    sharp = bounds.lp_bound_sharp_m1()
    ok = not bad and abs(sharp - 4.5) <= 1e-2
    return [{"name": "threshold_constants", "passed": ok,
             "detail": "mismatched cells %s, sharp m=1 value %.4g"
                       % (bad, sharp)}]


def _self_sphere(out, reproducible, seed):
    sys_ = SplitSystem(2, [[2.0, 0.0], [0.0, 1.0]], [-1.0])
    f = _drift_field([0.02, 0.0])
    driving = integrate(sys_, f, (np.array([0.4, 3.0]), np.zeros(1)),
                        (0.0, 8.0), dt=1e-3)
    path = infinity.sphere_flow(sys_, f, driving)
    reporting.sphere_csv(out / "selftest_sphere.csv", path.times, path.x,
                         reproducible)
    plotting.plot_sphere_path(out / "selftest_sphere.png", path.times,
                              path.x, title="dominant direction")
    align = float(np.linalg.norm(path.x[-1] - [1.0, 0.0]))
    ok = path.agreement <= 1e-6 and align <= 5e-3
    return [{"name": "sphere_dominance", "passed": ok,
             "detail": "agreement %.3g, distance to (1,0) %.3g"
                       % (path.agreement, align)}]


def _self_pullback(out, reproducible, seed):
    sys_ = SplitSystem(1, [[1.0]], [-1.0])

    def fn(time, p, q):
        p = np.asarray(p, dtype=float)
        return (np.zeros_like(p),
                np.broadcast_to(np.sin(time), np.asarray(q).shape).copy())

    proc = pullback.ProcessModel(fn, c_f=1.0, l_f=0.0, name="sin_forced")
    t = 0.7
    ladder = [t + o for o in (-1.3, -3.3, -5.3, -7.3, -9.3, -11.3, -13.3)]
    section = pullback.pullback_section(sys_, proc, t, s_ladder=ladder)
    want = 0.5 * (np.sin(t) - np.cos(t))
    gap = float(np.max(np.abs(section.values - want)))
    reporting.graph_export(out / "selftest_pullback", section,
                           reproducible)
    plotting.plot_graph(out / "selftest_pullback.png", section,
                        title="pullback section")
    return [{"name": "pullback_sin_forced", "passed": gap <= 1e-3,
             "detail": "max gap to the bounded solution %.3g" % gap}]


def _self_writers(out, reproducible, seed):
    rows = [[1, 0.1], [2, 0.2]]
    a = out / "selftest_writer_a.csv"
    b = out / "selftest_writer_b.csv"
    reporting.write_csv(a, ["k", "v"], rows, reproducible=True)
    reporting.write_csv(b, ["k", "v"], rows, reproducible=True)
    same = open(a, "rb").read() == open(b, "rb").read()
    os.remove(b)
    return [{"name": "writer_determinism", "passed": same,
             "detail": "two reproducible writes byte-identical"
                       if same else "writer output drifted"}]


_SELF_CHECKS = (
    _self_lyapunov,
    _self_linear,
    _self_classification,
    _self_graph_zero,
    _self_cross_method,
    _self_thresholds,
    _self_sphere,
    _self_pullback,
    _self_writers,
)


def _cmd_selftest(cfg, args, out):
    def run(fn):
        return fn(out, args.reproducible, cfg.seed)

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(run, _SELF_CHECKS))
    checks = sorted((c for group in results for c in group),
                    key=lambda c: c["name"])
    arts = sorted(str(out / name) for name in os.listdir(out)
                  if name.startswith("selftest_")
                  and name != "selftest_report.json")
    return checks, arts


_COMMANDS = {
    "simulate": _cmd_simulate,
    "classify": _cmd_classify,
    "attractor-gt": _cmd_attractor_gt,
    "attractor-lp": _cmd_attractor_lp,
    "bounds-table": _cmd_bounds_table,
    "thickness": _cmd_thickness,
    "infinity": _cmd_infinity,
    "pullback": _cmd_pullback,
    "examples": _cmd_examples,
    "selftest": _cmd_selftest,
}


class _Out(str):
    """Output directory with / joining, so commands read naturally."""

    def __truediv__(self, name):
        return os.path.join(str(self), name)


def _parse_ladder(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("ladder must be comma-separated "
                                         "offsets, e.g. -1.5,-3.5,-7.5")
    return vals


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None,
                        help="JSON experiment description")
    common.add_argument("--out", default=None,
                        help="output directory (default growup-out)")
    common.add_argument("--seed", type=int, default=None,
                        help="seed for all sampling")
    common.add_argument("--workers", type=int, default=None,
                        help="worker count (default: available cores)")
    common.add_argument("--reproducible", action="store_true",
                        help="suppress timestamps for byte-identical "
                             "artifacts")

    parser = argparse.ArgumentParser(
        prog="growup",
        description="Attractors of slowly non-dissipative systems: "
                    "simulation, attractor solvers, thresholds, dynamics "
                    "at infinity, pullback sections.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "pullback":
            p.add_argument("--t", type=float, default=None,
                           help="section time")
            p.add_argument("--ladder", type=_parse_ladder, default=None,
                           help="comma-separated negative start offsets")
            p.add_argument("--example", default=None,
                           choices=_pullback_examples())
    return parser


def _setup_logging():
    level = os.environ.get("GROWUP_LOG", "WARNING").upper()
    if not hasattr(logging, level):
        level = "WARNING"
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    if not log.handlers:
        log.addHandler(handler)
    log.setLevel(getattr(logging, level))


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if not hasattr(args, "example"):
        args.example = None
        args.t = None
        args.ladder = None
    _setup_logging()
    out = None
    try:
        if args.config is not None:
            cfg = ExperimentConfig.from_file(args.config)
        else:
            cfg = ExperimentConfig({})
        if args.seed is not None:
            cfg.seed = args.seed
        out = _Out(args.out if args.out is not None else cfg.out)
        if args.workers is None:
            args.workers = os.cpu_count() or 1
        if args.workers < 1:
            raise ConfigError("workers must be at least 1")
        os.makedirs(out, exist_ok=True)
        checks, arts = _COMMANDS[args.command](cfg, args, out)
    except ConfigError as err:
        print("config error: %s" % err, file=_sys.stderr)
        return 2
    except GrowupError as err:
        if out is None:
            out = _Out(args.out if args.out is not None else "growup-out")
        os.makedirs(out, exist_ok=True)
        failure = {"name": args.command, "passed": False,
                   "detail": "%s: %s" % (type(err).__name__, err)}
        reporting.failure_report(out / "failures.json", [failure],
                                 args.reproducible)
        print("FAIL %s (%s)" % (failure["name"], failure["detail"]))
        return 1

    for c in checks:
        print("%s %s (%s)" % ("ok  " if c["passed"] else "FAIL",
                              c["name"], c["detail"]))
    reporting.write_json(out / ("%s_report.json" % args.command.replace(
        "-", "_")),
        {"command": args.command, "checks": checks,
         "artifacts": sorted(os.path.basename(a) for a in arts)},
        args.reproducible)
    failed = [c for c in checks if not c["passed"]]
    if failed:
        reporting.failure_report(out / "failures.json", failed,
                                 args.reproducible)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
