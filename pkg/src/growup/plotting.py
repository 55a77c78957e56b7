"""Figure emitters for the report path.

Built on the object API (no pyplot), so concurrent workers can render
without sharing global state.  Figures carry fixed metadata and dpi, so
a reproducible run produces byte-identical images as well as
byte-identical delimited files.
"""

import functools
import threading

import numpy as np
from matplotlib.figure import Figure

_META = {"Software": "growup"}
_DPI = 110

# the figure objects are private, but text layout goes through a shared
# font cache; one render at a time keeps worker pools safe
_RENDER = threading.Lock()


def _locked(fn):
    @functools.wraps(fn)
    def wrap(*args, **kwargs):
        with _RENDER:
            return fn(*args, **kwargs)

    return wrap


def _new(figsize):
    fig = Figure(figsize=figsize)
    return fig


def _save(fig, path):
    fig.savefig(path, dpi=_DPI, metadata=_META, format="png")
    return path


@_locked
def plot_trajectory(path, traj, title=""):
    p = np.asarray(traj.p_states)
    q = np.asarray(traj.q_states)
    if p.ndim == 2:
        p = p[:, None, :]
        q = q[:, None, :]
    fig = _new((6, 5))
    ax1, ax2 = fig.subplots(2, 1, sharex=True)
    for b in range(p.shape[1]):
        ax1.plot(traj.times, np.linalg.norm(p[:, b], axis=-1), lw=0.8)
        ax2.plot(traj.times, np.linalg.norm(np.abs(q[:, b]), axis=-1),
                 lw=0.8)
    ax1.set_ylabel("|P u|")
    ax1.set_yscale("symlog")
    ax2.set_ylabel("|Q u|")
    ax2.set_xlabel("t")
    if title:
        ax1.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


@_locked
def plot_graph(path, graph, title="", overlay_points=None):
    nodes = graph.node_matrix()
    vals = np.real(graph.values.reshape(nodes.shape[0], -1))
    fig = _new((6, 4))
    ax = fig.subplots()
    if nodes.shape[1] == 1:
        order = np.argsort(nodes[:, 0])
        for j in range(vals.shape[1]):
            ax.plot(nodes[order, 0], vals[order, j], lw=1.2,
                    label="q%d" % (j + 1))
        if overlay_points is not None:
            op, oq = overlay_points
            op = np.atleast_2d(np.asarray(op, dtype=float))
            oq = np.real(np.atleast_2d(np.asarray(oq)))
            if op.shape[0]:
                ax.plot(op[:, 0], oq[:, 0], "k.", ms=8, label="core")
        ax.set_xlabel("p")
        ax.set_ylabel("fiber value")
        ax.legend(loc="best", fontsize=8)
    else:
        shape = graph.values.shape[:-1]
        norms = np.linalg.norm(vals, axis=-1).reshape(shape)
        im = ax.imshow(norms.T, origin="lower", aspect="auto",
                       extent=(graph.box[0, 0], graph.box[0, 1],
                               graph.box[1, 0], graph.box[1, 1]))
        fig.colorbar(im, ax=ax, label="|fiber|")
        ax.set_xlabel("p1")
        ax.set_ylabel("p2")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


@_locked
def plot_cloud(path, points_p, points_q, title=""):
    points_p = np.atleast_2d(np.asarray(points_p, dtype=float))
    points_q = np.real(np.atleast_2d(np.asarray(points_q)))
    fig = _new((5, 4))
    ax = fig.subplots()
    if points_p.size:
        if points_p.shape[1] >= 2:
            sc = ax.scatter(points_p[:, 0], points_p[:, 1], s=12,
                            c=np.linalg.norm(points_q, axis=-1))
            fig.colorbar(sc, ax=ax, label="|q|")
            ax.set_xlabel("p1")
            ax.set_ylabel("p2")
        else:
            ax.scatter(points_p[:, 0], points_q[:, 0], s=12)
            ax.set_xlabel("p")
            ax.set_ylabel("q")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


@_locked
def plot_thickness(path, radii, diameters, slope=None, title=""):
    fig = _new((5, 4))
    ax = fig.subplots()
    radii = np.asarray(radii, dtype=float)
    diameters = np.asarray(diameters, dtype=float)
    ax.loglog(radii, diameters, "o-", lw=1.0)
    if slope is not None and radii.size:
        anchor = diameters[0] if diameters[0] > 0 else 1.0
        ax.loglog(radii, anchor * (radii / radii[0]) ** slope, "--",
                  label="slope %.3f" % slope)
        ax.legend(loc="best", fontsize=8)
    ax.set_xlabel("|p|")
    ax.set_ylabel("fiber diameter")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


@_locked
def plot_sphere_path(path, times, x, title=""):
    x = np.asarray(x, dtype=float)
    fig = _new((5, 4))
    ax = fig.subplots()
    if x.shape[1] == 2:
        th = np.linspace(0.0, 2.0 * np.pi, 400)
        ax.plot(np.cos(th), np.sin(th), color="0.8", lw=0.8)
        ax.plot(x[:, 0], x[:, 1], lw=1.2)
        ax.plot([x[0, 0]], [x[0, 1]], "go", ms=6)
        ax.plot([x[-1, 0]], [x[-1, 1]], "rs", ms=6)
        ax.set_aspect("equal")
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    else:
        for j in range(x.shape[1]):
            ax.plot(times, x[:, j], lw=1.0, label="x%d" % (j + 1))
        ax.set_xlabel("t")
        ax.legend(loc="best", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


@_locked
def plot_threshold_curves(path, rows, title=""):
    """Per-gamma2 curves of the two thresholds against gamma1."""
    fig = _new((6, 4))
    ax = fig.subplots()
    rows = sorted(rows, key=lambda r: (r["gamma2"], r["gamma1"]))
    g2s = sorted({r["gamma2"] for r in rows})
    for g2 in g2s:
        sub = [r for r in rows if r["gamma2"] == g2]
        xs = [r["gamma1"] for r in sub]
        ax.loglog(xs, [r["lf_gt"] for r in sub], "o-", lw=1.0,
                  label="GT, gamma2=%g" % g2)
        ax.loglog(xs, [r["lf_lp"] for r in sub], "s--", lw=1.0,
                  label="LP, gamma2=%g" % g2)
    ax.set_xlabel("gamma1")
    ax.set_ylabel("Lipschitz threshold")
    ax.legend(loc="best", fontsize=7)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
