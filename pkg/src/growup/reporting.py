"""Delimited and JSON artifact writers.

Every writer takes a `reproducible` flag: when set, the generation
timestamp is left out so identical inputs produce byte-identical files.
Floats are written with repr so a reader gets back the exact double.
"""

import datetime
import json

import numpy as np


def _stamp():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (complex, np.complexfloating)):
        return repr(complex(v))
    return str(v)


def write_csv(path, header, rows, reproducible=False):
    lines = []
    if not reproducible:
        lines.append("# generated %s" % _stamp())
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_json(path, obj, reproducible=False):
    obj = _jsonable(dict(obj))
    if not reproducible:
        obj["generated"] = _stamp()
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _state_header(n, m, complex_q):
    head = ["p_%d" % (i + 1) for i in range(n)]
    for j in range(m):
        head.append("q_%d" % (j + 1))
        if complex_q:
            head.append("q_%d_im" % (j + 1))
    return head


def _state_row(p, q, complex_q):
    row = [float(v) for v in np.atleast_1d(p)]
    for v in np.atleast_1d(q):
        if complex_q:
            row.extend([float(np.real(v)), float(np.imag(v))])
        else:
            row.append(float(np.real(v)))
    return row


def trajectory_csv(path, traj, reproducible=False):
    """One sampled orbit (or a batch, flattened) against time."""
    p = np.asarray(traj.p_states)
    q = np.asarray(traj.q_states)
    if p.ndim == 2:
        p = p[:, None, :]
        q = q[:, None, :]
    complex_q = np.iscomplexobj(q)
    batch = p.shape[1]
    header = ["time"] + (["orbit"] if batch > 1 else [])
    header += _state_header(p.shape[-1], q.shape[-1], complex_q)
    rows = []
    for k, t in enumerate(traj.times):
        for b in range(batch):
            lead = [float(t)] + ([b] if batch > 1 else [])
            rows.append(lead + _state_row(p[k, b], q[k, b], complex_q))
    return write_csv(path, header, rows, reproducible)


def graph_csv(path, graph, reproducible=False):
    """Grid graph as node coordinates against fiber values."""
    nodes = graph.node_matrix()
    vals = graph.values.reshape(nodes.shape[0], -1)
    complex_q = np.iscomplexobj(vals)
    header = _state_header(nodes.shape[1], vals.shape[1], complex_q)
    rows = [_state_row(nodes[i], vals[i], complex_q)
            for i in range(nodes.shape[0])]
    return write_csv(path, header, rows, reproducible)


def graph_export(stem, graph, reproducible=False):
    """Write <stem>.json (box, spacing, dims) plus <stem>.csv values.

    Both attractor solvers hand back the same grid type, so their
    sections diff directly; graph_import rebuilds the object.
    """
    head = {
        "box": graph.box,
        "spacing": graph.spacing,
        "dims": {"grid": list(graph.shape), "n": graph.n, "m": graph.m,
                 "complex": bool(np.iscomplexobj(graph.values))},
    }
    write_json(str(stem) + ".json", head, reproducible)
    graph_csv(str(stem) + ".csv", graph, reproducible)
    return str(stem) + ".json", str(stem) + ".csv"


def graph_import(stem):
    from .graph_transform import GraphFn

    with open(str(stem) + ".json") as fh:
        head = json.load(fh)
    dims = head["dims"]
    shape = tuple(dims["grid"])
    m = dims["m"]
    rows = []
    with open(str(stem) + ".csv") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line[0].isalpha():
                continue
            rows.append([float(v) for v in line.split(",")])
    rows = np.asarray(rows, dtype=float)
    raw = rows[:, dims["n"]:]
    if dims["complex"]:
        vals = raw[:, 0::2] + 1j * raw[:, 1::2]
    else:
        vals = raw
    return GraphFn(np.asarray(head["box"]), vals.reshape(shape + (m,)))


def cloud_csv(path, points_p, points_q, cluster=None, reproducible=False):
    points_p = np.atleast_2d(np.asarray(points_p, dtype=float))
    points_q = np.atleast_2d(np.asarray(points_q))
    complex_q = np.iscomplexobj(points_q)
    header = _state_header(points_p.shape[1], points_q.shape[1], complex_q)
    if cluster is not None:
        header = header + ["cluster"]
    rows = []
    for i in range(points_p.shape[0]):
        row = _state_row(points_p[i], points_q[i], complex_q)
        if cluster is not None:
            row.append(int(cluster[i]))
        rows.append(row)
    return write_csv(path, header, rows, reproducible)


def sphere_csv(path, times, x, reproducible=False):
    x = np.asarray(x, dtype=float)
    header = ["time"] + ["x%d" % (i + 1) for i in range(x.shape[1])]
    rows = [[float(t)] + [float(v) for v in x[k]]
            for k, t in enumerate(times)]
    return write_csv(path, header, rows, reproducible)


def classification_json(path, result, reproducible=False):
    ev = dict(result.evidence)
    counts = {k: ev.pop(k) for k in ("in_count", "out_count") if k in ev}
    obj = {"verdict": result.verdict,
           "witness_time": result.witness_time,
           "counts": counts,
           "evidence": ev}
    return write_json(path, obj, reproducible)


def failure_report(path, failures, reproducible=False):
    """Machine-readable list of failed checks; what exit code 1 points at."""
    return write_json(path, {"failed": len(failures),
                             "checks": failures}, reproducible)
