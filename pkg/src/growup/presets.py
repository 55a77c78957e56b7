"""Named example systems and nonlinearities.

ex1 is the planar saddle-like flow whose unbounded attractor is the
x-axis with bounded core {0}; ex2 adds a neutral rotation pair on E+ so
that every bounded set keeps circling while the E- coordinate decays.
cex_nonattracting is the planar field whose attractor exists but fails
to attract (solutions escape with a nonzero limiting y); jb_nonclosed
realises the band attractor R x [-1, 1] whose bounded core is not
closed.  Both counterexample fields are defined on a quadrant in their
source construction and are extended to the plane oddly in each
coordinate here, which preserves their orbits in the closed right half
plane and makes the origin an equilibrium.

saturated_random(seed) draws a smooth random field and clamps it, so
its bound and Lipschitz constants hold by construction.
"""

import re

import numpy as np

from .errors import ConfigError
from .operator_core import SplitSystem
from .semiflow import NonlinearityModel, zero_nonlinearity


def ex1():
    """x' = x, y' = -y: attractor is the x-axis, bounded core the origin."""
    sys = SplitSystem(1, [[1.0]], [-1.0])
    return sys, zero_nonlinearity(sys, name="ex1")


def ex2():
    """Neutral rotation on E+, decay on E-: circles sinking to z = 0."""
    sys = SplitSystem(2, [[0.0, 1.0], [-1.0, 0.0]], [-1.0],
                      allow_nonhyperbolic=True)
    return sys, zero_nonlinearity(sys, name="ex2")


def cex_nonattracting():
    """Field whose attractor (the x-axis) does not attract.

    On the quadrant x, y >= 0 the vertical component is
       y' = -y + x y/(1+x)          for y in [0, 1],
       y' = -y + (2-y) x y/(1+x)    for y in [1, 2],
       y' = -y                      for y >= 2,
    so along escaping orbits y approaches a positive limit, while the
    strip |y| <= 2 stays absorbing.
    """
    sys = SplitSystem(1, [[1.0]], [-1.0])

    def fn(t, p, q):
        x = np.asarray(p, dtype=float)[..., 0]
        y = np.asarray(q).real[..., 0]
        ay = np.abs(y)
        shear = np.abs(x) / (1.0 + np.abs(x))
        mid = np.clip(2.0 - ay, 0.0, 1.0)  # 1 below |y|=1, taper, 0 past 2
        fq = shear * y * mid
        return np.zeros_like(p, dtype=float), fq[..., None]

    f = NonlinearityModel(fn, c_f=1.0, l_f=2.3, name="cex_nonattracting")
    return sys, f


def jb_nonclosed():
    """Band attractor R x [-1,1] with a non-closed bounded core.

    The vertical field freezes y inside [-1, 1] and pulls it to the band
    from outside.  The horizontal field, for 0 < |y| <= 1, pushes |x|
    toward the fiber endpoint 1/|y| through four glued affine branches
    and grows linearly past it, so the orbit through (x0, y0) is bounded
    exactly when |x0| <= 1/|y0|.  The horizontal part is unbounded, so
    no global bound is declared and a-priori envelopes are not certified
    for this preset.
    """
    sys = SplitSystem(1, [[1.0]], [-1.0])

    def x_speed(ax, ay):
        with np.errstate(divide="ignore"):
            b = np.where(ay > 0.0, 1.0 / (3.0 * np.maximum(ay, 1e-300)), np.inf)
        x1 = np.minimum(b, 1.0)
        x2 = 2.0 * b
        x3 = 3.0 * b
        slope = np.maximum(3.0 * ay, 1.0)
        out = np.where(
            ax <= x1, slope * ax,
            np.where(
                ax <= x2, 1.0,
                np.where(ax <= x3, -3.0 * ay * ax + 3.0, ax - x3),
            ),
        )
        # y = 0 line: |x|' = max(|x|, 1) away from the origin
        return np.where(ay > 0.0, out, np.maximum(ax, 1.0) * (ax > 0.0))

    def fn(t, p, q):
        x = np.asarray(p, dtype=float)[..., 0]
        y = np.asarray(q).real[..., 0]
        ay = np.abs(y)
        fq = np.where(ay >= 1.0, np.sign(y), y)
        fp = np.sign(x) * x_speed(np.abs(x), ay) - x
        return fp[..., None], fq[..., None]

    f = NonlinearityModel(fn, c_f=None, l_f=None, name="jb_nonclosed")
    return sys, f


def saturated_random(seed, n_plus=1, minus_rates=(-1.0,), c_f=1.0, l_f=0.5,
                     a_plus=None):
    """Random two-layer tanh field with certified constants.

    The weights are scaled so the product of layer norms equals l_f and
    the output is smoothly clamped at level c_f/sqrt(dim); both declared
    constants therefore hold by construction.
    """
    if a_plus is None:
        a_plus = np.eye(int(n_plus))
    sys = SplitSystem(n_plus, a_plus, np.asarray(minus_rates, dtype=complex))
    if np.any(sys.minus_rates.imag != 0.0):
        raise ConfigError("saturated_random requires real decay modes")
    dim = sys.n_plus + sys.m
    hidden = 8
    rng = np.random.default_rng(int(seed))
    w1 = rng.normal(size=(hidden, dim)) / np.sqrt(dim)
    w2 = rng.normal(size=(dim, hidden)) / np.sqrt(hidden)
    gain = l_f / (np.linalg.norm(w2, 2) * np.linalg.norm(w1, 2))
    w2 = w2 * gain
    level = c_f / np.sqrt(dim)

    def fn(t, p, q):
        p = np.asarray(p, dtype=float)
        v = np.concatenate([p, np.asarray(q).real.astype(float)], axis=-1)
        raw = np.tanh(v @ w1.T) @ w2.T
        out = level * np.tanh(raw / level)
        return out[..., :sys.n_plus], out[..., sys.n_plus:]

    f = NonlinearityModel(fn, c_f=c_f, l_f=l_f,
                          name="saturated_random(%d)" % int(seed))
    return sys, f


def power_envelope(gamma0=2.0, gamma1=1.0, gamma2=0.5, alpha=1.0, d_const=1.0):
    """Two-speed E+ with forcing on E- that decays like ||p||^{-alpha}.

    f maps into E- only: f_q = d * (1+||p||^2)^{-alpha/2} * p_1/sqrt(1+||p||^2),
    smooth everywhere, bounded by d, with the declared power envelope.
    The direction factor makes the forcing history depend on the angular
    coordinate, so distinct histories arriving at the same fiber carry
    distinct E- offsets.
    """
    sys = SplitSystem(2, [[gamma0, 0.0], [0.0, gamma1]], [-gamma2])
    d_const = float(d_const)
    alpha = float(alpha)

    def fn(t, p, q):
        p = np.asarray(p, dtype=float)
        r2 = np.sum(p * p, axis=-1)
        envelope = d_const * (1.0 + r2) ** (-alpha / 2.0)
        direction = p[..., 0] / np.sqrt(1.0 + r2)
        fq = (envelope * direction)[..., None]
        return np.zeros_like(p), fq

    f = NonlinearityModel(
        fn, c_f=d_const, l_f=2.0 * d_const, f0=None,
        decay={"kind": "power", "d": d_const, "alpha": alpha, "k": 1.0},
        name="power_envelope",
    )
    return sys, f


def oscillating_growup():
    """Scalar non-autonomous forcing x' = sin t - t cos t.

    The solution x(t) = x0 + t sin t is unbounded without tending to
    infinity; nothing in the package asserts anything about this preset
    beyond running it, since its forcing violates every boundedness
    assumption the certificates need.
    """
    sys = SplitSystem(1, [[1.0]], [-1.0])

    def fn(t, p, q):
        p = np.asarray(p, dtype=float)
        drive = np.sin(t) - t * np.cos(t)
        return np.broadcast_to(drive, p.shape).copy() - p, np.zeros_like(q)

    f = NonlinearityModel(fn, c_f=None, l_f=1.0, name="oscillating_growup")
    return sys, f


_PRESETS = {
    "ex1": ex1,
    "ex2": ex2,
    "cex_nonattracting": cex_nonattracting,
    "jb_nonclosed": jb_nonclosed,
    "oscillating_growup": oscillating_growup,
}

_SAT_RE = re.compile(r"^saturated_random\((\d+)\)$")


def get_preset(name, **params):
    """Resolve a preset name such as "ex1" or "saturated_random(3)".

    Keyword parameters are forwarded to saturated_random only; the
    named examples are fixed objects and reject them.
    """
    fn = _PRESETS.get(name)
    if fn is not None:
        if params:
            raise ConfigError(
                "preset %r takes no parameters; got %s"
                % (name, sorted(params))
            )
        return fn()
    m = _SAT_RE.match(name)
    if m:
        return saturated_random(int(m.group(1)), **params)
    raise ConfigError(
        "unknown preset %r; known: %s"
        % (name, sorted(_PRESETS) + ["saturated_random(seed)"])
    )
