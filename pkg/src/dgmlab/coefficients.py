"""Dynamics coefficients (f, g, h), initial laws and the closed-form constants of the convergence estimates.

Shape conventions for the maps:

* ``f(x)``: ``x`` of shape ``(..., d)`` -> ``(..., d)``
* ``g(x, y)``: broadcastable ``(..., d)`` pairs -> ``(..., d)``
* ``h(x, y)``: broadcastable ``(..., d)`` pairs -> ``(...)`` (scalar amplitude)

Every pairwise kernel also exposes :func:`interaction_sum`, the weighted sum
``out[u, a] = sum_v W[u, v] sum_b p[v, b] k(x[u, a], y[v, b])`` that the
particle system, the mean-field solver and the representatives all share.
Built-in families get closed-form fast paths; arbitrary callables go through
a chunked dense evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .graph_limits import DigraphMeasure, ValidationError, dgm_norm
from .streams import INIT_PARTICLE, keyed_normals, keyed_uniforms

_CHUNK_ELEMENTS = 1 << 22


class CoefficientError(RuntimeError):
    """A coefficient map produced a non-finite value."""


# --------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class Kernel:
    """Pairwise map with an optional closed form used by :func:`interaction_sum`.

    ``kind`` is one of ``zero``, ``constant`` (scalar value, h only),
    ``linear`` (``rate * (y - x)``, g only), ``sine`` (``rate * sin(y - x)``
    componentwise, g only) or ``generic``.
    """

    fn: Callable
    kind: str = "generic"
    value: float = 0.0
    vector: bool = True

    def __call__(self, x, y):
        return self.fn(x, y)


def as_kernel(k, vector: bool) -> Kernel:
    if isinstance(k, Kernel):
        return k
    return Kernel(k, "generic", 0.0, vector)


def interaction_sum(kernel: Kernel, W, x, y, p=None) -> np.ndarray:
    """Weighted interaction ``sum_v W[u, v] sum_b p[v, b] k(x[u, a], y[v, b])``.

    ``x`` has shape ``(U, A, d)``, ``y`` shape ``(V, B, d)``, ``W`` shape
    ``(U, V)`` and ``p`` shape ``(V, B)`` (uniform ``1/B`` by default).
    Returns ``(U, A, d)`` for vector kernels and ``(U, A)`` for scalar ones.
    """
    W = np.asarray(W, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    U, A, d = x.shape
    V, B, _ = y.shape
    if p is None:
        p = np.full((V, B), 1.0 / B)
    out_shape = (U, A, d) if kernel.vector else (U, A)

    if kernel.kind == "zero":
        return np.zeros(out_shape)
    if kernel.kind == "constant":
        row = W @ p.sum(axis=1)
        return np.broadcast_to((kernel.value * row)[:, None], out_shape).copy()
    if kernel.kind == "linear":
        mass = W @ p.sum(axis=1)
        ybar = W @ np.einsum("vb,vbd->vd", p, y)
        return kernel.value * (ybar[:, None, :] - mass[:, None, None] * x)
    if kernel.kind == "sine":
        # sin(y - x) = sin y cos x - cos y sin x
        s = W @ np.einsum("vb,vbd->vd", p, np.sin(y))
        c = W @ np.einsum("vb,vbd->vd", p, np.cos(y))
        return kernel.value * (s[:, None, :] * np.cos(x) - c[:, None, :] * np.sin(x))

    # generic: dense evaluation over row chunks of the flattened x
    xf = x.reshape(U * A, d)
    yf = y.reshape(V * B, d)
    owner = np.repeat(np.arange(U), A)
    cols = V * B
    rows_per_chunk = max(1, _CHUNK_ELEMENTS // max(1, cols * d))
    out = np.empty((U * A, d) if kernel.vector else (U * A,))
    for start in range(0, U * A, rows_per_chunk):
        stop = min(U * A, start + rows_per_chunk)
        vals = np.asarray(kernel.fn(xf[start:stop, None, :], yf[None, :, :]), dtype=float)
        weights = (W[owner[start:stop]][:, :, None] * p[None]).reshape(stop - start, cols)
        if kernel.vector:
            vals = np.broadcast_to(vals, (stop - start, cols, d))
            out[start:stop] = np.einsum("rcd,rc->rd", vals, weights)
        else:
            vals = np.broadcast_to(vals, (stop - start, cols))
            out[start:stop] = np.einsum("rc,rc->r", vals, weights)
    return out.reshape(out_shape)


# --------------------------------------------------------------------------
# coefficient sets


@dataclass(frozen=True)
class CoefficientSet:
    """Drift ``f``, interaction ``g``, noise amplitude ``h`` with declared constants."""

    f: Callable
    g: Kernel
    h: Kernel
    d: int = 1
    B_f: float = 0.0
    L_f: float = 0.0
    B_g: float = 0.0
    L_g: float = 0.0
    B_h: float = 0.0
    L_h: float = 0.0
    description: str = "user"

    def __post_init__(self):
        if self.d < 1:
            raise ValidationError("state dimension must be >= 1")
        object.__setattr__(self, "g", as_kernel(self.g, vector=True))
        object.__setattr__(self, "h", as_kernel(self.h, vector=False))
        for name in ("B_f", "L_f", "B_g", "L_g", "B_h", "L_h"):
            val = float(getattr(self, name))
            if not math.isfinite(val) or val < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {val}")
            object.__setattr__(self, name, val)

    def constants(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("B_f", "L_f", "B_g", "L_g", "B_h", "L_h")}


# built-in families: each returns (map, bound, lipschitz).  Linear maps are
# unbounded on R^d, so their B is stated on the ball of the given radius.

def _drift_family(name: str, d: int, radius: float, **p):
    sqd = math.sqrt(d)
    if name == "zero":
        return (lambda x: np.zeros_like(x)), 0.0, 0.0
    if name == "constant":
        value = np.broadcast_to(np.asarray(p.get("value", 0.0), dtype=float), (d,)).copy()
        return (lambda x: np.broadcast_to(value, np.shape(x)).copy()), float(np.linalg.norm(value)), 0.0
    if name == "linear":
        rate = float(p.get("rate", 1.0))
        return (lambda x: -rate * x), abs(rate) * radius, abs(rate)
    if name == "tanh":
        rate = float(p.get("rate", 1.0))
        return (lambda x: -rate * np.tanh(x)), abs(rate) * sqd, abs(rate)
    raise ValidationError(f"unknown drift family {name!r}")


def _interaction_family(name: str, d: int, radius: float, **p):
    sqd = math.sqrt(d)
    if name == "zero":
        return Kernel(lambda x, y: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y))), "zero"), 0.0, 0.0
    rate = float(p.get("rate", 1.0))
    if name == "linear":
        return Kernel(lambda x, y: rate * (y - x), "linear", rate), 2 * abs(rate) * radius, abs(rate)
    if name == "tanh":
        return Kernel(lambda x, y: rate * np.tanh(y - x)), abs(rate) * sqd, abs(rate)
    if name == "sine":
        return Kernel(lambda x, y: rate * np.sin(y - x), "sine", rate), abs(rate) * sqd, abs(rate)
    raise ValidationError(f"unknown interaction family {name!r}")


def _noise_family(name: str, d: int, radius: float, **p):
    if name == "zero":
        return Kernel(lambda x, y: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y))[:-1]), "zero",
                      vector=False), 0.0, 0.0
    sigma = float(p.get("sigma", 1.0))
    if name == "constant":
        return Kernel(lambda x, y: np.full(np.broadcast_shapes(np.shape(x), np.shape(y))[:-1], sigma),
                      "constant", sigma, vector=False), abs(sigma), 0.0
    if name == "saturating":
        beta = float(p.get("beta", 0.5))

        def h(x, y):
            return sigma * (1.0 + beta * np.tanh(np.linalg.norm(y - x, axis=-1)))

        return Kernel(h, vector=False), abs(sigma) * (1 + abs(beta)), abs(sigma * beta)
    raise ValidationError(f"unknown noise family {name!r}")


DRIFT_FAMILIES = ("zero", "constant", "linear", "tanh")
INTERACTION_FAMILIES = ("zero", "linear", "tanh", "sine")
NOISE_FAMILIES = ("zero", "constant", "saturating")


def builtin_coefficients(drift: Mapping | None = None, interaction: Mapping | None = None,
                         noise: Mapping | None = None, d: int = 1, radius: float = 10.0) -> CoefficientSet:
    """Assemble a :class:`CoefficientSet` from named families.

    Each argument is a mapping with a ``family`` key plus parameters, e.g.
    ``{"family": "linear", "rate": 1.0}``; ``None`` means the zero family.
    """
    def split(spec):
        spec = dict(spec or {"family": "zero"})
        return spec.pop("family"), spec

    fn, fp = split(drift)
    gn, gp = split(interaction)
    hn, hp = split(noise)
    f, B_f, L_f = _drift_family(fn, d, radius, **fp)
    g, B_g, L_g = _interaction_family(gn, d, radius, **gp)
    h, B_h, L_h = _noise_family(hn, d, radius, **hp)
    return CoefficientSet(f, g, h, d, B_f, L_f, B_g, L_g, B_h, L_h, description=f"f={fn} g={gn} h={hn}")


# --------------------------------------------------------------------------
# empirical validation of (H)


@dataclass(frozen=True)
class BoundsReport:
    observed: dict
    declared: dict
    passed: dict

    @property
    def ok(self) -> bool:
        return all(self.passed.values())


def _finite_or_raise(name, values, points):
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if bad.ndim > 1:
        bad = bad.reshape(bad.shape[0], -1).any(axis=1)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        where = ", ".join(np.array2string(np.asarray(p)[i], precision=6) for p in points)
        raise CoefficientError(f"{name} is not finite at {where}")


def validate_bounds(cs: CoefficientSet, box, samples: int, seed: int, slack: float = 1e-12) -> BoundsReport:
    """Monte Carlo check of the declared bounds and Lipschitz constants on a box.

    ``box`` is ``(low, high)`` with scalars or length-``d`` arrays.  Lipschitz
    quotients for the pairwise maps use ``|x1 - x2| + |y1 - y2|`` in the
    denominator.
    """
    if samples < 2:
        raise ValidationError("need at least two samples")
    d = cs.d
    low = np.broadcast_to(np.asarray(box[0], dtype=float), (d,))
    high = np.broadcast_to(np.asarray(box[1], dtype=float), (d,))
    if np.any(high < low):
        raise ValidationError("box upper corner below lower corner")
    rng = np.random.default_rng(seed)
    draw = lambda: low + (high - low) * rng.random((samples, d))
    x1, x2, y1, y2 = draw(), draw(), draw(), draw()
    norm = lambda v: np.linalg.norm(np.reshape(v, (samples, -1)), axis=1)

    f1, f2 = cs.f(x1), cs.f(x2)
    _finite_or_raise("f", f1, (x1,))
    _finite_or_raise("f", f2, (x2,))
    g1, g2 = cs.g(x1, y1), cs.g(x2, y2)
    _finite_or_raise("g", g1, (x1, y1))
    _finite_or_raise("g", g2, (x2, y2))
    h1, h2 = cs.h(x1, y1), cs.h(x2, y2)
    _finite_or_raise("h", h1, (x1, y1))
    _finite_or_raise("h", h2, (x2, y2))

    def quotient(a, b, dist):
        num = norm(a - b)
        ok = dist > 0
        return float(np.max(num[ok] / dist[ok])) if np.any(ok) else 0.0

    dx = norm(x1 - x2)
    dpair = dx + norm(y1 - y2)
    observed = {
        "B_f": float(max(norm(f1).max(), norm(f2).max())),
        "L_f": quotient(f1, f2, dx),
        "B_g": float(max(norm(g1).max(), norm(g2).max())),
        "L_g": quotient(g1, g2, dpair),
        "B_h": float(max(np.abs(h1).max(), np.abs(h2).max())),
        "L_h": quotient(np.reshape(h1, (samples, 1)), np.reshape(h2, (samples, 1)), dpair),
    }
    declared = cs.constants()
    passed = {k: observed[k] <= declared[k] + slack for k in observed}
    return BoundsReport(observed, declared, passed)


# --------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class ConstantsReport:
    c_picard: float
    c1_hat: float
    c2_hat: float
    c1: float
    c2: float
    c_compare: float
    c_u: float
    norm_eta: float
    norm_eta_hat: float
    growth_stat: float
    T: float

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


def _exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _ratio(num, den):
    # 0/0 arises only when every bound vanishes; the product it enters is then 0
    return num / den if den > 0 else 0.0


def theoretical_constants(cs: CoefficientSet, eta: DigraphMeasure, eta_hat: DigraphMeasure,
                          T: float, growth_stat: float) -> ConstantsReport:
    """Closed-form constants of the contraction, perturbation and coupling estimates.

    The perturbed DGM in the continuity estimates is taken to be the argument
    itself, so ``‖η₁‖ = ‖η‖`` and ``‖η̂₁‖ = ‖η̂‖``.  The unspecified O(1)
    factor of the coupling constant is set to ``growth_stat``.
    """
    if not T > 0:
        raise ValidationError("T must be positive")
    n, nh = dgm_norm(eta), dgm_norm(eta_hat)
    Bg2, Bh2 = cs.B_g ** 2, cs.B_h ** 2
    Lf2, Lg2, Lh2 = cs.L_f ** 2, cs.L_g ** 2, cs.L_h ** 2

    c_picard = 12 * (Lf2 + Lg2 * n ** 2 + Lh2 * nh ** 2)

    pre_hat = 2 * Bg2 * n ** 2 + 3 * Bh2 * nh ** 2
    c1_hat = 3 * pre_hat * _exp((3 * Lf2 + 3 * (2 * Lg2 * n ** 2 + 3 * Lh2 * nh ** 2)) * T) if pre_hat else 0.0
    c2_hat = _ratio(3 * Bh2 * T, pre_hat)

    pre = 3 * Bg2 * n ** 2 + 2 * Bh2 * nh ** 2
    c1 = 3 * pre * _exp((3 * Lf2 + 3 * (3 * Lg2 * n ** 2 + 2 * Lh2 * nh ** 2)) * T) if pre else 0.0
    c2 = _ratio(3 * Bg2 * T, pre)

    c_compare = 48 * T * _exp((16 * Lf2 + 96 * (Lg2 + Lh2) * growth_stat) * T)
    c_u = 16 * _exp(16 * (Lf2 + 2 * Lg2 * n ** 2 + 2 * Lh2 * nh ** 2) * T)
    return ConstantsReport(c_picard, c1_hat, c2_hat, c1, c2, c_compare, c_u, n, nh, float(growth_stat), float(T))


def coupling_bound(rep: ConstantsReport, cs: CoefficientSet, n: int, initial_gap_sq: float,
                   dinf_drift: float, dinf_noise: float) -> float:
    """Right-hand side of the particle / representative coupling estimate.

    ``initial_gap_sq`` is ``(1/N) sum_i E|X_i(0) - X_{i/N}(0)|^2``.
    """
    c = rep.c_compare
    graph = (2.0 / n) * (cs.B_g ** 2 + cs.B_h ** 2) * rep.growth_stat
    graph += cs.B_g ** 2 * dinf_drift ** 2 + cs.B_h ** 2 * dinf_noise ** 2
    return c * 16 * initial_gap_sq + c * graph


def _perturbation(c1, c2, T, dinf):
    if c1 == 0 or c2 == 0 or dinf == 0:
        return 0.0
    return c1 * c2 * _exp(c1 * T) * dinf ** 2


def noise_perturbation_bound(rep: ConstantsReport, dinf_noise: float) -> float:
    """Bound on the squared path distance when only the noise DGM is perturbed (inf on overflow)."""
    return _perturbation(rep.c1_hat, rep.c2_hat, rep.T, dinf_noise)


def drift_perturbation_bound(rep: ConstantsReport, dinf_drift: float) -> float:
    """Bound on the squared path distance when only the drift DGM is perturbed (inf on overflow)."""
    return _perturbation(rep.c1, rep.c2, rep.T, dinf_drift)


# --------------------------------------------------------------------------
# initial laws


INITIAL_FAMILIES = ("point", "uniform", "gaussian", "gaussian_u")


@dataclass(frozen=True)
class InitialLaw:
    """Initial distribution, possibly depending on the label ``u``.

    Parameters by family: ``point``: ``x0``; ``uniform``: ``a``, ``b``;
    ``gaussian``: ``m``, ``s2``; ``gaussian_u``: ``m0``, ``alpha``, ``s2``
    (mean ``m0 + alpha * u`` along the first axis).
    """

    family: str
    params: Mapping = field(default_factory=dict)
    d: int = 1

    def __post_init__(self):
        if self.family not in INITIAL_FAMILIES:
            raise ValidationError(f"unknown initial family {self.family!r}")
        p = dict(self.params)
        if self.family in ("gaussian", "gaussian_u") and float(p.get("s2", 1.0)) < 0:
            raise ValidationError("variance s2 must be >= 0")
        if self.family == "gaussian_u" and float(p.get("alpha", 0.0)) < 0:
            raise ValidationError("alpha must be >= 0")
        if self.family == "uniform" and np.any(np.asarray(p.get("b", 1.0)) < np.asarray(p.get("a", 0.0))):
            raise ValidationError("uniform law needs a <= b")
        object.__setattr__(self, "params", p)

    @property
    def lipschitz_alpha(self) -> float:
        return float(self.params.get("alpha", 0.0)) if self.family == "gaussian_u" else 0.0

    def _vec(self, key, default):
        return np.broadcast_to(np.asarray(self.params.get(key, default), dtype=float), (self.d,))

    def mean(self, u: float) -> np.ndarray:
        if self.family == "point":
            return self._vec("x0", 0.0).copy()
        if self.family == "uniform":
            return 0.5 * (self._vec("a", 0.0) + self._vec("b", 1.0))
        if self.family == "gaussian":
            return self._vec("m", 0.0).copy()
        m = self._vec("m0", 0.0).copy()
        m[0] += self.lipschitz_alpha * u
        return m

    def variance(self) -> np.ndarray:
        """Per-coordinate variance (independent of ``u``)."""
        if self.family == "point":
            return np.zeros(self.d)
        if self.family == "uniform":
            return (self._vec("b", 1.0) - self._vec("a", 0.0)) ** 2 / 12
        return self._vec("s2", 1.0).copy()


def initial_states(law: InitialLaw, labels, seed: int, tag: int = INIT_PARTICLE, group: int = 0,
                   indices=None) -> np.ndarray:
    """One draw per path; path ``p`` with label ``labels[p]`` uses stream ``indices[p]``."""
    labels = np.atleast_1d(np.asarray(labels, dtype=float))
    indices = np.arange(labels.size) if indices is None else np.atleast_1d(indices)
    d = law.d
    if law.family == "point":
        return np.broadcast_to(law.mean(0.0), (labels.size, d)).copy()
    if law.family == "uniform":
        a, b = law._vec("a", 0.0), law._vec("b", 1.0)
        return a + (b - a) * keyed_uniforms(seed, tag, group, indices, (d,))
    z = keyed_normals(seed, tag, group, indices, (d,))
    means = np.stack([law.mean(u) for u in labels]) if law.family == "gaussian_u" else law.mean(0.0)
    return means + np.sqrt(law.variance()) * z


def sample_initial(law: InitialLaw, u: float, count: int, seed: int) -> np.ndarray:
    """``count`` i.i.d. draws from the law at label ``u``; shape ``(count, d)``."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    return initial_states(law, np.full(count, float(u)), seed)
