"""Rearrangement structure of the row-matrix image: quantile profiles, the
sorted-vector transport distance, sparse-mass functionals, separated nets on
the sphere, and the three-part split of the composite sum.

The guiding fact: for a rotation-invariant row law the sorted coordinates of
every image vector concentrate around one deterministic profile, so the image
of the sphere has small diameter in the sorted (transport) distance.  That is
what the diagnostics here quantify on a concrete realization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import randsrc
from .ensemble import GammaRealization, DRealization, apply_gamma, apply_gamma_many
from .normspace import NormSpace, norm_many
from .randsrc import DistributionSpec, RngStream


def rearrange_nondecreasing(x: np.ndarray) -> np.ndarray:
    """Sorted copy (nondecreasing); same multiset."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("entries must be finite")
    return np.sort(x, kind="stable")


def w2(x: np.ndarray, y: np.ndarray) -> float:
    """Minimal l2 distance between x and any permutation of y.

    Equals the l2 distance of the two nondecreasing rearrangements (the 1-D
    optimal-coupling identity), which is also the second-order transport
    distance between the two empirical measures, scaled by sqrt(m).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("w2 needs two equal-length vectors")
    return float(np.linalg.norm(np.sort(x) - np.sort(y)))


@dataclass(frozen=True, eq=False)
class QuantileProfile:
    """Block averages of the inverse CDF of the directional marginal.

    values[i] = m * integral of F^{-1} over ((i/m, (i+1)/m]); nondecreasing.
    n_samples = 0 marks an exact (closed-form) profile.
    """

    m: int
    values: np.ndarray = field(repr=False)
    spec: DistributionSpec | None = None
    n_samples: int = 0
    method: str = "exact"

    def __post_init__(self):
        if self.values.shape != (self.m,):
            raise ValueError("profile must have m values")
        if np.any(np.diff(self.values) < -1e-12):
            raise ValueError("profile must be nondecreasing")


def _norm_ppf(p: float) -> float:
    """Standard normal quantile by Newton iteration on erf (right-continuous)."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    # crude initial guess, then Newton on Phi(x) - p
    q = p - 0.5
    if abs(q) < 0.425:
        x = q * 2.50662827463
    else:
        r = math.sqrt(-math.log(min(p, 1.0 - p)))
        x = math.copysign(r * 1.4142135623730951 - 1.0 / (r + 1.0), q)
    for _ in range(60):
        err = 0.5 * (1.0 + math.erf(x / math.sqrt(2.0))) - p
        pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        if pdf == 0.0:
            break
        step = err / pdf
        x -= step
        if abs(step) < 1e-15 * max(1.0, abs(x)):
            break
    return x


def _two_point_profile(m: int) -> np.ndarray:
    """Exact profile of the symmetric +-1 law: block integrals of a step quantile."""
    edges = np.arange(m + 1) / m
    lo, hi = edges[:-1], edges[1:]
    below = np.minimum(hi, 0.5) - np.minimum(lo, 0.5)   # mass of the block under p = 1/2
    above = (hi - lo) - below
    return m * (above - below)


def _gaussian_profile(m: int) -> np.ndarray:
    """Exact gaussian profile: the antiderivative of the probit is -pdf(probit)."""
    pdf_at_edges = np.empty(m + 1)
    pdf_at_edges[0] = pdf_at_edges[m] = 0.0
    for k in range(1, m):
        x = _norm_ppf(k / m)
        pdf_at_edges[k] = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return m * (pdf_at_edges[:-1] - pdf_at_edges[1:])


def _pareto_scalar_profile(m: int, a: float) -> np.ndarray:
    """Exact profile of the symmetrized unit-variance power-law scalar."""
    x0 = randsrc.pareto_scale(a)
    c = 1.0 - 1.0 / a

    def antideriv(p: float) -> float:
        # continuous across p = 1/2 where the sign of the quantile flips
        if p <= 0.5:
            return -x0 * (2.0 * p) ** c / (2.0 * c)
        return -x0 * (2.0 * (1.0 - p)) ** c / (2.0 * c)

    edges = [antideriv(k / m) for k in range(m + 1)]
    return m * np.diff(edges)


def _marginal_sampler(spec: DistributionSpec):
    """Bulk sampler of <X, e1> for the supported row laws."""
    if spec.kind == randsrc.GAUSSIAN:
        return lambda rng, size: randsrc.sample_gaussian(1, rng, size=size)[:, 0]
    if spec.kind == randsrc.ROTINV_PRODUCT:
        return lambda rng, size: randsrc.sample_X(spec, rng, size=size)[:, 0]
    if spec.kind == randsrc.HEAVY_SCALAR:
        return lambda rng, size: randsrc.sample_heavy_scalar(spec, rng, size=size)
    raise ValueError(f"no directional marginal sampler for kind {spec.kind!r}")


def quantile_profile(xspec: DistributionSpec, direction_free: bool, m: int,
                     n_samples: int, rng: RngStream) -> QuantileProfile:
    """The m-block quantile profile of the directional marginal of the row law.

    Rotation invariance (asserted by the caller through ``direction_free``)
    makes the profile the same in every direction, so it is computed along e1.
    Laws with a closed-form marginal quantile (gaussian, two-point, power-law
    scalar) get exact block integrals; otherwise the profile is the exact
    block integral of the *empirical* right-continuous quantile of a
    symmetrized sample of n_samples draws.
    """
    if m < 1:
        raise ValueError("m must be positive")
    if not direction_free or not randsrc.is_rotation_invariant(xspec):
        raise ValueError("profile is only direction-free for rotation-invariant laws")

    heavy_pareto = (xspec.kind in (randsrc.HEAVY_SCALAR, randsrc.ROTINV_PRODUCT)
                    and xspec.tail_family == "symmetrized-pareto")
    if xspec.kind == randsrc.GAUSSIAN:
        return QuantileProfile(m, _gaussian_profile(m), xspec, 0, "exact")
    if xspec.dim == 1 and xspec.kind in (randsrc.SPHERE, randsrc.RADEMACHER):
        return QuantileProfile(m, _two_point_profile(m), xspec, 0, "exact")
    if heavy_pareto and xspec.dim == 1:
        return QuantileProfile(m, _pareto_scalar_profile(m, xspec.tail_index), xspec, 0, "exact")

    if n_samples < 100 * m:
        raise ValueError("need n_samples >= 100*m for a stable profile")
    half = (n_samples + 1) // 2
    raw = _marginal_sampler(xspec)(rng, half)
    sample = np.sort(np.concatenate([raw, -raw]))  # symmetrized: exact antisymmetry
    n = sample.size
    # lambda_i = m * (C(i/m) - C((i-1)/m)) with C the running integral of the
    # empirical step quantile; i*n/m split into integer + fractional parts so
    # the block boundaries are exact.
    prefix = np.concatenate([[0.0], np.cumsum(sample)])
    idx = np.arange(m + 1, dtype=np.int64) * n
    whole, rem = np.divmod(idx, m)
    frac_term = np.where(rem > 0, sample[np.minimum(whole, n - 1)] * (rem / m), 0.0)
    c_edges = (prefix[whole] + frac_term) / n
    values = m * np.diff(c_edges)
    return QuantileProfile(m, values, xspec, n, "monte-carlo")


def rearrangement_deviation(g: GammaRealization, directions: np.ndarray,
                            profile: QuantileProfile) -> float:
    """max over directions of (1/m sum |sorted(<X_i,u>) - lambda_i|^2)^(1/2).

    A lower bound for the corresponding supremum over the whole sphere.
    """
    if profile.m != g.m:
        raise ValueError("profile length must equal the number of rows")
    units = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    if units.shape[1] != g.d:
        raise ValueError("directions must be length-d vectors")
    dots = np.sort(g.rows @ units.T, axis=0)
    devs = np.sqrt(np.mean((dots - profile.values[:, None]) ** 2, axis=0))
    return float(np.max(devs))


def pair_w2_diameter(g: GammaRealization, directions: np.ndarray) -> float:
    """max over direction pairs of (1/m sum |sorted dots difference|^2)^(1/2)."""
    units = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    dots = np.sort(g.rows @ units.T, axis=0)
    k = dots.shape[1]
    best = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            best = max(best, float(np.linalg.norm(dots[:, i] - dots[:, j])))
    return best / math.sqrt(g.m)


def _top_s_mass(g: GammaRealization, s: int, units: np.ndarray) -> np.ndarray:
    """Per-direction l2 norm of the s largest-magnitude scaled coordinates."""
    y = np.abs(apply_gamma_many(g, units.T))
    if s >= g.m:
        return np.sqrt(np.sum(y * y, axis=0))
    top = np.partition(y, g.m - s, axis=0)[g.m - s:]
    return np.sqrt(np.sum(top * top, axis=0))


def h_sm(g: GammaRealization, s: int, directions: np.ndarray,
         refine: bool = False, steps: int = 50, restarts: int = 5) -> float:
    """Largest s-sparse l2 mass of the scaled image over the given directions.

    For a fixed direction the inner maximum over index sets is exact (top-s
    selection); over the sphere this is a net-based lower estimate, optionally
    sharpened by projected gradient ascent from the best starting directions.
    The true spherical supremum is not computable; treat the result as an
    estimate from below.
    """
    if not 1 <= s <= g.m:
        raise ValueError("s must satisfy 1 <= s <= m")
    units = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    vals = _top_s_mass(g, s, units)
    best = float(np.max(vals))
    if not refine:
        return best
    starts = units[np.argsort(-vals, kind="stable")[:restarts]]
    rows = g.rows
    for u0 in starts:
        u = u0 / np.linalg.norm(u0)
        for _ in range(steps):
            y = rows @ u
            if s < g.m:
                cut = np.partition(np.abs(y), g.m - s)[g.m - s]
                mask = np.abs(y) >= cut
            else:
                mask = np.ones_like(y, dtype=bool)
            grad = rows[mask].T @ y[mask]
            gn = np.linalg.norm(grad)
            if gn == 0.0:
                break
            u = u + 0.05 * grad / gn
            u /= np.linalg.norm(u)
        best = max(best, float(_top_s_mass(g, s, u[None, :])[0]))
    return best


def xi(g: GammaRealization, u: np.ndarray, s: int) -> float:
    """The (s+1)-th largest magnitude among the scaled coordinates of the image.

    Always satisfies xi * sqrt(s) <= h_sm at the same direction.
    """
    if not 1 <= s < g.m:
        raise ValueError("s must satisfy 1 <= s < m")
    y = np.abs(apply_gamma(g, u))
    return float(np.partition(y, g.m - s - 1)[g.m - s - 1])


@dataclass(frozen=True, eq=False)
class Net:
    """A maximal epsilon-separated subset of the unit sphere (greedy packing)."""

    d: int
    epsilon: float
    points: np.ndarray = field(repr=False)
    stream: RngStream | None = None
    complete: bool = True
    covering_certified: bool = False

    def __len__(self) -> int:
        return self.points.shape[0]


def build_net(d: int, epsilon: float, rng: RngStream, max_points: int = 8192) -> Net:
    """Randomized greedy packing: accept sphere samples at distance >= epsilon
    from all accepted points; stop after 50 * |accepted| consecutive rejections.

    Stopping via max_points before the rejection criterion flags the net as
    incomplete.  A covering certificate is then computed from 10 * |points|
    fresh probes (each must lie within epsilon of the net).
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if not 0.0 < epsilon <= 2.0:
        raise ValueError("epsilon must lie in (0, 2]")
    if max_points < 1:
        raise ValueError("max_points must be >= 1")
    gen = rng.child(0).generator()
    pts = np.empty((max_points, d))
    count = 0
    rejections = 0
    complete = False
    batch = 256
    while True:
        cand = gen.standard_normal((batch, d))
        norms = np.linalg.norm(cand, axis=1)
        ok = norms > 0.0
        cand = cand[ok] / norms[ok, None]
        stop = False
        for x in cand:
            if count == 0 or float(np.min(np.linalg.norm(pts[:count] - x, axis=1))) >= epsilon:
                pts[count] = x
                count += 1
                rejections = 0
                if count == max_points:
                    stop = True
                    break
            else:
                rejections += 1
                if rejections >= 50 * count:
                    complete = True
                    stop = True
                    break
        if stop:
            break
    points = pts[:count].copy()
    probe_gen = rng.child(1).generator()
    probes = probe_gen.standard_normal((10 * count, d))
    probes /= np.linalg.norm(probes, axis=1)[:, None]
    d2 = np.sum(probes * probes, axis=1)[:, None] - 2.0 * probes @ points.T \
        + np.sum(points * points, axis=1)[None, :]
    certified = bool(np.all(np.sqrt(np.maximum(d2, 0.0)).min(axis=1) <= epsilon))
    return Net(d=d, epsilon=epsilon, points=points, stream=rng,
               complete=complete, covering_certified=certified)


def default_s(dstar: float, m: int, c1: float = 1.0) -> int:
    """floor(c1 * dstar / log(e m / dstar)), clamped into [1, m-1]."""
    s = math.floor(c1 * dstar / math.log(math.e * m / dstar))
    return max(1, min(s, m - 1))


def default_r(epsilon: float, dstar: float, s: int, c2: float = 1.0) -> int:
    """floor(c2 * min(epsilon^2 * dstar, s)), clamped to >= 1."""
    return max(1, math.floor(c2 * min(epsilon * epsilon * dstar, s)))


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Split of the composite sum into the large-row-coordinate part, the
    large-column-norm part, and the concentrating remainder."""

    clubs: np.ndarray = field(repr=False)
    diamonds: np.ndarray = field(repr=False)
    hearts: np.ndarray = field(repr=False)
    I_large: np.ndarray = field(repr=False)
    J_big: np.ndarray = field(repr=False)
    xi: float = 0.0
    s: int = 0
    r: int = 0

    @property
    def j_outside_count(self) -> int:
        """|J_big minus I_large|, to be compared with the target budget r."""
        return int(np.setdiff1d(self.J_big, self.I_large).size)


def column_norms(dr: DRealization, space: NormSpace) -> np.ndarray:
    """||Z_j|| for every column, one block pass (direction independent)."""
    out = np.empty(dr.m)
    for b in range(dr._n_blocks()):
        lo, hi = dr._block_cols(b)
        out[lo:hi] = norm_many(space, dr.block(b))
    return out


def decompose(g: GammaRealization, dr: DRealization, space: NormSpace,
              u: np.ndarray, s: int, r: int, phi_value: float,
              col_norms: np.ndarray | None = None) -> Decomposition:
    """Three-part split of sum_i (<X_i,u>/sqrt(m)) Z_i at direction u.

    I_large: indices of the s largest |<X_i,u>| (ties broken by lower index).
    J_big: indices whose term norm |y_j| ||Z_j|| reaches xi * phi_value, with
    xi the realized (s+1)-th largest scaled coordinate magnitude.  The parts
    sum over I_large, its complement intersected with J_big, and the rest.
    col_norms may carry a precomputed column_norms(dr, space).
    """
    if not 1 <= s < g.m:
        raise ValueError("s must satisfy 1 <= s < m")
    if phi_value <= 0.0:
        raise ValueError("phi_value must be positive")
    if g.m != dr.m or space.n != dr.n:
        raise ValueError("dimension mismatch between realizations and space")
    y = apply_gamma(g, np.asarray(u, dtype=np.float64))
    absy = np.abs(y)
    order = np.argsort(-absy, kind="stable")
    i_large = np.sort(order[:s])
    xi_val = float(absy[order[s]])

    if col_norms is None:
        col_norms = column_norms(dr, space)
    j_big = np.flatnonzero(absy * col_norms >= xi_val * phi_value)

    in_i = np.zeros(g.m, dtype=bool)
    in_i[i_large] = True
    in_j = np.zeros(g.m, dtype=bool)
    in_j[j_big] = True
    weights = np.zeros((g.m, 3))
    weights[in_i, 0] = y[in_i]
    weights[~in_i & in_j, 1] = y[~in_i & in_j]
    weights[~in_i & ~in_j, 2] = y[~in_i & ~in_j]
    parts = dr.apply_many(weights)
    return Decomposition(clubs=parts[:, 0], diamonds=parts[:, 1], hearts=parts[:, 2],
                         I_large=i_large, J_big=j_big, xi=xi_val, s=s, r=r)
