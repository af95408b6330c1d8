"""Reproducible sampling of every random object the ensemble construction uses.

All randomness flows through value-like ``RngStream`` handles backed by the
counter-based Philox generator, keyed by (seed, stream_id).  Samplers are pure:
calling the same operation twice with the same stream returns bitwise-identical
output, independent of worker count or interleaving with other streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._util import mix64

GAUSSIAN = "gaussian-iid"
RADEMACHER = "rademacher-iid"
SPHERE = "uniform-sphere"
HEAVY_SCALAR = "heavy-scalar"
ROTINV_PRODUCT = "rotinv-product"

_KINDS = frozenset({GAUSSIAN, RADEMACHER, SPHERE, HEAVY_SCALAR, ROTINV_PRODUCT})
_TAIL_FAMILIES = frozenset({"symmetrized-pareto", "student-t"})
_HEAVY_KINDS = frozenset({HEAVY_SCALAR, ROTINV_PRODUCT})

# Heavy-tail index must exceed 4 so fourth moments exist and the empirical
# second-moment form of the row matrix can stabilize at all.
MIN_TAIL_INDEX = 4.0
DEFAULT_TAIL_INDEX = 7.5


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream_id) pair naming one logical random stream.

    Streams with distinct ids are statistically independent; equal pairs
    reproduce the same draws bitwise.  Safe to pass between workers.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF,
                        self.stream_id & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "RngStream":
        """Derive the index-th substream; children never collide with parents."""
        return RngStream(self.seed, mix64(self.stream_id, index))


@dataclass(frozen=True)
class DistributionSpec:
    """Description of one vector or scalar law used by the construction.

    ``tail_family``/``tail_index`` only apply to the heavy-tailed scalar factor
    (kinds ``heavy-scalar`` and ``rotinv-product``); the scalar is normalized
    to unit variance and symmetric about 0.
    """

    kind: str
    dim: int = 1
    tail_family: str | None = None
    tail_index: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.kind in _HEAVY_KINDS:
            family = self.tail_family or "symmetrized-pareto"
            index = DEFAULT_TAIL_INDEX if self.tail_index is None else float(self.tail_index)
            if family not in _TAIL_FAMILIES:
                raise ValueError(f"unknown tail family {family!r}")
            if index <= MIN_TAIL_INDEX:
                raise ValueError(
                    f"tail_index must exceed {MIN_TAIL_INDEX} (got {index}); "
                    "below that the row matrix loses its extreme singular value control"
                )
            object.__setattr__(self, "tail_family", family)
            object.__setattr__(self, "tail_index", index)
            if self.kind == HEAVY_SCALAR and self.dim != 1:
                raise ValueError("heavy-scalar is one-dimensional")
        else:
            if self.tail_family is not None or self.tail_index is not None:
                raise ValueError(f"tail parameters are not meaningful for kind {self.kind!r}")

    def scalar_spec(self) -> "DistributionSpec":
        """The heavy scalar factor of a rotinv-product spec."""
        if self.kind not in _HEAVY_KINDS:
            raise ValueError("only heavy-tailed specs carry a scalar factor")
        return DistributionSpec(HEAVY_SCALAR, 1, self.tail_family, self.tail_index)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim}
        if self.kind in _HEAVY_KINDS:
            out["tail_family"] = self.tail_family
            out["tail_index"] = self.tail_index
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DistributionSpec":
        return cls(kind=d["kind"], dim=int(d.get("dim", 1)),
                   tail_family=d.get("tail_family"), tail_index=d.get("tail_index"))


def is_rotation_invariant(spec: DistributionSpec) -> bool:
    """Whether the law is unchanged by orthogonal maps (in dim 1: symmetric)."""
    if spec.kind in (GAUSSIAN, ROTINV_PRODUCT, SPHERE):
        return True
    return spec.dim == 1 and spec.kind in (RADEMACHER, HEAVY_SCALAR)


def pareto_scale(a: float) -> float:
    """Lower cutoff x0 making the symmetrized Pareto(a) have unit variance.

    The two-sided density is proportional to |x|^-(a+1) on |x| >= x0, so
    E v^2 = a x0^2 / (a - 2) and x0 = sqrt((a - 2) / a).
    """
    return math.sqrt((a - 2.0) / a)


def heavy_moment(spec: DistributionSpec, p: float) -> float:
    """E |v|^p of the heavy scalar, when finite (p < tail index)."""
    sub = spec.scalar_spec()
    a = sub.tail_index
    if p >= a:
        raise ValueError(f"moment of order {p} diverges at tail index {a}")
    if sub.tail_family == "symmetrized-pareto":
        x0 = pareto_scale(a)
        return a * x0**p / (a - p)
    # variance-normalized Student-t with nu = a degrees of freedom
    nu = a
    scale = math.sqrt((nu - 2.0) / nu)
    log_mom = (
        p / 2.0 * math.log(nu)
        + math.lgamma((p + 1.0) / 2.0)
        + math.lgamma((nu - p) / 2.0)
        - math.lgamma(0.5)
        - math.lgamma(nu / 2.0)
    )
    return scale**p * math.exp(log_mom)


def norm_equivalence_constant(spec: DistributionSpec, p: float = 4.0) -> float:
    """The Lp/L2 moment-growth constant of the heavy scalar (metadata only)."""
    return heavy_moment(spec, p) ** (1.0 / p)


def sample_gaussian(n: int, rng: RngStream, size: int | None = None) -> np.ndarray:
    """iid standard normal coordinates; (size, n) when size is given."""
    if n < 1:
        raise ValueError("n must be >= 1")
    g = rng.generator()
    shape = (n,) if size is None else (size, n)
    return g.standard_normal(shape)


def sample_rademacher(n: int, rng: RngStream, size: int | None = None) -> np.ndarray:
    """iid uniform signs in {-1, +1}."""
    if n < 1:
        raise ValueError("n must be >= 1")
    g = rng.generator()
    shape = (n,) if size is None else (size, n)
    return (g.integers(0, 2, size=shape, dtype=np.int8).astype(np.float64) * 2.0 - 1.0)


def sample_sphere(d: int, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Uniform points on the Euclidean unit sphere, via normalized gaussians."""
    if d < 1:
        raise ValueError("d must be >= 1")
    g = rng.generator()
    count = 1 if size is None else size
    out = np.empty((count, d))
    filled = 0
    while filled < count:
        block = g.standard_normal((count - filled, d))
        norms = np.linalg.norm(block, axis=1)
        ok = norms > 0.0  # an all-zero draw has probability 0; resample it
        took = int(ok.sum())
        out[filled:filled + took] = block[ok] / norms[ok, None]
        filled += took
    return out[0] if size is None else out


def _heavy_bulk(spec: DistributionSpec, g: np.random.Generator, count: int) -> np.ndarray:
    sub = spec.scalar_spec()
    a = sub.tail_index
    if sub.tail_family == "symmetrized-pareto":
        u = 1.0 - g.random(count)          # in (0, 1], keeps the inverse CDF finite
        mag = pareto_scale(a) * u ** (-1.0 / a)
        signs = g.integers(0, 2, size=count, dtype=np.int8).astype(np.float64) * 2.0 - 1.0
        return mag * signs
    nu = a
    return g.standard_t(nu, size=count) * math.sqrt((nu - 2.0) / nu)


def sample_heavy_scalar(spec: DistributionSpec, rng: RngStream, size: int | None = None):
    """Symmetric unit-variance heavy-tailed scalar draws."""
    if spec.kind != HEAVY_SCALAR:
        raise ValueError("spec must have kind heavy-scalar")
    g = rng.generator()
    out = _heavy_bulk(spec, g, 1 if size is None else size)
    return float(out[0]) if size is None else out


def sample_X(spec: DistributionSpec, rng: RngStream, size: int | None = None) -> np.ndarray:
    """The rotation-invariant product sqrt(d) * W * v.

    W is uniform on the sphere in R^d and v is the independent heavy scalar;
    the product is isotropic and rotation invariant by construction.
    """
    if spec.kind != ROTINV_PRODUCT:
        raise ValueError("spec must have kind rotinv-product")
    d = spec.dim
    g = rng.generator()
    count = 1 if size is None else size
    w = np.empty((count, d))
    filled = 0
    while filled < count:
        block = g.standard_normal((count - filled, d))
        norms = np.linalg.norm(block, axis=1)
        ok = norms > 0.0
        took = int(ok.sum())
        w[filled:filled + took] = block[ok] / norms[ok, None]
        filled += took
    v = _heavy_bulk(spec, g, count)
    x = math.sqrt(d) * w * v[:, None]
    return x[0] if size is None else x


def draw_rows(spec: DistributionSpec, m: int, rng: RngStream) -> np.ndarray:
    """m iid draws of the vector law as rows of an (m, dim) array."""
    if spec.kind == GAUSSIAN:
        return sample_gaussian(spec.dim, rng, size=m)
    if spec.kind == RADEMACHER:
        return sample_rademacher(spec.dim, rng, size=m)
    if spec.kind == ROTINV_PRODUCT:
        return sample_X(spec, rng, size=m)
    raise ValueError(f"kind {spec.kind!r} is not an isotropic row law")
