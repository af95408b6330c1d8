"""The two-stage random map: a row matrix applied on the sphere side and an
iid-entry column matrix on the normed-space side, together with the composite
evaluation and the extreme-singular-value deviation of the row matrix.

Row matrix: m rows X_i in R^d, applied as u -> (<X_i, u> / sqrt(m))_i.
Column matrix: m columns Z_j in R^n with iid entries, applied as
y -> sum_j y_j Z_j.  The composite image of a unit vector is measured in the
target norm.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import randsrc
from .normspace import NormSpace, norm, norm_many
from .randsrc import DistributionSpec, RngStream

# Columns of the iid-entry matrix are generated in fixed blocks of this many
# columns (coordinate-major inside each block, one substream per block).  The
# constant is part of the reproducibility contract: materialized and
# regenerated storage agree bitwise entry-for-entry because both use it.
D_BLOCK_COLS = 1024

# Auto-materialization cap on n*m entries.
MATERIALIZE_MAX_ENTRIES = 1 << 27

JACOBI_TOL = 1e-12


class NumericalError(RuntimeError):
    """Raised when a realization or report would contain non-finite values."""


@dataclass(frozen=True, eq=False)
class GammaRealization:
    """One draw of the m x d row matrix; rows are stored unscaled."""

    d: int
    m: int
    rows: np.ndarray = field(repr=False)
    stream: RngStream | None = None

    def __post_init__(self):
        if self.rows.shape != (self.m, self.d):
            raise ValueError("rows must be an m x d matrix")


def draw_gamma(d: int, m: int, xspec: DistributionSpec, rng: RngStream) -> GammaRealization:
    """m iid rows of the given isotropic law; requires m >= d >= 1."""
    if d < 1 or m < d:
        raise ValueError("need m >= d >= 1 (the map must embed, not project)")
    if xspec.dim != d:
        raise ValueError(f"xspec.dim = {xspec.dim} does not match d = {d}")
    rows = randsrc.draw_rows(xspec, m, rng)
    if not np.all(np.isfinite(rows)):
        raise NumericalError("row draw produced non-finite entries")
    return GammaRealization(d=d, m=m, rows=rows, stream=rng)


def apply_gamma(g: GammaRealization, u: np.ndarray) -> np.ndarray:
    """The m-vector (<X_i, u> / sqrt(m))_i."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (g.d,):
        raise ValueError(f"expected a vector of length {g.d}")
    return (g.rows @ u) / math.sqrt(g.m)


def apply_gamma_many(g: GammaRealization, cols: np.ndarray) -> np.ndarray:
    """Image of the columns of a (d, k) array, as an (m, k) array."""
    if cols.shape[0] != g.d:
        raise ValueError(f"expected columns of length {g.d}")
    return (g.rows @ cols) / math.sqrt(g.m)


def _gen_block(stream: RngStream, block: int, n: int, width: int, kind: str) -> np.ndarray:
    """Entries of one column block, coordinate-major, as float64 in {-1,1} or N(0,1)."""
    g = stream.child(block).generator()
    if kind == randsrc.GAUSSIAN:
        flat = g.standard_normal(n * width)
    else:
        flat = g.integers(0, 2, size=n * width, dtype=np.uint8).astype(np.float64) * 2.0 - 1.0
    return flat.reshape((n, width), order="F")


def _gen_block_bits(stream: RngStream, block: int, n: int, width: int) -> np.ndarray:
    """Sign-bit version of a rademacher block (1 bit per entry, bit=1 means +1)."""
    g = stream.child(block).generator()
    return g.integers(0, 2, size=n * width, dtype=np.uint8)


@dataclass(eq=False)
class DRealization:
    """One draw of the n x m iid-entry matrix with columns Z_j.

    mode 'materialized' holds the entries (packed sign bits for rademacher,
    float64 for gaussian); mode 'regenerated' holds nothing and recreates any
    block of columns bitwise-identically from its (seed, block) substream.
    """

    n: int
    m: int
    zspec: DistributionSpec
    stream: RngStream
    mode: str
    _dense: np.ndarray | None = field(default=None, repr=False)
    _bits: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_sign_matrix(self) -> bool:
        return self.zspec.kind == randsrc.RADEMACHER

    def _n_blocks(self) -> int:
        return (self.m + D_BLOCK_COLS - 1) // D_BLOCK_COLS

    def _block_cols(self, b: int) -> tuple[int, int]:
        lo = b * D_BLOCK_COLS
        return lo, min(lo + D_BLOCK_COLS, self.m)

    def block(self, b: int) -> np.ndarray:
        """Float64 entries of column block b (n x width)."""
        lo, hi = self._block_cols(b)
        width = hi - lo
        if self.mode == "regenerated":
            return _gen_block(self.stream, b, self.n, width, self.zspec.kind)
        if self._dense is not None:
            return self._dense[:, lo:hi]
        flat = np.unpackbits(self._bits)[lo * self.n:hi * self.n]
        return (flat.astype(np.float64) * 2.0 - 1.0).reshape((self.n, width), order="F")

    def column(self, j: int) -> np.ndarray:
        """Z_j as a float64 vector."""
        if not 0 <= j < self.m:
            raise ValueError("column index out of range")
        b, off = divmod(j, D_BLOCK_COLS)
        return np.ascontiguousarray(self.block(b)[:, off])

    def apply(self, y: np.ndarray) -> np.ndarray:
        """sum_j y_j Z_j, accumulated block by block in index order."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.m,):
            raise ValueError(f"expected a vector of length {self.m}")
        return self.apply_many(y[:, None])[:, 0]

    def apply_many(self, ys: np.ndarray) -> np.ndarray:
        """Apply to the columns of an (m, k) array, returning (n, k)."""
        if ys.shape[0] != self.m:
            raise ValueError(f"expected columns of length {self.m}")
        if self.mode == "materialized" and self._dense is not None:
            return self._dense @ ys
        out = np.zeros((self.n, ys.shape[1]))
        for b in range(self._n_blocks()):
            lo, hi = self._block_cols(b)
            out += self.block(b) @ ys[lo:hi]
        return out


def draw_D(n: int, m: int, zspec: DistributionSpec, rng: RngStream,
           mode: str = "auto") -> DRealization:
    """Draw the column matrix; storage auto-selected by the n*m entry budget."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    if zspec.kind not in (randsrc.GAUSSIAN, randsrc.RADEMACHER):
        raise ValueError("column law must have iid coordinates (gaussian or rademacher)")
    if zspec.dim != n:
        raise ValueError(f"zspec.dim = {zspec.dim} does not match n = {n}")
    if mode == "auto":
        mode = "materialized" if n * m <= MATERIALIZE_MAX_ENTRIES else "regenerated"
    if mode not in ("materialized", "regenerated"):
        raise ValueError(f"unknown storage mode {mode!r}")
    dr = DRealization(n=n, m=m, zspec=zspec, stream=rng, mode="regenerated")
    if mode == "regenerated":
        return dr
    if zspec.kind == randsrc.RADEMACHER:
        bits = np.concatenate([
            _gen_block_bits(rng, b, n, dr._block_cols(b)[1] - dr._block_cols(b)[0])
            for b in range(dr._n_blocks())
        ])
        return DRealization(n=n, m=m, zspec=zspec, stream=rng, mode="materialized", _bits=np.packbits(bits))
    dense = np.empty((n, m))
    for b in range(dr._n_blocks()):
        lo, hi = dr._block_cols(b)
        dense[:, lo:hi] = _gen_block(rng, b, n, hi - lo, zspec.kind)
    return DRealization(n=n, m=m, zspec=zspec, stream=rng, mode="materialized", _dense=dense)


def apply_D(dr: DRealization, y: np.ndarray) -> np.ndarray:
    return dr.apply(y)


def psi(g: GammaRealization, dr: DRealization, space: NormSpace, u: np.ndarray) -> float:
    """Norm of the composite image of a unit vector u."""
    if g.m != dr.m:
        raise ValueError("row and column realizations disagree on m")
    if space.n != dr.n:
        raise ValueError("normed space and column realization disagree on n")
    u = np.asarray(u, dtype=np.float64)
    if abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise ValueError("u must be a unit vector (the map is compared on the sphere)")
    return norm(space, dr.apply(apply_gamma(g, u)))


def psi_many(g: GammaRealization, dr: DRealization, space: NormSpace,
             units: np.ndarray) -> np.ndarray:
    """psi over the columns of a (d, k) array of unit vectors."""
    y = apply_gamma_many(g, units)
    return norm_many(space, dr.apply_many(y))


def jacobi_eigenvalues(mat: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 64) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps all off-diagonal pairs until the off-diagonal Frobenius norm drops
    to tol; ascending output.
    """
    a = np.array(mat, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    k = a.shape[0]
    if k == 1:
        return a[0, :1].copy()
    for _ in range(max_sweeps):
        off = math.sqrt(max(0.0, float(np.sum(a * a) - np.sum(np.diag(a) ** 2))))
        if off <= tol:
            break
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau)) if tau != 0.0 else 1.0
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                a[p, q] = a[q, p] = 0.0
    return np.sort(np.diag(a))


@dataclass(frozen=True)
class RhoReport:
    """Deviation of the row matrix's empirical second-moment form from identity."""

    rho: float
    lambda_min_sq: float
    lambda_max_sq: float


def rho(g: GammaRealization) -> RhoReport:
    """Exact extreme eigenvalues of the d x d form (1/m) sum_i X_i X_i^T.

    These are the squared extreme singular values of the scaled row map, so
    rho sandwiches them: 1 - rho <= s_min^2 <= s_max^2 <= 1 + rho.
    """
    if not np.all(np.isfinite(g.rows)):
        raise NumericalError("realization contains non-finite entries")
    gram = (g.rows.T @ g.rows) / g.m
    eigs = jacobi_eigenvalues(gram)
    lo, hi = float(eigs[0]), float(eigs[-1])
    return RhoReport(rho=max(abs(hi - 1.0), abs(lo - 1.0)), lambda_min_sq=lo, lambda_max_sq=hi)


_MAGIC = b"DMEN1"


def dump_realizations(path, g: GammaRealization, dr: DRealization) -> None:
    """Binary dump for replay: header, row-major float64 rows, packed D signs.

    Only sign-matrix column realizations fit the format; gaussian D has no
    packed-bit representation and is rejected.
    """
    if not dr.is_sign_matrix:
        raise ValueError("binary dump stores packed sign bits; D must be rademacher")
    if g.m != dr.m:
        raise ValueError("row and column realizations disagree on m")
    if dr.mode == "materialized" and dr._bits is not None:
        packed = dr._bits
    else:
        bits = np.concatenate([
            ((dr.block(b) > 0).astype(np.uint8)).reshape(-1, order="F")
            for b in range(dr._n_blocks())
        ])
        packed = np.packbits(bits)
    seed = dr.stream.seed if dr.stream is not None else 0
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<4Q", dr.n, dr.m, g.d, seed & 0xFFFFFFFFFFFFFFFF))
        fh.write(np.ascontiguousarray(g.rows, dtype="<f8").tobytes())
        fh.write(packed.tobytes())


def load_realizations(path) -> tuple[GammaRealization, DRealization]:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != _MAGIC:
            raise ValueError("not a realization dump (bad magic)")
        n, m, d, seed = struct.unpack("<4Q", fh.read(32))
        rows = np.frombuffer(fh.read(8 * m * d), dtype="<f8").reshape(m, d).copy()
        packed = np.frombuffer(fh.read((n * m + 7) // 8), dtype=np.uint8).copy()
    g = GammaRealization(d=d, m=m, rows=rows, stream=None)
    zspec = DistributionSpec(randsrc.RADEMACHER, dim=n)
    dr = DRealization(n=n, m=m, zspec=zspec, stream=RngStream(seed, 0),
                      mode="materialized", _bits=packed)
    return g, dr
