"""End-to-end certification: estimate the common scale of the composite image,
measure its oscillation on a separated net, check the structural side
conditions on the row matrix, and compare against the identity-map baseline.

All probabilistic acceptance is framed as "at least X% of T trials" by the
caller; a single run reports numbers plus pass flags for the configured
thresholds.  The unpinned absolute constants of the underlying theory surface
only through those thresholds.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import ensemble, normspace, randsrc, structure
from ._util import ordered_map
from .ensemble import DRealization, GammaRealization, NumericalError
from .normspace import NormSpace
from .randsrc import DistributionSpec, RngStream
from .structure import Net

DEGENERATE_TOL = 1e-12


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit 1)."""


class CertifyAbort(RuntimeError):
    """Pipeline abort with a distinct code (CLI exit 2)."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class SmallBallResult:
    passed: bool
    count: int
    required: float
    eta: float
    delta: float


@dataclass(frozen=True)
class LambdaEstimate:
    value: float
    stderr: float
    degenerate: bool = False


def _fresh_d_psi(g: GammaRealization, zspec: DistributionSpec, space: NormSpace,
                 images: np.ndarray, stream: RngStream, k: int) -> np.ndarray:
    """psi at the pre-mapped directions for one fresh column-matrix draw.

    The draw is streamed (regenerated mode): each is used once, so there is
    no point materializing it; values are identical either way.
    """
    dr = ensemble.draw_D(space.n, g.m, zspec, stream.child(k), mode="regenerated")
    return normspace.norm_many(space, dr.apply_many(images))


def _crn_psi_draws(g: GammaRealization, zspec: DistributionSpec, space: NormSpace,
                   units: np.ndarray, n_draws: int, rng: RngStream,
                   workers: int = 1) -> np.ndarray:
    """(n_draws, k) matrix of psi values, common column draws across directions."""
    images = ensemble.apply_gamma_many(g, units.T)
    rows = ordered_map(lambda k: _fresh_d_psi(g, zspec, space, images, rng, k),
                       list(range(n_draws)), workers)
    out = np.vstack(rows)
    if not np.all(np.isfinite(out)):
        raise CertifyAbort("non-finite", "psi produced non-finite values")
    return out


def estimate_lambda(g: GammaRealization, zspec: DistributionSpec, space: NormSpace,
                    v: np.ndarray, n_draws: int, rng: RngStream,
                    workers: int = 1) -> LambdaEstimate:
    """Monte Carlo mean and stderr of psi(v) over fresh column draws, rows fixed.

    A numerically zero image direction is flagged as degenerate (the scale is
    then meaningless) and reported as 0 without sampling.
    """
    if n_draws < 2:
        raise ValueError("n_draws must be >= 2")
    v = np.asarray(v, dtype=np.float64)
    if np.linalg.norm(ensemble.apply_gamma(g, v)) < DEGENERATE_TOL:
        return LambdaEstimate(0.0, 0.0, degenerate=True)
    vals = _crn_psi_draws(g, zspec, space, v[None, :], n_draws, rng, workers)[:, 0]
    return LambdaEstimate(float(np.mean(vals)),
                          float(np.std(vals, ddof=1) / math.sqrt(n_draws)))


def check_small_ball(g: GammaRealization, v: np.ndarray, eta: float,
                     delta: float) -> SmallBallResult:
    """Count rows with |<X_i, v>| >= eta and compare against delta * m."""
    if eta <= 0.0 or delta <= 0.0:
        raise ValueError("eta and delta must be positive")
    dots = g.rows @ np.asarray(v, dtype=np.float64)
    count = int(np.count_nonzero(np.abs(dots) >= eta))
    required = delta * g.m
    return SmallBallResult(count >= required, count, required, eta, delta)


def oscillation(g: GammaRealization, dr: DRealization, space: NormSpace,
                net: Net, lam: float) -> tuple[float, list[tuple[int, float]]]:
    """max over net points of |psi(u)/lam - 1|, with the full table retained."""
    if lam <= 0.0:
        raise ValueError("lambda must be positive")
    psis = ensemble.psi_many(g, dr, space, net.points.T)
    if not np.all(np.isfinite(psis)):
        raise CertifyAbort("non-finite", "oscillation scan produced non-finite norms")
    table = [(i, float(p)) for i, p in enumerate(psis)]
    osc = max(abs(p / lam - 1.0) for _, p in table)
    return osc, table


def conditional_mean_spread(g: GammaRealization, zspec: DistributionSpec,
                            space: NormSpace, probe_dirs: np.ndarray, n_draws: int,
                            rng: RngStream, workers: int = 1) -> tuple[float, float]:
    """max over probe pairs of |mean psi(u) - mean psi(w)| under common draws.

    Common random numbers (the same fresh column draws for every direction)
    cancel the shared noise, so a few hundred draws resolve the spread.  The
    returned stderr is that of the per-draw difference at the extremal pair.
    """
    units = np.atleast_2d(np.asarray(probe_dirs, dtype=np.float64))
    if units.shape[0] < 2:
        raise ValueError("need at least two probe directions")
    if n_draws < 2:
        raise ValueError("n_draws must be >= 2")
    draws = _crn_psi_draws(g, zspec, space, units, n_draws, rng, workers)
    means = draws.mean(axis=0)
    k = means.size
    spread, pair = 0.0, (0, 1)
    for i in range(k):
        for j in range(i + 1, k):
            gap = abs(float(means[i] - means[j]))
            if gap > spread:
                spread, pair = gap, (i, j)
    diff = draws[:, pair[0]] - draws[:, pair[1]]
    stderr = float(np.std(diff, ddof=1) / math.sqrt(n_draws))
    return spread, stderr


def baseline_gap(n: int, m: int, space: NormSpace, zspec: DistributionSpec,
                 rng: RngStream) -> float:
    """Certified lower bound on the identity-map oscillation ratio.

    With the row matrix replaced by the identity, probe the column matrix on
    the first few basis vectors and on the diagonal direction; the max/min
    ratio of the measured norms lower-bounds sup/inf over the sphere.
    """
    dr = ensemble.draw_D(n, m, zspec, rng.child(0))
    k = min(m, 10)
    probes = np.zeros((m, k + 1))
    for j in range(k):
        probes[j, j] = 1.0
    probes[:, k] = 1.0 / math.sqrt(m)
    vals = normspace.norm_many(space, dr.apply_many(probes))
    if not np.all(np.isfinite(vals)) or np.min(vals) <= 0.0:
        raise CertifyAbort("non-finite", "baseline probes produced degenerate norms")
    return float(np.max(vals) / np.min(vals))


@dataclass(frozen=True)
class CertifyConfig:
    """Full description of one certification run; see README for the JSON form."""

    space: dict
    d: int
    m: int
    n: int
    epsilon: float
    xspec: DistributionSpec
    zspec: DistributionSpec
    seed: int
    s: int | None = None
    r: int | None = None
    lambda_samples: int = 200
    net_max_points: int = 8192
    thresholds: dict = field(default_factory=dict)
    probe_dirs: int = 10
    spread_draws: int = 200
    gauss_samples: int = 100_000
    profile_samples: int | None = None
    phi_scale: float = 1.0
    h_sm_refine: bool = False
    sb_eta: float = 0.2
    sb_delta: float = 0.2
    include_baseline: bool = False
    baseline_m: int = 64
    d_storage: str = "auto"

    def __post_init__(self):
        if self.d > self.m:
            raise ConfigError("d must not exceed m")
        if not 0.0 < self.epsilon <= 0.5:
            raise ConfigError("epsilon must lie in (0, 1/2]")
        for name in ("d", "m", "n", "lambda_samples", "net_max_points",
                     "probe_dirs", "spread_draws", "gauss_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.xspec.dim != self.d:
            raise ConfigError("xspec.dim must equal d")
        if self.zspec.dim != self.n:
            raise ConfigError("zspec.dim must equal n")
        if self.s is not None and not 1 <= self.s < self.m:
            raise ConfigError("s must satisfy 1 <= s < m")
        if self.r is not None and not 1 <= self.r <= self.m:
            raise ConfigError("r must satisfy 1 <= r <= m")

    def resolved_thresholds(self, e_g_norm: float) -> dict:
        out = {"osc_max": 0.35, "lambda_ratio_min": 0.1, "lambda_ratio_max": 10.0}
        out["cond3_max"] = 0.1 * e_g_norm
        out.update(self.thresholds)
        return out

    def to_dict(self) -> dict:
        return {
            "space": self.space, "d": self.d, "m": self.m, "n": self.n,
            "epsilon": self.epsilon, "xspec": self.xspec.to_dict(),
            "zspec": self.zspec.to_dict(), "seed": self.seed, "s": self.s,
            "r": self.r, "lambda_samples": self.lambda_samples,
            "net_max_points": self.net_max_points, "thresholds": dict(self.thresholds),
            "probe_dirs": self.probe_dirs, "spread_draws": self.spread_draws,
            "gauss_samples": self.gauss_samples, "profile_samples": self.profile_samples,
            "phi_scale": self.phi_scale, "h_sm_refine": self.h_sm_refine,
            "sb_eta": self.sb_eta, "sb_delta": self.sb_delta,
            "include_baseline": self.include_baseline, "baseline_m": self.baseline_m,
            "d_storage": self.d_storage,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CertifyConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            kwargs = dict(d)
            kwargs["xspec"] = DistributionSpec.from_dict(d["xspec"])
            kwargs["zspec"] = DistributionSpec.from_dict(d["zspec"])
            return cls(**kwargs)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


@dataclass
class CertifyReport:
    """Everything one run measured, plus pass flags and stream provenance.

    ``per_direction`` and ``wall_ms`` are excluded from the JSON form: the
    table is emitted as CSV, and timing lives in the run manifest so replayed
    runs produce byte-identical reports.
    """

    lam: float
    lambda_stderr: float
    oscillation: float
    rho: ensemble.RhoReport
    h_sm: float
    rearr_dev: float
    w2_diam: float
    cond3_spread: float
    cond3_stderr: float
    kappa_w2: float | None
    small_ball: SmallBallResult
    decomposition_norms: dict
    e_g_norm: normspace.GaussNormEstimate
    dstar: float
    s: int
    r: int
    phi_value: float
    net_size: int
    net_covering_certified: bool
    d_mode: str
    baseline_gap: float | None
    flags: dict
    warnings: list
    seeds: dict
    config: dict
    per_direction: list = field(default_factory=list, repr=False)
    wall_ms: float = 0.0

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def json_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "lambda_stderr": self.lambda_stderr,
            "oscillation": self.oscillation,
            "rho": {"rho": self.rho.rho, "lambda_min_sq": self.rho.lambda_min_sq,
                    "lambda_max_sq": self.rho.lambda_max_sq},
            "h_sm": self.h_sm,
            "rearr_dev": self.rearr_dev,
            "w2_diam": self.w2_diam,
            "cond3_spread": self.cond3_spread,
            "cond3_stderr": self.cond3_stderr,
            "kappa_w2": self.kappa_w2,
            "small_ball": {"passed": self.small_ball.passed, "count": self.small_ball.count,
                           "required": self.small_ball.required,
                           "eta": self.small_ball.eta, "delta": self.small_ball.delta},
            "decomposition_norms": self.decomposition_norms,
            "e_g_norm": {"mean": self.e_g_norm.mean, "stderr": self.e_g_norm.stderr,
                         "method": self.e_g_norm.method},
            "dstar": self.dstar,
            "s": self.s,
            "r": self.r,
            "phi_value": self.phi_value,
            "net_size": self.net_size,
            "net_covering_certified": self.net_covering_certified,
            "d_mode": self.d_mode,
            "baseline_gap": self.baseline_gap,
            "flags": dict(self.flags),
            "passed": self.passed,
            "warnings": list(self.warnings),
            "seeds": dict(self.seeds),
            "config": self.config,
        }


# Fixed substream roles of the root (seed, 0) stream; part of the replay contract.
_ROLE_GAMMA = 1
_ROLE_NET = 2
_ROLE_D = 3
_ROLE_CRN = 4
_ROLE_BASELINE = 5
_ROLE_PROFILE = 6
_ROLE_LAMBDA = 7
_ROLE_GAUSS = 10


def certify(config: CertifyConfig, workers: int = 1) -> CertifyReport:
    """Run the full pipeline on one realization.

    Draw the row matrix and measure its structural quantities, draw the column
    matrix, estimate the scale at the first net point, scan the net for
    oscillation, and measure the spread of the conditional mean on a few probe
    directions with common random numbers.  Aborts (with a distinct code) on
    an incomplete net, a degenerate scale, or non-finite norms.
    """
    t0 = time.perf_counter()
    space = NormSpace.from_dict(config.space)
    if space.n != config.n:
        raise ConfigError("space dimension must equal n")
    root = RngStream(config.seed, 0)
    warnings: list[str] = []

    gauss = normspace.expected_gauss_norm(space, config.gauss_samples, root.child(_ROLE_GAUSS))
    dstar = normspace.critical_dimension(space, gauss).value
    cap = config.epsilon ** 2 * dstar / math.log(1.0 / config.epsilon)
    if config.d > cap:
        warnings.append(f"d={config.d} exceeds the recommended cap {cap:.3g} "
                        "for this space at this epsilon")

    s = config.s if config.s is not None else structure.default_s(dstar, config.m)
    r = config.r if config.r is not None else structure.default_r(config.epsilon, dstar, s)
    phi_value = normspace.phi(space, gauss, r, config.m, config.phi_scale)

    g = ensemble.draw_gamma(config.d, config.m, config.xspec, root.child(_ROLE_GAMMA))
    rho_rep = ensemble.rho(g)

    net = structure.build_net(config.d, config.epsilon, root.child(_ROLE_NET),
                              config.net_max_points)
    if not net.complete:
        raise CertifyAbort("incomplete-net",
                           f"net hit max_points={config.net_max_points} before maximality")

    h_val = structure.h_sm(g, s, net.points, refine=config.h_sm_refine)
    profile_n = config.profile_samples or max(1_000_000, 100 * config.m)
    profile = structure.quantile_profile(config.xspec, True, config.m, profile_n,
                                         root.child(_ROLE_PROFILE))
    rearr = structure.rearrangement_deviation(g, net.points, profile)

    n_probes = min(config.probe_dirs, len(net))
    probes = net.points[:n_probes]
    w2_diam = structure.pair_w2_diameter(g, probes) if n_probes >= 2 else 0.0

    v = net.points[0]
    if np.linalg.norm(ensemble.apply_gamma(g, v)) < DEGENERATE_TOL:
        raise CertifyAbort("degenerate-lambda", "the reference direction maps to zero")

    if n_probes >= 2 and config.lambda_samples == config.spread_draws:
        draws = _crn_psi_draws(g, config.zspec, space, probes, config.lambda_samples,
                               root.child(_ROLE_CRN), workers)
        means = draws.mean(axis=0)
        lam = LambdaEstimate(float(means[0]),
                             float(np.std(draws[:, 0], ddof=1) / math.sqrt(draws.shape[0])))
        spread, pair = 0.0, (0, 1)
        for i in range(n_probes):
            for j in range(i + 1, n_probes):
                gap = abs(float(means[i] - means[j]))
                if gap > spread:
                    spread, pair = gap, (i, j)
        diff = draws[:, pair[0]] - draws[:, pair[1]]
        spread_stderr = float(np.std(diff, ddof=1) / math.sqrt(draws.shape[0]))
    else:
        lam = estimate_lambda(g, config.zspec, space, v, config.lambda_samples,
                              root.child(_ROLE_LAMBDA), workers)
        if n_probes >= 2:
            spread, spread_stderr = conditional_mean_spread(
                g, config.zspec, space, probes, config.spread_draws,
                root.child(_ROLE_CRN), workers)
        else:
            spread, spread_stderr = 0.0, 0.0
    if lam.degenerate or lam.value <= 0.0:
        raise CertifyAbort("degenerate-lambda", "scale estimate is degenerate")

    dr = ensemble.draw_D(config.n, config.m, config.zspec, root.child(_ROLE_D),
                         mode=config.d_storage)
    osc, table = oscillation(g, dr, space, net, lam.value)

    sb = check_small_ball(g, v, config.sb_eta, config.sb_delta)
    dec = structure.decompose(g, dr, space, v, s, r, phi_value)
    dec_norms = {
        "clubs": normspace.norm(space, dec.clubs),
        "diamonds": normspace.norm(space, dec.diamonds),
        "hearts": normspace.norm(space, dec.hearts),
        "xi": dec.xi,
        "j_outside_count": dec.j_outside_count,
    }

    kappa = spread / (gauss.mean * w2_diam) if w2_diam > 0.0 else None

    base = None
    if config.include_baseline:
        base = baseline_gap(config.n, config.baseline_m, space, config.zspec,
                            root.child(_ROLE_BASELINE))

    thr = config.resolved_thresholds(gauss.mean)
    flags = {
        "oscillation": osc <= thr["osc_max"],
        "cond3_spread": spread <= thr["cond3_max"],
        "lambda_window": thr["lambda_ratio_min"] * gauss.mean <= lam.value
                         <= thr["lambda_ratio_max"] * gauss.mean,
    }
    if "rho_max" in thr:
        flags["rho"] = rho_rep.rho <= thr["rho_max"]
    if "h_sm_max" in thr:
        flags["h_sm"] = h_val <= thr["h_sm_max"]
    if "rearr_dev_max" in thr:
        flags["rearr_dev"] = rearr <= thr["rearr_dev_max"]

    report = CertifyReport(
        lam=lam.value, lambda_stderr=lam.stderr, oscillation=osc, rho=rho_rep,
        h_sm=h_val, rearr_dev=rearr, w2_diam=w2_diam, cond3_spread=spread,
        cond3_stderr=spread_stderr, kappa_w2=kappa, small_ball=sb,
        decomposition_norms=dec_norms, e_g_norm=gauss, dstar=dstar, s=s, r=r,
        phi_value=phi_value, net_size=len(net),
        net_covering_certified=net.covering_certified, d_mode=dr.mode,
        baseline_gap=base, flags=flags, warnings=warnings,
        seeds={"seed": config.seed, "gamma": _ROLE_GAMMA, "net": _ROLE_NET,
               "d": _ROLE_D, "crn": _ROLE_CRN, "profile": _ROLE_PROFILE,
               "baseline": _ROLE_BASELINE},
        config=config.to_dict(), per_direction=table,
        wall_ms=(time.perf_counter() - t0) * 1000.0,
    )
    return report
