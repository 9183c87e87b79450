"""Probability model for PK-informed dose escalation.

Two model kinds are supported:

* ``DOSE_ONLY`` -- the classic Bayesian logistic regression of DLT risk on
  log-standardized dose, logit(pi) = log_alpha + slope * log(d / d_ref).
* ``JOINT_PK`` -- a joint model in which dose drives exposure through a
  log-normal regression, log(x) ~ N(g0 + slope_x * log(d / d_ref), sigma^2),
  and exposure drives DLT risk through a logistic regression,
  logit(pi) = log_alpha + slope * log(x).

Slopes are parameterized on the log scale (slope = exp(b)) so the fitted
dose-toxicity and dose-exposure curves are increasing by construction.
Everything in this module is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import expit

LOG_TWO_PI = math.log(2.0 * math.pi)


class ModelKind(Enum):
    """Which likelihood is fitted: dose-only logistic or the joint PK model."""

    DOSE_ONLY = "blrm"
    JOINT_PK = "blrm-pk"


class RateMethod(Enum):
    """How the DLT rate at an untried dose is computed for the joint model.

    MARGINAL_QUADRATURE integrates the exposure-DLT curve over the predicted
    log-exposure distribution (Gauss-Hermite); PLUGIN_MEDIAN plugs in the
    median log exposure. Irrelevant for DOSE_ONLY.
    """

    MARGINAL_QUADRATURE = "marginal"
    PLUGIN_MEDIAN = "plugin"


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class DoseGrid:
    """Planned dose levels plus the reference dose used for standardization."""

    doses: tuple[float, ...]
    ref_dose: float

    def __post_init__(self) -> None:
        if not self.doses:
            raise ValueError("dose grid is empty")
        if any(d <= 0 for d in self.doses):
            raise ValueError("all grid doses must be positive")
        if any(b <= a for a, b in zip(self.doses, self.doses[1:])):
            raise ValueError("grid doses must be strictly increasing")
        if self.ref_dose <= 0:
            raise ValueError("ref_dose must be positive")

    def index_of(self, dose: float) -> int:
        """Index of ``dose`` in the grid; ValueError if it is not a member."""
        for i, d in enumerate(self.doses):
            if math.isclose(d, dose, rel_tol=1e-9, abs_tol=0.0):
                return i
        raise ValueError(f"dose {dose} is not on the grid {list(self.doses)}")

    def contains(self, dose: float) -> bool:
        try:
            self.index_of(dose)
            return True
        except ValueError:
            return False


@dataclass(frozen=True)
class SubjectRecord:
    """One enrolled subject: dose given, DLT outcome, and a PK summary.

    ``pk`` is the exposure summary (e.g. Cmax) on its natural scale; it may
    be None in dose-only datasets.
    """

    dose: float
    dlt: int
    pk: float | None = None

    def __post_init__(self) -> None:
        if self.dose <= 0:
            raise ValueError("dose must be positive")
        if self.dlt not in (0, 1):
            raise ValueError("dlt must be 0 or 1")
        if self.pk is not None and self.pk <= 0:
            raise ValueError("pk must be positive when present")


@dataclass(frozen=True)
class TrialDataset:
    """Accumulated trial data, in enrollment order, tied to a dose grid."""

    records: tuple[SubjectRecord, ...]
    grid: DoseGrid

    def __post_init__(self) -> None:
        for i, r in enumerate(self.records):
            if not self.grid.contains(r.dose):
                raise ValueError(f"record {i + 1}: dose {r.dose} not on the grid")

    def __len__(self) -> int:
        return len(self.records)

    def count_at(self, dose: float) -> int:
        i = self.grid.index_of(dose)
        target = self.grid.doses[i]
        return sum(1 for r in self.records if math.isclose(r.dose, target, rel_tol=1e-9))

    def has_pk(self) -> bool:
        return all(r.pk is not None for r in self.records)


@dataclass(frozen=True)
class ParameterPoint:
    """One point in parameter space.

    ``log_alpha`` is the logistic intercept. ``b_dlt`` and ``g1`` are log
    slopes: the exposure-DLT slope is exp(b_dlt) and the dose-exposure slope
    is exp(g1). ``g0`` is the log median exposure at the reference dose and
    ``log_sigma`` the log residual SD of log exposure. The exposure fields
    are ignored under DOSE_ONLY.
    """

    log_alpha: float
    b_dlt: float
    g0: float = 0.0
    g1: float = 0.0
    log_sigma: float = 0.0

    @property
    def slope_dlt(self) -> float:
        return math.exp(self.b_dlt)

    @property
    def slope_exposure(self) -> float:
        return math.exp(self.g1)

    @property
    def sigma(self) -> float:
        return math.exp(self.log_sigma)


def param_names(kind: ModelKind) -> tuple[str, ...]:
    if kind is ModelKind.DOSE_ONLY:
        return ("log_alpha", "b_dlt")
    return ("log_alpha", "b_dlt", "g0", "g1", "log_sigma")


def param_dim(kind: ModelKind) -> int:
    return len(param_names(kind))


def point_to_vector(p: ParameterPoint, kind: ModelKind) -> np.ndarray:
    if kind is ModelKind.DOSE_ONLY:
        return np.array([p.log_alpha, p.b_dlt], dtype=float)
    return np.array([p.log_alpha, p.b_dlt, p.g0, p.g1, p.log_sigma], dtype=float)


def vector_to_point(v: Sequence[float], kind: ModelKind) -> ParameterPoint:
    v = np.asarray(v, dtype=float)
    if v.shape != (param_dim(kind),):
        raise ValueError(f"expected vector of length {param_dim(kind)}, got shape {v.shape}")
    if kind is ModelKind.DOSE_ONLY:
        return ParameterPoint(log_alpha=float(v[0]), b_dlt=float(v[1]))
    return ParameterPoint(
        log_alpha=float(v[0]), b_dlt=float(v[1]),
        g0=float(v[2]), g1=float(v[3]), log_sigma=float(v[4]),
    )


@dataclass(frozen=True)
class PriorSpec:
    """Weakly informative priors.

    The DLT pair (log_alpha, b_dlt) and the exposure pair (g0, g1) each get
    a bivariate normal prior. sigma^2 gets a log-normal prior specified by
    the log of its median and the SD on the log scale. Defaults anticipate
    a DLT rate of 0.33 at the reference dose and exposure near 1 (on the
    dataset's PK scale) at the reference dose.
    """

    mean_log_alpha: float = logit(0.33)
    sd_log_alpha: float = 2.0
    mean_b_dlt: float = 0.0
    sd_b_dlt: float = 1.0
    corr_dlt: float = 0.0
    mean_g0: float = 0.0
    sd_g0: float = 2.0
    mean_g1: float = 0.0
    sd_g1: float = 1.0
    corr_exposure: float = 0.0
    sigma2_log_median: float = math.log(0.25)
    sigma2_log_sd: float = math.log(2.0) / 1.96

    def __post_init__(self) -> None:
        for name in ("sd_log_alpha", "sd_b_dlt", "sd_g0", "sd_g1", "sigma2_log_sd"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("corr_dlt", "corr_exposure"):
            if not -1.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in (-1, 1)")

    def mean_point(self, kind: ModelKind) -> ParameterPoint:
        """Prior means (medians for sigma), used to center sampler starts."""
        return ParameterPoint(
            log_alpha=self.mean_log_alpha,
            b_dlt=self.mean_b_dlt,
            g0=self.mean_g0,
            g1=self.mean_g1,
            log_sigma=0.5 * self.sigma2_log_median,
        )

    def sd_vector(self, kind: ModelKind) -> np.ndarray:
        """Per-coordinate prior SDs in sampler vector order."""
        sds = [self.sd_log_alpha, self.sd_b_dlt, self.sd_g0, self.sd_g1,
               0.5 * self.sigma2_log_sd]
        return np.array(sds[: param_dim(kind)], dtype=float)


# ---------------------------------------------------------------------------
# Curve evaluations


def mean_log_exposure(p: ParameterPoint, dose: float, ref_dose: float) -> float:
    """Median log exposure at ``dose``: g0 + exp(g1) * log(dose / ref_dose)."""
    if dose <= 0 or ref_dose <= 0:
        raise ValueError("dose and ref_dose must be positive")
    return p.g0 + p.slope_exposure * math.log(dose / ref_dose)


def dlt_prob_given_exposure(p: ParameterPoint, pk: float) -> float:
    """DLT probability at exposure ``pk``: logistic in log exposure."""
    if pk <= 0:
        raise ValueError("pk must be positive")
    return float(expit(p.log_alpha + p.slope_dlt * math.log(pk)))


# ---------------------------------------------------------------------------
# Log likelihoods and priors


def _normal_logpdf(x: float, mean: float, sd: float) -> float:
    z = (x - mean) / sd
    return -0.5 * LOG_TWO_PI - math.log(sd) - 0.5 * z * z


def _bvn_logpdf(x: float, y: float, mx: float, my: float,
                sx: float, sy: float, rho: float) -> float:
    zx = (x - mx) / sx
    zy = (y - my) / sy
    om = 1.0 - rho * rho
    quad = (zx * zx - 2.0 * rho * zx * zy + zy * zy) / om
    return -LOG_TWO_PI - math.log(sx * sy) - 0.5 * math.log(om) - 0.5 * quad


def _bernoulli_loglik(a: float, y: int) -> float:
    # log pi = -softplus(-a); log(1 - pi) = -softplus(a); stable at extremes
    if y == 1:
        return -float(np.logaddexp(0.0, -a))
    return -float(np.logaddexp(0.0, a))


def log_lik_exposure(p: ParameterPoint, data: TrialDataset) -> float:
    """Log-normal log likelihood of the observed PK summaries."""
    total = 0.0
    sigma = p.sigma
    for i, r in enumerate(data.records):
        if r.pk is None or r.pk <= 0:
            raise ValueError(f"record {i + 1}: positive pk required for the exposure model")
        t = math.log(r.pk)
        mu = mean_log_exposure(p, r.dose, data.grid.ref_dose)
        # log-normal density includes the 1/x Jacobian term
        total += _normal_logpdf(t, mu, sigma) - t
    return total


def log_lik_dlt(p: ParameterPoint, data: TrialDataset, kind: ModelKind) -> float:
    """Bernoulli log likelihood of the DLT outcomes under ``kind``."""
    total = 0.0
    for i, r in enumerate(data.records):
        if kind is ModelKind.JOINT_PK:
            if r.pk is None:
                raise ValueError(f"record {i + 1}: pk required for the joint model")
            a = p.log_alpha + p.slope_dlt * math.log(r.pk)
        else:
            a = p.log_alpha + p.slope_dlt * math.log(r.dose / data.grid.ref_dose)
        total += _bernoulli_loglik(a, r.dlt)
    return total


def log_prior(p: ParameterPoint, prior: PriorSpec, kind: ModelKind) -> float:
    """Joint log prior density in the sampled (unconstrained) coordinates.

    For the joint model the intercept prior is placed on the DLT log odds at
    the reference-dose exposure, log_alpha + slope * g0, rather than on
    log_alpha itself (log exposure 0 is an arbitrary point on the dataset's
    PK scale). Together with the g0 prior this anchors an anticipated DLT
    rate of 0.33 at the reference dose on any exposure scale; the shift has
    unit Jacobian, so no correction term is needed.
    """
    if kind is ModelKind.JOINT_PK:
        anchor = p.log_alpha + p.slope_dlt * p.g0
        out = _bvn_logpdf(anchor, p.b_dlt,
                          prior.mean_log_alpha, prior.mean_b_dlt,
                          prior.sd_log_alpha, prior.sd_b_dlt, prior.corr_dlt)
        out += _bvn_logpdf(p.g0, p.g1,
                           prior.mean_g0, prior.mean_g1,
                           prior.sd_g0, prior.sd_g1, prior.corr_exposure)
        # log-normal on sigma^2 = exp(2 * log_sigma); the density of log_sigma
        # is N(2t; m, s) * 2 after the change of variables
        out += _normal_logpdf(2.0 * p.log_sigma, prior.sigma2_log_median,
                              prior.sigma2_log_sd) + math.log(2.0)
        return out
    return _bvn_logpdf(p.log_alpha, p.b_dlt,
                       prior.mean_log_alpha, prior.mean_b_dlt,
                       prior.sd_log_alpha, prior.sd_b_dlt, prior.corr_dlt)


def log_posterior(p: ParameterPoint, data: TrialDataset, prior: PriorSpec,
                  kind: ModelKind) -> float:
    """Unnormalized log posterior handed to the sampler."""
    out = log_prior(p, prior, kind) + log_lik_dlt(p, data, kind)
    if kind is ModelKind.JOINT_PK:
        out += log_lik_exposure(p, data)
    return out


# ---------------------------------------------------------------------------
# DLT rate at a (possibly untried) dose


@lru_cache(maxsize=8)
def _gh_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Hermite nodes and weights normalized for N(0,1) expectations."""
    x, w = np.polynomial.hermite.hermgauss(n)
    return x * math.sqrt(2.0), w / math.sqrt(math.pi)


def dlt_rate_at_dose(p: ParameterPoint, dose: float, grid: DoseGrid,
                     kind: ModelKind,
                     method: RateMethod = RateMethod.MARGINAL_QUADRATURE,
                     quad_nodes: int = 32) -> float:
    """DLT probability at ``dose`` implied by the parameter point.

    For DOSE_ONLY this is the logistic curve in standardized log dose. For
    JOINT_PK the predicted log exposure at ``dose`` is N(mu, sigma^2), and
    the DLT rate is either the average of the exposure-DLT curve over that
    distribution (MARGINAL_QUADRATURE) or the curve at mu (PLUGIN_MEDIAN).
    """
    if dose <= 0:
        raise ValueError("dose must be positive")
    if kind is ModelKind.DOSE_ONLY:
        return float(expit(p.log_alpha + p.slope_dlt * math.log(dose / grid.ref_dose)))
    mu = mean_log_exposure(p, dose, grid.ref_dose)
    if method is RateMethod.PLUGIN_MEDIAN:
        return float(expit(p.log_alpha + p.slope_dlt * mu))
    x, w = _gh_nodes(quad_nodes)
    t = mu + p.sigma * x
    return float(w @ expit(p.log_alpha + p.slope_dlt * t))


def dlt_rate_matrix(draws: np.ndarray, doses: Sequence[float], grid: DoseGrid,
                    kind: ModelKind,
                    method: RateMethod = RateMethod.MARGINAL_QUADRATURE,
                    quad_nodes: int = 32) -> np.ndarray:
    """Vectorized ``dlt_rate_at_dose`` over posterior draws.

    ``draws`` has one row per retained draw in sampler vector order; the
    result has shape (n_draws, n_doses).
    """
    draws = np.asarray(draws, dtype=float)
    doses = np.asarray(doses, dtype=float)
    if np.any(doses <= 0):
        raise ValueError("doses must be positive")
    la = draws[:, 0][:, None]
    slope = np.exp(draws[:, 1])[:, None]
    z = np.log(doses / grid.ref_dose)[None, :]
    if kind is ModelKind.DOSE_ONLY:
        return expit(la + slope * z)
    mu = draws[:, 2][:, None] + np.exp(draws[:, 3])[:, None] * z
    if method is RateMethod.PLUGIN_MEDIAN:
        return expit(la + slope * mu)
    x, w = _gh_nodes(quad_nodes)
    sigma = np.exp(draws[:, 4])[:, None]
    # (draws, doses, nodes) -> weighted sum over nodes
    t = mu[:, :, None] + sigma[:, :, None] * x[None, None, :]
    return expit(la[:, :, None] + slope[:, :, None] * t) @ w


# ---------------------------------------------------------------------------
# Fast closure for the sampler


def make_log_posterior(data: TrialDataset, prior: PriorSpec, kind: ModelKind):
    """Build log_posterior as a function of the parameter vector.

    Precomputes the data-dependent pieces so the sampler's inner loop stays
    cheap; agrees with ``log_posterior`` to floating-point accuracy.
    """
    n = len(data.records)
    y = np.array([r.dlt for r in data.records], dtype=float)
    if kind is ModelKind.JOINT_PK:
        if not data.has_pk():
            raise ValueError("every record needs a pk value for the joint model")
        t = np.array([math.log(r.pk) for r in data.records], dtype=float)
        z = np.array([math.log(r.dose / data.grid.ref_dose) for r in data.records],
                     dtype=float)
        sum_y = float(y.sum())
        sum_yt = float(y @ t)
        sum_t = float(t.sum())

        def logpost(v: np.ndarray) -> float:
            la, b, g0, g1, ls = v
            p_bvn = _bvn_logpdf(la + math.exp(b) * g0, b,
                                prior.mean_log_alpha, prior.mean_b_dlt,
                                prior.sd_log_alpha, prior.sd_b_dlt, prior.corr_dlt)
            p_bvn += _bvn_logpdf(g0, g1, prior.mean_g0, prior.mean_g1,
                                 prior.sd_g0, prior.sd_g1, prior.corr_exposure)
            p_bvn += _normal_logpdf(2.0 * ls, prior.sigma2_log_median,
                                    prior.sigma2_log_sd) + math.log(2.0)
            if n == 0:
                return p_bvn
            a = la + math.exp(b) * t
            lik_dlt = la * sum_y + math.exp(b) * sum_yt - np.logaddexp(0.0, a).sum()
            sigma = math.exp(ls)
            resid = t - (g0 + math.exp(g1) * z)
            lik_exp = (-n * math.log(sigma) - 0.5 * n * LOG_TWO_PI - sum_t
                       - 0.5 * float(resid @ resid) / (sigma * sigma))
            return p_bvn + lik_dlt + lik_exp

        return logpost

    z = np.array([math.log(r.dose / data.grid.ref_dose) for r in data.records],
                 dtype=float)
    sum_y = float(y.sum())
    sum_yz = float(y @ z)

    def logpost_dose(v: np.ndarray) -> float:
        la, b = v
        out = _bvn_logpdf(la, b, prior.mean_log_alpha, prior.mean_b_dlt,
                          prior.sd_log_alpha, prior.sd_b_dlt, prior.corr_dlt)
        if n:
            a = la + math.exp(b) * z
            out += la * sum_y + math.exp(b) * sum_yz - np.logaddexp(0.0, a).sum()
        return out

    return logpost_dose
