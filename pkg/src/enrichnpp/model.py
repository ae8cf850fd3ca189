"""Current-trial regression model: outcome generation, likelihood, and MLE.

The working model is a generalized linear model with a treatment-biomarker
interaction on the link scale,

    eta(t, x) = beta0 + beta1*x + beta2*t + beta3*t*x,

with either a Gaussian outcome (identity link, residual sd sigma) or a
Bernoulli outcome (logit link). The conditional treatment effect at
biomarker level x is the blip gamma(x) = beta2 + beta3*x.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

__all__ = [
    "OutcomeFamily",
    "CoefficientVector",
    "Subject",
    "TrialDataset",
    "DegenerateDesignError",
    "MleResult",
    "linear_predictor",
    "blip",
    "generate_outcome",
    "sample_subject",
    "loglik_current",
    "loglik_gradient_bernoulli",
    "mle_fit",
]

LOG_2PI = np.log(2.0 * np.pi)


class OutcomeFamily(enum.Enum):
    """Outcome distribution with its implied link."""

    GAUSSIAN_IDENTITY = "gaussian_identity"
    BERNOULLI_LOGIT = "bernoulli_logit"


@dataclass(frozen=True)
class CoefficientVector:
    """Regression coefficients (beta0..beta3) plus residual sd.

    ``sigma`` is only meaningful for the Gaussian family and ignored
    otherwise.
    """

    beta0: float
    beta1: float
    beta2: float
    beta3: float
    sigma: float = 1.0

    def __post_init__(self):
        betas = (self.beta0, self.beta1, self.beta2, self.beta3)
        if not all(np.isfinite(betas)):
            raise ValueError("all betas must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.beta0, self.beta1, self.beta2, self.beta3])

    @classmethod
    def from_array(cls, beta: np.ndarray, sigma: float = 1.0) -> "CoefficientVector":
        b = np.asarray(beta, dtype=float)
        return cls(b[0], b[1], b[2], b[3], sigma)


@dataclass(frozen=True)
class Subject:
    """One enrolled subject: biomarker x, treatment t, outcome y."""

    x: int
    t: int
    y: float
    enroll_index: int


@dataclass
class TrialDataset:
    """Ordered trial data; a prefix of length n is the interim dataset.

    Internally stores columns as numpy arrays; ``subjects`` views are
    materialized on demand.
    """

    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    family: OutcomeFamily = OutcomeFamily.BERNOULLI_LOGIT

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=float)
        if not (self.x.shape == self.t.shape == self.y.shape):
            raise ValueError("x, t, y must have equal length")
        if not np.isin(self.x, (0, 1)).all() or not np.isin(self.t, (0, 1)).all():
            raise ValueError("x and t must be binary")
        if self.family is OutcomeFamily.BERNOULLI_LOGIT and not np.isin(self.y, (0.0, 1.0)).all():
            raise ValueError("Bernoulli outcomes must be 0/1")

    @classmethod
    def from_subjects(cls, subjects, family: OutcomeFamily) -> "TrialDataset":
        subjects = sorted(subjects, key=lambda s: s.enroll_index)
        idx = [s.enroll_index for s in subjects]
        if len(set(idx)) != len(idx):
            raise ValueError("enroll_index must be unique")
        return cls(
            x=np.array([s.x for s in subjects], dtype=np.int64),
            t=np.array([s.t for s in subjects], dtype=np.int64),
            y=np.array([s.y for s in subjects], dtype=float),
            family=family,
        )

    @property
    def subjects(self):
        return [
            Subject(int(xi), int(ti), float(yi), i)
            for i, (xi, ti, yi) in enumerate(zip(self.x, self.t, self.y))
        ]

    def __len__(self) -> int:
        return self.x.shape[0]

    def prefix(self, n: int) -> "TrialDataset":
        return TrialDataset(self.x[:n], self.t[:n], self.y[:n], self.family)

    def design_matrix(self) -> np.ndarray:
        return np.column_stack(
            [np.ones(len(self)), self.x, self.t, self.t * self.x]
        ).astype(float)

    def cell_counts(self):
        """Sufficient statistics per (t, x) cell, indexed c = 2*t + x.

        Returns (n, sy, syy): counts, outcome sums (successes for the
        Bernoulli family), and outcome sums of squares.
        """
        c = 2 * self.t + self.x
        n = np.bincount(c, minlength=4).astype(float)
        sy = np.bincount(c, weights=self.y, minlength=4)
        syy = np.bincount(c, weights=self.y * self.y, minlength=4)
        return n, sy, syy


class DegenerateDesignError(ValueError):
    """Design matrix columns (1, x, t, tx) are collinear in the data."""


@dataclass
class MleResult:
    """Maximum-likelihood fit plus metadata used by the Taylor anchor."""

    beta: CoefficientVector
    cov: np.ndarray
    stabilized: bool = False
    n_iter: int = 0


def linear_predictor(beta: CoefficientVector, x, t):
    """eta = beta0 + beta1*x + beta2*t + beta3*t*x (vectorized in x, t)."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    out = beta.beta0 + beta.beta1 * x + beta.beta2 * t + beta.beta3 * t * x
    return out if out.ndim else float(out)


def blip(beta: CoefficientVector, x):
    """Conditional treatment effect gamma(x) = beta2 + beta3*x."""
    x = np.asarray(x, dtype=float)
    out = beta.beta2 + beta.beta3 * x
    return out if out.ndim else float(out)


def generate_outcome(
    family: OutcomeFamily,
    beta: CoefficientVector,
    x,
    t,
    rng: np.random.Generator,
):
    """Draw outcome(s) given biomarker/treatment indicators."""
    eta = np.asarray(linear_predictor(beta, x, t), dtype=float)
    scalar = eta.ndim == 0
    eta = np.atleast_1d(eta)
    if family is OutcomeFamily.GAUSSIAN_IDENTITY:
        y = eta + beta.sigma * rng.standard_normal(eta.shape)
    else:
        y = (rng.random(eta.shape) < expit(eta)).astype(float)
    return float(y[0]) if scalar else y


def sample_subject(
    prevalence: float,
    rand_ratio: float,
    restriction,
    rng: np.random.Generator,
    size: int | None = None,
):
    """Draw (x, t) indicators, with x conditioned to lie in ``restriction``.

    ``restriction`` is None (no conditioning) or a set of biomarker levels;
    conditioning renormalizes the Bernoulli(prevalence) mass over the
    retained levels.
    """
    if not (0.0 < prevalence < 1.0 and 0.0 < rand_ratio < 1.0):
        raise ValueError("prevalence and rand_ratio must lie in (0, 1)")
    if restriction is not None:
        levels = set(restriction)
        if not levels:
            raise ValueError("restriction excludes all biomarker levels")
        if not levels <= {0, 1}:
            raise ValueError("restriction must be a subset of {0, 1}")
        if levels == {1}:
            p1 = 1.0
        elif levels == {0}:
            p1 = 0.0
        else:
            p1 = prevalence
    else:
        p1 = prevalence
    n = 1 if size is None else size
    x = (rng.random(n) < p1).astype(np.int64)
    t = (rng.random(n) < rand_ratio).astype(np.int64)
    if size is None:
        return int(x[0]), int(t[0])
    return x, t


def loglik_current(data: TrialDataset, beta: CoefficientVector) -> float:
    """Joint log density of the trial outcomes under the working model."""
    if len(data) == 0:
        raise ValueError("dataset is empty")
    eta = linear_predictor(beta, data.x, data.t)
    if data.family is OutcomeFamily.GAUSSIAN_IDENTITY:
        sigma = beta.sigma
        if sigma <= 0:
            return -np.inf
        resid = data.y - eta
        return float(
            -0.5 * len(data) * LOG_2PI
            - len(data) * np.log(sigma)
            - 0.5 * np.sum(resid**2) / sigma**2
        )
    # Bernoulli: y*eta - log(1 + exp(eta)), stable via logaddexp
    return float(np.sum(data.y * eta - np.logaddexp(0.0, eta)))


def loglik_gradient_bernoulli(data: TrialDataset, beta: CoefficientVector) -> np.ndarray:
    """Analytic score of the Bernoulli log-likelihood wrt (beta0..beta3)."""
    eta = linear_predictor(beta, data.x, data.t)
    resid = data.y - expit(eta)
    X = data.design_matrix()
    return X.T @ resid


def _check_design(data: TrialDataset):
    X = data.design_matrix()
    # rank via singular values; the 4-column binary design is tiny
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] < 1e-8 * max(sv[0], 1.0):
        raise DegenerateDesignError(
            "degenerate design: columns (1, x, t, tx) are collinear"
        )
    return X


def _irls(X, y, ridge: float = 0.0, tol: float = 1e-8, max_iter: int = 100):
    beta = np.zeros(X.shape[1])
    for it in range(1, max_iter + 1):
        eta = X @ beta
        p = expit(eta)
        grad = X.T @ (y - p) - ridge * beta
        if np.linalg.norm(grad) <= tol:
            return beta, it, True
        w = p * (1.0 - p)
        H = (X.T * w) @ X + ridge * np.eye(X.shape[1])
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            return beta, it, False
        # halving to keep the objective finite under near-separation
        beta_new = beta + step
        if not np.all(np.isfinite(beta_new)) or np.max(np.abs(beta_new)) > 30.0:
            return beta, it, False
        beta = beta_new
    return beta, max_iter, False


def mle_fit(data: TrialDataset) -> MleResult:
    """Maximize the current-trial likelihood.

    Gaussian: ordinary least squares with sigma^2 = RSS / (n - 4).
    Bernoulli: IRLS to gradient norm <= 1e-8; on separation or divergence
    the fit is redone with an L2 penalty of 1e-4 and flagged as stabilized.
    """
    X = _check_design(data)
    if data.family is OutcomeFamily.GAUSSIAN_IDENTITY:
        beta, *_ = np.linalg.lstsq(X, data.y, rcond=None)
        resid = data.y - X @ beta
        dof = max(len(data) - 4, 1)
        sigma2 = float(resid @ resid) / dof
        sigma = float(np.sqrt(max(sigma2, 1e-300)))
        XtX_inv = np.linalg.inv(X.T @ X)
        return MleResult(
            beta=CoefficientVector.from_array(beta, sigma),
            cov=sigma2 * XtX_inv,
            n_iter=1,
        )
    beta, it, ok = _irls(X, data.y)
    stabilized = False
    if not ok:
        beta, it, _ = _irls(X, data.y, ridge=1e-4)
        stabilized = True
    p = expit(X @ beta)
    w = np.clip(p * (1.0 - p), 1e-12, None)
    H = (X.T * w) @ X
    if stabilized:
        H = H + 1e-4 * np.eye(4)
    cov = np.linalg.inv(H)
    return MleResult(
        beta=CoefficientVector.from_array(beta),
        cov=cov,
        stabilized=stabilized,
        n_iter=it,
    )
