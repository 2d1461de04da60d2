"""Space-time GMRF priors: ICAR in space crossed with AR1 in time.

Field vectors of shape ``(n, T)`` are flattened time-major, so cell
``(j, t)`` sits at position ``t * n + j`` and the precision is
``kron(Q_time, R)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.special import gammaln

from .graph import IcarStructure

IslandMode = Literal["independent", "pin"]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class FieldHyper:
    """Temporal correlation ``rho`` and marginal precision ``tau`` of one field."""

    rho: float
    tau: float

    def __post_init__(self):
        if not abs(self.rho) < 1.0:
            raise ValueError(f"|rho| must be < 1, got {self.rho}")
        if not self.tau > 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    @property
    def kappa(self) -> float:
        """Innovation precision of the AR1 recursion."""
        return self.tau * (1.0 - self.rho**2)

    @property
    def theta1(self) -> float:
        return natural_to_internal(self.rho, self.tau)[0]

    @property
    def theta2(self) -> float:
        return natural_to_internal(self.rho, self.tau)[1]

    @classmethod
    def from_internal(cls, theta1: float, theta2: float) -> "FieldHyper":
        return cls(*internal_to_natural(theta1, theta2))


def natural_to_internal(rho, tau):
    """Map ``(rho, tau)`` to ``(log kappa, log((1+rho)/(1-rho)))``."""
    rho = np.asarray(rho, dtype=float)
    tau = np.asarray(tau, dtype=float)
    theta1 = np.log(tau) + np.log1p(-rho) + np.log1p(rho)
    theta2 = np.log1p(rho) - np.log1p(-rho)
    if theta1.ndim == 0:
        return float(theta1), float(theta2)
    return theta1, theta2


def internal_to_natural(theta1, theta2):
    """Inverse of :func:`natural_to_internal`; defined on all of R^2."""
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    rho = np.tanh(theta2 / 2.0)
    # 1 - rho^2 = sech^2(theta2/2), written to avoid cancellation near |rho| = 1
    log_one_minus_rho2 = -2.0 * np.logaddexp(theta2 / 2.0, -theta2 / 2.0) + 2.0 * np.log(2.0)
    tau = np.exp(theta1 - log_one_minus_rho2)
    if rho.ndim == 0:
        return float(rho), float(tau)
    return rho, tau


def log1m_rho2(theta2):
    """``log(1 - rho^2)`` as a function of the internal ``theta2``."""
    theta2 = np.asarray(theta2, dtype=float)
    return 2.0 * np.log(2.0) - 2.0 * np.logaddexp(theta2 / 2.0, -theta2 / 2.0)


def ar1_precision(T: int, rho: float, tau_marginal: float) -> np.ndarray:
    """Tridiagonal precision of a stationary AR1 with marginal precision ``tau_marginal``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not abs(rho) < 1.0:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    if not tau_marginal > 0:
        raise ValueError("tau_marginal must be positive")
    if T == 1:
        return np.array([[float(tau_marginal)]])
    diag = np.full(T, 1.0 + rho**2)
    diag[[0, -1]] = 1.0
    Q = np.diag(diag) - rho * (np.eye(T, k=1) + np.eye(T, k=-1))
    return tau_marginal / (1.0 - rho**2) * Q


# ---------------------------------------------------------------- hyperpriors


@dataclass(frozen=True)
class HyperPrior:
    """Hyperprior settings for one field.

    ``precision_target`` picks which log-gamma entry is active: ``"log_tau"``
    puts ``loggamma(log_tau_shape, log_tau_rate)`` on the log marginal
    precision, ``"theta1"`` puts ``loggamma(theta1_shape, theta1_rate)`` on the
    log innovation precision. Both entries are always carried.
    """

    log_tau_shape: float = 1.0
    log_tau_rate: float = 5e-4
    theta1_shape: float = 1.0
    theta1_rate: float = 5e-5
    theta2_mean: float = 0.0
    theta2_sd: float = 7.0
    precision_target: str = "log_tau"

    def __post_init__(self):
        for name in ("log_tau_shape", "log_tau_rate", "theta1_shape", "theta1_rate", "theta2_sd"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.precision_target not in ("log_tau", "theta1"):
            raise ValueError("precision_target must be 'log_tau' or 'theta1'")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def loggamma_logpdf(theta, shape: float, rate: float):
    """Density of ``theta`` when ``exp(theta) ~ Gamma(shape, rate)``."""
    if shape <= 0 or rate <= 0:
        raise ValueError("shape and rate must be positive")
    theta = np.asarray(theta, dtype=float)
    return shape * np.log(rate) - gammaln(shape) + shape * theta - rate * np.exp(theta)


def normal_logpdf(x, mean: float, sd: float):
    x = np.asarray(x, dtype=float)
    return -0.5 * (_LOG_2PI + 2.0 * np.log(sd)) - 0.5 * ((x - mean) / sd) ** 2


def log_hyperprior(theta1, theta2, prior: HyperPrior = HyperPrior()):
    """Joint log prior density of ``(theta1, theta2)``.

    With ``precision_target="log_tau"`` the log-gamma density is evaluated at
    ``log tau = theta1 - log(1 - rho^2)``; that change of variables is a shear
    with unit Jacobian, so no correction term appears.
    """
    if prior.precision_target == "theta1":
        lp1 = loggamma_logpdf(theta1, prior.theta1_shape, prior.theta1_rate)
    else:
        log_tau = np.asarray(theta1, dtype=float) - log1m_rho2(theta2)
        lp1 = loggamma_logpdf(log_tau, prior.log_tau_shape, prior.log_tau_rate)
    return lp1 + normal_logpdf(theta2, prior.theta2_mean, prior.theta2_sd)


def sample_hyperprior(prior: HyperPrior, rng: np.random.Generator, size: int | None = None):
    """Draw ``(theta1, theta2)`` from the hyperprior; returns two arrays (or floats)."""
    theta2 = rng.normal(prior.theta2_mean, prior.theta2_sd, size)
    if prior.precision_target == "theta1":
        theta1 = np.log(rng.gamma(prior.theta1_shape, 1.0 / prior.theta1_rate, size))
    else:
        log_tau = np.log(rng.gamma(prior.log_tau_shape, 1.0 / prior.log_tau_rate, size))
        theta1 = log_tau + log1m_rho2(theta2)
    return theta1, theta2


# ------------------------------------------------------ space-time precision


@dataclass(frozen=True)
class SpatioTemporalPrecision:
    Q: sp.csr_matrix
    constraint_basis: np.ndarray  # (k, n*T), one row per constrained direction
    rank: int


class FieldStructure:
    """Hyperparameter-free pieces of one space-time field.

    Holds the dense ICAR matrix, island handling and the constraint matrix so
    that ``precision(rho, tau)`` and ``log_pdet(rho, tau)`` are cheap to call
    inside a sampler.
    """

    def __init__(self, icar: IcarStructure, T: int, islands: IslandMode = "independent"):
        if islands not in ("independent", "pin"):
            raise ValueError("islands must be 'independent' or 'pin'")
        self.icar = icar
        self.T = int(T)
        self.n = icar.n_units
        self.island_mode = islands
        self.R = icar.R.toarray().astype(float)
        isl = np.zeros(self.n, dtype=bool)
        isl[list(icar.islands)] = True
        self.island_mask = isl
        self.island_diag = np.tile(isl.astype(float), self.T) if islands == "independent" else None
        groups = icar.connected_groups
        rows = []
        for t in range(self.T):
            for members in groups:
                v = np.zeros(self.n * self.T)
                v[t * self.n + members] = 1.0
                rows.append(v)
            if islands == "pin":
                for i in icar.islands:
                    v = np.zeros(self.n * self.T)
                    v[t * self.n + i] = 1.0
                    rows.append(v)
        self.A = np.array(rows).reshape(-1, self.n * self.T)
        self.n_struct = int(self.n - isl.sum())
        self.n_groups = len(groups)
        self.rank = (self.n_struct - self.n_groups) * self.T
        if islands == "independent":
            self.rank += int(isl.sum()) * self.T
        self._log_pdet_R = icar.log_pdet()
        # unit-marginal AR1 precision is (I + rho^2 M - rho O) / (1 - rho^2)
        if self.T > 1:
            M = np.eye(self.T)
            M[0, 0] = M[-1, -1] = 0.0
            O = np.eye(self.T, k=1) + np.eye(self.T, k=-1)
            self._kron = (np.kron(np.eye(self.T), self.R), np.kron(M, self.R), np.kron(O, self.R))
        else:
            self._kron = None

    @property
    def size(self) -> int:
        return self.n * self.T

    def structure(self, rho: float, log1m: float | None = None) -> np.ndarray:
        """Dense precision at unit marginal precision.

        ``log1m`` is ``log(1 - rho^2)`` when the caller has it in a stable
        form (see :func:`log1m_rho2`); near ``|rho| = 1`` the naive
        difference loses most of its digits.
        """
        if log1m is None:
            if not abs(rho) < 1:
                raise ValueError("|rho| must be < 1")
            log1m = float(np.log1p(-rho * rho))
        if self._kron is None:
            K = self.R.copy()
        else:
            KI, KM, KO = self._kron
            K = (KI + (rho * rho) * KM - rho * KO) * np.exp(-log1m)
        if self.island_diag is not None:
            K[np.diag_indices_from(K)] += self.island_diag
        return K

    def precision(self, rho: float, tau: float) -> np.ndarray:
        return tau * self.structure(rho)

    def log_pdet(self, rho: float, tau: float, log1m: float | None = None) -> float:
        """Log generalized determinant of ``precision(rho, tau)``."""
        m = self.n_struct - self.n_groups
        out = self.rank * np.log(tau) + self.T * self._log_pdet_R
        if self.T > 1:
            out -= m * (self.T - 1) * (np.log1p(-rho * rho) if log1m is None else log1m)
        return float(out)

    def log_density(self, x: np.ndarray, rho: float, tau: float) -> float:
        """Log prior density of a constrained field vector, w.r.t. the constraint surface."""
        q = float(x @ self.structure(rho) @ x)
        return 0.5 * (self.log_pdet(rho, tau) - self.rank * _LOG_2PI - tau * q)


def spatiotemporal_precision(
    icar: IcarStructure, T: int, hyper: FieldHyper, islands: IslandMode = "independent"
) -> SpatioTemporalPrecision:
    """Separable ICAR x AR1 precision with its sum-to-zero constraint basis."""
    fs = FieldStructure(icar, T, islands)
    Q = sp.csr_matrix(fs.precision(hyper.rho, hyper.tau))
    return SpatioTemporalPrecision(Q=Q, constraint_basis=fs.A, rank=fs.rank)


# ------------------------------------------------- constrained Gaussian draws


class FactorizationError(np.linalg.LinAlgError):
    pass


class ConstrainedGaussian:
    """``N(Q^{-1} b, Q^{-1})`` conditioned on ``A x = 0``.

    ``Q`` must be positive definite. The conditional draw uses
    sample-then-correct: ``x* = x - Q^{-1} A' (A Q^{-1} A')^{-1} A x``.
    """

    def __init__(self, Q, b=None, A=None, mean=None):
        Q = Q.toarray() if sp.issparse(Q) else np.asarray(Q, dtype=float)
        try:
            self.L = sla.cholesky(Q, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError("precision is not positive definite") from exc
        if not np.all(np.isfinite(self.L)):
            raise FactorizationError("precision is not positive definite")
        n = Q.shape[0]
        if mean is not None:
            self.mean = np.asarray(mean, dtype=float)
            self.b = Q @ self.mean
        else:
            self.b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
            self.mean = self._solve(self.b)
        self.A = None if A is None or len(A) == 0 else np.atleast_2d(np.asarray(A, dtype=float))
        if self.A is not None:
            # W = L^{-1} A'; A Q^{-1} A' = W'W
            self.W = sla.solve_triangular(self.L, self.A.T, lower=True, check_finite=False)
            self.QinvAt = sla.solve_triangular(self.L.T, self.W, lower=False, check_finite=False)
            S = self.W.T @ self.W
            try:
                self.LS = sla.cholesky(S, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise FactorizationError("constraints are linearly dependent") from exc

    def _solve(self, v):
        return sla.cho_solve((self.L, True), v, check_finite=False)

    def _correct(self, x):
        if self.A is None:
            return x
        lam = sla.cho_solve((self.LS, True), self.A @ x, check_finite=False)
        return x - self.QinvAt @ lam

    def conditional_mean(self) -> np.ndarray:
        return self._correct(self.mean)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        n = self.L.shape[0]
        z = rng.standard_normal(n if size is None else (n, size))
        x = sla.solve_triangular(self.L.T, z, lower=False, check_finite=False)
        x = x + (self.mean if size is None else self.mean[:, None])
        x = self._correct(x)
        return x if size is None else x.T.copy()

    def log_integral(self) -> float:
        """``log`` of the integral of ``exp(-x'Qx/2 + b'x)`` over ``{A x = 0}``.

        Measured against surface measure, dropping ``log|A A'|/2`` and the
        ``2 pi`` powers, which do not depend on ``Q`` or ``b``.
        """
        out = -float(np.sum(np.log(np.diag(self.L)))) + 0.5 * float(self.b @ self.mean)
        if self.A is not None:
            am = self.A @ self.mean
            out -= float(np.sum(np.log(np.diag(self.LS))))
            v = sla.solve_triangular(self.LS, am, lower=True, check_finite=False)
            out -= 0.5 * float(v @ v)
        return out


def sample_constrained_gaussian(Q_posterior, mean_vector, constraints, rng) -> np.ndarray:
    """One draw from ``N(mean, Q^{-1})`` conditioned on ``constraints @ x = 0``."""
    return ConstrainedGaussian(Q_posterior, A=constraints, mean=mean_vector).sample(rng)


def constraint_penalty(A: np.ndarray, scale: float) -> np.ndarray:
    """``scale * A'A``; adding it leaves the density on ``{A x = 0}`` unchanged."""
    return scale * (A.T @ A)
