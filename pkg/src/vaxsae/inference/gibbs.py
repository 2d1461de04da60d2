"""Polya-Gamma Gibbs sampler for the space-time varying-coefficient logit model.

One sweep:

1. ``omega | eta`` -- exact ``PG(1, eta)`` per record.
2. ``alpha | rest`` -- independent Gaussians per cell (or per wave).
3. For each empowerment field ``k``: a random-walk Metropolis step on
   ``(theta1, theta2)`` targeting the hyperprior times the field's Gaussian
   marginal (the field integrated out given ``omega``), then an exact draw
   of the field from its constrained Gaussian full conditional. With one
   intercept per cell, ``alpha`` is integrated out of this block as well
   and redrawn given the new field, which removes most of the
   intercept/field trade-off from the chain.

Records sharing a cell and an empowerment profile share ``eta``, so the
likelihood enters only through per-group totals of ``omega`` and
``y - 1/2``.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields as dc_fields
from typing import Sequence

import numpy as np

from ..fields import (
    ConstrainedGaussian,
    FieldStructure,
    HyperPrior,
    internal_to_natural,
    log1m_rho2,
    log_hyperprior,
)
from ..graph import AdjacencyGraph, icar_structure
from ..model import FIELDS, ModelState, SurveyData, build_design
from .polya_gamma import sample_polya_gamma

logger = logging.getLogger(__name__)

# support bound on theta2 = log((1+rho)/(1-rho)); |rho| < 1 - 1e-13 inside it
THETA2_MAX = 30.0


@dataclass(frozen=True)
class FitConfig:
    """Sampler settings.

    ``fixed_theta`` pins the internal hyperparameters of every field (shape
    ``(4, 2)``) and skips their Metropolis updates. ``update_omega=False``
    freezes the auxiliaries at their initial value of 1; it exists only as a
    negative control for calibration checks.
    """

    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    thin: int = 1
    seed: int = 0
    sigma2_alpha: float = 1000.0
    intercept: str = "cell"  # "cell" | "year"
    islands: str = "independent"  # "independent" | "pin"
    prior: HyperPrior = field(default_factory=HyperPrior)
    fixed_theta: tuple | None = None
    update_omega: bool = True
    target_accept: float = 0.3
    rhat_threshold: float = 1.05

    def __post_init__(self):
        if self.chains < 1 or self.draws < 1 or self.warmup < 0 or self.thin < 1:
            raise ValueError("chains/draws/thin must be >= 1 and warmup >= 0")
        if self.intercept not in ("cell", "year"):
            raise ValueError("intercept must be 'cell' or 'year'")
        if self.islands not in ("independent", "pin"):
            raise ValueError("islands must be 'independent' or 'pin'")
        if self.sigma2_alpha <= 0:
            raise ValueError("sigma2_alpha must be positive")
        if self.fixed_theta is not None:
            arr = np.asarray(self.fixed_theta, dtype=float)
            if arr.shape != (4, 2):
                raise ValueError("fixed_theta must have shape (4, 2)")
            object.__setattr__(self, "fixed_theta", tuple(map(tuple, arr.tolist())))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fixed_theta"] = None if self.fixed_theta is None else [list(r) for r in self.fixed_theta]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = {f.name for f in dc_fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown fit config key(s): {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("prior"), dict):
            d["prior"] = HyperPrior(**d["prior"])
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class Problem:
    """Data for one vaccine, grouped by (cell, empowerment profile)."""

    def __init__(self, data: SurveyData, graph: AdjacencyGraph, vaccine: str, islands: str = "independent"):
        if data.n_units != graph.n_units:
            raise ValueError("data and graph disagree on the number of units")
        self.n, self.T = graph.n_units, data.T
        self.n_cells = self.n * self.T
        self.vaccine = vaccine
        self.structure = FieldStructure(icar_structure(graph), self.T, islands)
        self.AtA = self.structure.A.T @ self.structure.A if self.structure.A.size else None
        y = data.outcome(vaccine).astype(float)
        key = data.cell * 9 + data.dm_class * 3 + data.hc_class
        uniq, inv = np.unique(key, return_inverse=True)
        self.record_group = inv.astype(np.int64)
        self.g_cell = (uniq // 9).astype(np.int64)
        dm = (uniq % 9) // 3
        hc = uniq % 3
        self.g_delta = build_design(dm, hc).astype(float).T.copy()  # (4, G)
        self.g_n = np.bincount(inv, minlength=len(uniq)).astype(float)
        self.g_s = np.bincount(inv, weights=y, minlength=len(uniq))
        self.g_kappa = self.g_s - 0.5 * self.g_n
        self.g_time = self.g_cell // self.n
        self.n_records = data.n_records

    @property
    def n_groups(self) -> int:
        return len(self.g_cell)

    def group_eta(self, state: ModelState) -> np.ndarray:
        a = state.alpha.T.ravel()  # time-major flat
        eta = a[self.g_cell].copy()
        for k in range(4):
            eta += state.gamma[k].T.ravel()[self.g_cell] * self.g_delta[k]
        return eta


def _flat(x: np.ndarray) -> np.ndarray:
    """(n, T) array -> time-major vector."""
    return x.T.ravel()


def _unflat(v: np.ndarray, n: int, T: int) -> np.ndarray:
    return v.reshape(T, n).T.copy()


def latent_full_conditional(k: int, state: ModelState, problem: Problem, Q_prior: np.ndarray,
                            omega_g: np.ndarray | None = None):
    """Gaussian full conditional of field ``k`` in canonical form.

    Returns ``(Q_post, b)``: the prior precision plus the diagonal
    Polya-Gamma contribution per cell, and the canonical mean vector
    ``sum (y - 1/2 - omega * eta_without_k) * delta`` per cell. ``omega_g``
    defaults to per-group totals of ``state.omega``.
    """
    if omega_g is None:
        omega_g = np.bincount(problem.record_group, weights=state.omega, minlength=problem.n_groups)
    eta = problem.group_eta(state)
    d = problem.g_delta[k]
    eta_rest = eta - _flat(state.gamma[k])[problem.g_cell] * d
    D = np.bincount(problem.g_cell, weights=omega_g * d, minlength=problem.n_cells)
    b = np.bincount(problem.g_cell, weights=d * (problem.g_kappa - omega_g * eta_rest),
                    minlength=problem.n_cells)
    Q_post = np.array(Q_prior, dtype=float, copy=True)
    Q_post[np.diag_indices_from(Q_post)] += D
    return Q_post, b


@dataclass
class ChainResult:
    alpha: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    accept_rate: np.ndarray
    step: np.ndarray


class _Sampler:
    def __init__(self, problem: Problem, config: FitConfig, rng: np.random.Generator):
        self.p = problem
        self.cfg = config
        self.rng = rng
        self.fixed = None if config.fixed_theta is None else np.asarray(config.fixed_theta, dtype=float)

    # -- initial state ------------------------------------------------
    def initial_state(self) -> ModelState:
        p, rng = self.p, self.rng
        n, T = p.n, p.T
        cell_n = np.bincount(p.g_cell, weights=p.g_n, minlength=p.n_cells)
        cell_s = np.bincount(p.g_cell, weights=p.g_s, minlength=p.n_cells)
        a0 = np.log((cell_s + 0.5) / (cell_n - cell_s + 0.5))
        if self.cfg.intercept == "year":
            a0 = np.repeat(a0.reshape(T, n).mean(axis=1), n)
        alpha = _unflat(a0 + 0.5 * rng.standard_normal(p.n_cells), n, T)
        if self.cfg.intercept == "year":
            alpha = np.repeat(alpha.mean(axis=0, keepdims=True), n, axis=0)
        if self.fixed is not None:
            theta = self.fixed.copy()
        else:
            theta2 = rng.normal(0.0, 1.0, 4)
            log_tau = rng.normal(0.0, 1.0, 4)
            rho = np.tanh(theta2 / 2.0)
            theta = np.column_stack([log_tau + np.log1p(-rho * rho), theta2])
        return ModelState(alpha=alpha, gamma=np.zeros((4, n, T)), theta=theta, omega=np.ones(p.n_records))

    # -- blocks -------------------------------------------------------
    def update_omega(self, state: ModelState, eta_g: np.ndarray) -> np.ndarray:
        p = self.p
        if self.cfg.update_omega and p.n_records:
            state.omega = sample_polya_gamma(1, eta_g[p.record_group], self.rng)
        return np.bincount(p.record_group, weights=state.omega, minlength=p.n_groups)

    def update_alpha(self, state: ModelState, eta_g: np.ndarray, omega_g: np.ndarray) -> np.ndarray:
        p, rng = self.p, self.rng
        a_flat = _flat(state.alpha)
        resid = p.g_kappa - omega_g * (eta_g - a_flat[p.g_cell])
        if self.cfg.intercept == "cell":
            D = np.bincount(p.g_cell, weights=omega_g, minlength=p.n_cells)
            b = np.bincount(p.g_cell, weights=resid, minlength=p.n_cells)
            prec = 1.0 / self.cfg.sigma2_alpha + D
            new = b / prec + rng.standard_normal(p.n_cells) / np.sqrt(prec)
        else:
            D = np.bincount(p.g_time, weights=omega_g, minlength=p.T)
            b = np.bincount(p.g_time, weights=resid, minlength=p.T)
            prec = 1.0 / self.cfg.sigma2_alpha + D
            new = np.repeat(b / prec + rng.standard_normal(p.T) / np.sqrt(prec), p.n)
        eta_g = eta_g + (new - a_flat)[p.g_cell]
        state.alpha = _unflat(new, p.n, p.T)
        return eta_g

    def _conditional(self, theta: np.ndarray, D: np.ndarray, b: np.ndarray):
        rho, tau = internal_to_natural(theta[0], theta[1])
        log1m = float(log1m_rho2(theta[1]))
        s = self.p.structure
        K = s.structure(rho, log1m)
        Q = tau * K
        Q[np.diag_indices_from(Q)] += D
        if self.p.AtA is not None:
            Q += (tau * float(np.mean(np.diag(K))) + 1.0) * self.p.AtA
        cg = ConstrainedGaussian(Q, b=b, A=s.A if s.A.size else None)
        log_marg = 0.5 * s.log_pdet(rho, tau, log1m) + cg.log_integral()
        return cg, log_marg

    def update_field(self, k: int, state: ModelState, eta_g: np.ndarray, omega_g: np.ndarray,
                     chol: np.ndarray, log_step: float) -> tuple[np.ndarray, bool]:
        """Joint block ``(theta_k, gamma_k)``, plus ``alpha`` in cell-intercept mode.

        With one intercept per cell, ``alpha[c]`` couples only to cell ``c`` of
        the field, so it is integrated out cell by cell: the field sees the
        Schur-complement precision ``W - w^2 / P`` and the intercept is redrawn
        from ``alpha | gamma_k`` afterwards.
        """
        p, rng = self.p, self.rng
        d = p.g_delta[k]
        g_old = _flat(state.gamma[k])
        eta_rest = eta_g - g_old[p.g_cell] * d
        W = np.bincount(p.g_cell, weights=omega_g * d, minlength=p.n_cells)
        G = np.bincount(p.g_cell, weights=d * (p.g_kappa - omega_g * eta_rest), minlength=p.n_cells)
        joint_alpha = self.cfg.intercept == "cell"
        if joint_alpha:
            a_old = _flat(state.alpha)
            r = eta_rest - a_old[p.g_cell]
            P = 1.0 / self.cfg.sigma2_alpha + np.bincount(p.g_cell, weights=omega_g, minlength=p.n_cells)
            B = np.bincount(p.g_cell, weights=p.g_kappa - omega_g * r, minlength=p.n_cells)
            G = G + W * a_old  # drop the current intercept from the field's canonical term
            D = W - W * W / P
            b = G - W * B / P
        else:
            D, b = W, G
        theta = state.theta[k]
        cg, lm = self._conditional(theta, D, b)
        accepted = False
        if self.fixed is None:
            prop = theta + np.exp(log_step) * (chol @ rng.standard_normal(2))
            u = np.log(rng.random())
            # theta2 is truncated to |theta2| <= THETA2_MAX; beyond it rho rounds to 1
            if abs(prop[1]) <= THETA2_MAX:
                cg_p, lm_p = self._conditional(prop, D, b)
                log_r = (lm_p + float(log_hyperprior(prop[0], prop[1], self.cfg.prior))
                         - lm - float(log_hyperprior(theta[0], theta[1], self.cfg.prior)))
            else:
                log_r = -np.inf
            if u < log_r:
                state.theta[k] = prop
                cg = cg_p
                accepted = True
        g_new = cg.sample(rng)
        state.gamma[k] = _unflat(g_new, p.n, p.T)
        eta_new = eta_rest + g_new[p.g_cell] * d
        if joint_alpha:
            a_new = (B - W * g_new) / P + rng.standard_normal(p.n_cells) / np.sqrt(P)
            eta_new += (a_new - a_old)[p.g_cell]
            state.alpha = _unflat(a_new, p.n, p.T)
        return eta_new, accepted

    # -- driver -------------------------------------------------------
    def run(self, state: ModelState | None = None) -> ChainResult:
        cfg, p = self.cfg, self.p
        state = self.initial_state() if state is None else state
        n_iter = cfg.warmup + cfg.draws * cfg.thin
        out_alpha = np.empty((cfg.draws, p.n, p.T))
        out_gamma = np.empty((cfg.draws, 4, p.n, p.T))
        out_theta = np.empty((cfg.draws, 4, 2))
        log_step = np.full(4, np.log(0.5))
        chol = np.stack([np.eye(2)] * 4)
        # running moments of theta during warmup for the proposal shape
        m1 = np.zeros((4, 2))
        m2 = np.zeros((4, 2, 2))
        n_acc = np.zeros(4)
        n_post = 0
        eta_g = p.group_eta(state)
        for it in range(n_iter):
            omega_g = self.update_omega(state, eta_g)
            eta_g = self.update_alpha(state, eta_g, omega_g)
            for k in range(4):
                eta_g, acc = self.update_field(k, state, eta_g, omega_g, chol[k], log_step[k])
                if it < cfg.warmup and self.fixed is None:
                    rate = (it + 1) ** -0.6
                    log_step[k] += rate * ((1.0 if acc else 0.0) - cfg.target_accept)
                elif it >= cfg.warmup:
                    n_acc[k] += acc
            if it < cfg.warmup and self.fixed is None:
                w = 1.0 / (it + 1)
                m1 += w * (state.theta - m1)
                m2 += w * (np.einsum("ki,kj->kij", state.theta, state.theta) - m2)
                if it + 1 == cfg.warmup // 2 and it >= 50:
                    cov = m2 - np.einsum("ki,kj->kij", m1, m1)
                    for k in range(4):
                        c = cov[k] + 1e-6 * np.eye(2)
                        c /= np.sqrt(np.linalg.det(c))  # unit-determinant shape; scale from log_step
                        chol[k] = np.linalg.cholesky(c)
            if it >= cfg.warmup:
                i = it - cfg.warmup
                if i % cfg.thin == 0:
                    j = i // cfg.thin
                    out_alpha[j] = state.alpha
                    out_gamma[j] = state.gamma
                    out_theta[j] = state.theta
                    n_post += 1
        accept = n_acc / max(cfg.draws * cfg.thin, 1) if self.fixed is None else np.full(4, np.nan)
        return ChainResult(out_alpha, out_gamma, out_theta, accept, np.exp(log_step))


@dataclass
class PosteriorDraws:
    """Post-warmup draws stacked as arrays with a leading ``(chain, draw)`` shape."""

    alpha: np.ndarray  # (C, S, n, T)
    gamma: np.ndarray  # (C, S, 4, n, T)
    theta: np.ndarray  # (C, S, 4, 2)
    meta: dict

    @property
    def n_chains(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_draws(self) -> int:
        return self.alpha.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        n, T = self.alpha.shape[2:]
        return n, T

    @property
    def rho(self) -> np.ndarray:
        return internal_to_natural(self.theta[..., 0], self.theta[..., 1])[0]

    @property
    def tau(self) -> np.ndarray:
        return internal_to_natural(self.theta[..., 0], self.theta[..., 1])[1]

    def state(self, chain: int, draw: int) -> ModelState:
        return ModelState(self.alpha[chain, draw].copy(), self.gamma[chain, draw].copy(),
                          self.theta[chain, draw].copy())

    def states(self):
        for c in range(self.n_chains):
            for s in range(self.n_draws):
                yield self.state(c, s)

    def flat(self, name: str) -> np.ndarray:
        """Chains merged: ``(C*S, ...)``."""
        arr = getattr(self, name)
        return arr.reshape((-1,) + arr.shape[2:])

    def parameter_table(self) -> dict[str, np.ndarray]:
        """Every scalar parameter as a ``(C, S)`` array, keyed by name."""
        C, S = self.alpha.shape[:2]
        n, T = self.shape
        years = self.meta.get("years", list(range(T)))
        out = {}
        for t in range(T):
            for j in range(n):
                out[f"alpha[{j},{years[t]}]"] = self.alpha[:, :, j, t]
        for k, name in enumerate(FIELDS):
            for t in range(T):
                for j in range(n):
                    out[f"gamma_{name}[{j},{years[t]}]"] = self.gamma[:, :, k, j, t]
        if not self.meta.get("fixed_hyper", False):
            rho, tau = self.rho, self.tau
            for k, name in enumerate(FIELDS):
                out[f"rho_{name}"] = rho[:, :, k]
                out[f"tau_{name}"] = tau[:, :, k]
        return out


def fit(data: SurveyData, graph: AdjacencyGraph, config: FitConfig = FitConfig(),
        vaccine: str = "dpt_complete", n_jobs: int = 1, diagnose: bool = True) -> PosteriorDraws:
    """Run ``config.chains`` independent chains and stack their draws.

    Chain ``c`` uses the ``c``-th child of ``SeedSequence(config.seed)``, so
    results are reproducible bit for bit and do not depend on ``n_jobs``.
    The returned ``meta`` carries acceptance rates, adapted step sizes and,
    when ``diagnose`` is set, split R-hat and ESS for every scalar parameter
    plus a ``converged`` flag (all R-hat <= ``config.rhat_threshold``).
    """
    problem = Problem(data, graph, vaccine, config.islands)
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    if n_jobs == 1 or config.chains == 1:
        results = [_run_chain(problem, config, s) for s in seeds]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_run_chain, [problem] * len(seeds), [config] * len(seeds), seeds))
    meta = {
        "vaccine": vaccine,
        "seed": config.seed,
        "chains": config.chains,
        "warmup": config.warmup,
        "draws": config.draws,
        "thin": config.thin,
        "config_hash": config.hash(),
        "fixed_hyper": config.fixed_theta is not None,
        "years": list(data.years),
        "accept_rate": np.array([r.accept_rate for r in results]).tolist(),
        "step_size": np.array([r.step for r in results]).tolist(),
    }
    draws = PosteriorDraws(
        alpha=np.stack([r.alpha for r in results]),
        gamma=np.stack([r.gamma for r in results]),
        theta=np.stack([r.theta for r in results]),
        meta=meta,
    )
    if diagnose and config.chains >= 2 and config.draws >= 4:
        from .diagnostics import summarize_diagnostics

        diag = summarize_diagnostics(draws.parameter_table())
        meta["rhat"] = diag["rhat"]
        meta["ess"] = diag["ess"]
        meta["max_rhat"] = diag["max_rhat"]
        meta["converged"] = bool(diag["max_rhat"] <= config.rhat_threshold)
        if not meta["converged"]:
            logger.warning("non-convergence: max R-hat %.3f > %.3f", diag["max_rhat"], config.rhat_threshold)
    return draws


def _run_chain(problem: Problem, config: FitConfig, seed: np.random.SeedSequence) -> ChainResult:
    rng = np.random.default_rng(seed)
    return _Sampler(problem, config, rng).run()


def run_chain(data: SurveyData, graph: AdjacencyGraph, config: FitConfig, vaccine: str,
              rng: np.random.Generator, init: ModelState | None = None) -> ChainResult:
    """A single chain with an explicit generator and optional initial state."""
    problem = Problem(data, graph, vaccine, config.islands)
    return _Sampler(problem, config, rng).run(init)


__all__: Sequence[str] = (
    "FitConfig", "PosteriorDraws", "Problem", "fit", "latent_full_conditional", "run_chain",
)
