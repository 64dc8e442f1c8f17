"""Generalized ridge maximum likelihood by damped Newton iterations.

Maximizes ``L_N(theta) - lam * ||W (theta - target)||^2`` where ``W`` is
the weighting matrix.  ``lam = 0`` gives the ordinary MLE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, InvalidWeightingError, SolverFailure
from .families import Dataset, ModelFamily, get_family

__all__ = ["PenaltySpec", "FitResult", "fit", "fit_mle", "ARMIJO", "GRAD_TOL", "MAX_ITER"]

ARMIJO = 1e-4
MAX_HALVINGS = 50
GRAD_TOL = 1e-8
MAX_ITER = 200
SEPARATION_COEF = 1e3
SEPARATION_COND = 1e12


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty parameter, weighting matrix, shrinkage target and mask.

    Rows and columns of ``weight`` outside ``mask`` must be zero, and
    ``weight' weight`` restricted to the masked block must be positive
    definite.
    """

    lam: float
    weight: np.ndarray
    target: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        W = np.asarray(self.weight, dtype=float)
        t = np.asarray(self.target, dtype=float)
        m = np.asarray(self.mask, dtype=bool)
        p = t.shape[0]
        if not np.isfinite(self.lam) or self.lam < 0:
            raise InvalidArgumentError(f"lambda must be a finite non-negative number, got {self.lam}")
        if W.shape != (p, p) or m.shape != (p,):
            raise InvalidArgumentError("weight, target and mask dimensions disagree")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(t))):
            raise InvalidArgumentError("weight and target must be finite")
        if np.any(W[~m, :] != 0) or np.any(W[:, ~m] != 0):
            raise InvalidWeightingError("weighting matrix must vanish outside the penalization mask")
        if m.any():
            G = W[np.ix_(m, m)]
            if np.linalg.eigvalsh(G.T @ G).min() <= 1e-12:
                raise InvalidWeightingError("weight'weight is not positive definite on the masked block")
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "weight", W)
        object.__setattr__(self, "target", t)
        object.__setattr__(self, "mask", m)

    @property
    def p(self) -> int:
        return self.target.shape[0]

    @property
    def gram(self) -> np.ndarray:
        """``weight' weight``."""
        return self.weight.T @ self.weight

    @classmethod
    def none(cls, p: int) -> PenaltySpec:
        """Zero penalty on all ``p`` coordinates."""
        return cls(0.0, np.eye(p), np.zeros(p), np.ones(p, dtype=bool))

    @classmethod
    def ridge(cls, lam: float, p: int, mask=None, target=None) -> PenaltySpec:
        """Identity weighting on the masked coordinates."""
        m = np.ones(p, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        t = np.zeros(p) if target is None else np.asarray(target, dtype=float)
        return cls(lam, np.diag(m.astype(float)), t, m)

    def with_lambda(self, lam: float) -> PenaltySpec:
        return PenaltySpec(lam, self.weight, self.target, self.mask)


@dataclass
class FitResult:
    theta_hat: np.ndarray
    converged: bool
    iterations: int
    final_gradient_norm: float
    observed_hessian: np.ndarray
    objective_value: float
    lam: float = 0.0
    suspect_separation: bool = False
    hessian_condition: float = float("nan")

    @property
    def max_abs_coef(self) -> float:
        return float(np.max(np.abs(self.theta_hat)))


def _objective(family, data, theta, lam, A, target) -> float:
    d = theta - target
    return family.loglik_mean(theta, data) - lam * float(d @ A @ d)


def _newton_direction(Hp: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve ``-Hp d = g`` with Levenberg damping if ``-Hp`` is not numerically PD."""
    M = -Hp
    p = M.shape[0]
    mu = 0.0
    while True:
        try:
            L = np.linalg.cholesky(M + mu * np.eye(p) if mu else M)
        except np.linalg.LinAlgError:
            mu = 1e-10 if mu == 0.0 else mu * 10.0
            if mu > 1e12:
                raise SolverFailure("Newton system singular after damping up to 1e12") from None
            continue
        # reject factorizations that are formally PD but numerically useless
        diag = np.diag(L)
        if diag.min() <= 1e-12 * max(1.0, diag.max()):
            mu = 1e-10 if mu == 0.0 else mu * 10.0
            if mu > 1e12:
                raise SolverFailure("Newton system singular after damping up to 1e12")
            continue
        y = np.linalg.solve(L, g)
        return np.linalg.solve(L.T, y)


def fit(
    family: ModelFamily | str,
    data: Dataset,
    penalty: PenaltySpec,
    init=None,
    *,
    max_iter: int = MAX_ITER,
    grad_tol: float = GRAD_TOL,
) -> FitResult:
    """Maximize the penalized log-likelihood.

    Non-convergence is reported through ``FitResult.converged``; only a
    Newton system that stays singular after damping raises
    :class:`SolverFailure`.
    """
    family = get_family(family)
    p = family.n_params(data.k, data.category_count)
    if penalty.p != p:
        raise InvalidArgumentError(f"penalty has dimension {penalty.p}, model needs {p}")
    theta = family.check(data, np.zeros(p) if init is None else init).copy()

    lam = penalty.lam
    A = penalty.gram
    target = penalty.target

    converged = False
    it = 0
    while True:
        ll, g, H = family.evaluate(theta, data)
        d = theta - target
        f = ll - lam * float(d @ A @ d)
        gp = g - 2.0 * lam * (A @ d)
        Hp = H - 2.0 * lam * A
        gnorm = float(np.linalg.norm(gp))
        if gnorm <= grad_tol * max(1.0, float(np.linalg.norm(theta))):
            converged = True
            break
        if it >= max_iter:
            break
        step = _newton_direction(Hp, gp)
        slope = float(gp @ step)
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = theta + t * step
            fc = _objective(family, data, cand, lam, A, target)
            if np.isfinite(fc) and fc >= f + ARMIJO * t * slope:
                accepted = True
                break
            t *= 0.5
        it += 1
        if not accepted:
            # no ascent possible at working precision
            break
        stalled = abs(fc - f) <= 1e-15 * max(1.0, abs(f)) and float(
            np.linalg.norm(t * step)
        ) <= 1e-12 * max(1.0, float(np.linalg.norm(theta)))
        theta = cand
        if stalled:
            ll, g, H = family.evaluate(theta, data)
            d = theta - target
            f = ll - lam * float(d @ A @ d)
            gp = g - 2.0 * lam * (A @ d)
            Hp = H - 2.0 * lam * A
            gnorm = float(np.linalg.norm(gp))
            converged = gnorm <= grad_tol * max(1.0, float(np.linalg.norm(theta)))
            break

    Hp = 0.5 * (Hp + Hp.T)
    cond = _condition(H)
    suspect = _suspect_separation(family, data, theta, cond)
    return FitResult(
        theta_hat=theta,
        converged=converged,
        iterations=it,
        final_gradient_norm=gnorm,
        observed_hessian=Hp,
        objective_value=f,
        lam=lam,
        suspect_separation=suspect,
        hessian_condition=cond,
    )


def _condition(H: np.ndarray) -> float:
    ev = np.abs(np.linalg.eigvalsh(0.5 * (H + H.T)))
    if ev.min() == 0.0:
        return float("inf")
    return float(ev.max() / ev.min())


def _suspect_separation(family, data, theta, cond) -> bool:
    if np.max(np.abs(theta)) > SEPARATION_COEF or cond > SEPARATION_COND:
        return True
    if family.discrete:
        # complete separation: every realized outcome fitted with probability ~1
        return bool(np.all(family.loglik_obs(theta, data) > -1e-6))
    return False


def fit_mle(family: ModelFamily | str, data: Dataset, init=None, **kwargs) -> FitResult:
    """Unpenalized fit; ``suspect_separation`` flags diverging solutions."""
    family = get_family(family)
    p = family.n_params(data.k, data.category_count)
    return fit(family, data, PenaltySpec.none(p), init, **kwargs)
