"""First-order MSE approximation for generalized ridge estimators.

Inputs are the expected Hessian ``E(H1)``, the score outer-product moment
``E(SS')``, the sample size, a penalty and a reference parameter standing
in for the true value.  With ``G = W'W`` and
``Q_lam = (E(H1) - 2 lam G)^{-1}``:

    MSE(lam) = Q_lam E(SS') Q_lam' / N + b b',   b = 2 lam Q_lam G (theta_ref - target)

The improvement bound and the curvature-weighted threshold are evaluated
on the masked (penalized) block only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidWeightingError, SingularMomentError
from .estimator import PenaltySpec
from .families import Dataset, get_family, prediction_gradient

__all__ = [
    "MomentInputs",
    "RiskApprox",
    "moment_inputs",
    "q_lambda",
    "mse_first_order",
    "bias_first_order",
    "improvement_bound",
    "prop1_threshold",
    "Prop1Result",
    "prediction_mse_first_order",
    "sqrtm_psd",
]


def sqrtm_psd(M: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Symmetric square root, eigenvalues clipped below at ``floor``."""
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.maximum(w, floor))) @ V.T


@dataclass(frozen=True)
class MomentInputs:
    EH1: np.ndarray
    ESS: np.ndarray
    N: int
    penalty: PenaltySpec
    theta_ref: np.ndarray

    def __post_init__(self) -> None:
        EH1 = np.asarray(self.EH1, dtype=float)
        ESS = np.asarray(self.ESS, dtype=float)
        p = self.penalty.p
        if EH1.shape != (p, p) or ESS.shape != (p, p):
            raise SingularMomentError("moment matrices do not match the penalty dimension")
        if not np.allclose(EH1, EH1.T, atol=1e-10 * max(1.0, np.abs(EH1).max())):
            raise SingularMomentError("E(H1) must be symmetric")
        EH1 = 0.5 * (EH1 + EH1.T)
        try:
            np.linalg.cholesky(-EH1)
        except np.linalg.LinAlgError:
            raise SingularMomentError("-E(H1) is not positive definite") from None
        ESS = 0.5 * (ESS + ESS.T)
        if np.linalg.eigvalsh(ESS).min() < -1e-10 * max(1.0, np.abs(ESS).max()):
            raise SingularMomentError("E(SS') is not positive semidefinite")
        object.__setattr__(self, "EH1", EH1)
        object.__setattr__(self, "ESS", ESS)
        object.__setattr__(self, "theta_ref", np.asarray(self.theta_ref, dtype=float))

    def with_lambda(self, lam: float) -> MomentInputs:
        return MomentInputs(self.EH1, self.ESS, self.N, self.penalty.with_lambda(lam), self.theta_ref)


@dataclass(frozen=True)
class RiskApprox:
    variance_term: np.ndarray
    bias_sq_term: np.ndarray
    total: np.ndarray
    trace_risk: float


def moment_inputs(family, data: Dataset, penalty: PenaltySpec, theta_ref) -> MomentInputs:
    """Sample-moment plug-ins evaluated at ``theta_ref``."""
    family = get_family(family)
    theta_ref = family.check(data, theta_ref)
    S = family.score_obs(theta_ref, data)
    return MomentInputs(
        family.hessian_mean(theta_ref, data), S.T @ S / data.n, data.n, penalty, theta_ref
    )


def q_lambda(inputs: MomentInputs) -> np.ndarray:
    pen = inputs.penalty
    M = inputs.EH1 - 2.0 * pen.lam * pen.gram
    try:
        return np.linalg.inv(M)
    except np.linalg.LinAlgError:
        raise SingularMomentError("E(H1) - 2 lam W'W is singular") from None


def bias_first_order(inputs: MomentInputs) -> np.ndarray:
    pen = inputs.penalty
    Q = q_lambda(inputs)
    return 2.0 * pen.lam * Q @ pen.gram @ (inputs.theta_ref - pen.target)


def mse_first_order(inputs: MomentInputs) -> RiskApprox:
    Q = q_lambda(inputs)
    var = Q @ inputs.ESS @ Q.T / inputs.N
    var = 0.5 * (var + var.T)
    b = 2.0 * inputs.penalty.lam * Q @ inputs.penalty.gram @ (inputs.theta_ref - inputs.penalty.target)
    bias_sq = np.outer(b, b)
    total = var + bias_sq
    return RiskApprox(var, bias_sq, total, float(np.trace(total)))


def improvement_bound(inputs: MomentInputs) -> float:
    """Largest penalty for which dominance of the first-order MSE is guaranteed.

    ``min_eig(G_m) / (N * d' G_m G_m d)`` on the masked block, ``inf``
    when the target matches the reference on that block.
    """
    pen = inputs.penalty
    m = pen.mask
    G = pen.gram[np.ix_(m, m)]
    d = (inputs.theta_ref - pen.target)[m]
    Gd = G @ d
    denom = inputs.N * float(Gd @ Gd)
    if denom == 0.0:
        return float("inf")
    return float(np.linalg.eigvalsh(G).min() / denom)


@dataclass(frozen=True)
class Prop1Result:
    bounded: bool
    lambda_bar: float
    estimation_error: float
    target_distance_sq: float


def prop1_threshold(inputs: MomentInputs, atol: float = 1e-8) -> Prop1Result:
    """Explicit improvement threshold for curvature weighting ``W = (-E(H1))^{1/2}``.

    ``estimation_error`` is ``trace(Q E(SS') Q') / N`` on the masked block;
    the threshold is ``err / (dist^2 - err)`` when ``dist^2 > err`` and
    unbounded otherwise.
    """
    pen = inputs.penalty
    m = pen.mask
    expected = sqrtm_psd(-inputs.EH1[np.ix_(m, m)])
    if not np.allclose(pen.weight[np.ix_(m, m)], expected, atol=atol, rtol=0.0):
        raise InvalidWeightingError("weight must equal the symmetric square root of -E(H1)")
    Q = np.linalg.inv(inputs.EH1)
    V = Q @ inputs.ESS @ Q.T / inputs.N
    err = float(np.trace(V[np.ix_(m, m)]))
    d = (inputs.theta_ref - pen.target)[m]
    dist2 = float(d @ d)
    if dist2 > err:
        return Prop1Result(True, err / (dist2 - err), err, dist2)
    return Prop1Result(False, float("inf"), err, dist2)


def prediction_mse_first_order(inputs: MomentInputs, family, z, J: int | None = None) -> np.ndarray:
    """Delta-method prediction MSE, one value per prediction component."""
    D = prediction_gradient(family, inputs.theta_ref, z, J)
    total = mse_first_order(inputs).total
    return np.maximum(np.einsum("cp,pq,cq->c", D, total, D), 0.0)
