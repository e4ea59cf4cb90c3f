"""Levenberg-Marquardt least squares with analytic Jacobians.

Small, dense problems only (a handful of parameters).  The solver keeps
the objective trace of accepted steps so callers can audit monotonicity,
and it reports the covariance ``(J^T J)^-1`` of the weighted problem.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class FitError(RuntimeError):
    """Numerical failure of a fit; carries the last iterate."""

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = None if last_iterate is None else np.asarray(last_iterate, dtype=float)


class ConvergenceError(FitError):
    pass


class IdentifiabilityError(FitError):
    """The Jacobian is rank deficient at the optimum."""

    def __init__(self, message: str, unidentifiable: Sequence[str], last_iterate=None):
        super().__init__(message, last_iterate)
        self.unidentifiable = tuple(unidentifiable)


@dataclass
class FitResult:
    params: np.ndarray
    covariance: np.ndarray
    residuals: np.ndarray
    chi2: float
    dof: int
    converged: bool
    n_iter: int
    names: tuple[str, ...] = ()
    history: list[float] = field(default_factory=list)

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def chi2_reduced(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    def as_dict(self) -> dict:
        return {name: (float(v), float(s)) for name, v, s in zip(self.names, self.params, self.sigma)}


def unidentifiable_parameters(jac: np.ndarray, names: Sequence[str], rcond: float = 1e-9) -> list[str]:
    """Names of parameters that participate in the Jacobian's null space.

    Columns are normalized first so that badly scaled, but identifiable,
    parameters are not flagged.
    """
    jac = np.asarray(jac, dtype=float)
    n = jac.shape[1]
    if jac.shape[0] < n:
        # fewer equations than unknowns: pad so the SVD exposes the null space
        jac = np.vstack([jac, np.zeros((n - jac.shape[0], n))])
    norms = np.linalg.norm(jac, axis=0)
    flagged = set(np.flatnonzero(norms == 0.0))
    scaled = jac / np.where(norms > 0, norms, 1.0)
    _, s, vt = np.linalg.svd(scaled, full_matrices=False)
    null = vt[s < rcond * max(s.max(), 1.0)]
    for vec in null:
        flagged.update(np.flatnonzero(np.abs(vec) > 0.1))
    return [names[i] for i in sorted(flagged)]


def _gauss_newton_gain(jac: np.ndarray, r: np.ndarray) -> float:
    # objective decrease promised by an undamped Gauss-Newton step
    step = np.linalg.lstsq(jac, -r, rcond=None)[0]
    return float(r @ r - np.sum((r + jac @ step) ** 2))


def levenberg_marquardt(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    x0,
    names: Sequence[str] = (),
    max_iter: int = 200,
    rtol: float = 1e-10,
    damping: float = 1e-3,
    check_rank: bool = True,
) -> FitResult:
    """Minimize ``sum(residual(x)**2)``.

    ``residual`` must already be divided by the data uncertainties.  Steps
    are accepted only if they lower the objective (Marquardt's diagonal
    scaling, Nielsen's damping update).  Converged once a full Gauss-Newton
    step would lower the objective by less than ``rtol`` relative, or once
    the step is at the rounding level of the parameters.  Raises
    :class:`ConvergenceError` if that does not happen within ``max_iter``
    iterations, and :class:`IdentifiabilityError` if the
    Jacobian is rank deficient at the optimum.
    """
    x = np.array(x0, dtype=float)
    names = tuple(names) or tuple(f"p{i}" for i in range(x.size))
    r = residual(x)
    cost = float(r @ r)
    if not np.isfinite(cost):
        raise FitError("objective is not finite at the starting point", x)
    jac = jacobian(x)
    history = [cost]
    mu = damping * max(float(np.max(np.sum(jac**2, axis=0))), 1e-300)
    nu = 2.0
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        jtj = jac.T @ jac
        grad = jac.T @ r
        diag = np.diag(jtj)
        diag = np.maximum(diag, 1e-12 * max(float(diag.max()), 1e-300))
        while True:
            try:
                step = np.linalg.solve(jtj + mu * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(jtj + mu * np.diag(diag), grad, rcond=None)[0]
            x_new = x + step
            r_new = residual(x_new)
            cost_new = float(r_new @ r_new)
            predicted = cost - float(np.sum((r + jac @ step) ** 2))
            if np.isfinite(cost_new) and cost_new < cost:
                rho = (cost - cost_new) / predicted if predicted > 0 else 0.0
                break
            mu *= nu
            nu *= 2.0
            if mu > 1e200 or not np.all(np.isfinite(step)):
                # no decrease possible along any damped direction: stationary
                rho = None
                break
        if rho is None:
            converged = True
            break
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        jac = jacobian(x)
        mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
        nu = 2.0
        tiny_step = np.linalg.norm(step) <= 1e-14 * (np.linalg.norm(x) + 1e-14)
        if cost < 1e-28 or tiny_step or _gauss_newton_gain(jac, r) <= rtol * cost:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"no convergence after {max_iter} iterations", x)
    if check_rank:
        bad = unidentifiable_parameters(jac, names)
        if bad:
            raise IdentifiabilityError(
                "rank-deficient Jacobian; unidentifiable parameters: " + ", ".join(bad), bad, x
            )
    covariance = np.linalg.pinv(jac.T @ jac)
    covariance = 0.5 * (covariance + covariance.T)
    return FitResult(
        params=x,
        covariance=covariance,
        residuals=r,
        chi2=cost,
        dof=r.size - x.size,
        converged=True,
        n_iter=n_iter,
        names=names,
        history=history,
    )
