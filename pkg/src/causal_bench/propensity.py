"""Propensity score models: IRLS logistic regression and a just-identified CBPS."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import Degenerate, SingularDesign, ZeroGroup

log = logging.getLogger(__name__)

ETA_CLIP = 30.0


def add_intercept(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(X.shape[0]), X])


def expit(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def log_likelihood(Xt, t, beta) -> float:
    eta = Xt @ beta
    # log(1 + exp(eta)) computed stably
    return float(np.sum(t * eta - np.logaddexp(0.0, eta)))


@dataclass(frozen=True)
class PropensityFit:
    coef: np.ndarray
    scores: np.ndarray
    clip_bounds: tuple = (0.01, 0.99)
    n_clipped: int = 0
    converged: bool = True
    iterations: int = 0
    method: str = "logistic"
    ridge: bool = False
    loss: float | None = None
    history: list = field(default_factory=list, repr=False)

    def predict(self, X) -> np.ndarray:
        lo, hi = self.clip_bounds
        return np.clip(expit(add_intercept(X) @ self.coef), lo, hi)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "coef": [float(c) for c in self.coef],
            "clip_bounds": [float(b) for b in self.clip_bounds],
            "n_clipped": int(self.n_clipped),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "ridge": bool(self.ridge),
            "loss": None if self.loss is None else float(self.loss),
        }


def _check_inputs(X, t):
    Xt = add_intercept(X)
    t = np.asarray(t, dtype=float)
    if Xt.shape[0] != t.shape[0]:
        raise ValueError("X and t have different lengths")
    if not np.all(np.isfinite(Xt)):
        raise ValueError("X has non-finite entries")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("t must be binary")
    if t.min() == t.max():
        raise Degenerate("treatment is constant")
    return Xt, t


def _clip(raw, clip_bounds):
    lo, hi = clip_bounds
    if not 0 < lo < hi < 1:
        raise ValueError(f"bad clip bounds {clip_bounds}")
    n_clipped = int(np.sum((raw < lo) | (raw > hi)))
    if n_clipped > 0.05 * raw.size:
        log.warning("%d of %d propensity scores clipped to %s", n_clipped, raw.size, clip_bounds)
    return np.clip(raw, lo, hi), n_clipped


def _solve(H, g, jitter=1e-8):
    """Solve H d = g, falling back to a ridge jitter when H is near singular."""
    try:
        if np.linalg.cond(H) < 1e12:
            return np.linalg.solve(H, g), False
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.solve(H + jitter * np.eye(H.shape[0]), g), True
    except np.linalg.LinAlgError as exc:
        raise SingularDesign(str(exc)) from exc


def fit_logistic(X, t, tol=1e-8, max_iter=100, clip_bounds=(0.01, 0.99)) -> PropensityFit:
    """Maximum likelihood logistic regression by IRLS with step halving."""
    Xt, t = _check_inputs(X, t)
    beta = np.zeros(Xt.shape[1])
    ll = log_likelihood(Xt, t, beta)
    history = [ll]
    ridge = False
    it = 0
    while it < max_iter:
        p = expit(Xt @ beta)
        score = Xt.T @ (t - p)
        if np.max(np.abs(score)) < tol:
            break
        w = p * (1.0 - p)
        H = Xt.T @ (Xt * w[:, None])
        step, jittered = _solve(H, score)
        ridge |= jittered
        # step halving keeps the log-likelihood monotone
        for _ in range(50):
            cand = beta + step
            ll_new = log_likelihood(Xt, t, cand)
            if ll_new >= ll:
                break
            step = 0.5 * step
        else:
            break
        if np.array_equal(cand, beta):
            break
        beta, ll = cand, ll_new
        history.append(ll)
        it += 1
    residual = np.max(np.abs(Xt.T @ (t - expit(Xt @ beta))))
    converged = bool(residual < tol)
    scores, n_clipped = _clip(expit(Xt @ beta), clip_bounds)
    return PropensityFit(
        coef=beta, scores=scores, clip_bounds=tuple(clip_bounds), n_clipped=n_clipped,
        converged=converged, iterations=it, method="logistic", ridge=ridge, history=history,
    )


def balance_moments(Xt, t, beta) -> tuple:
    """Mean balance conditions g(beta) and their Jacobian."""
    e = expit(np.clip(Xt @ beta, -ETA_CLIP, ETA_CLIP))
    n = Xt.shape[0]
    a = t / e - (1.0 - t) / (1.0 - e)
    g = Xt.T @ a / n
    b = t * (1.0 - e) / e + (1.0 - t) * e / (1.0 - e)
    G = -(Xt.T @ (Xt * b[:, None])) / n
    return g, G


def balance_loss(X, t, beta) -> float:
    Xt = add_intercept(X)
    g, _ = balance_moments(Xt, np.asarray(t, dtype=float), np.asarray(beta, dtype=float))
    return float(g @ g)


def fit_cbps(X, t, max_iter=200, tol_balance=None, clip_bounds=(0.01, 0.99),
             warm_start: PropensityFit | None = None) -> PropensityFit:
    """Covariate balancing propensity score, just-identified ATE version.

    Minimises ||n^-1 sum_i (t_i/e_i - (1-t_i)/(1-e_i)) x_i||^2 starting from
    the logistic MLE, using Gauss-Newton directions (steepest descent when
    the Jacobian is unusable) with Armijo backtracking.
    """
    Xt, t = _check_inputs(X, t)
    if tol_balance is None:
        tol_balance = 1e-6 * Xt.shape[1]
    if warm_start is None:
        warm_start = fit_logistic(X, t, clip_bounds=clip_bounds)
    beta = np.array(warm_start.coef, dtype=float)
    g, G = balance_moments(Xt, t, beta)
    loss = float(g @ g)
    history = [loss]
    it = 0
    while it < max_iter:
        if loss < 1e-28:
            break
        grad = 2.0 * G.T @ g
        try:
            d = -np.linalg.solve(G, g)
            if not np.all(np.isfinite(d)) or grad @ d >= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            d = -grad
        slope = grad @ d
        step = 1.0
        accepted = False
        for _ in range(60):
            cand = beta + step * d
            g_new, G_new = balance_moments(Xt, t, cand)
            loss_new = float(g_new @ g_new)
            if np.isfinite(loss_new) and loss_new <= loss + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted or loss_new >= loss:
            break
        beta, g, G, loss = cand, g_new, G_new, loss_new
        history.append(loss)
        it += 1
    scores, n_clipped = _clip(expit(Xt @ beta), clip_bounds)
    converged = loss <= tol_balance
    if not converged:
        log.warning("CBPS balance loss %.3g above tolerance %.3g", loss, tol_balance)
    return PropensityFit(
        coef=beta, scores=scores, clip_bounds=tuple(clip_bounds), n_clipped=n_clipped,
        converged=converged, iterations=it, method="cbps", ridge=warm_start.ridge,
        loss=loss, history=history,
    )


@dataclass(frozen=True)
class BalanceDiagnostics:
    smd: np.ndarray
    max_abs_smd: float


def balance_report(X, t, weights) -> BalanceDiagnostics:
    """Weighted standardized mean differences; pooled SD from the unweighted arms."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    t = np.asarray(t).astype(bool)
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    wt, wc = w[t], w[~t]
    if wt.sum() <= 0 or wc.sum() <= 0:
        raise ZeroGroup("a treatment group has zero total weight")
    mu_t = wt @ X[t] / wt.sum()
    mu_c = wc @ X[~t] / wc.sum()
    var_t = X[t].var(axis=0, ddof=1) if t.sum() > 1 else np.zeros(X.shape[1])
    var_c = X[~t].var(axis=0, ddof=1) if (~t).sum() > 1 else np.zeros(X.shape[1])
    sd = np.sqrt((var_t + var_c) / 2.0)
    diff = mu_t - mu_c
    with np.errstate(divide="ignore", invalid="ignore"):
        smd = np.where(sd > 0, diff / np.where(sd > 0, sd, 1.0), np.where(diff == 0, 0.0, np.inf))
    return BalanceDiagnostics(smd=smd, max_abs_smd=float(np.max(np.abs(smd))) if smd.size else 0.0)
