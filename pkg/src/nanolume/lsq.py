"""Damped Gauss-Newton (Levenberg-Marquardt) least squares.

Parameters may be optimized in transformed coordinates: ``log`` keeps a
parameter positive, ``logit`` keeps it inside (0, 1).  The Jacobian is
always a central difference in the internal coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit


class FitError(ValueError):
    pass


REL_STEP = 1e-6
CHI2_RTOL = 1e-10
STEP_ATOL = 1e-12
MAX_ITER = 500
# internal coordinates beyond which a log/logit parameter is treated as on its bound
BOUND_Q = 30.0
BOUND_LOGIT = 16.0


@dataclass
class FitResult:
    names: list
    params: np.ndarray
    covariance: np.ndarray
    chi2: float
    dof: int
    iterations: int
    converged: bool
    message: str = ""
    flags: list = field(default_factory=list)
    chi2_history: list = field(default_factory=list)
    units: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def residual_norm(self) -> float:
        return float(np.sqrt(self.chi2))

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def __getitem__(self, name):
        return float(self.params[self.names.index(name)])

    def error(self, name) -> float:
        return float(self.errors[self.names.index(name)])

    def as_dict(self) -> dict:
        return dict(zip(self.names, map(float, self.params)))

    def report(self, model: str) -> dict:
        return {
            "model": model,
            "parameters": {
                n: {"value": float(v), "stderr": float(e), "unit": self.units.get(n, "")}
                for n, v, e in zip(self.names, self.params, self.errors)
            },
            "covariance": np.asarray(self.covariance).tolist(),
            "chi2": float(self.chi2),
            "dof": int(self.dof),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "message": self.message,
            "flags": list(self.flags),
            **({"derived": self.extra} if self.extra else {}),
        }

    def to_json(self, path, model: str, provenance=None):
        rep = self.report(model)
        if provenance:
            rep["provenance"] = provenance
        with open(path, "w") as fh:
            json.dump(rep, fh, indent=2, sort_keys=True)


def _forward(q, kinds):
    p = q.copy()
    for i, k in enumerate(kinds):
        if k == "log":
            with np.errstate(over="ignore"):
                p[i] = np.exp(q[i])
        elif k == "logit":
            p[i] = expit(q[i])
    return p


def _inverse(p, kinds):
    q = np.asarray(p, dtype=float).copy()
    for i, k in enumerate(kinds):
        if k == "log":
            if p[i] <= 0:
                raise FitError(f"parameter {i} must be > 0 for log transform, got {p[i]}")
            q[i] = np.log(p[i])
        elif k == "logit":
            if not 0 < p[i] < 1:
                raise FitError(f"parameter {i} must lie in (0, 1) for logit transform, got {p[i]}")
            q[i] = np.log(p[i] / (1.0 - p[i]))
    return q


def _dp_dq(p, kinds):
    d = np.ones_like(p)
    for i, k in enumerate(kinds):
        if k == "log":
            d[i] = p[i]
        elif k == "logit":
            d[i] = p[i] * (1.0 - p[i])
    return d


def numerical_jacobian(fun: Callable[[np.ndarray], np.ndarray], q: np.ndarray,
                       rel_step: float = REL_STEP) -> np.ndarray:
    """Central-difference Jacobian with step rel_step * max(|q_j|, 1)."""
    q = np.asarray(q, dtype=float)
    f0 = np.asarray(fun(q))
    J = np.empty((f0.size, q.size))
    for j in range(q.size):
        h = rel_step * max(abs(q[j]), 1.0)
        qp = q.copy()
        qm = q.copy()
        qp[j] += h
        qm[j] -= h
        J[:, j] = (np.asarray(fun(qp)) - np.asarray(fun(qm))) / (qp[j] - qm[j])
    return J


def least_squares(model: Callable, x, y, sigma, p0, names: Sequence[str] | None = None,
                  transforms: Sequence[str] | None = None, fixed: Sequence[str] = (),
                  max_iter: int = MAX_ITER, units=None) -> FitResult:
    """Weighted least squares of y ~ model(x, p) with per-point sigma.

    ``fixed`` names parameters held at their p0 value.  The returned
    covariance is (J^T W J)^-1 mapped to the natural parameters, with zero
    rows and columns for fixed parameters.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
    if np.any(~(sigma > 0)):
        raise FitError("sigma must be > 0 everywhere")
    p0 = np.asarray(p0, dtype=float)
    names = list(names) if names is not None else [f"p{i}" for i in range(p0.size)]
    kinds = list(transforms) if transforms is not None else ["linear"] * p0.size
    free = np.array([n not in fixed for n in names])
    nfree = int(free.sum())
    if y.size < nfree:
        raise FitError(f"{y.size} data points cannot constrain {nfree} parameters")
    w = 1.0 / sigma

    q_all = _inverse(p0, kinds)
    free_kinds = [k for k, f in zip(kinds, free) if f]

    def full_params(qf):
        q = q_all.copy()
        q[free] = qf
        return _forward(q, kinds)

    def resid(qf):
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                return (model(x, full_params(qf)) - y) * w
        except (ValueError, FloatingPointError, ZeroDivisionError):
            # parameters left the model's domain; the step gets rejected
            return np.full(y.shape, np.inf)

    qf = q_all[free].copy()
    try:
        r = (model(x, full_params(qf)) - y) * w
    except (ValueError, FloatingPointError, ZeroDivisionError) as exc:
        raise FitError(f"model rejected the initial guess: {exc}") from exc
    if not np.all(np.isfinite(r)):
        raise FitError("model is non-finite at the initial guess")
    chi2 = float(r @ r)
    history = [chi2]
    lam = 1e-3
    converged = False
    message = "maximum iterations reached"
    it = 0
    J = numerical_jacobian(resid, qf)
    for it in range(1, max_iter + 1):
        if not np.all(np.isfinite(J)):
            message = "non-finite Jacobian"
            break
        g = J.T @ r
        A = J.T @ J
        diag = np.diag(A).copy()
        diag[diag <= 0] = 1e-300
        accepted = False
        while lam < 1e16:
            try:
                step = -np.linalg.solve(A + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            q_new = qf + step
            r_new = resid(q_new)
            with np.errstate(over="ignore"):
                chi2_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if not np.isfinite(chi2_new):
                chi2_new = np.inf
            if chi2_new <= chi2:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True
            message = "no further decrease in chi2"
            break
        step_norm = float(np.linalg.norm(step))
        rel_change = (chi2 - chi2_new) / chi2 if chi2 > 0 else 0.0
        qf, r, chi2 = q_new, r_new, chi2_new
        history.append(chi2)
        lam = max(lam / 10.0, 1e-12)
        if rel_change < CHI2_RTOL or step_norm < STEP_ATOL or chi2 == 0.0:
            converged = True
            message = "relative chi2 change below tolerance" if rel_change < CHI2_RTOL else "step below tolerance"
            break
        J = numerical_jacobian(resid, qf)

    p = full_params(qf)
    cov = np.zeros((p.size, p.size))
    flags = []
    # transformed parameters driven onto their bound carry no curvature;
    # report them with zero variance instead of calling the fit singular
    at_bound = np.array([(k == "log" and v < -BOUND_Q) or (k == "logit" and abs(v) > BOUND_LOGIT)
                         for k, v in zip(free_kinds, qf)], dtype=bool)
    if at_bound.any():
        flags.append("at_bound")
        bound_names = [n for n, f in zip([n for n, f in zip(names, free) if f], at_bound) if f]
        message += "; at bound: " + ", ".join(bound_names)
    live = np.flatnonzero(~at_bound)

    def resid_live(ql):
        q = qf.copy()
        q[live] = ql
        return resid(q)

    J = numerical_jacobian(resid_live, qf[live]) if live.size else np.zeros((y.size, 0))
    A = J.T @ J
    finite = bool(np.all(np.isfinite(A)))
    # conditioning judged on unit-norm columns so parameter scales do not matter
    if A.size and finite:
        norms = np.sqrt(np.diag(A))
        norms[norms == 0] = 1.0
        s = np.linalg.svd(A / np.outer(norms, norms), compute_uv=False)
    else:
        s = np.array([1.0])
    if A.size and (not finite or s[-1] <= s[0] * 1e-14):
        converged = False
        message = "singular normal equations"
        flags.append("singular")
        cov_q = np.linalg.pinv(A) if finite else np.full_like(A, np.nan)
    else:
        cov_q = np.linalg.inv(A) if A.size else A
    d = _dp_dq(p, kinds)[free][live]
    cov_free = cov_q * np.outer(d, d)
    idx = np.flatnonzero(free)[live]
    cov[np.ix_(idx, idx)] = 0.5 * (cov_free + cov_free.T)
    dof = y.size - nfree
    return FitResult(names, p, cov, chi2, dof, it, converged, message, flags, history,
                     dict(units or {}))


def multistart(model, x, y, sigma, p0, n_starts: int = 8, spread: float = 0.5, seed: int = 0,
               **kw) -> FitResult:
    """Best of the plain fit plus n_starts-1 guesses jittered in internal coordinates."""
    kinds = kw.get("transforms") or ["linear"] * len(p0)
    names = kw.get("names") or [f"p{i}" for i in range(len(p0))]
    fixed = kw.get("fixed", ())
    rng = np.random.default_rng(seed)
    q0 = _inverse(np.asarray(p0, dtype=float), kinds)
    best = None
    for i in range(n_starts):
        q = q0.copy()
        if i:
            for j, n in enumerate(names):
                if n not in fixed:
                    scale = spread if kinds[j] != "linear" else spread * max(abs(q[j]), 1.0)
                    q[j] += rng.normal(0.0, scale)
        try:
            res = least_squares(model, x, y, sigma, _forward(q, kinds), **kw)
        except FitError:
            continue
        if best is None or (res.converged, -res.chi2) > (best.converged, -best.chi2):
            best = res
    if best is None:
        raise FitError("all starts failed")
    return best
