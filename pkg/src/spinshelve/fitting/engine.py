"""Levenberg-Marquardt least squares with numeric Jacobians."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import FitError
from .models import MODELS, FitModel, get_model, initial_guess

REL_STEP = 1e-6
ABS_STEP = 1e-12
LAMBDA0 = 1e-3
MAX_ITER = 200
REL_TOL = 1e-10
MAX_SINGULAR = 5
LAMBDA_MAX = 1e16
MULTISTART = 8


@dataclass
class FitResult:
    """Outcome of :func:`fit`.  Non-converged results are not authoritative."""

    model: str
    formula: str
    names: tuple[str, ...]
    values: np.ndarray
    errors: np.ndarray
    chi2: float
    red_chi2: float
    n_iter: int
    converged: bool
    message: str = ""
    n_points: int = 0
    covariance: np.ndarray | None = field(default=None, repr=False)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.errors[self.names.index(name)])

    @property
    def params(self) -> dict[str, float]:
        return {k: float(v) for k, v in zip(self.names, self.values)}

    @property
    def authoritative(self) -> bool:
        return self.converged

    def __call__(self, x):
        return get_model(self.model)(x, self.values)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "formula": self.formula,
            "params": self.params,
            "errors": {k: float(v) for k, v in zip(self.names, self.errors)},
            "chi2": float(self.chi2),
            "red_chi2": float(self.red_chi2),
            "n_iter": int(self.n_iter),
            "n_points": int(self.n_points),
            "converged": bool(self.converged),
            "message": self.message,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        # JSON may reorder keys; restore the model's parameter order
        names = get_model(d["model"]).params if d["model"] in MODELS else tuple(d["params"])
        return cls(
            d["model"], d["formula"], names,
            np.array([d["params"][k] for k in names]),
            np.array([d["errors"][k] for k in names]),
            d["chi2"], d["red_chi2"], d["n_iter"], d["converged"], d.get("message", ""),
            d.get("n_points", 0),
        )


class _Problem:
    """Residuals in the transformed parameter space ``q``."""

    def __init__(self, model: FitModel, x, y, sigma):
        self.model = model
        self.x, self.y, self.sigma = x, y, sigma
        self.log = np.array([n in model.positive for n in model.params])

    def to_q(self, p):
        q = np.array(p, dtype=float)
        q[self.log] = np.log(q[self.log])
        return q

    def to_p(self, q):
        p = np.array(q, dtype=float)
        p[self.log] = np.exp(np.clip(p[self.log], -700, 700))
        return p

    def residual_p(self, p):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return (self.y - self.model(self.x, p)) / self.sigma

    def residual(self, q):
        return self.residual_p(self.to_p(q))

    @staticmethod
    def jacobian(fun, q):
        """Central differences, step ``max(REL_STEP*|q|, ABS_STEP)``."""
        cols = []
        for j in range(len(q)):
            h = max(REL_STEP * abs(q[j]), ABS_STEP)
            qp, qm = q.copy(), q.copy()
            qp[j] += h
            qm[j] -= h
            cols.append((fun(qp) - fun(qm)) / (2 * h))
        return np.column_stack(cols)


def numeric_jacobian(model, params, x) -> np.ndarray:
    """Central-difference ``d f / d params`` in natural parameters."""
    m = get_model(model)
    x = np.asarray(x, dtype=float)
    return _Problem.jacobian(lambda p: m(x, p), np.asarray(params, dtype=float))


def _levenberg_marquardt(prob: _Problem, q0, trace: list | None = None):
    """Damped Gauss-Newton iterations; accepted chi-square values go to ``trace``."""
    q = np.array(q0, dtype=float)
    r = prob.residual(q)
    chi2 = float(r @ r)
    if trace is not None:
        trace.append(chi2)
    if not np.isfinite(chi2):
        return q, chi2, 0, False, "initial guess gives non-finite residuals"
    lam = LAMBDA0
    singular = 0
    for it in range(1, MAX_ITER + 1):
        jac = prob.jacobian(prob.residual, q)
        jtj = jac.T @ jac
        grad = jac.T @ r
        diag = np.diag(jtj).copy()
        diag[diag <= 0] = 1e-30
        accepted = False
        while not accepted:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
                if not np.all(np.isfinite(step)):
                    raise np.linalg.LinAlgError
                singular = 0
            except np.linalg.LinAlgError:
                singular += 1
                if singular >= MAX_SINGULAR:
                    return q, chi2, it, False, "singular normal equations"
                lam *= 10
                continue
            r_new = prob.residual(q + step)
            chi2_new = float(r_new @ r_new)
            if np.isfinite(chi2_new) and chi2_new < chi2:
                accepted = True
            else:
                lam *= 10
                if lam > LAMBDA_MAX:
                    return q, chi2, it, True, "no further decrease"
        assert chi2_new <= chi2
        rel = (chi2 - chi2_new) / chi2 if chi2 > 0 else 0.0
        q, r, chi2 = q + step, r_new, chi2_new
        if trace is not None:
            trace.append(chi2)
        lam = max(lam / 10, 1e-12)
        if rel < REL_TOL or chi2 < 1e-28 * len(r):
            return q, chi2, it, True, "converged"
    return q, chi2, MAX_ITER, False, "iteration limit"


def _jitter_starts(model: FitModel, g: np.ndarray) -> list[np.ndarray]:
    """Deterministic spread of starts for the damped sine family."""
    names = model.params
    i_t, i_t2, i_tau = names.index("T"), names.index("T2"), names.index("tau0")
    starts = [g]
    for k, (ft, ft2) in enumerate([(1.0, 0.3), (1.0, 3.0), (0.9, 1.0), (1.1, 1.0),
                                    (0.8, 0.5), (1.25, 0.5), (1.0, 10.0)]):
        s = g.copy()
        s[i_t] *= ft
        s[i_t2] *= ft2
        s[i_tau] += (k % 3 - 1) * 0.1 * s[i_t]
        starts.append(s)
    return starts[:MULTISTART]


def fit(model, x, y, sigma=None, init=None, multistart: bool | None = None) -> FitResult:
    """Least-squares fit of ``model`` to ``(x, y)``.

    ``sigma`` weights the residuals; uncertainties are the square roots of
    the covariance diagonal scaled by the reduced chi-square.  The damped
    sine models use 8 deterministic starts by default.
    """
    m = get_model(model)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError("x and y must be 1-d arrays of equal length")
    n, k = len(x), m.n_params
    if n < k:
        raise FitError(f"{m.name} needs at least {k} points, got {n}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise FitError("data contain non-finite values")
    if sigma is None:
        sigma = np.ones_like(y)
    else:
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape).copy()
        if np.any(~(sigma > 0)):
            raise FitError("sigma must be > 0")

    note = ""
    if init is None:
        guess = initial_guess(m, x, y)
        p0 = guess.values
        note = guess.note
    else:
        p0 = np.asarray(list(init.values()) if isinstance(init, dict) else init, dtype=float)
    m.check_domain(p0)

    prob = _Problem(m, x, y, sigma)
    if multistart is None:
        multistart = "tau0" in m.params
    starts = _jitter_starts(m, p0) if multistart else [p0]
    best = None
    for s in starts:
        out = _levenberg_marquardt(prob, prob.to_q(s))
        if best is None or (out[3], -out[1]) > (best[3], -best[1]):
            best = out
    q, chi2, n_iter, converged, message = best
    p = m.canonicalize(prob.to_p(q))

    dof = n - k
    red = chi2 / dof if dof > 0 else float("nan")
    cov = None
    errors = np.full(k, np.nan)
    try:
        jac = numeric_jacobian(m, p, x) / sigma[:, None]
        # column scaling keeps pinv from truncating badly scaled parameters
        scale = np.linalg.norm(jac, axis=0)
        scale[scale == 0] = 1.0
        js = jac / scale
        cov = np.linalg.pinv(js.T @ js) / np.outer(scale, scale)
        if dof > 0:
            cov = cov * red
        errors = np.sqrt(np.clip(np.diag(cov), 0, None))
    except (np.linalg.LinAlgError, ValueError):
        converged, message = False, "covariance unavailable"
    if note:
        message = f"{message}; guess: {note}"
    return FitResult(m.name, m.formula, m.params, p, errors, chi2, red, n_iter, converged, message, n, cov)
