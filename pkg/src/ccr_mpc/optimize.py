"""Derivative-free inverse solvers: a bounded Nelder-Mead simplex and the
iterative ensemble smoother with the Bayesian objective as a diagnostic."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

_BAD = 1e300


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class BoxBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in length")
        if not np.all(lo < hi):
            raise ValueError("each lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def clip(self, x) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "BoxBounds":
        return cls(np.array(doc["lower"], dtype=float), np.array(doc["upper"], dtype=float))


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    nit: int
    nfev: int
    converged: bool
    trace: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.x, self.fun))


def nelder_mead(
    f: Callable[[np.ndarray], float],
    x0,
    bounds: BoxBounds | None = None,
    tol: float = 1e-12,
    max_iter: int = 2000,
    xtol: float = 1e-8,
    initial_step=None,
    penalty: float = 1e6,
) -> OptimizeResult:
    """Minimise ``f`` with the reflect/expand/contract/shrink simplex
    (coefficients 1, 2, 0.5, 0.5).

    Stops when the spread of function values over the simplex drops below
    ``tol`` and its vertices lie within ``xtol`` of the best one (the second
    test guards against vertices straddling a minimum symmetrically), or
    after ``max_iter`` iterations. With ``bounds``, a vertex
    outside the box is scored as ``f(clip(x)) + penalty * dist(x, box)**2``
    and the returned point is the clipped best vertex. Non-finite values
    met during the search are treated as very large rather than fatal.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x0.shape[0]
    if bounds is not None:
        x0 = bounds.clip(x0)
    f0 = float(f(x0))
    if not np.isfinite(f0):
        raise OptimizationError(f"objective is not finite at x0 ({f0})")
    nfev = 1

    def score(x):
        nonlocal nfev
        nfev += 1
        if bounds is None:
            v = float(f(x))
            excess = 0.0
        else:
            xc = bounds.clip(x)
            v = float(f(xc))
            excess = penalty * float(np.sum((x - xc) ** 2))
        return v + excess if np.isfinite(v) else _BAD

    if initial_step is None:
        if bounds is not None:
            step = 0.1 * bounds.width
        else:
            step = np.where(x0 != 0, 0.05 * x0, 0.00025)
    else:
        step = np.broadcast_to(np.asarray(initial_step, dtype=float), (n,))
    simplex = np.vstack([x0] + [x0 + step[i] * np.eye(n)[i] for i in range(n)])
    if bounds is not None:
        # reflect initial vertices that fall outside the box back inside
        over = simplex > bounds.upper
        simplex = np.where(over, simplex - 2 * np.abs(step) * over, simplex)
    fvals = np.array([f0] + [score(v) for v in simplex[1:]])

    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        trace.append(float(fvals[0]))
        if fvals[-1] - fvals[0] < tol and np.max(np.abs(simplex[1:] - simplex[0])) <= xtol:
            converged = True
            break
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + 1.0 * (centroid - worst)
        fr = score(xr)
        if fvals[0] <= fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[0]:
            xe = centroid + 2.0 * (xr - centroid)
            fe = score(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc = centroid + 0.5 * (xr - centroid)
                fc = score(xc)
                accept = fc <= fr
            else:
                xc = centroid + 0.5 * (worst - centroid)
                fc = score(xc)
                accept = fc < fvals[-1]
            if accept:
                simplex[-1], fvals[-1] = xc, fc
            else:
                simplex[1:] = simplex[0] + 0.5 * (simplex[1:] - simplex[0])
                fvals[1:] = [score(v) for v in simplex[1:]]
    else:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
    best = simplex[0] if bounds is None else bounds.clip(simplex[0])
    fun = float(f(best)) if bounds is not None else float(fvals[0])
    return OptimizeResult(best, fun, it, nfev, converged, trace)


# ---------------------------------------------------------------------------
# iterative ensemble smoother


@dataclass(frozen=True, eq=False)
class EnsembleState:
    members: np.ndarray  # (N_e, P)
    obs_noise_diag: np.ndarray  # (M,)
    iteration: int = 0

    def __post_init__(self):
        m = np.asarray(self.members, dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        if m.shape[0] < 2:
            raise ValueError("an ensemble needs at least two members")
        cd = np.atleast_1d(np.asarray(self.obs_noise_diag, dtype=float))
        if not np.all(cd > 0):
            raise ValueError("observation noise variances must be strictly positive")
        object.__setattr__(self, "members", m)
        object.__setattr__(self, "obs_noise_diag", cd)

    @property
    def n_ens(self) -> int:
        return self.members.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)


def _anomalies(A: np.ndarray) -> np.ndarray:
    dA = A - A.mean(axis=0)
    dA[:, np.ptp(A, axis=0) == 0] = 0.0
    return dA


def ies_update(
    ens: EnsembleState,
    forward_outputs,
    y_obs,
    rng: np.random.Generator | None = None,
    perturb: bool = True,
    bounds: BoxBounds | None = None,
) -> EnsembleState:
    """One smoother step ``theta_j += C_tY (C_YY + C_D)^-1 (d_j - Y_j)``.

    Covariances are empirical (divisor ``N_e - 1``); ``d_j`` is the
    observation perturbed per member with noise drawn from ``C_D`` unless
    ``perturb`` is false.
    """
    Theta = ens.members
    Y = np.asarray(forward_outputs, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != ens.n_ens:
        raise ValueError("forward outputs must have one row per ensemble member")
    y = np.atleast_1d(np.asarray(y_obs, dtype=float))
    M = Y.shape[1]
    cd = np.broadcast_to(ens.obs_noise_diag, (M,))
    ne = ens.n_ens
    dT = _anomalies(Theta)
    dY = _anomalies(Y)
    C_tY = dT.T @ dY / (ne - 1)
    C_YY = dY.T @ dY / (ne - 1)
    if perturb:
        rng = rng if rng is not None else np.random.default_rng()
        D = y[None, :] + rng.standard_normal((ne, M)) * np.sqrt(cd)
    else:
        D = np.broadcast_to(y, (ne, M))
    try:
        X = np.linalg.solve(C_YY + np.diag(cd), (D - Y).T)
    except np.linalg.LinAlgError as exc:
        raise OptimizationError("C_YY + C_D is singular") from exc
    new = Theta + (C_tY @ X).T
    if bounds is not None:
        new = bounds.clip(new)
    return EnsembleState(new, ens.obs_noise_diag, ens.iteration + 1)


@dataclass
class ObjectiveQ:
    """Prior-plus-data-mismatch objective for a forward map ``theta -> Y``."""

    theta_prior: np.ndarray
    prior_cov_diag: np.ndarray
    y_obs: np.ndarray
    obs_cov_diag: np.ndarray
    forward: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        self.theta_prior = np.atleast_1d(np.asarray(self.theta_prior, dtype=float))
        self.prior_cov_diag = np.broadcast_to(np.asarray(self.prior_cov_diag, dtype=float), self.theta_prior.shape).copy()
        self.y_obs = np.atleast_1d(np.asarray(self.y_obs, dtype=float))
        self.obs_cov_diag = np.broadcast_to(np.asarray(self.obs_cov_diag, dtype=float), self.y_obs.shape).copy()
        if not (np.all(self.prior_cov_diag > 0) and np.all(self.obs_cov_diag > 0)):
            raise ValueError("covariance entries must be positive")


def objective_q(setup: ObjectiveQ, theta) -> tuple[float, float, float]:
    """``(Q, Qm, Qd)`` with ``Q = Qm + Qd``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    dm = theta - setup.theta_prior
    qm = 0.5 * float(np.sum(dm**2 / setup.prior_cov_diag))
    pred = np.atleast_1d(np.asarray(setup.forward(theta), dtype=float))
    if not np.all(np.isfinite(pred)):
        raise OptimizationError("forward model returned non-finite output")
    dd = setup.y_obs - pred
    qd = 0.5 * float(np.sum(dd**2 / setup.obs_cov_diag))
    return qm + qd, qm, qd


@dataclass
class IesResult:
    ensemble: EnsembleState
    mean: np.ndarray
    q_trace: list  # (Q, Qm, Qd) at the ensemble mean, prior first
    resampled: int = 0


def _evaluate(forward_batch, Theta, rng, max_retries=5):
    """Forward outputs for every member; members whose evaluation fails are
    redrawn from a Gaussian fitted to the healthy ones."""
    resampled = 0
    for _ in range(max_retries + 1):
        try:
            Y = np.asarray(forward_batch(Theta), dtype=float)
            if Y.ndim == 1:
                Y = Y[:, None]
            bad = ~np.all(np.isfinite(Y), axis=1)
        except Exception:  # noqa: BLE001 - any failure triggers member-wise retry
            rows = []
            for t in Theta:
                try:
                    rows.append(np.atleast_1d(np.asarray(forward_batch(t[None, :]), dtype=float)).ravel())
                except Exception:  # noqa: BLE001
                    rows.append(None)
            width = max((len(r) for r in rows if r is not None), default=1)
            Y = np.vstack([r if r is not None else np.full(width, np.nan) for r in rows])
            bad = ~np.all(np.isfinite(Y), axis=1)
        if not bad.any():
            return Y, Theta, resampled
        good = Theta[~bad]
        if good.shape[0] < 2:
            raise OptimizationError("forward model failed on nearly every ensemble member")
        mu, sd = good.mean(axis=0), good.std(axis=0, ddof=1)
        Theta = Theta.copy()
        Theta[bad] = mu + sd * rng.standard_normal((int(bad.sum()), Theta.shape[1]))
        resampled += int(bad.sum())
        log.warning("resampled %d ensemble members after forward failure", int(bad.sum()))
    raise OptimizationError("forward model kept failing after resampling")


def ies_run(
    setup: ObjectiveQ,
    n_ens: int = 50,
    iterations: int = 3,
    seed: int | None = 0,
    forward_batch: Callable[[np.ndarray], np.ndarray] | None = None,
    prior_sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None,
    bounds: BoxBounds | None = None,
    perturb: bool = True,
) -> IesResult:
    """Draw a prior ensemble and apply ``iterations`` smoother updates,
    re-running the forward model each time.

    ``forward_batch`` maps an (N_e, P) ensemble to (N_e, M) outputs; by
    default the single-member ``setup.forward`` is applied row by row.
    """
    if iterations < 1:
        raise ValueError("need at least one iteration")
    rng = np.random.default_rng(seed)
    if forward_batch is None:
        forward_batch = lambda T: np.vstack([np.atleast_1d(setup.forward(t)) for t in T])
    if prior_sampler is None:
        P = setup.theta_prior.shape[0]
        Theta = setup.theta_prior + np.sqrt(setup.prior_cov_diag) * rng.standard_normal((n_ens, P))
    else:
        Theta = np.asarray(prior_sampler(rng, n_ens), dtype=float)
    if bounds is not None:
        Theta = bounds.clip(Theta)
    ens = EnsembleState(Theta, setup.obs_cov_diag)
    trace = [objective_q(setup, ens.mean)]
    total_resampled = 0
    for _ in range(iterations):
        Y, Theta, k = _evaluate(forward_batch, ens.members, rng)
        total_resampled += k
        ens = EnsembleState(Theta, ens.obs_noise_diag, ens.iteration)
        ens = ies_update(ens, Y, setup.y_obs, rng, perturb, bounds)
        trace.append(objective_q(setup, ens.mean))
    return IesResult(ens, ens.mean, trace, total_resampled)


def write_trace(path, rows: list[dict]) -> None:
    """Write optimizer trace rows (dicts with identical keys) as CSV."""
    if not rows:
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
