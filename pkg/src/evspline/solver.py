"""Levenberg-Marquardt on manifold-valued states.

The solver is agnostic of what the state is: callers supply the weighted
residual function, a Jacobian with respect to a local increment, and the
retraction that applies an increment to the state. Both the trajectory fit and
the visual-inertial estimator go through ``levenberg_marquardt``.
A sparse Jacobian keeps the normal equations sparse; they are factorised with a
sparse LU.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import NumericalFailure

logger = logging.getLogger(__name__)

# Control pose k only enters residuals of segments k-2 .. k+1, so poses whose
# indices differ by 4 or more never share a residual row.
SPLINE_COLOURS = 4
FD_STEP = 1e-6


@dataclass
class LMConfig:
    """Stopping and damping parameters."""
    max_iterations: int = 50
    function_tolerance: float = 1e-3  # on |dF| / F after an accepted step
    gradient_tolerance: float = 1e-8  # on the infinity norm of grad F
    initial_lambda: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    max_lambda: float = 1e16
    min_objective: float = 0.0  # stop as soon as F drops to this value


@dataclass
class LMResult:
    state: Any
    initial_objective: float
    final_objective: float
    objective_trace: list[float]
    iterations: int
    termination: str
    rejected_steps: int = 0
    elapsed_seconds: float = 0.0
    jacobian_seconds: float = 0.0
    hessian: np.ndarray | sparse.csc_matrix | None = field(default=None, repr=False)  # sparse for a sparse J


def colour_groups(n_blocks: int, stride: int = SPLINE_COLOURS) -> list[np.ndarray]:
    """Block indices sharing no residual support, for grouped finite differences."""
    return [np.arange(c, n_blocks, stride) for c in range(min(stride, n_blocks))]


def grouped_central_difference(fn, retract, state, group, j: int, n_blocks: int, block_dim: int = 6,
                               step: float = FD_STEP):
    """Central difference along coordinate j of every block in ``group`` at once.

    ``retract(state, delta)`` applies a flat increment of ``n_blocks * block_dim``
    values. ``fn`` may return an array or a tuple of arrays. When ``group`` is one
    colour of ``colour_groups``, each residual row depends on at most one of its
    blocks, so the result splits into exact per-block columns.
    """
    delta = np.zeros((n_blocks, block_dim))
    delta[group, j] = step
    plus = fn(retract(state, delta.ravel()))
    minus = fn(retract(state, -delta.ravel()))
    if isinstance(plus, tuple):
        return tuple((p - m) / (2.0 * step) for p, m in zip(plus, minus))
    return (plus - minus) / (2.0 * step)


def _normal_equations(J, r):
    """Gauss-Newton matrix and gradient half; H stays sparse (CSC) for a sparse J."""
    if sparse.issparse(J):
        H = (J.T @ J).tocsc()
    else:
        H = J.T @ J
    return H, np.asarray(J.T @ r).ravel()


def _damped_step(H, diag, lam: float, g) -> np.ndarray | None:
    """Solve (H + lam diag(d)) delta = -g; None when the system cannot be factorised."""
    if sparse.issparse(H):
        try:
            lu = splu((H + sparse.diags(lam * diag)).tocsc())
        except RuntimeError:
            return None
        delta = lu.solve(-g)
        return delta if np.all(np.isfinite(delta)) else None
    try:
        chol = scipy.linalg.cho_factor(H + lam * np.diag(diag), check_finite=False)
    except np.linalg.LinAlgError:
        return None
    return scipy.linalg.cho_solve(chol, -g, check_finite=False)


def levenberg_marquardt(
    state,
    residual_fn: Callable[[Any], np.ndarray],
    jacobian_fn: Callable[[Any], Any],
    retract_fn: Callable[[Any, np.ndarray], Any],
    config: LMConfig | None = None,
) -> LMResult:
    """Minimise F = ||r(state)||^2.

    Accepted steps never increase F. Raises NumericalFailure when the damped
    normal equations cannot be factorised at any damping level or when F
    becomes non-finite.
    """
    config = config or LMConfig()
    start = time.perf_counter()
    jac_seconds = 0.0

    try:
        r = residual_fn(state)
        F = float(r @ r)
    except FloatingPointError:
        F = np.inf
    if not np.isfinite(F):
        raise NumericalFailure("Initial objective is not finite", {"objective": F})
    F0 = F
    trace = [F]
    lam = config.initial_lambda
    iterations = 0
    rejected = 0
    termination = "max_iterations"
    H = None

    for _ in range(config.max_iterations):
        if F <= config.min_objective:
            termination = "zero_objective"
            break

        t_jac = time.perf_counter()
        J = jacobian_fn(state)
        jac_seconds += time.perf_counter() - t_jac
        H, g = _normal_equations(J, r)
        grad_inf = 2.0 * float(np.max(np.abs(g))) if g.size else 0.0
        if grad_inf < config.gradient_tolerance:
            termination = "gradient_tolerance"
            break

        diag = np.asarray(H.diagonal(), dtype=float).copy()
        floor = max(float(diag.max()) * 1e-12, np.finfo(float).tiny)
        diag = np.maximum(diag, floor)

        accepted = False
        factorised = False
        while lam <= config.max_lambda:
            delta = _damped_step(H, diag, lam, g)
            if delta is None:
                lam *= config.lambda_up
                continue
            factorised = True
            candidate = retract_fn(state, delta)
            try:
                r_new = residual_fn(candidate)
                F_new = float(r_new @ r_new)
            except FloatingPointError:
                F_new = np.inf
            if np.isfinite(F_new) and F_new <= F:
                accepted = True
                break
            rejected += 1
            lam *= config.lambda_up

        if not accepted:
            if not factorised:
                raise NumericalFailure(
                    "Normal equations are not positive definite at any damping level",
                    {"lambda": lam, "objective": F, "iterations": iterations,
                     "min_diagonal": float(np.min(H.diagonal()))},
                )
            termination = "max_damping"
            break

        iterations += 1
        change = (F - F_new) / F if F > 0.0 else 0.0
        logger.debug("LM iteration %d: F %.6e -> %.6e (lambda %.1e)", iterations, F, F_new, lam)
        state, r, F = candidate, r_new, F_new
        trace.append(F)
        lam = max(lam * config.lambda_down, 1e-20)
        if change < config.function_tolerance:
            termination = "function_tolerance"
            break

    return LMResult(
        state=state,
        initial_objective=F0,
        final_objective=F,
        objective_trace=trace,
        iterations=iterations,
        termination=termination,
        rejected_steps=rejected,
        elapsed_seconds=time.perf_counter() - start,
        jacobian_seconds=jac_seconds,
        hessian=H,
    )


@dataclass
class Observability:
    """Conditioning of Gauss-Newton normal equations."""
    eigenvalue_ratio: float
    rank_deficient: bool
    weak_parameters: list[str]
    marginal_ratios: dict[str, float]


def observability(
    H: np.ndarray,
    names: list[str],
    rank_tolerance: float = 1e-12,
    marginal_tolerance: float = 1e-6,
) -> Observability:
    """Inspect a Gauss-Newton matrix for (near) null directions.

    H is Jacobi-scaled to unit diagonal. ``marginal_ratios`` holds, per named
    parameter, the information left after eliminating every other parameter
    (Schur complement) relative to its own information: 1 means uncorrelated,
    0 means fully absorbed by the other parameters.
    """
    d = np.sqrt(np.clip(np.diag(H), 0.0, None))
    dead = d <= 0.0
    d_safe = np.where(dead, 1.0, d)
    Hs = H / np.outer(d_safe, d_safe)
    Hs[dead, :] = 0.0
    Hs[:, dead] = 0.0
    eig = np.linalg.eigvalsh(Hs)
    ratio = float(eig[0] / eig[-1]) if eig[-1] > 0.0 else 0.0

    marginal = {}
    weak = [names[i] for i in np.flatnonzero(dead)]
    named = [i for i, n in enumerate(names) if n and not dead[i]]
    for i in named:
        rest = np.array([j for j in range(len(names)) if j != i and not dead[j]], dtype=int)
        if rest.size == 0:
            marginal[names[i]] = 1.0
            continue
        h_ir = Hs[i, rest]
        solved = np.linalg.lstsq(Hs[np.ix_(rest, rest)], h_ir, rcond=None)[0]
        marginal[names[i]] = float(max(Hs[i, i] - h_ir @ solved, 0.0))
        if marginal[names[i]] < marginal_tolerance:
            weak.append(names[i])
    return Observability(
        eigenvalue_ratio=ratio,
        rank_deficient=ratio < rank_tolerance or bool(np.any(dead)),
        weak_parameters=weak,
        marginal_ratios=marginal,
    )
