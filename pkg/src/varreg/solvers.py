"""Solvers for the variational problem min_u 0.5*||F u - v||^2 + alpha*J(u).

Every solver terminates on the optimality-condition residual
||F*(F u - v) + alpha*p|| with p a certified subgradient at u, since all
downstream error estimates consume exactly that pair (u_alpha, p_alpha).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from varreg.core import LinearForwardMap, as_vector, inner, norm, operator_norm_estimate, substream
from varreg.regularizers import Regularizer, Subgradient

__all__ = [
    "RegularizedSolution",
    "SolverConfig",
    "SolverError",
    "solve_fista",
    "solve_primal_dual",
    "solve_tikhonov_exact",
    "solve_variational",
]


class SolverError(RuntimeError):
    """Solver failed to certify its tolerance within the iteration budget."""

    def __init__(self, message: str, defect: float = float("nan")):
        super().__init__(message)
        self.defect = defect


@dataclass
class SolverConfig:
    max_iters: int = 50_000
    tol: float = 1e-8           # relative: defect target is tol*(1 + ||F*v||)
    step_safety: float = 0.9    # fraction of the theoretical step-size limit
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.step_safety <= 1.0:
            raise ValueError("step_safety must be in (0, 1]")


@dataclass
class RegularizedSolution:
    """Minimizer with its certificate: subgradient, residuals and defect."""

    u_alpha: np.ndarray
    p_alpha: Subgradient
    alpha: float
    data_residual: float      # 0.5*||F u - v||^2
    J_value: float
    optimality_defect: float  # ||F*(F u - v) + alpha*p||
    iterations: int
    gap: float | None = None  # primal-dual solver only


def _defect_target(cfg: SolverConfig, adjoint_data_norm: float) -> float:
    return cfg.tol * (1.0 + adjoint_data_norm)


def _init_point(dim: int, cfg: SolverConfig, u0) -> np.ndarray:
    if u0 is None:
        return np.zeros(dim)
    return as_vector(u0, dim, "u0").copy()


def solve_tikhonov_exact(op: LinearForwardMap, data, alpha: float,
                         config: SolverConfig | None = None, u0=None) -> RegularizedSolution:
    """Quadratic regularizer: conjugate gradients on (F*F + alpha I) u = F*v."""
    cfg = config or SolverConfig()
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    v = as_vector(data, op.out_dim, "data")
    b = op.adjoint(v)
    target = _defect_target(cfg, norm(b))

    def normal_op(x):
        return op.adjoint(op.apply(x)) + alpha * x

    u = _init_point(op.in_dim, cfg, u0)
    r = b - normal_op(u)
    d = r.copy()
    rs = float(np.dot(r, r))
    iterations = 0
    defect = np.sqrt(rs)
    while defect > target:
        if iterations >= cfg.max_iters:
            raise SolverError(f"CG stalled at defect {defect:.3e} > {target:.3e}", defect)
        q = normal_op(d)
        step = rs / float(np.dot(d, q))
        u += step * d
        r -= step * q
        rs_new = float(np.dot(r, r))
        d = r + (rs_new / rs) * d
        rs = rs_new
        iterations += 1
        if np.sqrt(rs) <= target:
            # guard against drift in the recursive residual
            r = b - normal_op(u)
            rs = float(np.dot(r, r))
            d = r.copy()
        defect = np.sqrt(rs)

    residual = op.apply(u) - v
    return RegularizedSolution(
        u_alpha=u,
        p_alpha=Subgradient(p=u.copy(), owner=u.copy()),
        alpha=alpha,
        data_residual=0.5 * float(np.dot(residual, residual)),
        J_value=0.5 * float(np.dot(u, u)),
        optimality_defect=defect,
        iterations=iterations,
    )


def solve_fista(op: LinearForwardMap, data, alpha: float, reg: Regularizer,
                config: SolverConfig | None = None, u0=None) -> RegularizedSolution:
    """Accelerated proximal gradient with adaptive restart (quadratic or l1).

    The declared subgradient is the one implied by the final prox step, which
    is an exact member of the subdifferential; the optimality defect is
    measured against it.
    """
    cfg = config or SolverConfig()
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    if reg.kind not in ("quadratic", "l1"):
        raise ValueError(f"solve_fista supports quadratic and l1, not {reg.kind!r}")
    v = as_vector(data, op.out_dim, "data")
    b = op.adjoint(v)
    target = _defect_target(cfg, norm(b))
    sigma = operator_norm_estimate(op, iters=200, seed=cfg.seed)
    lip = max((1.01 * sigma) ** 2, 1e-30)
    tau = cfg.step_safety / lip

    def objective(u, residual):
        return 0.5 * float(np.dot(residual, residual)) + alpha * reg.value(u)

    u = _init_point(op.in_dim, cfg, u0)
    res_u = op.apply(u) - v
    obj = objective(u, res_u)
    y = u.copy()
    t = 1.0
    for iterations in range(1, cfg.max_iters + 1):
        grad_y = op.adjoint(op.apply(y) - v)
        x_pre = y - tau * grad_y
        u_new = reg.prox(tau * alpha, x_pre)
        res_new = op.apply(u_new) - v
        obj_new = objective(u_new, res_new)
        if obj_new > obj:
            # momentum overshot: restart and take a plain descent step from u
            t = 1.0
            y = u.copy()
            grad_y = op.adjoint(op.apply(y) - v)
            x_pre = y - tau * grad_y
            u_new = reg.prox(tau * alpha, x_pre)
            res_new = op.apply(u_new) - v
            obj_new = objective(u_new, res_new)
        # exact subgradient from the prox optimality condition
        p = (x_pre - u_new) / (tau * alpha)
        defect = norm(op.adjoint(res_new) + alpha * p)
        if defect <= target:
            return RegularizedSolution(
                u_alpha=u_new,
                p_alpha=Subgradient(p=p, owner=u_new.copy()),
                alpha=alpha,
                data_residual=0.5 * float(np.dot(res_new, res_new)),
                J_value=reg.value(u_new),
                optimality_defect=defect,
                iterations=iterations,
            )
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = u_new + ((t - 1.0) / t_new) * (u_new - u)
        u, obj, t = u_new, obj_new, t_new
    raise SolverError(f"FISTA stalled at defect {defect:.3e} > {target:.3e}", defect)


def _gram_matrix(op: LinearForwardMap) -> np.ndarray:
    if op.matrix is not None:
        a = op.matrix
        if hasattr(a, "toarray"):
            return (a.T @ a).toarray()
        return a.T @ a
    g = np.empty((op.in_dim, op.in_dim))
    e = np.zeros(op.in_dim)
    for j in range(op.in_dim):
        e[j] = 1.0
        g[:, j] = op.adjoint(op.apply(e))
        e[j] = 0.0
    return 0.5 * (g + g.T)


def solve_primal_dual(op: LinearForwardMap, data, alpha: float, reg: Regularizer,
                      config: SolverConfig | None = None, u0=None,
                      check_every: int = 25) -> RegularizedSolution:
    """First-order primal-dual iteration for the anisotropic-TV problem.

    Works on the saddle formulation min_u max_{|q|<=alpha} 0.5*||Fu-v||^2 +
    <q, Du> with step sizes tau*sigma*||D||^2 < 1; the data term is handled by
    its exact prox via a prefactorized (I + tau F*F).  The result is certified
    by a primal-dual gap combining the optimality defect of p = D^T q / alpha
    with the complementarity slack alpha*||Du||_1 - <q, Du>.
    """
    cfg = config or SolverConfig()
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    if reg.kind != "tv_aniso":
        raise ValueError(f"solve_primal_dual requires tv_aniso, not {reg.kind!r}")
    v = as_vector(data, op.out_dim, "data")
    if reg.D.shape[1] != op.in_dim:
        raise ValueError("regularizer shape does not match operator")
    d_mat = reg.D
    dt_mat = d_mat.T.tocsr()
    d_norm = max(reg.edge_map_norm(), 1e-30)
    tau = cfg.step_safety / (1.001 * d_norm)
    sig = tau

    b = op.adjoint(v)
    target = _defect_target(cfg, norm(b))
    gram = _gram_matrix(op)
    factor = scipy.linalg.cho_factor(np.eye(op.in_dim) + tau * gram)

    u = _init_point(op.in_dim, cfg, u0)
    u_bar = u.copy()
    q = np.zeros(d_mat.shape[0])
    tau_b = tau * b

    defect = np.inf
    gap = np.inf
    for iterations in range(1, cfg.max_iters + 1):
        q = np.clip(q + sig * (d_mat @ u_bar), -alpha, alpha)
        u_new = scipy.linalg.cho_solve(factor, u + tau_b - tau * (dt_mat @ q))
        u_bar = 2.0 * u_new - u
        u = u_new
        if iterations % check_every == 0 or iterations == cfg.max_iters:
            residual = op.apply(u) - v
            du = d_mat @ u
            dtq = dt_mat @ q
            defect = norm(op.adjoint(residual) + dtq)
            tv_val = float(np.sum(np.abs(du)))
            compl = alpha * tv_val - float(np.dot(q, du))
            obj = 0.5 * float(np.dot(residual, residual)) + alpha * tv_val
            gap = defect + max(compl, 0.0)
            if defect <= target and compl <= cfg.tol * (1.0 + obj):
                return RegularizedSolution(
                    u_alpha=u,
                    p_alpha=Subgradient(p=dtq / alpha, owner=u.copy(), dual=q / alpha),
                    alpha=alpha,
                    data_residual=0.5 * float(np.dot(residual, residual)),
                    J_value=tv_val,
                    optimality_defect=defect,
                    iterations=iterations,
                    gap=gap,
                )
    raise SolverError(f"primal-dual stalled at gap {gap:.3e} (defect {defect:.3e})", defect)


def solve_variational(op: LinearForwardMap, data, alpha: float, reg: Regularizer,
                      config: SolverConfig | None = None, u0=None) -> RegularizedSolution:
    """Dispatch to the appropriate solver for the given regularizer."""
    if reg.kind == "quadratic":
        return solve_tikhonov_exact(op, data, alpha, config, u0=u0)
    if reg.kind == "l1":
        return solve_fista(op, data, alpha, reg, config, u0=u0)
    if reg.kind == "tv_aniso":
        return solve_primal_dual(op, data, alpha, reg, config, u0=u0)
    raise ValueError(f"unknown regularizer kind {reg.kind!r}")


def perturbed_start(dim: int, seed: int, scale: float = 0.1) -> np.ndarray:
    """Seeded random starting point, used to probe output uniqueness."""
    return scale * substream(seed, "init").standard_normal(dim)


def accelerated_projected_gradient(grad_fn, project, lip: float, x0: np.ndarray,
                                   tol: float, max_iters: int = 20_000):
    """FISTA-style projected gradient for smooth objectives over convex sets.

    Restarts momentum when it points uphill (gradient-mapping criterion).
    Returns (x, mapping_norm, iterations) where mapping_norm is the norm of
    the final projected-gradient mapping, scaled by the Lipschitz constant.
    """
    lip = max(lip, 1e-30)
    step = 1.0 / lip
    x = project(np.asarray(x0, dtype=float).copy())
    y = x.copy()
    t = 1.0
    mapping = np.inf
    for iterations in range(1, max_iters + 1):
        x_new = project(y - step * grad_fn(y))
        mapping = lip * norm(x_new - y)
        if mapping <= tol:
            return x_new, mapping, iterations
        if inner(y - x_new, x_new - x) > 0.0:  # momentum uphill: restart
            t = 1.0
            y = x.copy()
            x_new = project(y - step * grad_fn(y))
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
    return x, mapping, max_iters
