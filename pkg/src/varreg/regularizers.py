"""Convex regularizers, subgradient certification and Bregman distances.

Three functionals are supported:

* ``quadratic``   J(u) = 0.5*||u||^2
* ``l1``          J(u) = sum_i |u_i|
* ``tv_aniso``    J(u) = sum_e |(D u)_e| with D the forward-difference edge map
                  (replicate boundary, so constants have zero cost)

Subgradient membership is certified in closed form for quadratic and l1.  For
TV the test is p = D^T q with q_e in the subdifferential of |.| at (Du)_e; a
known edge-dual witness q is verified directly, otherwise a small projected
gradient feasibility problem is solved.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from varreg.core import DimensionMismatchError, LinearForwardMap, as_vector, inner, norm

__all__ = [
    "Regularizer",
    "Subgradient",
    "SubgradientError",
    "MembershipResult",
    "bregman_distance",
    "difference_matrix",
    "is_subgradient",
    "l1",
    "quadratic",
    "subgradient_from_optimality",
    "symmetric_bregman",
    "tv_aniso",
]

# Negative Bregman values above this magnitude indicate a membership bug
# rather than roundoff and are raised instead of clamped.
NEGATIVE_TOLERANCE = 1e-8


class SubgradientError(ValueError):
    """A claimed subgradient failed its membership certificate."""


@dataclass
class Subgradient:
    """A subgradient ``p`` of a regularizer at the point ``owner``.

    ``dual`` optionally carries the TV edge-dual witness q with p = D^T q,
    which makes later membership checks exact and cheap.
    """

    p: np.ndarray
    owner: np.ndarray
    dual: np.ndarray | None = None


class MembershipResult(NamedTuple):
    ok: bool
    max_violation: float


def difference_matrix(shape) -> sp.csr_matrix:
    """Forward-difference edge map for 1-d signals or 2-d images (row-major)."""
    if isinstance(shape, (int, np.integer)):
        n = int(shape)
        if n < 2:
            raise ValueError("tv_aniso needs at least 2 entries")
        return (sp.eye(n, format="csr")[1:] - sp.eye(n, format="csr")[:-1]).tocsr()
    h, w = (int(s) for s in shape)
    if h < 1 or w < 1 or h * w < 2:
        raise ValueError("invalid image shape for tv_aniso")
    eye = sp.eye(h * w, format="csr")
    blocks = []
    idx = np.arange(h * w).reshape(h, w)
    if w > 1:
        horiz = idx[:, 1:].ravel()
        base = idx[:, :-1].ravel()
        blocks.append(eye[horiz] - eye[base])
    if h > 1:
        vert = idx[1:, :].ravel()
        base = idx[:-1, :].ravel()
        blocks.append(eye[vert] - eye[base])
    return sp.vstack(blocks).tocsr()


@dataclass(eq=False)
class Regularizer:
    kind: str
    shape: object = None
    D: sp.csr_matrix | None = None
    _dual_norm: float | None = None

    def value(self, u) -> float:
        u = as_vector(u, name="u")
        if self.kind == "quadratic":
            return 0.5 * float(np.dot(u, u))
        if self.kind == "l1":
            return float(np.sum(np.abs(u)))
        self._check_dim(u)
        return float(np.sum(np.abs(self.D @ u)))

    def value_batch(self, U: np.ndarray) -> np.ndarray:
        """Values for each row of a 2-d array of candidates."""
        U = np.asarray(U, dtype=float)
        if self.kind == "quadratic":
            return 0.5 * np.einsum("ij,ij->i", U, U)
        if self.kind == "l1":
            return np.sum(np.abs(U), axis=1)
        return np.sum(np.abs(self.D @ U.T), axis=0)

    def prox(self, tau: float, x) -> np.ndarray:
        """Proximal map argmin_u 0.5*||u - x||^2 + tau*J(u)."""
        if tau < 0.0:
            raise ValueError("tau must be nonnegative")
        x = as_vector(x, name="x")
        if self.kind == "quadratic":
            return x / (1.0 + tau)
        if self.kind == "l1":
            return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)
        raise NotImplementedError("tv_aniso has no closed-form prox; use solve_primal_dual")

    def edge_map_norm(self) -> float:
        """Spectral norm of D (cached); only meaningful for tv_aniso."""
        if self.D is None:
            raise ValueError("regularizer has no edge map")
        if self._dual_norm is None:
            self._dual_norm = _sparse_spectral_norm(self.D)
        return self._dual_norm

    def _check_dim(self, u):
        if self.D is not None and u.size != self.D.shape[1]:
            raise DimensionMismatchError(f"expected dimension {self.D.shape[1]}, got {u.size}")


def quadratic() -> Regularizer:
    return Regularizer(kind="quadratic")


def l1() -> Regularizer:
    return Regularizer(kind="l1")


def tv_aniso(shape) -> Regularizer:
    return Regularizer(kind="tv_aniso", shape=shape, D=difference_matrix(shape))


def _sparse_spectral_norm(m: sp.spmatrix, iters: int = 100, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(m.shape[1])
    x /= norm(x)
    mt = m.T.tocsr()
    for _ in range(iters):
        w = mt @ (m @ x)
        nw = norm(w)
        if nw == 0.0:
            return 0.0
        x = w / nw
    return norm(m @ x)


def subgradient_from_optimality(op: LinearForwardMap, data, u_alpha, alpha: float) -> Subgradient:
    """Subgradient implied by the optimality condition, p = F*(v - F u)/alpha.

    This is exact only at the true minimizer; the caller should confirm
    membership with :func:`is_subgradient` when u_alpha is approximate.
    """
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    u_alpha = as_vector(u_alpha, op.in_dim, "u_alpha")
    data = as_vector(data, op.out_dim, "data")
    p = op.adjoint(data - op.apply(u_alpha)) / alpha
    return Subgradient(p=p, owner=u_alpha.copy())


def _resolve(p, dual):
    if isinstance(p, Subgradient):
        if dual is None:
            dual = p.dual
        p = p.p
    return np.asarray(p, dtype=float), dual


def _tv_dual_fit(D: sp.csr_matrix, p: np.ndarray, du: np.ndarray, support_atol: float,
                 lip: float, iters: int = 2000) -> float:
    """Residual min_q ||D^T q - p|| over the TV dual constraints at Du.

    Entries of q are pinned to sign((Du)_e) on edges where |Du| exceeds the
    support threshold and boxed in [-1,1] elsewhere; solved by an accelerated
    projected gradient method.
    """
    fixed = np.abs(du) > support_atol
    signs = np.sign(du)
    dt = D.T.tocsr()

    def project(q):
        q = np.clip(q, -1.0, 1.0)
        q[fixed] = signs[fixed]
        return q

    q = project(np.zeros(D.shape[0]))
    y = q.copy()
    t = 1.0
    best = norm(dt @ q - p)
    step = 1.0 / max(lip, 1e-30)
    for _ in range(iters):
        grad = D @ (dt @ y - p)
        q_new = project(y - step * grad)
        res = norm(dt @ q_new - p)
        if res > best:  # restart momentum on non-improvement
            t = 1.0
            y = q.copy()
            q_new = project(y - step * (D @ (dt @ y - p)))
            res = norm(dt @ q_new - p)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = q_new + ((t - 1.0) / t_new) * (q_new - q)
        improvement = best - res
        q, t = q_new, t_new
        best = min(best, res)
        if improvement >= 0.0 and improvement < 1e-14 * (1.0 + best):
            break
    return best


def is_subgradient(reg: Regularizer, u, p, tol: float = 1e-8, *, dual=None,
                   samples: int = 100, seed: int = 0,
                   support_atol: float = 1e-7) -> MembershipResult:
    """Certify p in the subdifferential of J at u, within ``tol``.

    Combines the closed-form characterization of the subdifferential with a
    randomized check of the defining inequality J(w) >= J(u) + <p, w-u> over
    ``samples`` seeded points.  Returns the decision and the largest observed
    violation.
    """
    u = as_vector(u, name="u")
    p, dual = _resolve(p, dual)
    p = as_vector(p, u.size, "p")

    scale = max(1.0, float(np.max(np.abs(u))))
    if reg.kind == "quadratic":
        violation = float(np.max(np.abs(p - u)))
    elif reg.kind == "l1":
        on = np.abs(u) > support_atol * scale
        v_on = np.max(np.abs(p[on] - np.sign(u[on]))) if np.any(on) else 0.0
        v_off = np.max(np.abs(p[~on]) - 1.0) if np.any(~on) else 0.0
        violation = float(max(v_on, max(v_off, 0.0)))
    elif reg.kind == "tv_aniso":
        reg._check_dim(u)
        du = reg.D @ u
        edge_scale = max(1.0, float(np.max(np.abs(du))) if du.size else 1.0)
        if dual is not None:
            q = as_vector(dual, reg.D.shape[0], "dual witness")
            fixed = np.abs(du) > support_atol * edge_scale
            v_res = norm(reg.D.T @ q - p)
            v_box = max(float(np.max(np.abs(q))) - 1.0, 0.0)
            v_sign = float(np.max(np.abs(q[fixed] - np.sign(du[fixed])))) if np.any(fixed) else 0.0
            violation = max(v_res, v_box, v_sign)
        else:
            lip = reg.edge_map_norm() ** 2
            violation = _tv_dual_fit(reg.D, p, du, support_atol * edge_scale, lip)
    else:  # pragma: no cover - constructor prevents this
        raise ValueError(f"unknown regularizer kind {reg.kind!r}")

    # randomized check of the subgradient inequality
    rng = np.random.default_rng(seed)
    radius = 1.0 + float(np.max(np.abs(u)))
    w = u[None, :] + radius * rng.standard_normal((samples, u.size))
    gaps = reg.value(u) + (w - u[None, :]) @ p - reg.value_batch(w)
    violation = max(violation, float(np.max(gaps)), 0.0)
    return MembershipResult(ok=bool(violation <= tol), max_violation=violation)


def _check_membership(reg, u, p, dual, membership_tol, support_atol, what):
    res = is_subgradient(reg, u, p, tol=membership_tol, dual=dual, support_atol=support_atol)
    if not res.ok:
        raise SubgradientError(
            f"{what} fails membership (violation {res.max_violation:.3e} > tol {membership_tol:.1e})"
        )


def _clamp(value: float, what: str) -> float:
    if value >= 0.0:
        return value
    if value >= -NEGATIVE_TOLERANCE:  # roundoff
        return 0.0
    raise ArithmeticError(f"{what} is negative beyond roundoff: {value:.3e}")


def bregman_distance(reg: Regularizer, u_tilde, u, p, *, membership_tol: float = 1e-6,
                     support_atol: float = 1e-7, check: bool = True, dual=None) -> float:
    """One-sided Bregman distance d_J^p(u_tilde, u) = J(u_tilde) - J(u) - <p, u_tilde - u>.

    Requires p in the subdifferential of J at u; tiny negative roundoff is
    clamped to zero, anything below -1e-8 raises since it indicates an invalid
    subgradient rather than floating point noise.
    """
    u_tilde = as_vector(u_tilde, name="u_tilde")
    u = as_vector(u, u_tilde.size, "u")
    p, dual = _resolve(p, dual)
    if check:
        _check_membership(reg, u, p, dual, membership_tol, support_atol, "p")
    raw = reg.value(u_tilde) - reg.value(u) - inner(p, u_tilde - u)
    return _clamp(raw, "Bregman distance")


def symmetric_bregman(reg: Regularizer, u_tilde, u, p_tilde, p, *, membership_tol: float = 1e-6,
                      support_atol: float = 1e-7, check: bool = True,
                      dual_tilde=None, dual=None) -> float:
    """Symmetric Bregman distance <p_tilde - p, u_tilde - u>.

    Equals the sum of the two one-sided distances when both memberships hold.
    """
    u_tilde = as_vector(u_tilde, name="u_tilde")
    u = as_vector(u, u_tilde.size, "u")
    p_tilde, dual_tilde = _resolve(p_tilde, dual_tilde)
    p, dual = _resolve(p, dual)
    if check:
        _check_membership(reg, u_tilde, p_tilde, dual_tilde, membership_tol, support_atol, "p_tilde")
        _check_membership(reg, u, p, dual, membership_tol, support_atol, "p")
    raw = inner(p_tilde - p, u_tilde - u)
    return _clamp(raw, "symmetric Bregman distance")
