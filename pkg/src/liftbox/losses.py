"""Training-objective math: embedding classification, calibrated cuboids, Chamfer,
scale regularization and the ambiguity loss, each with an analytic gradient.

Cuboid gradients are taken with respect to the parameter vector
``(u, v, z, w, h, l, p0..p5, s)`` (see :attr:`CuboidParams.PARAM_NAMES`);
classification gradients with respect to the feature vector or the logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import AmbiguityError, GradientCheckError, ValidationError
from .geometry import (
    UNIT_CORNERS,
    CameraIntrinsics,
    CuboidParams,
    center_from_projection,
    corners_from,
    rotation_from_6d,
    rotation_from_6d_jacobian,
)

LOG_FLOOR = 1e-12
N_PARAMS = 13


@dataclass(frozen=True)
class ClassProbabilities:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64, copy=True).reshape(-1)
        if np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > 1e-9:
            raise ValidationError("class probabilities must lie in [0, 1] and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return len(self.probs)


@dataclass(frozen=True)
class ClassPartition:
    """Disjoint original / new / background class indices covering ``0..C``."""

    original: frozenset
    new: frozenset
    background: int

    def __post_init__(self):
        original = frozenset(int(i) for i in self.original)
        new = frozenset(int(i) for i in self.new)
        bkg = int(self.background)
        if original & new or bkg in original or bkg in new:
            raise ValidationError("class partition sets must be disjoint")
        union = original | new | {bkg}
        if union != set(range(len(union))):
            raise ValidationError("class partition must cover indices 0..C without gaps")
        object.__setattr__(self, "original", original)
        object.__setattr__(self, "new", new)
        object.__setattr__(self, "background", bkg)

    @property
    def n_classes(self) -> int:
        return len(self.original) + len(self.new) + 1

    @property
    def ambiguous_group(self) -> frozenset:
        return self.new | {self.background}


# -- classification -----------------------------------------------------------

def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_jacobian(p: np.ndarray) -> np.ndarray:
    return np.diag(p) - np.outer(p, p)


def _embedding_matrix(E) -> np.ndarray:
    vecs = getattr(E, "vectors", E)
    return np.asarray(vecs, dtype=np.float64)


def cosine_logits(v, E, temperature: float = 1.0):
    """Cosine similarities scaled by ``1/temperature`` and their Jacobian w.r.t. ``v``."""
    if not temperature > 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    M = _embedding_matrix(E)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape[0] != M.shape[1]:
        raise ValidationError(f"feature has dimension {v.shape[0]}, embeddings have {M.shape[1]}")
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ValidationError("feature vector must be nonzero")
    unit = M / np.linalg.norm(M, axis=1, keepdims=True)
    cos = unit @ v / nv
    dcos = unit / nv - np.outer(cos, v) / nv**2
    return cos / temperature, dcos / temperature


def classify(v, E, temperature: float = 1.0) -> ClassProbabilities:
    """Softmax over cosine similarities between ``v`` and every embedding row.

    The background class, when used, is simply one more row of ``E``.
    """
    logits, _ = cosine_logits(v, E, temperature)
    return ClassProbabilities(softmax(logits))


def classify_with_grad(v, E, temperature: float = 1.0):
    """Probabilities plus ``d probs / d v`` (C x D) and ``d probs / d logits`` (C x C)."""
    logits, dlogits_dv = cosine_logits(v, E, temperature)
    p = softmax(logits)
    J = softmax_jacobian(p)
    return ClassProbabilities(p), J @ dlogits_dv, J


# -- cuboid assembly ----------------------------------------------------------

def _center_jacobian(c: CuboidParams, K: CameraIntrinsics):
    x2d, y2d, w2d, h2d = c.box2d
    x = center_from_projection(c, K)
    J = np.zeros((3, N_PARAMS))
    J[0, 0] = c.z * w2d / K.fx
    J[1, 1] = c.z * h2d / K.fy
    J[0, 2] = (x2d + c.u * w2d - K.px) / K.fx
    J[1, 2] = (y2d + c.v * h2d - K.py) / K.fy
    J[2, 2] = 1.0
    return x, J


def assemble_cuboid(c: CuboidParams, K: CameraIntrinsics) -> np.ndarray:
    """Corners ``R(p) diag(w, h, l) B_unit + exp(s) x`` as an ``(8, 3)`` array."""
    R = rotation_from_6d(c.p)
    x = center_from_projection(c, K)
    return corners_from(np.exp(c.s) * x, (c.w, c.h, c.l), R)


def assemble_cuboid_with_grad(c: CuboidParams, K: CameraIntrinsics):
    """Corners and ``J[i, a, k] = d corner_i[a] / d theta_k`` over the 13 parameters."""
    R, dR = rotation_from_6d_jacobian(c.p)
    dims = np.array([c.w, c.h, c.l])
    x, dx = _center_jacobian(c, K)
    scale = np.exp(c.s)
    local = UNIT_CORNERS * dims
    corners = local @ R.T + scale * x

    J = np.zeros((8, 3, N_PARAMS))
    J += scale * dx[None]
    for k in range(3):
        J[:, :, 3 + k] = np.outer(UNIT_CORNERS[:, k], R[:, k])
    J[:, :, 6:12] = np.einsum("abm,ib->iam", dR, local)
    J[:, :, 12] = scale * x
    return corners, J


# -- losses -------------------------------------------------------------------

def chamfer_corner_loss(A, B):
    """Symmetric mean squared nearest-neighbor distance and its gradient w.r.t. ``A``.

    At exact ties the lowest-index neighbor is used, which yields a subgradient.
    """
    A = np.asarray(A, dtype=np.float64).reshape(-1, 3)
    B = np.asarray(B, dtype=np.float64).reshape(-1, 3)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ValidationError("corner sets must be finite")
    diff = A[:, None, :] - B[None, :, :]
    D = np.einsum("ijk,ijk->ij", diff, diff)
    nb = D.argmin(axis=1)
    na = D.argmin(axis=0)
    rows = np.arange(len(A))
    cols = np.arange(len(B))
    loss = D[rows, nb].mean() + D[na, cols].mean()
    grad = np.zeros_like(A)
    grad += 2.0 / len(A) * (A - B[nb])
    np.add.at(grad, na, 2.0 / len(B) * (A[na] - B))
    return float(loss), grad


def scale_regularizer(s: float):
    s = float(s)
    if not np.isfinite(s):
        raise ValidationError("scale must be finite")
    return abs(s), float(np.sign(s))


def calibrated_chamfer_loss(c: CuboidParams, K: CameraIntrinsics, target, reg_weight: float = 1.0):
    """Chamfer between the calibrated cuboid and ``target`` corners plus ``reg_weight * |s|``.

    Returns the loss and its gradient over the 13 cuboid parameters.
    """
    corners, J = assemble_cuboid_with_grad(c, K)
    loss, gA = chamfer_corner_loss(corners, target)
    reg, dreg = scale_regularizer(c.s)
    grad = np.einsum("ia,iak->k", gA, J)
    grad[12] += reg_weight * dreg
    return loss + reg_weight * reg, grad


def _group_mask(n: int, part: ClassPartition) -> np.ndarray:
    if part.n_classes != n:
        raise ValidationError(f"partition covers {part.n_classes} classes, probabilities have {n}")
    mask = np.zeros(n, dtype=bool)
    mask[list(part.ambiguous_group)] = True
    return mask


def ambiguity_loss(probs, part: ClassPartition):
    """``-log`` of the mass on new classes plus background, with the logit gradient."""
    p = probs.probs if isinstance(probs, ClassProbabilities) else ClassProbabilities(probs).probs
    g = _group_mask(len(p), part)
    mass = p[g].sum()
    if mass == 0:
        raise AmbiguityError("new-class and background probabilities are all zero")
    loss = -np.log(max(mass, LOG_FLOOR))
    grad = p * (1.0 - g / mass)
    return (float(loss) if loss > 0 else 0.0), grad


def ambiguity_loss_from_logits(logits, part: ClassPartition):
    """Same loss evaluated from logits with log-sum-exp, for well-conditioned gradients."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    g = _group_mask(len(z), part)

    def lse(a):
        m = a.max()
        return m + np.log(np.exp(a - m).sum())

    lse_all = lse(z)
    lse_g = lse(z[g])
    p = np.exp(z - lse_all)
    pg = np.where(g, np.exp(z - lse_g), 0.0)
    if g.all():
        return 0.0, p - pg
    # -log P_G = log(1 + P_rest / P_G), accurate when P_G is close to 1
    loss = np.logaddexp(0.0, lse(z[~g]) - lse_g)
    return float(loss), p - pg


# -- gradient checking --------------------------------------------------------

def grad_check(f: Callable, x, eps: float = 1e-5, floor: float = 1e-8) -> float:
    """Max relative error between ``f(x)[1]`` and central differences of ``f(x)[0]``.

    ``f`` returns ``(value, gradient)``. Each coordinate's error is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    x = np.array(x, dtype=np.float64).reshape(-1)
    val, grad = f(x)
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    if not np.isfinite(val) or not np.all(np.isfinite(grad)):
        raise GradientCheckError("function or gradient is not finite at x")
    if grad.shape != x.shape:
        raise GradientCheckError(f"gradient shape {grad.shape} does not match input {x.shape}")
    worst = 0.0
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        fp, fm = f(xp)[0], f(xm)[0]
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradientCheckError(f"non-finite value when perturbing coordinate {i}")
        num = (fp - fm) / (2 * eps)
        err = abs(grad[i] - num) / max(abs(grad[i]), abs(num), floor)
        worst = max(worst, err)
    return worst
