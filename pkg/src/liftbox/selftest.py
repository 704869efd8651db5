"""Randomized finite-difference checks for every analytic gradient in :mod:`liftbox.losses`."""

from __future__ import annotations

import time

import numpy as np

from .geometry import CameraIntrinsics, CuboidParams
from .losses import (
    ClassPartition,
    ambiguity_loss_from_logits,
    assemble_cuboid_with_grad,
    calibrated_chamfer_loss,
    chamfer_corner_loss,
    classify_with_grad,
    grad_check,
    softmax,
    softmax_jacobian,
)

TOLERANCE = 1e-5
# nearest-neighbor assignments must be unambiguous by this squared-distance margin
TIE_MARGIN = 1e-3
CANCELLATION_RATIO = 1e-2
KINK_MARGIN = 1e-3


def _assignment_margin(A, B) -> float:
    diff = A[:, None, :] - B[None, :, :]
    D = np.einsum("ijk,ijk->ij", diff, diff)
    rows = np.sort(D, axis=1)
    cols = np.sort(D, axis=0)
    return min((rows[:, 1] - rows[:, 0]).min(), (cols[1] - cols[0]).min())


def random_corner_pair(rng):
    while True:
        A = rng.normal(size=(8, 3))
        B = rng.normal(size=(8, 3))
        if _assignment_margin(A, B) > TIE_MARGIN:
            return A, B


def random_partition(rng, n_classes):
    idx = rng.permutation(n_classes)
    bkg = int(idx[0])
    n_new = int(rng.integers(0, n_classes - 1))
    return ClassPartition(frozenset(idx[1 + n_new:].tolist()), frozenset(idx[1:1 + n_new].tolist()), bkg)


def random_intrinsics(rng):
    return CameraIntrinsics(
        fx=float(rng.uniform(300, 900)),
        fy=float(rng.uniform(300, 900)),
        px=float(rng.uniform(200, 400)),
        py=float(rng.uniform(150, 300)),
    )


def random_cuboid(rng):
    while True:
        p = rng.normal(size=6)
        b1, b2 = p[:3], p[3:]
        resid = b2 - (b1 @ b2) / (b1 @ b1) * b1
        if np.linalg.norm(b1) > 0.2 and np.linalg.norm(resid) > 0.2 * np.linalg.norm(b2):
            break
    box2d = (rng.uniform(50, 500), rng.uniform(50, 400), rng.uniform(20, 200), rng.uniform(20, 200))
    return CuboidParams(
        u=float(rng.uniform(-0.5, 0.5)),
        v=float(rng.uniform(-0.5, 0.5)),
        z=float(rng.uniform(1.0, 6.0)),
        w=float(rng.uniform(0.2, 2.0)),
        h=float(rng.uniform(0.2, 2.0)),
        l=float(rng.uniform(0.2, 2.0)),
        p=tuple(p),
        box2d=box2d,
        s=float(rng.uniform(-0.5, 0.5)),
    )


def _chamfer_case(rng):
    A, B = random_corner_pair(rng)
    return lambda x: chamfer_corner_loss(x.reshape(8, 3), B), A.reshape(-1)


def _ambiguity_case(rng):
    n = int(rng.integers(3, 10))
    part = random_partition(rng, n)
    return lambda z: ambiguity_loss_from_logits(z, part), rng.normal(scale=2.0, size=n)


def _classify_v_case(rng):
    n, d = int(rng.integers(2, 8)), int(rng.integers(2, 16))
    E = rng.normal(size=(n, d))
    T = float(rng.uniform(0.25, 2.0))
    w = rng.normal(size=n)

    def f(v):
        p, dv, _ = classify_with_grad(v, E, T)
        return float(w @ p.probs), w @ dv

    # cosine curvature grows like 1/|v|^3; keep the feature away from the origin
    v = rng.normal(size=d)
    return f, v / np.linalg.norm(v) * rng.uniform(0.5, 2.0)


def _classify_logits_case(rng):
    n = int(rng.integers(2, 10))
    w = rng.normal(size=n)

    def f(z):
        p = softmax(z)
        return float(w @ p), softmax_jacobian(p) @ w

    return f, rng.normal(size=n)


def _cuboid_case(rng):
    c = random_cuboid(rng)
    K = random_intrinsics(rng)
    W = rng.normal(size=(8, 3))

    def f(theta):
        corners, J = assemble_cuboid_with_grad(CuboidParams.from_vector(theta, c.box2d), K)
        return float(np.sum(W * corners)), np.einsum("ia,iak->k", W, J)

    return f, c.as_vector()


def _calibrated_chamfer_case(rng):
    K = random_intrinsics(rng)
    while True:
        c = random_cuboid(rng)
        corners, _ = assemble_cuboid_with_grad(c, K)
        target = corners + rng.normal(scale=0.3, size=(8, 3))
        # |s| has a kink at zero that central differences must not straddle
        if abs(c.s) > KINK_MARGIN and _assignment_margin(corners, target) > TIE_MARGIN:
            break

    def f(theta):
        return calibrated_chamfer_loss(CuboidParams.from_vector(theta, c.box2d), K, target)

    return f, c.as_vector()


def nondegenerate(grad, ratio: float = CANCELLATION_RATIO) -> bool:
    """Reject inputs where some gradient component nearly cancels to zero.

    Central differences carry ~1e-10 absolute roundoff, so a relative check is
    meaningless on components many orders below the gradient's scale.
    """
    g = np.abs(np.asarray(grad, dtype=np.float64))
    return g.max() > 0 and g.min() >= ratio * g.max()


def sample_check(case, rng) -> float:
    """Draw non-degenerate inputs from ``case`` and return the grad-check error."""
    while True:
        f, x = case(rng)
        if nondegenerate(f(x)[1]):
            return grad_check(f, x)


CHECKS = {
    "chamfer_corner_loss/A": _chamfer_case,
    "ambiguity_loss/logits": _ambiguity_case,
    "classify/v": _classify_v_case,
    "classify/logits": _classify_logits_case,
    "assemble_cuboid/params": _cuboid_case,
    "calibrated_chamfer_loss/params": _calibrated_chamfer_case,
}


def run_gradient_suite(trials: int = 100, seed: int = 0, tol: float = TOLERANCE) -> dict:
    """Run every check on ``trials`` random inputs and return a JSON-ready report."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    results = []
    for name, case in CHECKS.items():
        errors = [sample_check(case, rng) for _ in range(trials)]
        worst = float(max(errors))
        results.append({
            "name": name,
            "trials": trials,
            "max_rel_error": worst,
            "tolerance": tol,
            "passed": worst < tol,
        })
    return {
        "passed": all(r["passed"] for r in results),
        "seed": seed,
        "seconds": time.perf_counter() - start,
        "checks": results,
    }
