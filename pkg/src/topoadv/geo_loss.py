"""Geometric regularizers on the adversarial cloud and their point gradients.

Adversarial normals and curvature are evaluated on the clean kNN index sets,
so every term is a smooth function of the coordinates away from ties.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gradients import EIGENGAP_MIN, covariance_vjp
from .pointcloud import CleanStats, NeighborGraph, pairwise_sq_dists

_TRACE_FLOOR = 1e-12


def _patches(points, neighbors):
    idx = np.concatenate([np.arange(points.shape[0])[:, None], neighbors], axis=1)
    return idx, points[idx]


def _covariances(patch):
    centered = patch - patch.mean(axis=1, keepdims=True)
    return np.einsum("nmi,nmj->nij", centered, centered) / patch.shape[1]


def _scatter(idx, per_patch, n):
    out = np.zeros((n, 3))
    np.add.at(out, idx.reshape(-1), per_patch.reshape(-1, 3))
    return out


def chamfer(P, P_adv):
    """Bidirectional nearest-neighbor distance sum over |P|, with its gradient
    w.r.t. ``P_adv`` (nearest neighbors held fixed)."""
    a = np.asarray(P, dtype=np.float64)
    b = np.asarray(P_adv, dtype=np.float64)
    n = a.shape[0]
    d2 = pairwise_sq_dists(a, b)
    j = np.argmin(d2, axis=1)          # for each clean x, nearest adv y
    i = np.argmin(d2, axis=0)          # for each adv y, nearest clean x
    diff_ab = b[j] - a                  # y* - x
    diff_ba = b - a[i]                  # y - x*
    da = np.linalg.norm(diff_ab, axis=1)
    db = np.linalg.norm(diff_ba, axis=1)
    value = (da.sum() + db.sum()) / n
    grad = np.zeros_like(b)
    ok = da > 0
    np.add.at(grad, j[ok], diff_ab[ok] / da[ok, None])
    ok = db > 0
    grad[ok] += diff_ba[ok] / db[ok, None]
    return float(value), grad / n


def normal_consistency(clean: CleanStats, P_adv):
    """Mean squared difference between sign-aligned adversarial normals and the
    clean normals. Points whose eigengap is below the guard add their value but
    no gradient."""
    pts = np.asarray(P_adv, dtype=np.float64)
    n = pts.shape[0]
    idx, patch = _patches(pts, clean.graph.neighbors)
    evals, evecs = np.linalg.eigh(_covariances(patch))
    v0 = evecs[:, :, 0]
    sign = np.where(np.einsum("na,na->n", v0, clean.normals) < 0, -1.0, 1.0)
    diff = sign[:, None] * v0 - clean.normals
    value = float(np.sum(diff * diff) / n)
    g_v = (2.0 / n) * sign[:, None] * diff
    gap_ok = (evals[:, 1] - evals[:, 0]) >= EIGENGAP_MIN
    g_cov = np.zeros((n, 3, 3))
    for m in (1, 2):
        vm = evecs[:, :, m]
        gap = np.where(gap_ok, evals[:, 0] - evals[:, m], 1.0)
        coef = np.where(gap_ok, np.einsum("na,na->n", vm, g_v) / gap, 0.0)
        g_cov += coef[:, None, None] * np.einsum("na,nb->nab", vm, v0)
    g_cov = 0.5 * (g_cov + np.transpose(g_cov, (0, 2, 1)))
    return value, _scatter(idx, covariance_vjp(patch, g_cov), n)


def curvature_consistency(clean: CleanStats, P_adv):
    """Mean squared difference of surface variation lambda_min / trace."""
    pts = np.asarray(P_adv, dtype=np.float64)
    n = pts.shape[0]
    idx, patch = _patches(pts, clean.graph.neighbors)
    evals, evecs = np.linalg.eigh(_covariances(patch))
    tr = evals.sum(axis=1)
    ok = tr >= _TRACE_FLOOR
    trs = np.where(ok, tr, 1.0)
    kappa = np.where(ok, evals[:, 0] / trs, 0.0)
    resid = kappa - clean.curvature
    value = float(np.sum(resid ** 2) / n)
    # d kappa / dC = v0 v0^T / tr - lambda0 I / tr^2
    v0 = evecs[:, :, 0]
    dk = np.einsum("na,nb->nab", v0, v0) / trs[:, None, None] \
        - (evals[:, 0] / trs ** 2)[:, None, None] * np.eye(3)
    coef = np.where(ok, 2.0 * resid / n, 0.0)
    g_cov = coef[:, None, None] * dk
    return value, _scatter(idx, covariance_vjp(patch, g_cov), n)


def laplacian_smooth(delta, graph: NeighborGraph):
    """(1/N) sum ||delta_i - mean_{j in N(i)} delta_j||^2 and its exact gradient."""
    d = np.asarray(delta, dtype=np.float64)
    n = d.shape[0]
    nb = graph.neighbors
    r = d - d[nb].mean(axis=1)
    value = float(np.sum(r * r) / n)
    back = np.zeros_like(d)
    np.add.at(back, nb.reshape(-1), np.repeat(r / nb.shape[1], nb.shape[1], axis=0))
    return value, (2.0 / n) * (r - back)


@dataclass
class GeomLoss:
    value: float
    chamfer: float
    normal: float
    curvature: float
    laplacian: float
    grad: np.ndarray


def geom_total(clean: CleanStats, P_adv, delta) -> GeomLoss:
    """Unweighted sum of the four terms; the gradient is w.r.t. the adversarial
    coordinates, which equals the gradient w.r.t. delta."""
    cd, g1 = chamfer(clean.points, P_adv)
    nc, g2 = normal_consistency(clean, P_adv)
    cc, g3 = curvature_consistency(clean, P_adv)
    lp, g4 = laplacian_smooth(delta, clean.graph)
    return GeomLoss(value=cd + nc + cc + lp, chamfer=cd, normal=nc, curvature=cc,
                    laplacian=lp, grad=g1 + g2 + g3 + g4)
