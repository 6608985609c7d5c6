"""Hand-derived gradients: circumradii, diagram coordinates, eigen-features.

Persistence values are piecewise smooth in the points. Everything here
differentiates inside the current combinatorial regime (fixed triangulation,
pairing and defining simplices); callers recompute the regime each step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSimplexError, EigengapError
from .persistence import PersistenceDiagram

EIGENGAP_MIN = 1e-8
_DEGEN_RTOL = 1e-12


def _circum_solve(pts: np.ndarray):
    """Batched circumcenter barycentrics for simplices (M, k, 3).

    With E the edge vectors from vertex 0, the offset c - p0 = E^T lam where
    (E E^T) lam = |e_i|^2 / 2. Returns (center, radius, beta, degenerate mask).
    """
    e = pts[:, 1:, :] - pts[:, :1, :]
    gram = np.einsum("mia,mja->mij", e, e)
    rhs = 0.5 * np.einsum("mii->mi", gram)
    k = e.shape[1]
    det = np.linalg.det(gram)
    scale = np.prod(np.einsum("mii->mi", gram), axis=1)
    degen = np.abs(det) <= _DEGEN_RTOL * np.maximum(scale, 1e-300)
    gsafe = gram.copy()
    gsafe[degen] = np.eye(k)
    lam = np.linalg.solve(gsafe, rhs[:, :, None])[:, :, 0]
    off = np.einsum("mi,mia->ma", lam, e)
    beta = np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)
    return pts[:, 0, :] + off, np.linalg.norm(off, axis=1), beta, degen


def circumradius_grad(simplex_points):
    """Circumradius of a 2-4 vertex simplex and dr/d(vertex), shape (k, 3).

    Differentiating |p_j - c|^2 = r^2 and summing with the barycentric weights
    beta_j of the circumcenter (sum beta_j (p_j - c) = 0) eliminates dc, giving
    dr/dp_j = beta_j (p_j - c) / r.
    """
    pts = np.asarray(simplex_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or not 2 <= pts.shape[0] <= 4:
        raise ValueError("expected 2-4 points in R^3")
    c, r, beta, degen = _circum_solve(pts[None])
    if degen[0] or r[0] == 0:
        raise DegenerateSimplexError("simplex vertices are affinely dependent")
    grad = beta[0][:, None] * (pts - c[0]) / r[0]
    return float(r[0]), grad


def circumradius_grads_batched(points: np.ndarray, simplices: np.ndarray):
    """Radii and per-vertex gradients for rows of vertex indices; degenerate rows get 0."""
    pts = points[simplices]
    c, r, beta, degen = _circum_solve(pts)
    bad = degen | (r <= 0)
    rs = np.where(bad, 1.0, r)
    grad = beta[:, :, None] * (pts - c[:, None, :]) / rs[:, None, None]
    grad[bad] = 0.0
    return r, grad, bad


@dataclass(frozen=True)
class CriticalMap:
    """Per diagram pair, vertex tuples whose circumradii equal birth / death.

    Rows are padded with -1; a row of all -1 means the value is constant (a
    vertex birth at 0 or an essential death).
    """
    birth_def: np.ndarray
    death_def: np.ndarray


def critical_map(dgm: PersistenceDiagram) -> CriticalMap:
    f = dgm.filtration
    birth = f.def_verts[dgm.birth_pos]
    death = np.full_like(birth, -1)
    fin = dgm.death_pos >= 0
    death[fin] = f.def_verts[dgm.death_pos[fin]]
    return CriticalMap(birth_def=birth, death_def=death)


def _scatter_simplex_grads(points, defs, weights, out):
    for k in (2, 3, 4):
        sel = (defs >= 0).sum(axis=1) == k
        sel &= weights != 0
        if not np.any(sel):
            continue
        simp = defs[sel, :k]
        _, g, _ = circumradius_grads_batched(points, simp)
        g *= weights[sel][:, None, None]
        np.add.at(out, simp.reshape(-1), g.reshape(-1, 3))


def diagram_vjp(dgm: PersistenceDiagram, crit: CriticalMap, upstream, points) -> np.ndarray:
    """Pull per-pair (dL/dbirth, dL/ddeath) back to an (N, 3) point gradient."""
    pts = np.asarray(points, dtype=np.float64)
    up = np.asarray(upstream, dtype=np.float64).reshape(-1, 2)
    out = np.zeros_like(pts)
    if len(up) == 0:
        return out
    _scatter_simplex_grads(pts, crit.birth_def, up[:, 0], out)
    _scatter_simplex_grads(pts, crit.death_def, up[:, 1], out)
    return out


@dataclass(frozen=True)
class EigenDerivatives:
    """dlam[j] is the 3x3 gradient of eigenvalue j w.r.t. the matrix;
    dvec[j][a, b, c] = d v_j[a] / d C[b, c] (None where not requested)."""
    dlam: np.ndarray
    dvec: list


def eigen_grads(cov, which: str = "smallest"):
    """Eigenpairs of a symmetric 3x3 matrix with first-order derivatives.

    Eigenvector derivatives use the perturbation sum
    sum_{m != j} (v_m^T dC v_j) / (lam_j - lam_m) v_m and raise
    ``EigengapError`` if a required gap is below ``EIGENGAP_MIN``.
    """
    c = np.asarray(cov, dtype=np.float64)
    if which not in ("smallest", "all"):
        raise ValueError(f"which must be 'smallest' or 'all', got {which!r}")
    evals, evecs = np.linalg.eigh(0.5 * (c + c.T))
    dlam = np.einsum("aj,bj->jab", evecs, evecs)
    wanted = [0] if which == "smallest" else [0, 1, 2]
    dvec = [None, None, None]
    for j in wanted:
        t = np.zeros((3, 3, 3))
        for m in range(3):
            if m == j:
                continue
            gap = evals[j] - evals[m]
            if abs(gap) < EIGENGAP_MIN:
                raise EigengapError(f"eigengap {abs(gap):.3g} between {j} and {m}")
            vm, vj = evecs[:, m], evecs[:, j]
            t += np.einsum("a,b,c->abc", vm, vm, vj) / gap
        dvec[j] = t
    return evals, evecs, EigenDerivatives(dlam=dlam, dvec=dvec)


def smallest_eig_batched(cov: np.ndarray):
    """Smallest eigenpair of stacked symmetric matrices, plus the gap to the next."""
    evals, evecs = np.linalg.eigh(cov)
    return evals, evecs, evals[:, 1] - evals[:, 0]


def smallest_evec_vjp(evals, evecs, g_vec, gap_ok):
    """Matrix gradient G (symmetrised) such that <G, dC> = <g_vec, dv_0>."""
    out = np.zeros((evals.shape[0], 3, 3))
    v0 = evecs[:, :, 0]
    for m in (1, 2):
        vm = evecs[:, :, m]
        gap = evals[:, 0] - evals[:, m]
        gap = np.where(gap_ok, gap, 1.0)
        coef = np.einsum("na,na->n", vm, g_vec) / gap
        coef = np.where(gap_ok, coef, 0.0)
        outer = np.einsum("na,nb->nab", vm, v0)
        out += coef[:, None, None] * outer
    return 0.5 * (out + np.transpose(out, (0, 2, 1)))


def covariance_vjp(patch_points: np.ndarray, g_cov: np.ndarray) -> np.ndarray:
    """Pull a symmetric gradient w.r.t. C = (1/M) sum (x - mean)(x - mean)^T back
    to the M patch points: dL/dx_j = (2/M) G (x_j - mean)."""
    centered = patch_points - patch_points.mean(axis=1, keepdims=True)
    m = patch_points.shape[1]
    return (2.0 / m) * np.einsum("nab,njb->nja", g_cov, centered)


def directional_fd(f, x, u, h: float = 1e-5) -> float:
    """Central difference of scalar ``f`` along ``u``."""
    return (f(x + h * u) - f(x - h * u)) / (2.0 * h)


def fd_error(fd: float, analytic: float, floor: float = 1.0) -> float:
    """|fd - analytic| / max(floor, |analytic|)."""
    return abs(fd - analytic) / max(floor, abs(analytic))
