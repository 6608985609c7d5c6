"""Independent reference implementations used only by the tests.

Nothing here imports the package's Delaunay, filtration or reduction code.
"""
import itertools
import math
from fractions import Fraction

import numpy as np


def circumball(pts):
    """Center and radius of the smallest sphere through ``pts`` (center in their
    affine hull). Returns None for affinely dependent input."""
    p0 = pts[0]
    A = pts[1:] - p0
    if len(A) == 0:
        return p0, 0.0
    G = A @ A.T
    rhs = 0.5 * np.sum(A * A, axis=1)
    if abs(np.linalg.det(G)) < 1e-14 * max(1.0, np.abs(G).max()) ** len(A):
        return None
    lam = np.linalg.solve(G, rhs)
    c = p0 + lam @ A
    return c, float(np.linalg.norm(c - p0))


def _sub(a, b):
    return [x - y for x, y in zip(a, b)]


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def _cross(a, b):
    return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]


def exact_circumradius(pts):
    """Circumradius in rational arithmetic (rounded once at the final sqrt)."""
    q = [[Fraction(float(x)) for x in p] for p in pts]
    if len(q) == 2:
        d = _sub(q[1], q[0])
        return math.sqrt(_dot(d, d)) / 2
    if len(q) == 3:
        u, w = _sub(q[1], q[0]), _sub(q[2], q[0])
        n = _cross(u, w)
        nn = _dot(n, n)
        num = [_dot(u, u) * x + _dot(w, w) * y for x, y in zip(_cross(w, n), _cross(n, u))]
        off = [x / (2 * nn) for x in num]
        return math.sqrt(_dot(off, off))
    b, c, d = (_sub(q[i], q[0]) for i in (1, 2, 3))
    det = _dot(b, _cross(c, d))
    num = [_dot(b, b) * x + _dot(c, c) * y + _dot(d, d) * z
           for x, y, z in zip(_cross(c, d), _cross(d, b), _cross(b, c))]
    off = [x / (2 * det) for x in num]
    return math.sqrt(_dot(off, off))


def _batched_centers(pts, combos):
    """Float circumcenters/radii for an (M, k) index array; NaN where flat."""
    P = pts[combos]
    p0 = P[:, 0]
    A = P[:, 1:] - p0[:, None, :]
    G = np.einsum("mia,mja->mij", A, A)
    rhs = 0.5 * np.einsum("mia,mia->mi", A, A)
    det = np.linalg.det(G)
    scale = np.prod(np.einsum("mii->mi", G), axis=1)
    flat = np.abs(det) <= 1e-20 * scale
    G[flat] = np.eye(G.shape[1])
    lam = np.linalg.solve(G, rhs[:, :, None])[:, :, 0]
    c = p0 + np.einsum("mi,mia->ma", lam, A)
    r = np.linalg.norm(c - p0, axis=1)
    r[flat] = np.nan
    return c, r


def brute_alpha_values(points, rtol=1e-9):
    """{vertex tuple: alpha value} by minimising over empty circumballs of
    every superset of at most four points.

    Emptiness is screened in floating point; radii of the surviving balls are
    computed in rational arithmetic.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    values = {(i,): 0.0 for i in range(n)}
    for size in (2, 3, 4):
        combos = np.array(list(itertools.combinations(range(n), size)), dtype=np.int64)
        if len(combos) == 0:
            continue
        c, r = _batched_centers(pts, combos)
        d2 = np.sum((pts[None, :, :] - c[:, None, :]) ** 2, axis=2)
        empty = ~np.isnan(r) & ~np.any(d2 < (r * r * (1 - rtol))[:, None], axis=1)
        for S in combos[empty]:
            S = tuple(int(i) for i in S)
            rad = exact_circumradius(pts[list(S)])
            for m in range(2, size + 1):
                for sub in itertools.combinations(S, m):
                    if rad < values.get(sub, np.inf):
                        values[sub] = rad
    return values


def brute_persistence(values):
    """Dense Z/2 reduction without clearing. Returns (finite pairs, essential
    counts) where pairs are (dim, birth, death) with death > birth."""
    simplices = sorted(values, key=lambda s: (values[s], len(s), s))
    index = {s: i for i, s in enumerate(simplices)}
    m = len(simplices)
    D = np.zeros((m, m), dtype=bool)
    for j, s in enumerate(simplices):
        if len(s) > 1:
            for f in itertools.combinations(s, len(s) - 1):
                D[index[f], j] = True
    low = np.full(m, -1)
    owner = {}
    for j in range(m):
        while True:
            rows = np.flatnonzero(D[:, j])
            if len(rows) == 0:
                break
            l = rows[-1]
            if l in owner:
                D[:, j] ^= D[:, owner[l]]
            else:
                owner[l] = j
                low[j] = l
                break
    pairs = []
    paired = set()
    for l, j in owner.items():
        paired.add(l)
        paired.add(j)
        b, d = values[simplices[l]], values[simplices[j]]
        if d > b:
            pairs.append((len(simplices[l]) - 1, b, d))
    essential = {}
    for i, s in enumerate(simplices):
        if i not in paired:
            essential[len(s) - 1] = essential.get(len(s) - 1, 0) + 1
    return sorted(pairs), essential


def brute_chamfer(P, Q):
    a = sum(min(np.linalg.norm(x - y) for y in Q) for x in P)
    b = sum(min(np.linalg.norm(y - x) for x in P) for y in Q)
    return (a + b) / len(P)


def brute_hausdorff(P, Q):
    ab = max(min(np.linalg.norm(x - y) for y in Q) for x in P)
    ba = max(min(np.linalg.norm(y - x) for x in P) for y in Q)
    return max(ab, ba)


def brute_empty_sphere_tets(points, rtol=1e-9):
    """All 4-subsets whose circumsphere has no point strictly inside."""
    pts = np.asarray(points, dtype=np.float64)
    out = []
    for S in itertools.combinations(range(len(pts)), 4):
        cb = circumball(pts[list(S)])
        if cb is None:
            continue
        c, r = cb
        d2 = np.sum((pts - c) ** 2, axis=1)
        if not np.any(d2 < r * r * (1 - rtol)):
            out.append(S)
    return sorted(out)
