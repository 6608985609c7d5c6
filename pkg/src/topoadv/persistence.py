"""Alpha filtration, Z/2 persistence and diagram summaries.

Filtration values are radii (not squared). Each simplex also records the
*defining* simplex whose circumradius realizes its value: itself when it is
Gabriel, otherwise (recursively) that of the lowest-value coface it inherits
from. Gradients of diagram coordinates are routed through these.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .delaunay import Triangulation

# relative slack so that cospherical vertices count as "on" the ball, not inside
GABRIEL_RTOL = 1e-10
# relative volume below which a simplex is treated as flat in input coordinates
FLAT_RTOL = 1e-12
ZERO_LIFETIME_RTOL = 1e-12


def circumballs(coords: np.ndarray, simplices: np.ndarray):
    """Centers, radii and a flatness mask of the smallest circumballs.

    The ball is centred in the affine hull of the simplex, so it is the unique
    smallest ball whose boundary passes through every vertex.
    """
    k = simplices.shape[1]
    m = simplices.shape[0]
    if m == 0:
        return np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=bool)
    a = coords[simplices[:, 0]]
    if k == 1:
        return a.copy(), np.zeros(m), np.zeros(m, dtype=bool)
    if k == 2:
        b = coords[simplices[:, 1]]
        c = 0.5 * (a + b)
        return c, 0.5 * np.linalg.norm(b - a, axis=1), np.zeros(m, dtype=bool)
    if k == 3:
        u = coords[simplices[:, 1]] - a
        w = coords[simplices[:, 2]] - a
        n = np.cross(u, w)
        nn = np.einsum("ij,ij->i", n, n)
        uu = np.einsum("ij,ij->i", u, u)
        ww = np.einsum("ij,ij->i", w, w)
        flat = nn <= FLAT_RTOL * uu * ww
        safe = np.where(flat, 1.0, nn)
        off = (uu[:, None] * np.cross(w, n) + ww[:, None] * np.cross(n, u)) / (2.0 * safe[:, None])
        off[flat] = np.inf
        return a + off, np.linalg.norm(off, axis=1), flat
    e = coords[simplices[:, 1:]] - a[:, None, :]
    rhs = 0.5 * np.einsum("mij,mij->mi", e, e)
    det = np.linalg.det(e)
    scale = np.prod(np.linalg.norm(e, axis=2), axis=1)
    flat = np.abs(det) <= FLAT_RTOL * scale
    e_safe = e.copy()
    e_safe[flat] = np.eye(3)
    off = np.linalg.solve(e_safe, rhs[:, :, None])[:, :, 0]
    off[flat] = np.inf
    return a + off, np.linalg.norm(off, axis=1), flat


@dataclass
class Filtration:
    """Alpha-ordered simplices.

    Arrays are indexed by filtration position. ``verts`` is padded with -1.
    ``facets[i]`` holds the filtration positions of the facets of simplex i and
    ``def_verts[i]`` the vertex tuple whose circumradius equals ``values[i]``
    (all -1 for vertices); both padded with -1.
    """
    verts: np.ndarray
    dims: np.ndarray
    values: np.ndarray
    gabriel: np.ndarray
    facets: np.ndarray
    def_verts: np.ndarray
    n_points: int

    def __len__(self):
        return len(self.values)

    def vertex_tuple(self, i: int) -> tuple:
        return tuple(int(v) for v in self.verts[i, : self.dims[i] + 1])

    def defining(self, i: int) -> tuple:
        return tuple(int(v) for v in self.def_verts[i] if v >= 0)

    @property
    def simplices(self) -> list:
        return [(self.vertex_tuple(i), int(self.dims[i]), float(self.values[i]))
                for i in range(len(self))]


def _cocircular_tet_radius(coords, tet):
    """Radius of the common circle if the 4 (flat) points are cocircular, else None."""
    faces = np.array([[tet[j] for j in range(4) if j != i] for i in range(4)])
    c, r, flat = circumballs(coords, faces)
    good = ~flat
    if not np.any(good):
        return None
    rs = r[good]
    cs = c[good]
    if np.ptp(rs) <= 1e-9 * rs.max() and np.all(np.linalg.norm(cs - cs[0], axis=1) <= 1e-9 * rs.max()):
        j = int(np.flatnonzero(good)[0])
        return float(rs[0]), tuple(int(v) for v in faces[j])
    return None


def alpha_filtration(tri: Triangulation) -> Filtration:
    """Alpha filtration of a Delaunay triangulation, values in radius units."""
    pts = tri.points
    sims = tri.simplices
    n = len(sims[0])
    value = [np.zeros(n)] + [None] * 3
    gabriel = [np.ones(n, dtype=bool)] + [None] * 3
    # defining simplex per simplex, as (dim, index); vertices have none
    def_dim = [np.zeros(n, dtype=np.int64)] + [None] * 3
    def_idx = [np.arange(n)] + [None] * 3
    special = {}

    balls = [None] + [circumballs(pts, sims[d]) for d in (1, 2, 3)]

    def fallback(d, flat_mask, r):
        # flat in input coordinates: only possible on jittered triangulations
        r = r.copy()
        for i in np.flatnonzero(flat_mask):
            s = sims[d][i]
            got = _cocircular_tet_radius(pts, s) if d == 3 else None
            if got is not None:
                r[i] = got[0]
                special[(d, int(i))] = got[1]
            else:
                _, rj, _ = circumballs(tri.coords, s[None, :])
                r[i] = rj[0]
        return r

    _, r3, flat3 = balls[3]
    value[3] = fallback(3, flat3, r3)
    gabriel[3] = np.ones(len(r3), dtype=bool)
    def_dim[3] = np.full(len(r3), 3)
    def_idx[3] = np.arange(len(r3))

    for d in (2, 1):
        c, r, flat = balls[d]
        r = fallback(d, flat, r)
        m = len(r)
        bnd = tri.boundary[d + 1]
        cof = np.repeat(np.arange(bnd.shape[0]), d + 2)
        slot = np.tile(np.arange(d + 2), bnd.shape[0])
        face = bnd.reshape(-1)
        opp = sims[d + 1][cof, slot]
        dist2 = np.sum((pts[opp] - c[face]) ** 2, axis=1)
        inside = dist2 < (r[face] ** 2) * (1.0 - GABRIEL_RTOL)
        inside &= ~flat[face]
        attached = np.zeros(m, dtype=bool)
        attached[face[inside]] = True
        attached |= flat
        # lowest-value coface, ties -> lowest (lexicographic) coface index
        cv = value[d + 1][cof]
        order = np.lexsort((cof, cv, face))
        face_s = face[order]
        first = np.ones(len(face_s), dtype=bool)
        first[1:] = face_s[1:] != face_s[:-1]
        best_face = face_s[first]
        best_cof = cof[order][first]
        min_cof = np.full(m, np.inf)
        arg_cof = np.full(m, -1)
        min_cof[best_face] = value[d + 1][best_cof]
        arg_cof[best_face] = best_cof
        inherit = attached | (min_cof < r)
        inherit &= arg_cof >= 0
        value[d] = np.where(inherit, min_cof, r)
        gabriel[d] = ~attached
        def_dim[d] = np.where(inherit, def_dim[d + 1][np.maximum(arg_cof, 0)], d)
        def_idx[d] = np.where(inherit, def_idx[d + 1][np.maximum(arg_cof, 0)], np.arange(m))

    # global ordering by (value, dim, lexicographic vertices)
    counts = [len(sims[d]) for d in range(4)]
    total = sum(counts)
    verts = np.full((total, 4), -1, dtype=np.int64)
    dims = np.empty(total, dtype=np.int64)
    vals = np.empty(total)
    gab = np.empty(total, dtype=bool)
    offs = np.cumsum([0] + counts)
    for d in range(4):
        sl = slice(offs[d], offs[d + 1])
        verts[sl, : d + 1] = sims[d]
        dims[sl] = d
        vals[sl] = value[d]
        gab[sl] = gabriel[d]
    keys = [verts[:, j] for j in (3, 2, 1, 0)] + [dims, vals]
    order = np.lexsort(keys)
    pos = np.empty(total, dtype=np.int64)
    pos[order] = np.arange(total)

    facets = np.full((total, 4), -1, dtype=np.int64)
    def_verts = np.full((total, 4), -1, dtype=np.int64)
    for d in (1, 2, 3):
        own = pos[offs[d]:offs[d + 1]]
        facets[own, : d + 1] = pos[tri.boundary[d] + offs[d - 1]]
        for dd in (1, 2, 3):
            sel = def_dim[d] == dd
            if np.any(sel):
                def_verts[own[sel], : dd + 1] = sims[dd][def_idx[d][sel]]
    for (dd, di), tup in special.items():
        # cocircular flat tets: every simplex defined by that tet uses the face
        for d in (1, 2, 3):
            sel = (def_dim[d] == dd) & (def_idx[d] == di)
            rows = pos[offs[d]:offs[d + 1]][sel]
            def_verts[rows] = -1
            def_verts[rows, : len(tup)] = tup

    return Filtration(verts=verts[order], dims=dims[order], values=vals[order],
                      gabriel=gab[order], facets=facets, def_verts=def_verts,
                      n_points=n)


class Pair(NamedTuple):
    birth: float
    death: float
    dim: int
    birth_simplex: tuple
    death_simplex: Optional[tuple]

    @property
    def lifetime(self) -> float:
        return self.death - self.birth


@dataclass
class PersistenceDiagram:
    """Birth/death pairs in dims 0..2, with filtration positions of the
    creating and destroying simplices (-1 for an infinite death)."""
    dims: np.ndarray
    births: np.ndarray
    deaths: np.ndarray
    birth_pos: np.ndarray
    death_pos: np.ndarray
    filtration: Optional[Filtration] = None

    def __len__(self):
        return len(self.dims)

    @property
    def pairs(self) -> list:
        f = self.filtration
        out = []
        for i in range(len(self)):
            bs = f.vertex_tuple(int(self.birth_pos[i])) if f is not None else ()
            dp = int(self.death_pos[i])
            ds = f.vertex_tuple(dp) if (f is not None and dp >= 0) else None
            out.append(Pair(float(self.births[i]), float(self.deaths[i]), int(self.dims[i]), bs, ds))
        return out

    def finite_mask(self, dim: Optional[int] = None) -> np.ndarray:
        m = np.isfinite(self.deaths)
        if dim is not None:
            m &= self.dims == dim
        return m

    def lifetimes(self, dim: int) -> np.ndarray:
        m = self.finite_mask(dim)
        return self.deaths[m] - self.births[m]

    def subset(self, mask) -> "PersistenceDiagram":
        return PersistenceDiagram(self.dims[mask], self.births[mask], self.deaths[mask],
                                  self.birth_pos[mask], self.death_pos[mask], self.filtration)


def reduce_boundary(filt: Filtration):
    """Column reduction over Z/2 with clearing, top dimension first.

    Returns (pairs as (birth_pos, death_pos) list, essential positions).
    """
    total = len(filt)
    dims = filt.dims
    low_owner = {}
    cleared = np.zeros(total, dtype=bool)
    paired = np.zeros(total, dtype=bool)
    reduced = {}
    pairs = []
    by_dim = [np.flatnonzero(dims == d) for d in range(4)]
    for d in (3, 2, 1):
        cols = by_dim[d]
        for j, row in zip(cols.tolist(), filt.facets[cols, : d + 1].tolist()):
            if cleared[j]:
                continue
            col = 0
            for f in row:
                col ^= 1 << f
            while col:
                low = col.bit_length() - 1
                owner = low_owner.get(low)
                if owner is None:
                    break
                col ^= reduced[owner]
            if col:
                low = col.bit_length() - 1
                low_owner[low] = j
                reduced[j] = col
                cleared[low] = True
                paired[low] = True
                paired[j] = True
                pairs.append((low, j))
    essential = [i for i in range(total) if not paired[i] and dims[i] <= 2]
    return pairs, essential


def compute_persistence(filt: Filtration, keep_zero: bool = False) -> PersistenceDiagram:
    pairs, essential = reduce_boundary(filt)
    vals = filt.values
    bp = np.array([p[0] for p in pairs] + essential, dtype=np.int64)
    dp = np.array([p[1] for p in pairs] + [-1] * len(essential), dtype=np.int64)
    births = vals[bp] if len(bp) else np.zeros(0)
    deaths = np.where(dp >= 0, vals[np.maximum(dp, 0)], np.inf) if len(dp) else np.zeros(0)
    dims = filt.dims[bp] if len(bp) else np.zeros(0, dtype=np.int64)
    keep = dims <= 2
    if not keep_zero:
        life = deaths - births
        keep &= ~(np.isfinite(deaths) & (life <= ZERO_LIFETIME_RTOL * np.maximum(1.0, np.abs(deaths))))
    dgm = PersistenceDiagram(dims[keep], births[keep], deaths[keep], bp[keep], dp[keep], filt)
    return canonical_order(dgm)


def canonical_order(dgm: PersistenceDiagram) -> PersistenceDiagram:
    """Sort pairs by (dim, birth, death, birth position) for deterministic sums."""
    order = np.lexsort((dgm.birth_pos, dgm.deaths, dgm.births, dgm.dims))
    return dgm.subset(order)


def diagram(points, perturb_seed: int = 0, backend: str = "qhull") -> PersistenceDiagram:
    from .delaunay import delaunay
    return compute_persistence(alpha_filtration(delaunay(points, perturb_seed, backend)))


def persistence_entropy(dgm: PersistenceDiagram, dim: int) -> float:
    """Shannon entropy (natural log) of normalised finite lifetimes in ``dim``."""
    life = dgm.lifetimes(dim) if isinstance(dgm, PersistenceDiagram) else np.asarray(dgm, float)
    return entropy_of_lifetimes(life)


def entropy_of_lifetimes(life) -> float:
    life = np.asarray(life, dtype=np.float64)
    life = life[life > 0]
    if len(life) < 2:
        return 0.0
    p = life / life.sum()
    return float(-np.sum(p * np.log(p)))


def top_k_indices(dgm: PersistenceDiagram, dim: int, K: int) -> np.ndarray:
    """Pair indices of the K longest finite bars in ``dim``.

    Ties: birth ascending, then lexicographic birth simplex.
    """
    idx = np.flatnonzero(dgm.finite_mask(dim))
    if len(idx) == 0:
        return idx
    life = dgm.deaths[idx] - dgm.births[idx]
    if dgm.filtration is not None:
        vt = dgm.filtration.verts[dgm.birth_pos[idx]]
        lex = [vt[:, j] for j in (3, 2, 1, 0)]
    else:
        lex = [dgm.birth_pos[idx]]
    order = np.lexsort(lex + [dgm.births[idx], -life])
    return idx[order[:K]]


def top_k_lifetimes(dgm: PersistenceDiagram, dim: int, K: int) -> list:
    if K < 1:
        raise ValueError("K must be positive")
    pairs = dgm.pairs
    out = []
    for i in top_k_indices(dgm, dim, K):
        p = pairs[i]
        out.append((p.lifetime, p.birth_simplex, p.death_simplex))
    return out


def write_diagram(dgm: PersistenceDiagram, fh) -> None:
    """``dim birth death`` lines, 9 significant digits, ``inf`` for essential bars."""
    for d, b, e in zip(dgm.dims, dgm.births, dgm.deaths):
        death = "inf" if not np.isfinite(e) else f"{e:.9g}"
        fh.write(f"{int(d)} {b:.9g} {death}\n")
