"""3D Delaunay triangulation.

Two backends produce the same ``Triangulation``:

* ``"bowyer_watson"`` -- incremental insertion with ghost tetrahedra and the
  adaptive predicates in :mod:`topoadv.predicates`.
* ``"qhull"`` -- scipy's Qhull wrapper, post-checked with the same predicates
  for flat tetrahedra and cospherical configurations.

Either way an exact degeneracy triggers one deterministic jitter of magnitude
``1e-9 * bbox_diagonal`` and a rebuild.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import predicates
from .errors import DegenerateInputError, InvalidArgumentError

INF = -1
JITTER_SCALE = 1e-9
COPLANAR_RTOL = 1e-7
# face opposite vertex i of a tet, listed so that (face..., i) keeps orientation
_OPPOSITE = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))


@dataclass
class Triangulation:
    """Delaunay complex of a 3D point set.

    ``simplices[d]`` holds the lexicographically sorted d-simplices as rows of
    sorted vertex indices. ``boundary[d]`` (d >= 1) maps each d-simplex to the
    row indices of its d+1 facets in ``simplices[d-1]``, facet ``j`` being the
    one that omits vertex ``j``.
    """
    points: np.ndarray
    coords: np.ndarray
    simplices: list
    boundary: list
    jittered: bool = False
    perturb_seed: int = 0
    backend: str = "qhull"
    meta: dict = field(default_factory=dict)
    _cofaces: Optional[list] = field(default=None, repr=False)

    @property
    def tetrahedra(self) -> np.ndarray:
        return self.simplices[3]

    def counts(self) -> tuple:
        return tuple(len(s) for s in self.simplices)

    def cofaces(self, dim: int) -> list:
        """For every dim-simplex, the indices of its (dim+1)-cofaces."""
        if self._cofaces is None:
            self._cofaces = [None] * 4
        if self._cofaces[dim] is None:
            out = [[] for _ in range(len(self.simplices[dim]))]
            if dim < 3:
                for j, row in enumerate(self.boundary[dim + 1]):
                    for f in row:
                        out[f].append(j)
            self._cofaces[dim] = [np.array(c, dtype=np.int64) for c in out]
        return self._cofaces[dim]


def simplices_by_dim(tri: Triangulation, dim: int):
    """(simplices, coface index lists) for ``dim`` in 0..3."""
    if dim not in (0, 1, 2, 3):
        raise InvalidArgumentError(f"dim must be 0..3, got {dim}")
    return tri.simplices[dim], tri.cofaces(dim)


def _unique_rows(rows: np.ndarray, base: int):
    """Lexicographically sorted unique rows and the inverse map.

    Rows of sorted vertex indices are packed into one integer key when that
    fits in int64, which is much faster than ``np.unique(axis=0)``.
    """
    width = rows.shape[1]
    base = max(int(base), 1)
    if rows.size and base ** width < 2 ** 62:
        key = np.zeros(rows.shape[0], dtype=np.int64)
        for j in range(width):
            key = key * base + rows[:, j]
        _, first, inv = np.unique(key, return_index=True, return_inverse=True)
        return rows[first], inv.reshape(-1)
    uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    return uniq, inv.reshape(-1)


def complex_from_tetrahedra(tets: np.ndarray, n_points: int):
    """Deduplicated simplices of every dimension plus facet incidence."""
    tets = np.sort(np.asarray(tets, dtype=np.int64).reshape(-1, 4), axis=1)
    tets = _unique_rows(tets, n_points)[0]
    simplices = [None, None, None, tets]
    boundary = [None, None, None, None]
    cur = tets
    for d in (3, 2, 1):
        # facet j drops vertex j
        cols = [np.delete(np.arange(d + 1), j) for j in range(d + 1)]
        facets = np.concatenate([cur[:, c] for c in cols], axis=0)
        uniq, inv = _unique_rows(facets, n_points)
        boundary[d] = inv.reshape(d + 1, -1).T.copy()
        simplices[d - 1] = uniq
        cur = uniq
    simplices[0] = np.arange(n_points, dtype=np.int64).reshape(-1, 1)
    return simplices, boundary


class _BowyerWatson:
    def __init__(self, pts: np.ndarray):
        self.pts = pts
        self.plist = [tuple(map(float, p)) for p in pts]
        self.tets = {}
        self.faces = {}
        self.next_id = 0
        self.last = None
        self.degenerate = False

    def _key(self, tet, i):
        return tuple(sorted(tet[j] for j in range(4) if j != i))

    def _add(self, tet):
        tid = self.next_id
        self.next_id += 1
        self.tets[tid] = tet
        for i in range(4):
            self.faces.setdefault(self._key(tet, i), []).append(tid)
        if INF not in tet:
            self.last = tid
        return tid

    def _remove(self, tid):
        tet = self.tets.pop(tid)
        for i in range(4):
            k = self._key(tet, i)
            lst = self.faces[k]
            lst.remove(tid)
            if not lst:
                del self.faces[k]

    def _neighbor(self, tid, i):
        k = self._key(self.tets[tid], i)
        for other in self.faces.get(k, ()):
            if other != tid:
                return other
        return None

    def _orient_tet(self, tet, sub_index, p):
        q = [self.plist[v] for v in tet]
        q[sub_index] = p
        return predicates.orient(*q)

    def _conflict(self, tid, p):
        tet = self.tets[tid]
        if INF in tet:
            i = tet.index(INF)
            s = self._orient_tet(tet, i, p)
            if s > 0:
                return True
            if s < 0:
                return False
            solid = self._neighbor(tid, i)
            return self._conflict(solid, p)
        s = predicates.insphere(*(self.plist[v] for v in tet), p)
        if s == 0:
            self.degenerate = True
        return s > 0

    def start(self, i0, i1, i2, i3):
        tet = (i0, i1, i2, i3)
        if predicates.orient(*(self.plist[v] for v in tet)) < 0:
            tet = (i0, i1, i3, i2)
        self._add(tet)
        for i in range(4):
            g = list(tet)
            g[i] = INF
            a, b = [j for j in range(4) if j != i][:2]
            g[a], g[b] = g[b], g[a]
            self._add(tuple(g))

    def locate(self, p):
        tid = self.last
        visited = 0
        rot = 0
        while True:
            tet = self.tets[tid]
            if INF in tet:
                return tid
            moved = False
            for s in range(4):
                i = (s + rot) % 4
                if self._orient_tet(tet, i, p) < 0:
                    tid = self._neighbor(tid, i)
                    moved = True
                    break
            rot += 1
            if not moved:
                return tid
            visited += 1
            if visited > 4 * len(self.tets) + 16:
                for t in self.tets:
                    if self._conflict(t, p):
                        return t
                raise DegenerateInputError("point location failed")

    def insert(self, v):
        p = self.plist[v]
        seed = self.locate(p)
        if not self._conflict(seed, p):
            # p on the boundary of a flat configuration; scan for any conflict
            for t in self.tets:
                if self._conflict(t, p):
                    seed = t
                    break
            else:
                self.degenerate = True
                return
        cavity = {seed}
        stack = [seed]
        boundary = []
        checked = {}
        while stack:
            t = stack.pop()
            for i in range(4):
                nb = self._neighbor(t, i)
                if nb in cavity:
                    continue
                c = checked.get(nb)
                if c is None:
                    c = self._conflict(nb, p)
                    checked[nb] = c
                if c:
                    cavity.add(nb)
                    stack.append(nb)
                else:
                    boundary.append((t, i))
        new = []
        for t, i in boundary:
            tet = list(self.tets[t])
            tet[i] = v
            new.append(tuple(tet))
        for t in cavity:
            self._remove(t)
        for tet in new:
            if INF not in tet and predicates.orient(*(self.plist[u] for u in tet)) <= 0:
                self.degenerate = True
            self._add(tet)

    def solid(self):
        return np.array([t for t in self.tets.values() if INF not in t], dtype=np.int64).reshape(-1, 4)


def _initial_simplex(plist, order):
    first = order[0]
    rest = list(order[1:])
    p0 = plist[first]
    i1 = next((i for i in rest if plist[i] != p0), None)
    if i1 is None:
        return None
    p1 = plist[i1]
    d01 = np.subtract(p1, p0)

    def collinear(i):
        return not np.any(np.cross(d01, np.subtract(plist[i], p0)))

    i2 = next((i for i in rest if i != i1 and not collinear(i)), None)
    if i2 is None:
        return None
    i3 = next((i for i in rest if i not in (i1, i2)
               and predicates.orient(p0, p1, plist[i2], plist[i]) != 0), None)
    if i3 is None:
        return None
    return first, i1, i2, i3


def _bowyer_watson(coords: np.ndarray, order: np.ndarray):
    bw = _BowyerWatson(coords)
    init = _initial_simplex(bw.plist, order)
    if init is None:
        raise DegenerateInputError("all points are coplanar")
    bw.start(*init)
    seen = set(bw.plist[i] for i in init)
    for v in order:
        v = int(v)
        if v in init:
            continue
        if bw.plist[v] in seen:
            bw.degenerate = True
            continue
        seen.add(bw.plist[v])
        bw.insert(v)
    return bw.solid(), bw.degenerate


def _qhull(coords: np.ndarray):
    from scipy.spatial import Delaunay, QhullError
    try:
        dt = Delaunay(coords, qhull_options="Qbb Qc Qz Q12 Qt")
    except QhullError as exc:
        raise DegenerateInputError(f"qhull failed: {exc}".splitlines()[0]) from exc
    tets = np.asarray(dt.simplices, dtype=np.int64)
    degenerate = len(dt.coplanar) > 0
    if len(tets) == 0:
        return tets, True
    o = predicates.orient_many(*(coords[tets[:, j]] for j in range(4)))
    if np.any(o == 0):
        degenerate = True
    neighbors = np.asarray(dt.neighbors)
    t_idx, f_idx = np.nonzero(neighbors >= 0)
    keep = t_idx < neighbors[t_idx, f_idx]
    t_idx, f_idx = t_idx[keep], f_idx[keep]
    if len(t_idx) and not degenerate:
        nb = neighbors[t_idx, f_idx]
        # vertex of the neighbor not shared with this tet
        nb_verts = tets[nb]
        own = tets[t_idx]
        mask = ~(nb_verts[:, :, None] == own[:, None, :]).any(axis=2)
        opp = nb_verts[mask]
        flip = o[t_idx] < 0
        a, b, c, d = (coords[own[:, j]] for j in range(4))
        a2 = np.where(flip[:, None], b, a)
        b2 = np.where(flip[:, None], a, b)
        s = predicates.insphere_many(a2, b2, c, d, coords[opp])
        if np.any(s == 0):
            degenerate = True
    return tets, degenerate


def delaunay(points, perturb_seed: int = 0, backend: str = "qhull") -> Triangulation:
    """Delaunay triangulation of ``points`` (N >= 4, not all coplanar)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidArgumentError(f"points must be N x 3, got {pts.shape}")
    n = pts.shape[0]
    if n < 4:
        raise DegenerateInputError(f"need at least 4 points, got {n}")
    if backend not in ("qhull", "bowyer_watson"):
        raise InvalidArgumentError(f"unknown backend {backend!r}")
    # jitter only repairs local degeneracies; a globally flat cloud would turn
    # into slivers of thickness ~1e-9, so reject it outright
    sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if sv[0] == 0 or sv[2] <= COPLANAR_RTOL * sv[0]:
        raise DegenerateInputError("all points are coplanar (or collinear)")

    rng = np.random.default_rng(perturb_seed)
    order = rng.permutation(n)
    jittered = False
    coords = pts

    def build(c):
        if backend == "qhull":
            return _qhull(c)
        return _bowyer_watson(c, order)

    try:
        tets, degenerate = build(coords)
    except DegenerateInputError:
        tets, degenerate = None, True
    if degenerate:
        diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
        jitter = rng.uniform(-1.0, 1.0, size=pts.shape) * (JITTER_SCALE * diag)
        coords = pts + jitter
        jittered = True
        tets, degenerate = build(coords)
        if len(tets) == 0:
            raise DegenerateInputError("points are coplanar even after jitter")
        if degenerate:
            o = predicates.orient_many(*(coords[tets[:, j]] for j in range(4)))
            if np.any(o == 0):
                raise DegenerateInputError("flat tetrahedra remain after jitter")
    simplices, boundary = complex_from_tetrahedra(tets, n)
    return Triangulation(points=pts, coords=coords, simplices=simplices, boundary=boundary,
                         jittered=jittered, perturb_seed=perturb_seed, backend=backend,
                         meta={"jitter_scale": JITTER_SCALE if jittered else 0.0})
