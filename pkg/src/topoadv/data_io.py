"""Synthetic shapes, mesh ingestion (OFF / ASCII PLY), XYZ clouds, manifests."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError, ParseError
from .pointcloud import PointCloud

FAMILIES = ("sphere", "torus", "double_torus", "cylinder", "box", "two_spheres")

# default geometric parameters per family; per-sample jitter is applied on top
DEFAULT_PARAMS = {
    "sphere": {"radius": 1.0},
    "torus": {"major": 1.0, "minor": 0.4},
    "double_torus": {"major": 1.0, "minor": 0.35, "offset": 1.6},
    "cylinder": {"radius": 0.6, "height": 1.6},
    "box": {"extents": (1.6, 1.1, 0.7)},
    "two_spheres": {"radius": 0.5, "separation": 1.6},
}


@dataclass
class ShapeSpec:
    family: str
    n_points: int = 256
    noise_sigma: float = 0.0
    seed: int = 0
    params: dict = field(default_factory=dict)
    random_rotation: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgumentError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.n_points < 64:
            raise InvalidArgumentError("n_points must be >= 64")
        if self.noise_sigma < 0:
            raise InvalidArgumentError("noise_sigma must be >= 0")
        merged = dict(DEFAULT_PARAMS[self.family])
        merged.update(self.params)
        for key, val in merged.items():
            vals = val if isinstance(val, (tuple, list)) else (val,)
            if any(v <= 0 for v in vals):
                raise InvalidArgumentError(f"parameter {key} must be positive")
        self.params = merged


def normalize_unit_sphere(points: np.ndarray, center=None) -> np.ndarray:
    """Translate ``center`` (default: centroid) to the origin and scale to max norm 1."""
    pts = np.asarray(points, dtype=np.float64)
    c = pts.mean(axis=0) if center is None else np.asarray(center, dtype=np.float64)
    pts = pts - c
    scale = np.linalg.norm(pts, axis=1).max()
    return pts / scale if scale > 0 else pts


def _sphere(rng, n, radius):
    v = rng.normal(size=(n, 3))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def _torus(rng, n, major, minor):
    """Area-uniform torus samples via rejection on the tube angle."""
    out = []
    while sum(len(o) for o in out) < n:
        m = 2 * n
        theta = rng.uniform(0, 2 * np.pi, m)
        phi = rng.uniform(0, 2 * np.pi, m)
        keep = rng.uniform(0, 1, m) < (major + minor * np.cos(theta)) / (major + minor)
        theta, phi = theta[keep], phi[keep]
        ring = major + minor * np.cos(theta)
        out.append(np.column_stack([ring * np.cos(phi), ring * np.sin(phi), minor * np.sin(theta)]))
    return np.concatenate(out)[:n]


def _inside_torus(p, center_x, major, minor):
    q = p - np.array([center_x, 0.0, 0.0])
    ring = np.sqrt(q[:, 0] ** 2 + q[:, 1] ** 2) - major
    return ring ** 2 + q[:, 2] ** 2 < minor ** 2


def _double_torus(rng, n, major, minor, offset):
    """Two fused tori; surface parts inside the other solid are rejected."""
    half = offset / 2.0
    out = []
    while sum(len(o) for o in out) < n:
        a = _torus(rng, n, major, minor) + [-half, 0, 0]
        b = _torus(rng, n, major, minor) + [half, 0, 0]
        a = a[~_inside_torus(a, half, major, minor)]
        b = b[~_inside_torus(b, -half, major, minor)]
        both = np.concatenate([a, b])
        out.append(both[rng.permutation(len(both))])
    return np.concatenate(out)[:n]


def _cylinder(rng, n, radius, height):
    """Open tube (no caps)."""
    phi = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(-height / 2, height / 2, n)
    return np.column_stack([radius * np.cos(phi), radius * np.sin(phi), z])


def _box(rng, n, extents):
    ex = np.asarray(extents, dtype=np.float64)
    areas = np.array([ex[1] * ex[2], ex[0] * ex[2], ex[0] * ex[1]])
    face = rng.choice(3, size=n, p=areas / areas.sum())
    pts = (rng.uniform(-0.5, 0.5, (n, 3))) * ex
    side = np.where(rng.uniform(size=n) < 0.5, -0.5, 0.5)
    pts[np.arange(n), face] = side * ex[face]
    return pts


def _two_spheres(rng, n, radius, separation):
    pts = _sphere(rng, n, radius)
    which = rng.uniform(size=n) < 0.5
    pts[:, 0] += np.where(which, -separation / 2, separation / 2)
    return pts


def _random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def generate_shape(spec: ShapeSpec) -> PointCloud:
    """Area-uniform surface samples + Gaussian noise, scaled to the unit sphere.

    Shapes are built around the origin, so normalisation only rescales.
    """
    rng = np.random.default_rng(spec.seed)
    p = spec.params
    n = spec.n_points
    if spec.family == "sphere":
        pts = _sphere(rng, n, p["radius"])
    elif spec.family == "torus":
        pts = _torus(rng, n, p["major"], p["minor"])
    elif spec.family == "double_torus":
        pts = _double_torus(rng, n, p["major"], p["minor"], p["offset"])
    elif spec.family == "cylinder":
        pts = _cylinder(rng, n, p["radius"], p["height"])
    elif spec.family == "box":
        pts = _box(rng, n, p["extents"])
    else:
        pts = _two_spheres(rng, n, p["radius"], p["separation"])
    if spec.noise_sigma > 0:
        pts = pts + rng.normal(scale=spec.noise_sigma, size=pts.shape)
    if spec.random_rotation:
        pts = pts @ _random_rotation(rng).T
    return PointCloud(normalize_unit_sphere(pts, center=np.zeros(3)))


# -- meshes -------------------------------------------------------------------

def _tokens(path):
    """Yield (line number, tokens) for non-empty, non-comment lines."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if body:
                yield lineno, body.split()


def _read_faces(it, n_faces, n_verts, path):
    faces = []
    last = None
    for _ in range(n_faces):
        try:
            lineno, toks = next(it)
        except StopIteration:
            raise ParseError(f"expected {n_faces} faces, file ended", path, last) from None
        last = lineno
        try:
            k = int(toks[0])
            idx = [int(t) for t in toks[1:1 + k]]
        except ValueError:
            raise ParseError("non-integer face entry", path, lineno) from None
        if len(idx) != k or k < 3:
            raise ParseError(f"face declares {k} vertices but lists {len(idx)}", path, lineno)
        if any(i < 0 or i >= n_verts for i in idx):
            raise ParseError("face index out of range", path, lineno)
        for j in range(1, k - 1):
            faces.append((idx[0], idx[j], idx[j + 1]))
    return np.array(faces, dtype=np.int64).reshape(-1, 3)


def _read_vertices(it, n_verts, path, ncols=3):
    verts = []
    last = None
    for _ in range(n_verts):
        try:
            lineno, toks = next(it)
        except StopIteration:
            raise ParseError(f"expected {n_verts} vertices, file ended", path, last) from None
        last = lineno
        if len(toks) < ncols:
            raise ParseError("vertex line has too few coordinates", path, lineno)
        try:
            xyz = [float(t) for t in toks[:3]]
        except ValueError:
            raise ParseError("non-numeric vertex coordinate", path, lineno) from None
        if not all(math.isfinite(x) for x in xyz):
            raise ParseError("non-finite vertex coordinate", path, lineno)
        verts.append(xyz)
    return np.array(verts, dtype=np.float64).reshape(-1, 3)


def load_off(path):
    it = _tokens(path)
    try:
        lineno, toks = next(it)
    except StopIteration:
        raise ParseError("empty file", path, 1) from None
    if not toks[0].startswith("OFF"):
        raise ParseError("missing OFF header", path, lineno)
    rest = toks[0][3:]
    toks = ([rest] if rest else []) + toks[1:]
    if not toks:
        try:
            lineno, toks = next(it)
        except StopIteration:
            raise ParseError("missing element counts", path, lineno) from None
    try:
        nv, nf = int(toks[0]), int(toks[1])
    except (ValueError, IndexError):
        raise ParseError("bad element counts", path, lineno) from None
    verts = _read_vertices(it, nv, path)
    faces = _read_faces(it, nf, nv, path)
    return verts, faces


def load_ply_ascii(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", path, 1)
    nv = nf = None
    vprops = []
    current = None
    body_start = None
    for i, line in enumerate(lines[1:], start=2):
        toks = line.split()
        if not toks:
            continue
        if toks[0] == "format":
            if len(toks) < 2 or toks[1] != "ascii":
                raise ParseError("only ASCII PLY is supported", path, i)
        elif toks[0] == "element":
            try:
                count = int(toks[2])
            except (IndexError, ValueError):
                raise ParseError("bad element line", path, i) from None
            current = toks[1]
            if current == "vertex":
                nv = count
            elif current == "face":
                nf = count
        elif toks[0] == "property" and current == "vertex":
            vprops.append(toks[-1])
        elif toks[0] == "end_header":
            body_start = i
            break
    if body_start is None:
        raise ParseError("missing end_header", path, len(lines))
    if nv is None:
        raise ParseError("no vertex element", path, body_start)
    if vprops[:3] != ["x", "y", "z"]:
        raise ParseError("vertex properties must start with x y z", path, body_start)

    def body():
        for j in range(body_start, len(lines)):
            toks = lines[j].split()
            if toks:
                yield j + 1, toks

    it = body()
    verts = _read_vertices(it, nv, path, ncols=len(vprops))
    faces = _read_faces(it, nf or 0, nv, path)
    return verts, faces


def load_mesh(path, fmt: Optional[str] = None):
    fmt = fmt or os.path.splitext(str(path))[1].lstrip(".").lower()
    if fmt == "off":
        return load_off(path)
    if fmt in ("ply", "ply_ascii"):
        return load_ply_ascii(path)
    raise InvalidArgumentError(f"unsupported mesh format {fmt!r}")


def sample_surface(mesh, n: int, seed: int = 0, normalize: bool = True) -> PointCloud:
    """Area-weighted triangle choice plus uniform barycentric draws."""
    verts, faces = mesh
    if len(faces) == 0:
        raise InvalidArgumentError("mesh has no faces")
    rng = np.random.default_rng(seed)
    a, b, c = (verts[faces[:, j]] for j in range(3))
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    if area.sum() <= 0:
        raise InvalidArgumentError("mesh has zero surface area")
    tri = rng.choice(len(faces), size=n, p=area / area.sum())
    r1 = np.sqrt(rng.uniform(size=n))
    r2 = rng.uniform(size=n)
    w = np.column_stack([1 - r1, r1 * (1 - r2), r1 * r2])
    pts = w[:, :1] * a[tri] + w[:, 1:2] * b[tri] + w[:, 2:] * c[tri]
    return PointCloud(normalize_unit_sphere(pts) if normalize else pts)


# -- XYZ clouds -----------------------------------------------------------------

def save_cloud(path, cloud) -> None:
    pts = getattr(cloud, "points", cloud)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise InvalidArgumentError("cannot save non-finite coordinates")
    with open(path, "w") as fh:
        for x, y, z in pts:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def load_cloud(path, label=None, id=None) -> PointCloud:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            toks = line.split()
            if not toks:
                continue
            if len(toks) != 3:
                raise ParseError(f"expected 3 coordinates, got {len(toks)}", str(path), lineno)
            try:
                xyz = [float(t) for t in toks]
            except ValueError:
                raise ParseError("non-numeric token", str(path), lineno) from None
            if not all(math.isfinite(v) for v in xyz):
                raise ParseError("non-finite coordinate", str(path), lineno)
            rows.append(xyz)
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3), label=label, id=id)


# -- manifests --------------------------------------------------------------------

@dataclass
class ManifestEntry:
    id: str
    path: str
    label: int
    split: str = "test"


@dataclass
class DatasetManifest:
    entries: list
    class_names: list
    config: dict = field(default_factory=dict)

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]

    def validate(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("manifest ids must be unique")
        for e in self.entries:
            if not 0 <= e.label < len(self.class_names):
                raise InvalidArgumentError(f"label {e.label} of {e.id} outside class table")


def write_manifest(path, manifest: DatasetManifest) -> None:
    """JSON Lines: one header record, then one record per sample."""
    manifest.validate()
    with open(path, "w") as fh:
        fh.write(json.dumps({"kind": "header", "class_names": manifest.class_names,
                             "config": manifest.config}, sort_keys=True) + "\n")
        for e in manifest.entries:
            fh.write(json.dumps({"kind": "sample", **asdict(e)}, sort_keys=True) + "\n")


def read_manifest(path) -> DatasetManifest:
    entries = []
    class_names = []
    config = {}
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad JSON: {exc.msg}", str(path), lineno) from None
            kind = rec.get("kind", "sample")
            if kind == "header":
                class_names = list(rec.get("class_names", []))
                config = rec.get("config", {})
                continue
            try:
                p = rec["path"]
                if not os.path.isabs(p):
                    p = os.path.join(base, p)
                entries.append(ManifestEntry(id=str(rec["id"]), path=p, label=int(rec["label"]),
                                             split=rec.get("split", "test")))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad sample record: {exc}", str(path), lineno) from None
    if not class_names and entries:
        class_names = [str(i) for i in range(max(e.label for e in entries) + 1)]
    m = DatasetManifest(entries=entries, class_names=class_names, config=config)
    m.validate()
    return m


def load_entry(entry: ManifestEntry) -> PointCloud:
    return load_cloud(entry.path, label=entry.label, id=entry.id)


@dataclass
class DatasetSpec:
    families: tuple = FAMILIES
    train_per_class: int = 30
    test_per_class: int = 12
    n_points: int = 256
    noise_sigma: float = 0.01
    seed: int = 0
    param_jitter: float = 0.15
    random_rotation: bool = False

    def __post_init__(self):
        fams = tuple(self.families)
        bad = [f for f in fams if f not in FAMILIES]
        if bad:
            raise InvalidArgumentError(f"families: unknown family {bad[0]!r} (choose from {FAMILIES})")
        if len(fams) < 1 or len(set(fams)) != len(fams):
            raise InvalidArgumentError("families: need distinct family names")
        if self.train_per_class < 0 or self.test_per_class < 0:
            raise InvalidArgumentError("train_per_class/test_per_class must be >= 0")
        self.families = fams


def _jittered_params(family, rng, amount):
    out = {}
    for k, v in DEFAULT_PARAMS[family].items():
        if isinstance(v, tuple):
            out[k] = tuple(float(x * (1 + rng.uniform(-amount, amount))) for x in v)
        else:
            out[k] = float(v * (1 + rng.uniform(-amount, amount)))
    return out


def generate_dataset(spec: DatasetSpec):
    """Yield (entry-without-path, PointCloud) for every sample, deterministically."""
    for label, fam in enumerate(spec.families):
        for split, count in (("train", spec.train_per_class), ("test", spec.test_per_class)):
            for i in range(count):
                sid = f"{fam}_{split}_{i:04d}"
                seed = (spec.seed * 1_000_003 + label * 10_007 + (0 if split == "train" else 5003) + i)
                rng = np.random.default_rng(seed)
                shape = ShapeSpec(family=fam, n_points=spec.n_points, noise_sigma=spec.noise_sigma,
                                  seed=seed, params=_jittered_params(fam, rng, spec.param_jitter),
                                  random_rotation=spec.random_rotation)
                cloud = generate_shape(shape)
                yield ManifestEntry(id=sid, path="", label=label, split=split), \
                    PointCloud(cloud.points, label=label, id=sid)
