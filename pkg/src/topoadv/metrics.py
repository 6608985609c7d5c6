"""Attack success, imperceptibility and topology-change metrics."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptyCohortError, InvalidArgumentError
from .geo_loss import chamfer as _chamfer
from .persistence import diagram, persistence_entropy
from .pointcloud import PointCloud, curvature_proxy, farthest_point_sample, knn_graph, pairwise_sq_dists

UNIFORM_FRACTIONS = (0.004, 0.006, 0.008, 0.010, 0.012)
UNIFORM_SEEDS = 50


def _pts(x) -> np.ndarray:
    return np.asarray(getattr(x, "points", x), dtype=np.float64)


@dataclass
class SampleRecord:
    id: str
    label: int
    pred: int
    success: bool
    trivial: bool = False
    iterations: int = 0
    restart: int = 0
    csd: float = float("nan")
    uniform: float = float("nan")
    chamfer: float = float("nan")
    hausdorff: float = float("nan")
    l2: float = float("nan")
    dE0: float = float("nan")
    dE1: float = float("nan")
    dE2: float = float("nan")
    transfer_success: Optional[bool] = None
    transfer_eligible: Optional[bool] = None


def asr(records) -> float:
    """Percentage of eligible (clean-correct) samples whose adversary fools the model."""
    elig = [r for r in records if not _get(r, "trivial")]
    if not elig:
        raise EmptyCohortError("no eligible samples: every clean sample is misclassified")
    return 100.0 * sum(bool(_get(r, "success")) for r in elig) / len(elig)


def _get(r, key):
    return r[key] if isinstance(r, dict) else getattr(r, key)


def csd(P, P_adv, k: int = 16) -> float:
    """|std(kappa(P)) - std(kappa(P_adv))| with population standard deviations."""
    a, b = PointCloud(_pts(P)), PointCloud(_pts(P_adv))
    ka = curvature_proxy(a, knn_graph(a, k))
    kb = curvature_proxy(b, knn_graph(b, k))
    return csd_from_curvatures(ka, kb)


def csd_from_curvatures(ka, kb) -> float:
    return float(abs(np.std(ka) - np.std(kb)))


def uniform_metric(P_adv, n_seeds: int = UNIFORM_SEEDS, fractions=UNIFORM_FRACTIONS,
                   seed_index: int = 0) -> float:
    """Patch imbalance times clutter, summed over FPS seeds and area fractions.

    A is the surface area of the bounding sphere about the centroid; a patch is
    the ball of radius sqrt(p A / pi) around a seed.
    """
    pts = _pts(P_adv)
    n = pts.shape[0]
    if n < 64:
        raise InvalidArgumentError("uniform_metric needs at least 64 points")
    radius = np.linalg.norm(pts - pts.mean(axis=0), axis=1).max()
    area = 4.0 * math.pi * radius ** 2
    seeds = farthest_point_sample(pts, min(n_seeds, n), seed_index)
    d2 = pairwise_sq_dists(pts[seeds], pts)
    total = 0.0
    for p in fractions:
        r = math.sqrt(p * area / math.pi)
        n_hat = p * n
        for s in range(len(seeds)):
            patch = pts[d2[s] <= r * r]
            m = patch.shape[0]
            imbalance = (n_hat - m) ** 2 / n_hat
            if m < 2:
                continue
            pd = pairwise_sq_dists(patch, patch)
            np.fill_diagonal(pd, np.inf)
            d = np.sqrt(pd.min(axis=1))
            d_hat = math.sqrt(2.0 * math.pi * r * r / (math.sqrt(3.0) * m))
            clutter = float(np.mean((d - d_hat) ** 2 / d_hat))
            total += imbalance * clutter
    return float(total)


def hausdorff(P, P_adv) -> float:
    d = np.sqrt(pairwise_sq_dists(_pts(P), _pts(P_adv)))
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def l2_distance(P, P_adv) -> float:
    a, b = _pts(P), _pts(P_adv)
    if a.shape != b.shape:
        raise InvalidArgumentError("l2 distance needs equal point counts")
    return float(math.sqrt(np.mean(np.sum((b - a) ** 2, axis=1))))


def distance_report(P, P_adv):
    """(chamfer, hausdorff, RMS per-point displacement)."""
    a, b = _pts(P), _pts(P_adv)
    return _chamfer(a, b)[0], hausdorff(a, b), l2_distance(a, b)


def entropy_delta(P, P_adv, dgm_clean=None, dgm_adv=None, backend: str = "qhull"):
    """E_k(P_adv) - E_k(P) for k = 0, 1, 2."""
    dc = dgm_clean if dgm_clean is not None else diagram(_pts(P), backend=backend)
    da = dgm_adv if dgm_adv is not None else diagram(_pts(P_adv), backend=backend)
    return tuple(persistence_entropy(da, k) - persistence_entropy(dc, k) for k in range(3))


def transfer_eval(adv_clouds, clean_clouds, labels, model_b, trivial=None) -> float:
    """ASR of pre-generated adversaries against ``model_b``.

    Samples trivial on the source model or misclassified by ``model_b`` when
    clean are excluded.
    """
    if model_b is None:
        raise InvalidArgumentError("transfer model missing")
    records = transfer_records(adv_clouds, clean_clouds, labels, model_b, trivial)
    return asr(records)


def transfer_records(adv_clouds, clean_clouds, labels, model_b, trivial=None):
    trivial = trivial if trivial is not None else [False] * len(labels)
    out = []
    for adv, clean, y, triv in zip(adv_clouds, clean_clouds, labels, trivial):
        if int(y) >= model_b.n_classes:
            raise InvalidArgumentError("transfer model has a different class set")
        ok_clean = model_b.predict(clean) == int(y)
        out.append({"trivial": bool(triv) or not ok_clean,
                    "success": model_b.predict(adv) != int(y)})
    return out


def check_class_sets(model_a, model_b) -> None:
    if model_a.n_classes != model_b.n_classes:
        raise InvalidArgumentError(
            f"class-set mismatch: {model_a.n_classes} vs {model_b.n_classes} classes")


def evaluate_sample(sid, label, clean, adv, success, pred, trivial=False, iterations=0,
                    restart=0, backend: str = "qhull", dgm_clean=None, dgm_adv=None) -> SampleRecord:
    rec = SampleRecord(id=sid, label=int(label), pred=int(pred), success=bool(success),
                       trivial=bool(trivial), iterations=int(iterations), restart=int(restart))
    rec.csd = csd(clean, adv)
    rec.uniform = uniform_metric(adv)
    rec.chamfer, rec.hausdorff, rec.l2 = distance_report(clean, adv)
    rec.dE0, rec.dE1, rec.dE2 = entropy_delta(clean, adv, dgm_clean, dgm_adv, backend=backend)
    return rec


METRIC_COLUMNS = ("csd", "uniform", "chamfer", "hausdorff", "l2", "dE0", "dE1", "dE2")


@dataclass
class EvalReport:
    records: list
    config: dict = field(default_factory=dict)
    transfer_asr: Optional[float] = None

    @property
    def asr(self) -> float:
        return asr(self.records)

    def means(self, successful_only: bool = False) -> dict:
        recs = [r for r in self.records if not r.trivial and (r.success or not successful_only)]
        out = {}
        for col in METRIC_COLUMNS:
            vals = [getattr(r, col) for r in recs]
            out[col] = float(np.mean(vals)) if vals else float("nan")
        return out

    def mean_abs_entropy_delta(self, successful_only: bool = True) -> tuple:
        recs = [r for r in self.records if not r.trivial and (r.success or not successful_only)]
        if not recs:
            return (float("nan"),) * 3
        return tuple(float(np.mean([abs(getattr(r, f"dE{k}")) for r in recs])) for k in range(3))

    def write_jsonl(self, fh) -> None:
        """Header record (config + aggregates), then one record per sample."""
        head = {"kind": "report", "asr": self.asr, "n_samples": len(self.records),
                "n_eligible": sum(not r.trivial for r in self.records),
                "means": self.means(), "mean_abs_dE_success": self.mean_abs_entropy_delta(),
                "transfer_asr": self.transfer_asr, "config": self.config}
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for r in self.records:
            fh.write(json.dumps({"kind": "sample", **asdict(r)}, sort_keys=True) + "\n")

    def summary_table(self) -> str:
        cols = ("id", "label", "pred", "success") + METRIC_COLUMNS
        lines = ["  ".join(f"{c:>10}" for c in cols)]
        for r in self.records:
            cells = [f"{r.id[-10:]:>10}", f"{r.label:>10d}", f"{r.pred:>10d}",
                     f"{('trivial' if r.trivial else str(r.success)):>10}"]
            cells += [f"{getattr(r, c):>10.4g}" for c in METRIC_COLUMNS]
            lines.append("  ".join(cells))
        m = self.means()
        lines.append("  ".join([f"{'mean':>10}", " " * 10, " " * 10, " " * 10]
                               + [f"{m[c]:>10.4g}" for c in METRIC_COLUMNS]))
        lines.append(f"ASR {self.asr:.2f}%")
        if self.transfer_asr is not None:
            lines.append(f"transfer ASR {self.transfer_asr:.2f}%")
        return "\n".join(lines)


def read_report(fh):
    """Inverse of write_jsonl: (header dict, list of SampleRecord)."""
    head, recs = None, []
    for line in fh:
        if not line.strip():
            continue
        rec = json.loads(line)
        kind = rec.pop("kind")
        if kind == "report":
            head = rec
        else:
            recs.append(SampleRecord(**rec))
    return head, recs


def plot_data_loss(trace) -> str:
    """'iteration total l_cls l_ph l_geom' columns."""
    lines = ["# iteration total l_cls l_ph l_geom"]
    for i, row in enumerate(trace):
        lines.append(f"{i} {row.total:.9g} {row.l_cls:.9g} {row.l_ph:.9g} {row.l_geom:.9g}")
    return "\n".join(lines) + "\n"


def plot_data_diagram(dgm) -> str:
    """'dim birth death' columns over finite pairs."""
    lines = ["# dim birth death"]
    for k, b, d in zip(dgm.dims, dgm.births, dgm.deaths):
        if np.isfinite(d):
            lines.append(f"{int(k)} {b:.9g} {d:.9g}")
    return "\n".join(lines) + "\n"
