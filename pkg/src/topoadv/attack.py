"""Projected gradient attack with tangent-plane and per-point budget projections."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError
from .geo_loss import geom_total
from .persistence import PersistenceDiagram, diagram
from .pointcloud import CleanStats, PointCloud, clean_stats
from .topo_loss import EmbeddingNet, PhaseScheduler, TopoLossConfig, clean_embedding, loss_ph

log = logging.getLogger(__name__)


@dataclass
class AttackConfig:
    epsilon: float = 0.55
    T: int = 300
    R: int = 3
    eta0: float = 0.001
    decay: float = 0.5
    decay_period: int = 0          # 0 means ceil(T / 3)
    lambda1: float = 10.0
    lambda2: float = 0.001
    lambda3: float = 5.0
    kappa: float = 0.05
    alpha: float = 1.0
    beta: float = 1.0
    w: tuple = (0.3, 1.0, 1.0)
    K: int = 50
    patience: int = 30
    stability_S: int = 3
    seed: int = 0
    embed_seed: int = 0
    k: int = 16
    backend: str = "qhull"
    record_deltas: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidArgumentError("epsilon must be > 0")
        if self.T < 1:
            raise InvalidArgumentError("T must be >= 1")
        if self.R < 0:
            raise InvalidArgumentError("R must be >= 0")
        if not self.eta0 > 0:
            raise InvalidArgumentError("eta0 must be > 0")
        if not 0 < self.decay <= 1:
            raise InvalidArgumentError("decay must lie in (0, 1]")
        if self.decay_period < 0:
            raise InvalidArgumentError("decay_period must be >= 0")
        for name in ("lambda1", "lambda2", "lambda3", "kappa"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be >= 0")
        if self.stability_S < 1 or self.patience < 0:
            raise InvalidArgumentError("stability_S must be >= 1 and patience >= 0")
        if self.backend not in ("qhull", "bowyer_watson"):
            raise InvalidArgumentError(f"unknown backend {self.backend!r}")
        self.w = tuple(float(x) for x in self.w)
        self.topo  # validates alpha, beta, w, K

    @property
    def topo(self) -> TopoLossConfig:
        return TopoLossConfig(alpha=self.alpha, beta=self.beta, w=self.w, K=self.K)

    @property
    def period(self) -> int:
        return self.decay_period or math.ceil(self.T / 3)

    def step_size(self, t: int) -> float:
        return self.eta0 * self.decay ** (t // self.period)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["w"] = list(self.w)
        return d


@dataclass
class TraceRow:
    l_cls: float
    l_ph: float
    l_geom: float
    total: float
    pred: int
    max_norm: float = 0.0
    max_normal_dot: float = 0.0


@dataclass
class AttackResult:
    adv_cloud: PointCloud
    success: bool
    restart_index: int
    iterations_used: int
    pred: int
    label: int
    delta: np.ndarray
    traces: list = field(default_factory=list)       # one list of TraceRow per trajectory
    deltas: list = field(default_factory=list)       # optional per-iteration fields
    trivial: bool = False
    ph_calls: int = 0
    clean_diagram: Optional[PersistenceDiagram] = None
    adv_diagram: Optional[PersistenceDiagram] = None
    diagnostics: list = field(default_factory=list)

    @property
    def trace(self) -> list:
        """Trace of the returned trajectory."""
        return self.traces[self.restart_index] if self.traces else []


# normal components at or below this fraction of the row norm count as rounding
# residue and are left alone, which makes the projection exactly idempotent
TANGENT_RTOL = 1e-12


def tangent_project(delta, normals) -> np.ndarray:
    d = np.asarray(delta, dtype=np.float64)
    n = np.asarray(normals, dtype=np.float64)
    dots = np.einsum("ij,ij->i", d, n)
    dots[np.abs(dots) <= TANGENT_RTOL * np.linalg.norm(d, axis=1)] = 0.0
    return d - dots[:, None] * n


def clip_ball(delta, epsilon: float) -> np.ndarray:
    if not epsilon > 0:
        raise InvalidArgumentError("epsilon must be > 0")
    d = np.array(delta, dtype=np.float64, copy=True)
    norms = np.linalg.norm(d, axis=1)
    over = norms > epsilon
    d[over] *= (epsilon / norms[over])[:, None]
    return d


def random_tangent_init(cloud, normals, epsilon: float, seed: int) -> np.ndarray:
    """Gaussian rows with expected norm 0.1 * epsilon, tangent-projected and clipped."""
    pts = getattr(cloud, "points", cloud)
    rng = np.random.default_rng(seed)
    # E||g|| for a standard 3D Gaussian is 2 sqrt(2/pi)
    scale = 0.1 * epsilon / (2.0 * math.sqrt(2.0 / math.pi))
    d = rng.normal(scale=scale, size=np.shape(pts))
    return clip_ball(tangent_project(d, normals), epsilon)


class _PHFailure(Exception):
    pass


class _Run:
    """Shared state of one attack: clean statistics, embedding and counters."""

    def __init__(self, model, cloud, label, cfg, stats, net):
        self.model = model
        self.P = cloud.points
        self.y = label
        self.cfg = cfg
        self.stats = stats
        self.net = net
        self.ph_calls = 0
        self.perturb_seed = 0
        self.diagnostics = []
        self.phi_clean = None
        self.clean_dgm = None
        if cfg.lambda2 > 0:
            self.clean_dgm = self.diagram(self.P)
            self.phi_clean = clean_embedding(self.clean_dgm, net)

    def diagram(self, pts):
        """Persistence diagram with one jitter-reseed retry on degeneracy."""
        for attempt in range(2):
            self.ph_calls += 1
            try:
                return diagram(pts, perturb_seed=self.perturb_seed, backend=self.cfg.backend)
            except DegenerateInputError as exc:
                self.diagnostics.append(f"degenerate input (attempt {attempt + 1}): {exc}")
                self.perturb_seed += 1
        raise _PHFailure("persistence failed twice")

    def trajectory(self, delta0):
        cfg = self.cfg
        sched = PhaseScheduler(patience=cfg.patience)
        delta = delta0
        rows, fields = [], []
        streak = 0
        first_flip = None
        for t in range(cfg.T + 1):
            adv = self.P + delta
            l_cls, g_cls, logits = self.model.input_grad(adv, self.y, cfg.kappa)
            pred = int(np.argmax(logits))
            if pred != self.y:
                streak += 1
                if streak == 1:
                    first_flip = (t, delta, pred)
                if streak >= cfg.stability_S:
                    return True, first_flip, rows, fields
            else:
                streak = 0
            if t == cfg.T:
                break
            grad = cfg.lambda1 * g_cls
            l_ph = 0.0
            if cfg.lambda2 > 0:
                dgm = self.diagram(adv)
                topo = loss_ph(dgm, self.phi_clean, self.net, cfg.topo, sched, adv)
                sched.step()
                l_ph = topo.value
                grad = grad + cfg.lambda2 * topo.grad
            geo = geom_total(self.stats, adv, delta)
            grad = grad + cfg.lambda3 * geo.grad
            total = cfg.lambda1 * l_cls + cfg.lambda2 * l_ph + cfg.lambda3 * geo.value
            delta = clip_ball(tangent_project(delta - cfg.step_size(t) * grad, self.stats.normals),
                              cfg.epsilon)
            norms = np.linalg.norm(delta, axis=1)
            dots = np.abs(np.einsum("ij,ij->i", delta, self.stats.normals))
            rows.append(TraceRow(l_cls, l_ph, geo.value, total, pred,
                                 float(norms.max()), float(dots.max())))
            if cfg.record_deltas:
                fields.append(delta.copy())
        return False, (cfg.T, delta, pred), rows, fields


def run_attack(model, cloud: PointCloud, cfg: Optional[AttackConfig] = None,
               label: Optional[int] = None, stats: Optional[CleanStats] = None,
               net: Optional[EmbeddingNet] = None) -> AttackResult:
    """Untargeted attack: a zero-init trajectory then ``R`` random restarts,
    stopping at the first stable label flip."""
    cfg = cfg or AttackConfig()
    y = cloud.label if label is None else label
    if y is None:
        raise InvalidArgumentError("a true label is required")
    y = int(y)
    P = cloud.points
    clean_pred = model.predict(P)
    if clean_pred != y:
        return AttackResult(adv_cloud=cloud, success=True, restart_index=0, iterations_used=0,
                            pred=clean_pred, label=y, delta=np.zeros_like(P), trivial=True)
    stats = stats or clean_stats(cloud, k=cfg.k)
    net = net or EmbeddingNet.create(cfg.embed_seed)
    run = _Run(model, cloud, y, cfg, stats, net)
    traces, all_fields = [], []
    last = None
    for r in range(cfg.R + 1):
        if r == 0:
            delta0 = np.zeros_like(P)
        else:
            delta0 = random_tangent_init(P, stats.normals, cfg.epsilon, cfg.seed + r)
        try:
            ok, (t, delta, pred), rows, fields = run.trajectory(delta0)
        except _PHFailure as exc:
            run.diagnostics.append(f"trajectory {r} aborted: {exc}")
            traces.append([])
            all_fields.append([])
            continue
        traces.append(rows)
        all_fields.append(fields)
        last = (r, ok, t, delta, pred)
        if ok:
            break
    if last is None:
        # every trajectory aborted; report the clean cloud as a failed attack
        last = (cfg.R, False, 0, np.zeros_like(P), clean_pred)
    r, ok, t, delta, pred = last
    adv_pts = P + delta
    adv_dgm = None
    if cfg.lambda2 > 0:
        try:
            adv_dgm = run.diagram(adv_pts)
        except _PHFailure as exc:
            run.diagnostics.append(f"adversarial diagram unavailable: {exc}")
    log.debug("sample %s: success=%s restart=%d iters=%d", cloud.id, ok, r, t)
    return AttackResult(adv_cloud=cloud.with_points(adv_pts), success=ok, restart_index=r,
                        iterations_used=t, pred=pred, label=y, delta=delta, traces=traces,
                        deltas=all_fields, ph_calls=run.ph_calls, clean_diagram=run.clean_dgm,
                        adv_diagram=adv_dgm, diagnostics=run.diagnostics)
