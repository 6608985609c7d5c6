"""Persistence embedding and the topology losses L_div, L_dir, L_PH."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .gradients import critical_map, diagram_vjp
from .persistence import PersistenceDiagram, canonical_order, top_k_indices

DESTRUCTION = "destruction"
CREATION = "creation"
HIDDEN = 32
EMBED_DIM = 64


@dataclass(frozen=True)
class TopoLossConfig:
    alpha: float = 1.0
    beta: float = 1.0
    w: tuple = (0.3, 1.0, 1.0)
    K: int = 50

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InvalidArgumentError("alpha and beta must be nonnegative")
        if self.K < 1:
            raise InvalidArgumentError("K must be >= 1")
        if len(self.w) != 3:
            raise InvalidArgumentError("w needs one weight per homology dimension 0..2")
        object.__setattr__(self, "w", tuple(float(x) for x in self.w))


@dataclass
class PhaseScheduler:
    """Destruction for the first ``patience`` iterations, creation afterwards."""
    patience: int = 30
    iter: int = 0

    @property
    def mode(self) -> str:
        return DESTRUCTION if self.iter < self.patience else CREATION

    def step(self) -> str:
        self.iter += 1
        return self.mode


@dataclass(frozen=True)
class EmbeddingNet:
    """Frozen random-feature MLPs psi_k: (birth, lifetime) -> R^64, one per dim."""
    init_seed: int = 0
    params: tuple = field(default=(), repr=False)

    @classmethod
    def create(cls, init_seed: int = 0, hidden: int = HIDDEN, out: int = EMBED_DIM):
        rng = np.random.default_rng(init_seed)
        params = []
        for _ in range(3):
            lim1 = 1.0 / np.sqrt(2)
            lim2 = 1.0 / np.sqrt(hidden)
            params.append((rng.uniform(-lim1, lim1, (2, hidden)),
                           rng.uniform(-lim1, lim1, hidden),
                           rng.uniform(-lim2, lim2, (hidden, out)),
                           rng.uniform(-lim2, lim2, out)))
        return cls(init_seed=init_seed, params=tuple(params))

    @property
    def out_dim(self) -> int:
        return self.params[0][3].shape[0]

    def psi(self, k: int, birth, life):
        w1, b1, w2, b2 = self.params[k]
        x = np.column_stack([np.asarray(birth, float), np.asarray(life, float)])
        return np.tanh(x @ w1 + b1) @ w2 + b2


@dataclass
class Embedding:
    """phi = [phi_0, phi_1, phi_2] together with what ``vjp`` needs."""
    value: np.ndarray
    net: EmbeddingNet
    dgm: PersistenceDiagram
    _cache: list = field(default_factory=list, repr=False)

    def vjp(self, g_phi) -> np.ndarray:
        """Per-pair (dL/dbirth, dL/ddeath), in the diagram's pair order."""
        g_phi = np.asarray(g_phi, dtype=np.float64)
        d = self.net.out_dim
        out = np.zeros((len(self.dgm), 2))
        for k, (idx, life, h, psi) in enumerate(self._cache):
            if len(idx) == 0:
                continue
            w1, _, w2, _ = self.net.params[k]
            g = g_phi[k * d:(k + 1) * d]
            gpsi = psi @ g
            gx = life[:, None] * (((w2 @ g)[None, :] * (1.0 - h * h)) @ w1.T)
            d_life = gpsi + gx[:, 1]
            out[idx, 1] = d_life
            out[idx, 0] = gx[:, 0] - d_life
        return out


def embed(dgm: PersistenceDiagram, net: EmbeddingNet) -> Embedding:
    """phi_k = sum_i life_i * psi_k(birth_i, life_i) over finite pairs of dim k.

    Pairs are summed in canonical order so the result does not depend on the
    order in which they were listed.
    """
    d = net.out_dim
    value = np.zeros(3 * d)
    cache = []
    canon = np.lexsort((dgm.deaths, dgm.births, dgm.dims))
    for k in range(3):
        fin = dgm.finite_mask(k)
        idx = canon[fin[canon]]
        if len(idx) == 0:
            cache.append((idx, np.zeros(0), None, None))
            continue
        birth = dgm.births[idx]
        life = dgm.deaths[idx] - birth
        w1, b1, w2, b2 = net.params[k]
        h = np.tanh(np.column_stack([birth, life]) @ w1 + b1)
        psi = h @ w2 + b2
        acc = np.zeros(d)
        for i in range(len(idx)):
            acc += life[i] * psi[i]
        value[k * d:(k + 1) * d] = acc
        cache.append((idx, life, h, psi))
    return Embedding(value=value, net=net, dgm=dgm, _cache=cache)


def loss_div(phi_adv, phi_clean):
    """Squared L2 distance and its gradient w.r.t. ``phi_adv``."""
    a = np.asarray(phi_adv, dtype=np.float64)
    b = np.asarray(phi_clean, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"embedding length mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(diff @ diff), 2.0 * diff


def loss_dir(dgm: PersistenceDiagram, cfg: TopoLossConfig, mode: str):
    """Signed weighted sum of the top-K lifetimes per dimension.

    Returns (value, per-pair (dL/dbirth, dL/ddeath)).
    """
    if mode not in (DESTRUCTION, CREATION):
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    sign = 1.0 if mode == DESTRUCTION else -1.0
    grad = np.zeros((len(dgm), 2))
    total = 0.0
    for k in range(3):
        idx = top_k_indices(dgm, k, cfg.K)
        if len(idx) == 0:
            continue
        life = dgm.deaths[idx] - dgm.births[idx]
        total += cfg.w[k] * sign * float(np.sum(life))
        grad[idx, 1] = sign * cfg.w[k]
        grad[idx, 0] = -sign * cfg.w[k]
    return total, grad


@dataclass
class TopoLoss:
    value: float
    div: float
    dir: float
    grad: np.ndarray
    mode: str


def loss_ph(dgm_adv: PersistenceDiagram, phi_clean, net: EmbeddingNet, cfg: TopoLossConfig,
            mode, points) -> TopoLoss:
    """alpha * L_div + beta * L_dir with its (N, 3) point gradient.

    ``mode`` is either a mode string or a PhaseScheduler.
    """
    if isinstance(mode, PhaseScheduler):
        mode = mode.mode
    pts = np.asarray(points, dtype=np.float64)
    upstream = np.zeros((len(dgm_adv), 2))
    div = dirv = 0.0
    if cfg.alpha > 0:
        emb = embed(dgm_adv, net)
        div, g_phi = loss_div(emb.value, phi_clean)
        upstream += cfg.alpha * emb.vjp(g_phi)
    if cfg.beta > 0:
        dirv, g_dir = loss_dir(dgm_adv, cfg, mode)
        upstream += cfg.beta * g_dir
    value = cfg.alpha * div + cfg.beta * dirv
    if not np.any(upstream):
        return TopoLoss(value, div, dirv, np.zeros_like(pts), mode)
    grad = diagram_vjp(dgm_adv, critical_map(dgm_adv), upstream, pts)
    return TopoLoss(value, div, dirv, grad, mode)


def clean_embedding(dgm_clean: PersistenceDiagram, net: EmbeddingNet) -> np.ndarray:
    return embed(canonical_order(dgm_clean), net).value
