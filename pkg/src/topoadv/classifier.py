"""Desk-scale permutation-invariant point-cloud classifiers in numpy.

``pointwise``: shared per-point MLP 3->32->64, max pool, head 64->32->C.
``edge``: the same MLP applied to edge features (p_i, p_j - p_i) over the
k=16 nearest neighbors, max over neighbors and points, same head.

Forward and backward passes are written out by hand; the max pools route
gradients to the (lowest-index) argmax only.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError, ParseError
from .pointcloud import knn_indices

log = logging.getLogger(__name__)

VARIANTS = ("pointwise", "edge")
CHECKPOINT_MAGIC = "topoadv-classifier"
CHECKPOINT_VERSION = 1
_PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4")


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 16
    lr: float = 0.005
    optimizer: str = "adam"
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise InvalidArgumentError("epochs, batch_size and lr must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidArgumentError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass
class PointClassifier:
    variant: str
    n_classes: int
    params: dict
    k: int = 16
    rng_seed: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, variant: str, n_classes: int, seed: int = 0, widths=(32, 64, 32), k: int = 16):
        if variant not in VARIANTS:
            raise InvalidArgumentError(f"variant must be one of {VARIANTS}, got {variant!r}")
        rng = np.random.default_rng(seed)
        d_in = 3 if variant == "pointwise" else 6
        h1, h2, h3 = widths
        shapes = [(d_in, h1), (h1, h2), (h2, h3), (h3, n_classes)]
        params = {}
        for i, (fi, fo) in enumerate(shapes, start=1):
            lim = np.sqrt(6.0 / (fi + fo))
            params[f"W{i}"] = rng.uniform(-lim, lim, (fi, fo))
            params[f"b{i}"] = np.zeros(fo)
        return cls(variant=variant, n_classes=n_classes, params=params, k=k, rng_seed=seed)

    # -- forward / backward ---------------------------------------------------
    def _features_input(self, X):
        """Per-element inputs of the shared MLP: (B, E, d_in) and neighbor index."""
        if self.variant == "pointwise":
            return X, None
        B, N, _ = X.shape
        nb = np.stack([knn_indices(X[b], self.k) for b in range(B)])
        pi = np.repeat(X[:, :, None, :], self.k, axis=2)
        pj = X[np.arange(B)[:, None, None], nb]
        e = np.concatenate([pi, pj - pi], axis=3).reshape(B, N * self.k, 6)
        return e, nb

    def _forward(self, X):
        p = self.params
        inp, nb = self._features_input(X)
        a1 = inp @ p["W1"] + p["b1"]
        h1 = softplus(a1)
        a2 = h1 @ p["W2"] + p["b2"]
        h2 = softplus(a2)
        arg = np.argmax(h2, axis=1)
        g = np.take_along_axis(h2, arg[:, None, :], axis=1)[:, 0, :]
        a3 = g @ p["W3"] + p["b3"]
        z = softplus(a3)
        logits = z @ p["W4"] + p["b4"]
        cache = dict(inp=inp, nb=nb, a1=a1, h1=h1, a2=a2, arg=arg, g=g, a3=a3, z=z)
        return logits, cache

    def _backward(self, cache, dlogits, want_params=True, want_input=False):
        p = self.params
        grads = {}
        z, a3, g = cache["z"], cache["a3"], cache["g"]
        if want_params:
            grads["W4"] = z.T @ dlogits
            grads["b4"] = dlogits.sum(axis=0)
        dz = dlogits @ p["W4"].T
        da3 = dz * sigmoid(a3)
        if want_params:
            grads["W3"] = g.T @ da3
            grads["b3"] = da3.sum(axis=0)
        dg = da3 @ p["W3"].T
        arg = cache["arg"]
        B, E, C2 = cache["a2"].shape
        bidx = np.arange(B)[:, None]
        cidx = np.arange(C2)[None, :]
        da2 = np.zeros((B, E, C2))
        da2[bidx, arg, cidx] = dg * sigmoid(cache["a2"][bidx, arg, cidx])
        # only rows selected by some channel carry gradient
        rows = np.unique(arg)
        h1 = cache["h1"][:, rows, :]
        da2r = da2[:, rows, :]
        if want_params:
            grads["W2"] = np.einsum("bei,bej->ij", h1, da2r)
            grads["b2"] = da2r.sum(axis=(0, 1))
        dh1 = da2r @ p["W2"].T
        da1 = dh1 * sigmoid(cache["a1"][:, rows, :])
        inp = cache["inp"][:, rows, :]
        if want_params:
            grads["W1"] = np.einsum("bei,bej->ij", inp, da1)
            grads["b1"] = da1.sum(axis=(0, 1))
        dX = None
        if want_input:
            dinp = da1 @ p["W1"].T
            if self.variant == "pointwise":
                dX = np.zeros((B, E, 3))
                dX[:, rows, :] = dinp
            else:
                N = E // self.k
                dX = np.zeros((B, N, 3))
                src = rows // self.k
                slot = rows % self.k
                nbr = cache["nb"][:, src, slot]
                for b in range(B):
                    np.add.at(dX[b], src, dinp[b, :, :3] - dinp[b, :, 3:])
                    np.add.at(dX[b], nbr[b], dinp[b, :, 3:])
        return grads, dX

    def forward(self, cloud) -> np.ndarray:
        X = _points(cloud)[None]
        return self._forward(X)[0][0]

    def forward_batch(self, X) -> np.ndarray:
        return self._forward(np.asarray(X, dtype=np.float64))[0]

    def predict(self, cloud) -> int:
        return int(np.argmax(self.forward(cloud)))

    def input_grad(self, cloud, y: int, kappa: float = 0.05):
        """CW margin loss at ``cloud`` and its gradient w.r.t. the points."""
        X = _points(cloud)[None]
        logits, cache = self._forward(X)
        loss, dlog = cw_margin_loss(logits[0], y, kappa)
        if not np.any(dlog):
            return loss, np.zeros_like(X[0]), logits[0]
        _, dX = self._backward(cache, dlog[None], want_params=False, want_input=True)
        return loss, dX[0], logits[0]

    # -- serialization --------------------------------------------------------
    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(dump_checkpoint(self))

    @classmethod
    def load(cls, path) -> "PointClassifier":
        with open(path) as fh:
            return parse_checkpoint(fh.read(), path=str(path))


def _points(cloud) -> np.ndarray:
    pts = getattr(cloud, "points", cloud)
    return np.asarray(pts, dtype=np.float64)


def cw_margin_loss(logits, y: int, kappa: float = 0.05):
    """max(f_y - max_{j != y} f_j, -kappa) and its gradient w.r.t. the logits.

    The competing class is the lowest-index maximiser; the gradient is zero
    once the margin falls strictly below -kappa.
    """
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= y < len(z):
        raise InvalidArgumentError(f"label {y} out of range for {len(z)} classes")
    if kappa < 0:
        raise InvalidArgumentError("kappa must be >= 0")
    other = z.copy()
    other[y] = -np.inf
    j = int(np.argmax(other))
    margin = z[y] - z[j]
    grad = np.zeros_like(z)
    if margin >= -kappa:
        grad[y] = 1.0
        grad[j] = -1.0
        return float(margin), grad
    return float(-kappa), grad


def softmax_xent(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return float(loss), d / n


def train(clouds, labels, variant: str = "pointwise", n_classes: Optional[int] = None,
          cfg: Optional[TrainConfig] = None, log_every: int = 10):
    """Fit a classifier with softmax cross-entropy. Returns (model, history)."""
    cfg = cfg or TrainConfig()
    X = np.stack([_points(c) for c in clouds]) if len(clouds) else np.zeros((0, 0, 3))
    y = np.asarray(labels, dtype=np.int64)
    if len(X) == 0:
        raise InvalidArgumentError("cannot train on an empty dataset")
    C = n_classes if n_classes is not None else int(y.max()) + 1
    if y.min() < 0 or y.max() >= C:
        raise InvalidArgumentError("labels must lie in [0, n_classes)")
    model = PointClassifier.init(variant, C, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    state = {k: (np.zeros_like(v), np.zeros_like(v)) for k, v in model.params.items()}
    step = 0
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for s in range(0, len(X), cfg.batch_size):
            bi = order[s:s + cfg.batch_size]
            logits, cache = model._forward(X[bi])
            loss, dlog = softmax_xent(logits, y[bi])
            grads, _ = model._backward(cache, dlog)
            step += 1
            for name, gr in grads.items():
                m, v = state[name]
                if cfg.optimizer == "adam":
                    m *= 0.9
                    m += 0.1 * gr
                    v *= 0.999
                    v += 0.001 * gr * gr
                    mh = m / (1 - 0.9 ** step)
                    vh = v / (1 - 0.999 ** step)
                    model.params[name] -= cfg.lr * mh / (np.sqrt(vh) + 1e-8)
                else:
                    m *= cfg.momentum
                    m += gr
                    model.params[name] -= cfg.lr * m
            total += loss * len(bi)
        history.append(total / len(X))
        if log_every and (epoch + 1) % log_every == 0:
            log.info("epoch %d loss %.5f", epoch + 1, history[-1])
    model.meta["train_config"] = asdict(cfg)
    return model, history


def accuracy(model: PointClassifier, clouds, labels, batch: int = 32) -> float:
    X = np.stack([_points(c) for c in clouds])
    preds = np.concatenate([np.argmax(model.forward_batch(X[i:i + batch]), axis=1)
                            for i in range(0, len(X), batch)])
    return float(np.mean(preds == np.asarray(labels)))


def dump_checkpoint(model: PointClassifier) -> str:
    """Text checkpoint: magic/version line, JSON header, then one line per array
    (``name dim... : hex floats``). Hex floats round-trip bit-exactly."""
    header = {"variant": model.variant, "n_classes": model.n_classes, "k": model.k,
              "rng_seed": model.rng_seed, "meta": model.meta}
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", json.dumps(header, sort_keys=True)]
    for name in _PARAM_NAMES:
        arr = model.params[name]
        dims = " ".join(str(s) for s in arr.shape)
        vals = " ".join(float(x).hex() for x in arr.reshape(-1))
        lines.append(f"{name} {dims} : {vals}")
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str, path: Optional[str] = None) -> PointClassifier:
    lines = text.splitlines()
    if not lines or lines[0].split()[:1] != [CHECKPOINT_MAGIC]:
        raise ParseError("not a topoadv classifier checkpoint", path, 1)
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise ParseError("missing checkpoint version", path, 1) from None
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", path, 1)
    try:
        header = json.loads(lines[1])
    except (IndexError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad header: {exc}", path, 2) from None
    params = {}
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        try:
            head, body = line.split(" : ", 1) if " : " in line else (line.rstrip(" :"), "")
            parts = head.split()
            name, shape = parts[0], tuple(int(s) for s in parts[1:])
            vals = np.array([float.fromhex(t) for t in body.split()], dtype=np.float64)
            params[name] = vals.reshape(shape)
        except ValueError as exc:
            raise ParseError(f"bad parameter line: {exc}", path, lineno) from None
    missing = [n for n in _PARAM_NAMES if n not in params]
    if missing:
        raise ParseError(f"missing parameters {missing}", path)
    return PointClassifier(variant=header["variant"], n_classes=header["n_classes"],
                           params=params, k=header.get("k", 16),
                           rng_seed=header.get("rng_seed", 0), meta=header.get("meta", {}))
