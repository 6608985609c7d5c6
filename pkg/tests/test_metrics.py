import io

import numpy as np
import pytest

from conftest import sphere_points
from oracles import brute_chamfer, brute_hausdorff
from topoadv.data_io import ShapeSpec, generate_shape
from topoadv.errors import EmptyCohortError, InvalidArgumentError
from topoadv.metrics import (EvalReport, SampleRecord, asr, csd, csd_from_curvatures, distance_report,
                             entropy_delta, evaluate_sample, hausdorff, plot_data_diagram, read_report,
                             transfer_eval, uniform_metric)
from topoadv.persistence import diagram


def test_asr_policy():
    assert asr([{"success": True, "trivial": False}, {"success": False, "trivial": False}]) == 50.0
    assert asr([{"success": True, "trivial": False}] * 3) == 100.0
    recs = [{"success": True, "trivial": True}, {"success": True, "trivial": False},
            {"success": False, "trivial": False}]
    assert asr(recs) == 50.0
    with pytest.raises(EmptyCohortError):
        asr([{"success": True, "trivial": True}])
    with pytest.raises(EmptyCohortError):
        asr([])


def _grid(n=10, z=0.0):
    g = np.stack(np.meshgrid(np.arange(n), np.arange(n), indexing="ij"), -1).reshape(-1, 2) / (n - 1)
    return np.column_stack([g, np.full(len(g), z)])


def test_csd_cases(rng):
    P = sphere_points(200)
    assert csd(P, P) == 0.0
    assert csd(_grid(), _grid(z=1.0)) == pytest.approx(0.0, abs=1e-12)
    assert csd_from_curvatures([0.0, 1.0], [0.0, 0.6]) == pytest.approx(0.2, abs=1e-15)
    Q = P + 0.05 * rng.normal(size=P.shape)
    assert csd(P, Q) == csd(Q, P) > 0


def test_uniform_metric_orderings(rng):
    grid = _grid(12)
    clustered = np.vstack([grid, np.array([0.5, 0.5, 0.0]) + 0.01 * rng.normal(size=(40, 3)) * [1, 1, 0]])
    assert uniform_metric(grid) < uniform_metric(clustered)
    P = sphere_points(256, seed=2)
    assert uniform_metric(np.vstack([P, P])) > uniform_metric(P)
    assert uniform_metric(P) == uniform_metric(P.copy())
    with pytest.raises(InvalidArgumentError):
        uniform_metric(P[:63])


def test_distance_report(rng):
    P = sphere_points(60)
    assert distance_report(P, P) == (0.0, 0.0, 0.0)
    t = 0.37
    c, h, l2 = distance_report(np.zeros((1, 3)), np.array([[0.0, t, 0.0]]))
    assert c == pytest.approx(2 * t) and h == pytest.approx(t) and l2 == pytest.approx(t)
    for _ in range(10):
        A = rng.normal(size=(40, 3))
        B = A + 0.1 * rng.normal(size=A.shape)
        c, h, _ = distance_report(A, B)
        assert abs(c - brute_chamfer(A, B)) < 1e-9
        assert abs(h - brute_hausdorff(A, B)) < 1e-12
        d = np.linalg.norm(A[:, None] - B[None], axis=2)
        assert h >= d.min(axis=1).max() and h >= d.min(axis=0).max()
        assert c <= 2 * h + 1e-12
    with pytest.raises(InvalidArgumentError):
        distance_report(A, B[:-1])
    assert hausdorff(A, B[:-1]) >= 0


def test_entropy_delta():
    torus = generate_shape(ShapeSpec(family="torus", n_points=200, noise_sigma=0.0, seed=1)).points
    assert entropy_delta(torus, torus) == (0.0, 0.0, 0.0)
    noisy = torus + np.random.default_rng(0).normal(scale=0.15, size=torus.shape)
    assert max(abs(x) for x in entropy_delta(torus, noisy)) > 0


class _SignModel:
    """Class 0 when the mean x coordinate is positive."""
    n_classes = 2

    def predict(self, pts):
        return 0 if np.mean(np.asarray(getattr(pts, "points", pts))[:, 0]) > 0 else 1


def test_transfer_eval_same_model(rng):
    m = _SignModel()
    clean, adv, labels = [], [], []
    for i in range(12):
        c = rng.normal(size=(20, 3)) + [(-1) ** i * 0.5, 0, 0]
        clean.append(c)
        labels.append(0 if i % 2 == 0 else 1)
        adv.append(c - [(-1) ** i * (1.0 if i % 3 else 0.1), 0, 0])
    labels[0] = 1  # clean-misclassified, excluded
    trivial = [m.predict(c) != y for c, y in zip(clean, labels)]
    direct = asr([{"success": m.predict(a) != y, "trivial": t} for a, y, t in zip(adv, labels, trivial)])
    assert transfer_eval(adv, clean, labels, m, trivial) == direct
    with pytest.raises(EmptyCohortError):
        transfer_eval(adv, clean, labels, m, [True] * 12)
    with pytest.raises(InvalidArgumentError):
        transfer_eval(adv, clean, [5] * 12, m)


def test_report_round_trip():
    P = sphere_points(128)
    Q = P + 0.01 * np.random.default_rng(0).normal(size=P.shape)
    r1 = evaluate_sample("a", 0, P, Q, True, 1)
    r2 = SampleRecord(id="b", label=1, pred=1, success=False, trivial=True)
    rep = EvalReport([r1, r2], config={"x": 1})
    assert rep.asr == 100.0
    buf = io.StringIO()
    rep.write_jsonl(buf)
    buf.seek(0)
    head, recs = read_report(buf)
    assert head["asr"] == 100.0 and head["n_eligible"] == 1 and head["config"] == {"x": 1}
    assert recs[0].chamfer == r1.chamfer and recs[1].trivial
    assert "ASR 100.00%" in rep.summary_table()
    lines = plot_data_diagram(diagram(P)).splitlines()
    assert lines[0].startswith("#") and len(lines) > 1
