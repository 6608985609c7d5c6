"""``topoadv`` command line: gen-data, train, attack, eval, ph.

Exit codes: 0 success, 2 configuration or parse error, 3 empty cohort,
4 numerical degeneracy.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import config as cfgmod
from .classifier import PointClassifier, accuracy, train
from .data_io import (DatasetManifest, ManifestEntry, generate_dataset, load_cloud, load_entry,
                      read_manifest, save_cloud, write_manifest)
from .errors import (DegenerateInputError, DegenerateNeighborhoodError, DegenerateSimplexError,
                     EigengapError, EmptyCohortError, InvalidArgumentError, ParseError)
from .gradients import critical_map, directional_fd, fd_error
from .metrics import (EvalReport, asr, check_class_sets, evaluate_sample, plot_data_diagram,
                      plot_data_loss, transfer_records)
from .persistence import diagram, write_diagram
from .runner import attack_cohort
from .topo_loss import EmbeddingNet, TopoLossConfig, loss_ph

log = logging.getLogger("topoadv")

EXIT_OK, EXIT_CONFIG, EXIT_COHORT, EXIT_DEGENERATE = 0, 2, 3, 4
CONFIG_ECHO = "config.ini"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InvalidArgumentError(message)


# shortcut flags mapped onto dotted config keys
SHORTCUTS = {
    "eps": ("attack.epsilon", float), "T": ("attack.T", int), "R": ("attack.R", int),
    "eta0": ("attack.eta0", float), "lambda1": ("attack.lambda1", float),
    "lambda2": ("attack.lambda2", float), "lambda3": ("attack.lambda3", float),
    "kappa": ("attack.kappa", float), "backend": ("attack.backend", str),
    "variant": ("train.variant", str), "epochs": ("train.epochs", int),
    "workers": ("run.workers", int),
}


def _override_flags(p, *names):
    for n in names:
        key, typ = SHORTCUTS[n]
        p.add_argument(f"--{n}", type=typ, default=None, dest=f"ov_{n}", metavar=key,
                       help=f"override {key}")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config field (repeatable)")
    p.add_argument("--config", default=None, help="INI config file (defaults to $%s)" % cfgmod.ENV_CONFIG)


def _resolve(args, seed_key=None):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise InvalidArgumentError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for name, (key, _) in SHORTCUTS.items():
        val = getattr(args, f"ov_{name}", None)
        if val is not None:
            overrides[key] = str(val)
    if seed_key and getattr(args, "seed", None) is not None:
        overrides[seed_key] = str(args.seed)
    return cfgmod.resolve(args.config, overrides)


def _progress(quiet):
    def emit(line):
        if not quiet:
            print(line, file=sys.stderr, flush=True)
    return emit


def _write_text(path, text):
    with open(path, "w") as fh:
        fh.write(text)


# -- gen-data ----------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.spec is not None:
        args.config = args.spec
    rc = _resolve(args, seed_key="data.seed")
    out = args.out
    os.makedirs(os.path.join(out, "clouds"), exist_ok=True)
    entries = []
    emit = _progress(args.quiet)
    for entry, cloud in generate_dataset(rc.data):
        rel = os.path.join("clouds", f"{entry.id}.xyz")
        save_cloud(os.path.join(out, rel), cloud)
        entries.append(ManifestEntry(id=entry.id, path=rel, label=entry.label, split=entry.split))
        emit(f"gen {entry.id} label {entry.label} split {entry.split}")
    manifest = DatasetManifest(entries=entries, class_names=list(rc.data.families),
                               config={"echo": rc.echo()})
    write_manifest(os.path.join(out, "manifest.jsonl"), manifest)
    _write_text(os.path.join(out, CONFIG_ECHO), rc.echo())
    emit(f"wrote {len(entries)} clouds to {out}")
    return EXIT_OK


# -- train ---------------------------------------------------------------------------

def _load_manifest(path):
    if not os.path.exists(path):
        raise InvalidArgumentError(f"manifest not found: {path}")
    return read_manifest(path)


def cmd_train(args) -> int:
    rc = _resolve(args, seed_key="train.seed")
    man = _load_manifest(args.data)
    train_set = [load_entry(e) for e in man.split("train")]
    test_set = [load_entry(e) for e in man.split("test")]
    if not train_set:
        raise InvalidArgumentError("manifest has no train split")
    emit = _progress(args.quiet)
    model, history = train(train_set, [c.label for c in train_set], variant=rc.variant,
                           n_classes=len(man.class_names), cfg=rc.train, log_every=0)
    train_acc = accuracy(model, train_set, [c.label for c in train_set])
    test_acc = accuracy(model, test_set, [c.label for c in test_set]) if test_set else None
    model.meta["config_echo"] = rc.echo()
    model.meta["class_names"] = list(man.class_names)
    model.meta["train_accuracy"] = train_acc
    model.meta["test_accuracy"] = test_acc
    model.save(args.out)
    with open(args.out + ".log", "w") as fh:
        for epoch, loss in enumerate(history, start=1):
            fh.write(json.dumps({"epoch": epoch, "loss": loss}) + "\n")
        fh.write(json.dumps({"train_accuracy": train_acc, "test_accuracy": test_acc,
                             "variant": rc.variant}) + "\n")
    _write_text(args.out + "." + CONFIG_ECHO, rc.echo())
    emit(f"train variant {rc.variant} final_loss {history[-1]:.6g} "
         f"train_acc {train_acc:.4f} test_acc {test_acc if test_acc is None else round(test_acc, 4)}")
    return EXIT_OK


# -- attack --------------------------------------------------------------------------

def _load_model(path):
    if not os.path.exists(path):
        raise InvalidArgumentError(f"model checkpoint not found: {path}")
    return PointClassifier.load(path)


def cmd_attack(args) -> int:
    rc = _resolve(args, seed_key="attack.seed")
    model = _load_model(args.model)
    man = _load_manifest(args.data)
    entries = man.split(args.split) if args.split != "all" else list(man.entries)
    if args.limit:
        entries = entries[:args.limit]
    if not entries:
        raise EmptyCohortError("no samples to attack")
    clouds = [load_entry(e) for e in entries]
    out = args.out
    for sub in ("adv", "dgm"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)
    if args.plot_data:
        os.makedirs(os.path.join(out, "plot"), exist_ok=True)
    emit = _progress(args.quiet)
    tally = {"ok": 0, "elig": 0}

    def progress(i, res, done):
        if not res.trivial:
            tally["elig"] += 1
            tally["ok"] += int(res.success)
        running = 100.0 * tally["ok"] / tally["elig"] if tally["elig"] else float("nan")
        emit(f"sample {clouds[i].id} iters {res.iterations_used} restart {res.restart_index} "
             f"success {int(res.success)} trivial {int(res.trivial)} ph_calls {res.ph_calls} "
             f"running_asr {running:.2f} done {done}/{len(clouds)}")

    results = attack_cohort(model, clouds, rc.attack, workers=rc.workers, progress=progress)
    records = []
    for cloud, res in zip(clouds, results):
        adv_rel = os.path.join("adv", f"{cloud.id}.xyz")
        save_cloud(os.path.join(out, adv_rel), res.adv_cloud)
        rec = {"kind": "sample", "id": cloud.id, "label": res.label, "pred": res.pred,
               "success": res.success, "trivial": res.trivial, "iterations": res.iterations_used,
               "restart": res.restart_index, "ph_calls": res.ph_calls, "adv_path": adv_rel,
               "diagnostics": res.diagnostics}
        last = res.trace[-1] if res.trace else None
        if last is not None:
            rec.update({"l_cls": last.l_cls, "l_ph": last.l_ph, "l_geom": last.l_geom,
                        "total": last.total})
        rows = [row for tr in res.traces for row in tr]
        rec["max_norm"] = max((r.max_norm for r in rows), default=0.0)
        rec["max_normal_dot"] = max((r.max_normal_dot for r in rows), default=0.0)
        for tag, dgm in (("clean", res.clean_diagram), ("adv", res.adv_diagram)):
            if dgm is not None:
                rel = os.path.join("dgm", f"{cloud.id}.{tag}.txt")
                with open(os.path.join(out, rel), "w") as fh:
                    write_diagram(dgm, fh)
                rec[f"{tag}_dgm_path"] = rel
        if args.plot_data and res.trace:
            _write_text(os.path.join(out, "plot", f"{cloud.id}.loss.txt"), plot_data_loss(res.trace))
        records.append(rec)
    head = {"kind": "attack", "n_samples": len(records), "config": rc.echo(),
            "model": os.path.basename(args.model),
            "total_ph_calls": sum(r["ph_calls"] for r in records)}
    try:
        head["asr"] = asr(records)
    except EmptyCohortError:
        head["asr"] = None
    with open(os.path.join(out, "records.jsonl"), "w") as fh:
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    _write_text(os.path.join(out, CONFIG_ECHO), rc.echo())
    emit(f"attack done asr {head['asr']} total_ph_calls {head['total_ph_calls']}")
    if rc.attack.lambda2 == 0:
        emit("persistence pipeline skipped (lambda2 = 0)")
    return EXIT_OK


# -- eval ----------------------------------------------------------------------------

def _read_attack_records(adv_dir):
    path = os.path.join(adv_dir, "records.jsonl")
    if not os.path.exists(path):
        raise EmptyCohortError(f"no attack records in {adv_dir}")
    recs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad JSON: {exc.msg}", path, lineno) from None
            if rec.get("kind") == "sample":
                recs.append(rec)
    if not recs:
        raise EmptyCohortError(f"no adversarial samples in {adv_dir}")
    return recs


def cmd_eval(args) -> int:
    rc = _resolve(args)
    model = _load_model(args.model)
    man = _load_manifest(args.clean)
    by_id = {e.id: e for e in man.entries}
    recs = _read_attack_records(args.adv)
    emit = _progress(args.quiet)
    out_records, cleans, advs = [], [], []
    if args.plot_data:
        os.makedirs(args.plot_data, exist_ok=True)
    for rec in recs:
        if rec["id"] not in by_id:
            raise InvalidArgumentError(f"sample {rec['id']} not in the clean manifest")
        clean = load_entry(by_id[rec["id"]])
        adv = load_cloud(os.path.join(args.adv, rec["adv_path"]), label=clean.label, id=clean.id)
        pred = model.predict(adv)
        clean_ok = model.predict(clean) == clean.label
        success = clean_ok and pred != clean.label
        sr = evaluate_sample(clean.id, clean.label, clean, adv, success, pred,
                             trivial=not clean_ok, iterations=rec.get("iterations", 0),
                             restart=rec.get("restart", 0), backend=rc.attack.backend)
        out_records.append(sr)
        cleans.append(clean)
        advs.append(adv)
        if args.plot_data:
            for tag, cl in (("clean", clean), ("adv", adv)):
                _write_text(os.path.join(args.plot_data, f"{clean.id}.{tag}.dgm.txt"),
                            plot_data_diagram(diagram(cl.points, backend=rc.attack.backend)))
        emit(f"eval {clean.id} success {int(success)} csd {sr.csd:.4g} chamfer {sr.chamfer:.4g}")
    report = EvalReport(records=out_records, config={"echo": rc.echo()})
    if args.transfer:
        model_b = _load_model(args.transfer)
        check_class_sets(model, model_b)
        trecs = transfer_records(advs, cleans, [c.label for c in cleans], model_b,
                                 trivial=[r.trivial for r in out_records])
        for r, t in zip(out_records, trecs):
            r.transfer_eligible = not t["trivial"]
            r.transfer_success = bool(t["success"]) if not t["trivial"] else None
        report.transfer_asr = asr(trecs)
    report.asr  # raises on an empty cohort before anything is written
    with open(args.out, "w") as fh:
        report.write_jsonl(fh)
    table = report.summary_table()
    _write_text(os.path.splitext(args.out)[0] + ".summary.txt", table + "\n")
    if not args.quiet:
        print(table)
    return EXIT_OK


# -- ph ------------------------------------------------------------------------------

def grad_check(points, n_dirs: int = 20, h: float = 1e-5, seed: int = 0, backend: str = "qhull"):
    """Finite-difference check of the end-to-end topology loss gradient.

    The clean embedding is taken as zero, so the loss is ||phi||^2 plus the
    destruction-mode directional term. Directions whose +/-h diagrams pair
    different simplices are skipped. Returns (max error, directions used).
    """
    pts = np.asarray(points, dtype=np.float64)
    net = EmbeddingNet.create(0)
    cfg = TopoLossConfig()
    phi0 = np.zeros(3 * net.out_dim)

    def value(x):
        return loss_ph(diagram(x, backend=backend), phi0, net, cfg, "destruction", x).value

    dgm = diagram(pts, backend=backend)
    base = critical_map(dgm)
    grad = loss_ph(dgm, phi0, net, cfg, "destruction", pts).grad
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n_dirs):
        u = rng.normal(size=pts.shape)
        u /= np.linalg.norm(u)
        maps = [critical_map(diagram(pts + s * h * u, backend=backend)) for s in (1, -1)]
        if not all(_same_pairing(base, m) for m in maps):
            continue
        fd = directional_fd(value, pts, u, h)
        errs.append(fd_error(fd, float(np.sum(grad * u))))
    return (max(errs) if errs else float("nan")), len(errs)


def _same_pairing(a, b) -> bool:
    return (a.birth_def.shape == b.birth_def.shape and np.array_equal(a.birth_def, b.birth_def)
            and np.array_equal(a.death_def, b.death_def))


def cmd_ph(args) -> int:
    rc = _resolve(args)
    cloud = load_cloud(args.cloud)
    dgm = diagram(cloud.points, perturb_seed=args.perturb_seed, backend=rc.attack.backend)
    if args.out:
        with open(args.out, "w") as fh:
            write_diagram(dgm, fh)
        _write_text(args.out + "." + CONFIG_ECHO, rc.echo())
    else:
        write_diagram(dgm, sys.stdout)
    if args.grad_check:
        err, used = grad_check(cloud.points, n_dirs=args.directions, backend=rc.attack.backend)
        print(f"grad-check directions {used}/{args.directions} max_rel_err {err:.3e}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="topoadv", description="Topology-aware adversarial attacks on point clouds.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="suppress progress lines")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="generate the synthetic shape dataset")
    g.add_argument("--spec", default=None, help="INI file with a [data] section")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=None)
    _override_flags(g)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train a victim classifier")
    t.add_argument("--data", required=True, help="dataset manifest")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--seed", type=int, default=None)
    _override_flags(t, "variant", "epochs")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", parents=[common], help="attack a manifest split")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--split", default="test", choices=("train", "test", "all"))
    a.add_argument("--limit", type=int, default=0, help="attack only the first N samples")
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--plot-data", action="store_true", help="write per-sample loss traces")
    _override_flags(a, "eps", "T", "R", "eta0", "lambda1", "lambda2", "lambda3", "kappa",
                    "backend", "workers")
    a.set_defaults(func=cmd_attack)

    e = sub.add_parser("eval", parents=[common], help="evaluate an attack output directory")
    e.add_argument("--clean", required=True, help="clean dataset manifest")
    e.add_argument("--adv", required=True, help="attack output directory")
    e.add_argument("--model", required=True)
    e.add_argument("--transfer", default=None, help="second checkpoint for transfer ASR")
    e.add_argument("--out", required=True, help="report path (JSON lines)")
    e.add_argument("--plot-data", default=None, metavar="DIR",
                   help="write (birth, death) columns per sample")
    _override_flags(e, "backend")
    e.set_defaults(func=cmd_eval)

    h = sub.add_parser("ph", parents=[common], help="persistence diagram of one cloud")
    h.add_argument("--cloud", required=True)
    h.add_argument("--out", default=None)
    h.add_argument("--perturb-seed", type=int, default=0)
    h.add_argument("--grad-check", action="store_true")
    h.add_argument("--directions", type=int, default=20)
    _override_flags(h, "backend")
    h.set_defaults(func=cmd_ph)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (InvalidArgumentError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EmptyCohortError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COHORT
    except (DegenerateInputError, DegenerateNeighborhoodError, DegenerateSimplexError,
            EigengapError) as exc:
        print(f"error: numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
