"""Cohort-level attack driver shared by the CLI and the acceptance suite."""
from __future__ import annotations

import dataclasses
import multiprocessing as mp
import os
import zlib

from .attack import AttackConfig, run_attack
from .topo_loss import EmbeddingNet


def sample_seed(base: int, sample_id) -> int:
    """Per-sample seed: independent of worker count and scheduling order."""
    return (int(base) + zlib.crc32(str(sample_id).encode())) % (2 ** 31)


def default_workers() -> int:
    return os.cpu_count() or 1


_STATE = {}


def _init(model, cfg):
    _STATE["model"] = model
    _STATE["cfg"] = cfg
    _STATE["net"] = EmbeddingNet.create(cfg.embed_seed)


def _attack_one(job):
    i, cloud = job
    cfg = dataclasses.replace(_STATE["cfg"], seed=sample_seed(_STATE["cfg"].seed, cloud.id))
    return i, run_attack(_STATE["model"], cloud, cfg, net=_STATE["net"])


def attack_cohort(model, clouds: list, cfg: AttackConfig, workers: int = 1, progress=None):
    """Attack every cloud; results come back in input order.

    ``progress(index, result, done)`` is called in completion order.
    """
    workers = workers or default_workers()
    jobs = list(enumerate(clouds))
    results = [None] * len(jobs)
    if workers <= 1 or len(jobs) <= 1:
        _init(model, cfg)
        it = map(_attack_one, jobs)
        pool = None
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
        pool = ctx.Pool(workers, initializer=_init, initargs=(model, cfg))
        it = pool.imap_unordered(_attack_one, jobs, chunksize=1)
    try:
        for done, (i, res) in enumerate(it, start=1):
            results[i] = res
            if progress is not None:
                progress(i, res, done)
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    return results
