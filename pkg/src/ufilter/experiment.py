"""Sweeps over (k, epsilon, replica) with an oracle baseline."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .config import ExperimentConfig
from .core import Channel
from .errors import UFilterError
from .filtering import universal_filter_run
from .memory import memory_universal_filter_run
from .oracle import JointLaw, optimal_filter_run
from .sources import FsHmpNoise

log = logging.getLogger(__name__)


@dataclass
class SweepReport:
    config: dict
    cells: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)

    def to_dict(self):
        return {"config": self.config, "cells": self.cells, "aggregates": self.aggregates}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _mean_se(values):
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return None, None
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else None
    return float(v.mean()), se


def generate_data(cfg: ExperimentConfig, replica):
    """Clean and noisy sequences for one replica; also returns the noise state path if any."""
    source, channel = cfg.build_source(), cfg.build_channel()
    gen = rngmod.stream(cfg.seed, rngmod.DATA, replica)
    joint = JointLaw(source, channel)
    x, z = joint.sample(cfg.n, gen)
    return joint, x, z


def _run_replica(cfg: ExperimentConfig, replica, dump_dir):
    joint, x, z = generate_data(cfg, replica)
    channel = joint.channel
    M = joint.alphabet
    loss = cfg.build_loss(M)
    try:
        oracle = optimal_filter_run(joint, x, z, loss)
    except UFilterError as exc:
        log.warning("oracle unavailable for replica %d: %s", replica, exc)
        oracle = None
    if oracle is not None and dump_dir is not None:
        (dump_dir / f"oracle_r{replica}.csv").write_text(oracle.steps_csv())
    cells = []
    for k in cfg.ks:
        for e_idx, eps in enumerate(cfg.epsilons):
            coord = f"(k={k}, epsilon={eps}, replica={replica})"
            common = dict(
                k=k,
                loss=loss,
                epsilon=eps,
                schedule=cfg.schedule_obj(),
                floor=cfg.floor_obj(),
                em_config=cfg.em_config(),
                rng=rngmod.stream(cfg.seed, rngmod.FILTER, replica, k, e_idx),
                mc_samples=cfg.mc_samples,
                stream=(replica, k, e_idx),
            )
            try:
                if isinstance(channel, Channel):
                    rep = universal_filter_run(z, x, channel=channel, **common)
                else:
                    rep = memory_universal_filter_run(z, x, noise=channel, **common)
            except UFilterError as exc:
                raise type(exc)(f"{coord}: {exc}") from exc
            if dump_dir is not None:
                (dump_dir / f"steps_k{k}_e{e_idx}_r{replica}.csv").write_text(rep.steps_csv())
            oracle_loss = oracle.loss if oracle is not None else None
            cells.append(
                {
                    "k": k,
                    "epsilon": eps,
                    "replica": replica,
                    "loss": rep.loss,
                    "realized_loss": rep.realized_loss,
                    "oracle_loss": oracle_loss,
                    "regret": None if oracle_loss is None else rep.loss - oracle_loss,
                    "refits": rep.refits,
                }
            )
    return cells


def run_experiment(cfg: ExperimentConfig, workers=1, dump_dir=None) -> SweepReport:
    """Run every (k, epsilon, replica) cell; the report is independent of ``workers``."""
    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)
    replicas = range(cfg.replicas)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: _run_replica(cfg, r, dump_dir), replicas))
    else:
        results = [_run_replica(cfg, r, dump_dir) for r in replicas]
    cells = sorted((c for batch in results for c in batch), key=lambda c: (c["k"], c["epsilon"], c["replica"]))
    aggregates = []
    for k in cfg.ks:
        for eps in cfg.epsilons:
            group = [c for c in cells if c["k"] == k and c["epsilon"] == eps]
            mean_loss, se_loss = _mean_se(c["loss"] for c in group)
            mean_oracle, se_oracle = _mean_se(c["oracle_loss"] for c in group)
            mean_regret, se_regret = _mean_se(c["regret"] for c in group)
            aggregates.append(
                {
                    "k": k,
                    "epsilon": eps,
                    "replicas": len(group),
                    "mean_loss": mean_loss,
                    "se_loss": se_loss,
                    "mean_oracle_loss": mean_oracle,
                    "se_oracle_loss": se_oracle,
                    "mean_regret": mean_regret,
                    "se_regret": se_regret,
                }
            )
    return SweepReport(cfg.model_dump(mode="json"), cells, aggregates)
