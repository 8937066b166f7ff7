"""Seven-variant ablation: baseline, each memory alone and both, with and without the spread loss."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .evaluation import RetrievalReport, evaluate_model
from .synth_data import generate_dataset
from .training import train

log = logging.getLogger(__name__)

VARIANTS: dict[str, dict] = {
    "baseline": dict(enable_sm=False, enable_tm=False, enable_spread=False),
    "sm": dict(enable_sm=True, enable_tm=False, enable_spread=False),
    "sm+ls": dict(enable_sm=True, enable_tm=False, enable_spread=True),
    "tm": dict(enable_sm=False, enable_tm=True, enable_spread=False),
    "tm+ls": dict(enable_sm=False, enable_tm=True, enable_spread=True),
    "sm+tm": dict(enable_sm=True, enable_tm=True, enable_spread=False),
    "sm+tm+ls": dict(enable_sm=True, enable_tm=True, enable_spread=True),
}

TABLE_COLUMNS = ("variant", "enable_sm", "enable_tm", "enable_spread", "n_seeds",
                 "rank1_mean", "rank1_std", "mAP_mean", "mAP_std")


def variant_config(cfg: RunConfig, name: str, seed: int) -> RunConfig:
    return cfg.with_variant(mlp_baseline=False, **VARIANTS[name]).with_seed(seed)


def run_variant(cfg: RunConfig, name: str, seed: int, strategy: str = "rrs") -> RetrievalReport:
    run_cfg = variant_config(cfg, name, seed)
    dataset = generate_dataset(run_cfg.dataset_config())
    result = train(run_cfg, dataset)
    return evaluate_model(result.model, dataset, strategy)


@dataclass
class AblationRow:
    variant: str
    rank1: list[float]
    mAP: list[float]

    def as_record(self) -> dict:
        flags = VARIANTS[self.variant]
        return {
            "variant": self.variant,
            **{k: int(flags[k]) for k in ("enable_sm", "enable_tm", "enable_spread")},
            "n_seeds": len(self.mAP),
            "rank1_mean": float(np.mean(self.rank1)), "rank1_std": float(np.std(self.rank1)),
            "mAP_mean": float(np.mean(self.mAP)), "mAP_std": float(np.std(self.mAP)),
        }


def run_ablation(cfg: RunConfig, seeds, variants=tuple(VARIANTS), strategy: str = "rrs") -> list[AblationRow]:
    rows = []
    for name in variants:
        row = AblationRow(name, [], [])
        for seed in seeds:
            report = run_variant(cfg, name, seed, strategy)
            row.rank1.append(report.rank1)
            row.mAP.append(report.mAP)
            log.info("%s seed %d: rank1 %.4f mAP %.4f", name, seed, report.rank1, report.mAP)
        rows.append(row)
    return rows


def write_table(rows: list[AblationRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        w.writeheader()
        for row in rows:
            rec = row.as_record()
            w.writerow({k: f"{v:.6f}" if isinstance(v, float) else v for k, v in rec.items()})
    return path
