"""Experiment orchestration: the render / collect / train frame loop.

Single-threaded by design; every random draw descends from the config
seed, so rerunning a config file reproduces each artifact bit for bit.
Artifacts land in the config's output directory: a CSV with one row
per frame, the final frame as PFM plus a tone-mapped PNG preview, and
a cache snapshot when a cache was trained.
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .caches import Cache, default_train_count, train_frame
from .config import RunConfig, resolve_scene
from .errors import ConfigError
from .estimators import reference_render, render
from .metrics import mrse, relative_bias_squared, relative_variance, smape
from .pfm import write_pfm
from .preview import save_preview

CSV_FIELDS = ("frame", "mode", "spp", "mrse", "rbias2", "rvar",
              "avg_path_length", "pct_ir_bounces", "train_loss")
TRAIN_CSV_FIELDS = ("frame", "records", "train_loss")

EMA_KEEP = 0.9
REF_SEED_OFFSET = 7777  # reference rng stream, disjoint from render seeds


def self_relative_variance(result, eps=0.01):
    """Per-pixel sample variance against the frame's own image.

    Reference-free, so it is available for every row of the run CSV;
    the report's rVar uses the reference as denominator instead.
    """
    img = result.image
    return float(np.mean(result.sample_var / (img * img + eps)))


@dataclass(frozen=True)
class EstimatorReport:
    """Final-frame quality summary against an explicit reference."""

    mrse: float
    smape: float
    rbias2: float
    rvar: float
    avg_path_length: float
    pct_ir_bounces: float
    ema_mrse: tuple
    ema_vrel: tuple
    wall_time: float

    def __post_init__(self):
        for name in ("mrse", "smape", "rbias2", "rvar",
                     "avg_path_length", "pct_ir_bounces", "wall_time"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"report field {name} is not finite")
        if not all(math.isfinite(v) for v in self.ema_mrse + self.ema_vrel):
            raise ConfigError("report EMA traces contain non-finite values")


@dataclass
class ExperimentResult:
    config: RunConfig
    rows: list = field(default_factory=list)
    csv_path: str = None
    image_path: str = None
    snapshot_path: str = None
    final: object = None
    cache: object = None
    report: object = None
    wall_time: float = 0.0
    echo: str = None


def _ema_extend(trace, value):
    if math.isfinite(value):
        prev = trace[-1] if trace else value
        trace.append(EMA_KEEP * prev + (1.0 - EMA_KEEP) * value)


class _ReferenceBank:
    """Per-geometry reference images, disk-cached and reused per frame."""

    def __init__(self, config):
        self.config = config
        self._images = {}

    def get(self, scene):
        if self.config.ref_spp <= 0:
            return None
        key = scene.content_hash()
        if key not in self._images:
            self._images[key] = reference_render(
                scene, self.config.ref_spp,
                seed=self.config.seed + REF_SEED_OFFSET,
                out_dir=self.config.ref_dir)
        return self._images[key]


def _make_cache(config, scene):
    kind = config.cache_kind()
    if kind is None:
        return None
    loss = None if config.loss == "auto" else config.loss
    cache = Cache.create(
        kind, scene, seed=config.seed, loss=loss,
        levels=config.hash_levels, table_log2=config.hash_table_log2,
        feats=config.features, bands=config.sh_bands, depth=config.layers,
        width=config.width, lr=config.lr)
    cache.snapshot_dir = config.out
    return cache


def run_experiment(config, scene=None, cache=None):
    """The frame loop: render, collect training paths, step the cache.

    frames=0 only echoes the configuration back; nothing touches the
    filesystem.  A training divergence propagates after the cache state
    has been dumped next to the other artifacts.
    """
    start = time.perf_counter()
    if config.frames == 0:
        return ExperimentResult(config=config, echo=config.to_json())
    if scene is None:
        scene = resolve_scene(config)
    os.makedirs(config.out, exist_ok=True)
    est = config.estimator()
    if cache is None:
        cache = _make_cache(config, scene)
    refs = _ReferenceBank(config)
    batch = config.batch if config.batch > 0 else None
    forced = config.mode.startswith("biased-")

    csv_path = os.path.join(config.out, "run.csv")
    rows = []
    ema_mrse, ema_vrel = [], []
    result = None
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for f in range(config.frames):
            scene = scene.at_frame(f)
            if cache is not None:
                cache.scene = scene
            result = render(scene, est, cache=cache, seed=config.seed,
                            spp=config.spp, frame=f, force_cache=forced)
            ref = refs.get(scene)
            row = {
                "frame": f,
                "mode": config.mode,
                "spp": config.spp,
                "mrse": mrse(result.image, ref) if ref is not None
                else math.nan,
                "rbias2": relative_bias_squared(result.image, ref)
                if ref is not None else math.nan,
                "rvar": self_relative_variance(result),
                "avg_path_length": result.avg_path_length,
                "pct_ir_bounces": result.pct_ir_bounces,
                "train_loss": math.nan,
            }
            if cache is not None:
                records = cache.collect(
                    count=default_train_count(scene, config.train_fraction),
                    frame=f)
                if len(records):
                    trace = train_frame(cache, records,
                                        steps=config.steps_per_frame,
                                        batch=batch)
                    row["train_loss"] = trace[-1]
            _ema_extend(ema_mrse, row["mrse"])
            _ema_extend(ema_vrel, row["rvar"])
            writer.writerow(row)
            fh.flush()
            rows.append(row)
            if config.write_frames:
                write_pfm(os.path.join(config.out, f"frame_{f:04d}.pfm"),
                          result.image)

    image_path = os.path.join(config.out, "final.pfm")
    write_pfm(image_path, result.image)
    save_preview(os.path.join(config.out, "final.png"), result.image)
    snapshot_path = None
    if cache is not None:
        snapshot_path = os.path.join(config.out,
                                     f"cache_{cache.kind}.nncache")
        cache.save(snapshot_path)

    report = None
    ref = refs.get(scene)
    if ref is not None:
        report = EstimatorReport(
            mrse=mrse(result.image, ref),
            smape=smape(result.image, ref),
            rbias2=relative_bias_squared(result.image, ref),
            rvar=relative_variance(result.sample_var, ref),
            avg_path_length=result.avg_path_length,
            pct_ir_bounces=result.pct_ir_bounces,
            ema_mrse=tuple(ema_mrse),
            ema_vrel=tuple(ema_vrel),
            wall_time=time.perf_counter() - start)
    return ExperimentResult(
        config=config, rows=rows, csv_path=csv_path,
        image_path=image_path, snapshot_path=snapshot_path,
        final=result, cache=cache, report=report,
        wall_time=time.perf_counter() - start)


def run_training(config, scene=None, cache=None):
    """Headless training: collect and step, never a full render pass."""
    start = time.perf_counter()
    if config.frames == 0:
        return ExperimentResult(config=config, echo=config.to_json())
    if scene is None:
        scene = resolve_scene(config)
    kind = config.cache_kind() or config.cache
    os.makedirs(config.out, exist_ok=True)
    if cache is None:
        loss = None if config.loss == "auto" else config.loss
        cache = Cache.create(
            kind, scene, seed=config.seed, loss=loss,
            levels=config.hash_levels,
            table_log2=config.hash_table_log2, feats=config.features,
            bands=config.sh_bands, depth=config.layers,
            width=config.width, lr=config.lr)
        cache.snapshot_dir = config.out
    batch = config.batch if config.batch > 0 else None

    csv_path = os.path.join(config.out, "train.csv")
    rows = []
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAIN_CSV_FIELDS)
        writer.writeheader()
        for f in range(config.frames):
            scene = scene.at_frame(f)
            cache.scene = scene
            records = cache.collect(
                count=default_train_count(scene, config.train_fraction),
                frame=f)
            loss = math.nan
            if len(records):
                trace = train_frame(cache, records,
                                    steps=config.steps_per_frame,
                                    batch=batch)
                loss = trace[-1]
            row = {"frame": f, "records": len(records), "train_loss": loss}
            writer.writerow(row)
            fh.flush()
            rows.append(row)

    snapshot_path = os.path.join(config.out, f"cache_{cache.kind}.nncache")
    cache.save(snapshot_path)
    return ExperimentResult(
        config=config, rows=rows, csv_path=csv_path,
        snapshot_path=snapshot_path, cache=cache,
        wall_time=time.perf_counter() - start)
