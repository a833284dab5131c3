"""Run configuration: one validated record drives every entry point.

A RunConfig captures everything an experiment needs, so a JSON dump of
it reproduces the run bit for bit in single-threaded mode.  Defaults
follow the reference setup this laboratory is built around: a 4-layer
64-wide network over a 12-level hash encoding, 4 optimizer steps per
frame fed by paths through 2.5% of the pixels.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .errors import ConfigError

MODES = ("pt", "two-level", "biased-nirc-bth", "biased-nirc-sph",
         "biased-nrc-sph")
LOSSES = ("auto", "l2", "relative_l2", "variance", "bce")
CACHE_KINDS = ("nirc", "nrc", "nvc")


@dataclass
class RunConfig:
    """Validated settings for one experiment run."""

    scene: str = ""
    mode: str = "pt"
    spp: int = 1
    frames: int = 1
    seed: int = 0
    threads: int = 1
    out: str = "out"
    ref_dir: str = ".refcache"
    ref_spp: int = 0

    # sampling and termination
    nc: tuple = (15, 5, 5)
    nr: int = 1
    nbias: int = 5
    max_cache_vertices: int = 3
    sph_c: float = 0.01
    rr: float = 0.1
    roughness_cutoff: float = 0.0625

    # cache and training
    cache: str = "nirc"
    loss: str = "auto"  # kind-appropriate default at cache creation
    layers: int = 4
    width: int = 64
    hash_levels: int = 12
    hash_table_log2: int = 15
    features: int = 2
    sh_bands: int = 4
    lr: float = 0.01
    steps_per_frame: int = 4
    batch: int = 0
    train_fraction: float = 0.025

    write_frames: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode '{self.mode}'; "
                              f"choose from {', '.join(MODES)}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss '{self.loss}'")
        if self.cache not in CACHE_KINDS:
            raise ConfigError(f"unknown cache kind '{self.cache}'")
        self.nc = tuple(int(x) for x in self.nc)
        for name, lo in (("spp", 1), ("frames", 0), ("threads", 1),
                         ("nr", 1), ("nbias", 1), ("steps_per_frame", 1),
                         ("layers", 1), ("width", 1), ("hash_levels", 1),
                         ("hash_table_log2", 4), ("features", 1),
                         ("sh_bands", 1), ("max_cache_vertices", 1),
                         ("batch", 0), ("ref_spp", 0), ("seed", 0)):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < lo:
                raise ConfigError(f"{name} must be an integer >= {lo}, "
                                  f"got {v!r}")
        if not (0.0 <= self.rr < 1.0):
            raise ConfigError(f"rr must be in [0, 1), got {self.rr}")
        if self.sph_c <= 0.0:
            raise ConfigError(f"sph_c must be positive, got {self.sph_c}")
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (0.0 < self.train_fraction <= 1.0):
            raise ConfigError("train_fraction must be in (0, 1], "
                              f"got {self.train_fraction}")
        if self.roughness_cutoff < 0.0:
            raise ConfigError("roughness_cutoff must be nonnegative, "
                              f"got {self.roughness_cutoff}")

    def estimator(self):
        """The renderer-side view of this configuration."""
        from .estimators import EstimatorConfig
        return EstimatorConfig(
            mode=self.mode, nc=self.nc, nbias=self.nbias, nr=self.nr,
            max_cache_vertices=self.max_cache_vertices, sph_c=self.sph_c,
            rr=self.rr, roughness_cutoff=self.roughness_cutoff)

    def cache_kind(self):
        """Cache kind the mode trains, or None for plain path tracing."""
        if self.mode == "pt":
            return None
        if self.mode == "biased-nrc-sph":
            return "nrc"
        if self.mode.startswith("biased-nirc"):
            return "nirc"
        return self.cache

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def config_from_dict(data, base=None):
    """Build a RunConfig from a mapping, over optional base settings.

    Unknown keys are rejected so a typo in a config file fails loudly
    instead of running the default silently.
    """
    merged = dict(base.to_dict()) if base is not None else {}
    for k, v in dict(data).items():
        if k not in _FIELDS:
            raise ConfigError(f"unknown config key '{k}'")
        merged[k] = v
    return RunConfig(**merged)


def load_config(path, base=None):
    """RunConfig from a JSON file; values override whatever is in base."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config_from_dict(data, base=base)


def resolve_scene(config_or_path):
    """Load the scene a config points at: a file path or a builtin name."""
    from .scene import builtin_names, load_builtin, load_scene_file
    path = config_or_path.scene if isinstance(config_or_path, RunConfig) \
        else config_or_path
    if not path:
        raise ConfigError("no scene given")
    if os.path.exists(path):
        return load_scene_file(path)
    try:
        return load_builtin(path)
    except (ConfigError, FileNotFoundError, KeyError):
        raise ConfigError(
            f"scene '{path}' is neither a file nor a builtin "
            f"({', '.join(builtin_names())})")
