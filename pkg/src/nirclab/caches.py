"""Queryable neural caches and their online training pipeline.

Three cache flavours share one network shape and differ in what the
output means: incident indirect radiance keyed by (surface, incoming
direction), outgoing radiance keyed by (surface, outgoing direction),
and environment visibility squashed through a sigmoid. Training data
comes from a separate unbiased path-tracing pass (never from the cache
itself); each traced path contributes one record per non-delta vertex.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .adam import AdamState, adam_step
from .encoding import encode_batch, encode_dir_into, encode_surface_into
from .errors import ConfigError, DivergenceError
from .kernels import MAXB, collect_paths_kernel, incident_targets_kernel
from .losses import loss_bce, loss_l2, loss_relative_l2, loss_variance
from .mlp import ACT_RELU, ACT_SIGMOID, make_spec, init_theta, mlp_forward, \
    mlp_backward, mlp_forward_s
from .rng import P_SHUFFLE, uniform_array
from .scene import ENV_NONE
from .snapshot import load_snapshot, save_snapshot

KINDS = ("nirc", "nrc", "nvc")
RECORD_KINDS = ("nirc", "nrc", "nvc", "nirc_full", "nirc_env")
LOSS_KINDS = ("l2", "relative_l2", "variance", "bce")
BATCH_CAP = 16384
EMA_ALPHA = 0.95


@dataclass
class Records:
    """One frame of training data, already flattened across paths."""

    kind: str
    pos: np.ndarray
    ns: np.ndarray
    alb: np.ndarray
    rough: np.ndarray
    dirs: np.ndarray
    target: np.ndarray
    pdf: np.ndarray
    frame: int

    def __len__(self):
        return self.pos.shape[0]


def _path_arrays(n_paths):
    return dict(
        a_pos=np.zeros((n_paths, MAXB, 3)),
        a_ns=np.zeros((n_paths, MAXB, 3)),
        a_alb=np.zeros((n_paths, MAXB, 3)),
        a_rough=np.zeros((n_paths, MAXB)),
        a_delta=np.zeros((n_paths, MAXB), np.uint8),
        a_wi=np.zeros((n_paths, MAXB, 3)),
        a_pdf=np.zeros((n_paths, MAXB)),
        a_fcosp=np.zeros((n_paths, MAXB, 3)),
        a_nee=np.zeros((n_paths, MAXB, 3)),
        a_mise=np.zeros((n_paths, MAXB, 3)),
        a_emit=np.zeros((n_paths, MAXB, 3)),
        a_tgt=np.zeros((n_paths, MAXB, 3)),
        a_tfull=np.zeros((n_paths, MAXB, 3)),
        a_tnrc=np.zeros((n_paths, MAXB, 3)),
        a_envdir=np.zeros((n_paths, MAXB, 3)),
        a_envpdf=np.zeros((n_paths, MAXB)),
        a_envvis=np.zeros((n_paths, MAXB)),
        a_envrad=np.zeros((n_paths, MAXB, 3)),
        a_envok=np.zeros((n_paths, MAXB), np.uint8),
    )


def default_train_count(scene, fraction=0.025):
    """Training-path budget: a small fraction of the pixel count."""
    w = int(scene.camera[14])
    h = int(scene.camera[15])
    return max(1, int(math.ceil(fraction * w * h)))


def collect_training_records(scene, seed, count, kind="nirc", frame=0):
    """Trace `count` camera paths and distill records of the given kind."""
    if kind not in RECORD_KINDS:
        raise ConfigError(f"unknown record kind '{kind}'")
    ar = _path_arrays(count)
    a_n = np.zeros(count, np.int64)
    collect_env = 1 if (kind in ("nvc", "nirc_env")
                        and scene.pack.env_kind != ENV_NONE) else 0
    if kind in ("nvc", "nirc_env") and collect_env == 0:
        raise ConfigError(f"record kind '{kind}' needs an environment light")
    collect_paths_kernel(scene.pack, scene.camera, np.uint64(seed),
                         np.uint64(frame), *ar.values(), a_n, collect_env)
    live = np.arange(MAXB)[None, :] < a_n[:, None]
    nondelta = ar["a_delta"] == 0
    if kind in ("nirc", "nirc_full"):
        mask = live & nondelta & (ar["a_pdf"] > 0.0)
        dirs = ar["a_wi"][mask]
        target = (ar["a_tgt"] if kind == "nirc" else ar["a_tfull"])[mask]
        pdf = ar["a_pdf"][mask]
        key = mask
    elif kind == "nrc":
        # keyed at the vertex the sampled segment landed on
        arrived = np.zeros_like(live)
        arrived[:, 1:] = live[:, 1:] & nondelta[:, 1:] \
            & (ar["a_pdf"][:, :-1] > 0.0)
        mask = arrived
        dirs = -np.roll(ar["a_wi"], 1, axis=1)[mask]
        target = ar["a_tnrc"][mask]
        pdf = np.roll(ar["a_pdf"], 1, axis=1)[mask]
        key = mask
    else:
        mask = live & nondelta & (ar["a_envok"] == 1)
        dirs = ar["a_envdir"][mask]
        pdf = ar["a_envpdf"][mask]
        if kind == "nvc":
            target = np.repeat(ar["a_envvis"][mask, None], 3, axis=1)
        else:
            target = ar["a_envvis"][mask, None] * ar["a_envrad"][mask]
        key = mask
    return Records(kind=kind,
                   pos=ar["a_pos"][key],
                   ns=ar["a_ns"][key],
                   alb=ar["a_alb"][key],
                   rough=ar["a_rough"][key],
                   dirs=dirs, target=target, pdf=pdf, frame=frame)


def sample_incident_targets(scene, origin, direction, seed, count,
                            prev_pdf=-1.0, prev_ns=(0.0, 0.0, 0.0),
                            frame=0):
    """Independent incident-radiance estimates along one fixed ray.

    Returns (targets, full_targets), each (count, 3): the estimator a
    training record's target comes from, isolated for oracle checks.
    prev_pdf mimics the bsdf pdf the direction would have been sampled
    with (< 0 gives emission full weight, like a camera ray).
    """
    ar = _path_arrays(1)
    rows = [a[0] for a in ar.values()]
    out = np.zeros((count, 3))
    out_full = np.zeros((count, 3))
    o = np.asarray(origin, float)
    d = np.asarray(direction, float)
    incident_targets_kernel(scene.pack, np.uint64(seed), np.uint64(frame),
                            o[0], o[1], o[2], d[0], d[1], d[2],
                            float(prev_pdf), float(prev_ns[0]),
                            float(prev_ns[1]), float(prev_ns[2]),
                            out, out_full, *rows)
    return out, out_full


class Cache:
    """A neural cache bound to one scene: parameters plus optimizer."""

    def __init__(self, kind, scene, spec, theta, adam, loss_kind,
                 record_kind, seed):
        self.kind = kind
        self.scene = scene
        self.spec = spec
        self.theta = theta
        self.adam = adam
        self.loss_kind = loss_kind
        self.record_kind = record_kind
        self.seed = int(seed)
        self.frame = 0
        self.loss_eps = 0.01
        self.running_mean = np.zeros(3)
        self.snapshot_dir = None
        self.has_env = scene.pack.env_kind != ENV_NONE
        self._h1 = np.zeros(max(spec.dims), np.float32)
        self._h2 = np.zeros(max(spec.dims), np.float32)
        self._xin = np.zeros(spec.in_dim, np.float32)

    @classmethod
    def create(cls, kind, scene, seed=0, loss=None, record_kind=None,
               init="zero", levels=12, table_log2=15, feats=2, bands=4,
               depth=4, width=64, lr=0.01):
        if kind not in KINDS:
            raise ConfigError(f"unknown cache kind '{kind}'")
        if loss is None:
            loss = "bce" if kind == "nvc" else "relative_l2"
        if loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss '{loss}'")
        if record_kind is None:
            record_kind = kind
        if record_kind not in RECORD_KINDS:
            raise ConfigError(f"unknown record kind '{record_kind}'")
        pack = scene.pack
        bb_min = np.array(pack.bbox_min, float)
        bb_ext = 1.0 / np.array(pack.bbox_inv_ext, float)
        spec = make_spec(levels=levels, table=1 << table_log2, feats=feats,
                         bands=bands, depth=depth, width=width, out_dim=3,
                         out_act=ACT_SIGMOID if kind == "nvc" else ACT_RELU,
                         bb_min=bb_min, bb_ext=bb_ext)
        out_scale = 0.05 if init == "random" else 0.0
        theta = init_theta(spec, seed=seed, out_scale=out_scale)
        adam = AdamState(theta, lr=lr)
        return cls(kind, scene, spec, theta, adam, loss, record_kind, seed)

    @property
    def is_zero(self):
        lo = self.spec.w_off[-1]
        return not np.any(self.theta[lo:])

    def _query(self, surface, dirs):
        pack = self.scene.pack
        m = surface.mat
        p = surface.position
        n = surface.ns
        a = pack.mat_albedo[m]
        encode_surface_into(self.spec, self.theta,
                            float(p[0]), float(p[1]), float(p[2]),
                            float(n[0]), float(n[1]), float(n[2]),
                            float(a[0]), float(a[1]), float(a[2]),
                            float(pack.mat_rough[m]), self._xin)
        dirs = np.atleast_2d(np.asarray(dirs, float))
        out = np.zeros((dirs.shape[0], 3))
        for k in range(dirs.shape[0]):
            encode_dir_into(self.spec, dirs[k, 0], dirs[k, 1], dirs[k, 2],
                            self._xin)
            out[k] = mlp_forward_s(self.spec, self.theta, self._xin,
                                   self._h1, self._h2)
        return out

    def nirc_query(self, surface, dirs):
        """Predicted incident indirect radiance per direction, (N, 3)."""
        return self._query(surface, dirs)

    def nrc_query(self, surface, wo=None):
        """Predicted outgoing radiance (emission excluded), shape (3,)."""
        if wo is None:
            wo = surface.wo
        return self._query(surface, np.asarray(wo, float)[None, :])[0]

    def nvc_query(self, surface, dirs):
        """Predicted environment visibility per direction, (N, 3) in (0,1)."""
        if not self.has_env:
            raise ConfigError("visibility cache queried on a scene "
                              "without an environment light")
        return self._query(surface, dirs)

    def collect(self, count=None, frame=None):
        if count is None:
            count = default_train_count(self.scene)
        if frame is None:
            frame = self.frame
        return collect_training_records(self.scene, self.seed, count,
                                        self.record_kind, frame)

    def save(self, path):
        st = self.adam
        save_snapshot(path, {
            "theta": self.theta, "m": st.m, "v": st.v,
            "t": np.int64(st.t), "frame": np.int64(self.frame),
            "running_mean": self.running_mean,
            "kind": np.int64(KINDS.index(self.kind)),
            "loss": np.int64(LOSS_KINDS.index(self.loss_kind)),
            "record": np.int64(RECORD_KINDS.index(self.record_kind)),
            "seed": np.int64(self.seed),
            "lr": np.float64(st.lr),
            "net": np.array([self.spec.levels, self.spec.table,
                             self.spec.feats, self.spec.bands,
                             len(self.spec.dims) - 2, self.spec.dims[1]],
                            np.int64),
            "bb_min": np.asarray(self.spec.bb_min, float),
            "bb_ext": 1.0 / np.asarray(self.spec.bb_inv, float),
        })

    @classmethod
    def load(cls, path, scene):
        d = load_snapshot(path)
        net = d["net"]
        kind = KINDS[int(d["kind"])]
        spec = make_spec(levels=int(net[0]), table=int(net[1]),
                         feats=int(net[2]), bands=int(net[3]),
                         depth=int(net[4]), width=int(net[5]), out_dim=3,
                         out_act=ACT_SIGMOID if kind == "nvc" else ACT_RELU,
                         bb_min=d["bb_min"], bb_ext=d["bb_ext"])
        theta = d["theta"].copy()
        adam = AdamState(theta, lr=float(d["lr"]))
        adam.m = d["m"].copy()
        adam.v = d["v"].copy()
        adam.t = int(d["t"])
        cache = cls(kind, scene, spec, theta, adam,
                    LOSS_KINDS[int(d["loss"])],
                    RECORD_KINDS[int(d["record"])], int(d["seed"]))
        cache.frame = int(d["frame"])
        cache.running_mean = d["running_mean"].copy()
        return cache

    def train_frame(self, records, steps=4):
        return train_frame(self, records, steps)


def _dump_diagnostics(cache, step, value):
    out_dir = cache.snapshot_dir or tempfile.gettempdir()
    path = os.path.join(
        out_dir, f"diverged_{cache.kind}_frame{cache.frame}.nncache")
    cache.save(path)
    return (f"non-finite loss ({value}) at frame {cache.frame} step {step}; "
            f"state dumped to {path}")


def train_frame(cache, records, steps=4, batch=None):
    """Run `steps` optimizer updates on one frame of records.

    Returns the per-step loss trace. batch caps the records drawn per
    step (default BATCH_CAP). A non-finite loss halts training with the
    optimizer state written out for inspection.
    """
    n = len(records)
    if n == 0:
        raise ValueError("cannot train on an empty record set")
    cap = BATCH_CAP if batch is None else int(batch)
    if cap < 1:
        raise ValueError(f"batch must be positive, got {batch}")
    spec = cache.spec
    theta = cache.theta
    trace = []
    for s in range(steps):
        u = uniform_array(cache.seed, P_SHUFFLE, cache.frame, n,
                          offset=s * n)
        idx = np.argsort(u, kind="stable")[:min(cap, n)]
        x, entries, weights = encode_batch(
            spec, theta, records.pos[idx], records.ns[idx],
            records.alb[idx], records.rough[idx], records.dirs[idx])
        y, fwd = mlp_forward(spec, theta, x, training=True)
        target = records.target[idx]
        pdf = records.pdf[idx]
        if cache.loss_kind == "l2":
            value, dy = loss_l2(y, target, pdf)
        elif cache.loss_kind == "relative_l2":
            value, dy = loss_relative_l2(y, target, pdf, eps=cache.loss_eps)
        elif cache.loss_kind == "variance":
            dev = np.mean((target - y) / pdf[:, None], axis=0)
            cache.running_mean = (EMA_ALPHA * cache.running_mean
                                  + (1.0 - EMA_ALPHA) * dev)
            value, dy = loss_variance(y, target, pdf, cache.running_mean)
        else:
            value, dy = loss_bce(y, target)
        if not np.isfinite(value):
            raise DivergenceError(_dump_diagnostics(cache, s, value))
        grad = mlp_backward(spec, theta, fwd, dy.astype(x.dtype),
                            entries, weights)
        adam_step(cache.adam, theta, grad)
        trace.append(float(value))
    cache.frame += 1
    return trace
