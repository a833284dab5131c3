"""Runtime scene: flat arrays built from a parsed description.

Geometry, materials, and lights live in a namedtuple of numpy arrays
(``ScnPack``) so the jitted kernels can take the whole scene as one
argument. The Python-level Scene class wraps the pack with convenience
methods used by tests and the CLI.

Conventions:
  - material kinds: 0 lambert, 1 rough conductor, 2 mirror (delta)
  - light kinds in the selection table: 0 triangle, 1 sphere, 2 environment
  - environment kinds: 0 none, 1 constant, 2 sky gradient, 3 lat-long grid
  - emission is two-sided
  - ray epsilon is 1e-4 times the scene bounding-box diagonal
"""

from __future__ import annotations

import hashlib
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .sceneio import parse_scene

MAT_LAMBERT = 0
MAT_CONDUCTOR = 1
MAT_MIRROR = 2

ENV_NONE = 0
ENV_CONSTANT = 1
ENV_SKY = 2
ENV_LATLONG = 3

LIGHT_TRI = 0
LIGHT_SPHERE = 1
LIGHT_ENV = 2

_LUM = np.array([0.2126, 0.7152, 0.0722])

ScnPack = namedtuple(
    "ScnPack",
    [
        "tri_v0", "tri_e1", "tri_e2", "tri_ng", "tri_mat", "tri_area", "tri_lq",
        "sph_c", "sph_r", "sph_mat", "sph_lq",
        "mat_kind", "mat_albedo", "mat_rough", "mat_emit",
        "lt_kind", "lt_prim", "lt_cdf", "lt_q",
        "env_kind", "env_c0", "env_c1", "env_c2", "env_img", "env_q",
        "eps", "bbox_min", "bbox_inv_ext", "diag",
        "bvh_lo", "bvh_hi", "bvh_a", "bvh_b", "bvh_prim",
    ],
)


@dataclass
class Interaction:
    position: np.ndarray
    ng: np.ndarray  # geometric normal, unit
    ns: np.ndarray  # shading normal, unit, same side as wo
    mat: int
    uv: tuple
    wo: np.ndarray
    is_delta: bool
    t: float = 0.0
    prim_kind: int = -1
    prim: int = -1


class Scene:
    def __init__(self, desc, frame=0):
        self.desc = desc
        self.frame = frame
        self._build(frame)

    # -- construction ---------------------------------------------------

    def _build(self, frame):
        desc = self.desc
        mat_names = list(desc.materials)
        mat_index = {n: i for i, n in enumerate(mat_names)}
        kinds = {"lambert": MAT_LAMBERT, "conductor": MAT_CONDUCTOR, "mirror": MAT_MIRROR}

        nm = max(len(mat_names), 1)
        mat_kind = np.zeros(nm, np.int32)
        mat_albedo = np.zeros((nm, 3))
        mat_rough = np.ones(nm)
        mat_emit = np.zeros((nm, 3))
        for i, n in enumerate(mat_names):
            m = desc.materials[n]
            mat_kind[i] = kinds[m.kind]
            mat_albedo[i] = m.albedo
            mat_rough[i] = 1.0 if m.kind == MAT_LAMBERT else m.roughness
            if m.kind == "lambert":
                mat_rough[i] = 1.0
            elif m.kind == "mirror":
                mat_rough[i] = 0.0
            else:
                mat_rough[i] = m.roughness
            mat_emit[i] = m.emit

        offsets = {a.name: np.array(a.translate) for a in desc.anims if frame >= a.frame}

        tv0, te1, te2, tmat, tri_owner = [], [], [], [], []
        sc, sr, smat, sph_owner = [], [], [], []
        for p in desc.prims:
            off = offsets.get(p.name, np.zeros(3))
            mi = mat_index[p.material]
            if p.shape == "sphere":
                sc.append(np.asarray(p.center) + off)
                sr.append(p.radius)
                smat.append(mi)
                sph_owner.append(p.name)
            else:
                pts = [np.asarray(q) + off for q in p.points]
                tris = [(0, 1, 2)] if p.shape == "tri" else [(0, 1, 2), (0, 2, 3)]
                for a, b, c in tris:
                    tv0.append(pts[a])
                    te1.append(pts[b] - pts[a])
                    te2.append(pts[c] - pts[a])
                    tmat.append(mi)
                    tri_owner.append(p.name)

        T = len(tv0)
        S = len(sc)
        tri_v0 = np.array(tv0).reshape(T, 3)
        tri_e1 = np.array(te1).reshape(T, 3)
        tri_e2 = np.array(te2).reshape(T, 3)
        tri_mat = np.array(tmat, np.int32).reshape(T)
        cr = np.cross(tri_e1, tri_e2) if T else np.zeros((0, 3))
        cl = np.linalg.norm(cr, axis=1) if T else np.zeros(0)
        if T and np.any(cl < 1e-12):
            bad = tri_owner[int(np.argmin(cl))]
            raise ConfigError(f"degenerate triangle in object '{bad}'")
        tri_ng = cr / cl[:, None] if T else np.zeros((0, 3))
        tri_area = 0.5 * cl
        sph_c = np.array(sc).reshape(S, 3)
        sph_r = np.array(sr).reshape(S)
        sph_mat = np.array(smat, np.int32).reshape(S)

        # bounds
        pts = [tri_v0, tri_v0 + tri_e1, tri_v0 + tri_e2]
        if S:
            pts += [sph_c - sph_r[:, None], sph_c + sph_r[:, None]]
        allp = np.concatenate([a for a in pts if len(a)]) if (T or S) else np.zeros((1, 3))
        lo = allp.min(axis=0)
        hi = allp.max(axis=0)
        diag = float(np.linalg.norm(hi - lo))
        if diag <= 0.0:
            diag = 1.0
        pad = 1e-4 * diag
        lo = lo - pad
        hi = hi + pad
        ext = np.maximum(hi - lo, 1e-9)

        # environment
        env = desc.environment
        env_kind = {"none": ENV_NONE, "constant": ENV_CONSTANT, "sky": ENV_SKY,
                    "latlong": ENV_LATLONG}[env.kind]
        env_c0 = np.array(env.color if env.kind == "constant" else env.zenith, float)
        env_c1 = np.array(env.horizon, float)
        env_c2 = np.array(env.ground, float)
        env_img = np.zeros((1, 1, 3))
        if env_kind == ENV_LATLONG:
            from .pfm import read_pfm

            env_img = read_pfm(env.path).astype(np.float64)

        # light table, uniform by power
        lk, lp, pw = [], [], []
        for i in range(T):
            e = mat_emit[tri_mat[i]]
            if np.any(e != 0.0):
                lk.append(LIGHT_TRI)
                lp.append(i)
                pw.append(float(_LUM @ e) * tri_area[i] * np.pi)
        for i in range(S):
            e = mat_emit[sph_mat[i]]
            if np.any(e != 0.0):
                lk.append(LIGHT_SPHERE)
                lp.append(i)
                pw.append(float(_LUM @ e) * 4.0 * np.pi * sph_r[i] ** 2 * np.pi)
        if env_kind != ENV_NONE:
            if env_kind == ENV_CONSTANT:
                avg = env_c0
            elif env_kind == ENV_SKY:
                avg = (env_c0 + env_c1 + env_c2) / 3.0
            else:
                avg = env_img.mean(axis=(0, 1))
            p_env = float(_LUM @ avg) * 2.0 * np.pi * (diag / 2.0) ** 2
            if p_env > 0.0:
                lk.append(LIGHT_ENV)
                lp.append(0)
                pw.append(p_env)

        L = len(lk)
        lt_kind = np.array(lk, np.int32).reshape(L)
        lt_prim = np.array(lp, np.int32).reshape(L)
        power = np.array(pw).reshape(L)
        if L and power.sum() > 0.0:
            lt_q = power / power.sum()
        else:
            lt_q = np.full(L, 1.0 / L) if L else np.zeros(0)
        lt_cdf = np.cumsum(lt_q) if L else np.zeros(0)
        if L:
            lt_cdf[-1] = 1.0
        env_q = 0.0
        tri_lq = np.zeros(T)
        sph_lq = np.zeros(S)
        for j in range(L):
            if lt_kind[j] == LIGHT_TRI:
                tri_lq[lt_prim[j]] = lt_q[j]
            elif lt_kind[j] == LIGHT_SPHERE:
                sph_lq[lt_prim[j]] = lt_q[j]
            else:
                env_q = float(lt_q[j])

        from .geometry import build_bvh

        bvh = build_bvh(tri_v0, tri_e1, tri_e2, sph_c, sph_r)

        self.pack = ScnPack(
            tri_v0=tri_v0, tri_e1=tri_e1, tri_e2=tri_e2, tri_ng=tri_ng,
            tri_mat=tri_mat, tri_area=tri_area, tri_lq=tri_lq,
            sph_c=sph_c, sph_r=sph_r, sph_mat=sph_mat, sph_lq=sph_lq,
            mat_kind=mat_kind, mat_albedo=mat_albedo, mat_rough=mat_rough,
            mat_emit=mat_emit,
            lt_kind=lt_kind, lt_prim=lt_prim, lt_cdf=lt_cdf, lt_q=lt_q,
            env_kind=env_kind, env_c0=env_c0, env_c1=env_c1, env_c2=env_c2,
            env_img=env_img, env_q=env_q,
            eps=1e-4 * diag, bbox_min=lo, bbox_inv_ext=1.0 / ext, diag=diag,
            bvh_lo=bvh[0], bvh_hi=bvh[1], bvh_a=bvh[2], bvh_b=bvh[3],
            bvh_prim=bvh[4],
        )
        self.camera = _pack_camera(desc.camera)
        self.width = desc.camera.width
        self.height = desc.camera.height
        self.n_lights = L

    def at_frame(self, frame):
        """Scene state for the given frame (same object if nothing moves)."""
        if frame == self.frame:
            return self
        boundary = any(
            (a.frame <= frame) != (a.frame <= self.frame) for a in self.desc.anims
        )
        if not boundary:
            self.frame = frame
            return self
        return Scene(self.desc, frame)

    def content_hash(self):
        """Digest of the scene as rendered: source text plus whichever
        animation steps have fired. Frames with identical geometry share
        a hash, so disk caches keyed on it stay warm across a run."""
        h = hashlib.sha1(self.desc.source.encode())
        applied = [i for i, a in enumerate(self.desc.anims)
                   if self.frame >= a.frame]
        h.update(repr(applied).encode())
        return h.hexdigest()[:16]

    # -- queries used by tests and high-level code ----------------------

    def intersect(self, origin, direction, t_max=np.inf):
        """Nearest surface hit as an Interaction, or None."""
        from .geometry import intersect_bvh

        o = np.asarray(origin, float)
        d = np.asarray(direction, float)
        kind, prim, t, px, py, pz, nx, ny, nz, mid = intersect_bvh(
            self.pack, o[0], o[1], o[2], d[0], d[1], d[2], t_max
        )
        if kind < 0:
            return None
        ng = np.array([nx, ny, nz])
        wo = -d
        ns = ng if ng @ wo >= 0.0 else -ng
        is_delta = self.pack.mat_kind[mid] == MAT_MIRROR
        return Interaction(
            position=np.array([px, py, pz]), ng=ng, ns=ns, mat=int(mid),
            uv=(0.0, 0.0), wo=wo, is_delta=bool(is_delta), t=float(t),
            prim_kind=int(kind), prim=int(prim),
        )

    def env_radiance(self, direction):
        from .lights import env_eval_s

        d = np.asarray(direction, float)
        r, g, b = env_eval_s(self.pack, d[0], d[1], d[2])
        return np.array([r, g, b])


def _pack_camera(cam):
    fwd = np.asarray(cam.look_at, float) - np.asarray(cam.position, float)
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ConfigError("camera position and look_at coincide")
    fwd = fwd / n
    right = np.cross(fwd, np.asarray(cam.up, float))
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise ConfigError("camera up vector is parallel to the view direction")
    right = right / rn
    up = np.cross(right, fwd)
    out = np.zeros(16)
    out[0:3] = cam.position
    out[3:6] = right
    out[6:9] = up
    out[9:12] = fwd
    out[12] = np.tan(np.radians(cam.fov) * 0.5)
    out[13] = cam.width / cam.height
    out[14] = cam.width
    out[15] = cam.height
    return out


def load_scene(text):
    """Parse and build a scene, positioned at frame 0."""
    return Scene(parse_scene(text), frame=0)


def load_scene_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return load_scene(fh.read())


def builtin_scene_path(name):
    import importlib.resources as res

    base = res.files("nirclab") / "data" / f"{name}.scene"
    return str(base)


def load_builtin(name):
    with open(builtin_scene_path(name), "r", encoding="utf-8") as fh:
        return load_scene(fh.read())


def builtin_names():
    import importlib.resources as res

    base = res.files("nirclab") / "data"
    return sorted(p.name[:-6] for p in base.iterdir()
                  if p.name.endswith(".scene"))
