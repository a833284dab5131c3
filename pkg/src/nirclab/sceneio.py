"""Scene description text format.

Line-oriented blocks of the form ``kind name { key values ... }``; the
name is optional for camera and environment. Keys take fixed-arity
numeric or string arguments. ``#`` starts a comment. Quads expand into
two triangles at build time. Example:

    camera { position 0 1 5  look_at 0 1 0  up 0 1 0  fov 40  resolution 64 64 }
    material white { kind lambert  albedo 0.73 0.73 0.73 }
    material lamp  { kind lambert  albedo 0 0 0  emit 17 12 4 }
    quad floor { material white  p0 0 0 0  p1 1 0 0  p2 1 0 1  p3 0 0 1 }
    sphere ball { material white  center 0.5 0.3 0.5  radius 0.3 }
    environment { kind constant  color 1 1 1 }
    animate lamp { frame 64  translate -2 0 0 }

Environment kinds: ``constant`` (color), ``sky`` (zenith/horizon/ground
gradient), ``latlong`` (path to a PFM, equirectangular). ``animate``
applies a rigid translation to a named object from the given frame
onward. Every primitive whose material has nonzero ``emit`` is
registered as an area light.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError

MATERIAL_KINDS = ("lambert", "conductor", "mirror")


@dataclass
class CameraDesc:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov: float = 40.0
    width: int = 64
    height: int = 64


@dataclass
class MaterialDesc:
    name: str
    kind: str = "lambert"
    albedo: tuple = (0.5, 0.5, 0.5)
    roughness: float = 1.0
    emit: tuple = (0.0, 0.0, 0.0)


@dataclass
class PrimDesc:
    shape: str  # tri | quad | sphere
    name: str
    material: str
    points: list = field(default_factory=list)  # tri: 3, quad: 4
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0


@dataclass
class EnvDesc:
    kind: str = "none"  # none | constant | sky | latlong
    color: tuple = (0.0, 0.0, 0.0)
    zenith: tuple = (0.0, 0.0, 0.0)
    horizon: tuple = (0.0, 0.0, 0.0)
    ground: tuple = (0.0, 0.0, 0.0)
    path: str = ""


@dataclass
class AnimDesc:
    name: str
    frame: int
    translate: tuple


@dataclass
class SceneDesc:
    camera: CameraDesc = None
    materials: dict = field(default_factory=dict)
    prims: list = field(default_factory=list)
    environment: EnvDesc = field(default_factory=EnvDesc)
    anims: list = field(default_factory=list)
    source: str = ""


_TOKEN = re.compile(r"[^\s{}]+|\{|\}")


def _tokenize(text):
    toks = []
    for ln, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        for m in _TOKEN.finditer(body):
            toks.append((m.group(0), ln, m.start() + 1))
    return toks


class _Cursor:
    def __init__(self, toks):
        self.toks = toks
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self, what="token"):
        t = self.peek()
        if t is None:
            last = self.toks[-1] if self.toks else ("", 1, 1)
            raise ParseError(f"unexpected end of input, expected {what}", last[1])
        self.i += 1
        return t


def _floats(cur, n, key):
    vals = []
    for _ in range(n):
        tok, ln, col = cur.next(f"number for '{key}'")
        try:
            vals.append(float(tok))
        except ValueError:
            raise ParseError(f"expected a number for '{key}', got '{tok}'", ln, col)
    return vals


def _block(cur):
    tok, ln, col = cur.next("'{'")
    if tok != "{":
        raise ParseError(f"expected '{{', got '{tok}'", ln, col)
    keys = []
    while True:
        t = cur.peek()
        if t is None:
            raise ParseError("unterminated block", ln)
        if t[0] == "}":
            cur.next()
            return keys
        keys.append(cur.next("key"))


def parse_scene(text):
    """Parse a scene description into a SceneDesc (no geometry built yet)."""
    toks = _tokenize(text)
    cur = _Cursor(toks)
    desc = SceneDesc(source=text)

    while cur.peek() is not None:
        tok, ln, col = cur.next("block kind")
        if tok == "camera":
            desc.camera = _parse_camera(cur)
        elif tok == "material":
            name, nln, _ = cur.next("material name")
            desc.materials[name] = _parse_material(cur, name, nln)
        elif tok in ("tri", "quad", "sphere"):
            name, _, _ = cur.next(f"{tok} name")
            desc.prims.append(_parse_prim(cur, tok, name, ln))
        elif tok == "environment":
            desc.environment = _parse_environment(cur, ln)
        elif tok == "animate":
            name, _, _ = cur.next("object name")
            desc.anims.append(_parse_anim(cur, name, ln))
        else:
            raise ParseError(f"unknown block kind '{tok}'", ln, col)

    _validate(desc)
    return desc


def _kv_iter(cur):
    # yields (key, line, col) from a block body using a nested cursor
    for item in _block(cur):
        yield item


def _parse_camera(cur):
    cam = CameraDesc(
        position=np.array([0.0, 0.0, 5.0]),
        look_at=np.zeros(3),
        up=np.array([0.0, 1.0, 0.0]),
    )
    body = _Cursor(_block(cur))
    while body.peek() is not None:
        key, ln, col = body.next()
        if key == "position":
            cam.position = np.array(_floats(body, 3, key))
        elif key == "look_at":
            cam.look_at = np.array(_floats(body, 3, key))
        elif key == "up":
            cam.up = np.array(_floats(body, 3, key))
        elif key == "fov":
            cam.fov = _floats(body, 1, key)[0]
        elif key == "resolution":
            w, h = _floats(body, 2, key)
            cam.width, cam.height = int(w), int(h)
        else:
            raise ParseError(f"unknown camera key '{key}'", ln, col)
    return cam


def _parse_material(cur, name, ln):
    mat = MaterialDesc(name=name)
    body = _Cursor(_block(cur))
    while body.peek() is not None:
        key, kln, col = body.next()
        if key == "kind":
            tok, tln, tcol = body.next("material kind")
            if tok not in MATERIAL_KINDS:
                raise ParseError(
                    f"unknown material kind '{tok}' (expected one of {', '.join(MATERIAL_KINDS)})",
                    tln,
                    tcol,
                )
            mat.kind = tok
        elif key == "albedo":
            mat.albedo = tuple(_floats(body, 3, key))
        elif key == "roughness":
            mat.roughness = _floats(body, 1, key)[0]
        elif key == "emit":
            mat.emit = tuple(_floats(body, 3, key))
        else:
            raise ParseError(f"unknown material key '{key}'", kln, col)
    if mat.kind == "conductor" and mat.roughness <= 0.0:
        raise ParseError(f"material '{name}': conductor roughness must be > 0", ln)
    if any(c < 0.0 or c > 1.0 for c in mat.albedo):
        raise ParseError(f"material '{name}': albedo out of [0,1]", ln)
    return mat


def _parse_prim(cur, shape, name, ln):
    prim = PrimDesc(shape=shape, name=name, material="")
    body = _Cursor(_block(cur))
    npts = {"tri": 3, "quad": 4}.get(shape, 0)
    pts = {}
    while body.peek() is not None:
        key, kln, col = body.next()
        if key == "material":
            prim.material = body.next("material name")[0]
        elif shape in ("tri", "quad") and re.fullmatch(r"[pv]\d", key):
            pts[int(key[1])] = _floats(body, 3, key)
        elif shape == "sphere" and key == "center":
            prim.center = tuple(_floats(body, 3, key))
        elif shape == "sphere" and key == "radius":
            prim.radius = _floats(body, 1, key)[0]
        else:
            raise ParseError(f"unknown {shape} key '{key}'", kln, col)
    if shape in ("tri", "quad"):
        if sorted(pts) != list(range(npts)):
            raise ParseError(
                f"{shape} '{name}' needs points 0..{npts - 1}, got {sorted(pts)}", ln
            )
        prim.points = [np.array(pts[i]) for i in range(npts)]
    if not prim.material:
        raise ParseError(f"{shape} '{name}' has no material", ln)
    return prim


def _parse_environment(cur, ln):
    env = EnvDesc(kind="constant")
    body = _Cursor(_block(cur))
    while body.peek() is not None:
        key, kln, col = body.next()
        if key == "kind":
            tok = body.next("environment kind")[0]
            if tok not in ("constant", "sky", "latlong"):
                raise ParseError(f"unknown environment kind '{tok}'", kln, col)
            env.kind = tok
        elif key in ("color", "zenith", "horizon", "ground"):
            setattr(env, key, tuple(_floats(body, 3, key)))
        elif key == "path":
            env.path = body.next("path")[0]
        else:
            raise ParseError(f"unknown environment key '{key}'", kln, col)
    return env


def _parse_anim(cur, name, ln):
    frame = None
    translate = None
    body = _Cursor(_block(cur))
    while body.peek() is not None:
        key, kln, col = body.next()
        if key == "frame":
            frame = int(_floats(body, 1, key)[0])
        elif key == "translate":
            translate = tuple(_floats(body, 3, key))
        else:
            raise ParseError(f"unknown animate key '{key}'", kln, col)
    if frame is None or translate is None:
        raise ParseError(f"animate '{name}' needs 'frame' and 'translate'", ln)
    return AnimDesc(name=name, frame=frame, translate=translate)


def _validate(desc):
    if desc.camera is None:
        raise ParseError("scene has no camera block", 1)
    names = set()
    for p in desc.prims:
        if p.material not in desc.materials:
            raise ParseError(
                f"{p.shape} '{p.name}' references undefined material '{p.material}'", 1
            )
        names.add(p.name)
    for a in desc.anims:
        if a.name not in names:
            raise ParseError(f"animate references undefined object '{a.name}'", 1)
    has_light = any(
        any(e != 0.0 for e in desc.materials[p.material].emit) for p in desc.prims
    )
    if not has_light and desc.environment.kind == "none":
        # legal but hopeless; renders would be black. Leave it to run as
        # authored, black scenes are used by tests.
        pass
    return desc
