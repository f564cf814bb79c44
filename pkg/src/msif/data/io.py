"""On-disk dataset format.

A dataset root holds one directory per scene::

    scene_<k>/meta            text header, ``key = value`` per line
    scene_<k>/frames/<t>.pgm  binary 16-bit PGM (P5, maxval 65535, big-endian)
    scene_<k>/tracks.csv      frame,object_id,x_tl,y_tl,x_br,y_br (header row)
    scene_<k>/flow/<t>.flo    Middlebury flow, flow from frame t-1 to t
                              (``0.flo`` is all zeros)
"""
import csv
import re
import struct
from pathlib import Path

import numpy as np

from msif.data.synth import QUANT, ObjectTrack, SceneSequence

DATASET_VERSION = 1
FLO_MAGIC = b"PIEH"
_TRACK_COLUMNS = ["frame", "object_id", "x_tl", "y_tl", "x_br", "y_br"]


class DatasetError(Exception):
    pass


class DatasetVersionError(DatasetError):
    pass


class CorruptDatasetError(DatasetError):
    pass


class MissingDatasetError(DatasetError, FileNotFoundError):
    pass


# -- PGM ---------------------------------------------------------------

def write_pgm16(path, image):
    img = np.asarray(image, dtype=np.float64)
    H, W = img.shape
    q = np.round(np.clip(img, 0.0, 1.0) * QUANT).astype(">u2")
    Path(path).write_bytes(f"P5\n{W} {H}\n{QUANT}\n".encode("ascii") + q.tobytes())


def read_pgm16(path):
    path = Path(path)
    if not path.is_file():
        raise MissingDatasetError(f"missing frame file: {path}")
    buf = path.read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)").match(buf, pos)
        if m is None:
            raise CorruptDatasetError(f"{path}: truncated PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P5":
        raise CorruptDatasetError(f"{path}: not a binary PGM")
    try:
        W, H, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise CorruptDatasetError(f"{path}: malformed PGM header") from None
    if maxval != QUANT:
        raise CorruptDatasetError(f"{path}: expected 16-bit PGM (maxval {QUANT}), got {maxval}")
    pos += 1  # single whitespace byte after maxval
    need = 2 * W * H
    if len(buf) - pos != need:
        raise CorruptDatasetError(f"{path}: expected {need} payload bytes, found {len(buf) - pos}")
    q = np.frombuffer(buf, dtype=">u2", count=W * H, offset=pos).reshape(H, W)
    return q.astype(np.float64) / QUANT


# -- Middlebury .flo ---------------------------------------------------

def write_flo(path, u, v):
    u = np.asarray(u)
    H, W = u.shape
    data = np.empty((H, W, 2), dtype="<f4")
    data[..., 0] = u
    data[..., 1] = v
    Path(path).write_bytes(FLO_MAGIC + struct.pack("<ii", W, H) + data.tobytes())


def read_flo(path):
    """Return ``(u, v)`` float64 arrays from a Middlebury ``.flo`` file."""
    path = Path(path)
    if not path.is_file():
        raise MissingDatasetError(f"missing flow file: {path}")
    buf = path.read_bytes()
    if len(buf) < 12 or buf[:4] != FLO_MAGIC:
        raise CorruptDatasetError(f"{path}: bad .flo magic")
    W, H = struct.unpack("<ii", buf[4:12])
    if W <= 0 or H <= 0 or len(buf) != 12 + 8 * W * H:
        raise CorruptDatasetError(f"{path}: size does not match {W}x{H} header")
    data = np.frombuffer(buf, dtype="<f4", offset=12).reshape(H, W, 2).astype(np.float64)
    return data[..., 0].copy(), data[..., 1].copy()


# -- scenes ------------------------------------------------------------

def _write_meta(path, scene):
    lines = [
        f"version = {DATASET_VERSION}",
        f"height = {scene.height}",
        f"width = {scene.width}",
        f"frames = {scene.n_frames}",
        f"fps = {scene.frame_rate_hz!r}",
        f"gamma = {scene.gamma_applied!r}",
        f"seed = {scene.seed if scene.seed is not None else 'none'}",
        f"flow = {'yes' if scene.flows is not None else 'no'}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_meta(path):
    path = Path(path)
    if not path.is_file():
        raise MissingDatasetError(f"missing scene header: {path}")
    meta = {}
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CorruptDatasetError(f"{path}:{ln}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        meta[k] = v
    if "version" not in meta:
        raise CorruptDatasetError(f"{path}: no version field")
    if meta["version"] != str(DATASET_VERSION):
        raise DatasetVersionError(f"{path}: dataset version {meta['version']}, expected {DATASET_VERSION}")
    try:
        return {
            "height": int(meta["height"]), "width": int(meta["width"]), "frames": int(meta["frames"]),
            "fps": float(meta["fps"]), "gamma": float(meta["gamma"]),
            "seed": None if meta.get("seed", "none") == "none" else int(meta["seed"]),
            "flow": meta.get("flow", "no") == "yes",
        }
    except (KeyError, ValueError) as exc:
        raise CorruptDatasetError(f"{path}: bad header field ({exc})") from None


def save_scene(directory, scene):
    d = Path(directory)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    _write_meta(d / "meta", scene)
    for t, frame in enumerate(scene.frames):
        write_pgm16(d / "frames" / f"{t}.pgm", frame)
    with open(d / "tracks.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_TRACK_COLUMNS)
        for tr in scene.tracks:
            for f in tr.frames:
                w.writerow([f, tr.object_id, *(repr(float(c)) for c in tr.states[f])])
    if scene.flows is not None:
        (d / "flow").mkdir(exist_ok=True)
        for t, fl in enumerate(scene.flows):
            write_flo(d / "flow" / f"{t}.flo", fl.u, fl.v)
    return d


def load_scene(directory):
    from msif.flow import FlowField

    d = Path(directory)
    if not d.is_dir():
        raise MissingDatasetError(f"scene directory not found: {d}")
    meta = _read_meta(d / "meta")
    frames = np.empty((meta["frames"], meta["height"], meta["width"]))
    for t in range(meta["frames"]):
        img = read_pgm16(d / "frames" / f"{t}.pgm")
        if img.shape != frames.shape[1:]:
            raise CorruptDatasetError(f"{d}/frames/{t}.pgm: shape {img.shape} != header {frames.shape[1:]}")
        frames[t] = img
    tpath = d / "tracks.csv"
    if not tpath.is_file():
        raise MissingDatasetError(f"missing tracks file: {tpath}")
    states = {}
    with open(tpath, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _TRACK_COLUMNS:
            raise CorruptDatasetError(f"{tpath}: header must be {','.join(_TRACK_COLUMNS)}")
        for ln, row in enumerate(reader, 2):
            if len(row) != 6:
                raise CorruptDatasetError(f"{tpath}:{ln}: expected 6 columns")
            try:
                f, oid = int(row[0]), int(row[1])
                box = tuple(float(x) for x in row[2:])
            except ValueError:
                raise CorruptDatasetError(f"{tpath}:{ln}: malformed row") from None
            states.setdefault(oid, {})[f] = box
    tracks = tuple(ObjectTrack(oid, s) for oid, s in sorted(states.items()))
    flows = None
    if meta["flow"]:
        flows = []
        for t in range(meta["frames"]):
            u, v = read_flo(d / "flow" / f"{t}.flo")
            flows.append(FlowField(u, v))
        flows = tuple(flows)
    try:
        return SceneSequence(frames, tracks, meta["fps"], meta["gamma"], meta["seed"], flows)
    except ValueError as exc:
        raise CorruptDatasetError(f"{d}: {exc}") from None


def save_dataset(root, scenes):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    return [save_scene(root / f"scene_{k}", s) for k, s in enumerate(scenes)]


def scene_dirs(root):
    root = Path(root)
    if not root.is_dir():
        raise MissingDatasetError(f"dataset directory not found: {root}")
    dirs = [p for p in root.iterdir() if p.is_dir() and re.fullmatch(r"scene_\d+", p.name)]
    if not dirs:
        raise MissingDatasetError(f"no scene_<k> directories under {root}")
    return sorted(dirs, key=lambda p: int(p.name.split("_")[1]))


def load_dataset(root):
    return [load_scene(d) for d in scene_dirs(root)]
