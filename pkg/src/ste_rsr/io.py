"""File formats: correspondence CSV, pose JSON, n-view block JSON, scene JSON/CSV."""
from __future__ import annotations

import contextlib
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .core import Subspace
from .epipolar import DEFAULT_K, CorrespondenceSet
from .nview import NViewEssential, assemble

SCHEMA_VERSION = "1.0"

CORR_HEADER = ["x1", "y1", "x2", "y2"]


class FormatError(ValueError):
    """Malformed input file."""


def dump_json(obj: dict, path) -> None:
    obj = {"schema_version": SCHEMA_VERSION, **obj}
    text = json.dumps(obj, indent=2, sort_keys=False)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).write_text(text + "\n")


def load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise FormatError(f"{path}: file not found") from None
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from None


# correspondences ------------------------------------------------------------

def _open_out(path):
    if path in (None, "-"):
        return contextlib.nullcontext(sys.stdout)
    return open(path, "w", newline="")


def write_correspondences_csv(corr: CorrespondenceSet, path) -> None:
    with_mask = corr.inlier_mask is not None
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CORR_HEADER + (["is_inlier"] if with_mask else []))
        for k in range(corr.N):
            row = [repr(float(corr.pts_a[0, k])), repr(float(corr.pts_a[1, k])),
                   repr(float(corr.pts_b[0, k])), repr(float(corr.pts_b[1, k]))]
            if with_mask:
                row.append(int(corr.inlier_mask[k]))
            w.writerow(row)


def read_correspondences_csv(path, pose: dict | None = None) -> CorrespondenceSet:
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise FormatError(f"{path}: file not found") from None
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:4] != CORR_HEADER or len(header) > 5 or (len(header) == 5 and header[4] != "is_inlier"):
        raise FormatError(f"{path}: header must be x1,y1,x2,y2[,is_inlier], got {','.join(header)}")
    xy, mask = [], []
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise FormatError(f"{path}:{ln}: expected {len(header)} fields, got {len(row)}")
        try:
            xy.append([float(v) for v in row[:4]])
            if len(header) == 5:
                mask.append(bool(int(row[4])))
        except ValueError:
            raise FormatError(f"{path}:{ln}: non-numeric field") from None
    if len(xy) < 8:
        raise FormatError(f"{path}: need at least 8 correspondences, got {len(xy)}")
    xy = np.array(xy)
    kw = {}
    if mask:
        kw["inlier_mask"] = np.array(mask)
    if pose is not None:
        kw.update(R=pose["R"], t=pose["t"], K=pose.get("K", DEFAULT_K))
    return CorrespondenceSet.from_pixels(xy[:, :2], xy[:, 2:], **kw)


def pose_to_dict(R, t, K=None) -> dict:
    d = {"R": np.asarray(R, float).ravel().tolist(), "t": np.asarray(t, float).ravel().tolist()}
    if K is not None:
        d["K"] = np.asarray(K, float).ravel().tolist()
    return d


def read_pose_json(path) -> dict:
    obj = load_json(path)
    try:
        R = np.asarray(obj["R"], dtype=float).reshape(3, 3)
        t = np.asarray(obj["t"], dtype=float).reshape(3)
        out = {"R": R, "t": t}
        if "K" in obj:
            out["K"] = np.asarray(obj["K"], dtype=float).reshape(3, 3)
    except (KeyError, ValueError, TypeError) as e:
        raise FormatError(f"{path}: pose must hold R (9 floats, row-major) and t (3 floats): {e}") from None
    return out


# n-view blocks ---------------------------------------------------------------

def blocks_to_list(E: NViewEssential) -> list[dict]:
    out = []
    for i in range(E.n):
        for j in range(i + 1, E.n):
            if E.mask[i, j]:
                lam = float(E.scales[i, j]) or 1.0
                out.append({"i": i, "j": j, "E": (E.block(i, j) / lam).ravel().tolist(), "lambda": lam})
    return out


def read_blocks_json(path) -> NViewEssential:
    obj = load_json(path)
    n = None
    if isinstance(obj, dict):
        n = obj.get("n")
        obj = obj.get("blocks")
    if not isinstance(obj, list):
        raise FormatError(f"{path}: expected a list of blocks or an object with 'blocks'")
    blocks, scales = {}, {}
    for k, b in enumerate(obj):
        try:
            i, j = int(b["i"]), int(b["j"])
            E = np.asarray(b["E"], dtype=float).reshape(3, 3)
            lam = float(b.get("lambda", 1.0))
        except (KeyError, ValueError, TypeError) as e:
            raise FormatError(f"{path}: block {k} malformed ({e}); need i, j, E (9 floats), lambda") from None
        blocks[(i, j)] = E
        scales[(i, j)] = lam
    if not blocks:
        raise FormatError(f"{path}: no blocks")
    if n is None:
        n = 1 + max(max(i, j) for i, j in blocks)
    try:
        return assemble(blocks, int(n), scales)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


# haystack scenes ---------------------------------------------------------------

def scene_to_dict(scene) -> dict:
    return {
        "D": scene.truth.D,
        "d": scene.truth.d,
        "data": scene.data.T.tolist(),
        "truth": scene.truth.basis.T.tolist(),
        "inlier_mask": scene.inlier_mask.astype(int).tolist(),
    }


def write_scene_csv(scene, path) -> None:
    D = scene.data.shape[0]
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k}" for k in range(D)] + ["is_inlier"])
        for col, m in zip(scene.data.T, scene.inlier_mask):
            w.writerow([repr(float(v)) for v in col] + [int(m)])


def read_scene_json(path):
    from .synth import SyntheticScene

    obj = load_json(path)
    try:
        X = np.asarray(obj["data"], dtype=float).T
        L = Subspace(np.asarray(obj["truth"], dtype=float).T)
        m = np.asarray(obj["inlier_mask"], dtype=bool)
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: malformed scene ({e})") from None
    return SyntheticScene(X, L, m, np.eye(L.d), np.eye(L.D))
