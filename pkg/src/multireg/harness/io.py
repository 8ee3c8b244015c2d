"""File formats: PLY point clouds, weight files, poses and ground truth JSON."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..attention import WeightSet
from ..errors import ShapeMismatch
from ..geometry import RigidTransform
from ..preprocess import PointCloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def write_ply(path, cloud: PointCloud, binary: bool = True):
    """Write x/y/z as doubles plus an ``instance`` int property when labelled."""
    pts = cloud.points
    has_labels = cloud.labels is not None
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {len(pts)}",
              "property double x", "property double y", "property double z"]
    if has_labels:
        header.append("property int instance")
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            if has_labels:
                fields.append(("instance", "<i4"))
            rec = np.empty(len(pts), dtype=fields)
            rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
            if has_labels:
                rec["instance"] = cloud.labels
            fh.write(rec.tobytes())
        else:
            for i, p in enumerate(pts):
                row = " ".join(repr(float(v)) for v in p)
                if has_labels:
                    row += f" {int(cloud.labels[i])}"
                fh.write((row + "\n").encode("ascii"))


def read_ply(path) -> PointCloud:
    """Read the vertex element of an ASCII or binary little-endian PLY."""
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ValueError("not a PLY file")
        fmt, n_vertex, props, in_vertex = None, None, [], False
        while True:
            line = fh.readline()
            if not line:
                raise ValueError("PLY header not terminated")
            tok = line.decode("ascii").split()
            if not tok or tok[0] in ("comment", "obj_info"):
                continue
            if tok[0] == "end_header":
                break
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    n_vertex = int(tok[2])
                elif n_vertex is None:
                    raise ValueError("vertex element must come first")
            elif tok[0] == "property" and in_vertex:
                if tok[1] == "list":
                    raise ValueError("list properties on vertices are not supported")
                if tok[1] not in _PLY_TYPES:
                    raise ValueError(f"unsupported PLY type {tok[1]}")
                props.append((tok[2], _PLY_TYPES[tok[1]]))
        if n_vertex is None:
            raise ValueError("PLY has no vertex element")
        names = [p[0] for p in props]
        if not {"x", "y", "z"} <= set(names):
            raise ValueError("PLY vertices need x, y and z")
        if fmt == "binary_little_endian":
            dtype = np.dtype([(n, "<" + t) for n, t in props])
            buf = fh.read(dtype.itemsize * n_vertex)
            if len(buf) != dtype.itemsize * n_vertex:
                raise ValueError("PLY body truncated")
            rec = np.frombuffer(buf, dtype=dtype)
            cols = {n: rec[n] for n in names}
        elif fmt == "ascii":
            rows = [fh.readline().split() for _ in range(n_vertex)]
            if any(len(r) < len(props) for r in rows):
                raise ValueError("PLY body truncated")
            arr = np.array([r[:len(props)] for r in rows], dtype=np.float64).reshape(n_vertex, len(props))
            cols = {n: arr[:, i] for i, n in enumerate(names)}
        else:
            raise ValueError(f"unsupported PLY format {fmt}")
    pts = np.column_stack([cols["x"], cols["y"], cols["z"]]).astype(np.float64)
    labels = cols["instance"].astype(np.int64) if "instance" in cols else None
    return PointCloud(pts, labels)


# -- weights --------------------------------------------------------------

def save_weights(path, weights: WeightSet):
    """JSON manifest at ``path`` plus a float32 little-endian blob beside it."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    table, offset = [], 0
    with open(blob_path, "wb") as fh:
        for name, arr in weights.tensors().items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(data.tobytes())
            table.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += data.size
    manifest = {
        "dims": {"d_in": weights.d_in, "d": weights.d, "d_t": weights.d_t},
        "heads": weights.heads,
        "n_iters": weights.n_iters,
        "blob": blob_path.name,
        "dtype": "float32-le",
        "tensors": table,
    }
    path.write_text(json.dumps(manifest, indent=1))


def load_weights(path) -> WeightSet:
    path = Path(path)
    manifest = json.loads(path.read_text())
    blob = np.fromfile(path.parent / manifest["blob"], dtype="<f4")
    tensors = {}
    for entry in manifest["tensors"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + size > len(blob):
            raise ShapeMismatch(f"tensor {entry['name']} runs past the end of the blob")
        tensors[entry["name"]] = blob[start:start + size].reshape(entry["shape"]).astype(np.float64)
    return WeightSet.from_tensors(tensors, manifest["heads"], manifest["n_iters"])


# -- poses and ground truth ------------------------------------------------

def pose_to_json(pose: RigidTransform, **extra) -> dict:
    return {"rotation": [float(v) for v in pose.rotation.reshape(-1)],
            "translation": [float(v) for v in pose.translation], **extra}


def pose_from_json(obj: dict) -> RigidTransform:
    return RigidTransform(np.asarray(obj["rotation"], float).reshape(3, 3), obj["translation"])


def write_poses(path, hypotheses: list):
    out = [pose_to_json(h.pose, inlier_count=int(h.inlier_count), inlier_ratio=float(h.inlier_ratio))
           for h in hypotheses]
    Path(path).write_text(json.dumps(out, indent=1))


def read_poses(path) -> list:
    return [pose_from_json(o) for o in json.loads(Path(path).read_text())]


def write_ground_truth(path, gt):
    data = {
        "poses": [pose_to_json(p) for p in gt.poses],
        "visible": [float(v) for v in gt.visible],
        "diameter": gt.diameter,
        "symmetric": bool(gt.symmetric),
    }
    Path(path).write_text(json.dumps(data, indent=1))


def read_ground_truth(path):
    from .scene import GroundTruth

    data = json.loads(Path(path).read_text())
    return GroundTruth(
        poses=[pose_from_json(p) for p in data["poses"]],
        labels=np.zeros(0, dtype=np.int64),
        visible=np.asarray(data.get("visible", []), float),
        diameter=float(data["diameter"]),
        symmetric=bool(data.get("symmetric", False)),
    )
