"""Frame export and loading in a KITTI-style per-tick layout.

Each tick of a stream directory holds two files:

* ``<tick:06d>.bin``: little-endian float32 quadruples ``x, y, z, intensity``
  of the sensor-frame point cloud; intensity is always 0.
* ``<tick:06d>.json``: labels and context. Keys: ``tick_index``,
  ``sim_time_s``, ``gt_boxes`` (rows ``[x, y, z, l, w, h, yaw, class]``),
  ``vehicle_states`` (id, position, yaw, velocity), ``cams_emitted``,
  ``ego_to_world`` (row-major 16 floats mapping sensor frame to world), and
  ``ldms`` (per-vehicle CAM stores) when communication ran.

Everything is written with sorted keys and no timestamps, so identical runs
produce byte-identical datasets.
"""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks.comm import CamMessage
from .scene import BBox3D

POINT_DTYPE = np.dtype("<f4")
_TICK_RE = re.compile(r"^(\d{6})\.bin$")


class DatasetFormatError(ValueError):
    """Raised for malformed frame files."""


@dataclass
class VehiclePose:
    """The per-frame vehicle record: id, pose, and velocity vector."""

    id: str
    position: np.ndarray      # (3,) [m]
    yaw: float
    velocity: np.ndarray      # (3,) [m/s]

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(3)
        self.yaw = float(self.yaw)


@dataclass
class FrameRecord:
    """Everything exported for one tick of one stream."""

    tick_index: int
    sim_time_s: float
    cloud: np.ndarray                 # (N, 3) sensor frame [m]
    gt_boxes: list
    vehicle_states: list              # VehiclePose entries
    cams_emitted: list                # CamMessage entries
    ego_to_world: np.ndarray          # (4, 4)
    ldms: dict | None = None          # per-owner LDM snapshots

    def __post_init__(self):
        self.cloud = np.asarray(self.cloud, dtype=np.float64).reshape(-1, 3)
        self.ego_to_world = np.asarray(self.ego_to_world, dtype=np.float64).reshape(4, 4)


def frame_paths(directory, tick_index: int):
    directory = Path(directory)
    stem = f"{tick_index:06d}"
    return directory / f"{stem}.bin", directory / f"{stem}.json"


def export_frame(record: FrameRecord, directory) -> None:
    """Write one frame's .bin and .json files into the stream directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bin_path, json_path = frame_paths(directory, record.tick_index)

    quads = np.zeros((record.cloud.shape[0], 4), dtype=POINT_DTYPE)
    quads[:, :3] = record.cloud.astype(POINT_DTYPE)
    bin_path.write_bytes(quads.tobytes(order="C"))

    labels = {
        "tick_index": record.tick_index,
        "sim_time_s": record.sim_time_s,
        "gt_boxes": [box.as_row() + [box.label] for box in record.gt_boxes],
        "vehicle_states": [
            {
                "id": v.id,
                "position": [float(x) for x in v.position],
                "yaw": v.yaw,
                "velocity": [float(x) for x in v.velocity],
            }
            for v in record.vehicle_states
        ],
        "cams_emitted": [cam.to_dict() for cam in record.cams_emitted],
        "ego_to_world": [float(x) for x in record.ego_to_world.reshape(-1)],
    }
    if record.ldms is not None:
        labels["ldms"] = record.ldms
    json_path.write_text(json.dumps(labels, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_frame(directory, tick_index: int) -> FrameRecord:
    """Load one frame back; raises FileNotFoundError / DatasetFormatError."""
    bin_path, json_path = frame_paths(directory, tick_index)
    if not bin_path.exists():
        raise FileNotFoundError(f"missing point cloud file: {bin_path}")
    if not json_path.exists():
        raise FileNotFoundError(f"missing label file: {json_path}")

    blob = bin_path.read_bytes()
    if len(blob) % (4 * POINT_DTYPE.itemsize) != 0:
        raise DatasetFormatError(
            f"{bin_path}: size {len(blob)} is not a whole number of xyzi quadruples"
        )
    quads = np.frombuffer(blob, dtype=POINT_DTYPE).reshape(-1, 4)
    cloud = quads[:, :3].astype(np.float64)

    try:
        labels = json.loads(json_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{json_path}: invalid JSON ({exc.msg})") from exc
    try:
        gt_boxes = [
            BBox3D(np.array(row[0:3]), tuple(row[3:6]), row[6], row[7])
            for row in labels["gt_boxes"]
        ]
        vehicles = [
            VehiclePose(v["id"], v["position"], v["yaw"], v["velocity"])
            for v in labels["vehicle_states"]
        ]
        cams = [
            CamMessage(
                c["station_id"], c["generation_time_s"], c["position"],
                c["speed"], c["heading"],
            )
            for c in labels["cams_emitted"]
        ]
        record = FrameRecord(
            tick_index=labels["tick_index"],
            sim_time_s=labels["sim_time_s"],
            cloud=cloud,
            gt_boxes=gt_boxes,
            vehicle_states=vehicles,
            cams_emitted=cams,
            ego_to_world=np.array(labels["ego_to_world"]).reshape(4, 4),
            ldms=labels.get("ldms"),
        )
    except (KeyError, IndexError, TypeError) as exc:
        raise DatasetFormatError(f"{json_path}: {exc!r}") from exc
    return record


def list_ticks(directory) -> list[int]:
    """Sorted tick indices present in a stream directory."""
    directory = Path(directory)
    ticks = []
    for p in directory.iterdir():
        m = _TICK_RE.match(p.name)
        if m:
            ticks.append(int(m.group(1)))
    return sorted(ticks)


def write_metadata(root, metadata: dict) -> None:
    path = Path(root) / "metadata.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(metadata, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_metadata(root) -> dict:
    path = Path(root) / "metadata.json"
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))


class DatasetWriter:
    """Frame sink that lays out ``root/<stream>/`` directories."""

    def __init__(self, root):
        self.root = Path(root)
        self.counts: dict[str, int] = {}

    def accept(self, stream: str, record: FrameRecord) -> None:
        export_frame(record, self.root / stream)
        self.counts[stream] = self.counts.get(stream, 0) + 1

    def finalize(self, metadata: dict) -> None:
        write_metadata(self.root, metadata)
