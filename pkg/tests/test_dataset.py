"""Frame export format: round trips, byte determinism, corruption handling."""

import json

import numpy as np
import pytest

from advsim.attacks.comm import CamMessage
from advsim.dataset import (
    DatasetFormatError,
    DatasetWriter,
    FrameRecord,
    VehiclePose,
    export_frame,
    frame_paths,
    list_ticks,
    load_frame,
    load_metadata,
    write_metadata,
)
from advsim.scene import BBox3D


def sample_record(tick=3):
    rng = np.random.default_rng(tick)
    cloud = rng.uniform(-5, 5, size=(20, 3))
    return FrameRecord(
        tick_index=tick,
        sim_time_s=tick * 0.1,
        cloud=cloud,
        gt_boxes=[BBox3D(np.array([4.0, 1.0, -1.0]), (4.5, 1.8, 1.6), 0.25)],
        vehicle_states=[
            VehiclePose("ego", [0.0, 0.0, 0.8], 0.0, [5.0, 0.0, 0.0]),
            VehiclePose("npc", [9.0, 2.0, 0.8], 0.1, [4.0, 0.4, 0.0]),
        ],
        cams_emitted=[CamMessage("npc", tick * 0.1, [9.0, 2.0, 0.8], 4.0, 0.1)],
        ego_to_world=np.eye(4),
        ldms={"ego": {"npc": [CamMessage("npc", 0.1, [9, 2, 0.8], 4.0, 0.1).to_dict()]}},
    )


def test_round_trip(tmp_path):
    rec = sample_record()
    export_frame(rec, tmp_path)
    back = load_frame(tmp_path, 3)
    assert back.tick_index == 3
    assert back.sim_time_s == rec.sim_time_s
    # clouds survive up to the float32 storage precision
    np.testing.assert_allclose(back.cloud, rec.cloud, atol=1e-6)
    assert len(back.gt_boxes) == 1
    assert back.gt_boxes[0].dims == (4.5, 1.8, 1.6)
    assert back.gt_boxes[0].yaw == pytest.approx(0.25)
    assert [v.id for v in back.vehicle_states] == ["ego", "npc"]
    np.testing.assert_array_equal(back.ego_to_world, np.eye(4))
    assert back.cams_emitted[0].station_id == "npc"
    assert back.ldms == rec.ldms


def test_bin_layout_is_xyzi_float32(tmp_path):
    rec = sample_record()
    export_frame(rec, tmp_path)
    bin_path, _ = frame_paths(tmp_path, 3)
    raw = np.frombuffer(bin_path.read_bytes(), dtype="<f4").reshape(-1, 4)
    assert raw.shape == (20, 4)
    np.testing.assert_array_equal(raw[:, 3], 0.0)
    np.testing.assert_array_equal(raw[:, :3], rec.cloud.astype("<f4"))


def test_export_is_byte_deterministic(tmp_path):
    rec = sample_record()
    export_frame(rec, tmp_path / "a")
    export_frame(rec, tmp_path / "b")
    for name in ("000003.bin", "000003.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_json_sorted_keys(tmp_path):
    export_frame(sample_record(), tmp_path)
    _, json_path = frame_paths(tmp_path, 3)
    doc = json.loads(json_path.read_text())
    assert list(doc) == sorted(doc)


def test_list_ticks_sorted(tmp_path):
    for tick in (12, 0, 5):
        export_frame(sample_record(tick), tmp_path)
    (tmp_path / "notes.txt").write_text("ignored")
    assert list_ticks(tmp_path) == [0, 5, 12]


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_frame(tmp_path, 0)
    export_frame(sample_record(0), tmp_path)
    frame_paths(tmp_path, 0)[1].unlink()
    with pytest.raises(FileNotFoundError):
        load_frame(tmp_path, 0)


def test_truncated_bin_rejected(tmp_path):
    export_frame(sample_record(0), tmp_path)
    bin_path, _ = frame_paths(tmp_path, 0)
    bin_path.write_bytes(bin_path.read_bytes()[:-3])
    with pytest.raises(DatasetFormatError):
        load_frame(tmp_path, 0)


def test_corrupt_json_rejected(tmp_path):
    export_frame(sample_record(0), tmp_path)
    _, json_path = frame_paths(tmp_path, 0)
    json_path.write_text("{not json")
    with pytest.raises(DatasetFormatError):
        load_frame(tmp_path, 0)


def test_missing_label_key_rejected(tmp_path):
    export_frame(sample_record(0), tmp_path)
    _, json_path = frame_paths(tmp_path, 0)
    doc = json.loads(json_path.read_text())
    del doc["gt_boxes"]
    json_path.write_text(json.dumps(doc))
    with pytest.raises(DatasetFormatError):
        load_frame(tmp_path, 0)


def test_metadata_round_trip(tmp_path):
    assert load_metadata(tmp_path) == {}
    write_metadata(tmp_path, {"ticks": 5, "streams": ["clean"]})
    assert load_metadata(tmp_path) == {"ticks": 5, "streams": ["clean"]}


def test_writer_streams_and_counts(tmp_path):
    writer = DatasetWriter(tmp_path)
    writer.accept("clean", sample_record(0))
    writer.accept("clean", sample_record(1))
    writer.accept("adv", sample_record(0))
    writer.finalize({"ticks": 2})
    assert writer.counts == {"clean": 2, "adv": 1}
    assert list_ticks(tmp_path / "clean") == [0, 1]
    assert list_ticks(tmp_path / "adv") == [0]
    assert load_metadata(tmp_path)["ticks"] == 2
