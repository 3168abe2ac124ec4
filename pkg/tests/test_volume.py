import json

import numpy as np
import pytest

from cellvox import IntensityVolume, LabelVolume, mask_iou, volume_read, volume_write
from cellvox.errors import (
    DimsMismatchError,
    EmptyOperandsError,
    HeaderMalformedError,
    InvariantViolationError,
    PayloadSizeMismatchError,
    UnknownDtypeError,
)


def test_roundtrip_u8(tmp_path):
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=(4, 4, 4)).astype(np.uint8)
    vol = IntensityVolume(raw / 255.0, dtype_tag="u8")
    volume_write(vol, tmp_path / "v")
    back = volume_read(tmp_path / "v")
    assert isinstance(back, IntensityVolume)
    assert back.dtype_tag == "u8"
    np.testing.assert_array_equal(back.data, vol.data)


def test_roundtrip_u16_and_normalization(tmp_path):
    raw = np.zeros((3, 2, 1), dtype=np.uint16)
    raw[0, 0, 0] = 65535
    vol = IntensityVolume(raw / 65535.0, dtype_tag="u16")
    volume_write(vol, tmp_path / "v")
    back = volume_read(tmp_path / "v")
    assert back.data[0, 0, 0] == 1.0
    header = json.loads((tmp_path / "v.json").read_text())
    assert header["dims"] == [3, 2, 1]
    assert (tmp_path / "v.raw").stat().st_size == 6 * 2


def test_roundtrip_f32(tmp_path):
    rng = np.random.default_rng(1)
    vol = IntensityVolume(rng.random((5, 3, 2)).astype(np.float32), dtype_tag="f32")
    volume_write(vol, tmp_path / "v")
    back = volume_read(tmp_path / "v")
    np.testing.assert_array_equal(back.data, vol.data)


def test_roundtrip_labels(tmp_path):
    rng = np.random.default_rng(2)
    lab = LabelVolume(rng.integers(0, 5, size=(6, 5, 4)))
    volume_write(lab, tmp_path / "l")
    back = volume_read(tmp_path / "l")
    assert isinstance(back, LabelVolume)
    np.testing.assert_array_equal(back.data, lab.data)


def test_write_is_deterministic(tmp_path):
    vol = IntensityVolume(np.zeros((2, 2, 2)), dtype_tag="u8")
    volume_write(vol, tmp_path / "a")
    volume_write(vol, tmp_path / "b")
    assert (tmp_path / "a.raw").read_bytes() == (tmp_path / "b.raw").read_bytes()
    assert (tmp_path / "a.raw").read_bytes() == bytes(8)
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()


def test_payload_order_is_x_fastest(tmp_path):
    data = np.arange(8, dtype=np.float64).reshape(2, 2, 2) / 10.0
    vol = IntensityVolume(data, dtype_tag="f32")
    volume_write(vol, tmp_path / "v")
    payload = np.frombuffer((tmp_path / "v.raw").read_bytes(), dtype="<f4")
    # linear index x + nx*(y + ny*z)
    expected = [data[x, y, z] for z in range(2) for y in range(2) for x in range(2)]
    np.testing.assert_allclose(payload, np.array(expected, dtype=np.float32))


def test_truncated_payload(tmp_path):
    vol = IntensityVolume(np.zeros((4, 4, 4)), dtype_tag="u8")
    volume_write(vol, tmp_path / "v")
    raw = (tmp_path / "v.raw").read_bytes()
    (tmp_path / "v.raw").write_bytes(raw[:-1])
    with pytest.raises(PayloadSizeMismatchError):
        volume_read(tmp_path / "v")


def test_unknown_dtype(tmp_path):
    vol = IntensityVolume(np.zeros((2, 2, 2)), dtype_tag="u8")
    volume_write(vol, tmp_path / "v")
    header = json.loads((tmp_path / "v.json").read_text())
    header["dtype"] = "i64"
    (tmp_path / "v.json").write_text(json.dumps(header))
    with pytest.raises(UnknownDtypeError):
        volume_read(tmp_path / "v")


def test_malformed_headers(tmp_path):
    vol = IntensityVolume(np.zeros((2, 2, 2)), dtype_tag="u8")
    volume_write(vol, tmp_path / "v")
    base = json.loads((tmp_path / "v.json").read_text())

    for mutate in (
        lambda h: h.pop("dims"),
        lambda h: h.update(dims=[2, 2]),
        lambda h: h.update(order="z-fastest"),
        lambda h: h.update(kind="mystery"),
        lambda h: h.update(extra_key=1),
    ):
        h = dict(base)
        mutate(h)
        (tmp_path / "v.json").write_text(json.dumps(h))
        with pytest.raises(HeaderMalformedError):
            volume_read(tmp_path / "v")

    (tmp_path / "v.json").write_text("{broken")
    with pytest.raises(HeaderMalformedError):
        volume_read(tmp_path / "v")


def test_f32_label_rejected(tmp_path):
    vol = IntensityVolume(np.zeros((2, 2, 2)), dtype_tag="f32")
    volume_write(vol, tmp_path / "v")
    header = json.loads((tmp_path / "v.json").read_text())
    header["kind"] = "label"
    (tmp_path / "v.json").write_text(json.dumps(header))
    with pytest.raises(HeaderMalformedError):
        volume_read(tmp_path / "v")


def test_intensity_range_enforced():
    with pytest.raises(InvariantViolationError):
        IntensityVolume(np.full((2, 2, 2), 1.5))
    with pytest.raises(InvariantViolationError):
        LabelVolume(np.full((2, 2, 2), -1))


def test_label_inventory():
    data = np.zeros((4, 4, 4), dtype=np.int32)
    data[0, 0, 0] = 3
    data[1:3, 1:3, 1:3] = 7
    lab = LabelVolume(data)
    np.testing.assert_array_equal(lab.labels(), [3, 7])
    assert lab.instance_sizes() == {3: 1, 7: 8}


def test_mask_iou_identity_and_disjoint():
    data = np.zeros((4, 4, 4), dtype=np.int32)
    data[:2] = 1
    data[2:] = 2
    lab = LabelVolume(data)
    assert mask_iou(lab.mask(1), lab.mask(1)) == 1.0
    # instances of one label volume partition the voxels: disjoint
    assert mask_iou(lab.mask(1), lab.mask(2)) == 0.0


def test_mask_iou_matches_triple_loop():
    rng = np.random.default_rng(3)
    a = rng.random((8, 8, 8)) > 0.6
    b = rng.random((8, 8, 8)) > 0.6
    inter = union = 0
    for x in range(8):
        for y in range(8):
            for z in range(8):
                inter += a[x, y, z] and b[x, y, z]
                union += a[x, y, z] or b[x, y, z]
    assert mask_iou(a, b) == inter / union


def test_mask_iou_errors():
    with pytest.raises(EmptyOperandsError):
        mask_iou(np.zeros((2, 2, 2), bool), np.zeros((2, 2, 2), bool))
    with pytest.raises(DimsMismatchError):
        mask_iou(np.ones((2, 2, 2), bool), np.ones((3, 2, 2), bool))


def test_mask_iou_empty_one_side():
    a = np.zeros((2, 2, 2), bool)
    b = np.ones((2, 2, 2), bool)
    assert mask_iou(a, b) == 0.0
