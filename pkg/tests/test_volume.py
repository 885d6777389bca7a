import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dwimpute.manifest import DatasetManifest, ScanRecord, validate_manifest
from dwimpute.volume import (
    InvalidDimsError, RangeError, SizeMismatchError, Volume3D, VolumeNotFoundError,
    minmax_normalize, read_volume, write_volume,
)


def vol(values, shape=None):
    a = np.asarray(values, dtype=np.float32)
    return Volume3D(a.reshape(shape or (len(a), 1, 1)))


@pytest.mark.parametrize("raw, expected", [
    ([2, 4, 6], [0, 0.5, 1]),
    ([5, 5, 5], [0, 0, 0]),
    ([0, 0.25, 1], [0, 0.25, 1]),
])
def test_minmax_examples(raw, expected):
    out = minmax_normalize(vol(raw))
    assert out.range_tag == "unit"
    np.testing.assert_array_equal(out.voxels.ravel(), np.float32(expected))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40))
def test_minmax_idempotent_and_spans_unit(values):
    v = vol(values)
    once = minmax_normalize(v)
    if np.ptp(v.voxels) > 0:
        assert once.voxels.min() == 0 and once.voxels.max() == 1
        assert minmax_normalize(once.with_voxels(once.voxels, "raw")) == once
    assert 0 <= once.voxels.min() and once.voxels.max() <= 1


def test_volume_invariants():
    with pytest.raises(InvalidDimsError):
        Volume3D(np.zeros((0, 2, 2)))
    with pytest.raises(InvalidDimsError):
        Volume3D(np.zeros((2, 2, 2)), spacing_mm=(1, 0, 1))
    with pytest.raises(RangeError):
        Volume3D(np.full((2, 2, 2), 1.5), range_tag="unit")


def test_roundtrip_zeros(tmp_path):
    v = Volume3D.zeros((2, 2, 2))
    write_volume(v, tmp_path / "z.vol")
    assert read_volume(tmp_path / "z.vol") == v
    header = json.loads((tmp_path / "z.vol.json").read_text())
    assert set(header) >= {"dims", "spacing_mm", "range_tag", "schema_version"}


def test_roundtrip_random_bitwise(tmp_path):
    rng = np.random.default_rng(11)
    v = Volume3D(rng.standard_normal((16, 16, 16)), spacing_mm=(2.0, 2.0, 2.5))
    write_volume(v, tmp_path / "r.vol")
    payload = (tmp_path / "r.vol").read_bytes()
    assert payload == v.voxels.astype("<f4").tobytes()
    back = read_volume(tmp_path / "r.vol")
    assert back.voxels.tobytes() == v.voxels.tobytes()
    assert back == v


def test_z_fastest_order(tmp_path):
    a = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    write_volume(Volume3D(a), tmp_path / "o.vol")
    flat = np.frombuffer((tmp_path / "o.vol").read_bytes(), "<f4")
    # element (0, 0, 1) is the second value on disk
    assert flat[1] == a[0, 0, 1]


def test_read_errors(tmp_path):
    with pytest.raises(VolumeNotFoundError):
        read_volume(tmp_path / "missing.vol")
    write_volume(Volume3D.zeros((2, 2, 2)), tmp_path / "s.vol")
    (tmp_path / "s.vol").write_bytes(b"\0" * 28)  # 7 voxels
    with pytest.raises(SizeMismatchError):
        read_volume(tmp_path / "s.vol")
    header = json.loads((tmp_path / "s.vol.json").read_text())
    header["dims"] = [0, 2, 2]
    (tmp_path / "s.vol.json").write_text(json.dumps(header))
    with pytest.raises(InvalidDimsError):
        read_volume(tmp_path / "s.vol")


def rec(subject, scan, split="train", t1=True, dwi=True, dx="CN"):
    return ScanRecord(subject, scan, dx, t1, dwi, f"{scan}_t1.vol" if t1 else None,
                      f"{scan}_fa.vol" if dwi else None, split)


def test_manifest_examples():
    ok = DatasetManifest([rec("s1", "a"), rec("s2", "b", "val"), rec("s3", "c", "test", dwi=False)])
    assert validate_manifest(ok) == []

    leak = DatasetManifest([rec("s1", "a", "train"), rec("s1", "b", "test")])
    v = validate_manifest(leak)
    assert [x.rule for x in v] == ["subject-disjoint"]
    assert set(v[0].records) == {"a", "b"}

    bad = rec("s1", "a")
    bad.has_t1, bad.t1_path = False, None
    v = validate_manifest(DatasetManifest([bad]))
    assert [x.rule for x in v] == ["modality-implication"]


def test_manifest_json_roundtrip(tmp_path):
    m = DatasetManifest([rec("s1", "a"), rec("s2", "b", dwi=False)])
    m.save(tmp_path / "m.json")
    back = DatasetManifest.load(tmp_path / "m.json")
    assert back.records == m.records
    keys = set(json.loads((tmp_path / "m.json").read_text())["records"][0])
    assert keys == {"subject_id", "scan_id", "diagnosis", "has_t1", "has_dwi", "t1_path",
                    "dwi_path", "split", "provenance"}


CORRUPTIONS = ["dup_scan", "leak_subject", "dwi_without_t1", "drop_path", "extra_path", "bad_dx"]


def corrupt(records, kind, i):
    r = records[i % len(records)]
    if kind == "dup_scan":
        records.append(ScanRecord(**dict(r.to_dict(), subject_id=r.subject_id)))
    elif kind == "leak_subject":
        other = "test" if r.split != "test" else "train"
        records.append(rec(r.subject_id, r.scan_id + "-x", other))
    elif kind == "dwi_without_t1":
        r.has_t1, r.t1_path = False, None
        r.has_dwi, r.dwi_path = True, r.scan_id + "_fa.vol"
    elif kind == "drop_path":
        r.t1_path = None
    elif kind == "extra_path":
        r.has_dwi, r.dwi_path = False, r.scan_id + "_fa.vol"
    elif kind == "bad_dx":
        r.diagnosis = "XX"


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 8),
    splits=st.lists(st.sampled_from(["train", "val", "test"]), min_size=8, max_size=8),
    dwi=st.lists(st.booleans(), min_size=8, max_size=8),
    kinds=st.lists(st.sampled_from(CORRUPTIONS), max_size=3),
    where=st.integers(0, 100),
)
def test_validate_empty_iff_well_formed(n, splits, dwi, kinds, where):
    records = [rec(f"s{i}", f"scan{i}", splits[i], True, dwi[i]) for i in range(n)]
    for k, kind in enumerate(kinds):
        corrupt(records, kind, where + k)
    problems = validate_manifest(DatasetManifest(records))
    assert (problems == []) == (not kinds)
