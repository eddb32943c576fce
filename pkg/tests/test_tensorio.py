import json
import struct

import numpy as np
import pytest

from mentalsim import tensorio
from mentalsim.tensorio import (DataError, DimensionMismatch, EmptyDataset, FormatError,
                                load_latent_dataset, load_neural_dataset, read_tensor, write_tensor)


def test_identity_layout(tmp_path):
    path = tmp_path / "eye.msb"
    write_tensor(np.eye(2), path)
    raw = path.read_bytes()
    assert len(raw) == 4 + 4 + 4 + 16 + 32
    assert raw[:4] == b"MSB1"
    assert struct.unpack("<II", raw[4:12]) == (1, 2)
    assert struct.unpack("<QQ", raw[12:28]) == (2, 2)
    assert raw[28:] == struct.pack("<4d", 1.0, 0.0, 0.0, 1.0)


def test_empty_dimension(tmp_path):
    path = tmp_path / "empty.msb"
    write_tensor(np.zeros((3, 0), dtype=np.float32), path)
    assert len(path.read_bytes()) == 12 + 16
    back = read_tensor(path)
    assert back.shape == (3, 0) and back.dtype == np.float32


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.int64])
def test_roundtrip_bytes(tmp_path, dtype):
    rng = np.random.default_rng(7)
    arr = (rng.normal(size=(7, 128)) * 1000).astype(dtype)
    path = tmp_path / "r.msb"
    write_tensor(arr, path)
    back = read_tensor(path)
    assert back.dtype == arr.dtype
    assert back.tobytes() == arr.tobytes()


def test_big_endian_input_is_stored_little_endian(tmp_path):
    arr = np.arange(4, dtype=">f8")
    write_tensor(arr, tmp_path / "be.msb")
    back = read_tensor(tmp_path / "be.msb")
    assert np.array_equal(back, np.arange(4.0))
    assert (tmp_path / "be.msb").read_bytes()[-8:] == struct.pack("<d", 3.0)


def test_unsupported_dtype(tmp_path):
    with pytest.raises(TypeError):
        write_tensor(np.zeros(3, dtype=np.int32), tmp_path / "x.msb")


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.msb"
    write_tensor(np.ones(3), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        read_tensor(path)


def test_truncated_payload_reports_deficit(tmp_path):
    path = tmp_path / "short.msb"
    write_tensor(np.ones((2, 3)), path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FormatError, match="deficit 8 bytes") as info:
        read_tensor(path)
    assert "expected 48" in str(info.value) and str(path) in str(info.value)


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError, match="missing"):
        write_tensor(np.ones(2), tmp_path / "missing" / "x.msb")


def _manifest(tmp_path, kind, items, **extra):
    doc = {"kind": kind, "items": items, **extra}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    return path


def test_latent_dimension_mismatch(tmp_path):
    write_tensor(np.zeros((10, 64), np.float32), tmp_path / "a.msb")
    write_tensor(np.zeros((10, 32), np.float32), tmp_path / "b.msb")
    path = _manifest(tmp_path, "latents", [{"id": "a", "path": "a.msb"}, {"id": "b", "path": "b.msb"}])
    with pytest.raises(DimensionMismatch, match="stimulus b"):
        load_latent_dataset(path)


def test_physion_style_manifest(tmp_path):
    items = []
    for i in range(3):
        write_tensor(np.ones((25, 16), np.float32), tmp_path / f"{i}.msb")
        items.append({"id": f"s{i}", "path": f"{i}.msb", "scenario": "Dominoes", "label": i % 2})
    ds = load_latent_dataset(_manifest(tmp_path, "latents", items, d=16, subsample=6))
    assert ds.subsample == 6 and ds.d == 16 and len(ds) == 3
    assert ds.latents[0].shape == (25, 16)
    # no silent coercion
    assert ds.latents[0].dtype == np.float32
    assert ds.labels == (0, 1, 0)


def test_empty_stimulus_list(tmp_path):
    with pytest.raises(EmptyDataset):
        load_latent_dataset(_manifest(tmp_path, "latents", []))


def test_missing_tensor_file_named(tmp_path):
    path = _manifest(tmp_path, "latents", [{"id": "a", "path": "nowhere.msb"}])
    with pytest.raises(DataError, match="nowhere.msb"):
        load_latent_dataset(path)


def test_too_few_frames(tmp_path):
    write_tensor(np.zeros((1, 4)), tmp_path / "a.msb")
    with pytest.raises(DataError, match="frames"):
        load_latent_dataset(_manifest(tmp_path, "latents", [{"id": "a", "path": "a.msb"}]))


def test_neural_unit_totals(tmp_path):
    items = []
    for c in range(2):
        write_tensor(np.zeros((3, 4, 1889)), tmp_path / f"c{c}.msb")
        items.append({"id": str(c), "path": f"c{c}.msb"})
    path = _manifest(tmp_path, "neural", items, bin_width_ms=50,
                     animals=[{"name": "P", "n_units": 1552}, {"name": "M", "n_units": 337}])
    ds = load_neural_dataset(path)
    assert ds.n_units == 1889
    assert ds.unit_slices() == {"P": slice(0, 1552), "M": slice(1552, 1889)}
    assert ds.bin_width == 50


def test_neural_condition_without_trials(tmp_path):
    r = np.full((2, 3, 2), np.nan)
    write_tensor(r, tmp_path / "c.msb")
    path = _manifest(tmp_path, "neural", [{"id": "cond17", "path": "c.msb"}], bin_width_ms=50,
                     animals=[{"name": "P", "n_units": 2}])
    with pytest.raises(DataError, match="cond17"):
        load_neural_dataset(path)


def test_neural_missing_trials_counted(tmp_path):
    r = np.ones((4, 3, 2))
    r[1] = np.nan
    ds = tensorio.make_neural_dataset([("P", 2)], [r], 50, ["0"])
    assert ds.missing_trials == (1,)


def test_datasets_are_read_only():
    ds = tensorio.make_latent_dataset(["a"], [np.zeros((3, 2))])
    with pytest.raises(ValueError):
        ds.latents[0][0, 0] = 1.0


def test_judgements(tmp_path):
    items = [{"id": "a", "proportion": 0.2, "label": 0, "scenario": "Roll"},
             {"id": "b", "proportion": 0.9, "label": 1, "scenario": "Roll"}]
    j = tensorio.load_judgements(_manifest(tmp_path, "judgements", items))
    assert j.counts() == {"Roll": 2}
    items[0]["proportion"] = 1.5
    with pytest.raises(DataError, match="outside"):
        tensorio.load_judgements(_manifest(tmp_path, "judgements", items))
