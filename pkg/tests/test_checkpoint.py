"""Binary checkpoint container: bit-exact round trips and format validation."""

import struct

import numpy as np
import pytest

from bgfg.checkpoint import MAGIC, VERSION, load_checkpoint, save_checkpoint
from bgfg.errors import CheckpointError, ConfigError


def sample_tensors(rng):
    return {
        "w64": rng.normal(size=(4, 3, 5, 5)),
        "w32": rng.normal(size=(2, 7)).astype(np.float32),
        "steps": np.asarray([3, 1, 4, 1, 5], dtype=np.int64),
        "scalar": np.asarray(2.5),
        "empty_axis": np.zeros((0, 3)),
    }


class TestRoundTrip:
    def test_bitwise_round_trip_across_dtypes_and_ranks(self, rng, tmp_path):
        tensors = sample_tensors(rng)
        meta = {"profile": "desk", "nested": {"k": [1, 2, 3]}, "label": "unit"}
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, tensors, meta)
        loaded, meta_back = load_checkpoint(path)
        assert meta_back == meta
        assert set(loaded) == set(tensors)
        for name, arr in tensors.items():
            got = loaded[name]
            assert got.dtype == np.asarray(arr).dtype
            assert got.shape == np.asarray(arr).shape
            np.testing.assert_array_equal(got, arr, err_msg=name)
            assert got.tobytes() == np.ascontiguousarray(arr).tobytes()

    def test_same_content_same_bytes(self, rng, tmp_path):
        tensors = sample_tensors(rng)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, tensors, {"x": 1})
        save_checkpoint(p2, dict(reversed(list(tensors.items()))), {"x": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_special_float_values_survive(self, tmp_path):
        special = np.asarray([0.0, -0.0, np.inf, -np.inf, np.nan, np.finfo(np.float64).tiny])
        path = tmp_path / "s.ckpt"
        save_checkpoint(path, {"v": special}, {})
        loaded, _ = load_checkpoint(path)
        assert loaded["v"].tobytes() == special.tobytes()

    def test_no_tensors_is_valid(self, tmp_path):
        path = tmp_path / "empty.ckpt"
        save_checkpoint(path, {}, {"only": "metadata"})
        tensors, meta = load_checkpoint(path)
        assert tensors == {}
        assert meta == {"only": "metadata"}


class TestFormatValidation:
    def write_valid(self, tmp_path, rng):
        path = tmp_path / "v.ckpt"
        save_checkpoint(path, sample_tensors(rng), {"profile": "desk"})
        return path

    def test_corrupted_magic_rejected(self, rng, tmp_path):
        path = self.write_valid(tmp_path, rng)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_version_99_rejected(self, rng, tmp_path):
        path = self.write_valid(tmp_path, rng)
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, rng, tmp_path):
        path = self.write_valid(tmp_path, rng)
        blob = path.read_bytes()
        for cut in (3, 7, len(blob) // 2, len(blob) - 1):
            path.write_bytes(blob[:cut])
            with pytest.raises(CheckpointError):
                load_checkpoint(path)

    def test_trailing_bytes_rejected(self, rng, tmp_path):
        path = self.write_valid(tmp_path, rng)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_unknown_dtype_tag_rejected(self, tmp_path):
        path = tmp_path / "t.ckpt"
        save_checkpoint(path, {"x": np.zeros(2)}, {})
        blob = bytearray(path.read_bytes())
        # tag byte sits right after the 2-byte name length and the name
        meta_len = struct.unpack("<Q", bytes(blob[8:16]))[0]
        tag_at = 8 + 8 + meta_len + 4 + 2 + 1
        assert blob[tag_at] == 0
        blob[tag_at] = 200
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="dtype tag"):
            load_checkpoint(path)

    def test_corrupt_metadata_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {}, {"k": "v"})
        blob = bytearray(path.read_bytes())
        blob[16] = 0xFF  # first metadata byte: breaks UTF-8/JSON
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="metadata"):
            load_checkpoint(path)

    def test_unsupported_dtype_on_save(self, tmp_path):
        with pytest.raises(CheckpointError, match="dtype"):
            save_checkpoint(tmp_path / "bad.ckpt", {"c": np.zeros(2, dtype=np.complex128)}, {})

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "does_not_exist.ckpt")


class TestPipelineCheckpoints:
    def test_wrong_format_tag_rejected(self, tmp_path):
        from bgfg.pipeline import TwoStagePipeline

        path = tmp_path / "other.ckpt"
        save_checkpoint(path, {"x": np.zeros(3)}, {"format": "something_else"})
        with pytest.raises(CheckpointError):
            TwoStagePipeline.load(path)

    def test_shape_mismatch_rejected(self, rng, tmp_path):
        from bgfg.pipeline import DESK_PIPELINE, TwoStagePipeline

        pipe = TwoStagePipeline(DESK_PIPELINE)
        pipe.initialize(0, init_std=0.1)
        path = tmp_path / "p.ckpt"
        pipe.save(path)
        tensors, meta = load_checkpoint(path)
        name = next(k for k in tensors if k.endswith(".weight"))
        tensors[name] = tensors[name][..., :-1]
        save_checkpoint(path, tensors, meta)
        with pytest.raises((CheckpointError, ConfigError)):
            TwoStagePipeline.load(path)
