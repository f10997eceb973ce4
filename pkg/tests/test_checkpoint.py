import struct

import numpy as np
import pytest

from pcgc import CorruptionError, ShapeError, init_model, load_checkpoint, save_checkpoint
from pcgc.checkpoint import load_training_state


class TestCheckpointRoundTrip:
    def test_bit_exact(self, tmp_path):
        params = init_model(n_filters=4, seed=9)
        path = tmp_path / "m.pcgm"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.n_filters == 4
        assert loaded.model_id == params.model_id
        for a, b in zip(loaded.parameters(), params.parameters()):
            assert np.array_equal(a.data, b.data)

    def test_training_state_roundtrip(self, tmp_path):
        params = init_model(n_filters=2, seed=1)
        moments = [np.full(p.shape, 0.25, np.float32) for p in params.parameters()]
        path = tmp_path / "m.pcgm"
        save_checkpoint(
            params,
            path,
            {"step": 17, "resolution": 32, "m": moments, "v": moments},
        )
        state = load_training_state(path)
        assert state["step"] == 17 and state["resolution"] == 32
        assert all(np.array_equal(m, w) for m, w in zip(state["m"], moments))

    def test_no_training_state_returns_none(self, tmp_path):
        params = init_model(n_filters=2, seed=1)
        path = tmp_path / "m.pcgm"
        save_checkpoint(params, path)
        assert load_training_state(path) is None


class TestCheckpointErrors:
    def test_truncated_file(self, tmp_path):
        params = init_model(n_filters=2, seed=1)
        path = tmp_path / "m.pcgm"
        save_checkpoint(params, path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CorruptionError):
            load_checkpoint(path)

    def test_flipped_bit_fails_hash(self, tmp_path):
        params = init_model(n_filters=2, seed=1)
        path = tmp_path / "m.pcgm"
        save_checkpoint(params, path)
        blob = bytearray(path.read_bytes())
        blob[60] ^= 0x40  # inside the first tensor's data
        path.write_bytes(bytes(blob))
        with pytest.raises((CorruptionError, ShapeError)):
            load_checkpoint(path)

    def test_wrong_n_filters_is_shape_error(self, tmp_path):
        params = init_model(n_filters=2, seed=1)
        path = tmp_path / "m.pcgm"
        save_checkpoint(params, path)
        blob = bytearray(path.read_bytes())
        # declared n_filters lives right after magic+version
        n = struct.unpack_from("<I", blob, 5)[0]
        assert n == 2
        struct.pack_into("<I", blob, 5, 4)
        path.write_bytes(bytes(blob))
        with pytest.raises(ShapeError):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "m.pcgm"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(CorruptionError):
            load_checkpoint(path)
