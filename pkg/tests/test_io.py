import struct

import numpy as np
import pytest
from PIL import Image

from idnca import io as nca_io
from idnca.model import init_weights


def random_checkpoint_weights(rng, variant="B"):
    w = init_weights(variant, rng, fire_rate=0.5)
    w.w2 = rng.normal(0, 0.2, w.w2.shape).astype(np.float32)
    w.b2 = rng.normal(0, 0.05, w.b2.shape).astype(np.float32)
    return w


class TestCheckpoint:
    def test_round_trip_bit_identical(self, rng, tmp_path):
        w = random_checkpoint_weights(rng)
        first = tmp_path / "a.ckpt"
        second = tmp_path / "b.ckpt"
        nca_io.save_checkpoint(w, first, metadata="iterations=5;seed=3")
        loaded, meta = nca_io.load_checkpoint(first, with_metadata=True)
        assert meta == "iterations=5;seed=3"
        assert loaded.variant == w.variant
        assert loaded.fire_rate == w.fire_rate
        for name in ("w1", "b1", "w2", "b2"):
            assert np.array_equal(getattr(loaded, name), getattr(w, name))
        nca_io.save_checkpoint(loaded, second, metadata=meta)
        assert first.read_bytes() == second.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"XXXX" + b"\0" * 64)
        with pytest.raises(nca_io.BadMagicError):
            nca_io.load_checkpoint(path)

    def test_version_mismatch(self, rng, tmp_path):
        path = tmp_path / "v9.ckpt"
        nca_io.save_checkpoint(random_checkpoint_weights(rng), path)
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(data))
        with pytest.raises(nca_io.VersionMismatchError):
            nca_io.load_checkpoint(path)

    def test_truncated_payload(self, rng, tmp_path):
        path = tmp_path / "cut.ckpt"
        nca_io.save_checkpoint(random_checkpoint_weights(rng), path)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with pytest.raises(nca_io.TruncatedCheckpointError):
            nca_io.load_checkpoint(path)

    def test_dimension_length_disagreement(self, rng, tmp_path):
        # header claims a wider hidden layer than the payload carries
        path = tmp_path / "dims.ckpt"
        nca_io.save_checkpoint(random_checkpoint_weights(rng), path)
        data = bytearray(path.read_bytes())
        data[12:16] = struct.pack("<I", 256)
        path.write_bytes(bytes(data))
        with pytest.raises(nca_io.TruncatedCheckpointError):
            nca_io.load_checkpoint(path)

    def test_incompatible_channel_count(self, rng, tmp_path):
        path = tmp_path / "chan.ckpt"
        nca_io.save_checkpoint(random_checkpoint_weights(rng), path)
        data = bytearray(path.read_bytes())
        data[8:12] = struct.pack("<I", 16)
        path.write_bytes(bytes(data))
        with pytest.raises(nca_io.IncompatibleCheckpointError):
            nca_io.load_checkpoint(path)

    def test_error_types_are_distinct(self):
        kinds = {nca_io.BadMagicError, nca_io.VersionMismatchError,
                 nca_io.TruncatedCheckpointError,
                 nca_io.IncompatibleCheckpointError}
        assert len(kinds) == 4
        for kind in kinds:
            assert issubclass(kind, nca_io.CheckpointError)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            nca_io.load_checkpoint(tmp_path / "absent.ckpt")


class TestLoadTarget:
    def write_png(self, path, arr, mode="RGBA"):
        Image.fromarray(arr, mode).save(path, "PNG")

    def test_fully_transparent_maps_to_zero(self, tmp_path):
        arr = np.zeros((4, 4, 4), np.uint8)
        arr[..., :3] = 200  # colour under zero alpha premultiplies away
        path = tmp_path / "t.png"
        self.write_png(path, arr)
        out = nca_io.load_target(path)
        assert not out.any()

    def test_opaque_white(self, tmp_path):
        arr = np.full((2, 2, 4), 255, np.uint8)
        path = tmp_path / "w.png"
        self.write_png(path, arr)
        out = nca_io.load_target(path)
        assert np.allclose(out, 1.0)

    def test_half_alpha_premultiply(self, tmp_path):
        arr = np.zeros((1, 1, 4), np.uint8)
        arr[0, 0] = (255, 255, 255, 128)
        path = tmp_path / "h.png"
        self.write_png(path, arr)
        out = nca_io.load_target(path)
        alpha = 128 / 255
        assert out[0, 0, 3] == pytest.approx(alpha)
        assert np.allclose(out[0, 0, :3], alpha, atol=1e-6)

    def test_non_rgba_rejected(self, tmp_path):
        arr = np.zeros((4, 4, 3), np.uint8)
        path = tmp_path / "rgb.png"
        self.write_png(path, arr, mode="RGB")
        with pytest.raises(nca_io.TargetImageError):
            nca_io.load_target(path)

    def test_resample_preserves_aspect(self, tmp_path):
        arr = np.zeros((30, 20, 4), np.uint8)
        arr[..., 3] = 255
        path = tmp_path / "r.png"
        self.write_png(path, arr)
        out = nca_io.load_target(path, desired_width=10)
        assert out.shape == (15, 10, 4)


class TestRendering:
    def test_unpremultiply_on_export(self):
        grid = np.zeros((1, 2, 17), np.float32)
        grid[0, 0, :4] = (0.25, 0.0, 0.0, 0.5)  # premultiplied half-red
        rgba = nca_io.grid_to_rgba8(grid)
        assert rgba[0, 0, 0] == 128  # 0.25 / 0.5 -> 0.5
        assert rgba[0, 0, 3] == 128
        assert tuple(rgba[0, 1]) == (0, 0, 0, 0)

    def test_values_clamped(self):
        grid = np.zeros((1, 1, 17), np.float32)
        grid[0, 0, :4] = (5.0, -3.0, 0.5, 2.0)
        rgba = nca_io.grid_to_rgba8(grid)
        assert tuple(rgba[0, 0]) == (255, 0, 128, 255)

    def test_png_round_trip(self, tmp_path, rng):
        grid = rng.random((5, 6, 17)).astype(np.float32)
        path = tmp_path / "g.png"
        nca_io.save_grid_png(grid, path)
        img = Image.open(path)
        assert img.mode == "RGBA"
        assert img.size == (6, 5)

    def test_state_round_trip(self, tmp_path, rng):
        grid = rng.random((5, 6, 17)).astype(np.float32)
        path = tmp_path / "s.npy"
        nca_io.save_state(grid, path)
        assert np.array_equal(nca_io.load_state(path), grid)


class TestBuiltinGecko:
    def test_deterministic(self):
        a = nca_io.make_gecko_rgba8(20)
        b = nca_io.make_gecko_rgba8(20)
        assert np.array_equal(a, b)

    def test_shape_and_extent(self):
        t = nca_io.builtin_gecko(20)
        assert t.shape[1] == 20
        assert t.shape[2] == 4
        body = t[..., 3] > 0.1
        ys, xs = np.nonzero(body)
        # tight crop: the silhouette spans nearly the full image
        assert xs.max() - xs.min() + 1 >= 17
        assert ys.max() - ys.min() + 1 >= 17
        assert body.sum() > 100

    def test_png_write_is_loadable(self, tmp_path):
        path = tmp_path / "gecko.png"
        nca_io.write_gecko_png(path, width=32)
        t = nca_io.load_target(path, desired_width=20)
        assert t.shape[1] == 20
        assert (t[..., 3] > 0.1).sum() > 100


class TestRunManifest:
    def test_validates_paths(self, tmp_path):
        manifest = nca_io.RunManifest(
            master_seed=0, grid_width=96, grid_height=64,
            target_path=str(tmp_path / "missing.png"),
            anchor_x=39, anchor_y=32,
            results_path=str(tmp_path / "out.csv"))
        with pytest.raises(FileNotFoundError):
            manifest.validate()
        nca_io.write_gecko_png(tmp_path / "missing.png")
        manifest.validate()

    def test_creates_frames_dir(self, tmp_path):
        frames = tmp_path / "frames"
        manifest = nca_io.RunManifest(
            master_seed=0, grid_width=96, grid_height=64, target_path=None,
            anchor_x=39, anchor_y=32, results_path=str(tmp_path / "o.csv"),
            frames_dir=str(frames))
        manifest.validate()
        assert frames.is_dir()
