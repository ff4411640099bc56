"""IDX / PNM ingestion and the binary container."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmfa.errors import FormatError, InvalidValueError, ShapeError, WrongKindError
from dmfa.tensorio import (
    Dataset,
    load_container,
    load_idx,
    load_image_dir,
    save_container,
    write_pnm,
)


def make_idx_bytes(images: np.ndarray) -> bytes:
    count, h, w = images.shape
    return struct.pack(">IIII", 0x00000803, count, h, w) + images.tobytes()


def independent_idx_decode(blob: bytes) -> np.ndarray:
    """Byte-level reference decoder that avoids the package entirely."""
    magic, count, h, w = struct.unpack(">IIII", blob[:16])
    assert magic == 0x00000803
    out = np.zeros((count, h, w), dtype=np.uint8)
    pos = 16
    for i in range(count):
        for r in range(h):
            for c in range(w):
                out[i, r, c] = blob[pos]
                pos += 1
    return out


class TestLoadIdx:
    def test_four_images(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(4, 28, 28), dtype=np.uint8)
        path = tmp_path / "imgs.idx"
        path.write_bytes(make_idx_bytes(images))
        ds = load_idx(path)
        assert ds.count == 4
        assert ds.shape == (1, 28, 28)

    def test_matches_independent_decoder(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(10, 9, 7), dtype=np.uint8)
        blob = make_idx_bytes(images)
        path = tmp_path / "imgs.idx"
        path.write_bytes(blob)
        ds = load_idx(path)
        ref = independent_idx_decode(blob).astype(np.float32) / 255.0
        np.testing.assert_array_equal(ds.samples, ref.reshape(10, -1))

    def test_truncated_payload(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(4, 5, 5), dtype=np.uint8)
        path = tmp_path / "short.idx"
        path.write_bytes(make_idx_bytes(images)[:-1])
        with pytest.raises(FormatError):
            load_idx(path)

    def test_trailing_bytes_rejected(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(2, 3, 3), dtype=np.uint8)
        path = tmp_path / "long.idx"
        path.write_bytes(make_idx_bytes(images) + b"\x00\x00")
        with pytest.raises(FormatError):
            load_idx(path)

    def test_byte_255_maps_to_one(self, tmp_path):
        images = np.full((1, 2, 2), 255, dtype=np.uint8)
        path = tmp_path / "ones.idx"
        path.write_bytes(make_idx_bytes(images))
        assert load_idx(path).samples.max() == 1.0

    def test_label_magic_rejected(self, tmp_path):
        path = tmp_path / "labels.idx"
        path.write_bytes(struct.pack(">II", 0x00000801, 3) + b"\x00\x01\x02")
        with pytest.raises(WrongKindError):
            load_idx(path)

    def test_garbage_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(b"\xde\xad\xbe\xef" + b"\x00" * 32)
        with pytest.raises(FormatError):
            load_idx(path)

    def test_normalization_bounds(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(20, 6, 6), dtype=np.uint8)
        path = tmp_path / "imgs.idx"
        path.write_bytes(make_idx_bytes(images))
        ds = load_idx(path)
        assert 0.0 <= ds.samples.min() and ds.samples.max() <= 1.0


def write_pnm_file(path, magic: bytes, w: int, h: int, payload: bytes):
    path.write_bytes(magic + b"\n%d %d\n255\n" % (w, h) + payload)


class TestLoadImageDir:
    def test_ppm_directory(self, tmp_path, rng):
        for i in range(10):
            payload = rng.integers(0, 256, size=32 * 32 * 3, dtype=np.uint8).tobytes()
            write_pnm_file(tmp_path / f"img{i:02d}.ppm", b"P6", 32, 32, payload)
        ds = load_image_dir(tmp_path, (32, 32))
        assert ds.count == 10
        assert ds.shape == (3, 32, 32)

    def test_mixed_formats_rejected(self, tmp_path, rng):
        write_pnm_file(tmp_path / "a.pgm", b"P5", 4, 4, bytes(16))
        write_pnm_file(tmp_path / "b.ppm", b"P6", 4, 4, bytes(48))
        with pytest.raises(FormatError):
            load_image_dir(tmp_path, (4, 4))

    def test_wrong_dimensions_rejected(self, tmp_path):
        write_pnm_file(tmp_path / "a.pgm", b"P5", 5, 4, bytes(20))
        with pytest.raises(ShapeError):
            load_image_dir(tmp_path, (4, 4))

    def test_empty_directory(self, tmp_path):
        ds = load_image_dir(tmp_path, (8, 8))
        assert ds.count == 0

    def test_lexicographic_order(self, tmp_path):
        write_pnm_file(tmp_path / "b.pgm", b"P5", 1, 1, bytes([20]))
        write_pnm_file(tmp_path / "a.pgm", b"P5", 1, 1, bytes([10]))
        ds = load_image_dir(tmp_path, (1, 1))
        np.testing.assert_allclose(ds.samples[:, 0], [10 / 255, 20 / 255])

    def test_comment_in_header(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes(4))
        assert load_image_dir(tmp_path, (2, 2)).count == 1

    def test_pnm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(3, 5, 7), dtype=np.uint8)
        write_pnm(tmp_path / "x.ppm", img.astype(np.float32) / 255.0)
        ds = load_image_dir(tmp_path, (5, 7))
        np.testing.assert_array_equal(
            ds.samples[0], img.reshape(-1).astype(np.float32) / 255.0
        )


class TestContainer:
    def test_zero_tensor_round_trip(self, tmp_path):
        path = tmp_path / "z.dmfa"
        save_container(path, {"zeros": np.zeros((3, 4), dtype=np.float32)})
        tensors, meta = load_container(path)
        np.testing.assert_array_equal(tensors["zeros"], np.zeros((3, 4)))
        assert meta == {}

    @settings(max_examples=40, deadline=None)
    @given(
        shape=st.lists(st.integers(1, 5), min_size=0, max_size=3),
        seed=st.integers(0, 2**31 - 1),
    )
    def test_bitwise_round_trip(self, tmp_path_factory, shape, seed):
        rng = np.random.default_rng(seed)
        arr = rng.normal(scale=10.0, size=tuple(shape)).astype(np.float32)
        path = tmp_path_factory.mktemp("rt") / "t.dmfa"
        save_container(path, {"a": arr, "b": arr * -2.5}, meta={"tag": "x"})
        tensors, meta = load_container(path)
        assert tensors["a"].tobytes() == arr.tobytes()
        assert tensors["b"].tobytes() == (arr * -2.5).astype(np.float32).tobytes()
        assert meta == {"tag": "x"}

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dmfa"
        save_container(path, {"a": np.ones(2, dtype=np.float32)})
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XMFA"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            load_container(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "bad.dmfa"
        save_container(path, {"a": np.ones(2, dtype=np.float32)})
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            load_container(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "bad.dmfa"
        save_container(path, {"a": np.ones(8, dtype=np.float32)})
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError):
            load_container(path)

    def test_nan_rejected_at_save(self, tmp_path):
        arr = np.ones(4, dtype=np.float32)
        arr[2] = np.nan
        with pytest.raises(InvalidValueError):
            save_container(tmp_path / "nan.dmfa", {"a": arr})


class TestDataset:
    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            Dataset(np.zeros((2, 5), dtype=np.float32), (1, 2, 2))

    def test_out_of_range_values(self):
        with pytest.raises(InvalidValueError):
            Dataset(np.full((1, 4), 1.5, dtype=np.float32), (1, 2, 2))
