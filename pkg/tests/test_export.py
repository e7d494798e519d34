import numpy as np
import pytest

from terragan.export import (
    MeshConfig,
    heightmap_to_obj,
    quantize16,
    read_heightmap_png16,
    read_texture_png,
    write_heightmap_png16,
    write_texture_png,
    write_unity_raw,
)


class TestPng16:
    def test_quantization_endpoints(self):
        q = quantize16(np.array([[-1.0, 1.0], [0.0, -1.0]]))
        assert q[0, 0] == 0
        assert q[0, 1] == 65535
        assert q[1, 0] == 32768

    def test_round_trip_error_bound(self, tmp_path):
        rng = np.random.default_rng(0)
        hm = rng.uniform(-1, 1, (16, 16))
        path = tmp_path / "h.png"
        write_heightmap_png16(hm, path)
        loaded = read_heightmap_png16(path)
        assert np.abs(loaded - hm).max() <= 2.0 / 65535

    def test_second_round_trip_byte_identical(self, tmp_path):
        hm = np.random.default_rng(1).uniform(-1, 1, (8, 8))
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        write_heightmap_png16(hm, p1)
        write_heightmap_png16(read_heightmap_png16(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_out_of_range_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_heightmap_png16(np.array([[1.5]]), tmp_path / "x.png")

    def test_quantization_monotone(self):
        vals = np.sort(np.random.default_rng(2).uniform(-1, 1, 256))
        q = quantize16(vals.reshape(1, -1))[0]
        assert (np.diff(q.astype(np.int64)) >= 0).all()


class TestTexturePng:
    def test_endpoints_and_shape(self, tmp_path):
        tex = np.zeros((4, 4, 3))
        tex[0, 0] = -1.0
        tex[0, 1] = 1.0
        path = tmp_path / "t.png"
        write_texture_png(tex, path)
        loaded = read_texture_png(path)
        assert loaded.shape == (4, 4, 3)
        assert loaded[0, 0, 0] == -1.0
        assert loaded[0, 1, 0] == 1.0

    def test_round_trip_error_bound(self, tmp_path):
        tex = np.random.default_rng(3).uniform(-1, 1, (8, 8, 3))
        path = tmp_path / "t.png"
        write_texture_png(tex, path)
        assert np.abs(read_texture_png(path) - tex).max() <= 2.0 / 255

    def test_out_of_range_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_texture_png(np.full((2, 2, 3), 1.01), tmp_path / "t.png")


class TestUnityRaw:
    def test_file_size(self, tmp_path):
        path = tmp_path / "h.raw"
        n = write_unity_raw(np.zeros((4, 4)), path)
        assert n == 32
        assert path.stat().st_size == 32

    def test_little_endian_top_left_first(self, tmp_path):
        hm = np.full((2, 2), -1.0)
        hm[0, 0] = 1.0  # quantizes to 65535 = 0xFFFF
        path = tmp_path / "h.raw"
        write_unity_raw(hm, path)
        data = path.read_bytes()
        assert data[:2] == b"\xff\xff"
        assert data[2:] == b"\x00" * 6

    def test_constant_zero_map(self, tmp_path):
        path = tmp_path / "z.raw"
        write_unity_raw(np.full((3, 3), -1.0), path)
        assert path.read_bytes() == b"\x00" * 18

    def test_non_square_warns(self, tmp_path):
        with pytest.warns(UserWarning, match="non-square"):
            write_unity_raw(np.zeros((2, 4)), tmp_path / "h.raw")

    def test_raw_matches_png16_values(self, tmp_path):
        hm = np.random.default_rng(4).uniform(-1, 1, (8, 8))
        raw_path, png_path = tmp_path / "h.raw", tmp_path / "h.png"
        write_unity_raw(hm, raw_path)
        write_heightmap_png16(hm, png_path)
        from_raw = np.frombuffer(raw_path.read_bytes(), dtype="<u2").reshape(8, 8)
        from_png = quantize16(read_heightmap_png16(png_path))
        np.testing.assert_array_equal(from_raw, from_png)


def parse_obj(text):
    verts, faces = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            assert len(parts) == 4
            verts.append(tuple(float(v) for v in parts[1:]))
        elif parts[0] == "f":
            assert len(parts) == 4
            faces.append(tuple(int(v) for v in parts[1:]))
        else:
            raise AssertionError(f"unexpected OBJ record: {line!r}")
    return verts, faces


class TestObj:
    def test_minimal_grid(self, tmp_path):
        path = tmp_path / "m.obj"
        heightmap_to_obj(np.zeros((2, 2)), MeshConfig(), path)
        verts, faces = parse_obj(path.read_text())
        assert len(verts) == 4
        assert len(faces) == 2

    def test_three_by_three(self, tmp_path):
        path = tmp_path / "m.obj"
        heightmap_to_obj(np.zeros((3, 3)), MeshConfig(), path)
        verts, faces = parse_obj(path.read_text())
        assert len(verts) == 9
        assert len(faces) == 8

    def test_flat_floor_heights(self, tmp_path):
        path = tmp_path / "m.obj"
        heightmap_to_obj(np.full((2, 2), -1.0), MeshConfig(), path)
        verts, _ = parse_obj(path.read_text())
        assert all(v[1] == 0.0 for v in verts)

    def test_vertex_positions_scaled(self, tmp_path):
        path = tmp_path / "m.obj"
        heightmap_to_obj(np.full((2, 2), 1.0), MeshConfig(horizontal_scale=10.0, vertical_scale=100.0), path)
        verts, _ = parse_obj(path.read_text())
        assert verts[0] == (0.0, 100.0, 0.0)
        assert verts[3] == (10.0, 100.0, 10.0)

    def test_indices_valid_and_winding_up(self, tmp_path):
        rng = np.random.default_rng(5)
        hm = rng.uniform(-1, 1, (5, 7))
        path = tmp_path / "m.obj"
        heightmap_to_obj(hm, MeshConfig(), path)
        verts, faces = parse_obj(path.read_text())
        assert len(verts) == 35
        assert len(faces) == 2 * 4 * 6
        v = np.array(verts)
        for a, b, c in faces:
            assert 1 <= a <= 35 and 1 <= b <= 35 and 1 <= c <= 35
            # normal must point up (+y) when heights are ignored
            pa, pb, pc = v[a - 1].copy(), v[b - 1].copy(), v[c - 1].copy()
            pa[1] = pb[1] = pc[1] = 0.0
            normal = np.cross(pb - pa, pc - pa)
            assert normal[1] > 0

    def test_degenerate_dims_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            heightmap_to_obj(np.zeros((1, 4)), MeshConfig(), tmp_path / "m.obj")

    def test_invalid_scales_rejected(self):
        with pytest.raises(ValueError):
            MeshConfig(horizontal_scale=0.0)
