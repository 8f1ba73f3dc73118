import numpy as np
import pytest

from medflow.mesh import icosphere
from medflow.meshio import (
    COLOR_LUT, MeshParseError, read_mesh, read_ply_colors, scalar_to_rgb, write_mesh,
)


def _bumpy():
    m = icosphere(2)
    rng = np.random.default_rng(0)
    return m.with_vertices(m.vertices * (1 + 0.1 * rng.standard_normal((m.n_vertices, 1))))


def test_obj_roundtrip_is_exact(tmp_path):
    m = _bumpy()
    write_mesh(m, tmp_path / "m.obj", header={"seed": 3})
    back = read_mesh(tmp_path / "m.obj")
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.faces, m.faces)
    assert (tmp_path / "m.obj").read_text().startswith("# seed 3\n")


def test_off_reader(tmp_path):
    p = tmp_path / "t.off"
    p.write_text("OFF\n# comment\n4 2 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n3 0 1 2\n3 0 2 3\n")
    m = read_mesh(p)
    assert m.n_vertices == 4 and m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_obj_negative_indices_and_slashes(tmp_path):
    p = tmp_path / "t.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2//1 -1\n")
    assert read_mesh(p).faces.tolist() == [[0, 1, 2]]


@pytest.mark.parametrize(
    "name,text,line",
    [
        ("bad.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n", 4),
        ("quad.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n", 5),
        ("short.obj", "v 0 0\n", 1),
        ("bad.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n", 6),
        ("bin.off", "OFF BINARY\n", 1),
        ("trunc.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n", 4),
    ],
)
def test_malformed_files_report_line(tmp_path, name, text, line):
    p = tmp_path / name
    p.write_text(text)
    with pytest.raises(MeshParseError) as info:
        read_mesh(p)
    assert info.value.line_no == line
    assert f":{line}:" in str(info.value)


def test_unsupported_format(tmp_path):
    with pytest.raises(ValueError):
        read_mesh(tmp_path / "x.stl")


def test_ply_with_scalars(tmp_path):
    m = icosphere(1)
    s = np.linspace(0.0, 2.0, m.n_vertices)
    write_mesh(m, tmp_path / "f.ply", scalars=s, header={"seed": 1})
    rgb, back = read_ply_colors(tmp_path / "f.ply")
    np.testing.assert_allclose(back, s, rtol=1e-7)
    assert np.array_equal(rgb[0], COLOR_LUT[0]) and np.array_equal(rgb[-1], COLOR_LUT[255])
    assert "comment seed 1" in (tmp_path / "f.ply").read_text()


def test_ply_scalar_length_checked(tmp_path):
    with pytest.raises(ValueError):
        write_mesh(icosphere(0), tmp_path / "f.ply", scalars=np.zeros(3))


def test_color_lut_shape_and_monotone_luminance():
    assert COLOR_LUT.shape == (256, 3) and COLOR_LUT.dtype == np.uint8
    lum = COLOR_LUT.astype(float) @ [0.2126, 0.7152, 0.0722]
    assert np.all(np.diff(lum) >= -1.0)


def test_scalar_to_rgb_constant_field():
    assert np.all(scalar_to_rgb(np.zeros(5)) == COLOR_LUT[0])
