"""ASCII OBJ / OFF reading and OBJ / PLY writing.

PLY output carries per-vertex colors from a 256-entry viridis-like lookup
table plus the raw scalar under a float property named ``scalar``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import Mesh, MeshError


class MeshParseError(ValueError):
    def __init__(self, path, line_no: int, msg: str):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.path = path
        self.line_no = line_no


# Anchor colors of matplotlib's viridis at t = 0, 0.125, ..., 1; the lookup
# table linearly interpolates between them.
_VIRIDIS_ANCHORS = np.array(
    [
        [0.267004, 0.004874, 0.329415],
        [0.282623, 0.140926, 0.457517],
        [0.253935, 0.265254, 0.529983],
        [0.206756, 0.371758, 0.553117],
        [0.163625, 0.471133, 0.558148],
        [0.127568, 0.566949, 0.550556],
        [0.134692, 0.658636, 0.517649],
        [0.266941, 0.748751, 0.440573],
        [0.477504, 0.821444, 0.318195],
        [0.741388, 0.873449, 0.149561],
        [0.993248, 0.906157, 0.143936],
    ]
)


def _build_lut() -> np.ndarray:
    t = np.linspace(0.0, 1.0, 256)
    xp = np.linspace(0.0, 1.0, len(_VIRIDIS_ANCHORS))
    rgb = np.stack([np.interp(t, xp, _VIRIDIS_ANCHORS[:, k]) for k in range(3)], axis=1)
    return np.round(rgb * 255.0).astype(np.uint8)


COLOR_LUT = _build_lut()


def scalar_to_rgb(values, vmin: float | None = None, vmax: float | None = None) -> np.ndarray:
    """Map scalars to uint8 RGB through ``COLOR_LUT``.

    The range defaults to ``[0, max(values)]``; a zero-width range maps every
    value to entry 0.
    """
    values = np.asarray(values, dtype=np.float64)
    lo = 0.0 if vmin is None else vmin
    hi = float(values.max()) if vmax is None else vmax
    if hi <= lo:
        return np.repeat(COLOR_LUT[:1], len(values), axis=0)
    idx = np.clip(np.floor((values - lo) / (hi - lo) * 255.0 + 0.5), 0, 255).astype(int)
    return COLOR_LUT[idx]


def _tokens(path):
    with open(path, encoding="utf-8") as fh:
        for no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield no, line.split()


def _read_obj(path):
    verts, faces, lines = [], [], []
    for no, tok in _tokens(path):
        try:
            if tok[0] == "v":
                if len(tok) < 4:
                    raise ValueError("vertex needs 3 coordinates")
                verts.append([float(x) for x in tok[1:4]])
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                if len(idx) != 3:
                    raise ValueError("only triangles are supported")
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
                lines.append(no)
        except ValueError as exc:
            raise MeshParseError(path, no, str(exc)) from None
    return verts, faces, lines


def _read_off(path):
    it = _tokens(path)
    try:
        no, tok = next(it)
    except StopIteration:
        raise MeshParseError(path, 1, "empty file") from None
    if tok[0] != "OFF":
        raise MeshParseError(path, no, "missing OFF header (binary OFF is not supported)")
    tok = tok[1:]
    if not tok:
        no, tok = next(it, (no, None))
        if tok is None:
            raise MeshParseError(path, no, "missing counts line")
    try:
        nv, nf = int(tok[0]), int(tok[1])
    except (ValueError, IndexError):
        raise MeshParseError(path, no, "bad counts line") from None
    verts, faces, lines = [], [], []
    for no, tok in it:
        try:
            if len(verts) < nv:
                verts.append([float(x) for x in tok[:3]])
                if len(tok) < 3:
                    raise ValueError("vertex needs 3 coordinates")
            elif len(faces) < nf:
                k = int(tok[0])
                if k != 3 or len(tok) < 4:
                    raise ValueError("only triangles are supported")
                faces.append([int(x) for x in tok[1:4]])
                lines.append(no)
            else:
                raise ValueError("trailing data after declared elements")
        except ValueError as exc:
            raise MeshParseError(path, no, str(exc)) from None
    if len(verts) != nv or len(faces) != nf:
        raise MeshParseError(path, no, f"expected {nv} vertices and {nf} faces")
    return verts, faces, lines


def read_mesh(path, fmt: str | None = None, kind: str = "target") -> Mesh:
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "obj":
        verts, faces, lines = _read_obj(path)
    elif fmt == "off":
        verts, faces, lines = _read_off(path)
    else:
        raise ValueError(f"unsupported mesh format {fmt!r}")
    nv = len(verts)
    for face, no in zip(faces, lines):
        for i in face:
            if not 0 <= i < nv:
                raise MeshParseError(path, no, f"face index {i} out of range for {nv} vertices")
    try:
        return Mesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                    np.array(faces, dtype=np.int64).reshape(-1, 3), kind)
    except MeshError as exc:
        raise MeshParseError(path, 0, str(exc)) from None


def _fmt_rows(rows, fmt):
    if isinstance(rows, np.ndarray):
        rows = rows.tolist()
    return "".join(fmt % tuple(row) for row in rows)


def write_mesh(mesh: Mesh, path, scalars=None, fmt: str | None = None, header: dict | None = None):
    """Write ``mesh`` as ASCII OBJ or PLY.

    Coordinates are written with 17 significant digits so a read-back is
    exact. ``header`` entries become comment lines.
    """
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    comments = [f"{k} {v}" for k, v in (header or {}).items()]
    if fmt == "obj":
        if scalars is not None:
            raise ValueError("OBJ output does not carry scalar fields; use PLY")
        text = "".join(f"# {c}\n" for c in comments)
        text += _fmt_rows(mesh.vertices, "v %.17g %.17g %.17g\n")
        text += _fmt_rows(mesh.faces + 1, "f %d %d %d\n")
    elif fmt == "ply":
        lines = ["ply", "format ascii 1.0"] + [f"comment {c}" for c in comments]
        lines += [f"element vertex {mesh.n_vertices}",
                  "property double x", "property double y", "property double z"]
        if scalars is not None:
            scalars = np.asarray(scalars, dtype=np.float64)
            if scalars.shape != (mesh.n_vertices,):
                raise ValueError("scalar field length must equal vertex count")
            lines += ["property uchar red", "property uchar green", "property uchar blue",
                      "property float scalar"]
        lines += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices",
                  "end_header"]
        text = "\n".join(lines) + "\n"
        if scalars is None:
            text += _fmt_rows(mesh.vertices, "%.17g %.17g %.17g\n")
        else:
            rgb = scalar_to_rgb(scalars)
            rows = [(*p, *c, s) for p, c, s in zip(mesh.vertices.tolist(), rgb.tolist(), scalars.tolist())]
            text += _fmt_rows(rows, "%.17g %.17g %.17g %d %d %d %.9g\n")
        text += _fmt_rows(mesh.faces, "3 %d %d %d\n")
    else:
        raise ValueError(f"unsupported output format {fmt!r}")
    path.write_text(text, encoding="utf-8")


def read_ply_colors(path) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex (RGB, scalar) from a PLY written by :func:`write_mesh`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    end = lines.index("end_header")
    nv = next(int(l.split()[2]) for l in lines if l.startswith("element vertex"))
    rows = np.array([l.split() for l in lines[end + 1 : end + 1 + nv]], dtype=np.float64)
    return rows[:, 3:6].astype(np.uint8), rows[:, 6]
