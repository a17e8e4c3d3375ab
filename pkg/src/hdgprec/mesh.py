"""Two-dimensional simplicial meshes with edge topology.

Faces (edges) are numbered by their sorted vertex pair, so the numbering
depends only on the cell list.  Local face ``i`` of a cell is the edge
opposite local vertex ``i``, traversed counter-clockwise.
"""
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "MeshError",
    "MeshStats",
    "generate_unit_square",
    "generate_square",
    "load_mesh",
    "mesh_to_text",
    "mesh_stats",
    "perturb_mesh",
]

MAX_LEVELS = 9

# local face i = (LOCAL_FACE_VERTS[i][0] -> LOCAL_FACE_VERTS[i][1])
LOCAL_FACE_VERTS = np.array([[1, 2], [2, 0], [0, 1]])


class MeshError(ValueError):
    """Raised for malformed mesh input."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangle mesh with derived face topology.

    Attributes
    ----------
    vertices : (nv, 2) float array
    cells : (nc, 3) int array, counter-clockwise
    faces : (nf, 2) int array, each row sorted ascending
    face_cells : (nf, 2) int array, second column -1 on the boundary
    face_local : (nf, 2) int array, local face index in each adjacent cell
    cell_faces : (nc, 3) int array
    cell_face_flip : (nc, 3) bool array, True where the local traversal
        runs against the global (sorted) face direction
    boundary_tags : dict mapping boundary face index to a segment name
    """

    vertices: np.ndarray
    cells: np.ndarray
    faces: np.ndarray
    face_cells: np.ndarray
    face_local: np.ndarray
    cell_faces: np.ndarray
    cell_face_flip: np.ndarray
    boundary_tags: dict = field(default_factory=dict)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def boundary_faces(self):
        return np.flatnonzero(self.face_cells[:, 1] < 0)

    @property
    def interior_faces(self):
        return np.flatnonzero(self.face_cells[:, 1] >= 0)

    @property
    def is_boundary_face(self):
        return self.face_cells[:, 1] < 0

    @property
    def cell_coords(self):
        """(nc, 3, 2) vertex coordinates per cell."""
        return self.vertices[self.cells]

    @property
    def signed_areas(self):
        x = self.cell_coords
        e1 = x[:, 1] - x[:, 0]
        e2 = x[:, 2] - x[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def face_lengths(self):
        """h_F: edge length of every face."""
        d = self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def cell_diameters(self):
        """h_K: longest edge of every cell."""
        return self.face_lengths[self.cell_faces].max(axis=1)

    @property
    def cell_midpoints(self):
        return self.cell_coords.mean(axis=1)

    def outward_normals(self):
        """(nc, 3, 2) outward unit normals of the local faces."""
        x = self.cell_coords
        a = x[:, LOCAL_FACE_VERTS[:, 0]]
        b = x[:, LOCAL_FACE_VERTS[:, 1]]
        t = b - a
        n = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _build(vertices, cells, segment_tags=None):
    vertices = np.ascontiguousarray(vertices, dtype=float)
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    nv = len(vertices)
    if cells.ndim != 2 or cells.shape[1] != 3:
        raise MeshError("cells must be vertex-index triples")
    if cells.size and (cells.min() < 0 or cells.max() >= nv):
        bad = int(np.flatnonzero((cells < 0).any(1) | (cells >= nv).any(1))[0])
        raise MeshError(f"cell {bad} references a vertex outside 0..{nv - 1}")

    x = vertices[cells]
    e1 = x[:, 1] - x[:, 0]
    e2 = x[:, 2] - x[:, 0]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    if np.any(area <= 0):
        bad = int(np.flatnonzero(area <= 0)[0])
        raise MeshError(f"cell {bad} has non-positive signed area {area[bad]:.3e}")

    nc = len(cells)
    local = cells[:, LOCAL_FACE_VERTS]  # (nc, 3, 2)
    flip = local[..., 0] > local[..., 1]
    pairs = np.sort(local, axis=-1).reshape(-1, 2)
    faces, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if np.any(counts > 2):
        bad = faces[np.flatnonzero(counts > 2)[0]]
        raise MeshError(f"non-manifold edge ({bad[0]}, {bad[1]}) shared by more than two cells")

    nf = len(faces)
    cell_faces = inverse.reshape(nc, 3)
    face_cells = -np.ones((nf, 2), dtype=np.int64)
    face_local = -np.ones((nf, 2), dtype=np.int64)
    # stable sort keeps the lower cell index in slot 0
    order = np.argsort(inverse, kind="stable")
    sorted_faces = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_faces[1:] != sorted_faces[:-1]
    slot = np.where(first, 0, 1)
    face_cells[sorted_faces, slot] = order // 3
    face_local[sorted_faces, slot] = order % 3

    interior = face_cells[:, 1] >= 0
    c0, l0 = face_cells[interior, 0], face_local[interior, 0]
    c1, l1 = face_cells[interior, 1], face_local[interior, 1]
    if np.any(flip[c0, l0] == flip[c1, l1]):
        raise MeshError("adjacent cells traverse a shared edge in the same direction")

    bfaces = np.flatnonzero(~interior)
    tags = {}
    if segment_tags:
        lookup = {tuple(sorted(k)): v for k, v in segment_tags.items()}
        for f in bfaces:
            name = lookup.get((int(faces[f, 0]), int(faces[f, 1])))
            if name is not None:
                tags[int(f)] = name
    for f in bfaces:
        tags.setdefault(int(f), "boundary")
    return Mesh(vertices, cells, faces, face_cells, face_local, cell_faces, flip, tags)


def _tag_box_sides(mesh, lower, upper, tol=1e-12):
    tags = {}
    mid = 0.5 * (mesh.vertices[mesh.faces[:, 0]] + mesh.vertices[mesh.faces[:, 1]])
    for f in mesh.boundary_faces:
        x, y = mid[f]
        if abs(x - lower[0]) < tol:
            tags[int(f)] = "left"
        elif abs(x - upper[0]) < tol:
            tags[int(f)] = "right"
        elif abs(y - lower[1]) < tol:
            tags[int(f)] = "bottom"
        else:
            tags[int(f)] = "top"
    return tags


def generate_square(levels, lower=(0.0, 0.0), upper=(1.0, 1.0)):
    """Structured triangulation of a rectangle with ``2 * 4**levels`` cells.

    The rectangle is cut into ``2**levels`` squares per side; each square is
    split along one diagonal, alternating the diagonal direction in a
    checkerboard pattern.
    """
    levels = int(levels)
    if levels < 0:
        raise ValueError("levels must be non-negative")
    if levels > MAX_LEVELS:
        raise ValueError(f"levels={levels} exceeds the cap of {MAX_LEVELS}")
    n = 2**levels
    xs = np.linspace(lower[0], upper[0], n + 1)
    ys = np.linspace(lower[1], upper[1], n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    even = (i + j) % 2 == 0
    # even squares: diagonal v00-v11, odd squares: diagonal v10-v01
    t1 = np.where(even[:, None], np.column_stack([v00, v10, v11]), np.column_stack([v00, v10, v01]))
    t2 = np.where(even[:, None], np.column_stack([v00, v11, v01]), np.column_stack([v10, v11, v01]))
    cells = np.stack([t1, t2], axis=1).reshape(-1, 3)

    mesh = _build(vertices, cells)
    tags = _tag_box_sides(mesh, lower, upper)
    return Mesh(mesh.vertices, mesh.cells, mesh.faces, mesh.face_cells, mesh.face_local,
                mesh.cell_faces, mesh.cell_face_flip, tags)


def generate_unit_square(levels):
    """Structured mesh of (0, 1)^2 with ``2 * 4**levels`` cells."""
    return generate_square(levels)


def perturb_mesh(mesh, amplitude, seed=0):
    """Randomly displace interior vertices by up to ``amplitude * h_min``.

    Topology and boundary tags are kept.  Raises MeshError if a cell flips.
    """
    rng = np.random.default_rng(seed)
    on_boundary = np.zeros(mesh.n_vertices, dtype=bool)
    on_boundary[mesh.faces[mesh.boundary_faces].ravel()] = True
    shift = rng.uniform(-1.0, 1.0, size=mesh.vertices.shape) * amplitude * mesh.face_lengths.min()
    shift[on_boundary] = 0.0
    moved = _build(mesh.vertices + shift, mesh.cells)
    return Mesh(moved.vertices, moved.cells, moved.faces, moved.face_cells, moved.face_local,
                moved.cell_faces, moved.cell_face_flip, dict(mesh.boundary_tags))


def mesh_to_text(mesh):
    lines = [f"mesh2d {mesh.n_vertices} {mesh.n_cells}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.cells.tolist()]
    for f in sorted(mesh.boundary_tags):
        name = mesh.boundary_tags[f]
        if name != "boundary":
            a, b = mesh.faces[f]
            lines.append(f"btag {name} {a} {b}")
    return "\n".join(lines) + "\n"


def load_mesh(text):
    """Parse the ``mesh2d`` plain-text format; faces are rebuilt from cells."""
    rows = [(n + 1, line.split()) for n, line in enumerate(text.splitlines())]
    rows = [(n, tok) for n, tok in rows if tok and not tok[0].startswith("#")]
    if not rows:
        raise MeshError("line 1: empty mesh file")
    lineno, head = rows[0]
    if len(head) != 3 or head[0] != "mesh2d":
        raise MeshError(f"line {lineno}: expected 'mesh2d <nv> <nc>'")
    try:
        nv, nc = int(head[1]), int(head[2])
    except ValueError:
        raise MeshError(f"line {lineno}: vertex and cell counts must be integers") from None
    if len(rows) < 1 + nv + nc:
        raise MeshError(f"line {rows[-1][0]}: file ends before {nv} vertices and {nc} cells")

    vertices = np.empty((nv, 2))
    for r, (lineno, tok) in enumerate(rows[1:1 + nv]):
        try:
            if len(tok) != 2:
                raise ValueError
            vertices[r] = [float(tok[0]), float(tok[1])]
        except ValueError:
            raise MeshError(f"line {lineno}: expected 'x y'") from None
    cells = np.empty((nc, 3), dtype=np.int64)
    for r, (lineno, tok) in enumerate(rows[1 + nv:1 + nv + nc]):
        try:
            if len(tok) != 3:
                raise ValueError
            cells[r] = [int(t) for t in tok]
        except ValueError:
            raise MeshError(f"line {lineno}: expected 'i j k'") from None
        if cells[r].min() < 0 or cells[r].max() >= nv:
            raise MeshError(f"line {lineno}: vertex index out of range 0..{nv - 1} (dangling index)")
    segment_tags = {}
    for lineno, tok in rows[1 + nv + nc:]:
        if tok[0] != "btag" or len(tok) != 4:
            raise MeshError(f"line {lineno}: expected 'btag <side-name> <v0> <v1>'")
        try:
            a, b = int(tok[2]), int(tok[3])
        except ValueError:
            raise MeshError(f"line {lineno}: btag vertex indices must be integers") from None
        segment_tags[(a, b)] = tok[1]
    try:
        return _build(vertices, cells, segment_tags)
    except MeshError as exc:
        raise MeshError(f"line {rows[0][0]}: {exc}") from None


@dataclass(frozen=True)
class MeshStats:
    n_cells: int
    n_faces: int
    n_interior_faces: int
    n_boundary_faces: int
    h_min: float
    h_max: float
    quasi_uniformity: float


def mesh_stats(mesh):
    h = mesh.cell_diameters
    return MeshStats(
        n_cells=mesh.n_cells,
        n_faces=mesh.n_faces,
        n_interior_faces=len(mesh.interior_faces),
        n_boundary_faces=len(mesh.boundary_faces),
        h_min=float(h.min()),
        h_max=float(h.max()),
        quasi_uniformity=float(h.max() / h.min()),
    )
