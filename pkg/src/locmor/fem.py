"""Structured 2D finite elements: bilinear quads and crisscross linear
triangles on axis-aligned rectangles, with the boundary bookkeeping the
transfer operators need."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

INTERIOR = 0
GAMMA_OUT = 1
SIGMA_N = 2
SIGMA_D = 3

_TAG_NAMES = {
    "interior": INTERIOR,
    "gamma_out": GAMMA_OUT,
    "sigma_N": SIGMA_N,
    "sigma_D": SIGMA_D,
}
# when two differently tagged edges meet in a corner
_TAG_PRECEDENCE = {GAMMA_OUT: 3, SIGMA_D: 2, SIGMA_N: 1, INTERIOR: 0}

_GEOM_TOL = 1e-9


@dataclass
class PdeSpec:
    """Scalar second-order operator on a rectangle.

    kind: 'laplace', 'helmholtz' (real shift kappa**2), or 'diffusion'
    with a piecewise-constant coefficient given as a background value and
    axis-aligned override boxes (x0, x1, y0, y1, value); the last matching
    box wins.  Coefficients are evaluated at element centroids.
    """

    kind: str = "laplace"
    kappa: float = 0.0
    background: float = 1.0
    boxes: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("laplace", "helmholtz", "diffusion"):
            raise ValueError(f"unknown pde kind {self.kind!r}")
        if not np.isfinite(self.kappa):
            raise ValueError("kappa must be finite")
        if self.kind != "helmholtz" and self.kappa != 0.0:
            raise ValueError("kappa only applies to the helmholtz kind")
        values = [self.background] + [b[4] for b in self.boxes]
        if self.kind == "diffusion" and any(v <= 0.0 for v in values):
            raise ValueError("diffusion coefficient must be positive")

    def coefficient(self, x, y):
        """Coefficient at points (vectorized)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        k = np.full(x.shape, float(self.background))
        for (x0, x1, y0, y1, value) in self.boxes:
            inside = (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
            k[inside] = value
        return k

    @classmethod
    def from_config(cls, cfg):
        return cls(
            kind=cfg.get("kind", "laplace"),
            kappa=float(cfg.get("kappa", 0.0)),
            background=float(cfg.get("background", 1.0)),
            boxes=[tuple(b) for b in cfg.get("boxes", [])],
        )


class RectMesh:
    """Tensor-product mesh on [x0, x1] x [y0, y1] with spacing h.

    kind 'q1': bilinear quads on the corner lattice.
    kind 'p1x': each square split into four linear triangles through an
    added center node (corner nodes first, then center nodes).
    """

    def __init__(self, bounds, h, kind, node_tags):
        self.bounds = tuple(float(b) for b in bounds)
        self.h = float(h)
        self.kind = kind
        x0, x1, y0, y1 = self.bounds
        self.nx = int(round((x1 - x0) / h))
        self.ny = int(round((y1 - y0) / h))
        self.n_corner = (self.nx + 1) * (self.ny + 1)
        self.n_center = self.nx * self.ny if kind == "p1x" else 0
        self.n_nodes = self.n_corner + self.n_center

        xs = x0 + h * np.arange(self.nx + 1)
        ys = y0 + h * np.arange(self.ny + 1)
        gx, gy = np.meshgrid(xs, ys)
        coords = np.column_stack([gx.ravel(), gy.ravel()])
        if kind == "p1x":
            cx = x0 + h * (np.arange(self.nx) + 0.5)
            cy = y0 + h * (np.arange(self.ny) + 0.5)
            gcx, gcy = np.meshgrid(cx, cy)
            coords = np.vstack(
                [coords, np.column_stack([gcx.ravel(), gcy.ravel()])])
        self.coords = coords
        self.node_tags = node_tags

        ii, jj = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        ii = ii.ravel()
        jj = jj.ravel()
        a = jj * (self.nx + 1) + ii
        b = a + 1
        c = b + (self.nx + 1)
        d = a + (self.nx + 1)
        self.quads = np.column_stack([a, b, c, d])
        if kind == "p1x":
            m = self.n_corner + jj * self.nx + ii
            # triangle order per square: bottom, right, top, left
            self.tris = np.vstack([
                np.column_stack([a, b, m]),
                np.column_stack([b, c, m]),
                np.column_stack([c, d, m]),
                np.column_stack([d, a, m]),
            ])
        else:
            self.tris = None

    @property
    def elements(self):
        return self.tris if self.kind == "p1x" else self.quads

    def element_centroids(self):
        conn = self.elements
        return self.coords[conn].mean(axis=1)

    def corner_index(self, i, j):
        return j * (self.nx + 1) + i

    def nodes_on_line(self, axis, value):
        """Corner nodes on the mesh line {axis == value}, sorted along it."""
        col = 0 if axis == "x" else 1
        mask = np.abs(self.coords[: self.n_corner, col] - value) <= _GEOM_TOL
        ids = np.nonzero(mask)[0]
        if ids.size == 0:
            raise ValueError(f"no mesh line at {axis} = {value}")
        order = np.argsort(self.coords[ids, 1 - col])
        return ids[order]

    def nodes_in_box(self, box):
        """All nodes (corner and center) inside the closed box."""
        x0, x1, y0, y1 = box
        c = self.coords
        mask = ((c[:, 0] >= x0 - _GEOM_TOL) & (c[:, 0] <= x1 + _GEOM_TOL)
                & (c[:, 1] >= y0 - _GEOM_TOL) & (c[:, 1] <= y1 + _GEOM_TOL))
        return np.nonzero(mask)[0]

    def elements_in_box(self, box):
        """Element ids whose centroid lies in the box."""
        x0, x1, y0, y1 = box
        cent = self.element_centroids()
        mask = ((cent[:, 0] >= x0 - _GEOM_TOL) & (cent[:, 0] <= x1 + _GEOM_TOL)
                & (cent[:, 1] >= y0 - _GEOM_TOL)
                & (cent[:, 1] <= y1 + _GEOM_TOL))
        return np.nonzero(mask)[0]

    def boundary_nodes(self, tag):
        return np.nonzero(self.node_tags == tag)[0]

    @property
    def constrained_nodes(self):
        return np.nonzero((self.node_tags == GAMMA_OUT)
                          | (self.node_tags == SIGMA_D))[0]


def build_rect_mesh(bounds, h, kind="q1", boundary_spec=None, tag_fn=None):
    """Build a RectMesh and tag its boundary nodes.

    boundary_spec maps edge names ('left', 'right', 'bottom', 'top') or
    'all' to tag names ('gamma_out', 'sigma_N', 'sigma_D'); untagged edges
    default to sigma_N.  Where differently tagged edges meet, gamma_out
    wins over sigma_D wins over sigma_N.  tag_fn(x, y) -> tag name, if
    given, overrides the edge rules node by node.
    """
    if kind not in ("q1", "p1x"):
        raise ValueError(f"unknown mesh kind {kind!r}")
    x0, x1, y0, y1 = (float(b) for b in bounds)
    if not (x1 > x0 and y1 > y0):
        raise ValueError("empty rectangle")
    h = float(h)
    for length in (x1 - x0, y1 - y0):
        ratio = length / h
        if abs(ratio - round(ratio)) > 1e-6:
            raise ValueError(
                f"side length {length} is not an integer multiple of h = {h}")

    spec = dict(boundary_spec or {})
    if "all" in spec:
        tag_all = spec.pop("all")
        spec = {e: tag_all for e in ("left", "right", "bottom", "top")}
    for edge in ("left", "right", "bottom", "top"):
        spec.setdefault(edge, "sigma_N")
    edge_tags = {e: _TAG_NAMES[spec[e]] for e in spec}

    mesh = RectMesh(bounds, h, kind, node_tags=None)
    tags = np.full(mesh.n_nodes, INTERIOR, dtype=np.int8)
    cx = mesh.coords[:, 0]
    cy = mesh.coords[:, 1]
    edges = {
        "left": np.abs(cx - x0) <= _GEOM_TOL,
        "right": np.abs(cx - x1) <= _GEOM_TOL,
        "bottom": np.abs(cy - y0) <= _GEOM_TOL,
        "top": np.abs(cy - y1) <= _GEOM_TOL,
    }
    for edge, mask in edges.items():
        t = edge_tags[edge]
        ids = np.nonzero(mask)[0]
        for nid in ids:
            if _TAG_PRECEDENCE[t] > _TAG_PRECEDENCE[tags[nid]]:
                tags[nid] = t
    if tag_fn is not None:
        on_boundary = np.nonzero(tags != INTERIOR)[0]
        for nid in on_boundary:
            tags[nid] = _TAG_NAMES[tag_fn(cx[nid], cy[nid])]
    mesh.node_tags = tags
    return mesh


# ---------------------------------------------------------------------------
# element matrices

# bilinear quad on an h x h square, nodes counterclockwise; the Laplace
# matrix is h independent
_Q1_STIFF = np.array([
    [4.0, -1.0, -2.0, -1.0],
    [-1.0, 4.0, -1.0, -2.0],
    [-2.0, -1.0, 4.0, -1.0],
    [-1.0, -2.0, -1.0, 4.0],
]) / 6.0

_Q1_MASS = np.array([
    [4.0, 2.0, 1.0, 2.0],
    [2.0, 4.0, 2.0, 1.0],
    [1.0, 2.0, 4.0, 2.0],
    [2.0, 1.0, 2.0, 4.0],
]) / 36.0

_P1_MASS = np.array([
    [2.0, 1.0, 1.0],
    [1.0, 2.0, 1.0],
    [1.0, 1.0, 2.0],
]) / 12.0


def _p1_stiffness(coords3):
    x = coords3[:, 0]
    y = coords3[:, 1]
    b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]])
    c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]])
    area = 0.5 * abs(b[0] * c[1] - b[1] * c[0])
    return (np.outer(b, b) + np.outer(c, c)) / (4.0 * area), area


def _tri_reference_matrices(h):
    """Stiffness/area for the four crisscross triangle orientations."""
    half = 0.5 * h
    tris = [
        np.array([[0, 0], [h, 0], [half, half]], dtype=float),
        np.array([[h, 0], [h, h], [half, half]], dtype=float),
        np.array([[h, h], [0, h], [half, half]], dtype=float),
        np.array([[0, h], [0, 0], [half, half]], dtype=float),
    ]
    stiffs = []
    area = None
    for t in tris:
        k, area = _p1_stiffness(t)
        stiffs.append(k)
    return stiffs, area


# ---------------------------------------------------------------------------
# assembly


def _element_entries(mesh, pde, element_ids=None, what="system"):
    """COO triplets (rows, cols, data) over a subset of elements."""
    conn = mesh.elements
    if element_ids is not None:
        conn = conn[element_ids]
    nel = conn.shape[0]
    npe = conn.shape[1]

    if mesh.kind == "q1":
        if what == "mass":
            base = _Q1_MASS * mesh.h ** 2
            data = np.tile(base.ravel(), nel)
        else:
            base = _Q1_STIFF
            if pde.kind == "diffusion":
                cent = mesh.coords[conn].mean(axis=1)
                k = pde.coefficient(cent[:, 0], cent[:, 1])
                data = (k[:, None] * base.ravel()[None, :]).ravel()
            elif pde.kind == "helmholtz":
                base = base - pde.kappa ** 2 * _Q1_MASS * mesh.h ** 2
                data = np.tile(base.ravel(), nel)
            else:
                data = np.tile(base.ravel(), nel)
    else:
        n_sq = mesh.nx * mesh.ny
        if what == "mass":
            base = _P1_MASS * (mesh.h ** 2 / 4.0)
            data = np.tile(base.ravel(), nel)
        else:
            stiffs, _ = _tri_reference_matrices(mesh.h)
            ids = (np.arange(mesh.tris.shape[0]) if element_ids is None
                   else np.asarray(element_ids))
            orientation = ids // n_sq
            flat = np.stack([s.ravel() for s in stiffs])[orientation]
            if pde.kind == "diffusion":
                cent = mesh.coords[conn].mean(axis=1)
                k = pde.coefficient(cent[:, 0], cent[:, 1])
                flat = flat * k[:, None]
            elif pde.kind == "helmholtz":
                mass_flat = (_P1_MASS * (mesh.h ** 2 / 4.0)).ravel()
                flat = flat - pde.kappa ** 2 * mass_flat[None, :]
            data = flat.ravel()

    rows = np.repeat(conn, npe, axis=1).ravel()
    cols = np.tile(conn, (1, npe)).ravel()
    return rows, cols, data


def assemble_system(mesh, pde, constrain=True):
    """Assemble the PDE system matrix as CSR.

    With constrain=True, rows of gamma_out/sigma_D nodes are replaced by
    identity rows (columns are left untouched, so interior equations keep
    their coupling to the lifted boundary data).
    """
    rows, cols, data = _element_entries(mesh, pde, what="system")
    if constrain:
        constrained = np.zeros(mesh.n_nodes, dtype=bool)
        constrained[mesh.constrained_nodes] = True
        keep = ~constrained[rows]
        rows = np.concatenate([rows[keep], mesh.constrained_nodes])
        cols = np.concatenate([cols[keep], mesh.constrained_nodes])
        data = np.concatenate([data[keep],
                               np.ones(mesh.constrained_nodes.size)])
    mat = sp.coo_matrix((data, (rows, cols)),
                        shape=(mesh.n_nodes, mesh.n_nodes))
    return mat.tocsr()


def assemble_mass(mesh, element_ids=None):
    """Consistent L2 mass matrix (optionally over an element subset)."""
    rows, cols, data = _element_entries(mesh, PdeSpec(), element_ids,
                                        what="mass")
    mat = sp.coo_matrix((data, (rows, cols)),
                        shape=(mesh.n_nodes, mesh.n_nodes))
    return mat.tocsr()


def _restrict(mat_coo_parts, n_total, node_ids):
    rows, cols, data = mat_coo_parts
    lookup = np.full(n_total, -1, dtype=np.int64)
    lookup[node_ids] = np.arange(node_ids.size)
    r = lookup[rows]
    c = lookup[cols]
    keep = (r >= 0) & (c >= 0)
    mat = sp.coo_matrix((data[keep], (r[keep], c[keep])),
                        shape=(node_ids.size, node_ids.size))
    return mat.tocsr()


def assemble_energy_product(mesh, pde, box):
    """Energy (semi)inner product over the elements inside a box.

    Returns (gram, node_ids): the stiffness restricted to the subdomain
    nodes.  The Gram is only semidefinite (constants are flat); it is
    stored unregularized and callers deflate the kernel where needed.
    """
    element_ids = mesh.elements_in_box(box)
    if element_ids.size == 0:
        raise ValueError("box contains no whole element")
    conn = mesh.elements[element_ids]
    node_ids = np.unique(conn)
    pde_energy = pde
    if pde.kind == "helmholtz":
        # energy norm of the indefinite operator is taken from its
        # principal (Laplace) part
        pde_energy = PdeSpec()
    parts = _element_entries(mesh, pde_energy, element_ids, what="system")
    gram = _restrict(parts, mesh.n_nodes, node_ids)
    return gram, node_ids


def assemble_mass_subdomain(mesh, box):
    """L2 Gram over the elements inside a box; returns (gram, node_ids)."""
    element_ids = mesh.elements_in_box(box)
    if element_ids.size == 0:
        raise ValueError("box contains no whole element")
    conn = mesh.elements[element_ids]
    node_ids = np.unique(conn)
    parts = _element_entries(mesh, PdeSpec(), element_ids, what="mass")
    gram = _restrict(parts, mesh.n_nodes, node_ids)
    return gram, node_ids


def load_vector(mesh, f):
    """Consistent load for a source term.

    f is a callable (x, y) -> value, evaluated at element centroids
    (matching the piecewise-constant source fields of the model problems).
    """
    cent = mesh.element_centroids()
    values = np.asarray(f(cent[:, 0], cent[:, 1]), dtype=float)
    conn = mesh.elements
    if mesh.kind == "q1":
        share = values * mesh.h ** 2 / 4.0
    else:
        share = values * (mesh.h ** 2 / 4.0) / 3.0
    b = np.zeros(mesh.n_nodes)
    np.add.at(b, conn.ravel(), np.repeat(share, conn.shape[1]))
    return b


def constrain_rhs(mesh, b, boundary_values=None):
    """Zero the load at constrained rows (or place lifted boundary data)."""
    out = b.copy()
    ids = mesh.constrained_nodes
    out[ids] = 0.0
    if boundary_values is not None:
        for nid, val in boundary_values.items():
            out[nid] = val
    return out


# ---------------------------------------------------------------------------
# interface (trace) mass matrices


def path_l2_gram(coords, closed=False):
    """P1 mass matrix along a polyline given by ordered node coordinates."""
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    if n < 2:
        raise ValueError("a path needs at least two nodes")
    seg_from = np.arange(n - 1)
    seg_to = seg_from + 1
    if closed:
        seg_from = np.append(seg_from, n - 1)
        seg_to = np.append(seg_to, 0)
    lengths = np.linalg.norm(coords[seg_to] - coords[seg_from], axis=1)
    if (lengths <= 0).any():
        raise ValueError("repeated nodes in path")
    rows = np.concatenate([seg_from, seg_from, seg_to, seg_to])
    cols = np.concatenate([seg_from, seg_to, seg_from, seg_to])
    w = lengths / 6.0
    data = np.concatenate([2.0 * w, w, w, 2.0 * w])
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def assemble_interface_l2(mesh, node_ids):
    """L2 Gram of the trace space on a straight mesh line.

    node_ids must lie on one conforming line with spacing h, ordered or
    orderable along it; returns the Gram in that order together with the
    ordering applied.
    """
    node_ids = np.asarray(node_ids)
    coords = mesh.coords[node_ids]
    spans = coords.max(axis=0) - coords.min(axis=0)
    if spans.min() > _GEOM_TOL:
        raise ValueError("interface nodes are not on an axis-aligned line")
    along = int(np.argmax(spans))
    order = np.argsort(coords[:, along])
    coords = coords[order]
    gaps = np.diff(coords[:, along])
    if np.abs(gaps - mesh.h).max() > _GEOM_TOL:
        raise ValueError("interface nodes do not form a conforming line")
    return path_l2_gram(coords), node_ids[order]
