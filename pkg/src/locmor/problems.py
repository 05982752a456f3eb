"""Ready-made model problems: the straight-channel interface transfer
operator (Laplace or Helmholtz) and the unit-square diffusion setup the
GFEM experiments run on."""

import numpy as np
import scipy.sparse as sp

from .fem import (PdeSpec, assemble_interface_l2, assemble_system,
                  build_rect_mesh)
from .linalg import InnerProductSpace, factorize
from .transfer import TransferOperator


def build_interface_transfer(h_inv, length=1.0, width=1.0, kappa=0.0):
    """Transfer map of a channel (-L, L) x (0, W).

    Boundary data lives on the two far edges x = +-L, the response is
    read on the mid line x = 0; the long sides carry natural boundary
    conditions.  Traces are measured in the L2 products of their lines.
    """
    h = 1.0 / h_inv
    mesh = build_rect_mesh((-length, length, 0.0, width), h, "q1",
                           {"left": "gamma_out", "right": "gamma_out"})
    if kappa == 0.0:
        pde = PdeSpec("laplace")
    else:
        pde = PdeSpec("helmholtz", kappa=kappa)
    factorization = factorize(assemble_system(mesh, pde))

    gram_l, ids_l = assemble_interface_l2(mesh,
                                          mesh.nodes_on_line("x", -length))
    gram_r, ids_r = assemble_interface_l2(mesh,
                                          mesh.nodes_on_line("x", length))
    source_ids = np.concatenate([ids_l, ids_r])
    source = InnerProductSpace(sp.block_diag([gram_l, gram_r],
                                             format="csr"))

    gram_m, ids_m = assemble_interface_l2(mesh, mesh.nodes_on_line("x", 0.0))
    range_space = InnerProductSpace(gram_m)

    op = TransferOperator(factorization, source_ids, ids_m, source,
                          range_space, kernel_stage="none")
    op.mesh = mesh
    return op


def box_indicator(background, boxes):
    """Piecewise-constant field from axis-aligned boxes; last box wins."""
    def field(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.full(x.shape, float(background))
        for (x0, x1, y0, y1, value) in boxes:
            inside = (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
            out[inside] = value
        return out
    return field


# high-contrast conductor loops and source strips of the heat-sink setup
_CHANNEL_BOXES = [
    (0.02, 0.10, 0.02, 0.98, 1e5),
    (0.90, 0.98, 0.02, 0.98, 1e5),
    (0.11, 0.89, 0.475, 0.485, 1e5),
    (0.10, 0.90, 0.495, 0.505, 1e5),
    (0.11, 0.89, 0.515, 0.525, 1e5),
]

_SOURCE_BOXES = [
    (0.90, 0.98, 0.02, 0.98, 1.0),
    (0.02, 0.10, 0.02, 0.98, -1.0),
]


def gfem_field(name):
    """PDE and source term for the two GFEM model fields.

    'uniform': unit diffusion, unit load.
    'channels': contrast-1e5 conductor loops with a heating and a cooling
    strip.
    """
    if name == "uniform":
        return PdeSpec("laplace"), box_indicator(1.0, [])
    if name == "channels":
        pde = PdeSpec("diffusion", boxes=list(_CHANNEL_BOXES))
        return pde, box_indicator(0.0, list(_SOURCE_BOXES))
    raise ValueError(f"unknown GFEM field {name!r}")


def build_gfem_mesh(n_cells):
    """Crisscross mesh on the unit square, clamped on the whole boundary."""
    return build_rect_mesh((0.0, 1.0, 0.0, 1.0), 1.0 / n_cells, "p1x",
                           {"all": "sigma_D"})
