import numpy as np
import pytest
import scipy.sparse.linalg as spla

from locmor.fem import (GAMMA_OUT, SIGMA_D, SIGMA_N, PdeSpec,
                        assemble_interface_l2, assemble_mass,
                        assemble_mass_subdomain, assemble_system,
                        build_rect_mesh, constrain_rhs, load_vector,
                        path_l2_gram)


def test_mesh_counts_q1_and_crisscross():
    q1 = build_rect_mesh((0, 1, 0, 1), 0.25, kind="q1")
    assert q1.n_nodes == 25
    assert q1.elements.shape == (16, 4)

    tri = build_rect_mesh((0, 2, 0, 1), 0.5, kind="p1x")
    assert tri.n_corner == 5 * 3
    assert tri.n_center == 4 * 2
    assert tri.n_nodes == 23
    assert tri.elements.shape == (4 * 8, 3)


def test_mesh_rejects_bad_geometry():
    with pytest.raises(ValueError):
        build_rect_mesh((0, 1, 0, 1), 0.3)
    with pytest.raises(ValueError):
        build_rect_mesh((0, 0, 0, 1), 0.1)
    with pytest.raises(ValueError):
        build_rect_mesh((0, 1, 0, 1), 0.25, kind="hexes")


def test_boundary_tag_precedence():
    mesh = build_rect_mesh(
        (0, 1, 0, 1), 0.5,
        boundary_spec={"left": "gamma_out", "bottom": "sigma_D"})
    # corner (0,0) sits on both edges; gamma_out wins over sigma_D
    assert mesh.node_tags[mesh.corner_index(0, 0)] == GAMMA_OUT
    assert mesh.node_tags[mesh.corner_index(1, 0)] == SIGMA_D
    assert mesh.node_tags[mesh.corner_index(2, 2)] == SIGMA_N
    assert mesh.node_tags[mesh.corner_index(1, 1)] == 0
    constrained = set(mesh.constrained_nodes.tolist())
    assert mesh.corner_index(0, 2) in constrained
    assert mesh.corner_index(2, 0) in constrained
    assert mesh.corner_index(2, 1) not in constrained


def test_nodes_on_line_sorted():
    mesh = build_rect_mesh((0, 1, -1, 1), 0.25)
    ids = mesh.nodes_on_line("x", 0.5)
    assert ids.size == 9
    ys = mesh.coords[ids, 1]
    assert np.array_equal(ys, np.sort(ys))
    with pytest.raises(ValueError):
        mesh.nodes_on_line("x", 0.37)


def test_stiffness_kernel_and_partition():
    # gradients annihilate constants; mass integrates them exactly
    for kind in ("q1", "p1x"):
        mesh = build_rect_mesh((0, 1, 0, 1), 0.25, kind=kind)
        a = assemble_system(mesh, PdeSpec(), constrain=False)
        ones = np.ones(mesh.n_nodes)
        assert np.abs(a @ ones).max() < 1e-13
        m = assemble_mass(mesh)
        assert abs(ones @ m @ ones - 1.0) < 1e-13


def test_element_matrices_match_quadrature_oracle():
    # one-element mesh against dense Gauss quadrature of the bilinear form
    h = 0.7
    mesh = build_rect_mesh((0, h, 0, h), h, kind="q1")
    a = assemble_system(mesh, PdeSpec(), constrain=False).toarray()

    g = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    pts = [(0.5 * (1 + s), 0.5 * (1 + t)) for s in g for t in g]
    # shape functions on the unit square, counterclockwise from (0,0)
    def grads(xi, eta):
        return np.array([
            [-(1 - eta), -(1 - xi)],
            [(1 - eta), -xi],
            [eta, xi],
            [-eta, (1 - xi)],
        ])
    ref = np.zeros((4, 4))
    for xi, eta in pts:
        gmat = grads(xi, eta) / h
        ref += 0.25 * h * h * (gmat @ gmat.T)
    # mesh orders the element a, a+1, diagonal, a+nx+1
    perm = [0, 1, 3, 2]
    assert np.abs(a - ref[np.ix_(perm, perm)]).max() < 1e-13


def test_linear_fields_are_exact():
    # P1 and Q1 both reproduce u(x,y) = x, so A u equals the load of the
    # zero source away from the Neumann boundary terms
    for kind in ("q1", "p1x"):
        mesh = build_rect_mesh(
            (0, 1, 0, 1), 0.125, kind=kind,
            boundary_spec={"all": "sigma_D"})
        u = mesh.coords[:, 0].copy()
        a = assemble_system(mesh, PdeSpec(), constrain=False)
        res = a @ u
        free = np.setdiff1d(np.arange(mesh.n_nodes), mesh.constrained_nodes)
        assert np.abs(res[free]).max() < 1e-13


def test_manufactured_solution_convergence():
    # -lap(u) = 2 pi^2 sin(pi x) sin(pi y), u = 0 on the boundary
    errs = []
    hs = [1 / 8, 1 / 16, 1 / 32]
    for h in hs:
        mesh = build_rect_mesh((0, 1, 0, 1), h, kind="p1x",
                               boundary_spec={"all": "sigma_D"})
        a = assemble_system(mesh, PdeSpec())
        f = lambda x, y: 2 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)
        b = constrain_rhs(mesh, load_vector(mesh, f))
        u = spla.spsolve(a.tocsc(), b)
        exact = np.sin(np.pi * mesh.coords[:, 0]) * np.sin(np.pi * mesh.coords[:, 1])
        diff = u - exact
        m = assemble_mass(mesh)
        errs.append(np.sqrt(diff @ m @ diff))
    rate1 = np.log2(errs[0] / errs[1])
    rate2 = np.log2(errs[1] / errs[2])
    assert rate1 > 1.8 and rate2 > 1.8


def test_diffusion_coefficient_boxes():
    pde = PdeSpec(kind="diffusion", background=1.0,
                  boxes=[(0.0, 0.5, 0.0, 1.0, 10.0),
                         (0.2, 0.3, 0.2, 0.3, 100.0)])
    k = pde.coefficient([0.6, 0.25, 0.25], [0.5, 0.5, 0.25])
    assert np.array_equal(k, [1.0, 10.0, 100.0])
    with pytest.raises(ValueError):
        PdeSpec(kind="diffusion", boxes=[(0, 1, 0, 1, -2.0)])
    with pytest.raises(ValueError):
        PdeSpec(kind="laplace", kappa=3.0)


def test_helmholtz_shift_is_mass():
    mesh = build_rect_mesh((0, 1, 0, 1), 0.25, kind="p1x")
    lap = assemble_system(mesh, PdeSpec(), constrain=False)
    helm = assemble_system(mesh, PdeSpec(kind="helmholtz", kappa=3.0),
                           constrain=False)
    m = assemble_mass(mesh)
    assert np.abs((lap - 9.0 * m - helm).toarray()).max() < 1e-12


def test_load_vector_integrates_constants():
    for kind in ("q1", "p1x"):
        mesh = build_rect_mesh((0, 2, 0, 1), 0.25, kind=kind)
        b = load_vector(mesh, lambda x, y: np.full_like(x, 3.0))
        assert abs(b.sum() - 6.0) < 1e-12


def test_subdomain_products_restrict():
    mesh = build_rect_mesh((0, 1, 0, 1), 0.125, kind="p1x")
    box = (0.25, 0.75, 0.25, 0.75)
    m_sub, ids = assemble_mass_subdomain(mesh, box)
    ones = np.ones(ids.size)
    assert abs(ones @ m_sub @ ones - 0.25) < 1e-12
    from locmor.fem import assemble_energy_product
    gram, ids2 = assemble_energy_product(mesh, PdeSpec(), box)
    assert np.array_equal(ids, ids2)
    assert np.abs(gram @ ones).max() < 1e-13
    x = mesh.coords[ids2, 0]
    assert abs(x @ gram @ x - 0.25) < 1e-12


def test_path_l2_gram_uniform_line():
    # consistent P1 mass on a uniform line: 2h/3 diagonal, h/6 coupling
    n = 9
    h = 0.5
    coords = np.column_stack([np.zeros(n), h * np.arange(n)])
    g = path_l2_gram(coords).toarray()
    assert abs(g[4, 4] - 2 * h / 3) < 1e-15
    assert abs(g[0, 0] - h / 3) < 1e-15
    assert abs(g[4, 5] - h / 6) < 1e-15
    assert abs(g.sum() - h * (n - 1)) < 1e-13
    with pytest.raises(ValueError):
        path_l2_gram(coords[[0, 0, 1]])


def test_interface_l2_orders_nodes():
    mesh = build_rect_mesh((0, 1, 0, 1), 0.25)
    ids = mesh.nodes_on_line("x", 0.5)
    shuffled = ids[::-1].copy()
    gram, ordered = assemble_interface_l2(mesh, shuffled)
    assert np.array_equal(ordered, ids)
    ones = np.ones(ids.size)
    assert abs(ones @ gram @ ones - 1.0) < 1e-13
