"""FEM primitives: assembly exactness, constraints, solvers, error norms."""

from __future__ import annotations

import numpy as np
import pytest

from perfhom import (
    ConstraintError,
    ConstraintSet,
    DiffusionTensor,
    FemFunction,
    HoleSpec,
)
from perfhom.fem import (
    assemble_line_load,
    assemble_load,
    assemble_stiffness,
    error_norms,
    integrate_p1,
    line_gauss,
    mass_lumped,
    nodal_error_norms,
    solve,
)
from perfhom.mesh import build_macro_mesh, build_strip_mesh


@pytest.fixture(scope="module")
def mesh():
    return build_macro_mesh(h_target=0.125)


def test_stiffness_energy_of_linear_field(mesh):
    """u = a + b.x has energy |b|^2 * area, exactly representable in P1."""
    K = assemble_stiffness(mesh)
    b = np.array([0.7, -1.3])
    u = 0.25 + mesh.vertices @ b
    area = integrate_p1(mesh, np.ones(mesh.num_vertices))
    assert u @ (K @ u) == pytest.approx(float(b @ b) * area, rel=1e-12)
    # a constant field carries no energy
    ones = np.ones(mesh.num_vertices)
    assert abs(ones @ (K @ ones)) <= 1e-12 * abs(u @ (K @ u))


def test_stiffness_region_restriction_and_tensor(mesh):
    """Region-split assembly sums to the whole; coefficients scale energy."""
    K = assemble_stiffness(mesh)
    K_minus = assemble_stiffness(mesh, region=0)
    K_plus = assemble_stiffness(mesh, region=1)
    gap = (K_minus + K_plus - K).tocoo()
    worst = np.max(np.abs(gap.data)) if gap.nnz else 0.0
    assert worst <= 1e-14

    tensor = DiffusionTensor.isotropic(2.0, 1.0)
    K2 = assemble_stiffness(mesh, tensor=tensor)
    u = mesh.vertices[:, 0].copy()
    expected = 2.0 * integrate_p1(
        mesh, np.ones(mesh.num_vertices), region=0
    ) + integrate_p1(mesh, np.ones(mesh.num_vertices), region=1)
    assert u @ (K2 @ u) == pytest.approx(expected, rel=1e-12)


def test_load_quadrature_exact_to_second_order(mesh):
    """The 3-point mid-edge rule integrates quadratics exactly."""
    ones = np.ones(mesh.num_vertices)
    b = assemble_load(mesh, lambda pts: pts[:, 0] ** 2 + pts[:, 0] * pts[:, 1])
    # sum_i b_i = integral of f (partition of unity); domain (-1,1)x(0,1)
    exact = 2.0 / 3.0 + 0.0
    assert float(b @ ones) == pytest.approx(exact, rel=1e-12)
    # scalar and nodal-array forms agree with the callable form
    b_scalar = assemble_load(mesh, 2.5)
    b_callable = assemble_load(mesh, lambda pts: np.full(len(pts), 2.5))
    assert np.max(np.abs(b_scalar - b_callable)) <= 1e-14


def test_line_load_measures_tagged_length():
    strip = build_strip_mesh(3, 3, HoleSpec(kind="none"), h_target=0.25)
    edges = strip.edge_tags["interface_minus"]
    b = assemble_line_load(strip, edges, 1.0)
    # the flat interface segment has unit length
    assert float(b.sum()) == pytest.approx(1.0, rel=1e-12)
    quad = line_gauss(strip, edges)
    assert float(quad.w.sum()) == pytest.approx(1.0, rel=1e-12)
    # outward normals of the minus side point towards +x1
    assert np.all(quad.nu[:, 0] > 0.0)


def test_mass_lumped_sums_to_area(mesh):
    lump = mass_lumped(mesh)
    assert float(lump.sum()) == pytest.approx(2.0, rel=1e-12)
    assert np.all(lump > 0.0)


def test_constraint_ties_and_contradiction():
    con = ConstraintSet(4)
    con.tie(0, 1, 0.5)
    con.tie(1, 2, 0.25)
    # a consistent redundant tie is accepted
    con.tie(0, 2, 0.75)
    with pytest.raises(ConstraintError):
        con.tie(0, 2, 0.6)


def test_solve_respects_ties_and_dirichlet(mesh):
    """Tied interface values differ by the prescribed offset after solve."""
    dup = build_macro_mesh(h_target=0.25, duplicate_interface=True)
    K = assemble_stiffness(dup)
    b = assemble_load(dup, 1.0)
    con = ConstraintSet(dup.num_vertices)
    con.fix(dup.tagged_vertices("outer"), 0.0)
    offsets = 0.1 * dup.vertices[dup.interface_pairs[:, 0], 1]
    con.tie(dup.interface_pairs[:, 0], dup.interface_pairs[:, 1], offsets)
    u = solve(K, b, con, mesh=dup)
    got = u[dup.interface_pairs[:, 1]] - u[dup.interface_pairs[:, 0]]
    assert np.max(np.abs(got - offsets)) <= 1e-10
    assert np.max(np.abs(u[dup.tagged_vertices("outer")])) == 0.0


def test_solver_methods_agree(mesh):
    K = assemble_stiffness(mesh)
    b = assemble_load(mesh, lambda pts: np.sin(np.pi * pts[:, 1]))
    con = ConstraintSet(mesh.num_vertices)
    con.fix(mesh.tagged_vertices("outer"), 0.0)
    u_direct = solve(K, b, con, mesh=mesh, method="direct")
    u_cg = solve(K, b, con, mesh=mesh, method="cg")
    scale = np.max(np.abs(u_direct))
    assert np.max(np.abs(u_direct - u_cg)) <= 1e-8 * scale


def test_zero_mean_constraint(mesh):
    """Pure-Neumann solve pinned by the zero-mean condition."""
    f = lambda pts: pts[:, 0]  # zero mean on (-1,1)x(0,1): compatible
    K = assemble_stiffness(mesh)
    b = assemble_load(mesh, f)
    con = ConstraintSet(mesh.num_vertices)
    con.set_zero_mean()
    u = solve(K, b, con, mesh=mesh)
    assert abs(integrate_p1(mesh, u)) <= 1e-9 * max(1.0, np.max(np.abs(u)))


def test_error_norms_agree_with_nodal_for_p1_reference(mesh):
    """A P1 reference on the same mesh makes both error paths identical."""
    rng = np.random.default_rng(7)
    u = np.sin(2.0 * mesh.vertices[:, 0]) + 0.3 * mesh.vertices[:, 1]
    w = u + 1e-3 * rng.standard_normal(mesh.num_vertices)
    ref = FemFunction(mesh, w)
    a = error_norms(mesh, u, ref)
    b = nodal_error_norms(mesh, u, w)
    for key in ("l2", "h1", "l2_minus", "l2_plus", "h1_minus", "h1_plus",
                "interior_h1"):
        assert getattr(a, key) == pytest.approx(getattr(b, key), rel=1e-10, abs=1e-14)


def test_fem_function_evaluation_and_gradient(mesh):
    """Nodal interpolation is exact at vertices; gradients exact for linears."""
    vals = 2.0 * mesh.vertices[:, 0] - 3.0 * mesh.vertices[:, 1] + 0.5
    fn = FemFunction(mesh, vals)
    pts = np.array([[-0.43, 0.31], [0.27, 0.66], [0.81, 0.12]])
    got, grads = fn.evaluate_with_grad(pts)
    assert np.max(np.abs(got - (2.0 * pts[:, 0] - 3.0 * pts[:, 1] + 0.5))) <= 1e-12
    assert np.max(np.abs(grads - np.array([2.0, -3.0]))) <= 1e-12
    at_vertices = fn.evaluate(mesh.vertices[:50])
    assert np.max(np.abs(at_vertices - vals[:50])) <= 1e-12
