"""Mesh-builder invariants: validation, tags, pairings, refinement."""

from __future__ import annotations

import numpy as np
import pytest

from perfhom import (
    GeometryError,
    HoleSpec,
    InterfaceCurve,
    MeshBudgetError,
    REGION_MINUS,
    REGION_PLUS,
    build_cell_mesh,
    build_eps_mesh,
    build_macro_mesh,
    build_strip_mesh,
)
from perfhom.fem import integrate_p1
from perfhom.mesh import refine, reflection_permutation


def test_hole_spec_validation():
    with pytest.raises(GeometryError):
        HoleSpec(kind="square")
    with pytest.raises(GeometryError):
        HoleSpec(radius=0.5)
    with pytest.raises(GeometryError):
        HoleSpec(segments=12)
    assert HoleSpec(kind="none").is_none
    assert HoleSpec(kind="none").polygon_area() == 0.0
    # the 32-gon area is slightly below the disk it inscribes
    disk = np.pi * 0.25**2
    assert 0.0 < disk - HoleSpec().polygon_area() < 0.01 * disk


def test_interface_curve_profile():
    with pytest.raises(GeometryError):
        InterfaceCurve("sawtooth")
    with pytest.raises(GeometryError):
        InterfaceCurve("oscillating", 0.0)
    flat = InterfaceCurve()
    assert flat.is_flat
    assert np.all(flat.depth(np.linspace(-2, 2, 9)) == 0.0)

    curve = InterfaceCurve("oscillating", 0.2)
    # exact zeros at integers, trough of -amplitude at half-integers
    assert np.all(curve.depth(np.arange(-3.0, 4.0)) == 0.0)
    assert curve.depth(0.5) == pytest.approx(-0.2, abs=1e-15)
    assert np.all(curve.depth(np.linspace(-1, 2, 301)) <= 0.0)
    # slope is the derivative of the depth profile
    t = np.linspace(0.05, 0.95, 19)
    fd = (curve.depth(t + 1e-6) - curve.depth(t - 1e-6)) / 2e-6
    assert np.max(np.abs(fd - curve.slope(t))) < 1e-6
    assert curve.mean_depth() == -0.1


def test_curve_clearance_against_hole_lattice():
    hole = HoleSpec()
    assert InterfaceCurve("oscillating", 0.2).max_feasible_amplitude(hole) == 0.25
    InterfaceCurve("oscillating", 0.2).validate_clearance(hole)
    with pytest.raises(GeometryError):
        InterfaceCurve("oscillating", 0.3).validate_clearance(hole)
    with pytest.raises(GeometryError):
        InterfaceCurve("oscillating", 0.25).validate_clearance(hole)
    # a solid lattice poses no constraint
    InterfaceCurve("oscillating", 0.9).validate_clearance(HoleSpec(kind="none"))


def test_cell_mesh_symmetry_and_periodic_pairing(hole):
    with pytest.raises(GeometryError):
        build_cell_mesh(hole, h_target=0.3)
    mesh = build_cell_mesh(hole, h_target=0.125)
    v = mesh.vertices
    assert v.min() >= -1e-12 and v.max() <= 1.0 + 1e-12
    # vertex set invariant under both midline reflections
    for axis in (0, 1):

        def mirror(pts, axis=axis):
            pts[:, axis] = 1.0 - pts[:, axis]
            return pts

        perm = reflection_permutation(mesh, mirror)
        assert len(np.unique(perm)) == mesh.num_vertices
    # no vertex inside the hole polygon's inscribed circle
    r_in = 0.25 * np.cos(np.pi / hole.segments)
    dist = np.hypot(v[:, 0] - 0.5, v[:, 1] - 0.5)
    assert dist.min() >= r_in - 1e-12


def test_strip_mesh_duplicated_interface(hole):
    with pytest.raises(GeometryError):
        build_strip_mesh(2, 6, hole)
    mesh = build_strip_mesh(3, 4, hole, h_target=0.25)
    assert mesh.meta["L_minus"] == 3 and mesh.meta["L_plus"] == 4
    assert len(mesh.interface_pairs) > 0
    pairs = mesh.interface_pairs
    # paired vertices coincide geometrically but are distinct indices
    gap = mesh.vertices[pairs[:, 0]] - mesh.vertices[pairs[:, 1]]
    assert np.max(np.abs(gap)) <= 1e-12
    assert np.all(pairs[:, 0] != pairs[:, 1])
    # regions split by the interface
    assert set(np.unique(mesh.region)) == {REGION_MINUS, REGION_PLUS}


def test_eps_mesh_tags_and_budget(hole):
    with pytest.raises(GeometryError):
        build_eps_mesh(1, hole=hole)
    with pytest.raises(MeshBudgetError):
        build_eps_mesh(8, hole=hole, triangle_budget=100)
    mesh = build_eps_mesh(4, hole=hole)
    outer = mesh.tagged_vertices("outer")
    v = mesh.vertices[outer]
    on_boundary = (
        (np.abs(v[:, 0] + 1.0) <= 1e-12)
        | (np.abs(v[:, 0] - 1.0) <= 1e-12)
        | (np.abs(v[:, 1]) <= 1e-12)
        | (np.abs(v[:, 1] - 1.0) <= 1e-12)
    )
    assert np.all(on_boundary)
    # flat interface: minus vertices left of 0, plus vertices right of 0
    minus_ids = np.unique(mesh.triangles[mesh.region == REGION_MINUS])
    plus_ids = np.unique(mesh.triangles[mesh.region == REGION_PLUS])
    assert mesh.vertices[minus_ids, 0].max() <= 1e-12
    assert mesh.vertices[plus_ids, 0].min() >= -1e-12


def test_macro_mesh_interface_alignment():
    mesh = build_macro_mesh(h_target=1.0 / 16.0)
    cent = mesh.vertices[mesh.triangles].mean(axis=1)
    # no triangle straddles the interface
    signs = np.sign(cent[:, 0])
    assert np.all(signs[mesh.region == REGION_MINUS] < 0)
    assert np.all(signs[mesh.region == REGION_PLUS] > 0)
    dup = build_macro_mesh(h_target=1.0 / 16.0, duplicate_interface=True)
    assert len(dup.interface_pairs) > 0


def test_refine_preserves_area_and_tags(hole):
    mesh = build_eps_mesh(2, hole=hole)
    fine = refine(mesh)
    assert len(fine.triangles) == 4 * len(mesh.triangles)
    ones_coarse = integrate_p1(mesh, np.ones(mesh.num_vertices))
    ones_fine = integrate_p1(fine, np.ones(fine.num_vertices))
    assert ones_fine == pytest.approx(ones_coarse, rel=1e-12)
    assert len(fine.tagged_vertices("outer")) > len(mesh.tagged_vertices("outer"))
    assert set(np.unique(fine.region)) == set(np.unique(mesh.region))


def test_reflection_permutation_rejects_asymmetric_sets():
    mesh = build_macro_mesh(h_target=0.25)

    def shift(pts):
        pts[:, 0] = pts[:, 0] + 0.01
        return pts

    with pytest.raises(GeometryError):
        reflection_permutation(mesh, shift)
