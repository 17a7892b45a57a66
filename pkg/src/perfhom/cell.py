"""Periodicity-cell correctors and effective coefficients.

First-order correctors ``N_1, N_2`` solve, in the perforated unit cell with
periodic boundary conditions and zero mean,

    laplace(N_i) = 0,    d(N_i + xi_i)/dn = 0 on the hole boundary,

assembled weakly as a hole-boundary line load (for solid cells the assembled
right-hand side is exactly zero, so the correctors vanish identically, not
just approximately).  The effective diagonal coefficients are the cell
averages ``h_ab = <delta_ab + d(N_b)/d(xi_a)>``; the energy form
``<grad(xi_a + N_a) . grad(xi_b + N_b)>`` agrees with the average form
exactly at the discrete level and is reported alongside as a cross-check.

Second-order correctors ``N_ab`` solve

    laplace(N_ab) = h_ab - delta_ab - 2 d(N_b)/d(xi_a)   (weakly, with the
    hole terms carried by the divergence-form load),

with the compatibility constant taken from the same discrete integrals, so
the reduced system is exactly compatible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import (
    ConstraintSet,
    FemFunction,
    assemble_divergence_load,
    assemble_line_load,
    assemble_load,
    assemble_stiffness,
    edge_normals,
    integrate_p1,
    solve,
    tri_geometry,
)
from .mesh import HoleSpec, TriMesh, build_cell_mesh, reflection_permutation

__all__ = [
    "CellSolution",
    "EffectiveCoefficients",
    "check_symmetries",
    "effective_coefficients",
    "solve_cell",
]

_PAIRS = ((0, 0), (1, 1), (0, 1), (1, 0))


@dataclass(frozen=True)
class EffectiveCoefficients:
    """Effective data of the perforated material.

    ``h`` is the cell-average matrix (diagonal up to symmetry residuals),
    ``h_energy`` the energy-form cross-check, ``cell_area`` the perforated
    cell volume fraction, and ``a_plus`` the homogenized diagonal
    ``cell_area * (h11, h22)`` entering the macroscopic interface problem.
    """

    h: np.ndarray
    h_energy: np.ndarray
    cell_area: float

    @property
    def h11(self) -> float:
        return float(self.h[0, 0])

    @property
    def h22(self) -> float:
        return float(self.h[1, 1])

    @property
    def a_plus(self) -> tuple[float, float]:
        return (self.cell_area * self.h11, self.cell_area * self.h22)


@dataclass
class CellSolution:
    """Correctors and effective data on one periodicity cell."""

    hole: HoleSpec
    mesh: TriMesh
    N: list[FemFunction]
    coeffs: EffectiveCoefficients
    N2: dict[tuple[int, int], FemFunction] = field(default_factory=dict)
    compat: dict[tuple[int, int], float] = field(default_factory=dict)

    @property
    def area(self) -> float:
        return self.coeffs.cell_area


def _corrector_constraints(mesh: TriMesh) -> ConstraintSet:
    con = ConstraintSet(mesh.num_vertices)
    for pairing in mesh.periodic:
        con.tie(pairing.pairs[:, 0], pairing.pairs[:, 1], 0.0)
    con.set_zero_mean()
    return con


def _element_gradients(mesh: TriMesh, values: np.ndarray) -> np.ndarray:
    """Per-element P1 gradients, shape (m, 2)."""
    _, _, b, c, det = tri_geometry(mesh.vertices, mesh.triangles)
    v = values[mesh.triangles]
    gx = np.sum(v * b, axis=1) / det
    gy = np.sum(v * c, axis=1) / det
    return np.stack([gx, gy], axis=1)


def solve_cell(
    hole: HoleSpec,
    h_target: float = 0.05,
    second_order: bool = True,
    method: str = "auto",
) -> CellSolution:
    """Solve the first- (and optionally second-) order cell problems."""
    mesh = build_cell_mesh(hole, h_target)
    K = assemble_stiffness(mesh)
    areas = mesh.areas()
    cell_area = float(areas.sum())

    if hole.is_none:
        hole_edges = np.empty((0, 2), dtype=np.int64)
        normals = np.empty((0, 2))
    else:
        hole_edges = mesh.edge_tags["hole"]
        normals, _ = edge_normals(mesh, hole_edges, toward=np.array([0.5, 0.5]))

    N: list[FemFunction] = []
    grads: list[np.ndarray] = []
    for i in range(2):
        con = _corrector_constraints(mesh)
        rhs = -assemble_line_load(mesh, hole_edges, normals[:, i] if len(normals) else 0.0)
        vals = solve(K, rhs, con, mesh=mesh, method=method)
        N.append(FemFunction(mesh, vals, periodic_cell=True))
        grads.append(_element_gradients(mesh, vals))

    h = np.eye(2)
    for a in range(2):
        for b in range(2):
            h[a, b] += float(np.sum(areas * grads[b][:, a])) / cell_area
    h_energy = np.empty((2, 2))
    for a in range(2):
        for b in range(2):
            ga = grads[a].copy()
            ga[:, a] += 1.0
            gb = grads[b].copy()
            gb[:, b] += 1.0
            h_energy[a, b] = float(np.sum(areas * np.sum(ga * gb, axis=1))) / cell_area

    coeffs = EffectiveCoefficients(h=h, h_energy=h_energy, cell_area=cell_area)
    sol = CellSolution(hole=hole, mesh=mesh, N=N, coeffs=coeffs)

    if second_order:
        for a, b in _PAIRS:
            con = _corrector_constraints(mesh)
            delta = 1.0 if a == b else 0.0
            rhs = (
                -assemble_load(mesh, h[a, b] - delta)
                + assemble_load(mesh, np.ascontiguousarray(grads[b][:, a]))
                - assemble_divergence_load(mesh, N[b].values, axis=a)
            )
            sol.compat[(a, b)] = float(rhs.sum())
            vals = solve(K, rhs, con, mesh=mesh, method=method)
            sol.N2[(a, b)] = FemFunction(mesh, vals, periodic_cell=True)
    return sol


def effective_coefficients(sol: CellSolution) -> EffectiveCoefficients:
    return sol.coeffs


def cell_means(sol: CellSolution) -> dict[str, float]:
    """Integral means of all correctors (gauge check; zero up to solver tol)."""
    out: dict[str, float] = {}
    for i, fn in enumerate(sol.N):
        out[f"N{i + 1}"] = integrate_p1(sol.mesh, fn.values) / sol.area
    for (a, b), fn in sol.N2.items():
        out[f"N{a + 1}{b + 1}"] = integrate_p1(sol.mesh, fn.values) / sol.area
    return out


def check_symmetries(sol: CellSolution, tol: float = 1e-9) -> dict[str, float]:
    """Reflection-parity residuals of the correctors.

    ``N_1`` is odd under the horizontal midline reflection and even under
    the vertical one; ``N_2`` the transpose; the diagonal second-order
    correctors are even under both, the off-diagonal ones odd under both.
    Returns the sup-norm parity residuals, scaled by each field's sup norm.
    """

    def _mirror(axis: int):
        def transform(pts: np.ndarray) -> np.ndarray:
            pts = pts.copy()
            pts[:, axis] = 1.0 - pts[:, axis]
            return pts

        return transform

    perms = [
        reflection_permutation(sol.mesh, _mirror(0), tol=tol),
        reflection_permutation(sol.mesh, _mirror(1), tol=tol),
    ]

    def _residual(values: np.ndarray, axis: int, sign: float) -> float:
        scale = max(float(np.abs(values).max()), 1e-30)
        return float(np.abs(values[perms[axis]] - sign * values).max()) / scale

    out: dict[str, float] = {}
    parities = {"N1": (-1.0, 1.0), "N2": (1.0, -1.0)}
    for i, fn in enumerate(sol.N):
        name = f"N{i + 1}"
        s0, s1 = parities[name]
        out[f"{name}_mirror1"] = _residual(fn.values, 0, s0)
        out[f"{name}_mirror2"] = _residual(fn.values, 1, s1)
    parities2 = {
        (0, 0): (1.0, 1.0),
        (1, 1): (1.0, 1.0),
        (0, 1): (-1.0, -1.0),
        (1, 0): (-1.0, -1.0),
    }
    for (a, b), fn in sol.N2.items():
        s0, s1 = parities2[(a, b)]
        name = f"N{a + 1}{b + 1}"
        out[f"{name}_mirror1"] = _residual(fn.values, 0, s0)
        out[f"{name}_mirror2"] = _residual(fn.values, 1, s1)
    return out
