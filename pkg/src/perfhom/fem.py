"""P1 finite elements on tagged triangulations.

Provides stiffness/load assembly (3-point mid-edge quadrature, 2-point Gauss
line quadrature), affine constraint handling (Dirichlet values, periodic and
jump ties) reduced through union-find with offsets, sparse solvers with a
residual guarantee, point evaluation of P1 fields through a background-grid
locator, and split error norms.

Discrete conventions used throughout:

* element stiffness ``K_ij = (a11 b_i b_j + a22 c_i c_j) / (2 det)`` with
  ``b/c`` the usual edge-difference coefficients and ``det`` twice the area,
* volume loads by the 3-point mid-edge rule (exact for quadratics),
* line loads by 2-point Gauss (exact for cubics),
* constraints ``value[slave] = value[master] + offset`` eliminated exactly:
  the reduced system is ``(T' K T) u_hat = T' (f - K g)`` with
  ``u = T u_hat + g``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from ._backend import BACKEND, locate_scan, stiffness_values
from ._kernels_py import _expand_ranges
from .mesh import REGION_MINUS, REGION_PLUS, TriMesh

__all__ = [
    "BACKEND",
    "ConstraintError",
    "ConstraintSet",
    "DiffusionTensor",
    "ErrorNorms",
    "FemFunction",
    "SolverError",
    "LineQuad",
    "assemble_divergence_load",
    "assemble_line_load",
    "assemble_line_load_from_values",
    "assemble_load",
    "assemble_stiffness",
    "edge_normals",
    "error_norms",
    "evaluate_many",
    "integrate_p1",
    "line_gauss",
    "mass_lumped",
    "nodal_error_norms",
    "solve",
    "tri_geometry",
]


class ConstraintError(ValueError):
    """Raised when affine constraints are contradictory."""


class SolverError(RuntimeError):
    """Raised when a linear solve fails to reach the requested residual."""


# ---------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class DiffusionTensor:
    """Per-region diagonal diffusion coefficients ``diag(a11, a22)``."""

    a_minus: tuple[float, float] = (1.0, 1.0)
    a_plus: tuple[float, float] = (1.0, 1.0)

    @staticmethod
    def isotropic(minus: float = 1.0, plus: float = 1.0) -> "DiffusionTensor":
        return DiffusionTensor((minus, minus), (plus, plus))

    def element_coeffs(self, region: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        plus = region == REGION_PLUS
        a11 = np.where(plus, self.a_plus[0], self.a_minus[0])
        a22 = np.where(plus, self.a_plus[1], self.a_minus[1])
        return a11, a22


# ---------------------------------------------------------------------------
# geometry helpers


def tri_geometry(verts: np.ndarray, tris: np.ndarray):
    """Per-element P1 data: xs, ys (m,3), b, c (m,3), det = 2*area (m,)."""
    xs = verts[tris, 0]
    ys = verts[tris, 1]
    b = ys[:, [1, 2, 0]] - ys[:, [2, 0, 1]]
    c = xs[:, [2, 0, 1]] - xs[:, [1, 2, 0]]
    det = (xs[:, 1] - xs[:, 0]) * (ys[:, 2] - ys[:, 0]) - (
        xs[:, 2] - xs[:, 0]
    ) * (ys[:, 1] - ys[:, 0])
    return xs, ys, b, c, det


def _edge_midpoints(xs: np.ndarray, ys: np.ndarray):
    """Mid-edge quadrature points, stacked (3m, 2) in edge order 01, 12, 20."""
    mx = np.concatenate(
        [
            0.5 * (xs[:, 0] + xs[:, 1]),
            0.5 * (xs[:, 1] + xs[:, 2]),
            0.5 * (xs[:, 2] + xs[:, 0]),
        ]
    )
    my = np.concatenate(
        [
            0.5 * (ys[:, 0] + ys[:, 1]),
            0.5 * (ys[:, 1] + ys[:, 2]),
            0.5 * (ys[:, 2] + ys[:, 0]),
        ]
    )
    return np.stack([mx, my], axis=1)


def edge_normals(
    mesh: TriMesh, edges: np.ndarray, toward: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals and lengths for tagged edges.

    The normal is oriented toward the reference point ``toward`` when given
    (e.g. a hole centre); otherwise the raw left-normal of the edge
    direction is returned.
    """
    a = mesh.vertices[edges[:, 0]]
    b = mesh.vertices[edges[:, 1]]
    d = b - a
    lengths = np.hypot(d[:, 0], d[:, 1])
    n = np.stack([-d[:, 1], d[:, 0]], axis=1) / lengths[:, None]
    if toward is not None:
        mid = 0.5 * (a + b)
        flip = np.sum(n * (toward - mid), axis=1) < 0.0
        n[flip] *= -1.0
    return n, lengths


# ---------------------------------------------------------------------------
# assembly


def _as_tri_mask(mesh: TriMesh, region: int | np.ndarray | None) -> np.ndarray:
    if region is None:
        return np.ones(mesh.num_triangles, dtype=bool)
    if isinstance(region, (int, np.integer)):
        return mesh.region == region
    return np.asarray(region, dtype=bool)


def assemble_stiffness(
    mesh: TriMesh,
    tensor: DiffusionTensor = DiffusionTensor(),
    region: int | np.ndarray | None = None,
) -> sparse.csr_matrix:
    """Sparse stiffness matrix of ``-div(A grad u)`` (optionally restricted
    to a triangle subset)."""
    mask = _as_tri_mask(mesh, region)
    tris = mesh.triangles[mask]
    xs = mesh.vertices[tris, 0]
    ys = mesh.vertices[tris, 1]
    a11, a22 = tensor.element_coeffs(mesh.region[mask])
    vals = stiffness_values(
        np.ascontiguousarray(xs),
        np.ascontiguousarray(ys),
        np.ascontiguousarray(a11, dtype=float),
        np.ascontiguousarray(a22, dtype=float),
    )
    rows = tris[:, [0, 0, 0, 1, 1, 1, 2, 2, 2]].ravel()
    cols = tris[:, [0, 1, 2, 0, 1, 2, 0, 1, 2]].ravel()
    n = mesh.num_vertices
    K = sparse.coo_matrix((vals.ravel(), (rows, cols)), shape=(n, n))
    return K.tocsr()


def _load_values_at_midpoints(
    mesh: TriMesh, f, tris: np.ndarray, xs: np.ndarray, ys: np.ndarray
) -> np.ndarray:
    """Evaluate a load (callable / nodal array / element array / scalar) at
    the 3m mid-edge points; returns (3m,)."""
    m = len(tris)
    if callable(f):
        return np.asarray(f(_edge_midpoints(xs, ys)), dtype=float)
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full(3 * m, float(arr))
    if arr.shape == (mesh.num_vertices,):
        v = arr[tris]
        return np.concatenate(
            [
                0.5 * (v[:, 0] + v[:, 1]),
                0.5 * (v[:, 1] + v[:, 2]),
                0.5 * (v[:, 2] + v[:, 0]),
            ]
        )
    raise ValueError("load must be callable, scalar, nodal or per-element array")


def assemble_load(
    mesh: TriMesh,
    f,
    region: int | np.ndarray | None = None,
) -> np.ndarray:
    """Load vector ``∫ f phi_i`` by the 3-point mid-edge rule.

    ``f`` may be a callable of points ``(n, 2)``, a nodal array, a
    per-element array, or a scalar.
    """
    mask = _as_tri_mask(mesh, region)
    tris = mesh.triangles[mask]
    xs = mesh.vertices[tris, 0]
    ys = mesh.vertices[tris, 1]
    if isinstance(f, np.ndarray) and f.shape == (mesh.num_triangles,):
        fm = np.tile(f[mask], 3)
    else:
        fm = _load_values_at_midpoints(mesh, f, tris, xs, ys)
    _, _, _, _, det = tri_geometry(mesh.vertices, tris)
    area = 0.5 * det
    m = len(tris)
    out = np.zeros(mesh.num_vertices)
    # mid-edge point on edge (j,k) carries phi_j = phi_k = 1/2
    w = area / 3.0
    for e, (j, k) in enumerate(((0, 1), (1, 2), (2, 0))):
        contrib = 0.5 * w * fm[e * m : (e + 1) * m]
        np.add.at(out, tris[:, j], contrib)
        np.add.at(out, tris[:, k], contrib)
    return out


def assemble_divergence_load(
    mesh: TriMesh,
    w,
    axis: int,
    region: int | np.ndarray | None = None,
) -> np.ndarray:
    """Load vector ``∫ w d(phi_i)/d(x_axis)`` (P1 gradients are exact).

    ``w`` may be a callable, nodal array, per-element array, or scalar; it
    is averaged over the element by the mid-edge rule.
    """
    mask = _as_tri_mask(mesh, region)
    tris = mesh.triangles[mask]
    xs, ys, b, c, det = tri_geometry(mesh.vertices, tris)
    if isinstance(w, np.ndarray) and w.shape == (mesh.num_triangles,):
        wbar = w[mask]
    else:
        wm = _load_values_at_midpoints(mesh, w, tris, xs, ys)
        m = len(tris)
        wbar = (wm[:m] + wm[m : 2 * m] + wm[2 * m :]) / 3.0
    coeff = b if axis == 0 else c
    out = np.zeros(mesh.num_vertices)
    for i in range(3):
        np.add.at(out, tris[:, i], 0.5 * wbar * coeff[:, i])
    return out


_GAUSS2 = (-1.0 / np.sqrt(3.0), 1.0 / np.sqrt(3.0))


@dataclass
class LineQuad:
    """2-point Gauss data over a set of edges.

    Points are stacked per Gauss index (first all edges at the first point,
    then all edges at the second); ``nu`` is the left-normal of each edge
    direction repeated per point (for edges ordered by increasing y this
    normal points toward increasing x).
    """

    edges: np.ndarray
    pts: np.ndarray
    w: np.ndarray
    nu: np.ndarray

    @property
    def num_edges(self) -> int:
        return len(self.edges)


def line_gauss(mesh: TriMesh, edges: np.ndarray) -> LineQuad:
    """2-point Gauss rule over tagged edges."""
    a = mesh.vertices[edges[:, 0]]
    b = mesh.vertices[edges[:, 1]]
    d = b - a
    lengths = np.hypot(d[:, 0], d[:, 1])
    nu1 = np.stack([d[:, 1], -d[:, 0]], axis=1) / lengths[:, None]
    pts = []
    for xi in _GAUSS2:
        s = 0.5 * (1.0 + xi)
        pts.append(a + s * d)
    return LineQuad(
        edges=edges,
        pts=np.concatenate(pts),
        w=np.tile(0.5 * lengths, 2),
        nu=np.tile(nu1, (2, 1)),
    )


def assemble_line_load_from_values(
    mesh: TriMesh, quad: LineQuad, values: np.ndarray
) -> np.ndarray:
    """Line load from per-Gauss-point integrand values (ordering of
    ``LineQuad.pts``); shares the quadrature with any scalar computed from
    the same values, so exact cancellations are preserved bitwise."""
    out = np.zeros(mesh.num_vertices)
    k = quad.num_edges
    for idx, xi in enumerate(_GAUSS2):
        s = 0.5 * (1.0 + xi)
        base = quad.w[idx * k : (idx + 1) * k] * values[idx * k : (idx + 1) * k]
        np.add.at(out, quad.edges[:, 0], base * (1.0 - s))
        np.add.at(out, quad.edges[:, 1], base * s)
    return out


def assemble_line_load(
    mesh: TriMesh,
    edges: np.ndarray,
    g,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Load vector ``∫ g phi_i dl`` over tagged edges (2-point Gauss).

    ``g`` is a callable of points or a per-edge constant array; ``weights``
    optionally scales each edge's contribution (e.g. a normal component).
    """
    if not len(edges):
        return np.zeros(mesh.num_vertices)
    a = mesh.vertices[edges[:, 0]]
    b = mesh.vertices[edges[:, 1]]
    lengths = np.hypot(*(b - a).T)
    out = np.zeros(mesh.num_vertices)
    for xi in _GAUSS2:
        s = 0.5 * (1.0 + xi)
        pts = a + s * (b - a)
        if callable(g):
            gv = np.asarray(g(pts), dtype=float)
        else:
            gv = np.asarray(g, dtype=float)
            if gv.ndim == 0:
                gv = np.full(len(edges), float(gv))
        if weights is not None:
            gv = gv * weights
        base = 0.5 * lengths * gv
        np.add.at(out, edges[:, 0], base * (1.0 - s))
        np.add.at(out, edges[:, 1], base * s)
    return out


def integrate_p1(mesh: TriMesh, values: np.ndarray, region: int | np.ndarray | None = None) -> float:
    """Exact integral of a P1 nodal field."""
    mask = _as_tri_mask(mesh, region)
    tris = mesh.triangles[mask]
    areas = mesh.areas()[mask]
    return float(np.sum(areas * values[tris].mean(axis=1)))


def mass_lumped(mesh: TriMesh, region: int | np.ndarray | None = None) -> np.ndarray:
    """Lumped mass vector ``∫ phi_i`` (row sums of the mass matrix)."""
    mask = _as_tri_mask(mesh, region)
    tris = mesh.triangles[mask]
    areas = mesh.areas()[mask]
    out = np.zeros(mesh.num_vertices)
    for i in range(3):
        np.add.at(out, tris[:, i], areas / 3.0)
    return out


# ---------------------------------------------------------------------------
# constraints


class ConstraintSet:
    """Affine equality constraints on nodal values.

    Supports Dirichlet values, ties ``value[slave] = value[master] + offset``
    (periodic identification and prescribed interface jumps), and an
    optional zero-mean gauge.  ``reduce`` eliminates the constraints into
    ``u = T u_hat + g`` by union-find with offsets, detecting contradictory
    chains exactly.
    """

    def __init__(self, n: int):
        self.n = n
        self._parent = np.arange(n, dtype=np.int64)
        self._offset = np.zeros(n)
        self._touched: set[int] = set()
        self._dirichlet: dict[int, float] = {}
        self.zero_mean = False

    # -- union-find with offsets -------------------------------------------

    def _find(self, i: int) -> tuple[int, float]:
        path = []
        off = 0.0
        while self._parent[i] != i:
            path.append((i, off))
            off += self._offset[i]
            i = int(self._parent[i])
        for node, prior in path:
            self._parent[node] = i
            self._offset[node] = off - prior
        return i, off

    def tie(self, master, slave, offset=0.0) -> None:
        """Impose ``value[slave] = value[master] + offset`` (array-friendly)."""
        master = np.atleast_1d(np.asarray(master, dtype=np.int64))
        slave = np.atleast_1d(np.asarray(slave, dtype=np.int64))
        offs = np.broadcast_to(np.asarray(offset, dtype=float), master.shape)
        for m, s, o in zip(master, slave, offs):
            m, s, o = int(m), int(s), float(o)
            self._touched.update((m, s))
            rm, om = self._find(m)
            rs, os_ = self._find(s)
            # value[s] = value[m] + o  =>  root_s value in terms of root_m
            delta = om + o - os_
            if rm == rs:
                if abs(delta) > 1e-9:
                    raise ConstraintError(
                        f"inconsistent tie chain at nodes {m}->{s} (gap {delta:g})"
                    )
                continue
            self._parent[rs] = rm
            self._offset[rs] = delta

    def fix(self, ids, values) -> None:
        """Impose Dirichlet values (array-friendly)."""
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        vals = np.broadcast_to(np.asarray(values, dtype=float), ids.shape)
        for i, v in zip(ids, vals):
            self._touched.add(int(i))
            self._dirichlet[int(i)] = float(v)

    def set_zero_mean(self) -> None:
        self.zero_mean = True

    def reduce(self) -> tuple[sparse.csr_matrix, np.ndarray]:
        """Eliminate constraints: returns (T, g) with ``u = T u_hat + g``."""
        n = self.n
        root = np.arange(n, dtype=np.int64)
        off = np.zeros(n)
        for i in self._touched:
            root[i], off[i] = self._find(int(i))

        fixed_value: dict[int, float] = {}
        for i, v in self._dirichlet.items():
            r, o = self._find(i)
            anchor = v - o
            if r in fixed_value:
                if abs(fixed_value[r] - anchor) > 1e-9:
                    raise ConstraintError(
                        f"conflicting Dirichlet data through tie chain at node {i}"
                    )
            else:
                fixed_value[r] = anchor

        roots = np.unique(root)
        is_free = np.array([r not in fixed_value for r in roots])
        free_roots = roots[is_free]
        col_of = -np.ones(n, dtype=np.int64)
        col_of[free_roots] = np.arange(len(free_roots))

        cols = col_of[root]
        g = off.copy()
        fixed_mask = cols < 0
        if fixed_mask.any():
            anchors = np.array([fixed_value[r] for r in root[fixed_mask]])
            g[fixed_mask] = anchors + off[fixed_mask]
        rows = np.flatnonzero(~fixed_mask)
        T = sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols[rows])), shape=(n, len(free_roots))
        )
        return T, g


# ---------------------------------------------------------------------------
# solving


def _cg(A, b, M, rtol, maxiter):
    try:
        return spla.cg(A, b, M=M, rtol=rtol, atol=0.0, maxiter=maxiter)
    except TypeError:  # older scipy spelling
        return spla.cg(A, b, M=M, tol=rtol, atol=0.0, maxiter=maxiter)


def solve(
    K: sparse.csr_matrix,
    f: np.ndarray,
    constraints: ConstraintSet | None = None,
    mesh: TriMesh | None = None,
    method: str = "auto",
    tol: float = 1e-10,
) -> np.ndarray:
    """Solve ``K u = f`` subject to the constraints; returns full nodal u.

    ``method``: ``"auto"`` (direct below 2000 unknowns, else conjugate
    gradients with diagonal preconditioning), ``"direct"``, or ``"cg"``.
    The zero-mean gauge (requires ``mesh`` for the volume weights) is
    enforced through a bordered symmetric system solved directly.  Every
    path verifies the reduced residual to ``tol`` (relative) and raises
    ``SolverError`` otherwise.
    """
    n = K.shape[0]
    if constraints is None:
        constraints = ConstraintSet(n)
    T, g = constraints.reduce()
    Kh = (T.T @ (K @ T)).tocsr()
    fh = T.T @ (f - K @ g)
    nfree = Kh.shape[0]

    if constraints.zero_mean:
        if mesh is None:
            raise ValueError("zero-mean gauge requires the mesh for weights")
        m = mass_lumped(mesh)
        mh = T.T @ m
        border = sparse.csr_matrix(mh[None, :])
        Kb = sparse.bmat([[Kh, border.T], [border, None]], format="csc")
        rhs = np.concatenate([fh, [-float(m @ g)]])
        lu = spla.splu(Kb)
        sol = lu.solve(rhs)
        uh = sol[:nfree]
        res = np.linalg.norm(Kb @ sol - rhs)
        ref = max(np.linalg.norm(rhs), 1e-300)
        if res > max(tol * ref, 1e-30):
            raise SolverError(f"bordered solve residual {res:g} exceeds {tol:g} (rel)")
        return np.asarray(T @ uh + g)

    if nfree == 0:
        return np.asarray(g)

    if method == "auto":
        method = "direct" if nfree < 2000 else "cg"

    if method == "direct":
        lu = spla.splu(Kh.tocsc())
        uh = lu.solve(fh)
    elif method == "cg":
        if not np.any(fh):
            uh = np.zeros(nfree)
        else:
            d = Kh.diagonal()
            if (d <= 0).any():
                raise SolverError("non-positive diagonal; system not SPD")
            M = sparse.diags(1.0 / d)
            maxiter = int(20 * np.sqrt(nfree)) + 200
            uh, info = _cg(Kh, fh, M, tol, maxiter)
            if info != 0:
                raise SolverError(
                    f"conjugate gradients failed to converge in {maxiter} iterations"
                )
    else:
        raise ValueError(f"unknown method {method!r}")

    res = np.linalg.norm(Kh @ uh - fh)
    ref = max(np.linalg.norm(fh), 1e-300)
    if res > max(tol * ref * 10.0, 1e-30):
        raise SolverError(f"solve residual {res:g} exceeds tolerance")
    return np.asarray(T @ uh + g)


# ---------------------------------------------------------------------------
# point evaluation


class _Locator:
    """Background-grid point locator over a triangle subset."""

    def __init__(self, verts: np.ndarray, tris: np.ndarray):
        self.tris = tris
        self.tx = np.ascontiguousarray(verts[tris, 0])
        self.ty = np.ascontiguousarray(verts[tris, 1])
        xmin = self.tx.min(axis=1)
        xmax = self.tx.max(axis=1)
        ymin = self.ty.min(axis=1)
        ymax = self.ty.max(axis=1)
        self.x0 = float(xmin.min())
        self.y0 = float(ymin.min())
        x1 = float(xmax.max())
        y1 = float(ymax.max())
        m = len(tris)
        self.nx = max(1, int(np.sqrt(m / 2.0)))
        self.ny = self.nx
        self.hx = max((x1 - self.x0) / self.nx, 1e-300)
        self.hy = max((y1 - self.y0) / self.ny, 1e-300)

        ix0 = np.clip(((xmin - self.x0) / self.hx).astype(np.int64), 0, self.nx - 1)
        ix1 = np.clip(((xmax - self.x0) / self.hx).astype(np.int64), 0, self.nx - 1)
        iy0 = np.clip(((ymin - self.y0) / self.hy).astype(np.int64), 0, self.ny - 1)
        iy1 = np.clip(((ymax - self.y0) / self.hy).astype(np.int64), 0, self.ny - 1)
        spans = (ix1 - ix0 + 1) * (iy1 - iy0 + 1)
        total = int(spans.sum())
        cell_ids = np.empty(total, dtype=np.int64)
        tri_ids = np.empty(total, dtype=np.int64)
        pos = 0
        for t in range(m):
            for cx in range(int(ix0[t]), int(ix1[t]) + 1):
                base = cx * self.ny
                for cy in range(int(iy0[t]), int(iy1[t]) + 1):
                    cell_ids[pos] = base + cy
                    tri_ids[pos] = t
                    pos += 1
        order = np.argsort(cell_ids, kind="stable")
        cell_ids = cell_ids[order]
        tri_ids = tri_ids[order]
        counts = np.bincount(cell_ids, minlength=self.nx * self.ny)
        self.cand_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.cand_tri = tri_ids

    def locate(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = len(pts)
        out_tri = np.empty(n, dtype=np.int64)
        out_bary = np.empty((n, 3))
        chunk = 250_000
        for lo in range(0, n, max(chunk, 1)):
            hi = min(lo + chunk, n)
            px = np.ascontiguousarray(pts[lo:hi, 0], dtype=float)
            py = np.ascontiguousarray(pts[lo:hi, 1], dtype=float)
            cx = np.clip(((px - self.x0) / self.hx).astype(np.int64), 0, self.nx - 1)
            cy = np.clip(((py - self.y0) / self.hy).astype(np.int64), 0, self.ny - 1)
            cells = cx * self.ny + cy
            starts = self.cand_ptr[cells]
            stops = self.cand_ptr[cells + 1]
            counts = stops - starts
            ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
            flat = self.cand_tri[_expand_ranges(starts, stops)]
            local, bary = locate_scan(px, py, ptr, flat, self.tx, self.ty)
            out_tri[lo:hi] = local
            out_bary[lo:hi] = bary
        return out_tri, out_bary


@dataclass
class FemFunction:
    """P1 nodal field on a mesh, evaluable at arbitrary points.

    ``periodic_cell`` wraps both query coordinates into the unit cell
    before location (periodicity-cell fields queried in tiled coordinates);
    ``periodic_y`` wraps only the second coordinate (strip fields).  When
    the mesh has duplicated-interface regions, pass ``region`` to
    ``evaluate`` to select the branch.
    """

    mesh: TriMesh
    values: np.ndarray
    periodic_cell: bool = False
    periodic_y: bool = False
    _locators: dict = field(default_factory=dict, repr=False)

    def _locator(self, region: int | None) -> _Locator:
        key = region
        if key not in self._locators:
            if region is None:
                tris = self.mesh.triangles
            else:
                tris = self.mesh.triangles[self.mesh.region == region]
            self._locators[key] = _Locator(self.mesh.vertices, tris)
        return self._locators[key]

    def _wrap(self, pts: np.ndarray) -> np.ndarray:
        if self.periodic_cell:
            return pts - np.floor(pts)
        if self.periodic_y:
            pts = pts.copy()
            pts[:, 1] -= np.floor(pts[:, 1])
            return pts
        return pts

    def _locate_checked(self, pts: np.ndarray, region) -> tuple[np.ndarray, np.ndarray]:
        pts = self._wrap(np.asarray(pts, dtype=float))
        n = len(pts)
        nodes = np.empty((n, 3), dtype=np.int64)
        bary = np.empty((n, 3))
        if region is None or isinstance(region, (int, np.integer)):
            groups = [(np.arange(n), None if region is None else int(region))]
        else:
            region = np.asarray(region)
            groups = [
                (np.flatnonzero(region == r), int(r)) for r in np.unique(region)
            ]
        for idx, reg in groups:
            if not len(idx):
                continue
            loc = self._locator(reg)
            local, bb = loc.locate(pts[idx])
            if (local < 0).any():
                raise ValueError("points fell outside the search grid")
            worst = float(bb.min(initial=0.0))
            if worst < -1e-8:
                raise ValueError(
                    f"point outside mesh (barycentric deficit {worst:g})"
                )
            nodes[idx] = loc.tris[local]
            bary[idx] = bb
        return nodes, bary

    def locate_mask(
        self, pts: np.ndarray, region=None, tol: float = 1e-8
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Like evaluation location, but flags failures instead of raising.

        Returns ``(nodes, bary, ok)``; entries with ``ok = False`` hold
        unspecified location data.
        """
        pts = self._wrap(np.asarray(pts, dtype=float))
        n = len(pts)
        nodes = np.zeros((n, 3), dtype=np.int64)
        bary = np.zeros((n, 3))
        ok = np.zeros(n, dtype=bool)
        loc = self._locator(None if region is None else int(region))
        local, bb = loc.locate(pts)
        good = (local >= 0) & (bb.min(axis=1) >= -tol)
        nodes[good] = loc.tris[local[good]]
        bary[good] = bb[good]
        ok[good] = True
        return nodes, bary, ok

    def evaluate(self, pts: np.ndarray, region=None) -> np.ndarray:
        nodes, bary = self._locate_checked(pts, region)
        return np.einsum("ij,ij->i", self.values[nodes], bary)

    def evaluate_with_grad(self, pts: np.ndarray, region=None):
        nodes, bary = self._locate_checked(pts, region)
        return _nodal_eval(self.mesh.vertices, self.values, nodes, bary)

    # -- serialization ------------------------------------------------------

    def dump(self) -> str:
        """Deterministic text serialization (format header ``PH-FIELD 1``)."""
        lines = ["PH-FIELD 1", f"mesh {self.mesh.checksum()}", f"n {len(self.values)}"]
        lines.extend(f"{v:.17g}" for v in self.values)
        lines.append("")
        return "\n".join(lines)

    def checksum(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()


def _nodal_eval(
    verts: np.ndarray, values: np.ndarray, nodes: np.ndarray, bary: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Value and P1 gradient from located element nodes and barycentrics."""
    vals = np.einsum("ij,ij->i", values[nodes], bary)
    xs = verts[nodes, 0]
    ys = verts[nodes, 1]
    b = ys[:, [1, 2, 0]] - ys[:, [2, 0, 1]]
    c = xs[:, [2, 0, 1]] - xs[:, [1, 2, 0]]
    det = (xs[:, 1] - xs[:, 0]) * (ys[:, 2] - ys[:, 0]) - (
        xs[:, 2] - xs[:, 0]
    ) * (ys[:, 1] - ys[:, 0])
    nv = values[nodes]
    gx = np.sum(nv * b, axis=1) / det
    gy = np.sum(nv * c, axis=1) / det
    return vals, np.stack([gx, gy], axis=1)


def evaluate_many(fields: list["FemFunction"], pts: np.ndarray, region=None):
    """Evaluate several nodal fields on one mesh with a single point location.

    All fields must share the mesh and wrap flags of the first; returns a
    list of ``(values, gradients)`` pairs in the order given.
    """
    base = fields[0]
    for f in fields[1:]:
        if f.mesh is not base.mesh:
            raise ValueError("evaluate_many needs fields on a single mesh")
        if (f.periodic_cell, f.periodic_y) != (base.periodic_cell, base.periodic_y):
            raise ValueError("evaluate_many needs matching wrap conventions")
    nodes, bary = base._locate_checked(pts, region)
    return [_nodal_eval(base.mesh.vertices, f.values, nodes, bary) for f in fields]


# ---------------------------------------------------------------------------
# error norms


@dataclass
class ErrorNorms:
    """Split L2/H1 errors; ``h1`` includes the L2 part, ``interior_h1``
    restricts the minus region to centroids left of the exclusion band."""

    l2: float
    h1: float
    l2_minus: float
    l2_plus: float
    h1_minus: float
    h1_plus: float
    interior_h1: float

    def as_dict(self) -> dict[str, float]:
        return {
            "l2": self.l2,
            "h1": self.h1,
            "l2_minus": self.l2_minus,
            "l2_plus": self.l2_plus,
            "h1_minus": self.h1_minus,
            "h1_plus": self.h1_plus,
            "interior_h1": self.interior_h1,
        }


def error_norms(
    mesh: TriMesh,
    u: np.ndarray,
    reference,
    interior_band: float = 0.2,
    project_gradient: bool = False,
) -> ErrorNorms:
    """Elementwise L2/H1 errors between a nodal field and a reference.

    ``reference`` must provide ``evaluate_with_grad(points, region=...)``.
    All error integrals use the 3-point mid-edge rule on each element, with
    the element's own region passed to the reference (so two-branch
    references are compared branch to branch).  ``interior_h1`` measures the
    H1 error over minus-region elements whose centroid lies left of
    ``-interior_band``.

    With ``project_gradient`` the reference gradient is averaged over each
    element's quadrature points before subtraction, comparing the
    elementwise-constant discrete gradient against the reference's element
    mean.  Where the reference is smooth this changes nothing to quadrature
    order; where it oscillates within single elements it removes the
    sub-element variation no piecewise-linear field can carry.
    """
    tris = mesh.triangles
    xs, ys, b, c, det = tri_geometry(mesh.vertices, tris)
    area = 0.5 * det
    m = len(tris)
    pts = _edge_midpoints(xs, ys)
    region_pts = np.tile(mesh.region, 3)
    ref_vals, ref_grads = reference.evaluate_with_grad(pts, region=region_pts)

    uv = u[tris]
    u_mid = np.concatenate(
        [
            0.5 * (uv[:, 0] + uv[:, 1]),
            0.5 * (uv[:, 1] + uv[:, 2]),
            0.5 * (uv[:, 2] + uv[:, 0]),
        ]
    )
    gx = np.sum(uv * b, axis=1) / det
    gy = np.sum(uv * c, axis=1) / det

    dv2 = (u_mid - ref_vals) ** 2
    if project_gradient:
        rg = ref_grads.reshape(3, m, 2).mean(axis=0)
        dg2 = np.tile((gx - rg[:, 0]) ** 2 + (gy - rg[:, 1]) ** 2, 3)
    else:
        dgx = np.tile(gx, 3) - ref_grads[:, 0]
        dgy = np.tile(gy, 3) - ref_grads[:, 1]
        dg2 = dgx**2 + dgy**2
    return _split_norms(mesh, xs, area, dv2, dg2, interior_band)


def nodal_error_norms(
    mesh: TriMesh,
    u: np.ndarray,
    w: np.ndarray,
    interior_band: float = 0.2,
) -> ErrorNorms:
    """Norms of the difference of two nodal fields on the same mesh.

    Comparing a Galerkin solution against the nodal interpolant of a
    reference keeps both fields in the same discrete space, so the mesh's
    own interpolation deficit (which the two fields share when they carry
    the same fine-scale structure) drops out of the measurement.  The
    3-point mid-edge rule integrates the piecewise-linear difference
    exactly.
    """
    diff = np.asarray(u, dtype=float) - np.asarray(w, dtype=float)
    tris = mesh.triangles
    xs, ys, b, c, det = tri_geometry(mesh.vertices, tris)
    area = 0.5 * det
    dv = diff[tris]
    d_mid = np.concatenate(
        [
            0.5 * (dv[:, 0] + dv[:, 1]),
            0.5 * (dv[:, 1] + dv[:, 2]),
            0.5 * (dv[:, 2] + dv[:, 0]),
        ]
    )
    gx = np.sum(dv * b, axis=1) / det
    gy = np.sum(dv * c, axis=1) / det
    dv2 = d_mid**2
    dg2 = np.tile(gx**2 + gy**2, 3)
    return _split_norms(mesh, xs, area, dv2, dg2, interior_band)


def _split_norms(
    mesh: TriMesh,
    xs: np.ndarray,
    area: np.ndarray,
    dv2: np.ndarray,
    dg2: np.ndarray,
    interior_band: float,
) -> ErrorNorms:
    """Accumulate quadrature-point errors into region-split norms."""
    w = np.tile(area / 3.0, 3)

    def _acc(mask_tri: np.ndarray) -> tuple[float, float]:
        mask = np.tile(mask_tri, 3)
        l2sq = float(np.sum(w[mask] * dv2[mask]))
        h1sq = l2sq + float(np.sum(w[mask] * dg2[mask]))
        return l2sq, h1sq

    minus = mesh.region == REGION_MINUS
    plus = ~minus
    l2m, h1m = _acc(minus)
    l2p, h1p = _acc(plus)
    centroid_x = xs.mean(axis=1)
    interior = minus & (centroid_x < -interior_band)
    _, h1i = _acc(interior)
    return ErrorNorms(
        l2=float(np.sqrt(l2m + l2p)),
        h1=float(np.sqrt(h1m + h1p)),
        l2_minus=float(np.sqrt(l2m)),
        l2_plus=float(np.sqrt(l2p)),
        h1_minus=float(np.sqrt(h1m)),
        h1_plus=float(np.sqrt(h1p)),
        interior_h1=float(np.sqrt(h1i)),
    )
