"""Composite two-term approximations of the fine-scale solution.

The flat-interface composite adds to the homogenized field ``v0`` the
first-order macro correction ``v1``, the periodic cell correctors
``N_i(x/eps)`` contracted with the local gradient of ``v0`` (perforated
side only), and the interface-layer correctors contracted with the
interface traces of ``d v0+/dx_i`` and localized by a cut-off in the
normal direction:

    minus:  v0 + eps * (v1 + chi0 * sum_i (B_i^- - q_i)(x/eps) t_i(x2))
    plus :  v0 + eps * (v1 + sum_i N_i(x/eps) dv0/dx_i
                           + chi0 * sum_i B_i^+(x/eps) t_i(x2))

Subtracting the far-field constant ``q_i`` from the minus branch and
putting the matching jump ``q1 t1`` into ``v1`` makes the composite
continuous across the interface.  The oscillating-interface composite
replaces ``v1`` by nothing, uses the oscillating layer fields, and adds a
third branch on the sliver between the oscillating interface and ``x1=0``
where ``v0+`` is continued by its quadratic interface Taylor expansion.

Values and gradients are evaluated point-wise with the exact product and
chain rule per term (the fast-variable gradients carry the ``1/eps``
factor), so a finite-difference check of the gradient passes at machine
accuracy away from element facets.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline

from .cell import CellSolution
from .fem import (
    ErrorNorms,
    FemFunction,
    _nodal_eval,
    error_norms,
    evaluate_many,
    nodal_error_norms,
    tri_geometry,
)
from .homogenized import MacroSolution
from .layer import LayerSolution, _vertex_side_mask
from .mesh import REGION_MINUS, REGION_PLUS, InterfaceCurve, TriMesh

__all__ = [
    "CompositeField",
    "CutOff",
    "assemble_A1",
    "assemble_U_osc",
    "error_report",
    "v0_field",
]


class CutOff:
    """Even quintic cut-off in the interface-normal coordinate.

    Identically 1 for ``|x1| <= rho0/2``, identically 0 for
    ``|x1| >= rho0``, and a C^2 monotone quintic blend in between (exact
    endpoint values; bounded derivative).
    """

    def __init__(self, rho0: float):
        if rho0 <= 0.0:
            raise ValueError("cut-off width must be positive")
        self.rho0 = float(rho0)

    def __call__(self, x1: np.ndarray) -> np.ndarray:
        s = np.abs(np.asarray(x1, dtype=float))
        half = 0.5 * self.rho0
        u = np.clip((s - half) / half, 0.0, 1.0)
        return 1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u**2)

    def derivative(self, x1: np.ndarray) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        s = np.abs(x1)
        half = 0.5 * self.rho0
        u = (s - half) / half
        inside = (u > 0.0) & (u < 1.0)
        out = np.zeros(x1.shape)
        ui = u[inside]
        out[inside] = -30.0 * ui**2 * (1.0 - ui) ** 2 / half * np.sign(x1[inside])
        return out


class _LinearTrace:
    """Piecewise-linear interface trace with piecewise-constant slope.

    The layer terms multiply this P1 representation (not the smooth
    spline) so that they cancel the nodal value jumps of ``v1`` and of the
    recovered-gradient contraction exactly, edge by edge, making the flat
    composite continuous across the interface to rounding.
    """

    def __init__(self, xs: np.ndarray, vals: np.ndarray):
        self.xs = np.asarray(xs, dtype=float)
        self.vals = np.asarray(vals, dtype=float)
        self._slopes = np.diff(self.vals) / np.diff(self.xs)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.xs, self.vals)

    def slope(self, x: np.ndarray) -> np.ndarray:
        i = np.searchsorted(self.xs, x, side="right") - 1
        return self._slopes[np.clip(i, 0, len(self._slopes) - 1)]


def _minus_mask(pts: np.ndarray, region, infer_minus) -> np.ndarray:
    """Per-point minus-branch mask from an explicit region or geometry."""
    if region is None:
        return infer_minus(pts)
    region = np.asarray(region)
    if region.ndim == 0:
        return np.full(len(pts), int(region) == REGION_MINUS)
    return region == REGION_MINUS


class _QuadraticBranch:
    """C0 quadratic reconstruction of a P1 field from vertex gradients.

    On each element ``v*(x) = sum_i lam_i(x) (v_i + (g_i . (x - x_i))/2)``,
    which reproduces quadratics exactly when the vertex gradients ``g_i``
    are exact; with recovered (averaged) vertex gradients the value error
    stays at interpolation order while the gradient error improves by one
    order over the raw P1 element gradient and loses its cross-edge kinks.
    The edge trace only involves edge data, so ``v*`` is continuous.
    """

    def __init__(
        self, fn: FemFunction, gx: np.ndarray, gy: np.ndarray, region: int
    ):
        self.fn = fn
        self.gx = gx
        self.gy = gy
        self.region = region

    def eval(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        nodes, bary, ok = self.fn.locate_mask(pts, self.region)
        if not ok.all():
            raise ValueError("reconstruction point outside the macro branch")
        verts = self.fn.mesh.vertices
        xs = verts[nodes, 0]
        ys = verts[nodes, 1]
        vi = self.fn.values[nodes]
        gxi = self.gx[nodes]
        gyi = self.gy[nodes]
        w = vi + 0.5 * (gxi * (pts[:, 0:1] - xs) + gyi * (pts[:, 1:2] - ys))
        vals = np.einsum("ij,ij->i", bary, w)
        b = ys[:, [1, 2, 0]] - ys[:, [2, 0, 1]]
        c = xs[:, [2, 0, 1]] - xs[:, [1, 2, 0]]
        det = (xs[:, 1] - xs[:, 0]) * (ys[:, 2] - ys[:, 0]) - (
            xs[:, 2] - xs[:, 0]
        ) * (ys[:, 1] - ys[:, 0])
        gx = np.sum(w * b, axis=1) / det + 0.5 * np.einsum("ij,ij->i", bary, gxi)
        gy = np.sum(w * c, axis=1) / det + 0.5 * np.einsum("ij,ij->i", bary, gyi)
        return vals, np.stack([gx, gy], axis=1)


def _recovered_gradient(
    macro: MacroSolution, region: int
) -> tuple[FemFunction, FemFunction]:
    """Continuous P1 gradient of ``v0`` on one side of the interface.

    Area-weighted nodal averaging of element gradients over the region's
    triangles; interface nodes take the variational traces instead of the
    one-sided average (they are the more accurate boundary values).
    """
    mesh = macro.mesh
    tris = mesh.triangles[mesh.region == region]
    _, _, b, c, det = tri_geometry(mesh.vertices, tris)
    uv = macro.v0.values[tris]
    gx = np.sum(uv * b, axis=1) / det
    gy = np.sum(uv * c, axis=1) / det
    area = 0.5 * det
    g = np.zeros((mesh.num_vertices, 2))
    wsum = np.zeros(mesh.num_vertices)
    for k in range(3):
        np.add.at(g[:, 0], tris[:, k], area * gx)
        np.add.at(g[:, 1], tris[:, k], area * gy)
        np.add.at(wsum, tris[:, k], area)
    touched = wsum > 0.0
    g[touched] /= wsum[touched, None]
    tr = macro.traces
    iface = np.unique(mesh.edge_tags["interface"])
    ys = mesh.vertices[iface, 1]
    t1 = tr.t1 if region == REGION_PLUS else tr.t1_minus
    g[iface, 0] = np.interp(ys, tr.ys, t1)
    g[iface, 1] = np.interp(ys, tr.ys, tr.t2)
    return FemFunction(mesh, g[:, 0]), FemFunction(mesh, g[:, 1])


class CompositeField:
    """Evaluable composite approximation with exact per-term gradients.

    ``kind`` selects the ansatz: ``"v0"`` (homogenized field alone),
    ``"a1_flat"`` (two-term flat-interface composite) or ``"u_osc"``
    (oscillating-interface composite with the sliver Taylor branch).
    Evaluation accepts an optional per-point ``region`` (or scalar) to
    force the minus/plus branch; without it the branch is inferred from
    the interface geometry.

    ``macro_gradient`` selects the macro base gradient: ``"p1"`` is the
    exact element gradient of the P1 field (the finite-difference-exact
    choice), ``"recovered"`` substitutes the superconvergent averaged
    nodal gradient, which removes the macro mesh's O(h) gradient error
    from error measurements against a fine solve.
    """

    def __init__(
        self,
        kind: str,
        macro: MacroSolution,
        eps: float | None = None,
        cell: CellSolution | None = None,
        layers: tuple[LayerSolution, LayerSolution] | None = None,
        chi0: CutOff | None = None,
        curve: InterfaceCurve | None = None,
        macro_gradient: str = "p1",
    ):
        if kind not in ("v0", "a1_flat", "u_osc"):
            raise ValueError(f"unknown composite kind {kind!r}")
        if macro_gradient not in ("p1", "recovered"):
            raise ValueError(f"unknown macro gradient mode {macro_gradient!r}")
        self.kind = kind
        self.macro = macro
        self.eps = eps
        self.cell = cell
        self.layers = layers
        self.chi0 = chi0
        self.curve = curve if curve is not None else InterfaceCurve()
        self._recovered = macro_gradient == "recovered"

        tr = macro.traces
        self._lt1 = _LinearTrace(tr.ys, tr.t1)
        self._lt2 = _LinearTrace(tr.ys, tr.t2)
        self._t1 = tr.t1_fn
        self._t2 = tr.t2_fn
        self._t1d = tr.t1_fn.derivative(1)
        self._t1dd = tr.t1_fn.derivative(2)
        self._trace = tr.v0_fn
        self._t2d = tr.t2_fn.derivative(1)
        self._d11 = CubicSpline(tr.ys, tr.d11)
        self._d11d = self._d11.derivative(1)
        self._d11dd = self._d11.derivative(2)

        if kind != "v0":
            if eps is None or cell is None or layers is None or chi0 is None:
                raise ValueError(f"{kind!r} composite needs eps, cell, layers, chi0")
            strip = layers[0].mesh
            if layers[1].mesh is not strip:
                raise ValueError("layer components must share one strip mesh")
            reach = eps * min(strip.meta["L_minus"], strip.meta["L_plus"])
            if chi0.rho0 > reach + 1e-12:
                raise ValueError(
                    "cut-off support exceeds the truncated strip "
                    f"(rho0={chi0.rho0:g} > eps*L={reach:g})"
                )
            if kind == "a1_flat" and macro.v1 is None:
                raise ValueError("flat composite needs the v1 field on macro")
            self._g1, self._g2 = _recovered_gradient(macro, REGION_PLUS)
            # decaying-branch nodal layer fields: the far constant is
            # subtracted on minus-side vertices, so a single lookup gives
            # the branch-correct decaying value on either side
            on_minus = _vertex_side_mask(strip, REGION_MINUS)
            self._phi = tuple(
                FemFunction(
                    strip,
                    lay.fn.values - lay.far_value("minus") * on_minus,
                    periodic_y=True,
                )
                for lay in layers
            )
        else:
            self._g1 = self._g2 = None
            self._phi = None
            if self._recovered:
                self._g1, self._g2 = _recovered_gradient(macro, REGION_PLUS)
        if self._recovered:
            self._gm1, self._gm2 = _recovered_gradient(macro, REGION_MINUS)
            self._qb_plus = _QuadraticBranch(
                macro.v0, self._g1.values, self._g2.values, REGION_PLUS
            )
            self._qb_minus = _QuadraticBranch(
                macro.v0, self._gm1.values, self._gm2.values, REGION_MINUS
            )
        else:
            self._gm1 = self._gm2 = None
            self._qb_plus = self._qb_minus = None

    # -- branch pieces -----------------------------------------------------

    def _macro_side(self, p: np.ndarray, side: int):
        """``v0`` value, base gradient, and the plus-side contraction fields.

        In recovered mode the base value/gradient come from the quadratic
        reconstruction; the contraction fields stay the interface-linear
        P1 recovered gradients so the interface jump closure (which pairs
        them against the nodal traces) is untouched.
        """
        if side == REGION_PLUS:
            if self._recovered:
                v0v, base = self._qb_plus.eval(p)
                if self.kind == "v0":
                    return v0v, base, None
                (g1v, g1g), (g2v, g2g) = evaluate_many(
                    [self._g1, self._g2], p, side
                )
                return v0v, base, (g1v, g1g, g2v, g2g)
            if self._g1 is not None:
                (v0v, v0g), (g1v, g1g), (g2v, g2g) = evaluate_many(
                    [self.macro.v0, self._g1, self._g2], p, side
                )
                return v0v, v0g, (g1v, g1g, g2v, g2g)
        if side == REGION_MINUS and self._recovered:
            v0v, base = self._qb_minus.eval(p)
            return v0v, base, None
        v0v, v0g = self.macro.v0.evaluate_with_grad(p, side)
        return v0v, v0g, None

    def _layer_terms(
        self, vals: np.ndarray, grads: np.ndarray, p: np.ndarray, side: int
    ) -> None:
        """Add ``eps * chi0 * sum_i Phi_i(x/eps) t_i(x2)`` in place."""
        eps = self.eps
        x1 = p[:, 0]
        x2 = p[:, 1]
        chi = self.chi0(x1)
        act = chi > 0.0
        if not act.any():
            return
        xi = p[act] / eps
        phi1, phi2 = self._phi
        nodes, bary, ok = phi1.locate_mask(xi, side)
        if not ok.all():
            # geometric mismatch band: the fine interface polyline and the
            # strip's differ below mesh resolution; let the strip decide
            nd, bb, ok2 = phi1.locate_mask(xi[~ok], None)
            if not ok2.all():
                raise ValueError("layer evaluation point outside the strip")
            nodes[~ok] = nd
            bary[~ok] = bb
        verts = phi1.mesh.vertices
        f1v, f1g = _nodal_eval(verts, phi1.values, nodes, bary)
        f2v, f2g = _nodal_eval(verts, phi2.values, nodes, bary)
        t1 = self._lt1(x2[act])
        t2 = self._lt2(x2[act])
        s = chi[act]
        ds = self.chi0.derivative(x1[act])
        lay = f1v * t1 + f2v * t2
        vals[act] += eps * s * lay
        grads[act, 0] += s * (f1g[:, 0] * t1 + f2g[:, 0] * t2) + eps * ds * lay
        grads[act, 1] += s * (f1g[:, 1] * t1 + f2g[:, 1] * t2) + eps * s * (
            f1v * self._lt1.slope(x2[act]) + f2v * self._lt2.slope(x2[act])
        )

    def _cell_terms(
        self,
        vals: np.ndarray,
        grads: np.ndarray,
        p: np.ndarray,
        a: tuple[np.ndarray, ...],
    ) -> None:
        """Add ``eps * sum_i N_i(x/eps) a_i(x)`` in place.

        ``a = (a1, grad_a1, a2, grad_a2)`` is the gradient field the cell
        correctors contract with (recovered gradient in the bulk, Taylor
        derivatives on the sliver).
        """
        eps = self.eps
        a1, da1, a2, da2 = a
        xi = p / eps
        (n1v, n1g), (n2v, n2g) = evaluate_many(
            [self.cell.N[0], self.cell.N[1]], xi
        )
        vals += eps * (n1v * a1 + n2v * a2)
        for j in range(2):
            grads[:, j] += (
                n1g[:, j] * a1
                + n2g[:, j] * a2
                + eps * (n1v * da1[:, j] + n2v * da2[:, j])
            )

    # -- branch evaluations --------------------------------------------------

    def _eval_v0(self, pts: np.ndarray, minus: np.ndarray):
        vals = np.empty(len(pts))
        grads = np.empty((len(pts), 2))
        # v0 lives on the flat macro domain; points left of x1=0 (e.g. the
        # oscillating sliver) can only be its minus branch
        minus = minus | (pts[:, 0] < 0.0)
        for mask, side in ((minus, REGION_MINUS), (~minus, REGION_PLUS)):
            if not mask.any():
                continue
            v, g, _ = self._macro_side(pts[mask], side)
            vals[mask] = v
            grads[mask] = g
        return vals, grads

    def _eval_a1(self, pts: np.ndarray, minus: np.ndarray):
        eps = self.eps
        vals = np.empty(len(pts))
        grads = np.empty((len(pts), 2))
        for mask, side in ((minus, REGION_MINUS), (~minus, REGION_PLUS)):
            if not mask.any():
                continue
            p = pts[mask]
            v0v, base, gfield = self._macro_side(p, side)
            v1v, v1g = self.macro.v1.evaluate_with_grad(p, side)
            bvals = v0v + eps * v1v
            bgrads = base + eps * v1g
            if side == REGION_PLUS:
                self._cell_terms(bvals, bgrads, p, gfield)
            self._layer_terms(bvals, bgrads, p, side)
            vals[mask] = bvals
            grads[mask] = bgrads
        return vals, grads

    def _sliver_taylor(self, p: np.ndarray):
        """Quadratic interface Taylor continuation of ``v0+`` with exact
        derivatives of every spline ingredient."""
        x1 = p[:, 0]
        x2 = p[:, 1]
        t1 = self._t1(x2)
        d11 = self._d11(x2)
        val = self._trace(x2) + x1 * t1 + 0.5 * x1**2 * d11
        a1 = t1 + x1 * d11
        a2 = self._t2(x2) + x1 * self._t1d(x2) + 0.5 * x1**2 * self._d11d(x2)
        grad = np.stack([a1, a2], axis=1)
        da1 = np.stack([d11, self._t1d(x2) + x1 * self._d11d(x2)], axis=1)
        da2 = np.stack(
            [
                self._t1d(x2) + x1 * self._d11d(x2),
                self._t2d(x2) + x1 * self._t1dd(x2) + 0.5 * x1**2 * self._d11dd(x2),
            ],
            axis=1,
        )
        return val, grad, (a1, da1, a2, da2)

    def _eval_osc(self, pts: np.ndarray, minus: np.ndarray):
        eps = self.eps
        vals = np.empty(len(pts))
        grads = np.empty((len(pts), 2))
        sliver = (~minus) & (pts[:, 0] < 0.0)
        bulk = (~minus) & ~sliver
        if minus.any():
            p = pts[minus]
            v0v, base, _ = self._macro_side(p, REGION_MINUS)
            bvals, bgrads = v0v.copy(), base.copy()
            self._layer_terms(bvals, bgrads, p, REGION_MINUS)
            vals[minus] = bvals
            grads[minus] = bgrads
        if bulk.any():
            p = pts[bulk]
            v0v, base, gfield = self._macro_side(p, REGION_PLUS)
            bvals, bgrads = v0v.copy(), base.copy()
            self._cell_terms(bvals, bgrads, p, gfield)
            self._layer_terms(bvals, bgrads, p, REGION_PLUS)
            vals[bulk] = bvals
            grads[bulk] = bgrads
        if sliver.any():
            p = pts[sliver]
            bvals, bgrads, taylor = self._sliver_taylor(p)
            self._cell_terms(bvals, bgrads, p, taylor)
            self._layer_terms(bvals, bgrads, p, REGION_PLUS)
            vals[sliver] = bvals
            grads[sliver] = bgrads
        return vals, grads

    # -- public API ----------------------------------------------------------

    def _infer_minus(self, pts: np.ndarray) -> np.ndarray:
        if self.kind == "u_osc":
            depth = self.eps * self.curve.depth(pts[:, 1] / self.eps)
            return pts[:, 0] < depth
        return pts[:, 0] < 0.0

    def evaluate_with_grad(self, pts: np.ndarray, region=None):
        pts = np.asarray(pts, dtype=float)
        minus = _minus_mask(pts, region, self._infer_minus)
        if self.kind == "v0":
            return self._eval_v0(pts, minus)
        if self.kind == "a1_flat":
            return self._eval_a1(pts, minus)
        return self._eval_osc(pts, minus)

    def evaluate(self, pts: np.ndarray, region=None) -> np.ndarray:
        return self.evaluate_with_grad(pts, region)[0]


def _default_cutoff(macro: MacroSolution) -> CutOff:
    meta = macro.mesh.meta
    return CutOff(0.5 * min(float(meta["left_extent"]), float(meta["d"])))


def v0_field(macro: MacroSolution, macro_gradient: str = "p1") -> CompositeField:
    """The homogenized field alone, as a two-branch evaluable reference."""
    return CompositeField("v0", macro, macro_gradient=macro_gradient)


def assemble_A1(
    macro: MacroSolution,
    cell: CellSolution,
    layers: tuple[LayerSolution, LayerSolution],
    eps: float,
    chi0: CutOff | None = None,
    macro_gradient: str = "p1",
) -> CompositeField:
    """Two-term flat-interface composite ``v0 + eps*(v1 + correctors)``."""
    if chi0 is None:
        chi0 = _default_cutoff(macro)
    return CompositeField(
        "a1_flat",
        macro,
        eps=eps,
        cell=cell,
        layers=layers,
        chi0=chi0,
        macro_gradient=macro_gradient,
    )


def assemble_U_osc(
    macro: MacroSolution,
    cell: CellSolution,
    layers: tuple[LayerSolution, LayerSolution],
    eps: float,
    curve: InterfaceCurve,
    chi0: CutOff | None = None,
    macro_gradient: str = "p1",
) -> CompositeField:
    """Oscillating-interface composite with the sliver Taylor branch."""
    if chi0 is None:
        chi0 = _default_cutoff(macro)
    return CompositeField(
        "u_osc",
        macro,
        eps=eps,
        cell=cell,
        layers=layers,
        chi0=chi0,
        curve=curve,
        macro_gradient=macro_gradient,
    )


def interpolate_field(approx, mesh: TriMesh) -> FemFunction:
    """Nodal interpolant of a two-branch field on a region-tagged mesh.

    Each vertex is evaluated on the branch of the region it belongs to;
    with a duplicated interface the two copies of an interface vertex get
    their own sides, so the interpolant keeps the field's jump structure.
    """
    region = np.full(mesh.num_vertices, REGION_PLUS, dtype=mesh.region.dtype)
    region[_vertex_side_mask(mesh, REGION_MINUS)] = REGION_MINUS
    vals, _ = approx.evaluate_with_grad(mesh.vertices, region=region)
    return FemFunction(mesh, vals)


def error_report(
    u_fine: FemFunction,
    approx,
    interior_band: float = 0.2,
    comparison: str = "pointwise",
) -> ErrorNorms:
    """L2/H1/per-region/interior errors of a composite against a fine solve.

    ``comparison="pointwise"`` integrates the fine field against the
    exactly evaluated composite (3-point mid-edge rule, element regions
    passed through so branches are compared branch to branch).  With a
    mesh size proportional to the microstructure period this measurement
    bottoms out at the mesh's own interpolation deficit of the fast
    oscillation, which both fields share.  ``comparison="projected"``
    removes that common part from the gradient term by comparing against
    the composite's element-mean gradient (identical to ``pointwise`` up
    to quadrature order wherever the composite is smooth).
    ``comparison="nodal"`` compares against the composite's fine-mesh
    nodal interpolant instead; note the interpolant's gradient carries the
    macro mesh's kinks, so it does not see the recovered-gradient mode.
    """
    if comparison == "nodal":
        w = interpolate_field(approx, u_fine.mesh)
        return nodal_error_norms(
            u_fine.mesh, u_fine.values, w.values, interior_band=interior_band
        )
    if comparison not in ("pointwise", "projected"):
        raise ValueError(
            "comparison must be 'pointwise', 'projected', or 'nodal'"
        )
    return error_norms(
        u_fine.mesh,
        u_fine.values,
        approx,
        interior_band=interior_band,
        project_gradient=comparison == "projected",
    )
