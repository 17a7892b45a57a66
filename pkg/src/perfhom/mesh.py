"""Triangular meshes for two-phase domains with a periodically perforated side.

Four mesh families are built here:

* ``build_cell_mesh`` — the unit periodicity cell, a unit square with an
  optional centred polygonal hole that is symmetric about both midlines,
* ``build_strip_mesh`` — a two-sided strip of stacked cells around a flat or
  oscillating interface (solid on the left, perforated on the right),
* ``build_eps_mesh`` — the full two-phase domain at cell size ``eps = d/N``,
* ``build_macro_mesh`` — a coarse interface-aligned mesh for the homogenized
  problems, in plain and duplicated-interface variants.

Perforated-cell meshes are constructed on one quadrant and reflected across
both midlines, so the vertex set is symmetric under both reflections by
construction and the boundary traces on opposite sides agree bitwise.  The
outer ring of the cell template is sampled uniformly along the square sides;
together with careful coordinate snapping this makes every vertex merge in
the tiled builders an exact-key merge (no tolerance stitching) and keeps
interface polylines uniformly sampled, so the polyline area under the
oscillation profile matches the smooth-curve area to machine precision.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

REGION_MINUS = 0
REGION_PLUS = 1

DEFAULT_TRIANGLE_BUDGET = 6_000_000

_trapz = getattr(np, "trapezoid", None) or np.trapz


class GeometryError(ValueError):
    """Raised when requested geometry parameters are inconsistent."""


class MeshBudgetError(RuntimeError):
    """Raised when a requested mesh would exceed the triangle budget."""


# ---------------------------------------------------------------------------
# specifications


@dataclass(frozen=True)
class HoleSpec:
    """Hole carved out of every perforated cell.

    ``kind`` is ``"none"`` (solid cell) or ``"disk"`` (regular polygon with
    ``segments`` vertices inscribed in the circle of ``radius``, centred at
    the cell midpoint).  ``segments`` must be a multiple of 8 so the vertex
    set is invariant under both midline reflections and the cell boundary
    trace stays uniformly spaced.
    """

    kind: str = "disk"
    radius: float = 0.25
    segments: int = 32

    def __post_init__(self) -> None:
        if self.kind not in ("none", "disk"):
            raise GeometryError(f"unknown hole kind {self.kind!r}")
        if self.kind == "disk":
            if not 0.0 < self.radius < 0.5:
                raise GeometryError("hole radius must lie in (0, 0.5)")
            if self.segments < 8 or self.segments % 8 != 0:
                raise GeometryError("hole segments must be a positive multiple of 8")

    @property
    def is_none(self) -> bool:
        return self.kind == "none"

    def polygon_area(self) -> float:
        """Area of the polygonal hole (0 for solid cells)."""
        if self.is_none:
            return 0.0
        n = self.segments
        return 0.5 * n * self.radius**2 * float(np.sin(2.0 * np.pi / n))

    def cell_area(self) -> float:
        """Area of the perforated unit cell."""
        return 1.0 - self.polygon_area()


@dataclass(frozen=True)
class InterfaceCurve:
    """Interface shape in cell coordinates: flat, or the oscillation profile
    ``l(t) = -amplitude * sin(pi t)^2`` (1-periodic, even, non-positive)."""

    kind: str = "flat"
    amplitude: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("flat", "oscillating"):
            raise GeometryError(f"unknown interface kind {self.kind!r}")
        if self.kind == "oscillating" and not 0.0 < self.amplitude < 1.0:
            raise GeometryError("oscillation amplitude must lie in (0, 1)")

    @property
    def is_flat(self) -> bool:
        return self.kind == "flat"

    def depth(self, t: np.ndarray | float) -> np.ndarray:
        """Signed interface offset ``l(t) <= 0`` in cell coordinates.

        Evaluates through the folded argument ``min(t mod 1, 1 - t mod 1)``
        so the zeros at integer ``t`` are exact in floating point.
        """
        t = np.asarray(t, dtype=float)
        if self.is_flat:
            return np.zeros_like(t)
        tm = t - np.floor(t)
        u = np.minimum(tm, 1.0 - tm)
        return -self.amplitude * np.sin(np.pi * u) ** 2

    def slope(self, t: np.ndarray | float) -> np.ndarray:
        """Derivative ``l'(t)``."""
        t = np.asarray(t, dtype=float)
        if self.is_flat:
            return np.zeros_like(t)
        return -self.amplitude * np.pi * np.sin(2.0 * np.pi * t)

    def mean_depth(self) -> float:
        """Exact period average of the profile."""
        return 0.0 if self.is_flat else -0.5 * self.amplitude

    def max_feasible_amplitude(self, hole: HoleSpec, clearance: float = 0.0) -> float:
        """Largest amplitude keeping the curve clear of the periodic hole lattice.

        The trough of the curve sits one cell to the left of a hole column,
        at distance ``1/2 - amplitude`` from the nearest hole centre, so
        feasibility requires ``amplitude < 1/2 - radius``.
        """
        if hole.is_none:
            return 1.0
        return 0.5 - hole.radius - clearance

    def validate_clearance(self, hole: HoleSpec) -> None:
        """Reject curves that would cut into the periodic hole lattice."""
        if self.is_flat or hole.is_none:
            return
        limit = self.max_feasible_amplitude(hole)
        if self.amplitude >= limit:
            raise GeometryError(
                f"oscillation amplitude {self.amplitude} reaches into the periodic "
                f"hole lattice (hole radius {hole.radius}); maximum feasible "
                f"amplitude is {limit}"
            )


@dataclass
class PeriodicPairing:
    """Identified vertex pairs: ``vertex[slave] = vertex[master] + shift``."""

    pairs: np.ndarray  # (k, 2) int64 columns [master, slave]
    shift: np.ndarray  # (2,) float

    def validate(self, vertices: np.ndarray, tol: float = 1e-12) -> None:
        if not len(self.pairs):
            return
        dev = vertices[self.pairs[:, 1]] - vertices[self.pairs[:, 0]] - self.shift
        worst = float(np.abs(dev).max())
        if worst > tol:
            raise GeometryError(f"periodic pairing off by {worst:g}")


@dataclass
class TriMesh:
    """Conforming triangulation with region/edge tags and vertex pairings.

    ``region`` holds one of ``REGION_MINUS``/``REGION_PLUS`` per triangle.
    ``edge_tags`` maps tag names to ``(k, 2)`` vertex-index pairs.  When the
    interface is duplicated, ``interface_pairs`` lists the matched
    ``[minus_vertex, plus_vertex]`` rows ordered along the interface.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    region: np.ndarray
    edge_tags: dict[str, np.ndarray] = field(default_factory=dict)
    periodic: list[PeriodicPairing] = field(default_factory=list)
    interface_pairs: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        d1 = v[t[:, 1]] - v[t[:, 0]]
        d2 = v[t[:, 2]] - v[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def total_area(self) -> float:
        return float(self.areas().sum())

    def region_area(self, region: int) -> float:
        return float(self.areas()[self.region == region].sum())

    def max_edge(self) -> float:
        v = self.vertices
        t = self.triangles
        worst = 0.0
        for i, j in ((0, 1), (1, 2), (2, 0)):
            e = v[t[:, i]] - v[t[:, j]]
            worst = max(worst, float(np.hypot(e[:, 0], e[:, 1]).max()))
        return worst

    def edge_lengths(self, edges: np.ndarray) -> np.ndarray:
        d = self.vertices[edges[:, 1]] - self.vertices[edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def tagged_vertices(self, *tags: str) -> np.ndarray:
        """Sorted unique vertex indices touched by the given edge tags."""
        ids: list[np.ndarray] = []
        for tag in tags:
            edges = self.edge_tags.get(tag)
            if edges is not None and len(edges):
                ids.append(edges.ravel())
        if not ids:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(ids))

    def validate(self) -> None:
        """Structural checks: orientation, conformity, tag coverage, pairings."""
        areas = self.areas()
        if len(areas) and areas.min() <= 0.0:
            raise GeometryError(f"non-positive triangle area {areas.min():g}")
        edges = np.concatenate(
            [self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]]
        )
        edges.sort(axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        if len(counts) and counts.max() > 2:
            raise GeometryError("non-manifold edge (shared by >2 triangles)")
        boundary = uniq[counts == 1]
        if len(boundary):
            tagged = [np.sort(e, axis=1) for e in self.edge_tags.values() if len(e)]
            if tagged:
                allt = np.unique(np.concatenate(tagged), axis=0)
                merged = np.concatenate([boundary, allt])
                uniq_b, counts_b = np.unique(merged, axis=0, return_counts=True)
                n_covered = int((counts_b == 2).sum())
            else:
                n_covered = 0
            if n_covered != len(boundary):
                raise GeometryError(
                    f"{len(boundary) - n_covered} untagged boundary edges"
                )
        for pairing in self.periodic:
            pairing.validate(self.vertices)
        if self.interface_pairs is not None and len(self.interface_pairs):
            pm = self.vertices[self.interface_pairs[:, 0]]
            pp = self.vertices[self.interface_pairs[:, 1]]
            if np.abs(pm - pp).max() > 1e-12:
                raise GeometryError("duplicated interface vertices do not coincide")

    # -- serialization ------------------------------------------------------

    def dump(self) -> str:
        """Deterministic text serialization (format header ``PH-MESH 1``)."""
        lines = ["PH-MESH 1"]
        lines.append(f"kind {self.meta.get('kind', 'unknown')}")
        lines.append(f"counts {self.num_vertices} {self.num_triangles}")
        for x, y in self.vertices:
            lines.append(f"v {x:.17g} {y:.17g}")
        for (a, b, c), r in zip(self.triangles, self.region):
            lines.append(f"t {a} {b} {c} {r}")
        for name in sorted(self.edge_tags):
            edges = self.edge_tags[name]
            lines.append(f"tag {name} {len(edges)}")
            for a, b in edges:
                lines.append(f"e {a} {b}")
        for pairing in self.periodic:
            sx, sy = pairing.shift
            lines.append(f"periodic {len(pairing.pairs)} {sx:.17g} {sy:.17g}")
            for m, s in pairing.pairs:
                lines.append(f"p {m} {s}")
        if self.interface_pairs is not None:
            lines.append(f"ipairs {len(self.interface_pairs)}")
            for m, p in self.interface_pairs:
                lines.append(f"ip {m} {p}")
        lines.append("")
        return "\n".join(lines)

    def checksum(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()


# ---------------------------------------------------------------------------
# raw-mesh utilities (builder internals)


@dataclass
class _Raw:
    verts: np.ndarray
    tris: np.ndarray
    region: np.ndarray
    tags: dict[str, np.ndarray]


_NO_EDGES = np.empty((0, 2), dtype=np.int64)


def _snap_zero(coords: np.ndarray) -> np.ndarray:
    """Replace -0.0 with +0.0 so exact-key merges see one value."""
    return np.where(coords == 0.0, 0.0, coords)


def _merge_raws(parts: list[_Raw]) -> _Raw:
    """Concatenate raw meshes, merging bitwise-identical vertices."""
    verts = np.concatenate([p.verts for p in parts])
    uniq, inverse = np.unique(verts, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    # np.unique sorts rows; rebuild a first-appearance order so the output
    # ordering follows construction order, independent of coordinates.
    first = np.full(len(uniq), len(verts), dtype=np.int64)
    np.minimum.at(first, inverse, np.arange(len(verts)))
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    remap = rank[inverse]
    out_verts = uniq[order]

    tris = []
    region = []
    tags: dict[str, list[np.ndarray]] = {}
    offset = 0
    for p in parts:
        tris.append(remap[p.tris + offset])
        region.append(p.region)
        for name, edges in p.tags.items():
            if len(edges):
                tags.setdefault(name, []).append(remap[edges + offset])
        offset += len(p.verts)
    merged_tags = {}
    for name, chunks in tags.items():
        edges = np.concatenate(chunks)
        canon = np.sort(edges, axis=1)
        _, keep = np.unique(canon, axis=0, return_index=True)
        merged_tags[name] = edges[np.sort(keep)]
    return _Raw(out_verts, np.concatenate(tris), np.concatenate(region), merged_tags)


def _concat_raws(parts: list[_Raw]) -> _Raw:
    """Concatenate raw meshes without any vertex merging."""
    verts = np.concatenate([p.verts for p in parts])
    tris = []
    region = []
    tags: dict[str, list[np.ndarray]] = {}
    offset = 0
    for p in parts:
        tris.append(p.tris + offset)
        region.append(p.region)
        for name, edges in p.tags.items():
            if len(edges):
                tags.setdefault(name, []).append(edges + offset)
        offset += len(p.verts)
    return _Raw(
        verts,
        np.concatenate(tris),
        np.concatenate(region),
        {k: np.concatenate(v) for k, v in tags.items()},
    )


def _drop_degenerate(raw: _Raw) -> _Raw:
    """Remove exactly-degenerate triangles (collapsed blend columns)."""
    v, t = raw.verts, raw.tris
    d1 = v[t[:, 1]] - v[t[:, 0]]
    d2 = v[t[:, 2]] - v[t[:, 0]]
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    keep = areas != 0.0
    tags = {}
    for name, edges in raw.tags.items():
        if len(edges):
            keep_e = np.any(v[edges[:, 0]] != v[edges[:, 1]], axis=1)
            tags[name] = edges[keep_e]
    return _Raw(v, t[keep], raw.region[keep], tags)


def _compact(raw: _Raw) -> _Raw:
    """Drop vertices not referenced by any triangle."""
    used = np.zeros(len(raw.verts), dtype=bool)
    used[raw.tris.ravel()] = True
    remap = np.cumsum(used) - 1
    tags = {name: remap[edges] for name, edges in raw.tags.items()}
    return _Raw(raw.verts[used], remap[raw.tris], raw.region, tags)


def _orient(raw: _Raw) -> None:
    v, t = raw.verts, raw.tris
    d1 = v[t[:, 1]] - v[t[:, 0]]
    d2 = v[t[:, 2]] - v[t[:, 0]]
    flip = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    t[flip] = t[flip][:, [0, 2, 1]]


def _reflect(raw: _Raw, axis: int, tag_map: dict[str, str]) -> _Raw:
    """Mirror a raw mesh across ``coord[axis] = 1/2``, renaming tags."""
    verts = raw.verts.copy()
    verts[:, axis] = _snap_zero(1.0 - verts[:, axis])
    tris = raw.tris[:, [0, 2, 1]]  # restore orientation after the flip
    tags = {tag_map.get(name, name): edges.copy() for name, edges in raw.tags.items()}
    return _Raw(verts, tris, raw.region.copy(), tags)


def _unique_edges(tris: np.ndarray) -> np.ndarray:
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    return np.unique(np.sort(edges, axis=1), axis=0)


def _edge_positions(uniq: np.ndarray, query: np.ndarray, nv: int) -> np.ndarray:
    """Positions of canonical edges ``query`` inside the sorted table ``uniq``."""
    keys = uniq[:, 0].astype(np.int64) * nv + uniq[:, 1]
    qk = query[:, 0].astype(np.int64) * nv + query[:, 1]
    pos = np.searchsorted(keys, qk)
    if len(qk) and (pos >= len(keys)).any() or len(qk) and (keys[np.minimum(pos, len(keys) - 1)] != qk).any():
        raise GeometryError("edge lookup failed")
    return pos


def _refine_raw(raw: _Raw) -> _Raw:
    """Uniform 1:4 refinement with tag propagation."""
    v, t = raw.verts, raw.tris
    nv = len(v)
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    canon = np.sort(edges, axis=1)
    uniq, inv = np.unique(canon, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mids = 0.5 * (v[uniq[:, 0]] + v[uniq[:, 1]])
    mid_idx = nv + np.arange(len(uniq))
    m01 = mid_idx[inv[: len(t)]]
    m12 = mid_idx[inv[len(t) : 2 * len(t)]]
    m20 = mid_idx[inv[2 * len(t) :]]
    children = np.concatenate(
        [
            np.stack([t[:, 0], m01, m20], axis=1),
            np.stack([t[:, 1], m12, m01], axis=1),
            np.stack([t[:, 2], m20, m12], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ]
    )
    region = np.concatenate([raw.region] * 4)
    tags = {}
    for name, tedges in raw.tags.items():
        if not len(tedges):
            tags[name] = tedges
            continue
        pos = _edge_positions(uniq, np.sort(tedges, axis=1), nv)
        mids_t = mid_idx[pos]
        tags[name] = np.concatenate(
            [
                np.stack([tedges[:, 0], mids_t], axis=1),
                np.stack([mids_t, tedges[:, 1]], axis=1),
            ]
        )
    return _Raw(np.concatenate([v, mids]), children, region, tags)


def _quad_tris(i00, i10, i11, i01, diag_up):
    """Split quad (i00,i10,i11,i01) (CCW) into two CCW triangles."""
    if diag_up:
        return [(i00, i10, i11), (i00, i11, i01)]
    return [(i00, i10, i01), (i10, i11, i01)]


def _zip_band(
    n_inner: int, inner_t: np.ndarray, n_outer: int, outer_t: np.ndarray,
    base_inner: int, base_outer: int,
) -> list[tuple[int, int, int]]:
    """Triangulate the band between two open polylines sharing endpoint
    parameters, walking by increasing parameter (deterministic)."""
    tris: list[tuple[int, int, int]] = []
    i = j = 0
    while i < n_inner - 1 or j < n_outer - 1:
        adv_inner = j == n_outer - 1 or (
            i < n_inner - 1 and inner_t[i + 1] <= outer_t[j + 1]
        )
        if adv_inner:
            tris.append((base_inner + i, base_inner + i + 1, base_outer + j))
            i += 1
        else:
            tris.append((base_inner + i, base_outer + j + 1, base_outer + j))
            j += 1
    return tris


def _grid_tris(nx: int, ny: int, yg: np.ndarray, mirror_about: float | None) -> np.ndarray:
    """Index triangles of an nx-by-ny structured grid (column-major ids)."""
    idx = np.arange(nx * ny).reshape(nx, ny)
    i00 = idx[:-1, :-1].ravel()
    i10 = idx[1:, :-1].ravel()
    i11 = idx[1:, 1:].ravel()
    i01 = idx[:-1, 1:].ravel()
    yc = np.tile(0.5 * (yg[:-1] + yg[1:]), nx - 1)
    if mirror_about is None:
        diag_up = np.ones(len(i00), dtype=bool)
    else:
        diag_up = yc < mirror_about
    t1 = np.where(diag_up[:, None], np.stack([i00, i10, i11], 1), np.stack([i00, i10, i01], 1))
    t2 = np.where(diag_up[:, None], np.stack([i00, i11, i01], 1), np.stack([i10, i11, i01], 1))
    return np.concatenate([t1, t2])


def _tensor_block(
    xg: np.ndarray, yg: np.ndarray, region: int, mirror_about: float | None = None
) -> _Raw:
    """Structured tensor block; diagonals mirrored about ``y = mirror_about``."""
    nx, ny = len(xg), len(yg)
    xx, yy = np.meshgrid(xg, yg, indexing="ij")
    verts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    tris = _grid_tris(nx, ny, yg, mirror_about)
    return _Raw(verts, tris, np.full(len(tris), region, dtype=np.int8), {})


def _column_block(
    cols: np.ndarray, yg: np.ndarray, region: int, mirror_about: float | None = None
) -> _Raw:
    """Structured block with per-row x-positions ``cols[i, j]`` (column i,
    y-row j); used for curved blends.  Degenerate cells collapse cleanly."""
    nx, ny = cols.shape
    yy = np.broadcast_to(yg, (nx, ny))
    verts = np.stack([cols.ravel(), yy.ravel()], axis=1)
    tris = _grid_tris(nx, ny, yg, mirror_about)
    return _drop_degenerate(
        _Raw(verts, tris, np.full(len(tris), region, dtype=np.int8), {})
    )


# ---------------------------------------------------------------------------
# cell template


def _quadrant(hole: HoleSpec) -> _Raw:
    """Base quadrant [1/2,1]^2 of the perforated cell (tags: hole/right/top)."""
    n4 = hole.segments // 4
    # Hole arc: regular polygon vertices at uniform angles.
    inner_t = np.arange(n4 + 1) / n4
    ang = inner_t * (0.5 * np.pi)
    hx = 0.5 + hole.radius * np.cos(ang)
    hy = 0.5 + hole.radius * np.sin(ang)
    hx[-1] = 0.5  # snap the axis points exactly onto the midlines
    hy[0] = 0.5
    inner = np.stack([hx, hy], axis=1)

    # Outer ring: uniform arclength along the path (1,1/2)->(1,1)->(1/2,1),
    # inserting the corner when it is not already a sample.
    s = np.arange(n4 + 1) / n4
    if n4 % 2 == 1:
        s = np.sort(np.append(s, 0.5))
    ox = np.where(s <= 0.5, 1.0, 1.5 - s)
    oy = np.where(s <= 0.5, 0.5 + s, 1.0)
    ox[-1] = 0.5
    oy[0] = 0.5
    outer = np.stack([ox, oy], axis=1)

    # Blend contours from the circle point at the matched angle to the ring.
    gap = float(np.hypot(0.5, 0.5)) - hole.radius
    m_rad = max(2, int(np.ceil(gap * n4)))
    ring_ang = s * (0.5 * np.pi)
    hxs = 0.5 + hole.radius * np.cos(ring_ang)
    hys = 0.5 + hole.radius * np.sin(ring_ang)
    hxs[-1] = 0.5
    hys[0] = 0.5
    contours = [inner]
    params = [inner_t]
    for k in range(1, m_rad + 1):
        t = k / m_rad
        cx = (1.0 - t) * hxs + t * outer[:, 0]
        cy = (1.0 - t) * hys + t * outer[:, 1]
        cx[-1] = 0.5  # midline/side coordinates stay exact
        cy[0] = 0.5
        if k == m_rad:
            cx[s <= 0.5] = 1.0
            cy[s >= 0.5] = 1.0
        contours.append(np.stack([cx, cy], axis=1))
        params.append(s)

    verts = np.concatenate(contours)
    offsets = np.concatenate([[0], np.cumsum([len(c) for c in contours])])
    tris: list[tuple[int, int, int]] = []
    for k in range(m_rad):
        a, b = int(offsets[k]), int(offsets[k + 1])
        pk, pk1 = params[k], params[k + 1]
        if len(pk) == len(pk1) and np.array_equal(pk, pk1):
            for j in range(len(pk) - 1):
                tris.extend(_quad_tris(a + j, b + j, b + j + 1, a + j + 1, (j % 2) == 0))
        else:
            tris.extend(_zip_band(len(pk), pk, len(pk1), pk1, a, b))
    tris_arr = np.array(tris, dtype=np.int64)

    hole_edges = np.stack([np.arange(n4), np.arange(1, n4 + 1)], axis=1)
    ring_base = int(offsets[m_rad])
    side = np.arange(len(s))
    right_ids = ring_base + side[s <= 0.5]
    top_ids = ring_base + side[s >= 0.5]
    tags = {
        "hole": hole_edges,
        "side_right": np.stack([right_ids[:-1], right_ids[1:]], axis=1),
        "side_top": np.stack([top_ids[:-1], top_ids[1:]], axis=1),
    }
    raw = _Raw(verts, tris_arr, np.full(len(tris_arr), REGION_PLUS, dtype=np.int8), tags)
    _orient(raw)
    return raw


def _raw_max_edge(raw: _Raw) -> float:
    v, t = raw.verts, raw.tris
    worst = 0.0
    for i, j in ((0, 1), (1, 2), (2, 0)):
        e = v[t[:, i]] - v[t[:, j]]
        worst = max(worst, float(np.hypot(e[:, 0], e[:, 1]).max()))
    return worst


def _cell_template(hole: HoleSpec, h_target: float) -> _Raw:
    """Full unit-cell raw mesh with max edge <= h_target (unit coordinates)."""
    if hole.is_none:
        m = max(2, int(np.ceil(np.sqrt(2.0) / h_target)))
        if m % 2:
            m += 1
        g = np.arange(m + 1) / m
        raw = _tensor_block(g, g, REGION_PLUS, mirror_about=0.5)

        def _edges(ids: np.ndarray, axis: int) -> np.ndarray:
            order = np.argsort(raw.verts[ids, axis], kind="stable")
            ids = ids[order]
            return np.stack([ids[:-1], ids[1:]], axis=1)

        raw.tags.update(
            side_left=_edges(np.flatnonzero(raw.verts[:, 0] == 0.0), 1),
            side_right=_edges(np.flatnonzero(raw.verts[:, 0] == 1.0), 1),
            side_bottom=_edges(np.flatnonzero(raw.verts[:, 1] == 0.0), 0),
            side_top=_edges(np.flatnonzero(raw.verts[:, 1] == 1.0), 0),
        )
        return raw

    quad = _quadrant(hole)
    while _raw_max_edge(quad) > h_target:
        quad = _refine_raw(quad)
    s1 = _reflect(quad, 0, {"side_right": "side_left"})
    top_half = _merge_raws([quad, s1])
    bottom_half = _reflect(top_half, 1, {"side_top": "side_bottom"})
    cell = _merge_raws([top_half, bottom_half])
    cell.verts = _snap_zero(cell.verts)
    return cell


def _side_trace(raw: _Raw, axis: int, value: float) -> np.ndarray:
    """Sorted coordinates of the template vertices on a side line."""
    on = raw.verts[:, axis] == value
    return np.sort(raw.verts[on, 1 - axis])


def _match_sorted(
    verts: np.ndarray,
    ids_a: np.ndarray,
    ids_b: np.ndarray,
    axis: int,
    tiebreak: np.ndarray | None = None,
) -> np.ndarray:
    """Pair two vertex sets by sorting along an axis; returns (k,2) pairs.

    ``tiebreak`` (per-vertex sort key) disambiguates coincident coordinates,
    e.g. the two copies of a duplicated interface corner.
    """
    if tiebreak is None:
        a = ids_a[np.argsort(verts[ids_a, axis], kind="stable")]
        b = ids_b[np.argsort(verts[ids_b, axis], kind="stable")]
    else:
        a = ids_a[np.lexsort((tiebreak[ids_a], verts[ids_a, axis]))]
        b = ids_b[np.lexsort((tiebreak[ids_b], verts[ids_b, axis]))]
    if len(a) != len(b):
        raise GeometryError("mismatched trace vertex counts")
    if len(a) and np.abs(verts[a, axis] - verts[b, axis]).max() > 1e-12:
        raise GeometryError("mismatched trace coordinates")
    return np.stack([a, b], axis=1)


def _coord_keys(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact composite keys for coordinate pairs (for bitwise membership)."""
    return x + 1j * y


def _ordered_chain(verts: np.ndarray, ids: np.ndarray, axis: int) -> np.ndarray:
    ids = ids[np.argsort(verts[ids, axis], kind="stable")]
    return np.stack([ids[:-1], ids[1:]], axis=1)


# ---------------------------------------------------------------------------
# public builders


def build_cell_mesh(hole: HoleSpec, h_target: float = 0.1) -> TriMesh:
    """Unit periodicity cell with periodic pairings in both directions.

    The vertex set is invariant under both midline reflections; opposite
    boundary traces agree bitwise, so the periodic pairings are exact.
    """
    if not 0.0 < h_target <= 0.25:
        raise GeometryError("h_target must lie in (0, 0.25]")
    raw = _cell_template(hole, h_target)
    mesh = TriMesh(
        raw.verts,
        raw.tris.astype(np.int64),
        raw.region,
        raw.tags,
        meta={"kind": "cell", "hole": hole, "h_target": h_target},
    )
    v = mesh.vertices
    left = np.flatnonzero(v[:, 0] == 0.0)
    right = np.flatnonzero(v[:, 0] == 1.0)
    bottom = np.flatnonzero(v[:, 1] == 0.0)
    top = np.flatnonzero(v[:, 1] == 1.0)
    mesh.periodic = [
        PeriodicPairing(_match_sorted(v, left, right, 1), np.array([1.0, 0.0])),
        PeriodicPairing(_match_sorted(v, bottom, top, 0), np.array([0.0, 1.0])),
    ]
    analytic = hole.cell_area()
    if abs(mesh.total_area() - analytic) > 1e-8 * analytic:
        raise GeometryError("cell mesh area deviates from the analytic value")
    mesh.validate()
    return mesh


def _scaled_cell(template: _Raw, eps: float, ix: int, iy: int) -> _Raw:
    """Template copy scaled by eps and translated to cell (ix, iy).

    The arithmetic ``eps * (coord + index)`` is shared by every tile, so
    coincident vertices of neighbouring tiles agree bitwise.
    """
    verts = np.empty_like(template.verts)
    verts[:, 0] = eps * (template.verts[:, 0] + ix)
    verts[:, 1] = eps * (template.verts[:, 1] + iy)
    return _Raw(verts, template.tris, template.region, dict(template.tags))


def _interface_arrays(
    template: _Raw, curve: InterfaceCurve, eps: float, periods: int
) -> tuple[np.ndarray, np.ndarray]:
    """Physical interface sampling (y positions and depths) over ``periods``
    cell rows, built from the template trace without any division so shared
    points agree bitwise with the tiled cells."""
    trace_unit = _side_trace(template, 0, 0.0)
    depth_unit = _snap_zero(curve.depth(trace_unit))
    ys = [eps * (trace_unit + 0)]
    ds = [eps * depth_unit]
    for j in range(1, periods):
        ys.append(eps * (trace_unit[1:] + j))
        ds.append(eps * depth_unit[1:])
    return np.concatenate(ys), _snap_zero(np.concatenate(ds))


def _blend_columns(
    depth: np.ndarray, x_left: float, m_x: int
) -> np.ndarray:
    """Column x-positions blending a straight left edge onto the curve."""
    cols = np.empty((m_x + 1, len(depth)))
    for p in range(m_x):
        cols[p] = x_left + (depth - x_left) * (p / m_x)
    cols[m_x] = depth
    return cols


def _sliver_columns(depth: np.ndarray, m_sliv: int) -> np.ndarray:
    cols = np.empty((m_sliv + 1, len(depth)))
    for q in range(m_sliv + 1):
        cols[q] = _snap_zero(depth * ((m_sliv - q) / m_sliv))
    cols[0] = depth
    cols[-1] = 0.0
    return cols


def build_strip_mesh(
    L_minus: int,
    L_plus: int,
    hole: HoleSpec,
    curve: InterfaceCurve = InterfaceCurve(),
    h_target: float = 0.1,
) -> TriMesh:
    """Two-sided strip: solid material on ``(-L_minus, l(y))``, perforated
    cells on ``(l(y), L_plus)``, duplicated interface, periodic in y.

    Interface vertices lie exactly on the curve; the uniform interface
    sampling makes the polyline area under the oscillation profile agree
    with the smooth-curve area to machine precision.
    """
    if L_minus < 3 or L_plus < 3:
        raise GeometryError("strip truncation lengths must be >= 3 cells")
    curve.validate_clearance(hole)
    template = _cell_template(hole, h_target)

    parts = []
    for k in range(L_plus):
        part = _scaled_cell(template, 1.0, k, 0)
        tags = {
            "hole": part.tags.get("hole", _NO_EDGES),
            "side_bottom": part.tags.get("side_bottom", _NO_EDGES),
            "side_top": part.tags.get("side_top", _NO_EDGES),
        }
        if k == L_plus - 1:
            tags["end_right"] = part.tags["side_right"]
        part.tags = tags
        parts.append(part)

    trace, depth = _interface_arrays(template, curve, 1.0, 1)
    nT = len(trace)
    dx = 1.0 / (nT - 1)

    if not curve.is_flat:
        m_sliv = max(1, int(round(curve.amplitude / dx)))
        parts.append(
            _column_block(_sliver_columns(depth, m_sliv), trace, REGION_PLUS, mirror_about=0.5)
        )
    plus_all = _compact(_merge_raws(parts))

    m_x = L_minus * (nT - 1)
    minus = _compact(
        _column_block(
            _blend_columns(depth, -float(L_minus), m_x), trace, REGION_MINUS, mirror_about=0.5
        )
    )

    raw = _concat_raws([plus_all, minus])
    n_plus = len(plus_all.verts)
    verts = raw.verts
    part_flag = np.zeros(len(verts), dtype=np.int8)
    part_flag[n_plus:] = 1

    curve_keys = _coord_keys(depth, trace)
    keys_all = _coord_keys(verts[:, 0], verts[:, 1])
    on_curve = np.isin(keys_all, curve_keys)
    on_curve_plus = np.flatnonzero(on_curve[:n_plus])
    on_curve_minus = n_plus + np.flatnonzero(on_curve[n_plus:])
    pairs = _match_sorted(verts, on_curve_minus, on_curve_plus, 1)

    vm = verts[n_plus:]
    end_left = n_plus + np.flatnonzero(vm[:, 0] == -float(L_minus))
    raw.tags["end_left"] = _ordered_chain(verts, end_left, 1)
    minus_bottom = n_plus + np.flatnonzero(vm[:, 1] == 0.0)
    minus_top = n_plus + np.flatnonzero(vm[:, 1] == 1.0)
    raw.tags["side_bottom"] = np.concatenate(
        [raw.tags.get("side_bottom", _NO_EDGES), _ordered_chain(verts, minus_bottom, 0)]
    )
    raw.tags["side_top"] = np.concatenate(
        [raw.tags.get("side_top", _NO_EDGES), _ordered_chain(verts, minus_top, 0)]
    )
    raw.tags["interface_minus"] = np.stack([pairs[:-1, 0], pairs[1:, 0]], axis=1)
    raw.tags["interface_plus"] = np.stack([pairs[:-1, 1], pairs[1:, 1]], axis=1)

    mesh = TriMesh(
        raw.verts,
        raw.tris.astype(np.int64),
        raw.region,
        raw.tags,
        interface_pairs=pairs,
        meta={
            "kind": "strip",
            "hole": hole,
            "curve": curve,
            "L_minus": L_minus,
            "L_plus": L_plus,
            "h_target": h_target,
        },
    )
    bottom = np.flatnonzero(mesh.vertices[:, 1] == 0.0)
    top = np.flatnonzero(mesh.vertices[:, 1] == 1.0)
    mesh.periodic = [
        PeriodicPairing(
            _match_sorted(mesh.vertices, bottom, top, 0, tiebreak=part_flag),
            np.array([0.0, 1.0]),
        )
    ]

    sliver_area = -float(_trapz(depth, trace))
    analytic = (L_minus - sliver_area) + (L_plus * hole.cell_area() + sliver_area)
    if abs(mesh.total_area() - analytic) > 1e-8 * analytic:
        raise GeometryError("strip mesh area deviates from the analytic value")
    mesh.validate()
    return mesh


def build_eps_mesh(
    N: int,
    d: float = 1.0,
    left_extent: float = 1.0,
    hole: HoleSpec = HoleSpec(),
    curve: InterfaceCurve = InterfaceCurve(),
    h_cell: float = 0.125,
    triangle_budget: int = DEFAULT_TRIANGLE_BUDGET,
) -> TriMesh:
    """Fine mesh of the two-phase domain at cell size ``eps = d/N``.

    The plus part ``(0, d)^2`` is an N-by-N tiling of the cell template (a
    hole in every cell); the minus part ``(-left_extent, l_eps(y)) x (0, d)``
    is solid.  ``h_cell`` is the template mesh-size target in cell
    coordinates (the physical mesh size is ``eps * h_cell``).  The interface
    is duplicated; outer boundary edges carry the ``outer`` tag.
    """
    if N < 2:
        raise GeometryError("N must be >= 2")
    curve.validate_clearance(hole)
    eps = d / N
    template = _cell_template(hole, h_cell)

    trace_unit = _side_trace(template, 0, 0.0)
    nT = len(trace_unit)
    dx_unit = 1.0 / (nT - 1)
    m_x = max(1, int(round(left_extent / (eps * dx_unit))))
    est = N * N * len(template.tris) + 2 * m_x * N * (nT - 1)
    if est > triangle_budget:
        raise MeshBudgetError(
            f"estimated triangle count {est} exceeds budget {triangle_budget}"
        )

    parts = []
    for ix in range(N):
        for iy in range(N):
            part = _scaled_cell(template, eps, ix, iy)
            tags = {"hole": part.tags.get("hole", _NO_EDGES)}
            outer = []
            if ix == N - 1:
                outer.append(part.tags["side_right"])
            if iy == 0:
                outer.append(part.tags["side_bottom"])
            if iy == N - 1:
                outer.append(part.tags["side_top"])
            if outer:
                tags["outer"] = np.concatenate(outer)
            part.tags = tags
            parts.append(part)

    trace, depth = _interface_arrays(template, curve, eps, N)

    if not curve.is_flat:
        m_sliv = max(1, int(round(curve.amplitude / dx_unit)))
        parts.append(_column_block(_sliver_columns(depth, m_sliv), trace, REGION_PLUS))
    plus_all = _compact(_merge_raws(parts))

    minus = _compact(
        _column_block(_blend_columns(depth, -left_extent, m_x), trace, REGION_MINUS)
    )

    raw = _concat_raws([plus_all, minus])
    n_plus = len(plus_all.verts)
    verts = raw.verts

    curve_keys = _coord_keys(depth, trace)
    keys_all = _coord_keys(verts[:, 0], verts[:, 1])
    on_curve = np.isin(keys_all, curve_keys)
    on_curve_plus = np.flatnonzero(on_curve[:n_plus])
    on_curve_minus = n_plus + np.flatnonzero(on_curve[n_plus:])
    pairs = _match_sorted(verts, on_curve_minus, on_curve_plus, 1)

    vm = verts[n_plus:]
    y_top = trace[-1]
    minus_outer = [
        _ordered_chain(verts, n_plus + np.flatnonzero(vm[:, 0] == -left_extent), 1)
    ]
    for yval in (0.0, y_top):
        ids = n_plus + np.flatnonzero(vm[:, 1] == yval)
        if len(ids) > 1:
            minus_outer.append(_ordered_chain(verts, ids, 0))
    raw.tags["outer"] = np.concatenate([raw.tags["outer"]] + minus_outer)
    raw.tags["interface_minus"] = np.stack([pairs[:-1, 0], pairs[1:, 0]], axis=1)
    raw.tags["interface_plus"] = np.stack([pairs[:-1, 1], pairs[1:, 1]], axis=1)

    mesh = TriMesh(
        raw.verts,
        raw.tris.astype(np.int64),
        raw.region,
        raw.tags,
        interface_pairs=pairs,
        meta={
            "kind": "eps",
            "hole": hole,
            "curve": curve,
            "N": N,
            "d": d,
            "eps": eps,
            "left_extent": left_extent,
            "h_cell": h_cell,
        },
    )
    sliver_area = -float(_trapz(depth, trace))
    analytic = (
        left_extent * d - sliver_area
        + d * d - N * N * eps * eps * hole.polygon_area() + sliver_area
    )
    if abs(mesh.total_area() - analytic) > 1e-8 * analytic:
        raise GeometryError("fine mesh area deviates from the analytic value")
    mesh.validate()
    return mesh


def build_macro_mesh(
    d: float = 1.0,
    left_extent: float = 1.0,
    h_target: float = 1.0 / 64.0,
    duplicate_interface: bool = False,
) -> TriMesh:
    """Interface-aligned coarse mesh of ``(-left_extent, d) x (0, d)``.

    No triangle straddles the interface ``x = 0``.  With
    ``duplicate_interface`` the interface vertices are doubled and paired.
    """
    m_left = max(1, int(round(left_extent / h_target)))
    m_right = max(1, int(round(d / h_target)))
    m_y = max(1, int(round(d / h_target)))
    xg_minus = -left_extent + (left_extent / m_left) * np.arange(m_left + 1)
    xg_minus[0] = -left_extent
    xg_minus[-1] = 0.0
    xg_plus = (d / m_right) * np.arange(m_right + 1)
    xg_plus[-1] = d
    yg = (d / m_y) * np.arange(m_y + 1)
    yg[-1] = d

    minus = _tensor_block(xg_minus, yg, REGION_MINUS)
    plus = _tensor_block(xg_plus, yg, REGION_PLUS)

    def _block_outer(raw: _Raw, xcorner: float, offset: int, verts: np.ndarray) -> list[np.ndarray]:
        out = [
            _ordered_chain(verts, offset + np.flatnonzero(raw.verts[:, 0] == xcorner), 1)
        ]
        for yval in (0.0, d):
            ids = offset + np.flatnonzero(raw.verts[:, 1] == yval)
            out.append(_ordered_chain(verts, ids, 0))
        return out

    if duplicate_interface:
        raw = _concat_raws([plus, minus])
        verts = raw.verts
        n_plus = len(plus.verts)
        ip = np.flatnonzero(plus.verts[:, 0] == 0.0)
        im = n_plus + np.flatnonzero(minus.verts[:, 0] == 0.0)
        pairs = _match_sorted(verts, im, ip, 1)
        outer = _block_outer(plus, d, 0, verts) + _block_outer(minus, -left_extent, n_plus, verts)
        tags = {"outer": np.concatenate(outer)}
        tags["interface_minus"] = np.stack([pairs[:-1, 0], pairs[1:, 0]], axis=1)
        tags["interface_plus"] = np.stack([pairs[:-1, 1], pairs[1:, 1]], axis=1)
    else:
        raw = _merge_raws([plus, minus])
        verts = raw.verts
        pairs = None
        outer = []
        for axis, val in ((0, -left_extent), (0, d)):
            ids = np.flatnonzero(verts[:, axis] == val)
            outer.append(_ordered_chain(verts, ids, 1 - axis))
        for yval in (0.0, d):
            ids = np.flatnonzero(verts[:, 1] == yval)
            outer.append(_ordered_chain(verts, ids, 0))
        tags = {"outer": np.concatenate(outer)}
        iface = np.flatnonzero(verts[:, 0] == 0.0)
        tags["interface"] = _ordered_chain(verts, iface, 1)
    raw.tags = tags

    mesh = TriMesh(
        raw.verts,
        raw.tris.astype(np.int64),
        raw.region,
        raw.tags,
        interface_pairs=pairs,
        meta={
            "kind": "macro",
            "d": d,
            "left_extent": left_extent,
            "h_target": h_target,
            "duplicated": duplicate_interface,
        },
    )
    analytic = (left_extent + d) * d
    if abs(mesh.total_area() - analytic) > 1e-8 * analytic:
        raise GeometryError("macro mesh area deviates from the analytic value")
    mesh.validate()
    return mesh


def refine(mesh: TriMesh) -> TriMesh:
    """Uniform 1:4 refinement preserving tags, pairings and interface pairs.

    Interface/hole polylines are refined by chord midpoints (the polygonal
    geometry is preserved; curved interfaces are not re-projected).
    """
    raw = _Raw(mesh.vertices, mesh.triangles, mesh.region, dict(mesh.edge_tags))
    fine = _refine_raw(raw)
    nv = len(mesh.vertices)
    uniq = _unique_edges(mesh.triangles)

    def _pair_mid(pairs: np.ndarray) -> np.ndarray:
        side = -np.ones(nv, dtype=np.int64)
        side[pairs[:, 0]] = pairs[:, 1]
        a, b = uniq[:, 0], uniq[:, 1]
        mapped = (side[a] >= 0) & (side[b] >= 0)
        src = np.flatnonzero(mapped)
        tgt = np.sort(np.stack([side[a[src]], side[b[src]]], axis=1), axis=1)
        # keep only edges whose mapped pair is itself a mesh edge
        keys = uniq[:, 0] * nv + uniq[:, 1]
        tkeys = tgt[:, 0] * nv + tgt[:, 1]
        pos = np.searchsorted(keys, tkeys)
        pos = np.minimum(pos, len(keys) - 1)
        ok = keys[pos] == tkeys
        mid_src = nv + src[ok]
        mid_tgt = nv + pos[ok]
        return np.concatenate([pairs, np.stack([mid_src, mid_tgt], axis=1)])

    periodic = [
        PeriodicPairing(_pair_mid(p.pairs), p.shift.copy()) for p in mesh.periodic
    ]
    interface_pairs = None
    if mesh.interface_pairs is not None:
        ipairs = _pair_mid(mesh.interface_pairs)
        order = np.argsort(fine.verts[ipairs[:, 0], 1], kind="stable")
        interface_pairs = ipairs[order]
    out = TriMesh(
        fine.verts,
        fine.tris.astype(np.int64),
        fine.region,
        fine.tags,
        periodic=periodic,
        interface_pairs=interface_pairs,
        meta=dict(mesh.meta),
    )
    out.validate()
    return out


def reflection_permutation(
    mesh: TriMesh, transform: Callable[[np.ndarray], np.ndarray], tol: float = 1e-9
) -> np.ndarray:
    """Vertex permutation realizing a point transform, or raise GeometryError.

    Used by the symmetry diagnostics: ``values[perm]`` is the field pulled
    back by the transform.
    """
    from scipy.spatial import cKDTree

    mapped = transform(mesh.vertices.copy())
    tree = cKDTree(mesh.vertices)
    dist, idx = tree.query(mapped, k=1)
    if dist.max() > tol:
        raise GeometryError(f"vertex set not invariant (max deviation {dist.max():g})")
    if len(np.unique(idx)) != len(idx):
        raise GeometryError("transform does not permute the vertex set")
    return idx
