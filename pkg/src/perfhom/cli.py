"""Pipeline orchestration: configuration, convergence studies, and the
``perfhom`` command-line entry point.

The pipeline runs cell -> layer -> homogenized -> corrector -> direct and
reports effective constants, per-``eps`` error norms, and fitted rates as
machine-readable artifacts (JSON report, one CSV per approximation).
Reports are deterministic: the same configuration produces byte-identical
``report.json`` and CSV files; wall-clock timings go to a separate
``timings.json``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import click
import numpy as np

from .cell import CellSolution, check_symmetries, solve_cell
from .corrector import assemble_A1, assemble_U_osc, error_report, v0_field
from .direct import solve_fine_osc
from .fem import ConstraintError, ErrorNorms, SolverError
from .homogenized import (
    DEFAULT_MACRO_H,
    MacroModel,
    MacroSolution,
    solve_v0,
    solve_v1_flat,
    source_fields,
    theta_hat,
)
from .layer import (
    LayerSolution,
    TruncationError,
    curve_flux_constant,
    estimate_decay,
    far_residual,
    flat_flux_constant,
    second_order_constants,
    solve_layer,
)
from .mesh import (
    GeometryError,
    HoleSpec,
    InterfaceCurve,
    MeshBudgetError,
    REGION_MINUS,
    REGION_PLUS,
    TriMesh,
    build_cell_mesh,
    build_eps_mesh,
    build_macro_mesh,
    build_strip_mesh,
)

__all__ = [
    "StudyConfig",
    "StudyReport",
    "RateFit",
    "StageError",
    "fit_rate",
    "run_study",
    "main",
]

ERROR_COLUMNS = (
    "eps",
    "l2",
    "h1",
    "l2_minus",
    "l2_plus",
    "h1_minus",
    "h1_plus",
    "interior_h1",
)

_VARIANTS = ("flat", "osc", "osc_theta")
_THETA_KINDS = ("none", "separable")
_LOW_R2 = 0.9

_PIPELINE_ERRORS = (
    GeometryError,
    MeshBudgetError,
    SolverError,
    ConstraintError,
    TruncationError,
    ValueError,
)


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage tag for diagnostics."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage


# -- configuration -----------------------------------------------------------

# Flat namespaced config keys <-> dataclass fields.  The JSON config file is
# a single object with these keys; unknown keys are rejected.
_CONFIG_KEYS: dict[str, str] = {
    "variant": "variant",
    "out": "out",
    "hole.kind": "hole_kind",
    "hole.radius": "hole_radius",
    "hole.segments": "hole_segments",
    "domain.d": "d",
    "domain.left_extent": "left_extent",
    "coeff.D_minus": "D_minus",
    "curve.amplitude": "amplitude",
    "source.rho": "source_rho",
    "source.amplitude": "source_amplitude",
    "theta.kind": "theta_kind",
    "theta.modulation": "theta_modulation",
    "mesh.cell_h": "cell_h",
    "mesh.strip_h": "strip_h",
    "mesh.macro_h": "macro_h",
    "mesh.h_cell": "h_cell",
    "strip.L_minus": "L_minus",
    "strip.L_plus": "L_plus",
    "study.N_list": "N_list",
    "study.workers": "workers",
    "study.macro_gradient": "macro_gradient",
    "study.comparison": "comparison",
    "solver.method": "method",
}
_FIELD_TO_KEY = {v: k for k, v in _CONFIG_KEYS.items()}


@dataclass(frozen=True)
class StudyConfig:
    """Full pipeline configuration with flat namespaced JSON keys.

    ``L_minus``/``L_plus`` of 0 pick the strip truncation automatically so
    the default cut-off radius fits inside the layer reach at the finest
    ``eps``.  ``workers`` of 0 runs one thread per study leg.

    The default ``mesh.cell_h``/``mesh.strip_h`` equal ``mesh.h_cell``: the
    cell and strip correctors are solved at the resolution of the fine-mesh
    tiles, so the composite approximations and the direct solution carry
    the same discrete microstructure and convergence studies measure the
    model error rather than the resolution mismatch.  For best-accuracy
    transmission constants on their own, solve the cell and strip at a
    finer ``h`` (the ``cell``/``layer`` subcommands default to 0.05).
    """

    variant: str = "flat"
    out: str = "out"
    hole_kind: str = "disk"
    hole_radius: float = 0.25
    hole_segments: int = 32
    d: float = 1.0
    left_extent: float = 1.0
    D_minus: float = 1.0
    amplitude: float = 0.2
    source_rho: float = 0.3
    source_amplitude: float = 1.0
    theta_kind: str = "none"
    theta_modulation: float = 0.5
    cell_h: float = 0.125
    strip_h: float = 0.125
    macro_h: float = 1.0 / 128.0
    h_cell: float = 0.125
    L_minus: int = 0
    L_plus: int = 0
    N_list: tuple[int, ...] = (8, 16, 32)
    workers: int = 0
    macro_gradient: str = "recovered"
    comparison: str = "projected"
    method: str = "auto"

    def __post_init__(self) -> None:
        object.__setattr__(self, "N_list", tuple(int(n) for n in self.N_list))
        self.validate()

    def validate(self) -> None:
        if self.variant not in _VARIANTS:
            raise ValueError(f"variant must be one of {_VARIANTS}")
        if self.theta_kind not in _THETA_KINDS:
            raise ValueError(f"theta.kind must be one of {_THETA_KINDS}")
        if self.variant == "osc_theta" and self.theta_kind == "none":
            raise ValueError("variant osc_theta needs theta.kind != none")
        if len(self.N_list) == 0:
            raise ValueError("study.N_list must not be empty")
        if any(b <= a for a, b in zip(self.N_list, self.N_list[1:])):
            raise ValueError("study.N_list must be strictly increasing")
        if min(self.N_list) < 2:
            raise ValueError("study.N_list entries must be >= 2")
        if self.variant != "flat" and self.amplitude <= 0.0:
            raise ValueError("oscillating variants need curve.amplitude > 0")
        if self.macro_gradient not in ("p1", "recovered"):
            raise ValueError("study.macro_gradient must be 'p1' or 'recovered'")
        if self.comparison not in ("pointwise", "projected", "nodal"):
            raise ValueError(
                "study.comparison must be 'pointwise', 'projected', or 'nodal'"
            )

    @classmethod
    def from_mapping(cls, data: dict) -> "StudyConfig":
        unknown = sorted(set(data) - set(_CONFIG_KEYS))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        fields = {_CONFIG_KEYS[k]: v for k, v in data.items()}
        return cls(**fields)

    def to_mapping(self) -> dict:
        out: dict = {}
        for key, name in _CONFIG_KEYS.items():
            value = getattr(self, name)
            out[key] = list(value) if isinstance(value, tuple) else value
        return out

    def digest(self) -> str:
        return hashlib.sha256(_stable_json(self.to_mapping()).encode()).hexdigest()

    # -- derived pieces ------------------------------------------------

    def hole(self) -> HoleSpec:
        return HoleSpec(self.hole_kind, self.hole_radius, self.hole_segments)

    def curve(self) -> InterfaceCurve:
        if self.variant == "flat":
            return InterfaceCurve()
        return InterfaceCurve("oscillating", self.amplitude)

    def strip_lengths(self) -> tuple[int, int]:
        """Truncation lengths; automatic choice covers the cut-off reach."""
        rho0 = 0.5 * min(self.left_extent, self.d)
        auto = max(6, math.ceil(rho0 * max(self.N_list) / self.d))
        return (self.L_minus or auto, self.L_plus or auto)

    def theta(self) -> Callable[[np.ndarray, np.ndarray], np.ndarray] | None:
        return _theta_callable(self.theta_kind, self.theta_modulation, self.d)


def _theta_callable(kind: str, modulation: float, d: float):
    """Separable interface flux ``w(x2) * (1 + m cos(2 pi xi2))``."""
    if kind == "none":
        return None

    def theta(x2, xi2):
        slow = np.sin(np.pi * np.asarray(x2, dtype=float) / d)
        fast = 1.0 + modulation * np.cos(2.0 * np.pi * np.asarray(xi2, dtype=float))
        return slow * fast

    return theta


def _stable_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_stable_json(payload))


# -- rate fitting ------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    """Log-log least-squares fit ``err ~ C * eps^slope``."""

    slope: float
    intercept: float
    r_squared: float

    def as_dict(self) -> dict[str, float]:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
        }


def fit_rate(pairs: Iterable[tuple[float, float]]) -> RateFit:
    """Least-squares slope of ``log err`` against ``log eps`` with R^2.

    Needs at least three strictly positive ``(eps, err)`` pairs; fewer
    points would make the fit quality unquantifiable.
    """
    arr = np.asarray([(float(e), float(v)) for e, v in pairs], dtype=float)
    if arr.ndim != 2 or len(arr) < 3:
        raise ValueError("rate fit needs at least 3 (eps, err) pairs")
    if np.any(arr <= 0.0):
        raise ValueError("rate fit needs strictly positive eps and err")
    x = np.log(arr[:, 0])
    y = np.log(arr[:, 1])
    design = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0.0 else 1.0
    return RateFit(float(coef[0]), float(coef[1]), r2)


def _rate_entry(rows: list[dict], column: str, degenerate: bool) -> dict:
    fit = fit_rate((row["eps"], row[column]) for row in rows)
    flags = []
    if degenerate:
        flags.append("degenerate (eps-independent)")
    if fit.r_squared < _LOW_R2:
        flags.append("low r-squared")
    entry = fit.as_dict()
    entry["flags"] = flags
    return entry


# -- study -------------------------------------------------------------------


@dataclass
class StudyReport:
    """Per-``eps`` error rows, fitted rates, and the constants block.

    ``errors`` maps approximation name (``v0``, ``a1``, ``u_osc``) to rows
    keyed by the CSV columns; ``rates`` holds per-column log-log fits with
    quality flags.  ``timings`` is wall-clock seconds per stage and is the
    only non-reproducible part; it is written to a separate file.
    """

    config: StudyConfig
    constants: dict[str, float]
    errors: dict[str, list[dict[str, float]]]
    rates: dict[str, dict[str, dict]]
    timings: dict[str, float] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "ph_report": 1,
            "config": self.config.to_mapping(),
            "config_digest": self.config.digest(),
            "constants": self.constants,
            "errors": self.errors,
            "rates": self.rates,
        }

    def write(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(_stable_json(self.to_json_dict()))
        for name, rows in self.errors.items():
            with open(out_dir / f"errors_{name}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(ERROR_COLUMNS)
                for row in rows:
                    writer.writerow([repr(float(row[c])) for c in ERROR_COLUMNS])
        _write_json(out_dir / "timings.json", {"ph_timings": 1, **self.timings})


def _approx_names(variant: str) -> tuple[str, ...]:
    if variant == "flat":
        return ("v0", "a1")
    if variant == "osc":
        return ("v0", "u_osc")
    return ("v0",)


def _build_approx(
    name: str,
    macro: MacroSolution,
    cell: CellSolution,
    layers: tuple[LayerSolution, LayerSolution],
    eps: float,
    curve: InterfaceCurve,
    macro_gradient: str,
):
    if name == "v0":
        return v0_field(macro, macro_gradient=macro_gradient)
    if name == "a1":
        return assemble_A1(macro, cell, layers, eps, macro_gradient=macro_gradient)
    return assemble_U_osc(
        macro, cell, layers, eps, curve, macro_gradient=macro_gradient
    )


def _prewarm(approx, d: float, left_extent: float) -> None:
    """Touch every lazily-built locator of the shared fields once.

    Concurrent study legs share the macro/cell/layer fields; warming their
    point-location caches up front keeps the parallel phase read-only.
    """
    x_in = 0.004 * d
    pts = np.array(
        [
            [-0.31 * left_extent, 0.41 * d],
            [0.29 * d, 0.43 * d],
            [-x_in, 0.51 * d],
            [x_in, 0.47 * d],
        ]
    )
    regs = np.array([REGION_MINUS, REGION_PLUS, REGION_MINUS, REGION_PLUS])
    approx.evaluate_with_grad(pts, region=regs)


def run_study(config: StudyConfig) -> StudyReport:
    """Execute the full pipeline once and the per-``eps`` legs concurrently.

    The cell/layer/macro stages run once; each ``N`` in the study list gets
    a fine solve plus error reports against the variant's approximations.
    Rates are fitted when the study has at least three legs.
    """
    config.validate()
    t_start = time.perf_counter()
    timings: dict[str, float] = {}

    hole = config.hole()
    curve = config.curve()
    try:
        cell = solve_cell(hole, config.cell_h, method=config.method)
    except _PIPELINE_ERRORS as exc:
        raise StageError("cell", exc) from exc

    L_minus, L_plus = config.strip_lengths()
    try:
        strip = build_strip_mesh(L_minus, L_plus, hole, curve, config.strip_h)
        lay1 = solve_layer(cell, strip, 1, config.D_minus, method=config.method)
        lay2 = solve_layer(cell, strip, 2, config.D_minus, method=config.method)
    except _PIPELINE_ERRORS as exc:
        raise StageError("layer", exc) from exc
    layers = (lay1, lay2)

    theta = config.theta()
    f_minus, f_plus = source_fields(
        config.d, config.source_rho, config.source_amplitude
    )
    try:
        th_hat = (
            theta_hat(theta, curve, config.d) if theta is not None else None
        )
        model = MacroModel.from_solutions(
            cell,
            lay1,
            lay2,
            D_minus=config.D_minus,
            theta=th_hat,
            f_minus=f_minus,
            f_plus=f_plus,
        )
        macro_mesh = build_macro_mesh(config.d, config.left_extent, config.macro_h)
        macro = solve_v0(model, macro_mesh, variant=config.variant, method=config.method)
        if config.variant == "flat":
            solve_v1_flat(macro, method=config.method)
    except _PIPELINE_ERRORS as exc:
        raise StageError("homogenized", exc) from exc
    timings["setup"] = time.perf_counter() - t_start

    names = _approx_names(config.variant)
    eps_max = config.d / max(config.N_list)
    for name in names:
        _prewarm(
            _build_approx(
                name, macro, cell, layers, eps_max, curve, config.macro_gradient
            ),
            config.d,
            config.left_extent,
        )

    def leg(N: int) -> tuple[dict[str, ErrorNorms], float]:
        t_leg = time.perf_counter()
        eps = config.d / N
        mesh = build_eps_mesh(
            N, config.d, config.left_extent, hole, curve, config.h_cell
        )
        theta_eps = None
        if theta is not None:
            theta_eps = lambda pts: theta(pts[:, 1], pts[:, 1] / eps)
        u = solve_fine_osc(
            mesh, config.D_minus, f_minus, f_plus, theta_eps, config.method
        )
        reports = {}
        for name in names:
            approx = _build_approx(
                name, macro, cell, layers, eps, curve, config.macro_gradient
            )
            reports[name] = error_report(u, approx, comparison=config.comparison)
        return reports, time.perf_counter() - t_leg

    workers = config.workers or min(len(config.N_list), os.cpu_count() or 1)
    leg_results: list[dict[str, ErrorNorms]] = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(leg, N) for N in config.N_list]
        for N, fut in zip(config.N_list, futures):
            try:
                reports, seconds = fut.result()
            except _PIPELINE_ERRORS as exc:
                raise StageError(f"direct N={N}", exc) from exc
            leg_results.append(reports)
            timings[f"leg_N{N}"] = seconds

    errors: dict[str, list[dict[str, float]]] = {name: [] for name in names}
    for N, reports in zip(config.N_list, leg_results):
        for name in names:
            errors[name].append({"eps": config.d / N, **reports[name].as_dict()})

    degenerate = config.variant == "flat" and hole.is_none and theta is None
    rates: dict[str, dict[str, dict]] = {}
    for name in names:
        rows = errors[name]
        if len(rows) < 3:
            rates[name] = {}
            continue
        rates[name] = {
            column: _rate_entry(rows, column, degenerate and name == "v0")
            for column in ("l2", "h1", "interior_h1")
        }

    coeffs = cell.coeffs
    constants = {
        "Ymeas": cell.area,
        "h11": coeffs.h11,
        "h22": coeffs.h22,
        "q1": model.q1,
        "q2": lay2.q,
        "J1": cell.area * coeffs.h11,
        "J11": model.J11,
        "J22": model.J22,
        "Jtilde1": -config.D_minus + cell.area * coeffs.h11,
    }
    timings["total"] = time.perf_counter() - t_start
    return StudyReport(
        config=config,
        constants=constants,
        errors=errors,
        rates=rates,
        timings=timings,
    )


# -- command-line interface --------------------------------------------------


def _mesh_stats(mesh: TriMesh) -> dict:
    verts = mesh.vertices
    tris = mesh.triangles
    edges = np.concatenate(
        [tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=0
    )
    lengths = np.linalg.norm(verts[edges[:, 1]] - verts[edges[:, 0]], axis=1)
    return {
        "vertices": int(mesh.num_vertices),
        "triangles": int(mesh.num_triangles),
        "area": float(mesh.areas().sum()),
        "h_max": float(lengths.max()),
    }


def _out_option(fn):
    return click.option(
        "--out",
        "out_dir",
        type=click.Path(file_okay=False, path_type=Path),
        default=Path("out"),
        show_default=True,
        help="Output directory for artifacts.",
    )(fn)


def _hole_options(fn):
    for deco in (
        click.option(
            "--hole-kind",
            type=click.Choice(["disk", "none"]),
            default="disk",
            show_default=True,
        ),
        click.option("--hole-radius", type=float, default=0.25, show_default=True),
        click.option("--hole-segments", type=int, default=32, show_default=True),
    ):
        fn = deco(fn)
    return fn


def _method_option(fn):
    return click.option("--method", default="auto", show_default=True)(fn)


def _guard(stage: str):
    """Convert pipeline errors into stage-tagged CLI failures (exit 1)."""

    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, _PIPELINE_ERRORS + (StageError,)):
                raise click.ClickException(f"[{stage}] {exc}")
            return False

    return _Ctx()


@click.group()
def main() -> None:
    """Constructive homogenization toolkit for a partially perforated
    planar transmission problem: cell correctors, boundary-layer
    transmission constants, homogenized interface solves, two-scale
    composite approximations, and fine-scale convergence studies."""


@main.command("cell")
@_out_option
@_hole_options
@click.option("--h", "h_target", type=float, default=0.05, show_default=True)
@_method_option
def cell_cmd(out_dir, hole_kind, hole_radius, hole_segments, h_target, method):
    """Solve the periodicity-cell problems; write effective coefficients."""
    with _guard("cell"):
        hole = HoleSpec(hole_kind, hole_radius, hole_segments)
        sol = solve_cell(hole, h_target, method=method)
        payload = {
            "Ymeas": sol.area,
            "h11": sol.coeffs.h11,
            "h22": sol.coeffs.h22,
            "h12": float(sol.coeffs.h[0, 1]),
            "h21": float(sol.coeffs.h[1, 0]),
            "symmetry_residuals": check_symmetries(sol),
            "mesh_stats": _mesh_stats(sol.mesh),
        }
        _write_json(out_dir / "cell.json", payload)
    click.echo(f"wrote {out_dir / 'cell.json'}")


@main.command("layer")
@_out_option
@_hole_options
@click.option("--L-minus", "l_minus", type=int, default=8, show_default=True)
@click.option("--L-plus", "l_plus", type=int, default=8, show_default=True)
@click.option("--amplitude", type=float, default=0.0, show_default=True,
              help="Interface oscillation amplitude; 0 keeps it flat.")
@click.option("--d-minus", type=float, default=1.0, show_default=True)
@click.option("--cell-h", type=float, default=0.05, show_default=True)
@click.option("--strip-h", type=float, default=0.1, show_default=True)
@_method_option
def layer_cmd(
    out_dir,
    hole_kind,
    hole_radius,
    hole_segments,
    l_minus,
    l_plus,
    amplitude,
    d_minus,
    cell_h,
    strip_h,
    method,
):
    """Solve both strip layer problems; write transmission constants.

    Also writes ``model.json`` with the constants block the ``homogenize``
    subcommand consumes."""
    with _guard("layer"):
        hole = HoleSpec(hole_kind, hole_radius, hole_segments)
        curve = (
            InterfaceCurve("oscillating", amplitude)
            if amplitude > 0.0
            else InterfaceCurve()
        )
        cell = solve_cell(hole, cell_h, method=method)
        strip = build_strip_mesh(l_minus, l_plus, hole, curve, strip_h)
        lay1 = solve_layer(cell, strip, 1, d_minus, method=method)
        lay2 = solve_layer(cell, strip, 2, d_minus, method=method)
        J11, J22 = second_order_constants(cell, lay2)
        J1 = flat_flux_constant(cell)
        if amplitude > 0.0:
            Jtilde1 = curve_flux_constant(cell, curve) + (1.0 - d_minus)
        else:
            Jtilde1 = J1 - d_minus
        decay = {}
        farfield = {}
        for tag, lay in (("B1", lay1), ("B2", lay2)):
            est = estimate_decay(lay)
            decay[tag] = {"delta": est.delta, "r_squared": est.r_squared}
            for side in ("minus", "plus"):
                farfield[f"{tag}_{side}"] = far_residual(lay, side)
        payload = {
            "q1": lay1.q,
            "q2": lay2.q,
            "J1": J1,
            "J11": J11,
            "J22": J22,
            "Jtilde1": Jtilde1,
            "decay_rates": decay,
            "farfield_residuals": farfield,
            "truncation": {"Lminus": l_minus, "Lplus": l_plus},
        }
        _write_json(out_dir / "layer.json", payload)
        model = {
            "D_minus": d_minus,
            "Ymeas": cell.area,
            "h11": cell.coeffs.h11,
            "h22": cell.coeffs.h22,
            "q1": lay1.q,
            "J11": J11,
            "J22": J22,
        }
        _write_json(out_dir / "model.json", model)
    click.echo(f"wrote {out_dir / 'layer.json'} and {out_dir / 'model.json'}")


@main.command("homogenize")
@_out_option
@click.option(
    "--model",
    "model_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Constants JSON as written by the layer subcommand.",
)
@click.option(
    "--variant",
    type=click.Choice(list(_VARIANTS)),
    default="flat",
    show_default=True,
)
@click.option("--d", type=float, default=1.0, show_default=True)
@click.option("--left-extent", type=float, default=1.0, show_default=True)
@click.option("--macro-h", type=float, default=DEFAULT_MACRO_H, show_default=True)
@click.option("--source-rho", type=float, default=0.3, show_default=True)
@click.option("--source-amplitude", type=float, default=1.0, show_default=True)
@click.option("--amplitude", type=float, default=0.2, show_default=True,
              help="Interface oscillation amplitude (theta averaging).")
@click.option(
    "--theta-kind",
    type=click.Choice(list(_THETA_KINDS)),
    default="none",
    show_default=True,
)
@click.option("--theta-modulation", type=float, default=0.5, show_default=True)
@_method_option
def homogenize_cmd(
    out_dir,
    model_path,
    variant,
    d,
    left_extent,
    macro_h,
    source_rho,
    source_amplitude,
    amplitude,
    theta_kind,
    theta_modulation,
    method,
):
    """Solve the homogenized interface problem from a constants file.

    Writes ``v0.field`` (and ``v1.field`` for the flat variant) plus the
    interface-trace table ``traces.csv``."""
    with _guard("homogenized"):
        data = json.loads(model_path.read_text())
        theta = _theta_callable(theta_kind, theta_modulation, d)
        th_hat = None
        if theta is not None:
            curve = (
                InterfaceCurve("oscillating", amplitude)
                if variant != "flat"
                else InterfaceCurve()
            )
            th_hat = theta_hat(theta, curve, d)
        f_minus, f_plus = source_fields(d, source_rho, source_amplitude)
        model = MacroModel(
            D_minus=float(data.get("D_minus", 1.0)),
            h11=float(data["h11"]),
            h22=float(data["h22"]),
            Ymeas=float(data["Ymeas"]),
            q1=float(data.get("q1", 0.0)),
            J11=float(data.get("J11", 0.0)),
            J22=float(data.get("J22", 0.0)),
            theta=th_hat,
            f_minus=f_minus,
            f_plus=f_plus,
        )
        mesh = build_macro_mesh(d, left_extent, macro_h)
        macro = solve_v0(model, mesh, variant=variant, method=method)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "v0.field").write_text(macro.v0.dump())
        if variant == "flat":
            v1 = solve_v1_flat(macro, method=method)
            (out_dir / "v1.field").write_text(v1.dump())
        tr = macro.traces
        with open(out_dir / "traces.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x2", "v0", "dx1_v0_minus", "dx1_v0_plus", "dx2_v0"])
            for k in range(len(tr.ys)):
                writer.writerow(
                    [
                        repr(float(tr.ys[k])),
                        repr(float(tr.v0_line[k])),
                        repr(float(tr.t1_minus[k])),
                        repr(float(tr.t1[k])),
                        repr(float(tr.t2[k])),
                    ]
                )
    click.echo(f"wrote {out_dir / 'v0.field'} and {out_dir / 'traces.csv'}")


@main.command("direct")
@_out_option
@_hole_options
@click.option("--n", "n_cells", type=int, default=8, show_default=True,
              help="Cells per unit length (eps = d/N).")
@click.option("--d", type=float, default=1.0, show_default=True)
@click.option("--left-extent", type=float, default=1.0, show_default=True)
@click.option("--amplitude", type=float, default=0.0, show_default=True,
              help="Interface oscillation amplitude; 0 keeps it flat.")
@click.option("--d-minus", type=float, default=1.0, show_default=True)
@click.option("--h-cell", type=float, default=0.125, show_default=True)
@click.option("--source-rho", type=float, default=0.3, show_default=True)
@click.option("--source-amplitude", type=float, default=1.0, show_default=True)
@click.option(
    "--theta-kind",
    type=click.Choice(list(_THETA_KINDS)),
    default="none",
    show_default=True,
)
@click.option("--theta-modulation", type=float, default=0.5, show_default=True)
@_method_option
def direct_cmd(
    out_dir,
    hole_kind,
    hole_radius,
    hole_segments,
    n_cells,
    d,
    left_extent,
    amplitude,
    d_minus,
    h_cell,
    source_rho,
    source_amplitude,
    theta_kind,
    theta_modulation,
    method,
):
    """Solve the fine-scale transmission problem at one ``eps``."""
    with _guard("direct"):
        hole = HoleSpec(hole_kind, hole_radius, hole_segments)
        curve = (
            InterfaceCurve("oscillating", amplitude)
            if amplitude > 0.0
            else InterfaceCurve()
        )
        mesh = build_eps_mesh(n_cells, d, left_extent, hole, curve, h_cell)
        f_minus, f_plus = source_fields(d, source_rho, source_amplitude)
        eps = d / n_cells
        theta = _theta_callable(theta_kind, theta_modulation, d)
        theta_eps = None
        if theta is not None:
            theta_eps = lambda pts: theta(pts[:, 1], pts[:, 1] / eps)
        u = solve_fine_osc(mesh, d_minus, f_minus, f_plus, theta_eps, method)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "u.field").write_text(u.dump())
        payload = {
            "N": n_cells,
            "eps": eps,
            "galerkin_residual": float(u.galerkin_residual),
            "mesh_stats": _mesh_stats(mesh),
        }
        _write_json(out_dir / "direct.json", payload)
    click.echo(f"wrote {out_dir / 'u.field'} and {out_dir / 'direct.json'}")


@main.command("study")
@_out_option
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Flat-key JSON configuration; defaults apply when omitted.",
)
@click.option(
    "--print-defaults",
    is_flag=True,
    help="Print the default configuration as JSON and exit.",
)
def study_cmd(out_dir, config_path, print_defaults):
    """Run the full convergence study and write report + CSV artifacts."""
    if print_defaults:
        click.echo(_stable_json(StudyConfig().to_mapping()), nl=False)
        return
    with _guard("study"):
        if config_path is not None:
            config = StudyConfig.from_mapping(json.loads(config_path.read_text()))
        else:
            config = StudyConfig()
        if out_dir != Path("out"):
            config = replace(config, out=str(out_dir))
        report = run_study(config)
        report.write(Path(config.out))
        for name, fits in sorted(report.rates.items()):
            for column, entry in sorted(fits.items()):
                flags = f"  [{'; '.join(entry['flags'])}]" if entry["flags"] else ""
                click.echo(
                    f"{name} {column}: rate {entry['slope']:.3f} "
                    f"(R^2 {entry['r_squared']:.4f}){flags}"
                )
    click.echo(f"wrote {Path(config.out) / 'report.json'}")


@main.command("mesh-dump")
@_out_option
@_hole_options
@click.option(
    "--which",
    type=click.Choice(["cell", "strip", "macro", "eps"]),
    required=True,
)
@click.option("--h", "h_target", type=float, default=None,
              help="Mesh size target (kind-specific default when omitted).")
@click.option("--n", "n_cells", type=int, default=8, show_default=True)
@click.option("--d", type=float, default=1.0, show_default=True)
@click.option("--left-extent", type=float, default=1.0, show_default=True)
@click.option("--L-minus", "l_minus", type=int, default=8, show_default=True)
@click.option("--L-plus", "l_plus", type=int, default=8, show_default=True)
@click.option("--amplitude", type=float, default=0.0, show_default=True)
@click.option("--duplicate-interface", is_flag=True,
              help="Duplicate macro interface vertices (macro mesh only).")
def mesh_dump_cmd(
    out_dir,
    hole_kind,
    hole_radius,
    hole_segments,
    which,
    h_target,
    n_cells,
    d,
    left_extent,
    l_minus,
    l_plus,
    amplitude,
    duplicate_interface,
):
    """Build one of the pipeline meshes and dump it with its stats."""
    with _guard("mesh"):
        hole = HoleSpec(hole_kind, hole_radius, hole_segments)
        curve = (
            InterfaceCurve("oscillating", amplitude)
            if amplitude > 0.0
            else InterfaceCurve()
        )
        if which == "cell":
            mesh = build_cell_mesh(hole, h_target or 0.05)
        elif which == "strip":
            mesh = build_strip_mesh(l_minus, l_plus, hole, curve, h_target or 0.1)
        elif which == "macro":
            mesh = build_macro_mesh(
                d, left_extent, h_target or DEFAULT_MACRO_H, duplicate_interface
            )
        else:
            mesh = build_eps_mesh(
                n_cells, d, left_extent, hole, curve, h_target or 0.125
            )
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{which}.mesh").write_text(mesh.dump())
        _write_json(out_dir / f"{which}_stats.json", _mesh_stats(mesh))
    click.echo(f"wrote {out_dir / f'{which}.mesh'}")


if __name__ == "__main__":
    main()
