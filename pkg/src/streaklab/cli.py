"""Experiment pipelines and the ``streaklab`` command-line entry point.

Runs every laboratory experiment end to end from a plain-text config file:
polychromatic reconstruction and its artifact part, single mismatch-series
terms, the pre-filtered variants, streak-line prediction, measurement, and
the brute-force scan.  Given the same config the command writes
byte-identical files on every run; the one exception is ``timings.txt``,
which records wall-clock stage times and is exempt from that guarantee.

Config file grammar (versioned by a mandatory ``format = 1`` line)
-------------------------------------------------------------------
One ``key = value`` pair per line, ``#`` starts a comment, no sections.
Required keys: ``format``, ``phantom`` (path, resolved relative to the
config file), ``select``, and ``out`` (unless given by ``--out``).
Optional keys with defaults: ``grid`` (512), ``extent`` (4.0), ``offsets``
(729), ``angles`` (720), ``mode`` (``exact`` | ``series:N`` | ``series``,
the last using the phantom energy model's term count), ``filter_k`` and
``filter_alpha`` (presence of ``filter_k`` enables the symbol pre-filter),
``seed`` (20260819), ``top_m`` (8).  Selectors: ``predict``, ``fct``,
``fma``, ``fma1``, ``term:N``, ``filtered``, ``scan``.  Command-line flags
override file values.

Phantom file grammar (versioned by a mandatory ``format = 1`` line)
--------------------------------------------------------------------
``key = value`` lines grouped under ``[energy]``, ``[background]``, and one
``[metal]`` section per region:

* ``[energy]``: ``alpha``, ``eps``, ``e0``, ``n_terms`` — the flat spectral
  window (defaults 1.0, 0.5, 70.0, 4).
* ``[background]``: repeatable ``ellipse = cx cy a b rot_deg weight`` rows
  and/or ``preset = shepp-logan``.
* ``[metal]``: ``value = attenuation`` plus one
  ``shape = circle cx cy r`` | ``ellipse cx cy a b rot_deg`` |
  ``polygon x1 y1 x2 y2 ...`` (counterclockwise vertices) |
  ``halfdisk cx cy r rot_deg`` (flat side along the diameter at angle
  ``rot_deg``).

Angles are degrees in the files, radians in the API.

Outputs
-------
``run.log`` (all parameters, derived constants, tolerances — deterministic),
``timings.txt`` (stage wall times), ``report.txt`` (the streak table for
selectors that produce one), ``scan_hits.txt`` (raw scan table for
``scan``), and the grids as ``.f32`` files with ``.pgm`` previews.

Exit status: 0 on success, 2 on a config parse failure (message carries
``path:line:column``), 3 on a numeric failure (message names the stage).
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from . import beamhardening, geometry, specfilter, streaks, xray
from .model import (
    DEFAULT_IMAGE_N,
    DEFAULT_N_PHI,
    DEFAULT_N_S,
    DataMode,
    EnergyModel,
    ImageGrid,
    ImageSpec,
    Line,
    StreakEntry,
    StreakReport,
    dedup_tolerance,
    write_grid_f32,
    write_pgm16,
    write_streak_report,
)
from .specfilter import FilterSpec
from .xray import ProjectorSpec

CONFIG_FORMAT = 1
PHANTOM_FORMAT = 1

DEFAULT_EXTENT = 4.0
DEFAULT_SEED = 20260819
DEFAULT_TOP_M = 8

# Selector names accepted by the `select` key (term:N carries a parameter).
SELECTORS = ("predict", "fct", "fma", "fma1", "term", "filtered", "scan")

# Minimum clearance (scene units, in multiples of the pixel pitch) between
# an order-profile anchor and the nearest metal boundary; closer anchors sit
# inside the boundary's own ringing and measure it instead of the streak.
ORDER_ANCHOR_CLEAR_PX = 24.0


class ConfigError(Exception):
    """Config or phantom file rejected; carries path, line, and column."""

    def __init__(self, path: str | Path, line: int, col: int, msg: str):
        super().__init__(f"{path}:{line}:{col}: {msg}")
        self.path = str(path)
        self.line = line
        self.col = col
        self.msg = msg


# ---------------------------------------------------------------------------
# key/value file parsing


@dataclass(frozen=True)
class _Row:
    line: int
    col: int
    section: str  # "" outside any section
    key: str
    value: str
    value_col: int


def _parse_kv_file(path: Path) -> list[_Row]:
    """Syntax pass shared by config and phantom files.

    Accepts blank lines, ``#`` comments, ``[section]`` headers, and
    ``key = value`` pairs; anything else raises :class:`ConfigError` with
    the line and the column of the offending character.
    """
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(path, 0, 0, f"cannot read file: {exc}") from exc
    rows: list[_Row] = []
    section = ""
    for ln, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        start = len(body) - len(body.lstrip()) + 1
        stripped = body.strip()
        if stripped.startswith("["):
            if not stripped.endswith("]") or len(stripped) < 3:
                raise ConfigError(path, ln, start, f"malformed section header {stripped!r}")
            section = stripped[1:-1].strip()
            continue
        if "=" not in stripped:
            raise ConfigError(path, ln, start, f"expected 'key = value', got {stripped!r}")
        key_part, value_part = body.split("=", 1)
        key = key_part.strip()
        if not key:
            raise ConfigError(path, ln, start, "missing key before '='")
        value = value_part.strip()
        if not value:
            raise ConfigError(path, ln, len(body.split("=", 1)[0]) + 2, f"missing value for key {key!r}")
        value_col = len(key_part) + 2 + (len(value_part) - len(value_part.lstrip()))
        rows.append(_Row(ln, start, section, key, value, value_col))
    return rows


def _to_float(row: _Row, path: Path) -> float:
    try:
        return float(row.value)
    except ValueError:
        raise ConfigError(path, row.line, row.value_col, f"key {row.key!r} needs a number, got {row.value!r}") from None


def _to_int(row: _Row, path: Path) -> int:
    try:
        return int(row.value)
    except ValueError:
        raise ConfigError(path, row.line, row.value_col, f"key {row.key!r} needs an integer, got {row.value!r}") from None


def _to_floats(row: _Row, path: Path, count: int | None = None) -> list[float]:
    parts = row.value.split()
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(path, row.line, row.value_col, f"key {row.key!r} needs numbers, got {row.value!r}") from None
    if count is not None and len(vals) != count:
        raise ConfigError(
            path, row.line, row.value_col, f"key {row.key!r} needs {count} numbers, got {len(vals)}"
        )
    return vals


# ---------------------------------------------------------------------------
# phantom files


def _halfdisk(cx: float, cy: float, r: float, rot: float) -> geometry.PiecewiseConvex:
    """Half-disk region: circular arc plus the closing diameter at angle rot."""
    arc = geometry.EllipseArc(geometry.Ellipse(cx, cy, r, r, 0.0), rot, rot + math.pi)
    flat = geometry.Segment(tuple(arc.end()), tuple(arc.start()))
    return geometry.PiecewiseConvex((arc, flat))


def _parse_shape(row: _Row, path: Path) -> geometry.Shape:
    parts = row.value.split()
    kind, args = parts[0], parts[1:]

    def floats(n: int) -> list[float]:
        if len(args) != n:
            raise ConfigError(
                path, row.line, row.value_col, f"shape {kind!r} needs {n} numbers, got {len(args)}"
            )
        try:
            return [float(a) for a in args]
        except ValueError:
            raise ConfigError(path, row.line, row.value_col, f"shape {kind!r} got a non-number") from None

    try:
        if kind == "circle":
            cx, cy, r = floats(3)
            return geometry.Circle(cx, cy, r)
        if kind == "ellipse":
            cx, cy, a, b, rot = floats(5)
            return geometry.Ellipse(cx, cy, a, b, math.radians(rot))
        if kind == "polygon":
            if len(args) < 6 or len(args) % 2:
                raise ConfigError(
                    path, row.line, row.value_col, "shape 'polygon' needs >= 3 x y vertex pairs"
                )
            try:
                xy = [float(a) for a in args]
            except ValueError:
                raise ConfigError(path, row.line, row.value_col, "shape 'polygon' got a non-number") from None
            verts = tuple((xy[i], xy[i + 1]) for i in range(0, len(xy), 2))
            return geometry.ConvexPolygon(verts)
        if kind == "halfdisk":
            cx, cy, r, rot = floats(4)
            return _halfdisk(cx, cy, r, math.radians(rot))
    except ValueError as exc:  # shape constructor rejected the geometry
        raise ConfigError(path, row.line, row.value_col, f"bad {kind} shape: {exc}") from None
    raise ConfigError(path, row.line, row.value_col, f"unknown shape kind {kind!r}")


_ENERGY_KEYS = {"alpha", "eps", "e0", "n_terms"}
_BACKGROUND_KEYS = {"ellipse", "preset"}
_METAL_KEYS = {"shape", "value"}


def parse_phantom_file(path: str | Path) -> geometry.Phantom:
    """Parse the phantom description grammar documented in the module docstring."""
    path = Path(path)
    rows = _parse_kv_file(path)
    energy_kw: dict[str, float | int] = {}
    background: list[tuple[geometry.Ellipse, float]] = []
    metals: list[geometry.MetalRegion] = []
    fmt_seen = False
    metal_rows: dict[int, dict[str, _Row]] = {}
    metal_index = -1
    last_section = ""
    for row in rows:
        if row.section == "" and row.key == "format":
            if _to_int(row, path) != PHANTOM_FORMAT:
                raise ConfigError(
                    path, row.line, row.value_col, f"unsupported phantom format {row.value!r} (this build reads {PHANTOM_FORMAT})"
                )
            fmt_seen = True
            continue
        if row.section == "energy":
            if row.key not in _ENERGY_KEYS:
                raise ConfigError(path, row.line, row.col, f"unknown key {row.key!r} in [energy]")
            energy_kw[row.key] = _to_int(row, path) if row.key == "n_terms" else _to_float(row, path)
        elif row.section == "background":
            if row.key == "ellipse":
                cx, cy, a, b, rot, w = _to_floats(row, path, 6)
                try:
                    background.append((geometry.Ellipse(cx, cy, a, b, math.radians(rot)), w))
                except ValueError as exc:
                    raise ConfigError(path, row.line, row.value_col, f"bad ellipse: {exc}") from None
            elif row.key == "preset":
                if row.value != "shepp-logan":
                    raise ConfigError(path, row.line, row.value_col, f"unknown background preset {row.value!r}")
                for cx, cy, a, b, rot, w in geometry.SHEPP_LOGAN:
                    background.append((geometry.Ellipse(cx, cy, a, b, math.radians(rot)), w))
            else:
                raise ConfigError(path, row.line, row.col, f"unknown key {row.key!r} in [background]")
        elif row.section == "metal":
            if row.key not in _METAL_KEYS:
                raise ConfigError(path, row.line, row.col, f"unknown key {row.key!r} in [metal]")
            if row.section != last_section or row.key in metal_rows.get(metal_index, {}):
                metal_index += 1
            metal_rows.setdefault(metal_index, {})[row.key] = row
        elif row.section == "":
            raise ConfigError(path, row.line, row.col, f"unknown key {row.key!r} outside any section")
        else:
            raise ConfigError(path, row.line, row.col, f"unknown section [{row.section}]")
        last_section = row.section
    if not fmt_seen:
        raise ConfigError(path, 0, 0, "missing 'format' line")
    for idx in sorted(metal_rows):
        group = metal_rows[idx]
        for need in ("shape", "value"):
            if need not in group:
                any_row = next(iter(group.values()))
                raise ConfigError(path, any_row.line, any_row.col, f"[metal] section is missing key {need!r}")
        shape = _parse_shape(group["shape"], path)
        value = _to_float(group["value"], path)
        try:
            metals.append(geometry.MetalRegion(shape, value))
        except ValueError as exc:
            raise ConfigError(path, group["value"].line, group["value"].value_col, str(exc)) from None
    try:
        energy = EnergyModel(**energy_kw)  # type: ignore[arg-type]
        return geometry.Phantom(background=tuple(background), metals=tuple(metals), energy=energy)
    except ValueError as exc:
        raise ConfigError(path, 0, 0, f"inconsistent phantom: {exc}") from None


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run description (files loaded, flags folded in)."""

    phantom_path: Path
    phantom: geometry.Phantom
    select: str
    term_n: int | None
    image: ImageSpec
    proj: ProjectorSpec
    mode: DataMode
    fspec: FilterSpec | None
    out: Path
    seed: int
    top_m: int


_CONFIG_KEYS = {
    "format",
    "phantom",
    "select",
    "out",
    "grid",
    "extent",
    "offsets",
    "angles",
    "mode",
    "filter_k",
    "filter_alpha",
    "seed",
    "top_m",
}


def _parse_select(text: str, path: Path, row: _Row | None) -> tuple[str, int | None]:
    line = row.line if row else 0
    col = row.value_col if row else 0
    name = text.strip()
    if name.startswith("term"):
        rest = name[4:]
        if rest.startswith(":"):
            rest = rest[1:]
        elif rest.startswith("(") and rest.endswith(")"):
            rest = rest[1:-1]
        elif rest == "":
            raise ConfigError(path, line, col, "selector 'term' needs a power, e.g. term:2")
        else:
            raise ConfigError(path, line, col, f"unknown selector {name!r}")
        try:
            n = int(rest)
        except ValueError:
            raise ConfigError(path, line, col, f"selector 'term' needs an integer power, got {rest!r}") from None
        if n < 1:
            raise ConfigError(path, line, col, f"selector 'term' needs a power >= 1, got {n}")
        return "term", n
    if name not in SELECTORS or name == "term":
        raise ConfigError(path, line, col, f"unknown selector {name!r}")
    return name, 1 if name == "fma1" else None


def parse_run_config(path: str | Path, overrides: dict[str, str] | None = None) -> RunConfig:
    """Load a config file and fold in command-line overrides.

    ``overrides`` maps config keys to raw string values; they are parsed by
    the same converters as file values, with errors reported at line 0
    (the command line).
    """
    path = Path(path)
    rows = {row.key: row for row in _iter_config_rows(path)}
    values: dict[str, str] = {k: r.value for k, r in rows.items()}
    for key, val in (overrides or {}).items():
        values[key] = val
        rows.pop(key, None)  # errors in overrides point at the command line

    def row_of(key: str) -> _Row | None:
        return rows.get(key)

    def need(key: str) -> str:
        if key not in values:
            raise ConfigError(path, 0, 0, f"missing key {key!r}")
        return values[key]

    def get_float(key: str, default: float) -> float:
        if key not in values:
            return default
        row = row_of(key)
        if row is not None:
            return _to_float(row, path)
        try:
            return float(values[key])
        except ValueError:
            raise ConfigError(path, 0, 0, f"key {key!r} needs a number, got {values[key]!r}") from None

    def get_int(key: str, default: int) -> int:
        if key not in values:
            return default
        row = row_of(key)
        if row is not None:
            return _to_int(row, path)
        try:
            return int(values[key])
        except ValueError:
            raise ConfigError(path, 0, 0, f"key {key!r} needs an integer, got {values[key]!r}") from None

    fmt_row = row_of("format")
    if "format" not in values:
        raise ConfigError(path, 0, 0, "missing 'format' line")
    if get_int("format", CONFIG_FORMAT) != CONFIG_FORMAT:
        line = fmt_row.line if fmt_row else 0
        col = fmt_row.value_col if fmt_row else 0
        raise ConfigError(path, line, col, f"unsupported config format {values['format']!r} (this build reads {CONFIG_FORMAT})")

    phantom_text = need("phantom")
    phantom_path = (path.parent / phantom_text).resolve()
    if not phantom_path.is_file():
        row = row_of("phantom")
        raise ConfigError(
            path, row.line if row else 0, row.value_col if row else 0, f"phantom file {str(phantom_path)!r} does not exist"
        )
    phantom = parse_phantom_file(phantom_path)

    select, term_n = _parse_select(need("select"), path, row_of("select"))

    n = get_int("grid", DEFAULT_IMAGE_N)
    extent = get_float("extent", DEFAULT_EXTENT)
    n_s = get_int("offsets", DEFAULT_N_S)
    n_phi = get_int("angles", DEFAULT_N_PHI)
    try:
        image = ImageSpec(n, extent)
        proj = ProjectorSpec.default(extent, n_s=n_s, n_phi=n_phi)
    except ValueError as exc:
        raise ConfigError(path, 0, 0, f"bad grid sizes: {exc}") from None

    mode_text = values.get("mode", "exact")
    if mode_text == "series":
        mode = DataMode.series(phantom.energy.n_terms)
    else:
        try:
            mode = DataMode.parse(mode_text)
        except ValueError as exc:
            row = row_of("mode")
            raise ConfigError(path, row.line if row else 0, row.value_col if row else 0, str(exc)) from None

    fspec = None
    if "filter_k" in values:
        try:
            fspec = FilterSpec(alpha_k=get_float("filter_alpha", 1.3), k=get_float("filter_k", 0.0))
        except ValueError as exc:
            row = row_of("filter_k")
            raise ConfigError(path, row.line if row else 0, row.value_col if row else 0, str(exc)) from None
    elif "filter_alpha" in values:
        row = row_of("filter_alpha")
        raise ConfigError(
            path, row.line if row else 0, row.col if row else 0, "key 'filter_alpha' needs 'filter_k' to enable the filter"
        )

    if select == "filtered" and fspec is None:
        row = row_of("select")
        raise ConfigError(
            path,
            row.line if row else 0,
            row.col if row else 0,
            "selector 'filtered' needs 'filter_k' (and optionally 'filter_alpha')",
        )
    out = Path(need("out"))
    seed = get_int("seed", DEFAULT_SEED)
    top_m = get_int("top_m", DEFAULT_TOP_M)
    if top_m < 1:
        raise ConfigError(path, 0, 0, f"key 'top_m' must be >= 1, got {top_m}")
    return RunConfig(
        phantom_path=phantom_path,
        phantom=phantom,
        select=select,
        term_n=term_n,
        image=image,
        proj=proj,
        mode=mode,
        fspec=fspec,
        out=out,
        seed=seed,
        top_m=top_m,
    )


def _iter_config_rows(path: Path) -> Iterator[_Row]:
    for row in _parse_kv_file(path):
        if row.section:
            raise ConfigError(path, row.line, row.col, f"unknown section [{row.section}] in a run config")
        if row.key not in _CONFIG_KEYS:
            raise ConfigError(path, row.line, row.col, f"unknown key {row.key!r}")
        yield row


# ---------------------------------------------------------------------------
# pipeline operations


def reconstruct_fct(
    phantom: geometry.Phantom,
    proj: ProjectorSpec,
    image: ImageSpec,
    mode: DataMode | None = None,
    projector: str = "analytic",
) -> tuple[ImageGrid, ImageGrid]:
    """Polychromatic reconstruction split into (f_ct, f_ma).

    ``f_ct`` is the FBP of the measured data P and decomposes as
    ``fbp(R f_e0) + f_ma`` exactly (FBP is linear); ``f_ma`` is the FBP of
    the beam-hardening mismatch ``P - R f_e0`` alone.  ``projector``
    selects analytic closed-form projections (default) or the raster
    Joseph projector applied to the rasterized phantom (the variant
    comparable with the filtered pipeline at k = 0).
    """
    if projector == "analytic":
        data = beamhardening.synthesize_data(phantom, proj, mode)
        p, rf_e0 = data.p, data.rf_e0
    elif projector == "raster":
        p, rf_e0 = _raster_data(phantom, proj, image, mode)
    else:
        raise ValueError(f"unknown projector {projector!r} (want 'analytic' or 'raster')")
    f_ct = xray.fbp(p, image)
    f_ma = xray.fbp(p.with_values(p.values - rf_e0.values), image)
    return f_ct, f_ma


def _mismatch(t: np.ndarray, mode: DataMode | None) -> np.ndarray:
    """Pointwise beam-hardening mismatch; even in t, so |t| folds the
    slightly negative metal-sinogram samples raster/filter routes produce."""
    mode = mode or DataMode.exact()
    t = np.abs(t)
    if mode.kind == "exact":
        return np.asarray(beamhardening.pma_exact(t))
    return np.asarray(beamhardening.pma_series(t, mode.n_terms))


def _raster_data(
    phantom: geometry.Phantom,
    proj: ProjectorSpec,
    image: ImageSpec,
    mode: DataMode | None,
):
    f_e0, chi_d = geometry.rasterize(phantom, image)
    rf_e0 = xray.radon_raster(f_e0, proj)
    rchi_d = xray.radon_raster(chi_d, proj)
    mis = _mismatch(phantom.energy.alpha_eps * rchi_d.values, mode)
    return rf_e0.with_values(rf_e0.values + mis), rf_e0


def fma_term(
    phantom: geometry.Phantom,
    proj: ProjectorSpec,
    image: ImageSpec,
    n: int,
    c: float | None = None,
) -> ImageGrid:
    """FBP of the n-th pointwise power of the metal sinogram, scaled by c.

    With ``c`` omitted, n = 2 uses the leading mismatch coefficient
    ``-(alpha eps)^2 / 3!`` (the quadratic term that drives the streaks);
    every other power defaults to a unit coefficient, i.e. the bare
    ``fbp((R chi_D)^n)`` panel.  Combined with
    :func:`streaklab.beamhardening.series_coefficients` the terms rebuild
    ``fbp`` of the full truncated mismatch exactly (FBP is linear).
    """
    if n < 1:
        raise ValueError(f"term power must be >= 1, got {n}")
    if c is None:
        c = -phantom.energy.alpha_eps**2 / 6.0 if n == 2 else 1.0
    metal_shapes = [(m.shape, 1.0) for m in phantom.metals]
    rchi_d = xray.radon_analytic(metal_shapes, proj)
    powered = rchi_d.with_values(c * rchi_d.values**n)
    return xray.fbp(powered, image)


def filtered_reconstruct(
    phantom: geometry.Phantom,
    proj: ProjectorSpec,
    image: ImageSpec,
    mode: DataMode | None,
    fspec: FilterSpec,
) -> tuple[ImageGrid, ImageGrid]:
    """Reconstruction from data synthesized with the symbol pre-filter.

    The filter acts on the rasterized medium and metal indicator before
    projection (they are no longer indicator/ellipse functions afterwards,
    so the raster projector is the only route); the mismatch map is applied
    to the filtered metal sinogram; the reconstruction inverts the filter
    after FBP.  Returns (filtered f_ct, filtered f_ma) where the artifact
    part is the difference against the medium-only filtered reconstruction.
    """
    f_e0, chi_d = geometry.rasterize(phantom, image)
    kf_e0 = specfilter.apply_symbol_filter(f_e0, fspec)
    kchi_d = specfilter.apply_symbol_filter(chi_d, fspec)
    rkf_e0 = xray.radon_raster(kf_e0, proj)
    rkchi_d = xray.radon_raster(kchi_d, proj)
    mis = _mismatch(phantom.energy.alpha_eps * rkchi_d.values, mode)
    p_f = rkf_e0.with_values(rkf_e0.values + mis)
    ft_ct = specfilter.inverse_symbol_filter(xray.fbp(p_f, image), fspec)
    base = specfilter.inverse_symbol_filter(xray.fbp(rkf_e0, image), fspec)
    ft_ma = ft_ct.with_values(ft_ct.values - base.values)
    return ft_ct, ft_ma


# ---------------------------------------------------------------------------
# measurement plumbing shared by the measuring selectors


def scene_reach(phantom: geometry.Phantom) -> float:
    """Largest |s| of any metal tangent line (the scene's sinogram reach)."""
    phis = np.linspace(0.0, 2.0 * math.pi, 512, endpoint=False)
    reach = 0.0
    for m in phantom.metals:
        reach = max(reach, float(np.abs(geometry.support_plus(m.shape, phis)).max()))
    return reach


def order_anchor(
    phantom: geometry.Phantom,
    image: ImageSpec,
    line: Line,
    exclusion: np.ndarray | None = None,
) -> tuple[float, float] | None:
    """Deterministic order-profile anchor on a predicted line.

    A line streaks because of its contact points with the metal boundaries
    (tangency feet, corners, segment spans), and the conormal profile is
    strongest between them, so the anchor starts at the midpoint of the
    contact span and walks outward in 8-pixel steps (positive direction
    first) until the full perpendicular profile clears the window, the
    exclusion band, and :data:`ORDER_ANCHOR_CLEAR_PX` pixels of boundary
    clearance.  Lines without boundary contact anchor at the mid-window
    chord point.  None when no candidate qualifies — everywhere on the line
    the profile would read the boundary's own singularity.
    """
    margin = (streaks.ORDER_SAMPLES / 2.0 + 2.0) * image.dx
    lim = image.extent - margin
    if lim <= 0.0:
        return None
    c, s = math.cos(line.phi), math.sin(line.phi)
    normal = np.array([c, s])
    tangent = np.array([-s, c])

    polys = [geometry.boundary_polyline(m.shape, 2048) for m in phantom.metals]
    allb = np.concatenate(polys, axis=0)
    on_line = np.abs(allb @ normal - line.s) <= 1.5 * image.dx
    if on_line.any():
        contact_ells = allb[on_line] @ tangent
        ell0 = 0.5 * (float(contact_ells.min()) + float(contact_ells.max()))
    else:
        ell0 = 0.0

    clear_lim = ORDER_ANCHOR_CLEAR_PX * image.dx
    offs = (np.arange(streaks.ORDER_SAMPLES) - (streaks.ORDER_SAMPLES - 1) / 2.0)
    offs = offs * image.dx
    half_span = math.sqrt(2.0) * image.extent
    step = 8.0 * image.dx
    n_steps = int(half_span / step) + 1

    def qualifies(ell: float) -> tuple[float, float] | None:
        p = line.s * normal + ell * tangent
        if abs(p[0]) > lim or abs(p[1]) > lim:
            return None
        prof = p[None, :] + offs[:, None] * normal[None, :]
        if np.any(np.abs(prof) > image.extent - image.dx):
            return None
        if exclusion is not None:
            ij = np.rint((prof - image.axis()[0]) / image.dx).astype(int)
            ij = np.clip(ij, 0, image.n - 1)
            if exclusion[ij[:, 1], ij[:, 0]].any():
                return None
        d = min(
            float(np.linalg.norm(p[None, :] - poly, axis=1).min()) for poly in polys
        )
        if d < clear_lim:
            return None
        return float(p[0]), float(p[1])

    for k in range(n_steps):
        for sign in (1.0, -1.0):
            if k == 0 and sign < 0:
                continue
            hit = qualifies(ell0 + sign * k * step)
            if hit is not None:
                return hit
    return None


def measured_report(
    img: ImageGrid,
    phantom: geometry.Phantom,
    predictions: StreakReport,
    exclusion: np.ndarray | None = None,
) -> StreakReport:
    """Annotate predicted lines with measured amplitude and empirical order."""
    if exclusion is None:
        exclusion = streaks.exclusion_mask(phantom, img.spec)
    entries = []
    for e in predictions:
        flags = list(e.flags)
        amp = streaks.measure_streak(img, e.line, exclusion)
        amplitude = None if math.isnan(amp) else amp
        if amplitude is None:
            flags.append("not-measurable")
        order = None
        anchor = order_anchor(phantom, img.spec, e.line, exclusion)
        if anchor is not None:
            slope = streaks.estimate_order(img, e.line, anchor, exclusion)
            order = None if math.isnan(slope) else slope
        if order is None:
            flags.append("order-unavailable")
        entries.append(StreakEntry(e.line, e.kind, amplitude, order, tuple(flags)))
    return StreakReport(tuple(entries)).sorted()


# ---------------------------------------------------------------------------
# the run itself


class _StageClock:
    """Stage timing/naming helper: remembers which stage a failure was in."""

    def __init__(self) -> None:
        self.rows: list[tuple[str, float]] = []
        self.current = "setup"

    def run(self, name: str, fn: Callable[[], object]) -> object:
        self.current = name
        t0 = time.perf_counter()
        out = fn()
        self.rows.append((name, time.perf_counter() - t0))
        return out


def _log_lines(config: RunConfig) -> list[str]:
    """Deterministic run.log body: parameters, derived constants, tolerances."""
    ph = config.phantom
    s_scale = max(abs(config.proj.s_min), abs(config.proj.s_max))
    lines = [
        f"config-format = {CONFIG_FORMAT}",
        f"phantom = {config.phantom_path.name}",
        f"select = {config.select}" + (f":{config.term_n}" if config.select == "term" else ""),
        f"grid = {config.image.n}",
        f"extent = {config.image.extent!r}",
        f"offsets = {config.proj.n_s}",
        f"angles = {config.proj.n_phi}",
        f"mode = {config.mode}",
        f"seed = {config.seed}",
        f"top_m = {config.top_m}",
        f"metals = {len(ph.metals)}",
        f"background-ellipses = {len(ph.background)}",
        f"energy.alpha = {ph.energy.alpha!r}",
        f"energy.eps = {ph.energy.eps!r}",
        f"energy.e0 = {ph.energy.e0!r}",
        f"energy.n_terms = {ph.energy.n_terms}",
        f"alpha-eps = {ph.energy.alpha_eps!r}",
        f"pixel-pitch = {config.image.dx!r}",
        f"offset-pitch = {config.proj.ds!r}",
        f"angle-pitch = {config.proj.dphi!r}",
        f"scene-reach = {scene_reach(ph)!r}",
        f"tube-half-width-px = {streaks.TUBE_HALF_WIDTH_PX!r}",
        f"annulus-px = {streaks.ANNULUS_PX[0]!r}..{streaks.ANNULUS_PX[1]!r}",
        f"exclusion-dilation-px = {streaks.EXCLUSION_DILATION_PX}",
        f"min-tube-bins = {streaks.MIN_TUBE_BINS}",
        f"dedup-tolerance = {dedup_tolerance(config.proj.ds, config.proj.dphi, s_scale)!r}",
        f"scan-suppression-radius = {streaks.scan_suppression_radius(config.proj, config.image.dx)!r}",
        f"near-boundary-margin-px = {streaks.NEAR_BOUNDARY_MARGIN_PX!r}",
        f"s-scale = {s_scale!r}",
    ]
    if config.fspec is not None:
        xi_max = math.sqrt(2.0) * math.pi / config.image.dx
        lines += [
            f"filter.k = {config.fspec.k!r}",
            f"filter.alpha = {config.fspec.alpha_k!r}",
            f"filter.dc-gain = {config.fspec.dc_gain()!r}",
            f"filter.inverse-bound = {config.fspec.inverse_bound(xi_max)!r}",
        ]
    else:
        lines.append("filter = none")
    return lines


def _write_grid(out: Path, name: str, grid, preview: bool = True) -> None:
    write_grid_f32(out / f"{name}.f32", grid)
    if preview:
        write_pgm16(out / f"{name}.pgm", grid)


def run(config: RunConfig) -> int:
    """Execute the selected experiment; returns the process exit status."""
    clock = _StageClock()
    log_extra: list[str] = []
    try:
        config.out.mkdir(parents=True, exist_ok=True)
        clock.run("validate", lambda: config.phantom.validate(config.image))
        ph, proj, image = config.phantom, config.proj, config.image
        predictions = clock.run("predict", lambda: streaks.predict_streaks(ph))

        if config.select == "predict":
            clock.run("report", lambda: write_streak_report(config.out / "report.txt", predictions.sorted()))
        elif config.select == "fct":
            data = clock.run("synthesize", lambda: beamhardening.synthesize_data(ph, proj, config.mode))
            f_ct = clock.run("reconstruct", lambda: xray.fbp(data.p, image))
            f_ma = xray.fbp(data.p.with_values(data.p.values - data.rf_e0.values), image)
            clock.run(
                "write",
                lambda: [
                    _write_grid(config.out, "p", data.p, preview=False),
                    _write_grid(config.out, "rf_e0", data.rf_e0, preview=False),
                    _write_grid(config.out, "f_ct", f_ct),
                    _write_grid(config.out, "f_ma", f_ma),
                ],
            )
        elif config.select in ("fma", "fma1", "term", "filtered", "scan"):
            if config.select in ("fma1", "term"):
                img = clock.run("reconstruct", lambda: fma_term(ph, proj, image, config.term_n))
                name = f"term{config.term_n}"
            elif config.select == "filtered" or (config.select == "scan" and config.fspec is not None):
                if config.fspec is None:
                    raise ValueError("selector 'filtered' needs filter_k in the config")
                pair = clock.run(
                    "reconstruct", lambda: filtered_reconstruct(ph, proj, image, config.mode, config.fspec)
                )
                ft_ct, img = pair
                _write_grid(config.out, "ft_ct", ft_ct)
                name = "ft_ma"
            else:
                pair = clock.run(
                    "reconstruct", lambda: reconstruct_fct(ph, proj, image, config.mode)
                )
                img = pair[1]
                name = "f_ma"
            excl = streaks.exclusion_mask(ph, image)
            report = clock.run("measure", lambda: measured_report(img, ph, predictions, excl))
            pred_lines = [e.line for e in predictions]
            floor = clock.run(
                "noise-floor",
                lambda: streaks.noise_floor(img, excl, pred_lines, scene_reach(ph), seed=config.seed),
            )
            log_extra.append(f"noise-floor = {floor!r}")
            if config.select == "scan":
                hits = clock.run("scan", lambda: streaks.brute_force_streak_scan(img, excl, config.top_m, proj))
                matched, near, extra = streaks.classify_scan_hits(
                    hits,
                    pred_lines,
                    ph,
                    proj,
                    boundary_margin=streaks.NEAR_BOUNDARY_MARGIN_PX * image.dx,
                )
                rows = ["# streaklab scan hits, format 1", "# tag s phi amplitude floor-ratio"]
                for tag, group in (("matched", matched), ("near-boundary", near), ("extra", extra)):
                    for ln, amp in group:
                        ratio = amp / floor if floor and floor > 0.0 else math.inf
                        rows.append(f"{tag} {ln.s!r} {ln.phi!r} {amp!r} {ratio!r}")
                (config.out / "scan_hits.txt").write_text("\n".join(rows) + "\n")
            clock.run(
                "write",
                lambda: [
                    _write_grid(config.out, name, img),
                    write_streak_report(config.out / "report.txt", report),
                ],
            )
        else:  # pragma: no cover - parse_run_config rejects unknown selectors
            raise ValueError(f"unknown selector {config.select!r}")
    except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure in stage {clock.current}: {exc}", file=sys.stderr)
        return 3

    (config.out / "run.log").write_text("\n".join(_log_lines(config) + log_extra) + "\n")
    timing = [f"{name} {dt:.3f}s" for name, dt in clock.rows]
    (config.out / "timings.txt").write_text("\n".join(timing) + "\n")
    return 0


# ---------------------------------------------------------------------------
# command line


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streaklab",
        description="Beam-hardening streak laboratory: run one experiment from a config file.",
    )
    parser.add_argument("--config", required=True, help="run config file (grammar in the package docs)")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--select", help="experiment selector (overrides the config)")
    parser.add_argument("--filter-k", type=float, dest="filter_k", help="symbol filter order k <= 0")
    parser.add_argument("--filter-alpha", type=float, dest="filter_alpha", help="symbol filter constant")
    parser.add_argument("--grid", type=int, help="image grid size n")
    parser.add_argument("--angles", type=int, help="number of projection angles")
    parser.add_argument("--offsets", type=int, help="number of offset samples")
    parser.add_argument("--mode", help="data mode: exact | series | series:N")
    parser.add_argument("--seed", type=int, help="seed for randomized measurements")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {
        key: str(val)
        for key, val in {
            "out": args.out,
            "select": args.select,
            "filter_k": args.filter_k,
            "filter_alpha": args.filter_alpha,
            "grid": args.grid,
            "angles": args.angles,
            "offsets": args.offsets,
            "mode": args.mode,
            "seed": args.seed,
        }.items()
        if val is not None
    }
    try:
        config = parse_run_config(args.config, overrides)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    return run(config)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
