"""Shared value types and file formats for the streak laboratory.

Conventions used across the package:

* A line in the plane is written ``{x : x . theta(phi) = s}`` with
  ``theta(phi) = (cos phi, sin phi)``.  The pairs ``(s, phi)`` and
  ``(-s, phi + pi)`` label the same line; the canonical representative has
  ``phi`` in ``[0, pi)``.
* Images are square grids of pixel centers on ``[-extent, extent]^2``,
  ``values[iy, ix]`` with both axes increasing (y up), cell-centered.
* Sinograms are ``values[j_phi, i_s]`` with ``phi_j = j * pi / n_phi`` on
  ``[0, pi)`` and cell-centered offsets ``s_i`` on ``[s_min, s_max]``; an odd
  ``n_s`` puts a sample exactly at ``s = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi

GRID_MAGIC = "MARGRID1"

# Default sampling: 512^2 image window, 729 offsets (odd, so s=0 is sampled)
# over the window diagonal, 720 angles on [0, pi).
DEFAULT_IMAGE_N = 512
DEFAULT_N_S = 729
DEFAULT_N_PHI = 720


# ---------------------------------------------------------------------------
# lines on the sinogram cylinder


def canonicalize_line(s: float, phi: float) -> "Line":
    """Reduce ``(s, phi)`` to the canonical representative with phi in [0, pi).

    Applies the identification ``(s, phi) ~ (-s, phi + pi)`` after wrapping
    ``phi`` modulo 2*pi.  Non-finite input raises ``ValueError``.
    """
    if not (math.isfinite(s) and math.isfinite(phi)):
        raise ValueError(f"non-finite line parameters: s={s!r}, phi={phi!r}")
    phi = math.fmod(phi, TWO_PI)
    if phi < 0.0:
        phi += TWO_PI
    if phi >= math.pi:
        phi -= math.pi
        s = -s
    # fmod can land exactly on pi from below after the += above
    if phi >= math.pi:
        phi -= math.pi
        s = -s
    return Line(s + 0.0, phi + 0.0)


@dataclass(frozen=True)
class Line:
    """Canonical line ``x . theta(phi) = s`` with ``phi`` in ``[0, pi)``."""

    s: float
    phi: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.s) and math.isfinite(self.phi)):
            raise ValueError(f"non-finite line: {self!r}")
        if not (0.0 <= self.phi < math.pi):
            raise ValueError(f"phi outside [0, pi): {self.phi!r}; use canonicalize_line")

    @property
    def theta(self) -> tuple[float, float]:
        return (math.cos(self.phi), math.sin(self.phi))

    @property
    def direction(self) -> tuple[float, float]:
        """Unit vector along the line (theta rotated by +90 degrees)."""
        return (-math.sin(self.phi), math.cos(self.phi))

    def point(self, ell: float = 0.0) -> tuple[float, float]:
        """Point on the line at arc-length coordinate ``ell`` from the foot."""
        c, sn = self.theta
        return (self.s * c - ell * sn, self.s * sn + ell * c)


def _circ_dist(a: float, b: float, period: float) -> float:
    d = math.fmod(abs(a - b), period)
    return min(d, period - d)


def line_distance(a: Line, b: Line, s_scale: float) -> float:
    """Pseudometric on lines, quotiented by ``(s, phi) ~ (-s, phi + pi)``.

    Base metric: ``max(|ds| / s_scale, circular dphi)`` on the (s, phi)
    cylinder; the quotient takes the min over the flipped representative, so
    the wraparound at phi = pi is handled.  ``s_scale > 0`` sets the offset
    unit (typically the sinogram half-range).
    """
    if s_scale <= 0.0 or not math.isfinite(s_scale):
        raise ValueError(f"s_scale must be positive, got {s_scale!r}")

    def base(sa: float, pa: float, sb: float, pb: float) -> float:
        return max(abs(sa - sb) / s_scale, _circ_dist(pa, pb, TWO_PI))

    direct = base(a.s, a.phi, b.s, b.phi)
    flipped = base(a.s, a.phi, -b.s, b.phi + math.pi)
    return min(direct, flipped)


def dedup_tolerance(ds: float, dphi: float, s_scale: float) -> float:
    """Dedup/matching tolerance: 1.5 x one working-grid cell in the metric."""
    return 1.5 * max(ds / s_scale, dphi)


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class ImageSpec:
    """Square image window: n x n pixel centers on [-extent, extent]^2."""

    n: int
    extent: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"image n must be >= 1, got {self.n}")
        if not (self.extent > 0.0 and math.isfinite(self.extent)):
            raise ValueError(f"extent must be positive, got {self.extent!r}")

    @property
    def dx(self) -> float:
        return 2.0 * self.extent / self.n

    @property
    def diag(self) -> float:
        """Half-diagonal of the window; default sinogram |s| range."""
        return math.sqrt(2.0) * self.extent

    def axis(self) -> np.ndarray:
        """Cell-center coordinates, shared by x and y."""
        return -self.extent + (np.arange(self.n) + 0.5) * self.dx


@dataclass(frozen=True)
class ImageGrid:
    n: int
    extent: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.n, self.n):
            raise ValueError(f"values shape {v.shape} != ({self.n}, {self.n})")
        if not np.all(np.isfinite(v)):
            raise ValueError("image values must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def spec(self) -> ImageSpec:
        return ImageSpec(self.n, self.extent)

    @property
    def dx(self) -> float:
        return 2.0 * self.extent / self.n

    def axis(self) -> np.ndarray:
        return self.spec.axis()

    def with_values(self, values: np.ndarray) -> "ImageGrid":
        return ImageGrid(self.n, self.extent, values)


@dataclass(frozen=True)
class SinogramGrid:
    n_s: int
    n_phi: int
    s_min: float
    s_max: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.n_s < 2 or self.n_phi < 1:
            raise ValueError(f"bad sinogram dims {self.n_phi} x {self.n_s}")
        if not (self.s_max > self.s_min):
            raise ValueError(f"bad s range [{self.s_min}, {self.s_max}]")
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.n_phi, self.n_s):
            raise ValueError(f"values shape {v.shape} != ({self.n_phi}, {self.n_s})")
        if not np.all(np.isfinite(v)):
            raise ValueError("sinogram values must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def ds(self) -> float:
        return (self.s_max - self.s_min) / self.n_s

    @property
    def dphi(self) -> float:
        return math.pi / self.n_phi

    def s_axis(self) -> np.ndarray:
        return self.s_min + (np.arange(self.n_s) + 0.5) * self.ds

    def phi_axis(self) -> np.ndarray:
        return np.arange(self.n_phi) * self.dphi

    def with_values(self, values: np.ndarray) -> "SinogramGrid":
        return SinogramGrid(self.n_s, self.n_phi, self.s_min, self.s_max, values)


# ---------------------------------------------------------------------------
# energy model and data mode (shared by beamhardening / cli)


@dataclass(frozen=True)
class EnergyModel:
    """Flat spectral window of half-width eps around e0 with linear dispersion.

    The metal attenuation grows linearly in energy with slope ``alpha``; the
    product ``alpha * eps`` is the single knob the artifact amplitude depends
    on.  ``n_terms`` is the default truncation order of the series data model.
    """

    alpha: float = 1.0
    eps: float = 0.5
    e0: float = 70.0
    n_terms: int = 4

    def __post_init__(self) -> None:
        if self.alpha <= 0.0 or self.eps <= 0.0:
            raise ValueError("alpha and eps must be positive")
        if self.n_terms < 1:
            raise ValueError("n_terms must be >= 1")

    @property
    def alpha_eps(self) -> float:
        return self.alpha * self.eps


@dataclass(frozen=True)
class DataMode:
    """Which beam-hardening map synthesizes the data: exact log or series."""

    kind: str = "exact"
    n_terms: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("exact", "series"):
            raise ValueError(f"unknown data mode {self.kind!r}")
        if self.kind == "series" and (self.n_terms is None or self.n_terms < 1):
            raise ValueError("series mode needs n_terms >= 1")

    @classmethod
    def exact(cls) -> "DataMode":
        return cls("exact")

    @classmethod
    def series(cls, n_terms: int) -> "DataMode":
        return cls("series", n_terms)

    @classmethod
    def parse(cls, text: str) -> "DataMode":
        text = text.strip()
        if text == "exact":
            return cls.exact()
        if text.startswith("series:"):
            return cls.series(int(text.split(":", 1)[1]))
        raise ValueError(f"bad data mode {text!r} (want 'exact' or 'series:N')")

    def __str__(self) -> str:
        return self.kind if self.kind == "exact" else f"series:{self.n_terms}"


# ---------------------------------------------------------------------------
# streak report


class StreakLineClass(Enum):
    BITANGENT = "bitangent"
    CORNER_CORNER = "corner-corner"
    CORNER_TANGENT = "corner-tangent"
    SEGMENT_LINE = "segment-line"
    CORNER_LIMIT_TANGENT = "corner-limit-tangent"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class StreakEntry:
    line: Line
    kind: StreakLineClass
    amplitude: float | None = None
    order: float | None = None
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class StreakReport:
    entries: tuple[StreakEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def sorted(self) -> "StreakReport":
        """Deterministic order: amplitude desc (missing last), then (s, phi)."""

        def key(e: StreakEntry):
            amp = e.amplitude if e.amplitude is not None else -math.inf
            return (-amp, e.line.s, e.line.phi)

        return StreakReport(tuple(sorted(self.entries, key=key)))


def _fmt(x: float | None) -> str:
    return "-" if x is None else repr(float(x))


def write_streak_report(path: str | Path, report: StreakReport) -> None:
    """Plain-text table, one line per streak: class, s, phi, amplitude, order, flags."""
    lines = ["# streak-report 1", "# class\ts\tphi\tamplitude\torder\tflags"]
    for e in report.sorted():
        flags = ",".join(e.flags) if e.flags else "-"
        lines.append(
            f"{e.kind.value}\t{e.line.s!r}\t{e.line.phi!r}\t{_fmt(e.amplitude)}\t{_fmt(e.order)}\t{flags}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_streak_report(path: str | Path) -> StreakReport:
    entries = []
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != "# streak-report 1":
        raise ValueError(f"{path}: not a streak report")
    for raw in lines[1:]:
        raw = raw.strip()
        if not raw or raw.startswith("#"):
            continue
        kind_s, s_s, phi_s, amp_s, ord_s, flags_s = raw.split("\t")
        entries.append(
            StreakEntry(
                line=Line(float(s_s), float(phi_s)),
                kind=StreakLineClass(kind_s),
                amplitude=None if amp_s == "-" else float(amp_s),
                order=None if ord_s == "-" else float(ord_s),
                flags=() if flags_s == "-" else tuple(flags_s.split(",")),
            )
        )
    return StreakReport(tuple(entries))


# ---------------------------------------------------------------------------
# raw float32 grid format
#
# 8-line ASCII header, then rows*cols little-endian float32, row-major.
# Axis lines record the physical ranges; image axes are cell-centered on
# [lo, hi], the sinogram phi axis is the half-open uniform grid [lo, hi).


def _header_lines(grid: ImageGrid | SinogramGrid) -> list[str]:
    if isinstance(grid, ImageGrid):
        return [
            GRID_MAGIC,
            "kind image",
            f"rows {grid.n}",
            f"cols {grid.n}",
            f"ax0 y {-grid.extent!r} {grid.extent!r} cell-centers",
            f"ax1 x {-grid.extent!r} {grid.extent!r} cell-centers",
            "dtype float32 little-endian row-major",
            "data",
        ]
    return [
        GRID_MAGIC,
        "kind sinogram",
        f"rows {grid.n_phi}",
        f"cols {grid.n_s}",
        f"ax0 phi 0.0 {math.pi!r} half-open",
        f"ax1 s {grid.s_min!r} {grid.s_max!r} cell-centers",
        "dtype float32 little-endian row-major",
        "data",
    ]


def write_grid_f32(path: str | Path, grid: ImageGrid | SinogramGrid) -> None:
    header = "\n".join(_header_lines(grid)) + "\n"
    data = np.ascontiguousarray(grid.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())


def read_grid_f32(path: str | Path) -> ImageGrid | SinogramGrid:
    with open(path, "rb") as fh:
        raw = fh.read()
    # header is exactly 8 newline-terminated ASCII lines
    pos = 0
    lines = []
    for _ in range(8):
        nl = raw.index(b"\n", pos)
        lines.append(raw[pos:nl].decode("ascii"))
        pos = nl + 1
    if lines[0] != GRID_MAGIC:
        raise ValueError(f"{path}: bad magic {lines[0]!r}")
    kind = lines[1].split()[1]
    rows = int(lines[2].split()[1])
    cols = int(lines[3].split()[1])
    values = np.frombuffer(raw[pos:], dtype="<f4", count=rows * cols)
    values = values.reshape(rows, cols).astype(np.float64)
    if kind == "image":
        extent = float(lines[5].split()[3])
        return ImageGrid(rows, extent, values)
    if kind == "sinogram":
        _, _, s_min_s, s_max_s, _ = lines[5].split()
        return SinogramGrid(cols, rows, float(s_min_s), float(s_max_s), values)
    raise ValueError(f"{path}: unknown grid kind {kind!r}")


# ---------------------------------------------------------------------------
# 16-bit PGM preview with window-normalization sidecar


def write_pgm16(path: str | Path, grid: ImageGrid | SinogramGrid) -> None:
    """Binary 16-bit PGM (big-endian samples per the format), window-normalized.

    The affine window [min, max] -> [0, 65535] is recorded in a sidecar
    ``<path>.minmax.txt`` so values can be recovered.  Image grids are written
    top row = max y; sinograms top row = phi = 0.
    """
    v = grid.values
    if isinstance(grid, ImageGrid):
        v = v[::-1, :]
    lo = float(v.min())
    hi = float(v.max())
    if hi > lo:
        q = np.round((v - lo) / (hi - lo) * 65535.0)
    else:
        q = np.zeros_like(v)
    q16 = q.astype(">u2")
    h, w = v.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q16.tobytes())
    Path(f"{path}.minmax.txt").write_text(f"min {lo!r}\nmax {hi!r}\n")
