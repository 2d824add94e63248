"""Convex phantom geometry: shapes, support functions, chords, rasterization.

Shapes are immutable value objects.  Smooth convex regions are ellipses (or
circles); cornered regions are convex polygons or closed chains of ellipse
arcs and straight segments (``PiecewiseConvex``).  Chains must be oriented
counterclockwise, close up, be globally convex, and meet transversally at the
junctions (one-sided tangents at least ``ANGLE_TOL`` radians apart).

All line queries use the ``(s, phi)`` convention from :mod:`streaklab.model`:
the line is ``{x : x . theta(phi) = s}`` with ``theta = (cos phi, sin phi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .model import EnergyModel, ImageGrid, ImageSpec, Line

ANGLE_TOL = 1e-3  # transversality tolerance at corners, radians
_PARAM_TOL = 1e-9  # arc-parameter inclusion tolerance
_ARC_SAMPLES = 2048  # boundary polyline resolution per arc / full ellipse

Vec = tuple[float, float]


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.hypot(v[0], v[1]))
    if n == 0.0:
        raise ValueError("zero-length direction")
    return v / n


def _wrap_2pi(t: float) -> float:
    t = math.fmod(t, 2.0 * math.pi)
    return t + 2.0 * math.pi if t < 0.0 else t


# ---------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class Ellipse:
    """Rotated ellipse: center, semi-axes a (along the rotated x) and b."""

    cx: float
    cy: float
    a: float
    b: float
    rot: float = 0.0

    def __post_init__(self) -> None:
        if not (self.a > 0.0 and self.b > 0.0):
            raise ValueError(f"semi-axes must be positive, got a={self.a}, b={self.b}")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    def boundary_point(self, t: float | np.ndarray) -> np.ndarray:
        """Boundary param ``c + R(rot) (a cos t, b sin t)``; CCW in ``t``."""
        c, s = math.cos(self.rot), math.sin(self.rot)
        px = self.a * np.cos(t)
        py = self.b * np.sin(t)
        return np.stack([self.cx + c * px - s * py, self.cy + s * px + c * py], axis=-1)

    def tangent_dir(self, t: float) -> np.ndarray:
        c, s = math.cos(self.rot), math.sin(self.rot)
        dx = -self.a * math.sin(t)
        dy = self.b * math.cos(t)
        return _unit(np.array([c * dx - s * dy, s * dx + c * dy]))

    def normal_angle(self, t: float) -> float:
        """Angle of the outward normal at param ``t``, in [0, 2 pi)."""
        return _wrap_2pi(self.rot + math.atan2(self.a * math.sin(t), self.b * math.cos(t)))

    def param_of_normal(self, nu: float | np.ndarray) -> np.ndarray:
        """Boundary param whose outward normal points along angle ``nu``."""
        psi = np.asarray(nu) - self.rot
        return np.arctan2(self.b * np.sin(psi), self.a * np.cos(psi))


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float

    def __post_init__(self) -> None:
        if not self.r > 0.0:
            raise ValueError(f"radius must be positive, got {self.r}")

    def as_ellipse(self) -> Ellipse:
        return Ellipse(self.cx, self.cy, self.r, self.r, 0.0)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])


@dataclass(frozen=True)
class ConvexPolygon:
    """Strictly convex polygon, vertices in CCW order (validated)."""

    vertices: tuple[Vec, ...]

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("polygon needs >= 3 planar vertices")
        nxt = np.roll(v, -1, axis=0)
        prv = np.roll(v, 1, axis=0)
        e_in = v - prv
        e_out = nxt - v
        cross = e_in[:, 0] * e_out[:, 1] - e_in[:, 1] * e_out[:, 0]
        scale = float(np.abs(v).max()) + 1.0
        if np.any(cross <= (scale * 1e-12) ** 2):
            raise ValueError("vertices must be strictly convex and CCW ordered")
        object.__setattr__(self, "vertices", tuple((float(x), float(y)) for x, y in v))

    def vertex_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)


@dataclass(frozen=True)
class EllipseArc:
    """CCW arc of ``ellipse`` over param ``[t0, t1]`` with ``0 < t1 - t0 < 2 pi``."""

    ellipse: Ellipse
    t0: float
    t1: float

    def __post_init__(self) -> None:
        if not (self.t1 > self.t0 and self.t1 - self.t0 < 2.0 * math.pi):
            raise ValueError(f"bad arc interval [{self.t0}, {self.t1}]")

    def start(self) -> np.ndarray:
        return self.ellipse.boundary_point(self.t0)

    def end(self) -> np.ndarray:
        return self.ellipse.boundary_point(self.t1)

    def contains_param(self, t: float | np.ndarray, tol: float = _PARAM_TOL) -> np.ndarray:
        d = np.mod(np.asarray(t) - self.t0, 2.0 * math.pi)
        span = self.t1 - self.t0
        return (d <= span + tol) | (d >= 2.0 * math.pi - tol)


@dataclass(frozen=True)
class Segment:
    p0: Vec
    p1: Vec

    def __post_init__(self) -> None:
        if math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1]) <= 0.0:
            raise ValueError("segment endpoints coincide")

    def start(self) -> np.ndarray:
        return np.asarray(self.p0, dtype=float)

    def end(self) -> np.ndarray:
        return np.asarray(self.p1, dtype=float)

    def direction(self) -> np.ndarray:
        return _unit(self.end() - self.start())

    def length(self) -> float:
        return float(np.hypot(*(self.end() - self.start())))


Piece = EllipseArc | Segment


@dataclass(frozen=True)
class PiecewiseConvex:
    """Closed CCW chain of arcs/segments bounding a convex region.

    Validated: consecutive pieces join continuously, the chain closes, the
    total turning is ``2 pi`` (global convexity), and every junction is
    transversal (exterior angle in ``[ANGLE_TOL, pi - ANGLE_TOL]``).
    """

    pieces: tuple[Piece, ...]

    def __post_init__(self) -> None:
        ps = tuple(self.pieces)
        if len(ps) < 2:
            raise ValueError("piecewise region needs >= 2 pieces")
        scale = 0.0
        for p in ps:
            scale = max(scale, float(np.abs(p.start()).max()), float(np.abs(p.end()).max()))
        join_tol = 1e-9 * (scale + 1.0)
        turning = 0.0
        for i, p in enumerate(ps):
            q = ps[(i + 1) % len(ps)]
            gap = float(np.hypot(*(q.start() - p.end())))
            if gap > join_tol:
                raise ValueError(f"pieces {i} and {(i + 1) % len(ps)} do not join (gap {gap:.3g})")
            d_in = _piece_dir_end(p)
            d_out = _piece_dir_start(q)
            ext = math.atan2(
                d_in[0] * d_out[1] - d_in[1] * d_out[0], d_in[0] * d_out[0] + d_in[1] * d_out[1]
            )
            if not (ANGLE_TOL <= ext <= math.pi - ANGLE_TOL):
                raise ValueError(
                    f"junction {i}->{(i + 1) % len(ps)} not transversal/convex (exterior angle {ext:.4g})"
                )
            turning += ext
            if isinstance(p, EllipseArc):
                turning += _arc_turning(p)
        if abs(turning - 2.0 * math.pi) > 1e-6:
            raise ValueError(f"chain is not a convex CCW loop (total turning {turning:.6g})")
        object.__setattr__(self, "pieces", ps)


def _piece_dir_start(p: Piece) -> np.ndarray:
    if isinstance(p, Segment):
        return p.direction()
    return p.ellipse.tangent_dir(p.t0)


def _piece_dir_end(p: Piece) -> np.ndarray:
    if isinstance(p, Segment):
        return p.direction()
    return p.ellipse.tangent_dir(p.t1)


def _arc_turning(arc: EllipseArc) -> float:
    nu0 = arc.ellipse.normal_angle(arc.t0)
    nu1 = arc.ellipse.normal_angle(arc.t1)
    d = _wrap_2pi(nu1 - nu0)
    return d


Shape = Ellipse | Circle | ConvexPolygon | PiecewiseConvex


def _smooth(shape) -> Ellipse | None:
    if isinstance(shape, Circle):
        return shape.as_ellipse()
    if isinstance(shape, Ellipse):
        return shape
    return None


# convenience constructors ---------------------------------------------------


def square(cx: float, cy: float, side: float, rot: float = 0.0) -> ConvexPolygon:
    h = side / 2.0
    c, s = math.cos(rot), math.sin(rot)
    base = [(-h, -h), (h, -h), (h, h), (-h, h)]
    return ConvexPolygon(tuple((cx + c * x - s * y, cy + s * x + c * y) for x, y in base))


def half_disk(cx: float, cy: float, r: float, rot: float = 0.0) -> PiecewiseConvex:
    """Upper half-disk (flat side through the center), rotated by ``rot``."""
    circle = Ellipse(cx, cy, r, r, rot)
    arc = EllipseArc(circle, 0.0, math.pi)
    seg = Segment(tuple(arc.end()), tuple(arc.start()))
    return PiecewiseConvex((arc, seg))


# ---------------------------------------------------------------------------
# support functions


@dataclass(frozen=True)
class SupportResult:
    """Max/min of ``x . theta`` over a region, with the attaining points.

    ``plus_points``/``minus_points`` hold one point, or an edge's two
    endpoints when the extremum is attained along a straight piece (the
    matching ``*_is_edge`` flag is set).
    """

    s_plus: float
    s_minus: float
    plus_points: tuple[Vec, ...]
    minus_points: tuple[Vec, ...]
    plus_is_edge: bool = False
    minus_is_edge: bool = False


def _ellipse_support_arrays(e: Ellipse, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Support value h(phi) and tangency param t*(phi) of a full ellipse."""
    u1 = np.cos(phi - e.rot)
    u2 = np.sin(phi - e.rot)
    g = np.hypot(e.a * u1, e.b * u2)
    h = e.cx * np.cos(phi) + e.cy * np.sin(phi) + g
    tstar = np.arctan2(e.b * u2, e.a * u1)
    return h, tstar


def _poly_support_dir(v: np.ndarray, theta: np.ndarray) -> tuple[float, list[int], bool]:
    proj = v @ theta
    hi = float(proj.max())
    scale = float(np.abs(proj).max()) + 1.0
    idx = [int(i) for i in np.nonzero(proj >= hi - 1e-12 * scale)[0]]
    return hi, idx, len(idx) > 1


def _piecewise_elements(shape: PiecewiseConvex) -> list["TangentElement"]:
    out = []
    for i, p in enumerate(shape.pieces):
        if isinstance(p, EllipseArc):
            out.append(TangentElement(p.ellipse, p.t0, p.t1, piece_index=i))
    return out


def support_function(shape: Shape, phi: float) -> SupportResult:
    """Support data of the region in direction ``theta(phi)``.

    Returns the max and min of ``x . theta`` over the (closed convex) region
    together with the boundary points attaining them.
    """
    theta = np.array([math.cos(phi), math.sin(phi)])
    e = _smooth(shape)
    if e is not None:
        h, t = _ellipse_support_arrays(e, np.array([phi]))
        p_plus = e.boundary_point(float(t[0]))
        h2, t2 = _ellipse_support_arrays(e, np.array([phi + math.pi]))
        p_minus = e.boundary_point(float(t2[0]))
        return SupportResult(
            float(h[0]), -float(h2[0]), (tuple(p_plus),), (tuple(p_minus),)
        )
    if isinstance(shape, ConvexPolygon):
        v = shape.vertex_array()
        hi, idx_hi, edge_hi = _poly_support_dir(v, theta)
        lo_neg, idx_lo, edge_lo = _poly_support_dir(v, -theta)
        return SupportResult(
            hi,
            -lo_neg,
            tuple(tuple(v[i]) for i in idx_hi),
            tuple(tuple(v[i]) for i in idx_lo),
            edge_hi,
            edge_lo,
        )
    if isinstance(shape, PiecewiseConvex):
        return _piecewise_support(shape, phi, theta)
    raise TypeError(f"unsupported shape {type(shape).__name__}")


def _piecewise_support(shape: PiecewiseConvex, phi: float, theta: np.ndarray) -> SupportResult:
    def one_side(ph: float) -> tuple[float, tuple[Vec, ...], bool]:
        th = np.array([math.cos(ph), math.sin(ph)])
        best = -math.inf
        pts: list[np.ndarray] = []
        is_edge = False
        for p in shape.pieces:
            if isinstance(p, Segment):
                vals = [float(p.start() @ th), float(p.end() @ th)]
                cand = max(vals)
                cpts = [p.start() if vals[0] >= vals[1] else p.end()]
                seg_flat = abs(vals[0] - vals[1]) <= 1e-12 * (abs(cand) + 1.0)
                if seg_flat:
                    cpts = [p.start(), p.end()]
            else:
                h, t = _ellipse_support_arrays(p.ellipse, np.array([ph]))
                seg_flat = False
                if bool(p.contains_param(float(t[0]))):
                    cand = float(h[0])
                    cpts = [p.ellipse.boundary_point(float(t[0]))]
                else:
                    vals = [float(p.start() @ th), float(p.end() @ th)]
                    cand = max(vals)
                    cpts = [p.start() if vals[0] >= vals[1] else p.end()]
            tol = 1e-12 * (abs(cand) + abs(best) + 1.0)
            if cand > best + tol:
                best = cand
                pts = cpts
                is_edge = seg_flat
            elif abs(cand - best) <= tol:
                for q in cpts:
                    if all(np.hypot(*(q - r)) > 1e-9 for r in pts):
                        pts.append(q)
                is_edge = is_edge or seg_flat or len(pts) > 1
        return best, tuple(tuple(q) for q in pts), is_edge

    s_plus, plus_pts, plus_edge = one_side(phi)
    s_minus_neg, minus_pts, minus_edge = one_side(phi + math.pi)
    return SupportResult(s_plus, -s_minus_neg, plus_pts, minus_pts, plus_edge, minus_edge)


def support_plus(shape: Shape, phi: np.ndarray) -> np.ndarray:
    """Vectorized max support ``h(phi) = max_x x . theta(phi)``."""
    phi = np.asarray(phi, dtype=float)
    e = _smooth(shape)
    if e is not None:
        h, _ = _ellipse_support_arrays(e, phi)
        return h
    if isinstance(shape, ConvexPolygon):
        v = shape.vertex_array()
        theta = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        return (theta @ v.T).max(axis=-1)
    if isinstance(shape, PiecewiseConvex):
        theta = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        best = np.full(phi.shape, -np.inf)
        for p in shape.pieces:
            if isinstance(p, Segment):
                cand = np.maximum(theta @ p.start(), theta @ p.end())
            else:
                h, t = _ellipse_support_arrays(p.ellipse, phi)
                ends = np.maximum(theta @ p.start(), theta @ p.end())
                cand = np.where(p.contains_param(t), h, ends)
            best = np.maximum(best, cand)
        return best
    raise TypeError(f"unsupported shape {type(shape).__name__}")


# ---------------------------------------------------------------------------
# tangent elements (smooth boundary pieces as sinogram curves)


@dataclass(frozen=True)
class TangentElement:
    """A smooth strictly convex boundary piece: full ellipse or an arc of one.

    ``support_at(phi)`` returns the offsets of tangent lines with outward
    normal ``theta(phi)``, a validity mask (always true for a full boundary,
    restricted to the arc's normal range otherwise), and the tangency points.
    ``phi`` here runs over the full circle ``[0, 2 pi)``: each tangent line of
    the piece appears exactly once.
    """

    ellipse: Ellipse
    t0: float | None = None
    t1: float | None = None
    piece_index: int = -1

    @property
    def is_full(self) -> bool:
        return self.t0 is None

    def support_at(self, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        phi = np.asarray(phi, dtype=float)
        h, t = _ellipse_support_arrays(self.ellipse, phi)
        pts = self.ellipse.boundary_point(t)
        if self.is_full:
            valid = np.ones(phi.shape, dtype=bool)
        else:
            arc = EllipseArc(self.ellipse, self.t0, self.t1)
            valid = arc.contains_param(t)
        return h, valid, pts


def tangent_elements(shape: Shape) -> tuple[TangentElement, ...]:
    """Smooth boundary pieces of ``shape`` (empty for polygons)."""
    e = _smooth(shape)
    if e is not None:
        return (TangentElement(e),)
    if isinstance(shape, ConvexPolygon):
        return ()
    if isinstance(shape, PiecewiseConvex):
        return tuple(_piecewise_elements(shape))
    raise TypeError(f"unsupported shape {type(shape).__name__}")


# ---------------------------------------------------------------------------
# corners and straight pieces


@dataclass(frozen=True)
class Corner:
    """Boundary corner with one-sided tangent directions (unit vectors).

    ``dir_in`` is the CCW travel direction arriving at the corner, ``dir_out``
    the direction leaving it.
    """

    point: Vec
    dir_in: Vec
    dir_out: Vec


def corners(shape: Shape) -> tuple[Corner, ...]:
    if _smooth(shape) is not None:
        return ()
    if isinstance(shape, ConvexPolygon):
        v = shape.vertex_array()
        out = []
        m = len(v)
        for i in range(m):
            d_in = _unit(v[i] - v[i - 1])
            d_out = _unit(v[(i + 1) % m] - v[i])
            out.append(Corner(tuple(v[i]), tuple(d_in), tuple(d_out)))
        return tuple(out)
    if isinstance(shape, PiecewiseConvex):
        ps = shape.pieces
        out = []
        for i, p in enumerate(ps):
            q = ps[(i + 1) % len(ps)]
            out.append(
                Corner(tuple(p.end()), tuple(_piece_dir_end(p)), tuple(_piece_dir_start(q)))
            )
        return tuple(out)
    raise TypeError(f"unsupported shape {type(shape).__name__}")


def segment_pieces(shape: Shape) -> tuple[Segment, ...]:
    """Straight boundary pieces (polygon edges count)."""
    if _smooth(shape) is not None:
        return ()
    if isinstance(shape, ConvexPolygon):
        v = shape.vertex_array()
        return tuple(Segment(tuple(v[i]), tuple(v[(i + 1) % len(v)])) for i in range(len(v)))
    if isinstance(shape, PiecewiseConvex):
        return tuple(p for p in shape.pieces if isinstance(p, Segment))
    raise TypeError(f"unsupported shape {type(shape).__name__}")


# ---------------------------------------------------------------------------
# chords


def chord_lengths(shape: Shape, phi: float, s: np.ndarray) -> np.ndarray:
    """Chord of the region cut by the lines ``x . theta(phi) = s`` (vector in s)."""
    s = np.asarray(s, dtype=float)
    e = _smooth(shape)
    if e is not None:
        theta_p = phi - e.rot
        u1, u2 = math.cos(theta_p), math.sin(theta_p)
        g2 = (e.a * u1) ** 2 + (e.b * u2) ** 2
        sp = s - (e.cx * math.cos(phi) + e.cy * math.sin(phi))
        under = g2 - sp**2
        return np.where(under > 0.0, 2.0 * e.a * e.b * np.sqrt(np.maximum(under, 0.0)) / g2, 0.0)
    if isinstance(shape, ConvexPolygon):
        return _polygon_chords(shape, phi, s)
    if isinstance(shape, PiecewiseConvex):
        return _piecewise_chords(shape, phi, s)
    raise TypeError(f"unsupported shape {type(shape).__name__}")


def chord_length(shape: Shape, line: Line) -> float:
    return float(chord_lengths(shape, line.phi, np.array([line.s]))[0])


def _polygon_chords(shape: ConvexPolygon, phi: float, s: np.ndarray) -> np.ndarray:
    # Cyrus-Beck clipping of x(u) = s theta + u d against the CCW edges.
    v = shape.vertex_array()
    theta = np.array([math.cos(phi), math.sin(phi)])
    d = np.array([-theta[1], theta[0]])
    lo = np.full(s.shape, -np.inf)
    hi = np.full(s.shape, np.inf)
    feasible = np.ones(s.shape, dtype=bool)
    m = len(v)
    for i in range(m):
        edge = v[(i + 1) % m] - v[i]
        n_out = np.array([edge[1], -edge[0]])  # outward normal of a CCW edge
        ae = float(n_out @ d)
        be = float(n_out @ v[i]) - s * float(n_out @ theta)
        scale = float(np.abs(n_out).max())
        if abs(ae) <= 1e-14 * scale:
            feasible &= be >= -1e-12 * (scale + 1.0)
        elif ae > 0.0:
            hi = np.minimum(hi, be / ae)
        else:
            lo = np.maximum(lo, be / ae)
    return np.where(feasible, np.maximum(hi - lo, 0.0), 0.0)


def _piecewise_chords(shape: PiecewiseConvex, phi: float, s: np.ndarray) -> np.ndarray:
    # Collect boundary crossings along each line; convexity means the chord is
    # the span of the crossing parameters.
    theta = np.array([math.cos(phi), math.sin(phi)])
    d = np.array([-theta[1], theta[0]])
    lo = np.full(s.shape, np.inf)
    hi = np.full(s.shape, -np.inf)
    count = np.zeros(s.shape, dtype=int)

    def add(idx: np.ndarray, u: np.ndarray) -> None:
        nonlocal lo, hi, count
        lo[idx] = np.minimum(lo[idx], u)
        hi[idx] = np.maximum(hi[idx], u)
        count[idx] += 1

    for p in shape.pieces:
        if isinstance(p, Segment):
            p0, dirv = p.start(), p.end() - p.start()
            den = float(dirv @ theta)
            seg_scale = float(np.abs(dirv).max())
            if abs(den) <= 1e-14 * seg_scale:
                # line parallel to the segment: register both endpoints when
                # the line actually contains it
                dist = np.abs(s - float(p0 @ theta))
                on = dist <= 1e-12 * (np.abs(s) + seg_scale + 1.0)
                if np.any(on):
                    idx = np.nonzero(on)[0]
                    add(idx, np.full(len(idx), float(p0 @ d)))
                    add(idx, np.full(len(idx), float((p0 + dirv) @ d)))
            else:
                w = (s - float(p0 @ theta)) / den
                on = (w >= -_PARAM_TOL) & (w <= 1.0 + _PARAM_TOL)
                idx = np.nonzero(on)[0]
                if len(idx):
                    pts = p0[None, :] + w[idx, None] * dirv[None, :]
                    add(idx, pts @ d)
        else:
            e = p.ellipse
            cr, sr = math.cos(e.rot), math.sin(e.rot)
            rot_t = np.array([[cr, sr], [-sr, cr]])  # world -> ellipse frame
            q0 = rot_t @ (s[None, :] * theta[:, None] - e.center[:, None])  # (2, n)
            dp = rot_t @ d
            A = (dp[0] / e.a) ** 2 + (dp[1] / e.b) ** 2
            B = 2.0 * (q0[0] * dp[0] / e.a**2 + q0[1] * dp[1] / e.b**2)
            C = (q0[0] / e.a) ** 2 + (q0[1] / e.b) ** 2 - 1.0
            disc = B**2 - 4.0 * A * C
            ok = disc >= 0.0
            root = np.sqrt(np.maximum(disc, 0.0))
            for sign in (-1.0, 1.0):
                u = (-B + sign * root) / (2.0 * A)
                qx = (q0[0] + u * dp[0]) / e.a
                qy = (q0[1] + u * dp[1]) / e.b
                t = np.arctan2(qy, qx)
                keep = ok & p.contains_param(t, tol=1e-9)
                idx = np.nonzero(keep)[0]
                if len(idx):
                    add(idx, u[idx])
    chord = np.where(count >= 2, hi - lo, 0.0)
    return np.maximum(chord, 0.0)


# ---------------------------------------------------------------------------
# membership, area, polylines


def contains(shape: Shape, pts: np.ndarray) -> np.ndarray:
    """Closed-region membership for an (m, 2) array of points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    e = _smooth(shape)
    if e is not None:
        cr, sr = math.cos(e.rot), math.sin(e.rot)
        dx = pts[:, 0] - e.cx
        dy = pts[:, 1] - e.cy
        qx = (cr * dx + sr * dy) / e.a
        qy = (-sr * dx + cr * dy) / e.b
        return qx**2 + qy**2 <= 1.0
    if isinstance(shape, ConvexPolygon):
        v = shape.vertex_array()
        inside = np.ones(len(pts), dtype=bool)
        m = len(v)
        for i in range(m):
            edge = v[(i + 1) % m] - v[i]
            rel0 = pts[:, 0] - v[i][0]
            rel1 = pts[:, 1] - v[i][1]
            inside &= edge[0] * rel1 - edge[1] * rel0 >= -1e-12
        return inside
    if isinstance(shape, PiecewiseConvex):
        return _star_contains(shape, pts)
    raise TypeError(f"unsupported shape {type(shape).__name__}")


def _star_contains(shape: PiecewiseConvex, pts: np.ndarray) -> np.ndarray:
    # Convex region is star-shaped about any interior point: compare radii
    # against a dense boundary radius table.
    poly = boundary_polyline(shape, _ARC_SAMPLES)
    o = poly.mean(axis=0)
    rel = poly - o
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    rad = np.hypot(rel[:, 0], rel[:, 1])
    order = np.argsort(ang)
    ang = ang[order]
    rad = rad[order]
    ang = np.concatenate([ang - 2.0 * math.pi, ang, ang + 2.0 * math.pi])
    rad = np.concatenate([rad, rad, rad])
    prel = pts - o
    pang = np.arctan2(prel[:, 1], prel[:, 0])
    prad = np.hypot(prel[:, 0], prel[:, 1])
    bound = np.interp(pang, ang, rad)
    return prad <= bound


def area(shape: Shape) -> float:
    e = _smooth(shape)
    if e is not None:
        return math.pi * e.a * e.b
    if isinstance(shape, ConvexPolygon):
        v = shape.vertex_array()
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
    if isinstance(shape, PiecewiseConvex):
        total = 0.0
        for p in shape.pieces:
            if isinstance(p, Segment):
                a, b = p.start(), p.end()
                total += 0.5 * (a[0] * b[1] - a[1] * b[0])
            else:
                e = p.ellipse
                w0 = p.start() - e.center
                w1 = p.end() - e.center
                total += 0.5 * (e.a * e.b * (p.t1 - p.t0) + float(np.cross(e.center, w1 - w0)))
        return total
    raise TypeError(f"unsupported shape {type(shape).__name__}")


def boundary_polyline(shape: Shape, samples: int = _ARC_SAMPLES) -> np.ndarray:
    """CCW boundary polyline, (m, 2), junction points not duplicated.

    Straight pieces are sampled densely (never just their endpoints) so the
    polyline can stand in for the full boundary in distance queries.
    """
    e = _smooth(shape)
    if e is not None:
        t = np.linspace(0.0, 2.0 * math.pi, samples, endpoint=False)
        return e.boundary_point(t)

    def _segment_points(p0: np.ndarray, p1: np.ndarray, total: float) -> np.ndarray:
        length = float(np.hypot(*(p1 - p0)))
        k = max(2, int(round(samples * length / total)))
        t = np.linspace(0.0, 1.0, k, endpoint=False)
        return p0[None, :] + t[:, None] * (p1 - p0)[None, :]

    if isinstance(shape, ConvexPolygon):
        verts = shape.vertex_array()
        nxt = np.roll(verts, -1, axis=0)
        perim = float(np.hypot(*(nxt - verts).T).sum())
        parts = [_segment_points(a, b, perim) for a, b in zip(verts, nxt)]
        return np.concatenate(parts, axis=0)
    if isinstance(shape, PiecewiseConvex):
        seg_total = sum(
            p.length() for p in shape.pieces if isinstance(p, Segment)
        )
        parts = []
        for p in shape.pieces:
            if isinstance(p, Segment):
                parts.append(_segment_points(p.start(), p.end(), max(seg_total, p.length())))
            else:
                t = np.linspace(p.t0, p.t1, samples, endpoint=False)
                parts.append(p.ellipse.boundary_point(t))
        return np.concatenate(parts, axis=0)
    raise TypeError(f"unsupported shape {type(shape).__name__}")


def transformed(shape: Shape, rot: float = 0.0, shift: Vec = (0.0, 0.0)) -> Shape:
    """Rigid motion: rotate by ``rot`` about the origin, then translate."""
    c, s = math.cos(rot), math.sin(rot)

    def mov(p) -> tuple[float, float]:
        x, y = float(p[0]), float(p[1])
        return (c * x - s * y + shift[0], s * x + c * y + shift[1])

    if isinstance(shape, Circle):
        return Circle(*mov((shape.cx, shape.cy)), shape.r)
    if isinstance(shape, Ellipse):
        return Ellipse(*mov((shape.cx, shape.cy)), shape.a, shape.b, shape.rot + rot)
    if isinstance(shape, ConvexPolygon):
        return ConvexPolygon(tuple(mov(v) for v in shape.vertices))
    if isinstance(shape, PiecewiseConvex):
        pieces: list[Piece] = []
        for p in shape.pieces:
            if isinstance(p, Segment):
                pieces.append(Segment(mov(p.p0), mov(p.p1)))
            else:
                pieces.append(EllipseArc(transformed(p.ellipse, rot, shift), p.t0, p.t1))
        return PiecewiseConvex(tuple(pieces))
    raise TypeError(f"unsupported shape {type(shape).__name__}")


def boundary_distance(a: Shape, b: Shape) -> float:
    """Min distance between boundaries; 0 does not imply disjoint (check containment)."""
    pa = boundary_polyline(a)
    pb = boundary_polyline(b)
    tree = cKDTree(pa)
    d, _ = tree.query(pb, k=1)
    return float(d.min())


def shapes_disjoint(a: Shape, b: Shape, clearance: float = 0.0) -> bool:
    if bool(contains(a, boundary_polyline(b)[:1]).any()) or bool(
        contains(b, boundary_polyline(a)[:1]).any()
    ):
        return False
    return boundary_distance(a, b) > clearance


# ---------------------------------------------------------------------------
# phantoms


@dataclass(frozen=True)
class MetalRegion:
    shape: Shape
    value: float

    def __post_init__(self) -> None:
        if not self.value > 0.0:
            raise ValueError(f"metal attenuation must be positive, got {self.value}")


@dataclass(frozen=True)
class Phantom:
    """Background ellipse mixture plus disjoint metal regions.

    ``background`` entries are (ellipse, additive weight); the metal regions
    add their attenuation on top of the background.
    """

    background: tuple[tuple[Ellipse, float], ...] = ()
    metals: tuple[MetalRegion, ...] = ()
    energy: EnergyModel = EnergyModel()

    def __post_init__(self) -> None:
        for i, m in enumerate(self.metals):
            for j in range(i + 1, len(self.metals)):
                if not shapes_disjoint(m.shape, self.metals[j].shape):
                    raise ValueError(f"metal regions {i} and {j} are not disjoint")

    def validate(self, spec: ImageSpec) -> None:
        """Grid-dependent checks: clearance >= 2 pixels, window coverage,
        metal attenuation above the background maximum."""
        min_clear = 2.0 * spec.dx
        for i, m in enumerate(self.metals):
            for j in range(i + 1, len(self.metals)):
                d = boundary_distance(m.shape, self.metals[j].shape)
                if d < min_clear:
                    raise ValueError(
                        f"metal regions {i}/{j} closer than 2 pixels ({d:.4g} < {min_clear:.4g})"
                    )
        phis = np.linspace(0.0, 2.0 * math.pi, 256, endpoint=False)
        for i, m in enumerate(self.metals):
            reach = float(np.abs(support_plus(m.shape, phis)).max())
            if reach > spec.extent:
                raise ValueError(f"metal region {i} reaches outside the image window")
        if self.metals:
            bg = _rasterize_background(self, spec)
            bg_max = float(bg.max()) if bg.size else 0.0
            for i, m in enumerate(self.metals):
                if m.value <= bg_max:
                    raise ValueError(
                        f"metal attenuation {m.value} of region {i} does not exceed "
                        f"background maximum {bg_max:.4g}"
                    )


def _grid_points(spec: ImageSpec) -> tuple[np.ndarray, np.ndarray]:
    ax = spec.axis()
    xx, yy = np.meshgrid(ax, ax)  # yy varies along rows
    return xx, yy


def _rasterize_background(phantom: Phantom, spec: ImageSpec) -> np.ndarray:
    xx, yy = _grid_points(spec)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    f = np.zeros(len(pts))
    for e, w in phantom.background:
        f += w * contains(e, pts)
    return f.reshape(spec.n, spec.n)


def rasterize(phantom: Phantom, spec: ImageSpec) -> tuple[ImageGrid, ImageGrid]:
    """Pixel-center rasterization (no antialiasing): returns (f_e0, chi_d).

    ``f_e0`` is the background mixture plus the metal attenuations; ``chi_d``
    is the 0/1 indicator of the union of the metal regions.  Row-vectorized
    and deterministic.
    """
    xx, yy = _grid_points(spec)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    f = np.zeros(len(pts))
    chi = np.zeros(len(pts))
    for e, w in phantom.background:
        f += w * contains(e, pts)
    for m in phantom.metals:
        inside = contains(m.shape, pts)
        f += m.value * inside
        chi = np.maximum(chi, inside.astype(float))
    n = spec.n
    return (
        ImageGrid(n, spec.extent, f.reshape(n, n)),
        ImageGrid(n, spec.extent, chi.reshape(n, n)),
    )


# ---------------------------------------------------------------------------
# standard background

# Classic head phantom ellipses: (cx, cy, a, b, rot_degrees, weight).
SHEPP_LOGAN: tuple[tuple[float, float, float, float, float, float], ...] = (
    (0.0, 0.0, 0.69, 0.92, 0.0, 2.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98),
    (0.22, 0.0, 0.11, 0.31, -18.0, -0.02),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -0.02),
    (0.0, 0.35, 0.21, 0.25, 0.0, 0.01),
    (0.0, 0.1, 0.046, 0.046, 0.0, 0.01),
    (0.0, -0.1, 0.046, 0.046, 0.0, 0.01),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 0.01),
    (0.0, -0.605, 0.023, 0.023, 0.0, 0.01),
    (0.06, -0.605, 0.023, 0.046, 0.0, 0.01),
)


def shepp_logan_background(scale: float = 1.0) -> tuple[tuple[Ellipse, float], ...]:
    return tuple(
        (Ellipse(cx * scale, cy * scale, a * scale, b * scale, math.radians(deg)), w)
        for cx, cy, a, b, deg, w in SHEPP_LOGAN
    )
