"""Mixed-dimensional geometry: manifolds, interfaces, and the decomposition.

A polygonal domain with embedded line inclusions is decomposed into a
hierarchy of flat manifolds: junction points (d=0), inclusion pieces (d=1)
and bulk regions (d=2), coupled through codimension-one interfaces.  Each
interface records the side normal of the higher-dimensional neighbor and the
half-aperture of the physical feature.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mdelast import expressions as ex

# Merge points closer than MERGE_REL * diameter; reject anything that is
# closer than AMBIG_REL * diameter but not mergeable (no silent snapping).
MERGE_REL = 1e-12
AMBIG_REL = 1e-6


class GeometryError(ValueError):
    """Raised for inputs that do not admit a well-defined decomposition."""


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.hypot(v[0], v[1]))
    if n == 0.0:
        raise GeometryError("zero-length direction")
    return v / n


def _ccw(t: np.ndarray) -> np.ndarray:
    """90-degree counterclockwise rotation, [v1, v2] -> [-v2, v1]."""
    return np.array([-t[1], t[0]])


@dataclass(frozen=True)
class Manifold:
    """A flat manifold of the decomposition.

    ``vertices`` holds one point for d=0, the two endpoints for d=1
    (lexicographically ordered), and the region walk for d=2.  ``epsilon``
    is the square root of the cross-sectional measure (1 on the bulk).
    ``boundary_tags`` maps endpoint labels (d=1) or outer-boundary pieces
    (d=2) to their condition kind.
    """

    id: int
    dim: int
    vertices: np.ndarray
    epsilon: float
    boundary_tags: dict = field(default_factory=dict)

    @property
    def tangent(self) -> np.ndarray:
        if self.dim != 1:
            raise GeometryError("tangent defined for 1-manifolds only")
        return _unit(self.vertices[1] - self.vertices[0])

    @property
    def check_normal(self) -> np.ndarray:
        """Unit normal of a 1-manifold: ccw rotation of the tangent."""
        return _ccw(self.tangent)

    @property
    def length(self) -> float:
        if self.dim != 1:
            raise GeometryError("length defined for 1-manifolds only")
        return float(np.linalg.norm(self.vertices[1] - self.vertices[0]))

    @property
    def frame(self) -> np.ndarray:
        """Rows (tangent, check normal): maps ambient vectors to local ones."""
        return np.vstack([self.tangent, self.check_normal])

    def centroid(self) -> np.ndarray:
        if self.dim == 0:
            return self.vertices[0]
        if self.dim == 1:
            return 0.5 * (self.vertices[0] + self.vertices[1])
        return _walk_centroid(self.vertices)


@dataclass(frozen=True)
class Interface:
    """Codimension-one interface between ``lower`` and the adjacent ``upper``.

    ``normal`` is the unit vector in the tangent space of the upper manifold,
    outward with respect to it; ``gamma`` is the half-aperture carried as
    modeling metadata.
    """

    id: int
    lower: int
    upper: int
    normal: np.ndarray
    gamma: float


@dataclass
class MixedDimGeometry:
    manifolds: list[Manifold]
    interfaces: list[Interface]
    ambient_dim: int = 2
    polygon: np.ndarray | None = None
    boundary_types: list[str] | None = None
    boundary_values: list | None = None
    epsilon_max_factor: float = 1.0
    gamma_factor: float = 10.0

    def __post_init__(self):
        self.index_sets: dict[int, list[int]] = {d: [] for d in range(self.ambient_dim + 1)}
        for m in self.manifolds:
            self.index_sets[m.dim].append(m.id)
        self.J_hat: dict[int, list[int]] = {m.id: [] for m in self.manifolds}
        self.J_check: dict[int, list[int]] = {m.id: [] for m in self.manifolds}
        for itf in self.interfaces:
            self.J_hat[itf.lower].append(itf.id)
            self.J_check[itf.upper].append(itf.id)

    def manifold(self, mid: int) -> Manifold:
        return self.manifolds[mid]

    def interface(self, j: int) -> Interface:
        return self.interfaces[j]

    def manifolds_of_dim(self, d: int) -> list[Manifold]:
        return [self.manifolds[i] for i in self.index_sets.get(d, [])]

    @property
    def diameter(self) -> float:
        pts = np.vstack([m.vertices for m in self.manifolds])
        return float(
            max(
                np.linalg.norm(pts - pts[k], axis=1).max()
                for k in range(min(len(pts), 64))
            )
        ) if len(pts) else 1.0


def epsilon_max(geometry: MixedDimGeometry, i: int) -> float:
    """Largest epsilon among the adjacent higher-dimensional manifolds.

    Defined as 1 on manifolds of top dimension.
    """
    m = geometry.manifold(i)
    if m.dim == geometry.ambient_dim:
        return 1.0
    hats = geometry.J_hat[i]
    if not hats:
        raise GeometryError(
            f"manifold {i} of dimension {m.dim} has no interfaces (dangling manifold)"
        )
    return max(geometry.manifold(geometry.interface(j).upper).epsilon for j in hats)


# ----------------------------------------------------------------------------
# decomposition
# ----------------------------------------------------------------------------


def _polygon_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _walk_centroid(walk: np.ndarray) -> np.ndarray:
    a = _polygon_area(walk)
    if abs(a) < 1e-300:
        return walk.mean(axis=0)
    x, y = walk[:, 0], walk[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    cx = np.sum((x + xn) * cross) / (6.0 * a)
    cy = np.sum((y + yn) * cross) / (6.0 * a)
    return np.array([cx, cy])


def _point_in_walk(p: np.ndarray, walk: np.ndarray) -> bool:
    """Crossing-parity point-in-polygon; antenna edges cancel pairwise."""
    x, y = p
    inside = False
    n = len(walk)
    for k in range(n):
        x1, y1 = walk[k]
        x2, y2 = walk[(k + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) / (y2 - y1) * (x2 - x1)
            if xc > x:
                inside = not inside
    return inside


def _seg_point_dist(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Distance from p to segment ab and the clamped parameter in [0, 1]."""
    d = b - a
    L2 = float(d @ d)
    t = 0.0 if L2 == 0.0 else float(np.clip((p - a) @ d / L2, 0.0, 1.0))
    q = a + t * d
    return float(np.linalg.norm(p - q)), t


def _seg_seg_dist(a0, b0, a1, b1) -> float:
    d0, _ = _seg_point_dist(a1, a0, b0)
    d1, _ = _seg_point_dist(b1, a0, b0)
    d2, _ = _seg_point_dist(a0, a1, b1)
    d3, _ = _seg_point_dist(b0, a1, b1)
    best = min(d0, d1, d2, d3)
    # proper crossing: both orientation pairs straddle
    r = b0 - a0
    s = b1 - a1
    den = float(r[0] * s[1] - r[1] * s[0])
    if den != 0.0:
        t = float(((a1 - a0)[0] * s[1] - (a1 - a0)[1] * s[0]) / den)
        u = float(((a1 - a0)[0] * r[1] - (a1 - a0)[1] * r[0]) / den)
        if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
            return 0.0
    return best


def _seg_seg_intersection(a0, b0, a1, b1):
    """Intersection point of two non-parallel segments, or None."""
    r = b0 - a0
    s = b1 - a1
    den = float(r[0] * s[1] - r[1] * s[0])
    if den == 0.0:
        return None
    t = float(((a1 - a0)[0] * s[1] - (a1 - a0)[1] * s[0]) / den)
    u = float(((a1 - a0)[0] * r[1] - (a1 - a0)[1] * r[0]) / den)
    return t, u, a0 + t * r


class _PointPool:
    """Merges nearby points deterministically (first representative wins)."""

    def __init__(self, tol: float):
        self.tol = tol
        self.points: list[np.ndarray] = []

    def add(self, p: np.ndarray) -> int:
        p = np.asarray(p, dtype=float)
        for k, q in enumerate(self.points):
            if np.linalg.norm(p - q) <= self.tol:
                return k
        self.points.append(p.copy())
        return len(self.points) - 1

    def gray_zone_pairs(self, ambig: float) -> list[tuple[int, int]]:
        bad = []
        for i in range(len(self.points)):
            for j in range(i + 1, len(self.points)):
                d = float(np.linalg.norm(self.points[i] - self.points[j]))
                if self.tol < d < ambig:
                    bad.append((i, j))
        return bad


def decompose(
    bounding_polygon: Sequence[Sequence[float]],
    segments: Sequence[tuple],
    boundary_spec: Sequence[dict] | None = None,
    point_epsilon: dict | float | None = None,
) -> MixedDimGeometry:
    """Decompose a polygon with embedded segments into a manifold hierarchy.

    ``segments`` is a sequence of ``((ax, ay), (bx, by), epsilon, gamma)``.
    ``boundary_spec`` assigns each polygon edge a condition
    (``{"edge": k, "type": "displacement"|"traction", "value": ...}``);
    unspecified edges default to zero displacement.

    Junction rules: any point where a segment interior is met becomes a
    0-manifold, as does any interior point where at least three segment ends
    meet and any boundary point where at least two ends meet.  Immersed
    segment tips are tagged as zero-stress boundary.
    """
    poly = np.asarray(bounding_polygon, dtype=float)
    if poly.ndim != 2 or poly.shape[0] < 3 or poly.shape[1] != 2:
        raise GeometryError("bounding polygon must be a list of at least 3 [x, y] points")
    if _polygon_area(poly) < 0:
        poly = poly[::-1].copy()
    if abs(_polygon_area(poly)) == 0.0:
        raise GeometryError("bounding polygon is degenerate")
    nedges = len(poly)

    pts_all = np.vstack([poly] + [np.array([s[0], s[1]], dtype=float) for s in segments]) \
        if segments else poly
    diam = float(np.max(pts_all.max(axis=0) - pts_all.min(axis=0))) * math.sqrt(2.0)
    tol = MERGE_REL * diam
    ambig = AMBIG_REL * diam

    btypes = ["displacement"] * nedges
    bvalues: list = [ex.constant_vector([0.0, 0.0])] * nedges
    for entry in boundary_spec or []:
        k = int(entry["edge"])
        if not 0 <= k < nedges:
            raise GeometryError(f"boundary spec references unknown edge {k}")
        btypes[k] = entry.get("type", "displacement")
        if btypes[k] not in ("displacement", "traction"):
            raise GeometryError(f"unknown boundary type {btypes[k]!r} on edge {k}")
        val = entry.get("value", [0.0, 0.0])
        bvalues[k] = ex.parse_vector(val)

    segs = []
    for s in segments:
        a = np.asarray(s[0], dtype=float)
        b = np.asarray(s[1], dtype=float)
        eps = float(s[2])
        gam = float(s[3])
        if np.linalg.norm(b - a) <= ambig:
            raise GeometryError(f"segment {a}-{b} is degenerately short")
        if eps <= 0 or gam <= 0:
            raise GeometryError("segment epsilon and gamma must be positive")
        segs.append((a, b, eps, gam))

    _check_segments_inside(poly, segs, tol, ambig)

    # --- pairwise intersections -------------------------------------------
    pool = _PointPool(tol)
    seg_cuts: list[list[tuple[float, int]]] = [[] for _ in segs]  # (param, point id)
    end_ids = []
    for a, b, _, _ in segs:
        end_ids.append((pool.add(a), pool.add(b)))

    for i in range(len(segs)):
        for j in range(i + 1, len(segs)):
            a0, b0 = segs[i][0], segs[i][1]
            a1, b1 = segs[j][0], segs[j][1]
            r = b0 - a0
            s = b1 - a1
            den = abs(float(r[0] * s[1] - r[1] * s[0]))
            parallel = den <= tol * (np.linalg.norm(r) + np.linalg.norm(s))
            dmin = _seg_seg_dist(a0, b0, a1, b1)
            if parallel:
                if dmin <= tol:
                    # touching endpoints of collinear segments is fine;
                    # positive-length overlap is not
                    overlap = _collinear_overlap_length(a0, b0, a1, b1)
                    if overlap > tol:
                        raise GeometryError(
                            f"segments {i} and {j} overlap collinearly (length {overlap:g})"
                        )
                elif dmin < ambig:
                    raise GeometryError(
                        f"segments {i} and {j} pass ambiguously close (distance {dmin:g})"
                    )
                continue
            if dmin > tol:
                if dmin < ambig:
                    raise GeometryError(
                        f"segments {i} and {j} nearly intersect (distance {dmin:g}); "
                        "move them apart or make them intersect exactly"
                    )
                continue
            res = _seg_seg_intersection(a0, b0, a1, b1)
            if res is None:
                continue
            t, u, p = res
            pid = pool.add(p)
            Li = float(np.linalg.norm(b0 - a0))
            Lj = float(np.linalg.norm(b1 - a1))
            on_i_end = min(t * Li, (1 - t) * Li) <= tol
            on_j_end = min(u * Lj, (1 - u) * Lj) <= tol
            if not on_i_end:
                seg_cuts[i].append((t, pid))
            if not on_j_end:
                seg_cuts[j].append((u, pid))

    for bad in pool.gray_zone_pairs(ambig):
        p, q = pool.points[bad[0]], pool.points[bad[1]]
        raise GeometryError(f"points {p} and {q} are ambiguously close")

    # --- incidences and junction classification --------------------------
    interior_hits: dict[int, int] = {}
    end_hits: dict[int, int] = {}
    for i, cuts in enumerate(seg_cuts):
        for _, pid in cuts:
            interior_hits[pid] = interior_hits.get(pid, 0) + 1
    for ia, ib in end_ids:
        end_hits[ia] = end_hits.get(ia, 0) + 1
        end_hits[ib] = end_hits.get(ib, 0) + 1

    on_bdy = {}
    bdy_place = {}
    for pid, p in enumerate(pool.points):
        hit = _locate_on_polygon(poly, p, tol)
        on_bdy[pid] = hit is not None
        if hit is not None:
            bdy_place[pid] = hit

    junction_pids = set()
    for pid in range(len(pool.points)):
        ni = interior_hits.get(pid, 0)
        ne = end_hits.get(pid, 0)
        if ni >= 1 and ni + ne >= 2:
            junction_pids.add(pid)
        elif not on_bdy[pid] and ne >= 3:
            junction_pids.add(pid)
        elif on_bdy[pid] and ne >= 2:
            junction_pids.add(pid)

    # --- split segments into pieces ---------------------------------------
    pieces = []  # (a, b, eps, gamma, end_pid_a, end_pid_b, parent)
    for i, (a, b, eps, gam) in enumerate(segs):
        L = float(np.linalg.norm(b - a))
        cuts = sorted(set(seg_cuts[i]))
        params = [0.0] + [t for t, _ in cuts] + [1.0]
        pids = [end_ids[i][0]] + [pid for _, pid in cuts] + [end_ids[i][1]]
        for k in range(len(params) - 1):
            pa = pool.points[pids[k]]
            pb = pool.points[pids[k + 1]]
            if np.linalg.norm(pb - pa) <= tol:
                continue
            pieces.append((pa, pb, eps, gam, pids[k], pids[k + 1], i))

    # gray-zone proximity of junction points to unrelated pieces
    for pid, p in enumerate(pool.points):
        for (pa, pb, *_rest, ea, eb, _par) in [
            (q[0], q[1], q[4], q[5], q[6]) for q in pieces
        ]:
            if pid in (ea, eb):
                continue
            d, _ = _seg_point_dist(p, pa, pb)
            if tol < d < ambig:
                raise GeometryError(
                    f"point {p} lies ambiguously close to a segment (distance {d:g})"
                )

    # --- planar graph and face extraction ---------------------------------
    node_of_pid: dict[int, int] = {}
    nodes: list[np.ndarray] = []

    def node(pid: int) -> int:
        if pid not in node_of_pid:
            node_of_pid[pid] = len(nodes)
            nodes.append(pool.points[pid])
        return node_of_pid[pid]

    # polygon boundary nodes: corners plus boundary-touching segment ends
    corner_nid = []
    for k in range(nedges):
        corner_nid.append(node(pool.add(poly[k])))
    bdy_nodes_on_edge: dict[int, list[tuple[float, int]]] = {k: [] for k in range(nedges)}
    for pid, hit in bdy_place.items():
        k, tpar = hit
        nid = node(pid)
        if nid not in (corner_nid[k], corner_nid[(k + 1) % nedges]):
            bdy_nodes_on_edge[k].append((tpar, nid))

    graph_edges = []  # (n1, n2, kind, payload)
    for k in range(nedges):
        chain = [(0.0, corner_nid[k])] + sorted(bdy_nodes_on_edge[k]) + [
            (1.0, corner_nid[(k + 1) % nedges])
        ]
        for m in range(len(chain) - 1):
            graph_edges.append((chain[m][1], chain[m + 1][1], "boundary", k))
    piece_edge_idx = []
    for q, (pa, pb, eps, gam, ea, eb, par) in enumerate(pieces):
        piece_edge_idx.append(len(graph_edges))
        graph_edges.append((node(ea), node(eb), "piece", q))

    faces, face_of_halfedge = _extract_faces(nodes, graph_edges)
    area_tol = tol * max(diam, 1.0)
    region_faces = [f for f in faces if f["area"] > area_tol]
    if not region_faces:
        raise GeometryError("decomposition produced no bulk region")
    negative = [f for f in faces if f["area"] < -area_tol]
    if len(negative) > 1:
        raise GeometryError(
            "inclusion segments form a detached loop enclosing a hole; "
            "such geometries are not supported"
        )

    # components not reachable from the boundary: reject inclusion loops,
    # assign tree components to the containing region face
    comp_face = _assign_isolated(nodes, graph_edges, faces, region_faces, area_tol)

    # --- assemble manifolds ------------------------------------------------
    raw = []  # (dim, centroid, payload)
    for f in region_faces:
        walk_pts = np.array([nodes[n] for n in f["walk"]])
        tags = _region_boundary_tags(f, graph_edges, nodes, btypes)
        raw.append((2, _walk_centroid(walk_pts), {
            "vertices": walk_pts, "epsilon": 1.0, "tags": tags, "face": f,
        }))

    piece_info = []
    for q, (pa, pb, eps, gam, ea, eb, par) in enumerate(pieces):
        a, b = (pa, pb) if tuple(pa) <= tuple(pb) else (pb, pa)
        tags = {}
        for label, pid in (("a", ea), ("b", eb)):
            pnt = pool.points[pid]
            key = label if tuple(pa) <= tuple(pb) else ("b" if label == "a" else "a")
            if pid in junction_pids:
                tags[key] = "interface"
            elif on_bdy[pid]:
                btype, bedge = _endpoint_boundary_type(
                    poly, btypes, bdy_place[pid], pnt, tol
                )
                tags[key] = btype
                tags[key + "_edge"] = bedge
            else:
                tags[key] = "tip"
        raw.append((1, 0.5 * (a + b), {
            "vertices": np.array([a, b]), "epsilon": eps, "gamma": gam,
            "tags": tags, "piece": q, "end_pids": (ea, eb),
        }))
        piece_info.append((q, ea, eb, gam))

    incident_gamma: dict[int, list[float]] = {}
    for q, ea, eb, gam in piece_info:
        for pid in (ea, eb):
            if pid in junction_pids:
                incident_gamma.setdefault(pid, []).append(gam)
    for pid in sorted(junction_pids):
        if point_epsilon is None:
            eps_pt = max(incident_gamma.get(pid, [1.0]))
        elif isinstance(point_epsilon, dict):
            eps_pt = float(point_epsilon.get(pid, max(incident_gamma.get(pid, [1.0]))))
        else:
            eps_pt = float(point_epsilon)
        raw.append((0, pool.points[pid], {
            "vertices": pool.points[pid][None, :], "epsilon": eps_pt, "pid": pid,
        }))

    order = sorted(range(len(raw)), key=lambda k: (raw[k][0], raw[k][1][0], raw[k][1][1]))
    manifolds = []
    face_to_mid = {}
    piece_to_mid = {}
    pid_to_mid = {}
    for new_id, k in enumerate(order):
        dim, _, payload = raw[k]
        manifolds.append(Manifold(
            id=new_id, dim=dim, vertices=payload["vertices"],
            epsilon=payload["epsilon"], boundary_tags=payload.get("tags", {}),
        ))
        if dim == 2:
            face_to_mid[id(payload["face"])] = new_id
        elif dim == 1:
            piece_to_mid[payload["piece"]] = new_id
        else:
            pid_to_mid[payload["pid"]] = new_id

    # --- interfaces ---------------------------------------------------------
    proto = []
    for q, (pa, pb, eps, gam, ea, eb, par) in enumerate(pieces):
        mid = piece_to_mid[q]
        man = manifolds[mid]
        t = man.tangent
        nh = man.check_normal
        eidx = piece_edge_idx[q]
        # halfedge (ea -> eb) has the +check-normal side on its left when the
        # stored direction agrees with the manifold tangent
        fwd_is_tangent = float((pb - pa) @ t) > 0
        f_left = face_of_halfedge.get((eidx, 0))
        f_right = face_of_halfedge.get((eidx, 1))
        if not fwd_is_tangent:
            f_left, f_right = f_right, f_left
        for fc, normal in ((f_left, -nh), (f_right, nh)):
            up_face = _resolve_face(fc, comp_face, region_faces)
            proto.append((mid, face_to_mid[id(up_face)], normal, gam))
        for label, pid in (("start", ea), ("end", eb)):
            if pid in junction_pids:
                pnt = pool.points[pid]
                outward = _unit(pnt - man.centroid())
                proto.append((pid_to_mid[pid], mid, outward, gam))

    proto.sort(key=lambda e: (e[0], e[1], math.atan2(e[2][1], e[2][0])))
    interfaces = [
        Interface(id=j, lower=lo, upper=up, normal=np.asarray(nrm, dtype=float), gamma=g)
        for j, (lo, up, nrm, g) in enumerate(proto)
    ]

    return MixedDimGeometry(
        manifolds=manifolds, interfaces=interfaces, ambient_dim=2,
        polygon=poly, boundary_types=btypes, boundary_values=bvalues,
    )


def _collinear_overlap_length(a0, b0, a1, b1) -> float:
    d = _unit(b0 - a0)
    s = sorted([float((a0 - a0) @ d), float((b0 - a0) @ d)])
    t = sorted([float((a1 - a0) @ d), float((b1 - a0) @ d)])
    return max(0.0, min(s[1], t[1]) - max(s[0], t[0]))


def _check_segments_inside(poly, segs, tol, ambig):
    nedges = len(poly)
    for i, (a, b, _, _) in enumerate(segs):
        for p, what in ((a, "endpoint"), (b, "endpoint")):
            if not (_point_in_walk(p, poly) or _locate_on_polygon(poly, p, tol)):
                raise GeometryError(f"segment {i} {what} {p} lies outside the polygon")
        for k in range(nedges):
            pa, pb = poly[k], poly[(k + 1) % nedges]
            ov = 0.0
            r = b - a
            s = pb - pa
            den = abs(float(r[0] * s[1] - r[1] * s[0]))
            if den <= tol * (np.linalg.norm(r) + np.linalg.norm(s)):
                if _seg_seg_dist(a, b, pa, pb) <= tol:
                    ov = _collinear_overlap_length(a, b, pa, pb)
            if ov > tol:
                raise GeometryError(
                    f"segment {i} runs tangent along polygon edge {k}"
                )
        # interior samples must not sit on the boundary
        for tpar in (0.25, 0.5, 0.75):
            p = a + tpar * (b - a)
            if _locate_on_polygon(poly, p, tol):
                raise GeometryError(
                    f"segment {i} touches the polygon boundary at interior point {p}"
                )


def _locate_on_polygon(poly, p, tol):
    """Return (edge index, parameter) if p lies on the polygon boundary."""
    nedges = len(poly)
    for k in range(nedges):
        a, b = poly[k], poly[(k + 1) % nedges]
        d, t = _seg_point_dist(p, a, b)
        if d <= tol:
            return k, t
    return None


def _endpoint_boundary_type(poly, btypes, place, pnt, tol) -> tuple[str, int]:
    k, t = place
    L = float(np.linalg.norm(poly[(k + 1) % len(poly)] - poly[k]))
    at_corner = min(t * L, (1 - t) * L) <= tol
    if at_corner:
        kk = (k + 1) % len(poly) if t > 0.5 else k
        prev = (kk - 1) % len(poly)
        if btypes[kk] != btypes[prev]:
            raise GeometryError(
                f"segment endpoint {pnt} sits on a polygon corner with mixed "
                "boundary conditions"
            )
        return btypes[kk], kk
    return btypes[k], k


def _extract_faces(nodes, graph_edges):
    """Trace all faces of the planar subdivision via angular half-edge walks."""
    out: dict[int, list[tuple[float, int, int]]] = {}
    for eidx, (n1, n2, _, _) in enumerate(graph_edges):
        v1 = np.asarray(nodes[n2]) - np.asarray(nodes[n1])
        out.setdefault(n1, []).append((math.atan2(v1[1], v1[0]), eidx, 0))
        out.setdefault(n2, []).append((math.atan2(-v1[1], -v1[0]), eidx, 1))
    for n in out:
        out[n].sort()

    def he_target(eidx, d):
        n1, n2, _, _ = graph_edges[eidx]
        return n2 if d == 0 else n1

    def he_source(eidx, d):
        n1, n2, _, _ = graph_edges[eidx]
        return n1 if d == 0 else n2

    faces = []
    face_of_halfedge = {}
    for eidx0 in range(len(graph_edges)):
        for d0 in (0, 1):
            if (eidx0, d0) in face_of_halfedge:
                continue
            walk_nodes = []
            walk_hes = []
            he = (eidx0, d0)
            while he not in face_of_halfedge:
                face_of_halfedge[he] = None
                walk_hes.append(he)
                walk_nodes.append(he_source(*he))
                v = he_target(*he)
                rev = (he[0], 1 - he[1])
                lst = out[v]
                pos = next(k for k, (_, e, dd) in enumerate(lst) if (e, dd) == rev)
                _, e_next, d_next = lst[(pos - 1) % len(lst)]
                he = (e_next, d_next)
            pts = np.array([nodes[n] for n in walk_nodes])
            face = {"walk": walk_nodes, "hes": walk_hes, "area": _polygon_area(pts)}
            faces.append(face)
            for h in walk_hes:
                face_of_halfedge[h] = face
    return faces, face_of_halfedge


def _assign_isolated(nodes, graph_edges, faces, region_faces, area_tol):
    """Map zero-area component walks (isolated inclusion trees) to regions."""
    comp_face = {}
    for f in faces:
        if abs(f["area"]) > area_tol:
            continue
        kinds = {graph_edges[e][2] for e, _ in f["hes"]}
        if "boundary" in kinds:
            continue
        nedges_walk = len({e for e, _ in f["hes"]})
        nnodes_walk = len(set(f["walk"]))
        if nedges_walk >= nnodes_walk:
            raise GeometryError(
                "inclusion segments form a detached loop; holes are not supported"
            )
        rep = np.asarray(nodes[f["walk"][0]], dtype=float)
        mid = None
        e0 = f["hes"][0][0]
        n1, n2, _, _ = graph_edges[e0]
        rep = 0.5 * (np.asarray(nodes[n1]) + np.asarray(nodes[n2]))
        for rf in region_faces:
            walk_pts = np.array([nodes[n] for n in rf["walk"]])
            if _point_in_walk(rep, walk_pts):
                mid = rf
                break
        if mid is None:
            raise GeometryError("isolated inclusion lies outside every bulk region")
        comp_face[id(f)] = mid
    return comp_face


def _resolve_face(face, comp_face, region_faces):
    if face is None:
        raise GeometryError("internal error: piece side has no face")
    if face["area"] > 0 and any(face is rf for rf in region_faces):
        return face
    if id(face) in comp_face:
        return comp_face[id(face)]
    raise GeometryError("piece side resolves to the unbounded face; segment outside?")


def _region_boundary_tags(face, graph_edges, nodes, btypes):
    tags = {"displacement": [], "traction": []}
    for eidx, _d in face["hes"]:
        n1, n2, kind, payload = graph_edges[eidx]
        if kind != "boundary":
            continue
        tags[btypes[payload]].append(
            (np.asarray(nodes[n1], dtype=float), np.asarray(nodes[n2], dtype=float), payload)
        )
    return tags


# ----------------------------------------------------------------------------
# validation
# ----------------------------------------------------------------------------


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.is_valid

    def __iter__(self):
        return iter(self.violations)

    def __len__(self):
        return len(self.violations)


def validate(geometry: MixedDimGeometry) -> ValidationReport:
    """Check all structural invariants; violations are data, not exceptions."""
    rep = ValidationReport()
    n = geometry.ambient_dim
    for m in geometry.manifolds:
        if m.epsilon <= 0:
            rep.violations.append(f"manifold {m.id}: epsilon must be positive")
        if m.dim == n and abs(m.epsilon - 1.0) > 1e-12:
            rep.violations.append(
                f"manifold {m.id}: top-dimensional manifolds must have epsilon = 1"
            )
        if m.dim == n and geometry.J_hat[m.id]:
            rep.violations.append(
                f"manifold {m.id}: top-dimensional manifold cannot be an interface carrier"
            )
        if m.dim == n:
            disp = m.boundary_tags.get("displacement", [])
            if not disp:
                rep.violations.append(
                    f"manifold {m.id}: no displacement boundary"
                )
    for itf in geometry.interfaces:
        lo = geometry.manifold(itf.lower)
        up = geometry.manifold(itf.upper)
        if up.dim != lo.dim + 1:
            rep.violations.append(
                f"interface {itf.id}: dim(upper) - dim(lower) must be 1"
            )
        if abs(np.linalg.norm(itf.normal) - 1.0) > 1e-12:
            rep.violations.append(f"interface {itf.id}: normal is not unit length")
        if up.dim == 2 and lo.dim == 1:
            if abs(float(itf.normal @ lo.tangent)) > 1e-12:
                rep.violations.append(
                    f"interface {itf.id}: normal is not perpendicular to the segment"
                )
    for m in geometry.manifolds:
        if m.dim == n:
            continue
        try:
            emax = epsilon_max(geometry, m.id)
        except GeometryError as err:
            rep.violations.append(str(err))
            continue
        if m.epsilon > geometry.epsilon_max_factor * emax * (1 + 1e-12):
            rep.violations.append(
                f"manifold {m.id}: epsilon {m.epsilon:g} exceeds "
                f"{geometry.epsilon_max_factor:g} * epsilon_max {emax:g}"
            )
    # mutual disjointness: inclusion pieces may touch only at shared endpoints
    diam = geometry.diameter
    tol = MERGE_REL * diam
    segs1 = geometry.manifolds_of_dim(1)
    for a_idx in range(len(segs1)):
        for b_idx in range(a_idx + 1, len(segs1)):
            ma, mb = segs1[a_idx], segs1[b_idx]
            d = _seg_seg_dist(ma.vertices[0], ma.vertices[1],
                              mb.vertices[0], mb.vertices[1])
            if d > tol:
                continue
            shared = any(
                np.linalg.norm(pa - pb) <= tol
                for pa in ma.vertices for pb in mb.vertices
            )
            if not shared:
                rep.violations.append(
                    f"manifolds {ma.id} and {mb.id} intersect away from "
                    "shared endpoints"
                )
    # aperture consistency: eps_i^2 ~ gamma^(n - d_i), warn beyond the factor
    for itf in geometry.interfaces:
        lo = geometry.manifold(itf.lower)
        expo = n - lo.dim
        target = itf.gamma ** expo
        ratio = lo.epsilon ** 2 / target
        fac = geometry.gamma_factor
        if ratio > fac or ratio < 1.0 / fac:
            rep.warnings.append(
                f"interface {itf.id}: epsilon^2 = {lo.epsilon ** 2:g} deviates from "
                f"gamma^{expo} = {target:g} beyond factor {fac:g}"
            )
    return rep


# ----------------------------------------------------------------------------
# geometry file input
# ----------------------------------------------------------------------------


def load_geometry(path: str) -> MixedDimGeometry:
    """Read the JSON geometry file and decompose it.

    Keys: ``ambient_dim``, ``bounding_polygon``, ``segments``
    (``{"a": [x,y], "b": [x,y], "epsilon": e, "gamma": g}``) and ``boundary``
    (``{"edge": k, "type": ..., "value": ...}``).
    """
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if int(data.get("ambient_dim", 2)) != 2:
        raise GeometryError("only ambient_dim = 2 geometries can be decomposed")
    segs = [
        (s["a"], s["b"], s["epsilon"], s["gamma"]) for s in data.get("segments", [])
    ]
    return decompose(
        data["bounding_polygon"], segs, data.get("boundary"),
    )
