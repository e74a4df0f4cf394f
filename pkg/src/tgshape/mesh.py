"""Colored surface extraction from occupancy fields, plus PLY export.

The 256-entry case table is constructed programmatically at import time:
for every corner sign pattern the surface's intersection polygons are traced
across the cube's faces and fan-triangulated. Ambiguous faces (diagonal
inside corners) always keep the inside corners separated, a fixed rule that
both neighboring cells agree on, so the extracted surface is watertight.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

CORNER_OFFSETS = np.array([[(i >> a) & 1 for a in range(3)] for i in range(8)])

# edge list: for each axis, the four cube edges along it (lower corner, upper corner)
EDGES: list[tuple[int, int]] = []
for _axis in range(3):
    for _c in range(8):
        if not (_c >> _axis) & 1:
            EDGES.append((_c, _c | (1 << _axis)))
EDGE_AXIS = [a for a in range(3) for _ in range(4)]

# faces: (axis, side) with the four corners on that side
FACES = [(a, s, [c for c in range(8) if ((c >> a) & 1) == s])
         for a in range(3) for s in range(2)]


def _face_edges(corners: list[int]) -> list[int]:
    out = []
    for e, (c0, c1) in enumerate(EDGES):
        if c0 in corners and c1 in corners:
            out.append(e)
    return out


def _face_segments(mask: int, corners: list[int]) -> list[tuple[int, int]]:
    """Surface segments crossing one face, inside corners kept separated."""
    inside = [c for c in corners if (mask >> c) & 1]
    crossed = [e for e in _face_edges(corners)
               if ((mask >> EDGES[e][0]) & 1) != ((mask >> EDGES[e][1]) & 1)]
    if len(crossed) == 2:
        return [(crossed[0], crossed[1])]
    if len(crossed) == 4:
        segs = []
        for c in inside:
            pair = [e for e in crossed if c in EDGES[e]]
            segs.append((pair[0], pair[1]))
        return segs
    return []


def _trace_cycles(segments: list[tuple[int, int]]) -> list[list[int]]:
    adj: dict[int, list[int]] = {}
    for a, b in segments:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    seen: set[int] = set()
    cycles = []
    for start in sorted(adj):
        if start in seen:
            continue
        cycle = [start]
        seen.add(start)
        prev, cur = None, start
        while True:
            nxt = [n for n in adj[cur] if n != prev]
            step = nxt[0] if nxt else prev
            if step == start:
                break
            cycle.append(step)
            seen.add(step)
            prev, cur = cur, step
        cycles.append(cycle)
    return cycles


def _edge_midpoint(e: int) -> np.ndarray:
    c0, c1 = EDGES[e]
    return (CORNER_OFFSETS[c0] + CORNER_OFFSETS[c1]) / 2.0


def _orient(cycle: list[int], mask: int) -> list[int]:
    """Wind the polygon so its normal points from inside toward outside."""
    pts = [_edge_midpoint(e) for e in cycle]
    normal = np.zeros(3)
    for i in range(len(pts)):
        a, b = pts[i], pts[(i + 1) % len(pts)]
        normal += np.cross(a, b)
    outward = np.zeros(3)
    for e in cycle:
        c0, c1 = EDGES[e]
        if (mask >> c0) & 1:
            outward += CORNER_OFFSETS[c1] - CORNER_OFFSETS[c0]
        else:
            outward += CORNER_OFFSETS[c0] - CORNER_OFFSETS[c1]
    if float(normal @ outward) < 0.0:
        return list(reversed(cycle))
    return cycle


def _build_case_table() -> list[list[tuple[int, int, int]]]:
    table = []
    for mask in range(256):
        segments = []
        for _, _, corners in FACES:
            segments.extend(_face_segments(mask, corners))
        tris: list[tuple[int, int, int]] = []
        for cycle in _trace_cycles(segments):
            cycle = _orient(cycle, mask)
            for i in range(1, len(cycle) - 1):
                tris.append((cycle[0], cycle[i], cycle[i + 1]))
        table.append(tris)
    return table


CASE_TABLE = _build_case_table()


@dataclass
class ColoredMesh:
    vertices: np.ndarray  # (V, 3) float64 world coordinates
    colors: np.ndarray    # (V, 3) uint8
    faces: np.ndarray     # (F, 3) int64

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])

    def euler_characteristic(self) -> int:
        if self.n_faces == 0:
            return 0
        edges = set()
        for a, b, c in self.faces:
            for u, v in ((a, b), (b, c), (c, a)):
                edges.add((min(u, v), max(u, v)))
        return self.n_vertices - len(edges) + self.n_faces


def marching_cubes(fieldvals: np.ndarray, iso: float = 0.5,
                   color_fn: Callable[[np.ndarray], np.ndarray] | None = None
                   ) -> ColoredMesh:
    """Extract the iso-surface of a field sampled at cell centers.

    fieldvals is an (r, r, r) array indexed [x, y, z] over [-0.5, 0.5]^3 cell
    centers. Vertices interpolate linearly along sign-changing lattice edges;
    colors come from color_fn queried at the vertex positions (white default).
    """
    if fieldvals.ndim != 3 or len(set(fieldvals.shape)) != 1:
        raise ValueError("field must be a cubic 3-d array")
    if not 0.0 < iso < 1.0:
        raise ValueError("iso must lie in (0, 1)")
    r = fieldvals.shape[0]
    inside = fieldvals > iso

    def center(idx: np.ndarray) -> np.ndarray:
        return (idx + 0.5) / r - 0.5

    vert_ids: dict[tuple[int, int, int, int], int] = {}
    positions: list[np.ndarray] = []
    tris: list[tuple[int, int, int]] = []

    xs, ys, zs = np.nonzero(
        inside[:-1, :-1, :-1] | inside[1:, :-1, :-1] | inside[:-1, 1:, :-1]
        | inside[:-1, :-1, 1:] | inside[1:, 1:, :-1] | inside[1:, :-1, 1:]
        | inside[:-1, 1:, 1:] | inside[1:, 1:, 1:])
    for i, j, k in zip(xs, ys, zs):
        mask = 0
        for c in range(8):
            dx, dy, dz = CORNER_OFFSETS[c]
            if inside[i + dx, j + dy, k + dz]:
                mask |= 1 << c
        if mask == 0 or mask == 255:
            continue
        cell = np.array([i, j, k])

        def vertex_for(e: int) -> int:
            c0, _ = EDGES[e]
            axis = EDGE_AXIS[e]
            low = cell + CORNER_OFFSETS[c0]
            key = (int(low[0]), int(low[1]), int(low[2]), axis)
            if key in vert_ids:
                return vert_ids[key]
            high = low.copy()
            high[axis] += 1
            v0 = float(fieldvals[tuple(low)])
            v1 = float(fieldvals[tuple(high)])
            t = (iso - v0) / (v1 - v0)
            pos = center(low.astype(float))
            pos[axis] += t / r
            vert_ids[key] = len(positions)
            positions.append(pos)
            return vert_ids[key]

        for e0, e1, e2 in CASE_TABLE[mask]:
            ids = (vertex_for(e0), vertex_for(e1), vertex_for(e2))
            if len(set(ids)) == 3:
                tris.append(ids)

    verts = np.array(positions) if positions else np.zeros((0, 3))
    faces = np.array(tris, dtype=np.int64) if tris else np.zeros((0, 3), dtype=np.int64)
    if color_fn is not None and len(positions):
        rgb = np.clip(color_fn(verts), 0.0, 1.0)
        colors = np.rint(rgb * 255.0).astype(np.uint8)
    else:
        colors = np.full((verts.shape[0], 3), 255, dtype=np.uint8)
    return ColoredMesh(verts, colors, faces)


def ply_text(mesh: ColoredMesh) -> str:
    lines = [
        "ply", "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        f"element face {mesh.n_faces}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    for p, c in zip(mesh.vertices, mesh.colors):
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}")
    for f in mesh.faces:
        lines.append(f"3 {f[0]} {f[1]} {f[2]}")
    return "\n".join(lines) + "\n"


def save_ply(mesh: ColoredMesh, path: str | Path) -> None:
    Path(path).write_text(ply_text(mesh), encoding="ascii")


def load_ply(path: str | Path) -> ColoredMesh:
    text = Path(path).read_text(encoding="ascii").splitlines()
    if text[0] != "ply":
        raise ValueError("not a PLY file")
    n_vert = n_face = 0
    body = 0
    for i, line in enumerate(text):
        if line.startswith("element vertex"):
            n_vert = int(line.split()[-1])
        elif line.startswith("element face"):
            n_face = int(line.split()[-1])
        elif line == "end_header":
            body = i + 1
            break
    else:
        raise ValueError("missing end_header")
    verts = np.zeros((n_vert, 3))
    colors = np.zeros((n_vert, 3), dtype=np.uint8)
    for i in range(n_vert):
        parts = text[body + i].split()
        verts[i] = [float(x) for x in parts[:3]]
        colors[i] = [int(x) for x in parts[3:6]]
    faces = np.zeros((n_face, 3), dtype=np.int64)
    for i in range(n_face):
        parts = text[body + n_vert + i].split()
        if parts[0] != "3":
            raise ValueError("only triangle faces supported")
        faces[i] = [int(x) for x in parts[1:4]]
    return ColoredMesh(verts, colors, faces)
