"""Generate the offset-circles triangulation used by the offset_circles problem.

Outer circle r=1 at the origin (label 1), inner circle r=0.1 at (0.5, 0)
(label 2). Usage: python3 offset_circles_mesh.py [out_path] [h]
"""
import sys

import numpy as np
from scipy.spatial import Delaunay

R_OUT, R_IN, CENTER = 1.0, 0.1, np.array([0.5, 0.0])
N_OUT, N_IN = 200, 50


def circle(n, r, c):
    th = 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([c[0] + r * np.cos(th), c[1] + r * np.sin(th)])


def interior_points(h):
    rows = []
    dy = h * np.sqrt(3.0) / 2.0
    for j, y in enumerate(np.arange(-R_OUT, R_OUT + dy, dy)):
        shift = 0.5 * h if j % 2 else 0.0
        xs = np.arange(-R_OUT + shift, R_OUT + h, h)
        rows.append(np.column_stack([xs, np.full_like(xs, y)]))
    p = np.vstack(rows)
    keep = (np.hypot(p[:, 0], p[:, 1]) < R_OUT - 0.7 * h) & (
        np.hypot(p[:, 0] - CENTER[0], p[:, 1] - CENTER[1]) > R_IN + 0.7 * h * 0.5
    )
    return p[keep]


def build(h):
    outer = circle(N_OUT, R_OUT, np.zeros(2))
    inner = circle(N_IN, R_IN, CENTER)
    inside = interior_points(h)
    pts = np.vstack([outer, inner, inside])
    labels = np.concatenate([np.ones(N_OUT, int), np.full(N_IN, 2), np.zeros(len(inside), int)])
    tri = Delaunay(pts).simplices
    cen = pts[tri].mean(axis=1)
    tri = tri[np.hypot(cen[:, 0] - CENTER[0], cen[:, 1] - CENTER[1]) > R_IN]
    a, b, c = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
    area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    flip = area2 < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    return pts, labels, tri


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "offset_circles.mesh"
    h = float(sys.argv[2]) if len(sys.argv) > 2 else 0.05
    pts, labels, tri = build(h)
    with open(out, "w") as f:
        f.write(f"# offset circles, r1={R_OUT}, r2={R_IN} at ({CENTER[0]}, {CENTER[1]}), h={h}\n")
        f.write(f"{len(pts)} {len(tri)}\n")
        for (x, y), l in zip(pts, labels):
            f.write(f"{x:.17e} {y:.17e} {l}\n")
        for t in tri:
            f.write(f"{t[0]} {t[1]} {t[2]}\n")
    print(f"{out}: {len(pts)} nodes, {len(tri)} triangles")


if __name__ == "__main__":
    main()
