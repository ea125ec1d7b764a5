//! Triangular meshes: structured rectangles and plain-text mesh files.
//!
//! File format (line oriented, whitespace separated, `#` starts a comment line):
//!
//! ```text
//! <num_nodes> <num_triangles>
//! <x> <y> <boundary_flag>      # num_nodes lines, flag 0 = interior
//! <i> <j> <k>                  # num_triangles lines, 0-based, counterclockwise
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// An immutable triangulation with its edge topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    /// 0 for interior nodes, a positive label otherwise.
    boundary_labels: Vec<i32>,
    edges: Vec<[usize; 2]>,
    /// Global edge index of local edges (v0,v1), (v1,v2), (v2,v0).
    tri_edges: Vec<[usize; 3]>,
    boundary_edges: Vec<bool>,
    h_max: f64,
}

/// Twice the signed area of the triangle `a, b, c`.
#[inline]
pub fn signed_area2(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
}

#[derive(Debug)]
enum Invalid {
    IndexOutOfRange { tri: usize, index: usize },
    Orientation { tri: usize, area: f64 },
    StrayBoundaryFlag { node: usize },
    MissingBoundaryFlag { node: usize },
    NonManifoldEdge { a: usize, b: usize, count: usize },
}

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Invalid::IndexOutOfRange { tri, index } => {
                write!(
                    f,
                    "triangle {tri} references node {index} which is out of range"
                )
            }
            Invalid::Orientation { tri, area } => write!(
                f,
                "triangle {tri} has nonpositive signed area {area:e} (must be counterclockwise)"
            ),
            Invalid::StrayBoundaryFlag { node } => {
                write!(
                    f,
                    "node {node} is flagged as boundary but lies on no boundary edge"
                )
            }
            Invalid::MissingBoundaryFlag { node } => {
                write!(f, "node {node} lies on a boundary edge but is not flagged")
            }
            Invalid::NonManifoldEdge { a, b, count } => {
                write!(f, "edge ({a},{b}) is shared by {count} triangles")
            }
        }
    }
}

impl Mesh {
    /// Validates the raw arrays and builds edge topology.
    pub fn new(
        nodes: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        boundary_labels: Vec<i32>,
    ) -> Result<Self> {
        Self::build(nodes, triangles, boundary_labels)
            .map_err(|e| Error::InvalidMesh(e.to_string()))
    }

    fn build(
        nodes: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        boundary_labels: Vec<i32>,
    ) -> std::result::Result<Self, Invalid> {
        assert_eq!(nodes.len(), boundary_labels.len());
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i >= nodes.len()) {
                return Err(Invalid::IndexOutOfRange { tri: t, index });
            }
            let area = 0.5 * signed_area2(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if !(area > 0.0) {
                return Err(Invalid::Orientation { tri: t, area });
            }
        }

        let mut lookup: HashMap<(usize, usize), usize> =
            HashMap::with_capacity(triangles.len() * 2);
        let mut edges = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        let mut tri_edges = Vec::with_capacity(triangles.len());
        for tri in &triangles {
            let mut local = [0usize; 3];
            for (l, (a, b)) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])]
                .into_iter()
                .enumerate()
            {
                let key = (a.min(b), a.max(b));
                let id = *lookup.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    counts.push(0);
                    edges.len() - 1
                });
                counts[id] += 1;
                local[l] = id;
            }
            tri_edges.push(local);
        }
        if let Some(e) = counts.iter().position(|&c| c > 2) {
            return Err(Invalid::NonManifoldEdge {
                a: edges[e][0],
                b: edges[e][1],
                count: counts[e],
            });
        }
        let boundary_edges: Vec<bool> = counts.iter().map(|&c| c == 1).collect();

        let mut on_boundary_edge = vec![false; nodes.len()];
        for (e, &b) in edges.iter().zip(&boundary_edges) {
            if b {
                on_boundary_edge[e[0]] = true;
                on_boundary_edge[e[1]] = true;
            }
        }
        for (node, (&flag, &geo)) in boundary_labels.iter().zip(&on_boundary_edge).enumerate() {
            match (flag != 0, geo) {
                (true, false) => return Err(Invalid::StrayBoundaryFlag { node }),
                (false, true) => return Err(Invalid::MissingBoundaryFlag { node }),
                _ => {}
            }
        }

        let h_max = edges
            .iter()
            .map(|&[a, b]| {
                let (p, q) = (nodes[a], nodes[b]);
                (p[0] - q[0]).hypot(p[1] - q[1])
            })
            .fold(0.0, f64::max);

        Ok(Mesh {
            nodes,
            triangles,
            boundary_labels,
            edges,
            tri_edges,
            boundary_edges,
            h_max,
        })
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn tri_edges(&self) -> &[[usize; 3]] {
        &self.tri_edges
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.boundary_edges[e]
    }

    pub fn is_boundary_node(&self, n: usize) -> bool {
        self.boundary_labels[n] != 0
    }

    pub fn boundary_label(&self, n: usize) -> i32 {
        self.boundary_labels[n]
    }

    /// Sorted indices of nodes on the boundary.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&n| self.is_boundary_node(n))
            .collect()
    }

    /// Longest edge length.
    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * signed_area2(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.triangle_area(t))
            .sum()
    }

    /// Midpoint of edge `e`.
    pub fn edge_midpoint(&self, e: usize) -> Point {
        let [a, b] = self.edges[e];
        let (p, q) = (self.nodes[a], self.nodes[b]);
        [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
    }

    /// Serializes the mesh in the plain-text file format.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.nodes.len(), self.triangles.len());
        for (p, label) in self.nodes.iter().zip(&self.boundary_labels) {
            let _ = writeln!(s, "{:.17e} {:.17e} {}", p[0], p[1], label);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }
}

/// Structured triangulation of `[x0,x1] x [y0,y1]` with `nx * ny` cells, each
/// split along its lower-left to upper-right diagonal.
pub fn build_rect_mesh(nx: usize, ny: usize, x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidMesh(format!(
            "need at least one cell per side, got {nx}x{ny}"
        )));
    }
    if !(x1 > x0) || !(y1 > y0) {
        return Err(Error::InvalidMesh(format!(
            "rectangle corners must satisfy x1 > x0 and y1 > y0, got ({x0}, {y0}) and ({x1}, {y1})"
        )));
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut labels = Vec::with_capacity(nodes.capacity());
    for j in 0..=ny {
        // exact endpoints so boundary coordinates are bit-identical to the corners
        let y = if j == ny {
            y1
        } else {
            y0 + (y1 - y0) * j as f64 / ny as f64
        };
        for i in 0..=nx {
            let x = if i == nx {
                x1
            } else {
                x0 + (x1 - x0) * i as f64 / nx as f64
            };
            nodes.push([x, y]);
            labels.push(i32::from(i == 0 || i == nx || j == 0 || j == ny));
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Mesh::new(nodes, triangles, labels)
}

/// Parses a mesh from the plain-text format. `origin` is only used in error messages.
pub fn parse_mesh(text: &str, origin: &Path) -> Result<Mesh> {
    let err = |line: usize, msg: String| Error::MeshFile {
        path: origin.to_path_buf(),
        line,
        msg,
    };

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    fn fields(l: &str) -> Vec<&str> {
        l.split_whitespace().collect()
    }
    fn num<T: std::str::FromStr>(s: &str, what: &str) -> std::result::Result<T, String> {
        s.parse::<T>()
            .map_err(|_| format!("cannot parse {what} from `{s}`"))
    }

    let (hl, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty mesh file".into()))?;
    let h = fields(header);
    if h.len() != 2 {
        return Err(err(
            hl,
            format!("expected `<num_nodes> <num_triangles>`, got `{header}`"),
        ));
    }
    let n_nodes: usize = num(h[0], "node count").map_err(|m| err(hl, m))?;
    let n_tris: usize = num(h[1], "triangle count").map_err(|m| err(hl, m))?;

    let mut nodes = Vec::with_capacity(n_nodes);
    let mut labels = Vec::with_capacity(n_nodes);
    for k in 0..n_nodes {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(hl, format!("file ends after {k} of {n_nodes} nodes")))?;
        let f = fields(l);
        if f.len() != 3 {
            return Err(err(
                ln,
                format!("expected `<x> <y> <boundary_flag>`, got `{l}`"),
            ));
        }
        let x: f64 = num(f[0], "x").map_err(|m| err(ln, m))?;
        let y: f64 = num(f[1], "y").map_err(|m| err(ln, m))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(err(ln, "non-finite coordinate".into()));
        }
        let flag: i32 = num(f[2], "boundary flag").map_err(|m| err(ln, m))?;
        if flag < 0 {
            return Err(err(
                ln,
                format!("boundary flag must be nonnegative, got {flag}"),
            ));
        }
        nodes.push([x, y]);
        labels.push(flag);
    }

    let mut triangles = Vec::with_capacity(n_tris);
    let mut tri_lines = Vec::with_capacity(n_tris);
    for k in 0..n_tris {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(hl, format!("file ends after {k} of {n_tris} triangles")))?;
        let f = fields(l);
        if f.len() != 3 {
            return Err(err(ln, format!("expected `<i> <j> <k>`, got `{l}`")));
        }
        let mut t = [0usize; 3];
        for (slot, s) in t.iter_mut().zip(&f) {
            *slot = num(s, "node index").map_err(|m| err(ln, m))?;
            if *slot >= n_nodes {
                return Err(err(
                    ln,
                    format!(
                        "triangle {k} references node {slot} but there are only {n_nodes} nodes"
                    ),
                ));
            }
        }
        let area = 0.5 * signed_area2(nodes[t[0]], nodes[t[1]], nodes[t[2]]);
        if !(area > 0.0) {
            return Err(err(
                ln,
                format!(
                    "triangle {k} has nonpositive signed area {area:e} (clockwise or degenerate)"
                ),
            ));
        }
        triangles.push(t);
        tri_lines.push(ln);
    }
    if let Some((ln, l)) = lines.next() {
        return Err(err(ln, format!("unexpected trailing content `{l}`")));
    }

    Mesh::build(nodes, triangles, labels).map_err(|e| {
        let line = match &e {
            Invalid::IndexOutOfRange { tri, .. } | Invalid::Orientation { tri, .. } => {
                tri_lines[*tri]
            }
            _ => hl,
        };
        err(line, e.to_string())
    })
}

/// Reads a mesh file.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text, path)
}
