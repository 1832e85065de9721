//! Meshes of the unit interval and the unit square, and the quadrature rules
//! the forms are assembled with.
//!
//! Elements are P1 simplices: two-node segments in 1-D, three-node triangles
//! in 2-D. Quadrature points carry their parent element and the barycentric
//! coordinates inside it, so basis functions evaluate as `bary[k]`.
//!
//! The boundary strip of width `epsilon` is the set of points at Euclidean
//! distance `< epsilon` from the boundary. In 1-D that is `[0, eps) U (1 - eps, 1]`
//! and elements are cut exactly at the interfaces. In 2-D every triangle is
//! clipped against the inner square `[eps, 1 - eps]^2`, so the strip part of a
//! triangle is a union of convex polygons integrated without geometric error.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Gauss-Legendre nodes and weights on `[0, 1]`, three points.
const GAUSS3_NODES: [f64; 3] = [
    0.112_701_665_379_258_31,
    0.5,
    0.887_298_334_620_741_7,
];
const GAUSS3_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

/// Three-point interior rule on a triangle (degree 2), barycentric.
const TRI3_BARY: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dimension {
    One,
    Two,
}

impl Dimension {
    pub fn value(self) -> usize {
        match self {
            Dimension::One => 1,
            Dimension::Two => 2,
        }
    }

    fn nodes_per_element(self) -> usize {
        self.value() + 1
    }
}

/// A boundary facet: an endpoint in 1-D, an edge in 2-D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFacet {
    pub element: usize,
    pub nodes: Vec<usize>,
    pub normal: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dimension: Dimension,
    nodes: Vec<Point>,
    elements: Vec<Vec<usize>>,
    boundary_facets: Vec<BoundaryFacet>,
    h: f64,
}

/// Mesh selector used by configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshSpec {
    Interval { n: usize },
    Rectangle { nx: usize, ny: usize },
}

impl MeshSpec {
    pub fn build(&self) -> Result<Mesh> {
        match *self {
            MeshSpec::Interval { n } => build_interval_mesh(n),
            MeshSpec::Rectangle { nx, ny } => build_rectangle_mesh(nx, ny),
        }
    }
}

/// Uniform mesh of `(0, 1)` with `n` elements.
pub fn build_interval_mesh(n: usize) -> Result<Mesh> {
    if n < 2 {
        return Err(Error::InvalidMesh(format!(
            "interval mesh needs at least 2 elements, got {n}"
        )));
    }
    let nodes = (0..=n).map(|i| [i as f64 / n as f64, 0.0]).collect();
    let elements = (0..n).map(|e| vec![e, e + 1]).collect();
    let boundary_facets = vec![
        BoundaryFacet {
            element: 0,
            nodes: vec![0],
            normal: [-1.0, 0.0],
        },
        BoundaryFacet {
            element: n - 1,
            nodes: vec![n],
            normal: [1.0, 0.0],
        },
    ];
    Mesh::from_parts(Dimension::One, nodes, elements, boundary_facets)
}

/// Structured triangulation of `(0, 1)^2`: each of the `nx * ny` cells is split
/// along its rising diagonal.
pub fn build_rectangle_mesh(nx: usize, ny: usize) -> Result<Mesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidMesh(format!(
            "rectangle mesh needs at least 2x2 cells, got {nx}x{ny}"
        )));
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([i as f64 / nx as f64, j as f64 / ny as f64]);
        }
    }
    let mut elements = Vec::with_capacity(2 * nx * ny);
    let mut boundary_facets = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let (n00, n10, n01, n11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            let lower = elements.len();
            elements.push(vec![n00, n10, n11]);
            let upper = elements.len();
            elements.push(vec![n00, n11, n01]);
            if j == 0 {
                boundary_facets.push(BoundaryFacet {
                    element: lower,
                    nodes: vec![n00, n10],
                    normal: [0.0, -1.0],
                });
            }
            if i == nx - 1 {
                boundary_facets.push(BoundaryFacet {
                    element: lower,
                    nodes: vec![n10, n11],
                    normal: [1.0, 0.0],
                });
            }
            if j == ny - 1 {
                boundary_facets.push(BoundaryFacet {
                    element: upper,
                    nodes: vec![n11, n01],
                    normal: [0.0, 1.0],
                });
            }
            if i == 0 {
                boundary_facets.push(BoundaryFacet {
                    element: upper,
                    nodes: vec![n01, n00],
                    normal: [-1.0, 0.0],
                });
            }
        }
    }
    Mesh::from_parts(Dimension::Two, nodes, elements, boundary_facets)
}

impl Mesh {
    /// Validates the mesh invariants and computes `h`.
    pub fn from_parts(
        dimension: Dimension,
        nodes: Vec<Point>,
        elements: Vec<Vec<usize>>,
        boundary_facets: Vec<BoundaryFacet>,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidMesh(msg));
        if elements.is_empty() {
            return invalid("mesh has no elements".into());
        }
        for (i, p) in nodes.iter().enumerate() {
            let inside = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
            if !inside(p[0]) || (dimension == Dimension::Two && !inside(p[1])) {
                return invalid(format!("node {i} lies outside the unit domain"));
            }
            if dimension == Dimension::One && p[1] != 0.0 {
                return invalid(format!("node {i} of a 1-D mesh has a nonzero y coordinate"));
            }
        }
        let mut mesh = Mesh {
            dimension,
            nodes,
            elements,
            boundary_facets,
            h: 0.0,
        };
        let per = dimension.nodes_per_element();
        for (e, element) in mesh.elements.iter().enumerate() {
            if element.len() != per {
                return invalid(format!("element {e} has {} nodes, expected {per}", element.len()));
            }
            if element.iter().any(|&n| n >= mesh.nodes.len()) {
                return invalid(format!("element {e} references a missing node"));
            }
        }
        let mut h: f64 = 0.0;
        for e in 0..mesh.elements.len() {
            if mesh.measure(e) <= 0.0 {
                return invalid(format!("element {e} is degenerate"));
            }
            h = h.max(mesh.diameter(e));
        }
        mesh.h = h;

        // Every facet of an element keyed by its sorted node list; a boundary
        // facet must match exactly one element facet.
        let mut owners: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
        for (e, element) in mesh.elements.iter().enumerate() {
            for skip in 0..per {
                let mut key: Vec<usize> = (0..per)
                    .filter(|&k| k != skip)
                    .map(|k| element[k])
                    .collect();
                key.sort_unstable();
                owners.entry(key).or_default().push(e);
            }
        }
        for (k, facet) in mesh.boundary_facets.iter().enumerate() {
            if facet.nodes.len() != per - 1 {
                return invalid(format!("boundary facet {k} has the wrong node count"));
            }
            let mut key = facet.nodes.clone();
            key.sort_unstable();
            match owners.get(&key) {
                Some(list) if list.len() == 1 && list[0] == facet.element => {}
                Some(list) if list.len() == 1 => {
                    return invalid(format!(
                        "boundary facet {k} belongs to element {}, not {}",
                        list[0], facet.element
                    ))
                }
                Some(_) => return invalid(format!("boundary facet {k} is shared by two elements")),
                None => return invalid(format!("boundary facet {k} is not a facet of any element")),
            }
            for &n in &facet.nodes {
                if mesh.distance_to_boundary(mesh.nodes[n]) > 1e-12 {
                    return invalid(format!("boundary facet {k} is not on the domain boundary"));
                }
            }
        }
        Ok(mesh)
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn elements(&self) -> &[Vec<usize>] {
        &self.elements
    }

    pub fn boundary_facets(&self) -> &[BoundaryFacet] {
        &self.boundary_facets
    }

    /// Maximum element diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Length (1-D) or area (2-D) of element `e`.
    pub fn measure(&self, e: usize) -> f64 {
        let el = &self.elements[e];
        match self.dimension {
            Dimension::One => self.nodes[el[1]][0] - self.nodes[el[0]][0],
            Dimension::Two => {
                let [a, b, c] = [self.nodes[el[0]], self.nodes[el[1]], self.nodes[el[2]]];
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
            }
        }
    }

    pub fn diameter(&self, e: usize) -> f64 {
        let el = &self.elements[e];
        let mut d: f64 = 0.0;
        for i in 0..el.len() {
            for j in i + 1..el.len() {
                d = d.max(distance(self.nodes[el[i]], self.nodes[el[j]]));
            }
        }
        d
    }

    /// Gradients of the local P1 basis functions of element `e` (constant
    /// per element).
    pub fn basis_gradients(&self, e: usize) -> Vec<Point> {
        let el = &self.elements[e];
        match self.dimension {
            Dimension::One => {
                let len = self.measure(e);
                vec![[-1.0 / len, 0.0], [1.0 / len, 0.0]]
            }
            Dimension::Two => {
                let [a, b, c] = [self.nodes[el[0]], self.nodes[el[1]], self.nodes[el[2]]];
                let twice_area = 2.0 * self.measure(e);
                vec![
                    [(b[1] - c[1]) / twice_area, (c[0] - b[0]) / twice_area],
                    [(c[1] - a[1]) / twice_area, (a[0] - c[0]) / twice_area],
                    [(a[1] - b[1]) / twice_area, (b[0] - a[0]) / twice_area],
                ]
            }
        }
    }

    /// Euclidean distance from `x` to the boundary of the unit domain.
    pub fn distance_to_boundary(&self, x: Point) -> f64 {
        match self.dimension {
            Dimension::One => x[0].min(1.0 - x[0]),
            Dimension::Two => x[0].min(1.0 - x[0]).min(x[1]).min(1.0 - x[1]),
        }
    }

    /// Total measure of the boundary: 2 points in 1-D, the perimeter in 2-D.
    pub fn boundary_measure(&self) -> f64 {
        match self.dimension {
            Dimension::One => self.boundary_facets.len() as f64,
            Dimension::Two => self
                .boundary_facets
                .iter()
                .map(|f| distance(self.nodes[f.nodes[0]], self.nodes[f.nodes[1]]))
                .sum(),
        }
    }

    fn element_vertices(&self, e: usize) -> Vec<Point> {
        self.elements[e].iter().map(|&n| self.nodes[n]).collect()
    }

    /// Barycentric coordinates of `x` in triangle `e`.
    fn barycentric(&self, e: usize, x: Point) -> [f64; 3] {
        let v = self.element_vertices(e);
        let (ax, ay) = (v[1][0] - v[0][0], v[1][1] - v[0][1]);
        let (bx, by) = (v[2][0] - v[0][0], v[2][1] - v[0][1]);
        let det = ax * by - bx * ay;
        let (rx, ry) = (x[0] - v[0][0], x[1] - v[0][1]);
        let l1 = (rx * by - bx * ry) / det;
        let l2 = (ax * ry - rx * ay) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    pub fn to_document(&self) -> MeshDocument {
        let d = self.dimension.value();
        MeshDocument {
            format: MESH_FORMAT.to_string(),
            version: MESH_VERSION,
            dimension: d,
            nodes: self.nodes.iter().map(|p| p[..d].to_vec()).collect(),
            elements: self.elements.clone(),
            boundary_facets: self.boundary_facets.clone(),
            h: self.h,
        }
    }

    pub fn from_document(doc: MeshDocument) -> Result<Self> {
        if doc.format != MESH_FORMAT || doc.version != MESH_VERSION {
            return Err(Error::InvalidMesh(format!(
                "unsupported mesh document {} v{}",
                doc.format, doc.version
            )));
        }
        let dimension = match doc.dimension {
            1 => Dimension::One,
            2 => Dimension::Two,
            d => return Err(Error::InvalidMesh(format!("unsupported dimension {d}"))),
        };
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        for (i, p) in doc.nodes.iter().enumerate() {
            if p.len() != doc.dimension {
                return Err(Error::InvalidMesh(format!("node {i} has {} coordinates", p.len())));
            }
            nodes.push([p[0], if doc.dimension == 2 { p[1] } else { 0.0 }]);
        }
        Mesh::from_parts(dimension, nodes, doc.elements, doc.boundary_facets)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Mesh::from_document(serde_json::from_str(text)?)
    }
}

pub const MESH_FORMAT: &str = "stripeq-mesh";
pub const MESH_VERSION: u32 = 1;

/// Versioned, language-neutral mesh serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshDocument {
    pub format: String,
    pub version: u32,
    pub dimension: usize,
    pub nodes: Vec<Vec<f64>>,
    pub elements: Vec<Vec<usize>>,
    pub boundary_facets: Vec<BoundaryFacet>,
    pub h: f64,
}

fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub element: usize,
    /// Barycentric coordinates in the parent element; in 1-D only the first
    /// two are used.
    pub bary: [f64; 3],
    pub weight: f64,
    pub x: Point,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Quadrature {
    pub points: Vec<QuadPoint>,
}

impl Quadrature {
    pub fn total_weight(&self) -> f64 {
        self.points.iter().map(|p| p.weight).sum()
    }

    pub fn integrate(&self, f: impl Fn(&QuadPoint) -> f64) -> f64 {
        self.points.iter().map(|p| p.weight * f(p)).sum()
    }

    /// Integral of the piecewise-linear interpolant with nodal values `values`.
    pub fn integrate_nodal(&self, mesh: &Mesh, values: &[f64]) -> f64 {
        self.integrate(|p| {
            mesh.elements[p.element]
                .iter()
                .enumerate()
                .map(|(k, &n)| p.bary[k] * values[n])
                .sum()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StripExactness {
    /// 1-D: elements split at `x = eps` and `x = 1 - eps`.
    CutCell,
    /// 2-D: triangles clipped against the inner square.
    PolygonClip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StripQuadrature {
    pub epsilon: f64,
    pub rule: Quadrature,
    pub exactness: StripExactness,
}

/// Three-point rule per element: Gauss-Legendre on segments, the degree-2
/// symmetric rule on triangles.
pub fn interior_quadrature(mesh: &Mesh) -> Quadrature {
    let mut points = Vec::with_capacity(3 * mesh.elements.len());
    for e in 0..mesh.elements.len() {
        match mesh.dimension {
            Dimension::One => push_segment_points(mesh, e, 0.0, 1.0, 1.0, &mut points),
            Dimension::Two => {
                let v = mesh.element_vertices(e);
                let area = mesh.measure(e);
                for bary in TRI3_BARY {
                    points.push(QuadPoint {
                        element: e,
                        bary,
                        weight: area / 3.0,
                        x: combine(&v, &bary),
                    });
                }
            }
        }
    }
    Quadrature { points }
}

/// Gauss points on the sub-segment `[t0, t1]` (local coordinates) of 1-D
/// element `e`, with weights multiplied by `scale`.
fn push_segment_points(mesh: &Mesh, e: usize, t0: f64, t1: f64, scale: f64, out: &mut Vec<QuadPoint>) {
    let len = mesh.measure(e);
    let x0 = mesh.nodes[mesh.elements[e][0]][0];
    for (node, w) in GAUSS3_NODES.iter().zip(GAUSS3_WEIGHTS) {
        let t = t0 + (t1 - t0) * node;
        out.push(QuadPoint {
            element: e,
            bary: [1.0 - t, t, 0.0],
            weight: scale * w * (t1 - t0) * len,
            x: [x0 + t * len, 0.0],
        });
    }
}

fn combine(v: &[Point], bary: &[f64; 3]) -> Point {
    let mut p = [0.0; 2];
    for (k, vk) in v.iter().enumerate() {
        p[0] += bary[k] * vk[0];
        p[1] += bary[k] * vk[1];
    }
    p
}

/// Quadrature restricted to the strip of width `epsilon` along the boundary.
pub fn strip_quadrature(mesh: &Mesh, epsilon: f64) -> Result<StripQuadrature> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidStrip {
            epsilon,
            reason: "width must lie in (0, 1/2)".into(),
        });
    }
    let mut points = Vec::new();
    let exactness = match mesh.dimension {
        Dimension::One => {
            for e in 0..mesh.elements.len() {
                let xa = mesh.nodes[mesh.elements[e][0]][0];
                let xb = mesh.nodes[mesh.elements[e][1]][0];
                let len = xb - xa;
                for (lo, hi) in [(0.0, epsilon), (1.0 - epsilon, 1.0)] {
                    let a = xa.max(lo);
                    let b = xb.min(hi);
                    if b > a {
                        push_segment_points(mesh, e, (a - xa) / len, (b - xa) / len, 1.0, &mut points);
                    }
                }
            }
            StripExactness::CutCell
        }
        Dimension::Two => {
            for e in 0..mesh.elements.len() {
                let tri = mesh.element_vertices(e);
                let min_area = 1e-14 * mesh.measure(e);
                for piece in strip_pieces(&tri, epsilon) {
                    for k in 1..piece.len().saturating_sub(1) {
                        let sub = [piece[0], piece[k], piece[k + 1]];
                        let area = triangle_area(&sub);
                        if area <= min_area {
                            continue;
                        }
                        for bary in TRI3_BARY {
                            let x = combine(&sub, &bary);
                            points.push(QuadPoint {
                                element: e,
                                bary: mesh.barycentric(e, x),
                                weight: area / 3.0,
                                x,
                            });
                        }
                    }
                }
            }
            StripExactness::PolygonClip
        }
    };
    Ok(StripQuadrature {
        epsilon,
        rule: Quadrature { points },
        exactness,
    })
}

/// Disjoint convex pieces of `tri` lying in the frame `{dist < eps}` of the
/// unit square: left band, right band, then bottom and top bands restricted to
/// the middle column.
fn strip_pieces(tri: &[Point], eps: f64) -> Vec<Vec<Point>> {
    let left = clip(tri, 0, eps, true);
    let rest = clip(tri, 0, eps, false);
    let right = clip(&rest, 0, 1.0 - eps, false);
    let middle = clip(&rest, 0, 1.0 - eps, true);
    let bottom = clip(&middle, 1, eps, true);
    let rest = clip(&middle, 1, eps, false);
    let top = clip(&rest, 1, 1.0 - eps, false);
    [left, right, bottom, top]
        .into_iter()
        .filter(|p| p.len() >= 3)
        .collect()
}

/// Sutherland-Hodgman clip of a convex polygon against one axis-aligned
/// half-plane (`coord <= value` when `keep_below`).
fn clip(poly: &[Point], axis: usize, value: f64, keep_below: bool) -> Vec<Point> {
    let inside = |p: &Point| {
        if keep_below {
            p[axis] <= value
        } else {
            p[axis] >= value
        }
    };
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 2);
    for i in 0..n {
        let cur = poly[i];
        let prev = poly[(i + n - 1) % n];
        let (cin, pin) = (inside(&cur), inside(&prev));
        if cin != pin {
            let t = (value - prev[axis]) / (cur[axis] - prev[axis]);
            let mut p = [
                prev[0] + t * (cur[0] - prev[0]),
                prev[1] + t * (cur[1] - prev[1]),
            ];
            p[axis] = value;
            out.push(p);
        }
        if cin {
            out.push(cur);
        }
    }
    out
}

fn triangle_area(t: &[Point; 3]) -> f64 {
    0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1])).abs()
}

/// Quadrature over the boundary: point evaluations in 1-D, three Gauss points
/// per boundary edge in 2-D.
pub fn boundary_quadrature(mesh: &Mesh) -> Quadrature {
    let mut points = Vec::new();
    for facet in &mesh.boundary_facets {
        let el = &mesh.elements[facet.element];
        let local = |node: usize| el.iter().position(|&n| n == node).expect("facet node in element");
        match mesh.dimension {
            Dimension::One => {
                let mut bary = [0.0; 3];
                bary[local(facet.nodes[0])] = 1.0;
                points.push(QuadPoint {
                    element: facet.element,
                    bary,
                    weight: 1.0,
                    x: mesh.nodes[facet.nodes[0]],
                });
            }
            Dimension::Two => {
                let (a, b) = (facet.nodes[0], facet.nodes[1]);
                let (pa, pb) = (mesh.nodes[a], mesh.nodes[b]);
                let len = distance(pa, pb);
                for (t, w) in GAUSS3_NODES.iter().zip(GAUSS3_WEIGHTS) {
                    let mut bary = [0.0; 3];
                    bary[local(a)] = 1.0 - t;
                    bary[local(b)] = *t;
                    points.push(QuadPoint {
                        element: facet.element,
                        bary,
                        weight: w * len,
                        x: [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])],
                    });
                }
            }
        }
    }
    Quadrature { points }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn interval_mesh_basics() {
        let m = build_interval_mesh(2).unwrap();
        let xs: Vec<f64> = m.nodes().iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.0, 0.5, 1.0]);
        assert_eq!(m.h(), 0.5);

        let m = build_interval_mesh(4).unwrap();
        let f = m.boundary_facets();
        assert_eq!(f.len(), 2);
        assert_eq!((m.nodes()[f[0].nodes[0]][0], f[0].normal[0]), (0.0, -1.0));
        assert_eq!((m.nodes()[f[1].nodes[0]][0], f[1].normal[0]), (1.0, 1.0));

        let m = build_interval_mesh(10).unwrap();
        let total: f64 = (0..10).map(|e| m.measure(e)).sum();
        assert!(close(total, 1.0, 1e-15));
        assert!(build_interval_mesh(1).is_err());
    }

    #[test]
    fn rectangle_mesh_basics() {
        let m = build_rectangle_mesh(2, 2).unwrap();
        assert_eq!(m.node_count(), 9);
        assert_eq!(m.boundary_facets().len(), 8);

        let m = build_rectangle_mesh(4, 4).unwrap();
        let total: f64 = (0..m.elements().len()).map(|e| m.measure(e)).sum();
        assert!(close(total, 1.0, 1e-14));

        let m = build_rectangle_mesh(4, 2).unwrap();
        let expect = (0.25f64.powi(2) + 0.5f64.powi(2)).sqrt();
        assert!(close(m.h(), expect, 1e-15));
        let hmax = (0..m.elements().len()).map(|e| m.diameter(e)).fold(0.0, f64::max);
        assert_eq!(m.h(), hmax);

        assert!(build_rectangle_mesh(1, 3).is_err());
        assert!(build_rectangle_mesh(3, 1).is_err());
    }

    #[test]
    fn outward_normals_point_away_from_owner() {
        let m = build_rectangle_mesh(3, 5).unwrap();
        for f in m.boundary_facets() {
            let c = combine(&m.element_vertices(f.element), &[1.0 / 3.0; 3]);
            let mid = m.nodes()[f.nodes[0]];
            let dot = (mid[0] - c[0]) * f.normal[0] + (mid[1] - c[1]) * f.normal[1];
            assert!(dot > 0.0);
        }
    }

    #[test]
    fn strip_weights_1d() {
        let m = build_interval_mesh(7).unwrap();
        let s = strip_quadrature(&m, 0.1).unwrap();
        assert_eq!(s.exactness, StripExactness::CutCell);
        assert!(close(s.rule.total_weight(), 0.2, 1e-15));
        assert!(s.rule.points.iter().all(|p| p.weight >= 0.0 && p.x[0].min(1.0 - p.x[0]) < 0.1));

        let m = build_interval_mesh(4).unwrap();
        let s = strip_quadrature(&m, 0.25).unwrap();
        assert!(close(s.rule.total_weight() / 0.25, 2.0, 1e-15));
    }

    #[test]
    fn strip_is_exact_for_linear_integrands_1d() {
        // int over [0,eps) U (1-eps,1] of x = eps^2/2 + (1 - (1-eps)^2)/2 = eps
        let m = build_interval_mesh(9).unwrap();
        for eps in [0.03, 0.1, 0.2, 0.37] {
            let s = strip_quadrature(&m, eps).unwrap();
            let xs: Vec<f64> = m.nodes().iter().map(|p| p[0]).collect();
            assert!(close(s.rule.integrate_nodal(&m, &xs), eps, 1e-14));
        }
    }

    #[test]
    fn strip_area_2d_matches_frame() {
        for (nx, ny) in [(4, 4), (7, 5), (16, 16)] {
            let m = build_rectangle_mesh(nx, ny).unwrap();
            for eps in [0.1, 0.25, 0.033] {
                let s = strip_quadrature(&m, eps).unwrap();
                let frame = 1.0 - (1.0 - 2.0 * eps).powi(2);
                assert!(
                    ((s.rule.total_weight() - frame) / frame).abs() <= 1e-12,
                    "nx={nx} ny={ny} eps={eps}"
                );
                for p in &s.rule.points {
                    assert!(p.weight >= 0.0);
                    assert!(m.distance_to_boundary(p.x) < eps);
                    assert!(p.bary.iter().all(|&b| b > -1e-12 && b < 1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn strip_rejects_out_of_range() {
        let m = build_interval_mesh(4).unwrap();
        for eps in [0.0, -0.1, 0.5, 0.7, f64::NAN] {
            assert!(matches!(strip_quadrature(&m, eps), Err(Error::InvalidStrip { .. })));
        }
    }

    #[test]
    fn concentration_of_hat_functions_1d() {
        // (1/eps) int_strip phi_i -> phi_i(0) + phi_i(1), error <= eps * |phi_i'|.
        let n = 16;
        let m = build_interval_mesh(n).unwrap();
        let slope = n as f64;
        for eps in [0.2, 0.1, 0.05] {
            let s = strip_quadrature(&m, eps).unwrap();
            for i in 0..=n {
                let mut phi = vec![0.0; n + 1];
                phi[i] = 1.0;
                let avg = s.rule.integrate_nodal(&m, &phi) / eps;
                let limit = phi[0] + phi[n];
                assert!((avg - limit).abs() <= eps * slope + 1e-12);
            }
        }
    }

    #[test]
    fn boundary_rules() {
        let m = build_interval_mesh(5).unwrap();
        let b = boundary_quadrature(&m);
        assert_eq!(b.points.len(), 2);
        assert_eq!(b.points[0].x[0], 0.0);
        assert_eq!(b.points[1].x[0], 1.0);
        assert!(b.points.iter().all(|p| p.weight == 1.0));

        let m = build_rectangle_mesh(5, 3).unwrap();
        let b = boundary_quadrature(&m);
        assert!((b.total_weight() - 4.0).abs() <= 4e-12);
        assert!((m.boundary_measure() - 4.0).abs() <= 4e-12);
        let bottom = b.integrate(|p| if p.x[1] == 0.0 { p.x[0] } else { 0.0 });
        assert!((bottom - 0.5).abs() <= 1e-14);
    }

    #[test]
    fn json_round_trip_is_bit_identical() {
        for m in [build_interval_mesh(13).unwrap(), build_rectangle_mesh(3, 7).unwrap()] {
            let text = m.to_json().unwrap();
            let back = Mesh::from_json(&text).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_json().unwrap(), text);
        }
    }

    #[test]
    fn rejects_broken_meshes() {
        let m = build_interval_mesh(4).unwrap();
        let mut doc = m.to_document();
        doc.elements[1] = vec![1, 9];
        assert!(Mesh::from_document(doc).is_err());

        let mut doc = m.to_document();
        doc.elements[2] = vec![2, 2];
        assert!(Mesh::from_document(doc).is_err());

        let mut doc = m.to_document();
        doc.boundary_facets[0].element = 1;
        assert!(Mesh::from_document(doc).is_err());

        let mut doc = m.to_document();
        doc.version = 99;
        assert!(Mesh::from_document(doc).is_err());
    }
}
