//! Conforming triangulations of the square `(-1,1)^2` and of an annulus.
//!
//! Meshes are immutable once built. Per-element geometry (area, diameter,
//! inradius) is computed at construction and the structural invariants are
//! checked before a mesh is handed out.

mod region;

pub use region::{resolve_subdomain, RegionSpec, Subdomain};

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Lower bound on `min_K rho_K / h_K` accepted for generated meshes.
pub const MIN_SHAPE_REGULARITY: f64 = 0.1;
/// Upper bound on `max h / min h` accepted for generated meshes.
pub const MAX_QUASI_UNIFORMITY: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    Square,
    Annulus,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub is_boundary: Vec<bool>,
    pub element_area: Vec<f64>,
    pub element_diameter: Vec<f64>,
    pub element_inradius: Vec<f64>,
    pub domain: DomainKind,
    vertex_elements: Vec<Vec<usize>>,
}

/// Signed area of the triangle `(a, b, c)`; positive when counterclockwise.
pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Returns `(area, diameter, inradius)` of a triangle.
pub fn triangle_geometry(a: Point, b: Point, c: Point) -> (f64, f64, f64) {
    let area = signed_area(a, b, c).abs();
    let (e0, e1, e2) = (dist(b, c), dist(c, a), dist(a, b));
    let diameter = e0.max(e1).max(e2);
    let inradius = 2.0 * area / (e0 + e1 + e2);
    (area, diameter, inradius)
}

impl Mesh {
    fn from_parts(
        vertices: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        is_boundary: Vec<bool>,
        domain: DomainKind,
    ) -> Result<Self> {
        let mut element_area = Vec::with_capacity(triangles.len());
        let mut element_diameter = Vec::with_capacity(triangles.len());
        let mut element_inradius = Vec::with_capacity(triangles.len());
        for (k, tri) in triangles.iter_mut().enumerate() {
            let [a, b, c] = tri.map(|v| vertices[v]);
            let signed = signed_area(a, b, c);
            if signed == 0.0 {
                return Err(Error::Geometry(k));
            }
            if signed < 0.0 {
                tri.swap(1, 2);
            }
            let (area, diam, rho) = triangle_geometry(a, b, c);
            element_area.push(area);
            element_diameter.push(diam);
            element_inradius.push(rho);
        }
        let mut vertex_elements = vec![Vec::new(); vertices.len()];
        for (k, tri) in triangles.iter().enumerate() {
            for &v in tri {
                vertex_elements[v].push(k);
            }
        }
        let mesh = Self {
            vertices,
            triangles,
            is_boundary,
            element_area,
            element_diameter,
            element_inradius,
            domain,
            vertex_elements,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn total_area(&self) -> f64 {
        self.element_area.iter().sum()
    }

    /// Elements incident to vertex `v`.
    pub fn vertex_elements(&self, v: usize) -> &[usize] {
        &self.vertex_elements[v]
    }

    pub fn barycenter(&self, k: usize) -> Point {
        let [a, b, c] = self.triangles[k].map(|v| self.vertices[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Shape regularity `min_K rho_K / h_K`.
    pub fn shape_regularity(&self) -> f64 {
        self.element_inradius
            .iter()
            .zip(&self.element_diameter)
            .map(|(r, h)| r / h)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest element diameter.
    pub fn max_diameter(&self) -> f64 {
        self.element_diameter.iter().copied().fold(0.0, f64::max)
    }

    /// Meshsize function at each vertex: the largest diameter among the
    /// closed elements containing it.
    pub fn meshsize_at_vertices(&self) -> Vec<f64> {
        self.vertex_elements
            .iter()
            .map(|els| els.iter().map(|&k| self.element_diameter[k]).fold(0.0, f64::max))
            .collect()
    }

    /// `max h(x) / min h(x)` over the meshsize function.
    pub fn quasi_uniformity(&self) -> f64 {
        let h = self.meshsize_at_vertices();
        let max = h.iter().copied().fold(0.0, f64::max);
        let min = h.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    }

    /// Map from sorted edge `(a, b)` to the elements sharing it.
    pub fn edge_elements(&self) -> HashMap<(usize, usize), Vec<usize>> {
        let mut edges: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (k, tri) in self.triangles.iter().enumerate() {
            for i in 0..3 {
                let (a, b) = (tri[i], tri[(i + 1) % 3]);
                edges.entry((a.min(b), a.max(b))).or_default().push(k);
            }
        }
        edges
    }

    /// Structural checks: positive orientation, edge manifoldness, boundary
    /// consistency and the Euler characteristic of the domain.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.is_boundary.len() != self.vertices.len() {
            return bad("boundary marker length mismatch".into());
        }
        for (k, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= self.vertices.len()) {
                return bad(format!("element {k} references a missing vertex"));
            }
            let [a, b, c] = tri.map(|v| self.vertices[v]);
            if signed_area(a, b, c) <= 0.0 {
                return Err(Error::Geometry(k));
            }
        }
        let edges = self.edge_elements();
        let mut on_boundary_edge = vec![false; self.vertices.len()];
        for (&(a, b), els) in &edges {
            match els.len() {
                1 => {
                    if !(self.is_boundary[a] && self.is_boundary[b]) {
                        return bad(format!("boundary edge ({a},{b}) has an interior endpoint"));
                    }
                    on_boundary_edge[a] = true;
                    on_boundary_edge[b] = true;
                }
                2 => {}
                m => return bad(format!("edge ({a},{b}) shared by {m} elements")),
            }
        }
        if on_boundary_edge != self.is_boundary {
            return bad("boundary markers disagree with the boundary edges".into());
        }
        let euler = self.vertices.len() as i64 - edges.len() as i64 + self.triangles.len() as i64;
        let expected = match self.domain {
            DomainKind::Square => 1,
            DomainKind::Annulus => 0,
        };
        if euler != expected {
            return bad(format!("Euler characteristic {euler}, expected {expected}"));
        }
        let mu = self.shape_regularity();
        if mu <= MIN_SHAPE_REGULARITY {
            return bad(format!("shape regularity {mu:.4} below {MIN_SHAPE_REGULARITY}"));
        }
        let q = self.quasi_uniformity();
        if q > MAX_QUASI_UNIFORMITY {
            return bad(format!("quasi-uniformity constant {q:.3} above {MAX_QUASI_UNIFORMITY}"));
        }
        Ok(())
    }
}

/// Criss-cross triangulation of `[-1,1]^2`: every grid cell is split into
/// four triangles through its center.
///
/// Vertex layout: grid vertex `(i, j)` has index `j * (n + 1) + i`, cell
/// centers follow at `(n + 1)^2 + j * n + i`.
pub fn build_square_mesh(n: usize) -> Result<Mesh> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("square mesh needs n >= 2, got {n}")));
    }
    let step = 2.0 / n as f64;
    let coord = |i: usize| -1.0 + step * i as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1) + n * n);
    let mut is_boundary = Vec::with_capacity(vertices.capacity());
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([coord(i), coord(j)]);
            is_boundary.push(i == 0 || j == 0 || i == n || j == n);
        }
    }
    for j in 0..n {
        for i in 0..n {
            vertices.push([coord(i) + 0.5 * step, coord(j) + 0.5 * step]);
            is_boundary.push(false);
        }
    }
    let grid = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::with_capacity(4 * n * n);
    for j in 0..n {
        for i in 0..n {
            let m = (n + 1) * (n + 1) + j * n + i;
            let (a, b, c, d) = (grid(i, j), grid(i + 1, j), grid(i + 1, j + 1), grid(i, j + 1));
            triangles.extend([[a, b, m], [b, c, m], [c, d, m], [d, a, m]]);
        }
    }
    Mesh::from_parts(vertices, triangles, is_boundary, DomainKind::Square)
}

/// Polar-grid triangulation of the annulus `r_in < |x| < r_out`, periodic in
/// angle. Vertex `(k, j)` on ring `k` at angle index `j` has index
/// `k * n_theta + j`.
pub fn build_annulus_mesh(n_r: usize, n_theta: usize, r_in: f64, r_out: f64) -> Result<Mesh> {
    if !(r_in > 0.0 && r_in < r_out && r_out.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "annulus radii must satisfy 0 < r_in < r_out, got ({r_in}, {r_out})"
        )));
    }
    if n_r < 2 || n_theta < 8 {
        return Err(Error::InvalidParameter(format!(
            "annulus needs n_r >= 2 and n_theta >= 8, got ({n_r}, {n_theta})"
        )));
    }
    let dr = (r_out - r_in) / n_r as f64;
    let dtheta = std::f64::consts::TAU / n_theta as f64;
    let mut vertices = Vec::with_capacity((n_r + 1) * n_theta);
    let mut is_boundary = Vec::with_capacity(vertices.capacity());
    for k in 0..=n_r {
        let r = if k == n_r { r_out } else { r_in + dr * k as f64 };
        for j in 0..n_theta {
            let theta = dtheta * j as f64;
            vertices.push([r * theta.cos(), r * theta.sin()]);
            is_boundary.push(k == 0 || k == n_r);
        }
    }
    let idx = |k: usize, j: usize| k * n_theta + (j % n_theta);
    let mut triangles = Vec::with_capacity(2 * n_r * n_theta);
    for k in 0..n_r {
        for j in 0..n_theta {
            let (a, b, c, d) = (idx(k, j), idx(k + 1, j), idx(k + 1, j + 1), idx(k, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Mesh::from_parts(vertices, triangles, is_boundary, DomainKind::Annulus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_n2_counts_and_area() {
        let m = build_square_mesh(2).unwrap();
        assert_eq!(m.num_vertices(), 13);
        assert_eq!(m.num_elements(), 16);
        assert!((m.total_area() - 4.0).abs() < 1e-14);
        let first = m.element_inradius[0] / m.element_diameter[0];
        for k in 0..m.num_elements() {
            let r = m.element_inradius[k] / m.element_diameter[k];
            assert!((r - first).abs() < 1e-15);
        }
    }

    #[test]
    fn square_rejects_small_n() {
        assert!(matches!(build_square_mesh(1), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn square_n16_shape_regularity_brute_force() {
        let m = build_square_mesh(16).unwrap();
        assert!((m.total_area() - 4.0).abs() < 1e-12);
        // recompute from raw coordinates, independent of the stored arrays
        let mut mu = f64::INFINITY;
        for tri in &m.triangles {
            let p = tri.map(|v| m.vertices[v]);
            let e: Vec<f64> = (0..3)
                .map(|i| {
                    let (a, b) = (p[i], p[(i + 1) % 3]);
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
                })
                .collect();
            let s = 0.5 * (e[0] + e[1] + e[2]);
            let area = (s * (s - e[0]) * (s - e[1]) * (s - e[2])).sqrt();
            let h = e.iter().copied().fold(0.0, f64::max);
            mu = mu.min(area / s / h);
        }
        assert!((m.shape_regularity() - mu).abs() < 1e-12);
        // right isosceles triangles: rho/h = 1 / (2 (1 + sqrt 2))
        assert!((mu - 1.0 / (2.0 * (1.0 + 2f64.sqrt()))).abs() < 1e-12);
        assert!(mu > 0.2);
        assert!((m.max_diameter() - 2.0 / 16.0).abs() < 1e-15);
        assert!((m.quasi_uniformity() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn annulus_small_counts() {
        let m = build_annulus_mesh(2, 8, 0.2, 0.8).unwrap();
        assert_eq!(m.num_vertices(), 24);
        assert_eq!(m.num_elements(), 32);
        for (v, p) in m.vertices.iter().enumerate() {
            let r = p[0].hypot(p[1]);
            let on_circle = (r - 0.2).abs() < 1e-12 || (r - 0.8).abs() < 1e-12;
            assert_eq!(m.is_boundary[v], on_circle);
        }
    }

    #[test]
    fn annulus_area_converges() {
        let m = build_annulus_mesh(16, 64, 0.2, 0.8).unwrap();
        let exact = std::f64::consts::PI * (0.64 - 0.04);
        assert!((m.total_area() - exact).abs() / exact < 0.01);
    }

    #[test]
    fn annulus_rejects_bad_radii() {
        assert!(build_annulus_mesh(4, 16, 0.8, 0.2).is_err());
        assert!(build_annulus_mesh(4, 16, 0.0, 0.2).is_err());
        assert!(build_annulus_mesh(1, 16, 0.2, 0.8).is_err());
        assert!(build_annulus_mesh(4, 4, 0.2, 0.8).is_err());
    }

    #[test]
    fn edges_shared_once_or_twice() {
        for m in [build_square_mesh(5).unwrap(), build_annulus_mesh(3, 12, 0.3, 0.9).unwrap()] {
            for (&(a, b), els) in &m.edge_elements() {
                let boundary_edge = m.is_boundary[a] && m.is_boundary[b] && els.len() == 1;
                assert!(els.len() == 2 || boundary_edge);
            }
        }
    }
}
