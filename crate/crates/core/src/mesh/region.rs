use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{Mesh, Point};
use crate::error::{Error, Result};

/// Description of an open set `O` in the domain. Resolved against a mesh by
/// selecting every element whose barycenter lies inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionSpec {
    AxisSquare { center: Point, half_width: f64 },
    Annulus { r_in: f64, r_out: f64 },
    /// The square of the given half-width intersected with the astroid
    /// `|x|^{2/3} + |y|^{2/3} < 1`, a level set of the Aronsson gradient.
    AstroidBand { half_width: f64 },
    WholeDomain,
    /// Explicit per-element membership.
    PredicateTable { members: Vec<bool> },
}

impl RegionSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::AxisSquare { center, half_width } => {
                *half_width > 0.0 && center.iter().all(|c| c.is_finite())
            }
            Self::Annulus { r_in, r_out } => *r_in >= 0.0 && r_in < r_out,
            Self::AstroidBand { half_width } => *half_width > 0.0,
            Self::WholeDomain | Self::PredicateTable { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("degenerate region {self:?}")))
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        match self {
            Self::AxisSquare { center, half_width } => {
                (p[0] - center[0]).abs() < *half_width && (p[1] - center[1]).abs() < *half_width
            }
            Self::Annulus { r_in, r_out } => {
                let r = p[0].hypot(p[1]);
                *r_in < r && r < *r_out
            }
            Self::AstroidBand { half_width } => {
                let (x, y) = (p[0].abs(), p[1].abs());
                x < *half_width && y < *half_width && x.cbrt().powi(2) + y.cbrt().powi(2) < 1.0
            }
            Self::WholeDomain => true,
            Self::PredicateTable { .. } => false,
        }
    }

    /// Short identifier used in output file names.
    pub fn label(&self) -> String {
        match self {
            Self::AxisSquare { center, half_width } => {
                format!("square_{}_{}_{}", center[0], center[1], half_width)
            }
            Self::Annulus { r_in, r_out } => format!("annulus_{r_in}_{r_out}"),
            Self::AstroidBand { half_width } => format!("astroid_{half_width}"),
            Self::WholeDomain => "whole".into(),
            Self::PredicateTable { .. } => "table".into(),
        }
    }
}

/// A union of mesh elements standing in for an open set.
#[derive(Debug, Clone, PartialEq)]
pub struct Subdomain {
    pub elements: Vec<usize>,
    pub closure_vertices: Vec<usize>,
    /// Edges `(a, b)` with `a < b` adjacent to exactly one selected element.
    pub boundary_edges: Vec<(usize, usize)>,
    pub area: f64,
}

impl Subdomain {
    pub fn from_elements(mesh: &Mesh, elements: impl IntoIterator<Item = usize>) -> Result<Self> {
        let elements: BTreeSet<usize> = elements.into_iter().collect();
        if elements.is_empty() {
            return Err(Error::EmptySubdomain("no elements".into()));
        }
        if let Some(&k) = elements.iter().find(|&&k| k >= mesh.num_elements()) {
            return Err(Error::InvalidParameter(format!("element index {k} out of range")));
        }
        let mut vertices = BTreeSet::new();
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for &k in &elements {
            let tri = mesh.triangles[k];
            vertices.extend(tri);
            for i in 0..3 {
                let (a, b) = (tri[i], tri[(i + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut boundary_edges: Vec<_> =
            edge_count.into_iter().filter(|&(_, c)| c == 1).map(|(e, _)| e).collect();
        boundary_edges.sort_unstable();
        let area = elements.iter().map(|&k| mesh.element_area[k]).sum();
        Ok(Self {
            elements: elements.into_iter().collect(),
            closure_vertices: vertices.into_iter().collect(),
            boundary_edges,
            area,
        })
    }

    pub fn whole(mesh: &Mesh) -> Self {
        Self::from_elements(mesh, 0..mesh.num_elements()).expect("mesh has elements")
    }

    pub fn contains_element(&self, k: usize) -> bool {
        self.elements.binary_search(&k).is_ok()
    }

    pub fn is_subset_of(&self, other: &Subdomain) -> bool {
        self.elements.iter().all(|&k| other.contains_element(k))
    }

    /// Vertices whose every incident element lies in the region and which
    /// are not on the domain boundary: the support of test functions
    /// vanishing on the region's boundary.
    pub fn interior_vertices(&self, mesh: &Mesh) -> Vec<usize> {
        self.closure_vertices
            .iter()
            .copied()
            .filter(|&v| {
                !mesh.is_boundary[v]
                    && mesh.vertex_elements(v).iter().all(|&k| self.contains_element(k))
            })
            .collect()
    }

    /// Distance from `p` to the nearest boundary edge of the region.
    pub fn distance_to_boundary(&self, mesh: &Mesh, p: Point) -> f64 {
        self.boundary_edges
            .iter()
            .map(|&(a, b)| segment_distance(p, mesh.vertices[a], mesh.vertices[b]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Selects the elements whose barycenter satisfies the region predicate.
pub fn resolve_subdomain(mesh: &Mesh, spec: &RegionSpec) -> Result<Subdomain> {
    spec.validate()?;
    let selected: Vec<usize> = match spec {
        RegionSpec::WholeDomain => (0..mesh.num_elements()).collect(),
        RegionSpec::PredicateTable { members } => {
            if members.len() != mesh.num_elements() {
                return Err(Error::InvalidParameter(format!(
                    "predicate table has {} entries for {} elements",
                    members.len(),
                    mesh.num_elements()
                )));
            }
            members.iter().enumerate().filter(|(_, &m)| m).map(|(k, _)| k).collect()
        }
        _ => (0..mesh.num_elements()).filter(|&k| spec.contains(mesh.barycenter(k))).collect(),
    };
    if selected.is_empty() {
        return Err(Error::EmptySubdomain(spec.label()));
    }
    Subdomain::from_elements(mesh, selected)
}
