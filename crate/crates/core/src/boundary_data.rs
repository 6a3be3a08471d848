//! Closed-form boundary maps `g : R^2 -> R^N` used as Dirichlet data, with
//! exact gradients where the formula is differentiable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Point;

/// Up to two components; unused entries are zero.
pub type Value = [f64; 2];
/// Row `alpha` holds the gradient of component `alpha`.
pub type Gradient = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    /// Infinitely differentiable on its domain.
    Smooth,
    /// `C^{1,1/3}`, singular gradient behaviour on the axes.
    Holder,
    /// Only Lipschitz: a kink or a point singularity.
    Lipschitz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatumKind {
    /// `|x|^{4/3} - |y|^{4/3}`
    Aronsson,
    /// `(x^2 + y^2)^{1/2}`
    Cone,
    /// `e^{ix} - e^{iy}` with `e^{it} = (cos t, sin t)`
    VecEikonal,
    /// `(x, y)` for `x <= 0`, `(lambda x, y)` for `x > 0`
    Mixed { lambda: f64 },
    /// `exp(log|x| S) x`, a rotation of `x` by the angle `log|x|`.
    Diffeo,
    /// `A x + b` with `A` of shape `N x 2`.
    Affine { a: Vec<[f64; 2]>, b: Vec<f64> },
    /// `x^2 - y^2`
    HarmonicSaddle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDatum {
    pub name: String,
    pub kind: DatumKind,
    pub target_dim: usize,
    pub eikonal: bool,
    pub smoothness: Smoothness,
}

/// Names accepted by [`catalog_lookup`].
pub const CATALOG: [&str; 7] =
    ["aronsson", "cone", "vec_eikonal", "mixed", "diffeo", "affine", "harmonic_saddle"];

impl BoundaryDatum {
    fn new(name: &str, kind: DatumKind, target_dim: usize, eikonal: bool, s: Smoothness) -> Self {
        Self { name: name.to_string(), kind, target_dim, eikonal, smoothness: s }
    }

    pub fn aronsson() -> Self {
        Self::new("aronsson", DatumKind::Aronsson, 1, false, Smoothness::Holder)
    }

    pub fn cone() -> Self {
        Self::new("cone", DatumKind::Cone, 1, true, Smoothness::Lipschitz)
    }

    pub fn vec_eikonal() -> Self {
        Self::new("vec_eikonal", DatumKind::VecEikonal, 2, true, Smoothness::Smooth)
    }

    /// Piecewise map with arbitrary slope on the right half-plane. The
    /// catalog only admits `lambda = +-1/2`; other values are for testing.
    pub fn mixed(lambda: f64) -> Self {
        Self::new("mixed", DatumKind::Mixed { lambda }, 2, false, Smoothness::Lipschitz)
    }

    pub fn diffeo() -> Self {
        Self::new("diffeo", DatumKind::Diffeo, 2, true, Smoothness::Smooth)
    }

    pub fn harmonic_saddle() -> Self {
        Self::new("harmonic_saddle", DatumKind::HarmonicSaddle, 1, false, Smoothness::Smooth)
    }

    pub fn affine(a: Vec<[f64; 2]>, b: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.len() > 2 || a.len() != b.len() {
            return Err(Error::InvalidParameter(format!(
                "affine datum needs 1 or 2 rows with matching offset, got {} rows and {} offsets",
                a.len(),
                b.len()
            )));
        }
        let n = a.len();
        Ok(Self::new("affine", DatumKind::Affine { a, b }, n, false, Smoothness::Smooth))
    }

    pub fn evaluate(&self, p: Point) -> Value {
        let [x, y] = p;
        match &self.kind {
            DatumKind::Aronsson => [x.abs().powf(4.0 / 3.0) - y.abs().powf(4.0 / 3.0), 0.0],
            DatumKind::Cone => [x.hypot(y), 0.0],
            DatumKind::VecEikonal => [x.cos() - y.cos(), x.sin() - y.sin()],
            DatumKind::Mixed { lambda } => {
                if x <= 0.0 {
                    [x, y]
                } else {
                    [lambda * x, y]
                }
            }
            DatumKind::Diffeo => {
                let theta = x.hypot(y).ln();
                let (s, c) = theta.sin_cos();
                [c * x - s * y, s * x + c * y]
            }
            DatumKind::Affine { a, b } => {
                let mut v = [0.0; 2];
                for (alpha, (row, off)) in a.iter().zip(b).enumerate() {
                    v[alpha] = row[0] * x + row[1] * y + off;
                }
                v
            }
            DatumKind::HarmonicSaddle => [x * x - y * y, 0.0],
        }
    }

    /// Exact Jacobian, or `None` when the datum has no closed form gradient
    /// at `p` (non-differentiability locus or axes excluded to keep the
    /// oracle honest).
    pub fn exact_gradient(&self, p: Point) -> Option<Gradient> {
        let [x, y] = p;
        match &self.kind {
            DatumKind::Aronsson => {
                if x == 0.0 || y == 0.0 {
                    return None;
                }
                let f = 4.0 / 3.0;
                Some([[f * x.signum() * x.abs().cbrt(), -f * y.signum() * y.abs().cbrt()], [0.0; 2]])
            }
            DatumKind::Cone => {
                let r = x.hypot(y);
                (r > 0.0).then(|| [[x / r, y / r], [0.0; 2]])
            }
            DatumKind::VecEikonal => Some([[-x.sin(), y.sin()], [x.cos(), -y.cos()]]),
            DatumKind::Mixed { lambda } => {
                if x == 0.0 {
                    None
                } else if x < 0.0 {
                    Some([[1.0, 0.0], [0.0, 1.0]])
                } else {
                    Some([[*lambda, 0.0], [0.0, 1.0]])
                }
            }
            DatumKind::Diffeo => {
                let r2 = x * x + y * y;
                if r2 == 0.0 {
                    return None;
                }
                // D(R(log r) x) = R + R S x x^T / r^2
                let (s, c) = x.hypot(y).ln().sin_cos();
                let rot = [[c, -s], [s, c]];
                let sx = [-y, x];
                let rsx = [rot[0][0] * sx[0] + rot[0][1] * sx[1], rot[1][0] * sx[0] + rot[1][1] * sx[1]];
                let mut g = rot;
                for (alpha, row) in g.iter_mut().enumerate() {
                    row[0] += rsx[alpha] * x / r2;
                    row[1] += rsx[alpha] * y / r2;
                }
                Some(g)
            }
            DatumKind::Affine { a, .. } => {
                let mut g = [[0.0; 2]; 2];
                g[..a.len()].copy_from_slice(a);
                Some(g)
            }
            DatumKind::HarmonicSaddle => Some([[2.0 * x, -2.0 * y], [0.0; 2]]),
        }
    }

    /// Frobenius norm of the exact gradient.
    pub fn exact_gradient_norm(&self, p: Point) -> Result<f64> {
        let g = self.exact_gradient(p).ok_or_else(|| {
            Error::Domain(format!("{} is not differentiable at ({}, {})", self.name, p[0], p[1]))
        })?;
        Ok(g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// Exact limit of the p-harmonic approximations, where one is known.
    pub fn infinity_harmonic_limit(&self) -> bool {
        matches!(
            self.kind,
            DatumKind::Aronsson | DatumKind::Affine { .. } | DatumKind::HarmonicSaddle
        )
    }
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse `{t}` as a number")))
        })
        .collect()
}

/// Looks up a datum by name. `affine` takes its coefficients after a colon:
/// `affine:a1,a2,b` (scalar) or `affine:a11,a12,a21,a22,b1,b2` (vector).
pub fn catalog_lookup(name: &str, lambda: Option<f64>) -> Result<BoundaryDatum> {
    let (base, args) = match name.split_once(':') {
        Some((b, a)) => (b.trim(), Some(a)),
        None => (name.trim(), None),
    };
    match base {
        "aronsson" => Ok(BoundaryDatum::aronsson()),
        "cone" => Ok(BoundaryDatum::cone()),
        "vec_eikonal" => Ok(BoundaryDatum::vec_eikonal()),
        "diffeo" => Ok(BoundaryDatum::diffeo()),
        "harmonic_saddle" => Ok(BoundaryDatum::harmonic_saddle()),
        "mixed" => match lambda {
            None => Err(Error::InvalidParameter("mixed datum requires lambda".into())),
            Some(l) if (l.abs() - 0.5).abs() < 1e-15 => Ok(BoundaryDatum::mixed(l)),
            Some(l) => Err(Error::InvalidParameter(format!("mixed datum needs lambda = +-1/2, got {l}"))),
        },
        "affine" => {
            let v = parse_floats(args.ok_or_else(|| {
                Error::InvalidParameter("affine datum needs coefficients `affine:...`".into())
            })?)?;
            match v.len() {
                3 => BoundaryDatum::affine(vec![[v[0], v[1]]], vec![v[2]]),
                6 => BoundaryDatum::affine(vec![[v[0], v[1]], [v[2], v[3]]], vec![v[4], v[5]]),
                k => Err(Error::InvalidParameter(format!("affine datum takes 3 or 6 numbers, got {k}"))),
            }
        }
        other => Err(Error::UnknownDatum(other.to_string())),
    }
}

/// Catalog identifier that round-trips through [`catalog_lookup`].
pub fn catalog_name(datum: &BoundaryDatum) -> String {
    match &datum.kind {
        DatumKind::Affine { a, b } => {
            let nums: Vec<String> =
                a.iter().flatten().chain(b.iter()).map(|v| v.to_string()).collect();
            format!("affine:{}", nums.join(","))
        }
        _ => datum.name.clone(),
    }
}
