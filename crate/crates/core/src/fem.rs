//! P1 finite elements for vector-valued maps: gradients, `p`-energies, and
//! the residual and Jacobian of the regularised `p`-Laplace system.
//!
//! Powers `|DU|^{p-2}` are formed as `exp((p-2) (log|DU| - s))` with a
//! common anchor `s` (see [`PContext`]); the factor `e^{(p-2)s}` is dropped
//! from every residual and Jacobian entry alike.

use std::sync::Arc;

use rayon::prelude::*;

use crate::boundary_data::{BoundaryDatum, Gradient};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Subdomain};
use crate::sparse::{norm2, CsrMatrix};

/// Continuous piecewise linear map `Omega -> R^N`, stored vertex-major:
/// component `alpha` of vertex `v` lives at `v * N + alpha`.
#[derive(Debug, Clone)]
pub struct FEField {
    pub mesh: Arc<Mesh>,
    pub values: Vec<f64>,
    pub target_dim: usize,
}

impl FEField {
    pub fn zeros(mesh: Arc<Mesh>, target_dim: usize) -> Self {
        let values = vec![0.0; mesh.num_vertices() * target_dim];
        Self { mesh, values, target_dim }
    }

    pub fn from_values(mesh: Arc<Mesh>, target_dim: usize, values: Vec<f64>) -> Result<Self> {
        if !(1..=2).contains(&target_dim) || values.len() != mesh.num_vertices() * target_dim {
            return Err(Error::InvalidParameter(format!(
                "field needs {} x {target_dim} values, got {}",
                mesh.num_vertices(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("field has non-finite values".into()));
        }
        Ok(Self { mesh, values, target_dim })
    }

    pub fn value(&self, v: usize, alpha: usize) -> f64 {
        self.values[v * self.target_dim + alpha]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| c * v).collect(), ..self.clone() }
    }

    /// Largest nodal deviation from another field on the same mesh.
    pub fn max_abs_diff(&self, other: &FEField) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Gradients of the three P1 basis functions on element `k`.
pub fn basis_gradients(mesh: &Mesh, k: usize) -> [[f64; 2]; 3] {
    let [a, b, c] = mesh.triangles[k].map(|v| mesh.vertices[v]);
    let twice_area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    [
        [(b[1] - c[1]) / twice_area, (c[0] - b[0]) / twice_area],
        [(c[1] - a[1]) / twice_area, (a[0] - c[0]) / twice_area],
        [(a[1] - b[1]) / twice_area, (b[0] - a[0]) / twice_area],
    ]
}

/// Elementwise constant Jacobians of a field, with their Frobenius norms.
#[derive(Debug, Clone)]
pub struct ElementGradient {
    pub matrices: Vec<Gradient>,
    pub norms: Vec<f64>,
}

fn element_gradient(field: &FEField, k: usize) -> Gradient {
    let g = basis_gradients(&field.mesh, k);
    let tri = field.mesh.triangles[k];
    let mut du = [[0.0; 2]; 2];
    for alpha in 0..field.target_dim {
        for (a, &v) in tri.iter().enumerate() {
            let u = field.value(v, alpha);
            du[alpha][0] += u * g[a][0];
            du[alpha][1] += u * g[a][1];
        }
    }
    du
}

fn frobenius(m: &Gradient) -> f64 {
    (m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1]).sqrt()
}

pub fn compute_gradients(field: &FEField) -> ElementGradient {
    let matrices: Vec<Gradient> =
        (0..field.mesh.num_elements()).map(|k| element_gradient(field, k)).collect();
    let norms = matrices.iter().map(frobenius).collect();
    ElementGradient { matrices, norms }
}

/// Nodal interpolant of the datum at every vertex. Boundary values are the
/// Dirichlet data; interior values serve as the initial guess.
pub fn interpolate_boundary(mesh: &Arc<Mesh>, datum: &BoundaryDatum) -> Result<FEField> {
    let n = datum.target_dim;
    let mut values = Vec::with_capacity(mesh.num_vertices() * n);
    for p in &mesh.vertices {
        let v = datum.evaluate(*p);
        if v[..n].iter().any(|x| !x.is_finite()) {
            return Err(Error::Evaluation { datum: datum.name.clone(), x: p[0], y: p[1] });
        }
        values.extend_from_slice(&v[..n]);
    }
    Ok(FEField { mesh: Arc::clone(mesh), values, target_dim: n })
}

/// `(sum_K |DU|_K^p area_K)^{1/p}` over the region, accumulated in log space.
pub fn energy_p(field: &FEField, p: f64, region: &Subdomain) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("energy exponent must be >= 1, got {p}")));
    }
    let grads = compute_gradients(field);
    let logs: Vec<(f64, f64)> = region
        .elements
        .iter()
        .map(|&k| (p * grads.norms[k].ln(), field.mesh.element_area[k]))
        .collect();
    Ok((log_sum_exp_weighted(&logs) / p).exp())
}

/// `log(sum_i w_i exp(l_i))`; `-inf` when every term vanishes.
pub fn log_sum_exp_weighted(terms: &[(f64, f64)]) -> f64 {
    let m = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = terms.iter().map(|&(l, w)| w * (l - m).exp()).sum();
    m + s.ln()
}

/// `max_K |DU|_K` over the region.
pub fn energy_inf(field: &FEField, region: &Subdomain) -> f64 {
    region
        .elements
        .iter()
        .map(|&k| frobenius(&element_gradient(field, k)))
        .fold(0.0, f64::max)
}

/// Exponent, regularisation and log-space anchor for one assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PContext {
    pub p: f64,
    pub epsilon: f64,
    /// Natural log of the gradient scale that weights are measured against.
    pub scale: f64,
}

impl PContext {
    pub fn new(p: f64, epsilon: f64, scale: f64) -> Result<Self> {
        if !(p >= 2.0) || !(epsilon >= 0.0) || !scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "need p >= 2, epsilon >= 0 and a finite scale, got ({p}, {epsilon}, {scale})"
            )));
        }
        Ok(Self { p, epsilon, scale })
    }

    /// Anchors the scale at the largest element gradient of `field` and sets
    /// `epsilon = eps_rel * max |DU|`.
    pub fn for_field(field: &FEField, p: f64, eps_rel: f64) -> Result<Self> {
        let max = compute_gradients(field).norms.into_iter().fold(0.0, f64::max);
        if max > 0.0 {
            Self::new(p, eps_rel * max, max.ln())
        } else {
            Self::new(p, eps_rel, 0.0)
        }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    /// Scaled weights `(w, (p-2) w')` with `w = (|DU|^2+eps^2)^{(p-2)/2}` and
    /// `w' = (|DU|^2+eps^2)^{(p-4)/2}`, both divided by `e^{(p-2)s}`.
    fn weights(&self, grad_norm_sq: f64) -> Result<(f64, f64)> {
        let pm2 = self.p - 2.0;
        if pm2 == 0.0 {
            return Ok((1.0, 0.0));
        }
        let q = grad_norm_sq + self.epsilon * self.epsilon;
        if q == 0.0 {
            return Ok((0.0, 0.0));
        }
        let lq = q.ln();
        let w = (0.5 * pm2 * lq - pm2 * self.scale).exp();
        let w2 = pm2 * (0.5 * (self.p - 4.0) * lq - pm2 * self.scale).exp();
        if !w.is_finite() || !w2.is_finite() {
            return Err(Error::Overflow(self.p));
        }
        Ok((w, w2))
    }
}

/// Numbering of the unknowns: interior vertices times components.
#[derive(Debug, Clone)]
pub struct DofMap {
    index: Vec<Option<usize>>,
    pub interior: Vec<usize>,
    pub target_dim: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh, target_dim: usize) -> Self {
        let mut index = vec![None; mesh.num_vertices()];
        let mut interior = Vec::new();
        for v in 0..mesh.num_vertices() {
            if !mesh.is_boundary[v] {
                index[v] = Some(interior.len());
                interior.push(v);
            }
        }
        Self { index, interior, target_dim }
    }

    pub fn len(&self) -> usize {
        self.interior.len() * self.target_dim
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    pub fn dof(&self, v: usize, alpha: usize) -> Option<usize> {
        self.index[v].map(|i| i * self.target_dim + alpha)
    }

    /// Unknowns of a field, in dof order.
    pub fn gather(&self, field: &FEField) -> Vec<f64> {
        self.interior
            .iter()
            .flat_map(|&v| (0..self.target_dim).map(move |a| (v, a)))
            .map(|(v, a)| field.value(v, a))
            .collect()
    }

    /// `field += t * delta` on the unknowns.
    pub fn add_scaled(&self, field: &mut FEField, t: f64, delta: &[f64]) {
        let n = self.target_dim;
        for (i, &v) in self.interior.iter().enumerate() {
            for a in 0..n {
                field.values[v * n + a] += t * delta[i * n + a];
            }
        }
    }
}

/// Local contributions of one element: residual rows `(a, alpha)` and the
/// dense `3N x 3N` Jacobian block, both in local order `a * N + alpha`.
struct ElementKernel {
    residual: [f64; 6],
    bound: [f64; 6],
    jacobian: [f64; 36],
}

/// Assembles residuals and Jacobians on a fixed mesh and component count.
#[derive(Debug, Clone)]
pub struct Assembler {
    pub dofs: DofMap,
    pattern: CsrMatrix,
    pub parallel: bool,
}

impl Assembler {
    pub fn new(mesh: &Mesh, target_dim: usize) -> Self {
        let dofs = DofMap::new(mesh, target_dim);
        let mut rows = vec![Vec::new(); dofs.len()];
        for tri in &mesh.triangles {
            for &va in tri {
                for &vb in tri {
                    for alpha in 0..target_dim {
                        for beta in 0..target_dim {
                            if let (Some(i), Some(j)) = (dofs.dof(va, alpha), dofs.dof(vb, beta)) {
                                rows[i].push(j);
                            }
                        }
                    }
                }
            }
        }
        Self { dofs, pattern: CsrMatrix::from_pattern(rows), parallel: true }
    }

    pub fn sequential(mut self) -> Self {
        self.parallel = false;
        self
    }

    fn kernel(&self, field: &FEField, ctx: &PContext, k: usize, with_jacobian: bool) -> Result<ElementKernel> {
        let mesh = &field.mesh;
        let n = field.target_dim;
        let g = basis_gradients(mesh, k);
        let du = element_gradient(field, k);
        let norm_sq: f64 = du.iter().flatten().map(|v| v * v).sum();
        let (w, w2) = ctx.weights(norm_sq)?;
        let area = mesh.element_area[k];
        let mut out = ElementKernel { residual: [0.0; 6], bound: [0.0; 6], jacobian: [0.0; 36] };
        // flux[a][alpha] = DU_alpha . grad phi_a
        let mut flux = [[0.0; 2]; 3];
        for a in 0..3 {
            for alpha in 0..n {
                flux[a][alpha] = du[alpha][0] * g[a][0] + du[alpha][1] * g[a][1];
                out.residual[a * n + alpha] = area * w * flux[a][alpha];
                out.bound[a * n + alpha] = area * w * du[alpha][0].hypot(du[alpha][1]) * g[a][0].hypot(g[a][1]);
            }
        }
        if with_jacobian {
            let m = 3 * n;
            for a in 0..3 {
                for b in 0..3 {
                    let gg = g[a][0] * g[b][0] + g[a][1] * g[b][1];
                    for alpha in 0..n {
                        for beta in 0..n {
                            let mut v = w2 * flux[a][alpha] * flux[b][beta];
                            if alpha == beta {
                                v += w * gg;
                            }
                            out.jacobian[(a * n + alpha) * m + b * n + beta] = area * v;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn kernels(&self, field: &FEField, ctx: &PContext, with_jacobian: bool) -> Result<Vec<ElementKernel>> {
        let ne = field.mesh.num_elements();
        if self.parallel {
            (0..ne).into_par_iter().map(|k| self.kernel(field, ctx, k, with_jacobian)).collect()
        } else {
            (0..ne).map(|k| self.kernel(field, ctx, k, with_jacobian)).collect()
        }
    }

    fn check_field(&self, field: &FEField) -> Result<()> {
        if field.target_dim != self.dofs.target_dim {
            return Err(Error::InvalidParameter(format!(
                "assembler built for N = {}, field has N = {}",
                self.dofs.target_dim, field.target_dim
            )));
        }
        Ok(())
    }

    /// Interior residual and the norm of its cancellation bound
    /// `B_i = sum_K area_K w_K |DU_alpha| |grad phi_i|`, the scale below
    /// which residual entries are indistinguishable from round-off.
    pub fn residual_with_bound(&self, field: &FEField, ctx: &PContext) -> Result<(Vec<f64>, f64)> {
        self.residual_and_bounds(field, ctx).map(|(r, b)| (r, norm2(&b)))
    }

    /// Residual together with the per-row cancellation bounds `B_i`.
    pub fn residual_and_bounds(&self, field: &FEField, ctx: &PContext) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_field(field)?;
        let n = field.target_dim;
        let kernels = self.kernels(field, ctx, false)?;
        let mut r = vec![0.0; self.dofs.len()];
        let mut b = vec![0.0; self.dofs.len()];
        for (k, ker) in kernels.iter().enumerate() {
            for (a, &v) in field.mesh.triangles[k].iter().enumerate() {
                for alpha in 0..n {
                    if let Some(i) = self.dofs.dof(v, alpha) {
                        r[i] += ker.residual[a * n + alpha];
                        b[i] += ker.bound[a * n + alpha];
                    }
                }
            }
        }
        Ok((r, b))
    }

    pub fn residual(&self, field: &FEField, ctx: &PContext) -> Result<Vec<f64>> {
        self.residual_with_bound(field, ctx).map(|(r, _)| r)
    }

    /// Exact linearisation of the residual on the unknowns.
    pub fn jacobian(&self, field: &FEField, ctx: &PContext) -> Result<CsrMatrix> {
        self.check_field(field)?;
        let n = field.target_dim;
        let m = 3 * n;
        let kernels = self.kernels(field, ctx, true)?;
        let mut jac = self.pattern.clone();
        for (k, ker) in kernels.iter().enumerate() {
            let tri = field.mesh.triangles[k];
            for (a, &va) in tri.iter().enumerate() {
                for alpha in 0..n {
                    let Some(i) = self.dofs.dof(va, alpha) else { continue };
                    for (b, &vb) in tri.iter().enumerate() {
                        for beta in 0..n {
                            if let Some(j) = self.dofs.dof(vb, beta) {
                                jac.add(i, j, ker.jacobian[(a * n + alpha) * m + b * n + beta]);
                            }
                        }
                    }
                }
            }
        }
        Ok(jac)
    }
}

/// `|(R(U + t v) - R(U)) / t - J v|` for each step `t`. For an exact
/// Jacobian the error is first order in `t` until round-off takes over.
pub fn directional_fd_errors(
    asm: &Assembler,
    field: &FEField,
    ctx: &PContext,
    direction: &[f64],
    steps: &[f64],
) -> Result<Vec<f64>> {
    if direction.len() != asm.dofs.len() {
        return Err(Error::InvalidParameter(format!(
            "direction has {} entries for {} unknowns",
            direction.len(),
            asm.dofs.len()
        )));
    }
    let r0 = asm.residual(field, ctx)?;
    let jv = asm.jacobian(field, ctx)?.mul_vec(direction);
    steps
        .iter()
        .map(|&t| {
            let mut ft = field.clone();
            asm.dofs.add_scaled(&mut ft, t, direction);
            let rt = asm.residual(&ft, ctx)?;
            let diff: Vec<f64> = (0..rt.len()).map(|i| (rt[i] - r0[i]) / t - jv[i]).collect();
            Ok(norm2(&diff))
        })
        .collect()
}

/// Residual of the Galerkin system on the interior unknowns.
pub fn residual(field: &FEField, ctx: &PContext) -> Result<Vec<f64>> {
    Assembler::new(&field.mesh, field.target_dim).residual(field, ctx)
}

/// Jacobian of [`residual`].
pub fn jacobian(field: &FEField, ctx: &PContext) -> Result<CsrMatrix> {
    Assembler::new(&field.mesh, field.target_dim).jacobian(field, ctx)
}
