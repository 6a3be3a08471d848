//! Concentration measures `sigma_p^O = |DU|^{p-2} dx / int_O |DU|^{p-2}` of
//! solved fields and the diagnostics computed from them.
//!
//! Densities are handled as logarithms `l_K = (p-2) log |DU|_K` so that
//! exponents near 100 neither overflow nor flush to zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{basis_gradients, compute_gradients, energy_inf, log_sum_exp_weighted, FEField};
use crate::mesh::{Point, Subdomain};

/// Probability measure on the elements of a region, piecewise constant in
/// density.
#[derive(Debug, Clone)]
pub struct SigmaMeasure {
    pub exponent: f64,
    pub region: Subdomain,
    /// `sigma(K)` for `K = region.elements[i]`; sums to one.
    pub masses: Vec<f64>,
    /// `(p-2) log |DU|_K`, aligned with `masses`.
    pub log_density: Vec<f64>,
    /// `log int_O |DU|^{p-2} dx`.
    pub log_total: f64,
    /// `|DU|_K`, aligned with `masses`.
    pub grad_norms: Vec<f64>,
}

impl SigmaMeasure {
    /// Density of `sigma` with respect to Lebesgue measure on element `i`
    /// of the region.
    pub fn density(&self, i: usize) -> f64 {
        (self.log_density[i] - self.log_total).exp()
    }

    /// Mass of element `k` (a mesh index); zero outside the region.
    pub fn mass_of_element(&self, k: usize) -> f64 {
        self.region.elements.binary_search(&k).map(|i| self.masses[i]).unwrap_or(0.0)
    }

    /// Mass of the region's elements selected by `pred`.
    pub fn mass_where(&self, mut pred: impl FnMut(usize, usize) -> bool) -> f64 {
        self.region
            .elements
            .iter()
            .enumerate()
            .filter(|&(i, &k)| pred(i, k))
            .fold(0.0, |acc, (i, _)| acc + self.masses[i])
    }
}

fn log_densities(norms: &[f64], p: f64) -> Vec<f64> {
    if p == 2.0 {
        vec![0.0; norms.len()]
    } else {
        norms.iter().map(|g| (p - 2.0) * g.ln()).collect()
    }
}

pub fn build_sigma(field: &FEField, p: f64, region: &Subdomain) -> Result<SigmaMeasure> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(Error::InvalidParameter(format!("measure exponent must be >= 2, got {p}")));
    }
    let all = compute_gradients(field);
    let mesh = &field.mesh;
    let grad_norms: Vec<f64> = region.elements.iter().map(|&k| all.norms[k]).collect();
    let log_density = log_densities(&grad_norms, p);
    let terms: Vec<(f64, f64)> =
        log_density.iter().zip(&region.elements).map(|(&l, &k)| (l, mesh.element_area[k])).collect();
    let log_total = log_sum_exp_weighted(&terms);
    if !log_total.is_finite() {
        return Err(Error::DegenerateMeasure);
    }
    let masses = terms.iter().map(|&(l, a)| a * (l - log_total).exp()).collect();
    Ok(SigmaMeasure { exponent: p, region: region.clone(), masses, log_density, log_total, grad_norms })
}

/// `sigma(A)` for `A` the elements of `set` that also lie in the region.
pub fn sigma_of_set(measure: &SigmaMeasure, set: &Subdomain) -> f64 {
    measure.mass_where(|_, k| set.contains_element(k))
}

/// `L_p = (int_O |DU|^{p-2} dx)^{1/(p-2)}` for `p > 2`.
pub fn lp_functional(field: &FEField, p: f64, region: &Subdomain) -> Result<f64> {
    if !(p > 2.0) {
        return Err(Error::InvalidParameter(format!("L_p needs p > 2, got {p}")));
    }
    Ok((build_sigma(field, p, region)?.log_total / (p - 2.0)).exp())
}

/// `L_p / |O|^{1/(p-2)}`, the `(p-2)`-mean of `|DU|` over the region.
pub fn lp_mean(field: &FEField, p: f64, region: &Subdomain) -> Result<f64> {
    Ok(lp_functional(field, p, region)? / region.area.powf(1.0 / (p - 2.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub alpha: f64,
    /// `sigma({|DU| <= alpha Lbar_p})` with the mean-normalised functional.
    pub mass: f64,
    /// `alpha^{p-2}`
    pub bound: f64,
    pub holds: bool,
    /// `sigma({|DU| <= alpha L_p})` with the raw functional.
    pub mass_raw: f64,
    /// `alpha^{p-2} |O|`
    pub bound_raw: f64,
    pub holds_raw: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub exponent: f64,
    pub rows: Vec<TailRow>,
    pub all_hold: bool,
}

/// Checks `sigma({|DU| <= alpha L}) <= alpha^{p-2}` for each `alpha` in
/// `(0, 1)`. The comparison allows a relative slack of `1e-12`.
pub fn tail_bound_check(measure: &SigmaMeasure, alphas: &[f64]) -> Result<TailReport> {
    let p = measure.exponent;
    if !(p > 2.0) {
        return Err(Error::InvalidParameter(format!("tail bound needs p > 2, got {p}")));
    }
    let log_area = measure.region.area.ln();
    let log_l = measure.log_total / (p - 2.0);
    let log_lbar = (measure.log_total - log_area) / (p - 2.0);
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("tail level must lie in (0, 1), got {alpha}")));
        }
        let below = |log_level: f64| {
            let cut = alpha.ln() + log_level;
            measure.mass_where(|i, _| measure.grad_norms[i].ln() <= cut)
        };
        let mass = below(log_lbar);
        let mass_raw = below(log_l);
        let bound = alpha.powf(p - 2.0);
        let bound_raw = bound * measure.region.area;
        rows.push(TailRow {
            alpha,
            mass,
            bound,
            holds: mass <= bound * (1.0 + 1e-12),
            mass_raw,
            bound_raw,
            holds_raw: mass_raw <= bound_raw * (1.0 + 1e-12),
        });
    }
    let all_hold = rows.iter().all(|r| r.holds);
    Ok(TailReport { exponent: p, rows, all_hold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceFreeReport {
    /// `max_{i,alpha} |int DU : D(phi_i e_alpha) dsigma|`
    pub max_abs: f64,
    /// `max_{i,alpha} int |DU| |D(phi_i e_alpha)| dsigma`
    pub scale: f64,
    pub normalised: f64,
    pub test_functions: usize,
}

/// Tests `div(DU sigma) = 0` weakly against every hat function supported in
/// the region, one component at a time.
pub fn divergence_free_check(field: &FEField, measure: &SigmaMeasure) -> Result<DivergenceFreeReport> {
    let mesh = &field.mesh;
    let n = field.target_dim;
    let grads = compute_gradients(field);
    let interior = measure.region.interior_vertices(mesh);
    if interior.is_empty() {
        return Err(Error::DegenerateProbe);
    }
    let (mut max_abs, mut scale) = (0.0f64, 0.0f64);
    for &v in &interior {
        for alpha in 0..n {
            let (mut s, mut b) = (0.0, 0.0);
            for &k in mesh.vertex_elements(v) {
                let local = mesh.triangles[k].iter().position(|&w| w == v).expect("incident");
                let g = basis_gradients(mesh, k)[local];
                let du = grads.matrices[k][alpha];
                let m = measure.mass_of_element(k);
                s += m * (du[0] * g[0] + du[1] * g[1]);
                b += m * du[0].hypot(du[1]) * g[0].hypot(g[1]);
            }
            max_abs = max_abs.max(s.abs());
            scale = scale.max(b);
        }
    }
    let normalised = if scale > 0.0 { max_abs / scale } else { 0.0 };
    Ok(DivergenceFreeReport { max_abs, scale, normalised, test_functions: interior.len() * n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub energy: f64,
    pub trials: usize,
    /// Perturbations that lowered `E_inf` on the region.
    pub improvements: usize,
    /// `min (E_inf(U + phi) - E_inf(U)) / E_inf(U)` over the trials.
    pub min_relative_change: f64,
}

/// Compares `E_inf(U, O)` against random nodal perturbations vanishing on
/// the boundary of `O`, at each amplitude (max-norm of the perturbation).
pub fn absolute_minimiser_probe(
    field: &FEField,
    region: &Subdomain,
    amplitudes: &[f64],
    samples: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let interior = region.interior_vertices(&field.mesh);
    if interior.is_empty() {
        return Err(Error::DegenerateProbe);
    }
    let n = field.target_dim;
    let energy = energy_inf(field, region);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ProbeReport { energy, trials: 0, improvements: 0, min_relative_change: f64::INFINITY };
    for &amp in amplitudes {
        for _ in 0..samples {
            let phi: Vec<f64> = (0..interior.len() * n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let peak = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak == 0.0 {
                continue;
            }
            let mut w = field.clone();
            for (i, &v) in interior.iter().enumerate() {
                for a in 0..n {
                    w.values[v * n + a] += amp * phi[i * n + a] / peak;
                }
            }
            let e = energy_inf(&w, region);
            let rel = if energy > 0.0 { (e - energy) / energy } else { e };
            report.trials += 1;
            if e < energy {
                report.improvements += 1;
            }
            report.min_relative_change = report.min_relative_change.min(rel);
        }
    }
    Ok(report)
}

/// Geometry used to localise concentration. Radii default to multiples of
/// the largest element diameter when absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometryHints {
    #[serde(default)]
    pub corners: Vec<Point>,
    pub corner_radius: Option<f64>,
    pub band_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub exponent: f64,
    pub corner_mass: f64,
    pub corner_radius: f64,
    /// Mass within `band_width` of the region boundary.
    pub boundary_band_mass: f64,
    pub band_width: f64,
    /// `log10` of the max / min density ratio.
    pub log10_density_ratio: f64,
    pub density_ratio: f64,
    /// Total variation distance to the normalised area measure.
    pub tv_to_uniform: f64,
    /// `int |DU|^2 dsigma / E_inf^2`
    pub l2_ratio: f64,
}

pub fn concentration_diagnostics(
    measure: &SigmaMeasure,
    field: &FEField,
    hints: &GeometryHints,
) -> Result<ConcentrationReport> {
    let mesh = &field.mesh;
    let h = mesh.max_diameter();
    let corner_radius = hints.corner_radius.unwrap_or(3.0 * h);
    let band_width = hints.band_width.unwrap_or(2.0 * h);
    let region = &measure.region;
    let corner_mass = measure.mass_where(|_, k| {
        let b = mesh.barycenter(k);
        hints.corners.iter().any(|c| (b[0] - c[0]).hypot(b[1] - c[1]) < corner_radius)
    });
    let boundary_band_mass =
        measure.mass_where(|_, k| region.distance_to_boundary(mesh, mesh.barycenter(k)) < band_width);
    let lmax = measure.log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lmin = measure.log_density.iter().copied().fold(f64::INFINITY, f64::min);
    let log10_density_ratio = (lmax - lmin) / std::f64::consts::LN_10;
    let tv_to_uniform = 0.5
        * region
            .elements
            .iter()
            .zip(&measure.masses)
            .map(|(&k, m)| (m - mesh.element_area[k] / region.area).abs())
            .sum::<f64>();
    let e_inf = measure.grad_norms.iter().copied().fold(0.0, f64::max);
    let l2_ratio = if e_inf > 0.0 {
        measure.masses.iter().zip(&measure.grad_norms).map(|(m, g)| m * (g / e_inf).powi(2)).sum()
    } else {
        0.0
    };
    Ok(ConcentrationReport {
        exponent: measure.exponent,
        corner_mass,
        corner_radius,
        boundary_band_mass,
        band_width,
        log10_density_ratio,
        density_ratio: 10f64.powf(log10_density_ratio),
        tv_to_uniform,
        l2_ratio,
    })
}
