//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Quantities are recomputed here from the solved nodal values with small
//! independent oracles (gradients, measures, weighted forms), not through the
//! library's measure code. The process exits with status 0 even when a
//! criterion fails; set `LINFTY_ACCEPTANCE_STRICT=1` to turn failures into a
//! non-zero exit.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use linfty::experiments::{preset, ExperimentConfig, PRESETS};
use linfty::fem::{interpolate_boundary, Assembler, DofMap};
use linfty::measures::build_sigma;
use linfty::solver::{solve_from, ContinuationPlan, NewtonOptions, Solution, REPORTING_EXPONENTS};
use linfty::{
    build_square_mesh, resolve_subdomain, solve_p_laplace, solve_watching, BoundaryDatum, FEField, Mesh, PContext,
    Subdomain,
};

const REL_TOL: f64 = 1e-8;

struct Outcome {
    passed: bool,
    warning: Option<String>,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, warning: None, detail }
    }
}

// ---------------------------------------------------------------- oracles

/// Per-element Jacobian `DU_K` (rows = components) from nodal values.
fn element_jacobians(field: &FEField) -> Vec<Vec<[f64; 2]>> {
    let mesh = &field.mesh;
    let n = field.target_dim;
    mesh.triangles
        .iter()
        .map(|t| {
            let [a, b, c] = t.map(|v| mesh.vertices[v]);
            let two_area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            (0..n)
                .map(|al| {
                    let [ua, ub, uc] = t.map(|v| field.values[v * n + al]);
                    [
                        (ua * (b[1] - c[1]) + ub * (c[1] - a[1]) + uc * (a[1] - b[1])) / two_area,
                        (ua * (c[0] - b[0]) + ub * (a[0] - c[0]) + uc * (b[0] - a[0])) / two_area,
                    ]
                })
                .collect()
        })
        .collect()
}

fn frobenius(du: &[[f64; 2]]) -> f64 {
    du.iter().map(|r| r[0] * r[0] + r[1] * r[1]).sum::<f64>().sqrt()
}

fn area(mesh: &Mesh, k: usize) -> f64 {
    let [a, b, c] = mesh.triangles[k].map(|v| mesh.vertices[v]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Masses of `sigma_p` on the elements of `region`, in region order, with
/// the gradient norms they were built from.
struct Measure {
    elements: Vec<usize>,
    norms: Vec<f64>,
    masses: Vec<f64>,
    /// `log int_O |DU|^{p-2}`
    log_integral: f64,
    region_area: f64,
}

fn measure(field: &FEField, p: f64, region: &Subdomain) -> Measure {
    let mesh = &field.mesh;
    let jac = element_jacobians(field);
    let elements = region.elements.clone();
    let norms: Vec<f64> = elements.iter().map(|&k| frobenius(&jac[k])).collect();
    let logs: Vec<f64> = elements
        .iter()
        .zip(&norms)
        .map(|(&k, &g)| area(mesh, k).ln() + if p == 2.0 { 0.0 } else { (p - 2.0) * g.ln() })
        .collect();
    let total = log_sum_exp(&logs);
    let masses = logs.iter().map(|l| (l - total).exp()).collect();
    let region_area = elements.iter().map(|&k| area(mesh, k)).sum();
    Measure { elements, norms, masses, log_integral: total, region_area }
}

/// Largest `sigma({|DU| <= alpha Lbar}) - alpha^{p-2}` over the levels.
fn tail_excess(m: &Measure, p: f64, alphas: &[f64]) -> f64 {
    let log_lbar = (m.log_integral - m.region_area.ln()) / (p - 2.0);
    alphas
        .iter()
        .map(|&a| {
            let cut = a.ln() + log_lbar;
            let mass: f64 = m.norms.iter().zip(&m.masses).filter(|(g, _)| g.ln() <= cut).map(|(_, w)| w).sum();
            mass - a.powf(p - 2.0)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `max |sum_K sigma_K DU_K[a] . grad phi_v| / max sum_K sigma_K |DU_K[a]| |grad phi_v|`
/// over vertices whose whole star lies in the region and off the boundary.
fn divergence_free(field: &FEField, m: &Measure) -> f64 {
    let mesh = &field.mesh;
    let jac = element_jacobians(field);
    let mut mass = vec![None; mesh.num_elements()];
    for (&k, &w) in m.elements.iter().zip(&m.masses) {
        mass[k] = Some(w);
    }
    let mut star: Vec<Vec<usize>> = vec![Vec::new(); mesh.num_vertices()];
    for (k, t) in mesh.triangles.iter().enumerate() {
        for &v in t {
            star[v].push(k);
        }
    }
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for v in 0..mesh.num_vertices() {
        if mesh.is_boundary[v] || !star[v].iter().all(|&k| mass[k].is_some()) {
            continue;
        }
        for al in 0..field.target_dim {
            let (mut s, mut b) = (0.0, 0.0);
            for &k in &star[v] {
                let t = mesh.triangles[k];
                let i = t.iter().position(|&w| w == v).unwrap();
                let p0 = mesh.vertices[t[(i + 1) % 3]];
                let p1 = mesh.vertices[t[(i + 2) % 3]];
                let two_area = 2.0 * area(mesh, k);
                let g = [(p0[1] - p1[1]) / two_area, (p1[0] - p0[0]) / two_area];
                let du = jac[k][al];
                let w = mass[k].unwrap();
                s += w * (du[0] * g[0] + du[1] * g[1]);
                b += w * du[0].hypot(du[1]) * g[0].hypot(g[1]);
            }
            num = num.max(s.abs());
            den = den.max(b);
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn max_edge(mesh: &Mesh) -> f64 {
    mesh.triangles
        .iter()
        .flat_map(|t| (0..3).map(move |i| (t[i], t[(i + 1) % 3])))
        .map(|(a, b)| {
            let (p, q) = (mesh.vertices[a], mesh.vertices[b]);
            (p[0] - q[0]).hypot(p[1] - q[1])
        })
        .fold(0.0, f64::max)
}

fn corner_mass(mesh: &Mesh, m: &Measure, corners: &[[f64; 2]], radius: f64) -> f64 {
    m.elements
        .iter()
        .zip(&m.masses)
        .filter(|(&k, _)| {
            let t = mesh.triangles[k];
            let cx = t.iter().map(|&v| mesh.vertices[v][0]).sum::<f64>() / 3.0;
            let cy = t.iter().map(|&v| mesh.vertices[v][1]).sum::<f64>() / 3.0;
            corners.iter().any(|c| (cx - c[0]).hypot(cy - c[1]) < radius)
        })
        .map(|(_, w)| w)
        .sum()
}

/// `(max density / min density, TV distance to normalised area)`.
fn flatness(mesh: &Mesh, m: &Measure, p: f64) -> (f64, f64) {
    let gmax = m.norms.iter().copied().fold(0.0, f64::max);
    let gmin = m.norms.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = ((p - 2.0) * (gmax.ln() - gmin.ln())).exp();
    let tv = 0.5
        * m.elements.iter().zip(&m.masses).map(|(&k, w)| (w - area(mesh, k) / m.region_area).abs()).sum::<f64>();
    (ratio, tv)
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

// ---------------------------------------------------------------- runs

struct PresetRun {
    config: ExperimentConfig,
    regions: Vec<Subdomain>,
    solution: Solution,
}

fn run_preset(name: &str, n: usize) -> PresetRun {
    let config = preset(name, n).expect("preset");
    let mesh = Arc::new(config.mesh.build().expect("mesh"));
    let regions: Vec<Subdomain> =
        config.regions.iter().map(|r| resolve_subdomain(&mesh, &r.spec).expect("region")).collect();
    let datum = config.datum().expect("datum");
    let solution = solve_watching(&mesh, &datum, &config.plan, &config.newton, &regions)
        .unwrap_or_else(|e| panic!("{name} at n = {n}: {e}"));
    PresetRun { config, regions, solution }
}

// ---------------------------------------------------------------- criteria

fn affine_exactness() -> Outcome {
    let start = Instant::now();
    let (a, b) = ([[1.0, 0.5], [-0.3, 2.0]], [0.1, -0.2]);
    let datum = BoundaryDatum::affine(a.to_vec(), b.to_vec()).unwrap();
    let mesh = Arc::new(build_square_mesh(8).unwrap());
    let sol = solve_p_laplace(&mesh, &datum, &ContinuationPlan::up_to(100.0).unwrap(), &NewtonOptions::default())
        .unwrap();
    let whole = Subdomain::whole(&mesh);
    let (mut nodal, mut weight) = (0.0f64, 0.0f64);
    for p in [2.0, 10.0, 100.0] {
        let u = sol.field_at(p).unwrap();
        for (v, x) in mesh.vertices.iter().enumerate() {
            for al in 0..2 {
                let exact = a[al][0] * x[0] + a[al][1] * x[1] + b[al];
                nodal = nodal.max((u.values[v * 2 + al] - exact).abs());
            }
        }
        let m = measure(u, p, &whole);
        for (&k, w) in m.elements.iter().zip(&m.masses) {
            weight = weight.max((w - area(&mesh, k) / m.region_area).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        nodal <= 1e-10 && weight <= 1e-12 && secs < 5.0,
        format!("max nodal deviation {nodal:.2e} (<= 1e-10), max weight deviation {weight:.2e} (<= 1e-12), {secs:.2} s (< 5 s)"),
    )
}

fn harmonic_rate() -> Outcome {
    let start = Instant::now();
    let datum = BoundaryDatum::harmonic_saddle();
    let plan = ContinuationPlan::new(vec![2.0]).unwrap();
    let exact = |x: &[f64; 2]| x[0] * x[0] - x[1] * x[1];
    // Solve from zero interior values so that the answer is not the initial guess.
    let error = |n: usize| {
        let mesh = Arc::new(build_square_mesh(n).unwrap());
        let mut initial = interpolate_boundary(&mesh, &datum).unwrap();
        for (v, b) in mesh.is_boundary.iter().enumerate() {
            if !b {
                initial.values[v] = 0.0;
            }
        }
        let sol = solve_from(initial, &plan, &NewtonOptions::default(), &[]).unwrap();
        let u = sol.last();
        mesh.vertices.iter().enumerate().map(|(v, x)| (u.values[v] - exact(x)).abs()).fold(0.0, f64::max)
    };
    let (e16, e32) = (error(16), error(32));
    let ratio = e16 / e32;
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        (3.0..=5.0).contains(&ratio) && secs < 30.0,
        format!("L-inf errors {e16:.3e} (n = 16), {e32:.3e} (n = 32), ratio {ratio:.3} in [3, 5], {secs:.2} s (< 30 s)"),
    )
}

fn singular_rate() -> Outcome {
    let start = Instant::now();
    let datum = BoundaryDatum::aronsson();
    let mut hs = Vec::new();
    let mut errors = Vec::new();
    let mut rows = Vec::new();
    for n in [8, 16, 32] {
        let mesh = Arc::new(build_square_mesh(n).unwrap());
        let h = max_edge(&mesh);
        let p = h.powf(-0.5).round().max(2.0);
        let plan = ContinuationPlan::up_to(p).unwrap();
        let sol = solve_p_laplace(&mesh, &datum, &plan, &NewtonOptions::default()).unwrap();
        let u = sol.last();
        let e = mesh
            .vertices
            .iter()
            .enumerate()
            .map(|(v, x)| (u.values[v] - (x[0].abs().powf(4.0 / 3.0) - x[1].abs().powf(4.0 / 3.0))).abs())
            .fold(0.0, f64::max);
        rows.push(format!("n = {n}: p = {p}, error {e:.3e}"));
        hs.push(h.ln());
        errors.push(e);
    }
    let logs: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let slope = least_squares_slope(&hs, &logs);
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        decreasing && (0.15..=0.6).contains(&slope) && secs < 600.0,
        format!("{}; strictly decreasing {decreasing}, fitted slope {slope:.3} in [0.15, 0.6], {secs:.1} s", rows.join("; ")),
    )
}

fn newton_budget(runs: &[PresetRun]) -> Outcome {
    let mut worst = (String::new(), 0.0, 0usize);
    let mut bad = Vec::new();
    for r in runs {
        for s in &r.solution.report.steps {
            if s.iterations > worst.2 {
                worst = (r.config.name.clone(), s.exponent, s.iterations);
            }
            if !s.converged || s.iterations > 20 || s.relative_residual() > REL_TOL {
                bad.push(format!("{} p = {} ({} iterations, relative residual {:.1e})", r.config.name, s.exponent, s.iterations, s.relative_residual()));
            }
        }
    }
    let steps: usize = runs.iter().map(|r| r.solution.report.steps.len()).sum();
    Outcome::new(
        bad.is_empty(),
        format!(
            "{steps} steps over {} presets at n = 32, most iterations {} ({} p = {}); failures: {}",
            runs.len(),
            worst.2,
            worst.0,
            worst.1,
            if bad.is_empty() { "none".into() } else { bad.join(", ") }
        ),
    )
}

fn tail_bound(runs: &[PresetRun]) -> Outcome {
    let alphas = [0.3, 0.5, 0.7, 0.9];
    let mut worst = f64::NEG_INFINITY;
    let mut checks = 0;
    let mut bad = Vec::new();
    for r in runs {
        for (p, u) in r.solution.fields.iter().filter(|(p, _)| *p > 2.0) {
            for (entry, region) in r.config.regions.iter().zip(&r.regions) {
                let excess = tail_excess(&measure(u, *p, region), *p, &alphas);
                checks += alphas.len();
                worst = worst.max(excess);
                if excess > 1e-12 {
                    bad.push(format!("{} {} p = {p}", r.config.name, entry.spec.label()));
                }
            }
        }
    }
    Outcome::new(
        bad.is_empty(),
        format!("{checks} (preset, region, p, alpha) checks, max sigma(tail) - alpha^(p-2) = {worst:.2e} (<= 1e-12); violations: {}", if bad.is_empty() { "none".into() } else { bad.join(", ") }),
    )
}

fn divergence_free_all(runs: &[PresetRun]) -> Outcome {
    let limit = 100.0 * REL_TOL;
    let mut worst = (0.0f64, String::new());
    for r in runs {
        for (p, u) in &r.solution.fields {
            for (entry, region) in r.config.regions.iter().zip(&r.regions) {
                let d = divergence_free(u, &measure(u, *p, region));
                if d > worst.0 {
                    worst = (d, format!("{} {} p = {p}", r.config.name, entry.spec.label()));
                }
            }
        }
    }
    Outcome::new(worst.0 <= limit, format!("max normalised violation {:.2e} at {} (<= {limit:.0e})", worst.0, worst.1))
}

fn jacobian_consistency() -> Outcome {
    let mesh = Arc::new(build_square_mesh(6).unwrap());
    let asm = Assembler::new(&mesh, 2);
    let dofs = DofMap::new(&mesh, 2);
    let mut u = interpolate_boundary(&mesh, &BoundaryDatum::vec_eikonal()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bump: Vec<f64> = (0..dofs.len()).map(|_| rng.gen_range(-0.2..0.2)).collect();
    dofs.add_scaled(&mut u, 1.0, &bump);
    let dir: Vec<f64> = (0..dofs.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut ratios = Vec::new();
    for p in [3.0, 6.0, 20.0] {
        let ctx = PContext::for_field(&u, p, 0.0).unwrap();
        let r0 = asm.residual(&u, &ctx).unwrap();
        let jv = asm.jacobian(&u, &ctx).unwrap().mul_vec(&dir);
        let errs: Vec<f64> = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&t| {
                let mut ut = u.clone();
                dofs.add_scaled(&mut ut, t, &dir);
                let rt = asm.residual(&ut, &ctx).unwrap();
                rt.iter().zip(&r0).zip(&jv).map(|((a, b), j)| ((a - b) / t - j).powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        ratios.extend(errs.windows(2).map(|w| w[0] / w[1]));
    }
    let ok = ratios.iter().all(|r| (5.0..=20.0).contains(r));
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    Outcome::new(ok, format!("error ratios per decade at p = 3, 6, 20: [{}] in [5, 20]", shown.join(", ")))
}

fn aronsson_concentration(fig1: &PresetRun, fig2: &PresetRun) -> Outcome {
    let ps = [4.0, 10.0, 20.0, 100.0];
    let masses = |r: &PresetRun| -> Vec<f64> {
        let mesh = &r.solution.fields[0].1.mesh;
        let radius = 3.0 * max_edge(mesh);
        let corners = &r.config.regions[0].hints.corners;
        ps.iter()
            .map(|&p| corner_mass(mesh, &measure(r.solution.field_at(p).unwrap(), p, &r.regions[0]), corners, radius))
            .collect()
    };
    let (m1, m2) = (masses(fig1), masses(fig2));
    let monotone = m2.windows(2).all(|w| w[1] > w[0]);
    let thresholds = m2[3] > 0.9 && m1[3] > 0.8;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    let detail = format!(
        "fig2 four-corner mass at p = 4, 10, 20, 100: [{}] (increasing, > 0.9 at p = 100); fig1 corner mass [{}] (> 0.8 at p = 100)",
        fmt(&m2),
        fmt(&m1)
    );
    let mut out = Outcome::new(monotone, detail);
    if monotone && !thresholds {
        out.warning = Some("monotone, but a corner-mass threshold is not met".into());
    }
    out
}

fn eikonal_flatness(eikonal: &[&PresetRun], fig1: &PresetRun) -> Outcome {
    let p = 100.0;
    let mut ok = true;
    let mut parts = Vec::new();
    for r in eikonal {
        let u = r.solution.field_at(p).unwrap();
        let (ratio, tv) = flatness(&u.mesh, &measure(u, p, &r.regions[0]), p);
        let pass = ratio <= 10.0 && tv <= 0.2;
        ok &= pass;
        parts.push(format!("{} ratio {ratio:.3e} TV {tv:.3}{}", r.config.name, if pass { "" } else { " (fails)" }));
    }
    let u = fig1.solution.field_at(p).unwrap();
    let (ratio, _) = flatness(&u.mesh, &measure(u, p, &fig1.regions[0]), p);
    ok &= ratio > 1e3;
    parts.push(format!("aronsson_fig1 ratio {ratio:.3e} (> 1e3)"));
    Outcome::new(ok, format!("at p = 100 (eikonal: ratio <= 10, TV <= 0.2): {}", parts.join("; ")))
}

fn scaling_invariance(fig1: &PresetRun) -> Outcome {
    let mut worst = 0.0f64;
    for (p, u) in &fig1.solution.fields {
        let a = build_sigma(u, *p, &fig1.regions[0]).unwrap();
        let b = build_sigma(&u.scaled(2.0), *p, &fig1.regions[0]).unwrap();
        for (x, y) in a.masses.iter().zip(&b.masses) {
            worst = worst.max((x - y).abs());
        }
    }
    Outcome::new(
        worst <= 1e-12,
        format!("max weight change under U -> 2U over {} exponents: {worst:.2e} (<= 1e-12)", fig1.solution.fields.len()),
    )
}

fn main() {
    let strict = std::env::var_os("LINFTY_ACCEPTANCE_STRICT").is_some();
    let start = Instant::now();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        let tag = match (&o.warning, o.passed) {
            (_, false) => "FAIL",
            (Some(_), true) => "WARN",
            (None, true) => "PASS",
        };
        let warn = o.warning.as_ref().map(|w| format!(" [warning: {w}]")).unwrap_or_default();
        println!("{tag} {name}: {}{warn}", o.detail);
        results.push((name, o));
    };

    report("affine exactness", affine_exactness());
    report("harmonic patch rate", harmonic_rate());
    report("singular rate, p = h^-1/2", singular_rate());

    let runs32: Vec<PresetRun> = PRESETS.iter().map(|name| run_preset(name, 32)).collect();
    report("Newton budget", newton_budget(&runs32));
    report("tail bound", tail_bound(&runs32));
    report("discrete divergence-free", divergence_free_all(&runs32));
    report("Jacobian consistency", jacobian_consistency());

    let fig1 = run_preset("aronsson_fig1", 64);
    let fig2 = run_preset("aronsson_fig2", 64);
    report("Aronsson concentration", aronsson_concentration(&fig1, &fig2));
    let eikonal: Vec<PresetRun> = ["scalar_eikonal", "vec_eikonal", "diffeo"].iter().map(|n| run_preset(n, 64)).collect();
    let refs: Vec<&PresetRun> = eikonal.iter().collect();
    report("eikonal flatness", eikonal_flatness(&refs, &fig1));
    report("sigma scaling invariance", scaling_invariance(&fig1));

    let passed = results.iter().filter(|(_, o)| o.passed).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.1} s (reporting exponents {:?})",
        results.len(),
        start.elapsed().as_secs_f64(),
        REPORTING_EXPONENTS
    );
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
