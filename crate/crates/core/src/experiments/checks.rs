//! Invariant suite behind the `check` subcommand.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{preset, run_experiment, validate_summary, DIVERGENCE_FREE_FACTOR};
use crate::boundary_data::BoundaryDatum;
use crate::error::Result;
use crate::fem::{directional_fd_errors, interpolate_boundary, Assembler, PContext};
use crate::measures::build_sigma;
use crate::mesh::{build_annulus_mesh, build_square_mesh, Subdomain};
use crate::solver::{solve_p_laplace, ContinuationPlan, NewtonOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, outcome: Result<(bool, String)>) -> CheckResult {
    match outcome {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult { name, passed: false, detail: format!("error: {e}") },
    }
}

fn meshes(n: usize) -> Result<(bool, String)> {
    build_square_mesh(n)?.validate()?;
    build_annulus_mesh(3, 16, 0.2, 0.8)?.validate()?;
    Ok((true, format!("square n = {n} and annulus 3 x 16 valid")))
}

fn affine_exactness(n: usize) -> Result<(bool, String)> {
    let mesh = Arc::new(build_square_mesh(n)?);
    let datum = BoundaryDatum::affine(vec![[1.0, 0.5], [-0.3, 2.0]], vec![0.1, -0.2])?;
    let interp = interpolate_boundary(&mesh, &datum)?;
    let sol = solve_p_laplace(&mesh, &datum, &ContinuationPlan::up_to(100.0)?, &NewtonOptions::default())?;
    let whole = Subdomain::whole(&mesh);
    let (mut dev, mut wdev) = (0.0f64, 0.0f64);
    for p in [2.0, 10.0, 100.0] {
        let u = sol.field_at(p).expect("reporting exponent on the ladder");
        dev = dev.max(u.max_abs_diff(&interp));
        let s = build_sigma(u, p, &whole)?;
        for (m, &k) in s.masses.iter().zip(&whole.elements) {
            wdev = wdev.max((m - mesh.element_area[k] / whole.area).abs());
        }
    }
    Ok((dev <= 1e-10 && wdev <= 1e-12, format!("nodal deviation {dev:.2e}, weight deviation {wdev:.2e}")))
}

fn jacobian_consistency(n: usize) -> Result<(bool, String)> {
    let mesh = Arc::new(build_square_mesh(n)?);
    let asm = Assembler::new(&mesh, 2).sequential();
    let mut field = interpolate_boundary(&mesh, &BoundaryDatum::vec_eikonal())?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let bump: Vec<f64> = (0..asm.dofs.len()).map(|_| rng.gen_range(-0.2..0.2)).collect();
    asm.dofs.add_scaled(&mut field, 1.0, &bump);
    let dir: Vec<f64> = (0..asm.dofs.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut ratios = Vec::new();
    for p in [3.0, 6.0, 20.0] {
        let ctx = PContext::for_field(&field, p, 0.0)?;
        let e = directional_fd_errors(&asm, &field, &ctx, &dir, &[1e-4, 1e-5, 1e-6])?;
        ratios.extend(e.windows(2).map(|w| w[0] / w[1]));
    }
    let ok = ratios.iter().all(|r| (5.0..=20.0).contains(r));
    Ok((ok, format!("error ratios per decade {ratios:.2?}")))
}

fn scaling_invariance(n: usize) -> Result<(bool, String)> {
    let mesh = Arc::new(build_square_mesh(n)?);
    let u = interpolate_boundary(&mesh, &BoundaryDatum::aronsson())?;
    let whole = Subdomain::whole(&mesh);
    let mut worst = 0.0f64;
    for p in [4.0, 20.0, 100.0] {
        let a = build_sigma(&u, p, &whole)?;
        let b = build_sigma(&u.scaled(2.0), p, &whole)?;
        for (x, y) in a.masses.iter().zip(&b.masses) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok((worst <= 1e-12, format!("max weight change {worst:.2e}")))
}

fn preset_run(n: usize, root: &Path) -> Result<(bool, String)> {
    let mut cfg = preset("aronsson_fig1", n)?;
    cfg.out_dir = "check_aronsson_fig1".into();
    let summary = run_experiment(&cfg, root)?;
    let back = validate_summary(&root.join(&cfg.out_dir).join("summary.json"))?;
    let tail = summary.tail_violations();
    let div = summary.max_divergence_free();
    let iters = summary.solve.max_iterations();
    let ok = back == summary
        && summary.solve.converged
        && iters <= cfg.newton.max_iters
        && tail.is_empty()
        && div <= DIVERGENCE_FREE_FACTOR * cfg.newton.rel_tol;
    Ok((
        ok,
        format!(
            "max Newton iterations {iters}, tail violations {}, divergence-free {div:.2e}, schema valid",
            tail.len()
        ),
    ))
}

/// Runs every check on meshes of parameter `n`, writing the preset run
/// under `root`.
pub fn invariant_suite(n: usize, root: &Path) -> Vec<CheckResult> {
    vec![
        result("mesh validity", meshes(n)),
        result("affine exactness", affine_exactness(n)),
        result("jacobian consistency", jacobian_consistency(n)),
        result("sigma scaling invariance", scaling_invariance(n)),
        result("preset run and summary schema", preset_run(n, root)),
    ]
}
