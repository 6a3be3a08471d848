//! Damped Newton with `p`-continuation.
//!
//! Each exponent on the ladder is solved starting from the converged field of
//! the previous one. A Newton step solves `J delta = -R` on the interior
//! unknowns and backtracks `t = 1, 1/2, 1/4, ...` until the residual norm
//! strictly decreases.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::boundary_data::BoundaryDatum;
use crate::error::{Divergence, Error, Result};
use crate::fem::{interpolate_boundary, Assembler, FEField, PContext};
use crate::mesh::{build_square_mesh, Mesh, Subdomain};
use crate::sparse::{make_solver, norm2, CsrMatrix, LinearSolverKind, SpdSolver};

/// Exponents at which results are reported and plotted.
pub const REPORTING_EXPONENTS: [f64; 5] = [2.0, 4.0, 10.0, 20.0, 100.0];

/// Largest exponent accepted without an explicit override.
pub const DEFAULT_P_CAP: f64 = 100.0;

pub const DEFAULT_LADDER: [f64; 20] = [
    2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 12.0, 14.0, 17.0, 20.0, 25.0, 32.0, 40.0, 50.0,
    64.0, 80.0, 100.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub rel_tol: f64,
    pub max_iters: usize,
    pub initial_step: f64,
    pub backtrack_factor: f64,
    pub min_step: f64,
    pub linear_tol: f64,
    pub linear_solver: LinearSolverKind,
    /// Regularisation relative to the largest element gradient.
    pub eps_rel: f64,
    /// Residuals below `abs_floor` times the cancellation bound count as
    /// converged: they are at the round-off level of the assembly.
    pub abs_floor: f64,
    /// Largest step length tried when expanding an accepted full step; 1
    /// disables expansion.
    pub max_step: f64,
    pub sequential: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_iters: 20,
            initial_step: 1.0,
            backtrack_factor: 0.5,
            min_step: 2f64.powi(-30),
            linear_tol: 1e-10,
            linear_solver: LinearSolverKind::Direct,
            eps_rel: 1e-10,
            abs_floor: 1e-13,
            max_step: 128.0,
            sequential: false,
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rel_tol > 0.0
            && self.rel_tol < 1.0
            && self.max_iters >= 1
            && self.initial_step > 0.0
            && self.backtrack_factor > 0.0
            && self.backtrack_factor < 1.0
            && self.min_step > 0.0
            && self.linear_tol > 0.0
            && self.eps_rel >= 0.0
            && self.abs_floor >= 0.0
            && self.max_step >= self.initial_step;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid Newton options {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationPlan {
    pub ladder: Vec<f64>,
    /// Permit exponents above [`DEFAULT_P_CAP`].
    #[serde(default)]
    pub allow_above_cap: bool,
}

impl Default for ContinuationPlan {
    fn default() -> Self {
        Self { ladder: DEFAULT_LADDER.to_vec(), allow_above_cap: false }
    }
}

impl ContinuationPlan {
    pub fn new(ladder: Vec<f64>) -> Result<Self> {
        let plan = Self { ladder, allow_above_cap: false };
        plan.validate()?;
        Ok(plan)
    }

    /// The default ladder cut at `p_final`, which becomes the last rung.
    pub fn up_to(p_final: f64) -> Result<Self> {
        let mut ladder: Vec<f64> = DEFAULT_LADDER.iter().copied().filter(|&p| p < p_final).collect();
        if p_final > 2.0 || ladder.is_empty() {
            ladder.push(p_final);
        }
        Self::new(ladder)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let l = &self.ladder;
        if l.first() != Some(&2.0) {
            return bad("ladder must start at p = 2".into());
        }
        for w in l.windows(2) {
            if !(w[1] > w[0]) {
                return bad(format!("ladder not strictly increasing at {} -> {}", w[0], w[1]));
            }
            if w[0] >= 10.0 && w[1] / w[0] > 1.5 {
                return bad(format!("ladder ratio {} / {} exceeds 1.5", w[1], w[0]));
            }
        }
        let last = *l.last().unwrap();
        if !last.is_finite() || (last > DEFAULT_P_CAP && !self.allow_above_cap) {
            return bad(format!("p = {last} above the cap {DEFAULT_P_CAP}"));
        }
        for r in REPORTING_EXPONENTS {
            if r <= last && !l.contains(&r) {
                return bad(format!("reporting exponent {r} missing from the ladder"));
            }
        }
        Ok(())
    }
}

/// Diagnostics of one damped Newton update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonStepInfo {
    pub damping: f64,
    pub merit_before: f64,
    pub merit_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub exponent: f64,
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    /// Residual norms re-evaluated with zero regularisation.
    pub initial_residual_unregularised: f64,
    pub final_residual_unregularised: f64,
    /// Group-scaled residual at the final iterate, without regularisation.
    pub final_scaled_residual: f64,
    /// `|B|_2` of the cancellation bounds at the initial iterate.
    pub bound_norm: f64,
    pub residual_history: Vec<f64>,
    /// Row-scaled residual norms after each accepted step.
    pub merit_history: Vec<f64>,
    pub damping_history: Vec<f64>,
    pub wall_time_s: f64,
    pub converged: bool,
}

impl StepReport {
    /// Final over initial residual norm. A step that needed no iteration
    /// is measured against the cancellation bound instead.
    pub fn relative_residual(&self) -> f64 {
        if self.iterations == 0 {
            if self.bound_norm > 0.0 {
                self.final_residual_unregularised / self.bound_norm
            } else {
                0.0
            }
        } else if self.initial_residual_unregularised > 0.0 {
            self.final_residual_unregularised / self.initial_residual_unregularised
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub steps: Vec<StepReport>,
    pub converged: bool,
}

impl SolveReport {
    pub fn max_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.iterations).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// One field per ladder exponent, in ladder order.
    pub fields: Vec<(f64, FEField)>,
    pub report: SolveReport,
}

impl Solution {
    pub fn field_at(&self, p: f64) -> Option<&FEField> {
        self.fields.iter().find(|(q, _)| *q == p).map(|(_, f)| f)
    }

    pub fn last(&self) -> &FEField {
        &self.fields.last().expect("non-empty ladder").1
    }
}

/// A solve at one exponent that stopped early. `cause` is `None` when the
/// line search found no decreasing step.
#[derive(Debug)]
pub struct StepFailure {
    pub last_iterate: FEField,
    pub report: StepReport,
    pub cause: Option<Error>,
}

impl StepFailure {
    fn new(last_iterate: FEField, report: StepReport, cause: Option<Error>) -> Self {
        Self { last_iterate, report, cause }
    }
}

/// Newton iteration on a fixed mesh, reusing the assembly pattern and the
/// linear solver's ordering across steps and exponents.
pub struct NewtonSolver {
    pub assembler: Assembler,
    linear: Box<dyn SpdSolver + Send>,
    pub opts: NewtonOptions,
    /// Row groups with their own convergence test; the first is all rows.
    groups: Vec<Vec<usize>>,
}

impl NewtonSolver {
    pub fn new(mesh: &Mesh, target_dim: usize, opts: NewtonOptions) -> Result<Self> {
        opts.validate()?;
        let mut assembler = Assembler::new(mesh, target_dim);
        assembler.parallel = !opts.sequential;
        let linear = make_solver(opts.linear_solver, opts.linear_tol);
        let groups = vec![(0..assembler.dofs.len()).collect()];
        Ok(Self { assembler, linear, opts, groups })
    }

    /// Adds the rows of the interior vertices of each region as a group
    /// that must be resolved relative to its own largest bound.
    pub fn watch(&mut self, mesh: &Mesh, regions: &[Subdomain]) {
        let dofs = &self.assembler.dofs;
        for region in regions {
            let rows: Vec<usize> = region
                .interior_vertices(mesh)
                .into_iter()
                .flat_map(|v| (0..dofs.target_dim).filter_map(move |a| dofs.dof(v, a)))
                .collect();
            if !rows.is_empty() {
                self.groups.push(rows);
            }
        }
    }

    fn evaluate(&self, field: &FEField, ctx: &PContext) -> Result<Evaluation> {
        let (residual, bounds) = self.assembler.residual_and_bounds(field, ctx)?;
        Ok(Evaluation::new(residual, bounds, &self.groups))
    }

    /// Solves `J x = b`. At large `p` the weights of flat elements underflow
    /// and rows of `J` can vanish; their unknowns are decoupled and get a
    /// unit diagonal. If the factorisation still breaks down, each diagonal
    /// entry is raised by a growing relative shift. Relative shifts leave
    /// rows of very different scale equally well resolved, and the shifted
    /// matrix is SPD, so the result remains a descent direction.
    fn solve_shifted(&mut self, mut jac: CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
        let mut diag = jac.diagonal();
        for (i, d) in diag.iter_mut().enumerate() {
            if *d == 0.0 {
                jac.add(i, i, 1.0);
                *d = 1.0;
            }
        }
        let mut applied = 0.0;
        let mut shift = 1e-14;
        loop {
            match self.linear.solve(&jac, b) {
                Err(Error::SingularSystem(_)) if applied < 1e-2 => {
                    for (i, d) in diag.iter().enumerate() {
                        jac.add(i, i, (shift - applied) * d.abs());
                    }
                    applied = shift;
                    shift *= 100.0;
                }
                other => return other,
            }
        }
    }

    /// One damped Newton update from `field`, whose residual evaluation is
    /// `current`. The step is accepted when the merit strictly decreases:
    /// the residual norm, or with `scaled` the group-scaled norm using the
    /// scales of `current`. Returns `None` when no admissible damping
    /// factor achieves that.
    ///
    /// An accepted full step is doubled while the merit keeps decreasing. Near vertices where `|DU|` should vanish, Newton
    /// only removes a fraction `1/(p-1)` of the gradient per step, and the
    /// expansion restores fast progress there.
    pub fn step(
        &mut self,
        field: &FEField,
        ctx: &PContext,
        current: &Evaluation,
        scaled: bool,
    ) -> Result<(Option<(FEField, Evaluation)>, NewtonStepInfo)> {
        let jac = self.assembler.jacobian(field, ctx)?;
        let rhs: Vec<f64> = current.residual.iter().map(|v| -v).collect();
        let delta = self.solve_shifted(jac, &rhs)?;
        let groups = &self.groups;
        let merit_of = |e: &Evaluation| if scaled { current.merit(&e.residual, groups) } else { e.norm };
        let merit = merit_of(current);
        let mut t = self.opts.initial_step;
        while t >= self.opts.min_step {
            let mut trial = field.clone();
            self.assembler.dofs.add_scaled(&mut trial, t, &delta);
            if let Ok(e) = self.evaluate(&trial, ctx) {
                let trial_merit = merit_of(&e);
                if trial_merit < merit {
                    let mut best = (t, trial, e, trial_merit);
                    let expand = t == self.opts.initial_step;
                    while expand && 2.0 * best.0 <= self.opts.max_step {
                        let t2 = 2.0 * best.0;
                        let mut wider = field.clone();
                        self.assembler.dofs.add_scaled(&mut wider, t2, &delta);
                        match self.evaluate(&wider, ctx) {
                            Ok(e2) if merit_of(&e2) < best.3 => {
                                let m2 = merit_of(&e2);
                                best = (t2, wider, e2, m2);
                            }
                            _ => break,
                        }
                    }
                    let (t, trial, e, trial_merit) = best;
                    let info = NewtonStepInfo { damping: t, merit_before: merit, merit_after: trial_merit };
                    return Ok((Some((trial, e)), info));
                }
            }
            t *= self.opts.backtrack_factor;
        }
        Ok((None, NewtonStepInfo { damping: 0.0, merit_before: merit, merit_after: merit }))
    }

    /// Solves the system at exponent `p` from the initial iterate `field`.
    ///
    /// Iteration stops once the residual norm has dropped by `rel_tol` (or
    /// reached the round-off floor) and every row group `G` satisfies
    /// `max_G |R_i| <= rel_tol max_G B_i`. The second test keeps watched
    /// regions where `|DU|` is small, whose rows are many orders of
    /// magnitude below the global norm at large `p`, from being left
    /// unresolved. The line search switches to the group-scaled merit once
    /// the first test holds.
    pub fn solve_exponent(&mut self, field: FEField, p: f64) -> std::result::Result<(FEField, StepReport), StepFailure> {
        let start = Instant::now();
        let mut report = StepReport {
            exponent: p,
            iterations: 0,
            initial_residual: 0.0,
            final_residual: 0.0,
            initial_residual_unregularised: 0.0,
            final_residual_unregularised: 0.0,
            final_scaled_residual: 0.0,
            bound_norm: 0.0,
            residual_history: Vec::new(),
            merit_history: Vec::new(),
            damping_history: Vec::new(),
            wall_time_s: 0.0,
            converged: false,
        };
        let ctx = match PContext::for_field(&field, p, self.opts.eps_rel) {
            Ok(c) => c,
            Err(e) => return Err(StepFailure::new(field, report, Some(e))),
        };
        let plain = ctx.with_epsilon(0.0);
        let (first, first_plain) = match (self.evaluate(&field, &ctx), self.evaluate(&field, &plain)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return Err(StepFailure::new(field, report, Some(e))),
        };
        let tol = self.opts.rel_tol;
        let floor = self.opts.abs_floor * norm2(&first.bounds);
        let small = |e: &Evaluation, r0: f64| e.norm <= tol * r0 || e.norm <= floor;
        let done = |e: &Evaluation, r0: f64| small(e, r0) && e.scaled_max <= tol;
        report.initial_residual = first.norm;
        report.initial_residual_unregularised = first_plain.norm;
        report.bound_norm = norm2(&first_plain.bounds);
        report.residual_history.push(first.norm);

        let r0 = first.norm;
        let mut current = field;
        let mut eval = first;
        while !done(&eval, r0) && report.iterations < self.opts.max_iters {
            match self.step(&current, &ctx, &eval, small(&eval, r0)) {
                Ok((Some((next, e)), info)) => {
                    current = next;
                    eval = e;
                    report.iterations += 1;
                    report.residual_history.push(eval.norm);
                    report.merit_history.push(info.merit_after);
                    report.damping_history.push(info.damping);
                }
                Ok((None, _)) => {
                    report.final_residual = eval.norm;
                    report.wall_time_s = start.elapsed().as_secs_f64();
                    return Err(StepFailure::new(current, report, None));
                }
                Err(e) => {
                    report.wall_time_s = start.elapsed().as_secs_f64();
                    return Err(StepFailure::new(current, report, Some(e)));
                }
            }
        }
        report.final_residual = eval.norm;
        let converged = done(&eval, r0);
        match self.evaluate(&current, &plain) {
            Ok(fp) => {
                report.final_residual_unregularised = fp.norm;
                report.final_scaled_residual = fp.scaled_max;
                report.converged = converged && done(&fp, first_plain.norm);
            }
            Err(e) => return Err(StepFailure::new(current, report, Some(e))),
        }
        report.wall_time_s = start.elapsed().as_secs_f64();
        Ok((current, report))
    }
}

/// Residual of an iterate with its per-row cancellation bounds.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub residual: Vec<f64>,
    pub bounds: Vec<f64>,
    pub norm: f64,
    /// Largest bound of each row group.
    pub scales: Vec<f64>,
    /// `max_G (max_G |R_i|) / (max_G B_i)` over the row groups.
    pub scaled_max: f64,
}

impl Evaluation {
    fn new(residual: Vec<f64>, bounds: Vec<f64>, groups: &[Vec<usize>]) -> Self {
        let norm = norm2(&residual);
        let norm = if norm.is_finite() { norm } else { f64::INFINITY };
        let scales: Vec<f64> = groups.iter().map(|g| g.iter().map(|&i| bounds[i]).fold(0.0, f64::max)).collect();
        let scaled_max = groups
            .iter()
            .zip(&scales)
            .filter(|(_, &b)| b > 0.0)
            .map(|(g, b)| g.iter().map(|&i| residual[i].abs()).fold(0.0, f64::max) / b)
            .fold(0.0, f64::max);
        Self { residual, bounds, norm, scales, scaled_max }
    }

    /// `(sum_G |R_G|^2 / s_G^2)^{1/2}` of another residual, using these
    /// group scales.
    pub fn merit(&self, residual: &[f64], groups: &[Vec<usize>]) -> f64 {
        let s: f64 = groups
            .iter()
            .zip(&self.scales)
            .filter(|(_, &b)| b > 0.0)
            .map(|(g, b)| g.iter().map(|&i| (residual[i] / b).powi(2)).sum::<f64>())
            .sum();
        if s.is_finite() {
            s.sqrt()
        } else {
            f64::INFINITY
        }
    }
}

/// One damped Newton step at the context's exponent.
pub fn newton_step(field: &FEField, ctx: &PContext, opts: &NewtonOptions) -> Result<(FEField, NewtonStepInfo)> {
    let mut solver = NewtonSolver::new(&field.mesh, field.target_dim, opts.clone())?;
    let current = solver.evaluate(field, ctx)?;
    match solver.step(field, ctx, &current, false)? {
        (Some((next, _)), info) => Ok((next, info)),
        (None, _) => Err(Error::Divergence(Box::new(Divergence {
            exponent: ctx.p,
            last_iterate: field.clone(),
            report: SolveReport::default(),
        }))),
    }
}

/// Runs the continuation ladder from an initial iterate carrying the
/// Dirichlet values. Each step also resolves the equations on the interior
/// of every `watched` region relative to their own scale.
pub fn solve_from(
    initial: FEField,
    plan: &ContinuationPlan,
    opts: &NewtonOptions,
    watched: &[Subdomain],
) -> Result<Solution> {
    plan.validate()?;
    let mut solver = NewtonSolver::new(&initial.mesh, initial.target_dim, opts.clone())?;
    solver.watch(&initial.mesh, watched);
    let mut report = SolveReport { steps: Vec::new(), converged: true };
    let mut fields = Vec::with_capacity(plan.ladder.len());
    let mut current = initial;
    for &p in &plan.ladder {
        match solver.solve_exponent(current, p) {
            Ok((field, step)) => {
                report.converged &= step.converged;
                report.steps.push(step);
                fields.push((p, field.clone()));
                current = field;
            }
            Err(fail) => {
                report.steps.push(fail.report);
                report.converged = false;
                return Err(match fail.cause {
                    None => Error::Divergence(Box::new(Divergence {
                        exponent: p,
                        last_iterate: fail.last_iterate,
                        report,
                    })),
                    Some(e) => e,
                });
            }
        }
    }
    Ok(Solution { fields, report })
}

/// Solves the Galerkin `p`-Laplace system with Dirichlet data `datum` for
/// every exponent of the plan.
pub fn solve_p_laplace(
    mesh: &Arc<Mesh>,
    datum: &BoundaryDatum,
    plan: &ContinuationPlan,
    opts: &NewtonOptions,
) -> Result<Solution> {
    solve_watching(mesh, datum, plan, opts, &[])
}

/// [`solve_p_laplace`] with per-region convergence on `watched`.
pub fn solve_watching(
    mesh: &Arc<Mesh>,
    datum: &BoundaryDatum,
    plan: &ContinuationPlan,
    opts: &NewtonOptions,
    watched: &[Subdomain],
) -> Result<Solution> {
    let initial = interpolate_boundary(mesh, datum)?;
    solve_from(initial, plan, opts, watched)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `p = h^{-1/2}`
    InverseSqrtH,
    /// `p = h^{-1}`
    InverseH,
}

impl Coupling {
    pub fn exponent(self, h: f64) -> f64 {
        let raw = match self {
            Self::InverseSqrtH => h.powf(-0.5),
            Self::InverseH => 1.0 / h,
        };
        raw.round().max(2.0)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "h-1/2" | "inverse_sqrt_h" | "sqrt" => Ok(Self::InverseSqrtH),
            "h-1" | "inverse_h" | "linear" => Ok(Self::InverseH),
            other => Err(Error::Config(format!("unknown coupling `{other}` (use h-1/2 or h-1)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub h: f64,
    pub p: f64,
    pub error: f64,
    /// Observed order against the previous row.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub datum: String,
    pub coupling: Coupling,
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log error` against `log h`.
    pub fitted_slope: Option<f64>,
}

pub fn fitted_slope(hs: &[f64], errors: &[f64]) -> Option<f64> {
    if hs.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Largest nodal deviation of `field` from the datum itself.
pub fn nodal_error(field: &FEField, reference: &BoundaryDatum) -> f64 {
    let n = field.target_dim;
    field
        .mesh
        .vertices
        .iter()
        .enumerate()
        .flat_map(|(v, x)| {
            let exact = reference.evaluate(*x);
            (0..n).map(move |a| (v, a, exact[a]))
        })
        .fold(0.0, |m, (v, a, e)| m.max((field.value(v, a) - e).abs()))
}

/// Solves on square meshes of the given resolutions with `p` tied to the
/// mesh size and measures the nodal error against the datum, which must be
/// the reference limit (exact for Aronsson and affine data).
pub fn hp_coupled_run(
    datum: &BoundaryDatum,
    coupling: Coupling,
    ns: &[usize],
    opts: &NewtonOptions,
) -> Result<RateTable> {
    if !datum.infinity_harmonic_limit() {
        return Err(Error::InvalidParameter(format!(
            "no reference limit available for `{}`",
            datum.name
        )));
    }
    let mut rows: Vec<RateRow> = Vec::with_capacity(ns.len());
    for &n in ns {
        let mesh = Arc::new(build_square_mesh(n)?);
        let h = mesh.max_diameter();
        let p = coupling.exponent(h);
        let plan = ContinuationPlan::up_to(p)?;
        let sol = solve_p_laplace(&mesh, datum, &plan, opts)?;
        let error = nodal_error(sol.last(), datum);
        let rate = rows.last().map(|prev| (prev.error / error).ln() / (prev.h / h).ln());
        rows.push(RateRow { n, h, p, error, rate });
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let es: Vec<f64> = rows.iter().map(|r| r.error).collect();
    Ok(RateTable {
        datum: datum.name.clone(),
        coupling,
        fitted_slope: fitted_slope(&hs, &es),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{energy_p, DofMap};
    use crate::mesh::Subdomain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(n: usize) -> Arc<Mesh> {
        Arc::new(build_square_mesh(n).unwrap())
    }

    #[test]
    fn default_ladder_is_valid() {
        let plan = ContinuationPlan::default();
        plan.validate().unwrap();
        for r in REPORTING_EXPONENTS {
            assert!(plan.ladder.contains(&r));
        }
    }

    #[test]
    fn bad_ladders_are_rejected() {
        assert!(ContinuationPlan::new(vec![3.0, 4.0]).is_err());
        assert!(ContinuationPlan::new(vec![2.0, 4.0, 3.0]).is_err());
        assert!(ContinuationPlan::new(vec![2.0, 3.0, 4.0, 10.0, 20.0]).is_err());
        assert!(ContinuationPlan::new(vec![2.0, 3.0, 5.0]).is_err());
        let mut over = ContinuationPlan::default();
        over.ladder.push(125.0);
        assert!(over.validate().is_err());
        over.allow_above_cap = true;
        over.validate().unwrap();
        assert_eq!(ContinuationPlan::up_to(2.0).unwrap().ladder, vec![2.0]);
        assert_eq!(ContinuationPlan::up_to(4.0).unwrap().ladder, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn affine_data_are_solved_by_their_interpolant() {
        let m = square(8);
        let d = BoundaryDatum::affine(vec![[1.0, 0.5], [-0.3, 2.0]], vec![0.1, -0.2]).unwrap();
        let interp = interpolate_boundary(&m, &d).unwrap();
        let sol = solve_p_laplace(&m, &d, &ContinuationPlan::default(), &NewtonOptions::default()).unwrap();
        assert!(sol.report.converged);
        for (_, f) in &sol.fields {
            assert!(f.max_abs_diff(&interp) <= 1e-10);
        }
        assert!(sol.report.steps.iter().all(|s| s.iterations <= 1));
    }

    #[test]
    fn p2_single_full_step() {
        let m = square(8);
        let init = interpolate_boundary(&m, &BoundaryDatum::aronsson()).unwrap();
        let ctx = PContext::for_field(&init, 2.0, 0.0).unwrap();
        let (next, info) = newton_step(&init, &ctx, &NewtonOptions::default()).unwrap();
        assert_eq!(info.damping, 1.0);
        let r = crate::fem::residual(&next, &ctx).unwrap();
        let (_, bound) = Assembler::new(&m, 1).residual_with_bound(&next, &ctx).unwrap();
        assert!(norm2(&r) <= 1e-10 * bound);
    }

    #[test]
    fn linear_solvers_agree_at_p2() {
        let m = square(12);
        let d = BoundaryDatum::harmonic_saddle();
        let plan = ContinuationPlan::new(vec![2.0]).unwrap();
        let direct = solve_p_laplace(&m, &d, &plan, &NewtonOptions::default()).unwrap();
        let cg_opts = NewtonOptions { linear_solver: LinearSolverKind::ConjugateGradient, ..Default::default() };
        let cg = solve_p_laplace(&m, &d, &plan, &cg_opts).unwrap();
        assert!(direct.last().max_abs_diff(cg.last()) < 1e-8);
    }

    #[test]
    fn residuals_decrease_monotonically_and_superlinearly() {
        let m = square(16);
        let plan = ContinuationPlan::new(vec![2.0, 3.0, 4.0]).unwrap();
        let sol = solve_p_laplace(&m, &BoundaryDatum::aronsson(), &plan, &NewtonOptions::default()).unwrap();
        assert!(sol.report.converged);
        for step in &sol.report.steps {
            for w in step.residual_history.windows(2) {
                assert!(w[1] < w[0]);
            }
        }
        let last = sol.report.steps.last().unwrap();
        let h = &last.residual_history;
        assert!(h.len() >= 3, "{h:?}");
        let k = h.len() - 1;
        assert!(h[k] / h[k - 1] < h[k - 1] / h[k - 2], "{h:?}");
        assert_eq!(*last.damping_history.last().unwrap(), 1.0);
    }

    fn perturbed_start(m: &Arc<Mesh>) -> FEField {
        let dofs = DofMap::new(m, 2);
        let mut bad = interpolate_boundary(m, &BoundaryDatum::vec_eikonal()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v: Vec<f64> = (0..dofs.len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        dofs.add_scaled(&mut bad, 1.0, &v);
        bad
    }

    #[test]
    fn damping_engages_on_a_bad_iterate() {
        let m = square(8);
        let opts = NewtonOptions { max_iters: 60, max_step: 1.0, ..Default::default() };
        let mut solver = NewtonSolver::new(&m, 2, opts).unwrap();
        let (_, report) = solver.solve_exponent(perturbed_start(&m), 100.0).unwrap();
        assert!(report.damping_history.iter().any(|&t| t < 1.0), "{:?}", report.damping_history);
        assert!(report.final_residual <= 1e-8 * report.initial_residual);
        for w in report.residual_history.windows(2).take_while(|w| w[0] > 1e-8 * report.initial_residual) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn step_expansion_speeds_up_degenerate_rows() {
        let m = square(8);
        let run = |max_step| {
            let opts = NewtonOptions { max_iters: 60, max_step, ..Default::default() };
            NewtonSolver::new(&m, 2, opts).unwrap().solve_exponent(perturbed_start(&m), 100.0).unwrap().1
        };
        let (plain, expanded) = (run(1.0), run(128.0));
        assert!(expanded.converged);
        assert!(expanded.iterations < plain.iterations);
        assert!(expanded.damping_history.iter().any(|&t| t > 1.0));
    }

    #[test]
    fn continuation_is_consistent() {
        let m = square(8);
        let plan = ContinuationPlan::up_to(10.0).unwrap();
        let sol = solve_p_laplace(&m, &BoundaryDatum::vec_eikonal(), &plan, &NewtonOptions::default()).unwrap();
        let mut solver = NewtonSolver::new(&m, 2, NewtonOptions::default()).unwrap();
        for (p, f) in &sol.fields {
            let (_, rep) = solver.solve_exponent(f.clone(), *p).unwrap();
            assert!(rep.iterations <= 2, "p = {p}: {}", rep.iterations);
        }
    }

    #[test]
    fn p2_independent_of_the_ladder() {
        let m = square(8);
        let d = BoundaryDatum::cone();
        let a = solve_p_laplace(&m, &d, &ContinuationPlan::new(vec![2.0]).unwrap(), &NewtonOptions::default()).unwrap();
        let b = solve_p_laplace(&m, &d, &ContinuationPlan::up_to(6.0).unwrap(), &NewtonOptions::default()).unwrap();
        assert!(a.last().max_abs_diff(b.field_at(2.0).unwrap()) < 1e-10);
    }

    #[test]
    fn solutions_minimise_the_p_energy() {
        let m = square(8);
        let whole = Subdomain::whole(&m);
        let sol = solve_p_laplace(&m, &BoundaryDatum::aronsson(), &ContinuationPlan::up_to(10.0).unwrap(), &NewtonOptions::default()).unwrap();
        let dofs = DofMap::new(&m, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in [4.0, 10.0] {
            let u = sol.field_at(p).unwrap();
            let e0 = energy_p(u, p, &whole).unwrap();
            for _ in 0..20 {
                let mut phi: Vec<f64> = (0..dofs.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let nrm = norm2(&phi);
                phi.iter_mut().for_each(|v| *v *= 1e-2 / nrm);
                let mut w = u.clone();
                dofs.add_scaled(&mut w, 1.0, &phi);
                assert!(energy_p(&w, p, &whole).unwrap() >= e0 - 1e-10);
            }
        }
    }

    #[test]
    fn rate_table_single_row() {
        let t = hp_coupled_run(&BoundaryDatum::aronsson(), Coupling::InverseSqrtH, &[8], &NewtonOptions::default()).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.rows[0].rate.is_none() && t.fitted_slope.is_none());
        assert!(hp_coupled_run(&BoundaryDatum::cone(), Coupling::InverseH, &[8], &NewtonOptions::default()).is_err());
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let hs = [0.5, 0.25, 0.125];
        let es: Vec<f64> = hs.iter().map(|h: &f64| 3.0 * h.powf(0.7)).collect();
        assert!((fitted_slope(&hs, &es).unwrap() - 0.7).abs() < 1e-12);
    }
}
