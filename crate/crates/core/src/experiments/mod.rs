//! Experiment registry and orchestration: solve the ladder, analyse the
//! concentration measures on each region and persist every artifact.

pub mod checks;
pub mod config;
pub mod io;
pub mod presets;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary_data::{catalog_lookup, BoundaryDatum};
use crate::error::{Error, Result};
use crate::fem::{energy_inf, FEField};
use crate::measures::{
    absolute_minimiser_probe, build_sigma, concentration_diagnostics, divergence_free_check, lp_functional,
    lp_mean, tail_bound_check, ConcentrationReport, DivergenceFreeReport, GeometryHints, ProbeReport,
    TailReport,
};
use crate::mesh::{build_annulus_mesh, build_square_mesh, resolve_subdomain, Mesh, RegionSpec, Subdomain};
use crate::solver::{solve_watching, ContinuationPlan, NewtonOptions, SolveReport, REPORTING_EXPONENTS};

pub use config::{load_config, parse_config};
pub use presets::{preset, PRESETS};

/// Tag written to, and required from, every summary file.
pub const SCHEMA_VERSION: &str = "linfty-summary/1";

/// Levels `alpha` at which the tail bound is checked.
pub const TAIL_LEVELS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];

/// Divergence-free residuals above this multiple of the Newton tolerance
/// are flagged.
pub const DIVERGENCE_FREE_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeshSpec {
    Square { n: usize },
    Annulus { n_r: usize, n_theta: usize, r_in: f64, r_out: f64 },
}

impl MeshSpec {
    pub fn build(&self) -> Result<Mesh> {
        match *self {
            Self::Square { n } => build_square_mesh(n),
            Self::Annulus { n_r, n_theta, r_in, r_out } => build_annulus_mesh(n_r, n_theta, r_in, r_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub spec: RegionSpec,
    #[serde(default)]
    pub hints: GeometryHints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub mesh: MeshSpec,
    /// Catalog identifier, see [`catalog_lookup`].
    pub datum: String,
    pub lambda: Option<f64>,
    pub plan: ContinuationPlan,
    pub newton: NewtonOptions,
    pub regions: Vec<RegionEntry>,
    /// Output directory; relative paths are resolved against the output root.
    pub out_dir: PathBuf,
    /// Seed of the absolute-minimiser probe.
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid experiment name `{}`", self.name)));
        }
        if self.regions.is_empty() {
            return Err(Error::Config("experiment needs at least one region".into()));
        }
        for r in &self.regions {
            r.spec.validate()?;
        }
        self.plan.validate()?;
        self.newton.validate()?;
        self.datum()?;
        Ok(())
    }

    pub fn datum(&self) -> Result<BoundaryDatum> {
        catalog_lookup(&self.datum, self.lambda)
    }

    /// Applies command-line overrides.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(n) = o.n {
            self.mesh = match self.mesh {
                MeshSpec::Square { .. } => MeshSpec::Square { n },
                MeshSpec::Annulus { r_in, r_out, .. } => match presets::annulus_mesh(n) {
                    MeshSpec::Annulus { n_r, n_theta, .. } => MeshSpec::Annulus { n_r, n_theta, r_in, r_out },
                    sq => sq,
                },
            };
        }
        if let Some(l) = &o.ladder {
            self.plan.ladder = l.clone();
        }
        if let Some(t) = o.tol {
            self.newton.rel_tol = t;
        }
        if let Some(e) = o.eps {
            self.newton.eps_rel = e;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.sequential {
            self.newton.sequential = true;
        }
        self.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub n: Option<usize>,
    pub ladder: Option<Vec<f64>>,
    pub tol: Option<f64>,
    pub eps: Option<f64>,
    pub seed: Option<u64>,
    pub sequential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Newton stagnated; the report and the last iterate are kept.
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshInfo {
    pub vertices: usize,
    pub elements: usize,
    pub max_diameter: f64,
    pub shape_regularity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAnalysis {
    pub region: String,
    pub region_area: f64,
    pub exponent: f64,
    pub lp: Option<f64>,
    pub lp_mean: Option<f64>,
    pub energy_inf: f64,
    pub tail: Option<TailReport>,
    /// `None` when the region has no interior vertex.
    pub divergence_free: Option<DivergenceFreeReport>,
    pub concentration: ConcentrationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub region: String,
    pub exponent: f64,
    pub amplitudes: Vec<f64>,
    pub report: ProbeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema: String,
    pub status: RunStatus,
    pub config: ExperimentConfig,
    pub mesh: MeshInfo,
    pub solve: SolveReport,
    pub analyses: Vec<RegionAnalysis>,
    pub probes: Vec<ProbeEntry>,
    pub warnings: Vec<String>,
    /// Files written, relative to the experiment directory.
    pub files: Vec<String>,
}

impl ExperimentSummary {
    pub fn analysis(&self, region_index: usize, p: f64) -> Option<&RegionAnalysis> {
        let label = self.config.regions.get(region_index)?.spec.label();
        self.analyses.iter().find(|a| a.region == label && a.exponent == p)
    }

    pub fn tail_violations(&self) -> Vec<(String, f64, f64)> {
        self.analyses
            .iter()
            .filter_map(|a| a.tail.as_ref().map(|t| (a, t)))
            .flat_map(|(a, t)| t.rows.iter().filter(|r| !r.holds).map(move |r| (a.region.clone(), a.exponent, r.alpha)))
            .collect()
    }

    pub fn max_divergence_free(&self) -> f64 {
        self.analyses
            .iter()
            .filter_map(|a| a.divergence_free.as_ref())
            .map(|d| d.normalised)
            .fold(0.0, f64::max)
    }
}

/// Relative output directory of an experiment under `root`.
pub fn experiment_dir(config: &ExperimentConfig, root: &Path) -> PathBuf {
    if config.out_dir.is_absolute() {
        config.out_dir.clone()
    } else {
        root.join(&config.out_dir)
    }
}

fn analyse(field: &FEField, p: f64, entry: &RegionEntry, region: &Subdomain) -> Result<RegionAnalysis> {
    let sigma = build_sigma(field, p, region)?;
    let tail = if p > 2.0 { Some(tail_bound_check(&sigma, &TAIL_LEVELS)?) } else { None };
    let divergence_free = match divergence_free_check(field, &sigma) {
        Ok(r) => Some(r),
        Err(Error::DegenerateProbe) => None,
        Err(e) => return Err(e),
    };
    Ok(RegionAnalysis {
        region: entry.spec.label(),
        region_area: region.area,
        exponent: p,
        lp: if p > 2.0 { Some(lp_functional(field, p, region)?) } else { None },
        lp_mean: if p > 2.0 { Some(lp_mean(field, p, region)?) } else { None },
        energy_inf: energy_inf(field, region),
        tail,
        divergence_free,
        concentration: concentration_diagnostics(&sigma, field, &entry.hints)?,
    })
}

/// Solves, analyses and writes all artifacts into
/// `experiment_dir(config, root)`, finishing with `summary.json`.
pub fn run_experiment(config: &ExperimentConfig, root: &Path) -> Result<ExperimentSummary> {
    config.validate()?;
    let datum = config.datum()?;
    let mesh = Arc::new(config.mesh.build()?);
    mesh.validate()?;
    let regions: Vec<Subdomain> =
        config.regions.iter().map(|r| resolve_subdomain(&mesh, &r.spec)).collect::<Result<_>>()?;
    let dir = experiment_dir(config, root);
    fs::create_dir_all(&dir)?;

    let mut files = Vec::new();
    let mut write = |name: String, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        f(&dir.join(&name))?;
        files.push(name);
        Ok(())
    };
    write("vertices.csv".into(), &|p| io::write_vertices_csv(&mesh, p))?;
    write("triangles.csv".into(), &|p| io::write_triangles_csv(&mesh, p))?;

    let mut warnings = Vec::new();
    let (status, fields, solve, divergence) = match solve_watching(&mesh, &datum, &config.plan, &config.newton, &regions) {
        Ok(sol) => (RunStatus::Completed, sol.fields, sol.report, None),
        Err(Error::Divergence(d)) => {
            warnings.push(format!("Newton stagnated at p = {}", d.exponent));
            (RunStatus::Diverged, Vec::new(), d.report.clone(), Some(d))
        }
        Err(e) => return Err(e),
    };
    for s in solve.steps.iter().filter(|s| !s.converged) {
        warnings.push(format!(
            "p = {}: not converged after {} iterations (relative residual {:.3e})",
            s.exponent,
            s.iterations,
            s.relative_residual()
        ));
    }

    let pairs: Vec<(usize, usize)> =
        (0..fields.len()).flat_map(|i| (0..regions.len()).map(move |j| (i, j))).collect();
    let run = |&(i, j): &(usize, usize)| analyse(&fields[i].1, fields[i].0, &config.regions[j], &regions[j]);
    let analyses: Vec<RegionAnalysis> = if config.newton.sequential {
        pairs.iter().map(run).collect::<Result<_>>()?
    } else {
        pairs.par_iter().map(run).collect::<Result<_>>()?
    };
    let div_limit = DIVERGENCE_FREE_FACTOR * config.newton.rel_tol;
    for a in &analyses {
        if let Some(d) = a.divergence_free.as_ref().filter(|d| d.normalised > div_limit) {
            warnings.push(format!(
                "p = {}, {}: divergence-free residual {:.3e} above {div_limit:.1e}",
                a.exponent, a.region, d.normalised
            ));
        }
    }

    for (p, field) in fields.iter().filter(|(p, _)| REPORTING_EXPONENTS.contains(p)) {
        let tag = io::exponent_tag(*p);
        write(format!("solution_{tag}.csv"), &|path| io::write_solution_csv(field, path))?;
        let mut first = None;
        for (entry, region) in config.regions.iter().zip(&regions) {
            let sigma = build_sigma(field, *p, region)?;
            let name = format!("sigma_{}_{tag}_{}.csv", config.name, entry.spec.label());
            write(name, &|path| io::write_sigma_csv(&mesh, &sigma, path))?;
            first.get_or_insert(sigma);
        }
        let title = format!("{} {} {tag}", config.name, datum.name);
        write(format!("field_{tag}.vtk"), &|path| io::export_vtk(field, first.as_ref(), &title, path))?;
    }
    if let Some(d) = &divergence {
        let tag = io::exponent_tag(d.exponent);
        write(format!("last_iterate_{tag}.csv"), &|path| io::write_solution_csv(&d.last_iterate, path))?;
    }

    let mut probes = Vec::new();
    if let Some((p, field)) = fields.last() {
        let h = mesh.max_diameter();
        for (entry, region) in config.regions.iter().zip(&regions) {
            let e = energy_inf(field, region);
            let amplitudes: Vec<f64> = [1e-3, 1e-2, 1e-1].iter().map(|c| c * h * e).collect();
            match absolute_minimiser_probe(field, region, &amplitudes, 16, config.seed) {
                Ok(report) => probes.push(ProbeEntry { region: entry.spec.label(), exponent: *p, amplitudes, report }),
                Err(Error::DegenerateProbe) => warnings.push(format!("{}: no interior vertex to probe", entry.spec.label())),
                Err(err) => return Err(err),
            }
        }
    }

    files.push("summary.json".into());
    let summary = ExperimentSummary {
        schema: SCHEMA_VERSION.to_string(),
        status,
        config: config.clone(),
        mesh: MeshInfo {
            vertices: mesh.num_vertices(),
            elements: mesh.num_elements(),
            max_diameter: mesh.max_diameter(),
            shape_regularity: mesh.shape_regularity(),
        },
        solve,
        analyses,
        probes,
        warnings,
        files,
    };
    io::write_json(&summary, &dir.join("summary.json"))?;
    match divergence {
        Some(d) => Err(Error::Divergence(d)),
        None => Ok(summary),
    }
}

/// Validates a summary file against the current schema and checks that
/// every listed artifact exists next to it.
pub fn validate_summary(path: &Path) -> Result<ExperimentSummary> {
    let fail = |m: String| Error::InvariantFailure(format!("{}: {m}", path.display()));
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    match value.get("schema").and_then(|s| s.as_str()) {
        Some(SCHEMA_VERSION) => {}
        Some(other) => return Err(fail(format!("schema `{other}`, expected `{SCHEMA_VERSION}`"))),
        None => return Err(fail("missing schema tag".into())),
    }
    let summary: ExperimentSummary = serde_json::from_value(value).map_err(|e| fail(e.to_string()))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    for f in &summary.files {
        if !dir.join(f).is_file() {
            return Err(fail(format!("listed file `{f}` is missing")));
        }
    }
    Ok(summary)
}
