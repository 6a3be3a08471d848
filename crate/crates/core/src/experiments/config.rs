//! Flat `key = value` experiment files. Keys mirror the CLI flags; `#`
//! starts a comment. A file either names a `preset` and overrides some of
//! its fields, or describes a custom experiment in full.
//!
//! ```text
//! preset = aronsson_fig1
//! n = 32
//! tol = 1e-9
//! ```
//!
//! Custom experiments need `name`, `mesh`, `datum`, `ladder`, `tol`, `eps`,
//! `seed` and at least one `region`:
//!
//! ```text
//! name = wedge
//! mesh = square
//! n = 24
//! datum = aronsson
//! ladder = 2,3,4,5,6,8,10
//! tol = 1e-8
//! eps = 1e-10
//! seed = 7
//! region = axis_square 0.25 0.25 0.5
//! corners = 0.75,0.75
//! ```

use std::path::{Path, PathBuf};

use super::presets::{annulus_mesh, preset, DEFAULT_N};
use super::{ExperimentConfig, MeshSpec, RegionEntry};
use crate::error::{Error, Result};
use crate::measures::GeometryHints;
use crate::mesh::RegionSpec;
use crate::sparse::LinearSolverKind;

fn err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| err(line, format!("bad value `{v}` for `{key}`")))
}

pub fn parse_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad number `{t}`")))
        .collect()
}

fn parse_bool(line: usize, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(err(line, format!("expected a boolean, got `{v}`"))),
    }
}

pub fn parse_region(v: &str) -> std::result::Result<RegionSpec, String> {
    let mut words = v.split_whitespace();
    let kind = words.next().ok_or("empty region")?;
    let nums: Vec<f64> = words
        .map(|w| w.parse::<f64>().map_err(|_| format!("bad number `{w}` in region")))
        .collect::<std::result::Result<_, _>>()?;
    let spec = match (kind, nums.as_slice()) {
        ("axis_square", [cx, cy, hw]) => RegionSpec::AxisSquare { center: [*cx, *cy], half_width: *hw },
        ("annulus", [a, b]) => RegionSpec::Annulus { r_in: *a, r_out: *b },
        ("astroid_band", [hw]) => RegionSpec::AstroidBand { half_width: *hw },
        ("whole", []) => RegionSpec::WholeDomain,
        _ => return Err(format!("cannot parse region `{v}`")),
    };
    Ok(spec)
}

fn parse_points(v: &str) -> std::result::Result<Vec<[f64; 2]>, String> {
    v.split_whitespace()
        .map(|pair| match parse_list(pair)?.as_slice() {
            [x, y] => Ok([*x, *y]),
            _ => Err(format!("expected `x,y`, got `{pair}`")),
        })
        .collect()
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| err(i + 1, "expected `key = value`"))?;
        entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    let get = |key: &str| entries.iter().rev().find(|(_, k, _)| k == key);
    let n: Option<usize> = get("n").map(|(l, k, v)| parse_num(*l, k, v)).transpose()?;

    let mut cfg = match get("preset") {
        Some((l, _, name)) => preset(name, n.unwrap_or(DEFAULT_N)).map_err(|e| err(*l, e))?,
        None => {
            const REQUIRED: [&str; 8] = ["name", "mesh", "datum", "ladder", "tol", "eps", "seed", "region"];
            if let Some(missing) = REQUIRED.iter().find(|k| get(k).is_none()) {
                return Err(Error::Config(format!("custom experiment is missing `{missing}`")));
            }
            let mut c = preset("affine", n.unwrap_or(DEFAULT_N))?;
            c.regions.clear();
            c
        }
    };

    let mut custom_regions: Vec<RegionEntry> = Vec::new();
    let mut mesh_kind: Option<String> = None;
    let (mut n_r, mut n_theta, mut r_in, mut r_out) = (None, None, None, None);
    for (l, k, v) in &entries {
        let l = *l;
        match k.as_str() {
            "preset" | "n" => {}
            "name" => {
                cfg.name = v.clone();
                cfg.out_dir = PathBuf::from(v);
            }
            "mesh" => mesh_kind = Some(v.clone()),
            "n_r" => n_r = Some(parse_num::<usize>(l, k, v)?),
            "n_theta" => n_theta = Some(parse_num::<usize>(l, k, v)?),
            "r_in" => r_in = Some(parse_num::<f64>(l, k, v)?),
            "r_out" => r_out = Some(parse_num::<f64>(l, k, v)?),
            "datum" => cfg.datum = v.clone(),
            "lambda" => cfg.lambda = Some(parse_num(l, k, v)?),
            "ladder" => cfg.plan.ladder = parse_list(v).map_err(|e| err(l, e))?,
            "allow_above_cap" => cfg.plan.allow_above_cap = parse_bool(l, v)?,
            "tol" => cfg.newton.rel_tol = parse_num(l, k, v)?,
            "eps" => cfg.newton.eps_rel = parse_num(l, k, v)?,
            "max_iters" => cfg.newton.max_iters = parse_num(l, k, v)?,
            "linear_tol" => cfg.newton.linear_tol = parse_num(l, k, v)?,
            "linear_solver" => {
                cfg.newton.linear_solver = match v.as_str() {
                    "direct" => LinearSolverKind::Direct,
                    "cg" => LinearSolverKind::ConjugateGradient,
                    _ => return Err(err(l, format!("unknown linear solver `{v}`"))),
                }
            }
            "sequential" => cfg.newton.sequential = parse_bool(l, v)?,
            "seed" => cfg.seed = parse_num(l, k, v)?,
            "out" => cfg.out_dir = PathBuf::from(v),
            "region" => custom_regions.push(RegionEntry {
                spec: parse_region(v).map_err(|e| err(l, e))?,
                hints: GeometryHints::default(),
            }),
            "corners" | "corner_radius" | "band_width" => {
                let last = custom_regions
                    .last_mut()
                    .ok_or_else(|| err(l, format!("`{k}` must follow a `region`")))?;
                match k.as_str() {
                    "corners" => last.hints.corners = parse_points(v).map_err(|e| err(l, e))?,
                    "corner_radius" => last.hints.corner_radius = Some(parse_num(l, k, v)?),
                    _ => last.hints.band_width = Some(parse_num(l, k, v)?),
                }
            }
            other => return Err(err(l, format!("unknown key `{other}`"))),
        }
    }
    if !custom_regions.is_empty() {
        cfg.regions = custom_regions;
    }
    let n = n.unwrap_or(DEFAULT_N);
    match mesh_kind.as_deref() {
        None => {
            if let MeshSpec::Square { n: m } = &mut cfg.mesh {
                *m = n;
            }
        }
        Some("square") => cfg.mesh = MeshSpec::Square { n },
        Some("annulus") => {
            let MeshSpec::Annulus { n_r: a, n_theta: b, r_in: c, r_out: d } = annulus_mesh(n) else {
                unreachable!()
            };
            cfg.mesh = MeshSpec::Annulus {
                n_r: n_r.unwrap_or(a),
                n_theta: n_theta.unwrap_or(b),
                r_in: r_in.unwrap_or(c),
                r_out: r_out.unwrap_or(d),
            };
        }
        Some(other) => return Err(Error::Config(format!("unknown mesh kind `{other}`"))),
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
