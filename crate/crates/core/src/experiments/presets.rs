use std::f64::consts::FRAC_PI_4;
use std::path::PathBuf;

use super::{ExperimentConfig, MeshSpec, RegionEntry};
use crate::error::{Error, Result};
use crate::measures::GeometryHints;
use crate::mesh::RegionSpec;
use crate::solver::{ContinuationPlan, NewtonOptions};

pub const PRESETS: [&str; 10] = [
    "aronsson_fig1",
    "aronsson_fig2",
    "aronsson_fig3",
    "aronsson_fig4",
    "scalar_eikonal",
    "vec_eikonal",
    "mixed_pos",
    "mixed_neg",
    "diffeo",
    "affine",
];

pub const DEFAULT_N: usize = 64;

/// Coefficients of the vector affine preset.
pub const AFFINE_PRESET: &str = "affine:1,0.5,-0.3,2,0.1,-0.2";

fn square_region(center: [f64; 2], half_width: f64, corners: Vec<[f64; 2]>) -> RegionEntry {
    RegionEntry {
        spec: RegionSpec::AxisSquare { center, half_width },
        hints: GeometryHints { corners, ..Default::default() },
    }
}

fn centred_square(half_width: f64) -> RegionEntry {
    let c = half_width;
    square_region([0.0, 0.0], c, vec![[c, c], [-c, c], [-c, -c], [c, -c]])
}

/// Points where the sides of the square `|x|, |y| < hw` meet the astroid.
fn astroid_band_corners(hw: f64) -> Vec<[f64; 2]> {
    let t = (1.0 - hw.cbrt().powi(2)).powf(1.5);
    let mut out = Vec::new();
    for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
        out.push([sx * hw, sy * t]);
        out.push([sx * t, sy * hw]);
    }
    out
}

/// Annulus resolution matched to a square mesh of parameter `n`.
pub fn annulus_mesh(n: usize) -> MeshSpec {
    MeshSpec::Annulus { n_r: (3 * n / 8).max(2), n_theta: (2 * n).max(8), r_in: 0.2, r_out: 0.8 }
}

/// The compiled-in configuration for `name` on a mesh of parameter `n`.
pub fn preset(name: &str, n: usize) -> Result<ExperimentConfig> {
    let square = MeshSpec::Square { n };
    let (mesh, datum, lambda, regions) = match name {
        "aronsson_fig1" => (
            square,
            "aronsson",
            None,
            vec![square_region([0.5, 0.5], 0.375, vec![[0.875, 0.875]])],
        ),
        "aronsson_fig2" => (square, "aronsson", None, vec![centred_square(0.25)]),
        "aronsson_fig3" => (square, "aronsson", None, vec![centred_square(0.35)]),
        "aronsson_fig4" => (
            square,
            "aronsson",
            None,
            vec![RegionEntry {
                spec: RegionSpec::AstroidBand { half_width: 0.5 },
                hints: GeometryHints { corners: astroid_band_corners(0.5), ..Default::default() },
            }],
        ),
        "scalar_eikonal" => (
            square,
            "cone",
            None,
            vec![square_region([0.5, 0.5], 0.375, vec![[0.875, 0.875]])],
        ),
        "vec_eikonal" => (square, "vec_eikonal", None, vec![centred_square(FRAC_PI_4)]),
        "mixed_pos" | "mixed_neg" => {
            let l = if name == "mixed_pos" { 0.5 } else { -0.5 };
            let hints = GeometryHints {
                corners: vec![[-1.0, -1.0], [0.0, -1.0], [-1.0, 1.0], [0.0, 1.0]],
                ..Default::default()
            };
            (square, "mixed", Some(l), vec![RegionEntry { spec: RegionSpec::WholeDomain, hints }])
        }
        "diffeo" => (
            annulus_mesh(n),
            "diffeo",
            None,
            vec![RegionEntry {
                spec: RegionSpec::Annulus { r_in: 0.2, r_out: 0.8 },
                hints: GeometryHints::default(),
            }],
        ),
        "affine" => (
            square,
            AFFINE_PRESET,
            None,
            vec![RegionEntry { spec: RegionSpec::WholeDomain, hints: GeometryHints::default() }],
        ),
        other => return Err(Error::Config(format!("unknown preset `{other}`"))),
    };
    Ok(ExperimentConfig {
        name: name.to_string(),
        mesh,
        datum: datum.to_string(),
        lambda,
        plan: ContinuationPlan::default(),
        newton: NewtonOptions::default(),
        regions,
        out_dir: PathBuf::from(name),
        seed: 0,
    })
}
