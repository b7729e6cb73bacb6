//! Running one experiment and recording what it wrote.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use sdde_core::analysis::{
    exp_sup_bound_check, gronwall_bound_check, stability_probe, strong_feller_probe, BoundReport, Verdict,
};
use sdde_core::girsanov::{direct_expectation, weighted_expectation};
use sdde_core::models::{check_condition_driftc1, check_ellipticity, ValidationReport};
use sdde_core::solver::{map_paths, SolverConfig};
use sdde_core::stats::combine_stderr;
use sdde_core::zvonkin::{drift_removal_residual, gradient_bound, select_delta, solve_backward_pde, PdeGrid};
use sdde_core::{Functional, ModelSpec, PathSegment};

use crate::config::{validate_config, ExperimentConfig, Kind};
use crate::{LabError, TOOL_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Written last as `manifest.json`; `complete` is false when the run aborted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub kind: String,
    pub config_digest: String,
    pub tool_version: String,
    pub duration_seconds: f64,
    pub complete: bool,
    pub error: Option<String>,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// A probe came back inconclusive or a checked bound/condition failed.
    pub inconclusive: bool,
}

pub const MANIFEST: &str = "manifest.json";

struct Artifacts {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Artifacts {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), LabError> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(FileEntry {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), LabError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| LabError::Runtime(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

/// Run `cfg` with `workers` threads (all cores when `None`), writing into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, workers: Option<usize>) -> Result<RunOutcome, LabError> {
    let diags = validate_config(cfg);
    if !diags.is_empty() {
        return Err(LabError::Invalid(diags));
    }
    let kind = cfg.kind.expect("validated");
    let digest = cfg.digest();
    fs::create_dir_all(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| LabError::Runtime(e.to_string()))?;

    let start = Instant::now();
    let mut art = Artifacts {
        dir: out.to_path_buf(),
        files: Vec::new(),
    };
    let result = pool.install(|| execute(kind, cfg, &digest, &mut art));
    let manifest = RunManifest {
        kind: kind.as_str().into(),
        config_digest: digest,
        tool_version: TOOL_VERSION.into(),
        duration_seconds: start.elapsed().as_secs_f64(),
        complete: result.is_ok(),
        error: result.as_ref().err().map(|e| e.to_string()),
        files: art.files,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| LabError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(out.join(MANIFEST), text)?;
    result.map(|inconclusive| RunOutcome { manifest, inconclusive })
}

/// Check every file listed in a manifest against its hash.
pub fn verify_manifest(dir: &Path) -> Result<RunManifest, LabError> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| LabError::Parse(e.to_string()))?;
    let files = v["files"].as_array().cloned().unwrap_or_default();
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        let path = f["path"].as_str().unwrap_or_default().to_string();
        let bytes = fs::read(dir.join(&path))?;
        let sha256 = hex::encode(Sha256::digest(&bytes));
        if f["sha256"].as_str() != Some(sha256.as_str()) {
            return Err(LabError::Runtime(format!("{path}: digest mismatch")));
        }
        entries.push(FileEntry {
            path,
            sha256,
            bytes: bytes.len() as u64,
        });
    }
    Ok(RunManifest {
        kind: v["kind"].as_str().unwrap_or_default().into(),
        config_digest: v["config_digest"].as_str().unwrap_or_default().into(),
        tool_version: v["tool_version"].as_str().unwrap_or_default().into(),
        duration_seconds: v["duration_seconds"].as_f64().unwrap_or(0.0),
        complete: v["complete"].as_bool().unwrap_or(false),
        error: v["error"].as_str().map(String::from),
        files: entries,
    })
}

#[derive(Serialize)]
struct Comparison {
    difference: f64,
    combined_stderr: f64,
    agree: bool,
    config_digest: String,
}

#[derive(Serialize)]
struct PdeSummary {
    half_width: f64,
    dx: f64,
    dt: f64,
    nx: usize,
    nt: usize,
    gradient_bound: f64,
    config_digest: String,
}

#[derive(Serialize)]
struct DeltaSummary {
    #[serde(flatten)]
    report: sdde_core::zvonkin::DeltaReport,
    config_digest: String,
}

#[derive(Serialize)]
struct Validation {
    ellipticity: ValidationReport,
    square_integrability: Option<ValidationReport>,
    /// Declared only; never checked numerically.
    continuous_on_initial_window: bool,
    config_digest: String,
}

/// Probe paths handed to the sampled condition checks.
const VALIDATION_PATHS: usize = 64;

fn shifted_points(x: &PathSegment, shifts: &[f64]) -> sdde_core::Result<Vec<PathSegment>> {
    shifts.iter().map(|s| x.shifted(&vec![*s; x.dim()])).collect()
}

fn execute(kind: Kind, cfg: &ExperimentConfig, digest: &str, art: &mut Artifacts) -> Result<bool, LabError> {
    let model = cfg.build_model()?;
    let scfg = cfg.solver_config()?;
    let x = cfg.initial_segment(&scfg.grid)?;
    match kind {
        Kind::Simulate => {
            let csv = map_paths(&model, &x, &scfg, |p| p.to_csv_string())?;
            for (i, text) in csv.iter().enumerate() {
                art.write(&format!("path_{i:05}.csv"), text.as_bytes())?;
            }
            Ok(false)
        }
        Kind::GirsanovCheck => {
            let f = cfg.functional.expect("validated");
            let t = cfg.evaluation_time();
            let g = weighted_expectation(&model, &x, &f, t, &scfg)?.with_digest(digest);
            let d = direct_expectation(&model, &x, &f, t, &scfg)?.with_digest(digest);
            art.json("girsanov.json", &g)?;
            art.json("direct_em.json", &d)?;
            let se = combine_stderr(g.stderr, d.stderr);
            let difference = g.estimate - d.estimate;
            let agree = difference.abs() <= 3.0 * se;
            art.json(
                "comparison.json",
                &Comparison {
                    difference,
                    combined_stderr: se,
                    agree,
                    config_digest: digest.into(),
                },
            )?;
            Ok(!agree)
        }
        Kind::StrongFeller | Kind::Stability => {
            let probe = cfg.probe.as_ref().expect("validated");
            let ys = shifted_points(&x, &probe.shifts)?;
            let t = cfg.evaluation_time();
            let report = if kind == Kind::StrongFeller {
                let f: Functional = cfg.functional.expect("validated");
                strong_feller_probe(&model, &f, &x, &ys, t, &scfg, probe.estimator, &probe.rule)?
            } else {
                stability_probe(&model, &x, &ys, t, probe.gamma, &scfg, &probe.rule)?
            }
            .with_digest(digest);
            art.json("probe.json", &report)?;
            let mut csv = Vec::new();
            report.write_csv(&mut csv)?;
            art.write("probe.csv", &csv)?;
            Ok(report.verdict == Verdict::Inconclusive)
        }
        Kind::Zvonkin => zvonkin(cfg, &model, &x, &scfg, digest, art).map(|_| false),
        Kind::Bounds => {
            let b = cfg.bounds.expect("validated");
            let mut reports: Vec<BoundReport> = Vec::new();
            let e = exp_sup_bound_check(&model, &x, b.alpha, scfg.grid.horizon(), &scfg)?.with_digest(digest);
            art.json("exp_sup.json", &e)?;
            reports.push(e);
            if let Some(gc) = b.gronwall {
                let g = gronwall_bound_check(&gc.scenario, gc.p, gc.mu, gc.nu, &scfg)?.with_digest(digest);
                art.json("gronwall.json", &g)?;
                reports.push(g);
            }
            Ok(reports.iter().any(|r| !r.passed))
        }
        Kind::Validate => {
            let probes = map_paths(&model, &x, &scfg.with_replicates(scfg.replicates.min(VALIDATION_PATHS))?, |p| {
                p.clone()
            })?;
            let points: Vec<(f64, Vec<f64>)> = probes
                .iter()
                .flat_map(|p| (0..=scfg.grid.n_main()).map(move |k| (scfg.grid.main_time(k), p.main_state(k).to_vec())))
                .collect();
            let ellipticity = check_ellipticity(&model.diffusion, &points, model.c_sigma())?;
            let square_integrability = if model.envelopes.f.is_some() {
                Some(check_condition_driftc1(&model, &probes)?)
            } else {
                None
            };
            let failed = !ellipticity.passed || square_integrability.as_ref().is_some_and(|r| !r.passed);
            art.json(
                "validation.json",
                &Validation {
                    ellipticity,
                    square_integrability,
                    continuous_on_initial_window: model.envelopes.continuous_on_initial_window,
                    config_digest: digest.into(),
                },
            )?;
            Ok(failed)
        }
    }
}

fn zvonkin(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    x: &PathSegment,
    scfg: &SolverConfig,
    digest: &str,
    art: &mut Artifacts,
) -> Result<(), LabError> {
    let p = cfg.pde.expect("validated");
    let b = cfg.model.pointwise().expect("validated");
    let horizon = scfg.grid.horizon();
    let grid = PdeGrid::new(p.half_width, p.dx, 0.0, horizon, p.dt)?;
    let sol = solve_backward_pde(&model.diffusion, &b, &grid)?;
    let mut csv = Vec::new();
    sol.write_csv(&mut csv)?;
    art.write("pde.csv", &csv)?;
    art.json(
        "pde.json",
        &PdeSummary {
            half_width: p.half_width,
            dx: p.dx,
            dt: grid.dt,
            nx: grid.nx(),
            nt: grid.nt(),
            gradient_bound: gradient_bound(&sol),
            config_digest: digest.into(),
        },
    )?;
    let delta = select_delta(&model.diffusion, &b, horizon, &grid)?;
    art.json(
        "delta.json",
        &DeltaSummary {
            report: delta,
            config_digest: digest.into(),
        },
    )?;
    let residual = drift_removal_residual(model, x, &sol, scfg)?.with_digest(digest);
    art.json("residual.json", &residual)?;
    Ok(())
}
