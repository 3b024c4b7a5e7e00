//! File-based pipeline stages: sensitivity, plan, compress, report.
//!
//! Stages only communicate through files under the output directory:
//!
//! ```text
//! <out>/sensitivity/NNN_<layer>.csv   R,I curve per layer
//! <out>/sensitivity/summary.csv       layer,a,b,r_squared
//! <out>/plan.json                     per-layer target rates
//! <out>/compressed/manifest.json      realized layers + blobs
//! <out>/report.json, report.txt       compression report
//! ```

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristic::{compress_layer, HeuristicConfig};
use crate::io::{
    self, load_compressed, load_network, read_sensitivity_summary, save_compressed, write_report,
    write_sensitivity_csv, CompressedEntry, CompressionReport, NetworkBundle,
};
use crate::planner::{plan_layers, LayerModel, NetworkPlan, PlannerConfig};
use crate::rate::layer_flops;
use crate::realize::realize;
use crate::sensitivity::{build_curve, SensitivityCurve};
use crate::state::ApproxState;
use crate::unit::UnitKinds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub target_rate: f64,
    pub gamma: f64,
    pub interval_fraction: f64,
    pub eta: f64,
    pub stop_threshold: f64,
    pub r_max: f64,
    pub kinds: UnitKinds,
    pub use_fast_metric: bool,
    pub seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let planner = PlannerConfig::default();
        let heuristic = HeuristicConfig::default();
        Self {
            manifest: PathBuf::from("manifest.json"),
            out_dir: PathBuf::from("out"),
            target_rate: 0.5,
            gamma: heuristic.gamma,
            interval_fraction: heuristic.interval_fraction,
            eta: planner.eta,
            stop_threshold: planner.stop_threshold,
            r_max: planner.r_max,
            kinds: UnitKinds::Both,
            use_fast_metric: true,
            seed: 0,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_rate > 0.0 && self.target_rate < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target rate must lie in (0, 1), got {}",
                self.target_rate
            )));
        }
        if !(self.r_max > 0.0 && self.r_max < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "r_max must lie in (0, 1), got {}",
                self.r_max
            )));
        }
        Ok(())
    }

    pub fn planner(&self) -> PlannerConfig {
        PlannerConfig {
            eta: self.eta,
            stop_threshold: self.stop_threshold,
            r_max: self.r_max,
            ..PlannerConfig::default()
        }
    }

    pub fn heuristic(&self, target_rate: f64) -> HeuristicConfig {
        HeuristicConfig {
            gamma: self.gamma,
            interval_fraction: self.interval_fraction,
            target_rate,
            use_fast_metric: self.use_fast_metric,
            kinds: self.kinds,
        }
    }

    pub fn sensitivity_dir(&self) -> PathBuf {
        self.out_dir.join("sensitivity")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.sensitivity_dir().join(io::SUMMARY_FILE)
    }

    pub fn plan_path(&self) -> PathBuf {
        self.out_dir.join("plan.json")
    }

    pub fn compressed_manifest(&self) -> PathBuf {
        self.out_dir.join("compressed").join("manifest.json")
    }

    pub fn report_path(&self) -> PathBuf {
        self.out_dir.join("report.json")
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
    }
}

fn load_nonempty(path: &Path) -> Result<NetworkBundle> {
    let bundle = load_network(path)?;
    if bundle.layers.is_empty() {
        return Err(Error::Manifest(format!(
            "{} lists no layers",
            path.display()
        )));
    }
    Ok(bundle)
}

#[derive(Debug)]
pub struct SensitivityOutcome {
    pub curves: Vec<(String, SensitivityCurve)>,
    pub failures: Vec<(String, Error)>,
}

/// Builds and fits a curve for every compressible layer.
pub fn run_sensitivity(cfg: &PipelineConfig) -> Result<SensitivityOutcome> {
    cfg.validate()?;
    let bundle = load_nonempty(&cfg.manifest)?;
    let jobs: Vec<_> = bundle.layers.iter().filter(|r| r.compressible).collect();
    let results: Vec<(String, Result<SensitivityCurve>)> = cfg.pool()?.install(|| {
        jobs.par_iter()
            .map(|rec| {
                let t = &bundle.tensors[&rec.name];
                let curve =
                    build_curve(&t.weight, &t.gradient).and_then(SensitivityCurve::from_points);
                (rec.name.clone(), curve)
            })
            .collect()
    });

    let mut curves = Vec::new();
    let mut failures = Vec::new();
    for (name, result) in results {
        match result {
            Ok(curve) => {
                info!(
                    "{name}: a={:.6e} b={:.6} R2={:.6}",
                    curve.a, curve.b, curve.r_squared
                );
                curves.push((name, curve));
            }
            Err(e) => {
                warn!("{name}: sensitivity failed: {e}");
                failures.push((name, e));
            }
        }
    }
    write_sensitivity_csv(&curves, &cfg.sensitivity_dir())?;
    Ok(SensitivityOutcome { curves, failures })
}

/// Solves the rate allocation from the sensitivity summary.
pub fn run_plan(cfg: &PipelineConfig) -> Result<NetworkPlan> {
    cfg.validate()?;
    let bundle = load_nonempty(&cfg.manifest)?;
    let summary = read_sensitivity_summary(&cfg.summary_path())?;
    let mut models = Vec::new();
    for rec in bundle.layers.iter().filter(|r| r.compressible) {
        let fit = summary
            .iter()
            .find(|(name, _)| name == &rec.name)
            .map(|(_, fit)| *fit)
            .ok_or_else(|| {
                Error::Manifest(format!("no sensitivity summary for layer `{}`", rec.name))
            })?;
        models.push(LayerModel {
            name: rec.name.clone(),
            fit,
            flops: layer_flops(rec),
        });
    }
    let plan = plan_layers(
        &models,
        bundle.total_flops(),
        cfg.target_rate,
        &cfg.planner(),
    )?;
    for w in &plan.warnings {
        warn!("{w}");
    }
    io::write_json_file(&cfg.plan_path(), &plan)?;
    Ok(plan)
}

pub fn read_plan(path: &Path) -> Result<NetworkPlan> {
    io::read_json_file(path)
}

/// Compresses every compressible layer to its planned rate.
pub fn run_compress(cfg: &PipelineConfig) -> Result<CompressionReport> {
    cfg.validate()?;
    let bundle = load_nonempty(&cfg.manifest)?;
    let plan = read_plan(&cfg.plan_path())?;

    let jobs: Vec<_> = bundle
        .layers
        .iter()
        .map(|rec| {
            let target = if rec.compressible {
                plan.rate_for(&rec.name).ok_or_else(|| {
                    Error::Manifest(format!("plan has no rate for layer `{}`", rec.name))
                })
            } else {
                Ok(0.0)
            };
            target.map(|t| (rec, t))
        })
        .collect::<Result<_>>()?;

    let entries: Vec<CompressedEntry> = cfg.pool()?.install(|| {
        jobs.par_iter()
            .map(|&(rec, target)| {
                let t = &bundle.tensors[&rec.name];
                let layer = if target > 0.0 {
                    let out =
                        compress_layer(&t.weight, &t.gradient, &cfg.heuristic(target), &rec.name)?;
                    info!(
                        "{}: target {target:.4} achieved {:.4} (t1={}, t2={}{})",
                        rec.name,
                        out.rate,
                        out.t1,
                        out.t2,
                        if out.pruning_fallback {
                            ", pruning only"
                        } else {
                            ""
                        }
                    );
                    out.layer
                } else {
                    realize(&ApproxState::new(&t.weight), &rec.name)?
                };
                Ok(CompressedEntry {
                    record: rec.clone(),
                    layer,
                    r_target: target,
                })
            })
            .collect::<Vec<Result<_>>>()
            .into_iter()
            .zip(&jobs)
            .map(|(r, (rec, _))| r.map_err(|e: Error| e.in_layer(&rec.name)))
            .collect::<Result<_>>()
    })?;

    let mut metadata = bundle.metadata.clone();
    metadata.insert("target_rate".into(), cfg.target_rate.to_string());
    save_compressed(&entries, &metadata, &cfg.compressed_manifest())?;
    let report = CompressionReport::from_layers(entries.iter().map(io::LayerReport::new).collect());
    write_report(&report, &cfg.report_path())?;
    Ok(report)
}

/// Rebuilds the report from the compressed manifest.
pub fn run_report(cfg: &PipelineConfig) -> Result<CompressionReport> {
    let network = load_compressed(&cfg.compressed_manifest())?;
    let report = CompressionReport::from_network(&network);
    write_report(&report, &cfg.report_path())?;
    Ok(report)
}
