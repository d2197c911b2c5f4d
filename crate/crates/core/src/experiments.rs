//! Replicated experiments and the files they produce.
//!
//! Every replication `k` of an experiment runs with seed
//! `derive_seed(base.seed, k)`. Runs compared against each other (a control
//! method and its no-control baseline, method A and its revision) share that
//! seed and therefore the same workload.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::congestion::CongestionMode;
use crate::decision_graph::{build_decision_graph, DecisionGraph, DecisionGraphOptions, DEFAULT_COUNT_TOLERANCE};
use crate::error::{Error, Result};
use crate::model::{ControlMethod, ResourceType, ScenarioConfig};
use crate::report::{self, FairnessComparisonRow, SweepRow};
use crate::rng::derive_seed;
use crate::sim::{compute_s1, run, RunMetrics};

pub const DEFAULT_REPLICATIONS: usize = 10;
/// Loss probability above which reduction alone is judged insufficient.
pub const DEFAULT_LOSS_CEILING: f64 = 0.3;
/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepParam {
    CV,
    NV,
    /// Total request generation rate, requests per second.
    Load,
    /// Ratio of user 1's mean interarrival to user 2's.
    Y,
    Gamma,
    P,
    Q,
}

impl SweepParam {
    pub const NAMES: [&'static str; 7] = ["c_v", "n_v", "load", "y", "gamma", "p", "q"];

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "c_v" => SweepParam::CV,
            "n_v" => SweepParam::NV,
            "load" => SweepParam::Load,
            "y" => SweepParam::Y,
            "gamma" => SweepParam::Gamma,
            "p" => SweepParam::P,
            "q" => SweepParam::Q,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::CV => "c_v",
            SweepParam::NV => "n_v",
            SweepParam::Load => "load",
            SweepParam::Y => "y",
            SweepParam::Gamma => "gamma",
            SweepParam::P => "p",
            SweepParam::Q => "q",
        }
    }

    /// Sets this parameter on `config`.
    pub fn apply(self, config: &mut ScenarioConfig, value: f64) {
        match self {
            SweepParam::CV => config.thresholds.c_v = value,
            SweepParam::NV => config.thresholds.n_v = value,
            SweepParam::Load => {
                let rate = config.total_arrival_rate();
                if rate > 0.0 {
                    config.scale_arrival_rates(value / rate);
                }
            }
            SweepParam::Y => {
                if config.users.len() >= 2 {
                    let reference = config.users[1].workload.mean_interarrival;
                    config.users[0].workload.mean_interarrival = value * reference;
                }
            }
            SweepParam::Gamma => config.gamma = value,
            SweepParam::P => config.users.iter_mut().for_each(|u| u.profile.p = value),
            SweepParam::Q => config.users.iter_mut().for_each(|u| u.profile.q = value),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub base: ScenarioConfig,
    pub axes: Vec<SweepAxis>,
    pub replications: usize,
    pub loss_ceiling: f64,
    pub count_tolerance: f64,
}

impl ExperimentSpec {
    pub fn new(base: ScenarioConfig) -> Self {
        ExperimentSpec {
            base,
            axes: Vec::new(),
            replications: DEFAULT_REPLICATIONS,
            loss_ceiling: DEFAULT_LOSS_CEILING,
            count_tolerance: DEFAULT_COUNT_TOLERANCE,
        }
    }

    pub fn with_axis(mut self, param: SweepParam, values: Vec<f64>) -> Self {
        self.axes.retain(|a| a.param != param);
        self.axes.push(SweepAxis { param, values });
        self
    }

    pub fn axis(&self, param: SweepParam) -> Option<&[f64]> {
        self.axes
            .iter()
            .find(|a| a.param == param)
            .map(|a| a.values.as_slice())
    }

    pub fn check(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if !(self.loss_ceiling > 0.0 && self.loss_ceiling <= 1.0) {
            return Err(Error::Config("loss ceiling out of range (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.count_tolerance) {
            return Err(Error::Config("count tolerance out of range [0, 1)".into()));
        }
        for (i, a) in self.axes.iter().enumerate() {
            if a.values.is_empty() {
                return Err(Error::Config(format!("sweep axis `{}` has no values", a.param.name())));
            }
            if a.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("sweep axis `{}` has a non-finite value", a.param.name())));
            }
            if self.axes[..i].iter().any(|b| b.param == a.param) {
                return Err(Error::Config(format!("sweep axis `{}` given twice", a.param.name())));
            }
        }
        Ok(())
    }

    fn require(&self, param: SweepParam) -> Result<&[f64]> {
        self.axis(param).ok_or_else(|| {
            Error::Config(format!("this experiment needs a `{}` sweep axis", param.name()))
        })
    }
}

/// Sample mean with a 95% normal-approximation half width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Estimate { mean: 0.0, half_width: 0.0, n };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let half_width = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Z_95 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Estimate { mean, half_width, n }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }
}

/// Runs `f` on `reps` reseeded copies of `config`, in parallel.
pub fn replicate<T, F>(config: &ScenarioConfig, reps: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&ScenarioConfig) -> Result<T> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|k| {
            let mut cfg = config.clone();
            cfg.seed = derive_seed(config.seed, k as u64);
            f(&cfg)
        })
        .collect()
}

/// Which types a threshold sweep forces congested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepCongestion {
    OnlyProcessing,
    Both,
}

impl SweepCongestion {
    pub fn label(self) -> &'static str {
        match self {
            SweepCongestion::OnlyProcessing => "only-processing",
            SweepCongestion::Both => "both",
        }
    }

    pub fn mode(self) -> CongestionMode {
        match self {
            SweepCongestion::OnlyProcessing => CongestionMode::ONLY_PROCESSING,
            SweepCongestion::Both => CongestionMode::BOTH,
        }
    }
}

/// Per-replication results at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub congestion: SweepCongestion,
    pub load_level: Option<f64>,
    pub c_v: f64,
    pub s1: Vec<f64>,
    pub completion_time: Vec<f64>,
    pub loss: Vec<f64>,
}

impl SweepPoint {
    pub fn row(&self) -> SweepRow {
        let s1 = Estimate::from_samples(&self.s1);
        let ct = Estimate::from_samples(&self.completion_time);
        SweepRow {
            congestion: self.congestion.label().to_string(),
            load_level: self.load_level,
            c_v: self.c_v,
            s1_mean: s1.mean,
            s1_half_width: s1.half_width,
            completion_mean: ct.mean,
            completion_half_width: ct.half_width,
            loss_mean: Estimate::from_samples(&self.loss).mean,
            replications: self.s1.len(),
        }
    }
}

/// Sweeps `C_v` (and the load, if that axis is present) under the given
/// forced congestion, pairing each method-A run with a no-control baseline.
pub fn sweep_cv(spec: &ExperimentSpec, congestion: SweepCongestion) -> Result<Vec<SweepPoint>> {
    let c_values = spec.require(SweepParam::CV)?;
    let loads: Vec<Option<f64>> = match spec.axis(SweepParam::Load) {
        Some(l) => l.iter().map(|&v| Some(v)).collect(),
        None => vec![None],
    };
    let reps = spec.replications;

    let mut base = spec.base.clone();
    base.congestion = congestion.mode();

    let tasks: Vec<(usize, Option<usize>, usize)> = (0..loads.len())
        .flat_map(|li| {
            std::iter::once(None)
                .chain((0..c_values.len()).map(Some))
                .flat_map(move |ci| (0..reps).map(move |k| (li, ci, k)))
        })
        .collect();
    let results: Vec<RunMetrics> = tasks
        .par_iter()
        .map(|&(li, ci, k)| {
            let mut cfg = base.clone();
            if let Some(load) = loads[li] {
                SweepParam::Load.apply(&mut cfg, load);
            }
            cfg.seed = derive_seed(base.seed, k as u64);
            match ci {
                None => cfg.control = ControlMethod::None,
                Some(ci) => {
                    cfg.control = ControlMethod::MethodA;
                    cfg.thresholds.c_v = c_values[ci];
                }
            }
            run(&cfg)
        })
        .collect::<Result<_>>()?;

    let per_load = (c_values.len() + 1) * reps;
    let mut points = Vec::new();
    for (li, load) in loads.iter().enumerate() {
        let chunk = &results[li * per_load..(li + 1) * per_load];
        let baseline = &chunk[..reps];
        for (ci, &c_v) in c_values.iter().enumerate() {
            let runs = &chunk[(ci + 1) * reps..(ci + 2) * reps];
            let s1 = runs
                .iter()
                .zip(baseline)
                .map(|(m, b)| compute_s1(m, b))
                .collect::<Result<Vec<_>>>()?;
            points.push(SweepPoint {
                congestion,
                load_level: *load,
                c_v,
                s1,
                completion_time: runs.iter().map(RunMetrics::mean_completion_time).collect(),
                loss: runs.iter().map(RunMetrics::loss_probability).collect(),
            });
        }
    }
    Ok(points)
}

pub fn decision_graph(spec: &ExperimentSpec) -> Result<DecisionGraph> {
    let candidates = spec.require(SweepParam::CV)?;
    let loads = spec.require(SweepParam::Load)?;
    let options = DecisionGraphOptions {
        resource: ResourceType::ProcessingAbility,
        replications: spec.replications,
        count_tolerance: spec.count_tolerance,
        loss_ceiling: spec.loss_ceiling,
    };
    build_decision_graph(&spec.base, candidates, loads, &options)
}

/// Paired per-replication results of method A and its revision at one `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessPoint {
    pub y: f64,
    pub method_a: Vec<RunMetrics>,
    pub revised: Vec<RunMetrics>,
}

impl FairnessPoint {
    pub fn f_method_a(&self) -> Vec<f64> {
        self.method_a.iter().map(|m| m.fairness_f).collect()
    }

    pub fn f_revised(&self) -> Vec<f64> {
        self.revised.iter().map(|m| m.fairness_f).collect()
    }

    /// `F(A) - F(revised)` per replication.
    pub fn f_gain(&self) -> Vec<f64> {
        self.f_method_a()
            .iter()
            .zip(self.f_revised())
            .map(|(a, r)| a - r)
            .collect()
    }

    /// Mean `F(revised)` over mean `F(A)`; 0 when method A was perfectly fair.
    pub fn normalized_revised(&self) -> f64 {
        let a = Estimate::from_samples(&self.f_method_a()).mean;
        let r = Estimate::from_samples(&self.f_revised()).mean;
        if a > 0.0 {
            r / a
        } else {
            0.0
        }
    }

    pub fn row(&self) -> FairnessComparisonRow {
        let fa = Estimate::from_samples(&self.f_method_a());
        let fr = Estimate::from_samples(&self.f_revised());
        let mean = |runs: &[RunMetrics], f: fn(&RunMetrics) -> f64| {
            Estimate::from_samples(&runs.iter().map(f).collect::<Vec<_>>()).mean
        };
        FairnessComparisonRow {
            y: self.y,
            f_method_a: fa.mean,
            f_method_a_half_width: fa.half_width,
            f_revised: fr.mean,
            f_revised_half_width: fr.half_width,
            f_normalized_method_a: if fa.mean > 0.0 { 1.0 } else { 0.0 },
            f_normalized_revised: self.normalized_revised(),
            f1_method_a: mean(&self.method_a, |m| m.fairness_f1),
            f1_revised: mean(&self.revised, |m| m.fairness_f1),
            efficiency_processing_method_a: mean(&self.method_a, |m| m.utilization.processing),
            efficiency_bandwidth_method_a: mean(&self.method_a, |m| m.utilization.bandwidth),
            efficiency_processing_revised: mean(&self.revised, |m| m.utilization.processing),
            efficiency_bandwidth_revised: mean(&self.revised, |m| m.utilization.bandwidth),
            replications: self.method_a.len(),
        }
    }
}

pub const DEFAULT_Y_VALUES: [f64; 3] = [1.0, 2.0, 4.0];

/// Compares method A with its revision for each `Y` (default 1, 2, 4).
pub fn fairness_comparison(spec: &ExperimentSpec) -> Result<Vec<FairnessPoint>> {
    let ys: Vec<f64> = spec
        .axis(SweepParam::Y)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| DEFAULT_Y_VALUES.to_vec());
    let reps = spec.replications;
    let tasks: Vec<(usize, bool, usize)> = (0..ys.len())
        .flat_map(|yi| [false, true].into_iter().flat_map(move |rev| (0..reps).map(move |k| (yi, rev, k))))
        .collect();
    let results: Vec<RunMetrics> = tasks
        .par_iter()
        .map(|&(yi, revised, k)| {
            let mut cfg = spec.base.clone();
            SweepParam::Y.apply(&mut cfg, ys[yi]);
            cfg.seed = derive_seed(spec.base.seed, k as u64);
            cfg.control = if revised {
                ControlMethod::MethodARevised
            } else {
                ControlMethod::MethodA
            };
            run(&cfg)
        })
        .collect::<Result<_>>()?;

    let mut results = results.into_iter();
    Ok(ys
        .iter()
        .map(|&y| {
            let method_a: Vec<_> = results.by_ref().take(reps).collect();
            let revised: Vec<_> = results.by_ref().take(reps).collect();
            FairnessPoint { y, method_a, revised }
        })
        .collect())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs one scenario and writes `metrics.csv`, `fairness.csv` and
/// `summary.txt` into `out`.
pub fn cmd_run(config: &ScenarioConfig, out: &Path) -> Result<(RunMetrics, Vec<PathBuf>)> {
    let metrics = run(config)?;
    ensure_dir(out)?;
    let paths = vec![out.join("metrics.csv"), out.join("fairness.csv"), out.join("summary.txt")];
    report::write_rows(&paths[0], &report::metrics_rows(&metrics))?;
    report::write_rows(
        &paths[1],
        &report::fairness_rows(&metrics.blocks, metrics.fairness_f, metrics.fairness_f1),
    )?;
    fs::write(&paths[2], report::summary_text(&metrics)).map_err(|e| Error::io(&paths[2], e))?;
    Ok((metrics, paths))
}

/// Writes one sweep table per congestion mode.
pub fn cmd_sweep_cv(spec: &ExperimentSpec, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let mut paths = Vec::new();
    for mode in [SweepCongestion::OnlyProcessing, SweepCongestion::Both] {
        let rows: Vec<SweepRow> = sweep_cv(spec, mode)?.iter().map(SweepPoint::row).collect();
        let path = out.join(format!("sweep_cv_{}.csv", mode.label().replace('-', "_")));
        report::write_rows(&path, &rows)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn cmd_decision_graph(spec: &ExperimentSpec, out: &Path) -> Result<(DecisionGraph, PathBuf)> {
    ensure_dir(out)?;
    let graph = decision_graph(spec)?;
    let path = out.join("decision_graph.csv");
    report::write_rows(&path, &report::decision_graph_rows(&graph))?;
    Ok((graph, path))
}

pub fn cmd_fairness(spec: &ExperimentSpec, out: &Path) -> Result<(Vec<FairnessPoint>, PathBuf)> {
    ensure_dir(out)?;
    let points = fairness_comparison(spec)?;
    let rows: Vec<_> = points.iter().map(FairnessPoint::row).collect();
    let path = out.join("fairness_comparison.csv");
    report::write_rows(&path, &rows)?;
    Ok((points, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{two_user_scenario, processing_congested_scenario};

    #[test]
    fn estimate_of_constant_samples() {
        let e = Estimate::from_samples(&[2.0, 2.0, 2.0]);
        assert_eq!((e.mean, e.half_width, e.n), (2.0, 0.0, 3));
        let e = Estimate::from_samples(&[1.0, 3.0]);
        assert_eq!(e.mean, 2.0);
        assert!((e.half_width - Z_95 * 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_point_count_matches_axes() {
        let mut base = processing_congested_scenario();
        base.horizon = 6.0 * base.block_length();
        let spec = ExperimentSpec {
            replications: 2,
            ..ExperimentSpec::new(base)
        }
        .with_axis(SweepParam::CV, vec![2.0, 4.0, 6.0])
        .with_axis(SweepParam::Load, vec![0.5, 1.0]);
        let points = sweep_cv(&spec, SweepCongestion::OnlyProcessing).unwrap();
        assert_eq!(points.len(), 6);
        assert!(points.iter().all(|p| p.s1.len() == 2));
    }

    #[test]
    fn missing_axis_is_a_config_error() {
        let spec = ExperimentSpec::new(processing_congested_scenario());
        assert!(matches!(sweep_cv(&spec, SweepCongestion::Both), Err(Error::Config(_))));
    }

    #[test]
    fn single_user_fairness_is_zero() {
        let mut base = two_user_scenario(1.0);
        base.users.truncate(1);
        base.horizon = 6.0 * base.block_length();
        let spec = ExperimentSpec {
            replications: 2,
            ..ExperimentSpec::new(base)
        };
        for p in fairness_comparison(&spec).unwrap() {
            assert!(p.f_method_a().iter().all(|&f| f == 0.0));
            assert!(p.f_revised().iter().all(|&f| f == 0.0));
        }
    }

    #[test]
    fn y_scales_first_user() {
        let mut cfg = two_user_scenario(1.0);
        SweepParam::Y.apply(&mut cfg, 4.0);
        let (a, b) = (cfg.users[0].workload.mean_interarrival, cfg.users[1].workload.mean_interarrival);
        assert!((a / b - 4.0).abs() < 1e-12);
        SweepParam::Load.apply(&mut cfg, 3.0);
        assert!((cfg.total_arrival_rate() - 3.0).abs() < 1e-12);
    }
}
