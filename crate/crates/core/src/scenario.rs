//! Scenario and experiment files.
//!
//! Files are TOML: top-level run settings, `[thresholds]`, `[congestion]`,
//! one `[[center]]` table per center, one `[[user]]` table per user and, for
//! experiments, an `[experiment]` table with `[[experiment.sweep]]` axes.
//! See `docs/scenario-format.md` for the full grammar.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::congestion::{CongestionMode, Thresholds, DEFAULT_ADAPTIVE_THRESHOLD};
use crate::decision_graph::DEFAULT_COUNT_TOLERANCE;
use crate::error::{Error, Result};
use crate::experiments::{ExperimentSpec, SweepAxis, SweepParam, DEFAULT_LOSS_CEILING, DEFAULT_REPLICATIONS};
use crate::model::{
    validate_scenario, CenterSpec, ControlMethod, PerResource, ScenarioConfig, UserConfig,
    UserProfile, WorkloadSpec, DEFAULT_WARMUP_BLOCKS,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default = "default_seed")]
    seed: u64,
    horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block_length: Option<f64>,
    #[serde(default = "default_warmup")]
    warmup_blocks: u32,
    #[serde(default = "default_control")]
    control: ControlMethod,
    #[serde(default = "default_gamma")]
    gamma: f64,
    #[serde(default)]
    discard_top_user_only: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    restrict_fraction: Option<f64>,
    thresholds: ThresholdsFile,
    congestion: CongestionFile,
    center: Vec<CenterSpec>,
    user: Vec<UserFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    experiment: Option<ExperimentFile>,
}

fn default_seed() -> u64 {
    1
}
fn default_warmup() -> u32 {
    DEFAULT_WARMUP_BLOCKS
}
fn default_control() -> ControlMethod {
    ControlMethod::MethodA
}
fn default_gamma() -> f64 {
    100.0
}
fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdsFile {
    c_v: f64,
    n_v: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum CongestionKind {
    Forced,
    Adaptive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CongestionFile {
    mode: CongestionKind,
    #[serde(default)]
    processing: bool,
    #[serde(default)]
    bandwidth: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UserFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<u32>,
    q: f64,
    #[serde(default = "default_one")]
    m: f64,
    #[serde(default = "default_one")]
    p: f64,
    mean_interarrival: f64,
    holding_time: f64,
    #[serde(default = "default_one")]
    size_variance: f64,
    pattern: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expected_demand: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    #[serde(default = "default_reps")]
    replications: usize,
    #[serde(default = "default_ceiling")]
    loss_ceiling: f64,
    #[serde(default = "default_tolerance")]
    count_tolerance: f64,
    #[serde(default)]
    sweep: Vec<SweepFile>,
}

fn default_reps() -> usize {
    DEFAULT_REPLICATIONS
}
fn default_ceiling() -> f64 {
    DEFAULT_LOSS_CEILING
}
fn default_tolerance() -> f64 {
    DEFAULT_COUNT_TOLERANCE
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    name: String,
    values: Vec<f64>,
}

/// A problem found in a scenario file, anchored to a line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub origin: String,
    /// 1-based.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.origin, self.line, self.message)
    }
}

fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(source.len());
    let before = &source.as_bytes()[..offset];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let col = before.iter().rev().take_while(|&&b| b != b'\n').count() + 1;
    (line, col)
}

fn parse_file(source: &str, origin: &str) -> Result<ScenarioFile> {
    toml::from_str(source).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|s| line_col(source, s.start))
            .unwrap_or((1, 1));
        Error::Parse {
            origin: origin.to_string(),
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })
}

/// Finds the line a field path such as `user[1].q` or `thresholds.c_v`
/// lives on. Falls back to the table header, then to line 1.
pub fn locate_field(source: &str, field: &str) -> usize {
    let (table, index, key) = split_field_path(field);
    let mut current: Option<(String, usize)> = None;
    let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
    let mut header_line = None;

    for (n, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix("[[").and_then(|l| l.split("]]").next()) {
            let name = name.trim().to_string();
            let count = counts.entry(name.clone()).or_insert(0);
            current = Some((name, *count));
            *count += 1;
        } else if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = Some((name.trim().to_string(), 0));
        } else {
            let in_table = match (&current, table) {
                (None, None) => true,
                (Some((name, i)), Some(t)) => name == t && *i == index,
                _ => false,
            };
            if in_table {
                if let Some(k) = key {
                    if let Some((lhs, _)) = line.split_once('=') {
                        if lhs.trim() == k {
                            return n + 1;
                        }
                    }
                }
            }
            continue;
        }
        if let (Some((name, i)), Some(t)) = (&current, table) {
            if name == t && *i == index && header_line.is_none() {
                header_line = Some(n + 1);
            }
        }
    }
    header_line.unwrap_or(1)
}

/// `user[1].pattern[0]` -> (Some("user"), 1, Some("pattern")).
fn split_field_path(field: &str) -> (Option<&str>, usize, Option<&str>) {
    let (head, key) = match field.split_once('.') {
        Some((h, k)) => (h, Some(k)),
        None => (field, None),
    };
    let (name, index) = match head.split_once('[') {
        Some((n, rest)) => (n, rest.trim_end_matches(']').parse().unwrap_or(0)),
        None => (head, 0),
    };
    let key = key.map(|k| k.split('[').next().unwrap_or(k));
    let is_table = matches!(name, "user" | "center" | "thresholds" | "congestion" | "experiment");
    if is_table {
        (Some(name), index, key)
    } else {
        // Top-level key.
        (None, 0, Some(name))
    }
}

fn into_config(file: ScenarioFile) -> Result<ScenarioConfig> {
    let congestion = match file.congestion.mode {
        CongestionKind::Forced => {
            CongestionMode::Forced(PerResource::new(file.congestion.processing, file.congestion.bandwidth))
        }
        CongestionKind::Adaptive => CongestionMode::Adaptive {
            threshold: file.congestion.threshold.unwrap_or(DEFAULT_ADAPTIVE_THRESHOLD),
        },
    };
    let users = file
        .user
        .into_iter()
        .enumerate()
        .map(|(i, u)| {
            let workload = WorkloadSpec {
                mean_interarrival: u.mean_interarrival,
                pattern: u.pattern.iter().map(|&[c, n]| PerResource::new(c, n)).collect(),
                size_variance: u.size_variance,
                holding_time: u.holding_time,
            };
            let expected_demand = u
                .expected_demand
                .map(|[c, n]| PerResource::new(c, n))
                .unwrap_or_else(|| workload.mean_size());
            UserConfig {
                profile: UserProfile {
                    user_id: u.id.unwrap_or(i as u32 + 1),
                    q: u.q,
                    m: u.m,
                    p: u.p,
                    expected_demand,
                },
                workload,
            }
        })
        .collect();
    Ok(ScenarioConfig {
        centers: file.center,
        users,
        thresholds: Thresholds {
            c_v: file.thresholds.c_v,
            n_v: file.thresholds.n_v,
        },
        congestion,
        control: file.control,
        block_length: file.block_length,
        warmup_blocks: file.warmup_blocks,
        gamma: file.gamma,
        discard_top_user_only: file.discard_top_user_only,
        restrict_fraction: file.restrict_fraction,
        horizon: file.horizon,
        seed: file.seed,
    })
}

fn check(config: &ScenarioConfig, source: &str, origin: &str) -> Result<()> {
    let report = validate_scenario(config);
    if report.is_ok() {
        return Ok(());
    }
    let diagnostics = report
        .violations
        .iter()
        .map(|v| Diagnostic {
            origin: origin.to_string(),
            line: locate_field(source, &v.field),
            message: v.to_string(),
        })
        .collect();
    Err(Error::Diagnostics(diagnostics))
}

/// Parses scenario text without validating it.
pub fn parse_scenario_unchecked(source: &str, origin: &str) -> Result<ScenarioConfig> {
    into_config(parse_file(source, origin)?)
}

/// Parses and validates scenario text. Any `[experiment]` table is ignored.
pub fn parse_scenario(source: &str, origin: &str) -> Result<ScenarioConfig> {
    let config = parse_scenario_unchecked(source, origin)?;
    check(&config, source, origin)?;
    Ok(config)
}

/// Parses and validates an experiment: a scenario plus `[experiment]`.
pub fn parse_experiment(source: &str, origin: &str) -> Result<ExperimentSpec> {
    let mut file = parse_file(source, origin)?;
    let experiment = file.experiment.take();
    let base = into_config(file)?;
    check(&base, source, origin)?;

    let mut spec = ExperimentSpec::new(base);
    if let Some(exp) = experiment {
        spec.replications = exp.replications;
        spec.loss_ceiling = exp.loss_ceiling;
        spec.count_tolerance = exp.count_tolerance;
        for (i, s) in exp.sweep.into_iter().enumerate() {
            let Some(param) = SweepParam::from_name(&s.name) else {
                return Err(Error::Diagnostics(vec![Diagnostic {
                    origin: origin.to_string(),
                    line: sweep_line(source, i),
                    message: format!(
                        "unknown sweep parameter `{}` (expected one of {})",
                        s.name,
                        SweepParam::NAMES.join(", ")
                    ),
                }]));
            };
            spec.axes.push(SweepAxis {
                param,
                values: s.values,
            });
        }
    }
    spec.check().map_err(|e| match e {
        Error::Config(message) => Error::Diagnostics(vec![Diagnostic {
            origin: origin.to_string(),
            line: locate_field(source, "experiment"),
            message,
        }]),
        other => other,
    })?;
    Ok(spec)
}

fn sweep_line(source: &str, index: usize) -> usize {
    source
        .lines()
        .enumerate()
        .filter(|(_, l)| l.trim().starts_with("[[experiment.sweep]]"))
        .nth(index)
        .map(|(n, _)| n + 1)
        .unwrap_or(1)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&source, &path.display().to_string())
}

pub fn load_experiment(path: &Path) -> Result<ExperimentSpec> {
    let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_experiment(&source, &path.display().to_string())
}

/// Renders a scenario back to the file format.
pub fn scenario_to_string(config: &ScenarioConfig) -> Result<String> {
    let (mode, flags, threshold) = match config.congestion {
        CongestionMode::Forced(f) => (CongestionKind::Forced, f, None),
        CongestionMode::Adaptive { threshold } => {
            (CongestionKind::Adaptive, PerResource::splat(false), Some(threshold))
        }
    };
    let file = ScenarioFile {
        seed: config.seed,
        horizon: config.horizon,
        block_length: config.block_length,
        warmup_blocks: config.warmup_blocks,
        control: config.control,
        gamma: config.gamma,
        discard_top_user_only: config.discard_top_user_only,
        restrict_fraction: config.restrict_fraction,
        thresholds: ThresholdsFile {
            c_v: config.thresholds.c_v,
            n_v: config.thresholds.n_v,
        },
        congestion: CongestionFile {
            mode,
            processing: flags.processing,
            bandwidth: flags.bandwidth,
            threshold,
        },
        center: config.centers.clone(),
        user: config
            .users
            .iter()
            .map(|u| UserFile {
                id: Some(u.profile.user_id),
                q: u.profile.q,
                m: u.profile.m,
                p: u.profile.p,
                mean_interarrival: u.workload.mean_interarrival,
                holding_time: u.workload.holding_time,
                size_variance: u.workload.size_variance,
                pattern: u.workload.pattern.iter().map(|s| [s.processing, s.bandwidth]).collect(),
                expected_demand: Some([u.profile.expected_demand.processing, u.profile.expected_demand.bandwidth]),
            })
            .collect(),
        experiment: None,
    };
    toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::two_user_scenario;
    use proptest::prelude::*;

    const MINIMAL: &str = r#"
horizon = 8000.0

[thresholds]
c_v = 2.0
n_v = 1.0

[congestion]
mode = "forced"
processing = true

[[center]]
c_max = 20.0
n_max = 20.0

[[user]]
q = 0.25
mean_interarrival = 0.5
holding_time = 6.0
pattern = [[2.0, 1.0]]
"#;

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let cfg = parse_scenario(MINIMAL, "minimal.toml").unwrap();
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.control, ControlMethod::MethodA);
        assert_eq!(cfg.users[0].profile.user_id, 1);
        assert_eq!(cfg.users[0].profile.expected_demand, PerResource::new(2.0, 1.0));
        assert_eq!(cfg.congestion, CongestionMode::ONLY_PROCESSING);
        assert_eq!(cfg.block_length(), 600.0);
    }

    #[test]
    fn missing_capacity_names_the_field() {
        let text = MINIMAL.replace("n_max = 20.0\n", "");
        let err = parse_scenario(&text, "s.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("n_max"), "{msg}");
        match err {
            Error::Parse { line, .. } => assert!(line > 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_errors_are_line_anchored() {
        let text = MINIMAL.replace("q = 0.25", "q = 0.0");
        let err = parse_scenario(&text, "s.toml").unwrap_err();
        let Error::Diagnostics(d) = err else { panic!() };
        let q_line = text.lines().position(|l| l.starts_with("q =")).unwrap() + 1;
        assert_eq!(d[0].line, q_line);
        assert!(d[0].message.contains("q out of range"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("horizon = 8000.0", "horizon = 8000.0\nhorizn = 1.0");
        assert!(matches!(parse_scenario(&text, "s.toml"), Err(Error::Parse { .. })));
    }

    #[test]
    fn experiment_axes_must_be_known() {
        let ok = format!("{MINIMAL}\n[experiment]\nreplications = 3\n[[experiment.sweep]]\nname = \"c_v\"\nvalues = [1.0, 2.0]\n");
        let spec = parse_experiment(&ok, "e.toml").unwrap();
        assert_eq!(spec.replications, 3);
        assert_eq!(spec.axes[0].param, SweepParam::CV);
        let bad = ok.replace("\"c_v\"", "\"cv\"");
        let err = parse_experiment(&bad, "e.toml").unwrap_err();
        assert!(err.to_string().contains("unknown sweep parameter `cv`"));
    }

    #[test]
    fn locate_falls_back_to_header() {
        let line = locate_field(MINIMAL, "user[0].m");
        let header = MINIMAL.lines().position(|l| l == "[[user]]").unwrap() + 1;
        assert_eq!(line, header);
        let h = MINIMAL.lines().position(|l| l.starts_with("horizon")).unwrap() + 1;
        assert_eq!(locate_field(MINIMAL, "horizon"), h);
    }

    proptest! {
        #[test]
        fn rendered_scenarios_parse_back(y in 1.0f64..8.0, seed in any::<u64>(), c_v in 0.5f64..5.0) {
            let mut cfg = two_user_scenario(y);
            cfg.seed = seed;
            cfg.thresholds.c_v = c_v;
            let text = scenario_to_string(&cfg).unwrap();
            let back = parse_scenario(&text, "rt.toml").unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
