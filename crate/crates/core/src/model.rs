//! Domain types shared by the allocation engine, the congestion controller,
//! the fairness calculator and the simulator.
//!
//! Sizes are continuous, dimensionless quantities: processing ability and
//! bandwidth are each normalized against their own maximum so the two can be
//! compared. Capacities such as `C_max = 20` are plain unit counts.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::congestion::{CongestionMode, Thresholds};
use crate::error::{Error, Result};

pub type UserId = u32;
pub type CenterId = usize;
pub type RequestId = u64;

/// Smallest size the workload generator will emit; Gaussian draws at or
/// below it are resampled.
pub const SIZE_FLOOR: f64 = 0.01;

/// Time blocks must be at least this many holding times long.
pub const MIN_BLOCK_HOLDING_RATIO: f64 = 10.0;
/// Default time block length, in holding times.
pub const DEFAULT_BLOCK_HOLDING_RATIO: f64 = 100.0;
pub const DEFAULT_WARMUP_BLOCKS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResourceType {
    ProcessingAbility,
    Bandwidth,
}

impl ResourceType {
    pub const ALL: [ResourceType; 2] = [ResourceType::ProcessingAbility, ResourceType::Bandwidth];

    pub fn label(self) -> &'static str {
        match self {
            ResourceType::ProcessingAbility => "processing",
            ResourceType::Bandwidth => "bandwidth",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "processing" => Some(ResourceType::ProcessingAbility),
            "bandwidth" => Some(ResourceType::Bandwidth),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            ResourceType::ProcessingAbility => ResourceType::Bandwidth,
            ResourceType::Bandwidth => ResourceType::ProcessingAbility,
        }
    }
}

impl fmt::Display for ResourceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A value for each resource type. Total by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PerResource<T> {
    pub processing: T,
    pub bandwidth: T,
}

impl<T> PerResource<T> {
    pub const fn new(processing: T, bandwidth: T) -> Self {
        PerResource {
            processing,
            bandwidth,
        }
    }

    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> PerResource<U> {
        PerResource {
            processing: f(self.processing),
            bandwidth: f(self.bandwidth),
        }
    }

    pub fn zip<U>(self, other: PerResource<U>) -> PerResource<(T, U)> {
        PerResource {
            processing: (self.processing, other.processing),
            bandwidth: (self.bandwidth, other.bandwidth),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ResourceType, &T)> {
        [
            (ResourceType::ProcessingAbility, &self.processing),
            (ResourceType::Bandwidth, &self.bandwidth),
        ]
        .into_iter()
    }
}

impl<T: Copy> PerResource<T> {
    pub const fn splat(value: T) -> Self {
        PerResource {
            processing: value,
            bandwidth: value,
        }
    }
}

impl<T> Index<ResourceType> for PerResource<T> {
    type Output = T;

    fn index(&self, rt: ResourceType) -> &T {
        match rt {
            ResourceType::ProcessingAbility => &self.processing,
            ResourceType::Bandwidth => &self.bandwidth,
        }
    }
}

impl<T> IndexMut<ResourceType> for PerResource<T> {
    fn index_mut(&mut self, rt: ResourceType) -> &mut T {
        match rt {
            ResourceType::ProcessingAbility => &mut self.processing,
            ResourceType::Bandwidth => &mut self.bandwidth,
        }
    }
}

/// Service parameters a user declares alongside its requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    /// Maximum reduction coefficient: allocated sizes never fall below
    /// `q` times the requested sizes.
    pub q: f64,
    /// Ratio of resource holding time. Must be at least `q`.
    pub m: f64,
    /// Probability that a reduction-eligible request is actually reduced.
    pub p: f64,
    /// Expected requested amount per resource type.
    pub expected_demand: PerResource<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub user_id: UserId,
    pub arrival_time: f64,
    /// Required processing ability.
    pub c_r: f64,
    /// Required bandwidth.
    pub n_r: f64,
    /// Required holding time.
    pub h: f64,
}

impl Request {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.c_r) && ok(self.n_r) && ok(self.h) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "request {} has non-positive size or holding time ({}, {}, {})",
                self.id, self.c_r, self.n_r, self.h
            )))
        }
    }

    /// Acceptable minimum sizes `(C_0, N_0)` under reduction coefficient `q`.
    pub fn minimums(&self, q: f64) -> (f64, f64) {
        (q * self.c_r, q * self.n_r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterSpec {
    pub c_max: f64,
    pub n_max: f64,
}

impl CenterSpec {
    pub fn capacity(&self) -> PerResource<f64> {
        PerResource::new(self.c_max, self.n_max)
    }
}

/// Least maximum size of each resource type across all centers.
pub fn least_max_sizes(centers: &[CenterSpec]) -> PerResource<f64> {
    centers.iter().fold(PerResource::splat(f64::INFINITY), |acc, c| {
        PerResource::new(acc.processing.min(c.c_max), acc.bandwidth.min(c.n_max))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationOutcome {
    Accepted,
    RejectedNoCapacity,
    DiscardedByFairnessGate,
    /// Turned away by the conventional restrict-all congestion response.
    Restricted,
}

impl AllocationOutcome {
    pub fn is_loss(self) -> bool {
        self != AllocationOutcome::Accepted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub outcome: AllocationOutcome,
    pub center: Option<CenterId>,
    pub c_r0: f64,
    pub n_r0: f64,
    pub h_1: f64,
    pub reduced: bool,
}

impl AllocationDecision {
    pub fn is_accepted(&self) -> bool {
        self.outcome == AllocationOutcome::Accepted
    }

    pub(crate) fn lost(outcome: AllocationOutcome, c_r0: f64, n_r0: f64, h_1: f64, reduced: bool) -> Self {
        AllocationDecision {
            outcome,
            center: None,
            c_r0,
            n_r0,
            h_1,
            reduced,
        }
    }
}

/// Per-user tallies within one time block.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlockTally {
    /// Sum of allocated sizes of requests accepted during the block.
    pub allocated: PerResource<f64>,
    pub generated: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub discarded: u64,
    pub restricted: u64,
}

impl BlockTally {
    pub fn losses(&self) -> u64 {
        self.rejected + self.discarded + self.restricted
    }
}

/// Allocation totals of one time block. Once closed the ledger rejects
/// further records.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBlockLedger {
    index: u64,
    users: BTreeMap<UserId, BlockTally>,
    closed: bool,
}

impl TimeBlockLedger {
    pub fn open(index: u64, users: impl IntoIterator<Item = UserId>) -> Self {
        TimeBlockLedger {
            index,
            users: users.into_iter().map(|u| (u, BlockTally::default())).collect(),
            closed: false,
        }
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn tally(&self, user: UserId) -> Option<&BlockTally> {
        self.users.get(&user)
    }

    pub fn tallies(&self) -> impl Iterator<Item = (UserId, &BlockTally)> {
        self.users.iter().map(|(u, t)| (*u, t))
    }

    pub fn user_ids(&self) -> impl Iterator<Item = UserId> + '_ {
        self.users.keys().copied()
    }

    /// True if any user lost a request during the block.
    pub fn any_loss(&self) -> bool {
        self.users.values().any(|t| t.losses() > 0)
    }

    /// Records one request and what happened to it.
    pub fn record(&mut self, user: UserId, decision: &AllocationDecision) -> Result<()> {
        if self.closed {
            return Err(Error::InvalidInput(format!(
                "time block {} is closed",
                self.index
            )));
        }
        let tally = self.users.entry(user).or_default();
        tally.generated += 1;
        match decision.outcome {
            AllocationOutcome::Accepted => {
                tally.accepted += 1;
                tally.allocated.processing += decision.c_r0;
                tally.allocated.bandwidth += decision.n_r0;
            }
            AllocationOutcome::RejectedNoCapacity => tally.rejected += 1,
            AllocationOutcome::DiscardedByFairnessGate => tally.discarded += 1,
            AllocationOutcome::Restricted => tally.restricted += 1,
        }
        Ok(())
    }
}

/// Arrival process and request shapes for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    /// Mean of the exponential interarrival time. `inf` means no arrivals.
    pub mean_interarrival: f64,
    /// Cycle of mean sizes `(C = a_u, N = b_u)`, repeated request by request.
    pub pattern: Vec<PerResource<f64>>,
    /// Variance of the Gaussian around each pattern mean.
    pub size_variance: f64,
    /// Constant required holding time `H`.
    pub holding_time: f64,
}

impl WorkloadSpec {
    pub fn mean_size(&self) -> PerResource<f64> {
        let n = self.pattern.len().max(1) as f64;
        let sum = self
            .pattern
            .iter()
            .fold(PerResource::splat(0.0), |acc, s| {
                PerResource::new(acc.processing + s.processing, acc.bandwidth + s.bandwidth)
            });
        sum.map(|v| v / n)
    }

    pub fn arrival_rate(&self) -> f64 {
        if self.mean_interarrival.is_infinite() {
            0.0
        } else {
            1.0 / self.mean_interarrival
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserConfig {
    pub profile: UserProfile,
    pub workload: WorkloadSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMethod {
    None,
    ConventionalRestrictAll,
    MethodA,
    MethodARevised,
}

impl ControlMethod {
    pub fn label(self) -> &'static str {
        match self {
            ControlMethod::None => "none",
            ControlMethod::ConventionalRestrictAll => "conventional",
            ControlMethod::MethodA => "method-a",
            ControlMethod::MethodARevised => "method-a-revised",
        }
    }

    pub fn reduces_sizes(self) -> bool {
        matches!(self, ControlMethod::MethodA | ControlMethod::MethodARevised)
    }
}

/// Everything needed to run one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub centers: Vec<CenterSpec>,
    pub users: Vec<UserConfig>,
    pub thresholds: Thresholds,
    pub congestion: CongestionMode,
    pub control: ControlMethod,
    /// Time block length; `None` means 100 holding times.
    pub block_length: Option<f64>,
    pub warmup_blocks: u32,
    /// Percentage of requests subject to the fairness gate.
    pub gamma: f64,
    /// Restrict fairness discards to the best-served user of the previous block.
    pub discard_top_user_only: bool,
    /// Fraction of arrivals the conventional method turns away while
    /// congested; `None` derives it from offered load.
    pub restrict_fraction: Option<f64>,
    /// Simulated seconds.
    pub horizon: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn max_holding_time(&self) -> f64 {
        self.users
            .iter()
            .map(|u| u.workload.holding_time)
            .fold(0.0, f64::max)
    }

    pub fn block_length(&self) -> f64 {
        self.block_length
            .unwrap_or(DEFAULT_BLOCK_HOLDING_RATIO * self.max_holding_time())
    }

    pub fn warmup_end(&self) -> f64 {
        f64::from(self.warmup_blocks) * self.block_length()
    }

    pub fn least_max_sizes(&self) -> PerResource<f64> {
        least_max_sizes(&self.centers)
    }

    pub fn total_capacity(&self) -> PerResource<f64> {
        self.centers.iter().fold(PerResource::splat(0.0), |acc, c| {
            PerResource::new(acc.processing + c.c_max, acc.bandwidth + c.n_max)
        })
    }

    /// Offered load in resource-time per second, per type.
    pub fn offered_load(&self) -> PerResource<f64> {
        self.users.iter().fold(PerResource::splat(0.0), |acc, u| {
            let rate = u.workload.arrival_rate();
            let mean = u.workload.mean_size();
            let h = u.workload.holding_time;
            PerResource::new(
                acc.processing + rate * mean.processing * h,
                acc.bandwidth + rate * mean.bandwidth * h,
            )
        })
    }

    /// Restriction fraction for the conventional method: the configured one,
    /// or the fraction that brings the busier type's offered load down to
    /// capacity.
    pub fn effective_restrict_fraction(&self) -> f64 {
        if let Some(rho) = self.restrict_fraction {
            return rho;
        }
        let offered = self.offered_load();
        let capacity = self.total_capacity();
        ResourceType::ALL
            .iter()
            .map(|&rt| {
                if offered[rt] > capacity[rt] {
                    1.0 - capacity[rt] / offered[rt]
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn user_ids(&self) -> Vec<UserId> {
        self.users.iter().map(|u| u.profile.user_id).collect()
    }

    /// Multiplies every user's arrival rate by `factor`.
    pub fn scale_arrival_rates(&mut self, factor: f64) {
        for u in &mut self.users {
            u.workload.mean_interarrival /= factor;
        }
    }

    /// Total request generation rate over all users.
    pub fn total_arrival_rate(&self) -> f64 {
        self.users.iter().map(|u| u.workload.arrival_rate()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Dotted path of the offending field, e.g. `user[1].q`.
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations
            .iter()
            .any(|v| v.message.contains(needle) || v.field.contains(needle))
    }

    fn fail(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.warnings.push(Violation {
            field: field.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "error: {v}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

/// Checks every structural invariant of a scenario. An empty violation list
/// means the scenario can be run.
pub fn validate_scenario(config: &ScenarioConfig) -> ValidationReport {
    let mut report = ValidationReport::default();

    if config.centers.is_empty() {
        report.fail("center", "at least one center is required");
    }
    for (i, c) in config.centers.iter().enumerate() {
        if !positive(c.c_max) {
            report.fail(format!("center[{i}].c_max"), "capacity must be positive");
        }
        if !positive(c.n_max) {
            report.fail(format!("center[{i}].n_max"), "capacity must be positive");
        }
    }

    if config.users.is_empty() {
        report.fail("user", "at least one user is required");
    }
    let mut seen = std::collections::BTreeSet::new();
    for (i, u) in config.users.iter().enumerate() {
        let p = &u.profile;
        let w = &u.workload;
        let at = |k: &str| format!("user[{i}].{k}");
        if !seen.insert(p.user_id) {
            report.fail(at("id"), format!("duplicate user id {}", p.user_id));
        }
        if !(p.q > 0.0 && p.q <= 1.0) {
            report.fail(at("q"), "q out of range (0 < q <= 1)");
        }
        if !(p.p > 0.0 && p.p <= 1.0) {
            report.fail(at("p"), "p out of range (0 < p <= 1)");
        }
        if !(p.m.is_finite() && p.m >= p.q) {
            report.fail(at("m"), "M must be finite and at least q");
        }
        if !(positive(p.expected_demand.processing) && positive(p.expected_demand.bandwidth)) {
            report.fail(at("expected_demand"), "expected demand must be positive");
        }
        if w.mean_interarrival.is_nan() || w.mean_interarrival <= 0.0 {
            report.fail(at("mean_interarrival"), "mean interarrival must be positive");
        }
        if !positive(w.holding_time) {
            report.fail(at("holding_time"), "holding time must be positive");
        }
        if !(w.size_variance.is_finite() && w.size_variance >= 0.0) {
            report.fail(at("size_variance"), "size variance must be non-negative");
        }
        if w.pattern.is_empty() {
            report.fail(at("pattern"), "pattern must contain at least one (C, N) pair");
        }
        for (j, s) in w.pattern.iter().enumerate() {
            let floor = if w.size_variance == 0.0 { SIZE_FLOOR } else { 0.0 };
            if !(s.processing.is_finite() && s.processing > floor)
                || !(s.bandwidth.is_finite() && s.bandwidth > floor)
            {
                report.fail(
                    format!("user[{i}].pattern[{j}]"),
                    format!("pattern sizes must exceed {floor}"),
                );
            }
        }
    }

    let t = &config.thresholds;
    if !positive(t.c_v) {
        report.fail("thresholds.c_v", "threshold must be positive");
    }
    if !positive(t.n_v) {
        report.fail("thresholds.n_v", "threshold must be positive");
    }
    if let CongestionMode::Adaptive { threshold } = config.congestion {
        if !(threshold > 0.0 && threshold <= 1.0) {
            report.fail("congestion.threshold", "utilization threshold out of range (0, 1]");
        }
    }

    let h = config.max_holding_time();
    if let Some(len) = config.block_length {
        if !positive(len) {
            report.fail("block_length", "time block length must be positive");
        } else if h > 0.0 && len < MIN_BLOCK_HOLDING_RATIO * h {
            report.fail(
                "block_length",
                format!("time block too short: {len} < {MIN_BLOCK_HOLDING_RATIO} x H ({h})"),
            );
        }
    }

    if config.gamma == 0.0 {
        report.warn("gamma", "gamma is 0; the fairness gate is disabled");
    } else if !(config.gamma > 0.0 && config.gamma <= 100.0) {
        report.fail("gamma", "gamma out of range (0 < gamma <= 100)");
    }
    if let Some(rho) = config.restrict_fraction {
        if !(0.0..=1.0).contains(&rho) {
            report.fail("restrict_fraction", "restrict fraction out of range [0, 1]");
        }
    }

    if !positive(config.horizon) {
        report.fail("horizon", "horizon must be positive");
    } else if positive(config.block_length()) && config.horizon <= config.warmup_end() {
        report.fail(
            "horizon",
            format!(
                "horizon shorter than warm-up ({} blocks of {})",
                config.warmup_blocks,
                config.block_length()
            ),
        );
    }

    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::two_user_scenario;

    #[test]
    fn q_zero_is_rejected() {
        let mut cfg = two_user_scenario(1.0);
        cfg.users[0].profile.q = 0.0;
        let report = validate_scenario(&cfg);
        assert!(report.mentions("q out of range"), "{report}");
    }

    #[test]
    fn m_equal_to_q_is_valid() {
        let mut cfg = two_user_scenario(1.0);
        for u in &mut cfg.users {
            u.profile.m = u.profile.q;
        }
        let report = validate_scenario(&cfg);
        assert!(report.is_ok(), "{report}");
    }

    #[test]
    fn short_time_block_is_rejected() {
        let mut cfg = two_user_scenario(1.0);
        let h = cfg.max_holding_time();
        cfg.block_length = Some(5.0 * h);
        assert!(validate_scenario(&cfg).mentions("time block too short"));
        cfg.block_length = Some(10.0 * h);
        assert!(validate_scenario(&cfg).is_ok());
    }

    #[test]
    fn gamma_zero_only_warns() {
        let mut cfg = two_user_scenario(1.0);
        cfg.gamma = 0.0;
        let report = validate_scenario(&cfg);
        assert!(report.is_ok());
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn horizon_must_cover_warmup() {
        let mut cfg = two_user_scenario(1.0);
        cfg.horizon = cfg.warmup_end();
        assert!(validate_scenario(&cfg).mentions("warm-up"));
    }

    #[test]
    fn closed_ledger_refuses_records() {
        let mut ledger = TimeBlockLedger::open(0, [1, 2]);
        let d = AllocationDecision {
            outcome: AllocationOutcome::Accepted,
            center: Some(0),
            c_r0: 2.0,
            n_r0: 1.0,
            h_1: 6.0,
            reduced: false,
        };
        ledger.record(1, &d).unwrap();
        ledger.close();
        assert!(ledger.record(1, &d).is_err());
        assert_eq!(ledger.tally(1).unwrap().allocated, PerResource::new(2.0, 1.0));
    }

    #[test]
    fn least_max_takes_the_smallest_center() {
        let centers = [
            CenterSpec { c_max: 50.0, n_max: 30.0 },
            CenterSpec { c_max: 80.0, n_max: 20.0 },
        ];
        assert_eq!(least_max_sizes(&centers), PerResource::new(50.0, 20.0));
    }
}
