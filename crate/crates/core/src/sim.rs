//! Event-driven simulation of the allocation pipeline.
//!
//! Events are processed in time order. At equal timestamps releases come
//! first, then the time-block boundary, then arrivals; arrivals are numbered
//! in processing order. Each arrival goes through the fairness gate (revised
//! method only), size decision and allocation. Rejected requests are dropped.
//!
//! Every user draws interarrival times and sizes from its own random stream,
//! and every arrival consumes the same four control coins whether or not it
//! needs them, so runs that differ only in control method see identical
//! workloads.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::allocation::ClusterState;
use crate::congestion::{decide_sizes, update_congestion, CongestionState};
use crate::error::{Error, Result};
use crate::fairness::{
    compute_block_record, discard_probabilities, discard_probabilities_top_only, fairness_f,
    fairness_f1, revised_gate, BlockFairnessRecord, FairnessBasis, GateVerdict,
};
use crate::model::{
    validate_scenario, AllocationDecision, AllocationOutcome, ControlMethod, PerResource, Request,
    RequestId, ScenarioConfig, TimeBlockLedger, UserId, UserProfile, SIZE_FLOOR,
};
use crate::rng;

/// Hooks into a running simulation. All methods default to no-ops.
pub trait Observer {
    fn on_decision(
        &mut self,
        _request: &Request,
        _profile: &UserProfile,
        _decision: &AllocationDecision,
        _cluster: &ClusterState,
    ) {
    }

    fn on_release(&mut self, _released: &[RequestId], _cluster: &ClusterState) {}

    /// Called after a block closes, with the discard probabilities that will
    /// be in force during the next block.
    fn on_block_closed(
        &mut self,
        _ledger: &TimeBlockLedger,
        _record: &BlockFairnessRecord,
        _next_probabilities: &BTreeMap<UserId, f64>,
    ) {
    }

    /// Called once after the horizon, when every release has been processed.
    fn on_drained(&mut self, _cluster: &ClusterState) {}
}

impl Observer for () {}

#[derive(Debug, Clone, Copy)]
pub struct Arrival {
    pub user_index: usize,
    pub time: f64,
    pub c_r: f64,
    pub n_r: f64,
    pub h: f64,
}

#[derive(Debug, Clone)]
struct UserStream {
    interarrival: Option<Exp<f64>>,
    pattern: Vec<PerResource<f64>>,
    std_dev: f64,
    holding_time: f64,
    position: usize,
    next_time: f64,
    rng: ChaCha8Rng,
}

impl UserStream {
    fn draw_size(&mut self, mean: f64) -> f64 {
        if self.std_dev == 0.0 {
            return mean;
        }
        let normal = Normal::new(mean, self.std_dev).expect("validated standard deviation");
        loop {
            let v = normal.sample(&mut self.rng);
            if v > SIZE_FLOOR {
                return v;
            }
        }
    }

    fn advance(&mut self) {
        self.next_time = match &self.interarrival {
            Some(exp) => self.next_time + exp.sample(&mut self.rng),
            None => f64::INFINITY,
        };
    }
}

/// Poisson arrivals per user with Gaussian sizes cycling through the user's
/// pattern of means.
#[derive(Debug, Clone)]
pub struct WorkloadGenerator {
    users: Vec<UserStream>,
    horizon: f64,
}

impl WorkloadGenerator {
    pub fn new(config: &ScenarioConfig, seed: u64) -> Self {
        let users = config
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let w = &u.workload;
                let rate = w.arrival_rate();
                let mut stream = UserStream {
                    interarrival: (rate > 0.0).then(|| Exp::new(rate).expect("positive rate")),
                    pattern: w.pattern.clone(),
                    std_dev: w.size_variance.sqrt(),
                    holding_time: w.holding_time,
                    position: 0,
                    next_time: 0.0,
                    rng: rng::stream(seed, i as u64),
                };
                stream.advance();
                stream
            })
            .collect();
        WorkloadGenerator {
            users,
            horizon: config.horizon,
        }
    }

    /// Time of the next arrival before the horizon.
    pub fn peek_time(&self) -> Option<f64> {
        self.users
            .iter()
            .map(|u| u.next_time)
            .filter(|&t| t < self.horizon)
            .min_by(f64::total_cmp)
    }

    fn next_user(&self) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, u) in self.users.iter().enumerate() {
            if u.next_time < self.horizon && best.is_none_or(|(t, _)| u.next_time < t) {
                best = Some((u.next_time, i));
            }
        }
        best.map(|(_, i)| i)
    }
}

impl Iterator for WorkloadGenerator {
    type Item = Arrival;

    fn next(&mut self) -> Option<Arrival> {
        let i = self.next_user()?;
        let u = &mut self.users[i];
        let time = u.next_time;
        let mean = u.pattern[u.position];
        u.position = (u.position + 1) % u.pattern.len();
        let c_r = u.draw_size(mean.processing);
        let n_r = u.draw_size(mean.bandwidth);
        let h = u.holding_time;
        u.advance();
        Some(Arrival {
            user_index: i,
            time,
            c_r,
            n_r,
            h,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UserMetrics {
    /// `None` for the aggregate over all users.
    pub user_id: Option<UserId>,
    pub generated: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub discarded: u64,
    pub restricted: u64,
    pub reduced: u64,
    pub completion_time_sum: f64,
}

impl UserMetrics {
    fn record(&mut self, decision: &AllocationDecision) {
        self.generated += 1;
        match decision.outcome {
            AllocationOutcome::Accepted => {
                self.accepted += 1;
                self.completion_time_sum += decision.h_1;
                if decision.reduced {
                    self.reduced += 1;
                }
            }
            AllocationOutcome::RejectedNoCapacity => self.rejected += 1,
            AllocationOutcome::DiscardedByFairnessGate => self.discarded += 1,
            AllocationOutcome::Restricted => self.restricted += 1,
        }
    }

    pub fn lost(&self) -> u64 {
        self.rejected + self.discarded + self.restricted
    }

    /// Lost over generated; 0 when nothing was generated.
    pub fn loss_probability(&self) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            self.lost() as f64 / self.generated as f64
        }
    }

    /// Mean arrival-to-release time of accepted requests; 0 when none were.
    pub fn mean_completion_time(&self) -> f64 {
        if self.accepted == 0 {
            0.0
        } else {
            self.completion_time_sum / self.accepted as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub control: ControlMethod,
    pub users: Vec<UserMetrics>,
    pub total: UserMetrics,
    /// Time-averaged utilization over the measured window.
    pub utilization: PerResource<f64>,
    /// Time-averaged number of allocations in service.
    pub mean_in_service: f64,
    /// Length of the measured window (horizon minus warm-up).
    pub measured_time: f64,
    pub blocks: Vec<BlockFairnessRecord>,
    pub fairness_f: f64,
    pub fairness_f1: f64,
    /// Nothing was generated, so the reported loss probability of 0 is a
    /// placeholder.
    pub loss_undefined: bool,
}

impl RunMetrics {
    pub fn user(&self, user: UserId) -> Option<&UserMetrics> {
        self.users.iter().find(|u| u.user_id == Some(user))
    }

    pub fn loss_probability(&self) -> f64 {
        self.total.loss_probability()
    }

    pub fn mean_completion_time(&self) -> f64 {
        self.total.mean_completion_time()
    }
}

/// Relative increase in accepted requests over a paired baseline run.
pub fn compute_s1(with_control: &RunMetrics, baseline: &RunMetrics) -> Result<f64> {
    if baseline.total.accepted == 0 {
        return Err(Error::Undefined("S_1 against a baseline that accepted nothing"));
    }
    let base = baseline.total.accepted as f64;
    Ok((with_control.total.accepted as f64 - base) / base)
}

pub fn run(config: &ScenarioConfig) -> Result<RunMetrics> {
    run_observed(config, &mut ())
}

/// Runs `config` under the conventional restrict-all method.
pub fn conventional_baseline(config: &ScenarioConfig) -> Result<RunMetrics> {
    let mut cfg = config.clone();
    cfg.control = ControlMethod::ConventionalRestrictAll;
    run(&cfg)
}

/// Time integral of a piecewise-constant quantity.
#[derive(Debug, Clone, Copy, Default)]
struct Area {
    processing: f64,
    bandwidth: f64,
    in_service: f64,
}

impl Area {
    fn add(&mut self, used: PerResource<f64>, in_service: usize, dt: f64) {
        self.processing += used.processing * dt;
        self.bandwidth += used.bandwidth * dt;
        self.in_service += in_service as f64 * dt;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Release,
    BlockBoundary,
    Arrival,
}

pub fn run_observed<O: Observer>(config: &ScenarioConfig, observer: &mut O) -> Result<RunMetrics> {
    let report = validate_scenario(config);
    if !report.is_ok() {
        return Err(Error::InvalidScenario(report));
    }

    let user_ids = config.user_ids();
    let user_index: BTreeMap<UserId, usize> =
        user_ids.iter().enumerate().map(|(i, u)| (*u, i)).collect();
    let max_sizes = config.least_max_sizes();
    let basis = FairnessBasis::from_expected_demand(
        config
            .users
            .iter()
            .map(|u| (u.profile.user_id, u.profile.expected_demand)),
        max_sizes,
    )?;
    let capacity = config.total_capacity();
    let block_len = config.block_length();
    let warmup_end = config.warmup_end();
    let horizon = config.horizon;
    let restrict_fraction = config.effective_restrict_fraction();

    let mut workload = WorkloadGenerator::new(config, config.seed);
    let mut control_rng = rng::stream(config.seed, rng::CONTROL_STREAM);
    let mut cluster = ClusterState::new(&config.centers);
    let mut congestion = CongestionState::new(config.congestion);
    let mut probabilities: BTreeMap<UserId, f64> = user_ids.iter().map(|u| (*u, 0.0)).collect();

    let mut block = 0u64;
    let mut block_start = 0.0;
    let mut ledger = TimeBlockLedger::open(0, user_ids.iter().copied());
    let mut block_area = Area::default();
    let mut measured_area = Area::default();
    let mut measured_time = 0.0;
    let mut records = Vec::new();

    let mut users: Vec<UserMetrics> = user_ids
        .iter()
        .map(|u| UserMetrics {
            user_id: Some(*u),
            ..Default::default()
        })
        .collect();
    let mut next_request: RequestId = 0;
    let mut last_time = 0.0;

    loop {
        let boundary = ((block + 1) as f64 * block_len).min(horizon);
        let candidates = [
            cluster.next_release_time().map(|t| (t, EventKind::Release)),
            Some((boundary, EventKind::BlockBoundary)),
            workload.peek_time().map(|t| (t, EventKind::Arrival)),
        ];
        let (now, kind) = candidates
            .into_iter()
            .flatten()
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .expect("the block boundary is always pending");

        block_area.add(cluster.used(), cluster.in_service_count(), now - last_time);
        last_time = now;

        match kind {
            EventKind::Release => {
                let released = cluster.release_expired(now);
                observer.on_release(&released, &cluster);
            }
            EventKind::BlockBoundary => {
                ledger.close();
                let record = compute_block_record(&ledger, &basis, max_sizes)?;
                let duration = now - block_start;
                let block_util = if duration > 0.0 {
                    PerResource::new(
                        block_area.processing / duration / capacity.processing,
                        block_area.bandwidth / duration / capacity.bandwidth,
                    )
                } else {
                    cluster.utilization()
                };
                if block >= u64::from(config.warmup_blocks) {
                    measured_area.processing += block_area.processing;
                    measured_area.bandwidth += block_area.bandwidth;
                    measured_area.in_service += block_area.in_service;
                    measured_time += duration;
                    records.push(record.clone());
                }
                probabilities = if config.discard_top_user_only {
                    discard_probabilities_top_only(&record)
                } else {
                    discard_probabilities(&record)
                };
                congestion = update_congestion(congestion, block_util);
                observer.on_block_closed(&ledger, &record, &probabilities);

                if now >= horizon {
                    break;
                }
                block += 1;
                block_start = now;
                block_area = Area::default();
                ledger = TimeBlockLedger::open(block, user_ids.iter().copied());
            }
            EventKind::Arrival => {
                let arrival = workload.next().expect("peeked arrival");
                let user = &config.users[arrival.user_index];
                let request = Request {
                    id: next_request,
                    user_id: user.profile.user_id,
                    arrival_time: arrival.time,
                    c_r: arrival.c_r,
                    n_r: arrival.n_r,
                    h: arrival.h,
                };
                next_request += 1;

                let coin_reduce: f64 = control_rng.random();
                let coin_subject: f64 = control_rng.random();
                let coin_discard: f64 = control_rng.random();
                let coin_restrict: f64 = control_rng.random();

                let lost = |outcome| AllocationDecision::lost(outcome, request.c_r, request.n_r, request.h, false);
                let decision = match config.control {
                    ControlMethod::None => {
                        cluster.try_allocate(request.id, request.c_r, request.n_r, request.h, now)?
                    }
                    ControlMethod::ConventionalRestrictAll => {
                        if congestion.any() && coin_restrict < restrict_fraction {
                            lost(AllocationOutcome::Restricted)
                        } else {
                            cluster.try_allocate(request.id, request.c_r, request.n_r, request.h, now)?
                        }
                    }
                    ControlMethod::MethodA | ControlMethod::MethodARevised => {
                        let gated = config.control == ControlMethod::MethodARevised
                            && congestion.any()
                            && revised_gate(
                                &request,
                                &probabilities,
                                config.gamma,
                                coin_subject,
                                coin_discard,
                            ) == GateVerdict::Discard;
                        if gated {
                            lost(AllocationOutcome::DiscardedByFairnessGate)
                        } else {
                            let sizes = decide_sizes(
                                &request,
                                &user.profile,
                                &config.thresholds,
                                &congestion,
                                coin_reduce,
                            )?;
                            let mut d = cluster.try_allocate(
                                request.id, sizes.c_r0, sizes.n_r0, sizes.h_1, now,
                            )?;
                            d.reduced = sizes.reduced;
                            d
                        }
                    }
                };

                ledger.record(request.user_id, &decision)?;
                if now >= warmup_end {
                    users[user_index[&request.user_id]].record(&decision);
                }
                observer.on_decision(&request, &user.profile, &decision, &cluster);
            }
        }
    }

    // Drain releases scheduled past the horizon.
    while let Some(t) = cluster.next_release_time() {
        let released = cluster.release_expired(t);
        observer.on_release(&released, &cluster);
    }
    observer.on_drained(&cluster);

    let mut total = UserMetrics::default();
    for u in &users {
        total.generated += u.generated;
        total.accepted += u.accepted;
        total.rejected += u.rejected;
        total.discarded += u.discarded;
        total.restricted += u.restricted;
        total.reduced += u.reduced;
        total.completion_time_sum += u.completion_time_sum;
    }
    let (utilization, mean_in_service) = if measured_time > 0.0 {
        (
            PerResource::new(
                measured_area.processing / measured_time / capacity.processing,
                measured_area.bandwidth / measured_time / capacity.bandwidth,
            ),
            measured_area.in_service / measured_time,
        )
    } else {
        (PerResource::splat(0.0), 0.0)
    };
    let (f, f1) = if records.is_empty() {
        (0.0, 0.0)
    } else {
        (fairness_f(&records)?, fairness_f1(&records)?)
    };

    Ok(RunMetrics {
        control: config.control,
        loss_undefined: total.generated == 0,
        users,
        total,
        utilization,
        mean_in_service,
        measured_time,
        blocks: records,
        fairness_f: f,
        fairness_f1: f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::congestion::CongestionMode;
    use crate::model::{CenterSpec, WorkloadSpec};
    use crate::presets::{two_user_scenario, single_user_scenario};

    #[test]
    fn zero_arrival_rate_gives_empty_metrics() {
        let mut cfg = two_user_scenario(1.0);
        for u in &mut cfg.users {
            u.workload.mean_interarrival = f64::INFINITY;
        }
        let m = run(&cfg).unwrap();
        assert_eq!(m.total, UserMetrics::default());
        assert_eq!(m.loss_probability(), 0.0);
        assert!(m.loss_undefined);
        assert_eq!(m.utilization, PerResource::new(0.0, 0.0));
    }

    #[test]
    fn uncontended_cluster_never_loses() {
        let mut cfg = two_user_scenario(1.0);
        cfg.centers = vec![CenterSpec { c_max: 1e6, n_max: 1e6 }; 2];
        cfg.control = ControlMethod::None;
        let m = run(&cfg).unwrap();
        assert!(m.total.generated > 1000);
        assert_eq!(m.total.lost(), 0);
        assert_eq!(m.total.reduced, 0);
        let h = cfg.users[0].workload.holding_time;
        assert!((m.mean_completion_time() - h).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_metrics() {
        let cfg = two_user_scenario(2.0);
        assert_eq!(run(&cfg).unwrap(), run(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(run(&cfg).unwrap().total, run(&other).unwrap().total);
    }

    #[test]
    fn generated_splits_into_outcomes() {
        let mut cfg = two_user_scenario(4.0);
        cfg.control = ControlMethod::MethodARevised;
        let m = run(&cfg).unwrap();
        for u in m.users.iter().chain(std::iter::once(&m.total)) {
            assert_eq!(u.generated, u.accepted + u.rejected + u.discarded + u.restricted);
        }
        assert!(m.total.discarded > 0);
    }

    #[test]
    fn workload_is_shared_across_control_methods() {
        let cfg = two_user_scenario(2.0);
        let mut a = cfg.clone();
        a.control = ControlMethod::None;
        let mut b = cfg.clone();
        b.control = ControlMethod::MethodARevised;
        let (ma, mb) = (run(&a).unwrap(), run(&b).unwrap());
        assert_eq!(ma.total.generated, mb.total.generated);
        for (x, y) in ma.users.iter().zip(&mb.users) {
            assert_eq!(x.generated, y.generated);
        }
    }

    #[test]
    fn pattern_cycles_and_sizes_stay_positive() {
        let mut cfg = single_user_scenario(1.0, 2.0, 1e6);
        cfg.users[0].workload = WorkloadSpec {
            mean_interarrival: 1.0,
            pattern: vec![PerResource::new(0.05, 3.0), PerResource::new(9.0, 0.05)],
            size_variance: 1.0,
            holding_time: 2.0,
        };
        let gen = WorkloadGenerator::new(&cfg, 3);
        let arrivals: Vec<_> = gen.take(4000).collect();
        assert!(arrivals.iter().all(|a| a.c_r > SIZE_FLOOR && a.n_r > SIZE_FLOOR));
        let even_c: f64 = arrivals.iter().step_by(2).map(|a| a.c_r).sum::<f64>() / 2000.0;
        let odd_c: f64 = arrivals.iter().skip(1).step_by(2).map(|a| a.c_r).sum::<f64>() / 2000.0;
        assert!(even_c < 1.0 && odd_c > 8.5, "{even_c} {odd_c}");
        assert!(arrivals.windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn single_server_loss_matches_erlang_b() {
        // One unit server, unit requests: blocking is a / (1 + a) with a = lambda * H.
        for &(rate, h) in &[(1.0, 2.0), (0.5, 1.0), (2.0, 3.0)] {
            let cfg = single_user_scenario(rate, h, 1.0);
            let m = run(&cfg).unwrap();
            let a = rate * h;
            let expected = a / (1.0 + a);
            let n = m.total.generated as f64;
            // Loss indicators are positively correlated; allow a generous band.
            let tol = 6.0 * (expected * (1.0 - expected) / n).sqrt() * (1.0 + a).sqrt();
            assert!(
                (m.loss_probability() - expected).abs() < tol,
                "rate {rate} H {h}: {} vs {expected} (tol {tol})",
                m.loss_probability()
            );
        }
    }

    #[test]
    fn littles_law_on_uncontended_runs() {
        let mut cfg = single_user_scenario(2.0, 5.0, 1e6);
        cfg.horizon = 50_000.0;
        let m = run(&cfg).unwrap();
        let expected = 2.0 * 5.0;
        assert!((m.mean_in_service - expected).abs() < 0.05 * expected, "{}", m.mean_in_service);
    }

    #[test]
    fn restriction_zero_matches_no_control() {
        let mut cfg = two_user_scenario(2.0);
        cfg.control = ControlMethod::None;
        let none = run(&cfg).unwrap();
        cfg.restrict_fraction = Some(0.0);
        let conv = conventional_baseline(&cfg).unwrap();
        assert_eq!(none.total, conv.total);
    }

    #[test]
    fn full_restriction_accepts_nothing() {
        let mut cfg = two_user_scenario(2.0);
        cfg.congestion = CongestionMode::ONLY_PROCESSING;
        cfg.restrict_fraction = Some(1.0);
        let m = conventional_baseline(&cfg).unwrap();
        assert_eq!(m.total.accepted, 0);
        assert_eq!(m.total.restricted, m.total.generated);
    }

    #[test]
    fn half_restriction_thins_arrivals() {
        let mut cfg = single_user_scenario(1.0, 1.0, 1e6);
        cfg.congestion = CongestionMode::BOTH;
        cfg.restrict_fraction = Some(0.5);
        cfg.horizon = 20_000.0;
        let m = conventional_baseline(&cfg).unwrap();
        let n = m.total.generated as f64;
        let sigma = (n * 0.25).sqrt();
        assert!((m.total.accepted as f64 - n / 2.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn s1_cases() {
        let cfg = two_user_scenario(2.0);
        let m = run(&cfg).unwrap();
        assert_eq!(compute_s1(&m, &m).unwrap(), 0.0);
        let mut a = m.clone();
        let mut b = m.clone();
        a.total.accepted = 1200;
        b.total.accepted = 1000;
        assert!((compute_s1(&a, &b).unwrap() - 0.2).abs() < 1e-15);
        b.total.accepted = 0;
        assert!(matches!(compute_s1(&a, &b), Err(Error::Undefined(_))));
    }

    #[test]
    fn horizon_inside_warmup_is_an_error() {
        let mut cfg = two_user_scenario(1.0);
        cfg.horizon = cfg.block_length();
        assert!(matches!(run(&cfg), Err(Error::InvalidScenario(_))));
    }
}
