//! Ready-made scenarios used by the CLI examples, the tests and the
//! acceptance suite.

use crate::congestion::{CongestionMode, Thresholds};
use crate::model::{
    CenterSpec, ControlMethod, PerResource, ScenarioConfig, UserConfig, UserProfile, WorkloadSpec,
    DEFAULT_WARMUP_BLOCKS,
};

const HOLDING_TIME: f64 = 6.0;
const CENTER_CAPACITY: f64 = 20.0;
const REDUCTION_FLOOR: f64 = 0.25;

fn user(id: u32, q: f64, p: f64, mean_interarrival: f64, pattern: Vec<PerResource<f64>>, h: f64) -> UserConfig {
    let workload = WorkloadSpec {
        mean_interarrival,
        pattern,
        size_variance: 1.0,
        holding_time: h,
    };
    UserConfig {
        profile: UserProfile {
            user_id: id,
            q,
            m: 1.0,
            p,
            expected_demand: workload.mean_size(),
        },
        workload,
    }
}

fn two_centers(c: f64, n: f64) -> Vec<CenterSpec> {
    vec![CenterSpec { c_max: c, n_max: n }; 2]
}

/// Two users with identical `{C = 2, N = 1}` demand on two `(20, 20)`
/// centers, `H = 6`, `q = 0.25`, `gamma = 100`. User 1 requests `y` times
/// less often than user 2. Processing ability is forced congested.
pub fn two_user_scenario(y: f64) -> ScenarioConfig {
    let user2_interarrival = 0.4;
    let demand = vec![PerResource::new(2.0, 1.0)];
    ScenarioConfig {
        centers: two_centers(CENTER_CAPACITY, CENTER_CAPACITY),
        users: vec![
            user(1, REDUCTION_FLOOR, 1.0, y * user2_interarrival, demand.clone(), HOLDING_TIME),
            user(2, REDUCTION_FLOOR, 1.0, user2_interarrival, demand, HOLDING_TIME),
        ],
        thresholds: Thresholds { c_v: 1.5, n_v: 1.0 },
        congestion: CongestionMode::ONLY_PROCESSING,
        control: ControlMethod::MethodA,
        block_length: Some(100.0 * HOLDING_TIME),
        warmup_blocks: DEFAULT_WARMUP_BLOCKS,
        gamma: 100.0,
        discard_top_user_only: false,
        restrict_fraction: None,
        horizon: 22.0 * 100.0 * HOLDING_TIME,
        seed: 1,
    }
}

/// A processing-bound workload at the same capacity scale: requests cycle
/// between a processing-heavy and a light shape, offered processing load
/// above capacity and bandwidth load below it.
pub fn processing_congested_scenario() -> ScenarioConfig {
    let pattern = vec![PerResource::new(8.0, 3.0), PerResource::new(2.0, 2.0)];
    ScenarioConfig {
        centers: two_centers(CENTER_CAPACITY, CENTER_CAPACITY),
        users: vec![user(1, REDUCTION_FLOOR, 1.0, 0.8, pattern, HOLDING_TIME)],
        thresholds: Thresholds { c_v: 3.0, n_v: 2.0 },
        congestion: CongestionMode::ONLY_PROCESSING,
        control: ControlMethod::MethodA,
        block_length: Some(100.0 * HOLDING_TIME),
        warmup_blocks: DEFAULT_WARMUP_BLOCKS,
        gamma: 100.0,
        discard_top_user_only: false,
        restrict_fraction: None,
        horizon: 22.0 * 100.0 * HOLDING_TIME,
        seed: 1,
    }
}

/// Requests alternate between a processing-heavy `{C = 8, N = 1}` and a
/// bandwidth-heavy `{C = 1, N = 8}` shape (size variance 0.25) at 1.4
/// requests per second on two `(20, 20)` centers, so both types are offered
/// about 95% of capacity. Processing is forced congested; `N_v = 2`.
pub fn dual_load_scenario() -> ScenarioConfig {
    let pattern = vec![PerResource::new(8.0, 1.0), PerResource::new(1.0, 8.0)];
    let mut u = user(1, REDUCTION_FLOOR, 1.0, 1.0 / 1.4, pattern, HOLDING_TIME);
    u.workload.size_variance = 0.25;
    u.profile.expected_demand = u.workload.mean_size();
    ScenarioConfig {
        users: vec![u],
        thresholds: Thresholds { c_v: 3.0, n_v: 2.0 },
        ..processing_congested_scenario()
    }
}

/// One user with deterministic unit-or-larger sizes on a single center of
/// capacity `(capacity, capacity)`. With `capacity = 1` this is a
/// single-server loss system.
pub fn single_user_scenario(rate: f64, holding_time: f64, capacity: f64) -> ScenarioConfig {
    let mut u = user(1, 0.5, 1.0, 1.0 / rate, vec![PerResource::new(1.0, 1.0)], holding_time);
    u.workload.size_variance = 0.0;
    ScenarioConfig {
        centers: vec![CenterSpec {
            c_max: capacity,
            n_max: capacity,
        }],
        users: vec![u],
        thresholds: Thresholds { c_v: 1.0, n_v: 1.0 },
        congestion: CongestionMode::NONE,
        control: ControlMethod::None,
        block_length: Some(100.0 * holding_time),
        warmup_blocks: DEFAULT_WARMUP_BLOCKS,
        gamma: 100.0,
        discard_top_user_only: false,
        restrict_fraction: None,
        horizon: 20_000.0f64.max(40.0 * 100.0 * holding_time),
        seed: 7,
    }
}
