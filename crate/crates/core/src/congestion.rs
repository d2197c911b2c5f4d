//! Size-reduction congestion control.
//!
//! When a resource type is congested, a request whose size of that type
//! exceeds the type's threshold is shrunk to the threshold. The other type is
//! scaled by the same ratio and the holding time is stretched by its inverse,
//! so the resource-time product is unchanged. Neither size may drop below the
//! user's floor `q * size`; if the proportional scaling would cross it, both
//! sizes are pinned at their floors instead and the holding time becomes
//! `(H / q) * M`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PerResource, Request, ResourceType, UserProfile};

/// Default utilization at which adaptive mode declares a type congested.
pub const DEFAULT_ADAPTIVE_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Processing-ability reduction threshold `C_v`.
    pub c_v: f64,
    /// Bandwidth reduction threshold `N_v`.
    pub n_v: f64,
}

impl Thresholds {
    pub fn new(c_v: f64, n_v: f64) -> Result<Self> {
        let t = Thresholds { c_v, n_v };
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.c_v) && ok(self.n_v) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "reduction thresholds must be positive, got C_v = {}, N_v = {}",
                self.c_v, self.n_v
            )))
        }
    }

    pub fn get(&self, rt: ResourceType) -> f64 {
        match rt {
            ResourceType::ProcessingAbility => self.c_v,
            ResourceType::Bandwidth => self.n_v,
        }
    }
}

/// How congestion flags are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum CongestionMode {
    /// Flags are fixed for the whole run.
    Forced(PerResource<bool>),
    /// A type is congested when its utilization over the last closed time
    /// block reached `threshold`.
    Adaptive { threshold: f64 },
}

impl CongestionMode {
    pub const ONLY_PROCESSING: CongestionMode = CongestionMode::Forced(PerResource::new(true, false));
    pub const ONLY_BANDWIDTH: CongestionMode = CongestionMode::Forced(PerResource::new(false, true));
    pub const BOTH: CongestionMode = CongestionMode::Forced(PerResource::new(true, true));
    pub const NONE: CongestionMode = CongestionMode::Forced(PerResource::new(false, false));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CongestionState {
    pub mode: CongestionMode,
    pub congested: PerResource<bool>,
}

impl CongestionState {
    pub fn new(mode: CongestionMode) -> Self {
        let congested = match mode {
            CongestionMode::Forced(flags) => flags,
            CongestionMode::Adaptive { .. } => PerResource::splat(false),
        };
        CongestionState { mode, congested }
    }

    pub fn any(&self) -> bool {
        self.congested.processing || self.congested.bandwidth
    }

    pub fn is_congested(&self, rt: ResourceType) -> bool {
        self.congested[rt]
    }
}

/// Recomputes congestion flags at a time-block boundary. Forced flags never
/// change; adaptive flags are `utilization >= threshold`.
pub fn update_congestion(state: CongestionState, utilization: PerResource<f64>) -> CongestionState {
    match state.mode {
        CongestionMode::Forced(_) => state,
        CongestionMode::Adaptive { threshold } => CongestionState {
            mode: state.mode,
            congested: utilization.map(|u| u >= threshold),
        },
    }
}

/// Finalized sizes for one request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionOutcome {
    pub c_r0: f64,
    pub n_r0: f64,
    pub h_1: f64,
    pub reduced: bool,
    /// Proportional scaling would have crossed a `q` floor, so both sizes
    /// were pinned to their floors.
    pub clamped_by_minimum: bool,
    /// Resource type whose threshold drove the reduction.
    pub driver: Option<ResourceType>,
}

impl ReductionOutcome {
    fn unchanged(request: &Request) -> Self {
        ReductionOutcome {
            c_r0: request.c_r,
            n_r0: request.n_r,
            h_1: request.h,
            reduced: false,
            clamped_by_minimum: false,
            driver: None,
        }
    }
}

/// Picks the resource type whose threshold drives the reduction, if any.
///
/// When both types are congested and both sizes exceed their thresholds,
/// processing drives if `C_v / C_0 >= N_v / N_0`, bandwidth otherwise.
pub fn reduction_driver(
    request: &Request,
    q: f64,
    thresholds: &Thresholds,
    congested: PerResource<bool>,
) -> Option<ResourceType> {
    let over_c = congested.processing && request.c_r > thresholds.c_v;
    let over_n = congested.bandwidth && request.n_r > thresholds.n_v;
    match (over_c, over_n) {
        (false, false) => None,
        (true, false) => Some(ResourceType::ProcessingAbility),
        (false, true) => Some(ResourceType::Bandwidth),
        (true, true) => {
            let (c_0, n_0) = request.minimums(q);
            if thresholds.c_v / c_0 >= thresholds.n_v / n_0 {
                Some(ResourceType::ProcessingAbility)
            } else {
                Some(ResourceType::Bandwidth)
            }
        }
    }
}

/// Decides `(C_r0, N_r0, H_1)` for a request.
///
/// `coin` is a uniform draw in `[0, 1)` supplied by the caller; the request is
/// reduced only when `coin < p`. The function is pure in its arguments.
pub fn decide_sizes(
    request: &Request,
    profile: &UserProfile,
    thresholds: &Thresholds,
    congestion: &CongestionState,
    coin: f64,
) -> Result<ReductionOutcome> {
    thresholds.check()?;
    request.validate()?;

    let Some(driver) = reduction_driver(request, profile.q, thresholds, congestion.congested) else {
        return Ok(ReductionOutcome::unchanged(request));
    };
    if coin >= profile.p {
        return Ok(ReductionOutcome::unchanged(request));
    }

    let q = profile.q;
    let m = profile.m;
    let h = request.h;
    let requested = PerResource::new(request.c_r, request.n_r);
    let target = thresholds.get(driver);
    let driving = requested[driver];
    let follower = requested[driver.other()];
    let follower_floor = q * follower;

    let mut sizes = requested;
    let scaled_follower = (target / driving) * follower;
    let (h_1, clamped) = if scaled_follower < follower_floor {
        // (F_0 / F_r) * D_r and (F_r / F_0) * H reduce to q * D_r and H / q.
        sizes[driver] = q * driving;
        sizes[driver.other()] = follower_floor;
        ((h / q) * m, true)
    } else {
        sizes[driver] = target;
        sizes[driver.other()] = scaled_follower;
        ((driving / target) * h * m, false)
    };

    Ok(ReductionOutcome {
        c_r0: sizes.processing,
        n_r0: sizes.bandwidth,
        h_1,
        reduced: true,
        clamped_by_minimum: clamped,
        driver: Some(driver),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn req(c_r: f64, n_r: f64, h: f64) -> Request {
        Request {
            id: 1,
            user_id: 1,
            arrival_time: 0.0,
            c_r,
            n_r,
            h,
        }
    }

    fn profile(q: f64, m: f64, p: f64) -> UserProfile {
        UserProfile {
            user_id: 1,
            q,
            m,
            p,
            expected_demand: PerResource::new(1.0, 1.0),
        }
    }

    fn state(mode: CongestionMode) -> CongestionState {
        CongestionState::new(mode)
    }

    #[test]
    fn processing_reduction_without_fallback() {
        let out = decide_sizes(
            &req(4.0, 2.0, 6.0),
            &profile(0.25, 1.0, 1.0),
            &Thresholds::new(2.0, 100.0).unwrap(),
            &state(CongestionMode::ONLY_PROCESSING),
            0.3,
        )
        .unwrap();
        assert_eq!((out.c_r0, out.n_r0, out.h_1), (2.0, 1.0, 12.0));
        assert!(out.reduced && !out.clamped_by_minimum);
    }

    #[test]
    fn processing_reduction_falls_back_to_bandwidth_floor() {
        let out = decide_sizes(
            &req(10.0, 4.0, 6.0),
            &profile(0.5, 1.0, 1.0),
            &Thresholds::new(2.0, 100.0).unwrap(),
            &state(CongestionMode::ONLY_PROCESSING),
            0.0,
        )
        .unwrap();
        assert_eq!((out.c_r0, out.n_r0, out.h_1), (5.0, 2.0, 12.0));
        assert!(out.clamped_by_minimum);
    }

    #[test]
    fn below_threshold_is_untouched() {
        for mode in [CongestionMode::ONLY_PROCESSING, CongestionMode::BOTH, CongestionMode::NONE] {
            for coin in [0.0, 0.5, 0.99] {
                let out = decide_sizes(
                    &req(1.0, 1.0, 6.0),
                    &profile(0.25, 1.0, 1.0),
                    &Thresholds::new(3.0, 3.0).unwrap(),
                    &state(mode),
                    coin,
                )
                .unwrap();
                assert_eq!((out.c_r0, out.n_r0, out.h_1, out.reduced), (1.0, 1.0, 6.0, false));
            }
        }
    }

    #[test]
    fn coin_at_or_above_p_is_untouched() {
        let out = decide_sizes(
            &req(4.0, 2.0, 6.0),
            &profile(0.25, 1.0, 0.5),
            &Thresholds::new(2.0, 2.0).unwrap(),
            &state(CongestionMode::ONLY_PROCESSING),
            0.5,
        )
        .unwrap();
        assert!(!out.reduced);
        assert_eq!((out.c_r0, out.n_r0, out.h_1), (4.0, 2.0, 6.0));
    }

    #[test]
    fn non_positive_thresholds_are_config_errors() {
        assert!(Thresholds::new(0.0, 1.0).is_err());
        let bad = Thresholds { c_v: -1.0, n_v: 1.0 };
        let err = decide_sizes(
            &req(4.0, 2.0, 6.0),
            &profile(0.25, 1.0, 1.0),
            &bad,
            &state(CongestionMode::ONLY_PROCESSING),
            0.0,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn forced_flags_ignore_utilization() {
        let s = state(CongestionMode::ONLY_PROCESSING);
        let next = update_congestion(s, PerResource::new(0.0, 1.0));
        assert_eq!(next.congested, PerResource::new(true, false));
    }

    #[test]
    fn adaptive_flags_follow_threshold() {
        let s = state(CongestionMode::Adaptive { threshold: 0.9 });
        assert_eq!(s.congested, PerResource::new(false, false));
        let next = update_congestion(s, PerResource::new(0.95, 0.4));
        assert_eq!(next.congested, PerResource::new(true, false));
        let next = update_congestion(s, PerResource::new(0.9, 0.9));
        assert_eq!(next.congested, PerResource::new(true, true));
    }

    fn arb_case() -> impl Strategy<Value = (Request, UserProfile, Thresholds, PerResource<bool>, f64)> {
        (
            0.05f64..20.0,
            0.05f64..20.0,
            0.1f64..50.0,
            0.01f64..=1.0,
            0.0f64..3.0,
            0.01f64..=1.0,
            0.05f64..20.0,
            0.05f64..20.0,
            any::<(bool, bool)>(),
            0.0f64..1.0,
        )
            .prop_map(|(c, n, h, q, extra_m, p, c_v, n_v, (fc, fn_), coin)| {
                (
                    req(c, n, h),
                    profile(q, q + extra_m, p),
                    Thresholds { c_v, n_v },
                    PerResource::new(fc, fn_),
                    coin,
                )
            })
    }

    proptest! {
        #[test]
        fn outputs_respect_floors_and_time_bounds((r, prof, t, flags, coin) in arb_case()) {
            let s = CongestionState::new(CongestionMode::Forced(flags));
            let out = decide_sizes(&r, &prof, &t, &s, coin).unwrap();
            let (c_0, n_0) = r.minimums(prof.q);
            let eps = 1e-12;
            prop_assert!(out.c_r0 >= c_0 * (1.0 - eps) && out.c_r0 <= r.c_r * (1.0 + eps));
            prop_assert!(out.n_r0 >= n_0 * (1.0 - eps) && out.n_r0 <= r.n_r * (1.0 + eps));
            if out.reduced {
                prop_assert!(out.h_1 >= r.h * prof.m * (1.0 - eps));
                prop_assert!(out.h_1 <= r.h / prof.q * prof.m * (1.0 + eps));
                if out.clamped_by_minimum {
                    prop_assert_eq!(out.h_1, (r.h / prof.q) * prof.m);
                }
            } else {
                prop_assert_eq!((out.c_r0, out.n_r0, out.h_1), (r.c_r, r.n_r, r.h));
            }
        }

        #[test]
        fn no_congestion_is_identity((r, prof, t, _flags, coin) in arb_case()) {
            let s = CongestionState::new(CongestionMode::NONE);
            let out = decide_sizes(&r, &prof, &t, &s, coin).unwrap();
            prop_assert_eq!((out.c_r0, out.n_r0, out.h_1, out.reduced), (r.c_r, r.n_r, r.h, false));
        }

        #[test]
        fn driving_axis_conserves_work_at_m_one((r, mut prof, t, flags, coin) in arb_case()) {
            prof.m = 1.0;
            let s = CongestionState::new(CongestionMode::Forced(flags));
            let out = decide_sizes(&r, &prof, &t, &s, coin).unwrap();
            if out.reduced {
                let d = out.driver.unwrap();
                let (before, after) = match d {
                    ResourceType::ProcessingAbility => (r.c_r * r.h, out.c_r0 * out.h_1),
                    ResourceType::Bandwidth => (r.n_r * r.h, out.n_r0 * out.h_1),
                };
                prop_assert!((before - after).abs() <= 1e-12 * before);
            }
        }

        #[test]
        fn pure_in_its_arguments((r, prof, t, flags, coin) in arb_case()) {
            let s = CongestionState::new(CongestionMode::Forced(flags));
            let a = decide_sizes(&r, &prof, &t, &s, coin).unwrap();
            let b = decide_sizes(&r, &prof, &t, &s, coin).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
