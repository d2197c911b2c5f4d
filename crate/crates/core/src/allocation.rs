//! Center selection, commitment and release of joint allocations.
//!
//! Both resource types of a request always come from one center. Which center
//! is decided by a [`SelectionRule`]; [`MinBottleneck`] is the default.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{
    AllocationDecision, AllocationOutcome, CenterId, CenterSpec, PerResource, RequestId,
};

/// Relative slack on capacity comparisons so exact fits survive float noise.
pub const CAPACITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    pub request_id: RequestId,
    pub c_r0: f64,
    pub n_r0: f64,
    pub release_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Center {
    id: CenterId,
    spec: CenterSpec,
    used: PerResource<f64>,
    in_service: BTreeMap<RequestId, Allocation>,
}

impl Center {
    pub fn new(id: CenterId, spec: CenterSpec) -> Self {
        Center {
            id,
            spec,
            used: PerResource::splat(0.0),
            in_service: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> CenterId {
        self.id
    }

    pub fn capacity(&self) -> PerResource<f64> {
        self.spec.capacity()
    }

    pub fn used(&self) -> PerResource<f64> {
        self.used
    }

    pub fn free(&self) -> PerResource<f64> {
        PerResource::new(
            self.spec.c_max - self.used.processing,
            self.spec.n_max - self.used.bandwidth,
        )
    }

    pub fn in_service(&self) -> impl Iterator<Item = &Allocation> {
        self.in_service.values()
    }

    pub fn in_service_count(&self) -> usize {
        self.in_service.len()
    }

    /// True if both sizes fit in the remaining capacity.
    pub fn fits(&self, c: f64, n: f64) -> bool {
        within(self.used.processing + c, self.spec.c_max)
            && within(self.used.bandwidth + n, self.spec.n_max)
    }

    fn commit(&mut self, alloc: Allocation) {
        self.used.processing += alloc.c_r0;
        self.used.bandwidth += alloc.n_r0;
        self.in_service.insert(alloc.request_id, alloc);
    }

    fn release(&mut self, request_id: RequestId) -> Option<Allocation> {
        let alloc = self.in_service.remove(&request_id)?;
        if self.in_service.is_empty() {
            // Cancel accumulated rounding so a drained center is exactly empty.
            self.used = PerResource::splat(0.0);
        } else {
            self.used.processing = (self.used.processing - alloc.c_r0).max(0.0);
            self.used.bandwidth = (self.used.bandwidth - alloc.n_r0).max(0.0);
        }
        Some(alloc)
    }
}

fn within(total: f64, capacity: f64) -> bool {
    total <= capacity * (1.0 + CAPACITY_TOLERANCE)
}

/// Picks the center a request is committed to.
pub trait SelectionRule: Send + Sync + fmt::Debug {
    /// Returns a center with room for `(c, n)`, or `None` if no center has.
    fn select(&self, centers: &[Center], c: f64, n: f64) -> Option<CenterId>;
}

/// Best fit by post-allocation bottleneck: the center minimizing
/// `max(used_C'/C_max, used_N'/N_max)` after placing the request, lowest id
/// on ties.
#[derive(Debug, Clone, Copy, Default)]
pub struct MinBottleneck;

impl MinBottleneck {
    pub fn score(center: &Center, c: f64, n: f64) -> f64 {
        let used = center.used();
        let cap = center.capacity();
        ((used.processing + c) / cap.processing).max((used.bandwidth + n) / cap.bandwidth)
    }
}

impl SelectionRule for MinBottleneck {
    fn select(&self, centers: &[Center], c: f64, n: f64) -> Option<CenterId> {
        let mut best: Option<(f64, CenterId)> = None;
        for center in centers.iter().filter(|ct| ct.fits(c, n)) {
            let score = Self::score(center, c, n);
            if best.is_none_or(|(s, _)| score < s) {
                best = Some((score, center.id()));
            }
        }
        best.map(|(_, id)| id)
    }
}

/// First center with room, in id order.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstFit;

impl SelectionRule for FirstFit {
    fn select(&self, centers: &[Center], c: f64, n: f64) -> Option<CenterId> {
        centers.iter().find(|ct| ct.fits(c, n)).map(Center::id)
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingRelease {
    time: f64,
    request_id: RequestId,
    center: CenterId,
}

impl PartialEq for PendingRelease {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for PendingRelease {}

impl PartialOrd for PendingRelease {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PendingRelease {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.request_id.cmp(&other.request_id))
    }
}

/// All centers plus the schedule of pending releases.
#[derive(Debug, Clone)]
pub struct ClusterState {
    centers: Vec<Center>,
    now: f64,
    releases: BinaryHeap<Reverse<PendingRelease>>,
    rule: Arc<dyn SelectionRule>,
}

impl ClusterState {
    pub fn new(specs: &[CenterSpec]) -> Self {
        Self::with_rule(specs, Arc::new(MinBottleneck))
    }

    pub fn with_rule(specs: &[CenterSpec], rule: Arc<dyn SelectionRule>) -> Self {
        ClusterState {
            centers: specs
                .iter()
                .enumerate()
                .map(|(id, s)| Center::new(id, *s))
                .collect(),
            now: 0.0,
            releases: BinaryHeap::new(),
            rule,
        }
    }

    pub fn centers(&self) -> &[Center] {
        &self.centers
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn in_service_count(&self) -> usize {
        self.releases.len()
    }

    pub fn next_release_time(&self) -> Option<f64> {
        self.releases.peek().map(|Reverse(r)| r.time)
    }

    /// Commits `(c_r0, n_r0)` for `h_1` seconds to one center chosen by the
    /// selection rule, or rejects without touching any state.
    pub fn try_allocate(
        &mut self,
        request_id: RequestId,
        c_r0: f64,
        n_r0: f64,
        h_1: f64,
        now: f64,
    ) -> Result<AllocationDecision> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(c_r0) && ok(n_r0) && ok(h_1)) {
            return Err(Error::InvalidInput(format!(
                "allocation sizes must be positive, got ({c_r0}, {n_r0}, {h_1})"
            )));
        }
        self.now = self.now.max(now);
        let Some(center) = self.rule.select(&self.centers, c_r0, n_r0) else {
            return Ok(AllocationDecision::lost(
                AllocationOutcome::RejectedNoCapacity,
                c_r0,
                n_r0,
                h_1,
                false,
            ));
        };
        debug_assert!(self.centers[center].fits(c_r0, n_r0));
        let release_time = now + h_1;
        self.centers[center].commit(Allocation {
            request_id,
            c_r0,
            n_r0,
            release_time,
        });
        self.releases.push(Reverse(PendingRelease {
            time: release_time,
            request_id,
            center,
        }));
        Ok(AllocationDecision {
            outcome: AllocationOutcome::Accepted,
            center: Some(center),
            c_r0,
            n_r0,
            h_1,
            reduced: false,
        })
    }

    /// Removes every allocation with `release_time <= now`, returning their
    /// request ids in release order.
    pub fn release_expired(&mut self, now: f64) -> Vec<RequestId> {
        self.now = self.now.max(now);
        let mut released = Vec::new();
        while let Some(Reverse(next)) = self.releases.peek().copied() {
            if next.time > now {
                break;
            }
            self.releases.pop();
            if self.centers[next.center].release(next.request_id).is_some() {
                released.push(next.request_id);
            }
        }
        released
    }

    pub fn used(&self) -> PerResource<f64> {
        self.centers.iter().fold(PerResource::splat(0.0), |acc, c| {
            let u = c.used();
            PerResource::new(acc.processing + u.processing, acc.bandwidth + u.bandwidth)
        })
    }

    pub fn capacity(&self) -> PerResource<f64> {
        self.centers.iter().fold(PerResource::splat(0.0), |acc, c| {
            let u = c.capacity();
            PerResource::new(acc.processing + u.processing, acc.bandwidth + u.bandwidth)
        })
    }

    /// Allocated over capacity, summed across centers, per resource type.
    pub fn utilization(&self) -> PerResource<f64> {
        let used = self.used();
        let cap = self.capacity();
        PerResource::new(
            (used.processing / cap.processing).clamp(0.0, 1.0),
            (used.bandwidth / cap.bandwidth).clamp(0.0, 1.0),
        )
    }

    /// True if every center respects its capacity (within tolerance).
    pub fn within_capacity(&self) -> bool {
        self.centers.iter().all(|c| {
            let u = c.used();
            within(u.processing, c.spec.c_max) && within(u.bandwidth, c.spec.n_max)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(c: f64, n: f64) -> CenterSpec {
        CenterSpec { c_max: c, n_max: n }
    }

    fn preload(state: &mut ClusterState, center_used: &[(f64, f64)]) {
        // Occupy centers directly so free capacity matches the scenario.
        for (i, &(c, n)) in center_used.iter().enumerate() {
            if c > 0.0 || n > 0.0 {
                state.centers[i].commit(Allocation {
                    request_id: 1_000_000 + i as u64,
                    c_r0: c,
                    n_r0: n,
                    release_time: f64::INFINITY,
                });
            }
        }
    }

    #[test]
    fn any_fit_accepts_at_one_center() {
        let mut s = ClusterState::new(&[spec(5.0, 5.0), spec(5.0, 5.0)]);
        let d = s.try_allocate(1, 2.0, 1.0, 3.0, 0.0).unwrap();
        assert!(d.is_accepted());
        let c = d.center.unwrap();
        assert_eq!(s.centers()[c].free(), PerResource::new(3.0, 4.0));
        assert_eq!(s.centers()[1 - c].free(), PerResource::new(5.0, 5.0));
    }

    #[test]
    fn no_single_center_has_both() {
        // free (1, 5) and (5, 0.5)
        let mut s = ClusterState::new(&[spec(5.0, 5.0), spec(5.0, 5.0)]);
        preload(&mut s, &[(4.0, 0.0), (0.0, 4.5)]);
        let d = s.try_allocate(1, 2.0, 1.0, 3.0, 0.0).unwrap();
        assert_eq!(d.outcome, AllocationOutcome::RejectedNoCapacity);
        assert_eq!(s.in_service_count(), 0);
        assert_eq!(s.centers()[0].free(), PerResource::new(1.0, 5.0));
    }

    #[test]
    fn exact_fit_is_accepted() {
        let mut s = ClusterState::new(&[spec(2.0, 1.0)]);
        assert!(s.try_allocate(1, 2.0, 1.0, 1.0, 0.0).unwrap().is_accepted());
        assert_eq!(s.utilization(), PerResource::new(1.0, 1.0));
    }

    #[test]
    fn malformed_sizes_are_input_errors() {
        let mut s = ClusterState::new(&[spec(2.0, 1.0)]);
        assert!(s.try_allocate(1, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(s.try_allocate(1, 1.0, -1.0, 1.0, 0.0).is_err());
        assert!(s.try_allocate(1, 1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn release_is_inclusive_at_boundary() {
        let mut s = ClusterState::new(&[spec(20.0, 20.0)]);
        s.try_allocate(1, 2.0, 1.0, 10.0, 0.0).unwrap();
        assert_eq!(s.release_expired(10.0), vec![1]);
        assert_eq!(s.used(), PerResource::new(0.0, 0.0));
    }

    #[test]
    fn release_on_empty_cluster() {
        let mut s = ClusterState::new(&[spec(20.0, 20.0)]);
        assert!(s.release_expired(100.0).is_empty());
    }

    #[test]
    fn release_picks_only_expired() {
        let mut s = ClusterState::new(&[spec(20.0, 20.0)]);
        for (id, h) in [(1, 5.0), (2, 10.0), (3, 15.0)] {
            s.try_allocate(id, 1.0, 1.0, h, 0.0).unwrap();
        }
        assert_eq!(s.release_expired(10.0), vec![1, 2]);
        assert_eq!(s.in_service_count(), 1);
    }

    #[test]
    fn utilization_sums_over_centers() {
        let mut s = ClusterState::new(&[spec(20.0, 20.0), spec(20.0, 20.0)]);
        assert_eq!(s.utilization(), PerResource::new(0.0, 0.0));
        preload(&mut s, &[(6.0, 3.0), (4.0, 1.0)]);
        let u = s.utilization();
        assert!((u.processing - 0.25).abs() < 1e-15);
        assert!((u.bandwidth - 0.10).abs() < 1e-15);
    }

    #[test]
    fn min_bottleneck_balances_the_scarcer_type() {
        let mut s = ClusterState::new(&[spec(10.0, 10.0), spec(10.0, 10.0)]);
        preload(&mut s, &[(1.0, 6.0), (5.0, 1.0)]);
        // center 0 -> max(0.3, 0.7) = 0.7; center 1 -> max(0.7, 0.2) = 0.7; tie -> 0
        let d = s.try_allocate(1, 2.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(d.center, Some(0));
        // center 0 -> max(0.4, 0.9) = 0.9; center 1 -> max(0.6, 0.2) = 0.6
        let d = s.try_allocate(2, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(d.center, Some(1));
    }

    proptest! {
        #[test]
        fn never_overcommits_and_drains_to_zero(
            caps in prop::collection::vec((1.0f64..20.0, 1.0f64..20.0), 1..4),
            reqs in prop::collection::vec((0.1f64..8.0, 0.1f64..8.0, 0.5f64..5.0, 0.0f64..2.0), 1..60),
        ) {
            let specs: Vec<_> = caps.iter().map(|&(c, n)| spec(c, n)).collect();
            let mut s = ClusterState::new(&specs);
            let mut now = 0.0;
            for (id, (c, n, h, gap)) in reqs.into_iter().enumerate() {
                now += gap;
                s.release_expired(now);
                let free_before: Vec<_> = s.centers().iter().map(Center::free).collect();
                let d = s.try_allocate(id as u64, c, n, h, now).unwrap();
                if let Some(k) = d.center {
                    let f = free_before[k];
                    prop_assert!(c <= f.processing * (1.0 + 1e-9) + 1e-9 && n <= f.bandwidth * (1.0 + 1e-9) + 1e-9);
                } else {
                    prop_assert!(free_before.iter().all(|f| !(c <= f.processing && n <= f.bandwidth)));
                }
                prop_assert!(s.within_capacity());
            }
            s.release_expired(f64::INFINITY);
            prop_assert_eq!(s.used(), PerResource::new(0.0, 0.0));
            for c in s.centers() {
                prop_assert_eq!(c.free(), c.capacity());
            }
        }
    }
}
