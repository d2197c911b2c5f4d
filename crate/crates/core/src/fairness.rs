//! Per-block fairness accounting and the probabilistic discard gate.
//!
//! Each user is compared on its key resource type, the type it holds the
//! largest normalized share of. Shares are weighted by `r_g` so users with
//! smaller expected demand are not penalized for receiving less. The
//! best-served user of a block sets the reference; everyone else's gap to it
//! is that user's imbalance. `F` averages the summed imbalance per block and
//! `F1` measures how much each user's imbalance moves around over time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PerResource, Request, ResourceType, TimeBlockLedger, UserId};

/// Per-user demand weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessBasis {
    relative_demand: BTreeMap<UserId, f64>,
    weight: BTreeMap<UserId, f64>,
}

impl FairnessBasis {
    /// Builds the basis from each user's expected requested amount per type.
    /// `R_g` is the largest `expected / max_size` over the two types.
    pub fn from_expected_demand(
        demands: impl IntoIterator<Item = (UserId, PerResource<f64>)>,
        max_sizes: PerResource<f64>,
    ) -> Result<Self> {
        let relative = demands.into_iter().map(|(user, demand)| {
            let r = (demand.processing / max_sizes.processing)
                .max(demand.bandwidth / max_sizes.bandwidth);
            (user, r)
        });
        Self::from_relative_demand(relative)
    }

    /// Builds the basis from precomputed `R_g` values;
    /// `r_g = min_h R_h / R_g`.
    pub fn from_relative_demand(
        relative: impl IntoIterator<Item = (UserId, f64)>,
    ) -> Result<Self> {
        let relative_demand: BTreeMap<_, _> = relative.into_iter().collect();
        if relative_demand.is_empty() {
            return Err(Error::InvalidInput("fairness basis needs at least one user".into()));
        }
        if let Some((u, r)) = relative_demand
            .iter()
            .find(|(_, r)| !(r.is_finite() && **r > 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "relative demand of user {u} must be positive, got {r}"
            )));
        }
        let min = relative_demand.values().copied().fold(f64::INFINITY, f64::min);
        let weight = relative_demand.iter().map(|(u, r)| (*u, min / r)).collect();
        Ok(FairnessBasis {
            relative_demand,
            weight,
        })
    }

    /// `r_g`, in `(0, 1]`.
    pub fn weight(&self, user: UserId) -> Option<f64> {
        self.weight.get(&user).copied()
    }

    pub fn relative_demand(&self, user: UserId) -> Option<f64> {
        self.relative_demand.get(&user).copied()
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.weight.keys().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserFairness {
    pub user_id: UserId,
    pub key_type: ResourceType,
    /// Weighted, normalized allocated amount of the key type (`V_i(g)`).
    pub v: f64,
    /// Gap to the best-served user (`N_i(g)`).
    pub imbalance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFairnessRecord {
    pub block: u64,
    /// Sorted by user id.
    pub users: Vec<UserFairness>,
    /// Best-served user (`g_i`).
    pub top_user: UserId,
    /// Whether any user lost a request in the block. Without a loss every
    /// imbalance is recorded as zero.
    pub had_loss: bool,
}

impl BlockFairnessRecord {
    pub fn imbalance_sum(&self) -> f64 {
        self.users.iter().map(|u| u.imbalance).sum()
    }

    pub fn user(&self, user: UserId) -> Option<&UserFairness> {
        self.users.iter().find(|u| u.user_id == user)
    }
}

/// Type with the largest `W = allocated / max_size`; ties go to processing.
pub fn key_resource_type(
    ledger: &TimeBlockLedger,
    user: UserId,
    max_sizes: PerResource<f64>,
) -> ResourceType {
    let allocated = ledger
        .tally(user)
        .map(|t| t.allocated)
        .unwrap_or_default();
    key_type_of(allocated, max_sizes)
}

fn key_type_of(allocated: PerResource<f64>, max_sizes: PerResource<f64>) -> ResourceType {
    let w_c = allocated.processing / max_sizes.processing;
    let w_n = allocated.bandwidth / max_sizes.bandwidth;
    if w_n > w_c {
        ResourceType::Bandwidth
    } else {
        ResourceType::ProcessingAbility
    }
}

/// Computes `V_i(g)`, `g_i` and `N_i(g)` for a closed block.
pub fn compute_block_record(
    ledger: &TimeBlockLedger,
    basis: &FairnessBasis,
    max_sizes: PerResource<f64>,
) -> Result<BlockFairnessRecord> {
    if !ledger.is_closed() {
        return Err(Error::InvalidInput(format!(
            "time block {} is still open",
            ledger.index()
        )));
    }
    if !(max_sizes.processing > 0.0 && max_sizes.bandwidth > 0.0) {
        return Err(Error::InvalidInput("maximum sizes must be positive".into()));
    }

    let mut users = Vec::new();
    for (user, tally) in ledger.tallies() {
        let weight = basis.weight(user).ok_or_else(|| {
            Error::InvalidInput(format!("user {user} is missing from the fairness basis"))
        })?;
        let key = key_type_of(tally.allocated, max_sizes);
        users.push(UserFairness {
            user_id: user,
            key_type: key,
            v: weight * tally.allocated[key] / max_sizes[key],
            imbalance: 0.0,
        });
    }
    let Some(top) = users
        .iter()
        .fold(None::<&UserFairness>, |best, u| match best {
            Some(b) if b.v >= u.v => Some(b),
            _ => Some(u),
        })
        .map(|u| (u.user_id, u.v))
    else {
        return Err(Error::InvalidInput("time block has no users".into()));
    };

    let had_loss = ledger.any_loss();
    if had_loss {
        for u in &mut users {
            u.imbalance = top.1 - u.v;
        }
    }
    Ok(BlockFairnessRecord {
        block: ledger.index(),
        users,
        top_user: top.0,
        had_loss,
    })
}

/// Mean over blocks of the summed imbalance.
pub fn fairness_f(records: &[BlockFairnessRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidInput("F needs at least one block".into()));
    }
    let total: f64 = records.iter().map(BlockFairnessRecord::imbalance_sum).sum();
    Ok(total / records.len() as f64)
}

/// Mean over blocks of the summed squared deviation of each user's imbalance
/// from that user's average imbalance.
pub fn fairness_f1(records: &[BlockFairnessRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidInput("F1 needs at least one block".into()));
    }
    let s = records.len() as f64;
    let mut mean: BTreeMap<UserId, f64> = BTreeMap::new();
    for rec in records {
        for u in &rec.users {
            *mean.entry(u.user_id).or_default() += u.imbalance / s;
        }
    }
    let total: f64 = records
        .iter()
        .flat_map(|rec| rec.users.iter())
        .map(|u| {
            let d = u.imbalance - mean[&u.user_id];
            d * d
        })
        .sum();
    Ok(total / s)
}

/// `P_i(g) = V_i(g) / sum V_i`. All zero when nothing was allocated.
pub fn discard_probabilities(previous: &BlockFairnessRecord) -> BTreeMap<UserId, f64> {
    let sum: f64 = previous.users.iter().map(|u| u.v).sum();
    previous
        .users
        .iter()
        .map(|u| {
            let p = if sum > 0.0 { u.v / sum } else { 0.0 };
            (u.user_id, p)
        })
        .collect()
}

/// Like [`discard_probabilities`] but only the best-served user keeps a
/// nonzero probability.
pub fn discard_probabilities_top_only(previous: &BlockFairnessRecord) -> BTreeMap<UserId, f64> {
    let mut p = discard_probabilities(previous);
    for (user, prob) in p.iter_mut() {
        if *user != previous.top_user {
            *prob = 0.0;
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateVerdict {
    Pass,
    Discard,
}

/// A request is subject to the gate when `coin_subject < gamma / 100`, and a
/// subject request is discarded when `coin_discard < P(user)`.
pub fn revised_gate(
    request: &Request,
    probabilities: &BTreeMap<UserId, f64>,
    gamma: f64,
    coin_subject: f64,
    coin_discard: f64,
) -> GateVerdict {
    if coin_subject >= gamma / 100.0 {
        return GateVerdict::Pass;
    }
    let p = probabilities.get(&request.user_id).copied().unwrap_or(0.0);
    if coin_discard < p {
        GateVerdict::Discard
    } else {
        GateVerdict::Pass
    }
}
