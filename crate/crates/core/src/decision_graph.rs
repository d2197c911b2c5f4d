//! Optimal reduction threshold per offered load.
//!
//! For each load level every candidate threshold is simulated alongside a
//! no-reduction run. Lowering the threshold is only worth it while it raises
//! the number of processed requests; among candidates whose processed count
//! is within a relative tolerance of the best, the highest threshold wins so
//! completion times stay short. Loads where no candidate beats no-reduction
//! are labelled X; loads where even the chosen candidate loses more than a
//! ceiling fraction of requests are labelled Y and need some other control.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ControlMethod, ResourceType, ScenarioConfig};
use crate::rng::derive_seed;
use crate::sim::run;

/// Relative tolerance for "the same processed count".
pub const DEFAULT_COUNT_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Area {
    /// Reduction does not help.
    X,
    Interior,
    /// Reduction alone cannot keep losses under the ceiling.
    Y,
}

impl Area {
    pub fn label(self) -> &'static str {
        match self {
            Area::X => "X",
            Area::Interior => "interior",
            Area::Y => "Y",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionGraphOptions {
    /// Which threshold is swept; the other one keeps its scenario value.
    pub resource: ResourceType,
    pub replications: usize,
    pub count_tolerance: f64,
    pub loss_ceiling: f64,
}

impl Default for DecisionGraphOptions {
    fn default() -> Self {
        DecisionGraphOptions {
            resource: ResourceType::ProcessingAbility,
            replications: 10,
            count_tolerance: DEFAULT_COUNT_TOLERANCE,
            loss_ceiling: crate::experiments::DEFAULT_LOSS_CEILING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPoint {
    /// Total request generation rate, requests per second.
    pub load_level: f64,
    /// Chosen threshold; `None` in area X.
    pub optimal: Option<f64>,
    pub area: Area,
    /// Mean accepted count of the chosen option.
    pub processed_count: f64,
    /// Mean loss probability of the chosen option.
    pub loss_probability: f64,
    pub baseline_count: f64,
    /// Mean accepted count per candidate, in candidate order.
    pub candidate_counts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionGraph {
    pub resource: ResourceType,
    pub points: Vec<DecisionPoint>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Outcome {
    accepted: f64,
    loss: f64,
}

/// Picks the largest candidate whose count is within `tolerance` of the best,
/// or `None` when the baseline already is. `candidates` and `counts`
/// are parallel; `None` means no reduction.
pub fn select_threshold(
    candidates: &[f64],
    counts: &[f64],
    baseline_count: f64,
    tolerance: f64,
) -> Option<usize> {
    let best = counts.iter().copied().fold(baseline_count, f64::max);
    let floor = best * (1.0 - tolerance);
    if baseline_count >= floor {
        return None;
    }
    candidates
        .iter()
        .zip(counts)
        .enumerate()
        .filter(|(_, (_, &count))| count >= floor)
        .max_by(|a, b| a.1 .0.total_cmp(b.1 .0))
        .map(|(i, _)| i)
}

/// Scales `base` to each total request rate in `load_levels` and picks the
/// optimal threshold among `candidates` for it.
pub fn build_decision_graph(
    base: &ScenarioConfig,
    candidates: &[f64],
    load_levels: &[f64],
    options: &DecisionGraphOptions,
) -> Result<DecisionGraph> {
    if candidates.is_empty() || load_levels.is_empty() {
        return Err(Error::InvalidInput(
            "decision graph needs candidates and load levels".into(),
        ));
    }
    if options.replications == 0 {
        return Err(Error::InvalidInput("replications must be at least 1".into()));
    }
    if candidates.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(Error::InvalidInput("candidate thresholds must be positive".into()));
    }
    let base_rate = base.total_arrival_rate();
    if base_rate <= 0.0 {
        return Err(Error::InvalidInput("base scenario generates no requests".into()));
    }

    let mut points = Vec::with_capacity(load_levels.len());
    for &load in load_levels {
        let mut scaled = base.clone();
        scaled.scale_arrival_rates(load / base_rate);

        // Slot 0 is the no-reduction baseline, slot k + 1 is candidate k.
        let grid: Vec<(usize, usize)> = (0..=candidates.len())
            .flat_map(|slot| (0..options.replications).map(move |rep| (slot, rep)))
            .collect();
        let results: Vec<Result<(usize, Outcome)>> = grid
            .par_iter()
            .map(|&(slot, rep)| {
                let mut cfg = scaled.clone();
                cfg.seed = derive_seed(base.seed, rep as u64);
                if slot == 0 {
                    cfg.control = ControlMethod::None;
                } else {
                    cfg.control = ControlMethod::MethodA;
                    let value = candidates[slot - 1];
                    match options.resource {
                        ResourceType::ProcessingAbility => cfg.thresholds.c_v = value,
                        ResourceType::Bandwidth => cfg.thresholds.n_v = value,
                    }
                }
                let m = run(&cfg)?;
                Ok((
                    slot,
                    Outcome {
                        accepted: m.total.accepted as f64,
                        loss: m.loss_probability(),
                    },
                ))
            })
            .collect();

        let reps = options.replications as f64;
        let mut mean = vec![Outcome::default(); candidates.len() + 1];
        for r in results {
            let (slot, o) = r?;
            mean[slot].accepted += o.accepted / reps;
            mean[slot].loss += o.loss / reps;
        }

        let counts: Vec<f64> = mean[1..].iter().map(|o| o.accepted).collect();
        let chosen = select_threshold(candidates, &counts, mean[0].accepted, options.count_tolerance);
        let picked = chosen.map_or(mean[0], |i| mean[i + 1]);
        let area = if picked.loss > options.loss_ceiling {
            Area::Y
        } else if chosen.is_none() {
            Area::X
        } else {
            Area::Interior
        };
        points.push(DecisionPoint {
            load_level: load,
            optimal: chosen.map(|i| candidates[i]),
            area,
            processed_count: picked.accepted,
            loss_probability: picked.loss,
            baseline_count: mean[0].accepted,
            candidate_counts: counts,
        });
    }

    Ok(DecisionGraph {
        resource: options.resource,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::processing_congested_scenario;

    #[test]
    fn ties_go_to_the_larger_threshold() {
        let cands = [1.0, 2.0, 3.0, 4.0];
        // 2.0 and 3.0 are within 0.5% of the best; 3.0 is larger.
        let counts = [1000.0, 1004.0, 1001.0, 950.0];
        assert_eq!(select_threshold(&cands, &counts, 900.0, 0.005), Some(2));
    }

    #[test]
    fn baseline_within_tolerance_means_no_reduction() {
        let cands = [1.0, 2.0];
        assert_eq!(select_threshold(&cands, &[1002.0, 1001.0], 1000.0, 0.005), None);
        assert_eq!(select_threshold(&cands, &[1100.0, 1001.0], 1000.0, 0.005), Some(0));
    }

    #[test]
    fn light_load_is_area_x() {
        let base = processing_congested_scenario();
        let opts = DecisionGraphOptions {
            replications: 2,
            ..Default::default()
        };
        let g = build_decision_graph(&base, &[2.0, 4.0], &[0.05], &opts).unwrap();
        assert_eq!(g.points[0].area, Area::X);
        assert_eq!(g.points[0].optimal, None);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let base = processing_congested_scenario();
        let opts = DecisionGraphOptions::default();
        assert!(build_decision_graph(&base, &[], &[1.0], &opts).is_err());
        assert!(build_decision_graph(&base, &[1.0], &[], &opts).is_err());
    }
}
