//! Runs the checked-in fuzz seeds through the same entry points and checks
//! as the fuzz targets.

use std::fs;
use std::path::{Path, PathBuf};

use ccsim::report::{read_rows, DecisionGraphRow, FairnessComparisonRow, FairnessRow, MetricsRow, SweepRow};
use ccsim::scenario::scenario_to_string;
use ccsim::{parse_experiment, parse_scenario};

fn seeds(target: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds for {target}");
    files
}

#[test]
fn scenario_seeds() {
    let mut valid = 0;
    for path in seeds("parse_scenario") {
        let text = fs::read_to_string(&path).unwrap();
        if let Ok(config) = parse_scenario(&text, "seed") {
            let again = parse_scenario(&scenario_to_string(&config).unwrap(), "seed").unwrap();
            assert_eq!(config, again, "{}", path.display());
            valid += 1;
        }
    }
    assert!(valid > 0);
}

#[test]
fn experiment_seeds() {
    for path in seeds("parse_experiment") {
        let text = fs::read_to_string(&path).unwrap();
        if let Ok(spec) = parse_experiment(&text, "seed") {
            spec.check().unwrap();
        }
    }
}

#[test]
fn csv_seeds() {
    let mut decoded = 0;
    for path in seeds("csv_rows") {
        let data = fs::read(&path).unwrap();
        let results = [
            read_rows::<MetricsRow, _>(&data[..]).is_ok(),
            read_rows::<FairnessRow, _>(&data[..]).is_ok(),
            read_rows::<DecisionGraphRow, _>(&data[..]).is_ok(),
            read_rows::<SweepRow, _>(&data[..]).is_ok(),
            read_rows::<FairnessComparisonRow, _>(&data[..]).is_ok(),
        ];
        decoded += results.iter().filter(|ok| **ok).count();
    }
    assert!(decoded >= 5);
}

#[test]
fn shipped_scenarios_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        ccsim::load_experiment(&path).unwrap_or_else(|e| panic!("{e}"));
    }
}
