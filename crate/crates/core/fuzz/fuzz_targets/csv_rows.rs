#![no_main]

use ccsim::report::{
    read_rows, DecisionGraphRow, FairnessComparisonRow, FairnessRow, MetricsRow, SweepRow,
};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_rows::<MetricsRow, _>(data);
    let _ = read_rows::<FairnessRow, _>(data);
    let _ = read_rows::<DecisionGraphRow, _>(data);
    let _ = read_rows::<SweepRow, _>(data);
    let _ = read_rows::<FairnessComparisonRow, _>(data);
});
