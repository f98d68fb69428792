//! Shared inputs for the benchmarks.

use glean_core::harness::{synth_generate, DatasetBundle};
use glean_core::table::Table;

/// Synthetic bundle with planted predictions.
pub fn bundle(n: usize) -> DatasetBundle {
    synth_generate(n, 17).bundle
}

/// A `rows` x `cols` table of short mixed text and numeric cells.
pub fn wide_table(rows: usize, cols: usize) -> Table {
    let headers = (0..cols).map(|c| format!("col {c}")).collect();
    let body = (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| if c % 2 == 0 { format!("item {r} {c}") } else { (r * 7 + c).to_string() })
                .collect()
        })
        .collect();
    Table::new("bench", headers, body).expect("rectangular")
}
