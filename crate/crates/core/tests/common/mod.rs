#![allow(dead_code)]

use diskchain::chain::TransitionMatrix;
use diskchain::domain::SUBDOMAINS;
use diskchain::harness::ExperimentSpec;
use diskchain::occupancy::{CounterAccumulator, OccupancyCounters};
use diskchain::SimConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Birth-death chain on `0..=n` with rows `[down, stay, up]`, every
/// transition probability in `[0.05, 0.2]`.
pub fn known_chain(n: usize) -> Vec<[f64; 3]> {
    (0..=n)
        .map(|j| {
            let down = if j == 0 { 0.0 } else { 0.05 + 0.15 * ((j * 7) % 5) as f64 / 4.0 };
            let up = if j == n { 0.0 } else { 0.05 + 0.15 * ((j * 3 + 1) % 4) as f64 / 3.0 };
            [down, 1.0 - up - down, up]
        })
        .collect()
}

/// Counters from `steps` transitions of nine independent copies of the chain.
pub fn synthetic_counters(rows: &[[f64; 3]], steps: usize, seed: u64) -> OccupancyCounters {
    let n = rows.len() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = [(n / 2) as u8; SUBDOMAINS];
    let mut acc = CounterAccumulator::new(n);
    acc.push(&state);
    for _ in 0..steps {
        for s in state.iter_mut() {
            let [down, _, up] = rows[*s as usize];
            let u: f64 = rng.random();
            if u < down {
                *s -= 1;
            } else if u < down + up {
                *s += 1;
            }
        }
        acc.push(&state);
    }
    acc.finish()
}

/// Largest absolute entry difference against a row-form reference.
pub fn max_entry_error(m: &TransitionMatrix, rows: &[[f64; 3]]) -> f64 {
    let mut worst: f64 = 0.0;
    for (j, r) in rows.iter().enumerate() {
        if j > 0 {
            worst = worst.max((m.get(j, j - 1) - r[0]).abs());
        }
        worst = worst.max((m.get(j, j) - r[1]).abs());
        if j + 1 < rows.len() {
            worst = worst.max((m.get(j, j + 1) - r[2]).abs());
        }
    }
    worst
}

pub fn small_spec(dir: &Path, realizations: usize, steps: usize, workers: usize) -> ExperimentSpec {
    ExperimentSpec {
        base: SimConfig { steps, realizations, ..SimConfig::default() },
        radius_list: vec![0.3, 0.7],
        realization_sweep: vec![realizations],
        output_dir: dir.to_path_buf(),
        worker_count: workers,
        ..ExperimentSpec::default()
    }
}
