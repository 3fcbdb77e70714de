#![allow(dead_code)]

use speclab::grid::Grid;

/// Brute force over every (center, radius) pair with direct squared distances.
pub fn exhaustive_maximal(grid: &Grid<f64>, f: &[f64]) -> Vec<f64> {
    let max_k = grid.diameter_steps().ceil() as i64;
    let mut out = vec![0.0f64; grid.len()];
    for c in 0..grid.len() {
        for k in 0..=max_k {
            let cells: Vec<usize> = (0..grid.len()).filter(|&y| grid.dist2_steps(c, y) <= k * k).collect();
            let avg = cells.iter().map(|&i| f[i].abs()).sum::<f64>() / cells.len() as f64;
            for &i in &cells {
                out[i] = out[i].max(avg);
            }
        }
    }
    out
}

/// Values `k/1024 - 1`, exactly representable so that averages compare exactly.
pub fn dyadic_values(len: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..len)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) % 2048) as f64 / 1024.0 - 1.0
        })
        .collect()
}
