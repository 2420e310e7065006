//! Seeded band-limited data for the experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{project_mean_zero, CellField, Grid, GridFunction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub count: usize,
    pub seed: u64,
    /// Highest cosine index per axis; `None` means a quarter of the grid.
    pub max_mode: Option<usize>,
    /// Amplitudes decay like `(1 + kx² + ky²)^{-smoothness/2}`.
    pub smoothness: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec { count: 20, seed: 1, max_mode: None, smoothness: 5.0 }
    }
}

/// Random cosine sum `Σ ξ (1 + kx² + ky²)^{-s/2} cos(kx π x̂) cos(ky π ŷ)`
/// with `ξ ~ N(0, 1)`, `(kx, ky) ≠ (0, 0)` and `x̂, ŷ` the coordinates
/// rescaled to `[0, 1]`.
pub fn smooth_function(grid: Grid, rng: &mut impl Rng, max_mode: usize, smoothness: f64) -> GridFunction {
    let m = max_mode.max(1);
    let mut amp = vec![vec![0.0; m + 1]; m + 1];
    for (kx, row) in amp.iter_mut().enumerate() {
        for (ky, a) in row.iter_mut().enumerate() {
            if kx + ky > 0 {
                let xi: f64 = rng.sample(StandardNormal);
                *a = xi * (1.0 + (kx * kx + ky * ky) as f64).powf(-0.5 * smoothness);
            }
        }
    }
    let table = |k: usize, n: usize| -> Vec<f64> {
        (0..=n).map(|i| (std::f64::consts::PI * k as f64 * i as f64 / n as f64).cos()).collect()
    };
    let cx: Vec<Vec<f64>> = (0..=m).map(|k| table(k, grid.nx)).collect();
    let cy: Vec<Vec<f64>> = (0..=m).map(|k| table(k, grid.ny)).collect();
    // separable sum: first over ky, then over kx
    let mut partial = vec![vec![0.0; grid.ny + 1]; m + 1];
    for kx in 0..=m {
        for ky in 0..=m {
            let a = amp[kx][ky];
            if a != 0.0 {
                for (p, c) in partial[kx].iter_mut().zip(&cy[ky]) {
                    *p += a * c;
                }
            }
        }
    }
    let mut values = vec![0.0; grid.node_count()];
    for j in 0..=grid.ny {
        for i in 0..=grid.nx {
            values[grid.node_index(i, j)] = (0..=m).map(|kx| cx[kx][i] * partial[kx][j]).sum();
        }
    }
    GridFunction { grid, values }
}

/// `spec.count` functions, each projected to zero `v`-weighted mean.
/// Function `i` draws from ChaCha stream `i`, so corpora are prefix-stable.
pub fn generate_corpus(spec: &CorpusSpec, grid: Grid, v: &CellField) -> Result<Vec<GridFunction>> {
    let max_mode = spec.max_mode.unwrap_or(grid.nx.min(grid.ny) / 4);
    (0..spec.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            project_mean_zero(&smooth_function(grid, &mut rng, max_mode, spec.smoothness), v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::weighted_mean;

    #[test]
    fn corpora_are_deterministic_and_mean_zero() {
        let grid = Grid::unit_square(16).unwrap();
        let v = grid.sample_cells(|x, y| 1.0 + x * y);
        let spec = CorpusSpec { count: 5, seed: 9, ..CorpusSpec::default() };
        let a = generate_corpus(&spec, grid, &v).unwrap();
        let b = generate_corpus(&spec, grid, &v).unwrap();
        assert_eq!(a, b);
        for f in &a {
            assert!(weighted_mean(f, &v).unwrap().abs() <= 1e-12);
        }
        assert_ne!(a[0], a[1]);
        let longer = generate_corpus(&CorpusSpec { count: 7, ..spec }, grid, &v).unwrap();
        assert_eq!(&longer[..5], &a[..]);
        assert!(generate_corpus(&CorpusSpec { count: 0, ..spec }, grid, &v).unwrap().is_empty());
    }
}
