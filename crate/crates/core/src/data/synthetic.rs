//! Synthetic Gaussian-blob datasets for desk-scale experiments.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// `c` unit-covariance Gaussian blobs with class means placed on a regular
/// simplex scaled so every pair of means is exactly `separation` apart.
/// Class counts are equal up to one sample; labels are blob ids.
pub fn make_synthetic(n: usize, d: usize, c: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if c == 0 || n < c {
        return Err(Error::InvalidArg(format!(
            "need n >= c >= 1, got n={n} c={c}"
        )));
    }
    if d < 2 {
        return Err(Error::InvalidArg(format!("need d >= 2, got {d}")));
    }
    if !(separation > 0.0) {
        return Err(Error::InvalidArg(format!(
            "separation must be > 0, got {separation}"
        )));
    }
    if d + 1 < c {
        // c pairwise-equidistant points need at least c-1 dimensions.
        return Err(Error::InvalidArg(format!(
            "{c} equidistant class means need at least {} features, got {d}",
            c - 1
        )));
    }

    // Regular simplex in the first c-1 coordinates: vertices e_1..e_{c-1}
    // plus t*(1,...,1) with t = (1 + sqrt(c)) / (c - 1), all pairwise
    // sqrt(2) apart, scaled by separation / sqrt(2) and centered on the
    // origin so features stay zero-mean.
    let mut means = Array2::<f64>::zeros((c, d));
    if c >= 2 {
        let m = c - 1;
        let scale = separation / std::f64::consts::SQRT_2;
        let t = (1.0 + (c as f64).sqrt()) / m as f64;
        for coord in 0..m {
            means[[0, coord]] = t * scale;
        }
        for class in 1..c {
            means[[class, class - 1]] = scale;
        }
        let centroid = (t + 1.0) * scale / c as f64;
        for coord in 0..m {
            for class in 0..c {
                means[[class, coord]] -= centroid;
            }
        }
    }

    let base = n / c;
    let extra = n % c;
    let mut rng = seeded_rng(seed);
    let mut x = Array2::<f64>::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    let mut row = 0;
    for class in 0..c {
        let count = base + usize::from(class < extra);
        for _ in 0..count {
            for coord in 0..d {
                let noise: f64 = StandardNormal.sample(&mut rng);
                x[[row, coord]] = means[[class, coord]] + noise;
            }
            y.push(class);
            row += 1;
        }
    }

    let feature_names = (0..d).map(|i| format!("f{i}")).collect();
    Dataset::new(x, y, c, feature_names)
}
