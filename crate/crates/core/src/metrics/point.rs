use rayon::prelude::*;

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

fn mean_nearest_sq(from: &[Point], to: &[Point]) -> f64 {
    let total: f64 = from
        .par_iter()
        .map(|p| {
            to.iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / from.len() as f64
}

/// Symmetric Chamfer distance: mean squared nearest-neighbor distance from
/// each cloud to the other, summed.
pub fn chamfer(x: &PointCloud, y: &PointCloud) -> f64 {
    mean_nearest_sq(x.points(), y.points()) + mean_nearest_sq(y.points(), x.points())
}

/// Mean squared difference between the two intra-cloud distance matrices
/// under the index correspondence `x_i ↔ y_i`.
pub fn pairwise_distance(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::SizeMismatch(format!(
            "pairwise distance needs equal point counts, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (px, py) = (x.points(), y.points());
    let n = px.len();
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = (px[i] - px[j]).norm() - (py[i] - py[j]).norm();
                    d * d
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / (n * n) as f64)
}
