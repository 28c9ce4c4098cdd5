use ndarray::{Array1, ArrayView2};

use crate::error::{Error, Result};

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Median-of-ratios size factors for a genes × samples matrix.
///
/// Only genes with strictly positive counts in every sample contribute,
/// since their geometric mean is otherwise zero.
pub fn estimate_size_factors(counts: ArrayView2<f64>) -> Result<Array1<f64>> {
    let (_, n) = counts.dim();
    if n == 0 {
        return Err(Error::SizeFactor("no samples".into()));
    }
    let mut ratios: Vec<Vec<f64>> = vec![Vec::new(); n];
    for row in counts.rows() {
        if !row.iter().all(|&v| v > 0.0 && v.is_finite()) {
            continue;
        }
        let log_geo = row.iter().map(|v| v.ln()).sum::<f64>() / n as f64;
        for (i, &v) in row.iter().enumerate() {
            ratios[i].push((v.ln() - log_geo).exp());
        }
    }
    if ratios[0].is_empty() {
        return Err(Error::SizeFactor("no gene has positive counts in every sample".into()));
    }
    Ok(ratios.iter_mut().map(|r| median(r)).collect())
}
