use ndarray::{Array1, ArrayView1};

use super::sampler::Draw;
use crate::error::{Error, Result};
use crate::model::{nb_deviance, NullFit};
use crate::score::ScoreKernel;
use crate::treatment::Treatment;

/// A statistic of a binary treatment vector that can be evaluated cheaply
/// on its support or on its zero set.
pub trait SubsetStatistic: Sync {
    fn n(&self) -> usize;

    fn eval(&self, draw: Draw<'_>) -> Result<f64>;

    fn eval_treatment(&self, x: &Treatment) -> Result<f64> {
        x.ensure_both_classes()?;
        let ones = x.support();
        if ones.len() * 2 <= x.n() {
            self.eval(Draw::Ones(ones))
        } else {
            self.eval(Draw::Zeros(&x.complement()))
        }
    }
}

impl SubsetStatistic for ScoreKernel {
    fn n(&self) -> usize {
        ScoreKernel::n(self)
    }

    fn eval(&self, draw: Draw<'_>) -> Result<f64> {
        match draw {
            Draw::Ones(s) => self.score_support(s),
            Draw::Zeros(c) => self.score_complement(c),
        }
    }
}

/// s^{-1/2} Σ_{i: x_i = 1} v_i for a fixed vector v.
#[derive(Debug, Clone)]
pub struct ScaledSum {
    values: Array1<f64>,
    total: f64,
}

impl ScaledSum {
    pub fn new(values: Array1<f64>) -> Self {
        let total = values.sum();
        Self { values, total }
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    fn subset_sum(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.values[i]).sum()
    }
}

impl SubsetStatistic for ScaledSum {
    fn n(&self) -> usize {
        self.values.len()
    }

    fn eval(&self, draw: Draw<'_>) -> Result<f64> {
        let n = self.values.len();
        let (sum, s) = match draw {
            Draw::Ones(o) => (self.subset_sum(o), o.len()),
            Draw::Zeros(z) => (self.total - self.subset_sum(z), n - z.len()),
        };
        if s == 0 {
            return Err(Error::DegenerateTreatment("no treated samples".into()));
        }
        Ok(sum / (s as f64).sqrt())
    }
}

/// Plain rank-sum of the treated group.
#[derive(Debug, Clone)]
pub struct RankSum {
    ranks: Array1<f64>,
    total: f64,
}

impl RankSum {
    pub fn new(y: ArrayView1<f64>) -> Self {
        let ranks = average_ranks(y);
        let total = ranks.sum();
        Self { ranks, total }
    }

    pub fn ranks(&self) -> ArrayView1<'_, f64> {
        self.ranks.view()
    }
}

impl SubsetStatistic for RankSum {
    fn n(&self) -> usize {
        self.ranks.len()
    }

    fn eval(&self, draw: Draw<'_>) -> Result<f64> {
        Ok(match draw {
            Draw::Ones(o) => o.iter().map(|&i| self.ranks[i]).sum(),
            Draw::Zeros(z) => self.total - z.iter().map(|&i| self.ranks[i]).sum::<f64>(),
        })
    }
}

/// 1-based ranks with ties replaced by their average rank.
pub fn average_ranks(y: ArrayView1<f64>) -> Array1<f64> {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let mut ranks = Array1::<f64>::zeros(n);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && y[order[j + 1]] == y[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Residual flavour used by the residual permutation test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualKind {
    /// Y − μ̂
    #[default]
    Response,
    /// (Y − μ̂)/sqrt(μ̂ + φ̄μ̂²)
    Pearson,
    /// sign(Y − μ̂)·sqrt(d_i)
    Deviance,
}

impl std::str::FromStr for ResidualKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "response" => Ok(Self::Response),
            "pearson" => Ok(Self::Pearson),
            "deviance" => Ok(Self::Deviance),
            _ => Err(Error::Config(format!("unknown residual kind '{s}'"))),
        }
    }
}

pub fn null_residuals(fit: &NullFit, kind: ResidualKind) -> Array1<f64> {
    let raw = &fit.y - &fit.mu;
    match kind {
        ResidualKind::Response => raw,
        ResidualKind::Pearson => {
            let phi = fit.phi;
            Array1::from_shape_fn(fit.n(), |i| {
                let m = fit.mu[i];
                raw[i] / (m + phi * m * m).sqrt()
            })
        }
        ResidualKind::Deviance => Array1::from_shape_fn(fit.n(), |i| {
            let d = nb_deviance(
                fit.y.slice(ndarray::s![i..i + 1]),
                fit.mu.slice(ndarray::s![i..i + 1]),
                fit.phi,
            );
            raw[i].signum() * d.max(0.0).sqrt()
        }),
    }
}

/// S(x, e) = s^{-1/2} Σ_{i: x_i = 1} e_i.
pub fn residual_statistic(x: &Treatment, e: ArrayView1<f64>) -> Result<f64> {
    if x.n() != e.len() {
        return Err(Error::Usage("treatment and residual lengths differ".into()));
    }
    let s = x.count();
    if s == 0 {
        return Err(Error::DegenerateTreatment("no treated samples".into()));
    }
    let sum: f64 = x.support().iter().map(|&i| e[i]).sum();
    Ok(sum / (s as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn average_ranks_with_ties() {
        let r = average_ranks(array![10.0, 20.0, 10.0, 5.0, 20.0].view());
        assert_eq!(r.to_vec(), vec![2.5, 4.5, 2.5, 1.0, 4.5]);
    }

    #[test]
    fn residual_statistic_examples() {
        let x = Treatment::from_bools(&[true, false, true, true, false, true]);
        let e = array![1.0, 7.0, 1.0, 1.0, -3.0, 1.0];
        assert_eq!(residual_statistic(&x, e.view()).unwrap(), 2.0);
        assert_eq!(residual_statistic(&x, Array1::zeros(6).view()).unwrap(), 0.0);
        let none = Treatment::from_bools(&[false; 6]);
        assert!(residual_statistic(&none, e.view()).is_err());
    }

    #[test]
    fn residual_statistic_matches_loop_oracle() {
        use rand::Rng;
        let mut rng = crate::rng::stream(3, 0, 0);
        for _ in 0..50 {
            let n = rng.random_range(2..40);
            let xb: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            if !xb.iter().any(|&b| b) {
                continue;
            }
            let e: Array1<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut sum = 0.0;
            let mut s = 0.0;
            for i in 0..n {
                if xb[i] {
                    sum += e[i];
                    s += 1.0;
                }
            }
            let x = Treatment::from_bools(&xb);
            let got = residual_statistic(&x, e.view()).unwrap();
            assert!((got - sum / f64::sqrt(s)).abs() < 1e-12);
            let stat = ScaledSum::new(e.clone());
            assert!((stat.eval(Draw::Zeros(&x.complement())).unwrap() - got).abs() < 1e-12);
        }
    }

    #[test]
    fn location_shift_moves_statistic_by_c_root_s() {
        let x = Treatment::from_bools(&[true, false, true, false, true, false, true, false]);
        let e = array![0.3, -1.2, 2.2, 0.0, -0.7, 1.5, 0.9, -2.0];
        let c = 1.75;
        let base = residual_statistic(&x, e.view()).unwrap();
        let shifted = residual_statistic(&x, (&e + c).view()).unwrap();
        assert!((shifted - base - c * 2.0).abs() < 1e-12);
    }
}
