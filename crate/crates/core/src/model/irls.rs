use ndarray::{Array1, Array2, ArrayView1};

use super::{dispersion, Convergence, CountVector, DesignMatrix, Dispersion, NullFit};
use crate::error::{Error, Result};
use crate::linalg::householder_qr;

const MU_MIN: f64 = 1e-10;
const MU_MAX: f64 = 1e10;

/// Stopping rules for IRLS.
#[derive(Debug, Clone, Copy)]
pub struct IrlsControl {
    pub max_iter: usize,
    /// Relative deviance change below which the deviance has settled.
    pub deviance_tol: f64,
    /// Extra requirement on the score Zᵀr̂, relative to (1 + ‖r̂‖)·max|Z|.
    pub score_tol: f64,
    pub max_halvings: usize,
}

impl Default for IrlsControl {
    fn default() -> Self {
        Self {
            max_iter: 50,
            deviance_tol: 1e-8,
            score_tol: 1e-10,
            max_halvings: 10,
        }
    }
}

/// NB deviance with dispersion `phi` (Poisson deviance when `phi == 0`).
pub fn nb_deviance(y: ArrayView1<f64>, mu: ArrayView1<f64>, phi: f64) -> f64 {
    let mut dev = 0.0;
    for (&yi, &mi) in y.iter().zip(mu.iter()) {
        let ylog = if yi > 0.0 { yi * (yi / mi).ln() } else { 0.0 };
        let d = if phi == 0.0 {
            ylog - (yi - mi)
        } else {
            let theta = 1.0 / phi;
            ylog - (yi + theta) * ((phi * yi).ln_1p() - (phi * mi).ln_1p())
        };
        dev += d;
    }
    2.0 * dev
}

fn linear_predictor(design: &DesignMatrix, beta: &Array1<f64>) -> Array1<f64> {
    let mut eta = design.matrix().dot(beta);
    if let Some(o) = design.offset() {
        eta += &o;
    }
    eta
}

fn mean_from_eta(eta: &Array1<f64>) -> Array1<f64> {
    eta.mapv(|e| e.exp().clamp(MU_MIN, MU_MAX))
}

fn score_ok(design: &DesignMatrix, r_hat: &Array1<f64>, tol: f64) -> bool {
    let score = design.matrix().t().dot(r_hat);
    let zscale = design.matrix().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let bound = tol * (1.0 + r_hat.dot(r_hat).sqrt()) * zscale;
    score.iter().all(|s| s.abs() <= bound)
}

fn score_residuals(y: ArrayView1<f64>, mu: &Array1<f64>, phi: f64) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let w = mu.mapv(|m| m / (1.0 + phi * m));
    let e = Array1::from_iter(y.iter().zip(mu.iter()).map(|(&yi, &mi)| (yi - mi) / mi));
    let r_hat = &w * &e;
    (w, e, r_hat)
}

/// IRLS for the NB GLM with the dispersion held at `phi`.
///
/// `start` warm-starts the coefficients (used by the dispersion alternation).
pub fn fit_fixed_dispersion(
    y: &CountVector,
    design: &DesignMatrix,
    phi: f64,
    start: Option<&Array1<f64>>,
    control: &IrlsControl,
) -> Result<NullFit> {
    let n = design.n();
    let p = design.p();
    if y.len() != n {
        return Err(Error::Design(format!(
            "response has {} samples but design has {n} rows",
            y.len()
        )));
    }
    if !(phi >= 0.0 && phi.is_finite()) {
        return Err(Error::Config(format!("dispersion must be >= 0, got {phi}")));
    }
    if y.is_all_zero() {
        return Err(Error::DegenerateData("all counts are zero".into()));
    }
    let rank_check = householder_qr(design.matrix())?;
    if rank_check.diag_ratio() < 1e-10 {
        return Err(Error::Design("design matrix is rank deficient".into()));
    }

    let yv = y.view();
    let z = design.matrix();
    let offset: Array1<f64> = match design.offset() {
        Some(o) => o.to_owned(),
        None => Array1::zeros(n),
    };

    let (mut beta, mut mu, mut eta) = match start {
        Some(b) if b.len() == p => {
            let eta = linear_predictor(design, b);
            (b.clone(), mean_from_eta(&eta), eta)
        }
        _ => {
            let mu0 = yv.mapv(|v| v + 0.1);
            let eta0 = mu0.mapv(f64::ln);
            (Array1::zeros(p), mu0, eta0)
        }
    };
    let mut have_beta = start.is_some_and(|b| b.len() == p);
    let mut dev_old = if have_beta {
        nb_deviance(yv, mu.view(), phi)
    } else {
        f64::INFINITY
    };

    let mut trace = Vec::new();
    let mut last_change = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < control.max_iter {
        iterations += 1;
        let mut a = Array2::<f64>::zeros((n, p));
        let mut b = Array1::<f64>::zeros(n);
        for i in 0..n {
            let wi = mu[i] / (1.0 + phi * mu[i]);
            let sw = wi.sqrt();
            let zi = eta[i] - offset[i] + (yv[i] - mu[i]) / mu[i];
            for j in 0..p {
                a[[i, j]] = sw * z[[i, j]];
            }
            b[i] = sw * zi;
        }
        let qr = householder_qr(a.view())?;
        if qr.diag_ratio() < 1e-12 {
            return Err(Error::Design("weighted design is numerically rank deficient".into()));
        }
        let mut beta_new = qr.solve_ls(b.view());
        let mut eta_new = linear_predictor(design, &beta_new);
        let mut mu_new = mean_from_eta(&eta_new);
        let mut dev_new = nb_deviance(yv, mu_new.view(), phi);

        if have_beta {
            let mut halvings = 0;
            while !(dev_new <= dev_old * (1.0 + 1e-12) + 1e-12) && halvings < control.max_halvings {
                beta_new = (&beta_new + &beta) * 0.5;
                eta_new = linear_predictor(design, &beta_new);
                mu_new = mean_from_eta(&eta_new);
                dev_new = nb_deviance(yv, mu_new.view(), phi);
                halvings += 1;
            }
            if !(dev_new <= dev_old * (1.0 + 1e-12) + 1e-12) {
                // No descent direction left; keep the previous iterate.
                last_change = 0.0;
                let (_, _, r_hat) = score_residuals(yv, &mu, phi);
                converged = score_ok(design, &r_hat, control.score_tol.max(1e-7));
                break;
            }
        }

        last_change = if dev_old.is_finite() {
            (dev_new - dev_old).abs() / (dev_new.abs() + 0.1)
        } else {
            f64::INFINITY
        };
        beta = beta_new;
        eta = eta_new;
        mu = mu_new;
        dev_old = dev_new;
        have_beta = true;
        trace.push(dev_new);

        if last_change < control.deviance_tol {
            let (_, _, r_hat) = score_residuals(yv, &mu, phi);
            if score_ok(design, &r_hat, control.score_tol) {
                converged = true;
                break;
            }
        }
    }
    if !converged && last_change < control.deviance_tol {
        // Deviance has settled; accept if the score is still near zero.
        let (_, _, r_hat) = score_residuals(yv, &mu, phi);
        let bound = 1e-6 * (1.0 + r_hat.dot(&r_hat).sqrt());
        converged = design.matrix().t().dot(&r_hat).iter().all(|s| s.abs() <= bound);
    }
    if !converged {
        return Err(Error::Convergence {
            iterations,
            last_change,
            last_beta: beta.to_vec(),
        });
    }

    let (w, e, r_hat) = score_residuals(yv, &mu, phi);
    let sqrt_w = w.mapv(f64::sqrt);
    let mut a = z.to_owned();
    for i in 0..n {
        for j in 0..p {
            a[[i, j]] *= sqrt_w[i];
        }
    }
    let qr = householder_qr(a.view())?;
    Ok(NullFit {
        beta,
        mu,
        w,
        working_residuals: e,
        r_hat,
        q: qr.q,
        r: qr.r,
        phi,
        phi_estimated: false,
        convergence: Convergence {
            iterations,
            deviance: dev_old,
            last_change,
            deviance_trace: trace,
        },
        design: design.clone(),
        y: yv.to_owned(),
    })
}

/// Fit the null NB GLM, regressing `y` on the nuisance design only.
pub fn fit_null_nb(y: &CountVector, design: &DesignMatrix, disp: Dispersion) -> Result<NullFit> {
    disp.validate()?;
    match disp {
        Dispersion::Fixed(phi) => fit_fixed_dispersion(y, design, phi, None, &IrlsControl::default()),
        Dispersion::Estimate => dispersion::fit_with_estimated_dispersion(y, design),
    }
}
