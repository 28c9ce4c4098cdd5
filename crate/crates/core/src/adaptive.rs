//! Anytime-valid sequential permutation p-values and the adaptive
//! Benjamini-Hochberg loop built on them.
//!
//! Each hypothesis draws one permutation per round and records a loss when
//! the null statistic is at least as extreme as the observed one. With h
//! the futility cap and K_t the losses after t rounds,
//!
//! ```text
//! p_t = h / (t + h − K_t)     while K_t < h
//! p   = h / t*                once K_{t*} = h (frozen)
//! ```

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::perm::{at_least, PermSampler, Side, StopReason, SubsetStatistic};
use crate::rng;
use crate::treatment::Treatment;

pub const DEFAULT_H: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AVState {
    pub t: usize,
    pub k: usize,
    pub h: usize,
    pub t_star: Option<usize>,
    pub p: f64,
}

impl AVState {
    pub fn new(h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::Config("futility cap h must be positive".into()));
        }
        Ok(Self {
            t: 0,
            k: 0,
            h,
            t_star: None,
            p: 1.0,
        })
    }

    pub fn is_active(&self) -> bool {
        self.t_star.is_none()
    }

    /// Record one round.
    pub fn update(&mut self, loss: bool) -> Result<()> {
        if !self.is_active() {
            return Err(Error::Usage("update on a frozen anytime-valid state".into()));
        }
        self.t += 1;
        if loss {
            self.k += 1;
        }
        if self.k == self.h {
            self.t_star = Some(self.t);
            self.p = self.h as f64 / self.t as f64;
        } else {
            self.p = self.h as f64 / (self.t + self.h - self.k) as f64;
        }
        Ok(())
    }
}

pub fn av_update(mut state: AVState, loss: bool) -> Result<AVState> {
    state.update(loss)?;
    Ok(state)
}

/// Besag–Clifford p-value h / t*.
pub fn besag_clifford_p(t_star: usize, h: usize) -> Result<f64> {
    if h == 0 || t_star < h {
        return Err(Error::Usage(format!("need t* >= h > 0, got t*={t_star}, h={h}")));
    }
    Ok(h as f64 / t_star as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BhResult {
    /// Indices of rejected hypotheses, ascending.
    pub rejected: Vec<usize>,
    /// Largest kα/m with p_(k) ≤ kα/m, or 0 when nothing qualifies.
    pub threshold: f64,
}

/// Benjamini-Hochberg step-up. NaN entries are never rejected but count
/// towards m.
pub fn bh_rejections(pvals: &[f64], alpha: f64) -> BhResult {
    let m = pvals.len();
    let mut sorted: Vec<f64> = pvals
        .iter()
        .map(|&p| if p.is_nan() { f64::INFINITY } else { p })
        .collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut threshold = 0.0;
    for (i, &p) in sorted.iter().enumerate().rev() {
        let cut = (i + 1) as f64 * alpha / m as f64;
        if p <= cut {
            threshold = cut;
            break;
        }
    }
    let rejected = if threshold > 0.0 {
        (0..m).filter(|&i| pvals[i] <= threshold).collect()
    } else {
        Vec::new()
    };
    BhResult { rejected, threshold }
}

/// Source of per-round losses for one hypothesis.
pub trait Hypothesis: Send {
    /// Draw one null statistic and report whether it is a loss.
    fn next_loss(&mut self) -> Result<bool>;
}

/// Permutation hypothesis backed by a [`SubsetStatistic`].
pub struct PermHypothesis<S> {
    stat: S,
    sampler: PermSampler,
    z_orig: f64,
    side: Side,
}

impl<S: SubsetStatistic> PermHypothesis<S> {
    /// Evaluates the observed statistic and sets up the relabeling stream
    /// keyed by `(seed, key)`.
    pub fn new(stat: S, x: &Treatment, side: Side, seed: u64, key: u64) -> Result<Self> {
        let z_orig = stat.eval_treatment(x)?;
        let sampler = PermSampler::new(x.n(), x.count(), rng::stream(seed, key, 0));
        Ok(Self {
            stat,
            sampler,
            z_orig,
            side,
        })
    }

    pub fn z_orig(&self) -> f64 {
        self.z_orig
    }
}

/// Loss rule: the null is at least as extreme as the observation, in the
/// right-tail orientation after negation (left) or absolute value (two-sided).
pub fn is_loss(z_null: f64, z_orig: f64, side: Side) -> bool {
    match side {
        Side::Right => at_least(z_null, z_orig),
        Side::Left => at_least(-z_null, -z_orig),
        Side::TwoSided => at_least(z_null.abs(), z_orig.abs()),
    }
}

impl<S: SubsetStatistic + Send> Hypothesis for PermHypothesis<S> {
    fn next_loss(&mut self) -> Result<bool> {
        let z = self.stat.eval(self.sampler.draw())?;
        Ok(is_loss(z, self.z_orig, self.side))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig {
    pub h: usize,
    pub alpha: f64,
    /// Defaults to 10·⌈h/α⌉.
    pub round_cap: Option<usize>,
    /// Recompute BH every `bh_batch` rounds.
    pub bh_batch: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            h: DEFAULT_H,
            alpha: 0.1,
            round_cap: None,
            bh_batch: 1,
        }
    }
}

impl AdaptiveConfig {
    pub fn effective_round_cap(&self) -> usize {
        self.round_cap
            .unwrap_or_else(|| 10 * (self.h as f64 / self.alpha).ceil() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(Error::Config("h must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if self.bh_batch == 0 {
            return Err(Error::Config("bh_batch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoverySet {
    pub states: Vec<AVState>,
    pub stop: Vec<StopReason>,
    /// Indices in the rejection set, ascending.
    pub rejected: Vec<usize>,
    /// BH threshold on the final p-vector.
    pub threshold: f64,
    pub rounds: usize,
}

impl DiscoverySet {
    pub fn p_values(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.p).collect()
    }

    pub fn b_used(&self) -> Vec<usize> {
        self.states.iter().map(|s| s.t).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Active,
    Futile,
    Rejected,
}

/// Adaptive permutation testing with FDR control.
///
/// Active hypotheses advance one permutation per round (in parallel); a
/// hypothesis whose losses reach h moves to futility; after every
/// `bh_batch` rounds BH is applied to the current p-vector and active
/// hypotheses under the threshold move to rejection.
pub fn adaptive_fdr<H: Hypothesis>(hyps: &mut [H], cfg: &AdaptiveConfig) -> Result<DiscoverySet> {
    cfg.validate()?;
    let m = hyps.len();
    let cap = cfg.effective_round_cap();
    let mut states = vec![AVState::new(cfg.h)?; m];
    let mut status = vec![Status::Active; m];
    let mut round = 0;

    while round < cap && status.contains(&Status::Active) {
        let steps = cfg.bh_batch.min(cap - round);
        hyps.par_iter_mut()
            .zip(states.par_iter_mut())
            .zip(status.par_iter_mut())
            .try_for_each(|((hyp, st), stat)| -> Result<()> {
                if *stat != Status::Active {
                    return Ok(());
                }
                for _ in 0..steps {
                    st.update(hyp.next_loss()?)?;
                    if !st.is_active() {
                        *stat = Status::Futile;
                        break;
                    }
                }
                Ok(())
            })?;
        round += steps;

        let p: Vec<f64> = states.iter().map(|s| s.p).collect();
        let bh = bh_rejections(&p, cfg.alpha);
        for i in bh.rejected {
            if status[i] == Status::Active {
                status[i] = Status::Rejected;
            }
        }
    }

    let p: Vec<f64> = states.iter().map(|s| s.p).collect();
    let threshold = bh_rejections(&p, cfg.alpha).threshold;
    let stop = status
        .iter()
        .map(|s| match s {
            Status::Active => StopReason::Capped,
            Status::Futile => StopReason::Futility,
            Status::Rejected => StopReason::Rejection,
        })
        .collect();
    let rejected = (0..m).filter(|&i| status[i] == Status::Rejected).collect();
    Ok(DiscoverySet {
        states,
        stop,
        rejected,
        threshold,
        rounds: round,
    })
}
