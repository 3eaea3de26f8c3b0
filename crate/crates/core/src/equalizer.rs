//! Second-order Volterra equalizer and its RLS training.
//!
//! The output is
//!
//! ```text
//! d(n) = Σ_{i<N_l} w1(i)·x(n−i) + Σ_{m1<N_nl} Σ_{m1≤m2<N_nl} w2(m1,m2)·x(n−m1)·x(n−m2)
//! ```
//!
//! with x(k) = 0 for k < 0. A linear equalizer is the special case w2 ≡ 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EqualizerMode {
    LinearOnly,
    Volterra,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EqualizerConfig {
    pub n_linear: usize,
    pub n_nonlinear: usize,
    pub rls_forgetting: f64,
    /// P(0) = I / rls_delta.
    pub rls_delta: f64,
    /// Output n estimates reference n − decision_delay; `None` means (N_l − 1)/2.
    pub decision_delay: Option<usize>,
    pub mode: EqualizerMode,
}

impl Default for EqualizerConfig {
    fn default() -> Self {
        Self {
            n_linear: 41,
            n_nonlinear: 21,
            rls_forgetting: 0.999,
            rls_delta: 0.01,
            decision_delay: None,
            mode: EqualizerMode::Volterra,
        }
    }
}

impl EqualizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_linear == 0 {
            return Err(Error::Config("equalizer: n_linear must be at least 1".into()));
        }
        if self.n_nonlinear > self.n_linear {
            return Err(Error::Config("equalizer: n_nonlinear may not exceed n_linear".into()));
        }
        if !(self.rls_forgetting > 0.0 && self.rls_forgetting <= 1.0) {
            return Err(Error::Config("equalizer: rls_forgetting must lie in (0, 1]".into()));
        }
        if !(self.rls_delta > 0.0) {
            return Err(Error::Config("equalizer: rls_delta must be positive".into()));
        }
        if self.delay() >= self.n_linear {
            return Err(Error::Config("equalizer: decision_delay must be below n_linear".into()));
        }
        Ok(())
    }

    pub fn delay(&self) -> usize {
        self.decision_delay.unwrap_or((self.n_linear - 1) / 2)
    }

    /// Number of quadratic kernel entries actually trained.
    pub fn quadratic_len(&self) -> usize {
        match self.mode {
            EqualizerMode::LinearOnly => 0,
            EqualizerMode::Volterra => self.n_nonlinear * (self.n_nonlinear + 1) / 2,
        }
    }

    pub fn total_taps(&self) -> usize {
        self.n_linear + self.quadratic_len()
    }
}

/// First-order taps and the packed upper triangle of the second-order kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolterraWeights {
    pub w1: Vec<f64>,
    /// Row-major upper triangle: (0,0), (0,1), …, (0,N−1), (1,1), …
    w2: Vec<f64>,
    n_nonlinear: usize,
}

fn packed_index(n: usize, m1: usize, m2: usize) -> usize {
    debug_assert!(m1 <= m2 && m2 < n);
    // rows 0..m1 hold n, n−1, …, n−m1+1 entries
    m1 * n - m1 * m1.saturating_sub(1) / 2 + (m2 - m1)
}

impl VolterraWeights {
    pub fn zeros(n_linear: usize, n_nonlinear: usize) -> Self {
        Self {
            w1: vec![0.0; n_linear],
            w2: vec![0.0; n_nonlinear * (n_nonlinear + 1) / 2],
            n_nonlinear,
        }
    }

    /// Pure delay: unit tap at `delay`.
    pub fn identity(n_linear: usize, n_nonlinear: usize, delay: usize) -> Self {
        let mut w = Self::zeros(n_linear, n_nonlinear);
        w.w1[delay] = 1.0;
        w
    }

    pub fn n_linear(&self) -> usize {
        self.w1.len()
    }

    pub fn n_nonlinear(&self) -> usize {
        self.n_nonlinear
    }

    pub fn w2(&self, m1: usize, m2: usize) -> f64 {
        assert!(m1 <= m2 && m2 < self.n_nonlinear, "w2 index ({m1},{m2}) outside upper triangle");
        self.w2[packed_index(self.n_nonlinear, m1, m2)]
    }

    pub fn set_w2(&mut self, m1: usize, m2: usize, value: f64) {
        assert!(m1 <= m2 && m2 < self.n_nonlinear, "w2 index ({m1},{m2}) outside upper triangle");
        self.w2[packed_index(self.n_nonlinear, m1, m2)] = value;
    }

    pub fn w2_packed(&self) -> &[f64] {
        &self.w2
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.w2).all(|v| v.is_finite())
    }

    fn from_stacked(stacked: &[f64], cfg: &EqualizerConfig) -> Self {
        let mut w = Self::zeros(cfg.n_linear, cfg.n_nonlinear);
        w.w1.copy_from_slice(&stacked[..cfg.n_linear]);
        if cfg.mode == EqualizerMode::Volterra {
            w.w2.copy_from_slice(&stacked[cfg.n_linear..]);
        }
        w
    }
}

/// Fills `out` with x(n−i), i = 0..out.len(), zero before the start.
fn window(x: &[f64], n: usize, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = if i <= n { x[n - i] } else { 0.0 };
    }
}

/// Evaluates the equalizer on every sample of `x`.
pub fn volterra_apply(x: &[f64], w: &VolterraWeights) -> Vec<f64> {
    let nl = w.n_linear();
    let nq = w.n_nonlinear;
    let quad = w.w2.iter().any(|&v| v != 0.0);
    let mut win = vec![0.0; nl.max(nq)];
    (0..x.len())
        .map(|n| {
            window(x, n, &mut win);
            let mut d: f64 = w.w1.iter().zip(&win).map(|(a, b)| a * b).sum();
            if quad {
                let mut idx = 0;
                for m1 in 0..nq {
                    let row = &w.w2[idx..idx + nq - m1];
                    let s: f64 = row.iter().zip(&win[m1..nq]).map(|(a, b)| a * b).sum();
                    d += win[m1] * s;
                    idx += nq - m1;
                }
            }
            d
        })
        .collect()
}

/// Builds the stacked regressor: linear window, then x(n−m1)x(n−m2) for m1 ≤ m2.
fn regressor(x: &[f64], n: usize, cfg: &EqualizerConfig, win: &mut [f64], u: &mut [f64]) {
    window(x, n, win);
    u[..cfg.n_linear].copy_from_slice(&win[..cfg.n_linear]);
    if cfg.mode == EqualizerMode::Volterra {
        let mut idx = cfg.n_linear;
        for m1 in 0..cfg.n_nonlinear {
            for m2 in m1..cfg.n_nonlinear {
                u[idx] = win[m1] * win[m2];
                idx += 1;
            }
        }
    }
}

/// Outcome of [`rls_train`].
#[derive(Debug, Clone)]
pub struct TrainedEqualizer {
    pub weights: VolterraWeights,
    /// A-priori squared error per training update.
    pub mse_trace: Vec<f64>,
}

impl TrainedEqualizer {
    /// Mean a-priori squared error over the last tenth of training.
    pub fn final_mse(&self) -> f64 {
        let n = self.mse_trace.len();
        let tail = (n / 10).max(1).min(n);
        self.mse_trace[n - tail..].iter().sum::<f64>() / tail as f64
    }
}

/// Exponentially weighted RLS over the stacked regressor. Output n is
/// trained toward `reference[n − delay]`.
pub fn rls_train(x: &[f64], reference: &[f64], cfg: &EqualizerConfig) -> Result<TrainedEqualizer> {
    cfg.validate()?;
    let m = cfg.total_taps();
    let delay = cfg.delay();
    let n_updates = reference.len().min(x.len().saturating_sub(delay));
    if n_updates < 10 * m {
        return Err(Error::Framing(format!(
            "training needs at least {} aligned samples for {m} taps, got {n_updates}",
            10 * m
        )));
    }
    let lambda = cfg.rls_forgetting;
    let inv_lambda = 1.0 / lambda;
    let mut w = vec![0.0; m];
    let mut p = vec![0.0; m * m];
    for i in 0..m {
        p[i * m + i] = 1.0 / cfg.rls_delta;
    }
    let mut win = vec![0.0; cfg.n_linear.max(cfg.n_nonlinear)];
    let mut u = vec![0.0; m];
    let mut pi = vec![0.0; m];
    let mut trace = Vec::with_capacity(n_updates);

    #[allow(clippy::needless_range_loop)]
    for j in 0..n_updates {
        let n = j + delay;
        regressor(x, n, cfg, &mut win, &mut u);
        for (r, pr) in pi.iter_mut().enumerate() {
            let row = &p[r * m..(r + 1) * m];
            *pr = row.iter().zip(&u).map(|(a, b)| a * b).sum();
        }
        let denom = lambda + u.iter().zip(&pi).map(|(a, b)| a * b).sum::<f64>();
        let e = reference[j] - w.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        if !(denom.is_finite() && denom > 0.0 && e.is_finite()) {
            return Err(Error::Divergence(j));
        }
        let g = 1.0 / denom;
        for (wi, &pii) in w.iter_mut().zip(&pi) {
            *wi += pii * g * e;
        }
        for r in 0..m {
            let kr = pi[r] * g;
            let row = &mut p[r * m..(r + 1) * m];
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - kr * pi[c]) * inv_lambda;
            }
        }
        trace.push(e * e);
    }
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::Divergence(n_updates));
    }
    Ok(TrainedEqualizer {
        weights: VolterraWeights::from_stacked(&w, cfg),
        mse_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packed_layout_is_row_major_upper_triangle() {
        let n = 5;
        let mut expect = 0;
        for m1 in 0..n {
            for m2 in m1..n {
                assert_eq!(packed_index(n, m1, m2), expect);
                expect += 1;
            }
        }
    }

    #[test]
    fn two_by_two_hand_value() {
        let mut w = VolterraWeights::zeros(2, 2);
        w.w1 = vec![0.5, 0.25];
        w.set_w2(0, 0, 0.1);
        w.set_w2(0, 1, 0.2);
        w.set_w2(1, 1, 0.3);
        let d = volterra_apply(&[1.0, 2.0], &w);
        assert!((d[1] - 2.35).abs() < 1e-12);
        // d(0) sees x(−1) = 0: 0.5·1 + 0.1·1
        assert!((d[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn config_checks() {
        assert!(EqualizerConfig::default().validate().is_ok());
        assert_eq!(EqualizerConfig::default().delay(), 20);
        assert_eq!(EqualizerConfig::default().total_taps(), 41 + 231);
        let bad = EqualizerConfig { n_nonlinear: 50, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = EqualizerConfig { rls_forgetting: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn short_training_is_rejected() {
        let cfg = EqualizerConfig { n_linear: 5, n_nonlinear: 2, ..Default::default() };
        let x = vec![0.5; 40];
        assert!(matches!(rls_train(&x, &x, &cfg), Err(Error::Framing(_))));
    }
}
