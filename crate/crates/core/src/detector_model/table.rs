use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;

use super::pmf::{dark_noise_pmf, pixel_outcome_pmf, pixel_outcome_pmf_with_layout, OutcomePmf, PhotonLaw};
use super::DetectorModel;

/// Smallest tabulated mean photon number; below it a pixel sees dark noise only.
pub const TABLE_MIN_MEAN: f64 = 1e-8;
/// Tabulation density in rows per decade of `n̄`.
pub const ROWS_PER_DECADE: usize = 100;
/// Relative step in `n̄` for the tabulated information.
pub const TABLE_RELATIVE_STEP: f64 = 1e-4;
/// Rows stop once the law is a point mass at saturation, or at this mean.
const TABLE_MAX_MEAN: f64 = 1e5;

/// Pixel outcome laws `P(k|n̄)` and the per-photon-number information
/// `F(n̄) = Σ_k (∂P/∂n̄)² / P` tabulated on a log grid of `n̄`.
#[derive(Debug)]
pub struct ResponseTable {
    width: usize,
    log_min: f64,
    step: f64,
    rows: usize,
    log_probs: Vec<f64>,
    information: Vec<f64>,
    dark_log: Vec<f64>,
}

/// Interpolation recipe for one `n̄`, reusable across outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stencil {
    Dark,
    Saturated,
    Interior { first: usize, weights: [f64; 4], lower: usize, t: f64 },
}

impl ResponseTable {
    pub fn build(det: &DetectorModel) -> Self {
        let width = det.threshold() + 1;
        let step = std::f64::consts::LN_10 / ROWS_PER_DECADE as f64;
        let log_min = TABLE_MIN_MEAN.ln();
        let max_rows = ((TABLE_MAX_MEAN.ln() - log_min) / step).ceil() as usize + 1;
        let mean_at = |r: usize| (log_min + r as f64 * step).exp();

        // the law becomes an exact point mass somewhere past the saturation knee;
        // find the first such row so no work is spent beyond it
        let is_point = |r: usize| {
            let p = pixel_outcome_pmf(mean_at(r), det);
            p.saturation_mass() == 1.0 && p.probs()[..width - 1].iter().all(|&q| q == 0.0)
        };
        let (mut lo, mut hi) = (0, max_rows - 1);
        if is_point(hi) {
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if is_point(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        }
        let rows = hi + 1;

        let built: Vec<(Vec<f64>, f64)> = (0..rows)
            .into_par_iter()
            .map(|r| {
                let mean = mean_at(r);
                let p = pixel_outcome_pmf(mean, det);
                let logs = p.probs().iter().map(|q| q.ln()).collect();
                (logs, information_at(mean, &p, det))
            })
            .collect();
        let mut log_probs = Vec::with_capacity(rows * width);
        let mut information = Vec::with_capacity(rows);
        for (logs, info) in built {
            log_probs.extend(logs);
            information.push(info);
        }
        let dark_log = dark_noise_pmf(det).clip(width - 1).probs().iter().map(|q| q.ln()).collect();
        Self { width, log_min, step, rows, log_probs, information, dark_log }
    }

    /// Table for `det` from a process-wide cache keyed by its fingerprint.
    pub fn shared(det: &DetectorModel) -> Arc<ResponseTable> {
        static CACHE: OnceLock<Mutex<HashMap<String, Arc<ResponseTable>>>> = OnceLock::new();
        let key = det.fingerprint();
        let mut cache = CACHE.get_or_init(Default::default).lock().expect("table cache poisoned");
        cache.entry(key).or_insert_with(|| Arc::new(ResponseTable::build(det))).clone()
    }

    pub fn threshold(&self) -> usize {
        self.width - 1
    }

    /// Largest tabulated mean; above it the law is a point mass at saturation.
    pub fn max_mean(&self) -> f64 {
        self.mean_at(self.rows - 1)
    }

    fn mean_at(&self, row: usize) -> f64 {
        (self.log_min + row as f64 * self.step).exp()
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.log_probs[r * self.width..(r + 1) * self.width]
    }

    pub fn stencil(&self, mean: f64) -> Stencil {
        if !(mean >= TABLE_MIN_MEAN) {
            return Stencil::Dark;
        }
        let x = (mean.ln() - self.log_min) / self.step;
        if x >= (self.rows - 1) as f64 {
            return Stencil::Saturated;
        }
        let lower = (x.floor() as usize).min(self.rows - 2);
        let t = x - lower as f64;
        let first = lower.saturating_sub(1).min(self.rows.saturating_sub(4));
        let u = x - first as f64;
        let mut weights = [1.0; 4];
        for (i, w) in weights.iter_mut().enumerate() {
            for j in 0..4 {
                if i != j {
                    *w *= (u - j as f64) / (i as f64 - j as f64);
                }
            }
        }
        Stencil::Interior { first, weights, lower, t }
    }

    /// `ln P(k|n̄)`: cubic in `ln n̄` on the log-probabilities, linear in the
    /// probability itself wherever a stencil row has no mass at `k`.
    pub fn log_prob_at(&self, stencil: &Stencil, k: usize) -> f64 {
        match *stencil {
            Stencil::Dark => self.dark_log[k],
            Stencil::Saturated => {
                if k == self.width - 1 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Stencil::Interior { first, weights, lower, t } => {
                let mut acc = 0.0;
                for (i, w) in weights.iter().enumerate() {
                    let v = self.log_probs[(first + i) * self.width + k];
                    if !v.is_finite() {
                        let a = self.log_probs[lower * self.width + k].exp();
                        let b = self.log_probs[(lower + 1) * self.width + k].exp();
                        return ((1.0 - t) * a + t * b).ln();
                    }
                    acc += w * v;
                }
                acc.min(0.0)
            }
        }
    }

    pub fn log_prob(&self, mean: f64, k: usize) -> f64 {
        self.log_prob_at(&self.stencil(mean), k)
    }

    /// Interpolated law at `n̄`, renormalized.
    pub fn outcome_pmf(&self, mean: f64) -> OutcomePmf {
        let st = self.stencil(mean);
        let mut probs: Vec<f64> = (0..self.width).map(|k| self.log_prob_at(&st, k).exp()).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        OutcomePmf::from_probs(probs)
    }

    /// `F(n̄)`: cubic in `ln n̄` on `ln F`, linear in `F` next to zeros.
    pub fn information(&self, mean: f64) -> f64 {
        match self.stencil(mean) {
            Stencil::Dark | Stencil::Saturated => 0.0,
            Stencil::Interior { first, weights, lower, t } => {
                let f = &self.information[first..first + 4];
                if f.iter().all(|&v| v > 0.0) {
                    weights.iter().zip(f).map(|(w, v)| w * v.ln()).sum::<f64>().exp()
                } else {
                    (1.0 - t) * self.information[lower] + t * self.information[lower + 1]
                }
            }
        }
    }

    /// Tabulated `(n̄, F)` pairs.
    pub fn information_rows(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.rows).map(|r| (self.mean_at(r), self.information[r]))
    }

    /// Exact tabulated row `(n̄, ln P)`; used for checks.
    pub fn tabulated_row(&self, r: usize) -> Option<(f64, &[f64])> {
        (r < self.rows).then(|| (self.mean_at(r), self.row(r)))
    }
}

/// `Σ_k (∂P/∂n̄)² / P` with a central difference on the photon layout of `n̄`.
pub fn information_at(mean: f64, p: &OutcomePmf, det: &DetectorModel) -> f64 {
    let h = TABLE_RELATIVE_STEP * mean;
    let layout = PhotonLaw::layout_for(mean, det);
    let plus = pixel_outcome_pmf_with_layout(mean + h, det, layout);
    let minus = pixel_outcome_pmf_with_layout(mean - h, det, layout);
    let mut sum = 0.0;
    for ((&q, &a), &b) in p.probs().iter().zip(plus.probs()).zip(minus.probs()) {
        if q > 0.0 {
            let d = (a - b) / (2.0 * h);
            sum += d * d / q;
        }
    }
    sum
}
