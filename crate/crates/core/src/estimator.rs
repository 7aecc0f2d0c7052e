//! Maximum-likelihood estimation of B from simulated frames and bootstrap
//! precision over a frame pool.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apparatus::Apparatus;
use crate::detector_model::{derive_seed, pixel_outcome_pmf, sample_frame, Frame};
use crate::error::ModelError;
use crate::fisher::PROBABILITY_FLOOR;
use crate::spectral_meter::{SchemeConfig, Transmission};

pub const PRESCAN_POINTS: usize = 64;
pub const RELATIVE_TOLERANCE: f64 = 1e-6;
/// Bootstrap reports fail once more than this share of repeats fail.
pub const MAX_FAILED_SHARE: f64 = 0.2;
/// Prescan values closer than this are treated as a flat surface.
const FLAT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("frame set is empty")]
    Empty,
    #[error("frame {frame} has {found} pixels, expected {expected}")]
    PixelMismatch { frame: usize, expected: usize, found: usize },
    #[error("pool of {pool} frames cannot supply batches of {batch}")]
    PoolTooSmall { pool: usize, batch: usize },
    #[error("invalid search bracket [{0}, {1}]")]
    BadBracket(f64, f64),
    #[error("no interior maximum: {0}")]
    NoInteriorMaximum(String),
    #[error("{failed} of {repeats} bootstrap repeats failed")]
    TooManyFailures { failed: usize, repeats: usize, report: Box<PrecisionReport> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How a frame set was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub scheme: SchemeConfig,
    pub n: f64,
    pub b_true: f64,
    pub seed: u64,
    pub detector_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    frames: Vec<Frame>,
    provenance: Provenance,
}

impl FrameSet {
    pub fn new(frames: Vec<Frame>, provenance: Provenance) -> Result<Self, EstimateError> {
        let expected = frames.first().ok_or(EstimateError::Empty)?.electrons.len();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.electrons.len() != expected) {
            return Err(EstimateError::PixelMismatch { frame: i, expected, found: f.electrons.len() });
        }
        Ok(Self { frames, provenance })
    }

    /// Simulate `count` frames; frame `i` depends only on `(seed, i)`.
    pub fn simulate(
        app: &Apparatus,
        scheme: &SchemeConfig,
        n: f64,
        b_true: f64,
        count: usize,
        seed: u64,
    ) -> Result<Self, EstimateError> {
        let counts = app.expected_counts(scheme, b_true, n)?;
        let frames: Vec<Frame> = (0..count as u64)
            .into_par_iter()
            .map(|i| sample_frame(&counts, app.det(), seed, i))
            .collect();
        let provenance =
            Provenance { scheme: *scheme, n, b_true, seed, detector_hash: app.det().fingerprint() };
        Self::new(frames, provenance)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.frames[0].electrons.len()
    }

    /// Frames at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, EstimateError> {
        Self::new(indices.iter().map(|&i| self.frames[i].clone()).collect(), self.provenance.clone())
    }
}

/// Per-pixel outcome histograms `(k, count)`, sorted by `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeHistograms {
    offsets: Vec<usize>,
    entries: Vec<(u16, u32)>,
}

impl OutcomeHistograms {
    pub fn new<'a>(frames: impl IntoIterator<Item = &'a Frame>, pixels: usize) -> Self {
        let mut by_pixel: Vec<Vec<u16>> = vec![Vec::new(); pixels];
        for f in frames {
            for (j, &k) in f.electrons.iter().enumerate() {
                by_pixel[j].push(k);
            }
        }
        let mut offsets = vec![0];
        let mut entries = Vec::new();
        for mut ks in by_pixel {
            ks.sort_unstable();
            for chunk in ks.chunk_by(|a, b| a == b) {
                entries.push((chunk[0], chunk.len() as u32));
            }
            offsets.push(entries.len());
        }
        Self { offsets, entries }
    }

    pub fn pixel(&self, j: usize) -> &[(u16, u32)] {
        &self.entries[self.offsets[j]..self.offsets[j + 1]]
    }

    pub fn pixel_count(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// `ln L(B)` for one batch of frames under a fixed scheme and photon number.
pub struct LikelihoodModel<'a> {
    app: &'a Apparatus,
    transmission: Transmission,
    n: f64,
    hist: OutcomeHistograms,
}

impl<'a> LikelihoodModel<'a> {
    pub fn new(app: &'a Apparatus, frames: &FrameSet) -> Result<Self, EstimateError> {
        let prov = frames.provenance();
        if frames.pixel_count() != app.pixel_count() {
            return Err(EstimateError::PixelMismatch {
                frame: 0,
                expected: app.pixel_count(),
                found: frames.pixel_count(),
            });
        }
        Ok(Self {
            app,
            transmission: app.transmission(&prov.scheme)?,
            n: prov.n,
            hist: OutcomeHistograms::new(frames.frames(), frames.pixel_count()),
        })
    }

    fn means(&self, b_tesla: f64, out: &mut [f64], scratch: &mut Vec<f64>) {
        self.app.counts_into(&self.transmission, b_tesla, self.n, out, scratch);
    }

    /// `Σ_{i,j} ln P(k_ij|B)` from the response table; `-∞` once any
    /// outcome is at or below the probability floor.
    pub fn log_likelihood(&self, b_tesla: f64) -> f64 {
        let mut means = vec![0.0; self.hist.pixel_count()];
        self.means(b_tesla, &mut means, &mut Vec::new());
        let table = self.app.table();
        let floor = PROBABILITY_FLOOR.ln();
        let mut total = 0.0;
        for (j, &mean) in means.iter().enumerate() {
            let st = table.stencil(mean);
            for &(k, c) in self.hist.pixel(j) {
                let lp = table.log_prob_at(&st, k as usize);
                if !(lp > floor) {
                    return f64::NEG_INFINITY;
                }
                total += c as f64 * lp;
            }
        }
        total
    }

    /// As [`Self::log_likelihood`] with every pixel law built directly.
    pub fn log_likelihood_direct(&self, b_tesla: f64) -> f64 {
        let mut means = vec![0.0; self.hist.pixel_count()];
        self.means(b_tesla, &mut means, &mut Vec::new());
        let mut total = 0.0;
        for (j, &mean) in means.iter().enumerate() {
            let pmf = pixel_outcome_pmf(mean, self.app.det());
            for &(k, c) in self.hist.pixel(j) {
                let p = pmf.prob(k as usize);
                if !(p > PROBABILITY_FLOOR) {
                    return f64::NEG_INFINITY;
                }
                total += c as f64 * p.ln();
            }
        }
        total
    }
}

pub fn log_likelihood(app: &Apparatus, frames: &FrameSet, b_tesla: f64) -> Result<f64, EstimateError> {
    Ok(LikelihoodModel::new(app, frames)?.log_likelihood(b_tesla))
}

/// Maximize `f` on `[lo, hi]`: a [`PRESCAN_POINTS`] grid locates the peak,
/// golden-section search refines it inside the neighbouring grid cells.
pub fn maximize(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Result<(f64, f64), EstimateError> {
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(EstimateError::BadBracket(lo, hi));
    }
    let last = PRESCAN_POINTS - 1;
    let grid: Vec<f64> = (0..PRESCAN_POINTS).map(|i| lo + (hi - lo) * i as f64 / last as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let (best, &top) = values
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |a, (i, v)| if *v > *a.1 { (i, v) } else { a });
    if top == f64::NEG_INFINITY {
        return Err(EstimateError::NoInteriorMaximum("likelihood vanishes across the bracket".into()));
    }
    let bottom = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if top - bottom <= FLAT_TOLERANCE * top.abs().max(1.0) {
        return Err(EstimateError::NoInteriorMaximum("likelihood is flat across the bracket".into()));
    }
    if best == 0 || best == last {
        return Err(EstimateError::NoInteriorMaximum(format!(
            "prescan peak at bracket edge {}",
            grid[best]
        )));
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (grid[best - 1], grid[best + 1]);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let (mut x_best, mut f_best) = (grid[best], top);
    while b - a > RELATIVE_TOLERANCE * x_best.abs().max(hi - lo) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        for (x, v) in [(c, fc), (d, fd)] {
            if v > f_best {
                x_best = x;
                f_best = v;
            }
        }
    }
    Ok((x_best, f_best))
}

/// Maximum-likelihood B̂ inside `bracket`.
pub fn mle_estimate(app: &Apparatus, frames: &FrameSet, bracket: (f64, f64)) -> Result<f64, EstimateError> {
    let model = LikelihoodModel::new(app, frames)?;
    maximize(|b| model.log_likelihood(b), bracket.0, bracket.1).map(|(b, _)| b)
}

/// `[0, factor·B]`, or `[-factor·s, factor·s]` with `s` the fallback scale
/// when `B` is zero.
pub fn default_bracket(b_true: f64, factor: f64, zero_scale: f64) -> (f64, f64) {
    if b_true > 0.0 {
        (0.0, factor * b_true)
    } else if b_true < 0.0 {
        (factor * b_true, 0.0)
    } else {
        (-factor * zero_scale, factor * zero_scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    /// Estimates of the successful repeats, in repeat order.
    pub estimates: Vec<f64>,
    /// Sample standard deviation of `estimates`; NaN with fewer than two.
    pub delta_b: f64,
    pub batch_size: usize,
    /// Successful repeats, the length of `estimates`.
    pub repeats: usize,
    /// Repeats whose estimate failed and was dropped.
    pub failed_repeats: usize,
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Repeat `repeats` times: draw `batch` distinct frames from `pool`,
/// estimate B. Repeat `r` uses only `(seed, r)` for its draw.
pub fn bootstrap_precision(
    app: &Apparatus,
    pool: &FrameSet,
    batch: usize,
    repeats: usize,
    bracket: (f64, f64),
    seed: u64,
) -> Result<PrecisionReport, EstimateError> {
    if batch == 0 || pool.len() < batch {
        return Err(EstimateError::PoolTooSmall { pool: pool.len(), batch });
    }
    // table load and argument checks before fanning out
    LikelihoodModel::new(app, pool)?;
    app.table();
    let outcomes: Vec<Result<f64, EstimateError>> = (0..repeats as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r));
            let picks = sample(&mut rng, pool.len(), batch).into_vec();
            mle_estimate(app, &pool.subset(&picks)?, bracket)
        })
        .collect();
    let mut estimates = Vec::with_capacity(repeats);
    let mut failed_repeats = 0;
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(b) => estimates.push(b),
            Err(e) => {
                log::debug!("repeat {r} failed: {e}");
                failed_repeats += 1;
            }
        }
    }
    let report = PrecisionReport {
        delta_b: sample_std(&estimates),
        batch_size: batch,
        repeats: estimates.len(),
        estimates,
        failed_repeats,
    };
    if failed_repeats as f64 > MAX_FAILED_SHARE * repeats as f64 {
        return Err(EstimateError::TooManyFailures { failed: failed_repeats, repeats, report: Box::new(report) });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector_model::DetectorModel;
    use crate::spectral_meter::PhysicalConfig;
    use approx::assert_relative_eq;

    fn app() -> Apparatus {
        Apparatus::new(PhysicalConfig::default(), DetectorModel::default()).unwrap()
    }

    #[test]
    fn golden_section_finds_a_parabola_peak() {
        let (x, v) = maximize(|x| -(x - 0.3).powi(2), 0.0, 1.0).unwrap();
        assert!((x - 0.3).abs() < 2e-6);
        assert!(v <= 0.0);
    }

    #[test]
    fn edge_and_flat_surfaces_fail() {
        assert!(matches!(maximize(|x| x, 0.0, 1.0), Err(EstimateError::NoInteriorMaximum(_))));
        assert!(matches!(maximize(|_| 5.0, 0.0, 1.0), Err(EstimateError::NoInteriorMaximum(_))));
        assert!(matches!(maximize(|_| f64::NEG_INFINITY, 0.0, 1.0), Err(EstimateError::NoInteriorMaximum(_))));
        assert_eq!(maximize(|x| x, 1.0, 1.0), Err(EstimateError::BadBracket(1.0, 1.0)));
    }

    #[test]
    fn brackets() {
        assert_eq!(default_bracket(0.028, 4.0, 1e-3), (0.0, 0.112));
        assert_eq!(default_bracket(0.0, 4.0, 1e-3), (-4e-3, 4e-3));
    }

    #[test]
    fn frame_sets_validate() {
        let prov = Provenance {
            scheme: SchemeConfig::conventional(),
            n: 1.0,
            b_true: 0.0,
            seed: 0,
            detector_hash: String::new(),
        };
        assert_eq!(FrameSet::new(vec![], prov.clone()), Err(EstimateError::Empty));
        let frames = vec![Frame { electrons: vec![1, 2] }, Frame { electrons: vec![1] }];
        assert!(matches!(FrameSet::new(frames, prov), Err(EstimateError::PixelMismatch { frame: 1, .. })));
    }

    #[test]
    fn histograms_count_outcomes() {
        let frames = [Frame { electrons: vec![5, 7] }, Frame { electrons: vec![5, 9] }, Frame { electrons: vec![3, 7] }];
        let h = OutcomeHistograms::new(frames.iter(), 2);
        assert_eq!(h.pixel(0), &[(3, 1), (5, 2)]);
        assert_eq!(h.pixel(1), &[(7, 2), (9, 1)]);
    }

    #[test]
    fn likelihood_is_permutation_invariant() {
        let app = app();
        let cfg = SchemeConfig::biased_weak(0.2, 5, 9e4);
        let set = FrameSet::simulate(&app, &cfg, 1e8, 0.028, 20, 9).unwrap();
        let reversed: Vec<usize> = (0..20).rev().collect();
        let a = log_likelihood(&app, &set, 0.03).unwrap();
        let b = log_likelihood(&app, &set.subset(&reversed).unwrap(), 0.03).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn identical_frames_give_zero_spread() {
        let app = app();
        let cfg = SchemeConfig::biased_weak(0.2, 5, 9e4);
        let one = FrameSet::simulate(&app, &cfg, 1e8, 0.028, 1, 4).unwrap();
        let pool = one.subset(&[0; 30]).unwrap();
        let report = bootstrap_precision(&app, &pool, 10, 6, (0.0, 0.112), 1).unwrap();
        assert_eq!(report.failed_repeats, 0);
        assert_eq!(report.delta_b, 0.0);
        assert_eq!(report.estimates.len(), 6);
    }

    #[test]
    fn bootstrap_rejects_small_pools() {
        let app = app();
        let set = FrameSet::simulate(&app, &SchemeConfig::conventional(), 1e6, 0.028, 5, 0).unwrap();
        assert_eq!(
            bootstrap_precision(&app, &set, 6, 3, (0.0, 0.1), 0),
            Err(EstimateError::PoolTooSmall { pool: 5, batch: 6 })
        );
    }

    #[test]
    fn sample_std_matches_definition() {
        assert_relative_eq!(sample_std(&[1.0, 2.0, 3.0, 4.0]), (5.0f64 / 3.0).sqrt(), max_relative = 1e-15);
        assert!(sample_std(&[2.0]).is_nan());
    }
}
