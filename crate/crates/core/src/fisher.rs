//! Classical Fisher information about B carried by the saturating pixel
//! array, and the Cramér–Rao precision it implies.

use rayon::prelude::*;
use serde::Serialize;

use crate::apparatus::Apparatus;
use crate::detector_model::{pixel_outcome_pmf_with_layout, DetectorModel, OutcomePmf, PhotonLaw};
use crate::error::FisherError;
use crate::spectral_meter::SchemeConfig;

/// Probabilities at or below this are treated as zero.
pub const PROBABILITY_FLOOR: f64 = 1e-300;
/// A floored outcome whose neighbouring probabilities are all below this
/// carries no resolvable information and is skipped.
pub const NEGLIGIBLE_MASS: f64 = 1e-20;
pub const RELATIVE_STEP: f64 = 1e-4;
pub const MIN_STEP_TESLA: f64 = 1e-10;
/// Frame count behind the reported precision bound.
pub const DEFAULT_CRB_FRAMES: usize = 300;

pub fn default_step(b_tesla: f64) -> f64 {
    (RELATIVE_STEP * b_tesla.abs()).max(MIN_STEP_TESLA)
}

fn check_step(step: f64) -> Result<(), FisherError> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(FisherError::BadStep(step))
    }
}

/// `Σ_k ((P₊ − P₋)/2h)² / P` over outcomes.
pub fn pmf_fisher(
    centre: &OutcomePmf,
    plus: &OutcomePmf,
    minus: &OutcomePmf,
    step: f64,
) -> Result<f64, FisherError> {
    check_step(step)?;
    let mut sum = 0.0;
    for (k, ((&p, &a), &b)) in centre.probs().iter().zip(plus.probs()).zip(minus.probs()).enumerate() {
        let d = (a - b) / (2.0 * step);
        if d == 0.0 {
            continue;
        }
        if p > PROBABILITY_FLOOR {
            sum += d * d / p;
        } else if a.max(b) > NEGLIGIBLE_MASS {
            return Err(FisherError::FloorHit { count: k });
        }
    }
    Ok(sum)
}

/// Fisher information about B in one pixel whose mean photon number is
/// `mean_of_b(B)`, from outcome laws evaluated directly at `B ± step`.
pub fn pixel_fisher(
    mean_of_b: impl Fn(f64) -> f64,
    b_tesla: f64,
    det: &DetectorModel,
    step: f64,
) -> Result<f64, FisherError> {
    check_step(step)?;
    let centre = mean_of_b(b_tesla);
    let (up, down) = (mean_of_b(b_tesla + step), mean_of_b(b_tesla - step));
    if up == down {
        return Ok(0.0);
    }
    // shared photon nodes keep the truncation fixed across the difference
    let layout = PhotonLaw::layout_for(centre, det);
    let p = pixel_outcome_pmf_with_layout(centre, det, layout);
    let a = pixel_outcome_pmf_with_layout(up, det, layout);
    let b = pixel_outcome_pmf_with_layout(down, det, layout);
    pmf_fisher(&p, &a, &b, step)
}

/// Cramér–Rao bound `1/√(ν·FI)`; infinite when there is no information.
pub fn crb_precision(fi_total: f64, frames: usize) -> f64 {
    1.0 / (frames as f64 * fi_total).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FisherResult {
    pub scheme: SchemeConfig,
    pub n: f64,
    pub b: f64,
    pub fi_total: f64,
    pub fi_per_pixel: Vec<f64>,
    pub frames: usize,
    pub crb_precision: f64,
}

impl FisherResult {
    fn from_pixels(scheme: SchemeConfig, n: f64, b: f64, fi_per_pixel: Vec<f64>) -> Self {
        let fi_total = fi_per_pixel.iter().sum();
        Self {
            scheme,
            n,
            b,
            fi_total,
            fi_per_pixel,
            frames: DEFAULT_CRB_FRAMES,
            crb_precision: crb_precision(fi_total, DEFAULT_CRB_FRAMES),
        }
    }

    /// Same result with the precision bound restated for `frames` frames.
    pub fn with_frames(mut self, frames: usize) -> Self {
        self.frames = frames;
        self.crb_precision = crb_precision(self.fi_total, frames);
        self
    }
}

/// Total Fisher information over all pixels.
///
/// Each pixel contributes `(∂n̄_j/∂B)²·F(n̄_j)`, with the per-photon-number
/// information `F` taken from the detector response table.
pub fn total_fisher(
    app: &Apparatus,
    scheme: &SchemeConfig,
    n: f64,
    b_tesla: f64,
    step: f64,
) -> Result<FisherResult, FisherError> {
    check_step(step)?;
    let t = app.transmission(scheme)?;
    let pixels = app.pixel_count();
    let mut scratch = Vec::new();
    let (mut up, mut down, mut centre) = (vec![0.0; pixels], vec![0.0; pixels], vec![0.0; pixels]);
    app.counts_into(&t, b_tesla + step, n, &mut up, &mut scratch);
    app.counts_into(&t, b_tesla - step, n, &mut down, &mut scratch);
    app.counts_into(&t, b_tesla, n, &mut centre, &mut scratch);
    let table = app.table();
    let mut per_pixel = Vec::with_capacity(pixels);
    for j in 0..pixels {
        let slope = (up[j] - down[j]) / (2.0 * step);
        let fi = if slope == 0.0 { 0.0 } else { slope * slope * table.information(centre[j]) };
        if !fi.is_finite() {
            return Err(FisherError::Pixel { pixel: j, source: Box::new(FisherError::FloorHit { count: 0 }) });
        }
        per_pixel.push(fi);
    }
    Ok(FisherResult::from_pixels(*scheme, n, b_tesla, per_pixel))
}

/// As [`total_fisher`], but every pixel goes through [`pixel_fisher`].
/// Slow; meant for cross-checks.
pub fn total_fisher_direct(
    app: &Apparatus,
    scheme: &SchemeConfig,
    n: f64,
    b_tesla: f64,
    step: f64,
) -> Result<FisherResult, FisherError> {
    check_step(step)?;
    let t = app.transmission(scheme)?;
    let pixels = app.pixel_count();
    let mut scratch = Vec::new();
    let mut at = |b: f64| {
        let mut out = vec![0.0; pixels];
        app.counts_into(&t, b, n, &mut out, &mut scratch);
        out
    };
    let (centre, up, down) = (at(b_tesla), at(b_tesla + step), at(b_tesla - step));
    let per_pixel = (0..pixels)
        .into_par_iter()
        .map(|j| {
            let mean = |b: f64| {
                if b == b_tesla {
                    centre[j]
                } else if b > b_tesla {
                    up[j]
                } else {
                    down[j]
                }
            };
            pixel_fisher(mean, b_tesla, app.det(), step)
                .map_err(|e| FisherError::Pixel { pixel: j, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FisherResult::from_pixels(*scheme, n, b_tesla, per_pixel))
}

/// One evaluated point of a sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub scheme: SchemeConfig,
    pub n: f64,
    pub result: Result<FisherResult, FisherError>,
}

/// [`total_fisher`] over every (scheme, n) pair, schemes outermost.
/// Failed points are kept in place.
pub fn fisher_sweep(
    app: &Apparatus,
    schemes: &[SchemeConfig],
    n_grid: &[f64],
    b_tesla: f64,
    step: f64,
) -> Vec<SweepPoint> {
    // load the table before fanning out
    app.table();
    let jobs: Vec<(SchemeConfig, f64)> =
        schemes.iter().flat_map(|s| n_grid.iter().map(move |&n| (*s, n))).collect();
    jobs.into_par_iter()
        .map(|(scheme, n)| SweepPoint { scheme, n, result: total_fisher(app, &scheme, n, b_tesla, step) })
        .collect()
}
