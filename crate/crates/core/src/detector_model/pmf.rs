use rand::Rng;
use rand_distr::StandardNormal;

use crate::special::{norm_cdf, norm_sf};

use super::DetectorModel;

/// The photon-number law is truncated at `n̄ ± PHOTON_SPAN_SIGMAS·σ`.
pub const PHOTON_SPAN_SIGMAS: f64 = 6.0;

/// Upper bound on quadrature nodes in the photon-number sum.
pub const MAX_PHOTON_NODES: usize = 2048;

/// Photoelectron kernels are evaluated over `ηN ± KERNEL_SPAN_SIGMAS·σ_N`,
/// with the outer tails folded into the edge bins.
const KERNEL_SPAN_SIGMAS: f64 = 8.0;

/// Probability mass function over non-negative integer counts, stored on
/// the window `[offset, offset + probs.len())`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectronPmf {
    offset: usize,
    probs: Vec<f64>,
}

impl ElectronPmf {
    pub fn point(count: usize) -> Self {
        Self { offset: count, probs: vec![1.0] }
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, count: usize) -> f64 {
        count
            .checked_sub(self.offset)
            .and_then(|i| self.probs.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(k, p)| k as f64 * p).sum::<f64>() / self.total()
    }

    pub fn mode(&self) -> usize {
        let (i, _) = self
            .probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |a, (i, &p)| if p > a.1 { (i, p) } else { a });
        self.offset + i
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs.iter().enumerate().map(move |(i, &p)| (self.offset + i, p))
    }

    /// Distribution of the sum of two independent counts.
    pub fn convolve(&self, other: &ElectronPmf) -> ElectronPmf {
        let mut probs = vec![0.0; self.probs.len() + other.probs.len() - 1];
        for (i, &a) in self.probs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.probs.iter().enumerate() {
                probs[i + j] += a * b;
            }
        }
        ElectronPmf { offset: self.offset + other.offset, probs }
    }

    /// Clip at `threshold`: everything at or above it piles onto the last bin.
    pub fn clip(&self, threshold: usize) -> OutcomePmf {
        let mut probs = vec![0.0; threshold + 1];
        for (k, p) in self.iter() {
            probs[k.min(threshold)] += p;
        }
        OutcomePmf { probs }
    }
}

/// Outcome law of one saturating pixel over `[0, k_s]`; the last entry is
/// the saturation mass.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomePmf {
    probs: Vec<f64>,
}

impl OutcomePmf {
    pub fn from_probs(probs: Vec<f64>) -> Self {
        assert!(!probs.is_empty(), "outcome pmf needs at least one bin");
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn threshold(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn prob(&self, count: usize) -> f64 {
        self.probs.get(count).copied().unwrap_or(0.0)
    }

    pub fn saturation_mass(&self) -> f64 {
        self.probs[self.probs.len() - 1]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn total_variation(&self, other: &OutcomePmf) -> f64 {
        let len = self.probs.len().max(other.probs.len());
        0.5 * (0..len).map(|k| (self.prob(k) - other.prob(k)).abs()).sum::<f64>()
    }
}

/// Node placement for the photon-number sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhotonLayout {
    /// One node per integer photon number in `first..=last`.
    Integer { first: u64, last: u64 },
    /// [`MAX_PHOTON_NODES`] equal bins on `[lo, hi]`, nodes at the midpoints.
    Binned { lo: f64, hi: f64 },
}

/// Discretized, truncated Gaussian photon-number law with mean `n̄` and
/// standard deviation `factor·√n̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonLaw {
    mean: f64,
    sigma: f64,
    layout: PhotonLayout,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl PhotonLaw {
    pub fn new(mean: f64, det: &DetectorModel) -> Self {
        Self::with_layout(mean, det, Self::layout_for(mean, det))
    }

    /// Nodes over `n̄ ± 6σ`, clipped at zero: integer photon numbers when
    /// they fit in [`MAX_PHOTON_NODES`], equal bins otherwise.
    pub fn layout_for(mean: f64, det: &DetectorModel) -> PhotonLayout {
        if !(mean > 0.0) {
            return PhotonLayout::Integer { first: 0, last: 0 };
        }
        let sigma = det.photon_number_sigma_factor * mean.sqrt();
        let lo = (mean - PHOTON_SPAN_SIGMAS * sigma).max(0.0);
        let hi = mean + PHOTON_SPAN_SIGMAS * sigma;
        let first = lo.floor() as u64;
        let last = hi.ceil() as u64;
        if last - first < MAX_PHOTON_NODES as u64 {
            PhotonLayout::Integer { first, last }
        } else {
            PhotonLayout::Binned { lo, hi }
        }
    }

    /// Weights for mean `n̄` on a fixed node layout.
    pub fn with_layout(mean: f64, det: &DetectorModel, layout: PhotonLayout) -> Self {
        let sigma = det.photon_number_sigma_factor * mean.max(0.0).sqrt();
        let (nodes, mut weights): (Vec<f64>, Vec<f64>) = match layout {
            PhotonLayout::Integer { first, last } => (first..=last)
                .map(|n| {
                    let n = n as f64;
                    (n, bin_mass_scaled(n - 0.5, n + 0.5, mean, sigma))
                })
                .unzip(),
            PhotonLayout::Binned { lo, hi } => {
                let width = (hi - lo) / MAX_PHOTON_NODES as f64;
                (0..MAX_PHOTON_NODES)
                    .map(|i| {
                        let a = lo + i as f64 * width;
                        (a + 0.5 * width, bin_mass_scaled(a, a + width, mean, sigma))
                    })
                    .unzip()
            }
        };
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            // degenerate spread: all mass on the node nearest the mean
            let nearest = nodes
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |a, (i, &x)| {
                    let d = (x - mean).abs();
                    if d < a.1 { (i, d) } else { a }
                })
                .0;
            weights[nearest] = 1.0;
        }
        Self { mean, sigma, layout, nodes, weights }
    }

    pub fn layout(&self) -> PhotonLayout {
        self.layout
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Draw a photon number from exactly this discretized law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_photons(self.mean, self.sigma, self.layout, rng)
    }
}

/// Photon draw for mean `n̄` without building the weight table.
pub(crate) fn sample_photon_number<R: Rng + ?Sized>(mean: f64, det: &DetectorModel, rng: &mut R) -> f64 {
    let sigma = det.photon_number_sigma_factor * mean.max(0.0).sqrt();
    sample_photons(mean, sigma, PhotonLaw::layout_for(mean, det), rng)
}

fn sample_photons<R: Rng + ?Sized>(mean: f64, sigma: f64, layout: PhotonLayout, rng: &mut R) -> f64 {
    if let PhotonLayout::Integer { first, last } = layout {
        if first == last || sigma == 0.0 {
            return first as f64;
        }
    }
    loop {
        let x = mean + sigma * rng.sample::<f64, _>(StandardNormal);
        match layout {
            PhotonLayout::Integer { first, last } => {
                let n = x.round();
                if n >= first as f64 && n <= last as f64 {
                    return n;
                }
            }
            PhotonLayout::Binned { lo, hi } => {
                if x >= lo && x < hi {
                    let width = (hi - lo) / MAX_PHOTON_NODES as f64;
                    let i = (((x - lo) / width) as usize).min(MAX_PHOTON_NODES - 1);
                    return lo + (i as f64 + 0.5) * width;
                }
            }
        }
    }
}

/// Photoelectron draw matching [`photoelectron_pmf`], edge tails included.
pub(crate) fn sample_photoelectrons<R: Rng + ?Sized>(photons: f64, det: &DetectorModel, rng: &mut R) -> usize {
    if !(photons > 0.0) {
        return 0;
    }
    let (mu, sigma, lo, hi) = kernel_window(photons, det);
    let x = (mu + sigma * rng.sample::<f64, _>(StandardNormal)).round();
    (x.max(lo as f64) as usize).clamp(lo, hi)
}

/// Dark-count draw matching [`dark_noise_pmf`].
pub(crate) fn sample_dark<R: Rng + ?Sized>(det: &DetectorModel, rng: &mut R) -> usize {
    let [lo, hi] = det.dark_support;
    loop {
        let k = (det.dark_mean + det.dark_sigma * rng.sample::<f64, _>(StandardNormal)).round();
        if k >= lo as f64 && k <= hi as f64 {
            return k as usize;
        }
    }
}

#[inline]
fn kernel_window(photons: f64, det: &DetectorModel) -> (f64, f64, usize, usize) {
    let mu = det.quantum_efficiency * photons;
    let sigma = det.gain_sigma_law.sigma(photons);
    let lo = (mu - KERNEL_SPAN_SIGMAS * sigma).floor().max(0.0) as usize;
    let hi = ((mu + KERNEL_SPAN_SIGMAS * sigma).ceil().max(0.0) as usize).max(lo);
    (mu, sigma, lo, hi)
}

/// Mass of `N(mean, sigma)` on `(a, b]`.
#[inline]
fn bin_mass_scaled(a: f64, b: f64, mean: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return if a < mean && mean <= b { 1.0 } else { 0.0 };
    }
    let za = (a - mean) / sigma;
    let zb = (b - mean) / sigma;
    interval_from_tails(za, smaller_tail(za), zb, smaller_tail(zb))
}

#[inline]
fn smaller_tail(z: f64) -> f64 {
    if z < 0.0 {
        norm_cdf(z)
    } else {
        norm_sf(z)
    }
}

#[inline]
fn interval_from_tails(za: f64, ta: f64, zb: f64, tb: f64) -> f64 {
    if zb <= 0.0 {
        tb - ta
    } else if za >= 0.0 {
        ta - tb
    } else {
        1.0 - ta - tb
    }
}

/// Walks the photoelectron kernel for `photons` incident photons, calling
/// `visit(e, mass)` for each bin `e ≤ cap`. Returns the mass above `cap`.
#[inline]
fn photoelectron_bins(
    photons: f64,
    det: &DetectorModel,
    cap: usize,
    mut visit: impl FnMut(usize, f64),
) -> f64 {
    if !(photons > 0.0) {
        visit(0, 1.0);
        return 0.0;
    }
    let (mu, sigma, lo, hi) = kernel_window(photons, det);
    if lo > cap {
        return 1.0;
    }
    let top = hi.min(cap);
    let mut za = f64::NEG_INFINITY;
    let mut ta = 0.0;
    for e in lo..=top {
        let zb = if e == hi { f64::INFINITY } else { (e as f64 + 0.5 - mu) / sigma };
        let tb = smaller_tail(zb);
        visit(e, interval_from_tails(za, ta, zb, tb));
        za = zb;
        ta = tb;
    }
    if top < hi {
        // everything above the last visited edge
        if za >= 0.0 {
            ta
        } else {
            1.0 - ta
        }
    } else {
        0.0
    }
}

/// Dark counts: discretized `N(dark_mean, dark_sigma)` restricted to the
/// dark support and renormalized.
pub fn dark_noise_pmf(det: &DetectorModel) -> ElectronPmf {
    let [lo, hi] = det.dark_support;
    let mut probs: Vec<f64> = (lo..=hi)
        .map(|k| {
            let k = k as f64;
            bin_mass_scaled(k - 0.5, k + 0.5, det.dark_mean, det.dark_sigma)
        })
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    ElectronPmf { offset: lo as usize, probs }
}

/// Photoelectrons from exactly `photons` incident photons:
/// discretized `N(η·N, σ_N)`, negative counts folded into zero.
pub fn photoelectron_pmf(photons: f64, det: &DetectorModel) -> ElectronPmf {
    let mut offset = None;
    let mut probs = Vec::new();
    photoelectron_bins(photons, det, usize::MAX, |e, m| {
        offset.get_or_insert(e);
        probs.push(m);
    });
    ElectronPmf { offset: offset.unwrap_or(0), probs }
}

/// Unclipped electron law `R(k|N)`: dark noise convolved with photoelectrons.
pub fn response_pmf(photons: f64, det: &DetectorModel) -> ElectronPmf {
    photoelectron_pmf(photons, det).convolve(&dark_noise_pmf(det))
}

/// `R_s(k|N)`: the response clipped at the saturation threshold.
pub fn saturated_response_pmf(photons: f64, det: &DetectorModel) -> OutcomePmf {
    response_pmf(photons, det).clip(det.threshold())
}

/// `P(k|n̄)`: saturated response marginalized over the photon-number law.
pub fn pixel_outcome_pmf(mean_photons: f64, det: &DetectorModel) -> OutcomePmf {
    pixel_outcome_pmf_with_layout(mean_photons, det, PhotonLaw::layout_for(mean_photons, det))
}

/// As [`pixel_outcome_pmf`] but with the photon nodes pinned to `layout`,
/// so that nearby means share one truncation.
///
/// The photoelectron mixture is accumulated first and convolved with the
/// dark law once; clipping commutes with the mixture, so this equals the
/// node-by-node sum of saturated responses.
pub fn pixel_outcome_pmf_with_layout(
    mean_photons: f64,
    det: &DetectorModel,
    layout: PhotonLayout,
) -> OutcomePmf {
    let threshold = det.threshold();
    let dark_lo = det.dark_support[0] as usize;
    // largest photoelectron count that can still register below threshold
    let cap = threshold - 1 - dark_lo;
    let law = PhotonLaw::with_layout(mean_photons, det, layout);

    let mut mixture = vec![0.0; cap + 1];
    let mut above = 0.0;
    let (mut first, mut last) = (usize::MAX, 0);
    for (&photons, &w) in law.nodes().iter().zip(law.weights()) {
        if w == 0.0 {
            continue;
        }
        above += w * photoelectron_bins(photons, det, cap, |e, m| {
            mixture[e] += w * m;
            first = first.min(e);
            last = last.max(e);
        });
    }

    let dark = dark_noise_pmf(det);
    let mut probs = vec![0.0; threshold + 1];
    let mut saturated = above;
    if first <= last {
        for (kd, pd) in dark.iter() {
            for (e, &m) in mixture.iter().enumerate().take(last + 1).skip(first) {
                let k = e + kd;
                if k < threshold {
                    probs[k] += pd * m;
                } else {
                    saturated += pd * m;
                }
            }
        }
    }
    probs[threshold] = saturated;
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    OutcomePmf { probs }
}
