use crate::detector_model::DetectorModel;
use crate::error::ModelError;

use super::{coupling_strength, PhysicalConfig, SchemeConfig, Spectrum, Transmission, CELLS_PER_PIXEL};

/// Fraction of the post-selected weight that may miss the pixel array
/// before [`ExpectedCounts::spills`] reports it.
pub const SPILL_WARNING_FRACTION: f64 = 1e-3;

/// Overlap of spectrum cells with detector pixels, stored row-per-pixel.
///
/// A cell's density is taken as uniform across the cell, so a pixel
/// collects each overlapping cell in proportion to the overlap length.
#[derive(Debug, Clone)]
pub struct PixelBinning {
    offsets: Vec<usize>,
    cells: Vec<u32>,
    fractions: Vec<f64>,
    cell_range: (usize, usize),
}

impl PixelBinning {
    pub fn new(spectrum: &Spectrum, det: &DetectorModel) -> Self {
        let h = spectrum.step();
        let origin = spectrum.lower_edge();
        let len = spectrum.len();
        let mut offsets = Vec::with_capacity(det.pixel_count + 1);
        let mut cells = Vec::new();
        let mut fractions = Vec::new();
        let mut lo_cell = usize::MAX;
        let mut hi_cell = 0;
        offsets.push(0);
        for pixel in 0..det.pixel_count {
            let (p_lo, p_hi) = det.pixel_momentum_range(pixel);
            let first = ((p_lo - origin) / h).floor().max(0.0) as usize;
            let last = (((p_hi - origin) / h).ceil().max(0.0) as usize).min(len);
            for c in first..last {
                let c_lo = origin + c as f64 * h;
                let overlap = p_hi.min(c_lo + h) - p_lo.max(c_lo);
                if overlap > 0.0 {
                    cells.push(c as u32);
                    fractions.push(overlap / h);
                    lo_cell = lo_cell.min(c);
                    hi_cell = hi_cell.max(c + 1);
                }
            }
            offsets.push(cells.len());
        }
        if cells.is_empty() {
            lo_cell = 0;
        }
        Self { offsets, cells, fractions, cell_range: (lo_cell, hi_cell) }
    }

    pub fn pixel_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Expected photons per pixel into `out`; `scratch` holds per-cell
    /// densities between calls.
    pub fn fill_counts(
        &self,
        spectrum: &Spectrum,
        transmission: &Transmission,
        k: f64,
        n: f64,
        out: &mut [f64],
        scratch: &mut Vec<f64>,
    ) {
        let (lo, hi) = self.cell_range;
        scratch.clear();
        let p = &spectrum.momenta()[lo..hi.max(lo)];
        let w = &spectrum.weights()[lo..hi.max(lo)];
        scratch.extend(p.iter().zip(w).map(|(&p, &w)| transmission.at(p, k) * w));
        for (pixel, slot) in out.iter_mut().enumerate() {
            let row = self.offsets[pixel]..self.offsets[pixel + 1];
            let mut acc = 0.0;
            for (&c, &f) in self.cells[row.clone()].iter().zip(&self.fractions[row]) {
                acc += f * scratch[c as usize - lo];
            }
            *slot = n * acc;
        }
    }

    pub fn expected_counts(
        &self,
        spectrum: &Spectrum,
        transmission: &Transmission,
        k: f64,
        n: f64,
    ) -> ExpectedCounts {
        let mut counts = vec![0.0; self.pixel_count()];
        let mut scratch = Vec::new();
        self.fill_counts(spectrum, transmission, k, n, &mut counts, &mut scratch);
        let fraction: f64 = spectrum
            .momenta()
            .iter()
            .zip(spectrum.weights())
            .map(|(&p, &w)| transmission.at(p, k) * w)
            .sum();
        let post_selected = n * fraction;
        let captured: f64 = counts.iter().sum();
        let outside_fraction = if post_selected > 0.0 {
            ((post_selected - captured) / post_selected).max(0.0)
        } else {
            0.0
        };
        ExpectedCounts { counts, post_selected, outside_fraction }
    }
}

/// Mean photon number per pixel for one (scheme, B, n) point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCounts {
    pub counts: Vec<f64>,
    /// `n` times the post-selected fraction over the whole spectrum grid.
    pub post_selected: f64,
    /// Share of the post-selected photons that land outside the pixel range.
    pub outside_fraction: f64,
}

impl ExpectedCounts {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn spills(&self) -> bool {
        self.outside_fraction > SPILL_WARNING_FRACTION
    }
}

/// Expected per-pixel photon numbers `n̄_j = n·∫_j D(p) dp`.
///
/// Builds the spectrum grid and pixel overlap table on every call; sweeps
/// should go through [`crate::Apparatus`] instead.
pub fn expected_pixel_counts(
    n: f64,
    b_tesla: f64,
    scheme: &SchemeConfig,
    phys: &PhysicalConfig,
    det: &DetectorModel,
) -> Result<ExpectedCounts, ModelError> {
    det.validate()?;
    let spectrum = Spectrum::gaussian(phys, det.pixel_momentum_width(phys.central_wavelength_nm) / CELLS_PER_PIXEL)?;
    let binning = PixelBinning::new(&spectrum, det);
    let t = scheme.transmission(spectrum.p0())?;
    let k = coupling_strength(b_tesla, phys);
    let out = binning.expected_counts(&spectrum, &t, k.nm(), n);
    if out.spills() {
        log::warn!(
            "{:.3}% of the post-selected {} spectrum falls outside the pixel range",
            100.0 * out.outside_fraction,
            scheme.scheme
        );
    }
    Ok(out)
}
