//! Calibrated CMOS response: dark noise, photoelectron statistics,
//! saturation clipping, the per-pixel outcome law and frame sampling.

mod pmf;
mod sampling;
mod table;

pub use pmf::{
    dark_noise_pmf, photoelectron_pmf, pixel_outcome_pmf, pixel_outcome_pmf_with_layout,
    response_pmf, saturated_response_pmf, ElectronPmf, OutcomePmf, PhotonLaw, PhotonLayout,
    MAX_PHOTON_NODES, PHOTON_SPAN_SIGMAS,
};
pub use sampling::{derive_seed, sample_frame, sample_pixel, Frame};
pub use table::{information_at, ResponseTable, Stencil, ROWS_PER_DECADE, TABLE_MIN_MEAN, TABLE_RELATIVE_STEP};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ModelError;

/// Linear wavelength calibration `λ(j) = slope·j + offset`, `j` counted
/// from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dispersion {
    pub slope_nm: f64,
    pub offset_nm: f64,
}

impl Dispersion {
    pub fn wavelength(&self, pixel_number: f64) -> f64 {
        self.slope_nm * pixel_number + self.offset_nm
    }
}

/// `ln σ_N = slope·ln N + intercept` for the photoelectron spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSigmaLaw {
    pub slope: f64,
    pub intercept: f64,
}

impl GainSigmaLaw {
    #[inline]
    pub fn sigma(&self, photons: f64) -> f64 {
        (self.slope * photons.ln() + self.intercept).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    pub pixel_count: usize,
    pub dispersion: Dispersion,
    pub dark_mean: f64,
    pub dark_sigma: f64,
    /// Inclusive dark-count support `[lo, hi]`.
    pub dark_support: [u32; 2],
    pub quantum_efficiency: f64,
    pub gain_sigma_law: GainSigmaLaw,
    /// Registered electron counts are clipped at this value.
    pub saturation_threshold: u32,
    /// Photon-number standard deviation in units of `√n̄`.
    pub photon_number_sigma_factor: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            pixel_count: 1920,
            dispersion: Dispersion { slope_nm: 0.007331, offset_nm: 789.5 },
            dark_mean: 94.16,
            dark_sigma: 2.03,
            dark_support: [58, 140],
            quantum_efficiency: 0.313,
            gain_sigma_law: GainSigmaLaw { slope: 0.5908, intercept: -1.9986 },
            saturation_threshold: 1200,
            photon_number_sigma_factor: 4.0,
        }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Detector(msg));
        if self.pixel_count == 0 {
            return fail("pixel_count must be at least 1".into());
        }
        if !(self.quantum_efficiency > 0.0 && self.quantum_efficiency <= 1.0) {
            return fail(format!("quantum efficiency {} outside (0, 1]", self.quantum_efficiency));
        }
        let [lo, hi] = self.dark_support;
        if lo > hi {
            return fail(format!("dark support [{lo}, {hi}] is empty"));
        }
        if self.saturation_threshold <= hi {
            return fail(format!(
                "saturation threshold {} must exceed the dark support bound {hi}",
                self.saturation_threshold
            ));
        }
        if !(self.dark_sigma.is_finite() && self.dark_sigma > 0.0 && self.dark_mean.is_finite()) {
            return fail("dark noise needs a finite mean and positive sigma".into());
        }
        if !(self.photon_number_sigma_factor.is_finite() && self.photon_number_sigma_factor > 0.0) {
            return fail("photon-number sigma factor must be positive".into());
        }
        if !(self.gain_sigma_law.slope.is_finite() && self.gain_sigma_law.intercept.is_finite()) {
            return fail("gain sigma law must be finite".into());
        }
        let d = self.dispersion;
        if !(d.slope_nm.is_finite() && d.slope_nm != 0.0 && d.offset_nm.is_finite()) {
            return fail("dispersion slope must be finite and nonzero".into());
        }
        let first = d.wavelength(0.5);
        let last = d.wavelength(self.pixel_count as f64 + 0.5);
        if !(first > 0.0 && last > 0.0) {
            return fail("dispersion map yields non-positive wavelengths".into());
        }
        Ok(())
    }

    /// Centre wavelength of the pixel at zero-based `index`.
    pub fn pixel_wavelength(&self, index: usize) -> f64 {
        self.dispersion.wavelength(index as f64 + 1.0)
    }

    /// Momentum interval `(p_lo, p_hi)` collected by pixel `index`.
    pub fn pixel_momentum_range(&self, index: usize) -> (f64, f64) {
        let centre = self.pixel_wavelength(index);
        let half = 0.5 * self.dispersion.slope_nm.abs();
        (2.0 * PI / (centre + half), 2.0 * PI / (centre - half))
    }

    /// Width in momentum of one pixel at the given wavelength.
    pub fn pixel_momentum_width(&self, wavelength_nm: f64) -> f64 {
        2.0 * PI * self.dispersion.slope_nm.abs() / (wavelength_nm * wavelength_nm)
    }

    pub fn threshold(&self) -> usize {
        self.saturation_threshold as usize
    }

    /// Hex SHA-256 over the canonical JSON form of the model.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("detector model serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
