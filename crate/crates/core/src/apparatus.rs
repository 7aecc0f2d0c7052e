use std::sync::{Arc, OnceLock};

use crate::detector_model::{DetectorModel, ResponseTable};
use crate::error::ModelError;
use crate::spectral_meter::{
    coupling_strength, PhysicalConfig, PixelBinning, SchemeConfig, Spectrum, Transmission, CELLS_PER_PIXEL,
};

/// Optics plus detector, with the spectrum grid and pixel overlaps built
/// once and the detector response table loaded on first use.
#[derive(Debug)]
pub struct Apparatus {
    phys: PhysicalConfig,
    det: DetectorModel,
    spectrum: Spectrum,
    binning: PixelBinning,
    table: OnceLock<Arc<ResponseTable>>,
}

impl Apparatus {
    pub fn new(phys: PhysicalConfig, det: DetectorModel) -> Result<Self, ModelError> {
        phys.validate()?;
        det.validate()?;
        let step = det.pixel_momentum_width(phys.central_wavelength_nm) / CELLS_PER_PIXEL;
        let spectrum = Spectrum::gaussian(&phys, step)?;
        let binning = PixelBinning::new(&spectrum, &det);
        Ok(Self { phys, det, spectrum, binning, table: OnceLock::new() })
    }

    pub fn phys(&self) -> &PhysicalConfig {
        &self.phys
    }

    pub fn det(&self) -> &DetectorModel {
        &self.det
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn pixel_count(&self) -> usize {
        self.det.pixel_count
    }

    pub fn table(&self) -> &Arc<ResponseTable> {
        self.table.get_or_init(|| ResponseTable::shared(&self.det))
    }

    pub fn transmission(&self, scheme: &SchemeConfig) -> Result<Transmission, ModelError> {
        scheme.transmission(self.spectrum.p0())
    }

    /// Expected photons per pixel into `out` for field `b_tesla` and `n`
    /// incident photons.
    pub fn counts_into(&self, t: &Transmission, b_tesla: f64, n: f64, out: &mut [f64], scratch: &mut Vec<f64>) {
        let k = coupling_strength(b_tesla, &self.phys).nm();
        self.binning.fill_counts(&self.spectrum, t, k, n, out, scratch);
    }

    pub fn expected_counts(&self, scheme: &SchemeConfig, b_tesla: f64, n: f64) -> Result<Vec<f64>, ModelError> {
        let t = self.transmission(scheme)?;
        let mut out = vec![0.0; self.pixel_count()];
        self.counts_into(&t, b_tesla, n, &mut out, &mut Vec::new());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_meter::expected_pixel_counts;

    #[test]
    fn counts_match_the_standalone_operation() {
        let app = Apparatus::new(PhysicalConfig::default(), DetectorModel::default()).unwrap();
        let cfg = SchemeConfig::biased_weak(0.2, 5, 9e4);
        let a = app.expected_counts(&cfg, 0.028, 1e9).unwrap();
        let b = expected_pixel_counts(1e9, 0.028, &cfg, app.phys(), app.det()).unwrap();
        assert_eq!(a, b.counts);
    }

    #[test]
    fn invalid_parts_are_rejected() {
        let det = DetectorModel { quantum_efficiency: 2.0, ..Default::default() };
        assert!(Apparatus::new(PhysicalConfig::default(), det).is_err());
    }
}
