//! Meter spectrum, system-meter coupling and the post-selected momentum
//! distributions of the three read-out schemes.
//!
//! Momenta are in nm⁻¹ and lengths in nm throughout, so that `k·p` is a
//! phase in radians.

mod binning;

pub use binning::{expected_pixel_counts, ExpectedCounts, PixelBinning, SPILL_WARNING_FRACTION};

use std::f64::consts::{FRAC_PI_4, LN_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::special::normal_interval;

/// Meter spectra are sampled over `p0 ± GRID_HALF_WIDTH_SIGMAS·Δp`.
pub const GRID_HALF_WIDTH_SIGMAS: f64 = 6.0;

/// Number of spectrum cells per detector pixel width.
pub const CELLS_PER_PIXEL: f64 = 8.0;

/// `|k|·p0` above which the weak-coupling approximations stop being reliable.
pub const WEAK_COUPLING_LIMIT: f64 = 0.1;

/// Optical constants of the light source and the Faraday crystal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConfig {
    /// Central wavelength λ0 in nm.
    pub central_wavelength_nm: f64,
    /// Full width at half maximum of the source spectrum, in nm.
    pub fwhm_nm: f64,
    /// Verdet constant in rad·T⁻¹·m⁻¹.
    pub verdet_constant: f64,
    /// Crystal length in m.
    pub crystal_length_m: f64,
}

impl Default for PhysicalConfig {
    fn default() -> Self {
        Self {
            central_wavelength_nm: 796.0,
            fwhm_nm: 12.0,
            verdet_constant: 70.35,
            crystal_length_m: 0.01,
        }
    }
}

impl PhysicalConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("central_wavelength_nm", self.central_wavelength_nm),
            ("fwhm_nm", self.fwhm_nm),
            ("verdet_constant", self.verdet_constant),
            ("crystal_length_m", self.crystal_length_m),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::Physical(format!(
                    "{name} must be finite and positive, got {value}"
                )));
            }
        }
        if self.fwhm_nm >= self.central_wavelength_nm {
            return Err(ModelError::Physical(
                "fwhm must be smaller than the central wavelength".into(),
            ));
        }
        Ok(())
    }

    /// Central photon momentum `p0 = 2π/λ0` in nm⁻¹.
    pub fn p0(&self) -> f64 {
        2.0 * PI / self.central_wavelength_nm
    }

    /// Momentum spread Δp of the Gaussian meter, treating the FWHM as a
    /// Gaussian width in wavelength and mapping it through `dp/dλ` at λ0.
    pub fn delta_p(&self) -> f64 {
        let sigma_lambda = self.fwhm_nm / (2.0 * (2.0 * LN_2).sqrt());
        2.0 * PI / (self.central_wavelength_nm * self.central_wavelength_nm) * sigma_lambda
    }

    /// Rate `dk/dB` in nm·T⁻¹.
    pub fn coupling_per_tesla(&self) -> f64 {
        self.verdet_constant * self.crystal_length_m / self.p0()
    }
}

/// Discretized meter spectrum |ψ(p)|² on a uniform momentum grid.
///
/// Each grid point stands for a cell of width [`Spectrum::step`] centred on
/// it, and its weight is the probability mass of that cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    p0: f64,
    delta_p: f64,
    step: f64,
    momenta: Vec<f64>,
    weights: Vec<f64>,
}

impl Spectrum {
    /// Gaussian meter centred on `p0` with spread Δp, spanning `p0 ± 6Δp`
    /// with the given cell width.
    pub fn gaussian(phys: &PhysicalConfig, step: f64) -> Result<Self, ModelError> {
        phys.validate()?;
        let p0 = phys.p0();
        let delta_p = phys.delta_p();
        if !(step.is_finite() && step > 0.0 && step < delta_p) {
            return Err(ModelError::Spectrum(format!(
                "grid step {step} must be positive and finer than Δp = {delta_p}"
            )));
        }
        let half = (GRID_HALF_WIDTH_SIGMAS * delta_p / step).ceil() as usize;
        let mut momenta = Vec::with_capacity(2 * half + 1);
        let mut weights = Vec::with_capacity(2 * half + 1);
        for i in 0..=2 * half {
            let p = p0 + (i as f64 - half as f64) * step;
            let lo = (p - 0.5 * step - p0) / delta_p;
            let hi = (p + 0.5 * step - p0) / delta_p;
            momenta.push(p);
            weights.push(normal_interval(lo, hi));
        }
        Self::from_table(p0, delta_p, momenta, weights)
    }

    /// Arbitrary weight table on a uniform, strictly increasing momentum
    /// grid. Weights are renormalized to unit mass.
    pub fn from_table(
        p0: f64,
        delta_p: f64,
        momenta: Vec<f64>,
        mut weights: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if momenta.len() != weights.len() || momenta.is_empty() {
            return Err(ModelError::Spectrum(
                "momenta and weights must be non-empty and of equal length".into(),
            ));
        }
        if !(p0 > 0.0 && delta_p > 0.0 && delta_p < p0 / 10.0) {
            return Err(ModelError::Spectrum(format!(
                "need 0 < Δp < p0/10, got p0 = {p0}, Δp = {delta_p}"
            )));
        }
        let step = if momenta.len() > 1 {
            (momenta[momenta.len() - 1] - momenta[0]) / (momenta.len() - 1) as f64
        } else {
            delta_p
        };
        for pair in momenta.windows(2) {
            let gap = pair[1] - pair[0];
            if !(gap > 0.0) || (gap - step).abs() > 1e-6 * step {
                return Err(ModelError::Spectrum(
                    "momentum grid must be uniform and strictly increasing".into(),
                ));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ModelError::Spectrum("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(ModelError::Spectrum("weights carry no mass".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { p0, delta_p, step, momenta, weights })
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn delta_p(&self) -> f64 {
        self.delta_p
    }

    /// Cell width in nm⁻¹.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn momenta(&self) -> &[f64] {
        &self.momenta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.momenta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.momenta.is_empty()
    }

    /// Lower edge of the first cell.
    pub(crate) fn lower_edge(&self) -> f64 {
        self.momenta[0] - 0.5 * self.step
    }
}

/// Read-out scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Conventional measurement: balanced projection, single output port.
    #[serde(rename = "CM")]
    Conventional,
    /// Standard weak measurement.
    #[serde(rename = "SWM")]
    StandardWeak,
    /// Biased weak measurement.
    #[serde(rename = "BWM")]
    BiasedWeak,
}

impl Scheme {
    pub fn tag(self) -> &'static str {
        match self {
            Scheme::Conventional => "CM",
            Scheme::StandardWeak => "SWM",
            Scheme::BiasedWeak => "BWM",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

fn infinite() -> f64 {
    f64::INFINITY
}

/// A read-out scheme together with its post-selection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    /// Post-selection angle ε in rad. Ignored for CM.
    #[serde(default)]
    pub epsilon: f64,
    /// Bias order m in `p0·β + ε = mπ`. Only used by BWM.
    #[serde(default)]
    pub bias_order: u32,
    /// Polarizer extinction ratio; `inf` for an ideal polarizer.
    #[serde(default = "infinite")]
    pub extinction_ratio: f64,
}

impl SchemeConfig {
    pub fn conventional() -> Self {
        Self {
            scheme: Scheme::Conventional,
            epsilon: 0.0,
            bias_order: 0,
            extinction_ratio: f64::INFINITY,
        }
    }

    pub fn standard_weak(epsilon: f64, extinction_ratio: f64) -> Self {
        Self { scheme: Scheme::StandardWeak, epsilon, bias_order: 0, extinction_ratio }
    }

    pub fn biased_weak(epsilon: f64, bias_order: u32, extinction_ratio: f64) -> Self {
        Self { scheme: Scheme::BiasedWeak, epsilon, bias_order, extinction_ratio }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.extinction_ratio > 1.0) {
            return Err(ModelError::Scheme(format!(
                "extinction ratio must exceed 1, got {}",
                self.extinction_ratio
            )));
        }
        if self.scheme != Scheme::Conventional
            && !(self.epsilon > 0.0 && self.epsilon < FRAC_PI_4)
        {
            return Err(ModelError::Scheme(format!(
                "{} needs 0 < ε < π/4, got {}",
                self.scheme, self.epsilon
            )));
        }
        Ok(())
    }

    /// Post-selection transmission as a function of momentum, for this
    /// scheme at meter centre `p0`.
    pub fn transmission(&self, p0: f64) -> Result<Transmission, ModelError> {
        self.validate()?;
        let leak = match self.scheme {
            Scheme::Conventional => 0.0,
            _ if self.extinction_ratio.is_infinite() => 0.0,
            _ => 1.0 / self.extinction_ratio,
        };
        let bias = match self.scheme {
            Scheme::BiasedWeak => bias_phase(self.epsilon, self.bias_order, p0)?,
            _ => 0.0,
        };
        Ok(Transmission { scheme: self.scheme, epsilon: self.epsilon, bias, leak })
    }
}

/// Pointwise post-selection factor `D(p)/w(p)` of one scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    scheme: Scheme,
    epsilon: f64,
    bias: f64,
    leak: f64,
}

impl Transmission {
    /// Bias delay β in nm (zero except for BWM).
    pub fn bias(&self) -> f64 {
        self.bias
    }

    #[inline]
    pub fn at(&self, p: f64, k: f64) -> f64 {
        let s = match self.scheme {
            Scheme::Conventional => (FRAC_PI_4 + p * k).sin(),
            Scheme::StandardWeak => (k * p + self.epsilon).sin(),
            Scheme::BiasedWeak => (p * (self.bias + k) + self.epsilon).sin(),
        };
        let s2 = s * s;
        if self.leak == 0.0 {
            s2
        } else {
            (1.0 - self.leak) * s2 + 0.5 * self.leak
        }
    }
}

/// System-meter coupling strength k, in nm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct CouplingStrength(pub f64);

impl CouplingStrength {
    pub fn nm(self) -> f64 {
        self.0
    }

    /// Whether `|k|·p0` stays inside the weak-coupling regime.
    pub fn is_weak(self, p0: f64) -> bool {
        (self.0 * p0).abs() <= WEAK_COUPLING_LIMIT
    }
}

/// `k = V·B·l / p0`, in nm.
pub fn coupling_strength(b_tesla: f64, phys: &PhysicalConfig) -> CouplingStrength {
    CouplingStrength(b_tesla * phys.coupling_per_tesla())
}

/// Bias delay β (nm) satisfying `p0·β + ε = mπ`.
pub fn bias_phase(epsilon: f64, bias_order: u32, p0: f64) -> Result<f64, ModelError> {
    if bias_order == 0 && epsilon == 0.0 {
        return Err(ModelError::DegenerateBias);
    }
    Ok((bias_order as f64 * PI - epsilon) / p0)
}

/// Unnormalized post-selected density `D(p)` on the spectrum grid, as
/// `(p, density)` pairs.
pub fn unnormalized_distribution(
    scheme: &SchemeConfig,
    k: CouplingStrength,
    spectrum: &Spectrum,
) -> Result<Vec<(f64, f64)>, ModelError> {
    let t = scheme.transmission(spectrum.p0())?;
    Ok(spectrum
        .momenta()
        .iter()
        .zip(spectrum.weights())
        .map(|(&p, &w)| (p, t.at(p, k.0) * w))
        .collect())
}

/// Leading-order mean momentum shift of the post-selected meter.
///
/// The BWM form is `2k·p0²/(mπ − ε)`; for `m = 0` it reduces to
/// `−2k·p0²/ε`, whose magnitude is the usual `2k·p0²/ε`.
pub fn mean_shift_analytic(
    scheme: &SchemeConfig,
    k: CouplingStrength,
    spectrum: &Spectrum,
) -> f64 {
    let dp2 = spectrum.delta_p() * spectrum.delta_p();
    let k = k.0;
    match scheme.scheme {
        Scheme::Conventional => 2.0 * k * dp2,
        Scheme::StandardWeak => 2.0 * k * dp2 / scheme.epsilon.tan(),
        Scheme::BiasedWeak => {
            let p0 = spectrum.p0();
            2.0 * k * p0 * p0 / (scheme.bias_order as f64 * PI - scheme.epsilon)
        }
    }
}

/// Closed-form CM shift before the small-coupling approximation.
pub fn conventional_shift_exact(k: CouplingStrength, p0: f64, delta_p: f64) -> f64 {
    let k = k.0;
    let dp2 = delta_p * delta_p;
    2.0 * k * dp2 * (2.0 * k * p0).cos() / ((2.0 * k * p0).sin() + (2.0 * k * k * dp2).exp())
}

/// Mean momentum shift by direct quadrature on the grid: `E_k[p] − E_0[p]`.
pub fn mean_shift_numeric(
    scheme: &SchemeConfig,
    k: CouplingStrength,
    spectrum: &Spectrum,
) -> Result<f64, ModelError> {
    let t = scheme.transmission(spectrum.p0())?;
    let mean = |coupling: f64| -> Result<f64, ModelError> {
        let mut mass = 0.0;
        let mut first = 0.0;
        for (&p, &w) in spectrum.momenta().iter().zip(spectrum.weights()) {
            let d = t.at(p, coupling) * w;
            mass += d;
            // centred on p0 to keep the difference of means well conditioned
            first += (p - spectrum.p0()) * d;
        }
        if !(mass > f64::MIN_POSITIVE) {
            return Err(ModelError::Extinguished);
        }
        Ok(first / mass)
    };
    Ok(mean(k.0)? - mean(0.0)?)
}

/// Total post-selected probability `Σ D(p)` over the grid.
pub fn post_selected_fraction(
    scheme: &SchemeConfig,
    k: CouplingStrength,
    spectrum: &Spectrum,
) -> Result<f64, ModelError> {
    let t = scheme.transmission(spectrum.p0())?;
    Ok(spectrum
        .momenta()
        .iter()
        .zip(spectrum.weights())
        .map(|(&p, &w)| t.at(p, k.0) * w)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn phys() -> PhysicalConfig {
        PhysicalConfig::default()
    }

    fn spectrum() -> Spectrum {
        // pixel width in p at 796 nm, divided by 8
        let p = phys();
        let step = 2.0 * PI * 0.007331 / (796.0 * 796.0) / CELLS_PER_PIXEL;
        Spectrum::gaussian(&p, step).unwrap()
    }

    #[test]
    fn coupling_strength_examples() {
        let p = phys();
        assert_eq!(coupling_strength(0.0, &p).nm(), 0.0);
        let oracle = 70.35 * 0.028 * 0.01 * 796.0 / (2.0 * PI);
        assert_relative_eq!(coupling_strength(0.028, &p).nm(), oracle, max_relative = 1e-12);
        assert_relative_eq!(coupling_strength(0.028, &p).nm(), 2.4958, max_relative = 2e-4);
        assert_relative_eq!(coupling_strength(1.43e-7, &p).nm(), oracle * 1.43e-7 / 0.028, max_relative = 1e-12);
        assert!(coupling_strength(-0.028, &p).nm() < 0.0);
        assert!(coupling_strength(0.028, &p).is_weak(p.p0()));
    }

    #[test]
    fn bias_phase_examples() {
        let p0 = phys().p0();
        assert_relative_eq!(bias_phase(PI, 1, p0).unwrap(), 0.0, epsilon = 1e-12);
        let oracle = (5.0 * PI - 0.2) * 796.0 / (2.0 * PI);
        assert_relative_eq!(bias_phase(0.2, 5, p0).unwrap(), oracle, max_relative = 1e-12);
        assert_relative_eq!(bias_phase(0.2, 5, p0).unwrap(), 1964.58, max_relative = 1e-4);
        assert_relative_eq!(bias_phase(0.2, 0, p0).unwrap(), -25.338, max_relative = 1e-4);
        assert_eq!(bias_phase(0.0, 0, p0), Err(ModelError::DegenerateBias));
    }

    #[test]
    fn spectrum_is_normalized_and_increasing() {
        let s = spectrum();
        let total: f64 = s.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(s.momenta().windows(2).all(|w| w[1] > w[0]));
        assert!(s.delta_p() < s.p0() / 10.0);
        assert_relative_eq!(s.p0(), 2.0 * PI / 796.0, max_relative = 1e-15);
    }

    #[test]
    fn spectrum_table_rejects_bad_input() {
        assert!(Spectrum::from_table(1.0, 0.01, vec![1.0, 0.9], vec![0.5, 0.5]).is_err());
        assert!(Spectrum::from_table(1.0, 0.2, vec![0.9, 1.0], vec![0.5, 0.5]).is_err());
        assert!(Spectrum::from_table(1.0, 0.01, vec![0.9, 1.0], vec![-0.5, 1.5]).is_err());
        assert!(Spectrum::from_table(1.0, 0.01, vec![0.9, 1.0, 1.3], vec![1.0; 3]).is_err());
    }

    #[test]
    fn scheme_validation() {
        assert!(SchemeConfig::standard_weak(0.0, 1e5).validate().is_err());
        assert!(SchemeConfig::standard_weak(0.9, 1e5).validate().is_err());
        assert!(SchemeConfig::biased_weak(0.2, 5, 1.0).validate().is_err());
        assert!(SchemeConfig::biased_weak(0.2, 5, f64::INFINITY).validate().is_ok());
        // epsilon is ignored for CM
        let mut cm = SchemeConfig::conventional();
        cm.epsilon = 7.0;
        assert!(cm.validate().is_ok());
    }

    #[test]
    fn conventional_density_at_zero_coupling_is_half() {
        let s = spectrum();
        let d = unnormalized_distribution(&SchemeConfig::conventional(), CouplingStrength(0.0), &s)
            .unwrap();
        for ((_, dens), w) in d.iter().zip(s.weights()) {
            assert_relative_eq!(*dens, 0.5 * w, max_relative = 1e-12);
        }
    }

    #[test]
    fn biased_extinction_at_p0() {
        let s = spectrum();
        let cfg = SchemeConfig::biased_weak(0.2, 5, f64::INFINITY);
        let t = cfg.transmission(s.p0()).unwrap();
        assert!(t.at(s.p0(), 0.0) < 1e-24);
        let d = unnormalized_distribution(&cfg, CouplingStrength(0.0), &s).unwrap();
        let (imin, _) = d
            .iter()
            .zip(s.weights())
            .map(|((_, dens), w)| dens / w)
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        assert!((s.momenta()[imin] - s.p0()).abs() <= s.step());
    }

    #[test]
    fn swm_fraction_tracks_shifted_angle() {
        // at k = 2.4958 nm the phase kp0 ≈ 0.0197 is not negligible next to ε
        let s = spectrum();
        let cfg = SchemeConfig::standard_weak(0.2, f64::INFINITY);
        let k = coupling_strength(0.028, &phys());
        let frac = post_selected_fraction(&cfg, k, &s).unwrap();
        let theta = k.nm() * s.p0() + 0.2;
        let oracle = 0.5 * (1.0 - (2.0 * theta).cos() * (-2.0 * (k.nm() * s.delta_p()).powi(2)).exp());
        assert_relative_eq!(frac, oracle, max_relative = 1e-9);
        let f0 = post_selected_fraction(&cfg, CouplingStrength(0.0), &s).unwrap();
        assert!((f0 - 0.2f64.sin().powi(2)).abs() < 1e-6);
    }

    #[test]
    fn extinguished_distribution_is_an_error() {
        // unit momentum makes the dark-port phase vanish exactly
        let s = Spectrum::from_table(1.0, 0.01, vec![1.0], vec![1.0]).unwrap();
        let cfg = SchemeConfig::biased_weak(0.2, 0, f64::INFINITY);
        assert_eq!(
            mean_shift_numeric(&cfg, CouplingStrength(0.0), &s),
            Err(ModelError::Extinguished)
        );
    }

    #[test]
    fn zero_coupling_gives_zero_shift() {
        let s = spectrum();
        for cfg in [
            SchemeConfig::conventional(),
            SchemeConfig::standard_weak(0.2, f64::INFINITY),
            SchemeConfig::biased_weak(0.2, 0, f64::INFINITY),
        ] {
            assert_eq!(mean_shift_analytic(&cfg, CouplingStrength(0.0), &s), 0.0);
            assert_eq!(mean_shift_numeric(&cfg, CouplingStrength(0.0), &s).unwrap(), 0.0);
        }
    }

    #[test]
    fn analytic_ratios() {
        let s = spectrum();
        let k = CouplingStrength(1e-3);
        let cm = mean_shift_analytic(&SchemeConfig::conventional(), k, &s);
        let swm = mean_shift_analytic(&SchemeConfig::standard_weak(0.2, f64::INFINITY), k, &s);
        let bwm = mean_shift_analytic(&SchemeConfig::biased_weak(0.2, 0, f64::INFINITY), k, &s);
        assert_relative_eq!(swm / cm, 4.933, max_relative = 1e-3);
        let ratio = (bwm / swm).abs();
        let p_ratio = (s.p0() / s.delta_p()).powi(2);
        // tan ε / ε ≈ 1.0135 at ε = 0.2
        assert_relative_eq!(ratio, p_ratio * 0.2f64.tan() / 0.2, max_relative = 1e-12);
        assert!(ratio > p_ratio);
    }

    #[test]
    fn swm_numeric_matches_cot_form_at_small_coupling() {
        let s = spectrum();
        let cfg = SchemeConfig::standard_weak(0.2, f64::INFINITY);
        let k = CouplingStrength(1e-4 / s.p0());
        let num = mean_shift_numeric(&cfg, k, &s).unwrap();
        let ana = mean_shift_analytic(&cfg, k, &s);
        assert!(((num - ana) / ana).abs() < 1e-3, "num {num} ana {ana}");
    }

    #[test]
    fn cm_exact_form_matches_quadrature_at_strong_coupling() {
        let s = spectrum();
        let k = CouplingStrength(0.3 / s.p0());
        let num = mean_shift_numeric(&SchemeConfig::conventional(), k, &s).unwrap();
        let exact = conventional_shift_exact(k, s.p0(), s.delta_p());
        let approx = mean_shift_analytic(&SchemeConfig::conventional(), k, &s);
        assert!(((num - exact) / exact).abs() < 1e-3);
        assert!(((num - approx) / approx).abs() > 0.1);
    }
}
