use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::pmf::{sample_dark, sample_photoelectrons, sample_photon_number};
use super::DetectorModel;

/// One simulated readout: registered electron count per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub electrons: Vec<u16>,
}

/// Mixes a base seed with a stream index into an independent 64-bit seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw one registered count for a pixel with mean photon number `mean`.
pub fn sample_pixel<R: rand::Rng + ?Sized>(mean: f64, det: &DetectorModel, rng: &mut R) -> u16 {
    let photons = sample_photon_number(mean, det, rng);
    let electrons = sample_photoelectrons(photons, det, rng);
    let dark = sample_dark(det, rng);
    (electrons + dark).min(det.threshold()) as u16
}

/// Simulate frame number `index` of a pool. The result depends only on
/// `(counts, det, seed, index)`.
pub fn sample_frame(counts: &[f64], det: &DetectorModel, seed: u64, index: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index));
    Frame { electrons: counts.iter().map(|&n| sample_pixel(n, det, &mut rng)).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector_model::{pixel_outcome_pmf, OutcomePmf};

    fn empirical(mean: f64, draws: usize, seed: u64) -> OutcomePmf {
        let det = DetectorModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hist = vec![0.0; det.threshold() + 1];
        for _ in 0..draws {
            hist[sample_pixel(mean, &det, &mut rng) as usize] += 1.0;
        }
        hist.iter_mut().for_each(|h| *h /= draws as f64);
        OutcomePmf::from_probs(hist)
    }

    #[test]
    fn dark_frames_average_the_dark_mean() {
        let det = DetectorModel::default();
        let frame = sample_frame(&vec![0.0; 1920], &det, 7, 0);
        let mean = frame.electrons.iter().map(|&e| e as f64).sum::<f64>() / 1920.0;
        assert!((mean - 94.16).abs() < 0.5, "{mean}");
        assert!(frame.electrons.iter().all(|&e| (58..=140).contains(&e)));
    }

    #[test]
    fn frames_are_deterministic_per_seed_and_index() {
        let det = DetectorModel::default();
        let counts: Vec<f64> = (0..64).map(|i| i as f64 * 30.0).collect();
        assert_eq!(sample_frame(&counts, &det, 3, 5), sample_frame(&counts, &det, 3, 5));
        assert_ne!(sample_frame(&counts, &det, 3, 5), sample_frame(&counts, &det, 3, 6));
        assert_ne!(sample_frame(&counts, &det, 4, 5), sample_frame(&counts, &det, 3, 5));
    }

    #[test]
    fn bright_pixels_saturate() {
        let det = DetectorModel::default();
        let frame = sample_frame(&[1e7, 5e4], &det, 1, 0);
        assert_eq!(frame.electrons, vec![1200, 1200]);
    }

    #[test]
    fn empirical_law_matches_outcome_pmf() {
        let det = DetectorModel::default();
        for (i, mean) in [0.0, 10.0, 300.0, 3500.0, 2e5].into_iter().enumerate() {
            let tv = empirical(mean, 100_000, 11 + i as u64).total_variation(&pixel_outcome_pmf(mean, &det));
            assert!(tv < 0.02, "n̄ = {mean}: tv {tv}");
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
