//! Photon-pair source: a continuous-wave pump drives degenerate collinear
//! down-conversion, and narrow bandpass filters define the single-photon
//! bandwidth.
//!
//! The joint spectral intensity is modeled as a Gaussian that separates in
//! the sum and difference frequencies,
//!
//! ```text
//! |f(w_s, w_i)|^2  ∝  exp(-(w_s + w_i - w_p)^2 / (2 sigma_p^2))
//!                   * exp(-(w_s - w_i)^2       / (2 sigma_-^2))
//! ```
//!
//! `sigma_p` is the pump linewidth (the long pump coherence time makes it
//! tiny) and `sigma_-` is set by the bandpass filters, which are far wider
//! than the pump line yet far narrower than the bare phasematching bandwidth,
//! so the filter alone fixes the difference-frequency spread. Coherence
//! times follow the crate-wide `tau = 1/sigma` convention (see
//! [`crate::units`]); the regime every experiment here lives in is
//!
//! ```text
//! tau_single  <<  interferometer delay  <<  tau_pump
//! ```
//!
//! Emission is a Poisson process: inter-pair gaps are exponential with mean
//! `1 / pair_rate`.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ── spectral model ──────────────────────────────────────────────────────────

/// Gaussian joint spectrum, separable in sum and difference frequency.
/// All fields are angular frequencies (rad/s); widths are standard
/// deviations of the intensity distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointSpectrum {
    /// Pump center frequency `w_p`.
    pub pump_center: f64,
    /// Std dev of the sum frequency `w_s + w_i` (pump linewidth), `sigma_p`.
    pub pump_linewidth: f64,
    /// Center of the signal marginal; `w_p / 2` for degenerate pairs.
    pub signal_center: f64,
    /// Std dev of the difference frequency `w_s - w_i`, `sigma_-`,
    /// set by the bandpass filters.
    pub difference_bandwidth: f64,
}

impl JointSpectrum {
    /// Degenerate spectrum from explicit widths.
    pub fn new(pump_center: f64, pump_linewidth: f64, difference_bandwidth: f64) -> Result<Self> {
        let s = Self {
            pump_center,
            pump_linewidth,
            signal_center: pump_center / 2.0,
            difference_bandwidth,
        };
        s.validate()?;
        Ok(s)
    }

    /// Build from bench quantities: pump wavelength and coherence length,
    /// plus the center wavelength and width of the bandpass filters on the
    /// down-converted light. Uses `sigma_p = c / L_coh` and
    /// `sigma_- = c * delta_lambda / lambda^2`, the reciprocals of the usual
    /// coherence-time expressions.
    pub fn from_bench(
        pump_wavelength_m: f64,
        pump_coherence_length_m: f64,
        filter_center_m: f64,
        filter_width_m: f64,
    ) -> Result<Self> {
        if pump_wavelength_m <= 0.0 || filter_center_m <= 0.0 {
            return Err(Error::InvalidConfig(
                "wavelengths must be positive".into(),
            ));
        }
        if pump_coherence_length_m <= 0.0 || filter_width_m <= 0.0 {
            return Err(Error::NonPhysicalSpectrum(
                "coherence length and filter width must be positive".into(),
            ));
        }
        let sigma_p = crate::units::SPEED_OF_LIGHT / pump_coherence_length_m;
        let sigma_diff =
            crate::units::SPEED_OF_LIGHT * filter_width_m / (filter_center_m * filter_center_m);
        Self::new(
            crate::units::angular_frequency(pump_wavelength_m),
            sigma_p,
            sigma_diff,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pump_center > 0.0 && self.pump_center.is_finite()) {
            return Err(Error::InvalidConfig("pump_center must be positive".into()));
        }
        if !(self.pump_linewidth > 0.0) || !(self.difference_bandwidth > 0.0) {
            return Err(Error::NonPhysicalSpectrum(
                "spectral widths must be positive".into(),
            ));
        }
        if (self.signal_center - self.pump_center / 2.0).abs() > 1e-6 * self.pump_center {
            return Err(Error::InvalidConfig(
                "only degenerate spectra are supported: signal_center must equal pump_center/2"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Joint spectral intensity at `(w_s, w_i)`, normalized to 1 at the peak.
    /// Symmetric under exchange of its arguments.
    pub fn intensity(&self, w_s: f64, w_i: f64) -> f64 {
        let du = (w_s + w_i - self.pump_center) / self.pump_linewidth;
        let dv = (w_s - w_i) / self.difference_bandwidth;
        (-0.5 * (du * du + dv * dv)).exp()
    }

    /// Draw one frequency pair from the joint intensity.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let sum = Normal::new(self.pump_center, self.pump_linewidth)
            .expect("validated width")
            .sample(rng);
        let diff = Normal::new(0.0, self.difference_bandwidth)
            .expect("validated width")
            .sample(rng);
        ((sum + diff) / 2.0, (sum - diff) / 2.0)
    }
}

/// Coherence times under the `tau = 1/sigma` convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceTimes {
    /// Single-photon coherence time, `1 / difference_bandwidth` (s).
    pub tau_single: f64,
    /// Pump coherence time, `1 / pump_linewidth` (s).
    pub tau_pump: f64,
}

/// Coherence times of a spectrum; rejects zero/negative widths, which would
/// describe a non-physical (infinitely coherent or empty) spectrum.
pub fn coherence_times(spectrum: &JointSpectrum) -> Result<CoherenceTimes> {
    if !(spectrum.difference_bandwidth > 0.0) || !(spectrum.pump_linewidth > 0.0) {
        return Err(Error::NonPhysicalSpectrum(
            "zero spectral width has no finite coherence time".into(),
        ));
    }
    Ok(CoherenceTimes {
        tau_single: 1.0 / spectrum.difference_bandwidth,
        tau_pump: 1.0 / spectrum.pump_linewidth,
    })
}

// ── emission ────────────────────────────────────────────────────────────────

/// How the pair is separated into the two interferometer inputs.
///
/// A type-II crystal emits orthogonally polarized photons that a polarizing
/// splitter routes deterministically. A type-I crystal emits identically
/// polarized photons, so the input splitter can only separate them
/// probabilistically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    Probabilistic,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    /// Mean emitted pair rate (pairs/s).
    pub pair_rate: f64,
    pub spectrum: JointSpectrum,
    pub splitting: Splitting,
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pair_rate > 0.0 && self.pair_rate.is_finite()) {
            return Err(Error::InvalidConfig("pair_rate must be positive".into()));
        }
        self.spectrum.validate()
    }
}

/// One emitted pair: emission time plus per-photon frequencies and
/// polarizations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonPair {
    /// Emission time (s) on the source's clock.
    pub emission_time: f64,
    pub signal_freq: f64,
    pub idler_freq: f64,
    pub signal_pol: Polarization,
    pub idler_pol: Polarization,
}

/// Stateful sampler: keeps the running emission clock so successive pairs
/// have exponentially distributed gaps.
#[derive(Debug, Clone)]
pub struct PairSource {
    config: SourceConfig,
    clock: f64,
    gap: Exp<f64>,
}

impl PairSource {
    pub fn new(config: SourceConfig) -> Result<Self> {
        config.validate()?;
        let gap = Exp::new(config.pair_rate)
            .map_err(|_| Error::InvalidConfig("pair_rate must be positive".into()))?;
        Ok(Self {
            config,
            clock: 0.0,
            gap,
        })
    }

    pub fn config(&self) -> &SourceConfig {
        &self.config
    }

    /// Time (s) of the most recent emission, 0.0 before the first.
    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Draw the next pair. Emission times are strictly increasing.
    pub fn next_pair<R: Rng + ?Sized>(&mut self, rng: &mut R) -> PhotonPair {
        self.clock += self.gap.sample(rng);
        let (signal_freq, idler_freq) = self.config.spectrum.sample(rng);
        let (signal_pol, idler_pol) = match self.config.splitting {
            // Type-I: both photons leave the crystal identically polarized.
            Splitting::Probabilistic => (Polarization::H, Polarization::H),
            // Type-II: orthogonal polarizations.
            Splitting::Deterministic => (Polarization::H, Polarization::V),
        };
        PhotonPair {
            emission_time: self.clock,
            signal_freq,
            idler_freq,
            signal_pol,
            idler_pol,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SEED: u64 = 0x5eed_0001;

    fn bench_spectrum() -> JointSpectrum {
        // 405 nm pump with > 25 m coherence length; 3.1 nm filters at 810 nm.
        JointSpectrum::from_bench(405e-9, 25.0, 810e-9, 3.1e-9).unwrap()
    }

    fn bench_config(rate: f64) -> SourceConfig {
        SourceConfig {
            pair_rate: rate,
            spectrum: bench_spectrum(),
            splitting: Splitting::Probabilistic,
        }
    }

    // ── coherence-time arithmetic ───────────────────────────────────────────

    #[test]
    fn coherence_times_match_closed_forms() {
        let times = coherence_times(&bench_spectrum()).unwrap();
        // Closed forms evaluated independently of the constructor's path:
        // tau_single = lambda^2/(c dl), tau_pump = L/c.
        let tau_single = 810e-9_f64 * 810e-9 / (crate::units::SPEED_OF_LIGHT * 3.1e-9);
        let tau_pump = 25.0 / crate::units::SPEED_OF_LIGHT;
        assert!((times.tau_single - tau_single).abs() / tau_single < 1e-12);
        assert!((times.tau_pump - tau_pump).abs() / tau_pump < 1e-12);
        // Magnitudes: ~0.706 ps and ~83.4 ns.
        assert!((times.tau_single - 0.70597e-12).abs() < 0.005e-12, "{times:?}");
        assert!((times.tau_pump - 83.39e-9).abs() < 0.05e-9, "{times:?}");
    }

    #[test]
    fn coherence_scale_separation_spans_five_decades() {
        let times = coherence_times(&bench_spectrum()).unwrap();
        let ratio = times.tau_pump / times.tau_single;
        assert!(
            (1e4..1e7).contains(&ratio),
            "tau_pump/tau_single = {ratio:.3e}, expected ~1e5"
        );
        // The 2 ns interferometer delay sits well inside the window.
        let delay = 2e-9;
        assert!(delay / times.tau_single > 1e3);
        assert!(delay / times.tau_pump < 0.05);
    }

    #[test]
    fn zero_bandwidth_is_rejected() {
        let mut s = bench_spectrum();
        s.difference_bandwidth = 0.0;
        assert!(matches!(
            coherence_times(&s),
            Err(Error::NonPhysicalSpectrum(_))
        ));
        assert!(JointSpectrum::new(s.pump_center, 0.0, 1e12).is_err());
    }

    // ── spectral sampling ───────────────────────────────────────────────────

    #[test]
    fn sampled_widths_match_configured_sigmas() {
        let spectrum = bench_spectrum();
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let n = 1_000_000usize;
        let (mut sum_mean, mut sum_m2) = (0.0f64, 0.0f64);
        let (mut diff_mean, mut diff_m2) = (0.0f64, 0.0f64);
        for k in 1..=n {
            let (ws, wi) = spectrum.sample(&mut rng);
            let (s, d) = (ws + wi, ws - wi);
            // Welford updates keep the accumulators well conditioned.
            let ds = s - sum_mean;
            sum_mean += ds / k as f64;
            sum_m2 += ds * (s - sum_mean);
            let dd = d - diff_mean;
            diff_mean += dd / k as f64;
            diff_m2 += dd * (d - diff_mean);
        }
        let sum_std = (sum_m2 / (n - 1) as f64).sqrt();
        let diff_std = (diff_m2 / (n - 1) as f64).sqrt();

        // Energy conservation: mean sum frequency = pump center within 5 SE.
        let se_sum = spectrum.pump_linewidth / (n as f64).sqrt();
        assert!(
            (sum_mean - spectrum.pump_center).abs() < 5.0 * se_sum,
            "sum mean off by {:.3e} rad/s (5 SE = {:.3e})",
            (sum_mean - spectrum.pump_center).abs(),
            5.0 * se_sum
        );

        // Std-dev of a Gaussian sample has SE ~ sigma/sqrt(2N).
        let se_std = |sigma: f64| 5.0 * sigma / (2.0 * n as f64).sqrt();
        assert!((sum_std - spectrum.pump_linewidth).abs() < se_std(spectrum.pump_linewidth));
        assert!(
            (diff_std - spectrum.difference_bandwidth).abs()
                < se_std(spectrum.difference_bandwidth)
        );

        // Empirical coherence time from the sampled difference spread agrees
        // with the closed form to well under a percent.
        let tau_emp = 1.0 / diff_std;
        let tau_cf = coherence_times(&spectrum).unwrap().tau_single;
        assert!(
            (tau_emp - tau_cf).abs() / tau_cf < 0.01,
            "empirical tau_single {tau_emp:.4e} vs closed form {tau_cf:.4e}"
        );

        // Exchange symmetry: the difference distribution is centered on zero.
        let se_diff = spectrum.difference_bandwidth / (n as f64).sqrt();
        assert!(diff_mean.abs() < 5.0 * se_diff);
    }

    #[test]
    fn marginals_agree_under_exchange() {
        // Signal and idler marginals must be statistically identical.
        let spectrum = bench_spectrum();
        let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0x11);
        let n = 200_000usize;
        let (mut ms, mut mi, m2s, m2i);
        ms = 0.0;
        mi = 0.0;
        let mut vs = 0.0f64;
        let mut vi = 0.0f64;
        for k in 1..=n {
            let (ws, wi) = spectrum.sample(&mut rng);
            let ds = ws - ms;
            ms += ds / k as f64;
            vs += ds * (ws - ms);
            let di = wi - mi;
            mi += di / k as f64;
            vi += di * (wi - mi);
        }
        m2s = (vs / (n - 1) as f64).sqrt();
        m2i = (vi / (n - 1) as f64).sqrt();
        let marginal_sigma = 0.5
            * (spectrum.pump_linewidth.powi(2) + spectrum.difference_bandwidth.powi(2)).sqrt();
        let se_mean = marginal_sigma / (n as f64).sqrt();
        assert!((ms - mi).abs() < 5.0 * std::f64::consts::SQRT_2 * se_mean);
        let se_std = marginal_sigma / (2.0 * n as f64).sqrt();
        assert!((m2s - m2i).abs() < 5.0 * std::f64::consts::SQRT_2 * se_std);
    }

    #[test]
    fn intensity_is_exchange_symmetric_and_peaks_at_degeneracy() {
        let s = bench_spectrum();
        let w0 = s.signal_center;
        for (a, b) in [
            (w0 + 3e11, w0 - 5e11),
            (w0 - 1e12, w0 + 2e12),
            (w0, w0 + 7e11),
        ] {
            assert_eq!(s.intensity(a, b), s.intensity(b, a));
        }
        assert_eq!(s.intensity(w0, w0), 1.0);
        assert!(s.intensity(w0 + 1e12, w0) < 1.0);
    }

    // ── emission statistics ─────────────────────────────────────────────────

    #[test]
    fn emission_gaps_are_exponential() {
        let rate = 1e6;
        let mut src = PairSource::new(bench_config(rate)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0x22);
        let n = 200_000usize;
        let mut last = 0.0;
        let mut mean_gap = 0.0;
        let mut var_acc = 0.0;
        let mut gaps = Vec::with_capacity(n);
        for _ in 0..n {
            let p = src.next_pair(&mut rng);
            assert!(p.emission_time > last, "times must strictly increase");
            gaps.push(p.emission_time - last);
            last = p.emission_time;
        }
        for g in &gaps {
            mean_gap += g;
        }
        mean_gap /= n as f64;
        for g in &gaps {
            var_acc += (g - mean_gap) * (g - mean_gap);
        }
        let std_gap = (var_acc / (n - 1) as f64).sqrt();
        // Exponential: mean = std = 1/rate.
        let se = 1.0 / rate / (n as f64).sqrt();
        assert!((mean_gap - 1.0 / rate).abs() < 5.0 * se, "mean gap {mean_gap:.3e}");
        assert!((std_gap - 1.0 / rate).abs() < 10.0 * se, "std gap {std_gap:.3e}");
    }

    #[test]
    fn counts_in_fixed_windows_are_poisson() {
        // Index of dispersion (variance/mean of window counts) = 1.
        let rate = 1e5;
        let window = 1e-3;
        let windows = 4000usize;
        let mut src = PairSource::new(bench_config(rate)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0x33);
        let mut counts = vec![0u32; windows];
        let horizon = windows as f64 * window;
        loop {
            let p = src.next_pair(&mut rng);
            if p.emission_time >= horizon {
                break;
            }
            counts[(p.emission_time / window) as usize] += 1;
        }
        let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / windows as f64;
        let var = counts
            .iter()
            .map(|&c| (c as f64 - mean) * (c as f64 - mean))
            .sum::<f64>()
            / (windows - 1) as f64;
        let dispersion = var / mean;
        // Var of the dispersion estimate ~ 2/(windows-1).
        let tol = 5.0 * (2.0 / (windows as f64 - 1.0)).sqrt();
        assert!(
            (dispersion - 1.0).abs() < tol,
            "index of dispersion {dispersion:.4} (tol {tol:.4})"
        );
    }

    #[test]
    fn splitting_sets_polarizations() {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let mut cfg = bench_config(1e5);
        let p = PairSource::new(cfg).unwrap().next_pair(&mut rng);
        assert_eq!((p.signal_pol, p.idler_pol), (Polarization::H, Polarization::H));
        cfg.splitting = Splitting::Deterministic;
        let p = PairSource::new(cfg).unwrap().next_pair(&mut rng);
        assert_eq!((p.signal_pol, p.idler_pol), (Polarization::H, Polarization::V));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = bench_config(0.0);
        assert!(PairSource::new(cfg).is_err());
        cfg.pair_rate = 1e5;
        cfg.spectrum.pump_linewidth = -1.0;
        assert!(PairSource::new(cfg).is_err());
    }
}
