//! Scenario execution: bench descriptions in TOML, rate budgeting, the
//! event-level acquisition loop, and on-disk run artifacts.
//!
//! A scenario bundles one bench configuration: source, optional scattering
//! sample, analyzer pair, detectors, and a scan plan. Running it simulates
//! every phase step at the event level and records, per step, the windowed
//! coincidence count and the singles totals, then reduces the scans to a
//! contrast value and a witness verdict, exactly the way the tabletop
//! acquisition software would.
//!
//! The loop splits the emitted pairs by what survives the sample. Pairs
//! whose photons both survive are simulated photon by photon (they carry
//! the interference). Photons whose partner was absorbed can never produce
//! a true coincidence, only flat singles and accidentals, so their Poisson
//! stream is thinned analytically to detected tags; timing jitter on a
//! uniformly distributed stream is distribution-invariant and is therefore
//! omitted for them. Dark counts and dead time act on the merged stream.
//!
//! Everything is seeded: each (scan, step) gets its own counter-derived
//! substream, so a run is reproducible byte for byte regardless of how the
//! steps are ordered or resumed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, combine_scans, contrast, format_parenthetical, witness, ContrastResult, FringeScan,
    FringeStep, WitnessVerdict,
};
use crate::error::{Error, Result};
use crate::interferometer::{
    analytic_coincidence_rate, regime_check, Channel, DriftTrajectory, Interferometer,
    InterferometerConfig, PhaseDriftModel,
};
use crate::medium::{OpticalMedium, Slab};
use crate::source::{JointSpectrum, PhotonPair, Polarization, SourceConfig, Splitting};
use crate::tagger::{
    build_histogram, detect, quantize_ticks, read_tags_file, write_tags_file, DetectorSpec,
    TagRecord, TagStream,
};
use crate::units;

// ── defaults ────────────────────────────────────────────────────────────────

pub const DEFAULT_SCAN_STEPS: usize = 180;
pub const DEFAULT_SCAN_COUNT: usize = 3;
pub const DEFAULT_PHASE_START_RAD: f64 = 0.0;
pub const DEFAULT_PHASE_END_RAD: f64 = std::f64::consts::FRAC_PI_2;
pub const DEFAULT_INTEGRATION_S: f64 = 5.0;
pub const DEFAULT_WINDOW_HALFWIDTH_PS: f64 = 340.0;
pub const DEFAULT_HISTOGRAM_BIN_PS: f64 = 4.0;
pub const DEFAULT_MAX_LAG_NS: f64 = 10.0;
pub const DEFAULT_SINGLES_TOLERANCE: f64 = 0.05;
/// Runs whose expected peak window count per step falls below this are
/// declared infeasible instead of being simulated.
pub const DEFAULT_FEASIBILITY_FLOOR: f64 = 30.0;

// ── scenario schema ─────────────────────────────────────────────────────────

/// One bench description, as written in a scenario TOML file. Values use
/// bench units (nm, ns, ps, um); `resolve` converts to SI configs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    /// Display name for report rows; defaults to `name`.
    #[serde(default)]
    pub sample: Option<String>,
    pub seed: u64,
    pub source: SourceSection,
    #[serde(default)]
    pub medium: Option<MediumSection>,
    pub interferometer: InterferometerSection,
    #[serde(default)]
    pub detectors: DetectorsSection,
    #[serde(default)]
    pub losses: LossesSection,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub window: WindowSection,
    #[serde(default)]
    pub outputs: OutputsSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub pump_wavelength_nm: f64,
    pub pump_coherence_length_m: f64,
    pub filter_center_nm: f64,
    pub filter_width_nm: f64,
    pub pair_rate_hz: f64,
    pub splitting: Splitting,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSection {
    /// Key into the media table.
    pub name: String,
    pub thickness_um: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferometerSection {
    pub delay_a_ns: f64,
    pub delay_b_ns: f64,
    #[serde(default)]
    pub phase_b_rad: f64,
    #[serde(default)]
    pub waveplate_misalignment_rad: f64,
    #[serde(default = "one")]
    pub arm_transmission_a: f64,
    #[serde(default = "one")]
    pub arm_transmission_b: f64,
    #[serde(default)]
    pub drift: DriftSection,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub random_walk_rad_per_sqrt_s: f64,
    pub correlation_time_s: f64,
}

impl Default for DriftSection {
    fn default() -> Self {
        let d = PhaseDriftModel::disabled();
        Self {
            random_walk_rad_per_sqrt_s: d.random_walk_rad_per_sqrt_s,
            correlation_time_s: d.correlation_time_s,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorsSection {
    #[serde(default)]
    pub a: DetectorSection,
    #[serde(default)]
    pub b: DetectorSection,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub efficiency: f64,
    pub jitter_ps: f64,
    pub dead_time_ns: f64,
    pub dark_rate_hz: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorSpec::default();
        Self {
            efficiency: d.efficiency,
            jitter_ps: d.jitter_std_s * 1e12,
            dead_time_ns: d.dead_time_s * 1e9,
            dark_rate_hz: d.dark_rate_hz,
        }
    }
}

/// Fixed per-photon transmission outside sample and analyzers: fiber
/// coupling, filters, and sample-holder optics.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossesSection {
    pub extra_signal: f64,
    pub extra_idler: f64,
}

impl Default for LossesSection {
    fn default() -> Self {
        Self {
            extra_signal: 1.0,
            extra_idler: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_scans")]
    pub scans: usize,
    #[serde(default = "default_phase_start")]
    pub phase_start_rad: f64,
    #[serde(default = "default_phase_end")]
    pub phase_end_rad: f64,
    #[serde(default = "default_integration")]
    pub integration_s: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            steps: DEFAULT_SCAN_STEPS,
            scans: DEFAULT_SCAN_COUNT,
            phase_start_rad: DEFAULT_PHASE_START_RAD,
            phase_end_rad: DEFAULT_PHASE_END_RAD,
            integration_s: DEFAULT_INTEGRATION_S,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    #[serde(default = "default_window_halfwidth")]
    pub halfwidth_ps: f64,
    #[serde(default = "default_bin")]
    pub bin_ps: f64,
    #[serde(default = "default_max_lag")]
    pub max_lag_ns: f64,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self {
            halfwidth_ps: DEFAULT_WINDOW_HALFWIDTH_PS,
            bin_ps: DEFAULT_HISTOGRAM_BIN_PS,
            max_lag_ns: DEFAULT_MAX_LAG_NS,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    #[serde(default)]
    pub save_tags: bool,
    #[serde(default = "default_singles_tolerance")]
    pub singles_tolerance: f64,
    #[serde(default = "default_floor")]
    pub feasibility_floor_counts: f64,
}

impl Default for OutputsSection {
    fn default() -> Self {
        Self {
            save_tags: false,
            singles_tolerance: DEFAULT_SINGLES_TOLERANCE,
            feasibility_floor_counts: DEFAULT_FEASIBILITY_FLOOR,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_steps() -> usize {
    DEFAULT_SCAN_STEPS
}
fn default_scans() -> usize {
    DEFAULT_SCAN_COUNT
}
fn default_phase_start() -> f64 {
    DEFAULT_PHASE_START_RAD
}
fn default_phase_end() -> f64 {
    DEFAULT_PHASE_END_RAD
}
fn default_integration() -> f64 {
    DEFAULT_INTEGRATION_S
}
fn default_window_halfwidth() -> f64 {
    DEFAULT_WINDOW_HALFWIDTH_PS
}
fn default_bin() -> f64 {
    DEFAULT_HISTOGRAM_BIN_PS
}
fn default_max_lag() -> f64 {
    DEFAULT_MAX_LAG_NS
}
fn default_singles_tolerance() -> f64 {
    DEFAULT_SINGLES_TOLERANCE
}
fn default_floor() -> f64 {
    DEFAULT_FEASIBILITY_FLOOR
}

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

pub fn load_scenario(text: &str) -> Result<Scenario> {
    let s: Scenario = toml::from_str(text)?;
    if s.schema_version != SCENARIO_SCHEMA_VERSION {
        return Err(Error::Scenario(format!(
            "unsupported schema_version {} (this build reads {SCENARIO_SCHEMA_VERSION})",
            s.schema_version
        )));
    }
    Ok(s)
}

// ── resolved configuration ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPlan {
    pub steps: usize,
    pub scans: usize,
    pub phase_start_rad: f64,
    pub phase_end_rad: f64,
    pub integration_s: f64,
}

impl ScanPlan {
    pub fn validate(&self) -> Result<()> {
        if self.steps < analysis::MIN_SCAN_STEPS {
            return Err(Error::InvalidConfig(format!(
                "scan needs at least {} steps",
                analysis::MIN_SCAN_STEPS
            )));
        }
        if self.scans == 0 {
            return Err(Error::InvalidConfig("at least one scan".into()));
        }
        if !(self.phase_end_rad > self.phase_start_rad) {
            return Err(Error::InvalidConfig(
                "phase range must be increasing".into(),
            ));
        }
        if !(self.integration_s > 0.0 && self.integration_s.is_finite()) {
            return Err(Error::InvalidConfig(
                "integration time must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Phase setting of step `k` (end-exclusive grid).
    pub fn phase(&self, step: usize) -> f64 {
        self.phase_start_rad
            + (self.phase_end_rad - self.phase_start_rad) * step as f64 / self.steps as f64
    }
}

/// Fully resolved, SI-unit run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub sample: String,
    pub thickness_um: f64,
    pub source: SourceConfig,
    pub slab: Slab,
    pub interferometer: InterferometerConfig,
    pub detector_a: DetectorSpec,
    pub detector_b: DetectorSpec,
    pub extra_signal: f64,
    pub extra_idler: f64,
    pub plan: ScanPlan,
    pub window_halfwidth_ticks: i64,
    pub histogram_bin_ticks: i64,
    pub max_lag_ticks: i64,
    pub singles_tolerance: f64,
    pub feasibility_floor: f64,
    pub save_tags: bool,
    pub seed: u64,
}

/// Command-line overrides applied on top of a scenario.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub scans: Option<usize>,
    pub integration_s: Option<f64>,
    pub save_tags: bool,
    pub feasibility_floor: Option<f64>,
}

impl Scenario {
    /// Resolve against a media table into SI configs. A zero-thickness or
    /// absent medium canonicalizes to the no-sample slab, so those two
    /// spellings produce identical runs.
    pub fn resolve(&self, media: &BTreeMap<String, OpticalMedium>) -> Result<RunConfig> {
        let spectrum = JointSpectrum::from_bench(
            self.source.pump_wavelength_nm * 1e-9,
            self.source.pump_coherence_length_m,
            self.source.filter_center_nm * 1e-9,
            self.source.filter_width_nm * 1e-9,
        )?;
        let source = SourceConfig {
            pair_rate: self.source.pair_rate_hz,
            spectrum,
            splitting: self.source.splitting,
        };
        source.validate()?;

        let (slab, thickness_um) = match &self.medium {
            None => (Slab::none(), 0.0),
            Some(m) if m.thickness_um == 0.0 => (Slab::none(), 0.0),
            Some(m) => {
                let medium = media.get(&m.name).ok_or_else(|| {
                    Error::Scenario(format!("medium `{}` is not in the media table", m.name))
                })?;
                if !(m.thickness_um > 0.0) {
                    return Err(Error::InvalidConfig(
                        "medium thickness must be non-negative".into(),
                    ));
                }
                (
                    Slab::new(medium.clone(), m.thickness_um * 1e-6)?,
                    m.thickness_um,
                )
            }
        };

        let i = &self.interferometer;
        let interferometer = InterferometerConfig {
            delay_a_s: i.delay_a_ns * 1e-9,
            delay_b_s: i.delay_b_ns * 1e-9,
            phase_a_rad: 0.0,
            phase_b_rad: i.phase_b_rad,
            waveplate_misalignment_rad: i.waveplate_misalignment_rad,
            arm_transmission_a: i.arm_transmission_a,
            arm_transmission_b: i.arm_transmission_b,
            splitting: self.source.splitting,
            drift: PhaseDriftModel {
                random_walk_rad_per_sqrt_s: i.drift.random_walk_rad_per_sqrt_s,
                correlation_time_s: i.drift.correlation_time_s,
            },
        };
        interferometer.validate()?;

        let det = |d: &DetectorSection| -> Result<DetectorSpec> {
            let spec = DetectorSpec {
                efficiency: d.efficiency,
                jitter_std_s: d.jitter_ps * 1e-12,
                dead_time_s: d.dead_time_ns * 1e-9,
                dark_rate_hz: d.dark_rate_hz,
            };
            spec.validate()?;
            Ok(spec)
        };
        let detector_a = det(&self.detectors.a)?;
        let detector_b = det(&self.detectors.b)?;

        for extra in [self.losses.extra_signal, self.losses.extra_idler] {
            if !(extra > 0.0 && extra <= 1.0) {
                return Err(Error::InvalidConfig(
                    "extra losses must be transmissions in (0, 1]".into(),
                ));
            }
        }

        let plan = ScanPlan {
            steps: self.scan.steps,
            scans: self.scan.scans,
            phase_start_rad: self.scan.phase_start_rad,
            phase_end_rad: self.scan.phase_end_rad,
            integration_s: self.scan.integration_s,
        };
        plan.validate()?;

        let window_halfwidth_ticks =
            (self.window.halfwidth_ps * 1e-12 / units::TICK_SECONDS).round() as i64;
        let histogram_bin_ticks =
            ((self.window.bin_ps * 1e-12 / units::TICK_SECONDS).round() as i64).max(1);
        let max_lag_ticks = (self.window.max_lag_ns * 1e-9 / units::TICK_SECONDS).round() as i64;
        if window_halfwidth_ticks < 0
            || max_lag_ticks < (window_halfwidth_ticks + 1) * histogram_bin_ticks
        {
            return Err(Error::InvalidConfig(
                "histogram lag range must cover the coincidence window".into(),
            ));
        }

        let sample = self.sample.clone().unwrap_or_else(|| self.name.clone());
        if sample.contains(',') || sample.contains('\n') {
            return Err(Error::Scenario(
                "sample names must not contain commas or newlines".into(),
            ));
        }

        Ok(RunConfig {
            name: self.name.clone(),
            sample,
            thickness_um,
            source,
            slab,
            interferometer,
            detector_a,
            detector_b,
            extra_signal: self.losses.extra_signal,
            extra_idler: self.losses.extra_idler,
            plan,
            window_halfwidth_ticks,
            histogram_bin_ticks,
            max_lag_ticks,
            singles_tolerance: self.outputs.singles_tolerance,
            feasibility_floor: self.outputs.feasibility_floor_counts,
            save_tags: self.outputs.save_tags,
            seed: self.seed,
        })
    }
}

impl RunConfig {
    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(steps) = o.steps {
            self.plan.steps = steps;
        }
        if let Some(scans) = o.scans {
            self.plan.scans = scans;
        }
        if let Some(t) = o.integration_s {
            self.plan.integration_s = t;
        }
        if o.save_tags {
            self.save_tags = true;
        }
        if let Some(floor) = o.feasibility_floor {
            self.feasibility_floor = floor;
        }
    }

    /// Same bench with a different sample thickness (0 = no sample).
    pub fn with_thickness(&self, medium: Option<&OpticalMedium>, thickness_um: f64) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.thickness_um = thickness_um;
        cfg.slab = if thickness_um == 0.0 {
            Slab::none()
        } else {
            let m = medium.ok_or_else(|| {
                Error::Scenario("a thickness sweep needs a medium in the scenario".into())
            })?;
            Slab::new(m.clone(), thickness_um * 1e-6)?
        };
        Ok(cfg)
    }
}

// ── rate budget ─────────────────────────────────────────────────────────────

/// Analytic expectations for a resolved configuration, the same arithmetic
/// the acquisition loop realizes stochastically. Used for feasibility
/// gating and for fitting scenario parameters to measured rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBudget {
    /// Per-photon transmission, sample times fixed losses.
    pub transmission_signal: f64,
    pub transmission_idler: f64,
    /// Observed singles rates (after dead time, including darks).
    pub singles_a_hz: f64,
    pub singles_b_hz: f64,
    /// Pairs with both photons past the sample and fixed losses.
    pub surviving_pair_hz: f64,
    /// Accidental rate inside the coincidence window.
    pub accidental_window_hz: f64,
    /// Window rate at the fringe crest (signal plus accidentals).
    pub peak_window_hz: f64,
    pub peak_counts_per_step: f64,
    /// Interference visibility of the analyzer settings (envelope).
    pub oscillation_visibility: f64,
    /// Mean fringe phase at zero waveplate settings.
    pub carrier_phase: f64,
    /// Contrast the extremum estimator should recover, after accidental
    /// dilution.
    pub expected_contrast: f64,
    /// Fraction of true coincidences the window keeps under timing jitter.
    pub jitter_capture: f64,
    /// Continuous lag span covered by the window's histogram bins (s).
    pub window_span_s: f64,
}

/// Per-photon detection probability toward one channel: analyzer arm,
/// output-port marginal (1/2), erasure retention averaged over the scanned
/// phase, and detector efficiency.
fn channel_gain(cfg: &RunConfig, channel: Channel) -> f64 {
    let (arm, eff, phase) = match channel {
        Channel::A => (
            cfg.interferometer.arm_transmission_a,
            cfg.detector_a.efficiency,
            None, // A is scanned; use the scan-averaged retention
        ),
        Channel::B => (
            cfg.interferometer.arm_transmission_b,
            cfg.detector_b.efficiency,
            Some(cfg.interferometer.phase_b_rad),
        ),
    };
    let m = (2.0 * cfg.interferometer.waveplate_misalignment_rad).sin();
    let retention = match phase {
        _ if m == 0.0 => 1.0,
        None => 1.0 / (1.0 + m),
        Some(phi) => (1.0 + m * phi.sin()) / (1.0 + m),
    };
    arm * 0.5 * retention * eff
}

/// Lag span (s) the integration window actually covers: the histogram
/// keeps whole bins, so the span is a whole number of bins.
fn window_span_s(halfwidth_ticks: i64, bin_ticks: i64, max_lag_ticks: i64) -> f64 {
    let min_bin = (-max_lag_ticks).div_euclid(bin_ticks);
    let max_bin = max_lag_ticks.div_euclid(bin_ticks);
    let mut bins = 0i64;
    for i in min_bin..=max_bin {
        // Bin center in doubled ticks, as in the window integration.
        let center2 = 2 * i * bin_ticks + bin_ticks - 1;
        if center2.abs() <= 2 * halfwidth_ticks {
            bins += 1;
        }
    }
    bins as f64 * bin_ticks as f64 * units::TICK_SECONDS
}

/// Observed rate of a Poisson tag stream after non-paralyzable dead time.
fn dead_time_observed(rate_hz: f64, dead_s: f64) -> f64 {
    rate_hz / (1.0 + rate_hz * dead_s)
}

pub fn expected_rates(cfg: &RunConfig) -> Result<RateBudget> {
    let spectrum = &cfg.source.spectrum;
    let lambda_s = units::wavelength(spectrum.signal_center);
    let t_signal = cfg.slab.transmission(lambda_s) * cfg.extra_signal;
    let t_idler = cfg.slab.transmission(lambda_s) * cfg.extra_idler;
    let r = cfg.source.pair_rate;

    let gain_a = channel_gain(cfg, Channel::A);
    let gain_b = channel_gain(cfg, Channel::B);

    // Source photons headed at each channel before detection, by splitting
    // geometry: wavelength-split sends signal to A and idler to B; the
    // crossed geometry routes half of each species to each station.
    let (flux_a, flux_b) = match cfg.source.splitting {
        Splitting::Probabilistic => (r * t_signal, r * t_idler),
        Splitting::Deterministic => {
            let f = 0.5 * (r * t_signal + r * t_idler);
            (f, f)
        }
    };
    let singles_in_a = flux_a * gain_a + cfg.detector_a.dark_rate_hz;
    let singles_in_b = flux_b * gain_b + cfg.detector_b.dark_rate_hz;
    let singles_a_hz = dead_time_observed(singles_in_a, cfg.detector_a.dead_time_s);
    let singles_b_hz = dead_time_observed(singles_in_b, cfg.detector_b.dead_time_s);

    let osc = analytic_coincidence_rate(
        spectrum,
        cfg.interferometer.delay_a_s,
        cfg.interferometer.delay_b_s,
        0.0,
        cfg.interferometer.phase_b_rad,
    )?;

    let span = window_span_s(
        cfg.window_halfwidth_ticks,
        cfg.histogram_bin_ticks,
        cfg.max_lag_ticks,
    );
    let jitter_var = cfg.detector_a.jitter_std_s.powi(2)
        + cfg.detector_b.jitter_std_s.powi(2)
        + units::TICK_SECONDS.powi(2) / 6.0;
    let jitter_capture = libm::erf(span / 2.0 / (jitter_var.sqrt() * std::f64::consts::SQRT_2));

    let surviving_pair_hz = r * t_signal * t_idler;
    // Interfering (both-short or both-long) pairs land in the window; the
    // joint port statistics put 1/8 (1 + V cos) of surviving pairs into a
    // cross-channel coincidence there.
    let pair_keep = dead_time_observed(singles_in_a, cfg.detector_a.dead_time_s) / singles_in_a
        * (dead_time_observed(singles_in_b, cfg.detector_b.dead_time_s) / singles_in_b);
    let peak_signal_hz = surviving_pair_hz
        * cfg.interferometer.arm_transmission_a
        * cfg.interferometer.arm_transmission_b
        * retention_product(cfg)
        * 0.125
        * (1.0 + osc.visibility)
        * cfg.detector_a.efficiency
        * cfg.detector_b.efficiency
        * jitter_capture
        * pair_keep;
    let accidental_window_hz = singles_a_hz * singles_b_hz * span;
    let peak_window_hz = peak_signal_hz + accidental_window_hz;

    // Accidentals add equally to crest and trough, diluting the contrast:
    // with signal mean S and floor B, c = V S / (S + B).
    let signal_mean_hz = peak_signal_hz / (1.0 + osc.visibility);
    let expected_contrast = if signal_mean_hz + accidental_window_hz > 0.0 {
        osc.visibility * signal_mean_hz / (signal_mean_hz + accidental_window_hz)
    } else {
        0.0
    };

    Ok(RateBudget {
        transmission_signal: t_signal,
        transmission_idler: t_idler,
        singles_a_hz,
        singles_b_hz,
        surviving_pair_hz,
        accidental_window_hz,
        peak_window_hz,
        peak_counts_per_step: peak_window_hz * cfg.plan.integration_s,
        oscillation_visibility: osc.visibility,
        carrier_phase: osc.phase,
        expected_contrast,
        jitter_capture,
        window_span_s: span,
    })
}

fn retention_product(cfg: &RunConfig) -> f64 {
    let m = (2.0 * cfg.interferometer.waveplate_misalignment_rad).sin();
    if m == 0.0 {
        1.0
    } else {
        let rb = (1.0 + m * cfg.interferometer.phase_b_rad.sin()) / (1.0 + m);
        (1.0 / (1.0 + m)) * rb
    }
}

// ── fitting scenarios to measured rates ─────────────────────────────────────

/// Measured bench rates a scenario should reproduce.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTargets {
    pub singles_a_hz: f64,
    pub singles_b_hz: f64,
    /// Windowed coincidence rate at the fringe crest (incl. accidentals).
    pub peak_window_hz: f64,
    /// Contrast the run should recover.
    pub contrast: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedSource {
    pub pair_rate_hz: f64,
    pub extra_signal: f64,
    pub extra_idler: f64,
    /// Analyzer-B delay retuned so the envelope visibility matches the
    /// target contrast after accidental dilution.
    pub delay_b_s: f64,
    /// Analyzer-B waveplate setting that parks the carrier at a fringe
    /// minimum for phase zero, so scans starting there open and close on
    /// a minimum.
    pub phase_b_rad: f64,
    pub oscillation_visibility: f64,
}

/// Invert the rate budget: given measured singles, peak coincidences, and
/// a target contrast, recover the emitted pair rate, the fixed per-photon
/// losses, and the analyzer-B delay detuning. Exact inverse of
/// `expected_rates` for the wavelength-split geometry.
pub fn fit_extra_losses(cfg: &RunConfig, targets: &RateTargets) -> Result<FittedSource> {
    if cfg.source.splitting != Splitting::Probabilistic {
        return Err(Error::InvalidConfig(
            "rate fitting assumes the wavelength-split geometry".into(),
        ));
    }
    if !(targets.contrast > 0.0 && targets.contrast < 1.0) {
        return Err(Error::InvalidConfig(
            "target contrast must lie in (0, 1)".into(),
        ));
    }

    let spectrum = &cfg.source.spectrum;
    let lambda_s = units::wavelength(spectrum.signal_center);
    let t_med = cfg.slab.transmission(lambda_s);

    // Undo dead time and darks on the singles.
    let undo = |obs: f64, spec: &DetectorSpec| -> Result<f64> {
        let ceiling = 1.0 / spec.dead_time_s.max(f64::MIN_POSITIVE);
        if !(obs > 0.0) || obs * spec.dead_time_s >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "singles target {obs} is outside the observable range (max {ceiling:.3e})"
            )));
        }
        Ok(obs / (1.0 - obs * spec.dead_time_s))
    };
    let in_a = undo(targets.singles_a_hz, &cfg.detector_a)?;
    let in_b = undo(targets.singles_b_hz, &cfg.detector_b)?;
    let src_a = in_a - cfg.detector_a.dark_rate_hz;
    let src_b = in_b - cfg.detector_b.dark_rate_hz;
    if src_a <= 0.0 || src_b <= 0.0 {
        return Err(Error::InvalidConfig(
            "singles targets are below the dark-count floor".into(),
        ));
    }
    // alpha = R * extra_signal, beta = R * extra_idler.
    let alpha = src_a / (t_med * channel_gain(cfg, Channel::A));
    let beta = src_b / (t_med * channel_gain(cfg, Channel::B));

    let span = window_span_s(
        cfg.window_halfwidth_ticks,
        cfg.histogram_bin_ticks,
        cfg.max_lag_ticks,
    );
    let accidental = targets.singles_a_hz * targets.singles_b_hz * span;
    let peak_signal = targets.peak_window_hz - accidental;
    if peak_signal <= 0.0 {
        return Err(Error::InvalidConfig(
            "peak coincidence target does not exceed the accidental floor".into(),
        ));
    }

    // Envelope visibility producing the target contrast after dilution:
    // c = V S/(S + B) with S = C/(1 + V) gives V = c (C + B)/(C - c B).
    let c = targets.contrast;
    let denom = peak_signal - c * accidental;
    if denom <= 0.0 {
        return Err(Error::InvalidConfig(
            "target contrast is unreachable under the accidental floor".into(),
        ));
    }
    let visibility = c * (peak_signal + accidental) / denom;
    if visibility >= 1.0 {
        return Err(Error::InvalidConfig(format!(
            "target contrast needs envelope visibility {visibility:.4} >= 1"
        )));
    }

    let delay_b_s = detune_for_visibility(cfg, visibility)?;
    // Park the carrier at a minimum with the analyzer-B waveplate: total
    // mean phase w_p (da + db)/2 + phase_b = pi (mod 2pi). The delay knob
    // is left free for the envelope; a sub-period delay nudge would trade
    // several 1e-4 of visibility for the same effect.
    let phase_b_rad = crate::interferometer::wrap_phase(
        std::f64::consts::PI
            - spectrum.pump_center * (cfg.interferometer.delay_a_s + delay_b_s) / 2.0,
    );

    // Solve the peak equation for the pair rate.
    let jitter_var = cfg.detector_a.jitter_std_s.powi(2)
        + cfg.detector_b.jitter_std_s.powi(2)
        + units::TICK_SECONDS.powi(2) / 6.0;
    let jitter_capture = libm::erf(span / 2.0 / (jitter_var.sqrt() * std::f64::consts::SQRT_2));
    let pair_keep = (1.0 - targets.singles_a_hz * cfg.detector_a.dead_time_s)
        * (1.0 - targets.singles_b_hz * cfg.detector_b.dead_time_s);
    let m_pair = cfg.interferometer.arm_transmission_a
        * cfg.interferometer.arm_transmission_b
        * retention_product(cfg)
        * 0.125
        * (1.0 + visibility)
        * cfg.detector_a.efficiency
        * cfg.detector_b.efficiency
        * jitter_capture
        * pair_keep;
    let pair_rate_hz = alpha * beta * t_med * t_med * m_pair / peak_signal;
    let extra_signal = alpha / pair_rate_hz;
    let extra_idler = beta / pair_rate_hz;
    for extra in [extra_signal, extra_idler] {
        if !(extra > 0.0 && extra <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "fit needs per-photon transmission {extra:.4}, outside (0, 1]"
            )));
        }
    }

    Ok(FittedSource {
        pair_rate_hz,
        extra_signal,
        extra_idler,
        delay_b_s,
        phase_b_rad,
        oscillation_visibility: visibility,
    })
}

/// Detune analyzer B's delay so the envelope visibility equals `target`.
/// The visibility is set by the delay imbalance against the single-photon
/// coherence time; the pump-coherence factor barely moves over the femto-
/// second detuning involved.
fn detune_for_visibility(cfg: &RunConfig, target: f64) -> Result<f64> {
    let spectrum = &cfg.source.spectrum;
    let da = cfg.interferometer.delay_a_s;
    let sp = spectrum.pump_linewidth;
    let sm = spectrum.difference_bandwidth;
    // Gaussian envelope: V = exp(-sp^2 (da+db)^2/8) exp(-sm^2 (da-db)^2/8).
    let pump_factor = (-(sp * (2.0 * da)).powi(2) / 8.0).exp();
    if target >= pump_factor {
        return Err(Error::InvalidConfig(format!(
            "visibility {target:.6} exceeds the balanced-delay ceiling {pump_factor:.6}"
        )));
    }
    let detune = (-8.0 * (target / pump_factor).ln()).sqrt() / sm;
    Ok(da + detune)
}

// ── seeded substreams ───────────────────────────────────────────────────────

const SALT_DRIFT: u64 = 0xD21F;
const SALT_STEP: u64 = 0x57E9;
const SALT_SWEEP: u64 = 0x53EE;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-derived substream seed: fold each part through a 64-bit
/// finalizer so (scan, step) neighbors land far apart.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ p))
}

fn substream(master: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, parts))
}

// ── acquisition loop ────────────────────────────────────────────────────────

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    rand_distr::Poisson::new(mean)
        .expect("positive finite mean")
        .sample(rng) as u64
}

/// Detected rates of partner-lost photons per channel. These photons
/// cannot interfere, so their port choice is a fair coin; the whole chain
/// (arm, port, retention, efficiency) is folded into one thinned rate.
fn lone_detected_rates(cfg: &RunConfig, interferometer: &Interferometer) -> (f64, f64) {
    let r = cfg.source.pair_rate;
    let spectrum = &cfg.source.spectrum;
    let lambda = units::wavelength(spectrum.signal_center);
    let t_s = cfg.slab.transmission(lambda) * cfg.extra_signal;
    let t_i = cfg.slab.transmission(lambda) * cfg.extra_idler;
    let lone_signal = r * t_s * (1.0 - t_i);
    let lone_idler = r * (1.0 - t_s) * t_i;
    let k_a = interferometer.arm_transmission(Channel::A)
        * 0.5
        * interferometer.retention(Channel::A)
        * cfg.detector_a.efficiency;
    let k_b = interferometer.arm_transmission(Channel::B)
        * 0.5
        * interferometer.retention(Channel::B)
        * cfg.detector_b.efficiency;
    match cfg.source.splitting {
        Splitting::Probabilistic => (lone_signal * k_a, lone_idler * k_b),
        Splitting::Deterministic => (
            0.5 * (lone_signal + lone_idler) * k_a,
            0.5 * (lone_signal + lone_idler) * k_b,
        ),
    }
}

/// Simulate one phase step: surviving pairs event by event, partner-lost
/// photons as thinned Poisson streams, then darks, dead time, and the
/// windowed coincidence count. Times are step-local; `scan_t0_s` places
/// the step on the scan clock for drift lookup only.
fn simulate_step(
    cfg: &RunConfig,
    phase_a_rad: f64,
    scan: usize,
    step: usize,
    drift: &DriftTrajectory,
) -> Result<(TagStream, FringeStep)> {
    let mut rng = substream(cfg.seed, &[SALT_STEP, scan as u64, step as u64]);
    let t_int = cfg.plan.integration_s;
    let scan_t0_s = step as f64 * t_int;

    let mut icfg = cfg.interferometer;
    icfg.phase_a_rad = phase_a_rad;
    let interferometer = Interferometer::with_drift(icfg, drift)?;

    let spectrum = cfg.source.spectrum;
    let lambda = units::wavelength(spectrum.signal_center);
    let t_s = cfg.slab.transmission(lambda) * cfg.extra_signal;
    let t_i = cfg.slab.transmission(lambda) * cfg.extra_idler;
    let (signal_pol, idler_pol) = match cfg.source.splitting {
        Splitting::Probabilistic => (Polarization::H, Polarization::H),
        Splitting::Deterministic => (Polarization::H, Polarization::V),
    };

    let mut stream = TagStream::default();

    // Pairs with both photons alive carry the interference.
    let n_pairs = poisson_count(cfg.source.pair_rate * t_s * t_i * t_int, &mut rng);
    for _ in 0..n_pairs {
        let emission = rng.gen::<f64>() * t_int;
        let (signal_freq, idler_freq) = spectrum.sample(&mut rng);
        let pair = PhotonPair {
            emission_time: emission,
            signal_freq,
            idler_freq,
            signal_pol,
            idler_pol,
        };
        let outcome = interferometer.traverse(&pair, scan_t0_s + emission, &mut rng);
        for tag in detect(&outcome, &cfg.detector_a, &cfg.detector_b, &mut rng)
            .into_iter()
            .flatten()
        {
            stream.push(tag);
        }
    }

    // Partner-lost photons: flat singles, thinned straight to tags.
    let (rate_a, rate_b) = lone_detected_rates(cfg, &interferometer);
    for (channel, rate) in [(Channel::A, rate_a), (Channel::B, rate_b)] {
        let n = poisson_count(rate * t_int, &mut rng);
        for _ in 0..n {
            stream.push(TagRecord {
                channel,
                ticks: quantize_ticks(rng.gen::<f64>() * t_int),
            });
        }
    }

    stream.inject_darks(&cfg.detector_a, &cfg.detector_b, t_int, &mut rng);
    stream.sort();
    stream.apply_dead_time(&cfg.detector_a, &cfg.detector_b);

    let histogram = build_histogram(&stream, cfg.histogram_bin_ticks, cfg.max_lag_ticks)?;
    let window_count = histogram.integrate_window(0, cfg.window_halfwidth_ticks)?;
    let fringe = FringeStep {
        phase_rad: phase_a_rad,
        window_count,
        singles_a: stream.a.len() as u64,
        singles_b: stream.b.len() as u64,
        integration_s: t_int,
    };
    Ok((stream, fringe))
}

// ── run outcome and report rows ─────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// Expected peak counts per step below the feasibility floor; the
    /// bench time would be wasted, so nothing is simulated.
    Infeasible { expected_peak: f64, floor: f64 },
    /// The scans produced no usable fringe.
    NoFringe { reason: String },
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "ok",
            RunStatus::Infeasible { .. } => "infeasible",
            RunStatus::NoFringe { .. } => "no-fringe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub sample: String,
    pub thickness_um: f64,
    pub singles_a_hz: f64,
    pub singles_b_hz: f64,
    pub max_window_counts: u64,
    pub integration_s: f64,
    pub contrast: Option<f64>,
    pub contrast_sigma: Option<f64>,
    /// Percent with parenthetical uncertainty, e.g. "95.1(5)".
    pub contrast_display: String,
    pub chsh_witnessed: bool,
    pub chained_witnessed: bool,
    pub singles_flat: bool,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub name: String,
    pub status: RunStatus,
    pub scans: Vec<FringeScan>,
    pub per_scan: Vec<ContrastResult>,
    pub combined: Option<ContrastResult>,
    pub verdict: Option<WitnessVerdict>,
    pub row: ReportRow,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    JsonLines,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "report.csv",
            ReportFormat::JsonLines => "report.jsonl",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json-lines" => Ok(ReportFormat::JsonLines),
            other => Err(Error::Scenario(format!(
                "unknown report format `{other}` (csv or json-lines)"
            ))),
        }
    }
}

pub const REPORT_CSV_HEADER: &str = "sample,thickness_um,singles_a_hz,singles_b_hz,\
max_window_counts,integration_s,contrast_percent,chsh,chained,singles_flat,status";

pub fn render_report(rows: &[ReportRow], format: ReportFormat) -> Result<String> {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(REPORT_CSV_HEADER);
            out.push('\n');
            for r in rows {
                out.push_str(&format!(
                    "{},{},{:.1},{:.1},{},{},{},{},{},{},{}\n",
                    r.sample,
                    r.thickness_um,
                    r.singles_a_hz,
                    r.singles_b_hz,
                    r.max_window_counts,
                    r.integration_s,
                    r.contrast_display,
                    r.chsh_witnessed,
                    r.chained_witnessed,
                    r.singles_flat,
                    r.status
                ));
            }
        }
        ReportFormat::JsonLines => {
            for r in rows {
                let line = serde_json::to_string(r)
                    .map_err(|e| Error::Csv(format!("report serialization: {e}")))?;
                out.push_str(&line);
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Reduce finished scans to contrast, verdict, and a report row. Shared by
/// the live run and the offline re-analysis paths so all three produce
/// identical reports.
#[allow(clippy::too_many_arguments)]
fn finish_scans(
    sample: &str,
    thickness_um: f64,
    integration_s: f64,
    singles_tolerance: f64,
    scans: &[FringeScan],
) -> (
    RunStatus,
    Vec<ContrastResult>,
    Option<ContrastResult>,
    Option<WitnessVerdict>,
    ReportRow,
) {
    let mut per_scan = Vec::new();
    let mut failure: Option<String> = None;
    for (i, scan) in scans.iter().enumerate() {
        match contrast(scan) {
            Ok(c) => per_scan.push(c),
            Err(Error::NoFringe(reason)) => {
                failure = Some(format!("scan {i}: {reason}"));
                break;
            }
            Err(Error::EmptyExtremumPair) => {
                failure = Some(format!("scan {i}: an extremum pair has zero counts"));
                break;
            }
            Err(e) => {
                failure = Some(format!("scan {i}: {e}"));
                break;
            }
        }
    }

    let (total_a, total_b, total_t, max_counts) = scan_totals(scans);
    let singles_a_hz = if total_t > 0.0 { total_a / total_t } else { 0.0 };
    let singles_b_hz = if total_t > 0.0 { total_b / total_t } else { 0.0 };

    if let Some(reason) = failure {
        let row = ReportRow {
            sample: sample.to_string(),
            thickness_um,
            singles_a_hz,
            singles_b_hz,
            max_window_counts: max_counts,
            integration_s,
            contrast: None,
            contrast_sigma: None,
            contrast_display: "-".into(),
            chsh_witnessed: false,
            chained_witnessed: false,
            singles_flat: false,
            status: "no-fringe".into(),
        };
        return (
            RunStatus::NoFringe { reason },
            per_scan,
            None,
            None,
            row,
        );
    }

    let combined = combine_scans(&per_scan).expect("at least one scan");
    let verdict = witness(&combined, scans, singles_tolerance);
    let row = ReportRow {
        sample: sample.to_string(),
        thickness_um,
        singles_a_hz,
        singles_b_hz,
        max_window_counts: max_counts,
        integration_s,
        contrast: Some(combined.contrast),
        contrast_sigma: Some(combined.uncertainty),
        contrast_display: format_parenthetical(
            100.0 * combined.contrast,
            100.0 * combined.uncertainty,
        ),
        chsh_witnessed: verdict.chsh_witnessed,
        chained_witnessed: verdict.chained_witnessed,
        singles_flat: verdict.singles_flat,
        status: "ok".into(),
    };
    (
        RunStatus::Completed,
        per_scan,
        Some(combined),
        Some(verdict),
        row,
    )
}

fn scan_totals(scans: &[FringeScan]) -> (f64, f64, f64, u64) {
    let (mut a, mut b, mut t, mut max) = (0.0f64, 0.0f64, 0.0f64, 0u64);
    for scan in scans {
        for s in &scan.steps {
            a += s.singles_a as f64;
            b += s.singles_b as f64;
            t += s.integration_s;
            max = max.max(s.window_count);
        }
    }
    (a, b, t, max)
}

fn infeasible_row(cfg: &RunConfig, expected_peak: f64) -> ReportRow {
    ReportRow {
        sample: cfg.sample.clone(),
        thickness_um: cfg.thickness_um,
        singles_a_hz: 0.0,
        singles_b_hz: 0.0,
        max_window_counts: 0,
        integration_s: cfg.plan.integration_s,
        contrast: None,
        contrast_sigma: None,
        contrast_display: "-".into(),
        chsh_witnessed: false,
        chained_witnessed: false,
        singles_flat: false,
        status: format!("infeasible (expected peak {expected_peak:.1} counts/step)"),
    }
}

// ── run artifacts ───────────────────────────────────────────────────────────

/// Metadata persisted with every run so the offline paths can rebuild the
/// report without the scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: u32,
    pub name: String,
    pub sample: String,
    pub thickness_um: f64,
    /// Hex text: TOML integers are i64, and derived seeds use all 64 bits.
    #[serde(with = "hex_seed")]
    pub seed: u64,
    pub scans: usize,
    pub steps: usize,
    pub phase_start_rad: f64,
    pub phase_end_rad: f64,
    pub integration_s: f64,
    pub window_halfwidth_ticks: i64,
    pub histogram_bin_ticks: i64,
    pub max_lag_ticks: i64,
    pub singles_tolerance: f64,
    pub save_tags: bool,
    pub format: String,
}

mod hex_seed {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{seed:#018x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let text = String::deserialize(d)?;
        let digits = text.strip_prefix("0x").unwrap_or(&text);
        u64::from_str_radix(digits, 16).map_err(serde::de::Error::custom)
    }
}

pub const MANIFEST_HEADER: &str = "file,scan,step,phase_rad,integration_s";

fn scan_csv_name(scan: usize) -> String {
    format!("scan_{scan:02}.csv")
}

fn tag_file_name(scan: usize, step: usize) -> String {
    format!("tags/scan{scan:02}_step{step:03}.tags")
}

/// Execute a resolved configuration. With an output directory the run
/// persists fringe CSVs, a manifest, metadata, the report, and (opted in)
/// per-step raw tag files.
pub fn run_scenario(
    cfg: &RunConfig,
    out_dir: Option<&Path>,
    format: ReportFormat,
) -> Result<RunOutcome> {
    if cfg.save_tags && out_dir.is_none() {
        return Err(Error::InvalidConfig(
            "tag saving was requested but no output directory was given".into(),
        ));
    }
    let budget = expected_rates(cfg)?;
    let mut warnings = Vec::new();
    let regime = regime_check(
        &cfg.source.spectrum,
        cfg.interferometer.delay_a_s,
        cfg.interferometer.delay_b_s,
    )?;
    if !regime.satisfied {
        warnings.push(format!(
            "analyzer delay is outside the working regime: delay/single-photon \
coherence {:.1} (want >= {}), delay/pump coherence {:.3} (want <= {})",
            regime.delay_over_single,
            crate::interferometer::REGIME_MIN_SINGLE_RATIO,
            regime.delay_over_pump,
            crate::interferometer::REGIME_MAX_PUMP_RATIO
        ));
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    if budget.surviving_pair_hz <= 0.0 {
        let status = RunStatus::NoFringe {
            reason: "no pairs survive the sample and fixed losses".into(),
        };
        let mut row = infeasible_row(cfg, 0.0);
        row.status = "no-fringe".into();
        let outcome = RunOutcome {
            name: cfg.name.clone(),
            status,
            scans: Vec::new(),
            per_scan: Vec::new(),
            combined: None,
            verdict: None,
            row,
            warnings,
        };
        persist_stub(cfg, out_dir, format, &outcome)?;
        return Ok(outcome);
    }

    if budget.peak_counts_per_step < cfg.feasibility_floor {
        let outcome = RunOutcome {
            name: cfg.name.clone(),
            status: RunStatus::Infeasible {
                expected_peak: budget.peak_counts_per_step,
                floor: cfg.feasibility_floor,
            },
            scans: Vec::new(),
            per_scan: Vec::new(),
            combined: None,
            verdict: None,
            row: infeasible_row(cfg, budget.peak_counts_per_step),
            warnings,
        };
        persist_stub(cfg, out_dir, format, &outcome)?;
        return Ok(outcome);
    }

    // Acquire.
    let mut scans = Vec::with_capacity(cfg.plan.scans);
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    let scan_duration = cfg.plan.integration_s * cfg.plan.steps as f64;
    let drift_grid = cfg.plan.integration_s.min(0.1);
    for scan_idx in 0..cfg.plan.scans {
        let mut drift_rng = substream(cfg.seed, &[SALT_DRIFT, scan_idx as u64]);
        let drift = DriftTrajectory::generate(
            &cfg.interferometer.drift,
            scan_duration,
            drift_grid,
            &mut drift_rng,
        )?;
        let mut steps = Vec::with_capacity(cfg.plan.steps);
        for step_idx in 0..cfg.plan.steps {
            let phase = cfg.plan.phase(step_idx);
            let (tags, fringe) = simulate_step(cfg, phase, scan_idx, step_idx, &drift)?;
            let rel = tag_file_name(scan_idx, step_idx);
            if cfg.save_tags {
                if let Some(dir) = out_dir {
                    let path = dir.join(&rel);
                    if let Some(parent) = path.parent() {
                        std::fs::create_dir_all(parent)?;
                    }
                    write_tags_file(path, &tags)?;
                }
            }
            manifest.push_str(&format!(
                "{rel},{scan_idx},{step_idx},{},{}\n",
                fringe.phase_rad, fringe.integration_s
            ));
            steps.push(fringe);
        }
        scans.push(FringeScan { steps });
    }

    let (status, per_scan, combined, verdict, row) = finish_scans(
        &cfg.sample,
        cfg.thickness_um,
        cfg.plan.integration_s,
        cfg.singles_tolerance,
        &scans,
    );
    let outcome = RunOutcome {
        name: cfg.name.clone(),
        status,
        scans,
        per_scan,
        combined,
        verdict,
        row,
        warnings,
    };

    if let Some(dir) = out_dir {
        for (i, scan) in outcome.scans.iter().enumerate() {
            analysis::write_fringe_csv_file(dir.join(scan_csv_name(i)), scan)?;
        }
        std::fs::write(dir.join("manifest.csv"), manifest)?;
        write_meta(cfg, dir, format)?;
        let report = render_report(std::slice::from_ref(&outcome.row), format)?;
        std::fs::write(dir.join(format.file_name()), report)?;
    }
    Ok(outcome)
}

fn write_meta(cfg: &RunConfig, dir: &Path, format: ReportFormat) -> Result<()> {
    let meta = RunMeta {
        schema_version: SCENARIO_SCHEMA_VERSION,
        name: cfg.name.clone(),
        sample: cfg.sample.clone(),
        thickness_um: cfg.thickness_um,
        seed: cfg.seed,
        scans: cfg.plan.scans,
        steps: cfg.plan.steps,
        phase_start_rad: cfg.plan.phase_start_rad,
        phase_end_rad: cfg.plan.phase_end_rad,
        integration_s: cfg.plan.integration_s,
        window_halfwidth_ticks: cfg.window_halfwidth_ticks,
        histogram_bin_ticks: cfg.histogram_bin_ticks,
        max_lag_ticks: cfg.max_lag_ticks,
        singles_tolerance: cfg.singles_tolerance,
        save_tags: cfg.save_tags,
        format: match format {
            ReportFormat::Csv => "csv".into(),
            ReportFormat::JsonLines => "json-lines".into(),
        },
    };
    let text = toml::to_string(&meta)
        .map_err(|e| Error::Scenario(format!("metadata serialization: {e}")))?;
    std::fs::write(dir.join("run_meta.toml"), text)?;
    Ok(())
}

fn persist_stub(
    cfg: &RunConfig,
    out_dir: Option<&Path>,
    format: ReportFormat,
    outcome: &RunOutcome,
) -> Result<()> {
    if let Some(dir) = out_dir {
        write_meta(cfg, dir, format)?;
        let report = render_report(std::slice::from_ref(&outcome.row), format)?;
        std::fs::write(dir.join(format.file_name()), report)?;
    }
    Ok(())
}

// ── offline paths ───────────────────────────────────────────────────────────

fn read_meta(dir: &Path) -> Result<RunMeta> {
    let text = std::fs::read_to_string(dir.join("run_meta.toml"))?;
    Ok(toml::from_str(&text)?)
}

struct ManifestRow {
    file: String,
    scan: usize,
    step: usize,
    phase_rad: f64,
    integration_s: f64,
}

fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(dir.join("manifest.csv"))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == MANIFEST_HEADER => {}
        other => {
            return Err(Error::Csv(format!(
                "expected manifest header `{MANIFEST_HEADER}`, found {other:?}"
            )));
        }
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Csv(format!("manifest line {}: 5 fields", n + 2)));
        }
        let bad = |what: &str| Error::Csv(format!("manifest line {}: bad {what}", n + 2));
        rows.push(ManifestRow {
            file: f[0].to_string(),
            scan: f[1].parse().map_err(|_| bad("scan"))?,
            step: f[2].parse().map_err(|_| bad("step"))?,
            phase_rad: f[3].parse().map_err(|_| bad("phase"))?,
            integration_s: f[4].parse().map_err(|_| bad("integration"))?,
        });
    }
    Ok(rows)
}

/// Rebuild the full report of a saved run from its raw tag files alone
/// (plus manifest and metadata). Produces byte-identical results to the
/// live run, which is the check that the persisted tags really carry the
/// whole measurement.
pub fn analyze_run_dir(dir: &Path) -> Result<(Vec<FringeScan>, RunOutcome)> {
    let meta = read_meta(dir)?;
    if !meta.save_tags {
        return Err(Error::Scenario(
            "this run saved no tag files; re-run with tag saving enabled".into(),
        ));
    }
    let manifest = read_manifest(dir)?;
    let mut scans: Vec<Vec<Option<FringeStep>>> = vec![vec![None; meta.steps]; meta.scans];
    for row in &manifest {
        let stream = read_tags_file(dir.join(&row.file))?;
        let histogram = build_histogram(&stream, meta.histogram_bin_ticks, meta.max_lag_ticks)?;
        let window_count = histogram.integrate_window(0, meta.window_halfwidth_ticks)?;
        let slot = scans
            .get_mut(row.scan)
            .and_then(|s| s.get_mut(row.step))
            .ok_or_else(|| {
                Error::Scenario(format!(
                    "manifest addresses scan {} step {} outside the recorded plan",
                    row.scan, row.step
                ))
            })?;
        *slot = Some(FringeStep {
            phase_rad: row.phase_rad,
            window_count,
            singles_a: stream.a.len() as u64,
            singles_b: stream.b.len() as u64,
            integration_s: row.integration_s,
        });
    }
    let mut rebuilt = Vec::with_capacity(meta.scans);
    for (i, scan) in scans.into_iter().enumerate() {
        let steps: Option<Vec<FringeStep>> = scan.into_iter().collect();
        let steps = steps.ok_or_else(|| {
            Error::Scenario(format!("scan {i} is missing steps in the manifest"))
        })?;
        rebuilt.push(FringeScan { steps });
    }

    let (status, per_scan, combined, verdict, row) = finish_scans(
        &meta.sample,
        meta.thickness_um,
        meta.integration_s,
        meta.singles_tolerance,
        &rebuilt,
    );
    Ok((
        rebuilt.clone(),
        RunOutcome {
            name: meta.name,
            status,
            scans: rebuilt,
            per_scan,
            combined,
            verdict,
            row,
            warnings: Vec::new(),
        },
    ))
}

/// Re-render a saved run's report from its fringe CSVs (no tags needed).
pub fn report_run_dir(dir: &Path) -> Result<(RunOutcome, String)> {
    let meta = read_meta(dir)?;
    let mut scans = Vec::with_capacity(meta.scans);
    for i in 0..meta.scans {
        scans.push(analysis::read_fringe_csv_file(dir.join(scan_csv_name(i)))?);
    }
    let (status, per_scan, combined, verdict, row) = finish_scans(
        &meta.sample,
        meta.thickness_um,
        meta.integration_s,
        meta.singles_tolerance,
        &scans,
    );
    let format = ReportFormat::parse(&meta.format)?;
    let text = render_report(std::slice::from_ref(&row), format)?;
    Ok((
        RunOutcome {
            name: meta.name,
            status,
            scans,
            per_scan,
            combined,
            verdict,
            row,
            warnings: Vec::new(),
        },
        text,
    ))
}

// ── thickness sweeps ────────────────────────────────────────────────────────

/// Run the scenario at each sample thickness (um). Every entry gets its
/// own derived seed and its own artifact subdirectory; the aggregate
/// report collects one row per thickness.
pub fn sweep_thicknesses(
    scenario: &Scenario,
    media: &BTreeMap<String, OpticalMedium>,
    thicknesses_um: &[f64],
    overrides: &Overrides,
    out_dir: Option<&Path>,
    format: ReportFormat,
) -> Result<Vec<RunOutcome>> {
    if thicknesses_um.is_empty() {
        return Err(Error::Scenario("sweep needs at least one thickness".into()));
    }
    let mut base = scenario.resolve(media)?;
    base.apply_overrides(overrides);
    let medium = match &scenario.medium {
        Some(m) => Some(media.get(&m.name).ok_or_else(|| {
            Error::Scenario(format!("medium `{}` is not in the media table", m.name))
        })?),
        None => None,
    };

    let mut outcomes = Vec::with_capacity(thicknesses_um.len());
    let mut rows = Vec::with_capacity(thicknesses_um.len());
    for (i, &thickness) in thicknesses_um.iter().enumerate() {
        if !(thickness >= 0.0 && thickness.is_finite()) {
            return Err(Error::InvalidConfig(
                "sweep thicknesses must be non-negative".into(),
            ));
        }
        let mut cfg = base.with_thickness(medium, thickness)?;
        cfg.seed = derive_seed(base.seed, &[SALT_SWEEP, i as u64]);
        cfg.name = format!("{}_t{}um", base.name, thickness);
        let sub = out_dir.map(|d| d.join(format!("t{thickness}um")));
        let outcome = run_scenario(&cfg, sub.as_deref(), format)?;
        rows.push(outcome.row.clone());
        outcomes.push(outcome);
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let report = render_report(&rows, format)?;
        std::fs::write(dir.join(format.file_name()), report)?;
    }
    Ok(outcomes)
}

// ── built-in bench descriptions ─────────────────────────────────────────────

/// The media table shipped with the binary.
pub fn builtin_media() -> &'static str {
    include_str!("../presets/media.toml")
}

/// Scenario presets shipped with the binary: the published bench rows plus
/// the whole-milk attempt that the feasibility gate should reject.
pub fn builtin_scenarios() -> &'static [(&'static str, &'static str)] {
    &[
        ("no_sample", include_str!("../presets/no_sample.toml")),
        ("skim_milk_134um", include_str!("../presets/skim_milk_134um.toml")),
        ("skim_milk_794um", include_str!("../presets/skim_milk_794um.toml")),
        ("skim_milk_1556um", include_str!("../presets/skim_milk_1556um.toml")),
        ("two_percent_159um", include_str!("../presets/two_percent_159um.toml")),
        ("two_percent_235um", include_str!("../presets/two_percent_235um.toml")),
        ("two_percent_286um", include_str!("../presets/two_percent_286um.toml")),
        ("chicken_210um", include_str!("../presets/chicken_210um.toml")),
        ("chicken_235um", include_str!("../presets/chicken_235um.toml")),
        ("whole_milk_1mm", include_str!("../presets/whole_milk_1mm.toml")),
    ]
}

/// Find a built-in scenario by name.
pub fn builtin_scenario(name: &str) -> Option<&'static str> {
    builtin_scenarios()
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

/// Measured operating point a built-in preset is tuned to reproduce:
/// observed singles on each station, windowed coincidence rate at the
/// fringe crest, the bench contrast with its reported one-sigma error,
/// and the per-step integration time used on that sample.
#[derive(Debug, Clone, Copy)]
pub struct BenchTarget {
    pub preset: &'static str,
    pub singles_a_hz: f64,
    pub singles_b_hz: f64,
    pub peak_window_hz: f64,
    pub contrast: f64,
    pub contrast_sigma: f64,
    pub integration_s: f64,
}

/// Bench rows behind the built-in presets. The whole-milk preset has no
/// row here: at that thickness nothing usable reaches the detectors, and
/// the feasibility gate is expected to reject it before acquisition.
pub const BENCH_TARGETS: &[BenchTarget] = &[
    BenchTarget {
        preset: "no_sample",
        singles_a_hz: 6.09e4,
        singles_b_hz: 4.84e4,
        peak_window_hz: 126.73,
        contrast: 0.912,
        contrast_sigma: 0.005,
        integration_s: 10.0,
    },
    BenchTarget {
        preset: "skim_milk_134um",
        singles_a_hz: 6.33e4,
        singles_b_hz: 5.06e4,
        peak_window_hz: 148.27,
        contrast: 0.951,
        contrast_sigma: 0.005,
        integration_s: 5.0,
    },
    BenchTarget {
        preset: "skim_milk_794um",
        singles_a_hz: 2.93e4,
        singles_b_hz: 2.33e4,
        peak_window_hz: 37.27,
        contrast: 0.94,
        contrast_sigma: 0.01,
        integration_s: 5.0,
    },
    BenchTarget {
        preset: "skim_milk_1556um",
        singles_a_hz: 0.97e4,
        singles_b_hz: 0.77e4,
        peak_window_hz: 4.83,
        contrast: 0.95,
        contrast_sigma: 0.02,
        integration_s: 10.0,
    },
    BenchTarget {
        preset: "two_percent_159um",
        singles_a_hz: 2.33e4,
        singles_b_hz: 1.87e4,
        peak_window_hz: 21.38,
        contrast: 0.937,
        contrast_sigma: 0.009,
        integration_s: 15.0,
    },
    BenchTarget {
        preset: "two_percent_235um",
        singles_a_hz: 0.91e4,
        singles_b_hz: 0.73e4,
        peak_window_hz: 2.56,
        contrast: 0.93,
        contrast_sigma: 0.02,
        integration_s: 30.0,
    },
    BenchTarget {
        preset: "two_percent_286um",
        singles_a_hz: 0.55e4,
        singles_b_hz: 0.44e4,
        peak_window_hz: 1.43,
        contrast: 0.91,
        contrast_sigma: 0.03,
        integration_s: 30.0,
    },
    BenchTarget {
        preset: "chicken_210um",
        singles_a_hz: 2.25e4,
        singles_b_hz: 0.73e4,
        peak_window_hz: 17.45,
        contrast: 0.93,
        contrast_sigma: 0.008,
        integration_s: 20.0,
    },
    BenchTarget {
        preset: "chicken_235um",
        singles_a_hz: 0.71e4,
        singles_b_hz: 0.62e4,
        peak_window_hz: 1.61,
        contrast: 0.91,
        contrast_sigma: 0.03,
        integration_s: 30.0,
    },
];

/// Lower edge of the visibility band the preset sources run at.
pub const BENCH_VISIBILITY_MIN: f64 = 0.93;
/// Upper edge of the visibility band.
pub const BENCH_VISIBILITY_MAX: f64 = 0.95;

/// Oscillation visibility a preset's source is tuned to: the bench
/// contrast clamped into the visibility band. The bench contrasts are
/// not reproducible as-is (they fold in hardware this model does not
/// carry), so the source runs at the nearest in-band visibility and the
/// measured contrast is checked against what that visibility predicts.
pub fn bench_generator_visibility(row: &BenchTarget) -> f64 {
    row.contrast.clamp(BENCH_VISIBILITY_MIN, BENCH_VISIBILITY_MAX)
}

/// Windowed contrast [`bench_generator_visibility`] should produce on
/// this row once the row's accidental floor dilutes the fringe: with
/// crest rate C, accidentals B, and visibility v, the crest carries
/// C - B of signal, the signal mean is (C - B)/(1 + v), and
/// c = v (C - B) / (C + v B).
pub fn bench_expected_contrast(cfg: &RunConfig, row: &BenchTarget) -> f64 {
    let span = window_span_s(
        cfg.window_halfwidth_ticks,
        cfg.histogram_bin_ticks,
        cfg.max_lag_ticks,
    );
    let b = row.singles_a_hz * row.singles_b_hz * span;
    let v = bench_generator_visibility(row);
    v * (row.peak_window_hz - b) / (row.peak_window_hz + v * b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::parse_media_toml;

    const SEED: u64 = 0x5eed_0007;

    fn test_media() -> BTreeMap<String, OpticalMedium> {
        parse_media_toml(builtin_media()).unwrap()
    }

    fn minimal_scenario_text() -> String {
        r#"
schema_version = 1
name = "bench_check"
seed = 7

[source]
pump_wavelength_nm = 405.0
pump_coherence_length_m = 25.0
filter_center_nm = 810.0
filter_width_nm = 3.1
pair_rate_hz = 1.0e6
splitting = "probabilistic"

[interferometer]
delay_a_ns = 2.0
delay_b_ns = 2.0
"#
        .to_string()
    }

    // ── schema ──────────────────────────────────────────────────────────────

    #[test]
    fn minimal_scenario_gets_defaults() {
        let s = load_scenario(&minimal_scenario_text()).unwrap();
        let cfg = s.resolve(&test_media()).unwrap();
        assert_eq!(cfg.plan.steps, DEFAULT_SCAN_STEPS);
        assert_eq!(cfg.plan.scans, DEFAULT_SCAN_COUNT);
        assert_eq!(cfg.plan.phase_end_rad, std::f64::consts::FRAC_PI_2);
        assert_eq!(cfg.window_halfwidth_ticks, 85);
        assert_eq!(cfg.histogram_bin_ticks, 1);
        assert_eq!(cfg.max_lag_ticks, 2500);
        // ns/ps round trips pick up an ulp; compare fields loosely.
        let want = DetectorSpec::default();
        assert_eq!(cfg.detector_a.efficiency, want.efficiency);
        assert!((cfg.detector_a.jitter_std_s - want.jitter_std_s).abs() < 1e-18);
        assert!((cfg.detector_a.dead_time_s - want.dead_time_s).abs() < 1e-15);
        assert_eq!(cfg.detector_a.dark_rate_hz, want.dark_rate_hz);
        assert_eq!(cfg.extra_signal, 1.0);
        assert_eq!(cfg.sample, "bench_check");
        assert_eq!(cfg.thickness_um, 0.0);
        assert_eq!(cfg.slab, Slab::none());
    }

    #[test]
    fn unknown_fields_and_versions_are_rejected() {
        let with_typo = minimal_scenario_text().replace("pair_rate_hz", "pair_rate_hx");
        assert!(load_scenario(&with_typo).is_err());
        let wrong_version = minimal_scenario_text().replace("schema_version = 1", "schema_version = 9");
        assert!(matches!(
            load_scenario(&wrong_version),
            Err(Error::Scenario(_))
        ));
    }

    #[test]
    fn zero_thickness_and_absent_medium_resolve_identically() {
        let mut with_medium = minimal_scenario_text();
        with_medium.push_str("\n[medium]\nname = \"skim_milk\"\nthickness_um = 0.0\n");
        let a = load_scenario(&with_medium)
            .unwrap()
            .resolve(&test_media())
            .unwrap();
        let b = load_scenario(&minimal_scenario_text())
            .unwrap()
            .resolve(&test_media())
            .unwrap();
        assert_eq!(a, b);

        let mut unknown = minimal_scenario_text();
        unknown.push_str("\n[medium]\nname = \"granite\"\nthickness_um = 100.0\n");
        assert!(load_scenario(&unknown)
            .unwrap()
            .resolve(&test_media())
            .is_err());
    }

    #[test]
    fn overrides_replace_plan_fields() {
        let s = load_scenario(&minimal_scenario_text()).unwrap();
        let mut cfg = s.resolve(&test_media()).unwrap();
        cfg.apply_overrides(&Overrides {
            seed: Some(99),
            steps: Some(24),
            scans: Some(1),
            integration_s: Some(0.25),
            save_tags: true,
            feasibility_floor: Some(0.0),
        });
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.plan.steps, 24);
        assert_eq!(cfg.plan.scans, 1);
        assert_eq!(cfg.plan.integration_s, 0.25);
        assert!(cfg.save_tags);
        assert_eq!(cfg.feasibility_floor, 0.0);
    }

    // ── rate budget and fit ─────────────────────────────────────────────────

    fn bench_config(pair_rate: f64, extra_s: f64, extra_i: f64) -> RunConfig {
        let s = load_scenario(&minimal_scenario_text()).unwrap();
        let mut cfg = s.resolve(&test_media()).unwrap();
        cfg.source.pair_rate = pair_rate;
        cfg.extra_signal = extra_s;
        cfg.extra_idler = extra_i;
        cfg.interferometer.arm_transmission_a = 0.65;
        cfg.interferometer.arm_transmission_b = 0.65;
        cfg
    }

    #[test]
    fn window_span_counts_whole_bins() {
        // 85-tick halfwidth with 1-tick bins keeps bins -85..=85.
        let span = window_span_s(85, 1, 2500);
        assert!((span - 171.0 * units::TICK_SECONDS).abs() < 1e-18);
        // 4-tick bins: centers at 4i + 1.5 ticks; |4i + 1.5| <= 85 keeps
        // i = -21..=20, i.e. 42 bins of 16 ps.
        let span = window_span_s(85, 4, 2500);
        assert!((span - 42.0 * 4.0 * units::TICK_SECONDS).abs() < 1e-18);
    }

    #[test]
    fn fit_inverts_the_rate_budget() {
        let mut cfg = bench_config(1.2e7, 0.0246, 0.0195);
        // Detune B so the envelope sits near the bench value.
        cfg.interferometer.delay_b_s = 2.0e-9 + 4.0e-13;
        let budget = expected_rates(&cfg).unwrap();
        assert!(budget.oscillation_visibility > 0.95);

        let targets = RateTargets {
            singles_a_hz: budget.singles_a_hz,
            singles_b_hz: budget.singles_b_hz,
            peak_window_hz: budget.peak_window_hz,
            contrast: budget.expected_contrast,
        };
        let fit = fit_extra_losses(&cfg, &targets).unwrap();
        assert!(
            (fit.pair_rate_hz - cfg.source.pair_rate).abs() / cfg.source.pair_rate < 1e-5,
            "rate {} vs {}",
            fit.pair_rate_hz,
            cfg.source.pair_rate
        );
        assert!((fit.extra_signal - cfg.extra_signal).abs() / cfg.extra_signal < 1e-5);
        assert!((fit.extra_idler - cfg.extra_idler).abs() / cfg.extra_idler < 1e-5);
        assert!(
            (fit.oscillation_visibility - budget.oscillation_visibility).abs() < 1e-5,
            "visibility {} vs {}",
            fit.oscillation_visibility,
            budget.oscillation_visibility
        );

        // The refit delay reproduces the visibility and the fitted wave-
        // plate setting parks the carrier at a fringe minimum.
        let mut refit = cfg.clone();
        refit.interferometer.delay_b_s = fit.delay_b_s;
        refit.interferometer.phase_b_rad = fit.phase_b_rad;
        let check = expected_rates(&refit).unwrap();
        assert!((check.oscillation_visibility - budget.oscillation_visibility).abs() < 1e-5);
        assert!(
            (check.carrier_phase.abs() - std::f64::consts::PI).abs() < 1e-6,
            "carrier {}",
            check.carrier_phase
        );
    }

    #[test]
    fn fit_rejects_unreachable_targets() {
        let cfg = bench_config(1.2e7, 0.0246, 0.0195);
        let bad = RateTargets {
            singles_a_hz: 6.09e4,
            singles_b_hz: 4.84e4,
            peak_window_hz: 1.0, // below the accidental floor
            contrast: 0.93,
        };
        assert!(fit_extra_losses(&cfg, &bad).is_err());
        let impossible = RateTargets {
            singles_a_hz: 6.09e4,
            singles_b_hz: 4.84e4,
            peak_window_hz: 126.7,
            contrast: 0.9999,
        };
        assert!(fit_extra_losses(&cfg, &impossible).is_err());
    }

    // ── substreams ──────────────────────────────────────────────────────────

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        use rand::RngCore;
        let mut a1 = substream(SEED, &[SALT_STEP, 0, 0]);
        let mut a2 = substream(SEED, &[SALT_STEP, 0, 0]);
        let mut b = substream(SEED, &[SALT_STEP, 0, 1]);
        let mut c = substream(SEED, &[SALT_STEP, 1, 0]);
        let x1: Vec<u64> = (0..4).map(|_| a1.next_u64()).collect();
        let x2: Vec<u64> = (0..4).map(|_| a2.next_u64()).collect();
        assert_eq!(x1, x2);
        assert_ne!(x1[0], b.next_u64());
        assert_ne!(x1[0], c.next_u64());
        assert_ne!(derive_seed(SEED, &[1, 2]), derive_seed(SEED, &[2, 1]));
    }

    // ── acquisition ─────────────────────────────────────────────────────────

    #[test]
    fn simulated_step_matches_the_rate_budget() {
        let mut cfg = bench_config(2.0e6, 0.05, 0.05);
        cfg.plan.integration_s = 1.0;
        cfg.interferometer.drift = PhaseDriftModel::disabled();
        let budget = expected_rates(&cfg).unwrap();
        // Park the crest at this step's phase setting.
        let phase = crate::interferometer::wrap_phase(-budget.carrier_phase);
        let drift = DriftTrajectory::constant(0.0);
        let (stream, fringe) = simulate_step(&cfg, phase, 0, 0, &drift).unwrap();

        let sa = fringe.singles_a as f64;
        let sb = fringe.singles_b as f64;
        assert!(
            (sa - budget.singles_a_hz).abs() < 5.0 * budget.singles_a_hz.sqrt(),
            "singles A {sa} vs {}",
            budget.singles_a_hz
        );
        assert!(
            (sb - budget.singles_b_hz).abs() < 5.0 * budget.singles_b_hz.sqrt(),
            "singles B {sb} vs {}",
            budget.singles_b_hz
        );
        assert!(
            (fringe.window_count as f64 - budget.peak_counts_per_step).abs()
                < 5.0 * budget.peak_counts_per_step.sqrt(),
            "window {} vs {}",
            fringe.window_count,
            budget.peak_counts_per_step
        );
        assert_eq!(stream.a.len() as u64, fringe.singles_a);

        // Same inputs, same tags.
        let (again, fringe2) = simulate_step(&cfg, phase, 0, 0, &drift).unwrap();
        assert_eq!(stream, again);
        assert_eq!(fringe, fringe2);
    }

    #[test]
    fn infeasible_and_dark_benches_short_circuit() {
        let mut cfg = bench_config(1.0e4, 0.001, 0.001);
        cfg.plan.scans = 1;
        cfg.plan.steps = 8;
        let outcome = run_scenario(&cfg, None, ReportFormat::Csv).unwrap();
        assert!(matches!(outcome.status, RunStatus::Infeasible { .. }));
        assert!(outcome.row.status.starts_with("infeasible"));
        assert!(outcome.scans.is_empty());

        let mut dark = bench_config(1.0e6, 0.01, 0.01);
        dark.extra_signal = f64::MIN_POSITIVE; // everything absorbed
        dark.extra_idler = f64::MIN_POSITIVE;
        let outcome = run_scenario(&dark, None, ReportFormat::Csv).unwrap();
        assert!(matches!(outcome.status, RunStatus::NoFringe { .. }));
    }

    #[test]
    fn tiny_run_completes_and_reports() {
        let mut cfg = bench_config(2.0e6, 0.05, 0.05);
        cfg.plan = ScanPlan {
            steps: 16,
            scans: 2,
            phase_start_rad: 0.0,
            phase_end_rad: std::f64::consts::TAU,
            integration_s: 0.2,
        };
        cfg.feasibility_floor = 0.0;
        let outcome = run_scenario(&cfg, None, ReportFormat::Csv).unwrap();
        assert_eq!(outcome.status, RunStatus::Completed);
        assert_eq!(outcome.scans.len(), 2);
        assert_eq!(outcome.per_scan.len(), 2);
        let row = &outcome.row;
        assert_eq!(row.status, "ok");
        assert!(row.contrast.is_some());
        assert!(row.max_window_counts > 0);
        // Phase grid is end-exclusive and evenly spaced.
        let phases: Vec<f64> = outcome.scans[0].steps.iter().map(|s| s.phase_rad).collect();
        assert_eq!(phases.len(), 16);
        assert!((phases[1] - phases[0] - std::f64::consts::TAU / 16.0).abs() < 1e-15);
    }

    #[test]
    fn report_rendering_is_stable() {
        let row = ReportRow {
            sample: "skim milk".into(),
            thickness_um: 133.6,
            singles_a_hz: 63300.04,
            singles_b_hz: 50600.96,
            max_window_counts: 741,
            integration_s: 5.0,
            contrast: Some(0.9512),
            contrast_sigma: Some(0.0049),
            contrast_display: "95.1(5)".into(),
            chsh_witnessed: true,
            chained_witnessed: false,
            singles_flat: true,
            status: "ok".into(),
        };
        let csv = render_report(std::slice::from_ref(&row), ReportFormat::Csv).unwrap();
        let expected = format!(
            "{REPORT_CSV_HEADER}\nskim milk,133.6,63300.0,50601.0,741,5,95.1(5),true,false,true,ok\n"
        );
        assert_eq!(csv, expected);
        let jsonl = render_report(std::slice::from_ref(&row), ReportFormat::JsonLines).unwrap();
        assert_eq!(jsonl.lines().count(), 1);
        assert!(jsonl.contains("\"sample\":\"skim milk\""));
        assert!(jsonl.contains("\"contrast\":0.9512"));
    }

    #[test]
    fn builtin_presets_parse_and_resolve() {
        let media = test_media();
        for (name, text) in builtin_scenarios() {
            let scenario =
                load_scenario(text).unwrap_or_else(|e| panic!("preset {name}: {e}"));
            let cfg = scenario
                .resolve(&media)
                .unwrap_or_else(|e| panic!("preset {name}: {e}"));
            assert_eq!(&cfg.name, name);
        }
        assert!(builtin_scenario("no_sample").is_some());
        assert!(builtin_scenario("lead_brick").is_none());
    }

    #[test]
    fn presets_reproduce_bench_rates() {
        let media = test_media();
        for row in BENCH_TARGETS {
            let text = builtin_scenario(row.preset).unwrap();
            let cfg = load_scenario(text)
                .unwrap()
                .resolve(&media)
                .unwrap_or_else(|e| panic!("{}: {e}", row.preset));
            let budget = expected_rates(&cfg).unwrap();
            let rel = |got: f64, want: f64| (got - want).abs() / want;
            assert!(
                rel(budget.singles_a_hz, row.singles_a_hz) < 1e-7,
                "{}: singles A {} vs {}",
                row.preset,
                budget.singles_a_hz,
                row.singles_a_hz
            );
            assert!(
                rel(budget.singles_b_hz, row.singles_b_hz) < 1e-7,
                "{}: singles B {} vs {}",
                row.preset,
                budget.singles_b_hz,
                row.singles_b_hz
            );
            assert!(
                rel(budget.peak_window_hz, row.peak_window_hz) < 1e-5,
                "{}: peak {} vs {}",
                row.preset,
                budget.peak_window_hz,
                row.peak_window_hz
            );
            let contrast = bench_expected_contrast(&cfg, row);
            assert!(
                (budget.expected_contrast - contrast).abs() < 1e-5,
                "{}: contrast {} vs {}",
                row.preset,
                budget.expected_contrast,
                contrast
            );
            let visibility = bench_generator_visibility(row);
            assert!(
                (budget.oscillation_visibility - visibility).abs() < 1e-5,
                "{}: oscillation visibility {} vs {}",
                row.preset,
                budget.oscillation_visibility,
                visibility
            );
            // Scans open and close on a fringe minimum.
            assert!(
                (budget.carrier_phase.abs() - std::f64::consts::PI).abs() < 1e-6,
                "{}: carrier {}",
                row.preset,
                budget.carrier_phase
            );
            assert_eq!(cfg.plan.integration_s, row.integration_s, "{}", row.preset);
            assert_eq!(cfg.plan.phase_end_rad, std::f64::consts::TAU, "{}", row.preset);
        }
    }

    /// Regenerates the fitted `[source]`/`[interferometer]` lines for the
    /// built-in presets. Run with `--ignored --nocapture` and paste the
    /// output into the preset files whenever the bench table or the rate
    /// budget changes.
    #[test]
    #[ignore = "preset generator, not a check"]
    fn refit_builtin_presets() {
        let media = test_media();
        for row in BENCH_TARGETS {
            let text = builtin_scenario(row.preset).unwrap();
            let cfg = load_scenario(text).unwrap().resolve(&media).unwrap();
            let targets = RateTargets {
                singles_a_hz: row.singles_a_hz,
                singles_b_hz: row.singles_b_hz,
                peak_window_hz: row.peak_window_hz,
                contrast: bench_expected_contrast(&cfg, row),
            };
            let fit = fit_extra_losses(&cfg, &targets)
                .unwrap_or_else(|e| panic!("{}: {e}", row.preset));
            let want_v = bench_generator_visibility(row);
            assert!(
                (fit.oscillation_visibility - want_v).abs() < 1e-9,
                "{}: fit visibility {} vs generator {}",
                row.preset,
                fit.oscillation_visibility,
                want_v
            );
            // Print the delay at output precision and reparse it before
            // deriving the waveplate setting, so the pasted pair stays
            // self-consistent after the ns round trip in the TOML.
            let delay_ns = format!("{}", fit.delay_b_s * 1.0e9);
            let delay_b_s = delay_ns.parse::<f64>().unwrap() * 1.0e-9;
            let phase_b = crate::interferometer::wrap_phase(
                std::f64::consts::PI
                    - cfg.source.spectrum.pump_center
                        * (cfg.interferometer.delay_a_s + delay_b_s)
                        / 2.0,
            );
            println!(
                "# {} (oscillation visibility {:.6}, contrast target {:.6})",
                row.preset, fit.oscillation_visibility, targets.contrast
            );
            println!("pair_rate_hz = {}", fit.pair_rate_hz);
            println!("extra_signal = {}", fit.extra_signal);
            println!("extra_idler = {}", fit.extra_idler);
            println!("delay_b_ns = {delay_ns}");
            println!("phase_b_rad = {phase_b}");
            println!();
        }
    }
}
