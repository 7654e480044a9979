//! Paired unbalanced interferometers for two-photon interference.
//!
//! Each analyzer splits its photon between a short and a long path with a
//! relative delay far longer than the single-photon coherence time, so no
//! first-order interference survives and singles rates stay flat in phase.
//! When both photons of a pair take the same kind of path (short-short or
//! long-long) the two joint amplitudes are indistinguishable, because the
//! pump coherence time dwarfs the delays and hides the emission time. Those
//! events interfere in coincidence with the joint phase
//!
//! ```text
//! Phi = w_s dt_A + w_i dt_B + phi_A + phi_B + drift(t)
//! ```
//!
//! Mixed (short-long) events are distinguishable by timing and carry no
//! phase dependence.
//!
//! Two splitting geometries are supported. With probabilistic splitting the
//! signal photon always feeds analyzer A and the idler analyzer B, so mixed
//! events appear as coincidences displaced to lags of +dt_B and -dt_A: the
//! familiar side peaks, removable only by time postselection, which caps
//! raw fringe visibility at 50%. With deterministic splitting the long
//! paths cross over to the opposite detector, so mixed events deliver both
//! photons to one detector and never produce a cross coincidence.
//!
//! The Monte Carlo realizes interference in the output-port statistics:
//! for an indistinguishable pair the joint probability that both photons
//! exit toward their detectors is (1 + cos Phi)/4, with the complementary
//! single-exit outcomes at (1 - cos Phi)/4 each, keeping every single-photon
//! marginal at exactly 1/2. The cosine is evaluated at the pair's sampled
//! frequencies, so the visibility envelope is not injected anywhere: it
//! emerges statistically and can be checked against the independent
//! quadrature in [`analytic_coincidence_rate`]. Path branches are sampled
//! before loss, so unequal analyzer throughputs thin the branches without
//! altering the programmed contrast.
//!
//! Slow thermal phase drift is modeled as an Ornstein-Uhlenbeck process
//! realized once per run on a coarse grid and added to the joint phase.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::source::{JointSpectrum, PhotonPair, Splitting};

// ── configuration ───────────────────────────────────────────────────────────

/// Slow relative phase noise between the analyzers, an Ornstein-Uhlenbeck
/// process: random-walk intensity with mean reversion on `correlation_time_s`.
/// Zero `random_walk_rad_per_sqrt_s` disables drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseDriftModel {
    pub random_walk_rad_per_sqrt_s: f64,
    pub correlation_time_s: f64,
}

impl PhaseDriftModel {
    pub fn disabled() -> Self {
        Self {
            random_walk_rad_per_sqrt_s: 0.0,
            correlation_time_s: 60.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.random_walk_rad_per_sqrt_s >= 0.0) {
            return Err(Error::InvalidConfig(
                "drift random-walk intensity must be non-negative".into(),
            ));
        }
        if !(self.correlation_time_s > 0.0) {
            return Err(Error::InvalidConfig(
                "drift correlation time must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Standard deviation of the stationary distribution,
    /// `rw * sqrt(Tc / 2)`.
    pub fn stationary_std(&self) -> f64 {
        self.random_walk_rad_per_sqrt_s * (self.correlation_time_s / 2.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferometerConfig {
    /// Long-minus-short delay of analyzer A (s).
    pub delay_a_s: f64,
    /// Long-minus-short delay of analyzer B (s).
    pub delay_b_s: f64,
    /// Set phase of analyzer A's variable waveplate (rad).
    pub phase_a_rad: f64,
    /// Set phase of analyzer B's variable waveplate (rad).
    pub phase_b_rad: f64,
    /// Erasure-waveplate misalignment (rad, 0 = aligned). Nonzero values
    /// leak a phase-dependent modulation into the singles rates.
    pub waveplate_misalignment_rad: f64,
    /// Per-photon optical throughput of each analyzer (coupling and optics).
    pub arm_transmission_a: f64,
    pub arm_transmission_b: f64,
    pub splitting: Splitting,
    pub drift: PhaseDriftModel,
}

impl InterferometerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delay_a_s > 0.0) || !(self.delay_b_s > 0.0) {
            return Err(Error::InvalidConfig(
                "analyzer delays must be positive".into(),
            ));
        }
        if !self.phase_a_rad.is_finite() || !self.phase_b_rad.is_finite() {
            return Err(Error::InvalidConfig("phases must be finite".into()));
        }
        if !(0.0..=std::f64::consts::FRAC_PI_4).contains(&self.waveplate_misalignment_rad) {
            return Err(Error::InvalidConfig(
                "waveplate misalignment must lie in [0, pi/4]".into(),
            ));
        }
        for t in [self.arm_transmission_a, self.arm_transmission_b] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::InvalidConfig(
                    "arm transmissions must lie in (0, 1]".into(),
                ));
            }
        }
        self.drift.validate()
    }
}

// ── outcomes ────────────────────────────────────────────────────────────────

/// Output port / detector label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    A,
    B,
}

/// Joint path outcome, signal photon first, idler second.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathPair {
    SS,
    SL,
    LS,
    LL,
}

impl PathPair {
    pub fn from_longs(signal_long: bool, idler_long: bool) -> Self {
        match (signal_long, idler_long) {
            (false, false) => PathPair::SS,
            (false, true) => PathPair::SL,
            (true, false) => PathPair::LS,
            (true, true) => PathPair::LL,
        }
    }

    /// Short-short and long-long are indistinguishable and interfere.
    pub fn interfering(self) -> bool {
        matches!(self, PathPair::SS | PathPair::LL)
    }
}

/// What reached the detectors for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Traversal {
    /// One photon at each detector.
    Coincidence {
        path: PathPair,
        time_a: f64,
        time_b: f64,
    },
    /// Both photons at the same detector (deterministic splitting only);
    /// times ascending.
    SameDetector {
        path: PathPair,
        channel: Channel,
        times: [f64; 2],
    },
    /// Exactly one photon reached a detector.
    Lone { channel: Channel, time: f64 },
    /// Neither photon reached a detector.
    Absorbed,
}

// ── analyzer pair ───────────────────────────────────────────────────────────

/// Precomputed drift realization: piecewise-constant samples of the OU
/// process on a fixed grid. Realized once per run so that concurrent or
/// re-ordered event processing sees identical phases.
#[derive(Debug, Clone)]
pub struct DriftTrajectory {
    step_s: f64,
    values: Vec<f64>,
}

impl DriftTrajectory {
    /// Exact OU discretization: stationary start, then
    /// `x' = x e^(-dt/Tc) + s sqrt(1 - e^(-2 dt/Tc)) z` with `s` the
    /// stationary std, which preserves the stationary law at every sample.
    /// A model with zero intensity consumes no randomness.
    pub fn generate<R: Rng + ?Sized>(
        model: &PhaseDriftModel,
        duration_s: f64,
        step_s: f64,
        rng: &mut R,
    ) -> Result<Self> {
        model.validate()?;
        if !(step_s > 0.0) || !(duration_s >= 0.0) {
            return Err(Error::InvalidConfig(
                "drift grid needs positive step and non-negative duration".into(),
            ));
        }
        let n = (duration_s / step_s).ceil() as usize + 1;
        let sigma = model.stationary_std();
        let mut values = vec![0.0; n];
        if sigma > 0.0 {
            let decay = (-step_s / model.correlation_time_s).exp();
            let kick = sigma * (1.0 - decay * decay).sqrt();
            let normal = rand_distr::StandardNormal;
            let mut x: f64 = sigma * rng.sample::<f64, _>(normal);
            values[0] = x;
            for v in values.iter_mut().skip(1) {
                x = x * decay + kick * rng.sample::<f64, _>(normal);
                *v = x;
            }
        }
        Ok(Self { step_s, values })
    }

    /// A flat trajectory (handy for tests and disabled drift).
    pub fn constant(value: f64) -> Self {
        Self {
            step_s: 1.0,
            values: vec![value],
        }
    }

    /// Phase at time `t_s`, clamped to the realized span.
    pub fn value_at(&self, t_s: f64) -> f64 {
        if t_s <= 0.0 {
            return self.values[0];
        }
        let idx = (t_s / self.step_s) as usize;
        self.values[idx.min(self.values.len() - 1)]
    }
}

/// The analyzer pair. Holds the static configuration plus an optional
/// drift realization; all event randomness comes from the caller's RNG.
#[derive(Debug, Clone)]
pub struct Interferometer<'a> {
    config: InterferometerConfig,
    drift: Option<&'a DriftTrajectory>,
}

impl<'a> Interferometer<'a> {
    pub fn new(config: InterferometerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            drift: None,
        })
    }

    pub fn with_drift(config: InterferometerConfig, drift: &'a DriftTrajectory) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            drift: Some(drift),
        })
    }

    pub fn config(&self) -> &InterferometerConfig {
        &self.config
    }

    /// Optical throughput toward a detector.
    pub fn arm_transmission(&self, channel: Channel) -> f64 {
        match channel {
            Channel::A => self.config.arm_transmission_a,
            Channel::B => self.config.arm_transmission_b,
        }
    }

    /// Retention probability of the erasure stage for a photon headed to
    /// `channel`. Perfect alignment keeps everything; misalignment couples
    /// the retention to the analyzer's own phase setting, which is exactly
    /// the phase-dependent singles leakage the flatness check looks for.
    pub fn retention(&self, channel: Channel) -> f64 {
        let m = (2.0 * self.config.waveplate_misalignment_rad).sin();
        if m == 0.0 {
            return 1.0;
        }
        let phi = match channel {
            Channel::A => self.config.phase_a_rad,
            Channel::B => self.config.phase_b_rad,
        };
        (1.0 + m * phi.sin()) / (1.0 + m)
    }

    /// Send one pair through both analyzers. `wall_time_s` is the run-clock
    /// time used only for the drift lookup; output times are built from
    /// `pair.emission_time`.
    pub fn traverse<R: Rng + ?Sized>(
        &self,
        pair: &PhotonPair,
        wall_time_s: f64,
        rng: &mut R,
    ) -> Traversal {
        let cfg = &self.config;
        let s_long = rng.gen_bool(0.5);
        let i_long = rng.gen_bool(0.5);
        let t = pair.emission_time;

        // Exit geometry. Probabilistic splitting confines signal to A and
        // idler to B; deterministic splitting crosses the long paths over,
        // which is what removes mixed-path cross coincidences.
        let (s_exit, s_time, i_exit, i_time) = match cfg.splitting {
            Splitting::Probabilistic => (
                Channel::A,
                t + if s_long { cfg.delay_a_s } else { 0.0 },
                Channel::B,
                t + if i_long { cfg.delay_b_s } else { 0.0 },
            ),
            Splitting::Deterministic => (
                if s_long { Channel::B } else { Channel::A },
                t + if s_long { cfg.delay_b_s } else { 0.0 },
                if i_long { Channel::A } else { Channel::B },
                t + if i_long { cfg.delay_a_s } else { 0.0 },
            ),
        };

        let s_alive = rng.gen::<f64>() < self.arm_transmission(s_exit);
        let i_alive = rng.gen::<f64>() < self.arm_transmission(i_exit);

        // Output-port selection. Indistinguishable pairs draw from the joint
        // interference law; everything else draws independent fair ports.
        let (mut s_keep, mut i_keep) = match (s_alive, i_alive) {
            (true, true) if s_long == i_long => {
                let drift = self.drift.map_or(0.0, |d| d.value_at(wall_time_s));
                let phase = interference_phase(
                    pair.signal_freq,
                    pair.idler_freq,
                    cfg.delay_a_s,
                    cfg.delay_b_s,
                    cfg.phase_a_rad,
                    cfg.phase_b_rad,
                    drift,
                );
                joint_port_draw(phase, rng)
            }
            (true, true) => (rng.gen_bool(0.5), rng.gen_bool(0.5)),
            (true, false) => (rng.gen_bool(0.5), false),
            (false, true) => (false, rng.gen_bool(0.5)),
            (false, false) => (false, false),
        };

        if s_keep {
            s_keep = rng.gen::<f64>() < self.retention(s_exit);
        }
        if i_keep {
            i_keep = rng.gen::<f64>() < self.retention(i_exit);
        }

        let path = PathPair::from_longs(s_long, i_long);
        match (s_keep, i_keep) {
            (true, true) if s_exit != i_exit => {
                let (time_a, time_b) = if s_exit == Channel::A {
                    (s_time, i_time)
                } else {
                    (i_time, s_time)
                };
                Traversal::Coincidence {
                    path,
                    time_a,
                    time_b,
                }
            }
            (true, true) => Traversal::SameDetector {
                path,
                channel: s_exit,
                times: if s_time <= i_time {
                    [s_time, i_time]
                } else {
                    [i_time, s_time]
                },
            },
            (true, false) => Traversal::Lone {
                channel: s_exit,
                time: s_time,
            },
            (false, true) => Traversal::Lone {
                channel: i_exit,
                time: i_time,
            },
            (false, false) => Traversal::Absorbed,
        }
    }
}

/// Joint port outcome for an indistinguishable pair: both photons exit
/// toward their detectors with probability (1 + cos phase)/4, each lone
/// outcome with probability (1 - cos phase)/4, neither with the remainder.
/// Marginals are exactly 1/2 regardless of phase.
fn joint_port_draw<R: Rng + ?Sized>(phase: f64, rng: &mut R) -> (bool, bool) {
    let c = phase.cos();
    let p_both = 0.25 * (1.0 + c);
    let p_lone = 0.25 * (1.0 - c);
    let u = rng.gen::<f64>();
    if u < p_both {
        (true, true)
    } else if u < p_both + p_lone {
        (true, false)
    } else if u < p_both + 2.0 * p_lone {
        (false, true)
    } else {
        (false, false)
    }
}

/// The joint two-photon phase,
/// `w_s dt_A + w_i dt_B + phi_A + phi_B + drift`.
pub fn interference_phase(
    signal_freq: f64,
    idler_freq: f64,
    delay_a_s: f64,
    delay_b_s: f64,
    phase_a_rad: f64,
    phase_b_rad: f64,
    drift_rad: f64,
) -> f64 {
    signal_freq * delay_a_s + idler_freq * delay_b_s + phase_a_rad + phase_b_rad + drift_rad
}

/// Wrap a phase into (-pi, pi].
pub fn wrap_phase(phase: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let wrapped = phase - tau * (phase / tau).round();
    if wrapped <= -std::f64::consts::PI {
        wrapped + tau
    } else {
        wrapped
    }
}

// ── analytic rate ───────────────────────────────────────────────────────────

/// Result of integrating the coincidence law over the joint spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoincidenceRate {
    /// Normalized modulation factor, (1 + visibility cos phase)/2.
    pub factor: f64,
    /// Envelope visibility in [0, 1].
    pub visibility: f64,
    /// Mean fringe phase, wrapped to (-pi, pi].
    pub phase: f64,
    /// Achieved quadrature error estimate (grid-refinement difference).
    pub error_estimate: f64,
}

const QUADRATURE_TOLERANCE: f64 = 1e-6;
const QUADRATURE_MAX_NODES: usize = 20_001;
const QUADRATURE_SIGMA_SPAN: f64 = 8.0;

/// Expected coincidence modulation for a spectrum and analyzer settings,
/// by numerical integration of the interference law over the joint
/// spectral intensity:
///
/// ```text
/// factor = Integral |f|^2 [1 + cos(w_s dt_A + w_i dt_B + phi)] / (2 Integral |f|^2)
/// ```
///
/// The integral is evaluated as a 2-D composite Simpson rule over the sum
/// and difference frequency offsets (+-8 sigma each), with the rapidly
/// rotating carrier at the spectral center factored out exactly so the grid
/// only has to resolve the residual oscillation. Node counts scale with
/// that oscillation up to a cap; the result carries the grid-refinement
/// error estimate, and refusal to converge is an error, not a wrong number.
pub fn analytic_coincidence_rate(
    spectrum: &JointSpectrum,
    delay_a_s: f64,
    delay_b_s: f64,
    phase_a_rad: f64,
    phase_b_rad: f64,
) -> Result<CoincidenceRate> {
    spectrum.validate()?;
    if !(delay_a_s > 0.0 && delay_b_s > 0.0) {
        return Err(Error::InvalidConfig(
            "analyzer delays must be positive".into(),
        ));
    }
    // Half-sums because w_s = (w_p + du + dv)/2 maps frequency offsets to
    // phase with a factor 1/2 in each rotated coordinate.
    let a = 0.5 * (delay_a_s + delay_b_s);
    let b = 0.5 * (delay_a_s - delay_b_s);
    let sp = spectrum.pump_linewidth;
    let sm = spectrum.difference_bandwidth;

    let n_u = node_count(2.0 * QUADRATURE_SIGMA_SPAN * sp * a.abs());
    let n_v = node_count(2.0 * QUADRATURE_SIGMA_SPAN * sm * b.abs());
    let coarse = envelope_quadrature(sp, sm, a, b, n_u, n_v);
    let fine = envelope_quadrature(
        sp,
        sm,
        a,
        b,
        refine_nodes(n_u),
        refine_nodes(n_v),
    );
    let error_estimate = ((fine.0 - coarse.0).abs()).max((fine.1 - coarse.1).abs());

    let carrier = spectrum.pump_center * a + phase_a_rad + phase_b_rad;
    let visibility = fine.0.hypot(fine.1);
    let phase = wrap_phase(carrier + fine.1.atan2(fine.0));
    let factor = 0.5 * (1.0 + visibility * phase.cos());

    if error_estimate > QUADRATURE_TOLERANCE {
        return Err(Error::QuadratureNotConverged { estimate: factor });
    }
    Ok(CoincidenceRate {
        factor,
        visibility,
        phase,
        error_estimate,
    })
}

/// Normalized envelope integral
/// `E[exp(i (du a + dv b))]` over `du ~ N(0, sp^2)`, `dv ~ N(0, sm^2)`,
/// returned as (Re, Im). Plain tensor Simpson rule; the weight and the
/// oscillation are evaluated pointwise on the 2-D grid.
fn envelope_quadrature(
    sp: f64,
    sm: f64,
    a: f64,
    b: f64,
    n_u: usize,
    n_v: usize,
) -> (f64, f64) {
    let hu = 2.0 * QUADRATURE_SIGMA_SPAN * sp / (n_u - 1) as f64;
    let hv = 2.0 * QUADRATURE_SIGMA_SPAN * sm / (n_v - 1) as f64;

    // Per-axis tables: Gaussian weight times Simpson coefficient, and the
    // axis phase split with the angle-addition identity in the inner loop.
    let mut v_w = Vec::with_capacity(n_v);
    let mut v_cos = Vec::with_capacity(n_v);
    let mut v_sin = Vec::with_capacity(n_v);
    for k in 0..n_v {
        let dv = -QUADRATURE_SIGMA_SPAN * sm + k as f64 * hv;
        v_w.push(simpson_coeff(k, n_v) * (-0.5 * (dv / sm) * (dv / sm)).exp());
        let ph = dv * b;
        v_cos.push(ph.cos());
        v_sin.push(ph.sin());
    }

    let mut num_re = 0.0;
    let mut num_im = 0.0;
    let mut den = 0.0;
    for j in 0..n_u {
        let du = -QUADRATURE_SIGMA_SPAN * sp + j as f64 * hu;
        let wu = simpson_coeff(j, n_u) * (-0.5 * (du / sp) * (du / sp)).exp();
        let ph = du * a;
        let (cu, su) = (ph.cos(), ph.sin());
        for k in 0..n_v {
            let w = wu * v_w[k];
            num_re += w * (cu * v_cos[k] - su * v_sin[k]);
            num_im += w * (su * v_cos[k] + cu * v_sin[k]);
            den += w;
        }
    }
    (num_re / den, num_im / den)
}

fn simpson_coeff(k: usize, n: usize) -> f64 {
    if k == 0 || k == n - 1 {
        1.0
    } else if k % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

/// Odd node count proportional to the phase swept across the domain.
fn node_count(phase_span: f64) -> usize {
    let n = (phase_span * 4.0).ceil() as usize + 101;
    let n = n.min(QUADRATURE_MAX_NODES);
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

fn refine_nodes(n: usize) -> usize {
    (2 * n - 1).min(2 * QUADRATURE_MAX_NODES - 1)
}

// ── regime check ────────────────────────────────────────────────────────────

/// Separation of the delay from both coherence scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeReport {
    /// min(dt_A, dt_B) / tau_single; must be >= 10 to suppress
    /// single-photon interference.
    pub delay_over_single: f64,
    /// max(dt_A, dt_B) / tau_pump; must be <= 0.1 to keep emission-time
    /// indistinguishability.
    pub delay_over_pump: f64,
    pub satisfied: bool,
}

pub const REGIME_MIN_SINGLE_RATIO: f64 = 10.0;
pub const REGIME_MAX_PUMP_RATIO: f64 = 0.1;

/// Check the working regime `tau_single << delay << tau_pump`.
pub fn regime_check(
    spectrum: &JointSpectrum,
    delay_a_s: f64,
    delay_b_s: f64,
) -> Result<RegimeReport> {
    let times = crate::source::coherence_times(spectrum)?;
    let delay_over_single = delay_a_s.min(delay_b_s) / times.tau_single;
    let delay_over_pump = delay_a_s.max(delay_b_s) / times.tau_pump;
    Ok(RegimeReport {
        delay_over_single,
        delay_over_pump,
        satisfied: delay_over_single >= REGIME_MIN_SINGLE_RATIO
            && delay_over_pump <= REGIME_MAX_PUMP_RATIO,
    })
}
