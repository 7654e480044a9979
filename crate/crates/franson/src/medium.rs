//! Scattering samples: thin slabs of turbid biological media (milk,
//! tissue) placed in one or both photon paths.
//!
//! Single-mode fiber collection only accepts light that kept its original
//! mode, so any photon that scatters or is absorbed inside the slab is
//! lost from the measurement. Survival through thickness `z` follows a
//! Beer-Lambert law with an effective extinction built from the reduced
//! scattering coefficient and the absorption coefficient,
//!
//! ```text
//! T(lambda) = exp(-(mu_s'(lambda) + mu_a) z)
//! mu_s'(lambda) = mu_s'(lambda_ref) * (lambda / lambda_ref)^(-b)
//! ```
//!
//! with the usual power-law wavelength dependence of tissue scattering
//! (exponent `b`, often near zero over a narrow band). Coefficients are
//! per centimeter, the customary unit for these media; thicknesses are
//! meters like every other length in the crate.
//!
//! Attenuation destroys photons but never perturbs the frequencies of the
//! pairs that survive, which is what lets interference contrast recover
//! after the slab: the sample thins the ensemble without decohering it.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::wavelength;

// ── media ───────────────────────────────────────────────────────────────────

/// Bulk optical properties of one medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalMedium {
    /// Reduced scattering coefficient at the reference wavelength (cm^-1).
    pub reduced_scattering_per_cm: f64,
    /// Absorption coefficient (cm^-1), taken wavelength-flat over our band.
    pub absorption_per_cm: f64,
    /// Scattering anisotropy `g` in [0, 1).
    pub anisotropy: f64,
    /// Scattering power `b`: exponent of the wavelength power law.
    pub scattering_power: f64,
    /// Wavelength (m) at which `reduced_scattering_per_cm` is quoted.
    pub reference_wavelength_m: f64,
}

impl OpticalMedium {
    pub fn validate(&self) -> Result<()> {
        if !(self.reduced_scattering_per_cm >= 0.0) || !(self.absorption_per_cm >= 0.0) {
            return Err(Error::InvalidConfig(
                "scattering and absorption coefficients must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.anisotropy) {
            return Err(Error::InvalidConfig(
                "anisotropy must lie in [0, 1)".into(),
            ));
        }
        if !(self.scattering_power >= 0.0) {
            return Err(Error::InvalidConfig(
                "scattering power must be non-negative".into(),
            ));
        }
        if !(self.reference_wavelength_m > 0.0) {
            return Err(Error::InvalidConfig(
                "reference wavelength must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Reduced scattering coefficient (cm^-1) at `wavelength_m`.
    pub fn reduced_scattering_at(&self, wavelength_m: f64) -> f64 {
        self.reduced_scattering_per_cm
            * (wavelength_m / self.reference_wavelength_m).powf(-self.scattering_power)
    }

    /// Full scattering coefficient `mu_s = mu_s' / (1 - g)` (cm^-1) at the
    /// reference wavelength.
    pub fn scattering_coefficient(&self) -> f64 {
        self.reduced_scattering_per_cm / (1.0 - self.anisotropy)
    }

    /// Effective extinction (cm^-1) at `wavelength_m`.
    pub fn extinction_at(&self, wavelength_m: f64) -> f64 {
        self.reduced_scattering_at(wavelength_m) + self.absorption_per_cm
    }
}

// ── slabs ───────────────────────────────────────────────────────────────────

/// A sample of one medium with a definite thickness. Zero thickness is the
/// canonical "no sample" and transmits exactly 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slab {
    pub medium: OpticalMedium,
    /// Geometric thickness (m).
    pub thickness_m: f64,
}

impl Slab {
    pub fn new(medium: OpticalMedium, thickness_m: f64) -> Result<Self> {
        medium.validate()?;
        if !(thickness_m >= 0.0 && thickness_m.is_finite()) {
            return Err(Error::InvalidConfig(
                "slab thickness must be non-negative".into(),
            ));
        }
        Ok(Self {
            medium,
            thickness_m,
        })
    }

    /// Clear path: a zero-thickness slab, unit transmission at every
    /// wavelength.
    pub fn none() -> Self {
        Self {
            medium: OpticalMedium {
                reduced_scattering_per_cm: 0.0,
                absorption_per_cm: 0.0,
                anisotropy: 0.0,
                scattering_power: 0.0,
                reference_wavelength_m: 800e-9,
            },
            thickness_m: 0.0,
        }
    }

    /// Single-photon survival probability at `wavelength_m`.
    pub fn transmission(&self, wavelength_m: f64) -> f64 {
        let z_cm = self.thickness_m * 100.0;
        (-self.medium.extinction_at(wavelength_m) * z_cm).exp()
    }

    /// Survival probability for both photons of a pair, given their angular
    /// frequencies. Losses are independent per photon.
    pub fn pair_transmission(&self, signal_freq: f64, idler_freq: f64) -> f64 {
        self.transmission(wavelength(signal_freq)) * self.transmission(wavelength(idler_freq))
    }

    /// Draw which photons of a pair make it through.
    pub fn survives<R: Rng + ?Sized>(
        &self,
        signal_freq: f64,
        idler_freq: f64,
        rng: &mut R,
    ) -> Survival {
        let s = rng.gen::<f64>() < self.transmission(wavelength(signal_freq));
        let i = rng.gen::<f64>() < self.transmission(wavelength(idler_freq));
        match (s, i) {
            (true, true) => Survival::Both,
            (true, false) => Survival::SignalOnly,
            (false, true) => Survival::IdlerOnly,
            (false, false) => Survival::Neither,
        }
    }
}

/// Outcome of sending one pair at a slab.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Survival {
    Both,
    SignalOnly,
    IdlerOnly,
    Neither,
}

// ── presets ─────────────────────────────────────────────────────────────────

#[derive(Debug, Deserialize)]
struct MediumToml {
    reduced_scattering_per_cm: f64,
    absorption_per_cm: f64,
    anisotropy: f64,
    scattering_power: f64,
    reference_wavelength_nm: f64,
}

#[derive(Debug, Deserialize)]
struct MediaFile {
    media: BTreeMap<String, MediumToml>,
}

/// Parse a media table. Format:
///
/// ```toml
/// [media.skim_milk]
/// reduced_scattering_per_cm = 7.5
/// absorption_per_cm = 0.05
/// anisotropy = 0.0
/// scattering_power = 0.0
/// reference_wavelength_nm = 800.0
/// ```
pub fn parse_media_toml(text: &str) -> Result<BTreeMap<String, OpticalMedium>> {
    let file: MediaFile = toml::from_str(text)?;
    let mut out = BTreeMap::new();
    for (name, raw) in file.media {
        let medium = OpticalMedium {
            reduced_scattering_per_cm: raw.reduced_scattering_per_cm,
            absorption_per_cm: raw.absorption_per_cm,
            anisotropy: raw.anisotropy,
            scattering_power: raw.scattering_power,
            reference_wavelength_m: raw.reference_wavelength_nm * 1e-9,
        };
        medium.validate().map_err(|e| {
            Error::InvalidConfig(format!("medium `{name}`: {e}"))
        })?;
        out.insert(name, medium);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn skim() -> OpticalMedium {
        OpticalMedium {
            reduced_scattering_per_cm: 7.5,
            absorption_per_cm: 0.05,
            anisotropy: 0.0,
            scattering_power: 0.0,
            reference_wavelength_m: 800e-9,
        }
    }

    const W810: f64 = 810e-9;

    #[test]
    fn transmission_matches_hand_computed_values() {
        // 1556 um of skim milk, flat spectrum (b = 0):
        // extinction 7.55 cm^-1, path 0.1556 cm, exponent 1.174780.
        let slab = Slab::new(skim(), 1556e-6).unwrap();
        let t = slab.transmission(W810);
        assert!((t - 0.3088869).abs() < 1e-6, "T = {t:.7}");
        let pair = slab.pair_transmission(
            crate::units::angular_frequency(W810),
            crate::units::angular_frequency(W810),
        );
        assert!((pair - 0.0954111).abs() < 1e-6, "pair T = {pair:.7}");
    }

    #[test]
    fn pair_transmission_is_product_of_singles() {
        let slab = Slab::new(skim(), 500e-6).unwrap();
        let ws = crate::units::angular_frequency(809e-9);
        let wi = crate::units::angular_frequency(811e-9);
        let product =
            slab.transmission(wavelength(ws)) * slab.transmission(wavelength(wi));
        assert!((slab.pair_transmission(ws, wi) - product).abs() < 1e-15);
        // Degenerate case collapses to T^2 = exp(-2 mu z).
        let t = slab.transmission(W810);
        let w = crate::units::angular_frequency(W810);
        assert!((slab.pair_transmission(w, w) - t * t).abs() < 1e-12);
    }

    #[test]
    fn slabs_compose_in_thickness() {
        // exp is multiplicative: T(z1) T(z2) = T(z1 + z2).
        let a = Slab::new(skim(), 300e-6).unwrap();
        let b = Slab::new(skim(), 700e-6).unwrap();
        let c = Slab::new(skim(), 1000e-6).unwrap();
        let composed = a.transmission(W810) * b.transmission(W810);
        assert!((composed - c.transmission(W810)).abs() < 1e-12);
    }

    #[test]
    fn transmission_orders_with_thickness_and_turbidity() {
        let thin = Slab::new(skim(), 100e-6).unwrap();
        let thick = Slab::new(skim(), 1000e-6).unwrap();
        assert!(thin.transmission(W810) > thick.transmission(W810));

        let mut denser = skim();
        denser.reduced_scattering_per_cm = 25.0;
        let whole = Slab::new(denser, 100e-6).unwrap();
        assert!(whole.transmission(W810) < thin.transmission(W810));

        assert_eq!(Slab::none().transmission(W810), 1.0);
        assert_eq!(Slab::new(skim(), 0.0).unwrap().transmission(W810), 1.0);
    }

    #[test]
    fn scattering_power_scales_with_wavelength() {
        let mut m = skim();
        m.scattering_power = 1.0;
        // mu_s'(1000 nm) = mu_s'(800 nm) * (1000/800)^-1 = 0.8 * base.
        let expected = 7.5 * 0.8;
        assert!((m.reduced_scattering_at(1000e-9) - expected).abs() < 1e-12);
        // Longer wavelengths scatter less, so they transmit better.
        let slab = Slab::new(m, 1000e-6).unwrap();
        assert!(slab.transmission(1000e-9) > slab.transmission(800e-9));
        // b = 0 is wavelength-flat.
        assert_eq!(
            skim().reduced_scattering_at(400e-9),
            skim().reduced_scattering_at(1600e-9)
        );
    }

    #[test]
    fn full_scattering_coefficient_unreduces_anisotropy() {
        let mut m = skim();
        assert_eq!(m.scattering_coefficient(), 7.5);
        m.anisotropy = 0.9;
        assert!((m.scattering_coefficient() - 75.0).abs() < 1e-9);
    }

    #[test]
    fn survival_counts_match_bernoulli_products() {
        let slab = Slab::new(skim(), 794e-6).unwrap();
        let w = crate::units::angular_frequency(W810);
        let p = slab.transmission(W810);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
        let n = 400_000usize;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let k = match slab.survives(w, w, &mut rng) {
                Survival::Both => 0,
                Survival::SignalOnly => 1,
                Survival::IdlerOnly => 2,
                Survival::Neither => 3,
            };
            counts[k] += 1;
        }
        let probs = [p * p, p * (1.0 - p), (1.0 - p) * p, (1.0 - p) * (1.0 - p)];
        for (k, (&c, &q)) in counts.iter().zip(probs.iter()).enumerate() {
            let se = (q * (1.0 - q) * n as f64).sqrt();
            assert!(
                (c as f64 - q * n as f64).abs() < 5.0 * se,
                "outcome {k}: {c} vs expected {:.1}",
                q * n as f64
            );
        }
    }

    #[test]
    fn media_toml_parses_and_validates() {
        let text = r#"
            [media.skim_milk]
            reduced_scattering_per_cm = 7.5
            absorption_per_cm = 0.05
            anisotropy = 0.0
            scattering_power = 0.0
            reference_wavelength_nm = 800.0

            [media.chicken_breast]
            reduced_scattering_per_cm = 2.0
            absorption_per_cm = 0.05
            anisotropy = 0.0
            scattering_power = 0.0
            reference_wavelength_nm = 800.0
        "#;
        let media = parse_media_toml(text).unwrap();
        assert_eq!(media.len(), 2);
        assert_eq!(media["skim_milk"].reduced_scattering_per_cm, 7.5);
        // nm -> m conversion picks up one rounding ulp; compare loosely.
        assert!((media["chicken_breast"].reference_wavelength_m - 800e-9).abs() < 1e-20);

        let bad = r#"
            [media.broken]
            reduced_scattering_per_cm = 7.5
            absorption_per_cm = 0.05
            anisotropy = 1.5
            scattering_power = 0.0
            reference_wavelength_nm = 800.0
        "#;
        assert!(parse_media_toml(bad).is_err());
    }

    #[test]
    fn invalid_media_are_rejected() {
        let mut m = skim();
        m.anisotropy = 1.0;
        assert!(m.validate().is_err());
        m = skim();
        m.reduced_scattering_per_cm = -1.0;
        assert!(m.validate().is_err());
        assert!(Slab::new(skim(), -1e-6).is_err());
    }
}
