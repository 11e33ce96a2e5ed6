//! Closed-form link model: fiber transmittance, per-BSA success probability,
//! the memory count needed to absorb every source emission, and the pair rate
//! once that count is reached.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Attenuation length quoted alongside the saturation bound, in km.
pub const REFERENCE_ATTENUATION_LENGTH_KM: f64 = 21.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{0} must be strictly positive and finite (got {1})")]
    NotPositive(&'static str, f64),
    #[error("{0} must lie in [0, 1] (got {1})")]
    NotProbability(&'static str, f64),
    #[error("{0} must be non-negative (got {1})")]
    Negative(&'static str, f64),
    #[error("both sides of a link must share the source rate ({0} Hz vs {1} Hz)")]
    RateMismatch(f64, f64),
}

/// Fiber loss, in one of its two usual forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attenuation {
    DbPerKm(f64),
    AttenuationLengthKm(f64),
}

impl Attenuation {
    /// `L₀ = 10 / (d·ln 10)`.
    pub fn attenuation_length_km(self) -> f64 {
        match self {
            Attenuation::AttenuationLengthKm(l0) => l0,
            Attenuation::DbPerKm(d) => 10.0 / (d * std::f64::consts::LN_10),
        }
    }

    pub fn transmittance(self, distance_km: f64) -> f64 {
        match self {
            Attenuation::AttenuationLengthKm(l0) => (-distance_km / l0).exp(),
            Attenuation::DbPerKm(d) => 10f64.powf(-d * distance_km / 10.0),
        }
    }

    fn value(self) -> f64 {
        match self {
            Attenuation::DbPerKm(v) | Attenuation::AttenuationLengthKm(v) => v,
        }
    }
}

impl std::fmt::Display for Attenuation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Attenuation::DbPerKm(d) => write!(f, "{d} dB/km"),
            Attenuation::AttenuationLengthKm(l) => write!(f, "L0 = {l} km"),
        }
    }
}

/// One side of a source-in-the-middle link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Source-to-node fiber length `L`.
    pub per_side_distance_km: f64,
    pub c_fiber_km_s: f64,
    pub attenuation: Attenuation,
    pub p_bsa: f64,
    pub f_epps_hz: f64,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let d = self.per_side_distance_km;
        if !(d.is_finite() && d >= 0.0) {
            return Err(ModelError::Negative("distance", self.per_side_distance_km));
        }
        for (name, v) in [
            ("c_fiber", self.c_fiber_km_s),
            ("attenuation", self.attenuation.value()),
            ("f_epps", self.f_epps_hz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::NotPositive(name, v));
            }
        }
        if !(0.0..=1.0).contains(&self.p_bsa) {
            return Err(ModelError::NotProbability("p_bsa", self.p_bsa));
        }
        Ok(())
    }

    pub fn with_attenuation(self, attenuation: Attenuation) -> Self {
        ChannelParams {
            attenuation,
            ..self
        }
    }
}

/// `p_fiber` for the side's fiber length.
pub fn fiber_transmittance(params: &ChannelParams) -> f64 {
    params.attenuation.transmittance(params.per_side_distance_km)
}

/// `p_success = p_BSA · p_fiber`.
pub fn bsa_success_probability(params: &ChannelParams) -> f64 {
    params.p_bsa * fiber_transmittance(params)
}

/// Expected number of memories held by heralded successes at any moment
/// once every emission round is attempted: `(2L/c) · p_success · f`.
pub fn memory_occupancy(params: &ChannelParams) -> f64 {
    let lock_s = 2.0 * params.per_side_distance_km / params.c_fiber_km_s;
    lock_s * bsa_success_probability(params) * params.f_epps_hz
}

/// Smallest memory count that absorbs every emission round:
/// `⌈(2L/c) · p_success · f⌉`, ceiling taken on the unrounded product.
pub fn min_memories(params: &ChannelParams) -> u64 {
    memory_occupancy(params).ceil() as u64
}

/// Pair rate once both nodes attempt every round: `f · p_A · p_B`.
pub fn saturated_pair_rate(a: &ChannelParams, b: &ChannelParams) -> Result<f64, ModelError> {
    if a.f_epps_hz != b.f_epps_hz {
        return Err(ModelError::RateMismatch(a.f_epps_hz, b.f_epps_hz));
    }
    Ok(a.f_epps_hz * bsa_success_probability(a) * bsa_success_probability(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn side(l: f64, att: Attenuation, p_bsa: f64) -> ChannelParams {
        ChannelParams {
            per_side_distance_km: l,
            c_fiber_km_s: 208189.0,
            attenuation: att,
            p_bsa,
            f_epps_hz: 1e6,
        }
    }

    const L0: Attenuation = Attenuation::AttenuationLengthKm(21.0);
    const DB: Attenuation = Attenuation::DbPerKm(0.2);

    #[test]
    fn transmittance_examples() {
        assert_eq!(fiber_transmittance(&side(0.0, L0, 0.5)), 1.0);
        assert!((fiber_transmittance(&side(21.0, L0, 0.5)) - (-1f64).exp()).abs() < 1e-15);
        assert!((fiber_transmittance(&side(10.0, DB, 0.5)) - 0.630_957_344_480_193).abs() < 1e-12);
    }

    #[test]
    fn parametrizations_agree() {
        for d in [0.05, 0.2, 0.35, 1.0] {
            let l0 = Attenuation::AttenuationLengthKm(Attenuation::DbPerKm(d).attenuation_length_km());
            for l in [0.0, 0.5, 3.0, 10.0, 50.0] {
                let a = Attenuation::DbPerKm(d).transmittance(l);
                let b = l0.transmittance(l);
                assert!((a - b).abs() < 1e-12, "d={d} l={l}");
            }
        }
    }

    #[test]
    fn success_probability_examples() {
        assert_eq!(bsa_success_probability(&side(0.0, L0, 0.5)), 0.5);
        let p = bsa_success_probability(&side(10.0, L0, 0.5));
        assert!((p - 0.5 * (-10.0f64 / 21.0).exp()).abs() < 1e-15);
        assert!((p - 0.310_572_578_807_7).abs() < 1e-12);
        assert_eq!(bsa_success_probability(&side(0.0, L0, 1.0)), 1.0);
    }

    #[test]
    fn min_memories_examples() {
        assert_eq!(min_memories(&side(0.0, L0, 0.5)), 0);
        assert_eq!(min_memories(&side(0.5, L0, 0.5)), 3);
        assert_eq!(min_memories(&side(10.0, DB, 0.5)), 31);
        assert_eq!(min_memories(&side(10.0, L0, 0.5)), 30);
        assert!((memory_occupancy(&side(10.0, L0, 0.5)) - 29.84).abs() < 0.01);
        assert!((memory_occupancy(&side(10.0, DB, 0.5)) - 30.31).abs() < 0.01);
    }

    #[test]
    fn saturated_rate_examples() {
        let lossless = side(0.0, L0, 1.0);
        assert_eq!(saturated_pair_rate(&lossless, &lossless).unwrap(), 1e6);
        let s = side(0.5, L0, 0.5);
        let r = saturated_pair_rate(&s, &s).unwrap();
        assert!((r - 1e6 * (0.5 * (-0.5f64 / 21.0).exp()).powi(2)).abs() < 1e-6);
        assert!((r - 2.384e5).abs() < 100.0);
        let dead = side(0.5, L0, 0.0);
        assert_eq!(saturated_pair_rate(&dead, &s).unwrap(), 0.0);
        let mut other = s;
        other.f_epps_hz = 2e6;
        assert!(saturated_pair_rate(&s, &other).is_err());
    }

    #[test]
    fn min_memories_monotone_in_rate_and_distance() {
        let mut prev = 0;
        for f in [1e4, 1e5, 1e6, 1e7] {
            let mut p = side(5.0, L0, 0.5);
            p.f_epps_hz = f;
            let n = min_memories(&p);
            assert!(n >= prev);
            prev = n;
        }
        // occupancy grows with L up to L = L0, where L·e^{-L/L0} peaks
        let mut prev = 0;
        for l in [0.0, 1.0, 5.0, 10.0, 15.0, 21.0] {
            let n = min_memories(&side(l, L0, 0.5));
            assert!(n >= prev);
            prev = n;
        }
    }

    #[test]
    fn validation() {
        assert!(side(1.0, L0, 0.5).validate().is_ok());
        assert!(side(-1.0, L0, 0.5).validate().is_err());
        assert!(side(1.0, Attenuation::DbPerKm(0.0), 0.5).validate().is_err());
        assert!(side(1.0, L0, 1.5).validate().is_err());
    }
}
