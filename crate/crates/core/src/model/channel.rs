//! Random market instances from a single-cell outdoor channel model.
//!
//! Users and providers are dropped uniformly in a square. The channel gain
//! amplitude is `xi / d^(alpha/2)` with `xi` Rayleigh distributed, and the
//! offset is the Shannon rate `W/2 * log2(1 + snr * |h|^2 / W)`, reported in
//! Mbit/s so that utilities of the effective resource stay well scaled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::instance::{first_duplicate, GameInstance};
use super::utility::UtilityFunction;
use crate::error::{Error, Result};

/// Offsets are expressed in Mbit/s per unit of resource.
pub const RATE_UNIT_BPS: f64 = 1e6;

/// Monte-Carlo calibrated so that the mean offset at 5 m sits at 68 Mbit/s
/// with the default bandwidth and path-loss exponent (see
/// [`calibrate_snr_scale`]).
pub const DEFAULT_SNR_SCALE: f64 = 2.402_172_576e11;

/// Distances are floored here so co-located nodes do not produce an
/// unbounded gain.
pub const MIN_DISTANCE_M: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModelConfig {
    pub area_side_m: f64,
    pub bandwidth_hz: f64,
    pub path_loss_exponent: f64,
    /// Transmit-power-to-noise constant (stands in for `E_b / N_0`).
    pub snr_scale: f64,
    pub rayleigh_scale: f64,
}

impl Default for ChannelModelConfig {
    fn default() -> Self {
        Self {
            area_side_m: 200.0,
            bandwidth_hz: 20e6,
            path_loss_exponent: 3.0,
            snr_scale: DEFAULT_SNR_SCALE,
            rayleigh_scale: 1.0,
        }
    }
}

impl ChannelModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("area side", self.area_side_m)?;
        positive("bandwidth", self.bandwidth_hz)?;
        positive("path-loss exponent", self.path_loss_exponent)?;
        positive("snr scale", self.snr_scale)?;
        positive("rayleigh scale", self.rayleigh_scale)
    }

    /// Offset in Mbit/s for a given fading draw and distance.
    pub fn offset(&self, xi: f64, distance_m: f64) -> f64 {
        let d = distance_m.max(MIN_DISTANCE_M);
        let gain = xi * xi / d.powf(self.path_loss_exponent);
        0.5 * self.bandwidth_hz * (self.snr_scale * gain / self.bandwidth_hz).ln_1p()
            / std::f64::consts::LN_2
            / RATE_UNIT_BPS
    }

    fn sample_xi<R: Rng>(&self, rng: &mut R) -> f64 {
        // Inverse CDF of the Rayleigh distribution.
        let u: f64 = rng.gen();
        self.rayleigh_scale * (-2.0 * (1.0 - u).ln()).sqrt()
    }

    /// Monte-Carlo estimate of the mean offset at a fixed distance.
    pub fn mean_offset_at(&self, distance_m: f64, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total: f64 = (0..samples)
            .map(|_| self.offset(self.sample_xi(&mut rng), distance_m))
            .sum();
        total / samples as f64
    }
}

/// Bisects (in log space) for the `snr_scale` that puts the mean offset at
/// `distance_m` on `target_mbps`. Uses common random numbers across probes,
/// so the mean is monotone in the scale.
pub fn calibrate_snr_scale(
    base: &ChannelModelConfig,
    distance_m: f64,
    target_mbps: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    let mean_at = |scale: f64| {
        let cfg = ChannelModelConfig {
            snr_scale: scale,
            ..base.clone()
        };
        cfg.mean_offset_at(distance_m, samples, seed)
    };
    let (mut lo, mut hi) = (1.0f64, 1e20f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mean_at(mid) < target_mbps {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    (lo * hi).sqrt()
}

/// Draws a random instance: providers then users are placed uniformly, every
/// pair gets an independent Rayleigh draw, supplies are 1 and every user gets
/// `utility`. Deterministic in `seed`.
pub fn generate_instance(
    cfg: &ChannelModelConfig,
    users: usize,
    providers: usize,
    utility: UtilityFunction,
    seed: u64,
) -> Result<GameInstance> {
    cfg.validate()?;
    if users == 0 || providers == 0 {
        return Err(Error::InvalidParameter(
            "need at least one user and one provider".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = cfg.area_side_m;
    let place = |rng: &mut ChaCha8Rng| (rng.gen::<f64>() * side, rng.gen::<f64>() * side);
    let provider_pos: Vec<_> = (0..providers).map(|_| place(&mut rng)).collect();
    let user_pos: Vec<_> = (0..users).map(|_| place(&mut rng)).collect();

    let distance = |i: usize, j: usize| {
        let (ux, uy) = user_pos[i];
        let (px, py) = provider_pos[j];
        (ux - px).hypot(uy - py)
    };
    let mut c: Vec<f64> = (0..users * providers)
        .map(|k| {
            cfg.offset(
                cfg.sample_xi(&mut rng),
                distance(k / providers, k % providers),
            )
        })
        .collect();

    // Equal offsets have probability zero in the continuous model but not in
    // floating point; redraw the later entry of any colliding pair.
    while let Some((_, b)) = first_duplicate(&c) {
        c[b] = cfg.offset(
            cfg.sample_xi(&mut rng),
            distance(b / providers, b % providers),
        );
    }

    GameInstance::new(
        users,
        providers,
        c,
        vec![1.0; providers],
        vec![utility; users],
        seed,
    )
}
