//! Market data model: utilities, instances, and the random channel model.

mod channel;
mod instance;
mod utility;

pub use channel::{
    calibrate_snr_scale, generate_instance, ChannelModelConfig, DEFAULT_SNR_SCALE, MIN_DISTANCE_M,
    RATE_UNIT_BPS,
};
pub use instance::{effective_resource, payoff, DemandMatrix, GameInstance, PriceVector};
pub use utility::{UtilityFamily, UtilityFunction, DEFAULT_WEIGHT};
