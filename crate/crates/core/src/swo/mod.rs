//! Social-welfare equilibrium: market-clearing prices, the unique demand
//! matrix, optimality certification, and diagnostics.

mod best_response;
mod decode;
mod deviation;
mod kkt;
mod oracle;
mod prices;

pub use best_response::{best_response, user_best_response, BestResponse, DEFAULT_TIE_TOL};
pub use decode::{decode_demands, social_welfare, Equilibrium, EquilibriumRecord, DEFAULT_KKT_TOL};
pub use deviation::{deviation_diagnostic, DeviationEntry, DeviationReport, DEFAULT_DELTAS};
pub use kkt::{verify_kkt, KktReport};
pub use oracle::{brute_force_swo, MAX_ORACLE_PROVIDERS, MAX_ORACLE_USERS};
pub use prices::{initial_prices, solve_prices, solve_prices_from, PriceOptions, PriceSolution};

use crate::error::Result;
use crate::model::GameInstance;

/// Clearing prices followed by demand decoding.
pub fn solve_equilibrium(instance: &GameInstance, opts: &PriceOptions) -> Result<Equilibrium> {
    let prices = solve_prices(instance, opts)?;
    decode_demands(instance, &prices.p, opts.tie_tol)
}
