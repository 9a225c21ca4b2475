use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use super::utility::UtilityFunction;
use crate::error::{Error, Result};

/// The full market description: users, providers, channel-quality offsets,
/// supplies and per-user utilities.
///
/// `c` is stored row-major (`c[i * J + j]`). Entries are strictly positive and
/// pairwise distinct; the constructor rejects anything else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance", into = "RawInstance")]
pub struct GameInstance {
    users: usize,
    providers: usize,
    c: Vec<f64>,
    supply: Vec<f64>,
    utilities: Vec<UtilityFunction>,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct RawInstance {
    #[serde(rename = "I")]
    users: usize,
    #[serde(rename = "J")]
    providers: usize,
    seed: u64,
    #[serde(rename = "Q")]
    supply: Vec<f64>,
    utilities: Vec<UtilityFunction>,
    c: Vec<f64>,
}

impl TryFrom<RawInstance> for GameInstance {
    type Error = Error;

    fn try_from(raw: RawInstance) -> Result<Self> {
        GameInstance::new(
            raw.users,
            raw.providers,
            raw.c,
            raw.supply,
            raw.utilities,
            raw.seed,
        )
    }
}

impl From<GameInstance> for RawInstance {
    fn from(g: GameInstance) -> Self {
        RawInstance {
            users: g.users,
            providers: g.providers,
            seed: g.seed,
            supply: g.supply,
            utilities: g.utilities,
            c: g.c,
        }
    }
}

impl GameInstance {
    pub fn new(
        users: usize,
        providers: usize,
        c: Vec<f64>,
        supply: Vec<f64>,
        utilities: Vec<UtilityFunction>,
        seed: u64,
    ) -> Result<Self> {
        if users == 0 || providers == 0 {
            return Err(Error::InvalidInstance(
                "need at least one user and one provider".into(),
            ));
        }
        if c.len() != users * providers {
            return Err(Error::InvalidInstance(format!(
                "c has {} entries, expected {}",
                c.len(),
                users * providers
            )));
        }
        if supply.len() != providers {
            return Err(Error::InvalidInstance(format!(
                "Q has {} entries, expected {providers}",
                supply.len()
            )));
        }
        if utilities.len() != users {
            return Err(Error::InvalidInstance(format!(
                "{} utilities given for {users} users",
                utilities.len()
            )));
        }
        if let Some(bad) = c.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidInstance(format!(
                "channel offsets must be positive and finite, found {bad}"
            )));
        }
        if let Some(bad) = supply.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidInstance(format!(
                "supplies must be positive and finite, found {bad}"
            )));
        }
        if let Some((a, b)) = first_duplicate(&c) {
            return Err(Error::InvalidInstance(format!(
                "channel offsets must be pairwise distinct (entries {a} and {b} are equal)"
            )));
        }
        Ok(Self {
            users,
            providers,
            c,
            supply,
            utilities,
            seed,
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn providers(&self) -> usize {
        self.providers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn c(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.providers + j]
    }

    /// Channel offsets of user `i` across all providers.
    pub fn c_row(&self, i: usize) -> &[f64] {
        &self.c[i * self.providers..(i + 1) * self.providers]
    }

    pub fn c_flat(&self) -> &[f64] {
        &self.c
    }

    pub fn supply(&self) -> &[f64] {
        &self.supply
    }

    pub fn utility(&self, i: usize) -> &UtilityFunction {
        &self.utilities[i]
    }

    pub fn utilities(&self) -> &[UtilityFunction] {
        &self.utilities
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Indices of the first pair of entries that compare equal, if any.
pub(crate) fn first_duplicate(values: &[f64]) -> Option<(usize, usize)> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    order
        .windows(2)
        .find(|w| values[w[0]] == values[w[1]])
        .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
}

/// Nonnegative demand `q[i][j]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandMatrix {
    users: usize,
    providers: usize,
    data: Vec<f64>,
}

impl DemandMatrix {
    pub fn zeros(users: usize, providers: usize) -> Self {
        Self {
            users,
            providers,
            data: vec![0.0; users * providers],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let users = rows.len();
        let providers = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == providers), "ragged rows");
        Self {
            users,
            providers,
            data: rows.concat(),
        }
    }

    pub fn from_flat(users: usize, providers: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != users * providers {
            return Err(Error::InvalidParameter(format!(
                "demand has {} entries, expected {}",
                data.len(),
                users * providers
            )));
        }
        Ok(Self {
            users,
            providers,
            data,
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn providers(&self) -> usize {
        self.providers
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.providers..(i + 1) * self.providers]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        (0..self.users).map(|i| self[(i, j)]).sum()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|v| *v >= 0.0)
    }

    pub fn max_abs_diff(&self, other: &DemandMatrix) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for DemandMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.providers + j]
    }
}

impl IndexMut<(usize, usize)> for DemandMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.providers + j]
    }
}

/// Per-unit resource prices, one per provider.
pub type PriceVector = Vec<f64>;

/// `sum_j q_ij c_ij`
pub fn effective_resource(q_i: &[f64], c_i: &[f64]) -> f64 {
    assert_eq!(q_i.len(), c_i.len(), "demand and offset lengths differ");
    q_i.iter().zip(c_i).map(|(q, c)| q * c).sum()
}

/// Utility of the effective resource minus the linear payment.
pub fn payoff(u: &UtilityFunction, q_i: &[f64], c_i: &[f64], p: &[f64]) -> f64 {
    assert_eq!(q_i.len(), p.len(), "demand and price lengths differ");
    let payment: f64 = q_i.iter().zip(p).map(|(q, p)| q * p).sum();
    u.value(effective_resource(q_i, c_i)) - payment
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log1() -> UtilityFunction {
        UtilityFunction::scaled_log(1.0).unwrap()
    }

    #[test]
    fn effective_resource_examples() {
        assert_eq!(effective_resource(&[0.0, 0.0], &[2.0, 3.0]), 0.0);
        assert_eq!(effective_resource(&[0.5, 1.0], &[2.0, 3.0]), 4.0);
        assert_eq!(effective_resource(&[1.0, 0.0], &[2.0, 3.0]), 2.0);
    }

    #[test]
    fn payoff_examples() {
        let v = payoff(&log1(), &[0.5, 0.0], &[2.0, 1.0], &[1.0, 1.0]);
        assert!((v - (2f64.ln() - 0.5)).abs() < 1e-15);
        assert!((v - 0.1931).abs() < 1e-4);
        assert_eq!(payoff(&log1(), &[0.0, 0.0], &[7.0, 3.0], &[9.0, 4.0]), 0.0);
        let af = UtilityFunction::alpha_fair(3.0, 0.3).unwrap();
        assert_eq!(payoff(&af, &[0.0, 0.0], &[7.0, 3.0], &[9.0, 4.0]), 0.0);
        let free = payoff(&log1(), &[1.0, 0.0], &[2.0, 1.0], &[0.0, 0.0]);
        assert!((free - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rejects_duplicate_offsets() {
        let err = GameInstance::new(2, 1, vec![1.0, 1.0], vec![1.0], vec![log1(); 2], 0);
        assert!(matches!(err, Err(Error::InvalidInstance(_))));
    }

    #[test]
    fn rejects_nonpositive_values() {
        assert!(GameInstance::new(1, 1, vec![0.0], vec![1.0], vec![log1()], 0).is_err());
        assert!(GameInstance::new(1, 1, vec![1.0], vec![-1.0], vec![log1()], 0).is_err());
        assert!(GameInstance::new(1, 2, vec![1.0], vec![1.0, 1.0], vec![log1()], 0).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let g = GameInstance::new(
            2,
            2,
            vec![0.1, 1.0 / 3.0, std::f64::consts::PI, 2.0f64.sqrt()],
            vec![1.0, 0.7],
            vec![log1(), UtilityFunction::alpha_fair(1.0, 0.5).unwrap()],
            42,
        )
        .unwrap();
        let s = g.to_json().unwrap();
        assert!(s.contains("\"I\": 2") && s.contains("\"Q\""));
        let back = GameInstance::from_json(&s).unwrap();
        assert_eq!(back, g);
    }
}
