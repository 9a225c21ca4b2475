use serde::{Deserialize, Serialize};

use super::best_response::{user_best_response, BestResponse};
use super::kkt::{verify_kkt, KktReport};
use crate::bgr::{bgr_decode, detect_loop, Bgr};
use crate::error::{Error, Result};
use crate::model::{effective_resource, DemandMatrix, GameInstance, PriceVector};

/// Tolerance used for the KKT report attached to a decoded equilibrium.
pub const DEFAULT_KKT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Equilibrium {
    pub q: DemandMatrix,
    pub p: PriceVector,
    pub x: Vec<f64>,
    /// Purchasing users with more than one preferred provider, ascending.
    pub undecided: Vec<usize>,
    pub preference_sets: Vec<Vec<usize>>,
    pub welfare: f64,
    pub kkt: KktReport,
}

impl Equilibrium {
    /// Whether every provider sells to at least one decided user.
    pub fn every_provider_has_decided_user(&self) -> bool {
        (0..self.p.len()).all(|j| {
            (0..self.q.users()).any(|i| self.q[(i, j)] > 0.0 && self.preference_sets[i].len() == 1)
        })
    }

    /// The graph of undecided users over their preferred providers, with
    /// check-sums taken from this equilibrium.
    pub fn undecided_graph(&self, instance: &GameInstance) -> Result<Bgr> {
        let undecided: Vec<(usize, Vec<usize>)> = self
            .undecided
            .iter()
            .map(|&i| (i, self.preference_sets[i].clone()))
            .collect();
        let mut decided = self.q.clone();
        for &i in &self.undecided {
            for j in 0..self.p.len() {
                decided[(i, j)] = 0.0;
            }
        }
        Bgr::from_instance(instance, &undecided, &self.x, &decided)
    }

    pub fn to_record(&self) -> EquilibriumRecord {
        EquilibriumRecord {
            users: self.q.users(),
            providers: self.q.providers(),
            q: self.q.as_flat().to_vec(),
            p: self.p.clone(),
            x: self.x.clone(),
            undecided: self.undecided.clone(),
            welfare: self.welfare,
            kkt: self.kkt.clone(),
        }
    }
}

/// On-disk JSON form of an [`Equilibrium`]; `q` is row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRecord {
    #[serde(rename = "I")]
    pub users: usize,
    #[serde(rename = "J")]
    pub providers: usize,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub x: Vec<f64>,
    pub undecided: Vec<usize>,
    pub welfare: f64,
    #[serde(flatten)]
    pub kkt: KktReport,
}

/// `sum_i u_i(x_i)` for the effective resources implied by `q`.
pub fn social_welfare(instance: &GameInstance, q: &DemandMatrix) -> f64 {
    (0..instance.users())
        .map(|i| {
            instance
                .utility(i)
                .value(effective_resource(q.row(i), instance.c_row(i)))
        })
        .sum()
}

/// Recovers the unique demand matrix at (approximately) market-clearing
/// prices: decided users buy `x*_i / c_ij` from their only preferred
/// provider, undecided users are resolved on the bipartite graph.
pub fn decode_demands(
    instance: &GameInstance,
    p_star: &[f64],
    tie_tol: f64,
) -> Result<Equilibrium> {
    let responses: Vec<BestResponse> = (0..instance.users())
        .map(|i| user_best_response(instance, i, p_star, tie_tol))
        .collect();

    let mut q = DemandMatrix::zeros(instance.users(), instance.providers());
    let mut undecided = Vec::new();
    for (i, br) in responses.iter().enumerate() {
        if !br.purchases() {
            continue;
        }
        if br.is_decided() {
            let j = br.preference[0];
            q[(i, j)] = br.x_star / instance.c(i, j);
        } else {
            undecided.push((i, br.preference.clone()));
        }
    }

    let x_star: Vec<f64> = responses.iter().map(|br| br.x_star).collect();
    let graph = Bgr::from_instance(instance, &undecided, &x_star, &q).map_err(infeasible)?;
    if let Some(cycle) = detect_loop(&graph) {
        return Err(Error::LoopDetected { cycle });
    }
    for ((i, j), v) in bgr_decode(&graph).map_err(infeasible)? {
        q[(i, j)] = v;
    }

    let welfare = (0..instance.users())
        .map(|i| instance.utility(i).value(x_star[i]))
        .sum();
    let kkt = verify_kkt(instance, &q, p_star, DEFAULT_KKT_TOL);
    Ok(Equilibrium {
        q,
        p: p_star.to_vec(),
        x: x_star,
        undecided: undecided.iter().map(|(i, _)| *i).collect(),
        preference_sets: responses.into_iter().map(|br| br.preference).collect(),
        welfare,
        kkt,
    })
}

fn infeasible(e: Error) -> Error {
    match e {
        Error::NegativeDemand { .. }
        | Error::NegativeChecksum { .. }
        | Error::InconsistentChecksums { .. } => Error::InfeasibleChecksums(e.to_string()),
        other => other,
    }
}
