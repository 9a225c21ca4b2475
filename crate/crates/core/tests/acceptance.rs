//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spectrum_market::bgr::{bgr_decode, bgr_decode_with, detect_loop};
use spectrum_market::cli::dispatch;
use spectrum_market::model::{
    generate_instance, ChannelModelConfig, DemandMatrix, GameInstance, UtilityFunction,
    DEFAULT_WEIGHT,
};
use spectrum_market::primal_dual::{
    rate_condition_check, run_primal_dual, PdConfig, PdRates, CALIBRATED_DEMAND_RATE,
    CALIBRATED_PRICE_RATE,
};
use spectrum_market::swo::{
    brute_force_swo, deviation_diagnostic, solve_equilibrium, verify_kkt, Equilibrium,
    PriceOptions, DEFAULT_DELTAS,
};

type Solved = Vec<Result<(GameInstance, Equilibrium), String>>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn log_utility() -> UtilityFunction {
    UtilityFunction::scaled_log(DEFAULT_WEIGHT).unwrap()
}

fn random_instance(users: usize, providers: usize, seed: u64) -> GameInstance {
    generate_instance(
        &ChannelModelConfig::default(),
        users,
        providers,
        log_utility(),
        seed,
    )
    .unwrap()
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_q, mut worst_w) = (0.0f64, 0.0f64);
    for seed in 0..50 {
        let users = rng.gen_range(1..=3);
        let g = random_instance(users, 2, 10_000 + seed);
        let eq = match solve_equilibrium(&g, &PriceOptions::default()) {
            Ok(eq) => eq,
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        };
        let (q, w) = brute_force_swo(&g, 1e-3).unwrap();
        worst_q = worst_q.max(eq.q.max_abs_diff(&q));
        worst_w = worst_w.max((eq.welfare - w).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst_q <= 2e-3 && worst_w <= 1e-4 && elapsed < Duration::from_secs(60),
        format!("max |dq| {worst_q:.2e}, max |dW| {worst_w:.2e}, {elapsed:.2?}"),
    )
}

fn solve_many() -> (Solved, Duration) {
    let start = Instant::now();
    let results = (1..=200)
        .map(|seed| {
            let g = random_instance(20, 5, seed);
            solve_equilibrium(&g, &PriceOptions::default())
                .map(|eq| (g, eq))
                .map_err(|e| format!("seed {seed}: {e}"))
        })
        .collect();
    (results, start.elapsed())
}

fn kkt_certification(solved: &Solved, elapsed: Duration) -> Outcome {
    let mut worst = 0.0f64;
    for r in solved {
        match r {
            Ok((g, eq)) => {
                let report = verify_kkt(g, &eq.q, &eq.p, 1e-6);
                if !report.passed {
                    return outcome(false, format!("KKT failed: {report:?}"));
                }
                worst = worst.max(report.max_residual());
            }
            Err(e) => return outcome(false, e.clone()),
        }
    }
    outcome(
        elapsed < Duration::from_secs(120),
        format!("200 instances, max residual {worst:.2e}, {elapsed:.2?}"),
    )
}

fn hand_solved() -> Outcome {
    let u = UtilityFunction::scaled_log(1.0).unwrap();
    let g = GameInstance::new(2, 1, vec![2.0, 1.0], vec![1.0], vec![u; 2], 0).unwrap();
    let eq = solve_equilibrium(&g, &PriceOptions::default()).unwrap();
    let (oracle, _) = brute_force_swo(&g, 1e-3).unwrap();
    let dq = max_abs(eq.q.as_flat(), &[0.75, 0.25]);
    let dp = (eq.p[0] - 0.8).abs();
    let doracle = oracle.max_abs_diff(&eq.q);
    outcome(
        dq <= 1e-6 && dp <= 1e-6 && doracle <= 1e-3,
        format!("|dq| {dq:.1e}, |dp| {dp:.1e}, oracle gap {doracle:.1e}"),
    )
}

fn undecided_bound(solved: &Solved) -> Outcome {
    let mut max_count = 0;
    for r in solved {
        let Ok((g, eq)) = r else {
            return outcome(false, "an instance failed to solve".into());
        };
        max_count = max_count.max(eq.undecided.len());
        if eq.undecided.len() >= 5 {
            return outcome(false, format!("{} undecided users", eq.undecided.len()));
        }
        match eq.undecided_graph(g) {
            Ok(graph) if detect_loop(&graph).is_none() => {}
            Ok(_) => return outcome(false, "loop detected".into()),
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    outcome(true, format!("max undecided {max_count}, no loops"))
}

fn decode_order_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut found, mut seed, mut worst) = (0, 0u64, 0.0f64);
    while found < 100 {
        seed += 1;
        if seed > 20_000 {
            return outcome(
                false,
                format!("only {found} instances with undecided users"),
            );
        }
        let g = random_instance(20, 5, 50_000 + seed);
        let Ok(eq) = solve_equilibrium(&g, &PriceOptions::default()) else {
            continue;
        };
        if eq.undecided.is_empty() {
            continue;
        }
        found += 1;
        let graph = eq.undecided_graph(&g).unwrap();
        let reference = bgr_decode(&graph).unwrap();
        for _ in 0..10 {
            let decoded = bgr_decode_with(&graph, |leaves| rng.gen_range(0..leaves.len())).unwrap();
            if decoded.len() != reference.len() {
                return outcome(false, "decoded edge sets differ".into());
            }
            for (k, v) in &reference {
                worst = worst.max((decoded[k] - v).abs());
            }
        }
    }
    outcome(
        worst <= 1e-12,
        format!("100 instances x 10 orders, max diff {worst:.1e}"),
    )
}

struct PdRun {
    iterations: usize,
    q_err: f64,
    p_err: f64,
    v_increase: f64,
}

fn primal_dual_runs() -> Result<Vec<PdRun>, String> {
    let mut runs = Vec::new();
    let mut seed = 0u64;
    while runs.len() < 50 {
        seed += 1;
        let g = random_instance(20, 5, 70_000 + seed);
        let eq = solve_equilibrium(&g, &PriceOptions::default()).map_err(|e| e.to_string())?;
        if !eq.every_provider_has_decided_user() {
            continue;
        }
        let rates = PdRates::calibrated(
            &g,
            &eq.q,
            CALIBRATED_DEMAND_RATE,
            CALIBRATED_PRICE_RATE,
            seed,
        )
        .map_err(|e| e.to_string())?;
        let cfg = PdConfig {
            eta: 1e-3,
            epsilon: 1e-3,
            max_steps: 100_000,
            ..Default::default()
        };
        let out =
            run_primal_dual(&g, &rates, &cfg, Some((&eq.q, &eq.p))).map_err(|e| e.to_string())?;
        if !out.converged {
            return Err(format!(
                "seed {seed} did not converge in {} steps",
                out.steps
            ));
        }
        let v = out.trajectory.v_values();
        let v_increase = v
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        runs.push(PdRun {
            iterations: out.steps,
            q_err: out.state.q.max_abs_diff(&eq.q),
            p_err: max_abs(&out.state.p, &eq.p),
            v_increase,
        });
    }
    Ok(runs)
}

fn primal_dual_convergence(runs: &Result<Vec<PdRun>, String>) -> Outcome {
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    let mean = runs.iter().map(|r| r.iterations as f64).sum::<f64>() / runs.len() as f64;
    let q_err = runs.iter().map(|r| r.q_err).fold(0.0, f64::max);
    let p_err = runs.iter().map(|r| r.p_err).fold(0.0, f64::max);
    outcome(
        (100.0..=5000.0).contains(&mean) && q_err <= 1e-2 && p_err <= 1e-3,
        format!("mean iterations {mean:.0}, max |dq| {q_err:.2e}, max |dp| {p_err:.2e}"),
    )
}

fn la_salle_monotone(runs: &Result<Vec<PdRun>, String>) -> Outcome {
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    let worst = runs
        .iter()
        .take(20)
        .map(|r| r.v_increase)
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(
        worst <= 1e-6,
        format!("20 trajectories, max per-step increase {worst:.2e}"),
    )
}

fn rate_condition() -> Outcome {
    let u = UtilityFunction::scaled_log(1.0).unwrap();
    let g = GameInstance::new(1, 2, vec![2.0, 3.0], vec![1.0, 1.0], vec![u], 0).unwrap();
    let q_star = DemandMatrix::from_rows(&[vec![1.0, 1.0]]);
    let distinct = PdRates::new(vec![1.0, 1.0], vec![1.0, 2f64.sqrt()]).unwrap();
    let a = rate_condition_check(&g, &q_star, &distinct).unwrap();
    let b = rate_condition_check(&g, &q_star, &PdRates::uniform(1, 2)).unwrap();
    let toys_ok = a.stacked_rank == 2 && a.sufficient && b.stacked_rank == 1 && !b.sufficient;

    // All-undecided chains: user i splits between providers i and i + 1.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut sufficient = 0;
    for _ in 0..100 {
        let providers = rng.gen_range(2..=4);
        let users = providers - 1;
        let mut c = vec![0.0; users * providers];
        let mut q = DemandMatrix::zeros(users, providers);
        for i in 0..users {
            for j in 0..providers {
                c[i * providers + j] = rng.gen_range(0.5..5.0);
            }
            q[(i, i)] = rng.gen_range(0.1..1.0);
            q[(i, i + 1)] = rng.gen_range(0.1..1.0);
        }
        let g = GameInstance::new(users, providers, c, vec![1.0; providers], vec![u; users], 0)
            .unwrap();
        let rates = PdRates::random(users, providers, rng.gen());
        if rate_condition_check(&g, &q, &rates).unwrap().sufficient {
            sufficient += 1;
        }
    }
    outcome(
        toys_ok && sufficient >= 99,
        format!(
            "toy ranks {} and {}, random rates sufficient in {sufficient}/100",
            a.stacked_rank, b.stacked_rank
        ),
    )
}

fn deviation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..20 {
        let users = rng.gen_range(2..=6);
        let providers = rng.gen_range(1..=3);
        let g = random_instance(users, providers, 90_000 + seed);
        let eq = match solve_equilibrium(&g, &PriceOptions::default()) {
            Ok(eq) => eq,
            Err(e) => return outcome(false, e.to_string()),
        };
        worst = worst.max(deviation_diagnostic(&g, &eq, &DEFAULT_DELTAS).max_gain);
    }
    outcome(
        worst <= 1e-8,
        format!("20 instances, max revenue gain {worst:.2e}"),
    )
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let code = dispatch([
            "spectrum-market",
            "experiment",
            "--users",
            "10,20",
            "--trials",
            "8",
            "--seed",
            "3",
            "-o",
            path.to_str().unwrap(),
        ]);
        (code, std::fs::read(path).unwrap_or_default())
    };
    let (c1, a) = run("a.csv");
    let (c2, b) = run("b.csv");
    outcome(
        c1 == 0 && c2 == 0 && !a.is_empty() && a == b,
        format!("{} bytes, identical: {}", a.len(), a == b),
    )
}

fn main() {
    let (solved, solve_time) = solve_many();
    let pd = primal_dual_runs();
    let results = [
        ("oracle equivalence", oracle_equivalence()),
        ("KKT certification", kkt_certification(&solved, solve_time)),
        ("hand-solved instance", hand_solved()),
        ("undecided bound", undecided_bound(&solved)),
        ("decode order invariance", decode_order_invariance()),
        ("primal-dual convergence", primal_dual_convergence(&pd)),
        ("La Salle monotonicity", la_salle_monotone(&pd)),
        ("rate-condition checker", rate_condition()),
        ("deviation diagnostic", deviation()),
        ("reproducibility", reproducibility()),
    ];
    let mut failed = 0;
    for (k, (name, o)) in results.iter().enumerate() {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {}: {name} ({})", k + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
