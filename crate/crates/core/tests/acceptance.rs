//! Acceptance suite. Each test checks one criterion at its stated tolerance
//! and prints a single `PASS`/`FAIL` line to stderr (visible without
//! `--nocapture`).

use std::io::Write;

use coalition_lab::agents::{run_episode, AgentPolicy, HeuristicBot, OracleBot, RandomBot};
use coalition_lab::bargaining::GameConfig;
use coalition_lab::coalition::{
    build_characteristic_table, collaboration_gain, optimal_coalition_for, per_capita, profit_report, VALUE_EPS,
};
use coalition_lab::eval::{degenerate_rate, evaluate, EvalSet, GapMode};
use coalition_lab::instance::{distance_matrix, generate_instance, DistanceMatrix, GenerationConfig};
use coalition_lab::learner::network::{BaselineNet, PolicyNet};
use coalition_lab::learner::ppo::{
    baseline_loss, log_prob_entropy, ppo_loss, Decision, DecisionKind, ValueSample,
};
use coalition_lab::learner::trainer::{ActMode, LearnedAgent};
use coalition_lab::learner::{entropy_coefficient, Trainer, TrainerConfig};
use coalition_lab::routing::{brute_force_oracle, solve_mdvrp, solve_single_agent, FleetRule};
use coalition_lab::{Coalition, ProblemInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(name: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    writeln!(std::io::stderr(), "[acceptance] {tag} {name}: {detail}").unwrap();
    assert!(pass, "{name}: {detail}");
}

const RULE: FleetRule = FleetRule::IdleAllowed;

#[test]
fn degenerate_instance_rate() {
    let rate = degenerate_rate(51_200, 0, &GenerationConfig::default(), RULE).unwrap();
    report(
        "degenerate-rate",
        (0.014..=0.024).contains(&rate),
        format!("{:.3}% of 51,200 instances have v(N) <= 1e-9 (band 1.4%..2.4%)", 100.0 * rate),
    );
}

/// Keeps between 1 and `max_per_agent` customers per agent.
fn thinned_instance(seed: u64, max_per_agent: usize, rng: &mut ChaCha8Rng) -> ProblemInstance {
    let cfg = GenerationConfig { customers_per_agent: max_per_agent, ..Default::default() };
    let mut inst = generate_instance(seed, &cfg).unwrap();
    let keep: Vec<usize> = (0..3).map(|_| rng.random_range(1..=max_per_agent)).collect();
    let mut seen = [0usize; 3];
    inst.locations.retain(|l| {
        if l.is_depot {
            return true;
        }
        seen[l.owner] += 1;
        seen[l.owner] <= keep[l.owner]
    });
    inst
}

fn permutation_minimum(dm: &DistanceMatrix, depot: usize, customers: &[usize]) -> f64 {
    fn go(dm: &DistanceMatrix, depot: usize, at: usize, cost: f64, rest: &mut Vec<usize>, best: &mut f64) {
        if rest.is_empty() {
            *best = best.min(cost + dm.get(at, depot));
            return;
        }
        for k in 0..rest.len() {
            let c = rest.remove(k);
            go(dm, depot, c, cost + dm.get(at, c), rest, best);
            rest.insert(k, c);
        }
    }
    let mut best = f64::INFINITY;
    go(dm, depot, depot, 0.0, &mut customers.to_vec(), &mut best);
    best
}

#[test]
fn solver_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut mdvrp_cases = 0;
    let mut mdvrp_mismatch = 0;
    let mut seed = 0u64;
    while mdvrp_cases < 500 {
        let inst = thinned_instance(seed, 4, &mut rng);
        seed += 1;
        let s = Coalition::from_mask(rng.random_range(1..8u32));
        let total: usize = s.members().map(|m| inst.customers_of(m).len()).sum();
        if total > 8 {
            continue;
        }
        let dm = distance_matrix(&inst);
        let rule = if mdvrp_cases % 2 == 0 { FleetRule::IdleAllowed } else { FleetRule::EveryVehicleDelivers };
        let fast = solve_mdvrp(s, &inst, &dm, rule).unwrap();
        let slow = brute_force_oracle(s, &inst, &dm, rule).unwrap();
        if fast.total_cost != slow.total_cost {
            mdvrp_mismatch += 1;
        }
        mdvrp_cases += 1;
    }

    let mut single_mismatch = 0;
    for k in 0..500u64 {
        let cfg = GenerationConfig { customers_per_agent: 1 + (k as usize % 7), ..Default::default() };
        let inst = generate_instance(10_000 + k, &cfg).unwrap();
        let dm = distance_matrix(&inst);
        let agent = (k % 3) as usize;
        let route = solve_single_agent(agent, &inst, &dm).unwrap();
        if route.cost != permutation_minimum(&dm, inst.depot(agent), &inst.customers_of(agent)) {
            single_mismatch += 1;
        }
    }
    report(
        "solver-equivalence",
        mdvrp_mismatch == 0 && single_mismatch == 0,
        format!(
            "{mdvrp_mismatch}/500 multi-depot mismatches vs exhaustive oracle (<=8 customers), \
             {single_mismatch}/500 single-agent mismatches vs permutation minimum (<=7 customers)"
        ),
    );
}

#[test]
fn characteristic_function_laws() {
    use rayon::prelude::*;
    let gen = GenerationConfig::default();
    let violations: Vec<String> = (0..10_000u64)
        .into_par_iter()
        .flat_map_iter(|seed| {
            let inst = generate_instance(seed, &gen).unwrap();
            let t = build_characteristic_table(&inst, RULE).unwrap();
            let mut v = t.law_violations();
            for s in Coalition::all(3).filter(|s| s.len() <= 1) {
                if t.value(s) != 0.0 {
                    v.push(format!("v({s}) = {} is not exactly 0", t.value(s)));
                }
            }
            for s in Coalition::all(3) {
                if t.value(s) < 0.0 {
                    v.push(format!("v({s}) < 0"));
                }
                for u in Coalition::all(3).filter(|u| u.is_disjoint(s)) {
                    if t.value(s.union(u)) < t.value(s) + t.value(u) - 1e-9 {
                        v.push(format!("superadditivity {s} + {u}"));
                    }
                }
            }
            let max = Coalition::all(3).map(|s| t.value(s)).fold(0.0, f64::max);
            if (t.value(t.grand()) - max).abs() > 1e-9 {
                v.push("v(N) != max v(S)".into());
            }
            v.into_iter().map(move |m| format!("seed {seed}: {m}"))
        })
        .collect();
    report(
        "characteristic-function-laws",
        violations.is_empty(),
        format!(
            "{} violations over 10,000 instances{}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    );
}

#[test]
fn gain_and_per_capita_arithmetic() {
    let gen = GenerationConfig::default();
    let mut worst: f64 = 0.0;
    for seed in 0..300u64 {
        let inst = generate_instance(seed, &gen).unwrap();
        let grand = Coalition::grand(3);
        let gain = collaboration_gain(grand, &inst, RULE).unwrap();
        let welfare = profit_report(grand, &inst, RULE).unwrap().collaboration_gain();
        worst = worst.max((gain - welfare).abs());
    }
    let pc = per_capita(0.88, 3).unwrap();
    let printed = format!("{pc:.2}");
    report(
        "gain-and-per-capita-arithmetic",
        worst <= 1e-9 && (pc - 0.88 / 3.0).abs() <= 1e-15 && printed == "0.29",
        format!("max |gain - welfare difference| = {worst:.2e} over 300 instances; per_capita(0.88, 3) = {pc} ({printed})"),
    );
}

#[test]
fn protocol_conservation() {
    let gen = GenerationConfig::default();
    let config = GameConfig::default();
    let untrained = Trainer::new(TrainerConfig { eval_batch: 1, ..Default::default() }).unwrap().model();
    let mut problems = Vec::new();
    let mut agreements = 0;
    for seed in 0..10_000u64 {
        let inst = generate_instance(seed, &gen).unwrap();
        let t = build_characteristic_table(&inst, RULE).unwrap();
        let mut seats: Vec<Box<dyn AgentPolicy>> = (0..3)
            .map(|i| -> Box<dyn AgentPolicy> {
                match (seed as usize + i) % 4 {
                    0 => Box::new(HeuristicBot),
                    1 => Box::new(RandomBot::new(seed)),
                    2 => Box::new(OracleBot::default()),
                    _ => Box::new(LearnedAgent::new(untrained.clone(), ActMode::Sample)),
                }
            })
            .collect();
        let out = run_episode(&inst, &t, config, &mut seats, seed, None).unwrap();
        if out.result.rounds > config.horizon || out.trace.len() > config.horizon {
            problems.push(format!("seed {seed}: {} rounds", out.result.rounds));
        }
        match out.result.coalition {
            Some(s) => {
                agreements += 1;
                let paid: f64 = s.members().map(|i| out.result.rewards[i]).sum();
                if (paid - t.value(s)).abs() > 1e-9 {
                    problems.push(format!("seed {seed}: paid {paid} != v({s}) = {}", t.value(s)));
                }
                if (0..3).any(|i| !s.contains(i) && out.result.rewards[i] != 0.0) {
                    problems.push(format!("seed {seed}: non-member rewarded"));
                }
            }
            None => {
                if out.result.rewards.iter().any(|&r| r != 0.0) {
                    problems.push(format!("seed {seed}: reward without agreement"));
                }
            }
        }
    }
    report(
        "protocol-conservation",
        problems.is_empty(),
        format!(
            "{} problems over 10,000 mixed-bot episodes ({agreements} agreements){}",
            problems.len(),
            problems.first().map(|p| format!("; first: {p}")).unwrap_or_default()
        ),
    );
}

#[test]
fn oracle_and_heuristic_baselines() {
    let set = EvalSet::generate(20_000, 2_000, &GenerationConfig::default(), RULE).unwrap();
    let config = GameConfig::default();
    let mut oracles = vec![OracleBot::default(); 3];
    let (oracle, _) = evaluate(&mut oracles, &set, config, GapMode::PerCapita).unwrap();
    let oracle_ok = oracle.per_agent.iter().all(|a| a.accuracy == 1.0 && a.mean_eta == 0.0);

    let mut heuristics = vec![HeuristicBot; 3];
    let (heur, records) = evaluate(&mut heuristics, &set, config, GapMode::PerCapita).unwrap();
    let mut mismatches = Vec::new();
    for agent in 0..3 {
        // independent count over included pairs: optimum is the grand coalition
        let (mut included, mut grand_best) = (0usize, 0usize);
        for (r, t) in records.iter().filter(|r| r.agent == agent).zip(&set.tables) {
            let v_n = t.value(t.grand());
            let best_pair_pc = Coalition::all(3)
                .filter(|s| s.len() >= 2 && s.contains(agent))
                .map(|s| t.value(s) / s.len() as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            let global_best = Coalition::all(3)
                .filter(|s| s.len() >= 2)
                .map(|s| t.value(s) / s.len() as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            let in_global = Coalition::all(3)
                .filter(|s| s.len() >= 2 && t.value(*s) / s.len() as f64 == global_best)
                .min_by_key(|s| (s.len(), s.mask()))
                .is_some_and(|s| s.contains(agent));
            let excluded = v_n <= VALUE_EPS || !in_global || best_pair_pc <= VALUE_EPS;
            assert_eq!(excluded, r.excluded_reason.is_some(), "seed {}", t.seed);
            if !excluded {
                included += 1;
                // grand wins only when no smaller coalition ties it
                let smaller_ties = Coalition::all(3)
                    .filter(|s| s.len() == 2 && s.contains(agent))
                    .any(|s| t.value(s) / 2.0 >= v_n / 3.0);
                if !smaller_ties {
                    grand_best += 1;
                }
            }
            assert_eq!(optimal_coalition_for(agent, t).mask(), r.optimal_mask);
        }
        let expected = grand_best as f64 / included as f64;
        if heur.per_agent[agent].accuracy != expected || heur.per_agent[agent].correct != grand_best {
            mismatches.push(format!("agent {agent}: {} vs {expected}", heur.per_agent[agent].accuracy));
        }
    }
    report(
        "oracle-heuristic-baselines",
        oracle_ok && mismatches.is_empty(),
        format!(
            "oracle accuracy {:?}, mean eta {:?}; heuristic accuracy {:?} (independent count {})",
            oracle.per_agent.iter().map(|a| a.accuracy).collect::<Vec<_>>(),
            oracle.per_agent.iter().map(|a| a.mean_eta).collect::<Vec<_>>(),
            heur.per_agent.iter().map(|a| format!("{:.4}", a.accuracy)).collect::<Vec<_>>(),
            if mismatches.is_empty() { "matches".to_string() } else { mismatches.join("; ") }
        ),
    );
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

/// Worst relative error of analytic vs central-difference gradients for
/// both losses on random batches of 32.
fn finite_difference_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    let pnet = PolicyNet::new(10, &[8, 8], 3);
    let mut theta = pnet.init(&mut rng);
    for t in theta.iter_mut() {
        *t += rng.random_range(-0.3..0.3);
    }
    let batch: Vec<Decision> = (0..32)
        .map(|k| {
            let features: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let kind = if k % 3 == 0 {
                DecisionKind::Respond { accept: rng.random_bool(0.5) }
            } else {
                let me = rng.random_range(0..3);
                DecisionKind::Propose { self_index: me, bits: (0..3).map(|j| j == me || rng.random_bool(0.5)).collect() }
            };
            let (lp, _) = log_prob_entropy(&pnet.forward(&theta, &features), &kind);
            Decision {
                agent: 0,
                round: 1,
                features,
                kind,
                old_log_prob: lp + rng.random_range(-0.4..0.4),
                reward_to_go: 0.0,
                advantage: rng.random_range(-2.0..2.0),
            }
        })
        .collect();
    let (_, grad) = ppo_loss(&pnet, &theta, &batch, 0.75, 0.2).unwrap();
    let h = 1e-6;
    for k in 0..theta.len() {
        let mut p = theta.clone();
        p[k] += h;
        let up = ppo_loss(&pnet, &p, &batch, 0.75, 0.2).unwrap().0;
        p[k] -= 2.0 * h;
        let down = ppo_loss(&pnet, &p, &batch, 0.75, 0.2).unwrap().0;
        worst = worst.max(relative_error((up - down) / (2.0 * h), grad[k]));
    }

    let bnet = BaselineNet::new(10, &[8]);
    let phi = bnet.init(&mut rng);
    let samples: Vec<ValueSample> = (0..32)
        .map(|_| {
            let features: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v = bnet.predict(&phi, &features);
            ValueSample { old_value: v + rng.random_range(-0.5..0.5), target: rng.random_range(-1.0..1.0), features }
        })
        .collect();
    let (_, grad) = baseline_loss(&bnet, &phi, &samples, 0.2).unwrap();
    for k in 0..phi.len() {
        let mut p = phi.clone();
        p[k] += h;
        let up = baseline_loss(&bnet, &p, &samples, 0.2).unwrap().0;
        p[k] -= 2.0 * h;
        let down = baseline_loss(&bnet, &p, &samples, 0.2).unwrap().0;
        worst = worst.max(relative_error((up - down) / (2.0 * h), grad[k]));
    }
    worst
}

#[test]
fn learner_sanity() {
    let epochs = 300;
    let mut config = TrainerConfig {
        seed: 0,
        epochs,
        batch_size: 64,
        eval_batch: 512,
        eval_period: 100,
        ..Default::default()
    };
    // anneal over the desk-scale run; beta0 and floor unchanged
    config.entropy.anneal_epochs = epochs;
    let mut trainer = Trainer::new(config.clone()).unwrap();
    let curve = trainer.run(|_| {}).unwrap();
    let last: Vec<_> = curve.iter().filter(|r| r.epoch == epochs).collect();

    let mut random: Vec<RandomBot> = (0..3).map(|i| RandomBot::new(i as u64)).collect();
    let (baseline, _) = evaluate(&mut random, trainer.eval_set(), config.game(), GapMode::PerCapita).unwrap();
    let margins: Vec<f64> = last.iter().map(|r| r.accuracy - baseline.per_agent[r.agent].accuracy).collect();
    let accuracy_ok = last.len() == 3 && margins.iter().all(|&m| m >= 0.10);

    let beta_ok = entropy_coefficient(0) == 0.75 && entropy_coefficient(1_000_000) == 0.2;
    let fd = finite_difference_worst();
    report(
        "learner-sanity",
        accuracy_ok && beta_ok && fd <= 1e-4,
        format!(
            "{epochs} epochs x 64: learned accuracy {:?} vs random {:?} (need +10pp each); \
             beta(0) = {}, floor = {}; worst finite-difference rel. error {fd:.2e}",
            last.iter().map(|r| format!("{:.3}", r.accuracy)).collect::<Vec<_>>(),
            baseline.per_agent.iter().map(|a| format!("{:.3}", a.accuracy)).collect::<Vec<_>>(),
            entropy_coefficient(0),
            entropy_coefficient(1_000_000),
        ),
    );
}

#[test]
fn library_determinism() {
    let gen = GenerationConfig::default();
    let run = || {
        let set = EvalSet::generate(3_000, 64, &gen, RULE).unwrap();
        let mut bots: Vec<RandomBot> = (0..3).map(|i| RandomBot::new(i as u64)).collect();
        let (_, records) = evaluate(&mut bots, &set, GameConfig::default(), GapMode::PerCapita).unwrap();
        let mut seats: Vec<Box<dyn AgentPolicy>> =
            vec![Box::new(RandomBot::new(1)), Box::new(OracleBot::default()), Box::new(HeuristicBot)];
        let traces: Vec<_> = set
            .instances
            .iter()
            .zip(&set.tables)
            .map(|(i, t)| run_episode(i, t, GameConfig::default(), &mut seats, i.seed, None).unwrap().trace)
            .collect();
        let trained = coalition_lab::learner::train(&TrainerConfig {
            epochs: 3,
            batch_size: 16,
            eval_batch: 32,
            eval_period: 1,
            ..Default::default()
        })
        .unwrap();
        (
            serde_json::to_string(&records).unwrap(),
            serde_json::to_string(&traces).unwrap(),
            serde_json::to_string(&trained.curve).unwrap(),
            serde_json::to_string(&trained.checkpoint).unwrap(),
        )
    };
    let (a, b) = (run(), run());
    report(
        "determinism (library)",
        a == b,
        "evaluation records, episode traces, curves and checkpoints identical across reruns".into(),
    );
}
