use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use coalition_lab::agents::{AgentPolicy, HeuristicBot, OracleBot, RandomBot};
use coalition_lab::bargaining::GameConfig;
use coalition_lab::coalition::{build_table_with_plans, global_optimal_coalition, is_degenerate, optimal_coalition_for};
use coalition_lab::eval::{evaluate, run_matchup, EvalSet};
use coalition_lab::instance::{distance_matrix, generate_instance, GenerationConfig};
use coalition_lab::learner::trainer::{ActMode, LearnedAgent};
use coalition_lab::learner::{Trainer, TrainerConfig};
use coalition_lab::routing::{brute_force_oracle, solve_mdvrp, FleetRule, RoutingSolution, ORACLE_MAX_CUSTOMERS};
use coalition_lab::{Coalition, ProblemInstance};
use serde::Serialize;

use crate::config::{
    CharfnArgs, Command, EvalArgs, GameArgs, GenArgs, InstanceArgs, OracleCheckArgs, PlayArgs, TrainArgs,
};

pub fn run(command: &Command, out: &Path) -> Result<()> {
    match command {
        Command::Gen(a) => gen(a, out),
        Command::Charfn(a) => charfn(a, out),
        Command::Play(a) => play(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Train(a) => train(a, out),
        Command::OracleCheck(a) => oracle_check(a, out),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads instances from JSONL, reporting the line of any bad row.
pub fn read_instances(path: &Path) -> Result<Vec<ProblemInstance>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("{}:{}", path.display(), k + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: ProblemInstance =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: not an instance", path.display(), k + 1))?;
        inst.validate().with_context(|| format!("{}:{}: invalid instance", path.display(), k + 1))?;
        out.push(inst);
    }
    Ok(out)
}

fn generation(radii: &[f64], agents: usize, customers_per_agent: usize) -> GenerationConfig {
    GenerationConfig {
        n_agents: agents,
        customers_per_agent,
        radii: radii.to_vec(),
    }
}

fn load_instances(a: &InstanceArgs) -> Result<Vec<ProblemInstance>> {
    match &a.instances {
        Some(path) => read_instances(path),
        None => {
            let gen = generation(&a.radii, a.agents, a.customers_per_agent);
            Ok((0..a.n as u64)
                .map(|k| generate_instance(a.seed + k, &gen))
                .collect::<coalition_lab::Result<Vec<_>>>()?)
        }
    }
}

fn gen(a: &GenArgs, out: &Path) -> Result<()> {
    let gen = generation(&a.radii, a.agents, a.customers_per_agent);
    let rows = (0..a.n as u64)
        .map(|k| generate_instance(a.seed + k, &gen))
        .collect::<coalition_lab::Result<Vec<_>>>()?;
    write_jsonl(&out.join("instances.jsonl"), &rows)?;
    eprintln!("wrote {} instances", rows.len());
    Ok(())
}

#[derive(Serialize)]
struct RouteDump {
    coalition: u32,
    plan: RoutingSolution,
}

#[derive(Serialize)]
struct CharfnRow {
    seed: u64,
    radius: f64,
    /// Indexed by coalition mask.
    values: Vec<f64>,
    per_capita: Vec<f64>,
    standalone_costs: Vec<f64>,
    optimal_per_agent: Vec<u32>,
    global_optimal: u32,
    degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    routes: Option<Vec<RouteDump>>,
}

fn charfn(a: &CharfnArgs, out: &Path) -> Result<()> {
    use rayon::prelude::*;
    let instances = load_instances(&a.source)?;
    let rule: FleetRule = a.source.fleet_rule.into();
    let rows = instances
        .par_iter()
        .map(|inst| {
            let (t, plans) = build_table_with_plans(inst, rule)?;
            let n = t.n_agents;
            Ok(CharfnRow {
                seed: inst.seed,
                radius: inst.radius,
                per_capita: Coalition::all(n).map(|s| t.per_capita(s)).collect(),
                optimal_per_agent: (0..n).map(|i| optimal_coalition_for(i, &t).mask()).collect(),
                global_optimal: global_optimal_coalition(&t).mask(),
                degenerate: is_degenerate(&t),
                routes: a.dump_routes.then(|| {
                    plans
                        .into_iter()
                        .enumerate()
                        .filter_map(|(mask, p)| p.map(|plan| RouteDump { coalition: mask as u32, plan }))
                        .collect()
                }),
                values: t.values,
                standalone_costs: t.standalone_costs,
            })
        })
        .collect::<coalition_lab::Result<Vec<_>>>()?;
    write_jsonl(&out.join("charfn.jsonl"), &rows)?;
    eprintln!(
        "wrote {} tables ({} degenerate)",
        rows.len(),
        rows.iter().filter(|r| r.degenerate).count()
    );
    Ok(())
}

fn game_config(g: &GameArgs, n_agents: usize) -> GameConfig {
    GameConfig {
        gamma: g.gamma,
        horizon: g.horizon,
        n_agents,
        egalitarian: true,
    }
}

/// Builds one policy per seat from names; a single name fills every seat.
pub fn make_bots(names: &[String], n_agents: usize, oracle_threshold: f64) -> Result<Vec<Box<dyn AgentPolicy>>> {
    let names: Vec<&str> = match names {
        [one] => vec![one.as_str(); n_agents],
        many if many.len() == n_agents => many.iter().map(String::as_str).collect(),
        many => bail!("{} bots given for {n_agents} seats", many.len()),
    };
    names
        .into_iter()
        .enumerate()
        .map(|(seat, name)| -> Result<Box<dyn AgentPolicy>> {
            Ok(match name.trim() {
                "heuristic" => Box::new(HeuristicBot),
                "random" => Box::new(RandomBot::new(seat as u64)),
                "oracle" => Box::new(OracleBot::new(oracle_threshold)),
                other => match other.strip_prefix("learned:") {
                    Some(path) => Box::new(
                        LearnedAgent::load(Path::new(path), ActMode::Greedy)
                            .with_context(|| format!("loading checkpoint {path}"))?,
                    ),
                    None => bail!("unknown bot {other:?} (expected heuristic, random, oracle or learned:<path>)"),
                },
            })
        })
        .collect()
}

fn eval_set(a: &InstanceArgs) -> Result<EvalSet> {
    Ok(EvalSet::from_instances(load_instances(a)?, a.fleet_rule.into())?)
}

fn n_agents(set: &EvalSet, fallback: usize) -> usize {
    set.instances.first().map_or(fallback, |i| i.n_agents)
}

fn play(a: &PlayArgs, out: &Path) -> Result<()> {
    let set = eval_set(&a.source)?;
    let n = n_agents(&set, a.source.agents);
    let config = game_config(&a.game, n);
    config.validate()?;
    let mut bots = make_bots(&a.bots, n, a.game.oracle_threshold.unwrap_or(a.game.gamma))?;
    let (stats, outcomes) = run_matchup(&mut bots, &set, config, a.episode_seed)?;
    write_jsonl(&out.join("traces.jsonl"), outcomes.iter().flat_map(|o| o.trace.iter()))?;
    let mut summary = serde_json::to_value(&stats)?;
    summary.as_object_mut().map(|m| m.remove("secs_per_instance"));
    write_json(&out.join("summary.json"), &summary)?;
    eprintln!(
        "{} episodes, agreement rate {:.4}, {:.3} ms/episode",
        stats.episodes,
        stats.agreement_rate,
        1e3 * stats.secs_per_instance
    );
    Ok(())
}

fn eval(a: &EvalArgs, out: &Path) -> Result<()> {
    let set = eval_set(&a.source)?;
    let n = n_agents(&set, a.source.agents);
    let config = game_config(&a.game, n);
    config.validate()?;
    let mut bots = make_bots(&a.bots, n, a.game.oracle_threshold.unwrap_or(a.game.gamma))?;
    let (report, records) = evaluate(&mut bots, &set, config, a.gap_mode.into())?;
    // timing is hardware-specific; keep the report reproducible
    let mut value = serde_json::to_value(&report)?;
    value.as_object_mut().map(|m| m.remove("timing"));
    value["bots"] = serde_json::to_value(bots.iter().map(|b| b.name()).collect::<Vec<_>>())?;
    write_json(&out.join("report.json"), &value)?;
    write_csv(&out.join("pairs.csv"), &records)?;
    eprintln!(
        "accuracy {:?}; {:.3} ms/table, {:.3} ms/instance decisions",
        report.per_agent.iter().map(|s| (s.accuracy * 1e4).round() / 1e4).collect::<Vec<_>>(),
        1e3 * report.timing.table_secs_per_instance,
        1e3 * report.timing.decision_secs_per_instance
    );
    Ok(())
}

fn train(a: &TrainArgs, out: &Path) -> Result<()> {
    let mut config = TrainerConfig {
        seed: a.seed,
        epochs: a.epochs,
        batch_size: a.batch,
        eval_batch: a.eval_batch,
        eval_period: a.eval_period,
        eval_seed: a.eval_seed,
        gamma: a.gamma,
        horizon: a.horizon,
        radii: a.radii.clone(),
        fleet_rule: a.fleet_rule.into(),
        learning_rate: a.lr,
        clip_epsilon: a.clip_epsilon,
        hidden: a.hidden.clone(),
        ..Default::default()
    };
    config.entropy.anneal_epochs = a.anneal_epochs;
    let mut trainer = Trainer::new(config)?;
    let curve = trainer.run(|rows| {
        for r in rows {
            eprintln!(
                "epoch {:>6} agent {} accuracy {:.4} rel_gap {:.4} return {:.4} beta {:.4}",
                r.epoch, r.agent, r.accuracy, r.rel_gap, r.mean_return, r.beta
            );
        }
    })?;
    trainer.checkpoint().save(&out.join("checkpoint.json"))?;
    write_csv(&out.join("curves.csv"), &curve)?;
    Ok(())
}

#[derive(Serialize)]
struct OracleCheckReport {
    instances: usize,
    cases: usize,
    cost_mismatches: Vec<String>,
    max_value_difference: f64,
    pass: bool,
}

fn oracle_check(a: &OracleCheckArgs, out: &Path) -> Result<()> {
    use rayon::prelude::*;
    let gen = generation(&a.radii, 3, a.customers_per_agent);
    let rule: FleetRule = a.fleet_rule.into();
    let per_instance = (0..a.n as u64)
        .into_par_iter()
        .map(|k| -> Result<(usize, Vec<String>, f64)> {
            let inst = generate_instance(a.seed + k, &gen)?;
            let dm = distance_matrix(&inst);
            let (table, _) = build_table_with_plans(&inst, rule)?;
            let alone: Vec<f64> = (0..inst.n_agents)
                .map(|i| brute_force_oracle(Coalition::singleton(i), &inst, &dm, rule).map(|p| p.total_cost))
                .collect::<coalition_lab::Result<_>>()?;
            let (mut cases, mut bad, mut worst) = (0, Vec::new(), 0.0f64);
            for s in Coalition::all(inst.n_agents).filter(|s| s.len() >= 2) {
                let customers: usize = s.members().map(|m| inst.customers_of(m).len()).sum();
                if customers > ORACLE_MAX_CUSTOMERS {
                    continue;
                }
                cases += 1;
                let fast = solve_mdvrp(s, &inst, &dm, rule)?;
                let slow = brute_force_oracle(s, &inst, &dm, rule)?;
                if fast.total_cost != slow.total_cost {
                    bad.push(format!("seed {} {s}: {} vs {}", inst.seed, fast.total_cost, slow.total_cost));
                }
                let v = (s.members().map(|m| alone[m]).sum::<f64>() - slow.total_cost).max(0.0);
                worst = worst.max((v - table.value(s)).abs());
            }
            Ok((cases, bad, worst))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = OracleCheckReport {
        instances: a.n,
        cases: per_instance.iter().map(|r| r.0).sum(),
        cost_mismatches: per_instance.iter().flat_map(|r| r.1.clone()).collect(),
        max_value_difference: per_instance.iter().map(|r| r.2).fold(0.0, f64::max),
        pass: false,
    };
    let report = OracleCheckReport {
        pass: report.cost_mismatches.is_empty() && report.max_value_difference <= 1e-9,
        ..report
    };
    write_json(&out.join("oracle_check.json"), &report)?;
    if report.cases == 0 {
        return Err(anyhow!("no coalition small enough for the oracle (limit {ORACLE_MAX_CUSTOMERS} customers)"));
    }
    if !report.pass {
        bail!("solver disagrees with exhaustive search in {} cases", report.cost_mismatches.len());
    }
    eprintln!("{} cases agree", report.cases);
    Ok(())
}
