use std::fs;
use std::path::{Path, PathBuf};

use analogmem::agent_loop::{run_curriculum_with, RunReport};
use analogmem::csd::{Axis, CsdBuilder, TaskRecord};
use analogmem::embedding::Encoder;
use analogmem::experiments::{
    run_ablation, run_arm, run_kshot_sweep, series_csv, summarize, table_csv, to_json, AblationMode, AblationSpec,
    ArmConfig, Format, MetricsTable,
};
use analogmem::ical_engine::{
    abstract_pattern, induce_and_trial, BuiltinPolicy, Endpoint, ExternalPolicy, InduceConfig, PolicyModel,
    SeedStrategy,
};
use analogmem::memory_bank::{MemoryBank, DEFAULT_CLUSTER_THRESHOLD, DEFAULT_DEDUP_THRESHOLD};
use analogmem::retrieval::{retrieve_top_k, AxisWeights, DEFAULT_K};
use analogmem::verifier::{verify, Assertion};
use analogmem::world_sim::{parse_plan, TechTree, WorldState};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "analogmem", version, about = "Five-axis experience memory and analogical transfer experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Tech tree JSON; the built-in tree when omitted.
    #[arg(long, global = true)]
    tree: Option<PathBuf>,
    /// Memory bank file (JSON Lines).
    #[arg(long, global = true)]
    bank: Option<PathBuf>,
    /// Failure log; defaults to `<bank>.failures.jsonl`.
    #[arg(long, global = true)]
    failures: Option<PathBuf>,
    /// World state JSON to start from (and update, for commands that act).
    #[arg(long, global = true)]
    state: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "json")]
    format: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run a curriculum of goal episodes.
    Run {
        #[arg(long, default_value_t = 30)]
        episodes: usize,
        #[arg(long, value_enum, default_value = "on")]
        transfer: Switch,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        /// Axis weights as five numbers `s,a,p,f,i`.
        #[arg(long)]
        weights: Option<String>,
    },
    /// One induction round from the bank.
    Induce {
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long)]
        weights: Option<String>,
        /// `most_recent` or `most_successful`.
        #[arg(long, default_value = "most_recent")]
        strategy: String,
        #[arg(long, default_value_t = 4)]
        budget: usize,
        /// `builtin` or `external:<command | tcp://host:port>`.
        #[arg(long, default_value = "builtin")]
        policy: String,
    },
    /// Retrieve the entries closest to a goal.
    Query {
        #[arg(long)]
        goal: String,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long)]
        weights: Option<String>,
    },
    /// Check a plan file without executing it.
    Verify {
        /// One action per line.
        #[arg(long)]
        plan: PathBuf,
        /// Also assert that the plan yields one more of this item.
        #[arg(long)]
        goal: Option<String>,
    },
    /// Clean, deduplicate and cluster the bank, then abstract patterns.
    Maintain {
        #[arg(long, default_value_t = DEFAULT_DEDUP_THRESHOLD)]
        dedup: f64,
        #[arg(long, default_value_t = DEFAULT_CLUSTER_THRESHOLD)]
        cluster: f64,
    },
    /// Keep-only or remove ablation of one axis against the full configuration.
    Ablate {
        #[arg(long)]
        mode: String,
        #[arg(long)]
        axis: Axis,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 30)]
        episodes: usize,
    },
    /// Success metrics for several values of k.
    Ksweep {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        ks: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 30)]
        episodes: usize,
    },
    /// Transfer on versus off over paired seeds.
    Report {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 30)]
        episodes: usize,
        /// Also write the unlock time series as CSV here.
        #[arg(long)]
        series: Option<PathBuf>,
    },
}

fn load_tree(g: &Global) -> Result<TechTree> {
    match &g.tree {
        Some(p) => TechTree::load(p).with_context(|| format!("loading tree {}", p.display())),
        None => Ok(TechTree::default_tree()),
    }
}

fn failures_path(g: &Global, bank: &Path) -> PathBuf {
    g.failures.clone().unwrap_or_else(|| {
        let mut p = bank.as_os_str().to_owned();
        p.push(".failures.jsonl");
        PathBuf::from(p)
    })
}

/// The bank at `--bank`, or an empty one if the file does not exist yet.
fn load_bank(g: &Global) -> Result<MemoryBank> {
    match &g.bank {
        Some(p) if p.exists() => {
            MemoryBank::load(p, &failures_path(g, p)).with_context(|| format!("loading bank {}", p.display()))
        }
        _ => Ok(MemoryBank::new()),
    }
}

fn require_bank(g: &Global) -> Result<MemoryBank> {
    match &g.bank {
        Some(p) if p.exists() => load_bank(g),
        Some(p) => bail!("bank {} does not exist", p.display()),
        None => bail!("--bank is required"),
    }
}

fn save_bank(g: &Global, bank: &MemoryBank) -> Result<()> {
    if let Some(p) = &g.bank {
        bank.save(p, &failures_path(g, p))
            .with_context(|| format!("saving bank {}", p.display()))?;
    }
    Ok(())
}

fn load_state(g: &Global) -> Result<WorldState> {
    match &g.state {
        Some(p) if p.exists() => {
            let text = fs::read_to_string(p).with_context(|| format!("reading state {}", p.display()))?;
            Ok(serde_json::from_str(&text)?)
        }
        _ => Ok(WorldState::new(g.seed)),
    }
}

fn save_state(g: &Global, state: &WorldState) -> Result<()> {
    if let Some(p) = &g.state {
        fs::write(p, serde_json::to_string_pretty(state)? + "\n")?;
    }
    Ok(())
}

fn weights(spec: &Option<String>) -> Result<AxisWeights> {
    Ok(match spec {
        Some(s) => s.parse()?,
        None => AxisWeights::uniform(),
    })
}

fn format(g: &Global) -> Result<Format> {
    Ok(g.format.parse()?)
}

fn write(g: &Global, text: &str) -> Result<()> {
    match &g.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Emit a JSON-only result, rejecting `--format csv`.
fn write_json(g: &Global, text: analogmem::Result<String>) -> Result<()> {
    if format(g)? != Format::Json {
        bail!("this command only produces JSON");
    }
    write(g, &text?)
}

fn write_table(g: &Global, table: &MetricsTable) -> Result<()> {
    match format(g)? {
        Format::Json => write(g, &to_json(table)?),
        Format::Csv => write(g, &table_csv(table)?),
    }
}

fn policy(spec: &str) -> Result<Box<dyn PolicyModel>> {
    if spec == "builtin" {
        return Ok(Box::new(BuiltinPolicy::default()));
    }
    match spec.strip_prefix("external:") {
        Some(ep) => Ok(Box::new(ExternalPolicy::new(ep.parse::<Endpoint>()?))),
        None => bail!("unknown policy `{spec}`; expected builtin or external:<endpoint>"),
    }
}

fn seed_list(g: &Global, n: u64) -> Vec<u64> {
    (g.seed..g.seed + n).collect()
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    let tree = load_tree(g)?;
    match &cli.command {
        Command::Run {
            episodes,
            transfer,
            k,
            weights: w,
        } => {
            let arm = ArmConfig {
                k: *k,
                weights: weights(w)?,
                episodes: *episodes,
                ..ArmConfig::new("run", matches!(transfer, Switch::On))
            };
            let mut bank = load_bank(g)?;
            let mut state = load_state(g)?;
            let report: RunReport = run_curriculum_with(
                &arm.episode_configs(&tree, g.seed),
                g.seed,
                &tree,
                &arm.agent,
                &BuiltinPolicy::new(arm.licensing.clone()),
                &mut state,
                &mut bank,
            )?;
            save_bank(g, &bank)?;
            save_state(g, &state)?;
            write_json(g, to_json(&report))
        }
        Command::Induce {
            k,
            weights: w,
            strategy,
            budget,
            policy: p,
        } => {
            let mut bank = require_bank(g)?;
            let mut state = load_state(g)?;
            let cfg = InduceConfig {
                k: *k,
                weights: weights(w)?,
                strategy: strategy.parse::<SeedStrategy>()?,
                budget: *budget,
            };
            let trials = induce_and_trial(&mut bank, &mut state, &tree, &cfg, policy(p)?.as_ref())?;
            save_bank(g, &bank)?;
            save_state(g, &state)?;
            write_json(g, to_json(&json!({ "config": cfg, "trials": trials })))
        }
        Command::Query { goal, k, weights: w } => {
            let bank = require_bank(g)?;
            let state = load_state(g)?;
            let dim = bank.entries().next().map_or(Ok(Encoder::default()), |e| Encoder::new(e.csd.dim()))?;
            let query = CsdBuilder::new(&tree, dim).build(&TaskRecord::sketch(goal, &tree)?, &state)?;
            let result = retrieve_top_k(&query, &bank, &weights(w)?, *k, None)?;
            write_json(g, to_json(&result))
        }
        Command::Verify { plan, goal } => {
            let text = fs::read_to_string(plan).with_context(|| format!("reading plan {}", plan.display()))?;
            let actions = parse_plan(&text)?;
            let state = load_state(g)?;
            let asserts: Vec<Assertion> = goal
                .iter()
                .map(|item| Assertion::Produces {
                    item: item.clone(),
                    count: state.count(item) + 1,
                })
                .collect();
            write_json(g, to_json(&verify(&actions, &asserts, &state, &tree)))
        }
        Command::Maintain { dedup, cluster } => {
            let mut bank = require_bank(g)?;
            let (report, clusters) = bank.maintain(&tree, *dedup, *cluster)?;
            let mut patterns = Vec::new();
            for c in clusters.clusters.iter().filter(|c| c.members.len() >= 2) {
                patterns.extend(abstract_pattern(&c.members, &bank, &tree)?);
            }
            save_bank(g, &bank)?;
            let members: Vec<&Vec<u64>> = clusters.clusters.iter().map(|c| &c.members).collect();
            write_json(g, to_json(&json!({ "report": report, "clusters": members, "patterns": patterns })))
        }
        Command::Ablate {
            mode,
            axis,
            seeds,
            episodes,
        } => {
            let spec = AblationSpec {
                mode: mode.parse::<AblationMode>()?,
                axis: *axis,
            };
            let base = ArmConfig {
                episodes: *episodes,
                ..ArmConfig::new("full", true)
            };
            let report = run_ablation(spec, &base, &seed_list(g, *seeds), &tree)?;
            match format(g)? {
                Format::Json => write(g, &to_json(&report)?),
                Format::Csv => write_table(
                    g,
                    &MetricsTable {
                        seeds: report.seeds.clone(),
                        rows: report.baseline.iter().chain(&report.ablated).cloned().collect(),
                    },
                ),
            }
        }
        Command::Ksweep { ks, seeds, episodes } => {
            let base = ArmConfig {
                episodes: *episodes,
                ..ArmConfig::new("kshot", true)
            };
            write_table(g, &run_kshot_sweep(ks, &base, &seed_list(g, *seeds), &tree)?)
        }
        Command::Report {
            seeds,
            episodes,
            series,
        } => {
            let seeds = seed_list(g, *seeds);
            let mut rows = Vec::new();
            let mut all = Vec::new();
            for (name, transfer) in [("transfer_on", true), ("transfer_off", false)] {
                let arm = ArmConfig {
                    episodes: *episodes,
                    ..ArmConfig::new(name, transfer)
                };
                let reports = run_arm(&arm, &seeds, &tree)?;
                rows.extend(summarize(name, &reports, *episodes, &tree));
                all.extend(reports);
            }
            if let Some(p) = series {
                fs::write(p, series_csv(&all)?).with_context(|| format!("writing {}", p.display()))?;
            }
            write_table(g, &MetricsTable { seeds, rows })
        }
    }
}
