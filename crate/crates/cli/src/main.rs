use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use obda_core::bench::{gen_grid_data, gen_wisconsin, run_suite, save_csv, BenchConfig};
use obda_core::cost::{calibrate, read_samples};
use obda_core::estimate::{estimate_std, estimate_unfolding, EstimationContext};
use obda_core::ir::{make_fragment_query, Cover, Cq, Ucq};
use obda_core::mapping::{MappingSet, Tbox};
use obda_core::oracle::{eval_translation, DataInstance};
use obda_core::parse::{parse_cq, parse_mappings, parse_tbox};
use obda_core::planner::{collect_for_planning, plan, planning_mappings, PlanChoice, DEFAULT_MAX_FRAGMENTS};
use obda_core::relexpr::rule_expr;
use obda_core::sql::emit_sql;
use obda_core::stats::{CostConstants, StatsCatalog};
use obda_core::unfold::unfold_ucq;

#[derive(Parser)]
#[command(name = "obda", about = "Cost-based query translation for ontology-based data access")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect statistics of the saturated and wrapped mappings over a data set.
    CollectStats {
        #[command(flatten)]
        inputs: MappingInputs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the answer count of a query (or of each fragment of a cover).
    Estimate {
        #[arg(long)]
        query: PathBuf,
        #[command(flatten)]
        inputs: MappingInputs,
        #[arg(long)]
        stats: PathBuf,
        /// Cover such as "1,2|3" (1-based atom positions).
        #[arg(long)]
        cover: Option<String>,
        /// Also report the independence-based baseline estimate.
        #[arg(long)]
        baseline: bool,
    },
    /// Fit cost constants to observed run costs.
    Calibrate {
        /// CSV with columns scan,hash_join,dedup,materialize,merge_join,observed.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank the candidate translations of a query.
    Plan {
        #[arg(long)]
        query: PathBuf,
        #[command(flatten)]
        inputs: MappingInputs,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        consts: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_FRAGMENTS)]
        max_fragments: usize,
        /// Directory receiving one SQL file per candidate.
        #[arg(long)]
        emit_sql: Option<PathBuf>,
        #[arg(long, default_value = "ansi")]
        dialect: String,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate the planned translations of a plan report over a data set.
    Eval {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        consts: Option<PathBuf>,
        /// Evaluate every candidate instead of the chosen one.
        #[arg(long)]
        all: bool,
    },
    /// Wisconsin benchmark data and grid runs.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Write Wisconsin tables as CSV plus schema.json.
    Gen {
        #[arg(long, default_value_t = 10_000)]
        rows: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Number of plain tables; ignored with --grid.
        #[arg(long, default_value_t = 1)]
        tables: usize,
        /// Generate the tables the mapping grid reads.
        #[arg(long)]
        grid: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan and evaluate the grid, writing one CSV row per candidate.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct MappingInputs {
    #[arg(long)]
    mappings: PathBuf,
    #[arg(long)]
    tbox: Option<PathBuf>,
}

impl MappingInputs {
    fn load(&self) -> Result<(MappingSet, Tbox)> {
        let m = parse_mappings(&read(&self.mappings)?).with_context(|| format!("parsing {}", self.mappings.display()))?;
        m.validate()?;
        let t = match &self.tbox {
            Some(p) => parse_tbox(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
            None => Tbox::default(),
        };
        Ok((m, t))
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn load_query(path: &Path) -> Result<Cq> {
    parse_cq(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_consts(path: Option<&Path>) -> Result<CostConstants> {
    Ok(match path {
        Some(p) => CostConstants::load(p)?,
        None => CostConstants::default(),
    })
}

/// Estimate of `q` over the wrapped T-mapping, optionally with the baseline.
fn estimate_report(q: &Cq, wmt: &MappingSet, stats: &StatsCatalog, baseline: bool) -> Result<serde_json::Value> {
    let ucq: Ucq = q.clone().into();
    let u = unfold_ucq(&ucq, wmt);
    let mut ctx = EstimationContext::new(stats);
    let est = estimate_unfolding(&mut ctx, &ucq, wmt, &u.rules)?;
    let mut report = json!({ "query": q.to_string(), "estimate": est });
    if baseline {
        let mut total = 0u64;
        for r in &u.rules {
            total += estimate_std(stats, &rule_expr(&ucq.cqs[r.cq], wmt, r)?)?;
        }
        report["baseline"] = json!(total);
    }
    Ok(report)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct PlanReport {
    query: String,
    plans: Vec<PlanChoice>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::CollectStats { inputs, data, out } => {
            let (m, t) = inputs.load()?;
            let d = DataInstance::load(&data)?;
            let stats = collect_for_planning(&m, &t, &d)?;
            stats.save(&out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Estimate {
            query,
            inputs,
            stats,
            cover,
            baseline,
        } => {
            let q = load_query(&query)?;
            let (m, t) = inputs.load()?;
            let stats = StatsCatalog::load(&stats)?;
            let (_, wmt) = planning_mappings(&m, &t)?;
            let report = match cover {
                None => estimate_report(&q, &wmt, &stats, baseline)?,
                Some(text) => {
                    let cover = Cover::parse(&text, q.body.len())?;
                    let fragments = (0..cover.len())
                        .map(|f| estimate_report(&make_fragment_query(&q, f, &cover)?, &wmt, &stats, baseline))
                        .collect::<Result<Vec<_>>>()?;
                    json!({ "cover": cover.to_string(), "fragments": fragments })
                }
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Calibrate { samples, out } => {
            let file = fs::File::open(&samples).with_context(|| format!("opening {}", samples.display()))?;
            let fit = calibrate(&read_samples(file)?);
            if let Some(reason) = &fit.fallback {
                eprintln!("using default constants: {reason}");
            }
            write_json(&out, &fit.constants)?;
            println!("{}", serde_json::to_string_pretty(&fit)?);
        }
        Command::Plan {
            query,
            inputs,
            stats,
            consts,
            max_fragments,
            emit_sql: sql_dir,
            dialect,
            report,
        } => {
            let q = load_query(&query)?;
            let (m, t) = inputs.load()?;
            let stats = StatsCatalog::load(&stats)?;
            let consts = load_consts(consts.as_deref())?;
            let mut plans = plan(&q, &m, &t, &stats, &consts, max_fragments)?;
            for p in &mut plans {
                p.sql = Some(emit_sql(p, &dialect)?);
            }
            if let Some(dir) = &sql_dir {
                fs::create_dir_all(dir)?;
                for (i, p) in plans.iter().enumerate() {
                    let name = format!("{:02}_{}.sql", i + 1, p.cover.to_string().replace('|', "-").replace(',', "_"));
                    fs::write(dir.join(name), p.sql.as_deref().unwrap_or_default())?;
                }
            }
            for (i, p) in plans.iter().enumerate() {
                println!(
                    "{}{:>3} {:<12} {:?} cqs={} est_card={} cost={:.1}{}",
                    if i == 0 { "*" } else { " " },
                    i + 1,
                    p.cover.to_string(),
                    p.kind,
                    p.n_cqs,
                    p.est_card,
                    p.cost.total,
                    if p.zero_answers { " (no answers)" } else { "" }
                );
            }
            if let Some(path) = &report {
                write_json(path, &PlanReport { query: q.to_string(), plans })?;
            }
        }
        Command::Eval { plan, data, consts, all } => {
            let report: PlanReport = serde_json::from_str(&read(&plan)?).context("reading plan report")?;
            let d = DataInstance::load(&data)?;
            let consts = load_consts(consts.as_deref())?;
            if report.plans.is_empty() {
                bail!("plan report has no candidates");
            }
            let n = if all { report.plans.len() } else { 1 };
            for p in &report.plans[..n] {
                let ev = eval_translation(p.translation.unfolded(), &d)?;
                println!(
                    "{}",
                    json!({
                        "cover": p.cover.to_string(),
                        "answers": ev.answers.len(),
                        "counters": ev.counters,
                        "oracle_cost": ev.counters.cost(&consts),
                        "est_cost": p.cost.total,
                    })
                );
            }
        }
        Command::Bench { command } => match command {
            BenchCommand::Gen {
                rows,
                seed,
                tables,
                grid,
                out,
            } => {
                let d = if grid {
                    gen_grid_data(rows, seed)?
                } else {
                    gen_wisconsin(rows, tables, seed)?
                };
                d.save(&out)?;
                eprintln!("wrote {} tables to {}", d.tables.len(), out.display());
            }
            BenchCommand::Run { config, out } => {
                let config: BenchConfig = match config {
                    Some(p) => serde_json::from_str(&read(&p)?).context("reading bench config")?,
                    None => BenchConfig::default(),
                };
                let rows = run_suite(&config)?;
                let failed = rows.iter().filter(|r| r.error.is_some()).count();
                for r in rows.iter().filter(|r| r.error.is_some()) {
                    eprintln!("{}: {}", r.query_id, r.error.as_deref().unwrap_or_default());
                }
                save_csv(&rows, &out)?;
                eprintln!("wrote {} rows to {} ({failed} failed points)", rows.len(), out.display());
            }
        },
    }
    Ok(())
}
