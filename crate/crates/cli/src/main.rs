use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use agghoo::bench::{
    self, default_tau_grid, expand_settings, ExperimentConfig, FamilySpec, ProblemSpec, Resampling, Scheme,
};
use agghoo::data::{self, MissingPolicy};
use agghoo::synthetic::{bayes_risk_gaussmix, bayes_risk_sigmoid, DEFAULT_SIGMOID_GRID};
use agghoo::theory::{self, check_oracle_bound, OracleBoundParams};

#[derive(Parser)]
#[command(name = "agghoo", about = "Aggregated hold-out, hold-out and cross-validation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicated experiment and write CSV, SVG and metadata.
    Bench(BenchArgs),
    /// Bayes risk of a synthetic problem.
    BayesRisk(BayesArgs),
    /// Exact checks of the majority-vote bounds, and an optional
    /// Monte-Carlo check of the oracle inequality.
    TheoryCheck(TheoryArgs),
    /// Load the breast-cancer file and print a summary.
    LoadUci(UciArgs),
    /// Print the version.
    Version,
}

#[derive(Args, Default)]
struct BenchArgs {
    /// TOML file with any of the keys below; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// sigmoid | gaussmix[:d] | uci[:path]
    #[arg(long)]
    problem: Option<String>,
    /// knn[:k_max] | cart[:alpha_min:ratio:points] | lp[:cap_degree:cap_k]
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    test_n: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Comma-separated training fractions; `vfold` adds V-fold plans.
    #[arg(long, value_delimiter = ',')]
    tau_list: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    v_list: Option<Vec<usize>>,
    /// Comma-separated: agghoo, cv, holdout, subag.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    /// Inner training fraction for `subag`.
    #[arg(long)]
    inner_tau: Option<f64>,
    #[arg(long)]
    missing_policy: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; the CSV goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

/// Keys accepted in a `--config` file.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    problem: Option<String>,
    family: Option<String>,
    n: Option<usize>,
    test_n: Option<usize>,
    replicates: Option<usize>,
    tau_list: Option<Vec<TauItem>>,
    v_list: Option<Vec<usize>>,
    schemes: Option<Vec<String>>,
    inner_tau: Option<f64>,
    missing_policy: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    threads: Option<usize>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TauItem {
    Num(f64),
    Text(String),
}

impl TauItem {
    fn text(self) -> String {
        match self {
            TauItem::Num(x) => format!("{x}"),
            TauItem::Text(s) => s,
        }
    }
}

#[derive(Args)]
struct BayesArgs {
    /// sigmoid | gaussmix[:d]
    #[arg(long)]
    problem: String,
    /// Simpson grid per axis (sigmoid).
    #[arg(long, conflicts_with = "mc_n")]
    grid: Option<usize>,
    /// Monte-Carlo draws (gaussmix).
    #[arg(long)]
    mc_n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TheoryArgs {
    /// Random instances for the majority-vote bound sweep.
    #[arg(long, default_value_t = 10_000)]
    sweeps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also run the Monte-Carlo oracle-inequality check (advisory).
    #[arg(long)]
    oracle_bound: bool,
    #[arg(long, default_value = "sigmoid")]
    problem: String,
    #[arg(long, default_value = "knn")]
    family: String,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    test_n: usize,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, default_value_t = 0.7)]
    tau: f64,
    #[arg(long, default_value_t = 10)]
    v: usize,
    /// Margin exponent of the distribution.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Margin constant of the distribution.
    #[arg(long, default_value_t = 10.0)]
    c: f64,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct UciArgs {
    /// Defaults to the bundled copy.
    #[arg(long)]
    path: Option<PathBuf>,
    /// impute-median | drop-rows
    #[arg(long, default_value = "impute-median")]
    missing_policy: String,
    /// Write the cleaned dataset as CSV.
    #[arg(long)]
    export: Option<PathBuf>,
}

/// Bad flags or configuration (exit 1) versus failures while running (exit 2).
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<agghoo::Error> for Failure {
    fn from(e: agghoo::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Bench(a) => run_bench(a),
        Command::BayesRisk(a) => run_bayes(a),
        Command::TheoryCheck(a) => run_theory(a),
        Command::LoadUci(a) => run_load_uci(a),
        Command::Version => {
            println!("agghoo {}", env!("CARGO_PKG_VERSION"));
            Ok(ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    if threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build().map_err(runtime)
}

struct BenchPlan {
    config: ExperimentConfig,
    out: Option<PathBuf>,
    threads: Option<usize>,
}

fn resolve_bench(a: BenchArgs) -> Result<BenchPlan, Failure> {
    let file = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            toml::from_str::<FileConfig>(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let problem: ProblemSpec =
        a.problem.or(file.problem).as_deref().unwrap_or("sigmoid").parse().map_err(usage)?;
    let family: FamilySpec = a.family.or(file.family).as_deref().unwrap_or("knn").parse().map_err(usage)?;
    let taus: Vec<String> = match a.tau_list {
        Some(t) => t,
        None => match file.tau_list {
            Some(t) => t.into_iter().map(TauItem::text).collect(),
            None => default_tau_grid().iter().map(|t| format!("{t}")).collect(),
        },
    };
    let resamplings = taus
        .iter()
        .map(|t| Resampling::parse_label(t.trim()))
        .collect::<agghoo::Result<Vec<_>>>()
        .map_err(usage)?;
    let vs = a.v_list.or(file.v_list).unwrap_or_else(|| vec![1, 2, 5, 10]);
    let scheme_names =
        a.schemes.or(file.schemes).unwrap_or_else(|| vec!["agghoo".into(), "cv".into(), "holdout".into()]);
    let schemes = scheme_names
        .iter()
        .map(|s| s.trim().parse::<Scheme>())
        .collect::<agghoo::Result<Vec<_>>>()
        .map_err(usage)?;
    let settings = expand_settings(&schemes, &resamplings, &vs);
    let mut config = ExperimentConfig::new(problem, family, settings);
    if let Some(n) = a.n.or(file.n) {
        config.n = n;
    }
    if let Some(t) = a.test_n.or(file.test_n) {
        config.test_n = t;
    }
    if let Some(r) = a.replicates.or(file.replicates) {
        config.replicates = r;
    }
    config.inner_tau = a.inner_tau.or(file.inner_tau);
    if let Some(p) = a.missing_policy.or(file.missing_policy) {
        config.missing_policy = p.parse::<MissingPolicy>().map_err(usage)?;
    }
    config.master_seed = a.seed.or(file.seed).unwrap_or(0);
    config.validate().map_err(usage)?;
    Ok(BenchPlan { config, out: a.out.or(file.out), threads: a.threads.or(file.threads) })
}

fn run_bench(a: BenchArgs) -> Result<ExitCode, Failure> {
    let plan = resolve_bench(a)?;
    let pool = pool(plan.threads)?;
    eprintln!(
        "bench: seed {}, {} settings, {} replicates, {} threads",
        plan.config.master_seed,
        plan.config.settings.len(),
        plan.config.replicates,
        pool.current_num_threads()
    );
    let c = &plan.config;
    eprintln!(
        "config: problem {} family {} n {} test_n {} inner_tau {:?} missing_policy {:?}",
        c.problem, c.family, c.n, c.test_n, c.inner_tau, c.missing_policy
    );
    let keys: Vec<String> = c.settings.iter().map(|s| s.key().to_string()).collect();
    eprintln!("settings: {}", keys.join(" "));
    let report = pool.install(|| bench::run_experiment(&plan.config))?;
    if report.failures() > 0 {
        eprintln!("warning: {} failed rows recorded in the output", report.failures());
    }
    match &plan.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
            bench::write_csv_file(&report, &dir.join("bench.csv"))?;
            bench::write_svg(&report, &dir.join("bench.svg"))?;
            bench::write_metadata(&report, &dir.join("bench.meta.json"))?;
            eprintln!("wrote {}/bench.{{csv,svg,meta.json}} in {:.1} s", dir.display(), report.runtime_secs);
        }
        None => bench::write_csv(&report, std::io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn run_bayes(a: BayesArgs) -> Result<ExitCode, Failure> {
    let problem: ProblemSpec = a.problem.parse().map_err(usage)?;
    let out = match problem {
        ProblemSpec::Sigmoid => {
            if a.mc_n.is_some() {
                return Err(usage("the sigmoid risk is integrated; use --grid"));
            }
            let grid = a.grid.unwrap_or(DEFAULT_SIGMOID_GRID);
            let r = bayes_risk_sigmoid(grid).map_err(usage)?;
            json!({ "problem": problem.to_string(), "method": "simpson", "grid": grid, "bayes_risk": r })
        }
        ProblemSpec::GaussMix { d } => {
            if a.grid.is_some() {
                return Err(usage("the gaussmix risk is estimated by Monte Carlo; use --mc-n"));
            }
            let mc_n = a.mc_n.unwrap_or(1_000_000);
            let e = bayes_risk_gaussmix(d, mc_n, a.seed).map_err(usage)?;
            json!({
                "problem": problem.to_string(), "method": "monte-carlo", "mc_n": mc_n,
                "seed": a.seed, "bayes_risk": e.value, "se": e.se,
            })
        }
        ProblemSpec::Uci { .. } => return Err(usage("the UCI data has no known Bayes risk")),
    };
    println!("{out}");
    Ok(ExitCode::SUCCESS)
}

fn run_theory(a: TheoryArgs) -> Result<ExitCode, Failure> {
    let pool = pool(a.threads)?;
    eprintln!("theory-check: seed {}, {} instances", a.seed, a.sweeps);
    let (bounds, minimal) = pool.install(|| {
        (theory::majority_bound_sweep(a.sweeps, a.seed), theory::bayes_minimality_sweep(a.sweeps.min(1000), a.seed))
    });
    let mut verdict = json!({
        "majority_vote_bounds": bounds,
        "bayes_minimality": minimal,
        "all_hold": bounds.all_hold && minimal.all_hold,
    });
    if a.oracle_bound {
        let problem: ProblemSpec = a.problem.parse().map_err(usage)?;
        let family: FamilySpec = a.family.parse().map_err(usage)?;
        let mut config = ExperimentConfig::new(problem, family, Vec::new());
        config.n = a.n;
        config.test_n = a.test_n;
        config.replicates = a.replicates;
        config.master_seed = a.seed;
        let samples = pool.install(|| bench::oracle_bound_samples(&config, a.tau, a.v))?;
        let params = OracleBoundParams { family_size: samples.family_size, p: samples.p, beta: a.beta, c: a.c };
        let report = check_oracle_bound(&samples.agghoo, &samples.oracle, params).map_err(usage)?;
        verdict["oracle_inequality"] = json!({ "advisory": true, "report": report });
    }
    println!("{}", serde_json::to_string_pretty(&verdict).map_err(runtime)?);
    if bounds.all_hold && minimal.all_hold {
        eprintln!("all majority-vote bound instances hold");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("violations found: {} bound, {} minimality", bounds.violations, minimal.failures);
        Ok(ExitCode::from(2))
    }
}

fn run_load_uci(a: UciArgs) -> Result<ExitCode, Failure> {
    let policy: MissingPolicy = a.missing_policy.parse().map_err(usage)?;
    let path = a.path.unwrap_or_else(data::bundled_breast_cancer_path);
    let loaded = data::load_breast_cancer(&path, policy)?;
    let d = &loaded.dataset;
    let mut counts = vec![0usize; d.class_count()];
    for l in d.labels() {
        counts[l.index()] += 1;
    }
    if let Some(out) = &a.export {
        data::write_dataset_csv(d, out)?;
    }
    println!(
        "{}",
        json!({
            "path": path.display().to_string(),
            "sha256": loaded.sha256,
            "raw_rows": loaded.raw_rows,
            "rows_with_missing": loaded.rows_with_missing,
            "rows": d.len(),
            "features": d.dim(),
            "class_counts": counts,
            "exported": a.export.as_deref().map(Path::display).map(|p| p.to_string()),
        })
    );
    Ok(ExitCode::SUCCESS)
}
