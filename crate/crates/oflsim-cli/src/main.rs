//! Command-line harness.
//!
//! Subcommands:
//!   factorize       build a factorization and write/read its CSV bundle
//!   bnorm-study     ||B||_F^2 versus R, per method
//!   simulate        one simulation run with trace and metrics CSVs
//!   impact-tau      loss-error curves across equal-total-data tau settings
//!   budget-compare  correlated vs independent baseline under each budget
//!   verify          run the property suite
//!
//! Exit codes: 0 success, 1 invariant violation or runtime failure,
//! 2 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use oflsim::config::ExperimentConfig;
use oflsim::error::Error;
use oflsim::experiments::{
    obtain_factorization, run_bnorm_study, run_budget_comparison, run_impact_tau,
    run_single_simulation, with_jobs,
};
use oflsim::factorization::{read_bundle, write_bundle, FactorizationMethod};
use oflsim::properties::run_property_suite;

const USAGE: &str = "\
oflsim - differentially private online federated learning simulator

USAGE:
    oflsim <SUBCOMMAND> [OPTIONS]

SUBCOMMANDS:
    factorize       --rounds <R> [--method <M>] [--factorization-cache <DIR>]
                    [--max-iters <N>] [--tol <T>]
    bnorm-study     --rounds <R1,R2,..> [--method <M>[,<M2>..]] --out <DIR>
    simulate        --config <FILE> --out <DIR> [--seed <S>] [--jobs <J>]
                    [--dump-models] [--data-cache <FILE>]
                    [--factorization-cache <DIR>] [--sensitivity-scale <X>]
    impact-tau      --config <FILE> --out <DIR> [--seed <S>] [--jobs <J>]
    budget-compare  --config <FILE> --out <DIR> [--seed <S>] [--jobs <J>]
    verify          [--seed <S>]

Methods: trivial_identity_c | trivial_identity_b | sqrt_normalized | optimized
Config files are TOML; --seed, --jobs and --out override file values.
";

struct Args {
    flags: Vec<(String, Option<String>)>,
}

impl Args {
    fn parse(argv: &[String]) -> Result<Args, String> {
        let mut flags = Vec::new();
        let mut i = 0;
        while i < argv.len() {
            let arg = &argv[i];
            if !arg.starts_with("--") {
                return Err(format!("unexpected argument `{arg}`"));
            }
            let name = arg.trim_start_matches("--").to_string();
            let boolean = matches!(name.as_str(), "dump-models" | "help");
            if boolean {
                flags.push((name, None));
                i += 1;
            } else {
                let value = argv
                    .get(i + 1)
                    .ok_or_else(|| format!("flag --{name} needs a value"))?;
                flags.push((name, Some(value.clone())));
                i += 2;
            }
        }
        Ok(Args { flags })
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.flags
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| v.as_deref())
    }

    fn has(&self, name: &str) -> bool {
        self.flags.iter().any(|(n, _)| n == name)
    }

    fn require(&self, name: &str) -> Result<&str, String> {
        self.get(name).ok_or_else(|| format!("missing --{name}"))
    }
}

fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidDimension(_) => {
            ExitCode::from(2)
        }
        _ => ExitCode::from(1),
    }
}

fn load_config(args: &Args) -> Result<ExperimentConfig, Error> {
    let path = args.require("config").map_err(Error::Config)?;
    let mut cfg = ExperimentConfig::load(&PathBuf::from(path))?;
    if let Some(seed) = args.get("seed") {
        cfg.seed = seed
            .parse()
            .map_err(|_| Error::Config(format!("bad --seed `{seed}`")))?;
    }
    if let Some(jobs) = args.get("jobs") {
        cfg.jobs = jobs
            .parse()
            .map_err(|_| Error::Config(format!("bad --jobs `{jobs}`")))?;
    }
    if let Some(cache) = args.get("data-cache") {
        cfg.data.cache = Some(PathBuf::from(cache));
    }
    if let Some(cache) = args.get("factorization-cache") {
        cfg.factorization.cache_dir = Some(PathBuf::from(cache));
    }
    if let Some(scale) = args.get("sensitivity-scale") {
        cfg.sim.sensitivity_scale = scale
            .parse()
            .map_err(|_| Error::Config(format!("bad --sensitivity-scale `{scale}`")))?;
    }
    Ok(cfg)
}

/// `--out` takes precedence over the config's own output_dir but is kept out
/// of the config echo, so reruns into different directories stay
/// byte-identical.
fn out_dir(args: &Args, cfg: &ExperimentConfig) -> Result<PathBuf, Error> {
    args.get("out")
        .map(PathBuf::from)
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))
}

fn parse_method_list(spec: &str) -> Result<Vec<FactorizationMethod>, Error> {
    spec.split(',')
        .map(|m| FactorizationMethod::parse(m.trim()))
        .collect()
}

fn parse_rounds_list(spec: &str) -> Result<Vec<usize>, Error> {
    if spec.trim().is_empty() {
        return Ok(Vec::new());
    }
    spec.split(',')
        .map(|r| {
            r.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad rounds value `{r}`")))
        })
        .collect()
}

fn cmd_factorize(args: &Args) -> Result<(), Error> {
    let rounds: usize = args
        .require("rounds")
        .map_err(Error::Config)?
        .parse()
        .map_err(|_| Error::Config("bad --rounds".into()))?;
    let method = FactorizationMethod::parse(args.get("method").unwrap_or("sqrt_normalized"))?;
    let max_iters: usize = args
        .get("max-iters")
        .map(|v| {
            v.parse()
                .map_err(|_| Error::Config("bad --max-iters".into()))
        })
        .transpose()?
        .unwrap_or(oflsim::factorization::DEFAULT_OPTIMIZE_MAX_ITERS);
    let tol: f64 = args
        .get("tol")
        .map(|v| v.parse().map_err(|_| Error::Config("bad --tol".into())))
        .transpose()?
        .unwrap_or(oflsim::factorization::DEFAULT_OPTIMIZE_TOL);
    let cache = args.get("factorization-cache").map(PathBuf::from);
    let fact = obtain_factorization(method, rounds, cache.as_deref(), max_iters, tol)?;
    println!(
        "method={} R={} gamma={} frob_sq_b={} converged={}",
        fact.method,
        fact.dim(),
        fact.gamma,
        fact.frob_sq_b,
        fact.converged
    );
    if let Some(dir) = args.get("out") {
        let dir = PathBuf::from(dir);
        write_bundle(&fact, &dir)?;
        let reread = read_bundle(&dir)?;
        println!(
            "bundle written to {} (revalidated, gamma={})",
            dir.display(),
            reread.gamma
        );
    }
    Ok(())
}

fn cmd_bnorm_study(args: &Args) -> Result<(), Error> {
    let r_list = parse_rounds_list(args.require("rounds").map_err(Error::Config)?)?;
    let methods = parse_method_list(args.get("method").unwrap_or("sqrt_normalized"))?;
    let dir = PathBuf::from(args.require("out").map_err(Error::Config)?);
    let tables = run_bnorm_study(&r_list, &methods, &dir)?;
    for (method, rows) in &tables {
        for row in rows {
            println!(
                "{} R={} frob_sq_b={} ratio={}",
                method.tag(),
                row.rounds,
                row.frob_sq_b,
                row.ratio_to_r_sq
            );
        }
    }
    println!("wrote {}", dir.join("bnorm_study.csv").display());
    Ok(())
}

fn cmd_simulate(args: &Args) -> Result<(), Error> {
    let cfg = load_config(args)?;
    let dir = out_dir(args, &cfg)?;
    let dump = args.has("dump-models");
    let output = with_jobs(cfg.jobs, || run_single_simulation(&cfg, &dir, dump))?;
    for w in &output.trace.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "rounds={} final_loss_error={} dynamic_regret={} static_regret={}",
        output.trace.config.rounds,
        output.loss_error_final,
        output.dynamic_regret,
        output.static_regret
    );
    println!("outputs in {}", dir.display());
    Ok(())
}

fn cmd_impact_tau(args: &Args) -> Result<(), Error> {
    let cfg = load_config(args)?;
    let dir = out_dir(args, &cfg)?;
    let results = with_jobs(cfg.jobs, || run_impact_tau(&cfg, &dir))?;
    for r in &results {
        println!(
            "{}: rounds={} final_mean={} final_std={}",
            r.label, r.rounds, r.final_mean, r.final_std
        );
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

fn cmd_budget_compare(args: &Args) -> Result<(), Error> {
    let cfg = load_config(args)?;
    let dir = out_dir(args, &cfg)?;
    let results = with_jobs(cfg.jobs, || run_budget_comparison(&cfg, &dir))?;
    for r in &results {
        println!(
            "{}: rounds={} final_mean={} final_std={}",
            r.label, r.rounds, r.final_mean, r.final_std
        );
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

fn cmd_verify(args: &Args) -> Result<(), Error> {
    let seed: u64 = args
        .get("seed")
        .map(|v| v.parse().map_err(|_| Error::Config("bad --seed".into())))
        .transpose()?
        .unwrap_or(20240817);
    let outcomes = run_property_suite(seed);
    let mut failed = false;
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!("[{status}] {} - {}", o.name, o.detail);
        failed |= !o.passed;
    }
    if failed {
        return Err(Error::invariant(
            "property_suite",
            "at least one check failed",
        ));
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let Some(subcommand) = argv.first() else {
        eprint!("{USAGE}");
        return ExitCode::from(2);
    };
    if subcommand == "--help" || subcommand == "help" {
        print!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    let args = match Args::parse(&argv[1..]) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            eprint!("{USAGE}");
            return ExitCode::from(2);
        }
    };
    if args.has("help") {
        print!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    let result = match subcommand.as_str() {
        "factorize" => cmd_factorize(&args),
        "bnorm-study" => cmd_bnorm_study(&args),
        "simulate" => cmd_simulate(&args),
        "impact-tau" => cmd_impact_tau(&args),
        "budget-compare" => cmd_budget_compare(&args),
        "verify" => cmd_verify(&args),
        other => {
            eprintln!("error: unknown subcommand `{other}`");
            eprint!("{USAGE}");
            return ExitCode::from(2);
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
