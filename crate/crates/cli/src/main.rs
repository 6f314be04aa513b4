use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rank3::experiment::{run_sweep, ExperimentConfig, SweepResult};
use rank3::topopt::StartKind;
use rank3::Error;

/// Rank-3 laminate bounds, mapped unit cells and inverse-homogenization
/// sweeps.
#[derive(Parser, Debug)]
#[command(name = "rank3", version)]
struct Args {
    /// JSON experiment configuration; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Example to run (1 to 4)
    #[arg(long)]
    example: Option<u8>,
    /// Comma-separated sweep values
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    chi: Option<Vec<f64>>,
    /// Volume fraction of the stiff phase
    #[arg(long)]
    f: Option<f64>,
    /// Minimum length scale (twice the filter radius)
    #[arg(long)]
    lengthscale: Option<f64>,
    /// Mesh size, `N` or `NXxNY`
    #[arg(long)]
    mesh: Option<String>,
    /// Comma-separated starting guesses: mapped, random, homogeneous
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    sg: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent optimization runs
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Draw solid as black
    #[arg(long)]
    invert: bool,
    /// Report each finished run
    #[arg(long, short)]
    verbose: bool,
}

fn parse_mesh(s: &str) -> Result<(usize, usize), Error> {
    let bad = || Error::Config(format!("invalid mesh '{s}', expected N or NXxNY"));
    match s.split_once(['x', 'X']) {
        Some((a, b)) => Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

fn build_config(args: &Args) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&args.config, args.example) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_json_with(&text, args.example)?
        }
        (None, Some(id)) => ExperimentConfig::example(id)?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(chi) = &args.chi {
        cfg.chi = chi.clone();
    }
    if let Some(f) = args.f {
        cfg.f = f;
    }
    if let Some(l) = args.lengthscale {
        cfg.lengthscale = l;
    }
    if let Some(m) = &args.mesh {
        (cfg.nx, cfg.ny) = parse_mesh(m)?;
    }
    if let Some(sg) = &args.sg {
        cfg.starting_guesses = sg.iter().map(|s| s.parse::<StartKind>()).collect::<Result<_, _>>()?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    if cfg.out.is_none() {
        cfg.out = Some(PathBuf::from("results"));
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(n) = args.max_iter {
        cfg.max_iter = n;
    }
    cfg.invert_images |= args.invert;
    cfg.verbose |= args.verbose;
    cfg.validate()?;
    Ok(cfg)
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn print_summary(res: &SweepResult) {
    println!("{:>6} {:>10} {:>12} {:>10} {:>10} {:>10}  status", "chi", "bound", "mapped_rank3", "mapped_sg", "random_sg", "homog_sg");
    for r in &res.rows {
        println!(
            "{:>6} {:>10} {:>12} {:>10} {:>10} {:>10}  {}",
            r.chi,
            fmt(r.bound),
            fmt(r.normalized(r.mapped_rank3)),
            fmt(r.normalized(r.energy(StartKind::Mapped))),
            fmt(r.normalized(r.energy(StartKind::Random))),
            fmt(r.normalized(r.energy(StartKind::Homogeneous))),
            r.status()
        );
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match build_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let res = match run_sweep(&cfg) {
        Ok(r) => r,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    print_summary(&res);
    if let Some(out) = &cfg.out {
        eprintln!("results written to {}", out.join(cfg.label()).join("results.csv").display());
    }
    if res.any_failed() {
        for r in res.rows.iter().filter(|r| !r.failures.is_empty()) {
            for f in &r.failures {
                eprintln!("chi={}: {f}", r.chi);
            }
        }
        return ExitCode::from(2);
    }
    ExitCode::SUCCESS
}
