//! Command-line surface. Exit codes: 0 success, 1 experiment failure,
//! 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::bench::{evaluate_cell, load_models, read_csv, render_report, run_sweep, write_csv, write_dat, AseNmse, EvalOptions, ExperimentPlan, Scheme, SweepAxis};
use crate::config::{ExperimentConfig, KvMap};
use crate::error::{Error, Result};
use crate::gradcheck::{gradcheck_tiny, GradcheckOptions, NetKind};
use crate::metrics::NmseForm;
use crate::nets::NetVariant;
use crate::pipeline::{gradient_audit, load_cell, load_split, save_variant, train_all, tune_ista, CellData, CellPaths};
use crate::sim::Split;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cfbss", version, about = "Two-stage unrolled channel estimation benchmark")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for data generation and training.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// key=value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact root.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Override a configuration key, e.g. `--set T=16`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Report the squared-norm NMSE instead of the norm ratio.
    #[arg(long, global = true)]
    pub nmse_squared: bool,
    /// Use each episode's own NMSE inside the ASE expression.
    #[arg(long, global = true)]
    pub ase_per_sample: bool,
    /// Flip the sign of the analytic gradient (audit self-test).
    #[arg(long, global = true)]
    pub corrupt_vjp: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/val/test datasets for one cell.
    GenData,
    /// Train nets and tune the baseline for one cell.
    Train {
        /// Schemes to prepare (default: configured variants and ista_l21).
        #[arg(long = "variant", value_name = "TAG")]
        variants: Vec<String>,
    },
    /// Finite-difference audit of both nets on a tiny configuration.
    Gradcheck {
        #[arg(long, default_value_t = 3)]
        points: usize,
    },
    /// Evaluate every scheme on one cell's test split.
    Eval {
        #[arg(long = "scheme", value_name = "TAG")]
        schemes: Vec<String>,
    },
    /// Evaluate every scheme along a pilot-length or SNR axis.
    Sweep {
        /// Axis name (`t` or `snr`) followed by comma-separated values.
        #[arg(long, num_args = 2, value_names = ["AXIS", "VALUES"])]
        axis: Vec<String>,
        #[arg(long = "scheme", value_name = "TAG")]
        schemes: Vec<String>,
    },
    /// Render a results CSV as tables and gnuplot series.
    Report {
        csv: PathBuf,
    },
}

/// Configuration from `--config` and `--set`, with the training seed taken
/// from `--seed`.
pub fn resolve_config(g: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut kv = match &g.config {
        Some(p) => KvMap::load(p)?,
        None => KvMap::new(),
    };
    for s in &g.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, got `{s}`")))?;
        kv.set(k.trim(), v.trim());
    }
    kv.set("seed", g.seed);
    ExperimentConfig::from_kv(&kv)
}

fn eval_options(g: &GlobalArgs) -> EvalOptions {
    EvalOptions {
        form: if g.nmse_squared { NmseForm::Squared } else { NmseForm::NormRatio },
        ase_nmse: if g.ase_per_sample { AseNmse::PerSample } else { AseNmse::Dataset },
    }
}

fn parse_schemes(tags: &[String], cfg: &ExperimentConfig) -> Result<Vec<Scheme>> {
    if tags.is_empty() {
        return Ok(Scheme::for_config(cfg));
    }
    tags.iter().flat_map(|t| t.split(',')).filter(|t| !t.is_empty()).map(str::parse).collect()
}

fn audit(g: &GlobalArgs) -> Result<()> {
    let opts = GradcheckOptions {
        corrupt_vjp: g.corrupt_vjp,
        ..GradcheckOptions::default()
    };
    for r in gradient_audit(&opts, g.seed)? {
        info!("{r}");
    }
    Ok(())
}

fn gen_data(g: &GlobalArgs, cfg: &ExperimentConfig) -> Result<()> {
    let paths = CellPaths::new(&g.out, &cfg.sparsity);
    let data = CellData::generate(cfg, g.seed)?;
    for (p, digest) in data.write(&paths)? {
        println!("{digest}  {}", p.display());
    }
    Ok(())
}

fn train(g: &GlobalArgs, cfg: &ExperimentConfig, tags: &[String]) -> Result<()> {
    let schemes = parse_schemes(tags, cfg)?;
    let variants: Vec<NetVariant> = schemes
        .iter()
        .filter_map(|s| match s {
            Scheme::Net(v) => Some(*v),
            _ => None,
        })
        .collect();
    let paths = CellPaths::new(&g.out, &cfg.sparsity);
    let data = load_cell(&paths, cfg, g.seed, &g.out)?;
    if !variants.is_empty() {
        audit(g)?;
        for t in train_all(cfg, &variants, &data)? {
            save_variant(&paths, cfg, g.seed, &t)?;
            for (net, rep) in [("coarse", &t.coarse_report), ("fine", &t.fine_report)] {
                if let Some(r) = rep {
                    println!(
                        "{} {net}: {} steps, val loss {:.4e} -> {:.4e}, clamp fraction {:.4}, healthy {}",
                        t.variant,
                        r.total_steps,
                        r.initial_val_loss,
                        r.final_val_loss,
                        r.clamp_fraction(),
                        r.healthy()
                    );
                }
            }
        }
    }
    if schemes.contains(&Scheme::IstaL21) {
        let tuning = tune_ista(cfg, &data.val)?;
        tuning.write(&paths.ista())?;
        println!("ista_l21: alpha {}", tuning.alpha);
    }
    Ok(())
}

fn gradcheck(g: &GlobalArgs, points: usize) -> Result<bool> {
    let opts = GradcheckOptions {
        corrupt_vjp: g.corrupt_vjp,
        ..GradcheckOptions::default()
    };
    let mut ok = true;
    for kind in [NetKind::Coarse, NetKind::Fine] {
        let r = gradcheck_tiny(kind, g.seed, points, false, &opts)?;
        println!("{r}");
        ok &= r.passed();
    }
    Ok(ok)
}

fn eval(g: &GlobalArgs, cfg: &ExperimentConfig, tags: &[String]) -> Result<()> {
    let schemes = parse_schemes(tags, cfg)?;
    let paths = CellPaths::new(&g.out, &cfg.sparsity);
    let test = load_split(&paths, Split::Test, cfg, g.seed, &g.out)?;
    let models = load_models(&paths, cfg, &schemes, g.seed, &g.out)?;
    let results = evaluate_cell(cfg, g.seed, &test, &models, &schemes, eval_options(g))?;
    let records: Vec<_> = results.into_iter().map(|r| r.record).collect();
    let csv = paths.dir.join("eval.csv");
    write_csv(&csv, &records)?;
    print!("{}", render_report(&records));
    println!("wrote {}", csv.display());
    Ok(())
}

fn sweep(g: &GlobalArgs, cfg: &ExperimentConfig, axis: &[String], tags: &[String]) -> Result<()> {
    let axis = SweepAxis::parse(&axis[0], &axis[1])?;
    let plan = ExperimentPlan {
        base: cfg.clone(),
        axis,
        schemes: parse_schemes(tags, cfg)?,
        root: g.out.clone(),
        seed: g.seed,
        opts: eval_options(g),
    };
    let out = run_sweep(&plan)?;
    print!("{}", render_report(&out.records));
    println!("wrote {} and {}", out.csv.display(), out.meta.display());
    for d in &out.dat {
        println!("wrote {}", d.display());
    }
    Ok(())
}

fn report(csv: &Path) -> Result<()> {
    let records = read_csv(csv)?;
    print!("{}", render_report(&records));
    for d in write_dat(&csv.with_extension(""), &records)? {
        println!("wrote {}", d.display());
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<bool> {
    let g = &cli.global;
    if let Command::Report { csv } = &cli.command {
        report(csv)?;
        return Ok(true);
    }
    if let Command::Gradcheck { points } = &cli.command {
        return gradcheck(g, *points);
    }
    let cfg = resolve_config(g)?;
    match &cli.command {
        Command::GenData => gen_data(g, &cfg)?,
        Command::Train { variants } => train(g, &cfg, variants)?,
        Command::Eval { schemes } => eval(g, &cfg, schemes)?,
        Command::Sweep { axis, schemes } => sweep(g, &cfg, axis, schemes)?,
        Command::Report { .. } | Command::Gradcheck { .. } => unreachable!(),
    }
    Ok(true)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.global.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(&cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => {
            eprintln!("error: gradient check failed");
            EXIT_FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
