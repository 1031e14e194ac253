//! `pss`: build spaces, tables and marginals, train, finalize, export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pssnet::resource::{build_latency_table, realized_blocks};
use pssnet::space::{enumerate_space, DEFAULT_ENUMERATION_CAP};
use pssnet::trainer::{self, Checkpoint, SamplingPolicy, CURVE_HEADER};
use pssnet::{Error, RunConfig, RunState};

mod pareto;

#[derive(Parser)]
#[command(name = "pss", version, about = "Prioritized subnet sampling for supernet training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config field, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> pssnet::Result<RunConfig> {
        RunConfig::load(&self.config, &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Summarize the structure space.
    BuildSpace(ConfigArgs),
    /// Synthesize a latency lookup table.
    GenLatencyTable {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Table id declared under `latency_tables`; an undeclared id uses
        /// the default cost model.
        #[arg(long)]
        id: String,
        #[arg(short, long)]
        out: PathBuf,
        /// Replace an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Estimate per-constraint marginals and report bucket sizes.
    EstimateMarginals {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Defaults to `<output>/marginals.txt`.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Train the supernet, writing a checkpoint and curves after every epoch.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many completed epochs.
        #[arg(long)]
        until_epoch: Option<u32>,
        /// `pss` or `random`; overrides the config.
        #[arg(long)]
        method: Option<String>,
    },
    /// Calibrate the top pool entries and write the report.
    Finalize {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Defaults to the run's latest checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(short)]
        k: Option<usize>,
        #[arg(long)]
        method: Option<String>,
    },
    /// Merge report CSVs into one consumption-sorted file.
    ExportPareto {
        /// `label=path/to/report.csv`, repeatable.
        #[arg(required = true)]
        reports: Vec<String>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration.
    DumpConfig(ConfigArgs),
}

fn parse_method(s: &str) -> pssnet::Result<SamplingPolicy> {
    match s {
        "pss" | "prioritized" => Ok(SamplingPolicy::Prioritized),
        "random" | "random-search" => Ok(SamplingPolicy::RandomSearch),
        _ => Err(Error::Config(format!("--method: unknown method `{s}` (pss or random)"))),
    }
}

fn with_method(mut cfg: RunConfig, method: Option<&str>) -> pssnet::Result<RunConfig> {
    if let Some(m) = method {
        cfg.method = parse_method(m)?;
    }
    Ok(cfg)
}

fn run_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output.join(cfg.method.label())
}

fn write_file(path: &Path, contents: &str) -> pssnet::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    // Write then rename so an interrupted run never leaves a torn file.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn build_space(args: &ConfigArgs) -> pssnet::Result<()> {
    let cfg = args.load()?;
    let spec = &cfg.space;
    let mut out = std::io::stdout().lock();
    writeln!(out, "structures: {}", spec.space_size())?;
    if spec.space_size() <= DEFAULT_ENUMERATION_CAP {
        writeln!(
            out,
            "enumerated: {}",
            enumerate_space(spec, DEFAULT_ENUMERATION_CAP)?.count()
        )?;
    }
    for layer in 0..spec.num_slimmable() {
        let w: Vec<String> = spec.realized_widths(layer).iter().map(u32::to_string).collect();
        writeln!(out, "layer {}: {}", layer + 1, w.join(" "))?;
    }
    writeln!(out, "layer {}: {} (fixed)", spec.num_layers(), spec.num_classes)?;
    let r: Vec<String> = spec.resolutions().iter().map(u32::to_string).collect();
    writeln!(out, "resolutions: {}", r.join(" "))?;
    let ctx = cfg.resource_context()?;
    for kind in cfg.constraint_set()?.kinds() {
        let lo = pssnet::resource::consumption(&kind, spec, &spec.min_structure(), &ctx)?;
        let hi = pssnet::resource::consumption(&kind, spec, &spec.max_structure(), &ctx)?;
        writeln!(out, "{kind}: {lo} .. {hi}")?;
    }
    Ok(())
}

fn gen_latency_table(args: &ConfigArgs, id: &str, out: &Path, force: bool) -> pssnet::Result<()> {
    let cfg = args.load()?;
    if out.exists() && !force {
        return Err(Error::Config(format!(
            "{} exists; pass --force to replace it",
            out.display()
        )));
    }
    let table = match cfg.latency_tables.iter().find(|t| t.id == id) {
        Some(decl) if decl.path.is_none() => cfg.latency_table(decl)?,
        Some(_) => {
            return Err(Error::Config(format!(
                "latency_tables.{id} is read from a file, not generated"
            )))
        }
        None => build_latency_table(
            &cfg.space,
            Default::default(),
            pssnet::rng::derive_seed(cfg.seed, &format!("latency:{id}")),
        )?,
    };
    write_file(out, &table.to_text())?;
    println!(
        "wrote {} entries ({} realized blocks) to {}",
        table.entries.len(),
        realized_blocks(&cfg.space).len(),
        out.display()
    );
    Ok(())
}

fn estimate_marginals(args: &ConfigArgs, out: Option<&Path>) -> pssnet::Result<()> {
    let cfg = args.load()?;
    let set = cfg.constraint_set()?;
    let ctx = cfg.resource_context()?;
    let built = cfg.build_marginals(&set, &ctx)?;
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.join("marginals.txt"));
    write_file(&path, &built.table.to_text(&set, &built.key))?;
    println!(
        "{} candidates, {} distinct; marginals written to {}",
        cfg.marginals.candidates,
        built.distinct,
        path.display()
    );
    println!("t,kind,target,bucket_size");
    let mut empty = None;
    for (t, c) in set.iter().enumerate() {
        let size = built.table.constraints[t].bucket_size;
        println!("{t},{},{},{size}", c.kind, c.target);
        if size == 0 && empty.is_none() {
            empty = Some(t);
        }
    }
    for (kind, n) in &built.partition.dropped {
        println!("# {n} distinct candidates fell in no {kind} window");
    }
    match empty {
        Some(t) => Err(Error::Unsampleable { t }),
        None => Ok(()),
    }
}

fn train(args: &ConfigArgs, resume: Option<&Path>, until: Option<u32>, method: Option<&str>) -> pssnet::Result<()> {
    let cfg = with_method(args.load()?, method)?;
    let exp = cfg.experiment()?;
    let dir = run_dir(&cfg);
    fs::create_dir_all(&dir)?;
    write_file(&dir.join("config.toml"), &cfg.dump())?;
    let mut state = match resume {
        Some(p) => Checkpoint::from_json(&fs::read_to_string(p)?)?.into_state(&exp)?,
        None => RunState::new(&exp)?,
    };
    let until = until.unwrap_or(exp.train.epochs);
    let ckpt_path = dir.join("checkpoint.json");
    let curves_path = dir.join("curves.csv");
    trainer::train_until(&exp, &mut state, until, |run, _| {
        let mut curves = format!("{CURVE_HEADER}\n");
        for r in &run.curves {
            curves.push_str(&r.csv_row());
            curves.push('\n');
        }
        write_file(&curves_path, &curves)?;
        write_file(&ckpt_path, &Checkpoint::new(&exp, run.clone()).to_json())
    })?;
    if state.epoch == 0 {
        write_file(&ckpt_path, &Checkpoint::new(&exp, state.clone()).to_json())?;
    }
    let occupancy: Vec<String> = state.pools.iter().map(|p| p.len().to_string()).collect();
    println!(
        "trained {} of {} epochs; pool occupancy {}; checkpoint {}",
        state.epoch,
        exp.train.epochs,
        occupancy.join(" "),
        ckpt_path.display()
    );
    Ok(())
}

fn finalize(
    args: &ConfigArgs,
    checkpoint: Option<&Path>,
    k: Option<usize>,
    method: Option<&str>,
) -> pssnet::Result<()> {
    let cfg = with_method(args.load()?, method)?;
    let exp = cfg.experiment()?;
    let dir = run_dir(&cfg);
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join("checkpoint.json"));
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let state = Checkpoint::from_json(&text)?.into_state(&exp)?;
    if !state.is_complete(&exp) {
        log::warn!("finalizing after {} of {} epochs", state.epoch, exp.train.epochs);
    }
    let report = trainer::finalize(&exp, &state, k.unwrap_or(cfg.calibration.k))?;
    write_file(&dir.join("report.csv"), &report.to_csv())?;
    write_file(&dir.join("report.json"), &report.to_json())?;
    print!("{}", report.to_csv());
    println!("# supernet accuracy {:.4}", report.supernet_accuracy);
    Ok(())
}

fn dump_config(args: &ConfigArgs) -> pssnet::Result<()> {
    print!("{}", args.load()?.dump());
    Ok(())
}

fn run(cli: Cli) -> pssnet::Result<()> {
    match cli.command {
        Command::BuildSpace(a) => build_space(&a),
        Command::GenLatencyTable { cfg, id, out, force } => gen_latency_table(&cfg, &id, &out, force),
        Command::EstimateMarginals { cfg, out } => estimate_marginals(&cfg, out.as_deref()),
        Command::Train {
            cfg,
            resume,
            until_epoch,
            method,
        } => train(&cfg, resume.as_deref(), until_epoch, method.as_deref()),
        Command::Finalize {
            cfg,
            checkpoint,
            k,
            method,
        } => finalize(&cfg, checkpoint.as_deref(), k, method.as_deref()),
        Command::ExportPareto { reports, out } => pareto::export(&reports, out.as_deref()),
        Command::DumpConfig(a) => dump_config(&a),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PSS_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!(
                "error[validation]: {}",
                one_line(&e.to_string()).trim_start_matches("error: ")
            );
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_validation() => {
            eprintln!("error[validation]: {}", one_line(&e.to_string()));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error[runtime]: {}", one_line(&e.to_string()));
            ExitCode::from(2)
        }
    }
}
