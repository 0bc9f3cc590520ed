use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use equivar::checkpoint::Checkpoint;
use equivar::dynamics::{run_md, Sidecar};
use equivar::geometry::{batch, AtomicSystem, Labels};
use equivar::io::{read_extxyz, write_extxyz_file, Command, RunConfig};
use equivar::model::Model;
use equivar::spectra::{ir_spectrum, raman_spectrum};
use equivar::train::{evaluate, split_dataset, train_loop, StopReason, Targets};
use equivar::{selftest, Error, Result};

#[derive(Parser)]
#[command(name = "equivar", version, about = "Equivariant message-passing potentials")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads for parallel evaluation.
    #[arg(long, global = true)]
    device_threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Fit a model and write the best checkpoint and an epoch log.
    Train,
    /// Print mean absolute errors of a checkpoint on a labeled file.
    Eval,
    /// Label every frame of `input` with the model's predictions.
    Predict,
    /// Run molecular dynamics from the first frame of `input`.
    Md,
    /// IR and Raman spectra from a trajectory sidecar.
    Spectra,
    /// Symmetry and gradient checks on a fresh model.
    Selftest,
}

impl Cmd {
    fn kind(self) -> Command {
        match self {
            Cmd::Train => Command::Train,
            Cmd::Eval => Command::Eval,
            Cmd::Predict => Command::Predict,
            Cmd::Md => Command::Md,
            Cmd::Spectra => Command::Spectra,
            Cmd::Selftest => Command::Selftest,
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match (&cli.config, cli.command) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Cmd::Selftest) => RunConfig::default(),
        (None, _) => return Err(Error::Config("--config is required for this command".into())),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.train.seed = config.seed;
    config.validate_for(cli.command.kind())?;
    Ok(config)
}

fn required(path: &Option<PathBuf>) -> &Path {
    path.as_deref().expect("checked by validate_for")
}

fn load_model(config: &RunConfig) -> Result<Model> {
    Ok(Checkpoint::load(required(&config.checkpoint))?.model)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn train(config: &RunConfig, out: &Path) -> Result<bool> {
    let data = read_extxyz(required(&config.data.path))?;
    let val_size = config.data.val_size;
    let train_size = config.data.train_size.unwrap_or(data.len().saturating_sub(val_size));
    let split = split_dataset(data.len(), train_size, val_size, config.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<AtomicSystem>>();
    let (fit, val) = (pick(&split.train), pick(&split.val));
    let model = Model::new(config.model.clone(), config.seed)?;
    let mut log = BufWriter::new(File::create(out.join("train_log.jsonl"))?);
    let outcome = train_loop(model, &config.train, &fit, &val, Some(&mut log))?;
    log.flush()?;
    outcome.best.save(out.join("model.ckpt"))?;
    outcome.last.save(out.join("last.ckpt"))?;
    let best = outcome.history.get(outcome.best_epoch.saturating_sub(1));
    write_json(
        &out.join("train_summary.json"),
        &serde_json::json!({
            "best_epoch": outcome.best_epoch,
            "epochs": outcome.history.len(),
            "stop": outcome.stop,
            "message": outcome.message,
            "best": best,
            "split": { "train": split.train.len(), "val": split.val.len(), "test": split.test.len() },
        }),
    )?;
    eprintln!(
        "trained {} epochs ({:?}); best epoch {}",
        outcome.history.len(),
        outcome.stop,
        outcome.best_epoch
    );
    if outcome.stop == StopReason::Diverged {
        eprintln!("training diverged: {}", outcome.message.unwrap_or_default());
        return Ok(false);
    }
    Ok(true)
}

fn eval(config: &RunConfig, out: &Path) -> Result<()> {
    let model = load_model(config)?;
    let data = read_extxyz(required(&config.data.path))?;
    let targets = Targets::resolve(&model, &data)?;
    let metrics = evaluate(&model, &data, targets, &config.train)?;
    let text = serde_json::to_string_pretty(&metrics)?;
    println!("{text}");
    fs::write(out.join("eval.json"), text + "\n")?;
    Ok(())
}

fn predict(config: &RunConfig, out: &Path) -> Result<()> {
    let model = load_model(config)?;
    let frames = read_extxyz(required(&config.input))?;
    let with_forces = model.config().has_energy();
    let mut labeled = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(config.train.batch_size.max(1)) {
        let b = batch(chunk)?;
        let p = model.predict(&b, with_forces)?;
        for (m, system) in chunk.iter().enumerate() {
            let atoms = b.range(m);
            labeled.push(AtomicSystem {
                atomic_numbers: system.atomic_numbers.clone(),
                positions: system.positions.clone(),
                labels: Labels {
                    energy: p.energy.as_ref().map(|e| e[m]),
                    forces: p.forces.as_ref().map(|f| f[atoms].to_vec()),
                    dipole: p.dipole.as_ref().map(|d| d[m]),
                    polarizability: p.polarizability.as_ref().map(|a| a[m]),
                    spatial_extent: p.spatial_extent.as_ref().map(|r| r[m]),
                    ..Labels::default()
                },
            });
        }
    }
    write_extxyz_file(out.join("predictions.xyz"), &labeled)?;
    eprintln!("labeled {} frames", labeled.len());
    Ok(())
}

fn md(config: &RunConfig, out: &Path) -> Result<()> {
    let model = load_model(config)?;
    let frames = read_extxyz(required(&config.input))?;
    let start = frames
        .into_iter()
        .next()
        .ok_or_else(|| Error::Data("input has no frames".into()))?;
    let traj = run_md(&model, &start, &config.md, config.seed)?;
    traj.write_extxyz(out.join("trajectory.xyz"))?;
    traj.write_csv(out.join("trajectory.csv"))?;
    eprintln!("recorded {} frames every {} fs", traj.len(), traj.sample_dt);
    Ok(())
}

fn spectra(config: &RunConfig, out: &Path) -> Result<()> {
    let side = Sidecar::read(required(&config.input))?;
    let dt = side.sample_dt()?;
    let first = config.spectra.first_sample(side.times.len());
    let opts = config.spectra.options(dt, side.times.len() - first)?;
    let mut wrote = false;
    if let Some(mu) = &side.dipoles {
        ir_spectrum(&mu[first..], dt, &opts)?.write(out.join("ir.csv"))?;
        wrote = true;
    }
    if let Some(alpha) = &side.polarizabilities {
        let raman = raman_spectrum(&alpha[first..], dt, &opts, &config.spectra.raman)?;
        raman.isotropic.write(out.join("raman_isotropic.csv"))?;
        raman.anisotropic.write(out.join("raman_anisotropic.csv"))?;
        wrote = true;
    }
    if !wrote {
        return Err(Error::Data(
            "sidecar has neither dipole nor polarizability columns".into(),
        ));
    }
    Ok(())
}

fn selftest(config: &RunConfig) -> Result<bool> {
    let results = selftest::run(config.seed)?;
    for r in &results {
        println!("{r}");
    }
    let passed = results.iter().all(|r| r.passed);
    if !passed {
        eprintln!("selftest failed");
    }
    Ok(passed)
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.device_threads {
        if n == 0 {
            return Err(Error::Config("--device-threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let config = load_config(cli)?;
    if matches!(cli.command, Cmd::Selftest) {
        return selftest(&config);
    }
    fs::create_dir_all(&cli.out)?;
    match cli.command {
        Cmd::Train => return train(&config, &cli.out),
        Cmd::Eval => eval(&config, &cli.out)?,
        Cmd::Predict => predict(&config, &cli.out)?,
        Cmd::Md => md(&config, &cli.out)?,
        Cmd::Spectra => spectra(&config, &cli.out)?,
        Cmd::Selftest => unreachable!(),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is_config() => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
