use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hashwh::experiments::{self, ExperimentKind, RunConfig, RunOptions, RunReport, SeedGrid};
use hashwh::fourier::{fwht, ifwht, sparse_from_dense, DenseFunction};
use hashwh::synth::{generate_target, sample_dataset, Dataset, SyntheticMode, SyntheticSpec};
use hashwh::tree::{forest_to_fourier, Forest};
use hashwh::{BitVector, Error, Result, SparseFourierFunction};
use serde_json::json;

#[derive(Parser)]
#[command(name = "hashwh", version, about = "Walsh-Hadamard spectra and hashed spectral regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fourier transform of a full-cube table (`x0..x{n-1},y`) into the
    /// sparse text format, or back with `--inverse`.
    Transform {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Drop coefficients with `|ĝ(f)| <= threshold`.
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        #[arg(long)]
        inverse: bool,
    },
    /// Draw a synthetic target and sample a labelled dataset from it.
    Synth {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset CSV.
        #[arg(long)]
        output: PathBuf,
        /// Also write the target in the sparse text format.
        #[arg(long)]
        target_output: Option<PathBuf>,
    },
    /// Train on a CSV dataset (`real_csv` experiment).
    Train(RunArgs),
    SpectrumEvolution(RunArgs),
    SynthLarge(RunArgs),
    /// Forest fit and coefficient-deletion ablation.
    Ablate(RunArgs),
    HashStudy(RunArgs),
    /// Exact Fourier spectrum of a forest in the text format.
    Tree2fourier {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
    },
    /// Re-execute the run recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Mode {
    DegreeLadder,
    Random25,
    SparseInteractions,
}

impl From<Mode> for SyntheticMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::DegreeLadder => SyntheticMode::DegreeLadder,
            Mode::Random25 => SyntheticMode::Random25,
            Mode::SparseInteractions => SyntheticMode::SparseInteractions,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML run config; omitted means every default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the seed grid with this single seed for target, data and training.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads for independent grid cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut record = json!({ "error": e.kind(), "message": e.to_string() });
            if let Error::Config(problems) = &e {
                record["problems"] = json!(problems);
            }
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Transform {
            input,
            output,
            threshold,
            inverse,
        } => {
            if inverse {
                let text = read(&input)?;
                let g = SparseFourierFunction::from_text(&text)?;
                let dense = ifwht(&g.to_spectrum()?)?;
                let n = dense.dimension();
                let points = (0..1usize << n).map(|j| BitVector::from_index(n, j)).collect();
                Dataset::new(n, points, dense.into_values())?.save_csv(&output)
            } else {
                let file = fs::File::open(&input).map_err(|e| Error::io(&input, e))?;
                let dense = cube_table(&Dataset::read_csv(file)?)?;
                let sparse = sparse_from_dense(&fwht(&dense)?, threshold)?;
                write(&output, &sparse.to_text())
            }
        }
        Command::Synth {
            mode,
            n,
            size,
            seed,
            output,
            target_output,
        } => {
            let target = generate_target(&SyntheticSpec {
                mode: mode.into(),
                n,
                seed,
            })?;
            sample_dataset(&target, size, seed)?.save_csv(&output)?;
            if let Some(path) = target_output {
                write(&path, &target.to_text())?;
            }
            Ok(())
        }
        Command::Train(a) => run_experiment(ExperimentKind::RealCsv, a),
        Command::SpectrumEvolution(a) => run_experiment(ExperimentKind::SpectrumEvolution, a),
        Command::SynthLarge(a) => run_experiment(ExperimentKind::SynthLarge, a),
        Command::Ablate(a) => run_experiment(ExperimentKind::Ablation, a),
        Command::HashStudy(a) => run_experiment(ExperimentKind::HashStudy, a),
        Command::Tree2fourier {
            input,
            output,
            threshold,
        } => {
            let forest = Forest::from_text(&read(&input)?)?;
            let spectrum = forest_to_fourier(&forest);
            let mut kept = SparseFourierFunction::zero(spectrum.dimension());
            for (f, c) in spectrum.iter().filter(|(_, c)| c.abs() > threshold) {
                kept.add_term(f.clone(), c);
            }
            write(&output, &kept.to_text())
        }
        Command::Replay {
            manifest,
            out_dir,
            jobs,
        } => {
            let report = experiments::replay(&manifest, &RunOptions { out_dir, jobs })?;
            print_report(&report);
            Ok(())
        }
    }
}

fn run_experiment(kind: ExperimentKind, args: RunArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::new(kind),
    };
    match config.experiment {
        None => config.experiment = Some(kind),
        Some(k) if k != kind => {
            return Err(Error::Config(vec![format!(
                "config is for `{}` but the command runs `{}`",
                k.name(),
                kind.name()
            )]))
        }
        _ => {}
    }
    if let Some(seed) = args.seed {
        config.seeds = SeedGrid::uniform(seed);
    }
    let out_dir = args
        .out_dir
        .or_else(|| config.out_dir.clone())
        .ok_or_else(|| Error::Config(vec!["no output directory: pass --out-dir or set out_dir".into()]))?;
    let report = experiments::run(config, &RunOptions { out_dir, jobs: args.jobs })?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &RunReport) {
    let m = &report.manifest;
    let outputs: Vec<&str> = m.outputs.iter().map(|o| o.path.as_str()).collect();
    println!(
        "{}",
        json!({
            "experiment": m.experiment.name(),
            "out_dir": report.out_dir,
            "config_hash": m.config_hash,
            "wall_seconds": m.wall_seconds,
            "outputs": outputs,
        })
    );
}

/// Values of a table that lists every point of the cube exactly once.
fn cube_table(data: &Dataset) -> Result<DenseFunction> {
    let n = data.dimension();
    if n > hashwh::fourier::MAX_DENSE_DIMENSION {
        return Err(Error::Capacity {
            what: "dense transform",
            dimension: n,
            max: hashwh::fourier::MAX_DENSE_DIMENSION,
        });
    }
    let size = 1usize << n;
    if data.len() != size {
        return Err(Error::LengthMismatch {
            what: "rows of a full-cube table",
            expected: size,
            actual: data.len(),
        });
    }
    let mut values = vec![f64::NAN; size];
    for (x, &y) in data.inputs().iter().zip(data.targets()) {
        let j = x.to_index();
        if !values[j].is_nan() {
            return Err(Error::InvalidArgument(format!("point {x} appears twice")));
        }
        values[j] = y;
    }
    DenseFunction::new(n, values)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
