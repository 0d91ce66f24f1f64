use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mponet::config::{ExperimentConfig, ModelKind, VariantKind};
use mponet::experiment::{load_datasets, parameter_table, resolve_data_dir, run_experiment};
use mponet::idx::{load_mnist_split, Split};
use mponet::{CliError, ModelArchive, Result};
use mponet_core::network::Layer;
use mponet_core::{bond_entropy, evaluate, TruncationSpec};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "mponet", version, about = "Train and analyse neural networks with MPO layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train `runs` seeded networks and write curves, models and a summary.
    Train(TrainArgs),
    /// Print the test accuracy of a saved model.
    Eval(EvalArgs),
    /// Entanglement spectrum and entropy of an MPO layer of a saved model.
    Entropy(EntropyArgs),
    /// Per-layer parameter counts and the compression ratio.
    Ratio(ModelArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Fc2,
    Lenet5,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Dense,
    Mpo,
}

#[derive(Args)]
struct ModelArgs {
    /// JSON experiment configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Uniform bond dimension of every MPO layer.
    #[arg(long)]
    bond_dim: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Seed of the first run; run k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Rank-χ truncation of the input images.
    #[arg(long)]
    chi: Option<usize>,
    /// Disable the L2 penalty.
    #[arg(long)]
    no_l2: bool,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
    /// Keep finished runs whose stored model reproduces its recorded accuracy.
    #[arg(long)]
    reuse: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    chi: Option<usize>,
    /// Evaluate the densified copy of the model instead.
    #[arg(long)]
    densify: bool,
}

#[derive(Args)]
struct EntropyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Network layer index (as in the archive's tensor names); defaults to the first MPO layer.
    #[arg(long)]
    layer: Option<usize>,
    /// Bond index in 1..n-1; all bonds when omitted.
    #[arg(long)]
    bond: Option<usize>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn experiment_config(args: &ModelArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(arch) = args.arch {
        config.model = match arch {
            ArchArg::Fc2 => ModelKind::Fc2,
            ArchArg::Lenet5 => ModelKind::Lenet5,
        };
    }
    if let Some(v) = args.variant {
        config.variant = match v {
            VariantArg::Dense => VariantKind::Dense,
            VariantArg::Mpo => VariantKind::Mpo,
        };
    }
    if let Some(d) = args.bond_dim {
        config.bond_dim = Some(d);
        config.structures = None;
    }
    if config.variant == VariantKind::Dense {
        config.bond_dim = None;
        config.structures = None;
    }
    Ok(config)
}

fn print_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => {
            std::io::stdout().write_all(text.as_bytes()).ok();
            Ok(())
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = experiment_config(&args.model)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(runs) = args.runs {
        config.runs = runs;
    }
    if let Some(epochs) = args.epochs {
        config.training.epochs = Some(epochs);
        if config.training.lr_decay_epochs.is_none() {
            config.training.lr_decay_epochs = Some(mponet_core::TrainingConfig::for_epochs(epochs).lr_decay_epochs);
        }
    }
    if args.chi.is_some() {
        config.input_chi = args.chi;
    }
    if args.no_l2 {
        config.l2 = false;
    }
    if args.train_limit.is_some() {
        config.train_limit = args.train_limit;
    }
    if args.test_limit.is_some() {
        config.test_limit = args.test_limit;
    }
    let dir = resolve_data_dir(args.data_dir.as_deref(), config.data_dir.as_deref())?;
    config.data_dir = Some(dir.clone());
    config.validate()?;
    let data = load_datasets(&dir, &config)?;
    let summary = run_experiment(&config, &data, &args.out, args.reuse)?;
    let s = &summary.test_accuracy;
    match s.sigma {
        Some(sigma) => println!("test accuracy {:.4} ± {:.4} over {} runs", s.mean, sigma, s.m),
        None => println!("test accuracy {:.4} (1 run)", s.mean),
    }
    if let Some(rho) = summary.parameters.rho {
        println!("compression ratio {rho:.6}");
    }
    println!("summary written to {}", args.out.join("summary.json").display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let archive = ModelArchive::load(&args.model)?;
    let dir = resolve_data_dir(args.data_dir.as_deref(), None)?;
    let mut test = load_mnist_split(&dir, Split::Test)?;
    if let Some(chi) = args.chi {
        test = test.rank_truncated(TruncationSpec::new(chi, test.rows(), test.cols())?)?;
    }
    let net = if args.densify { archive.network.densified()? } else { archive.network };
    println!("{}", evaluate(&net, &test)?);
    Ok(())
}

fn cmd_entropy(args: EntropyArgs) -> Result<()> {
    let archive = ModelArchive::load(&args.model)?;
    let layers = archive.network.layers();
    let index = match args.layer {
        Some(k) => k,
        None => layers
            .iter()
            .position(|l| matches!(l, Layer::Mpo(_)))
            .ok_or_else(|| CliError::Usage("model has no MPO layer".into()))?,
    };
    let layer = match layers.get(index) {
        Some(Layer::Mpo(m)) => m,
        Some(other) => return Err(CliError::Usage(format!("layer {index} is {}, not an MPO layer", other.name()))),
        None => return Err(CliError::Usage(format!("layer {index} out of range (model has {})", layers.len()))),
    };
    let bonds: Vec<usize> = match args.bond {
        Some(b) => vec![b],
        None => (1..layer.structure().n()).collect(),
    };
    let reports = bonds
        .iter()
        .map(|&b| {
            let r = bond_entropy(layer, b)?;
            Ok(serde_json::json!({
                "layer": index,
                "structure": layer.structure().to_string(),
                "bond": r.bond,
                "bond_dim": r.bond_dim,
                "rows": r.rows,
                "cols": r.cols,
                "entropy": r.entropy,
                "upper_bound": r.upper_bound,
                "spectrum": r.spectrum,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    print_json(&reports, args.out.as_deref())
}

fn cmd_ratio(args: ModelArgs) -> Result<()> {
    let config = experiment_config(&args)?;
    config.validate()?;
    let table = parameter_table(&config)?;
    println!("{:<6} {:>10} {:>10}  structure", "layer", "N_ori", "N_mpo");
    for l in &table.layers {
        let mpo = l.n_mpo.map_or("-".to_string(), |n| n.to_string());
        println!("{:<6} {:>10} {:>10}  {}", l.layer, l.n_ori, mpo, l.structure.as_deref().unwrap_or("dense"));
    }
    let total_mpo = table.total_mpo.map_or("-".to_string(), |n| n.to_string());
    println!("{:<6} {:>10} {:>10}", "total", table.total_ori, total_mpo);
    match table.rho {
        Some(rho) => println!("rho {rho:.6}"),
        None => println!("rho 1 (dense)"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Entropy(a) => cmd_entropy(a),
        Command::Ratio(a) => cmd_ratio(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
