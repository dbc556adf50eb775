//! Command line driver: dataset generation, pre-training, fine-tuning,
//! evaluation, few-shot sweeps, and gradient verification.
//!
//! Configuration comes from an optional TOML file plus flags; flags win.
//! Logs and the fully-resolved configuration go to standard error, results
//! to standard output and the declared output files. Exit codes: 0 success,
//! 1 verification failure, 2 configuration or usage error, 3 I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use ddt_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainMode};
use ddt_core::encoder::{finite_diff_check, finite_diff_check_ce, init_encoder, Arch, Batch};
use ddt_core::protocol::{
    evaluate, fewshot_sweep, finetune, history_to_csv, pretrain, sample_shots, TrainConfig,
};
use ddt_core::synthdata::{generate_domain, load_dataset, write_dataset, DomainSpec, Split};
use ddt_core::{augment::Image, augment::MixAxis, PrototypeDistribution};

/// Gradient checks pass when the worst relative error is at most this.
const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "ddt",
    version,
    about = "Distribution-matching transfer: synthetic benchmark, training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired real/fake synthetic domain.
    GenData(GenDataArgs),
    /// Pre-train an encoder on a source dataset.
    Pretrain(PretrainArgs),
    /// Sample target shots and fine-tune a pre-trained checkpoint.
    Finetune(FinetuneArgs),
    /// Evaluate a checkpoint on one dataset split.
    Eval(EvalArgs),
    /// Fine-tune and evaluate over a grid of shot counts and replicates.
    Sweep(SweepArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Directory to write images and the index.tsv manifest into.
    #[arg(long)]
    out: PathBuf,
    /// Domain preset: A (noise patches, neutral style) or B (checkerboard
    /// patches, shifted style).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Training samples per class (real and fake each get this many).
    #[arg(long)]
    per_class_train: Option<usize>,
    #[arg(long)]
    per_class_val: Option<usize>,
    #[arg(long)]
    per_class_test: Option<usize>,
    /// TOML config file; its [data] section fills unset flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Flag mirrors of the [train] and [arch] config sections; any flag given
/// here overrides the file.
#[derive(Args, Default)]
struct TrainFlags {
    /// Training mode: ddt or ce [default: ddt].
    #[arg(long)]
    mode: Option<String>,
    /// [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 1e-3]
    #[arg(long)]
    pretrain_lr: Option<f64>,
    /// Stalled epochs before the pre-training lr decays [default: 5].
    #[arg(long)]
    plateau_patience: Option<usize>,
    /// [default: 0.1]
    #[arg(long)]
    plateau_decay: Option<f64>,
    /// Stalled val epochs before pre-training stops [default: 10].
    #[arg(long)]
    early_stop_pretrain: Option<usize>,
    /// [default: 1e-5]
    #[arg(long)]
    finetune_lr: Option<f64>,
    /// Stalled train epochs before fine-tuning stops [default: 30].
    #[arg(long)]
    early_stop_finetune: Option<usize>,
    /// [default: 200]
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Mixup probability during pre-training; any nonzero value turns
    /// mixing on for every fine-tuning sample [default: 0.5].
    #[arg(long)]
    p_mix: Option<f64>,
    /// Horizontal flip probability [default: 0.5].
    #[arg(long)]
    p_flip: Option<f64>,
    /// [default: 7]
    #[arg(long)]
    seed: Option<u64>,
    /// Mixing seam: left-right or top-bottom [default: left-right].
    #[arg(long)]
    mix_axis: Option<String>,
    /// Shot counts are per class (true) or totals (false) [default: true].
    #[arg(long)]
    shots_per_class: Option<bool>,
    /// Encoder architecture text, e.g. "input 32x32x3; conv 3:16 k3 s2; ..."
    /// [default: a three-conv 32x32 stack].
    #[arg(long)]
    arch: Option<String>,
    /// Prototype dimension K [default: 32].
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Number of prototype classes [default: 2].
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Args)]
struct PretrainArgs {
    /// Dataset directory (with index.tsv) to train on.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path to write; the epoch history CSV lands alongside.
    #[arg(long)]
    out: PathBuf,
    /// TOML config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Pre-trained checkpoint to start from.
    #[arg(long)]
    model: PathBuf,
    /// Target dataset directory; shots come from its train split.
    #[arg(long)]
    target: PathBuf,
    /// Source dataset directory supplying mixing partners.
    #[arg(long)]
    source: PathBuf,
    /// Shots to sample (per class unless configured otherwise).
    #[arg(long)]
    shots: usize,
    /// Replicate index for shot sampling; replicate r of `sweep` is
    /// reproduced by passing r here.
    #[arg(long, default_value_t = 0)]
    run_seed: usize,
    /// Fine-tuned checkpoint path to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Which split to score: train, val, or test.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    source: PathBuf,
    /// Comma-separated shot counts.
    #[arg(long, default_value = "0,5,10,25,50,100")]
    shots: String,
    /// Replicates per shot count.
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Parallel sweep cells; the merged output is identical for any value.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// CSV path to write; a markdown summary lands alongside with a .md
    /// extension.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seeds the tiny network and probe batch; any value gives the same
    /// verdict.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Double one analytic gradient entry first; the check must then fail,
    /// which proves it has teeth.
    #[arg(long)]
    corrupt: bool,
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn io(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<ddt_core::Error> for CliError {
    fn from(e: ddt_core::Error) -> Self {
        let code = match &e {
            ddt_core::Error::Io(_) => 3,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(command: Command) -> Result<u8, CliError> {
    match command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Finetune(args) => cmd_finetune(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

// ---------------------------------------------------------------------------
// Configuration file and resolution

#[derive(Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    train: Option<TrainSection>,
    data: Option<DataSection>,
    arch: Option<ArchSection>,
}

#[derive(Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    mode: Option<String>,
    batch_size: Option<usize>,
    pretrain_lr: Option<f64>,
    plateau_patience: Option<usize>,
    plateau_decay: Option<f64>,
    early_stop_pretrain: Option<usize>,
    finetune_lr: Option<f64>,
    early_stop_finetune: Option<usize>,
    max_epochs: Option<usize>,
    p_mix: Option<f64>,
    p_flip: Option<f64>,
    seed: Option<u64>,
    mix_axis: Option<String>,
    shots_per_class: Option<bool>,
    classes: Option<usize>,
}

#[derive(Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct DataSection {
    preset: Option<String>,
    image_size: Option<usize>,
    per_class_train: Option<usize>,
    per_class_val: Option<usize>,
    per_class_test: Option<usize>,
    seed: Option<u64>,
}

#[derive(Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct ArchSection {
    text: Option<String>,
    latent_dim: Option<usize>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn parse_axis(text: &str) -> Result<MixAxis, CliError> {
    match text {
        "left-right" => Ok(MixAxis::LeftRight),
        "top-bottom" => Ok(MixAxis::TopBottom),
        other => Err(CliError::config(format!(
            "unknown mix axis {other:?}, expected \"left-right\" or \"top-bottom\""
        ))),
    }
}

fn axis_name(axis: MixAxis) -> &'static str {
    match axis {
        MixAxis::LeftRight => "left-right",
        MixAxis::TopBottom => "top-bottom",
    }
}

/// A fully-resolved training setup, remembering which geometry values were
/// given explicitly so they can be checked against a loaded checkpoint.
struct ResolvedTrain {
    config: TrainConfig,
    classes: usize,
    k: usize,
    explicit_mode: Option<TrainMode>,
    explicit_classes: Option<usize>,
    explicit_latent: Option<usize>,
}

fn resolve_train(file: &FileConfig, flags: &TrainFlags) -> Result<ResolvedTrain, CliError> {
    let t = file.train.clone().unwrap_or_default();
    let a = file.arch.clone().unwrap_or_default();

    let mode_text = flags.mode.clone().or(t.mode);
    let explicit_mode = mode_text.as_deref().map(TrainMode::parse).transpose()?;
    let mode = explicit_mode.unwrap_or(TrainMode::Ddt);
    let seed = flags.seed.or(t.seed).unwrap_or(7);
    let mut config = TrainConfig::new(mode, seed);

    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = flags.$field.or(t.$field) {
                config.$field = v;
            }
        };
    }
    take!(batch_size);
    take!(pretrain_lr);
    take!(plateau_patience);
    take!(plateau_decay);
    take!(early_stop_pretrain);
    take!(finetune_lr);
    take!(early_stop_finetune);
    take!(max_epochs);
    take!(p_mix);
    take!(p_flip);
    take!(shots_per_class);
    if let Some(text) = flags.mix_axis.as_deref().or(t.mix_axis.as_deref()) {
        config.mix_axis = parse_axis(text)?;
    }

    if let Some(text) = flags.arch.as_deref().or(a.text.as_deref()) {
        config.arch = Some(Arch::parse(text)?);
    }
    let explicit_classes = flags.classes.or(t.classes);
    let classes = explicit_classes.unwrap_or(2);
    let explicit_latent = flags.latent_dim.or(a.latent_dim);
    let k = match (mode, &config.arch) {
        (TrainMode::Ddt, Some(arch)) => {
            let from_arch = arch.latent_dim().ok_or_else(|| {
                CliError::config(format!(
                    "a Gaussian head needs an even output width, got {}",
                    arch.dense_out()
                ))
            })?;
            if let Some(k) = explicit_latent {
                if k != from_arch {
                    return Err(CliError::config(format!(
                        "latent_dim {k} conflicts with the architecture's head width {} (K = {})",
                        arch.dense_out(),
                        from_arch
                    )));
                }
            }
            from_arch
        }
        _ => explicit_latent.unwrap_or(32),
    };

    Ok(ResolvedTrain { config, classes, k, explicit_mode, explicit_classes, explicit_latent })
}

impl ResolvedTrain {
    /// Geometry stated explicitly in flags or the file must agree with what
    /// the checkpoint records.
    fn check_against(&self, ckpt: &Checkpoint) -> Result<(), CliError> {
        if let Some(mode) = self.explicit_mode {
            if mode != ckpt.mode {
                return Err(CliError::config(format!(
                    "checkpoint was trained in {} mode but the config requests {}",
                    ckpt.mode, mode
                )));
            }
        }
        if let Some(classes) = self.explicit_classes {
            if classes != ckpt.classes {
                return Err(CliError::config(format!(
                    "checkpoint records {} classes but the config requests {classes}",
                    ckpt.classes
                )));
            }
        }
        if let Some(k) = self.explicit_latent {
            if k != ckpt.k {
                return Err(CliError::config(format!(
                    "checkpoint records latent dimension {} but the config requests {k}",
                    ckpt.k
                )));
            }
        }
        if let Some(arch) = &self.config.arch {
            if *arch != ckpt.params.arch {
                return Err(CliError::config(format!(
                    "checkpoint architecture \"{}\" does not match the configured \"{}\"",
                    ckpt.params.arch.canonical_text(),
                    arch.canonical_text()
                )));
            }
        }
        Ok(())
    }

    fn print(&self) {
        let c = &self.config;
        eprintln!("[train]");
        eprintln!("mode = \"{}\"", c.mode.as_str());
        eprintln!("batch_size = {}", c.batch_size);
        eprintln!("pretrain_lr = {}", c.pretrain_lr);
        eprintln!("plateau_patience = {}", c.plateau_patience);
        eprintln!("plateau_decay = {}", c.plateau_decay);
        eprintln!("early_stop_pretrain = {}", c.early_stop_pretrain);
        eprintln!("finetune_lr = {}", c.finetune_lr);
        eprintln!("early_stop_finetune = {}", c.early_stop_finetune);
        eprintln!("max_epochs = {}", c.max_epochs);
        eprintln!("p_mix = {}", c.p_mix);
        eprintln!("p_flip = {}", c.p_flip);
        eprintln!("seed = {}", c.seed);
        eprintln!("mix_axis = \"{}\"", axis_name(c.mix_axis));
        eprintln!("shots_per_class = {}", c.shots_per_class);
        eprintln!("classes = {}", self.classes);
        eprintln!();
        eprintln!("[arch]");
        let arch = self.arch_for_print();
        eprintln!("text = \"{arch}\"");
        eprintln!("latent_dim = {}", self.k);
    }

    fn arch_for_print(&self) -> String {
        match &self.config.arch {
            Some(a) => a.canonical_text(),
            None => "(standard 32x32 stack)".into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_gen_data(args: GenDataArgs) -> Result<u8, CliError> {
    let file = load_file_config(args.config.as_deref())?;
    let d = file.data.unwrap_or_default();
    let preset = args.preset.or(d.preset).unwrap_or_else(|| "A".into());
    let seed = args.seed.or(d.seed).unwrap_or(7);
    let mut spec = match preset.as_str() {
        "A" | "a" => DomainSpec::domain_a(seed),
        "B" | "b" => DomainSpec::domain_b(seed),
        other => {
            return Err(CliError::config(format!("unknown preset {other:?}, expected A or B")))
        }
    };
    if let Some(v) = args.image_size.or(d.image_size) {
        spec.image_size = v;
    }
    if let Some(v) = args.per_class_train.or(d.per_class_train) {
        spec.per_class_train = v;
    }
    if let Some(v) = args.per_class_val.or(d.per_class_val) {
        spec.per_class_val = v;
    }
    if let Some(v) = args.per_class_test.or(d.per_class_test) {
        spec.per_class_test = v;
    }

    eprintln!("[data]");
    eprintln!("preset = \"{}\"", spec.domain_id);
    eprintln!("image_size = {}", spec.image_size);
    eprintln!("per_class_train = {}", spec.per_class_train);
    eprintln!("per_class_val = {}", spec.per_class_val);
    eprintln!("per_class_test = {}", spec.per_class_test);
    eprintln!("seed = {}", spec.seed);

    let ds = generate_domain(&spec)?;
    let manifest = write_dataset(&ds, &args.out)?;
    println!("wrote {} samples, manifest {}", ds.len(), manifest.display());
    Ok(0)
}

fn history_path(out: &Path) -> PathBuf {
    out.with_extension("history.csv")
}

fn cmd_pretrain(args: PretrainArgs) -> Result<u8, CliError> {
    let file = load_file_config(args.config.as_deref())?;
    let resolved = resolve_train(&file, &args.flags)?;
    resolved.print();
    let data = load_dataset(&args.data)?;
    let proto = PrototypeDistribution::build(resolved.classes, resolved.k)?;
    let (ckpt, history) = pretrain(&resolved.config, &data, &proto)?;
    save_checkpoint(&ckpt, &args.out)?;
    let hist = history_path(&args.out);
    fs::write(&hist, history_to_csv(&history))
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", hist.display())))?;
    eprintln!("wrote checkpoint {} and history {}", args.out.display(), hist.display());
    let metrics = evaluate(&ckpt, &proto, &data, Split::Val)?;
    println!(
        "final val loss {:.6} accuracy {:.4} over {} epochs",
        metrics.mean_loss,
        metrics.accuracy,
        history.len()
    );
    Ok(0)
}

fn cmd_finetune(args: FinetuneArgs) -> Result<u8, CliError> {
    let file = load_file_config(args.config.as_deref())?;
    let mut resolved = resolve_train(&file, &args.flags)?;
    let ckpt = load_checkpoint(&args.model)?;
    resolved.check_against(&ckpt)?;
    resolved.config.mode = ckpt.mode;
    resolved.print();
    let target = load_dataset(&args.target)?;
    let source = load_dataset(&args.source)?;
    let shots =
        sample_shots(&target, ckpt.classes, args.shots, args.run_seed, &resolved.config)?;
    let tuned = finetune(&ckpt, &shots, &source, &resolved.config)?;
    save_checkpoint(&tuned, &args.out)?;
    eprintln!("wrote checkpoint {}", args.out.display());
    let proto = PrototypeDistribution::build(ckpt.classes, ckpt.k)?;
    let metrics = evaluate(&tuned, &proto, &target, Split::Test)?;
    println!(
        "{}-shot target test loss {:.6} accuracy {:.4}",
        args.shots, metrics.mean_loss, metrics.accuracy
    );
    Ok(0)
}

fn cmd_eval(args: EvalArgs) -> Result<u8, CliError> {
    let file = load_file_config(args.config.as_deref())?;
    let resolved = resolve_train(&file, &args.flags)?;
    let ckpt = load_checkpoint(&args.model)?;
    resolved.check_against(&ckpt)?;
    resolved.print();
    let split = Split::parse(&args.split)
        .ok_or_else(|| CliError::config(format!("unknown split {:?}", args.split)))?;
    eprintln!("model {} split {}", args.model.display(), split.as_str());
    let data = load_dataset(&args.data)?;
    let proto = PrototypeDistribution::build(ckpt.classes, ckpt.k)?;
    let metrics = evaluate(&ckpt, &proto, &data, split)?;
    println!(
        "{} {} accuracy {:.4} ({}/{}) mean loss {:.6}",
        ckpt.mode,
        split.as_str(),
        metrics.accuracy,
        metrics.correct,
        metrics.total,
        metrics.mean_loss
    );
    for (c, acc) in metrics.per_class_accuracy.iter().enumerate() {
        match acc {
            Some(a) => println!(
                "class {c}: accuracy {:.4} over {} samples",
                a, metrics.per_class_counts[c]
            ),
            None => println!("class {c}: absent from this split"),
        }
    }
    Ok(0)
}

fn parse_shot_list(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| CliError::config(format!("bad shot count {part:?} in {text:?}")))
        })
        .collect()
}

fn cmd_sweep(args: SweepArgs) -> Result<u8, CliError> {
    let file = load_file_config(args.config.as_deref())?;
    let mut resolved = resolve_train(&file, &args.flags)?;
    let ckpt = load_checkpoint(&args.model)?;
    resolved.check_against(&ckpt)?;
    resolved.config.mode = ckpt.mode;
    resolved.print();
    let shots = parse_shot_list(&args.shots)?;
    eprintln!("shots = {shots:?}, runs = {}, jobs = {}", args.runs, args.jobs);
    let target = load_dataset(&args.target)?;
    let source = load_dataset(&args.source)?;
    let table =
        fewshot_sweep(&ckpt, &source, &target, &shots, args.runs, &resolved.config, args.jobs)?;
    fs::write(&args.out, table.to_csv())
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", args.out.display())))?;
    let md_path = args.out.with_extension("md");
    let markdown = table.to_markdown();
    fs::write(&md_path, &markdown)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", md_path.display())))?;
    eprintln!("wrote {} and {}", args.out.display(), md_path.display());
    print!("{markdown}");
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<u8, CliError> {
    eprintln!("seed = {}, corrupt = {}", args.seed, args.corrupt);
    let proto = PrototypeDistribution::build(2, 4)?;
    let ddt_arch = Arch::parse("input 8x8x3; conv 3:4 k3 s2; conv 4:6 k3 s2; dense 24:8")?;
    let ce_arch = Arch::parse("input 8x8x3; conv 3:4 k3 s2; conv 4:6 k3 s2; dense 24:2")?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(0x9e3779b97f4a7c15));
    let images = (0..2)
        .map(|_| {
            let data = (0..8 * 8 * 3).map(|_| rng.gen::<f64>()).collect();
            Image::new(8, 8, data)
        })
        .collect::<ddt_core::Result<Vec<Image>>>()?;
    let batch = Batch { images, labels: vec![0, 1] };
    let h = 1e-3;

    let ddt_params = init_encoder(&ddt_arch, args.seed);
    let ddt_report = finite_diff_check(&ddt_params, &batch, &proto, 1e-6, h, args.corrupt)?;
    println!(
        "embedding loss: max rel {:.3e} at {} ({} checked, {} skipped at ReLU kinks)",
        ddt_report.max_rel, ddt_report.worst_index, ddt_report.checked, ddt_report.skipped
    );

    let ce_params = init_encoder(&ce_arch, args.seed);
    let ce_report = finite_diff_check_ce(&ce_params, &batch, 2, h, args.corrupt)?;
    println!(
        "cross-entropy loss: max rel {:.3e} at {} ({} checked, {} skipped at ReLU kinks)",
        ce_report.max_rel, ce_report.worst_index, ce_report.checked, ce_report.skipped
    );

    if ddt_report.max_rel <= GRADCHECK_TOL && ce_report.max_rel <= GRADCHECK_TOL {
        println!("gradient check passed (tolerance {GRADCHECK_TOL:.0e})");
        Ok(0)
    } else {
        println!("gradient check FAILED (tolerance {GRADCHECK_TOL:.0e})");
        Ok(1)
    }
}
