//! Command-line front end: configuration, checkpoints and the subcommands.

mod checkpoint;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::ablation::{ablation_grid, SkipSpec};
use crate::corpus::{
    featurize_corpus, load_alignment, load_manifests, synth_corpus, AlignmentTiers, Corpus,
    CuePlacement, FeatureCache, Split, SynthConfig, Utterance,
};
use crate::dsp::wav::read_wav;
use crate::dsp::{estimate_pitch, feature_fingerprint, save_pitch_csv};
use crate::interpret::{align_frames, attention_trace, render_svg};
use crate::metrics::{render_csv, render_table};
use crate::model::{init_model, loss_graph, ModelConfig, SequenceBatch};
use crate::numerics::gradient_check;
use crate::training::{evaluate, train, Example};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint,
    Checkpoint, CheckpointError, CheckpointMeta, MAGIC, VERSION,
};
pub use config::{ConfigError, RunConfig, OUT_DIR_ENV};

pub const CHECKPOINT_FILE: &str = "model.batt";

#[derive(Debug, Parser)]
#[command(name = "emoctx", version, about = "Attention-based speech emotion recognition with context ablation")]
struct Cli {
    /// `section.key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (overrides the environment and the config file).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Manifest to use instead of `data.manifests` (repeatable).
    #[arg(long = "manifest", global = true)]
    manifests: Vec<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    Synth(SynthArgs),
    /// Compute and cache log-Mel features for the manifests.
    Featurize,
    /// Train a model and write the checkpoint and training log.
    Train(TrainArgs),
    /// Score a checkpoint on the test split.
    Evaluate(EvalArgs),
    /// Score a checkpoint under each skip spec.
    Ablate(AblateArgs),
    /// Attention figures for chosen utterances and specs.
    Attend(AttendArgs),
    /// Pitch contour of a WAV file as CSV.
    Pitch(PitchArgs),
    /// Gradient check of the full loss on a toy model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Destination directory (default: `<out_dir>/corpus`).
    #[arg(long)]
    dest: Option<PathBuf>,
    /// global, left or right.
    #[arg(long, default_value = "global")]
    placement: CuePlacement,
    #[arg(long, default_value_t = 20)]
    train_per_class: usize,
    #[arg(long, default_value_t = 5)]
    test_per_class: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Defaults to `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct CheckpointArg {
    /// Default: `<out_dir>/model.batt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Accept a checkpoint trained on different feature settings.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    ck: CheckpointArg,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    ck: CheckpointArg,
    /// Comma-separated `L-R` specs (default: `ablation.specs`).
    #[arg(long)]
    specs: Option<String>,
}

#[derive(Debug, Args)]
struct AttendArgs {
    #[command(flatten)]
    ck: CheckpointArg,
    /// Comma-separated utterance ids.
    #[arg(long, required = true)]
    utt: String,
    #[arg(long, default_value = "0-0,20-0")]
    specs: String,
}

#[derive(Debug, Args)]
struct PitchArgs {
    wav: PathBuf,
    /// Default: `<out_dir>/pitch/<stem>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 4)]
    context: usize,
    #[arg(long, default_value_t = 6)]
    frames: usize,
    #[arg(long, default_value_t = 5e-4)]
    eps: f64,
    #[arg(long, default_value_t = 200)]
    coords: usize,
    /// Fail when the maximum relative error reaches this value.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code: 0 on success, 1 on failure, 2 on usage errors.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(k.trim(), v.trim()).map_err(anyhow::Error::msg)?;
    }
    if !cli.manifests.is_empty() {
        cfg.manifests = cli.manifests.clone();
    }
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
        cfg.out_dir = PathBuf::from(dir);
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    if cli.dump_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    let Some(command) = cli.command else {
        bail!("no subcommand given (try --help)");
    };
    match command {
        Command::Synth(a) => cmd_synth(&cfg, a),
        Command::Featurize => cmd_featurize(&cfg),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Evaluate(a) => cmd_evaluate(&cfg, a),
        Command::Ablate(a) => cmd_ablate(&cfg, a),
        Command::Attend(a) => cmd_attend(&cfg, a),
        Command::Pitch(a) => cmd_pitch(&cfg, a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn create_out_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("cannot create {}", cfg.out_dir.display()))?;
    let conf = format!("# config hash {:016x}\n{}", cfg.hash(), cfg.dump());
    std::fs::write(cfg.out_dir.join("run.conf"), conf)?;
    Ok(())
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    if cfg.manifests.is_empty() {
        bail!("no manifest given (use --manifest or data.manifests)");
    }
    Ok(load_manifests(&cfg.manifests)?)
}

fn cache(cfg: &RunConfig) -> Result<FeatureCache> {
    Ok(FeatureCache::new(cfg.out_dir.join("features"))?)
}

fn examples(cfg: &RunConfig, utts: &[&Utterance]) -> Result<Vec<Example>> {
    let features = featurize_corpus(utts, &cfg.frame, &cfg.mel, Some(&cache(cfg)?))?;
    Ok(utts
        .iter()
        .zip(features)
        .map(|(u, features)| Example {
            id: u.id.clone(),
            features,
            label: u.label.index(),
        })
        .collect())
}

fn split_examples(cfg: &RunConfig, corpus: &Corpus, split: Split) -> Result<Vec<Example>> {
    let utts: Vec<&Utterance> = corpus.split(split).collect();
    if utts.is_empty() {
        bail!("the manifests hold no {} utterances", split.name());
    }
    examples(cfg, &utts)
}

fn cmd_synth(cfg: &RunConfig, a: SynthArgs) -> Result<()> {
    let synth = SynthConfig {
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        placement: a.placement,
        noise_level: a.noise,
        seed: a.seed.unwrap_or(cfg.seed),
        ..SynthConfig::default()
    };
    let dest = a.dest.unwrap_or_else(|| cfg.out_dir.join("corpus"));
    let corpus = synth_corpus(&synth, &dest)?;
    println!(
        "wrote {} utterances to {}",
        corpus.len(),
        dest.join("manifest.jsonl").display()
    );
    Ok(())
}

fn cmd_featurize(cfg: &RunConfig) -> Result<()> {
    let corpus = load_corpus(cfg)?;
    create_out_dir(cfg)?;
    let utts: Vec<&Utterance> = corpus.utterances.iter().collect();
    let ex = examples(cfg, &utts)?;
    let frames: usize = ex.iter().map(|e| e.features.len()).sum();
    println!(
        "featurized {} utterances ({frames} frames) into {}",
        ex.len(),
        cfg.out_dir.join("features").display()
    );
    Ok(())
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let corpus = load_corpus(&cfg)?;
    create_out_dir(&cfg)?;
    let train_split = split_examples(&cfg, &corpus, Split::Train)?;
    let test_split = split_examples(&cfg, &corpus, Split::Test)?;
    let trained = train(&cfg.train, &cfg.model, &train_split, &test_split)?;
    let meta = CheckpointMeta {
        seed: cfg.seed,
        epoch: trained.best_epoch as u64,
        config_hash: cfg.hash(),
        feature_fingerprint: feature_fingerprint(&cfg.frame, &cfg.mel),
    };
    let path = cfg.out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&trained.params, &meta, &path)?;
    trained.log.save(&cfg.out_dir.join("train_log.csv"))?;
    println!("best epoch {} -> {}", trained.best_epoch, path.display());
    Ok(())
}

fn open_checkpoint(cfg: &RunConfig, a: &CheckpointArg) -> Result<Checkpoint> {
    let path = a
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE));
    let ck = load_checkpoint_for(&path, &cfg.model)
        .with_context(|| format!("loading {}", path.display()))?;
    let fp = feature_fingerprint(&cfg.frame, &cfg.mel);
    if ck.meta.feature_fingerprint != fp {
        if !a.force {
            bail!(
                "checkpoint features {:016x} differ from the configured features {fp:016x} (use --force to override)",
                ck.meta.feature_fingerprint
            );
        }
        eprintln!("warning: feature fingerprint mismatch ignored (--force)");
    }
    Ok(ck)
}

fn cmd_evaluate(cfg: &RunConfig, a: EvalArgs) -> Result<()> {
    let ck = open_checkpoint(cfg, &a.ck)?;
    let corpus = load_corpus(cfg)?;
    create_out_dir(cfg)?;
    let test = split_examples(cfg, &corpus, Split::Test)?;
    let (ua, wa) = evaluate(&ck.params, &test)?;
    let report = format!(
        "# config hash {:016x}\nutterances {}\nua {:.4}\nwa {:.4}\n",
        cfg.hash(),
        test.len(),
        ua,
        wa
    );
    std::fs::write(cfg.out_dir.join("evaluate.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, a: AblateArgs) -> Result<()> {
    let specs = match &a.specs {
        Some(s) => SkipSpec::parse_list(s)?,
        None => cfg.specs.clone(),
    };
    let ck = open_checkpoint(cfg, &a.ck)?;
    let corpus = load_corpus(cfg)?;
    create_out_dir(cfg)?;
    let test = split_examples(cfg, &corpus, Split::Test)?;
    let rows = ablation_grid(&ck.params, &test, &specs)?;
    let name = cfg
        .manifests
        .iter()
        .map(|m| {
            m.parent()
                .and_then(|d| d.file_name())
                .unwrap_or(m.as_os_str())
                .to_string_lossy()
                .into_owned()
        })
        .collect::<Vec<_>>()
        .join("+");
    let table = format!(
        "# config hash {:016x}\n{}",
        cfg.hash(),
        render_table(&[(name.as_str(), &rows[..])])
    );
    std::fs::write(cfg.out_dir.join("ablation.csv"), render_csv(&rows))?;
    std::fs::write(cfg.out_dir.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// File-name-safe form of an utterance id.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn cmd_attend(cfg: &RunConfig, a: AttendArgs) -> Result<()> {
    let specs = SkipSpec::parse_list(&a.specs)?;
    let ck = open_checkpoint(cfg, &a.ck)?;
    let corpus = load_corpus(cfg)?;
    let ids: Vec<&str> = a.utt.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let utts = ids
        .iter()
        .map(|id| corpus.get(id).with_context(|| format!("unknown utterance `{id}`")))
        .collect::<Result<Vec<_>>>()?;
    create_out_dir(cfg)?;
    let dir = cfg.out_dir.join("attend");
    std::fs::create_dir_all(&dir)?;
    let ex = examples(cfg, &utts)?;
    for (utt, ex) in utts.iter().zip(&ex) {
        let samples = read_wav(&utt.audio).with_context(|| format!("reading {}", utt.audio.display()))?;
        let duration = samples.len() as f64 / cfg.frame.sample_rate as f64;
        let pitch = estimate_pitch(&samples, &cfg.pitch)?;
        let tiers = match &utt.alignment {
            Some(p) => load_alignment(p)?,
            None => AlignmentTiers::default(),
        };
        for &spec in &specs {
            let trace = attention_trace(&ck.params, ex, spec, duration)?;
            let stem = format!("{}_{}", file_stem(&utt.id), spec);
            let svg = render_svg(&trace, &tiers, &pitch)?;
            let svg = svg.replacen(
                "<rect ",
                &format!("<!-- config hash {:016x} -->\n<rect ", cfg.hash()),
                1,
            );
            std::fs::write(dir.join(format!("{stem}.svg")), svg)?;
            std::fs::write(dir.join(format!("{stem}.csv")), trace.to_csv())?;
            let vowel = if tiers.is_empty() {
                String::new()
            } else {
                format!(", vowel share {:.3}", align_frames(&trace, &tiers, &cfg.frame).vowel_share())
            };
            println!(
                "{} {}: predicted {}, reference {}{vowel}",
                utt.id,
                spec,
                crate::corpus::label_name(trace.prediction),
                crate::corpus::label_name(trace.reference)
            );
        }
    }
    Ok(())
}

fn cmd_pitch(cfg: &RunConfig, a: PitchArgs) -> Result<()> {
    let samples = read_wav(&a.wav).with_context(|| format!("reading {}", a.wav.display()))?;
    let contour = estimate_pitch(&samples, &cfg.pitch)?;
    let out = match a.out {
        Some(p) => p,
        None => {
            let stem = a.wav.file_stem().and_then(|s| s.to_str()).unwrap_or("pitch");
            cfg.out_dir.join("pitch").join(format!("{stem}.csv"))
        }
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_pitch_csv(&contour, &out)?;
    let voiced: Vec<f64> = contour.voiced_f0().collect();
    let mean = if voiced.is_empty() { 0.0 } else { voiced.iter().sum::<f64>() / voiced.len() as f64 };
    println!(
        "{} frames, {} voiced, mean F0 {mean:.1} Hz -> {}",
        contour.len(),
        voiced.len(),
        out.display()
    );
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let cfg = ModelConfig::toy(a.hidden, a.context);
    let params = init_model::<f64>(&cfg, 12)?;
    let x = crate::dsp::FeatureSequence::new(
        random_block(a.frames * cfg.input_dim, 13),
        cfg.input_dim,
        0.0,
        0.01,
        0,
    )?;
    let batch = SequenceBatch::single(&x, None)?;
    let (mut g, loss, _) = loss_graph::<f64>(&cfg, &batch, &[2 % cfg.num_classes])?;
    let rep = gradient_check(&mut g, params.tensors(), loss, a.eps, a.coords, 5)?;
    println!(
        "checked {} coordinates, max relative error {:.3e}{}",
        rep.coordinates_checked,
        rep.max_rel_error,
        rep.worst
            .as_ref()
            .map(|(n, i)| format!(" at {n}[{i}]"))
            .unwrap_or_default()
    );
    if !(rep.max_rel_error < a.tolerance) {
        bail!("gradient check failed (tolerance {:e})", a.tolerance);
    }
    Ok(())
}

fn random_block(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}
