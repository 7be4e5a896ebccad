//! The `sasv` command-line pipeline: synth, calibrate, fuse, train, eval, hist.

pub mod hist;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sasv_fusion::domain::{ASV_DIM, CM_DIM};
use sasv_fusion::io::{
    load_embeddings, load_enrollment, load_protocol, load_scores, write_embeddings,
    write_embeddings_tsv, write_enrollment, write_protocol, write_scores,
};
use sasv_fusion::mapping::{fit_calibrator, CalibratorParams, MappingKind, DEFAULT_L2};
use sasv_fusion::metrics::{evaluate_column, EerResult, MetricSuite, ScoreColumn};
use sasv_fusion::scoring::{score_all, AsvScorer, CmHead, EnrollAggregation};
use sasv_fusion::synth::{gen_world, perturb_head, Split, WorldSpec};
use sasv_fusion::trainer::{train_finetune, DevSet, TrainConfig, TrainPool};
use sasv_fusion::{fuse_records, FusionStrategy, TrialClass};
use thiserror::Error;

pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] sasv_fusion::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

#[derive(Debug, Parser)]
#[command(name = "sasv", version, about = "Spoofing-aware speaker verification score fusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic embedding world.
    Synth(SynthArgs),
    /// Fit the logistic ASV score calibrator on bona fide trials.
    Calibrate(CalibrateArgs),
    /// Score trials and fuse them into SASV scores.
    Fuse(FuseArgs),
    /// Fine-tune the CM head on the fused score.
    Train(TrainArgs),
    /// Report SV-, SPF- and SASV-EER for score files.
    Eval(EvalArgs),
    /// Per-class histograms of a score column.
    Hist(HistArgs),
}

/// Fusion systems, named as in the result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum System {
    #[value(name = "pr-l-i")]
    PrLI,
    #[value(name = "pr-s-i")]
    PrSI,
    #[value(name = "pr-c-i")]
    PrCI,
    #[value(name = "pr-l-f")]
    PrLF,
    #[value(name = "pr-s-f")]
    PrSF,
    #[value(name = "baseline1")]
    Baseline1,
    #[value(name = "ablation-sum")]
    AblationSum,
    #[value(name = "ablation-prod")]
    AblationProd,
}

impl System {
    pub fn strategy(self, calibrator: Option<CalibratorParams>) -> CliResult<FusionStrategy> {
        use FusionStrategy::*;
        match (self, calibrator) {
            (System::PrCI, Some(c)) => Ok(ProductRule(MappingKind::Calibrated(c))),
            (System::PrCI, None) => Err(CliError::Usage("pr-c-i requires --calibrator".into())),
            (_, Some(_)) => Err(CliError::Usage(format!(
                "--calibrator is only valid with pr-c-i, not {}",
                self.name()
            ))),
            (System::PrLI | System::PrLF, None) => Ok(ProductRule(MappingKind::Linear)),
            (System::PrSI | System::PrSF, None) => Ok(ProductRule(MappingKind::Sigmoid)),
            (System::Baseline1, None) => Ok(RawSum),
            (System::AblationSum, None) => Ok(MappedSum),
            (System::AblationProd, None) => Ok(RawProduct),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            System::PrLI => "pr-l-i",
            System::PrSI => "pr-s-i",
            System::PrCI => "pr-c-i",
            System::PrLF => "pr-l-f",
            System::PrSF => "pr-s-f",
            System::Baseline1 => "baseline1",
            System::AblationSum => "ablation-sum",
            System::AblationProd => "ablation-prod",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Aggregation {
    #[default]
    EmbeddingMean,
    ScoreMean,
}

impl From<Aggregation> for EnrollAggregation {
    fn from(a: Aggregation) -> Self {
        match a {
            Aggregation::EmbeddingMean => EnrollAggregation::EmbeddingMean,
            Aggregation::ScoreMean => EnrollAggregation::ScoreMean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainMapping {
    Linear,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Column {
    #[value(name = "s_asv")]
    Asv,
    #[value(name = "s_cm")]
    Cm,
    #[default]
    #[value(name = "s_sasv")]
    Sasv,
}

impl From<Column> for ScoreColumn {
    fn from(c: Column) -> Self {
        match c {
            Column::Asv => ScoreColumn::Asv,
            Column::Cm => ScoreColumn::Cm,
            Column::Sasv => ScoreColumn::Sasv,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Starting parameter set; the flags below override single fields.
    #[arg(long, value_enum, default_value_t = Preset::Small)]
    pub preset: Preset,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Speakers per split.
    #[arg(long)]
    pub speakers: Option<usize>,
    #[arg(long)]
    pub utts: Option<usize>,
    #[arg(long)]
    pub spoofs: Option<usize>,
    #[arg(long)]
    pub enroll: Option<usize>,
    #[arg(long)]
    pub asv_dim: Option<usize>,
    #[arg(long)]
    pub cm_dim: Option<usize>,
    #[arg(long)]
    pub asv_noise: Option<f64>,
    #[arg(long)]
    pub cm_margin: Option<f64>,
    #[arg(long)]
    pub cm_spread: Option<f64>,
    #[arg(long)]
    pub spoof_asv_alpha: Option<f64>,
    #[arg(long)]
    pub eval_spoof_shift: Option<f64>,
    /// Std of Gaussian noise added to the true head to form `head.txt`.
    #[arg(long, default_value_t = 0.0)]
    pub head_noise: f64,
    #[arg(long, default_value_t = 1)]
    pub head_seed: u64,
    /// Write embeddings as TSV text instead of binary.
    #[arg(long)]
    pub text: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Preset {
    /// `WorldSpec::default()`: clean CM separation.
    #[default]
    Small,
    /// `WorldSpec::reference()`: CM scale dominates, overlapping clusters.
    Reference,
}

impl SynthArgs {
    pub fn world_spec(&self) -> WorldSpec {
        let base = match self.preset {
            Preset::Small => WorldSpec::default(),
            Preset::Reference => WorldSpec::reference(),
        };
        WorldSpec {
            seed: self.seed.unwrap_or(base.seed),
            n_speakers: self.speakers.unwrap_or(base.n_speakers),
            utts_per_speaker: self.utts.unwrap_or(base.utts_per_speaker),
            spoofs_per_speaker: self.spoofs.unwrap_or(base.spoofs_per_speaker),
            enroll_per_speaker: self.enroll.unwrap_or(base.enroll_per_speaker),
            asv_dim: self.asv_dim.unwrap_or(base.asv_dim),
            cm_dim: self.cm_dim.unwrap_or(base.cm_dim),
            asv_noise: self.asv_noise.unwrap_or(base.asv_noise),
            cm_margin: self.cm_margin.unwrap_or(base.cm_margin),
            cm_spread: self.cm_spread.unwrap_or(base.cm_spread),
            spoof_asv_alpha: self.spoof_asv_alpha.unwrap_or(base.spoof_asv_alpha),
            eval_spoof_shift: self.eval_spoof_shift.unwrap_or(base.eval_spoof_shift),
        }
    }
}

#[derive(Debug, Args)]
pub struct EmbeddingArgs {
    #[arg(long)]
    pub asv_emb: PathBuf,
    #[arg(long, default_value_t = ASV_DIM)]
    pub asv_dim: usize,
    #[arg(long, value_enum, default_value_t = Aggregation::EmbeddingMean)]
    pub aggregation: Aggregation,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    /// Labeled trials; spoof trials are ignored.
    #[arg(long)]
    pub protocol: PathBuf,
    #[arg(long)]
    pub enrollment: PathBuf,
    #[arg(long, default_value_t = DEFAULT_L2)]
    pub l2: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long, value_enum)]
    pub strategy: System,
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    #[arg(long)]
    pub cm_emb: PathBuf,
    #[arg(long, default_value_t = CM_DIM)]
    pub cm_dim: usize,
    #[arg(long)]
    pub protocol: PathBuf,
    #[arg(long)]
    pub enrollment: PathBuf,
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long)]
    pub calibrator: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    #[arg(long)]
    pub cm_emb: PathBuf,
    #[arg(long, default_value_t = CM_DIM)]
    pub cm_dim: usize,
    #[arg(long)]
    pub train_protocol: PathBuf,
    #[arg(long)]
    pub dev_protocol: PathBuf,
    #[arg(long)]
    pub enrollment: PathBuf,
    /// Initial CM head.
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long, value_enum, default_value_t = TrainMapping::Sigmoid)]
    pub mapping: TrainMapping,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().target_prior)]
    pub prior: f64,
    #[arg(long, default_value_t = TrainConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().pairs_per_epoch)]
    pub pairs_per_epoch: usize,
    /// Target,nontarget,spoof pair ratio.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1usize, 1, 1])]
    pub class_mix: Vec<usize>,
    #[arg(long)]
    pub out_head: PathBuf,
    #[arg(long)]
    pub history: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum EvalFormat {
    #[default]
    Table,
    Kv,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scores TSV files; each is one system, named by file stem.
    #[arg(long, required = true, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Column::Sasv)]
    pub column: Column,
    #[arg(long, value_enum, default_value_t = EvalFormat::Table)]
    pub format: EvalFormat,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, value_enum, default_value_t = Column::Sasv)]
    pub column: Column,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs one command; returns what it prints to stdout.
pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Fuse(a) => cmd_fuse(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Hist(a) => cmd_hist(&a),
    }
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<String> {
    let world = gen_world(&args.world_spec())?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.clone(),
        source,
    })?;
    if args.text {
        write_embeddings_tsv(dir.join("asv.emb"), world.asv.values())?;
        write_embeddings_tsv(dir.join("cm.emb"), world.cm.values())?;
    } else {
        write_embeddings(dir.join("asv.emb"), world.asv.values())?;
        write_embeddings(dir.join("cm.emb"), world.cm.values())?;
    }
    write_enrollment(dir.join("enrollment.txt"), &world.enrollment)?;
    for split in Split::ALL {
        write_protocol(dir.join(format!("{}.trials", split.name())), world.trials(split))?;
    }
    world.true_head.save(dir.join("true_head.txt"))?;
    perturb_head(&world.true_head, args.head_noise, args.head_seed).save(dir.join("head.txt"))?;
    Ok(format!(
        "wrote {} ASV / {} CM embeddings, {} speakers, {}/{}/{} train/dev/eval trials to {}\n",
        world.asv.len(),
        world.cm.len(),
        world.enrollment.len(),
        world.train.len(),
        world.dev.len(),
        world.eval.len(),
        dir.display()
    ))
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> CliResult<String> {
    let asv = load_embeddings(&args.emb.asv_emb, args.emb.asv_dim)?;
    let trials = load_protocol(&args.protocol)?;
    let enrollment = load_enrollment(&args.enrollment)?;
    let mut scorer = AsvScorer::new(&enrollment, &asv, args.emb.aggregation.into());
    let mut samples = Vec::new();
    for (i, t) in trials.iter().enumerate() {
        let label = match t.class {
            Some(TrialClass::Target) => true,
            Some(TrialClass::NonTarget) => false,
            Some(TrialClass::Spoof) => continue,
            None => return Err(sasv_fusion::Error::Unlabeled(i).into()),
        };
        let test = asv.get(&t.test_utt_id).ok_or_else(|| sasv_fusion::Error::Unresolved {
            index: i,
            what: "ASV test utterance",
            id: t.test_utt_id.clone(),
        })?;
        samples.push((scorer.score(i, &t.speaker_id, test)?, label));
    }
    let params = fit_calibrator(&samples, args.l2)?;
    params.save(&args.out)?;
    Ok(format!(
        "calibrator a={:?} b={:?} from {} bona fide trials\n",
        params.a,
        params.b,
        samples.len()
    ))
}

pub fn cmd_fuse(args: &FuseArgs) -> CliResult<String> {
    let calibrator = args.calibrator.as_ref().map(CalibratorParams::load).transpose()?;
    let strategy = args.strategy.strategy(calibrator)?;
    let asv = load_embeddings(&args.emb.asv_emb, args.emb.asv_dim)?;
    let cm = load_embeddings(&args.cm_emb, args.cm_dim)?;
    let trials = load_protocol(&args.protocol)?;
    let enrollment = load_enrollment(&args.enrollment)?;
    let head = CmHead::load(&args.head)?;
    let records = score_all(&trials, &enrollment, &asv, &cm, &head, args.emb.aggregation.into())?;
    let fused = fuse_records(strategy, &records);
    write_scores(&args.out, &fused)?;
    Ok(format!(
        "{}: scored {} trials -> {}\n",
        args.strategy.name(),
        fused.len(),
        args.out.display()
    ))
}

fn fmt_eer(r: Option<EerResult>) -> String {
    r.map_or_else(|| "-".into(), |r| format!("{:.2}", 100.0 * r.eer))
}

fn fmt_rate(r: Option<EerResult>) -> String {
    r.map_or_else(|| "-".into(), |r| format!("{:?}", r.eer))
}

pub fn history_tsv(history: &[sasv_fusion::trainer::EpochRecord]) -> String {
    let mut out = String::from("epoch\tdev_sv_eer\tdev_spf_eer\tdev_sasv_eer\tloss\n");
    for r in history {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.epoch,
            fmt_rate(r.dev.sv_eer),
            fmt_rate(r.dev.spf_eer),
            fmt_rate(r.dev.sasv_eer),
            r.loss.map_or_else(|| "-".into(), |l| format!("{l:?}")),
        );
    }
    out
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<String> {
    let class_mix: [usize; 3] = args
        .class_mix
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Usage("--class-mix takes three counts".into()))?;
    let config = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        target_prior: args.prior,
        seed: args.seed,
        mapping: match args.mapping {
            TrainMapping::Linear => MappingKind::Linear,
            TrainMapping::Sigmoid => MappingKind::Sigmoid,
        },
        pairs_per_epoch: args.pairs_per_epoch,
        class_mix,
    };
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let asv = load_embeddings(&args.emb.asv_emb, args.emb.asv_dim)?;
    let cm = load_embeddings(&args.cm_emb, args.cm_dim)?;
    let enrollment = load_enrollment(&args.enrollment)?;
    let train = load_protocol(&args.train_protocol)?;
    let dev = load_protocol(&args.dev_protocol)?;
    let head = CmHead::load(&args.head)?;

    let pool = TrainPool::from_trials(&train, &enrollment, &asv, &cm)?;
    let dev = DevSet::new(&dev, &enrollment, &asv, &cm, args.emb.aggregation.into())?;
    let outcome = train_finetune(&config, &pool, &dev, &head)?;
    outcome.best_head.save(&args.out_head)?;
    write_file(&args.history, history_tsv(&outcome.history))?;
    let best = &outcome.history[outcome.best_epoch];
    Ok(format!(
        "best epoch {} of {}: dev SASV-EER {}% (epoch 0: {}%)\n",
        outcome.best_epoch,
        config.epochs,
        fmt_eer(best.dev.sasv_eer),
        fmt_eer(outcome.history[0].dev.sasv_eer),
    ))
}

fn system_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn format_table(rows: &[(String, MetricSuite)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    let mut out = format!(
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>12}  {:>12}  {:>12}\n",
        "system", "SV-EER", "SPF-EER", "SASV-EER", "SV-thr", "SPF-thr", "SASV-thr"
    );
    let pct = |r: Option<EerResult>| r.map_or_else(|| "absent".into(), |r| format!("{:.2}%", 100.0 * r.eer));
    let thr = |r: Option<EerResult>| r.map_or_else(|| "-".into(), |r| sasv_fusion::io::format_sig9(r.threshold));
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>12}  {:>12}  {:>12}",
            name,
            pct(m.sv_eer),
            pct(m.spf_eer),
            pct(m.sasv_eer),
            thr(m.sv_eer),
            thr(m.spf_eer),
            thr(m.sasv_eer),
        );
    }
    out
}

pub fn format_kv(name: &str, m: &MetricSuite) -> String {
    let mut out = format!("system={name}");
    for (key, r) in [("sv", m.sv_eer), ("spf", m.spf_eer), ("sasv", m.sasv_eer)] {
        match r {
            Some(r) => {
                let _ = write!(out, " {key}_eer={:?} {key}_threshold={:?}", r.eer, r.threshold);
            }
            None => {
                let _ = write!(out, " {key}_eer=absent");
            }
        }
    }
    out.push('\n');
    out
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<String> {
    let mut rows = Vec::new();
    for path in &args.scores {
        let records = load_scores(path)?;
        if records.iter().all(|r| r.trial.class.is_none()) {
            return Err(sasv_fusion::Error::Config(format!("{}: no labeled rows", path.display())).into());
        }
        rows.push((system_name(path), evaluate_column(&records, args.column.into())?));
    }
    Ok(match args.format {
        EvalFormat::Table => format_table(&rows),
        EvalFormat::Kv => rows.iter().map(|(n, m)| format_kv(n, m)).collect(),
    })
}

pub fn cmd_hist(args: &HistArgs) -> CliResult<String> {
    let records = load_scores(&args.scores)?;
    let h = hist::histogram(&records, args.column.into(), args.bins)?;
    write_file(&args.out, h.to_text())?;
    Ok(format!(
        "{} bins over {} -> {}\n",
        h.edges.len().saturating_sub(1),
        ScoreColumn::from(args.column).name(),
        args.out.display()
    ))
}
