use std::fs;
use std::path::{Path, PathBuf};

use ctmos::analysis::{
    self, case_study_table, position_statistics, positions_table, trajectories_table, AblationData,
    AblationRecipe, AblationRow, ModelPositions,
};
use ctmos::corpus::{self, make_batches, preprocess, synthetic, CorpusBatch, PreparedCorpus, PreprocessRules};
use ctmos::kv::{join_list, KvMap};
use ctmos::model::{LanguageModel, ModelConfig, TemperatureConfig, TemperatureMode, TemperatureVariant};
use ctmos::oracle::{self, Axis, GridSpec, MeshSurface};
use ctmos::rng::fnv1a;
use ctmos::trainer::{
    evaluate_model, load_checkpoint, save_checkpoint, train, Checkpoint, EpochRecord, OptimizerState,
    TrainConfig, TrainError,
};
use thiserror::Error;

use crate::args::*;

pub const MANIFEST_FILE: &str = "manifest.cfg";
pub const AGREEMENT_TOLERANCE: f64 = 1e-8;
const EVAL_BATCH: usize = 10;
const MIN_SENTENCE: usize = 15;
const MAX_SENTENCE: usize = 25;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Kv(#[from] ctmos::kv::KvError),
    #[error(transparent)]
    Model(#[from] ctmos::model::ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] ctmos::trainer::CheckpointError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
}

type Result<T> = std::result::Result<T, CliError>;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Resolved settings of one invocation, written before any work starts.
struct Manifest {
    kv: KvMap,
}

impl Manifest {
    fn new(subcommand: &str) -> Self {
        let mut kv = KvMap::new();
        kv.set("subcommand", subcommand);
        Self { kv }
    }

    fn path(mut self, key: &str, p: &Path) -> Self {
        self.kv.set(key, p.display());
        self
    }

    fn set(mut self, key: &str, v: impl std::fmt::Display) -> Self {
        self.kv.set(key, v);
        self
    }

    fn with(mut self, other: &KvMap) -> Self {
        self.kv.merge(other);
        self
    }

    fn write(self, out: &Path) -> Result<()> {
        create_dir(out)?;
        write(&out.join(MANIFEST_FILE), self.kv.render())
    }
}

fn digest_hex(d: u64) -> String {
    format!("{d:016x}")
}

fn file_digest(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|source| CliError::Io {
                path: path.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        let mut all = Vec::new();
        for n in names {
            all.extend(n.file_name().unwrap().to_string_lossy().as_bytes());
            all.extend(read(&n)?);
        }
        Ok(digest_hex(fnv1a(&all)))
    } else {
        Ok(digest_hex(fnv1a(&read(path)?)))
    }
}

/// Configuration file overlaid with explicit flags.
fn recipe_kv(args: &RecipeArgs) -> Result<KvMap> {
    let mut kv = match &args.config {
        Some(p) => {
            let text = String::from_utf8(read(p)?)
                .map_err(|_| CliError::Invalid(format!("{} is not UTF-8", p.display())))?;
            KvMap::parse(&text)?
        }
        None => KvMap::new(),
    };
    macro_rules! flag {
        ($($field:ident => $key:literal),*) => {
            $(if let Some(v) = &args.$field { kv.set($key, v); })*
        };
    }
    flag!(seed => "seed", temperature => "temperature", tau => "tau", alpha => "alpha",
          beta => "beta", variant => "variant", lambda => "lambda", mixtures => "mixtures",
          rank => "rank", epochs => "epochs", lr => "lr", clip => "clip", bptt => "bptt",
          batch => "batch");
    Ok(kv)
}

fn resolve_recipe(args: &RecipeArgs, vocab_size: usize) -> Result<(ModelConfig, TrainConfig, KvMap)> {
    let mut kv = recipe_kv(args)?;
    kv.set("vocab_size", vocab_size);
    let model = ModelConfig::from_kv(&kv)?;
    let train = TrainConfig::from_kv(&kv)?;
    train.validate()?;
    let mut resolved = model.to_kv();
    resolved.merge(&train.to_kv());
    Ok((model, train, resolved))
}

fn load_corpus(dir: &Path) -> Result<PreparedCorpus> {
    Ok(PreparedCorpus::load(dir)?)
}

fn split<'a>(corpus: &'a PreparedCorpus, name: &str) -> Result<&'a [usize]> {
    corpus
        .split(name)
        .ok_or_else(|| CliError::Invalid(format!("unknown split {name:?}; use train, valid or test")))
}

/// Windows of `bptt` over `stream`, shrinking the batch for short streams.
fn eval_batches(stream: &[usize], batch: usize, bptt: usize) -> Result<Vec<CorpusBatch>> {
    if stream.len() < bptt + 1 {
        return Ok(Vec::new());
    }
    let b = batch.min(stream.len() / (bptt + 1)).max(1);
    Ok(make_batches(stream, b, bptt)?.0)
}

fn load_matching(path: &Path, corpus: &PreparedCorpus) -> Result<Checkpoint> {
    let c = load_checkpoint(path)?;
    c.check_digest(corpus.vocab.digest())?;
    Ok(c)
}

fn metrics_table(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch\ttrain_ce\ttrain_total\tvalid_ppl\twall_seconds\n");
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Oracle(OracleCommand::Mesh(a)) => cmd_mesh(a),
        Command::Oracle(OracleCommand::Check(a)) => cmd_check(a),
        Command::Ablate(AblateCommand::ConstantTau(a)) => cmd_constant_tau(a),
        Command::Ablate(AblateCommand::Normalization(a)) => cmd_normalization(a),
        Command::Analyze(AnalyzeCommand::Trajectories(a)) => cmd_trajectories(a),
        Command::Analyze(AnalyzeCommand::Positions(a)) => cmd_positions(a),
        Command::Analyze(AnalyzeCommand::CaseStudy(a)) => cmd_case_study(a),
    }
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<()> {
    Manifest::new("preprocess")
        .path("in", &a.input)
        .path("out", &a.out)
        .set("cap", a.cap)
        .set("input_digest", file_digest(&a.input)?)
        .write(&a.out)?;
    let c = corpus::prepare_corpus(&a.input, &a.out, a.cap)?;
    println!(
        "vocab\t{}\ttrain\t{}\tvalid\t{}\ttest\t{}\tdigest\t{}",
        c.vocab.len(),
        c.train.len(),
        c.valid.len(),
        c.test.len(),
        digest_hex(c.vocab.digest())
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    Manifest::new("synth")
        .path("out", &a.out)
        .set("tokens", a.tokens)
        .set("seed", a.seed)
        .write(&a.out)?;
    let spec = synthetic::SyntheticSpec {
        seed: a.seed,
        ..Default::default()
    };
    let held_out = (a.tokens / 10).max(1);
    for (name, n) in [("train", a.tokens), ("valid", held_out), ("test", held_out)] {
        write(&a.out.join(format!("{name}.txt")), synthetic::generate(&spec, n, name))?;
    }
    println!("wrote\t{}", a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let (model_config, train_config, resolved) = resolve_recipe(&a.recipe, corpus.vocab.len())?;
    let resume = a.checkpoint.as_deref().map(|p| load_matching(p, &corpus)).transpose()?;
    let mut manifest = Manifest::new("train")
        .path("corpus", &a.corpus)
        .path("out", &a.out)
        .set("vocab_digest", digest_hex(corpus.vocab.digest()))
        .with(&resolved);
    if let (Some(p), Some(c)) = (&a.checkpoint, &resume) {
        manifest = manifest
            .path("checkpoint", p)
            .set("checkpoint_digest", digest_hex(c.model.params.digest()))
            .with(&c.model.config.to_kv());
    }
    manifest.write(&a.out)?;

    let (mut model, mut opt) = match resume {
        Some(c) => (c.model, c.optimizer),
        None => (
            LanguageModel::init(model_config, train_config.seed)?,
            OptimizerState::new(train_config.lr),
        ),
    };
    let (train_batches, _) = make_batches(&corpus.train, train_config.batch_size, train_config.bptt)?;
    let valid = eval_batches(&corpus.valid, EVAL_BATCH, train_config.bptt)?;
    let digest = corpus.vocab.digest();
    let out = a.out.clone();
    let records = train(&mut model, &train_batches, &valid, &train_config, &mut opt, |m, o, r| {
        let ckpt = Checkpoint {
            model: m.clone(),
            optimizer: *o,
            vocab_digest: digest,
        };
        save_checkpoint(&ckpt, &out.join(format!("checkpoint-epoch{:03}.ctms", r.epoch)))?;
        eprintln!("{}", r.to_line());
        Ok(())
    })?;
    write(&a.out.join("metrics.tsv"), metrics_table(&records))?;
    save_checkpoint(
        &Checkpoint {
            model,
            optimizer: opt,
            vocab_digest: digest,
        },
        &a.out.join("model.ctms"),
    )?;
    if let Some(last) = records.last() {
        println!("epoch\t{}\ttrain_ce\t{}\tvalid_ppl\t{}", last.epoch, last.train_ce, last.valid_ppl);
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let ckpt = load_matching(&a.checkpoint, &corpus)?;
    if let Some(out) = &a.out {
        Manifest::new("eval")
            .path("checkpoint", &a.checkpoint)
            .path("corpus", &a.corpus)
            .path("out", out)
            .set("split", &a.split)
            .set("bptt", a.bptt)
            .set("batch", a.batch)
            .set("checkpoint_digest", digest_hex(ckpt.model.params.digest()))
            .write(out)?;
    }
    if a.bptt == 0 || a.batch == 0 {
        return Err(CliError::Invalid("bptt and batch must be positive".into()));
    }
    let batches = eval_batches(split(&corpus, &a.split)?, a.batch, a.bptt)?;
    if batches.is_empty() {
        return Err(CliError::Invalid(format!("split {} is too short to evaluate", a.split)));
    }
    let ppl = evaluate_model(&ckpt.model, &batches)?;
    println!("perplexity\t{ppl}");
    if let Some(out) = &a.out {
        write(&out.join("eval.tsv"), format!("split\tperplexity\n{}\t{ppl}\n", a.split))?;
    }
    Ok(())
}

fn cmd_mesh(a: MeshArgs) -> Result<()> {
    Manifest::new("oracle mesh")
        .path("out", &a.out)
        .set("resolution", a.resolution)
        .write(&a.out)?;
    let grid = GridSpec {
        probability: Axis {
            steps: a.resolution,
            ..GridSpec::default().probability
        },
        temperature: Axis {
            steps: a.resolution,
            ..GridSpec::default().temperature
        },
    };
    let surfaces = [
        MeshSurface::Logit { class: 0 },
        MeshSurface::Logit { class: 1 },
        MeshSurface::Temperature { class: 0, z0_positive: true },
        MeshSurface::Temperature { class: 0, z0_positive: false },
        MeshSurface::Temperature { class: 1, z0_positive: true },
        MeshSurface::Temperature { class: 1, z0_positive: false },
    ];
    for s in surfaces {
        let mesh = oracle::gradient_mesh(&grid, s)?;
        let name = format!("{}.csv", s.name());
        write(&a.out.join(&name), mesh.to_csv())?;
        println!("{name}\tmax_abs\t{:e}", mesh.max_abs());
    }
    Ok(())
}

fn cmd_check(a: CheckArgs) -> Result<()> {
    if let Some(out) = &a.out {
        Manifest::new("oracle check")
            .path("out", out)
            .set("samples", a.samples)
            .set("seed", a.seed)
            .write(out)?;
    }
    if a.samples == 0 {
        return Err(CliError::Invalid("samples must be positive".into()));
    }
    let r = oracle::check_agreement(a.samples, a.seed)?;
    println!("samples\t{}", r.samples);
    println!("logit_relative_error\t{:e}", r.logit_error);
    println!("temperature_relative_error\t{:e}", r.temperature_error);
    println!("max_relative_error\t{:e}", r.max_error());
    if let Some(out) = &a.out {
        write(&out.join("check.tsv"), format!("max_relative_error\n{:e}\n", r.max_error()))?;
    }
    if r.max_error() < AGREEMENT_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Invalid(format!(
            "max relative error {:e} exceeds {AGREEMENT_TOLERANCE:e}",
            r.max_error()
        )))
    }
}

struct AblationSetup {
    corpus: PreparedCorpus,
    model: ModelConfig,
    recipe: AblationRecipe,
    resolved: KvMap,
}

fn ablation_setup(corpus_dir: &Path, args: &RecipeArgs) -> Result<AblationSetup> {
    let corpus = load_corpus(corpus_dir)?;
    let (model, train, resolved) = resolve_recipe(args, corpus.vocab.len())?;
    Ok(AblationSetup {
        recipe: AblationRecipe {
            mos: model.mos.clone(),
            train,
        },
        model,
        corpus,
        resolved,
    })
}

fn contextual_of(model: &ModelConfig) -> TemperatureConfig {
    match model.temperature {
        TemperatureMode::Contextual(t) => t,
        _ => TemperatureConfig::bounded(model.mos.embedding_dim),
    }
}

fn run_rows(
    setup: &AblationSetup,
    out: &Path,
    run: impl FnOnce(&AblationRecipe, AblationData<'_>) -> std::result::Result<Vec<AblationRow>, analysis::AnalysisError>,
) -> Result<()> {
    let t = &setup.recipe.train;
    let (train_b, _) = make_batches(&setup.corpus.train, t.batch_size, t.bptt)?;
    let valid = eval_batches(&setup.corpus.valid, EVAL_BATCH, t.bptt)?;
    let test = eval_batches(&setup.corpus.test, EVAL_BATCH, t.bptt)?;
    if valid.is_empty() {
        return Err(CliError::Invalid("ablation needs a validation split".into()));
    }
    let rows = run(
        &setup.recipe,
        AblationData {
            train: &train_b,
            valid: &valid,
            test: &test,
        },
    )?;
    for r in &rows {
        let name: String = r
            .label
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
            .collect();
        write(&out.join(format!("metrics-{name}.tsv")), metrics_table(&r.epochs))?;
    }
    let table = AblationRow::table(&rows);
    write(&out.join("ablation.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_constant_tau(a: ConstantTauArgs) -> Result<()> {
    let setup = ablation_setup(&a.corpus, &a.recipe)?;
    if let Some(t) = a.taus.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(CliError::Invalid(format!("temperature {t} must be positive")));
    }
    let contextual = contextual_of(&setup.model);
    Manifest::new("ablate constant-tau")
        .path("corpus", &a.corpus)
        .path("out", &a.out)
        .set("taus", join_list(&a.taus))
        .set("vocab_digest", digest_hex(setup.corpus.vocab.digest()))
        .with(&setup.resolved)
        .write(&a.out)?;
    run_rows(&setup, &a.out, |recipe, data| {
        analysis::run_constant_tau_ablation(&a.taus, contextual, recipe, data)
    })
}

fn cmd_normalization(a: NormalizationArgs) -> Result<()> {
    let setup = ablation_setup(&a.corpus, &a.recipe)?;
    let base = contextual_of(&setup.model);
    let mut configs = Vec::new();
    for name in &a.variants {
        let variant = TemperatureVariant::parse(name)
            .ok_or_else(|| CliError::Invalid(format!("unknown variant {name:?}")))?;
        let lambda = a.recipe.lambda.unwrap_or(match variant {
            TemperatureVariant::TanhShift => 3.0,
            _ => 4.0,
        });
        let c = TemperatureConfig {
            variant,
            lambda,
            ..base
        };
        analysis::normalize_temperature_variant(&[0.0], &c)?;
        configs.push(c);
    }
    Manifest::new("ablate normalization")
        .path("corpus", &a.corpus)
        .path("out", &a.out)
        .set("variants", a.variants.join(","))
        .set("vocab_digest", digest_hex(setup.corpus.vocab.digest()))
        .with(&setup.resolved)
        .write(&a.out)?;
    run_rows(&setup, &a.out, |recipe, data| {
        analysis::run_normalization_ablation(&configs, recipe, data)
    })
}

fn cmd_trajectories(a: TrajectoryArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let mut manifest = Manifest::new("analyze trajectories")
        .path("corpus", &a.corpus)
        .path("out", &a.out)
        .set("tokens", a.tokens)
        .set("samples", a.samples)
        .set("split", &a.split)
        .set("bptt", a.bptt)
        .set(
            "checkpoint",
            a.checkpoint.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","),
        );
    let mut series = Vec::new();
    for (i, p) in a.checkpoint.iter().enumerate() {
        let c = load_checkpoint(p)?;
        manifest = manifest.set(&format!("checkpoint_digest.{i}"), digest_hex(c.model.params.digest()));
        series.push(c);
    }
    manifest.write(&a.out)?;
    if a.bptt == 0 || a.samples == 0 {
        return Err(CliError::Invalid("bptt and samples must be positive".into()));
    }
    let mut probe = eval_batches(split(&corpus, &a.split)?, 1, a.bptt)?;
    probe.truncate(a.samples);
    let tokens: Vec<usize> = (0..a.tokens.min(corpus.vocab.len())).collect();
    let recs = analysis::temperature_trajectories(&series, corpus.vocab.digest(), &probe, &tokens)?;
    let table = trajectories_table(&recs, |t| corpus.vocab.decode(t).to_string());
    write(&a.out.join("trajectories.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_positions(a: PositionArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let ckpt = load_matching(&a.checkpoint, &corpus)?;
    Manifest::new("analyze positions")
        .path("checkpoint", &a.checkpoint)
        .path("corpus", &a.corpus)
        .path("out", &a.out)
        .set("split", &a.split)
        .set("min_len", MIN_SENTENCE)
        .set("max_len", MAX_SENTENCE)
        .set("checkpoint_digest", digest_hex(ckpt.model.params.digest()))
        .write(&a.out)?;
    let mut source = ModelPositions {
        model: &ckpt.model,
        eos: corpus.vocab.eos(),
    };
    let stats = position_statistics(
        &mut source,
        split(&corpus, &a.split)?,
        corpus.vocab.eos(),
        MIN_SENTENCE,
        MAX_SENTENCE,
    )?;
    if let Some(w) = &stats.warning {
        eprintln!("warning: {w}");
    }
    let table = positions_table(&stats);
    write(&a.out.join("positions.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_case_study(a: CaseStudyArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let model_a = load_matching(&a.checkpoint, &corpus)?;
    let model_b = load_matching(&a.model_b, &corpus)?;
    Manifest::new("analyze case-study")
        .path("checkpoint", &a.checkpoint)
        .path("model_b", &a.model_b)
        .path("corpus", &a.corpus)
        .path("out", &a.out)
        .set("context", a.context.replace('\n', " "))
        .set("topk", a.topk)
        .set("checkpoint_digest", digest_hex(model_a.model.params.digest()))
        .set("model_b_digest", digest_hex(model_b.model.params.digest()))
        .write(&a.out)?;
    let tokens = preprocess(&a.context, PreprocessRules::default());
    if tokens.is_empty() {
        return Err(CliError::Invalid("context has no tokens".into()));
    }
    let ids = corpus.vocab.encode(&tokens);
    let recs = analysis::case_study_topk(&model_a.model, &model_b.model, &ids, a.topk)?;
    let table = case_study_table(&recs, |t| corpus.vocab.decode(t).to_string());
    write(&a.out.join("case_study.tsv"), &table)?;
    print!("{table}");
    Ok(())
}
