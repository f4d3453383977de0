use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gdlnn::data::{self, DataError, Dataset, SplitConfig};
use gdlnn::explain::{self, ExplainConfig, ExplainError};
use gdlnn::mining::{self, Layer, MiningConfig, MiningError, TrainingSet};
use gdlnn::model::{self, Activation, GridSpec, Model, ModelError, TrainConfig};
use gdlnn::{Graph, Label, MatchError, DEFAULT_BUDGET};

#[derive(Parser)]
#[command(name = "gdlnn", version, about = "Mine graph-pattern programs, train a classifier on them and explain its predictions")]
struct Cli {
    /// Log debug records as well.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine a GDL layer from the training split and write it to --out.
    Mine(MineArgs),
    /// Mine (or load) a layer, train the classifier head, write the model.
    Train(TrainArgs),
    /// Print the predicted label of every graph in a split.
    Predict(PredictArgs),
    /// Write one explanation file per graph of a split.
    Explain(ExplainArgs),
    /// Print accuracy, fidelity, sparsity and the layer's Hamming objective.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Tu,
    Json,
    Ba2motifs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitName {
    All,
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ActivationArg {
    Sigma,
    SigmaCount,
}

#[derive(Args)]
struct DataArgs {
    /// TU dataset directory or JSON file; unused for ba2motifs.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tu")]
    format: Format,
    /// TU dataset name (file prefix); defaults to the directory name.
    #[arg(long)]
    name: Option<String>,
    /// Number of generated ba2motifs graphs.
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Seeds data generation, the split, training and explanation sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    ratios: Vec<f64>,
    /// Matcher budget per query; overrides the one stored in a model.
    #[arg(long)]
    budget: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct MiningArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    /// Layer width k.
    #[arg(long)]
    topk: Option<usize>,
    /// Fill the layer round-robin across labels.
    #[arg(long)]
    balanced: bool,
    /// Accept values outside the standard search grids.
    #[arg(long = "override")]
    allow_override: bool,
}

#[derive(Args)]
struct MineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    mining: MiningArgs,
    #[arg(long, default_value = "layer.gdl")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    mining: MiningArgs,
    #[arg(long)]
    lr: Option<f64>,
    /// Hidden layer width.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    patience: usize,
    #[arg(long, value_enum, default_value = "sigma")]
    activation: ActivationArg,
    /// Use this layer file instead of mining.
    #[arg(long)]
    layer: Option<PathBuf>,
    /// Search epsilon, k, learning rate and hidden width on the validation split.
    #[arg(long)]
    grid: bool,
    #[arg(long, default_value = "model.gdlnn")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitName,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    explain: ExplainFlags,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitName,
    /// Directory for the explanation files.
    #[arg(long, default_value = "explanations")]
    out: PathBuf,
}

#[derive(Args)]
struct ExplainFlags {
    /// Surrogate samples per graph.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Most features per explanation.
    #[arg(long, default_value_t = 10)]
    select: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    explain: ExplainFlags,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitName,
}

enum Failure {
    Config(String),
    Data(String),
    Budget(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Budget(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Budget(m) => m,
        }
    }
}

fn from_match(e: &MatchError, message: String) -> Failure {
    match e {
        MatchError::BudgetExceeded { .. } => Failure::Budget(message),
        _ => Failure::Data(message),
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::BadRatios(_) => Failure::Config(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<MiningError> for Failure {
    fn from(e: MiningError) -> Self {
        let message = e.to_string();
        match &e {
            MiningError::InvalidEpsilon(_) | MiningError::InvalidK => Failure::Config(message),
            MiningError::Match { source, .. } => from_match(source, message),
            _ => Failure::Data(message),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let message = e.to_string();
        match e {
            ModelError::Config(_) => Failure::Config(message),
            ModelError::Match { source, .. } => from_match(&source, message),
            ModelError::Mining(m) => m.into(),
            _ => Failure::Data(message),
        }
    }
}

impl From<ExplainError> for Failure {
    fn from(e: ExplainError) -> Self {
        let message = e.to_string();
        match &e {
            ExplainError::TooFewSamples(_) => Failure::Config(message),
            ExplainError::Match { source, .. } => from_match(source, message),
            ExplainError::LengthMismatch { .. } => Failure::Data(message),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::error!("exit={} message={:?}", f.code(), f.message());
            ExitCode::from(f.code())
        }
    }
}

fn init_logging(verbose: bool) {
    let default = if verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format(|buf, record| writeln!(buf, "level={} {}", record.level().as_str().to_lowercase(), record.args()))
        .init();
}

fn run(command: Command) -> Result<()> {
    let data = match &command {
        Command::Mine(a) => &a.data,
        Command::Train(a) => &a.data,
        Command::Predict(a) => &a.data,
        Command::Explain(a) => &a.data,
        Command::Eval(a) => &a.data,
    };
    if let Some(jobs) = data.jobs {
        if jobs == 0 {
            return Err(Failure::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    match command {
        Command::Mine(a) => cmd_mine(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

/// A loaded dataset with its split applied.
struct Loaded {
    ds: Dataset,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

impl Loaded {
    fn indices(&self, split: SplitName) -> Vec<usize> {
        match split {
            SplitName::All => (0..self.ds.len()).collect(),
            SplitName::Train => self.train.clone(),
            SplitName::Val => self.val.clone(),
            SplitName::Test => self.test.clone(),
        }
    }

    fn training_set(&self) -> Result<TrainingSet> {
        Ok(TrainingSet::from_labeled(self.ds.select(&self.train))?)
    }

    fn labelled(&self, indices: &[usize]) -> Result<Vec<(Graph, Label)>> {
        indices
            .iter()
            .map(|&i| {
                let g = self.ds.graphs()[i].clone();
                let y = g.label().ok_or_else(|| Failure::Data(format!("graph {i} has no label")))?;
                Ok((g, y))
            })
            .collect()
    }
}

fn load(args: &DataArgs) -> Result<Loaded> {
    let path = || {
        args.data
            .clone()
            .ok_or_else(|| Failure::Config("--data is required for this format".into()))
    };
    let ds = match args.format {
        Format::Ba2motifs => data::generate_ba2motifs(args.count, args.seed),
        Format::Json => data::load_json(path()?)?,
        Format::Tu => {
            let dir = path()?;
            let name = match &args.name {
                Some(n) => n.clone(),
                None => dir
                    .file_name()
                    .and_then(|n| n.to_str())
                    .map(str::to_string)
                    .ok_or_else(|| Failure::Config("cannot infer the dataset name, pass --name".into()))?,
            };
            data::load_tu(&dir, &name)?
        }
    };
    let ratios: [f64; 3] = args.ratios.clone().try_into().map_err(|_| Failure::Config("--ratios needs three values".into()))?;
    let ds = data::split(ds, &SplitConfig { ratios, seed: args.seed })?;
    let s = ds.splits().expect("split assigns splits").clone();
    log::info!(
        "event=loaded dataset={} graphs={} train={} val={} test={}",
        ds.name(),
        ds.len(),
        s.train.len(),
        s.val.len(),
        s.test.len()
    );
    Ok(Loaded {
        train: s.train,
        val: s.val,
        test: s.test,
        ds,
    })
}

fn mining_config(args: &MiningArgs, data: &DataArgs, n: usize) -> Result<MiningConfig> {
    let defaults = MiningConfig::default();
    let cfg = MiningConfig {
        epsilon: args.epsilon.unwrap_or(defaults.epsilon),
        k: args.topk.unwrap_or_else(|| mining::default_k(n)),
        match_budget: data.budget.unwrap_or(DEFAULT_BUDGET),
        seed: data.seed,
        balanced: args.balanced,
    };
    cfg.validate()?;
    if !args.allow_override {
        if !mining::epsilon_grid(n).iter().any(|e| (e - cfg.epsilon).abs() < 1e-12) {
            return Err(Failure::Config(format!(
                "epsilon {} is not in {:?}; pass --override to use it anyway",
                cfg.epsilon,
                mining::epsilon_grid(n)
            )));
        }
        if !mining::k_grid(n).contains(&cfg.k) {
            return Err(Failure::Config(format!(
                "k {} is not in {:?}; pass --override to use it anyway",
                cfg.k,
                mining::k_grid(n)
            )));
        }
    }
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path, budget: Option<u64>) -> Result<Model> {
    let mut m = Model::load(path)?;
    if let Some(b) = budget {
        m = m.with_budget(b);
    }
    log::info!("event=model_loaded path={} programs={} labels={:?}", path.display(), m.width(), m.labels());
    Ok(m)
}

fn cmd_mine(a: MineArgs) -> Result<()> {
    let loaded = load(&a.data)?;
    let d = loaded.training_set()?;
    let cfg = mining_config(&a.mining, &a.data, d.len())?;
    let report = mining::learn_with_report(&d, &cfg)?;
    log::info!(
        "event=mined graphs={} distinct={} kept={} budget_exceeded={}",
        report.mined,
        report.distinct,
        report.programs.len(),
        report.budget_exceeded
    );
    let layer = Layer {
        k: cfg.k,
        epsilon: cfg.epsilon,
        programs: report.programs,
    };
    write_file(&a.out, &layer.to_text())?;
    println!("program\tlabel\tscore\tmatched_same\tmatched_total\tdescriptions");
    for (i, sp) in layer.programs.iter().enumerate() {
        println!(
            "{i}\t{}\t{:.6}\t{}\t{}\t{}",
            sp.label,
            sp.score,
            sp.matched_same,
            sp.matched_total,
            sp.program.len()
        );
    }
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: a.lr.unwrap_or(defaults.learning_rate),
        hidden: a.hidden.unwrap_or(defaults.hidden),
        weight_decay: a.weight_decay.unwrap_or(defaults.weight_decay),
        max_epochs: a.epochs,
        patience: a.patience,
        seed: a.data.seed,
        ..defaults
    };
    cfg.validate(a.mining.allow_override)?;
    Ok(cfg)
}

/// Learning rate and hidden width combinations, the rest from `base`.
fn train_grid(base: &TrainConfig) -> Vec<TrainConfig> {
    let mut out = Vec::new();
    for &learning_rate in &model::LEARNING_RATES {
        for &hidden in &model::HIDDEN_DIMS {
            out.push(TrainConfig {
                learning_rate,
                hidden,
                ..base.clone()
            });
        }
    }
    out
}

fn accuracy(m: &Model, data: &[(Graph, Label)]) -> Result<Option<f64>> {
    if data.is_empty() {
        return Ok(None);
    }
    let graphs: Vec<Graph> = data.iter().map(|(g, _)| g.clone()).collect();
    let preds = m.predict_all(&graphs)?;
    let hits = preds.iter().zip(data).filter(|(p, (_, y))| p.label == *y).count();
    Ok(Some(hits as f64 / data.len() as f64))
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let loaded = load(&a.data)?;
    let d = loaded.training_set()?;
    let val = loaded.labelled(&loaded.val)?;
    let test = loaded.labelled(&loaded.test)?;
    let cfg = train_config(&a)?;
    let activation = match a.activation {
        ActivationArg::Sigma => Activation::Sigma,
        ActivationArg::SigmaCount => Activation::SigmaCount,
    };

    let model = if let Some(path) = &a.layer {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        let layer = Layer::parse(&text)?;
        log::info!("event=layer_loaded path={} programs={}", path.display(), layer.programs.len());
        if a.grid {
            let mut best: Option<(f64, Model)> = None;
            for c in train_grid(&cfg) {
                let (m, t) = model::fit_layer(layer.clone(), &d, &val, &c, activation, a.data.budget.unwrap_or(DEFAULT_BUDGET))?;
                let acc = t.val_accuracy.unwrap_or(t.train_accuracy);
                if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                    best = Some((acc, m));
                }
            }
            best.expect("grid is non-empty").1
        } else {
            model::fit_layer(layer, &d, &val, &cfg, activation, a.data.budget.unwrap_or(DEFAULT_BUDGET))?.0
        }
    } else if a.grid {
        let mining = mining_config(&a.mining, &a.data, d.len())?;
        let spec = GridSpec {
            epsilons: a.mining.epsilon.map_or_else(|| mining::epsilon_grid(d.len()), |e| vec![e]),
            ks: a.mining.topk.map_or_else(|| mining::k_grid(d.len()), |k| vec![k]),
            train: train_grid(&cfg),
            mining,
            activation,
        };
        let (m, report) = model::grid_fit(&d, &val, &spec)?;
        log::info!(
            "event=grid_done trials={} epsilon={:?} k={} lr={} hidden={}",
            report.trials,
            report.epsilon,
            report.k,
            report.train.learning_rate,
            report.train.hidden
        );
        m
    } else {
        let mining = mining_config(&a.mining, &a.data, d.len())?;
        let (m, report) = model::fit(&d, &val, &mining, &cfg, activation)?;
        log::info!(
            "event=mined graphs={} distinct={} kept={} budget_exceeded={}",
            report.learn.mined,
            report.learn.distinct,
            report.learn.programs.len(),
            report.learn.budget_exceeded
        );
        log::info!("event=trained best_epoch={} epochs_run={}", report.train.best_epoch, report.train.epochs_run);
        m
    };
    model.save(&a.out)?;
    log::info!("event=model_saved path={}", a.out.display());

    let train_pairs: Vec<(Graph, Label)> = d.graphs().iter().cloned().zip(d.labels().iter().copied()).collect();
    println!("metric\tvalue");
    println!("programs\t{}", model.width());
    println!("epsilon\t{:?}", model.layer().epsilon);
    println!("train_accuracy\t{}", fmt_metric(accuracy(&model, &train_pairs)?));
    println!("val_accuracy\t{}", fmt_metric(accuracy(&model, &val)?));
    println!("test_accuracy\t{}", fmt_metric(accuracy(&model, &test)?));
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let loaded = load(&a.data)?;
    let model = load_model(&a.model, a.data.budget)?;
    let indices = loaded.indices(a.split);
    let graphs = loaded.ds.select(&indices);
    let preds = model.predict_all(&graphs)?;
    println!("graph\tpredicted\tlabel");
    for ((i, g), p) in indices.iter().zip(&graphs).zip(&preds) {
        let truth = g.label().map_or_else(|| "-".to_string(), |y| y.to_string());
        println!("{i}\t{}\t{truth}", p.label);
    }
    Ok(())
}

fn explain_config(f: &ExplainFlags, seed: u64) -> ExplainConfig {
    ExplainConfig {
        samples: f.samples,
        select: f.select,
        seed,
    }
}

fn cmd_explain(a: ExplainArgs) -> Result<()> {
    let loaded = load(&a.data)?;
    let model = load_model(&a.model, a.data.budget)?;
    let indices = loaded.indices(a.split);
    let graphs = loaded.ds.select(&indices);
    let explanations = explain::explain_all(&graphs, &model, &explain_config(&a.explain, a.data.seed))?;
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Data(format!("{}: {e}", a.out.display())))?;
    println!("graph\tpredicted\tselected\tkept\tnodes\tfile");
    for ((i, g), e) in indices.iter().zip(&graphs).zip(&explanations) {
        let name = format!("graph_{i}");
        let path = a.out.join(format!("{name}.txt"));
        write_file(&path, &explain::render_explanation(&name, g, &model, e))?;
        println!(
            "{i}\t{}\t{}\t{}\t{}\t{}",
            e.prediction.label,
            e.importance.selected.len(),
            e.subgraph.kept.len(),
            g.node_count(),
            path.display()
        );
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let loaded = load(&a.data)?;
    let model = load_model(&a.model, a.data.budget)?;
    let indices = loaded.indices(a.split);
    let data = loaded.labelled(&indices)?;
    let graphs: Vec<Graph> = data.iter().map(|(g, _)| g.clone()).collect();
    let explanations = explain::explain_all(&graphs, &model, &explain_config(&a.explain, a.data.seed))?;
    let subgraphs: Vec<_> = explanations.into_iter().map(|e| e.subgraph).collect();
    let violations = explain::contract_violations(&graphs, &model, &subgraphs)?;
    let fidelity = explain::fidelity(&model, &data, &subgraphs)?;
    let sparsity = explain::sparsity(&graphs, &subgraphs)?;
    let programs: Vec<_> = model.programs().cloned().collect();
    let hamming = mining::hamming_objective(&programs, &loaded.training_set()?);

    println!("metric\tvalue");
    println!("graphs\t{}", data.len());
    println!("accuracy\t{}", fmt_metric(accuracy(&model, &data)?));
    println!("fidelity\t{fidelity:.6}");
    println!("sparsity\t{sparsity:.6}");
    println!("contract_violations\t{violations}");
    println!(
        "hamming_objective\t{:.6}{}",
        hamming.value,
        if hamming.degenerate { " (degenerate)" } else { "" }
    );
    Ok(())
}
