use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use s2g::config::{ConfigError, RunConfig};
use s2g::data::{
    build_vocab, evaluate_model, load_jsonl, synth_generate, train_test_split, DataError, Dataset,
    ProblemInstance,
};
use s2g::kg::{KgError, KnowledgeGraph};
use s2g::model::{train, Example, Model};
use s2g::optree::{format_number, FormulaRegistry, OpTree, RegistryError};

/// Exit status classes. Usage errors from argument parsing also exit with 2.
#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Exec(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Exec(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::MalformedLine { .. } => CliError::Parse(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Parse(e.to_string()),
        }
    }
}

impl From<RegistryError> for CliError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Parse(e.to_string()),
        }
    }
}

impl From<KgError> for CliError {
    fn from(e: KgError) -> Self {
        match e {
            KgError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Parse(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "s2g", version, about = "Solve math word problems with operation trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Notation {
    Prefix,
    Infix,
}

#[derive(clap::Args, Default)]
struct Sources {
    /// Formula registry JSON (built-in geometry formulas if absent).
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Knowledge graph JSON (built from the registry if absent).
    #[arg(long)]
    kg: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an equation between infix and prefix notation.
    Convert {
        equation: String,
        #[arg(long, value_enum)]
        to: Notation,
        #[command(flatten)]
        src: Sources,
    },
    /// Evaluate an infix or prefix equation.
    Exec {
        equation: String,
        /// Slot values such as `N0=300`.
        #[arg(long, num_args = 1..)]
        env: Vec<String>,
        #[command(flatten)]
        src: Sources,
    },
    /// Load a JSONL dataset and report rejected lines.
    ValidateData {
        data: PathBuf,
        /// Write the rejects report (JSONL) here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        src: Sources,
    },
    /// Generate a synthetic geometry corpus as JSONL.
    Synth {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file; standard output if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        beam: Option<usize>,
        /// Checkpoint to write.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Metrics log (JSON lines, one record per epoch and split).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        src: Sources,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
    },
    /// Solve one problem given as text.
    Solve {
        text: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
    },
    /// Print the knowledge graph as JSON.
    DumpKg {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        src: Sources,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Convert { equation, to, src } => convert(&equation, to, &src),
        Command::Exec { equation, env, src } => exec(&equation, &env, &src),
        Command::ValidateData { data, out, src } => validate_data(&data, out.as_deref(), &src),
        Command::Synth { n, seed, out } => synth(n, seed, out.as_deref()),
        Command::Train {
            config,
            data,
            seed,
            epochs,
            beam,
            checkpoint,
            out,
            src,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = beam {
                cfg.beam = v;
            }
            let paths = &mut cfg.paths;
            for (slot, flag) in [
                (&mut paths.data, data),
                (&mut paths.checkpoint, checkpoint),
                (&mut paths.metrics, out),
                (&mut paths.registry, src.registry),
                (&mut paths.kg, src.kg),
            ] {
                if flag.is_some() {
                    *slot = flag;
                }
            }
            cfg.validate()?;
            train_cmd(&cfg)
        }
        Command::Eval { checkpoint, data, beam } => eval(&checkpoint, &data, beam),
        Command::Solve { text, checkpoint, beam } => solve(&text, &checkpoint, beam),
        Command::DumpKg { out, src } => {
            let reg = registry(src.registry.as_deref())?;
            let kg = knowledge_graph(src.kg.as_deref(), &reg)?;
            emit(out.as_deref(), |w| writeln!(w, "{}", kg.to_json(&reg)))
        }
    }
}

fn registry(path: Option<&Path>) -> Result<FormulaRegistry> {
    Ok(match path {
        Some(p) => FormulaRegistry::load(p)?,
        None => FormulaRegistry::default_geometry(),
    })
}

fn knowledge_graph(path: Option<&Path>, reg: &FormulaRegistry) -> Result<KnowledgeGraph> {
    Ok(match path {
        Some(p) => KnowledgeGraph::load(p, reg)?,
        None => KnowledgeGraph::default_for(reg),
    })
}

/// Runs `f` on the file at `path`, or on standard output.
fn emit(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(|e| io_at(p, e))?);
            f(&mut w)?;
            w.flush()?;
        }
        None => f(&mut io::stdout().lock())?,
    }
    Ok(())
}

fn io_at(path: &Path, e: io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Values print rounded to 10 decimals so `50.239999999999995` reads `50.24`.
fn show(v: f64) -> String {
    let s = format!("{v:.10}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Infix first; whitespace-separated prefix tokens if infix fails.
fn parse_any(text: &str, reg: &FormulaRegistry) -> Result<OpTree> {
    if text.trim().is_empty() {
        return Err(CliError::Parse("empty equation".into()));
    }
    OpTree::parse_infix(text, reg).or_else(|infix_err| {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        OpTree::from_prefix(&tokens, reg).map_err(|_| CliError::Parse(infix_err.to_string()))
    })
}

fn convert(equation: &str, to: Notation, src: &Sources) -> Result<()> {
    let reg = registry(src.registry.as_deref())?;
    if equation.trim().is_empty() {
        return Err(CliError::Parse("empty equation".into()));
    }
    let out = match to {
        Notation::Prefix => OpTree::parse_infix(equation, &reg)
            .map_err(|e| CliError::Parse(e.to_string()))?
            .to_prefix(&reg)
            .join(" "),
        Notation::Infix => {
            let tokens: Vec<&str> = equation.split_whitespace().collect();
            OpTree::from_prefix(&tokens, &reg)
                .map_err(|e| CliError::Parse(e.to_string()))?
                .to_infix(&reg)
        }
    };
    println!("{out}");
    Ok(())
}

/// Parses `N3=2.5` (or `<N3>=2.5`) into `(3, 2.5)`.
fn parse_binding(s: &str) -> Result<(usize, f64)> {
    let bad = || CliError::Parse(format!("bad --env entry `{s}`, expected N<i>=<value>"));
    let (name, value) = s.split_once('=').ok_or_else(bad)?;
    let name = name.trim().trim_start_matches('<').trim_end_matches('>');
    let index = name.strip_prefix('N').and_then(|d| d.parse().ok()).ok_or_else(bad)?;
    let value = value.trim().parse().map_err(|_| bad())?;
    Ok((index, value))
}

fn exec(equation: &str, env: &[String], src: &Sources) -> Result<()> {
    let reg = registry(src.registry.as_deref())?;
    let tree = parse_any(equation, &reg)?;
    let bindings = env.iter().map(|s| parse_binding(s)).collect::<Result<Vec<_>>>()?;
    let n = bindings.iter().map(|(i, _)| i + 1).max().unwrap_or(0);
    let mut values = vec![f64::NAN; n];
    let mut bound = vec![false; n];
    for (i, v) in bindings {
        values[i] = v;
        bound[i] = true;
    }
    if let Some(missing) = tree.slots().into_iter().find(|&s| !bound.get(s).copied().unwrap_or(false)) {
        return Err(CliError::Exec(format!("number slot <N{missing}> has no value")));
    }
    let v = tree.evaluate(&reg, &values).map_err(|e| CliError::Exec(e.to_string()))?;
    println!("{}", show(v));
    Ok(())
}

fn validate_data(path: &Path, out: Option<&Path>, src: &Sources) -> Result<()> {
    let reg = registry(src.registry.as_deref())?;
    let ds = load_jsonl(path, &reg, RunConfig::default().max_slots)?;
    println!("accepted {}", ds.len());
    println!("rejected {}", ds.rejects.len());
    for (class, count) in ds.class_counts() {
        println!("class {} {count}", class.name());
    }
    for r in &ds.rejects {
        eprintln!("reject {}: {}", r.id, r.reason);
    }
    if let Some(p) = out {
        emit(Some(p), |w| ds.write_rejects(w))?;
    }
    if ds.rejects.is_empty() {
        Ok(())
    } else {
        Err(CliError::Parse(format!("{} rejected lines", ds.rejects.len())))
    }
}

fn synth(n: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    if n == 0 {
        return Err(CliError::Parse("--n must be at least 1".into()));
    }
    let reg = FormulaRegistry::default_geometry();
    let ds = synth_generate(n, seed, &reg, RunConfig::default().max_slots);
    emit(out, |w| ds.dump(&reg, w))
}

fn examples(set: &[ProblemInstance], model: &Model) -> Result<Vec<Example>> {
    set.iter()
        .map(|i| i.example(model).map_err(|e| CliError::Parse(format!("{}: {e}", i.id))))
        .collect()
}

fn load_checked(path: &Path, reg: &FormulaRegistry, max_slots: usize) -> Result<Dataset> {
    let ds = load_jsonl(path, reg, max_slots)?;
    if !ds.rejects.is_empty() {
        eprintln!("{}: skipping {} rejected lines", path.display(), ds.rejects.len());
    }
    Ok(ds)
}

fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let reg = registry(cfg.paths.registry.as_deref())?;
    let kg = knowledge_graph(cfg.paths.kg.as_deref(), &reg)?;
    let data = cfg
        .paths
        .data
        .as_deref()
        .ok_or_else(|| CliError::Parse("no training data: pass --data or set paths.data".into()))?;
    let ds = load_checked(data, &reg, cfg.max_slots)?;
    let (train_set, dev_set): (Vec<ProblemInstance>, Vec<ProblemInstance>) = match &cfg.paths.dev {
        Some(dev) => (ds.instances, load_checked(dev, &reg, cfg.max_slots)?.instances),
        None => {
            let (tr, te) = train_test_split(ds.len(), cfg.dev_fraction, cfg.seed);
            let pick = |idx: &[usize]| idx.iter().map(|&i| ds.instances[i].clone()).collect();
            (pick(&tr), pick(&te))
        }
    };
    if train_set.is_empty() {
        return Err(CliError::Parse("training split is empty".into()));
    }
    let vocab = build_vocab(&train_set, cfg.min_freq);
    let mut model = Model::new(cfg.model_config(), reg, kg, vocab, cfg.seed)
        .map_err(|e| CliError::Exec(e.to_string()))?;
    let tr = examples(&train_set, &model)?;
    let dv = examples(&dev_set, &model)?;
    let mut log: Option<BufWriter<File>> = match &cfg.paths.metrics {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| io_at(p, e))?)),
        None => None,
    };
    let mut log_err = None;
    train(&mut model, &tr, &dv, &cfg.train_config(), |rec| {
        let line = serde_json::to_string(rec).expect("plain data");
        eprintln!("{line}");
        if let Some(w) = log.as_mut() {
            if let Err(e) = writeln!(w, "{line}") {
                log_err.get_or_insert(e);
            }
        }
    })
    .map_err(|e| CliError::Exec(e.to_string()))?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    let ckpt = cfg.paths.checkpoint.clone().unwrap_or_else(|| PathBuf::from("s2g.ckpt"));
    let extra = serde_json::json!({ "run_config": cfg });
    model
        .save(&ckpt, cfg.seed, extra)
        .map_err(|e| io_at(&ckpt, io::Error::other(e.to_string())))?;
    eprintln!("checkpoint written to {}", ckpt.display());
    if !dev_set.is_empty() {
        let m = evaluate_model(&model, &dev_set, cfg.beam);
        println!("{}", serde_json::to_string_pretty(&m).expect("plain data"));
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path)
        .map(|(m, _)| m)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn eval(checkpoint: &Path, data: &Path, beam: usize) -> Result<()> {
    let model = load_model(checkpoint)?;
    let ds = load_checked(data, &model.registry, model.config.max_slots)?;
    let m = evaluate_model(&model, &ds.instances, beam);
    println!("{}", serde_json::to_string_pretty(&m).expect("plain data"));
    Ok(())
}

fn solve(text: &str, checkpoint: &Path, beam: usize) -> Result<()> {
    let model = load_model(checkpoint)?;
    let reg = &model.registry;
    let sol = model.solve(text, beam).map_err(|e| CliError::Exec(e.to_string()))?;
    let values = sol.slots.values();
    println!("{}", sol.tree.render(reg, Some(&values)).trim_end());
    println!(
        "expanded: {}",
        sol.tree.expand_formulas(reg).to_infix_with(reg, &|i| format_number(values[i]))
    );
    match sol.value {
        Ok(v) => {
            println!("answer: {}", show(v));
            Ok(())
        }
        Err(e) => Err(CliError::Exec(e.to_string())),
    }
}
