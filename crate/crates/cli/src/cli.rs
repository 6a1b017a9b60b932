//! Command-line interface.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use catbn::data::{generate_synthetic, load_csv, synthetic_truth, to_boolean, Dataset};
use catbn::evaluation::{cross_validate, emit_report, train_model, EvalConfig};
use catbn::learning::EmConfig;
use catbn::session::{Session, TerminationRule};
use catbn::zoo::{ModelId, TestBlueprint};
use catbn::{Evidence, InferenceEngine, Network, Role, Scale};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::FileConfig;
use crate::server::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "catbn", version, about = "Adaptive testing with Bayesian-network student models")]
pub struct Cli {
    /// TOML settings file (lowest precedence, below CATBN_* variables and flags)
    #[arg(long, global = true, env = "CATBN_CONFIG", hide_env_values = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic dataset from a ground-truth network
    Generate(GenerateArgs),
    /// Fit a model to a dataset by EM and save the network as JSON
    Train(TrainArgs),
    /// Cross-validate models and write success-ratio, occurrence and sparsity reports
    Evaluate(EvaluateArgs),
    /// Run one adaptive test and print its transcript as JSON lines
    Simulate(SimulateArgs),
    /// Serve adaptive sessions over HTTP
    Serve(ServeArgs),
    /// Write the built-in reference blueprint as JSON
    Blueprint(BlueprintArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataScale {
    /// Boolean when every recorded cell is 0 or 1, points otherwise
    Auto,
    Points,
    Boolean,
}

#[derive(Debug, Args)]
pub struct BlueprintOpt {
    /// Test blueprint JSON [default: built-in reference test]
    #[arg(long, env = "CATBN_BLUEPRINT", hide_env_values = true)]
    pub blueprint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeedOpt {
    /// Random seed [default: 0]
    #[arg(long, env = "CATBN_SEED", hide_env_values = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EmOpts {
    /// Maximum EM iterations [default: 100]
    #[arg(long, env = "CATBN_EM_MAX_ITERATIONS", hide_env_values = true)]
    pub em_max_iterations: Option<usize>,
    /// EM stops when the log-likelihood changes by less than this [default: 1e-4]
    #[arg(long, env = "CATBN_EM_TOLERANCE", hide_env_values = true)]
    pub em_tolerance: Option<f64>,
    /// Dirichlet pseudocount added to every CPT entry [default: 0]
    #[arg(long, env = "CATBN_PSEUDOCOUNT", hide_env_values = true)]
    pub pseudocount: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output dataset CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Model whose structure the ground truth takes
    #[arg(long, default_value = "b3", conflicts_with = "truth")]
    pub truth_model: ModelId,
    /// Ground-truth network JSON instead of a generated one
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Number of students
    #[arg(long, default_value_t = 300)]
    pub students: usize,
    /// Also write the sampled latent states (1-based) as CSV
    #[arg(long)]
    pub latent_out: Option<PathBuf>,
    /// Also write the ground-truth network JSON
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
    #[command(flatten)]
    pub blueprint: BlueprintOpt,
    #[command(flatten)]
    pub seed: SeedOpt,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model to fit
    #[arg(long)]
    pub model: ModelId,
    /// Dataset CSV
    #[arg(long)]
    pub data: PathBuf,
    /// Grading scale of the dataset
    #[arg(long, value_enum, default_value_t = DataScale::Auto)]
    pub data_scale: DataScale,
    /// Output network JSON [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the log-likelihood trace as CSV
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[command(flatten)]
    pub blueprint: BlueprintOpt,
    #[command(flatten)]
    pub seed: SeedOpt,
    #[command(flatten)]
    pub em: EmOpts,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset CSV
    #[arg(long)]
    pub data: PathBuf,
    /// Grading scale of the dataset
    #[arg(long, value_enum, default_value_t = DataScale::Auto)]
    pub data_scale: DataScale,
    /// Comma-separated model ids [default: b2,b3]
    #[arg(long, env = "CATBN_MODELS", hide_env_values = true, value_delimiter = ',')]
    pub models: Option<Vec<ModelId>>,
    /// Number of cross-validation folds [default: 10]
    #[arg(long, env = "CATBN_FOLDS", hide_env_values = true)]
    pub folds: Option<usize>,
    /// Questions per simulated test [default: all]
    #[arg(long, env = "CATBN_MAX_STEPS", hide_env_values = true)]
    pub max_steps: Option<usize>,
    /// Directory for cached fold networks
    #[arg(long, env = "CATBN_CACHE_DIR", hide_env_values = true)]
    pub cache_dir: Option<PathBuf>,
    /// Report directory
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub blueprint: BlueprintOpt,
    #[command(flatten)]
    pub seed: SeedOpt,
    #[command(flatten)]
    pub em: EmOpts,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Fitted network JSON
    #[arg(long)]
    pub network: PathBuf,
    /// Dataset CSV holding the student's answers
    #[arg(long, requires = "student", conflicts_with = "answers")]
    pub data: Option<PathBuf>,
    /// Student id within --data
    #[arg(long)]
    pub student: Option<String>,
    /// Answer key instead of a dataset row: id=state pairs, states 1-based
    #[arg(long, value_delimiter = ',')]
    pub answers: Vec<String>,
    /// Student information as id=state pairs, states 1-based
    #[arg(long, value_delimiter = ',')]
    pub info: Vec<String>,
    /// Grading scale of the dataset
    #[arg(long, value_enum, default_value_t = DataScale::Auto)]
    pub data_scale: DataScale,
    /// Stop after this many questions
    #[arg(long, conflicts_with = "entropy_below")]
    pub max_questions: Option<usize>,
    /// Stop once the summed skill entropy (nats) drops below this
    #[arg(long)]
    pub entropy_below: Option<f64>,
    /// Output transcript [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub blueprint: BlueprintOpt,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Fitted model as name=path.json; repeatable
    #[arg(long = "network", required = true)]
    pub networks: Vec<String>,
    /// Listen address [default: 127.0.0.1:8080]
    #[arg(long, env = "CATBN_BIND", hide_env_values = true)]
    pub bind: Option<String>,
    /// Drop sessions idle for this many seconds [default: 3600]
    #[arg(long, env = "CATBN_SESSION_TTL_SECS", hide_env_values = true)]
    pub session_ttl_secs: Option<u64>,
    /// JSON-lines session log, replayed on start
    #[arg(long, env = "CATBN_SESSION_LOG", hide_env_values = true)]
    pub session_log: Option<PathBuf>,
    #[command(flatten)]
    pub blueprint: BlueprintOpt,
}

#[derive(Debug, Args)]
pub struct BlueprintArgs {
    /// Output file [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => generate(a, &file),
        Command::Train(a) => train(a, &file),
        Command::Evaluate(a) => evaluate(a, &file),
        Command::Simulate(a) => simulate(a, &file),
        Command::Serve(a) => serve(a, &file),
        Command::Blueprint(a) => write_output(a.out.as_deref(), &(TestBlueprint::reference().to_json() + "\n")),
    }
}

fn load_blueprint(opt: &BlueprintOpt, file: &FileConfig) -> anyhow::Result<TestBlueprint> {
    match opt.blueprint.as_ref().or(file.blueprint.as_ref()) {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read blueprint {}", path.display()))?;
            let bp = TestBlueprint::from_json(&text).with_context(|| format!("invalid blueprint {}", path.display()))?;
            bp.validate().with_context(|| format!("invalid blueprint {}", path.display()))?;
            Ok(bp)
        }
        None => Ok(TestBlueprint::reference()),
    }
}

fn em_config(opts: &EmOpts, seed: &SeedOpt, file: &FileConfig) -> EmConfig {
    let d = EmConfig::default();
    EmConfig {
        max_iterations: opts.em_max_iterations.or(file.em_max_iterations).unwrap_or(d.max_iterations),
        ll_tolerance: opts.em_tolerance.or(file.em_tolerance).unwrap_or(d.ll_tolerance),
        pseudocount: opts.pseudocount.or(file.pseudocount).unwrap_or(d.pseudocount),
        seed: seed.seed.or(file.seed).unwrap_or(d.seed),
    }
}

fn seed(opt: &SeedOpt, file: &FileConfig) -> u64 {
    opt.seed.or(file.seed).unwrap_or(0)
}

/// Reads a dataset; `auto` picks Boolean when no recorded cell exceeds 1.
pub fn load_data(path: &Path, bp: &TestBlueprint, scale: DataScale) -> anyhow::Result<Dataset> {
    let scale = match scale {
        DataScale::Points => Scale::Points,
        DataScale::Boolean => Scale::Boolean,
        DataScale::Auto => {
            let ds = load_csv(path, bp, Scale::Points).with_context(|| format!("cannot load {}", path.display()))?;
            let binary = ds.records.iter().all(|r| r.answers.iter().flatten().all(|&x| x <= 1));
            if !binary || bp.questions.iter().all(|q| q.max_points <= 1) {
                return Ok(ds);
            }
            Scale::Boolean
        }
    };
    load_csv(path, bp, scale).with_context(|| format!("cannot load {}", path.display()))
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn read_network(path: &Path) -> anyhow::Result<Network> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let net = Network::from_json(&text).with_context(|| format!("invalid network {}", path.display()))?;
    net.ensure_valid().with_context(|| format!("invalid network {}", path.display()))?;
    Ok(net)
}

fn generate(a: GenerateArgs, file: &FileConfig) -> anyhow::Result<()> {
    let bp = load_blueprint(&a.blueprint, file)?;
    let seed = seed(&a.seed, file);
    let truth = match &a.truth {
        Some(path) => read_network(path)?,
        None => synthetic_truth(a.truth_model, &bp, seed)?,
    };
    let syn = generate_synthetic(&truth, &bp, a.students, seed)?;
    syn.dataset.save_csv(&a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    if let Some(p) = &a.latent_out {
        write_output(Some(p), &syn.latent.to_csv_string())?;
    }
    if let Some(p) = &a.truth_out {
        write_output(Some(p), &truth.to_json())?;
    }
    eprintln!("wrote {} students ({} scale) to {}", a.students, syn.dataset.scale, a.out.display());
    Ok(())
}

fn train(a: TrainArgs, file: &FileConfig) -> anyhow::Result<()> {
    let bp = load_blueprint(&a.blueprint, file)?;
    let ds = load_data(&a.data, &bp, a.data_scale)?;
    let em = em_config(&a.em, &a.seed, file);
    let fit = train_model(a.model, &bp, &ds, &em)?;
    write_output(a.out.as_deref(), &fit.network.to_json())?;
    if let Some(p) = &a.trace_out {
        write_output(Some(p), &fit.trace_csv())?;
    }
    eprintln!(
        "{}: {} iterations, converged: {}, log-likelihood {:.6}",
        a.model,
        fit.iterations_used,
        fit.converged,
        fit.ll_trace.last().copied().unwrap_or(0.0)
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs, file: &FileConfig) -> anyhow::Result<()> {
    let bp = load_blueprint(&a.blueprint, file)?;
    let ds = load_data(&a.data, &bp, a.data_scale)?;
    let models = match (a.models, &file.models) {
        (Some(m), _) => m,
        (None, Some(names)) => names
            .iter()
            .map(|n| n.parse::<ModelId>())
            .collect::<Result<_, _>>()
            .context("invalid model in config file")?,
        (None, None) => EvalConfig::default().models,
    };
    let cfg = EvalConfig {
        folds: a.folds.or(file.folds).unwrap_or(10),
        seed: seed(&a.seed, file),
        models,
        max_steps: a.max_steps.or(file.max_steps),
        em: em_config(&a.em, &a.seed, file),
        cache_dir: a.cache_dir.or_else(|| file.cache_dir.clone()),
    };
    let report = cross_validate(&ds, &bp, &cfg)?;
    for m in &report.models {
        if !m.is_complete() {
            eprintln!("warning: {} failed to fit on folds {:?}", m.model, m.failed_folds);
        }
        if m.contradicted_answers > 0 {
            eprintln!("note: {} skipped {} answers its fitted model ruled out", m.model, m.contradicted_answers);
        }
    }
    for path in emit_report(&report, &a.out)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn parse_pairs(pairs: &[String]) -> anyhow::Result<Vec<(String, usize)>> {
    pairs
        .iter()
        .map(|p| {
            let (id, state) = p.split_once('=').ok_or_else(|| anyhow!("expected id=state, got `{p}`"))?;
            let state: usize = state.trim().parse().with_context(|| format!("bad state in `{p}`"))?;
            Ok((id.trim().to_string(), state))
        })
        .collect()
}

fn observe_wire(net: &Network, e: &mut Evidence, id: &str, state: usize) -> anyhow::Result<usize> {
    let v = net.index_of(id)?;
    let card = net.variables[v].cardinality;
    if state == 0 || state > card {
        bail!("state {state} of `{id}` is outside 1..={card}");
    }
    e.observe(v, state - 1)?;
    Ok(v)
}

fn simulate(a: SimulateArgs, file: &FileConfig) -> anyhow::Result<()> {
    let net = read_network(&a.network)?;
    let mut key = Evidence::new();
    let mut info = Evidence::new();
    if let Some(data) = &a.data {
        let bp = load_blueprint(&a.blueprint, file)?;
        let mut ds = load_data(data, &bp, a.data_scale)?;
        let boolean = net
            .vars_with_role(Role::Question)
            .iter()
            .any(|&q| net.variables[q].scale == Some(Scale::Boolean));
        if boolean && ds.scale == Scale::Points {
            ds = to_boolean(&ds)?;
        }
        let student = a.student.as_deref().expect("clap enforces --student");
        let rec = ds
            .records
            .iter()
            .find(|r| r.student_id == student)
            .ok_or_else(|| anyhow!("no student `{student}` in {}", data.display()))?;
        for (col, id) in ds.question_ids.iter().enumerate() {
            if let (Ok(v), Some(x)) = (net.index_of(id), rec.answers[col]) {
                key.observe(v, x as usize)?;
            }
        }
        for (col, id) in ds.info_ids.iter().enumerate() {
            if let (Ok(v), Some(x)) = (net.index_of(id), rec.info[col]) {
                info.observe(v, x as usize - 1)?;
            }
        }
    } else if a.answers.is_empty() {
        bail!("either --data with --student or --answers is required");
    } else {
        for (id, state) in parse_pairs(&a.answers)? {
            let v = observe_wire(&net, &mut key, &id, state)?;
            if net.variables[v].role != Role::Question {
                bail!("`{id}` is not a question");
            }
        }
    }
    for (id, state) in parse_pairs(&a.info)? {
        info.remove(net.index_of(&id)?);
        let v = observe_wire(&net, &mut info, &id, state)?;
        if net.variables[v].role != Role::Info {
            bail!("`{id}` is not a student information variable");
        }
    }
    let termination = match (a.max_questions, a.entropy_below) {
        (Some(k), _) => TerminationRule::MaxQuestions(k),
        (None, Some(h)) => TerminationRule::EntropyBelow(h),
        (None, None) => TerminationRule::Exhaust,
    };
    let pool: Vec<usize> = key.iter().map(|(&v, _)| v).collect();
    let engine = Arc::new(InferenceEngine::new(net)?);
    let mut session = Session::with_pool(engine, info, pool, termination)?;
    while let Some(choice) = session.select_next()? {
        let answer = key.get(choice.question).expect("pool questions have answers");
        session.submit_answer(choice.question, answer)?;
    }
    write_output(a.out.as_deref(), &session.transcript_jsonl())
}

fn serve(a: ServeArgs, file: &FileConfig) -> anyhow::Result<()> {
    let mut models = BTreeMap::new();
    for spec in &a.networks {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("expected name=path for --network, got `{spec}`"))?;
        let net = read_network(Path::new(path))?;
        models.insert(name.to_string(), Arc::new(InferenceEngine::new(net)?));
    }
    let blueprint = match a.blueprint.blueprint.as_ref().or(file.blueprint.as_ref()) {
        Some(_) => Some(load_blueprint(&a.blueprint, file)?),
        None => None,
    };
    let ttl = a.session_ttl_secs.or(file.session_ttl_secs).unwrap_or(3600);
    let mut state = AppState::new(models, blueprint).with_ttl(Duration::from_secs(ttl));
    if let Some(log) = a.session_log.as_ref().or(file.session_log.as_ref()) {
        state = state.with_log(log)?;
    }
    let bind = a.bind.or_else(|| file.bind.clone()).unwrap_or_else(|| "127.0.0.1:8080".into());
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(server::serve(Arc::new(state), &bind))
}
