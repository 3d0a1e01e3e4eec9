//! Benchmark harness CLI: validate programs, run corpora against fixture
//! backends, recompute reports from trace logs, and sweep the synthetic
//! benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use exovip::backends::mock::{MockBackend, MockFixtures};
use exovip::backends::BackendSuite;
use exovip::harness::bench::{run_benchmark, RunConfig};
use exovip::harness::corpus::Corpus;
use exovip::harness::report::score_distribution_report;
use exovip::harness::simulate::{ablation_table, correlation_study, SimConfig};
use exovip::harness::{demo, TaskKind};
use exovip::runtime::registry::{ModuleRegistry, BUILTIN_REGISTRY_JSON};
use exovip::runtime::value::ValueTag;
use exovip::verification::NegativeVocabulary;

#[derive(Parser)]
#[command(name = "exovip", version, about = "Verified compositional visual reasoning harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a program file against the module registry.
    Validate(ValidateArgs),
    /// Run a corpus against fixture backends and write metrics + traces.
    Run(RunArgs),
    /// Recompute score-distribution reports from saved trace logs.
    Report(ReportArgs),
    /// Sweep the synthetic benchmark: ablation table and correlation study.
    Simulate(SimulateArgs),
    /// Write the bundled demo corpus, fixtures, and configs to a directory.
    Demo(DemoArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// Program file, one `OUT=OP(arg=value,...)` step per line.
    program: PathBuf,
    /// Registry JSON; defaults to the built-in module set.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Input names assumed bound before step one.
    #[arg(long, default_value = "IMAGE")]
    inputs: String,
}

#[derive(Args)]
struct RunArgs {
    /// JSON-lines corpus, one task instance per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Mock fixture tables (JSON).
    #[arg(long)]
    fixtures: PathBuf,
    /// Run configuration (ablation flags, search parameters).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Negative vocabulary for opposite sampling.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Output directory for metrics.json, timings.json, and traces/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory of trace logs to report on.
    #[arg(long)]
    trace_dir: PathBuf,
    /// Second directory to compare against (e.g. tree search disabled).
    #[arg(long)]
    baseline_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    bins: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 60)]
    instances: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Verifier signal strength for the ablation table.
    #[arg(long, default_value_t = 0.7)]
    strength: f64,
    /// Strengths swept by the correlation study.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.3, 0.7, 1.0])]
    sweep: Vec<f64>,
    /// Write the rows as JSON to this file as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    /// Directory the demo files are written into.
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

fn load_registry(path: Option<&Path>) -> Result<ModuleRegistry, String> {
    match path {
        Some(p) => ModuleRegistry::from_file(p).map_err(|e| e.to_string()),
        None => Ok(ModuleRegistry::builtin()),
    }
}

fn validate(args: &ValidateArgs) -> Result<(), String> {
    let text = std::fs::read_to_string(&args.program)
        .map_err(|e| format!("{}: {e}", args.program.display()))?;
    let registry = load_registry(args.registry.as_deref())?;
    let program = exovip::parse_program(&text).map_err(|e| e.to_string())?;
    let inputs: Vec<(&str, ValueTag)> = args
        .inputs
        .split(',')
        .map(|name| (name.trim(), ValueTag::Image))
        .collect();
    let report = exovip::validate(&program, &registry, &inputs);
    if report.is_clean() {
        println!("ok: {} steps", program.steps().len());
        Ok(())
    } else {
        for v in &report.violations {
            println!("line {}: {:?}", v.line, v.kind);
        }
        Err(format!("{} violation(s)", report.violations.len()))
    }
}

fn run(args: &RunArgs) -> Result<(), String> {
    let corpus = Corpus::from_file(&args.corpus).map_err(|e| e.to_string())?;
    let fixtures = MockFixtures::from_file(&args.fixtures).map_err(|e| e.to_string())?;
    let registry = load_registry(args.registry.as_deref())?;
    let vocab = match &args.vocab {
        Some(p) => NegativeVocabulary::from_file(p).map_err(|e| e.to_string())?,
        None => NegativeVocabulary::default(),
    };
    let cfg = match &args.config {
        Some(p) => RunConfig::from_file(p).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    let suite: BackendSuite = MockBackend::suite(fixtures);
    suite.health_check().map_err(|e| e.to_string())?;

    std::fs::create_dir_all(&args.out).map_err(|e| e.to_string())?;
    let trace_dir = args.out.join("traces");
    let (metrics, timings) =
        run_benchmark(&corpus, &cfg, &registry, &suite, &vocab, Some(&trace_dir))
            .map_err(|e| e.to_string())?;

    std::fs::write(args.out.join("metrics.json"), metrics.to_json())
        .map_err(|e| e.to_string())?;
    std::fs::write(
        args.out.join("timings.json"),
        serde_json::to_string_pretty(&timings).unwrap(),
    )
    .map_err(|e| e.to_string())?;

    println!("config            {}", metrics.config);
    println!("instances         {}", metrics.n_instances);
    if let Some(a) = metrics.accuracy {
        println!("accuracy          {a:.4}");
    }
    if let Some(i) = metrics.mean_iou {
        println!("mean IoU          {i:.4}");
    }
    if let Some(h) = metrics.interval_hit_rate {
        println!("interval hit rate {h:.4}");
    }
    println!("mean plan steps   {:.2}", metrics.mean_plan_steps);
    println!("unexecutable rate {:.4}", metrics.unexecutable_rate);
    println!("mean trace score  {:.4}", metrics.mean_trace_score);
    println!("total {:.1} ms (planning {:.1} ms)", timings.total_ms, timings.planning_ms);
    Ok(())
}

fn report(args: &ReportArgs) -> Result<(), String> {
    let rep = score_distribution_report(&args.trace_dir, args.baseline_dir.as_deref(), args.bins)
        .map_err(|e| e.to_string())?;
    println!("trace-score distribution ({})", args.trace_dir.display());
    print!("{}", rep.primary.render());
    if let (Some(baseline), Some(dir)) = (&rep.baseline, &args.baseline_dir) {
        println!("\nbaseline ({})", dir.display());
        print!("{}", baseline.render());
        println!("\nmean shift: {:+.4}", rep.mean_shift.unwrap_or(0.0));
    }
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<(), String> {
    let cfg = SimConfig {
        n_instances: args.instances,
        seed: args.seed,
        strength: args.strength,
        ..Default::default()
    };
    let table = ablation_table(&cfg).map_err(|e| e.to_string())?;
    println!("ablation (n={}, strength={}, seed={})", args.instances, args.strength, args.seed);
    for (label, acc) in &table {
        println!("  {label:<24} accuracy {acc:.4}");
    }

    let rows = correlation_study(args.instances, args.seed, &args.sweep)
        .map_err(|e| e.to_string())?;
    println!("\ncorrelation study (passive scoring)");
    for row in &rows {
        let rho = row
            .spearman
            .map(|r| format!("{r:+.4}"))
            .unwrap_or_else(|| "n/a".into());
        println!(
            "  strength {:<4} accuracy {:.4} mean score {:+.4} spearman {rho}",
            row.strength, row.accuracy, row.mean_score
        );
    }
    if let Some(out) = &args.out {
        let blob = serde_json::json!({ "ablation": table, "correlation": rows });
        std::fs::write(out, serde_json::to_string_pretty(&blob).unwrap())
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn write_demo(args: &DemoArgs) -> Result<(), String> {
    let world = demo::demo_world();
    let dir = &args.out;
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let write = |name: &str, text: String| {
        std::fs::write(dir.join(name), text).map_err(|e| format!("{name}: {e}"))
    };
    write("corpus.jsonl", world.corpus.to_jsonl() + "\n")?;
    write(
        "fixtures.json",
        serde_json::to_string_pretty(&world.fixtures).unwrap(),
    )?;
    write("vocab.json", serde_json::to_string_pretty(&world.vocab).unwrap())?;
    write(
        "registry.json",
        serde_json::to_string_pretty(&world.registry).unwrap(),
    )?;
    write(
        "config.json",
        serde_json::to_string_pretty(&RunConfig::default()).unwrap(),
    )?;
    // Registry as shipped, for operators starting from the full verifier mix.
    write("registry.builtin.json", BUILTIN_REGISTRY_JSON.to_string())?;
    let kinds: Vec<TaskKind> = world.corpus.instances.iter().map(|i| i.kind).collect();
    println!("wrote demo files to {} ({} instances: {kinds:?})", dir.display(), kinds.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(args) => validate(args),
        Command::Run(args) => run(args),
        Command::Report(args) => report(args),
        Command::Simulate(args) => simulate(args),
        Command::Demo(args) => write_demo(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
