use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use encoms_core::target_sim::{CostModel, Spike, Variant, WorkloadLevel, WorkloadProfile};
use encoms_harness::analysis::{analyze_variants, load_variant};
use encoms_harness::experiment::{run_experiment, ExperimentConfig, Scenario};
use encoms_harness::external::import_external;
use encoms_harness::report::{render_report, OutputFormat};
use encoms_harness::HarnessError;
use encoms_monitor::{run_monitor, MonitorConfig};
use log::info;

#[derive(Parser)]
#[command(
    name = "encoms",
    version,
    about = "Energy monitoring for self-adaptive services"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the measurement protocol against the simulated target.
    Run(RunArgs),
    /// Compute statistics over one or more run directories.
    Analyze(AnalyzeArgs),
    /// Start the energy monitor and its HTTP endpoints.
    Serve(ServeArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// NOADAPT, ADAPT or ORIGINAL.
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    iterations: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Experiment configuration file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// low, medium or high.
    #[arg(long)]
    workload: Option<String>,
    /// Rule preset name or rule file path.
    #[arg(long)]
    preset: Option<String>,
    /// Name of the variant in reports.
    #[arg(long)]
    label: Option<String>,
    /// Run this recommender in every mode (DEA, SO, OB, POP or PSO).
    #[arg(long)]
    variant: Option<String>,
    /// Item count of the recommender cost model.
    #[arg(long)]
    items: Option<u32>,
    #[arg(long)]
    warmup_s: Option<u32>,
    #[arg(long)]
    monitor_s: Option<u32>,
    /// Extra load burst as start_s:duration_s:factor; repeatable.
    #[arg(long = "spike")]
    spikes: Vec<String>,
}

#[derive(clap::Args)]
struct AnalyzeArgs {
    #[arg(long, num_args = 1.., required_unless_present = "import_external")]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    baseline: String,
    /// text, csv or json.
    #[arg(long, default_value = "text")]
    format: OutputFormat,
    /// Externally recorded dataset to analyze alongside the inputs.
    #[arg(long)]
    import_external: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured listen address.
    #[arg(long)]
    listen: Option<String>,
}

fn parse_spike(s: &str) -> Result<Spike, HarnessError> {
    let bad =
        || HarnessError::InvalidConfig(format!("spike `{s}` is not start_s:duration_s:factor"));
    let parts: Vec<&str> = s.split(':').collect();
    let [start, duration, factor] = parts.as_slice() else {
        return Err(bad());
    };
    Ok(Spike {
        start_s: start.parse().map_err(|_| bad())?,
        duration_s: duration.parse().map_err(|_| bad())?,
        factor: factor.parse().map_err(|_| bad())?,
    })
}

fn experiment_config(args: RunArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.output_dir = args.out;
    if let Some(s) = args.scenario {
        cfg.scenario = s;
    }
    if let Some(n) = args.iterations {
        cfg.iterations = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = args.warmup_s {
        cfg.warmup_s = w;
    }
    if let Some(m) = args.monitor_s {
        cfg.monitor_s = m;
    }
    if let Some(p) = args.preset {
        cfg.rule_preset = p;
    }
    if let Some(l) = args.label {
        cfg.label = Some(l);
    }
    if let Some(w) = args.workload {
        let level = match w.to_ascii_lowercase().as_str() {
            "low" => WorkloadLevel::Low,
            "medium" => WorkloadLevel::Medium,
            "high" => WorkloadLevel::High,
            _ => {
                return Err(HarnessError::InvalidConfig(format!(
                    "unknown workload `{w}`"
                )))
            }
        };
        cfg.workload = WorkloadProfile::preset(level);
    }
    if !args.spikes.is_empty() {
        cfg.workload.spikes = args
            .spikes
            .iter()
            .map(|s| parse_spike(s))
            .collect::<Result<_, _>>()?;
    }
    if args.variant.is_some() || args.items.is_some() {
        let mut model = match &args.variant {
            Some(v) => CostModel::new(
                Variant::from_short_name(v)
                    .ok_or_else(|| HarnessError::InvalidConfig(format!("unknown variant `{v}`")))?,
            ),
            None => cfg.binding().normal,
        };
        if let Some(n) = args.items {
            model.params.n = n;
        }
        cfg.binding = Some(encoms_core::target_sim::ModeBinding::fixed(model));
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<(), HarnessError> {
    let cfg = experiment_config(args)?;
    let summary = run_experiment(&cfg)?;
    println!(
        "{} iterations of {} written to {}",
        summary.files.len(),
        summary.manifest.label,
        summary.output_dir.display()
    );
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<(), HarnessError> {
    let mut variants = args
        .inputs
        .iter()
        .map(|d| load_variant(d))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(root) = &args.import_external {
        variants.extend(import_external(root)?);
    }
    let report = analyze_variants(variants, &args.baseline)?;
    print!("{}", render_report(&report, args.format));
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), String> {
    let mut cfg = MonitorConfig::load(&args.config).map_err(|e| e.to_string())?;
    if let Some(l) = args.listen {
        cfg.listen_address = l;
    }
    let monitor = run_monitor(&cfg).map_err(|e| e.to_string())?;
    info!("serving on {}", monitor.base_url());
    println!("listening on {}", monitor.base_url());
    monitor.wait();
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Analyze(a) => analyze(a),
        Command::Serve(a) => {
            return match serve(a) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
