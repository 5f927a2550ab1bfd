use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use genprof::bridge::{fit, load_solution, save_solution};
use genprof::cost::{materialize_dense, DEFAULT_DENSE_CAP};
use genprof::dataset::{select_training_contexts, Dataset};
use genprof::dense::{
    assemble_dense_plan, dense_sinkhorn_solve, kl_to_gibbs, perturb_plan_feasibly, random_instance,
};
use genprof::error::Error;
use genprof::eval::{accuracy_report, write_plot_data, write_report, PlotPoint};
use genprof::generator::{
    generate_profile, write_profile_csv, GenerateConfig, ProfileMode, ProfileSidecar,
};
use genprof::sim::SimulationSpec;
use genprof::solver::{sinkhorn_solve, SolverConfig};
use genprof::state::ResourceContext;

#[derive(Parser)]
#[command(
    name = "genprof",
    version,
    about = "Learns execution-state dynamics from profiled runs and synthesizes \
             execution profiles for unseen resource contexts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Produce a profiling dataset from a simulated workload
    Simulate(SimulateArgs),
    /// Fit the time-coupling model to a dataset's snapshot marginals
    Solve(SolveArgs),
    /// Synthesize an execution profile for a resource context
    Generate(GenerateArgs),
    /// Score synthesized profiles against measured runs
    Evaluate(EvaluateArgs),
    /// Cross-check the structured solver against brute-force references
    OracleCheck(OracleCheckArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation spec (JSON) to run
    #[arg(long, required_unless_present = "demo", conflicts_with = "demo")]
    config: Option<PathBuf>,
    /// Use the built-in demo workload with this many levels per resource axis
    #[arg(long)]
    demo: Option<usize>,
    /// Relative measurement noise for the demo workload
    #[arg(long, default_value_t = 0.05, requires = "demo")]
    noise: f64,
    /// Runs per context (overrides the spec)
    #[arg(long)]
    runs: Option<usize>,
    /// Dataset seed (overrides the spec)
    #[arg(long)]
    seed: Option<u64>,
    /// Directory to write the dataset into
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// Dataset manifest to fit on
    #[arg(long)]
    data: PathBuf,
    /// Train on this fraction of the context catalog (componentwise extremes
    /// are always included; the rest is a seeded draw)
    #[arg(long, conflicts_with = "train_contexts")]
    train_fraction: Option<f64>,
    /// Comma-separated context ids to train on (default: the whole catalog)
    #[arg(long, value_delimiter = ',')]
    train_contexts: Option<Vec<String>>,
    /// Entropy regularization strength
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Convergence tolerance on the potential movement per sweep
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Sweep cap
    #[arg(long, default_value_t = 10_000)]
    maxiter: usize,
    /// Seed for potential initialization and training selection
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for solution.json and convergence_log.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// Solution file written by `solve`
    #[arg(long)]
    solution: PathBuf,
    /// Dataset manifest (defaults to the one recorded in the solution)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target resource context, comma-separated components
    #[arg(long, allow_hyphen_values = true)]
    context: String,
    /// Time step of the synthesized profile, in seconds
    #[arg(long, default_value_t = 0.01)]
    delta_t: f64,
    /// Extraction mode: maxlik, mean, or sample
    #[arg(long, default_value = "maxlik")]
    mode: String,
    /// Fixed kernel bandwidths, comma-separated, one per context component
    /// (default: Silverman's rule per time step)
    #[arg(long)]
    bandwidth: Option<String>,
    /// Seed for sample mode
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generate even when the solver stopped at its sweep cap
    #[arg(long)]
    allow_unconverged: bool,
    /// Directory for profile.csv and profile.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Solution file written by `solve`
    #[arg(long)]
    solution: PathBuf,
    /// Dataset manifest (defaults to the one recorded in the solution)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated context ids to score (default: every catalog context
    /// outside the training set)
    #[arg(long, value_delimiter = ',')]
    contexts: Option<Vec<String>>,
    /// Time step for synthesized and reference profiles, in seconds
    #[arg(long, default_value_t = 0.01)]
    delta_t: f64,
    /// Extraction mode: maxlik, mean, or sample
    #[arg(long, default_value = "maxlik")]
    mode: String,
    /// Fixed kernel bandwidths, comma-separated (default: Silverman's rule)
    #[arg(long)]
    bandwidth: Option<String>,
    /// Seed for sample mode
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluate even when the solver stopped at its sweep cap
    #[arg(long)]
    allow_unconverged: bool,
    /// Directory for report.csv, report.json, and plot_data.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleCheckArgs {
    /// Random instances per problem shape
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// Maximum allowed deviation between structured and brute-force results
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    /// Entropy regularization strength for the check instances
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
}

fn parse_f64_list(text: &str, what: &str) -> genprof::Result<Vec<f64>> {
    text.split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad {what} component '{f}'")))
        })
        .collect()
}

fn cmd_simulate(args: SimulateArgs) -> genprof::Result<ExitCode> {
    let mut spec = match (&args.config, args.demo) {
        (Some(path), _) => SimulationSpec::load(path)?,
        (None, Some(levels)) => SimulationSpec::demo(levels, args.noise),
        (None, None) => unreachable!("clap enforces one source"),
    };
    if let Some(runs) = args.runs {
        spec.runs_per_context = runs;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let dataset = spec.run()?;
    let manifest_path = dataset.write(&args.out)?;
    spec.save(&args.out.join("sim_config.json"))?;
    println!(
        "simulated {} contexts x {} runs ({} samples each)",
        dataset.context_ids().len(),
        spec.runs_per_context,
        dataset.records()[0].samples().len()
    );
    println!(
        "snapshot grid: {} points over {} s",
        spec.grid_times.len(),
        dataset.grid()?.end()
    );
    println!("dataset hash: {}", dataset.content_hash());
    println!("wrote {}", manifest_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_solve(args: SolveArgs) -> genprof::Result<ExitCode> {
    let dataset = Dataset::read(&args.data)?;
    let training: Vec<String> = match (&args.train_contexts, args.train_fraction) {
        (Some(ids), _) => ids.clone(),
        (None, Some(fraction)) => select_training_contexts(&dataset, fraction, args.seed)?,
        (None, None) => dataset.context_ids().to_vec(),
    };
    let config = SolverConfig {
        epsilon: args.epsilon,
        tol: args.tol,
        max_iterations: args.maxiter,
        seed: args.seed,
    };
    let mut model = fit(&dataset, &training, &config)?;
    model.manifest_path = Some(args.data.display().to_string());

    std::fs::create_dir_all(&args.out)?;
    save_solution(&model, &args.out.join("solution.json"))?;
    let mut log = csv::Writer::from_path(args.out.join("convergence_log.csv"))?;
    log.write_record(["sweep", "residual"])?;
    for (i, r) in model.solution.residuals.iter().enumerate() {
        log.write_record(&[(i + 1).to_string(), r.to_string()])?;
    }
    log.flush()?;

    println!(
        "trained on {} of {} contexts ({} runs per snapshot, {} snapshots)",
        training.len(),
        dataset.context_ids().len(),
        model.raw_marginals[0].len(),
        model.n_snapshots()
    );
    println!(
        "solver: {} sweeps, residual {:.3e}, converged: {}",
        model.solution.iterations, model.solution.final_error, model.solution.converged
    );
    println!("wrote {}", args.out.join("solution.json").display());
    if model.solution.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "warning: stopped at the sweep cap; outputs hold the best iterate \
             (raise --maxiter or --epsilon to converge)"
        );
        Ok(ExitCode::from(3))
    }
}

fn parse_mode_and_bandwidth(
    mode: &str,
    bandwidth: Option<&String>,
) -> genprof::Result<(ProfileMode, Option<Vec<f64>>)> {
    let mode: ProfileMode = mode.parse()?;
    let bandwidth = bandwidth
        .map(|text| parse_f64_list(text, "bandwidth"))
        .transpose()?;
    Ok((mode, bandwidth))
}

fn cmd_generate(args: GenerateArgs) -> genprof::Result<ExitCode> {
    let model = load_solution(&args.solution, args.data.as_deref())?;
    let beta = ResourceContext(parse_f64_list(&args.context, "context")?);
    let (mode, bandwidth) = parse_mode_and_bandwidth(&args.mode, args.bandwidth.as_ref())?;
    let cfg = GenerateConfig {
        delta_t: args.delta_t,
        mode,
        bandwidth,
        seed: args.seed,
        allow_unconverged: args.allow_unconverged,
    };
    let profile = generate_profile(&model, &beta, &cfg)?;
    std::fs::create_dir_all(&args.out)?;
    write_profile_csv(&profile, &model.state_columns, &args.out.join("profile.csv"))?;
    ProfileSidecar::describe(&model, &profile, &cfg).write(&args.out.join("profile.json"))?;
    println!(
        "synthesized {} steps over {} s for context [{}] ({mode})",
        profile.times.len(),
        model.grid.end(),
        args.context
    );
    println!("wrote {}", args.out.join("profile.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(args: EvaluateArgs) -> genprof::Result<ExitCode> {
    let model = load_solution(&args.solution, args.data.as_deref())?;
    let manifest = model
        .manifest_path
        .clone()
        .expect("set by load_solution");
    let truth = Dataset::read(Path::new(&manifest))?;
    let score_ids: Vec<String> = match &args.contexts {
        Some(ids) => ids.clone(),
        None => truth
            .context_ids()
            .iter()
            .filter(|id| !model.context_ids.contains(id))
            .filter(|id| !truth.records_for_context(id).is_empty())
            .cloned()
            .collect(),
    };
    if score_ids.is_empty() {
        return Err(Error::InvalidConfig(
            "no held-out contexts to evaluate; pass --contexts".into(),
        ));
    }
    let (mode, bandwidth) = parse_mode_and_bandwidth(&args.mode, args.bandwidth.as_ref())?;
    let cfg = GenerateConfig {
        delta_t: args.delta_t,
        mode,
        bandwidth,
        seed: args.seed,
        allow_unconverged: args.allow_unconverged,
    };
    let report = accuracy_report(&truth, &model, &score_ids, &cfg)?;
    write_report(&report, &args.out)?;
    write_plot_data(&[PlotPoint::from(&report)], &args.out.join("plot_data.csv"))?;
    println!(
        "scored {} contexts: mean dtw {:.6} vs baseline {:.6}",
        report.rows.len(),
        report.mean_dtw_generated,
        report.mean_dtw_baseline
    );
    if let Some(pct) = report.mean_improvement_pct {
        println!("improvement over baseline: {pct:.1}%");
    }
    println!(
        "training share: {:.1}% of contexts, {:.1}% of measured time",
        100.0 * report.training_fraction,
        100.0 * report.relative_measurement_time
    );
    println!("wrote {}", args.out.join("report.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle_check(args: OracleCheckArgs) -> genprof::Result<ExitCode> {
    let mut worst_plan = 0.0f64;
    let mut worst_proj = 0.0f64;
    let mut worst_feas = 0.0f64;
    let mut worst_kl_margin = f64::INFINITY;
    for n_snapshots in 2..=4usize {
        for support in 2..=5usize {
            for seed in 0..args.seeds {
                let (path, marginals) = random_instance(n_snapshots, support, seed);
                let config = SolverConfig {
                    epsilon: args.epsilon,
                    seed,
                    ..SolverConfig::default()
                };
                let structured = sinkhorn_solve(&path, &marginals, &config)?;
                let cost = materialize_dense(&path, DEFAULT_DENSE_CAP)?;
                let brute = dense_sinkhorn_solve(&cost, &marginals, &config)?;

                let plan = assemble_dense_plan(&structured, DEFAULT_DENSE_CAP)?;
                let plan_dev = plan.max_abs_difference(&brute.plan)?;

                let mut proj_dev = 0.0f64;
                let mut feas = 0.0f64;
                for sigma in 0..n_snapshots {
                    let fast = structured.unimarginal_projection(sigma)?;
                    let slow = brute.plan.unimarginal(sigma)?;
                    for (a, b) in fast.iter().zip(&slow) {
                        proj_dev = proj_dev.max((a - b).abs());
                    }
                    feas = feas.max(
                        fast.iter()
                            .zip(marginals[sigma].weights())
                            .map(|(a, b)| (a - b).abs())
                            .sum(),
                    );
                }
                let fast2 = structured.bimarginal_projection(0, n_snapshots - 1)?;
                let slow2 = brute.plan.bimarginal(0, n_snapshots - 1)?;
                for (a, b) in fast2.iter().zip(slow2.iter()) {
                    proj_dev = proj_dev.max((a - b).abs());
                }

                let kl_plan = kl_to_gibbs(&brute.plan, &cost, args.epsilon)?;
                let mut rng: rand_chacha::ChaCha8Rng = rand::SeedableRng::seed_from_u64(seed);
                let mut kl_margin = f64::INFINITY;
                for _ in 0..10 {
                    let perturbed = perturb_plan_feasibly(&brute.plan, &mut rng)?;
                    let kl_pert = kl_to_gibbs(&perturbed, &cost, args.epsilon)?;
                    kl_margin = kl_margin.min(kl_pert - kl_plan);
                }

                println!(
                    "snapshots={n_snapshots} support={support} seed={seed}: \
                     plan_dev={plan_dev:.2e} proj_dev={proj_dev:.2e} \
                     feasibility={feas:.2e} kl_margin={kl_margin:.2e}"
                );
                worst_plan = worst_plan.max(plan_dev);
                worst_proj = worst_proj.max(proj_dev);
                worst_feas = worst_feas.max(feas);
                worst_kl_margin = worst_kl_margin.min(kl_margin);
            }
        }
    }
    println!(
        "worst: plan_dev={worst_plan:.2e} proj_dev={worst_proj:.2e} \
         feasibility={worst_feas:.2e} kl_margin={worst_kl_margin:.2e}"
    );
    let ok = worst_plan <= args.tolerance
        && worst_proj <= args.tolerance
        && worst_feas <= 1e-8
        && worst_kl_margin >= -1e-12;
    if ok {
        println!("oracle check: PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("oracle check: FAIL (tolerance {:.1e})", args.tolerance);
        Ok(ExitCode::from(1))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("GENPROF_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::OracleCheck(args) => cmd_oracle_check(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::NotConverged { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
