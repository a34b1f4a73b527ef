use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use peleg::experiments::{self, Algorithm, ExperimentSpec, Setting};
use peleg::oracle::{self, SolverMethod};
use peleg::{peleg as alg, selftest, Error, Instance, PelegConfig};

#[derive(Parser)]
#[command(name = "peleg", version, about = "Best-arm identification in linear bandits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single run on one instance.
    Run(RunArgs),
    /// Seeded multi-trial sweep, written as CSV.
    Sweep(SweepArgs),
    /// Hardness and oracle allocation of one instance.
    Oracle(OracleArgs),
    /// Built-in invariant checks.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum SettingArg {
    Standard,
    Sphere,
    Confound,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::Standard => Setting::Standard,
            SettingArg::Sphere => Setting::Sphere,
            SettingArg::Confound => Setting::Confound,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    #[value(name = "peleg")]
    Peleg,
    #[value(name = "oracle_baseline")]
    OracleBaseline,
    #[value(name = "uniform_static")]
    UniformStatic,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Peleg => Algorithm::Peleg,
            AlgorithmArg::OracleBaseline => Algorithm::OracleBaseline,
            AlgorithmArg::UniformStatic => Algorithm::UniformStatic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    /// Grid for up to three arms, game solver otherwise.
    Auto,
    Grid,
    Game,
}

#[derive(Args)]
struct InstanceArgs {
    /// Built-in setting.
    #[arg(long, value_enum)]
    setting: Option<SettingArg>,
    /// Gap (standard) or dimension (sphere, confound).
    #[arg(long)]
    param: Option<f64>,
    /// Instance JSON file instead of a built-in setting.
    #[arg(long, conflicts_with_all = ["setting", "param"])]
    instance: Option<PathBuf>,
    /// Confounder angle.
    #[arg(long)]
    omega: Option<f64>,
    /// Reward noise standard deviation.
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Clip the best response and the stopping test to the ball.
    #[arg(long)]
    use_ball: bool,
    /// Per-round CSV log.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Full result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, value_enum, default_value = "auto")]
    method: MethodArg,
    /// Game-solver iterations.
    #[arg(long, default_value_t = oracle::DEFAULT_BUDGET)]
    budget: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON experiment spec; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    setting: Option<SettingArg>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',', conflicts_with = "param")]
    sweep: Option<Vec<f64>>,
    /// Single sweep value.
    #[arg(long)]
    param: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "PELEG_WORKERS")]
    workers: Option<usize>,
    /// Comma-separated algorithms.
    #[arg(long, value_enum, value_delimiter = ',')]
    algorithms: Option<Vec<AlgorithmArg>>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    use_ball: bool,
    /// Sphere setting up to d = 50 (slow).
    #[arg(long)]
    full: bool,
    /// Record wall time per trial (output is then not reproducible).
    #[arg(long)]
    timing: bool,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Also write the per-cell summary CSV here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Check(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(Error::InvalidParameter(format!("{}: {e}", path.display()))))
}

fn load_instance(args: &InstanceArgs) -> Result<Instance, Failure> {
    if let Some(path) = &args.instance {
        let file = File::open(path)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let inst: Instance = serde_json::from_reader(io::BufReader::new(file))
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        return match args.noise_std {
            Some(s) => Ok(inst.with_noise_std(s)?),
            None => Ok(inst),
        };
    }
    let setting: Setting = args
        .setting
        .ok_or_else(|| Failure::Usage("either --setting or --instance is required".into()))?
        .into();
    let param = args
        .param
        .ok_or_else(|| Failure::Usage("--param is required with --setting".into()))?;
    let mut spec = ExperimentSpec::new(setting, vec![param]);
    spec.delta = args.delta;
    if let Some(o) = args.omega {
        spec.omega = o;
    }
    if let Some(s) = args.noise_std {
        spec.noise_std = s;
    }
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(experiments::build_instance(&spec, param, args.seed)?)
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let inst = load_instance(&args.instance)?;
    let cfg = PelegConfig {
        use_ball: args.use_ball,
        ..PelegConfig::with_delta(args.instance.delta)
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut rng = experiments::stream(args.instance.seed, 1);
    let mut trace = match &args.trace {
        Some(p) => Some(create(p)?),
        None => None,
    };
    let res = alg::run_traced(
        &inst,
        &cfg,
        &mut rng,
        trace.as_mut().map(|t| t as &mut dyn Write),
    )?
    .judge(&inst);
    if let Some(mut t) = trace {
        t.flush()?;
    }
    println!(
        "recommended {} (best {}), tau {}, phases {}, lengths {:?}",
        res.recommended,
        inst.best_arm(),
        res.tau,
        res.phases(),
        res.phase_lengths
    );
    if let Some(p) = &args.out {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &res).map_err(Error::from)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<(), Failure> {
    let inst = load_instance(&args.instance)?;
    let method = match args.method {
        MethodArg::Grid => SolverMethod::Grid,
        MethodArg::Game => SolverMethod::GameSolver,
        MethodArg::Auto if inst.num_arms() <= 3 => SolverMethod::Grid,
        MethodArg::Auto => SolverMethod::GameSolver,
    };
    if method == SolverMethod::Grid && oracle::grid_step(inst.num_arms()).is_none() {
        return Err(Failure::Usage(format!(
            "grid solver supports at most 5 arms, instance has {}",
            inst.num_arms()
        )));
    }
    let res = oracle::d_theta_star(&inst, method, args.budget)?;
    let w: Vec<String> = res.w.iter().map(|v| format!("{v:.4}")).collect();
    println!("method      {}", serde_json::to_string(&res.method).map_err(Error::from)?);
    println!("D*          {:.6e}", res.value);
    println!("w*          [{}]", w.join(", "));
    if let Some(gap) = res.duality_gap {
        println!("duality gap {gap:.3e}");
    }
    println!(
        "lower bound {:.6e}  (log(1/(2.4 delta)) / D*, delta = {})",
        oracle::lower_bound(args.instance.delta, res.value),
        args.instance.delta
    );
    Ok(())
}

fn load_spec(args: &SweepArgs) -> Result<ExperimentSpec, Failure> {
    let mut spec = match &args.config {
        Some(path) => {
            let file = File::open(path)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            serde_json::from_reader::<_, ExperimentSpec>(io::BufReader::new(file))
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => {
            let setting: Setting = args
                .setting
                .ok_or_else(|| Failure::Usage("--setting or --config is required".into()))?
                .into();
            ExperimentSpec::new(setting, setting.default_sweep(args.full))
        }
    };
    if let Some(s) = args.setting {
        let setting: Setting = s.into();
        if setting != spec.setting {
            spec.setting = setting;
            spec.sweep = setting.default_sweep(args.full);
        }
    }
    if args.full && spec.setting == Setting::Sphere && args.sweep.is_none() && args.param.is_none() {
        spec.sweep = spec.setting.default_sweep(true);
        eprintln!("warning: --full runs the sphere setting up to d = 50 and may take hours");
    }
    if let Some(v) = &args.sweep {
        spec.sweep = v.clone();
    }
    if let Some(p) = args.param {
        spec.sweep = vec![p];
    }
    if let Some(d) = args.delta {
        spec.delta = d;
    }
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    if let Some(s) = args.seed {
        spec.base_seed = s;
    }
    if args.workers.is_some() {
        spec.workers = args.workers;
    }
    if let Some(a) = &args.algorithms {
        spec.algorithms = a.iter().map(|&x| x.into()).collect();
    }
    if let Some(o) = args.omega {
        spec.omega = o;
    }
    if let Some(s) = args.noise_std {
        spec.noise_std = s;
    }
    spec.use_ball |= args.use_ball;
    spec.record_wall_time |= args.timing;
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(spec)
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let spec = load_spec(&args)?;
    let outcomes = experiments::run_experiment_detailed(&spec)?;
    for o in &outcomes {
        if let Some(reason) = &o.error {
            eprintln!(
                "warning: {} param {} trial {}: {reason}",
                o.record.algorithm, o.record.param, o.record.trial
            );
        }
    }
    let records: Vec<_> = outcomes.into_iter().map(|o| o.record).collect();
    let mut out = create(&args.out)?;
    experiments::write_records(&mut out, &records)?;
    out.flush()?;
    let rows = experiments::aggregate(&records)?;
    if let Some(p) = &args.summary {
        let mut w = create(p)?;
        experiments::write_summary(&mut w, &rows)?;
        w.flush()?;
    }
    for r in &rows {
        println!(
            "{} {} {}: mean tau {:.1} (std {:.1}), success {:.2} over {}",
            r.setting, r.param, r.algorithm, r.mean_tau, r.std_tau, r.success_rate, r.n_trials
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Selftest => {
            let stdout = io::stdout();
            match selftest::run_all(&mut stdout.lock()) {
                Ok(true) => Ok(()),
                Ok(false) => Err(Failure::Check("selftest failed".into())),
                Err(e) => Err(e.into()),
            }
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
