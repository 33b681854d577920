use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use std::hint::black_box;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use pinnsim::baselines::{reference_simulate, simulate_trapezoidal, trapezoidal_step, uniform_times, ReferenceOptions};
use pinnsim::harness::experiments::{run_experiment, ExperimentConfig, ExperimentKind, ExperimentResult};
use pinnsim::harness::{ieee9_case_path, load_case, machine_index, power_flow, weights_dir, Disturbance, Scenario};
use pinnsim::pinn::{
    generate_dataset, load_network_set, save_weights, train_with_progress, write_loss_history, PinnInput, TrainingConfig,
};
use pinnsim::stepper::{write_diagnostics, ProfileInit, StepConfig, Stepper};
use pinnsim::trajectory::Trajectory;
use pinnsim::{Error, Result};

#[derive(Parser)]
#[command(name = "pinnsim", version, about = "Power-system transient simulation with per-machine PINNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the network of one machine.
    Train {
        #[arg(long)]
        case: Option<PathBuf>,
        #[arg(long)]
        machine: String,
        /// Training configuration (JSON); defaults apply to omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Train against the post-disturbance mechanical power.
        #[arg(long)]
        disturbed: bool,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss CSV.
        #[arg(long)]
        loss_history: Option<PathBuf>,
    },
    /// Simulate the disturbed (or undisturbed) case and write the trajectory CSV.
    Simulate {
        #[arg(long)]
        case: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Method::Pinnsim)]
        method: Method,
        #[arg(long, default_value_t = 0.05)]
        dt: f64,
        #[arg(long, default_value_t = 2.5)]
        t_max: f64,
        #[arg(long, default_value_t = 2)]
        r: usize,
        #[arg(long, default_value_t = 3)]
        s: usize,
        #[arg(long, value_enum, default_value_t = Init::Rotating)]
        init: Init,
        #[arg(long)]
        weights_dir: Option<PathBuf>,
        /// Simulate the operating point without the power step.
        #[arg(long)]
        undisturbed: bool,
        /// Trajectory CSV; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-iteration solver record (PINNSim only).
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Run one experiment and write its CSV files.
    Experiment {
        #[arg(long)]
        kind: Option<String>,
        /// Experiment configuration (JSON); defaults of the kind fill omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; overrides the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the load flow and print bus voltages.
    Powerflow {
        #[arg(long)]
        case: Option<PathBuf>,
    },
    /// Time network evaluations, solver steps and trapezoidal steps.
    Bench {
        #[arg(long)]
        weights_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        repeats: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Pinnsim,
    Trapezoidal,
    Reference,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Flat,
    Rotating,
    Warm,
}

impl From<Init> for ProfileInit {
    fn from(i: Init) -> Self {
        match i {
            Init::Flat => ProfileInit::Flat,
            Init::Rotating => ProfileInit::Rotating,
            Init::Warm => ProfileInit::Warm,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => e.into(),
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Malformed { path: path.to_path_buf(), message: e.to_string() })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn train(
    case: Option<PathBuf>,
    machine: &str,
    config: Option<PathBuf>,
    seed: Option<u64>,
    disturbed: bool,
    out: &Path,
    loss_history: Option<PathBuf>,
) -> Result<()> {
    let scenario = Scenario::build(&case.unwrap_or_else(ieee9_case_path), &Disturbance::default())?;
    let system = if disturbed { &scenario.disturbed } else { scenario.undisturbed() };
    let m = &system.machines[machine_index(system, machine)?];
    let mut cfg: TrainingConfig = match config {
        Some(p) => read_json(&p)?,
        None => TrainingConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    log::info!("generating {} labeled and {} collocation points for '{machine}'", cfg.n_data, cfg.n_collocation);
    let data = generate_dataset(m, &cfg)?;
    let started = std::time::Instant::now();
    let outcome = train_with_progress(m, &cfg, &data, |rec| {
        if rec.epoch % 50 == 0 {
            log::info!(
                "epoch {}: loss {:.3e} (labeled {:.3e}, physics {:.3e}) after {:.0?}",
                rec.epoch,
                rec.loss.total,
                rec.loss.l_x,
                rec.loss.l_c,
                started.elapsed()
            );
        }
    })?;
    save_weights(&outcome.weights, out)?;
    if let Some(p) = loss_history {
        let mut w = create(&p)?;
        write_loss_history(&outcome.history, &mut w)?;
        w.flush()?;
    }
    let last = outcome.history.last().expect("initial loss recorded");
    println!("trained '{machine}': final loss {:e} after {} epochs, written to {}", last.loss.total, last.epoch, out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    case: Option<PathBuf>,
    method: Method,
    cfg: StepConfig,
    t_max: f64,
    weights: Option<PathBuf>,
    undisturbed: bool,
    out: Option<PathBuf>,
    diagnostics: Option<PathBuf>,
) -> Result<()> {
    let scenario = Scenario::build(&case.unwrap_or_else(ieee9_case_path), &Disturbance::default())?;
    let system = if undisturbed { scenario.undisturbed() } else { &scenario.disturbed };
    let eq = &scenario.equilibrium;
    let traj: Trajectory = match method {
        Method::Trapezoidal => simulate_trapezoidal(system, &eq.x0, &eq.v0, t_max, cfg.dt)?,
        Method::Reference => {
            reference_simulate(system, &eq.x0, &eq.v0, &uniform_times(t_max, cfg.dt), &ReferenceOptions::default())?
        }
        Method::Pinnsim => {
            let nets = load_network_set(&weights.unwrap_or_else(weights_dir), system, cfg.r)?;
            let stepper = Stepper::new(system, &nets, cfg)?;
            stepper.check_domain(stepper.config().dt)?;
            let sim = stepper.simulate(&eq.x0, &eq.v0, t_max);
            if let Some(p) = diagnostics {
                let mut w = create(&p)?;
                write_diagnostics(&sim.steps, &mut w)?;
                w.flush()?;
            }
            let nc = sim.steps.iter().filter(|s| !s.converged).count();
            if nc > 0 {
                log::warn!("{nc} of {} steps stopped at the iteration cap", sim.steps.len());
            }
            sim.trajectory
        }
    };
    match out {
        Some(p) => {
            let mut w = create(&p)?;
            traj.write_csv(&mut w)?;
            w.flush()?;
        }
        None => traj.write_csv(std::io::stdout().lock())?,
    }
    match traj.failure {
        Some(f) => Err(Error::Model(format!("simulation stopped early: {f}"))),
        None => Ok(()),
    }
}

fn experiment(kind: Option<String>, config: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let kind = kind.as_deref().map(str::parse::<ExperimentKind>).transpose()?;
    let cfg = match (&config, kind) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::NotFound(p.clone()),
                _ => e.into(),
            })?;
            ExperimentConfig::from_json(&text, kind, p)?
        }
        (None, Some(k)) => ExperimentConfig::defaults(k),
        (None, None) => return Err(Error::InvalidParameter("give --kind or --config".into())),
    };
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(cfg.kind.name()));
    let started = Instant::now();
    let result = run_experiment(&cfg)?;
    for f in result.write(&dir)? {
        println!("wrote {}", f.display());
    }
    match &result {
        ExperimentResult::Trajectory(r) => {
            println!("reference peak-to-peak speed variation: {:.4} Hz", r.reference_peak_to_peak_hz);
            for row in &r.rows {
                println!("dt {:<5} {:<16} max error {:.3e} Hz{}", row.dt, row.method, row.max_error_hz,
                    row.failure.as_deref().map(|f| format!(" (failed: {f})")).unwrap_or_default());
            }
        }
        ExperimentResult::StepSweep(r) => {
            for row in &r.rows {
                println!("dt {:<5} {:<16} max error {:.3e} Hz, failures {}", row.dt, row.method, row.max_error_hz, row.failures);
            }
        }
        ExperimentResult::PinnError(r) => {
            for row in &r.rows {
                println!("{:<12} dt [{}, {}] median {:.3e} max {:.3e}", row.network, row.bucket[0], row.bucket[1], row.median_error, row.max_error);
            }
        }
        ExperimentResult::Convergence(r) => {
            for run in &r.runs {
                println!("r {} s {} dt {:<5} iterations {:>2} objective {:.3e} plateau at {}{}", run.r, run.s, run.dt,
                    run.delta_norms.len(), run.final_objective(), run.plateau_iteration,
                    run.failure.as_deref().map(|f| format!(" (failed: {f})")).unwrap_or_default());
            }
        }
    }
    log::info!("experiment finished in {:.1?}", started.elapsed());
    Ok(())
}

fn powerflow(case: Option<PathBuf>) -> Result<()> {
    let case = load_case(case.unwrap_or_else(ieee9_case_path))?;
    let pf = power_flow(&case)?;
    println!("bus,v_mag,v_angle_deg,p_gen,q_gen");
    for (b, (v, s)) in case.buses.iter().zip(pf.voltages.iter().zip(&pf.generation)) {
        println!("{},{:.6},{:.4},{:.6},{:.6}", b.id, v.norm(), v.arg().to_degrees(), s.re, s.im);
    }
    eprintln!("converged in {} iterations, mismatch {:.2e} pu", pf.iterations, pf.mismatch);
    Ok(())
}

fn time_per_call(repeats: usize, mut f: impl FnMut()) -> f64 {
    f();
    let t = Instant::now();
    for _ in 0..repeats {
        f();
    }
    t.elapsed().as_secs_f64() / repeats as f64
}

fn bench(weights: Option<PathBuf>, repeats: usize) -> Result<()> {
    let scenario = Scenario::build(&ieee9_case_path(), &Disturbance::default())?;
    let sys = &scenario.disturbed;
    let eq = &scenario.equilibrium;
    let nets = load_network_set(&weights.unwrap_or_else(weights_dir), sys, 2)?;
    let k = machine_index(sys, "gen2").unwrap_or(0);
    let inp = PinnInput {
        dt: 0.1,
        x0: eq.x0[k].clone(),
        xi: vec![eq.v0[sys.machines[k].bus].norm(), eq.v0[sys.machines[k].bus].arg(), 0.0, 0.0, 0.0, 0.0],
        u: None,
    };
    let repeats = repeats.max(1);
    let fwd = time_per_call(repeats, || {
        black_box(nets[k].forward(black_box(&inp)).expect("forward"));
    });
    let jac = time_per_call(repeats, || {
        black_box(nets[k].evaluate(black_box(&inp), true).expect("evaluate"));
    });
    let stepper = Stepper::new(sys, &nets, StepConfig { dt: 0.1, init: ProfileInit::Rotating, ..StepConfig::default() })?;
    let mut iters = 0;
    let step = time_per_call(repeats / 20 + 1, || {
        iters = stepper.step(0.0, &eq.x0, &eq.v0, None, None).expect("step").iterations;
    });
    let state = sys.dae_state(0.0, &eq.x0, &eq.v0);
    let trap = time_per_call(repeats / 20 + 1, || {
        black_box(trapezoidal_step(sys, &state, 0.1).expect("trapezoidal step"));
    });
    println!("benchmark (single thread timings, no pass/fail gate)");
    println!("network forward pass:                {:>10.2} us", fwd * 1e6);
    println!("network forward pass with jacobian:  {:>10.2} us", jac * 1e6);
    println!("solver step, dt 0.1 s, r 2, s 3:     {:>10.2} us ({iters} iterations)", step * 1e6);
    println!("trapezoidal step, dt 0.1 s:          {:>10.2} us", trap * 1e6);
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("PINNSIM_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidParameter(format!("PINNSIM_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidParameter(format!("cannot configure thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Train { case, machine, config, seed, disturbed, out, loss_history } => {
            train(case, &machine, config, seed, disturbed, &out, loss_history)
        }
        Command::Simulate { case, method, dt, t_max, r, s, init, weights_dir, undisturbed, out, diagnostics } => {
            let cfg = StepConfig { dt, r, s, init: init.into(), ..StepConfig::default() };
            simulate(case, method, cfg, t_max, weights_dir, undisturbed, out, diagnostics)
        }
        Command::Experiment { kind, config, out } => experiment(kind, config, out),
        Command::Powerflow { case } => powerflow(case),
        Command::Bench { weights_dir, repeats } => bench(weights_dir, repeats),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
