//! Command-line entry point: scenario generation, path tracing, bistability
//! reports, and the grasp-sensing emulator.
//!
//! Artifacts are deterministic byte-for-byte across reruns; the only
//! run-dependent output is the wall-time figure on stdout. Exit codes:
//! 0 when the requested analysis completed, 2 for invalid parameters (the
//! message names the parameter), 1 for runtime failures — partial paths are
//! still written, flagged by their termination reason.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bistability::{analyze, energy_landscape, LandscapeSample, LimitPoint, StableState};
use crate::model::{load_scenario, scenario_to_json, Scenario};
use crate::scenarios::{
    default_arch_material, make_shallow_arch, make_vertical_beam, make_von_mises_truss, ArchEnds,
    ArchProfile, ArchSpec,
};
use crate::sensing::{
    detect_peaks, events_csv, run_controller, GraspControllerConfig, GraspMode, Peak,
};
use crate::solver::{
    continue_path, two_step_protocol, ContinuationMethod, ContinuationSettings, EquilibriumPath,
    Termination,
};
use crate::svg::render_path;

#[derive(Parser)]
#[command(
    name = "snapbeam",
    version,
    about = "Planar co-rotational beam solver: snap-through tracing, bistability reports, grasp sensing"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory for all written artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Also render an SVG for commands that support it.
    #[arg(long, global = true)]
    svg: bool,
    /// Maximum number of scenario files processed in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Reserved: accepted for forward compatibility, nothing random exists.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a ready-to-run scenario file.
    Generate {
        #[command(subcommand)]
        kind: GenerateKind,
    },
    /// Trace equilibrium paths of scenario files to CSV (+ report JSON).
    Trace {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        #[command(flatten)]
        overrides: SolverOverrides,
        /// Draw every k-th deformed shape in the SVG (0 = pick automatically).
        #[arg(long, default_value_t = 0)]
        shape_every: usize,
    },
    /// Bistability report (folds, states, barrier, trigger) + landscape CSV.
    Bistable {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        #[command(flatten)]
        overrides: SolverOverrides,
        /// Sample count of the energy-landscape sweep.
        #[arg(long, default_value_t = 81)]
        landscape_samples: usize,
    },
    /// Run the grasp controller and peak detection over a pressure trace.
    Sense(SenseArgs),
}

#[derive(Subcommand)]
enum GenerateKind {
    /// Shallow arch with a unit downward reference force at the apex.
    Arch {
        #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
        span: f64,
        #[arg(long, default_value_t = 0.006, allow_negative_numbers = true)]
        rise: f64,
        /// Element count (even, at least 4).
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, value_enum, default_value_t = ProfileArg::HalfSine)]
        profile: ProfileArg,
        #[arg(long, value_enum, default_value_t = EndsArg::Pinned)]
        ends: EndsArg,
        /// File stem of the written scenario (default: the kind).
        #[arg(long)]
        name: Option<String>,
    },
    /// Upright cantilever under gravity with a transverse tip force.
    VerticalBeam {
        #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
        length: f64,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
        tip_force: f64,
        #[arg(long)]
        name: Option<String>,
    },
    /// Two-bar toggle: the canonical one-dof snap-through structure.
    VonMises {
        #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
        half_span: f64,
        #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
        rise: f64,
        #[arg(long)]
        name: Option<String>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    HalfSine,
    Circular,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EndsArg {
    Pinned,
    Clamped,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    LoadControl,
    DisplacementControl,
    ArcLength,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Active,
    Passive,
}

/// Flag-level overrides of the scenario file's solver block; the report
/// echoes the effective settings.
#[derive(Args, Clone)]
struct SolverOverrides {
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    initial_step: Option<f64>,
    #[arg(long)]
    max_step: Option<f64>,
    #[arg(long)]
    min_step: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    newton_tol: Option<f64>,
    #[arg(long)]
    max_newton_iters: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    target_lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    target_displacement: Option<f64>,
    #[arg(long)]
    control_dof: Option<usize>,
}

impl SolverOverrides {
    fn apply(&self, s: &mut ContinuationSettings) {
        if let Some(m) = self.method {
            s.method = match m {
                MethodArg::LoadControl => ContinuationMethod::LoadControl,
                MethodArg::DisplacementControl => ContinuationMethod::DisplacementControl,
                MethodArg::ArcLength => ContinuationMethod::ArcLength,
            };
        }
        if let Some(v) = self.initial_step {
            s.initial_step = v;
        }
        if let Some(v) = self.max_step {
            s.max_step = v;
        }
        if let Some(v) = self.min_step {
            s.min_step = v;
        }
        if let Some(v) = self.max_steps {
            s.max_steps = v;
        }
        if let Some(v) = self.newton_tol {
            s.newton_tol = v;
        }
        if let Some(v) = self.max_newton_iters {
            s.max_newton_iters = v;
        }
        if let Some(v) = self.target_lambda {
            s.target_lambda = Some(v);
        }
        if let Some(v) = self.target_displacement {
            s.target_displacement = Some(v);
        }
        if let Some(v) = self.control_dof {
            s.control_dof = Some(v);
        }
    }
}

#[derive(Args)]
struct SenseArgs {
    /// Pressure/force trace CSV with header `t,p`.
    trace: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Active)]
    mode: ModeArg,
    /// Active mode: vacuum threshold in sensor units.
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    threshold: f64,
    /// Active mode: hysteresis band below the threshold for reopening.
    #[arg(long, default_value_t = 1.0)]
    band: f64,
    /// Active mode: consecutive samples a condition must hold.
    #[arg(long, default_value_t = 3)]
    debounce: usize,
    /// Passive mode: contact force that snaps the palm closed.
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    trigger_threshold: f64,
    /// Minimum topographic prominence of a reported pressure peak.
    #[arg(long, default_value_t = 2.0)]
    min_prominence: f64,
}

enum CliError {
    /// Parameter problems: exit 2, message names the parameter.
    Invalid(String),
    /// Everything else: exit 1.
    Runtime(String),
}

fn rt(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}

fn print_result(result: Result<String, CliError>) -> Result<(), u8> {
    match result {
        Ok(msg) => {
            println!("{msg}");
            Ok(())
        }
        Err(CliError::Invalid(m)) => {
            eprintln!("error: {m}");
            Err(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            Err(1)
        }
    }
}

fn print_all(results: Vec<Result<String, CliError>>) -> Result<(), u8> {
    let mut code = None;
    for result in results {
        if let Err(c) = print_result(result) {
            code.get_or_insert(c);
        }
    }
    match code {
        None => Ok(()),
        Some(c) => Err(c),
    }
}

fn dispatch(cli: Cli) -> Result<(), u8> {
    if let Err(e) = fs::create_dir_all(&cli.out) {
        eprintln!("error: cannot create {}: {e}", cli.out.display());
        return Err(1);
    }
    match cli.command {
        Command::Generate { kind } => print_result(cmd_generate(kind, &cli.out)),
        Command::Trace {
            scenarios,
            overrides,
            shape_every,
        } => print_all(run_batch(&scenarios, cli.jobs, |p| {
            cmd_trace(p, &cli.out, &overrides, cli.svg, shape_every)
        })),
        Command::Bistable {
            scenarios,
            overrides,
            landscape_samples,
        } => print_all(run_batch(&scenarios, cli.jobs, |p| {
            cmd_bistable(p, &cli.out, &overrides, landscape_samples)
        })),
        Command::Sense(args) => print_result(cmd_sense(&args, &cli.out)),
    }
}

/// Applies `f` to every file, optionally on `jobs` worker threads; results
/// come back in input order so stdout stays deterministic.
fn run_batch<F>(files: &[PathBuf], jobs: usize, f: F) -> Vec<Result<String, CliError>>
where
    F: Fn(&Path) -> Result<String, CliError> + Sync,
{
    let jobs = jobs.clamp(1, files.len().max(1));
    if jobs == 1 {
        return files.iter().map(|p| f(p)).collect();
    }
    let next = AtomicUsize::new(0);
    let collected: Mutex<Vec<(usize, Result<String, CliError>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= files.len() {
                    break;
                }
                let result = f(&files[i]);
                collected.lock().expect("batch poisoned").push((i, result));
            });
        }
    });
    let mut v = collected.into_inner().expect("batch poisoned");
    v.sort_by_key(|(i, _)| *i);
    v.into_iter().map(|(_, r)| r).collect()
}

fn artifact_stem(path: &Path) -> String {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scenario");
    stem.strip_suffix(".scenario").unwrap_or(stem).to_string()
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| rt(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn load_scenario_file(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| rt(format!("cannot read {}: {e}", path.display())))?;
    load_scenario(&text).map_err(|e| rt(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

fn cmd_generate(kind: GenerateKind, out: &Path) -> Result<String, CliError> {
    let (default_name, name, scenario) = match kind {
        GenerateKind::Arch {
            span,
            rise,
            n,
            profile,
            ends,
            name,
        } => {
            let spec = ArchSpec {
                span,
                rise,
                profile: match profile {
                    ProfileArg::HalfSine => ArchProfile::HalfSine,
                    ProfileArg::Circular => ArchProfile::Circular,
                },
                n_elements: n,
                material: default_arch_material(),
                ends: match ends {
                    EndsArg::Pinned => ArchEnds::Pinned,
                    EndsArg::Clamped => ArchEnds::Clamped,
                },
            };
            let scenario = make_shallow_arch(&spec).map_err(|e| CliError::Invalid(e.to_string()))?;
            ("arch", name, scenario)
        }
        GenerateKind::VerticalBeam {
            length,
            n,
            tip_force,
            name,
        } => {
            let scenario = make_vertical_beam(length, n, &default_arch_material(), tip_force)
                .map_err(|e| CliError::Invalid(e.to_string()))?;
            ("vertical-beam", name, scenario)
        }
        GenerateKind::VonMises {
            half_span,
            rise,
            name,
        } => {
            let scenario = make_von_mises_truss(half_span, rise, &default_arch_material())
                .map_err(|e| CliError::Invalid(e.to_string()))?;
            ("von-mises", name, scenario)
        }
    };
    let json = scenario_to_json(&scenario);
    // The generated document must pass its own loader.
    load_scenario(&json).map_err(|e| rt(format!("generated scenario failed validation: {e}")))?;
    let stem = name.unwrap_or_else(|| default_name.to_string());
    let path = write_artifact(out, &format!("{stem}.scenario.json"), &json)?;
    Ok(format!("wrote {}", path.display()))
}

// ---------------------------------------------------------------------------
// trace
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct StateRow {
    label: &'static str,
    lambda: f64,
    energy: f64,
    control_displacement: Option<f64>,
    min_eigenvalue: f64,
    stable: bool,
}

#[derive(Serialize)]
struct RunReport<'a> {
    scenario: &'a str,
    settings: &'a ContinuationSettings,
    points: usize,
    preload_points: usize,
    termination: &'static str,
    limit_points: Vec<LimitPoint>,
    states: Vec<StateRow>,
}

fn state_row(
    label: &'static str,
    point: &crate::solver::PathPoint,
    control: Option<usize>,
) -> StateRow {
    StateRow {
        label,
        lambda: point.state.lambda,
        energy: point.energy,
        control_displacement: control.map(|dof| point.state.q[dof]),
        min_eigenvalue: point.min_eigenvalue,
        stable: point.min_eigenvalue > 0.0,
    }
}

fn path_csv(path: &EquilibriumPath) -> String {
    let dofs = path.points.first().map(|p| p.state.q.len()).unwrap_or(0);
    let mut out = String::from("step,lambda,energy,min_eig,det_sign");
    for j in 0..dofs {
        let _ = write!(out, ",q_{j}");
    }
    out.push('\n');
    for (i, p) in path.points.iter().enumerate() {
        let _ = write!(
            out,
            "{i},{:.16e},{:.16e},{:.16e},{}",
            p.state.lambda, p.energy, p.min_eigenvalue, p.det_sign
        );
        for j in 0..dofs {
            let _ = write!(out, ",{:.16e}", p.state.q[j]);
        }
        out.push('\n');
    }
    let _ = writeln!(out, "# termination={}", path.termination);
    out
}

fn effective_settings(
    scenario: &Scenario,
    overrides: &SolverOverrides,
) -> Result<ContinuationSettings, CliError> {
    let mut settings = scenario.solver.clone();
    overrides.apply(&mut settings);
    settings
        .check()
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    Ok(settings)
}

fn cmd_trace(
    file: &Path,
    out: &Path,
    overrides: &SolverOverrides,
    svg: bool,
    shape_every: usize,
) -> Result<String, CliError> {
    let scenario = load_scenario_file(file)?;
    let settings = effective_settings(&scenario, overrides)?;
    let stem = artifact_stem(file);

    let started = Instant::now();
    let path = if scenario.model.load.gravity_enabled {
        two_step_protocol(&scenario.model, &settings)
    } else {
        continue_path(&scenario.model, &settings)
    }
    .map_err(|e| rt(format!("{stem}: {e}")))?;
    let wall = started.elapsed().as_secs_f64();

    let csv_path = write_artifact(out, &format!("{stem}.path.csv"), &path_csv(&path))?;
    let report = RunReport {
        scenario: &stem,
        settings: &settings,
        points: path.points.len(),
        preload_points: path.preload_points,
        termination: path.termination.as_str(),
        limit_points: crate::bistability::find_limit_points(&path.points),
        states: vec![
            state_row("initial", &path.points[0], settings.control_dof),
            state_row(
                "final",
                path.points.last().expect("path never empty"),
                settings.control_dof,
            ),
        ],
    };
    let mut json = serde_json::to_string_pretty(&report).expect("report serialization");
    json.push('\n');
    write_artifact(out, &format!("{stem}.report.json"), &json)?;
    if svg {
        let image = render_path(&scenario.model, &path, settings.control_dof, shape_every);
        write_artifact(out, &format!("{stem}.svg"), &image)?;
    }

    if path.termination != Termination::TargetReached {
        return Err(rt(format!(
            "{stem}: continuation ended with {} after {} points (partial path written to {})",
            path.termination,
            path.points.len(),
            csv_path.display()
        )));
    }
    Ok(format!(
        "traced {stem}: {} points, termination {}, wall {wall:.3} s",
        path.points.len(),
        path.termination
    ))
}

// ---------------------------------------------------------------------------
// bistable
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct StateSummary {
    lambda: f64,
    control_displacement: Option<f64>,
    energy: f64,
    min_eigenvalue: f64,
    stable: bool,
}

#[derive(Serialize)]
struct BistableReport<'a> {
    scenario: &'a str,
    settings: &'a ContinuationSettings,
    bistable: bool,
    monostable: bool,
    limit_points: &'a [LimitPoint],
    first_state: StateSummary,
    second_state: Option<StateSummary>,
    energy_barrier: Option<f64>,
    trigger_force: Option<f64>,
    path_points: usize,
    termination: &'static str,
}

fn summarize_state(s: &StableState, control: Option<usize>) -> StateSummary {
    StateSummary {
        lambda: s.state.lambda,
        control_displacement: control.map(|dof| s.state.q[dof]),
        energy: s.energy,
        min_eigenvalue: s.min_eigenvalue,
        stable: s.stable,
    }
}

fn landscape_csv(samples: &[LandscapeSample]) -> String {
    let opt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.16e}"),
        None => "nan".to_string(),
    };
    let mut out = String::from("control_displacement,energy,reaction\n");
    for s in samples {
        let _ = writeln!(
            out,
            "{:.16e},{},{}",
            s.control_displacement,
            opt(s.energy),
            opt(s.reaction)
        );
    }
    out
}

fn cmd_bistable(
    file: &Path,
    out: &Path,
    overrides: &SolverOverrides,
    landscape_samples: usize,
) -> Result<String, CliError> {
    let scenario = load_scenario_file(file)?;
    let settings = effective_settings(&scenario, overrides)?;
    let stem = artifact_stem(file);
    let model = &scenario.model;

    let started = Instant::now();
    let analysis = analyze(model, &settings).map_err(|e| rt(format!("{stem}: {e}")))?;

    let report = BistableReport {
        scenario: &stem,
        settings: &settings,
        bistable: analysis.bistable,
        monostable: !analysis.bistable,
        limit_points: &analysis.limit_points,
        first_state: summarize_state(&analysis.first_state, settings.control_dof),
        second_state: analysis
            .second_state
            .as_ref()
            .map(|s| summarize_state(s, settings.control_dof)),
        energy_barrier: analysis.energy_barrier,
        trigger_force: analysis.trigger_force,
        path_points: analysis.path.points.len(),
        termination: analysis.path.termination.as_str(),
    };
    let mut json = serde_json::to_string_pretty(&report).expect("report serialization");
    json.push('\n');
    write_artifact(out, &format!("{stem}.bistable.json"), &json)?;

    // Landscape sweep across both wells: anchored on the trace target when
    // present, otherwise on the farthest control excursion of the path.
    let control = settings
        .control_dof
        .ok_or_else(|| rt(format!("{stem}: scenario has no control dof for the landscape")))?;
    let anchor = settings.target_displacement.unwrap_or_else(|| {
        let extreme = analysis
            .path
            .points
            .iter()
            .map(|p| p.state.q[control])
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if extreme == 0.0 {
            -0.1 * model.geometry_scale()
        } else {
            2.2 * extreme
        }
    });
    let samples = energy_landscape(
        model,
        control,
        (-0.1 * anchor, 1.1 * anchor),
        landscape_samples,
        &settings,
    )
    .map_err(|e| rt(format!("{stem}: {e}")))?;
    write_artifact(out, &format!("{stem}.landscape.csv"), &landscape_csv(&samples))?;
    let wall = started.elapsed().as_secs_f64();

    let verdict = if analysis.bistable {
        "bistable"
    } else {
        "monostable"
    };
    Ok(format!(
        "analyzed {stem}: {verdict}, {} limit points, trigger {}, wall {wall:.3} s",
        analysis.limit_points.len(),
        match analysis.trigger_force {
            Some(f) => format!("{f:.6e}"),
            None => "n/a".to_string(),
        }
    ))
}

// ---------------------------------------------------------------------------
// sense
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PeaksReport {
    trace: String,
    min_prominence: f64,
    peaks: Vec<Peak>,
}

fn cmd_sense(args: &SenseArgs, out: &Path) -> Result<String, CliError> {
    let text = fs::read_to_string(&args.trace)
        .map_err(|e| rt(format!("cannot read {}: {e}", args.trace.display())))?;
    let trace = crate::sensing::parse_trace_csv(&text)
        .map_err(|e| rt(format!("{}: {e}", args.trace.display())))?;
    let config = GraspControllerConfig {
        mode: match args.mode {
            ModeArg::Active => GraspMode::Active,
            ModeArg::Passive => GraspMode::Passive,
        },
        vacuum_threshold: args.threshold,
        hysteresis_band: args.band,
        debounce: args.debounce,
        trigger_force_threshold: args.trigger_threshold,
    };
    config.check().map_err(|e| CliError::Invalid(e.to_string()))?;

    let started = Instant::now();
    let state = run_controller(&trace, &config).map_err(|e| rt(e))?;
    let peaks = detect_peaks(&trace, args.min_prominence);
    let wall = started.elapsed().as_secs_f64();

    let stem = artifact_stem(&args.trace);
    write_artifact(out, &format!("{stem}.events.csv"), &events_csv(&state.events))?;
    let report = PeaksReport {
        trace: stem.clone(),
        min_prominence: args.min_prominence,
        peaks,
    };
    let mut json = serde_json::to_string_pretty(&report).expect("peaks serialization");
    json.push('\n');
    write_artifact(out, &format!("{stem}.peaks.json"), &json)?;

    Ok(format!(
        "sensed {stem}: {} events, final phase {}, {} peaks, wall {wall:.3} s",
        state.events.len(),
        state.phase,
        report.peaks.len()
    ))
}
