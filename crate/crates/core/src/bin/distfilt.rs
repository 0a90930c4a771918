//! `distfilt` command-line front end.
//!
//! Exit codes: 0 success, 1 malformed input or I/O failure, 2 infeasible
//! design or failed verification, 3 violated standing assumption.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use distfilt::analysis::{build_global_error_system, verify_h2, verify_hinf, PerformanceReport};
use distfilt::decomp::detectability_decomposition;
use distfilt::example;
use distfilt::graph::{CommGraph, GraphFile, LaplacianData};
use distfilt::io::{read_json, write_json};
use distfilt::linalg::{lambda_min_sym, Mat};
use distfilt::plant::{OutputPartition, Plant, PlantFile};
use distfilt::sim::{export_csv, simulate, write_sidecar, Disturbance, SimConfig};
use distfilt::synthesis::{
    choose_kappa_h2, extract_g1, kappa_lambda_max, consensus_margin_matrix, minimize_gamma, replay_h2, synth_h2,
    synth_h2_lmi, synth_hinf, FilterDesign, Mode, SynthesisOptions,
};
use distfilt::{Error, Result};

#[derive(Parser)]
#[command(name = "distfilt", version, about = "H2 / H-infinity suboptimal distributed filter synthesis and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    H2,
    Hinf,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::H2 => Mode::H2,
            ModeArg::Hinf => Mode::Hinf,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize filter gains and verify them.
    Synth {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value = "h2")]
        mode: ModeArg,
        #[arg(long)]
        gamma: Option<f64>,
        /// Bisect for the smallest feasible gamma.
        #[arg(long)]
        minimize: bool,
        /// Per-node weights m_i (comma separated).
        #[arg(long, value_delimiter = ',')]
        m: Option<Vec<f64>>,
        #[arg(long, default_value = "design.json")]
        out: PathBuf,
    },
    /// Recompute the global error system from a design and check a bound.
    Verify {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long, value_enum, default_value = "h2")]
        mode: ModeArg,
        /// Optional path for the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate plant and filters, writing a CSV trajectory.
    Simulate {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        w0: Option<Vec<f64>>,
        #[arg(long = "T", default_value_t = 20.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// zero | constant:v1,v2,.. | sin:amp,freq | noise:amp,hold
        #[arg(long, default_value = "zero", allow_hyphen_values = true)]
        disturbance: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in four-node benchmark end to end.
    Example {
        #[arg(long, default_value = "example_out")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "h2")]
        mode: ModeArg,
        #[arg(long)]
        gamma: Option<f64>,
    },
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    inputs: Vec<String>,
    options: serde_json::Value,
    seed: u64,
    tool_version: &'static str,
    outputs: Vec<String>,
}

fn seed() -> Result<u64> {
    match std::env::var("DISTFILT_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("DISTFILT_SEED must be an unsigned integer, got '{s}'"))),
        Err(_) => Ok(0),
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    s.into()
}

fn write_manifest(
    command: &str,
    inputs: &[&Path],
    options: serde_json::Value,
    outputs: &[&Path],
) -> Result<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        options,
        seed: seed()?,
        tool_version: env!("CARGO_PKG_VERSION"),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    for out in outputs {
        write_json(&manifest_path(out), &manifest)?;
    }
    Ok(())
}

fn load_system(path: &Path) -> Result<(Plant, OutputPartition)> {
    read_json::<PlantFile>(path)?.into_parts()
}

fn load_graph(path: &Path) -> Result<LaplacianData> {
    let file: GraphFile = read_json(path)?;
    LaplacianData::new(&CommGraph::from_file(&file)?)
}

fn synthesis_options(m: Option<Vec<f64>>) -> Result<SynthesisOptions> {
    let mut opts = SynthesisOptions {
        m,
        ..Default::default()
    };
    opts.solver.seed = seed()?;
    Ok(opts)
}

fn verify(
    plant: &Plant,
    part: &OutputPartition,
    lap: &LaplacianData,
    design: &FilterDesign,
    mode: Mode,
    gamma: f64,
) -> Result<PerformanceReport> {
    let sys = build_global_error_system(plant, part, lap, design)?;
    match mode {
        Mode::H2 => verify_h2(&sys, gamma),
        Mode::Hinf => verify_hinf(&sys, gamma),
    }
}

fn print_report(report: &PerformanceReport, mode: Mode) {
    let metric = match mode {
        Mode::H2 => format!("J = {}", fmt_opt(report.j)),
        Mode::Hinf => format!("||T_d||_inf = {}", fmt_opt(report.hinf)),
    };
    println!(
        "hurwitz = {} (spectral abscissa {:.6e}), {metric}, gamma = {:.6e}: {}",
        report.hurwitz,
        report.spectral_abscissa,
        report.gamma,
        if report.pass { "PASS" } else { "FAIL" }
    );
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.6e}"))
}

fn report_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".report.json");
    s.into()
}

fn cmd_synth(
    system: &Path,
    graph: &Path,
    mode: ModeArg,
    gamma: Option<f64>,
    minimize: bool,
    m: Option<Vec<f64>>,
    out: &Path,
) -> Result<bool> {
    let (plant, part) = load_system(system)?;
    let lap = load_graph(graph)?;
    let opts = synthesis_options(m.clone())?;
    let mode_l: Mode = mode.into();
    let (design, gamma_used) = match (mode_l, gamma, minimize) {
        (_, Some(_), true) => {
            return Err(Error::InvalidInput("--gamma and --minimize are exclusive".into()));
        }
        (_, _, true) => {
            let (g, d) = minimize_gamma(&plant, &part, &lap, mode_l, &opts)?;
            println!("minimized gamma = {g:.6e}");
            (d, g)
        }
        (Mode::H2, None, false) => {
            let (d, bound) = synth_h2(&plant, &part, &lap, &opts)?;
            println!("gamma_bound = {bound:.6e} (certified for every gamma above it)");
            let g = (bound * (1.0 + 1e-6)).max(f64::MIN_POSITIVE);
            (d, g)
        }
        (Mode::H2, Some(g), false) => (synth_h2_lmi(&plant, &part, &lap, g, &opts)?, g),
        (Mode::Hinf, Some(g), false) => (synth_hinf(&plant, &part, &lap, g, &opts)?, g),
        (Mode::Hinf, None, false) => {
            return Err(Error::InvalidInput("hinf mode needs --gamma or --minimize".into()));
        }
    };
    if let Some(c) = &design.certificate {
        println!("epsilon = {:.6e}, kappa = {:.6e}", c.epsilon, c.kappa);
    }
    let report = verify(&plant, &part, &lap, &design, mode_l, gamma_used)?;
    print_report(&report, mode_l);
    write_json(out, &design)?;
    let rpath = report_path(out);
    write_json(&rpath, &report)?;
    write_manifest(
        "synth",
        &[system, graph],
        json!({ "mode": mode, "gamma": gamma, "minimize": minimize, "m": m, "gamma_tested": gamma_used }),
        &[out, &rpath],
    )?;
    Ok(report.pass)
}

fn cmd_verify(
    system: &Path,
    graph: &Path,
    design_path: &Path,
    gamma: f64,
    mode: ModeArg,
    out: Option<&Path>,
) -> Result<bool> {
    let (plant, part) = load_system(system)?;
    let lap = load_graph(graph)?;
    let design: FilterDesign = read_json(design_path)?;
    let report = verify(&plant, &part, &lap, &design, mode.into(), gamma)?;
    print_report(&report, mode.into());
    if let Some(out) = out {
        write_json(out, &report)?;
        write_manifest(
            "verify",
            &[system, graph, design_path],
            json!({ "mode": mode, "gamma": gamma }),
            &[out],
        )?;
    }
    Ok(report.pass)
}

fn parse_disturbance(spec: &str, q: usize) -> Result<Disturbance> {
    let bad = || Error::InvalidInput(format!("unrecognized disturbance '{spec}'"));
    let (kind, args) = spec.split_once(':').unwrap_or((spec, ""));
    let nums = || -> Result<Vec<f64>> {
        args.split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect()
    };
    match kind {
        "zero" => Ok(Disturbance::Zero),
        "constant" => {
            let v = nums()?;
            let value = if v.len() == 1 { vec![v[0]; q] } else { v };
            Ok(Disturbance::Constant { value })
        }
        "sin" => match nums()?.as_slice() {
            [amp, freq] => Ok(Disturbance::Sinusoid { amp: *amp, freq: *freq }),
            _ => Err(bad()),
        },
        "noise" => match nums()?.as_slice() {
            [amp, hold] => Ok(Disturbance::Noise {
                amp: *amp,
                hold: *hold,
                seed: seed()?,
            }),
            _ => Err(bad()),
        },
        _ => Err(bad()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    system: &Path,
    graph: &Path,
    design_path: &Path,
    x0: Vec<f64>,
    w0: Option<Vec<f64>>,
    horizon: f64,
    dt: f64,
    stride: usize,
    disturbance: &str,
    out: &Path,
) -> Result<bool> {
    let (plant, part) = load_system(system)?;
    let lap = load_graph(graph)?;
    let design: FilterDesign = read_json(design_path)?;
    let cfg = SimConfig {
        x0,
        w0,
        disturbance: parse_disturbance(disturbance, plant.q())?,
        horizon,
        dt,
        stride,
    };
    let traj = simulate(&plant, &part, &lap, &design, &cfg)?;
    export_csv(&traj, out)?;
    write_sidecar(out, &cfg)?;
    write_manifest(
        "simulate",
        &[system, graph, design_path],
        serde_json::to_value(&cfg)?,
        &[out],
    )?;
    let last = traj.len() - 1;
    println!(
        "{} samples, t_end = {}, max node error norm at t_end = {:.6e}",
        traj.len(),
        traj.times[last],
        traj.max_error_norm(last)
    );
    Ok(true)
}

fn cmd_example(out_dir: &Path, mode: ModeArg, gamma: Option<f64>) -> Result<bool> {
    std::fs::create_dir_all(out_dir)?;
    let (plant, part) = example::plant_and_partition();
    let graph = example::graph();
    let lap = LaplacianData::new(&graph)?;
    let system_path = out_dir.join("system.json");
    let graph_path = out_dir.join("graph.json");
    write_json(&system_path, &PlantFile::from_parts(&plant, &part))?;
    write_json(&graph_path, &graph.to_file())?;
    let opts = synthesis_options(None)?;

    // our own constructive design
    let (design, bound) = synth_h2(&plant, &part, &lap, &opts)?;
    let cert = design.certificate.clone().expect("synthesized designs carry a certificate");
    let design_path = out_dir.join("design_h2.json");
    write_json(&design_path, &design)?;
    let own = verify(&plant, &part, &lap, &design, Mode::H2, bound * (1.0 + 1e-6))?;

    // replay with the reference parameters
    let decomps = part
        .c_blocks
        .iter()
        .map(|c| detectability_decomposition(c, &plant.a, &plant.e, &plant.h))
        .collect::<Result<Vec<_>>>()?;
    let g1 = decomps
        .iter()
        .zip(example::reference_g())
        .map(|(d, g)| extract_g1(d, &g))
        .collect();
    let (_, replay_bound) = replay_h2(
        &plant,
        &part,
        &lap,
        example::REFERENCE_EPSILON,
        example::REFERENCE_KAPPA,
        g1,
        &opts,
    )?;
    let margin_matrix = consensus_margin_matrix(&decomps, &lap.script_l, &[1.0; 4]);
    let eps_margin = lambda_min_sym(&(margin_matrix - Mat::identity(16, 16) * example::REFERENCE_EPSILON));
    let kappa_margin = kappa_lambda_max(&decomps, example::REFERENCE_EPSILON, example::REFERENCE_KAPPA);
    let kappa_min = choose_kappa_h2(&decomps, cert.epsilon, 1.0)?;

    // the published gains
    let reference = FilterDesign::from_gains(example::reference_f(), example::reference_g());
    let reference_path = out_dir.join("reference_design.json");
    write_json(&reference_path, &reference)?;
    let fixture = verify(&plant, &part, &lap, &reference, Mode::H2, example::REFERENCE_GAMMA_BOUND)?;

    let cfg = SimConfig::new(example::INITIAL_STATE.to_vec(), 20.0, 1e-3);
    let traj = simulate(&plant, &part, &lap, &reference, &cfg)?;
    let csv_path = out_dir.join("reference_trajectory.csv");
    export_csv(&traj, &csv_path)?;
    write_sidecar(&csv_path, &cfg)?;
    let final_error = traj.max_error_norm(traj.len() - 1);

    println!("theta                      = {:?}", lap.theta.as_slice());
    println!("{:<34}{:>14}{:>14}", "", "ours", "reference");
    println!("{:<34}{:>14.6}{:>14.6}", "epsilon", cert.epsilon, example::REFERENCE_EPSILON);
    println!("{:<34}{:>14.6}{:>14.6}", "kappa", cert.kappa, example::REFERENCE_KAPPA);
    println!("{:<34}{:>14.6}{:>14.6}", "gamma bound", bound, example::REFERENCE_GAMMA_BOUND);
    println!("{:<34}{:>14.6}{:>14.6}", "gamma bound, reference parameters", replay_bound, example::REFERENCE_GAMMA_BOUND);
    println!("{:<34}{:>14.6}{:>14.6}", "exact J", own.j.unwrap_or(f64::NAN), fixture.j.unwrap_or(f64::NAN));
    println!("{:<34}{:>14.6}{:>14.6}", "spectral abscissa", own.spectral_abscissa, fixture.spectral_abscissa);
    println!("lambda_min(T'(L x I)T + M - 0.42 I) = {eps_margin:.6e}");
    println!("kappa condition at 9.6: lambda_max  = {kappa_margin:.6e} (smallest feasible kappa for our epsilon: {kappa_min:.6})");
    println!("published gains: J < {} : {}", example::REFERENCE_GAMMA_BOUND, if fixture.pass { "PASS" } else { "FAIL" });
    println!("simulation (published gains, T = 20, dt = 1e-3): max node error norm at t = 20 is {final_error:.3e}");

    let mut ok = own.pass && fixture.pass;
    let mut outputs: Vec<PathBuf> = vec![system_path.clone(), graph_path.clone(), design_path, reference_path, csv_path];
    if let ModeArg::Hinf = mode {
        let g = gamma.unwrap_or(5.0);
        let d = synth_hinf(&plant, &part, &lap, g, &opts)?;
        let rep = verify(&plant, &part, &lap, &d, Mode::Hinf, g)?;
        let p = out_dir.join("design_hinf.json");
        write_json(&p, &d)?;
        print_report(&rep, Mode::Hinf);
        ok &= rep.pass;
        outputs.push(p);
    }
    let outs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    write_manifest("example", &[], json!({ "mode": mode, "gamma": gamma }), &outs)?;
    Ok(ok)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::AssumptionViolated(_) | Error::NotStronglyConnected => 3,
        Error::Infeasible { .. }
        | Error::NotHurwitz { .. }
        | Error::RiccatiFailed(_)
        | Error::Lemma4Violated { .. }
        | Error::NonFinite { .. }
        | Error::Numerical(_) => 2,
        Error::DimensionMismatch(_)
        | Error::InvalidInput(_)
        | Error::BadPencil(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_) => 1,
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth {
            system,
            graph,
            mode,
            gamma,
            minimize,
            m,
            out,
        } => cmd_synth(&system, &graph, mode, gamma, minimize, m, &out),
        Command::Verify {
            system,
            graph,
            design,
            gamma,
            mode,
            out,
        } => cmd_verify(&system, &graph, &design, gamma, mode, out.as_deref()),
        Command::Simulate {
            system,
            graph,
            design,
            x0,
            w0,
            horizon,
            dt,
            stride,
            disturbance,
            out,
        } => cmd_simulate(&system, &graph, &design, x0, w0, horizon, dt, stride, &disturbance, &out),
        Command::Example { out_dir, mode, gamma } => cmd_example(&out_dir, mode, gamma),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
