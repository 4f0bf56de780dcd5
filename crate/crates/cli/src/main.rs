use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rgg_core::harness::{self, ExperimentConfig};
use rgg_core::partition::CubePartition;
use rgg_core::theory::{self, ClassifyConstants, ThresholdReport};
use rgg_core::{DensitySpec, Error, Sampler, TailFamily};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERIC: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "rgg", version, about = "Random geometric graph connectivity lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Threshold radii, τ(n) and the predicted regime for one (density, n, r).
    Predict(PredictArgs),
    /// Draw one Poisson cloud and write it as CSV.
    Sample(SampleArgs),
    /// Run one trial and print its record as JSON.
    Connectivity(ConnectivityArgs),
    /// Run a sweep from a JSON config.
    Sweep(SweepArgs),
    /// Check per-cube counts against (1 ± γ) n ν(Q) on one cloud.
    Concentration(ConcentrationArgs),
    /// Turn a results CSV into a gnuplot script.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
struct DensityArgs {
    /// gaussian, exponential, heavy:<alpha> or light:<v>[:<scale>]
    #[arg(long, value_parser = parse_family)]
    density: TailFamily,
    /// Ambient dimension.
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Intensity (accepts 1e6).
    #[arg(long)]
    n: f64,
}

impl DensityArgs {
    fn spec(&self) -> Result<DensitySpec, Error> {
        DensitySpec::new(self.d, self.density)
    }
}

fn parse_family(s: &str) -> Result<TailFamily, String> {
    s.parse::<TailFamily>().map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    density: DensityArgs,
    #[arg(long)]
    r: f64,
    /// Concentration parameter for the superexponential radii.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    c_lo: f64,
    #[arg(long, default_value_t = 2.0)]
    c_hi: f64,
    #[arg(long, default_value_t = 1.0)]
    k_exp: f64,
    /// Print the full report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[command(flatten)]
    density: DensityArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a JSON sidecar with the spec, n and seed.
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConnectivityArgs {
    #[command(flatten)]
    density: DensityArgs,
    #[arg(long)]
    r: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Radius R for an isolated-vertex count inside B(0, R); repeatable.
    #[arg(long = "probe")]
    probes: Vec<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Results CSV.
    #[arg(long)]
    out: PathBuf,
    /// Full aggregate report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Trial records as JSON lines.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Worker threads; defaults to RGG_THREADS or the machine's parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct ConcentrationArgs {
    #[command(flatten)]
    density: DensityArgs,
    #[arg(long)]
    r: f64,
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Radius of the partitioned ball; defaults to the concentration R^(0).
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, default_value_t = rgg_core::partition::DEFAULT_MC_SAMPLES)]
    mc_samples: usize,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Results CSV written by `sweep`.
    #[arg(long)]
    csv: PathBuf,
    /// Script destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Prefix of the SVG files the script renders.
    #[arg(long, default_value = "rgg")]
    stem: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                ExitCode::from(EXIT_NUMERIC)
            } else {
                ExitCode::from(EXIT_USAGE)
            }
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Predict(a) => predict(a),
        Command::Sample(a) => sample(a),
        Command::Connectivity(a) => connectivity(a),
        Command::Sweep(a) => sweep(a),
        Command::Concentration(a) => concentration(a),
        Command::Report(a) => report(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn predict(a: PredictArgs) -> Result<(), Error> {
    let spec = a.density.spec()?;
    let constants = ClassifyConstants {
        c_lo: a.c_lo,
        c_hi: a.c_hi,
        k_exp: a.k_exp,
    };
    let report = theory::classify(&spec, a.density.n, a.r, a.gamma, constants)?;
    let mut out = io::stdout().lock();
    if a.json {
        serde_json::to_writer_pretty(&mut out, &report)?;
        writeln!(out)?;
    } else {
        write_table(&mut out, &report)?;
    }
    Ok(())
}

fn write_table(out: &mut impl Write, r: &ThresholdReport) -> io::Result<()> {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    let rows: Vec<(&str, String)> = vec![
        ("density", r.density.clone()),
        ("d", r.dimension.to_string()),
        ("n", format!("{}", r.n)),
        ("r", format!("{}", r.r_n)),
        ("regime", r.regime.to_string()),
        ("r0", format!("{:.6}", r.r0)),
        ("r1", format!("{:.6}", r.r1)),
        ("tau", opt(r.tau)),
        ("w_n", opt(r.w_n)),
        ("r*psi'(r0)", opt(r.scaled_radius)),
        ("A_n", opt(r.a_n)),
        ("B_n", opt(r.b_n)),
        ("expected_isolated", format!("{:.6e}", r.expected_isolated)),
        ("tail_empty_prob", format!("{:.6}", r.tail_empty_prob)),
        ("prediction", r.prediction.to_string()),
        (
            "flags",
            if r.flags.is_empty() {
                "-".to_string()
            } else {
                r.flags
                    .iter()
                    .map(|f| serde_json::to_value(f).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
                    .collect::<Vec<_>>()
                    .join(",")
            },
        ),
    ];
    for (k, v) in rows {
        writeln!(out, "{k:<18} {v}")?;
    }
    Ok(())
}

fn sample(a: SampleArgs) -> Result<(), Error> {
    let spec = a.density.spec()?;
    let sampler = Sampler::with_n_max(spec, a.density.n.max(rgg_core::sampler::DEFAULT_N_MAX))?;
    let cloud = sampler.sample(a.density.n, a.seed)?;
    let mut out = output(a.out.as_deref())?;
    cloud.write_csv(&mut out)?;
    out.flush()?;
    if let Some(path) = a.sidecar {
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, &cloud.sidecar())?;
        w.flush()?;
    }
    log::info!("sampled {} points", cloud.len());
    Ok(())
}

fn connectivity(a: ConnectivityArgs) -> Result<(), Error> {
    let spec = a.density.spec()?;
    let record = harness::single_trial(&spec, a.density.n, a.r, None, &a.probes, a.seed)?;
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &record)?;
    writeln!(out)?;
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), Error> {
    let config = ExperimentConfig::from_reader(File::open(&a.config)?)?;
    let report = match a.threads {
        Some(t) => harness::run_with_threads(&config, t)?,
        None => harness::run(&config)?,
    };
    let mut w = create(&a.out)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    if let Some(path) = a.json {
        let mut w = create(&path)?;
        report.write_json(&mut w)?;
        w.flush()?;
    }
    if let Some(path) = a.records {
        let mut w = create(&path)?;
        report.write_records(&mut w)?;
        w.flush()?;
    }
    if !report.failures.is_empty() {
        log::warn!("{} trials failed and were excluded", report.failures.len());
    }
    Ok(())
}

fn concentration(a: ConcentrationArgs) -> Result<(), Error> {
    let spec = a.density.spec()?;
    let n = a.density.n;
    let r = a.r.min(1.0);
    let radius = match a.radius {
        Some(radius) => radius,
        None => theory::concentration_radii(&spec, n, r, a.gamma)?.r0,
    };
    let partition = CubePartition::build(spec.dimension(), radius, a.gamma * r, a.seed)?;
    let masses = partition.region_masses(&spec, a.mc_samples)?;
    let sampler = Sampler::with_n_max(spec, n.max(rgg_core::sampler::DEFAULT_N_MAX))?;
    let cloud = sampler.sample(n, a.seed)?;
    let report = partition.check_with_masses(&cloud, &masses, a.gamma)?;
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Error> {
    let rows = harness::read_csv_rows(File::open(&a.csv)?)?;
    let script = harness::gnuplot_script(&rows, &a.csv.to_string_lossy(), &a.stem);
    let mut out = output(a.out.as_deref())?;
    out.write_all(script.as_bytes())?;
    out.flush()?;
    Ok(())
}
