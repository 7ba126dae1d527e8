use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mashvco::theory::{sqnr_curve, TheoryParams};
use mashvco_cli::compare::compare;
use mashvco_cli::error::{CliError, CliResult};
use mashvco_cli::recipes::{find, RECIPES};
use mashvco_cli::run::{output_root_from_env, run, RunManifest, RunOptions, OUTPUT_ROOT_ENV};
use mashvco_cli::spec::{load_layers, parse_spec, resolve};
use mashvco_cli::tools::{calibrate_capture, load_stream, parse_orders, save_stream, Corrector};

/// Behavioral MASH VCO ADC experiments.
#[derive(Parser)]
#[command(name = "mashvco", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a spec file or a bundled recipe.
    Run(RunArgs),
    /// List bundled recipes.
    List {
        /// Print the TOML of one recipe instead.
        #[arg(long)]
        show: Option<String>,
    },
    /// Compare headline metrics of two runs.
    Compare {
        /// Manifest file or run directory.
        a: PathBuf,
        b: PathBuf,
        /// Largest allowed |delta| in dB; defaults to the tolerance stored in the manifest.
        #[arg(long)]
        tol_db: Option<f64>,
    },
    /// Closed-form SQNR limits.
    Theory(TheoryArgs),
    /// Fit a nonlinearity model to a full-rate capture.
    Calibrate(CalibrateArgs),
    /// Correct and decimate a full-rate stream.
    Correct(CorrectArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Spec file path or bundled recipe name.
    spec: String,
    /// Dotted-path override, e.g. `config.n_samples=8192`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shorthand for `--set config.seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Results directory root.
    #[arg(long, env = OUTPUT_ROOT_ENV)]
    output_root: Option<PathBuf>,
    /// Exact results directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Resolve and validate only.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0])]
    osr: Vec<f64>,
    #[arg(long)]
    n_phi1: Option<usize>,
    #[arg(long)]
    n_phi2: Option<usize>,
    /// First-stage frequency range, Hz.
    #[arg(long)]
    f_range1: Option<f64>,
    /// Second-stage frequency range, Hz.
    #[arg(long)]
    f_range2: Option<f64>,
    #[arg(long)]
    amplitude_fraction: Option<f64>,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Full-rate output stream (.csv, or raw f64 with a .json sidecar).
    #[arg(long)]
    capture: PathBuf,
    /// Model document to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the fixed-point LUT document and its hex tables next to it.
    #[arg(long)]
    lut: Option<PathBuf>,
    /// Tone frequency; located from the spectrum when omitted.
    #[arg(long)]
    f_in: Option<f64>,
    #[arg(long, default_value_t = 16)]
    osr: usize,
    /// ni,nj,nk
    #[arg(long, default_value = "5,5,2")]
    orders: String,
}

#[derive(Args)]
struct CorrectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// `nl_model` or `correction_lut` document.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    osr: usize,
    /// Floating-point correction instead of the LUT path.
    #[arg(long)]
    float: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::List { show } => cmd_list(show),
        Command::Compare { a, b, tol_db } => cmd_compare(a, b, tol_db),
        Command::Theory(a) => cmd_theory(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Correct(a) => cmd_correct(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = match e {
                CliError::Validation(_) => "validation error",
                CliError::Numerical(_) => "numerical failure",
                CliError::Breach(_) => "tolerance breach",
            };
            eprintln!("mashvco: {class}: {e}");
            e.exit_code()
        }
    }
}

fn cmd_run(a: RunArgs) -> CliResult<()> {
    let mut sets = a.sets;
    if let Some(s) = a.seed {
        sets.push(format!("config.seed={s}"));
    }
    let plan = resolve(parse_spec(&load_layers(&a.spec, &sets)?)?)?;
    if a.check {
        println!("{}: ok ({} variant(s))", plan.name, plan.variants.len());
        return Ok(());
    }
    let opts = RunOptions {
        output_root: a.output_root.unwrap_or_else(output_root_from_env),
        output_dir: a.out,
        jobs: a.jobs,
    };
    let (dir, manifest) = run(&plan, &opts)?;
    println!("{} -> {}", manifest.recipe, dir.display());
    println!("config hash {}", manifest.config_hash);
    for (k, v) in &manifest.metrics {
        println!("  {k:<40} {v:>10.3}");
    }
    Ok(())
}

fn cmd_list(show: Option<String>) -> CliResult<()> {
    if let Some(name) = show {
        let r = find(&name).ok_or_else(|| CliError::Validation(format!("unknown recipe '{name}'")))?;
        print!("{}", r.text);
        return Ok(());
    }
    for r in &RECIPES {
        let spec = parse_spec(&toml::from_str(r.text)?)?;
        let kind = serde_json::to_value(spec.kind)?;
        println!(
            "{:<18} {:<12} {}",
            r.name,
            kind.as_str().unwrap_or_default(),
            spec.description
        );
    }
    Ok(())
}

fn cmd_compare(a: PathBuf, b: PathBuf, tol_db: Option<f64>) -> CliResult<()> {
    let report = compare(&RunManifest::load(&a)?, &RunManifest::load(&b)?, tol_db)?;
    print!("{}", report.render());
    match report.breaches() {
        0 => Ok(()),
        n => Err(CliError::Breach(format!(
            "{n} metric(s) differ by more than {} dB",
            report.tolerance_db
        ))),
    }
}

fn cmd_theory(a: TheoryArgs) -> CliResult<()> {
    let mut p = TheoryParams::table1();
    if let Some(v) = a.n_phi1 {
        p.n_phi1 = v;
    }
    if let Some(v) = a.n_phi2 {
        p.n_phi2 = v;
    }
    if let Some(v) = a.f_range1 {
        p.f_range1 = v;
    }
    if let Some(v) = a.f_range2 {
        p.f_range2 = v;
    }
    if let Some(v) = a.amplitude_fraction {
        p.amplitude_fraction = v;
    }
    let rows = sqnr_curve(&p, &a.osr)?;
    let mut csv = String::from("osr,sqnr_single_db,sqnr_mash_db\n");
    println!("{:>8}  {:>12}  {:>12}", "osr", "single [dB]", "mash [dB]");
    for r in &rows {
        println!("{:>8}  {:>12.3}  {:>12.3}", r.osr, r.sqnr_single, r.sqnr_mash);
        csv.push_str(&format!("{},{},{}\n", r.osr, r.sqnr_single, r.sqnr_mash));
    }
    if let Some(out) = a.out {
        std::fs::write(out, csv)?;
    }
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs) -> CliResult<()> {
    let capture = load_stream(&a.capture)?;
    let orders = parse_orders(&a.orders)?;
    let (cal, lut, summary) = calibrate_capture(&capture, a.f_in, a.osr, orders)?;
    std::fs::write(&a.out, cal.model.to_json()?)?;
    if let Some(p) = &a.lut {
        std::fs::write(p, lut.to_json()?)?;
        let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(std::path::Path::new("."));
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("lut");
        lut.write_hex(dir, stem)?;
    }
    println!(
        "fit: {} iterations, residual rms {:.4e} of dist rms {:.4e}",
        cal.report.iterations, cal.report.residual_rms, cal.report.dist_rms
    );
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_correct(a: CorrectArgs) -> CliResult<()> {
    let d = load_stream(&a.input)?;
    let corrector = Corrector::from_json(&std::fs::read_to_string(&a.model)?, a.float)?;
    let (out, diag) = corrector.apply(&d, a.osr)?;
    save_stream(&out, &a.out)?;
    println!("{} samples at {} Hz -> {}", out.len(), out.rate, a.out.display());
    if let Some(diag) = diag {
        println!("{}", serde_json::to_string(&diag)?);
    }
    Ok(())
}
