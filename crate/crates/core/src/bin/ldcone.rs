use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use ldcone::cone::DEFAULT_TOL;
use ldcone::experiments::{self, ExperimentName, ExperimentSpec};
use ldcone::faces::{estimate_gamma, FaceSpec, GammaEstimate};
use ldcone::reduction::{
    build_certificate, build_chain_for_review, check_certificate_empirically, verify_chain, ChainReport, EmpiricalReport,
    ErrorBoundCertificate, ProblemFile,
};
use ldcone::{Error, Result};

#[derive(Parser)]
#[command(name = "ldcone", version, about = "Log-determinant cone experiments and error-bound certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its table as CSV.
    Run {
        /// tight_fd, tight_fs_holder, tight_fs_log, tight_finf_log, tight_fr,
        /// gamma_scan or certificate_check
        experiment: String,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        kmin: Option<f64>,
        #[arg(long)]
        kmax: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// File of key=value lines; command-line flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra experiment option, repeatable (e.g. --set rank=2).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Verify a reduction chain and write its error-bound certificate.
    Certify {
        #[arg(long)]
        problem: PathBuf,
        /// Output JSON; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        /// Also sample the error bound with this many points.
        #[arg(long)]
        check: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate gamma for a face given by its exposing vector.
    Gamma {
        #[arg(long)]
        face: PathBuf,
        /// gd, glog, sqrt or abs
        #[arg(long)]
        g: String,
        #[arg(long)]
        eta: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct CertifyOutput {
    verification: ChainReport,
    certificate: Option<ErrorBoundCertificate>,
    empirical: Option<EmpiricalReport>,
}

#[derive(Serialize)]
struct GammaOutput {
    face: String,
    residual: String,
    eta: f64,
    samples: usize,
    estimate: GammaEstimate,
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run_experiment(
    experiment: &str,
    flags: [(&str, Option<String>); 6],
    config: Option<&Path>,
    set: &[String],
) -> Result<()> {
    let name: ExperimentName = experiment.parse()?;
    let mut spec = ExperimentSpec::new(name);
    if let Some(c) = config {
        spec.apply_config(&fs::read_to_string(c)?)?;
    }
    for kv in set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        spec.set(k.trim(), v.trim())?;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            spec.set(k, &v)?;
        }
    }
    let table = experiments::run(&spec)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_out(spec.out.as_deref(), &String::from_utf8_lossy(&buf))?;
    if let Some(p) = &spec.out {
        eprintln!("{}: {} rows -> {}", name, table.rows.len(), p.display());
    }
    Ok(())
}

fn certify(problem: &Path, out: Option<&Path>, tol: f64, check: Option<usize>, seed: u64) -> Result<bool> {
    let file: ProblemFile = serde_json::from_str(&fs::read_to_string(problem)?)?;
    let prob = file.problem()?;
    let mut steps = build_chain_for_review(prob.d, &file.chain, tol)?;
    let report = verify_chain(&prob, &mut steps, tol);
    let (certificate, empirical) = if report.passed {
        let cert = build_certificate(&prob, &steps, &file.gammas, tol)?;
        let emp = match check {
            Some(n) => Some(check_certificate_empirically(&prob, &steps, &cert, n, 1.0, seed)?),
            None => None,
        };
        (Some(cert), emp)
    } else {
        (None, None)
    };

    match (&certificate, &report.failure) {
        (Some(c), _) => {
            eprintln!("chain verified: {} step(s), upper bound {}", c.d_pps, c.d_pps_upper_bound);
            eprintln!("case {}", c.case_label);
            eprintln!("residual r(t) = {}", c.formula);
            if let Some(e) = &empirical {
                eprintln!(
                    "sampled: fitted c = {:.6e}, small-argument slope = {:.3}, {}",
                    e.fitted_c,
                    e.small_arg_slope,
                    if e.passed { "consistent" } else { "INCONSISTENT" }
                );
            }
        }
        (None, Some(f)) => eprintln!("chain rejected at step {}: {} ({})", f.step, f.condition, f.detail),
        (None, None) => {}
    }
    let passed = report.passed && empirical.as_ref().is_none_or(|e| e.passed);
    let output = CertifyOutput {
        verification: report,
        certificate,
        empirical,
    };
    write_out(out, &(serde_json::to_string_pretty(&output)? + "\n"))?;
    Ok(passed)
}

fn gamma(face: &Path, g: &str, eta: f64, samples: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let spec: FaceSpec = serde_json::from_str(&fs::read_to_string(face)?)?;
    let f = spec.resolve()?;
    let g = experiments::named_residual(g)?;
    let estimate = estimate_gamma(&f, &g, eta, samples, seed)?;
    let output = GammaOutput {
        face: f.kind.name().to_string(),
        residual: g.formula(),
        eta,
        samples,
        estimate,
    };
    write_out(out, &(serde_json::to_string_pretty(&output)? + "\n"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            experiment,
            d,
            kmin,
            kmax,
            points,
            seed,
            out,
            config,
            set,
        } => {
            let flags = [
                ("d", d.map(|v| v.to_string())),
                ("kmin", kmin.map(|v| v.to_string())),
                ("kmax", kmax.map(|v| v.to_string())),
                ("points", points.map(|v| v.to_string())),
                ("seed", seed.map(|v| v.to_string())),
                ("out", out.map(|p| p.display().to_string())),
            ];
            run_experiment(&experiment, flags, config.as_deref(), &set).map(|_| true)
        }
        Command::Certify {
            problem,
            out,
            tol,
            check,
            seed,
        } => certify(&problem, out.as_deref(), tol, check, seed),
        Command::Gamma {
            face,
            g,
            eta,
            samples,
            seed,
            out,
        } => gamma(&face, &g, eta, samples, seed, out.as_deref()).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
