use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sarith::experiment::{
    emit_report, read_csv, run, ExperimentConfig, Format, Mode, RunOutput, SamplerSpec, Summary,
};
use sarith::sring::{parse_rational, PlaceSet};

#[derive(Parser)]
#[command(name = "sarith", version, about = "Counting experiments for S-arithmetic Diophantine approximation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact and Monte Carlo volumes along the ladder.
    Volume(RunArgs),
    /// Solution counts along the ladder.
    Count(RunArgs),
    /// Nontrivial solutions of the Dirichlet system.
    Dirichlet(RunArgs),
    /// Count-to-volume ratios for a divergent volume integral.
    Asymptotic(RunArgs),
    /// Plateau or growth of counts along the ladder.
    Dichotomy(RunArgs),
    /// Run every property suite; exits nonzero on failure.
    Verify(RunArgs),
    /// Re-emit reports from a records CSV.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Svg,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
            FormatArg::Svg => Format::Svg,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of matrices, or cases per suite for `verify`.
    #[arg(long)]
    samples: Option<u64>,
    /// Drop ladder steps with `T_inf prod_p T_p` above this rational.
    #[arg(long = "max-T")]
    max_t: Option<String>,
    /// Report formats; repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    format: Vec<FormatArg>,
}

#[derive(Args)]
struct ReportArgs {
    /// Records CSV written by an earlier run.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "svg")]
    format: Vec<FormatArg>,
}

fn default_verify_config() -> ExperimentConfig {
    ExperimentConfig {
        mode: Mode::Verify,
        places: PlaceSet::real_only(),
        m: 1,
        n: 1,
        psi: None,
        ladder: None,
        congruence: None,
        sampler: SamplerSpec { seed: 0, precision: 4, real_resolution: sarith::sampler::DEFAULT_REAL_RESOLUTION.to_string() },
        samples: 1,
        mc_samples: 0,
        verify_cases: 50,
        max_t: None,
        output: Default::default(),
    }
}

fn load(args: &RunArgs, mode: Mode) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None if mode == Mode::Verify => default_verify_config(),
        None => bail!("--config is required for this subcommand"),
    };
    if config.mode != mode {
        eprintln!("note: running in {mode:?} mode (config says {:?})", config.mode);
        config.mode = mode;
    }
    if let Some(seed) = args.seed {
        config.sampler.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output.dir = out.clone();
    }
    if let Some(k) = args.samples {
        if mode == Mode::Verify {
            config.verify_cases = k;
        } else {
            config.samples = k;
        }
    }
    if let Some(t) = &args.max_t {
        config.max_t = Some(parse_rational(t).context("--max-T")?);
    }
    if !args.format.is_empty() {
        config.output.formats = args.format.iter().map(|&f| f.into()).collect();
    }
    Ok(config)
}

fn print_summary(output: &RunOutput) {
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    match &output.summary {
        Summary::Volume { regions } => {
            for r in regions {
                let mc = r
                    .estimate
                    .as_ref()
                    .map_or("-".to_string(), |e| format!("{:.6} +- {:.6}", e.estimate, e.std_error));
                println!("step {}: exact {} ({:.6}), monte carlo {mc}", r.step, r.exact.total, r.exact.total.value());
            }
        }
        Summary::Count(c) | Summary::Dichotomy { counts: c, .. } => {
            for s in &c.steps {
                println!(
                    "step {}: |T| = {:.4e}, V = {:.6e}, median N = {}, median ratio = {:.5}",
                    s.step,
                    sarith::sring::to_f64(&s.profile.size()),
                    s.volume,
                    s.median_count,
                    s.median_ratio
                );
            }
            if let Some(e) = c.empirical_exponent {
                println!("empirical exponent of N: {e:.4} (d = {})", c.d);
            }
            if let Summary::Dichotomy { dichotomy: d, .. } = &output.summary {
                println!(
                    "divergent: {}, plateau fraction {:.3}, growth fraction {:.3} (steps {} -> {})",
                    d.divergent, d.plateau_fraction, d.growth_fraction, d.mid_step, d.final_step
                );
            }
        }
        Summary::Dirichlet { rows, failures } => {
            println!("{} instances, {failures} failures", rows.len());
            for r in rows.iter().filter(|r| !r.verified) {
                println!("sample {} step {}: {}", r.sample, r.step, r.error.as_deref().unwrap_or("did not verify"));
            }
        }
        Summary::Verify { suites, passed } => {
            for s in suites {
                let status = if s.passed { "PASS" } else { "FAIL" };
                println!("{status} {} ({} cases, {} failures)", s.name, s.cases, s.failures);
                for n in &s.notes {
                    println!("    {n}");
                }
            }
            println!("{}", if *passed { "all suites passed" } else { "some suites failed" });
        }
    }
    for e in &output.precision_events {
        eprintln!("precision: sample {} deepened at {} from {} to {}", e.sample, e.prime, e.from, e.to);
    }
}

fn write_reports(output: &RunOutput, dir: &Path) -> Result<()> {
    for &f in &output.config.output.formats {
        if output.records.is_empty() && f != Format::Json {
            continue;
        }
        let path = emit_report(output, f, dir)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn run_mode(args: &RunArgs, mode: Mode) -> Result<ExitCode> {
    let config = load(args, mode)?;
    let output = run(&config)?;
    print_summary(&output);
    write_reports(&output, &config.output.dir)?;
    Ok(if output.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn report(args: &ReportArgs) -> Result<ExitCode> {
    let file = std::fs::File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let records = read_csv(file)?;
    std::fs::create_dir_all(&args.out)?;
    for &f in &args.format {
        let path = args.out.join(format!("report.{}", Format::from(f).extension()));
        match Format::from(f) {
            Format::Csv => {
                let mut buf = Vec::new();
                sarith::experiment::write_csv(&records, &mut buf)?;
                std::fs::write(&path, buf)?;
            }
            Format::Svg => std::fs::write(&path, sarith::experiment::render_svg(&records)?)?,
            Format::Json => std::fs::write(&path, serde_json::to_string_pretty(&records)? + "\n")?,
        }
        eprintln!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Volume(a) => run_mode(a, Mode::Volume),
        Command::Count(a) => run_mode(a, Mode::Count),
        Command::Dirichlet(a) => run_mode(a, Mode::Dirichlet),
        Command::Asymptotic(a) => run_mode(a, Mode::Asymptotic),
        Command::Dichotomy(a) => run_mode(a, Mode::Dichotomy),
        Command::Verify(a) => run_mode(a, Mode::Verify),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
