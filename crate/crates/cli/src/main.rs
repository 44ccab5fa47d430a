mod report;

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::warn;

use mhgfilter::domain::{
    bookshelf_domain, generate_trace, mini_bookshelf_domain, parse_domain, parse_trace,
    serialize_domain, serialize_trace,
};
use mhgfilter::filter::{Filter, FilterError, FilterOptions, Mode, StepStats};
use mhgfilter::lifted::DEFAULT_ENUMERATION_CAP;
use mhgfilter::oracle::{expand, total_variation, GroundFilter};
use mhgfilter::{AnnotationTuple, Domain};

use report::{Outcome, RunReport};

const EXIT_DIVERGED: u8 = 1;
const EXIT_INCONSISTENT: u8 = 2;
const EXIT_PARSE: u8 = 3;
const EXIT_CAP: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(
    name = "mhgfilter",
    version,
    about = "Lifted multi-hypergraph filtering of annotation traces"
)]
struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Lifted,
    Ground,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a trace and report per-step statistics
    Filter {
        /// Domain file, or builtin:bookshelf / builtin:mini
        #[arg(long)]
        domain: String,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum, default_value = "lifted")]
        mode: ModeArg,
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
        max_groundings: u128,
        /// Where to write the JSON report
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run lifted and ground filtering side by side and print the
    /// total variation distance after every step
    Compare {
        #[arg(long)]
        domain: String,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
        max_groundings: u128,
    },
    /// Simulate the domain and write a trace
    Gentrace {
        #[arg(long)]
        domain: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        length: usize,
        /// 1-based step whose tuple is made unexplainable
        #[arg(long)]
        corrupt_at: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a domain file in canonical form
    Domain {
        #[arg(long)]
        domain: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        Self::new(EXIT_IO, format!("{}: {e}", path.display()))
    }
}

impl From<FilterError> for Failure {
    fn from(e: FilterError) -> Self {
        let code = match &e {
            FilterError::TraceInconsistent { .. } => EXIT_INCONSISTENT,
            FilterError::InvalidTuple { .. } => EXIT_PARSE,
            _ if e.is_enumeration_limit() => EXIT_CAP,
            _ => EXIT_PARSE,
        };
        Self::new(code, e)
    }
}

fn load_domain(arg: &str) -> Result<Domain, Failure> {
    match arg {
        "builtin:bookshelf" => Ok(bookshelf_domain()),
        "builtin:mini" => Ok(mini_bookshelf_domain()),
        _ if arg.starts_with("builtin:") => Err(Failure::new(
            EXIT_PARSE,
            format!("unknown built-in domain `{arg}`"),
        )),
        path => {
            let path = Path::new(path);
            let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            parse_domain(&text)
                .map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))
        }
    }
}

fn load_trace(path: &Path) -> Result<Vec<AnnotationTuple>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    parse_trace(&text).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::io(p, e)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Failure::new(EXIT_IO, format!("stdout: {e}")))
        }
    }
}

fn emit(line: &impl serde::Serialize) -> Result<(), Failure> {
    let mut s = serde_json::to_string(line).expect("stats serialize");
    s.push('\n');
    write_out(None, &s)
}

fn options(max_groundings: u128) -> FilterOptions {
    FilterOptions {
        max_groundings,
        ..FilterOptions::default()
    }
}

/// Steps either filter through the trace, stopping at the first inconsistency.
trait Stepper {
    fn initial_stats(&self) -> StepStats;
    fn step(&mut self, y: &AnnotationTuple) -> Result<StepStats, FilterError>;
}

impl Stepper for Filter<'_> {
    fn initial_stats(&self) -> StepStats {
        Filter::initial_stats(self)
    }
    fn step(&mut self, y: &AnnotationTuple) -> Result<StepStats, FilterError> {
        Filter::step(self, y)
    }
}

impl Stepper for GroundFilter<'_> {
    fn initial_stats(&self) -> StepStats {
        GroundFilter::initial_stats(self)
    }
    fn step(&mut self, y: &AnnotationTuple) -> Result<StepStats, FilterError> {
        GroundFilter::step(self, y)
    }
}

fn run_filter(
    f: &mut dyn Stepper,
    trace: &[AnnotationTuple],
) -> Result<(Vec<StepStats>, Outcome), Failure> {
    let mut steps = vec![f.initial_stats()];
    emit(&steps[0])?;
    for y in trace {
        match f.step(y) {
            Ok(s) => {
                emit(&s)?;
                steps.push(s);
            }
            Err(FilterError::TraceInconsistent { step, .. }) => {
                return Ok((steps, Outcome::Inconsistent { step }))
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok((steps, Outcome::Explained))
}

fn cmd_filter(
    domain: &str,
    trace: &Path,
    mode: ModeArg,
    max_groundings: u128,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let d = load_domain(domain)?;
    let tuples = load_trace(trace)?;
    let opts = options(max_groundings);
    let (mode, (steps, outcome)) = match mode {
        ModeArg::Lifted => (
            Mode::Lifted,
            run_filter(&mut Filter::new(&d, opts), &tuples)?,
        ),
        ModeArg::Ground => (
            Mode::Ground,
            run_filter(&mut GroundFilter::new(&d, opts)?, &tuples)?,
        ),
    };
    let report = RunReport::new(d.name(), mode, steps, outcome.clone());
    if let Some(p) = output {
        write_out(Some(p), &report.to_json())?;
    }
    let t = &report.totals;
    eprintln!(
        "max lifted {}, max ground {}, compression {:.1}",
        t.max_lifted, t.max_ground, t.compression_ratio
    );
    match outcome {
        Outcome::Explained => {
            eprintln!("explained {} steps", tuples.len());
            Ok(())
        }
        Outcome::Inconsistent { step } => Err(Failure::new(
            EXIT_INCONSISTENT,
            format!("trace inconsistent at step {step}"),
        )),
    }
}

#[derive(serde::Serialize)]
struct TvLine {
    step: usize,
    tv: f64,
}

fn cmd_compare(
    domain: &str,
    trace: &Path,
    tolerance: f64,
    max_groundings: u128,
) -> Result<(), Failure> {
    let d = load_domain(domain)?;
    let tuples = load_trace(trace)?;
    let opts = options(max_groundings);
    let mut lifted = Filter::new(&d, opts.clone());
    let mut ground = GroundFilter::new(&d, opts)?;
    let tv_now = |l: &Filter, g: &GroundFilter| -> Result<f64, Failure> {
        let e = expand(l.belief(), max_groundings).map_err(FilterError::from)?;
        Ok(total_variation(&e, g.belief()))
    };
    let diverged = |step: usize, tv: f64| {
        Failure::new(
            EXIT_DIVERGED,
            format!(
                "first divergence at step {step}: total variation {tv:e} exceeds {tolerance:e}"
            ),
        )
    };
    let tv = tv_now(&lifted, &ground)?;
    let mut max = tv;
    emit(&TvLine { step: 0, tv })?;
    if tv > tolerance {
        return Err(diverged(0, tv));
    }
    for (i, y) in tuples.iter().enumerate() {
        let step = i + 1;
        let l = lifted.step(y);
        let g = ground.step(y);
        match (l, g) {
            (Ok(_), Ok(_)) => {
                let tv = tv_now(&lifted, &ground)?;
                emit(&TvLine { step, tv })?;
                max = max.max(tv);
                if tv > tolerance {
                    return Err(diverged(step, tv));
                }
            }
            (
                Err(FilterError::TraceInconsistent { .. }),
                Err(FilterError::TraceInconsistent { .. }),
            ) => {
                return Err(Failure::new(
                    EXIT_INCONSISTENT,
                    format!("trace inconsistent at step {step} under both filters"),
                ))
            }
            (Err(FilterError::TraceInconsistent { .. }), Ok(_))
            | (Ok(_), Err(FilterError::TraceInconsistent { .. })) => {
                // one filter explains the tuple and the other does not
                emit(&TvLine { step, tv: 1.0 })?;
                return Err(diverged(step, 1.0));
            }
            (Err(e), _) | (_, Err(e)) => return Err(e.into()),
        }
    }
    let ll = (lifted.log_likelihood() - ground.log_likelihood()).abs();
    if ll > tolerance {
        return Err(Failure::new(
            EXIT_DIVERGED,
            format!("trace log-likelihoods differ by {ll:e}"),
        ));
    }
    eprintln!("max total variation {max:e} over {} steps", tuples.len());
    Ok(())
}

fn cmd_gentrace(
    domain: &str,
    seed: u64,
    length: usize,
    corrupt_at: Option<usize>,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let d = load_domain(domain)?;
    let t =
        generate_trace(&d, seed, length, corrupt_at).map_err(|e| Failure::new(EXIT_PARSE, e))?;
    if let Some(k) = t.dead_end {
        warn!(
            "no rule applies at step {k}; trace stops after {} tuples",
            t.tuples.len()
        );
    }
    if let (Some(k), None) = (corrupt_at, t.corrupted) {
        warn!(
            "trace has {} tuples, step {k} was not corrupted",
            t.tuples.len()
        );
    }
    write_out(output, &serialize_trace(&t.tuples))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Filter {
            domain,
            trace,
            mode,
            max_groundings,
            output,
        } => cmd_filter(&domain, &trace, mode, max_groundings, output.as_deref()),
        Command::Compare {
            domain,
            trace,
            tolerance,
            max_groundings,
        } => cmd_compare(&domain, &trace, tolerance, max_groundings),
        Command::Gentrace {
            domain,
            seed,
            length,
            corrupt_at,
            output,
        } => cmd_gentrace(&domain, seed, length, corrupt_at, output.as_deref()),
        Command::Domain { domain, output } => {
            let d = load_domain(&domain)?;
            write_out(output.as_deref(), &serialize_domain(&d))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PARSE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
