use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hankel::asymptotics::predict;
use hankel::moments::WeightSpec;
use hankel::pipeline::{
    auto_precision, compute, report, scan, write_csv, ComputeParams, Precision, PrecisionSearch, RunRecord,
    DEFAULT_BLOCK,
};
use hankel::Error;

#[derive(Parser)]
#[command(name = "hankel", version, about = "Smallest eigenvalues of Hankel moment matrices in exact fixed point")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smallest eigenvalues for one matrix order.
    Compute {
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        common: Common,
        /// Fractional bits K; ignored with --auto-precision.
        #[arg(long, default_value_t = 1024)]
        bits: u32,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// One run per order, written as CSV.
    Scan {
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        n_list: Vec<usize>,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1024)]
        bits: u32,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fits the leading exponent to a scan CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
        /// Fit report as JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Two-column `x y` table for plotting.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Closed-form asymptotic predictions.
    Predict {
        #[arg(long)]
        n: usize,
    },
    /// Times one order over several worker counts.
    Scaling {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1024)]
        bits: u32,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        worker_list: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_BLOCK)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 1)]
    beta_num: u32,
    #[arg(long, default_value_t = 2)]
    beta_den: u32,
    /// Block size of the truncated inverse.
    #[arg(long, default_value_t = DEFAULT_BLOCK)]
    k: usize,
    #[arg(long, env = "HANKEL_WORKERS", default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct SearchArgs {
    /// Search for the smallest sufficient multiple of the precision step.
    #[arg(long)]
    auto_precision: bool,
    /// First precision of the search; defaults to 1024 * ceil(N/500).
    #[arg(long)]
    start_bits: Option<u32>,
    #[arg(long, default_value_t = 16384)]
    max_bits: u32,
    #[arg(long, default_value_t = 1e-15)]
    tolerance: f64,
}

impl SearchArgs {
    fn search(&self) -> PrecisionSearch {
        PrecisionSearch {
            start_bits: self.start_bits,
            max_bits: self.max_bits,
            tolerance: self.tolerance,
            ..PrecisionSearch::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl Common {
    fn params(&self, n: usize, bits: u32) -> Result<ComputeParams, Error> {
        let spec = WeightSpec::new(self.beta_num, self.beta_den)?;
        Ok(ComputeParams::new(n, bits).with_spec(spec).with_k(self.k).with_workers(self.workers))
    }
}

fn output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit(records: &[RunRecord], format: Format, out: impl Write) -> Result<(), Error> {
    match format {
        Format::Csv => write_csv(records, out),
        Format::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &records[0])?;
            writeln!(out)?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Compute { n, common, bits, search, format } => {
            let params = common.params(n, bits)?;
            let record = if search.auto_precision {
                auto_precision(&params, &search.search())?.record
            } else {
                compute(&params)?
            };
            emit(&[record], format, output(&None)?)
        }
        Command::Scan { n_list, common, bits, search, out } => {
            let template = common.params(1, bits)?;
            let precision = if search.auto_precision { Precision::Auto(search.search()) } else { Precision::Fixed(bits) };
            let rows = scan(&n_list, &template, precision);
            for row in &rows {
                if let Some(e) = &row.error {
                    eprintln!("N = {}: {e}", row.record.n);
                }
            }
            let records: Vec<RunRecord> = rows.into_iter().map(|r| r.record).collect();
            write_csv(&records, output(&out)?)
        }
        Command::Fit { input, out, plot } => {
            let rep = report(File::open(&input)?)?;
            let mut w = output(&out)?;
            serde_json::to_writer_pretty(&mut w, &rep)?;
            writeln!(w)?;
            if let Some(p) = plot {
                std::fs::write(p, &rep.plot)?;
            }
            Ok(())
        }
        Command::Predict { n } => {
            let mut w = output(&None)?;
            serde_json::to_writer_pretty(&mut w, &predict(n)?)?;
            writeln!(w)?;
            Ok(())
        }
        Command::Scaling { n, bits, worker_list, k, out } => {
            let mut records = Vec::new();
            for workers in worker_list {
                let params = ComputeParams::new(n, bits).with_k(k).with_workers(workers);
                records.push(compute(&params)?);
            }
            write_csv(&records, output(&out)?)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_precision_exhausted() {
        return 2;
    }
    match e {
        Error::InvalidInput(_) | Error::Schema(_) | Error::DegenerateFit(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
