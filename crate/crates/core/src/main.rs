use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wbfbt::harness::{
    dump_matrices, run_component, run_spectrum, run_stokes, run_sweep, write_json, write_records, write_spectra, CsvSink,
    ExperimentConfig, OutputFormat, ResultRecord, SweepAxis, Target,
};
use wbfbt::Result;

#[derive(Parser, Debug)]
#[command(name = "wbfbt", version, about = "Sinker benchmark runs for Schur complement preconditioners")]
struct Cli {
    /// Flat key = value config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Exit with status 0 even when a run does not converge.
    #[arg(long, global = true)]
    allow_fail: bool,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the Stokes system once.
    Bench {
        /// Write A.mtx and B.mtx into this directory before solving.
        #[arg(long)]
        dump_matrices: Option<PathBuf>,
    },
    /// Solve a single block with its own V-cycle.
    Component {
        #[arg(long, default_value = "viscous")]
        target: Target,
    },
    /// Repeat a run over the values of one parameter.
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "stokes")]
        target: Target,
    },
    /// Dense spectra of the Schur complement and its preconditioned forms.
    Spectrum {
        #[arg(long, default_value = "spectra")]
        out_dir: PathBuf,
        /// Also write the spectrum preconditioned by the exact Schur complement.
        #[arg(long)]
        sanity: bool,
    },
}

macro_rules! overrides {
    ($($field:ident),* $(,)?) => {
        /// One flag per config field.
        #[derive(Args, Debug, Default)]
        struct Overrides {
            $(
                #[arg(long, global = true, value_name = "VALUE")]
                $field: Option<String>,
            )*
        }

        impl Overrides {
            fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
                $(
                    if let Some(v) = &self.$field {
                        cfg.set(stringify!($field), v)?;
                    }
                )*
                Ok(())
            }
        }
    };
}

overrides!(
    dim, order, level, sinkers, seed, dynamic_ratio, delta, omega, beta, schur, amp_left, amp_right, inner_vcycles,
    inner_mode, schur_sign, rtol, restart, max_iters, smoother_sweeps, cheb_lo_fraction, cheb_safety, power_iterations,
    coarse_level, backend, components, timing, output, format,
);

fn emit(cfg: &ExperimentConfig, records: &[ResultRecord]) -> Result<()> {
    match &cfg.output {
        Some(p) => write_records(p, cfg.format, records),
        None => {
            let out = std::io::stdout().lock();
            match cfg.format {
                OutputFormat::Csv => wbfbt::harness::write_csv(out, records),
                OutputFormat::Json => write_json(out, records),
            }
        }
    }
}

fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64], target: Target) -> Result<Vec<ResultRecord>> {
    if cfg.format == OutputFormat::Json {
        let recs = run_sweep(cfg, axis, values, target, |_| Ok(()))?;
        emit(cfg, &recs)?;
        return Ok(recs);
    }
    let out: Box<dyn Write> = match &cfg.output {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    let mut sink = CsvSink::new(out);
    run_sweep(cfg, axis, values, target, |r| sink.write(r))
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cli.overrides.apply(&mut cfg)?;
    cfg.validate()?;
    let records = match cli.command {
        Command::Bench { dump_matrices: dir } => {
            if let Some(dir) = dir {
                for p in dump_matrices(&cfg, &dir)? {
                    eprintln!("wrote {}", p.display());
                }
            }
            let r = vec![run_stokes(&cfg)?];
            emit(&cfg, &r)?;
            r
        }
        Command::Component { target } => {
            let r = vec![run_component(&cfg, target)?];
            emit(&cfg, &r)?;
            r
        }
        Command::Sweep { axis, values, target } => sweep(&cfg, axis, &values, target)?,
        Command::Spectrum { out_dir, sanity } => {
            let reports = run_spectrum(&cfg, sanity)?;
            for p in write_spectra(&out_dir, &cfg, &reports)? {
                eprintln!("wrote {}", p.display());
            }
            return Ok(true);
        }
    };
    for r in records.iter().filter(|r| !r.converged) {
        match &r.error {
            Some(e) => eprintln!("run failed: {e}"),
            None => eprintln!("not converged after {} iterations (residual {:e})", r.iterations, r.final_residual),
        }
    }
    Ok(records.iter().all(|r| r.converged))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let allow_fail = cli.allow_fail;
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) if allow_fail => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
