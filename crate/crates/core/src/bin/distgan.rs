use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use distgan::harness::{
    compare_runs, exit_code, gradcheck_command, render_comparison, run_experiment, write_comparison_csv,
    ExperimentConfig, Overrides, EXIT_CONFIG, EXIT_IO, EXIT_OK,
};
use distgan::nn::gradcheck::GradcheckOptions;
use distgan::nn::{Preset, DEFAULT_LEAKY_SLOPE};

#[derive(Parser)]
#[command(name = "distgan", version, about = "Distributed GAN training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the data, init and train seeds.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Check the config's [assert] thresholds and the privacy audit; exit 4 on failure.
        #[arg(long)]
        assert: bool,
    },
    /// Tabulate work, coverage and loss across finished runs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        /// Also write comparison.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the backpropagation engine.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
    /// Print the built-in network presets.
    ListPresets,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            workers,
            assert,
        } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return code(exit_code(&e));
                }
            };
            let overrides = Overrides {
                seed,
                out,
                workers,
                assert,
            };
            match run_experiment(cfg, &overrides) {
                Ok(report) => {
                    println!("wrote {}", report.out_dir.display());
                    if let Some(c) = &report.final_coverage {
                        println!(
                            "covered modes: {}/{}  quality: {:.4}",
                            c.covered_modes,
                            c.counts.len(),
                            c.high_quality_fraction
                        );
                    }
                    println!("audit: {} messages, {} flags", report.audit.messages, report.audit.flags.len());
                    for f in &report.assert_failures {
                        eprintln!("assert failed: {f}");
                    }
                    code(report.exit_code())
                }
                Err(failure) => {
                    if let Some(partial) = &failure.partial {
                        eprintln!(
                            "partial results for {} epochs written to {}",
                            partial.run.epochs_completed,
                            partial.out_dir.display()
                        );
                    }
                    eprintln!("error: {failure}");
                    code(failure.exit_code())
                }
            }
        }
        Command::Compare { runs, out } => match compare_runs(&runs) {
            Ok(rows) => {
                print!("{}", render_comparison(&rows));
                if let Some(dir) = out {
                    let written = std::fs::create_dir_all(&dir)
                        .map_err(distgan::Error::from)
                        .and_then(|()| Ok(std::fs::File::create(dir.join("comparison.csv"))?))
                        .and_then(|f| write_comparison_csv(&rows, f));
                    if let Err(e) = written {
                        eprintln!("error: {e}");
                        return code(EXIT_IO);
                    }
                }
                code(EXIT_OK)
            }
            Err(e) => {
                eprintln!("error: {e}");
                code(EXIT_CONFIG)
            }
        },
        Command::Gradcheck {
            seed,
            trials,
            inject_sign_flip,
        } => {
            let opts = GradcheckOptions {
                seed,
                trials,
                inject_sign_flip,
                ..Default::default()
            };
            match gradcheck_command(&opts) {
                Ok((report, c)) => {
                    println!(
                        "{} networks, {} coordinates, max relative error {:.3e} (tolerance {:.0e}): {}",
                        report.trials,
                        report.coordinates,
                        report.max_relative_error,
                        report.tolerance,
                        if report.passed() { "pass" } else { "FAIL" }
                    );
                    code(c)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    code(exit_code(&e))
                }
            }
        }
        Command::ListPresets => {
            for p in Preset::ALL {
                let sample_dim = match p {
                    Preset::Mnist => 784,
                    Preset::Ring => 2,
                };
                let noise = match p {
                    Preset::Mnist => 100,
                    Preset::Ring => 2,
                };
                let h = p.default_hidden();
                println!("[{}] sample_dim={sample_dim} noise_dim={noise} hidden={h}", p.name());
                if let Ok(g) = p.generator(noise, h, sample_dim) {
                    println!("  generator:     {g}");
                }
                if let Ok(d) = p.discriminator(sample_dim, h, DEFAULT_LEAKY_SLOPE) {
                    println!("  discriminator: {d}");
                }
            }
            code(EXIT_OK)
        }
    }
}
