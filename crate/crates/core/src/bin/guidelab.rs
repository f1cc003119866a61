use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use guidelab::cli::{self, CurveKind, Format, Layout};
use guidelab::config::{Experiment, Persona, DEFAULT_CONFIG};
use guidelab::guidance::StabilizerConfig;
use guidelab::{Error, GuidancePath};

/// Classifier-guided diffusion experiments on Gaussian-mixture data.
#[derive(Parser, Debug)]
#[command(name = "guidelab", version, about)]
struct Cli {
    /// Experiment config (JSON). Defaults to the bundled config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Format for sweep, curve and report tables.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw the training and validation sets.
    GenData,
    /// Train one classifier persona.
    Train {
        #[arg(long, value_parser = parse_persona)]
        persona: Persona,
    },
    /// Accuracy or sensitivity curve over t.
    Sensitivity {
        #[arg(long, value_parser = parse_persona, default_value = "non_robust")]
        classifier: Persona,
        #[arg(long, value_enum, default_value_t = CurveKind::Gradient)]
        metric: CurveKind,
        /// raw, x0pred or x0pred-stopgrad.
        #[arg(long, default_value = "raw")]
        path: GuidancePath,
        /// identity, ema:BETA, adam or adam:B1:B2:EPS (used by the stabilized metric).
        #[arg(long, default_value = "ema:0.99")]
        stabilizer: StabilizerConfig,
    },
    /// Guided batch for the configured sample setup, with its metrics report.
    Sample,
    /// Scale sweep of every configured setup.
    Sweep,
    /// Summary of all sweeps in the output directory.
    Report,
    /// Every step above in order, with the default curve set.
    Run,
    /// Print the bundled default config.
    DefaultConfig,
}

fn parse_persona(s: &str) -> Result<Persona, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load(cli: &Cli) -> guidelab::Result<Experiment> {
    let mut exp = match &cli.config {
        Some(p) => Experiment::load(p)?,
        None => Experiment::bundled()?,
    };
    if let Some(seed) = cli.seed {
        exp = exp.with_seed(seed)?;
    }
    if let Some(out) = &cli.out {
        exp = exp.with_output_dir(out);
    }
    Ok(exp)
}

fn show(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: &Cli) -> guidelab::Result<()> {
    if let Command::DefaultConfig = cli.command {
        print!("{DEFAULT_CONFIG}");
        return Ok(());
    }
    if let Command::Report = cli.command {
        let out = cli.out.clone().map_or_else(|| load(cli).map(|e| e.config.output_dir), Ok)?;
        return report(&out, cli.format);
    }
    let exp = load(cli)?;
    let layout = Layout::new(&exp.config.output_dir);
    println!("config hash {}", exp.hash());
    match &cli.command {
        Command::GenData => show(&cli::cmd_gen_data(&exp, &layout)?),
        Command::Train { persona } => show(&cli::cmd_train(&exp, &layout, *persona)?),
        Command::Sensitivity { classifier, metric, path, stabilizer } => {
            show(&cli::cmd_sensitivity(&exp, &layout, *classifier, *metric, *path, *stabilizer, cli.format)?)
        }
        Command::Sample => sample(&exp, &layout)?,
        Command::Sweep => sweep(&exp, &layout, cli.format)?,
        Command::Run => {
            show(&cli::cmd_gen_data(&exp, &layout)?);
            for p in [Persona::NonRobust, Persona::Robust] {
                show(&cli::cmd_train(&exp, &layout, p)?);
            }
            for (p, kind, path, stab) in cli::default_curves() {
                show(&cli::cmd_sensitivity(&exp, &layout, p, kind, path, stab, cli.format)?);
            }
            sample(&exp, &layout)?;
            sweep(&exp, &layout, cli.format)?;
            report(&exp.config.output_dir, cli.format)?;
        }
        Command::Report | Command::DefaultConfig => unreachable!("handled above"),
    }
    Ok(())
}

fn sample(exp: &Experiment, layout: &Layout) -> guidelab::Result<()> {
    let (files, r) = cli::cmd_sample(exp, layout)?;
    show(&files);
    println!(
        "sample: oracle accuracy {:.4}, fd {:.4}, cfd {:.4}, diverged {}/{}",
        r.target_accuracy_oracle,
        r.fd,
        r.cfd,
        r.n_diverged,
        r.n_samples + r.n_diverged
    );
    Ok(())
}

fn sweep(exp: &Experiment, layout: &Layout, format: Format) -> guidelab::Result<()> {
    let (files, results) = cli::cmd_sweep(exp, layout, format)?;
    show(&files);
    for (name, rows) in results {
        for r in rows {
            println!("{name:<24} s={:<8} acc={:.4} fd={:.4} cfd={:.4} diverged={}", r.scale, r.acc_oracle(), r.fd(), r.cfd(), r.n_diverged);
        }
    }
    Ok(())
}

fn report(out: &std::path::Path, format: Format) -> guidelab::Result<()> {
    let (path, rep) = cli::cmd_report(out, format)?;
    println!("wrote {}", path.display());
    match rep.best_row() {
        Some(b) => println!("best: {} at s={} (acc {:.4}, fd {:.4}, cfd {:.4})", b.setup, b.scale, b.acc_oracle, b.fd, b.cfd),
        None => println!("best: none reaches oracle accuracy {}", rep.accuracy_threshold),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::EmptyReport { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
