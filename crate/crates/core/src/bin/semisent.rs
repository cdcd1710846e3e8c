use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use semisent::harness::{self, split_overrides, Config};
use semisent::{Error, Result};

/// Speech sentiment classification with pseudo-label pretraining.
///
/// Any config key can be overridden with `--section.key value`, e.g.
/// `--baseline.lr 0.02` or `--sweep.budgets=0.1,0.5,1`.
#[derive(Parser)]
#[command(name = "semisent", version)]
struct Cli {
    /// Key=value config file with [section] headers.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `run.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest, resolve majority votes and report discards.
    Prepare { manifest: PathBuf },
    /// Train the configured stages and write reports for val and eval.
    Run,
    /// Paired baseline / pretrained runs over `sweep.budgets`.
    Sweep,
    /// Pseudo-label the pretraining pool and score the labeler.
    Label,
    /// Score a saved model on a manifest, or re-derive metrics from a
    /// predictions file.
    Eval {
        #[arg(long, requires = "manifest", conflicts_with = "predictions")]
        model: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every layer and the full model.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Write a synthetic corpus (manifests, features, embeddings, text corpus).
    Synth,
}

fn config(cli: &Cli, overrides: &[(String, String)]) -> Result<Config> {
    let mut c = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for (k, v) in overrides {
        c.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        c.set("run.seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        c.set("run.out", &out.to_string_lossy())?;
    }
    Ok(c)
}

fn out_dir(c: &Config) -> PathBuf {
    PathBuf::from(c.raw("run.out"))
}

fn execute(cli: &Cli, overrides: &[(String, String)]) -> Result<()> {
    let c = config(cli, overrides)?;
    match &cli.command {
        Command::Prepare { manifest } => {
            let r = harness::cmd_prepare(manifest, &out_dir(&c))?;
            println!("{}: kept {}, discarded {}", r.manifest.display(), r.kept, r.discarded.len());
        }
        Command::Run => {
            let summary = harness::cmd_run(&c)?;
            for (name, split, r) in &summary.reports {
                println!(
                    "{name} {split}: uw F1 {:.4}, w F1 {:.4}, w REC {:.4}",
                    r.unweighted.f1, r.weighted.f1, r.weighted.recall
                );
            }
        }
        Command::Sweep => {
            let curve = harness::cmd_sweep(&c)?;
            print!("{}{}", curve.to_csv(), curve.summary());
        }
        Command::Label => {
            let rows = harness::cmd_label(&c)?;
            print!("{}", harness::labeler_report(&rows));
        }
        Command::Eval { model, manifest, predictions } => match (model, manifest, predictions) {
            (Some(m), Some(d), None) => {
                let r = harness::cmd_eval(m, d, &out_dir(&c))?;
                print!("{}", r.to_csv());
            }
            (None, None, Some(p)) => print!("{}", harness::metrics_from_predictions(p)?.to_csv()),
            _ => return Err(Error::Config("eval needs --model with --manifest, or --predictions".into())),
        },
        Command::Gradcheck { seeds, samples, tolerance } => {
            let reports = harness::cmd_gradcheck(*seeds, *samples, *tolerance)?;
            let mut failed = 0;
            for r in &reports {
                println!(
                    "{:<12} checked {:>4}  max rel err {:.3e}  {}",
                    r.fragment,
                    r.checked,
                    r.max_rel_error(),
                    if r.passed() { "ok" } else { "FAIL" }
                );
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                return Err(Error::NonFinite(format!("{failed} gradient checks above tolerance")));
            }
        }
        Command::Synth => {
            let s = harness::cmd_synth(&c)?;
            for (name, path) in &s.manifests {
                println!("{name}: {}", path.display());
            }
            println!("text corpus: {}", s.text_corpus.display());
            println!("3-way disagreements: {}", s.discarded);
            let conf = s.root.join("experiment.conf");
            std::fs::write(&conf, harness::synthetic_run_config(Path::new(".")).render())
                .map_err(|e| semisent::Error::Io { context: format!("writing {}", conf.display()), source: e })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let (rest, overrides) = match split_overrides(args) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
