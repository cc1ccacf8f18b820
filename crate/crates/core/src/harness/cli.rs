//! `cutnmix` command line.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{ablate, plot, run_eval, run_train, selftest, Mode, RunConfig};
use crate::datasets::{cifar::CifarLayout, export, DatasetKind};
use crate::error::{Error, Result};
use crate::models::Arch;

#[derive(Debug, Parser)]
#[command(name = "cutnmix", version, about = "Cut^nMix augmentation with online peer distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one run.
    Train(RunArgs),
    /// Re-evaluate a finished run directory.
    Eval {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the four ablation rows over several seeds.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated seeds (default: the config's `seeds`).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Draw accuracy curves for every run found under a directory.
    Plot {
        /// Directory searched for run directories; plots go to `<out>/plots`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the loss, gradient and mixing checks.
    Selftest,
    /// Write a dataset in CIFAR record layout.
    Export {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<DatasetArg>,
        #[arg(long, value_enum, default_value_t = LayoutArg::Cifar10)]
        layout: LayoutArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LayoutArg {
    Cifar10,
    Cifar100,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DatasetArg {
    Synthetic,
    Cifar10,
    Cifar100,
    Exported,
}

impl From<DatasetArg> for DatasetKind {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Synthetic => DatasetKind::Synthetic,
            DatasetArg::Cifar10 => DatasetKind::Cifar10,
            DatasetArg::Cifar100 => DatasetKind::Cifar100,
            DatasetArg::Exported => DatasetKind::Exported,
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dataset: Option<DatasetArg>,
    /// tiny-cnn, resnet-<6n+2> or wrn-<depth>-<width>.
    #[arg(long)]
    arch: Option<Arch>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from the run directory's last checkpoint.
    #[arg(long)]
    resume: bool,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_json_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.dataset {
            let kind = DatasetKind::from(d);
            if kind != cfg.dataset.kind {
                cfg.dataset.kind = kind;
                cfg.dataset.path = None;
                cfg.dataset.normalization = None;
            }
        }
        if let Some(a) = self.arch {
            cfg.arch = a;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(e) = self.epochs {
            cfg.optim.max_epochs = e;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(args) => {
            let summary = run_train(&args.config()?, args.resume)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval { out } => {
            println!("{}", serde_json::to_string_pretty(&run_eval(&out)?)?);
        }
        Command::Ablate { run, seeds, jobs } => {
            let cfg = run.config()?;
            let seeds = seeds.unwrap_or_else(|| cfg.seeds.clone());
            println!("mode,cutnmix,mmd,pt,mean_acc,std_acc");
            for r in ablate(&cfg, &seeds, jobs)? {
                println!("{},{},{},{},{:.4},{:.4}", r.mode, r.cutnmix, r.mmd, r.pt, r.mean, r.std);
            }
        }
        Command::Plot { out } => {
            let groups = plot::discover(&out)?;
            let curves = plot::plot(&groups, &out.join("plots"))?;
            println!("{} curves written to {}", curves.len(), out.join("plots").display());
        }
        Command::Selftest => {
            let outcomes = selftest::run_selftest()?;
            let mut ok = true;
            for o in &outcomes {
                println!("[{}] {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
                ok &= o.passed;
            }
            if !ok {
                return Err(Error::Validation("selftest failed".into()));
            }
        }
        Command::Export { config, dataset, layout, out } => {
            let mut spec = match config {
                Some(p) => RunConfig::from_json_file(&p)?.dataset,
                None => Default::default(),
            };
            if let Some(d) = dataset {
                spec.kind = d.into();
            }
            let (data, _) = spec.load()?;
            let layout = match layout {
                LayoutArg::Cifar10 => CifarLayout::Cifar10,
                LayoutArg::Cifar100 => CifarLayout::Cifar100,
            };
            export(&data, layout, &out)?;
            println!("wrote {} train / {} test records to {}", data.train.len(), data.test.len(), out.display());
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command. Returns
/// the process exit code: 0 on success, 2 on usage errors, 1 on failures.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_cli(["cutnmix", "train", "--bogus"]), 2);
        assert_eq!(run_cli(["cutnmix", "frobnicate"]), 2);
        assert_eq!(run_cli(["cutnmix", "train", "--mode", "full"]), 2);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(run_cli(["cutnmix", "--help"]), 0);
    }

    #[test]
    fn flags_override_the_config() {
        let cli = Cli::try_parse_from([
            "cutnmix", "train", "--seed", "4", "--arch", "resnet-20", "--mode", "dml", "--epochs", "3", "--out", "x",
        ])
        .unwrap();
        let Command::Train(args) = cli.command else { panic!() };
        let cfg = args.config().unwrap();
        assert_eq!((cfg.seed, cfg.mode, cfg.optim.max_epochs), (4, Mode::Dml, 3));
        assert_eq!(cfg.arch, Arch::ResNet(20));
        assert_eq!(cfg.out, PathBuf::from("x"));
    }

    #[test]
    fn runtime_failures_exit_1() {
        assert_eq!(run_cli(["cutnmix", "eval", "--out", "/nonexistent/run"]), 1);
    }
}
