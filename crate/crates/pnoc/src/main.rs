use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pnoc::config::PipelineConfig;
use pnoc::core::eval::delta_range;
use pnoc::core::trainer::TrainMode;
use pnoc::dataset::{generate_synthetic, load_voc};
use pnoc::error::{Error, Result};
use pnoc::stages::{self, Outcome, Runner, Stage};
use pnoc::{evaluate, persist};

#[derive(Parser)]
#[command(name = "pnoc", version, about = "Train CAM classifiers, build localization priors and refine them into masks")]
#[command(after_long_help = pnoc::config::key_help())]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `pipeline.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.pipeline.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier on a dataset directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// vanilla, puzzle, p_oc or p_noc.
        #[arg(long)]
        mode: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Trained vanilla weights, required by p_oc and p_noc.
        #[arg(long)]
        oc: Option<PathBuf>,
    },
    /// Multi-scale priors (`.cams`) for every image of a dataset.
    MakePriors {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the saliency disentangler on backbone features.
    TrainC2amh {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Directory of priors the hints are taken from.
        #[arg(long)]
        hints_from: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Saliency maps from a trained disentangler.
    MakeSaliency {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seed masks from priors, optionally with saliency for background.
    MakeSeeds {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        priors: PathBuf,
        #[arg(long)]
        saliency: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random-walk refinement of priors into label masks.
    RefineRw {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        priors: PathBuf,
        /// Seed masks that cut the affinity graph.
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// mIoU of label masks against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        /// Dataset directory with `masks/`.
        #[arg(long)]
        gt: PathBuf,
    },
    /// mIoU of priors over a range of thresholds.
    Sweep {
        #[arg(long)]
        priors: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// `from:to:step`.
        #[arg(long, default_value = "0.05:0.95:0.05")]
        deltas: String,
        /// Also write the curve as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rebuild `report.txt` of a run directory.
    Report {
        /// Run directory holding `config.snapshot`.
        #[arg(long)]
        run: PathBuf,
    },
    /// Run configured stages; finished stages are skipped.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Overrides `pipeline.out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated stage names; overrides `pipeline.stages`.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<String>>,
        /// Rerun stages that already finished.
        #[arg(long)]
        force: bool,
    },
    /// Write a synthetic dataset directory.
    GenerateSynthetic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Generator seed; `synthetic.train_seed` when absent.
        #[arg(long)]
        data_seed: Option<u64>,
    },
}

fn parse_deltas(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("--deltas expects from:to:step, got `{s}`")))?;
    match parts[..] {
        [a, b, c] => delta_range(a, b, c).map_err(|e| Error::Config(e.to_string())),
        _ => Err(Error::Config(format!("--deltas expects from:to:step, got `{s}`"))),
    }
}

fn print_report(rows: &[(String, Option<f64>)], mean: f64) {
    for (name, v) in rows {
        println!("{name}\t{}", v.map_or("n/a".to_string(), |x| format!("{x:.2}")));
    }
    println!("mIoU\t{mean:.2}");
}

fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|source| Error::Io { path: p.to_path_buf(), source })
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Train { common, mode, data, out, oc } => {
            let cfg = common.load()?;
            let mode: TrainMode = mode.parse().map_err(|e: pnoc::core::Error| Error::Config(e.to_string()))?;
            let ds = load_voc(&data)?;
            let oc = oc.map(|p| persist::read_cnn(&p)).transpose()?;
            if mode.uses_oc() && oc.is_none() {
                return Err(Error::Config(format!("mode {mode} needs --oc with trained vanilla weights")));
            }
            stages::train_model(&cfg, mode, &ds, oc, &out)?;
        }
        Command::MakePriors { common, weights, data, out } => {
            let cfg = common.load()?;
            stages::make_priors(&cfg, &persist::read_cnn(&weights)?, &load_voc(&data)?, &out)?;
        }
        Command::TrainC2amh { common, weights, data, hints_from, out } => {
            let cfg = common.load()?;
            stages::train_disentangler(&cfg, &persist::read_cnn(&weights)?, &load_voc(&data)?, &hints_from, &out)?;
        }
        Command::MakeSaliency { weights, head, data, out } => {
            stages::make_saliency(&persist::read_cnn(&weights)?, &persist::read_head(&head)?, &load_voc(&data)?, &out)?;
        }
        Command::MakeSeeds { common, priors, saliency, out } => {
            let cfg = common.load()?;
            let unknown = stages::make_seeds(&cfg, &priors, saliency.as_deref(), &out)?;
            let mean = unknown.iter().map(|(_, u)| u).sum::<f64>() / unknown.len() as f64;
            println!("images\t{}\nmean unknown fraction\t{mean:.4}", unknown.len());
        }
        Command::RefineRw { common, data, priors, seeds, out } => {
            let cfg = common.load()?;
            stages::refine_rw(&cfg, &load_voc(&data)?, &priors, seeds.as_deref(), &out)?;
        }
        Command::Evaluate { pred, gt } => {
            let ds = load_voc(&gt)?;
            let truth = (0..ds.len())
                .map(|i| {
                    let s = ds.load(i, true)?;
                    let m = s.gt_mask.unwrap_or_default();
                    Ok((s.id, (s.image.height(), s.image.width(), m)))
                })
                .collect::<Result<_>>()?;
            let r = evaluate::confusion(&evaluate::read_masks(&pred)?, &truth, ds.num_classes(), &gt)?.miou()?;
            let names = evaluate::row_names(&ds.class_names);
            let rows: Vec<(String, Option<f64>)> = names.into_iter().zip(r.per_class.iter().copied()).collect();
            print_report(&rows, r.mean);
        }
        Command::Sweep { priors, gt, deltas, csv } => {
            let deltas = parse_deltas(&deltas)?;
            let truth = evaluate::read_masks(&gt.join("masks"))?;
            let curve = evaluate::sweep(&evaluate::read_priors(&priors)?, &truth, &deltas, &gt)?;
            for (d, m) in &curve {
                println!("{d:.4}\t{m:.2}");
            }
            let (d, m) = evaluate::best(&curve);
            println!("best\t{d:.4}\t{m:.2}");
            if let Some(p) = csv {
                evaluate::write_sweep_csv(&p, &curve)?;
            }
        }
        Command::Report { run } => {
            let mut cfg = PipelineConfig::load(&run.join("config.snapshot"))?;
            cfg.pipeline.out = run;
            let report = stages::Layout::new(&cfg.pipeline.out).report();
            Runner::new(cfg, true).run(&[Stage::Report])?;
            let text = std::fs::read_to_string(&report).map_err(|source| Error::Io { path: report, source })?;
            print!("{text}");
        }
        Command::Pipeline { common, out, stages: only, force } => {
            let mut cfg = common.load()?;
            if let Some(o) = out {
                cfg.pipeline.out = o;
            }
            if let Some(s) = only {
                cfg.pipeline.stages = s;
            }
            cfg.validate()?;
            let runner = Runner::new(cfg, force);
            for (stage, outcome) in runner.run_configured()? {
                let what = if outcome == Outcome::Ran { "done" } else { "up to date" };
                println!("{stage}\t{what}");
            }
        }
        Command::GenerateSynthetic { common, out, n, data_seed } => {
            let cfg = common.load()?;
            ensure_dir(&out)?;
            let seed = data_seed.unwrap_or(cfg.synthetic.train_seed);
            generate_synthetic(&out, &cfg.synthetic.spec(n, seed))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
