//! Command line surface. `run` returns the text printed on success so the
//! subcommands can be driven from tests without a process boundary.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use rosasr_core::corpus::{generate_corpus, SplitConfig};
use rosasr_core::decode::{read_hypotheses, score_manifest, write_hypotheses};
use rosasr_core::manifest::Manifest;
use rosasr_core::ros::{histogram, skewness, RateBin};

use crate::artifacts::{self, write_file, Split};
use crate::config::Config;
use crate::error::{CliError, CliResult, StageContext};
use crate::experiment::{self, ExperimentReport, Variant};
use crate::stages::{self, DnnSpec, Subset};

#[derive(Debug, Parser)]
#[command(name = "rosasr", version, about = "Rate-of-speech compensation for a hybrid HMM/MLP recognizer")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set alpha.fast=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker threads for per-utterance work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a rate-varying corpus into the `corpus` directory.
    GenCorpus,
    /// Compute features and copy manifests into the workdir.
    Prepare,
    /// Train the monophone GMM-HMM system.
    TrainGmm,
    /// Force-align all splits and fill in missing ROS values.
    Align,
    /// Train one hybrid network.
    TrainDnn {
        /// Append the rate of speech to the network input.
        #[arg(long)]
        ros: bool,
        #[arg(long, default_value = "all", value_parser = ["all", "half", "slow", "fast"])]
        subset: String,
        /// Defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decode a split with a trained network.
    Decode {
        /// Network directory name under `dnn/`, e.g. `base-all-s1`.
        #[arg(long)]
        dnn: String,
        /// Scale self-loops per rate bin with the configured α values.
        #[arg(long)]
        alpha_map: bool,
        #[arg(long, default_value = "test", value_parser = ["train", "cv", "test"])]
        split: String,
    },
    /// Per-bin WER of a hypothesis file.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long, default_value = "test", value_parser = ["train", "cv", "test"])]
        split: String,
        /// Test-set label written in the first CSV column.
        #[arg(long, default_value = "Tst")]
        name: String,
    },
    /// Run one variant (or all) of the experiment matrix.
    Experiment {
        #[arg(long, default_value = "all")]
        variant: String,
    },
    /// WER against α per rate bin, reusing cached acoustic scores.
    SweepAlpha {
        /// Comma-separated α values; defaults to `alpha.grid`.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        #[arg(long, value_parser = ["slow", "normal", "fast"])]
        bin: Option<String>,
    },
    /// ROS histogram and skewness of a prepared split.
    RosStats {
        #[arg(long, default_value = "train", value_parser = ["train", "cv", "test"])]
        split: String,
        #[arg(long, default_value_t = 1.0)]
        bin_width: f64,
    },
}

fn split_of(name: &str) -> Split {
    match name {
        "train" => Split::Train,
        "cv" => Split::Cv,
        _ => Split::Test,
    }
}

pub fn load_config(g: &GlobalArgs) -> CliResult<Config> {
    let mut overrides = g.overrides.clone();
    if let Some(j) = g.jobs {
        overrides.push(format!("jobs={j}"));
    }
    Config::load(g.config.as_deref(), &overrides)
}

pub fn run(cli: &Cli) -> CliResult<String> {
    let cfg = load_config(&cli.global)?;
    let out = dispatch(&cfg, &cli.command)?;
    if let Some(wd) = cfg.workdir.as_deref().filter(|p| p.is_dir()) {
        artifacts::write_manifest(wd)?;
    }
    Ok(out)
}

fn dispatch(cfg: &Config, cmd: &Command) -> CliResult<String> {
    Ok(match cmd {
        Command::GenCorpus => {
            let out = cfg
                .corpus
                .as_deref()
                .ok_or_else(|| CliError::config("corpus: key is required"))?;
            let split = SplitConfig {
                num_utts: cfg.synth.num_utts,
                cv_fraction: cfg.synth.cv_fraction,
                test_fraction: cfg.synth.test_fraction,
            };
            let g = generate_corpus(&cfg.synth.synth_config(), &split, out).stage("gen-corpus")?;
            format!(
                "gen-corpus: {} train, {} cv, {} test utterances in {}\n",
                g.train.len(),
                g.cv.len(),
                g.test.len(),
                out.display()
            )
        }
        Command::Prepare => stages::prepare(cfg)?.message("prepare") + "\n",
        Command::TrainGmm => stages::train_gmm(cfg)?.message("train-gmm") + "\n",
        Command::Align => stages::align(cfg)?.message("align") + "\n",
        Command::TrainDnn { ros, subset, seed } => {
            let spec = DnnSpec {
                use_ros: *ros,
                subset: Subset::from_name(subset).expect("clap restricts values"),
                seed: seed.unwrap_or(cfg.seeds[0]),
            };
            stages::train_dnn(cfg, &spec)?.message(&format!("train-dnn {}", spec.tag())) + "\n"
        }
        Command::Decode { dnn, alpha_map, split } => {
            let wd = stages::workdir(cfg)?;
            let dir = wd.dnn_dir(dnn);
            if !dir.is_dir() {
                return Err(CliError::config(format!("dnn: no trained network at {}", dir.display())));
            }
            let m = Manifest::read(&wd.manifest(split_of(split))).stage("decode")?;
            let alphas = if *alpha_map {
                stages::alpha_map(cfg, &m)?
            } else {
                Default::default()
            };
            let hyps = stages::decode(cfg, &dir, &m, |id| alphas.get(id).copied().unwrap_or(1.0))?;
            let tag = format!("{dnn}{}-{split}", if *alpha_map { "-alpha" } else { "" });
            let path = wd.decode_dir(&tag).join("hyp.txt");
            artifacts::create_dir(&wd.decode_dir(&tag), "decode")?;
            write_hypotheses(&path, &hyps).stage("decode")?;
            format!("decode: {} hypotheses in {}\n", hyps.len(), path.display())
        }
        Command::Score { hyp, split, name } => {
            let wd = stages::workdir(cfg)?;
            let m = Manifest::read(&wd.manifest(split_of(split))).stage("score")?;
            let hyps = read_hypotheses(hyp).stage("score")?;
            let table = score_manifest(&m, &hyps, &cfg.bins()?, name).stage("score")?;
            let csv = table.to_csv();
            if let Some(dir) = hyp.parent() {
                write_file(&dir.join("wer.csv"), &csv, "score")?;
            }
            csv
        }
        Command::Experiment { variant } => {
            let variants = if variant.eq_ignore_ascii_case("all") {
                Variant::ALL.to_vec()
            } else {
                vec![Variant::from_name(variant)
                    .ok_or_else(|| CliError::config(format!("variant: unknown value `{variant}`")))?]
            };
            let wd = stages::workdir(cfg)?;
            let mut out = String::new();
            for v in variants {
                experiment::run_experiment(cfg, v)?;
                let path = wd.exp_dir().join(v.name()).join("results.csv");
                out.push_str(&fs::read_to_string(&path).stage("experiment")?);
            }
            out
        }
        Command::SweepAlpha { grid, bin } => {
            let grid = if grid.is_empty() { cfg.alpha.grid.clone() } else { grid.clone() };
            let only = bin.as_deref().and_then(RateBin::from_tag);
            experiment::sweep_alpha(cfg, &grid, only)?;
            fs::read_to_string(stages::workdir(cfg)?.exp_dir().join("sweep_alpha.csv")).stage("sweep-alpha")?
        }
        Command::RosStats { split, bin_width } => {
            let wd = stages::workdir(cfg)?;
            let m = Manifest::read(&wd.manifest(split_of(split))).stage("ros-stats")?;
            let values: Vec<f64> = m.iter().filter_map(|e| e.ros).collect();
            let h = histogram(&values, *bin_width).stage("ros-stats")?;
            let csv = h.to_csv();
            write_file(&wd.root().join("ros").join(format!("hist_{split}.csv")), &csv, "ros-stats")?;
            let (lo, hi) = h.bin_range(h.mode_bin());
            format!(
                "{csv}# utterances {} mode [{lo}, {hi}) skewness {:.4}\n",
                values.len(),
                skewness(&values)
            )
        }
    })
}

/// Prints a report's CSV; used by the acceptance suite.
pub fn report_csv(cfg: &Config, r: &ExperimentReport) -> CliResult<String> {
    Ok(match r {
        ExperimentReport::Bins(b) => b.to_csv(&cfg.digest(), &cfg.bins()?),
        ExperimentReport::Cross(c) => c.to_csv(&cfg.digest()),
    })
}
