//! The experiment matrix: each variant trains the networks it needs, decodes
//! the test set once per seed and reports per-bin WER with a median row.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::info;

use rosasr_core::decode::{score_manifest, write_hypotheses, Hypotheses, ScoreTable};
use rosasr_core::manifest::Manifest;
use rosasr_core::ros::{partition_manifest, RateBin, RateBins};

use crate::artifacts::{write_file, Workdir};
use crate::config::Config;
use crate::error::{CliError, CliResult, StageContext};
use crate::stages::{self, DnnSpec, Subset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    Baseline,
    DnnRos,
    HmmAlpha,
    Combined,
    CrossRate,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::DnnRos,
        Variant::HmmAlpha,
        Variant::Combined,
        Variant::CrossRate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::DnnRos => "DnnRos",
            Variant::HmmAlpha => "HmmAlpha",
            Variant::Combined => "Combined",
            Variant::CrossRate => "CrossRate",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(s))
    }

    fn uses_ros(self) -> bool {
        matches!(self, Variant::DnnRos | Variant::Combined)
    }

    fn uses_alpha(self) -> bool {
        matches!(self, Variant::HmmAlpha | Variant::Combined)
    }
}

/// Median of a non-empty list; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fmt_wer(w: Option<f64>) -> String {
    w.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// Per-seed WER by bin (Slow, Normal, Fast, Total) for one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct BinReport {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub tables: Vec<ScoreTable>,
}

impl BinReport {
    const COLUMNS: [Option<RateBin>; 4] = [Some(RateBin::Slow), Some(RateBin::Normal), Some(RateBin::Fast), None];

    pub fn wer(&self, seed_index: usize, bin: Option<RateBin>) -> Option<f64> {
        self.tables[seed_index].row(bin).map(|r| r.wer_percent())
    }

    /// Median over seeds; `None` when the bin is empty.
    pub fn median(&self, bin: Option<RateBin>) -> Option<f64> {
        let v: Vec<f64> = (0..self.seeds.len()).filter_map(|i| self.wer(i, bin)).collect();
        (!v.is_empty()).then(|| median(&v))
    }

    pub fn csv_header(bins: &RateBins) -> String {
        format!(
            "config_digest,variant,seed,{},{},{},Total",
            bins.range_label(RateBin::Slow),
            bins.range_label(RateBin::Normal),
            bins.range_label(RateBin::Fast)
        )
    }

    pub fn to_csv(&self, digest: &str, bins: &RateBins) -> String {
        let mut out = Self::csv_header(bins);
        out.push('\n');
        for (i, seed) in self.seeds.iter().enumerate() {
            let cells: Vec<String> = Self::COLUMNS.iter().map(|&b| fmt_wer(self.wer(i, b))).collect();
            let _ = writeln!(out, "{digest},{},{seed},{}", self.variant.name(), cells.join(","));
        }
        let cells: Vec<String> = Self::COLUMNS.iter().map(|&b| fmt_wer(self.median(b))).collect();
        let _ = writeln!(out, "{digest},{},median,{}", self.variant.name(), cells.join(","));
        out
    }
}

/// WER of each training subset on each test subset, per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossReport {
    pub seeds: Vec<u64>,
    /// (train subset, test set label) → WER per seed.
    pub cells: BTreeMap<(String, String), Vec<f64>>,
}

pub const CROSS_TRAIN: [Subset; 3] = [Subset::Half, Subset::Slow, Subset::Fast];
pub const CROSS_TEST: [&str; 2] = ["Tst-Slow", "Tst-Fast"];

impl CrossReport {
    pub fn median(&self, train: Subset, test: &str) -> f64 {
        median(&self.cells[&(train.label().to_string(), test.to_string())])
    }

    pub fn to_csv(&self, digest: &str) -> String {
        let mut out = format!("config_digest,variant,seed,train_set,{}\n", CROSS_TEST.join(","));
        let rows = self.seeds.iter().map(|s| s.to_string()).enumerate().map(|(i, s)| (Some(i), s));
        for (idx, seed) in rows.chain([(None, "median".to_string())]) {
            for tr in CROSS_TRAIN {
                let cells: Vec<String> = CROSS_TEST
                    .iter()
                    .map(|ts| {
                        let v = &self.cells[&(tr.label().to_string(), ts.to_string())];
                        format!("{:.2}", idx.map_or_else(|| median(v), |i| v[i]))
                    })
                    .collect();
                let _ = writeln!(out, "{digest},CrossRate,{seed},{},{}", tr.label(), cells.join(","));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentReport {
    Bins(BinReport),
    Cross(CrossReport),
}

fn run_dir(wd: &Workdir, variant: Variant) -> std::path::PathBuf {
    wd.exp_dir().join(variant.name())
}

fn ensure_dnn(cfg: &Config, spec: &DnnSpec) -> CliResult<()> {
    let outcome = stages::train_dnn(cfg, spec)?;
    info!("{}", outcome.message(&format!("train-dnn {}", spec.tag())));
    Ok(())
}

fn save_hyps(wd: &Workdir, variant: Variant, name: &str, hyps: &Hypotheses) -> CliResult<()> {
    let dir = run_dir(wd, variant);
    crate::artifacts::create_dir(&dir, "experiment")?;
    write_hypotheses(&dir.join(name), hyps).stage("experiment")
}

pub fn run_experiment(cfg: &Config, variant: Variant) -> CliResult<ExperimentReport> {
    stages::ensure_aligned(cfg)?;
    let wd = stages::workdir(cfg)?;
    let test = stages::test_manifest(cfg)?;
    let bins = cfg.bins()?;
    let digest = cfg.digest();
    let report = if variant == Variant::CrossRate {
        ExperimentReport::Cross(cross_rate(cfg, &wd, &test)?)
    } else {
        let alphas = if variant.uses_alpha() {
            stages::alpha_map(cfg, &test)?
        } else {
            BTreeMap::new()
        };
        let mut tables = Vec::new();
        for &seed in &cfg.seeds {
            let spec = DnnSpec {
                use_ros: variant.uses_ros(),
                subset: Subset::All,
                seed,
            };
            ensure_dnn(cfg, &spec)?;
            let hyps = stages::decode(cfg, &wd.dnn_dir(&spec.tag()), &test, |id| {
                alphas.get(id).copied().unwrap_or(1.0)
            })?;
            save_hyps(&wd, variant, &format!("hyp-s{seed}.txt"), &hyps)?;
            tables.push(score_manifest(&test, &hyps, &bins, variant.name()).stage("score")?);
        }
        ExperimentReport::Bins(BinReport {
            variant,
            seeds: cfg.seeds.clone(),
            tables,
        })
    };
    let csv = match &report {
        ExperimentReport::Bins(r) => r.to_csv(&digest, &bins),
        ExperimentReport::Cross(r) => r.to_csv(&digest),
    };
    write_file(&run_dir(&wd, variant).join("results.csv"), csv, "experiment")?;
    Ok(report)
}

fn cross_rate(cfg: &Config, wd: &Workdir, test: &Manifest) -> CliResult<CrossReport> {
    let (slow, fast) = partition_manifest(test, cfg.split.test_threshold).stage("experiment")?;
    let sets = [(CROSS_TEST[0], slow), (CROSS_TEST[1], fast)];
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for &seed in &cfg.seeds {
        for tr in CROSS_TRAIN {
            let spec = DnnSpec {
                use_ros: false,
                subset: tr,
                seed,
            };
            ensure_dnn(cfg, &spec)?;
            for (label, m) in &sets {
                if m.is_empty() {
                    return Err(CliError::Stage {
                        stage: "experiment",
                        source: rosasr_core::Error::EmptyInput("a rate-split test set is empty"),
                    });
                }
                let hyps = stages::decode(cfg, &wd.dnn_dir(&spec.tag()), m, |_| 1.0)?;
                save_hyps(wd, Variant::CrossRate, &format!("hyp-{}-{}-s{seed}.txt", tr.name(), label), &hyps)?;
                let total = *score_manifest(m, &hyps, &cfg.bins()?, label)
                    .stage("score")?
                    .total()
                    .expect("nonempty test set");
                cells
                    .entry((tr.label().to_string(), label.to_string()))
                    .or_default()
                    .push(total.wer_percent());
            }
        }
    }
    Ok(CrossReport {
        seeds: cfg.seeds.clone(),
        cells,
    })
}

/// One row per (α, bin) plus the best α of every bin.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub bin: RateBin,
    pub wer: f64,
    pub best: bool,
}

pub fn sweep_alpha(cfg: &Config, grid: &[f64], only: Option<RateBin>) -> CliResult<Vec<SweepRow>> {
    stages::ensure_aligned(cfg)?;
    let wd = stages::workdir(cfg)?;
    let seed = cfg.seeds[0];
    let spec = DnnSpec {
        use_ros: false,
        subset: Subset::All,
        seed,
    };
    ensure_dnn(cfg, &spec)?;
    let test = stages::test_manifest(cfg)?;
    let bins = cfg.bins()?;
    let dnn = stages::Dnn::load(&wd.dnn_dir(&spec.tag()))?;
    let graph = stages::decode_graph(cfg, &wd)?;
    let logliks = stages::compute_logliks(cfg, &wd, &dnn, &test)?;
    let mut rows = Vec::new();
    for bin in RateBin::ALL {
        if only.is_some_and(|b| b != bin) {
            continue;
        }
        let members: Manifest = test
            .iter()
            .filter(|e| e.ros.is_some_and(|r| bins.bin_of(r) == bin))
            .cloned()
            .collect();
        if members.is_empty() {
            continue;
        }
        let cached: Vec<_> = logliks
            .iter()
            .filter(|(id, _, _)| members.get(id).is_some())
            .cloned()
            .collect();
        let start = rows.len();
        for &alpha in grid {
            let hyps = stages::search(cfg, &graph, &cached, |_| alpha)?;
            let table = score_manifest(&members, &hyps, &bins, "sweep").stage("score")?;
            rows.push(SweepRow {
                alpha,
                bin,
                wer: table.row(Some(bin)).expect("bin is populated").wer_percent(),
                best: false,
            });
        }
        // ties go to the first grid value
        if let Some(best) = rows[start..]
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.wer.total_cmp(&b.1.wer).then(a.0.cmp(&b.0)))
            .map(|(i, _)| start + i)
        {
            rows.push(SweepRow {
                best: true,
                ..rows[best].clone()
            });
        }
    }
    let mut csv = String::from("config_digest,seed,kind,alpha,ros_range,wer_percent\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{seed},{},{},{},{:.2}",
            cfg.digest(),
            if r.best { "best" } else { "grid" },
            r.alpha,
            bins.range_label(r.bin),
            r.wer
        );
    }
    write_file(&wd.exp_dir().join("sweep_alpha.csv"), csv, "sweep-alpha")?;
    Ok(rows)
}
