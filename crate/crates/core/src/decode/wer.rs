use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::ros::{RateBin, RateBins};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WerReport {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
}

impl WerReport {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn wer_percent(&self) -> f64 {
        100.0 * self.errors() as f64 / self.ref_words as f64
    }

    /// Pools counts; the pooled WER divides summed errors by summed length.
    pub fn add(&mut self, other: &WerReport) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_words += other.ref_words;
    }
}

/// Minimum edit distance alignment with unit costs. Among optimal
/// alignments the backtrace prefers a substitution, then an insertion, then
/// a deletion.
pub fn compute_wer<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hyp: &[T]) -> Result<WerReport> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let (n, m) = (reference.len(), hyp.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1].as_ref() != hyp[j - 1].as_ref());
            d[i][j] = sub.min(d[i][j - 1] + 1).min(d[i - 1][j] + 1);
        }
    }
    let mut r = WerReport {
        ref_words: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hyp[j - 1].as_ref();
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                if !same {
                    r.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i][j] == d[i][j - 1] + 1 {
            r.insertions += 1;
            j -= 1;
        } else {
            r.deletions += 1;
            i -= 1;
        }
    }
    Ok(r)
}

/// Decoded word sequences by utterance id.
pub type Hypotheses = BTreeMap<String, Vec<String>>;

/// `utt-id<TAB>word word …` per line, sorted by id.
pub fn write_hypotheses(path: &Path, hyps: &Hypotheses) -> Result<()> {
    let mut out = String::new();
    for (id, words) in hyps {
        let _ = writeln!(out, "{id}\t{}", words.join(" "));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_hypotheses(path: &Path) -> Result<Hypotheses> {
    let origin = path.display().to_string();
    let mut out = Hypotheses::new();
    for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, words) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(&origin, i + 1, "expected `utt-id<TAB>words`"))?;
        out.insert(id.to_string(), words.split_whitespace().map(str::to_string).collect());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    /// `None` for the pooled total.
    pub bin: Option<RateBin>,
    pub ros_range: String,
    /// `None` when no utterance fell into the bin.
    pub report: Option<WerReport>,
}

/// Per-bin WER of one test set plus the pooled total.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub test_set: String,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn row(&self, bin: Option<RateBin>) -> Option<&WerReport> {
        self.rows.iter().find(|r| r.bin == bin).and_then(|r| r.report.as_ref())
    }

    pub fn total(&self) -> Option<&WerReport> {
        self.row(None)
    }

    pub const CSV_HEADER: &'static str = "test_set,ros_range,wer_percent";

    /// Data rows without the header; empty bins show `-`.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let wer = r.report.map_or_else(|| "-".to_string(), |w| format!("{:.2}", w.wer_percent()));
            let _ = writeln!(out, "{},{},{}", self.test_set, r.ros_range, wer);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::CSV_HEADER, self.csv_rows())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<12}", "Test set");
        for r in &self.rows {
            let _ = write!(out, "{:>10}", r.ros_range);
        }
        let _ = write!(out, "\n{:<12}", self.test_set);
        for r in &self.rows {
            match r.report {
                Some(w) => {
                    let _ = write!(out, "{:>10.2}", w.wer_percent());
                }
                None => {
                    let _ = write!(out, "{:>10}", "-");
                }
            }
        }
        out.push('\n');
        out
    }
}

/// Scores every manifest entry against its hypothesis and pools by rate bin.
/// Entries use their stored bin, or the bin of their ROS under `bins`.
pub fn score_manifest(manifest: &Manifest, hyps: &Hypotheses, bins: &RateBins, test_set: &str) -> Result<ScoreTable> {
    let mut per_bin: BTreeMap<RateBin, WerReport> = BTreeMap::new();
    let mut total: Option<WerReport> = None;
    for e in manifest.iter() {
        let hyp = hyps.get(&e.id).ok_or_else(|| Error::MissingHypothesis(e.id.clone()))?;
        let bin = match (e.bin, e.ros) {
            (Some(b), _) => b,
            (None, Some(r)) => bins.bin_of(r),
            (None, None) => return Err(Error::MissingRos(e.id.clone())),
        };
        let w = compute_wer(&e.transcript, hyp)?;
        per_bin.entry(bin).or_default().add(&w);
        total.get_or_insert_with(WerReport::default).add(&w);
    }
    let mut rows: Vec<ScoreRow> = RateBin::ALL
        .iter()
        .map(|&b| ScoreRow {
            bin: Some(b),
            ros_range: bins.range_label(b),
            report: per_bin.get(&b).copied(),
        })
        .collect();
    rows.push(ScoreRow {
        bin: None,
        ros_range: "Total".into(),
        report: total,
    });
    Ok(ScoreTable {
        test_set: test_set.to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::ManifestEntry;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn examples() {
        assert_eq!(compute_wer(&words("a b c"), &words("a b c")).unwrap().wer_percent(), 0.0);
        let r = compute_wer(&words("a b c"), &words("a x c")).unwrap();
        assert_eq!(r.substitutions, 1);
        assert!((r.wer_percent() - 100.0 / 3.0).abs() < 1e-12);
        let r = compute_wer(&words("a b"), &words("a x b y")).unwrap();
        assert_eq!((r.insertions, r.substitutions, r.deletions), (2, 0, 0));
        assert_eq!(r.wer_percent(), 100.0);
        assert!(matches!(compute_wer::<&str, &str>(&[], &["a"]), Err(Error::EmptyReference)));
    }

    #[test]
    fn tie_break_prefers_substitution() {
        // "a b" vs "b a": two substitutions or one insertion plus one deletion
        let r = compute_wer(&words("a b"), &words("b c")).unwrap();
        assert_eq!((r.substitutions, r.insertions, r.deletions), (2, 0, 0));
        let r = compute_wer(&words("a"), &words("b c")).unwrap();
        assert_eq!((r.substitutions, r.insertions, r.deletions), (1, 1, 0));
    }

    fn manifest(rows: &[(&str, &str, f64)]) -> Manifest {
        rows.iter()
            .map(|(id, tr, ros)| {
                let mut e = ManifestEntry::new(*id, format!("{id}.wav"), words(tr).iter().map(|s| s.to_string()).collect());
                e.ros = Some(*ros);
                e
            })
            .collect()
    }

    fn hyps(rows: &[(&str, &str)]) -> Hypotheses {
        rows.iter()
            .map(|(id, h)| (id.to_string(), words(h).iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    #[test]
    fn pooled_total() {
        let refs = "a b c d e f g h i j";
        let m = manifest(&[("s", refs, 3.0), ("f", refs, 12.0)]);
        let h = hyps(&[("s", "a b c d e f g h i x"), ("f", "x y z d e f g h i j")]);
        let t = score_manifest(&m, &h, &RateBins::default(), "Tst").unwrap();
        assert_eq!(t.row(Some(RateBin::Slow)).unwrap().wer_percent(), 10.0);
        assert_eq!(t.row(Some(RateBin::Fast)).unwrap().wer_percent(), 30.0);
        assert_eq!(t.row(Some(RateBin::Normal)), None);
        assert_eq!(t.total().unwrap().wer_percent(), 20.0);
        assert_eq!(
            t.to_csv(),
            "test_set,ros_range,wer_percent\nTst,<4,10.00\nTst,4~10,-\nTst,>10,30.00\nTst,Total,20.00\n"
        );
    }

    #[test]
    fn missing_hypothesis() {
        let m = manifest(&[("u1", "a", 5.0)]);
        let err = score_manifest(&m, &Hypotheses::new(), &RateBins::default(), "T").unwrap_err();
        assert!(matches!(err, Error::MissingHypothesis(id) if id == "u1"));
    }

    #[test]
    fn hypothesis_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("hyp.txt");
        let h = hyps(&[("u2", "b a"), ("u1", ""), ("u3", "c")]);
        write_hypotheses(&p, &h).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "u1\t\nu2\tb a\nu3\tc\n");
        assert_eq!(read_hypotheses(&p).unwrap(), h);
    }

    proptest! {
        #[test]
        fn identity_and_bounds(
            r in proptest::collection::vec(0u8..5, 1..8),
            h in proptest::collection::vec(0u8..5, 0..8),
        ) {
            let rs: Vec<String> = r.iter().map(|x| x.to_string()).collect();
            let hs: Vec<String> = h.iter().map(|x| x.to_string()).collect();
            prop_assert_eq!(compute_wer(&rs, &rs).unwrap().errors(), 0);
            let w = compute_wer(&rs, &hs).unwrap();
            prop_assert!(w.errors() <= rs.len().max(hs.len()));
            // bijective relabelling of the vocabulary
            let rename = |v: &[String]| v.iter().map(|x| format!("w{x}")).collect::<Vec<_>>();
            prop_assert_eq!(compute_wer(&rename(&rs), &rename(&hs)).unwrap().errors(), w.errors());
        }
    }
}
