//! Utterance manifests.
//!
//! One record per line, tab separated: utterance id, WAV path, transcript
//! (space separated words), ROS in phones per second or `-`, and the rate bin
//! tag (`slow`, `normal`, `fast`) or `-`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ros::RateBin;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub wav_path: PathBuf,
    pub transcript: Vec<String>,
    pub ros: Option<f64>,
    pub bin: Option<RateBin>,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, wav_path: impl Into<PathBuf>, transcript: Vec<String>) -> Self {
        Self {
            id: id.into(),
            wav_path: wav_path.into(),
            transcript,
            ros: None,
            bin: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ManifestEntry> {
        self.entries.iter()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let ros = e.ros.map_or_else(|| "-".to_string(), |r| format!("{r}"));
            let bin = e.bin.map_or("-", RateBin::tag);
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                e.id,
                e.wav_path.display(),
                e.transcript.join(" "),
                ros,
                bin
            );
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| Error::parse(origin, lineno + 1, msg);
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 tab-separated fields, got {}", fields.len())));
            }
            let transcript: Vec<String> = fields[2].split_whitespace().map(str::to_string).collect();
            if transcript.is_empty() {
                return Err(err("empty transcript".into()));
            }
            let ros = match fields[3] {
                "-" => None,
                s => Some(
                    s.parse::<f64>()
                        .map_err(|_| err(format!("bad ROS value `{s}`")))?,
                ),
            };
            let bin = match fields[4] {
                "-" => None,
                s => Some(RateBin::from_tag(s).ok_or_else(|| err(format!("bad bin tag `{s}`")))?),
            };
            entries.push(ManifestEntry {
                id: fields[0].to_string(),
                wav_path: PathBuf::from(fields[1]),
                transcript,
                ros,
                bin,
            });
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

impl FromIterator<ManifestEntry> for Manifest {
    fn from_iter<I: IntoIterator<Item = ManifestEntry>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}
