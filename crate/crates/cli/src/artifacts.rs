//! Workdir layout, stage stamps and the digest listing in `MANIFEST.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::error::{CliResult, StageContext};

pub const MANIFEST_FILE: &str = "MANIFEST.txt";
const STAMP_FILE: &str = ".stamp";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Cv,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Cv, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Cv => "cv",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn manifest(&self, split: Split) -> PathBuf {
        self.data_dir().join(format!("{}.tsv", split.name()))
    }

    pub fn lexicon(&self) -> PathBuf {
        self.data_dir().join("lexicon.txt")
    }

    pub fn mfcc(&self, id: &str) -> PathBuf {
        self.root.join("feats/mfcc").join(format!("{id}.feat"))
    }

    pub fn fbank(&self, id: &str) -> PathBuf {
        self.root.join("feats/fbank").join(format!("{id}.feat"))
    }

    pub fn gmm_dir(&self) -> PathBuf {
        self.root.join("gmm")
    }

    pub fn gmm_model(&self) -> PathBuf {
        self.gmm_dir().join("final.mdl")
    }

    pub fn ali_dir(&self) -> PathBuf {
        self.root.join("ali")
    }

    pub fn alignments(&self, split: Split) -> PathBuf {
        self.ali_dir().join(format!("{}.ali", split.name()))
    }

    pub fn dnn_dir(&self, tag: &str) -> PathBuf {
        self.root.join("dnn").join(tag)
    }

    pub fn decode_dir(&self, tag: &str) -> PathBuf {
        self.root.join("decode").join(tag)
    }

    pub fn exp_dir(&self) -> PathBuf {
        self.root.join("exp")
    }
}

pub fn create_dir(dir: &Path, stage: &'static str) -> CliResult<()> {
    fs::create_dir_all(dir).stage(stage)
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>, stage: &'static str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).stage(stage)?;
    }
    fs::write(path, contents).stage(stage)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(64);
    for b in Sha256::digest(bytes) {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn file_digest(path: &Path, stage: &'static str) -> CliResult<String> {
    Ok(sha256_hex(&fs::read(path).stage(stage)?))
}

/// True when `dir` holds a stamp written with the same key.
pub fn is_up_to_date(dir: &Path, key: &str) -> bool {
    fs::read_to_string(dir.join(STAMP_FILE)).is_ok_and(|s| s == key)
}

pub fn write_stamp(dir: &Path, key: &str, stage: &'static str) -> CliResult<()> {
    write_file(&dir.join(STAMP_FILE), key, stage)
}

/// Rewrites `MANIFEST.txt` with `sha256  relative/path` for every file in the
/// workdir, sorted by path.
pub fn write_manifest(root: &Path) -> CliResult<()> {
    let mut out = String::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| std::io::Error::other(e.to_string())).stage("manifest")?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("walk stays below root");
        let name = rel.to_string_lossy();
        if name == MANIFEST_FILE || entry.file_name() == STAMP_FILE {
            continue;
        }
        let _ = writeln!(out, "{}  {}", file_digest(entry.path(), "manifest")?, name);
    }
    write_file(&root.join(MANIFEST_FILE), out, "manifest")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_files_with_digests() {
        let dir = tempfile::tempdir().unwrap();
        write_file(&dir.path().join("b/x.txt"), "abc", "t").unwrap();
        write_file(&dir.path().join("a.txt"), "", "t").unwrap();
        write_stamp(dir.path(), "k", "t").unwrap();
        write_manifest(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(
            text,
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855  a.txt\n\
             ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad  b/x.txt\n"
        );
        assert!(is_up_to_date(dir.path(), "k"));
        assert!(!is_up_to_date(dir.path(), "j"));
    }
}
