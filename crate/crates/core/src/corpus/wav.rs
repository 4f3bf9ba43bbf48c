use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use log::warn;

use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::manifest::{Manifest, ManifestEntry};

/// Writes samples in [-1, 1] as 16-bit PCM mono, clipping anything outside.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate_hz: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Reads a 16-bit PCM mono file; samples are scaled to [-1, 1).
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let r = WavReader::open(path)?;
    let spec = r.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(Error::InvalidConfig(format!(
            "{}: expected 16-bit PCM mono, found {} channel(s) of {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = r
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((samples, spec.sample_rate))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestError {
    pub utt_id: String,
    pub path: PathBuf,
    pub reason: String,
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}): {}", self.utt_id, self.path.display(), self.reason)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub manifest: Manifest,
    pub lexicon: Lexicon,
    pub errors: Vec<IngestError>,
}

/// Builds a manifest from `dir/*.wav`, named by utterance id, with
/// transcripts from `utt-id<TAB>words` lines. Broken files, sample-rate
/// mismatches, missing transcripts and out-of-vocabulary words are collected
/// as errors; only an empty directory is fatal.
pub fn ingest_wav_corpus(
    dir: &Path,
    transcripts: &Path,
    lexicon: &Path,
    silence: &str,
    sample_rate_hz: u32,
) -> Result<IngestReport> {
    let lexicon = Lexicon::read(lexicon, silence)?;
    let origin = transcripts.display().to_string();
    let mut texts = BTreeMap::new();
    for (i, line) in fs::read_to_string(transcripts)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, words) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(&origin, i + 1, "expected `utt-id<TAB>words`"))?;
        texts.insert(id.to_string(), words.split_whitespace().map(str::to_string).collect::<Vec<_>>());
    }

    let mut wavs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    if wavs.is_empty() {
        return Err(Error::EmptyCorpus(dir.to_path_buf()));
    }
    wavs.sort();

    let mut entries = Vec::new();
    let mut errors = Vec::new();
    for path in wavs {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mut fail = |reason: String| {
            warn!("skipping {id}: {reason}");
            errors.push(IngestError {
                utt_id: id.clone(),
                path: path.clone(),
                reason,
            });
        };
        let Some(words) = texts.get(&id) else {
            fail("no transcript".into());
            continue;
        };
        if words.is_empty() {
            fail("empty transcript".into());
            continue;
        }
        if let Err(e) = lexicon.expand(words) {
            fail(e.to_string());
            continue;
        }
        match read_wav(&path) {
            Err(e) => fail(e.to_string()),
            Ok((_, sr)) if sr != sample_rate_hz => {
                fail(format!("sample rate {sr} Hz, expected {sample_rate_hz} Hz"));
            }
            Ok(_) => entries.push(ManifestEntry::new(id.clone(), path.clone(), words.clone())),
        }
    }
    Ok(IngestReport {
        manifest: Manifest::new(entries),
        lexicon,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f64> = (0..800).map(|i| 0.5 * (i as f64 * 0.05).sin()).collect();
        write_wav(&p, &x, 16000).unwrap();
        let (y, sr) = read_wav(&p).unwrap();
        assert_eq!(sr, 16000);
        assert_eq!(y.len(), x.len());
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 0.5 / 32768.0 + 1e-12));
    }

    fn setup(dir: &Path) {
        fs::write(dir.join("lex.txt"), "hi\th ay\nyo\ty ow\n").unwrap();
        fs::write(dir.join("tr.txt"), "a\thi\nb\tyo hi\nc\thi hi\nd\tyo\n").unwrap();
        let wav = dir.join("wav");
        fs::create_dir(&wav).unwrap();
        for id in ["a", "b", "c"] {
            write_wav(&wav.join(format!("{id}.wav")), &[0.0; 1600], 16000).unwrap();
        }
        let full = fs::read(wav.join("a.wav")).unwrap();
        fs::write(wav.join("d.wav"), &full[..20]).unwrap();
    }

    #[test]
    fn three_good_one_truncated() {
        let dir = tempfile::tempdir().unwrap();
        setup(dir.path());
        let d = dir.path();
        let r = ingest_wav_corpus(&d.join("wav"), &d.join("tr.txt"), &d.join("lex.txt"), "sil", 16000).unwrap();
        assert_eq!(r.manifest.len(), 3);
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].utt_id, "d");
    }

    #[test]
    fn rate_mismatch_and_missing_transcript() {
        let dir = tempfile::tempdir().unwrap();
        setup(dir.path());
        let d = dir.path();
        write_wav(&d.join("wav/e.wav"), &[0.0; 800], 8000).unwrap();
        fs::write(d.join("wav/d.wav"), fs::read(d.join("wav/a.wav")).unwrap()).unwrap();
        fs::write(d.join("tr.txt"), "a\thi\nb\tyo hi\nc\thi hi\ne\tyo\n").unwrap();
        let r = ingest_wav_corpus(&d.join("wav"), &d.join("tr.txt"), &d.join("lex.txt"), "sil", 16000).unwrap();
        assert_eq!(r.manifest.len(), 3);
        let mut why: Vec<_> = r.errors.iter().map(|e| (e.utt_id.as_str(), e.reason.as_str())).collect();
        why.sort();
        assert_eq!(why[0], ("d", "no transcript"));
        assert_eq!(why[1].0, "e");
        assert!(why[1].1.contains("8000"));
    }

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        setup(dir.path());
        let d = dir.path();
        let empty = d.join("none");
        fs::create_dir(&empty).unwrap();
        assert!(matches!(
            ingest_wav_corpus(&empty, &d.join("tr.txt"), &d.join("lex.txt"), "sil", 16000),
            Err(Error::EmptyCorpus(_))
        ));
    }
}
