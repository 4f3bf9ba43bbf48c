//! Pronunciation lexicon: `word<TAB>phone phone …` per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hmm::HmmSet;

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    words: BTreeMap<String, Vec<String>>,
    silence: String,
}

impl Lexicon {
    pub fn new(entries: impl IntoIterator<Item = (String, Vec<String>)>, silence: impl Into<String>) -> Result<Self> {
        let mut words = BTreeMap::new();
        for (w, pron) in entries {
            if pron.is_empty() {
                return Err(Error::InvalidConfig(format!("word `{w}` has an empty pronunciation")));
            }
            if words.insert(w.clone(), pron).is_some() {
                return Err(Error::InvalidConfig(format!("word `{w}` listed twice")));
            }
        }
        if words.is_empty() {
            return Err(Error::EmptyInput("lexicon has no words"));
        }
        Ok(Self {
            words,
            silence: silence.into(),
        })
    }

    pub fn parse(text: &str, origin: &str, silence: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (word, pron) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `word<TAB>phones`"))?;
            let pron: Vec<String> = pron.split_whitespace().map(str::to_string).collect();
            if pron.is_empty() {
                return Err(Error::parse(origin, i + 1, format!("empty pronunciation for `{word}`")));
            }
            entries.push((word.trim().to_string(), pron));
        }
        Self::new(entries, silence)
    }

    pub fn read(path: &Path, silence: &str) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, &path.display().to_string(), silence)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, p) in &self.words {
            let _ = writeln!(out, "{w}\t{}", p.join(" "));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn silence(&self) -> &str {
        &self.silence
    }

    /// Words in sorted order; the position is the word id used by decoders.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.keys().map(String::as_str)
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn word_id(&self, word: &str) -> Option<usize> {
        self.words.keys().position(|w| w == word)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.keys().nth(id).map(String::as_str)
    }

    pub fn pronunciation(&self, word: &str) -> Result<&[String]> {
        self.words
            .get(word)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::OovWord(word.to_string()))
    }

    pub fn phones(&self) -> BTreeSet<&str> {
        self.words.values().flatten().map(String::as_str).collect()
    }

    /// Phone sequence of a word sequence.
    pub fn expand<S: AsRef<str>>(&self, transcript: &[S]) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for w in transcript {
            out.extend(self.pronunciation(w.as_ref())?.iter().cloned());
        }
        Ok(out)
    }

    /// Phone ids of a word sequence in `hmms`.
    pub fn expand_ids<S: AsRef<str>>(&self, transcript: &[S], hmms: &HmmSet) -> Result<Vec<usize>> {
        self.expand(transcript)?
            .iter()
            .map(|p| hmms.phone_id(p).ok_or_else(|| Error::UnknownPhone(p.clone())))
            .collect()
    }

    /// Every phone used by a pronunciation must have an HMM.
    pub fn validate(&self, hmms: &HmmSet) -> Result<()> {
        for p in self.phones() {
            if hmms.phone_id(p).is_none() {
                return Err(Error::UnknownPhone(p.to_string()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_expand() {
        let lex = Lexicon::parse("ba\tb a\nab\ta b\n", "lex", "sil").unwrap();
        assert_eq!(lex.num_words(), 2);
        assert_eq!(lex.word_id("ab"), Some(0));
        assert_eq!(lex.expand(&["ba", "ab"]).unwrap(), vec!["b", "a", "a", "b"]);
        assert!(matches!(lex.expand(&["zz"]), Err(Error::OovWord(w)) if w == "zz"));
        assert_eq!(Lexicon::parse(&lex.to_text(), "x", "sil").unwrap(), lex);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(Lexicon::parse("word\n", "lex", "sil"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Lexicon::parse("w\t \n", "lex", "sil"), Err(Error::Parse { .. })));
    }

    #[test]
    fn validate_reports_missing_phone() {
        let lex = Lexicon::parse("ab\ta b\n", "lex", "sil").unwrap();
        let hmms = HmmSet::with_topology(&["a".into()], Some("sil"), 3).unwrap();
        assert!(matches!(lex.validate(&hmms), Err(Error::UnknownPhone(p)) if p == "b"));
    }
}
