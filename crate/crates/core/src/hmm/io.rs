//! Plain-text model files. Floats are written in shortest round-trip form so
//! a read after a write reproduces the model bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::gmm::{DiagGmm, GmmSet};
use super::train::GmmHmmModel;
use super::{HmmSet, HmmState, PhoneHmm};
use crate::error::{Error, Result};

const MAGIC: &str = "AMODEL v1";

pub fn write_model(model: &GmmHmmModel) -> String {
    let mut out = String::new();
    let hmms = &model.hmms;
    let sil = hmms
        .silence
        .map_or_else(|| "-".to_string(), |s| hmms.phones[s].phone.clone());
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "phones {} silence {sil}", hmms.phones.len());
    for p in &hmms.phones {
        let _ = writeln!(out, "phone {} {}", p.phone, p.states.len());
        for s in &p.states {
            let _ = writeln!(out, "state {} {:?} {:?}", s.pdf, s.self_prob, s.leave_prob);
        }
    }
    let _ = writeln!(out, "pdfs {} dim {}", model.gmms.num_pdfs(), model.gmms.dim());
    for g in &model.gmms.pdfs {
        let _ = writeln!(out, "gmm {}", g.num_components());
        for c in 0..g.num_components() {
            let _ = write!(out, "comp {:?}", g.weights()[c]);
            for v in g.means().row(c).iter().chain(g.vars().row(c)) {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_model_file(path: &Path, model: &GmmHmmModel) -> Result<()> {
    fs::write(path, write_model(model))?;
    Ok(())
}

struct Lines<'a> {
    origin: &'a str,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let (i, l) = self
            .iter
            .next()
            .ok_or_else(|| Error::parse(self.origin, self.line + 1, "unexpected end of file"))?;
        self.line = i + 1;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.first() != Some(&key) {
            return Err(self.err(&format!("expected `{key}`")));
        }
        Ok(toks)
    }

    fn err(&self, msg: &str) -> Error {
        Error::parse(self.origin, self.line, msg)
    }

    fn num<T: std::str::FromStr>(&self, tok: Option<&&str>) -> Result<T> {
        tok.and_then(|t| t.parse().ok())
            .ok_or_else(|| self.err("bad number"))
    }
}

pub fn read_model(text: &str, origin: &str) -> Result<GmmHmmModel> {
    let mut it = text.lines().enumerate();
    match it.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(Error::parse(origin, 1, "missing AMODEL v1 header")),
    }
    let mut lines = Lines { origin, iter: it, line: 1 };

    let t = lines.next("phones")?;
    let n: usize = lines.num(t.get(1))?;
    if t.get(2) != Some(&"silence") || t.len() != 4 {
        return Err(lines.err("expected `phones N silence NAME`"));
    }
    let silence = (t[3] != "-").then(|| t[3].to_string());
    let mut phones = Vec::with_capacity(n);
    for _ in 0..n {
        let t = lines.next("phone")?;
        let name = t.get(1).ok_or_else(|| lines.err("missing phone name"))?.to_string();
        let k: usize = lines.num(t.get(2))?;
        let mut states = Vec::with_capacity(k);
        for _ in 0..k {
            let t = lines.next("state")?;
            let pdf = lines.num(t.get(1))?;
            let self_prob: f64 = lines.num(t.get(2))?;
            let leave_prob: f64 = lines.num(t.get(3))?;
            if !(self_prob > 0.0 && self_prob < 1.0 && leave_prob > 0.0 && leave_prob < 1.0) {
                return Err(lines.err("transition probabilities must lie in (0, 1)"));
            }
            states.push(HmmState { self_prob, leave_prob, pdf });
        }
        phones.push(PhoneHmm { phone: name, states });
    }
    let hmms = HmmSet::new(phones, silence.as_deref())?;

    let t = lines.next("pdfs")?;
    let num_pdfs: usize = lines.num(t.get(1))?;
    let dim: usize = lines.num(t.get(3))?;
    if num_pdfs < hmms.num_pdfs() {
        return Err(lines.err("fewer pdfs than the HMMs reference"));
    }
    let mut pdfs = Vec::with_capacity(num_pdfs);
    for _ in 0..num_pdfs {
        let t = lines.next("gmm")?;
        let c: usize = lines.num(t.get(1))?;
        let mut weights = Vec::with_capacity(c);
        let mut means = Array2::zeros((c, dim));
        let mut vars = Array2::zeros((c, dim));
        for k in 0..c {
            let t = lines.next("comp")?;
            if t.len() != 2 + 2 * dim {
                return Err(lines.err("wrong number of values in component"));
            }
            weights.push(lines.num(t.get(1))?);
            for d in 0..dim {
                means[[k, d]] = lines.num(t.get(2 + d))?;
                vars[[k, d]] = lines.num(t.get(2 + dim + d))?;
            }
        }
        pdfs.push(DiagGmm::new(weights, means, vars).map_err(|e| lines.err(&e.to_string()))?);
    }
    Ok(GmmHmmModel {
        hmms,
        gmms: GmmSet { pdfs },
    })
}

pub fn read_model_file(path: &Path) -> Result<GmmHmmModel> {
    read_model(&fs::read_to_string(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn model() -> GmmHmmModel {
        let hmms = HmmSet::with_topology(&["a".into()], Some("sil"), 3)
            .unwrap()
            .scaled(1.01162, false)
            .unwrap();
        let g = DiagGmm::new(
            vec![0.1, 0.9],
            array![[0.1, -2.5e-7], [1.0 / 3.0, 7.0]],
            array![[1.0, 2.0], [0.3, 1e-3]],
        )
        .unwrap();
        GmmHmmModel {
            gmms: GmmSet { pdfs: vec![g; hmms.num_pdfs()] },
            hmms,
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let m = model();
        let text = write_model(&m);
        assert!(text.starts_with("AMODEL v1\n"));
        let back = read_model(&text, "m").unwrap();
        assert_eq!(back, m);
        assert_eq!(write_model(&back), text);
    }

    #[test]
    fn truncated_file_reports_line() {
        let text = write_model(&model());
        let cut: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(matches!(read_model(&cut, "m"), Err(Error::Parse { .. })));
        assert!(matches!(read_model("NNET v1\n", "m"), Err(Error::Parse { line: 1, .. })));
    }
}
