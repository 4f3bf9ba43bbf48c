//! `NNET v1` text format: header, arch line, then for every layer a
//! `layer IN OUT` line, IN rows of OUT weights and one bias row.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Layer, Mlp, MlpArch, Nonlinearity, PriorVector};
use crate::error::{Error, Result};

const MAGIC: &str = "NNET v1";

pub fn write_mlp(m: &Mlp) -> String {
    let a = m.arch();
    let mut out = format!("{MAGIC}\n");
    let _ = writeln!(
        out,
        "arch {} {} {} {} {}",
        a.input_dim,
        a.hidden_layers,
        a.hidden_units,
        a.output_dim,
        a.nonlinearity.name()
    );
    let row = |out: &mut String, vals: &mut dyn Iterator<Item = &f64>| {
        let mut first = true;
        for v in vals {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    };
    for l in m.layers() {
        let _ = writeln!(out, "layer {} {}", l.weights.nrows(), l.weights.ncols());
        for r in l.weights.rows() {
            row(&mut out, &mut r.iter());
        }
        row(&mut out, &mut l.bias.iter());
    }
    out
}

pub fn write_mlp_file(path: &Path, m: &Mlp) -> Result<()> {
    fs::write(path, write_mlp(m))?;
    Ok(())
}

pub fn read_mlp(text: &str, origin: &str) -> Result<Mlp> {
    let mut lines = text.lines().enumerate();
    let mut next = |what: &str| {
        lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::parse(origin, 0, format!("unexpected end of file, expected {what}")))
    };
    let (n, header) = next("header")?;
    if header.trim() != MAGIC {
        return Err(Error::parse(origin, n, "missing NNET v1 header"));
    }
    let (n, arch_line) = next("arch line")?;
    let t: Vec<&str> = arch_line.split_whitespace().collect();
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(origin, n, "bad arch field"));
    if t.len() != 6 || t[0] != "arch" {
        return Err(Error::parse(origin, n, "expected `arch IN LAYERS UNITS OUT NONLIN`"));
    }
    let arch = MlpArch {
        input_dim: num(t[1])?,
        hidden_layers: num(t[2])?,
        hidden_units: num(t[3])?,
        output_dim: num(t[4])?,
        nonlinearity: Nonlinearity::from_name(t[5]).ok_or_else(|| Error::parse(origin, n, "unknown nonlinearity"))?,
    };
    arch.validate()?;
    let floats = |n: usize, line: &str, len: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(origin, n, "bad number"))?;
        if v.len() != len {
            return Err(Error::parse(origin, n, format!("expected {len} values, found {}", v.len())));
        }
        Ok(v)
    };
    let mut layers = Vec::new();
    for (fan_in, fan_out) in arch.layer_dims() {
        let (n, l) = next("layer line")?;
        if l.split_whitespace().collect::<Vec<_>>() != ["layer", &fan_in.to_string(), &fan_out.to_string()] {
            return Err(Error::parse(origin, n, format!("expected `layer {fan_in} {fan_out}`")));
        }
        let mut w = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in {
            let (n, l) = next("weight row")?;
            w.extend(floats(n, l, fan_out)?);
        }
        let (n, l) = next("bias row")?;
        let bias = Array1::from(floats(n, l, fan_out)?);
        layers.push(Layer {
            weights: Array2::from_shape_vec((fan_in, fan_out), w).expect("row count checked"),
            bias,
        });
    }
    Mlp::from_layers(arch, layers)
}

pub fn read_mlp_file(path: &Path) -> Result<Mlp> {
    read_mlp(&fs::read_to_string(path)?, &path.display().to_string())
}

/// One prior per line, in pdf order.
pub fn write_priors_file(path: &Path, p: &PriorVector) -> Result<()> {
    let mut out = String::new();
    for v in p.probs() {
        let _ = writeln!(out, "{v:?}");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_priors_file(path: &Path) -> Result<PriorVector> {
    let origin = path.display().to_string();
    let probs = fs::read_to_string(path)?
        .lines()
        .enumerate()
        .map(|(i, l)| l.trim().parse::<f64>().map_err(|_| Error::parse(&origin, i + 1, "bad prior")))
        .collect::<Result<Vec<_>>>()?;
    PriorVector::new(probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let arch = MlpArch {
            input_dim: 5,
            hidden_layers: 2,
            hidden_units: 4,
            output_dim: 3,
            nonlinearity: Nonlinearity::Relu,
        };
        let m = Mlp::new(arch, 42).unwrap();
        let text = write_mlp(&m);
        assert!(text.starts_with("NNET v1\narch 5 2 4 3 relu\n"));
        let back = read_mlp(&text, "n").unwrap();
        assert_eq!(back, m);
        assert_eq!(write_mlp(&back), text);
    }

    #[test]
    fn short_row_is_rejected() {
        let m = Mlp::new(MlpArch::desk(2, 2), 1).unwrap();
        let text = write_mlp(&m).replacen("layer 2 128\n", "layer 2 128\n0.5\n", 1);
        assert!(matches!(read_mlp(&text, "n"), Err(Error::Parse { line: 4, .. })));
    }
}
