//! Text formats: datasets, weight checkpoints, metrics CSV and key-value
//! blocks.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! file parses back to bit-identical values.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::config::parse_key_values;
use crate::data::{DataConfig, Dataset, Example, Label, PatchOrder};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Weights};
use crate::probes::TrajectoryRecord;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn field<T: FromStr>(line: usize, name: &str, s: Option<&str>) -> Result<T> {
    let s = s.ok_or_else(|| parse_err(line, format!("missing {name}")))?;
    s.parse().map_err(|_| parse_err(line, format!("bad {name}: {s:?}")))
}

/// Non-empty lines that are not `#` comments, with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Header `d n s sigma_p alpha seed`, then `y patch_order idx:val ...` per
/// example with 1-based indices; index 1 is always written.
pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let c = &dataset.config;
    writeln!(out, "# d n s sigma_p alpha seed")?;
    writeln!(
        out,
        "{} {} {} {} {} {}",
        c.d,
        dataset.len(),
        c.s,
        c.sigma_p,
        c.alpha,
        c.seed
    )?;
    let mut line = String::new();
    for e in &dataset.examples {
        line.clear();
        let _ = write!(line, "{} {} 1:{}", e.label, e.patch_order.feature_slot(), e.noise_first);
        for (&k, &v) in e.support.iter().zip(&e.values) {
            let _ = write!(line, " {}:{}", k + 1, v);
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_dataset(dataset, BufWriter::new(File::create(path)?))
}

/// Inverse of [`write_dataset`]. The file does not record whether labels
/// were forced to balance, so `balanced` is set when the label counts agree.
pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut text = String::new();
    BufReader::new(input).read_to_string(&mut text)?;
    let mut lines = content_lines(&text);
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let mut h = header.split_whitespace();
    let d: usize = field(hl, "d", h.next())?;
    let n: usize = field(hl, "n", h.next())?;
    let s: usize = field(hl, "s", h.next())?;
    let sigma_p: f64 = field(hl, "sigma_p", h.next())?;
    let alpha: f64 = field(hl, "alpha", h.next())?;
    let seed: u64 = field(hl, "seed", h.next())?;
    if h.next().is_some() {
        return Err(parse_err(hl, "trailing header fields"));
    }

    let mut examples = Vec::with_capacity(n);
    for (ln, line) in lines {
        let mut parts = line.split_whitespace();
        let y: i64 = field(ln, "label", parts.next())?;
        let label = Label::from_sign(y).ok_or_else(|| parse_err(ln, format!("label must be +1 or -1, got {y}")))?;
        let slot: u8 = field(ln, "patch order", parts.next())?;
        let patch_order = PatchOrder::from_feature_slot(slot)
            .ok_or_else(|| parse_err(ln, format!("patch order must be 1 or 2, got {slot}")))?;
        let mut noise_first = None;
        let mut support = Vec::with_capacity(s);
        let mut values = Vec::with_capacity(s);
        for tok in parts {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(ln, format!("expected idx:val, got {tok:?}")))?;
            let i: usize = field(ln, "index", Some(i))?;
            let v: f64 = field(ln, "value", Some(v))?;
            if i == 0 || i > d {
                return Err(parse_err(ln, format!("index {i} outside 1..={d}")));
            }
            if i == 1 {
                noise_first = Some(v);
            } else {
                if support.last().is_some_and(|&last| last as usize >= i - 1) {
                    return Err(parse_err(ln, "indices must be strictly increasing"));
                }
                support.push((i - 1) as u32);
                values.push(v);
            }
        }
        let noise_first = noise_first.ok_or_else(|| parse_err(ln, "coordinate 1 entry missing"))?;
        examples.push(Example {
            label,
            patch_order,
            noise_first,
            support,
            values,
        });
    }
    if examples.len() != n {
        return Err(parse_err(
            0,
            format!("header declares {n} examples, found {}", examples.len()),
        ));
    }
    let pos = examples.iter().filter(|e| e.label == Label::Pos).count();
    Ok(Dataset {
        config: DataConfig {
            d,
            n,
            s,
            sigma_p,
            alpha,
            balanced: 2 * pos == n,
            seed,
        },
        examples,
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(File::open(path)?)
}

/// Header `d m q sigma_0 lambda seed`, then `j r v1 ... vd` with the
/// `j = +1` block first and `r` counted from 1.
pub fn write_weights<W: Write>(w: &Weights, model: &ModelConfig, mut out: W) -> Result<()> {
    writeln!(out, "# d m q sigma_0 lambda seed")?;
    writeln!(
        out,
        "{} {} {} {} {} {}",
        w.dim(),
        w.width(),
        model.q,
        model.sigma_0,
        model.lambda,
        model.seed
    )?;
    let mut line = String::new();
    for (j, r, row) in w.rows() {
        line.clear();
        let _ = write!(line, "{} {}", j, r + 1);
        for v in row {
            let _ = write!(line, " {v}");
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_weights(w: &Weights, model: &ModelConfig, path: &Path) -> Result<()> {
    write_weights(w, model, BufWriter::new(File::create(path)?))
}

pub fn read_weights<R: Read>(input: R) -> Result<(Weights, ModelConfig)> {
    let mut text = String::new();
    BufReader::new(input).read_to_string(&mut text)?;
    let mut lines = content_lines(&text);
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let mut h = header.split_whitespace();
    let d: usize = field(hl, "d", h.next())?;
    let m: usize = field(hl, "m", h.next())?;
    let model = ModelConfig {
        m,
        q: field(hl, "q", h.next())?,
        sigma_0: field(hl, "sigma_0", h.next())?,
        lambda: field(hl, "lambda", h.next())?,
        seed: field(hl, "seed", h.next())?,
    };
    let mut w = Weights::zeros(d, m);
    let expected: Vec<(Label, usize)> = Label::BOTH.iter().flat_map(|&j| (0..m).map(move |r| (j, r))).collect();
    let mut count = 0;
    for (ln, line) in lines {
        let mut parts = line.split_whitespace();
        let j: i64 = field(ln, "j", parts.next())?;
        let r: usize = field(ln, "r", parts.next())?;
        let label = Label::from_sign(j).ok_or_else(|| parse_err(ln, format!("j must be +1 or -1, got {j}")))?;
        if expected.get(count) != Some(&(label, r.wrapping_sub(1))) {
            return Err(parse_err(ln, format!("row ({j}, {r}) out of order")));
        }
        let row = w.row_mut(label, r - 1);
        let mut filled = 0;
        for (slot, tok) in row.iter_mut().zip(parts.by_ref()) {
            *slot = field(ln, "weight", Some(tok))?;
            filled += 1;
        }
        if filled != d || parts.next().is_some() {
            return Err(parse_err(ln, format!("expected {d} weights")));
        }
        count += 1;
    }
    if count != 2 * m {
        return Err(parse_err(0, format!("expected {} rows, found {count}", 2 * m)));
    }
    Ok((w, model))
}

pub fn load_weights(path: &Path) -> Result<(Weights, ModelConfig)> {
    read_weights(File::open(path)?)
}

pub const METRICS_HEADER: &str = "iter,loss,reg_term,grad_l1,grad_fro,train_err,lambda_plus,lambda_minus,gamma_max_plus,gamma_max_minus,gamma_min_plus,gamma_min_minus,first_coord_plus,first_coord_minus,test_err";

/// Streams trajectory records as CSV rows under [`METRICS_HEADER`].
pub struct MetricsWriter<W: Write> {
    out: W,
    line: String,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self {
            out,
            line: String::new(),
        })
    }

    pub fn write(&mut self, r: &TrajectoryRecord) -> Result<()> {
        self.line.clear();
        let _ = write!(
            self.line,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},",
            r.iter,
            r.loss,
            r.reg_term,
            r.grad_l1,
            r.grad_fro,
            r.train_error,
            r.lambda_plus,
            r.lambda_minus,
            r.gamma_max_plus,
            r.gamma_max_minus,
            r.gamma_min_plus,
            r.gamma_min_minus,
            r.first_coord_plus,
            r.first_coord_minus
        );
        if let Some(t) = r.test_error {
            let _ = write!(self.line, "{t}");
        }
        writeln!(self.out, "{}", self.line)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_metrics(records: &[TrajectoryRecord], path: &Path) -> Result<()> {
    let mut w = MetricsWriter::new(BufWriter::new(File::create(path)?))?;
    for r in records {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<TrajectoryRecord>> {
    let mut lines = BufReader::new(input).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != METRICS_HEADER {
        return Err(parse_err(1, "unexpected metrics header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let ln = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 15 {
            return Err(parse_err(ln, format!("expected 15 columns, found {}", cols.len())));
        }
        let f = |k: usize| -> Result<f64> { field(ln, "value", Some(cols[k])) };
        out.push(TrajectoryRecord {
            iter: field(ln, "iter", Some(cols[0]))?,
            loss: f(1)?,
            reg_term: f(2)?,
            grad_l1: f(3)?,
            grad_fro: f(4)?,
            train_error: f(5)?,
            lambda_plus: f(6)?,
            lambda_minus: f(7)?,
            gamma_max_plus: f(8)?,
            gamma_max_minus: f(9)?,
            gamma_min_plus: f(10)?,
            gamma_min_minus: f(11)?,
            first_coord_plus: f(12)?,
            first_coord_minus: f(13)?,
            test_error: if cols[14].is_empty() { None } else { Some(f(14)?) },
        });
    }
    Ok(out)
}

pub fn load_metrics(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    read_metrics(File::open(path)?)
}

pub fn format_key_values<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{} = {}", k.as_ref(), v.as_ref());
    }
    out
}

pub fn write_key_values<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)], path: &Path) -> Result<()> {
    std::fs::write(path, format_key_values(pairs))?;
    Ok(())
}

pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    parse_key_values(&std::fs::read_to_string(path)?)
}
