//! Synthetic biased-Bernoulli dataset: generation, fold splitting and CSV
//! persistence.
//!
//! Every attribute is a Bernoulli bit. The first `noise_attr_count`
//! attributes have success probability `p` regardless of the label; the
//! remaining ones use `p * (0.5 + b)` for label `+1` and `p * (0.5 - b)` for
//! label `-1`, which is the only class signal in the data.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    /// `l = 1`, one-hot `[0, 1]`.
    Positive,
    /// `l = -1` (written as `0` in some descriptions), one-hot `[1, 0]`.
    Negative,
}

impl Label {
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Label::Positive => [0.0, 1.0],
            Label::Negative => [1.0, 0.0],
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }

    pub fn from_i64(v: i64) -> Option<Self> {
        match v {
            1 => Some(Label::Positive),
            -1 | 0 => Some(Label::Negative),
            _ => None,
        }
    }

    /// Labels alternate `+1, -1, +1, ...` by record index.
    pub fn for_index(i: usize) -> Self {
        if i.is_multiple_of(2) {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub attr_count: usize,
    pub noise_attr_count: usize,
    pub p: f64,
    pub b: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 20_000,
            attr_count: 200,
            noise_attr_count: 100,
            p: 0.5,
            b: 0.05,
        }
    }
}

/// Success probability of a class-informative attribute.
pub fn biased_probability(p: f64, b: f64, label: Label) -> f64 {
    match label {
        Label::Positive => p * (0.5 + b),
        Label::Negative => p * (0.5 - b),
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::domain(format!("p = {} outside [0, 1]", self.p)));
        }
        if !(0.0..=0.5).contains(&self.b) {
            return Err(Error::domain(format!("b = {} outside [0, 0.5]", self.b)));
        }
        if self.noise_attr_count > self.attr_count {
            return Err(Error::domain(format!(
                "noise_attr_count {} exceeds attr_count {}",
                self.noise_attr_count, self.attr_count
            )));
        }
        if !self.n.is_multiple_of(2) {
            return Err(Error::domain(format!("n = {} must be even", self.n)));
        }
        for label in [Label::Positive, Label::Negative] {
            let q = biased_probability(self.p, self.b, label);
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::domain(format!(
                    "biased probability {q} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Record<'a> {
    pub attributes: &'a [u8],
    pub label: Label,
}

/// Records stored row-major as bytes in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    attr_count: usize,
    bits: Vec<u8>,
    labels: Vec<Label>,
}

impl Dataset {
    pub fn new(attr_count: usize, bits: Vec<u8>, labels: Vec<Label>) -> Result<Self> {
        if bits.len() != attr_count * labels.len() {
            return Err(Error::domain(format!(
                "{} attribute bits do not fit {} records of {attr_count}",
                bits.len(),
                labels.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::domain("attribute values must be 0 or 1"));
        }
        Ok(Dataset {
            attr_count,
            bits,
            labels,
        })
    }

    pub fn empty(attr_count: usize) -> Self {
        Dataset {
            attr_count,
            bits: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn attr_count(&self) -> usize {
        self.attr_count
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn record(&self, i: usize) -> Record<'_> {
        Record {
            attributes: &self.bits[i * self.attr_count..(i + 1) * self.attr_count],
            label: self.labels[i],
        }
    }

    pub fn records(&self) -> impl Iterator<Item = Record<'_>> + '_ {
        (0..self.len()).map(move |i| self.record(i))
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut bits = Vec::with_capacity(indices.len() * self.attr_count);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let r = self.record(i);
            bits.extend_from_slice(r.attributes);
            labels.push(r.label);
        }
        Dataset {
            attr_count: self.attr_count,
            bits,
            labels,
        }
    }

    /// Dense `f64` inputs and one-hot targets for training.
    pub fn to_samples(&self) -> Samples {
        Samples {
            input_dim: self.attr_count,
            output_dim: 2,
            inputs: self.bits.iter().map(|&b| b as f64).collect(),
            targets: self.labels.iter().flat_map(|l| l.one_hot()).collect(),
        }
    }
}

/// Training view of a dataset: row-major inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    input_dim: usize,
    output_dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Samples {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        inputs: Vec<f64>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::domain("sample dimensions must be positive"));
        }
        if !inputs.len().is_multiple_of(input_dim)
            || !targets.len().is_multiple_of(output_dim)
            || inputs.len() / input_dim != targets.len() / output_dim
        {
            return Err(Error::domain("inputs and targets disagree on sample count"));
        }
        Ok(Samples {
            input_dim,
            output_dim,
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    #[inline]
    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    #[inline]
    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.output_dim..(i + 1) * self.output_dim]
    }
}

/// Draws `spec.n` records from `stream`, one record at a time in index
/// order.
pub fn generate(spec: &SyntheticSpec, stream: &mut RandomStream) -> Result<Dataset> {
    spec.validate()?;
    let mut bits = Vec::with_capacity(spec.n * spec.attr_count);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let label = Label::for_index(i);
        let biased = biased_probability(spec.p, spec.b, label);
        for a in 0..spec.attr_count {
            let prob = if a < spec.noise_attr_count {
                spec.p
            } else {
                biased
            };
            bits.push(stream.bernoulli(prob)? as u8);
        }
        labels.push(label);
    }
    Ok(Dataset {
        attr_count: spec.attr_count,
        bits,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSet {
    pub folds: Vec<Vec<usize>>,
}

impl FoldSet {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Indices of every fold except `held`, ascending.
    pub fn complement(&self, held: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != held)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Splits records into `k` label-balanced folds. Within each label class,
/// records are dealt round-robin in dataset order, so the `j`-th positive
/// and the `j`-th negative record both land in fold `j mod k`.
pub fn split_folds(dataset: &Dataset, k: usize) -> Result<FoldSet> {
    let n = dataset.len();
    if k == 0 {
        return Err(Error::domain("fold count must be positive"));
    }
    if !n.is_multiple_of(k) || !(n / k).is_multiple_of(2) {
        return Err(Error::domain(format!(
            "{n} records cannot form {k} folds of even size"
        )));
    }
    let pos = dataset.count_label(Label::Positive);
    let neg = n - pos;
    if !pos.is_multiple_of(k) || !neg.is_multiple_of(k) || pos != neg {
        return Err(Error::domain(format!(
            "labels ({pos} positive, {neg} negative) cannot be balanced over {k} folds"
        )));
    }
    let mut folds = vec![Vec::with_capacity(n / k); k];
    let (mut seen_pos, mut seen_neg) = (0usize, 0usize);
    for (i, label) in dataset.labels().iter().enumerate() {
        let slot = match label {
            Label::Positive => {
                seen_pos += 1;
                seen_pos - 1
            }
            Label::Negative => {
                seen_neg += 1;
                seen_neg - 1
            }
        };
        folds[slot % k].push(i);
    }
    Ok(FoldSet { folds })
}

pub fn csv_header(attr_count: usize) -> String {
    let mut cols: Vec<String> = (1..=attr_count).map(|i| format!("a{i}")).collect();
    cols.push("label".to_string());
    cols.join(",")
}

/// Writes `a1,...,aN,label` with one record per row and labels in `{1,-1}`.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", csv_header(dataset.attr_count))?;
    let mut line = String::with_capacity(dataset.attr_count * 2 + 4);
    for r in dataset.records() {
        line.clear();
        for &bit in r.attributes {
            line.push(if bit == 1 { '1' } else { '0' });
            line.push(',');
        }
        line.push_str(if r.label == Label::Positive {
            "1"
        } else {
            "-1"
        });
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let parse_err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.is_empty() || &header[header.len() - 1] != "label" {
        return Err(parse_err(1, "header must end with a `label` column".into()));
    }
    let attr_count = header.len() - 1;
    let mut bits = Vec::new();
    let mut labels = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        // Line 1 is the header.
        let line = idx + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        if row.len() != attr_count + 1 {
            return Err(parse_err(
                line,
                format!(
                    "expected {} attributes, found {}",
                    attr_count,
                    row.len().saturating_sub(1)
                ),
            ));
        }
        for (c, field) in row.iter().take(attr_count).enumerate() {
            match field.trim() {
                "0" => bits.push(0),
                "1" => bits.push(1),
                other => {
                    return Err(parse_err(
                        line,
                        format!("attribute a{} is `{other}`, expected 0 or 1", c + 1),
                    ))
                }
            }
        }
        let raw = row[attr_count].trim();
        let label = raw
            .parse::<i64>()
            .ok()
            .and_then(Label::from_i64)
            .ok_or_else(|| parse_err(line, format!("label `{raw}` is not 1 or -1")))?;
        labels.push(label);
    }
    Ok(Dataset {
        attr_count,
        bits,
        labels,
    })
}
