//! File formats: polytope JSON, sample CSV / JSON lines.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RhmcError};
use crate::polytope::Polytope;
use crate::sampler::{SampleRecord, SampleSet};

#[derive(Debug, Serialize, Deserialize)]
struct PolytopeFile {
    name: String,
    m: usize,
    n: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    #[serde(default)]
    x0: Option<Vec<f64>>,
}

fn io_err(e: impl std::fmt::Display) -> RhmcError {
    RhmcError::Input(format!("io: {e}"))
}

pub fn polytope_to_json(p: &Polytope) -> String {
    let file = PolytopeFile {
        name: p.name().to_string(),
        m: p.m(),
        n: p.n(),
        a: p.a().row_iter().map(|r| r.iter().copied().collect()).collect(),
        b: p.b().iter().copied().collect(),
        x0: Some(p.x0().iter().copied().collect()),
    };
    serde_json::to_string_pretty(&file).expect("polytope serializes")
}

pub fn polytope_from_json(text: &str) -> Result<Polytope> {
    let file: PolytopeFile =
        serde_json::from_str(text).map_err(|e| RhmcError::Input(format!("polytope: malformed file: {e}")))?;
    let x0 = file
        .x0
        .ok_or_else(|| RhmcError::Input("polytope: missing interior witness".into()))?;
    if file.a.len() != file.m || file.b.len() != file.m {
        return Err(RhmcError::Input(format!(
            "polytope: declared m = {} but A has {} rows and b has {} entries",
            file.m,
            file.a.len(),
            file.b.len()
        )));
    }
    if file.a.iter().any(|r| r.len() != file.n) || x0.len() != file.n {
        return Err(RhmcError::Input(format!("polytope: rows of A and x0 must have n = {} entries", file.n)));
    }
    let a = DMatrix::from_fn(file.m, file.n, |i, j| file.a[i][j]);
    let p = Polytope::new(file.name, a, DVector::from_vec(file.b), DVector::from_vec(x0))?;
    let report = p.validate();
    if !report.is_ok() {
        return Err(RhmcError::Input(format!("polytope: {}", report.failures.join("; "))));
    }
    Ok(p)
}

pub fn read_polytope(path: &Path) -> Result<Polytope> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?;
    polytope_from_json(&text)
}

pub fn write_polytope(path: &Path, p: &Polytope) -> Result<()> {
    std::fs::write(path, polytope_to_json(p)).map_err(io_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleFormat {
    #[default]
    Csv,
    Jsonl,
}

impl std::str::FromStr for SampleFormat {
    type Err = RhmcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(SampleFormat::Csv),
            "jsonl" => Ok(SampleFormat::Jsonl),
            other => Err(RhmcError::Input(format!("unknown sample format '{other}'"))),
        }
    }
}

/// CSV with header `chain,step,x_0,...`; floats use 17 significant digits.
pub fn write_samples_csv<W: Write>(mut out: W, set: &SampleSet) -> Result<()> {
    let mut header = String::from("chain,step");
    for j in 0..set.dim {
        header.push_str(&format!(",x_{j}"));
    }
    writeln!(out, "{header}").map_err(io_err)?;
    for r in &set.records {
        let mut line = format!("{},{}", r.chain, r.step);
        for v in &r.x {
            line.push_str(&format!(",{v:.16e}"));
        }
        writeln!(out, "{line}").map_err(io_err)?;
    }
    Ok(())
}

pub fn write_samples_jsonl<W: Write>(mut out: W, set: &SampleSet) -> Result<()> {
    for r in &set.records {
        let line = serde_json::to_string(r).map_err(io_err)?;
        writeln!(out, "{line}").map_err(io_err)?;
    }
    Ok(())
}

pub fn write_samples<W: Write>(out: W, set: &SampleSet, format: SampleFormat) -> Result<()> {
    match format {
        SampleFormat::Csv => write_samples_csv(out, set),
        SampleFormat::Jsonl => write_samples_jsonl(out, set),
    }
}

pub fn read_samples_csv<R: BufRead>(input: R) -> Result<SampleSet> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| io_err("empty sample file"))?.map_err(io_err)?;
    let dim = header.split(',').count().saturating_sub(2);
    let mut records = Vec::new();
    for line in lines {
        let line = line.map_err(io_err)?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = || fields.next().ok_or_else(|| io_err("short sample row"));
        let chain = next()?.parse().map_err(io_err)?;
        let step = next()?.parse().map_err(io_err)?;
        let x = (0..dim)
            .map(|_| next()?.parse::<f64>().map_err(io_err))
            .collect::<Result<Vec<_>>>()?;
        records.push(SampleRecord { chain, step, x });
    }
    Ok(SampleSet { dim, records })
}

pub fn read_samples_jsonl<R: BufRead>(input: R) -> Result<SampleSet> {
    let mut records: Vec<SampleRecord> = Vec::new();
    for line in input.lines() {
        let line = line.map_err(io_err)?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line).map_err(io_err)?);
        }
    }
    let dim = records.first().map_or(0, |r| r.x.len());
    Ok(SampleSet { dim, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::{generate, BodyKind, GenParams};
    use proptest::prelude::*;

    #[test]
    fn missing_witness_is_reported() {
        let text = r#"{"name":"c","m":2,"n":1,"A":[[1.0],[-1.0]],"b":[0.0,-1.0]}"#;
        let err = polytope_from_json(text).unwrap_err();
        assert_eq!(err.to_string(), "input: polytope: missing interior witness");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let text = r#"{"name":"c","m":3,"n":1,"A":[[1.0],[-1.0]],"b":[0.0,-1.0],"x0":[0.5]}"#;
        assert!(polytope_from_json(text).is_err());
        let text = r#"{"name":"c","m":2,"n":1,"A":[[1.0],[-1.0]],"b":[0.0,-1.0],"x0":[2.0]}"#;
        assert!(polytope_from_json(text).is_err());
    }

    #[test]
    fn field_names_are_exact() {
        let p = generate(BodyKind::Simplex, 2, GenParams::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&polytope_to_json(&p)).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["A", "b", "m", "n", "name", "x0"]);
    }

    proptest! {
        #[test]
        fn random_bodies_round_trip_bit_exactly(n in 1usize..6, extra in 0usize..8, seed in any::<u64>()) {
            let p = generate(BodyKind::RandomHalfspaces, n, GenParams { m: Some(2 * n + 1 + extra), seed: Some(seed) }).unwrap();
            let q = polytope_from_json(&polytope_to_json(&p)).unwrap();
            prop_assert_eq!(p, q);
        }

        #[test]
        fn csv_round_trips(xs in proptest::collection::vec(proptest::num::f64::NORMAL, 1..40)) {
            let set = SampleSet {
                dim: 2,
                records: xs.chunks(2).filter(|c| c.len() == 2).enumerate()
                    .map(|(i, c)| SampleRecord { chain: i % 3, step: i, x: c.to_vec() })
                    .collect(),
            };
            let mut buf = Vec::new();
            write_samples_csv(&mut buf, &set).unwrap();
            let back = read_samples_csv(&buf[..]).unwrap();
            prop_assert_eq!(&back.records, &set.records);
            let mut buf = Vec::new();
            write_samples_jsonl(&mut buf, &set).unwrap();
            let back = read_samples_jsonl(&buf[..]).unwrap();
            prop_assert_eq!(back.records, set.records);
        }
    }

    #[test]
    fn csv_header() {
        let set = SampleSet {
            dim: 3,
            records: vec![SampleRecord { chain: 0, step: 5, x: vec![0.1, 0.2, 1.0 / 3.0] }],
        };
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &set).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("chain,step,x_0,x_1,x_2"));
        assert_eq!(lines.next(), Some("0,5,1.0000000000000001e-1,2.0000000000000001e-1,3.3333333333333331e-1"));
    }
}
