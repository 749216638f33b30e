//! File formats: transition logs and posterior draws as CSV, models and
//! ambiguity sets as JSON.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::bayes::{PosteriorSamples, INGEST_TOL};
use crate::error::{Error, Result};
use crate::mdp::{Dataset, TabularMdp, Transition};
use crate::robust::AmbiguitySet;

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let file = File::open(path.as_ref())?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_mdp(path: impl AsRef<Path>) -> Result<TabularMdp> {
    read_json(path)
}

pub fn read_ambiguity_set(path: impl AsRef<Path>) -> Result<AmbiguitySet> {
    read_json(path)
}

/// Transitions from CSV with header `s,a,sprime`.
pub fn read_dataset_from<R: Read>(reader: R, num_states: usize, num_actions: usize) -> Result<Dataset> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["s", "a", "sprime"] {
        return Err(Error::Parse(format!("expected header s,a,sprime, found {}", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut data = Dataset::new(num_states, num_actions);
    for (line, row) in csv.deserialize::<Transition>().enumerate() {
        let t = row.map_err(|e| Error::Parse(format!("dataset row {}: {e}", line + 1)))?;
        data.push(t)?;
    }
    Ok(data)
}

pub fn read_dataset(path: impl AsRef<Path>, num_states: usize, num_actions: usize) -> Result<Dataset> {
    read_dataset_from(BufReader::new(File::open(path.as_ref())?), num_states, num_actions)
}

pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for t in data.samples() {
        csv.serialize(t)?;
    }
    if data.is_empty() {
        csv.write_record(["s", "a", "sprime"])?;
    }
    csv.flush()?;
    Ok(())
}

/// Posterior draws from CSV `s,a,sample_index,p0,p1,...`. Rows may come in
/// any order; every pair needs indices `0..m` for the same `m`.
pub fn read_posterior_samples_from<R: Read>(reader: R) -> Result<PosteriorSamples> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let k = headers.len().saturating_sub(3);
    let valid = k > 0
        && headers.get(0) == Some("s")
        && headers.get(1) == Some("a")
        && headers.get(2) == Some("sample_index")
        && (0..k).all(|j| headers.get(3 + j) == Some(format!("p{j}").as_str()));
    if !valid {
        return Err(Error::Parse("expected header s,a,sample_index,p0,p1,...".into()));
    }
    let parse_index = |field: &str, what: &str, line: usize| -> Result<usize> {
        field
            .parse()
            .map_err(|_| Error::Parse(format!("posterior row {line}: bad {what} {field:?}")))
    };
    let mut rows: BTreeMap<(usize, usize), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for (i, record) in csv.records().enumerate() {
        let line = i + 1;
        let record = record?;
        let s = parse_index(&record[0], "state", line)?;
        let a = parse_index(&record[1], "action", line)?;
        let idx = parse_index(&record[2], "sample index", line)?;
        let p = (3..3 + k)
            .map(|j| {
                record[j]
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("posterior row {line}: bad probability {:?}", &record[j])))
            })
            .collect::<Result<Vec<f64>>>()?;
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > INGEST_TOL || p.iter().any(|&x| x < -INGEST_TOL || !x.is_finite()) {
            return Err(Error::invalid(format!(
                "posterior row {line} (s={s}, a={a}, sample {idx}) is not a distribution: sums to {sum}"
            )));
        }
        if rows.entry((s, a)).or_default().insert(idx, p).is_some() {
            return Err(Error::invalid(format!("duplicate sample {idx} for ({s},{a})")));
        }
    }
    let num_states = rows.keys().map(|&(s, _)| s + 1).max().ok_or_else(|| Error::Parse("no posterior rows".into()))?;
    let num_actions = rows.keys().map(|&(_, a)| a + 1).max().unwrap_or(0);
    let m = rows.values().next().map_or(0, BTreeMap::len);
    let mut draws = vec![vec![Vec::new(); num_actions]; num_states];
    for s in 0..num_states {
        for a in 0..num_actions {
            let pair = rows
                .remove(&(s, a))
                .ok_or_else(|| Error::invalid(format!("no samples for ({s},{a})")))?;
            if pair.len() != m || pair.keys().next_back() != Some(&(m - 1)) {
                return Err(Error::invalid(format!(
                    "pair ({s},{a}) has {} samples with indices not 0..{m}",
                    pair.len()
                )));
            }
            draws[s][a] = pair.into_values().map(clean_row).collect();
        }
    }
    PosteriorSamples::validated(draws, INGEST_TOL)
}

fn clean_row(mut p: Vec<f64>) -> Vec<f64> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-12 {
        p.iter_mut().for_each(|x| *x = x.max(0.0));
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
    }
    p
}

pub fn read_posterior_samples(path: impl AsRef<Path>) -> Result<PosteriorSamples> {
    read_posterior_samples_from(BufReader::new(File::open(path.as_ref())?))
}

/// Writes every probability with 17 significant digits, enough to round-trip.
pub fn write_posterior_samples<W: Write>(writer: W, samples: &PosteriorSamples) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["s".to_string(), "a".into(), "sample_index".into()];
    header.extend((0..samples.num_successors()).map(|j| format!("p{j}")));
    csv.write_record(&header)?;
    for s in 0..samples.num_states() {
        for a in 0..samples.num_actions() {
            for (i, p) in samples.pair(s, a).iter().enumerate() {
                let mut record = vec![s.to_string(), a.to_string(), i.to_string()];
                record.extend(p.iter().map(|x| format!("{x:.16e}")));
                csv.write_record(&record)?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{sample_posterior, DirichletPosterior};

    #[test]
    fn dataset_csv() {
        let text = "s,a,sprime\n0,1,2\n2,0,0\n0,1,2\n";
        let data = read_dataset_from(text.as_bytes(), 3, 2).unwrap();
        assert_eq!(data.counts(0, 1), &[0, 0, 2]);
        assert_eq!(data.len(), 3);
        let mut out = Vec::new();
        write_dataset(&mut out, &data).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
        assert!(read_dataset_from("s,a,next\n0,0,0\n".as_bytes(), 1, 1).is_err());
        assert!(read_dataset_from("s,a,sprime\n0,0,5\n".as_bytes(), 2, 1).is_err());
        assert!(read_dataset_from("s,a,sprime\n0,x,0\n".as_bytes(), 2, 1).is_err());
    }

    #[test]
    fn posterior_csv_verbatim() {
        let text = "s,a,sample_index,p0,p1,p2\n0,0,0,0.2,0.3,0.5\n0,0,1,1,0,0\n1,0,1,0,0,1\n1,0,0,0.5,0.5,0\n\
                    2,0,0,0.1,0.1,0.8\n2,0,1,0.3,0.3,0.4\n";
        let samples = read_posterior_samples_from(text.as_bytes()).unwrap();
        assert_eq!(samples.m(), 2);
        assert_eq!(samples.pair(0, 0)[0], vec![0.2, 0.3, 0.5]);
        assert_eq!(samples.pair(1, 0)[0], vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn posterior_csv_rejections() {
        let bad_sum = "s,a,sample_index,p0,p1\n0,0,0,0.5,0.3\n";
        let err = read_posterior_samples_from(bad_sum.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("sums to 0.8"), "{err}");
        let ragged = "s,a,sample_index,p0,p1\n0,0,0,0.5,0.5\n0,0,1,0.5,0.5\n1,0,0,1,0\n";
        assert!(read_posterior_samples_from(ragged.as_bytes()).is_err());
        let missing = "s,a,sample_index,p0,p1\n1,0,0,1,0\n";
        assert!(read_posterior_samples_from(missing.as_bytes()).is_err());
        assert!(read_posterior_samples_from("s,a,p0\n".as_bytes()).is_err());
    }

    #[test]
    fn posterior_round_trip() {
        let post = DirichletPosterior::symmetric(2, 2, &[0.7, 1.0, 2.0]).unwrap();
        let samples = sample_posterior(&post, 6, 4).unwrap();
        let mut out = Vec::new();
        write_posterior_samples(&mut out, &samples).unwrap();
        let back = read_posterior_samples_from(out.as_slice()).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn json_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.json");
        let set = AmbiguitySet::uniform_radius(vec![vec![vec![0.5, 0.5]], vec![vec![0.0, 1.0]]], 0.3).unwrap();
        write_json(&path, &set).unwrap();
        assert_eq!(read_ambiguity_set(&path).unwrap(), set);
        assert!(read_mdp(dir.path().join("missing.json")).is_err());
    }
}
