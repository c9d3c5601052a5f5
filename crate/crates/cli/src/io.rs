use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use diffmn_core::synthgen::Cubic;
use diffmn_core::IrregularSeries;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
}

/// One JSON object per line; masked values are written as 0.
pub fn write_jsonl(path: &Path, data: &[IrregularSeries]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for s in data {
        let values = s
            .values()
            .iter()
            .zip(s.mask())
            .map(|(r, m)| r.iter().zip(m).map(|(&v, &o)| if o { v } else { 0.0 }).collect())
            .collect();
        let rec = Record {
            id: s.id().to_string(),
            times: s.times().to_vec(),
            values,
            mask: s.mask().to_vec(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<IrregularSeries>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: malformed sample", path.display(), i + 1))?;
        out.push(
            IrregularSeries::new(rec.id, rec.times, rec.values, rec.mask)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    if out.is_empty() {
        bail!("{} holds no samples", path.display());
    }
    Ok(out)
}

/// `id,a,b,c,d` rows of generating cubic coefficients.
pub fn write_truth(path: &Path, ids: &[IrregularSeries], truth: &[Cubic]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "a", "b", "c", "d"])?;
    for (s, c) in ids.iter().zip(truth) {
        let mut row = vec![s.id().to_string()];
        row.extend(c.iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Vec<Cubic>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let mut c = [0.0; 4];
            for (k, v) in c.iter_mut().enumerate() {
                *v = rec.get(k + 1).context("short truth row")?.parse()?;
            }
            Ok(c)
        })
        .collect()
}

/// A table whose rows all carry the config hash and seed.
pub fn write_table(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
    config_hash: &str,
    seed: u64,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut head: Vec<&str> = header.to_vec();
    head.extend(["seed", "config_hash"]);
    w.write_record(&head)?;
    for mut row in rows {
        row.push(seed.to_string());
        row.push(config_hash.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `step,loss` rows.
pub fn write_losses(path: &Path, losses: &[f64], config_hash: &str, seed: u64) -> Result<()> {
    let rows = losses
        .iter()
        .enumerate()
        .map(|(i, l)| vec![i.to_string(), format!("{l:?}")]);
    write_table(path, &["step", "loss"], rows, config_hash, seed)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Content hash of a dataset independent of its file layout.
pub fn dataset_hash(data: &[IrregularSeries]) -> String {
    let mut h = Sha256::new();
    for s in data {
        h.update(s.id().as_bytes());
        for (i, &t) in s.times().iter().enumerate() {
            h.update(t.to_bits().to_le_bytes());
            for (c, &v) in s.values()[i].iter().enumerate() {
                let o = s.is_observed(i, c);
                h.update([o as u8]);
                h.update((if o { v } else { 0.0 }).to_bits().to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

/// One command's entry in an output directory's `manifest.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(skip)]
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// File name to SHA-256.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            config_hash: config_hash.into(),
            seed,
            files: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, dir: &Path, name: &str) -> Result<()> {
        self.files.insert(name.into(), file_sha256(&dir.join(name))?);
        Ok(())
    }

    /// Replaces this command's entry, keeping the other commands' entries.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let mut all: BTreeMap<String, Manifest> = fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default();
        all.insert(self.command.clone(), self.clone());
        fs::write(&path, serde_json::to_string_pretty(&all)? + "\n")?;
        Ok(())
    }
}
