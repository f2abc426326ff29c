//! On-disk layout: CSV tables and matrices, JSON metadata and manifest.
//!
//! Matrices are written one row per line with `{:e}` formatting, which is the
//! shortest representation that parses back to the same `f64`, so archives
//! reload bit for bit.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use faer::Mat;
use oeduu::reduction::LowRankGramians;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::seeds::SeedAudit;

pub const ROM_DIR: &str = "rom";
pub const EVAL_ROM_DIR: &str = "evaluation/rom";
pub const DESIGN_DIR: &str = "designs";
pub const EVAL_DIR: &str = "evaluation";
pub const VALIDATE_DIR: &str = "validate";
pub const MANIFEST: &str = "manifest.json";

pub fn write_matrix(path: &Path, m: &Mat<f64>) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix`]; `ncols` is needed for the
/// zero-row case.
pub fn read_matrix(path: &Path, ncols: usize) -> CliResult<Mat<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| CliError::Archive(format!("{}: bad number {v:?}: {e}", path.display()))))
            .collect::<CliResult<Vec<f64>>>()?;
        if row.len() != ncols {
            return Err(CliError::Archive(format!("{}: expected {ncols} columns, found {}", path.display(), row.len())));
        }
        rows.push(row);
    }
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(CliError::from)).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Archive(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// One sample of a reduced-model archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub index: usize,
    pub seed: u64,
    pub t0: f64,
    pub cluster: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSize {
    pub mu: f64,
    pub clusters: usize,
    pub cluster: usize,
    pub members: usize,
    pub k: usize,
    pub k_range: usize,
    pub k_corange: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomMeta {
    pub sigma: f64,
    pub s: usize,
    pub r: usize,
    pub obs_times: Vec<f64>,
    pub mu: f64,
    pub clusters: usize,
    pub pde_solves: u64,
}

/// Factored Gramians of every sample plus what is needed to interpret them.
#[derive(Debug, Clone)]
pub struct RomArchive {
    pub meta: RomMeta,
    pub samples: Vec<SampleInfo>,
    pub gramians: Vec<LowRankGramians>,
    pub basis_sizes: Vec<BasisSize>,
}

impl RomArchive {
    pub fn d(&self) -> usize {
        self.meta.s * self.meta.r
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir.join("gramians"))?;
        write_json(&dir.join("rom.json"), &self.meta)?;
        write_rows(&dir.join("samples.csv"), &self.samples)?;
        write_rows(&dir.join("basis_sizes.csv"), &self.basis_sizes)?;
        for (info, g) in self.samples.iter().zip(&self.gramians) {
            write_matrix(&dir.join(format!("gramians/u_{:04}.csv", info.index)), &g.u)?;
            write_matrix(&dir.join(format!("gramians/c_{:04}.csv", info.index)), &g.c)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> CliResult<Self> {
        if !dir.join("rom.json").exists() {
            return Err(CliError::Archive(format!("no reduced-model archive in {}", dir.display())));
        }
        let meta: RomMeta = read_json(&dir.join("rom.json"))?;
        let samples: Vec<SampleInfo> = read_rows(&dir.join("samples.csv"))?;
        let basis_sizes = read_rows(&dir.join("basis_sizes.csv"))?;
        let mut gramians = Vec::with_capacity(samples.len());
        for info in &samples {
            let u = read_matrix(&dir.join(format!("gramians/u_{:04}.csv", info.index)), info.rank)?;
            let c = read_matrix(&dir.join(format!("gramians/c_{:04}.csv", info.index)), info.rank)?;
            if u.nrows() != meta.s * meta.r || c.nrows() != info.rank {
                return Err(CliError::Archive(format!("sample {}: factor shapes do not match the metadata", info.index)));
            }
            gramians.push(LowRankGramians { u, c });
        }
        Ok(Self { meta, samples, gramians, basis_sizes })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub name: String,
    pub wall_seconds: f64,
    /// Solves with the prior operator or the transport step matrix.
    pub pde_solves: u64,
}

/// Everything needed to rerun an output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub versions: Vec<(String, String)>,
    pub seeds: SeedAudit,
    pub phases: Vec<PhaseRecord>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            config: config.clone(),
            versions: vec![
                ("oeduu-core".into(), oeduu::VERSION.into()),
                ("oeduu-cli".into(), env!("CARGO_PKG_VERSION").into()),
            ],
            seeds: SeedAudit::new(config.seed, config.experiment.n_saa, config.evaluation.n_eval),
            phases: Vec::new(),
            files: Vec::new(),
        }
    }

    /// Loads the manifest of `out` if it was written for the same
    /// configuration, otherwise starts a new one.
    pub fn load_or_new(out: &Path, config: &ExperimentConfig) -> Self {
        match read_json::<RunManifest>(&out.join(MANIFEST)) {
            Ok(m) if m.config == *config => m,
            _ => Self::new(config),
        }
    }

    pub fn record(&mut self, phase: PhaseRecord) {
        self.phases.retain(|p| p.name != phase.name);
        self.phases.push(phase);
    }

    /// Rehashes every file under `out` and writes the manifest.
    pub fn save(&mut self, out: &Path) -> CliResult<()> {
        self.files = checksum_tree(out)?;
        write_json(&out.join(MANIFEST), self)
    }
}

fn walk(dir: &Path, acc: &mut Vec<PathBuf>) -> CliResult<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            walk(&p, acc)?;
        } else {
            acc.push(p);
        }
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> CliResult<(u64, String)> {
    let mut f = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        total += n as u64;
        hasher.update(&buf[..n]);
    }
    let hex = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((total, hex))
}

/// Sorted checksums of all files under `root` except the manifest itself.
pub fn checksum_tree(root: &Path) -> CliResult<Vec<FileEntry>> {
    let mut files = Vec::new();
    walk(root, &mut files)?;
    let mut out = Vec::new();
    for p in files {
        let rel = p.strip_prefix(root).expect("walked under root").to_string_lossy().replace('\\', "/");
        if rel == MANIFEST {
            continue;
        }
        let (bytes, sha256) = sha256_file(&p)?;
        out.push(FileEntry { path: rel, bytes, sha256 });
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}
