//! Run configuration and on-disk formats: a headered draws CSV with 17
//! significant digits per value, a JSON metadata sidecar, and an optional
//! latent-state CSV.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ColumnScaling, Dataset, IngestOptions, Threshold};
use crate::error::{Error, Result};
use crate::hyper::{HyperPrior, HyperState, KernelStructure};
use crate::kernel::{n_free_beta, KernelAtom};
use crate::mixture::MixtureState;
use crate::prior::{PriorOptions, PriorSketch};
use crate::sampler::{ChainDiagnostics, Draw, PosteriorDraws, SamplerConfig};

pub const DRAWS_FILE: &str = "draws.csv";
pub const META_FILE: &str = "draws.meta.json";
pub const LATENT_FILE: &str = "latent.csv";

/// Software name and version written into every metadata file.
pub fn software_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub response: Option<String>,
    pub covariates: Option<Vec<String>>,
    /// `COLUMN:VALUE`; the response is 1 when the column exceeds the value.
    pub threshold: Option<String>,
    pub standardize: bool,
}

impl DataConfig {
    pub fn ingest_options(&self) -> Result<IngestOptions> {
        Ok(IngestOptions {
            response: self.response.clone(),
            covariates: self.covariates.clone(),
            threshold: self.threshold.as_deref().map(str::parse::<Threshold>).transpose()?,
            standardize: self.standardize,
        })
    }

    pub fn load(&self) -> Result<Dataset> {
        let path = self
            .path
            .as_ref()
            .ok_or_else(|| Error::Config("no data file given; use --data or [data] path".into()))?;
        crate::data::ingest_csv(path, &self.ingest_options()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// 1 (uniform correlations, one covariate only) or 2 (inverse-Wishart).
    /// Unset picks 1 for a single covariate and 2 otherwise.
    pub approach: Option<u8>,
    /// Covariate ranges and centers; unset uses the observed range and midpoint.
    pub ranges: Option<Vec<f64>>,
    pub centers: Option<Vec<f64>>,
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub theta_share: f64,
    /// Monte Carlo size of each candidate in the correlation search.
    pub sim_budget: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        let o = PriorOptions::default();
        PriorConfig {
            approach: None,
            ranges: None,
            centers: None,
            a_alpha: o.a_alpha,
            b_alpha: o.b_alpha,
            theta_share: o.theta_share,
            sim_budget: 100_000,
        }
    }
}

impl PriorConfig {
    pub fn options(&self) -> PriorOptions {
        PriorOptions {
            a_alpha: self.a_alpha,
            b_alpha: self.b_alpha,
            theta_share: self.theta_share,
            structure: KernelStructure::Full,
        }
    }

    pub fn approach_for(&self, p: usize) -> Result<u8> {
        match self.approach {
            None if p == 1 => Ok(1),
            None => Ok(2),
            Some(1) if p > 1 => Err(Error::Config(format!(
                "prior approach 1 supports a single covariate; the data have {p}. Use --prior-approach 2"
            ))),
            Some(a @ (1 | 2)) => Ok(a),
            Some(a) => Err(Error::Config(format!("prior approach must be 1 or 2, got {a}"))),
        }
    }

    /// The sketch in the units of `data`. Given ranges and centers are in the
    /// original units and are mapped through the standardization if any.
    pub fn sketch(&self, data: &Dataset) -> Result<PriorSketch> {
        match (&self.ranges, &self.centers) {
            (None, None) => PriorSketch::from_data(data),
            (Some(r), Some(c)) => {
                if r.len() != data.p() || c.len() != data.p() {
                    return Err(Error::Config(format!(
                        "prior ranges and centers need {} entries each",
                        data.p()
                    )));
                }
                match &data.scaling {
                    None => PriorSketch::new(r.clone(), c.clone()),
                    Some(sc) => PriorSketch::new(
                        r.iter().zip(sc).map(|(r, s)| r / s.sd).collect(),
                        c.iter().zip(sc).map(|(c, s)| (c - s.mean) / s.sd).collect(),
                    ),
                }
            }
            _ => Err(Error::Config("prior ranges and centers must be given together".into())),
        }
    }
}

/// Grid sizes for curves and selection quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    /// Points along each regression curve and inverse density.
    pub curve_points: usize,
    /// Points per axis of the selection-analysis tensor grid. Unset gives 200
    /// for up to two covariates and about 1.25·10⁵ grid nodes otherwise.
    pub selection_points: Option<usize>,
    /// Half-width of the selection grid in covariate standard deviations.
    pub selection_width: f64,
    /// Simulated mixtures per prior-predictive band.
    pub prior_sims: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            curve_points: 50,
            selection_points: None,
            selection_width: 5.0,
            prior_sims: 2000,
        }
    }
}

impl GridSettings {
    pub fn selection_points_for(&self, p: usize) -> usize {
        self.selection_points.unwrap_or_else(|| {
            if p <= 2 {
                200
            } else {
                (1.25e5_f64.powf(1.0 / p as f64).round() as usize).max(10)
            }
        })
    }
}

/// Everything that determines a run. Read from TOML; CLI flags override fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub prior: PriorConfig,
    pub sampler: SamplerConfig,
    pub grid: GridSettings,
}

impl RunConfig {
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        sha256_hex(json.as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// What the fitted data looked like, enough to map grids between units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: String,
    pub n: usize,
    pub p: usize,
    pub n_positive: usize,
    pub response: String,
    pub covariates: Vec<String>,
    pub scaling: Option<Vec<ColumnScaling>>,
    /// Observed `(min, max)` per covariate in original units.
    pub ranges: Vec<(f64, f64)>,
}

impl DataSummary {
    pub fn of(data: &Dataset) -> Self {
        let ranges = data
            .ranges()
            .into_iter()
            .enumerate()
            .map(|(j, (lo, hi))| match &data.scaling {
                Some(sc) => (sc[j].mean + sc[j].sd * lo, sc[j].mean + sc[j].sd * hi),
                None => (lo, hi),
            })
            .collect();
        DataSummary {
            source: data.provenance.clone(),
            n: data.n(),
            p: data.p(),
            n_positive: data.n_positive(),
            response: data.response_name.clone(),
            covariates: data.covariate_names.clone(),
            scaling: data.scaling.clone(),
            ranges,
        }
    }

    /// Original-unit value of covariate `j` in model units.
    pub fn to_model(&self, j: usize, x: f64) -> f64 {
        match &self.scaling {
            Some(sc) => (x - sc[j].mean) / sc[j].sd,
            None => x,
        }
    }

    pub fn covariate_sd(&self, j: usize) -> f64 {
        self.scaling.as_ref().map_or(1.0, |sc| sc[j].sd)
    }

    pub fn covariate_shift(&self, j: usize) -> f64 {
        self.scaling.as_ref().map_or(0.0, |sc| sc[j].mean)
    }
}

/// Sidecar of a draws file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsMetadata {
    pub software: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub prior_approach: u8,
    pub structure: KernelStructure,
    pub truncation: usize,
    pub n_draws: usize,
    pub data: DataSummary,
    pub prior: HyperPrior,
    pub diagnostics: Vec<ChainDiagnostics>,
    /// Mean over chains of the posterior mean of `p_N`.
    pub mean_last_weight: f64,
    pub floor_hits: usize,
    pub draws_sha256: String,
}

impl DrawsMetadata {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Config(format!("{}: not a draws metadata file: {e}", path.display())))
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Shortest round-trip-safe fixed form: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Column names of a draws file for `p` covariates and truncation `n`.
/// Atom entries are `w_l`, `mu_l_i` (`i = 0` is the latent response),
/// `bt_l_k` and the free `delta_l_i`, `i ≥ 2`; then `ψ`.
pub fn draws_header(p: usize, truncation: usize, structure: KernelStructure) -> Vec<String> {
    let dim = p + 1;
    let q = n_free_beta(dim);
    let q_free = structure.n_free(p);
    let mut h: Vec<String> = ["chain", "iteration", "alpha", "n_occupied"].map(String::from).to_vec();
    for l in 1..=truncation {
        h.push(format!("w_{l}"));
        h.extend((0..dim).map(|i| format!("mu_{l}_{i}")));
        h.extend((1..=q).map(|k| format!("bt_{l}_{k}")));
        h.extend((2..=dim).map(|i| format!("delta_{l}_{i}")));
    }
    h.extend((0..dim).map(|i| format!("m_{i}")));
    h.extend((0..dim).flat_map(|i| (0..dim).map(move |j| format!("V_{i}_{j}"))));
    h.extend((1..=q_free).map(|k| format!("theta_{k}")));
    h.extend((1..=q_free).flat_map(|i| (1..=q_free).map(move |j| format!("C_{i}_{j}"))));
    h.extend((2..=dim).map(|i| format!("s_{i}")));
    h
}

fn draw_row(d: &Draw) -> String {
    let mut cells = vec![
        d.chain.to_string(),
        d.iteration.to_string(),
        fmt_f64(d.mixture.alpha()),
        d.n_occupied.to_string(),
    ];
    for (w, atom) in d.mixture.weights().iter().zip(d.mixture.atoms()) {
        cells.push(fmt_f64(*w));
        cells.extend(atom.mu().iter().map(|&v| fmt_f64(v)));
        cells.extend(atom.beta_tilde().iter().map(|&v| fmt_f64(v)));
        cells.extend(atom.delta().iter().skip(1).map(|&v| fmt_f64(v)));
    }
    let psi = &d.psi;
    cells.extend(psi.m.iter().map(|&v| fmt_f64(v)));
    cells.extend(psi.v.transpose().iter().map(|&v| fmt_f64(v)));
    cells.extend(psi.theta.iter().map(|&v| fmt_f64(v)));
    cells.extend(psi.c.transpose().iter().map(|&v| fmt_f64(v)));
    cells.extend(psi.s.iter().map(|&v| fmt_f64(v)));
    cells.join(",")
}

fn write_lines(path: &Path, header: &[String], rows: impl Iterator<Item = String>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let emit = || -> std::io::Result<()> {
        writeln!(out, "{}", header.join(","))?;
        for row in rows {
            writeln!(out, "{row}")?;
        }
        out.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

pub fn write_draws(path: impl AsRef<Path>, draws: &PosteriorDraws) -> Result<()> {
    let header = draws_header(draws.p, draws.truncation, draws.structure);
    write_lines(path.as_ref(), &header, draws.draws.iter().map(draw_row))
}

/// Latent responses and 1-based labels of every kept draw that carries them.
pub fn write_latent(path: impl AsRef<Path>, draws: &PosteriorDraws) -> Result<()> {
    let n = draws.draws.iter().find_map(|d| d.latent.as_ref()).map_or(0, |l| l.z.len());
    let mut header: Vec<String> = vec!["chain".into(), "iteration".into()];
    header.extend((1..=n).map(|i| format!("z_{i}")));
    header.extend((1..=n).map(|i| format!("label_{i}")));
    let rows = draws.draws.iter().filter_map(|d| {
        let lat = d.latent.as_ref()?;
        let mut cells = vec![d.chain.to_string(), d.iteration.to_string()];
        cells.extend(lat.z.iter().map(|&v| fmt_f64(v)));
        cells.extend(lat.labels.iter().map(|l| (l + 1).to_string()));
        Some(cells.join(","))
    });
    write_lines(path.as_ref(), &header, rows)
}

struct Cursor<'a> {
    cells: Vec<&'a str>,
    at: usize,
    line: usize,
}

impl Cursor<'_> {
    fn next_f64(&mut self) -> Result<f64> {
        let raw = self
            .cells
            .get(self.at)
            .ok_or_else(|| Error::Data(format!("draws line {}: too few columns", self.line)))?;
        self.at += 1;
        raw.parse()
            .map_err(|_| Error::Data(format!("draws line {}: bad number '{raw}'", self.line)))
    }

    fn take(&mut self, k: usize) -> Result<Vec<f64>> {
        (0..k).map(|_| self.next_f64()).collect()
    }

    fn next_usize(&mut self) -> Result<usize> {
        let raw = self
            .cells
            .get(self.at)
            .ok_or_else(|| Error::Data(format!("draws line {}: too few columns", self.line)))?;
        self.at += 1;
        raw.parse()
            .map_err(|_| Error::Data(format!("draws line {}: bad integer '{raw}'", self.line)))
    }
}

/// Reads a draws file written by [`write_draws`]. Values round-trip exactly.
pub fn read_draws(path: impl AsRef<Path>, meta: &DrawsMetadata) -> Result<PosteriorDraws> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let p = meta.data.p;
    let dim = p + 1;
    let q = n_free_beta(dim);
    let q_free = meta.structure.n_free(p);
    let expected = draws_header(p, meta.truncation, meta.structure).join(",");
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .ok_or_else(|| Error::Data(format!("{} is empty", path.display())))?;
    if header != expected {
        return Err(Error::Data(format!(
            "{} does not match its metadata (p = {p}, N = {})",
            path.display(),
            meta.truncation
        )));
    }
    let mut draws = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor {
            cells: line.split(',').collect(),
            at: 0,
            line: i + 2,
        };
        let chain = cur.next_usize()?;
        let iteration = cur.next_usize()?;
        let alpha = cur.next_f64()?;
        let n_occupied = cur.next_usize()?;
        let mut weights = Vec::with_capacity(meta.truncation);
        let mut atoms = Vec::with_capacity(meta.truncation);
        for _ in 0..meta.truncation {
            weights.push(cur.next_f64()?);
            let mu = DVector::from_vec(cur.take(dim)?);
            let bt = DVector::from_vec(cur.take(q)?);
            atoms.push(KernelAtom::from_free_delta(mu, bt, &cur.take(p)?)?);
        }
        let psi = HyperState {
            m: DVector::from_vec(cur.take(dim)?),
            v: DMatrix::from_row_slice(dim, dim, &cur.take(dim * dim)?),
            theta: DVector::from_vec(cur.take(q_free)?),
            c: DMatrix::from_row_slice(q_free, q_free, &cur.take(q_free * q_free)?),
            s: cur.take(p)?,
        };
        if cur.at != cur.cells.len() {
            return Err(Error::Data(format!("draws line {}: too many columns", cur.line)));
        }
        draws.push(Draw {
            chain,
            iteration,
            mixture: MixtureState::new(weights, atoms, alpha)?,
            psi,
            n_occupied,
            latent: None,
        });
    }
    Ok(PosteriorDraws {
        structure: meta.structure,
        p,
        truncation: meta.truncation,
        draws,
        diagnostics: meta.diagnostics.clone(),
    })
}

/// Reads `draws.csv` and its sidecar from a fit directory, checking the hash.
pub fn load_fit(dir: impl AsRef<Path>) -> Result<(DrawsMetadata, PosteriorDraws)> {
    let dir = dir.as_ref();
    let meta = DrawsMetadata::read(dir.join(META_FILE))?;
    let draws_path = dir.join(DRAWS_FILE);
    let hash = sha256_file(&draws_path)?;
    if hash != meta.draws_sha256 {
        return Err(Error::Data(format!(
            "{} was modified after it was written (hash mismatch)",
            draws_path.display()
        )));
    }
    let draws = read_draws(&draws_path, &meta)?;
    Ok((meta, draws))
}

/// Writes a long-format CSV: header then rows of formatted cells.
pub fn write_table(path: impl AsRef<Path>, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    write_lines(path.as_ref(), &header, rows.map(|r| r.join(",")))
}
