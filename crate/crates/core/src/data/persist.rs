//! Versioned binary files: a magic line, one JSON header line, then
//! little-endian payload.
//!
//! Posterior payload: `rows: u64`, `cols: u64`, `rows * cols` draws as `f64`
//! (row-major), then `rows` chain labels as `u32`.
//!
//! Q-network payload: `count: u64` then `count` parameters as `f64`, layer by
//! layer, weights (column-major `inputs x outputs`) before biases.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SalesScaler;
use crate::inference::{ChainStats, ParamDiagnostics, PosteriorDraws};
use crate::model::{Hyperparams, ParamLayout};
use crate::nn::Mlp;
use crate::policies::QNetwork;
use crate::retail::RetailEnvironmentSpec;

pub const POSTERIOR_MAGIC: &str = "SHELFSIM-POSTERIOR v1";
pub const QNET_MAGIC: &str = "SHELFSIM-QNET v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorHeader {
    pub config_hash: String,
    pub seed: u64,
    pub dim: usize,
    pub param_names: Vec<String>,
    pub hierarchical: bool,
    pub chain_count: usize,
    pub samples_per_chain: usize,
    pub tune: usize,
    pub environment: RetailEnvironmentSpec,
    pub hyper: Hyperparams,
    pub scaler: SalesScaler,
    /// Mean per-row training revenue, used to normalize policy inputs.
    pub revenue_scale: f64,
    pub diagnostics: Vec<ParamDiagnostics>,
    pub chain_stats: Vec<ChainStats>,
    pub failed: bool,
}

impl PosteriorHeader {
    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.environment.n_regions, self.environment.n_products, self.hierarchical)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QNetHeader {
    pub config_hash: String,
    pub seed: u64,
    pub sizes: Vec<usize>,
    pub n_regions: usize,
    pub n_products: usize,
    pub revenue_scale: f64,
}

fn write_head<W: Write, H: Serialize>(w: &mut W, magic: &str, header: &H) -> Result<()> {
    w.write_all(magic.as_bytes())?;
    w.write_all(b"\n")?;
    serde_json::to_writer(&mut *w, header)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn read_head<R: BufRead, H: DeserializeOwned>(r: &mut R, magic: &str) -> Result<H> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end_matches('\n') != magic {
        return Err(Error::Format(format!("expected {magic:?}, found {:?}", line.trim_end())));
    }
    line.clear();
    r.read_line(&mut line)?;
    Ok(serde_json::from_str(line.trim_end())?)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(())
}

pub fn write_posterior(path: &Path, header: &PosteriorHeader, draws: &PosteriorDraws) -> Result<()> {
    if header.dim != draws.dim {
        return Err(Error::DimensionMismatch("header and draws disagree on dimension".into()));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_head(&mut w, POSTERIOR_MAGIC, header)?;
    w.write_all(&(draws.n_draws() as u64).to_le_bytes())?;
    w.write_all(&(draws.dim as u64).to_le_bytes())?;
    for v in &draws.draws {
        w.write_all(&v.to_le_bytes())?;
    }
    for c in &draws.chain {
        w.write_all(&c.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_posterior(path: &Path) -> Result<(PosteriorHeader, PosteriorDraws)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let header: PosteriorHeader = read_head(&mut r, POSTERIOR_MAGIC)?;
    let rows = read_u64(&mut r)? as usize;
    let cols = read_u64(&mut r)? as usize;
    if cols != header.dim || rows != header.chain_count * header.samples_per_chain {
        return Err(Error::Format(format!("payload is {rows} x {cols}, header promises a different shape")));
    }
    let values = read_f64s(&mut r, rows * cols)?;
    let mut chain = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated chain labels: {e}")))?;
        chain.push(u32::from_le_bytes(b));
    }
    expect_eof(&mut r)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("posterior contains non-finite draws".into()));
    }
    let draws = PosteriorDraws {
        dim: cols,
        chain_count: header.chain_count,
        samples_per_chain: header.samples_per_chain,
        tune: header.tune,
        draws: values,
        chain,
        diagnostics: header.diagnostics.clone(),
        chain_stats: header.chain_stats.clone(),
        failed: header.failed,
    };
    Ok((header, draws))
}

pub fn write_qnet(path: &Path, net: &QNetwork, config_hash: &str, seed: u64) -> Result<()> {
    let header = QNetHeader {
        config_hash: config_hash.to_string(),
        seed,
        sizes: net.net.sizes(),
        n_regions: net.n_regions,
        n_products: net.n_products,
        revenue_scale: net.revenue_scale,
    };
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_head(&mut w, QNET_MAGIC, &header)?;
    let params = net.net.params();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_qnet(path: &Path) -> Result<(QNetHeader, QNetwork)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let header: QNetHeader = read_head(&mut r, QNET_MAGIC)?;
    let count = read_u64(&mut r)? as usize;
    let params = read_f64s(&mut r, count)?;
    expect_eof(&mut r)?;
    let mut net =
        Mlp::new(&header.sizes, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| Error::Format(e.to_string()))?;
    net.set_params(&params).map_err(|e| Error::Format(e.to_string()))?;
    if !net.is_finite() {
        return Err(Error::Format("network contains non-finite weights".into()));
    }
    let cells = header.n_regions * header.n_products;
    if net.input_dim() != 2 * cells + 7 || net.output_dim() != 2 * cells + 1 {
        return Err(Error::Format("network shape does not match the store".into()));
    }
    let q = QNetwork {
        net,
        n_regions: header.n_regions,
        n_products: header.n_products,
        revenue_scale: header.revenue_scale,
    };
    Ok((header, q))
}
