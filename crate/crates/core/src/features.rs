//! Bottleneck feature extraction, adaptive average pooling, and the feature store.
//!
//! Feature store layout (all integers little-endian):
//!
//! ```text
//! "FEAT" | u32 version | u32 N | u32 d | u32 g
//! N x (u32 byte length, UTF-8 id)
//! N x d f32, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::Dataset;
use crate::net::{FeatureMap, Model, Scalar};

pub const FEATURE_MAGIC: &[u8; 4] = b"FEAT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    rows: Vec<f32>,
    dim: usize,
    grid: usize,
}

impl FeatureMatrix {
    /// Rows are reordered so that ids are ascending; ids must be unique.
    pub fn new(ids: Vec<String>, rows: Vec<f32>, dim: usize, grid: usize) -> Result<Self> {
        if rows.len() != ids.len() * dim {
            return Err(Error::Shape(format!(
                "{} values for {} rows of dimension {dim}",
                rows.len(),
                ids.len()
            )));
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        if let Some(w) = order.windows(2).find(|w| ids[w[0]] == ids[w[1]]) {
            return Err(Error::Data(format!("duplicate feature id {}", ids[w[0]])));
        }
        let sorted = order.windows(2).all(|w| w[0] < w[1]);
        if sorted {
            return Ok(Self { ids, rows, dim, grid });
        }
        let mut out_rows = Vec::with_capacity(rows.len());
        for &i in &order {
            out_rows.extend_from_slice(&rows[i * dim..(i + 1) * dim]);
        }
        let ids = order.iter().map(|&i| ids[i].clone()).collect();
        Ok(Self {
            ids,
            rows: out_rows,
            dim,
            grid,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|x| x.as_str().cmp(id)).ok()
    }

    /// Rows for the given ids (ids must exist).
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<FeatureMatrix> {
        let mut out_ids = Vec::with_capacity(ids.len());
        let mut rows = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let i = self
                .index_of(id.as_ref())
                .ok_or_else(|| Error::Data(format!("no features for {}", id.as_ref())))?;
            out_ids.push(self.ids[i].clone());
            rows.extend_from_slice(self.row(i));
        }
        FeatureMatrix::new(out_ids, rows, self.dim, self.grid)
    }

    /// Per-dimension z-scores; constant dimensions map to zero.
    pub fn standardized(&self) -> FeatureMatrix {
        let n = self.len() as f64;
        let mut mean = vec![0.0f64; self.dim];
        for i in 0..self.len() {
            for (m, &v) in mean.iter_mut().zip(self.row(i)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; self.dim];
        for i in 0..self.len() {
            for ((s, &v), m) in var.iter_mut().zip(self.row(i)).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
        let rows = self
            .rows
            .chunks(self.dim)
            .flat_map(|r| {
                r.iter()
                    .zip(&mean)
                    .zip(&std)
                    .map(|((&v, m), s)| if *s > 0.0 { ((v as f64 - m) / s) as f32 } else { 0.0 })
                    .collect::<Vec<_>>()
            })
            .collect();
        FeatureMatrix {
            ids: self.ids.clone(),
            rows,
            dim: self.dim,
            grid: self.grid,
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<features>", e);
        let mut buf = Vec::with_capacity(20 + self.rows.len() * 4);
        buf.extend_from_slice(FEATURE_MAGIC);
        for v in [VERSION, self.len() as u32, self.dim as u32, self.grid as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.ids {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
        for v in &self.rows {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf).map_err(io)?;
        out.flush().map_err(io)
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let bad = |m: &str| Error::format("feature", m.to_string());
        let mut head = [0u8; 20];
        input.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
        if &head[..4] != FEATURE_MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |i: usize| u32::from_le_bytes([head[i], head[i + 1], head[i + 2], head[i + 3]]);
        if word(4) != VERSION {
            return Err(bad("unsupported version"));
        }
        let (n, dim, grid) = (word(8) as usize, word(12) as usize, word(16) as usize);
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let mut len = [0u8; 4];
            input.read_exact(&mut len).map_err(|_| bad("truncated id"))?;
            let mut s = vec![0u8; u32::from_le_bytes(len) as usize];
            input.read_exact(&mut s).map_err(|_| bad("truncated id"))?;
            ids.push(String::from_utf8(s).map_err(|_| bad("id is not UTF-8"))?);
        }
        let mut raw = vec![0u8; n * dim * 4];
        input.read_exact(&mut raw).map_err(|_| bad("truncated rows"))?;
        let mut rest = [0u8; 1];
        if input.read(&mut rest).map_err(|e| Error::io("<features>", e))? != 0 {
            return Err(bad("trailing bytes"));
        }
        let rows = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let fm = FeatureMatrix::new(ids, rows, dim, grid)?;
        if fm.ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("ids not sorted"));
        }
        Ok(fm)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(f))
    }
}

fn bin(i: usize, n: usize, g: usize) -> (usize, usize) {
    ((i * n) / g, ((i + 1) * n).div_ceil(g))
}

/// Average `fmap` into a `g x g` grid per channel using adaptive bins
/// `[floor(i*h/g), ceil((i+1)*h/g))`.
pub fn adaptive_avg_pool(fmap: &FeatureMap, g: usize) -> Result<FeatureMap> {
    let (c, h, w) = (fmap.channels, fmap.height, fmap.width);
    if g == 0 || g > h || g > w {
        return Err(Error::Config(format!("pool grid {g} invalid for a {h}x{w} map")));
    }
    if fmap.data.len() != c * h * w {
        return Err(Error::Shape("feature map data does not match its shape".into()));
    }
    let mut out = Vec::with_capacity(c * g * g);
    for ch in 0..c {
        let plane = &fmap.data[ch * h * w..(ch + 1) * h * w];
        for i in 0..g {
            let (y0, y1) = bin(i, h, g);
            for j in 0..g {
                let (x0, x1) = bin(j, w, g);
                let mut sum = 0.0f64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += plane[y * w + x] as f64;
                    }
                }
                out.push((sum / ((y1 - y0) * (x1 - x0)) as f64) as f32);
            }
        }
    }
    Ok(FeatureMap {
        channels: c,
        height: g,
        width: g,
        data: out,
    })
}

/// One row per sample: the pooled bottleneck activation flattened in
/// `(channel, row, col)` order.
pub fn extract<F: Scalar>(model: &Model<F>, dataset: &Dataset, g: usize) -> Result<FeatureMatrix> {
    if model.config().input_size != dataset.size() {
        return Err(Error::Shape(format!(
            "model input {:?} vs dataset {:?}",
            model.config().input_size,
            dataset.size()
        )));
    }
    let (bh, bw) = model.config().bottleneck_size();
    if g == 0 || g > bh || g > bw {
        return Err(Error::Config(format!("pool grid {g} invalid for a {bh}x{bw} bottleneck")));
    }
    let rows = dataset
        .samples()
        .par_iter()
        .map(|s| {
            let input: Vec<F> = s.image.pixels.iter().map(|&v| F::of(v as f64)).collect();
            let fmap = model.bottleneck(&input)?;
            Ok(adaptive_avg_pool(&fmap, g)?.data)
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = model.config().bottleneck_channels() * g * g;
    FeatureMatrix::new(dataset.ids(), rows.concat(), dim, g)
}
