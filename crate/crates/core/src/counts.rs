//! Count matrices: ingestion, total-count normalization, and a synthetic
//! Poisson generator with clustered latent profiles.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use crate::error::{param, Error, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountFormat {
    MatrixMarket,
    DenseCsv,
}

impl FromStr for CountFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "matrix-market" | "mtx" | "mm" => Ok(CountFormat::MatrixMarket),
            "dense-csv" | "csv" => Ok(CountFormat::DenseCsv),
            other => param(format!("unknown count format `{other}`")),
        }
    }
}

impl CountFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("mtx") => CountFormat::MatrixMarket,
            _ => CountFormat::DenseCsv,
        }
    }
}

/// Sparse nonnegative integer matrix in CSR layout, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<u64>,
    totals: Vec<u64>,
    pub labels: Option<Vec<String>>,
}

impl CountMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// explicit zeros dropped. Rows with zero total are rejected.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, u64)]) -> Result<Self> {
        let mut rows: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); n_rows];
        for &(i, j, v) in triplets {
            if i >= n_rows || j >= n_cols {
                return Err(Error::Dimension(format!(
                    "entry ({i},{j}) outside a {n_rows}x{n_cols} matrix"
                )));
            }
            if v > 0 {
                *rows[i].entry(j).or_insert(0) += v;
            }
        }
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut totals = Vec::with_capacity(n_rows);
        indptr.push(0);
        for row in rows {
            let mut t = 0u64;
            for (j, v) in row {
                indices.push(j);
                values.push(v);
                t += v;
            }
            totals.push(t);
            indptr.push(indices.len());
        }
        let zero: Vec<usize> = totals
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == 0)
            .map(|(i, _)| i)
            .collect();
        if !zero.is_empty() {
            return Err(Error::ZeroTotalRows(zero));
        }
        Ok(Self {
            n_cols,
            indptr,
            indices,
            values,
            totals,
            labels: None,
        })
    }

    pub fn from_dense(counts: &Array2<u64>) -> Result<Self> {
        let (n, m) = counts.dim();
        let trip: Vec<(usize, usize, u64)> = counts
            .indexed_iter()
            .filter(|(_, v)| **v > 0)
            .map(|((i, j), v)| (i, j, *v))
            .collect();
        Self::from_triplets(n, m, &trip)
    }

    pub fn n_rows(&self) -> usize {
        self.totals.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn totals(&self) -> &[u64] {
        &self.totals
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[u64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn to_dense(&self) -> Array2<u64> {
        let mut out = Array2::zeros((self.n_rows(), self.n_cols));
        for i in 0..self.n_rows() {
            let (idx, val) = self.row(i);
            for (j, v) in idx.iter().zip(val) {
                out[[i, *j]] = *v;
            }
        }
        out
    }

    /// A new matrix holding the rows in `rows`, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut totals = Vec::with_capacity(rows.len());
        for &i in rows {
            if i >= self.n_rows() {
                return Err(Error::Dimension(format!("row {i} out of range")));
            }
            let (idx, val) = self.row(i);
            indices.extend_from_slice(idx);
            values.extend_from_slice(val);
            totals.push(self.totals[i]);
            indptr.push(indices.len());
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&i| l[i].clone()).collect());
        Ok(Self {
            n_cols: self.n_cols,
            indptr,
            indices,
            values,
            totals,
            labels,
        })
    }

    /// Attaches one label per row.
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_rows() {
            return param(format!("{} labels for {} rows", labels.len(), self.n_rows()));
        }
        self.labels = Some(labels);
        Ok(self)
    }
}

fn parse_err<T>(path: &Path, line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    })
}

/// Reads a count matrix. With `transpose`, file rows are treated as columns
/// (for gene-by-cell matrix-market files).
pub fn ingest_counts(path: &Path, format: CountFormat, transpose: bool) -> Result<CountMatrix> {
    let (n, m, mut trip) = match format {
        CountFormat::MatrixMarket => read_matrix_market(path)?,
        CountFormat::DenseCsv => read_dense_csv(path)?,
    };
    if transpose {
        for t in trip.iter_mut() {
            *t = (t.1, t.0, t.2);
        }
        CountMatrix::from_triplets(m, n, &trip)
    } else {
        CountMatrix::from_triplets(n, m, &trip)
    }
}

type Triplets = (usize, usize, Vec<(usize, usize, u64)>);

fn parse_count(tok: &str) -> Option<u64> {
    if let Ok(v) = tok.parse::<u64>() {
        return Some(v);
    }
    let f: f64 = tok.parse().ok()?;
    (f >= 0.0 && f.fract() == 0.0 && f < 1.8e19).then_some(f as u64)
}

fn read_matrix_market(path: &Path) -> Result<Triplets> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l?,
        None => return parse_err(path, 1, "empty file"),
    };
    let fields: Vec<String> = header.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return parse_err(path, 1, "missing %%MatrixMarket matrix header");
    }
    if fields[2] != "coordinate" {
        return parse_err(path, 1, format!("unsupported layout `{}`", fields[2]));
    }
    let pattern = match fields[3].as_str() {
        "integer" | "real" => false,
        "pattern" => true,
        f => return parse_err(path, 1, format!("unsupported field `{f}`")),
    };
    if fields[4] != "general" {
        return parse_err(path, 1, format!("unsupported symmetry `{}`", fields[4]));
    }
    let mut size: Option<(usize, usize, usize)> = None;
    let mut trip = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        match size {
            None => {
                if toks.len() != 3 {
                    return parse_err(path, lineno, "expected `rows cols entries`");
                }
                let p: Vec<usize> = match toks.iter().map(|s| s.parse()).collect() {
                    Ok(p) => p,
                    Err(_) => return parse_err(path, lineno, "size line must hold integers"),
                };
                size = Some((p[0], p[1], p[2]));
                trip.reserve(p[2]);
            }
            Some((n, m, _)) => {
                let want = if pattern { 2 } else { 3 };
                if toks.len() != want {
                    return parse_err(path, lineno, format!("expected {want} fields"));
                }
                let (i, j) = match (toks[0].parse::<usize>(), toks[1].parse::<usize>()) {
                    (Ok(i), Ok(j)) if i >= 1 && j >= 1 && i <= n && j <= m => (i - 1, j - 1),
                    _ => return parse_err(path, lineno, "index out of range or not an integer"),
                };
                let v = if pattern {
                    1
                } else {
                    match parse_count(toks[2]) {
                        Some(v) => v,
                        None => return parse_err(path, lineno, format!("`{}` is not a nonnegative integer", toks[2])),
                    }
                };
                trip.push((i, j, v));
            }
        }
    }
    let Some((n, m, nnz)) = size else {
        return parse_err(path, 1, "missing size line");
    };
    if trip.len() != nnz {
        return parse_err(path, 0, format!("header declares {nnz} entries, found {}", trip.len()));
    }
    Ok((n, m, trip))
}

fn read_dense_csv(path: &Path) -> Result<Triplets> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut trip = Vec::new();
    let mut width: Option<usize> = None;
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let lineno = rec.position().map(|p| p.line() as usize).unwrap_or(n + 1);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return parse_err(path, lineno, format!("expected {w} fields, found {}", rec.len()))
            }
            _ => {}
        }
        for (j, tok) in rec.iter().enumerate() {
            match parse_count(tok) {
                Some(0) => {}
                Some(v) => trip.push((n, j, v)),
                None => return parse_err(path, lineno, format!("`{tok}` is not a nonnegative integer")),
            }
        }
        n += 1;
    }
    match width {
        None => parse_err(path, 1, "empty file"),
        Some(m) => Ok((n, m, trip)),
    }
}

/// Reads one label per row. The last field of each record is the label; a
/// leading header named `label` or `cell_type` is skipped.
pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if let Some(l) = rec.iter().next_back() {
            if !l.is_empty() {
                out.push(l.to_string());
            }
        }
    }
    if matches!(
        out.first().map(|s| s.to_ascii_lowercase()).as_deref(),
        Some("label" | "cell_type" | "celltype")
    ) {
        out.remove(0);
    }
    if out.is_empty() {
        return parse_err(path, 1, "no labels");
    }
    Ok(out)
}

/// `y_i = ỹ_i / c_i` as a dense matrix, and the predicted noise `1/c_i`.
pub fn normalize_counts(counts: &CountMatrix) -> (Array2<f64>, Vec<f64>) {
    let n = counts.n_rows();
    let mut y = Array2::<f64>::zeros((n, counts.n_cols()));
    for i in 0..n {
        let c = counts.totals[i] as f64;
        let (idx, val) = counts.row(i);
        for (j, v) in idx.iter().zip(val) {
            y[[i, *j]] = *v as f64 / c;
        }
    }
    let pred = counts.totals.iter().map(|c| 1.0 / *c as f64).collect();
    (y, pred)
}

/// Latent clustered rate model for synthetic counts.
///
/// Each cluster has two endpoint profiles; a row draws a position `t ~ U(0,1)`
/// on the segment between them, so the clean data lie on one curve per
/// cluster. Cluster `c` draws its per-row depth uniformly in `depth_ranges[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentClusters {
    pub depth_ranges: Vec<(f64, f64)>,
    /// Log-scale spread between cluster centers.
    pub separation: f64,
    /// Log-scale spread between the two endpoints within a cluster.
    pub within_spread: f64,
    /// Gamma shape of the shared baseline profile.
    pub baseline_shape: f64,
}

impl LatentClusters {
    /// Two clusters whose depths differ five-fold.
    pub fn two_clusters() -> Self {
        Self {
            depth_ranges: vec![(1000.0, 2000.0), (5000.0, 10000.0)],
            separation: 1.0,
            within_spread: 0.5,
            baseline_shape: 1.0,
        }
    }

    /// `k` clusters with depth ranges geometrically spread over a factor 10.
    pub fn heteroskedastic(k: usize, c_min: f64) -> Self {
        let depth_ranges = (0..k)
            .map(|c| {
                let lo = c_min * 10f64.powf(c as f64 / (k.max(2) - 1) as f64);
                (lo, 2.0 * lo)
            })
            .collect();
        Self {
            depth_ranges,
            separation: 1.0,
            within_spread: 0.5,
            baseline_shape: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.depth_ranges.is_empty() {
            return param("at least one cluster is required");
        }
        for &(a, b) in &self.depth_ranges {
            if !(a > 0.0) || !(b >= a) || !b.is_finite() {
                return param(format!("invalid depth range ({a}, {b})"));
            }
        }
        if !(self.separation >= 0.0) || !(self.within_spread >= 0.0) || !(self.baseline_shape > 0.0) {
            return param("spreads must be nonnegative and the baseline shape positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCounts {
    pub counts: CountMatrix,
    /// Poisson means `μ_ij`.
    pub rates: Array2<f64>,
    pub cluster: Vec<usize>,
    /// Latent position along the cluster segment.
    pub position: Vec<f64>,
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Samples `ỹ_ij ~ Poisson(λ_i p_ij)` with rows assigned to clusters round-robin.
///
/// Rows whose draw has zero total are resampled.
pub fn synth_poisson_counts(n: usize, m: usize, model: &LatentClusters, seed: u64) -> Result<SyntheticCounts> {
    model.validate()?;
    if n == 0 || m == 0 {
        return param("n and m must be positive");
    }
    let k = model.depth_ranges.len();
    let mut rng = stream(seed, Stream::Counts);
    let gamma = Gamma::new(model.baseline_shape, 1.0).map_err(|e| Error::Parameter(e.to_string()))?;
    let base: Vec<f64> = (0..m).map(|_| gamma.sample(&mut rng) + 1e-12).collect();
    let endpoints: Vec<[Vec<f64>; 2]> = (0..k)
        .map(|_| {
            let center: Vec<f64> = (0..m)
                .map(|_| model.separation * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut pair = || {
                normalized(
                    (0..m)
                        .map(|j| {
                            let z: f64 = rng.sample(StandardNormal);
                            base[j] * (center[j] + model.within_spread * z).exp()
                        })
                        .collect(),
                )
            };
            [pair(), pair()]
        })
        .collect();

    let mut rates = Array2::<f64>::zeros((n, m));
    let mut trip = Vec::new();
    let mut cluster = Vec::with_capacity(n);
    let mut position = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        let (lo, hi) = model.depth_ranges[c];
        let t: f64 = rng.random();
        loop {
            let depth = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let mut row = Vec::new();
            for j in 0..m {
                let mu = depth * ((1.0 - t) * endpoints[c][0][j] + t * endpoints[c][1][j]);
                rates[[i, j]] = mu;
                let v = Poisson::new(mu)
                    .map_err(|e| Error::Parameter(e.to_string()))?
                    .sample(&mut rng) as u64;
                if v > 0 {
                    row.push((i, j, v));
                }
            }
            if !row.is_empty() {
                trip.extend(row);
                break;
            }
        }
        cluster.push(c);
        position.push(t);
    }
    let labels = cluster.iter().map(|c| format!("cluster{c}")).collect();
    let counts = CountMatrix::from_triplets(n, m, &trip)?.with_labels(labels)?;
    Ok(SyntheticCounts {
        counts,
        rates,
        cluster,
        position,
    })
}

/// Draws up to `per_class` rows from every label, returned in ascending order.
pub fn subsample_per_class(labels: &[String], per_class: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, Stream::Subsample);
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.as_str()).or_default().push(i);
    }
    let mut out = Vec::new();
    for (_, mut idx) in by_class {
        idx.shuffle(&mut rng);
        idx.truncate(per_class);
        out.extend(idx);
    }
    out.sort_unstable();
    out
}
