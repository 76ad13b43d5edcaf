//! Datasets, block partitioning and the circular `(S+1)`-replicated placement.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{AtgError, Result};
use crate::problem::{DataSample, ParameterVector};
use crate::rng::{Purpose, StreamFactory};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<DataSample>,
    dim: usize,
    x_star: Option<ParameterVector>,
}

impl Dataset {
    pub fn new(samples: Vec<DataSample>, x_star: Option<ParameterVector>) -> Result<Self> {
        let dim = samples
            .first()
            .map(DataSample::dim)
            .ok_or_else(|| AtgError::invalid("dataset must contain at least one sample"))?;
        if let Some(bad) = samples.iter().find(|s| s.dim() != dim) {
            return Err(AtgError::DimensionMismatch {
                expected: dim,
                actual: bad.dim(),
            });
        }
        if let Some(x) = &x_star {
            if x.len() != dim {
                return Err(AtgError::DimensionMismatch {
                    expected: dim,
                    actual: x.len(),
                });
            }
        }
        Ok(Self {
            samples,
            dim,
            x_star,
        })
    }

    pub fn samples(&self) -> &[DataSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x_star(&self) -> Option<&ParameterVector> {
        self.x_star.as_ref()
    }

    /// Known optimum if present, otherwise the least-squares solution.
    pub fn reference_optimum(&self) -> Result<ParameterVector> {
        match &self.x_star {
            Some(x) => Ok(x.clone()),
            None => least_squares(&self.samples),
        }
    }

    /// Splits `[0, m)` into `n` contiguous blocks of `m / n` rows; the last
    /// block absorbs the remainder.
    pub fn blocks(&self, n: usize) -> Result<Vec<DataBlock>> {
        if n == 0 {
            return Err(AtgError::invalid("block count must be positive"));
        }
        let m = self.len();
        if m < n {
            return Err(AtgError::TooFewSamples {
                samples: m,
                blocks: n,
            });
        }
        let size = m / n;
        Ok((0..n)
            .map(|i| DataBlock {
                index: i,
                range: i * size..if i + 1 == n { m } else { (i + 1) * size },
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataBlock {
    pub index: usize,
    pub range: Range<usize>,
}

/// `y = A x* + z` with `A`, `x*` i.i.d. N(0,1) and `z` i.i.d. N(0, noise_std²).
pub fn generate_synthetic(m: usize, d: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if m == 0 || d == 0 {
        return Err(AtgError::invalid("synthetic data needs m >= 1 and d >= 1"));
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(AtgError::invalid(format!(
            "noise_std must be >= 0, got {noise_std}"
        )));
    }
    let streams = StreamFactory::new(seed);
    let mut rng = streams.stream(Purpose::Dataset, 0, 0);
    let x_star: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let noise = Normal::new(0.0, noise_std).expect("validated std");
    let samples = (0..m)
        .map(|_| {
            let b: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let clean: f64 = b.iter().zip(&x_star).map(|(a, x)| a * x).sum();
            let z = if noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            DataSample {
                features: b,
                label: clean + z,
            }
        })
        .collect();
    Dataset::new(samples, Some(ParameterVector::new(x_star)?))
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub label_column: usize,
    pub has_header: bool,
    /// Scale each feature column to zero mean and unit variance.
    pub standardize: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            label_column: 0,
            has_header: false,
            standardize: true,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let csv_err = |line: u64, column: usize, message: String| AtgError::Csv {
        path: path.to_path_buf(),
        line,
        column,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(0, 0, e.to_string()))?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, 0, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(csv_err(
                    line,
                    record.len().min(w) + 1,
                    format!("row {line} has {} fields, expected {w}", record.len()),
                ));
            }
            _ => {}
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| csv_err(line, j + 1, format!("not a finite number: {cell:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let width = width.ok_or_else(|| csv_err(0, 0, "no data rows".into()))?;
    if opts.label_column >= width {
        return Err(csv_err(
            0,
            opts.label_column + 1,
            format!(
                "label column {} out of range for {width} columns",
                opts.label_column
            ),
        ));
    }
    if width < 2 {
        return Err(csv_err(
            0,
            0,
            "need at least one feature column besides the label".into(),
        ));
    }

    let mut samples: Vec<DataSample> = rows
        .into_iter()
        .map(|mut row| {
            let label = row.remove(opts.label_column);
            DataSample {
                features: row,
                label,
            }
        })
        .collect();
    if opts.standardize {
        standardize(&mut samples);
    }
    Dataset::new(samples, None)
}

/// Zero-mean, unit-variance feature columns. Constant columns are only centred.
fn standardize(samples: &mut [DataSample]) {
    let m = samples.len() as f64;
    let d = samples[0].dim();
    for j in 0..d {
        let mean = samples.iter().map(|s| s.features[j]).sum::<f64>() / m;
        let var = samples
            .iter()
            .map(|s| (s.features[j] - mean).powi(2))
            .sum::<f64>()
            / m;
        let sd = var.sqrt();
        for s in samples.iter_mut() {
            s.features[j] -= mean;
            if sd > 0.0 {
                s.features[j] /= sd;
            }
        }
    }
}

const CACHE_MAGIC: &[u8; 4] = b"ATG1";

/// Flat cache: `"ATG1"`, u64 m, u64 d, then per row d features and the label,
/// all little-endian.
pub fn write_cache(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&(dataset.len() as u64).to_le_bytes())?;
    w.write_all(&(dataset.dim() as u64).to_le_bytes())?;
    for s in dataset.samples() {
        for v in &s.features {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&s.label.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..4] != CACHE_MAGIC {
        return Err(AtgError::Cache("missing ATG1 header".into()));
    }
    let m = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let d = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let expected = m
        .checked_mul(d + 1)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| AtgError::Cache("header sizes overflow".into()))?;
    if bytes.len() - 20 != expected {
        return Err(AtgError::Cache(format!(
            "body is {} bytes, header promises {expected}",
            bytes.len() - 20
        )));
    }
    let mut vals = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let samples = (0..m)
        .map(|_| {
            let features: Vec<f64> = vals.by_ref().take(d).collect();
            let label = vals.next().expect("length checked");
            DataSample::new(features, label)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, None)
}

/// Exact minimizer of `Σ (b_kᵀx − y_k)²` via SVD.
pub fn least_squares(samples: &[DataSample]) -> Result<ParameterVector> {
    let m = samples.len();
    let d = samples.first().map(DataSample::dim).unwrap_or(0);
    if m == 0 || d == 0 {
        return Err(AtgError::invalid("least squares needs a nonempty dataset"));
    }
    let a = DMatrix::from_fn(m, d, |i, j| samples[i].features[j]);
    let y = DVector::from_iterator(m, samples.iter().map(|s| s.label));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if m < d || smin <= smax * 1e-12 {
        return Err(AtgError::SingularSystem);
    }
    let x = svd
        .solve(&y, smax * 1e-12)
        .map_err(|_| AtgError::SingularSystem)?;
    ParameterVector::new(x.iter().copied().collect())
}

/// `N×N` placement: entry `(v, i)` is true iff block `i` is stored at worker `v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentTable {
    n_workers: usize,
    redundancy: usize,
    placement: Vec<bool>,
}

impl AssignmentTable {
    pub fn n_workers(&self) -> usize {
        self.n_workers
    }

    pub fn redundancy(&self) -> usize {
        self.redundancy
    }

    pub fn holds(&self, worker: usize, block: usize) -> bool {
        self.placement[worker * self.n_workers + block]
    }

    /// Blocks of `worker` in circular-window order `v, v+1, …, v+S (mod N)`.
    pub fn blocks_of(&self, worker: usize) -> Vec<usize> {
        (0..=self.redundancy)
            .map(|k| (worker + k) % self.n_workers)
            .collect()
    }
}

pub fn build_assignment(n_workers: usize, redundancy: usize) -> Result<AssignmentTable> {
    if n_workers == 0 {
        return Err(AtgError::invalid("need at least one worker"));
    }
    if redundancy >= n_workers {
        return Err(AtgError::InvalidRedundancy {
            workers: n_workers,
            redundancy,
        });
    }
    let mut placement = vec![false; n_workers * n_workers];
    for v in 0..n_workers {
        for k in 0..=redundancy {
            placement[v * n_workers + (v + k) % n_workers] = true;
        }
    }
    Ok(AssignmentTable {
        n_workers,
        redundancy,
        placement,
    })
}

/// Samples stored at worker `v`: its blocks concatenated in window order.
pub fn worker_shard<'a>(
    dataset: &'a Dataset,
    table: &AssignmentTable,
    v: usize,
) -> Result<Vec<&'a DataSample>> {
    if v >= table.n_workers() {
        return Err(AtgError::InvalidWorker {
            index: v,
            workers: table.n_workers(),
        });
    }
    let blocks = dataset.blocks(table.n_workers())?;
    Ok(table
        .blocks_of(v)
        .into_iter()
        .flat_map(|b| &dataset.samples()[blocks[b].range.clone()])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(m: usize) -> Dataset {
        let samples = (0..m)
            .map(|i| DataSample::new(vec![i as f64, 1.0], i as f64).unwrap())
            .collect();
        Dataset::new(samples, None).unwrap()
    }

    #[test]
    fn synthetic_noiseless_is_consistent() {
        let ds = generate_synthetic(50, 4, 0.0, 9).unwrap();
        let xs = ds.x_star().unwrap();
        for s in ds.samples() {
            let p: f64 = s.features.iter().zip(xs.iter()).map(|(a, b)| a * b).sum();
            assert!((p - s.label).abs() <= 1e-12);
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(100, 5, 0.1, 3).unwrap();
        let b = generate_synthetic(100, 5, 0.1, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(100, 5, 0.1, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn least_squares_recovers_planted_solution() {
        let ds = generate_synthetic(1000, 10, 1e-3f64.sqrt(), 11).unwrap();
        let x_ls = least_squares(ds.samples()).unwrap();
        let err =
            crate::problem::normalized_error(ds.samples(), &x_ls, ds.x_star().unwrap()).unwrap();
        assert!(err < 0.05, "err = {err}");
    }

    #[test]
    fn least_squares_rejects_singular() {
        let samples = vec![DataSample::new(vec![1.0, 2.0], 1.0).unwrap(); 5];
        assert!(matches!(
            least_squares(&samples),
            Err(AtgError::SingularSystem)
        ));
    }

    #[test]
    fn blocks_absorb_remainder() {
        let blocks = tiny(10).blocks(3).unwrap();
        assert_eq!(blocks[0].range, 0..3);
        assert_eq!(blocks[1].range, 3..6);
        assert_eq!(blocks[2].range, 6..10);
        assert!(matches!(
            tiny(2).blocks(3),
            Err(AtgError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn assignment_examples() {
        let t = build_assignment(3, 0).unwrap();
        for v in 0..3 {
            for i in 0..3 {
                assert_eq!(t.holds(v, i), v == i);
            }
        }
        let t = build_assignment(4, 1).unwrap();
        assert_eq!(t.blocks_of(0), vec![0, 1]);
        assert_eq!(t.blocks_of(1), vec![1, 2]);
        assert_eq!(t.blocks_of(2), vec![2, 3]);
        assert_eq!(t.blocks_of(3), vec![3, 0]);
        let t = build_assignment(5, 4).unwrap();
        assert!((0..5).all(|v| (0..5).all(|i| t.holds(v, i))));
        assert!(matches!(
            build_assignment(4, 4),
            Err(AtgError::InvalidRedundancy { .. })
        ));
    }

    #[test]
    fn shard_examples() {
        let ds = tiny(10);
        let t = build_assignment(2, 0).unwrap();
        let shard = worker_shard(&ds, &t, 0).unwrap();
        assert_eq!(
            shard.iter().map(|s| s.label as usize).collect::<Vec<_>>(),
            vec![0, 1, 2, 3, 4]
        );

        let ds = tiny(8);
        let t = build_assignment(4, 1).unwrap();
        let shard = worker_shard(&ds, &t, 3).unwrap();
        // 1-based samples {7, 8, 1, 2}
        assert_eq!(
            shard.iter().map(|s| s.label as usize).collect::<Vec<_>>(),
            vec![6, 7, 0, 1]
        );
        assert!(matches!(
            worker_shard(&ds, &t, 4),
            Err(AtgError::InvalidWorker { .. })
        ));
    }

    #[test]
    fn shards_partition_without_redundancy() {
        let ds = tiny(23);
        let t = build_assignment(5, 0).unwrap();
        let mut labels: Vec<usize> = (0..5)
            .flat_map(|v| worker_shard(&ds, &t, v).unwrap())
            .map(|s| s.label as usize)
            .collect();
        labels.sort_unstable();
        assert_eq!(labels, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn csv_shape_and_header() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1,2\n2,4\n3,6").unwrap();
        let opts = CsvOptions {
            label_column: 0,
            has_header: false,
            standardize: false,
        };
        let ds = load_csv(f.path(), &opts).unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 1));
        assert_eq!(ds.samples()[1].label, 2.0);
        assert_eq!(ds.samples()[1].features, vec![4.0]);
        assert!(ds.x_star().is_none());

        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "year,a,b\n1,2,3\n2,4,5\n3,6,9").unwrap();
        let ds = load_csv(
            f.path(),
            &CsvOptions {
                has_header: true,
                ..opts.clone()
            },
        )
        .unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 2));
    }

    #[test]
    fn csv_standardizes_columns() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "0,1,5\n1,2,5\n2,3,5\n3,6,5").unwrap();
        let ds = load_csv(f.path(), &CsvOptions::default()).unwrap();
        let col: Vec<f64> = ds.samples().iter().map(|s| s.features[0]).collect();
        let mean = col.iter().sum::<f64>() / 4.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert!(ds.samples().iter().all(|s| s.features[1] == 0.0));
    }

    #[test]
    fn csv_errors_name_location() {
        let opts = CsvOptions::default();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1,2,3\n4,5\n6,7,8").unwrap();
        let err = load_csv(f.path(), &opts).unwrap_err();
        assert!(matches!(err, AtgError::Csv { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("row 2"));

        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1,2\n3,abc").unwrap();
        let err = load_csv(f.path(), &opts).unwrap_err();
        assert!(
            matches!(
                err,
                AtgError::Csv {
                    line: 2,
                    column: 2,
                    ..
                }
            ),
            "{err}"
        );

        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(matches!(
            load_csv(f.path(), &opts),
            Err(AtgError::Csv { .. })
        ));
    }

    #[test]
    fn cache_roundtrip_and_layout() {
        let ds = generate_synthetic(7, 3, 0.5, 1).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_cache(&ds, f.path()).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        assert_eq!(&bytes[..4], b"ATG1");
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), 7);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 20 + 7 * 4 * 8);
        let back = read_cache(f.path()).unwrap();
        assert_eq!(back.samples(), ds.samples());

        std::fs::write(f.path(), &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_cache(f.path()), Err(AtgError::Cache(_))));
    }
}
