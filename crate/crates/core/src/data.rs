//! Synthetic compressed-sensing problems: Gaussian sensing matrices with
//! unit-norm columns, Bernoulli-support sparse signals, noiseless
//! measurements, and disjoint client partitions of a training set.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::textio::{self, Lines};

const COLUMN_NORM_TOL: f64 = 1e-9;

/// Measurement operator with unit-norm columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    entries: Array2<f64>,
}

impl SensingMatrix {
    /// Wraps a matrix that already has unit-norm, finite columns.
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (m, n) = entries.dim();
        if m == 0 || n == 0 {
            return Err(Error::InvalidDimensions(format!("{m}x{n} sensing matrix")));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("entries", "non-finite value"));
        }
        for (j, col) in entries.columns().into_iter().enumerate() {
            let norm = col.dot(&col).sqrt();
            if (norm - 1.0).abs() > COLUMN_NORM_TOL {
                return Err(Error::param(
                    "entries",
                    format!("column {j} has norm {norm}, expected 1"),
                ));
            }
        }
        Ok(SensingMatrix { entries })
    }

    /// Rescales every column to unit Euclidean norm. Used for externally
    /// prepared operators such as a projected dictionary.
    pub fn from_unnormalized(mut entries: Array2<f64>) -> Result<Self> {
        normalize_columns(&mut entries)?;
        SensingMatrix::new(entries)
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.entries
    }
}

fn normalize_columns(entries: &mut Array2<f64>) -> Result<()> {
    for (j, mut col) in entries.columns_mut().into_iter().enumerate() {
        let norm = col.dot(&col).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::param("entries", format!("column {j} cannot be normalized")));
        }
        col.mapv_inplace(|v| v / norm);
    }
    Ok(())
}

/// Raw i.i.d. N(0, 1/M) draw, row-major, before column normalization.
pub fn gaussian_entries(m: usize, n: usize, seed: u64) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0 / (m as f64).sqrt()).expect("positive std");
    let mut rng = stream_rng(seed, 0);
    Array2::from_shape_simple_fn((m, n), || normal.sample(&mut rng))
}

pub fn generate_sensing_matrix(m: usize, n: usize, seed: u64) -> Result<SensingMatrix> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidDimensions(format!("M={m}, N={n} must be positive")));
    }
    if m >= n {
        return Err(Error::InvalidDimensions(format!(
            "M={m} must be smaller than N={n}"
        )));
    }
    SensingMatrix::from_unnormalized(gaussian_entries(m, n, seed))
}

/// Distribution of the non-zero entries of a sparse signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MagnitudeDist {
    Gaussian { std: f64 },
    Uniform { low: f64, high: f64 },
}

impl Default for MagnitudeDist {
    fn default() -> Self {
        MagnitudeDist::Gaussian { std: 1.0 }
    }
}

impl MagnitudeDist {
    fn validate(&self) -> Result<()> {
        match *self {
            MagnitudeDist::Gaussian { std } if !(std > 0.0 && std.is_finite()) => {
                Err(Error::param("magnitude.std", format!("{std} is not positive")))
            }
            MagnitudeDist::Uniform { low, high } if !(low < high) => {
                Err(Error::param("magnitude", format!("empty range [{low}, {high})")))
            }
            _ => Ok(()),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            MagnitudeDist::Gaussian { std } => Normal::new(0.0, std).unwrap().sample(rng),
            MagnitudeDist::Uniform { low, high } => Uniform::new(low, high).unwrap().sample(rng),
        }
    }
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::param("p", format!("{p} is not in (0, 1)")))
    }
}

/// Draws a sparse vector from an existing stream. For each coordinate one
/// uniform `f64` decides membership (`u < p`); members then draw a magnitude.
pub fn sparse_vector_from<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    p: f64,
    dist: &MagnitudeDist,
) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| {
        if rng.random::<f64>() < p {
            dist.sample(rng)
        } else {
            0.0
        }
    })
}

pub fn generate_sparse_vector(
    n: usize,
    p: f64,
    dist: &MagnitudeDist,
    seed: u64,
) -> Result<Array1<f64>> {
    if n == 0 {
        return Err(Error::InvalidDimensions("N must be positive".into()));
    }
    check_probability(p)?;
    dist.validate()?;
    Ok(sparse_vector_from(&mut stream_rng(seed, 0), n, p, dist))
}

pub fn measure(a: &SensingMatrix, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if x.len() != a.cols() {
        return Err(Error::mismatch(
            format!("signal of length {}", a.cols()),
            format!("length {}", x.len()),
        ));
    }
    Ok(a.entries().dot(&x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Array1<f64>,
    pub y: Array1<f64>,
}

/// Ordered collection of samples sharing one `(M, N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    m: usize,
    n: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("dataset"))?;
        let (m, n) = (first.y.len(), first.x.len());
        for (i, s) in samples.iter().enumerate() {
            if s.y.len() != m || s.x.len() != n {
                return Err(Error::mismatch(
                    format!("sample with (M, N) = ({m}, {n})"),
                    format!("sample {i} with ({}, {})", s.y.len(), s.x.len()),
                ));
            }
        }
        Ok(Dataset { samples, m, n })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn measurement_dim(&self) -> usize {
        self.m
    }

    pub fn signal_dim(&self) -> usize {
        self.n
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples.get(i).cloned().ok_or_else(|| {
                    Error::param("indices", format!("{i} out of range for {} samples", self.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples)
    }

    /// Signals stacked as columns, N x S.
    pub fn signals(&self) -> Array2<f64> {
        stack_columns(self.samples.iter().map(|s| s.x.view()), self.n)
    }

    /// Measurements stacked as columns, M x S.
    pub fn measurements(&self) -> Array2<f64> {
        stack_columns(self.samples.iter().map(|s| s.y.view()), self.m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("{} {} {}\n", self.len(), self.m, self.n);
        for s in &self.samples {
            out.push_str("x\n");
            textio::push_row(&mut out, s.x.view());
            out.push_str("y\n");
            textio::push_row(&mut out, s.y.view());
        }
        textio::write_file(path, out)
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Dataset::parse(&textio::read_file(path)?)
    }

    pub fn parse(text: &str) -> Result<Dataset> {
        let mut lines = Lines::new(text);
        let header = lines.usizes(3)?;
        let (count, m, n) = (header[0], header[1], header[2]);
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            lines.keyword("x")?;
            let x = Array1::from(lines.floats(n)?);
            lines.keyword("y")?;
            let y = Array1::from(lines.floats(m)?);
            samples.push(Sample { x, y });
        }
        lines.expect_end()?;
        Dataset::new(samples)
    }
}

fn stack_columns<'a>(cols: impl Iterator<Item = ArrayView1<'a, f64>>, rows: usize) -> Array2<f64> {
    let cols: Vec<_> = cols.collect();
    let mut out = Array2::zeros((rows, cols.len()));
    for (mut dst, src) in out.axis_iter_mut(Axis(1)).zip(cols) {
        dst.assign(&src);
    }
    out
}

/// `s_total` samples; sample `s` is drawn from stream `s` of `seed`, so a
/// smaller dataset with the same seed is always a prefix of a larger one.
pub fn build_dataset(
    a: &SensingMatrix,
    s_total: usize,
    p: f64,
    dist: &MagnitudeDist,
    seed: u64,
) -> Result<Dataset> {
    if s_total == 0 {
        return Err(Error::Empty("dataset"));
    }
    check_probability(p)?;
    dist.validate()?;
    let samples = (0..s_total)
        .map(|s| {
            let x = sparse_vector_from(&mut stream_rng(seed, s as u64), a.cols(), p, dist);
            let y = a.entries().dot(&x);
            Sample { x, y }
        })
        .collect();
    Dataset::new(samples)
}

/// Disjoint, non-empty index sets covering `0..total`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    client_indices: Vec<Vec<usize>>,
    total: usize,
}

impl Partition {
    pub fn new(client_indices: Vec<Vec<usize>>, total: usize) -> Result<Self> {
        if client_indices.is_empty() {
            return Err(Error::Empty("partition"));
        }
        let mut seen = vec![false; total];
        for (k, set) in client_indices.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::param("partition", format!("client {k} has no samples")));
            }
            for &i in set {
                match seen.get_mut(i) {
                    Some(slot) if !*slot => *slot = true,
                    Some(_) => {
                        return Err(Error::param("partition", format!("index {i} assigned twice")))
                    }
                    None => {
                        return Err(Error::param("partition", format!("index {i} out of range")))
                    }
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::param("partition", format!("index {i} unassigned")));
        }
        Ok(Partition {
            client_indices,
            total,
        })
    }

    pub fn clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn indices(&self, client: usize) -> &[usize] {
        &self.client_indices[client]
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.client_indices.iter().map(Vec::len).collect()
    }

    /// Aggregation weights `|S_k| / |S|`.
    pub fn weights(&self) -> Vec<f64> {
        let total = self.total as f64;
        self.client_indices
            .iter()
            .map(|s| s.len() as f64 / total)
            .collect()
    }
}

/// Contiguous split. Without explicit sizes every client gets
/// `total / k` samples and the first `total % k` clients one more.
pub fn partition_dataset(
    dataset: &Dataset,
    k: usize,
    sizes: Option<&[usize]>,
) -> Result<Partition> {
    let total = dataset.len();
    if k == 0 {
        return Err(Error::param("K", "need at least one client"));
    }
    if k > total {
        return Err(Error::TooManyClients {
            samples: total,
            clients: k,
        });
    }
    let sizes: Vec<usize> = match sizes {
        Some(sizes) => {
            if sizes.len() != k {
                return Err(Error::param("sizes", format!("{} sizes for {k} clients", sizes.len())));
            }
            if sizes.contains(&0) {
                return Err(Error::param("sizes", "every client needs a sample"));
            }
            if sizes.iter().sum::<usize>() != total {
                return Err(Error::param("sizes", format!("sizes do not sum to {total}")));
            }
            sizes.to_vec()
        }
        None => (0..k)
            .map(|i| total / k + usize::from(i < total % k))
            .collect(),
    };
    let mut start = 0;
    let sets = sizes
        .iter()
        .map(|&len| {
            let set: Vec<usize> = (start..start + len).collect();
            start += len;
            set
        })
        .collect();
    Partition::new(sets, total)
}

/// Reads `M N` followed by `M` rows of `N` values. No normalization.
pub fn load_matrix_file(path: &Path) -> Result<Array2<f64>> {
    parse_matrix(&textio::read_file(path)?)
}

pub fn parse_matrix(text: &str) -> Result<Array2<f64>> {
    let mut lines = Lines::new(text);
    let dims = lines.usizes(2)?;
    let m = lines.matrix(dims[0], dims[1])?;
    lines.expect_end()?;
    Ok(m)
}

pub fn format_matrix(m: &Array2<f64>) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    textio::push_matrix(&mut out, m.view());
    out
}

pub fn save_matrix_file(path: &Path, m: &Array2<f64>) -> Result<()> {
    textio::write_file(path, format_matrix(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn column_norms(a: &Array2<f64>) -> Vec<f64> {
        a.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect()
    }

    #[test]
    fn paper_scale_matrix_has_unit_columns() {
        let a = generate_sensing_matrix(250, 500, 11).unwrap();
        assert_eq!((a.rows(), a.cols()), (250, 500));
        for norm in column_norms(a.entries()) {
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn one_by_two_columns_are_signs() {
        let a = generate_sensing_matrix(1, 2, 5).unwrap();
        for v in a.entries() {
            assert_eq!(v.abs(), 1.0);
        }
    }

    #[test]
    fn small_matrix_norms_and_raw_variance() {
        let a = generate_sensing_matrix(4, 8, 7).unwrap();
        for norm in column_norms(a.entries()) {
            assert!((norm - 1.0).abs() < 1e-12);
        }
        let raw = gaussian_entries(4, 8, 7);
        let mean = raw.mean().unwrap();
        let var = raw.mapv(|v| (v - mean).powi(2)).sum() / (raw.len() - 1) as f64;
        // 32 draws: the standard error of the variance is about 0.06.
        assert!((var - 0.25).abs() < 0.15, "variance {var}");

        let wide = gaussian_entries(4, 4000, 7);
        let var = wide.mapv(|v| v * v).mean().unwrap();
        assert!((var - 0.25).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn rejects_non_compressive_dims() {
        assert!(generate_sensing_matrix(4, 4, 0).is_err());
        assert!(generate_sensing_matrix(5, 4, 0).is_err());
        assert!(generate_sensing_matrix(0, 4, 0).is_err());
    }

    #[test]
    fn matrix_generation_is_deterministic() {
        assert_eq!(
            generate_sensing_matrix(6, 9, 3).unwrap(),
            generate_sensing_matrix(6, 9, 3).unwrap()
        );
        assert_ne!(
            generate_sensing_matrix(6, 9, 3).unwrap(),
            generate_sensing_matrix(6, 9, 4).unwrap()
        );
    }

    #[test]
    fn sparse_vector_rejects_bad_probability() {
        let d = MagnitudeDist::default();
        assert!(generate_sparse_vector(10, 0.0, &d, 1).is_err());
        assert!(generate_sparse_vector(10, 1.0, &d, 1).is_err());
        assert!(generate_sparse_vector(10, -0.5, &d, 1).is_err());
    }

    #[test]
    fn mean_support_matches_bernoulli_rate() {
        let d = MagnitudeDist::default();
        let total: usize = (0..1000)
            .map(|s| {
                let x = generate_sparse_vector(500, 0.1, &d, s).unwrap();
                x.iter().filter(|v| **v != 0.0).count()
            })
            .sum();
        let mean = total as f64 / 1000.0;
        assert!((45.0..=55.0).contains(&mean), "mean support {mean}");
    }

    #[test]
    fn tiny_probability_gives_zero_vector() {
        let x = generate_sparse_vector(5, 1e-9, &MagnitudeDist::default(), 42).unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn support_matches_replayed_stream() {
        let x = generate_sparse_vector(100, 0.5, &MagnitudeDist::default(), 3).unwrap();
        // Replay: one uniform per coordinate, one normal draw per member.
        let mut rng = stream_rng(3, 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut expected = 0;
        for i in 0..100 {
            if rng.random::<f64>() < 0.5 {
                expected += 1;
                assert_eq!(x[i], normal.sample(&mut rng));
            } else {
                assert_eq!(x[i], 0.0);
            }
        }
        assert_eq!(x.iter().filter(|v| **v != 0.0).count(), expected);
    }

    #[test]
    fn uniform_magnitudes_stay_in_range() {
        let d = MagnitudeDist::Uniform { low: 1.0, high: 2.0 };
        let x = generate_sparse_vector(1000, 0.3, &d, 9).unwrap();
        assert!(x.iter().all(|v| *v == 0.0 || (1.0..2.0).contains(v)));
        assert!(generate_sparse_vector(10, 0.3, &MagnitudeDist::Uniform { low: 1.0, high: 1.0 }, 0).is_err());
    }

    #[test]
    fn measure_identity_and_zero() {
        let a = SensingMatrix::new(Array2::eye(4)).unwrap();
        let x = array![1.0, -2.0, 0.0, 3.5];
        assert_eq!(measure(&a, x.view()).unwrap(), x);
        let z = Array1::zeros(4);
        assert_eq!(measure(&a, z.view()).unwrap(), z);
    }

    #[test]
    fn measure_single_spike_extracts_column() {
        let a = generate_sensing_matrix(3, 5, 21).unwrap();
        let mut x = Array1::zeros(5);
        x[2] = 2.5;
        let y = measure(&a, x.view()).unwrap();
        let expected = a.entries().column(2).mapv(|v| 2.5 * v);
        assert_eq!(y, expected);
        assert!(measure(&a, Array1::zeros(4).view()).is_err());
    }

    #[test]
    fn dataset_is_noiseless_and_prefix_stable() {
        let a = generate_sensing_matrix(10, 20, 1).unwrap();
        let d = MagnitudeDist::default();
        let big = build_dataset(&a, 30, 0.2, &d, 4).unwrap();
        let small = build_dataset(&a, 10, 0.2, &d, 4).unwrap();
        assert_eq!(&big.samples()[..10], small.samples());
        for s in big.samples() {
            let r = &s.y - &a.entries().dot(&s.x);
            assert!(r.dot(&r).sqrt() <= 1e-12 * s.y.dot(&s.y).sqrt().max(f64::MIN_POSITIVE));
        }
        assert!(build_dataset(&a, 0, 0.2, &d, 4).is_err());
    }

    #[test]
    fn partition_rules() {
        let a = generate_sensing_matrix(2, 4, 1).unwrap();
        let d = MagnitudeDist::default();
        let ds = build_dataset(&a, 10, 0.5, &d, 0).unwrap();
        assert_eq!(partition_dataset(&ds, 10, None).unwrap().sizes(), vec![1; 10]);
        let p = partition_dataset(&ds, 3, None).unwrap();
        assert_eq!(p.sizes(), vec![4, 3, 3]);
        assert_eq!(p.indices(1), &[4, 5, 6]);
        assert!(partition_dataset(&ds, 11, None).is_err());
        assert!(partition_dataset(&ds, 0, None).is_err());
        assert_eq!(partition_dataset(&ds, 2, Some(&[7, 3])).unwrap().sizes(), vec![7, 3]);
        assert!(partition_dataset(&ds, 2, Some(&[7, 2])).is_err());
        assert!(partition_dataset(&ds, 2, Some(&[10, 0])).is_err());

        let big = build_dataset(&a, 1000, 0.5, &d, 0).unwrap();
        let p = partition_dataset(&big, 10, None).unwrap();
        assert!(p.sizes().iter().all(|&s| s == 100));
        assert!(p.weights().iter().all(|&w| w == 0.1));
    }

    #[test]
    fn partition_validation() {
        assert!(Partition::new(vec![vec![0, 1], vec![1, 2]], 3).is_err());
        assert!(Partition::new(vec![vec![0, 1], vec![]], 2).is_err());
        assert!(Partition::new(vec![vec![0]], 2).is_err());
        assert!(Partition::new(vec![vec![0, 5]], 2).is_err());
        assert!(Partition::new(vec![vec![1], vec![0]], 2).is_ok());
    }

    #[test]
    fn matrix_file_roundtrip_and_errors() {
        let m = array![[1.0, -0.25, 3e-17], [0.1, 2.0, -0.0]];
        let text = format_matrix(&m);
        assert_eq!(text.lines().next(), Some("2 3"));
        let back = parse_matrix(&text).unwrap();
        assert_eq!(back.mapv(f64::to_bits), m.mapv(f64::to_bits));
        assert!(parse_matrix("2 3\n1 2 3\n").is_err());
        assert!(parse_matrix("1 2\n1 2 3\n").is_err());
        assert!(parse_matrix("1 2\n1 x\n").is_err());
        assert!(parse_matrix("1 1\n1\n2\n").is_err());
    }

    #[test]
    fn loaded_matrix_is_not_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        let m = array![[3.0, 0.0], [4.0, 2.0]];
        save_matrix_file(&path, &m).unwrap();
        assert_eq!(load_matrix_file(&path).unwrap(), m);
        let a = SensingMatrix::from_unnormalized(m).unwrap();
        assert_eq!(a.entries(), &array![[0.6, 0.0], [0.8, 1.0]]);
        assert!(load_matrix_file(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn dataset_file_roundtrip() {
        let a = generate_sensing_matrix(3, 6, 2).unwrap();
        let ds = build_dataset(&a, 4, 0.4, &MagnitudeDist::default(), 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.txt");
        ds.save(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), ds);
        assert!(Dataset::parse("1 2 3\nx\n0 0 0\ny\n0\n").is_err());
    }
}
