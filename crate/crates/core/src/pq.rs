//! Product quantization: per-subspace k-means codebooks, byte codes and
//! asymmetric distance computation (ADC) by table lookup.
//!
//! All distances are squared Euclidean. For a code `c`, the ADC distance to a
//! query equals the squared distance between the query and the code's
//! reconstruction, so ranking by ADC is exact with respect to the quantized
//! database.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_SUBSPACES: usize = 16;
pub const DEFAULT_CENTROIDS: usize = 256;
pub const DEFAULT_KMEANS_ITERS: usize = 25;

const CODEBOOK_MAGIC: &[u8; 4] = b"PQCB";
const CODEBOOK_VERSION: u32 = 1;
const CONVERGENCE: f64 = 1e-4;

/// `M` subcodebooks of `K` centroids, each `D / M` wide, stored
/// subspace-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    m: usize,
    k: usize,
    dim: usize,
    seed: u64,
    centroids: Vec<f32>,
}

impl PqCodebook {
    pub fn from_centroids(m: usize, k: usize, dim: usize, seed: u64, centroids: Vec<f32>) -> Result<Self> {
        validate_shape(m, k, dim)?;
        if centroids.len() != k * dim {
            return Err(Error::InvalidParameter(format!(
                "expected {} centroid values, got {}",
                k * dim,
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("centroids must be finite".into()));
        }
        Ok(PqCodebook {
            m,
            k,
            dim,
            seed,
            centroids,
        })
    }

    pub fn subspaces(&self) -> usize {
        self.m
    }

    pub fn centroids_per_subspace(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sub_dim(&self) -> usize {
        self.dim / self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Centroid `k` of subspace `m`.
    #[inline]
    pub fn centroid(&self, m: usize, k: usize) -> &[f32] {
        let ds = self.sub_dim();
        let start = (m * self.k + k) * ds;
        &self.centroids[start..start + ds]
    }

    pub fn raw_centroids(&self) -> &[f32] {
        &self.centroids
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got == self.dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            })
        }
    }

    /// Nearest centroid per subspace; ties go to the lowest index.
    pub fn encode(&self, x: &[f32]) -> Result<PqCode> {
        self.check_dim(x.len())?;
        let ds = self.sub_dim();
        let code = x
            .chunks_exact(ds)
            .enumerate()
            .map(|(m, sub)| {
                let mut best = (f32::INFINITY, 0usize);
                for k in 0..self.k {
                    let d = squared_l2(sub, self.centroid(m, k));
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                best.1 as u8
            })
            .collect();
        Ok(PqCode(code))
    }

    /// Concatenation of the indexed subcentroids.
    pub fn decode(&self, code: &[u8]) -> Result<Vec<f32>> {
        if code.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: code.len(),
            });
        }
        let mut out = Vec::with_capacity(self.dim);
        for (m, &i) in code.iter().enumerate() {
            if i as usize >= self.k {
                return Err(Error::IndexOutOfRange {
                    subspace: m,
                    index: i as usize,
                    k: self.k,
                });
            }
            out.extend_from_slice(self.centroid(m, i as usize));
        }
        Ok(out)
    }

    /// Squared distances from each query slice to every subcentroid.
    pub fn adc_table(&self, y: &[f32]) -> Result<AdcTable> {
        self.check_dim(y.len())?;
        let ds = self.sub_dim();
        let mut entries = Vec::with_capacity(self.m * self.k);
        for (m, sub) in y.chunks_exact(ds).enumerate() {
            for k in 0..self.k {
                entries.push(squared_l2(sub, self.centroid(m, k)));
            }
        }
        Ok(AdcTable {
            m: self.m,
            k: self.k,
            entries,
        })
    }

    pub fn serialized_len(&self) -> usize {
        4 + 4 * 4 + 8 + self.centroids.len() * 4
    }

    /// Little-endian: magic, version, M, K, D, seed, then centroids
    /// subspace-major as f32.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(CODEBOOK_MAGIC)?;
        w.write_all(&CODEBOOK_VERSION.to_le_bytes())?;
        for v in [self.m, self.k, self.dim] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.centroids.len() * 4);
        for c in &self.centroids {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        self.write_to(&mut out).expect("writing to a Vec does not fail");
        out
    }

    /// Parses a codebook blob; `base_offset` only shifts error offsets.
    pub fn read_from(mut r: impl Read, base_offset: u64) -> Result<PqCodebook> {
        let mut pos = base_offset;
        let mut take = |n: usize, what: &str| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf).map_err(|_| Error::CorruptIndex {
                offset: pos,
                reason: format!("truncated codebook {what}"),
            })?;
            pos += n as u64;
            Ok(buf)
        };
        let magic = take(4, "magic")?;
        if magic != CODEBOOK_MAGIC {
            return Err(Error::CorruptIndex {
                offset: base_offset,
                reason: "bad codebook magic".into(),
            });
        }
        let u32_at = |b: Vec<u8>| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let version = u32_at(take(4, "version")?);
        if version != CODEBOOK_VERSION {
            return Err(Error::CorruptIndex {
                offset: base_offset + 4,
                reason: format!("unsupported codebook version {version}"),
            });
        }
        let m = u32_at(take(4, "header")?) as usize;
        let k = u32_at(take(4, "header")?) as usize;
        let dim = u32_at(take(4, "header")?) as usize;
        let seed = u64::from_le_bytes(take(8, "seed")?.try_into().expect("8 bytes"));
        validate_shape(m, k, dim).map_err(|e| Error::CorruptIndex {
            offset: base_offset + 8,
            reason: e.to_string(),
        })?;
        let raw = take(k * dim * 4, "centroids")?;
        let centroids: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        PqCodebook::from_centroids(m, k, dim, seed, centroids).map_err(|e| Error::CorruptIndex {
            offset: base_offset + 28,
            reason: e.to_string(),
        })
    }
}

fn validate_shape(m: usize, k: usize, dim: usize) -> Result<()> {
    if m == 0 || dim == 0 || !dim.is_multiple_of(m) {
        return Err(Error::InvalidParameter(format!(
            "D = {dim} must be a positive multiple of M = {m}"
        )));
    }
    if k == 0 || k > 256 {
        return Err(Error::InvalidParameter(format!(
            "K = {k} must lie in 1..=256 for byte codes"
        )));
    }
    Ok(())
}

#[inline]
fn squared_l2(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// `M` centroid indices, one byte each.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PqCode(pub Vec<u8>);

impl PqCode {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// Contiguous array of `M`-byte codes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CodeArray {
    m: usize,
    bytes: Vec<u8>,
}

impl CodeArray {
    pub fn new(m: usize) -> Self {
        CodeArray {
            m,
            bytes: Vec::new(),
        }
    }

    pub fn from_bytes(m: usize, bytes: Vec<u8>) -> Result<Self> {
        if m == 0 || !bytes.len().is_multiple_of(m) {
            return Err(Error::InvalidParameter(format!(
                "{} bytes are not a whole number of {m}-byte codes",
                bytes.len()
            )));
        }
        Ok(CodeArray { m, bytes })
    }

    pub fn push(&mut self, code: &PqCode) {
        assert_eq!(code.0.len(), self.m, "code length differs from M");
        self.bytes.extend_from_slice(&code.0);
    }

    pub fn code_len(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.bytes.len().checked_div(self.m).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn get(&self, i: usize) -> &[u8] {
        &self.bytes[i * self.m..(i + 1) * self.m]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, u8> {
        self.bytes.chunks_exact(self.m.max(1))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

impl FromIterator<PqCode> for CodeArray {
    fn from_iter<T: IntoIterator<Item = PqCode>>(iter: T) -> Self {
        let mut iter = iter.into_iter().peekable();
        let m = iter.peek().map_or(0, |c| c.0.len());
        let mut out = CodeArray::new(m);
        for c in iter {
            out.push(&c);
        }
        out
    }
}

/// Query-to-subcentroid squared distances, `M x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcTable {
    m: usize,
    k: usize,
    entries: Vec<f32>,
}

impl AdcTable {
    #[inline]
    pub fn entry(&self, m: usize, k: usize) -> f32 {
        self.entries[m * self.k + k]
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    pub fn subspaces(&self) -> usize {
        self.m
    }

    /// ADC distance of one code (squared).
    #[inline]
    pub fn distance(&self, code: &[u8]) -> f32 {
        debug_assert_eq!(code.len(), self.m);
        let mut sum = 0.0f32;
        for (m, &c) in code.iter().enumerate() {
            sum += self.entries[m * self.k + c as usize];
        }
        sum
    }
}

/// Heap entry ordered by `(distance, index)` so the worst kept candidate sits
/// on top of a max-heap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f32,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded top-k selection over `(index, distance)` candidates.
#[derive(Debug)]
pub struct TopK {
    k: usize,
    heap: BinaryHeap<Neighbor>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, index: usize, distance: f32) {
        let cand = Neighbor { index, distance };
        if self.heap.len() < self.k {
            self.heap.push(cand);
        } else if let Some(mut top) = self.heap.peek_mut() {
            if cand < *top {
                *top = cand;
            }
        }
    }

    /// Ascending by distance, ties by index.
    pub fn into_sorted(self) -> Vec<Neighbor> {
        self.heap.into_sorted_vec()
    }
}

/// Single pass over `codes` keeping the `k` nearest by ADC distance,
/// returned ascending with ties broken by lower position.
pub fn adc_scan(table: &AdcTable, codes: &CodeArray, k: usize) -> Vec<Neighbor> {
    if k == 0 || codes.is_empty() {
        return Vec::new();
    }
    assert_eq!(codes.code_len(), table.m, "code length differs from table");
    let mut top = TopK::new(k);
    let kk = table.k;
    let e = &table.entries;
    match table.m {
        8 => {
            for (i, c) in codes.as_bytes().chunks_exact(8).enumerate() {
                let d = (e[c[0] as usize] + e[kk + c[1] as usize])
                    + (e[2 * kk + c[2] as usize] + e[3 * kk + c[3] as usize])
                    + ((e[4 * kk + c[4] as usize] + e[5 * kk + c[5] as usize])
                        + (e[6 * kk + c[6] as usize] + e[7 * kk + c[7] as usize]));
                top.push(i, d);
            }
        }
        _ => {
            for (i, c) in codes.iter().enumerate() {
                top.push(i, table.distance(c));
            }
        }
    }
    top.into_sorted()
}

/// Per-subspace distortion after each Lloyd assignment step.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub distortion: Vec<Vec<f64>>,
}

/// Trains a codebook with k-means++ seeded Lloyd iterations per subspace.
pub fn train<S: AsRef<[f32]> + Sync>(
    samples: &[S],
    m: usize,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<PqCodebook> {
    train_with_report(samples, m, k, iters, seed).map(|(cb, _)| cb)
}

pub fn train_with_report<S: AsRef<[f32]> + Sync>(
    samples: &[S],
    m: usize,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<(PqCodebook, TrainReport)> {
    if samples.len() < k {
        return Err(Error::InsufficientSamples {
            needed: k,
            got: samples.len(),
        });
    }
    let dim = samples[0].as_ref().len();
    validate_shape(m, k, dim)?;
    if let Some(bad) = samples.iter().find(|s| s.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.as_ref().len(),
        });
    }
    let ds = dim / m;
    let results: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|sub| {
            let slice: Vec<f64> = samples
                .iter()
                .flat_map(|s| s.as_ref()[sub * ds..(sub + 1) * ds].iter().map(|&v| v as f64))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (sub as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            kmeans(&slice, ds, k, iters, &mut rng)
        })
        .collect();
    let mut centroids = Vec::with_capacity(k * dim);
    let mut report = TrainReport::default();
    for (c, hist) in results {
        centroids.extend(c.iter().map(|&v| v as f32));
        report.distortion.push(hist);
    }
    Ok((PqCodebook::from_centroids(m, k, dim, seed, centroids)?, report))
}

fn sq_dist64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn nearest(p: &[f64], centroids: &[f64], ds: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(ds).enumerate() {
        let d = sq_dist64(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's algorithm on `n` points of width `ds`, k-means++ initialized.
/// Returns the centroids and the distortion after every assignment step.
fn kmeans(points: &[f64], ds: usize, k: usize, iters: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = points.len() / ds;
    let point = |i: usize| &points[i * ds..(i + 1) * ds];
    let mut centroids = plus_plus_init(points, ds, k, rng);
    let mut history = Vec::new();
    let mut assign = vec![0usize; n];
    let mut dists = vec![0f64; n];
    for _ in 0..iters.max(1) {
        let step: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(point(i), &centroids, ds))
            .collect();
        for (i, (a, d)) in step.into_iter().enumerate() {
            assign[i] = a;
            dists[i] = d;
        }
        let distortion: f64 = dists.iter().sum();
        let converged = history
            .last()
            .is_some_and(|&prev: &f64| prev <= 0.0 || (prev - distortion) / prev < CONVERGENCE);
        history.push(distortion);
        if converged || history.len() == iters.max(1) {
            break;
        }

        let mut sums = vec![0f64; k * ds];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i] * ds..(assign[i] + 1) * ds].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for (c, s) in centroids[j * ds..(j + 1) * ds]
                    .iter_mut()
                    .zip(&sums[j * ds..(j + 1) * ds])
                {
                    *c = s / counts[j] as f64;
                }
            }
        }
        // Empty clusters take the points farthest from their updated centroid.
        let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        if !empty.is_empty() {
            let mut far: Vec<(f64, usize)> = (0..n)
                .map(|i| (sq_dist64(point(i), &centroids[assign[i] * ds..(assign[i] + 1) * ds]), i))
                .collect();
            far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for (j, (_, i)) in empty.into_iter().zip(far) {
                centroids[j * ds..(j + 1) * ds].copy_from_slice(point(i));
            }
        }
    }
    (centroids, history)
}

fn plus_plus_init(points: &[f64], ds: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / ds;
    let point = |i: usize| &points[i * ds..(i + 1) * ds];
    let mut centroids = Vec::with_capacity(k * ds);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(point(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist64(point(i), point(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            while d2[chosen] == 0.0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = point(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist64(point(i), &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}
