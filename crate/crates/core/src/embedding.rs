//! Word embeddings and the cosine neighborhood used to constrain
//! substitutions.
//!
//! Row 0 (padding) is pinned to zero everywhere: at initialization, after
//! loading pretrained vectors, and after every optimizer step. The neighbor
//! index is exact — all-pairs cosine over the full vocabulary — because the
//! admissibility of a substitution is part of the output contract and may
//! not depend on an approximate retrieval structure.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::BufRead;
use std::path::Path;

use crate::corpus::{Vocabulary, NUM_SPECIALS, PAD_ID};
use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Half-width of the uniform initialization interval.
const INIT_RANGE: f64 = 0.1;

/// Dense `n × m` embedding table. The type, not the caller, maintains the
/// invariant that the padding row is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<R: Real> {
    values: Array2<R>,
}

impl<R: Real> EmbeddingMatrix<R> {
    /// Fresh embeddings, uniform in `[-0.1, 0.1)`, padding row zeroed.
    ///
    /// Values are drawn as `f64` and narrowed, so `f32` and `f64` models
    /// built from the same seed start at the same points.
    pub fn init(vocab_size: usize, dim: usize, seed: u64) -> Result<Self> {
        if vocab_size < NUM_SPECIALS as usize || dim == 0 {
            return Err(Error::DimensionMismatch(format!(
                "embedding table needs at least {NUM_SPECIALS} rows and 1 column, got {vocab_size}x{dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Array2::zeros((vocab_size, dim));
        for row in 1..vocab_size {
            for col in 0..dim {
                values[[row, col]] = real(rng.random_range(-INIT_RANGE..INIT_RANGE));
            }
        }
        Ok(EmbeddingMatrix { values })
    }

    /// Wrap an existing table (checkpoint restore). Zeroes the padding row.
    pub fn from_values(mut values: Array2<R>) -> Result<Self> {
        if values.nrows() < NUM_SPECIALS as usize || values.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "embedding table needs at least {NUM_SPECIALS} rows and 1 column, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        values.row_mut(PAD_ID as usize).fill(R::zero());
        Ok(EmbeddingMatrix { values })
    }

    pub fn values(&self) -> &Array2<R> {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut Array2<R> {
        &mut self.values
    }

    /// (vocabulary size, embedding dimension)
    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn row(&self, id: u32) -> ArrayView1<'_, R> {
        self.values.row(id as usize)
    }

    /// Re-zero the padding row (called after optimizer updates).
    pub fn zero_pad_row(&mut self) {
        self.values.row_mut(PAD_ID as usize).fill(R::zero());
    }
}

/// Load word vectors in the plain-text `token v1 … vm` format. Words absent
/// from the file are initialized randomly from `seed`; the returned fraction
/// counts how many non-reserved vocabulary words the file covered.
pub fn load_pretrained<R: Real>(
    path: &Path,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<(EmbeddingMatrix<R>, f64)> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);

    let mut dim: Option<usize> = None;
    let mut rows: Vec<(u32, Vec<f64>)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().ok_or_else(|| {
            Error::InvalidData(format!("{}:{}: missing token", path.display(), lineno + 1))
        })?;
        let vals: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|e| {
                    Error::InvalidData(format!("{}:{}: {e}", path.display(), lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        match dim {
            None => {
                if vals.is_empty() {
                    return Err(Error::InvalidData(format!(
                        "{}:{}: no vector components",
                        path.display(),
                        lineno + 1
                    )));
                }
                dim = Some(vals.len());
            }
            Some(d) if d != vals.len() => {
                return Err(Error::InvalidData(format!(
                    "{}:{}: expected {d} components, got {}",
                    path.display(),
                    lineno + 1,
                    vals.len()
                )));
            }
            _ => {}
        }
        if let Some(id) = vocab.id(token) {
            if !Vocabulary::is_special(id) {
                rows.push((id, vals));
            }
        }
    }
    let dim = dim.ok_or_else(|| {
        Error::InvalidData(format!("{}: no vectors in file", path.display()))
    })?;

    let mut emb = EmbeddingMatrix::<R>::init(vocab.size(), dim, seed)?;
    let mut covered = vec![false; vocab.size()];
    for (id, vals) in rows {
        covered[id as usize] = true;
        for (col, v) in vals.into_iter().enumerate() {
            emb.values[[id as usize, col]] = real(v);
        }
    }
    let denom = vocab.size().saturating_sub(NUM_SPECIALS as usize);
    let coverage = if denom == 0 {
        0.0
    } else {
        covered.iter().filter(|&&c| c).count() as f64 / denom as f64
    };
    Ok((emb, coverage))
}

/// Precomputed cosine neighborhoods: `contains(w, s)` holds iff
/// `cos(e_w, e_s) ≥ tau`. Reserved ids and zero-norm rows have no neighbors
/// and appear in no neighbor set.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    tau: f64,
    lists: Vec<Vec<u32>>,
}

impl NeighborIndex {
    pub fn build<R: Real>(emb: &EmbeddingMatrix<R>, tau: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&tau) {
            return Err(Error::config("similarity_tau", "must lie in [-1, 1]"));
        }
        let (n, _m) = emb.dim();
        let norms: Vec<f64> = (0..n)
            .map(|i| {
                emb.values
                    .row(i)
                    .iter()
                    .map(|&x| {
                        let v = x.to_f64().unwrap_or(f64::NAN);
                        v * v
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let first = NUM_SPECIALS as usize;
        let mut lists = vec![Vec::new(); n];
        for i in first..n {
            if norms[i] == 0.0 {
                continue;
            }
            let row_i = emb.values.row(i);
            for j in (i + 1)..n {
                if norms[j] == 0.0 {
                    continue;
                }
                let dot: f64 = row_i
                    .iter()
                    .zip(emb.values.row(j).iter())
                    .map(|(&a, &b)| a.to_f64().unwrap_or(f64::NAN) * b.to_f64().unwrap_or(f64::NAN))
                    .sum();
                if dot / (norms[i] * norms[j]) >= tau {
                    lists[i].push(j as u32);
                    lists[j].push(i as u32);
                }
            }
        }
        for l in &mut lists {
            l.sort_unstable();
        }
        Ok(NeighborIndex { tau, lists })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn contains(&self, word: u32, candidate: u32) -> bool {
        self.lists
            .get(word as usize)
            .map(|l| l.binary_search(&candidate).is_ok())
            .unwrap_or(false)
    }

    pub fn neighbors(&self, word: u32) -> &[u32] {
        self.lists
            .get(word as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn vocab_size(&self) -> usize {
        self.lists.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_zeroes_pad_row_and_respects_range() {
        let emb = EmbeddingMatrix::<f64>::init(20, 8, 42).unwrap();
        assert!(emb.row(PAD_ID).iter().all(|&x| x == 0.0));
        for row in 1..20 {
            for &x in emb.values().row(row) {
                assert!((-0.1..0.1).contains(&x));
            }
        }
    }

    #[test]
    fn init_is_seed_deterministic_and_matches_across_scalar_types() {
        let a = EmbeddingMatrix::<f64>::init(10, 4, 7).unwrap();
        let b = EmbeddingMatrix::<f64>::init(10, 4, 7).unwrap();
        assert_eq!(a, b);
        let c = EmbeddingMatrix::<f32>::init(10, 4, 7).unwrap();
        for (x64, x32) in a.values().iter().zip(c.values().iter()) {
            assert_eq!(*x32, *x64 as f32);
        }
    }

    #[test]
    fn neighbor_index_matches_hand_computed_cosines() {
        // ids: 0 pad, 1 unk, 2..5 real words in 2-d space.
        let values = array![
            [0.0, 0.0],
            [0.5, 0.5],
            [1.0, 0.0],
            [0.9, 0.1],
            [0.0, 1.0],
            [-1.0, 0.0],
        ];
        let emb = EmbeddingMatrix::from_values(values).unwrap();
        let idx = NeighborIndex::build(&emb, 0.9).unwrap();
        assert!(idx.contains(2, 3) && idx.contains(3, 2));
        assert!(!idx.contains(2, 4));
        assert!(!idx.contains(2, 5));
        // reserved ids never participate even with nonzero rows
        assert!(!idx.contains(1, 2) && !idx.contains(2, 1));
        assert!(idx.neighbors(0).is_empty());
    }

    #[test]
    fn zero_norm_rows_have_no_neighbors() {
        let values = array![[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.8, 0.0]];
        let emb = EmbeddingMatrix::from_values(values).unwrap();
        let idx = NeighborIndex::build(&emb, -1.0).unwrap();
        assert!(idx.neighbors(2).is_empty());
        assert!(!idx.contains(3, 2));
        assert!(idx.contains(3, 4));
    }

    #[test]
    fn pretrained_loading_reports_coverage_and_randomizes_misses() {
        use std::io::Write;
        let mut vocab = Vocabulary::new();
        for w in ["aa", "bb", "cc", "dd"] {
            vocab.get_or_insert(w);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "aa 1.0 2.0 3.0").unwrap();
        writeln!(f, "cc -1.0 0.0 0.5").unwrap();
        writeln!(f, "zz 9.0 9.0 9.0").unwrap();
        drop(f);
        let (emb, coverage) = load_pretrained::<f64>(&path, &vocab, 5).unwrap();
        assert_eq!(coverage, 0.5);
        assert_eq!(emb.dim(), (6, 3));
        assert_eq!(emb.row(vocab.id("aa").unwrap()).to_vec(), vec![1.0, 2.0, 3.0]);
        assert_eq!(emb.row(vocab.id("cc").unwrap()).to_vec(), vec![-1.0, 0.0, 0.5]);
        assert!(emb.row(PAD_ID).iter().all(|&x| x == 0.0));
        // missing word got the seeded random init, not zeros
        assert!(emb.row(vocab.id("bb").unwrap()).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn pretrained_loading_rejects_ragged_vectors() {
        use std::io::Write;
        let mut vocab = Vocabulary::new();
        vocab.get_or_insert("aa");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "aa 1.0 2.0").unwrap();
        writeln!(f, "bb 1.0").unwrap();
        drop(f);
        assert!(load_pretrained::<f64>(&path, &vocab, 0).is_err());
    }
}
