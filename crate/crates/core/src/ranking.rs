//! Layer-wise edge rankings and the reputation vote.
//!
//! A ranking lists edge indices from least to most important, so the position
//! of an edge in the list is its reputation. The vote sums reputations across
//! clients and ranks edges by the totals. Every sort here is stable: equal
//! keys keep ascending index order.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::error::{FslError, Result};
use crate::nn::drop_count;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayerRanking {
    perm: Vec<usize>,
}

impl LayerRanking {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &e in &perm {
            if e >= n || seen[e] {
                return Err(FslError::NotAPermutation(n));
            }
            seen[e] = true;
        }
        Ok(Self { perm })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
        }
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// `reputations()[e]` is the position of edge `e`.
    pub fn reputations(&self) -> Vec<usize> {
        let mut rep = vec![0; self.perm.len()];
        for (pos, &e) in self.perm.iter().enumerate() {
            rep[e] = pos;
        }
        rep
    }

    /// The `count` most important edges, ascending by reputation.
    pub fn top(&self, count: usize) -> SparseLayerRanking {
        let n = self.perm.len();
        let count = count.min(n);
        SparseLayerRanking {
            top: self.perm[n - count..].to_vec(),
            n,
        }
    }
}

/// One ranking per layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkRanking {
    pub layers: Vec<LayerRanking>,
}

impl NetworkRanking {
    pub fn new(layers: Vec<LayerRanking>) -> Self {
        Self { layers }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(LayerRanking::len).collect()
    }

    pub fn reversed(&self) -> Self {
        Self {
            layers: self.layers.iter().map(reverse).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseLayerRanking {
    top: Vec<usize>,
    n: usize,
}

impl SparseLayerRanking {
    pub fn new(top: Vec<usize>, n: usize) -> Result<Self> {
        if top.len() > n {
            return Err(FslError::LengthMismatch);
        }
        let mut seen = BTreeSet::new();
        for &e in &top {
            if e >= n {
                return Err(FslError::NotAPermutation(n));
            }
            if !seen.insert(e) {
                return Err(FslError::DuplicateEdge(e));
            }
        }
        Ok(Self { top, n })
    }

    pub fn top(&self) -> &[usize] {
        &self.top
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReputationTally {
    pub reps: Vec<u64>,
}

impl ReputationTally {
    pub fn total(&self) -> u64 {
        self.reps.iter().sum()
    }
}

/// Stable ascending argsort.
pub fn argsort<T: PartialOrd>(values: &[T]) -> LayerRanking {
    let mut perm: Vec<usize> = (0..values.len()).collect();
    perm.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    LayerRanking { perm }
}

/// Places `sorted_values[i]` at edge `ranking.perm[i]`, so that the result
/// argsorts back to `ranking`.
pub fn reorder_scores(sorted_values: &[f32], ranking: &LayerRanking) -> Result<Vec<f32>> {
    if sorted_values.len() != ranking.len() {
        return Err(FslError::LengthMismatch);
    }
    let mut out = vec![0.0; sorted_values.len()];
    for (&v, &e) in sorted_values.iter().zip(&ranking.perm) {
        out[e] = v;
    }
    Ok(out)
}

fn finish(reps: Vec<u64>) -> (LayerRanking, ReputationTally) {
    (argsort(&reps), ReputationTally { reps })
}

/// Sums each edge's position over all rankings and argsorts the totals.
pub fn vote(rankings: &[LayerRanking]) -> Result<(LayerRanking, ReputationTally)> {
    let first = rankings.first().ok_or(FslError::EmptyUpdates)?;
    let n = first.len();
    let mut reps = vec![0u64; n];
    for r in rankings {
        if r.len() != n {
            return Err(FslError::LengthMismatch);
        }
        for (pos, &e) in r.perm.iter().enumerate() {
            reps[e] += pos as u64;
        }
    }
    Ok(finish(reps))
}

/// Vote over truncated rankings. Edge `top[i]` of a client that sent `s`
/// entries gets reputation `(n - s) + i`, the position it held in the full
/// ranking; edges a client left out get 0.
pub fn sparse_vote(sparse: &[SparseLayerRanking]) -> Result<(LayerRanking, ReputationTally)> {
    let first = sparse.first().ok_or(FslError::EmptyUpdates)?;
    let n = first.n;
    let mut reps = vec![0u64; n];
    for s in sparse {
        if s.n != n {
            return Err(FslError::LengthMismatch);
        }
        let base = (n - s.top.len()) as u64;
        for (i, &e) in s.top.iter().enumerate() {
            reps[e] += base + i as u64;
        }
    }
    Ok(finish(reps))
}

pub fn reverse(r: &LayerRanking) -> LayerRanking {
    let mut perm = r.perm.clone();
    perm.reverse();
    LayerRanking { perm }
}

/// The last `n - floor((1-k) n)` entries of the ranking.
pub fn top_edges(r: &LayerRanking, k: f64) -> BTreeSet<usize> {
    let t = drop_count(r.len(), k);
    r.perm[t..].iter().copied().collect()
}

/// Layer-wise vote.
pub fn vote_network(rankings: &[NetworkRanking]) -> Result<NetworkRanking> {
    let first = rankings.first().ok_or(FslError::EmptyUpdates)?;
    let mut layers = Vec::with_capacity(first.layers.len());
    for l in 0..first.layers.len() {
        let per_layer: Vec<LayerRanking> = rankings
            .iter()
            .map(|r| r.layers.get(l).cloned().ok_or(FslError::LengthMismatch))
            .collect::<Result<_>>()?;
        layers.push(vote(&per_layer)?.0);
    }
    Ok(NetworkRanking::new(layers))
}

/// Layer-wise sparse vote.
pub fn sparse_vote_network(sparse: &[Vec<SparseLayerRanking>]) -> Result<NetworkRanking> {
    let first = sparse.first().ok_or(FslError::EmptyUpdates)?;
    let mut layers = Vec::with_capacity(first.len());
    for l in 0..first.len() {
        let per_layer: Vec<SparseLayerRanking> = sparse
            .iter()
            .map(|r| r.get(l).cloned().ok_or(FslError::LengthMismatch))
            .collect::<Result<_>>()?;
        layers.push(sparse_vote(&per_layer)?.0);
    }
    Ok(NetworkRanking::new(layers))
}

/// Number of ranks a Sparse-FSL client sends for a layer of `n` edges.
pub fn sparse_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).ceil() as usize).min(n)
}

/// Bits per rank: `ceil(log2 n)`.
pub fn rank_width(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Packs `values` MSB-first at `width` bits each. The final byte is zero-padded.
pub fn pack_bits(values: &[usize], width: u32) -> Vec<u8> {
    let total = values.len() * width as usize;
    let mut out = vec![0u8; total.div_ceil(8)];
    let mut bit = 0usize;
    for &v in values {
        for i in (0..width).rev() {
            if (v >> i) & 1 == 1 {
                out[bit / 8] |= 0x80 >> (bit % 8);
            }
            bit += 1;
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], width: u32, count: usize) -> Result<Vec<usize>> {
    let need = (count * width as usize).div_ceil(8);
    if bytes.len() < need {
        return Err(FslError::LengthMismatch);
    }
    let mut out = Vec::with_capacity(count);
    let mut bit = 0usize;
    for _ in 0..count {
        let mut v = 0usize;
        for _ in 0..width {
            v = (v << 1) | usize::from((bytes[bit / 8] >> (7 - bit % 8)) & 1);
            bit += 1;
        }
        out.push(v);
    }
    Ok(out)
}

/// Wire form of one layer ranking.
pub fn encode_layer(r: &LayerRanking) -> Vec<u8> {
    pack_bits(&r.perm, rank_width(r.len()))
}

pub fn decode_layer(bytes: &[u8], n: usize) -> Result<LayerRanking> {
    LayerRanking::new(unpack_bits(bytes, rank_width(n), n)?)
}

/// Wire form of a sparse layer ranking; the width is that of the full layer.
pub fn encode_sparse(s: &SparseLayerRanking) -> Vec<u8> {
    pack_bits(&s.top, rank_width(s.n))
}

pub fn decode_sparse(bytes: &[u8], n: usize, count: usize) -> Result<SparseLayerRanking> {
    SparseLayerRanking::new(unpack_bits(bytes, rank_width(n), count)?, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lr(v: &[usize]) -> LayerRanking {
        LayerRanking::new(v.to_vec()).unwrap()
    }

    #[test]
    fn argsort_examples() {
        assert_eq!(argsort(&[10.0, 20.0, 30.0]).perm(), &[0, 1, 2]);
        assert_eq!(
            argsort(&[0.6f32, 1.1, 0.2, 0.3, 1.2, 0.9]).perm(),
            &[2, 3, 0, 5, 1, 4]
        );
        assert_eq!(argsort(&[5, 5, 5]).perm(), &[0, 1, 2]);
    }

    #[test]
    fn reorder_inverts_figure_assignment() {
        let sorted = [0.2f32, 0.3, 0.6, 0.9, 1.1, 1.2];
        let out = reorder_scores(&sorted, &lr(&[2, 3, 0, 5, 1, 4])).unwrap();
        assert_eq!(out, vec![0.6, 1.1, 0.2, 0.3, 1.2, 0.9]);
        assert_eq!(reorder_scores(&sorted, &LayerRanking::identity(6)).unwrap(), sorted);
        assert!(reorder_scores(&sorted[..5], &LayerRanking::identity(6)).is_err());
    }

    #[test]
    fn figure_one_vote() {
        let rs = [lr(&[4, 0, 2, 3, 5, 1]), lr(&[2, 0, 1, 5, 4, 3]), lr(&[0, 2, 5, 3, 4, 1])];
        let (global, tally) = vote(&rs).unwrap();
        assert_eq!(tally.reps, vec![2, 12, 3, 11, 8, 9]);
        assert_eq!(global.perm(), &[0, 2, 4, 5, 3, 1]);
        // Reputations of e_0 per client are 1, 1, 0.
        let e0: Vec<usize> = rs.iter().map(|r| r.reputations()[0]).collect();
        assert_eq!(e0, vec![1, 1, 0]);
    }

    #[test]
    fn single_and_identical_voters() {
        let r = lr(&[3, 1, 0, 2]);
        let (g, t) = vote(std::slice::from_ref(&r)).unwrap();
        assert_eq!(g, r);
        let inv: Vec<u64> = r.reputations().iter().map(|&x| x as u64).collect();
        assert_eq!(t.reps, inv);
        let (g3, t3) = vote(&[r.clone(), r.clone(), r.clone()]).unwrap();
        assert_eq!(g3, r);
        assert_eq!(t3.reps, inv.iter().map(|x| 3 * x).collect::<Vec<_>>());
    }

    #[test]
    fn vote_rejects_bad_input() {
        assert!(LayerRanking::new(vec![0, 0, 1]).is_err());
        assert!(LayerRanking::new(vec![0, 3, 1]).is_err());
        assert!(vote(&[lr(&[0, 1]), lr(&[0, 1, 2])]).is_err());
        assert!(vote(&[]).is_err());
    }

    #[test]
    fn sparse_vote_examples() {
        let s = SparseLayerRanking::new(vec![3, 5, 1], 6).unwrap();
        let (_, t) = sparse_vote(&[s]).unwrap();
        assert_eq!(t.reps, vec![0, 5, 0, 3, 0, 4]);

        let a = SparseLayerRanking::new(vec![2, 3], 4).unwrap();
        let b = SparseLayerRanking::new(vec![3, 2], 4).unwrap();
        let (g, t) = sparse_vote(&[a, b]).unwrap();
        assert_eq!(t.reps, vec![0, 0, 5, 5]);
        assert_eq!(g.perm(), &[0, 1, 2, 3]);

        assert!(matches!(
            SparseLayerRanking::new(vec![1, 1], 4),
            Err(FslError::DuplicateEdge(1))
        ));
    }

    #[test]
    fn sparse_at_full_width_matches_vote() {
        let rs = [lr(&[4, 0, 2, 3, 5, 1]), lr(&[2, 0, 1, 5, 4, 3]), lr(&[0, 2, 5, 3, 4, 1])];
        let sparse: Vec<_> = rs.iter().map(|r| r.top(6)).collect();
        assert_eq!(sparse_vote(&sparse).unwrap(), vote(&rs).unwrap());
    }

    #[test]
    fn reverse_examples() {
        let r = lr(&[4, 0, 2, 3, 5, 1]);
        assert_eq!(reverse(&r).perm(), &[1, 5, 3, 2, 0, 4]);
        assert_eq!(reverse(&reverse(&r)), r);
        let rep = r.reputations();
        let rev = reverse(&r).reputations();
        for e in 0..6 {
            assert_eq!(rev[e], 5 - rep[e]);
        }
    }

    #[test]
    fn top_edges_examples() {
        let r = lr(&[4, 0, 2, 3, 5, 1]);
        assert_eq!(top_edges(&r, 0.5), [3, 5, 1].into_iter().collect());
        assert_eq!(top_edges(&r, 1.0).len(), 6);
        assert!(top_edges(&r, 0.0).is_empty());
        assert_eq!(r.top(3).top(), &[3, 5, 1]);
    }

    #[test]
    fn rank_widths() {
        assert_eq!(rank_width(1), 0);
        assert_eq!(rank_width(2), 1);
        assert_eq!(rank_width(6), 3);
        assert_eq!(rank_width(8), 3);
        assert_eq!(rank_width(9), 4);
        assert_eq!(rank_width(1_605_632), 21);
    }

    #[test]
    fn wire_format_is_msb_first() {
        // n = 6 uses 3-bit ranks: 100 000 010 011 101 001, zero-padded to 3 bytes
        let r = lr(&[4, 0, 2, 3, 5, 1]);
        let bytes = encode_layer(&r);
        assert_eq!(bytes, vec![0b1000_0001, 0b0011_1010, 0b0100_0000]);
        assert_eq!(decode_layer(&bytes, 6).unwrap(), r);
        let s = r.top(3);
        let sb = encode_sparse(&s);
        assert_eq!(sb.len(), 2);
        assert_eq!(decode_sparse(&sb, 6, 3).unwrap(), s);
    }

    #[test]
    fn sparse_count_rounds_up() {
        assert_eq!(sparse_count(6, 0.5), 3);
        assert_eq!(sparse_count(10, 0.15), 2);
        assert_eq!(sparse_count(7, 1.0), 7);
    }
}
