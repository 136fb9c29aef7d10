//! Weight-space aggregation rules used by the baseline protocols.

use serde::{Deserialize, Serialize};

use crate::error::{FslError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate {
    pub delta: Vec<f32>,
    pub client_id: usize,
}

impl ModelUpdate {
    pub fn new(delta: Vec<f32>, client_id: usize) -> Self {
        Self { delta, client_id }
    }

    pub fn dim(&self) -> usize {
        self.delta.len()
    }

    pub fn norm(&self) -> f64 {
        self.delta
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt()
    }

    /// Signs of the update, zero mapped to +1.
    pub fn signs(&self) -> SignUpdate {
        SignUpdate {
            signs: self.delta.iter().map(|&x| if x < 0.0 { -1 } else { 1 }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignUpdate {
    pub signs: Vec<i8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Average,
    TrimmedMean,
    MultiKrum,
}

impl AggregatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Average => "average",
            AggregatorKind::TrimmedMean => "trimmed_mean",
            AggregatorKind::MultiKrum => "multi_krum",
        }
    }

    /// Applies this rule with `f` assumed malicious updates.
    pub fn aggregate(self, updates: &[ModelUpdate], f: usize) -> Result<ModelUpdate> {
        match self {
            AggregatorKind::Average => average(updates),
            AggregatorKind::TrimmedMean => trimmed_mean(updates, f),
            AggregatorKind::MultiKrum => multi_krum(updates, f),
        }
    }
}

fn check_dims(updates: &[ModelUpdate]) -> Result<usize> {
    let d = updates.first().ok_or(FslError::EmptyUpdates)?.dim();
    if updates.iter().any(|u| u.dim() != d) {
        return Err(FslError::LengthMismatch);
    }
    Ok(d)
}

fn mean_of<'a>(updates: impl Iterator<Item = &'a ModelUpdate>, d: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; d];
    let mut count = 0usize;
    for u in updates {
        for (a, &x) in acc.iter_mut().zip(&u.delta) {
            *a += f64::from(x);
        }
        count += 1;
    }
    acc.into_iter().map(|a| (a / count as f64) as f32).collect()
}

/// Unweighted elementwise mean. The result carries the lowest client id.
pub fn average(updates: &[ModelUpdate]) -> Result<ModelUpdate> {
    let d = check_dims(updates)?;
    let id = updates.iter().map(|u| u.client_id).min().unwrap_or(0);
    Ok(ModelUpdate::new(mean_of(updates.iter(), d), id))
}

/// Per coordinate, drops the `f` largest and `f` smallest values and averages the rest.
pub fn trimmed_mean(updates: &[ModelUpdate], f: usize) -> Result<ModelUpdate> {
    let d = check_dims(updates)?;
    let n = updates.len();
    if n <= 2 * f {
        return Err(FslError::AggregatorPrecondition(format!(
            "trimmed mean needs more than {} updates, got {n}",
            2 * f
        )));
    }
    let mut column = vec![0.0f32; n];
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        for (c, u) in column.iter_mut().zip(updates) {
            *c = u.delta[j];
        }
        column.sort_by(f32::total_cmp);
        let kept = &column[f..n - f];
        let s: f64 = kept.iter().map(|&x| f64::from(x)).sum();
        out.push((s / kept.len() as f64) as f32);
    }
    let id = updates.iter().map(|u| u.client_id).min().unwrap_or(0);
    Ok(ModelUpdate::new(out, id))
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

/// Krum score of each update: the summed squared distance to its
/// `n - f - 2` nearest other updates.
pub fn krum_scores(updates: &[ModelUpdate], f: usize) -> Result<Vec<f64>> {
    check_dims(updates)?;
    let n = updates.len();
    if n < f + 3 {
        return Err(FslError::AggregatorPrecondition(format!(
            "multi-krum needs at least {} updates, got {n}",
            f + 3
        )));
    }
    let neighbours = n - f - 2;
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(&updates[i].delta, &updates[j].delta);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).collect();
            others.sort_by(f64::total_cmp);
            others[..neighbours].iter().sum()
        })
        .collect())
}

/// Indices (into `updates`) of the `n - f` lowest Krum scores, ties by lower client id.
pub fn multi_krum_select(updates: &[ModelUpdate], f: usize) -> Result<Vec<usize>> {
    let scores = krum_scores(updates, f)?;
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .total_cmp(&scores[b])
            .then(updates[a].client_id.cmp(&updates[b].client_id))
    });
    order.truncate(updates.len() - f);
    Ok(order)
}

/// Mean of the Multi-Krum selection.
pub fn multi_krum(updates: &[ModelUpdate], f: usize) -> Result<ModelUpdate> {
    let d = check_dims(updates)?;
    let selected = multi_krum_select(updates, f)?;
    let id = selected.iter().map(|&i| updates[i].client_id).min().unwrap_or(0);
    Ok(ModelUpdate::new(mean_of(selected.iter().map(|&i| &updates[i]), d), id))
}

/// Per-coordinate sign of the summed votes; a zero sum becomes +1.
pub fn sign_majority(updates: &[SignUpdate]) -> Result<SignUpdate> {
    let d = updates.first().ok_or(FslError::EmptyUpdates)?.signs.len();
    if updates.iter().any(|u| u.signs.len() != d) {
        return Err(FslError::LengthMismatch);
    }
    let mut sums = vec![0i64; d];
    for u in updates {
        for (s, &x) in sums.iter_mut().zip(&u.signs) {
            *s += i64::from(x);
        }
    }
    Ok(SignUpdate {
        signs: sums.into_iter().map(|s| if s < 0 { -1 } else { 1 }).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ups(rows: &[&[f32]]) -> Vec<ModelUpdate> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| ModelUpdate::new(r.to_vec(), i))
            .collect()
    }

    #[test]
    fn average_examples() {
        assert_eq!(average(&ups(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap().delta, vec![2.0, 3.0]);
        assert_eq!(average(&ups(&[&[1.5, -2.0]])).unwrap().delta, vec![1.5, -2.0]);
        let u = [0.1f32, 0.7, -3.0];
        assert_eq!(average(&ups(&[&u, &u, &u])).unwrap().delta, u.to_vec());
        assert!(matches!(average(&[]), Err(FslError::EmptyUpdates)));
    }

    #[test]
    fn trimmed_mean_examples() {
        let t = trimmed_mean(&ups(&[&[1.0], &[2.0], &[3.0], &[100.0]]), 1).unwrap();
        assert_eq!(t.delta, vec![2.5]);
        let u = ups(&[&[1.0, 2.0], &[3.0, 5.0], &[-1.0, 0.5]]);
        assert_eq!(trimmed_mean(&u, 0).unwrap().delta, average(&u).unwrap().delta);
        assert!(trimmed_mean(&ups(&[&[1.0], &[2.0]]), 1).is_err());
    }

    #[test]
    fn multi_krum_examples() {
        let u = ups(&[&[1.0], &[1.1], &[0.9], &[10.0]]);
        let mut sel = multi_krum_select(&u, 1).unwrap();
        sel.sort_unstable();
        assert_eq!(sel, vec![0, 1, 2]);
        assert!((multi_krum(&u, 1).unwrap().delta[0] - 1.0).abs() < 1e-6);
        let same = ups(&[&[2.0, -1.0], &[2.0, -1.0], &[2.0, -1.0]]);
        assert_eq!(multi_krum(&same, 0).unwrap().delta, vec![2.0, -1.0]);
        assert!(multi_krum(&ups(&[&[1.0], &[2.0], &[3.0]]), 1).is_err());
    }

    #[test]
    fn multi_krum_f0_is_average() {
        let u = ups(&[&[1.0, 4.0], &[2.0, 0.0], &[7.0, -3.0]]);
        assert_eq!(multi_krum(&u, 0).unwrap().delta, average(&u).unwrap().delta);
    }

    #[test]
    fn sign_majority_examples() {
        let s = |v: &[i8]| SignUpdate { signs: v.to_vec() };
        assert_eq!(
            sign_majority(&[s(&[1, -1]), s(&[1, 1]), s(&[-1, -1])]).unwrap(),
            s(&[1, -1])
        );
        assert_eq!(sign_majority(&[s(&[-1, 1])]).unwrap(), s(&[-1, 1]));
        assert_eq!(sign_majority(&[s(&[1]), s(&[-1])]).unwrap(), s(&[1]));
        assert!(sign_majority(&[]).is_err());
    }

    #[test]
    fn zero_sign_maps_to_plus() {
        let u = ModelUpdate::new(vec![0.0, -0.0, -1.0, 2.0], 0);
        assert_eq!(u.signs().signs, vec![1, 1, -1, 1]);
    }
}
