//! Ranking metrics against pseudo ground truth, and Pearson correlation.
//!
//! * AP sums `P(k)·Δr(k)` over the whole ranking (or a configurable depth),
//!   where `Δr(k)` is `1/|relevant|` at ranks holding a relevant id.
//! * DCG at `p` uses the baseline cosine score of each retrieved id as its
//!   graded relevance; IDCG is the DCG of the baseline's own top `p`, so the
//!   baseline scores nDCG = 1 against itself.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::{PseudoGroundTruth, PseudoGroundTruthSet, RankedList, ScenarioSpec};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("relevant set is empty")]
    EmptyRelevant,
    #[error("cannot average an empty sequence")]
    EmptyInput,
    #[error("cutoff {p} exceeds ranking length {len}")]
    CutoffExceedsList { p: usize, len: usize },
    #[error("no relevance score for retrieved id {0:?}")]
    MissingRelevance(String),
    #[error("ideal DCG is {0}, nDCG undefined")]
    DegenerateIdeal(f64),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series needs at least two values, got {0}")]
    TooShort(usize),
    #[error("series {0:?} has zero variance")]
    ZeroVariance(String),
    #[error("no pseudo ground truth for query {0:?}")]
    UnknownQuery(String),
}

/// Gain applied to relevance scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// `rel` in both DCG and IDCG.
    #[default]
    Linear,
    /// `2^rel − 1` in both DCG and IDCG.
    Exponential,
    /// Linear DCG over exponential IDCG; nDCG of the baseline is then not 1.
    Mixed,
}

impl GainMode {
    fn dcg_gain(self, rel: f64) -> f64 {
        match self {
            GainMode::Linear | GainMode::Mixed => rel,
            GainMode::Exponential => rel.exp2() - 1.0,
        }
    }

    fn ideal_gain(self, rel: f64) -> f64 {
        match self {
            GainMode::Linear => rel,
            GainMode::Exponential | GainMode::Mixed => rel.exp2() - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub gain: GainMode,
    /// Truncate the AP sum at this rank; `None` sums over the full ranking.
    pub ap_depth: Option<usize>,
}

#[inline]
fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// AP from the relevance flags of a ranking.
pub fn average_precision_from_flags<I>(flags: I, n_relevant: usize) -> Result<f64, MetricError>
where
    I: IntoIterator<Item = bool>,
{
    if n_relevant == 0 {
        return Err(MetricError::EmptyRelevant);
    }
    // Σ P(k)·(1/R) computed as (Σ P(k)) / R so a perfect ranking gives exactly 1
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (k, relevant) in flags.into_iter().enumerate() {
        if relevant {
            hits += 1;
            precision_sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(precision_sum / n_relevant as f64)
}

pub fn average_precision(
    ranked: &RankedList,
    relevant: &HashSet<String>,
) -> Result<f64, MetricError> {
    average_precision_at(ranked, relevant, None)
}

pub fn average_precision_at(
    ranked: &RankedList,
    relevant: &HashSet<String>,
    depth: Option<usize>,
) -> Result<f64, MetricError> {
    let depth = depth.unwrap_or(usize::MAX);
    average_precision_from_flags(
        ranked.ids().take(depth).map(|id| relevant.contains(id)),
        relevant.len(),
    )
}

fn dcg_of_gains<I: IntoIterator<Item = f64>>(gains: I) -> f64 {
    gains
        .into_iter()
        .enumerate()
        .map(|(i, g)| g / discount(i + 1))
        .sum()
}

/// `Σ_{i≤p} gain(rel_i) / log2(i+1)` with relevances looked up by id.
pub fn dcg(
    ranked: &RankedList,
    relevance: &HashMap<String, f64>,
    p: usize,
    gain: GainMode,
) -> Result<f64, MetricError> {
    if p > ranked.len() {
        return Err(MetricError::CutoffExceedsList {
            p,
            len: ranked.len(),
        });
    }
    let gains = ranked
        .ids()
        .take(p)
        .map(|id| {
            relevance
                .get(id)
                .map(|r| gain.dcg_gain(*r))
                .ok_or_else(|| MetricError::MissingRelevance(id.to_owned()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(dcg_of_gains(gains))
}

/// DCG of the baseline's own top `p`, scored with its own similarities.
pub fn idcg(baseline: &RankedList, p: usize, gain: GainMode) -> Result<f64, MetricError> {
    let scores: Vec<f64> = baseline.entries.iter().map(|e| e.score()).collect();
    idcg_from_scores(&scores, p, gain)
}

pub fn idcg_from_scores(scores: &[f64], p: usize, gain: GainMode) -> Result<f64, MetricError> {
    if p > scores.len() {
        return Err(MetricError::CutoffExceedsList {
            p,
            len: scores.len(),
        });
    }
    let v = dcg_of_gains(scores[..p].iter().map(|r| gain.ideal_gain(*r)));
    if v.is_nan() || v <= 0.0 {
        return Err(MetricError::DegenerateIdeal(v));
    }
    Ok(v)
}

pub fn ndcg(
    ranked: &RankedList,
    truth: &PseudoGroundTruth,
    gain: GainMode,
) -> Result<f64, MetricError> {
    let ideal = idcg_from_scores(&truth.ideal_scores, truth.cutoff_p, gain)?;
    Ok(dcg(ranked, &truth.relevance, truth.cutoff_p, gain)? / ideal)
}

fn mean_percent(values: &[f64]) -> Result<f64, MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64 * 100.0)
}

/// Mean AP as a percentage.
pub fn mean_average_precision(ap: &[f64]) -> Result<f64, MetricError> {
    mean_percent(ap)
}

/// Mean nDCG as a percentage.
pub fn mndcg(ndcg: &[f64]) -> Result<f64, MetricError> {
    mean_percent(ndcg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query_id: String,
    pub ap: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scenario: ScenarioSpec,
    pub cutoff_p: usize,
    pub map: f64,
    pub mndcg: f64,
    pub per_query: Vec<QueryScore>,
}

/// Scores each ranking against the pseudo ground truth of its query.
pub fn evaluate(
    scenario: &ScenarioSpec,
    rankings: &[RankedList],
    truth: &PseudoGroundTruthSet,
    opts: &MetricOptions,
) -> Result<MetricReport, MetricError> {
    let per_query = rankings
        .iter()
        .map(|r| {
            let t = truth
                .get(&r.query_id)
                .ok_or_else(|| MetricError::UnknownQuery(r.query_id.clone()))?;
            Ok(QueryScore {
                query_id: r.query_id.clone(),
                ap: average_precision_at(r, t.relevant(), opts.ap_depth)?,
                ndcg: ndcg(r, t, opts.gain)?,
            })
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    let aps: Vec<f64> = per_query.iter().map(|q| q.ap).collect();
    let ndcgs: Vec<f64> = per_query.iter().map(|q| q.ndcg).collect();
    Ok(MetricReport {
        scenario: scenario.clone(),
        cutoff_p: truth.cutoff_p().unwrap_or(0),
        map: mean_average_precision(&aps)?,
        mndcg: mndcg(&ndcgs)?,
        per_query,
    })
}

/// Sample Pearson correlation coefficient.
pub fn pearson_correlation(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    if xs.len() != ys.len() {
        return Err(MetricError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricError::TooShort(xs.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MetricError::ZeroVariance("x".into()));
    }
    if syy == 0.0 {
        return Err(MetricError::ZeroVariance("y".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.values[i][j])
    }

    /// CSV with series names as header row and first column.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for name in &self.names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.names.iter().zip(&self.values) {
            out.push_str(name);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise Pearson coefficients; the upper triangle is mirrored and the
/// diagonal is exactly 1.
pub fn correlation_matrix(series: &[(String, Vec<f64>)]) -> Result<CorrelationMatrix, MetricError> {
    let n = series.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let r = pearson_correlation(&series[i].1, &series[j].1).map_err(|e| match e {
                MetricError::ZeroVariance(which) => {
                    let name = if which == "x" {
                        &series[i].0
                    } else {
                        &series[j].0
                    };
                    MetricError::ZeroVariance(name.clone())
                }
                other => other,
            })?;
            let r = if i == j { 1.0 } else { r };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: series.iter().map(|(n, _)| n.clone()).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{CutoffRule, RankedEntry};

    fn ranked(ids: &[&str]) -> RankedList {
        RankedList {
            query_id: "q".into(),
            entries: ids
                .iter()
                .map(|id| RankedEntry(id.to_string(), 0.0))
                .collect(),
        }
    }

    fn set(ids: &[&str]) -> HashSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ap_examples() {
        let r = ranked(&["a", "b", "c", "d"]);
        assert_eq!(average_precision(&r, &set(&["a", "b"])).unwrap(), 1.0);
        let ap = average_precision(&r, &set(&["a", "c"])).unwrap();
        assert!((ap - (0.5 + (2.0 / 3.0) * 0.5)).abs() < 1e-15);
        assert!((ap - 0.833_333_333_333_333_4).abs() < 1e-15);
        let truncated = ranked(&["x", "y"]);
        assert_eq!(average_precision(&truncated, &set(&["a"])).unwrap(), 0.0);
        assert_eq!(
            average_precision(&r, &set(&[])),
            Err(MetricError::EmptyRelevant)
        );
    }

    #[test]
    fn ap_depth_cuts_the_sum() {
        let r = ranked(&["a", "b", "c"]);
        let ap = average_precision_at(&r, &set(&["a", "c"]), Some(2)).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn map_and_mndcg() {
        assert_eq!(mean_average_precision(&[1.0, 0.0]).unwrap(), 50.0);
        assert_eq!(mean_average_precision(&[1.0; 7]).unwrap(), 100.0);
        let single = mean_average_precision(&[0.5 + (2.0 / 3.0) * 0.5]).unwrap();
        assert!((single - 83.333_333_333_333_33).abs() < 1e-9);
        assert_eq!(mndcg(&[1.0, 1.0]).unwrap(), 100.0);
        assert_eq!(mndcg(&[1.0, 0.5]).unwrap(), 75.0);
        assert_eq!(mndcg(&[]), Err(MetricError::EmptyInput));
    }

    fn baseline(scores: &[f64]) -> RankedList {
        RankedList {
            query_id: "q".into(),
            entries: scores
                .iter()
                .enumerate()
                .map(|(i, s)| RankedEntry(format!("d{i}"), *s))
                .collect(),
        }
    }

    #[test]
    fn dcg_examples() {
        let b = baseline(&[1.0, 0.2]);
        let rel: HashMap<String, f64> = b.entries.iter().map(|e| (e.0.clone(), e.1)).collect();
        assert_eq!(dcg(&b, &rel, 1, GainMode::Linear).unwrap(), 1.0);

        let b = baseline(&[0.9, 0.8, 0.7]);
        let rel: HashMap<String, f64> = b.entries.iter().map(|e| (e.0.clone(), e.1)).collect();
        let expected = 0.9 + 0.8 / 3f64.log2() + 0.7 / 2.0;
        let v = dcg(&b, &rel, 3, GainMode::Linear).unwrap();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 1.754_743_802_857).abs() < 1e-12);
        assert_eq!(idcg(&b, 3, GainMode::Linear).unwrap(), v);

        let zeros = baseline(&[0.0, 0.0]);
        let rel: HashMap<String, f64> = zeros.entries.iter().map(|e| (e.0.clone(), e.1)).collect();
        assert_eq!(dcg(&zeros, &rel, 2, GainMode::Linear).unwrap(), 0.0);
        assert_eq!(
            idcg(&zeros, 2, GainMode::Linear),
            Err(MetricError::DegenerateIdeal(0.0))
        );
    }

    #[test]
    fn dcg_errors() {
        let b = baseline(&[0.9, 0.8]);
        let rel = HashMap::from([("d0".to_string(), 0.9)]);
        assert_eq!(
            dcg(&b, &rel, 3, GainMode::Linear),
            Err(MetricError::CutoffExceedsList { p: 3, len: 2 })
        );
        assert_eq!(
            dcg(&b, &rel, 2, GainMode::Linear),
            Err(MetricError::MissingRelevance("d1".into()))
        );
    }

    #[test]
    fn ndcg_of_baseline_is_one_and_equal_relevances_are_symmetric() {
        let b = baseline(&[0.9, 0.8, 0.7, 0.1]);
        let t = PseudoGroundTruth::from_baseline(&b, CutoffRule::TopK(3)).unwrap();
        assert_eq!(ndcg(&b, &t, GainMode::Linear).unwrap(), 1.0);
        assert_eq!(ndcg(&b, &t, GainMode::Exponential).unwrap(), 1.0);
        assert!(ndcg(&b, &t, GainMode::Mixed).unwrap() != 1.0);

        let flat = baseline(&[0.5, 0.5, 0.5, 0.5]);
        let t = PseudoGroundTruth::from_baseline(&flat, CutoffRule::TopK(3)).unwrap();
        let mut permuted = flat.clone();
        permuted.entries.swap(0, 3);
        permuted.entries.swap(1, 2);
        assert_eq!(ndcg(&permuted, &t, GainMode::Linear).unwrap(), 1.0);
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.5];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 3.0).collect();
        assert!((pearson_correlation(&xs, &ys).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson_correlation(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(
            (pearson_correlation(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15
        );
        assert_eq!(
            pearson_correlation(&[1.0, 1.0], &[1.0, 2.0]),
            Err(MetricError::ZeroVariance("x".into()))
        );
        assert_eq!(
            pearson_correlation(&[1.0], &[1.0, 2.0]),
            Err(MetricError::LengthMismatch(1, 2))
        );
    }

    #[test]
    fn correlation_matrix_shape() {
        let m = correlation_matrix(&[
            ("a".into(), vec![1.0, 2.0, 3.0]),
            ("b".into(), vec![1.0, 2.0, 3.0]),
        ])
        .unwrap();
        for row in &m.values {
            assert!(row.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
        assert_eq!((m.values[0][0], m.values[1][1]), (1.0, 1.0));
        assert_eq!(m.values[0][1], m.values[1][0]);
        let csv = m.to_csv();
        assert!(csv.starts_with(",a,b\na,"));
        assert_eq!(csv.lines().count(), 3);
        let err = correlation_matrix(&[
            ("a".into(), vec![1.0, 2.0]),
            ("flat".into(), vec![3.0, 3.0]),
        ]);
        assert_eq!(err, Err(MetricError::ZeroVariance("flat".into())));
    }
}
