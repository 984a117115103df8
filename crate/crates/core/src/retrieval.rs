//! Exact cosine-similarity retrieval, pseudo ground truth and Q→D scenarios.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::store::EmbeddingMatrix;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector for {0:?}")]
    ZeroVector(String),
    #[error("database is empty after self-exclusion")]
    EmptyDatabase,
    #[error("database of {n} items gives a cutoff of 0 at {rule}")]
    DatabaseTooSmall { n: usize, rule: CutoffRule },
    #[error("invalid cutoff rule: {0}")]
    InvalidRule(String),
    #[error("ranking for query {0:?} does not cover the shared database")]
    InconsistentCoverage(String),
    #[error("no baseline rankings given")]
    NoRankings,
    #[error("embeddings for source {0} are missing")]
    MissingSource(ValSource),
    #[error("query and database matrices hold different id sets")]
    IdSetMismatch,
    #[error("rankings file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One retrieved database item, serialized as `[id, score]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry(pub String, pub f64);

impl RankedEntry {
    pub fn id(&self) -> &str {
        &self.0
    }

    pub fn score(&self) -> f64 {
        self.1
    }
}

/// Database items by descending cosine similarity, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.0.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keeps the first `depth` entries.
    pub fn truncate(&mut self, depth: usize) {
        self.entries.truncate(depth);
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

#[inline]
fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn cosine_from_parts(dot: f64, na: f64, nb: f64) -> f64 {
    // adding 0.0 turns -0.0 into 0.0, so orthogonal rows tie and fall back to id order
    (dot / (na * nb)).clamp(-1.0, 1.0) + 0.0
}

/// `a·b / (‖a‖‖b‖)` accumulated in f64.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(RetrievalError::ZeroVector("a".into()));
    }
    if nb == 0.0 {
        return Err(RetrievalError::ZeroVector("b".into()));
    }
    Ok(cosine_from_parts(dot(a, b), na, nb))
}

/// Database index entry: row position plus its score for the current query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub row: u32,
    pub score: f64,
}

/// A database matrix with precomputed row norms and id tie-break order.
pub struct EmbeddingIndex<'a> {
    matrix: &'a EmbeddingMatrix,
    norms: Vec<f64>,
    /// Position of each row's id in ascending id order.
    id_rank: Vec<u32>,
    positions: HashMap<&'a str, usize>,
}

impl<'a> EmbeddingIndex<'a> {
    pub fn new(matrix: &'a EmbeddingMatrix) -> Result<Self, RetrievalError> {
        let norms: Vec<f64> = (0..matrix.len()).map(|i| norm(matrix.row(i))).collect();
        if let Some(i) = norms.iter().position(|n| *n == 0.0) {
            return Err(RetrievalError::ZeroVector(matrix.ids()[i].clone()));
        }
        let mut order: Vec<usize> = (0..matrix.len()).collect();
        order.sort_unstable_by(|a, b| matrix.ids()[*a].cmp(&matrix.ids()[*b]));
        let mut id_rank = vec![0u32; matrix.len()];
        for (rank, row) in order.into_iter().enumerate() {
            id_rank[row] = rank as u32;
        }
        let positions = matrix
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        Ok(Self {
            matrix,
            norms,
            id_rank,
            positions,
        })
    }

    pub fn matrix(&self) -> &'a EmbeddingMatrix {
        self.matrix
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    /// Cosine similarity of `query` with every row, in row order.
    pub fn scores(&self, query: &[f32]) -> Result<Vec<f64>, RetrievalError> {
        if query.len() != self.matrix.dim() {
            return Err(RetrievalError::DimensionMismatch(
                query.len(),
                self.matrix.dim(),
            ));
        }
        let nq = norm(query);
        if nq == 0.0 {
            return Err(RetrievalError::ZeroVector("query".into()));
        }
        Ok((0..self.matrix.len())
            .map(|i| cosine_from_parts(dot(query, self.matrix.row(i)), nq, self.norms[i]))
            .collect())
    }

    fn compare(&self, a: &Hit, b: &Hit) -> Ordering {
        b.score
            .total_cmp(&a.score)
            .then_with(|| self.id_rank[a.row as usize].cmp(&self.id_rank[b.row as usize]))
    }

    /// Full ranking as row indices, optionally without row `exclude`.
    pub fn rank_rows(
        &self,
        query: &[f32],
        exclude: Option<usize>,
    ) -> Result<Vec<Hit>, RetrievalError> {
        let scores = self.scores(query)?;
        let mut hits: Vec<Hit> = scores
            .into_iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, score)| Hit {
                row: i as u32,
                score,
            })
            .collect();
        if hits.is_empty() {
            return Err(RetrievalError::EmptyDatabase);
        }
        hits.sort_unstable_by(|a, b| self.compare(a, b));
        Ok(hits)
    }

    /// Ranks the whole database; `exclude_self` drops the row whose id equals `query_id`.
    pub fn rank(
        &self,
        query_id: &str,
        query: &[f32],
        exclude_self: bool,
    ) -> Result<RankedList, RetrievalError> {
        let exclude = if exclude_self {
            self.position(query_id)
        } else {
            None
        };
        let hits = self.rank_rows(query, exclude)?;
        Ok(self.to_list(query_id, &hits))
    }

    pub fn to_list(&self, query_id: &str, hits: &[Hit]) -> RankedList {
        RankedList {
            query_id: query_id.to_owned(),
            entries: hits
                .iter()
                .map(|h| RankedEntry(self.matrix.ids()[h.row as usize].clone(), h.score))
                .collect(),
        }
    }
}

pub fn rank_database(
    query_id: &str,
    query: &[f32],
    db: &EmbeddingMatrix,
    exclude_self: bool,
) -> Result<RankedList, RetrievalError> {
    EmbeddingIndex::new(db)?.rank(query_id, query, exclude_self)
}

/// How many top baseline results count as relevant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffRule {
    /// `floor(fraction · database size)`.
    Fraction(f64),
    /// A fixed count, capped at the database size.
    TopK(usize),
}

impl Default for CutoffRule {
    fn default() -> Self {
        CutoffRule::Fraction(DEFAULT_TOP_FRACTION)
    }
}

impl fmt::Display for CutoffRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CutoffRule::Fraction(v) => write!(f, "top fraction {v}"),
            CutoffRule::TopK(k) => write!(f, "top {k}"),
        }
    }
}

pub const DEFAULT_TOP_FRACTION: f64 = 0.05;

impl CutoffRule {
    pub fn apply(&self, n_db: usize) -> Result<usize, RetrievalError> {
        let p = match *self {
            CutoffRule::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(RetrievalError::InvalidRule(format!(
                        "fraction {f} outside (0, 1]"
                    )));
                }
                // the epsilon keeps exact products such as 0.05·100 from flooring down
                ((f * n_db as f64) + 1e-9).floor() as usize
            }
            CutoffRule::TopK(k) => k.min(n_db),
        };
        if p == 0 {
            return Err(RetrievalError::DatabaseTooSmall {
                n: n_db,
                rule: *self,
            });
        }
        Ok(p)
    }
}

/// Pseudo-ground-truth cutoff: `floor(0.05 · n_db)`.
pub fn cutoff(n_db: usize) -> Result<usize, RetrievalError> {
    CutoffRule::default().apply(n_db)
}

/// Relevance judgments for one query, taken from the baseline ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoGroundTruth {
    pub query_id: String,
    /// The baseline's first `cutoff_p` ids, in rank order.
    pub relevant_ids: Vec<String>,
    relevant_set: HashSet<String>,
    /// Baseline cosine score of every database id.
    pub relevance: HashMap<String, f64>,
    /// Baseline scores in baseline rank order.
    pub ideal_scores: Vec<f64>,
    pub cutoff_p: usize,
}

impl PseudoGroundTruth {
    pub fn from_baseline(baseline: &RankedList, rule: CutoffRule) -> Result<Self, RetrievalError> {
        let p = rule.apply(baseline.len())?;
        let relevant_ids: Vec<String> = baseline.ids().take(p).map(str::to_owned).collect();
        Ok(Self {
            query_id: baseline.query_id.clone(),
            relevant_set: relevant_ids.iter().cloned().collect(),
            relevant_ids,
            relevance: baseline
                .entries
                .iter()
                .map(|e| (e.0.clone(), e.1))
                .collect(),
            ideal_scores: baseline.entries.iter().map(|e| e.1).collect(),
            cutoff_p: p,
        })
    }

    pub fn relevant(&self) -> &HashSet<String> {
        &self.relevant_set
    }

    pub fn is_relevant(&self, id: &str) -> bool {
        self.relevant_set.contains(id)
    }
}

/// Pseudo ground truth for every query, in baseline order.
#[derive(Debug, Clone, Default)]
pub struct PseudoGroundTruthSet {
    entries: Vec<PseudoGroundTruth>,
    index: HashMap<String, usize>,
}

impl PseudoGroundTruthSet {
    pub fn get(&self, query_id: &str) -> Option<&PseudoGroundTruth> {
        self.index.get(query_id).map(|i| &self.entries[*i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &PseudoGroundTruth> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Shared cutoff when all queries agree (they do for a consistent baseline).
    pub fn cutoff_p(&self) -> Option<usize> {
        let first = self.entries.first()?.cutoff_p;
        self.entries
            .iter()
            .all(|e| e.cutoff_p == first)
            .then_some(first)
    }
}

/// Takes the top `rule` entries of each baseline ranking as the relevant set.
///
/// All rankings must cover one shared database, each possibly minus its own
/// query id.
pub fn build_pseudo_ground_truth(
    baseline: &[RankedList],
    rule: CutoffRule,
) -> Result<PseudoGroundTruthSet, RetrievalError> {
    if baseline.is_empty() {
        return Err(RetrievalError::NoRankings);
    }
    let universe: HashSet<&str> = baseline.iter().flat_map(|l| l.ids()).collect();
    let mut out = PseudoGroundTruthSet::default();
    for list in baseline {
        let ids: HashSet<&str> = list.ids().collect();
        let expected = universe.len()
            - usize::from(
                universe.contains(list.query_id.as_str()) && !ids.contains(list.query_id.as_str()),
            );
        if ids.len() != list.len() || ids.len() != expected {
            return Err(RetrievalError::InconsistentCoverage(list.query_id.clone()));
        }
        if out.index.contains_key(&list.query_id) {
            return Err(RetrievalError::InconsistentCoverage(list.query_id.clone()));
        }
        out.index.insert(list.query_id.clone(), out.entries.len());
        out.entries
            .push(PseudoGroundTruth::from_baseline(list, rule)?);
    }
    Ok(out)
}

/// Which processed version of the validation set an embedding matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValSource {
    #[serde(rename = "original")]
    OriginalVal,
    #[serde(rename = "anonymized")]
    AnonymizedVal,
}

impl ValSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ValSource::OriginalVal => "original",
            ValSource::AnonymizedVal => "anonymized",
        }
    }
}

impl fmt::Display for ValSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One retrieval scenario: model `model_tag` embedding `query_source` images
/// as queries against a `db_source` database, under anonymization `anon_tag`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub model_tag: String,
    pub query_source: ValSource,
    pub db_source: ValSource,
    pub anon_tag: String,
}

impl ScenarioSpec {
    /// Filesystem-safe name, e.g. `q-original__unadapted__mask_100`.
    pub fn slug(&self) -> String {
        format!(
            "q-{}__d-{}__{}__{}",
            self.query_source, self.db_source, self.model_tag, self.anon_tag
        )
    }
}

impl fmt::Display for ScenarioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "M[{}]({}) -> M[{}]({}) @ {}",
            self.model_tag, self.query_source, self.model_tag, self.db_source, self.anon_tag
        )
    }
}

fn check_same_ids(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<(), RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::IdSetMismatch);
    }
    let ids: HashSet<&str> = a.ids().iter().map(String::as_str).collect();
    if b.ids().iter().all(|id| ids.contains(id.as_str())) {
        Ok(())
    } else {
        Err(RetrievalError::IdSetMismatch)
    }
}

/// Ranks every query row against the database with self-exclusion, in query order.
pub fn rank_all(
    queries: &EmbeddingMatrix,
    db: &EmbeddingMatrix,
) -> Result<Vec<RankedList>, RetrievalError> {
    let index = EmbeddingIndex::new(db)?;
    let rows: Vec<usize> = (0..queries.len()).collect();
    par::map(&rows, |&i| {
        index.rank(&queries.ids()[i], queries.row(i), true)
    })
    .into_iter()
    .collect()
}

pub fn run_scenario(
    spec: &ScenarioSpec,
    embeddings: &HashMap<ValSource, EmbeddingMatrix>,
) -> Result<Vec<RankedList>, RetrievalError> {
    let queries = embeddings
        .get(&spec.query_source)
        .ok_or(RetrievalError::MissingSource(spec.query_source))?;
    let db = embeddings
        .get(&spec.db_source)
        .ok_or(RetrievalError::MissingSource(spec.db_source))?;
    check_same_ids(queries, db)?;
    rank_all(queries, db)
}

pub fn write_rankings(path: impl AsRef<Path>, lists: &[RankedList]) -> Result<(), RetrievalError> {
    let path = path.as_ref();
    let io_err = |source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for list in lists {
        serde_json::to_writer(&mut out, list).map_err(|e| io_err(e.into()))?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn read_rankings(path: impl AsRef<Path>) -> Result<Vec<RankedList>, RetrievalError> {
    let path = path.as_ref();
    let io_err = |source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut lists = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let list: RankedList = serde_json::from_str(&line).map_err(|e| RetrievalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        lists.push(list);
    }
    Ok(lists)
}
