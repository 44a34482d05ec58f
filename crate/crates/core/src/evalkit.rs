//! Segmentation metrics against gold boundaries, and the system-rank score
//! used to summarise subjective ranking surveys.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Read;

use serde::Serialize;

use crate::textcore::BoundaryLabels;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prediction has {pred} labels but gold has {gold}")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("ordering has no tie groups")]
    EmptyOrdering,
    #[error("tie groups must partition systems 0..{0} exactly once")]
    NotAPartition(usize),
    #[error("survey has no items")]
    EmptySurvey,
    #[error("system index {0} out of range")]
    NoSuchSystem(usize),
    #[error("survey row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("invalid survey: {0}")]
    Survey(String),
}

/// Boundary-level precision/recall/F1 plus word and sentence accuracy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BoundaryMetrics {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold words reproduced exactly: both delimiters present and no split
    /// inside.
    pub word_accuracy: f64,
    pub exact_match: f64,
}

/// Micro-averaged accumulation over many sentences.
#[derive(Clone, Copy, Debug, Default)]
pub struct MetricsAccumulator {
    tp: u64,
    fp: u64,
    fn_: u64,
    words_correct: u64,
    words_total: u64,
    exact: u64,
    sentences: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsAccumulator {
    pub fn add(&mut self, pred: &BoundaryLabels, gold: &BoundaryLabels) -> Result<(), EvalError> {
        if pred.len() != gold.len() {
            return Err(EvalError::LengthMismatch {
                pred: pred.len(),
                gold: gold.len(),
            });
        }
        let (p, g) = (pred.as_slice(), gold.as_slice());
        for (&a, &b) in p.iter().zip(g) {
            match (a, b) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => {}
            }
        }
        // Words are spans of characters [start, end] inclusive; L = len + 1.
        let chars = g.len() + 1;
        let mut start = 0;
        for end in 0..chars {
            if end + 1 == chars || g[end] {
                let left_ok = start == 0 || p[start - 1];
                let right_ok = end + 1 == chars || p[end];
                let inside_ok = p[start..end].iter().all(|&x| !x);
                self.words_total += 1;
                self.words_correct += u64::from(left_ok && right_ok && inside_ok);
                start = end + 1;
            }
        }
        self.sentences += 1;
        self.exact += u64::from(p == g);
        Ok(())
    }

    pub fn finish(&self) -> BoundaryMetrics {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        BoundaryMetrics {
            true_positives: self.tp,
            false_positives: self.fp,
            false_negatives: self.fn_,
            precision,
            recall,
            f1,
            word_accuracy: ratio(self.words_correct, self.words_total),
            exact_match: ratio(self.exact, self.sentences),
        }
    }
}

pub fn boundary_metrics(pred: &BoundaryLabels, gold: &BoundaryLabels) -> Result<BoundaryMetrics, EvalError> {
    let mut acc = MetricsAccumulator::default();
    acc.add(pred, gold)?;
    Ok(acc.finish())
}

/// Competition ("1224") ranks from ordered tie groups of system indices:
/// each group's rank is one plus the number of systems in better groups.
/// The result is indexed by system.
pub fn ranks_from_ordering(groups: &[Vec<usize>]) -> Result<Vec<u32>, EvalError> {
    if groups.is_empty() {
        return Err(EvalError::EmptyOrdering);
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let mut ranks = vec![0u32; n];
    let mut better = 0u32;
    for group in groups {
        if group.is_empty() {
            return Err(EvalError::NotAPartition(n));
        }
        for &s in group {
            if s >= n || ranks[s] != 0 {
                return Err(EvalError::NotAPartition(n));
            }
            ranks[s] = better + 1;
        }
        better += group.len() as u32;
    }
    Ok(ranks)
}

/// True when `ranks` is a valid competition ranking of `ranks.len()` entries.
pub fn is_competition_ranking(ranks: &[u32]) -> bool {
    let n = ranks.len() as u32;
    ranks.iter().all(|&r| {
        let better = ranks.iter().filter(|&&o| o < r).count() as u32;
        (1..=n).contains(&r) && r == better + 1
    })
}

/// Per-item ranks assigned to each of N systems.
#[derive(Clone, Debug, PartialEq)]
pub struct RankSurvey {
    systems: Vec<String>,
    items: Vec<String>,
    /// `ranks[item][system]`
    ranks: Vec<Vec<u32>>,
}

impl RankSurvey {
    pub fn new(systems: Vec<String>, items: Vec<String>, ranks: Vec<Vec<u32>>) -> Result<Self, EvalError> {
        if items.is_empty() {
            return Err(EvalError::EmptySurvey);
        }
        if ranks.len() != items.len() {
            return Err(EvalError::Survey(format!(
                "{} items but {} rank rows",
                items.len(),
                ranks.len()
            )));
        }
        for (item, row) in items.iter().zip(&ranks) {
            if row.len() != systems.len() {
                return Err(EvalError::Survey(format!(
                    "item {item:?} ranks {} of {} systems",
                    row.len(),
                    systems.len()
                )));
            }
            if !is_competition_ranking(row) {
                return Err(EvalError::Survey(format!(
                    "item {item:?} ranks {row:?} are not a competition ranking"
                )));
            }
        }
        Ok(Self { systems, items, ranks })
    }

    pub fn systems(&self) -> &[String] {
        &self.systems
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn mean_rank(&self, system: usize) -> Result<f64, EvalError> {
        if system >= self.systems.len() {
            return Err(EvalError::NoSuchSystem(system));
        }
        let total: u64 = self.ranks.iter().map(|r| u64::from(r[system])).sum();
        Ok(total as f64 / self.ranks.len() as f64)
    }

    /// Reads a complete survey from CSV with header `item,system,rank`.
    /// Systems and items keep first-appearance order.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, EvalError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header_ok = rdr
            .headers()
            .map(|h| h.iter().collect::<Vec<_>>() == ["item", "system", "rank"])
            .unwrap_or(false);
        if !header_ok {
            return Err(EvalError::Row {
                row: 1,
                reason: "header must be item,system,rank".into(),
            });
        }
        let mut systems: Vec<String> = Vec::new();
        let mut items: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        for (i, record) in rdr.records().enumerate() {
            let row = i + 2;
            let record = record.map_err(|e| EvalError::Row {
                row,
                reason: e.to_string(),
            })?;
            let [item, system, rank] = [0, 1, 2].map(|k| record.get(k).unwrap_or(""));
            if record.len() != 3 || item.is_empty() || system.is_empty() {
                return Err(EvalError::Row {
                    row,
                    reason: "expected three non-empty fields".into(),
                });
            }
            let rank: u32 = rank.parse().map_err(|_| EvalError::Row {
                row,
                reason: format!("rank {rank:?} is not a positive integer"),
            })?;
            let index_of = |list: &mut Vec<String>, name: &str| {
                list.iter().position(|x| x == name).unwrap_or_else(|| {
                    list.push(name.to_string());
                    list.len() - 1
                })
            };
            let it = index_of(&mut items, item);
            let sy = index_of(&mut systems, system);
            if cells.insert((it, sy), rank).is_some() {
                return Err(EvalError::Row {
                    row,
                    reason: format!("duplicate rank for item {item:?}, system {system:?}"),
                });
            }
        }
        let mut ranks = vec![vec![0u32; systems.len()]; items.len()];
        for ((it, sy), r) in cells {
            ranks[it][sy] = r;
        }
        if let Some((it, _)) = ranks.iter().enumerate().find(|(_, r)| r.contains(&0)) {
            return Err(EvalError::Survey(format!(
                "item {:?} is missing a system's rank",
                items[it]
            )));
        }
        Self::new(systems, items, ranks)
    }
}

/// `S = (N + 1 − R) / N` for mean rank `R` over N systems; 1 for a system
/// ranked first everywhere, 1/N for one ranked last everywhere.
pub fn system_rank(survey: &RankSurvey, system: usize) -> Result<f64, EvalError> {
    let n = survey.systems.len() as f64;
    Ok((n + 1.0 - survey.mean_rank(system)?) / n)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SystemScore {
    pub system: String,
    pub mean_rank: f64,
    pub score: f64,
}

/// Per-system scores sorted by S descending (name breaks ties).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurveyReport {
    pub items: usize,
    pub systems: Vec<SystemScore>,
}

pub fn compare_systems(survey: &RankSurvey) -> Result<SurveyReport, EvalError> {
    let mut systems = (0..survey.systems.len())
        .map(|i| {
            Ok(SystemScore {
                system: survey.systems[i].clone(),
                mean_rank: survey.mean_rank(i)?,
                score: system_rank(survey, i)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    systems.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.system.cmp(&b.system)));
    Ok(SurveyReport {
        items: survey.item_count(),
        systems,
    })
}

impl SurveyReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("{} items, {} systems\n", self.items, self.systems.len());
        let width = self.systems.iter().map(|s| s.system.len()).max().unwrap_or(6).max(6);
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>7}", "system", "mean_rank", "S");
        for s in &self.systems {
            let _ = writeln!(out, "{:<width$}  {:>9.4}  {:>7.4}", s.system, s.mean_rank, s.score);
        }
        out
    }

    /// One `system=<name> mean_rank=<R> s=<S>` line per system.
    pub fn to_key_value(&self) -> String {
        self.systems
            .iter()
            .map(|s| format!("system={} mean_rank={} s={}\n", s.system, s.mean_rank, s.score))
            .collect()
    }
}

/// Distinct system names in a set of groups; convenience for callers that
/// rank by name.
pub fn ranks_by_name(groups: &[Vec<&str>]) -> Result<Vec<(String, u32)>, EvalError> {
    let names: Vec<&str> = groups.iter().flatten().copied().collect();
    if names.iter().collect::<HashSet<_>>().len() != names.len() {
        return Err(EvalError::NotAPartition(names.len()));
    }
    let mut next = 0;
    let indexed: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| {
            g.iter()
                .map(|_| {
                    next += 1;
                    next - 1
                })
                .collect()
        })
        .collect();
    let ranks = ranks_from_ordering(&indexed)?;
    Ok(names.into_iter().map(String::from).zip(ranks).collect())
}
