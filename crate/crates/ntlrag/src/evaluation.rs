//! Inter-rater agreement and label-preference statistics over rating files.
//!
//! Ratings arrive as CSV rows (`rater_id,item_id,label_kind,score,expert`)
//! on a 3-point ordinal scale: 3 useful, 2 neutral, 1 not useful. From them
//! this module computes Krippendorff's alpha in its coincidence-matrix form
//! (nominal, ordinal, or interval distance) and narrative-versus-keyword
//! preference measures, and renders a per-dataset report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which kind of topic label a rating refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Narrative,
    Keywords,
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelKind::Narrative => "narrative",
            LabelKind::Keywords => "keywords",
        })
    }
}

impl FromStr for LabelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "narrative" => Ok(LabelKind::Narrative),
            "keywords" => Ok(LabelKind::Keywords),
            other => Err(format!("unknown label kind `{other}` (expected narrative or keywords)")),
        }
    }
}

/// One rater's score for one item's label of one kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater_id: String,
    pub item_id: String,
    pub label_kind: LabelKind,
    pub score: u8,
    pub expert: bool,
}

/// Raters by items score grid with missing cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReliabilityMatrix {
    raters: Vec<String>,
    items: Vec<String>,
    cells: Vec<Option<u8>>,
}

impl ReliabilityMatrix {
    /// Grid over the records of one label kind. Raters and items appear in
    /// sorted order; a repeated (rater, item) cell keeps the later record.
    pub fn from_records(records: &[RatingRecord], kind: LabelKind) -> Self {
        let mut scores: BTreeMap<(&str, &str), u8> = BTreeMap::new();
        for r in records.iter().filter(|r| r.label_kind == kind) {
            if let Some(old) = scores.insert((&r.rater_id, &r.item_id), r.score) {
                if old != r.score {
                    log::warn!(
                        "duplicate rating for ({}, {}, {kind}); keeping the later score {}",
                        r.rater_id,
                        r.item_id,
                        r.score
                    );
                }
            }
        }
        let raters: Vec<String> =
            scores.keys().map(|(r, _)| r.to_string()).collect::<BTreeSet<_>>().into_iter().collect();
        let items: Vec<String> =
            scores.keys().map(|(_, i)| i.to_string()).collect::<BTreeSet<_>>().into_iter().collect();
        let mut cells = vec![None; raters.len() * items.len()];
        for ((rater, item), score) in scores {
            let r = raters.iter().position(|x| x == rater).expect("rater indexed");
            let i = items.iter().position(|x| x == item).expect("item indexed");
            cells[r * items.len() + i] = Some(score);
        }
        Self { raters, items, cells }
    }

    pub fn n_raters(&self) -> usize {
        self.raters.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn raters(&self) -> &[String] {
        &self.raters
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn get(&self, rater: usize, item: usize) -> Option<u8> {
        self.cells[rater * self.items.len() + item]
    }

    /// Scores per item, keeping only items at least two raters covered.
    fn pairable_units(&self) -> Vec<Vec<u8>> {
        (0..self.items.len())
            .filter_map(|i| {
                let values: Vec<u8> =
                    (0..self.raters.len()).filter_map(|r| self.get(r, i)).collect();
                (values.len() >= 2).then_some(values)
            })
            .collect()
    }
}

/// Distance function used between rating categories.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMetric {
    Nominal,
    /// Default; the rating scale is ordered but not equidistant.
    #[default]
    Ordinal,
    Interval,
}

impl fmt::Display for AlphaMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlphaMetric::Nominal => "nominal",
            AlphaMetric::Ordinal => "ordinal",
            AlphaMetric::Interval => "interval",
        })
    }
}

impl FromStr for AlphaMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nominal" => Ok(AlphaMetric::Nominal),
            "ordinal" => Ok(AlphaMetric::Ordinal),
            "interval" => Ok(AlphaMetric::Interval),
            other => Err(format!("unknown metric `{other}` (expected nominal, ordinal, or interval)")),
        }
    }
}

/// Agreement coefficient plus the degenerate-input flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    /// In [-1, 1]: 1 perfect agreement, 0 none, negative systematic
    /// disagreement.
    pub value: f64,
    /// True when every pairable rating was identical, making expected
    /// disagreement zero; the value is then 1.0 by convention.
    pub zero_expected_disagreement: bool,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: String, column: String },
    #[error("{path} line {line}: {problem}")]
    BadField { path: String, line: u64, problem: String },
    #[error("no item has two or more ratings; agreement is undefined")]
    NoPairableRatings,
    #[error("no (rater, item) pair has both a narrative and a keywords rating")]
    NoPairedComparisons,
}

/// Krippendorff's alpha over the matrix, `1 - D_o / D_e` in the
/// coincidence-matrix form. Items with fewer than two ratings are excluded;
/// missing cells never pair.
pub fn krippendorff_alpha(
    matrix: &ReliabilityMatrix,
    metric: AlphaMetric,
) -> Result<AlphaEstimate, EvalError> {
    let units = matrix.pairable_units();
    if units.is_empty() {
        return Err(EvalError::NoPairableRatings);
    }
    let categories: Vec<u8> = units
        .iter()
        .flatten()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<u8, usize> = categories.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let m = categories.len();

    let mut coincidence = vec![0.0f64; m * m];
    for values in &units {
        let weight = 1.0 / (values.len() - 1) as f64;
        for (a, &va) in values.iter().enumerate() {
            for (b, &vb) in values.iter().enumerate() {
                if a != b {
                    coincidence[index[&va] * m + index[&vb]] += weight;
                }
            }
        }
    }
    let marginals: Vec<f64> = (0..m).map(|c| (0..m).map(|k| coincidence[c * m + k]).sum()).collect();
    let n: f64 = marginals.iter().sum();

    let delta2 = |c: usize, k: usize| -> f64 {
        match metric {
            AlphaMetric::Nominal => {
                if c == k {
                    0.0
                } else {
                    1.0
                }
            }
            AlphaMetric::Interval => {
                let d = f64::from(categories[c]) - f64::from(categories[k]);
                d * d
            }
            AlphaMetric::Ordinal => {
                let (lo, hi) = (c.min(k), c.max(k));
                let between: f64 = marginals[lo..=hi].iter().sum();
                let s = between - (marginals[c] + marginals[k]) / 2.0;
                s * s
            }
        }
    };

    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..m {
        for k in (c + 1)..m {
            observed += coincidence[c * m + k] * delta2(c, k);
            expected += marginals[c] * marginals[k] * delta2(c, k);
        }
    }
    if expected == 0.0 {
        return Ok(AlphaEstimate { value: 1.0, zero_expected_disagreement: true });
    }
    Ok(AlphaEstimate {
        value: 1.0 - (n - 1.0) * observed / expected,
        zero_expected_disagreement: false,
    })
}

/// Narrative-versus-keywords comparison measures.
///
/// The headline percentages compare scores per (rater, item) pair; the
/// `item_*` variants first average each item's scores per kind and compare
/// the averages. Both are reported because aggregated rating data rarely
/// states which level a percentage was computed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceStats {
    pub mean_narrative: f64,
    pub mean_keywords: f64,
    pub pair_count: usize,
    pub pair_equal: usize,
    pub pair_narrative_higher: usize,
    pub pair_keyword_higher: usize,
    /// Percent of pairs where the narrative scored the same or higher.
    pub same_or_higher_pct: f64,
    /// Percent of pairs where the narrative scored strictly higher.
    pub strictly_preferred_pct: f64,
    pub item_count: usize,
    pub item_same_or_higher_pct: f64,
    pub item_strictly_preferred_pct: f64,
    /// Items whose narrative got the top score from at least one rater.
    pub items_with_top_narrative_rating: usize,
    /// Items whose keyword label got the top score from at least one rater.
    pub items_with_top_keyword_rating: usize,
}

/// Top score on the rating scale.
pub const TOP_SCORE: u8 = 3;

pub fn preference_stats(ratings: &[RatingRecord]) -> Result<PreferenceStats, EvalError> {
    let mut narrative: BTreeMap<(&str, &str), u8> = BTreeMap::new();
    let mut keywords: BTreeMap<(&str, &str), u8> = BTreeMap::new();
    for r in ratings {
        let map = match r.label_kind {
            LabelKind::Narrative => &mut narrative,
            LabelKind::Keywords => &mut keywords,
        };
        map.insert((&r.rater_id, &r.item_id), r.score);
    }
    let mean = |scores: &BTreeMap<(&str, &str), u8>| {
        if scores.is_empty() {
            f64::NAN
        } else {
            scores.values().map(|&s| f64::from(s)).sum::<f64>() / scores.len() as f64
        }
    };
    let mean_narrative = mean(&narrative);
    let mean_keywords = mean(&keywords);

    let mut pair_equal = 0usize;
    let mut pair_narrative_higher = 0usize;
    let mut pair_keyword_higher = 0usize;
    let mut per_item: BTreeMap<&str, (Vec<u8>, Vec<u8>)> = BTreeMap::new();
    for (&(rater, item), &ns) in &narrative {
        let Some(&ks) = keywords.get(&(rater, item)) else { continue };
        match ns.cmp(&ks) {
            std::cmp::Ordering::Greater => pair_narrative_higher += 1,
            std::cmp::Ordering::Equal => pair_equal += 1,
            std::cmp::Ordering::Less => pair_keyword_higher += 1,
        }
        let entry = per_item.entry(item).or_default();
        entry.0.push(ns);
        entry.1.push(ks);
    }
    let pair_count = pair_equal + pair_narrative_higher + pair_keyword_higher;
    if pair_count == 0 {
        return Err(EvalError::NoPairedComparisons);
    }
    let pct = |num: usize, den: usize| 100.0 * num as f64 / den as f64;

    let mut item_same_or_higher = 0usize;
    let mut item_strict = 0usize;
    for (ns, ks) in per_item.values() {
        let avg = |v: &[u8]| v.iter().map(|&s| f64::from(s)).sum::<f64>() / v.len() as f64;
        let (an, ak) = (avg(ns), avg(ks));
        if an >= ak {
            item_same_or_higher += 1;
        }
        if an > ak {
            item_strict += 1;
        }
    }
    let item_count = per_item.len();

    let top_items = |scores: &BTreeMap<(&str, &str), u8>| {
        scores
            .iter()
            .filter(|(_, &s)| s >= TOP_SCORE)
            .map(|(&(_, item), _)| item)
            .collect::<BTreeSet<_>>()
            .len()
    };

    Ok(PreferenceStats {
        mean_narrative,
        mean_keywords,
        pair_count,
        pair_equal,
        pair_narrative_higher,
        pair_keyword_higher,
        same_or_higher_pct: pct(pair_equal + pair_narrative_higher, pair_count),
        strictly_preferred_pct: pct(pair_narrative_higher, pair_count),
        item_count,
        item_same_or_higher_pct: pct(item_same_or_higher, item_count),
        item_strictly_preferred_pct: pct(item_strict, item_count),
        items_with_top_narrative_rating: top_items(&narrative),
        items_with_top_keyword_rating: top_items(&keywords),
    })
}

/// Partition records into (experts, non-experts), preserving every record.
pub fn split_by_expertise(ratings: &[RatingRecord]) -> (Vec<RatingRecord>, Vec<RatingRecord>) {
    ratings.iter().cloned().partition(|r| r.expert)
}

const CSV_COLUMNS: [&str; 5] = ["rater_id", "item_id", "label_kind", "score", "expert"];

/// Parse a rating CSV with header `rater_id,item_id,label_kind,score,expert`.
pub fn read_ratings_csv(path: &Path) -> Result<Vec<RatingRecord>, EvalError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| EvalError::Csv { path: display.clone(), source })?;
    let headers = reader
        .headers()
        .map_err(|source| EvalError::Csv { path: display.clone(), source })?
        .clone();
    let mut positions = [0usize; 5];
    for (slot, column) in positions.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers.iter().position(|h| h == column).ok_or_else(|| {
            EvalError::MissingColumn { path: display.clone(), column: column.to_string() }
        })?;
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|source| EvalError::Csv { path: display.clone(), source })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |idx: usize| row.get(positions[idx]).unwrap_or("");
        let bad = |problem: String| EvalError::BadField { path: display.clone(), line, problem };
        let score: u8 = field(3)
            .parse()
            .map_err(|_| bad(format!("score `{}` is not an integer", field(3))))?;
        if !(1..=3).contains(&score) {
            return Err(bad(format!("score {score} outside the 1..=3 scale")));
        }
        let expert = match field(4).to_ascii_lowercase().as_str() {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(bad(format!("expert flag `{other}` is not true/false"))),
        };
        records.push(RatingRecord {
            rater_id: field(0).to_string(),
            item_id: field(1).to_string(),
            label_kind: field(2).parse().map_err(bad)?,
            score,
            expert,
        });
    }
    Ok(records)
}

pub fn write_ratings_csv(path: &Path, records: &[RatingRecord]) -> Result<(), EvalError> {
    let display = path.display().to_string();
    let mut writer =
        csv::Writer::from_path(path).map_err(|source| EvalError::Csv { path: display.clone(), source })?;
    writer
        .write_record(CSV_COLUMNS)
        .map_err(|source| EvalError::Csv { path: display.clone(), source })?;
    for r in records {
        writer
            .write_record([
                r.rater_id.as_str(),
                r.item_id.as_str(),
                &r.label_kind.to_string(),
                &r.score.to_string(),
                if r.expert { "true" } else { "false" },
            ])
            .map_err(|source| EvalError::Csv { path: display.clone(), source })?;
    }
    writer.flush().map_err(|source| EvalError::Io { path: display, source })?;
    Ok(())
}

/// Alpha for one slice of the data, or the reason it is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<AlphaEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undefined: Option<String>,
    pub raters: usize,
    pub items: usize,
}

impl AlphaReport {
    fn over(records: &[RatingRecord], kind: LabelKind, metric: AlphaMetric) -> Self {
        let matrix = ReliabilityMatrix::from_records(records, kind);
        let (raters, items) = (matrix.n_raters(), matrix.n_items());
        if raters < 2 {
            return Self {
                alpha: None,
                undefined: Some("fewer than two raters".into()),
                raters,
                items,
            };
        }
        match krippendorff_alpha(&matrix, metric) {
            Ok(alpha) => Self { alpha: Some(alpha), undefined: None, raters, items },
            Err(e) => Self { alpha: None, undefined: Some(e.to_string()), raters, items },
        }
    }
}

/// Every computed statistic for one rating file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEval {
    pub name: String,
    pub metric: AlphaMetric,
    pub records: usize,
    pub narrative: AlphaReport,
    pub keywords: AlphaReport,
    pub expert_narrative: AlphaReport,
    pub non_expert_narrative: AlphaReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preference: Option<PreferenceStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preference_undefined: Option<String>,
}

/// Compute the full per-dataset statistics block.
pub fn evaluate_dataset(name: &str, records: &[RatingRecord], metric: AlphaMetric) -> DatasetEval {
    let (experts, non_experts) = split_by_expertise(records);
    let (preference, preference_undefined) = match preference_stats(records) {
        Ok(stats) => (Some(stats), None),
        Err(e) => (None, Some(e.to_string())),
    };
    DatasetEval {
        name: name.to_string(),
        metric,
        records: records.len(),
        narrative: AlphaReport::over(records, LabelKind::Narrative, metric),
        keywords: AlphaReport::over(records, LabelKind::Keywords, metric),
        expert_narrative: AlphaReport::over(&experts, LabelKind::Narrative, metric),
        non_expert_narrative: AlphaReport::over(&non_experts, LabelKind::Narrative, metric),
        preference,
        preference_undefined,
    }
}

/// Plain-text table over dataset evaluations: one row per dataset, one
/// column per agreement slice.
pub fn render_eval_table(datasets: &[DatasetEval]) -> String {
    let cell = |report: &AlphaReport| match &report.alpha {
        Some(a) => format!("{:.3}", a.value),
        None => "undef".to_string(),
    };
    let mut rows: Vec<[String; 7]> = vec![[
        "dataset".into(),
        "metric".into(),
        "narrative".into(),
        "keywords".into(),
        "expert".into(),
        "non-expert".into(),
        "pref same/higher %".into(),
    ]];
    for d in datasets {
        rows.push([
            d.name.clone(),
            d.metric.to_string(),
            cell(&d.narrative),
            cell(&d.keywords),
            cell(&d.expert_narrative),
            cell(&d.non_expert_narrative),
            d.preference
                .as_ref()
                .map(|p| format!("{:.2}", p.same_or_higher_pct))
                .unwrap_or_else(|| "undef".into()),
        ]);
    }
    let widths: Vec<usize> = (0..7)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> =
            row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}
