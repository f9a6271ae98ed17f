//! Ranking metrics for frame-level anomaly detection: ROC-AUC (Mann–Whitney
//! form, ties credited 0.5), average precision, and the micro/macro AUC
//! protocols (micro concatenates every group's frames; macro averages each
//! group's own AUC, skipping groups that lack both classes).

use std::collections::BTreeMap;
use std::fmt;

/// Frame scores with binary labels and optional per-frame group identifiers
/// (a group is typically one video or one image category).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub groups: Option<Vec<String>>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, MetricError> {
        Self::build(scores, labels, None)
    }

    pub fn with_groups(
        scores: Vec<f64>,
        labels: Vec<u8>,
        groups: Vec<String>,
    ) -> Result<Self, MetricError> {
        Self::build(scores, labels, Some(groups))
    }

    fn build(
        scores: Vec<f64>,
        labels: Vec<u8>,
        groups: Option<Vec<String>>,
    ) -> Result<Self, MetricError> {
        if scores.len() != labels.len()
            || groups.as_ref().map_or(false, |g| g.len() != scores.len())
        {
            return Err(MetricError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
                groups: groups.as_ref().map(|g| g.len()),
            });
        }
        if let Some(idx) = scores.iter().position(|s| !s.is_finite()) {
            return Err(MetricError::NonFiniteScore { index: idx });
        }
        if let Some(idx) = labels.iter().position(|&l| l > 1) {
            return Err(MetricError::BadLabel {
                index: idx,
                value: labels[idx],
            });
        }
        Ok(ScoredSet {
            scores,
            labels,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Results of the full evaluation protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub auroc: f64,
    pub ap: f64,
    pub micro_auc: f64,
    pub macro_auc: f64,
    /// Per-group AUC in group-id order; degenerate groups excluded.
    pub per_group_auc: Vec<(String, f64)>,
    /// Groups skipped from the macro average for lacking both classes.
    pub skipped_groups: Vec<String>,
}

impl EvalReport {
    /// Structured text with a fixed key order and 6 decimal places.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("auroc {:.6}\n", self.auroc));
        out.push_str(&format!("ap {:.6}\n", self.ap));
        out.push_str(&format!("micro_auc {:.6}\n", self.micro_auc));
        out.push_str(&format!("macro_auc {:.6}\n", self.macro_auc));
        for (group, auc) in &self.per_group_auc {
            out.push_str(&format!("group {group} {auc:.6}\n"));
        }
        for group in &self.skipped_groups {
            out.push_str(&format!("skipped_group {group}\n"));
        }
        out
    }
}

/// Errors from metric computation and score-file parsing.
#[derive(Debug)]
pub enum MetricError {
    LengthMismatch {
        scores: usize,
        labels: usize,
        groups: Option<usize>,
    },
    BadLabel {
        index: usize,
        value: u8,
    },
    NonFiniteScore {
        index: usize,
    },
    /// AUC needs at least one positive and one negative.
    SingleClass {
        positives: usize,
        negatives: usize,
    },
    /// Average precision needs at least one positive.
    NoPositives,
    /// Macro AUC found no group containing both classes.
    NoUsableGroups,
    Empty,
    Parse {
        line: usize,
        message: String,
    },
}

impl fmt::Display for MetricError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricError::LengthMismatch {
                scores,
                labels,
                groups,
            } => match groups {
                Some(g) => write!(
                    f,
                    "scores ({scores}), labels ({labels}) and groups ({g}) differ in length"
                ),
                None => write!(f, "scores ({scores}) and labels ({labels}) differ in length"),
            },
            MetricError::BadLabel { index, value } => {
                write!(f, "label at index {index} is {value}, expected 0 or 1")
            }
            MetricError::NonFiniteScore { index } => {
                write!(f, "score at index {index} is not finite")
            }
            MetricError::SingleClass {
                positives,
                negatives,
            } => write!(
                f,
                "AUC undefined: need both classes, got {positives} positives and {negatives} negatives"
            ),
            MetricError::NoPositives => {
                write!(f, "average precision undefined: no positive labels")
            }
            MetricError::NoUsableGroups => {
                write!(f, "macro AUC undefined: no group contains both classes")
            }
            MetricError::Empty => write!(f, "empty scored set"),
            MetricError::Parse { line, message } => {
                write!(f, "score file line {line}: {message}")
            }
        }
    }
}

impl std::error::Error for MetricError {}

/// ROC-AUC as the Mann–Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counted 0.5. Computed
/// via average ranks in O(n log n); equals the brute-force pairwise count.
pub fn roc_auc(set: &ScoredSet) -> Result<f64, MetricError> {
    if set.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = set.len();
    let p = set.positives();
    let neg = n - p;
    if p == 0 || neg == 0 {
        return Err(MetricError::SingleClass {
            positives: p,
            negatives: neg,
        });
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| set.scores[a].partial_cmp(&set.scores[b]).unwrap());
    let mut ranks = vec![0.0_f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && set.scores[idx[j + 1]] == set.scores[idx[i]] {
            j += 1;
        }
        // tied block shares the average of 1-based ranks i+1 ..= j+1
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }

    let rank_sum_pos: f64 = (0..n).filter(|&k| set.labels[k] == 1).map(|k| ranks[k]).sum();
    let u = rank_sum_pos - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p as f64 * neg as f64))
}

/// Average precision over the score-descending sweep,
/// `AP = sum over positives of (TP_k / k) / P`, with deterministic tie
/// handling by original index order.
pub fn average_precision(set: &ScoredSet) -> Result<f64, MetricError> {
    if set.is_empty() {
        return Err(MetricError::Empty);
    }
    let p = set.positives();
    if p == 0 {
        return Err(MetricError::NoPositives);
    }

    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.sort_by(|&a, &b| {
        set.scores[b]
            .partial_cmp(&set.scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut true_pos = 0usize;
    let mut sum = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        if set.labels[i] == 1 {
            true_pos += 1;
            sum += true_pos as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / p as f64)
}

/// Micro AUC (one AUC over all groups concatenated) and macro AUC (unweighted
/// mean of per-group AUCs, skipping groups without both classes).
#[derive(Debug, Clone, PartialEq)]
pub struct MicroMacroAuc {
    pub micro: f64,
    pub macro_auc: f64,
    /// How many input groups the macro average had to skip.
    pub skipped_groups: usize,
}

pub fn micro_macro_auc(sets: &[ScoredSet]) -> Result<MicroMacroAuc, MetricError> {
    let mut all_scores = Vec::new();
    let mut all_labels = Vec::new();
    for set in sets {
        all_scores.extend_from_slice(&set.scores);
        all_labels.extend_from_slice(&set.labels);
    }
    let combined = ScoredSet::new(all_scores, all_labels)?;
    let micro = roc_auc(&combined)?;

    let mut per_group = Vec::new();
    let mut skipped = 0usize;
    for set in sets {
        match roc_auc(set) {
            Ok(auc) => per_group.push(auc),
            Err(MetricError::SingleClass { .. }) | Err(MetricError::Empty) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if per_group.is_empty() {
        return Err(MetricError::NoUsableGroups);
    }
    let macro_auc = per_group.iter().sum::<f64>() / per_group.len() as f64;
    Ok(MicroMacroAuc {
        micro,
        macro_auc,
        skipped_groups: skipped,
    })
}

/// Full protocol: overall AUROC and AP, micro/macro AUC over the set's
/// groups (one implicit group when none are given).
pub fn evaluate(set: &ScoredSet) -> Result<EvalReport, MetricError> {
    if set.is_empty() {
        return Err(MetricError::Empty);
    }
    let auroc = roc_auc(set)?;
    let ap = average_precision(set)?;

    let mut grouped: BTreeMap<String, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    match &set.groups {
        Some(groups) => {
            for ((&score, &label), group) in
                set.scores.iter().zip(&set.labels).zip(groups)
            {
                let entry = grouped.entry(group.clone()).or_default();
                entry.0.push(score);
                entry.1.push(label);
            }
        }
        None => {
            grouped.insert(
                "all".to_string(),
                (set.scores.clone(), set.labels.clone()),
            );
        }
    }

    let mut per_group_auc = Vec::new();
    let mut skipped_groups = Vec::new();
    for (name, (scores, labels)) in &grouped {
        let subset = ScoredSet::new(scores.clone(), labels.clone())?;
        match roc_auc(&subset) {
            Ok(auc) => per_group_auc.push((name.clone(), auc)),
            Err(MetricError::SingleClass { .. }) => skipped_groups.push(name.clone()),
            Err(e) => return Err(e),
        }
    }
    if per_group_auc.is_empty() {
        return Err(MetricError::NoUsableGroups);
    }
    let macro_auc =
        per_group_auc.iter().map(|(_, a)| a).sum::<f64>() / per_group_auc.len() as f64;

    Ok(EvalReport {
        auroc,
        ap,
        micro_auc: auroc,
        macro_auc,
        per_group_auc,
        skipped_groups,
    })
}

/// Renders one score-file record: `group frame score label`.
pub fn score_line(group: &str, frame: usize, score: f64, label: u8) -> String {
    format!("{group} {frame} {score} {label}\n")
}

/// Parses the score-file format (one `group frame score label` record per
/// line, '#' comments and blank lines ignored).
pub fn parse_score_file(text: &str) -> Result<ScoredSet, MetricError> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(MetricError::Parse {
                line: line_no,
                message: format!("expected 4 fields (group frame score label), got {}", fields.len()),
            });
        }
        fields[1].parse::<usize>().map_err(|e| MetricError::Parse {
            line: line_no,
            message: format!("bad frame index '{}': {e}", fields[1]),
        })?;
        let score: f64 = fields[2].parse().map_err(|e| MetricError::Parse {
            line: line_no,
            message: format!("bad score '{}': {e}", fields[2]),
        })?;
        let label: u8 = match fields[3] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(MetricError::Parse {
                    line: line_no,
                    message: format!("bad label '{other}', expected 0 or 1"),
                })
            }
        };
        groups.push(fields[0].to_string());
        scores.push(score);
        labels.push(label);
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    ScoredSet::with_groups(scores, labels, groups)
}

/// Min-max normalizes scores within each group to [0, 1] (constant groups
/// map to 0), an optional preprocessing step before cross-group pooling.
pub fn min_max_normalize_per_group(set: &ScoredSet) -> ScoredSet {
    let groups = match &set.groups {
        Some(g) => g.clone(),
        None => vec!["all".to_string(); set.len()],
    };
    let mut ranges: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for (score, group) in set.scores.iter().zip(&groups) {
        let entry = ranges
            .entry(group.as_str())
            .or_insert((f64::INFINITY, f64::NEG_INFINITY));
        entry.0 = entry.0.min(*score);
        entry.1 = entry.1.max(*score);
    }
    let scores = set
        .scores
        .iter()
        .zip(&groups)
        .map(|(score, group)| {
            let (lo, hi) = ranges[group.as_str()];
            if hi > lo {
                (score - lo) / (hi - lo)
            } else {
                0.0
            }
        })
        .collect();
    ScoredSet {
        scores,
        labels: set.labels.clone(),
        groups: set.groups.clone(),
    }
}
