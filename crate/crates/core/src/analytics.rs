//! Leaderboards and preference-reproducibility analysis.
//!
//! Effect ratio (per-topic):
//! `ER = mean_t(adv_target - base_target) / mean_t(adv_origin - base_origin)`.
//! Delta relative improvement (aggregate means):
//! `dRI = (adv_o - base_o) / base_o - (adv_t - base_t) / base_t`.
//! Quantiles interpolate linearly between closest ranks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-topic scores of one approach on one task.
pub type TopicScores = BTreeMap<String, f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub approach: String,
    pub task: String,
    pub mean: f64,
    pub per_topic: TopicScores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub approach: String,
    pub corpus: String,
    pub per_task: BTreeMap<String, f64>,
    /// Unweighted mean over the corpus's tasks; `None` if a task is missing.
    pub macro_avg: Option<f64>,
    pub complete: bool,
}

/// Corpus → entries, best first; incomplete entries last.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Leaderboard {
    pub corpora: BTreeMap<String, Vec<LeaderboardEntry>>,
}

/// Groups task means by corpus. Tasks without a corpus form their own. Ties
/// in `macro_avg` are broken by approach id.
pub fn build_leaderboard(results: &[TaskResult], corpus_map: &BTreeMap<String, String>) -> Result<Leaderboard> {
    let corpus_of = |task: &str| corpus_map.get(task).cloned().unwrap_or_else(|| task.to_string());
    let mut seen = BTreeSet::new();
    let mut tasks: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (task, corpus) in corpus_map {
        tasks.entry(corpus.clone()).or_default().insert(task.clone());
    }
    let mut cells: BTreeMap<(String, String), BTreeMap<String, f64>> = BTreeMap::new();
    for r in results {
        if !seen.insert((r.approach.clone(), r.task.clone())) {
            return Err(Error::Analysis(format!(
                "duplicate evaluation of `{}` on `{}`",
                r.approach, r.task
            )));
        }
        let corpus = corpus_of(&r.task);
        tasks.entry(corpus.clone()).or_default().insert(r.task.clone());
        cells
            .entry((corpus, r.approach.clone()))
            .or_default()
            .insert(r.task.clone(), r.mean);
    }
    let mut board = Leaderboard::default();
    for ((corpus, approach), per_task) in cells {
        let wanted = &tasks[&corpus];
        let complete = wanted.iter().all(|t| per_task.contains_key(t));
        let macro_avg = complete.then(|| per_task.values().sum::<f64>() / per_task.len() as f64);
        board.corpora.entry(corpus.clone()).or_default().push(LeaderboardEntry {
            approach,
            corpus,
            per_task,
            macro_avg,
            complete,
        });
    }
    for entries in board.corpora.values_mut() {
        entries.sort_by(|a, b| match (a.macro_avg, b.macro_avg) {
            (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.approach.cmp(&b.approach)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.approach.cmp(&b.approach),
        });
    }
    Ok(board)
}

/// An observed preference on the origin task: `advanced` scored higher.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PreferencePair {
    pub baseline: String,
    pub advanced: String,
    pub origin_task: String,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean over topics of `advanced - baseline`, on topics both were scored on.
fn mean_improvement(baseline: &TopicScores, advanced: &TopicScores) -> Result<f64> {
    mean(
        baseline
            .iter()
            .filter_map(|(t, b)| advanced.get(t).map(|a| a - b)),
    )
    .ok_or_else(|| Error::Analysis("no topics shared by baseline and advanced".into()))
}

pub fn effect_ratio(
    origin_baseline: &TopicScores,
    origin_advanced: &TopicScores,
    target_baseline: &TopicScores,
    target_advanced: &TopicScores,
) -> Result<f64> {
    let origin = mean_improvement(origin_baseline, origin_advanced)?;
    if origin == 0.0 {
        return Err(Error::Analysis("no improvement on the origin task".into()));
    }
    Ok(mean_improvement(target_baseline, target_advanced)? / origin)
}

/// `None` when either baseline mean is zero.
pub fn delta_relative_improvement(origin: (f64, f64), target: (f64, f64)) -> Option<f64> {
    let (ob, oa) = origin;
    let (tb, ta) = target;
    if ob == 0.0 || tb == 0.0 {
        return None;
    }
    Some((oa - ob) / ob - (ta - tb) / tb)
}

/// Linear interpolation between closest ranks of `sorted` at `p` in [0, 1].
pub fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Quantiles {
            q25: quantile(&v, 0.25)?,
            q50: quantile(&v, 0.5)?,
            q75: quantile(&v, 0.75)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproResult {
    pub pair: PreferencePair,
    pub target_task: String,
    pub effect_ratio: f64,
    pub delta_relative_improvement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproReport {
    pub origin_task: String,
    pub target_task: String,
    pub pair_count: usize,
    /// Percentage of pairs with an effect ratio above 0.
    pub success_rate: f64,
    pub effect_ratio: Quantiles,
    /// `None` if no pair has a defined value.
    pub delta_relative_improvement: Option<Quantiles>,
    pub results: Vec<ReproResult>,
    pub notices: Vec<String>,
}

/// Index of task results by `(approach, task)`.
pub type ResultIndex = BTreeMap<(String, String), TaskResult>;

pub fn index_results(results: &[TaskResult]) -> ResultIndex {
    results
        .iter()
        .map(|r| ((r.approach.clone(), r.task.clone()), r.clone()))
        .collect()
}

/// All pairs of approaches evaluated on `origin_task` whose means differ;
/// the lower one is the baseline.
pub fn preference_pairs(origin_task: &str, results: &ResultIndex) -> Vec<PreferencePair> {
    let on_origin: Vec<&TaskResult> = results.values().filter(|r| r.task == origin_task).collect();
    let mut pairs = Vec::new();
    for (i, a) in on_origin.iter().enumerate() {
        for b in &on_origin[i + 1..] {
            let (base, adv) = match a.mean.total_cmp(&b.mean) {
                std::cmp::Ordering::Less => (a, b),
                std::cmp::Ordering::Greater => (b, a),
                std::cmp::Ordering::Equal => continue,
            };
            pairs.push(PreferencePair {
                baseline: base.approach.clone(),
                advanced: adv.approach.clone(),
                origin_task: origin_task.to_string(),
            });
        }
    }
    pairs.sort();
    pairs
}

pub fn repro_report(pairs: &[PreferencePair], origin_task: &str, target_task: &str, results: &ResultIndex) -> Result<ReproReport> {
    let get = |approach: &str, task: &str| results.get(&(approach.to_string(), task.to_string()));
    let mut out = Vec::new();
    let mut notices = Vec::new();
    for pair in pairs {
        if pair.origin_task != origin_task {
            return Err(Error::Analysis(format!(
                "pair {} < {} was observed on `{}`, not `{origin_task}`",
                pair.baseline, pair.advanced, pair.origin_task
            )));
        }
        let (Some(ob), Some(oa)) = (get(&pair.baseline, origin_task), get(&pair.advanced, origin_task)) else {
            return Err(Error::Analysis(format!(
                "pair {} < {} is not evaluated on the origin task",
                pair.baseline, pair.advanced
            )));
        };
        let (Some(tb), Some(ta)) = (get(&pair.baseline, target_task), get(&pair.advanced, target_task)) else {
            notices.push(format!(
                "pair {} < {} excluded: not evaluated on {target_task}",
                pair.baseline, pair.advanced
            ));
            continue;
        };
        if oa.mean <= ob.mean {
            return Err(Error::Analysis(format!(
                "`{}` does not improve over `{}` on `{origin_task}`",
                pair.advanced, pair.baseline
            )));
        }
        out.push(ReproResult {
            pair: pair.clone(),
            target_task: target_task.to_string(),
            effect_ratio: effect_ratio(&ob.per_topic, &oa.per_topic, &tb.per_topic, &ta.per_topic)?,
            delta_relative_improvement: delta_relative_improvement((ob.mean, oa.mean), (tb.mean, ta.mean)),
        });
    }
    if out.is_empty() {
        return Err(Error::Analysis(format!(
            "no preference pair from `{origin_task}` is evaluated on `{target_task}`"
        )));
    }
    let ers: Vec<f64> = out.iter().map(|r| r.effect_ratio).collect();
    let dris: Vec<f64> = out.iter().filter_map(|r| r.delta_relative_improvement).collect();
    if dris.len() < out.len() {
        notices.push(format!(
            "{} pair(s) with a zero baseline mean have no delta relative improvement",
            out.len() - dris.len()
        ));
    }
    Ok(ReproReport {
        origin_task: origin_task.to_string(),
        target_task: target_task.to_string(),
        pair_count: out.len(),
        success_rate: 100.0 * ers.iter().filter(|&&e| e > 0.0).count() as f64 / ers.len() as f64,
        effect_ratio: Quantiles::of(&ers).expect("non-empty"),
        delta_relative_improvement: Quantiles::of(&dris),
        results: out,
        notices,
    })
}

/// `repro_report.json`: target task → report.
pub fn repro_json(reports: &[ReproReport]) -> Result<String> {
    let map: BTreeMap<&str, &ReproReport> = reports.iter().map(|r| (r.target_task.as_str(), r)).collect();
    Ok(serde_json::to_string_pretty(&map)? + "\n")
}

pub fn leaderboard_json(board: &Leaderboard) -> Result<String> {
    Ok(serde_json::to_string_pretty(board)? + "\n")
}

pub fn render_leaderboard(board: &Leaderboard, measure: &str) -> String {
    let mut out = String::new();
    for (corpus, entries) in &board.corpora {
        let tasks: BTreeSet<&String> = entries.iter().flat_map(|e| e.per_task.keys()).collect();
        let _ = writeln!(out, "{corpus} ({measure})");
        let mut header = format!("  {:<24}", "approach");
        for t in &tasks {
            let _ = write!(header, " {:>12}", t);
        }
        let _ = writeln!(out, "{header} {:>10}", "macro avg");
        for e in entries {
            let _ = write!(out, "  {:<24}", e.approach);
            for t in &tasks {
                match e.per_task.get(*t) {
                    Some(v) => {
                        let _ = write!(out, " {:>12.4}", v);
                    }
                    None => {
                        let _ = write!(out, " {:>12}", "-");
                    }
                }
            }
            match e.macro_avg {
                Some(m) => {
                    let _ = writeln!(out, " {m:>10.4}");
                }
                None => {
                    let _ = writeln!(out, " {:>10}", "incomplete");
                }
            }
        }
    }
    out
}

pub fn render_repro(reports: &[ReproReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>6} {:>8}   {:>8} {:>8} {:>8}   {:>8} {:>8} {:>8}",
        "target", "pairs", "success", "ER 25%", "ER 50%", "ER 75%", "dRI 25%", "dRI 50%", "dRI 75%"
    );
    for r in reports {
        let q = r.effect_ratio;
        let d = r
            .delta_relative_improvement
            .map(|d| format!("{:>8.3} {:>8.3} {:>8.3}", d.q25, d.q50, d.q75))
            .unwrap_or_else(|| format!("{:>8} {:>8} {:>8}", "-", "-", "-"));
        let _ = writeln!(
            out,
            "{:<20} {:>6} {:>7.1}%   {:>8.3} {:>8.3} {:>8.3}   {d}",
            r.target_task, r.pair_count, r.success_rate, q.q25, q.q50, q.q75
        );
    }
    out
}
