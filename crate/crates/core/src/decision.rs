//! Test-time decision rules.
//!
//! APAC scores class `c` by the mean over `M` virtual samples of the 64-bit
//! log-softmax component `c`; its argmax equals the argmax of the product of
//! the softmax outputs. Virtual sample `ℓ` of test sample `s` draws its `Θ`
//! from stream `(DECISION_THETA, s, ℓ)`, so the draws for `M` are a prefix of
//! the draws for any larger `M`. The test input itself is never fed forward.
//!
//! In class-distinctive mode each distinct deformation set is evaluated on
//! the same `(s, ℓ)` streams and class `c` reads its score from the set
//! assigned to it, for `N_d·M` forward passes in total.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::Image;
use crate::dataio::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::rng::{domain, RngStream};
use crate::sampler::{self, DeformSpec};

/// Virtual samples evaluated together before being folded into the running
/// sums.
const BLOCK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    ApacLogMean,
    SoftmaxSum,
    NonApac,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::ApacLogMean, Rule::SoftmaxSum, Rule::NonApac];
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::ApacLogMean => "apac_log_mean",
            Rule::SoftmaxSum => "softmax_sum",
            Rule::NonApac => "non_apac",
        })
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL
            .into_iter()
            .find(|r| r.to_string() == s)
            .ok_or_else(|| Error::invalid(format!("unknown decision rule `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    pub rule: Rule,
    pub m: usize,
    /// Required by the sampling rules, ignored by `non_apac`.
    pub deform: Option<DeformSpec>,
    pub seed: u64,
}

impl DecisionConfig {
    pub fn non_apac() -> Self {
        Self {
            rule: Rule::NonApac,
            m: 1,
            deform: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rule == Rule::NonApac {
            return Ok(());
        }
        if self.m == 0 {
            return Err(Error::invalid("M must be at least 1"));
        }
        match &self.deform {
            None => Err(Error::invalid(format!("rule {} needs a deformation spec", self.rule))),
            Some(d) => d.validate(),
        }
    }

    fn spec(&self) -> Result<&DeformSpec> {
        self.validate()?;
        self.deform
            .as_ref()
            .ok_or_else(|| Error::invalid("missing deformation spec"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassScores {
    pub scores: Vec<f64>,
    pub predicted: usize,
    /// Classes by descending score; ties keep the lower index first.
    pub ranking: Vec<usize>,
    pub m_used: usize,
    /// Forward passes spent on deformed inputs.
    pub virtual_samples: usize,
}

impl ClassScores {
    pub fn from_scores(scores: Vec<f64>, m_used: usize, virtual_samples: usize) -> Self {
        let ranking = rank(&scores);
        Self {
            predicted: ranking[0],
            scores,
            ranking,
            m_used,
            virtual_samples,
        }
    }

    /// 1-based position of `class` in the ranking.
    pub fn rank_of(&self, class: usize) -> usize {
        self.ranking.iter().position(|&c| c == class).map_or(usize::MAX, |p| p + 1)
    }

    pub fn in_top(&self, class: usize, k: usize) -> bool {
        self.ranking.iter().take(k).any(|&c| c == class)
    }
}

/// Stable descending order; NaN sorts last.
pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (scores[a], scores[b]);
        match (x.is_nan(), y.is_nan()) {
            (true, true) => std::cmp::Ordering::Equal,
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            _ => y.partial_cmp(&x).unwrap(),
        }
    });
    order
}

/// Running per-class sums over virtual samples in stream order.
#[derive(Clone, Debug, PartialEq)]
pub struct ApacAccumulator {
    sums: Vec<f64>,
    count: usize,
}

impl ApacAccumulator {
    pub fn new(classes: usize) -> Self {
        Self {
            sums: vec![0.0; classes],
            count: 0,
        }
    }

    pub fn push(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.sums.len());
        for (s, v) in self.sums.iter_mut().zip(values) {
            *s += v;
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn means(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sums.iter().map(|s| s / n).collect()
    }
}

/// Applies a rule to per-virtual-sample 64-bit log-probability rows, in row
/// order. `non_apac` takes exactly one row.
pub fn combine(rule: Rule, log_prob_rows: &[Vec<f64>]) -> Result<ClassScores> {
    let first = log_prob_rows.first().ok_or_else(|| Error::invalid("no score rows"))?;
    if log_prob_rows.iter().any(|r| r.len() != first.len()) || first.is_empty() {
        return Err(Error::shape("combine", "score rows differ in length"));
    }
    let m = log_prob_rows.len();
    let mut acc = ApacAccumulator::new(first.len());
    match rule {
        Rule::NonApac if m != 1 => return Err(Error::invalid("non_apac combines exactly one row")),
        Rule::NonApac => return Ok(ClassScores::from_scores(first.clone(), 1, 0)),
        Rule::ApacLogMean => log_prob_rows.iter().for_each(|r| acc.push(r)),
        Rule::SoftmaxSum => log_prob_rows
            .iter()
            .for_each(|r| acc.push(&r.iter().map(|v| v.exp()).collect::<Vec<_>>())),
    }
    Ok(ClassScores::from_scores(acc.means(), m, m))
}

pub fn non_apac_predict(net: &Network, x: &Image) -> Result<ClassScores> {
    let cache = net.forward_cache(&x.to_tensor())?;
    Ok(ClassScores::from_scores(cache.log_probs().to_vec(), 1, 0))
}

/// 64-bit log-softmax of every distinct set's deformation of `x` for
/// virtual sample `ell`.
fn virtual_log_probs(
    net: &Network,
    x: &Image,
    spec: &DeformSpec,
    sets: &[usize],
    seed: u64,
    sample_id: u64,
    ell: u64,
) -> Result<Vec<Vec<f64>>> {
    sets.iter()
        .map(|&s| {
            let set = &spec.sets[s];
            let mut rng = RngStream::derive(seed, domain::DECISION_THETA, &[sample_id, ell]);
            let theta = sampler::sample_from_set(set, &mut rng);
            let img = set.apply(&theta, x)?;
            Ok(net.forward_cache(&img.to_tensor())?.log_probs().to_vec())
        })
        .collect()
}

/// Scores for every `M` in `m_list` (ascending) from one pass over the
/// virtual samples. Sampling rules only.
pub fn sweep_predict(
    net: &Network,
    x: &Image,
    sample_id: u64,
    cfg: &DecisionConfig,
    m_list: &[usize],
) -> Result<Vec<ClassScores>> {
    if cfg.rule == Rule::NonApac {
        let s = non_apac_predict(net, x)?;
        return Ok(vec![s; m_list.len()]);
    }
    let spec = cfg.spec()?;
    if m_list.is_empty() || m_list[0] == 0 || m_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("M list must be strictly ascending and start at 1 or more"));
    }
    let classes = net.class_count();
    // Column of `sets` each class reads its score from.
    let (sets, class_col): (Vec<usize>, Vec<usize>) = match &spec.class_sets {
        None => (vec![0], vec![0; classes]),
        Some(cs) => {
            if cs.len() < classes {
                return Err(Error::invalid(format!(
                    "class-distinctive spec covers {} of {classes} classes",
                    cs.len()
                )));
            }
            let mut sets: Vec<usize> = cs[..classes].to_vec();
            sets.sort_unstable();
            sets.dedup();
            let cols = cs[..classes].iter().map(|s| sets.binary_search(s).unwrap()).collect();
            (sets, cols)
        }
    };
    let mut accs = vec![ApacAccumulator::new(classes); sets.len()];
    let max_m = *m_list.last().unwrap();
    let mut out = Vec::with_capacity(m_list.len());
    let mut want = m_list.iter().peekable();
    let mut ell = 0usize;
    while ell < max_m {
        let end = (ell + BLOCK).min(max_m);
        let block: Vec<Vec<Vec<f64>>> = (ell..end)
            .into_par_iter()
            .map(|l| virtual_log_probs(net, x, spec, &sets, cfg.seed, sample_id, l as u64))
            .collect::<Result<_>>()?;
        for per_set in block {
            for (acc, lp) in accs.iter_mut().zip(per_set) {
                match cfg.rule {
                    Rule::ApacLogMean => acc.push(&lp),
                    _ => acc.push(&lp.iter().map(|v| v.exp()).collect::<Vec<_>>()),
                }
            }
            ell += 1;
            if want.peek() == Some(&&ell) {
                want.next();
                let means: Vec<Vec<f64>> = accs.iter().map(ApacAccumulator::means).collect();
                let scores = (0..classes).map(|c| means[class_col[c]][c]).collect();
                out.push(ClassScores::from_scores(scores, ell, ell * sets.len()));
            }
        }
    }
    Ok(out)
}

/// Class-indistinctive APAC (`cfg.rule` is ignored; the log-mean rule is
/// used).
pub fn apac_predict(net: &Network, x: &Image, sample_id: u64, cfg: &DecisionConfig) -> Result<ClassScores> {
    let spec = cfg.spec()?;
    if spec.is_class_distinctive() {
        return Err(Error::invalid("apac_predict takes a class-indistinctive spec"));
    }
    let cfg = DecisionConfig {
        rule: Rule::ApacLogMean,
        ..cfg.clone()
    };
    Ok(sweep_predict(net, x, sample_id, &cfg, &[cfg.m])?.remove(0))
}

/// Class-distinctive APAC; every class must have a deformation set.
pub fn apac_distinctive_predict(
    net: &Network,
    x: &Image,
    sample_id: u64,
    cfg: &DecisionConfig,
) -> Result<ClassScores> {
    if !cfg.spec()?.is_class_distinctive() {
        return Err(Error::invalid("apac_distinctive_predict takes a class-distinctive spec"));
    }
    let cfg = DecisionConfig {
        rule: Rule::ApacLogMean,
        ..cfg.clone()
    };
    Ok(sweep_predict(net, x, sample_id, &cfg, &[cfg.m])?.remove(0))
}

pub fn softmax_sum_predict(net: &Network, x: &Image, sample_id: u64, cfg: &DecisionConfig) -> Result<ClassScores> {
    let cfg = DecisionConfig {
        rule: Rule::SoftmaxSum,
        ..cfg.clone()
    };
    Ok(sweep_predict(net, x, sample_id, &cfg, &[cfg.m])?.remove(0))
}

/// Dispatches on `cfg.rule` and the spec's class mode.
pub fn predict(net: &Network, x: &Image, sample_id: u64, cfg: &DecisionConfig) -> Result<ClassScores> {
    match cfg.rule {
        Rule::NonApac => non_apac_predict(net, x),
        _ => Ok(sweep_predict(net, x, sample_id, cfg, &[cfg.m])?.remove(0)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub index: usize,
    pub true_class: usize,
    pub predicted: usize,
    /// 1-based.
    pub true_rank: usize,
    pub top2: [(usize, f64); 2],
}

impl Outcome {
    pub const CSV_HEADER: &'static str = "index,true_class,predicted,true_rank,top1_class,top1_score,top2_class,top2_score";

    fn new(index: usize, true_class: usize, s: &ClassScores) -> Self {
        let second = s.ranking.get(1).copied().unwrap_or(s.ranking[0]);
        Self {
            index,
            true_class,
            predicted: s.predicted,
            true_rank: s.rank_of(true_class),
            top2: [(s.ranking[0], s.scores[s.ranking[0]]), (second, s.scores[second])],
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.9},{},{:.9}",
            self.index, self.true_class, self.predicted, self.true_rank, self.top2[0].0, self.top2[0].1, self.top2[1].0, self.top2[1].1
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub rule: Rule,
    /// Virtual samples per input (1 for `non_apac`).
    pub m: usize,
    /// `(k, error)` for each requested `k`.
    pub top_k: Vec<(usize, f64)>,
    pub outcomes: Vec<Outcome>,
}

impl Evaluation {
    pub fn error(&self, k: usize) -> Option<f64> {
        self.top_k.iter().find(|(kk, _)| *kk == k).map(|(_, e)| *e)
    }

    pub fn outcomes_csv(&self) -> String {
        let mut s = String::from(Outcome::CSV_HEADER);
        s.push('\n');
        for o in &self.outcomes {
            s.push_str(&o.csv_row());
            s.push('\n');
        }
        s
    }

    fn from_outcomes(rule: Rule, m: usize, outcomes: Vec<Outcome>, k_list: &[usize]) -> Self {
        let n = outcomes.len().max(1) as f64;
        let top_k = k_list
            .iter()
            .map(|&k| (k, outcomes.iter().filter(|o| o.true_rank > k).count() as f64 / n))
            .collect();
        Self { rule, m, top_k, outcomes }
    }
}

/// Evaluates `cfg` on every item of `ds`; sample `i` uses stream id `i`.
pub fn evaluate(net: &Network, ds: &LabeledDataset, cfg: &DecisionConfig, k_list: &[usize]) -> Result<Evaluation> {
    let m = if cfg.rule == Rule::NonApac { 1 } else { cfg.m };
    Ok(evaluate_sweep(net, ds, cfg, &[m], k_list)?.remove(0))
}

/// One [`Evaluation`] per entry of `m_list`, sharing the virtual samples.
pub fn evaluate_sweep(
    net: &Network,
    ds: &LabeledDataset,
    cfg: &DecisionConfig,
    m_list: &[usize],
    k_list: &[usize],
) -> Result<Vec<Evaluation>> {
    cfg.validate()?;
    let per_sample: Vec<Vec<ClassScores>> = (0..ds.len())
        .into_par_iter()
        .map(|i| sweep_predict(net, ds.image(i), i as u64, cfg, m_list))
        .collect::<Result<_>>()?;
    Ok(m_list
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let outcomes = per_sample
                .iter()
                .enumerate()
                .map(|(i, s)| Outcome::new(i, ds.label(i), &s[j]))
                .collect();
            let m = if cfg.rule == Rule::NonApac { 1 } else { m };
            Evaluation::from_outcomes(cfg.rule, m, outcomes, k_list)
        })
        .collect())
}
