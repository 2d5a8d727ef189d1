//! Bias-rate computation, aggregation and CSV exports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{
    Experiment, FavorGroup, InquiryOutcome, RateKey, RateMetric, ScenarioCondition, Transcript,
};
use crate::error::MetricsError;

/// Matches any dataset or condition tag in a [`RateKey`].
pub const WILDCARD: &str = "*";

/// Evaluator tag for the content-length metric in table headers.
pub const LENGTH_TAG: &str = "Len";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRate {
    pub key: RateKey,
    pub m: u64,
    pub n: u64,
    pub rate_percent: f64,
    /// Matching outcomes with no verdict under the evaluator tag.
    pub excluded: u64,
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub model: String,
}

impl BiasRate {
    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }
}

fn tag_matches(pattern: &str, outcome: &InquiryOutcome) -> bool {
    pattern == WILDCARD || outcome.condition_tags.iter().any(|t| t == pattern)
}

/// Whether `outcome` falls under `key` (ignoring the evaluator).
pub fn key_selects(key: &RateKey, outcome: &InquiryOutcome) -> bool {
    outcome.has_tags(&[key.metric.as_str()])
        && tag_matches(&key.dataset_tag, outcome)
        && tag_matches(&key.condition_tag, outcome)
}

/// M biased out of N judged outcomes matching `key`; outcomes without a
/// verdict under the evaluator tag are counted as excluded.
pub fn compute_bias_rate(outcomes: &[InquiryOutcome], key: &RateKey) -> Result<BiasRate, MetricsError> {
    let (mut m, mut n, mut excluded) = (0u64, 0u64, 0u64);
    let mut experiment = None;
    for o in outcomes.iter().filter(|o| key_selects(key, o)) {
        experiment.get_or_insert(o.experiment);
        match o.verdicts.get(&key.evaluator_tag) {
            Some(&b) => {
                n += 1;
                m += u64::from(b);
            }
            None => excluded += 1,
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptySelection);
    }
    Ok(BiasRate {
        key: key.clone(),
        m,
        n,
        rate_percent: 100.0 * m as f64 / n as f64,
        excluded,
        experiment,
        model: String::new(),
    })
}

/// Every distinct (metric, dataset, condition, evaluator) key present in
/// `outcomes`. The unparsed marker is not an evaluator.
pub fn keys_present(outcomes: &[InquiryOutcome]) -> BTreeSet<RateKey> {
    let mut keys = BTreeSet::new();
    for o in outcomes {
        let [metric, dataset, condition] = match o.condition_tags.as_slice() {
            [a, b, c, ..] => [a, b, c],
            _ => continue,
        };
        let metric = match metric.as_str() {
            "Bqa" => RateMetric::Bqa,
            "Bmha" => RateMetric::Bmha,
            _ => continue,
        };
        for tag in o.verdicts.keys().filter(|t| *t != crate::evaluators::UNPARSED_TAG) {
            keys.insert(RateKey::new(metric, dataset.clone(), condition.clone(), tag.clone()));
        }
    }
    keys
}

/// Rates for every key present; keys whose selection is all-excluded are
/// skipped.
pub fn compute_all_rates(outcomes: &[InquiryOutcome]) -> Vec<BiasRate> {
    keys_present(outcomes)
        .iter()
        .filter_map(|k| compute_bias_rate(outcomes, k).ok())
        .collect()
}

/// Unweighted mean of the rates. All must share metric and evaluator.
pub fn aggregate_average(rates: &[BiasRate]) -> Result<f64, MetricsError> {
    let first = rates.first().ok_or(MetricsError::EmptyList)?;
    if let Some(r) = rates
        .iter()
        .find(|r| r.key.metric != first.key.metric || r.key.evaluator_tag != first.key.evaluator_tag)
    {
        return Err(MetricsError::Incommensurable(format!("{} vs {}", first.key, r.key)));
    }
    Ok(rates.iter().map(|r| r.rate_percent).sum::<f64>() / rates.len() as f64)
}

/// Min-max rescale to [0, 1]; all-equal input maps to 0.5.
pub fn rescale_unit(values: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(vec![0.5; values.len()]);
    }
    Ok(values.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect())
}

/// Mean content contraction over chains of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRate {
    pub model: String,
    pub dataset_tag: String,
    pub condition_tag: String,
    pub chains: u64,
    pub rate_percent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableLayout {
    Table1,
    Table2,
    Table3,
    Generic,
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn models_of(rates: &[BiasRate], lengths: &[LengthRate]) -> Vec<String> {
    let set: BTreeSet<&str> = rates.iter().map(|r| r.model.as_str()).chain(lengths.iter().map(|l| l.model.as_str())).collect();
    set.into_iter().map(str::to_string).collect()
}

fn mean_of<'a>(rates: impl Iterator<Item = &'a BiasRate>) -> Option<f64> {
    let v: Vec<f64> = rates.map(|r| r.rate_percent).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Headline rate of one experiment for one model: the experimental arm
/// for Ben Franklin, the mean over every parser-judged cell otherwise.
pub fn headline_rate(rates: &[BiasRate], model: &str, experiment: Experiment) -> Option<f64> {
    mean_of(rates.iter().filter(|r| {
        r.model == model
            && r.experiment == Some(experiment)
            && r.key.evaluator_tag == crate::evaluators::PARSER_TAG
            && (experiment != Experiment::BenFranklin || r.key.condition_tag == FavorGroup::Experimental.tag())
    }))
}

/// Header row and body rows for a layout.
pub fn rate_table(
    rates: &[BiasRate],
    lengths: &[LengthRate],
    layout: TableLayout,
) -> Result<(Vec<String>, Vec<Vec<String>>), MetricsError> {
    if rates.is_empty() && lengths.is_empty() {
        return Err(MetricsError::EmptySelection);
    }
    let models = models_of(rates, lengths);
    let mut header = vec!["model".to_string()];
    let mut rows = Vec::new();
    match layout {
        TableLayout::Table1 => {
            let conds = ScenarioCondition::table_order();
            header.extend(conds.iter().map(ScenarioCondition::label));
            for model in &models {
                let mut row = vec![model.clone()];
                for c in &conds {
                    let cell = mean_of(rates.iter().filter(|r| {
                        &r.model == model
                            && r.experiment == Some(Experiment::Herd)
                            && r.key.dataset_tag == c.dataset_kind.tag()
                            && r.key.condition_tag == c.tag()
                    }));
                    row.push(cell.map(fmt2).unwrap_or_default());
                }
                rows.push(row);
            }
        }
        TableLayout::Table2 => {
            let cols = [Experiment::BenFranklin, Experiment::Confirmation, Experiment::Halo, Experiment::Gambler];
            header.extend(cols.iter().map(|e| e.title().to_string()));
            for model in &models {
                let mut row = vec![model.clone()];
                for e in cols {
                    row.push(headline_rate(rates, model, e).map(fmt2).unwrap_or_default());
                }
                rows.push(row);
            }
        }
        TableLayout::Table3 => {
            use crate::evaluators::{FALLBACK_TAG, HUMAN_TAG, JUDGE_TAG, SIDECAR_TAG};
            let tags = [JUDGE_TAG, SIDECAR_TAG, FALLBACK_TAG, HUMAN_TAG];
            header.extend(tags.iter().map(|t| t.to_string()));
            header.push(LENGTH_TAG.to_string());
            for model in &models {
                let mut row = vec![model.clone()];
                for t in tags {
                    let cell = mean_of(rates.iter().filter(|r| {
                        &r.model == model
                            && r.experiment == Some(Experiment::RumorChain)
                            && r.key.evaluator_tag == t
                            && r.key.condition_tag != crate::protocols::rumor::FINAL_TAG
                    }));
                    row.push(cell.map(fmt2).unwrap_or_default());
                }
                let len: Vec<f64> = lengths.iter().filter(|l| &l.model == model).map(|l| l.rate_percent).collect();
                row.push(if len.is_empty() { String::new() } else { fmt2(len.iter().sum::<f64>() / len.len() as f64) });
                rows.push(row);
            }
        }
        TableLayout::Generic => {
            let keys: BTreeSet<String> = rates.iter().map(|r| r.key.to_string()).collect();
            header.extend(keys.iter().cloned());
            for model in &models {
                let mut row = vec![model.clone()];
                for k in &keys {
                    let cell = mean_of(rates.iter().filter(|r| &r.model == model && &r.key.to_string() == k));
                    row.push(cell.map(fmt2).unwrap_or_default());
                }
                rows.push(row);
            }
        }
    }
    Ok((header, rows))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|source| MetricsError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

pub fn export_rate_table(
    rates: &[BiasRate],
    lengths: &[LengthRate],
    layout: TableLayout,
    path: &Path,
) -> Result<(), MetricsError> {
    let (header, rows) = rate_table(rates, lengths, layout)?;
    write_csv(path, &header, &rows)
}

pub const RADAR_METRICS: [Experiment; 5] = [
    Experiment::BenFranklin,
    Experiment::Confirmation,
    Experiment::Halo,
    Experiment::Herd,
    Experiment::Authority,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarDatum {
    pub model: String,
    /// In [`RADAR_METRICS`] order, each in [0, 1].
    pub values: [f64; 5],
}

/// Rescales each radar metric across models. Every model must have a
/// headline rate for all five metrics.
pub fn radar_data(rates: &[BiasRate]) -> Result<Vec<RadarDatum>, MetricsError> {
    let models = models_of(rates, &[]);
    if models.is_empty() {
        return Err(MetricsError::EmptySelection);
    }
    let mut raw = vec![[0.0; 5]; models.len()];
    for (mi, model) in models.iter().enumerate() {
        for (ei, e) in RADAR_METRICS.iter().enumerate() {
            raw[mi][ei] = headline_rate(rates, model, *e)
                .ok_or_else(|| MetricsError::Incommensurable(format!("model {model} has no {} rate", e.as_str())))?;
        }
    }
    let mut out: Vec<RadarDatum> = models.iter().map(|m| RadarDatum { model: m.clone(), values: [0.0; 5] }).collect();
    for ei in 0..5 {
        let col: Vec<f64> = raw.iter().map(|r| r[ei]).collect();
        for (mi, v) in rescale_unit(&col)?.into_iter().enumerate() {
            out[mi].values[ei] = v;
        }
    }
    Ok(out)
}

pub fn export_radar(rates: &[BiasRate], path: &Path) -> Result<Vec<RadarDatum>, MetricsError> {
    let data = radar_data(rates)?;
    let mut header = vec!["model".to_string()];
    header.extend(RADAR_METRICS.iter().map(|e| e.as_str().to_string()));
    let rows: Vec<Vec<String>> = data
        .iter()
        .map(|d| std::iter::once(d.model.clone()).chain(d.values.iter().map(|v| format!("{v:.4}"))).collect())
        .collect();
    write_csv(path, &header, &rows)?;
    Ok(data)
}

/// Similarity-to-original of the message each agent received; entry 0 is
/// the original itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrajectory {
    pub story_id: String,
    pub repetition: u32,
    pub scores: Vec<f64>,
}

pub fn export_similarity_trajectories(chains: &[ChainTrajectory], path: &Path) -> Result<usize, MetricsError> {
    let header: Vec<String> = ["story", "rep", "index", "score"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for c in chains {
        for (i, s) in c.scores.iter().enumerate() {
            rows.push(vec![c.story_id.clone(), c.repetition.to_string(), i.to_string(), format!("{s:.6}")]);
        }
    }
    write_csv(path, &header, &rows)?;
    Ok(rows.len())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallAccount {
    pub inquiries: u64,
    pub total_calls: u64,
    /// Histogram: calls in one inquiry → number of inquiries.
    pub calls_per_inquiry: BTreeMap<u32, u64>,
    /// Histogram: simulated rounds in one inquiry → number of inquiries.
    pub rounds_per_inquiry: BTreeMap<u32, u64>,
}

/// Per-experiment call and round counts, grouping outcomes by inquiry.
pub fn account_api_calls(transcripts: &[Transcript]) -> BTreeMap<Experiment, CallAccount> {
    let mut out: BTreeMap<Experiment, CallAccount> = BTreeMap::new();
    for t in transcripts {
        let mut per_inquiry: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
        for o in &t.outcomes {
            let e = per_inquiry.entry(o.inquiry_id.as_str()).or_default();
            e.0 += o.api_calls;
            e.1 = e.1.max(o.rounds);
        }
        let acc = out.entry(t.header.experiment).or_default();
        for (calls, rounds) in per_inquiry.into_values() {
            acc.inquiries += 1;
            acc.total_calls += u64::from(calls);
            *acc.calls_per_inquiry.entry(calls).or_default() += 1;
            *acc.rounds_per_inquiry.entry(rounds).or_default() += 1;
        }
    }
    out
}

fn histogram(h: &BTreeMap<u32, u64>) -> String {
    h.iter().map(|(k, v)| format!("{k}x{v}")).collect::<Vec<_>>().join(";")
}

pub fn export_accounting(accounts: &BTreeMap<Experiment, CallAccount>, path: &Path) -> Result<(), MetricsError> {
    let header: Vec<String> = ["experiment", "inquiries", "total_calls", "calls_per_inquiry", "rounds_per_inquiry"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = accounts
        .iter()
        .map(|(e, a)| {
            vec![
                e.as_str().to_string(),
                a.inquiries.to_string(),
                a.total_calls.to_string(),
                histogram(&a.calls_per_inquiry),
                histogram(&a.rounds_per_inquiry),
            ]
        })
        .collect();
    write_csv(path, &header, &rows)
}

/// Every rate with its canonical key string.
pub fn export_summary(rates: &[BiasRate], lengths: &[LengthRate], path: &Path) -> Result<(), MetricsError> {
    let header: Vec<String> = ["model", "experiment", "key", "m", "n", "excluded", "rate_percent"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows: Vec<Vec<String>> = rates
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.experiment.map(|e| e.as_str().to_string()).unwrap_or_default(),
                r.key.to_string(),
                r.m.to_string(),
                r.n.to_string(),
                r.excluded.to_string(),
                fmt2(r.rate_percent),
            ]
        })
        .collect();
    for l in lengths {
        rows.push(vec![
            l.model.clone(),
            Experiment::RumorChain.as_str().to_string(),
            format!("Rate_{}[{}][{}][{LENGTH_TAG}]", RateMetric::Bmha.as_str(), l.dataset_tag, l.condition_tag),
            String::new(),
            l.chains.to_string(),
            String::new(),
            fmt2(l.rate_percent),
        ]);
    }
    write_csv(path, &header, &rows)
}
