//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Everything runs against scripted backends.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bias_harness::agent::TemplateRegistry;
use bias_harness::backend::{Backend, BackendConfig, PolicyKind, ScriptedPolicy};
use bias_harness::config::RunConfig;
use bias_harness::dataset::{qualify_all, DatasetBundle};
use bias_harness::domain::{
    AgentProfile, Experiment, InquiryOutcome, KnowledgeScope, McqKind, OptionLabel, ParsedResponse, RateKey,
    RateMetric, SYSTEM_SENDER,
};
use bias_harness::error::MetricsError;
use bias_harness::evaluators::{parse_choice, parse_rating, SimilarityProvider, FALLBACK_TAG, PARSER_TAG};
use bias_harness::metrics::{
    compute_bias_rate, export_radar, export_similarity_trajectories, rescale_unit, BiasRate, RADAR_METRICS,
};
use bias_harness::protocols::{run_collect, ProtocolConfig, ProtocolContext, ProtocolMode, ProtocolParams, ProtocolRun};
use bias_harness::runner;
use bias_harness::topology::{build_combination, deliver, route_by_scope, Combination, CommMode};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn backend(policy: ScriptedPolicy) -> Backend {
    Backend::new(BackendConfig::scripted("mock", policy)).expect("valid scripted backend")
}

fn run_with(cfg: &ProtocolConfig, backend: &Backend, data: &DatasetBundle) -> ProtocolRun {
    let templates = TemplateRegistry::default();
    let similarity = SimilarityProvider::Fallback;
    let ctx = ProtocolContext {
        backend,
        judge: None,
        templates: &templates,
        data,
        similarity: &similarity,
        threshold: 0.74,
    };
    run_collect(cfg, &ctx).expect("protocol run")
}

fn padded(n: usize) -> DatasetBundle {
    let mut d = DatasetBundle::samples();
    d.pad_to(n, 11);
    d
}

fn responder() -> ScriptedPolicy {
    let patterns: BTreeMap<String, String> = [
        ("Level: xx".to_string(), "Level: 9".to_string()),
        ("Answer: A/B".to_string(), "Answer: B. Explanation: fine.".to_string()),
    ]
    .into_iter()
    .collect();
    ScriptedPolicy { kind: PolicyKind::TemplateResponder { patterns, default: None }, seed: 0 }
}

// ---------------------------------------------------------------------------

fn rate_oracle() -> Outcome {
    let start = Instant::now();
    let metrics = ["Bqa", "Bmha"];
    let datasets = ["K", "uK", "Price"];
    let conditions = ["7W", "7R", "n15", "final"];
    let evaluators = ["Parser", "D", "A"];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut nonempty = 0;
    for set in 0..1000 {
        let size = rng.random_range(1..=500);
        let outcomes: Vec<InquiryOutcome> = (0..size)
            .map(|i| {
                let mut tags = vec![
                    metrics[rng.random_range(0..2)].to_string(),
                    datasets[rng.random_range(0..3)].to_string(),
                    conditions[rng.random_range(0..4)].to_string(),
                ];
                if rng.random_bool(0.2) {
                    tags.push(conditions[rng.random_range(0..4)].to_string());
                }
                let mut verdicts = BTreeMap::new();
                for e in evaluators {
                    match rng.random_range(0..3) {
                        0 => {}
                        1 => {
                            verdicts.insert(e.to_string(), true);
                        }
                        _ => {
                            verdicts.insert(e.to_string(), false);
                        }
                    }
                }
                if rng.random_bool(0.1) {
                    verdicts.insert("unparsed".to_string(), true);
                }
                InquiryOutcome {
                    id: format!("s{set}/{i}"),
                    inquiry_id: format!("s{set}/{i}"),
                    experiment: Experiment::Herd,
                    condition_tags: tags,
                    repetition_index: 0,
                    question_index: i as u32,
                    parsed: ParsedResponse::ParseFailure(String::new()),
                    verdicts,
                    api_calls: 1,
                    rounds: 1,
                    favor: None,
                    hop: None,
                }
            })
            .collect();
        let pick = |rng: &mut ChaCha8Rng, pool: &[&str]| {
            if rng.random_bool(0.25) {
                "*".to_string()
            } else {
                pool[rng.random_range(0..pool.len())].to_string()
            }
        };
        let metric = if rng.random_bool(0.5) { RateMetric::Bqa } else { RateMetric::Bmha };
        let ds = pick(&mut rng, &datasets);
        let cond = pick(&mut rng, &conditions);
        let ev = evaluators[rng.random_range(0..3)];
        let key = RateKey::new(metric, ds.clone(), cond.clone(), ev);

        let (mut m, mut n) = (0u64, 0u64);
        for o in &outcomes {
            let has = |t: &str| o.condition_tags.iter().any(|x| x == t);
            if !has(metric.as_str()) || (ds != "*" && !has(&ds)) || (cond != "*" && !has(&cond)) {
                continue;
            }
            if let Some(v) = o.verdicts.get(ev) {
                n += 1;
                if *v {
                    m += 1;
                }
            }
        }
        match compute_bias_rate(&outcomes, &key) {
            Err(MetricsError::EmptySelection) => ensure(n == 0, || format!("set {set}: spurious empty selection"))?,
            Err(e) => return Err(format!("set {set}: {e}")),
            Ok(r) => {
                nonempty += 1;
                ensure(r.m == m && r.n == n, || format!("set {set}: got {}/{} expected {m}/{n}", r.m, r.n))?;
                let oracle = 100.0 * m as f64 / n as f64;
                ensure((r.rate_percent - oracle).abs() <= 1e-12, || format!("set {set}: rate {} vs {oracle}", r.rate_percent))?;
            }
        }
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(5), || format!("took {t:?}"))?;
    Ok(format!("1000 sets ({nonempty} non-empty selections) match the recount in {:.2}s", t.as_secs_f64()))
}

fn herd_table1_shape() -> Outcome {
    let start = Instant::now();
    let data = padded(100);
    let mut params = ProtocolParams::default();
    params.conditions = vec!["uK[7W]".into()];
    let cfg = ProtocolConfig::new(Experiment::Herd, "mock", 10, 100).with_seed(2024).with_params(params);
    let key = RateKey::new(RateMetric::Bqa, "uK", "7W", PARSER_TAG);
    let mut rates = Vec::new();
    for p in [0.999, 1.0, 0.0] {
        let b = backend(ScriptedPolicy::conform(p, "Answer: B. Explanation: they all agree.", "Answer: A. Explanation: no.", 99));
        let run = run_with(&cfg, &b, &data);
        let r = compute_bias_rate(&run.outcomes, &key).map_err(|e| e.to_string())?;
        ensure(r.n == 1000, || format!("p={p}: N = {}", r.n))?;
        rates.push(r.rate_percent);
    }
    ensure((98.4..=100.0).contains(&rates[0]), || format!("p=0.999 rate {}", rates[0]))?;
    ensure(rates[1] == 100.0, || format!("p=1 rate {}", rates[1]))?;
    ensure(rates[2] == 0.0, || format!("p=0 rate {}", rates[2]))?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(30), || format!("took {t:?}"))?;
    Ok(format!("uK[7W] rates {:.2} / {:.2} / {:.2} in {:.2}s", rates[0], rates[1], rates[2], t.as_secs_f64()))
}

fn call_accounting() -> Outcome {
    let data = padded(20);
    let herd_conditions = 8u64;
    let authority_cases = 5u64;
    let mut lines = Vec::new();
    let mut check = |name: &str, cfg: ProtocolConfig, policy: ScriptedPolicy, per_inquiry: u64, inquiries: u64| -> Result<ProtocolRun, String> {
        let b = backend(policy);
        let run = run_with(&cfg, &b, &data);
        let expected = per_inquiry * inquiries;
        let counted: u64 = run.outcomes.iter().map(|o| u64::from(o.api_calls)).sum();
        ensure(b.calls() == expected, || format!("{name}: backend counted {} calls, expected {expected}", b.calls()))?;
        ensure(counted == expected, || format!("{name}: outcomes record {counted} calls, expected {expected}"))?;
        ensure(run.inquiries as u64 == inquiries, || format!("{name}: {} inquiries, expected {inquiries}", run.inquiries))?;
        let mut per: BTreeMap<&str, u32> = BTreeMap::new();
        for o in &run.outcomes {
            *per.entry(o.inquiry_id.as_str()).or_default() += o.api_calls;
        }
        ensure(per.values().all(|c| u64::from(*c) == per_inquiry), || format!("{name}: uneven calls per inquiry"))?;
        lines.push(format!("{name}={per_inquiry}"));
        Ok(run)
    };
    let (p, q) = (2u32, 3u32);
    let pq = u64::from(p * q);
    for mode in [ProtocolMode::Survey, ProtocolMode::Simulation] {
        let tag = if mode == ProtocolMode::Survey { "qa" } else { "sim" };
        let cfg = ProtocolConfig::new(Experiment::Herd, "mock", p, q).with_mode(mode);
        let run = check(&format!("herd/{tag}"), cfg, responder(), 1, herd_conditions * pq)?;
        if mode == ProtocolMode::Simulation {
            for o in &run.outcomes {
                let humans: u32 = o.condition_tags[2].trim_end_matches(|c: char| c.is_ascii_alphabetic()).parse().unwrap();
                ensure(o.rounds == humans + 1, || format!("herd round count {} for {humans} humans", o.rounds))?;
            }
        }
        let cfg = ProtocolConfig::new(Experiment::Authority, "mock", p, q).with_mode(mode);
        check(&format!("authority/{tag}"), cfg, responder(), 1, 2 * authority_cases * pq)?;
        let cfg = ProtocolConfig::new(Experiment::BenFranklin, "mock", p, q).with_mode(mode);
        check(&format!("ben_franklin/{tag}"), cfg, responder(), 1, 2 * pq)?;
        let cfg = ProtocolConfig::new(Experiment::Confirmation, "mock", p, q).with_mode(mode);
        check(&format!("confirmation/{tag}"), cfg, responder(), 1, pq)?;
        let cfg = ProtocolConfig::new(Experiment::Halo, "mock", p, q).with_mode(mode);
        check(&format!("halo/{tag}"), cfg, responder(), 1, pq)?;
    }
    let cfg = ProtocolConfig::new(Experiment::Gambler, "mock", p, q);
    check("gambler/qa", cfg, responder(), 1, pq)?;
    for n in [2usize, 7, 15] {
        let mut params = ProtocolParams::default();
        params.agents = Some(n);
        let cfg = ProtocolConfig::new(Experiment::RumorChain, "mock", p, q)
            .with_mode(ProtocolMode::Simulation)
            .with_params(params);
        check(&format!("rumor_chain(n={n})"), cfg, ScriptedPolicy::echo(), n as u64, pq)?;
    }
    Ok(format!("calls per inquiry: {}", lines.join(" ")))
}

fn rumor_identity() -> Outcome {
    let start = Instant::now();
    let data = padded(10);
    let cfg = ProtocolConfig::new(Experiment::RumorChain, "mock", 10, 10).with_mode(ProtocolMode::Simulation).with_seed(5);
    let b = backend(ScriptedPolicy::echo());
    let run = run_with(&cfg, &b, &data);
    for o in &run.outcomes {
        let hop = o.hop.as_ref().ok_or("outcome without hop record")?;
        let s = hop.similarity.get(FALLBACK_TAG).copied();
        ensure(s == Some(1.0), || format!("{}: similarity {s:?}", o.id))?;
    }
    let key = RateKey::new(RateMetric::Bmha, "Inform", "*", FALLBACK_TAG);
    let rate = compute_bias_rate(&run.outcomes, &key).map_err(|e| e.to_string())?;
    ensure(rate.rate_percent == 0.0, || format!("Rate_Bmha(Dfallback) = {}", rate.rate_percent))?;
    ensure(run.length_rates.len() == 100, || format!("{} length rates", run.length_rates.len()))?;
    let len = run.length_rates.iter().sum::<f64>() / run.length_rates.len() as f64;
    ensure(len == 0.0, || format!("Rate[len] = {len}"))?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = tmp.path().join("traj.csv");
    let rows = export_similarity_trajectories(&run.trajectories, &path).map_err(|e| e.to_string())?;
    let lines = std::fs::read_to_string(&path).map_err(|e| e.to_string())?.lines().count() - 1;
    ensure(rows == 1500 && lines == 1500, || format!("trajectory rows {rows} / file lines {lines}"))?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(10), || format!("took {t:?}"))?;
    Ok(format!(
        "{} pieces all at similarity 1.0, Rate_Bmha(Dfallback) 0.00 over N={}, Rate[len] 0.00, {lines} trajectory rows in {:.2}s",
        run.outcomes.len(),
        rate.n,
        t.as_secs_f64()
    ))
}

fn subsets(ids: &[String]) -> Vec<BTreeSet<String>> {
    (0u32..(1 << ids.len()))
        .map(|mask| ids.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, s)| s.clone()).collect())
        .collect()
}

fn scope_secrecy() -> Outcome {
    let combos = [
        Combination::SingleHSingleA,
        Combination::SingleHMultiA,
        Combination::MultiHSingleA,
        Combination::MultiA,
        Combination::MultiHMultiA,
    ];
    let (mut cases, mut violations, mut rejected) = (0u64, Vec::new(), 0u64);
    for total in 2..=5usize {
        for humans in 0..=total {
            for kind in combos {
                let Ok(topo) = build_combination(kind, humans, total - humans, CommMode::Broadcast) else { continue };
                let ids: Vec<String> = topo.ids().map(str::to_string).collect();
                let mut scopes = vec![KnowledgeScope::Common];
                scopes.extend(ids.iter().map(KnowledgeScope::private));
                let sets = subsets(&ids);
                scopes.extend(sets.iter().filter(|s| s.len() >= 2).cloned().map(KnowledgeScope::ConfidentialMutual));
                let senders: Vec<String> = std::iter::once(SYSTEM_SENDER.to_string()).chain(ids.iter().cloned()).collect();
                for scope in &scopes {
                    for sender in &senders {
                        cases += 1;
                        let content = format!("secret {cases}");
                        let msg = match route_by_scope(&content, scope, &topo, sender, 0) {
                            Ok(m) => m,
                            Err(e) => {
                                violations.push(format!("{scope:?} from {sender} rejected: {e}"));
                                continue;
                            }
                        };
                        let mut profiles: Vec<AgentProfile> = ids.iter().map(|id| AgentProfile::llm(id, id, "")).collect();
                        deliver(&msg, &mut profiles).map_err(|e| e.to_string())?;
                        let holders: BTreeSet<String> = profiles
                            .iter()
                            .filter(|p| p.memory.iter().any(|m| m.content == content))
                            .map(|p| p.id.clone())
                            .collect();
                        let expected: BTreeSet<String> = match scope {
                            KnowledgeScope::Common => ids.iter().filter(|i| *i != sender).cloned().collect(),
                            KnowledgeScope::Private(t) => [t.clone()].into_iter().collect(),
                            KnowledgeScope::ConfidentialMutual(s) => s.clone(),
                        };
                        if holders != expected {
                            violations.push(format!("{scope:?} from {sender}: held by {holders:?}"));
                        }
                    }
                }
                // Scopes naming outsiders or fewer than two ids must not route.
                let outsider = KnowledgeScope::mutual([ids[0].clone(), "stranger".to_string()]);
                let single = KnowledgeScope::ConfidentialMutual([ids[0].clone()].into_iter().collect());
                for bad in [outsider, single, KnowledgeScope::private("stranger")] {
                    cases += 1;
                    if route_by_scope("x", &bad, &topo, SYSTEM_SENDER, 0).is_ok() {
                        violations.push(format!("{bad:?} was routed"));
                    } else {
                        rejected += 1;
                    }
                }
            }
        }
    }
    ensure(violations.is_empty(), || format!("{} violations, first: {}", violations.len(), violations[0]))?;
    Ok(format!("{cases} routing cases over topologies of 2-5 participants, 0 violations ({rejected} invalid scopes refused)"))
}

fn malformed_choices() -> Vec<&'static str> {
    vec![
        "I think it's A",
        "Answer: Banana",
        "Reply in the following format: Answer: A/B.",
        "",
        "   ",
        "A",
        "B.",
        "The answer is B",
        "Answer: C",
        "Answer: AB",
        "Answer: Absolutely",
        "Answer: Both",
        "Answer:",
        "Answer: - ",
        "answer; A",
        "Answer - B",
        "Ans: A",
        "Option A",
        "Answer: 1",
        "My choice would be B.",
        "Answer: A/B. Explanation: ***.",
        "Answer: none of them",
        "Answer: (A)",
        "Answer: Bees",
        "Answr: A",
        "answer:  ",
        "Answer: unsure; explanation: B seems right",
        "A is correct",
        "Answer: A1",
        "Answer: b2",
    ]
}

fn malformed_ratings() -> Vec<&'static str> {
    vec![
        "Level: xx",
        "Level: 0",
        "Level: 12",
        "Level: 99",
        "Seven",
        "level seven",
        "Level: -3",
        "Level:",
        "My favorability is 7",
        "Level 7",
        "Lvl: 7",
        "Level: ",
        "Level: eleven",
        "",
        "Level: 100",
        "Favorability: 8",
        "Level: N/A",
        "rating: 5",
        "Level - 6",
        "Level: 1000000000000000000000",
    ]
}

fn parser_suite() -> Outcome {
    let prefixes = ["", "Sure. ", "After some thought,\n"];
    let markers = ["Answer:", "answer:", "ANSWER:"];
    let gaps = ["", " ", "  ", "\n"];
    let letters = [('A', OptionLabel::A), ('B', OptionLabel::B), ('a', OptionLabel::A), ('b', OptionLabel::B)];
    let tails = ["", ".", ". Explanation: because.", "\nExplanation: the rest", " - since"];
    let mut variants = 0;
    for p in prefixes {
        for m in markers {
            for g in gaps {
                for (l, want) in letters {
                    for t in tails {
                        let text = format!("{p}{m}{g}{l}{t}");
                        variants += 1;
                        let got = parse_choice(&text);
                        ensure(got == ParsedResponse::Choice(want), || format!("{text:?} parsed as {got:?}"))?;
                    }
                }
            }
        }
    }
    let level_markers = ["Level:", "level:", "LEVEL:"];
    let level_tails = ["", ".", " out of 11", "\nI like them more now."];
    for m in level_markers {
        for g in gaps {
            for v in 1..=11i64 {
                for t in level_tails {
                    let text = format!("{m}{g}{v}{t}");
                    variants += 1;
                    let got = parse_rating(&text, 1, 11);
                    ensure(got == ParsedResponse::Rating(v), || format!("{text:?} parsed as {got:?}"))?;
                }
            }
        }
    }
    let bad_choices = malformed_choices();
    let bad_ratings = malformed_ratings();
    ensure(bad_choices.len() + bad_ratings.len() == 50, || "malformed fixture set is not 50 items".into())?;
    for t in &bad_choices {
        ensure(parse_choice(t).is_failure(), || format!("malformed {t:?} was parsed"))?;
    }
    for t in &bad_ratings {
        ensure(parse_rating(t, 1, 11).is_failure(), || format!("malformed {t:?} was parsed"))?;
    }
    Ok(format!("{variants} well-formed variants recovered, 50/50 malformed rejected"))
}

fn qualification() -> Outcome {
    let mut data = DatasetBundle::samples();
    data.pad_to(160, 3);
    let candidates: Vec<_> =
        data.known.iter().filter(|m| m.kind == McqKind::Known && m.correct == Some(OptionLabel::A)).take(100).cloned().collect();
    ensure(candidates.len() == 100, || format!("only {} candidates", candidates.len()))?;
    let templates = TemplateRegistry::default();
    let count = |policy: ScriptedPolicy| -> Result<usize, String> {
        let reports = qualify_all(&candidates, &backend(policy), &templates, 50, 17).map_err(|e| e.to_string())?;
        Ok(reports.iter().filter(|r| r.accepted).count())
    };
    let perfect = count(ScriptedPolicy::fixed("Answer: A. Explanation: arithmetic."))?;
    ensure(perfect == 100, || format!("perfect mock accepted {perfect}/100"))?;
    let noisy = ScriptedPolicy::conform(0.9, "Answer: A. Explanation: sure.", "Answer: B. Explanation: hm.", 4242);
    let a = count(noisy.clone())?;
    let b = count(noisy)?;
    ensure(a == b, || format!("not deterministic: {a} vs {b}"))?;
    let expected = 100.0 * 0.9f64.powi(50);
    ensure(a <= 3, || format!("0.9 mock accepted {a}/100 (expected about {expected:.2})"))?;
    Ok(format!("perfect 100/100, 0.9-accuracy {a}/100 (expected {expected:.2})"))
}

fn rescale_and_radar() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..500 {
        let n = rng.random_range(2..20);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..150.0)).collect();
        let r = rescale_unit(&v).map_err(|e| e.to_string())?;
        let (lo, hi) = v.iter().enumerate().fold((0, 0), |(l, h), (i, x)| {
            (if *x < v[l] { i } else { l }, if *x > v[h] { i } else { h })
        });
        ensure(r[lo] == 0.0 && r[hi] == 1.0, || format!("extremes map to {} / {}", r[lo], r[hi]))?;
        for i in 0..n {
            for j in 0..n {
                if v[i] < v[j] {
                    ensure(r[i] < r[j], || "order not preserved".into())?;
                }
            }
        }
    }
    let flat = rescale_unit(&[42.0; 6]).map_err(|e| e.to_string())?;
    ensure(flat.iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x) && *x == flat[0]), || format!("{flat:?}"))?;

    let data = padded(20);
    let mut rates: Vec<BiasRate> = Vec::new();
    let models = [("model-a", 0.2), ("model-b", 0.5), ("model-c", 0.9)];
    for (name, p) in models {
        for e in RADAR_METRICS {
            let b = backend(ScriptedPolicy::conform(p, "Answer: B. Level: 11", "Answer: A. Level: 1", 3));
            let cfg = ProtocolConfig::new(e, "mock", 4, 5).with_seed(8);
            let run = run_with(&cfg, &b, &data);
            rates.extend(bias_harness::metrics::compute_all_rates(&run.outcomes).into_iter().map(|r| r.with_model(name)));
        }
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = tmp.path().join("radar.csv");
    export_radar(&rates, &path).map_err(|e| e.to_string())?;
    let mut reader = csv::Reader::from_path(&path).map_err(|e| e.to_string())?;
    let header: Vec<String> = reader.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    ensure(header.len() == 6, || format!("header {header:?}"))?;
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let vals: Vec<f64> = rec.iter().skip(1).map(|s| s.parse().unwrap_or(f64::NAN)).collect();
        ensure(vals.len() == 5 && vals.iter().all(|v| (0.0..=1.0).contains(v)), || format!("row {rec:?}"))?;
        rows += 1;
    }
    ensure(rows == models.len(), || format!("{rows} radar rows"))?;
    Ok(format!("rescale extremes/order/flat input hold; radar has 5 metrics in [0,1] for {rows} models"))
}

fn determinism_config(root: &Path, out: &str) -> RunConfig {
    let text = format!(
        r#"
run_id = "det"
seed = 314
dataset_dir = "data"
output_dir = "{out}"
pad_to = 40

[[backends]]
id = "m1"
model = "scripted"
kind = "scripted"
max_in_flight = 8
[backends.policy]
kind = "conform_with_probability"
p = 0.6
conform_text = "Answer: B. Level: 10"
dissent_text = "Answer: A. Level: 2"
seed = 1

[[backends]]
id = "relay"
model = "scripted"
kind = "scripted"
max_in_flight = 3
[backends.policy]
kind = "template_responder"
default = "[Message: Something happened to someone somewhere.]"
[backends.policy.patterns]
"noticeable" = "[Message: A quiet evening passed.]"

[[protocols]]
experiment = "herd"
backend = "m1"
repetitions = 3
questions = 10

[[protocols]]
experiment = "authority"
backend = "m1"
mode = "simulation"
repetitions = 2
questions = 5

[[protocols]]
experiment = "ben_franklin"
backend = "m1"
repetitions = 3
questions = 3

[[protocols]]
experiment = "confirmation"
backend = "m1"
repetitions = 10
questions = 2

[[protocols]]
experiment = "halo"
backend = "m1"
repetitions = 10
questions = 2

[[protocols]]
experiment = "gambler"
backend = "m1"
repetitions = 10
questions = 2

[[protocols]]
experiment = "rumor_chain"
backend = "relay"
mode = "simulation"
repetitions = 3
questions = 5
agents = 6
"#
    );
    let mut cfg = RunConfig::parse(&text, Path::new("det.toml")).expect("config parses");
    cfg.resolve_paths(root);
    cfg
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    DatasetBundle::samples().write_dir(&tmp.path().join("data")).map_err(|e| e.to_string())?;
    let mut dirs = Vec::new();
    for out in ["out1", "out2"] {
        let cfg = determinism_config(tmp.path(), out);
        let s = runner::run(&cfg).map_err(|e| e.to_string())?;
        dirs.push(s.run_dir);
    }
    let mut compared = 0;
    for sub in ["rates", "trajectories"] {
        let mut names: Vec<_> = std::fs::read_dir(dirs[0].join(sub))
            .map_err(|e| e.to_string())?
            .map(|e| e.map(|e| e.file_name()))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        names.sort();
        for name in names {
            let a = std::fs::read(dirs[0].join(sub).join(&name)).map_err(|e| e.to_string())?;
            let b = std::fs::read(dirs[1].join(sub).join(&name)).map_err(|e| format!("{name:?} missing in second run: {e}"))?;
            ensure(a == b, || format!("{sub}/{name:?} differs"))?;
            compared += 1;
        }
    }
    ensure(compared >= 6, || format!("only {compared} files compared"))?;
    Ok(format!("{compared} rate/trajectory files byte-identical across two runs"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("rate oracle", rate_oracle),
        ("table-1 pipeline shape", herd_table1_shape),
        ("call accounting", call_accounting),
        ("rumor-chain identity", rumor_identity),
        ("scope secrecy", scope_secrecy),
        ("parser suite", parser_suite),
        ("known-MCQ qualification", qualification),
        ("rescale + radar export", rescale_and_radar),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  {name}: panicked");
            }
        }
    }
    println!("{}/{} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
