//! Dataset files: loading, validation, sampling, qualification and scene
//! binding.
//!
//! A dataset directory holds one ndjson file per dataset plus
//! `manifest.json`. The shipped samples are small; [`synthetic`] pads them
//! to any size with deterministic filler so that full-scale runs work
//! without the original item banks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{bindings, ids, PromptTemplate, TemplateRegistry};
use crate::backend::{mix_seed, Backend, ChatClient, ChatRequest};
use crate::domain::{
    validate_item, AgentProfile, DatasetItem, InformStory, KnowledgeScope, McqItem, McqKind, OptionLabel, Scene,
};
use crate::error::{DatasetError, TemplateError};
use crate::evaluators::parse_choice;

pub const SCHEMA_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_QUALIFICATION_REPS: u32 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    KnownMcq,
    UnknownMcq,
    Inform,
    Cogscene,
    Cogaction,
    Cogidentity,
}

impl DatasetName {
    pub const ALL: [DatasetName; 6] = [
        DatasetName::KnownMcq,
        DatasetName::UnknownMcq,
        DatasetName::Inform,
        DatasetName::Cogscene,
        DatasetName::Cogaction,
        DatasetName::Cogidentity,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            DatasetName::KnownMcq => "known_mcq",
            DatasetName::UnknownMcq => "unknown_mcq",
            DatasetName::Inform => "inform",
            DatasetName::Cogscene => "cogscene",
            DatasetName::Cogaction => "cogaction",
            DatasetName::Cogidentity => "cogidentity",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.ndjson", self.file_stem())
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: DatasetName,
    pub path: PathBuf,
    pub item_count: usize,
    pub schema_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualificationReport {
    pub question_id: String,
    pub attempts: u32,
    pub correct_count: u32,
    pub accepted: bool,
}

fn parse_record(name: DatasetName, line: &str) -> Result<DatasetItem, serde_json::Error> {
    Ok(match name {
        DatasetName::KnownMcq | DatasetName::UnknownMcq => DatasetItem::Mcq(serde_json::from_str(line)?),
        DatasetName::Inform => DatasetItem::Inform(serde_json::from_str(line)?),
        DatasetName::Cogscene | DatasetName::Cogaction => DatasetItem::Scene(serde_json::from_str(line)?),
        DatasetName::Cogidentity => DatasetItem::Identity(serde_json::from_str(line)?),
    })
}

fn kind_violation(name: DatasetName, item: &DatasetItem) -> Option<String> {
    match (name, item) {
        (DatasetName::KnownMcq, DatasetItem::Mcq(m)) if m.kind != McqKind::Known => {
            Some("known_mcq file holds an Unknown item".into())
        }
        (DatasetName::UnknownMcq, DatasetItem::Mcq(m)) if m.kind != McqKind::Unknown => {
            Some("unknown_mcq file holds a Known item".into())
        }
        (DatasetName::Cogaction, DatasetItem::Scene(s)) if s.parent_scene.is_none() || s.action.is_none() => {
            Some("cogaction records need parent_scene and action".into())
        }
        _ => None,
    }
}

/// Reads and validates one dataset file. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<DatasetItem>, DatasetError> {
    let items = read_items(manifest.name, &manifest.path)?;
    if items.len() != manifest.item_count {
        return Err(DatasetError::CountMismatch {
            path: manifest.path.clone(),
            expected: manifest.item_count,
            actual: items.len(),
        });
    }
    Ok(items)
}

fn read_items(name: DatasetName, path: &Path) -> Result<Vec<DatasetItem>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.into(), source })?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let schema = |reason: String| DatasetError::Schema { path: path.into(), line: i + 1, reason };
        let item = parse_record(name, line).map_err(|e| schema(e.to_string()))?;
        let mut report = validate_item(&item);
        report.violations.extend(kind_violation(name, &item));
        if !report.is_ok() {
            return Err(schema(report.violations.join("; ")));
        }
        items.push(item);
    }
    Ok(items)
}

/// Known MCQ candidates from a file with no manifest entry.
pub fn read_candidates(path: &Path) -> Result<Vec<McqItem>, DatasetError> {
    Ok(read_items(DatasetName::KnownMcq, path)?
        .into_iter()
        .filter_map(|i| match i {
            DatasetItem::Mcq(m) => Some(m),
            _ => None,
        })
        .collect())
}

/// Typed view over a whole dataset directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetBundle {
    pub known: Vec<McqItem>,
    pub unknown: Vec<McqItem>,
    pub inform: Vec<InformStory>,
    pub scenes: Vec<Scene>,
    pub actions: Vec<Scene>,
    pub identities: Vec<AgentProfile>,
}

impl DatasetBundle {
    pub fn mcq(&self, kind: McqKind) -> &[McqItem] {
        match kind {
            McqKind::Known => &self.known,
            McqKind::Unknown => &self.unknown,
        }
    }

    pub fn len_of(&self, name: DatasetName) -> usize {
        match name {
            DatasetName::KnownMcq => self.known.len(),
            DatasetName::UnknownMcq => self.unknown.len(),
            DatasetName::Inform => self.inform.len(),
            DatasetName::Cogscene => self.scenes.len(),
            DatasetName::Cogaction => self.actions.len(),
            DatasetName::Cogidentity => self.identities.len(),
        }
    }

    /// Loads every dataset listed in `dir/manifest.json`. Relative paths in
    /// the manifest are resolved against `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, DatasetError> {
        let mut bundle = Self::default();
        for mut m in read_manifest(dir)? {
            if m.path.is_relative() {
                m.path = dir.join(&m.path);
            }
            for item in load_dataset(&m)? {
                match (m.name, item) {
                    (DatasetName::KnownMcq, DatasetItem::Mcq(x)) => bundle.known.push(x),
                    (DatasetName::UnknownMcq, DatasetItem::Mcq(x)) => bundle.unknown.push(x),
                    (DatasetName::Inform, DatasetItem::Inform(x)) => bundle.inform.push(x),
                    (DatasetName::Cogscene, DatasetItem::Scene(x)) => bundle.scenes.push(x),
                    (DatasetName::Cogaction, DatasetItem::Scene(x)) => bundle.actions.push(x),
                    (DatasetName::Cogidentity, DatasetItem::Identity(x)) => bundle.identities.push(x),
                    _ => unreachable!("parse_record is keyed on the dataset name"),
                }
            }
        }
        Ok(bundle)
    }

    /// Writes the six files and a manifest into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<DatasetManifest>, DatasetError> {
        fn io(path: &Path) -> impl Fn(std::io::Error) -> DatasetError + '_ {
            move |source| DatasetError::Io { path: path.to_path_buf(), source }
        }
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        fn lines<T: Serialize>(items: &[T]) -> String {
            items.iter().map(|x| serde_json::to_string(x).expect("dataset item serializes") + "\n").collect()
        }
        let mut manifests = Vec::new();
        for name in DatasetName::ALL {
            let body = match name {
                DatasetName::KnownMcq => lines(&self.known),
                DatasetName::UnknownMcq => lines(&self.unknown),
                DatasetName::Inform => lines(&self.inform),
                DatasetName::Cogscene => lines(&self.scenes),
                DatasetName::Cogaction => lines(&self.actions),
                DatasetName::Cogidentity => lines(&self.identities),
            };
            let path = dir.join(name.file_name());
            std::fs::write(&path, body).map_err(io(&path))?;
            manifests.push(DatasetManifest {
                name,
                path: PathBuf::from(name.file_name()),
                item_count: self.len_of(name),
                schema_version: SCHEMA_VERSION.to_string(),
            });
        }
        let mpath = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifests).expect("manifest serializes");
        std::fs::write(&mpath, text + "\n").map_err(io(&mpath))?;
        Ok(manifests)
    }

    /// Extends every dataset with synthetic items up to `target` entries.
    pub fn pad_to(&mut self, target: usize, seed: u64) {
        synthetic::pad(self, target, seed);
    }

    /// The appendix samples.
    pub fn samples() -> Self {
        samples::bundle()
    }
}

pub fn read_manifest(dir: &Path) -> Result<Vec<DatasetManifest>, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| DatasetError::Io { path: path.clone(), source })?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Schema { path, line: e.line(), reason: e.to_string() })
}

/// Uniform sample of `n` items without replacement.
pub fn sample_items<T: Clone>(items: &[T], n: usize, seed: u64) -> Result<Vec<T>, DatasetError> {
    if n > items.len() {
        return Err(DatasetError::SampleTooLarge { requested: n, available: items.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, items.len(), n).into_iter().map(|i| items[i].clone()).collect())
}

/// Poses the bare question `repetitions` times; accepted only if every
/// reply parses to the declared answer.
pub fn qualify_known_mcq<C: ChatClient + ?Sized>(
    candidate: &McqItem,
    client: &mut C,
    templates: &TemplateRegistry,
    repetitions: u32,
    temperature: f64,
) -> Result<QualificationReport, DatasetError> {
    if repetitions == 0 {
        return Err(DatasetError::InvalidRepetitions);
    }
    let correct = match (candidate.kind, candidate.correct) {
        (McqKind::Known, Some(c)) => c,
        _ => return Err(DatasetError::NotQualifiable(candidate.id.clone())),
    };
    let prompt = templates.render(ids::BARE_MCQ, &bindings([("MCQ", &candidate.render())]))?;
    let request = ChatRequest::single("", prompt, temperature);
    let mut correct_count = 0;
    for _ in 0..repetitions {
        let reply = client.complete_chat(&request)?;
        if parse_choice(&reply.content).choice() == Some(correct) {
            correct_count += 1;
        }
    }
    Ok(QualificationReport {
        question_id: candidate.id.clone(),
        attempts: repetitions,
        correct_count,
        accepted: correct_count == repetitions,
    })
}

/// Qualifies a list of candidates, one backend session per candidate so
/// scripted streams are independent and reproducible. Runs up to the
/// backend's in-flight cap in parallel.
pub fn qualify_all(
    candidates: &[McqItem],
    backend: &Backend,
    templates: &TemplateRegistry,
    repetitions: u32,
    seed: u64,
) -> Result<Vec<QualificationReport>, DatasetError> {
    use rayon::prelude::*;
    if repetitions == 0 {
        return Err(DatasetError::InvalidRepetitions);
    }
    let temperature = backend.config().temperature;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(backend.config().max_in_flight.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        candidates
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let mut session = backend.session(mix_seed(seed, i as u64));
                qualify_known_mcq(c, &mut session, templates, repetitions, temperature)
            })
            .collect()
    })
}

/// Role names used in default slot scopes; resolved to agent ids at bind
/// time.
pub const ROLE_X: &str = "X";
pub const ROLE_Y: &str = "Y";

/// Visibility of each scene slot unless the scene overrides it.
pub fn default_slot_scope(slot: &str) -> KnowledgeScope {
    match slot {
        "RELATION" => KnowledgeScope::mutual([ROLE_X, ROLE_Y]),
        "INITIAL_LEVEL" => KnowledgeScope::private(ROLE_X),
        _ => KnowledgeScope::Common,
    }
}

pub type SlotBindings = BTreeMap<String, String>;
pub type SlotScopes = BTreeMap<String, KnowledgeScope>;

/// Merges scene slots with `extra` for `template`, and returns the scope
/// each bound slot is routed under. Scene slots the template does not use
/// are dropped; extras it does not use are an error.
pub fn bind_scene(
    scene: &Scene,
    extra: &SlotBindings,
    template: &PromptTemplate,
    roles: &BTreeMap<String, String>,
) -> Result<(SlotBindings, SlotScopes), TemplateError> {
    if let Some(unknown) = extra.keys().find(|k| !template.required_slots.contains(*k)) {
        return Err(TemplateError::UnknownSlot(unknown.clone()));
    }
    let mut all = scene.bindings();
    all.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
    let mut bound = SlotBindings::new();
    let mut scopes = SlotScopes::new();
    for slot in &template.required_slots {
        let value = all.get(slot).ok_or_else(|| TemplateError::MissingSlot(slot.clone()))?;
        let scope = scene.slot_scopes.get(slot).cloned().unwrap_or_else(|| default_slot_scope(slot));
        bound.insert(slot.clone(), value.clone());
        scopes.insert(slot.clone(), scope.resolve(roles));
    }
    Ok((bound, scopes))
}

/// Ids present more than once.
pub fn duplicate_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut dup = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            dup.insert(id.to_string());
        }
    }
    dup.into_iter().collect()
}

mod samples {
    use super::*;

    fn mcq(id: &str, q: &str, a: &str, b: &str, kind: McqKind) -> McqItem {
        McqItem {
            id: id.into(),
            question: q.into(),
            option_a: a.into(),
            option_b: b.into(),
            kind,
            correct: (kind == McqKind::Known).then_some(OptionLabel::A),
        }
    }

    pub(super) fn bundle() -> DatasetBundle {
        let k = |i: usize, q: &str, a: &str, b: &str| mcq(&format!("k{i:03}"), q, a, b, McqKind::Known);
        let u = |i: usize, q: &str, a: &str, b: &str| mcq(&format!("u{i:03}"), q, a, b, McqKind::Unknown);
        let known = vec![
            k(1, "What is the color of the apple?", "Red", "Blue"),
            k(2, "What is the color of the banana?", "Yellow", "Red"),
            k(3, "What is the color of the sky?", "Blue", "Green"),
            k(4, "What is the answer of 1-1+1?", "1", "2"),
            k(5, "Is 1 equal to 1?", "Yes", "No"),
            k(6, "Is 2 equal to 1?", "No", "Yes"),
            k(7, "What is the capital city of Australia?", "Canberra", "Sydney"),
            k(8, "What language is spoken in Brazil?", "Portuguese", "French"),
            k(9, "Who wrote the novel \"Pride and Prejudice\"?", "Jane Austen", "Charlotte Bronte"),
            k(10, "Who wrote Harry Potter?", "J. K. Rowling", "William Shakespeare"),
            k(11, "When is Valentine's Day?", "2.14", "1.1"),
            k(12, "Where is MIT?", "Boston", "Los Angeles"),
            k(13, "In what decade was Madonna born?", "1950s", "1970s"),
            k(14, "Where is the Statue of Liberty?", "New York", "Washington"),
        ];
        let unknown = vec![
            u(1, "How is the Weather in Brooklyn on 2027/3/25 ?", "sunny", "rain"),
            u(2, "What will be the population of New York City in 2050?", "10 million", "20 million"),
            u(3, "Will the stock price of Dell be higher than 200 in 2025?", "yes", "no"),
            u(4, "Will the China win the World Cup in 2060?", "yes", "no"),
            u(5, "Will the US win the World Cup in 2060?", "yes", "no"),
            u(6, "What will be the price of Bitcoin in 2030?", "100k", "200k"),
            u(7, "Will the price of gold be higher than 2000 in 2030?", "yes", "no"),
            u(8, "Will self-driving cars be the primary mode of transportation by 2040?", "yes", "no"),
            u(9, "Will there be a manned Mars mission completed by 2055?", "yes", "no"),
        ];
        let inform = [
            "In a dimly lit room, an old man typed a message into a dusty computer. \"Forgive me,\" he wrote, \
             addressing his long-lost daughter. As he hit send, the power cut out, leaving the message unsent. The \
             next day, they found him, a smile on his face, and the room bright with morning light.",
            "Evan dropped a coin into the well, wishing for a friend. The next day, a new kid arrived in class, \
             sitting next to Evan. They quickly became inseparable. Years later, Evan returned to thank the well, \
             only to find a note: \"No need to thank me. I was just waiting for your coin.\"",
            "Children buried a time capsule with their dreams in 1994. Decades later, they gathered, grayer and \
             wiser, to unearth it. They found notes of ambitions, some achieved, others forgotten. Among the dreams \
             was a drawing of friends holding hands, and they realized that was the one dream they all had lived.",
            "In a world of metal and smog, the last tree stood surrounded by a dome. People visited daily, \
             marveling at its green leaves. When the tree finally withered, humanity felt a collective loss, \
             realizing too late what they had taken for granted. It was this loss that sparked a revolution of \
             restoration.",
            "An astronaut adrift in space, his ship irreparably damaged, gazed upon the stars. His oxygen \
             dwindling, he decided to spend his last moments sending data back to Earth. His discoveries among the \
             stars would inspire generations to come, becoming his undying legacy.",
        ]
        .iter()
        .enumerate()
        .map(|(i, t)| InformStory::new(format!("i{:03}", i + 1), *t))
        .collect();
        let scene = |i: usize, scenario: &str, resource: &str| Scene {
            id: format!("s{i:03}"),
            scenario: scenario.into(),
            resource: Some(resource.into()),
            relation: Some("strangers".into()),
            action: None,
            parent_scene: None,
            slot_scopes: BTreeMap::new(),
        };
        let scenes = vec![
            scene(1, "a job interview; waiting in a room", "a Software Developer position"),
            scene(2, "a scholarship contest; waiting for results", "the last scholarship"),
            scene(3, "an audition; waiting for your turn", "the lead role in the play"),
        ];
        let action = |i: usize, parent: &Scene, act: &str| Scene {
            id: format!("a{i:03}"),
            action: Some(act.into()),
            parent_scene: Some(parent.id.clone()),
            ..parent.clone()
        };
        let actions = vec![
            action(1, &scenes[0], "lend them a pen"),
            action(2, &scenes[1], "share your notes with them"),
            action(3, &scenes[2], "give them a word of encouragement"),
        ];
        let person = |i: usize, name: &str, text: &str, beliefs: &[&str], memory: &[&str]| {
            let mut p = AgentProfile::llm(format!("p{i:03}"), name, text);
            p.beliefs = beliefs.iter().map(|s| s.to_string()).collect();
            p.memory = memory
                .iter()
                .enumerate()
                .map(|(r, m)| crate::domain::MemoryEntry {
                    round_index: r as u32 + 1,
                    content: m.to_string(),
                    source: crate::domain::SYSTEM_SENDER.into(),
                })
                .collect();
            p
        };
        let identities = vec![
            person(1, "John Doe", "You are John Doe, a male senior software engineer.", &[], &[]),
            person(
                2,
                "Jane Smith",
                "You are Jane Smith, a female surgeon-in-chief. You are extroverted and compassionate.",
                &[],
                &[],
            ),
            person(
                3,
                "Alex Johnson",
                "You are Alex Johnson, a non-binary student. You are creative and open-minded.",
                &[],
                &[],
            ),
            person(
                4,
                "Sarah Brown",
                "You are Sarah Brown, a female principal architect. You are assertive and ambitious.",
                &["justice", "success"],
                &["Designed a green building", "Received architecture award"],
            ),
            person(
                5,
                "Michael Taylor",
                "You are Michael Taylor, a male assistant lawyer. You are methodical and imaginative.",
                &["creativity", "sustainability"],
                &["Advocated for the client", "Lost a case", "Won a high-profile case"],
            ),
        ];
        DatasetBundle { known, unknown, inform, scenes, actions, identities }
    }
}

/// Deterministic filler items. They are plausible enough to exercise the
/// protocols but carry no empirical weight.
pub mod synthetic {
    use super::*;
    use rand::seq::IndexedRandom;
    use rand::Rng;

    const CITIES: &[&str] = &[
        "Boston", "Lagos", "Osaka", "Lima", "Oslo", "Perth", "Quito", "Hanoi", "Porto", "Denver", "Nairobi", "Kyiv",
    ];
    const NAMES: &[&str] = &[
        "Ava", "Ben", "Chloe", "Dev", "Elena", "Farid", "Grace", "Hiro", "Ines", "Jonah", "Kira", "Luis", "Maya",
        "Noor", "Omar", "Priya",
    ];
    const JOBS: &[&str] = &[
        "nurse", "carpenter", "data analyst", "chef", "pilot", "librarian", "teacher", "accountant", "plumber",
        "journalist", "biologist", "translator",
    ];
    const TRAITS: &[&str] = &["calm", "curious", "stubborn", "generous", "cautious", "witty", "patient", "bold"];
    const SCENARIOS: &[(&str, &str)] = &[
        ("a hackathon final; waiting for the judges", "the grand prize"),
        ("a cooking competition; preparing the last dish", "the head chef position"),
        ("a chess tournament; sitting at the final table", "the championship title"),
        ("a startup pitch day; waiting backstage", "the seed funding"),
        ("a debate contest; reviewing notes in the hall", "the debate trophy"),
        ("a marathon; warming up at the start line", "the first-place medal"),
        ("a design contest; pinning up drafts", "the design commission"),
        ("a promotion review; waiting outside the office", "the team lead role"),
    ];
    const FAVORS: &[&str] = &[
        "lend them a charger",
        "hold their coffee for a moment",
        "share your umbrella with them",
        "give them directions to the room",
        "lend them a calculator",
        "save their seat",
        "pass them a tissue",
        "help them carry a box",
    ];
    const OPENINGS: &[&str] = &[
        "A lighthouse keeper found a bottle on the shore.",
        "A baker left the oven on through the night.",
        "A girl taught her grandfather to whistle.",
        "A train stopped in a town that had no station.",
        "A fisherman caught a key instead of a fish.",
        "A painter ran out of blue paint on the last day.",
    ];
    const MIDDLES: &[&str] = &[
        "Nobody believed the story at first, yet the evidence kept appearing in small places.",
        "The neighbours gathered, argued, and finally agreed to wait until morning.",
        "Each attempt to explain it only made the mystery larger and stranger.",
        "A letter arrived years later, written in a hand that everyone recognised.",
    ];
    const ENDINGS: &[&str] = &[
        "In the end the town kept the secret, and the secret kept the town together.",
        "When the season changed, the only thing left was a quiet sense of gratitude.",
        "They learned that the smallest choices sometimes echo the longest.",
        "The answer had been there from the start, waiting for someone patient enough.",
    ];

    /// Extends each dataset to `target` items, continuing the id sequence.
    pub fn pad(bundle: &mut DatasetBundle, target: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while bundle.known.len() < target {
            let i = bundle.known.len() + 1;
            let (x, y) = (rng.random_range(2..50u32), rng.random_range(2..50u32));
            let right = x + y;
            let wrong = right + rng.random_range(1..9u32);
            bundle.known.push(McqItem {
                id: format!("k{i:03}"),
                question: format!("What is {x} plus {y}?"),
                option_a: right.to_string(),
                option_b: wrong.to_string(),
                kind: McqKind::Known,
                correct: Some(OptionLabel::A),
            });
        }
        while bundle.unknown.len() < target {
            let i = bundle.unknown.len() + 1;
            let city = CITIES.choose(&mut rng).expect("non-empty");
            let year = rng.random_range(2031..2090u32);
            let (m, d) = (rng.random_range(1..=12u32), rng.random_range(1..=28u32));
            bundle.unknown.push(McqItem {
                id: format!("u{i:03}"),
                question: format!("Will it rain in {city} on {year}/{m}/{d}?"),
                option_a: "yes".into(),
                option_b: "no".into(),
                kind: McqKind::Unknown,
                correct: None,
            });
        }
        while bundle.inform.len() < target {
            let i = bundle.inform.len() + 1;
            let text = [OPENINGS, MIDDLES, MIDDLES, ENDINGS]
                .iter()
                .map(|pool| *pool.choose(&mut rng).expect("non-empty"))
                .collect::<Vec<_>>()
                .join(" ");
            bundle.inform.push(InformStory::new(format!("i{i:03}"), text));
        }
        while bundle.scenes.len() < target {
            let i = bundle.scenes.len() + 1;
            let (scenario, resource) = SCENARIOS[(i - 1) % SCENARIOS.len()];
            bundle.scenes.push(Scene {
                id: format!("s{i:03}"),
                scenario: scenario.into(),
                resource: Some(resource.into()),
                relation: Some("strangers".into()),
                action: None,
                parent_scene: None,
                slot_scopes: BTreeMap::new(),
            });
        }
        while bundle.actions.len() < target && !bundle.scenes.is_empty() {
            let i = bundle.actions.len() + 1;
            let parent = bundle.scenes[(i - 1) % bundle.scenes.len()].clone();
            bundle.actions.push(Scene {
                id: format!("a{i:03}"),
                action: Some(FAVORS.choose(&mut rng).expect("non-empty").to_string()),
                parent_scene: Some(parent.id.clone()),
                ..parent
            });
        }
        while bundle.identities.len() < target {
            let i = bundle.identities.len() + 1;
            let name = NAMES.choose(&mut rng).expect("non-empty");
            let job = JOBS.choose(&mut rng).expect("non-empty");
            let tr = TRAITS.choose(&mut rng).expect("non-empty");
            bundle.identities.push(AgentProfile::llm(
                format!("p{i:03}"),
                *name,
                format!("You are {name}, a {tr} {job}."),
            ));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendConfig, ScriptedPolicy};

    fn manifest(name: DatasetName, path: PathBuf, n: usize) -> DatasetManifest {
        DatasetManifest { name, path, item_count: n, schema_version: SCHEMA_VERSION.into() }
    }

    #[test]
    fn samples_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let b = DatasetBundle::samples();
        let ms = b.write_dir(dir.path()).unwrap();
        assert_eq!(ms[0].item_count, 14);
        assert_eq!(b.unknown.len(), 9);
        let back = DatasetBundle::load_dir(dir.path()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("known_mcq.ndjson");
        std::fs::write(&p, "").unwrap();
        assert!(load_dataset(&manifest(DatasetName::KnownMcq, p.clone(), 0)).unwrap().is_empty());
        std::fs::write(
            &p,
            "{\"id\":\"k1\",\"question\":\"q\",\"option_a\":\"x\",\"option_b\":\"y\",\"kind\":\"known\",\"correct\":\"A\"}\n\
             {\"id\":\"k2\",\"question\":\"q\",\"option_a\":\"x\",\"kind\":\"known\",\"correct\":\"A\"}\n",
        )
        .unwrap();
        match load_dataset(&manifest(DatasetName::KnownMcq, p.clone(), 2)) {
            Err(DatasetError::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        std::fs::write(
            &p,
            "{\"id\":\"k1\",\"question\":\"q\",\"option_a\":\"x\",\"option_b\":\"y\",\"kind\":\"known\"}\n",
        )
        .unwrap();
        assert!(matches!(load_dataset(&manifest(DatasetName::KnownMcq, p.clone(), 1)), Err(DatasetError::Schema { .. })));
        let missing = dir.path().join("nope.ndjson");
        assert!(matches!(load_dataset(&manifest(DatasetName::Inform, missing, 0)), Err(DatasetError::Io { .. })));
    }

    #[test]
    fn sampling() {
        let items: Vec<u32> = (0..100).collect();
        let a = sample_items(&items, 10, 7).unwrap();
        assert_eq!(a, sample_items(&items, 10, 7).unwrap());
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 10);
        let mut all = sample_items(&items, 100, 3).unwrap();
        all.sort();
        assert_eq!(all, items);
        assert!(matches!(sample_items(&items, 101, 0), Err(DatasetError::SampleTooLarge { .. })));
    }

    #[test]
    fn qualification_rules() {
        let reg = TemplateRegistry::default();
        let item = DatasetBundle::samples().known[1].clone();
        let good = Backend::new(BackendConfig::scripted("m", ScriptedPolicy::fixed("Answer: A. Explanation: yellow"))).unwrap();
        let r = qualify_known_mcq(&item, &mut good.session(0), &reg, 50, 1.0).unwrap();
        assert!(r.accepted);
        assert_eq!(r.correct_count, 50);
        assert_eq!(good.calls(), 50);
        assert!(matches!(
            qualify_known_mcq(&item, &mut good.session(0), &reg, 0, 1.0),
            Err(DatasetError::InvalidRepetitions)
        ));
        let noisy = ScriptedPolicy::conform(0.98, "Answer: A", "Answer: B", 11);
        let b = Backend::new(BackendConfig::scripted("n", noisy)).unwrap();
        let reports = qualify_all(&vec![item.clone(); 20], &b, &reg, 50, 5).unwrap();
        for r in &reports {
            assert_eq!(r.accepted, r.correct_count == r.attempts);
        }
        assert!(reports.iter().any(|r| !r.accepted));
        let unknown = DatasetBundle::samples().unknown[0].clone();
        assert!(matches!(
            qualify_known_mcq(&unknown, &mut good.session(0), &reg, 5, 1.0),
            Err(DatasetError::NotQualifiable(_))
        ));
    }

    #[test]
    fn scene_binding_scopes() {
        let reg = TemplateRegistry::default();
        let b = DatasetBundle::samples();
        let roles: BTreeMap<String, String> =
            [("X".to_string(), "agent_0".to_string()), ("Y".to_string(), "human_0".to_string())].into();
        let extra = bindings([("INITIAL_LEVEL", "7")]);
        let (bound, scopes) = bind_scene(&b.actions[0], &extra, reg.get(ids::FRANKLIN_SURVEY).unwrap(), &roles).unwrap();
        assert_eq!(bound["ACTION"], "lend them a pen");
        assert_eq!(scopes["SCENARIO"], KnowledgeScope::Common);
        assert_eq!(scopes["ACTION"], KnowledgeScope::Common);
        assert_eq!(scopes["RELATION"], KnowledgeScope::mutual(["agent_0", "human_0"]));
        assert_eq!(scopes["INITIAL_LEVEL"], KnowledgeScope::private("agent_0"));
        let bad = bindings([("INITIAL_LEVEL", "7"), ("MOOD", "x")]);
        assert_eq!(
            bind_scene(&b.actions[0], &bad, reg.get(ids::FRANKLIN_SURVEY).unwrap(), &roles),
            Err(TemplateError::UnknownSlot("MOOD".into()))
        );
        assert_eq!(
            bind_scene(&b.scenes[0], &extra, reg.get(ids::FRANKLIN_SURVEY).unwrap(), &roles),
            Err(TemplateError::MissingSlot("ACTION".into()))
        );
    }

    #[test]
    fn padding_is_deterministic_and_valid() {
        let mut a = DatasetBundle::samples();
        a.pad_to(100, 9);
        let mut b = DatasetBundle::samples();
        b.pad_to(100, 9);
        assert_eq!(a, b);
        for name in DatasetName::ALL {
            assert_eq!(a.len_of(name), 100);
        }
        assert!(duplicate_ids(a.known.iter().map(|x| x.id.as_str())).is_empty());
        let dir = tempfile::tempdir().unwrap();
        a.write_dir(dir.path()).unwrap();
        assert_eq!(DatasetBundle::load_dir(dir.path()).unwrap(), a);
    }
}
