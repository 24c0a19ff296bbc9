use std::collections::BTreeMap;

use pace_core::dictionary::{self, LearnConfig, LearnOutput};
use pace_core::evaluate::{self, EvalConfig, EvalReport, FeatureInputs};
use pace_core::ingest::{self, DEFAULT_MIN_DAILY_STREAMS, DEFAULT_MIN_LISTEN_SECS};
use pace_core::{seed, signals, synth, ActivityLabels, SignalSet, Split, SynthConfig};

pub struct InMemoryRun {
    pub signals: SignalSet,
    pub split: Split,
    pub learned: LearnOutput,
    pub report: EvalReport,
    pub organic_fraction: f64,
}

/// Synthesizes data and runs every stage without touching the disk.
pub fn run_in_memory(config: &SynthConfig, learn: &LearnConfig, seed_value: u64) -> InMemoryRun {
    let users = synth::generate(config).unwrap();
    let mut events = Vec::new();
    let mut favorites = Vec::new();
    let mut labels: BTreeMap<String, ActivityLabels> = BTreeMap::new();
    for u in users {
        events.extend(u.events);
        favorites.extend(u.favorites);
        labels.insert(u.labels.user_id.clone(), u.labels);
    }
    let organic = events.iter().filter(|e| e.origin == ingest::Origin::Organic).count();
    let organic_fraction = organic as f64 / events.len() as f64;

    let period = config.period();
    let mut events = ingest::filter_valid_streams(events, DEFAULT_MIN_LISTEN_SECS);
    ingest::restrict_to_period(&mut events, &period);
    let active = ingest::filter_active_users(&events, &period, DEFAULT_MIN_DAILY_STREAMS).unwrap();
    events.retain(|e| active.contains(&e.user_id));
    let profiles = ingest::build_profiles(&events, &favorites, 0).profiles;
    let set = signals::build_signal_set(&profiles, &events, &period, 0).unwrap();
    drop(events);

    let split = evaluate::split_users(&set.users, 0.33, seed::derive(seed_value, "split")).unwrap();
    let train = set.select(&split.train).unwrap();
    let learned = dictionary::learn(&train, learn).unwrap();
    let codes = dictionary::embed(&set, &learned.dictionary, learn.coder_settings()).unwrap();
    let totals: BTreeMap<String, u64> = profiles.values().map(|p| (p.user_id.clone(), p.total_valid_streams)).collect();
    let inputs = FeatureInputs {
        codes: &codes,
        labels: &labels,
        total_streams: &totals,
    };
    let eval = EvalConfig {
        seed: seed::derive(seed_value, "cv"),
        ..Default::default()
    };
    let report = evaluate::evaluate_all(&inputs, &split, &eval).unwrap();
    InMemoryRun {
        signals: set,
        split,
        learned,
        report,
        organic_fraction,
    }
}
