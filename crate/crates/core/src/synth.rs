//! Seeded synthetic listening logs with planted weekly archetypes.
//!
//! # Generative model
//!
//! Every user draws a primary archetype from `mixture`, and holds each other
//! archetype independently with probability `secondary_rate`. A held
//! archetype contributes its weekly rate profile, normalized to unit weekly
//! mass and scaled by an intensity drawn uniformly from
//! `primary_intensity` (resp. `secondary_intensity`). A background profile
//! of weight `background.weight` is always present. The summed profile is
//! rescaled so the user's expected streams per day equal a log-normal draw
//! `daily_streams_median * exp(daily_streams_sigma * N(0, 1))`. Noise moves
//! a `noise` share of every hour's rate to a flat profile:
//!
//! ```text
//! rate'(t) = (1 - noise) * rate(t) + noise * mean(rate)
//! ```
//!
//! Stream counts per hour of every week are Poisson(`rate'(t)`). Each stream
//! is attributed to a component in proportion to its share of `rate'(t)`
//! (flat noise and background use the background ratios) and takes that
//! component's repetition / organicity / liked ratios for the slot:
//!
//! * liked with probability `liked`: a track from the liked pool (favorited
//!   tracks and the tracks of the favorited album);
//! * otherwise repeated with probability `repetition - liked`: a track from
//!   the user's non-liked rotation;
//! * otherwise a fresh track drawn from the whole catalog.
//!
//! Organic probabilities are shifted per user so the user's expected
//! organic share equals `organic_rate + U(-organic_spread, organic_spread)`.
//! A `skip_rate` share of streams last 1..=29 s (removed by ingest).
//!
//! The irregular trait (sports by default) adds, for holders, one session a
//! week with probability `session_probability`: Poisson(`session_streams`)
//! streams in one random hour of `hours` on a random day.
//!
//! Labels: an activity linked to archetype `a` with probability `p_hi` is
//! drawn Bernoulli(`p_hi`) for holders of `a` and Bernoulli(`p_lo`)
//! otherwise, with `p_lo` solved so the population rate equals the
//! activity's base rate. The irregular trait works the same way with its
//! own prevalence. Unlinked activities are Bernoulli(base rate).
//!
//! Randomness: user `i` uses a ChaCha8 generator seeded with
//! `seed::derive_index(seed::derive(config.seed, "synth"), i)`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PaceError, Result};
use crate::evaluate::{write_labels, Activity, ActivityLabels, AGE_GROUPS, GENDERS, LABELS_HEADER};
use crate::ingest::{
    FavoriteKind, FavoritesRecord, Origin, StreamEvent, StudyPeriod, EVENTS_HEADER, FAVORITES_HEADER,
};
use crate::seed;
use crate::signals::{self, Stage, UserSignal, CHANNELS, SLOTS};

const WEEK_SECS: i64 = 7 * 86_400;
/// 2022-01-03 00:00 at UTC+01:00, a Monday.
const DEFAULT_START: i64 = 1_641_164_400;
const TRACKS_PER_ALBUM: u64 = 12;

/// A rectangle of the week: every listed hour of every listed day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// Monday = 0.
    pub days: Vec<u8>,
    pub hours: Vec<u8>,
    /// Expected streams per hour before user scaling.
    pub rate: f64,
    #[serde(default)]
    pub repetition: Option<f64>,
    #[serde(default)]
    pub organicity: Option<f64>,
    #[serde(default)]
    pub liked: Option<f64>,
}

impl Block {
    pub fn new(days: &[u8], hours: std::ops::Range<u8>, rate: f64) -> Self {
        Block {
            days: days.to_vec(),
            hours: hours.collect(),
            rate,
            repetition: None,
            organicity: None,
            liked: None,
        }
    }

    fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.days
            .iter()
            .flat_map(move |&d| self.hours.iter().map(move |&h| d as usize * 24 + h as usize))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityLink {
    pub activity: Activity,
    /// Probability of a positive answer for users holding the archetype.
    pub probability: f64,
}

/// Per-slot ratios of repeated, organic and liked streams.
pub type SlotRatios = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub name: String,
    pub blocks: Vec<Block>,
    pub repetition: f64,
    pub organicity: f64,
    pub liked: f64,
    #[serde(default)]
    pub links: Vec<ActivityLink>,
}

impl Archetype {
    /// Expected streams per weekly slot; blocks listed later win on overlap.
    pub fn rates(&self) -> [f64; SLOTS] {
        let mut rates = [0.0; SLOTS];
        for b in &self.blocks {
            for s in b.slots() {
                rates[s] = b.rate;
            }
        }
        rates
    }

    pub fn ratios(&self) -> Vec<SlotRatios> {
        let mut out = vec![[self.repetition, self.organicity, self.liked]; SLOTS];
        for b in &self.blocks {
            for s in b.slots() {
                out[s] = [
                    b.repetition.unwrap_or(self.repetition),
                    b.organicity.unwrap_or(self.organicity),
                    b.liked.unwrap_or(self.liked),
                ];
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PaceError::Config(format!("archetype {}: {m}", self.name)));
        for b in &self.blocks {
            if b.days.iter().any(|&d| d >= 7) || b.hours.iter().any(|&h| h >= 24) {
                return bad("block day/hour out of range".into());
            }
            if !(b.rate >= 0.0 && b.rate.is_finite()) {
                return bad(format!("rate {} must be >= 0", b.rate));
            }
        }
        for r in self.ratios() {
            if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad("ratios must lie in [0, 1]".into());
            }
            if r[2] > r[0] {
                return bad("liked ratio cannot exceed repetition ratio".into());
            }
        }
        for l in &self.links {
            if !(0.0..=1.0).contains(&l.probability) {
                return bad(format!("link probability {} outside [0, 1]", l.probability));
            }
        }
        if self.rates().iter().sum::<f64>() <= 0.0 {
            return bad("profile has no mass".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub weight: f64,
    pub profile: Archetype,
}

/// Irregular, weakly weekly behavior tied to one activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrregularTrait {
    pub activity: Activity,
    pub prevalence: f64,
    pub probability: f64,
    pub session_probability: f64,
    pub session_streams: f64,
    pub hours: Vec<u8>,
    pub repetition: f64,
    pub organicity: f64,
    pub liked: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub users: usize,
    pub weeks: usize,
    pub seed: u64,
    /// UTC epoch second of local Monday 00:00 that opens the period.
    pub start: i64,
    pub tz_offset_min: i32,
    pub mixture: Vec<f64>,
    pub secondary_rate: f64,
    pub primary_intensity: [f64; 2],
    pub secondary_intensity: [f64; 2],
    pub noise: f64,
    pub daily_streams_median: f64,
    pub daily_streams_sigma: f64,
    pub organic_rate: f64,
    pub organic_spread: f64,
    pub skip_rate: f64,
    pub catalog_size: u64,
    pub rotation_size: usize,
    pub liked_tracks: usize,
    /// Base rates in [`Activity::ALL`] order.
    pub base_rates: [f64; 6],
    /// Documentation labels of the five age-group codes.
    pub age_bins: Vec<String>,
    pub archetypes: Vec<Archetype>,
    pub background: Background,
    pub irregular: IrregularTrait,
}

const WEEKDAYS: &[u8] = &[0, 1, 2, 3, 4];
const ALL_DAYS: &[u8] = &[0, 1, 2, 3, 4, 5, 6];

pub fn default_archetypes() -> Vec<Archetype> {
    let link = |activity, probability| ActivityLink { activity, probability };
    vec![
        Archetype {
            name: "commuter".into(),
            blocks: vec![Block::new(WEEKDAYS, 7..10, 3.0), Block::new(WEEKDAYS, 17..20, 3.0)],
            repetition: 0.75,
            organicity: 0.9,
            liked: 0.45,
            links: vec![link(Activity::Transport, 0.85)],
        },
        Archetype {
            name: "office_worker".into(),
            blocks: vec![Block::new(WEEKDAYS, 9..17, 1.5)],
            repetition: 0.55,
            organicity: 0.92,
            liked: 0.3,
            links: vec![link(Activity::Work, 0.85)],
        },
        Archetype {
            name: "partygoer".into(),
            blocks: vec![Block::new(&[4, 5], 20..24, 3.0), Block::new(&[5, 6], 0..3, 2.5)],
            repetition: 0.25,
            organicity: 0.6,
            liked: 0.1,
            links: vec![link(Activity::Friends, 1.0)],
        },
        Archetype {
            name: "night_winder".into(),
            blocks: vec![Block::new(ALL_DAYS, 22..24, 2.0), Block::new(ALL_DAYS, 6..8, 1.2)],
            repetition: 0.8,
            organicity: 0.85,
            liked: 0.55,
            links: vec![link(Activity::Asleep, 0.45), link(Activity::WakeUp, 0.4)],
        },
    ]
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 5000,
            weeks: 12,
            seed: 7,
            start: DEFAULT_START,
            tz_offset_min: 60,
            mixture: vec![0.3, 0.3, 0.25, 0.15],
            secondary_rate: 0.2,
            primary_intensity: [1.0, 1.5],
            secondary_intensity: [0.4, 0.9],
            noise: 0.15,
            daily_streams_median: 10.0,
            daily_streams_sigma: 0.35,
            organic_rate: 0.8,
            organic_spread: 0.08,
            skip_rate: 0.1,
            catalog_size: 10_000_000,
            rotation_size: 40,
            liked_tracks: 8,
            base_rates: [0.18, 0.38, 0.39, 0.50, 0.47, 0.15],
            age_bins: ["<18", "18-29", "30-44", "45-59", "60+"].map(String::from).to_vec(),
            archetypes: default_archetypes(),
            background: Background {
                weight: 0.35,
                profile: Archetype {
                    name: "background".into(),
                    blocks: vec![Block::new(ALL_DAYS, 10..22, 0.3), Block::new(&[5, 6], 11..20, 0.4)],
                    repetition: 0.4,
                    organicity: 0.8,
                    liked: 0.2,
                    links: vec![],
                },
            },
            irregular: IrregularTrait {
                activity: Activity::Sports,
                prevalence: 0.5,
                probability: 0.62,
                session_probability: 0.5,
                session_streams: 5.0,
                hours: (6..22).collect(),
                repetition: 0.6,
                organicity: 0.85,
                liked: 0.3,
            },
        }
    }
}

/// Probability of holding each archetype.
fn holding_rates(config: &SynthConfig) -> Vec<f64> {
    config
        .mixture
        .iter()
        .map(|&pi| pi + (1.0 - pi) * config.secondary_rate)
        .collect()
}

/// How one activity's label is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LabelSource {
    Base,
    Archetype(usize),
    Irregular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub activity: Activity,
    pub source: LabelSource,
    /// Probability for holders of the source.
    pub p_holder: f64,
    /// Probability for everyone else (and for everyone when unlinked).
    pub p_other: f64,
}

fn solve_p_other(base: f64, holding: f64, p_holder: f64, activity: Activity) -> Result<f64> {
    let p = if holding >= 1.0 {
        if (base - p_holder).abs() > 1e-12 {
            return Err(PaceError::Config(format!(
                "{activity}: everyone holds the linked source, so its probability must equal the base rate"
            )));
        }
        0.0
    } else {
        (base - holding * p_holder) / (1.0 - holding)
    };
    if !(-1e-12..=1.0 + 1e-12).contains(&p) {
        return Err(PaceError::Config(format!(
            "{activity}: base rate {base} infeasible with link probability {p_holder} at holding rate {holding:.3} (needs {p:.3})"
        )));
    }
    Ok(p.clamp(0.0, 1.0))
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: SynthConfig = toml::from_str(text).map_err(|e| PaceError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn period(&self) -> StudyPeriod {
        StudyPeriod {
            start: self.start,
            end: self.start + self.weeks as i64 * WEEK_SECS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PaceError::Config(m.to_string()));
        if self.users == 0 {
            return bad("users must be positive");
        }
        if self.weeks < 2 {
            return bad("weeks must be at least 2");
        }
        if self.mixture.len() != self.archetypes.len() || self.archetypes.is_empty() {
            return bad("mixture needs one weight per archetype");
        }
        if self.mixture.iter().any(|&w| !(w >= 0.0)) || (self.mixture.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("mixture weights must be non-negative and sum to 1");
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if ![self.secondary_rate, self.noise, self.organic_rate, self.skip_rate].into_iter().all(unit) {
            return bad("secondary_rate, noise, organic_rate and skip_rate must lie in [0, 1]");
        }
        if !(self.organic_spread >= 0.0) {
            return bad("organic_spread must be >= 0");
        }
        if self.base_rates.iter().any(|&b| !unit(b)) {
            return bad("base rates must lie in [0, 1]");
        }
        for [lo, hi] in [self.primary_intensity, self.secondary_intensity] {
            if !(lo > 0.0 && hi >= lo) {
                return bad("intensity ranges need 0 < lo <= hi");
            }
        }
        if !(self.daily_streams_median > 0.0 && self.daily_streams_sigma >= 0.0) {
            return bad("daily stream distribution must be positive");
        }
        if self.rotation_size <= self.liked_tracks || self.catalog_size < 1000 {
            return bad("rotation must exceed the liked tracks, catalog must hold at least 1000 tracks");
        }
        if self.age_bins.len() != AGE_GROUPS as usize {
            return bad("age_bins needs five labels");
        }
        if signals::weekly_slot(self.start, self.tz_offset_min).index() != 0
            || (self.start + 60 * self.tz_offset_min as i64).rem_euclid(3600) != 0
        {
            return bad("start must be a local Monday 00:00");
        }
        for a in &self.archetypes {
            a.validate()?;
        }
        self.background.profile.validate()?;
        if !(self.background.weight >= 0.0) {
            return bad("background weight must be >= 0");
        }
        let t = &self.irregular;
        if ![t.prevalence, t.probability, t.session_probability].into_iter().all(unit)
            || t.session_streams < 0.0
            || t.hours.is_empty()
            || t.hours.iter().any(|&h| h >= 24)
            || ![t.repetition, t.organicity, t.liked].into_iter().all(unit)
            || t.liked > t.repetition
        {
            return bad("invalid irregular trait");
        }
        self.label_rules().map(|_| ())
    }

    /// Resolves the label-drawing rule of every activity.
    pub fn label_rules(&self) -> Result<Vec<LabelRule>> {
        let holding = holding_rates(self);
        let mut rules = Vec::with_capacity(6);
        for a in Activity::ALL {
            let base = self.base_rates[a.index()];
            let mut linked = self.archetypes.iter().enumerate().flat_map(|(i, arch)| {
                arch.links.iter().filter(move |l| l.activity == a).map(move |l| (i, l.probability))
            });
            let first = linked.next();
            if linked.next().is_some() {
                return Err(PaceError::Config(format!("{a} is linked to more than one archetype")));
            }
            let rule = if let Some((i, p)) = first {
                if self.irregular.activity == a {
                    return Err(PaceError::Config(format!("{a} is linked to an archetype and the irregular trait")));
                }
                LabelRule {
                    activity: a,
                    source: LabelSource::Archetype(i),
                    p_holder: p,
                    p_other: solve_p_other(base, holding[i], p, a)?,
                }
            } else if self.irregular.activity == a {
                let t = &self.irregular;
                LabelRule {
                    activity: a,
                    source: LabelSource::Irregular,
                    p_holder: t.probability,
                    p_other: solve_p_other(base, t.prevalence, t.probability, a)?,
                }
            } else {
                LabelRule {
                    activity: a,
                    source: LabelSource::Base,
                    p_holder: base,
                    p_other: base,
                }
            };
            rules.push(rule);
        }
        Ok(rules)
    }

    pub fn user_id(&self, index: usize) -> String {
        let width = self.users.saturating_sub(1).to_string().len().max(4);
        format!("u{index:0width$}")
    }
}

/// The latent draws behind one synthetic user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTraits {
    pub primary: usize,
    pub holds: Vec<bool>,
    pub intensity: Vec<f64>,
    pub irregular: bool,
    pub daily_streams: f64,
}

/// One user's generated records.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthUser {
    pub traits: UserTraits,
    pub events: Vec<StreamEvent>,
    pub favorites: Vec<FavoritesRecord>,
    pub labels: ActivityLabels,
}

fn unit_mass(rates: &[f64; SLOTS]) -> [f64; SLOTS] {
    let total: f64 = rates.iter().sum();
    let mut out = *rates;
    out.iter_mut().for_each(|r| *r /= total);
    out
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

fn album_of(track: u64) -> u64 {
    track / TRACKS_PER_ALBUM
}

/// Precomputed, user-independent parts of the model.
struct Model<'a> {
    config: &'a SynthConfig,
    profiles: Vec<[f64; SLOTS]>,
    ratios: Vec<Vec<SlotRatios>>,
    background: [f64; SLOTS],
    background_ratios: Vec<SlotRatios>,
    rules: Vec<LabelRule>,
}

impl<'a> Model<'a> {
    fn new(config: &'a SynthConfig) -> Result<Self> {
        config.validate()?;
        Ok(Model {
            config,
            profiles: config.archetypes.iter().map(|a| unit_mass(&a.rates())).collect(),
            ratios: config.archetypes.iter().map(Archetype::ratios).collect(),
            background: unit_mass(&config.background.profile.rates()),
            background_ratios: config.background.profile.ratios(),
            rules: config.label_rules()?,
        })
    }

    fn draw_traits(&self, rng: &mut ChaCha8Rng) -> UserTraits {
        let c = self.config;
        let primary = sample_index(rng, &c.mixture);
        let n = c.archetypes.len();
        let mut holds = vec![false; n];
        let mut intensity = vec![0.0; n];
        for i in 0..n {
            let secondary = rng.random_bool(c.secondary_rate);
            if i == primary {
                holds[i] = true;
                intensity[i] = rng.random_range(c.primary_intensity[0]..=c.primary_intensity[1]);
            } else if secondary {
                holds[i] = true;
                intensity[i] = rng.random_range(c.secondary_intensity[0]..=c.secondary_intensity[1]);
            }
        }
        let irregular = rng.random_bool(c.irregular.prevalence);
        let z: f64 = rng.sample(StandardNormal);
        let daily_streams = c.daily_streams_median * (c.daily_streams_sigma * z).exp();
        UserTraits {
            primary,
            holds,
            intensity,
            irregular,
            daily_streams,
        }
    }

    fn generate_user(&self, index: usize) -> SynthUser {
        let c = self.config;
        let user_seed = seed::derive_index(seed::derive(c.seed, "synth"), index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(user_seed);
        let user_id = c.user_id(index);
        let traits = self.draw_traits(&mut rng);

        // Per-component hourly rates; the background sits at index n.
        let n = c.archetypes.len();
        let mut components: Vec<[f64; SLOTS]> = Vec::with_capacity(n + 1);
        for i in 0..n {
            let mut r = self.profiles[i];
            let e = if traits.holds[i] { traits.intensity[i] } else { 0.0 };
            r.iter_mut().for_each(|v| *v *= e);
            components.push(r);
        }
        let mut bg = self.background;
        bg.iter_mut().for_each(|v| *v *= c.background.weight);
        components.push(bg);
        let mass: f64 = components.iter().map(|r| r.iter().sum::<f64>()).sum();
        let scale = if mass > 0.0 { 7.0 * traits.daily_streams / mass } else { 0.0 };
        for r in &mut components {
            r.iter_mut().for_each(|v| *v *= scale * (1.0 - c.noise));
        }
        let flat = c.noise * 7.0 * traits.daily_streams / SLOTS as f64;
        let ratios_of = |comp: usize, slot: usize| -> SlotRatios {
            if comp < n {
                self.ratios[comp][slot]
            } else {
                self.background_ratios[slot]
            }
        };

        // Shift organicity so the expected organic share hits the user target.
        let target = c.organic_rate + rng.random_range(-c.organic_spread..=c.organic_spread);
        let mut expected_streams = 0.0;
        let mut expected_organic = 0.0;
        for t in 0..SLOTS {
            for (k, r) in components.iter().enumerate() {
                expected_streams += r[t];
                expected_organic += r[t] * ratios_of(k, t)[1];
            }
            expected_streams += flat;
            expected_organic += flat * self.background_ratios[t][1];
        }
        let t_irr = &c.irregular;
        if traits.irregular {
            let m = t_irr.session_probability * t_irr.session_streams;
            expected_streams += m;
            expected_organic += m * t_irr.organicity;
        }
        let organic_shift = if expected_streams > 0.0 {
            target - expected_organic / expected_streams
        } else {
            0.0
        };

        // Track pools.
        let mut rotation: Vec<u64> = Vec::with_capacity(c.rotation_size);
        while rotation.len() < c.rotation_size {
            let t = rng.random_range(0..c.catalog_size);
            if !rotation.contains(&t) {
                rotation.push(t);
            }
        }
        let fav_tracks = &rotation[..c.liked_tracks];
        let fav_album = album_of(rotation[c.liked_tracks]);
        let mut liked_pool: Vec<u64> = fav_tracks.to_vec();
        for t in fav_album * TRACKS_PER_ALBUM..(fav_album + 1) * TRACKS_PER_ALBUM {
            if !liked_pool.contains(&t) {
                liked_pool.push(t);
            }
        }
        let other_pool: Vec<u64> = rotation[c.liked_tracks..]
            .iter()
            .copied()
            .filter(|t| !liked_pool.contains(t))
            .collect();

        let mut events = Vec::new();
        let mut emit = |rng: &mut ChaCha8Rng, week: usize, slot: usize, ratios: SlotRatios| {
            let [rep, org, liked] = ratios;
            let org = (org + organic_shift).clamp(0.0, 1.0);
            let u: f64 = rng.random();
            let track = if u < liked {
                liked_pool[rng.random_range(0..liked_pool.len())]
            } else if u < rep && !other_pool.is_empty() {
                other_pool[rng.random_range(0..other_pool.len())]
            } else {
                rng.random_range(0..c.catalog_size)
            };
            let origin = if rng.random_bool(org) { Origin::Organic } else { Origin::Algorithmic };
            let listen_duration = if rng.random_bool(c.skip_rate) {
                rng.random_range(1..30)
            } else {
                rng.random_range(30..=360)
            };
            let second = rng.random_range(0..3600);
            events.push(StreamEvent {
                user_id: user_id.clone(),
                timestamp: c.start + week as i64 * WEEK_SECS + slot as i64 * 3600 + second,
                tz_offset_min: Some(c.tz_offset_min),
                track_id: format!("t{track:08}"),
                album_id: format!("a{:07}", album_of(track)),
                origin,
                listen_duration,
            });
        };

        let mut weights = vec![0.0; n + 2];
        for week in 0..c.weeks {
            for slot in 0..SLOTS {
                for (k, r) in components.iter().enumerate() {
                    weights[k] = r[slot];
                }
                weights[n + 1] = flat;
                let total: f64 = weights.iter().sum();
                let count = poisson(&mut rng, total);
                for _ in 0..count {
                    let comp = sample_index(&mut rng, &weights);
                    let ratios = if comp <= n { ratios_of(comp, slot) } else { self.background_ratios[slot] };
                    emit(&mut rng, week, slot, ratios);
                }
            }
            if traits.irregular && rng.random_bool(t_irr.session_probability) {
                let day = rng.random_range(0..7usize);
                let hour = t_irr.hours[rng.random_range(0..t_irr.hours.len())] as usize;
                let count = poisson(&mut rng, t_irr.session_streams);
                for _ in 0..count {
                    emit(&mut rng, week, day * 24 + hour, [t_irr.repetition, t_irr.organicity, t_irr.liked]);
                }
            }
        }
        events.sort_by_key(|e| e.timestamp);

        let mut favorites: Vec<FavoritesRecord> = fav_tracks
            .iter()
            .map(|t| FavoritesRecord {
                user_id: user_id.clone(),
                kind: FavoriteKind::Track,
                item_id: format!("t{t:08}"),
            })
            .collect();
        favorites.push(FavoritesRecord {
            user_id: user_id.clone(),
            kind: FavoriteKind::Album,
            item_id: format!("a{fav_album:07}"),
        });

        let labels = self.draw_labels(&mut rng, &user_id, &traits);
        SynthUser {
            traits,
            events,
            favorites,
            labels,
        }
    }

    fn draw_labels(&self, rng: &mut ChaCha8Rng, user_id: &str, traits: &UserTraits) -> ActivityLabels {
        let mut answers = [false; 6];
        for rule in &self.rules {
            let holder = match rule.source {
                LabelSource::Base => false,
                LabelSource::Archetype(i) => traits.holds[i],
                LabelSource::Irregular => traits.irregular,
            };
            let p = if holder { rule.p_holder } else { rule.p_other };
            answers[rule.activity.index()] = rng.random_bool(p);
        }
        // Working-age users dominate the commuting and office archetypes.
        let working = traits.holds.iter().zip(&self.config.archetypes).any(|(&h, a)| {
            h && a.links.iter().any(|l| matches!(l.activity, Activity::Transport | Activity::Work))
        });
        let age_weights: [f64; AGE_GROUPS as usize] = if working {
            [0.08, 0.3, 0.32, 0.2, 0.1]
        } else {
            [0.22, 0.26, 0.2, 0.16, 0.16]
        };
        let age_group = sample_index(rng, &age_weights) as u8;
        let gender = sample_index(rng, &[0.48, 0.48, 0.04]) as u8;
        debug_assert!(gender < GENDERS);
        ActivityLabels {
            user_id: user_id.to_string(),
            answers,
            age_group,
            gender,
        }
    }
}

/// Generates a single user; `index` selects the derived seed.
pub fn generate_user(config: &SynthConfig, index: usize) -> Result<SynthUser> {
    Ok(Model::new(config)?.generate_user(index))
}

/// Generates every user in memory, in user order.
pub fn generate(config: &SynthConfig) -> Result<Vec<SynthUser>> {
    let model = Model::new(config)?;
    Ok((0..config.users).into_par_iter().map(|i| model.generate_user(i)).collect())
}

/// Paths written by [`generate_to_dir`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthFiles {
    pub events: PathBuf,
    pub favorites: PathBuf,
    pub labels: PathBuf,
    pub period: StudyPeriod,
    pub events_written: u64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| PaceError::io(path, e))?;
    Ok(BufWriter::with_capacity(1 << 20, f))
}

/// Streams `events.csv`, `favorites.csv` and `labels.csv` into `dir`,
/// generating users in parallel chunks and writing them in user order.
pub fn generate_to_dir(config: &SynthConfig, dir: &Path) -> Result<SynthFiles> {
    let model = Model::new(config)?;
    std::fs::create_dir_all(dir).map_err(|e| PaceError::io(dir, e))?;
    let files = SynthFiles {
        events: dir.join("events.csv"),
        favorites: dir.join("favorites.csv"),
        labels: dir.join("labels.csv"),
        period: config.period(),
        events_written: 0,
    };
    let mut ev_out = create(&files.events)?;
    let mut fav_out = create(&files.favorites)?;
    let mut lab_out = create(&files.labels)?;
    writeln!(ev_out, "{EVENTS_HEADER}")?;
    writeln!(fav_out, "{FAVORITES_HEADER}")?;
    writeln!(lab_out, "{LABELS_HEADER}")?;

    let mut written = 0u64;
    const CHUNK: usize = 128;
    for start in (0..config.users).step_by(CHUNK) {
        let end = (start + CHUNK).min(config.users);
        let users: Vec<SynthUser> = (start..end).into_par_iter().map(|i| model.generate_user(i)).collect();
        for u in users {
            // Body only: headers were written above.
            let mut buf = Vec::with_capacity(u.events.len() * 56);
            crate::ingest::write_events(&mut buf, &u.events)?;
            ev_out.write_all(&buf[EVENTS_HEADER.len() + 1..])?;
            let mut buf = Vec::new();
            crate::ingest::write_favorites(&mut buf, &u.favorites)?;
            fav_out.write_all(&buf[FAVORITES_HEADER.len() + 1..])?;
            let mut buf = Vec::new();
            write_labels(&mut buf, [&u.labels])?;
            lab_out.write_all(&buf[LABELS_HEADER.len() + 1..])?;
            written += u.events.len() as u64;
        }
    }
    ev_out.flush()?;
    fav_out.flush()?;
    lab_out.flush()?;
    Ok(SynthFiles {
        events_written: written,
        ..files
    })
}

/// Ground truth of the generator.
#[derive(Debug, Clone)]
pub struct PlantedTruth {
    /// One normalized 4 x 168 profile per archetype, in config order.
    pub profiles: Vec<UserSignal>,
    pub rules: Vec<LabelRule>,
}

/// Normalized archetype profiles (volume = rates, ratio channels = the
/// slot ratios where the profile has mass) and the label rules.
pub fn planted_truth(config: &SynthConfig) -> Result<PlantedTruth> {
    config.validate()?;
    let mut profiles = Vec::with_capacity(config.archetypes.len());
    for a in &config.archetypes {
        let mut raw = UserSignal::zeros(a.name.clone(), Stage::Raw);
        let rates = a.rates();
        let ratios = a.ratios();
        for t in 0..SLOTS {
            raw.values[[0, t]] = rates[t];
            if rates[t] > 0.0 {
                for c in 1..CHANNELS {
                    raw.values[[c, t]] = ratios[t][c - 1];
                }
            }
        }
        profiles.push(signals::normalize(signals::smooth(raw)?)?);
    }
    Ok(PlantedTruth {
        profiles,
        rules: config.label_rules()?,
    })
}

/// Stacks planted profiles as rows (channel-major), for correlation checks.
pub fn planted_matrix(truth: &PlantedTruth) -> Array2<f64> {
    let mut m = Array2::zeros((truth.profiles.len(), CHANNELS * SLOTS));
    for (i, p) in truth.profiles.iter().enumerate() {
        m.row_mut(i).assign(&ndarray::Array1::from(p.stacked()));
    }
    m
}
