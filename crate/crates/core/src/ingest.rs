//! Event and favorites parsing, validity filters and per-user lookups.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PaceError, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Streams shorter than this are not listening events.
pub const DEFAULT_MIN_LISTEN_SECS: u32 = 30;
pub const DEFAULT_MIN_DAILY_STREAMS: f64 = 6.0;

/// Fraction of malformed records tolerated before parsing fails.
pub const MALFORMED_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Organic,
    Algorithmic,
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "organic" => Ok(Origin::Organic),
            "algorithmic" => Ok(Origin::Algorithmic),
            other => Err(format!("unknown origin {other:?}")),
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Organic => "organic",
            Origin::Algorithmic => "algorithmic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamEvent {
    pub user_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    /// Local offset from UTC in minutes, when the log carries one.
    pub tz_offset_min: Option<i32>,
    pub track_id: String,
    pub album_id: String,
    pub origin: Origin,
    pub listen_duration: u32,
}

/// Half-open interval `[start, end)` of UTC epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyPeriod {
    pub start: i64,
    pub end: i64,
}

impl StudyPeriod {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if end <= start {
            return Err(PaceError::Config(format!(
                "study period [{start}, {end}) is empty"
            )));
        }
        Ok(StudyPeriod { start, end })
    }

    /// Smallest period covering every event, `None` for an empty log.
    pub fn covering(events: &[StreamEvent]) -> Option<Self> {
        let min = events.iter().map(|e| e.timestamp).min()?;
        let max = events.iter().map(|e| e.timestamp).max()?;
        Some(StudyPeriod {
            start: min,
            end: max + 1,
        })
    }

    pub fn contains(&self, timestamp: i64) -> bool {
        self.start <= timestamp && timestamp < self.end
    }

    pub fn len_secs(&self) -> i64 {
        self.end - self.start
    }

    /// Number of calendar days spanned, rounding a partial day up.
    pub fn days(&self) -> i64 {
        (self.len_secs() + SECONDS_PER_DAY - 1) / SECONDS_PER_DAY
    }
}

/// Column names of the events file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSchema {
    pub user_id: String,
    pub timestamp: String,
    pub track_id: String,
    pub album_id: String,
    pub origin: String,
    pub listen_duration: String,
    pub tz_offset_min: String,
}

impl Default for EventSchema {
    fn default() -> Self {
        EventSchema {
            user_id: "user_id".into(),
            timestamp: "timestamp".into(),
            track_id: "track_id".into(),
            album_id: "album_id".into(),
            origin: "origin".into(),
            listen_duration: "listen_duration".into(),
            tz_offset_min: "tz_offset_min".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Result of a tolerant parse: the good records plus one error per bad one.
#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub malformed: Vec<RecordError>,
}

impl<T> Parsed<T> {
    pub fn total(&self) -> usize {
        self.records.len() + self.malformed.len()
    }

    fn check_tolerance(self) -> Result<Self> {
        let total = self.total();
        if total > 0 && self.malformed.len() as f64 > MALFORMED_TOLERANCE * total as f64 {
            return Err(PaceError::TooManyMalformed {
                malformed: self.malformed.len(),
                total,
                first: self.malformed[0].to_string(),
            });
        }
        Ok(self)
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| PaceError::Header(format!("missing column {name:?}")))
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader)
}

struct EventColumns {
    user: usize,
    timestamp: usize,
    track: usize,
    album: usize,
    origin: usize,
    duration: usize,
    tz: Option<usize>,
    width: usize,
}

fn parse_event_record(rec: &csv::StringRecord, cols: &EventColumns) -> std::result::Result<StreamEvent, String> {
    if rec.len() != cols.width {
        return Err(format!("expected {} fields, found {}", cols.width, rec.len()));
    }
    let field = |i: usize| rec.get(i).unwrap_or("").trim();
    let user_id = field(cols.user);
    if user_id.is_empty() {
        return Err("empty user_id".into());
    }
    let timestamp: i64 = field(cols.timestamp)
        .parse()
        .map_err(|_| format!("bad timestamp {:?}", field(cols.timestamp)))?;
    let origin: Origin = field(cols.origin).parse()?;
    let raw_duration = field(cols.duration);
    let duration: i64 = raw_duration
        .parse()
        .map_err(|_| format!("bad listen_duration {raw_duration:?}"))?;
    if duration < 0 {
        return Err(format!("negative listen_duration {duration}"));
    }
    let listen_duration =
        u32::try_from(duration).map_err(|_| format!("listen_duration {duration} out of range"))?;
    let tz_offset_min = match cols.tz.map(field) {
        None | Some("") => None,
        Some(raw) => Some(
            raw.parse::<i32>()
                .map_err(|_| format!("bad tz_offset_min {raw:?}"))?,
        ),
    };
    Ok(StreamEvent {
        user_id: user_id.to_string(),
        timestamp,
        tz_offset_min,
        track_id: field(cols.track).to_string(),
        album_id: field(cols.album).to_string(),
        origin,
        listen_duration,
    })
}

/// Parses a line-delimited events table. Bad records are collected, and the
/// parse fails once they exceed [`MALFORMED_TOLERANCE`] of all records.
pub fn parse_events<R: Read>(reader: R, schema: &EventSchema) -> Result<Parsed<StreamEvent>> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = EventColumns {
        user: column(&headers, &schema.user_id)?,
        timestamp: column(&headers, &schema.timestamp)?,
        track: column(&headers, &schema.track_id)?,
        album: column(&headers, &schema.album_id)?,
        origin: column(&headers, &schema.origin)?,
        duration: column(&headers, &schema.listen_duration)?,
        tz: column(&headers, &schema.tz_offset_min).ok(),
        width: headers.len(),
    };

    let mut parsed = Parsed {
        records: Vec::new(),
        malformed: Vec::new(),
    };
    let mut rec = csv::StringRecord::new();
    loop {
        let line = rdr.position().line() as usize;
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {
                let line = rec.position().map(|p| p.line() as usize).unwrap_or(line);
                match parse_event_record(&rec, &cols) {
                    Ok(ev) => parsed.records.push(ev),
                    Err(message) => parsed.malformed.push(RecordError { line, message }),
                }
            }
            // Invalid UTF-8 and friends: count the record, keep going.
            Err(err) if !err.is_io_error() => parsed.malformed.push(RecordError {
                line: err.position().map(|p| p.line() as usize).unwrap_or(line),
                message: err.to_string(),
            }),
            Err(err) => return Err(err.into()),
        }
    }
    parsed.check_tolerance()
}

pub fn read_events(path: &Path, schema: &EventSchema) -> Result<Parsed<StreamEvent>> {
    let file = File::open(path).map_err(|e| PaceError::io(path, e))?;
    parse_events(BufReader::with_capacity(1 << 20, file), schema)
}

pub const EVENTS_HEADER: &str = "user_id,timestamp,track_id,album_id,origin,listen_duration,tz_offset_min";

/// Writes events in the canonical column order, header included.
pub fn write_events<W: Write>(mut out: W, events: &[StreamEvent]) -> Result<()> {
    writeln!(out, "{EVENTS_HEADER}")?;
    for e in events {
        write!(
            out,
            "{},{},{},{},{},{},",
            e.user_id, e.timestamp, e.track_id, e.album_id, e.origin, e.listen_duration
        )?;
        if let Some(tz) = e.tz_offset_min {
            write!(out, "{tz}")?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FavoriteKind {
    Track,
    Album,
}

impl FromStr for FavoriteKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "track" => Ok(FavoriteKind::Track),
            "album" => Ok(FavoriteKind::Album),
            other => Err(format!("unknown favorite kind {other:?}")),
        }
    }
}

impl fmt::Display for FavoriteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FavoriteKind::Track => "track",
            FavoriteKind::Album => "album",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FavoritesRecord {
    pub user_id: String,
    pub kind: FavoriteKind,
    pub item_id: String,
}

pub const FAVORITES_HEADER: &str = "user_id,kind,item_id";

pub fn parse_favorites<R: Read>(reader: R) -> Result<Parsed<FavoritesRecord>> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    let user = column(&headers, "user_id")?;
    let kind = column(&headers, "kind")?;
    let item = column(&headers, "item_id")?;
    let width = headers.len();

    let mut parsed = Parsed {
        records: Vec::new(),
        malformed: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = match rec {
            Ok(rec) => rec,
            Err(err) if !err.is_io_error() => {
                parsed.malformed.push(RecordError {
                    line: i + 2,
                    message: err.to_string(),
                });
                continue;
            }
            Err(err) => return Err(err.into()),
        };
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 2);
        let result = if rec.len() != width {
            Err(format!("expected {width} fields, found {}", rec.len()))
        } else {
            rec[kind].trim().parse::<FavoriteKind>().map(|k| FavoritesRecord {
                user_id: rec[user].trim().to_string(),
                kind: k,
                item_id: rec[item].trim().to_string(),
            })
        };
        match result {
            Ok(r) => parsed.records.push(r),
            Err(message) => parsed.malformed.push(RecordError { line, message }),
        }
    }
    parsed.check_tolerance()
}

pub fn read_favorites(path: &Path) -> Result<Parsed<FavoritesRecord>> {
    let file = File::open(path).map_err(|e| PaceError::io(path, e))?;
    parse_favorites(BufReader::new(file))
}

pub fn write_favorites<W: Write>(mut out: W, favorites: &[FavoritesRecord]) -> Result<()> {
    writeln!(out, "{FAVORITES_HEADER}")?;
    for f in favorites {
        writeln!(out, "{},{},{}", f.user_id, f.kind, f.item_id)?;
    }
    out.flush()?;
    Ok(())
}

/// Keeps streams listened to for at least `min_secs`, order preserved.
pub fn filter_valid_streams(events: Vec<StreamEvent>, min_secs: u32) -> Vec<StreamEvent> {
    events
        .into_iter()
        .filter(|e| e.listen_duration >= min_secs)
        .collect()
}

/// Drops events outside the study period, returning how many were dropped.
pub fn restrict_to_period(events: &mut Vec<StreamEvent>, period: &StudyPeriod) -> usize {
    let before = events.len();
    events.retain(|e| period.contains(e.timestamp));
    before - events.len()
}

/// Users averaging at least `min_daily` valid streams per calendar day of the
/// study period.
pub fn filter_active_users(
    events: &[StreamEvent],
    period: &StudyPeriod,
    min_daily: f64,
) -> Result<BTreeSet<String>> {
    let days = period.days();
    if days <= 0 {
        return Err(PaceError::Config("study period has zero length".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for e in events {
        *counts.entry(e.user_id.as_str()).or_default() += 1;
    }
    let threshold = min_daily * days as f64;
    Ok(counts
        .into_iter()
        .filter(|&(_, n)| n as f64 >= threshold)
        .map(|(u, _)| u.to_string())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub play_count_per_track: BTreeMap<String, u64>,
    pub liked_tracks: BTreeSet<String>,
    pub total_valid_streams: u64,
    pub active_days: u64,
}

impl UserProfile {
    pub fn play_count(&self, track_id: &str) -> u64 {
        self.play_count_per_track.get(track_id).copied().unwrap_or(0)
    }

    pub fn is_liked(&self, track_id: &str) -> bool {
        self.liked_tracks.contains(track_id)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProfileBuild {
    pub profiles: BTreeMap<String, UserProfile>,
    /// Favorites records naming users absent from the events.
    pub unknown_user_favorites: usize,
}

/// Local calendar day index of an event.
pub fn local_day(timestamp: i64, tz_offset_min: i32) -> i64 {
    (timestamp + 60 * tz_offset_min as i64).div_euclid(SECONDS_PER_DAY)
}

/// Builds lifetime play counts and liked-track sets. Album favorites are
/// expanded through the album ids seen on the user's own events.
pub fn build_profiles(
    events: &[StreamEvent],
    favorites: &[FavoritesRecord],
    default_tz_offset_min: i32,
) -> ProfileBuild {
    let mut profiles: BTreeMap<String, UserProfile> = BTreeMap::new();
    let mut days: HashMap<&str, BTreeSet<i64>> = HashMap::new();
    for e in events {
        let p = profiles
            .entry(e.user_id.clone())
            .or_insert_with(|| UserProfile {
                user_id: e.user_id.clone(),
                ..Default::default()
            });
        *p.play_count_per_track.entry(e.track_id.clone()).or_default() += 1;
        p.total_valid_streams += 1;
        days.entry(&e.user_id)
            .or_default()
            .insert(local_day(e.timestamp, e.tz_offset_min.unwrap_or(default_tz_offset_min)));
    }
    for (user, set) in days {
        if let Some(p) = profiles.get_mut(user) {
            p.active_days = set.len() as u64;
        }
    }

    let mut liked_albums: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    let mut unknown = 0;
    for f in favorites {
        let Some(p) = profiles.get_mut(&f.user_id) else {
            unknown += 1;
            continue;
        };
        match f.kind {
            FavoriteKind::Track => {
                p.liked_tracks.insert(f.item_id.clone());
            }
            FavoriteKind::Album => {
                liked_albums
                    .entry(f.user_id.as_str())
                    .or_default()
                    .insert(f.item_id.as_str());
            }
        }
    }
    if !liked_albums.is_empty() {
        for e in events {
            if let Some(albums) = liked_albums.get(e.user_id.as_str()) {
                if albums.contains(e.album_id.as_str()) {
                    if let Some(p) = profiles.get_mut(&e.user_id) {
                        p.liked_tracks.insert(e.track_id.clone());
                    }
                }
            }
        }
    }
    if unknown > 0 {
        log::warn!("{unknown} favorites records reference users without valid streams");
    }
    ProfileBuild {
        profiles,
        unknown_user_favorites: unknown,
    }
}
