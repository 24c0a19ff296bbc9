//! Weekly multichannel listening signals.
//!
//! Each user is summarized by four channels of 168 hourly slots (Monday 00h
//! is slot 0). A slot holds the mean, over every local one-hour window of the
//! study period falling on that hour of the week, of a per-window feature:
//! stream count, share of repeated tracks, share of organic streams and share
//! of liked tracks. Channels are then smoothed with a circular length-3 box
//! filter and normalized to zero mean and unit max-abs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PaceError, Result};
use crate::ingest::{Origin, StreamEvent, StudyPeriod, UserProfile};
use crate::io::UserMatrix;

pub const CHANNELS: usize = 4;
pub const SLOTS: usize = 168;
pub const SIGNAL_LEN: usize = CHANNELS * SLOTS;

/// A track counts as repeated when its lifetime play count exceeds this.
pub const REPEAT_THRESHOLD: u64 = 3;

const SECONDS_PER_HOUR: i64 = 3600;
const SECONDS_PER_WEEK: i64 = 7 * 86_400;

/// Centered channels whose max-abs falls below this (relative to the input
/// scale) are treated as constant.
const DEGENERATE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Volume,
    Repetition,
    Organicity,
    Liked,
}

impl Channel {
    pub const ALL: [Channel; CHANNELS] = [
        Channel::Volume,
        Channel::Repetition,
        Channel::Organicity,
        Channel::Liked,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Volume => "volume",
            Channel::Repetition => "repetition",
            Channel::Organicity => "organicity",
            Channel::Liked => "liked",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Hour of the week, `day_of_week * 24 + hour_of_day` with Monday as day 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WeeklySlot(u8);

impl WeeklySlot {
    pub fn new(day: usize, hour: usize) -> Option<Self> {
        (day < 7 && hour < 24).then(|| WeeklySlot((day * 24 + hour) as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn day(self) -> usize {
        self.index() / 24
    }

    pub fn hour(self) -> usize {
        self.index() % 24
    }

    /// Slot of a local hour counted from the epoch (1970-01-01 was a Thursday).
    fn of_local_hour(local_hour: i64) -> Self {
        let day = local_hour.div_euclid(24);
        let dow = (day + 3).rem_euclid(7);
        WeeklySlot((dow * 24 + local_hour.rem_euclid(24)) as u8)
    }
}

fn local_hour(timestamp: i64, tz_offset_min: i32) -> i64 {
    (timestamp + 60 * tz_offset_min as i64).div_euclid(SECONDS_PER_HOUR)
}

pub fn weekly_slot(timestamp: i64, tz_offset_min: i32) -> WeeklySlot {
    WeeklySlot::of_local_hour(local_hour(timestamp, tz_offset_min))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Raw,
    Smoothed,
    Normalized,
}

/// One user's 4 x 168 series, rows in [`Channel::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSignal {
    pub user_id: String,
    pub values: Array2<f64>,
    pub stage: Stage,
}

impl UserSignal {
    pub fn zeros(user_id: impl Into<String>, stage: Stage) -> Self {
        UserSignal {
            user_id: user_id.into(),
            values: Array2::zeros((CHANNELS, SLOTS)),
            stage,
        }
    }

    pub fn channel(&self, c: Channel) -> ArrayView1<'_, f64> {
        self.values.row(c.index())
    }

    /// Channel-major flattening: volume slots 0..168, then repetition, ...
    pub fn stacked(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    fn expect_stage(&self, stage: Stage) -> Result<()> {
        if self.stage != stage {
            return Err(PaceError::Config(format!(
                "signal of {} is {:?}, expected {:?}",
                self.user_id, self.stage, stage
            )));
        }
        Ok(())
    }
}

/// Per-window feature values, `[volume, repetition, organicity, liked]`.
/// An empty window is all zeros.
pub fn window_features<'a, I>(profile: &UserProfile, events: I) -> [f64; CHANNELS]
where
    I: IntoIterator<Item = &'a StreamEvent>,
{
    let (mut n, mut repeated, mut organic, mut liked) = (0u64, 0u64, 0u64, 0u64);
    for e in events {
        n += 1;
        repeated += u64::from(profile.play_count(&e.track_id) > REPEAT_THRESHOLD);
        organic += u64::from(e.origin == Origin::Organic);
        liked += u64::from(profile.is_liked(&e.track_id));
    }
    if n == 0 {
        return [0.0; CHANNELS];
    }
    let n_f = n as f64;
    [
        n_f,
        repeated as f64 / n_f,
        organic as f64 / n_f,
        liked as f64 / n_f,
    ]
}

/// Number of local one-hour windows overlapping the period, per weekly slot.
pub fn windows_per_slot(period: &StudyPeriod, tz_offset_min: i32) -> [u32; SLOTS] {
    let off = 60 * tz_offset_min as i64;
    let first = (period.start + off).div_euclid(SECONDS_PER_HOUR);
    let last = (period.end + off + SECONDS_PER_HOUR - 1).div_euclid(SECONDS_PER_HOUR) - 1;
    let mut counts = [0u32; SLOTS];
    let total = (last - first + 1).max(0);
    let full_weeks = total / 168;
    if full_weeks > 0 {
        counts.iter_mut().for_each(|c| *c = full_weeks as u32);
    }
    for h in (first + full_weeks * 168)..=last {
        counts[WeeklySlot::of_local_hour(h).index()] += 1;
    }
    counts
}

/// Raw weekly aggregate of one user's valid streams.
///
/// Slot assignment uses each event's own offset (or `default_tz_offset_min`);
/// the window counts use the offset of the user's earliest event.
pub fn aggregate(
    profile: &UserProfile,
    events: &[&StreamEvent],
    period: &StudyPeriod,
    default_tz_offset_min: i32,
) -> Result<UserSignal> {
    if period.len_secs() < SECONDS_PER_WEEK {
        return Err(PaceError::Config(format!(
            "study period of {} s is shorter than one week",
            period.len_secs()
        )));
    }
    let mut signal = UserSignal::zeros(profile.user_id.clone(), Stage::Raw);
    let user_tz = events
        .iter()
        .min_by_key(|e| e.timestamp)
        .and_then(|e| e.tz_offset_min)
        .unwrap_or(default_tz_offset_min);
    let divisors = windows_per_slot(period, user_tz);

    let mut windows: BTreeMap<i64, Vec<&StreamEvent>> = BTreeMap::new();
    for &e in events {
        let tz = e.tz_offset_min.unwrap_or(default_tz_offset_min);
        windows.entry(local_hour(e.timestamp, tz)).or_default().push(e);
    }
    for (hour, window) in &windows {
        let slot = WeeklySlot::of_local_hour(*hour).index();
        let feats = window_features(profile, window.iter().copied());
        for (c, v) in feats.iter().enumerate() {
            signal.values[[c, slot]] += v;
        }
    }
    for slot in 0..SLOTS {
        let d = divisors[slot].max(1) as f64;
        for c in 0..CHANNELS {
            signal.values[[c, slot]] /= d;
        }
    }
    Ok(signal)
}

/// Circular moving average with kernel (1/3, 1/3, 1/3) over the week.
pub fn smooth(signal: UserSignal) -> Result<UserSignal> {
    signal.expect_stage(Stage::Raw)?;
    let mut out = UserSignal::zeros(signal.user_id.clone(), Stage::Smoothed);
    for c in 0..CHANNELS {
        let x = signal.values.row(c);
        for t in 0..SLOTS {
            let prev = x[(t + SLOTS - 1) % SLOTS];
            let next = x[(t + 1) % SLOTS];
            out.values[[c, t]] = (prev + x[t] + next) / 3.0;
        }
    }
    Ok(out)
}

/// Centers each channel and scales its max-abs to 1; constant channels
/// become all zeros.
pub fn normalize_channel(x: &mut [f64]) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PaceError::NonFinite("signal channel".into()));
    }
    let n = x.len() as f64;
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mean = x.iter().sum::<f64>() / n;
    x.iter_mut().for_each(|v| *v -= mean);
    let maxabs = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if maxabs <= DEGENERATE_RTOL * scale {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(());
    }
    x.iter_mut().for_each(|v| *v /= maxabs);
    // Re-center: division can leave a rounding-level mean behind.
    let residual = x.iter().sum::<f64>() / n;
    x.iter_mut().for_each(|v| *v -= residual);
    Ok(())
}

pub fn normalize(signal: UserSignal) -> Result<UserSignal> {
    signal.expect_stage(Stage::Smoothed)?;
    let mut out = signal;
    for mut row in out.values.axis_iter_mut(Axis(0)) {
        let slice = row
            .as_slice_mut()
            .expect("signal rows are contiguous");
        normalize_channel(slice)?;
    }
    out.stage = Stage::Normalized;
    Ok(out)
}

/// Row-per-user stack of normalized signals, lexicographic user order.
pub type SignalSet = UserMatrix;

pub fn user_signal(
    profile: &UserProfile,
    events: &[&StreamEvent],
    period: &StudyPeriod,
    default_tz_offset_min: i32,
) -> Result<UserSignal> {
    let raw = aggregate(profile, events, period, default_tz_offset_min)?;
    normalize(smooth(raw)?)
}

/// Builds the normalized signal of every profiled user.
pub fn build_signal_set(
    profiles: &BTreeMap<String, UserProfile>,
    events: &[StreamEvent],
    period: &StudyPeriod,
    default_tz_offset_min: i32,
) -> Result<SignalSet> {
    let mut by_user: HashMap<&str, Vec<&StreamEvent>> = HashMap::new();
    for e in events {
        by_user.entry(e.user_id.as_str()).or_default().push(e);
    }
    let users: Vec<&UserProfile> = profiles.values().collect();
    let rows: Vec<Vec<f64>> = users
        .par_iter()
        .map(|p| {
            let evs = by_user.get(p.user_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            user_signal(p, evs, period, default_tz_offset_min).map(|s| s.stacked())
        })
        .collect::<Result<_>>()?;

    let mut matrix = Array2::zeros((rows.len(), SIGNAL_LEN));
    for (i, row) in rows.iter().enumerate() {
        matrix.row_mut(i).assign(&ArrayView1::from(row.as_slice()));
    }
    Ok(UserMatrix {
        users: users.iter().map(|p| p.user_id.clone()).collect(),
        matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use chrono::{TimeZone, Utc};

    fn ts(y: i32, m: u32, d: u32, h: u32, min: u32) -> i64 {
        Utc.with_ymd_and_hms(y, m, d, h, min, 0).unwrap().timestamp()
    }

    #[test]
    fn slot_of_known_dates() {
        // 2024-01-01 is a Monday.
        assert_eq!(weekly_slot(ts(2024, 1, 1, 0, 30), 0).index(), 0);
        assert_eq!(weekly_slot(ts(2024, 1, 2, 10, 15), 0).index(), 34);
        assert_eq!(weekly_slot(ts(2024, 1, 7, 23, 59), 0).index(), 167);
        // 23:30 UTC Sunday is Monday 00:30 at UTC+1.
        assert_eq!(weekly_slot(ts(2023, 12, 31, 23, 30), 60).index(), 0);
        let s = WeeklySlot::new(1, 10).unwrap();
        assert_eq!((s.day(), s.hour(), s.index()), (1, 10, 34));
        assert!(WeeklySlot::new(7, 0).is_none());
    }

    fn profile_with(counts: &[(&str, u64)], liked: &[&str]) -> UserProfile {
        UserProfile {
            user_id: "u".into(),
            play_count_per_track: counts.iter().map(|(t, c)| (t.to_string(), *c)).collect(),
            liked_tracks: liked.iter().map(|t| t.to_string()).collect(),
            total_valid_streams: counts.iter().map(|c| c.1).sum(),
            active_days: 1,
        }
    }

    fn ev(ts: i64, track: &str, origin: Origin) -> StreamEvent {
        StreamEvent {
            user_id: "u".into(),
            timestamp: ts,
            tz_offset_min: None,
            track_id: track.into(),
            album_id: "a".into(),
            origin,
            listen_duration: 60,
        }
    }

    #[test]
    fn window_feature_ratios() {
        let p = profile_with(&[("t", 4), ("s", 1)], &["s"]);
        let evs = [
            ev(0, "s", Origin::Organic),
            ev(1, "s", Origin::Organic),
            ev(2, "s", Origin::Organic),
            ev(3, "s", Origin::Algorithmic),
        ];
        let f = window_features(&p, &evs);
        assert_eq!(f, [4.0, 0.0, 0.75, 1.0]);

        let evs = [ev(0, "t", Origin::Organic), ev(1, "t", Origin::Organic)];
        assert_eq!(window_features(&p, &evs)[1], 1.0);
        assert_eq!(window_features(&p, &[]), [0.0; 4]);
    }

    #[test]
    fn aggregate_averages_over_weeks() {
        let start = ts(2024, 1, 1, 0, 0);
        let period = StudyPeriod::new(start, start + 2 * SECONDS_PER_WEEK).unwrap();
        let p = profile_with(&[("t", 4)], &[]);
        let tuesday_10 = ts(2024, 1, 2, 10, 5);
        let evs: Vec<_> = (0..4).map(|i| ev(tuesday_10 + i, "t", Origin::Organic)).collect();
        let refs: Vec<_> = evs.iter().collect();
        let raw = aggregate(&p, &refs, &period, 0).unwrap();
        assert_eq!(raw.values[[0, 34]], 2.0);
        assert_eq!(raw.values[[2, 34]], 0.5);
        assert_eq!(raw.values.sum(), 2.0 + 0.5 + 0.5);

        let empty = aggregate(&p, &[], &period, 0).unwrap();
        assert!(empty.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aggregate_constant_stream_per_window() {
        let start = ts(2024, 1, 1, 0, 0);
        let period = StudyPeriod::new(start, start + 3 * SECONDS_PER_WEEK).unwrap();
        let p = profile_with(&[("t", 3)], &[]);
        let evs: Vec<_> = (0..3)
            .map(|w| ev(start + w * SECONDS_PER_WEEK + 5 * 3600 + 10, "t", Origin::Organic))
            .collect();
        let refs: Vec<_> = evs.iter().collect();
        let raw = aggregate(&p, &refs, &period, 0).unwrap();
        assert_eq!(raw.values[[0, 5]], 1.0);
    }

    #[test]
    fn short_period_is_fatal() {
        let p = profile_with(&[], &[]);
        let period = StudyPeriod::new(0, SECONDS_PER_WEEK - 1).unwrap();
        assert!(aggregate(&p, &[], &period, 0).is_err());
    }

    #[test]
    fn partial_weeks_count_only_covered_windows() {
        let start = ts(2024, 1, 1, 0, 0);
        // One week and one extra hour: only slot 0 gets a second window.
        let period = StudyPeriod::new(start, start + SECONDS_PER_WEEK + 3600).unwrap();
        let counts = windows_per_slot(&period, 0);
        assert_eq!(counts[0], 2);
        assert!(counts[1..].iter().all(|&c| c == 1));
        // Half-hour offset: local windows straddle UTC hours.
        let counts = windows_per_slot(&StudyPeriod::new(start, start + SECONDS_PER_WEEK).unwrap(), 330);
        assert_eq!(counts.iter().sum::<u32>(), 169);
    }

    #[test]
    fn smoothing_impulse_and_constants() {
        let mut raw = UserSignal::zeros("u", Stage::Raw);
        raw.values[[0, 0]] = 1.0;
        raw.values.row_mut(1).fill(0.7);
        let s = smooth(raw).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(s.values[[0, 167]], third);
        assert_eq!(s.values[[0, 0]], third);
        assert_eq!(s.values[[0, 1]], third);
        assert_eq!(s.values.row(0).iter().filter(|&&v| v != 0.0).count(), 3);
        for &v in s.values.row(1) {
            assert_abs_diff_eq!(v, 0.7, epsilon = 1e-15);
        }
        assert!(s.values.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stage_is_enforced() {
        let sig = UserSignal::zeros("u", Stage::Smoothed);
        assert!(smooth(sig.clone()).is_err());
        assert!(normalize(UserSignal::zeros("u", Stage::Raw)).is_err());
        assert!(normalize(sig).is_ok());
    }

    #[test]
    fn normalize_toy_and_degenerate() {
        let mut x = [0.0, 1.0, 2.0];
        normalize_channel(&mut x).unwrap();
        assert_eq!(x, [-1.0, 0.0, 1.0]);

        let mut c = [1.0 / 3.0; 168];
        normalize_channel(&mut c).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));

        let mut bad = [0.0, f64::NAN];
        assert!(matches!(normalize_channel(&mut bad), Err(PaceError::NonFinite(_))));
    }

    #[test]
    fn signal_set_layout() {
        let start = ts(2024, 1, 1, 0, 0);
        let period = StudyPeriod::new(start, start + 2 * SECONDS_PER_WEEK).unwrap();
        let mut profiles = BTreeMap::new();
        for u in ["zed", "amy"] {
            let mut p = profile_with(&[("t", 1)], &[]);
            p.user_id = u.into();
            profiles.insert(u.to_string(), p);
        }
        let mut events = Vec::new();
        for (u, h) in [("zed", 3), ("amy", 40), ("amy", 41)] {
            let mut e = ev(start + h * 3600, "t", Origin::Organic);
            e.user_id = u.into();
            events.push(e);
        }
        let set = build_signal_set(&profiles, &events, &period, 0).unwrap();
        assert_eq!(set.users, vec!["amy", "zed"]);
        assert_eq!(set.matrix.dim(), (2, SIGNAL_LEN));

        let amy_events: Vec<_> = events.iter().filter(|e| e.user_id == "amy").collect();
        let amy = user_signal(&profiles["amy"], &amy_events, &period, 0).unwrap();
        let row = set.matrix.row(0);
        for t in 0..SLOTS {
            assert_eq!(row[t], amy.values[[0, t]]);
            assert_eq!(row[SLOTS + t], amy.values[[1, t]]);
        }
    }
}
