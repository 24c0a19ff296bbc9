//! Activity-prediction evaluation of user embeddings against baselines.

mod cv;
mod logreg;
mod roc;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cv::{grid_search_cv, stratified_folds, CvResult, DEFAULT_FOLDS, DEFAULT_L2_GRID};
pub use logreg::{gradient, loss, sigmoid, train_logreg, LogRegFit, LogRegModel, LogRegOptions};
pub use roc::roc_auc;

use crate::error::{PaceError, Result};
use crate::io::UserMatrix;

pub const DEFAULT_TEST_FRACTION: f64 = 0.33;
pub const AGE_GROUPS: u8 = 5;
pub const GENDERS: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    WakeUp,
    Transport,
    Work,
    Sports,
    Friends,
    Asleep,
}

impl Activity {
    pub const ALL: [Activity; 6] = [
        Activity::WakeUp,
        Activity::Transport,
        Activity::Work,
        Activity::Sports,
        Activity::Friends,
        Activity::Asleep,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Activity::WakeUp => "wake_up",
            Activity::Transport => "transport",
            Activity::Work => "work",
            Activity::Sports => "sports",
            Activity::Friends => "friends",
            Activity::Asleep => "asleep",
        }
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Activity::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown activity {s:?}"))
    }
}

/// Survey answers of one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityLabels {
    pub user_id: String,
    /// Indexed by [`Activity::index`].
    pub answers: [bool; 6],
    pub age_group: u8,
    pub gender: u8,
}

impl ActivityLabels {
    pub fn answer(&self, a: Activity) -> bool {
        self.answers[a.index()]
    }
}

pub const LABELS_HEADER: &str = "user_id,wake_up,transport,work,sports,friends,asleep,age_group,gender";

fn parse_code(raw: &str, max: u8, what: &str, line: usize) -> Result<u8> {
    raw.trim()
        .parse::<u8>()
        .ok()
        .filter(|&v| v < max)
        .ok_or_else(|| PaceError::Record {
            line,
            message: format!("{what} {raw:?} must be an integer in [0, {max})"),
        })
}

/// Parses the labels table. Any bad record is fatal: labels are small and
/// hand-checked.
pub fn parse_labels<R: Read>(reader: R) -> Result<BTreeMap<String, ActivityLabels>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected: Vec<&str> = LABELS_HEADER.split(',').collect();
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(PaceError::Header(format!("labels header must be {LABELS_HEADER:?}")));
    }
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != expected.len() {
            return Err(PaceError::Record {
                line,
                message: format!("expected {} fields, found {}", expected.len(), rec.len()),
            });
        }
        let mut answers = [false; 6];
        for (i, a) in answers.iter_mut().enumerate() {
            *a = parse_code(&rec[i + 1], 2, Activity::ALL[i].name(), line)? == 1;
        }
        let labels = ActivityLabels {
            user_id: rec[0].trim().to_string(),
            answers,
            age_group: parse_code(&rec[7], AGE_GROUPS, "age_group", line)?,
            gender: parse_code(&rec[8], GENDERS, "gender", line)?,
        };
        if out.insert(labels.user_id.clone(), labels).is_some() {
            return Err(PaceError::Record {
                line,
                message: "duplicate user_id".into(),
            });
        }
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<String, ActivityLabels>> {
    let f = File::open(path).map_err(|e| PaceError::io(path, e))?;
    parse_labels(BufReader::new(f))
}

pub fn write_labels<'a, W: Write>(mut out: W, labels: impl IntoIterator<Item = &'a ActivityLabels>) -> Result<()> {
    writeln!(out, "{LABELS_HEADER}")?;
    for l in labels {
        write!(out, "{}", l.user_id)?;
        for a in l.answers {
            write!(out, ",{}", u8::from(a))?;
        }
        writeln!(out, ",{},{}", l.age_group, l.gender)?;
    }
    out.flush()?;
    Ok(())
}

/// Feature sets compared on every activity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// (1) total number of valid streams.
    TotalVolume,
    /// (2) age group and gender codes.
    GenderAge,
    /// (3) the other five activity answers.
    OtherActivities,
    /// (a) sparse codes.
    Embedding,
    /// (b) sparse codes, age group and gender.
    EmbeddingGenderAge,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::TotalVolume,
        Variant::GenderAge,
        Variant::OtherActivities,
        Variant::Embedding,
        Variant::EmbeddingGenderAge,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Variant::TotalVolume => "1",
            Variant::GenderAge => "2",
            Variant::OtherActivities => "3",
            Variant::Embedding => "a",
            Variant::EmbeddingGenderAge => "b",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Variant::TotalVolume => "Total Volume",
            Variant::GenderAge => "Gender & age",
            Variant::OtherActivities => "Other Activities",
            Variant::Embedding => "Embeddings",
            Variant::EmbeddingGenderAge => "Embeddings + Gender & age",
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.code() == s)
            .ok_or_else(|| format!("unknown variant {s:?} (1|2|3|a|b)"))
    }
}

/// Disjoint train/test user lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "user_id,set")?;
        let mut rows: Vec<(&String, &str)> = self
            .train
            .iter()
            .map(|u| (u, "train"))
            .chain(self.test.iter().map(|u| (u, "test")))
            .collect();
        rows.sort();
        for (u, set) in rows {
            writeln!(out, "{u},{set}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Split> {
        let f = File::open(path).map_err(|e| PaceError::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(f));
        let mut split = Split {
            train: Vec::new(),
            test: Vec::new(),
        };
        for rec in rdr.records() {
            let rec = rec?;
            match rec.get(1) {
                Some("train") => split.train.push(rec[0].to_string()),
                Some("test") => split.test.push(rec[0].to_string()),
                other => return Err(PaceError::format(path, format!("bad split set {other:?}"))),
            }
        }
        Ok(split)
    }
}

/// Seeded uniform split with `round(test_fraction * n)` test users. Users
/// are sorted first, so the split does not depend on input order.
pub fn split_users(users: &[String], test_fraction: f64, seed: u64) -> Result<Split> {
    if users.len() < 10 {
        return Err(PaceError::Config(format!("need at least 10 users to split, got {}", users.len())));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(PaceError::Config(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let mut sorted = users.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != users.len() {
        return Err(PaceError::Config("duplicate users in split input".into()));
    }
    let n_test = (test_fraction * sorted.len() as f64).round() as usize;
    if n_test == 0 || n_test == sorted.len() {
        return Err(PaceError::Config(format!("degenerate split: {n_test} of {} users in test", sorted.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let mut test = sorted.split_off(sorted.len() - n_test);
    sorted.sort();
    test.sort();
    Ok(Split { train: sorted, test })
}

/// Column-wise standardization fit on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let means: Vec<f64> = x.axis_iter(Axis(1)).map(|c| c.sum() / n).collect();
        let stds = x
            .axis_iter(Axis(1))
            .zip(&means)
            .map(|(c, m)| (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt())
            .collect();
        Standardizer { means, stds }
    }

    /// Centers and scales in place; constant columns become zero.
    pub fn apply(&self, x: &mut Array2<f64>) {
        for (j, mut col) in x.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            if s > 0.0 {
                col.mapv_inplace(|v| (v - m) / s);
            } else {
                col.fill(0.0);
            }
        }
    }
}

/// Standardized features; the first `n_train` rows are the training users.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub users: Vec<String>,
    pub values: Array2<f64>,
    pub names: Vec<String>,
    pub n_train: usize,
    pub standardizer: Standardizer,
}

impl FeatureMatrix {
    pub fn train(&self) -> ArrayView2<'_, f64> {
        self.values.slice(ndarray::s![..self.n_train, ..])
    }

    pub fn test(&self) -> ArrayView2<'_, f64> {
        self.values.slice(ndarray::s![self.n_train.., ..])
    }
}

/// Everything a feature variant can draw from.
pub struct FeatureInputs<'a> {
    pub codes: &'a UserMatrix,
    pub labels: &'a BTreeMap<String, ActivityLabels>,
    /// Total valid streams per user over the study period.
    pub total_streams: &'a BTreeMap<String, u64>,
}

impl FeatureInputs<'_> {
    fn label(&self, user: &str) -> Result<&ActivityLabels> {
        self.labels
            .get(user)
            .ok_or_else(|| PaceError::Shape(format!("user {user:?} has no labels")))
    }
}

fn raw_features(variant: Variant, target: Activity, inputs: &FeatureInputs<'_>, users: &[String]) -> Result<(Array2<f64>, Vec<String>)> {
    let k = inputs.codes.ncols();
    let code_names = || (0..k).map(|j| format!("atom_{j}"));
    let names: Vec<String> = match variant {
        Variant::TotalVolume => vec!["total_volume".into()],
        Variant::GenderAge => vec!["age_group".into(), "gender".into()],
        Variant::OtherActivities => Activity::ALL
            .into_iter()
            .filter(|&a| a != target)
            .map(|a| a.name().to_string())
            .collect(),
        Variant::Embedding => code_names().collect(),
        Variant::EmbeddingGenderAge => code_names().chain(["age_group".into(), "gender".into()]).collect(),
    };
    let codes = match variant {
        Variant::Embedding | Variant::EmbeddingGenderAge => Some(inputs.codes.select(users)?),
        _ => None,
    };
    let mut x = Array2::zeros((users.len(), names.len()));
    for (i, u) in users.iter().enumerate() {
        let mut row = x.row_mut(i);
        match variant {
            Variant::TotalVolume => {
                let total = inputs
                    .total_streams
                    .get(u)
                    .ok_or_else(|| PaceError::Shape(format!("user {u:?} has no stream total")))?;
                row[0] = *total as f64;
            }
            Variant::GenderAge => {
                let l = inputs.label(u)?;
                row[0] = l.age_group as f64;
                row[1] = l.gender as f64;
            }
            Variant::OtherActivities => {
                let l = inputs.label(u)?;
                let others = Activity::ALL.into_iter().filter(|&a| a != target);
                for (j, a) in others.enumerate() {
                    row[j] = f64::from(u8::from(l.answer(a)));
                }
            }
            Variant::Embedding | Variant::EmbeddingGenderAge => {
                let codes = codes.as_ref().expect("codes selected above");
                row.slice_mut(ndarray::s![..k]).assign(&codes.matrix.row(i));
                if variant == Variant::EmbeddingGenderAge {
                    let l = inputs.label(u)?;
                    row[k] = l.age_group as f64;
                    row[k + 1] = l.gender as f64;
                }
            }
        }
    }
    Ok((x, names))
}

/// Builds a variant's features for train users followed by test users,
/// standardized with training statistics only.
pub fn build_features(variant: Variant, target: Activity, inputs: &FeatureInputs<'_>, split: &Split) -> Result<FeatureMatrix> {
    let users: Vec<String> = split.train.iter().chain(&split.test).cloned().collect();
    let (mut values, names) = raw_features(variant, target, inputs, &users)?;
    let n_train = split.train.len();
    let standardizer = Standardizer::fit(values.slice(ndarray::s![..n_train, ..]));
    standardizer.apply(&mut values);
    Ok(FeatureMatrix {
        users,
        values,
        names,
        n_train,
        standardizer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub l2_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub logreg: LogRegOptions,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            l2_grid: DEFAULT_L2_GRID.to_vec(),
            folds: DEFAULT_FOLDS,
            seed: 0,
            logreg: LogRegOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub variant: Variant,
    pub activity: Activity,
    pub auc: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Variant-major, activities in [`Activity::ALL`] order.
    pub cells: Vec<EvalCell>,
    /// Standardized-feature models of variant (a), one per activity.
    pub embedding_models: Vec<LogRegModel>,
    pub n_train: usize,
    pub n_test: usize,
}

fn labels_for(inputs: &FeatureInputs<'_>, users: &[String], a: Activity) -> Result<Vec<bool>> {
    users.iter().map(|u| inputs.label(u).map(|l| l.answer(a))).collect()
}

/// Restricts a split to users present in every input; returns the dropped
/// count.
pub fn restrict_split(split: &Split, inputs: &FeatureInputs<'_>) -> (Split, usize) {
    let codes: std::collections::HashSet<&str> = inputs.codes.users.iter().map(String::as_str).collect();
    let keep = |u: &String| {
        inputs.labels.contains_key(u) && inputs.total_streams.contains_key(u) && codes.contains(u.as_str())
    };
    let train: Vec<String> = split.train.iter().filter(|u| keep(u)).cloned().collect();
    let test: Vec<String> = split.test.iter().filter(|u| keep(u)).cloned().collect();
    let dropped = split.train.len() + split.test.len() - train.len() - test.len();
    (Split { train, test }, dropped)
}

fn run_job(variant: Variant, activity: Activity, inputs: &FeatureInputs<'_>, split: &Split, config: &EvalConfig) -> Result<(EvalCell, LogRegModel)> {
    let features = build_features(variant, activity, inputs, split)?;
    let y_train = labels_for(inputs, &split.train, activity)?;
    let y_test = labels_for(inputs, &split.test, activity)?;
    let cv = grid_search_cv(features.train(), &y_train, &config.l2_grid, config.folds, config.seed, &config.logreg)?;
    let fit = train_logreg(features.train(), &y_train, cv.best_l2, &config.logreg)?;
    let scores = fit.model.decision(features.test());
    let auc = roc_auc(scores.as_slice().expect("contiguous"), &y_test)?;
    Ok((
        EvalCell {
            variant,
            activity,
            auc,
            l2: cv.best_l2,
        },
        fit.model,
    ))
}

/// Trains and scores every (variant, activity) pair. Jobs run in parallel;
/// each is single-threaded and seeded, and results are gathered in order.
pub fn evaluate_all(inputs: &FeatureInputs<'_>, split: &Split, config: &EvalConfig) -> Result<EvalReport> {
    let jobs: Vec<(Variant, Activity)> = Variant::ALL
        .into_iter()
        .flat_map(|v| Activity::ALL.into_iter().map(move |a| (v, a)))
        .collect();
    let results: Vec<(EvalCell, LogRegModel)> = jobs
        .par_iter()
        .map(|&(v, a)| run_job(v, a, inputs, split, config))
        .collect::<Result<_>>()?;
    let embedding_models = results
        .iter()
        .filter(|(c, _)| c.variant == Variant::Embedding)
        .map(|(_, m)| m.clone())
        .collect();
    Ok(EvalReport {
        cells: results.into_iter().map(|(c, _)| c).collect(),
        embedding_models,
        n_train: split.train.len(),
        n_test: split.test.len(),
    })
}

impl EvalReport {
    pub fn auc(&self, variant: Variant, activity: Activity) -> f64 {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.activity == activity)
            .map(|c| c.auc)
            .expect("report covers every cell")
    }

    pub fn mean_auc(&self, variant: Variant) -> f64 {
        Activity::ALL.iter().map(|&a| self.auc(variant, a)).sum::<f64>() / Activity::ALL.len() as f64
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "variant,activity,auc,l2")?;
        for c in &self.cells {
            writeln!(out, "{},{},{:?},{:?}", c.variant.code(), c.activity, c.auc, c.l2)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Aligned variant x activity table of test AUCs.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<6}", "");
        for a in Activity::ALL {
            let _ = write!(s, "{:>11}", a.name());
        }
        s.push('\n');
        for v in Variant::ALL {
            let _ = write!(s, "{:<6}", format!("({})", v.code()));
            for a in Activity::ALL {
                let _ = write!(s, "{:>11.3}", self.auc(v, a));
            }
            let _ = writeln!(s, "   {}", v.title());
        }
        s
    }

    /// Atom x activity signed coefficients of the embedding-only models.
    pub fn coefficient_matrix(&self) -> Array2<f64> {
        coefficient_matrix(&self.embedding_models)
    }
}

/// Stacks per-activity model weights into a `K x activities` matrix.
pub fn coefficient_matrix(models: &[LogRegModel]) -> Array2<f64> {
    let k = models.first().map_or(0, |m| m.weights.len());
    let mut out = Array2::zeros((k, models.len()));
    for (j, m) in models.iter().enumerate() {
        out.column_mut(j).assign(&Array1::from(m.weights.clone()));
    }
    out
}

/// Long-format `atom,activity,coefficient` rows, atom-major.
pub fn write_coefficient_report<W: Write>(mut out: W, models: &[LogRegModel]) -> Result<()> {
    let m = coefficient_matrix(models);
    writeln!(out, "atom,activity,coefficient")?;
    for atom in 0..m.nrows() {
        for (j, a) in Activity::ALL.iter().enumerate().take(m.ncols()) {
            writeln!(out, "{atom},{a},{:?}", m[[atom, j]])?;
        }
    }
    out.flush()?;
    Ok(())
}
