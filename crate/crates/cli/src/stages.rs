//! One function per subcommand. Each returns the files it wrote; callers
//! record them in the run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pace_core::dictionary::{self, CoderSettings, LearnConfig};
use pace_core::evaluate::{self, write_coefficient_report, EvalConfig, FeatureInputs, LogRegOptions};
use pace_core::ingest::{self, EventSchema, StudyPeriod};
use pace_core::io::{self as pio, MatrixFormat, UserMatrix};
use pace_core::signals::{self, Channel};
use pace_core::{seed, synth, Split, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::args::*;

pub const EVENTS_FILE: &str = "events.csv";
pub const FAVORITES_FILE: &str = "favorites.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const VALID_EVENTS_FILE: &str = "valid_events.csv";
pub const USER_SUMMARY_FILE: &str = "user_summary.csv";
pub const INGEST_SUMMARY_FILE: &str = "ingest_summary.json";
pub const SPLIT_FILE: &str = "split.csv";
pub const TRAIN_CODES_STEM: &str = "train_codes";
pub const TRACE_FILE: &str = "objective_trace.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const TABLE_FILE: &str = "table.txt";
pub const COEFFICIENTS_FILE: &str = "coefficients.csv";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn synth_config(opts: &SynthOptions, seed: u64) -> Result<SynthConfig> {
    let mut config = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            SynthConfig::from_toml(&text)?
        }
        None => SynthConfig::default(),
    };
    config.seed = seed;
    if let Some(u) = opts.users {
        config.users = u;
    }
    if let Some(w) = opts.weeks {
        config.weeks = w;
    }
    if let Some(n) = opts.noise {
        config.noise = n;
    }
    config.validate()?;
    Ok(config)
}

pub fn run_synth(args: &SynthArgs) -> Result<Vec<PathBuf>> {
    let config = synth_config(&args.synth, args.seed)?;
    let files = synth::generate_to_dir(&config, &args.out)?;
    log::info!(
        "synthesized {} users, {} events over [{}, {})",
        config.users,
        files.events_written,
        files.period.start,
        files.period.end
    );
    Ok(vec![files.events, files.favorites, files.labels])
}

/// Resolved ingest settings and counts, written as JSON next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub period: StudyPeriod,
    pub default_tz_offset_min: i32,
    pub min_listen_secs: u32,
    pub min_daily_streams: f64,
    pub events_read: usize,
    pub events_malformed: usize,
    pub events_short: usize,
    pub events_outside_period: usize,
    pub events_inactive_users: usize,
    pub events_kept: usize,
    pub favorites_read: usize,
    pub favorites_malformed: usize,
    pub favorites_unknown_user: usize,
    pub users_seen: usize,
    pub users_active: usize,
}

pub fn run_ingest(args: &IngestArgs) -> Result<Vec<PathBuf>> {
    let o = &args.options;
    let parsed = ingest::read_events(&args.events, &EventSchema::default())?;
    for bad in parsed.malformed.iter().take(5) {
        log::warn!("{}: {bad}", args.events.display());
    }
    let events_read = parsed.total();
    let events_malformed = parsed.malformed.len();
    let period = match (o.period_start, o.period_end) {
        (Some(s), Some(e)) => StudyPeriod::new(s, e)?,
        (s, e) => {
            let Some(covering) = StudyPeriod::covering(&parsed.records) else {
                bail!("{} holds no events", args.events.display());
            };
            StudyPeriod::new(s.unwrap_or(covering.start), e.unwrap_or(covering.end))?
        }
    };
    let users_seen = parsed.records.iter().map(|e| e.user_id.as_str()).collect::<BTreeSet<_>>().len();

    let before = parsed.records.len();
    let mut events = ingest::filter_valid_streams(parsed.records, o.min_listen_secs);
    let events_short = before - events.len();
    let events_outside_period = ingest::restrict_to_period(&mut events, &period);
    let active = ingest::filter_active_users(&events, &period, o.min_daily_streams)?;
    let before = events.len();
    events.retain(|e| active.contains(&e.user_id));
    let events_inactive_users = before - events.len();

    let favs = ingest::read_favorites(&args.favorites)?;
    let favorites_read = favs.total();
    let favorites_malformed = favs.malformed.len();
    let known: BTreeSet<&str> = events.iter().map(|e| e.user_id.as_str()).collect();
    let favorites: Vec<_> = favs.records.iter().filter(|f| known.contains(f.user_id.as_str())).cloned().collect();
    let favorites_unknown_user = favs.records.len() - favorites.len();
    let profiles = ingest::build_profiles(&events, &favorites, o.default_tz_offset_min).profiles;

    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let events_path = args.out.join(VALID_EVENTS_FILE);
    ingest::write_events(create(&events_path)?, &events)?;
    let favorites_path = args.out.join(FAVORITES_FILE);
    ingest::write_favorites(create(&favorites_path)?, &favorites)?;
    let summary_path = args.out.join(USER_SUMMARY_FILE);
    let mut w = create(&summary_path)?;
    writeln!(w, "user_id,total_valid_streams,active_days,distinct_tracks,liked_tracks")?;
    for p in profiles.values() {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.user_id,
            p.total_valid_streams,
            p.active_days,
            p.play_count_per_track.len(),
            p.liked_tracks.len()
        )?;
    }
    w.flush()?;

    let summary = IngestSummary {
        period,
        default_tz_offset_min: o.default_tz_offset_min,
        min_listen_secs: o.min_listen_secs,
        min_daily_streams: o.min_daily_streams,
        events_read,
        events_malformed,
        events_short,
        events_outside_period,
        events_inactive_users,
        events_kept: events.len(),
        favorites_read,
        favorites_malformed,
        favorites_unknown_user,
        users_seen,
        users_active: profiles.len(),
    };
    let json_path = args.out.join(INGEST_SUMMARY_FILE);
    let mut w = create(&json_path)?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    log::info!("kept {} of {} users, {} events", summary.users_active, users_seen, summary.events_kept);
    Ok(vec![events_path, favorites_path, summary_path, json_path])
}

pub fn read_ingest_summary(dir: &Path) -> Result<IngestSummary> {
    let path = dir.join(INGEST_SUMMARY_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed {}", path.display()))
}

pub fn run_signals(args: &SignalsArgs) -> Result<Vec<PathBuf>> {
    let summary = read_ingest_summary(&args.ingest)?;
    let events = ingest::read_events(&args.ingest.join(VALID_EVENTS_FILE), &EventSchema::default())?.records;
    let favorites = ingest::read_favorites(&args.ingest.join(FAVORITES_FILE))?.records;
    let profiles = ingest::build_profiles(&events, &favorites, summary.default_tz_offset_min).profiles;
    let set = signals::build_signal_set(&profiles, &events, &summary.period, summary.default_tz_offset_min)?;
    pio::write_user_matrix(&args.out, &set, args.format)?;
    log::info!("built {} signals", set.len());
    Ok(vec![pio::users_path(&args.out), pio::matrix_path(&args.out, args.format)])
}

fn read_matrix_stem(stem: &Path) -> Result<UserMatrix> {
    let format = pio::detect_format(stem)
        .with_context(|| format!("no {0}.csv or {0}.bin found", stem.display()))?;
    Ok(pio::read_user_matrix(stem, format)?)
}

fn dictionary_format(path: &Path) -> MatrixFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => MatrixFormat::Binary,
        _ => MatrixFormat::Csv,
    }
}

pub fn dictionary_path(dir: &Path, format: MatrixFormat) -> PathBuf {
    dir.join(format!("dictionary.{}", format.extension()))
}

pub fn learn_config(opts: &LearnOptions, master_seed: u64) -> LearnConfig {
    LearnConfig {
        atoms: opts.atoms,
        lambda: opts.lambda,
        outer_iters: opts.iters,
        lasso_tol: opts.lasso_tol,
        lasso_max_sweeps: opts.lasso_max_sweeps,
        seed: seed::derive(master_seed, "learn"),
        reseed_unused: opts.reseed_unused,
    }
}

pub fn run_learn(args: &LearnArgs) -> Result<Vec<PathBuf>> {
    let set = read_matrix_stem(&args.signals)?;
    let split = match &args.split {
        Some(path) => Split::read(path)?,
        None => evaluate::split_users(&set.users, args.options.test_frac, seed::derive(args.seed, "split"))?,
    };
    let train = set.select(&split.train)?;
    let config = learn_config(&args.options, args.seed);
    let out = dictionary::learn(&train, &config)?;
    log::info!(
        "learned {} atoms on {} users; objective {:?} -> {:?}",
        config.atoms,
        train.len(),
        out.objective_trace.first(),
        out.objective_trace.last()
    );

    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let split_path = args.out.join(SPLIT_FILE);
    split.write(create(&split_path)?)?;
    let dict_path = dictionary_path(&args.out, args.format);
    pio::write_dictionary(&dict_path, &out.dictionary, args.format)?;
    let codes_stem = args.out.join(TRAIN_CODES_STEM);
    pio::write_user_matrix(&codes_stem, &UserMatrix::new(train.users.clone(), out.codes)?, args.format)?;
    let trace_path = args.out.join(TRACE_FILE);
    let mut w = create(&trace_path)?;
    writeln!(w, "step,objective")?;
    for (i, v) in out.objective_trace.iter().enumerate() {
        writeln!(w, "{i},{v:?}")?;
    }
    w.flush()?;
    Ok(vec![
        split_path,
        dict_path,
        pio::users_path(&codes_stem),
        pio::matrix_path(&codes_stem, args.format),
        trace_path,
    ])
}

pub fn run_embed(args: &EmbedArgs) -> Result<Vec<PathBuf>> {
    let set = read_matrix_stem(&args.signals)?;
    let dict = pio::read_dictionary(&args.dictionary, dictionary_format(&args.dictionary))?;
    let settings = CoderSettings {
        lambda: dict.lambda,
        tol: args.lasso_tol,
        max_sweeps: args.lasso_max_sweeps,
    };
    let codes = dictionary::embed(&set, &dict, settings)?;
    pio::write_user_matrix(&args.out, &codes, args.format)?;
    Ok(vec![pio::users_path(&args.out), pio::matrix_path(&args.out, args.format)])
}

pub fn read_user_totals(path: &Path) -> Result<BTreeMap<String, u64>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "total_valid_streams")
        .with_context(|| format!("{} lacks a total_valid_streams column", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let total = rec
            .get(col)
            .and_then(|v| v.parse().ok())
            .with_context(|| format!("{}: bad total on record {}", path.display(), i + 1))?;
        out.insert(rec[0].to_string(), total);
    }
    Ok(out)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn eval_config(opts: &EvalOptions, master_seed: u64) -> EvalConfig {
    EvalConfig {
        l2_grid: opts.l2_grid.clone(),
        folds: opts.folds,
        seed: seed::derive(master_seed, "cv"),
        logreg: LogRegOptions::default(),
    }
}

pub fn run_eval(args: &EvalArgs) -> Result<Vec<PathBuf>> {
    let codes = read_matrix_stem(&args.codes)?;
    let labels = evaluate::read_labels(&args.labels)?;
    let split = Split::read(&args.split)?;
    let totals = read_user_totals(&args.user_summary)?;
    let inputs = FeatureInputs {
        codes: &codes,
        labels: &labels,
        total_streams: &totals,
    };
    let (split, dropped) = evaluate::restrict_split(&split, &inputs);
    if dropped > 0 {
        log::warn!("{dropped} split users lack codes, labels or totals and are skipped");
    }
    let report = evaluate::evaluate_all(&inputs, &split, &eval_config(&args.options, args.seed))?;

    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let report_path = args.out.join(REPORT_FILE);
    report.write_csv(create(&report_path)?)?;
    let table_path = args.out.join(TABLE_FILE);
    let mut w = create(&table_path)?;
    writeln!(w, "ROC AUC on {} test users ({} train)", report.n_test, report.n_train)?;
    w.write_all(report.table().as_bytes())?;
    w.flush()?;
    let coef_path = args.out.join(COEFFICIENTS_FILE);
    write_coefficient_report(create(&coef_path)?, &report.embedding_models)?;
    log::info!("\n{}", report.table());
    Ok(vec![report_path, table_path, coef_path])
}

pub fn run_export_atoms(args: &ExportAtomsArgs) -> Result<Vec<PathBuf>> {
    let dict = pio::read_dictionary(&args.dictionary, dictionary_format(&args.dictionary))?;
    let mut w = create(&args.out)?;
    writeln!(w, "atom,channel,slot,value")?;
    for k in 0..dict.k() {
        let atom = dict.atom(k);
        for c in 0..dict.channels {
            let name = Channel::ALL.get(c).map_or_else(|| c.to_string(), |ch| ch.name().to_string());
            for s in 0..dict.slots {
                writeln!(w, "{k},{name},{s},{:?}", atom[c * dict.slots + s])?;
            }
        }
    }
    w.flush()?;
    Ok(vec![args.out.clone()])
}

/// Stage arguments of a pipeline run, in execution order.
#[derive(Debug, Clone)]
pub struct PipelinePlan {
    pub synth: Option<SynthArgs>,
    pub ingest: IngestArgs,
    pub signals: SignalsArgs,
    pub learn: LearnArgs,
    pub embed: EmbedArgs,
    pub eval: EvalArgs,
    pub export: ExportAtomsArgs,
}

/// Expands pipeline flags into the equivalent staged invocations.
pub fn pipeline_plan(args: &PipelineArgs) -> Result<PipelinePlan> {
    let out = &args.out;
    let synth_dir = out.join("synth");
    let (synth, events, favorites, labels, ingest_opts) = match &args.events {
        Some(events) => (
            None,
            events.clone(),
            args.favorites.clone().context("--favorites is required with --events")?,
            args.labels.clone().context("--labels is required with --events")?,
            args.ingest.clone(),
        ),
        None => {
            let config = synth_config(&args.synth, args.seed)?;
            let period = config.period();
            let mut opts = args.ingest.clone();
            opts.period_start.get_or_insert(period.start);
            opts.period_end.get_or_insert(period.end);
            (
                Some(SynthArgs {
                    synth: args.synth.clone(),
                    seed: args.seed,
                    out: synth_dir.clone(),
                }),
                synth_dir.join(EVENTS_FILE),
                synth_dir.join(FAVORITES_FILE),
                synth_dir.join(LABELS_FILE),
                opts,
            )
        }
    };
    let ingest_dir = out.join("ingest");
    let signals_stem = out.join("signals").join("signals");
    let learn_dir = out.join("learn");
    let codes_stem = out.join("embed").join("codes");
    let dict = dictionary_path(&learn_dir, args.format);
    Ok(PipelinePlan {
        synth,
        ingest: IngestArgs {
            events,
            favorites,
            options: ingest_opts,
            out: ingest_dir.clone(),
        },
        signals: SignalsArgs {
            ingest: ingest_dir.clone(),
            out: signals_stem.clone(),
            format: args.format,
        },
        learn: LearnArgs {
            signals: signals_stem.clone(),
            split: None,
            options: args.learn.clone(),
            seed: args.seed,
            format: args.format,
            out: learn_dir.clone(),
        },
        embed: EmbedArgs {
            signals: signals_stem,
            dictionary: dict.clone(),
            lasso_tol: args.learn.lasso_tol,
            lasso_max_sweeps: args.learn.lasso_max_sweeps,
            format: args.format,
            out: codes_stem.clone(),
        },
        eval: EvalArgs {
            codes: codes_stem,
            labels,
            split: learn_dir.join(SPLIT_FILE),
            user_summary: ingest_dir.join(USER_SUMMARY_FILE),
            options: args.eval.clone(),
            seed: args.seed,
            out: out.join("eval"),
        },
        export: ExportAtomsArgs {
            dictionary: dict,
            out: out.join("atoms.csv"),
        },
    })
}

pub fn run_pipeline(args: &PipelineArgs) -> Result<Vec<PathBuf>> {
    let plan = pipeline_plan(args)?;
    let mut outputs = Vec::new();
    if let Some(s) = &plan.synth {
        outputs.extend(run_synth(s)?);
    }
    outputs.extend(run_ingest(&plan.ingest)?);
    outputs.extend(run_signals(&plan.signals)?);
    outputs.extend(run_learn(&plan.learn)?);
    outputs.extend(run_embed(&plan.embed)?);
    outputs.extend(run_eval(&plan.eval)?);
    outputs.extend(run_export_atoms(&plan.export)?);
    Ok(outputs)
}
