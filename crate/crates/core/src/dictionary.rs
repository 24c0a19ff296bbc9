//! Multivariate dictionary learning with L1-sparse codes.
//!
//! Signals are the channel-major stacked rows of a [`SignalSet`], so the
//! per-channel reconstruction sum equals the plain squared Frobenius norm of
//! the stacked residual. Learning alternates two exact block minimizations of
//!
//! ```text
//! sum_i ||s_i - D^T g_i||^2 + lambda * sum_i |g_i|_1
//! ```
//!
//! * sparse coding: cyclic coordinate descent on each code, warm-started
//!   from the previous codes, in Gram form;
//! * dictionary update: one cyclic pass of block coordinate descent over the
//!   atoms, each projected onto the unit L2 ball.
//!
//! Both half-steps never increase the objective.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PaceError, Result};
use crate::io::UserMatrix;
use crate::signals::{SignalSet, CHANNELS, SLOTS};

/// Slack allowed on the unit-norm atom constraint.
pub const NORM_SLACK: f64 = 1e-9;

pub const DEFAULT_ATOMS: usize = 32;
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// `K` atoms stored as rows, each a stacked channel-major signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub atoms: Array2<f64>,
    pub channels: usize,
    pub slots: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Dictionary {
    pub fn from_atoms(
        atoms: Array2<f64>,
        channels: usize,
        slots: usize,
        lambda: f64,
        seed: u64,
    ) -> Result<Self> {
        if atoms.ncols() != channels * slots {
            return Err(PaceError::Shape(format!(
                "atoms have {} values, expected {channels} x {slots}",
                atoms.ncols()
            )));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(PaceError::NonFinite("dictionary".into()));
        }
        for (k, atom) in atoms.rows().into_iter().enumerate() {
            let norm = atom.dot(&atom).sqrt();
            if norm > 1.0 + NORM_SLACK {
                return Err(PaceError::Config(format!("atom {k} has norm {norm} > 1")));
            }
        }
        Ok(Dictionary {
            atoms,
            channels,
            slots,
            lambda,
            seed,
        })
    }

    /// Single-channel dictionary over arbitrary-length signals.
    pub fn plain(atoms: Array2<f64>) -> Result<Self> {
        let dim = atoms.ncols();
        Self::from_atoms(atoms, 1, dim, 0.0, 0)
    }

    pub fn k(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atom(&self, k: usize) -> ArrayView1<'_, f64> {
        self.atoms.row(k)
    }

    /// The `dim x K` matrix with atoms as columns.
    pub fn stacked(&self) -> ArrayView2<'_, f64> {
        self.atoms.t()
    }

    pub fn gram(&self) -> Array2<f64> {
        self.atoms.dot(&self.atoms.t())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub atoms: usize,
    pub lambda: f64,
    pub outer_iters: usize,
    pub lasso_tol: f64,
    pub lasso_max_sweeps: usize,
    pub seed: u64,
    /// Replace unused atoms by the worst-reconstructed signal. Off by
    /// default; when on, the objective is no longer guaranteed monotone.
    pub reseed_unused: bool,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            atoms: DEFAULT_ATOMS,
            lambda: DEFAULT_LAMBDA,
            outer_iters: 100,
            lasso_tol: 1e-8,
            lasso_max_sweeps: 1000,
            seed: 0,
            reseed_unused: false,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.atoms == 0 {
            return Err(PaceError::Config("atom count must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(PaceError::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.lasso_tol > 0.0) || self.lasso_max_sweeps == 0 {
            return Err(PaceError::Config("lasso tolerance and sweep cap must be positive".into()));
        }
        Ok(())
    }

    pub fn coder_settings(&self) -> CoderSettings {
        CoderSettings {
            lambda: self.lambda,
            tol: self.lasso_tol,
            max_sweeps: self.lasso_max_sweeps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoderSettings {
    pub lambda: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn check_finite(values: ArrayView1<'_, f64>, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PaceError::NonFinite(what.into()))
    }
}

/// Sum of squared residuals plus the L1 penalty.
pub fn objective(
    signals: ArrayView2<'_, f64>,
    dict: &Dictionary,
    codes: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<f64> {
    if signals.ncols() != dict.dim() || codes.ncols() != dict.k() || codes.nrows() != signals.nrows() {
        return Err(PaceError::Shape(format!(
            "signals {:?}, dictionary {} x {}, codes {:?}",
            signals.dim(),
            dict.k(),
            dict.dim(),
            codes.dim()
        )));
    }
    let recon = codes.dot(&dict.atoms);
    let residual: f64 = Zip::from(&signals)
        .and(&recon)
        .fold(0.0, |acc, s, r| acc + (s - r) * (s - r));
    let l1: f64 = codes.iter().map(|g| g.abs()).sum();
    Ok(residual + lambda * l1)
}

/// Outcome of one sparse-coding solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeResult {
    pub code: Array1<f64>,
    /// Objective value at `code`.
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
}

/// Cyclic coordinate-descent Lasso solver bound to a fixed dictionary.
pub struct SparseCoder<'a> {
    dict: &'a Dictionary,
    gram: Array2<f64>,
    settings: CoderSettings,
}

impl<'a> SparseCoder<'a> {
    pub fn new(dict: &'a Dictionary, settings: CoderSettings) -> Result<Self> {
        if !(settings.lambda >= 0.0) || !(settings.tol > 0.0) || settings.max_sweeps == 0 {
            return Err(PaceError::Config(format!("invalid coder settings {settings:?}")));
        }
        Ok(SparseCoder {
            dict,
            gram: dict.gram(),
            settings,
        })
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    /// Solves `min ||s - D^T g||^2 + lambda |g|_1`, starting from `warm`
    /// (or zero). Stops once a full sweep moves no coordinate by `tol` or
    /// more and the subgradient optimality violation is below `tol`.
    pub fn code(&self, signal: ArrayView1<'_, f64>, warm: Option<ArrayView1<'_, f64>>) -> Result<CodeResult> {
        if signal.len() != self.dict.dim() {
            return Err(PaceError::Shape(format!(
                "signal of length {} for dictionary of dimension {}",
                signal.len(),
                self.dict.dim()
            )));
        }
        check_finite(signal, "signal")?;
        let k = self.dict.k();
        let b = self.dict.atoms.dot(&signal);
        let mut code = match warm {
            Some(w) if w.len() == k => w.to_owned(),
            Some(w) => {
                return Err(PaceError::Shape(format!("warm start of length {} for {k} atoms", w.len())))
            }
            None => Array1::zeros(k),
        };
        let half_lambda = 0.5 * self.settings.lambda;
        let g = &self.gram;
        // r = b - G code
        let mut r = &b - &g.dot(&code);
        let mut sweeps = 0;
        let mut converged = false;
        while sweeps < self.settings.max_sweeps {
            sweeps += 1;
            let mut max_delta = 0.0f64;
            for j in 0..k {
                let gjj = g[[j, j]];
                let old = code[j];
                let new = if gjj > 0.0 {
                    soft_threshold(r[j] + gjj * old, half_lambda) / gjj
                } else {
                    0.0
                };
                let delta = new - old;
                if delta != 0.0 {
                    code[j] = new;
                    r.scaled_add(-delta, &g.column(j));
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if max_delta < self.settings.tol {
                r = &b - &g.dot(&code);
                if kkt_from_residual(r.view(), code.view(), self.settings.lambda) < self.settings.tol {
                    converged = true;
                    break;
                }
            }
        }
        let ss = signal.dot(&signal);
        let objective = quad_objective(ss, b.view(), g, code.view(), self.settings.lambda);
        Ok(CodeResult {
            code,
            objective,
            sweeps,
            converged,
        })
    }

    /// Largest subgradient optimality violation of `code` for `signal`.
    pub fn kkt_violation(&self, signal: ArrayView1<'_, f64>, code: ArrayView1<'_, f64>) -> f64 {
        let b = self.dict.atoms.dot(&signal);
        let r = &b - &self.gram.dot(&code);
        kkt_from_residual(r.view(), code, self.settings.lambda)
    }
}

/// `r = D s - G g`; the smooth gradient is `-2 r`.
fn kkt_from_residual(r: ArrayView1<'_, f64>, code: ArrayView1<'_, f64>, lambda: f64) -> f64 {
    r.iter()
        .zip(code.iter())
        .map(|(&rk, &gk)| {
            let grad = -2.0 * rk;
            if gk == 0.0 {
                (grad.abs() - lambda).max(0.0)
            } else {
                (grad + lambda * gk.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

fn quad_objective(ss: f64, b: ArrayView1<'_, f64>, g: &Array2<f64>, code: ArrayView1<'_, f64>, lambda: f64) -> f64 {
    ss - 2.0 * b.dot(&code) + code.dot(&g.dot(&code)) + lambda * code.iter().map(|c| c.abs()).sum::<f64>()
}

/// One-off sparse code of a single signal from a zero start.
pub fn sparse_code(
    signal: ArrayView1<'_, f64>,
    dict: &Dictionary,
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<Array1<f64>> {
    let coder = SparseCoder::new(
        dict,
        CoderSettings {
            lambda,
            tol,
            max_sweeps,
        },
    )?;
    Ok(coder.code(signal, None)?.code)
}

/// Codes every row; rows run in parallel, results gathered in row order.
fn code_rows(
    signals: ArrayView2<'_, f64>,
    coder: &SparseCoder<'_>,
    warm: Option<&Array2<f64>>,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let n = signals.nrows();
    let results: Vec<CodeResult> = (0..n)
        .into_par_iter()
        .map(|i| coder.code(signals.row(i), warm.map(|w| w.row(i))))
        .collect::<Result<_>>()?;
    let unconverged = results.iter().filter(|r| !r.converged).count();
    if unconverged > 0 {
        log::debug!("{unconverged} of {n} codes hit the sweep cap");
    }
    let mut codes = Array2::zeros((n, coder.dict.k()));
    let mut objectives = Vec::with_capacity(n);
    for (i, r) in results.into_iter().enumerate() {
        codes.row_mut(i).assign(&r.code);
        objectives.push(r.objective);
    }
    Ok((codes, objectives))
}

/// Sufficient statistics of the codes: `A = G^T G` (K x K) and
/// `B = G^T S` (K x dim).
struct CodeStats {
    a: Array2<f64>,
    b: Array2<f64>,
}

fn code_stats(signals: ArrayView2<'_, f64>, codes: ArrayView2<'_, f64>) -> CodeStats {
    let a = codes.t().dot(&codes);
    // Columns are independent sums over users in fixed order.
    let dim = signals.ncols();
    let k = codes.ncols();
    let columns: Vec<Array1<f64>> = (0..dim)
        .into_par_iter()
        .map(|c| codes.t().dot(&signals.column(c)))
        .collect();
    let mut b = Array2::zeros((k, dim));
    for (c, col) in columns.into_iter().enumerate() {
        b.column_mut(c).assign(&col);
    }
    CodeStats { a, b }
}

fn update_from_stats(dict: &mut Dictionary, stats: &CodeStats) -> Vec<usize> {
    let mut unused = Vec::new();
    for j in 0..dict.k() {
        let ajj = stats.a[[j, j]];
        if ajj <= 0.0 {
            unused.push(j);
            continue;
        }
        // u = d_j + (B_j - sum_l A_jl d_l) / A_jj
        let recon = stats.a.row(j).dot(&dict.atoms);
        let mut u = dict.atoms.row(j).to_owned();
        Zip::from(&mut u)
            .and(&stats.b.row(j))
            .and(&recon)
            .for_each(|u, &bj, &rj| *u += (bj - rj) / ajj);
        let norm = u.dot(&u).sqrt();
        if norm > 1.0 {
            u /= norm;
        }
        dict.atoms.row_mut(j).assign(&u);
    }
    unused
}

/// One cyclic pass of block coordinate descent over the atoms with codes
/// held fixed. Atoms no signal uses are left unchanged.
pub fn update_dictionary(signals: ArrayView2<'_, f64>, dict: &Dictionary, codes: ArrayView2<'_, f64>) -> Result<Dictionary> {
    if signals.ncols() != dict.dim() || codes.ncols() != dict.k() || codes.nrows() != signals.nrows() {
        return Err(PaceError::Shape("signals, dictionary and codes disagree".into()));
    }
    let stats = code_stats(signals, codes);
    let mut out = dict.clone();
    update_from_stats(&mut out, &stats);
    Ok(out)
}

fn stats_objective(ss: f64, dict: &Dictionary, stats: &CodeStats, l1: f64, lambda: f64) -> f64 {
    let cross: f64 = Zip::from(&dict.atoms).and(&stats.b).fold(0.0, |acc, d, b| acc + d * b);
    let quad: f64 = Zip::from(&dict.gram()).and(&stats.a).fold(0.0, |acc, g, a| acc + g * a);
    ss - 2.0 * cross + quad + lambda * l1
}

#[derive(Debug, Clone)]
pub struct LearnOutput {
    pub dictionary: Dictionary,
    pub codes: Array2<f64>,
    /// Objective after the initial coding pass and after every half-step.
    pub objective_trace: Vec<f64>,
}

fn initial_atoms(signals: ArrayView2<'_, f64>, k: usize, seed: u64) -> Array2<f64> {
    let nonzero: Vec<usize> = (0..signals.nrows())
        .filter(|&i| signals.row(i).iter().any(|&v| v != 0.0))
        .collect();
    let candidates: Vec<usize> = if nonzero.len() >= k {
        nonzero
    } else {
        (0..signals.nrows()).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, candidates.len(), k);
    let mut atoms = Array2::zeros((k, signals.ncols()));
    for (j, p) in picks.iter().enumerate() {
        let row = signals.row(candidates[p]);
        let norm = row.dot(&row).sqrt();
        let scale = if norm > 1.0 { 1.0 / norm } else { 1.0 };
        atoms.row_mut(j).assign(&(&row * scale));
    }
    atoms
}

/// Learns a dictionary on the given rows (one signal per row).
///
/// Atoms start as `K` distinct non-zero rows drawn without replacement by
/// a ChaCha8 generator seeded with `config.seed`, scaled into the unit ball.
pub fn learn_matrix(signals: ArrayView2<'_, f64>, channels: usize, slots: usize, config: &LearnConfig) -> Result<LearnOutput> {
    config.validate()?;
    if signals.ncols() != channels * slots {
        return Err(PaceError::Shape(format!(
            "signals have {} columns, expected {}",
            signals.ncols(),
            channels * slots
        )));
    }
    if signals.nrows() < config.atoms {
        return Err(PaceError::Config(format!(
            "{} training rows for {} atoms",
            signals.nrows(),
            config.atoms
        )));
    }
    if signals.iter().any(|v| !v.is_finite()) {
        return Err(PaceError::NonFinite("training signals".into()));
    }
    let mut dict = Dictionary::from_atoms(
        initial_atoms(signals, config.atoms, config.seed),
        channels,
        slots,
        config.lambda,
        config.seed,
    )?;
    let settings = config.coder_settings();
    let ss: f64 = signals.iter().map(|v| v * v).sum();

    let coder = SparseCoder::new(&dict, settings)?;
    let (mut codes, objs) = code_rows(signals, &coder, None)?;
    let mut trace = vec![objs.iter().sum::<f64>()];

    for iter in 0..config.outer_iters {
        let stats = code_stats(signals, codes.view());
        let unused = update_from_stats(&mut dict, &stats);
        let l1: f64 = codes.iter().map(|c| c.abs()).sum();
        trace.push(stats_objective(ss, &dict, &stats, l1, config.lambda));
        if config.reseed_unused && !unused.is_empty() {
            reseed(&mut dict, signals, codes.view(), &unused);
        }

        let coder = SparseCoder::new(&dict, settings)?;
        let (next, objs) = code_rows(signals, &coder, Some(&codes))?;
        codes = next;
        trace.push(objs.iter().sum::<f64>());
        log::debug!("outer iteration {iter}: objective {}", trace[trace.len() - 1]);
    }
    Ok(LearnOutput {
        dictionary: dict,
        codes,
        objective_trace: trace,
    })
}

fn reseed(dict: &mut Dictionary, signals: ArrayView2<'_, f64>, codes: ArrayView2<'_, f64>, unused: &[usize]) {
    let recon = codes.dot(&dict.atoms);
    let mut errors: Vec<(usize, f64)> = (0..signals.nrows())
        .map(|i| {
            let d = &signals.row(i) - &recon.row(i);
            (i, d.dot(&d))
        })
        .collect();
    errors.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (&j, &(i, _)) in unused.iter().zip(errors.iter()) {
        let row = signals.row(i);
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            dict.atoms.row_mut(j).assign(&(&row / norm));
        }
    }
}

/// Learns a dictionary over a set of weekly signals.
pub fn learn(signals: &SignalSet, config: &LearnConfig) -> Result<LearnOutput> {
    learn_matrix(signals.matrix.view(), CHANNELS, SLOTS, config)
}

/// One user's code over the dictionary atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub user_id: String,
    pub code: Vec<f64>,
}

/// Codes every row of `signals` against a fixed dictionary, from a zero start.
pub fn embed(signals: &UserMatrix, dict: &Dictionary, settings: CoderSettings) -> Result<UserMatrix> {
    let coder = SparseCoder::new(dict, settings)?;
    let (codes, _) = code_rows(signals.matrix.view(), &coder, None)?;
    UserMatrix::new(signals.users.clone(), codes)
}

pub fn embeddings(codes: &UserMatrix) -> Vec<Embedding> {
    codes
        .users
        .iter()
        .zip(codes.matrix.axis_iter(Axis(0)))
        .map(|(u, row)| Embedding {
            user_id: u.clone(),
            code: row.to_vec(),
        })
        .collect()
}
