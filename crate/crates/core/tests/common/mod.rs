//! Independent reference implementations shared by the integration tests
//! and the acceptance harness.
#![allow(dead_code)]

pub mod pipeline;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `||s - sum_k g_k d_k||^2 + lambda |g|_1`, computed directly.
pub fn lasso_objective(signal: ArrayView1<'_, f64>, atoms: ArrayView2<'_, f64>, code: &[f64], lambda: f64) -> f64 {
    let mut r = signal.to_owned();
    for (k, &g) in code.iter().enumerate() {
        r.scaled_add(-g, &atoms.row(k));
    }
    r.dot(&r) + lambda * code.iter().map(|g| g.abs()).sum::<f64>()
}

/// Closed form for orthonormal atoms: `g_k = soft(<d_k, s>, lambda / 2)`.
pub fn orthonormal_lasso(signal: ArrayView1<'_, f64>, atoms: ArrayView2<'_, f64>, lambda: f64) -> Vec<f64> {
    atoms
        .rows()
        .into_iter()
        .map(|d| {
            let z = d.dot(&signal);
            z.signum() * (z.abs() - lambda / 2.0).max(0.0)
        })
        .collect()
}

fn solve_small(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    // Gaussian elimination with partial pivoting.
    let n = b.len();
    let mut m = a.clone();
    let mut x = b.clone();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[[i, c]].abs().total_cmp(&m[[j, c]].abs())).unwrap();
        for j in 0..n {
            m.swap([c, j], [p, j]);
        }
        x.swap(c, p);
        for r in c + 1..n {
            let f = m[[r, c]] / m[[c, c]];
            for j in c..n {
                m[[r, j]] -= f * m[[c, j]];
            }
            x[r] -= f * x[c];
        }
    }
    for c in (0..n).rev() {
        let mut s = x[c];
        for j in c + 1..n {
            s -= m[[c, j]] * x[j];
        }
        x[c] = s / m[[c, c]];
    }
    x
}

/// Minimizes the Lasso objective by repeated grid search: a `points^K`
/// grid over a box that is halved around the best point every round. The
/// initial box holds every candidate with L1 norm up to that of the
/// least-squares solution, which bounds the Lasso solution.
pub fn grid_refinement_lasso(signal: ArrayView1<'_, f64>, atoms: ArrayView2<'_, f64>, lambda: f64) -> (Vec<f64>, f64) {
    let k = atoms.nrows();
    let gram = atoms.dot(&atoms.t());
    let b = atoms.dot(&signal);
    let ls = solve_small(&gram, &b);
    let ss = signal.dot(&signal);
    let eval = |g: &[f64]| -> f64 {
        let mut quad = 0.0;
        let mut lin = 0.0;
        let mut l1 = 0.0;
        for i in 0..k {
            lin += b[i] * g[i];
            l1 += g[i].abs();
            for j in 0..k {
                quad += g[i] * gram[[i, j]] * g[j];
            }
        }
        ss - 2.0 * lin + quad + lambda * l1
    };

    let points = 21usize;
    let mut center = vec![0.0; k];
    let mut radius = ls.iter().map(|v| v.abs()).sum::<f64>() + 1.0;
    let mut best = center.clone();
    let mut best_val = eval(&best);
    let mut g = vec![0.0; k];
    for _ in 0..80 {
        let step = 2.0 * radius / (points - 1) as f64;
        let total = points.pow(k as u32);
        for idx in 0..total {
            let mut rest = idx;
            for (i, gi) in g.iter_mut().enumerate() {
                *gi = center[i] - radius + step * (rest % points) as f64;
                rest /= points;
            }
            let v = eval(&g);
            if v < best_val {
                best_val = v;
                best.copy_from_slice(&g);
            }
        }
        center.copy_from_slice(&best);
        radius *= 0.5;
    }
    (best, best_val)
}

/// AUC by counting every (positive, negative) pair; ties count one half.
pub fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        if !labels[i] {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `k` orthonormal rows of length `dim` from Gram-Schmidt on Gaussian draws.
pub fn random_orthonormal(k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((k, dim));
    let mut i = 0;
    while i < k {
        let mut v: Array1<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for j in 0..i {
            let p = q.row(j).dot(&v);
            v.scaled_add(-p, &q.row(j));
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            q.row_mut(i).assign(&(v / n));
            i += 1;
        }
    }
    q
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Signals that are sparse combinations of planted atoms plus Gaussian
/// noise: each row uses one or two atoms with weights of magnitude in
/// [1, 3] and random sign.
pub fn planted_signals(atoms: ArrayView2<'_, f64>, n: usize, sigma: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, dim) = atoms.dim();
    let mut s = Array2::zeros((n, dim));
    for i in 0..n {
        let mut row = s.row_mut(i);
        let first = i % k;
        let used = if rng.random_bool(0.5) { vec![first] } else { vec![first, (first + 1 + rng.random_range(0..k - 1)) % k] };
        for a in used {
            let w = rng.random_range(1.0..3.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            row.scaled_add(w, &atoms.row(a));
        }
        for v in row.iter_mut() {
            *v += sigma * gaussian(&mut rng);
        }
    }
    s
}

/// For each planted atom, the best |correlation| with any learned atom,
/// under a one-to-one greedy matching.
pub fn matched_abs_correlations(planted: ArrayView2<'_, f64>, learned: ArrayView2<'_, f64>) -> Vec<f64> {
    let corr = |a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>| {
        let am = a.mean().unwrap();
        let bm = b.mean().unwrap();
        let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b.iter()) {
            num += (x - am) * (y - bm);
            da += (x - am) * (x - am);
            db += (y - bm) * (y - bm);
        }
        if da == 0.0 || db == 0.0 {
            0.0
        } else {
            (num / (da.sqrt() * db.sqrt())).abs()
        }
    };
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..planted.nrows() {
        for j in 0..learned.nrows() {
            pairs.push((corr(planted.row(i), learned.row(j)), i, j));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = vec![0.0; planted.nrows()];
    let mut used_p = vec![false; planted.nrows()];
    let mut used_l = vec![false; learned.nrows()];
    for (c, i, j) in pairs {
        if !used_p[i] && !used_l[j] {
            out[i] = c;
            used_p[i] = true;
            used_l[j] = true;
        }
    }
    out
}

/// Exact Lasso minimum by enumerating every sign pattern in {-1, 0, 1}^K:
/// on a fixed pattern the objective is quadratic, so its stationary point
/// is the only candidate; feasible candidates are scored directly.
pub fn sign_enumeration_lasso(signal: ArrayView1<'_, f64>, atoms: ArrayView2<'_, f64>, lambda: f64) -> (Vec<f64>, f64) {
    let k = atoms.nrows();
    let gram = atoms.dot(&atoms.t());
    let b = atoms.dot(&signal);
    let mut best = vec![0.0; k];
    let mut best_val = lasso_objective(signal, atoms, &best, lambda);
    for pattern in 0..3usize.pow(k as u32) {
        let mut signs = vec![0i8; k];
        let mut rest = pattern;
        for s in signs.iter_mut() {
            *s = (rest % 3) as i8 - 1;
            rest /= 3;
        }
        let support: Vec<usize> = (0..k).filter(|&i| signs[i] != 0).collect();
        if support.is_empty() {
            continue;
        }
        let m = support.len();
        let a = Array2::from_shape_fn((m, m), |(i, j)| gram[[support[i], support[j]]]);
        let rhs: Array1<f64> = support.iter().map(|&i| b[i] - lambda / 2.0 * signs[i] as f64).collect();
        let x = solve_small(&a, &rhs);
        if x.iter().any(|v| !v.is_finite()) {
            continue;
        }
        if support.iter().zip(x.iter()).any(|(&i, &v)| v * signs[i] as f64 <= 0.0) {
            continue;
        }
        let mut code = vec![0.0; k];
        for (&i, &v) in support.iter().zip(x.iter()) {
            code[i] = v;
        }
        let val = lasso_objective(signal, atoms, &code, lambda);
        if val < best_val {
            best_val = val;
            best = code;
        }
    }
    (best, best_val)
}

/// A random small Lasso problem.
pub struct ToyInstance {
    pub atoms: Array2<f64>,
    pub signal: Array1<f64>,
    pub lambda: f64,
    pub orthonormal: bool,
}

/// Cycles K through {1, 2, 3} and lambda through {0, 0.5, 2}; every fourth
/// instance has orthonormal atoms, the rest unit-norm Gaussian atoms.
pub fn toy_instances(n: usize, dim: usize, seed: u64) -> Vec<ToyInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let k = [1, 2, 3][i % 3];
            let lambda = [0.0, 0.5, 2.0][(i / 3) % 3];
            let orthonormal = i % 4 == 0;
            let atoms = if orthonormal {
                random_orthonormal(k, dim, &mut rng)
            } else {
                let mut a = Array2::from_shape_fn((k, dim), |_| gaussian(&mut rng));
                for mut row in a.rows_mut() {
                    let norm = row.dot(&row).sqrt();
                    row /= norm;
                }
                a
            };
            let signal = (0..dim).map(|_| 1.5 * gaussian(&mut rng)).collect();
            ToyInstance {
                atoms,
                signal,
                lambda,
                orthonormal,
            }
        })
        .collect()
}
