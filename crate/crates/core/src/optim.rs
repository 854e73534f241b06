//! Derivative-free local search used by the estimator calibration and the
//! convex-roof oracle.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Total objective evaluations allowed across all simplex rebuilds.
    pub max_evals: usize,
    /// Stop when the simplex spread in f falls below this.
    pub ftol: f64,
    /// ... and every vertex lies within this distance of the best one.
    pub xtol: f64,
    pub initial_step: f64,
    /// Simplex rebuilds around the incumbent after convergence. A rebuild
    /// that improves by less than `ftol` ends the search.
    pub rebuilds: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 20_000,
            ftol: 1e-10,
            xtol: 1e-8,
            initial_step: 0.25,
            rebuilds: 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LocalResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0` with the dimension-adaptive Nelder–Mead
/// coefficients (Gao & Han), rebuilding the simplex after each convergence.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> LocalResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let nf = n as f64;
    let alpha = 1.0;
    let beta = 1.0 + 2.0 / nf;
    let gamma = 0.75 - 1.0 / (2.0 * nf);
    let delta = 1.0 - 1.0 / nf;

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut best_x = x0.to_vec();
    let mut best_f = eval(&best_x, &mut evals);
    let mut step = opts.initial_step;
    let mut converged = false;

    for rebuild in 0..=opts.rebuilds {
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        let mut values: Vec<f64> = Vec::with_capacity(n + 1);
        simplex.push(best_x.clone());
        values.push(best_f);
        for i in 0..n {
            let mut v = best_x.clone();
            v[i] += step;
            values.push(eval(&v, &mut evals));
            simplex.push(v);
        }
        let start_best = best_f;
        converged = false;
        let mut order: Vec<usize> = (0..=n).collect();
        let mut centroid = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut trial2 = vec![0.0; n];

        while evals < opts.max_evals {
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            let (lo, hi, second) = (order[0], order[n], order[n - 1]);

            let spread = values[hi] - values[lo];
            if spread.abs() <= opts.ftol {
                let size = simplex
                    .iter()
                    .map(|v| {
                        v.iter()
                            .zip(&simplex[lo])
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0, f64::max)
                    })
                    .fold(0.0, f64::max);
                if size <= opts.xtol || spread.abs() <= opts.ftol * 1e-3 {
                    converged = true;
                    break;
                }
            }

            centroid.iter_mut().for_each(|c| *c = 0.0);
            for &i in &order[..n] {
                for (c, v) in centroid.iter_mut().zip(&simplex[i]) {
                    *c += v;
                }
            }
            centroid.iter_mut().for_each(|c| *c /= nf);

            for j in 0..n {
                trial[j] = centroid[j] + alpha * (centroid[j] - simplex[hi][j]);
            }
            let fr = eval(&trial, &mut evals);

            if fr < values[lo] {
                for j in 0..n {
                    trial2[j] = centroid[j] + beta * (trial[j] - centroid[j]);
                }
                let fe = eval(&trial2, &mut evals);
                if fe < fr {
                    simplex[hi].copy_from_slice(&trial2);
                    values[hi] = fe;
                } else {
                    simplex[hi].copy_from_slice(&trial);
                    values[hi] = fr;
                }
                continue;
            }
            if fr < values[second] {
                simplex[hi].copy_from_slice(&trial);
                values[hi] = fr;
                continue;
            }
            // Contraction: outside if the reflection helped, inside otherwise.
            let outside = fr < values[hi];
            for j in 0..n {
                trial2[j] = if outside {
                    centroid[j] + gamma * (trial[j] - centroid[j])
                } else {
                    centroid[j] - gamma * (centroid[j] - simplex[hi][j])
                };
            }
            let fc = eval(&trial2, &mut evals);
            if (outside && fc <= fr) || (!outside && fc < values[hi]) {
                simplex[hi].copy_from_slice(&trial2);
                values[hi] = fc;
                continue;
            }
            // Shrink toward the best vertex.
            let best = simplex[lo].clone();
            for &i in &order[1..] {
                for j in 0..n {
                    simplex[i][j] = best[j] + delta * (simplex[i][j] - best[j]);
                }
                values[i] = eval(&simplex[i], &mut evals);
            }
        }

        let (lo, &flo) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("simplex is nonempty");
        if flo < best_f {
            best_f = flo;
            best_x = simplex[lo].clone();
        }
        if evals >= opts.max_evals {
            break;
        }
        if rebuild > 0 && start_best - best_f <= opts.ftol {
            break;
        }
        step = (step * 0.2).max(1e-4);
    }

    LocalResult {
        x: best_x,
        value: best_f,
        evals,
        converged,
    }
}

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`.
/// Returns (argmin, min, evaluations).
pub fn golden_min<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64, usize)
where
    F: FnMut(f64) -> f64,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    let mut evals = 2;
    while (hi - lo).abs() > tol {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
        }
        evals += 1;
    }
    if fa <= fb {
        (a, fa, evals)
    } else {
        (b, fb, evals)
    }
}
