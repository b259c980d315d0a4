//! L1-penalized logistic regression.
//!
//! Minimizes `mean_i log(1 + exp(-y_i (w . x_i + b))) + lambda * |w|_1` with an
//! unpenalized intercept. Each outer iteration builds the second-order model of
//! the loss at the current point, minimizes model + penalty by cyclic
//! coordinate descent, and takes the longest halving step that satisfies an
//! Armijo decrease on the true objective. Iterates therefore never increase
//! the objective. Convergence is certified by the KKT residual.

use crate::error::{Error, Result};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const MAX_INNER_SWEEPS: usize = 500;
const CURVATURE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

/// Result of a fit, including the objective after every outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub objective_trace: Vec<f64>,
}

/// Binary training data, stored column-major.
#[derive(Debug, Clone)]
pub struct Problem {
    n: usize,
    dim: usize,
    columns: Vec<f64>,
    /// +1 / -1
    y: Vec<f64>,
}

fn softplus(z: f64) -> f64 {
    // log(1 + e^z)
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

impl Problem {
    /// `rows` are feature vectors of equal length; `positive[i]` marks y = +1.
    pub fn new<R: AsRef<[f64]>>(rows: &[R], positive: &[bool]) -> Result<Self> {
        let n = rows.len();
        if n != positive.len() {
            return Err(Error::InvalidInput(format!(
                "{n} feature rows but {} labels",
                positive.len()
            )));
        }
        if n < 2 {
            return Err(Error::Training(format!("need at least 2 samples, got {n}")));
        }
        let dim = rows[0].as_ref().len();
        let mut columns = vec![0.0; n * dim];
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} features, expected {dim}",
                    row.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite feature at row {i}, column {j}"
                    )));
                }
                columns[j * n + i] = *v;
            }
        }
        let n_pos = positive.iter().filter(|&&p| p).count();
        if n_pos == 0 || n_pos == n {
            return Err(Error::Training(
                "labels contain a single class; both classes are required".into(),
            ));
        }
        let y = positive.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
        Ok(Problem { n, dim, columns, y })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn column(&self, j: usize) -> &[f64] {
        &self.columns[j * self.n..(j + 1) * self.n]
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Problem> {
        let m = rows.len();
        let mut columns = vec![0.0; m * self.dim];
        for j in 0..self.dim {
            let src = self.column(j);
            for (k, &i) in rows.iter().enumerate() {
                columns[j * m + k] = src[i];
            }
        }
        let y: Vec<f64> = rows.iter().map(|&i| self.y[i]).collect();
        if m < 2 || y.iter().all(|&v| v > 0.0) || y.iter().all(|&v| v < 0.0) {
            return Err(Error::Training(
                "subset lacks one of the two classes".into(),
            ));
        }
        Ok(Problem {
            n: m,
            dim: self.dim,
            columns,
            y,
        })
    }

    pub fn labels(&self) -> impl Iterator<Item = bool> + '_ {
        self.y.iter().map(|&v| v > 0.0)
    }

    fn margins(&self, w: &[f64], b: f64) -> Vec<f64> {
        let mut m = vec![b; self.n];
        for (j, &wj) in w.iter().enumerate() {
            if wj != 0.0 {
                for (mi, x) in m.iter_mut().zip(self.column(j)) {
                    *mi += wj * x;
                }
            }
        }
        m
    }

    fn loss_from_margins(&self, m: &[f64]) -> f64 {
        m.iter()
            .zip(&self.y)
            .map(|(mi, yi)| softplus(-yi * mi))
            .sum::<f64>()
            / self.n as f64
    }

    pub fn objective(&self, w: &[f64], b: f64, lambda: f64) -> f64 {
        let m = self.margins(w, b);
        self.loss_from_margins(&m) + lambda * l1(w)
    }

    /// Gradient of the mean loss with respect to (w, b).
    pub fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let m = self.margins(w, b);
        let g = self.margin_gradient(&m);
        self.pull_back(&g)
    }

    fn margin_gradient(&self, m: &[f64]) -> Vec<f64> {
        let inv_n = 1.0 / self.n as f64;
        m.iter()
            .zip(&self.y)
            .map(|(mi, yi)| -yi * sigmoid(-yi * mi) * inv_n)
            .collect()
    }

    fn pull_back(&self, g: &[f64]) -> (Vec<f64>, f64) {
        let gw = (0..self.dim).map(|j| dot(self.column(j), g)).collect();
        (gw, g.iter().sum())
    }

    pub fn kkt_residual(&self, w: &[f64], b: f64, lambda: f64) -> f64 {
        let (gw, gb) = self.gradient(w, b);
        kkt_from_gradient(&gw, gb, w, lambda)
    }

    pub fn fit(&self, lambda: f64, opts: &SolverOptions) -> Result<Fit> {
        self.fit_from(lambda, opts, vec![0.0; self.dim], 0.0)
    }

    /// Fit starting from the given point (warm start).
    pub fn fit_from(
        &self,
        lambda: f64,
        opts: &SolverOptions,
        mut w: Vec<f64>,
        mut b: f64,
    ) -> Result<Fit> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        if w.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "initial weights have {} entries, expected {}",
                w.len(),
                self.dim
            )));
        }
        let mut m = self.margins(&w, b);
        let mut obj = self.loss_from_margins(&m) + lambda * l1(&w);
        let mut trace = vec![obj];
        // first iterate that met the tolerance; one more step is taken from it
        let mut converged: Option<(Vec<f64>, f64, f64, usize)> = None;

        for iter in 0..=opts.max_iter {
            let g = self.margin_gradient(&m);
            let (gw, gb) = self.pull_back(&g);
            let residual = kkt_from_gradient(&gw, gb, &w, lambda);
            if let Some((cw, cb, cres, ctrace)) = converged.take() {
                let fit = if residual < cres {
                    Fit {
                        weights: w,
                        bias: b,
                        iterations: iter,
                        kkt_residual: residual,
                        objective_trace: trace,
                    }
                } else {
                    trace.truncate(ctrace);
                    Fit {
                        weights: cw,
                        bias: cb,
                        iterations: iter - 1,
                        kkt_residual: cres,
                        objective_trace: trace,
                    }
                };
                return Ok(fit);
            }
            if residual < opts.tol {
                converged = Some((w.clone(), b, residual, trace.len()));
            } else if iter == opts.max_iter {
                return Err(Error::Convergence {
                    iterations: iter,
                    residual,
                });
            }

            match self.newton_step(&m, &gw, gb, &w, b, lambda, residual, obj) {
                Some((w_new, b_new, m_new, obj_new)) => {
                    w = w_new;
                    b = b_new;
                    m = m_new;
                    obj = obj_new;
                    trace.push(obj);
                }
                None => {
                    if let Some((cw, cb, cres, _)) = converged {
                        return Ok(Fit {
                            weights: cw,
                            bias: cb,
                            iterations: iter,
                            kkt_residual: cres,
                            objective_trace: trace,
                        });
                    }
                    return Err(Error::Convergence {
                        iterations: iter,
                        residual,
                    });
                }
            }
        }
        unreachable!("loop returns on its last iteration")
    }

    /// One proximal Newton step with Armijo backtracking. `None` when no step
    /// length decreases the objective.
    #[allow(clippy::too_many_arguments)]
    fn newton_step(
        &self,
        m: &[f64],
        gw: &[f64],
        gb: f64,
        w: &[f64],
        b: f64,
        lambda: f64,
        residual: f64,
        obj: f64,
    ) -> Option<(Vec<f64>, f64, Vec<f64>, f64)> {
        let n = self.n;
        let inv_n = 1.0 / n as f64;
        let d: Vec<f64> = m
            .iter()
            .map(|&mi| sigmoid(mi) * sigmoid(-mi) * inv_n)
            .collect();
        let h: Vec<f64> = (0..self.dim)
            .map(|j| {
                self.column(j)
                    .iter()
                    .zip(&d)
                    .map(|(x, di)| di * x * x)
                    .sum::<f64>()
                    .max(CURVATURE_FLOOR)
            })
            .collect();
        let hb = d.iter().sum::<f64>().max(CURVATURE_FLOOR);

        // coordinate descent on the local quadratic model
        let mut dw = vec![0.0; self.dim];
        let mut db = 0.0;
        let mut r = vec![0.0; n];
        let inner_tol = 0.1 * residual;
        for _ in 0..MAX_INNER_SWEEPS {
            let mut worst: f64 = 0.0;
            let a = gb + dot(&d, &r);
            let step = -a / hb;
            if step != 0.0 {
                db += step;
                r.iter_mut().for_each(|ri| *ri += step);
                worst = worst.max(hb * step.abs());
            }
            for j in 0..self.dim {
                let col = self.column(j);
                let a = gw[j]
                    + col
                        .iter()
                        .zip(&d)
                        .zip(&r)
                        .map(|((x, di), ri)| x * di * ri)
                        .sum::<f64>();
                let u0 = w[j] + dw[j];
                let u = soft_threshold(u0 - a / h[j], lambda / h[j]);
                let delta = u - u0;
                if delta != 0.0 {
                    dw[j] += delta;
                    for (ri, x) in r.iter_mut().zip(col) {
                        *ri += delta * x;
                    }
                    worst = worst.max(h[j] * delta.abs());
                }
            }
            if worst < inner_tol {
                break;
            }
        }

        let w_full: Vec<f64> = w.iter().zip(&dw).map(|(a, b)| a + b).collect();
        let predicted = dot(gw, &dw) + gb * db + lambda * (l1(&w_full) - l1(w));

        let mut t = 1.0;
        for _ in 0..MAX_HALVINGS {
            let w_try: Vec<f64> = w.iter().zip(&dw).map(|(a, b)| a + t * b).collect();
            let b_try = b + t * db;
            let m_try = self.margins(&w_try, b_try);
            let obj_try = self.loss_from_margins(&m_try) + lambda * l1(&w_try);
            if obj_try <= obj + ARMIJO * t * predicted.min(0.0) {
                return Some((w_try, b_try, m_try, obj_try));
            }
            t *= 0.5;
        }
        None
    }

    /// Smallest lambda for which the all-zero weight vector is optimal.
    pub fn lambda_max(&self) -> f64 {
        let n_pos = self.y.iter().filter(|&&v| v > 0.0).count() as f64;
        let prior = n_pos / self.n as f64;
        let g: Vec<f64> = self
            .y
            .iter()
            .map(|&yi| (prior - if yi > 0.0 { 1.0 } else { 0.0 }) / self.n as f64)
            .collect();
        self.pull_back(&g).0.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l1(w: &[f64]) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

/// Largest violation of the first-order optimality conditions.
pub fn kkt_from_gradient(gw: &[f64], gb: f64, w: &[f64], lambda: f64) -> f64 {
    gw.iter()
        .zip(w)
        .map(|(&g, &wj)| {
            if wj > 0.0 {
                (g + lambda).abs()
            } else if wj < 0.0 {
                (g - lambda).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(gb.abs(), f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, dim: usize) -> Problem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<f64> = (0..dim).map(|j| if j % 3 == 0 { 1.5 } else { 0.0 }).collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z: f64 = dot(&x, &truth) + 0.2;
            labels.push(rng.random::<f64>() < sigmoid(2.0 * z));
            rows.push(x);
        }
        Problem::new(&rows, &labels).unwrap()
    }

    #[test]
    fn objective_never_increases() {
        let p = random_problem(1, 200, 12);
        for &lambda in &[0.0, 1e-3, 1e-2, 0.1] {
            let fit = p.fit(lambda, &SolverOptions::default()).unwrap();
            for pair in fit.objective_trace.windows(2) {
                assert!(pair[1] <= pair[0], "{pair:?}");
            }
            assert!(fit.kkt_residual < 1e-6);
        }
    }

    #[test]
    fn kkt_conditions_hold() {
        let p = random_problem(2, 150, 10);
        let lambda = 0.02;
        let fit = p.fit(lambda, &SolverOptions::default()).unwrap();
        let (gw, gb) = p.gradient(&fit.weights, fit.bias);
        assert!(gb.abs() < 1e-6);
        for (g, w) in gw.iter().zip(&fit.weights) {
            if *w != 0.0 {
                assert!((g + lambda * w.signum()).abs() < 1e-6);
            } else {
                assert!(g.abs() <= lambda + 1e-6);
            }
        }
    }

    #[test]
    fn huge_lambda_leaves_only_intercept() {
        let p = random_problem(3, 90, 5);
        let fit = p.fit(1e6, &SolverOptions::default()).unwrap();
        assert!(fit.weights.iter().all(|&w| w == 0.0));
        let prior = p.labels().filter(|&l| l).count() as f64 / p.n() as f64;
        assert!((fit.bias - (prior / (1.0 - prior)).ln()).abs() < 1e-6);
        assert!(p.lambda_max() < 1e6);
    }

    #[test]
    fn lambda_max_zeroes_weights() {
        let p = random_problem(4, 120, 8);
        let lm = p.lambda_max();
        let fit = p.fit(lm * 1.0001, &SolverOptions::default()).unwrap();
        assert!(fit.weights.iter().all(|&w| w == 0.0));
        let fit = p.fit(lm * 0.5, &SolverOptions::default()).unwrap();
        assert!(fit.weights.iter().any(|&w| w != 0.0));
    }

    #[test]
    fn warm_start_reaches_same_point() {
        let p = random_problem(5, 120, 6);
        let opts = SolverOptions {
            tol: 1e-8,
            max_iter: 1000,
        };
        let a = p.fit(0.01, &opts).unwrap();
        let warm = p.fit(0.1, &opts).unwrap();
        let b = p.fit_from(0.01, &opts, warm.weights, warm.bias).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let rows = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            Problem::new(&rows, &[true, true]),
            Err(Error::Training(_))
        ));
        assert!(matches!(
            Problem::new(&[vec![f64::NAN], vec![1.0]], &[true, false]),
            Err(Error::InvalidInput(_))
        ));
        assert!(Problem::new(&rows, &[true]).is_err());
        let p = Problem::new(&rows, &[true, false]).unwrap();
        assert!(p.fit(-1.0, &SolverOptions::default()).is_err());
    }

    #[test]
    fn iteration_cap_reports_failure() {
        let p = random_problem(6, 100, 6);
        let err = p
            .fit(
                1e-3,
                &SolverOptions {
                    tol: 1e-14,
                    max_iter: 1,
                },
            )
            .unwrap_err();
        assert!(matches!(err, Error::Convergence { iterations: 1, .. }));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn converged_fits_satisfy_kkt(seed in 0u64..1000, lambda in 1e-4f64..0.3) {
            let p = random_problem(seed, 60, 5);
            let fit = p.fit(lambda, &SolverOptions::default()).unwrap();
            proptest::prop_assert!(fit.kkt_residual < 1e-6);
            proptest::prop_assert!(p.kkt_residual(&fit.weights, fit.bias, lambda) < 1e-6);
        }

        #[test]
        fn sparsity_never_grows_with_lambda(seed in 0u64..1000) {
            let p = random_problem(seed, 80, 8);
            let top = p.lambda_max();
            let mut last = usize::MAX;
            for k in 0..6 {
                let lambda = top * 10f64.powf(-2.0 + 0.45 * k as f64);
                let fit = p.fit(lambda, &SolverOptions::default()).unwrap();
                let nz = fit.weights.iter().filter(|w| **w != 0.0).count();
                proptest::prop_assert!(nz <= last, "{} nonzero after {}", nz, last);
                last = nz;
            }
        }
    }
}
