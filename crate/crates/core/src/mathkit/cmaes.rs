//! (mu/mu_w, lambda) CMA-ES with cumulative step-size adaptation and
//! rank-one plus rank-mu covariance updates.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::matrix::{norm, Matrix};
use super::svd::symmetric_eigen;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Strategy parameters derived from the problem dimension.
#[derive(Debug, Clone)]
pub struct CmaParams {
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl CmaParams {
    pub fn new(n: usize, lambda: Option<usize>) -> Self {
        let nf = n as f64;
        let lambda = lambda.unwrap_or(4 + (3.0 * nf.ln()).floor() as usize).max(2);
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

/// Mutable search distribution. Single owner; candidates are produced by
/// [`CmaState::ask`] and ranked by [`CmaState::tell`] in candidate-index order.
#[derive(Debug, Clone)]
pub struct CmaState {
    pub mean: Vec<f64>,
    pub sigma: f64,
    pub cov: Matrix,
    pub p_sigma: Vec<f64>,
    pub p_c: Vec<f64>,
    pub generation: usize,
    pub params: CmaParams,
    eig_vectors: Matrix,
    eig_sqrt: Vec<f64>,
    eigen_generation: usize,
    rng: Rng,
}

impl CmaState {
    pub fn new(x0: &[f64], sigma0: f64, seed: u64, lambda: Option<usize>) -> Result<Self> {
        let n = x0.len();
        if n == 0 {
            return Err(Error::Parameter("CMA-ES needs at least one dimension".into()));
        }
        if !(sigma0 > 0.0) || !sigma0.is_finite() {
            return Err(Error::Parameter(format!("sigma0 must be positive, got {sigma0}")));
        }
        Ok(Self {
            mean: x0.to_vec(),
            sigma: sigma0,
            cov: Matrix::identity(n),
            p_sigma: vec![0.0; n],
            p_c: vec![0.0; n],
            generation: 0,
            params: CmaParams::new(n, lambda),
            eig_vectors: Matrix::identity(n),
            eig_sqrt: vec![1.0; n],
            eigen_generation: 0,
            rng: rng::rng(seed),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn lambda(&self) -> usize {
        self.params.lambda
    }

    /// Draw `lambda` candidates `m + sigma * B D z`.
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..self.params.lambda)
            .map(|_| {
                let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut self.rng)).collect();
                let dz: Vec<f64> = z.iter().zip(&self.eig_sqrt).map(|(a, d)| a * d).collect();
                let y = self.eig_vectors.matvec(&dz).expect("square");
                self.mean
                    .iter()
                    .zip(&y)
                    .map(|(m, yi)| m + self.sigma * yi)
                    .collect()
            })
            .collect()
    }

    /// Update the distribution from candidates and their objective values.
    /// Non-finite values rank last; ties keep candidate order.
    pub fn tell(&mut self, candidates: &[Vec<f64>], values: &[f64]) {
        let n = self.dim();
        let p = &self.params;
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        let key = |i: usize| if values[i].is_finite() { values[i] } else { f64::INFINITY };
        order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));

        let old_mean = self.mean.clone();
        let ys: Vec<Vec<f64>> = order[..p.mu]
            .iter()
            .map(|&i| {
                candidates[i]
                    .iter()
                    .zip(&old_mean)
                    .map(|(x, m)| (x - m) / self.sigma)
                    .collect()
            })
            .collect();
        let mut y_w = vec![0.0; n];
        for (w, y) in p.weights.iter().zip(&ys) {
            for (acc, yi) in y_w.iter_mut().zip(y) {
                *acc += w * yi;
            }
        }
        for (m, (om, yw)) in self.mean.iter_mut().zip(old_mean.iter().zip(&y_w)) {
            *m = om + self.sigma * yw;
        }

        // C^{-1/2} y_w = B D^{-1} B^T y_w
        let bt_y = self.eig_vectors.transpose().matvec(&y_w).expect("square");
        let scaled: Vec<f64> = bt_y.iter().zip(&self.eig_sqrt).map(|(a, d)| a / d).collect();
        let c_inv_sqrt_y = self.eig_vectors.matvec(&scaled).expect("square");

        let cs = p.c_sigma;
        let ps_coef = (cs * (2.0 - cs) * p.mu_eff).sqrt();
        for (ps, v) in self.p_sigma.iter_mut().zip(&c_inv_sqrt_y) {
            *ps = (1.0 - cs) * *ps + ps_coef * v;
        }
        let ps_norm = norm(&self.p_sigma);
        let gen = (self.generation + 1) as f64;
        let h_sigma = if ps_norm / (1.0 - (1.0 - cs).powf(2.0 * gen)).sqrt()
            < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n
        {
            1.0
        } else {
            0.0
        };
        let cc = p.c_c;
        let pc_coef = h_sigma * (cc * (2.0 - cc) * p.mu_eff).sqrt();
        for (pc, yw) in self.p_c.iter_mut().zip(&y_w) {
            *pc = (1.0 - cc) * *pc + pc_coef * yw;
        }

        let c1 = p.c_1;
        let cmu = p.c_mu;
        let keep = 1.0 - c1 - cmu + (1.0 - h_sigma) * c1 * cc * (2.0 - cc);
        for i in 0..n {
            for j in 0..=i {
                let mut rank_mu = 0.0;
                for (w, y) in p.weights.iter().zip(&ys) {
                    rank_mu += w * y[i] * y[j];
                }
                let v = keep * self.cov[(i, j)] + c1 * self.p_c[i] * self.p_c[j] + cmu * rank_mu;
                self.cov[(i, j)] = v;
                self.cov[(j, i)] = v;
            }
        }

        self.sigma *= ((cs / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        self.sigma = self.sigma.clamp(1e-300, 1e300);
        self.generation += 1;

        let lag = (p.lambda as f64 / (c1 + cmu) / n as f64 / 10.0).max(1.0);
        if (self.generation - self.eigen_generation) as f64 >= lag {
            self.refresh_eigen();
        }
    }

    fn refresh_eigen(&mut self) {
        let (vals, vecs) = symmetric_eigen(&self.cov);
        self.eig_sqrt = vals.iter().map(|v| v.max(1e-300).sqrt()).collect();
        self.eig_vectors = vecs;
        self.eigen_generation = self.generation;
    }
}

#[derive(Debug, Clone)]
pub struct CmaResult {
    pub x_best: Vec<f64>,
    pub f_best: f64,
    /// Best-so-far objective after each evaluation (non-increasing).
    pub history: Vec<f64>,
    pub evaluations: usize,
    pub final_sigma: f64,
}

/// Minimize `f` from `x0` with at most `budget` evaluations. The starting
/// point is evaluated first and counts against the budget; the remaining
/// budget is spent in whole generations. Candidates of one generation are
/// evaluated in parallel but ranked in index order, so the result depends
/// only on `seed`.
pub fn cmaes_minimize<F>(f: F, x0: &[f64], sigma0: f64, budget: usize, seed: u64) -> Result<CmaResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cmaes_minimize_with(f, x0, sigma0, budget, seed, None)
}

pub fn cmaes_minimize_with<F>(
    f: F,
    x0: &[f64],
    sigma0: f64,
    budget: usize,
    seed: u64,
    lambda: Option<usize>,
) -> Result<CmaResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut state = CmaState::new(x0, sigma0, seed, lambda)?;
    if budget == 0 {
        return Err(Error::Parameter("CMA-ES budget must be positive".into()));
    }
    let sanitize = |v: f64| if v.is_finite() { v } else { f64::INFINITY };
    let mut f_best = sanitize(f(x0));
    let mut x_best = x0.to_vec();
    let mut history = vec![f_best];
    while history.len() + state.lambda() <= budget {
        let candidates = state.ask();
        let values: Vec<f64> = candidates.par_iter().map(|x| f(x)).collect();
        for (x, &v) in candidates.iter().zip(&values) {
            let v = sanitize(v);
            if v < f_best {
                f_best = v;
                x_best = x.clone();
            }
            history.push(f_best);
        }
        state.tell(&candidates, &values);
    }
    Ok(CmaResult {
        x_best,
        f_best,
        evaluations: history.len(),
        history,
        final_sigma: state.sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn one_dimensional_quadratic() {
        let r = cmaes_minimize(|x| (x[0] - 3.0).powi(2), &[0.0], 1.0, 400, 1).unwrap();
        assert!((r.x_best[0] - 3.0).abs() < 1e-6, "{:?}", r.x_best);
    }

    #[test]
    fn constant_objective() {
        let r = cmaes_minimize(|_| 2.5, &[1.0, 1.0], 0.5, 50, 3).unwrap();
        assert_eq!(r.f_best, 2.5);
        assert_eq!(r.x_best, vec![1.0, 1.0]);
    }

    #[test]
    fn ten_dimensional_sphere() {
        let r = cmaes_minimize(sphere, &[1.0; 10], 0.5, 5000, 7).unwrap();
        assert!(r.f_best < 1e-8, "f_best {}", r.f_best);
        assert!(r.evaluations <= 5000);
    }

    #[test]
    fn reproducible_and_monotone() {
        let a = cmaes_minimize(sphere, &[2.0; 4], 1.0, 300, 42).unwrap();
        let b = cmaes_minimize(sphere, &[2.0; 4], 1.0, 300, 42).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.x_best, b.x_best);
        assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_finite_values_rank_last() {
        let f = |x: &[f64]| if x[0] > 0.0 { f64::NAN } else { (x[0] + 1.0).powi(2) };
        let r = cmaes_minimize(f, &[-0.5], 0.5, 400, 5).unwrap();
        assert!(r.f_best.is_finite());
        assert!((r.x_best[0] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn default_population_and_weights() {
        let p = CmaParams::new(10, None);
        assert_eq!(p.lambda, 4 + (3.0 * 10f64.ln()).floor() as usize);
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.weights.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn covariance_stays_symmetric_positive_definite() {
        let f = |x: &[f64]| x[0] * x[0] + 100.0 * x[1] * x[1] + (x[0] - x[2]).powi(2);
        let mut s = CmaState::new(&[1.0, 1.0, 1.0], 0.3, 9, None).unwrap();
        for _ in 0..60 {
            let c = s.ask();
            let v: Vec<f64> = c.iter().map(|x| f(x)).collect();
            s.tell(&c, &v);
            assert!(s.sigma > 0.0);
        }
        let (vals, _) = symmetric_eigen(&s.cov);
        assert!(vals.iter().all(|&l| l > 0.0));
        assert!(s.cov.sub(&s.cov.transpose()).unwrap().max_abs() == 0.0);
    }
}
