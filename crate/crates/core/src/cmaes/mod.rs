//! CMA-ES over network parameters, with the five-family co-evolution
//! driver in [`evolve`].

mod evolve;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use evolve::{
    family_fitness, load_evolution, save_evolution, EsConfig, Evolution, FitnessStage, GenerationReport,
    CMA_CHECKPOINT_MAGIC, CMA_CHECKPOINT_VERSION,
};

/// Default population size for dimension `d`.
pub fn default_lambda(d: usize) -> usize {
    4 + (3.0 * (d as f64).ln()).floor() as usize
}

/// Strategy constants derived from the dimension and population size.
#[derive(Debug, Clone)]
struct Strategy {
    mu: usize,
    weights: Vec<f64>,
    mueff: f64,
    cc: f64,
    cs: f64,
    c1: f64,
    cmu: f64,
    damps: f64,
    chi_n: f64,
}

impl Strategy {
    fn new(d: usize, lambda: usize) -> Strategy {
        let n = d as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (lambda as f64 / 2.0 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let cc = (4.0 + mueff / n) / (n + 4.0 + 2.0 * mueff / n);
        let cs = (mueff + 2.0) / (n + mueff + 5.0);
        let c1 = 2.0 / ((n + 1.3).powi(2) + mueff);
        let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((n + 2.0).powi(2) + mueff));
        let damps = 1.0 + 2.0 * (((mueff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + cs;
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Strategy {
            mu,
            weights,
            mueff,
            cc,
            cs,
            c1,
            cmu,
            damps,
            chi_n,
        }
    }
}

/// Smallest eigenvalue allowed relative to the largest before repair.
const EIGEN_FLOOR: f64 = 1e-14;

/// One Gaussian search distribution `N(m, sigma^2 C)`.
///
/// Matrices are dense, row-major and `d x d`; `basis` and `scales` hold the
/// eigen-decomposition `C = B diag(D^2) B^T` from the last refresh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaState {
    dim: usize,
    lambda: usize,
    mean: Vec<f64>,
    sigma: f64,
    pc: Vec<f64>,
    ps: Vec<f64>,
    generation: u64,
    eigen_generation: u64,
    rng: ChaCha8Rng,
    #[serde(skip)]
    cov: Vec<f64>,
    #[serde(skip)]
    basis: Vec<f64>,
    #[serde(skip)]
    scales: Vec<f64>,
}

impl CmaState {
    pub fn new(mean: Vec<f64>, sigma: f64, seed: u64) -> Result<CmaState> {
        let lambda = default_lambda(mean.len().max(1));
        Self::with_lambda(mean, sigma, lambda, seed)
    }

    pub fn with_lambda(mean: Vec<f64>, sigma: f64, lambda: usize, seed: u64) -> Result<CmaState> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::Config("CMA-ES needs at least one dimension".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("initial step size must be positive, got {sigma}")));
        }
        if lambda < 2 {
            return Err(Error::Config(format!("population size must be at least 2, got {lambda}")));
        }
        let mut cov = vec![0.0; d * d];
        let mut basis = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = 1.0;
            basis[i * d + i] = 1.0;
        }
        Ok(CmaState {
            dim: d,
            lambda,
            mean,
            sigma,
            pc: vec![0.0; d],
            ps: vec![0.0; d],
            generation: 0,
            eigen_generation: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cov,
            basis,
            scales: vec![1.0; d],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn covariance(&self) -> &[f64] {
        &self.cov
    }

    /// Draws `lambda` candidates from `N(m, sigma^2 C)`.
    pub fn sample_generation(&mut self) -> Vec<Vec<f64>> {
        let d = self.dim;
        let mut z = vec![0.0; d];
        (0..self.lambda)
            .map(|_| {
                for (zi, s) in z.iter_mut().zip(&self.scales) {
                    let n: f64 = StandardNormal.sample(&mut self.rng);
                    *zi = s * n;
                }
                (0..d)
                    .map(|i| {
                        let row = &self.basis[i * d..(i + 1) * d];
                        let y: f64 = row.iter().zip(&z).map(|(b, z)| b * z).sum();
                        self.mean[i] + self.sigma * y
                    })
                    .collect()
            })
            .collect()
    }

    /// Rank-based update from evaluated candidates; lower cost is better.
    pub fn update(&mut self, candidates: &[Vec<f64>], costs: &[f64]) -> Result<()> {
        let d = self.dim;
        if candidates.len() != self.lambda || costs.len() != self.lambda {
            return Err(Error::Domain(format!(
                "expected {} candidates and costs, got {} and {}",
                self.lambda,
                candidates.len(),
                costs.len()
            )));
        }
        if candidates.iter().any(|c| c.len() != d) {
            return Err(Error::Domain("candidate of the wrong dimension".into()));
        }
        if let Some(c) = costs.iter().find(|c| c.is_nan()) {
            return Err(Error::Numeric(format!("candidate cost {c}")));
        }
        let s = Strategy::new(d, self.lambda);
        let mut order: Vec<usize> = (0..self.lambda).collect();
        order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));
        let elite: Vec<&Vec<f64>> = order[..s.mu].iter().map(|&i| &candidates[i]).collect();

        let old = self.mean.clone();
        for i in 0..d {
            self.mean[i] = s.weights.iter().zip(&elite).map(|(w, x)| w * x[i]).sum();
        }
        let y_w: Vec<f64> = (0..d).map(|i| (self.mean[i] - old[i]) / self.sigma).collect();

        // C^{-1/2} y_w = B D^{-1} B^T y_w
        let bt_y: Vec<f64> = (0..d)
            .map(|k| (0..d).map(|i| self.basis[i * d + k] * y_w[i]).sum::<f64>() / self.scales[k])
            .collect();
        let c_ps = (s.cs * (2.0 - s.cs) * s.mueff).sqrt();
        for i in 0..d {
            let row = &self.basis[i * d..(i + 1) * d];
            let v: f64 = row.iter().zip(&bt_y).map(|(b, x)| b * x).sum();
            self.ps[i] = (1.0 - s.cs) * self.ps[i] + c_ps * v;
        }
        let ps_norm = self.ps.iter().map(|x| x * x).sum::<f64>().sqrt();
        let gen = (self.generation + 1) as i32;
        let hsig = ps_norm / (1.0 - (1.0 - s.cs).powi(2 * gen)).sqrt() / s.chi_n < 1.4 + 2.0 / (d as f64 + 1.0);
        let c_pc = if hsig { (s.cc * (2.0 - s.cc) * s.mueff).sqrt() } else { 0.0 };
        for (p, y) in self.pc.iter_mut().zip(&y_w) {
            *p = (1.0 - s.cc) * *p + c_pc * y;
        }

        let ys: Vec<Vec<f64>> = elite
            .iter()
            .map(|x| x.iter().zip(&old).map(|(x, m)| (x - m) / self.sigma).collect())
            .collect();
        let decay = 1.0 - s.c1 - s.cmu + if hsig { 0.0 } else { s.c1 * s.cc * (2.0 - s.cc) };
        for i in 0..d {
            for j in 0..=i {
                let rank_mu: f64 = s.weights.iter().zip(&ys).map(|(w, y)| w * y[i] * y[j]).sum();
                let v = decay * self.cov[i * d + j] + s.c1 * self.pc[i] * self.pc[j] + s.cmu * rank_mu;
                self.cov[i * d + j] = v;
                self.cov[j * d + i] = v;
            }
        }

        self.sigma *= ((s.cs / s.damps) * (ps_norm / s.chi_n - 1.0)).exp();
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Numeric(format!("step size became {}", self.sigma)));
        }
        self.generation += 1;
        let lag = self.lambda as f64 / (s.c1 + s.cmu) / d as f64 / 10.0;
        if (self.generation - self.eigen_generation) as f64 > lag {
            self.refresh_eigen();
        }
        Ok(())
    }

    /// Recomputes `B` and `D` from `C`, flooring eigenvalues that are not
    /// safely positive.
    pub fn refresh_eigen(&mut self) {
        let d = self.dim;
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &self.cov));
        let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max).max(f64::MIN_POSITIVE);
        let floor = max * EIGEN_FLOOR;
        let mut repaired = false;
        let values: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&v| {
                if v < floor || !v.is_finite() {
                    repaired = true;
                    floor
                } else {
                    v
                }
            })
            .collect();
        for i in 0..d {
            for k in 0..d {
                self.basis[i * d + k] = eig.eigenvectors[(i, k)];
            }
        }
        self.scales = values.iter().map(|v| v.sqrt()).collect();
        if repaired {
            log::warn!("covariance not positive definite at generation {}; eigenvalues floored", self.generation);
            for i in 0..d {
                for j in 0..d {
                    self.cov[i * d + j] = (0..d).map(|k| self.basis[i * d + k] * values[k] * self.basis[j * d + k]).sum();
                }
            }
        }
        self.eigen_generation = self.generation;
    }

    fn matrices(&self) -> [&Vec<f64>; 3] {
        [&self.cov, &self.basis, &self.scales]
    }

    fn restore_matrices(&mut self, cov: Vec<f64>, basis: Vec<f64>, scales: Vec<f64>) -> Result<()> {
        let d = self.dim;
        if cov.len() != d * d || basis.len() != d * d || scales.len() != d {
            return Err(Error::Format("CMA-ES matrices do not match the dimension".into()));
        }
        self.cov = cov;
        self.basis = basis;
        self.scales = scales;
        Ok(())
    }
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Minimises the sphere function from `(1, ..., 1)` and returns the
/// generation at which `f < target` was reached, if it was.
pub fn sphere_selftest(dim: usize, target: f64, max_generations: u64, seed: u64) -> Result<(Option<u64>, f64)> {
    let mut es = CmaState::new(vec![1.0; dim], 0.5, seed)?;
    let mut best = f64::INFINITY;
    for g in 1..=max_generations {
        let xs = es.sample_generation();
        let fs: Vec<f64> = xs.iter().map(|x| sphere(x)).collect();
        best = fs.iter().cloned().fold(best, f64::min);
        if best < target {
            return Ok((Some(g), best));
        }
        es.update(&xs, &fs)?;
    }
    Ok((None, best))
}
