//! Deterministic synthetic data: low-rank tensor corpora and 1-d
//! reaction–diffusion trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{GatsError, Result};
use crate::linalg::haar_stiefel_from;
use crate::par::{self, Execution};
use crate::rng::{item_seed, task_seed, GatsRng};
use crate::tensor::{DenseMatrix, DenseTensor};
use crate::tucker::{tucker_reconstruct, validate_ranks, TuckerFactors};

/// Diffusion coefficients used for corpus generation by default.
pub const NU_GRID: [f64; 9] = [1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1];
/// Reaction rates used for corpus generation by default.
pub const RHO_GRID: [f64; 4] = [0.1, 0.5, 1.0, 2.0];

/// Knobs for [`synthetic_lowrank`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowRankConfig {
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    /// Core profile decay in `(0, 1]`.
    pub spectrum_decay: f64,
    pub noise_level: f64,
    pub n_samples: usize,
}

fn lowrank_core(rng: &mut GatsRng, ranks: &[usize], decay: f64) -> Result<DenseTensor> {
    if ranks.len() == 2 {
        // P·diag(decay^i)·Qᵀ has exactly the prescribed singular values.
        let m = ranks[0].min(ranks[1]);
        let p = haar_stiefel_from(rng, ranks[0], m)?;
        let q = haar_stiefel_from(rng, ranks[1], m)?;
        let s: Vec<f64> = (0..m).map(|i| decay.powi(i as i32)).collect();
        let core = p.matrix().scale_columns(&s).matmul_t(q.matrix())?;
        return Ok(core.to_tensor());
    }
    let n: usize = ranks.iter().product();
    let g = rng.gaussian_vec(n);
    let mut core = DenseTensor::new(ranks.to_vec(), g)?;
    let scaled = DenseTensor::from_fn(ranks, |idx| {
        core.get(idx) * decay.powi(*idx.iter().max().unwrap_or(&0) as i32)
    });
    core = scaled;
    Ok(core)
}

/// One sample of [`synthetic_lowrank`], seeded independently of the others.
pub fn synthetic_sample(cfg: &LowRankConfig, seed: u64, index: usize) -> Result<DenseTensor> {
    let mut rng = GatsRng::new(item_seed(task_seed(seed, "synthetic-lowrank"), index as u64));
    let core = lowrank_core(&mut rng, &cfg.ranks, cfg.spectrum_decay)?;
    let factors = cfg
        .dims
        .iter()
        .zip(core.dims().to_vec())
        .map(|(&n, r)| haar_stiefel_from(&mut rng, n, r))
        .collect::<Result<Vec<_>>>()?;
    let x = tucker_reconstruct(&TuckerFactors::new(core, factors)?)?;
    if cfg.noise_level == 0.0 {
        return Ok(x);
    }
    let noise = rng.gaussian_vec(x.len());
    let data = x
        .data()
        .iter()
        .zip(noise)
        .map(|(v, e)| v + cfg.noise_level * e)
        .collect();
    DenseTensor::new(x.dims().to_vec(), data)
}

/// Corpus of Tucker tensors with Haar factors and a decaying core profile,
/// plus optional i.i.d. Gaussian noise.
pub fn synthetic_lowrank(cfg: &LowRankConfig, seed: u64, exec: Execution) -> Result<Vec<DenseTensor>> {
    validate_ranks(&cfg.dims, &cfg.ranks)?;
    if !(cfg.spectrum_decay > 0.0 && cfg.spectrum_decay <= 1.0) {
        return Err(GatsError::InvalidArgument(format!(
            "spectrum_decay must be in (0, 1], got {}",
            cfg.spectrum_decay
        )));
    }
    if !(cfg.noise_level >= 0.0) {
        return Err(GatsError::InvalidArgument("noise_level must be >= 0".into()));
    }
    par::try_map_indexed(exec, cfg.n_samples, |i| synthetic_sample(cfg, seed, i))
}

/// 1-d Fisher–KPP problem `u_t = ν u_xx + ρ u(1 − u)` on the periodic unit
/// interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdConfig {
    pub nu: f64,
    pub rho: f64,
    pub nx: usize,
    /// Stored frames, evenly spaced on `[0, t_end]` (both ends included).
    pub nt: usize,
    pub t_end: f64,
    /// Fixed time step; derived from the stability bound when `None`.
    pub dt: Option<f64>,
    pub seed: u64,
}

impl Default for RdConfig {
    fn default() -> Self {
        Self {
            nu: 1e-3,
            rho: 1.0,
            nx: 1024,
            nt: 200,
            t_end: 1.0,
            dt: None,
            seed: 0,
        }
    }
}

impl RdConfig {
    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    /// `min(0.4·Δx²/ν, 0.1/ρ)`.
    pub fn max_stable_dt(&self) -> f64 {
        let dx = self.dx();
        (0.4 * dx * dx / self.nu.max(1e-12)).min(0.1 / self.rho.max(1e-12))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu >= 0.0) || !(self.rho >= 0.0) {
            return Err(GatsError::InvalidArgument("nu and rho must be >= 0".into()));
        }
        if self.nx < 8 || self.nt < 2 {
            return Err(GatsError::InvalidArgument(format!(
                "need nx >= 8 and nt >= 2, got nx={} nt={}",
                self.nx, self.nt
            )));
        }
        if !(self.t_end > 0.0) {
            return Err(GatsError::InvalidArgument("t_end must be positive".into()));
        }
        if let Some(dt) = self.dt {
            let dx = self.dx();
            let r = self.nu * dt / (dx * dx);
            // Monotone (hence [0,1]-preserving) when 1 − 2r − ρΔt ≥ 0.
            if !(dt > 0.0) || 2.0 * r + self.rho * dt > 1.0 {
                return Err(GatsError::Unstable(format!(
                    "dt={dt:e} violates 2·ν·dt/dx² + ρ·dt <= 1 (got {:.4})",
                    2.0 * r + self.rho * dt
                )));
            }
        }
        Ok(())
    }

    /// `(substeps per frame, dt)`.
    pub fn stepping(&self) -> (usize, f64) {
        let frame = self.t_end / (self.nt - 1) as f64;
        let target = self.dt.unwrap_or_else(|| self.max_stable_dt());
        let steps = (frame / target).ceil().max(1.0) as usize;
        (steps, frame / steps as f64)
    }
}

/// Explicit Euler / central-difference integration; returns an `nx × nt`
/// matrix whose column `j` is the state at `t_j = j·t_end/(nt − 1)`.
pub fn reaction_diffusion_1d(cfg: &RdConfig, u0: &[f64]) -> Result<DenseMatrix> {
    cfg.validate()?;
    if u0.len() != cfg.nx {
        return Err(GatsError::ShapeMismatch(format!(
            "initial condition has {} points, nx = {}",
            u0.len(),
            cfg.nx
        )));
    }
    if let Some(i) = u0.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(GatsError::InvalidArgument(format!(
            "initial condition value {} at {i} outside [0, 1]",
            u0[i]
        )));
    }
    let (substeps, dt) = cfg.stepping();
    if let Some(user) = cfg.dt {
        debug_assert!(dt <= user);
    }
    let n = cfg.nx;
    let dx = cfg.dx();
    let r = cfg.nu * dt / (dx * dx);
    let k = cfg.rho * dt;
    let mut out = vec![0.0; n * cfg.nt];
    let mut u = u0.to_vec();
    let mut next = vec![0.0; n];
    let store = |out: &mut Vec<f64>, u: &[f64], j: usize| {
        for (i, &v) in u.iter().enumerate() {
            out[i * cfg.nt + j] = v;
        }
    };
    store(&mut out, &u, 0);
    for j in 1..cfg.nt {
        for _ in 0..substeps {
            for i in 0..n {
                let left = u[(i + n - 1) % n];
                let right = u[(i + 1) % n];
                let c = u[i];
                next[i] = c + r * (left - 2.0 * c + right) + k * c * (1.0 - c);
            }
            std::mem::swap(&mut u, &mut next);
        }
        store(&mut out, &u, j);
    }
    DenseMatrix::new(n, cfg.nt, out)
}

/// Normalized superposition of random integer-wavenumber sinusoids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineSuperposition {
    /// `(wavenumber, amplitude, phase)`.
    pub terms: Vec<(u32, f64, f64)>,
    pub lo: f64,
    pub hi: f64,
}

/// Largest wavenumber drawn for initial conditions.
pub const MAX_WAVENUMBER: u32 = 4;

impl SineSuperposition {
    pub fn random(nx: usize, n_modes: usize, seed: u64) -> Result<Self> {
        if n_modes == 0 {
            return Err(GatsError::InvalidArgument("n_modes must be >= 1".into()));
        }
        let mut rng = GatsRng::for_task(seed, "rd-initial-condition");
        let terms = (0..n_modes)
            .map(|_| {
                let k = 1 + rng.below(MAX_WAVENUMBER as usize) as u32;
                let amp = rng.uniform_range(0.1, 1.0);
                let phase = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
                (k, amp, phase)
            })
            .collect();
        let mut ic = Self {
            terms,
            lo: 0.0,
            hi: 1.0,
        };
        let raw: Vec<f64> = (0..nx).map(|i| ic.raw(i as f64 / nx as f64)).collect();
        ic.lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        ic.hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(ic.hi > ic.lo) {
            // A single wavenumber sampled below Nyquist always varies; this
            // only trips for degenerate grids.
            return Err(GatsError::InvalidArgument("initial condition is constant on the grid".into()));
        }
        Ok(ic)
    }

    fn raw(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(k, a, p)| a * (2.0 * std::f64::consts::PI * k as f64 * x + p).sin())
            .sum()
    }

    /// Value at `x`, mapped so that grid values span `[0.1, 0.9]`.
    pub fn eval(&self, x: f64) -> f64 {
        0.1 + 0.8 * (self.raw(x) - self.lo) / (self.hi - self.lo)
    }

    pub fn sample(&self, nx: usize) -> Vec<f64> {
        (0..nx)
            .map(|i| self.eval(i as f64 / nx as f64).clamp(0.1, 0.9))
            .collect()
    }
}

/// Initial condition on `nx` grid points with values in `[0.1, 0.9]`.
pub fn random_initial_condition(nx: usize, n_modes: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(SineSuperposition::random(nx, n_modes, seed)?.sample(nx))
}

/// One generated trajectory with its conditioning values.
#[derive(Clone, Debug, PartialEq)]
pub struct RdSample {
    pub nu: f64,
    pub rho: f64,
    pub seed: u64,
    pub trajectory: DenseMatrix,
}

/// `n` trajectories; each draws `ν`, `ρ` uniformly from the given lists and
/// a fresh initial condition with `n_modes` sinusoids.
pub fn rd_corpus(
    base: &RdConfig,
    nus: &[f64],
    rhos: &[f64],
    n: usize,
    n_modes: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<RdSample>> {
    if nus.is_empty() || rhos.is_empty() {
        return Err(GatsError::Empty("parameter grid"));
    }
    let ts = task_seed(seed, "rd-corpus");
    par::try_map_indexed(exec, n, |i| {
        let s = item_seed(ts, i as u64);
        let mut rng = GatsRng::new(s);
        let nu = nus[rng.below(nus.len())];
        let rho = rhos[rng.below(rhos.len())];
        let cfg = RdConfig {
            nu,
            rho,
            seed: s,
            ..base.clone()
        };
        let u0 = random_initial_condition(cfg.nx, n_modes, s)?;
        Ok(RdSample {
            nu,
            rho,
            seed: s,
            trajectory: reaction_diffusion_1d(&cfg, &u0)?,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::singular_values;
    use crate::tucker::hosvd;
    use crate::tensor::rel_err_l2;

    #[test]
    fn noiseless_corpus_is_exact_rank() {
        let cfg = LowRankConfig {
            dims: vec![6, 7, 5],
            ranks: vec![2, 3, 2],
            spectrum_decay: 0.7,
            noise_level: 0.0,
            n_samples: 3,
        };
        let corpus = synthetic_lowrank(&cfg, 5, Execution::Sequential).unwrap();
        for x in &corpus {
            let h = hosvd(x, &cfg.ranks).unwrap();
            let err = rel_err_l2(x, &crate::tucker::tucker_reconstruct(&h).unwrap()).unwrap();
            assert!(err < 1e-10, "{err}");
        }
        let again = synthetic_lowrank(&cfg, 5, Execution::Parallel).unwrap();
        assert_eq!(corpus, again);
    }

    #[test]
    fn matrix_spectrum_follows_decay() {
        let cfg = LowRankConfig {
            dims: vec![20, 15],
            ranks: vec![5, 5],
            spectrum_decay: 0.5,
            noise_level: 0.0,
            n_samples: 2,
        };
        for x in synthetic_lowrank(&cfg, 1, Execution::Sequential).unwrap() {
            let s = singular_values(&x.to_matrix().unwrap()).unwrap();
            for (i, &si) in s.iter().take(5).enumerate() {
                let expect = 0.5f64.powi(i as i32);
                assert!((si - expect).abs() <= 0.2 * expect);
            }
        }
    }

    #[test]
    fn lowrank_rejects_bad_config() {
        let mut cfg = LowRankConfig {
            dims: vec![3, 3],
            ranks: vec![4, 1],
            spectrum_decay: 0.5,
            noise_level: 0.0,
            n_samples: 1,
        };
        assert!(synthetic_lowrank(&cfg, 0, Execution::Sequential).is_err());
        cfg.ranks = vec![2, 2];
        cfg.spectrum_decay = 0.0;
        assert!(synthetic_lowrank(&cfg, 0, Execution::Sequential).is_err());
    }

    fn small(nu: f64, rho: f64) -> RdConfig {
        RdConfig {
            nu,
            rho,
            nx: 64,
            nt: 11,
            t_end: 0.5,
            dt: None,
            seed: 0,
        }
    }

    #[test]
    fn fixed_points() {
        for v in [0.0, 1.0] {
            let traj = reaction_diffusion_1d(&small(1e-2, 2.0), &vec![v; 64]).unwrap();
            assert!(traj.data().iter().all(|&x| x == v));
        }
    }

    #[test]
    fn pure_diffusion_conserves_mass() {
        let cfg = small(5e-3, 0.0);
        let u0 = random_initial_condition(cfg.nx, 3, 2).unwrap();
        let traj = reaction_diffusion_1d(&cfg, &u0).unwrap();
        let mass0: f64 = traj.column(0).iter().sum::<f64>() * cfg.dx();
        for j in 1..cfg.nt {
            let m: f64 = traj.column(j).iter().sum::<f64>() * cfg.dx();
            assert!((m - mass0).abs() < 1e-8);
        }
    }

    #[test]
    fn unstable_step_is_refused() {
        let mut cfg = small(1e-1, 1.0);
        cfg.dt = Some(1e-2);
        let u0 = vec![0.5; 64];
        assert!(matches!(reaction_diffusion_1d(&cfg, &u0), Err(GatsError::Unstable(_))));
    }

    #[test]
    fn input_validation() {
        let cfg = small(1e-3, 1.0);
        assert!(reaction_diffusion_1d(&cfg, &[0.5; 10]).is_err());
        let mut bad = vec![0.5; 64];
        bad[3] = 1.5;
        assert!(reaction_diffusion_1d(&cfg, &bad).is_err());
        let tiny = RdConfig { nx: 4, ..cfg };
        assert!(tiny.validate().is_err());
    }

    #[test]
    fn initial_condition_properties() {
        let ic = SineSuperposition::random(128, 3, 9).unwrap();
        let u = ic.sample(128);
        assert!(u.iter().all(|&v| (0.1..=0.9).contains(&v)));
        assert!((ic.eval(0.0) - ic.eval(1.0)).abs() < 1e-10);
        assert_eq!(u, random_initial_condition(128, 3, 9).unwrap());
        assert!(random_initial_condition(128, 0, 9).is_err());
    }

    #[test]
    fn logistic_attractor() {
        let cfg = RdConfig {
            nu: 1e-3,
            rho: 1.0,
            nx: 1024,
            nt: 5,
            t_end: 20.0,
            dt: None,
            seed: 0,
        };
        let u0: Vec<f64> = (0..cfg.nx)
            .map(|i| 0.5 + 0.4 * (2.0 * std::f64::consts::PI * i as f64 / cfg.nx as f64).sin())
            .collect();
        let traj = reaction_diffusion_1d(&cfg, &u0).unwrap();
        assert!(traj.column(cfg.nt - 1).iter().all(|&v| (v - 1.0).abs() < 1e-3));
        assert!(traj.data().iter().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v)));
    }

    #[test]
    fn halving_dt_changes_little() {
        let cfg = RdConfig::default();
        let u0 = random_initial_condition(cfg.nx, 4, 3).unwrap();
        let coarse = reaction_diffusion_1d(&cfg, &u0).unwrap();
        let (_, dt) = cfg.stepping();
        let fine_cfg = RdConfig {
            dt: Some(dt / 2.0),
            ..cfg.clone()
        };
        assert!((fine_cfg.stepping().1 - dt / 2.0).abs() < 1e-15);
        let fine = reaction_diffusion_1d(&fine_cfg, &u0).unwrap();
        let rel = coarse.sub(&fine).unwrap().frobenius_norm() / fine.frobenius_norm();
        assert!(rel <= 1e-4, "{rel:e}");
    }
}
