//! Fast invariants run by `gats selfcheck`. Each check prints one line.

use anyhow::{bail, Result};

use gats_core::archive::{select_corpus_anchors, EncodeSpec};
use gats_core::datagen::{random_initial_condition, reaction_diffusion_1d, synthetic_lowrank, LowRankConfig, RdConfig};
use gats_core::diffusion::{ddim_sample, DiffusionSchedule, PointMassPredictor};
use gats_core::linalg::{haar_orthogonal, haar_stiefel, orthonormality_defect, svd, StiefelMatrix};
use gats_core::primitives::{mgp_decode, mgp_encode, AlignedModes, FactorSource};
use gats_core::procrustes::{ell, mc_aligned_distance, op_align};
use gats_core::rng::GatsRng;
use gats_core::{DenseMatrix, Execution};

type Check = (&'static str, fn(Execution) -> Result<String>);

const CHECKS: &[Check] = &[
    ("svd reconstruction", svd_check),
    ("procrustes rotation", procrustes_check),
    ("gauge invariance", gauge_check),
    ("mgp round trip", mgp_check),
    ("tgp round trip", tgp_check),
    ("execution determinism", determinism_check),
    ("aligned distance law", law_check),
    ("rd bounds", rd_check),
    ("ddim point mass", ddim_check),
];

pub fn run(exec: Execution) -> Result<()> {
    let mut failed = 0;
    for (name, f) in CHECKS {
        match f(exec) {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e:#}");
            }
        }
    }
    if failed > 0 {
        bail!(crate::ValidationFailed(format!("{failed} of {} checks failed", CHECKS.len())));
    }
    Ok(())
}

fn ensure(ok: bool, value: f64, tol: f64) -> Result<String> {
    if ok {
        Ok(format!("{value:.3e} (tol {tol:.0e})"))
    } else {
        bail!("{value:.3e} exceeds {tol:.0e}")
    }
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = GatsRng::new(seed);
    DenseMatrix::new(rows, cols, rng.gaussian_vec(rows * cols)).expect("shape")
}

fn svd_check(_: Execution) -> Result<String> {
    let m = gaussian(40, 25, 1);
    let s = svd(&m)?;
    let err = s.reconstruct().max_abs_diff(&m);
    let defect = orthonormality_defect(&s.u).max(orthonormality_defect(&s.v));
    let worst = err.max(defect);
    ensure(worst <= 1e-10, worst, 1e-10)
}

fn procrustes_check(_: Execution) -> Result<String> {
    let v0 = haar_stiefel(60, 8, 2)?;
    let v = haar_stiefel(60, 8, 3)?;
    let a = op_align(&v, &v0)?;
    let q = &a.rotation;
    let defect = q.t_matmul(q)?.max_abs_diff(&DenseMatrix::identity(8));
    let natural = v0.matrix().sub(v.matrix())?.frobenius_norm().powi(2);
    if a.sq_distance > natural + 1e-12 {
        bail!("aligned distance {} above natural {}", a.sq_distance, natural);
    }
    ensure(defect <= 1e-12, defect, 1e-12)
}

fn gauge_check(_: Execution) -> Result<String> {
    let v0 = haar_stiefel(50, 6, 4)?;
    let v = haar_stiefel(50, 6, 5)?;
    let mut rng = GatsRng::new(6);
    let r = haar_orthogonal(6, &mut rng);
    let vr = StiefelMatrix::new(v.matrix().matmul(&r)?)?;
    let diff = op_align(&v, &v0)?
        .aligned
        .matrix()
        .max_abs_diff(op_align(&vr, &v0)?.aligned.matrix());
    ensure(diff <= 1e-10, diff, 1e-10)
}

fn mgp_check(_: Execution) -> Result<String> {
    let r = 5;
    let m = gaussian(30, r, 7).matmul_t(&gaussian(20, r, 8))?;
    let v0 = haar_stiefel(20, r, 9)?;
    let p = mgp_encode(&m, r, &v0)?;
    let err = mgp_decode(&p).max_abs_diff(&m) / m.frobenius_norm();
    ensure(err <= 1e-10, err, 1e-10)
}

fn lowrank(exec: Execution) -> Result<Vec<gats_core::DenseTensor>> {
    let cfg = LowRankConfig {
        dims: vec![12, 10, 8],
        ranks: vec![3, 4, 2],
        spectrum_decay: 0.8,
        noise_level: 0.0,
        n_samples: 6,
    };
    Ok(synthetic_lowrank(&cfg, 10, exec)?)
}

fn tgp_check(exec: Execution) -> Result<String> {
    let xs = lowrank(exec)?;
    let spec = EncodeSpec::Tgp {
        modes: AlignedModes::new(vec![(0, 3), (1, 4), (2, 2)])?,
        source: FactorSource::GramEigen,
    };
    let refs: Vec<_> = xs.iter().collect();
    let anchors = select_corpus_anchors(&refs, &spec, exec)?;
    let mut worst = 0.0f64;
    for x in &xs {
        let y = spec.encode(x, &anchors)?.decode();
        worst = worst.max(y.sub(x)?.frobenius_norm() / x.frobenius_norm());
    }
    ensure(worst <= 1e-9, worst, 1e-9)
}

fn determinism_check(_: Execution) -> Result<String> {
    let xs = lowrank(Execution::Sequential)?;
    if xs != lowrank(Execution::Parallel)? {
        bail!("generated corpora differ");
    }
    let a = mc_aligned_distance(40, 10, 8, 11, Execution::Sequential)?;
    let b = mc_aligned_distance(40, 10, 8, 11, Execution::Parallel)?;
    if a.mean.to_bits() != b.mean.to_bits() {
        bail!("Monte Carlo means differ: {} vs {}", a.mean, b.mean);
    }
    Ok("bitwise equal".into())
}

fn law_check(exec: Execution) -> Result<String> {
    let (p, r) = (400, 100);
    let mc = mc_aligned_distance(p, r, 8, 12, exec)?;
    let theory = 1.0 - ell(p as f64 / r as f64)?;
    let d = (mc.mean - theory).abs();
    ensure(d <= 0.02, d, 0.02)
}

fn rd_check(_: Execution) -> Result<String> {
    let cfg = RdConfig {
        nx: 128,
        nt: 20,
        ..RdConfig::default()
    };
    let u0 = random_initial_condition(cfg.nx, 3, 15)?;
    let traj = reaction_diffusion_1d(&cfg, &u0)?;
    let (lo, hi) = traj
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if lo < 0.0 || hi > 1.0 {
        bail!("solution left [0, 1]: [{lo}, {hi}]");
    }
    Ok(format!("range [{lo:.3}, {hi:.3}]"))
}

fn ddim_check(exec: Execution) -> Result<String> {
    let mu = vec![0.7, -1.3];
    let model = PointMassPredictor { mu: mu.clone() };
    let schedule = DiffusionSchedule::default();
    let xs = ddim_sample(&model, &schedule, 50, 4, 16, &[], 0, exec)?;
    let err = xs
        .iter()
        .flat_map(|x| x.iter().zip(&mu).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    ensure(err <= 1e-3, err, 1e-3)
}
