use proptest::prelude::*;

use gats_core::anchor::{medoid_index, overlap_matrix};
use gats_core::dtz;
use gats_core::linalg::{
    haar_orthogonal, haar_stiefel, haar_stiefel_from, nuclear_norm, orthonormality_defect, spd_inv_sqrt, spd_sqrt,
    svd, truncated_svd, StiefelMatrix,
};
use gats_core::metrics::{classical_mds, double_center, kde_1d, wasserstein_1d};
use gats_core::primitives::{mgp_decode, mgp_encode, patchify, unpatchify, PatchSpec};
use gats_core::procrustes::{ell, op_align};
use gats_core::rng::GatsRng;
use gats_core::tensor::{fold, mode_product, sk_gram, unfold};
use gats_core::tucker::{hooi, hosvd, tucker_reconstruct, HooiConfig, TuckerFactors};
use gats_core::{DenseMatrix, DenseTensor, Execution};

fn gaussian(rng: &mut GatsRng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::new(rows, cols, rng.gaussian_vec(rows * cols)).unwrap()
}

fn tensor(rng: &mut GatsRng, dims: &[usize]) -> DenseTensor {
    DenseTensor::new(dims.to_vec(), rng.gaussian_vec(dims.iter().product())).unwrap()
}

fn dims_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..6, 1..=4)
}

fn max_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `n × r` frame and anchor with `r ≤ n`.
fn frame_shape() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=8).prop_flat_map(|r| (r..=30usize, Just(r)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_inverts_unfold(dims in dims_strategy(), seed: u64) {
        let x = tensor(&mut GatsRng::new(seed), &dims);
        for k in 0..dims.len() {
            prop_assert_eq!(&fold(&unfold(&x, k).unwrap(), k, &dims).unwrap(), &x);
        }
    }

    #[test]
    fn mode_products_commute_across_modes(dims in prop::collection::vec(1usize..6, 2..=4), seed: u64) {
        let mut rng = GatsRng::new(seed);
        let x = tensor(&mut rng, &dims);
        let (a, b) = (0, dims.len() - 1);
        let ma = gaussian(&mut rng, 3, dims[a]);
        let mb = gaussian(&mut rng, 2, dims[b]);
        let ab = mode_product(&mode_product(&x, &ma, a).unwrap(), &mb, b).unwrap();
        let ba = mode_product(&mode_product(&x, &mb, b).unwrap(), &ma, a).unwrap();
        prop_assert!(max_diff(&ab, &ba) <= 1e-12);
    }

    #[test]
    fn mode_products_compose_on_one_mode(dims in dims_strategy(), seed: u64) {
        let mut rng = GatsRng::new(seed);
        let x = tensor(&mut rng, &dims);
        let k = dims.len() - 1;
        let a = gaussian(&mut rng, 4, dims[k]);
        let b = gaussian(&mut rng, 3, 4);
        let twice = mode_product(&mode_product(&x, &a, k).unwrap(), &b, k).unwrap();
        let once = mode_product(&x, &b.matmul(&a).unwrap(), k).unwrap();
        prop_assert!(max_diff(&twice, &once) <= 1e-12);
    }

    #[test]
    fn sk_gram_is_unfolding_gram(dims in dims_strategy(), seed: u64) {
        let x = tensor(&mut GatsRng::new(seed), &dims);
        for k in 0..dims.len() {
            let u = unfold(&x, k).unwrap();
            prop_assert!(sk_gram(&x, k).unwrap().max_abs_diff(&u.matmul_t(&u).unwrap()) <= 1e-12);
        }
    }

    #[test]
    fn svd_factors_are_orthonormal_and_sorted(rows in 1usize..25, cols in 1usize..25, seed: u64) {
        let m = gaussian(&mut GatsRng::new(seed), rows, cols);
        let s = svd(&m).unwrap();
        prop_assert!(orthonormality_defect(&s.u) <= 1e-10);
        prop_assert!(orthonormality_defect(&s.v) <= 1e-10);
        prop_assert!(s.s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.reconstruct().max_abs_diff(&m) <= 1e-10 * (1.0 + m.frobenius_norm()));
        for j in 0..s.u.cols() {
            let col = s.u.column(j);
            let big = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            prop_assert!(big >= 0.0);
        }
    }

    #[test]
    fn spd_inverse_root_is_inverse_root(n in 1usize..12, log_cond in 0.0f64..6.0, seed: u64) {
        let mut rng = GatsRng::new(seed);
        let q = haar_orthogonal(n, &mut rng);
        let eig: Vec<f64> = (0..n)
            .map(|i| 10f64.powf(-log_cond * i as f64 / (n.max(2) - 1) as f64))
            .collect();
        let s = q.scale_columns(&eig).matmul_t(&q).unwrap();
        let t = spd_inv_sqrt(&s).unwrap();
        let id = t.matmul(&s).unwrap().matmul(&t).unwrap();
        prop_assert!(id.max_abs_diff(&DenseMatrix::identity(n)) <= 1e-8);
    }

    #[test]
    fn haar_frames_are_seed_deterministic((n, r) in frame_shape(), seed: u64) {
        let a = haar_stiefel(n, r, seed).unwrap();
        let b = haar_stiefel(n, r, seed).unwrap();
        prop_assert_eq!(a.matrix(), b.matrix());
        prop_assert!(orthonormality_defect(a.matrix()) <= 1e-12);
    }

    #[test]
    fn tucker_reconstruction_is_gauge_covariant(dims in prop::collection::vec(2usize..6, 2..=4), seed: u64) {
        let mut rng = GatsRng::new(seed);
        let x = tensor(&mut rng, &dims);
        let ranks: Vec<usize> = dims.iter().map(|&n| 1 + rng.below(n)).collect();
        let f = hosvd(&x, &ranks).unwrap();
        let before = tucker_reconstruct(&f).unwrap();
        let (mut core, factors) = f.into_parts();
        let mut rotated = Vec::new();
        for (k, u) in factors.iter().enumerate() {
            let q = haar_orthogonal(ranks[k], &mut rng);
            core = mode_product(&core, &q.transpose(), k).unwrap();
            rotated.push(StiefelMatrix::new(u.matrix().matmul(&q).unwrap()).unwrap());
        }
        let after = tucker_reconstruct(&TuckerFactors::new(core, rotated).unwrap()).unwrap();
        prop_assert!(max_diff(&before, &after) <= 1e-11);
    }

    #[test]
    fn hooi_never_worse_than_hosvd(seed: u64) {
        let mut rng = GatsRng::new(seed);
        let x = tensor(&mut rng, &[6, 5, 4]);
        let ranks = [2, 2, 2];
        let (f, trace) = hooi(&x, &ranks, HooiConfig::default()).unwrap();
        let err = |t: &DenseTensor| t.sub(&x).unwrap().frobenius_norm() / x.frobenius_norm();
        let h = err(&tucker_reconstruct(&hosvd(&x, &ranks).unwrap()).unwrap());
        prop_assert!(trace.errors.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        prop_assert!(err(&tucker_reconstruct(&f).unwrap()) <= h * (1.0 + 1e-12));
    }

    #[test]
    fn matrix_hosvd_matches_truncated_svd(rows in 2usize..15, cols in 2usize..15, seed: u64) {
        let mut rng = GatsRng::new(seed);
        let m = gaussian(&mut rng, rows, cols);
        let r = 1 + rng.below(rows.min(cols));
        let svd_res = m.sub(&truncated_svd(&m, r).unwrap().reconstruct()).unwrap().frobenius_norm();
        let t = m.to_tensor();
        let tk = tucker_reconstruct(&hosvd(&t, &[r, r]).unwrap()).unwrap();
        prop_assert!((tk.sub(&t).unwrap().frobenius_norm() - svd_res).abs() <= 1e-9);
    }

    #[test]
    fn alignment_properties((n, r) in frame_shape(), seed: u64) {
        let mut rng = GatsRng::new(seed);
        let v0 = haar_stiefel_from(&mut rng, n, r).unwrap();
        let v = haar_stiefel_from(&mut rng, n, r).unwrap();
        let a = op_align(&v, &v0).unwrap();
        // Q = I is feasible.
        let natural = v0.matrix().sub(v.matrix()).unwrap().frobenius_norm();
        prop_assert!(a.sq_distance.sqrt() <= natural + 1e-10);
        let cross = v0.matrix().t_matmul(v.matrix()).unwrap();
        let nuc = nuclear_norm(&cross).unwrap();
        prop_assert!((a.sq_distance - (2.0 * r as f64 - 2.0 * nuc)).abs() <= 1e-8);
        let g = v0.matrix().t_matmul(a.aligned.matrix()).unwrap();
        prop_assert!(g.asymmetry() <= 1e-8);
        let root = spd_sqrt(&cross.matmul_t(&cross).unwrap());
        if a.overlap_min_eig > 1e-6 {
            prop_assert!(g.max_abs_diff(&root.unwrap()) <= 1e-8);
        }
        let q = haar_orthogonal(r, &mut rng);
        let vq = StiefelMatrix::new(v.matrix().matmul(&q).unwrap()).unwrap();
        prop_assert!(op_align(&vq, &v0).unwrap().aligned.matrix().max_abs_diff(a.aligned.matrix()) <= 1e-8);
    }

    #[test]
    fn medoid_scores_are_gauge_invariant(count in 1usize..12, seed: u64) {
        let mut rng = GatsRng::new(seed);
        let frames: Vec<StiefelMatrix> = (0..count).map(|_| haar_stiefel_from(&mut rng, 10, 3).unwrap()).collect();
        let rotated: Vec<StiefelMatrix> = frames
            .iter()
            .map(|f| StiefelMatrix::new(f.matrix().matmul(&haar_orthogonal(3, &mut rng)).unwrap()).unwrap())
            .collect();
        let a = medoid_index(&frames, Execution::Sequential).unwrap();
        let b = medoid_index(&rotated, Execution::Parallel).unwrap();
        prop_assert_eq!(a.index, b.index);
        for (x, y) in a.scores.iter().zip(&b.scores) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        let o = overlap_matrix(&frames).unwrap();
        prop_assert!(o.asymmetry() <= 1e-10);
        for i in 0..count {
            prop_assert!((o.get(i, i) - 3.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn mgp_decode_is_truncation(rows in 3usize..20, cols in 3usize..20, seed: u64) {
        let mut rng = GatsRng::new(seed);
        let m = gaussian(&mut rng, rows, cols);
        let r = 1 + rng.below(rows.min(cols) - 1);
        let v0 = haar_stiefel_from(&mut rng, cols, r).unwrap();
        let y = mgp_decode(&mgp_encode(&m, r, &v0).unwrap());
        let best = truncated_svd(&m, r).unwrap().reconstruct();
        let got = m.sub(&y).unwrap().frobenius_norm();
        let want = m.sub(&best).unwrap().frobenius_norm();
        prop_assert!((got - want).abs() <= 1e-9);
    }

    #[test]
    fn patchify_round_trip(gr in 1usize..5, gc in 1usize..5, pr in 1usize..5, pc in 1usize..5, seed: u64) {
        let m = gaussian(&mut GatsRng::new(seed), gr * pr, gc * pc);
        let spec = PatchSpec::new((gr * pr, gc * pc), (pr, pc)).unwrap();
        let p = patchify(&m, &spec).unwrap();
        prop_assert_eq!(p.shape(), (gr * gc, pr * pc));
        prop_assert_eq!(unpatchify(&p, &spec).unwrap(), m);
    }

    #[test]
    fn dtz_round_trip(dims in dims_strategy(), seed: u64) {
        let x = tensor(&mut GatsRng::new(seed), &dims);
        prop_assert_eq!(dtz::decode(&dtz::encode(&x)).unwrap(), x);
    }

    #[test]
    fn wasserstein_is_a_metric(n in 1usize..40, seed: u64) {
        let mut rng = GatsRng::new(seed);
        let a = rng.gaussian_vec(n);
        let b: Vec<f64> = rng.gaussian_vec(n).iter().map(|v| 2.0 * v + 1.0).collect();
        let c: Vec<f64> = rng.gaussian_vec(n).iter().map(|v| v - 0.5).collect();
        let w = |x: &[f64], y: &[f64]| wasserstein_1d(x, y).unwrap();
        prop_assert!(w(&a, &a).abs() <= 1e-15);
        prop_assert!((w(&a, &b) - w(&b, &a)).abs() <= 1e-12);
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-12);
    }

    #[test]
    fn kde_integrates_to_one(n in 5usize..200, seed: u64) {
        let samples = GatsRng::new(seed).gaussian_vec(n);
        let grid: Vec<f64> = (0..4001).map(|i| -12.0 + 24.0 * i as f64 / 4000.0).collect();
        let dens = kde_1d(&samples, None, &grid).unwrap();
        let h = grid[1] - grid[0];
        let mass: f64 = dens.iter().sum::<f64>() * h;
        prop_assert!((mass - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn mds_reproduces_leading_spectrum(n in 3usize..15, seed: u64) {
        let mut rng = GatsRng::new(seed);
        let pts = gaussian(&mut rng, n, 4);
        let d = DenseMatrix::from_fn(n, n, |i, j| {
            pts.row(i).iter().zip(pts.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        });
        let emb = classical_mds(&d, 2).unwrap();
        let b = double_center(&d);
        let mut eig = svd(&b).unwrap().s;
        eig.truncate(2);
        let gram = emb.coords.matmul_t(&emb.coords).unwrap();
        let mut got = svd(&gram).unwrap().s;
        got.truncate(2);
        for (x, y) in got.iter().zip(&eig) {
            prop_assert!((x - y).abs() <= 1e-8 * (1.0 + y));
        }
    }
}

#[test]
fn ell_is_decreasing_in_unit_interval() {
    let values: Vec<f64> = (0..=700).map(|i| ell(1.0 + i as f64 * 0.01).unwrap()).collect();
    assert_eq!(values[0], 1.0);
    assert!(values.windows(2).all(|w| w[1] < w[0]));
    assert!(values.iter().all(|&v| v > 0.0 && v <= 1.0));
}
