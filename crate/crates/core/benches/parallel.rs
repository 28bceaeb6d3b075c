use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gats_core::anchor::medoid_index;
use gats_core::archive::{select_corpus_anchors, Corpus, EncodeSpec, PrimitiveArchive, Sample};
use gats_core::datagen::{rd_corpus, synthetic_lowrank, LowRankConfig, RdConfig};
use gats_core::diffusion::{loss_and_grad_with_noise, DiffusionSchedule, NoiseDraw, ScoreNet};
use gats_core::linalg::haar_stiefel;
use gats_core::procrustes::mc_aligned_distance;
use gats_core::rng::GatsRng;
use gats_core::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn monte_carlo(c: &mut Criterion) {
    let mut g = c.benchmark_group("mc_aligned_distance_p200_r50_t16");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| mc_aligned_distance(200, 50, 16, 0, exec).unwrap())
        });
    }
    g.finish();
}

fn medoid(c: &mut Criterion) {
    let frames: Vec<_> = (0..300).map(|i| haar_stiefel(64, 8, i).unwrap()).collect();
    let mut g = c.benchmark_group("medoid_n300_64x8");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| medoid_index(&frames, exec).unwrap()));
    }
    g.finish();
}

fn archive_encode(c: &mut Criterion) {
    let cfg = LowRankConfig {
        dims: vec![48, 40, 32],
        ranks: vec![6, 6, 6],
        spectrum_decay: 0.8,
        noise_level: 0.01,
        n_samples: 32,
    };
    let corpus = Corpus {
        samples: synthetic_lowrank(&cfg, 0, Execution::Parallel)
            .unwrap()
            .into_iter()
            .map(|data| Sample { data, condition: vec![] })
            .collect(),
        condition_names: vec![],
    };
    let spec = EncodeSpec::Tgp {
        modes: gats_core::primitives::AlignedModes::new(vec![(0, 6), (2, 6)]).unwrap(),
        source: gats_core::primitives::FactorSource::GramEigen,
    };
    let anchors = select_corpus_anchors(&corpus.tensors(), &spec, Execution::Parallel).unwrap();
    let mut g = c.benchmark_group("tgp_encode_32x48x40x32");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| PrimitiveArchive::encode(&corpus, &spec, &anchors, exec).unwrap())
        });
    }
    g.finish();
}

fn gradient(c: &mut Criterion) {
    let (dim, batch) = (64, 256);
    let net = ScoreNet::new(dim, 2, 128, 0).unwrap();
    let schedule = DiffusionSchedule::default();
    let mut rng = GatsRng::new(1);
    let x0 = rng.gaussian_vec(batch * dim);
    let cond = rng.gaussian_vec(batch * 2);
    let noise = NoiseDraw::sample(&mut rng, batch, dim, &schedule);
    let mut g = c.benchmark_group("dsm_gradient_b256_d64_h128");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| loss_and_grad_with_noise(&net, &x0, &cond, &noise, &schedule, exec).unwrap())
        });
    }
    g.finish();
}

fn rd_generation(c: &mut Criterion) {
    let base = RdConfig {
        nx: 256,
        nt: 50,
        ..RdConfig::default()
    };
    let mut g = c.benchmark_group("rd_corpus_8x256");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| rd_corpus(&base, &[1e-3, 1e-2], &[1.0], 8, 3, 0, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, monte_carlo, medoid, archive_encode, gradient, rd_generation);
criterion_main!(benches);
