use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use gats_core::anchor::AnchorSet;
use gats_core::archive::{select_corpus_anchors, select_corpus_anchors_subsampled, Corpus, EncodeSpec, PrimitiveArchive, PrimitiveLayout, Sample};
use gats_core::datagen::{rd_corpus, synthetic_lowrank, LowRankConfig, RdConfig, NU_GRID, RHO_GRID};
use gats_core::diffusion::{
    ddim_sample, load_checkpoint, run_toy, save_checkpoint, score_field, train, DiffusionSchedule, Optimizer,
    ScoreNet, Standardizer, ToyConfig, ToyRun, TrainConfig, TrainingSet, VLaw,
};
use gats_core::metrics::{classical_mds, error_report, frame_distance_matrix, mean_report};
use gats_core::primitives::{AlignedModes, FactorSource};
use gats_core::procrustes::{ell, mc_aligned_distance, op_align};
use gats_core::{Execution, StiefelMatrix};

use crate::manifest::RunManifest;
use crate::{
    AnchorArgs, Cli, CodecArgs, Command, DecodeArgs, EncodeArgs, FactorSourceArg, GenData, LawArg, LowrankArgs,
    MdsArgs, OptimizerArg, PrimitiveType, Prop2Args, Rd1dArgs, SampleArgs, StatsArgs, ToyArgs, TrainArgs,
    UsageError, ValidationFailed,
};

pub fn run(cli: &Cli, exec: Execution) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        threads: cli.threads,
        exec,
    };
    match &cli.command {
        Command::GenData(GenData::Rd1d(a)) => gen_rd1d(&ctx, a),
        Command::GenData(GenData::Lowrank(a)) => gen_lowrank(&ctx, a),
        Command::Anchor(a) => anchor(&ctx, a),
        Command::Encode(a) => encode(&ctx, a),
        Command::Decode(a) => decode(&ctx, a),
        Command::Stats(a) => stats(a),
        Command::Mds(a) => mds(&ctx, a),
        Command::ValidateProp2(a) => validate_prop2(&ctx, a),
        Command::ToyDiffusion(a) => toy(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Sample(a) => sample(&ctx, a),
        Command::Selfcheck => crate::selfcheck::run(exec),
    }
}

struct Ctx {
    seed: u64,
    threads: Option<usize>,
    exec: Execution,
}

impl Ctx {
    fn manifest(&self, command: &str, config: impl Serialize) -> RunManifest {
        RunManifest::start(command, config, self.seed, self.threads)
    }
}

fn gen_rd1d(ctx: &Ctx, a: &Rd1dArgs) -> Result<()> {
    let nus = if a.nu.is_empty() { NU_GRID.to_vec() } else { a.nu.clone() };
    let rhos = if a.rho.is_empty() { RHO_GRID.to_vec() } else { a.rho.clone() };
    let base = RdConfig {
        nu: nus[0],
        rho: rhos[0],
        nx: a.nx,
        nt: a.nt,
        t_end: a.t_end,
        dt: a.dt,
        seed: ctx.seed,
    };
    for &nu in &nus {
        for &rho in &rhos {
            RdConfig { nu, rho, ..base.clone() }
                .validate()
                .map_err(|e| UsageError(e.to_string()))?;
        }
    }
    let runs = rd_corpus(&base, &nus, &rhos, a.n, a.n_modes, ctx.seed, ctx.exec)?;
    let corpus = Corpus {
        samples: runs
            .into_iter()
            .map(|s| Sample {
                data: s.trajectory.to_tensor(),
                condition: vec![s.nu, s.rho],
            })
            .collect(),
        condition_names: vec!["nu".into(), "rho".into()],
    };
    corpus.save(&a.out)?;
    let mut m = ctx.manifest("gen-data rd1d", a);
    m.note("nu_grid", &nus);
    m.note("rho_grid", &rhos);
    m.output(&a.out);
    m.write(&a.out)
}

fn gen_lowrank(ctx: &Ctx, a: &LowrankArgs) -> Result<()> {
    let cfg = LowRankConfig {
        dims: a.dims.clone(),
        ranks: a.ranks.clone(),
        spectrum_decay: a.decay,
        noise_level: a.noise,
        n_samples: a.n,
    };
    let data = synthetic_lowrank(&cfg, ctx.seed, ctx.exec)?;
    let corpus = Corpus {
        samples: data
            .into_iter()
            .map(|data| Sample {
                data,
                condition: vec![],
            })
            .collect(),
        condition_names: vec![],
    };
    corpus.save(&a.out)?;
    let mut m = ctx.manifest("gen-data lowrank", a);
    m.output(&a.out);
    m.write(&a.out)
}

fn codec_spec(c: &CodecArgs) -> Result<EncodeSpec> {
    match c.kind {
        PrimitiveType::Mgp => {
            if !c.modes.is_empty() || !c.ranks.is_empty() {
                bail!(UsageError("--modes/--ranks apply to --type tgp; use --rank for mgp".into()));
            }
            let rank = c.rank.ok_or_else(|| UsageError("--type mgp needs --rank".into()))?;
            Ok(EncodeSpec::Mgp { rank, patch: c.patch })
        }
        PrimitiveType::Tgp => {
            if c.rank.is_some() || c.patch.is_some() {
                bail!(UsageError("--rank/--patch apply to --type mgp".into()));
            }
            if c.modes.len() != c.ranks.len() {
                bail!(UsageError("--modes and --ranks must have the same length".into()));
            }
            if c.modes.contains(&0) {
                bail!(UsageError("modes are 1-based".into()));
            }
            let pairs = c.modes.iter().map(|k| k - 1).zip(c.ranks.iter().copied()).collect();
            let modes = AlignedModes::new(pairs).map_err(|e| UsageError(e.to_string()))?;
            let source = match c.factor_source {
                FactorSourceArg::GramEigen => FactorSource::GramEigen,
                FactorSourceArg::Hooi => FactorSource::Hooi,
            };
            Ok(EncodeSpec::Tgp { modes, source })
        }
    }
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::load(dir).with_context(|| format!("reading corpus {}", dir.display()))
}

fn anchor(ctx: &Ctx, a: &AnchorArgs) -> Result<()> {
    let spec = codec_spec(&a.codec)?;
    let corpus = load_corpus(&a.input)?;
    let anchors = match a.subsample {
        Some(0) => bail!(UsageError("--subsample must be >= 1".into())),
        Some(n) => select_corpus_anchors_subsampled(&corpus.tensors(), &spec, n, ctx.seed, ctx.exec)?,
        None => select_corpus_anchors(&corpus.tensors(), &spec, ctx.exec)?,
    };
    if a.subsample.is_some() {
        log::warn!("anchor chosen from a subsampled score; it may differ from the exact medoid");
    }
    anchors.save(&a.out)?;
    let mut m = ctx.manifest("anchor", a);
    m.input(&a.input);
    m.output(&a.out);
    m.anchors(anchors.iter().map(|(k, x)| (k, &x.hash)));
    let medoids: BTreeMap<String, usize> = anchors
        .iter()
        .map(|(k, x)| ((k + 1).to_string(), x.medoid_index))
        .collect();
    m.note("medoid_index", medoids);
    m.write(&a.out)
}

fn encode(ctx: &Ctx, a: &EncodeArgs) -> Result<()> {
    let spec = codec_spec(&a.codec)?;
    let corpus = load_corpus(&a.input)?;
    let anchors = AnchorSet::load(&a.anchor).with_context(|| format!("reading anchors {}", a.anchor.display()))?;
    let archive = PrimitiveArchive::encode(&corpus, &spec, &anchors, ctx.exec)?;
    archive.save(&a.out)?;
    let off = archive.items.iter().filter(|p| !p.on_manifold()).count();
    if off > 0 {
        log::warn!("{off} sample(s) have rank below the requested rank");
    }
    let mut m = ctx.manifest("encode", a);
    m.input(&a.input);
    m.input(&a.anchor);
    m.output(&a.out);
    m.anchors(archive.layout.anchor_hashes.iter().map(|(&k, h)| (k, h)));
    m.note("off_manifold", off);
    m.write(&a.out)
}

fn decode(ctx: &Ctx, a: &DecodeArgs) -> Result<()> {
    let archive = PrimitiveArchive::load(&a.input).with_context(|| format!("reading archive {}", a.input.display()))?;
    archive.decode(ctx.exec)?.save(&a.out)?;
    let mut m = ctx.manifest("decode", a);
    m.input(&a.input);
    m.output(&a.out);
    m.anchors(archive.layout.anchor_hashes.iter().map(|(&k, h)| (k, h)));
    m.write(&a.out)
}

fn stats(a: &StatsArgs) -> Result<()> {
    let reference = load_corpus(&a.reference)?;
    let estimate = load_corpus(&a.estimate)?;
    if reference.len() != estimate.len() {
        bail!(
            "corpora differ in length ({} vs {})",
            reference.len(),
            estimate.len()
        );
    }
    let time_mode = match a.time_mode {
        Some(0) => bail!(UsageError("--time-mode is 1-based".into())),
        k => k.map(|k| k - 1),
    };
    let reports = reference
        .samples
        .iter()
        .zip(&estimate.samples)
        .map(|(x, y)| error_report(&x.data, &y.data, time_mode, a.range))
        .collect::<gats_core::Result<Vec<_>>>()?;
    let mean = mean_report(&reports)?;
    let out = serde_json::json!({ "samples": reports, "mean": mean });
    let text = serde_json::to_string_pretty(&out)?;
    println!("{text}");
    if let Some(path) = &a.out {
        fs::write(path, &text)?;
    }
    Ok(())
}

fn mds(ctx: &Ctx, a: &MdsArgs) -> Result<()> {
    let spec = codec_spec(&a.codec)?;
    let corpus = load_corpus(&a.input)?;
    let mode = spec.anchor_modes()[0];
    let natural: Vec<StiefelMatrix> = gats_core::par::try_map_indexed(ctx.exec, corpus.len(), |i| {
        spec.frames(&corpus.samples[i].data).map(|mut f| f.remove(&mode).expect("frame for anchor mode"))
    })?;
    let mut frames = natural.clone();
    let mut kinds = vec!["natural"; natural.len()];
    let mut hashes = BTreeMap::new();
    if let Some(dir) = &a.anchor {
        let anchors = AnchorSet::load(dir)?;
        let v0 = anchors.frame(mode)?;
        for v in &natural {
            frames.push(op_align(v, v0)?.aligned);
            kinds.push("aligned");
        }
        hashes.insert(mode, anchors.get(mode).expect("checked").hash.clone());
    }
    let emb = classical_mds(&frame_distance_matrix(&frames)?, 2)?;
    let mut csv = String::from("index,kind,x,y\n");
    for (i, kind) in kinds.iter().enumerate() {
        let idx = i % natural.len();
        writeln!(csv, "{idx},{kind},{},{}", emb.coords.get(i, 0), emb.coords.get(i, 1))?;
    }
    if let Some(parent) = a.out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, csv)?;
    let dir = a.out.parent().unwrap_or(Path::new("."));
    let mut m = ctx.manifest("mds", a);
    m.input(&a.input);
    m.output(&a.out);
    m.anchors(hashes.iter().map(|(&k, h)| (k, h)));
    m.note("eigenvalues", &emb.eigenvalues);
    m.write(dir)
}

fn validate_prop2(ctx: &Ctx, a: &Prop2Args) -> Result<()> {
    if a.r == 0 || a.r >= a.p {
        bail!(UsageError(format!("need 1 <= r < p, got p={}, r={}", a.p, a.r)));
    }
    let c = a.p as f64 / a.r as f64;
    let theory = 1.0 - ell(c)?;
    let summary = mc_aligned_distance(a.p, a.r, a.trials, ctx.seed, ctx.exec)?;
    let deviation = (summary.mean - theory).abs();
    let pass = deviation <= a.tol;
    let report = serde_json::json!({
        "p": a.p,
        "r": a.r,
        "c": c,
        "trials": summary.trials,
        "seed": ctx.seed,
        "mean": summary.mean,
        "std_err": summary.std_err,
        "theory": theory,
        "ell": 1.0 - theory,
        "deviation": deviation,
        "tol": a.tol,
        "pass": pass,
    });
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    eprintln!(
        "{} mean {:.4} ± {:.4} vs 1-ell {:.4} (tol {})",
        if pass { "PASS" } else { "FAIL" },
        summary.mean,
        summary.std_err,
        theory,
        a.tol
    );
    if let Some(path) = &a.out {
        fs::create_dir_all(path)?;
        fs::write(path.join("prop2.json"), &text)?;
        let mut m = ctx.manifest("validate-prop2", a);
        m.output(&path.join("prop2.json"));
        m.write(path)?;
    }
    if !pass {
        bail!(ValidationFailed(format!(
            "mean {:.4} deviates from {:.4} by {:.4} > {}",
            summary.mean, theory, deviation, a.tol
        )));
    }
    Ok(())
}

fn optimizer(o: OptimizerArg) -> Optimizer {
    match o {
        OptimizerArg::Sgd => Optimizer::Sgd,
        OptimizerArg::Adam => Optimizer::adam(),
    }
}

/// Timestep of the score-field snapshot.
const SCORE_FIELD_T: usize = 10;
const SCORE_GRID: usize = 41;

fn toy(ctx: &Ctx, a: &ToyArgs) -> Result<()> {
    let law = match a.law {
        LawArg::Anchored => VLaw::Anchored,
        LawArg::Uniform => VLaw::Uniform { a: a.a, b: a.b },
    };
    let run = ToyRun {
        toy: ToyConfig { n: a.n, law },
        train: TrainConfig {
            steps: a.steps,
            lr: a.lr,
            batch_size: a.batch,
            optimizer: optimizer(a.optimizer),
            seed: ctx.seed,
        },
        hidden: a.hidden,
        ddim_steps: a.ddim_steps,
        n_generate: a.n_generate,
        seed: ctx.seed,
    };
    run.toy.validate().map_err(|e| UsageError(e.to_string()))?;
    let report = run_toy(&run, ctx.exec)?;
    fs::create_dir_all(&a.out)?;

    let mut csv = String::from("u,v,x\n");
    for (u, v) in &report.factors {
        writeln!(csv, "{u},{v},{}", u * v)?;
    }
    let samples_path = a.out.join("samples.csv");
    fs::write(&samples_path, csv)?;

    let net = report.net.as_ref().expect("run_toy returns the trained net");
    let schedule = DiffusionSchedule::default();
    let st = &report.standardizer;
    let axis: Vec<f64> = (0..SCORE_GRID)
        .map(|i| -3.0 + 6.0 * i as f64 / (SCORE_GRID - 1) as f64)
        .collect();
    let points: Vec<Vec<f64>> = axis
        .iter()
        .flat_map(|&zu| axis.iter().map(move |&zv| vec![zu, zv]))
        .collect();
    let scores = score_field(net, &schedule, SCORE_FIELD_T, &points, &[])?;
    let mut field = String::from("u,v,score_u,score_v\n");
    for (z, s) in points.iter().zip(&scores) {
        let x = st.inverse(z);
        writeln!(field, "{},{},{},{}", x[0], x[1], s[0] / st.scale[0], s[1] / st.scale[1])?;
    }
    let field_path = a.out.join(format!("score_field_t{SCORE_FIELD_T}.csv"));
    fs::write(&field_path, field)?;

    let metrics = serde_json::json!({
        "law": run.toy.law,
        "w1": report.w1,
        "mode_mass": report.mode_mass,
        "loss_trace": report.loss_trace,
        "standardizer": report.standardizer,
    });
    let metrics_path = a.out.join("metrics.json");
    fs::write(&metrics_path, serde_json::to_string_pretty(&metrics)?)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({"w1": report.w1, "mode_mass": report.mode_mass}))?
    );

    let mut m = ctx.manifest("toy-diffusion", a);
    m.output(&samples_path);
    m.output(&field_path);
    m.output(&metrics_path);
    m.note("standardizer", &report.standardizer);
    m.write(&a.out)
}

/// Everything besides the weights needed to sample from a trained model.
#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    layout: PrimitiveLayout,
    standardizer: Standardizer,
    cond_standardizer: Option<Standardizer>,
    condition_names: Vec<String>,
    schedule_steps: usize,
    beta_start: f64,
    beta_end: f64,
}

const MODEL_FILE: &str = "model.gatm";
const META_FILE: &str = "model.json";

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let archive = PrimitiveArchive::load(&a.input).with_context(|| format!("reading archive {}", a.input.display()))?;
    let dim = archive.layout.vector_len();
    let states: Vec<f64> = archive.items.iter().flat_map(|p| p.to_vector()).collect();
    let standardizer = Standardizer::fit(&states, dim)?;
    let cond_dim = if a.unconditional { 0 } else { archive.condition_names.len() };
    let (conds, cond_standardizer) = if cond_dim > 0 {
        let raw: Vec<f64> = archive.conditions.concat();
        let cs = Standardizer::fit(&raw, cond_dim)?;
        (cs.forward(&raw), Some(cs))
    } else {
        (Vec::new(), None)
    };
    let data = TrainingSet::new(dim, standardizer.forward(&states), cond_dim, conds)?;
    let schedule = DiffusionSchedule::default();
    let mut net = ScoreNet::new(dim, cond_dim, a.hidden, ctx.seed)?;
    let cfg = TrainConfig {
        steps: a.steps,
        lr: a.lr,
        batch_size: a.batch,
        optimizer: optimizer(a.optimizer),
        seed: ctx.seed,
    };
    let trace = train(&mut net, &data, &schedule, &cfg, ctx.exec)?;
    fs::create_dir_all(&a.out)?;
    save_checkpoint(a.out.join(MODEL_FILE), &net)?;
    let meta = ModelMeta {
        layout: archive.layout.clone(),
        standardizer: standardizer.clone(),
        cond_standardizer,
        condition_names: if cond_dim > 0 { archive.condition_names.clone() } else { vec![] },
        schedule_steps: schedule.steps(),
        beta_start: DiffusionSchedule::BETA_START,
        beta_end: DiffusionSchedule::BETA_END,
    };
    fs::write(a.out.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;
    fs::write(a.out.join("loss.json"), serde_json::to_string_pretty(&trace)?)?;
    let mut m = ctx.manifest("train", a);
    m.input(&a.input);
    for f in [MODEL_FILE, META_FILE, "loss.json"] {
        m.output(&a.out.join(f));
    }
    m.anchors(archive.layout.anchor_hashes.iter().map(|(&k, h)| (k, h)));
    m.note("standardizer", &standardizer);
    m.note("parameters", net.param_count());
    m.write(&a.out)
}

fn sample(ctx: &Ctx, a: &SampleArgs) -> Result<()> {
    let meta: ModelMeta = serde_json::from_str(&fs::read_to_string(a.model.join(META_FILE))?)?;
    let net = load_checkpoint(a.model.join(MODEL_FILE))?;
    let schedule = DiffusionSchedule::linear(meta.schedule_steps, meta.beta_start, meta.beta_end)?;
    let cond_dim = net.cond_dim();
    let cond = match (&meta.cond_standardizer, a.cond.len()) {
        (None, 0) => Vec::new(),
        (None, _) => bail!(UsageError("model is unconditional; drop --cond".into())),
        (Some(cs), n) if n == cond_dim => cs.forward(&a.cond),
        (Some(_), n) => bail!(UsageError(format!(
            "model expects {cond_dim} condition values ({}), got {n}",
            meta.condition_names.join(", ")
        ))),
    };
    let z = ddim_sample(&net, &schedule, a.ddim_steps, a.n, ctx.seed, &cond, cond_dim, ctx.exec)?;
    let items = z
        .iter()
        .map(|v| meta.layout.from_vector(&meta.standardizer.inverse(v), true))
        .collect::<gats_core::Result<Vec<_>>>()?;
    let archive = PrimitiveArchive {
        layout: meta.layout.clone(),
        conditions: vec![a.cond.clone(); items.len()],
        items,
        condition_names: meta.condition_names.clone(),
    };
    archive.save(&a.out)?;
    let mut m = ctx.manifest("sample", a);
    m.input(&a.model);
    m.output(&a.out);
    m.anchors(meta.layout.anchor_hashes.iter().map(|(&k, h)| (k, h)));
    m.write(&a.out)
}
