//! The commands behind the CLI: dataset synthesis, deterministic training,
//! evaluation against the no-network baseline, single-image restoration, and
//! the gradient-check suite.
//!
//! Everything here is pure library code returning structured results; the
//! binary maps them onto flags, stdout, and exit codes. All randomness
//! derives from the config's master seed, and every output file is written
//! atomically, so a rerun of any command reproduces its outputs byte for
//! byte and an interrupted run never clobbers a previous result.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::degrade::{degrade, synth_scene, DegradationSpec};
use crate::error::{Error, Result};
use crate::io::{
    atomic_write, checkpoint_bytes, export_png16, read_checkpoint, read_pquad,
    write_checkpoint, write_pquad,
};
use crate::metrics::{evaluate_many, MetricReport};
use crate::net::{
    attention_forward, init_params, network_forward, param_shapes, stokes_input,
    unit_forward, NetworkConfig,
};
use crate::objective::{loss_terms, quad_from_tensor, quad_tensor};
use crate::polar::{consistency_residual, params_from_quad, PolarQuad};
use crate::scalar::Scalar;
use crate::tensor::{
    check_gradients, concat_channels, cosine_lr, AdamW, GradCheckReport, ParamSet, Tensor,
};

/// One dataset record; paths are relative to the dataset directory so the
/// directory can be moved as a unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub clean: PathBuf,
    pub degraded: PathBuf,
    pub degradation: DegradationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub task: String,
    pub entries: Vec<IndexEntry>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl DatasetIndex {
    pub fn file_in(dir: impl AsRef<Path>) -> PathBuf {
        dir.as_ref().join("index.json")
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = Self::file_in(&dir);
        let text = fs::read_to_string(&path).map_err(|e| {
            Error::Data(format!("reading dataset index {}: {e} (run synth first?)", path.display()))
        })?;
        let index: DatasetIndex = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("parsing {}: {e}", path.display())))?;
        index.validate()?;
        Ok(index)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::Data(format!("serializing dataset index: {e}")))?;
        atomic_write(Self::file_in(dir), &bytes)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, split) in [("train", &self.train), ("val", &self.val)] {
            if let Some(&i) = split.iter().find(|&&i| i >= self.entries.len()) {
                return Err(Error::Data(format!(
                    "dataset index {name} split references entry {i}, but only {} exist",
                    self.entries.len()
                )));
            }
        }
        if self.train.iter().any(|i| self.val.contains(i)) {
            return Err(Error::Data("dataset train and val splits overlap".into()));
        }
        Ok(())
    }
}

/// Generates the configured number of clean scenes, degrades each one under
/// the task, and writes both plus the index. Deterministic in the master
/// seed: the same config always produces byte-identical files.
pub fn synth_command(cfg: &PipelineConfig) -> Result<DatasetIndex> {
    cfg.validate()?;
    let dir = &cfg.paths.dataset_dir;
    fs::create_dir_all(dir)?;

    let mut entries = Vec::with_capacity(cfg.scene_count());
    for i in 0..cfg.scene_count() {
        // The written f32 quad is the ground truth; degrading it (rather than
        // the f64 original) keeps file contents recomputable from each other.
        let clean: PolarQuad<f32> = synth_scene(&cfg.scene_spec(i))?.cast();
        let spec = cfg.degradation_spec(i);
        let (degraded, _meta) = degrade(&clean, &spec)?;

        let clean_name = PathBuf::from(format!("clean_{i:04}.pquad"));
        let degraded_name = PathBuf::from(format!("degraded_{i:04}.pquad"));
        write_pquad(dir.join(&clean_name), &clean)?;
        write_pquad(dir.join(&degraded_name), &degraded)?;
        entries.push(IndexEntry { clean: clean_name, degraded: degraded_name, degradation: spec });
    }

    let index = DatasetIndex {
        task: cfg.task.name().to_string(),
        entries,
        train: cfg.train_indices().collect(),
        val: cfg.val_indices().collect(),
    };
    index.save(dir)?;
    Ok(index)
}

struct Pair {
    clean: PolarQuad<f32>,
    degraded: PolarQuad<f32>,
}

fn load_pairs(index: &DatasetIndex, dir: &Path, ids: &[usize]) -> Result<Vec<Pair>> {
    ids.iter()
        .map(|&i| {
            let entry = &index.entries[i];
            let clean: PolarQuad<f32> = read_pquad(dir.join(&entry.clean))?;
            let degraded: PolarQuad<f32> = read_pquad(dir.join(&entry.degraded))?;
            let same = clean.height() == degraded.height()
                && clean.width() == degraded.width()
                && clean.channels() == degraded.channels();
            if !same {
                return Err(Error::Data(format!(
                    "dataset pair {i} has mismatched shapes: clean {}x{}x{}, degraded {}x{}x{}",
                    clean.height(),
                    clean.width(),
                    clean.channels(),
                    degraded.height(),
                    degraded.width(),
                    degraded.channels()
                )));
            }
            Ok(Pair { clean, degraded })
        })
        .collect()
}

fn check_pair_fits(pair: &Pair, net: &NetworkConfig) -> Result<()> {
    if pair.clean.channels() != net.image_channels {
        return Err(Error::Data(format!(
            "dataset has {} channels per angle but the network expects {}",
            pair.clean.channels(),
            net.image_channels
        )));
    }
    if pair.clean.height() % 4 != 0 || pair.clean.width() % 4 != 0 {
        return Err(Error::Data(format!(
            "image dimensions {}x{} are not multiples of 4",
            pair.clean.height(),
            pair.clean.width()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub image_loss: f64,
    /// Absent when the Stokes term is disabled (lambda_s = 0).
    pub stokes_loss: Option<f64>,
    pub total_loss: f64,
}

#[derive(Debug)]
pub struct TrainSummary {
    pub steps: Vec<StepLog>,
    /// Step whose update produced the lowest loss, if any step ran.
    pub best_step: Option<u64>,
    pub best_loss: Option<f64>,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub log_path: PathBuf,
}

/// Trains on the index's training split, one full image per step, cycling in
/// index order. Writes `final.ckpt` (the parameters after the last step),
/// `best.ckpt` (after the lowest-loss step), and `train_log.json`. With
/// total_steps = 0 both checkpoints hold the initialization.
pub fn train_command(cfg: &PipelineConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let index = DatasetIndex::load(&cfg.paths.dataset_dir)?;
    if index.task != cfg.task.name() {
        return Err(Error::Data(format!(
            "dataset was synthesized for task {} but the config says {}",
            index.task,
            cfg.task.name()
        )));
    }
    let total_steps = cfg.optimizer.total_steps;
    if index.train.is_empty() && total_steps > 0 {
        return Err(Error::Data("training split is empty".into()));
    }
    let pairs = load_pairs(&index, &cfg.paths.dataset_dir, &index.train)?;
    for pair in &pairs {
        check_pair_fits(pair, &cfg.network)?;
    }

    // Inputs are fixed across steps, so their graph leaves are built once.
    let tensors: Vec<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> = pairs
        .iter()
        .map(|p| {
            let deg = quad_tensor(&p.degraded, false);
            let stk = stokes_input(&deg);
            let gt = quad_tensor(&p.clean, false);
            (deg, stk, gt)
        })
        .collect();

    let params: ParamSet<f32> = init_params(&cfg.network, cfg.data.seed);
    let mut opt = AdamW::new(cfg.optimizer.adamw());
    let mut steps = Vec::with_capacity(total_steps as usize);
    let mut best: Option<(u64, f64, Vec<u8>)> = None;

    for step in 0..total_steps {
        let (deg, stk, gt) = &tensors[step as usize % tensors.len()];
        let lr = cosine_lr(step, total_steps, cfg.optimizer.lr_max, cfg.optimizer.lr_min);
        opt.set_lr(lr);

        let pred = network_forward(deg, stk, &params, &cfg.network);
        let terms = loss_terms(&pred, gt, &cfg.loss);
        let total = terms.total.item().to_f64();
        if !total.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became non-finite ({total}) at step {step}; aborting without \
                 touching checkpoints"
            )));
        }
        let grads = terms.total.backward()?;
        opt.step(&params, &grads);

        steps.push(StepLog {
            step,
            lr,
            image_loss: terms.image.item().to_f64(),
            stokes_loss: terms.stokes.as_ref().map(|t| t.item().to_f64()),
            total_loss: total,
        });
        if best.as_ref().map_or(true, |(_, b, _)| total < *b) {
            best = Some((step, total, checkpoint_bytes(&params)));
        }
    }

    fs::create_dir_all(&cfg.paths.checkpoint_dir)?;
    let final_checkpoint = cfg.paths.checkpoint_dir.join("final.ckpt");
    let best_checkpoint = cfg.paths.checkpoint_dir.join("best.ckpt");
    write_checkpoint(&final_checkpoint, &params)?;
    match &best {
        Some((_, _, bytes)) => atomic_write(&best_checkpoint, bytes)?,
        None => write_checkpoint(&best_checkpoint, &params)?,
    }
    let log_path = cfg.paths.checkpoint_dir.join("train_log.json");
    let log_bytes = serde_json::to_vec_pretty(&steps)
        .map_err(|e| Error::Data(format!("serializing training log: {e}")))?;
    atomic_write(&log_path, &log_bytes)?;

    Ok(TrainSummary {
        steps,
        best_step: best.as_ref().map(|(s, _, _)| *s),
        best_loss: best.as_ref().map(|(_, l, _)| *l),
        final_checkpoint,
        best_checkpoint,
        log_path,
    })
}

/// Reads a checkpoint and verifies it matches the network architecture
/// (same parameter names, shapes, and order).
pub fn load_matching_checkpoint(
    path: impl AsRef<Path>,
    net: &NetworkConfig,
) -> Result<ParamSet<f32>> {
    let path = path.as_ref();
    let params: ParamSet<f32> = read_checkpoint(path)?;
    let expected = param_shapes(net);
    if params.len() != expected.len() {
        return Err(Error::Data(format!(
            "checkpoint {} holds {} parameters but the network has {}",
            path.display(),
            params.len(),
            expected.len()
        )));
    }
    for ((name, tensor), (want_name, want_shape)) in params.iter().zip(&expected) {
        if name != want_name || tensor.shape() != *want_shape {
            return Err(Error::Data(format!(
                "checkpoint {} does not match the network: found {name} {:?}, expected \
                 {want_name} {want_shape:?}",
                path.display(),
                tensor.shape()
            )));
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: MetricReport,
    pub baseline: MetricReport,
}

/// Scores the checkpoint on the validation split and, alongside it, the
/// baseline of handing the degraded input straight to the metrics. Writes the
/// combined JSON document to the configured report path.
pub fn eval_command(cfg: &PipelineConfig, checkpoint: impl AsRef<Path>) -> Result<EvalReport> {
    cfg.validate()?;
    let index = DatasetIndex::load(&cfg.paths.dataset_dir)?;
    if index.task != cfg.task.name() {
        return Err(Error::Data(format!(
            "dataset was synthesized for task {} but the config says {}",
            index.task,
            cfg.task.name()
        )));
    }
    if index.val.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let pairs = load_pairs(&index, &cfg.paths.dataset_dir, &index.val)?;
    for pair in &pairs {
        check_pair_fits(pair, &cfg.network)?;
    }
    let params = load_matching_checkpoint(checkpoint, &cfg.network)?;

    let mut restored = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let deg = quad_tensor(&pair.degraded, false);
        let pred = network_forward(&deg, &stokes_input(&deg), &params, &cfg.network);
        restored.push(quad_from_tensor(&pred)?);
    }

    let model_pairs: Vec<_> = restored.iter().zip(&pairs).map(|(r, p)| (r, &p.clean)).collect();
    let baseline_pairs: Vec<_> = pairs.iter().map(|p| (&p.degraded, &p.clean)).collect();
    let report = EvalReport {
        model: evaluate_many(&model_pairs)?,
        baseline: evaluate_many(&baseline_pairs)?,
    };

    if let Some(parent) = cfg.paths.report_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let bytes = serde_json::to_vec_pretty(&report)
        .map_err(|e| Error::Data(format!("serializing report: {e}")))?;
    atomic_write(&cfg.paths.report_path, &bytes)?;
    Ok(report)
}

#[derive(Debug)]
pub struct InferSummary {
    pub output: PathBuf,
    /// Mean absolute consistency residual of the input and of the restoration;
    /// reported for inspection, never asserted.
    pub consistency_in: f64,
    pub consistency_out: f64,
    /// Derived total intensity, DoP, and AoP previews (16-bit PNG).
    pub auxiliaries: [PathBuf; 3],
}

/// Restores one PQUAD with the given checkpoint and writes the result plus
/// three derived previews (total intensity scaled into [0, 1] by its max when
/// needed, DoP as-is, AoP divided by pi).
pub fn infer_command(
    cfg: &PipelineConfig,
    checkpoint: impl AsRef<Path>,
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
) -> Result<InferSummary> {
    cfg.validate()?;
    let output = output.as_ref().to_path_buf();
    let quad: PolarQuad<f32> = read_pquad(input)?;
    let pair_probe = Pair { clean: quad.cast(), degraded: quad.cast() };
    check_pair_fits(&pair_probe, &cfg.network)?;
    let params = load_matching_checkpoint(checkpoint, &cfg.network)?;

    let deg = quad_tensor(&quad, false);
    let pred = network_forward(&deg, &stokes_input(&deg), &params, &cfg.network);
    let restored = quad_from_tensor(&pred)?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_pquad(&output, &restored)?;

    let derived = params_from_quad(&restored.cast::<f64>());
    let ti_max = derived.ti.values().iter().fold(0.0f64, |m, &v| m.max(v));
    let ti_scale = if ti_max > 1.0 { 1.0 / ti_max } else { 1.0 };
    let ti = derived.ti.map(|v| v * ti_scale);
    let aop = derived.aop.map(|v| v / std::f64::consts::PI);

    let stem = output.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let parent = output.parent().map(Path::to_path_buf).unwrap_or_default();
    let aux_path = |suffix: &str| parent.join(format!("{stem}_{suffix}.png"));
    let auxiliaries =
        [aux_path("ti"), aux_path("dop"), aux_path("aop")];
    export_png16(&auxiliaries[0], &ti)?;
    export_png16(&auxiliaries[1], &derived.dop)?;
    export_png16(&auxiliaries[2], &aop)?;

    Ok(InferSummary {
        output,
        consistency_in: consistency_residual(&quad),
        consistency_out: consistency_residual(&restored),
        auxiliaries,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckRow {
    pub name: String,
    pub coords: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
}

impl From<GradCheckReport> for GradcheckRow {
    fn from(r: GradCheckReport) -> Self {
        GradcheckRow {
            name: r.name.clone(),
            coords: r.coords_checked,
            max_rel_err: r.max_rel_err,
            max_abs_err: r.max_abs_err,
            passed: r.passed(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckSummary {
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    /// Fixed-width table, one row per check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<24} {:>7} {:>13} {:>13}  status\n",
            "check", "coords", "max rel err", "max abs err"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<24} {:>7} {:>13.3e} {:>13.3e}  {}\n",
                r.name,
                r.coords,
                r.max_rel_err,
                r.max_abs_err,
                if r.passed { "pass" } else { "FAIL" }
            ));
        }
        out
    }
}

fn fd_leaf(shape: [usize; 4], seed: u64, away_from_zero: bool) -> Tensor<f64> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.2..1.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            if away_from_zero {
                sign * v
            } else {
                sign * (v - 0.2)
            }
        })
        .collect();
    Tensor::leaf(shape, data, true)
}

/// Runs the finite-difference suite: every differentiable tensor operation,
/// one full dual-branch unit, and the tiny end-to-end network.
pub fn gradcheck_command() -> GradcheckSummary {
    let mut rows: Vec<GradcheckRow> = Vec::new();
    let mut run = |name: &str, leaves: &[&Tensor<f64>], f: &dyn Fn() -> Tensor<f64>, samples: usize| {
        rows.push(check_gradients(name, leaves, f, samples, 0xfd).into());
    };

    let sq = |t: &Tensor<f64>| t.mul(t).mean_all();

    let a = fd_leaf([1, 2, 3, 3], 1, false);
    let b = fd_leaf([1, 2, 3, 3], 2, false);
    run("add", &[&a, &b], &|| sq(&a.add(&b)), 0);
    run("sub", &[&a, &b], &|| sq(&a.sub(&b)), 0);
    run("mul", &[&a, &b], &|| sq(&a.mul(&b)), 0);
    run("scale", &[&a], &|| sq(&a.scale(-1.7)), 0);

    // Kinked ops get inputs bounded away from the kink.
    let k = fd_leaf([1, 2, 4, 4], 3, true);
    run("abs", &[&k], &|| k.abs().mean_all(), 0);
    run("relu", &[&k], &|| sq(&k.relu()), 0);
    run("gelu", &[&k], &|| sq(&k.gelu()), 0);
    run("softmax_last", &[&k], &|| sq(&k.softmax_last()), 0);
    run("mean_all", &[&k], &|| k.mean_all(), 0);

    let ma = fd_leaf([1, 2, 3, 4], 4, false);
    let mb = fd_leaf([1, 2, 4, 2], 5, false);
    run("matmul", &[&ma, &mb], &|| sq(&ma.matmul(&mb)), 0);
    run("transpose_last2", &[&ma], &|| sq(&ma.transpose_last2()), 0);
    run("reshape", &[&ma], &|| sq(&ma.reshape([1, 4, 2, 3])), 0);

    let sh = fd_leaf([1, 8, 2, 2], 6, false);
    run("pixel_shuffle", &[&sh], &|| sq(&sh.pixel_shuffle(2)), 0);
    run("pixel_unshuffle", &[&sh], &|| sq(&sh.pixel_unshuffle(2)), 0);
    run("slice_channels", &[&sh], &|| sq(&sh.slice_channels(2, 6)), 0);
    run("concat_channels", &[&a, &b], &|| sq(&concat_channels(&[&a, &b])), 0);

    let dc = fd_leaf([1, 3, 3, 3], 7, false);
    let ds = fd_leaf([1, 3, 1, 1], 8, true);
    run("div_channels", &[&dc, &ds], &|| sq(&dc.div_channels(&ds)), 0);

    let cx = fd_leaf([1, 3, 5, 5], 9, false);
    let cw = fd_leaf([2, 3, 3, 3], 10, false);
    let cb = fd_leaf([1, 2, 1, 1], 11, false);
    run("conv2d", &[&cx, &cw, &cb], &|| sq(&cx.conv2d(&cw, Some(&cb), 2, 1)), 0);

    let dw = fd_leaf([3, 1, 3, 3], 12, false);
    let db = fd_leaf([1, 3, 1, 1], 13, false);
    run("dwconv2d", &[&dc, &dw, &db], &|| sq(&dc.dwconv2d(&dw, Some(&db))), 0);

    let pw = fd_leaf([4, 3, 1, 1], 14, false);
    let pb = fd_leaf([1, 4, 1, 1], 15, false);
    run("conv1x1", &[&dc, &pw, &pb], &|| sq(&dc.conv1x1(&pw, Some(&pb))), 0);

    let ln_g = fd_leaf([1, 3, 1, 1], 16, true);
    let ln_b = fd_leaf([1, 3, 1, 1], 17, false);
    run("layer_norm", &[&dc, &ln_g, &ln_b], &|| sq(&dc.layer_norm(&ln_g, &ln_b, 1e-6)), 0);
    run("instance_norm", &[&dc], &|| sq(&dc.instance_norm(1e-6)), 0);

    // One full unit: attention plus modulation with all parameters probed.
    let unit_params: ParamSet<f64> = init_params(
        &NetworkConfig {
            base_channels: 4,
            unit_counts: [1; 6],
            head_counts: [2; 6],
            modulation_expansion: 2,
            image_channels: 1,
        },
        0xfd,
    );
    let ux = fd_leaf([1, 4, 4, 4], 18, false);
    let uy = fd_leaf([1, 4, 4, 4], 19, false);
    {
        let mut leaves: Vec<&Tensor<f64>> = Vec::new();
        for (name, t) in unit_params.iter() {
            if name.starts_with("enc1.u0.") {
                leaves.push(t);
            }
        }
        leaves.push(&ux);
        leaves.push(&uy);
        run(
            "unit_forward",
            &leaves,
            &|| {
                let (xo, yo) = unit_forward(&ux, &uy, 2, 2, &unit_params, "enc1.u0");
                sq(&xo).add(&sq(&yo))
            },
            3,
        );
        run(
            "attention_forward",
            &[&ux, &uy],
            &|| {
                let (xo, yo) = attention_forward(&ux, &uy, 2, &unit_params, "enc1.u0.attn");
                sq(&xo).add(&sq(&yo))
            },
            0,
        );
    }

    // End to end on the tiny network at a reduced spatial size.
    let cfg = NetworkConfig::tiny();
    let net_params: ParamSet<f64> = init_params(&cfg, 0xfe);
    let nq = fd_leaf([1, 4, 12, 12], 20, false);
    let ns = fd_leaf([1, 2, 12, 12], 21, false);
    let target = fd_leaf([1, 4, 12, 12], 22, false);
    {
        let mut leaves: Vec<&Tensor<f64>> = net_params.iter().map(|(_, t)| t).collect();
        leaves.push(&nq);
        leaves.push(&ns);
        run(
            "network_forward",
            &leaves,
            &|| {
                let out = network_forward(&nq, &ns, &net_params, &cfg);
                sq(&out.sub(&target))
            },
            1,
        );
    }

    GradcheckSummary { rows }
}

/// Negative control for the checker itself: the forward value depends on a
/// term routed around the graph, so the analytic gradient is missing it and
/// the check must fail. Test fixture; never part of [`gradcheck_command`].
pub fn gradcheck_negative_control() -> GradcheckRow {
    let x = fd_leaf([1, 1, 2, 2], 99, true);
    let report = check_gradients(
        "severed-adjoint control",
        &[&x],
        || {
            let smooth = x.mul(&x).mean_all();
            let bypass: f64 = x.to_vec().iter().sum();
            smooth.add(&Tensor::scalar(bypass))
        },
        0,
        0xfd,
    );
    report.into()
}
