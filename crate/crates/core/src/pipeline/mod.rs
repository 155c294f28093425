//! Two-stage training pipeline, evaluation, and the theory check suite.
//!
//! Stage 1 pretrains each modality branch independently with the
//! adaptive-margin contrastive objective on top of the regression loss.
//! Stage 2 initializes from those checkpoints and trains jointly with
//! sharpness-aware gradient modulation (or plain joint Adam in baseline
//! mode). Every artifact lands in the run's output directory: CSV datasets,
//! a JSON data summary, JSON checkpoints, JSON-lines step logs, and JSON
//! reports, all carrying a schema version.

pub mod config;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

pub use config::RunConfig;

use crate::autodiff::Tape;
use crate::datagen::{self, Dataset};
use crate::error::{Error, Result};
use crate::losses::{margin_at, partition, regression_loss, supcon_loss};
use crate::metrics::{grouped_eval, GroupedReport};
use crate::model::{
    load_checkpoint, postprocess, save_checkpoint, Checkpoint, LevelMap, TwoBranchNet,
};
use crate::sgm::{adam_update, joint_adam_step, sgm_step, AdamState, SgmState, StepReport};
use crate::theory::{
    containment_sim, divergence_verdict, double_well_probe, flat_bound, gd_trajectory, pearson,
    FlatRegionSpec, ProbeConfig, ProbeOptimizer, ProbeTrace, QuadraticTestbed, SmoothedVee,
    SteepWalledVee, Verdict, WellSpec,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const FILE_CONFIG: &str = "config.toml";
pub const FILE_TRAIN: &str = "train.csv";
pub const FILE_TEST: &str = "test.csv";
pub const FILE_SUMMARY: &str = "summary.json";
pub const FILE_JOINT: &str = "joint.json";
pub const FILE_JOINT_STEPS: &str = "joint_steps.jsonl";
pub const FILE_BASELINE: &str = "baseline.json";
pub const FILE_BASELINE_STEPS: &str = "baseline_steps.jsonl";
pub const FILE_EVAL: &str = "eval.json";
pub const FILE_THEORY: &str = "theory.json";
pub const FILE_PROBE: &str = "probe.json";

pub fn stage1_checkpoint_file(modality: usize) -> String {
    format!("stage1_m{modality}.json")
}

pub fn stage1_log_file(modality: usize) -> String {
    format!("stage1_m{modality}_log.jsonl")
}

/// Per-group sample counts in Many/Middle/Few order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub many: usize,
    pub middle: usize,
    pub few: usize,
}

impl From<[usize; 3]> for GroupCounts {
    fn from(c: [usize; 3]) -> Self {
        GroupCounts {
            many: c[0],
            middle: c[1],
            few: c[2],
        }
    }
}

/// Frozen per-run dataset facts: group counts, the severity level map from
/// the training-split target quartiles, and feature standardization stats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub schema_version: u32,
    pub n_train: usize,
    pub n_test: usize,
    pub group_counts_train: GroupCounts,
    pub group_counts_test: GroupCounts,
    pub level_map: LevelMap,
    /// Per flattened feature dimension, over the training split.
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DataBundle {
    pub train: Dataset,
    pub test: Dataset,
    pub summary: DataSummary,
}

/// Generates, labels, and splits the dataset, freezing the level map and
/// standardization statistics from the training split.
pub fn build_data(cfg: &RunConfig) -> Result<DataBundle> {
    cfg.validate()?;
    let spec = cfg.longtail_spec();
    let targets = datagen::sample_targets(&spec)?;
    let mut dataset = datagen::synthesize(&spec, &targets)?;
    dataset.relabel_groups(&cfg.thresholds())?;
    let (train, test) = datagen::split(&dataset, cfg.data.train_fraction, cfg.split_seed())?;

    let level_map = LevelMap::from_targets(&train.targets())?;
    let dim_total: usize = train.modality_dims.iter().sum();
    let mut mean = vec![0.0; dim_total];
    let mut var = vec![0.0; dim_total];
    for s in &train.samples {
        for (j, v) in s.features.iter().flatten().enumerate() {
            mean[j] += v;
        }
    }
    let n = train.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    for s in &train.samples {
        for (j, v) in s.features.iter().flatten().enumerate() {
            var[j] += (v - mean[j]) * (v - mean[j]);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt().max(1e-8)).collect();

    let summary = DataSummary {
        schema_version: REPORT_SCHEMA_VERSION,
        n_train: train.len(),
        n_test: test.len(),
        group_counts_train: train.group_counts().into(),
        group_counts_test: test.group_counts().into(),
        level_map,
        feature_mean: mean,
        feature_std: std,
    };
    Ok(DataBundle {
        train,
        test,
        summary,
    })
}

/// A standardized minibatch plus both target scales.
pub struct Batch {
    /// `[modality][sample][dim]`, standardized by the training-split stats.
    pub features: Vec<Vec<Vec<f64>>>,
    pub targets_raw: Vec<f64>,
    pub targets_norm: Vec<f64>,
}

pub fn make_batch(ds: &Dataset, idx: &[usize], summary: &DataSummary) -> Batch {
    let k_total = ds.modality_dims.len();
    let mut features = vec![Vec::with_capacity(idx.len()); k_total];
    let mut targets_raw = Vec::with_capacity(idx.len());
    let mut targets_norm = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &ds.samples[i];
        let mut offset = 0;
        for (k, feats) in s.features.iter().enumerate() {
            let mut x = Vec::with_capacity(feats.len());
            for (j, &v) in feats.iter().enumerate() {
                x.push((v - summary.feature_mean[offset + j]) / summary.feature_std[offset + j]);
            }
            offset += feats.len();
            features[k].push(x);
        }
        targets_raw.push(s.target);
        targets_norm.push(summary.level_map.normalized_target(s.target));
    }
    Batch {
        features,
        targets_raw,
        targets_norm,
    }
}

/// Shuffled minibatch index lists for one epoch (the last batch may be
/// short; it is kept).
fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha12Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// One stage-1 optimizer step as logged.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stage1Log {
    pub step: u64,
    pub epoch: usize,
    pub modality: usize,
    pub margin: f64,
    pub loss: f64,
    pub loss_reg: f64,
    pub loss_supcon: f64,
}

pub struct PretrainOut {
    /// One checkpoint per modality branch (encoder + projection + head).
    pub checkpoints: Vec<Checkpoint>,
    pub logs: Vec<Vec<Stage1Log>>,
}

fn branch_prefixes(k: usize) -> [String; 3] {
    [format!("enc{k}."), format!("proj{k}."), format!("uni{k}.")]
}

/// Stage 1: trains every modality branch independently with plain Adam on
/// the adaptive-margin contrastive + regression objective. The margin clock
/// advances once per minibatch.
pub fn pretrain(cfg: &RunConfig, bundle: &DataBundle) -> Result<PretrainOut> {
    cfg.validate()?;
    let arch = cfg.arch_spec();
    let mut net = TwoBranchNet::init(&arch)?;
    let schedule = cfg.margin_schedule();
    let w = cfg.loss_weights(true);
    let adam_cfg = cfg.stage1_adam();
    let k_total = arch.modality_dims.len();

    let mut logs = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let branch = net.branch_param_indices(k);
        let mut adam = AdamState::for_net(&net);
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.stage1_shuffle_seed(k));
        let mut t: u64 = 0;
        let mut klog = Vec::new();
        for epoch in 0..cfg.stage1.epochs {
            for idx in epoch_batches(bundle.train.len(), cfg.batch_size, &mut rng) {
                let batch = make_batch(&bundle.train, &idx, &bundle.summary);
                let tape = Tape::new();
                let pass = net.forward_unimodal(&tape, &batch.features[k], k)?;
                let margin = margin_at(t, &schedule);
                let reg = regression_loss(&tape, &pass.pred, &batch.targets_norm, &w)?;
                let (supcon_value, total) = if w.lambda_supcon > 0.0 {
                    let part = partition(&batch.targets_raw, margin)?;
                    let sc = supcon_loss(&tape, &pass.z, &part, w.tau)?;
                    let total = tape.add(&reg, &tape.scale(&sc, w.lambda_supcon)?)?;
                    (sc.item()?, total)
                } else {
                    (0.0, reg.clone())
                };

                let grad_map = tape.backward(&total)?;
                let mut grads: Vec<Option<Vec<f64>>> = vec![None; net.params.len()];
                for &i in &branch {
                    let leaf = pass.leaves[i].as_ref().expect("branch leaf present");
                    grads[i] = Some(grad_map.wrt(leaf)?.data().to_vec());
                }
                let mut values = net.param_values();
                adam_update(&mut adam, &mut values, &grads, &adam_cfg)?;
                net.set_param_values(&values)?;

                t += 1;
                klog.push(Stage1Log {
                    step: t,
                    epoch,
                    modality: k,
                    margin,
                    loss: total.item()?,
                    loss_reg: reg.item()?,
                    loss_supcon: supcon_value,
                });
            }
        }
        logs.push(klog);
    }

    let checkpoints = (0..k_total)
        .map(|k| {
            let prefixes = branch_prefixes(k);
            net.to_checkpoint(|p| prefixes.iter().any(|pre| p.name.starts_with(pre.as_str())))
        })
        .collect();
    Ok(PretrainOut { checkpoints, logs })
}

pub struct JointOut {
    pub net: TwoBranchNet,
    pub reports: Vec<StepReport>,
}

/// Stage 2: joint training. With `baseline` the modulated optimizer is
/// replaced by plain Adam on the total loss and stage-1 checkpoints are
/// ignored (the naive fusion reference).
pub fn train_joint(
    cfg: &RunConfig,
    bundle: &DataBundle,
    stage1: Option<&[Checkpoint]>,
    baseline: bool,
) -> Result<JointOut> {
    cfg.validate()?;
    let mut net = TwoBranchNet::init(&cfg.arch_spec())?;
    if !baseline {
        let checkpoints =
            stage1.ok_or_else(|| Error::invalid("joint training requires stage-1 checkpoints"))?;
        for cp in checkpoints {
            net.load_checkpoint(cp)?;
        }
    }
    let w = cfg.loss_weights(false);
    let sgm_cfg = cfg.sgm_config();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.stage2_shuffle_seed());
    let mut reports = Vec::new();

    if baseline {
        let mut adam = AdamState::for_net(&net);
        for _ in 0..cfg.stage2.epochs {
            for idx in epoch_batches(bundle.train.len(), cfg.batch_size, &mut rng) {
                let batch = make_batch(&bundle.train, &idx, &bundle.summary);
                reports.push(joint_adam_step(
                    &mut net,
                    &batch.features,
                    &batch.targets_norm,
                    &w,
                    &mut adam,
                    &sgm_cfg,
                )?);
            }
        }
    } else {
        let mut state = SgmState::new(&net, &sgm_cfg);
        for _ in 0..cfg.stage2.epochs {
            for idx in epoch_batches(bundle.train.len(), cfg.batch_size, &mut rng) {
                let batch = make_batch(&bundle.train, &idx, &bundle.summary);
                let (report, _) = sgm_step(
                    &mut net,
                    &batch.features,
                    &batch.targets_norm,
                    &w,
                    &mut state,
                    &sgm_cfg,
                )?;
                reports.push(report);
            }
        }
    }
    Ok(JointOut { net, reports })
}

/// Final-scale predictions: the fused sigmoid output rescaled through each
/// sample's severity level code.
pub fn predict(net: &TwoBranchNet, ds: &Dataset, summary: &DataSummary) -> Result<Vec<f64>> {
    let mut preds = Vec::with_capacity(ds.len());
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(64) {
        let batch = make_batch(ds, chunk, summary);
        let tape = Tape::new();
        let pass = net.forward(&tape, &batch.features)?;
        for (&p, &i) in pass.out.pred_mm.data().iter().zip(chunk) {
            let level = summary.level_map.level_for(ds.samples[i].target);
            preds.push(postprocess(p, level)?);
        }
    }
    Ok(preds)
}

pub fn evaluate(
    net: &TwoBranchNet,
    test: &Dataset,
    summary: &DataSummary,
) -> Result<GroupedReport> {
    grouped_eval(test, &predict(net, test, summary)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads the generated dataset artifacts back from a run directory.
pub fn read_data(cfg: &RunConfig) -> Result<DataBundle> {
    let dir = &cfg.output_dir;
    let train = datagen::read_csv(&dir.join(FILE_TRAIN))?;
    let test = datagen::read_csv(&dir.join(FILE_TEST))?;
    let summary: DataSummary = read_json(&dir.join(FILE_SUMMARY))?;
    Ok(DataBundle {
        train,
        test,
        summary,
    })
}

/// Writes `train.csv`, `test.csv`, the data summary, and a byte-exact copy
/// of the input config.
pub fn cmd_gen_data(cfg: &RunConfig, config_snapshot: &str) -> Result<DataBundle> {
    let bundle = build_data(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    datagen::write_csv(&bundle.train, &cfg.output_dir.join(FILE_TRAIN))?;
    datagen::write_csv(&bundle.test, &cfg.output_dir.join(FILE_TEST))?;
    write_json(&cfg.output_dir.join(FILE_SUMMARY), &bundle.summary)?;
    std::fs::write(cfg.output_dir.join(FILE_CONFIG), config_snapshot)?;
    Ok(bundle)
}

/// Trains stage 1 from the run directory's dataset and writes one
/// checkpoint and one step log per modality.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PretrainOut> {
    let bundle = read_data(cfg)?;
    let out = pretrain(cfg, &bundle)?;
    for (k, cp) in out.checkpoints.iter().enumerate() {
        save_checkpoint(cp, &cfg.output_dir.join(stage1_checkpoint_file(k)))?;
    }
    for (k, log) in out.logs.iter().enumerate() {
        write_jsonl(&cfg.output_dir.join(stage1_log_file(k)), log)?;
    }
    Ok(out)
}

/// Joint training from the run directory; writes the final checkpoint and
/// the step report log. Baseline mode trains the naive joint model instead.
pub fn cmd_train_joint(cfg: &RunConfig, baseline: bool) -> Result<JointOut> {
    let bundle = read_data(cfg)?;
    let stage1 = if baseline {
        None
    } else {
        let mut cps = Vec::new();
        for k in 0..cfg.data.modality_dims.len() {
            cps.push(load_checkpoint(
                &cfg.output_dir.join(stage1_checkpoint_file(k)),
            )?);
        }
        Some(cps)
    };
    let out = train_joint(cfg, &bundle, stage1.as_deref(), baseline)?;
    let (ckpt_file, steps_file) = if baseline {
        (FILE_BASELINE, FILE_BASELINE_STEPS)
    } else {
        (FILE_JOINT, FILE_JOINT_STEPS)
    };
    save_checkpoint(
        &out.net.to_checkpoint(|_| true),
        &cfg.output_dir.join(ckpt_file),
    )?;
    write_jsonl(&cfg.output_dir.join(steps_file), &out.reports)?;
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalOut {
    pub schema_version: u32,
    pub report: GroupedReport,
    pub baseline: Option<GroupedReport>,
    /// Overall MSE of the evaluated model divided by the baseline's.
    pub mse_ratio: Option<f64>,
}

/// Evaluates a checkpoint on the run's test split, optionally side by side
/// with a baseline checkpoint. Writes `eval.json`.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    baseline_checkpoint: Option<&Path>,
) -> Result<EvalOut> {
    let bundle = read_data(cfg)?;
    let mut net = TwoBranchNet::init(&cfg.arch_spec())?;
    net.load_checkpoint(&load_checkpoint(checkpoint)?)?;
    let report = evaluate(&net, &bundle.test, &bundle.summary)?;

    let baseline = match baseline_checkpoint {
        Some(path) => {
            let mut bnet = TwoBranchNet::init(&cfg.arch_spec())?;
            bnet.load_checkpoint(&load_checkpoint(path)?)?;
            Some(evaluate(&bnet, &bundle.test, &bundle.summary)?)
        }
        None => None,
    };
    let mse_ratio = baseline
        .as_ref()
        .map(|b| report.overall.mse / b.overall.mse);
    let out = EvalOut {
        schema_version: REPORT_SCHEMA_VERSION,
        report,
        baseline,
        mse_ratio,
    };
    write_json(&cfg.output_dir.join(FILE_EVAL), &out)?;
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TheoryCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TheoryOut {
    pub schema_version: u32,
    pub checks: Vec<TheoryCheck>,
    pub all_passed: bool,
}

fn check(name: &str, passed: bool, detail: String) -> TheoryCheck {
    TheoryCheck {
        name: name.into(),
        passed,
        detail,
    }
}

/// Runs every theory check at CLI scale and collects a verdict table.
pub fn run_theory_checks() -> Result<TheoryOut> {
    let mut checks = Vec::new();

    let case = |gamma: f64| QuadraticTestbed {
        l_smooth: 1.0,
        u0: 1.0,
        eta: 0.1,
        gamma,
        steps: 40,
    };
    let conv = divergence_verdict(&gd_trajectory(&case(5.0))?)?;
    checks.push(check(
        "divergence_converging",
        conv == Verdict::Converging,
        format!(
            "gamma=5 verdict {conv:?}, factor {}",
            case(5.0).contraction_factor()
        ),
    ));
    let osc_tb = case(20.0);
    let osc = divergence_verdict(&gd_trajectory(&osc_tb)?)?;
    checks.push(check(
        "divergence_oscillating",
        osc == Verdict::Oscillating && osc_tb.contraction_factor() == -1.0,
        format!(
            "gamma=20 verdict {osc:?}, factor {}",
            osc_tb.contraction_factor()
        ),
    ));
    let div_tb = case(25.0);
    let div_traj = gd_trajectory(&div_tb)?;
    let div = divergence_verdict(&div_traj)?;
    let growth = (div_traj[1] / div_traj[0]).abs();
    checks.push(check(
        "divergence_diverging",
        div == Verdict::Diverging && (growth - 1.5).abs() < 1e-12,
        format!("gamma=25 verdict {div:?}, per-step growth {growth}"),
    ));

    let mut sweep_ok = true;
    let mut rng = ChaCha12Rng::seed_from_u64(4242);
    for i in 0..200 {
        use rand::Rng;
        let eta = rng.gen_range(0.01..0.3);
        let l = rng.gen_range(0.5..3.0);
        let x: f64 = if i % 2 == 0 {
            rng.gen_range(0.1..1.8)
        } else {
            rng.gen_range(2.2..5.0)
        };
        let tb = QuadraticTestbed {
            l_smooth: l,
            u0: 1.0,
            eta,
            gamma: x / (eta * l),
            steps: 200,
        };
        let verdict = divergence_verdict(&gd_trajectory(&tb)?)?;
        let expected = if x < 2.0 {
            Verdict::Converging
        } else {
            Verdict::Diverging
        };
        if verdict != expected {
            sweep_ok = false;
        }
    }
    checks.push(check(
        "divergence_random_sweep",
        sweep_ok,
        "200 samples outside the [1.8, 2.2] band classified by sign".into(),
    ));

    let hand = FlatRegionSpec {
        r: 1.0,
        g_min: 2.0,
        g_max: 2.0,
        epsilon_g: 0.0,
        delta: 0.0,
        eta: 0.1,
    };
    let hand_report = flat_bound(&hand)?;
    checks.push(check(
        "flat_bound_value",
        (hand_report.gamma_base_max - 5.0).abs() < 1e-12 && hand_report.ratio_ok,
        format!(
            "r=1, eta=0.1, G_max=2, delta=0 gives {}",
            hand_report.gamma_base_max
        ),
    ));

    let mut ratio_ok = true;
    for _ in 0..200 {
        use rand::Rng;
        let g_min = rng.gen_range(0.1..5.0);
        let epsilon_g = rng.gen_range(0.0..0.5);
        let spec = FlatRegionSpec {
            r: rng.gen_range(0.1..4.0),
            g_min,
            g_max: g_min * (1.0 + rng.gen_range(0.0..1.0) * epsilon_g),
            epsilon_g,
            delta: rng.gen_range(0.0..0.5),
            eta: rng.gen_range(0.01..1.0),
        };
        ratio_ok &= flat_bound(&spec)?.ratio_ok;
    }
    checks.push(check(
        "flat_bound_ratio",
        ratio_ok,
        "200 random specs".into(),
    ));

    let spec = FlatRegionSpec {
        r: 1.0,
        g_min: 1.0,
        g_max: 1.005,
        epsilon_g: 0.01,
        delta: 0.05,
        eta: 0.1,
    };
    let vee = SmoothedVee::for_flat_region(&spec, 0.0);
    let bound = flat_bound(&spec)?.gamma_base_max;
    let mut contained = true;
    for seed in 0..1000 {
        contained &= containment_sim(&spec, &vee, bound, 200, seed)?;
    }
    checks.push(check(
        "containment_at_bound",
        contained,
        format!("1000 adversarial trials at gamma_base = {bound:.4}"),
    ));

    let steep = SteepWalledVee {
        vee,
        wall_radius: spec.r,
        wall_coeff: 50.0,
    };
    let mut escaped = true;
    for seed in 0..50 {
        escaped &= !containment_sim(&spec, &steep, 10.0 * bound, 200, seed)?;
    }
    checks.push(check(
        "containment_escape",
        escaped,
        "10x the bound exits the ball on the steep-walled function".into(),
    ));

    let wells = WellSpec::narrow_wide_pair();
    let probe_cfg = ProbeConfig::default();
    let sgm_trace = double_well_probe(&wells, ProbeOptimizer::Sgm, 0.05, 400, 42, &probe_cfg)?;
    let corr = pearson(&sgm_trace.sharpness_trace, &sgm_trace.gamma_trace).unwrap_or(-1.0);
    checks.push(check(
        "probe_sharpness_gamma_coupling",
        corr > 0.0,
        format!("pearson(s_t, gamma_t) = {corr:.3}"),
    ));

    let fixed_trace = double_well_probe(
        &wells,
        ProbeOptimizer::FixedGamma(probe_cfg.sgm.gamma_min),
        0.05,
        400,
        42,
        &probe_cfg,
    )?;
    checks.push(check(
        "probe_escape_comparison",
        sgm_trace.final_sharpness.abs() <= fixed_trace.final_sharpness.abs()
            && (sgm_trace.final_u - wells.centers[1]).abs() < 0.5,
        format!(
            "|s| modulated {:.2e} (u = {:.3}) vs fixed {:.2e} (u = {:.3})",
            sgm_trace.final_sharpness.abs(),
            sgm_trace.final_u,
            fixed_trace.final_sharpness.abs(),
            fixed_trace.final_u
        ),
    ));

    let all_passed = checks.iter().all(|c| c.passed);
    Ok(TheoryOut {
        schema_version: REPORT_SCHEMA_VERSION,
        checks,
        all_passed,
    })
}

/// Runs the theory suite and writes `theory.json` to the run directory.
pub fn cmd_theory(cfg: &RunConfig) -> Result<TheoryOut> {
    let out = run_theory_checks()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join(FILE_THEORY), &out)?;
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeOut {
    pub schema_version: u32,
    pub wells: WellSpec,
    pub start: f64,
    pub steps: usize,
    pub seed: u64,
    pub sgm: ProbeTrace,
    pub fixed_gamma_min: ProbeTrace,
    pub pearson_sgm: Option<f64>,
}

/// Runs the double-well comparison (modulated vs fixed minimum factor) and
/// writes `probe.json`.
pub fn cmd_probe(cfg: &RunConfig) -> Result<ProbeOut> {
    let wells = WellSpec::narrow_wide_pair();
    let probe_cfg = ProbeConfig::default();
    let steps = 400;
    let start = 0.05;
    let sgm = double_well_probe(
        &wells,
        ProbeOptimizer::Sgm,
        start,
        steps,
        cfg.seed,
        &probe_cfg,
    )?;
    let fixed = double_well_probe(
        &wells,
        ProbeOptimizer::FixedGamma(probe_cfg.sgm.gamma_min),
        start,
        steps,
        cfg.seed,
        &probe_cfg,
    )?;
    let out = ProbeOut {
        schema_version: REPORT_SCHEMA_VERSION,
        pearson_sgm: pearson(&sgm.sharpness_trace, &sgm.gamma_trace),
        wells,
        start,
        steps,
        seed: cfg.seed,
        sgm,
        fixed_gamma_min: fixed,
    };
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join(FILE_PROBE), &out)?;
    Ok(out)
}
