//! The desk-scale two-stage RGB-TSDF fusion network and its trainer.
//!
//! Stage 1 extracts multi-scale TSDF features (TF1..TF3) and RGB features
//! (RF1..RF3 from the projected volume), fuses them, and predicts
//! preliminary logits. Stage 2 densifies RF1 with classwise feature
//! completion driven by the stage-1 argmax (or ground truth in oracle
//! mode), runs a separate RGB branch on the completed features, reuses the
//! stage-1 TSDF features, and predicts refined logits.
//!
//! The completed RRF1 enters the graph as a fresh leaf, so no gradient
//! flows from stage 2 back into stage-1 RGB parameters through it; the
//! shared TSDF branch, by contrast, is updated by both stages' losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{accumulate_grads, poly_lr, sgd_step, NodeId, Parameter, Tape, Tensor};
use crate::error::{Error, Result};
use crate::fcm::{complete_features, CompletionContext};
use crate::grid::{FeatureVolume, LabelVolume, MaskVolume, NUM_CLASSES};
use crate::loss::{classwise_entropy_loss, cross_entropy_loss, ProbVolume};
use crate::metrics::{
    consistency_score_within, mid_probability_counts, sc_metrics, tally, ConfusionTally,
    EvalMask, ScMetrics, SscResult,
};
use crate::project::surface_mask;
use crate::scenes::{SceneDataset, SceneSample};
use crate::tsdf::{TsdfVolume, Visibility};

/// Nonlinearity between blocks; `Identity` yields a purely linear network
/// for algebraic tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Where stage 2 takes its per-voxel classes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassSource {
    /// Argmax of the stage-1 prediction (the deployment path).
    Stage1Argmax,
    /// Ground-truth labels (oracle mode for isolation tests).
    GroundTruth,
}

/// Architecture switches and widths.
#[derive(Debug, Clone)]
pub struct FusionHyper {
    /// Channel width at every scale; must equal the RF1 feature dimension.
    pub channels: usize,
    pub num_classes: usize,
    pub activation: Activation,
    /// With FCM disabled the model is single-stage (ablation model A).
    pub fcm_enabled: bool,
    /// Reuse stage-1 TSDF features in stage 2; when false the TSDF branch
    /// is replicated with fresh weights (ablation model B).
    pub reuse_tsdf: bool,
    pub class_source: ClassSource,
}

impl Default for FusionHyper {
    fn default() -> Self {
        Self {
            channels: 8,
            num_classes: NUM_CLASSES,
            activation: Activation::Relu,
            fcm_enabled: true,
            reuse_tsdf: true,
            class_source: ClassSource::Stage1Argmax,
        }
    }
}

/// The two-stage model: a flat parameter store addressed by name.
pub struct FusionModel {
    pub hyper: FusionHyper,
    params: Vec<Parameter>,
}

/// Node handles produced by one stage's forward pass.
#[derive(Debug, Clone)]
pub struct StageNodes {
    pub rgb: [NodeId; 3],
    pub tsdf: [NodeId; 3],
    pub logits: NodeId,
}

/// Everything one forward pass leaves behind.
pub struct ForwardTrace {
    /// (parameter index, leaf node) pairs to pull gradients through.
    pub bindings: Vec<(usize, NodeId)>,
    pub tsdf_input: NodeId,
    pub rf1_volume: FeatureVolume,
    pub stage1: StageNodes,
    pub stage2: Option<StageNodes>,
    /// Class map used by the completion (stage 2 only).
    pub class_map: Option<LabelVolume>,
    /// The completed feature volume fed to stage 2, already detached.
    pub rrf1_volume: Option<FeatureVolume>,
}

/// Masks steering stage 2's completion; `gt` is required in oracle mode.
pub struct StageTwoInputs<'a> {
    pub visible: &'a MaskVolume,
    pub occluded: &'a MaskVolume,
    pub gt: Option<&'a LabelVolume>,
}

impl FusionModel {
    /// Initialize with uniform weights in `[-a, a]`, `a = sqrt(1/fan_in)`.
    pub fn new(hyper: FusionHyper, seed: u64) -> Self {
        let c = hyper.channels;
        let k = hyper.num_classes;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();

        let conv = |params: &mut Vec<Parameter>, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize| {
            let a = (1.0 / (cin as f64 * 27.0)).sqrt();
            let w: Vec<f64> = (0..cout * cin * 27).map(|_| rng.random_range(-a..a)).collect();
            let b: Vec<f64> = (0..cout).map(|_| rng.random_range(-a..a)).collect();
            params.push(Parameter::new(
                format!("{name}.w"),
                Tensor::from_vec(&[cout, cin, 3, 3, 3], w).expect("conv shape"),
            ));
            params.push(Parameter::new(
                format!("{name}.b"),
                Tensor::from_vec(&[cout], b).expect("bias shape"),
            ));
        };
        let linear = |params: &mut Vec<Parameter>, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize| {
            let a = (1.0 / cin as f64).sqrt();
            let w: Vec<f64> = (0..cout * cin).map(|_| rng.random_range(-a..a)).collect();
            let b: Vec<f64> = (0..cout).map(|_| rng.random_range(-a..a)).collect();
            params.push(Parameter::new(
                format!("{name}.w"),
                Tensor::from_vec(&[cout, cin], w).expect("linear shape"),
            ));
            params.push(Parameter::new(
                format!("{name}.b"),
                Tensor::from_vec(&[cout], b).expect("bias shape"),
            ));
        };

        conv(&mut params, &mut rng, "tsdf.stem1", 1, c);
        conv(&mut params, &mut rng, "tsdf.stem2", c, c);
        conv(&mut params, &mut rng, "tsdf.down2", c, c);
        conv(&mut params, &mut rng, "tsdf.down3", c, c);
        conv(&mut params, &mut rng, "rgb1.down2", c, c);
        conv(&mut params, &mut rng, "rgb1.down3", c, c);
        conv(&mut params, &mut rng, "head1.t2", c, c);
        conv(&mut params, &mut rng, "head1.t1", c, c);
        linear(&mut params, &mut rng, "head1.cls", c, k);
        if hyper.fcm_enabled {
            conv(&mut params, &mut rng, "rgb2.down2", c, c);
            conv(&mut params, &mut rng, "rgb2.down3", c, c);
            conv(&mut params, &mut rng, "head2.t2", c, c);
            conv(&mut params, &mut rng, "head2.t1", c, c);
            linear(&mut params, &mut rng, "head2.cls", c, k);
            if !hyper.reuse_tsdf {
                conv(&mut params, &mut rng, "tsdf2.stem1", 1, c);
                conv(&mut params, &mut rng, "tsdf2.stem2", c, c);
                conv(&mut params, &mut rng, "tsdf2.down2", c, c);
                conv(&mut params, &mut rng, "tsdf2.down3", c, c);
            }
        }
        Self { hyper, params }
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Indices of parameters whose names start with `prefix`.
    pub fn param_indices_with_prefix(&self, prefix: &str) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()
    }

    fn bind(
        &self,
        tape: &mut Tape,
        bindings: &mut Vec<(usize, NodeId)>,
        name: &str,
    ) -> NodeId {
        let idx = self
            .param_index(name)
            .unwrap_or_else(|| panic!("parameter {name} not in this configuration"));
        let node = tape.leaf(self.params[idx].value.clone());
        bindings.push((idx, node));
        node
    }

    fn activate(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self.hyper.activation {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }

    fn conv_block(
        &self,
        tape: &mut Tape,
        bindings: &mut Vec<(usize, NodeId)>,
        x: NodeId,
        name: &str,
        stride: usize,
    ) -> Result<NodeId> {
        let w = self.bind(tape, bindings, &format!("{name}.w"));
        let b = self.bind(tape, bindings, &format!("{name}.b"));
        let y = tape.conv3d(x, w, b, stride)?;
        Ok(self.activate(tape, y))
    }

    /// Multi-scale fusion: add the two modalities per scale, then walk from
    /// the coarsest sum upward (upsample x2, transform, add the next-finer
    /// sum) and classify.
    pub fn multiscale_fuse(
        &self,
        tape: &mut Tape,
        bindings: &mut Vec<(usize, NodeId)>,
        head: &str,
        f: [NodeId; 3],
        g: [NodeId; 3],
    ) -> Result<NodeId> {
        let h1 = tape.add(f[0], g[0])?;
        let h2 = tape.add(f[1], g[1])?;
        let h3 = tape.add(f[2], g[2])?;
        let mut u = tape.upsample_nearest2(h3)?;
        let w2 = self.bind(tape, bindings, &format!("{head}.t2.w"));
        let b2 = self.bind(tape, bindings, &format!("{head}.t2.b"));
        u = tape.conv3d(u, w2, b2, 1)?;
        u = self.activate(tape, u);
        u = tape.add(u, h2)?;
        u = tape.upsample_nearest2(u)?;
        let w1 = self.bind(tape, bindings, &format!("{head}.t1.w"));
        let b1 = self.bind(tape, bindings, &format!("{head}.t1.b"));
        u = tape.conv3d(u, w1, b1, 1)?;
        u = self.activate(tape, u);
        u = tape.add(u, h1)?;
        let wc = self.bind(tape, bindings, &format!("{head}.cls.w"));
        let bc = self.bind(tape, bindings, &format!("{head}.cls.b"));
        tape.linear(u, wc, bc)
    }

    fn tsdf_branch(
        &self,
        tape: &mut Tape,
        bindings: &mut Vec<(usize, NodeId)>,
        input: NodeId,
        prefix: &str,
    ) -> Result<[NodeId; 3]> {
        let t = self.conv_block(tape, bindings, input, &format!("{prefix}.stem1"), 1)?;
        let tf1 = self.conv_block(tape, bindings, t, &format!("{prefix}.stem2"), 1)?;
        let tf2 = self.conv_block(tape, bindings, tf1, &format!("{prefix}.down2"), 2)?;
        let tf3 = self.conv_block(tape, bindings, tf2, &format!("{prefix}.down3"), 2)?;
        Ok([tf1, tf2, tf3])
    }

    fn rgb_branch(
        &self,
        tape: &mut Tape,
        bindings: &mut Vec<(usize, NodeId)>,
        rf1: NodeId,
        prefix: &str,
    ) -> Result<[NodeId; 3]> {
        let rf2 = self.conv_block(tape, bindings, rf1, &format!("{prefix}.down2"), 2)?;
        let rf3 = self.conv_block(tape, bindings, rf2, &format!("{prefix}.down3"), 2)?;
        Ok([rf1, rf2, rf3])
    }

    /// Stage 1: preliminary logits from the TSDF volume and projected RF1.
    pub fn forward_stage1(
        &self,
        tape: &mut Tape,
        tsdf: &TsdfVolume,
        rf1: &FeatureVolume,
    ) -> Result<ForwardTrace> {
        if rf1.channels() != self.hyper.channels {
            return Err(Error::Shape(format!(
                "RF1 has {} channels, the model is built for {}",
                rf1.channels(),
                self.hyper.channels
            )));
        }
        if tsdf.spec() != rf1.spec() {
            return Err(Error::Shape("TSDF and RF1 use different grids".into()));
        }
        let dims = tsdf.spec().dims;
        if dims.iter().any(|&d| d % 4 != 0) {
            return Err(Error::Shape(format!(
                "grid dims {dims:?} must be divisible by 4 for two scales"
            )));
        }
        let mut bindings = Vec::new();
        let tsdf_data: Vec<f64> = tsdf.values().iter().map(|&v| v as f64).collect();
        let tsdf_input = tape.leaf(
            Tensor::from_vec(&[1, dims[0], dims[1], dims[2]], tsdf_data).expect("tsdf tensor"),
        );
        let rf_data: Vec<f64> = rf1.data().iter().map(|&v| v as f64).collect();
        let rf1_node = tape.leaf(
            Tensor::from_vec(
                &[self.hyper.channels, dims[0], dims[1], dims[2]],
                rf_data,
            )
            .expect("rf tensor"),
        );

        let tf = self.tsdf_branch(tape, &mut bindings, tsdf_input, "tsdf")?;
        let rf = self.rgb_branch(tape, &mut bindings, rf1_node, "rgb1")?;
        let logits = self.multiscale_fuse(tape, &mut bindings, "head1", rf, tf)?;
        Ok(ForwardTrace {
            bindings,
            tsdf_input,
            rf1_volume: rf1.clone(),
            stage1: StageNodes {
                rgb: rf,
                tsdf: tf,
                logits,
            },
            stage2: None,
            class_map: None,
            rrf1_volume: None,
        })
    }

    /// Stage 2: complete RF1 classwise, run the second RGB branch, fuse
    /// with the (reused or replicated) TSDF features, and refine.
    pub fn forward_stage2(
        &self,
        tape: &mut Tape,
        trace: &mut ForwardTrace,
        inputs: &StageTwoInputs,
    ) -> Result<()> {
        if !self.hyper.fcm_enabled {
            return Err(Error::State(
                "stage 2 requires the completion module to be enabled".into(),
            ));
        }
        if trace.stage2.is_some() {
            return Err(Error::State("stage 2 already ran on this trace".into()));
        }
        let class_map = match self.hyper.class_source {
            ClassSource::Stage1Argmax => {
                let logits = tape.value(trace.stage1.logits);
                ProbVolume::from_logits(
                    *trace.rf1_volume.spec(),
                    self.hyper.num_classes,
                    logits.data.clone(),
                )?
                .argmax_labels()
            }
            ClassSource::GroundTruth => inputs
                .gt
                .ok_or_else(|| {
                    Error::State("oracle class source needs ground-truth labels".into())
                })?
                .clone(),
        };
        let ctx = CompletionContext::new(
            class_map.clone(),
            inputs.visible.clone(),
            inputs.occluded.clone(),
        )?;
        let rrf1_volume = complete_features(&trace.rf1_volume, &ctx)?;

        let dims = rrf1_volume.spec().dims;
        let data: Vec<f64> = rrf1_volume.data().iter().map(|&v| v as f64).collect();
        // fresh leaf: stage 2 sees completed features as data, not as a
        // differentiable function of stage 1
        let rrf1 = tape.leaf(
            Tensor::from_vec(&[self.hyper.channels, dims[0], dims[1], dims[2]], data)
                .expect("rrf tensor"),
        );

        let mut bindings = std::mem::take(&mut trace.bindings);
        let rrf = self.rgb_branch(tape, &mut bindings, rrf1, "rgb2")?;
        let tf = if self.hyper.reuse_tsdf {
            trace.stage1.tsdf
        } else {
            self.tsdf_branch(tape, &mut bindings, trace.tsdf_input, "tsdf2")?
        };
        let logits = self.multiscale_fuse(tape, &mut bindings, "head2", rrf, tf)?;
        trace.bindings = bindings;
        trace.stage2 = Some(StageNodes {
            rgb: rrf,
            tsdf: tf,
            logits,
        });
        trace.class_map = Some(class_map);
        trace.rrf1_volume = Some(rrf1_volume);
        Ok(())
    }

    /// Forward-only inference on one sample: preliminary and (when the
    /// model is two-stage) refined probabilities.
    pub fn predict(&self, sample: &SceneSample) -> Result<(ProbVolume, Option<ProbVolume>)> {
        let mut tape = Tape::new();
        let mut trace = self.forward_stage1(&mut tape, &sample.tsdf, &sample.rf1)?;
        let spec = *sample.rf1.spec();
        let probs1 = ProbVolume::from_logits(
            spec,
            self.hyper.num_classes,
            tape.value(trace.stage1.logits).data.clone(),
        )?;
        if !self.hyper.fcm_enabled {
            return Ok((probs1, None));
        }
        let visible = surface_mask(&sample.counts);
        let occluded = sample.tsdf.visibility().mask_of(Visibility::Occluded);
        self.forward_stage2(
            &mut tape,
            &mut trace,
            &StageTwoInputs {
                visible: &visible,
                occluded: &occluded,
                gt: Some(&sample.gt),
            },
        )?;
        let logits2 = trace.stage2.as_ref().expect("stage 2 just ran").logits;
        let probs2 =
            ProbVolume::from_logits(spec, self.hyper.num_classes, tape.value(logits2).data.clone())?;
        Ok((probs1, Some(probs2)))
    }
}

/// Trainer configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    /// Epochs during which only the stage-1 loss is optimized.
    pub stage1_warmup_epochs: usize,
    /// Cross-entropy weight of the empty class during training; semantic
    /// classes always weigh 1. Lowering it counteracts the air-voxel
    /// majority in indoor grids.
    pub ce_empty_weight: f64,
    /// Run validation every this many epochs (0 = final epoch only; the
    /// final epoch is always evaluated).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 2,
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            lambda1: 0.5,
            lambda2: 0.5,
            seed: 1,
            stage1_warmup_epochs: 0,
            ce_empty_weight: 1.0,
            eval_every: 1,
        }
    }
}

/// Aggregated metrics of one stage over an evaluation set.
#[derive(Debug, Clone)]
pub struct StageStats {
    pub miou: f64,
    pub per_class_iou: Vec<f64>,
    pub sc: ScMetrics,
    /// Agreement with the per-class modal prediction on occluded voxels.
    pub consistency_occluded: f64,
    /// Ground-truth-class probability mass strictly inside (0.4, 0.6).
    pub mid_mass: f64,
}

/// Evaluation of preliminary and refined predictions.
#[derive(Debug, Clone)]
pub struct EvalStats {
    pub preliminary: StageStats,
    pub refined: Option<StageStats>,
    /// Fraction of occluded voxels whose completion class disagreed with
    /// ground truth (argmax class source only; 0 in oracle mode).
    pub occluded_mismatch: f64,
}

/// One epoch's log row.
#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub ce1: f64,
    pub le1: f64,
    pub ce2: f64,
    pub le2: f64,
    pub val: Option<EvalStats>,
    pub tape_bytes: usize,
}

/// Full training record.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Peak tape footprint over all steps, values plus gradients.
    pub peak_tape_bytes: usize,
}

const MID_LO: f64 = 0.4;
const MID_HI: f64 = 0.6;

/// Evaluate a model over samples, aggregating confusion tallies across the
/// set before computing IoU.
pub fn evaluate(model: &FusionModel, samples: &[SceneSample]) -> Result<EvalStats> {
    if samples.is_empty() {
        return Err(Error::EmptyEval);
    }
    let mut tally_pre = ConfusionTally::new();
    let mut tally_ref = ConfusionTally::new();
    let mut sc_pre = (0u64, 0u64, 0u64);
    let mut sc_ref = (0u64, 0u64, 0u64);
    let mut mid_pre = (0u64, 0u64);
    let mut mid_ref = (0u64, 0u64);
    let mut cons_pre = Vec::new();
    let mut cons_ref = Vec::new();
    let mut mismatch = Vec::new();
    let mut any_refined = false;

    for sample in samples {
        let (probs1, probs2) = model.predict(sample)?;
        let mask = EvalMask::from_parts(sample.tsdf.visibility(), &sample.gt)?;
        let occluded = sample.tsdf.visibility().mask_of(Visibility::Occluded);

        let pred1 = probs1.argmax_labels();
        tally_pre.merge(&tally(&pred1, &sample.gt, &mask)?);
        let occ1 = MaskVolume::new(
            *pred1.spec(),
            pred1.values().iter().map(|&v| v != 0).collect(),
        )?;
        let m = sc_metrics_counts(&occ1, &sample.gt, &mask);
        sc_pre = (sc_pre.0 + m.0, sc_pre.1 + m.1, sc_pre.2 + m.2);
        let c = mid_probability_counts(&probs1, &sample.gt, MID_LO, MID_HI)?;
        mid_pre = (mid_pre.0 + c.0, mid_pre.1 + c.1);
        cons_pre.push(consistency_score_within(&pred1, &sample.gt, Some(&occluded))?.mean);

        if let Some(probs2) = probs2 {
            any_refined = true;
            let pred2 = probs2.argmax_labels();
            tally_ref.merge(&tally(&pred2, &sample.gt, &mask)?);
            let occ2 = MaskVolume::new(
                *pred2.spec(),
                pred2.values().iter().map(|&v| v != 0).collect(),
            )?;
            let m = sc_metrics_counts(&occ2, &sample.gt, &mask);
            sc_ref = (sc_ref.0 + m.0, sc_ref.1 + m.1, sc_ref.2 + m.2);
            let c = mid_probability_counts(&probs2, &sample.gt, MID_LO, MID_HI)?;
            mid_ref = (mid_ref.0 + c.0, mid_ref.1 + c.1);
            cons_ref.push(consistency_score_within(&pred2, &sample.gt, Some(&occluded))?.mean);

            if model.hyper.class_source == ClassSource::Stage1Argmax {
                let visible = surface_mask(&sample.counts);
                let ctx = CompletionContext::new(pred1.clone(), visible, occluded.clone())?;
                mismatch.push(ctx.occluded_mismatch_rate(&sample.gt)?);
            } else {
                mismatch.push(0.0);
            }
        }
    }

    let stage = |t: &ConfusionTally, sc: (u64, u64, u64), mid: (u64, u64), cons: &[f64]| {
        let ssc = SscResult::from_tally(t);
        StageStats {
            miou: ssc.mean,
            per_class_iou: ssc.per_class,
            sc: ScMetrics::from_counts(sc.0, sc.1, sc.2),
            consistency_occluded: mean(cons),
            mid_mass: if mid.1 == 0 {
                0.0
            } else {
                mid.0 as f64 / mid.1 as f64
            },
        }
    };
    Ok(EvalStats {
        preliminary: stage(&tally_pre, sc_pre, mid_pre, &cons_pre),
        refined: any_refined.then(|| stage(&tally_ref, sc_ref, mid_ref, &cons_ref)),
        occluded_mismatch: mean(&mismatch),
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// SC counts for aggregation across samples; tolerates empty occluded
/// regions in individual scenes.
fn sc_metrics_counts(
    pred_occ: &MaskVolume,
    gt: &LabelVolume,
    mask: &EvalMask,
) -> (u64, u64, u64) {
    match sc_metrics(pred_occ, gt, mask) {
        Ok(_) => {}
        Err(Error::EmptyEval) => return (0, 0, 0),
        Err(_) => return (0, 0, 0),
    }
    // recount; sc_metrics validated shapes and non-emptiness
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for ((&p, &g), &r) in pred_occ
        .values()
        .iter()
        .zip(gt.values())
        .zip(mask.regions())
    {
        if r != crate::metrics::EvalRegion::OccludedEval {
            continue;
        }
        match (p, g != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    (tp, fp, fn_)
}

/// Train the model on the dataset's training split, logging per-epoch
/// losses and validation metrics. Fully deterministic in the seed.
pub fn train(
    model: &mut FusionModel,
    dataset: &SceneDataset,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    let train_set = dataset.train();
    if train_set.is_empty() {
        return Err(Error::State("training split is empty".into()));
    }
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size.max(1));
    let max_iter = cfg.epochs * steps_per_epoch;
    if max_iter == 0 {
        return Err(Error::State("zero training iterations configured".into()));
    }
    let mut train_weights = vec![1.0; model.hyper.num_classes];
    train_weights[0] = cfg.ce_empty_weight;
    let mut iter = 0usize;
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        let two_stage = model.hyper.fcm_enabled && epoch >= cfg.stage1_warmup_epochs;
        let mut epoch_loss = 0f64;
        let mut sums = [0f64; 4]; // ce1, le1, ce2, le2
        let mut samples_seen = 0usize;
        let mut lr_used = 0f64;

        for batch in order.chunks(cfg.batch_size.max(1)) {
            let lr = poly_lr(cfg.base_lr, iter, max_iter)?;
            lr_used = lr;
            for &si in batch {
                let sample = &train_set[si];
                let mut tape = Tape::new();
                let mut trace = model.forward_stage1(&mut tape, &sample.tsdf, &sample.rf1)?;
                let spec = *sample.rf1.spec();

                let probs1 = ProbVolume::from_logits(
                    spec,
                    model.hyper.num_classes,
                    tape.value(trace.stage1.logits).data.clone(),
                )?;
                let ce1 = cross_entropy_loss(&probs1, &sample.gt, &train_weights)?;
                let le1 = classwise_entropy_loss(&probs1, &sample.gt)?;
                let ce1_node =
                    tape.loss_scalar(trace.stage1.logits, ce1.value, ce1.grad_logits.clone())?;
                let le1_node =
                    tape.loss_scalar(trace.stage1.logits, le1.value, le1.grad_logits.clone())?;
                let le1_scaled = tape.scalar_mul(le1_node, cfg.lambda1);
                let mut total = tape.add(ce1_node, le1_scaled)?;
                sums[0] += ce1.value;
                sums[1] += le1.value;

                if two_stage {
                    let visible = surface_mask(&sample.counts);
                    let occluded = sample.tsdf.visibility().mask_of(Visibility::Occluded);
                    model.forward_stage2(
                        &mut tape,
                        &mut trace,
                        &StageTwoInputs {
                            visible: &visible,
                            occluded: &occluded,
                            gt: Some(&sample.gt),
                        },
                    )?;
                    let logits2 = trace.stage2.as_ref().expect("stage 2 ran").logits;
                    let probs2 = ProbVolume::from_logits(
                        spec,
                        model.hyper.num_classes,
                        tape.value(logits2).data.clone(),
                    )?;
                    let ce2 = cross_entropy_loss(&probs2, &sample.gt, &train_weights)?;
                    let le2 = classwise_entropy_loss(&probs2, &sample.gt)?;
                    let ce2_node = tape.loss_scalar(logits2, ce2.value, ce2.grad_logits.clone())?;
                    let le2_node = tape.loss_scalar(logits2, le2.value, le2.grad_logits.clone())?;
                    let le2_scaled = tape.scalar_mul(le2_node, cfg.lambda2);
                    let stage2_total = tape.add(ce2_node, le2_scaled)?;
                    total = tape.add(total, stage2_total)?;
                    sums[2] += ce2.value;
                    sums[3] += le2.value;
                }

                let total_value = tape.value(total).data[0];
                if !total_value.is_finite() {
                    return Err(Error::State(format!(
                        "training diverged at epoch {epoch}: loss {total_value}"
                    )));
                }
                epoch_loss += total_value;
                samples_seen += 1;

                let root = tape.scalar_mul(total, 1.0 / batch.len() as f64);
                let grads = tape.backward(root)?;
                accumulate_grads(&mut model.params, &trace.bindings, &grads);
                log.peak_tape_bytes = log.peak_tape_bytes.max(tape.peak_bytes());
            }
            sgd_step(&mut model.params, lr, cfg.momentum, cfg.weight_decay);
            iter += 1;
        }

        let last_epoch = epoch + 1 == cfg.epochs;
        let scheduled = cfg.eval_every != 0 && (epoch + 1) % cfg.eval_every == 0;
        let val = if dataset.val().is_empty() || !(last_epoch || scheduled) {
            None
        } else {
            Some(evaluate(model, dataset.val())?)
        };
        let n = samples_seen.max(1) as f64;
        log.epochs.push(EpochLog {
            epoch,
            lr: lr_used,
            train_loss: epoch_loss / n,
            ce1: sums[0] / n,
            le1: sums[1] / n,
            ce2: sums[2] / n,
            le2: sums[3] / n,
            val,
            tape_bytes: log.peak_tape_bytes,
        });
    }
    Ok(log)
}
