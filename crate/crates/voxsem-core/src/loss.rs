//! Training losses: voxelwise cross-entropy, the classwise entropy loss,
//! and their weighted combination over the two network stages.
//!
//! The classwise entropy loss takes, for each ground-truth class `c` that
//! is present and whose mean predicted probability peaks at `c`, the
//! entropy of that mean probability vector, and averages over the selected
//! classes. Minimizing it pushes per-class mean predictions toward a
//! vertex of the simplex, i.e. toward consistent, confident predictions.
//!
//! Gradients are analytic. Class selection is a discrete rule: membership
//! is computed from the current probabilities and treated as constant
//! during differentiation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, LabelVolume, IGNORE_LABEL};

/// Floor applied inside every logarithm; gradients use the floored value.
pub const PROB_CLAMP: f64 = 1e-12;

/// Per-voxel class probabilities with the logits they came from.
/// Storage is class-major (class axis outermost), matching FeatureVolume.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVolume {
    spec: GridSpec,
    num_classes: usize,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl ProbVolume {
    pub fn from_logits(spec: GridSpec, num_classes: usize, logits: Vec<f64>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Shape("need at least 2 classes".into()));
        }
        let voxels = spec.len();
        if logits.len() != num_classes * voxels {
            return Err(Error::Shape(format!(
                "logit volume has {} values, {num_classes} classes on grid {:?} need {}",
                logits.len(),
                spec.dims,
                num_classes * voxels
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("logits contain non-finite values".into()));
        }
        let mut probs = vec![0f64; logits.len()];
        for lin in 0..voxels {
            let mut max = f64::NEG_INFINITY;
            for k in 0..num_classes {
                max = max.max(logits[k * voxels + lin]);
            }
            let mut sum = 0f64;
            for k in 0..num_classes {
                let e = (logits[k * voxels + lin] - max).exp();
                probs[k * voxels + lin] = e;
                sum += e;
            }
            for k in 0..num_classes {
                probs[k * voxels + lin] /= sum;
            }
        }
        Ok(Self {
            spec,
            num_classes,
            logits,
            probs,
        })
    }

    /// Build from explicit probabilities; logits are recovered as clamped
    /// logs. Probabilities must be non-negative and sum to 1 per voxel.
    pub fn from_probs(spec: GridSpec, num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Shape("need at least 2 classes".into()));
        }
        let voxels = spec.len();
        if probs.len() != num_classes * voxels {
            return Err(Error::Shape(format!(
                "probability volume has {} values, {num_classes} classes on grid {:?} need {}",
                probs.len(),
                spec.dims,
                num_classes * voxels
            )));
        }
        for lin in 0..voxels {
            let mut sum = 0f64;
            for k in 0..num_classes {
                let p = probs[k * voxels + lin];
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Domain(format!(
                        "probability {p} outside [0, 1] at voxel {lin}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Domain(format!(
                    "probabilities sum to {sum} at voxel {lin}"
                )));
            }
        }
        let logits = probs.iter().map(|&p| p.max(PROB_CLAMP).ln()).collect();
        Ok(Self {
            spec,
            num_classes,
            logits,
            probs,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn prob(&self, class: usize, lin: usize) -> f64 {
        self.probs[class * self.spec.len() + lin]
    }

    /// Per-voxel argmax as a label volume. Ties resolve to the smallest
    /// class index.
    pub fn argmax_labels(&self) -> LabelVolume {
        let voxels = self.spec.len();
        let mut labels = vec![0u8; voxels];
        for (lin, slot) in labels.iter_mut().enumerate() {
            let mut best = 0usize;
            let mut best_p = self.probs[lin];
            for k in 1..self.num_classes {
                let p = self.probs[k * voxels + lin];
                if p > best_p {
                    best_p = p;
                    best = k;
                }
            }
            *slot = best as u8;
        }
        LabelVolume::new(self.spec, labels).expect("argmax classes are in range")
    }
}

/// Natural-log entropy of a probability vector, with `0 log 0 := 0` via the
/// clamped logarithm.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if let Some(bad) = p.iter().find(|&&v| v < 0.0) {
        return Err(Error::Domain(format!(
            "entropy requires non-negative components, got {bad}"
        )));
    }
    Ok(-p.iter().map(|&v| v * v.max(PROB_CLAMP).ln()).sum::<f64>())
}

/// The class selection of the classwise entropy loss.
#[derive(Debug, Clone)]
pub struct ClassSelection {
    /// Classes in the selected set S, ascending.
    pub selected: Vec<usize>,
    /// Ground-truth voxel count per class (index 0 unused by the loss).
    pub counts: Vec<usize>,
    /// Mean probability vector per class with at least one voxel.
    pub mean_probs: Vec<Option<Vec<f64>>>,
}

fn check_aligned(probs: &ProbVolume, gt: &LabelVolume) -> Result<()> {
    if probs.spec() != gt.spec() {
        return Err(Error::Shape(
            "probability volume and labels use different grids".into(),
        ));
    }
    if let Some(bad) = gt
        .values()
        .iter()
        .find(|&&v| v != IGNORE_LABEL && v as usize >= probs.num_classes())
    {
        return Err(Error::Shape(format!(
            "label {bad} exceeds the {}-class probability volume",
            probs.num_classes()
        )));
    }
    Ok(())
}

/// Compute per-class mean probability vectors and the selected set S:
/// classes `c > 0` that are present in the ground truth and whose mean
/// probability has a strict maximum at position `c`.
pub fn select_classes(probs: &ProbVolume, gt: &LabelVolume) -> Result<ClassSelection> {
    check_aligned(probs, gt)?;
    let k = probs.num_classes();
    let voxels = probs.spec().len();
    let mut counts = vec![0usize; k];
    let mut sums = vec![vec![0f64; k]; k];
    for (lin, &label) in gt.values().iter().enumerate() {
        if label == IGNORE_LABEL {
            continue;
        }
        let c = label as usize;
        counts[c] += 1;
        for j in 0..k {
            sums[c][j] += probs.probs()[j * voxels + lin];
        }
    }
    let mean_probs: Vec<Option<Vec<f64>>> = (0..k)
        .map(|c| {
            (counts[c] > 0).then(|| sums[c].iter().map(|s| s / counts[c] as f64).collect())
        })
        .collect();
    let mut selected = Vec::new();
    for c in 1..k {
        if let Some(mean) = &mean_probs[c] {
            let strict_max = (0..k).all(|j| j == c || mean[j] < mean[c]);
            if strict_max {
                selected.push(c);
            }
        }
    }
    Ok(ClassSelection {
        selected,
        counts,
        mean_probs,
    })
}

/// Value, logit gradient, and diagnostics of one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub value: f64,
    /// d value / d logits, same layout as the logits.
    pub grad_logits: Vec<f64>,
    /// The selected set S (empty for cross-entropy).
    pub selected_classes: Vec<usize>,
    /// Entropy of the mean probability vector per selected class.
    pub per_class_entropy: BTreeMap<usize, f64>,
}

/// Apply the per-voxel softmax Jacobian: given dL/dp for one voxel, add
/// dL/dlogits into `grad`.
#[inline]
fn chain_softmax(
    probs: &ProbVolume,
    lin: usize,
    grad_p: &[f64],
    grad: &mut [f64],
) {
    let voxels = probs.spec().len();
    let k = probs.num_classes();
    let mut dot = 0f64;
    for j in 0..k {
        dot += grad_p[j] * probs.probs()[j * voxels + lin];
    }
    for j in 0..k {
        let p = probs.probs()[j * voxels + lin];
        grad[j * voxels + lin] += p * (grad_p[j] - dot);
    }
}

/// Mean entropy of the mean probability vector over the selected classes.
/// Returns value 0 with zero gradient when S is empty.
pub fn classwise_entropy_loss(probs: &ProbVolume, gt: &LabelVolume) -> Result<LossReport> {
    let selection = select_classes(probs, gt)?;
    let k = probs.num_classes();
    let voxels = probs.spec().len();
    let mut grad = vec![0f64; k * voxels];
    if selection.selected.is_empty() {
        return Ok(LossReport {
            value: 0.0,
            grad_logits: grad,
            selected_classes: Vec::new(),
            per_class_entropy: BTreeMap::new(),
        });
    }
    let s_len = selection.selected.len() as f64;
    let mut value = 0f64;
    let mut per_class_entropy = BTreeMap::new();
    // dL/d mean_c[j] = -(ln mean_c[j] + 1) / |S|, spread over the class's
    // voxels with the 1/N_c mean factor, then through the softmax.
    let mut grad_p_of = vec![Vec::new(); k];
    for &c in &selection.selected {
        let mean = selection.mean_probs[c].as_ref().expect("selected implies present");
        let h = entropy(mean)?;
        value += h;
        per_class_entropy.insert(c, h);
        let n_c = selection.counts[c] as f64;
        grad_p_of[c] = mean
            .iter()
            .map(|&m| -(m.max(PROB_CLAMP).ln() + 1.0) / (s_len * n_c))
            .collect();
    }
    value /= s_len;
    for (lin, &label) in gt.values().iter().enumerate() {
        if label == IGNORE_LABEL || label == 0 {
            continue;
        }
        let c = label as usize;
        if grad_p_of[c].is_empty() {
            continue;
        }
        chain_softmax(probs, lin, &grad_p_of[c], &mut grad);
    }
    Ok(LossReport {
        value,
        grad_logits: grad,
        selected_classes: selection.selected,
        per_class_entropy,
    })
}

/// Weighted mean of `-ln p[gt]` over voxels with a real label. Voxels
/// labeled 255 are ignored; with no contributing voxels the loss is 0 with
/// zero gradient.
pub fn cross_entropy_loss(
    probs: &ProbVolume,
    gt: &LabelVolume,
    class_weights: &[f64],
) -> Result<LossReport> {
    check_aligned(probs, gt)?;
    let k = probs.num_classes();
    if class_weights.len() != k {
        return Err(Error::Shape(format!(
            "{} class weights for {k} classes",
            class_weights.len()
        )));
    }
    if let Some(bad) = class_weights.iter().find(|&&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::Domain(format!(
            "class weights must be non-negative and finite, got {bad}"
        )));
    }
    let voxels = probs.spec().len();
    let mut grad = vec![0f64; k * voxels];
    let mut total_weight = 0f64;
    for &label in gt.values() {
        if label != IGNORE_LABEL {
            total_weight += class_weights[label as usize];
        }
    }
    if total_weight == 0.0 {
        return Ok(LossReport {
            value: 0.0,
            grad_logits: grad,
            selected_classes: Vec::new(),
            per_class_entropy: BTreeMap::new(),
        });
    }
    let mut value = 0f64;
    for (lin, &label) in gt.values().iter().enumerate() {
        if label == IGNORE_LABEL {
            continue;
        }
        let t = label as usize;
        let w = class_weights[t] / total_weight;
        if w == 0.0 {
            continue;
        }
        value += w * -(probs.prob(t, lin).max(PROB_CLAMP).ln());
        for j in 0..k {
            let p = probs.probs()[j * voxels + lin];
            let target = if j == t { 1.0 } else { 0.0 };
            grad[j * voxels + lin] += w * (p - target);
        }
    }
    Ok(LossReport {
        value,
        grad_logits: grad,
        selected_classes: Vec::new(),
        per_class_entropy: BTreeMap::new(),
    })
}

/// One stage's share of the combined objective.
#[derive(Debug, Clone)]
pub struct StageLoss {
    pub cross_entropy: LossReport,
    pub classwise_entropy: LossReport,
    /// d(total) / d(this stage's logits).
    pub grad_logits: Vec<f64>,
}

/// The combined two-stage objective
/// `L = L_ce(1) + lambda1 * L_E(1) + L_ce(2) + lambda2 * L_E(2)`,
/// with uniform cross-entropy class weights.
#[derive(Debug, Clone)]
pub struct CombinedLoss {
    pub value: f64,
    pub stage1: StageLoss,
    pub stage2: StageLoss,
}

fn stage_loss(
    probs: &ProbVolume,
    gt: &LabelVolume,
    lambda: f64,
) -> Result<StageLoss> {
    let weights = vec![1.0; probs.num_classes()];
    let ce = cross_entropy_loss(probs, gt, &weights)?;
    let le = classwise_entropy_loss(probs, gt)?;
    let grad = ce
        .grad_logits
        .iter()
        .zip(&le.grad_logits)
        .map(|(&g_ce, &g_le)| g_ce + lambda * g_le)
        .collect();
    Ok(StageLoss {
        cross_entropy: ce,
        classwise_entropy: le,
        grad_logits: grad,
    })
}

pub fn combined_loss(
    stage1: (&ProbVolume, &LabelVolume),
    stage2: (&ProbVolume, &LabelVolume),
    lambda1: f64,
    lambda2: f64,
) -> Result<CombinedLoss> {
    if lambda1 < 0.0 || lambda2 < 0.0 {
        return Err(Error::Domain(format!(
            "loss weights must be non-negative, got {lambda1}, {lambda2}"
        )));
    }
    let s1 = stage_loss(stage1.0, stage1.1, lambda1)?;
    let s2 = stage_loss(stage2.0, stage2.1, lambda2)?;
    let value = s1.cross_entropy.value
        + lambda1 * s1.classwise_entropy.value
        + s2.cross_entropy.value
        + lambda2 * s2.classwise_entropy.value;
    Ok(CombinedLoss {
        value,
        stage1: s1,
        stage2: s2,
    })
}
