//! Scene-completion (SC) and semantic-scene-completion (SSC) metrics, plus
//! the probability-histogram and per-class consistency diagnostics.
//!
//! SC is binary empty/non-empty accuracy on occluded voxels; SSC is
//! per-class IoU over visible surfaces and occluded areas inside the view
//! frustum. Voxels labeled 255 and voxels outside the frustum are always
//! excluded.
//!
//! Zero-denominator conventions, applied uniformly: a ratio with a zero
//! denominator is 1 when the class has no positives at all (nothing to
//! get wrong), and 0 when positives exist elsewhere.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, LabelVolume, MaskVolume, IGNORE_LABEL, NUM_CLASSES};
use crate::loss::ProbVolume;
use crate::tsdf::{Visibility, VisibilityVolume};

/// Evaluation region of one voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalRegion {
    /// Occluded, labeled, inside the frustum: evaluated by SC and SSC.
    OccludedEval,
    /// Visible surface, labeled, inside the frustum: evaluated by SSC.
    VisibleEval,
    /// Everything else: free space, outside the frustum, or label 255.
    Excluded,
}

/// Per-voxel evaluation regions derived from visibility and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMask {
    spec: GridSpec,
    region: Vec<EvalRegion>,
}

impl EvalMask {
    pub fn from_parts(visibility: &VisibilityVolume, gt: &LabelVolume) -> Result<Self> {
        if visibility.spec() != gt.spec() {
            return Err(Error::Shape(
                "visibility and ground truth use different grids".into(),
            ));
        }
        let region = visibility
            .values()
            .iter()
            .zip(gt.values())
            .map(|(&vis, &label)| {
                if label == IGNORE_LABEL {
                    EvalRegion::Excluded
                } else {
                    match vis {
                        Visibility::Occluded => EvalRegion::OccludedEval,
                        Visibility::Surface => EvalRegion::VisibleEval,
                        Visibility::Free | Visibility::Outside => EvalRegion::Excluded,
                    }
                }
            })
            .collect();
        Ok(Self {
            spec: *visibility.spec(),
            region,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn regions(&self) -> &[EvalRegion] {
        &self.region
    }

    pub fn count(&self, which: EvalRegion) -> usize {
        self.region.iter().filter(|&&r| r == which).count()
    }
}

/// Integer confusion counts for SC and SSC over one or more scenes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfusionTally {
    /// Per class 1..=11: (true positive, false positive, false negative).
    pub per_class: Vec<(u64, u64, u64)>,
    /// Binary occupancy on occluded voxels: (tp, fp, fn, tn).
    pub occupancy: (u64, u64, u64, u64),
    /// Voxels contributing to SSC.
    pub ssc_evaluated: u64,
    /// Voxels contributing to SC.
    pub sc_evaluated: u64,
}

impl ConfusionTally {
    pub fn new() -> Self {
        Self {
            per_class: vec![(0, 0, 0); NUM_CLASSES - 1],
            ..Default::default()
        }
    }

    pub fn merge(&mut self, other: &ConfusionTally) {
        if self.per_class.is_empty() {
            self.per_class = vec![(0, 0, 0); NUM_CLASSES - 1];
        }
        for (a, b) in self.per_class.iter_mut().zip(&other.per_class) {
            a.0 += b.0;
            a.1 += b.1;
            a.2 += b.2;
        }
        self.occupancy.0 += other.occupancy.0;
        self.occupancy.1 += other.occupancy.1;
        self.occupancy.2 += other.occupancy.2;
        self.occupancy.3 += other.occupancy.3;
        self.ssc_evaluated += other.ssc_evaluated;
        self.sc_evaluated += other.sc_evaluated;
    }
}

/// Tally SSC confusion counts over `VisibleEval` and `OccludedEval` voxels
/// and SC occupancy counts over `OccludedEval` voxels.
pub fn tally(pred: &LabelVolume, gt: &LabelVolume, mask: &EvalMask) -> Result<ConfusionTally> {
    if pred.spec() != gt.spec() || pred.spec() != mask.spec() {
        return Err(Error::Shape(format!(
            "prediction {:?}, ground truth {:?}, and mask {:?} grids differ",
            pred.spec().dims,
            gt.spec().dims,
            mask.spec().dims
        )));
    }
    let mut t = ConfusionTally::new();
    for ((&p, &g), &region) in pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(mask.regions())
    {
        if region == EvalRegion::Excluded {
            continue;
        }
        t.ssc_evaluated += 1;
        for c in 1..NUM_CLASSES as u8 {
            let slot = &mut t.per_class[c as usize - 1];
            match (p == c, g == c) {
                (true, true) => slot.0 += 1,
                (true, false) => slot.1 += 1,
                (false, true) => slot.2 += 1,
                (false, false) => {}
            }
        }
        if region == EvalRegion::OccludedEval {
            t.sc_evaluated += 1;
            let pred_occ = p != 0 && p != IGNORE_LABEL;
            let gt_occ = g != 0;
            match (pred_occ, gt_occ) {
                (true, true) => t.occupancy.0 += 1,
                (true, false) => t.occupancy.1 += 1,
                (false, true) => t.occupancy.2 += 1,
                (false, false) => t.occupancy.3 += 1,
            }
        }
    }
    Ok(t)
}

fn safe_ratio(num: u64, den: u64, any_positives: bool) -> f64 {
    if den > 0 {
        num as f64 / den as f64
    } else if any_positives {
        0.0
    } else {
        1.0
    }
}

/// Binary scene-completion metrics on occluded voxels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScMetrics {
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
}

impl ScMetrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let any = tp + fp + fn_ > 0;
        Self {
            precision: safe_ratio(tp, tp + fp, any),
            recall: safe_ratio(tp, tp + fn_, any),
            iou: safe_ratio(tp, tp + fp + fn_, any),
        }
    }
}

/// SC metrics from a predicted occupancy mask. Evaluation is restricted to
/// `OccludedEval` voxels; an empty evaluation region is an error.
pub fn sc_metrics(
    pred_occupancy: &MaskVolume,
    gt: &LabelVolume,
    mask: &EvalMask,
) -> Result<ScMetrics> {
    if pred_occupancy.spec() != gt.spec() || pred_occupancy.spec() != mask.spec() {
        return Err(Error::Shape("occupancy, ground truth, and mask grids differ".into()));
    }
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    let mut seen = 0u64;
    for ((&p, &g), &region) in pred_occupancy
        .values()
        .iter()
        .zip(gt.values())
        .zip(mask.regions())
    {
        if region != EvalRegion::OccludedEval {
            continue;
        }
        seen += 1;
        match (p, g != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if seen == 0 {
        return Err(Error::EmptyEval);
    }
    Ok(ScMetrics::from_counts(tp, fp, fn_))
}

/// Per-class IoU over the 11 semantic classes plus their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SscResult {
    /// IoU for classes 1..=11.
    pub per_class: Vec<f64>,
    pub mean: f64,
}

impl SscResult {
    pub fn from_tally(t: &ConfusionTally) -> Self {
        let per_class: Vec<f64> = t
            .per_class
            .iter()
            .map(|&(tp, fp, fn_)| safe_ratio(tp, tp + fp + fn_, tp + fp + fn_ > 0))
            .collect();
        let mean = mean_iou(&per_class);
        Self { per_class, mean }
    }
}

/// SSC IoU per class and the mean over the 11 semantic classes.
pub fn ssc_iou(pred: &LabelVolume, gt: &LabelVolume, mask: &EvalMask) -> Result<SscResult> {
    let t = tally(pred, gt, mask)?;
    if t.ssc_evaluated == 0 {
        return Err(Error::EmptyEval);
    }
    Ok(SscResult::from_tally(&t))
}

/// Arithmetic mean of per-class IoU values; the SSC aggregation.
pub fn mean_iou(per_class: &[f64]) -> f64 {
    if per_class.is_empty() {
        return 0.0;
    }
    per_class.iter().sum::<f64>() / per_class.len() as f64
}

/// The identity `IoU = 1 / (1/precision + 1/recall - 1)` tying the three
/// scene-completion numbers together.
pub fn iou_from_precision_recall(precision: f64, recall: f64) -> f64 {
    1.0 / (1.0 / precision + 1.0 / recall - 1.0)
}

/// Histogram of the class-`c` probability over voxels whose ground truth is
/// `c`, with `bins` uniform bins on [0, 1]. A class with no voxels yields
/// all-zero counts.
pub fn prob_histogram(
    probs: &ProbVolume,
    gt: &LabelVolume,
    class: usize,
    bins: usize,
) -> Result<Vec<u64>> {
    if bins < 2 {
        return Err(Error::Domain(format!("need at least 2 bins, got {bins}")));
    }
    if probs.spec() != gt.spec() {
        return Err(Error::Shape("probabilities and labels use different grids".into()));
    }
    if class >= probs.num_classes() {
        return Err(Error::Domain(format!(
            "class {class} out of range for {} classes",
            probs.num_classes()
        )));
    }
    let mut counts = vec![0u64; bins];
    for (lin, &label) in gt.values().iter().enumerate() {
        if label as usize != class {
            continue;
        }
        let p = probs.prob(class, lin).clamp(0.0, 1.0);
        let bin = ((p * bins as f64) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    Ok(counts)
}

/// Count of semantically labeled voxels whose ground-truth-class
/// probability falls strictly inside `(lo, hi)`, and the number of voxels
/// considered. Sums cleanly across scenes.
pub fn mid_probability_counts(
    probs: &ProbVolume,
    gt: &LabelVolume,
    lo: f64,
    hi: f64,
) -> Result<(u64, u64)> {
    if probs.spec() != gt.spec() {
        return Err(Error::Shape("probabilities and labels use different grids".into()));
    }
    let mut total = 0u64;
    let mut inside = 0u64;
    for (lin, &label) in gt.values().iter().enumerate() {
        if label == 0 || label == IGNORE_LABEL || label as usize >= probs.num_classes() {
            continue;
        }
        total += 1;
        let p = probs.prob(label as usize, lin);
        if p > lo && p < hi {
            inside += 1;
        }
    }
    Ok((inside, total))
}

/// Fraction of semantically labeled voxels whose ground-truth-class
/// probability falls strictly inside `(lo, hi)`; the mid-bin mass that the
/// entropy loss is expected to drain.
pub fn mid_probability_mass(
    probs: &ProbVolume,
    gt: &LabelVolume,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let (inside, total) = mid_probability_counts(probs, gt, lo, hi)?;
    Ok(if total == 0 {
        0.0
    } else {
        inside as f64 / total as f64
    })
}

/// Per-class agreement with the modal prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    /// class -> fraction of its voxels predicted as the class's modal
    /// prediction.
    pub per_class: BTreeMap<usize, f64>,
    /// Mean over classes present in the ground truth.
    pub mean: f64,
}

/// For each ground-truth class, the fraction of its voxels whose prediction
/// equals the most common prediction within the class. Classes absent from
/// the ground truth are omitted; 255 never participates.
pub fn consistency_score(pred: &LabelVolume, gt: &LabelVolume) -> Result<ConsistencyReport> {
    consistency_score_within(pred, gt, None)
}

/// [`consistency_score`] restricted to voxels where `region` is true.
pub fn consistency_score_within(
    pred: &LabelVolume,
    gt: &LabelVolume,
    region: Option<&MaskVolume>,
) -> Result<ConsistencyReport> {
    if pred.spec() != gt.spec() {
        return Err(Error::Shape("prediction and ground truth use different grids".into()));
    }
    if let Some(m) = region {
        if m.spec() != gt.spec() {
            return Err(Error::Shape("region mask uses a different grid".into()));
        }
    }
    // per gt class: histogram of predictions (255 predictions bucketed last)
    let mut hist = vec![[0u64; NUM_CLASSES + 1]; NUM_CLASSES];
    for (lin, (&p, &g)) in pred.values().iter().zip(gt.values()).enumerate() {
        if g == IGNORE_LABEL {
            continue;
        }
        if let Some(m) = region {
            if !m.values()[lin] {
                continue;
            }
        }
        let pi = if p == IGNORE_LABEL {
            NUM_CLASSES
        } else {
            p as usize
        };
        hist[g as usize][pi] += 1;
    }
    let mut per_class = BTreeMap::new();
    for (c, counts) in hist.iter().enumerate() {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            continue;
        }
        let modal = *counts.iter().max().expect("non-empty buckets");
        per_class.insert(c, modal as f64 / total as f64);
    }
    let mean = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    Ok(ConsistencyReport { per_class, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(n: usize) -> GridSpec {
        GridSpec::new([n, n, n], 0.1, [0.0; 3]).unwrap()
    }

    fn mask_all(spec: GridSpec, region: EvalRegion) -> EvalMask {
        EvalMask {
            spec,
            region: vec![region; spec.len()],
        }
    }

    #[test]
    fn eval_mask_excludes_outside_and_ignore() {
        let s = spec(2);
        let vis = VisibilityVolume::new(
            s,
            vec![
                Visibility::Occluded,
                Visibility::Surface,
                Visibility::Free,
                Visibility::Outside,
                Visibility::Occluded,
                Visibility::Surface,
                Visibility::Occluded,
                Visibility::Surface,
            ],
        )
        .unwrap();
        let gt = LabelVolume::new(s, vec![1, 2, 3, 4, IGNORE_LABEL, IGNORE_LABEL, 0, 0]).unwrap();
        let mask = EvalMask::from_parts(&vis, &gt).unwrap();
        assert_eq!(
            mask.regions(),
            &[
                EvalRegion::OccludedEval,
                EvalRegion::VisibleEval,
                EvalRegion::Excluded, // free space
                EvalRegion::Excluded, // outside frustum
                EvalRegion::Excluded, // ignore label
                EvalRegion::Excluded, // ignore label
                EvalRegion::OccludedEval,
                EvalRegion::VisibleEval,
            ]
        );
    }

    #[test]
    fn sc_perfect_prediction() {
        let s = spec(2);
        let gt = LabelVolume::new(s, vec![0, 1, 2, 0, 5, 0, 7, 0]).unwrap();
        let pred = MaskVolume::new(s, gt.values().iter().map(|&g| g != 0).collect()).unwrap();
        let m = sc_metrics(&pred, &gt, &mask_all(s, EvalRegion::OccludedEval)).unwrap();
        assert_eq!((m.precision, m.recall, m.iou), (1.0, 1.0, 1.0));
    }

    #[test]
    fn sc_hand_counts() {
        let m = ScMetrics::from_counts(9, 1, 3);
        assert!((m.precision - 0.9).abs() < 1e-12);
        assert!((m.recall - 0.75).abs() < 1e-12);
        assert!((m.iou - 9.0 / 13.0).abs() < 1e-12);
        assert!(m.iou <= m.precision.min(m.recall));
    }

    #[test]
    fn paper_sc_triple_satisfies_the_iou_identity() {
        let iou = iou_from_precision_recall(0.945, 0.875);
        assert!((iou - 0.833).abs() < 0.002, "got {iou}");
    }

    #[test]
    fn paper_per_class_row_averages_to_59() {
        let row = [
            64.7, 94.3, 68.0, 35.3, 62.7, 76.9, 73.6, 49.4, 20.9, 61.7, 41.7,
        ];
        let miou = mean_iou(&row);
        assert!((miou - 59.0).abs() < 0.05, "got {miou}");
    }

    #[test]
    fn perfect_ssc_has_unit_iou() {
        let s = spec(2);
        let gt = LabelVolume::new(s, vec![1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        let r = ssc_iou(&gt, &gt, &mask_all(s, EvalRegion::VisibleEval)).unwrap();
        assert!(r.per_class.iter().all(|&v| v == 1.0));
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn empty_evaluation_is_an_error() {
        let s = spec(2);
        let gt = LabelVolume::filled(s, 1).unwrap();
        let pred = MaskVolume::filled(s, true);
        assert!(matches!(
            sc_metrics(&pred, &gt, &mask_all(s, EvalRegion::Excluded)),
            Err(Error::EmptyEval)
        ));
        assert!(matches!(
            ssc_iou(&gt, &gt, &mask_all(s, EvalRegion::Excluded)),
            Err(Error::EmptyEval)
        ));
    }

    /// Brute-force confusion oracle with its own counting loops.
    fn confusion_oracle(
        pred: &LabelVolume,
        gt: &LabelVolume,
        mask: &EvalMask,
    ) -> Vec<(u64, u64, u64)> {
        let mut out = Vec::new();
        for c in 1..NUM_CLASSES as u8 {
            let mut tp = 0;
            let mut fp = 0;
            let mut fn_ = 0;
            for i in 0..gt.spec().len() {
                if mask.regions()[i] == EvalRegion::Excluded {
                    continue;
                }
                let p = pred.values()[i] == c;
                let g = gt.values()[i] == c;
                if p && g {
                    tp += 1;
                } else if p {
                    fp += 1;
                } else if g {
                    fn_ += 1;
                }
            }
            out.push((tp, fp, fn_));
        }
        out
    }

    #[test]
    fn tallies_match_confusion_oracle_exactly() {
        let s = spec(12);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let labels = |rng: &mut ChaCha8Rng| -> Vec<u8> {
                (0..s.len())
                    .map(|_| match rng.random_range(0..14) {
                        12 => IGNORE_LABEL,
                        13 => 0,
                        v => v as u8,
                    })
                    .collect()
            };
            let gt = LabelVolume::new(s, labels(&mut rng)).unwrap();
            let pred = LabelVolume::new(s, labels(&mut rng)).unwrap();
            let vis = VisibilityVolume::new(
                s,
                (0..s.len())
                    .map(|_| match rng.random_range(0..4) {
                        0 => Visibility::Free,
                        1 => Visibility::Surface,
                        2 => Visibility::Occluded,
                        _ => Visibility::Outside,
                    })
                    .collect(),
            )
            .unwrap();
            let mask = EvalMask::from_parts(&vis, &gt).unwrap();
            let t = tally(&pred, &gt, &mask).unwrap();
            assert_eq!(t.per_class, confusion_oracle(&pred, &gt, &mask));
        }
    }

    #[test]
    fn miou_is_invariant_under_voxel_permutation() {
        let s = spec(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt_vals: Vec<u8> = (0..s.len()).map(|_| rng.random_range(0..12) as u8).collect();
        let pred_vals: Vec<u8> = (0..s.len()).map(|_| rng.random_range(0..12) as u8).collect();

        let mut order: Vec<usize> = (0..s.len()).collect();
        // deterministic shuffle
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let permute = |v: &[u8]| -> Vec<u8> { order.iter().map(|&i| v[i]).collect() };

        let mask = mask_all(s, EvalRegion::VisibleEval);
        let a = ssc_iou(
            &LabelVolume::new(s, pred_vals.clone()).unwrap(),
            &LabelVolume::new(s, gt_vals.clone()).unwrap(),
            &mask,
        )
        .unwrap();
        let b = ssc_iou(
            &LabelVolume::new(s, permute(&pred_vals)).unwrap(),
            &LabelVolume::new(s, permute(&gt_vals)).unwrap(),
            &mask,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn histogram_binning_matches_hand_placement() {
        let s = GridSpec::new([3, 1, 1], 1.0, [0.0; 3]).unwrap();
        let gt = LabelVolume::new(s, vec![1, 1, 1]).unwrap();
        let probs = ProbVolume::from_probs(
            s,
            2,
            vec![0.95, 0.45, 0.05, 0.05, 0.55, 0.95],
        )
        .unwrap();
        let h = prob_histogram(&probs, &gt, 1, 10).unwrap();
        let mut expect = vec![0u64; 10];
        expect[0] = 1;
        expect[5] = 1;
        expect[9] = 1;
        assert_eq!(h, expect);
        assert_eq!(h.iter().sum::<u64>(), 3);

        // probability exactly 1.0 lands in the last bin
        let probs = ProbVolume::from_probs(s, 2, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let h = prob_histogram(&probs, &gt, 1, 10).unwrap();
        assert_eq!(h[9], 3);

        // class with no voxels: all-zero counts
        let h = prob_histogram(&probs, &gt, 0, 10).unwrap();
        assert!(h.iter().all(|&c| c == 0));

        assert!(prob_histogram(&probs, &gt, 1, 1).is_err());
    }

    #[test]
    fn consistency_examples() {
        let s = GridSpec::new([4, 1, 1], 1.0, [0.0; 3]).unwrap();
        // one gt class, predictions {5, 5, 6, 7} -> modal fraction 0.5
        let gt = LabelVolume::new(s, vec![3, 3, 3, 3]).unwrap();
        let pred = LabelVolume::new(s, vec![5, 5, 6, 7]).unwrap();
        let r = consistency_score(&pred, &gt).unwrap();
        assert_eq!(r.per_class[&3], 0.5);
        assert_eq!(r.mean, 0.5);
        assert!(!r.per_class.contains_key(&4)); // absent class omitted

        // constant prediction within each class scores 1
        let gt = LabelVolume::new(s, vec![1, 1, 2, 2]).unwrap();
        let pred = LabelVolume::new(s, vec![4, 4, 9, 9]).unwrap();
        let r = consistency_score(&pred, &gt).unwrap();
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn mid_mass_counts_strict_interior() {
        let s = GridSpec::new([4, 1, 1], 1.0, [0.0; 3]).unwrap();
        let gt = LabelVolume::new(s, vec![1, 1, 1, 0]).unwrap();
        let probs = ProbVolume::from_probs(
            s,
            2,
            vec![0.9, 0.5, 0.3, 0.5, 0.1, 0.5, 0.7, 0.5],
        )
        .unwrap();
        // class-1 probabilities of gt-class-1 voxels: 0.1, 0.5, 0.7
        let mass = mid_probability_mass(&probs, &gt, 0.4, 0.6).unwrap();
        assert!((mass - 1.0 / 3.0).abs() < 1e-12);
    }
}
