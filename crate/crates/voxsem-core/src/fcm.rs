//! Classwise feature completion: densify a sparse projected feature volume
//! by writing, into every occluded voxel of class `c`, the mean feature
//! vector of the visible surface voxels of class `c`.
//!
//! The completed volume is a fresh buffer; callers that differentiate
//! through features must treat it as detached from its input.

use crate::error::{Error, Result};
use crate::grid::{FeatureVolume, LabelVolume, MaskVolume, IGNORE_LABEL, NUM_CLASSES};

/// Inputs steering the completion: a per-voxel class map (ground truth or
/// the argmax of a preliminary prediction), the visible-surface mask, and
/// the occluded mask. Visible and occluded must be disjoint.
#[derive(Debug, Clone)]
pub struct CompletionContext {
    class_map: LabelVolume,
    visible: MaskVolume,
    occluded: MaskVolume,
}

impl CompletionContext {
    pub fn new(class_map: LabelVolume, visible: MaskVolume, occluded: MaskVolume) -> Result<Self> {
        if class_map.spec() != visible.spec() || class_map.spec() != occluded.spec() {
            return Err(Error::Shape(
                "class map, visible mask, and occluded mask use different grids".into(),
            ));
        }
        if visible
            .values()
            .iter()
            .zip(occluded.values())
            .any(|(&v, &o)| v && o)
        {
            return Err(Error::Shape(
                "visible and occluded masks overlap; a voxel cannot be both".into(),
            ));
        }
        Ok(Self {
            class_map,
            visible,
            occluded,
        })
    }

    pub fn class_map(&self) -> &LabelVolume {
        &self.class_map
    }

    pub fn visible(&self) -> &MaskVolume {
        &self.visible
    }

    pub fn occluded(&self) -> &MaskVolume {
        &self.occluded
    }

    /// Fraction of occluded voxels whose class-map entry disagrees with
    /// `reference`; a diagnostic for predicted-class completion.
    pub fn occluded_mismatch_rate(&self, reference: &LabelVolume) -> Result<f64> {
        if reference.spec() != self.class_map.spec() {
            return Err(Error::Shape("reference labels use a different grid".into()));
        }
        let mut total = 0usize;
        let mut mismatch = 0usize;
        for (i, &occ) in self.occluded.values().iter().enumerate() {
            if occ && reference.values()[i] != IGNORE_LABEL {
                total += 1;
                if self.class_map.values()[i] != reference.values()[i] {
                    mismatch += 1;
                }
            }
        }
        Ok(if total == 0 {
            0.0
        } else {
            mismatch as f64 / total as f64
        })
    }
}

fn check_alignment(features: &FeatureVolume, ctx: &CompletionContext) -> Result<()> {
    if features.spec() != ctx.class_map.spec() {
        return Err(Error::Shape(
            "feature volume and completion context use different grids".into(),
        ));
    }
    Ok(())
}

/// Per-class sums over visible voxels, accumulated in f64 in storage order.
/// Returns `(sums, counts)` indexed by class.
fn visible_sums(
    features: &FeatureVolume,
    ctx: &CompletionContext,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let channels = features.channels();
    let voxels = features.spec().len();
    let mut sums = vec![vec![0f64; channels]; NUM_CLASSES];
    let mut counts = vec![0usize; NUM_CLASSES];
    let data = features.data();
    for (lin, (&cls, &vis)) in ctx
        .class_map
        .values()
        .iter()
        .zip(ctx.visible.values())
        .enumerate()
    {
        if !vis || cls == IGNORE_LABEL {
            continue;
        }
        let cls = cls as usize;
        counts[cls] += 1;
        for c in 0..channels {
            sums[cls][c] += data[c * voxels + lin] as f64;
        }
    }
    (sums, counts)
}

/// Mean feature vector over the visible voxels of class `c`, or `None` when
/// the class has no visible voxel. `c` must be a semantic class (1..=11).
pub fn classwise_mean(
    features: &FeatureVolume,
    ctx: &CompletionContext,
    c: u8,
) -> Result<Option<Vec<f32>>> {
    if c == 0 || c == IGNORE_LABEL {
        return Err(Error::InvalidClass(c));
    }
    if c as usize >= NUM_CLASSES {
        return Err(Error::InvalidClass(c));
    }
    check_alignment(features, ctx)?;
    let (sums, counts) = visible_sums(features, ctx);
    let k = counts[c as usize];
    if k == 0 {
        return Ok(None);
    }
    Ok(Some(
        sums[c as usize].iter().map(|s| (s / k as f64) as f32).collect(),
    ))
}

/// Densify `features`: visible voxels keep their values; every occluded
/// voxel of a semantic class with visible support receives that class's
/// mean vector; everything else (empty, ignore, free space, outside view,
/// classes with no visible voxel) is left untouched.
pub fn complete_features(
    features: &FeatureVolume,
    ctx: &CompletionContext,
) -> Result<FeatureVolume> {
    check_alignment(features, ctx)?;
    let channels = features.channels();
    let voxels = features.spec().len();
    let (sums, counts) = visible_sums(features, ctx);
    let means: Vec<Option<Vec<f32>>> = (0..NUM_CLASSES)
        .map(|cls| {
            (cls != 0 && counts[cls] > 0).then(|| {
                sums[cls]
                    .iter()
                    .map(|s| (s / counts[cls] as f64) as f32)
                    .collect()
            })
        })
        .collect();

    let mut out = features.data().to_vec();
    for (lin, (&cls, &occ)) in ctx
        .class_map
        .values()
        .iter()
        .zip(ctx.occluded.values())
        .enumerate()
    {
        if !occ || cls == 0 || cls == IGNORE_LABEL {
            continue;
        }
        if let Some(mean) = &means[cls as usize] {
            for c in 0..channels {
                out[c * voxels + lin] = mean[c];
            }
        }
    }
    FeatureVolume::new(*features.spec(), channels, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(n: usize) -> GridSpec {
        GridSpec::new([n, n, n], 0.1, [0.0; 3]).unwrap()
    }

    fn context_of(
        spec: GridSpec,
        classes: &[u8],
        visible: &[bool],
        occluded: &[bool],
    ) -> CompletionContext {
        CompletionContext::new(
            LabelVolume::new(spec, classes.to_vec()).unwrap(),
            MaskVolume::new(spec, visible.to_vec()).unwrap(),
            MaskVolume::new(spec, occluded.to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn mean_of_two_visible_voxels() {
        let s = spec(2);
        let n = s.len();
        let mut classes = vec![0u8; n];
        let mut visible = vec![false; n];
        classes[0] = 5;
        classes[1] = 5;
        visible[0] = true;
        visible[1] = true;
        let ctx = context_of(s, &classes, &visible, &vec![false; n]);
        let mut data = vec![0f32; 2 * n];
        data[0] = 1.0; // channel 0, voxel 0
        data[1] = 3.0; // channel 0, voxel 1
        data[n] = 3.0; // channel 1, voxel 0
        data[n + 1] = 5.0; // channel 1, voxel 1
        let features = FeatureVolume::new(s, 2, data).unwrap();
        let mean = classwise_mean(&features, &ctx, 5).unwrap().unwrap();
        assert_eq!(mean, vec![2.0, 4.0]);
    }

    #[test]
    fn absent_class_yields_none_and_singleton_is_identity() {
        let s = spec(2);
        let n = s.len();
        let mut classes = vec![0u8; n];
        let mut visible = vec![false; n];
        classes[3] = 7;
        visible[3] = true;
        let ctx = context_of(s, &classes, &visible, &vec![false; n]);
        let mut data = vec![0f32; n];
        data[3] = 1.25;
        let features = FeatureVolume::new(s, 1, data).unwrap();
        assert_eq!(classwise_mean(&features, &ctx, 4).unwrap(), None);
        assert_eq!(
            classwise_mean(&features, &ctx, 7).unwrap(),
            Some(vec![1.25])
        );
    }

    #[test]
    fn empty_and_ignore_classes_are_rejected() {
        let s = spec(2);
        let n = s.len();
        let ctx = context_of(s, &vec![0; n], &vec![false; n], &vec![false; n]);
        let features = FeatureVolume::zeros(s, 1).unwrap();
        assert!(matches!(
            classwise_mean(&features, &ctx, 0),
            Err(Error::InvalidClass(0))
        ));
        assert!(matches!(
            classwise_mean(&features, &ctx, IGNORE_LABEL),
            Err(Error::InvalidClass(IGNORE_LABEL))
        ));
    }

    #[test]
    fn overlapping_masks_are_rejected() {
        let s = spec(2);
        let n = s.len();
        let mut visible = vec![false; n];
        let mut occluded = vec![false; n];
        visible[2] = true;
        occluded[2] = true;
        assert!(CompletionContext::new(
            LabelVolume::filled(s, 0).unwrap(),
            MaskVolume::new(s, visible).unwrap(),
            MaskVolume::new(s, occluded).unwrap(),
        )
        .is_err());
    }

    /// Random scene builder: classes 0..=3 with disjoint visible/occluded.
    fn random_scene(seed: u64, n: usize, channels: usize) -> (FeatureVolume, CompletionContext) {
        let s = spec(n);
        let voxels = s.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut classes = vec![0u8; voxels];
        let mut visible = vec![false; voxels];
        let mut occluded = vec![false; voxels];
        for i in 0..voxels {
            classes[i] = match rng.random_range(0..5) {
                0 => 0,
                1 => 3,
                2 => 5,
                3 => 9,
                _ => IGNORE_LABEL,
            };
            match rng.random_range(0..3) {
                0 => visible[i] = true,
                1 => occluded[i] = true,
                _ => {}
            }
        }
        let data: Vec<f32> = (0..channels * voxels)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        (
            FeatureVolume::new(s, channels, data).unwrap(),
            context_of(s, &classes, &visible, &occluded),
        )
    }

    /// Brute-force mean-and-fill oracle: per class, scan the whole volume
    /// for visible members, then rewrite occluded members.
    fn fill_oracle(features: &FeatureVolume, ctx: &CompletionContext) -> FeatureVolume {
        let s = *features.spec();
        let voxels = s.len();
        let channels = features.channels();
        let mut out = features.data().to_vec();
        for cls in 1..NUM_CLASSES as u8 {
            let mut sum = vec![0f64; channels];
            let mut count = 0usize;
            for lin in 0..voxels {
                if ctx.class_map().values()[lin] == cls && ctx.visible().values()[lin] {
                    count += 1;
                    for c in 0..channels {
                        sum[c] += features.data()[c * voxels + lin] as f64;
                    }
                }
            }
            if count == 0 {
                continue;
            }
            let mean: Vec<f32> = sum.iter().map(|v| (v / count as f64) as f32).collect();
            for lin in 0..voxels {
                if ctx.class_map().values()[lin] == cls && ctx.occluded().values()[lin] {
                    for c in 0..channels {
                        out[c * voxels + lin] = mean[c];
                    }
                }
            }
        }
        FeatureVolume::new(s, channels, out).unwrap()
    }

    #[test]
    fn completion_matches_fill_oracle_exactly() {
        for seed in 0..8 {
            let (features, ctx) = random_scene(seed, 8, 3);
            let completed = complete_features(&features, &ctx).unwrap();
            let oracle = fill_oracle(&features, &ctx);
            assert_eq!(completed.data(), oracle.data(), "seed {seed}");
        }
    }

    #[test]
    fn completion_is_idempotent() {
        let (features, ctx) = random_scene(11, 8, 3);
        let once = complete_features(&features, &ctx).unwrap();
        let twice = complete_features(&once, &ctx).unwrap();
        assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn visible_voxels_are_preserved_bit_exactly() {
        let (features, ctx) = random_scene(13, 8, 4);
        let completed = complete_features(&features, &ctx).unwrap();
        let voxels = features.spec().len();
        for lin in 0..voxels {
            if ctx.visible().values()[lin] {
                for c in 0..features.channels() {
                    assert_eq!(
                        completed.data()[c * voxels + lin].to_bits(),
                        features.data()[c * voxels + lin].to_bits()
                    );
                }
            }
        }
    }

    #[test]
    fn constant_class_fills_occlusion_with_that_constant() {
        let s = spec(4);
        let n = s.len();
        let mut classes = vec![0u8; n];
        let mut visible = vec![false; n];
        let mut occluded = vec![false; n];
        let mut data = vec![0f32; n];
        for i in 0..n {
            classes[i] = 6;
            if i < n / 2 {
                visible[i] = true;
                data[i] = 0.75;
            } else {
                occluded[i] = true;
            }
        }
        let ctx = context_of(s, &classes, &visible, &occluded);
        let features = FeatureVolume::new(s, 1, data).unwrap();
        let completed = complete_features(&features, &ctx).unwrap();
        assert!(completed.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn class_without_visible_support_stays_zero() {
        let s = spec(4);
        let n = s.len();
        let mut classes = vec![0u8; n];
        let mut occluded = vec![false; n];
        classes[5] = 8;
        occluded[5] = true;
        let ctx = context_of(s, &classes, &vec![false; n], &occluded);
        let features = FeatureVolume::zeros(s, 2).unwrap();
        let completed = complete_features(&features, &ctx).unwrap();
        assert!(completed.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn filled_occluded_voxels_of_one_class_carry_identical_vectors() {
        let (features, ctx) = random_scene(17, 8, 3);
        let completed = complete_features(&features, &ctx).unwrap();
        let voxels = features.spec().len();
        for cls in 1..NUM_CLASSES as u8 {
            let mean = classwise_mean(&features, &ctx, cls).unwrap();
            let Some(mean) = mean else { continue };
            for lin in 0..voxels {
                if ctx.class_map().values()[lin] == cls && ctx.occluded().values()[lin] {
                    for c in 0..features.channels() {
                        assert_eq!(completed.data()[c * voxels + lin], mean[c]);
                    }
                }
            }
        }
    }
}
