//! Voxel-grid geometry, the semantic class table, and the dense volume types
//! shared by every other module.
//!
//! All volumes are dense and X-major: index `(x, y, z)` maps to
//! `(x * Y + y) * Z + z`, and multi-channel volumes put the channel axis
//! outermost. This matches the on-disk VGRID payload order exactly.

use crate::error::{Error, Result};

/// Number of semantic classes including the empty class at index 0.
pub const NUM_CLASSES: usize = 12;

/// Label value marking unlabeled voxels that are excluded from losses and
/// metrics.
pub const IGNORE_LABEL: u8 = 255;

/// Conventional factor for reducing high-resolution ground truth to the
/// training grid.
pub const DEFAULT_DOWNSAMPLE_FACTOR: usize = 4;

/// The fixed 12-class table used throughout: index 0 is empty space, 1..=11
/// are semantic classes.
pub struct ClassTable;

impl ClassTable {
    pub const NAMES: [&'static str; NUM_CLASSES] = [
        "empty", "ceil.", "floor", "wall", "win.", "chair", "bed", "sofa", "table", "tvs",
        "furn", "objs",
    ];

    pub fn name(class: usize) -> Option<&'static str> {
        Self::NAMES.get(class).copied()
    }

    pub fn index(name: &str) -> Option<usize> {
        Self::NAMES.iter().position(|n| *n == name)
    }
}

/// Geometry binding voxel indices to metric world coordinates.
///
/// `origin` is the world position of the corner of voxel `(0, 0, 0)`; voxel
/// centers sit at `origin + (index + 0.5) * voxel_size`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub voxel_size: f32,
    pub origin: [f32; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], voxel_size: f32, origin: [f32; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "grid dims must all be >= 1, got {dims:?}"
            )));
        }
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(Error::Domain(format!(
                "voxel_size must be positive and finite, got {voxel_size}"
            )));
        }
        Ok(Self {
            dims,
            voxel_size,
            origin,
        })
    }

    /// Total voxel count `X * Y * Z`.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false // dims are validated >= 1
    }

    pub fn contains(&self, index: [usize; 3]) -> bool {
        index[0] < self.dims[0] && index[1] < self.dims[1] && index[2] < self.dims[2]
    }

    /// Linear offset of voxel `(x, y, z)`.
    #[inline]
    pub fn linear(&self, index: [usize; 3]) -> usize {
        debug_assert!(self.contains(index));
        (index[0] * self.dims[1] + index[1]) * self.dims[2] + index[2]
    }

    /// Iterate voxel indices in storage order (x-major, z fastest).
    pub fn indices(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [dx, dy, dz] = self.dims;
        (0..dx).flat_map(move |x| (0..dy).flat_map(move |y| (0..dz).map(move |z| [x, y, z])))
    }

    /// World coordinates of the center of the given voxel.
    pub fn voxel_to_world(&self, index: [usize; 3]) -> Result<[f64; 3]> {
        if !self.contains(index) {
            return Err(Error::Index(format!(
                "voxel {index:?} out of range for dims {:?}",
                self.dims
            )));
        }
        let vs = self.voxel_size as f64;
        Ok([
            self.origin[0] as f64 + (index[0] as f64 + 0.5) * vs,
            self.origin[1] as f64 + (index[1] as f64 + 0.5) * vs,
            self.origin[2] as f64 + (index[2] as f64 + 0.5) * vs,
        ])
    }

    /// Voxel containing the given world point, or `None` when the point falls
    /// outside the grid. Out-of-grid is a value, not an error.
    pub fn world_to_voxel(&self, point: [f64; 3]) -> Option<[usize; 3]> {
        let vs = self.voxel_size as f64;
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((point[a] - self.origin[a] as f64) / vs).floor();
            if f < 0.0 || f >= self.dims[a] as f64 {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }
}

/// Per-voxel semantic class identifiers: 0 = empty, 1..=11 semantic,
/// 255 = ignore.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    spec: GridSpec,
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(spec: GridSpec, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != spec.len() {
            return Err(Error::Shape(format!(
                "label volume has {} values, grid {:?} needs {}",
                labels.len(),
                spec.dims,
                spec.len()
            )));
        }
        if let Some(bad) = labels
            .iter()
            .find(|&&v| v as usize >= NUM_CLASSES && v != IGNORE_LABEL)
        {
            return Err(Error::Domain(format!(
                "label {bad} is outside 0..{NUM_CLASSES} and is not the ignore value"
            )));
        }
        Ok(Self { spec, labels })
    }

    pub fn filled(spec: GridSpec, label: u8) -> Result<Self> {
        let n = spec.len();
        Self::new(spec, vec![label; n])
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, index: [usize; 3]) -> u8 {
        self.labels[self.spec.linear(index)]
    }

    pub fn set(&mut self, index: [usize; 3], label: u8) {
        let i = self.spec.linear(index);
        self.labels[i] = label;
    }

    /// Majority-vote downsampling by an integer factor.
    ///
    /// Each output voxel holds the majority label of its `factor^3` block.
    /// Ignore labels (255) do not vote unless the entire block is 255, in
    /// which case the output voxel is 255. Ties go to the smallest class
    /// index among the tied labels.
    pub fn downsample(&self, factor: usize) -> Result<LabelVolume> {
        if factor == 0 {
            return Err(Error::Shape("downsample factor must be >= 1".into()));
        }
        if self.spec.dims.iter().any(|&d| d % factor != 0) {
            return Err(Error::Shape(format!(
                "factor {factor} does not divide dims {:?}",
                self.spec.dims
            )));
        }
        let out_dims = [
            self.spec.dims[0] / factor,
            self.spec.dims[1] / factor,
            self.spec.dims[2] / factor,
        ];
        let out_spec = GridSpec::new(
            out_dims,
            self.spec.voxel_size * factor as f32,
            self.spec.origin,
        )?;
        let mut out = vec![0u8; out_spec.len()];
        for [ox, oy, oz] in out_spec.indices() {
            let mut counts = [0usize; NUM_CLASSES];
            let mut voters = 0usize;
            for ix in 0..factor {
                for iy in 0..factor {
                    for iz in 0..factor {
                        let v = self.get([ox * factor + ix, oy * factor + iy, oz * factor + iz]);
                        if v != IGNORE_LABEL {
                            counts[v as usize] += 1;
                            voters += 1;
                        }
                    }
                }
            }
            let winner = if voters == 0 {
                IGNORE_LABEL
            } else {
                let mut best = 0usize;
                for c in 1..NUM_CLASSES {
                    // strict > keeps the smallest index on ties
                    if counts[c] > counts[best] {
                        best = c;
                    }
                }
                best as u8
            };
            out[out_spec.linear([ox, oy, oz])] = winner;
        }
        LabelVolume::new(out_spec, out)
    }
}

/// Dense per-voxel feature vectors, `channels` values per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    spec: GridSpec,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureVolume {
    pub fn new(spec: GridSpec, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Shape("feature volume needs >= 1 channel".into()));
        }
        if data.len() != channels * spec.len() {
            return Err(Error::Shape(format!(
                "feature volume has {} values, {} channels on grid {:?} need {}",
                data.len(),
                channels,
                spec.dims,
                channels * spec.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("feature volume contains non-finite values".into()));
        }
        Ok(Self {
            spec,
            channels,
            data,
        })
    }

    pub fn zeros(spec: GridSpec, channels: usize) -> Result<Self> {
        let n = channels * spec.len();
        Self::new(spec, channels, vec![0.0; n])
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, index: [usize; 3]) -> f32 {
        self.data[channel * self.spec.len() + self.spec.linear(index)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, index: [usize; 3], value: f32) {
        let i = channel * self.spec.len() + self.spec.linear(index);
        self.data[i] = value;
    }

    /// Feature vector of one voxel, gathered across the channel axis.
    pub fn vector_at(&self, linear: usize) -> Vec<f32> {
        let n = self.spec.len();
        (0..self.channels).map(|c| self.data[c * n + linear]).collect()
    }
}

/// Dense boolean mask over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    spec: GridSpec,
    data: Vec<bool>,
}

impl MaskVolume {
    pub fn new(spec: GridSpec, data: Vec<bool>) -> Result<Self> {
        if data.len() != spec.len() {
            return Err(Error::Shape(format!(
                "mask has {} values, grid {:?} needs {}",
                data.len(),
                spec.dims,
                spec.len()
            )));
        }
        Ok(Self { spec, data })
    }

    pub fn filled(spec: GridSpec, value: bool) -> Self {
        let n = spec.len();
        Self { spec, data: vec![value; n] }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[bool] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn get(&self, index: [usize; 3]) -> bool {
        self.data[self.spec.linear(index)]
    }

    pub fn set(&mut self, index: [usize; 3], value: bool) {
        let i = self.spec.linear(index);
        self.data[i] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_spec() -> GridSpec {
        GridSpec::new([4, 4, 4], 1.0, [0.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn voxel_to_world_returns_centers() {
        let spec = unit_spec();
        assert_eq!(spec.voxel_to_world([0, 0, 0]).unwrap(), [0.5, 0.5, 0.5]);

        let spec = GridSpec::new([60, 36, 60], 0.08, [0.0, 0.0, 0.0]).unwrap();
        let w = spec.voxel_to_world([1, 0, 0]).unwrap();
        // voxel_size is stored in f32, so compare at f32 precision
        assert!((w[0] - 0.12).abs() < 1e-7 && (w[1] - 0.04).abs() < 1e-7);

        let spec = GridSpec::new([8, 8, 8], 1.0, [-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(spec.voxel_to_world([2, 3, 4]).unwrap(), [1.5, 3.5, 6.5]);
    }

    #[test]
    fn voxel_to_world_rejects_out_of_range() {
        let spec = unit_spec();
        assert!(matches!(
            spec.voxel_to_world([4, 0, 0]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn world_to_voxel_floors_and_bounds() {
        let spec = unit_spec();
        assert_eq!(spec.world_to_voxel([0.5, 0.5, 0.5]), Some([0, 0, 0]));
        assert_eq!(spec.world_to_voxel([-0.1, 0.0, 0.0]), None);

        let spec = GridSpec::new([60, 36, 60], 0.08, [0.0, 0.0, 0.0]).unwrap();
        assert_eq!(spec.world_to_voxel([4.81, 0.0, 0.0]), None); // index 60 >= 60
    }

    #[test]
    fn world_voxel_round_trip_on_centers() {
        let spec = GridSpec::new([5, 7, 3], 0.13, [-0.4, 2.0, 1.7]).unwrap();
        for idx in spec.indices() {
            let w = spec.voxel_to_world(idx).unwrap();
            assert_eq!(spec.world_to_voxel(w), Some(idx));
        }
    }

    #[test]
    fn downsample_unanimous_block() {
        let spec = GridSpec::new([2, 2, 2], 1.0, [0.0; 3]).unwrap();
        let v = LabelVolume::new(spec, vec![3; 8]).unwrap();
        let d = v.downsample(2).unwrap();
        assert_eq!(d.values(), &[3]);
        assert_eq!(d.spec().dims, [1, 1, 1]);
        assert_eq!(d.spec().voxel_size, 2.0);
    }

    #[test]
    fn downsample_tie_goes_to_smaller_class() {
        // four 0s and four 5s: tie resolved toward class 0
        let spec = GridSpec::new([2, 2, 2], 1.0, [0.0; 3]).unwrap();
        let v = LabelVolume::new(spec, vec![0, 0, 0, 0, 5, 5, 5, 5]).unwrap();
        assert_eq!(v.downsample(2).unwrap().values(), &[0]);
    }

    #[test]
    fn downsample_excludes_ignore_votes() {
        // seven 255s and a single 4: the 4 wins because 255 never votes
        let spec = GridSpec::new([2, 2, 2], 1.0, [0.0; 3]).unwrap();
        let mut labels = vec![IGNORE_LABEL; 8];
        labels[5] = 4;
        let v = LabelVolume::new(spec, labels).unwrap();
        assert_eq!(v.downsample(2).unwrap().values(), &[4]);
    }

    #[test]
    fn downsample_all_ignore_stays_ignore() {
        let spec = GridSpec::new([2, 2, 2], 1.0, [0.0; 3]).unwrap();
        let v = LabelVolume::new(spec, vec![IGNORE_LABEL; 8]).unwrap();
        assert_eq!(v.downsample(2).unwrap().values(), &[IGNORE_LABEL]);
    }

    #[test]
    fn downsample_identity_at_factor_one() {
        let spec = GridSpec::new([3, 2, 2], 1.0, [0.0; 3]).unwrap();
        let labels: Vec<u8> = (0..12).map(|i| (i % 12) as u8).collect();
        let v = LabelVolume::new(spec, labels.clone()).unwrap();
        assert_eq!(v.downsample(1).unwrap().values(), labels.as_slice());
    }

    #[test]
    fn downsample_rejects_non_divisible_dims() {
        let spec = GridSpec::new([3, 4, 4], 1.0, [0.0; 3]).unwrap();
        let v = LabelVolume::filled(spec, 0).unwrap();
        assert!(matches!(v.downsample(2), Err(Error::Shape(_))));
    }

    #[test]
    fn label_volume_rejects_out_of_table_values() {
        let spec = GridSpec::new([1, 1, 2], 1.0, [0.0; 3]).unwrap();
        assert!(LabelVolume::new(spec, vec![12, 0]).is_err());
        assert!(LabelVolume::new(spec, vec![255, 11]).is_ok());
    }
}
