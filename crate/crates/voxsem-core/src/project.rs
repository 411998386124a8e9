//! Projection of 2-D feature maps into sparse 3-D feature volumes.
//!
//! Each valid-depth pixel back-projects to the voxel containing its 3-D
//! point; a voxel hit by several pixels stores the arithmetic mean of their
//! feature vectors. Voxels hit by nothing keep the zero vector, which is
//! what makes the projected volume sparse: only visible surfaces carry
//! features.

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::grid::{FeatureVolume, GridSpec, MaskVolume};
use crate::io::VgridVolume;
use crate::tsdf::DepthImage;

/// A dense feature image, `channels` values per pixel, laid out
/// channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureImage {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Shape("feature image needs >= 1 channel".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature image has {} values, {channels}x{height}x{width} needs {}",
                data.len(),
                channels * height * width
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("feature image contains non-finite values".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f32) {
        self.data[(channel * self.height + row) * self.width + col] = value;
    }

    /// Store as a VGRID feature volume with dims (W, H, 1), the on-disk
    /// convention for 2-D maps.
    pub fn to_vgrid(&self) -> VgridVolume {
        let spec = GridSpec::new([self.width, self.height, 1], 1.0, [0.0; 3])
            .expect("image dims are positive");
        // (c, row, col) -> (c, x=col, y=row, z=0): transpose rows/cols
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            for x in 0..self.width {
                for y in 0..self.height {
                    data.push(self.get(c, y, x));
                }
            }
        }
        VgridVolume::Feature {
            channels: self.channels,
            spec,
            data,
        }
    }

    pub fn from_vgrid(volume: &VgridVolume) -> Result<Self> {
        let (channels, spec, data) = match volume {
            VgridVolume::Feature {
                channels,
                spec,
                data,
            } => (*channels, spec, data),
            other => {
                return Err(Error::Shape(format!(
                    "expected a feature volume, found kind {}",
                    other.kind()
                )))
            }
        };
        if spec.dims[2] != 1 {
            return Err(Error::Shape(format!(
                "2-D feature map requires Z = 1, got dims {:?}",
                spec.dims
            )));
        }
        let (w, h) = (spec.dims[0], spec.dims[1]);
        let mut img = FeatureImage::zeros(channels, h, w);
        for c in 0..channels {
            for x in 0..w {
                for y in 0..h {
                    img.set(c, y, x, data[(c * w + x) * h + y]);
                }
            }
        }
        Ok(img)
    }
}

/// Per-voxel hit counts from the scatter; count > 0 marks the visible
/// surface.
#[derive(Debug, Clone, PartialEq)]
pub struct CountVolume {
    spec: GridSpec,
    counts: Vec<u32>,
}

impl CountVolume {
    pub fn new(spec: GridSpec, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != spec.len() {
            return Err(Error::Shape(format!(
                "count volume has {} values, grid {:?} needs {}",
                counts.len(),
                spec.dims,
                spec.len()
            )));
        }
        Ok(Self { spec, counts })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[u32] {
        &self.counts
    }

    pub fn get(&self, index: [usize; 3]) -> u32 {
        self.counts[self.spec.linear(index)]
    }
}

/// True wherever at least one pixel landed.
pub fn surface_mask(counts: &CountVolume) -> MaskVolume {
    MaskVolume::new(
        *counts.spec(),
        counts.values().iter().map(|&c| c > 0).collect(),
    )
    .expect("mask matches count spec")
}

/// Scatter a feature image into the grid along depth.
///
/// Every valid-depth pixel back-projects to a voxel; a voxel receiving
/// `k >= 1` pixels stores the mean of their feature vectors and count `k`.
/// Accumulation runs in f64 in pixel order, so the result is deterministic.
pub fn project_features(
    feat: &FeatureImage,
    depth: &DepthImage,
    cam: &CameraModel,
    spec: &GridSpec,
) -> Result<(FeatureVolume, CountVolume)> {
    if feat.height() != depth.height() || feat.width() != depth.width() {
        return Err(Error::Shape(format!(
            "feature image is {}x{}, depth is {}x{}",
            feat.height(),
            feat.width(),
            depth.height(),
            depth.width()
        )));
    }
    if cam.image_size != (depth.height(), depth.width()) {
        return Err(Error::Shape(format!(
            "camera expects {:?} image, depth is ({}, {})",
            cam.image_size,
            depth.height(),
            depth.width()
        )));
    }
    let channels = feat.channels();
    let voxels = spec.len();
    let mut sums = vec![0f64; channels * voxels];
    let mut counts = vec![0u32; voxels];
    for (v, u, d) in depth.valid_pixels() {
        let world = cam.back_project(u as f64, v as f64, d as f64);
        if let Some(idx) = spec.world_to_voxel(world) {
            let lin = spec.linear(idx);
            counts[lin] += 1;
            for c in 0..channels {
                sums[c * voxels + lin] += feat.get(c, v, u) as f64;
            }
        }
    }
    let mut data = vec![0f32; channels * voxels];
    for lin in 0..voxels {
        let k = counts[lin];
        if k > 0 {
            for c in 0..channels {
                data[c * voxels + lin] = (sums[c * voxels + lin] / k as f64) as f32;
            }
        }
    }
    Ok((
        FeatureVolume::new(*spec, channels, data)?,
        CountVolume::new(*spec, counts)?,
    ))
}
