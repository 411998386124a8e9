//! Flipped-TSDF encoding of a single depth image.
//!
//! Every voxel center is classified against the depth map (free, surface,
//! occluded, or outside the view), then assigned a signed value
//! `s * max(0, 1 - d / tau)` where `d` is the exact Euclidean distance to
//! the nearest surface-voxel center. The value is 1 on the surface, decays
//! to 0 at the truncation distance, and is negative in occluded space.
//!
//! The distance stage runs a three-pass separable exact Euclidean distance
//! transform; `tsdf_oracle` recomputes the same contract by exhaustive
//! all-pairs scan and exists purely so tests can check the fast path.

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, LabelVolume, MaskVolume};

/// Per-voxel visibility with respect to the input view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Visibility {
    /// Between camera and observed surface, by more than half the truncation.
    Free = 0,
    /// Within half the truncation of the observed depth.
    Surface = 1,
    /// Behind the observed surface by more than half the truncation.
    Occluded = 2,
    /// Projects off-image, behind the camera, or onto an invalid pixel.
    Outside = 3,
}

impl Visibility {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Visibility::Free,
            1 => Visibility::Surface,
            2 => Visibility::Occluded,
            3 => Visibility::Outside,
            other => {
                return Err(Error::Domain(format!(
                    "visibility code must be 0..=3, got {other}"
                )))
            }
        })
    }
}

/// Dense per-voxel visibility classification.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityVolume {
    spec: GridSpec,
    data: Vec<Visibility>,
}

impl VisibilityVolume {
    pub fn new(spec: GridSpec, data: Vec<Visibility>) -> Result<Self> {
        if data.len() != spec.len() {
            return Err(Error::Shape(format!(
                "visibility volume has {} values, grid {:?} needs {}",
                data.len(),
                spec.dims,
                spec.len()
            )));
        }
        Ok(Self { spec, data })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[Visibility] {
        &self.data
    }

    pub fn get(&self, index: [usize; 3]) -> Visibility {
        self.data[self.spec.linear(index)]
    }

    /// Mask of voxels with the given visibility.
    pub fn mask_of(&self, which: Visibility) -> MaskVolume {
        MaskVolume::new(self.spec, self.data.iter().map(|&v| v == which).collect())
            .expect("mask matches own spec")
    }

    /// Codes 0..=3 as a label volume, the on-disk sibling representation.
    pub fn to_labels(&self) -> LabelVolume {
        LabelVolume::new(self.spec, self.data.iter().map(|v| v.code()).collect())
            .expect("codes 0..=3 are valid labels")
    }

    pub fn from_labels(labels: &LabelVolume) -> Result<Self> {
        let data = labels
            .values()
            .iter()
            .map(|&c| Visibility::from_code(c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(*labels.spec(), data)
    }
}

/// A depth image in meters; 0 marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl DepthImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "depth image has {} values, {height}x{width} needs {}",
                data.len(),
                height * width
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(
                "depth values must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, meters: f32) {
        self.data[row * self.width + col] = meters;
    }

    /// Valid-depth pixels as `(row, col, meters)`.
    pub fn valid_pixels(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        (0..self.height).flat_map(move |v| {
            (0..self.width).filter_map(move |u| {
                let d = self.get(v, u);
                (d > 0.0).then_some((v, u, d))
            })
        })
    }
}

/// Flipped TSDF values plus the visibility classification they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    spec: GridSpec,
    truncation: f32,
    values: Vec<f32>,
    visibility: VisibilityVolume,
}

impl TsdfVolume {
    pub fn new(
        spec: GridSpec,
        truncation: f32,
        values: Vec<f32>,
        visibility: VisibilityVolume,
    ) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::Shape(format!(
                "tsdf volume has {} values, grid {:?} needs {}",
                values.len(),
                spec.dims,
                spec.len()
            )));
        }
        if *visibility.spec() != spec {
            return Err(Error::Shape(
                "tsdf values and visibility use different grids".into(),
            ));
        }
        Ok(Self {
            spec,
            truncation,
            values,
            visibility,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn truncation(&self) -> f32 {
        self.truncation
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn visibility(&self) -> &VisibilityVolume {
        &self.visibility
    }

    pub fn get(&self, index: [usize; 3]) -> f32 {
        self.values[self.spec.linear(index)]
    }
}

fn check_image_shape(depth: &DepthImage, cam: &CameraModel) -> Result<()> {
    if cam.image_size != (depth.height(), depth.width()) {
        return Err(Error::Shape(format!(
            "camera expects {:?} image, depth is ({}, {})",
            cam.image_size,
            depth.height(),
            depth.width()
        )));
    }
    Ok(())
}

/// Occupancy mask of voxels hit by back-projected valid depth pixels.
pub fn surface_from_depth(
    depth: &DepthImage,
    cam: &CameraModel,
    spec: &GridSpec,
) -> Result<MaskVolume> {
    check_image_shape(depth, cam)?;
    let mut mask = MaskVolume::filled(*spec, false);
    for (v, u, d) in depth.valid_pixels() {
        let world = cam.back_project(u as f64, v as f64, d as f64);
        if let Some(idx) = spec.world_to_voxel(world) {
            mask.set(idx, true);
        }
    }
    Ok(mask)
}

/// Classify every voxel center against the depth map.
///
/// A voxel is `Outside` when its center projects off-image, behind the
/// camera, or onto an invalid pixel. Otherwise its camera-space depth `z`
/// is compared with the observed depth `D`: `Free` when `z < D - tau/2`,
/// `Surface` when `|z - D| <= tau/2`, `Occluded` when `z > D + tau/2`.
pub fn classify_visibility(
    depth: &DepthImage,
    cam: &CameraModel,
    spec: &GridSpec,
    truncation: f32,
) -> Result<VisibilityVolume> {
    check_image_shape(depth, cam)?;
    if !(truncation > 0.0) {
        return Err(Error::Domain(format!(
            "truncation must be positive, got {truncation}"
        )));
    }
    let half_band = truncation as f64 / 2.0;
    let mut data = Vec::with_capacity(spec.len());
    for idx in spec.indices() {
        let center = spec.voxel_to_world(idx).expect("index from iterator");
        let vis = match cam.project(center) {
            None => Visibility::Outside,
            Some((u, v, z)) => match cam.pixel_at(u, v) {
                None => Visibility::Outside,
                Some((row, col)) => {
                    let observed = depth.get(row, col) as f64;
                    if observed <= 0.0 {
                        Visibility::Outside
                    } else if z < observed - half_band {
                        Visibility::Free
                    } else if z > observed + half_band {
                        Visibility::Occluded
                    } else {
                        Visibility::Surface
                    }
                }
            },
        };
        data.push(vis);
    }
    VisibilityVolume::new(*spec, data)
}

/// Full encoding pipeline: classify visibility, take the surface voxels as
/// distance sources, and build the flipped TSDF.
pub fn tsdf_encode(
    depth: &DepthImage,
    cam: &CameraModel,
    spec: &GridSpec,
    truncation: f32,
) -> Result<TsdfVolume> {
    let visibility = classify_visibility(depth, cam, spec, truncation)?;
    let surface = visibility.mask_of(Visibility::Surface);
    tsdf_from_mask(&surface, &visibility, truncation)
}

/// Distance stage of the encoding: flipped TSDF from an explicit surface
/// mask and visibility volume, using the separable exact EDT.
pub fn tsdf_from_mask(
    surface: &MaskVolume,
    visibility: &VisibilityVolume,
    truncation: f32,
) -> Result<TsdfVolume> {
    let spec = check_mask_inputs(surface, visibility, truncation)?;
    let sq = edt3_squared(surface.values(), spec.dims);
    let values = combine(&sq, visibility, spec, truncation);
    TsdfVolume::new(*spec, truncation, values, visibility.clone())
}

/// Same contract as the distance stage of [`tsdf_encode`], computed by an
/// exhaustive scan over all (voxel, surface voxel) pairs.
pub fn tsdf_oracle(
    surface: &MaskVolume,
    visibility: &VisibilityVolume,
    truncation: f32,
) -> Result<TsdfVolume> {
    let spec = check_mask_inputs(surface, visibility, truncation)?;
    let sites: Vec<[f64; 3]> = spec
        .indices()
        .filter(|&idx| surface.get(idx))
        .map(|idx| [idx[0] as f64, idx[1] as f64, idx[2] as f64])
        .collect();
    let mut sq = Vec::with_capacity(spec.len());
    for idx in spec.indices() {
        let p = [idx[0] as f64, idx[1] as f64, idx[2] as f64];
        let mut best = f64::INFINITY;
        for s in &sites {
            let d2 = (p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2) + (p[2] - s[2]).powi(2);
            if d2 < best {
                best = d2;
            }
        }
        sq.push(best);
    }
    let tau = truncation as f64;
    let vs = spec.voxel_size as f64;
    let mut values = Vec::with_capacity(spec.len());
    for (i, &vis) in visibility.values().iter().enumerate() {
        let value = match vis {
            Visibility::Outside => 0.0,
            _ => {
                let meters = sq[i].sqrt() * vs;
                let magnitude = (1.0 - meters / tau).max(0.0);
                let sign = if vis == Visibility::Occluded { -1.0 } else { 1.0 };
                sign * magnitude
            }
        };
        values.push(value as f32);
    }
    TsdfVolume::new(*spec, truncation, values, visibility.clone())
}

fn check_mask_inputs<'a>(
    surface: &MaskVolume,
    visibility: &'a VisibilityVolume,
    truncation: f32,
) -> Result<&'a GridSpec> {
    if surface.spec() != visibility.spec() {
        return Err(Error::Shape(
            "surface mask and visibility use different grids".into(),
        ));
    }
    if !(truncation > 0.0) {
        return Err(Error::Domain(format!(
            "truncation must be positive, got {truncation}"
        )));
    }
    if surface.count() == 0 {
        return Err(Error::EmptyScene);
    }
    Ok(visibility.spec())
}

fn combine(
    sq: &[f64],
    visibility: &VisibilityVolume,
    spec: &GridSpec,
    truncation: f32,
) -> Vec<f32> {
    let tau = truncation as f64;
    let vs = spec.voxel_size as f64;
    visibility
        .values()
        .iter()
        .zip(sq)
        .map(|(&vis, &d2)| {
            match vis {
                Visibility::Outside => 0.0,
                _ => {
                    let meters = d2.sqrt() * vs;
                    let magnitude = (1.0 - meters / tau).max(0.0);
                    let sign = if vis == Visibility::Occluded { -1.0 } else { 1.0 };
                    (sign * magnitude) as f32
                }
            }
        })
        .collect()
}

/// Stand-in for "no site anywhere along this line"; large enough to lose
/// every comparison against a real squared distance, small enough to keep
/// the parabola arithmetic finite.
const FAR: f64 = 1e18;

/// Exact squared Euclidean distance (in voxel units) to the nearest set
/// voxel, by three separable one-dimensional lower-envelope passes.
fn edt3_squared(mask: &[bool], dims: [usize; 3]) -> Vec<f64> {
    let [dx, dy, dz] = dims;
    let mut dist: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { FAR }).collect();

    let stride_x = dy * dz;
    let stride_y = dz;

    let n = dx.max(dy).max(dz);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut hull = vec![0usize; n];
    let mut bounds = vec![0.0; n + 1];

    // pass 1: along z (contiguous)
    for x in 0..dx {
        for y in 0..dy {
            let base = x * stride_x + y * stride_y;
            f[..dz].copy_from_slice(&dist[base..base + dz]);
            dt1d(&f[..dz], &mut out[..dz], &mut hull, &mut bounds);
            dist[base..base + dz].copy_from_slice(&out[..dz]);
        }
    }
    // pass 2: along y
    for x in 0..dx {
        for z in 0..dz {
            let base = x * stride_x + z;
            for y in 0..dy {
                f[y] = dist[base + y * stride_y];
            }
            dt1d(&f[..dy], &mut out[..dy], &mut hull, &mut bounds);
            for y in 0..dy {
                dist[base + y * stride_y] = out[y];
            }
        }
    }
    // pass 3: along x
    for y in 0..dy {
        for z in 0..dz {
            let base = y * stride_y + z;
            for x in 0..dx {
                f[x] = dist[base + x * stride_x];
            }
            dt1d(&f[..dx], &mut out[..dx], &mut hull, &mut bounds);
            for x in 0..dx {
                dist[base + x * stride_x] = out[x];
            }
        }
    }
    dist
}

/// One-dimensional squared distance transform of a sampled function
/// (lower envelope of parabolas).
fn dt1d(f: &[f64], out: &mut [f64], hull: &mut [usize], bounds: &mut [f64]) {
    let n = f.len();
    if n == 1 {
        out[0] = f[0];
        return;
    }
    let mut k = 0usize;
    hull[0] = 0;
    bounds[0] = f64::NEG_INFINITY;
    bounds[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        loop {
            let p = hull[k] as f64;
            let s = ((f[q] + qf * qf) - (f[hull[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            if s <= bounds[k] {
                debug_assert!(k > 0);
                k -= 1;
                continue;
            }
            k += 1;
            hull[k] = q;
            bounds[k] = s;
            bounds[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0usize;
    for (q, slot) in out.iter_mut().enumerate().take(n) {
        let qf = q as f64;
        while bounds[k + 1] < qf {
            k += 1;
        }
        let p = hull[k] as f64;
        *slot = (qf - p) * (qf - p) + f[hull[k]];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_spec(n: usize, voxel: f32) -> GridSpec {
        GridSpec::new([n, n, n], voxel, [0.0, 0.0, 0.0]).unwrap()
    }

    /// Camera centered on the grid's x/y midline, looking along +z from
    /// outside the grid.
    fn frontal_camera(spec: &GridSpec, image: usize) -> CameraModel {
        let extent = spec.dims[0] as f64 * spec.voxel_size as f64;
        CameraModel::axis_aligned(
            image as f64 * 0.75,
            image as f64 * 0.75,
            (image as f64 - 1.0) / 2.0,
            (image as f64 - 1.0) / 2.0,
            [extent / 2.0, extent / 2.0, -extent],
            (image, image),
        )
        .unwrap()
    }

    #[test]
    fn all_invalid_depth_gives_empty_mask() {
        let spec = toy_spec(8, 0.1);
        let cam = frontal_camera(&spec, 16);
        let mask = surface_from_depth(&DepthImage::zeros(16, 16), &cam, &spec).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn single_pixel_back_projects_to_hand_computed_voxel() {
        let spec = toy_spec(16, 0.1);
        // principal point at an exact pixel so the ray is the optical axis;
        // camera x/y sit on a voxel center to stay clear of cell boundaries
        let cam = CameraModel::axis_aligned(12.0, 12.0, 8.0, 8.0, [0.85, 0.85, -0.4], (17, 17))
            .unwrap();
        let mut depth = DepthImage::zeros(17, 17);
        depth.set(8, 8, 0.65);
        // world = R((u-cx)d/fx, (v-cy)d/fy, d) + t = (0.85, 0.85, 0.25) -> voxel (8, 8, 2)
        let mask = surface_from_depth(&depth, &cam, &spec).unwrap();
        assert_eq!(mask.count(), 1);
        assert!(mask.get([8, 8, 2]));
    }

    #[test]
    fn pixels_landing_in_one_voxel_mark_it_once() {
        let spec = toy_spec(16, 0.1);
        // long focal length: adjacent pixels are ~0.04 m apart at this depth
        let cam = CameraModel::axis_aligned(48.0, 48.0, 15.5, 15.5, [0.85, 0.85, -1.6], (32, 32))
            .unwrap();
        let mut depth = DepthImage::zeros(32, 32);
        depth.set(15, 15, 2.05); // -> world x 0.829, z 0.45: voxel (8, 8, 4)
        depth.set(15, 16, 2.05); // -> world x 0.872, same voxel
        let mask = surface_from_depth(&depth, &cam, &spec).unwrap();
        assert_eq!(mask.count(), 1);
        assert!(mask.get([8, 8, 4]));
    }

    #[test]
    fn visibility_thresholds_follow_the_band() {
        let spec = toy_spec(16, 0.1);
        let cam = frontal_camera(&spec, 32);
        let mut depth = DepthImage::zeros(32, 32);
        for v in 0..32 {
            for u in 0..32 {
                depth.set(v, u, 2.0); // frontal plane 2 m from camera, z = 0.4 in grid
            }
        }
        let tau = 0.3;
        let vis = classify_visibility(&depth, &cam, &spec, tau).unwrap();
        // camera at z = -1.6; observed surface plane sits at world z = 0.4
        // voxel centers: z index 4 -> 0.45 (|dz| = 0.05 < 0.15 -> Surface)
        assert_eq!(vis.get([8, 8, 4]), Visibility::Surface);
        // z index 0 -> 0.05 (margin 0.35 > 0.15 -> Free)
        assert_eq!(vis.get([8, 8, 0]), Visibility::Free);
        // z index 8 -> 0.85 (0.45 behind -> Occluded)
        assert_eq!(vis.get([8, 8, 8]), Visibility::Occluded);
    }

    #[test]
    fn visibility_partitions_every_voxel() {
        let spec = toy_spec(12, 0.1);
        let cam = frontal_camera(&spec, 24);
        let mut depth = DepthImage::zeros(24, 24);
        for v in 0..24 {
            for u in 6..20 {
                depth.set(v, u, 1.9 + 0.01 * u as f32);
            }
        }
        let vis = classify_visibility(&depth, &cam, &spec, 0.3).unwrap();
        assert_eq!(vis.values().len(), spec.len());
    }

    fn hand_visibility(spec: &GridSpec, surface_z: usize) -> (MaskVolume, VisibilityVolume) {
        let mut mask = MaskVolume::filled(*spec, false);
        let mut vis = Vec::with_capacity(spec.len());
        for idx in spec.indices() {
            if idx[2] == surface_z {
                vis.push(Visibility::Surface);
            } else if idx[2] < surface_z {
                vis.push(Visibility::Free);
            } else {
                vis.push(Visibility::Occluded);
            }
        }
        for x in 0..spec.dims[0] {
            for y in 0..spec.dims[1] {
                mask.set([x, y, surface_z], true);
            }
        }
        (mask, VisibilityVolume::new(*spec, vis).unwrap())
    }

    #[test]
    fn surface_voxels_encode_to_one() {
        let spec = toy_spec(8, 0.1);
        let (mask, vis) = hand_visibility(&spec, 4);
        let tsdf = tsdf_from_mask(&mask, &vis, 0.3).unwrap();
        assert_eq!(tsdf.get([3, 3, 4]), 1.0);
    }

    #[test]
    fn value_reaches_zero_at_truncation() {
        // voxel 0.25 m and tau 0.75 m are both exact in f32, so a voxel
        // exactly three steps from the plane lands exactly on the boundary
        let spec = toy_spec(8, 0.25);
        let (mask, vis) = hand_visibility(&spec, 4);
        let tsdf = tsdf_from_mask(&mask, &vis, 0.75).unwrap();
        assert_eq!(tsdf.get([3, 3, 1]), 0.0);
        assert_eq!(tsdf.visibility().get([3, 3, 1]), Visibility::Free);
    }

    #[test]
    fn occluded_two_steps_behind_single_surface_voxel() {
        // one surface voxel at the grid center, tau = 0.3 m, voxel 0.1 m:
        // a voxel two steps behind is 0.2 m away -> -(1 - 0.2/0.3) = -1/3
        let spec = toy_spec(16, 0.1);
        let mut mask = MaskVolume::filled(spec, false);
        mask.set([8, 8, 8], true);
        let mut vis = Vec::with_capacity(spec.len());
        for idx in spec.indices() {
            vis.push(if idx == [8, 8, 8] {
                Visibility::Surface
            } else if idx[2] > 8 {
                Visibility::Occluded
            } else {
                Visibility::Free
            });
        }
        let vis = VisibilityVolume::new(spec, vis).unwrap();
        let tsdf = tsdf_from_mask(&mask, &vis, 0.3).unwrap();
        let got = tsdf.get([8, 8, 10]) as f64;
        assert!((got - (-1.0 / 3.0)).abs() < 1e-6, "got {got}");
        let oracle = tsdf_oracle(&mask, &vis, 0.3).unwrap();
        assert_eq!(oracle.get([8, 8, 10]), tsdf.get([8, 8, 10]));
    }

    #[test]
    fn no_surface_voxels_is_an_error() {
        let spec = toy_spec(4, 0.1);
        let mask = MaskVolume::filled(spec, false);
        let vis = VisibilityVolume::new(spec, vec![Visibility::Free; spec.len()]).unwrap();
        assert!(matches!(
            tsdf_from_mask(&mask, &vis, 0.3),
            Err(Error::EmptyScene)
        ));
        let cam = frontal_camera(&spec, 8);
        assert!(matches!(
            tsdf_encode(&DepthImage::zeros(8, 8), &cam, &spec, 0.3),
            Err(Error::EmptyScene)
        ));
    }

    fn random_scene(
        rng: &mut ChaCha8Rng,
        n: usize,
        surface_prob: f64,
    ) -> (GridSpec, MaskVolume, VisibilityVolume) {
        let spec = toy_spec(n, 0.1);
        let mut mask = MaskVolume::filled(spec, false);
        let mut vis = Vec::with_capacity(spec.len());
        let mut any = false;
        for i in 0..spec.len() {
            let r: f64 = rng.random();
            if r < surface_prob {
                mask.values_mut()[i] = true;
                any = true;
                vis.push(Visibility::Surface);
            } else if r < 0.5 {
                vis.push(Visibility::Free);
            } else if r < 0.9 {
                vis.push(Visibility::Occluded);
            } else {
                vis.push(Visibility::Outside);
            }
        }
        if !any {
            mask.values_mut()[0] = true;
            vis[0] = Visibility::Surface;
        }
        (spec, mask, VisibilityVolume::new(spec, vis).unwrap())
    }

    #[test]
    fn edt_matches_oracle_on_random_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for round in 0..20 {
            let n = 4 + (round % 3) * 4; // 4, 8, 12
            let (_, mask, vis) = random_scene(&mut rng, n, 0.05);
            let fast = tsdf_from_mask(&mask, &vis, 0.35).unwrap();
            let slow = tsdf_oracle(&mask, &vis, 0.35).unwrap();
            for (a, b) in fast.values().iter().zip(slow.values()) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b} in round {round}");
            }
        }
    }

    #[test]
    fn oracle_two_sites_takes_pointwise_minimum() {
        let spec = toy_spec(8, 0.1);
        let mut mask = MaskVolume::filled(spec, false);
        mask.set([1, 1, 1], true);
        mask.set([6, 6, 6], true);
        let vis =
            VisibilityVolume::new(spec, vec![Visibility::Free; spec.len()]).unwrap();
        let two = tsdf_oracle(&mask, &vis, 1.5).unwrap();

        let mut only_a = MaskVolume::filled(spec, false);
        only_a.set([1, 1, 1], true);
        let a = tsdf_oracle(&only_a, &vis, 1.5).unwrap();
        let mut only_b = MaskVolume::filled(spec, false);
        only_b.set([6, 6, 6], true);
        let b = tsdf_oracle(&only_b, &vis, 1.5).unwrap();

        // flipped encoding: nearer surface -> larger value
        for i in 0..spec.len() {
            let expect = a.values()[i].max(b.values()[i]);
            assert!((two.values()[i] - expect).abs() < 1e-7);
        }
    }

    #[test]
    fn values_bounded_and_sign_matches_visibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (_, mask, vis) = random_scene(&mut rng, 10, 0.1);
        let tsdf = tsdf_from_mask(&mask, &vis, 0.3).unwrap();
        for (value, visv) in tsdf.values().iter().zip(vis.values()) {
            assert!(*value >= -1.0 && *value <= 1.0);
            match visv {
                Visibility::Free | Visibility::Surface => assert!(*value >= 0.0),
                Visibility::Occluded => assert!(*value <= 0.0),
                Visibility::Outside => assert_eq!(*value, 0.0),
            }
        }
    }

    #[test]
    fn magnitude_non_increasing_in_distance() {
        let spec = toy_spec(12, 0.1);
        let mut mask = MaskVolume::filled(spec, false);
        mask.set([6, 6, 6], true);
        let vis =
            VisibilityVolume::new(spec, vec![Visibility::Free; spec.len()]).unwrap();
        let tsdf = tsdf_from_mask(&mask, &vis, 0.5).unwrap();
        // walk away from the site along +x
        let mut prev = tsdf.get([6, 6, 6]);
        for x in 7..12 {
            let next = tsdf.get([x, 6, 6]);
            assert!(next <= prev);
            prev = next;
        }
    }
}
