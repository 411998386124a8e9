//! Procedural synthetic scenes: a floor, a far wall, and a handful of
//! axis-aligned boxes, rendered to a depth image by ray casting and paired
//! with per-class feature images, exact ground-truth labels, the encoded
//! TSDF, and the projected feature volume.
//!
//! The camera sits outside the room looking in, so every box has a visible
//! front and a self-occluded interior; generation retries until each placed
//! object class has at least one visible-surface voxel and one occluded
//! voxel, and until no occluded voxel received projected features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::grid::{FeatureVolume, GridSpec, LabelVolume, NUM_CLASSES};
use crate::project::{project_features, CountVolume, FeatureImage};
use crate::tsdf::{tsdf_encode, DepthImage, TsdfVolume, Visibility};

/// Class indices used by the generator.
pub const FLOOR_CLASS: u8 = 2;
pub const WALL_CLASS: u8 = 3;

/// Classes eligible for placed boxes: everything semantic except floor and
/// wall, which the room itself provides.
pub const OBJECT_CLASSES: [u8; 8] = [4, 5, 6, 7, 8, 9, 10, 11];

/// Generator configuration.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub grid: GridSpec,
    /// Depth/feature image size as (height, width).
    pub image_size: (usize, usize),
    /// Inclusive range of placed boxes.
    pub object_count: (usize, usize),
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub truncation: f32,
    /// Feature prototype per class; entry 0 is the zero vector.
    pub palette: Vec<Vec<f32>>,
}

impl SceneSpec {
    /// Desk-scale defaults: a 16^3 grid at 0.1 m, 32x32 images, 8-D
    /// features with noise 0.1, and 1..=3 boxes.
    pub fn toy() -> Self {
        let grid = GridSpec::new([16, 16, 16], 0.1, [0.0; 3]).expect("static dims");
        let feature_dim = 8;
        let noise_sigma = 0.1;
        Self {
            grid,
            image_size: (32, 32),
            object_count: (1, 3),
            feature_dim,
            noise_sigma,
            truncation: 0.3,
            palette: make_palette(feature_dim, noise_sigma, 0x9a1e77),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.palette.len() != NUM_CLASSES {
            return Err(Error::Generation(format!(
                "palette has {} entries, need {NUM_CLASSES}",
                self.palette.len()
            )));
        }
        for (c, proto) in self.palette.iter().enumerate() {
            if proto.len() != self.feature_dim {
                return Err(Error::Generation(format!(
                    "prototype {c} has {} dims, expected {}",
                    proto.len(),
                    self.feature_dim
                )));
            }
        }
        // classes must be separable by construction
        let min_gap = 4.0 * self.noise_sigma;
        for a in 1..NUM_CLASSES {
            for b in (a + 1)..NUM_CLASSES {
                let d: f64 = self.palette[a]
                    .iter()
                    .zip(&self.palette[b])
                    .map(|(x, y)| ((x - y) as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if d <= min_gap {
                    return Err(Error::Generation(format!(
                        "prototypes {a} and {b} are {d:.3} apart, need > {min_gap:.3}"
                    )));
                }
            }
        }
        if self.object_count.0 > self.object_count.1 {
            return Err(Error::Generation("empty object count range".into()));
        }
        if !(self.truncation > 0.0) {
            return Err(Error::Generation("truncation must be positive".into()));
        }
        Ok(())
    }
}

/// Deterministic unit-vector prototypes with pairwise distance > 4 sigma.
pub fn make_palette(feature_dim: usize, noise_sigma: f64, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_gap = 4.0 * noise_sigma;
    let mut palette: Vec<Vec<f32>> = vec![vec![0.0; feature_dim]];
    'class: while palette.len() < NUM_CLASSES {
        'attempt: loop {
            let mut v: Vec<f64> = (0..feature_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-3 {
                continue 'attempt;
            }
            for x in v.iter_mut() {
                *x /= norm;
            }
            let candidate: Vec<f32> = v.iter().map(|&x| x as f32).collect();
            for existing in palette.iter().skip(1) {
                let d: f64 = existing
                    .iter()
                    .zip(&candidate)
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if d <= min_gap {
                    continue 'attempt;
                }
            }
            palette.push(candidate);
            continue 'class;
        }
    }
    palette
}

/// Axis-aligned solid box with a semantic class.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub class: u8,
}

impl SceneBox {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] < self.max[a])
    }

    fn overlaps(&self, other: &SceneBox) -> bool {
        (0..3).all(|a| self.min[a] < other.max[a] && other.min[a] < self.max[a])
    }

    /// Slab-method entry parameter of `origin + t * dir`, if the ray hits.
    fn entry(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        let mut t_lo = f64::NEG_INFINITY;
        let mut t_hi = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-12 {
                if origin[a] < self.min[a] || origin[a] >= self.max[a] {
                    return None;
                }
            } else {
                let inv = 1.0 / dir[a];
                let t0 = (self.min[a] - origin[a]) * inv;
                let t1 = (self.max[a] - origin[a]) * inv;
                let (near, far) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                t_lo = t_lo.max(near);
                t_hi = t_hi.min(far);
                if t_lo > t_hi {
                    return None;
                }
            }
        }
        (t_lo > 1e-9).then_some(t_lo)
    }
}

/// The box soup making up one scene: floor, wall, then objects.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGeometry {
    pub boxes: Vec<SceneBox>,
}

impl SceneGeometry {
    /// Nearest box entry along the ray, as (parameter, box index).
    pub fn hit(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, b) in self.boxes.iter().enumerate() {
            if let Some(t) = b.entry(origin, dir) {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    /// Ground-truth labels: the class of the last box containing each voxel
    /// center (objects are placed after the room shell, so they win).
    pub fn labels(&self, grid: &GridSpec) -> LabelVolume {
        let mut labels = vec![0u8; grid.len()];
        for idx in grid.indices() {
            let center = grid.voxel_to_world(idx).expect("index from iterator");
            for b in &self.boxes {
                if b.contains(center) {
                    labels[grid.linear(idx)] = b.class;
                }
            }
        }
        LabelVolume::new(*grid, labels).expect("classes from the table")
    }
}

/// Z-depth render of the geometry: per pixel, the camera-space depth of the
/// nearest intersection, 0 where the ray escapes.
pub fn render_depth(geometry: &SceneGeometry, cam: &CameraModel) -> DepthImage {
    let (h, w) = cam.image_size;
    let mut depth = DepthImage::zeros(h, w);
    for v in 0..h {
        for u in 0..w {
            let dir = cam.pixel_ray(u as f64, v as f64);
            if let Some((t, _)) = geometry.hit(cam.translation, dir) {
                depth.set(v, u, t as f32);
            }
        }
    }
    depth
}

/// One generated sample with everything downstream modules need.
#[derive(Debug, Clone)]
pub struct SceneSample {
    pub gt: LabelVolume,
    pub depth: DepthImage,
    pub feat: FeatureImage,
    pub cam: CameraModel,
    pub tsdf: TsdfVolume,
    pub rf1: FeatureVolume,
    pub counts: CountVolume,
    pub geometry: SceneGeometry,
    /// Classes of the placed boxes (excluding floor and wall).
    pub object_classes: Vec<u8>,
}

fn default_camera(spec: &SceneSpec) -> Result<CameraModel> {
    let e = [
        spec.grid.dims[0] as f64 * spec.grid.voxel_size as f64,
        spec.grid.dims[1] as f64 * spec.grid.voxel_size as f64,
        spec.grid.dims[2] as f64 * spec.grid.voxel_size as f64,
    ];
    let (h, w) = spec.image_size;
    CameraModel::axis_aligned(
        0.72 * w as f64,
        0.72 * h as f64,
        (w as f64 - 1.0) / 2.0,
        (h as f64 - 1.0) / 2.0,
        // fractional offsets keep rays off exact voxel boundaries
        [0.5306 * e[0], 0.5591 * e[1], -0.8037 * e[2]],
        (h, w),
    )
}

fn build_geometry(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<(SceneGeometry, Vec<u8>)> {
    let vs = spec.grid.voxel_size as f64;
    let e = [
        spec.grid.dims[0] as f64 * vs,
        spec.grid.dims[1] as f64 * vs,
        spec.grid.dims[2] as f64 * vs,
    ];
    let mut boxes = vec![
        SceneBox {
            min: [0.0, 0.0, 0.0],
            max: [e[0], vs, e[2]],
            class: FLOOR_CLASS,
        },
        SceneBox {
            min: [0.0, 0.0, e[2] - vs],
            max: [e[0], e[1], e[2]],
            class: WALL_CLASS,
        },
    ];
    let n = rng.random_range(spec.object_count.0..=spec.object_count.1);
    let mut placed = Vec::new();
    // cap sizes so boxes stay placeable on small grids
    let size_range = |extent: f64| {
        let lo = 3.0 * vs;
        let hi = (7.0 * vs).min(0.42 * extent).max(lo * 1.05);
        lo..hi
    };
    for _ in 0..n {
        let mut ok = false;
        for _ in 0..100 {
            let size = [
                rng.random_range(size_range(e[0])),
                rng.random_range(size_range(e[1])),
                rng.random_range(size_range(e[2])),
            ];
            let max_pos = [
                e[0] - vs - size[0],
                0.65 * e[1] - size[1],
                e[2] - 2.0 * vs - size[2],
            ];
            if max_pos[0] <= vs || max_pos[1] <= vs || max_pos[2] <= 0.15 * e[2] {
                continue;
            }
            let min = [
                rng.random_range(vs..max_pos[0]),
                rng.random_range(vs..max_pos[1]),
                rng.random_range(0.15 * e[2]..max_pos[2]),
            ];
            let class = OBJECT_CLASSES[rng.random_range(0..OBJECT_CLASSES.len())];
            let candidate = SceneBox {
                min,
                max: [min[0] + size[0], min[1] + size[1], min[2] + size[2]],
                class,
            };
            if boxes[2..].iter().any(|b| b.overlaps(&candidate)) {
                continue;
            }
            placed.push(class);
            boxes.push(candidate);
            ok = true;
            break;
        }
        if !ok {
            return Err(Error::Generation(
                "could not place a non-overlapping box after 100 retries".into(),
            ));
        }
    }
    Ok((SceneGeometry { boxes }, placed))
}

/// Generate one scene. Deterministic in `(spec, seed)`.
pub fn make_scene(spec: &SceneSpec, seed: u64) -> Result<SceneSample> {
    spec.validate()?;
    let cam = default_camera(spec)?;
    for attempt in 0..100u64 {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E3779B97F4A7C15)));
        let (geometry, object_classes) = match build_geometry(spec, &mut rng) {
            Ok(g) => g,
            Err(Error::Generation(_)) => continue,
            Err(e) => return Err(e),
        };
        let gt = geometry.labels(&spec.grid);
        let depth = render_depth(&geometry, &cam);

        let (h, w) = spec.image_size;
        let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
        let mut feat = FeatureImage::zeros(spec.feature_dim, h, w);
        for v in 0..h {
            for u in 0..w {
                let dir = cam.pixel_ray(u as f64, v as f64);
                if let Some((_, bi)) = geometry.hit(cam.translation, dir) {
                    let proto = &spec.palette[geometry.boxes[bi].class as usize];
                    for c in 0..spec.feature_dim {
                        let value = proto[c] as f64 + noise.sample(&mut rng);
                        feat.set(c, v, u, value as f32);
                    }
                }
            }
        }

        let tsdf = match tsdf_encode(&depth, &cam, &spec.grid, spec.truncation) {
            Ok(t) => t,
            Err(Error::EmptyScene) => continue,
            Err(e) => return Err(e),
        };
        let (rf1, counts) = project_features(&feat, &depth, &cam, &spec.grid)?;

        if scene_is_valid(&gt, &tsdf, &counts, &object_classes) {
            return Ok(SceneSample {
                gt,
                depth,
                feat,
                cam,
                tsdf,
                rf1,
                counts,
                geometry,
                object_classes,
            });
        }
    }
    Err(Error::Generation(format!(
        "no valid scene for seed {seed} after 100 attempts"
    )))
}

/// Every placed object class needs a visible-surface voxel and an occluded
/// voxel, and projected features may only land outside occluded space.
fn scene_is_valid(
    gt: &LabelVolume,
    tsdf: &TsdfVolume,
    counts: &CountVolume,
    object_classes: &[u8],
) -> bool {
    let vis = tsdf.visibility();
    for (&count, &v) in counts.values().iter().zip(vis.values()) {
        if count > 0 && v == Visibility::Occluded {
            return false;
        }
    }
    for &c in object_classes {
        let mut has_surface = false;
        let mut has_occluded = false;
        for (&label, &v) in gt.values().iter().zip(vis.values()) {
            if label != c {
                continue;
            }
            match v {
                Visibility::Surface => has_surface = true,
                Visibility::Occluded => has_occluded = true,
                _ => {}
            }
            if has_surface && has_occluded {
                break;
            }
        }
        if !(has_surface && has_occluded) {
            return false;
        }
    }
    true
}

/// A generated dataset with its deterministic 80/20 train/val split.
#[derive(Debug, Clone)]
pub struct SceneDataset {
    pub samples: Vec<SceneSample>,
    pub train_count: usize,
}

impl SceneDataset {
    pub fn train(&self) -> &[SceneSample] {
        &self.samples[..self.train_count]
    }

    pub fn val(&self) -> &[SceneSample] {
        &self.samples[self.train_count..]
    }
}

/// Generate `n` scenes seeded `seed`, `seed + 1`, ...; the first 80% are
/// the training split.
pub fn make_dataset(spec: &SceneSpec, n: usize, seed: u64) -> Result<SceneDataset> {
    if n == 0 {
        return Err(Error::Generation("dataset needs at least one sample".into()));
    }
    let samples: Vec<SceneSample> = (0..n)
        .map(|i| make_scene(spec, seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    Ok(SceneDataset {
        samples,
        train_count: n * 8 / 10,
    })
}
