//! Bit-exact volume serialization (the VGRID format) and 16-bit depth PNGs.
//!
//! VGRID layout, little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "VGRD"
//! 4       2     version, u16 = 1
//! 6       1     kind: 0 = feature f32, 1 = label u8, 2 = tsdf f32, 3 = prob f32
//! 7       4     channels, u32
//! 11      12    dims, 3 x u32 (X, Y, Z)
//! 23      4     voxel_size, f32
//! 27      12    origin, 3 x f32
//! 39      ...   payload, channel-major then X-major (z fastest)
//! ```
//!
//! Label volumes always carry one channel of u8; the other kinds carry f32.
//! Writes go through a temp file and a rename so readers never observe a
//! half-written volume.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{FeatureVolume, GridSpec, LabelVolume};

const MAGIC: [u8; 4] = *b"VGRD";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 39;

const OFF_MAGIC: u64 = 0;
const OFF_VERSION: u64 = 4;
const OFF_KIND: u64 = 6;
const OFF_CHANNELS: u64 = 7;
const OFF_DIMS: u64 = 11;
const OFF_VOXEL_SIZE: u64 = 23;
const OFF_PAYLOAD: u64 = 39;

/// A volume as stored on disk. Typed wrappers convert to and from the
/// in-memory volume types.
#[derive(Debug, Clone, PartialEq)]
pub enum VgridVolume {
    Feature {
        channels: usize,
        spec: GridSpec,
        data: Vec<f32>,
    },
    Label {
        spec: GridSpec,
        data: Vec<u8>,
    },
    Tsdf {
        spec: GridSpec,
        data: Vec<f32>,
    },
    Prob {
        channels: usize,
        spec: GridSpec,
        data: Vec<f32>,
    },
}

impl VgridVolume {
    pub fn kind(&self) -> u8 {
        match self {
            VgridVolume::Feature { .. } => 0,
            VgridVolume::Label { .. } => 1,
            VgridVolume::Tsdf { .. } => 2,
            VgridVolume::Prob { .. } => 3,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            VgridVolume::Feature { channels, .. } | VgridVolume::Prob { channels, .. } => {
                *channels
            }
            VgridVolume::Label { .. } | VgridVolume::Tsdf { .. } => 1,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        match self {
            VgridVolume::Feature { spec, .. }
            | VgridVolume::Label { spec, .. }
            | VgridVolume::Tsdf { spec, .. }
            | VgridVolume::Prob { spec, .. } => spec,
        }
    }

    pub fn from_feature(v: &FeatureVolume) -> Self {
        VgridVolume::Feature {
            channels: v.channels(),
            spec: *v.spec(),
            data: v.data().to_vec(),
        }
    }

    pub fn from_labels(v: &LabelVolume) -> Self {
        VgridVolume::Label {
            spec: *v.spec(),
            data: v.values().to_vec(),
        }
    }

    pub fn into_feature(self) -> Result<FeatureVolume> {
        match self {
            VgridVolume::Feature {
                channels,
                spec,
                data,
            } => FeatureVolume::new(spec, channels, data),
            other => Err(Error::Shape(format!(
                "expected a feature volume, found kind {}",
                other.kind()
            ))),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        match self {
            VgridVolume::Label { spec, data } => LabelVolume::new(spec, data),
            other => Err(Error::Shape(format!(
                "expected a label volume, found kind {}",
                other.kind()
            ))),
        }
    }
}

/// Serialize a volume to `path`, atomically.
pub fn save_volume(path: &Path, volume: &VgridVolume) -> Result<()> {
    let spec = volume.spec();
    let mut buf = Vec::with_capacity(HEADER_LEN);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(volume.kind());
    buf.extend_from_slice(&(volume.channels() as u32).to_le_bytes());
    for d in spec.dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&spec.voxel_size.to_le_bytes());
    for o in spec.origin {
        buf.extend_from_slice(&o.to_le_bytes());
    }
    match volume {
        VgridVolume::Label { data, .. } => buf.extend_from_slice(data),
        VgridVolume::Feature { data, .. }
        | VgridVolume::Tsdf { data, .. }
        | VgridVolume::Prob { data, .. } => {
            buf.reserve(data.len() * 4);
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    write_atomic(path, &buf)
}

/// Write `bytes` to `path` via a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Deserialize a volume from `path`.
pub fn load_volume(path: &Path) -> Result<VgridVolume> {
    let bytes = fs::read(path)?;
    parse_volume(&bytes)
}

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

/// Parse a VGRID byte buffer.
pub fn parse_volume(bytes: &[u8]) -> Result<VgridVolume> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            bytes.len() as u64,
            format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes[0..4] != MAGIC {
        return Err(format_err(OFF_MAGIC, "bad magic, expected \"VGRD\""));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(format_err(
            OFF_VERSION,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let kind = bytes[6];
    if kind > 3 {
        return Err(format_err(OFF_KIND, format!("unknown volume kind {kind}")));
    }
    let channels = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    if channels == 0 {
        return Err(format_err(OFF_CHANNELS, "channels must be >= 1"));
    }
    if (kind == 1 || kind == 2) && channels != 1 {
        return Err(format_err(
            OFF_CHANNELS,
            format!("kind {kind} requires exactly 1 channel, header says {channels}"),
        ));
    }
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        let off = 11 + 4 * a;
        *d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if *d == 0 {
            return Err(format_err(OFF_DIMS + 4 * a as u64, "dimension must be >= 1"));
        }
    }
    let voxel_size = f32::from_le_bytes(bytes[23..27].try_into().unwrap());
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return Err(format_err(
            OFF_VOXEL_SIZE,
            format!("voxel_size must be positive and finite, got {voxel_size}"),
        ));
    }
    let mut origin = [0f32; 3];
    for (a, o) in origin.iter_mut().enumerate() {
        let off = 27 + 4 * a;
        *o = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    }
    let spec = GridSpec::new(dims, voxel_size, origin)?;

    let voxels = spec.len();
    let value_size = if kind == 1 { 1 } else { 4 };
    let expected = channels * voxels * value_size;
    let actual = bytes.len() - HEADER_LEN;
    if actual != expected {
        return Err(format_err(
            OFF_PAYLOAD,
            format!("payload has {actual} bytes, header claims {expected}"),
        ));
    }
    let payload = &bytes[HEADER_LEN..];
    Ok(match kind {
        1 => VgridVolume::Label {
            spec,
            data: payload.to_vec(),
        },
        _ => {
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            match kind {
                0 => VgridVolume::Feature {
                    channels,
                    spec,
                    data,
                },
                2 => VgridVolume::Tsdf { spec, data },
                _ => VgridVolume::Prob {
                    channels,
                    spec,
                    data,
                },
            }
        }
    })
}

/// Read a depth image stored as 16-bit grayscale PNG, millimeters per unit,
/// 0 marking invalid pixels. Returns meters.
pub fn read_depth_png(path: &Path) -> Result<crate::tsdf::DepthImage> {
    let img = image::ImageReader::open(path)?
        .decode()
        .map_err(Error::Image)?;
    let gray = match img {
        image::DynamicImage::ImageLuma16(g) => g,
        other => {
            return Err(format_err(
                0,
                format!(
                    "depth PNG must be 16-bit grayscale, got {:?}",
                    other.color()
                ),
            ))
        }
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data: Vec<f32> = gray.pixels().map(|p| p.0[0] as f32 / 1000.0).collect();
    crate::tsdf::DepthImage::new(h, w, data)
}

/// Write a depth image as 16-bit grayscale PNG, millimeters per unit.
pub fn write_depth_png(path: &Path, depth: &crate::tsdf::DepthImage) -> Result<()> {
    let (h, w) = (depth.height(), depth.width());
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for v in 0..h {
        for u in 0..w {
            let mm = (depth.get(v, u) as f64 * 1000.0).round();
            let mm = mm.clamp(0.0, u16::MAX as f64) as u16;
            img.put_pixel(u as u32, v as u32, image::Luma([mm]));
        }
    }
    let mut bytes: Vec<u8> = Vec::new();
    img.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )
    .map_err(Error::Image)?;
    write_atomic(path, &bytes)
}
