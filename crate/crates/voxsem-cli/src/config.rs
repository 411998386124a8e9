//! Flat `key = value` configuration files.
//!
//! Lines are `key = value`, `#` starts a comment, blank lines are ignored.
//! Every command rejects keys it does not know and writes the resolved
//! configuration (after CLI and environment overrides) beside its outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use voxsem_core::camera::CameraModel;
use voxsem_core::error::{Error, Result};
use voxsem_core::grid::GridSpec;

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Domain(format!(
                    "config line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if values.insert(key.clone(), value).is_some() {
                return Err(Error::Domain(format!(
                    "config line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Reject keys outside the allowed set.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.values.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Domain(format!(
                    "unknown config key `{key}`; allowed keys: {}",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse().map_err(|_| {
            Error::Domain(format!(
                "config key `{key}`: cannot parse `{raw}` as {}",
                std::any::type_name::<T>()
            ))
        })
    }

    pub fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => self.parse_as(key, raw),
        }
    }

    pub fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        match self.get(key) {
            None => Err(Error::Domain(format!("config key `{key}` is required"))),
            Some(raw) => self.parse_as(key, raw),
        }
    }

    pub fn get_list<T: std::str::FromStr>(&self, key: &str, n: usize) -> Result<Option<Vec<T>>> {
        let Some(raw) = self.get(key) else {
            return Ok(None);
        };
        let parts: Vec<&str> = raw.split(',').map(|p| p.trim()).collect();
        if parts.len() != n {
            return Err(Error::Domain(format!(
                "config key `{key}`: expected {n} comma-separated values, got {}",
                parts.len()
            )));
        }
        let mut out = Vec::with_capacity(n);
        for p in parts {
            out.push(self.parse_as(key, p)?);
        }
        Ok(Some(out))
    }

    /// Canonical text of the resolved configuration, keys sorted.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

pub const GRID_KEYS: &[&str] = &["dims", "voxel_size", "origin"];

/// Grid spec from a config: `dims = X,Y,Z`, `voxel_size = m`,
/// `origin = x,y,z` (default zeros).
pub fn grid_from_config(cfg: &Config) -> Result<GridSpec> {
    cfg.check_keys(GRID_KEYS)?;
    let dims = cfg
        .get_list::<usize>("dims", 3)?
        .ok_or_else(|| Error::Domain("grid config needs `dims = X,Y,Z`".into()))?;
    let voxel_size: f32 = cfg.require("voxel_size")?;
    let origin = cfg
        .get_list::<f32>("origin", 3)?
        .unwrap_or_else(|| vec![0.0; 3]);
    GridSpec::new(
        [dims[0], dims[1], dims[2]],
        voxel_size,
        [origin[0], origin[1], origin[2]],
    )
}

pub const CAMERA_KEYS: &[&str] = &[
    "fx", "fy", "cx", "cy", "width", "height", "rotation", "translation",
];

/// Camera from a config: intrinsics plus optional `rotation` (9 values,
/// row-major world-from-camera, default identity) and `translation`
/// (3 values, default zeros).
pub fn camera_from_config(cfg: &Config) -> Result<CameraModel> {
    cfg.check_keys(CAMERA_KEYS)?;
    let fx: f64 = cfg.require("fx")?;
    let fy: f64 = cfg.require("fy")?;
    let cx: f64 = cfg.require("cx")?;
    let cy: f64 = cfg.require("cy")?;
    let width: usize = cfg.require("width")?;
    let height: usize = cfg.require("height")?;
    let rot = cfg.get_list::<f64>("rotation", 9)?.unwrap_or_else(|| {
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
    });
    let t = cfg
        .get_list::<f64>("translation", 3)?
        .unwrap_or_else(|| vec![0.0; 3]);
    CameraModel::new(
        fx,
        fy,
        cx,
        cy,
        [
            [rot[0], rot[1], rot[2]],
            [rot[3], rot[4], rot[5]],
            [rot[6], rot[7], rot[8]],
        ],
        [t[0], t[1], t[2]],
        (height, width),
    )
}

/// Camera serialized back to config text.
pub fn camera_to_config(cam: &CameraModel) -> Config {
    let mut cfg = Config::default();
    cfg.set("fx", cam.fx);
    cfg.set("fy", cam.fy);
    cfg.set("cx", cam.cx);
    cfg.set("cy", cam.cy);
    cfg.set("width", cam.image_size.1);
    cfg.set("height", cam.image_size.0);
    let r = cam.rotation;
    cfg.set(
        "rotation",
        format!(
            "{},{},{},{},{},{},{},{},{}",
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]
        ),
    );
    cfg.set(
        "translation",
        format!(
            "{},{},{}",
            cam.translation[0], cam.translation[1], cam.translation[2]
        ),
    );
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let cfg = Config::parse("a = 1\n# comment\nb = 2,3 # inline\n").unwrap();
        assert_eq!(cfg.get("a"), Some("1"));
        assert_eq!(cfg.get("b"), Some("2,3"));
        assert!(cfg.check_keys(&["a", "b"]).is_ok());
        assert!(cfg.check_keys(&["a"]).is_err());
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        assert!(Config::parse("a = 1\na = 2\n").is_err());
    }

    #[test]
    fn grid_round_trip() {
        let cfg = Config::parse("dims = 16,16,16\nvoxel_size = 0.1\norigin = 0,0,0\n").unwrap();
        let spec = grid_from_config(&cfg).unwrap();
        assert_eq!(spec.dims, [16, 16, 16]);
    }

    #[test]
    fn camera_round_trip() {
        let cam = CameraModel::axis_aligned(24.0, 24.0, 15.5, 15.5, [0.8, 0.9, -1.3], (32, 32))
            .unwrap();
        let text = camera_to_config(&cam).resolved_text();
        let back = camera_from_config(&Config::parse(&text).unwrap()).unwrap();
        assert_eq!(cam, back);
    }
}
