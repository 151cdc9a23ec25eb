//! The full unknown vector: identity (80), expression (64), texture (80),
//! lighting (9) and pose (6), 239 values in that order.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::model::{ShapeCoeffs, TextureCoeffs};
use crate::shading::LightingCoeffs;
use crate::{NUM_EXP, NUM_ID, NUM_PARAMS, NUM_SH, NUM_TEX};

pub const OFFSET_ID: usize = 0;
pub const OFFSET_EXP: usize = OFFSET_ID + NUM_ID;
pub const OFFSET_TEX: usize = OFFSET_EXP + NUM_EXP;
pub const OFFSET_SH: usize = OFFSET_TEX + NUM_TEX;
pub const OFFSET_POSE: usize = OFFSET_SH + NUM_SH;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub shape: ShapeCoeffs,
    pub texture: TextureCoeffs,
    pub gamma: LightingCoeffs,
    pub pose: Pose,
}

impl SceneParams {
    /// Zero coefficients under uniform unit light.
    pub fn neutral(pose: Pose) -> Self {
        SceneParams {
            shape: ShapeCoeffs::zeros(),
            texture: TextureCoeffs::zeros(),
            gamma: LightingCoeffs::uniform(),
            pose,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Error::check_len("alpha_id", NUM_ID, self.shape.alpha_id.len())?;
        Error::check_len("beta_exp", NUM_EXP, self.shape.beta_exp.len())?;
        Error::check_len("beta_tex", NUM_TEX, self.texture.beta_tex.len())?;
        if self.to_vec().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("scene parameters contain non-finite values".into()));
        }
        self.pose.validate()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(NUM_PARAMS);
        v.extend_from_slice(&self.shape.alpha_id);
        v.extend_from_slice(&self.shape.beta_exp);
        v.extend_from_slice(&self.texture.beta_tex);
        v.extend_from_slice(&self.gamma.0);
        let p = &self.pose;
        v.extend_from_slice(&[p.pitch, p.yaw, p.roll, p.f, p.t2d[0], p.t2d[1]]);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        Error::check_len("parameter vector", NUM_PARAMS, v.len())?;
        let p = &v[OFFSET_POSE..];
        Ok(SceneParams {
            shape: ShapeCoeffs {
                alpha_id: v[OFFSET_ID..OFFSET_EXP].to_vec(),
                beta_exp: v[OFFSET_EXP..OFFSET_TEX].to_vec(),
            },
            texture: TextureCoeffs {
                beta_tex: v[OFFSET_TEX..OFFSET_SH].to_vec(),
            },
            gamma: LightingCoeffs(v[OFFSET_SH..OFFSET_POSE].try_into().unwrap()),
            pose: Pose {
                pitch: p[0],
                yaw: p[1],
                roll: p[2],
                f: p[3],
                t2d: [p[4], p[5]],
            },
        })
    }

    /// `key = v1 v2 ...` lines for `alpha_id`, `beta_exp`, `beta_tex`,
    /// `gamma` and `pose` (pitch yaw roll f tx ty).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.pose;
        let pose = [p.pitch, p.yaw, p.roll, p.f, p.t2d[0], p.t2d[1]];
        for (key, vals) in [
            ("alpha_id", self.shape.alpha_id.as_slice()),
            ("beta_exp", self.shape.beta_exp.as_slice()),
            ("beta_tex", self.texture.beta_tex.as_slice()),
            ("gamma", self.gamma.0.as_slice()),
            ("pose", pose.as_slice()),
        ] {
            let joined: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{key} = {}", joined.join(" "));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields: [Option<Vec<f64>>; 5] = Default::default();
        const KEYS: [(&str, usize); 5] = [
            ("alpha_id", NUM_ID),
            ("beta_exp", NUM_EXP),
            ("beta_tex", NUM_TEX),
            ("gamma", NUM_SH),
            ("pose", 6),
        ];
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format("params", format!("missing '=' in {line:?}")))?;
            let key = key.trim();
            let slot = KEYS
                .iter()
                .position(|(k, _)| *k == key)
                .ok_or_else(|| Error::format(key, "unknown parameter key"))?;
            let vals = value
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(key, e.to_string()))?;
            if vals.len() != KEYS[slot].1 {
                return Err(Error::format(
                    key,
                    format!("expected {} values, got {}", KEYS[slot].1, vals.len()),
                ));
            }
            fields[slot] = Some(vals);
        }
        let mut flat = Vec::with_capacity(NUM_PARAMS);
        for (slot, (key, _)) in fields.iter_mut().zip(KEYS) {
            flat.extend(slot.take().ok_or_else(|| Error::format(key, "missing"))?);
        }
        let params = SceneParams::from_slice(&flat)?;
        params
            .validate()
            .map_err(|e| Error::format("pose", e.to_string()))?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
