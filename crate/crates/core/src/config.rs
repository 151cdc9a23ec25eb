//! Flat `key = value` run configuration. Blank lines and `#` comments are
//! ignored; unknown keys, repeated keys and unparsable values are errors
//! naming the key.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fit::FitConfig;
use crate::occlusion::{InpaintConfig, DEFAULT_DILATE_PX, DEFAULT_EYEGLASS_CLASS};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub inpaint: InpaintConfig,
    pub eyeglass_class: u8,
    pub dilate_px: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            fit: FitConfig::default(),
            inpaint: InpaintConfig::default(),
            eyeglass_class: DEFAULT_EYEGLASS_CLASS,
            dilate_px: DEFAULT_DILATE_PX,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::format(key, format!("cannot parse {value:?}: {e}")))
}

impl RunConfig {
    pub const KEYS: [&'static str; 23] = [
        "landmark_iters",
        "landmark_tol",
        "lm_damping",
        "photo_iters",
        "appearance_iters",
        "photo_tol",
        "refresh_every",
        "max_shift_px",
        "lbfgs_memory",
        "reg_id",
        "reg_exp",
        "reg_tex",
        "embed_size",
        "lambda_pixe",
        "lambda_style",
        "lambda_var",
        "lambda_1",
        "lambda_2",
        "eyeglass_class",
        "dilate_px",
        "inpaint_iters",
        "inpaint_step",
        "inpaint_tol",
    ];

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let fit = &mut self.fit;
        match key {
            "landmark_iters" => fit.landmark_iters = parse_value(key, v)?,
            "landmark_tol" => fit.landmark_tol = parse_value(key, v)?,
            "lm_damping" => fit.lm_damping = parse_value(key, v)?,
            "photo_iters" => fit.photo_iters = parse_value(key, v)?,
            "appearance_iters" => fit.appearance_iters = parse_value(key, v)?,
            "photo_tol" => fit.photo_tol = parse_value(key, v)?,
            "refresh_every" => fit.refresh_every = parse_value(key, v)?,
            "max_shift_px" => fit.max_shift_px = parse_value(key, v)?,
            "lbfgs_memory" => fit.lbfgs_memory = parse_value(key, v)?,
            "reg_id" => fit.reg_id = parse_value(key, v)?,
            "reg_exp" => fit.reg_exp = parse_value(key, v)?,
            "reg_tex" => fit.reg_tex = parse_value(key, v)?,
            "embed_size" => fit.embed_size = parse_value(key, v)?,
            "lambda_pixe" => fit.weights.lambda_pixe = parse_value(key, v)?,
            "lambda_style" => fit.weights.lambda_style = parse_value(key, v)?,
            "lambda_var" => fit.weights.lambda_var = parse_value(key, v)?,
            "lambda_1" => fit.weights.lambda_1 = parse_value(key, v)?,
            "lambda_2" => fit.weights.lambda_2 = parse_value(key, v)?,
            "eyeglass_class" => self.eyeglass_class = parse_value(key, v)?,
            "dilate_px" => self.dilate_px = parse_value(key, v)?,
            "inpaint_iters" => self.inpaint.iters = parse_value(key, v)?,
            "inpaint_step" => self.inpaint.step = parse_value(key, v)?,
            "inpaint_tol" => self.inpaint.tol = parse_value(key, v)?,
            _ => return Err(Error::format(key, "unknown configuration key")),
        }
        Ok(())
    }

    /// Starts from the defaults and applies every line of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("line {}", n + 1), format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(Error::format(key, "repeated key"));
            }
            cfg.set(key, value)?;
            seen.push(key);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.fit.weights;
        for (key, v) in [
            ("lambda_pixe", w.lambda_pixe),
            ("lambda_style", w.lambda_style),
            ("lambda_var", w.lambda_var),
            ("lambda_1", w.lambda_1),
            ("lambda_2", w.lambda_2),
            ("inpaint_tol", self.inpaint.tol),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::format(key, format!("must be nonnegative, got {v}")));
            }
        }
        if self.inpaint.iters == 0 {
            return Err(Error::format("inpaint_iters", "must be positive"));
        }
        if !(self.inpaint.step > 0.0 && self.inpaint.step <= 1.0) {
            return Err(Error::format("inpaint_step", format!("must lie in (0, 1], got {}", self.inpaint.step)));
        }
        self.fit.validate()
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let f = &self.fit;
        let w = &f.weights;
        let values: [String; 23] = [
            f.landmark_iters.to_string(),
            f.landmark_tol.to_string(),
            f.lm_damping.to_string(),
            f.photo_iters.to_string(),
            f.appearance_iters.to_string(),
            f.photo_tol.to_string(),
            f.refresh_every.to_string(),
            f.max_shift_px.to_string(),
            f.lbfgs_memory.to_string(),
            f.reg_id.to_string(),
            f.reg_exp.to_string(),
            f.reg_tex.to_string(),
            f.embed_size.to_string(),
            w.lambda_pixe.to_string(),
            w.lambda_style.to_string(),
            w.lambda_var.to_string(),
            w.lambda_1.to_string(),
            w.lambda_2.to_string(),
            self.eyeglass_class.to_string(),
            self.dilate_px.to_string(),
            self.inpaint.iters.to_string(),
            self.inpaint.step.to_string(),
            self.inpaint.tol.to_string(),
        ];
        let mut s = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
