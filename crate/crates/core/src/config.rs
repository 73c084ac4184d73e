//! Tracker configuration in flat `key = value` form.
//!
//! ```text
//! preset = desk            # or `full`; applied before the other keys
//! channels = 32
//! seq_len = 240
//! embed_dim = 16
//! state_size = 16
//! blocks = 2
//! heads = 2
//! strides = 8,16,32
//! template_size = 64
//! search_size = 128
//! fusion_grid = 3
//! weight_seed = 7
//! confidence_threshold = 0.5
//! mode = oracle
//! ```

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv;
use crate::pyramid::{BackboneMode, Stage, Strides};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackerMode {
    /// Pass-through features, zeroed residual projections and a
    /// correlation score head: localization is exact up to the grid.
    Oracle,
    /// Seeded random weights everywhere; exercises the full network.
    Seeded,
}

impl TrackerMode {
    pub fn backbone(self) -> BackboneMode {
        match self {
            TrackerMode::Oracle => BackboneMode::Oracle,
            TrackerMode::Seeded => BackboneMode::Seeded,
        }
    }
}

impl FromStr for TrackerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(TrackerMode::Oracle),
            "seeded" => Ok(TrackerMode::Seeded),
            other => Err(Error::Config(format!("unknown mode `{other}`, expected oracle or seeded"))),
        }
    }
}

impl fmt::Display for TrackerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrackerMode::Oracle => "oracle",
            TrackerMode::Seeded => "seeded",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub channels: usize,
    pub seq_len: usize,
    pub embed_dim: usize,
    pub state_size: usize,
    pub blocks: usize,
    pub heads: usize,
    pub strides: Strides,
    pub template_size: usize,
    pub search_size: usize,
    /// Stage whose lattice carries the fused prediction map.
    pub fusion_grid: Stage,
    pub weight_seed: u64,
    /// Fused scores below this mark a frame as low-confidence.
    pub confidence_threshold: f64,
    pub mode: TrackerMode,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrackerConfig {
    /// Full-size network: C = 256, L = 240, d = 128, N = 16, K = 6.
    pub fn full() -> Self {
        Self {
            channels: 256,
            seq_len: 240,
            embed_dim: 128,
            state_size: 16,
            blocks: 6,
            heads: 8,
            strides: Strides::default(),
            template_size: 128,
            search_size: 256,
            fusion_grid: Stage::S3,
            weight_seed: 7,
            confidence_threshold: 0.5,
            mode: TrackerMode::Oracle,
        }
    }

    /// Narrow network and half-size crops for CPU runs.
    pub fn desk() -> Self {
        Self {
            channels: 32,
            embed_dim: 16,
            blocks: 2,
            heads: 2,
            template_size: 64,
            search_size: 128,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("seq_len", self.seq_len),
            ("embed_dim", self.embed_dim),
            ("state_size", self.state_size),
            ("heads", self.heads),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "channels ({}) must be divisible by heads ({})",
                self.channels, self.heads
            )));
        }
        let s = self.strides.0;
        if s[0] == 0 || !(s[0] < s[1] && s[1] < s[2]) {
            return Err(Error::Config(format!("strides must be positive and increasing, got {s:?}")));
        }
        if self.search_size < self.template_size {
            return Err(Error::Config("search_size must be at least template_size".into()));
        }
        for stage in Stage::ALL {
            let stride = self.strides.of(stage);
            for (name, size) in [("template_size", self.template_size), ("search_size", self.search_size)] {
                if size == 0 || size % stride != 0 {
                    return Err(Error::Config(format!(
                        "{name} {size} is not a multiple of stage {} stride {stride}",
                        stage.number()
                    )));
                }
            }
            if self.mode == TrackerMode::Oracle && (self.template_size / stride) % 2 != 0 {
                return Err(Error::Config(format!(
                    "oracle mode needs an even template grid; stage {} gives {}",
                    stage.number(),
                    self.template_size / stride
                )));
            }
        }
        if !self.confidence_threshold.is_finite() {
            return Err(Error::Config("confidence_threshold must be finite".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = kv::entries(text)?;
        let mut cfg = match entries.iter().find(|(k, _, _)| *k == "preset") {
            Some((_, "full", _)) => Self::full(),
            Some((_, "desk", _)) | None => Self::desk(),
            Some((_, other, line)) => {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("unknown preset `{other}`"),
                })
            }
        };
        for (key, value, line) in entries {
            let int = || kv::parse_usize(value, line);
            match key {
                "preset" => {}
                "channels" => cfg.channels = int()?,
                "seq_len" => cfg.seq_len = int()?,
                "embed_dim" => cfg.embed_dim = int()?,
                "state_size" => cfg.state_size = int()?,
                "blocks" => cfg.blocks = int()?,
                "heads" => cfg.heads = int()?,
                "template_size" => cfg.template_size = int()?,
                "search_size" => cfg.search_size = int()?,
                "weight_seed" => cfg.weight_seed = kv::parse_u64(value, line)?,
                "confidence_threshold" => cfg.confidence_threshold = kv::parse_f64(value, line)?,
                "strides" => {
                    let parts: Vec<usize> = value
                        .split(',')
                        .map(|p| kv::parse_usize(p.trim(), line))
                        .collect::<Result<_>>()?;
                    let arr: [usize; 3] = parts.try_into().map_err(|_| Error::Parse {
                        line,
                        message: "strides needs exactly three values".into(),
                    })?;
                    cfg.strides = Strides(arr);
                }
                "fusion_grid" => {
                    let n = kv::parse_usize(value, line)?;
                    cfg.fusion_grid = u8::try_from(n)
                        .ok()
                        .and_then(|n| Stage::from_number(n).ok())
                        .ok_or_else(|| Error::Parse {
                            line,
                            message: format!("fusion_grid must be 3, 4 or 5, got {n}"),
                        })?;
                }
                "mode" => {
                    cfg.mode = value.parse().map_err(|e: Error| Error::Parse {
                        line,
                        message: e.to_string(),
                    })?
                }
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown config key `{other}`"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let s = self.strides.0;
        let mut out = String::new();
        let _ = writeln!(out, "channels = {}", self.channels);
        let _ = writeln!(out, "seq_len = {}", self.seq_len);
        let _ = writeln!(out, "embed_dim = {}", self.embed_dim);
        let _ = writeln!(out, "state_size = {}", self.state_size);
        let _ = writeln!(out, "blocks = {}", self.blocks);
        let _ = writeln!(out, "heads = {}", self.heads);
        let _ = writeln!(out, "strides = {},{},{}", s[0], s[1], s[2]);
        let _ = writeln!(out, "template_size = {}", self.template_size);
        let _ = writeln!(out, "search_size = {}", self.search_size);
        let _ = writeln!(out, "fusion_grid = {}", self.fusion_grid.number());
        let _ = writeln!(out, "weight_seed = {}", self.weight_seed);
        let _ = writeln!(out, "confidence_threshold = {}", self.confidence_threshold);
        let _ = writeln!(out, "mode = {}", self.mode);
        out
    }
}
