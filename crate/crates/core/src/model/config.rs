use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::data::SampleSpec;
use crate::error::{Error, Result};

/// Ablation ladder, from the plain local network up to the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    /// Local CNN and short-term LSTM only.
    Lstn,
    /// LSTN with the raw flow stack appended to the spatial features.
    LstnFi,
    /// LSTN with flow gating.
    LstnFgm,
    /// LSTN whose single LSTM also reads the same-clock interval of previous days.
    LstnL,
    /// Separate long-term LSTMs over the same-clock interval only (`Q = 1`), no attention.
    LstnSl,
    /// Periodically shifted attention without flow gating.
    LstnPsam,
    /// Flow gating plus periodically shifted attention.
    Stdn,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Lstn,
        Variant::LstnFi,
        Variant::LstnFgm,
        Variant::LstnL,
        Variant::LstnSl,
        Variant::LstnPsam,
        Variant::Stdn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lstn => "LSTN",
            Variant::LstnFi => "LSTN-FI",
            Variant::LstnFgm => "LSTN-FGM",
            Variant::LstnL => "LSTN-L",
            Variant::LstnSl => "LSTN-SL",
            Variant::LstnPsam => "LSTN-PSAM",
            Variant::Stdn => "STDN",
        }
    }

    pub fn gated(self) -> bool {
        matches!(self, Variant::LstnFgm | Variant::Stdn)
    }

    pub fn flow_features(self) -> bool {
        self == Variant::LstnFi
    }

    pub fn long_path(self) -> LongPath {
        match self {
            Variant::Lstn | Variant::LstnFi | Variant::LstnFgm => LongPath::None,
            Variant::LstnL => LongPath::Concatenated,
            Variant::LstnSl => LongPath::Recurrent { attention: false },
            Variant::LstnPsam | Variant::Stdn => LongPath::Recurrent { attention: true },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LongPath {
    None,
    Concatenated,
    Recurrent { attention: bool },
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::config(format!("unknown variant `{s}`")))
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub patch_size: usize,
    pub conv_layers: usize,
    pub filters: usize,
    pub kernel_size: usize,
    pub flow_lookback: usize,
    pub short_len: usize,
    pub days: usize,
    pub shifts: usize,
    pub hidden: usize,
    pub lambda: f64,
    pub dropout: f64,
    #[serde(default)]
    pub externals_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Stdn,
            patch_size: 7,
            conv_layers: 3,
            filters: 64,
            kernel_size: 3,
            flow_lookback: 2,
            short_len: 7,
            days: 3,
            shifts: 3,
            hidden: 128,
            lambda: 0.5,
            dropout: 0.5,
            externals_dim: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size % 2 == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::config("patch and kernel sizes must be odd"));
        }
        if self.shifts % 2 == 0 {
            return Err(Error::config(format!("shift count Q must be odd, got {}", self.shifts)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if [
            self.conv_layers,
            self.filters,
            self.flow_lookback,
            self.short_len,
            self.days,
            self.shifts,
            self.hidden,
        ]
        .contains(&0)
        {
            return Err(Error::config("all layer sizes and window lengths must be >= 1"));
        }
        Ok(())
    }

    pub fn sample_spec(&self, intervals_per_day: usize) -> SampleSpec {
        SampleSpec {
            patch_size: self.patch_size,
            flow_lookback: self.flow_lookback,
            short_len: self.short_len,
            days: self.days,
            shifts: self.shifts,
            intervals_per_day,
            externals_dim: self.externals_dim,
        }
    }

    /// Overlay keys present in `cfg` onto `self`.
    pub fn apply_kv(&mut self, cfg: &KvConfig) -> Result<()> {
        if let Some(v) = cfg.get::<String>("variant")? {
            self.variant = v.parse()?;
        }
        self.patch_size = cfg.get_or("patch_size", self.patch_size)?;
        self.conv_layers = cfg.get_or("conv_layers", self.conv_layers)?;
        self.filters = cfg.get_or("filters", self.filters)?;
        self.kernel_size = cfg.get_or("kernel_size", self.kernel_size)?;
        self.flow_lookback = cfg.get_or("flow_lookback", self.flow_lookback)?;
        self.short_len = cfg.get_or("short_len", self.short_len)?;
        self.days = cfg.get_or("days", self.days)?;
        self.shifts = cfg.get_or("shifts", self.shifts)?;
        self.hidden = cfg.get_or("hidden", self.hidden)?;
        self.lambda = cfg.get_or("lambda", self.lambda)?;
        self.dropout = cfg.get_or("dropout", self.dropout)?;
        self.validate()
    }
}
