//! Prediction targets shared by every stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of predicted complications (one logit each).
pub const N_LABELS: usize = 3;

/// A 0/1 vector in [`Complication::ALL`] order.
pub type LabelVector = [u8; N_LABELS];

/// Microvascular complications, in label-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Complication {
    Nephropathy,
    Retinopathy,
    Neuropathy,
}

impl Complication {
    pub const ALL: [Complication; N_LABELS] = [
        Complication::Nephropathy,
        Complication::Retinopathy,
        Complication::Neuropathy,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Complication::Nephropathy => "nephropathy",
            Complication::Retinopathy => "retinopathy",
            Complication::Neuropathy => "neuropathy",
        }
    }
}

impl fmt::Display for Complication {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Complication {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Complication::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown complication {s:?}"))
    }
}

/// Prediction horizons, in years after the index date.
pub const WINDOWS: [u32; 3] = [1, 5, 10];
