use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Number of AASM sleep stages.
pub const NUM_STAGES: usize = 5;

/// AASM sleep stage. The discriminant is the class index used everywhere
/// (targets, logits, confusion matrices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SleepStage {
    W = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    R = 4,
}

impl SleepStage {
    pub const ALL: [SleepStage; NUM_STAGES] = [
        SleepStage::W,
        SleepStage::N1,
        SleepStage::N2,
        SleepStage::N3,
        SleepStage::R,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SleepStage::W => "W",
            SleepStage::N1 => "N1",
            SleepStage::N2 => "N2",
            SleepStage::N3 => "N3",
            SleepStage::R => "R",
        }
    }
}

impl fmt::Display for SleepStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SleepStage {
    type Err = Error;

    /// Accepts the short AASM tokens (`W`, `N1`, `N2`, `N3`, `R`) and a few
    /// common aliases (`WAKE`, `REM`). Case-insensitive.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let stage = match () {
            _ if t.eq_ignore_ascii_case("W") || t.eq_ignore_ascii_case("WAKE") => SleepStage::W,
            _ if t.eq_ignore_ascii_case("N1") => SleepStage::N1,
            _ if t.eq_ignore_ascii_case("N2") => SleepStage::N2,
            _ if t.eq_ignore_ascii_case("N3") => SleepStage::N3,
            _ if t.eq_ignore_ascii_case("R") || t.eq_ignore_ascii_case("REM") => SleepStage::R,
            _ => return Err(Error::UnknownStageToken(t.into())),
        };
        Ok(stage)
    }
}

/// Stage label as scored under Rechtschaffen & Kales, before AASM mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RawStage {
    W,
    N1,
    N2,
    N3,
    N4,
    R,
    Movement,
    Unknown,
}

impl RawStage {
    /// N4 merges into N3; movement and unknown epochs have no AASM stage.
    pub fn to_aasm(self) -> Option<SleepStage> {
        match self {
            RawStage::W => Some(SleepStage::W),
            RawStage::N1 => Some(SleepStage::N1),
            RawStage::N2 => Some(SleepStage::N2),
            RawStage::N3 | RawStage::N4 => Some(SleepStage::N3),
            RawStage::R => Some(SleepStage::R),
            RawStage::Movement | RawStage::Unknown => None,
        }
    }

    pub fn is_sleep(self) -> bool {
        matches!(
            self,
            RawStage::N1 | RawStage::N2 | RawStage::N3 | RawStage::N4 | RawStage::R
        )
    }

    /// Maps a Sleep-EDF annotation token (`"Sleep stage W"`, `"Sleep stage 4"`,
    /// `"Movement time"`, ...) or a short token (`"N4"`, `"MOVEMENT"`, `"?"`).
    pub fn from_token(token: &str) -> Result<Self, Error> {
        let t = token.trim();
        let body = t
            .strip_prefix("Sleep stage ")
            .or_else(|| t.strip_prefix("sleep stage "))
            .unwrap_or(t);
        let stage = match body {
            "W" | "w" | "Wake" | "WAKE" => RawStage::W,
            "1" | "N1" => RawStage::N1,
            "2" | "N2" => RawStage::N2,
            "3" | "N3" => RawStage::N3,
            "4" | "N4" => RawStage::N4,
            "R" | "REM" => RawStage::R,
            "Movement time" | "MOVEMENT" | "M" => RawStage::Movement,
            "?" | "UNKNOWN" => RawStage::Unknown,
            _ => return Err(Error::UnknownStageToken(t.into())),
        };
        Ok(stage)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RawStage::W => "W",
            RawStage::N1 => "N1",
            RawStage::N2 => "N2",
            RawStage::N3 => "N3",
            RawStage::N4 => "N4",
            RawStage::R => "R",
            RawStage::Movement => "MOVEMENT",
            RawStage::Unknown => "UNKNOWN",
        }
    }
}

impl From<SleepStage> for RawStage {
    fn from(s: SleepStage) -> Self {
        match s {
            SleepStage::W => RawStage::W,
            SleepStage::N1 => RawStage::N1,
            SleepStage::N2 => RawStage::N2,
            SleepStage::N3 => RawStage::N3,
            SleepStage::R => RawStage::R,
        }
    }
}
