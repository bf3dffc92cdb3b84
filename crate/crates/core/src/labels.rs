//! Closed label vocabularies shared by the codec, the reward engine and the
//! synthetic environment.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegradationClass {
    Noise,
    Blur,
    Jpeg,
    Darken,
    Null,
}

impl DegradationClass {
    pub const ALL: [DegradationClass; 5] = [
        DegradationClass::Noise,
        DegradationClass::Blur,
        DegradationClass::Jpeg,
        DegradationClass::Darken,
        DegradationClass::Null,
    ];

    /// The four classes that carry a distortion.
    pub const DISTORTED: [DegradationClass; 4] = [
        DegradationClass::Noise,
        DegradationClass::Blur,
        DegradationClass::Jpeg,
        DegradationClass::Darken,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DegradationClass::Noise => "noise",
            DegradationClass::Blur => "blur",
            DegradationClass::Jpeg => "jpeg",
            DegradationClass::Darken => "darken",
            DegradationClass::Null => "null",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Case-insensitive lookup after trimming. "compression" is accepted for
    /// jpeg because that is the word the degradation prompt uses.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "noise" => Some(DegradationClass::Noise),
            "blur" => Some(DegradationClass::Blur),
            "jpeg" | "compression" => Some(DegradationClass::Jpeg),
            "darken" => Some(DegradationClass::Darken),
            "null" => Some(DegradationClass::Null),
            _ => None,
        }
    }
}

impl fmt::Display for DegradationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityLevel {
    Slight,
    Moderate,
    Obvious,
    Serious,
    Catastrophic,
    Null,
}

impl SeverityLevel {
    pub const ALL: [SeverityLevel; 6] = [
        SeverityLevel::Slight,
        SeverityLevel::Moderate,
        SeverityLevel::Obvious,
        SeverityLevel::Serious,
        SeverityLevel::Catastrophic,
        SeverityLevel::Null,
    ];

    pub const RANKED: [SeverityLevel; 5] = [
        SeverityLevel::Slight,
        SeverityLevel::Moderate,
        SeverityLevel::Obvious,
        SeverityLevel::Serious,
        SeverityLevel::Catastrophic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SeverityLevel::Slight => "slight",
            SeverityLevel::Moderate => "moderate",
            SeverityLevel::Obvious => "obvious",
            SeverityLevel::Serious => "serious",
            SeverityLevel::Catastrophic => "catastrophic",
            SeverityLevel::Null => "null",
        }
    }

    /// Ordinal rank 1..=5, 0 for null.
    pub fn rank(self) -> u8 {
        match self {
            SeverityLevel::Slight => 1,
            SeverityLevel::Moderate => 2,
            SeverityLevel::Obvious => 3,
            SeverityLevel::Serious => 4,
            SeverityLevel::Catastrophic => 5,
            SeverityLevel::Null => 0,
        }
    }

    pub fn from_rank(rank: u8) -> Option<Self> {
        match rank {
            0 => Some(SeverityLevel::Null),
            1..=5 => Some(Self::RANKED[rank as usize - 1]),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "slight" => Some(SeverityLevel::Slight),
            "moderate" => Some(SeverityLevel::Moderate),
            "obvious" => Some(SeverityLevel::Obvious),
            "serious" => Some(SeverityLevel::Serious),
            "catastrophic" => Some(SeverityLevel::Catastrophic),
            "null" => Some(SeverityLevel::Null),
            _ => None,
        }
    }
}

impl fmt::Display for SeverityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// True when the pair respects "null class iff null severity".
pub fn consistent_pair(class: DegradationClass, severity: SeverityLevel) -> bool {
    (class == DegradationClass::Null) == (severity == SeverityLevel::Null)
}

/// Outcome of a pairwise comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComparisonChoice {
    A,
    B,
    Similar,
}

impl ComparisonChoice {
    pub const ALL: [ComparisonChoice; 3] = [ComparisonChoice::A, ComparisonChoice::B, ComparisonChoice::Similar];

    /// Surface form used inside responses.
    pub fn answer_text(self) -> &'static str {
        match self {
            ComparisonChoice::A => "Image A",
            ComparisonChoice::B => "Image B",
            ComparisonChoice::Similar => "Similar",
        }
    }

    /// Label form used in dataset and label files.
    pub fn label(self) -> &'static str {
        match self {
            ComparisonChoice::A => "A",
            ComparisonChoice::B => "B",
            ComparisonChoice::Similar => "similar",
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            ComparisonChoice::A => ComparisonChoice::B,
            ComparisonChoice::B => ComparisonChoice::A,
            ComparisonChoice::Similar => ComparisonChoice::Similar,
        }
    }

    /// Accepts both "Image A" and bare "A" spellings, case-insensitively.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "image a" | "a" => Some(ComparisonChoice::A),
            "image b" | "b" => Some(ComparisonChoice::B),
            "similar" => Some(ComparisonChoice::Similar),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Score,
    Degradation,
    Comparison,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Score, TaskKind::Degradation, TaskKind::Comparison];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Score => "score",
            TaskKind::Degradation => "degradation",
            TaskKind::Comparison => "comparison",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "score" => Some(TaskKind::Score),
            "degradation" => Some(TaskKind::Degradation),
            "comparison" => Some(TaskKind::Comparison),
            _ => None,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Hidden label a response is graded against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GroundTruth {
    Mos(f64),
    Deg(DegradationClass, SeverityLevel),
    Comp(ComparisonChoice),
}

impl GroundTruth {
    pub fn task(&self) -> TaskKind {
        match self {
            GroundTruth::Mos(_) => TaskKind::Score,
            GroundTruth::Deg(..) => TaskKind::Degradation,
            GroundTruth::Comp(_) => TaskKind::Comparison,
        }
    }
}
