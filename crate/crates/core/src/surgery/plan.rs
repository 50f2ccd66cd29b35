use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    Layerwise,
    Stack,
    Shuffle,
    RepeatFirstK,
    PointwiseLayerwise,
}

impl TransferMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransferMode::Layerwise => "layerwise",
            TransferMode::Stack => "stack",
            TransferMode::Shuffle => "shuffle",
            TransferMode::RepeatFirstK => "repeat_first_k",
            TransferMode::PointwiseLayerwise => "pointwise_layerwise",
        }
    }
}

/// How many target layers a plan fills. Serialized as an integer or `"all"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Depth {
    #[default]
    All,
    N(usize),
}

impl Depth {
    pub fn resolve(self, total: usize) -> usize {
        match self {
            Depth::All => total,
            Depth::N(n) => n,
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Depth::All => f.write_str("all"),
            Depth::N(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for Depth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Depth::All => s.serialize_str("all"),
            Depth::N(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Depth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Depth;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative integer or \"all\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Depth, E> {
                Ok(Depth::N(v as usize))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Depth, E> {
                usize::try_from(v).map(Depth::N).map_err(|_| E::custom("depth must be non-negative"))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Depth, E> {
                if v.eq_ignore_ascii_case("all") {
                    Ok(Depth::All)
                } else {
                    v.parse().map(Depth::N).map_err(|_| E::custom(format!("bad depth {v:?}")))
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Which end of the canonical layer order a plan fills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Layers `0..n`.
    #[default]
    Leading,
    /// Layers `n..L`.
    Trailing,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransferPlan {
    pub mode: TransferMode,
    #[serde(default)]
    pub depth_n: Depth,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default = "yes")]
    pub freeze: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    #[serde(default)]
    pub direction: Direction,
    /// Bilinearly resample kernels whose size differs from the target's.
    #[serde(default)]
    pub resize: bool,
    /// Content digest of the bank the plan is applied with.
    #[serde(default)]
    pub source_bank_ref: String,
}

fn yes() -> bool {
    true
}

pub const DEFAULT_REPEAT_K: usize = 3;

impl TransferPlan {
    fn base(mode: TransferMode) -> Self {
        Self {
            mode,
            depth_n: Depth::All,
            k: None,
            freeze: true,
            rng_seed: None,
            direction: Direction::Leading,
            resize: false,
            source_bank_ref: String::new(),
        }
    }

    pub fn layerwise(depth_n: Depth) -> Self {
        Self {
            depth_n,
            ..Self::base(TransferMode::Layerwise)
        }
    }

    /// Fills layers `n..L` (reverse-freeze protocol).
    pub fn layerwise_trailing(n: usize) -> Self {
        Self {
            depth_n: Depth::N(n),
            direction: Direction::Trailing,
            ..Self::base(TransferMode::Layerwise)
        }
    }

    pub fn stack() -> Self {
        Self::base(TransferMode::Stack)
    }

    pub fn shuffle(seed: u64) -> Self {
        Self {
            rng_seed: Some(seed),
            ..Self::base(TransferMode::Shuffle)
        }
    }

    pub fn repeat_first_k(k: usize) -> Self {
        Self {
            k: Some(k),
            ..Self::base(TransferMode::RepeatFirstK)
        }
    }

    pub fn pointwise_layerwise() -> Self {
        Self::base(TransferMode::PointwiseLayerwise)
    }

    pub fn with_bank(mut self, digest: impl Into<String>) -> Self {
        self.source_bank_ref = digest.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, self.k) {
            (TransferMode::RepeatFirstK, Some(0)) => return Err(Error::invalid_spec("k", "must be at least 1")),
            (TransferMode::RepeatFirstK, _) => {}
            (_, Some(_)) => return Err(Error::invalid_spec("k", "only valid for repeat_first_k")),
            _ => {}
        }
        if (self.mode == TransferMode::Shuffle) != self.rng_seed.is_some() {
            return Err(Error::invalid_spec("rng_seed", "required for shuffle and only for shuffle"));
        }
        if self.direction == Direction::Trailing && self.mode != TransferMode::Layerwise {
            return Err(Error::invalid_spec("direction", "trailing fill is only defined for layerwise mode"));
        }
        Ok(())
    }

    pub fn repeat_k(&self) -> usize {
        self.k.unwrap_or(DEFAULT_REPEAT_K)
    }

    /// Target layer ids the plan fills, given the target layer count.
    pub fn target_layers(&self, total: usize) -> Result<std::ops::Range<usize>> {
        let n = self.depth_n.resolve(total);
        if n > total {
            return Err(Error::invalid_spec(
                "depth_n",
                format!("{n} exceeds the target's {total} layers"),
            ));
        }
        Ok(match self.direction {
            Direction::Leading => 0..n,
            Direction::Trailing => n..total,
        })
    }
}
