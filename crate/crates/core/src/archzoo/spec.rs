use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Block family of a depthwise-separable network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// ConvNeXt-style: depthwise → norm → expand → GELU → project, residual.
    StandardDs,
    /// Single-order gated block: norm → project in (2C) → split, depthwise on
    /// one half, multiply with the other → project out, residual; followed by
    /// a norm → expand → GELU → project MLP with its own residual.
    GatedDs,
}

impl BlockKind {
    /// Number of 1×1 channel-mixing layers per block.
    pub fn pointwise_per_block(self) -> usize {
        match self {
            BlockKind::StandardDs => 2,
            BlockKind::GatedDs => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub patch: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub blocks: usize,
    pub channels: usize,
    /// Falls back to [`ArchSpec::dw_kernel`] when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dw_kernel: Option<usize>,
}

impl StageSpec {
    pub fn new(blocks: usize, channels: usize) -> Self {
        Self {
            blocks,
            channels,
            dw_kernel: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

fn default_expansion() -> usize {
    4
}

/// Declarative description of a desk-scale DS-CNN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub block_kind: BlockKind,
    pub stem: StemSpec,
    pub stages: Vec<StageSpec>,
    pub dw_kernel: usize,
    pub num_classes: usize,
    pub input: InputSpec,
    #[serde(default = "default_expansion")]
    pub expansion: usize,
}

impl ArchSpec {
    /// Miniature ConvNeXt: 4×4 patchify stem, stages
    /// `[(2,48),(2,96),(6,192),(2,384)]`, 7×7 depthwise kernels, 32×32×3 input.
    pub fn mini_convnext() -> Self {
        Self {
            name: "mini_convnext".into(),
            block_kind: BlockKind::StandardDs,
            stem: StemSpec {
                patch: 4,
                channels: 48,
            },
            stages: vec![
                StageSpec::new(2, 48),
                StageSpec::new(2, 96),
                StageSpec::new(6, 192),
                StageSpec::new(2, 384),
            ],
            dw_kernel: 7,
            num_classes: 10,
            input: InputSpec {
                height: 32,
                width: 32,
                channels: 3,
            },
            expansion: 4,
        }
    }

    /// Same stage table as [`ArchSpec::mini_convnext`] with gated blocks.
    pub fn mini_gated() -> Self {
        Self {
            name: "mini_gated".into(),
            block_kind: BlockKind::GatedDs,
            ..Self::mini_convnext()
        }
    }

    /// Fast stand-in with the same 2/2/6/2 block layout: 2×2 patchify stem,
    /// widths `[16, 24, 32, 48]`, 3×3 depthwise kernels, 16×16×3 input.
    pub fn micro_convnext() -> Self {
        Self {
            name: "micro_convnext".into(),
            block_kind: BlockKind::StandardDs,
            stem: StemSpec { patch: 2, channels: 16 },
            stages: vec![
                StageSpec::new(2, 16),
                StageSpec::new(2, 24),
                StageSpec::new(6, 32),
                StageSpec::new(2, 48),
            ],
            dw_kernel: 3,
            num_classes: 10,
            input: InputSpec {
                height: 16,
                width: 16,
                channels: 3,
            },
            expansion: 4,
        }
    }

    pub fn micro_gated() -> Self {
        Self {
            name: "micro_gated".into(),
            block_kind: BlockKind::GatedDs,
            ..Self::micro_convnext()
        }
    }

    /// Built-in specs by name; `_2x` and `_half` suffixes scale widths.
    pub fn builtin(name: &str) -> Option<Self> {
        let (base, num, den) = if let Some(b) = name.strip_suffix("_2x") {
            (b, 2, 1)
        } else if let Some(b) = name.strip_suffix("_half") {
            (b, 1, 2)
        } else {
            (name, 1, 1)
        };
        let spec = match base {
            "mini_convnext" => Self::mini_convnext(),
            "mini_gated" => Self::mini_gated(),
            "micro_convnext" => Self::micro_convnext(),
            "micro_gated" => Self::micro_gated(),
            _ => return None,
        };
        Some(if (num, den) == (1, 1) { spec } else { spec.scaled_width(name, num, den) })
    }

    /// Copy with every channel width multiplied by `num / den`.
    pub fn scaled_width(&self, name: &str, num: usize, den: usize) -> Self {
        let mut out = self.clone();
        out.name = name.into();
        out.stem.channels = self.stem.channels * num / den;
        for s in &mut out.stages {
            s.channels = s.channels * num / den;
        }
        out
    }

    pub fn with_classes(&self, num_classes: usize) -> Self {
        let mut out = self.clone();
        out.num_classes = num_classes;
        out
    }

    pub fn stage_kernel(&self, stage: usize) -> usize {
        self.stages[stage].dw_kernel.unwrap_or(self.dw_kernel)
    }

    pub fn depthwise_count(&self) -> usize {
        self.stages.iter().map(|s| s.blocks).sum()
    }

    /// Spatial size of the token grid entering `stage`.
    pub fn stage_resolution(&self, stage: usize) -> (usize, usize) {
        let (mut h, mut w) = (self.input.height / self.stem.patch, self.input.width / self.stem.patch);
        for _ in 0..stage {
            h /= 2;
            w /= 2;
        }
        (h, w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::invalid_spec("name", "must be nonempty"));
        }
        if self.stages.is_empty() {
            return Err(Error::invalid_spec("stages", "must be nonempty"));
        }
        if self.num_classes == 0 {
            return Err(Error::invalid_spec("num_classes", "must be positive"));
        }
        if self.expansion == 0 {
            return Err(Error::invalid_spec("expansion", "must be positive"));
        }
        if self.input.height == 0 || self.input.width == 0 || self.input.channels == 0 {
            return Err(Error::invalid_spec("input", "dimensions must be positive"));
        }
        if self.stem.channels == 0 {
            return Err(Error::invalid_spec("stem.channels", "must be positive"));
        }
        if self.stem.patch == 0
            || !self.input.height.is_multiple_of(self.stem.patch)
            || !self.input.width.is_multiple_of(self.stem.patch)
        {
            return Err(Error::invalid_spec(
                "stem.patch",
                format!(
                    "patch {} must divide input {}x{}",
                    self.stem.patch, self.input.height, self.input.width
                ),
            ));
        }
        if self.stages[0].channels != self.stem.channels {
            return Err(Error::invalid_spec(
                "stem.channels",
                "must equal the first stage's channel count",
            ));
        }
        let down = 1usize << (self.stages.len() - 1);
        let (h, w) = self.stage_resolution(0);
        if h % down != 0 || w % down != 0 {
            return Err(Error::invalid_spec(
                "stages",
                format!("token grid {h}x{w} cannot be halved {} times", self.stages.len() - 1),
            ));
        }
        if !self.dw_kernel_ok(self.dw_kernel) {
            return Err(Error::invalid_spec("dw_kernel", "must be odd and >= 3"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks == 0 {
                return Err(Error::invalid_spec(format!("stages[{i}].blocks"), "must be positive"));
            }
            if s.channels == 0 {
                return Err(Error::invalid_spec(format!("stages[{i}].channels"), "must be positive"));
            }
            if let Some(k) = s.dw_kernel {
                if !self.dw_kernel_ok(k) {
                    return Err(Error::invalid_spec(
                        format!("stages[{i}].dw_kernel"),
                        "must be odd and >= 3",
                    ));
                }
            }
        }
        Ok(())
    }

    fn dw_kernel_ok(&self, k: usize) -> bool {
        k >= 3 && k % 2 == 1
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ArchSpec =
            toml::from_str(text).map_err(|e| Error::Format(format!("arch spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("arch spec is always representable as toml")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Resolves a spec by name under `<configs>/arch/<name>.toml`, falling back
    /// to the built-in defaults.
    pub fn resolve(name_or_path: &str, configs_dir: &Path) -> Result<Self> {
        let as_path = Path::new(name_or_path);
        if as_path.extension().is_some() && as_path.exists() {
            return Self::load(as_path);
        }
        let candidate = configs_dir.join("arch").join(format!("{name_or_path}.toml"));
        if candidate.exists() {
            return Self::load(&candidate);
        }
        Self::builtin(name_or_path)
            .ok_or_else(|| Error::invalid_spec("name", format!("no arch spec named `{name_or_path}`")))
    }
}

/// Per-layer depthwise filter counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterInventory {
    pub total_dw_filters: usize,
    /// `(layer_id, channels, kernel_size)` in canonical order.
    pub per_layer: Vec<(usize, usize, usize)>,
}

/// Counts the per-channel depthwise kernels a spec produces.
pub fn filter_inventory(spec: &ArchSpec) -> FilterInventory {
    let mut per_layer = Vec::new();
    let mut id = 0;
    for (s, stage) in spec.stages.iter().enumerate() {
        for _ in 0..stage.blocks {
            per_layer.push((id, stage.channels, spec.stage_kernel(s)));
            id += 1;
        }
    }
    FilterInventory {
        total_dw_filters: per_layer.iter().map(|l| l.1).sum(),
        per_layer,
    }
}
