use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Luma};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archzoo::LayerKind;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::surgery::{BankEntry, FilterBank};

/// Pixels per kernel coefficient.
pub const TILE_SCALE: u32 = 8;
const GAP: u32 = 2;
const GAP_SHADE: u8 = 128;
const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelector {
    First,
    Middle,
    Last,
    Index(usize),
}

impl LayerSelector {
    /// Position within the bank's entries.
    pub fn resolve(self, layers: usize) -> Result<usize> {
        if layers == 0 {
            return Err(Error::EmptyLayer(0));
        }
        let i = match self {
            LayerSelector::First => 0,
            LayerSelector::Middle => layers / 2,
            LayerSelector::Last => layers - 1,
            LayerSelector::Index(i) => i,
        };
        if i >= layers {
            return Err(Error::InvalidArgument(format!("layer {i} out of range for {layers} layers")));
        }
        Ok(i)
    }

    pub fn label(self) -> String {
        match self {
            LayerSelector::First => "first".into(),
            LayerSelector::Middle => "middle".into(),
            LayerSelector::Last => "last".into(),
            LayerSelector::Index(i) => format!("layer{i:02}"),
        }
    }
}

impl std::str::FromStr for LayerSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Self::First),
            "middle" => Ok(Self::Middle),
            "last" => Ok(Self::Last),
            _ => s
                .parse()
                .map(Self::Index)
                .map_err(|_| Error::InvalidArgument(format!("layer selector `{s}`"))),
        }
    }
}

/// Everything drawn in a grid image, for the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridData {
    pub layer_id: usize,
    pub rows: usize,
    pub cols: usize,
    pub normalize: bool,
    pub seed: u64,
    pub kernel_size: (usize, usize),
    /// Sampled channels in row-major tile order.
    pub channels: Vec<usize>,
    /// Raw kernel coefficients for each sampled channel.
    pub kernels: Vec<Vec<f64>>,
}

/// Samples up to `rows × cols` kernels of one depthwise layer (seeded, then
/// kept in channel order) and renders them as grayscale tiles.
pub fn render_grid<T: Scalar>(
    bank: &FilterBank<T>,
    selector: LayerSelector,
    rows: usize,
    cols: usize,
    normalize: bool,
    seed: u64,
) -> Result<(GrayImage, GridData)> {
    if bank.kind != LayerKind::Depthwise {
        return Err(Error::InvalidArgument("filter grids need a depthwise bank".into()));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("grid needs at least one row and column".into()));
    }
    let entry: &BankEntry<T> = &bank.entries[selector.resolve(bank.entries.len())?];
    let channels = entry.channels();
    if channels == 0 || entry.kernels.numel() == 0 {
        return Err(Error::EmptyLayer(entry.layer_id));
    }
    let (kh, kw) = entry.kernel_size();
    let area = kh * kw;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, channels, (rows * cols).min(channels)).into_vec();
    picked.sort_unstable();
    let kernels: Vec<Vec<f64>> = picked
        .iter()
        .map(|&c| entry.kernels.data[c * area..(c + 1) * area].iter().map(|v| v.to_f64_lossy()).collect())
        .collect();

    let range = |vals: &mut dyn Iterator<Item = f64>| {
        vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let layer_range = range(&mut entry.kernels.data.iter().map(|v| v.to_f64_lossy()));

    let tile_w = kw as u32 * TILE_SCALE;
    let tile_h = kh as u32 * TILE_SCALE;
    let width = cols as u32 * tile_w + (cols as u32 + 1) * GAP;
    let height = rows as u32 * tile_h + (rows as u32 + 1) * GAP;
    let mut img = GrayImage::from_pixel(width, height, Luma([GAP_SHADE]));
    for (t, k) in kernels.iter().enumerate() {
        let (lo, hi) = if normalize { range(&mut k.iter().copied()) } else { layer_range };
        let (r, c) = ((t / cols) as u32, (t % cols) as u32);
        let ox = GAP + c * (tile_w + GAP);
        let oy = GAP + r * (tile_h + GAP);
        for y in 0..tile_h {
            for x in 0..tile_w {
                let v = k[(y / TILE_SCALE) as usize * kw + (x / TILE_SCALE) as usize];
                let shade = ((v - lo) / (hi - lo + EPS)).clamp(0.0, 1.0) * 255.0;
                img.put_pixel(ox + x, oy + y, Luma([shade.round() as u8]));
            }
        }
    }
    let data = GridData {
        layer_id: entry.layer_id,
        rows,
        cols,
        normalize,
        seed,
        kernel_size: (kh, kw),
        channels: picked,
        kernels,
    };
    Ok((img, data))
}

/// Writes the grid as PNG plus a `.json` sidecar with the same stem.
pub fn filter_grid<T: Scalar>(
    bank: &FilterBank<T>,
    selector: LayerSelector,
    rows: usize,
    cols: usize,
    normalize: bool,
    seed: u64,
    png: &Path,
) -> Result<GridData> {
    let (img, data) = render_grid(bank, selector, rows, cols, normalize, seed)?;
    if let Some(dir) = png.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(png, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png {}: {e}", png.display())))?;
    let json = png.with_extension("json");
    std::fs::write(&json, serde_json::to_string_pretty(&data)?).map_err(|e| Error::io(&json, e))?;
    Ok(data)
}

/// First, middle and last layer grids written as `<out>/<prefix>_{first,middle,last}.png`.
pub fn filter_triptych<T: Scalar>(
    bank: &FilterBank<T>,
    rows: usize,
    cols: usize,
    normalize: bool,
    seed: u64,
    out: &Path,
    prefix: &str,
) -> Result<Vec<PathBuf>> {
    [LayerSelector::First, LayerSelector::Middle, LayerSelector::Last]
        .into_iter()
        .map(|sel| {
            let path = out.join(format!("{prefix}_{}.png", sel.label()));
            filter_grid(bank, sel, rows, cols, normalize, seed, &path).map(|_| path)
        })
        .collect()
}
