//! Procedurally generated image-classification datasets.
//!
//! Each class is a primitive pattern (edges, bars, blobs, gratings, ...) with
//! class-specific orientation, scale and colour; samples add position, scale,
//! colour, background and pixel-noise jitter. Generation is a pure function of
//! the dataset seed, so the cache digest is reproducible everywhere.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Square,
    Frame,
    Cross,
    Bars,
    Checker,
    Triangle,
    Corner,
    DotGrid,
    Blob,
    TwinBlobs,
    Waves,
    Spots,
    Rings,
    Ellipse,
    Crescent,
    Texture,
    Star,
    Ripple,
    Cloud,
    Ramp,
}

impl Primitive {
    pub const ALL: [Primitive; 20] = [
        Primitive::Square,
        Primitive::Frame,
        Primitive::Cross,
        Primitive::Bars,
        Primitive::Checker,
        Primitive::Triangle,
        Primitive::Corner,
        Primitive::DotGrid,
        Primitive::Blob,
        Primitive::TwinBlobs,
        Primitive::Waves,
        Primitive::Spots,
        Primitive::Rings,
        Primitive::Ellipse,
        Primitive::Crescent,
        Primitive::Texture,
        Primitive::Star,
        Primitive::Ripple,
        Primitive::Cloud,
        Primitive::Ramp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Square => "square",
            Primitive::Frame => "frame",
            Primitive::Cross => "cross",
            Primitive::Bars => "bars",
            Primitive::Checker => "checker",
            Primitive::Triangle => "triangle",
            Primitive::Corner => "corner",
            Primitive::DotGrid => "dot_grid",
            Primitive::Blob => "blob",
            Primitive::TwinBlobs => "twin_blobs",
            Primitive::Waves => "waves",
            Primitive::Spots => "spots",
            Primitive::Rings => "rings",
            Primitive::Ellipse => "ellipse",
            Primitive::Crescent => "crescent",
            Primitive::Texture => "texture",
            Primitive::Star => "star",
            Primitive::Ripple => "ripple",
            Primitive::Cloud => "cloud",
            Primitive::Ramp => "ramp",
        }
    }
}

/// Recipe for a builtin dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    /// One family per superclass; classes are `families × variants`.
    pub families: Vec<Primitive>,
    pub variants: usize,
    pub image_size: usize,
    pub grayscale: bool,
    /// Draw outlines only (thin strokes), for the sketch-like domain.
    pub outline: bool,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
}

impl SynthSpec {
    pub fn num_classes(&self) -> usize {
        self.families.len() * self.variants
    }

    pub fn class_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for f in &self.families {
            if self.variants == 1 {
                out.push(f.name().to_string());
            } else {
                for v in 0..self.variants {
                    out.push(format!("{}_{v}", f.name()));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct ClassStyle {
    primitive: Primitive,
    angle: f64,
    scale: f64,
    hue: f64,
    aux: Vec<f64>,
}

fn class_style(spec: &SynthSpec, class: usize) -> ClassStyle {
    let family = class / spec.variants;
    let variant = class % spec.variants;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9e37_79b9).wrapping_add(class as u64));
    let v = variant as f64 / spec.variants.max(1) as f64;
    ClassStyle {
        primitive: spec.families[family],
        angle: v * PI + rng.gen_range(-0.1..0.1),
        scale: 0.45 + 0.35 * ((variant * 3 % spec.variants.max(1)) as f64 / spec.variants.max(1) as f64),
        hue: (family as f64 * 0.137 + v * 0.61).fract(),
        aux: (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

#[inline]
fn soft(x: f64) -> f64 {
    1.0 / (1.0 + (-14.0 * x).exp())
}

#[inline]
fn gauss(d2: f64, s2: f64) -> f64 {
    (-d2 / (2.0 * s2)).exp()
}

/// Pattern intensity in `[0, 1]` at normalized, object-centred coordinates.
fn intensity(style: &ClassStyle, u: f64, v: f64, outline: bool) -> f64 {
    let r2 = u * u + v * v;
    let r = r2.sqrt();
    let env = gauss(r2, 0.5);
    let a = &style.aux;
    let val = match style.primitive {
        Primitive::Square => soft(0.8 - u.abs().max(v.abs())),
        Primitive::Frame => gauss((u.abs().max(v.abs()) - 0.8).powi(2), 0.01),
        Primitive::Cross => (soft(0.25 - u.abs()) * soft(0.9 - v.abs())).max(soft(0.25 - v.abs()) * soft(0.9 - u.abs())),
        Primitive::Bars => (0.5 + 0.5 * (2.0 * PI * 1.3 * u).cos()) * env,
        Primitive::Checker => (0.5 + 0.5 * (4.0 * (PI * 1.2 * u).cos() * (PI * 1.2 * v).cos()).tanh()) * env,
        Primitive::Triangle => soft((v + 0.6).min(0.8 - 1.6 * u.abs() - v)),
        Primitive::Corner => (soft(0.25 - (u + 0.4).abs()) * soft(0.8 - v.abs())).max(soft(0.25 - (v - 0.55).abs()) * soft(0.8 - u.abs())),
        Primitive::DotGrid => ((PI * 1.5 * u).cos().powi(2) * (PI * 1.5 * v).cos().powi(2)).powi(3) * env,
        Primitive::Blob => gauss(r2, 0.25),
        Primitive::TwinBlobs => gauss((u - 0.5).powi(2) + v * v, 0.06) + gauss((u + 0.5).powi(2) + v * v, 0.06),
        Primitive::Waves => (0.5 + 0.5 * (2.0 * PI * (0.9 * u + 0.25 * (3.0 * v).sin())).cos()) * env,
        Primitive::Spots => (0..5)
            .map(|i| gauss((u - 0.7 * a[2 * i]).powi(2) + (v - 0.7 * a[2 * i + 1]).powi(2), 0.02))
            .sum::<f64>()
            .min(1.0),
        Primitive::Rings => (0.5 + 0.5 * (2.0 * PI * 1.6 * r).cos()) * env,
        Primitive::Ellipse => gauss(u * u / 0.6 + v * v / 0.06, 1.0),
        Primitive::Crescent => (gauss(r2, 0.2) - 1.2 * gauss((u - 0.35).powi(2) + v * v, 0.12)).max(0.0),
        Primitive::Texture => {
            let s: f64 = (0..4)
                .map(|i| (PI * (2.0 * a[4 * i] * u + 2.0 * a[4 * i + 1] * v) + PI * a[4 * i + 2]).cos())
                .sum();
            (0.5 + 0.2 * s).clamp(0.0, 1.0) * env
        }
        Primitive::Star => (0.5 + 0.5 * (5.0 * v.atan2(u)).cos()).powi(2) * gauss(r2, 0.3),
        Primitive::Ripple => (0.5 + 0.5 * (2.0 * PI * 2.2 * r).cos()) * gauss(r2, 0.2),
        Primitive::Cloud => (0..4)
            .map(|i| gauss((u - 0.4 * a[3 * i]).powi(2) + (v - 0.4 * a[3 * i + 1]).powi(2), 0.04 + 0.03 * a[3 * i + 2].abs()))
            .sum::<f64>()
            .min(1.0),
        Primitive::Ramp => ((u + 1.0) / 2.0).clamp(0.0, 1.0) * soft(0.8 - v.abs()) * soft(0.9 - u.abs()),
    };
    if outline {
        // keep only the transition band of the pattern
        let band = 4.0 * val * (1.0 - val);
        band.clamp(0.0, 1.0)
    } else {
        val.clamp(0.0, 1.0)
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32;
    let f = h6 - i as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn render(spec: &SynthSpec, style: &ClassStyle, rng: &mut ChaCha8Rng, out: &mut Vec<u8>) {
    let size = spec.image_size;
    let cx = rng.gen_range(-0.15..0.15);
    let cy = rng.gen_range(-0.15..0.15);
    let scale = style.scale * rng.gen_range(0.85..1.15);
    let angle = style.angle + rng.gen_range(-0.15..0.15);
    let (sa, ca) = angle.sin_cos();
    let fg = hsv_to_rgb(style.hue + rng.gen_range(-0.04..0.04), rng.gen_range(0.6..0.95), rng.gen_range(0.75..1.0));
    let bg0 = hsv_to_rgb(rng.gen::<f64>(), rng.gen_range(0.0..0.35), rng.gen_range(0.1..0.45));
    let bg1 = hsv_to_rgb(rng.gen::<f64>(), rng.gen_range(0.0..0.35), rng.gen_range(0.1..0.45));
    let gdir = rng.gen_range(0.0..2.0 * PI);
    let (gs, gc) = gdir.sin_cos();
    let alpha = rng.gen_range(0.7..0.95);
    for py in 0..size {
        for px in 0..size {
            let x = (px as f64 + 0.5) / size as f64 * 2.0 - 1.0;
            let y = (py as f64 + 0.5) / size as f64 * 2.0 - 1.0;
            let (dx, dy) = ((x - cx) / scale, (y - cy) / scale);
            let u = ca * dx + sa * dy;
            let v = -sa * dx + ca * dy;
            let a = alpha * intensity(style, u, v, spec.outline);
            let t = (0.5 + 0.35 * (gc * x + gs * y)).clamp(0.0, 1.0);
            let mut rgb = [0.0; 3];
            for ch in 0..3 {
                let bg = bg0[ch] * (1.0 - t) + bg1[ch] * t;
                rgb[ch] = bg * (1.0 - a) + fg[ch] * a;
            }
            if spec.grayscale {
                let l = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
                let l = if spec.outline { 1.0 - a } else { l };
                let l = l + spec.noise * rng.gen_range(-1.0..1.0);
                out.push((l.clamp(0.0, 1.0) * 255.0).round() as u8);
            } else {
                for c in rgb {
                    let c = c + spec.noise * rng.gen_range(-1.0..1.0);
                    out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
    }
}

/// Generates `(train, test)` splits.
pub fn generate(spec: &SynthSpec) -> (Split, Split) {
    let styles: Vec<ClassStyle> = (0..spec.num_classes()).map(|c| class_style(spec, c)).collect();
    let make = |per_class: usize, stream: u64| -> Split {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ stream);
        let channels = if spec.grayscale { 1 } else { 3 };
        let mut images = Vec::with_capacity(per_class * styles.len() * spec.image_size * spec.image_size * channels);
        let mut labels = Vec::new();
        // interleave classes so any prefix is roughly balanced
        for _ in 0..per_class {
            for (c, style) in styles.iter().enumerate() {
                render(spec, style, &mut rng, &mut images);
                labels.push(c as u16);
            }
        }
        Split {
            images,
            labels,
            height: spec.image_size,
            width: spec.image_size,
            channels,
        }
    };
    (make(spec.train_per_class, 0x74_7261_696e), make(spec.test_per_class, 0x7465_7374))
}
