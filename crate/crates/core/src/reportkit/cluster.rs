use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archzoo::LayerKind;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::surgery::FilterBank;

/// Kernels whose centered norm falls below this are excluded.
pub const ZERO_NORM: f64 = 1e-12;
const TIE: f64 = 1e-9;
const MAX_ITERS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KernelRef {
    /// Index into the input bank list.
    pub bank: usize,
    pub layer_id: usize,
    pub channel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub kernel: KernelRef,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerHistogram {
    pub bank: usize,
    pub layer_id: usize,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub seed: u64,
    pub kernel_size: (usize, usize),
    pub assignments: Vec<Assignment>,
    /// `k` unit-scale kernels in normalized space, flattened row-major.
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub per_layer_histogram: Vec<LayerHistogram>,
    /// Kernels with (near) zero variation, left out of clustering.
    pub excluded: Vec<KernelRef>,
}

impl ClusterReport {
    pub fn cluster_of(&self, kernel: KernelRef) -> Option<usize> {
        self.assignments.iter().find(|a| a.kernel == kernel).map(|a| a.cluster)
    }
}

/// Zero mean, unit norm, flipped so the largest-magnitude coefficient is
/// positive. Ties (within rounding) go to the first coefficient in row-major
/// order, so an antisymmetric kernel and its negation align the same way.
/// `None` for kernels with no variation.
pub fn normalize_kernel(k: &[f64]) -> Option<Vec<f64>> {
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    let mut v: Vec<f64> = k.iter().map(|x| x - mean).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > ZERO_NORM) {
        return None;
    }
    let top = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let peak = v.iter().copied().find(|x| x.abs() >= top * (1.0 - TIE)).unwrap_or(top);
    let s = if peak < 0.0 { -1.0 / norm } else { 1.0 / norm };
    v.iter_mut().for_each(|x| *x *= s);
    Some(v)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dist2(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![rng.gen_range(0..points.len())];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            // every point coincides with a chosen centre
            (0..points.len()).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Seeded k-means (k-means++ start, Lloyd iterations) over every depthwise
/// kernel in `banks`, after [`normalize_kernel`].
pub fn cluster_filters<T: Scalar>(banks: &[FilterBank<T>], k: usize, seed: u64) -> Result<ClusterReport> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    let mut size = None;
    let mut refs = Vec::new();
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for (b, bank) in banks.iter().enumerate() {
        if bank.kind != LayerKind::Depthwise {
            return Err(Error::InvalidArgument("clustering needs depthwise banks".into()));
        }
        for e in &bank.entries {
            let ks = e.kernel_size();
            match size {
                None => size = Some(ks),
                Some(s) if s != ks => {
                    return Err(Error::HeterogeneousKernelSize(format!(
                        "{}x{} and {}x{} (bank {b}, layer {})",
                        s.0, s.1, ks.0, ks.1, e.layer_id
                    )))
                }
                _ => {}
            }
            let area = ks.0 * ks.1;
            for c in 0..e.channels() {
                let raw: Vec<f64> = e.kernels.data[c * area..(c + 1) * area].iter().map(|v| v.to_f64_lossy()).collect();
                let r = KernelRef {
                    bank: b,
                    layer_id: e.layer_id,
                    channel: c,
                };
                match normalize_kernel(&raw) {
                    Some(p) => {
                        refs.push(r);
                        points.push(p);
                    }
                    None => excluded.push(r),
                }
            }
        }
    }
    if points.len() < k {
        return Err(Error::Degenerate(format!(
            "{} clusterable kernels for k = {k} ({} excluded)",
            points.len(),
            excluded.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(&points, k, &mut rng);
    let dim = points[0].len();
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    for _ in 0..MAX_ITERS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // reseed an empty cluster at the point farthest from its centre
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, nearest(p, &centroids).1))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
                    .0;
                centroids[c] = points[far].clone();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| dist2(p, &centroids[l])).sum();

    let mut hist: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (r, &l) in refs.iter().zip(&labels) {
        hist.entry((r.bank, r.layer_id)).or_insert_with(|| vec![0; k])[l] += 1;
    }
    Ok(ClusterReport {
        k,
        seed,
        kernel_size: size.unwrap_or((0, 0)),
        assignments: refs
            .into_iter()
            .zip(labels)
            .map(|(kernel, cluster)| Assignment { kernel, cluster })
            .collect(),
        centroids,
        inertia,
        per_layer_histogram: hist
            .into_iter()
            .map(|((bank, layer_id), counts)| LayerHistogram { bank, layer_id, counts })
            .collect(),
        excluded,
    })
}

/// Fraction of items whose cluster's majority label matches their own.
pub fn purity(clusters: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(clusters.len(), labels.len());
    if clusters.is_empty() {
        return 0.0;
    }
    let mut table: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&c, &l) in clusters.iter().zip(labels) {
        *table.entry(c).or_default().entry(l).or_default() += 1;
    }
    let majority: usize = table.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    majority as f64 / clusters.len() as f64
}
