//! Dataset registry, on-disk cache, semantic splits and batch loaders.
//!
//! Cache layout per dataset: `<root>/<name>/raw/...` (upstream files or the
//! generated builtin data), `<root>/<name>/digest.json` (SHA-256 of every raw
//! file, checked on each load) and `<root>/<name>/stats.json` (per-channel
//! mean/std of the training split). Writers hold an exclusive lock on
//! `<root>/<name>/.lock`.

mod fetch;
mod formats;
mod loader;
mod split;
pub mod synth;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use fetch::{md5_file, sha256_file, RemoteFile};
pub use loader::{make_loaders, Augment, Batch, Loaders, TestLoader, TrainLoader};
pub use split::{load_named, semantic_split, Partition, SemanticSplit, SplitTable};
pub use synth::{Primitive, SynthSpec};

use crate::error::{Error, Result};

/// Decoded images (`N × H × W × C`, u8) and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub images: Vec<u8>,
    pub labels: Vec<u16>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    fn to_rgb(self) -> Split {
        if self.channels != 1 {
            return self;
        }
        let images = self.images.iter().flat_map(|&v| [v, v, v]).collect();
        Split {
            images,
            channels: 3,
            ..self
        }
    }

    /// Rows whose label is in `keep`, relabelled through `remap`.
    pub fn select(&self, remap: &BTreeMap<u16, u16>) -> Split {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(&nl) = remap.get(l) {
                images.extend_from_slice(self.image(i));
                labels.push(nl);
            }
        }
        Split {
            images,
            labels,
            height: self.height,
            width: self.width,
            channels: self.channels,
        }
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(&self.images);
        for l in &self.labels {
            h.update(l.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Cifar10,
    Cifar100,
    FashionMnist,
    Stl10Small,
    Builtin(SynthSpec),
}

/// Registry entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub name: String,
    pub num_classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub image_size: usize,
    pub source: Source,
}

impl DatasetSpec {
    pub fn locator(&self) -> String {
        match &self.source {
            Source::Builtin(_) => format!("builtin:{}", self.name),
            _ => remote_files(&self.source)
                .first()
                .map(|r| r.url.to_string())
                .unwrap_or_default(),
        }
    }
}

const CIFAR10_FILES: &[RemoteFile] = &[RemoteFile {
    url: "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz",
    md5: "c32a1d4ab5d03f1284b67883e8d87530",
    untar: true,
}];

const CIFAR100_FILES: &[RemoteFile] = &[RemoteFile {
    url: "https://www.cs.toronto.edu/~kriz/cifar-100-binary.tar.gz",
    md5: "03b5dce01913d631647c71ecec9e9cb8",
    untar: true,
}];

const FASHION_FILES: &[RemoteFile] = &[
    RemoteFile {
        url: "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/train-images-idx3-ubyte.gz",
        md5: "8d4fb7e6c68d591d4c3dfef9ec88bf0d",
        untar: false,
    },
    RemoteFile {
        url: "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/train-labels-idx1-ubyte.gz",
        md5: "25c81989df183df01b3e8a0aad5dffbe",
        untar: false,
    },
    RemoteFile {
        url: "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/t10k-images-idx3-ubyte.gz",
        md5: "bef4ecab320f06d8554ea6380940ec79",
        untar: false,
    },
    RemoteFile {
        url: "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/t10k-labels-idx1-ubyte.gz",
        md5: "bb300cfdad3c16e7a12a480ee83fd310",
        untar: false,
    },
];

const STL10_FILES: &[RemoteFile] = &[RemoteFile {
    url: "http://ai.stanford.edu/~acoates/stl10/stl10_binary.tar.gz",
    md5: "91f7769df0f17e558f3565bffb0c7dfb",
    untar: true,
}];

fn remote_files(source: &Source) -> &'static [RemoteFile] {
    match source {
        Source::Cifar10 => CIFAR10_FILES,
        Source::Cifar100 => CIFAR100_FILES,
        Source::FashionMnist => FASHION_FILES,
        Source::Stl10Small => STL10_FILES,
        Source::Builtin(_) => &[],
    }
}

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
];

pub const CIFAR100_CLASSES: [&str; 100] = [
    "apple", "aquarium_fish", "baby", "bear", "beaver", "bed", "bee", "beetle", "bicycle", "bottle",
    "bowl", "boy", "bridge", "bus", "butterfly", "camel", "can", "castle", "caterpillar", "cattle",
    "chair", "chimpanzee", "clock", "cloud", "cockroach", "couch", "crab", "crocodile", "cup", "dinosaur",
    "dolphin", "elephant", "flatfish", "forest", "fox", "girl", "hamster", "house", "kangaroo", "keyboard",
    "lamp", "lawn_mower", "leopard", "lion", "lizard", "lobster", "man", "maple_tree", "motorcycle", "mountain",
    "mouse", "mushroom", "oak_tree", "orange", "orchid", "otter", "palm_tree", "pear", "pickup_truck", "pine_tree",
    "plain", "plate", "poppy", "porcupine", "possum", "rabbit", "raccoon", "ray", "road", "rocket",
    "rose", "sea", "seal", "shark", "shrew", "skunk", "skyscraper", "snail", "snake", "spider",
    "squirrel", "streetcar", "sunflower", "sweet_pepper", "table", "tank", "telephone", "television", "tiger", "tractor",
    "train", "trout", "tulip", "turtle", "wardrobe", "whale", "willow_tree", "wolf", "woman", "worm",
];

const FASHION_CLASSES: [&str; 10] = [
    "t_shirt_top", "trouser", "pullover", "dress", "coat", "sandal", "shirt", "sneaker", "bag", "ankle_boot",
];

const STL10_CLASSES: [&str; 10] = [
    "airplane", "bird", "car", "cat", "deer", "dog", "horse", "monkey", "ship", "truck",
];

fn synth10() -> SynthSpec {
    use Primitive::*;
    SynthSpec {
        seed: 10,
        families: vec![Square, Cross, Bars, Checker, Blob, TwinBlobs, Waves, Spots, Rings, Crescent],
        variants: 1,
        image_size: 16,
        grayscale: false,
        outline: false,
        train_per_class: 500,
        test_per_class: 100,
        noise: 0.08,
    }
}

fn synth100() -> SynthSpec {
    SynthSpec {
        seed: 100,
        families: Primitive::ALL.to_vec(),
        variants: 5,
        image_size: 16,
        grayscale: false,
        outline: false,
        train_per_class: 100,
        test_per_class: 20,
        noise: 0.08,
    }
}

fn synth_sketch() -> SynthSpec {
    use Primitive::*;
    SynthSpec {
        seed: 7,
        families: vec![Frame, Triangle, Cross, Corner, Ellipse, Rings, Star, Crescent, Square, Ripple],
        variants: 1,
        image_size: 16,
        grayscale: true,
        outline: true,
        train_per_class: 500,
        test_per_class: 100,
        noise: 0.05,
    }
}

fn builtin(name: &str, s: SynthSpec) -> DatasetSpec {
    DatasetSpec {
        name: name.into(),
        num_classes: s.num_classes(),
        train_size: s.num_classes() * s.train_per_class,
        test_size: s.num_classes() * s.test_per_class,
        image_size: s.image_size,
        source: Source::Builtin(s),
    }
}

/// All registered datasets.
pub fn registry() -> Vec<DatasetSpec> {
    vec![
        DatasetSpec {
            name: "cifar10".into(),
            num_classes: 10,
            train_size: 50_000,
            test_size: 10_000,
            image_size: 32,
            source: Source::Cifar10,
        },
        DatasetSpec {
            name: "cifar100".into(),
            num_classes: 100,
            train_size: 50_000,
            test_size: 10_000,
            image_size: 32,
            source: Source::Cifar100,
        },
        DatasetSpec {
            name: "fashion_mnist".into(),
            num_classes: 10,
            train_size: 60_000,
            test_size: 10_000,
            image_size: 32,
            source: Source::FashionMnist,
        },
        DatasetSpec {
            name: "stl10_small".into(),
            num_classes: 10,
            train_size: 5_000,
            test_size: 8_000,
            image_size: 64,
            source: Source::Stl10Small,
        },
        builtin("synth10", synth10()),
        builtin("synth100", synth100()),
        builtin("synth_sketch", synth_sketch()),
    ]
}

pub fn dataset_spec(name: &str) -> Result<DatasetSpec> {
    registry()
        .into_iter()
        .find(|d| d.name == name)
        .ok_or_else(|| Error::UnknownDataset(name.to_string()))
}

/// Per-channel normalization statistics of a training split (pixel scale 0..1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn compute(split: &Split) -> Self {
        let c = split.channels;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for px in split.images.chunks_exact(c) {
            for ch in 0..c {
                let v = px[ch] as f64 / 255.0;
                sum[ch] += v;
                sq[ch] += v * v;
            }
        }
        let n = (split.images.len() / c).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        Self { mean, std }
    }
}

/// A loaded dataset (or a semantic partition of one).
#[derive(Debug, Clone)]
pub struct DatasetHandle {
    pub name: String,
    pub class_names: Vec<String>,
    pub train: Arc<Split>,
    pub test: Arc<Split>,
    pub stats: ChannelStats,
    /// True when the cache already held verified data.
    pub cache_hit: bool,
    /// Identity of the data contents, stable across machines.
    pub content_digest: String,
}

impl DatasetHandle {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.train.height, self.train.width, self.train.channels)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DigestFile {
    files: BTreeMap<String, String>,
}

fn required_files(source: &Source) -> Vec<&'static str> {
    match source {
        Source::Cifar10 => vec![
            "cifar-10-batches-bin/data_batch_1.bin",
            "cifar-10-batches-bin/data_batch_2.bin",
            "cifar-10-batches-bin/data_batch_3.bin",
            "cifar-10-batches-bin/data_batch_4.bin",
            "cifar-10-batches-bin/data_batch_5.bin",
            "cifar-10-batches-bin/test_batch.bin",
        ],
        Source::Cifar100 => vec!["cifar-100-binary/train.bin", "cifar-100-binary/test.bin"],
        Source::FashionMnist => FASHION_FILES.iter().map(|f| f.file_name()).collect(),
        Source::Stl10Small => vec![
            "stl10_binary/train_X.bin",
            "stl10_binary/train_y.bin",
            "stl10_binary/test_X.bin",
            "stl10_binary/test_y.bin",
        ],
        Source::Builtin(_) => vec!["train.safetensors", "test.safetensors"],
    }
}

fn write_split(split: &Split, path: &Path) -> Result<()> {
    use safetensors::tensor::{serialize_to_file, Dtype, TensorView};
    let labels: Vec<u8> = split.labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    let views = vec![
        (
            "images",
            TensorView::new(
                Dtype::U8,
                vec![split.len(), split.height, split.width, split.channels],
                &split.images,
            )?,
        ),
        ("labels", TensorView::new(Dtype::U16, vec![split.len()], &labels)?),
    ];
    serialize_to_file(views, None, path)?;
    Ok(())
}

fn read_split(path: &Path) -> Result<Split> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let st = safetensors::SafeTensors::deserialize(&bytes)?;
    let images = st.tensor("images")?;
    let labels = st.tensor("labels")?;
    let shape = images.shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::Format(format!("{}: images must be rank 4", path.display())));
    }
    Ok(Split {
        images: images.data().to_vec(),
        labels: labels
            .data()
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .collect(),
        height: shape[1],
        width: shape[2],
        channels: shape[3],
    })
}

/// Exclusive advisory lock on a dataset directory, released on drop.
struct DirLock(File);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        let f = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        f.lock().map_err(|e| Error::io(&path, e))?;
        Ok(Self(f))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

fn materialize(spec: &DatasetSpec, raw: &Path) -> Result<()> {
    std::fs::create_dir_all(raw).map_err(|e| Error::io(raw, e))?;
    let required = required_files(&spec.source);
    if required.iter().all(|f| raw.join(f).exists()) {
        return Ok(());
    }
    match &spec.source {
        Source::Builtin(s) => {
            let (train, test) = synth::generate(s);
            write_split(&train, &raw.join("train.safetensors"))?;
            write_split(&test, &raw.join("test.safetensors"))?;
        }
        source => {
            for remote in remote_files(source) {
                let archive = raw.join(remote.file_name());
                if !archive.exists() {
                    fetch::download(remote, &archive)?;
                } else {
                    let found = md5_file(&archive)?;
                    if found != remote.md5 {
                        return Err(Error::DigestMismatch {
                            path: archive,
                            expected: remote.md5.into(),
                            found,
                        });
                    }
                }
                if remote.untar {
                    fetch::untar_gz(&archive, raw)?;
                }
            }
        }
    }
    if let Some(missing) = required.iter().find(|f| !raw.join(f).exists()) {
        return Err(Error::Format(format!(
            "{}: expected file {missing} after fetching",
            spec.name
        )));
    }
    Ok(())
}

fn decode(spec: &DatasetSpec, raw: &Path) -> Result<(Split, Split, Vec<String>)> {
    let names = |list: &[&str]| list.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    Ok(match &spec.source {
        Source::Cifar10 => {
            let dir = raw.join("cifar-10-batches-bin");
            let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
            (
                formats::read_cifar(&train, 1)?,
                formats::read_cifar(&[dir.join("test_batch.bin")], 1)?,
                names(&CIFAR10_CLASSES),
            )
        }
        Source::Cifar100 => {
            let dir = raw.join("cifar-100-binary");
            (
                formats::read_cifar(&[dir.join("train.bin")], 2)?,
                formats::read_cifar(&[dir.join("test.bin")], 2)?,
                names(&CIFAR100_CLASSES),
            )
        }
        Source::FashionMnist => {
            let f = |i: usize| raw.join(FASHION_FILES[i].file_name());
            (
                formats::read_idx(&f(0), &f(1), 2)?.to_rgb(),
                formats::read_idx(&f(2), &f(3), 2)?.to_rgb(),
                names(&FASHION_CLASSES),
            )
        }
        Source::Stl10Small => {
            let dir = raw.join("stl10_binary");
            (
                formats::read_stl10(&dir.join("train_X.bin"), &dir.join("train_y.bin"), 64)?,
                formats::read_stl10(&dir.join("test_X.bin"), &dir.join("test_y.bin"), 64)?,
                names(&STL10_CLASSES),
            )
        }
        Source::Builtin(s) => (
            read_split(&raw.join("train.safetensors"))?.to_rgb(),
            read_split(&raw.join("test.safetensors"))?.to_rgb(),
            s.class_names(),
        ),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads (fetching or generating on first use) a registered dataset.
pub fn load_dataset(name: &str, root: &Path) -> Result<DatasetHandle> {
    let spec = dataset_spec(name)?;
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let _lock = DirLock::acquire(&dir)?;
    let raw = dir.join("raw");
    let digest_path = dir.join("digest.json");
    let cache_hit = digest_path.exists();
    let digests = if cache_hit {
        let text = std::fs::read_to_string(&digest_path).map_err(|e| Error::io(&digest_path, e))?;
        let recorded: DigestFile = serde_json::from_str(&text)?;
        for (file, expected) in &recorded.files {
            let path = raw.join(file);
            let found = if path.exists() { sha256_file(&path)? } else { "missing".into() };
            if &found != expected {
                return Err(Error::DigestMismatch {
                    path,
                    expected: expected.clone(),
                    found,
                });
            }
        }
        recorded
    } else {
        materialize(&spec, &raw)?;
        let mut files = BTreeMap::new();
        for f in required_files(&spec.source) {
            files.insert(f.to_string(), sha256_file(&raw.join(f))?);
        }
        let d = DigestFile { files };
        write_json(&digest_path, &d)?;
        d
    };

    let (train, test, class_names) = decode(&spec, &raw)?;
    if class_names.len() != spec.num_classes {
        return Err(Error::Format(format!("{name}: class table size mismatch")));
    }
    let stats_path = dir.join("stats.json");
    let stats = match std::fs::read_to_string(&stats_path) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(_) => {
            let s = ChannelStats::compute(&train);
            write_json(&stats_path, &s)?;
            s
        }
    };
    let mut h = Sha256::new();
    h.update(name.as_bytes());
    for (f, d) in &digests.files {
        h.update(f.as_bytes());
        h.update(d.as_bytes());
    }
    Ok(DatasetHandle {
        name: name.to_string(),
        class_names,
        train: Arc::new(train),
        test: Arc::new(test),
        stats,
        cache_hit,
        content_digest: hex::encode(h.finalize()),
    })
}
