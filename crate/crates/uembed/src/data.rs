//! Dataset ingestion: market-style directories, synthetic generation,
//! train/query/gallery splitting, and portable image files.
//!
//! The only image codec built in is binary PPM (P6), which keeps the crate
//! dependency-light; filenames with other image extensions index fine but
//! fail at load time with a decode error naming the path.

use crate::rng::{seed_chain, Rng};
use crate::tensor::Tensor;
use crate::train::TrainSample;
use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum DataError {
    EmptyDataset { detail: String },
    InvalidConfig { detail: String },
    Decode { path: PathBuf, detail: String },
    Io(std::io::Error),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::EmptyDataset { detail } => write!(f, "empty dataset: {detail}"),
            DataError::InvalidConfig { detail } => write!(f, "invalid data config: {detail}"),
            DataError::Decode { path, detail } => {
                write!(f, "cannot decode {}: {detail}", path.display())
            }
            DataError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

/// Where an entry's pixels live: a file on disk or a slot in the in-memory
/// store of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleHandle {
    File(PathBuf),
    Memory(usize),
}

#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub handle: SampleHandle,
    /// Raw identity as found in the source (-1/0 mark distractors).
    pub raw_id: i64,
    /// Contiguous training label in [0, K); present on train entries only.
    pub label: Option<usize>,
    pub cam: u32,
    pub split: Split,
    pub distractor: bool,
}

/// Catalog of one dataset: entries, the train-label mapping, and any
/// filenames that failed to parse.
#[derive(Debug, Clone, Default)]
pub struct DatasetIndex {
    pub entries: Vec<IndexEntry>,
    pub classes: usize,
    pub relabel: BTreeMap<i64, usize>,
    pub rejects: Vec<String>,
}

impl DatasetIndex {
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }
}

/// An index plus loaded sample tensors (vectors or images).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub index: DatasetIndex,
    store: Vec<Tensor>,
}

impl Dataset {
    /// Loads every file-backed entry through the PPM decoder.
    pub fn load(index: DatasetIndex) -> Result<Dataset> {
        let mut store = Vec::with_capacity(index.entries.len());
        let mut entries = index.entries.clone();
        for entry in &mut entries {
            match &entry.handle {
                SampleHandle::File(path) => {
                    store.push(load_image(path)?);
                    entry.handle = SampleHandle::Memory(store.len() - 1);
                }
                SampleHandle::Memory(_) => {
                    return Err(DataError::InvalidConfig {
                        detail: "index already holds memory handles; use Dataset::from_memory".into(),
                    })
                }
            }
        }
        Ok(Dataset {
            index: DatasetIndex { entries, ..index },
            store,
        })
    }

    pub fn from_memory(index: DatasetIndex, store: Vec<Tensor>) -> Dataset {
        Dataset { index, store }
    }

    pub fn tensor(&self, entry: usize) -> &Tensor {
        match &self.index.entries[entry].handle {
            SampleHandle::Memory(slot) => &self.store[*slot],
            SampleHandle::File(_) => unreachable!("loaded datasets hold memory handles"),
        }
    }

    pub fn len(&self) -> usize {
        self.index.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.entries.is_empty()
    }

    pub fn train_samples(&self) -> Vec<TrainSample> {
        self.index
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == Split::Train && e.label.is_some())
            .map(|(i, e)| TrainSample {
                input: self.tensor(i).clone(),
                label: e.label.unwrap(),
            })
            .collect()
    }

    /// (entry index, raw id, cam) triples of one split.
    pub fn retrieval_side(&self, split: Split) -> Vec<(usize, i64, u32)> {
        self.index
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, e)| (i, e.raw_id, e.cam))
            .collect()
    }
}

// ---- market-style directory indexing ----

/// Parses `ID_cCsS_frame_bbox.ext` stems: identity, then camera after 'c'.
fn parse_market_name(stem: &str) -> Option<(i64, u32)> {
    let mut parts = stem.split('_');
    let id: i64 = parts.next()?.parse().ok()?;
    let cam_part = parts.next()?;
    let rest = cam_part.strip_prefix('c')?;
    let cam_digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    if cam_digits.is_empty() {
        return None;
    }
    Some((id, cam_digits.parse().ok()?))
}

const IMAGE_EXTENSIONS: [&str; 4] = ["ppm", "jpg", "jpeg", "png"];

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn index_one_dir(dir: &Path, split: Split, out: &mut DatasetIndex) -> Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|r| r.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    paths.sort();
    for path in paths {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        match parse_market_name(stem) {
            Some((raw_id, cam)) => out.entries.push(IndexEntry {
                handle: SampleHandle::File(path.clone()),
                raw_id,
                label: None,
                cam,
                split,
                distractor: raw_id == -1 || raw_id == 0,
            }),
            None => out.rejects.push(path.display().to_string()),
        }
    }
    Ok(())
}

/// Indexes a market-style layout: `bounding_box_train/`, `query/`, and
/// `bounding_box_test/` subdirectories when present, otherwise every image
/// directly in `root` as training data. Unparseable filenames land in the
/// rejects report; an index with no entries at all is fatal.
pub fn index_market_dir(root: &Path) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(DataError::EmptyDataset {
            detail: format!("{} is not a directory", root.display()),
        });
    }
    let mut index = DatasetIndex::default();
    let train_dir = root.join("bounding_box_train");
    let query_dir = root.join("query");
    let gallery_dir = root.join("bounding_box_test");
    let has_layout = train_dir.is_dir() || query_dir.is_dir() || gallery_dir.is_dir();
    if has_layout {
        if train_dir.is_dir() {
            index_one_dir(&train_dir, Split::Train, &mut index)?;
        }
        if query_dir.is_dir() {
            index_one_dir(&query_dir, Split::Query, &mut index)?;
        }
        if gallery_dir.is_dir() {
            index_one_dir(&gallery_dir, Split::Gallery, &mut index)?;
        }
    } else {
        index_one_dir(root, Split::Train, &mut index)?;
    }
    if index.entries.is_empty() {
        return Err(DataError::EmptyDataset {
            detail: format!("no parseable images under {}", root.display()),
        });
    }
    relabel_train(&mut index);
    Ok(index)
}

/// Assigns contiguous labels [0, K) to non-distractor training identities,
/// ascending by raw id.
fn relabel_train(index: &mut DatasetIndex) {
    let mut ids: Vec<i64> = index
        .entries
        .iter()
        .filter(|e| e.split == Split::Train && !e.distractor)
        .map(|e| e.raw_id)
        .collect();
    ids.sort_unstable();
    ids.dedup();
    index.relabel = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    index.classes = index.relabel.len();
    for entry in &mut index.entries {
        entry.label = if entry.split == Split::Train && !entry.distractor {
            index.relabel.get(&entry.raw_id).copied()
        } else {
            None
        };
    }
}

// ---- synthetic generation ----

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum SyntheticMode {
    Vector {
        dim: usize,
        mean_scale: f64,
        std: f64,
    },
    Image {
        height: usize,
        width: usize,
        noise_std: f64,
    },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub train_per_class: usize,
    pub query_per_class: usize,
    pub mode: SyntheticMode,
    pub seed: u64,
}

impl SyntheticSpec {
    /// K=10, 60 images per class at 64 x 32, split 40 train / 8 query /
    /// 12 gallery.
    pub fn default_image(seed: u64) -> Self {
        SyntheticSpec {
            classes: 10,
            per_class: 60,
            train_per_class: 40,
            query_per_class: 8,
            mode: SyntheticMode::Image {
                height: 64,
                width: 32,
                noise_std: 0.12,
            },
            seed,
        }
    }

    pub fn default_vector(seed: u64) -> Self {
        SyntheticSpec {
            classes: 10,
            per_class: 30,
            train_per_class: 20,
            query_per_class: 4,
            mode: SyntheticMode::Vector {
                dim: 16,
                mean_scale: 3.0,
                std: 0.4,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(DataError::InvalidConfig {
                detail: "need at least 2 classes".into(),
            });
        }
        let gallery = self
            .per_class
            .checked_sub(self.train_per_class + self.query_per_class);
        if self.train_per_class == 0 || self.query_per_class == 0 || gallery.unwrap_or(0) == 0 {
            return Err(DataError::InvalidConfig {
                detail: format!(
                    "per_class {} must exceed train {} + query {} with gallery left over",
                    self.per_class, self.train_per_class, self.query_per_class
                ),
            });
        }
        let std = match self.mode {
            SyntheticMode::Vector { std, .. } => std,
            SyntheticMode::Image { noise_std, .. } => noise_std,
        };
        if std < 0.0 {
            return Err(DataError::InvalidConfig {
                detail: "noise std must be non-negative".into(),
            });
        }
        if let SyntheticMode::Image { height, width, .. } = self.mode {
            if height < 8 || width < 8 {
                return Err(DataError::InvalidConfig {
                    detail: format!("image extents {height}x{width} too small"),
                });
            }
        }
        Ok(())
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.fract() + 1.0).fract() * 6.0;
    let i = h.floor() as usize % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Class prototype: vertical two-color split plus horizontal stripes whose
/// period is class-specific. Classes come in triples that share colors and
/// differ only in stripe period, so identity hinges partly on texture that
/// blur and downsampling destroy.
fn image_prototype(class: usize, classes: usize, height: usize, width: usize) -> Tensor {
    let group = class / 3;
    let groups = classes.div_ceil(3);
    let hue = group as f64 / groups as f64;
    let left = hsv_to_rgb(hue, 0.8, 0.85);
    let right = hsv_to_rgb(hue + 0.5, 0.7, 0.65);
    let period = [2usize, 3, 5][class % 3];
    let amp = 0.4;
    let mut data = vec![0.0; height * width * 3];
    for y in 0..height {
        let stripe = (y / period).is_multiple_of(2);
        let scale = if stripe { 1.0 } else { 1.0 - amp };
        for x in 0..width {
            let base = if x < width / 2 { &left } else { &right };
            for c in 0..3 {
                data[(y * width + x) * 3 + c] = (base[c] * scale).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![height, width, 3], data).expect("prototype shape")
}

/// Deterministic synthetic dataset. Per class the first `train_per_class`
/// samples are training data (cameras cycling 1..4), the next
/// `query_per_class` are queries on cameras {1, 2}, and the rest gallery on
/// cameras {3, 4}, so every query has cross-camera positives and the
/// same-camera exclusion never strands a query.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut index = DatasetIndex::default();
    let mut store: Vec<Tensor> = Vec::with_capacity(spec.classes * spec.per_class);
    for class in 0..spec.classes {
        let mut rng = Rng::new(seed_chain(&[spec.seed, 0xDA7A, class as u64]));
        let prototype = match spec.mode {
            SyntheticMode::Vector { dim, mean_scale, .. } => {
                Tensor::from_vec((0..dim).map(|_| mean_scale * rng.normal()).collect())
            }
            SyntheticMode::Image { height, width, .. } => {
                image_prototype(class, spec.classes, height, width)
            }
        };
        for i in 0..spec.per_class {
            let noisy = match spec.mode {
                SyntheticMode::Vector { std, .. } => {
                    let mut sample = prototype.clone();
                    for v in sample.data_mut() {
                        *v += std * rng.normal();
                    }
                    sample
                }
                SyntheticMode::Image { noise_std, .. } => {
                    let mut sample = prototype.clone();
                    // global brightness jitter plus per-pixel noise
                    let brightness = rng.uniform(0.85, 1.15);
                    for v in sample.data_mut() {
                        *v = (*v * brightness + noise_std * rng.normal()).clamp(0.0, 1.0);
                    }
                    sample
                }
            };
            let (split, cam) = if i < spec.train_per_class {
                (Split::Train, 1 + (i % 4) as u32)
            } else if i < spec.train_per_class + spec.query_per_class {
                (Split::Query, 1 + (i % 2) as u32)
            } else {
                (Split::Gallery, 3 + (i % 2) as u32)
            };
            store.push(noisy);
            index.entries.push(IndexEntry {
                handle: SampleHandle::Memory(store.len() - 1),
                raw_id: class as i64,
                label: None,
                cam,
                split,
                distractor: false,
            });
        }
    }
    relabel_train(&mut index);
    Ok(Dataset::from_memory(index, store))
}

// ---- splitting policies ----

#[derive(Debug, Clone, PartialEq)]
pub enum SplitPolicy {
    /// Identity-disjoint split: a fraction of identities train, the rest are
    /// divided into query/gallery by camera.
    IdentitySplit { train_fraction: f64, seed: u64 },
}

/// Applies a split policy to a flat index (every entry currently Train).
pub fn split(index: &DatasetIndex, policy: &SplitPolicy) -> Result<DatasetIndex> {
    match *policy {
        SplitPolicy::IdentitySplit { train_fraction, seed } => {
            if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
                return Err(DataError::InvalidConfig {
                    detail: format!("train fraction {train_fraction} outside (0,1)"),
                });
            }
            let mut ids: Vec<i64> = index
                .entries
                .iter()
                .filter(|e| !e.distractor)
                .map(|e| e.raw_id)
                .collect();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() < 2 {
                return Err(DataError::InvalidConfig {
                    detail: "identity split needs at least 2 identities".into(),
                });
            }
            let mut rng = Rng::new(seed);
            rng.shuffle(&mut ids);
            let train_count = ((ids.len() as f64 * train_fraction).round() as usize)
                .clamp(1, ids.len() - 1);
            let train_ids: std::collections::BTreeSet<i64> =
                ids[..train_count].iter().copied().collect();

            // test identities must offer at least one cross-camera pair
            let mut cams_per_test_id: BTreeMap<i64, std::collections::BTreeSet<u32>> = BTreeMap::new();
            for e in index.entries.iter().filter(|e| !e.distractor) {
                if !train_ids.contains(&e.raw_id) {
                    cams_per_test_id.entry(e.raw_id).or_default().insert(e.cam);
                }
            }
            if cams_per_test_id.values().all(|cams| cams.len() < 2) {
                return Err(DataError::InvalidConfig {
                    detail: "no test identity appears under two cameras; cross-camera retrieval impossible".into(),
                });
            }

            let mut out = index.clone();
            for entry in &mut out.entries {
                if entry.distractor {
                    entry.split = Split::Gallery;
                    continue;
                }
                if train_ids.contains(&entry.raw_id) {
                    entry.split = Split::Train;
                } else {
                    // lowest camera holds the queries, the rest the gallery
                    let cams = &cams_per_test_id[&entry.raw_id];
                    let query_cam = *cams.iter().next().unwrap();
                    entry.split = if cams.len() >= 2 && entry.cam == query_cam {
                        Split::Query
                    } else {
                        Split::Gallery
                    };
                }
            }
            relabel_train(&mut out);
            Ok(out)
        }
    }
}

// ---- portable image files (binary PPM, P6) ----

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SaveStats {
    /// Pixels clamped into [0, 1] on save.
    pub clamped: usize,
}

/// Writes an H x W x 3 tensor as binary PPM with maxval 255. Values outside
/// [0, 1] are clamped and counted.
pub fn save_image(image: &Tensor, path: &Path) -> Result<SaveStats> {
    let (h, w) = match image.shape() {
        [h, w, 3] => (*h, *w),
        other => {
            return Err(DataError::InvalidConfig {
                detail: format!("save_image expects [H,W,3], got {other:?}"),
            })
        }
    };
    let mut stats = SaveStats::default();
    let mut bytes = Vec::with_capacity(h * w * 3);
    for &v in image.data() {
        let clamped = v.clamp(0.0, 1.0);
        if clamped != v {
            stats.clamped += 1;
        }
        bytes.push((clamped * 255.0).round() as u8);
    }
    let mut file = std::fs::File::create(path)?;
    write!(file, "P6\n{w} {h}\n255\n")?;
    file.write_all(&bytes)?;
    Ok(stats)
}

fn read_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    // skip whitespace and '#' comments
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return None;
    }
    Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Reads a binary PPM into an H x W x 3 tensor scaled to [0, 1].
pub fn load_image(path: &Path) -> Result<Tensor> {
    let decode = |detail: &str| DataError::Decode {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| decode(&format!("open failed: {e}")))?
        .read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let magic = read_token(&bytes, &mut pos).ok_or_else(|| decode("missing magic"))?;
    if magic != "P6" {
        return Err(decode(&format!(
            "unsupported format {magic:?}; only binary PPM (P6) is built in"
        )));
    }
    let w: usize = read_token(&bytes, &mut pos)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| decode("bad width"))?;
    let h: usize = read_token(&bytes, &mut pos)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| decode("bad height"))?;
    let maxval: usize = read_token(&bytes, &mut pos)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| decode("bad maxval"))?;
    if maxval != 255 {
        return Err(decode(&format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    let need = h * w * 3;
    if bytes.len() < pos + need {
        return Err(decode("truncated pixel data"));
    }
    let data: Vec<f64> = bytes[pos..pos + need].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Tensor::new(vec![h, w, 3], data).expect("ppm shape"))
}

/// Writes a synthetic image dataset to disk in the market-style layout so it
/// can be re-ingested with [`index_market_dir`].
pub fn export_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    let dirs = [
        (Split::Train, root.join("bounding_box_train")),
        (Split::Query, root.join("query")),
        (Split::Gallery, root.join("bounding_box_test")),
    ];
    for (_, dir) in &dirs {
        std::fs::create_dir_all(dir)?;
    }
    let mut frame_counter: BTreeMap<(i64, u32), usize> = BTreeMap::new();
    for (i, entry) in dataset.index.entries.iter().enumerate() {
        let tensor = dataset.tensor(i);
        if tensor.shape().len() != 3 || tensor.shape()[2] != 3 {
            return Err(DataError::InvalidConfig {
                detail: "only image datasets can be exported".into(),
            });
        }
        let frame = frame_counter.entry((entry.raw_id, entry.cam)).or_insert(0);
        *frame += 1;
        let dir = &dirs
            .iter()
            .find(|(s, _)| *s == entry.split)
            .expect("all splits mapped")
            .1;
        // ids shift up by one on disk: 0 and -1 are reserved for distractors
        // in the filename convention
        let disk_id = if entry.distractor { entry.raw_id } else { entry.raw_id + 1 };
        let name = format!("{:04}_c{}s1_{:06}_00.ppm", disk_id, entry.cam, frame);
        save_image(tensor, &dir.join(name))?;
    }
    Ok(())
}
