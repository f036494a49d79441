//! Dataset ingestion and preparation: IRIS CSV, genomic sequences, MNIST
//! IDX, the generic feature CSV, angle scaling and device sharding.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp::{dp_pca_fit_transform, pca_fit, DpPcaSpec};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// n x d, one sample per row.
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Dimension(format!("{} feature rows but {} labels", features.rows(), labels.len())));
        }
        if class_count == 0 {
            return Err(Error::invalid("class_count", "must be >= 1"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::invalid("labels", format!("label {bad} outside 0..{class_count}")));
        }
        Ok(Self { name: name.into(), features, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.features.cols()
    }

    /// Rows in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

const IRIS_SPECIES: [&str; 3] = ["setosa", "versicolor", "virginica"];

fn iris_label(raw: &str) -> Option<usize> {
    let name = raw.trim().trim_matches('"').to_ascii_lowercase();
    let name = name.strip_prefix("iris-").unwrap_or(&name);
    IRIS_SPECIES.iter().position(|s| *s == name)
}

/// Loads the UCI IRIS CSV: four numeric columns and a species name
/// (`Iris-setosa` or `setosa` style). A non-numeric first row is treated as
/// a header.
pub fn load_iris(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = BufReader::new(open(path)?);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 1 && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() != 5 {
            return Err(parse_err(path, lineno, format!("expected 5 fields, found {}", fields.len())));
        }
        let mut row = Vec::with_capacity(4);
        for f in &fields[..4] {
            let v: f64 = f.parse().map_err(|_| parse_err(path, lineno, format!("not a number: {f:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, lineno, format!("non-finite value {f:?}")));
            }
            row.push(v);
        }
        let label =
            iris_label(fields[4]).ok_or_else(|| parse_err(path, lineno, format!("unknown label {:?}", fields[4])))?;
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::Format { path: path.to_path_buf(), message: "no data rows".into() });
    }
    Dataset::new("iris", Matrix::from_rows(&rows)?, labels, 3)
}

/// Formats a float with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the feature CSV: header `f0,...,f{d-1},label`, one row per sample.
pub fn write_csv(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let to_err = |e: csv::Error| Error::Format { path: path.to_path_buf(), message: e.to_string() };
    let mut header: Vec<String> = (0..dataset.feature_count()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(to_err)?;
    for (row, y) in dataset.features.row_iter().zip(&dataset.labels) {
        let mut rec: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the feature CSV written by [`write_csv`]. The class count is
/// `max(label) + 1` unless given.
pub fn load_csv(path: impl AsRef<Path>, class_count: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_reader(open(path)?);
    let header = r.headers().map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?.clone();
    let d = header.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        message: "header needs at least one feature column and a label column".into(),
    })?;
    for (i, h) in header.iter().enumerate() {
        let want = if i == d { "label".to_string() } else { format!("f{i}") };
        if h.trim() != want {
            return Err(parse_err(path, 1, format!("column {i} is {h:?}, expected {want:?}")));
        }
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let lineno = i + 2;
        let rec = rec.map_err(|e| parse_err(path, lineno, e.to_string()))?;
        if rec.len() != d + 1 {
            return Err(parse_err(path, lineno, format!("expected {} fields, found {}", d + 1, rec.len())));
        }
        for f in rec.iter().take(d) {
            let v: f64 = f.trim().parse().map_err(|_| parse_err(path, lineno, format!("not a number: {f:?}")))?;
            data.push(v);
        }
        let y = &rec[d];
        labels.push(y.trim().parse::<usize>().map_err(|_| parse_err(path, lineno, format!("bad label {y:?}")))?);
    }
    let classes = class_count.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    let name = path.file_stem().map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, Matrix::from_vec(labels.len(), d, data)?, labels, classes)
}

/// Largest float strictly below `upper`.
fn below(upper: f64) -> f64 {
    f64::from_bits(upper.to_bits() - 1)
}

/// Per-feature min-max scaling into [0, upper). The column maximum lands on
/// the largest float below `upper`; constant columns become 0.
pub fn scale_to_range(dataset: &Dataset, upper: f64) -> Result<Dataset> {
    if !(upper > 0.0) || !upper.is_finite() {
        return Err(Error::invalid("angle_range", format!("must be a positive finite number, got {upper}")));
    }
    let d = dataset.features.cols();
    let mut out = dataset.clone();
    let top = below(upper);
    for c in 0..d {
        let col = dataset.features.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for (r, &v) in col.iter().enumerate() {
            out.features[(r, c)] = if span > 0.0 { ((v - lo) / span * upper).min(top) } else { 0.0 };
        }
    }
    Ok(out)
}

/// Feature-map angle conditioning: [`scale_to_range`] with upper bound 2π.
pub fn scale_to_angles(dataset: &Dataset) -> Dataset {
    scale_to_range(dataset, 2.0 * PI).expect("2π is a valid range")
}

/// Ordinal value of a nucleotide.
pub fn nucleotide_value(base: u8) -> Option<f64> {
    match base.to_ascii_uppercase() {
        b'A' => Some(0.25),
        b'C' => Some(0.5),
        b'G' => Some(0.75),
        b'T' => Some(1.0),
        _ => None,
    }
}

/// A labelled sequence as stored in a genomic file (`SEQUENCE<TAB>LABEL`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceRecord {
    pub sequence: String,
    pub label: usize,
}

pub fn read_genomic(path: impl AsRef<Path>) -> Result<Vec<SequenceRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (seq, label) =
            line.split_once('\t').ok_or_else(|| parse_err(path, lineno, "expected SEQUENCE<TAB>LABEL"))?;
        let seq = seq.trim();
        if let Some(bad) = seq.bytes().find(|&b| nucleotide_value(b).is_none()) {
            return Err(parse_err(path, lineno, format!("invalid nucleotide {:?}", bad as char)));
        }
        let label = match label.trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(path, lineno, format!("label must be 0 or 1, got {other:?}"))),
        };
        out.push(SequenceRecord { sequence: seq.to_string(), label });
    }
    Ok(out)
}

pub fn write_genomic(path: impl AsRef<Path>, records: &[SequenceRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for r in records {
        writeln!(w, "{}\t{}", r.sequence, r.label).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sequence length used by the generator.
pub const GENOMIC_LENGTH: usize = 40;

const BASES: [u8; 4] = *b"ACGT";

// Row = current base (A, C, G, T), column = next base.
const CHAIN_AT_RICH: [[f64; 4]; 4] =
    [[0.50, 0.10, 0.10, 0.30], [0.35, 0.15, 0.15, 0.35], [0.35, 0.15, 0.15, 0.35], [0.30, 0.10, 0.10, 0.50]];
const CHAIN_GC_RICH: [[f64; 4]; 4] =
    [[0.15, 0.35, 0.35, 0.15], [0.10, 0.50, 0.30, 0.10], [0.10, 0.30, 0.50, 0.10], [0.15, 0.35, 0.35, 0.15]];

fn draw(probs: &[f64; 4], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    3
}

/// Synthetic two-class corpus: label 0 sequences follow an AT-rich Markov
/// chain, label 1 a GC-rich one. Labels alternate 0, 1, 0, ... so any even
/// count is exactly balanced.
pub fn generate_genomic<R: Rng + ?Sized>(count: usize, length: usize, rng: &mut R) -> Vec<SequenceRecord> {
    let mut rng = rng;
    (0..count)
        .map(|i| {
            let label = i % 2;
            let chain = if label == 0 { &CHAIN_AT_RICH } else { &CHAIN_GC_RICH };
            let mut state = rng.gen_range(0..4);
            let mut seq = Vec::with_capacity(length);
            for _ in 0..length {
                seq.push(BASES[state]);
                state = draw(&chain[state], &mut rng);
            }
            SequenceRecord { sequence: String::from_utf8(seq).expect("ASCII bases"), label }
        })
        .collect()
}

/// DP-PCA budget for data preparation. Features are clipped to [0, 1] and
/// row norms to `data_norm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpPcaBudget {
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_data_norm")]
    pub data_norm: f64,
}

fn default_delta() -> f64 {
    1e-5
}

fn default_data_norm() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenomicEncoding {
    pub k_features: usize,
    /// Pad (with 0) or truncate to this length; defaults to the longest
    /// sequence.
    #[serde(default)]
    pub length: Option<usize>,
    #[serde(default)]
    pub dp: Option<DpPcaBudget>,
}

impl GenomicEncoding {
    pub fn new(k_features: usize) -> Self {
        Self { k_features, length: None, dp: None }
    }
}

/// Ordinal per-position matrix, padded with zeros / truncated to `length`.
pub fn ordinal_matrix(records: &[SequenceRecord], length: usize) -> Result<Matrix> {
    let mut data = vec![0.0; records.len() * length];
    for (r, rec) in records.iter().enumerate() {
        for (c, b) in rec.sequence.bytes().take(length).enumerate() {
            data[r * length + c] = nucleotide_value(b)
                .ok_or_else(|| Error::invalid("sequence", format!("invalid nucleotide {:?}", b as char)))?;
        }
    }
    Matrix::from_vec(records.len(), length, data)
}

/// Ordinal encoding, PCA (or DP-PCA) to `k_features` columns, then angle
/// scaling into [0, 2π).
pub fn encode_sequences<R: Rng + ?Sized>(
    records: &[SequenceRecord],
    encoding: &GenomicEncoding,
    rng: &mut R,
) -> Result<Dataset> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let length = encoding.length.unwrap_or_else(|| records.iter().map(|r| r.sequence.len()).max().unwrap_or(0));
    if length == 0 {
        return Err(Error::invalid("length", "sequences are empty"));
    }
    if encoding.k_features == 0 || encoding.k_features > length {
        return Err(Error::invalid("k_features", format!("must be in 1..={length}, got {}", encoding.k_features)));
    }
    let x = ordinal_matrix(records, length)?;
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let projected = match encoding.dp {
        None => pca_fit(&x, encoding.k_features)?.transform(&x)?,
        Some(dp) => {
            let spec = DpPcaSpec {
                n_components: encoding.k_features,
                epsilon: dp.epsilon,
                delta: dp.delta,
                bounds: crate::dp::FeatureBounds::Uniform(0.0, 1.0),
                data_norm: dp.data_norm,
            };
            dp_pca_fit_transform(&x, &labels, &spec, rng)?.projected
        }
    };
    let ds = Dataset::new("genomic", projected, labels, 2)?;
    Ok(scale_to_angles(&ds))
}

pub fn encode_genomic<R: Rng + ?Sized>(
    path: impl AsRef<Path>,
    encoding: &GenomicEncoding,
    rng: &mut R,
) -> Result<Dataset> {
    encode_sequences(&read_genomic(path)?, encoding, rng)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    open(path)?.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format { path: path.to_path_buf(), message: format!("gzip: {e}") })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format { path: path.to_path_buf(), message: "truncated header".into() })
}

/// Parsed IDX image file: `count` images of `rows x cols` bytes.
struct IdxImages {
    count: usize,
    pixels_per_image: usize,
    pixels: Vec<u8>,
}

fn parse_idx_images(bytes: Vec<u8>, path: &Path) -> Result<IdxImages> {
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format { path: path.to_path_buf(), message: format!("bad image magic {magic:#010x}") });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let ppi = rows * cols;
    let need = 16 + count * ppi;
    if bytes.len() < need {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("truncated: header promises {need} bytes, file has {}", bytes.len()),
        });
    }
    let mut pixels = bytes;
    pixels.drain(..16);
    pixels.truncate(count * ppi);
    Ok(IdxImages { count, pixels_per_image: ppi, pixels })
}

fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format { path: path.to_path_buf(), message: format!("bad label magic {magic:#010x}") });
    }
    let count = be_u32(bytes, 4, path)? as usize;
    bytes.get(8..8 + count).map(<[u8]>::to_vec).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        message: format!("truncated: header promises {count} labels, file has {}", bytes.len().saturating_sub(8)),
    })
}

/// Loads an IDX image/label pair (optionally gzipped). Pixels are scaled to
/// [0, 1]. With `keep_digits`, only those digits are kept and relabelled by
/// their position in the list; otherwise all ten are kept.
pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    keep_digits: Option<&[u8]>,
) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_idx_images(read_maybe_gz(ip)?, ip)?;
    let raw_labels = parse_idx_labels(&read_maybe_gz(lp)?, lp)?;
    if raw_labels.len() != images.count {
        return Err(Error::Dimension(format!("{} images but {} labels", images.count, raw_labels.len())));
    }
    let all: Vec<u8> = (0..10).collect();
    let keep = keep_digits.unwrap_or(&all);
    if keep.is_empty() || keep.iter().any(|&d| d > 9) {
        return Err(Error::invalid("keep_digits", format!("must be a non-empty subset of 0..=9, got {keep:?}")));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, &digit) in raw_labels.iter().enumerate() {
        if let Some(pos) = keep.iter().position(|&k| k == digit) {
            let img = &images.pixels[i * images.pixels_per_image..(i + 1) * images.pixels_per_image];
            data.extend(img.iter().map(|&p| f64::from(p) / 255.0));
            labels.push(pos);
        }
    }
    let features = Matrix::from_vec(labels.len(), images.pixels_per_image, data)?;
    Dataset::new("mnist", features, labels, keep.len())
}

/// How a dataset is divided between the server and the devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPlan {
    pub device_count: usize,
    /// Defaults to an equal share of everything left after the server sets.
    #[serde(default)]
    pub samples_per_device: Option<usize>,
    pub server_val_size: usize,
    pub server_test_size: usize,
    #[serde(default = "default_train_fraction")]
    pub local_train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.8
}

impl SplitPlan {
    pub fn new(device_count: usize, server_val_size: usize, server_test_size: usize) -> Self {
        Self {
            device_count,
            samples_per_device: None,
            server_val_size,
            server_test_size,
            local_train_fraction: default_train_fraction(),
        }
    }

    /// Per-device shard size for a dataset of `n` rows.
    pub fn shard_size(&self, n: usize) -> Result<usize> {
        if self.device_count == 0 {
            return Err(Error::invalid("device_count", "must be >= 1"));
        }
        if !(self.local_train_fraction > 0.0 && self.local_train_fraction <= 1.0) {
            return Err(Error::invalid(
                "local_train_fraction",
                format!("must be in (0, 1], got {}", self.local_train_fraction),
            ));
        }
        let server = self.server_val_size + self.server_test_size;
        let per = match self.samples_per_device {
            Some(s) => s,
            None => n.saturating_sub(server) / self.device_count,
        };
        let needed = server + per * self.device_count;
        if per == 0 || needed > n {
            return Err(Error::InsufficientSamples { needed: needed.max(server + self.device_count), available: n });
        }
        Ok(per)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceData {
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shards {
    pub devices: Vec<DeviceData>,
    pub server_val: Dataset,
    pub server_test: Dataset,
}

/// Shuffles once, deals the server validation and test sets first, then
/// equal contiguous shards per device; each shard is split into local
/// train/test by `local_train_fraction` (at least one row on each side
/// when the shard has two or more).
pub fn shard<R: Rng + ?Sized>(dataset: &Dataset, plan: &SplitPlan, rng: &mut R) -> Result<Shards> {
    let n = dataset.len();
    let per = plan.shard_size(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (val, rest) = order.split_at(plan.server_val_size);
    let (test, rest) = rest.split_at(plan.server_test_size);
    // Keep at least one local test row whenever the fraction asks for one.
    let max_train = if plan.local_train_fraction < 1.0 && per >= 2 { per - 1 } else { per };
    let n_train = ((per as f64 * plan.local_train_fraction).round() as usize).clamp(1, max_train);
    let devices = rest
        .chunks_exact(per)
        .take(plan.device_count)
        .map(|chunk| DeviceData { train: dataset.subset(&chunk[..n_train]), test: dataset.subset(&chunk[n_train..]) })
        .collect();
    Ok(Shards { devices, server_val: dataset.subset(val), server_test: dataset.subset(test) })
}
