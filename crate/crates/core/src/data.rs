//! FER-2013 ingestion and preprocessing.
//!
//! The CSV has the header `emotion,pixels,Usage`; `pixels` holds 2304
//! space-separated intensities of a 48x48 grayscale face in row-major
//! order, and `Usage` assigns the row to `Training`, `PublicTest` or
//! `PrivateTest`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{CLASS_NAMES, NUM_CLASSES};
use crate::tensor::{DType, Scalar, Tensor};
use crate::tensorfile::{layout, Container, ContainerWriter};

pub const IMAGE_SIDE: usize = 48;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const CSV_HEADER: [&str; 3] = ["emotion", "pixels", "Usage"];

/// Published FER-2013 totals.
pub const CANONICAL_TOTAL: usize = 35_887;
pub const CANONICAL_CLASS_COUNTS: [usize; NUM_CLASSES] = [4953, 547, 5121, 8989, 6077, 4002, 6198];
pub const CANONICAL_SPLIT_SIZES: [usize; 3] = [28_709, 3_589, 3_589];

/// Side length of the transfer-learning input.
pub const TRANSFER_SIDE: usize = 197;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Usage {
    Training,
    PublicTest,
    PrivateTest,
}

impl Usage {
    pub fn as_str(self) -> &'static str {
        match self {
            Usage::Training => "Training",
            Usage::PublicTest => "PublicTest",
            Usage::PrivateTest => "PrivateTest",
        }
    }
}

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Usage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "Training" => Ok(Usage::Training),
            "PublicTest" => Ok(Usage::PublicTest),
            "PrivateTest" => Ok(Usage::PrivateTest),
            other => Err(format!("unknown usage `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub label: u8,
    /// 48x48 row-major intensities.
    pub pixels: Vec<u8>,
    pub usage: Usage,
    /// 0-based data row in the source file.
    pub row: usize,
}

impl Example {
    pub fn new(label: u8, pixels: Vec<u8>, usage: Usage, row: usize) -> Result<Self> {
        if label as usize >= NUM_CLASSES {
            return Err(Error::InvalidArgument(format!("label {label} outside 0..{NUM_CLASSES}")));
        }
        if pixels.len() != IMAGE_PIXELS {
            return Err(Error::InvalidArgument(format!(
                "expected {IMAGE_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(Example { label, pixels, usage, row })
    }

    /// Stable identifier `<usage>:<row>`.
    pub fn id(&self) -> String {
        format!("{}:{}", self.usage, self.row)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    /// SHA-256 of the source bytes.
    pub digest: String,
}

pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse_fer_csv(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_fer_bytes(path, &bytes)
}

/// Parses CSV content; `path` is only used in error messages.
pub fn parse_fer_bytes(path: &Path, bytes: &[u8]) -> Result<Dataset> {
    let digest = hex(&Sha256::digest(bytes));
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(err(1, "missing header `emotion,pixels,Usage`".into()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let header: Vec<&str> = headers.iter().map(str::trim).collect();
    if header != CSV_HEADER {
        return Err(err(1, format!("expected header `emotion,pixels,Usage`, found `{}`", header.join(","))));
    }

    let mut examples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| err(line, e.to_string()))?;
        if record.len() != 3 {
            return Err(err(line, format!("expected 3 fields, found {}", record.len())));
        }
        let label: u8 = record[0]
            .trim()
            .parse()
            .map_err(|_| err(line, format!("emotion `{}` is not an integer", &record[0])))?;
        if label as usize >= NUM_CLASSES {
            return Err(err(line, format!("emotion {label} outside 0..{}", NUM_CLASSES - 1)));
        }
        let mut pixels = Vec::with_capacity(IMAGE_PIXELS);
        for tok in record[1].split_ascii_whitespace() {
            let v: u16 = tok
                .parse()
                .map_err(|_| err(line, format!("pixel `{tok}` is not a non-negative integer")))?;
            if v > 255 {
                return Err(err(line, format!("pixel {v} outside 0..255")));
            }
            pixels.push(v as u8);
        }
        if pixels.len() != IMAGE_PIXELS {
            return Err(err(line, format!("expected {IMAGE_PIXELS} pixels, found {}", pixels.len())));
        }
        let usage: Usage = record[2].trim().parse().map_err(|e| err(line, e))?;
        examples.push(Example { label, pixels, usage, row });
    }
    let dataset = Dataset { examples, digest };
    for warning in dataset.canonical_deviations() {
        log::warn!("{}: {warning}", path.display());
    }
    Ok(dataset)
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Self {
        Dataset {
            examples,
            digest: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label as usize).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.examples.iter().map(Example::id).collect()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for e in &self.examples {
            counts[e.label as usize] += 1;
        }
        counts
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for e in &self.examples {
            sizes[e.usage as usize] += 1;
        }
        sizes
    }

    /// Differences from the published FER-2013 distribution. Only checked
    /// when the row count claims to be the full dataset; subsets are legal.
    pub fn canonical_deviations(&self) -> Vec<String> {
        if self.len() != CANONICAL_TOTAL {
            return Vec::new();
        }
        let mut out = Vec::new();
        for (k, (&have, &want)) in self.class_counts().iter().zip(&CANONICAL_CLASS_COUNTS).enumerate() {
            if have != want {
                out.push(format!("class {} has {have} examples, published count is {want}", CLASS_NAMES[k]));
            }
        }
        for (k, (&have, &want)) in self.split_sizes().iter().zip(&CANONICAL_SPLIT_SIZES).enumerate() {
            if have != want {
                out.push(format!("split {k} has {have} examples, published size is {want}"));
            }
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            digest: self.digest.clone(),
        }
    }

    /// `n` examples chosen uniformly without replacement, kept in file order.
    pub fn random_subset(&self, n: usize, seed: u64) -> Dataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n);
        idx.sort_unstable();
        self.subset(&idx)
    }

    /// Round-robin over classes until `n` examples are drawn, so class sizes
    /// differ by at most one while every class has examples left.
    pub fn balanced_subset(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pools: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
        for (i, e) in self.examples.iter().enumerate() {
            pools[e.label as usize].push(i);
        }
        for p in pools.iter_mut() {
            p.shuffle(&mut rng);
            p.reverse();
        }
        let mut picked = Vec::with_capacity(n);
        'outer: while picked.len() < n {
            let mut progressed = false;
            for p in pools.iter_mut() {
                if picked.len() == n {
                    break 'outer;
                }
                if let Some(i) = p.pop() {
                    picked.push(i);
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        picked.sort_unstable();
        self.subset(&picked)
    }

    /// Writes the dataset back in FER-2013 CSV form.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidArgument(format!("csv write failed: {e}"));
        w.write_record(CSV_HEADER).map_err(io)?;
        for e in &self.examples {
            let pixels = e.pixels.iter().map(u8::to_string).collect::<Vec<_>>().join(" ");
            w.write_record([e.label.to_string().as_str(), pixels.as_str(), e.usage.as_str()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))
    }

    /// Stacks the normalized images at `indices` into an `[n, 1, 48, 48]`
    /// batch, optionally mirroring the ones flagged in `flip`.
    pub fn batch<T: Scalar>(&self, indices: &[usize], flip: Option<&[bool]>) -> (Tensor<T>, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * IMAGE_PIXELS);
        let mut labels = Vec::with_capacity(indices.len());
        let scale = T::lit(1.0 / 255.0);
        for (k, &i) in indices.iter().enumerate() {
            let e = &self.examples[i];
            let mirrored = flip.is_some_and(|f| f[k]);
            for row in e.pixels.chunks_exact(IMAGE_SIDE) {
                if mirrored {
                    data.extend(row.iter().rev().map(|&p| T::lit(p as f64) * scale));
                } else {
                    data.extend(row.iter().map(|&p| T::lit(p as f64) * scale));
                }
            }
            labels.push(e.label as usize);
        }
        let t = Tensor::from_vec(&[indices.len(), 1, IMAGE_SIDE, IMAGE_SIDE], data).expect("batch extents");
        (t, labels)
    }
}

pub fn split_by_usage(d: &Dataset) -> Splits {
    let pick = |u: Usage| Dataset {
        examples: d.examples.iter().filter(|e| e.usage == u).cloned().collect(),
        digest: d.digest.clone(),
    };
    Splits {
        train: pick(Usage::Training),
        val: pick(Usage::PublicTest),
        test: pick(Usage::PrivateTest),
    }
}

/// Scales intensities to `[0, 1]`, giving a `[1, 48, 48]` tensor.
pub fn normalize<T: Scalar>(e: &Example) -> Tensor<T> {
    let data = e.pixels.iter().map(|&p| T::lit(p as f64 / 255.0)).collect();
    Tensor::from_vec(&[1, IMAGE_SIDE, IMAGE_SIDE], data).expect("48x48 image")
}

/// Inverse of [`normalize`], rounding to the nearest intensity.
pub fn denormalize<T: Scalar>(img: &Tensor<T>) -> Vec<u8> {
    img.as_slice()
        .iter()
        .map(|v| (v.to_f64().unwrap() * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Bilinear resize of a `[c, h, w]` image with corner-aligned sampling:
/// output pixel `(i, j)` reads input coordinate
/// `(i * (h - 1) / (out_h - 1), j * (w - 1) / (out_w - 1))`.
pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [c, h, w] = *img.shape() else {
        return Err(Error::shape("resize_bilinear", format!("expected [c, h, w], got {:?}", img.shape())));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::ZeroExtent(vec![c, out_h, out_w]));
    }
    let coord = |i: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        if dst == 1 || src == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
        let lo = (pos.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        (lo, hi, pos - lo as f64)
    };
    let rows: Vec<_> = (0..out_h).map(|i| coord(i, h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|j| coord(j, w, out_w)).collect();
    let src = img.as_slice();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let at = |y: usize, x: usize| plane[y * w + x].to_f64().unwrap();
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(T::lit(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

/// Grayscale `[1, h, w]` to three identical channels.
pub fn replicate_channels<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let [1, h, w] = *img.shape() else {
        return Err(Error::shape(
            "replicate_channels",
            format!("expected a single-channel [1, h, w] image, got {:?}", img.shape()),
        ));
    };
    let mut data = Vec::with_capacity(3 * img.len());
    for _ in 0..3 {
        data.extend_from_slice(img.as_slice());
    }
    Tensor::from_vec(&[3, h, w], data)
}

/// Normalized, resized to 197x197 and replicated to RGB.
pub fn transfer_input(e: &Example) -> Tensor<f32> {
    let img = normalize::<f32>(e);
    let big = resize_bilinear(&img, TRANSFER_SIDE, TRANSFER_SIDE).expect("valid image");
    replicate_channels(&big).expect("single channel")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: String,
    pub label: u8,
    pub usage: Usage,
}

/// Writes every example as a `[3, 197, 197]` f32 tensor in the checkpoint
/// container; the manifest header lists ids, labels and usages in order.
pub fn export_preprocessed(d: &Dataset, path: &Path) -> Result<()> {
    let records: Vec<RecordMeta> = d
        .examples
        .iter()
        .map(|e| RecordMeta { id: e.id(), label: e.label, usage: e.usage })
        .collect();
    let table = layout(
        records
            .iter()
            .map(|r| (r.id.clone(), vec![3, TRANSFER_SIDE, TRANSFER_SIDE], DType::F32)),
    );
    let header = json!({
        "kind": "fer-preprocessed",
        "source_digest": d.digest,
        "records": records,
    });
    let mut w = ContainerWriter::create(path, header, table)?;
    for e in &d.examples {
        w.write(&transfer_input(e))?;
    }
    w.finish()
}

pub fn read_preprocessed(path: &Path) -> Result<Vec<(RecordMeta, Tensor<f32>)>> {
    let c = Container::read(path)?;
    let records: Vec<RecordMeta> = serde_json::from_value(c.header["records"].clone()).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        message: format!("records: {e}"),
    })?;
    if records.len() != c.tensors.len() {
        return Err(Error::PayloadMismatch {
            path: path.to_path_buf(),
            detail: format!("{} records for {} tensors", records.len(), c.tensors.len()),
        });
    }
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| Ok((r, c.tensor_at(i)?)))
        .collect()
}

/// Reads any `Read` into memory and parses it.
pub fn parse_fer_reader<R: Read>(mut r: R, name: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(name, e))?;
    parse_fer_bytes(name, &bytes)
}
