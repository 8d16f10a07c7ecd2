//! Model JSON documents and raw little-endian field binaries with JSON sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::distortion::FieldArray;
use crate::error::{Error, Result};
use crate::field::{CovarianceKernel, LagTable, Lattice, Partition, PiecewiseField, RegionSpec, SpectrumMethod, SpectrumOptions, DEFAULT_DENSE_CAP};
use crate::sampler::SampleBatch;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableEntry {
    lag: Vec<i64>,
    value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelDoc {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    length_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    table: Option<Vec<TableEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    compact_support: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionDoc {
    mean: f64,
    kernel: KernelDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpectrumDoc {
    #[serde(default = "default_method")]
    method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tile: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dense_cap: Option<usize>,
}

fn default_method() -> String {
    "bccb".into()
}

impl Default for SpectrumDoc {
    fn default() -> Self {
        SpectrumDoc { method: default_method(), tile: None, dense_cap: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    dims: Vec<usize>,
    /// Run-length encoded labels in row-major order: `[label, run]` pairs.
    labels: Vec<(usize, usize)>,
    regions: Vec<RegionDoc>,
    #[serde(default)]
    spectrum: SpectrumDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<Value>,
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

fn kernel_doc(k: &CovarianceKernel) -> KernelDoc {
    let mut d = KernelDoc { kind: k.kind().into(), variance: None, length_scale: None, table: None, compact_support: None };
    match k {
        CovarianceKernel::White { variance } => d.variance = Some(*variance),
        CovarianceKernel::Exponential { variance, length_scale }
        | CovarianceKernel::SquaredExponential { variance, length_scale } => {
            d.variance = Some(*variance);
            d.length_scale = Some(*length_scale);
        }
        CovarianceKernel::Tabulated(t) => {
            // one entry per ± pair is enough; the mirror is implied
            let entries = t
                .entries()
                .into_iter()
                .filter(|(lag, _)| lag.iter().find(|&&h| h != 0).is_none_or(|&h| h > 0))
                .map(|(lag, value)| TableEntry { lag, value })
                .collect();
            d.table = Some(entries);
            d.compact_support = Some(t.compact_support);
        }
    }
    d
}

fn kernel_from_doc(d: &KernelDoc, ndim: usize) -> Result<CovarianceKernel> {
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| schema(format!("kernel '{}' needs '{name}'", d.kind)));
    let k = match d.kind.as_str() {
        "white" => CovarianceKernel::white(need(d.variance, "variance")?),
        "exponential" => CovarianceKernel::exponential(need(d.variance, "variance")?, need(d.length_scale, "length_scale")?),
        "squared_exponential" => {
            CovarianceKernel::squared_exponential(need(d.variance, "variance")?, need(d.length_scale, "length_scale")?)
        }
        "tabulated" => {
            let table = d.table.as_ref().ok_or_else(|| schema("tabulated kernel needs 'table'"))?;
            let entries: Vec<(Vec<i64>, f64)> = table.iter().map(|e| (e.lag.clone(), e.value)).collect();
            let t = LagTable::from_entries(&entries, ndim, d.compact_support.unwrap_or(false))?;
            if d.variance.is_some_and(|v| t.get(&vec![0; ndim]) != Some(v)) {
                return Err(schema("tabulated 'variance' disagrees with the lag-0 entry"));
            }
            CovarianceKernel::Tabulated(t)
        }
        other => return Err(schema(format!("unknown kernel kind '{other}'"))),
    };
    k.check()?;
    Ok(k)
}

fn rle(labels: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &l in labels {
        match out.last_mut() {
            Some((v, run)) if *v == l => *run += 1,
            _ => out.push((l, 1)),
        }
    }
    out
}

pub fn model_to_json(field: &PiecewiseField, metadata: Option<Value>) -> String {
    let opts = field.options();
    let doc = ModelDoc {
        dims: field.lattice.dims().to_vec(),
        labels: rle(&field.partition.labels),
        regions: field.regions.iter().map(|r| RegionDoc { mean: r.mean, kernel: kernel_doc(&r.kernel) }).collect(),
        spectrum: SpectrumDoc { method: opts.method.as_str().into(), tile: opts.tile, dense_cap: None },
        metadata,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("model serializes");
    s.push('\n');
    s
}

pub fn model_from_json(text: &str) -> Result<PiecewiseField> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
    let lattice = Lattice::new(doc.dims.clone()).map_err(|e| schema(e.to_string()))?;
    let total: usize = doc.labels.iter().map(|(_, r)| r).sum();
    if total != lattice.n() {
        return Err(schema(format!("label runs cover {total} sites, lattice has {}", lattice.n())));
    }
    let labels: Vec<usize> = doc.labels.iter().flat_map(|&(l, r)| std::iter::repeat_n(l, r)).collect();
    let partition = Partition::new(&lattice, labels, doc.regions.len())?;
    let ndim = lattice.ndim();
    let specs = doc
        .regions
        .iter()
        .map(|r| Ok(RegionSpec { mean: r.mean, kernel: kernel_from_doc(&r.kernel, ndim)? }))
        .collect::<Result<Vec<_>>>()?;
    let method: SpectrumMethod = doc.spectrum.method.parse().map_err(|e: Error| schema(e.to_string()))?;
    let opts = SpectrumOptions { method, tile: doc.spectrum.tile, dense_cap: doc.spectrum.dense_cap.unwrap_or(DEFAULT_DENSE_CAP) };
    PiecewiseField::build(lattice, partition, specs, opts)
}

pub fn read_model(path: &Path) -> Result<PiecewiseField> {
    model_from_json(&fs::read_to_string(path)?)
}

/// Metadata block of a model document, if any.
pub fn model_metadata(text: &str) -> Result<Option<Value>> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
    Ok(doc.metadata)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "float32")]
    F32,
    #[serde(rename = "float64")]
    F64,
}

impl std::str::FromStr for Dtype {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float32" | "f32" => Ok(Dtype::F32),
            "float64" | "f64" => Ok(Dtype::F64),
            _ => Err(Error::Config(format!("unknown dtype '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: Vec<usize>,
    pub dtype: Dtype,
    pub order: String,
    pub count: usize,
    /// Number of stacked realizations in the file; `count = realizations · Π dims`.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub realizations: usize,
}

fn one() -> usize {
    1
}

fn is_one(v: &usize) -> bool {
    *v == 1
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

fn encode(values: &[f64], dtype: Dtype) -> Vec<u8> {
    match dtype {
        Dtype::F32 => values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
        Dtype::F64 => values.iter().flat_map(|v| v.to_le_bytes()).collect(),
    }
}

fn decode(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        Dtype::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Write `values` as a raw binary at `bin` plus its sidecar.
pub fn write_field(bin: &Path, field: &FieldArray, dtype: Dtype) -> Result<()> {
    fs::write(bin, encode(&field.values, dtype))?;
    let side = Sidecar {
        dims: field.lattice.dims().to_vec(),
        dtype,
        order: "row_major".into(),
        count: field.values.len(),
        realizations: 1,
    };
    fs::write(sidecar_path(bin), to_json(&side))?;
    Ok(())
}

/// Read a raw binary through its sidecar; stacked files yield several fields.
pub fn read_fields(bin: &Path) -> Result<Vec<FieldArray>> {
    let side_text = fs::read_to_string(sidecar_path(bin))?;
    let side: Sidecar = serde_json::from_str(&side_text).map_err(|e| schema(format!("sidecar: {e}")))?;
    if side.order != "row_major" {
        return Err(schema(format!("unsupported order '{}'", side.order)));
    }
    let lattice = Lattice::new(side.dims.clone()).map_err(|e| schema(e.to_string()))?;
    let n = lattice.n();
    if side.realizations == 0 || side.count != n * side.realizations {
        return Err(schema(format!("count {} does not match dims {:?} x {}", side.count, side.dims, side.realizations)));
    }
    let bytes = fs::read(bin)?;
    let width = match side.dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    if bytes.len() != side.count * width {
        return Err(schema(format!("file has {} bytes, sidecar implies {}", bytes.len(), side.count * width)));
    }
    decode(&bytes, side.dtype).chunks(n).map(|c| FieldArray::new(lattice.clone(), c.to_vec())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dims: Vec<usize>,
    pub dtype: Dtype,
    pub count: usize,
    pub seed: u64,
    pub files: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

/// One binary + sidecar per realization and a manifest listing them.
pub fn write_batch(dir: &Path, batch: &SampleBatch, dtype: Dtype) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(batch.len());
    for (t, f) in batch.fields.iter().enumerate() {
        let name = format!("field_{t:05}.bin");
        write_field(&dir.join(&name), f, dtype)?;
        files.push(name);
    }
    let m = Manifest { dims: batch.lattice().dims().to_vec(), dtype, count: batch.len(), seed: batch.seed, files };
    fs::write(dir.join(MANIFEST), to_json(&m))?;
    Ok(m)
}

/// Load a batch from a directory with a manifest or from one raw binary.
pub fn read_batch(path: &Path) -> Result<SampleBatch> {
    if path.is_dir() {
        let text = fs::read_to_string(path.join(MANIFEST))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| schema(format!("manifest: {e}")))?;
        if m.files.len() != m.count {
            return Err(schema("manifest count disagrees with its file list"));
        }
        let mut fields = Vec::with_capacity(m.count);
        for f in &m.files {
            fields.extend(read_fields(&path.join(f))?);
        }
        SampleBatch::new(fields, m.seed)
    } else {
        SampleBatch::new(read_fields(path)?, 0)
    }
}
