//! Framework-neutral interchange: a JSON manifest plus one raw blob per
//! tensor (row-major, little-endian `f32`).
//!
//! Blob paths in a manifest are relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::realize::{CompressedLayer, Variant};
use crate::sensitivity::{ExpFit, SensitivityCurve};
use crate::tensor::{ConvShape, GradientTensor, WeightTensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub n: usize,
    pub c: usize,
    pub k: usize,
    pub stride: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub compressible: bool,
    pub weight_blob: String,
    pub gradient_blob: String,
}

impl LayerRecord {
    /// A compressible record with blob names derived from `name`.
    pub fn synthetic(
        name: &str,
        shape: ConvShape,
        stride: usize,
        h_out: usize,
        w_out: usize,
    ) -> Self {
        let stem = sanitize(name);
        Self {
            name: name.to_string(),
            n: shape.n,
            c: shape.c,
            k: shape.k,
            stride,
            h_out,
            w_out,
            compressible: true,
            weight_blob: format!("{stem}.weight.bin"),
            gradient_blob: format!("{stem}.grad.bin"),
        }
    }

    pub fn shape(&self) -> ConvShape {
        ConvShape {
            n: self.n,
            c: self.c,
            k: self.k,
        }
    }

    pub fn spatial(&self) -> u64 {
        self.h_out as u64 * self.w_out as u64
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0
            || self.c == 0
            || self.k == 0
            || self.h_out == 0
            || self.w_out == 0
            || self.stride == 0
        {
            return Err(Error::Manifest(format!(
                "layer `{}` has a zero dimension or stride",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub layers: Vec<LayerRecord>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTensors {
    pub weight: WeightTensor,
    pub gradient: GradientTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkBundle {
    pub layers: Vec<LayerRecord>,
    pub tensors: BTreeMap<String, LayerTensors>,
    pub metadata: BTreeMap<String, String>,
}

impl NetworkBundle {
    pub fn tensors_for(&self, name: &str) -> Option<&LayerTensors> {
        self.tensors.get(name)
    }

    pub fn total_flops(&self) -> u64 {
        self.layers.iter().map(crate::rate::layer_flops).sum()
    }
}

/// Replaces characters that are awkward in file names.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|ch| {
            if ch.is_ascii_alphanumeric() || "-_.".contains(ch) {
                ch
            } else {
                '_'
            }
        })
        .collect()
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn read_blob(path: &Path, expected_len: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected_len * 4 {
        return Err(Error::ByteLength {
            path: path.to_path_buf(),
            expected: expected_len * 4,
            found: bytes.len(),
        });
    }
    bytes
        .chunks_exact(4)
        .enumerate()
        .map(|(i, chunk)| {
            let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
            if v.is_finite() {
                Ok(v as f64)
            } else {
                Err(Error::NonFinite {
                    path: path.to_path_buf(),
                    index: i,
                })
            }
        })
        .collect()
}

pub fn write_blob(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

pub fn load_network(manifest_path: &Path) -> Result<NetworkBundle> {
    let manifest: Manifest = read_json(manifest_path)?;
    let dir = base_dir(manifest_path);
    let mut tensors = BTreeMap::new();
    for rec in &manifest.layers {
        rec.validate()?;
        if tensors.contains_key(&rec.name) {
            return Err(Error::DuplicateLayer(rec.name.clone()));
        }
        let shape = rec.shape();
        let weight =
            WeightTensor::new(shape, read_blob(&dir.join(&rec.weight_blob), shape.len())?)?;
        let gradient = WeightTensor::new(
            shape,
            read_blob(&dir.join(&rec.gradient_blob), shape.len())?,
        )?;
        tensors.insert(rec.name.clone(), LayerTensors { weight, gradient });
    }
    Ok(NetworkBundle {
        layers: manifest.layers,
        tensors,
        metadata: manifest.metadata,
    })
}

/// Writes the manifest and every blob it references.
pub fn save_network(bundle: &NetworkBundle, manifest_path: &Path) -> Result<()> {
    create_parent(manifest_path)?;
    let dir = base_dir(manifest_path);
    for rec in &bundle.layers {
        let t = bundle
            .tensors
            .get(&rec.name)
            .ok_or_else(|| Error::Manifest(format!("no tensors for layer `{}`", rec.name)))?;
        if t.weight.shape() != rec.shape() || t.gradient.shape() != rec.shape() {
            return Err(Error::Shape(format!(
                "tensors of `{}` do not match its record",
                rec.name
            )));
        }
        write_blob(&dir.join(&rec.weight_blob), t.weight.data())?;
        write_blob(&dir.join(&rec.gradient_blob), t.gradient.data())?;
    }
    write_json(
        manifest_path,
        &Manifest {
            layers: bundle.layers.clone(),
            metadata: bundle.metadata.clone(),
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Pruned,
    Decomposed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub path: String,
    pub shape: [usize; 4],
}

/// One layer of a compressed manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressedRecord {
    pub name: String,
    pub n: usize,
    pub c: usize,
    pub k: usize,
    pub stride: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub compressible: bool,
    pub variant: VariantKind,
    pub kept_channels: Vec<usize>,
    pub r_bar: Option<usize>,
    /// `[weights]` for pruned layers, `[w1, w2]` for decomposed ones.
    pub blobs: Vec<BlobRef>,
    #[serde(default)]
    pub r_target: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompressedManifest {
    pub layers: Vec<CompressedRecord>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// A realized layer with the record of the layer it replaces.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedEntry {
    pub record: LayerRecord,
    pub layer: CompressedLayer,
    pub r_target: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedNetwork {
    pub entries: Vec<CompressedEntry>,
    pub metadata: BTreeMap<String, String>,
}

fn shape4(t: &WeightTensor) -> [usize; 4] {
    let s = t.shape();
    [s.n, s.c, s.k, s.k]
}

pub fn save_compressed(
    entries: &[CompressedEntry],
    metadata: &BTreeMap<String, String>,
    manifest_path: &Path,
) -> Result<()> {
    create_parent(manifest_path)?;
    let dir = base_dir(manifest_path);
    let mut layers = Vec::with_capacity(entries.len());
    for (idx, entry) in entries.iter().enumerate() {
        let (rec, layer) = (&entry.record, &entry.layer);
        layer.validate().map_err(|e| e.in_layer(&rec.name))?;
        if layer.out_channels() != rec.n
            || layer.kernel() != rec.k
            || layer.kept_channels.iter().any(|&ch| ch >= rec.c)
        {
            return Err(
                Error::Realize(format!("layer does not fit record {:?}", rec.shape()))
                    .in_layer(&rec.name),
            );
        }
        let stem = format!("{idx:03}_{}", sanitize(&rec.name));
        let tensors: Vec<(&str, &WeightTensor)> = match &layer.variant {
            Variant::PrunedOnly { weights } => vec![("weight", weights)],
            Variant::Decomposed { w1, w2 } => vec![("w1", w1), ("w2", w2)],
        };
        let mut blobs = Vec::new();
        for (role, t) in tensors {
            let file = format!("{stem}.{role}.bin");
            write_blob(&dir.join(&file), t.data())?;
            blobs.push(BlobRef {
                path: file,
                shape: shape4(t),
            });
        }
        layers.push(CompressedRecord {
            name: rec.name.clone(),
            n: rec.n,
            c: rec.c,
            k: rec.k,
            stride: rec.stride,
            h_out: rec.h_out,
            w_out: rec.w_out,
            compressible: rec.compressible,
            variant: match layer.variant {
                Variant::PrunedOnly { .. } => VariantKind::Pruned,
                Variant::Decomposed { .. } => VariantKind::Decomposed,
            },
            kept_channels: layer.kept_channels.clone(),
            r_bar: layer.r_bar(),
            blobs,
            r_target: entry.r_target,
        });
    }
    write_json(
        manifest_path,
        &CompressedManifest {
            layers,
            metadata: metadata.clone(),
        },
    )
}

fn load_blob_tensor(dir: &Path, blob: &BlobRef) -> Result<WeightTensor> {
    let [n, c, k, k2] = blob.shape;
    if k != k2 {
        return Err(Error::Manifest(format!(
            "blob {} has a non-square kernel",
            blob.path
        )));
    }
    let shape = ConvShape::new(n, c, k)?;
    WeightTensor::new(shape, read_blob(&dir.join(&blob.path), shape.len())?)
}

pub fn load_compressed(manifest_path: &Path) -> Result<CompressedNetwork> {
    let manifest: CompressedManifest = read_json(manifest_path)?;
    let dir = base_dir(manifest_path);
    let mut seen = std::collections::BTreeSet::new();
    let mut entries = Vec::with_capacity(manifest.layers.len());
    for rec in manifest.layers {
        if !seen.insert(rec.name.clone()) {
            return Err(Error::DuplicateLayer(rec.name));
        }
        let variant = match (rec.variant, rec.blobs.as_slice()) {
            (VariantKind::Pruned, [w]) => Variant::PrunedOnly {
                weights: load_blob_tensor(&dir, w)?,
            },
            (VariantKind::Decomposed, [w1, w2]) => Variant::Decomposed {
                w1: load_blob_tensor(&dir, w1)?,
                w2: load_blob_tensor(&dir, w2)?,
            },
            _ => {
                return Err(Error::Manifest(format!(
                    "layer `{}`: wrong number of blobs for {:?}",
                    rec.name, rec.variant
                )))
            }
        };
        let layer = CompressedLayer::new(variant, rec.kept_channels, rec.name.clone())
            .map_err(|e| e.in_layer(&rec.name))?;
        if layer.r_bar() != rec.r_bar || layer.out_channels() != rec.n || layer.kernel() != rec.k {
            return Err(Error::Manifest(format!(
                "layer `{}`: blobs disagree with record",
                rec.name
            )));
        }
        let record = LayerRecord {
            name: rec.name,
            n: rec.n,
            c: rec.c,
            k: rec.k,
            stride: rec.stride,
            h_out: rec.h_out,
            w_out: rec.w_out,
            compressible: rec.compressible,
            weight_blob: String::new(),
            gradient_blob: String::new(),
        };
        record.validate()?;
        entries.push(CompressedEntry {
            record,
            layer,
            r_target: rec.r_target,
        });
    }
    Ok(CompressedNetwork {
        entries,
        metadata: manifest.metadata,
    })
}

fn fmt_value(v: f64) -> String {
    format!("{v:.15e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// File name of a layer's curve inside the sensitivity directory.
pub fn curve_file_name(index: usize, layer: &str) -> String {
    format!("{index:03}_{}.csv", sanitize(layer))
}

pub const SUMMARY_FILE: &str = "summary.csv";

/// Writes one `R,I` file per curve and a `layer,a,b,r_squared` summary,
/// which is header-only when `curves` is empty.
pub fn write_sensitivity_csv(curves: &[(String, SensitivityCurve)], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (idx, (name, curve)) in curves.iter().enumerate() {
        let path = dir.join(curve_file_name(idx, name));
        let mut w = csv_writer(&path)?;
        w.write_record(["R", "I"]).map_err(csv_err(&path))?;
        for &(r, i) in &curve.points {
            w.write_record([fmt_value(r), fmt_value(i)])
                .map_err(csv_err(&path))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(SUMMARY_FILE);
    let mut w = csv_writer(&path)?;
    w.write_record(["layer", "a", "b", "r_squared"])
        .map_err(csv_err(&path))?;
    for (name, curve) in curves {
        w.write_record([
            name.clone(),
            fmt_value(curve.a),
            fmt_value(curve.b),
            fmt_value(curve.r_squared),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    rdr.deserialize::<(f64, f64)>()
        .map(|row| row.map_err(csv_err(path)))
        .collect()
}

pub fn read_sensitivity_summary(path: &Path) -> Result<Vec<(String, ExpFit)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    rdr.deserialize::<(String, f64, f64, f64)>()
        .map(|row| {
            let (name, a, b, r_squared) = row.map_err(csv_err(path))?;
            Ok((name, ExpFit { a, b, r_squared }))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub compressible: bool,
    pub flops_before: u64,
    pub flops_after: u64,
    pub params_before: u64,
    pub params_after: u64,
    #[serde(rename = "R_target")]
    pub r_target: f64,
    #[serde(rename = "R_achieved")]
    pub r_achieved: f64,
    pub t1: usize,
    pub t2: usize,
    pub fraction_removed_by_pruning: f64,
    pub fraction_removed_by_decomposition: f64,
}

fn removal_fractions(t1: usize, t2: usize) -> (f64, f64) {
    let total = t1 + t2;
    if total == 0 {
        (0.0, 0.0)
    } else {
        (t1 as f64 / total as f64, t2 as f64 / total as f64)
    }
}

impl LayerReport {
    pub fn new(entry: &CompressedEntry) -> Self {
        let (rec, layer) = (&entry.record, &entry.layer);
        let shape = rec.shape();
        let t1 = rec.c - layer.kept_channels.len();
        let t2 = layer
            .r_bar()
            .map_or(0, |r_bar| shape.full_rank().saturating_sub(r_bar));
        let (by_pruning, by_decomposition) = removal_fractions(t1, t2);
        Self {
            name: rec.name.clone(),
            compressible: rec.compressible,
            flops_before: crate::rate::layer_flops(rec),
            flops_after: crate::rate::compressed_flops(layer, rec),
            params_before: shape.params(),
            params_after: layer.param_count(),
            r_target: entry.r_target,
            r_achieved: crate::rate::compression_rate(
                shape.n,
                shape.c,
                shape.k,
                t1,
                t2,
                shape.full_rank(),
            ),
            t1,
            t2,
            fraction_removed_by_pruning: by_pruning,
            fraction_removed_by_decomposition: by_decomposition,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTotals {
    pub flops_before: u64,
    pub flops_after: u64,
    pub params_before: u64,
    pub params_after: u64,
    pub t1: usize,
    pub t2: usize,
    pub fraction_removed_by_pruning: f64,
    pub fraction_removed_by_decomposition: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub layers: Vec<LayerReport>,
    pub totals: ReportTotals,
    /// FLOPs reduction of the whole network.
    pub overall_rate_achieved: f64,
}

impl CompressionReport {
    pub fn from_layers(layers: Vec<LayerReport>) -> Self {
        let mut totals = ReportTotals::default();
        for l in &layers {
            totals.flops_before += l.flops_before;
            totals.flops_after += l.flops_after;
            totals.params_before += l.params_before;
            totals.params_after += l.params_after;
            totals.t1 += l.t1;
            totals.t2 += l.t2;
        }
        let (p, d) = removal_fractions(totals.t1, totals.t2);
        totals.fraction_removed_by_pruning = p;
        totals.fraction_removed_by_decomposition = d;
        let overall_rate_achieved = if totals.flops_before == 0 {
            0.0
        } else {
            1.0 - totals.flops_after as f64 / totals.flops_before as f64
        };
        Self {
            layers,
            totals,
            overall_rate_achieved,
        }
    }

    pub fn from_network(network: &CompressedNetwork) -> Self {
        Self::from_layers(network.entries.iter().map(LayerReport::new).collect())
    }

    pub fn table(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:>12} {:>12} {:>10} {:>10} {:>8} {:>8} {:>5} {:>5} {:>7} {:>7}",
            "layer",
            "FLOPs",
            "FLOPs(cmp)",
            "params",
            "params(c)",
            "R_tgt",
            "R_ach",
            "t1",
            "t2",
            "prune%",
            "decomp%"
        );
        let row =
            |out: &mut String,
             name: &str,
             fb: u64,
             fa: u64,
             pb: u64,
             pa: u64,
             rt: Option<f64>,
             ra: f64,
             t1: usize,
             t2: usize,
             fp: f64,
             fd: f64| {
                let rt = rt.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
                let _ =
                    writeln!(
                out,
                "{:<20} {:>12} {:>12} {:>10} {:>10} {:>8} {:>8.4} {:>5} {:>5} {:>7.1} {:>7.1}",
                name, fb, fa, pb, pa, rt, ra, t1, t2, fp * 100.0, fd * 100.0
            );
            };
        for l in &self.layers {
            row(
                &mut out,
                &l.name,
                l.flops_before,
                l.flops_after,
                l.params_before,
                l.params_after,
                Some(l.r_target),
                l.r_achieved,
                l.t1,
                l.t2,
                l.fraction_removed_by_pruning,
                l.fraction_removed_by_decomposition,
            );
        }
        let t = &self.totals;
        row(
            &mut out,
            "TOTAL",
            t.flops_before,
            t.flops_after,
            t.params_before,
            t.params_after,
            None,
            self.overall_rate_achieved,
            t.t1,
            t.t2,
            t.fraction_removed_by_pruning,
            t.fraction_removed_by_decomposition,
        );
        out
    }
}

/// Writes the report as JSON at `path` and as a table next to it (`.txt`).
pub fn write_report(report: &CompressionReport, path: &Path) -> Result<()> {
    create_parent(path)?;
    write_json(path, report)?;
    let table = path.with_extension("txt");
    fs::write(&table, report.table()).map_err(|e| Error::io(&table, e))
}

pub fn read_report(path: &Path) -> Result<CompressionReport> {
    read_json(path)
}

pub(crate) fn read_json_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    read_json(path)
}

pub(crate) fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    write_json(path, value)
}
