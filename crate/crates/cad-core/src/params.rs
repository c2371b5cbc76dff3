//! Named parameter store, optimizer steps, and the flat-f32 checkpoint format.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: &str = "cad-ckpt-1";

/// How a parameter participates in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Never updated; stays bit-identical across training.
    Frozen,
    /// Ordinary trainable weight.
    Trainable,
    /// Low-rank adapter factor (trainable, reported separately).
    Lora,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub tensor: Tensor,
    pub kind: ParamKind,
}

/// Ordered name -> parameter map. BTreeMap keeps iteration deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, kind: ParamKind) {
        assert!(
            self.params.insert(name.to_string(), Param { tensor, kind }).is_none(),
            "duplicate parameter name {name}"
        );
    }

    pub fn get(&self, name: &str) -> &Param {
        self.params.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn tensor(&self, name: &str) -> &Tensor {
        &self.get(name).tensor
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.params.get_mut(name).expect("unknown parameter").tensor
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|(_, p)| p.kind != ParamKind::Frozen)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Element counts per kind: (frozen, trainable, lora).
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut frozen = 0;
        let mut trainable = 0;
        let mut lora = 0;
        for p in self.params.values() {
            match p.kind {
                ParamKind::Frozen => frozen += p.tensor.len(),
                ParamKind::Trainable => trainable += p.tensor.len(),
                ParamKind::Lora => lora += p.tensor.len(),
            }
        }
        (frozen, trainable, lora)
    }

    /// Bind every parameter as a leaf on the tape.
    pub fn bind(&self, graph: &Graph) -> Bindings {
        let vars = self
            .params
            .iter()
            .map(|(name, p)| (name.clone(), graph.leaf(p.tensor.clone())))
            .collect();
        Bindings { vars }
    }

    /// Collect gradients for non-frozen parameters. Parameters that did not
    /// participate in the graph get no entry (and hence no update).
    pub fn collect_gradients(&self, bindings: &Bindings, grads: &Gradients) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, p) in &self.params {
            if p.kind == ParamKind::Frozen {
                continue;
            }
            if let Some(g) = grads.get(bindings.var(name)) {
                out.insert(name.clone(), g.clone());
            }
        }
        out
    }

    /// Bytewise digest of the frozen subset; cheap freezing-contract check.
    pub fn frozen_digest(&self) -> u64 {
        let mut h = Fnv64::new();
        for (name, p) in &self.params {
            if p.kind == ParamKind::Frozen {
                h.update(name.as_bytes());
                for v in p.tensor.data() {
                    h.update(&v.to_le_bits().to_le_bytes());
                }
            }
        }
        h.finish()
    }
}

/// Name -> tape var mapping for one forward pass.
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("unbound parameter {name}"))
    }
}

/// Optimizer configuration; plain SGD is the default everywhere.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Sgd
    }
}

/// Stateful optimizer over a ParamStore.
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer { kind, lr, step: 0, moments: BTreeMap::new() }
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        for (name, grad) in grads {
            let param = store.params.get_mut(name).expect("gradient for unknown parameter");
            assert!(param.kind != ParamKind::Frozen, "gradient applied to frozen parameter");
            match &self.kind {
                OptimizerKind::Sgd => {
                    let t = &mut param.tensor;
                    for (w, g) in t.data_mut().iter_mut().zip(grad.data()) {
                        *w -= self.lr * g;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let (m, v) = self
                        .moments
                        .entry(name.clone())
                        .or_insert_with(|| (
                            Tensor::zeros(grad.rows(), grad.cols()),
                            Tensor::zeros(grad.rows(), grad.cols()),
                        ));
                    let t = self.step as i32;
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    let tens = &mut param.tensor;
                    for i in 0..grad.len() {
                        let g = grad.data()[i];
                        m.data_mut()[i] = beta1 * m.data()[i] + (1.0 - beta1) * g;
                        v.data_mut()[i] = beta2 * v.data()[i] + (1.0 - beta2) * g * g;
                        let mh = m.data()[i] / bc1;
                        let vh = v.data()[i] / bc2;
                        tens.data_mut()[i] -= self.lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    rows: usize,
    cols: usize,
    kind: ParamKind,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointIndex {
    format_version: String,
    blob: String,
    entries: Vec<CheckpointEntry>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Write `<stem>.json` (index) and `<stem>.f32` (little-endian float32 blob).
pub fn save_checkpoint(store: &ParamStore, stem: &Path, extra: serde_json::Value) -> Result<()> {
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, p) in store.iter() {
        let len = p.tensor.len();
        for v in p.tensor.data() {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        entries.push(CheckpointEntry {
            name: name.clone(),
            rows: p.tensor.rows(),
            cols: p.tensor.cols(),
            kind: p.kind,
            offset,
            len,
        });
        offset += len;
    }
    let blob_name = format!(
        "{}.f32",
        stem.file_name().and_then(|s| s.to_str()).unwrap_or("ckpt")
    );
    let index = CheckpointIndex {
        format_version: CHECKPOINT_FORMAT_VERSION.to_string(),
        blob: blob_name.clone(),
        entries,
        extra,
    };
    if let Some(dir) = stem.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut f = fs::File::create(stem.with_extension("json"))?;
    serde_json::to_writer_pretty(&mut f, &index)?;
    f.write_all(b"\n")?;
    fs::File::create(stem.with_extension("f32"))?.write_all(&blob)?;
    Ok(())
}

/// Load a checkpoint from its `.json` index path (or the bare stem).
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let index_path = if path.extension().map(|e| e == "json").unwrap_or(false) {
        path.to_path_buf()
    } else {
        path.with_extension("json")
    };
    let text = fs::read_to_string(&index_path)
        .map_err(|e| Error::NotFound(format!("checkpoint index {}: {e}", index_path.display())))?;
    let index: CheckpointIndex = serde_json::from_str(&text)?;
    if index.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format {} (expected {})",
            index.format_version, CHECKPOINT_FORMAT_VERSION
        )));
    }
    let blob_path: PathBuf = index_path
        .parent()
        .map(|d| d.join(&index.blob))
        .unwrap_or_else(|| PathBuf::from(&index.blob));
    let mut bytes = Vec::new();
    fs::File::open(&blob_path)
        .map_err(|e| Error::NotFound(format!("checkpoint blob {}: {e}", blob_path.display())))?
        .read_to_end(&mut bytes)?;
    let floats: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut store = ParamStore::new();
    for e in &index.entries {
        let end = e.offset + e.len;
        if end > floats.len() {
            return Err(Error::Format(format!("checkpoint blob truncated at {}", e.name)));
        }
        let tensor = Tensor::from_vec(e.rows, e.cols, floats[e.offset..end].to_vec())?;
        store.insert(&e.name, tensor, e.kind);
    }
    Ok((store, index.extra))
}

/// FNV-1a 64-bit; used for config fingerprints and frozen-parameter digests.
pub struct Fnv64(u64);

impl Fnv64 {
    pub fn new() -> Self {
        Fnv64(0xcbf29ce484222325)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fingerprint(bytes: &[u8]) -> String {
    let mut h = Fnv64::new();
    h.update(bytes);
    format!("{:016x}", h.finish())
}

trait F64Bits {
    fn to_le_bits(self) -> u64;
}

impl F64Bits for f64 {
    fn to_le_bits(self) -> u64 {
        self.to_bits()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::new();
        store.insert("a.w", Tensor::from_vec(2, 2, vec![1.5, -2.25, 0.5, 3.0]).unwrap(), ParamKind::Frozen);
        store.insert("b.w", Tensor::row_vector(vec![0.125, 7.0]), ParamKind::Lora);
        let stem = dir.path().join("ckpt");
        save_checkpoint(&store, &stem, serde_json::json!({"note": 1})).unwrap();
        let (loaded, extra) = load_checkpoint(&stem.with_extension("json")).unwrap();
        assert_eq!(loaded.tensor("a.w").data(), store.tensor("a.w").data());
        assert_eq!(loaded.get("b.w").kind, ParamKind::Lora);
        assert_eq!(extra["note"], 1);
    }

    #[test]
    fn checkpoint_rejects_unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        let store = ParamStore::new();
        save_checkpoint(&store, &stem, serde_json::Value::Null).unwrap();
        let idx = stem.with_extension("json");
        let text = fs::read_to_string(&idx).unwrap().replace(CHECKPOINT_FORMAT_VERSION, "cad-ckpt-99");
        fs::write(&idx, text).unwrap();
        assert!(matches!(load_checkpoint(&idx), Err(Error::Format(_))));
    }

    #[test]
    fn sgd_updates_only_named_gradients() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0), ParamKind::Trainable);
        store.insert("frozen", Tensor::scalar(5.0), ParamKind::Frozen);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(0.5));
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
        opt.apply(&mut store, &grads);
        assert!((store.tensor("w").item() - 0.95).abs() < 1e-15);
        assert_eq!(store.tensor("frozen").item(), 5.0);
    }
}
