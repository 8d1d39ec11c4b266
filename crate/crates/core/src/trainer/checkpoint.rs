use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HistoryRecord, ModelState, ScoreScaling};
use crate::factor::{BasisDictionary, ConstraintState, Hyperparameters, LoadingSequence};
use crate::head::{AdamState, NetworkShape, NetworkWeights};
use crate::{Error, Matrix, Result};

/// Default checkpoint file name inside an output directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.tar";

const FORMAT: &str = "srddl-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Offset in 8-byte values into `tensors.bin`.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamMeta {
    step: u64,
    epoch: usize,
    base_lr: f64,
    decay: f64,
    decay_every: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamMeta {
    fn of(a: &AdamState) -> Self {
        Self {
            step: a.step,
            epoch: a.epoch,
            base_lr: a.base_lr,
            decay: a.decay,
            decay_every: a.decay_every,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }

    fn with(self, m: Vec<f64>, v: Vec<f64>) -> AdamState {
        AdamState {
            m,
            v,
            step: self.step,
            epoch: self.epoch,
            base_lr: self.base_lr,
            decay: self.decay,
            decay_every: self.decay_every,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    format: String,
    version: u32,
    /// Tensors are stored row-major as little-endian f64.
    order: String,
    subject_ids: Vec<String>,
    score_names: Vec<String>,
    scaling: ScoreScaling,
    converged: bool,
    network_shape: NetworkShape,
    network_adam: AdamMeta,
    loading_adam: Vec<AdamMeta>,
    gammas: Vec<f64>,
    tensors: Vec<TensorEntry>,
}

#[derive(Default)]
struct Blob {
    data: Vec<u8>,
    entries: Vec<TensorEntry>,
}

impl Blob {
    fn push(&mut self, name: String, rows: usize, cols: usize, values: impl Iterator<Item = f64>) {
        let offset = self.data.len() / 8;
        for v in values {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
        debug_assert_eq!(self.data.len() / 8 - offset, rows * cols);
        self.entries.push(TensorEntry { name, rows, cols, offset });
    }

    fn matrix(&mut self, name: String, m: &Matrix) {
        let (r, c) = m.shape();
        self.push(name, r, c, (0..r).flat_map(move |i| (0..c).map(move |j| m[(i, j)])));
    }

    fn vector(&mut self, name: String, v: &[f64]) {
        self.push(name, 1, v.len(), v.iter().copied());
    }

    /// `T` matrices of equal shape stacked vertically.
    fn stack(&mut self, name: String, ms: &[Matrix], rows: usize, cols: usize) {
        self.push(
            name,
            ms.len() * rows,
            cols,
            ms.iter().flat_map(move |m| (0..rows).flat_map(move |i| (0..cols).map(move |j| m[(i, j)]))),
        );
    }
}

fn history_csv(history: &[HistoryRecord]) -> String {
    let mut s = String::from(HistoryRecord::CSV_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn append(builder: &mut tar::Builder<impl Write>, name: &str, data: &[u8]) -> std::io::Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_entry_type(tar::EntryType::Regular);
    header.set_size(data.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_uid(0);
    header.set_gid(0);
    builder.append_data(&mut header, name, data)
}

/// Writes the model as a single tar archive holding `hyper.json`,
/// `index.json`, `tensors.bin` and `history.csv`. The output depends only on
/// the model, so equal models give byte-identical files.
pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<()> {
    let (p, k) = (model.p(), model.k());
    let mut blob = Blob::default();
    blob.matrix("basis".into(), model.basis.matrix());
    blob.vector("network.params".into(), model.weights.params());
    blob.vector("network_adam.m".into(), &model.network_adam.m);
    blob.vector("network_adam.v".into(), &model.network_adam.v);
    if let Some(adj) = &model.imputed_adjacency {
        blob.matrix("imputed_adjacency".into(), adj);
    }
    for n in 0..model.subject_ids.len() {
        blob.matrix(format!("subject.{n}.c_hat"), &model.loadings[n].c_hat);
        blob.vector(format!("subject.{n}.adam.m"), &model.loading_adam[n].m);
        blob.vector(format!("subject.{n}.adam.v"), &model.loading_adam[n].v);
        blob.stack(format!("subject.{n}.d"), &model.constraints[n].d, p, k);
        blob.stack(format!("subject.{n}.lambda"), &model.constraints[n].lambda, p, k);
    }
    let index = Index {
        format: FORMAT.into(),
        version: VERSION,
        order: "row-major little-endian f64".into(),
        subject_ids: model.subject_ids.clone(),
        score_names: model.score_names.clone(),
        scaling: model.scaling.clone(),
        converged: model.converged,
        network_shape: model.weights.shape(),
        network_adam: AdamMeta::of(&model.network_adam),
        loading_adam: model.loading_adam.iter().map(AdamMeta::of).collect(),
        gammas: model.constraints.iter().map(|c| c.gamma).collect(),
        tensors: std::mem::take(&mut blob.entries),
    };
    let hyper = serde_json::to_string_pretty(&model.hyper).map_err(|e| Error::parse(path, e.to_string()))?;
    let index_json = serde_json::to_string_pretty(&index).map_err(|e| Error::parse(path, e.to_string()))?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut builder = tar::Builder::new(BufWriter::new(file));
    builder.mode(tar::HeaderMode::Deterministic);
    let write = |b: &mut tar::Builder<BufWriter<File>>| -> std::io::Result<()> {
        append(b, "hyper.json", hyper.as_bytes())?;
        append(b, "index.json", index_json.as_bytes())?;
        append(b, "tensors.bin", &blob.data)?;
        append(b, "history.csv", history_csv(&model.history).as_bytes())?;
        b.finish()?;
        b.get_mut().flush()
    };
    write(&mut builder).map_err(|e| Error::io(path, e))
}

fn parse_history(path: &Path, text: &str) -> Result<Vec<HistoryRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(HistoryRecord::CSV_HEADER) {
        return Err(Error::parse(path, "history.csv has an unexpected header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::parse(path, format!("history.csv line {}: malformed row", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad());
            }
            let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad());
            Ok(HistoryRecord {
                iteration: f[0].parse().map_err(|_| bad())?,
                srddl_loss: num(1)?,
                split_loss: num(2)?,
                network_loss: num(3)?,
                penalty: num(4)?,
                objective: num(5)?,
                residual: num(6)?,
                orthonormality_error: num(7)?,
            })
        })
        .collect()
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut archive = tar::Archive::new(BufReader::new(file));
    let mut files: HashMap<String, Vec<u8>> = HashMap::new();
    for entry in archive.entries().map_err(|e| Error::io(path, e))? {
        let mut entry = entry.map_err(|e| Error::io(path, e))?;
        let name = entry.path().map_err(|e| Error::io(path, e))?.to_string_lossy().into_owned();
        let mut data = Vec::new();
        entry.read_to_end(&mut data).map_err(|e| Error::io(path, e))?;
        files.insert(name, data);
    }
    let mut take = |name: &str| files.remove(name).ok_or_else(|| Error::parse(path, format!("archive has no {name}")));
    let hyper: Hyperparameters =
        serde_json::from_slice(&take("hyper.json")?).map_err(|e| Error::parse(path, format!("hyper.json: {e}")))?;
    let index: Index =
        serde_json::from_slice(&take("index.json")?).map_err(|e| Error::parse(path, format!("index.json: {e}")))?;
    let data = take("tensors.bin")?;
    let history_text = String::from_utf8(take("history.csv")?).map_err(|e| Error::parse(path, e.to_string()))?;
    if index.format != FORMAT || index.version != VERSION {
        return Err(Error::parse(path, format!("unsupported checkpoint {} v{}", index.format, index.version)));
    }
    if data.len() % 8 != 0 {
        return Err(Error::parse(path, "tensors.bin length is not a multiple of 8"));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
        .collect();
    let tensors: HashMap<&str, &TensorEntry> = index.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let get = |name: &str| -> Result<(&[f64], usize, usize)> {
        let t = tensors.get(name).ok_or_else(|| Error::parse(path, format!("missing tensor {name}")))?;
        let end = t.offset + t.rows * t.cols;
        if end > values.len() {
            return Err(Error::parse(path, format!("tensor {name} runs past the end of tensors.bin")));
        }
        Ok((&values[t.offset..end], t.rows, t.cols))
    };
    let matrix = |name: &str| -> Result<Matrix> {
        let (v, r, c) = get(name)?;
        Ok(Matrix::from_row_slice(r, c, v))
    };
    let vector = |name: &str| -> Result<Vec<f64>> { Ok(get(name)?.0.to_vec()) };
    let unstack = |name: &str, p: usize| -> Result<Vec<Matrix>> {
        let m = matrix(name)?;
        if p == 0 || m.nrows() % p != 0 {
            return Err(Error::parse(path, format!("tensor {name} does not stack into {p}-row blocks")));
        }
        Ok((0..m.nrows() / p).map(|t| m.rows(t * p, p).into_owned()).collect())
    };

    let basis = BasisDictionary::new(matrix("basis")?)?;
    let p = basis.p();
    let weights = NetworkWeights::from_flat(index.network_shape, vector("network.params")?)?;
    let network_adam = index.network_adam.with(vector("network_adam.m")?, vector("network_adam.v")?);
    let imputed_adjacency = if tensors.contains_key("imputed_adjacency") { Some(matrix("imputed_adjacency")?) } else { None };
    let n_subjects = index.subject_ids.len();
    if index.loading_adam.len() != n_subjects || index.gammas.len() != n_subjects {
        return Err(Error::parse(path, "per-subject metadata does not match the subject list"));
    }
    let mut loadings = Vec::with_capacity(n_subjects);
    let mut constraints = Vec::with_capacity(n_subjects);
    let mut loading_adam = Vec::with_capacity(n_subjects);
    for (n, meta) in index.loading_adam.into_iter().enumerate() {
        loadings.push(LoadingSequence::new(matrix(&format!("subject.{n}.c_hat"))?));
        loading_adam.push(meta.with(vector(&format!("subject.{n}.adam.m"))?, vector(&format!("subject.{n}.adam.v"))?));
        constraints.push(ConstraintState {
            d: unstack(&format!("subject.{n}.d"), p)?,
            lambda: unstack(&format!("subject.{n}.lambda"), p)?,
            gamma: index.gammas[n],
        });
    }
    Ok(ModelState {
        hyper,
        basis,
        subject_ids: index.subject_ids,
        score_names: index.score_names,
        loadings,
        constraints,
        weights,
        network_adam,
        loading_adam,
        scaling: index.scaling,
        imputed_adjacency,
        history: parse_history(path, &history_text)?,
        converged: index.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_cohort, SynthConfig};
    use crate::trainer::{fit, predict};

    fn model() -> (crate::data::Cohort, ModelState) {
        let mut cfg = SynthConfig::new(8, 3, 4, 5);
        cfg.missing_dti = 1;
        cfg.laplacian = crate::data::LaplacianMode::RandomGraph { density: 0.5 };
        let (cohort, _) = generate_synthetic_cohort(&cfg, 11).unwrap();
        let hyper = Hyperparameters {
            k: 3,
            hidden: 5,
            max_outer: 2,
            loading_epochs: 2,
            network_epochs: 2,
            primal_dual_rounds: 2,
            ..Hyperparameters::default()
        };
        let m = fit(&cohort, &hyper).unwrap();
        (cohort, m)
    }

    #[test]
    fn round_trip_is_exact() {
        let (cohort, m) = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CHECKPOINT_FILE);
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        for s in &cohort.subjects {
            assert_eq!(predict(s, &m).unwrap(), predict(s, &back).unwrap());
        }
        let again = dir.path().join("again.tar");
        save_checkpoint(&back, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn missing_file_is_named() {
        let err = load_checkpoint(Path::new("/nonexistent/ckpt.tar")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ckpt.tar"));
    }
}
