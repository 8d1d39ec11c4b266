//! Cohort directory format: a JSON manifest plus header-free CSV matrices.
//!
//! ```text
//! manifest.json
//! subjects/<id>/gammas/<t>.csv      (or timeseries.csv)
//! subjects/<id>/adjacency.csv       (absent when the subject has no DTI)
//! subjects/<id>/laplacian.csv       (optional; rebuilt from adjacency otherwise)
//! subjects/<id>/scores.json
//! ```
//!
//! Values are written with 17 significant digits so every matrix survives a
//! save/load cycle bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    build_normalized_laplacian, connectome_from_series, Cohort, DynamicConnectome, RoiTimeSeries,
    SeverityVector, StructuralLaplacian, Subject, DEFAULT_STRIDE, DEFAULT_WINDOW_LENGTH,
};
use crate::{Error, Matrix, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "srddl-cohort";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub p: usize,
    pub m: usize,
    pub score_names: Vec<String>,
    #[serde(default = "default_window")]
    pub window_length: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub repetition_interval: f64,
    pub subjects: Vec<SubjectEntry>,
}

fn default_window() -> usize {
    DEFAULT_WINDOW_LENGTH
}

fn default_stride() -> usize {
    DEFAULT_STRIDE
}

/// Paths are relative to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<String>>,
    /// P × T_raw ROI signals, windowed and residualized on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeseries: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub laplacian: Option<String>,
    pub scores: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoresFile {
    values: Vec<Option<f64>>,
    observed: Vec<bool>,
}

fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 24);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format_value(m[(i, j)]));
        }
        out.push('\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|e| {
                    Error::parse(path, format!("line {}: cannot parse {tok:?}: {e}", line_no + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    path,
                    format!("line {}: expected {} columns, found {}", line_no + 1, first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(path, "empty matrix"));
    }
    let (r, c) = (rows.len(), rows[0].len());
    Ok(Matrix::from_row_iterator(r, c, rows.into_iter().flatten()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e.to_string()))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes `cohort` under `dir` and returns the manifest path.
pub fn save_cohort(cohort: &Cohort, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(cohort.len());
    for s in &cohort.subjects {
        let rel = format!("subjects/{}", s.id());
        let mut gammas = Vec::with_capacity(s.connectome.len());
        for (t, g) in s.connectome.gammas.iter().enumerate() {
            let file = format!("{rel}/gammas/{t}.csv");
            write_matrix_csv(&dir.join(&file), g)?;
            gammas.push(file);
        }
        let (adjacency, laplacian) = match &s.structure {
            // Imputed structure is recomputed by whoever loads the cohort.
            Some(st) if !st.imputed => {
                let a = format!("{rel}/adjacency.csv");
                let l = format!("{rel}/laplacian.csv");
                write_matrix_csv(&dir.join(&a), &st.adjacency)?;
                write_matrix_csv(&dir.join(&l), &st.laplacian)?;
                (Some(a), Some(l))
            }
            _ => (None, None),
        };
        let scores = format!("{rel}/scores.json");
        write_json(
            &dir.join(&scores),
            &ScoresFile {
                values: s.scores.values(),
                observed: s.scores.observed_mask().to_vec(),
            },
        )?;
        entries.push(SubjectEntry {
            id: s.id().to_string(),
            gammas: Some(gammas),
            timeseries: None,
            adjacency,
            laplacian,
            scores,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        p: cohort.p,
        m: cohort.m,
        score_names: cohort.score_names.clone(),
        window_length: DEFAULT_WINDOW_LENGTH,
        stride: DEFAULT_STRIDE,
        repetition_interval: 0.0,
        subjects: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Loads a cohort from its manifest (or from a directory containing one).
pub fn load_cohort(manifest_path: &Path) -> Result<Cohort> {
    let manifest_path = if manifest_path.is_dir() {
        manifest_path.join(MANIFEST_FILE)
    } else {
        manifest_path.to_path_buf()
    };
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.format != FORMAT {
        return Err(Error::parse(&manifest_path, format!("unknown format {:?}", manifest.format)));
    }
    if manifest.score_names.len() != manifest.m {
        return Err(Error::parse(
            &manifest_path,
            format!("m = {} but {} score names", manifest.m, manifest.score_names.len()),
        ));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        subjects.push(load_subject(base, &manifest, entry)?);
    }
    Cohort::new(subjects, manifest.score_names.clone())
}

fn check_square(path: &Path, m: &Matrix, p: usize, id: &str) -> Result<()> {
    if m.shape() != (p, p) {
        return Err(Error::dims(
            format!("subject {id} ({})", path.display()),
            format!("{p}x{p}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

fn load_subject(base: &Path, manifest: &Manifest, entry: &SubjectEntry) -> Result<Subject> {
    let p = manifest.p;
    let connectome = match (&entry.gammas, &entry.timeseries) {
        (Some(files), _) => {
            let mut gammas = Vec::with_capacity(files.len());
            for f in files {
                let path = base.join(f);
                let g = read_matrix_csv(&path)?;
                check_square(&path, &g, p, &entry.id)?;
                gammas.push(g);
            }
            DynamicConnectome::new(entry.id.clone(), gammas)?
        }
        (None, Some(f)) => {
            let path = base.join(f);
            let samples = read_matrix_csv(&path)?;
            if samples.nrows() != p {
                return Err(Error::dims(format!("ROI count of subject {}", entry.id), p, samples.nrows()));
            }
            let series = RoiTimeSeries::new(entry.id.clone(), samples, manifest.repetition_interval)?;
            connectome_from_series(&series, manifest.window_length, manifest.stride)?
        }
        (None, None) => {
            return Err(Error::InvalidInput(format!(
                "subject {} lists neither gammas nor a time series",
                entry.id
            )))
        }
    };

    let structure = match &entry.adjacency {
        Some(f) => {
            let path = base.join(f);
            let adjacency = read_matrix_csv(&path)?;
            check_square(&path, &adjacency, p, &entry.id)?;
            let mut st = build_normalized_laplacian(&adjacency, &entry.id)?;
            if let Some(lf) = &entry.laplacian {
                let lpath = base.join(lf);
                let l = read_matrix_csv(&lpath)?;
                check_square(&lpath, &l, p, &entry.id)?;
                st = StructuralLaplacian {
                    laplacian: l,
                    ..st
                };
            }
            Some(st)
        }
        None => None,
    };

    let scores_path = base.join(&entry.scores);
    let file: ScoresFile = read_json(&scores_path)?;
    if file.values.len() != manifest.m || file.observed.len() != manifest.m {
        return Err(Error::dims(
            format!("scores of subject {} ({})", entry.id, scores_path.display()),
            manifest.m,
            file.values.len(),
        ));
    }
    let mut values = Vec::with_capacity(manifest.m);
    for (v, o) in file.values.iter().zip(&file.observed) {
        match (v, o) {
            (Some(x), true) => values.push(Some(*x)),
            (_, false) => values.push(None),
            (None, true) => {
                return Err(Error::parse(&scores_path, "score marked observed but has no value"))
            }
        }
    }
    let scores = SeverityVector::new(manifest.score_names.clone(), values)?;
    Ok(Subject {
        connectome,
        structure,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_cohort, LaplacianMode, SynthConfig};
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_exact() {
        let mut cfg = SynthConfig::new(7, 3, 4, 5);
        cfg.noise = 0.05;
        cfg.laplacian = LaplacianMode::RandomGraph { density: 0.5 };
        cfg.missing_dti = 1;
        cfg.missing_score_prob = 0.3;
        let (cohort, _) = generate_synthetic_cohort(&cfg, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_cohort(&cohort, dir.path()).unwrap();
        let back = load_cohort(&manifest).unwrap();
        assert_eq!(cohort, back);
        assert_eq!(load_cohort(dir.path()).unwrap(), cohort);
    }

    #[test]
    fn missing_file_names_the_path() {
        let (cohort, _) = generate_synthetic_cohort(&SynthConfig::new(4, 2, 2, 2), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_cohort(&cohort, dir.path()).unwrap();
        let victim = dir.path().join("subjects/sub-001/gammas/1.csv");
        fs::remove_file(&victim).unwrap();
        let err = load_cohort(&manifest).unwrap_err().to_string();
        assert!(err.contains("subjects/sub-001/gammas/1.csv"), "{err}");
    }

    #[test]
    fn wrong_roi_count_is_a_dimension_error() {
        let (cohort, _) = generate_synthetic_cohort(&SynthConfig::new(20, 2, 2, 2), 1).unwrap();
        let (small, _) = generate_synthetic_cohort(&SynthConfig::new(10, 2, 1, 2), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_cohort(&cohort, dir.path()).unwrap();
        write_matrix_csv(&dir.path().join("subjects/sub-001/gammas/0.csv"), &small.subjects[0].connectome.gammas[0])
            .unwrap();
        assert!(matches!(load_cohort(&manifest), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn malformed_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "1,2\n3,x\n").unwrap();
        let err = read_matrix_csv(&path).unwrap_err().to_string();
        assert!(err.contains("bad.csv") && err.contains("line 2"), "{err}");
        fs::write(&path, "1,2\n3\n").unwrap();
        assert!(read_matrix_csv(&path).is_err());
    }

    #[test]
    fn timeseries_entries_are_windowed() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = crate::linalg::rng_stream(2, 0);
        let samples = crate::linalg::gaussian_matrix(&mut rng, 5, 128);
        write_matrix_csv(&dir.path().join("ts.csv"), &samples).unwrap();
        fs::write(dir.path().join("scores.json"), r#"{"values":[1.5],"observed":[true]}"#).unwrap();
        let manifest = Manifest {
            format: FORMAT.into(),
            version: 1,
            p: 5,
            m: 1,
            score_names: vec!["ados".into()],
            window_length: 45,
            stride: 5,
            repetition_interval: 2.5,
            subjects: vec![SubjectEntry {
                id: "a".into(),
                gammas: None,
                timeseries: Some("ts.csv".into()),
                adjacency: None,
                laplacian: None,
                scores: "scores.json".into(),
            }],
        };
        write_json(&dir.path().join(MANIFEST_FILE), &manifest).unwrap();
        let cohort = load_cohort(dir.path()).unwrap();
        assert_eq!(cohort.subjects[0].connectome.len(), 17);
        assert_eq!(cohort.subjects[0].scores.get(0), Some(1.5));
    }

    proptest! {
        #[test]
        fn csv_values_round_trip(vals in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 6)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.csv");
            let m = Matrix::from_row_slice(2, 3, &vals);
            write_matrix_csv(&path, &m).unwrap();
            let back = read_matrix_csv(&path).unwrap();
            for (a, b) in m.iter().zip(back.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
