//! Evaluation metrics and the comparison baselines.

mod baselines;

use serde::{Deserialize, Serialize};

pub use baselines::{baseline_decoupled, baseline_pca_lstm, laplacian_weighted_features, PcaBasis, PcaLstmModel};

use crate::{Error, Result};

pub const DEFAULT_MI_BINS: usize = 16;

/// Leading comment written above every metrics CSV.
pub const MI_NOTE: &str = "# MI: histogram estimate, 16 equal-width bins per axis over each variable's range, log base 2";

/// Median of `|predᵢ − truthᵢ|`; the mean of the two middle values for an even count.
pub fn median_absolute_error(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::dims("MAE inputs", pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(Error::Empty("MAE inputs".into()));
    }
    let mut r: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect();
    if r.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("MAE residuals".into()));
    }
    r.sort_by(f64::total_cmp);
    let n = r.len();
    Ok(if n % 2 == 1 { r[n / 2] } else { 0.5 * (r[n / 2 - 1] + r[n / 2]) })
}

fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let i = ((v - lo) / (hi - lo) * bins as f64).floor() as usize;
    i.min(bins - 1)
}

/// Plug-in mutual information, in bits, of an equal-width 2-D histogram.
pub fn mutual_information(pred: &[f64], truth: &[f64], bins: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::dims("MI inputs", pred.len(), truth.len()));
    }
    if pred.len() < 2 {
        return Err(Error::InvalidInput(format!("MI needs at least 2 samples, got {}", pred.len())));
    }
    if bins == 0 {
        return Err(Error::InvalidInput("MI needs at least one bin".into()));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("MI inputs".into()));
    }
    let range = |x: &[f64]| x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (plo, phi) = range(pred);
    let (tlo, thi) = range(truth);
    let mut joint = vec![0usize; bins * bins];
    let mut px = vec![0usize; bins];
    let mut py = vec![0usize; bins];
    for (p, t) in pred.iter().zip(truth) {
        let i = bin_index(*p, plo, phi, bins);
        let j = bin_index(*t, tlo, thi, bins);
        joint[i * bins + j] += 1;
        px[i] += 1;
        py[j] += 1;
    }
    let n = pred.len() as f64;
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (px[i] as f64 * py[j] as f64)).log2();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// One cell of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub score: String,
    pub split: String,
    /// `None` for metrics pooled over every fold.
    pub fold: Option<usize>,
    /// Number of observed truths the metrics were computed on.
    pub count: usize,
    pub mae: Option<f64>,
    pub mi: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:e}")).unwrap_or_default()
}

impl MetricsTable {
    /// Appends one row per score. Subjects whose truth is unobserved for a
    /// score are left out of that score's metrics; a metric that cannot be
    /// computed on what remains is left empty.
    pub fn add(
        &mut self,
        method: &str,
        split: &str,
        fold: Option<usize>,
        score_names: &[String],
        pred: &[Vec<f64>],
        truth: &[Vec<Option<f64>>],
    ) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::dims("metrics subjects", truth.len(), pred.len()));
        }
        for (m, name) in score_names.iter().enumerate() {
            let (p, t): (Vec<f64>, Vec<f64>) = pred
                .iter()
                .zip(truth)
                .filter_map(|(p, t)| t.get(m).copied().flatten().map(|t| (p[m], t)))
                .unzip();
            self.rows.push(MetricsRow {
                method: method.into(),
                score: name.clone(),
                split: split.into(),
                fold,
                count: p.len(),
                mae: median_absolute_error(&p, &t).ok(),
                mi: mutual_information(&p, &t, DEFAULT_MI_BINS).ok(),
            });
        }
        Ok(())
    }

    pub fn get(&self, method: &str, score: &str, split: &str, fold: Option<usize>) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.score == score && r.split == split && r.fold == fold)
    }

    /// CSV with a leading comment line; the fold column is included when any row has one.
    pub fn to_csv(&self) -> String {
        let with_fold = self.rows.iter().any(|r| r.fold.is_some());
        let mut s = format!("{MI_NOTE}\n");
        s.push_str(if with_fold { "method,score,split,fold,n,MAE,MI\n" } else { "method,score,split,n,MAE,MI\n" });
        for r in &self.rows {
            let fold = match (with_fold, r.fold) {
                (true, Some(f)) => format!("{f},"),
                (true, None) => ",".into(),
                (false, _) => String::new(),
            };
            s.push_str(&format!("{},{},{},{fold}{},{},{}\n", r.method, r.score, r.split, r.count, opt(r.mae), opt(r.mi)));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mae_examples() {
        assert_eq!(median_absolute_error(&[1.0, 2.0, 3.0], &[1.0, 2.0, 7.0]).unwrap(), 0.0);
        assert_eq!(median_absolute_error(&[0.0, 0.0], &[1.0, -3.0]).unwrap(), 2.0);
        assert_eq!(median_absolute_error(&[4.0, 5.0], &[4.0, 5.0]).unwrap(), 0.0);
        assert!(median_absolute_error(&[], &[]).is_err());
        assert!(median_absolute_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mi_examples() {
        assert_eq!(mutual_information(&[3.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0], 16).unwrap(), 0.0);
        // Values in three bins with counts 2, 1, 1: H = ½·1 + ¼·2 + ¼·2 = 1.5 bits.
        let x = [0.0, 0.0, 7.5, 15.0];
        assert!((mutual_information(&x, &x, 16).unwrap() - 1.5).abs() < 1e-12);
        assert!(mutual_information(&[1.0], &[1.0], 16).is_err());
    }

    #[test]
    fn table_skips_unobserved_truths() {
        let mut t = MetricsTable::default();
        let names = vec!["a".to_string(), "b".to_string()];
        let pred = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let truth = vec![vec![Some(1.0), None], vec![Some(2.0), None], vec![Some(4.0), Some(3.0)]];
        t.add("m", "test", Some(0), &names, &pred, &truth).unwrap();
        let a = t.get("m", "a", "test", Some(0)).unwrap();
        assert_eq!((a.count, a.mae), (3, Some(0.0)));
        let b = t.get("m", "b", "test", Some(0)).unwrap();
        assert_eq!((b.count, b.mae, b.mi), (1, Some(0.0), None));
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().contains("fold"));
    }

    proptest! {
        #[test]
        fn mae_is_translation_and_permutation_invariant(
            v in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..30),
            shift in -50.0f64..50.0,
            rot in 0usize..30,
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
            let base = median_absolute_error(&p, &t).unwrap();
            prop_assert!(base >= 0.0);
            let ps: Vec<f64> = p.iter().map(|x| x + shift).collect();
            let ts: Vec<f64> = t.iter().map(|x| x + shift).collect();
            prop_assert!((median_absolute_error(&ps, &ts).unwrap() - base).abs() < 1e-9);
            let mut pr = p.clone();
            let mut tr = t.clone();
            let r = rot % p.len();
            pr.rotate_left(r);
            tr.rotate_left(r);
            prop_assert_eq!(median_absolute_error(&pr, &tr).unwrap(), base);
        }

        #[test]
        fn mi_is_nonnegative_and_self_mi_is_entropy(
            v in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..40),
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
            let mi = mutual_information(&p, &t, 16).unwrap();
            prop_assert!(mi >= 0.0);
            let mut rev_p = p.clone();
            let mut rev_t = t.clone();
            rev_p.reverse();
            rev_t.reverse();
            prop_assert!((mutual_information(&rev_p, &rev_t, 16).unwrap() - mi).abs() < 1e-12);

            let (lo, hi) = p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            let mut counts = [0usize; 16];
            for x in &p {
                counts[bin_index(*x, lo, hi, 16)] += 1;
            }
            let n = p.len() as f64;
            let h: f64 = counts.iter().filter(|&&c| c > 0).map(|&c| c as f64 / n * (n / c as f64).log2()).sum();
            prop_assert!((mutual_information(&p, &p, 16).unwrap() - h).abs() < 1e-9);
        }
    }
}
