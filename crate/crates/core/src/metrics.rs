//! Evaluation mathematics shared by prompting, probing and the heuristic floors.
//!
//! Class labels are 0-based indices internally. A prediction is an
//! `Option<usize>` where `None` marks an unparseable model answer (FAILURE):
//! it is wrong for the true class's recall and is nobody's true or false
//! positive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
}

/// One-vs-rest counts for every class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn from_predictions(
        y_true: &[usize],
        y_pred: &[Option<usize>],
        num_classes: usize,
    ) -> Result<Self, MetricsError> {
        if y_true.len() != y_pred.len() {
            return Err(MetricsError::Shape(format!(
                "{} labels vs {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        let mut counts = ConfusionCounts {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
        };
        for (&truth, pred) in y_true.iter().zip(y_pred) {
            if truth >= num_classes {
                return Err(MetricsError::Domain(format!(
                    "label {truth} outside 0..{num_classes}"
                )));
            }
            match *pred {
                Some(p) if p == truth => counts.tp[truth] += 1,
                Some(p) if p < num_classes => {
                    counts.fp[p] += 1;
                    counts.fn_[truth] += 1;
                }
                Some(p) => {
                    return Err(MetricsError::Domain(format!(
                        "prediction {p} outside 0..{num_classes}"
                    )))
                }
                None => counts.fn_[truth] += 1,
            }
        }
        Ok(counts)
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }
}

/// Macro-F1 together with its per-class components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub counts: ConfusionCounts,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 (0/0 → 0), averaged uniformly over all
/// `num_classes` classes, including ones absent from both vectors.
pub fn macro_f1(
    y_true: &[usize],
    y_pred: &[Option<usize>],
    num_classes: usize,
) -> Result<F1Report, MetricsError> {
    let counts = ConfusionCounts::from_predictions(y_true, y_pred, num_classes)?;
    Ok(f1_from_counts(counts))
}

pub fn f1_from_counts(counts: ConfusionCounts) -> F1Report {
    let c = counts.num_classes();
    let mut precision = Vec::with_capacity(c);
    let mut recall = Vec::with_capacity(c);
    let mut f1 = Vec::with_capacity(c);
    for k in 0..c {
        let p = ratio(counts.tp[k], counts.tp[k] + counts.fp[k]);
        let r = ratio(counts.tp[k], counts.tp[k] + counts.fn_[k]);
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        precision.push(p);
        recall.push(r);
        f1.push(f);
    }
    let macro_f1 = if c == 0 {
        0.0
    } else {
        f1.iter().sum::<f64>() / c as f64
    };
    F1Report {
        macro_f1,
        precision,
        recall,
        f1,
        counts,
    }
}

/// Convenience for callers holding hard class predictions.
pub fn macro_f1_hard(
    y_true: &[usize],
    y_pred: &[usize],
    num_classes: usize,
) -> Result<F1Report, MetricsError> {
    let wrapped: Vec<Option<usize>> = y_pred.iter().map(|&p| Some(p)).collect();
    macro_f1(y_true, &wrapped, num_classes)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Exact binomial coefficient, `None` on u128 overflow.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral; reduce first to delay overflow.
        let mut num = (n - i) as u128;
        let mut den = (i + 1) as u128;
        let g = gcd(acc, den);
        acc /= g;
        den /= g;
        let g = gcd(num, den);
        num /= g;
        den /= g;
        debug_assert_eq!(den, 1);
        acc = acc.checked_mul(num)? / den;
    }
    Some(acc)
}

/// Unbiased pass@K for one item: `1 - C(n-c, K) / C(n, K)`.
///
/// The ratio is evaluated on exact integers and rounded once. Beyond the
/// range where `C(n, K)` fits in u128 the product form is used instead.
pub fn pass_at_k(correct: u64, n: u64, k: u64) -> Result<f64, MetricsError> {
    if k == 0 || k > n {
        return Err(MetricsError::Domain(format!("K={k} must lie in 1..={n}")));
    }
    if correct > n {
        return Err(MetricsError::Domain(format!("c={correct} exceeds n={n}")));
    }
    if correct == 0 {
        return Ok(0.0);
    }
    if n - correct < k {
        return Ok(1.0);
    }
    match (binomial(n - correct, k), binomial(n, k)) {
        (Some(miss), Some(all)) => {
            let g = gcd(all - miss, all);
            Ok(((all - miss) / g) as f64 / (all / g) as f64)
        }
        _ => {
            let miss: f64 = (1..=k)
                .map(|i| (n - correct - k + i) as f64 / (n - k + i) as f64)
                .product();
            Ok(1.0 - miss)
        }
    }
}

/// Mean of per-item pass@K estimates over a dataset with uniform `n`.
pub fn dataset_pass_at_k(correct: &[u64], n: u64, k: u64) -> Result<f64, MetricsError> {
    if correct.is_empty() {
        return Err(MetricsError::Domain("no items".into()));
    }
    let mut total = 0.0;
    for &c in correct {
        total += pass_at_k(c, n, k)?;
    }
    Ok(total / correct.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtKTable {
    pub n: u64,
    pub correct: Vec<u64>,
    pub ks: Vec<u64>,
    pub estimates: Vec<f64>,
}

impl PassAtKTable {
    pub fn build(correct: Vec<u64>, n: u64, ks: &[u64]) -> Result<Self, MetricsError> {
        let mut ks = ks.to_vec();
        ks.sort_unstable();
        ks.dedup();
        let estimates = ks
            .iter()
            .map(|&k| dataset_pass_at_k(&correct, n, k))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PassAtKTable {
            n,
            correct,
            ks,
            estimates,
        })
    }

    pub fn estimate(&self, k: u64) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.estimates[i])
    }

    /// ΔPass@K = Pass@K − Pass@1.
    pub fn delta(&self, k: u64) -> Option<f64> {
        Some(self.estimate(k)? - self.estimate(1)?)
    }
}

/// Spread of macro-F1 across meaning-preserving prompt variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    pub scores: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub delta: f64,
}

pub fn variant_spread(scores: &[f64]) -> Result<SpreadReport, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Domain("empty score list".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::Domain("non-finite score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let min = sorted[0];
    let max = sorted[n - 1];
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    // Summing in sorted order makes the mean independent of input order.
    let mean = sorted.iter().sum::<f64>() / n as f64;
    Ok(SpreadReport {
        scores: scores.to_vec(),
        min,
        max,
        mean,
        median,
        delta: max - min,
    })
}

/// One row of the metrics CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub modality: String,
    pub style: String,
    pub shots: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

pub const METRIC_CSV_HEADER: &str = "dataset,model,method,modality,style,shots,seed,metric,value";

impl MetricRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            csv_field(&self.dataset),
            csv_field(&self.model),
            csv_field(&self.method),
            csv_field(&self.modality),
            csv_field(&self.style),
            self.shots,
            self.seed,
            csv_field(&self.metric),
            self.value
        )
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn perfect_predictions_score_one() {
        let y = [0, 1, 2, 2, 1, 0];
        let r = macro_f1_hard(&y, &y, 3).unwrap();
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn hand_computed_two_class_example() {
        // y=[A,A,B,B], ŷ=[A,B,B,B]: A has P=1, R=1/2 → 2/3; B has P=2/3, R=1 → 0.8.
        let r = macro_f1_hard(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_relative_eq!(r.f1[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(r.f1[1], 0.8, epsilon = 1e-15);
        assert_relative_eq!(r.macro_f1, (2.0 / 3.0 + 0.8) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn all_failures_score_zero() {
        let r = macro_f1(&[0, 1, 1], &[None, None, None], 2).unwrap();
        assert_eq!(r.macro_f1, 0.0);
        assert_eq!(r.counts.fn_, vec![1, 2]);
        assert_eq!(r.counts.fp, vec![0, 0]);
    }

    #[test]
    fn absent_classes_count_as_zero() {
        let r = macro_f1_hard(&[0, 0], &[0, 0], 4).unwrap();
        assert_eq!(r.macro_f1, 0.25);
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        assert!(matches!(
            macro_f1_hard(&[0, 1], &[0], 2),
            Err(MetricsError::Shape(_))
        ));
    }

    #[test]
    fn always_majority_on_sixty_forty() {
        // 60/40 test split predicted all-A: F1_A = 2·0.6·1/1.6 = 0.75, F1_B = 0.
        let y: Vec<usize> = [0; 6].into_iter().chain([1; 4]).collect();
        let r = macro_f1_hard(&y, &[0; 10], 2).unwrap();
        assert_relative_eq!(r.f1[0], 0.75, epsilon = 1e-15);
        assert_relative_eq!(r.macro_f1, 0.375, epsilon = 1e-15);
    }

    #[test]
    fn pass_at_k_conventions_and_values() {
        assert_eq!(pass_at_k(0, 20, 5).unwrap(), 0.0);
        assert_eq!(pass_at_k(1, 20, 20).unwrap(), 1.0);
        assert_eq!(pass_at_k(10, 20, 1).unwrap(), 0.5);
        assert!(matches!(pass_at_k(1, 5, 6), Err(MetricsError::Domain(_))));
        assert!(matches!(pass_at_k(1, 5, 0), Err(MetricsError::Domain(_))));
    }

    #[test]
    fn pass_at_k_exact_rational() {
        // n=4, c=1, K=2: 1 - C(3,2)/C(4,2) = 1 - 3/6.
        assert_eq!(pass_at_k(1, 4, 2).unwrap(), 0.5);
        // n=64 stays on the exact path.
        assert!(binomial(64, 32).is_some());
        let v = pass_at_k(3, 64, 32).unwrap();
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn binomial_matches_pascal() {
        let mut row = vec![1u128];
        for n in 1..=60u64 {
            let mut next = vec![1u128; n as usize + 1];
            for k in 1..n as usize {
                next[k] = row[k - 1] + row[k];
            }
            row = next;
            for k in 0..=n {
                assert_eq!(binomial(n, k), Some(row[k as usize]));
            }
        }
    }

    #[test]
    fn all_correct_dataset_is_one() {
        assert_eq!(dataset_pass_at_k(&[20, 20, 20], 20, 5).unwrap(), 1.0);
    }

    #[test]
    fn spread_reports() {
        let r = variant_spread(&[0.167; 10]).unwrap();
        assert_eq!(r.delta, 0.0);
        let r = variant_spread(&[0.1, 0.3]).unwrap();
        assert_relative_eq!(r.delta, 0.2, epsilon = 1e-15);
        assert_relative_eq!(r.median, 0.2, epsilon = 1e-15);
        assert!(matches!(variant_spread(&[]), Err(MetricsError::Domain(_))));
    }

    #[test]
    fn spread_is_order_invariant() {
        let a = variant_spread(&[0.3, 0.1, 0.7, 0.2]).unwrap();
        let b = variant_spread(&[0.7, 0.2, 0.3, 0.1]).unwrap();
        assert_eq!(
            (a.min, a.max, a.mean, a.median, a.delta),
            (b.min, b.max, b.mean, b.median, b.delta)
        );
    }

    #[test]
    fn pass_table_delta() {
        let t = PassAtKTable::build(vec![0, 10, 20], 20, &[20, 1]).unwrap();
        assert_eq!(t.ks, vec![1, 20]);
        assert_relative_eq!(t.estimate(1).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(t.estimate(20).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(t.delta(20).unwrap(), 2.0 / 3.0 - 0.5, epsilon = 1e-15);
    }

    #[test]
    fn csv_row_quotes_commas() {
        let row = MetricRow {
            dataset: "emg".into(),
            model: "stub,v1".into(),
            method: "probe".into(),
            modality: "d".into(),
            style: "direct".into(),
            shots: 0,
            seed: 7,
            metric: "macro_f1".into(),
            value: 0.5,
        };
        assert_eq!(
            row.to_csv_line(),
            "emg,\"stub,v1\",probe,d,direct,0,7,macro_f1,0.5"
        );
    }
}
