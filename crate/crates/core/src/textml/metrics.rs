/// F1 of `positive` against `gold`: `2PR / (P + R)`, and 0 when `P + R = 0`.
///
/// Panics if the slices differ in length.
pub fn f1_binary<T: PartialEq>(predictions: &[T], gold: &[T], positive: &T) -> f64 {
    assert_eq!(predictions.len(), gold.len(), "prediction/gold length mismatch");
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, g) in predictions.iter().zip(gold) {
        match (p == positive, g == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mean of the F1 scores obtained treating each of the two classes as positive.
pub fn macro_f1<T: PartialEq>(predictions: &[T], gold: &[T], a: &T, b: &T) -> f64 {
    (f1_binary(predictions, gold, a) + f1_binary(predictions, gold, b)) / 2.0
}
