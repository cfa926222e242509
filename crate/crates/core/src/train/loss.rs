//! Per-class weighted softmax cross-entropy.

use ndarray::Array2;

use super::TrainError;

/// Inverse-frequency class weights over sequence-level labels:
/// `weight(c) = 1 / count(c)`. Index 0 is adherent, 1 is dropout.
pub fn class_weights(labels: impl IntoIterator<Item = usize>) -> Result<[f64; 2], TrainError> {
    let mut counts = [0usize; 2];
    for label in labels {
        counts[label] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(TrainError::SingleClassTraining);
    }
    Ok([1.0 / counts[0] as f64, 1.0 / counts[1] as f64])
}

/// Weighted softmax cross-entropy with reduction
/// `sum(w_i * ce_i) / sum(w_i)`, where `w_i` is the weight of item `i`'s
/// class. Returns the loss, its gradient w.r.t. the logits, and `sum(w_i)`
/// so callers can aggregate batch losses exactly.
///
/// With unit weights this reduces to the ordinary mean cross-entropy.
pub fn weighted_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
    weights: [f64; 2],
) -> (f64, Array2<f64>, f64) {
    debug_assert_eq!(logits.nrows(), labels.len());
    let weight_sum: f64 = labels.iter().map(|&l| weights[l]).sum();
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let w = weights[labels[i]];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += w * (z.ln() + max - row[labels[i]]);
        for (c, v) in row.iter().enumerate() {
            let p = (v - max).exp() / z;
            let indicator = if c == labels[i] { 1.0 } else { 0.0 };
            dlogits[(i, c)] = w * (p - indicator) / weight_sum;
        }
    }
    (loss / weight_sum, dlogits, weight_sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn weights_are_inverse_counts() {
        let labels = std::iter::repeat(0).take(200).chain(std::iter::repeat(1).take(100));
        assert_eq!(class_weights(labels).unwrap(), [0.005, 0.01]);

        let balanced = [0, 1, 0, 1];
        let w = class_weights(balanced).unwrap();
        assert_eq!(w[0], w[1]);

        assert!(matches!(
            class_weights([1, 1, 1]),
            Err(TrainError::SingleClassTraining)
        ));
    }

    #[test]
    fn uniform_logits_cost_ln_two_for_any_weights() {
        let logits = Array2::from_elem((5, 2), 0.37);
        let labels = [0, 1, 1, 0, 1];
        for weights in [[1.0, 1.0], [0.005, 0.01], [3.0, 0.25]] {
            let (loss, _, _) = weighted_cross_entropy(&logits, &labels, weights);
            assert!((loss - 2.0f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn confident_correct_predictions_cost_nothing() {
        let mut logits = Array2::zeros((2, 2));
        logits[(0, 0)] = 20.0;
        logits[(1, 1)] = 20.0;
        let (loss, _, _) = weighted_cross_entropy(&logits, &[0, 1], [0.5, 2.0]);
        assert!(loss >= 0.0 && loss <= 1e-6);
    }

    #[test]
    fn unit_weights_reduce_to_mean_cross_entropy() {
        let mut rng = crate::seeds::rng_from(3, &[]);
        let logits = Array2::from_shape_fn((7, 2), |_| rng.gen_range(-3.0..3.0));
        let labels: Vec<usize> = (0..7).map(|_| rng.gen_range(0..2)).collect();
        let (weighted, _, wsum) = weighted_cross_entropy(&logits, &labels, [1.0, 1.0]);
        assert_eq!(wsum, 7.0);
        let per_item: f64 = logits
            .rows()
            .into_iter()
            .zip(&labels)
            .map(|(row, &l)| {
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                z.ln() - row[l]
            })
            .sum();
        assert!((weighted - per_item / 7.0).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = crate::seeds::rng_from(8, &[]);
        let labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..2)).collect();
        let weights = [0.2, 1.7];
        let mut logits = Array2::from_shape_fn((6, 2), |_| rng.gen_range(-2.0..2.0));
        let (_, dlogits, _) = weighted_cross_entropy(&logits, &labels, weights);
        let h = 1e-6;
        for i in 0..6 {
            for c in 0..2 {
                let orig = logits[(i, c)];
                logits[(i, c)] = orig + h;
                let up = weighted_cross_entropy(&logits, &labels, weights).0;
                logits[(i, c)] = orig - h;
                let down = weighted_cross_entropy(&logits, &labels, weights).0;
                logits[(i, c)] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = dlogits[(i, c)];
                let rel = (analytic - numeric).abs()
                    / analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(rel <= 1e-6, "logit ({i},{c}): {analytic} vs {numeric}");
            }
        }
    }
}
