//! Batch losses for the embedding and regression trainers.
//!
//! Each function returns the scalar batch loss together with the adjoint
//! (`dL/d output`) per network output, in the layout `nn::gradient` expects.
//! Hinge and norm kinks use the subgradient-0 convention, consistent with
//! the ReLU derivative at 0.

use nalgebra::DVector;

/// Contrastive loss over pairs laid out as `[x_i, x_j, x_i, x_j, ...]`:
/// similar pairs contribute the squared embedding distance, dissimilar pairs
/// the squared hinge `[margin - d]_+^2`. The batch mean is returned.
pub fn contrastive(
    outputs: &[DVector<f64>],
    pair_similar: &[bool],
    margin: f64,
) -> (f64, Vec<DVector<f64>>) {
    assert_eq!(outputs.len(), 2 * pair_similar.len());
    let b = pair_similar.len() as f64;
    let mut loss = 0.0;
    let mut adjoints = Vec::with_capacity(outputs.len());
    for (k, &similar) in pair_similar.iter().enumerate() {
        let u = &outputs[2 * k];
        let v = &outputs[2 * k + 1];
        let diff = u - v;
        if similar {
            loss += diff.norm_squared();
            adjoints.push(2.0 / b * &diff);
            adjoints.push(-2.0 / b * &diff);
        } else {
            let d = diff.norm();
            let gap = margin - d;
            if gap > 0.0 && d > 0.0 {
                loss += gap * gap;
                let factor = -2.0 * gap / (d * b);
                adjoints.push(factor * &diff);
                adjoints.push(-factor * &diff);
            } else {
                // Inactive hinge, or coincident embeddings where the norm
                // is not differentiable: zero contribution.
                if gap > 0.0 {
                    loss += gap * gap;
                }
                adjoints.push(DVector::zeros(u.len()));
                adjoints.push(DVector::zeros(u.len()));
            }
        }
    }
    (loss / b, adjoints)
}

/// Triplet loss over outputs laid out as `[anchor, positive, negative, ...]`:
/// `[d(a,p)^2 - d(a,n)^2 + margin]_+`, batch mean.
pub fn triplet(outputs: &[DVector<f64>], margin: f64) -> (f64, Vec<DVector<f64>>) {
    assert_eq!(outputs.len() % 3, 0);
    let b = (outputs.len() / 3) as f64;
    let mut loss = 0.0;
    let mut adjoints = Vec::with_capacity(outputs.len());
    for k in 0..outputs.len() / 3 {
        let a = &outputs[3 * k];
        let p = &outputs[3 * k + 1];
        let n = &outputs[3 * k + 2];
        let ap = a - p;
        let an = a - n;
        let term = ap.norm_squared() - an.norm_squared() + margin;
        if term > 0.0 {
            loss += term;
            adjoints.push(2.0 / b * (n - p));
            adjoints.push(-2.0 / b * &ap);
            adjoints.push(2.0 / b * &an);
        } else {
            adjoints.push(DVector::zeros(a.len()));
            adjoints.push(DVector::zeros(a.len()));
            adjoints.push(DVector::zeros(a.len()));
        }
    }
    (loss / b, adjoints)
}

/// Mean squared error against per-sample targets.
pub fn squared_error(outputs: &[DVector<f64>], targets: &[DVector<f64>]) -> (f64, Vec<DVector<f64>>) {
    assert_eq!(outputs.len(), targets.len());
    let b = outputs.len() as f64;
    let mut loss = 0.0;
    let mut adjoints = Vec::with_capacity(outputs.len());
    for (o, t) in outputs.iter().zip(targets) {
        let r = o - t;
        loss += r.norm_squared();
        adjoints.push(2.0 / b * r);
    }
    (loss / b, adjoints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn contrastive_identical_similar_pair_is_zero() {
        let outs = vec![dv(&[0.3, 0.4]), dv(&[0.3, 0.4])];
        let (loss, adj) = contrastive(&outs, &[true], 1.0);
        assert_eq!(loss, 0.0);
        assert!(adj.iter().all(|a| a.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn contrastive_far_dissimilar_pair_is_inactive() {
        let outs = vec![dv(&[0.0, 0.0]), dv(&[3.0, 4.0])]; // distance 5 >= margin 1
        let (loss, adj) = contrastive(&outs, &[false], 1.0);
        assert_eq!(loss, 0.0);
        assert!(adj.iter().all(|a| a.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn contrastive_matches_hand_evaluation() {
        // Similar pair at distance 1 -> d^2 = 1.
        // Dissimilar pair at distance 0.5 with margin 1 -> (0.5)^2 = 0.25.
        // Batch mean = (1 + 0.25) / 2.
        let outs = vec![
            dv(&[1.0, 0.0]),
            dv(&[0.0, 0.0]),
            dv(&[0.5, 0.0]),
            dv(&[0.0, 0.0]),
        ];
        let (loss, adj) = contrastive(&outs, &[true, false], 1.0);
        assert_relative_eq!(loss, 0.625, max_relative = 1e-15);
        // Similar pair adjoint: 2/B * diff = (1, 0).
        assert_relative_eq!(adj[0][0], 1.0, max_relative = 1e-15);
        // Dissimilar: -2 (margin - d) / (d B) * diff = -2*0.5/(0.5*2)*0.5 = -0.5.
        assert_relative_eq!(adj[2][0], -0.5, max_relative = 1e-15);
    }

    #[test]
    fn triplet_equidistant_pays_exactly_margin() {
        let outs = vec![dv(&[0.0]), dv(&[1.0]), dv(&[-1.0])];
        let (loss, _) = triplet(&outs, 0.7);
        assert_relative_eq!(loss, 0.7, max_relative = 1e-15);
    }

    #[test]
    fn triplet_satisfied_hinge_is_zero() {
        // d(a,n)^2 = 9 >= d(a,p)^2 + margin = 1 + 1.
        let outs = vec![dv(&[0.0]), dv(&[1.0]), dv(&[3.0])];
        let (loss, adj) = triplet(&outs, 1.0);
        assert_eq!(loss, 0.0);
        assert!(adj.iter().all(|a| a.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn triplet_matches_hand_evaluation() {
        // a=(0,0), p=(1,0), n=(0,2): term = 1 - 4 + 2 = -1 -> inactive.
        // a=(0,0), p=(2,0), n=(1,0): term = 4 - 1 + 2 = 5 -> active.
        let outs = vec![
            dv(&[0.0, 0.0]),
            dv(&[1.0, 0.0]),
            dv(&[0.0, 2.0]),
            dv(&[0.0, 0.0]),
            dv(&[2.0, 0.0]),
            dv(&[1.0, 0.0]),
        ];
        let (loss, adj) = triplet(&outs, 2.0);
        assert_relative_eq!(loss, 2.5, max_relative = 1e-15);
        // Active triplet anchor adjoint: 2/B (n - p) = (n - p) = (-1, 0).
        assert_relative_eq!(adj[3][0], -1.0, max_relative = 1e-15);
    }

    #[test]
    fn squared_error_constant_target() {
        let outs = vec![dv(&[1.0, 2.0]), dv(&[3.0, 4.0])];
        let targets = vec![dv(&[1.0, 2.0]), dv(&[1.0, 2.0])];
        let (loss, adj) = squared_error(&outs, &targets);
        assert_relative_eq!(loss, (4.0 + 4.0) / 2.0, max_relative = 1e-15);
        assert_eq!(adj[0], dv(&[0.0, 0.0]));
        assert_relative_eq!(adj[1][0], 2.0, max_relative = 1e-15);
    }
}
