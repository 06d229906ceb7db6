//! Model quality metrics.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

fn check_pair(reference: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<()> {
    if reference.nrows() == 0 {
        return Err(Error::Empty);
    }
    if reference.shape() != predicted.shape() {
        return Err(Error::Dimension(format!(
            "reference {:?} vs predicted {:?}",
            reference.shape(),
            predicted.shape()
        )));
    }
    Ok(())
}

/// Root mean-square error: `sqrt(||Y_ref - Y||^2 / K)`.
pub fn rmse(reference: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<f64> {
    check_pair(reference, predicted)?;
    let diff = reference - predicted;
    Ok((diff.norm_squared() / reference.nrows() as f64).sqrt())
}

/// FIT index: `100 (1 - ||Y_ref - Y|| / ||Y_ref - mean(Y_ref)||)`, 100 at a
/// perfect prediction and 0 at the mean predictor. Undefined for a constant
/// reference.
pub fn fit_index(reference: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<f64> {
    check_pair(reference, predicted)?;
    let k = reference.nrows();
    let mut centered = reference.clone();
    for j in 0..reference.ncols() {
        let mean = reference.column(j).sum() / k as f64;
        for i in 0..k {
            centered[(i, j)] -= mean;
        }
    }
    let denom = centered.norm();
    if denom == 0.0 {
        return Err(Error::ConstantReference);
    }
    let numer = (reference - predicted).norm();
    Ok(100.0 * (1.0 - numer / denom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn col(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    #[test]
    fn rmse_identity_and_unit_offset() {
        let y = col(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert_relative_eq!(rmse(&y, &col(&[0.0; 4])).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rmse_direct_evaluation() {
        let v = rmse(&col(&[1.0, 2.0, 3.0]), &col(&[1.0, 1.0, 1.0])).unwrap();
        assert_relative_eq!(v, 1.2909944487358056, epsilon = 1e-15);
    }

    #[test]
    fn rmse_rejects_empty_and_mismatched() {
        assert!(matches!(
            rmse(&DMatrix::zeros(0, 1), &DMatrix::zeros(0, 1)),
            Err(Error::Empty)
        ));
        assert!(matches!(
            rmse(&col(&[1.0]), &col(&[1.0, 2.0])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn fit_identity_is_hundred_and_mean_predictor_is_zero() {
        let y = col(&[0.0, 2.0, 4.0, 1.0]);
        assert_relative_eq!(fit_index(&y, &y).unwrap(), 100.0, epsilon = 1e-12);
        let mean = col(&[1.75; 4]);
        assert_relative_eq!(fit_index(&y, &mean).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_direct_evaluation() {
        let y = col(&[0.0, 2.0]);
        assert_relative_eq!(fit_index(&y, &col(&[1.0, 1.0])).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(
            fit_index(&y, &col(&[0.0, 1.0])).unwrap(),
            29.289321881345245,
            epsilon = 1e-12
        );
    }

    #[test]
    fn fit_rejects_constant_reference() {
        let y = col(&[3.0, 3.0, 3.0]);
        assert!(matches!(
            fit_index(&y, &col(&[1.0, 2.0, 3.0])),
            Err(Error::ConstantReference)
        ));
    }

    #[test]
    fn fit_ranking_is_invariant_under_joint_affine_rescaling() {
        // The same scaler applied to reference and predictions must not
        // change which model ranks best.
        let reference = col(&[6.0, 7.0, 8.5, 7.2, 6.4]);
        let predictions = [
            col(&[6.1, 7.1, 8.4, 7.3, 6.5]),
            col(&[6.4, 6.9, 8.0, 7.5, 6.2]),
            col(&[7.0, 7.0, 7.0, 7.0, 7.0]),
        ];
        let rank = |seqs: &[DMatrix<f64>], reference: &DMatrix<f64>| {
            let mut fits: Vec<(usize, f64)> = seqs
                .iter()
                .enumerate()
                .map(|(i, p)| (i, fit_index(reference, p).unwrap()))
                .collect();
            fits.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            fits.iter().map(|(i, _)| *i).collect::<Vec<_>>()
        };
        let physical = rank(&predictions, &reference);
        let normalize = |m: &DMatrix<f64>| m.map(|v| 0.8 * v - 5.6);
        let scaled: Vec<DMatrix<f64>> = predictions.iter().map(&normalize).collect();
        let normalized = rank(&scaled, &normalize(&reference));
        assert_eq!(physical, normalized);
    }

    proptest! {
        #[test]
        fn rmse_is_invariant_under_joint_permutation(
            values in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..30),
            seed in 0u64..1000,
        ) {
            let reference: Vec<f64> = values.iter().map(|(a, _)| *a).collect();
            let predicted: Vec<f64> = values.iter().map(|(_, b)| *b).collect();
            let base = rmse(&col(&reference), &col(&predicted)).unwrap();
            // deterministic shuffle
            let mut idx: Vec<usize> = (0..values.len()).collect();
            let mut state = seed.wrapping_add(1);
            for i in (1..idx.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                idx.swap(i, (state >> 33) as usize % (i + 1));
            }
            let ref_p: Vec<f64> = idx.iter().map(|i| reference[*i]).collect();
            let pred_p: Vec<f64> = idx.iter().map(|i| predicted[*i]).collect();
            let permuted = rmse(&col(&ref_p), &col(&pred_p)).unwrap();
            prop_assert!((base - permuted).abs() < 1e-12 * (1.0 + base));
        }
    }
}
