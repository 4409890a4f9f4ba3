//! Nearest-codebook-entry lookup.

use molmm_core::Tensor;

use crate::error::VqError;

/// Index of the entry nearest to `code` in squared Euclidean distance;
/// ties go to the lowest index.
pub fn nearest(code: &[f32], codebook: &Tensor) -> usize {
    let d = codebook.shape()[1];
    let mut best = (0, f64::INFINITY);
    for (k, entry) in codebook.data().chunks_exact(d).enumerate() {
        let dist: f64 = entry
            .iter()
            .zip(code)
            .map(|(&e, &c)| {
                let t = c as f64 - e as f64;
                t * t
            })
            .sum();
        if dist < best.1 {
            best = (k, dist);
        }
    }
    best.0
}

/// Quantizes every code along the last axis of `zhat` (any leading shape,
/// e.g. h×w×n_z). Returns the quantized tensor and one index per code.
pub fn quantize(zhat: &Tensor, codebook: &Tensor) -> Result<(Tensor, Vec<usize>), VqError> {
    if codebook.rank() != 2 || codebook.shape()[0] == 0 {
        return Err(VqError::Config("codebook must be a non-empty n×n_z matrix".into()));
    }
    let d = codebook.shape()[1];
    let got = zhat.shape().last().copied().unwrap_or(0);
    if got != d {
        return Err(VqError::DimensionMismatch { expected: d, got });
    }
    let indices: Vec<usize> = zhat.data().chunks_exact(d).map(|c| nearest(c, codebook)).collect();
    let mut data = Vec::with_capacity(zhat.len());
    for &k in &indices {
        data.extend_from_slice(&codebook.data()[k * d..(k + 1) * d]);
    }
    Ok((Tensor::new(zhat.shape().to_vec(), data)?, indices))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn picks_nearest() {
        let z = t(&[2, 2], &[0.0, 0.0, 2.0, 2.0]);
        let (q, idx) = quantize(&t(&[1, 1, 2], &[0.4, 0.3]), &z).unwrap();
        assert_eq!(idx, vec![0]);
        assert_eq!(q.data(), &[0.0, 0.0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let z = t(&[4, 1], &[5.0, -1.0, 9.0, 1.0]);
        let (_, idx) = quantize(&t(&[1], &[0.0]), &z).unwrap();
        assert_eq!(idx, vec![1]);
    }

    #[test]
    fn width_is_checked() {
        let z = t(&[2, 2], &[0.0; 4]);
        assert!(matches!(
            quantize(&t(&[3], &[0.0; 3]), &z),
            Err(VqError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }
}
