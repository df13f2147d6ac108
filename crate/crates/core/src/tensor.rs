//! Conversions between per-record HWC arrays and batched NCHW tensors.

use ndarray::{Array1, Array3, ArrayD, Axis, IxDyn};

use crate::nn::Real;

/// Stacks `m × n × c` arrays into `[N, c, m, n]`.
pub fn stack_hwc<F: Real>(items: &[&Array3<f32>]) -> ArrayD<F> {
    assert!(!items.is_empty());
    let (m, n, c) = items[0].dim();
    let mut out = ArrayD::<F>::zeros(IxDyn(&[items.len(), c, m, n]));
    for (b, item) in items.iter().enumerate() {
        assert_eq!(item.dim(), (m, n, c), "stack_hwc: ragged batch");
        for ((i, j, k), &v) in item.indexed_iter() {
            out[[b, k, i, j]] = F::from(v).unwrap();
        }
    }
    out
}

/// Item `index` of `[N, c, m, n]` as `m × n × c`.
pub fn unstack_hwc<F: Real>(t: &ArrayD<F>, index: usize) -> Array3<f32> {
    let s = t.shape();
    assert_eq!(s.len(), 4);
    let (c, m, n) = (s[1], s[2], s[3]);
    Array3::from_shape_fn((m, n, c), |(i, j, k)| Real::to_f64(t[[index, k, i, j]]) as f32)
}

/// Stacks vectors into `[N, K]`.
pub fn stack_rows<F: Real>(rows: &[&Array1<f32>]) -> ArrayD<F> {
    assert!(!rows.is_empty());
    let k = rows[0].len();
    let mut out = ArrayD::<F>::zeros(IxDyn(&[rows.len(), k]));
    for (b, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), k, "stack_rows: ragged batch");
        for (j, &v) in r.iter().enumerate() {
            out[[b, j]] = F::from(v).unwrap();
        }
    }
    out
}

/// Row `index` of `[N, K]`.
pub fn row<F: Real>(t: &ArrayD<F>, index: usize) -> Array1<f32> {
    t.index_axis(Axis(0), index)
        .iter()
        .map(|&v| Real::to_f64(v) as f32)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hwc_round_trip() {
        let a = Array3::from_shape_fn((3, 4, 2), |(i, j, k)| (i * 100 + j * 10 + k) as f32);
        let b = a.mapv(|v| -v);
        let t = stack_hwc::<f32>(&[&a, &b]);
        assert_eq!(t.shape(), &[2, 2, 3, 4]);
        assert_eq!(t[[0, 1, 2, 3]], 231.0);
        assert_eq!(unstack_hwc(&t, 0), a);
        assert_eq!(unstack_hwc(&t, 1), b);
    }
}
