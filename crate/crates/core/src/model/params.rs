//! Model parameters and their canonical flat-vector form.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Layer sizes of the MLP: input features, hidden units, output classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_in: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Dims {
    pub fn new(d_in: usize, hidden: usize, classes: usize) -> Result<Self> {
        if d_in == 0 || hidden == 0 || classes == 0 {
            return Err(Error::InvalidDims(format!(
                "all dims must be >= 1, got ({d_in}, {hidden}, {classes})"
            )));
        }
        Ok(Self {
            d_in,
            hidden,
            classes,
        })
    }

    /// Total number of scalars in a flattened parameter set.
    pub fn param_count(&self) -> usize {
        self.d_in * self.hidden + self.hidden + self.hidden * self.classes + self.classes
    }
}

/// The MLP's weights and biases. Flat order is w1 row-major, b1, w2
/// row-major, b2.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ParamSet {
    pub fn zeros(dims: Dims) -> ParamSet {
        ParamSet {
            w1: Array2::zeros((dims.d_in, dims.hidden)),
            b1: Array1::zeros(dims.hidden),
            w2: Array2::zeros((dims.hidden, dims.classes)),
            b2: Array1::zeros(dims.classes),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            d_in: self.w1.nrows(),
            hidden: self.w1.ncols(),
            classes: self.w2.ncols(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.dims().param_count()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }

    /// Canonical flat form: the unit the server aggregates.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        flat.extend(self.w1.iter());
        flat.extend(self.b1.iter());
        flat.extend(self.w2.iter());
        flat.extend(self.b2.iter());
        flat
    }

    /// Inverse of [`ParamSet::flatten`] for the given dims.
    pub fn from_flat(flat: &[f64], dims: Dims) -> Result<ParamSet> {
        if flat.len() != dims.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "flat vector of length {} cannot fill dims ({}, {}, {}) = {} params",
                flat.len(),
                dims.d_in,
                dims.hidden,
                dims.classes,
                dims.param_count()
            )));
        }
        let (w1_len, b1_len) = (dims.d_in * dims.hidden, dims.hidden);
        let w2_len = dims.hidden * dims.classes;
        let mut offset = 0;
        let w1 = Array2::from_shape_vec(
            (dims.d_in, dims.hidden),
            flat[offset..offset + w1_len].to_vec(),
        )
        .expect("length checked");
        offset += w1_len;
        let b1 = Array1::from_vec(flat[offset..offset + b1_len].to_vec());
        offset += b1_len;
        let w2 = Array2::from_shape_vec(
            (dims.hidden, dims.classes),
            flat[offset..offset + w2_len].to_vec(),
        )
        .expect("length checked");
        offset += w2_len;
        let b2 = Array1::from_vec(flat[offset..].to_vec());
        Ok(ParamSet { w1, b1, w2, b2 })
    }

    /// Mutable views of the four blocks in canonical flat order.
    pub(crate) fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Read-only views of the four blocks in canonical flat order.
    pub(crate) fn blocks(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }
}

/// Glorot-uniform weights (range +-sqrt(6 / (fan_in + fan_out)) per layer),
/// zero biases. Deterministic given (dims, seed).
pub fn init_params(dims: Dims, seed: u64) -> Result<ParamSet> {
    // Re-validate: Dims can be constructed directly.
    let dims = Dims::new(dims.d_in, dims.hidden, dims.classes)?;
    let mut rng = seeded_rng(seed);
    let mut params = ParamSet::zeros(dims);
    let limit1 = (6.0 / (dims.d_in + dims.hidden) as f64).sqrt();
    for v in params.w1.iter_mut() {
        *v = rng.random_range(-limit1..limit1);
    }
    let limit2 = (6.0 / (dims.hidden + dims.classes) as f64).sqrt();
    for v in params.w2.iter_mut() {
        *v = rng.random_range(-limit2..limit2);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn init_is_deterministic() {
        let dims = Dims::new(76, 50, 11).unwrap();
        let a = init_params(dims, 7).unwrap();
        let b = init_params(dims, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(dims, 8).unwrap());
    }

    #[test]
    fn biases_start_at_zero() {
        let params = init_params(Dims::new(5, 4, 3).unwrap(), 123).unwrap();
        assert!(params.b1.iter().all(|&v| v == 0.0));
        assert!(params.b2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn glorot_bound_holds() {
        let params = init_params(Dims::new(2, 3, 2).unwrap(), 1).unwrap();
        let limit = (6.0f64 / 5.0).sqrt();
        for &v in params.w1.iter() {
            assert!(v.abs() <= limit, "{v} outside +-{limit}");
        }
        let limit2 = (6.0f64 / 5.0).sqrt();
        for &v in params.w2.iter() {
            assert!(v.abs() <= limit2);
        }
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(Dims::new(0, 3, 2).is_err());
        assert!(Dims::new(3, 0, 2).is_err());
        assert!(Dims::new(3, 2, 0).is_err());
    }

    #[test]
    fn default_intrusion_dims_param_count() {
        let dims = Dims::new(76, 50, 11).unwrap();
        assert_eq!(dims.param_count(), 4411);
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trips(
            d_in in 1usize..6,
            hidden in 1usize..6,
            classes in 1usize..6,
            seed in 0u64..1000,
        ) {
            let dims = Dims::new(d_in, hidden, classes).unwrap();
            let params = init_params(dims, seed).unwrap();
            let flat = params.flatten();
            prop_assert_eq!(flat.len(), dims.param_count());
            let back = ParamSet::from_flat(&flat, dims).unwrap();
            prop_assert_eq!(back, params);
        }

        #[test]
        fn unflatten_flatten_round_trips(values in proptest::collection::vec(-10.0f64..10.0, 25)) {
            // 25 = 2*3 + 3 + 3*4 + 4
            let dims = Dims::new(2, 3, 4).unwrap();
            let params = ParamSet::from_flat(&values, dims).unwrap();
            prop_assert_eq!(params.flatten(), values);
        }
    }

    #[test]
    fn from_flat_rejects_wrong_length() {
        let dims = Dims::new(2, 2, 2).unwrap();
        assert!(ParamSet::from_flat(&[0.0; 5], dims).is_err());
    }
}
