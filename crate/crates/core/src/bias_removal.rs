//! Bias-absorbing feature encoding.
//!
//! A linear head `softmax(Wᵀx + b)` is rewritten as `softmax(W̄ᵀy)` with no
//! bias term. `W̄ᵀ = [Wᵀ, Pᵀ]` appends an orthonormal basis `Pᵀ` of the
//! orthogonal complement of `range(Wᵀ)` in `ℝ^C`, which gives the completed
//! matrix full row rank so `b` is always reachable. The encoded feature is
//! `y = [x; 0] + (W̄ᵀ)⁺b`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::container::{self, DType, Writer};
use crate::error::{check_dim, NodiError, Result};

pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Linear classification head with weight `W` (d×C) and bias `b` (C).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    weight: DMatrix<f64>,
    bias: DVector<f64>,
    dtype: DType,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeadHeader {
    d: usize,
    #[serde(rename = "C")]
    classes: usize,
    dtype: DType,
}

impl ClassifierHead {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        let (d, c) = weight.shape();
        if d < 1 {
            return Err(NodiError::InvalidHead("latent dimension must be >= 1".into()));
        }
        if c < 2 {
            return Err(NodiError::InvalidHead(format!("need at least 2 classes, got {c}")));
        }
        if bias.len() != c {
            return Err(NodiError::InvalidHead(format!(
                "bias length {} does not match class count {c}",
                bias.len()
            )));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(NodiError::InvalidHead("non-finite entry".into()));
        }
        Ok(ClassifierHead {
            weight,
            bias,
            dtype: DType::F64,
        })
    }

    /// Builds a head from a row-major `d×C` weight slice.
    pub fn from_row_major(d: usize, c: usize, weight: &[f64], bias: &[f64]) -> Result<Self> {
        check_dim(d * c, weight.len())?;
        Self::new(DMatrix::from_row_slice(d, c, weight), DVector::from_column_slice(bias))
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn latent_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.weight.ncols()
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    /// `Wᵀx + b`.
    pub fn logits(&self, feature: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.latent_dim(), feature.len())?;
        let x = DVector::from_column_slice(feature);
        Ok(self.weight.tr_mul(&x) + &self.bias)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, mut payload): (HeadHeader, _) = container::open(bytes)?;
        let weight_at = payload.offset();
        let w = payload.reals(h.d * h.classes, h.dtype, "weight")?;
        let b = payload.reals(h.classes, h.dtype, "bias")?;
        payload.finish()?;
        Self::from_row_major(h.d, h.classes, &w, &b)
            .map_err(|e| NodiError::format(weight_at, e.to_string()))
            .map(|head| head.with_dtype(h.dtype))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = HeadHeader {
            d: self.latent_dim(),
            classes: self.num_classes(),
            dtype: self.dtype,
        };
        let mut w = Writer::new(&header)?;
        // nalgebra is column-major; the file is row-major d×C.
        w.reals(self.weight.transpose().iter(), self.dtype);
        w.reals(self.bias.iter(), self.dtype);
        Ok(w.into_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

/// The column-completed head and the precomputed shift `(W̄ᵀ)⁺b`.
#[derive(Debug, Clone)]
pub struct CompletedHead {
    completed_weight: DMatrix<f64>,
    complement_basis: DMatrix<f64>,
    pinv_bias: DVector<f64>,
    numerical_rank: usize,
    latent_dim: usize,
}

impl CompletedHead {
    /// `W̄ᵀ`, shape C×D.
    pub fn completed_weight(&self) -> &DMatrix<f64> {
        &self.completed_weight
    }

    /// `Pᵀ`, shape C×m.
    pub fn complement_basis(&self) -> &DMatrix<f64> {
        &self.complement_basis
    }

    pub fn pinv_bias(&self) -> &DVector<f64> {
        &self.pinv_bias
    }

    pub fn numerical_rank(&self) -> usize {
        self.numerical_rank
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Number of appended complement columns `m = C - rank`.
    pub fn padding(&self) -> usize {
        self.complement_basis.ncols()
    }

    /// Encoded dimension `D = d + m`.
    pub fn encoded_dim(&self) -> usize {
        self.latent_dim + self.padding()
    }

    /// `W̄ᵀy`.
    pub fn logits(&self, encoded: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.encoded_dim(), encoded.len())?;
        Ok(&self.completed_weight * DVector::from_column_slice(encoded))
    }

    pub fn encode(&self, feature: &[f64]) -> Result<Vec<f64>> {
        encode(feature, self)
    }
}

pub fn complete_head(head: &ClassifierHead, rank_tol: f64) -> Result<CompletedHead> {
    if !(rank_tol > 0.0) {
        return Err(NodiError::Config(format!("rank_tol must be > 0, got {rank_tol}")));
    }
    let d = head.latent_dim();
    let c = head.num_classes();
    let wt = head.weight.transpose();

    // Zero-pad to at least C columns so the thin U is a full C×C basis.
    let padded = if d >= c {
        wt.clone()
    } else {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (c, d)).copy_from(&wt);
        p
    };
    let svd = padded.svd(true, false);
    let u = svd.u.as_ref().expect("U requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = rank_tol * sigma_max;
    let null_cols: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| sigma_max == 0.0 || s <= cutoff)
        .map(|(i, _)| i)
        .collect();
    let numerical_rank = c - null_cols.len();

    let mut complement_basis = u.select_columns(null_cols.iter());
    // Fix the sign of each basis column: largest-magnitude entry positive.
    for mut col in complement_basis.column_iter_mut() {
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }
    let m = complement_basis.ncols();
    let mut completed_weight = DMatrix::zeros(c, d + m);
    completed_weight.view_mut((0, 0), (c, d)).copy_from(&wt);
    if m > 0 {
        completed_weight.view_mut((0, d), (c, m)).copy_from(&complement_basis);
    }

    let pinv_bias = pinv_apply(&completed_weight, &head.bias, rank_tol)?;

    Ok(CompletedHead {
        completed_weight,
        complement_basis,
        pinv_bias,
        numerical_rank,
        latent_dim: d,
    })
}

/// `A⁺v` through a thin SVD of `A`.
fn pinv_apply(a: &DMatrix<f64>, v: &DVector<f64>, rank_tol: f64) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let eps = rank_tol * svd.singular_values.max();
    svd.solve(v, eps)
        .map_err(|e| NodiError::InvalidHead(format!("pseudo-inverse failed: {e}")))
}

/// `y = [x; 0_m] + (W̄ᵀ)⁺b`.
pub fn encode(feature: &[f64], completed: &CompletedHead) -> Result<Vec<f64>> {
    check_dim(completed.latent_dim, feature.len())?;
    let mut out = completed.pinv_bias.as_slice().to_vec();
    for (o, x) in out.iter_mut().zip(feature) {
        *o += x;
    }
    Ok(out)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Largest elementwise gap between the raw and bias-absorbed softmax.
pub fn softmax_discrepancy(head: &ClassifierHead, completed: &CompletedHead, feature: &[f64]) -> Result<f64> {
    let raw = softmax(head.logits(feature)?.as_slice());
    let y = encode(feature, completed)?;
    let absorbed = softmax(completed.logits(&y)?.as_slice());
    Ok(raw
        .iter()
        .zip(&absorbed)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_head(rng: &mut ChaCha8Rng, d: usize, c: usize) -> ClassifierHead {
        let w: Vec<f64> = (0..d * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
        ClassifierHead::from_row_major(d, c, &w, &b).unwrap()
    }

    #[test]
    fn identity_block_completes_with_third_axis() {
        // Wᵀ = [[1,0],[0,1],[0,0]] so W is 2×3.
        let head = ClassifierHead::from_row_major(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]).unwrap();
        let ch = complete_head(&head, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(ch.numerical_rank(), 2);
        assert_eq!(ch.padding(), 1);
        let p = ch.complement_basis().column(0);
        assert!((p - DVector::from_column_slice(&[0.0, 0.0, 1.0])).amax() < 1e-12);
        assert!((ch.completed_weight() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
        let pb = ch.pinv_bias();
        assert!((pb - DVector::from_column_slice(&[0.0, 0.0, 1.0])).amax() < 1e-12);

        let y = encode(&[2.0, -1.0], &ch).unwrap();
        let expected = [2.0, -1.0, 1.0];
        assert!(y.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(softmax_discrepancy(&head, &ch, &[2.0, -1.0]).unwrap() < 1e-12);
    }

    #[test]
    fn square_invertible_zero_bias() {
        let head = ClassifierHead::from_row_major(2, 2, &[2.0, 1.0, -1.0, 3.0], &[0.0, 0.0]).unwrap();
        let ch = complete_head(&head, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(ch.padding(), 0);
        assert_eq!(ch.completed_weight(), &head.weight().transpose());
        assert!(ch.pinv_bias().iter().all(|v| *v == 0.0));
        assert_eq!(encode(&[0.3, -0.7], &ch).unwrap(), vec![0.3, -0.7]);
    }

    #[test]
    fn full_column_rank_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // C=5, d=3: Wᵀ is 5×3 with full column rank 3, so m = 2.
        let head = random_head(&mut rng, 3, 5);
        let ch = complete_head(&head, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(ch.numerical_rank(), 3);
        assert_eq!(ch.encoded_dim(), 5);
        let residual = ch.completed_weight() * ch.pinv_bias() - head.bias();
        assert!(residual.amax() < 1e-10, "residual {residual}");
    }

    #[test]
    fn complement_is_orthonormal_and_orthogonal_to_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = random_head(&mut rng, 4, 9);
        let ch = complete_head(&head, DEFAULT_RANK_TOL).unwrap();
        let p = ch.complement_basis();
        assert_eq!(p.ncols(), 5);
        let gram = p.transpose() * p;
        assert!((gram - DMatrix::<f64>::identity(5, 5)).amax() < 1e-12);
        let leak = head.weight() * p;
        assert!(leak.amax() <= DEFAULT_RANK_TOL * head.weight().norm());
    }

    #[test]
    fn full_row_rank_transpose_has_no_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let head = random_head(&mut rng, 10, 4);
        let ch = complete_head(&head, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(ch.padding(), 0);
        assert_eq!(ch.encoded_dim(), 10);
        // reduces to x + (Wᵀ)⁺b
        let pinv = head.weight().transpose().pseudo_inverse(1e-14).unwrap();
        let expected = pinv * head.bias();
        assert!((ch.pinv_bias() - expected).amax() < 1e-10);
    }

    #[test]
    fn rank_deficient_wide_head() {
        // rank-1 W with C=4
        let u = [1.0, 2.0, -1.0];
        let v = [0.5, -1.0, 2.0, 1.0];
        let w: Vec<f64> = u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        let head = ClassifierHead::from_row_major(3, 4, &w, &[1.0, -1.0, 0.5, 2.0]).unwrap();
        let ch = complete_head(&head, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(ch.numerical_rank(), 1);
        assert_eq!(ch.encoded_dim(), 3 + 3);
        assert!(softmax_discrepancy(&head, &ch, &[0.1, 0.2, 0.3]).unwrap() < 1e-12);
    }

    #[test]
    fn rejects_bad_heads_and_dimensions() {
        assert!(matches!(
            ClassifierHead::from_row_major(1, 2, &[f64::NAN, 1.0], &[0.0, 0.0]),
            Err(NodiError::InvalidHead(_))
        ));
        assert!(matches!(
            ClassifierHead::from_row_major(2, 1, &[1.0, 1.0], &[0.0]),
            Err(NodiError::InvalidHead(_))
        ));
        let head = ClassifierHead::from_row_major(2, 2, &[1.0, 0.0, 0.0, 1.0], &[0.0, 1.0]).unwrap();
        let ch = complete_head(&head, DEFAULT_RANK_TOL).unwrap();
        assert!(matches!(
            encode(&[1.0, 2.0, 3.0], &ch),
            Err(NodiError::Dimension { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn head_file_roundtrip_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dtype in [DType::F32, DType::F64] {
            let head = random_head(&mut rng, 3, 4).with_dtype(dtype);
            let bytes = head.to_bytes().unwrap();
            let back = ClassifierHead::from_bytes(&bytes).unwrap();
            assert_eq!(back.to_bytes().unwrap(), bytes);
            if dtype == DType::F64 {
                assert_eq!(back, head);
            }
        }
    }

    #[test]
    fn head_header_uses_capital_c() {
        let head = ClassifierHead::from_row_major(1, 2, &[1.0, 2.0], &[0.0, 0.0]).unwrap();
        let bytes = head.to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes[8..]);
        assert!(text.starts_with(r#"{"d":1,"C":2,"dtype":"f64"}"#));
    }
}
