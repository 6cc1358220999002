//! Kernel construction, PSD repair and the two diversity measures used by
//! the reward: log-det volume (intra-batch) and ridge leverage scores
//! (inter-batch, relative to a history).
//!
//! Matrices are `nalgebra::DMatrix<f64>` with one item per row. Everything
//! here is a pure function of its inputs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dataio::EmbeddingSet;
use crate::error::{Error, Result};

/// Diagonal jitter added after PSD repair of a volume kernel.
pub const DEFAULT_JITTER: f64 = 1e-6;
/// Ridge regularizer for leverage scores.
pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_LENGTH_SCALE: f64 = 1.0;
/// Lower clamp on `ψ_uᵀφ_i` before taking `1/√·` in the quality factor.
pub const DEFAULT_QUALITY_FLOOR: f64 = 1e-6;

/// A square, real similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix(DMatrix<f64>);

impl KernelMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::NotSquare {
                rows: entries.nrows(),
                cols: entries.ncols(),
            });
        }
        Ok(Self(entries))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Principal submatrix over `idx` (repeats allowed).
    pub fn submatrix(&self, idx: &[usize]) -> KernelMatrix {
        KernelMatrix(DMatrix::from_fn(idx.len(), idx.len(), |r, c| {
            self.0[(idx[r], idx[c])]
        }))
    }
}

/// Log-determinant volume of a kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Volume {
    /// `exp(log_volume)` when the determinant sign is positive, else 0.
    pub volume: f64,
    pub log_volume: f64,
    pub sign: f64,
}

/// Batch diversity: volume of the batch kernel plus the summed log leverage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityScore {
    pub volume: f64,
    pub log_volume: f64,
    pub rls_logsum: f64,
}

fn check_features(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "feature dimensions differ: {} vs {}",
            x.ncols(),
            y.ncols()
        )));
    }
    Ok(())
}

/// `K[i, j] = x_iᵀ y_j`.
pub fn linear_kernel(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_features(x, y)?;
    Ok(x * y.transpose())
}

/// Gaussian kernel `exp(-‖x_i - y_j‖² / (2 ℓ²))`.
pub fn rbf_kernel(x: &DMatrix<f64>, y: &DMatrix<f64>, length_scale: f64) -> Result<DMatrix<f64>> {
    check_features(x, y)?;
    if !(length_scale > 0.0) || !length_scale.is_finite() {
        return Err(Error::param(format!(
            "length_scale must be positive, got {length_scale}"
        )));
    }
    let denom = 2.0 * length_scale * length_scale;
    Ok(DMatrix::from_fn(x.nrows(), y.nrows(), |i, j| {
        let sq: f64 = x
            .row(i)
            .iter()
            .zip(y.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (-sq / denom).exp()
    }))
}

/// Cosine similarity, clamped into `[-1, 1]` against rounding.
pub fn cosine_kernel(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_features(x, y)?;
    let norms = |m: &DMatrix<f64>, which: &str| -> Result<Vec<f64>> {
        m.row_iter()
            .enumerate()
            .map(|(i, r)| {
                let n = r.norm();
                if n == 0.0 {
                    Err(Error::param(format!("{which} row {i} has zero norm")))
                } else {
                    Ok(n)
                }
            })
            .collect()
    };
    let nx = norms(x, "X")?;
    let ny = norms(y, "Y")?;
    let dots = x * y.transpose();
    Ok(DMatrix::from_fn(x.nrows(), y.nrows(), |i, j| {
        (dots[(i, j)] / (nx[i] * ny[j])).clamp(-1.0, 1.0)
    }))
}

/// Per-item quality factors `q_i = 1/√max(floor, ψ_uᵀφ_i)`.
pub fn quality_factors(
    items: &[usize],
    embeddings: &EmbeddingSet,
    user: usize,
    floor: f64,
) -> Result<Vec<f64>> {
    if !(floor > 0.0) {
        return Err(Error::param(format!(
            "quality floor must be positive, got {floor}"
        )));
    }
    embeddings.check_user(user)?;
    items
        .iter()
        .map(|&i| {
            embeddings.check_item(i)?;
            let sim = embeddings.item(i).dot(&embeddings.user(user));
            Ok(1.0 / sim.max(floor).sqrt())
        })
        .collect()
}

/// Rows `q_i φ_i` for the items in `items`, so that the quality-modulated
/// kernel is the Gram matrix of the returned rows.
pub fn quality_features(
    items: &[usize],
    embeddings: &EmbeddingSet,
    user: usize,
    floor: f64,
) -> Result<DMatrix<f64>> {
    let q = quality_factors(items, embeddings, user, floor)?;
    let d = embeddings.rank();
    let mut out = DMatrix::zeros(items.len(), d);
    for (r, (&i, &qi)) in items.iter().zip(q.iter()).enumerate() {
        out.row_mut(r).copy_from(&(embeddings.item(i) * qi));
    }
    Ok(out)
}

/// `L_ij = q_i (φ_iᵀφ_j) q_j` over the item subset `items`.
pub fn quality_modulated_kernel(
    items: &[usize],
    embeddings: &EmbeddingSet,
    user: usize,
    floor: f64,
) -> Result<KernelMatrix> {
    if items.is_empty() {
        return Err(Error::param(
            "quality-modulated kernel needs a nonempty item set",
        ));
    }
    let f = quality_features(items, embeddings, user, floor)?;
    KernelMatrix::new(&f * f.transpose())
}

/// Symmetrize, clip negative eigenvalues to zero, rebuild, add `jitter·I`.
pub fn psd_project(m: &DMatrix<f64>, jitter: f64) -> Result<KernelMatrix> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if !(jitter >= 0.0) {
        return Err(Error::param(format!(
            "jitter must be nonnegative, got {jitter}"
        )));
    }
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let q = &eig.eigenvectors;
    let mut rebuilt = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    // exact symmetry after the rebuild
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (rebuilt[(i, j)] + rebuilt[(j, i)]);
            rebuilt[(i, j)] = avg;
            rebuilt[(j, i)] = avg;
        }
        rebuilt[(i, i)] += jitter;
    }
    Ok(KernelMatrix(rebuilt))
}

/// Sign and log-absolute-value of the determinant via LU with partial pivoting.
pub fn slogdet(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Ok((1.0, 0.0));
    }
    let lu = m.clone().lu();
    let mut sign: f64 = lu.p().determinant();
    let mut logabs = 0.0;
    let u = lu.u();
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        if d == 0.0 || !d.is_finite() {
            return Ok((0.0, f64::NEG_INFINITY));
        }
        sign *= d.signum();
        logabs += d.abs().ln();
    }
    Ok((sign, logabs))
}

/// Volume of a (PSD-repaired) kernel as `exp(log det)`.
pub fn log_det_volume(kernel: &KernelMatrix) -> Volume {
    // KernelMatrix is square by construction.
    let (sign, logabs) = slogdet(kernel.as_matrix()).unwrap_or((0.0, f64::NEG_INFINITY));
    if sign > 0.0 {
        Volume {
            volume: logabs.exp(),
            log_volume: logabs,
            sign,
        }
    } else {
        Volume {
            volume: 0.0,
            log_volume: logabs,
            sign,
        }
    }
}

/// Anything that can produce kernel submatrices over item indices.
pub trait KernelSource {
    fn submatrix(&self, idx: &[usize]) -> DMatrix<f64>;
}

impl KernelSource for KernelMatrix {
    fn submatrix(&self, idx: &[usize]) -> DMatrix<f64> {
        KernelMatrix::submatrix(self, idx).into_inner()
    }
}

/// Linear kernel over the rows of a feature matrix, evaluated lazily.
#[derive(Debug, Clone, Copy)]
pub struct FeatureKernel<'a> {
    features: &'a DMatrix<f64>,
}

impl<'a> FeatureKernel<'a> {
    pub fn new(features: &'a DMatrix<f64>) -> Self {
        Self { features }
    }
}

impl KernelSource for FeatureKernel<'_> {
    fn submatrix(&self, idx: &[usize]) -> DMatrix<f64> {
        let rows = self.features.select_rows(idx);
        &rows * rows.transpose()
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::param(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    Ok(())
}

/// Ridge leverage score of each `l ∈ new_items` against the fixed `history`.
///
/// For each `l` the kernel over `history ++ [l]` is PSD-repaired (no jitter)
/// and `κ_l = [L (L + λI)^{-1}]` is read at the position of `l`, which is
/// the last row. Items of `new_items` do not see each other.
pub fn ridge_leverage_scores<K: KernelSource + ?Sized>(
    history: &[usize],
    new_items: &[usize],
    source: &K,
    lambda: f64,
) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let mut idx = Vec::with_capacity(history.len() + 1);
    new_items
        .iter()
        .map(|&l| {
            idx.clear();
            idx.extend_from_slice(history);
            idx.push(l);
            let kernel = psd_project(&source.submatrix(&idx), 0.0)?.into_inner();
            leverage_at_last(&kernel, lambda)
        })
        .collect()
}

fn leverage_at_last(kernel: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    let n = kernel.nrows();
    let shifted = kernel + DMatrix::identity(n, n) * lambda;
    let chol = shifted
        .cholesky()
        .ok_or_else(|| Error::Numerical("L + λI is not positive definite".into()))?;
    // L and (L + λI)^{-1} commute, so the diagonal of L(L+λI)^{-1} is that of (L+λI)^{-1}L.
    let last = kernel.column(n - 1).into_owned();
    let solved = chol.solve(&last);
    Ok(solved[n - 1])
}

/// Incremental leverage scores for a linear kernel over feature rows.
///
/// With `X` the history features, `κ(x) = xᵀ (XᵀX + xxᵀ + λI)^{-1} x`, which
/// equals the kernel-space score of [`ridge_leverage_scores`] on `XXᵀ` but
/// costs `O(d³)` regardless of history length.
#[derive(Debug, Clone)]
pub struct FeatureRidge {
    gram: DMatrix<f64>,
    lambda: f64,
    len: usize,
}

impl FeatureRidge {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self {
            gram: DMatrix::zeros(dim, dim),
            lambda,
            len: 0,
        })
    }

    /// Number of rows pushed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `XᵀX` of the history.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn score(&self, x: &DVector<f64>) -> Result<f64> {
        let d = self.gram.nrows();
        if x.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "feature row has {} entries, expected {d}",
                x.len()
            )));
        }
        let m = &self.gram + x * x.transpose() + DMatrix::identity(d, d) * self.lambda;
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Numerical("XᵀX + λI is not positive definite".into()))?;
        Ok(x.dot(&chol.solve(x)))
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        self.gram += x * x.transpose();
        self.len += 1;
    }
}

/// `Σ log κ_i`.
pub fn batch_rls_logsum(kappas: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for &k in kappas {
        if !(k > 0.0) {
            return Err(Error::param(format!(
                "leverage scores must be positive, got {k}"
            )));
        }
        total += k.ln();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn linear_kernel_examples() {
        let id = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(linear_kernel(&id, &id).unwrap(), id);
        let dup = m(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(
            linear_kernel(&dup, &dup).unwrap(),
            DMatrix::from_element(2, 2, 1.0)
        );
        let x = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            linear_kernel(&x, &x).unwrap(),
            m(2, 2, &[5.0, 11.0, 11.0, 25.0])
        );
    }

    #[test]
    fn linear_kernel_rejects_mismatch() {
        let a = DMatrix::zeros(2, 3);
        let b = DMatrix::zeros(2, 2);
        assert!(matches!(
            linear_kernel(&a, &b),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn rbf_values() {
        let x = m(1, 1, &[0.0]);
        let y = m(1, 1, &[1.0]);
        assert_relative_eq!(rbf_kernel(&x, &x, 1.0).unwrap()[(0, 0)], 1.0);
        assert_relative_eq!(
            rbf_kernel(&x, &y, 1.0).unwrap()[(0, 0)],
            0.606_530_659_712_633_4,
            epsilon = 1e-12
        );
        let far = m(1, 1, &[30.0]);
        let v = rbf_kernel(&x, &far, 1.0).unwrap()[(0, 0)];
        assert!((0.0..1e-100).contains(&v));
        assert!(rbf_kernel(&x, &y, 0.0).is_err());
        assert!(rbf_kernel(&x, &y, -1.0).is_err());
    }

    #[test]
    fn cosine_values() {
        let a = m(1, 2, &[1.0, 2.0]);
        let par = m(1, 2, &[2.0, 4.0]);
        let orth = m(1, 2, &[-2.0, 1.0]);
        let anti = m(1, 2, &[-1.0, -2.0]);
        assert_relative_eq!(
            cosine_kernel(&a, &par).unwrap()[(0, 0)],
            1.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            cosine_kernel(&a, &orth).unwrap()[(0, 0)],
            0.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            cosine_kernel(&a, &anti).unwrap()[(0, 0)],
            -1.0,
            epsilon = 1e-15
        );
        let zero = m(1, 2, &[0.0, 0.0]);
        assert!(cosine_kernel(&a, &zero).is_err());
    }

    fn embeddings(items: DMatrix<f64>, users: DMatrix<f64>) -> EmbeddingSet {
        EmbeddingSet::new(items, users).unwrap()
    }

    #[test]
    fn quality_kernel_with_unit_relevance_is_linear() {
        // every item has ψᵀφ = 1 with ψ = (1, 1) and rows on the line x + y = 1
        let items = m(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.6, 0.4]);
        let users = m(1, 2, &[1.0, 1.0]);
        let emb = embeddings(items.clone(), users);
        let l = quality_modulated_kernel(&[0, 1, 2], &emb, 0, DEFAULT_QUALITY_FLOOR).unwrap();
        assert_eq!(l.as_matrix(), &linear_kernel(&items, &items).unwrap());
    }

    #[test]
    fn quality_kernel_scaling() {
        // φ_0ᵀφ_1 = 0.8; ψᵀφ_0 = 4, ψᵀφ_1 = 1
        let items = m(2, 2, &[1.0, 0.0, 0.8, 0.6]);
        let users = m(1, 2, &[4.0, -11.0 / 3.0]);
        let emb = embeddings(items, users);
        let l = quality_modulated_kernel(&[0, 1], &emb, 0, DEFAULT_QUALITY_FLOOR).unwrap();
        assert_relative_eq!(l.as_matrix()[(0, 1)], 0.4, epsilon = 1e-12);
        assert_relative_eq!(l.as_matrix()[(1, 0)], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn quality_factor_floor_clamp() {
        let items = m(1, 1, &[1.0]);
        let users = m(1, 1, &[-0.3]);
        let emb = embeddings(items, users);
        let q = quality_factors(&[0], &emb, 0, 1e-6).unwrap();
        assert_relative_eq!(q[0], 1000.0, epsilon = 1e-9);
    }

    #[test]
    fn psd_project_examples() {
        let spd = m(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let out = psd_project(&spd, 0.0).unwrap();
        assert!((out.as_matrix() - &spd).amax() < 1e-10);

        let swap = m(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let out = psd_project(&swap, 0.0).unwrap();
        assert!((out.as_matrix() - DMatrix::from_element(2, 2, 0.5)).amax() < 1e-12);

        let asym = m(2, 2, &[1.0, 3.0, -1.0, 2.0]);
        let sym = (&asym + asym.transpose()) * 0.5;
        assert_eq!(
            psd_project(&asym, 1e-6).unwrap(),
            psd_project(&sym, 1e-6).unwrap()
        );

        assert!(matches!(
            psd_project(&DMatrix::zeros(2, 3), 0.0),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn volume_examples() {
        let v = log_det_volume(&KernelMatrix::new(DMatrix::identity(4, 4)).unwrap());
        assert_relative_eq!(v.log_volume, 0.0);
        assert_relative_eq!(v.volume, 1.0);

        let v = log_det_volume(&KernelMatrix::new(m(2, 2, &[2.0, 0.0, 0.0, 3.0])).unwrap());
        assert_relative_eq!(v.log_volume, 6.0f64.ln(), epsilon = 1e-12);

        // two identical rows plus an independent one: eigenvalues (2, 1, 0) before jitter
        let x = m(3, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let l = psd_project(&linear_kernel(&x, &x).unwrap(), 1e-6).unwrap();
        let v = log_det_volume(&l);
        assert!(v.volume > 0.0);
        assert!(v.volume <= 1e-5 * 2.0 * 1.0);
    }

    #[test]
    fn singular_volume_is_zero() {
        let v = log_det_volume(&KernelMatrix::new(DMatrix::from_element(2, 2, 1.0)).unwrap());
        assert_eq!(v.volume, 0.0);
    }

    #[test]
    fn leverage_examples() {
        let single = KernelMatrix::new(m(1, 1, &[1.0])).unwrap();
        let k = ridge_leverage_scores(&[], &[0], &single, 0.1).unwrap();
        assert_relative_eq!(k[0], 1.0 / 1.1, epsilon = 1e-12);

        let dup = KernelMatrix::new(DMatrix::from_element(2, 2, 1.0)).unwrap();
        let k = ridge_leverage_scores(&[0], &[1], &dup, 0.1).unwrap();
        assert_relative_eq!(k[0], 1.0 / 2.1, epsilon = 1e-12);

        let k = ridge_leverage_scores(&[], &[0], &single, 1e-9).unwrap();
        assert!((k[0] - 1.0).abs() < 1e-8);

        assert!(ridge_leverage_scores(&[], &[0], &single, 0.0).is_err());
        assert!(ridge_leverage_scores(&[], &[0], &single, -1.0).is_err());
    }

    #[test]
    fn feature_ridge_matches_kernel_route() {
        let x = m(
            5,
            3,
            &[
                0.2, 0.9, -0.1, 1.0, 0.0, 0.3, -0.5, 0.5, 0.5, 0.2, 0.9, -0.1, 0.0, 0.0, 1.0,
            ],
        );
        let source = FeatureKernel::new(&x);
        let mut ridge = FeatureRidge::new(3, 0.1).unwrap();
        let mut history = Vec::new();
        for l in 0..5 {
            let row = x.row(l).transpose();
            let fast = ridge.score(&row).unwrap();
            let slow = ridge_leverage_scores(&history, &[l], &source, 0.1).unwrap()[0];
            assert_relative_eq!(fast, slow, epsilon = 1e-10);
            ridge.push(&row);
            history.push(l);
        }
        assert_eq!(ridge.len(), 5);
    }

    #[test]
    fn rls_logsum_examples() {
        assert_eq!(batch_rls_logsum(&[1.0]).unwrap(), 0.0);
        assert_relative_eq!(
            batch_rls_logsum(&[0.5, 0.5]).unwrap(),
            -1.386_294_361_119_890_6
        );
        assert_relative_eq!(batch_rls_logsum(&[0.3]).unwrap(), 0.3f64.ln());
        assert!(batch_rls_logsum(&[0.5, 0.0]).is_err());
        assert!(batch_rls_logsum(&[-0.1]).is_err());
    }
}
