//! Generative covariance models and the inversion that builds one from a
//! prescribed canonical solution `(R, B, Γ)`.

use nalgebra::{DMatrix, DVector};

use crate::cca::CcaSolution;
use crate::error::{invalid, CcaError, Result};
use crate::linalg::{self, sym_eigen_sorted};

/// Relative tolerance for the PSD check on an assembled joint covariance.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Joint covariance of `(x, y)` together with its blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    sigma_x: DMatrix<f64>,
    sigma_y: DMatrix<f64>,
    sigma_xy: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

impl CovarianceModel {
    /// Assemble from blocks. `sigma_x` and `sigma_y` are symmetrized; the joint
    /// matrix must be PSD up to `PSD_TOLERANCE` relative to its largest eigenvalue.
    pub fn from_blocks(sigma_x: DMatrix<f64>, sigma_y: DMatrix<f64>, sigma_xy: DMatrix<f64>) -> Result<Self> {
        let (p, q) = (sigma_x.nrows(), sigma_y.nrows());
        if p == 0 || q == 0 || !sigma_x.is_square() || !sigma_y.is_square() {
            return invalid("marginal covariances must be non-empty square matrices");
        }
        if sigma_xy.shape() != (p, q) {
            return invalid(format!("SigmaXY must be {p}x{q}, got {:?}", sigma_xy.shape()));
        }
        let sigma_x = linalg::symmetrize(&sigma_x);
        let sigma_y = linalg::symmetrize(&sigma_y);
        let mut sigma = DMatrix::zeros(p + q, p + q);
        sigma.view_mut((0, 0), (p, p)).copy_from(&sigma_x);
        sigma.view_mut((p, p), (q, q)).copy_from(&sigma_y);
        sigma.view_mut((0, p), (p, q)).copy_from(&sigma_xy);
        sigma.view_mut((p, 0), (q, p)).copy_from(&sigma_xy.transpose());
        if !linalg::all_finite(&sigma) {
            return invalid("covariance contains non-finite entries");
        }
        let eig = sym_eigen_sorted(&sigma);
        let max = eig.values[0];
        let min = eig.values[p + q - 1];
        if min < -PSD_TOLERANCE * max.abs().max(f64::MIN_POSITIVE) {
            return Err(CcaError::InvalidCovariance { eigenvalue: min });
        }
        Ok(CovarianceModel { sigma_x, sigma_y, sigma_xy, sigma })
    }

    pub fn p(&self) -> usize {
        self.sigma_x.nrows()
    }

    pub fn q(&self) -> usize {
        self.sigma_y.nrows()
    }

    pub fn sigma_x(&self) -> &DMatrix<f64> {
        &self.sigma_x
    }

    pub fn sigma_y(&self) -> &DMatrix<f64> {
        &self.sigma_y
    }

    pub fn sigma_xy(&self) -> &DMatrix<f64> {
        &self.sigma_xy
    }

    /// The assembled `(p+q) × (p+q)` matrix.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
}

/// Replace the eigenvalues `K+1..p` of a rank-`K` PSD matrix by an equally
/// spaced open grid between `λ_K` and 0: `λ_K (p−K+1−j)/(p−K+1)`, `j = 1..p−K`.
///
/// Eigenvectors are kept; only the trailing eigen-directions gain mass.
pub fn inflate_trailing_eigenvalues(sigma_x: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let p = sigma_x.nrows();
    if !sigma_x.is_square() {
        return invalid("matrix to inflate must be square");
    }
    if k >= p {
        return Ok(sigma_x.clone());
    }
    if k == 0 {
        return invalid("rank K must be positive");
    }
    let eig = sym_eigen_sorted(sigma_x);
    let max = eig.values[0];
    let lambda_k = eig.values[k - 1];
    if !(max > 0.0) || lambda_k <= 0.0 {
        return invalid(format!("leading {k} eigenvalues must be positive (λ_K = {lambda_k:e})"));
    }
    if eig.values.iter().take(k).any(|&l| l < -PSD_TOLERANCE * max) {
        return invalid("negative leading eigenvalues");
    }
    let m = (p - k) as f64;
    let mut out = linalg::symmetrize(sigma_x);
    for j in 1..=(p - k) {
        let idx = k + j - 1;
        let target = lambda_k * (m + 1.0 - j as f64) / (m + 1.0);
        let delta = target - eig.values[idx];
        let v = eig.vectors.column(idx);
        out += (v * v.transpose()) * delta;
    }
    Ok(out)
}

/// Build a covariance model whose population CCA solution is `(R, B, Γ)`.
///
/// Requires `p ≥ q = K`, full-column-rank directions and strictly decreasing
/// correlations in `(0, 1)`.
pub fn invert_cca_model(rho: &DVector<f64>, b: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<CovarianceModel> {
    let k = rho.len();
    let (p, q) = (b.nrows(), gamma.nrows());
    if k == 0 {
        return invalid("at least one canonical correlation is required");
    }
    if b.ncols() != k || gamma.ncols() != k {
        return invalid(format!("directions must have {k} columns"));
    }
    if q != k {
        return invalid(format!("model inversion needs q = K (q = {q}, K = {k})"));
    }
    if p < q {
        return invalid(format!("model inversion needs p >= q (p = {p}, q = {q})"));
    }
    for (i, &r) in rho.iter().enumerate() {
        if !(r > 0.0 && r < 1.0) {
            return invalid(format!("correlation {i} = {r} outside (0, 1)"));
        }
        if i > 0 && r >= rho[i - 1] {
            return invalid("canonical correlations must be strictly decreasing");
        }
    }

    let (gamma_inv, g_rank) = linalg::pinv(gamma);
    if g_rank < k {
        return Err(CcaError::RankDeficient { block: "Gamma".into(), rank: g_rank, cols: k });
    }
    let (b_pinv, b_rank) = linalg::pinv(b);
    if b_rank < k {
        return Err(CcaError::RankDeficient { block: "B".into(), rank: b_rank, cols: k });
    }

    let sigma_y = linalg::symmetrize(&(gamma_inv.transpose() * &gamma_inv));
    let base_x = linalg::symmetrize(&(b_pinv.transpose() * &b_pinv));
    let sigma_x = if p > k { inflate_trailing_eigenvalues(&base_x, k)? } else { base_x };
    let sigma_xy = &sigma_x * b * DMatrix::from_diagonal(rho) * gamma.transpose() * &sigma_y;
    CovarianceModel::from_blocks(sigma_x, sigma_y, sigma_xy)
}

/// Convenience wrapper taking a [`CcaSolution`].
pub fn invert_solution(sol: &CcaSolution) -> Result<CovarianceModel> {
    invert_cca_model(&sol.rho, &sol.b, &sol.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cca::population_cca;
    use crate::linalg::max_abs_diff;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    /// Compare directions column by column up to sign.
    fn close_up_to_sign(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        a.column_iter().zip(b.column_iter()).all(|(x, y)| {
            let plus = (x - y).abs().max();
            let minus = (x + y).abs().max();
            plus.min(minus) < tol
        })
    }

    #[test]
    fn orthonormal_directions_give_identity_margins() {
        let rho = DVector::from_vec(vec![0.8, 0.3]);
        let m = invert_cca_model(&rho, &DMatrix::identity(2, 2), &DMatrix::identity(2, 2)).unwrap();
        assert!(max_abs_diff(m.sigma_x(), &DMatrix::identity(2, 2)) < 1e-14);
        assert!(max_abs_diff(m.sigma_y(), &DMatrix::identity(2, 2)) < 1e-14);
        assert!(max_abs_diff(m.sigma_xy(), &DMatrix::from_diagonal(&rho)) < 1e-14);
    }

    #[test]
    fn square_case_has_no_inflation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = random(2, 2, &mut rng);
        let g = random(2, 2, &mut rng);
        let rho = DVector::from_vec(vec![0.7, 0.4]);
        let m = invert_cca_model(&rho, &b, &g).unwrap();
        let binv = b.clone().try_inverse().unwrap();
        assert!(max_abs_diff(m.sigma_x(), &(binv.transpose() * &binv)) < 1e-10);
    }

    #[test]
    fn rectangular_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = random(3, 2, &mut rng);
        let g = random(2, 2, &mut rng);
        let rho = DVector::from_vec(vec![0.9, 0.5]);
        let m = invert_cca_model(&rho, &b, &g).unwrap();
        let btsb = b.transpose() * m.sigma_x() * &b;
        assert!(max_abs_diff(&btsb, &DMatrix::identity(2, 2)) < 1e-10);
        let sol = population_cca(&m).unwrap();
        assert!((sol.rho[0] - 0.9).abs() < 1e-8 && (sol.rho[1] - 0.5).abs() < 1e-8);
        assert!(close_up_to_sign(&sol.b, &b, 1e-6));
        assert!(close_up_to_sign(&sol.gamma, &g, 1e-6));
    }

    #[test]
    fn inflation_grid() {
        // Rank-2 matrix with eigenvalues (1, 0.5, 0, 0) in the standard basis.
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 0.0, 0.0]));
        let out = inflate_trailing_eigenvalues(&s, 2).unwrap();
        let eig = sym_eigen_sorted(&out);
        let want = [1.0, 0.5, 0.5 * 2.0 / 3.0, 0.5 / 3.0];
        for (g, w) in eig.values.iter().zip(want) {
            assert!((g - w).abs() < 1e-14, "{g} vs {w}");
        }
        assert!((want[2] - 0.3333).abs() < 1e-4 && (want[3] - 0.1667).abs() < 1e-4);
        assert_eq!(inflate_trailing_eigenvalues(&s, 4).unwrap(), s);
    }

    #[test]
    fn inflation_preserves_constraint_on_random_rank_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let b = random(5, 2, &mut rng);
        let (bp, _) = linalg::pinv(&b);
        let s = bp.transpose() * &bp;
        let out = inflate_trailing_eigenvalues(&s, 2).unwrap();
        let eig = sym_eigen_sorted(&out);
        assert!(eig.values[4] > 0.0);
        assert!(max_abs_diff(&(b.transpose() * &out * &b), &(b.transpose() * &s * &b)) < 1e-10);
    }

    #[test]
    fn invalid_correlations_rejected() {
        let i2 = DMatrix::identity(2, 2);
        assert!(invert_cca_model(&DVector::from_vec(vec![0.5, 0.5]), &i2, &i2).is_err());
        assert!(invert_cca_model(&DVector::from_vec(vec![0.3, 0.5]), &i2, &i2).is_err());
        assert!(invert_cca_model(&DVector::from_vec(vec![1.0, 0.5]), &i2, &i2).is_err());
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            invert_cca_model(&DVector::from_vec(vec![0.6, 0.5]), &sing, &i2),
            Err(CcaError::RankDeficient { .. })
        ));
    }
}
