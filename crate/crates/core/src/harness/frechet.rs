use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::nn::Tensor;

fn moments(set: &Tensor) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (set.rows(), set.trailing());
    let x = DMatrix::from_row_slice(n, d, set.data());
    let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.mean()));
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    (mean, cov)
}

/// Eigenvalues of a symmetric matrix with negative ones floored at 0.
fn psd_eigen(m: DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    eig.eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));
    eig
}

fn psd_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = psd_eigen(m);
    let roots = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    &eig.eigenvectors * roots * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of the rows of `a` and `b`:
/// `‖μ_A − μ_B‖² + Tr(Σ_A + Σ_B − 2(Σ_A Σ_B)^{1/2})`.
///
/// The cross term is evaluated as `Tr((√Σ_A Σ_B √Σ_A)^{1/2})`, which keeps
/// every square root symmetric.
pub fn frechet_gaussian_proxy(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.rows() < 2 || b.rows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "Fréchet proxy needs at least 2 samples per set, got {} and {}",
            a.rows(),
            b.rows()
        )));
    }
    if a.trailing() != b.trailing() {
        return Err(Error::Dimension(format!(
            "sample widths differ: {} vs {}",
            a.trailing(),
            b.trailing()
        )));
    }
    if a.data().iter().chain(b.data()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite sample".into()));
    }
    let (mu_a, cov_a) = moments(a);
    let (mu_b, cov_b) = moments(b);
    let root_a = psd_sqrt(cov_a.clone());
    let cross = psd_eigen(&root_a * &cov_b * &root_a)
        .eigenvalues
        .iter()
        .map(|v| v.sqrt())
        .sum::<f64>();
    let d = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}
