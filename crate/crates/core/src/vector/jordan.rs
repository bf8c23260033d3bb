//! Real block decomposition of a square matrix into invariant subspaces, one per
//! real eigenvalue or conjugate pair.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

const SCHUR_EPS: f64 = 1e-14;
const SCHUR_ITERS: usize = 10_000;
const ROUND_TRIP_TOL: f64 = 1e-8;

pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = a.clone().try_schur(SCHUR_EPS, SCHUR_ITERS).ok_or(Error::EigenFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// 2-norm of a matrix.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBlock {
    /// First column of the block in the basis.
    pub offset: usize,
    pub dim: usize,
    /// Restriction of the matrix to the block, in block coordinates.
    pub matrix: DMatrix<f64>,
    /// Representative eigenvalue, with nonnegative imaginary part.
    pub eigenvalue: Complex<f64>,
    pub modulus: f64,
}

impl SpectralBlock {
    pub fn is_unstable(&self) -> bool {
        self.modulus >= 1.0
    }

    pub fn is_complex(&self) -> bool {
        self.eigenvalue.im != 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub blocks: Vec<SpectralBlock>,
    /// Columns span the block subspaces in block order.
    pub basis: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn block_diagonal(&self) -> DMatrix<f64> {
        let d = self.basis.nrows();
        let mut out = DMatrix::zeros(d, d);
        for b in &self.blocks {
            out.view_mut((b.offset, b.offset), (b.dim, b.dim)).copy_from(&b.matrix);
        }
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.basis * self.block_diagonal() * &self.inverse
    }

    /// Rows of the inverse basis giving block `j`'s coordinates.
    pub fn projector(&self, j: usize) -> DMatrix<f64> {
        let b = &self.blocks[j];
        self.inverse.rows(b.offset, b.dim).into_owned()
    }

    /// Columns of the basis spanning block `j`.
    pub fn columns(&self, j: usize) -> DMatrix<f64> {
        let b = &self.blocks[j];
        self.basis.columns(b.offset, b.dim).into_owned()
    }
}

struct Cluster {
    value: Complex<f64>,
    mult: usize,
}

fn cluster(values: &[Complex<f64>], tol: f64) -> Vec<Cluster> {
    let mut sorted: Vec<Complex<f64>> = values.to_vec();
    sorted.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let mut groups: Vec<Vec<Complex<f64>>> = Vec::new();
    for v in sorted {
        let joined = groups
            .iter_mut()
            .find(|g| g.iter().any(|w| (*w - v).norm() <= tol * w.norm().max(1.0)));
        match joined {
            Some(g) => g.push(v),
            None => groups.push(vec![v]),
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let n = g.len() as f64;
            let sum = g.iter().fold(Complex::new(0.0, 0.0), |acc, v| acc + v);
            Cluster { value: sum / n, mult: g.len() }
        })
        .collect()
}

/// Orthonormal basis of the numerical null space of `n` with dimension `dim`.
fn null_basis(n: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let d = n.ncols();
    let svd = n.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let mut out = DMatrix::zeros(d, dim);
    for (c, &i) in order.iter().take(dim).enumerate() {
        let mut col = v_t.row(i).transpose();
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        out.set_column(c, &col);
    }
    out
}

fn attempt(a: &DMatrix<f64>, eig: &[Complex<f64>], tol: f64) -> Option<SpectralDecomposition> {
    let d = a.nrows();
    let scale = a.amax().max(1.0);
    let im_tol = tol.sqrt() * scale;
    let reals: Vec<Complex<f64>> = eig.iter().filter(|l| l.im.abs() <= im_tol).map(|l| Complex::new(l.re, 0.0)).collect();
    let uppers: Vec<Complex<f64>> = eig.iter().filter(|l| l.im > im_tol).copied().collect();

    let id = DMatrix::<f64>::identity(d, d);
    let mut raw: Vec<(Complex<f64>, DMatrix<f64>)> = Vec::new();
    for c in cluster(&reals, tol) {
        let base = a - &id * c.value.re;
        let n = (0..c.mult - 1).fold(base.clone(), |acc, _| &acc * &base);
        raw.push((c.value, null_basis(&n, c.mult)));
    }
    for c in cluster(&uppers, tol) {
        let l = c.value;
        let quad = a * a - a * (2.0 * l.re) + &id * l.norm_sqr();
        let n = (0..c.mult - 1).fold(quad.clone(), |acc, _| &acc * &quad);
        raw.push((l, null_basis(&n, 2 * c.mult)));
    }
    if raw.iter().map(|(_, v)| v.ncols()).sum::<usize>() != d {
        return None;
    }
    raw.sort_by(|(x, _), (y, _)| {
        y.norm()
            .total_cmp(&x.norm())
            .then(y.re.total_cmp(&x.re))
            .then(x.im.total_cmp(&y.im))
    });

    let mut basis = DMatrix::zeros(d, d);
    let mut blocks = Vec::with_capacity(raw.len());
    let mut offset = 0;
    for (value, v) in raw {
        let dim = v.ncols();
        basis.view_mut((0, offset), (d, dim)).copy_from(&v);
        blocks.push(SpectralBlock { offset, dim, matrix: v.transpose() * a * &v, eigenvalue: value, modulus: value.norm() });
        offset += dim;
    }
    let inverse = basis.clone().try_inverse()?;
    let out = SpectralDecomposition { blocks, basis, inverse };
    let err = (out.reconstruct() - a).norm() / a.norm().max(f64::MIN_POSITIVE);
    (err <= ROUND_TRIP_TOL).then_some(out)
}

/// Splits `a` into invariant blocks sorted by eigenvalue modulus, largest first.
/// Basis columns have unit norm and a positive first nonzero entry.
pub fn real_jordan(a: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    let eig = eigenvalues(a)?;
    if a.nrows() == 0 {
        return Ok(SpectralDecomposition { blocks: Vec::new(), basis: DMatrix::zeros(0, 0), inverse: DMatrix::zeros(0, 0) });
    }
    // Defective eigenvalues split by roughly eps^(1/m); widen the clustering
    // tolerance until the blocks reproduce the matrix.
    for tol in [1e-9, 1e-7, 1e-5, 1e-4, 1e-3] {
        if let Some(d) = attempt(a, &eig, tol) {
            return Ok(d);
        }
    }
    Err(Error::EigenFailure)
}
