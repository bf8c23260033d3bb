//! Controllability structure of `(A, Bc)` and the realization of full-space
//! controls through a low-dimensional actuator.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::jordan::{eigenvalues, real_jordan};

fn rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let tol = 1e-9 * sv.max().max(1.0);
    sv.iter().filter(|&&s| s > tol).count()
}

/// `[Bc, A Bc, ..., A^l Bc]`.
pub fn krylov(a: &DMatrix<f64>, control: &DMatrix<f64>, l: usize) -> DMatrix<f64> {
    let (d, m) = control.shape();
    let mut out = DMatrix::zeros(d, m * (l + 1));
    let mut p = control.clone();
    for i in 0..=l {
        out.view_mut((0, i * m), (d, m)).copy_from(&p);
        p = a * p;
    }
    out
}

/// Orthogonal change of basis `Q = [Q_c | Q_n]` putting the pair in the form
/// `Q^T A Q = [[A_c, A_x], [0, A_n]]`, `Q^T Bc = [[B_c], [0]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalForm {
    pub transform: DMatrix<f64>,
    pub controllable_dim: usize,
    pub a_c: DMatrix<f64>,
    pub a_cross: DMatrix<f64>,
    pub a_n: DMatrix<f64>,
    pub b_c: DMatrix<f64>,
    /// Smallest `l` for which `[Bc, ..., A^l Bc]` spans the unstable subspace.
    pub delay: usize,
}

pub fn stabilizable_decompose(a: &DMatrix<f64>, control: &DMatrix<f64>) -> Result<CanonicalForm> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    let d = a.nrows();
    if control.nrows() != d {
        return Err(Error::Dimension(format!("control matrix has {} rows, A is {d}x{d}", control.nrows())));
    }
    let k = krylov(a, control, d.saturating_sub(1));
    let r = rank(&k);
    let svd = k.svd(true, false);
    let u = svd.u.expect("requested left singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut q = DMatrix::zeros(d, d);
    for (c, &i) in order.iter().enumerate().take(d) {
        q.set_column(c, &u.column(i));
    }
    let t = q.transpose() * a * &q;
    let a_c = t.view((0, 0), (r, r)).into_owned();
    let a_cross = t.view((0, r), (r, d - r)).into_owned();
    let a_n = t.view((r, r), (d - r, d - r)).into_owned();
    let b_c = (q.transpose() * control).rows(0, r).into_owned();

    for l in eigenvalues(&a_n)? {
        if l.norm() >= 1.0 {
            return Err(Error::NotStabilizable { re: l.re, im: l.im });
        }
    }

    let decomp = real_jordan(a)?;
    let unstable: Vec<DMatrix<f64>> = decomp
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.is_unstable())
        .map(|(j, _)| decomp.columns(j))
        .collect();
    let delay = if unstable.is_empty() {
        0
    } else {
        let eu = DMatrix::from_columns(&unstable.iter().flat_map(|m| m.column_iter().map(|c| c.into_owned())).collect::<Vec<_>>());
        (0..d)
            .find(|&l| {
                let kl = krylov(a, control, l);
                let joint = DMatrix::from_columns(
                    &kl.column_iter().chain(eu.column_iter()).map(|c| c.into_owned()).collect::<Vec<_>>(),
                );
                rank(&joint) == rank(&kl)
            })
            .ok_or_else(|| Error::Singular("unstable subspace not reached by the Krylov sequence".into()))?
    };
    Ok(CanonicalForm { transform: q, controllable_dim: r, a_c, a_cross, a_n, b_c, delay })
}

/// Spreads each full-space control `v` over `l + 1` actuator steps using
/// `v = Bc v_0 + A Bc v_1 + ... + A^l Bc v_l`, the component `v_i` being applied
/// `l - i` steps after `v` is issued. The total effect equals applying `v`
/// directly `l` steps later.
#[derive(Debug, Clone)]
pub struct ControlRealizer {
    pinv: DMatrix<f64>,
    krylov: DMatrix<f64>,
    inputs: usize,
    delay: usize,
    /// Decompositions of the last `l + 1` issued controls, newest last.
    history: VecDeque<Vec<DVector<f64>>>,
}

impl ControlRealizer {
    pub fn new(a: &DMatrix<f64>, control: &DMatrix<f64>, delay: usize) -> Result<Self> {
        let k = krylov(a, control, delay);
        let pinv = k
            .clone()
            .pseudo_inverse(1e-12 * k.amax().max(1.0))
            .map_err(|e| Error::Singular(e.to_string()))?;
        let inputs = control.ncols();
        let history = (0..delay).map(|_| vec![DVector::zeros(inputs); delay + 1]).collect();
        Ok(Self { pinv, krylov: k, inputs, delay, history })
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Minimum-norm `(v_0, ..., v_l)`.
    pub fn decompose(&self, v: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        let sol = &self.pinv * v;
        let resid = (&self.krylov * &sol - v).norm();
        if resid > 1e-8 * v.norm().max(1.0) {
            return Err(Error::Singular(format!("target not reachable (residual {resid:e})")));
        }
        Ok((0..=self.delay).map(|i| sol.rows(i * self.inputs, self.inputs).into_owned()).collect())
    }

    /// Actuator inputs already committed for the next `l` steps by earlier
    /// controls, starting with the current step.
    pub fn committed(&self) -> Vec<DVector<f64>> {
        let l = self.delay;
        let mut out = vec![DVector::zeros(self.inputs); l];
        for (k, parts) in self.history.iter().enumerate() {
            let age = self.history.len() - k;
            for (t, slot) in out.iter_mut().enumerate().take((l + 1).saturating_sub(age)) {
                *slot += &parts[l - age - t];
            }
        }
        out
    }

    /// Issues `v` now and returns the actuator input for this step,
    /// `U_n = sum_i v_{i, n - l + i}`.
    pub fn push(&mut self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let parts = self.decompose(v)?;
        self.history.push_back(parts);
        let mut u = DVector::zeros(self.inputs);
        let l = self.delay;
        for (age, parts) in self.history.iter().rev().enumerate() {
            u += &parts[l - age];
        }
        if self.history.len() > l {
            self.history.pop_front();
        }
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn direct_actuation() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let f = stabilizable_decompose(&a, &b).unwrap();
        assert_eq!(f.delay, 0);
        assert_eq!(f.controllable_dim, 1);
    }

    #[test]
    fn jordan_needs_one_step() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let f = stabilizable_decompose(&a, &b).unwrap();
        assert_eq!(f.delay, 1);
        assert_eq!(f.controllable_dim, 2);
    }

    #[test]
    fn unreachable_mode_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        match stabilizable_decompose(&a, &b) {
            Err(Error::NotStabilizable { re, .. }) => assert_relative_eq!(re, 3.0, max_relative = 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invertible_direct_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.0, 1.1]);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        let mut r = ControlRealizer::new(&a, &b, 0).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0]);
        let u = r.push(&v).unwrap();
        let direct = b.clone().try_inverse().unwrap() * &v;
        assert!((u - direct).norm() < 1e-12);
    }

    #[test]
    fn delayed_decomposition() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let r = ControlRealizer::new(&a, &b, 1).unwrap();
        let v = DVector::from_vec(vec![1.0, 0.0]);
        let parts = r.decompose(&v).unwrap();
        let back = &b * &parts[0] + &a * &b * &parts[1];
        assert!((back - &v).norm() < 1e-12);
        let zero = r.decompose(&DVector::zeros(2)).unwrap();
        assert!(zero.iter().all(|p| p.norm() == 0.0));
    }
}
