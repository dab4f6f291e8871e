//! Dense linear algebra (LU with partial pivoting) and a damped Newton
//! iteration, shared by the collocation solver and the continuation driver.

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = 1.0;
        }
        a
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn swap_rows(&mut self, i: usize, j: usize) {
        if i == j {
            return;
        }
        let (lo, hi) = (i.min(j), i.max(j));
        let (a, b) = self.data.split_at_mut(hi * self.cols);
        a[lo * self.cols..(lo + 1) * self.cols].swap_with_slice(&mut b[..self.cols]);
    }

    /// Max row sum norm.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting, P·A = L·U stored in place.
pub struct LuFactors {
    lu: Matrix,
    perm: Vec<usize>,
    min_pivot: f64,
    max_pivot: f64,
}

impl LuFactors {
    pub fn factor(mut a: Matrix) -> Result<Self> {
        let n = a.rows;
        if n != a.cols {
            return Err(Error::invalid("LU requires a square matrix"));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        for k in 0..n {
            // pivot search in column k
            let mut p = k;
            let mut best = a[(k, k)].abs();
            for i in k + 1..n {
                let v = a[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best < 1e-300 {
                return Err(Error::SingularMatrix { pivot: best });
            }
            min_pivot = min_pivot.min(best);
            max_pivot = max_pivot.max(best);
            a.swap_rows(k, p);
            perm.swap(k, p);
            let pivot = a[(k, k)];
            // split so the pivot row and the trailing rows can be borrowed together
            let (top, rest) = a.data.split_at_mut((k + 1) * a.cols);
            let pivot_row = &top[k * a.cols + k + 1..k * a.cols + a.cols];
            for chunk in rest.chunks_exact_mut(a.cols) {
                let factor = chunk[k] / pivot;
                chunk[k] = factor;
                if factor != 0.0 {
                    let tail = &mut chunk[k + 1..];
                    for (t, &p) in tail.iter_mut().zip(pivot_row) {
                        *t -= factor * p;
                    }
                }
            }
        }
        Ok(LuFactors {
            lu: a,
            perm,
            min_pivot,
            max_pivot,
        })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    /// Ratio of the largest to the smallest pivot; a cheap growth-based
    /// proxy for ill conditioning.
    pub fn pivot_ratio(&self) -> f64 {
        self.max_pivot / self.min_pivot
    }

    /// Solve A·x = b using the stored factors.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // forward substitution (unit lower triangle)
        for i in 1..n {
            let row = self.lu.row(i);
            let mut s = x[i];
            for j in 0..i {
                s -= row[j] * x[j];
            }
            x[i] = s;
        }
        // back substitution
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let mut s = x[i];
            for j in i + 1..n {
                s -= row[j] * x[j];
            }
            x[i] = s / row[i];
        }
        x
    }
}

/// Solve A·x = b by LU with partial pivoting.
pub fn lu_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    Ok(LuFactors::factor(a.clone())?.solve(b))
}

/// Options for the damped Newton iteration.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Stop when the sup-norm of the accepted Newton step falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest admissible damping factor (halving from 1).
    pub min_damping: f64,
    /// Accept immediately when the residual sup-norm is already below this,
    /// which also covers exact roots where the Jacobian may be singular.
    pub residual_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 25,
            min_damping: 1.0 / 64.0,
            residual_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norms: Vec<f64>,
    pub last_step_norm: f64,
    pub final_damping: f64,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Damped Newton iteration x ← x − λ·J⁻¹r.
///
/// The step is damped by halving λ while the residual sup-norm increases;
/// convergence is declared on the sup-norm of the accepted step.
pub fn newton<R, J>(
    mut residual: R,
    mut jacobian: J,
    x0: &[f64],
    opts: &NewtonOptions,
) -> Result<NewtonResult>
where
    R: FnMut(&[f64]) -> Result<Vec<f64>>,
    J: FnMut(&[f64]) -> Result<Matrix>,
{
    let mut x = x0.to_vec();
    let mut r = residual(&x)?;
    let mut rnorm = sup_norm(&r);
    let mut norms = vec![rnorm];
    let mut damping = 1.0;

    for iter in 1..=opts.max_iter {
        if rnorm <= opts.residual_tol {
            return Ok(NewtonResult {
                x,
                iterations: iter - 1,
                residual_norms: norms,
                last_step_norm: 0.0,
                final_damping: damping,
            });
        }
        let jac = jacobian(&x)?;
        let factors = LuFactors::factor(jac)?;
        let step = factors.solve(&r);

        damping = 1.0;
        let (mut x_new, mut r_new, mut rnorm_new);
        loop {
            x_new = x
                .iter()
                .zip(&step)
                .map(|(xi, si)| xi - damping * si)
                .collect::<Vec<_>>();
            r_new = residual(&x_new)?;
            rnorm_new = sup_norm(&r_new);
            if rnorm_new <= rnorm || damping <= opts.min_damping {
                break;
            }
            damping *= 0.5;
        }
        let step_norm = damping * sup_norm(&step);
        x = x_new;
        r = r_new;
        rnorm = rnorm_new;
        norms.push(rnorm);

        if step_norm <= opts.tol {
            return Ok(NewtonResult {
                x,
                iterations: iter,
                residual_norms: norms,
                last_step_norm: step_norm,
                final_damping: damping,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        last_residual: rnorm,
        residual_history: norms,
        last_iterate: x,
    })
}
