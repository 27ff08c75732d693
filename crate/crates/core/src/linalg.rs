//! Sparse matrices in compressed-column form, sparse LU with reusable symbolic
//! analysis, and a dense symmetric-definite eigensolver.

use crate::error::{Error, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Mat, Side};
use std::io::Write;
use std::sync::Arc;

/// Sorted compressed-column sparsity pattern of a square matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsePattern {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
}

impl SparsePattern {
    /// Pattern from per-column row lists; duplicates are removed.
    pub fn from_columns(mut columns: Vec<Vec<usize>>) -> Self {
        let n = columns.len();
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in columns.iter_mut() {
            col.sort_unstable();
            col.dedup();
            debug_assert!(col.last().is_none_or(|&r| r < n));
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }
        Self { n, col_ptr, row_idx }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Storage index of entry `(row, col)`, if present.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let lo = self.col_ptr[col];
        let hi = self.col_ptr[col + 1];
        self.row_idx[lo..hi].binary_search(&row).ok().map(|k| lo + k)
    }

    fn symbolic(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx)
    }
}

#[derive(Clone, Debug)]
pub struct SparseMatrix {
    pub pattern: Arc<SparsePattern>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(pattern: Arc<SparsePattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern.position(row, col).map_or(0.0, |k| self.values[k])
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        let mut y = vec![0.0; p.n];
        for (col, &xc) in x.iter().enumerate() {
            for k in p.col_ptr[col]..p.col_ptr[col + 1] {
                y[p.row_idx[k]] += self.values[k] * xc;
            }
        }
        y
    }

    /// Largest `|A_ij - A_ji|` together with the largest `|A_ij|`.
    pub fn asymmetry(&self) -> (f64, f64) {
        let p = &self.pattern;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for col in 0..p.n {
            for k in p.col_ptr[col]..p.col_ptr[col + 1] {
                let row = p.row_idx[k];
                scale = scale.max(self.values[k].abs());
                worst = worst.max((self.values[k] - self.get(col, row)).abs());
            }
        }
        (worst, scale)
    }

    /// Dense copy; intended for small matrices.
    pub fn to_dense(&self) -> Mat<f64> {
        let p = &self.pattern;
        let mut m = Mat::zeros(p.n, p.n);
        for col in 0..p.n {
            for k in p.col_ptr[col]..p.col_ptr[col + 1] {
                m[(p.row_idx[k], col)] = self.values[k];
            }
        }
        m
    }

    /// Coordinate text export: a `rows cols nnz` line, then `row col value`
    /// lines in column-major order, zero-based.
    pub fn write_coo<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let p = &self.pattern;
        writeln!(out, "{} {} {}", p.n, p.n, p.nnz())?;
        for col in 0..p.n {
            for k in p.col_ptr[col]..p.col_ptr[col + 1] {
                writeln!(out, "{} {} {:.17e}", p.row_idx[k], col, self.values[k])?;
            }
        }
        Ok(())
    }

    fn view(&self) -> SparseColMatRef<'_, usize, f64> {
        SparseColMatRef::new(self.pattern.symbolic(), &self.values)
    }
}

/// Sparse LU whose symbolic analysis is computed once per pattern.
#[derive(Clone)]
pub struct LuSolver {
    pattern: Arc<SparsePattern>,
    symbolic: SymbolicLu<usize>,
    border: Option<Border>,
}

/// Last row and column of a matrix `[[A, c], [c^T, 0]]` whose leading block
/// `A` is singular with a one-dimensional kernel. The factored matrix is `A`
/// with row `pin` replaced by the unit row; the remainder is a rank-3 update
/// handled by the Woodbury identity.
#[derive(Clone)]
struct Border {
    pin: usize,
    /// Outer storage index of every inner entry.
    inner_to_outer: Vec<usize>,
    inner_pin_diag: usize,
    inner: Arc<SparsePattern>,
}

enum Kind {
    Plain,
    Bordered {
        /// Row `pin` of `A` minus the unit row, as `(col, value)`.
        row_defect: Vec<(usize, f64)>,
        /// Leading part of the last column.
        border: Vec<f64>,
        /// Inner solves against `e_pin` and the border column.
        z_pin: Vec<f64>,
        z_border: Vec<f64>,
        capacitance: [[f64; 3]; 3],
    },
}

pub struct Factorization {
    lu: Lu<usize, f64>,
    kind: Kind,
}

impl LuSolver {
    pub fn new(pattern: Arc<SparsePattern>) -> Result<Self> {
        let symbolic = symbolic_lu(&pattern)?;
        Ok(Self { pattern, symbolic, border: None })
    }

    /// Solver for matrices whose last row and column form a border around a
    /// leading block with a one-dimensional kernel; `pin` indexes a row of
    /// the leading block that may be replaced to make it invertible. The last
    /// column must be the transpose of the last row and the corner zero.
    pub fn bordered(pattern: Arc<SparsePattern>, pin: usize) -> Result<Self> {
        let n = pattern.n - 1;
        assert!(pin < n);
        let mut inner_to_outer = Vec::new();
        let mut columns = Vec::with_capacity(n);
        for col in 0..n {
            let mut rows = Vec::new();
            for k in pattern.col_ptr[col]..pattern.col_ptr[col + 1] {
                let row = pattern.row_idx[k];
                if row < n && (row != pin || col == pin) {
                    rows.push(row);
                    inner_to_outer.push(k);
                }
            }
            columns.push(rows);
        }
        let inner = Arc::new(SparsePattern::from_columns(columns));
        debug_assert_eq!(inner.nnz(), inner_to_outer.len());
        let inner_pin_diag = inner
            .position(pin, pin)
            .ok_or_else(|| Error::Factorization("pinned diagonal missing from pattern".into()))?;
        let symbolic = symbolic_lu(&inner)?;
        Ok(Self {
            pattern,
            symbolic,
            border: Some(Border {
                pin,
                inner_to_outer,
                inner_pin_diag,
                inner,
            }),
        })
    }

    pub fn factor(&self, a: &SparseMatrix) -> Result<Factorization> {
        assert!(Arc::ptr_eq(&self.pattern, &a.pattern) || *self.pattern == *a.pattern);
        let Some(b) = &self.border else {
            let lu = self.numeric(a.view())?;
            return Ok(Factorization { lu, kind: Kind::Plain });
        };
        let n = self.pattern.n - 1;
        let p = &self.pattern;
        let mut values: Vec<f64> = b.inner_to_outer.iter().map(|&k| a.values[k]).collect();
        values[b.inner_pin_diag] = 1.0;
        let lu = self.numeric(SparseColMatRef::new(b.inner.symbolic(), &values))?;

        let mut row_defect = Vec::new();
        let mut border = vec![0.0; n];
        for col in 0..=n {
            for k in p.col_ptr[col]..p.col_ptr[col + 1] {
                let row = p.row_idx[k];
                if col == n && row < n {
                    border[row] = a.values[k];
                } else if row == b.pin && col < n {
                    let v = a.values[k] - if col == b.pin { 1.0 } else { 0.0 };
                    if v != 0.0 {
                        row_defect.push((col, v));
                    }
                }
            }
        }
        let mut z_pin = vec![0.0; n];
        z_pin[b.pin] = 1.0;
        solve_inner(&lu, &mut z_pin)?;
        let mut z_border = border.clone();
        solve_inner(&lu, &mut z_border)?;
        let defect_dot = |z: &[f64]| row_defect.iter().map(|&(c, v)| v * z[c]).sum::<f64>();
        let capacitance = [
            [1.0 + defect_dot(&z_pin), defect_dot(&z_border), 0.0],
            [0.0, 1.0, 1.0],
            [dot(&border, &z_pin), dot(&border, &z_border), 0.0],
        ];
        Ok(Factorization {
            lu,
            kind: Kind::Bordered {
                row_defect,
                border,
                z_pin,
                z_border,
                capacitance,
            },
        })
    }

    fn numeric(&self, a: SparseColMatRef<'_, usize, f64>) -> Result<Lu<usize, f64>> {
        Lu::try_new_with_symbolic(self.symbolic.clone(), a)
            .map_err(|e| Error::Factorization(format!("{e:?}")))
    }
}

fn symbolic_lu(pattern: &SparsePattern) -> Result<SymbolicLu<usize>> {
    SymbolicLu::try_new(pattern.symbolic())
        .map_err(|e| Error::Factorization(format!("symbolic analysis: {e:?}")))
}

fn solve_inner(lu: &Lu<usize, f64>, rhs: &mut [f64]) -> Result<()> {
    let mut m = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
    lu.solve_in_place(m.as_mut());
    for (i, r) in rhs.iter_mut().enumerate() {
        *r = m[(i, 0)];
    }
    if rhs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Factorization("singular matrix (non-finite solution)".into()))
    }
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Result<[f64; 3]> {
    let m = Mat::from_fn(3, 3, |i, j| a[i][j]);
    let mut r = Mat::from_fn(3, 1, |i, _| b[i]);
    m.partial_piv_lu().solve_in_place(r.as_mut());
    let x = [r[(0, 0)], r[(1, 0)], r[(2, 0)]];
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Factorization("singular bordered system".into()))
    }
}

impl Factorization {
    /// Solve in place; fails if the solution is not finite, which is how a
    /// zero pivot shows up.
    pub fn solve(&self, rhs: &mut [f64]) -> Result<()> {
        match &self.kind {
            Kind::Plain => solve_inner(&self.lu, rhs),
            Kind::Bordered {
                row_defect,
                border,
                z_pin,
                z_border,
                capacitance,
            } => {
                let n = border.len();
                let last = rhs[n];
                solve_inner(&self.lu, &mut rhs[..n])?;
                let y = &rhs[..n];
                let s = [
                    row_defect.iter().map(|&(c, v)| v * y[c]).sum::<f64>(),
                    last,
                    dot(border, y) - last,
                ];
                let t = solve3(*capacitance, s)?;
                for i in 0..n {
                    rhs[i] -= t[0] * z_pin[i] + t[1] * z_border[i];
                }
                rhs[n] = last - t[2];
                Ok(())
            }
        }
    }
}

impl Factorization {
    /// Solves every column of `rhs` in place.
    pub fn solve_many(&self, rhs: &mut Mat<f64>) -> Result<()> {
        if let Kind::Plain = self.kind {
            self.lu.solve_in_place(rhs.as_mut());
            return Ok(());
        }
        let mut col = vec![0.0; rhs.nrows()];
        for j in 0..rhs.ncols() {
            for (i, c) in col.iter_mut().enumerate() {
                *c = rhs[(i, j)];
            }
            self.solve(&mut col)?;
            for (i, c) in col.iter().enumerate() {
                rhs[(i, j)] = *c;
            }
        }
        Ok(())
    }
}

/// Eigenpairs of the symmetric-definite pencil `A x = mu M x`, eigenvalues in
/// nondecreasing order and eigenvectors `M`-orthonormal.
pub fn generalized_symmetric_eigen(a: &Mat<f64>, m: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = a.nrows();
    let llt = m
        .llt(Side::Lower)
        .map_err(|e| Error::Eigen(format!("mass matrix not positive definite: {e:?}")))?;
    let l = llt.L().to_owned();
    let par = faer::get_global_parallelism();
    // C = L^-1 A L^-T
    let mut c = a.clone();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), c.as_mut(), par);
    let mut ct = c.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), ct.as_mut(), par);
    let c = Mat::from_fn(n, n, |i, j| 0.5 * (ct[(i, j)] + ct[(j, i)]));
    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let values: Vec<f64> = (0..n).map(|i| evd.S()[i]).collect();
    // x = L^-T y
    let mut x = evd.U().to_owned();
    faer::linalg::triangular_solve::solve_upper_triangular_in_place(
        l.transpose(),
        x.as_mut(),
        par,
    );
    Ok((values, x))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiagonal(n: usize) -> SparseMatrix {
        let cols = (0..n)
            .map(|j| {
                let mut c = vec![j];
                if j > 0 {
                    c.push(j - 1);
                }
                if j + 1 < n {
                    c.push(j + 1);
                }
                c
            })
            .collect();
        let pattern = Arc::new(SparsePattern::from_columns(cols));
        let mut a = SparseMatrix::zeros(pattern.clone());
        for j in 0..n {
            a.values[pattern.position(j, j).unwrap()] = 2.0;
            if j > 0 {
                a.values[pattern.position(j - 1, j).unwrap()] = -1.0;
                a.values[pattern.position(j, j - 1).unwrap()] = -1.0;
            }
        }
        a
    }

    #[test]
    fn lu_solves_tridiagonal_system() {
        let a = tridiagonal(50);
        let x: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let mut b = a.mul_vec(&x);
        let solver = LuSolver::new(a.pattern.clone()).unwrap();
        solver.factor(&a).unwrap().solve(&mut b).unwrap();
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12);
        }
        assert_eq!(a.asymmetry().0, 0.0);
    }

    #[test]
    fn bordered_solve_matches_dense() {
        // Periodic chain operator (kernel: constants) plus upwind drift,
        // bordered by the all-ones vector.
        let n = 12;
        let mut cols: Vec<Vec<usize>> = (0..=n)
            .map(|j| if j < n { vec![j, (j + 1) % n, (j + n - 1) % n, n] } else { (0..=n).collect() })
            .collect();
        cols[n].retain(|&r| r <= n);
        let pattern = Arc::new(SparsePattern::from_columns(cols));
        let mut a = SparseMatrix::zeros(pattern.clone());
        let mut set = |r: usize, c: usize, v: f64| {
            let k = pattern.position(r, c).unwrap();
            a.values[k] += v;
        };
        for i in 0..n {
            let (l, r) = ((i + n - 1) % n, (i + 1) % n);
            set(i, i, 2.0 + 0.3);
            set(i, l, -1.0 - 0.3);
            set(i, r, -1.0);
            set(i, n, 1.0);
            set(n, i, 1.0);
        }
        let x: Vec<f64> = (0..=n).map(|i| (1.3 * i as f64).cos()).collect();
        let b = a.mul_vec(&x);
        for pin in [0, 5] {
            let solver = LuSolver::bordered(pattern.clone(), pin).unwrap();
            let mut y = b.clone();
            solver.factor(&a).unwrap().solve(&mut y).unwrap();
            for (u, v) in y.iter().zip(&x) {
                assert!((u - v).abs() < 1e-12, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn pattern_dedups_and_locates() {
        let p = SparsePattern::from_columns(vec![vec![1, 0, 1], vec![1]]);
        assert_eq!(p.nnz(), 3);
        assert_eq!(p.position(1, 0), Some(1));
        assert_eq!(p.position(0, 1), None);
    }

    #[test]
    fn coo_export_round_trip() {
        let a = tridiagonal(3);
        let mut buf = Vec::new();
        a.write_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("3 3 7"));
        let mut sum = 0.0;
        for l in lines {
            let v: f64 = l.split_whitespace().nth(2).unwrap().parse().unwrap();
            sum += v;
        }
        assert_eq!(sum, 2.0);
    }

    #[test]
    fn generalized_eigen_of_diagonal_pencil() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { [2.0, 6.0, 12.0][i] } else { 0.0 });
        let m = Mat::from_fn(3, 3, |i, j| if i == j { [1.0, 2.0, 3.0][i] } else { 0.0 });
        let (vals, vecs) = generalized_symmetric_eigen(&a, &m).unwrap();
        for (v, e) in vals.iter().zip([2.0, 3.0, 4.0]) {
            assert!((v - e).abs() < 1e-12);
        }
        // M-normalised: x^T M x = 1
        let x0 = vecs.col(0);
        let q: f64 = (0..3).map(|i| x0[i] * x0[i] * m[(i, i)]).sum();
        assert!((q - 1.0).abs() < 1e-12);
    }
}
