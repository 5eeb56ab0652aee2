//! Dense column-major linear algebra used by the regression fits.
//!
//! Only what the model zoo needs: Householder QR with column pivoting,
//! a minimum-norm least-squares solve built on it, and a cyclic Jacobi
//! eigensolver for small symmetric matrices.

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_columns(rows: usize, columns: Vec<Vec<f64>>) -> Self {
        let cols = columns.len();
        let mut data = Vec::with_capacity(rows * cols);
        for c in columns {
            assert_eq!(c.len(), rows, "column length mismatch");
            data.extend(c);
        }
        Mat { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (left, right) = self.data.split_at_mut(hi * self.rows);
        left[lo * self.rows..(lo + 1) * self.rows].swap_with_slice(&mut right[..self.rows]);
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `AᵀA / scale`.
    pub fn gram(&self, scale: f64) -> Mat {
        let p = self.cols;
        let mut g = Mat::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                let v = dot(self.col(a), self.col(b)) / scale;
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        g
    }

    /// `Aᵀv / scale`.
    pub fn t_mul_vec(&self, v: &[f64], scale: f64) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        (0..self.cols).map(|j| dot(self.col(j), v) / scale).collect()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for (j, &vj) in v.iter().enumerate() {
            if vj == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.col(j)) {
                *o += a * vj;
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[j * self.rows + i]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[j * self.rows + i]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators; long columns (10⁶ rows) lose too much with one.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Householder QR factorization `A P = Q R`, optionally with column pivoting.
///
/// `R` is stored in the upper triangle of `qr`, the essential parts of the
/// reflectors below the diagonal.
#[derive(Debug, Clone)]
pub struct Qr {
    qr: Mat,
    tau: Vec<f64>,
    perm: Vec<usize>,
}

impl Qr {
    pub fn new(a: Mat, pivot: bool) -> Qr {
        let mut qr = a;
        let (m, n) = (qr.rows, qr.cols);
        let steps = m.min(n);
        let mut tau = vec![0.0; steps];
        let mut perm: Vec<usize> = (0..n).collect();

        for k in 0..steps {
            if pivot {
                let mut best = k;
                let mut best_norm = -1.0;
                for j in k..n {
                    let c = &qr.col(j)[k..];
                    let nrm = dot(c, c);
                    if nrm > best_norm {
                        best_norm = nrm;
                        best = j;
                    }
                }
                qr.swap_cols(k, best);
                perm.swap(k, best);
            }

            let (t, beta) = {
                let col = &mut qr.col_mut(k)[k..];
                make_householder(col)
            };
            tau[k] = t;
            if t != 0.0 {
                let (head, tail) = qr.data.split_at_mut((k + 1) * m);
                let v = &head[k * m + k..k * m + m];
                for j in 0..(n - k - 1) {
                    let target = &mut tail[j * m + k..j * m + m];
                    apply_householder(v, t, target);
                }
            }
            qr[(k, k)] = beta;
        }
        Qr { qr, tau, perm }
    }

    pub fn r_diag(&self, i: usize) -> f64 {
        self.qr[(i, i)]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Numerical rank: number of leading `|R_ii|` above `tol · |R_00|`.
    pub fn rank(&self, tol: f64) -> usize {
        let steps = self.tau.len();
        if steps == 0 {
            return 0;
        }
        let r00 = self.r_diag(0).abs();
        if r00 == 0.0 {
            return 0;
        }
        (0..steps)
            .take_while(|&i| self.r_diag(i).abs() > tol * r00)
            .count()
    }

    /// Overwrites `b` with `Qᵀ b`.
    pub fn apply_qt(&self, b: &mut [f64]) {
        let m = self.qr.rows;
        assert_eq!(b.len(), m);
        for (k, &t) in self.tau.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            let v = &self.qr.col(k)[k..];
            apply_householder(v, t, &mut b[k..]);
        }
    }
}

/// Builds a reflector `H = I - τ v vᵀ` with `v[0] = 1` so that `H x = β e₁`.
/// On return `x[1..]` holds `v[1..]`; returns `(τ, β)`.
fn make_householder(x: &mut [f64]) -> (f64, f64) {
    let alpha = x[0];
    let tail = &x[1..];
    let sigma = dot(tail, tail);
    if sigma == 0.0 {
        return (0.0, alpha);
    }
    let norm = (alpha * alpha + sigma).sqrt();
    let beta = if alpha <= 0.0 { norm } else { -norm };
    let v0 = alpha - beta;
    for xi in x[1..].iter_mut() {
        *xi /= v0;
    }
    x[0] = 1.0;
    ((beta - alpha) / beta, beta)
}

/// Applies `I - τ v vᵀ` to `target`, treating `v[0]` as 1.
fn apply_householder(v: &[f64], tau: f64, target: &mut [f64]) {
    let mut s = target[0];
    s += dot(&v[1..], &target[1..]);
    s *= tau;
    target[0] -= s;
    for (t, vi) in target[1..].iter_mut().zip(&v[1..]) {
        *t -= s * vi;
    }
}

/// Solution of a least-squares problem.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: Vec<f64>,
    pub rank: usize,
}

/// Relative tolerance for the numerical rank of a QR factor.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * 16.0
}

/// Minimum-norm solution of `min ‖A x - b‖₂` through a complete orthogonal
/// decomposition (pivoted QR, then QR of the leading `[R₁₁ R₁₂]ᵀ` block).
pub fn lstsq(a: Mat, b: &[f64]) -> LstsqSolution {
    let (m, n) = (a.rows, a.cols);
    assert_eq!(b.len(), m);
    if n == 0 {
        return LstsqSolution { x: vec![], rank: 0 };
    }
    let qr = Qr::new(a, true);
    let rank = qr.rank(default_rank_tol(m, n));
    let mut qtb = b.to_vec();
    qr.apply_qt(&mut qtb);

    let mut y = vec![0.0; n];
    if rank == 0 {
        return LstsqSolution { x: y, rank };
    }
    if rank == n {
        back_substitute(&qr.qr, &qtb[..n], &mut y);
    } else {
        // T = [R11 R12] (rank × n). Tᵀ = Z S, so T = Sᵀ Zᵀ and x = Z S⁻ᵀ c.
        let mut tt = Mat::zeros(n, rank);
        for i in 0..rank {
            for j in i..n {
                tt[(j, i)] = qr.qr[(i, j)];
            }
        }
        let z = Qr::new(tt, false);
        let mut w = vec![0.0; n];
        // Forward substitution with Sᵀ (lower triangular).
        for i in 0..rank {
            let mut s = qtb[i];
            for j in 0..i {
                s -= z.qr[(j, i)] * w[j];
            }
            w[i] = s / z.qr[(i, i)];
        }
        // y = Z w = H_0 H_1 ... w
        for k in (0..rank).rev() {
            let t = z.tau[k];
            if t != 0.0 {
                let v = &z.qr.col(k)[k..];
                apply_householder(v, t, &mut w[k..]);
            }
        }
        y = w;
    }
    let mut x = vec![0.0; n];
    for (pos, &orig) in qr.perm.iter().enumerate() {
        x[orig] = y[pos];
    }
    LstsqSolution { x, rank }
}

fn back_substitute(r: &Mat, rhs: &[f64], out: &mut [f64]) {
    let n = rhs.len();
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in i + 1..n {
            s -= r[(i, j)] * out[j];
        }
        out[i] = s / r[(i, i)];
    }
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Eigenvectors as columns, matching `values`.
    pub vectors: Mat,
}

/// Cyclic Jacobi rotations; intended for the small (K ≲ 100) Gram matrices
/// the fits produce.
pub fn symmetric_eigen(a: &Mat) -> SymmetricEigen {
    let n = a.rows;
    assert_eq!(n, a.cols, "matrix must be square");
    let mut m = a.clone();
    let mut v = Mat::identity(n);

    for _sweep in 0..100 {
        let mut off = 0.0;
        let mut diag = 0.0;
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    off += m[(i, j)] * m[(i, j)];
                } else {
                    diag += m[(i, i)] * m[(i, i)];
                }
            }
        }
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Mat::from_columns(n, order.iter().map(|&i| v.col(i).to_vec()).collect());
    SymmetricEigen { values, vectors }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, row_major: &[f64]) -> Mat {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = row_major[i * cols + j];
            }
        }
        m
    }

    #[test]
    fn lstsq_full_rank_exact() {
        // y = 1 + 2a - b
        let a = mat(4, 3, &[1., 0., 0., 1., 1., 0., 1., 0., 1., 1., 2., 3.]);
        let b = [1.0, 3.0, 0.0, 2.0];
        let sol = lstsq(a, &b);
        assert_eq!(sol.rank, 3);
        for (x, e) in sol.x.iter().zip([1.0, 2.0, -1.0]) {
            assert!((x - e).abs() < 1e-12);
        }
    }

    #[test]
    fn lstsq_rank_deficient_is_minimum_norm() {
        // Two identical columns: min-norm splits the coefficient evenly.
        let a = mat(3, 2, &[1., 1., 2., 2., 3., 3.]);
        let b = [2.0, 4.0, 6.0];
        let sol = lstsq(a, &b);
        assert_eq!(sol.rank, 1);
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lstsq_underdetermined_minimum_norm() {
        let a = mat(1, 2, &[3.0, 4.0]);
        let sol = lstsq(a, &[5.0]);
        assert_eq!(sol.rank, 1);
        assert!((sol.x[0] - 0.6).abs() < 1e-12);
        assert!((sol.x[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn jacobi_reconstructs() {
        let a = mat(3, 3, &[4., 1., 2., 1., 3., 0.5, 2., 0.5, 5.]);
        let e = symmetric_eigen(&a);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        for i in 0..3 {
            for j in 0..3 {
                let rec: f64 = (0..3)
                    .map(|k| e.vectors[(i, k)] * e.values[k] * e.vectors[(j, k)])
                    .sum();
                assert!((rec - a[(i, j)]).abs() < 1e-12);
            }
        }
    }
}
