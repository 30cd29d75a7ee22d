//! Small dense-matrix helpers: products, pivoted-LU determinants and a
//! Householder least-squares solve. Windows stay in the low hundreds, so a
//! plain row-major layout is all that is needed.

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub nr: usize,
    pub nc: usize,
    pub a: Vec<f64>,
}

impl Mat {
    pub fn zeros(nr: usize, nc: usize) -> Self {
        Mat {
            nr,
            nc,
            a: vec![0.0; nr * nc],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.a[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(nr: usize, nc: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(nr, nc);
        for i in 0..nr {
            for j in 0..nc {
                m.a[i * nc + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.nc + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.nc + j] = v;
    }

    pub fn mul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.nc, rhs.nr, "dimension mismatch in matrix product");
        let mut out = Mat::zeros(self.nr, rhs.nc);
        for i in 0..self.nr {
            for k in 0..self.nc {
                let lik = self.a[i * self.nc + k];
                if lik == 0.0 {
                    continue;
                }
                let row = &rhs.a[k * rhs.nc..(k + 1) * rhs.nc];
                let dst = &mut out.a[i * rhs.nc..(i + 1) * rhs.nc];
                for (d, r) in dst.iter_mut().zip(row.iter()) {
                    *d += lik * r;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.nc, self.nr, |i, j| self.get(j, i))
    }

    pub fn add(&self, rhs: &Mat) -> Mat {
        assert_eq!((self.nr, self.nc), (rhs.nr, rhs.nc));
        let mut out = self.clone();
        for (d, s) in out.a.iter_mut().zip(rhs.a.iter()) {
            *d += s;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Mat {
        let mut out = self.clone();
        for d in out.a.iter_mut() {
            *d *= s;
        }
        out
    }

    pub fn max_abs_diff(&self, rhs: &Mat) -> f64 {
        assert_eq!((self.nr, self.nc), (rhs.nr, rhs.nc));
        self.a
            .iter()
            .zip(rhs.a.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// det(I - A) by partial-pivot LU; `self` must be square.
    pub fn det_i_minus(&self) -> f64 {
        assert_eq!(self.nr, self.nc);
        let n = self.nr;
        if n == 0 {
            return 1.0;
        }
        let mut m = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = (i == j) as u8 as f64 - self.get(i, j);
            }
        }
        let mut det = 1.0f64;
        for col in 0..n {
            let mut piv = col;
            let mut best = m[col * n + col].abs();
            for r in col + 1..n {
                let v = m[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 {
                return 0.0;
            }
            if piv != col {
                for j in 0..n {
                    m.swap(col * n + j, piv * n + j);
                }
                det = -det;
            }
            let d = m[col * n + col];
            det *= d;
            for r in col + 1..n {
                let f = m[r * n + col] / d;
                if f == 0.0 {
                    continue;
                }
                for j in col..n {
                    m[r * n + j] -= f * m[col * n + j];
                }
            }
        }
        det
    }
}

/// Least squares `min ||A x - b||` via Householder QR with column scaling.
/// Returns the coefficient vector and the relative residual ||Ax-b||/||b||.
pub fn lstsq(a: &Mat, b: &[f64]) -> (Vec<f64>, f64) {
    assert_eq!(a.nr, b.len());
    let (m, n) = (a.nr, a.nc);
    assert!(m >= n && n > 0);
    // scale columns to unit norm for conditioning
    let mut scales = vec![0.0f64; n];
    for j in 0..n {
        let s: f64 = (0..m).map(|i| a.get(i, j) * a.get(i, j)).sum::<f64>().sqrt();
        scales[j] = if s > 0.0 { s } else { 1.0 };
    }
    let mut r = Mat::from_fn(m, n, |i, j| a.get(i, j) / scales[j]);
    let mut y = b.to_vec();
    for k in 0..n {
        let norm: f64 = (k..m).map(|i| r.get(i, k) * r.get(i, k)).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = -norm * r.get(k, k).signum();
        let mut v: Vec<f64> = (k..m).map(|i| r.get(i, k)).collect();
        v[0] -= alpha;
        let vn2: f64 = v.iter().map(|x| x * x).sum();
        if vn2 == 0.0 {
            continue;
        }
        for j in k..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * r.get(i, j)).sum();
            let f = 2.0 * dot / vn2;
            for i in k..m {
                let new = r.get(i, j) - f * v[i - k];
                r.set(i, j, new);
            }
        }
        let dot: f64 = (k..m).map(|i| v[i - k] * y[i]).sum();
        let f = 2.0 * dot / vn2;
        for i in k..m {
            y[i] -= f * v[i - k];
        }
    }
    // back substitution on the upper-triangular part
    let mut x = vec![0.0f64; n];
    for k in (0..n).rev() {
        let mut s = y[k];
        for j in k + 1..n {
            s -= r.get(k, j) * x[j];
        }
        let d = r.get(k, k);
        x[k] = if d.abs() > 1e-300 { s / d } else { 0.0 };
    }
    let resid2: f64 = (n..m).map(|i| y[i] * y[i]).sum();
    let bnorm: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rel = if bnorm > 0.0 {
        resid2.sqrt() / bnorm
    } else {
        0.0
    };
    for j in 0..n {
        x[j] /= scales[j];
    }
    (x, rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn determinant_of_identity_minus_diagonal() {
        let mut m = Mat::zeros(3, 3);
        m.set(0, 0, 0.5);
        m.set(1, 1, -1.0);
        m.set(2, 2, 0.25);
        assert_abs_diff_eq!(m.det_i_minus(), 0.5 * 2.0 * 0.75, epsilon = 1e-14);
    }

    #[test]
    fn determinant_with_offdiagonal() {
        // I - [[0,1],[1,0]] has determinant -0? det([[1,-1],[-1,1]]) = 0
        let mut m = Mat::zeros(2, 2);
        m.set(0, 1, 1.0);
        m.set(1, 0, 1.0);
        assert_abs_diff_eq!(m.det_i_minus(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn least_squares_recovers_exact_solution() {
        let a = Mat::from_fn(5, 2, |i, j| (i as f64 + 1.0).powi(j as i32));
        let x_true = [2.0, -0.5];
        let b: Vec<f64> = (0..5)
            .map(|i| a.get(i, 0) * x_true[0] + a.get(i, 1) * x_true[1])
            .collect();
        let (x, rel) = lstsq(&a, &b);
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], -0.5, epsilon = 1e-12);
        assert!(rel < 1e-13);
    }
}
