//! Dense Householder QR for tall, thin least-squares problems.
//!
//! Columns are stored separately (column-major) since every design matrix
//! here is N × K with N in the tens of thousands and K ≤ ~15. All sums run
//! left to right in index order so results are bit-reproducible.

/// Relative threshold on |R_jj| / ||x_j|| below which column j is treated
/// as linearly dependent on the columns before it.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Qr {
    /// Upper-triangular K × K factor, row-major.
    pub r: Vec<Vec<f64>>,
    /// First K entries of Qᵀy when a right-hand side was supplied.
    pub qty: Option<Vec<f64>>,
    /// Columns whose diagonal collapsed.
    pub dependent: Vec<usize>,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

impl Qr {
    pub fn factor(columns: &[Vec<f64>], rhs: Option<&[f64]>) -> Qr {
        let k = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        let mut a: Vec<Vec<f64>> = columns.to_vec();
        let mut b: Option<Vec<f64>> = rhs.map(<[f64]>::to_vec);
        let col_norms: Vec<f64> = columns.iter().map(|c| dot(c, c).sqrt()).collect();
        let mut dependent = Vec::new();

        for j in 0..k.min(n) {
            let tail = &a[j][j..];
            let norm = dot(tail, tail).sqrt();
            if norm <= RANK_TOL * col_norms[j] || norm == 0.0 {
                dependent.push(j);
                continue;
            }
            let alpha = if a[j][j] > 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = a[j][j..].to_vec();
            v[0] -= alpha;
            let vv = dot(&v, &v);
            if vv == 0.0 {
                continue;
            }
            for col in a.iter_mut().skip(j) {
                reflect(&v, vv, &mut col[j..]);
            }
            if let Some(b) = b.as_mut() {
                reflect(&v, vv, &mut b[j..]);
            }
        }
        for j in n..k {
            dependent.push(j);
        }

        let r = (0..k)
            .map(|i| (0..k).map(|c| if c >= i && i < n { a[c][i] } else { 0.0 }).collect())
            .collect();
        Qr {
            r,
            qty: b.map(|mut b| {
                b.truncate(k);
                b
            }),
            dependent,
        }
    }

    /// Solves Rβ = Qᵀy by back substitution.
    pub fn solve(&self) -> Option<Vec<f64>> {
        let qty = self.qty.as_ref()?;
        if !self.dependent.is_empty() {
            return None;
        }
        let k = self.r.len();
        let mut beta = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = qty[i];
            for j in i + 1..k {
                s -= self.r[i][j] * beta[j];
            }
            beta[i] = s / self.r[i][i];
        }
        Some(beta)
    }

    /// R⁻¹, upper triangular.
    pub fn r_inverse(&self) -> Vec<Vec<f64>> {
        let k = self.r.len();
        let mut inv = vec![vec![0.0; k]; k];
        for col in 0..k {
            // solve R x = e_col
            for i in (0..=col).rev() {
                let mut s = if i == col { 1.0 } else { 0.0 };
                for j in i + 1..=col {
                    s -= self.r[i][j] * inv[j][col];
                }
                inv[i][col] = s / self.r[i][i];
            }
        }
        inv
    }

    /// (XᵀX)⁻¹ = R⁻¹R⁻ᵀ.
    pub fn xtx_inverse(&self) -> Vec<Vec<f64>> {
        let ri = self.r_inverse();
        let k = ri.len();
        let mut out = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                out[i][j] = dot(&ri[i], &ri[j]);
            }
        }
        out
    }
}

fn reflect(v: &[f64], vv: f64, x: &mut [f64]) {
    let s = 2.0 * dot(v, x) / vv;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= s * vi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system_exactly() {
        // y = 1 + 2a - 3b on four points
        let x = vec![vec![1.0; 4], vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0, 1.0]];
        let y: Vec<f64> = (0..4).map(|i| 1.0 + 2.0 * x[1][i] - 3.0 * x[2][i]).collect();
        let qr = Qr::factor(&x, Some(&y));
        let beta = qr.solve().unwrap();
        for (b, t) in beta.iter().zip([1.0, 2.0, -3.0]) {
            assert!((b - t).abs() < 1e-12);
        }
    }

    #[test]
    fn xtx_inverse_matches_hand_value() {
        // X = [1 0; 1 1] → XᵀX = [2 1; 1 1] → inverse [1 -1; -1 2]
        let x = vec![vec![1.0, 1.0], vec![0.0, 1.0]];
        let inv = Qr::factor(&x, None).xtx_inverse();
        let want = [[1.0, -1.0], [-1.0, 2.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((inv[i][j] - want[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn detects_dependent_columns() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![0.5, 0.1, 0.9, 0.3];
        let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - y).collect();
        let qr = Qr::factor(&[a, b, c], Some(&[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(qr.dependent, vec![2]);
        assert!(qr.solve().is_none());

        let qr = Qr::factor(&[vec![1.0, 1.0], vec![0.0, 0.0]], None);
        assert_eq!(qr.dependent, vec![1]);
    }
}
