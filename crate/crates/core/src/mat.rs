//! Small dense square matrices (n ≤ 3) with the decompositions the energy
//! densities need: symmetric eigenvalues, singular values, polar factors and
//! the orthogonal Procrustes problem over SO(n).

use core::fmt;
use core::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use alloc::vec::Vec;

use crate::{Error, Result};

/// Maximum supported dimension.
pub const MAX_DIM: usize = 3;

const JACOBI_SWEEPS: usize = 60;

/// An `n × n` real matrix, `1 ≤ n ≤ 3`, stored in a fixed 3×3 block.
///
/// Entries outside the leading `n × n` block are always zero.
#[derive(Clone, Copy, PartialEq)]
pub struct Mat {
    n: usize,
    e: [[f64; MAX_DIM]; MAX_DIM],
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Mat[")?;
        for i in 0..self.n {
            if i > 0 {
                f.write_str("; ")?;
            }
            for j in 0..self.n {
                if j > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{:?}", self.e[i][j])?;
            }
        }
        f.write_str("]")
    }
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&n), "matrix dimension {n} out of range");
        Mat {
            n,
            e: [[0.0; MAX_DIM]; MAX_DIM],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&[1.0; MAX_DIM][..n])
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.e[i][i] = v;
        }
        m
    }

    /// Builds a matrix from `n²` row-major entries.
    pub fn from_row_major(n: usize, entries: &[f64]) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&n) {
            return Err(Error::invalid(alloc::format!("dimension {n} not in 1..=3")));
        }
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: entries.len(),
            });
        }
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.e[i][j] = entries[i * n + j];
            }
        }
        Ok(m)
    }

    /// Infers `n` from the entry count (1, 4 or 9).
    pub fn from_flat(entries: &[f64]) -> Result<Self> {
        let n = match entries.len() {
            1 => 1,
            4 => 2,
            9 => 3,
            found => return Err(Error::DimensionMismatch { expected: 4, found }),
        };
        Self::from_row_major(n, entries)
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            v.extend_from_slice(&self.e[i][..self.n]);
        }
        v
    }

    /// The tensor product `a ⊗ b`, i.e. `(a ⊗ b)_{ij} = a_i b_j`.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len());
        let mut m = Self::zeros(a.len());
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                m.e[i][j] = ai * bj;
            }
        }
        m
    }

    /// Rotation by `theta` in the plane.
    pub fn rotation2(theta: f64) -> Self {
        let (s, c) = (libm::sin(theta), libm::cos(theta));
        let mut m = Self::zeros(2);
        m.e = [[c, -s, 0.0], [s, c, 0.0], [0.0; 3]];
        m
    }

    /// Rotation about a unit `axis` by `angle` (Rodrigues).
    pub fn rotation3(axis: [f64; 3], angle: f64) -> Self {
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        let [x, y, z] = axis;
        let t = 1.0 - c;
        let mut m = Self::zeros(3);
        m.e = [
            [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
            [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
            [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
        ];
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_finite(&self) -> bool {
        self.rows().all(|r| r.iter().all(|v| v.is_finite()))
    }

    fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.e[..self.n].iter().map(move |r| &r[..self.n])
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.e[j][i] = self.e[i][j];
            }
        }
        t
    }

    /// Symmetric part `(Xᵀ + X)/2`.
    pub fn sym(&self) -> Self {
        let mut s = *self;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let v = 0.5 * (self.e[i][j] + self.e[j][i]);
                s.e[i][j] = v;
                s.e[j][i] = v;
            }
        }
        s
    }

    /// Skew part `(X − Xᵀ)/2`.
    pub fn skew(&self) -> Self {
        let mut s = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                s.e[i][j] = 0.5 * (self.e[i][j] - self.e[j][i]);
            }
        }
        s
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| libm::fabs(self.e[i][j] - self.e[j][i]) <= tol))
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.e[i][i]).sum()
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.n, other.n);
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                acc += self.e[i][j] * other.e[i][j];
            }
        }
        acc
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// Frobenius norm `|X|`.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.norm_sq())
    }

    pub fn max_abs(&self) -> f64 {
        self.rows()
            .flat_map(|r| r.iter())
            .fold(0.0, |m, v| if libm::fabs(*v) > m { libm::fabs(*v) } else { m })
    }

    pub fn det(&self) -> f64 {
        let e = &self.e;
        match self.n {
            1 => e[0][0],
            2 => e[0][0] * e[1][1] - e[0][1] * e[1][0],
            _ => {
                e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1])
                    - e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0])
                    + e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0])
            }
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                m.e[i][j] *= s;
            }
        }
        m
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        debug_assert_eq!(self.n, rhs.n);
        let mut m = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let mut acc = 0.0;
                for l in 0..self.n {
                    acc += self.e[i][l] * rhs.e[l][j];
                }
                m.e[i][j] = acc;
            }
        }
        m
    }

    pub fn col(&self, j: usize) -> [f64; MAX_DIM] {
        [self.e[0][j], self.e[1][j], self.e[2][j]]
    }

    /// Eigen-decomposition of the symmetric part by cyclic Jacobi rotations.
    ///
    /// Returns eigenvalues in descending order and the matrix whose columns
    /// are the corresponding orthonormal eigenvectors.
    pub fn sym_eigen(&self) -> ([f64; MAX_DIM], Mat) {
        let n = self.n;
        let mut a = self.sym();
        let mut v = Self::identity(n);
        for _ in 0..JACOBI_SWEEPS {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a.e[i][j] * a.e[i][j];
                }
            }
            if off <= 1e-300 || off <= f64::EPSILON * f64::EPSILON * a.norm_sq() * 1e-4 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a.e[p][q];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a.e[q][q] - a.e[p][p]) / (2.0 * apq);
                    let t = libm::copysign(1.0, theta) / (libm::fabs(theta) + libm::sqrt(theta * theta + 1.0));
                    let c = 1.0 / libm::sqrt(t * t + 1.0);
                    let s = t * c;
                    for k in 0..n {
                        let akp = a.e[k][p];
                        let akq = a.e[k][q];
                        a.e[k][p] = c * akp - s * akq;
                        a.e[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a.e[p][k];
                        let aqk = a.e[q][k];
                        a.e[p][k] = c * apk - s * aqk;
                        a.e[q][k] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v.e[k][p];
                        let vkq = v.e[k][q];
                        v.e[k][p] = c * vkp - s * vkq;
                        v.e[k][q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order = [0usize, 1, 2];
        let diag = [a.e[0][0], a.e[1][1], a.e[2][2]];
        order[..n].sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap_or(core::cmp::Ordering::Equal));
        let mut vals = [0.0; MAX_DIM];
        let mut vecs = Self::zeros(n);
        for (dst, &src) in order[..n].iter().enumerate() {
            vals[dst] = diag[src];
            for k in 0..n {
                vecs.e[k][dst] = v.e[k][src];
            }
        }
        (vals, vecs)
    }

    /// Singular value decomposition `X = U diag(σ) Vᵀ` via one-sided Jacobi.
    ///
    /// `σ` is sorted in descending order; `U` and `V` are orthogonal (but not
    /// necessarily proper rotations).
    pub fn svd(&self) -> (Mat, [f64; MAX_DIM], Mat) {
        let n = self.n;
        let mut b = *self;
        let mut v = Self::identity(n);
        for _ in 0..JACOBI_SWEEPS {
            let mut rotated = false;
            for p in 0..n {
                for q in (p + 1)..n {
                    let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                    for k in 0..n {
                        alpha += b.e[k][p] * b.e[k][p];
                        beta += b.e[k][q] * b.e[k][q];
                        gamma += b.e[k][p] * b.e[k][q];
                    }
                    if gamma == 0.0 || libm::fabs(gamma) <= 1e-15 * libm::sqrt(alpha * beta) {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = libm::copysign(1.0, zeta) / (libm::fabs(zeta) + libm::sqrt(1.0 + zeta * zeta));
                    let c = 1.0 / libm::sqrt(1.0 + t * t);
                    let s = c * t;
                    for k in 0..n {
                        let bp = b.e[k][p];
                        let bq = b.e[k][q];
                        b.e[k][p] = c * bp - s * bq;
                        b.e[k][q] = s * bp + c * bq;
                        let vp = v.e[k][p];
                        let vq = v.e[k][q];
                        v.e[k][p] = c * vp - s * vq;
                        v.e[k][q] = s * vp + c * vq;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let mut sig = [0.0; MAX_DIM];
        for (j, s) in sig.iter_mut().enumerate().take(n) {
            *s = libm::sqrt((0..n).map(|k| b.e[k][j] * b.e[k][j]).sum());
        }
        let mut order = [0usize, 1, 2];
        order[..n].sort_by(|&i, &j| sig[j].partial_cmp(&sig[i]).unwrap_or(core::cmp::Ordering::Equal));
        let mut u = Self::zeros(n);
        let mut vs = Self::zeros(n);
        let mut sorted = [0.0; MAX_DIM];
        let scale = sig[order[0]];
        let mut rank = 0;
        for (dst, &src) in order[..n].iter().enumerate() {
            sorted[dst] = sig[src];
            for k in 0..n {
                vs.e[k][dst] = v.e[k][src];
            }
            if sig[src] > 1e-14 * scale && sig[src] > 0.0 {
                for k in 0..n {
                    u.e[k][dst] = b.e[k][src] / sig[src];
                }
                rank += 1;
            }
        }
        complete_orthonormal(&mut u, rank);
        (u, sorted, vs)
    }

    /// Solves `max_{R ∈ SO(n)} tr(Rᵀ M)` and returns `(maximum, R)`.
    ///
    /// The maximum equals the sum of singular values of `M`, with the
    /// smallest one counted negatively when `det M < 0`.
    pub fn procrustes(&self) -> (f64, Mat) {
        let e = &self.e;
        match self.n {
            1 => (e[0][0], Self::identity(1)),
            2 => {
                let a = e[0][0] + e[1][1];
                let b = e[1][0] - e[0][1];
                let r = libm::hypot(a, b);
                if r == 0.0 {
                    return (0.0, Self::identity(2));
                }
                let (c, s) = (a / r, b / r);
                let mut rot = Self::zeros(2);
                rot.e = [[c, -s, 0.0], [s, c, 0.0], [0.0; 3]];
                (r, rot)
            }
            _ => {
                let (u, sig, v) = self.svd();
                let flip = u.det() * v.det() < 0.0;
                let d = if flip { -1.0 } else { 1.0 };
                let value = sig[0] + sig[1] + d * sig[2];
                let mut ud = u;
                for k in 0..3 {
                    ud.e[k][2] *= d;
                }
                (value, ud.matmul(&v.transpose()))
            }
        }
    }

    /// The rotation closest to `self` in the Frobenius norm.
    pub fn nearest_rotation(&self) -> Mat {
        self.procrustes().1
    }

    /// Principal square root of a symmetric positive semi-definite matrix.
    pub fn sqrt_psd(&self) -> Mat {
        let (vals, vecs) = self.sym_eigen();
        let mut d = [0.0; MAX_DIM];
        for i in 0..self.n {
            d[i] = libm::sqrt(vals[i].max(0.0));
        }
        let sd = Self::diag(&d[..self.n]);
        vecs.matmul(&sd).matmul(&vecs.transpose())
    }
}

/// Fills columns `rank..n` of `u` with an orthonormal completion of the first
/// `rank` (already orthonormal) columns.
fn complete_orthonormal(u: &mut Mat, rank: usize) {
    let n = u.n;
    let mut filled = rank;
    let mut axis = 0;
    while filled < n && axis < n {
        let mut c = [0.0; MAX_DIM];
        c[axis] = 1.0;
        for j in 0..filled {
            let proj: f64 = (0..n).map(|k| u.e[k][j] * c[k]).sum();
            for (k, ck) in c.iter_mut().enumerate().take(n) {
                *ck -= proj * u.e[k][j];
            }
        }
        let nrm = libm::sqrt(c[..n].iter().map(|v| v * v).sum());
        if nrm > 1e-8 {
            for (k, ck) in c.iter().enumerate().take(n) {
                u.e[k][filled] = ck / nrm;
            }
            filled += 1;
        }
        axis += 1;
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.n && j < self.n);
        &self.e[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.n && j < self.n);
        &mut self.e[i][j]
    }
}

impl Add for Mat {
    type Output = Mat;
    fn add(mut self, rhs: Mat) -> Mat {
        self += rhs;
        self
    }
}

impl AddAssign for Mat {
    fn add_assign(&mut self, rhs: Mat) {
        debug_assert_eq!(self.n, rhs.n);
        for i in 0..self.n {
            for j in 0..self.n {
                self.e[i][j] += rhs.e[i][j];
            }
        }
    }
}

impl Sub for Mat {
    type Output = Mat;
    fn sub(mut self, rhs: Mat) -> Mat {
        self -= rhs;
        self
    }
}

impl SubAssign for Mat {
    fn sub_assign(&mut self, rhs: Mat) {
        debug_assert_eq!(self.n, rhs.n);
        for i in 0..self.n {
            for j in 0..self.n {
                self.e[i][j] -= rhs.e[i][j];
            }
        }
    }
}

impl Neg for Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

impl Mul<f64> for Mat {
    type Output = Mat;
    fn mul(self, s: f64) -> Mat {
        self.scale(s)
    }
}

impl Mul<Mat> for f64 {
    type Output = Mat;
    fn mul(self, m: Mat) -> Mat {
        m.scale(self)
    }
}

impl Mul for Mat {
    type Output = Mat;
    fn mul(self, rhs: Mat) -> Mat {
        self.matmul(&rhs)
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Mat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(self.n * self.n))?;
        for v in self.to_row_major() {
            seq.serialize_element(&v)?;
        }
        seq.end()
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Mat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        Mat::from_flat(&v).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
        (*a - *b).norm() <= tol
    }

    #[test]
    fn det_and_trace() {
        let m = Mat::from_row_major(2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.det(), -2.0);
        assert_eq!(m.trace(), 5.0);
        assert_eq!(Mat::identity(3).det(), 1.0);
    }

    #[test]
    fn from_flat_rejects_bad_lengths() {
        assert!(Mat::from_flat(&[1.0, 2.0]).is_err());
        assert_eq!(Mat::from_flat(&[2.0]).unwrap().dim(), 1);
    }

    #[test]
    fn svd_reconstructs() {
        let m = Mat::from_row_major(3, &[1.0, 2.0, -0.5, 0.3, -1.2, 2.2, 0.7, 0.1, 0.9]).unwrap();
        let (u, s, v) = m.svd();
        let rec = u.matmul(&Mat::diag(&s)).matmul(&v.transpose());
        assert!(close(&rec, &m, 1e-12));
        assert!(s[0] >= s[1] && s[1] >= s[2]);
        assert!(close(&u.transpose().matmul(&u), &Mat::identity(3), 1e-12));
    }

    #[test]
    fn svd_rank_deficient() {
        let m = Mat::outer(&[1.0, 2.0, 0.0], &[0.0, 1.0, 1.0]);
        let (u, s, v) = m.svd();
        assert!(s[1].abs() < 1e-12 && s[2].abs() < 1e-12);
        assert!(close(&u.transpose().matmul(&u), &Mat::identity(3), 1e-12));
        let rec = u.matmul(&Mat::diag(&s)).matmul(&v.transpose());
        assert!(close(&rec, &m, 1e-12));
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let r = Mat::rotation3([0.0, 0.6, 0.8], 0.7);
        let (val, q) = r.procrustes();
        assert!((val - 3.0).abs() < 1e-12);
        assert!(close(&q, &r, 1e-12));
        let r2 = Mat::rotation2(2.5);
        assert!(close(&r2.scale(3.0).nearest_rotation(), &r2, 1e-14));
    }

    #[test]
    fn procrustes_reflection_flips_smallest() {
        let m = Mat::diag(&[3.0, 2.0, -1.0]);
        let (val, q) = m.procrustes();
        assert!((val - 4.0).abs() < 1e-12);
        assert!((q.det() - 1.0).abs() < 1e-12);
        let m2 = Mat::diag(&[3.0, -1.0]);
        assert!((m2.procrustes().0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sqrt_psd_squares_back() {
        let a = Mat::from_row_major(2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let s = a.sqrt_psd();
        assert!(close(&s.matmul(&s), &a, 1e-13));
    }

    #[test]
    fn eigen_sorted_descending() {
        let a = Mat::diag(&[1.0, 3.0, 2.0]);
        let (vals, _) = a.sym_eigen();
        assert_eq!(vals, [3.0, 2.0, 1.0]);
    }
}
