use super::VoxelError;

/// Voxel-index to world-millimetre transform, stored row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine(pub [[f64; 4]; 4]);

impl Affine {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Affine(m)
    }

    /// Diagonal scaling with an origin offset.
    pub fn from_spacing(spacing: [f64; 3], origin: [f64; 3]) -> Self {
        let mut a = Self::identity();
        for i in 0..3 {
            a.0[i][i] = spacing[i];
            a.0[i][3] = origin[i];
        }
        a
    }

    pub fn column(&self, j: usize) -> [f64; 3] {
        [self.0[0][j], self.0[1][j], self.0[2][j]]
    }

    pub fn set_column(&mut self, j: usize, c: [f64; 3]) {
        for (i, v) in c.iter().enumerate() {
            self.0[i][j] = *v;
        }
    }

    pub fn origin(&self) -> [f64; 3] {
        self.column(3)
    }

    /// Length of each voxel axis in mm.
    pub fn voxel_sizes(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for (j, v) in s.iter_mut().enumerate() {
            let c = self.column(j);
            *v = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        }
        s
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3];
        }
        out
    }

    pub fn linear_det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.linear_det().abs()
    }

    /// Gauss-Jordan inverse with partial pivoting.
    pub fn inverse(&self) -> Result<Affine, VoxelError> {
        let mut a = self.0;
        let mut inv = Affine::identity().0;
        let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for col in 0..4 {
            let pivot = (col..4)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            if a[pivot][col].abs() <= 1e-12 * scale {
                return Err(VoxelError::Geometry("affine is singular".into()));
            }
            a.swap(col, pivot);
            inv.swap(col, pivot);
            let p = a[col][col];
            for k in 0..4 {
                a[col][k] /= p;
                inv[col][k] /= p;
            }
            for row in 0..4 {
                if row != col {
                    let f = a[row][col];
                    if f != 0.0 {
                        for k in 0..4 {
                            a[row][k] -= f * a[col][k];
                            inv[row][k] -= f * inv[col][k];
                        }
                    }
                }
            }
        }
        Ok(Affine(inv))
    }

    pub fn compose(&self, other: &Affine) -> Affine {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        Affine(out)
    }

    /// Row-major flattening.
    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                out[i * 4 + j] = self.0[i][j];
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64; 16]) -> Self {
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = v[i * 4 + j];
            }
        }
        Affine(m)
    }
}

impl Default for Affine {
    fn default() -> Self {
        Self::identity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let mut a = Affine::from_spacing([1.0, 2.0, 3.0], [4.0, -5.0, 6.0]);
        a.0[0][1] = 0.5;
        let inv = a.inverse().unwrap();
        let id = a.compose(&inv);
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id.0[i][j] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_is_rejected() {
        let mut a = Affine::identity();
        a.0[2][2] = 0.0;
        assert!(a.inverse().is_err());
    }
}
