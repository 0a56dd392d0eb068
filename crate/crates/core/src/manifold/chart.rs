use nalgebra::{Matrix3, Vector3};

/// Default chart half-width beyond the unit face, `|u|, |v| < 1 + overlap`.
pub const DEFAULT_OVERLAP: f64 = 0.1;

/// Point, tangents and second derivatives of a chart at `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartJet {
    pub point: Vector3<f64>,
    /// `∂y/∂u`, `∂y/∂v`.
    pub tangents: [Vector3<f64>; 2],
    /// `∂²y/∂α∂β`.
    pub second: [[Vector3<f64>; 2]; 2],
}

/// Radial projection of a cube face onto `{x : ‖M x‖ = 1}`:
/// `y(u, v) = p / ‖M p‖` with `p = n + u e₁ + v e₂`.
///
/// For `M = I` this is the gnomonic chart of the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialChart {
    pub id: usize,
    normal: Vector3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    shape: Matrix3<f64>,
    gram: Matrix3<f64>,
}

impl RadialChart {
    fn new(id: usize, shape: Matrix3<f64>) -> Self {
        let axis = id / 2;
        let sign = if id.is_multiple_of(2) { 1.0 } else { -1.0 };
        let mut normal = Vector3::zeros();
        normal[axis] = sign;
        let mut e1 = Vector3::zeros();
        e1[(axis + 1) % 3] = 1.0;
        let mut e2 = Vector3::zeros();
        e2[(axis + 2) % 3] = sign;
        Self { id, normal, e1, e2, shape, gram: shape.transpose() * shape }
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.normal
    }

    fn p(&self, uv: [f64; 2]) -> Vector3<f64> {
        self.normal + uv[0] * self.e1 + uv[1] * self.e2
    }

    pub fn point(&self, uv: [f64; 2]) -> Vector3<f64> {
        let p = self.p(uv);
        p / (self.shape * p).norm()
    }

    pub fn jet(&self, uv: [f64; 2]) -> ChartJet {
        let p = self.p(uv);
        let s = (self.shape * p).norm();
        let s3 = s * s * s;
        let s5 = s3 * s * s;
        let q = self.gram * p;
        let dirs = [self.e1, self.e2];
        let qd = [q.dot(&self.e1), q.dot(&self.e2)];
        let tangents = [dirs[0] / s - p * (qd[0] / s3), dirs[1] / s - p * (qd[1] / s3)];
        let mut second = [[Vector3::zeros(); 2]; 2];
        for a in 0..2 {
            for b in a..2 {
                let mab = dirs[a].dot(&(self.gram * dirs[b]));
                let v = -dirs[a] * (qd[b] / s3) - dirs[b] * (qd[a] / s3) - p * (mab / s3)
                    + p * (3.0 * qd[a] * qd[b] / s5);
                second[a][b] = v;
                second[b][a] = v;
            }
        }
        ChartJet { point: p / s, tangents, second }
    }

    /// Chart coordinates of a surface point, if it lies on this face's side.
    pub fn coordinates(&self, x: &Vector3<f64>) -> Option<[f64; 2]> {
        let c = self.normal.dot(x);
        if c <= 0.0 {
            return None;
        }
        let p = x / c;
        Some([self.e1.dot(&p), self.e2.dot(&p)])
    }
}

/// Six radial charts, one per cube face, each extended by `overlap` past the
/// face so that neighbouring charts overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartAtlas {
    charts: [RadialChart; 6],
    overlap: f64,
}

impl ChartAtlas {
    /// Atlas of `{x : ‖shape · x‖ = 1}`.
    pub fn new(shape: Matrix3<f64>, overlap: f64) -> Self {
        let charts = std::array::from_fn(|id| RadialChart::new(id, shape));
        Self { charts, overlap }
    }

    pub fn charts(&self) -> &[RadialChart; 6] {
        &self.charts
    }

    pub fn chart(&self, id: usize) -> &RadialChart {
        &self.charts[id]
    }

    pub fn overlap(&self) -> f64 {
        self.overlap
    }

    /// Strictly inside the extended chart domain.
    pub fn in_chart(&self, uv: [f64; 2]) -> bool {
        uv[0].abs() < 1.0 + self.overlap && uv[1].abs() < 1.0 + self.overlap
    }

    /// Chart whose face contains the direction of `x`, with its coordinates
    /// (both in `[-1, 1]`).
    pub fn owner(&self, x: &Vector3<f64>) -> (usize, [f64; 2]) {
        let axis = (0..3).max_by(|&i, &j| x[i].abs().total_cmp(&x[j].abs())).unwrap_or(0);
        let id = 2 * axis + usize::from(x[axis] < 0.0);
        let uv = self.charts[id].coordinates(x).expect("owner face faces the point");
        (id, uv)
    }
}
