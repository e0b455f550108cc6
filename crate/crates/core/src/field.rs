//! Plain containers for grid fields and a few vector-space helpers.

/// Two Cartesian components, each with one value per grid node.
pub type VectorField = [Vec<f64>; 2];

/// One 2×2 matrix per grid node; `m[i][k]` is row i, column k.
pub type MatrixField = Vec<[[f64; 2]; 2]>;

pub fn zeros_vec(n: usize) -> VectorField {
    [vec![0.0; n], vec![0.0; n]]
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn axpy_vec(alpha: f64, x: &VectorField, y: &mut VectorField) {
    axpy(alpha, &x[0], &mut y[0]);
    axpy(alpha, &x[1], &mut y[1]);
}

pub fn scaled_vec(alpha: f64, x: &VectorField) -> VectorField {
    [x[0].iter().map(|v| alpha * v).collect(), x[1].iter().map(|v| alpha * v).collect()]
}

pub fn sub_vec(x: &VectorField, y: &VectorField) -> VectorField {
    [
        x[0].iter().zip(&y[0]).map(|(a, b)| a - b).collect(),
        x[1].iter().zip(&y[1]).map(|(a, b)| a - b).collect(),
    ]
}

pub fn add_vec(x: &VectorField, y: &VectorField) -> VectorField {
    [
        x[0].iter().zip(&y[0]).map(|(a, b)| a + b).collect(),
        x[1].iter().zip(&y[1]).map(|(a, b)| a + b).collect(),
    ]
}

pub fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

pub const IDENTITY: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

pub fn det2(m: &[[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub fn inv2(m: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let d = det2(m);
    [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
}

pub fn mul2(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for k in 0..2 {
            c[i][k] = a[i][0] * b[0][k] + a[i][1] * b[1][k];
        }
    }
    c
}

pub fn transpose2(a: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

pub fn matvec2(a: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

pub fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn frob2(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}
