//! Real spherical-harmonic basis up to degree 3 with direction derivatives.

use nalgebra::Vector3;

pub const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_DEGREE: usize = 3;

pub fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

pub fn is_valid_coeff_count(n: usize) -> bool {
    matches!(n, 1 | 4 | 9 | 16)
}

pub fn degree_for_coeffs(n: usize) -> usize {
    match n {
        0 | 1 => 0,
        2..=4 => 1,
        5..=9 => 2,
        _ => 3,
    }
}

/// Basis values and their partial derivatives w.r.t. the (unit) direction
/// components, for the first `n` coefficients.
pub fn basis(dir: &Vector3<f64>, n: usize) -> ([f64; 16], [[f64; 3]; 16]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; 16];
    let mut d = [[0.0; 3]; 16];
    b[0] = C0;
    if n > 1 {
        b[1] = -C1 * y;
        d[1] = [0.0, -C1, 0.0];
        b[2] = C1 * z;
        d[2] = [0.0, 0.0, C1];
        b[3] = -C1 * x;
        d[3] = [-C1, 0.0, 0.0];
    }
    if n > 4 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = C2[0] * x * y;
        d[4] = [C2[0] * y, C2[0] * x, 0.0];
        b[5] = C2[1] * y * z;
        d[5] = [0.0, C2[1] * z, C2[1] * y];
        b[6] = C2[2] * (2.0 * zz - xx - yy);
        d[6] = [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z];
        b[7] = C2[3] * x * z;
        d[7] = [C2[3] * z, 0.0, C2[3] * x];
        b[8] = C2[4] * (xx - yy);
        d[8] = [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0];
        if n > 9 {
            b[9] = C3[0] * y * (3.0 * xx - yy);
            d[9] = [C3[0] * 6.0 * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
            b[10] = C3[1] * x * y * z;
            d[10] = [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y];
            b[11] = C3[2] * y * (4.0 * zz - xx - yy);
            d[11] = [
                -2.0 * C3[2] * x * y,
                C3[2] * (4.0 * zz - xx - 3.0 * yy),
                8.0 * C3[2] * y * z,
            ];
            b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            d[12] = [
                -6.0 * C3[3] * x * z,
                -6.0 * C3[3] * y * z,
                C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
            ];
            b[13] = C3[4] * x * (4.0 * zz - xx - yy);
            d[13] = [
                C3[4] * (4.0 * zz - 3.0 * xx - yy),
                -2.0 * C3[4] * x * y,
                8.0 * C3[4] * x * z,
            ];
            b[14] = C3[5] * z * (xx - yy);
            d[14] = [2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (xx - yy)];
            b[15] = C3[6] * x * (xx - 3.0 * yy);
            d[15] = [C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * C3[6] * x * y, 0.0];
        }
    }
    (b, d)
}

/// `0.5 + sum_k basis_k(dir) * coeffs_k` per channel.
pub fn eval(coeffs: &[[f64; 3]], dir: &Vector3<f64>) -> [f64; 3] {
    let (b, _) = basis(dir, coeffs.len());
    let mut rgb = [0.5; 3];
    for (k, c) in coeffs.iter().enumerate() {
        for ch in 0..3 {
            rgb[ch] += b[k] * c[ch];
        }
    }
    rgb
}
