//! Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5) and zero
//! padding, with its gradient w.r.t. the first image.

use crate::raster::{Image, Mask};

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "same"-size Gaussian filtering with zero padding. The kernel
/// is symmetric, so this operator is its own adjoint.
pub(crate) fn blur(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = kernel();
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    s += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.as_slice().iter().map(|p| p[c]).collect()
}

/// Mean SSIM over masked pixels and all channels; with `want_grad`, also
/// `d(mean SSIM)/d(x)`.
pub(crate) fn masked_ssim(x: &Image, y: &Image, mask: &Mask, want_grad: bool) -> (f64, Option<Image>) {
    let (w, h) = x.dims();
    let count = mask.count();
    let norm = 1.0 / (3 * count) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::filled(w, h, [0.0; 3]));
    for c in 0..3 {
        let xs = channel(x, c);
        let ys = channel(y, c);
        let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
        let mx = blur(&xs, w, h);
        let my = blur(&ys, w, h);
        let exx = blur(&xx, w, h);
        let eyy = blur(&yy, w, h);
        let exy = blur(&xy, w, h);
        let mut g_mx = vec![0.0; w * h];
        let mut g_exx = vec![0.0; w * h];
        let mut g_exy = vec![0.0; w * h];
        for i in 0..w * h {
            if !mask.as_slice()[i] {
                continue;
            }
            let a1 = 2.0 * mx[i] * my[i] + C1;
            let a2 = 2.0 * (exy[i] - mx[i] * my[i]) + C2;
            let b1 = mx[i] * mx[i] + my[i] * my[i] + C1;
            let b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                g_mx[i] = norm * (2.0 * my[i] * (a2 - a1) / (b1 * b2) + s * 2.0 * mx[i] * (1.0 / b2 - 1.0 / b1));
                g_exx[i] = norm * (-s / b2);
                g_exy[i] = norm * (2.0 * a1 / (b1 * b2));
            }
        }
        if let Some(g) = grad.as_mut() {
            let bm = blur(&g_mx, w, h);
            let bxx = blur(&g_exx, w, h);
            let bxy = blur(&g_exy, w, h);
            for (i, px) in g.as_mut_slice().iter_mut().enumerate() {
                px[c] = bm[i] + 2.0 * xs[i] * bxx[i] + ys[i] * bxy[i];
            }
        }
    }
    (total * norm, grad)
}
