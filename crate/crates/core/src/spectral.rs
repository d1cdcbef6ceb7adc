//! Linear convolution of real sequences, direct or through FFTs.
//!
//! Real signals are packed two at a time into one complex transform, and
//! products are formed on the half spectrum only.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Above this many multiply-adds a transform is cheaper.
const DIRECT_LIMIT: usize = 1 << 16;

pub(crate) fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 64 || a.len().saturating_mul(b.len()) <= DIRECT_LIMIT {
        let mut out = vec![0.0; out_len];
        convolve_into(&mut out, a, b);
        return out;
    }
    let plan = Plan::new(out_len);
    let (fa, fb) = plan.forward_pair(a, b);
    let prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    let mut out = plan.inverse(&prod);
    out.truncate(out_len);
    out
}

/// `out += a * b`, skipping zeros in `a`.
pub(crate) fn convolve_into(out: &mut [f64], a: &[f64], b: &[f64]) {
    debug_assert!(out.len() + 1 >= a.len() + b.len());
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out[i..i + b.len()].iter_mut().zip(b) {
            *o += x * y;
        }
    }
}

pub(crate) struct Plan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Plan {
    /// Transform length is the next power of two at or above `min_len`.
    pub fn new(min_len: usize) -> Self {
        let len = min_len.max(2).next_power_of_two();
        let (forward, inverse) = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            (p.plan_fft_forward(len), p.plan_fft_inverse(len))
        });
        Self {
            len,
            forward,
            inverse,
        }
    }

    pub fn half_len(&self) -> usize {
        self.len / 2 + 1
    }

    /// Half spectra of two real signals from one complex transform.
    pub fn forward_pair(&self, a: &[f64], b: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
        assert!(a.len() <= self.len && b.len() <= self.len);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        for (z, &x) in buf.iter_mut().zip(a) {
            z.re = x;
        }
        for (z, &y) in buf.iter_mut().zip(b) {
            z.im = y;
        }
        self.forward.process(&mut buf);
        let n = self.len;
        let h = self.half_len();
        let mut fa = Vec::with_capacity(h);
        let mut fb = Vec::with_capacity(h);
        for k in 0..h {
            let z = buf[k];
            let zc = buf[(n - k) % n].conj();
            fa.push((z + zc) * 0.5);
            let d = (z - zc) * 0.5;
            fb.push(Complex64::new(d.im, -d.re));
        }
        (fa, fb)
    }

    pub fn inverse(&self, x: &[Complex64]) -> Vec<f64> {
        self.inverse_pair(x, None).0
    }

    /// Real signals from two Hermitian half spectra with one complex transform.
    pub fn inverse_pair(&self, x: &[Complex64], y: Option<&[Complex64]>) -> (Vec<f64>, Vec<f64>) {
        let n = self.len;
        let h = self.half_len();
        assert_eq!(x.len(), h);
        let i = Complex64::new(0.0, 1.0);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..h {
            let yk = y.map_or(Complex64::new(0.0, 0.0), |y| y[k]);
            buf[k] = x[k] + i * yk;
            if k > 0 && k < n - k {
                buf[n - k] = x[k].conj() + i * yk.conj();
            }
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        let re = buf.iter().map(|z| z.re * scale).collect();
        let im = if y.is_some() {
            buf.iter().map(|z| z.im * scale).collect()
        } else {
            Vec::new()
        };
        (re, im)
    }
}
