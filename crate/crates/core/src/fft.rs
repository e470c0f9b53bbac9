//! Mixed-radix complex FFT.
//!
//! Sizes are factored and transformed recursively; radices 2 to 5 have
//! dedicated butterflies and any other prime falls back to a generic one, so
//! any length works. The detector pads to {2, 3, 5}-smooth sizes.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

pub use num_complex::Complex64;

/// Precomputed twiddles and factorization for one transform length.
#[derive(Debug)]
pub struct Fft1d {
    n: usize,
    twiddles: Vec<Complex64>,
    /// (radix, remaining length after this stage)
    stages: Vec<(usize, usize)>,
}

fn factorize(mut n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    while n % 4 == 0 {
        out.push(4);
        n /= 4;
    }
    let mut p = 2;
    while n > 1 {
        while n % p == 0 {
            out.push(p);
            n /= p;
        }
        p += if p == 2 { 1 } else { 2 };
    }
    out
}

impl Fft1d {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "FFT of length 0");
        let twiddles = (0..n)
            .map(|k| {
                let phase = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(libm::cos(phase), libm::sin(phase))
            })
            .collect();
        let mut stages = Vec::new();
        let mut m = n;
        for p in factorize(n) {
            m /= p;
            stages.push((p, m));
        }
        Fft1d { n, twiddles, stages }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Forward transform (`e^{−2πi jk/n}` kernel) of `input` into `output`.
    pub fn forward(&self, input: &[Complex64], output: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        debug_assert_eq!(input.len(), self.n);
        debug_assert_eq!(output.len(), self.n);
        if self.n == 1 {
            output[0] = input[0];
            return;
        }
        self.work(output, input, 0, 1, &self.stages, scratch);
    }

    /// Unnormalized inverse transform.
    pub fn inverse(&self, input: &[Complex64], output: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        let conj: Vec<Complex64> = input.iter().map(|c| c.conj()).collect();
        self.forward(&conj, output, scratch);
        for c in output.iter_mut() {
            *c = c.conj();
        }
    }

    fn work(
        &self,
        out: &mut [Complex64],
        input: &[Complex64],
        offset: usize,
        fstride: usize,
        stages: &[(usize, usize)],
        scratch: &mut Vec<Complex64>,
    ) {
        let (p, m) = stages[0];
        if m == 1 {
            for (j, o) in out.iter_mut().enumerate().take(p) {
                *o = input[offset + j * fstride];
            }
        } else {
            for j in 0..p {
                self.work(&mut out[j * m..(j + 1) * m], input, offset + j * fstride, fstride * p, &stages[1..], scratch);
            }
        }
        self.butterfly(out, fstride, p, m, scratch);
    }

    fn butterfly(&self, out: &mut [Complex64], fstride: usize, p: usize, m: usize, scratch: &mut Vec<Complex64>) {
        match p {
            2 => self.butterfly2(out, fstride, m),
            3 => self.butterfly3(out, fstride, m),
            4 => self.butterfly4(out, fstride, m),
            5 => self.butterfly5(out, fstride, m),
            _ => self.butterfly_generic(out, fstride, p, m, scratch),
        }
    }

    fn butterfly2(&self, out: &mut [Complex64], fstride: usize, m: usize) {
        let tw = &self.twiddles;
        for u in 0..m {
            let t = out[u + m] * tw[u * fstride];
            let a = out[u];
            out[u] = a + t;
            out[u + m] = a - t;
        }
    }

    fn butterfly3(&self, out: &mut [Complex64], fstride: usize, m: usize) {
        let tw = &self.twiddles;
        let epi3 = tw[fstride * m].im;
        for u in 0..m {
            let s1 = out[u + m] * tw[u * fstride];
            let s2 = out[u + 2 * m] * tw[2 * u * fstride];
            let sum = s1 + s2;
            let diff = (s1 - s2) * epi3;
            let mid = out[u] - sum * 0.5;
            out[u] += sum;
            out[u + m] = Complex64::new(mid.re - diff.im, mid.im + diff.re);
            out[u + 2 * m] = Complex64::new(mid.re + diff.im, mid.im - diff.re);
        }
    }

    fn butterfly4(&self, out: &mut [Complex64], fstride: usize, m: usize) {
        let tw = &self.twiddles;
        for u in 0..m {
            let s0 = out[u + m] * tw[u * fstride];
            let s1 = out[u + 2 * m] * tw[2 * u * fstride];
            let s2 = out[u + 3 * m] * tw[3 * u * fstride];
            let a = out[u];
            let (s3, s4) = (s0 + s2, s0 - s2);
            let (s5, s6) = (a + s1, a - s1);
            out[u] = s5 + s3;
            out[u + 2 * m] = s5 - s3;
            out[u + m] = Complex64::new(s6.re + s4.im, s6.im - s4.re);
            out[u + 3 * m] = Complex64::new(s6.re - s4.im, s6.im + s4.re);
        }
    }

    fn butterfly5(&self, out: &mut [Complex64], fstride: usize, m: usize) {
        let tw = &self.twiddles;
        let (ya, yb) = (tw[fstride * m], tw[2 * fstride * m]);
        for u in 0..m {
            let s0 = out[u];
            let s1 = out[u + m] * tw[u * fstride];
            let s2 = out[u + 2 * m] * tw[2 * u * fstride];
            let s3 = out[u + 3 * m] * tw[3 * u * fstride];
            let s4 = out[u + 4 * m] * tw[4 * u * fstride];
            let (s7, s10) = (s1 + s4, s1 - s4);
            let (s8, s9) = (s2 + s3, s2 - s3);
            out[u] = s0 + s7 + s8;
            let s5 = Complex64::new(s0.re + s7.re * ya.re + s8.re * yb.re, s0.im + s7.im * ya.re + s8.im * yb.re);
            let s6 = Complex64::new(s10.im * ya.im + s9.im * yb.im, -s10.re * ya.im - s9.re * yb.im);
            out[u + m] = s5 - s6;
            out[u + 4 * m] = s5 + s6;
            let s11 = Complex64::new(s0.re + s7.re * yb.re + s8.re * ya.re, s0.im + s7.im * yb.re + s8.im * ya.re);
            let s12 = Complex64::new(s9.im * ya.im - s10.im * yb.im, s10.re * yb.im - s9.re * ya.im);
            out[u + 2 * m] = s11 + s12;
            out[u + 3 * m] = s11 - s12;
        }
    }

    fn butterfly_generic(&self, out: &mut [Complex64], fstride: usize, p: usize, m: usize, scratch: &mut Vec<Complex64>) {
        let n = self.n;
        let tw = &self.twiddles;
        scratch.clear();
        scratch.resize(p, Complex64::new(0.0, 0.0));
        for u in 0..m {
            for q in 0..p {
                scratch[q] = out[u + q * m];
            }
            let mut k = u;
            for _ in 0..p {
                let mut idx = 0;
                let mut acc = scratch[0];
                for s in scratch.iter().skip(1) {
                    idx += fstride * k;
                    if idx >= n {
                        idx %= n;
                    }
                    acc += s * tw[idx];
                }
                out[k] = acc;
                k += m;
            }
        }
    }
}

/// Smallest `m ≥ n` whose prime factors are all 2, 3 or 5.
pub fn next_smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Plans keyed by transform length.
#[derive(Debug, Default, Clone)]
pub struct FftPlanner {
    plans: BTreeMap<usize, Arc<Fft1d>>,
}

impl FftPlanner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn plan(&mut self, n: usize) -> Arc<Fft1d> {
        self.plans.entry(n).or_insert_with(|| Arc::new(Fft1d::new(n))).clone()
    }
}

/// Row-major 2-D transform of a `rows × cols` buffer.
#[derive(Debug, Clone)]
pub struct Fft2d {
    rows: usize,
    cols: usize,
    row_plan: Arc<Fft1d>,
    col_plan: Arc<Fft1d>,
}

impl Fft2d {
    pub fn new(planner: &mut FftPlanner, rows: usize, cols: usize) -> Self {
        Fft2d { rows, cols, row_plan: planner.plan(cols), col_plan: planner.plan(rows) }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.forward_leading_rows(data, self.rows);
    }

    /// Forward transform of data whose rows past `nonzero_rows` are all zero.
    pub fn forward_leading_rows(&self, data: &mut [Complex64], nonzero_rows: usize) {
        let (rows, cols) = (self.rows, self.cols);
        debug_assert_eq!(data.len(), rows * cols);
        let mut scratch = Vec::new();
        let mut buf = vec![Complex64::new(0.0, 0.0); rows.max(cols)];
        let mut line = vec![Complex64::new(0.0, 0.0); rows.max(cols)];
        for r in 0..nonzero_rows.min(rows) {
            let row = &mut data[r * cols..(r + 1) * cols];
            line[..cols].copy_from_slice(row);
            self.row_plan.forward(&line[..cols], row, &mut scratch);
        }
        for c in 0..cols {
            for r in 0..rows {
                line[r] = data[r * cols + c];
            }
            self.col_plan.forward(&line[..rows], &mut buf[..rows], &mut scratch);
            for r in 0..rows {
                data[r * cols + c] = buf[r];
            }
        }
    }

    /// Unnormalized inverse transform.
    pub fn inverse(&self, data: &mut [Complex64]) {
        data.iter_mut().for_each(|z| *z = z.conj());
        self.forward(data);
        data.iter_mut().for_each(|z| *z = z.conj());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (j, v)| {
                    let phase = -2.0 * PI * ((j * k) % n) as f64 / n as f64;
                    acc + v * Complex64::new(libm::cos(phase), libm::sin(phase))
                })
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_for_many_lengths() {
        for n in 1..=64 {
            let x: Vec<Complex64> =
                (0..n).map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos())).collect();
            let plan = Fft1d::new(n);
            let mut out = vec![Complex64::new(0.0, 0.0); n];
            plan.forward(&x, &mut out, &mut Vec::new());
            for (a, b) in out.iter().zip(naive_dft(&x)) {
                assert!(libm::sqrt((a - b).norm_sqr()) < 1e-9 * n as f64, "n = {n}");
            }
            let mut back = vec![Complex64::new(0.0, 0.0); n];
            plan.inverse(&out, &mut back, &mut Vec::new());
            for (a, b) in back.iter().zip(&x) {
                assert!(libm::sqrt((a / n as f64 - b).norm_sqr()) < 1e-12, "n = {n}");
            }
        }
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(next_smooth_size(1), 1);
        assert_eq!(next_smooth_size(7), 8);
        assert_eq!(next_smooth_size(11), 12);
        assert_eq!(next_smooth_size(31), 32);
        assert_eq!(next_smooth_size(49), 50);
        assert_eq!(next_smooth_size(97), 100);
    }

    #[test]
    fn factorization_multiplies_back() {
        for n in 1..500 {
            assert_eq!(factorize(n).iter().product::<usize>().max(1), n);
        }
    }
}
