//! Discrete-time filters obtained by the bilinear transform.

use crate::tf::Complex;

/// Rational filter in transposed direct form II with complex signals and
/// real coefficients. `a[0]` is normalized to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFilter {
    b: Vec<f64>,
    a: Vec<f64>,
    state: Vec<Complex>,
}

fn binomial_product(k: usize, n: usize) -> Vec<f64> {
    // (1 - x)^k (1 + x)^(n - k), ascending powers of x = z^-1
    let mut poly = vec![1.0];
    let mut mul = |factor: [f64; 2]| {
        let mut next = vec![0.0; poly.len() + 1];
        for (i, c) in poly.iter().enumerate() {
            next[i] += c * factor[0];
            next[i + 1] += c * factor[1];
        }
        poly = next;
    };
    for _ in 0..k {
        mul([1.0, -1.0]);
    }
    for _ in k..n {
        mul([1.0, 1.0]);
    }
    poly
}

impl DiscreteFilter {
    /// Bilinear transform of `num(s)/den(s)` (ascending powers) at sample
    /// time `ts`. With `prewarp = Some(w)` the discrete response matches the
    /// continuous one exactly at `w` rad/s.
    pub fn bilinear(num: &[f64], den: &[f64], ts: f64, prewarp: Option<f64>) -> Self {
        let order = num.len().max(den.len()).saturating_sub(1);
        let c = match prewarp {
            Some(w) if w > 0.0 && w * ts < std::f64::consts::PI => w / (w * ts / 2.0).tan(),
            _ => 2.0 / ts,
        };
        let map = |coeffs: &[f64]| {
            let mut out = vec![0.0; order + 1];
            for (k, &ck) in coeffs.iter().enumerate() {
                if ck == 0.0 {
                    continue;
                }
                let scale = ck * c.powi(k as i32);
                for (i, p) in binomial_product(k, order).into_iter().enumerate() {
                    out[i] += scale * p;
                }
            }
            out
        };
        let mut b = map(num);
        let mut a = map(den);
        let a0 = a[0];
        b.iter_mut().for_each(|x| *x /= a0);
        a.iter_mut().for_each(|x| *x /= a0);
        Self {
            b,
            a,
            state: vec![Complex::new(0.0, 0.0); order],
        }
    }

    pub fn gain(k: f64) -> Self {
        Self {
            b: vec![k],
            a: vec![1.0],
            state: Vec::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.state.len()
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn step(&mut self, x: Complex) -> Complex {
        let n = self.state.len();
        let y = self.b[0] * x + if n > 0 { self.state[0] } else { Complex::new(0.0, 0.0) };
        for i in 0..n {
            let carry = if i + 1 < n {
                self.state[i + 1]
            } else {
                Complex::new(0.0, 0.0)
            };
            self.state[i] = self.b[i + 1] * x - self.a[i + 1] * y + carry;
        }
        y
    }

    /// Frequency response at `z = e^{j omega ts}`.
    pub fn response(&self, z: Complex) -> Complex {
        let zi = z.inv();
        let poly = |c: &[f64]| {
            c.iter()
                .rev()
                .fold(Complex::new(0.0, 0.0), |acc, &v| acc * zi + v)
        };
        poly(&self.b) / poly(&self.a)
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = Complex::new(0.0, 0.0));
    }

    /// Places the filter on the steady-state orbit of a complex sinusoid:
    /// the next input will be `x_now`, the matching output `y_now`, and
    /// consecutive samples advance by the factor `z`.
    pub fn set_sinusoidal(&mut self, x_now: Complex, y_now: Complex, z: Complex) {
        let n = self.state.len();
        let zi = z.inv();
        for k in 1..=n {
            let mut acc = Complex::new(0.0, 0.0);
            let mut w = zi;
            for m in k..=n {
                acc += (self.b[m] * x_now - self.a[m] * y_now) * w;
                w *= zi;
            }
            self.state[k - 1] = acc;
        }
    }

    /// Output-matched warm start: the next step with input `x` returns `y`.
    /// Deeper states are set as if `x` and `y` had been constant.
    pub fn warm_start(&mut self, x: Complex, y: Complex) {
        let n = self.state.len();
        if n == 0 {
            return;
        }
        for i in (1..n).rev() {
            let mut acc = Complex::new(0.0, 0.0);
            for m in (i + 1)..=n {
                acc += self.b[m] * x - self.a[m] * y;
            }
            self.state[i] = acc;
        }
        self.state[0] = y - self.b[0] * x;
    }
}
