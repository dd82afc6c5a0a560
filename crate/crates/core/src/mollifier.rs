//! The C∞ transition `s(x) = σ(x) / (σ(x) + σ(1 − x))` with `σ(x) = exp(−1/x)` for
//! `x > 0`, and truncated Taylor jets for evaluating its derivatives.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Below this argument `exp(−1/x)` underflows, so the flank is treated as exactly zero.
const FLAT_BELOW: f64 = 1.0 / 700.0;

/// Truncated Taylor expansion `f(x₀ + t) = Σ_k c[k] tᵏ`, `k < N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet<const N: usize> {
    pub c: [f64; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; N];
        c[0] = v;
        Self { c }
    }

    /// The identity function expanded at `x`.
    pub fn variable(x: f64) -> Self {
        let mut c = [0.0; N];
        c[0] = x;
        if N > 1 {
            c[1] = 1.0;
        }
        Self { c }
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// The `k`th derivative at the expansion point.
    pub fn derivative(&self, k: usize) -> f64 {
        let mut f = 1.0;
        for j in 2..=k {
            f *= j as f64;
        }
        self.c[k] * f
    }

    pub fn derivatives(&self) -> [f64; N] {
        let mut out = [0.0; N];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.derivative(k);
        }
        out
    }

    pub fn scale(mut self, a: f64) -> Self {
        for c in self.c.iter_mut() {
            *c *= a;
        }
        self
    }

    pub fn offset(mut self, b: f64) -> Self {
        self.c[0] += b;
        self
    }

    pub fn recip(self) -> Self {
        let a = self.c;
        let mut r = [0.0; N];
        r[0] = 1.0 / a[0];
        for k in 1..N {
            let mut s = 0.0;
            for j in 1..=k {
                s += a[j] * r[k - j];
            }
            r[k] = -s * r[0];
        }
        Self { c: r }
    }

    pub fn exp(self) -> Self {
        let a = self.c;
        let mut e = [0.0; N];
        e[0] = a[0].exp();
        for k in 1..N {
            let mut s = 0.0;
            for j in 1..=k {
                s += j as f64 * a[j] * e[k - j];
            }
            e[k] = s / k as f64;
        }
        Self { c: e }
    }

    pub fn ln(self) -> Self {
        let a = self.c;
        let mut l = [0.0; N];
        l[0] = a[0].ln();
        for k in 1..N {
            let mut s = 0.0;
            for j in 1..k {
                s += j as f64 * l[j] * a[k - j];
            }
            l[k] = (a[k] - s / k as f64) / a[0];
        }
        Self { c: l }
    }

    /// `self^p` for a positive base.
    pub fn powf(self, p: f64) -> Self {
        (self.ln().scale(p)).exp()
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        for k in 0..N {
            self.c[k] += o.c[k];
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    fn sub(mut self, o: Self) -> Self {
        for k in 0..N {
            self.c[k] -= o.c[k];
        }
        self
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut c = [0.0; N];
        for i in 0..N {
            for j in 0..N - i {
                c[i + j] += self.c[i] * o.c[j];
            }
        }
        Self { c }
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

fn sigma(x: f64) -> f64 {
    if x <= FLAT_BELOW {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

fn sigma_jet<const N: usize>(x: Jet<N>) -> Jet<N> {
    if x.value() <= FLAT_BELOW {
        Jet { c: [0.0; N] }
    } else {
        (-x.recip()).exp()
    }
}

/// The transition: 0 for `x ≤ 0`, 1 for `x ≥ 1`, `s(1/2) = 1/2`, `s(1 − x) = 1 − s(x)`.
pub fn transition(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = sigma(x);
    let b = sigma(1.0 - x);
    a / (a + b)
}

/// The transition composed with a jet.
pub fn transition_jet<const N: usize>(x: Jet<N>) -> Jet<N> {
    let v = x.value();
    if v <= 0.0 {
        return Jet { c: [0.0; N] };
    }
    if v >= 1.0 {
        return Jet::constant(1.0);
    }
    let a = sigma_jet(x);
    let b = sigma_jet(Jet::constant(1.0) - x);
    a / (a + b)
}

/// Derivatives `s, s′, …, s^{(N−1)}` at `x`.
pub fn transition_derivatives<const N: usize>(x: f64) -> [f64; N] {
    transition_jet(Jet::<N>::variable(x)).derivatives()
}

/// Smooth step falling from 1 (for `x ≤ lo`) to 0 (for `x ≥ hi`).
pub fn falling_step(x: f64, lo: f64, hi: f64) -> f64 {
    1.0 - transition((x - lo) / (hi - lo))
}

/// Smooth plateau: 1 on `[−1/2, 1/2]`, 0 outside `[−1, 1]`.
pub fn plateau(x: f64) -> f64 {
    1.0 - transition(2.0 * x.abs() - 1.0)
}

/// Maxima of `|s^{(k)}|` for `k < N`, found on a dense grid of `[0, 1]`.
pub fn transition_sup_norms<const N: usize>(grid: usize) -> [f64; N] {
    let mut out = [0.0f64; N];
    for g in 0..=grid {
        let d = transition_derivatives::<N>(g as f64 / grid as f64);
        for k in 0..N {
            out[k] = out[k].max(d[k].abs());
        }
    }
    out
}
