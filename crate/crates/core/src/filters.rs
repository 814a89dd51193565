//! Second-order Butterworth low-pass filters and filtered differentiation.
//!
//! Every signal that enters an incremental relation must pass through the
//! same filter so the relation keeps holding on the filtered signals.

use crate::error::FilterError;

/// Biquad section, direct form II transposed, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
    s1: f64,
    s2: f64,
    primed: bool,
}

/// Butterworth low-pass via the pre-warped bilinear transform.
pub fn butter2_design(fc: f64, fs: f64) -> Result<Biquad, FilterError> {
    let nyquist = fs / 2.0;
    if !(fc > 0.0 && fc < nyquist) || !fs.is_finite() {
        return Err(FilterError::InvalidCutoff { fc, nyquist });
    }
    let k = (std::f64::consts::PI * fc / fs).tan();
    let k2 = k * k;
    let sqrt2 = std::f64::consts::SQRT_2;
    let norm = 1.0 / (1.0 + sqrt2 * k + k2);
    let b0 = k2 * norm;
    Ok(Biquad {
        b0,
        b1: 2.0 * b0,
        b2: b0,
        a1: 2.0 * (k2 - 1.0) * norm,
        a2: (1.0 - sqrt2 * k + k2) * norm,
        s1: 0.0,
        s2: 0.0,
        primed: false,
    })
}

impl Biquad {
    /// Filter one sample. The first sample seeds the state to its own steady
    /// state so the output starts without a step transient.
    pub fn step(&mut self, x: f64) -> f64 {
        if !self.primed {
            self.prime(x);
        }
        let y = self.b0 * x + self.s1;
        self.s1 = self.b1 * x - self.a1 * y + self.s2;
        self.s2 = self.b2 * x - self.a2 * y;
        y
    }

    /// Set the state to the steady state for a constant input `x`.
    pub fn prime(&mut self, x: f64) {
        self.s2 = (self.b2 - self.a2) * x;
        self.s1 = (self.b1 - self.a1) * x + self.s2;
        self.primed = true;
    }

    /// Start from zero state instead of priming on the first sample.
    pub fn zero_state(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
        self.primed = true;
    }

    pub fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
        self.primed = false;
    }

    pub fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// |H(e^{jω})| at `f` Hz.
    pub fn magnitude_at(&self, f: f64, fs: f64) -> f64 {
        let w = std::f64::consts::TAU * f / fs;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (self.b0 + self.b1 * c1 + self.b2 * c2, self.b1 * s1 + self.b2 * s2);
        let den = (1.0 + self.a1 * c1 + self.a2 * c2, self.a1 * s1 + self.a2 * s2);
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }

    /// Pole radii of the denominator.
    pub fn pole_magnitudes(&self) -> [f64; 2] {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc < 0.0 {
            let r = self.a2.sqrt();
            [r, r]
        } else {
            let s = disc.sqrt();
            [((-self.a1 + s) / 2.0).abs(), ((-self.a1 - s) / 2.0).abs()]
        }
    }
}

/// Backward difference of a filtered signal.
#[derive(Debug, Clone, Copy)]
pub struct FilteredDifferentiator {
    filter: Biquad,
    prev: Option<f64>,
    dt: f64,
}

impl FilteredDifferentiator {
    pub fn new(filter: Biquad, dt: f64) -> Self {
        assert!(dt > 0.0, "dt must be positive");
        Self { filter, prev: None, dt }
    }

    /// Returns `(filtered value, rate)`.
    pub fn step(&mut self, x: f64) -> (f64, f64) {
        let y = self.filter.step(x);
        let rate = match self.prev {
            Some(p) => (y - p) / self.dt,
            None => 0.0,
        };
        self.prev = Some(y);
        (y, rate)
    }
}

/// Filter `x` then difference it against the previous filtered sample.
pub fn diff_filtered(f: &mut FilteredDifferentiator, x: f64) -> f64 {
    f.step(x).1
}

/// `N` channels sharing one coefficient set.
#[derive(Debug, Clone, Copy)]
pub struct FilterBank<const N: usize> {
    filters: [Biquad; N],
}

impl<const N: usize> FilterBank<N> {
    pub fn new(prototype: Biquad) -> Self {
        let mut p = prototype;
        p.reset();
        Self { filters: [p; N] }
    }

    pub fn step(&mut self, x: &[f64; N]) -> [f64; N] {
        let mut out = [0.0; N];
        for ((o, f), xi) in out.iter_mut().zip(self.filters.iter_mut()).zip(x) {
            *o = f.step(*xi);
        }
        out
    }

    pub fn prime(&mut self, x: &[f64; N]) {
        for (f, xi) in self.filters.iter_mut().zip(x) {
            f.prime(*xi);
        }
    }
}

/// `N` filtered differentiators sharing one coefficient set.
#[derive(Debug, Clone, Copy)]
pub struct DiffBank<const N: usize> {
    bank: FilterBank<N>,
    prev: Option<[f64; N]>,
    dt: f64,
}

impl<const N: usize> DiffBank<N> {
    pub fn new(prototype: Biquad, dt: f64) -> Self {
        assert!(dt > 0.0, "dt must be positive");
        Self {
            bank: FilterBank::new(prototype),
            prev: None,
            dt,
        }
    }

    /// Returns `(filtered values, rates)`.
    pub fn step(&mut self, x: &[f64; N]) -> ([f64; N], [f64; N]) {
        let y = self.bank.step(x);
        let mut rate = [0.0; N];
        if let Some(prev) = self.prev {
            for i in 0..N {
                rate[i] = (y[i] - prev[i]) / self.dt;
            }
        }
        self.prev = Some(y);
        (y, rate)
    }
}

/// Cutoffs of the two filter groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterCutoffs {
    pub control_hz: f64,
    pub ident_hz: f64,
    pub sample_rate_hz: f64,
}

impl Default for FilterCutoffs {
    fn default() -> Self {
        Self {
            control_hz: 15.0,
            ident_hz: 20.0,
            sample_rate_hz: 2000.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Direct substitution s = c (1 - z⁻¹)/(1 + z⁻¹) into
    /// H(s) = wc² / (s² + √2 wc s + wc²), c = wc / tan(π fc / fs).
    fn bilinear_oracle(fc: f64, fs: f64) -> [f64; 5] {
        let wc = std::f64::consts::TAU * fc;
        let c = wc / (std::f64::consts::PI * fc / fs).tan();
        // numerator wc² (1 + z⁻¹)², denominator c²(1-z⁻¹)² + √2 wc c (1-z⁻¹)(1+z⁻¹) + wc² (1+z⁻¹)²
        let r2 = std::f64::consts::SQRT_2;
        let d0 = c * c + r2 * wc * c + wc * wc;
        let d1 = -2.0 * c * c + 2.0 * wc * wc;
        let d2 = c * c - r2 * wc * c + wc * wc;
        let n = wc * wc;
        [n / d0, 2.0 * n / d0, n / d0, d1 / d0, d2 / d0]
    }

    #[test]
    fn coefficients_match_bilinear_oracle() {
        for (fc, fs) in [(15.0, 2000.0), (20.0, 2000.0), (300.0, 2000.0)] {
            let f = butter2_design(fc, fs).unwrap();
            let o = bilinear_oracle(fc, fs);
            for (a, b) in [f.b0, f.b1, f.b2, f.a1, f.a2].iter().zip(o) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            assert!((f.dc_gain() - 1.0).abs() < 1e-6);
            assert!(f.pole_magnitudes().iter().all(|r| *r < 1.0));
        }
    }

    #[test]
    fn minus_three_db_at_cutoff() {
        let f = butter2_design(20.0, 2000.0).unwrap();
        let db = 20.0 * f.magnitude_at(20.0, 2000.0).log10();
        assert!((db + 3.0103).abs() < 0.05, "{db}");
    }

    #[test]
    fn near_nyquist_cutoff_passes_low_frequencies() {
        let f = butter2_design(999.0, 2000.0).unwrap();
        assert!((f.dc_gain() - 1.0).abs() < 1e-6);
        assert!((f.magnitude_at(10.0, 2000.0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn cutoff_outside_band_rejected() {
        assert!(butter2_design(0.0, 2000.0).is_err());
        assert!(butter2_design(1000.0, 2000.0).is_err());
        assert!(butter2_design(-1.0, 2000.0).is_err());
    }

    #[test]
    fn constant_input_settles() {
        let mut f = butter2_design(15.0, 2000.0).unwrap();
        f.zero_state();
        let n = (10.0 / 15.0 * 2000.0) as usize;
        let mut y = 0.0;
        for _ in 0..n {
            y = f.step(3.5);
        }
        assert!((y - 3.5).abs() < 1e-6);
    }

    #[test]
    fn first_sample_priming_is_step_free() {
        let mut f = butter2_design(15.0, 2000.0).unwrap();
        for _ in 0..10 {
            assert_relative_eq!(f.step(-2.25), -2.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let mut f = butter2_design(15.0, 2000.0).unwrap();
        f.zero_state();
        for _ in 0..100 {
            assert_eq!(f.step(0.0), 0.0);
        }
    }

    #[test]
    fn scaling_is_linear() {
        let mut a = butter2_design(20.0, 2000.0).unwrap();
        let mut b = a;
        a.zero_state();
        b.zero_state();
        for k in 0..500 {
            let x = (k as f64 * 0.37).sin() * 10.0 + (k % 7) as f64;
            assert!((b.step(2.0 * x) - 2.0 * a.step(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn ramp_slope_recovered() {
        let dt = 0.0005;
        let mut d = FilteredDifferentiator::new(butter2_design(20.0, 2000.0).unwrap(), dt);
        let mut rate = 0.0;
        for k in 0..2000 {
            rate = diff_filtered(&mut d, 7.0 * k as f64 * dt);
        }
        assert!((rate - 7.0).abs() < 0.07);
    }

    #[test]
    fn constant_has_zero_rate() {
        let mut d = FilteredDifferentiator::new(butter2_design(20.0, 2000.0).unwrap(), 0.0005);
        for _ in 0..100 {
            assert_eq!(diff_filtered(&mut d, 4.0), 0.0);
        }
    }

    #[test]
    fn slow_sine_rate_amplitude() {
        let dt = 0.0005;
        let (freq, amp) = (1.0, 2.0);
        let mut d = FilteredDifferentiator::new(butter2_design(20.0, 2000.0).unwrap(), dt);
        let mut peak: f64 = 0.0;
        for k in 0..8000 {
            let t = k as f64 * dt;
            let r = diff_filtered(&mut d, amp * (std::f64::consts::TAU * freq * t).sin());
            if t > 2.0 {
                peak = peak.max(r.abs());
            }
        }
        let expected = std::f64::consts::TAU * freq * amp;
        assert!((peak - expected).abs() / expected < 0.02, "{peak}");
    }

    #[test]
    fn time_invariance() {
        let mut a = butter2_design(15.0, 2000.0).unwrap();
        let mut b = a;
        a.zero_state();
        b.zero_state();
        let x: Vec<f64> = (0..300).map(|k| ((k * k) % 17) as f64 - 8.0).collect();
        let delay = 13;
        let ya: Vec<f64> = x.iter().map(|v| a.step(*v)).collect();
        let yb: Vec<f64> = std::iter::repeat_n(0.0, delay)
            .chain(x.iter().copied())
            .map(|v| b.step(v))
            .collect();
        for k in 0..x.len() {
            assert!((ya[k] - yb[k + delay]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn filtered_relation_survives(c in proptest::collection::vec(-5.0f64..5.0, 3), seed in 0u64..1000) {
            let mut bank = FilterBank::<4>::new(butter2_design(15.0, 2000.0).unwrap());
            for k in 0..400u64 {
                let t = (k + seed) as f64;
                let x = [(t * 0.013).sin() * 100.0, (t * 0.002).cos(), ((k * 31 + seed) % 11) as f64];
                let y = c[0] * x[0] + c[1] * x[1] + c[2] * x[2];
                let f = bank.step(&[x[0], x[1], x[2], y]);
                let rel = c[0] * f[0] + c[1] * f[1] + c[2] * f[2];
                prop_assert!((f[3] - rel).abs() <= 1e-9 * (1.0 + f[3].abs()));
            }
        }
    }
}
