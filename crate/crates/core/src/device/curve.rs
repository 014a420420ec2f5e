use super::DeviceError;

/// Grid density used to verify monotonicity at construction.
const MONOTONE_CHECK_POINTS: usize = 4096;
const BISECTION_ITERATIONS: usize = 200;

/// Saturating RS response of one polarity:
/// `f(x) = a·exp(beta·x) + b·exp(gamma·x)` over flux magnitude `x ∈ [0, x_sat]`.
///
/// `x` is measured in volt·pulse-widths (see [`super::PULSE_WIDTH_UNIT`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarityCurve {
    a: f64,
    beta: f64,
    b: f64,
    gamma: f64,
    x_sat: f64,
    increasing: bool,
}

impl PolarityCurve {
    pub fn new(a: f64, beta: f64, b: f64, gamma: f64, x_sat: f64) -> Result<Self, DeviceError> {
        let bad = |reason: &str| DeviceError::InvalidCurve(reason.to_string());
        if ![a, beta, b, gamma, x_sat].iter().all(|v| v.is_finite()) {
            return Err(bad("coefficients must be finite"));
        }
        if x_sat <= 0.0 {
            return Err(bad("x_sat must be positive"));
        }
        let origin = a + b;
        if origin <= 0.0 {
            return Err(bad("f(0) = A + B must be positive"));
        }
        let eval = |x: f64| a * (beta * x).exp() + b * (gamma * x).exp();
        let end = eval(x_sat);
        if !end.is_finite() || end <= 0.0 {
            return Err(bad("f(x_sat) must be finite and positive"));
        }
        let increasing = end > origin;
        let mut prev = origin;
        for i in 1..=MONOTONE_CHECK_POINTS {
            let x = x_sat * i as f64 / MONOTONE_CHECK_POINTS as f64;
            let cur = eval(x);
            let ok = if increasing { cur > prev } else { cur < prev };
            if !ok {
                return Err(bad("curve is not strictly monotone on [0, x_sat]"));
            }
            prev = cur;
        }
        Ok(Self {
            a,
            beta,
            b,
            gamma,
            x_sat,
            increasing,
        })
    }

    /// RESET response fitted to the negative-polarity pulse train (3705 Ω at origin).
    pub fn reset_reference(x_sat: f64) -> Self {
        Self::new(4780.0, 1.878e-4, -1075.0, -1.04e-1, x_sat).expect("built-in curve is valid")
    }

    /// SET response fitted to the positive-polarity pulse train (4277 Ω at origin).
    pub fn set_reference(x_sat: f64) -> Self {
        Self::new(1301.0, -1.027e-1, 2976.0, -7.829e-4, x_sat).expect("built-in curve is valid")
    }

    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn x_sat(&self) -> f64 {
        self.x_sat
    }
    pub fn is_increasing(&self) -> bool {
        self.increasing
    }

    /// Evaluates the curve, clamping `x` into `[0, x_sat]`.
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.x_sat);
        self.a * (self.beta * x).exp() + self.b * (self.gamma * x).exp()
    }

    pub fn origin(&self) -> f64 {
        self.eval(0.0)
    }

    pub fn saturation(&self) -> f64 {
        self.eval(self.x_sat)
    }

    /// `(min, max)` of the curve over its domain.
    pub fn span(&self) -> (f64, f64) {
        let (o, s) = (self.origin(), self.saturation());
        if self.increasing {
            (o, s)
        } else {
            (s, o)
        }
    }

    /// Flux magnitude at which the curve reaches `rs`; `rs` outside the
    /// curve span is clamped to the nearest endpoint.
    pub fn invert(&self, rs: f64) -> f64 {
        let (origin, sat) = (self.origin(), self.saturation());
        let before_origin = if self.increasing {
            rs <= origin
        } else {
            rs >= origin
        };
        if before_origin {
            return 0.0;
        }
        let past_sat = if self.increasing {
            rs >= sat
        } else {
            rs <= sat
        };
        if past_sat {
            return self.x_sat;
        }
        let (mut lo, mut hi) = (0.0_f64, self.x_sat);
        for _ in 0..BISECTION_ITERATIONS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let below = self.eval(mid) < rs;
            if below == self.increasing {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Free-function form of [`PolarityCurve::eval`].
pub fn rs_curve(x: f64, curve: &PolarityCurve) -> f64 {
    curve.eval(x)
}

/// Free-function form of [`PolarityCurve::invert`].
pub fn invert_rs_curve(rs: f64, curve: &PolarityCurve) -> f64 {
    curve.invert(rs)
}

/// A polarity curve under an affine RS rescaling `scale·f(x) + shift`.
#[derive(Debug, Clone, Copy)]
pub struct Response<'a> {
    curve: &'a PolarityCurve,
    scale: f64,
    shift: f64,
}

impl<'a> Response<'a> {
    pub fn raw(curve: &'a PolarityCurve) -> Self {
        Self {
            curve,
            scale: 1.0,
            shift: 0.0,
        }
    }

    /// Maps the curve span onto `[lo, hi]`, keeping its direction.
    pub fn normalized(curve: &'a PolarityCurve, lo: f64, hi: f64) -> Self {
        let (cmin, cmax) = curve.span();
        let scale = (hi - lo) / (cmax - cmin);
        Self {
            curve,
            scale,
            shift: lo - scale * cmin,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.scale * self.curve.eval(x) + self.shift
    }

    pub fn invert(&self, rs: f64) -> f64 {
        self.curve.invert((rs - self.shift) / self.scale)
    }

    pub fn x_sat(&self) -> f64 {
        self.curve.x_sat()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn formula(x: f64, a: f64, beta: f64, b: f64, gamma: f64) -> f64 {
        a * (beta * x).exp() + b * (gamma * x).exp()
    }

    #[test]
    fn origin_is_a_plus_b() {
        let c = PolarityCurve::reset_reference(400.0);
        assert_eq!(rs_curve(0.0, &c), 3705.0);
        assert_eq!(PolarityCurve::set_reference(400.0).origin(), 4277.0);
    }

    #[test]
    fn table_values_after_two_hundred_pulses() {
        // Direct evaluation: f(240) = 5000.373..., f(160) = 2625.617...
        let c = PolarityCurve::reset_reference(400.0);
        let v = rs_curve(240.0, &c);
        assert!((v - 5_000.373_184_256_74).abs() < 1e-6, "{v}");
        assert!((v - 5000.0).abs() < 5.0);
        let d = PolarityCurve::set_reference(400.0);
        let v = rs_curve(160.0, &d);
        assert!((v - 2_625.617_622_608_53).abs() < 1e-6, "{v}");
        assert!((v - 2630.0).abs() < 10.0);
    }

    #[test]
    fn eval_clamps_beyond_saturation() {
        let c = PolarityCurve::reset_reference(400.0);
        assert_eq!(c.eval(1000.0), c.eval(400.0));
        assert_eq!(c.eval(-5.0), c.eval(0.0));
        assert_eq!(
            c.eval(400.0),
            formula(400.0, 4780.0, 1.878e-4, -1075.0, -1.04e-1)
        );
    }

    #[test]
    fn inversion_round_trips_and_clamps() {
        let c = PolarityCurve::reset_reference(400.0);
        assert_eq!(invert_rs_curve(3705.0, &c), 0.0);
        assert!((invert_rs_curve(rs_curve(100.0, &c), &c) - 100.0).abs() < 1e-6);
        assert_eq!(invert_rs_curve(1000.0, &c), 0.0);
        assert_eq!(invert_rs_curve(1e6, &c), 400.0);
        let d = PolarityCurve::set_reference(400.0);
        assert_eq!(d.invert(9000.0), 0.0);
        assert_eq!(d.invert(10.0), 400.0);
        let rs = d.eval(37.5);
        assert!(((d.eval(d.invert(rs)) - rs) / rs).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_monotone_or_nonpositive() {
        // Rising then falling: a·e^{0.01x} − e^{0.03x}
        assert!(PolarityCurve::new(100.0, 0.01, -1.0, 0.03, 400.0).is_err());
        assert!(PolarityCurve::new(-10.0, 0.0, 5.0, 0.0, 400.0).is_err());
        assert!(PolarityCurve::new(1.0, 0.0, 1.0, 0.0, 400.0).is_err());
        assert!(PolarityCurve::new(1.0, f64::NAN, 1.0, 0.1, 400.0).is_err());
        assert!(PolarityCurve::new(1.0, 0.1, 1.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn normalized_response_spans_bounds() {
        let c = PolarityCurve::reset_reference(400.0);
        let r = Response::normalized(&c, 2000.0, 15000.0);
        assert!((r.eval(0.0) - 2000.0).abs() < 1e-9);
        assert!((r.eval(400.0) - 15000.0).abs() < 1e-9);
        let d = PolarityCurve::set_reference(400.0);
        let r = Response::normalized(&d, 2000.0, 15000.0);
        assert!((r.eval(0.0) - 15000.0).abs() < 1e-9);
        assert!((r.eval(400.0) - 2000.0).abs() < 1e-9);
        assert!((r.invert(r.eval(12.0)) - 12.0).abs() < 1e-6);
    }
}
