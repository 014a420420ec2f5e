use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DeviceError, DeviceParams, Polarity, PULSE_WIDTH_UNIT};

/// Square programming pulse repeated `count` times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSpec {
    pub amplitude: f64,
    pub width: f64,
    pub count: usize,
}

impl PulseSpec {
    pub fn new(amplitude: f64, width: f64, count: usize) -> Result<Self, DeviceError> {
        if !(width > 0.0 && width.is_finite()) || count == 0 || !amplitude.is_finite() {
            return Err(DeviceError::InvalidPulse { width, count });
        }
        Ok(Self {
            amplitude,
            width,
            count,
        })
    }

    /// Flux magnitude contributed by one pulse if supra-threshold.
    pub fn flux_per_pulse(&self) -> f64 {
        self.amplitude.abs() * self.width / PULSE_WIDTH_UNIT
    }
}

/// One simulated memristor.
#[derive(Debug, Clone)]
pub struct Device {
    rs: f64,
    params: Arc<DeviceParams>,
    rng: ChaCha8Rng,
}

impl Device {
    /// `rs_init` is clamped to `[rs_low, rs_high]`. The seed only matters
    /// when a noise sigma is non-zero.
    pub fn new(params: Arc<DeviceParams>, rs_init: f64, seed: u64) -> Self {
        let rs = rs_init.clamp(params.rs_low, params.rs_high);
        Self {
            rs,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rs(&self) -> f64 {
        self.rs
    }

    pub fn params(&self) -> &DeviceParams {
        &self.params
    }

    /// Advances the device by one input sample of `v` volts lasting `dt` seconds.
    ///
    /// Inside `[v_th_neg, v_th_pos]` nothing happens. Otherwise the current RS
    /// is located on the polarity's curve and the flux `|v|·dt` (in pulse-width
    /// units) is added. Scaling the curve rate by `|v / (v - v_th)|` cancels the
    /// threshold, so the increment equals the un-thresholded one.
    pub fn apply_sample(&mut self, v: f64, dt: f64) {
        debug_assert!(dt > 0.0);
        let Some(polarity) = self.params.polarity_of(v) else {
            return;
        };
        let response = self.params.response(polarity);
        let dx = v.abs() * dt / PULSE_WIDTH_UNIT;
        let x = response.invert(self.rs);
        let mut target = response.eval((x + dx).min(response.x_sat()));
        // RS outside the curve's span (possible in raw mode) is never pulled
        // against the polarity's direction.
        target = match polarity {
            Polarity::Negative => target.max(self.rs),
            Polarity::Positive => target.min(self.rs),
        };
        let next = if self.params.write_noise_sigma > 0.0 {
            let eps: f64 = StandardNormal.sample(&mut self.rng);
            self.rs + (target - self.rs) * (1.0 + self.params.write_noise_sigma * eps)
        } else {
            target
        };
        self.rs = next.clamp(self.params.rs_low, self.params.rs_high);
    }

    /// Applies `spec.count` pulses, returning `(pulse index, rs)` after each
    /// (pulse indices start at 1).
    pub fn apply_pulse_train(&mut self, spec: &PulseSpec) -> Vec<(usize, f64)> {
        (1..=spec.count)
            .map(|k| {
                self.apply_sample(spec.amplitude, spec.width);
                (k, self.rs)
            })
            .collect()
    }

    /// Non-invasive RS measurement with relative read noise.
    pub fn read(&mut self) -> f64 {
        if self.params.read_noise_sigma > 0.0 {
            let eps: f64 = StandardNormal.sample(&mut self.rng);
            self.rs * (1.0 + self.params.read_noise_sigma * eps)
        } else {
            self.rs
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{rs_curve, PolarityCurve};

    fn fig1(rs: f64) -> Device {
        Device::new(Arc::new(DeviceParams::fig1()), rs, 0)
    }

    #[test]
    fn raw_state_beyond_curve_span_does_not_reverse() {
        let mut d = fig1(6000.0);
        d.apply_sample(-1.2, 100e-6);
        assert_eq!(d.rs(), 6000.0);
        let mut d = fig1(1500.0);
        d.apply_sample(0.8, 100e-6);
        assert_eq!(d.rs(), 1500.0);
    }

    #[test]
    fn read_amplitude_leaves_state() {
        let mut d = Device::new(Arc::new(DeviceParams::fig2c()), 3000.0, 1);
        d.apply_sample(0.5, 1e-3);
        assert_eq!(d.rs(), 3000.0);
        d.apply_sample(1.45, 1e-3);
        d.apply_sample(-1.65, 1e-3);
        assert_eq!(d.rs(), 3000.0);
        assert_eq!(d.read(), d.read());
    }

    #[test]
    fn constant_negative_train_matches_curve() {
        let mut d = fig1(3705.0);
        let spec = PulseSpec::new(-1.2, 100e-6, 200).unwrap();
        let trace = d.apply_pulse_train(&spec);
        let c = PolarityCurve::reset_reference(400.0);
        for (k, rs) in &trace {
            let want = rs_curve(1.2 * *k as f64, &c);
            assert!(((rs - want) / want).abs() < 1e-9, "k={k}: {rs} vs {want}");
        }
        assert!((trace.last().unwrap().1 - 5000.0).abs() < 5.0);
    }

    #[test]
    fn positive_train_decreases() {
        let mut d = fig1(4277.0);
        let trace = d.apply_pulse_train(&PulseSpec::new(0.8, 100e-6, 200).unwrap());
        assert!(trace.windows(2).all(|w| w[1].1 < w[0].1));
        assert!((trace.last().unwrap().1 - 2630.0).abs() < 10.0);
    }

    #[test]
    fn sub_threshold_train_is_flat() {
        let mut d = fig1(4000.0);
        let trace = d.apply_pulse_train(&PulseSpec::new(0.3, 100e-6, 1).unwrap());
        assert_eq!(trace, vec![(1, 4000.0)]);
    }

    #[test]
    fn pulse_spec_validation() {
        assert!(PulseSpec::new(1.0, 0.0, 1).is_err());
        assert!(PulseSpec::new(1.0, 1e-4, 0).is_err());
        assert_eq!(
            PulseSpec::new(-1.2, 100e-6, 3).unwrap().flux_per_pulse(),
            1.2
        );
    }

    #[test]
    fn read_mean_at_one_kiloohm() {
        let p = DeviceParams {
            rs_low: 500.0,
            ..DeviceParams::fig2d()
        }
        .with_noise(0.0, 0.01);
        let mut d = Device::new(Arc::new(p), 1000.0, 7);
        let mean = (0..10_000).map(|_| d.read()).sum::<f64>() / 10_000.0;
        assert!((mean - 1000.0).abs() < 10.0, "{mean}");
    }

    #[test]
    fn write_noise_only_touches_supra_threshold_samples() {
        let p = DeviceParams::fig2d().with_noise(0.2, 0.0);
        let mut d = Device::new(Arc::new(p), 3000.0, 3);
        for _ in 0..100 {
            d.apply_sample(0.9, 82e-6);
        }
        assert_eq!(d.rs(), 3000.0);
        d.apply_sample(-2.0, 82e-6);
        assert!(d.rs() != 3000.0);
        assert!(d.rs() >= 2000.0 && d.rs() <= 15000.0);
    }
}
