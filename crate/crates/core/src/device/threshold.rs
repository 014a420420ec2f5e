use super::{Device, DeviceError, Polarity, PulseSpec, PULSE_WIDTH_UNIT};

/// Staircase protocol: pulse trains of growing magnitude, alternating polarity.
#[derive(Debug, Clone, PartialEq)]
pub struct StaircaseProtocol {
    /// Signed amplitudes in application order.
    pub amplitude_grid: Vec<f64>,
    pub pulses_per_level: usize,
    pub pulse_width: f64,
    /// Minimum |ΔRS/RS| over a level's train that counts as switching.
    pub noise_floor: f64,
}

impl StaircaseProtocol {
    /// `+step, −step, +2·step, −2·step, …` up to `max_magnitude`.
    pub fn alternating(
        step: f64,
        max_magnitude: f64,
        pulses_per_level: usize,
        noise_floor: f64,
    ) -> Self {
        let levels = (max_magnitude / step + 1e-9).floor() as usize;
        let amplitude_grid = (1..=levels)
            .flat_map(|k| {
                // Rounded to the grid's decimal resolution to avoid 1.4500000000000002.
                let m = round_to_step(k as f64 * step, step);
                [m, -m]
            })
            .collect();
        Self {
            amplitude_grid,
            pulses_per_level,
            pulse_width: PULSE_WIDTH_UNIT,
            noise_floor,
        }
    }
}

fn round_to_step(v: f64, step: f64) -> f64 {
    let digits = (-step.log10()).ceil().max(0.0) as i32 + 2;
    let scale = 10f64.powi(digits);
    (v * scale).round() / scale
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaircaseRead {
    pub level: usize,
    pub amplitude: f64,
    /// 0 for the read taken before the level's first pulse.
    pub pulse: usize,
    pub rs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaircaseResult {
    pub v_th_pos: Option<f64>,
    pub v_th_neg: Option<f64>,
    pub reads: Vec<StaircaseRead>,
}

impl StaircaseResult {
    pub fn thresholds(&self) -> Result<(f64, f64), DeviceError> {
        let pos = self
            .v_th_pos
            .ok_or(DeviceError::ThresholdNotFound(Polarity::Positive))?;
        let neg = self
            .v_th_neg
            .ok_or(DeviceError::ThresholdNotFound(Polarity::Negative))?;
        Ok((pos, neg))
    }
}

/// Runs the staircase on `device`, reading after every pulse. The estimate
/// per polarity is the first amplitude whose train moved RS by more than the
/// floor, an upper bound within one grid step. Levels of a polarity stop
/// being applied once its threshold is found.
pub fn extract_thresholds(
    device: &mut Device,
    protocol: &StaircaseProtocol,
) -> Result<StaircaseResult, DeviceError> {
    if protocol.pulses_per_level == 0 {
        return Err(DeviceError::InvalidPulse {
            width: protocol.pulse_width,
            count: 0,
        });
    }
    let mut result = StaircaseResult {
        v_th_pos: None,
        v_th_neg: None,
        reads: Vec::new(),
    };
    for (level, &amplitude) in protocol.amplitude_grid.iter().enumerate() {
        if amplitude == 0.0 {
            continue;
        }
        let slot = if amplitude > 0.0 {
            &mut result.v_th_pos
        } else {
            &mut result.v_th_neg
        };
        if slot.is_some() {
            continue;
        }
        let spec = PulseSpec::new(amplitude, protocol.pulse_width, protocol.pulses_per_level)?;
        let before = device.read();
        result.reads.push(StaircaseRead {
            level,
            amplitude,
            pulse: 0,
            rs: before,
        });
        let mut max_change: f64 = 0.0;
        for pulse in 1..=spec.count {
            device.apply_sample(spec.amplitude, spec.width);
            let rs = device.read();
            max_change = max_change.max(((rs - before) / before).abs());
            result.reads.push(StaircaseRead {
                level,
                amplitude,
                pulse,
                rs,
            });
        }
        if max_change > protocol.noise_floor {
            *slot = Some(amplitude);
        }
        if result.v_th_pos.is_some() && result.v_th_neg.is_some() {
            break;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::device::DeviceParams;

    #[test]
    fn grid_alternates_and_rounds() {
        let p = StaircaseProtocol::alternating(0.05, 0.2, 3, 1e-4);
        assert_eq!(
            p.amplitude_grid,
            vec![0.05, -0.05, 0.1, -0.1, 0.15, -0.15, 0.2, -0.2]
        );
        let p = StaircaseProtocol::alternating(0.05, 2.0, 3, 1e-4);
        assert!(p.amplitude_grid.contains(&1.45));
        assert!(p.amplitude_grid.contains(&-1.65));
    }

    #[test]
    fn brackets_fig2c_thresholds() {
        let mut d = Device::new(Arc::new(DeviceParams::fig2c()), 8000.0, 0);
        let p = StaircaseProtocol::alternating(0.05, 2.5, 5, 1e-6);
        let (pos, neg) = extract_thresholds(&mut d, &p)
            .unwrap()
            .thresholds()
            .unwrap();
        assert!((1.45..=1.50).contains(&pos), "{pos}");
        assert!((-1.70..=-1.65).contains(&neg), "{neg}");
    }

    #[test]
    fn sub_threshold_grid_not_found() {
        let mut d = Device::new(Arc::new(DeviceParams::fig2c()), 8000.0, 0);
        let p = StaircaseProtocol::alternating(0.05, 1.0, 5, 1e-6);
        let r = extract_thresholds(&mut d, &p).unwrap();
        assert!(matches!(
            r.thresholds(),
            Err(DeviceError::ThresholdNotFound(Polarity::Positive))
        ));
        assert_eq!(r.reads.len(), 40 * 6);
        assert!(r.reads.iter().all(|s| s.rs == 8000.0));
    }
}
