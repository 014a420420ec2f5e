use std::fmt;
use std::str::FromStr;

use crate::kv::{KvError, KvMap};

use super::curve::{PolarityCurve, Response};
use super::{DeviceError, Polarity};

/// Default flux-magnitude abscissa at which curves saturate (volt·pulse-widths).
pub const DEFAULT_X_SAT: f64 = 400.0;

/// Sub-threshold amplitude of the non-invasive read pulse.
pub const DEFAULT_READ_VOLTAGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveMode {
    /// Curves used verbatim.
    Raw,
    /// Each curve's span rescaled onto `[rs_low, rs_high]`.
    Normalized,
}

impl fmt::Display for CurveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveMode::Raw => "raw",
            CurveMode::Normalized => "normalized",
        })
    }
}

impl FromStr for CurveMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(CurveMode::Raw),
            "normalized" => Ok(CurveMode::Normalized),
            other => Err(format!("unknown curve mode `{other}`")),
        }
    }
}

/// Immutable per-device behavioral parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceParams {
    /// RS-increasing (RESET) response, selected when `v < v_th_neg`.
    pub curve_neg: PolarityCurve,
    /// RS-decreasing (SET) response, selected when `v > v_th_pos`.
    pub curve_pos: PolarityCurve,
    pub v_th_pos: f64,
    pub v_th_neg: f64,
    pub rs_low: f64,
    pub rs_high: f64,
    /// Relative Gaussian jitter applied to every supra-threshold ΔRS.
    pub write_noise_sigma: f64,
    /// Relative Gaussian jitter applied to every read.
    pub read_noise_sigma: f64,
    pub mode: CurveMode,
}

pub const PROFILE_NAMES: [&str; 3] = ["fig1", "fig2c", "fig2d"];

const PROFILE_KEYS: &[&str] = &[
    "base",
    "neg_a",
    "neg_beta",
    "neg_b",
    "neg_gamma",
    "neg_x_sat",
    "pos_a",
    "pos_beta",
    "pos_b",
    "pos_gamma",
    "pos_x_sat",
    "v_th_pos",
    "v_th_neg",
    "rs_low",
    "rs_high",
    "write_noise_sigma",
    "read_noise_sigma",
    "mode",
];

impl DeviceParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |m: &str| Err(DeviceError::InvalidParams(m.to_string()));
        if !(self.rs_low > 0.0 && self.rs_low < self.rs_high) {
            return bad("require 0 < rs_low < rs_high");
        }
        if !(self.v_th_neg < 0.0 && self.v_th_pos > 0.0) {
            return bad("require v_th_neg < 0 < v_th_pos");
        }
        if !self.curve_neg.is_increasing() {
            return bad("negative-polarity curve must increase RS");
        }
        if self.curve_pos.is_increasing() {
            return bad("positive-polarity curve must decrease RS");
        }
        if !(self.write_noise_sigma >= 0.0 && self.read_noise_sigma >= 0.0) {
            return bad("noise sigmas must be non-negative");
        }
        Ok(())
    }

    /// Raw fitted curves. Thresholds admit the +0.8 V / −1.2 V writes and
    /// reject the 0.5 V read.
    pub fn fig1() -> Self {
        Self {
            curve_neg: PolarityCurve::reset_reference(DEFAULT_X_SAT),
            curve_pos: PolarityCurve::set_reference(DEFAULT_X_SAT),
            v_th_pos: 0.7,
            v_th_neg: -0.9,
            rs_low: 1000.0,
            rs_high: 15000.0,
            write_noise_sigma: 0.0,
            read_noise_sigma: 0.0,
            mode: CurveMode::Raw,
        }
    }

    /// Normalized device with the staircase-measured thresholds +1.45 / −1.65 V.
    pub fn fig2c() -> Self {
        Self {
            v_th_pos: 1.45,
            v_th_neg: -1.65,
            rs_low: 2000.0,
            rs_high: 15000.0,
            mode: CurveMode::Normalized,
            ..Self::fig1()
        }
    }

    /// Normalized device with thresholds +1.2 / −1.5 V.
    pub fn fig2d() -> Self {
        Self {
            v_th_pos: 1.2,
            v_th_neg: -1.5,
            ..Self::fig2c()
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "fig1" => Some(Self::fig1()),
            "fig2c" => Some(Self::fig2c()),
            "fig2d" => Some(Self::fig2d()),
            _ => None,
        }
    }

    pub fn with_noise(mut self, write_sigma: f64, read_sigma: f64) -> Self {
        self.write_noise_sigma = write_sigma;
        self.read_noise_sigma = read_sigma;
        self
    }

    /// Response used for a sample of polarity `p` under the configured mode.
    pub fn response(&self, p: Polarity) -> Response<'_> {
        let curve = match p {
            Polarity::Negative => &self.curve_neg,
            Polarity::Positive => &self.curve_pos,
        };
        match self.mode {
            CurveMode::Raw => Response::raw(curve),
            CurveMode::Normalized => Response::normalized(curve, self.rs_low, self.rs_high),
        }
    }

    /// Polarity that `v` drives, or `None` when it sits inside the dead band.
    pub fn polarity_of(&self, v: f64) -> Option<Polarity> {
        if v > self.v_th_pos {
            Some(Polarity::Positive)
        } else if v < self.v_th_neg {
            Some(Polarity::Negative)
        } else {
            None
        }
    }

    pub fn min_threshold(&self) -> f64 {
        self.v_th_pos.min(-self.v_th_neg)
    }

    pub fn max_threshold(&self) -> f64 {
        self.v_th_pos.max(-self.v_th_neg)
    }

    /// Read amplitude must stay strictly inside both thresholds.
    pub fn check_read_voltage(&self, v_read: f64) -> Result<(), DeviceError> {
        if v_read.abs() < self.min_threshold() {
            Ok(())
        } else {
            Err(DeviceError::InvasiveRead {
                v_read,
                limit: self.min_threshold(),
            })
        }
    }

    /// Builds params from a profile file. `base=<builtin>` seeds the values,
    /// remaining keys override them.
    pub fn from_kv(map: &KvMap) -> Result<Self, DeviceError> {
        map.ensure_known(PROFILE_KEYS)?;
        let base_name: String = map.get_or("base", "fig2d".to_string())?;
        let base = Self::builtin(&base_name)
            .ok_or_else(|| DeviceError::UnknownProfile(base_name.clone()))?;
        let curve = |prefix: &str, c: &PolarityCurve| -> Result<PolarityCurve, DeviceError> {
            let get = |k: &str, d: f64| -> Result<f64, KvError> {
                map.get_or(&format!("{prefix}_{k}"), d)
            };
            PolarityCurve::new(
                get("a", c.a())?,
                get("beta", c.beta())?,
                get("b", c.b())?,
                get("gamma", c.gamma())?,
                get("x_sat", c.x_sat())?,
            )
        };
        let params = Self {
            curve_neg: curve("neg", &base.curve_neg)?,
            curve_pos: curve("pos", &base.curve_pos)?,
            v_th_pos: map.get_or("v_th_pos", base.v_th_pos)?,
            v_th_neg: map.get_or("v_th_neg", base.v_th_neg)?,
            rs_low: map.get_or("rs_low", base.rs_low)?,
            rs_high: map.get_or("rs_high", base.rs_high)?,
            write_noise_sigma: map.get_or("write_noise_sigma", base.write_noise_sigma)?,
            read_noise_sigma: map.get_or("read_noise_sigma", base.read_noise_sigma)?,
            mode: match map.raw("mode") {
                Some(m) => m.parse().map_err(|_| KvError::BadValue {
                    line: map.line_of("mode"),
                    key: "mode".into(),
                    value: m.into(),
                })?,
                None => base.mode,
            },
        };
        params.validate()?;
        Ok(params)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        for (prefix, c) in [("neg", &self.curve_neg), ("pos", &self.curve_pos)] {
            m.set(format!("{prefix}_a"), c.a());
            m.set(format!("{prefix}_beta"), c.beta());
            m.set(format!("{prefix}_b"), c.b());
            m.set(format!("{prefix}_gamma"), c.gamma());
            m.set(format!("{prefix}_x_sat"), c.x_sat());
        }
        m.set("v_th_pos", self.v_th_pos);
        m.set("v_th_neg", self.v_th_neg);
        m.set("rs_low", self.rs_low);
        m.set("rs_high", self.rs_high);
        m.set("write_noise_sigma", self.write_noise_sigma);
        m.set("read_noise_sigma", self.read_noise_sigma);
        m.set("mode", self.mode);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_profiles_validate() {
        for name in PROFILE_NAMES {
            let p = DeviceParams::builtin(name).unwrap();
            p.validate().unwrap();
            p.check_read_voltage(DEFAULT_READ_VOLTAGE).unwrap();
        }
        assert!(DeviceParams::builtin("fig9").is_none());
    }

    #[test]
    fn fig1_admits_table_writes() {
        let p = DeviceParams::fig1();
        assert_eq!(p.polarity_of(-1.2), Some(Polarity::Negative));
        assert_eq!(p.polarity_of(0.8), Some(Polarity::Positive));
        assert_eq!(p.polarity_of(0.5), None);
    }

    #[test]
    fn threshold_boundary_is_dead_band() {
        let p = DeviceParams::fig2c();
        assert_eq!(p.polarity_of(1.45), None);
        assert_eq!(p.polarity_of(-1.65), None);
        assert_eq!(p.polarity_of(1.450001), Some(Polarity::Positive));
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = DeviceParams::fig2d();
        p.rs_low = 20000.0;
        assert!(p.validate().is_err());
        let mut p = DeviceParams::fig2d();
        p.v_th_neg = 0.3;
        assert!(p.validate().is_err());
        let mut p = DeviceParams::fig2d();
        std::mem::swap(&mut p.curve_neg, &mut p.curve_pos);
        assert!(p.validate().is_err());
        assert!(DeviceParams::fig2c().check_read_voltage(1.5).is_err());
    }

    #[test]
    fn profile_file_round_trip() {
        let p = DeviceParams::fig2c().with_noise(0.01, 0.002);
        let back = DeviceParams::from_kv(&p.to_kv()).unwrap();
        assert_eq!(back, p);
        let custom = KvMap::parse("base=fig1\nv_th_pos=0.75\n").unwrap();
        let c = DeviceParams::from_kv(&custom).unwrap();
        assert_eq!(c.v_th_pos, 0.75);
        assert_eq!(c.mode, CurveMode::Raw);
        let unknown = KvMap::parse("v_th=1\n").unwrap();
        assert!(DeviceParams::from_kv(&unknown).is_err());
    }
}
