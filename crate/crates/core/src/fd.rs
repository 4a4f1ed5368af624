//! Triangular fundamental diagram.
//!
//! Flow is `v_f * rho` on the free branch and `w_c * (rho_m - rho)` on the
//! congested branch, where `w_c` is the magnitude of the backward wave speed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CLOSURE_RTOL: f64 = 1e-9;

/// Triangular flow-density relation. Immutable after construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FdParams", into = "FdParams")]
pub struct FundamentalDiagram {
    v_f: f64,
    w_c: f64,
    rho_c: f64,
    rho_m: f64,
    q_m: f64,
}

/// Wire form of the diagram. `q_m` is optional and checked when present.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdParams {
    pub v_f: f64,
    pub w_c: f64,
    pub rho_c: f64,
    pub rho_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_m: Option<f64>,
}

impl TryFrom<FdParams> for FundamentalDiagram {
    type Error = Error;

    fn try_from(p: FdParams) -> Result<Self> {
        let fd = FundamentalDiagram::new(p.v_f, p.w_c, p.rho_c, p.rho_m)?;
        if let Some(q) = p.q_m {
            if (q - fd.q_m).abs() > CLOSURE_RTOL * fd.q_m.max(1.0) {
                return Err(Error::Config(format!(
                    "q_m = {q} disagrees with v_f * rho_c = {}",
                    fd.q_m
                )));
            }
        }
        Ok(fd)
    }
}

impl From<FundamentalDiagram> for FdParams {
    fn from(fd: FundamentalDiagram) -> Self {
        FdParams {
            v_f: fd.v_f,
            w_c: fd.w_c,
            rho_c: fd.rho_c,
            rho_m: fd.rho_m,
            q_m: Some(fd.q_m),
        }
    }
}

impl FundamentalDiagram {
    /// Builds the diagram and checks that the two branches meet at `rho_c`.
    pub fn new(v_f: f64, w_c: f64, rho_c: f64, rho_m: f64) -> Result<Self> {
        let finite = [v_f, w_c, rho_c, rho_m].iter().all(|v| v.is_finite());
        if !finite || v_f <= 0.0 || w_c <= 0.0 || rho_c <= 0.0 || rho_c >= rho_m {
            return Err(Error::Config(format!(
                "invalid diagram: v_f={v_f}, w_c={w_c}, rho_c={rho_c}, rho_m={rho_m}"
            )));
        }
        let q_m = v_f * rho_c;
        let q_cong = w_c * (rho_m - rho_c);
        if (q_m - q_cong).abs() > CLOSURE_RTOL * q_m {
            return Err(Error::Config(format!(
                "triangle does not close: v_f*rho_c = {q_m}, w_c*(rho_m-rho_c) = {q_cong}"
            )));
        }
        Ok(FundamentalDiagram { v_f, w_c, rho_c, rho_m, q_m })
    }

    /// Urban two-lane segment: 14 m/s, 2.8 m/s, 0.04 and 0.24 veh/m.
    pub fn urban() -> Self {
        FundamentalDiagram::new(14.0, 2.8, 0.04, 0.24).expect("valid constants")
    }

    pub fn v_f(&self) -> f64 {
        self.v_f
    }

    pub fn w_c(&self) -> f64 {
        self.w_c
    }

    pub fn rho_c(&self) -> f64 {
        self.rho_c
    }

    pub fn rho_m(&self) -> f64 {
        self.rho_m
    }

    pub fn q_m(&self) -> f64 {
        self.q_m
    }

    fn check_density(&self, rho: f64) -> Result<()> {
        if !(0.0..=self.rho_m).contains(&rho) {
            return Err(Error::Domain(format!(
                "density {rho} outside [0, {}]",
                self.rho_m
            )));
        }
        Ok(())
    }

    pub fn flow(&self, rho: f64) -> Result<f64> {
        self.check_density(rho)?;
        Ok(self.flow_clamped(rho))
    }

    /// Flow with the density clamped into `[0, rho_m]`.
    pub fn flow_clamped(&self, rho: f64) -> f64 {
        let rho = rho.clamp(0.0, self.rho_m);
        if rho <= self.rho_c {
            self.v_f * rho
        } else {
            self.w_c * (self.rho_m - rho)
        }
    }

    /// `max_rho (Q(rho) - v * rho)`, which is `q_m - v * rho_c` on `[-w_c, v_f]`.
    pub fn characteristic_cost(&self, v: f64) -> Result<f64> {
        if !(-self.w_c..=self.v_f).contains(&v) {
            return Err(Error::Domain(format!(
                "characteristic speed {v} outside [{}, {}]",
                -self.w_c, self.v_f
            )));
        }
        Ok(self.q_m - v * self.rho_c)
    }

    /// Mean speed at a density; `v_f` at zero density.
    pub fn speed(&self, rho: f64) -> Result<f64> {
        self.check_density(rho)?;
        Ok(self.speed_clamped(rho))
    }

    pub fn speed_clamped(&self, rho: f64) -> f64 {
        let rho = rho.clamp(0.0, self.rho_m);
        if rho <= self.rho_c {
            self.v_f
        } else {
            self.flow_clamped(rho) / rho
        }
    }

    /// Demand (sending) function used by the cell transmission scheme.
    pub fn sending(&self, rho: f64) -> f64 {
        self.v_f * rho.clamp(0.0, self.rho_c)
    }

    /// Supply (receiving) function used by the cell transmission scheme.
    pub fn receiving(&self, rho: f64) -> f64 {
        let rho = rho.clamp(0.0, self.rho_m);
        if rho <= self.rho_c {
            self.q_m
        } else {
            self.w_c * (self.rho_m - rho)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_values() {
        let fd = FundamentalDiagram::urban();
        assert_eq!(fd.q_m(), 14.0 * 0.04);
        assert!((fd.flow(0.02).unwrap() - 0.28).abs() < 1e-15);
        assert!((fd.flow(0.04).unwrap() - 0.56).abs() < 1e-15);
        assert_eq!(fd.flow(0.24).unwrap(), 0.0);
        assert!((fd.flow(0.10).unwrap() - 0.392).abs() < 1e-15);
        assert!(matches!(fd.flow(0.25), Err(Error::Domain(_))));
        assert!(matches!(fd.flow(-1e-3), Err(Error::Domain(_))));
    }

    #[test]
    fn cost_values() {
        let fd = FundamentalDiagram::urban();
        assert_eq!(fd.characteristic_cost(14.0).unwrap().abs(), 0.0);
        assert!((fd.characteristic_cost(0.0).unwrap() - 0.56).abs() < 1e-15);
        let back = fd.characteristic_cost(-2.8).unwrap();
        assert!((back - 0.672).abs() < 1e-12);
        assert!((back - 2.8 * 0.24).abs() < 1e-12);
        assert!(fd.characteristic_cost(14.5).is_err());
        assert!(fd.characteristic_cost(-3.0).is_err());
    }

    #[test]
    fn speed_values() {
        let fd = FundamentalDiagram::urban();
        assert_eq!(fd.speed(0.0).unwrap(), 14.0);
        assert_eq!(fd.speed(0.02).unwrap(), 14.0);
        assert_eq!(fd.speed(0.24).unwrap(), 0.0);
        assert!((fd.speed(0.14).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_open_triangle() {
        assert!(FundamentalDiagram::new(14.0, 3.0, 0.04, 0.24).is_err());
        assert!(FundamentalDiagram::new(14.0, 2.8, 0.3, 0.24).is_err());
        assert!(FundamentalDiagram::new(-1.0, 2.8, 0.04, 0.24).is_err());
    }

    #[test]
    fn capacity_is_sweep_maximum() {
        let fd = FundamentalDiagram::urban();
        let best = (0..=2400)
            .map(|i| fd.flow((i as f64 * 1e-4).min(fd.rho_m())).unwrap())
            .fold(f64::MIN, f64::max);
        assert!((best - fd.q_m()).abs() < 1e-9);
    }

    #[test]
    fn cost_matches_vertex_maximum() {
        let fd = FundamentalDiagram::urban();
        for i in 0..=1000 {
            let v = -fd.w_c() + (fd.v_f() + fd.w_c()) * i as f64 / 1000.0;
            let brute = [0.0, fd.rho_c(), fd.rho_m()]
                .iter()
                .map(|&r| fd.flow(r).unwrap() - v * r)
                .fold(f64::MIN, f64::max);
            assert!((fd.characteristic_cost(v).unwrap() - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_checks_capacity() {
        let fd = FundamentalDiagram::urban();
        let s = serde_json::to_string(&fd).unwrap();
        let back: FundamentalDiagram = serde_json::from_str(&s).unwrap();
        assert_eq!(fd, back);
        let bad = r#"{"v_f":14,"w_c":2.8,"rho_c":0.04,"rho_m":0.24,"q_m":0.6}"#;
        assert!(serde_json::from_str::<FundamentalDiagram>(bad).is_err());
    }
}
