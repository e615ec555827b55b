//! Pressure-flow laws of passive elements.

use std::f64::consts::PI;

use crate::circuit::{Element, Law, SolverSettings};
use crate::error::{Error, Result};
use crate::fluids::Fluid;

/// Hagen–Poiseuille resistance of a circular channel, Pa·s/m³.
pub fn channel_resistance(length: f64, hydraulic_diameter: f64, viscosity: f64) -> f64 {
    128.0 * viscosity * length / (PI * hydraulic_diameter.powi(4))
}

/// Fluid inertance ρ·L/A of a circular channel, Pa·s²/m³.
pub fn channel_inertance(length: f64, hydraulic_diameter: f64, density: f64) -> f64 {
    density * length / (0.25 * PI * hydraulic_diameter * hydraulic_diameter)
}

/// Quadratic coefficient k of the orifice law ΔP = k·Q·|Q|, Pa·s²/m⁶.
pub fn orifice_coefficient(
    reference_area: f64,
    opening: f64,
    discharge_coefficient: f64,
    density: f64,
) -> f64 {
    let effective = discharge_coefficient * reference_area * opening;
    density / (2.0 * effective * effective)
}

/// Orifice law k·Q·|Q| blended into a cubic for |Q| < `q_smooth` so the slope
/// stays positive at zero flow. Returns (ΔP, dΔP/dQ).
pub fn smoothed_quadratic(k: f64, q: f64, q_smooth: f64) -> (f64, f64) {
    if q.abs() >= q_smooth {
        (k * q * q.abs(), 2.0 * k * q.abs())
    } else {
        let dp = k * (0.5 * q_smooth * q + q * q * q / (2.0 * q_smooth));
        let slope = k * (0.5 * q_smooth + 1.5 * q * q / q_smooth);
        (dp, slope)
    }
}

/// Linear resistance applying to positive (forward) and negative flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Piecewise {
    pub forward: f64,
    pub reverse: f64,
}

impl Piecewise {
    pub fn for_sign(&self, s: f64) -> f64 {
        if s >= 0.0 {
            self.forward
        } else {
            self.reverse
        }
    }
}

/// Solver-facing form of a law with fluid properties folded in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Compiled {
    /// ΔP = R(sign Q)·Q, with optional inertance for transient runs.
    Linear { r: Piecewise, inertance: f64 },
    /// ΔP = k·Q·|Q| (smoothed).
    Quadratic { k: f64 },
    FlowSource { q: f64 },
    PressureSource { p: f64 },
    Chamber { rest_volume: f64, compliance: f64 },
}

pub(crate) fn compile(element: &Element, fluid: &Fluid, settings: &SolverSettings) -> Result<Compiled> {
    let density = fluid.density_at(settings.p_ambient)?;
    let mu = fluid.dynamic_viscosity;
    Ok(match element.law {
        Law::Channel {
            length,
            hydraulic_diameter,
        } => {
            let r = channel_resistance(length, hydraulic_diameter, mu);
            Compiled::Linear {
                r: Piecewise {
                    forward: r,
                    reverse: r,
                },
                inertance: channel_inertance(length, hydraulic_diameter, density),
            }
        }
        Law::DirectionalChannel {
            length,
            hydraulic_diameter,
            asymmetry,
        } => {
            let r = channel_resistance(length, hydraulic_diameter, mu);
            Compiled::Linear {
                r: Piecewise {
                    forward: r * (1.0 + asymmetry),
                    reverse: r * (1.0 - asymmetry),
                },
                inertance: channel_inertance(length, hydraulic_diameter, density),
            }
        }
        Law::Resistor { resistance } => Compiled::Linear {
            r: Piecewise {
                forward: resistance,
                reverse: resistance,
            },
            inertance: 0.0,
        },
        Law::TeslaValve {
            base_resistance,
            diodicity,
        } => Compiled::Linear {
            r: Piecewise {
                forward: base_resistance,
                reverse: base_resistance * diodicity,
            },
            inertance: 0.0,
        },
        Law::Constriction {
            reference_area,
            opening,
            discharge_coefficient,
        } => {
            if opening <= 0.0 {
                return Err(Error::BlockedElement(element.id.to_string()));
            }
            Compiled::Quadratic {
                k: orifice_coefficient(reference_area, opening, discharge_coefficient, density),
            }
        }
        Law::FlowSource { q_set } => Compiled::FlowSource { q: q_set },
        Law::PressureSource { p_set } => Compiled::PressureSource { p: p_set },
        Law::ComplianceChamber {
            rest_volume,
            compliance,
        } => Compiled::Chamber {
            rest_volume,
            compliance,
        },
    })
}

/// Signed pressure drop across a passive element carrying `flow`, using
/// default solver settings (fluid density evaluated at one standard atmosphere).
pub fn element_pressure_drop(element: &Element, flow: f64, fluid: &Fluid) -> Result<f64> {
    element_pressure_drop_with(element, flow, fluid, &SolverSettings::default())
}

pub fn element_pressure_drop_with(
    element: &Element,
    flow: f64,
    fluid: &Fluid,
    settings: &SolverSettings,
) -> Result<f64> {
    if !element.law.is_passive() {
        return Err(Error::Domain(format!(
            "element `{}` is not a passive law",
            element.id
        )));
    }
    Ok(match compile(element, fluid, settings)? {
        Compiled::Linear { r, .. } => r.for_sign(flow) * flow,
        Compiled::Quadratic { k } => smoothed_quadratic(k, flow, settings.q_smooth).0,
        _ => unreachable!("passive laws compile to linear or quadratic forms"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn channel() -> Element {
        Element::new(
            "c",
            "a",
            "b",
            Law::Channel {
                length: 0.1,
                hydraulic_diameter: 1e-3,
            },
        )
    }

    #[test]
    fn hagen_poiseuille_drop() {
        let dp = element_pressure_drop(&channel(), 1e-6, &Fluid::water_20c()).unwrap();
        let r = 128.0 * 1e-3 * 0.1 / (PI * 1e-12);
        assert!((r - 4.074e9).abs() / 4.074e9 < 1e-3);
        assert!((dp - r * 1e-6).abs() < 1e-9);
        assert!((dp - 4074.0).abs() < 1.0);
    }

    #[test]
    fn zero_flow_zero_drop() {
        let fluid = Fluid::water_20c();
        let laws = [
            channel().law,
            Law::Resistor { resistance: 3e8 },
            Law::Constriction {
                reference_area: 1e-6,
                opening: 0.4,
                discharge_coefficient: 0.6,
            },
            Law::TeslaValve {
                base_resistance: 1e8,
                diodicity: 4.0,
            },
            Law::DirectionalChannel {
                length: 0.01,
                hydraulic_diameter: 6e-4,
                asymmetry: 0.2,
            },
        ];
        for law in laws {
            let e = Element::new("e", "a", "b", law);
            assert_eq!(element_pressure_drop(&e, 0.0, &fluid).unwrap(), 0.0);
        }
    }

    #[test]
    fn tesla_valve_diodicity() {
        let e = Element::new(
            "tv",
            "a",
            "b",
            Law::TeslaValve {
                base_resistance: 1e8,
                diodicity: 4.0,
            },
        );
        let fluid = Fluid::water_20c();
        let q = 2e-6;
        let fwd = element_pressure_drop(&e, q, &fluid).unwrap();
        let rev = element_pressure_drop(&e, -q, &fluid).unwrap();
        assert_eq!(fwd, 1e8 * q);
        assert_eq!(rev, -4e8 * q);
        assert!((rev.abs() / fwd - 4.0).abs() < 1e-12);
    }

    #[test]
    fn blocked_constriction_is_an_error() {
        let e = Element::new(
            "v",
            "a",
            "b",
            Law::Constriction {
                reference_area: 1e-6,
                opening: 0.0,
                discharge_coefficient: 0.6,
            },
        );
        assert_eq!(
            element_pressure_drop(&e, 1e-6, &Fluid::water_20c()),
            Err(Error::BlockedElement("v".into()))
        );
    }

    #[test]
    fn sources_are_not_passive() {
        let e = Element::new("s", "a", "b", Law::FlowSource { q_set: 1.0 });
        assert!(matches!(
            element_pressure_drop(&e, 1.0, &Fluid::water_20c()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn orifice_law_outside_blend() {
        let fluid = Fluid::water_20c();
        let e = Element::new(
            "v",
            "a",
            "b",
            Law::Constriction {
                reference_area: 2e-6,
                opening: 0.5,
                discharge_coefficient: 0.62,
            },
        );
        let k = 998.0 / (2.0 * (0.62f64 * 2e-6 * 0.5).powi(2));
        let q = 3e-5;
        let dp = element_pressure_drop(&e, q, &fluid).unwrap();
        assert!((dp - k * q * q).abs() / dp < 1e-14);
    }

    #[test]
    fn blend_is_continuous_and_c1() {
        let (k, qs) = (1e13, 1e-9);
        let (lo, slo) = smoothed_quadratic(k, qs * (1.0 - 1e-12), qs);
        let (hi, shi) = smoothed_quadratic(k, qs, qs);
        assert!((lo - hi).abs() <= 1e-9 * hi.abs());
        assert!((slo - shi).abs() <= 1e-9 * shi.abs());
        assert!(smoothed_quadratic(k, 0.0, qs).1 > 0.0);
    }

    proptest! {
        #[test]
        fn passivity_and_oddness(q in -1e-3f64..1e-3, open in 0.01f64..1.0, asym in -0.45f64..0.45) {
            let fluid = Fluid::water_20c();
            let laws = [
                Law::Channel { length: 0.02, hydraulic_diameter: 2e-3 },
                Law::Constriction { reference_area: 1e-6, opening: open, discharge_coefficient: 0.62 },
                Law::TeslaValve { base_resistance: 1e8, diodicity: 3.0 },
                Law::DirectionalChannel { length: 0.02, hydraulic_diameter: 6e-4, asymmetry: asym },
            ];
            for law in laws {
                let e = Element::new("e", "a", "b", law);
                let dp = element_pressure_drop(&e, q, &fluid).unwrap();
                prop_assert!(dp * q >= 0.0);
            }
            let ch = Element::new("c", "a", "b", laws[0]);
            let plus = element_pressure_drop(&ch, q, &fluid).unwrap();
            let minus = element_pressure_drop(&ch, -q, &fluid).unwrap();
            prop_assert_eq!(plus, -minus);
            let or = Element::new("o", "a", "b", laws[1]);
            let plus = element_pressure_drop(&or, q, &fluid).unwrap();
            let minus = element_pressure_drop(&or, -q, &fluid).unwrap();
            prop_assert_eq!(plus, -minus);
        }
    }
}
