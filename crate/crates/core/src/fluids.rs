//! Working-fluid property models.
//!
//! Every pressure-flow law in the circuit reads its viscosity and density
//! from a [`Fluid`]. Liquids are modelled as incompressible; gases follow the
//! ideal-gas law at a fixed temperature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard atmospheric pressure, used as the gauge reference.
pub const STANDARD_ATMOSPHERE: f64 = 101_325.0;

/// How density responds to pressure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum Compressibility {
    Incompressible,
    IdealGas {
        /// J/(kg·K)
        specific_gas_constant: f64,
        /// K
        temperature: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fluid {
    pub name: String,
    /// kg/m³. For ideal gases this is only a nominal value; [`Fluid::density_at`]
    /// evaluates the gas law instead.
    pub density_ref: f64,
    /// Pa·s
    pub dynamic_viscosity: f64,
    pub compressibility: Compressibility,
}

impl Fluid {
    /// Water at 20 °C.
    pub fn water_20c() -> Self {
        Fluid {
            name: "water".into(),
            density_ref: 998.0,
            dynamic_viscosity: 1.0e-3,
            compressibility: Compressibility::Incompressible,
        }
    }

    /// Dry air at 20 °C.
    pub fn air_20c() -> Self {
        let specific_gas_constant = 287.0;
        let temperature = 293.15;
        Fluid {
            name: "air".into(),
            density_ref: STANDARD_ATMOSPHERE / (specific_gas_constant * temperature),
            dynamic_viscosity: 1.8e-5,
            compressibility: Compressibility::IdealGas {
                specific_gas_constant,
                temperature,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density_ref > 0.0 && self.density_ref.is_finite()) {
            return Err(Error::Domain(format!(
                "fluid `{}`: density_ref must be positive",
                self.name
            )));
        }
        if !(self.dynamic_viscosity > 0.0 && self.dynamic_viscosity.is_finite()) {
            return Err(Error::Domain(format!(
                "fluid `{}`: dynamic_viscosity must be positive",
                self.name
            )));
        }
        if let Compressibility::IdealGas {
            specific_gas_constant,
            temperature,
        } = self.compressibility
        {
            if !(specific_gas_constant > 0.0 && temperature > 0.0) {
                return Err(Error::Domain(format!(
                    "fluid `{}`: gas constant and temperature must be positive",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn is_compressible(&self) -> bool {
        matches!(self.compressibility, Compressibility::IdealGas { .. })
    }

    /// Density at an absolute pressure in Pa.
    pub fn density_at(&self, pressure_abs: f64) -> Result<f64> {
        if !(pressure_abs > 0.0) {
            return Err(Error::Domain(format!(
                "absolute pressure must be positive, got {pressure_abs}"
            )));
        }
        Ok(match self.compressibility {
            Compressibility::Incompressible => self.density_ref,
            Compressibility::IdealGas {
                specific_gas_constant,
                temperature,
            } => pressure_abs / (specific_gas_constant * temperature),
        })
    }

    /// Density used for stored mass. Liquids ignore pressure entirely, so a
    /// gauge pressure below vacuum is still accepted for them.
    pub(crate) fn storage_density(&self, pressure_abs: f64) -> Result<f64> {
        match self.compressibility {
            Compressibility::Incompressible => Ok(self.density_ref),
            Compressibility::IdealGas { .. } => self.density_at(pressure_abs),
        }
    }

    /// d(ln ρ)/dP at an absolute pressure; zero for liquids, 1/P for ideal gases.
    pub(crate) fn log_density_slope(&self, pressure_abs: f64) -> f64 {
        match self.compressibility {
            Compressibility::Incompressible => 0.0,
            Compressibility::IdealGas { .. } => 1.0 / pressure_abs,
        }
    }

    /// Kinematic viscosity in m²/s at an absolute pressure.
    pub fn kinematic_viscosity(&self, pressure_abs: f64) -> Result<f64> {
        Ok(self.dynamic_viscosity / self.density_at(pressure_abs)?)
    }
}
