//! Closed unit table for the quantities the bundled datasets care about.
//!
//! Only conversions inside one dimension are supported; there is no general
//! unit algebra.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnitError {
    #[error("unsupported unit conversion from `{from}` to `{to}`")]
    Unsupported { from: String, to: String },
    #[error("cannot take log10 of non-positive diffusivity {0}")]
    NonPositiveLog(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dimension {
    Diffusivity,
    Stress,
    Temperature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Unit {
    SquareMetrePerSecond,
    SquareCentimetrePerSecond,
    SquareMicrometrePerSecond,
    Log10SquareMetrePerSecond,
    MegaPascal,
    GigaPascal,
    Celsius,
    Kelvin,
}

const KELVIN_OFFSET: f64 = 273.15;

impl Unit {
    pub const ALL: [Unit; 8] = [
        Unit::SquareMetrePerSecond,
        Unit::SquareCentimetrePerSecond,
        Unit::SquareMicrometrePerSecond,
        Unit::Log10SquareMetrePerSecond,
        Unit::MegaPascal,
        Unit::GigaPascal,
        Unit::Celsius,
        Unit::Kelvin,
    ];

    /// Canonical spelling used in configs and serialized cells.
    pub fn symbol(self) -> &'static str {
        match self {
            Unit::SquareMetrePerSecond => "m2/s",
            Unit::SquareCentimetrePerSecond => "cm2/s",
            Unit::SquareMicrometrePerSecond => "um2/s",
            Unit::Log10SquareMetrePerSecond => "log10(m2/s)",
            Unit::MegaPascal => "MPa",
            Unit::GigaPascal => "GPa",
            Unit::Celsius => "C",
            Unit::Kelvin => "K",
        }
    }

    pub fn dimension(self) -> Dimension {
        match self {
            Unit::SquareMetrePerSecond
            | Unit::SquareCentimetrePerSecond
            | Unit::SquareMicrometrePerSecond
            | Unit::Log10SquareMetrePerSecond => Dimension::Diffusivity,
            Unit::MegaPascal | Unit::GigaPascal => Dimension::Stress,
            Unit::Celsius | Unit::Kelvin => Dimension::Temperature,
        }
    }

    /// Recognizes the canonical symbol and a handful of common spellings.
    pub fn parse(token: &str) -> Option<Unit> {
        let t = token.trim();
        let unit = match t {
            "m2/s" | "m^2/s" | "m²/s" | "m2 s-1" | "m2s-1" => Unit::SquareMetrePerSecond,
            "cm2/s" | "cm^2/s" | "cm²/s" | "cm2 s-1" | "cm2s-1" => Unit::SquareCentimetrePerSecond,
            "um2/s" | "um^2/s" | "µm2/s" | "μm2/s" | "µm^2/s" | "μm^2/s" | "µm²/s" | "μm²/s" => {
                Unit::SquareMicrometrePerSecond
            }
            "log10(m2/s)" | "log(m2/s)" | "log10(m^2/s)" | "log(m^2/s)" | "log10 m2/s" => {
                Unit::Log10SquareMetrePerSecond
            }
            "MPa" | "mpa" => Unit::MegaPascal,
            "GPa" | "gpa" => Unit::GigaPascal,
            "C" | "°C" | "degC" | "ºC" => Unit::Celsius,
            "K" => Unit::Kelvin,
            _ => return None,
        };
        Some(unit)
    }

    fn into_base(self, value: f64) -> Result<f64, UnitError> {
        Ok(match self {
            Unit::SquareMetrePerSecond => value,
            Unit::SquareCentimetrePerSecond => value * 1e-4,
            Unit::SquareMicrometrePerSecond => value * 1e-12,
            Unit::Log10SquareMetrePerSecond => pow10(value),
            Unit::MegaPascal => value,
            Unit::GigaPascal => value * 1e3,
            Unit::Celsius => value,
            Unit::Kelvin => value - KELVIN_OFFSET,
        })
    }

    fn out_of_base(self, value: f64) -> Result<f64, UnitError> {
        Ok(match self {
            Unit::SquareMetrePerSecond => value,
            Unit::SquareCentimetrePerSecond => value / 1e-4,
            Unit::SquareMicrometrePerSecond => value / 1e-12,
            Unit::Log10SquareMetrePerSecond => {
                if value <= 0.0 {
                    return Err(UnitError::NonPositiveLog(value));
                }
                value.log10()
            }
            Unit::MegaPascal => value,
            Unit::GigaPascal => value / 1e3,
            Unit::Celsius => value,
            Unit::Kelvin => value + KELVIN_OFFSET,
        })
    }
}

// Integral exponents go through decimal parsing so that 10^-12 is the
// correctly rounded 1e-12.
fn pow10(exponent: f64) -> f64 {
    if exponent.fract() == 0.0 && exponent.abs() < 1e6 {
        format!("1e{}", exponent as i64).parse().unwrap_or(f64::NAN)
    } else {
        10f64.powf(exponent)
    }
}

/// Converts `value` between two units of the closed table.
pub fn convert_unit(value: f64, from_unit: &str, to_unit: &str) -> Result<f64, UnitError> {
    let unsupported = || UnitError::Unsupported {
        from: from_unit.to_string(),
        to: to_unit.to_string(),
    };
    let from = Unit::parse(from_unit).ok_or_else(unsupported)?;
    let to = Unit::parse(to_unit).ok_or_else(unsupported)?;
    convert(value, from, to).map_err(|e| match e {
        UnitError::Unsupported { .. } => unsupported(),
        other => other,
    })
}

pub fn convert(value: f64, from: Unit, to: Unit) -> Result<f64, UnitError> {
    if from == to {
        return Ok(value);
    }
    if from.dimension() != to.dimension() {
        return Err(UnitError::Unsupported {
            from: from.symbol().to_string(),
            to: to.symbol().to_string(),
        });
    }
    to.out_of_base(from.into_base(value)?)
}
