//! Evaluation grids written as `start:stop:count:linear|log`.

use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    pub spacing: Spacing,
}

impl GridSpec {
    pub fn linear(start: f64, stop: f64, count: usize) -> Self {
        Self {
            start,
            stop,
            count,
            spacing: Spacing::Linear,
        }
    }

    pub fn log(start: f64, stop: f64, count: usize) -> Self {
        Self {
            start,
            stop,
            count,
            spacing: Spacing::Log,
        }
    }

    /// Expands to the grid points. Endpoints are reproduced exactly.
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.start.is_finite() && self.stop.is_finite()) {
            return Err(Error::invalid("grid endpoints must be finite"));
        }
        if self.count == 0 {
            return Err(Error::invalid("grid count must be positive"));
        }
        if self.count == 1 {
            return Ok(vec![self.start]);
        }
        if self.stop <= self.start {
            return Err(Error::invalid(format!(
                "grid stop {} must exceed start {}",
                self.stop, self.start
            )));
        }
        let n = self.count - 1;
        let pts = match self.spacing {
            Spacing::Linear => (0..=n)
                .map(|i| match i {
                    0 => self.start,
                    i if i == n => self.stop,
                    i => self.start + (self.stop - self.start) * i as f64 / n as f64,
                })
                .collect(),
            Spacing::Log => {
                if self.start <= 0.0 {
                    return Err(Error::invalid("log grid needs a positive start"));
                }
                let (a, b) = (self.start.ln(), self.stop.ln());
                (0..=n)
                    .map(|i| match i {
                        0 => self.start,
                        i if i == n => self.stop,
                        i => (a + (b - a) * i as f64 / n as f64).exp(),
                    })
                    .collect()
            }
        };
        Ok(pts)
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 4 {
            return Err(Error::invalid(format!(
                "grid `{s}` is not start:stop:count:linear|log"
            )));
        }
        let num = |p: &str| -> Result<f64> {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("grid `{s}`: `{p}` is not a number")))
        };
        let count = parts[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::invalid(format!("grid `{s}`: bad count `{}`", parts[2])))?;
        let spacing = match parts[3].trim() {
            "linear" | "lin" => Spacing::Linear,
            "log" => Spacing::Log,
            other => return Err(Error::invalid(format!("grid `{s}`: unknown spacing `{other}`"))),
        };
        Ok(Self {
            start: num(parts[0])?,
            stop: num(parts[1])?,
            count,
            spacing,
        })
    }
}

/// Checks that `grid` is nonempty, strictly increasing and inside `[lo, hi]`.
pub fn validate_grid(grid: &[f64], lo: f64, hi: f64, what: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(format!("{what} grid is empty")));
    }
    if let Some(x) = grid.iter().find(|x| !(lo..=hi).contains(*x)) {
        return Err(Error::invalid(format!(
            "{what} grid value {x} outside [{lo}, {hi}]"
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!("{what} grid is not strictly increasing")));
    }
    Ok(())
}
