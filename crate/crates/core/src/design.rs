//! Experiment layout: which lamps (or filter settings) are on in each run.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, FluxcalError, Result};

/// Instrument geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    IntegratingSphere,
    BeamConjoiner,
}

/// Dimensions of the indicator vectors for one geometry.
///
/// In sphere mode the last lamp (lamp `J`) is the one with a variable
/// aperture. In conjoiner mode the flux vector is the beam-1 settings
/// followed by the beam-2 settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Sphere { lamps: usize, apertures: usize },
    Conjoiner { beam1: usize, beam2: usize },
}

impl Layout {
    pub fn mode(&self) -> Mode {
        match self {
            Layout::Sphere { .. } => Mode::IntegratingSphere,
            Layout::Conjoiner { .. } => Mode::BeamConjoiner,
        }
    }

    /// Number of flux parameters (`J`, or `J1 + J2`).
    pub fn n_fluxes(&self) -> usize {
        match *self {
            Layout::Sphere { lamps, .. } => lamps,
            Layout::Conjoiner { beam1, beam2 } => beam1 + beam2,
        }
    }

    /// Number of variable-aperture fractions (zero in conjoiner mode).
    pub fn n_apertures(&self) -> usize {
        match *self {
            Layout::Sphere { apertures, .. } => apertures,
            Layout::Conjoiner { .. } => 0,
        }
    }

    /// Builds a row from raw 0/1 indicators.
    ///
    /// Sphere: `first` holds `x_1..x_J`, `second` holds the aperture states.
    /// Conjoiner: `first` and `second` are the beam-1 and beam-2 settings.
    pub fn row_from_indicators(&self, first: &[u8], second: &[u8]) -> Result<DesignRow> {
        let (n_first, n_second) = match *self {
            Layout::Sphere { lamps, apertures } => (lamps, apertures),
            Layout::Conjoiner { beam1, beam2 } => (beam1, beam2),
        };
        if first.len() != n_first || second.len() != n_second {
            return invalid(format!(
                "indicator row has {}+{} entries, layout expects {}+{}",
                first.len(),
                second.len(),
                n_first,
                n_second
            ));
        }
        if let Some(bad) = first.iter().chain(second).find(|&&v| v > 1) {
            return invalid(format!("indicator value {bad} is not 0 or 1"));
        }
        let on_first: Vec<usize> = (0..n_first).filter(|&j| first[j] == 1).collect();
        let on_second: Vec<usize> = (0..n_second).filter(|&k| second[k] == 1).collect();

        match *self {
            Layout::Sphere { lamps, .. } => {
                let full = lamps > 0 && first[lamps - 1] == 1;
                if on_second.len() + usize::from(full) > 1 {
                    return invalid(
                        "at most one of the variable-aperture lamp states may be on in a run",
                    );
                }
                Ok(DesignRow {
                    on: on_first,
                    aperture: on_second.first().copied(),
                })
            }
            Layout::Conjoiner { beam1, .. } => {
                if on_first.len() > 1 || on_second.len() > 1 {
                    return invalid("at most one filter setting per beam may be on in a run");
                }
                let mut on = on_first;
                on.extend(on_second.iter().map(|k| beam1 + k));
                Ok(DesignRow { on, aperture: None })
            }
        }
    }

    /// Inverse of [`Layout::row_from_indicators`].
    pub fn indicators(&self, row: &DesignRow) -> (Vec<u8>, Vec<u8>) {
        match *self {
            Layout::Sphere { lamps, apertures } => {
                let mut x = vec![0u8; lamps];
                let mut xv = vec![0u8; apertures];
                for &j in &row.on {
                    x[j] = 1;
                }
                if let Some(k) = row.aperture {
                    xv[k] = 1;
                }
                (x, xv)
            }
            Layout::Conjoiner { beam1, beam2 } => {
                let mut a = vec![0u8; beam1];
                let mut b = vec![0u8; beam2];
                for &j in &row.on {
                    if j < beam1 {
                        a[j] = 1;
                    } else {
                        b[j - beam1] = 1;
                    }
                }
                (a, b)
            }
        }
    }
}

/// One run of the experiment, stored as the indices of the fluxes that are on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DesignRow {
    /// Indices into the flux vector that contribute at full strength.
    pub on: Vec<usize>,
    /// Variable-aperture state `k` of lamp `J`, contributing `psi_k * phi_J`.
    pub aperture: Option<usize>,
}

impl DesignRow {
    pub fn is_dark(&self) -> bool {
        self.on.is_empty() && self.aperture.is_none()
    }
}

/// The known experiment layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDesign {
    pub layout: Layout,
    pub rows: Vec<DesignRow>,
}

impl RunDesign {
    pub fn new(layout: Layout, rows: Vec<DesignRow>) -> Result<Self> {
        let design = RunDesign { layout, rows };
        design.validate()?;
        Ok(design)
    }

    pub fn mode(&self) -> Mode {
        self.layout.mode()
    }

    pub fn n_fluxes(&self) -> usize {
        self.layout.n_fluxes()
    }

    pub fn n_apertures(&self) -> usize {
        self.layout.n_apertures()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n_fluxes = self.n_fluxes();
        let n_apertures = self.n_apertures();
        for (i, row) in self.rows.iter().enumerate() {
            if row.on.iter().any(|&j| j >= n_fluxes) {
                return invalid(format!("row {i} references a flux outside the layout"));
            }
            match (self.layout, row.aperture) {
                (Layout::Sphere { lamps, .. }, Some(k)) => {
                    if k >= n_apertures {
                        return invalid(format!("row {i} references aperture state {k}"));
                    }
                    if row.on.contains(&(lamps - 1)) {
                        return invalid(format!(
                            "row {i} has lamp {lamps} both at full power and in an aperture state"
                        ));
                    }
                }
                (Layout::Conjoiner { .. }, Some(_)) => {
                    return invalid(format!("row {i}: aperture states exist only in sphere mode"));
                }
                _ => {}
            }
            if let Layout::Conjoiner { beam1, .. } = self.layout {
                let n1 = row.on.iter().filter(|&&j| j < beam1).count();
                if n1 > 1 || row.on.len() - n1 > 1 {
                    return invalid(format!("row {i} has more than one setting on in a beam"));
                }
            }
        }
        Ok(())
    }

    /// Non-fatal layout problems: a missing dark run or a missing full-flux run.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.rows.iter().any(DesignRow::is_dark) {
            out.push("no run with every indicator off".to_string());
        }
        let full = match self.layout {
            Layout::Sphere { lamps, .. } => self.rows.iter().any(|r| r.on.len() == lamps),
            Layout::Conjoiner { .. } => self.rows.iter().any(|r| r.on.len() == 2),
        };
        if !full {
            out.push("no run at maximal total flux".to_string());
        }
        out
    }
}

/// One instrument reading from a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub run_index: usize,
    pub n: f64,
}

pub fn validate_observations(observations: &[Observation], design: &RunDesign) -> Result<()> {
    for (i, obs) in observations.iter().enumerate() {
        if obs.run_index >= design.len() {
            return Err(FluxcalError::InvalidArgument(format!(
                "observation {i} references run {} but the design has {} rows",
                obs.run_index,
                design.len()
            )));
        }
        if !obs.n.is_finite() {
            return invalid(format!("observation {i} has a non-finite reading"));
        }
    }
    Ok(())
}
