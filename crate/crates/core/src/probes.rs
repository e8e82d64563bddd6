//! Entanglement observables evaluated on simulator states.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::circuit::TrajectoryRecord;
use crate::state::{PureState, Region, Register, StateError, StateResult};

/// Observable requested from a run.
///
/// The first three are evaluated on snapshots of the main trajectory; the
/// rest select one of the ancilla protocols.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Probe {
    /// `I_{3,n}` on the quarter partition anchored at site 0.
    Tripartite { renyi: u32 },
    /// `S_n` of the left half.
    HalfCut { renyi: u32 },
    /// Final `ln Z` of the trajectory.
    LogZ,
    /// Global purification: entropy of the system started maximally mixed.
    Purification,
    /// Entropy of one ancilla coupled to the steady state.
    OrderParameter,
    /// `I_2` between ancillas coupled at antipodal sites at the same time.
    SpatialI2,
    /// `I_2` between ancillas coupled at the same site `dt` steps apart.
    TemporalI2 { dt: usize },
}

impl Probe {
    /// Whether the probe is evaluated on the main trajectory's snapshots.
    pub fn is_snapshot_probe(&self) -> bool {
        matches!(self, Probe::Tripartite { .. } | Probe::HalfCut { .. })
    }

    /// Evaluates a snapshot probe on the first `system_sites` sites.
    pub fn evaluate(&self, state: &PureState, system_sites: usize) -> StateResult<f64> {
        match *self {
            Probe::Tripartite { renyi } => tripartite_mutual_info_on(state, system_sites, 0, renyi),
            Probe::HalfCut { renyi } => {
                halfcut_region(system_sites).and_then(|r| state.renyi_entropy(&r, renyi))
            }
            _ => Err(StateError::InvalidRegion(format!("{self} is not a snapshot probe"))),
        }
    }
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Probe::Tripartite { renyi } => write!(f, "i3_{renyi}"),
            Probe::HalfCut { renyi } => write!(f, "s_half_{renyi}"),
            Probe::LogZ => write!(f, "log_z"),
            Probe::Purification => write!(f, "s_a"),
            Probe::OrderParameter => write!(f, "s_a_bulk"),
            Probe::SpatialI2 => write!(f, "i2_spatial"),
            Probe::TemporalI2 { dt } => write!(f, "i2_temporal_dt{dt}"),
        }
    }
}

impl FromStr for Probe {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let renyi = |rest: &str| -> Result<u32, String> {
            match rest.parse::<u32>() {
                Ok(n) if n >= 1 => Ok(n),
                _ => Err(format!("bad Rényi index in probe '{s}'")),
            }
        };
        if let Some(rest) = s.strip_prefix("i3_") {
            return Ok(Probe::Tripartite { renyi: renyi(rest)? });
        }
        if let Some(rest) = s.strip_prefix("s_half_") {
            return Ok(Probe::HalfCut { renyi: renyi(rest)? });
        }
        if let Some(rest) = s.strip_prefix("i2_temporal_dt") {
            let dt = rest.parse().map_err(|_| format!("bad time separation in probe '{s}'"))?;
            if dt == 0 {
                return Err("temporal separation must be at least 1".into());
            }
            return Ok(Probe::TemporalI2 { dt });
        }
        match s {
            "log_z" => Ok(Probe::LogZ),
            "s_a" => Ok(Probe::Purification),
            "s_a_bulk" => Ok(Probe::OrderParameter),
            "i2_spatial" => Ok(Probe::SpatialI2),
            _ => Err(format!("unknown probe '{s}'")),
        }
    }
}

impl Serialize for Probe {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Probe {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Four contiguous quarters `A, B, C, D` of `L` sites starting at `anchor`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuarterPartition {
    pub a: Region,
    pub b: Region,
    pub c: Region,
}

impl QuarterPartition {
    pub fn new(sites: usize, anchor: usize) -> StateResult<Self> {
        if sites == 0 || sites % 4 != 0 {
            return Err(StateError::InvalidRegion(format!(
                "quarter partition needs L divisible by 4, got {sites}"
            )));
        }
        let q = sites / 4;
        Ok(Self {
            a: Region::contiguous(anchor, q, sites)?,
            b: Region::contiguous(anchor + q, q, sites)?,
            c: Region::contiguous(anchor + 2 * q, q, sites)?,
        })
    }
}

/// `I_{3,n}(A:B:C)` on the quarter partition anchored at site 0.
pub fn tripartite_mutual_info(state: &PureState, n: u32) -> StateResult<f64> {
    tripartite_mutual_info_on(state, state.sites(), 0, n)
}

/// `I_{3,n}` on quarters of the first `system_sites` sites, starting at
/// `anchor`. Extra register sites (ancillas) count as environment.
pub fn tripartite_mutual_info_on(
    state: &PureState,
    system_sites: usize,
    anchor: usize,
    n: u32,
) -> StateResult<f64> {
    let QuarterPartition { a, b, c } = QuarterPartition::new(system_sites, anchor)?;
    let s = |r: &Region| state.renyi_entropy(r, n);
    Ok(s(&a)? + s(&b)? + s(&c)? - s(&a.union(&b))? - s(&a.union(&c))? - s(&b.union(&c))?
        + s(&a.union(&b).union(&c))?)
}

fn halfcut_region(system_sites: usize) -> StateResult<Region> {
    if system_sites % 2 != 0 {
        return Err(StateError::InvalidRegion(format!("half cut needs even L, got {system_sites}")));
    }
    Region::contiguous(0, system_sites / 2, system_sites)
}

/// `S_n` of the contiguous left half `[0, L/2)`.
pub fn halfcut_entropy(state: &PureState, n: u32) -> StateResult<f64> {
    state.renyi_entropy(&halfcut_region(state.sites())?, n)
}

/// `I_2(a1:a2) = S(a1) + S(a2) - S(a1 a2)` (von Neumann).
pub fn mutual_information(state: &PureState, a1: usize, a2: usize) -> StateResult<f64> {
    let total = state.sites();
    let s1 = state.renyi_entropy(&Region::new([a1], total)?, 1)?;
    let s2 = state.renyi_entropy(&Region::new([a2], total)?, 1)?;
    let s12 = state.renyi_entropy(&Region::new([a1, a2], total)?, 1)?;
    Ok(s1 + s2 - s12)
}

/// One disorder sample of the free energy, `-ln Z`.
pub fn free_energy_sample(record: &TrajectoryRecord) -> Result<f64, StateError> {
    if record.annihilated {
        return Err(StateError::Annihilated(0.0));
    }
    Ok(-record.log_z)
}
