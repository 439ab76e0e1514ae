use std::fmt;

use thiserror::Error;

use crate::geo::haversine_m;
use crate::GeoPoint;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DescriptorError {
    #[error("invalid descriptor: {0}")]
    Invalid(String),
    #[error("malformed descriptor line {0:?}")]
    Malformed(String),
}

/// Identity, coverage and broker endpoint of one MEC server.
///
/// Wire form (one line): `mec_id,lat,lon,r_opt,r_oper,endpoint`.
#[derive(Debug, Clone, PartialEq)]
pub struct MecDescriptor {
    pub mec_id: String,
    pub position: GeoPoint,
    pub r_optimal_m: f64,
    pub r_operating_m: f64,
    pub broker_endpoint: String,
    /// Shallow copies: a neighbor's own neighbor list is always empty.
    pub neighbors: Vec<MecDescriptor>,
}

impl MecDescriptor {
    pub fn new(
        mec_id: impl Into<String>,
        position: GeoPoint,
        r_optimal_m: f64,
        r_operating_m: f64,
        broker_endpoint: impl Into<String>,
    ) -> Result<Self, DescriptorError> {
        let d = Self {
            mec_id: mec_id.into(),
            position,
            r_optimal_m,
            r_operating_m,
            broker_endpoint: broker_endpoint.into(),
            neighbors: Vec::new(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), DescriptorError> {
        let bad_chars = |s: &str| s.is_empty() || s.contains([',', '/', '+', '#', '\n', ';', '='])
            || s.chars().any(char::is_whitespace);
        if bad_chars(&self.mec_id) {
            return Err(DescriptorError::Invalid(format!("mec_id {:?}", self.mec_id)));
        }
        if bad_chars(&self.broker_endpoint) {
            return Err(DescriptorError::Invalid(format!("endpoint {:?}", self.broker_endpoint)));
        }
        if !(self.r_optimal_m > 0.0 && self.r_optimal_m < self.r_operating_m && self.r_operating_m.is_finite()) {
            return Err(DescriptorError::Invalid(format!(
                "radii must satisfy 0 < r_opt < r_oper, got {} / {}",
                self.r_optimal_m, self.r_operating_m
            )));
        }
        if self.neighbors.iter().any(|n| n.mec_id == self.mec_id) {
            return Err(DescriptorError::Invalid("descriptor lists itself as neighbor".into()));
        }
        Ok(())
    }

    /// Copy without the neighbor list.
    pub fn shallow(&self) -> Self {
        Self {
            neighbors: Vec::new(),
            ..self.clone()
        }
    }

    /// Whether the operating discs of the two servers intersect.
    pub fn overlaps(&self, other: &MecDescriptor) -> bool {
        haversine_m(self.position, other.position) < self.r_operating_m + other.r_operating_m
    }

    pub fn to_line(&self) -> String {
        self.to_string()
    }

    pub fn parse_line(line: &str) -> Result<Self, DescriptorError> {
        let malformed = || DescriptorError::Malformed(line.to_owned());
        let parts: Vec<&str> = line.trim().split(',').collect();
        let [id, lat, lon, r_opt, r_oper, endpoint] = parts.as_slice() else {
            return Err(malformed());
        };
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| malformed());
        let position = GeoPoint::new(num(lat)?, num(lon)?).map_err(|_| malformed())?;
        Self::new(*id, position, num(r_opt)?, num(r_oper)?, *endpoint)
    }

    /// One descriptor per non-empty line.
    pub fn parse_lines(text: &str) -> Result<Vec<Self>, DescriptorError> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(Self::parse_line)
            .collect()
    }

    pub fn lines<'a>(descriptors: impl IntoIterator<Item = &'a MecDescriptor>) -> String {
        let mut out = String::new();
        for d in descriptors {
            out.push_str(&d.to_line());
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for MecDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.mec_id,
            self.position.lat(),
            self.position.lon(),
            self.r_optimal_m,
            self.r_operating_m,
            self.broker_endpoint
        )
    }
}
