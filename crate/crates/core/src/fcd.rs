//! Streaming reader for SUMO floating-car-data exports written with
//! `--fcd-output.geo` (vehicle `x` is longitude, `y` is latitude).

use std::collections::HashSet;
use std::io::BufRead;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FcdError {
    #[error("xml syntax error at byte {position}: {message}")]
    XmlSyntax { position: u64, message: String },
    #[error("missing attribute {0:?}")]
    MissingAttribute(String),
    #[error("attribute {attribute}={value:?} is not a number")]
    InvalidNumber { attribute: String, value: String },
    #[error("timestep {next} does not follow {prev}")]
    NonMonotonicTime { prev: f64, next: f64 },
    #[error("vehicle {0:?} appears twice in one timestep")]
    DuplicateVehicle(String),
    #[error("coordinates x={x} y={y} are not geographic; re-export with --fcd-output.geo")]
    ProjectedCoordinates { x: f64, y: f64 },
    #[error("unexpected root element <{0}>, expected <fcd-export>")]
    UnexpectedRoot(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcdVehicle {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub heading_deg: f64,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcdTimestep {
    pub time_s: f64,
    pub vehicles: Vec<FcdVehicle>,
}

/// Iterator over the timesteps of an FCD stream. Stops after the first error.
pub struct FcdReader<R: BufRead> {
    reader: Reader<R>,
    buf: Vec<u8>,
    seen_root: bool,
    last_time: Option<f64>,
    done: bool,
}

pub fn parse_fcd<R: BufRead>(stream: R) -> FcdReader<R> {
    FcdReader {
        reader: Reader::from_reader(stream),
        buf: Vec::new(),
        seen_root: false,
        last_time: None,
        done: false,
    }
}

fn attr(e: &BytesStart<'_>, name: &str) -> Result<Option<String>, FcdError> {
    for a in e.attributes() {
        let a = a.map_err(|err| FcdError::XmlSyntax {
            position: 0,
            message: err.to_string(),
        })?;
        if a.key.as_ref() == name.as_bytes() {
            let v = a.unescape_value().map_err(|err| FcdError::XmlSyntax {
                position: 0,
                message: err.to_string(),
            })?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

fn required(e: &BytesStart<'_>, name: &str) -> Result<String, FcdError> {
    attr(e, name)?.ok_or_else(|| FcdError::MissingAttribute(name.to_owned()))
}

fn number(e: &BytesStart<'_>, name: &str) -> Result<f64, FcdError> {
    let raw = required(e, name)?;
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or(FcdError::InvalidNumber {
            attribute: name.to_owned(),
            value: raw,
        })
}

fn open_timestep(last_time: &mut Option<f64>, e: &BytesStart<'_>) -> Result<f64, FcdError> {
    let time_s = number(e, "time")?;
    if let Some(prev) = *last_time {
        if time_s <= prev {
            return Err(FcdError::NonMonotonicTime { prev, next: time_s });
        }
    }
    *last_time = Some(time_s);
    Ok(time_s)
}

fn vehicle(e: &BytesStart<'_>) -> Result<FcdVehicle, FcdError> {
    let name = required(e, "id")?;
    let x = number(e, "x")?;
    let y = number(e, "y")?;
    if y.abs() > 90.0 || x.abs() > 180.0 {
        return Err(FcdError::ProjectedCoordinates { x, y });
    }
    Ok(FcdVehicle {
        name,
        lat: y,
        lon: x,
        heading_deg: number(e, "angle")?.rem_euclid(360.0),
        speed_mps: number(e, "speed")?,
    })
}

impl<R: BufRead> FcdReader<R> {
    fn syntax(&self, err: impl ToString) -> FcdError {
        FcdError::XmlSyntax {
            position: self.reader.buffer_position(),
            message: err.to_string(),
        }
    }

    fn next_timestep(&mut self) -> Result<Option<FcdTimestep>, FcdError> {
        let mut current: Option<FcdTimestep> = None;
        let mut names = HashSet::new();
        loop {
            self.buf.clear();
            let ev = self
                .reader
                .read_event_into(&mut self.buf)
                .map_err(|e| FcdError::XmlSyntax {
                    position: 0,
                    message: e.to_string(),
                })?;
            match ev {
                Event::Start(e) | Event::Empty(e) if !self.seen_root => {
                    let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                    if name != "fcd-export" {
                        return Err(FcdError::UnexpectedRoot(name));
                    }
                    self.seen_root = true;
                }
                Event::Start(e) => match e.name().as_ref() {
                    b"timestep" => {
                        let time_s = open_timestep(&mut self.last_time, &e)?;
                        current = Some(FcdTimestep {
                            time_s,
                            vehicles: Vec::new(),
                        });
                        names.clear();
                    }
                    b"vehicle" => {
                        let v = vehicle(&e)?;
                        if let Some(ts) = current.as_mut() {
                            if !names.insert(v.name.clone()) {
                                return Err(FcdError::DuplicateVehicle(v.name));
                            }
                            ts.vehicles.push(v);
                        }
                    }
                    _ => {}
                },
                Event::Empty(e) => match e.name().as_ref() {
                    b"timestep" => {
                        let time_s = open_timestep(&mut self.last_time, &e)?;
                        return Ok(Some(FcdTimestep {
                            time_s,
                            vehicles: Vec::new(),
                        }));
                    }
                    b"vehicle" => {
                        let v = vehicle(&e)?;
                        if let Some(ts) = current.as_mut() {
                            if !names.insert(v.name.clone()) {
                                return Err(FcdError::DuplicateVehicle(v.name));
                            }
                            ts.vehicles.push(v);
                        }
                    }
                    _ => {}
                },
                Event::End(e) if e.name().as_ref() == b"timestep" => {
                    if let Some(ts) = current.take() {
                        return Ok(Some(ts));
                    }
                }
                Event::Eof => {
                    if current.is_some() {
                        return Err(self.syntax("unexpected end of file inside <timestep>"));
                    }
                    return Ok(None);
                }
                _ => {}
            }
        }
    }
}

impl<R: BufRead> Iterator for FcdReader<R> {
    type Item = Result<FcdTimestep, FcdError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_timestep() {
            Ok(Some(ts)) => Some(Ok(ts)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Finite-difference accelerations for one vehicle's consecutive samples
/// `(time_s, speed_mps)`. The first sample has no predecessor and yields 0.
pub fn finite_difference_accel(samples: &[(f64, f64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    for (i, &(t, v)) in samples.iter().enumerate() {
        if i == 0 {
            out.push(0.0);
            continue;
        }
        let (tp, vp) = samples[i - 1];
        let dt = t - tp;
        out.push(if dt > 0.0 { (v - vp) / dt } else { 0.0 });
    }
    out
}
