//! The closed set of named landmarks and regions a task may mention.
//!
//! On disk this is a JSON list of `{name, kind, geometry}` entries. An
//! environment config object with a `places` field is accepted too, so the
//! same file can drive both the parser and the simulator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::Geometry;
use crate::Error;

/// Name of the region covering the whole operating area.
pub const WHOLE_AREA: &str = "whole area";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaceKind {
    Landmark,
    Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceSpec {
    pub name: String,
    pub kind: PlaceKind,
    pub geometry: Geometry,
    /// Physical obstacle the hull must not touch.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub obstacle: bool,
    /// Radius around the center inside which water disturbance adds drift.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance_radius: Option<f64>,
}

impl PlaceSpec {
    fn new(name: &str, kind: PlaceKind, geometry: Geometry) -> Self {
        Self { name: name.to_string(), kind, geometry, obstacle: false, disturbance_radius: None }
    }

    fn fountain(name: &str, cx: f64, cy: f64, r: f64, disturbance: f64) -> Self {
        Self {
            obstacle: true,
            disturbance_radius: Some(disturbance),
            ..Self::new(name, PlaceKind::Landmark, Geometry::Disc { cx, cy, r })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    pub places: Vec<PlaceSpec>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum VocabFile {
    List(Vec<PlaceSpec>),
    Env { places: Vec<PlaceSpec> },
}

impl Vocabulary {
    pub fn new(places: Vec<PlaceSpec>) -> Result<Self, Error> {
        let vocab = Self { places };
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let parsed: VocabFile =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("vocabulary: {e}")))?;
        let places = match parsed {
            VocabFile::List(p) | VocabFile::Env { places: p } => p,
        };
        Self::new(places)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<(), Error> {
        for (i, p) in self.places.iter().enumerate() {
            if p.name.trim().is_empty() {
                return Err(Error::Config(format!("place {i} has an empty name")));
            }
            if !p.geometry.is_valid() {
                return Err(Error::Config(format!("place '{}' has invalid geometry", p.name)));
            }
            if self.places[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Config(format!("duplicate place '{}'", p.name)));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&PlaceSpec> {
        self.places.iter().find(|p| p.name == name)
    }

    pub fn obstacles(&self) -> impl Iterator<Item = &PlaceSpec> {
        self.places.iter().filter(|p| p.obstacle)
    }

    /// The 100 m x 100 m lake used throughout the experiments: a dock in the
    /// bottom-right corner, three fountains, quadrants, halves and one
    /// exclusion zone.
    pub fn default_lake() -> Self {
        use PlaceKind::*;
        let rect = |x0, y0, x1, y1| Geometry::Rect { x0, y0, x1, y1 };
        let places = vec![
            PlaceSpec::new("dock", Landmark, rect(90.0, 12.0, 98.0, 20.0)),
            PlaceSpec::fountain("central fountain", 50.0, 50.0, 4.0, 10.0),
            PlaceSpec::fountain("left fountain", 25.0, 68.0, 3.0, 8.0),
            PlaceSpec::fountain("right fountain", 72.0, 30.0, 3.0, 8.0),
            PlaceSpec::new("top-left quadrant", Region, rect(0.0, 50.0, 50.0, 100.0)),
            PlaceSpec::new("top-right quadrant", Region, rect(50.0, 50.0, 100.0, 100.0)),
            PlaceSpec::new("bottom-left quadrant", Region, rect(0.0, 0.0, 50.0, 50.0)),
            PlaceSpec::new("bottom-right quadrant", Region, rect(50.0, 0.0, 100.0, 50.0)),
            PlaceSpec::new("left half", Region, rect(0.0, 0.0, 50.0, 100.0)),
            PlaceSpec::new("right half", Region, rect(50.0, 0.0, 100.0, 100.0)),
            PlaceSpec::new("top half", Region, rect(0.0, 50.0, 100.0, 100.0)),
            PlaceSpec::new("bottom half", Region, rect(0.0, 0.0, 100.0, 50.0)),
            PlaceSpec::new(WHOLE_AREA, Region, rect(0.0, 0.0, 100.0, 100.0)),
            PlaceSpec::new("exclusion zone", Region, rect(60.0, 70.0, 75.0, 85.0)),
        ];
        Self { places }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_list_and_env_object_both_load() {
        let list = r#"[{"name":"dock","kind":"landmark","geometry":{"rect":{"x0":0,"y0":0,"x1":2,"y1":2}}},
                       {"name":"pond","kind":"region","geometry":{"disc":{"cx":5,"cy":5,"r":1}}}]"#;
        let v = Vocabulary::from_json(list).unwrap();
        assert_eq!(v.places.len(), 2);
        assert_eq!(v.get("pond").unwrap().kind, PlaceKind::Region);

        let env = format!(r#"{{"width": 10, "places": {list}}}"#);
        assert_eq!(Vocabulary::from_json(&env).unwrap(), v);
    }

    #[test]
    fn rejects_duplicates_and_bad_geometry() {
        let dup = r#"[{"name":"a","kind":"landmark","geometry":{"disc":{"cx":0,"cy":0,"r":1}}},
                      {"name":"a","kind":"region","geometry":{"disc":{"cx":0,"cy":0,"r":1}}}]"#;
        assert!(Vocabulary::from_json(dup).is_err());
        let bad = r#"[{"name":"a","kind":"landmark","geometry":{"disc":{"cx":0,"cy":0,"r":-1}}}]"#;
        assert!(Vocabulary::from_json(bad).is_err());
    }

    #[test]
    fn default_lake_round_trips() {
        let v = Vocabulary::default_lake();
        let text = serde_json::to_string(&v).unwrap();
        assert_eq!(Vocabulary::from_json(&text).unwrap(), v);
        assert_eq!(v.obstacles().count(), 3);
    }
}
