//! Room description and its text format.
//!
//! A scene file is line oriented; `#` starts a comment. Directives:
//!
//! ```text
//! material <name> <reflection_loss_db> <penetration_loss_db>
//! wall     <x1> <y1> <x2> <y2> <material>
//! device   <name> <x> <y>
//! region   <name> <xmin> <ymin> <xmax> <ymax>
//! ```
//!
//! `glass`, `wood` and `concrete` are predefined and may be redefined.
//! Walls may only reference materials defined above them (or predefined).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{Point2, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub reflection_loss_db: f64,
    pub penetration_loss_db: f64,
}

impl Material {
    pub fn reflection_amplitude(&self) -> f64 {
        10f64.powf(-self.reflection_loss_db / 20.0)
    }

    pub fn penetration_amplitude(&self) -> f64 {
        10f64.powf(-self.penetration_loss_db / 20.0)
    }
}

pub fn default_materials() -> BTreeMap<String, Material> {
    let mut m = BTreeMap::new();
    m.insert(
        "glass".into(),
        Material { reflection_loss_db: 3.0, penetration_loss_db: 6.0 },
    );
    m.insert(
        "wood".into(),
        Material { reflection_loss_db: 6.0, penetration_loss_db: 10.0 },
    );
    m.insert(
        "concrete".into(),
        Material { reflection_loss_db: 9.0, penetration_loss_db: 30.0 },
    );
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub segment: Segment,
    pub material: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub name: String,
    pub position: Point2,
}

/// Axis-aligned area in which trajectories are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: Point2,
    pub max: Point2,
}

impl Region {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }
}

/// Two-dimensional room model. Heights are ignored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    pub walls: Vec<Wall>,
    pub materials: BTreeMap<String, Material>,
    pub devices: Vec<Device>,
    pub regions: BTreeMap<String, Region>,
}

impl Scene {
    pub fn empty() -> Self {
        Self { materials: default_materials(), ..Default::default() }
    }

    pub fn add_wall(&mut self, a: Point2, b: Point2, material: &str) -> Result<(), SimError> {
        if a.distance(b) <= 0.0 {
            return Err(SimError::InvalidScene("wall has zero length".into()));
        }
        if !self.materials.contains_key(material) {
            return Err(SimError::InvalidScene(format!("unknown material `{material}`")));
        }
        self.walls.push(Wall { segment: Segment::new(a, b), material: material.to_string() });
        Ok(())
    }

    /// Adds the four walls of an axis-aligned rectangle.
    pub fn add_box(&mut self, min: Point2, max: Point2, material: &str) -> Result<(), SimError> {
        let c = [min, Point2::new(max.x, min.y), max, Point2::new(min.x, max.y)];
        for i in 0..4 {
            self.add_wall(c[i], c[(i + 1) % 4], material)?;
        }
        Ok(())
    }

    pub fn material(&self, wall: &Wall) -> &Material {
        &self.materials[&wall.material]
    }

    pub fn device(&self, name: &str) -> Option<&Device> {
        self.devices.iter().find(|d| d.name == name)
    }

    /// Bounding box of all walls (and devices), used when no region is named.
    pub fn bounds(&self) -> Option<Region> {
        let pts = self
            .walls
            .iter()
            .flat_map(|w| [w.segment.a, w.segment.b])
            .chain(self.devices.iter().map(|d| d.position));
        let mut it = pts.peekable();
        it.peek()?;
        let (mut lo, mut hi) = (Point2::new(f64::MAX, f64::MAX), Point2::new(f64::MIN, f64::MIN));
        for p in it {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        Some(Region { min: lo, max: hi })
    }

    pub fn region(&self, name: &str) -> Option<Region> {
        self.regions.get(name).copied()
    }

    /// Number of walls strictly crossed by the open segment `a`-`b`, skipping
    /// the walls listed in `skip`.
    pub fn crossings(&self, a: Point2, b: Point2, skip: &[usize]) -> Vec<usize> {
        let leg = Segment::new(a, b);
        self.walls
            .iter()
            .enumerate()
            .filter(|(i, w)| !skip.contains(i) && leg.crosses(&w.segment, 1e-9))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_blocked(&self, a: Point2, b: Point2) -> bool {
        !self.crossings(a, b, &[]).is_empty()
    }

    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut scene = Scene::empty();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let content = raw.split('#').next().unwrap_or("");
            let tokens = tokenize(content);
            let Some((kw, kw_col)) = tokens.first().copied() else {
                continue;
            };
            let err = |column: usize, message: String| SimError::Parse { line: line_no, column, message };
            let num = |i: usize| -> Result<f64, SimError> {
                let (tok, col) = tokens
                    .get(i)
                    .copied()
                    .ok_or_else(|| err(raw.len() + 1, format!("`{kw}` expects more fields")))?;
                let v: f64 = tok.parse().map_err(|_| err(col, format!("expected a number, found `{tok}`")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(err(col, format!("non-finite number `{tok}`")))
                }
            };
            let word = |i: usize| -> Result<(&str, usize), SimError> {
                tokens
                    .get(i)
                    .copied()
                    .ok_or_else(|| err(raw.len() + 1, format!("`{kw}` expects more fields")))
            };
            let arity = |n: usize| -> Result<(), SimError> {
                if tokens.len() > n {
                    Err(err(tokens[n].1, format!("unexpected trailing field `{}`", tokens[n].0)))
                } else {
                    Ok(())
                }
            };
            match kw {
                "material" => {
                    let (name, _) = word(1)?;
                    let refl = num(2)?;
                    let pen = num(3)?;
                    arity(4)?;
                    if refl < 0.0 || pen < 0.0 {
                        return Err(err(tokens[2].1, "losses must be non-negative dB".into()));
                    }
                    scene.materials.insert(
                        name.to_string(),
                        Material { reflection_loss_db: refl, penetration_loss_db: pen },
                    );
                }
                "wall" => {
                    let a = Point2::new(num(1)?, num(2)?);
                    let b = Point2::new(num(3)?, num(4)?);
                    let (mat, mat_col) = word(5)?;
                    arity(6)?;
                    if a.distance(b) <= 0.0 {
                        return Err(err(tokens[1].1, "wall has zero length".into()));
                    }
                    if !scene.materials.contains_key(mat) {
                        return Err(err(mat_col, format!("unknown material `{mat}`")));
                    }
                    scene.add_wall(a, b, mat)?;
                }
                "device" => {
                    let (name, col) = word(1)?;
                    let p = Point2::new(num(2)?, num(3)?);
                    arity(4)?;
                    if scene.device(name).is_some() {
                        return Err(err(col, format!("duplicate device `{name}`")));
                    }
                    scene.devices.push(Device { name: name.to_string(), position: p });
                }
                "region" => {
                    let (name, _) = word(1)?;
                    let min = Point2::new(num(2)?, num(3)?);
                    let max = Point2::new(num(4)?, num(5)?);
                    arity(6)?;
                    if !(max.x > min.x && max.y > min.y) {
                        return Err(err(tokens[2].1, "region must have positive extent".into()));
                    }
                    scene.regions.insert(name.to_string(), Region { min, max });
                }
                other => return Err(err(kw_col, format!("unknown directive `{other}`"))),
            }
        }
        Ok(scene)
    }
}

/// Splits on whitespace, keeping 1-based byte columns.
fn tokenize(line: &str) -> Vec<(&str, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((&line[s..i], s + 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((&line[s..], s + 1));
    }
    out
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, m) in &self.materials {
            writeln!(f, "material {name} {} {}", m.reflection_loss_db, m.penetration_loss_db)?;
        }
        for w in &self.walls {
            let (a, b) = (w.segment.a, w.segment.b);
            writeln!(f, "wall {} {} {} {} {}", a.x, a.y, b.x, b.y, w.material)?;
        }
        for d in &self.devices {
            writeln!(f, "device {} {} {}", d.name, d.position.x, d.position.y)?;
        }
        for (name, r) in &self.regions {
            writeln!(f, "region {name} {} {} {} {}", r.min.x, r.min.y, r.max.x, r.max.y)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# small room
material drywall 4 5
wall 0 0 4 0 concrete
wall 4 0 4 3 drywall   # east
device ap 1 1
region walk 0.5 0.5 3.5 2.5
";

    #[test]
    fn parses_all_directives() {
        let s = Scene::parse(SAMPLE).unwrap();
        assert_eq!(s.walls.len(), 2);
        assert_eq!(s.walls[1].material, "drywall");
        assert_eq!(s.device("ap").unwrap().position, Point2::new(1.0, 1.0));
        assert_eq!(s.region("walk").unwrap().max, Point2::new(3.5, 2.5));
        assert!(s.materials.contains_key("glass"));
    }

    #[test]
    fn round_trips_through_display() {
        let s = Scene::parse(SAMPLE).unwrap();
        let again = Scene::parse(&s.to_string()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn reports_line_and_column() {
        let bad = "wall 0 0 1 0 concrete\nwall 0 0 x 1 concrete\n";
        match Scene::parse(bad) {
            Err(SimError::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, 10);
            }
            other => panic!("unexpected {other:?}"),
        }
        match Scene::parse("  wall 0 0 1 0 marble") {
            Err(SimError::Parse { line: 1, column: 16, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(Scene::parse("window 1 2"), Err(SimError::Parse { column: 1, .. })));
        assert!(matches!(Scene::parse("wall 1 1 1 1 wood"), Err(SimError::Parse { .. })));
        assert!(matches!(Scene::parse("material foo -1 2"), Err(SimError::Parse { .. })));
    }
}
