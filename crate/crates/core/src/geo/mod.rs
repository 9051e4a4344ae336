//! Farm context: GeoJSON ingestion, a local planar frame, and the spatial
//! queries mission plans are built from (cardinal halves, boundary corners,
//! nearest trees).
//!
//! GeoJSON conventions understood by [`load_farm`]:
//!
//! * exactly one `Polygon` feature with property `role = "boundary"`;
//! * exactly one `Point` feature with property `role = "deploy"`;
//! * every other `Point` feature carrying an `id` property is a tree. All of its
//!   remaining properties become string attributes.
//!
//! Features with any other role are ignored.

mod rect;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use rect::{convex_hull, min_area_rect, OrientedRect};

/// Mean Earth radius (IUGG) in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Distance under which a point counts as lying on a boundary edge or midline.
pub const ON_LINE_TOLERANCE_M: f64 = 1e-6;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("malformed GeoJSON: {0}")]
    Malformed(String),
    #[error("feature {feature}: {reason}")]
    InvalidFeature { feature: String, reason: String },
    #[error("no Polygon feature with role=\"boundary\"")]
    MissingBoundary,
    #[error("feature {0}: second boundary polygon")]
    DuplicateBoundary(String),
    #[error("no Point feature with role=\"deploy\"")]
    MissingDeploy,
    #[error("feature {0}: second deploy point")]
    DuplicateDeploy(String),
    #[error("duplicate tree id \"{0}\"")]
    DuplicateTreeId(String),
    #[error("tree \"{0}\" lies outside the farm boundary")]
    TreeOutsideBoundary(String),
    #[error("deploy point lies outside the farm boundary")]
    DeployOutsideBoundary,
    #[error("boundary polygon is self-intersecting (edges {0} and {1})")]
    SelfIntersectingBoundary(usize, usize),
    #[error("degenerate boundary: {0}")]
    DegenerateBoundary(String),
    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    OutOfRange { lat: f64, lon: f64 },
    #[error("unknown direction \"{0}\" (expected north, south, east or west)")]
    UnknownDirection(String),
    #[error("unknown tree \"{0}\"")]
    UnknownTree(String),
    #[error("requested {requested} trees but only {available} are available")]
    NotEnoughTrees { requested: usize, available: usize },
}

/// WGS84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(lat.is_finite() && lon.is_finite())
            || !(-90.0..=90.0).contains(&lat)
            || !(-180.0..=180.0).contains(&lon)
        {
            return Err(GeoError::OutOfRange { lat, lon });
        }
        Ok(Self { lat, lon })
    }
}

/// Meters east (`x`) and north (`y`) of the farm origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalXY {
    pub x: f64,
    pub y: f64,
}

impl LocalXY {
    pub const ORIGIN: LocalXY = LocalXY { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: LocalXY) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    pub(crate) fn sub(self, other: LocalXY) -> LocalXY {
        LocalXY::new(self.x - other.x, self.y - other.y)
    }

    pub(crate) fn add(self, other: LocalXY) -> LocalXY {
        LocalXY::new(self.x + other.x, self.y + other.y)
    }

    pub(crate) fn scale(self, k: f64) -> LocalXY {
        LocalXY::new(self.x * k, self.y * k)
    }

    pub(crate) fn dot(self, other: LocalXY) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub(crate) fn cross(self, other: LocalXY) -> f64 {
        self.x * other.y - self.y * other.x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub id: String,
    pub position: GeoPoint,
    pub attributes: BTreeMap<String, String>,
}

/// Cardinal half of the farm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Self::North, Self::South, Self::East, Self::West];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::North => "north",
            Self::South => "south",
            Self::East => "east",
            Self::West => "west",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "north" => Ok(Self::North),
            "south" => Ok(Self::South),
            "east" => Ok(Self::East),
            "west" => Ok(Self::West),
            _ => Err(GeoError::UnknownDirection(s.to_string())),
        }
    }
}

/// Immutable farm model. Construct with [`load_farm`] or [`FarmMap::new`].
#[derive(Debug, Clone)]
pub struct FarmMap {
    trees: Vec<TreeRecord>,
    boundary: Vec<GeoPoint>,
    deploy_point: GeoPoint,
    origin: GeoPoint,
    by_id: HashMap<String, usize>,
}

impl FarmMap {
    /// Builds a farm and checks its invariants. `boundary` must not repeat the
    /// first vertex at the end.
    pub fn new(
        trees: Vec<TreeRecord>,
        boundary: Vec<GeoPoint>,
        deploy_point: GeoPoint,
    ) -> Result<Self, GeoError> {
        if boundary.len() < 3 {
            return Err(GeoError::DegenerateBoundary(format!(
                "{} vertices, need at least 3",
                boundary.len()
            )));
        }
        let origin = polygon_centroid(&boundary)?;
        let mut farm = FarmMap {
            trees: Vec::new(),
            boundary,
            deploy_point,
            origin,
            by_id: HashMap::new(),
        };

        let ring = farm.boundary_local();
        check_simple(&ring)?;

        if !point_in_polygon(&ring, farm.to_local(deploy_point)) {
            return Err(GeoError::DeployOutsideBoundary);
        }
        for (i, tree) in trees.iter().enumerate() {
            if tree.id.is_empty() {
                return Err(GeoError::InvalidFeature {
                    feature: format!("tree #{i}"),
                    reason: "empty id".into(),
                });
            }
            if farm.by_id.insert(tree.id.clone(), i).is_some() {
                return Err(GeoError::DuplicateTreeId(tree.id.clone()));
            }
            if !point_in_polygon(&ring, farm.to_local(tree.position)) {
                return Err(GeoError::TreeOutsideBoundary(tree.id.clone()));
            }
        }
        farm.trees = trees;
        Ok(farm)
    }

    /// Builds a farm from planar coordinates in meters about `anchor`. When
    /// the boundary's centroid is the planar origin, the farm's local frame
    /// coincides with the given coordinates.
    pub fn from_layout(
        anchor: GeoPoint,
        boundary: &[LocalXY],
        deploy: LocalXY,
        trees: Vec<(String, LocalXY)>,
    ) -> Result<Self, GeoError> {
        let k = std::f64::consts::PI / 180.0;
        let geo = |p: LocalXY| GeoPoint {
            lat: anchor.lat + p.y / (EARTH_RADIUS_M * k),
            lon: anchor.lon + p.x / (EARTH_RADIUS_M * (anchor.lat * k).cos() * k),
        };
        let trees = trees
            .into_iter()
            .map(|(id, p)| TreeRecord { id, position: geo(p), attributes: BTreeMap::new() })
            .collect();
        Self::new(trees, boundary.iter().map(|&p| geo(p)).collect(), geo(deploy))
    }

    pub fn trees(&self) -> &[TreeRecord] {
        &self.trees
    }

    pub fn boundary(&self) -> &[GeoPoint] {
        &self.boundary
    }

    pub fn deploy_point(&self) -> GeoPoint {
        self.deploy_point
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn tree(&self, id: &str) -> Option<&TreeRecord> {
        self.by_id.get(id).map(|&i| &self.trees[i])
    }

    pub fn tree_local(&self, id: &str) -> Option<LocalXY> {
        self.tree(id).map(|t| self.to_local(t.position))
    }

    pub fn deploy_local(&self) -> LocalXY {
        self.to_local(self.deploy_point)
    }

    pub fn boundary_local(&self) -> Vec<LocalXY> {
        self.boundary.iter().map(|&p| self.to_local(p)).collect()
    }

    /// Equirectangular projection about the farm origin.
    pub fn to_local(&self, p: GeoPoint) -> LocalXY {
        let k = std::f64::consts::PI / 180.0;
        LocalXY {
            x: EARTH_RADIUS_M * (p.lon - self.origin.lon) * (self.origin.lat * k).cos() * k,
            y: EARTH_RADIUS_M * (p.lat - self.origin.lat) * k,
        }
    }

    /// Inverse of [`FarmMap::to_local`].
    pub fn from_local(&self, p: LocalXY) -> GeoPoint {
        let k = std::f64::consts::PI / 180.0;
        GeoPoint {
            lat: self.origin.lat + p.y / (EARTH_RADIUS_M * k),
            lon: self.origin.lon + p.x / (EARTH_RADIUS_M * (self.origin.lat * k).cos() * k),
        }
    }

    /// Diagonal of the boundary's local bounding box, in meters.
    pub fn extent_m(&self) -> f64 {
        let (min, max) = bbox(&self.boundary_local());
        min.distance(max)
    }

    /// Trees in the named half of the farm. The half is cut at the midline of
    /// the boundary's local bounding box; trees on the midline belong to both
    /// opposite halves.
    pub fn trees_in_half(&self, direction: Direction) -> BTreeSet<String> {
        let (min, max) = bbox(&self.boundary_local());
        let mid = LocalXY::new((min.x + max.x) / 2.0, (min.y + max.y) / 2.0);
        self.trees
            .iter()
            .filter(|t| {
                let p = self.to_local(t.position);
                match direction {
                    Direction::North => p.y >= mid.y - ON_LINE_TOLERANCE_M,
                    Direction::South => p.y <= mid.y + ON_LINE_TOLERANCE_M,
                    Direction::East => p.x >= mid.x - ON_LINE_TOLERANCE_M,
                    Direction::West => p.x <= mid.x + ON_LINE_TOLERANCE_M,
                }
            })
            .map(|t| t.id.clone())
            .collect()
    }

    /// Corners of the minimum-area rectangle enclosing the boundary, in the
    /// local frame, ordered NW, NE, SE, SW.
    pub fn boundary_corners_local(&self) -> Result<[LocalXY; 4], GeoError> {
        Ok(min_area_rect(&self.boundary_local())?.compass_corners())
    }

    /// Same as [`FarmMap::boundary_corners_local`] in WGS84.
    pub fn boundary_corners(&self) -> Result<[GeoPoint; 4], GeoError> {
        Ok(self.boundary_corners_local()?.map(|p| self.from_local(p)))
    }

    /// The `k` trees closest to `from`, skipping `exclude`. Distances are
    /// compared at micrometer resolution; ties are broken by id.
    pub fn nearest_trees(
        &self,
        from: GeoPoint,
        k: usize,
        exclude: &BTreeSet<String>,
    ) -> Result<Vec<String>, GeoError> {
        let origin = self.to_local(from);
        let mut candidates: Vec<(f64, &str)> = self
            .trees
            .iter()
            .filter(|t| !exclude.contains(&t.id))
            .map(|t| (origin.distance(self.to_local(t.position)), t.id.as_str()))
            .collect();
        if k == 0 || k > candidates.len() {
            return Err(GeoError::NotEnoughTrees {
                requested: k,
                available: candidates.len(),
            });
        }
        let key = |d: f64| (d / ON_LINE_TOLERANCE_M).round() as i64;
        candidates.sort_by(|a, b| key(a.0).cmp(&key(b.0)).then_with(|| a.1.cmp(b.1)));
        Ok(candidates.into_iter().take(k).map(|(_, id)| id.to_string()).collect())
    }
}

/// Parses a GeoJSON FeatureCollection into a [`FarmMap`].
pub fn load_farm(geojson_text: &str) -> Result<FarmMap, GeoError> {
    let root: Value =
        serde_json::from_str(geojson_text).map_err(|e| GeoError::Malformed(e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeoError::Malformed("top-level object is not a FeatureCollection".into()));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| GeoError::Malformed("FeatureCollection has no features array".into()))?;

    let mut boundary = None;
    let mut deploy = None;
    let mut trees = Vec::new();

    for (i, feature) in features.iter().enumerate() {
        let empty = Map::new();
        let props = feature.get("properties").and_then(Value::as_object).unwrap_or(&empty);
        let role = props.get("role").and_then(Value::as_str);
        let label = feature_label(i, feature, props);
        let geometry = feature.get("geometry").ok_or_else(|| GeoError::InvalidFeature {
            feature: label.clone(),
            reason: "missing geometry".into(),
        })?;
        let gtype = geometry.get("type").and_then(Value::as_str).unwrap_or("");
        let invalid = |reason: &str| GeoError::InvalidFeature {
            feature: label.clone(),
            reason: reason.to_string(),
        };

        match role {
            Some("boundary") => {
                if gtype != "Polygon" {
                    return Err(invalid("boundary geometry must be a Polygon"));
                }
                if boundary.is_some() {
                    return Err(GeoError::DuplicateBoundary(label));
                }
                let ring = geometry
                    .get("coordinates")
                    .and_then(Value::as_array)
                    .and_then(|rings| rings.first())
                    .and_then(Value::as_array)
                    .ok_or_else(|| invalid("polygon has no exterior ring"))?;
                let mut pts = ring
                    .iter()
                    .map(|c| parse_position(c).map_err(|r| invalid(&r)))
                    .collect::<Result<Vec<_>, _>>()?;
                if pts.len() > 1 && pts.first() == pts.last() {
                    pts.pop();
                }
                boundary = Some(pts);
            }
            Some("deploy") => {
                if gtype != "Point" {
                    return Err(invalid("deploy geometry must be a Point"));
                }
                if deploy.is_some() {
                    return Err(GeoError::DuplicateDeploy(label));
                }
                let c = geometry.get("coordinates").ok_or_else(|| invalid("missing coordinates"))?;
                deploy = Some(parse_position(c).map_err(|r| invalid(&r))?);
            }
            Some(_) => {}
            None if gtype == "Point" => {
                let id = props
                    .get("id")
                    .or_else(|| feature.get("id"))
                    .map(property_string)
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| invalid("tree Point has no id property"))?;
                let c = geometry.get("coordinates").ok_or_else(|| invalid("missing coordinates"))?;
                let position = parse_position(c).map_err(|r| invalid(&r))?;
                let attributes = props
                    .iter()
                    .filter(|(k, _)| k.as_str() != "id")
                    .map(|(k, v)| (k.clone(), property_string(v)))
                    .collect();
                trees.push(TreeRecord { id, position, attributes });
            }
            None => {}
        }
    }

    let boundary = boundary.ok_or(GeoError::MissingBoundary)?;
    let deploy = deploy.ok_or(GeoError::MissingDeploy)?;
    FarmMap::new(trees, boundary, deploy)
}

fn feature_label(index: usize, feature: &Value, props: &Map<String, Value>) -> String {
    if let Some(id) = props.get("id").or_else(|| feature.get("id")) {
        return format!("\"{}\"", property_string(id));
    }
    if let Some(role) = props.get("role").and_then(Value::as_str) {
        return format!("#{index} (role={role})");
    }
    format!("#{index}")
}

fn property_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn parse_position(v: &Value) -> Result<GeoPoint, String> {
    let arr = v.as_array().ok_or("position is not an array")?;
    if arr.len() < 2 {
        return Err("position needs [lon, lat]".into());
    }
    let lon = arr[0].as_f64().ok_or("longitude is not a number")?;
    let lat = arr[1].as_f64().ok_or("latitude is not a number")?;
    GeoPoint::new(lat, lon).map_err(|e| e.to_string())
}

fn polygon_centroid(ring: &[GeoPoint]) -> Result<GeoPoint, GeoError> {
    // Shoelace in degree space, relative to the first vertex for precision.
    let base = ring[0];
    let (mut area2, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..ring.len() {
        let a = ring[i];
        let b = ring[(i + 1) % ring.len()];
        let (ax, ay) = (a.lon - base.lon, a.lat - base.lat);
        let (bx, by) = (b.lon - base.lon, b.lat - base.lat);
        let cross = ax * by - bx * ay;
        area2 += cross;
        cx += (ax + bx) * cross;
        cy += (ay + by) * cross;
    }
    let span = ring
        .iter()
        .map(|p| (p.lat - base.lat).abs().max((p.lon - base.lon).abs()))
        .fold(0.0, f64::max);
    if !(area2.abs() > 1e-9 * span * span) {
        return Err(GeoError::DegenerateBoundary("polygon has zero area".into()));
    }
    Ok(GeoPoint {
        lat: base.lat + cy / (3.0 * area2),
        lon: base.lon + cx / (3.0 * area2),
    })
}

pub(crate) fn bbox(points: &[LocalXY]) -> (LocalXY, LocalXY) {
    let mut min = LocalXY::new(f64::INFINITY, f64::INFINITY);
    let mut max = LocalXY::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    (min, max)
}

fn segment_distance(p: LocalXY, a: LocalXY, b: LocalXY) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a.add(ab.scale(t)))
}

/// Inside-or-on test for a simple polygon.
pub(crate) fn point_in_polygon(ring: &[LocalXY], p: LocalXY) -> bool {
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if segment_distance(p, a, b) <= ON_LINE_TOLERANCE_M {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn orientation(a: LocalXY, b: LocalXY, c: LocalXY) -> f64 {
    b.sub(a).cross(c.sub(a))
}

fn segments_intersect(p1: LocalXY, p2: LocalXY, q1: LocalXY, q2: LocalXY) -> bool {
    let on_segment = |a: LocalXY, b: LocalXY, c: LocalXY| {
        c.x >= a.x.min(b.x) && c.x <= a.x.max(b.x) && c.y >= a.y.min(b.y) && c.y <= a.y.max(b.y)
    };
    let d1 = orientation(q1, q2, p1);
    let d2 = orientation(q1, q2, p2);
    let d3 = orientation(p1, p2, q1);
    let d4 = orientation(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

fn check_simple(ring: &[LocalXY]) -> Result<(), GeoError> {
    let n = ring.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n]) {
                return Err(GeoError::SelfIntersectingBoundary(i, j));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LAT0: f64 = 37.3655;
    const LON0: f64 = -120.4215;

    fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
        let k = std::f64::consts::PI / 180.0;
        let dlat = (b.lat - a.lat) * k;
        let dlon = (b.lon - a.lon) * k;
        let h = (dlat / 2.0).sin().powi(2)
            + (a.lat * k).cos() * (b.lat * k).cos() * (dlon / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * h.sqrt().asin()
    }

    /// Square boundary of half-width `half` meters with an `n`×`n` tree grid of
    /// spacing `step`, all centred on the origin.
    fn grid_farm(n: usize, step: f64, half: f64) -> FarmMap {
        let scratch = FarmMap {
            trees: vec![],
            boundary: vec![],
            deploy_point: GeoPoint { lat: LAT0, lon: LON0 },
            origin: GeoPoint { lat: LAT0, lon: LON0 },
            by_id: HashMap::new(),
        };
        let boundary = [(-half, -half), (half, -half), (half, half), (-half, half)]
            .iter()
            .map(|&(x, y)| scratch.from_local(LocalXY::new(x, y)))
            .collect();
        let offset = (n as f64 - 1.0) / 2.0 * step;
        let mut trees = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let p = LocalXY::new(c as f64 * step - offset, r as f64 * step - offset);
                trees.push(TreeRecord {
                    id: format!("r{r}c{c}"),
                    position: scratch.from_local(p),
                    attributes: BTreeMap::new(),
                });
            }
        }
        FarmMap::new(trees, boundary, scratch.from_local(LocalXY::ORIGIN)).unwrap()
    }

    fn corner_grid_geojson(duplicate: bool, with_boundary: bool) -> String {
        let d = 0.0002;
        let mut feats = vec![];
        if with_boundary {
            feats.push(serde_json::json!({
                "type": "Feature", "properties": {"role": "boundary"},
                "geometry": {"type": "Polygon", "coordinates": [[
                    [LON0 - d, LAT0 - d], [LON0 + d, LAT0 - d], [LON0 + d, LAT0 + d],
                    [LON0 - d, LAT0 + d], [LON0 - d, LAT0 - d]]]}
            }));
        }
        feats.push(serde_json::json!({
            "type": "Feature", "properties": {"role": "deploy"},
            "geometry": {"type": "Point", "coordinates": [LON0, LAT0]}
        }));
        let ids = if duplicate { ["t1", "t1", "t3", "t4"] } else { ["t1", "t2", "t3", "t4"] };
        let offs = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)];
        for (id, (dx, dy)) in ids.iter().zip(offs) {
            feats.push(serde_json::json!({
                "type": "Feature",
                "properties": {"id": id, "species": "pistachio", "age": 12},
                "geometry": {"type": "Point", "coordinates": [LON0 + dx * d / 2.0, LAT0 + dy * d / 2.0]}
            }));
        }
        serde_json::json!({"type": "FeatureCollection", "features": feats}).to_string()
    }

    #[test]
    fn loads_corner_grid() {
        let farm = load_farm(&corner_grid_geojson(false, true)).unwrap();
        assert_eq!(farm.trees().len(), 4);
        assert_relative_eq!(farm.origin().lat, LAT0, epsilon = 1e-12);
        assert_relative_eq!(farm.origin().lon, LON0, epsilon = 1e-12);
        let t1 = farm.tree("t1").unwrap();
        assert_eq!(t1.attributes["species"], "pistachio");
        assert_eq!(t1.attributes["age"], "12");
    }

    #[test]
    fn duplicate_id_is_named() {
        let err = load_farm(&corner_grid_geojson(true, true)).unwrap_err();
        assert_eq!(err, GeoError::DuplicateTreeId("t1".into()));
        assert!(err.to_string().contains("t1"));
    }

    #[test]
    fn missing_boundary() {
        assert_eq!(
            load_farm(&corner_grid_geojson(false, false)).unwrap_err(),
            GeoError::MissingBoundary
        );
    }

    #[test]
    fn malformed_and_outside() {
        assert!(matches!(load_farm("{not json"), Err(GeoError::Malformed(_))));
        let text = corner_grid_geojson(false, true).replace(
            &format!("{}", LON0 + 0.0001),
            &format!("{}", LON0 + 0.01),
        );
        assert!(matches!(load_farm(&text), Err(GeoError::TreeOutsideBoundary(_))));
    }

    #[test]
    fn self_intersecting_boundary_rejected() {
        let farm = grid_farm(2, 10.0, 20.0);
        let bowtie = [(-10.0, -10.0), (10.0, 10.0), (10.0, -10.0), (-10.0, 10.0)]
            .iter()
            .map(|&(x, y)| farm.from_local(LocalXY::new(x, y)))
            .collect();
        let err = FarmMap::new(vec![], bowtie, farm.deploy_point()).unwrap_err();
        assert!(matches!(
            err,
            GeoError::SelfIntersectingBoundary(..) | GeoError::DegenerateBoundary(_)
        ));
    }

    #[test]
    fn projection_examples() {
        let farm = grid_farm(2, 10.0, 20.0);
        let o = farm.to_local(farm.origin());
        assert_eq!((o.x, o.y), (0.0, 0.0));

        let north = GeoPoint { lat: farm.origin().lat + 1e-4, lon: farm.origin().lon };
        let p = farm.to_local(north);
        assert_eq!(p.x, 0.0);
        let oracle = haversine(farm.origin(), north);
        assert!((p.y - oracle).abs() / oracle < 0.005);
        assert!((p.y - 11.12).abs() < 0.01);

        let q = GeoPoint { lat: farm.origin().lat + 3e-5, lon: farm.origin().lon - 7e-5 };
        let mirrored = GeoPoint {
            lat: 2.0 * farm.origin().lat - q.lat,
            lon: 2.0 * farm.origin().lon - q.lon,
        };
        let (a, b) = (farm.to_local(q), farm.to_local(mirrored));
        assert_relative_eq!(a.x, -b.x, epsilon = 1e-9);
        assert_relative_eq!(a.y, -b.y, epsilon = 1e-9);
    }

    #[test]
    fn halves_on_grids() {
        let farm = grid_farm(2, 10.0, 20.0);
        let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(farm.trees_in_half(Direction::North), ids(&["r1c0", "r1c1"]));
        assert_eq!(farm.trees_in_half(Direction::East), ids(&["r0c1", "r1c1"]));

        let farm = grid_farm(3, 10.0, 20.0);
        let north = farm.trees_in_half(Direction::North);
        assert_eq!(north.len(), 6);
        assert!(north.iter().all(|id| id.starts_with("r1") || id.starts_with("r2")));
        assert!(matches!("up".parse::<Direction>(), Err(GeoError::UnknownDirection(_))));
    }

    #[test]
    fn nearest_examples() {
        let farm = grid_farm(3, 10.0, 20.0);
        let me = farm.tree("r0c0").unwrap().position;
        let exclude = BTreeSet::from(["r0c0".to_string()]);
        // r0c1 and r1c0 are equidistant; lexicographic order decides.
        assert_eq!(farm.nearest_trees(me, 1, &exclude).unwrap(), vec!["r0c1"]);
        assert_eq!(farm.nearest_trees(me, 2, &exclude).unwrap(), vec!["r0c1", "r1c0"]);
        assert_eq!(
            farm.nearest_trees(me, 10, &BTreeSet::new()).unwrap_err(),
            GeoError::NotEnoughTrees { requested: 10, available: 9 }
        );
    }

    #[test]
    fn corners_of_axis_aligned_boundary() {
        let farm = grid_farm(2, 10.0, 20.0);
        let c = farm.boundary_corners_local().unwrap();
        let expect = [(-20.0, 20.0), (20.0, 20.0), (20.0, -20.0), (-20.0, -20.0)];
        for (got, (x, y)) in c.iter().zip(expect) {
            assert_relative_eq!(got.x, x, epsilon = 1e-6);
            assert_relative_eq!(got.y, y, epsilon = 1e-6);
        }
    }
}
