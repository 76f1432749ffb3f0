//! Value types shared by every stage of the engine: class tables, boxes,
//! per-frame object annotations, count vectors and named screen regions.
//!
//! Coordinates are normalized to the unit square with `y` growing downward
//! (image convention). All types are immutable once constructed.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a [`ClassTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u16);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Ordered set of object classes. Ids are contiguous `0..n` in label order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClassTable {
    labels: Vec<String>,
}

impl ClassTable {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() > u16::MAX as usize {
            return Err(Error::InvalidClassTable("too many classes".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() {
                return Err(Error::InvalidClassTable(format!("class {i} has an empty label")));
            }
            if labels[..i].contains(l) {
                return Err(Error::InvalidClassTable(format!("duplicate label `{l}`")));
            }
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<ClassId> {
        self.labels.iter().position(|l| l == label).map(|i| ClassId(i as u16))
    }

    pub fn label(&self, id: ClassId) -> Option<&str> {
        self.labels.get(id.index()).map(String::as_str)
    }

    pub fn contains(&self, id: ClassId) -> bool {
        id.index() < self.labels.len()
    }

    pub fn check(&self, id: ClassId) -> Result<()> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(Error::UnknownClassId { id: id.0, n_classes: self.len() })
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.labels.len()).map(|i| ClassId(i as u16))
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

impl TryFrom<Vec<String>> for ClassTable {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ClassTable> for Vec<String> {
    fn from(t: ClassTable) -> Self {
        t.labels
    }
}

/// Axis-aligned box in normalized frame coordinates.
///
/// Construction rejects boxes that leave the unit square or have zero area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let ok = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite())
            && (0.0..=1.0).contains(&x_min)
            && (0.0..=1.0).contains(&y_min)
            && x_max <= 1.0
            && y_max <= 1.0
            && x_min < x_max
            && y_min < y_max;
        if ok {
            Ok(Self { x_min, y_min, x_max, y_max })
        } else {
            Err(Error::InvalidBox([x_min, y_min, x_max, y_max]))
        }
    }

    /// The whole frame.
    pub fn unit() -> Self {
        Self { x_min: 0.0, y_min: 0.0, x_max: 1.0, y_max: 1.0 }
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    /// Area of the intersection with `other`; zero when they only touch.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    /// Closed-rectangle containment of a point.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;
    fn try_from(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.as_array()
    }
}

/// One detected (or annotated) object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub class_id: ClassId,
    pub bbox: BBox,
    pub track_id: Option<u64>,
    pub score: Option<f64>,
    /// Free-form string attributes such as `color = red`.
    pub attrs: BTreeMap<String, String>,
}

impl ObjectInstance {
    pub fn new(class_id: ClassId, bbox: BBox) -> Self {
        Self { class_id, bbox, track_id: None, score: None, attrs: BTreeMap::new() }
    }

    pub fn with_track(mut self, track_id: u64) -> Self {
        self.track_id = Some(track_id);
        self
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attrs.insert(key.into(), value.into());
        self
    }

    pub fn with_score(mut self, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidParameter(format!("score {score} outside [0,1]")));
        }
        self.score = Some(score);
        Ok(self)
    }
}

/// Objects present in one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameAnnotation {
    pub frame_id: u64,
    pub objects: Vec<ObjectInstance>,
}

impl FrameAnnotation {
    pub fn new(frame_id: u64, objects: Vec<ObjectInstance>) -> Self {
        Self { frame_id, objects }
    }

    pub fn empty(frame_id: u64) -> Self {
        Self { frame_id, objects: Vec::new() }
    }

    /// Checks every object's class against `classes`.
    pub fn validate(&self, classes: &ClassTable) -> Result<()> {
        self.objects.iter().try_for_each(|o| classes.check(o.class_id))
    }
}

/// Per-class object counts for one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CountVector {
    counts: Vec<u32>,
}

impl CountVector {
    pub fn zeros(n_classes: usize) -> Self {
        Self { counts: vec![0; n_classes] }
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        Self { counts }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn get(&self, id: ClassId) -> u32 {
        self.counts.get(id.index()).copied().unwrap_or(0)
    }

    pub fn set(&mut self, id: ClassId, value: u32) {
        self.counts[id.index()] = value;
    }

    pub fn increment(&mut self, id: ClassId) {
        self.counts[id.index()] += 1;
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// Count for one class, or the total when `class` is `None`.
    pub fn select(&self, class: Option<ClassId>) -> u32 {
        match class {
            Some(c) => self.get(c),
            None => self.total(),
        }
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }
}

/// Per-class counts of the objects in `frame`. With `class_filter`, every other
/// entry is zero.
pub fn count_objects(
    frame: &FrameAnnotation,
    classes: &ClassTable,
    class_filter: Option<ClassId>,
) -> Result<CountVector> {
    if let Some(c) = class_filter {
        classes.check(c)?;
    }
    let mut counts = CountVector::zeros(classes.len());
    for obj in &frame.objects {
        classes.check(obj.class_id)?;
        if class_filter.is_none_or(|c| c == obj.class_id) {
            counts.increment(obj.class_id);
        }
    }
    Ok(counts)
}

/// Named rectangle on screen, e.g. a bike lane or a quadrant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub rect: BBox,
}

impl Region {
    pub fn new(name: impl Into<String>, rect: BBox) -> Self {
        Self { name: name.into(), rect }
    }
}

/// How an object is tested against a region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", content = "tau", rename_all = "snake_case")]
pub enum RegionMode {
    /// Box centroid inside the (closed) region.
    #[default]
    Center,
    /// Fraction of the box area inside the region at least `tau`.
    OverlapFraction(f64),
}

impl RegionMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RegionMode::Center => Ok(()),
            RegionMode::OverlapFraction(t) if t > 0.0 && t <= 1.0 => Ok(()),
            RegionMode::OverlapFraction(t) => {
                Err(Error::InvalidParameter(format!("overlap fraction {t} outside (0,1]")))
            }
        }
    }
}

pub fn object_in_region(obj: &ObjectInstance, region: &Region, mode: RegionMode) -> Result<bool> {
    mode.validate()?;
    Ok(box_in_region(&obj.bbox, &region.rect, mode))
}

pub(crate) fn box_in_region(bbox: &BBox, rect: &BBox, mode: RegionMode) -> bool {
    match mode {
        RegionMode::Center => {
            let (cx, cy) = bbox.center();
            rect.contains_point(cx, cy)
        }
        RegionMode::OverlapFraction(tau) => bbox.intersection_area(rect) / bbox.area() >= tau,
    }
}

/// Named regions available to queries. The four frame quadrants are always
/// present unless overridden by name.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    regions: BTreeMap<String, Region>,
}

impl RegionSet {
    pub fn quadrants() -> Self {
        let mut regions = BTreeMap::new();
        for (name, r) in [
            ("upper_left", [0.0, 0.0, 0.5, 0.5]),
            ("upper_right", [0.5, 0.0, 1.0, 0.5]),
            ("lower_left", [0.0, 0.5, 0.5, 1.0]),
            ("lower_right", [0.5, 0.5, 1.0, 1.0]),
        ] {
            let rect = BBox::try_from(r).expect("quadrant boxes are valid");
            regions.insert(name.to_string(), Region::new(name, rect));
        }
        Self { regions }
    }

    pub fn insert(&mut self, region: Region) {
        self.regions.insert(region.name.clone(), region);
    }

    pub fn get(&self, name: &str) -> Option<&Region> {
        self.regions.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Region> {
        self.regions.values()
    }
}

impl Default for RegionSet {
    fn default() -> Self {
        Self::quadrants()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(a: [f64; 4]) -> BBox {
        BBox::try_from(a).unwrap()
    }

    fn table() -> ClassTable {
        ClassTable::new(["car", "bus", "person"]).unwrap()
    }

    #[test]
    fn class_table_rejects_duplicates_and_empty() {
        assert!(ClassTable::new(["car", "car"]).is_err());
        assert!(ClassTable::new(["car", ""]).is_err());
        let t = table();
        assert_eq!(t.id("bus"), Some(ClassId(1)));
        assert_eq!(t.label(ClassId(2)), Some("person"));
        assert_eq!(t.id("truck"), None);
    }

    #[test]
    fn degenerate_and_out_of_range_boxes_rejected() {
        assert!(BBox::new(0.2, 0.2, 0.2, 0.5).is_err());
        assert!(BBox::new(0.5, 0.2, 0.1, 0.5).is_err());
        assert!(BBox::new(-0.1, 0.2, 0.1, 0.5).is_err());
        assert!(BBox::new(0.0, 0.0, 1.1, 0.5).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 0.5).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn count_empty_frame() {
        let c = count_objects(&FrameAnnotation::empty(0), &table(), None).unwrap();
        assert_eq!(c.as_slice(), &[0, 0, 0]);
        assert_eq!(c.total(), 0);
    }

    #[test]
    fn count_two_cars_one_bus() {
        let b = bx([0.1, 0.1, 0.2, 0.2]);
        let f = FrameAnnotation::new(
            3,
            vec![
                ObjectInstance::new(ClassId(0), b),
                ObjectInstance::new(ClassId(1), b),
                ObjectInstance::new(ClassId(0), b),
            ],
        );
        let c = count_objects(&f, &table(), None).unwrap();
        assert_eq!(c.as_slice(), &[2, 1, 0]);
        assert_eq!(c.total(), 3);

        let only_bus = count_objects(&f, &table(), Some(ClassId(1))).unwrap();
        assert_eq!(only_bus.as_slice(), &[0, 1, 0]);
    }

    #[test]
    fn count_rejects_unknown_class() {
        let f = FrameAnnotation::empty(0);
        assert!(matches!(
            count_objects(&f, &table(), Some(ClassId(9))),
            Err(Error::UnknownClassId { .. })
        ));
        let bad = FrameAnnotation::new(0, vec![ObjectInstance::new(ClassId(7), BBox::unit())]);
        assert!(count_objects(&bad, &table(), None).is_err());
    }

    #[test]
    fn region_center_mode() {
        let region = Region::new("r", bx([0.0, 0.0, 0.5, 0.5]));
        let inside = ObjectInstance::new(ClassId(0), bx([0.1, 0.1, 0.2, 0.2]));
        assert!(object_in_region(&inside, &region, RegionMode::Center).unwrap());
        // centroid (0.5, 0.5) lies on the boundary, which is inclusive
        let edge = ObjectInstance::new(ClassId(0), bx([0.4, 0.4, 0.6, 0.6]));
        assert!(object_in_region(&edge, &region, RegionMode::Center).unwrap());
        let outside = ObjectInstance::new(ClassId(0), bx([0.6, 0.6, 0.7, 0.7]));
        assert!(!object_in_region(&outside, &region, RegionMode::Center).unwrap());
    }

    #[test]
    fn region_overlap_mode() {
        let region = Region::new("r", bx([0.0, 0.0, 0.5, 0.5]));
        let edge = ObjectInstance::new(ClassId(0), bx([0.4, 0.4, 0.6, 0.6]));
        // a quarter of the box lies inside
        assert!(object_in_region(&edge, &region, RegionMode::OverlapFraction(0.25)).unwrap());
        assert!(!object_in_region(&edge, &region, RegionMode::OverlapFraction(0.26)).unwrap());
        assert!(object_in_region(&edge, &region, RegionMode::OverlapFraction(0.0)).is_err());
        assert!(object_in_region(&edge, &region, RegionMode::OverlapFraction(1.5)).is_err());
    }

    #[test]
    fn quadrants_follow_image_axes() {
        let rs = RegionSet::quadrants();
        let ll = rs.get("lower_left").unwrap();
        assert_eq!(ll.rect.as_array(), [0.0, 0.5, 0.5, 1.0]);
    }
}
