//! Geometric priors: per-pixel local-domain labels derived from image labels or
//! from a fixed dataset-wide layout.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::image::{Grid, Mask};
use crate::{Error, Result};

pub type LocalDomainId = u8;

/// Id reserved for pixels outside every declared local domain.
pub const OTHER: LocalDomainId = 0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalDomain {
    pub id: LocalDomainId,
    pub name: String,
}

/// Declared local domains of a task. Always contains id 0 (`other`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LocalDomain>", into = "Vec<LocalDomain>")]
pub struct DomainTable {
    domains: Vec<LocalDomain>,
}

impl TryFrom<Vec<LocalDomain>> for DomainTable {
    type Error = Error;

    fn try_from(v: Vec<LocalDomain>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DomainTable> for Vec<LocalDomain> {
    fn from(t: DomainTable) -> Self {
        t.domains
    }
}

impl DomainTable {
    pub fn new(mut domains: Vec<LocalDomain>) -> Result<Self> {
        if !domains.iter().any(|d| d.id == OTHER) {
            domains.insert(
                0,
                LocalDomain {
                    id: OTHER,
                    name: "other".into(),
                },
            );
        }
        for (i, d) in domains.iter().enumerate() {
            if d.id == OTHER && d.name != "other" {
                return Err(Error::Config(format!("id 0 is reserved for `other`, got `{}`", d.name)));
            }
            if domains[..i].iter().any(|e| e.id == d.id || e.name == d.name) {
                return Err(Error::Config(format!("duplicate local domain `{}` ({})", d.name, d.id)));
            }
        }
        domains.sort_by_key(|d| d.id);
        Ok(Self { domains })
    }

    /// Convenience constructor from `(id, name)` pairs.
    pub fn from_pairs(pairs: &[(LocalDomainId, &str)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(id, name)| LocalDomain { id, name: name.into() })
                .collect(),
        )
    }

    pub fn id_of(&self, name: &str) -> Result<LocalDomainId> {
        self.domains
            .iter()
            .find(|d| d.name == name)
            .map(|d| d.id)
            .ok_or_else(|| Error::UndeclaredDomain(name.into()))
    }

    pub fn name_of(&self, id: LocalDomainId) -> Option<&str> {
        self.domains.iter().find(|d| d.id == id).map(|d| d.name.as_str())
    }

    pub fn contains(&self, id: LocalDomainId) -> bool {
        self.domains.iter().any(|d| d.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = LocalDomainId> + '_ {
        self.domains.iter().map(|d| d.id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    PerImageLabels,
    DatasetFixed,
}

/// Full-resolution local-domain map `M(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometricPrior {
    mask: Grid<LocalDomainId>,
    source: PriorSource,
    domains: DomainTable,
}

impl GeometricPrior {
    pub fn new(mask: Grid<LocalDomainId>, source: PriorSource, domains: DomainTable) -> Result<Self> {
        if let Some(bad) = mask.data().iter().find(|&&v| !domains.contains(v)) {
            return Err(Error::UndeclaredDomain(format!("id {bad}")));
        }
        Ok(Self { mask, source, domains })
    }

    pub fn mask(&self) -> &Grid<LocalDomainId> {
        &self.mask
    }

    pub fn source(&self) -> PriorSource {
        self.source
    }

    pub fn domains(&self) -> &DomainTable {
        &self.domains
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }

    pub fn count(&self, id: LocalDomainId) -> usize {
        self.mask.data().iter().filter(|&&v| v == id).count()
    }
}

/// `⟦M(x) = d⟧` as a 0/1 mask.
pub fn indicator_mask(prior: &GeometricPrior, d: LocalDomainId) -> Result<Mask> {
    if !prior.domains.contains(d) {
        return Err(Error::UndeclaredDomain(format!("id {d}")));
    }
    Ok(prior.mask.map(|v| if v == d { 1.0 } else { 0.0 }))
}

/// Lane polylines in continuous pixel coordinates `[x, y]` (pixel centres at `+0.5`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LaneLabels {
    pub lanes: Vec<Vec<[f64; 2]>>,
}

/// Task-specific label record handed to [`build_prior`].
#[derive(Clone, Copy, Debug)]
pub enum Labels<'a> {
    Lanes(&'a LaneLabels),
    Semantic(&'a Grid<u8>),
    None,
}

fn default_lane_half_width() -> f64 {
    4.0
}

fn default_disc_fraction() -> f64 {
    0.25
}

fn default_corner_fraction() -> f64 {
    0.2
}

/// How a prior is derived from labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PriorRule {
    /// Band of half-width `lane_half_width` around each polyline, surrounded by a
    /// dilation ring of width `asphalt_width` (default 3× the half-width).
    Lane {
        lane: String,
        asphalt: String,
        #[serde(default = "default_lane_half_width")]
        lane_half_width: f64,
        #[serde(default)]
        asphalt_width: Option<f64>,
    },
    /// Relabel semantic classes (`classes`: name → class id) into local domains
    /// (`mapping`: class name → domain name).
    Semantic {
        classes: BTreeMap<String, u8>,
        mapping: BTreeMap<String, String>,
    },
    /// Dataset-wide layout: centred disc (radius `disc_fraction · min(h, w)`) and four
    /// corner squares (side `floor(corner_fraction · min(h, w))`).
    Fixed {
        in_focus: String,
        out_of_focus: String,
        #[serde(default = "default_disc_fraction")]
        disc_fraction: f64,
        #[serde(default = "default_corner_fraction")]
        corner_fraction: f64,
    },
}

impl PriorRule {
    pub fn source(&self) -> PriorSource {
        match self {
            PriorRule::Fixed { .. } => PriorSource::DatasetFixed,
            _ => PriorSource::PerImageLabels,
        }
    }
}

pub fn build_prior(
    rule: &PriorRule,
    labels: Labels<'_>,
    domains: &DomainTable,
    height: usize,
    width: usize,
) -> Result<GeometricPrior> {
    let mask = match (rule, labels) {
        (
            PriorRule::Lane {
                lane,
                asphalt,
                lane_half_width,
                asphalt_width,
            },
            Labels::Lanes(l),
        ) => {
            let ring = asphalt_width.unwrap_or(3.0 * lane_half_width);
            lane_mask(
                l,
                domains.id_of(lane)?,
                domains.id_of(asphalt)?,
                *lane_half_width,
                ring,
                height,
                width,
            )?
        }
        (PriorRule::Semantic { classes, mapping }, Labels::Semantic(map)) => {
            if map.dims() != (height, width) {
                return Err(Error::ShapeMismatch(format!(
                    "semantic map {:?} vs image {height}x{width}",
                    map.dims()
                )));
            }
            let mut lut = [OTHER; 256];
            for (class, domain) in mapping {
                let cid = *classes.get(class).ok_or_else(|| Error::UnknownClass(class.clone()))?;
                lut[cid as usize] = domains.id_of(domain)?;
            }
            map.map(|c| lut[c as usize])
        }
        (
            PriorRule::Fixed {
                in_focus,
                out_of_focus,
                disc_fraction,
                corner_fraction,
            },
            _,
        ) => fixed_mask(
            domains.id_of(in_focus)?,
            domains.id_of(out_of_focus)?,
            *disc_fraction,
            *corner_fraction,
            height,
            width,
        )?,
        (rule, labels) => {
            return Err(Error::Config(format!(
                "labels {labels:?} do not match prior rule {:?}",
                rule.source()
            )))
        }
    };
    GeometricPrior::new(mask, rule.source(), domains.clone())
}

fn segment_distance(p: (f64, f64), a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a[0]) * dx + (p.1 - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

fn lane_mask(
    labels: &LaneLabels,
    lane_id: LocalDomainId,
    asphalt_id: LocalDomainId,
    half_width: f64,
    ring: f64,
    height: usize,
    width: usize,
) -> Result<Grid<LocalDomainId>> {
    if half_width <= 0.0 || ring < 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "lane half-width {half_width} / asphalt ring {ring}"
        )));
    }
    let reach = half_width + ring;
    let mut dist = Grid::new(height, width, f64::INFINITY);
    for line in &labels.lanes {
        if line.is_empty() {
            return Err(Error::DegenerateGeometry("empty lane polyline".into()));
        }
        let segments: Vec<([f64; 2], [f64; 2])> = if line.len() == 1 {
            vec![(line[0], line[0])]
        } else {
            line.windows(2).map(|w| (w[0], w[1])).collect()
        };
        for (a, b) in segments {
            let x0 = (a[0].min(b[0]) - reach - 1.0).floor().max(0.0) as usize;
            let x1 = ((a[0].max(b[0]) + reach + 1.0).ceil().max(0.0) as usize).min(width);
            let y0 = (a[1].min(b[1]) - reach - 1.0).floor().max(0.0) as usize;
            let y1 = ((a[1].max(b[1]) + reach + 1.0).ceil().max(0.0) as usize).min(height);
            for y in y0..y1 {
                for x in x0..x1 {
                    let d = segment_distance((x as f64 + 0.5, y as f64 + 0.5), a, b);
                    if d < dist.get(y, x) {
                        dist.set(y, x, d);
                    }
                }
            }
        }
    }
    let mask = dist.map(|d| {
        if d <= half_width {
            lane_id
        } else if d <= reach {
            asphalt_id
        } else {
            OTHER
        }
    });
    if !mask.data().contains(&lane_id) {
        return Err(Error::DegenerateGeometry("lane band has zero area".into()));
    }
    Ok(mask)
}

fn fixed_mask(
    in_id: LocalDomainId,
    out_id: LocalDomainId,
    disc_fraction: f64,
    corner_fraction: f64,
    height: usize,
    width: usize,
) -> Result<Grid<LocalDomainId>> {
    let short = height.min(width) as f64;
    let radius = disc_fraction * short;
    let side = (corner_fraction * short).floor() as usize;
    if side == 0 {
        return Err(Error::DegenerateGeometry(format!("corner side {corner_fraction}·{short} rounds to 0")));
    }
    let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
    let mask = Grid::from_fn(height, width, |y, x| {
        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
        let in_corner = (y < side || y >= height - side) && (x < side || x >= width - side);
        if dy * dy + dx * dx <= radius * radius {
            in_id
        } else if in_corner {
            out_id
        } else {
            OTHER
        }
    });
    if !mask.data().contains(&in_id) {
        return Err(Error::DegenerateGeometry("in-focus disc has zero area".into()));
    }
    Ok(mask)
}
