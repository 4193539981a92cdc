//! Piecewise constant coefficient fields and the periodic channel pattern.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CoarsePartition, SubdomainMesh};

/// One positive value per fine triangle, stored per subdomain.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    values: Vec<Vec<f64>>,
}

impl CoefficientField {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        for (subdomain, vals) in values.iter().enumerate() {
            if let Some((triangle, &value)) =
                vals.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite()))
            {
                return Err(Error::NonPositiveCoefficient {
                    subdomain,
                    triangle,
                    value,
                });
            }
        }
        Ok(Self { values })
    }

    pub fn constant(meshes: &[SubdomainMesh], value: f64) -> Result<Self> {
        Self::from_fn(meshes, |_, _| value)
    }

    /// Evaluates `alpha` at every triangle barycenter.
    pub fn from_fn(meshes: &[SubdomainMesh], alpha: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = meshes
            .iter()
            .map(|m| {
                (0..m.triangles.len())
                    .map(|t| {
                        let [x, y] = m.barycenter(t);
                        alpha(x, y)
                    })
                    .collect()
            })
            .collect();
        Self::new(values)
    }

    pub fn subdomain(&self, id: usize) -> &[f64] {
        &self.values[id]
    }

    pub fn get(&self, subdomain: usize, triangle: usize) -> f64 {
        self.values[subdomain][triangle]
    }

    pub fn n_subdomains(&self) -> usize {
        self.values.len()
    }

    pub fn check_mesh(&self, mesh: &SubdomainMesh) -> Result<()> {
        match self.values.get(mesh.subdomain) {
            None => Err(Error::FieldMismatch {
                subdomain: mesh.subdomain,
                reason: "no values for this subdomain".into(),
            }),
            Some(v) if v.len() != mesh.triangles.len() => Err(Error::FieldMismatch {
                subdomain: mesh.subdomain,
                reason: format!("{} values for {} triangles", v.len(), mesh.triangles.len()),
            }),
            Some(_) => Ok(()),
        }
    }

    /// Scales every value by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.values
                .iter()
                .map(|v| v.iter().map(|a| a * factor).collect())
                .collect(),
        )
    }

    /// Writes `subdomain,triangle,alpha` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["subdomain", "triangle", "alpha"])?;
        for (s, vals) in self.values.iter().enumerate() {
            for (t, a) in vals.iter().enumerate() {
                w.write_record([s.to_string(), t.to_string(), format!("{a:e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-subdomain coefficient minima over the whole subdomain and over its boundary layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubdomainMinima {
    pub full: f64,
    pub layer: f64,
}

pub fn subdomain_minima(field: &CoefficientField, mesh: &SubdomainMesh) -> Result<SubdomainMinima> {
    field.check_mesh(mesh)?;
    let vals = field.subdomain(mesh.subdomain);
    let full = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let layer = mesh
        .boundary_layer
        .iter()
        .map(|&t| vals[t])
        .fold(f64::INFINITY, f64::min);
    Ok(SubdomainMinima { full, layer })
}

/// Background with crossing strips and L-shaped corner channels, repeated
/// every `period` subdomains in both directions.
///
/// All lengths are in units of the subdomain size. Inside every subdomain a
/// vertical and a horizontal crossing strip run edge to edge, so crossing
/// channels cut through both kinds of interfaces. Around each designated
/// cross point of the period block an L-shaped corner channel starts in the
/// lower-left subdomain and reaches into its right and upper neighbours.
/// Crossing channels take precedence where both overlap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelPattern {
    pub alpha_background: f64,
    pub alpha_corner: f64,
    pub alpha_crossing: f64,
    pub width: f64,
    pub period: usize,
    /// Offset of the vertical (x) and horizontal (y) crossing strips inside a subdomain.
    pub crossing_offset: [f64; 2],
    /// Cross points of the period block that carry a corner channel.
    pub corner_sites: Vec<[usize; 2]>,
    /// Distance between the corner channel and the partition lines through its cross point.
    pub corner_gap: f64,
    /// How far each arm reaches past the cross point.
    pub corner_arm: f64,
}

impl Default for ChannelPattern {
    fn default() -> Self {
        Self {
            alpha_background: 1.0,
            alpha_corner: 1.0,
            alpha_crossing: 1.0,
            width: 1.0 / 6.0,
            period: 3,
            crossing_offset: [1.0 / 3.0, 1.0 / 2.0],
            corner_sites: vec![[1, 1], [2, 2]],
            corner_gap: 1.0 / 6.0,
            corner_arm: 1.0 / 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Background,
    Corner,
    Crossing,
}

impl ChannelPattern {
    pub fn with_alphas(background: f64, corner: f64, crossing: f64) -> Self {
        Self {
            alpha_background: background,
            alpha_corner: corner,
            alpha_crossing: crossing,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [
            ("alpha_background", self.alpha_background),
            ("alpha_corner", self.alpha_corner),
            ("alpha_crossing", self.alpha_crossing),
        ] {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {a}")));
            }
        }
        if self.period == 0 || !(self.width > 0.0) {
            return Err(Error::InvalidArgument(
                "channel width and period must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Region containing the point `(u, v)` given in subdomain units.
    pub fn region(&self, u: f64, v: f64) -> Region {
        let w = self.width;
        let in_strip = |s: f64, offset: f64| {
            let f = s.rem_euclid(1.0);
            f > offset && f < offset + w
        };
        if in_strip(u, self.crossing_offset[0]) || in_strip(v, self.crossing_offset[1]) {
            return Region::Crossing;
        }

        let p = self.period as f64;
        let (bu, bv) = (u.rem_euclid(p), v.rem_euclid(p));
        let wrap = |d: f64| {
            let d = d.rem_euclid(p);
            if d >= p / 2.0 {
                d - p
            } else {
                d
            }
        };
        let (g, arm) = (self.corner_gap, self.corner_arm);
        let inside = |d: f64, lo: f64, hi: f64| d > lo && d < hi;
        for site in &self.corner_sites {
            let du = wrap(bu - site[0] as f64);
            let dv = wrap(bv - site[1] as f64);
            let horizontal = inside(du, -g - w, arm) && inside(dv, -g - w, -g);
            let vertical = inside(du, -g - w, -g) && inside(dv, -g - w, arm);
            if horizontal || vertical {
                return Region::Corner;
            }
        }
        Region::Background
    }

    pub fn value(&self, region: Region) -> f64 {
        match region {
            Region::Background => self.alpha_background,
            Region::Corner => self.alpha_corner,
            Region::Crossing => self.alpha_crossing,
        }
    }
}

pub fn sample_pattern(
    pattern: &ChannelPattern,
    partition: &CoarsePartition,
    meshes: &[SubdomainMesh],
) -> Result<CoefficientField> {
    pattern.validate()?;
    let (sx, sy) = (partition.nx as f64, partition.ny as f64);
    CoefficientField::from_fn(meshes, |x, y| pattern.value(pattern.region(x * sx, y * sy)))
}
