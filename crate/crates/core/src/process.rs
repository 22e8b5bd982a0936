//! Marked Poisson point processes of fibre centres with direction marks.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directional::{DirectionalModel, RandomStream};
use crate::error::{invalid, Error, Result};
use crate::geometry::{Cube, Point3, Region, UnitVector3};

/// Tolerance on `|d| - 1` accepted when reading directions from a point cloud.
pub const CSV_DIRECTION_TOLERANCE: f64 = 1e-6;

/// Default cap on the expected number of simulated points.
pub const DEFAULT_MEMORY_GUARD: f64 = 1e8;

/// A fibre centre with its unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkedPoint {
    pub location: Point3,
    pub mark: UnitVector3,
}

impl MarkedPoint {
    pub fn new(location: Point3, mark: UnitVector3) -> Self {
        Self { location, mark }
    }
}

/// A realization of a marked point process inside a cubic window.
///
/// Immutable once built; points are kept in lexicographic order of location.
#[derive(Clone, Debug, PartialEq)]
pub struct FibreSystem {
    window: Cube,
    intensity: f64,
    points: Vec<MarkedPoint>,
    fibre_length: Option<f64>,
}

impl FibreSystem {
    pub fn new(window: Cube, intensity: f64, mut points: Vec<MarkedPoint>) -> Result<Self> {
        if !(intensity.is_finite() && intensity > 0.0) {
            return Err(invalid(format!("intensity must be positive, got {intensity}")));
        }
        if let Some(p) = points.iter().find(|p| !window.contains(p.location)) {
            return Err(invalid(format!("point {} lies outside window {window}", p.location)));
        }
        sort_points(&mut points);
        Ok(Self { window, intensity, points, fibre_length: None })
    }

    /// Attaches a fibre length, used only for segment export and volume fraction.
    pub fn with_fibre_length(mut self, length: f64) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(invalid(format!("fibre length must be positive, got {length}")));
        }
        self.fibre_length = Some(length);
        Ok(self)
    }

    pub fn window(&self) -> &Cube {
        &self.window
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn points(&self) -> &[MarkedPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn fibre_length(&self) -> Option<f64> {
        self.fibre_length
    }

    pub fn locations(&self) -> Vec<Point3> {
        self.points.iter().map(|p| p.location).collect()
    }

    pub fn marks(&self) -> Vec<UnitVector3> {
        self.points.iter().map(|p| p.mark).collect()
    }

    /// Fraction of the window occupied by cylinders of `radius` around each
    /// segment, ignoring overlaps: `N π r² ℓ / vol(W)`.
    pub fn volume_fraction(&self, radius: f64) -> Result<f64> {
        let length = self.fibre_length.ok_or_else(|| invalid("fibre length is not set"))?;
        Ok(self.points.len() as f64 * std::f64::consts::PI * radius * radius * length
            / self.window.volume())
    }
}

fn sort_points(points: &mut [MarkedPoint]) {
    points.sort_by(|a, b| {
        a.location
            .x
            .total_cmp(&b.location.x)
            .then(a.location.y.total_cmp(&b.location.y))
            .then(a.location.z.total_cmp(&b.location.z))
    });
}

/// Regions with a different directional law inside an otherwise homogeneous system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InhomogeneitySpec {
    pub regions: Vec<Region>,
    /// Law of marks whose location lies in some region.
    pub inside: DirectionalModel,
    /// Law of all other marks.
    pub outside: DirectionalModel,
}

impl InhomogeneitySpec {
    pub fn new(regions: Vec<Region>, inside: DirectionalModel, outside: DirectionalModel) -> Self {
        Self { regions, inside, outside }
    }

    /// Checks that regions lie in `window` and do not overlap.
    pub fn validate(&self, window: &Cube) -> Result<()> {
        let wb = window.as_box();
        for r in &self.regions {
            let bb = r.bounding_box();
            if !(wb.contains(bb.min) && wb.contains(bb.max)) {
                return Err(invalid(format!("region {r:?} leaves the window {window}")));
            }
        }
        for (i, a) in self.regions.iter().enumerate() {
            for b in &self.regions[i + 1..] {
                if regions_overlap(a, b) {
                    return Err(invalid(format!("regions {a:?} and {b:?} overlap")));
                }
            }
        }
        Ok(())
    }

    pub fn law_at(&self, p: Point3) -> &DirectionalModel {
        if self.regions.iter().any(|r| r.contains(p)) {
            &self.inside
        } else {
            &self.outside
        }
    }
}

fn regions_overlap(a: &Region, b: &Region) -> bool {
    match (a, b) {
        (Region::Cube(x), Region::Cube(y)) => x.interiors_overlap(y),
        (Region::Ball { center: c1, radius: r1 }, Region::Ball { center: c2, radius: r2 }) => {
            (*c1 - *c2).norm() < r1 + r2
        }
        (Region::Cube(c), Region::Ball { center, radius })
        | (Region::Ball { center, radius }, Region::Cube(c)) => {
            let bx = c.as_box();
            let nearest = Point3::new(
                center.x.clamp(bx.min.x, bx.max.x),
                center.y.clamp(bx.min.y, bx.max.y),
                center.z.clamp(bx.min.z, bx.max.z),
            );
            (nearest - *center).norm() < *radius
        }
    }
}

/// Simulation settings that do not change the law of the output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    /// Largest admissible expected point count `λ vol(W)`.
    pub memory_guard: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self { memory_guard: DEFAULT_MEMORY_GUARD }
    }
}

/// Expected points per generation block; fixes the block layout independently
/// of the number of worker threads.
const POINTS_PER_BLOCK: f64 = 65_536.0;

/// Homogeneous Poisson process of intensity `λ` in `window` with i.i.d. marks.
pub fn simulate_homogeneous(
    window: &Cube,
    intensity: f64,
    model: &DirectionalModel,
    rng: &RandomStream,
) -> Result<FibreSystem> {
    simulate_with(window, intensity, rng, &SimulationOptions::default(), |_| model)
}

/// Poisson process whose marks follow `spec.inside` in the regions and `spec.outside` elsewhere.
pub fn simulate_with_inhomogeneity(
    window: &Cube,
    intensity: f64,
    spec: &InhomogeneitySpec,
    rng: &RandomStream,
) -> Result<FibreSystem> {
    spec.validate(window)?;
    simulate_with(window, intensity, rng, &SimulationOptions::default(), |p| spec.law_at(p))
}

/// Like [`simulate_with_inhomogeneity`] with explicit options; an empty region
/// list gives a homogeneous system with law `spec.outside`.
pub fn simulate_with_options(
    window: &Cube,
    intensity: f64,
    spec: &InhomogeneitySpec,
    rng: &RandomStream,
    options: &SimulationOptions,
) -> Result<FibreSystem> {
    spec.validate(window)?;
    simulate_with(window, intensity, rng, options, |p| spec.law_at(p))
}

fn simulate_with<'a>(
    window: &Cube,
    intensity: f64,
    rng: &RandomStream,
    options: &SimulationOptions,
    law: impl Fn(Point3) -> &'a DirectionalModel + Sync,
) -> Result<FibreSystem> {
    if !(intensity.is_finite() && intensity > 0.0) {
        return Err(invalid(format!("intensity must be positive, got {intensity}")));
    }
    if window.side <= 0.0 {
        return Err(Error::EmptyRegion(format!("simulation window {window} has no volume")));
    }
    let expected = intensity * window.volume();
    if expected > options.memory_guard {
        return Err(invalid(format!(
            "expected point count {expected:.3e} exceeds the memory guard {:.3e}",
            options.memory_guard
        )));
    }

    let per_axis = ((expected / POINTS_PER_BLOCK).cbrt().ceil() as usize).clamp(1, 64);
    let block_side = window.side / per_axis as f64;
    let blocks = per_axis * per_axis * per_axis;

    let chunks: Vec<Vec<MarkedPoint>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let (i, j, k) = (b / (per_axis * per_axis), (b / per_axis) % per_axis, b % per_axis);
            let lo = window.origin
                + Point3::new(i as f64 * block_side, j as f64 * block_side, k as f64 * block_side);
            // The last block along each axis ends exactly on the window face.
            let hi = Point3::new(
                if i + 1 == per_axis { window.max_corner().x } else { lo.x + block_side },
                if j + 1 == per_axis { window.max_corner().y } else { lo.y + block_side },
                if k + 1 == per_axis { window.max_corner().z } else { lo.z + block_side },
            );
            let extent = hi - lo;
            let mut stream = rng.substream("block", b as u64);
            let mean = intensity * extent.x * extent.y * extent.z;
            let n = if mean > 0.0 {
                Poisson::new(mean).expect("finite positive Poisson mean").sample(&mut stream) as usize
            } else {
                0
            };
            (0..n)
                .map(|_| {
                    let loc = Point3::new(
                        lo.x + extent.x * stream.random::<f64>(),
                        lo.y + extent.y * stream.random::<f64>(),
                        lo.z + extent.z * stream.random::<f64>(),
                    );
                    let mark = law(loc).sample(&mut stream);
                    MarkedPoint::new(loc, mark)
                })
                .collect()
        })
        .collect();

    let mut points: Vec<MarkedPoint> = chunks.into_iter().flatten().collect();
    sort_points(&mut points);
    Ok(FibreSystem { window: *window, intensity, points, fibre_length: None })
}

/// The points of `system` with location in `sub`, observed in window `sub`.
pub fn restrict(system: &FibreSystem, sub: &Cube) -> FibreSystem {
    let points = system.points.iter().filter(|p| sub.contains(p.location)).copied().collect();
    FibreSystem {
        window: *sub,
        intensity: system.intensity,
        points,
        fibre_length: system.fibre_length,
    }
}

/// Segment endpoints `Y ∓ (ℓ/2) ξ` for every fibre.
pub fn fibre_segments(system: &FibreSystem) -> Result<Vec<(Point3, Point3)>> {
    let length = system.fibre_length.ok_or_else(|| invalid("fibre length is not set"))?;
    let half = 0.5 * length;
    Ok(system
        .points
        .iter()
        .map(|p| {
            let d = p.mark.as_point() * half;
            (p.location - d, p.location + d)
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct CsvRecord {
    x: f64,
    y: f64,
    z: f64,
    dx: f64,
    dy: f64,
    dz: f64,
}

/// Writes `x,y,z,dx,dy,dz` rows with shortest round-trip float formatting.
pub fn write_point_cloud<W: Write>(writer: W, points: &[MarkedPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(CsvRecord {
            x: p.location.x,
            y: p.location.y,
            z: p.location.z,
            dx: p.mark.x(),
            dy: p.mark.y(),
            dz: p.mark.z(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a point cloud; directions are renormalized when their norm is within
/// [`CSV_DIRECTION_TOLERANCE`] of 1 and rejected otherwise.
pub fn read_point_cloud<R: Read>(reader: R) -> Result<Vec<MarkedPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["x", "y", "z", "dx", "dy", "dz"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::InvalidData(format!(
            "point cloud header must be `x,y,z,dx,dy,dz`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.deserialize::<CsvRecord>().enumerate() {
        let r = rec?;
        let norm = (r.dx * r.dx + r.dy * r.dy + r.dz * r.dz).sqrt();
        if !((norm - 1.0).abs() <= CSV_DIRECTION_TOLERANCE) {
            return Err(Error::InvalidData(format!(
                "row {}: direction norm {norm} is not within {CSV_DIRECTION_TOLERANCE} of 1",
                line + 1
            )));
        }
        let location = Point3::new(r.x, r.y, r.z);
        if !location.is_finite() {
            return Err(Error::InvalidData(format!("row {}: non-finite location", line + 1)));
        }
        // Exact unit vectors are kept bit for bit so that write/read round-trips.
        let mark = UnitVector3::new(r.dx, r.dy, r.dz).or_else(|_| UnitVector3::normalize(r.dx, r.dy, r.dz))?;
        out.push(MarkedPoint::new(location, mark));
    }
    Ok(out)
}
