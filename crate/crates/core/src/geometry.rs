//! Euclidean and spherical primitives.
//!
//! Windows are closed axis-aligned cubes. Minkowski erosion is implemented as
//! `{x : x + S ⊆ O}`, which for cubes anchored at the origin gives
//! `[0, w]³ ⊖ [0, b]³ = [0, w - b]³`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::GaussRule;

/// Tolerance on `|v|² - 1` accepted by [`UnitVector3::new`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-12;

/// A point (or displacement) in ℝ³.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn splat(v: f64) -> Self {
        Self { x: v, y: v, z: v }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        p.to_array()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// A direction on S².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct UnitVector3 {
    x: f64,
    y: f64,
    z: f64,
}

impl UnitVector3 {
    pub const E1: UnitVector3 = UnitVector3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const E2: UnitVector3 = UnitVector3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const E3: UnitVector3 = UnitVector3 { x: 0.0, y: 0.0, z: 1.0 };

    /// Accepts components whose squared norm is 1 within [`UNIT_NORM_TOLERANCE`].
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n2 = x * x + y * y + z * z;
        if !n2.is_finite() || (n2 - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(invalid(format!(
                "({x}, {y}, {z}) is not unit-normalized (|v|² = {n2})"
            )));
        }
        Ok(Self { x, y, z })
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn normalize(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(invalid(format!("cannot normalize ({x}, {y}, {z})")));
        }
        Ok(Self { x: x / n, y: y / n, z: z / n })
    }

    /// Caller guarantees unit norm. Used on hot paths where the input is a
    /// rotation of a unit vector.
    pub(crate) fn new_unchecked(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Point on the sphere from spherical coordinates about `E3`.
    pub fn from_polar(cos_theta: f64, phi: f64) -> Self {
        let c = cos_theta.clamp(-1.0, 1.0);
        let s = (1.0 - c * c).max(0.0).sqrt();
        let (sp, cp) = phi.sin_cos();
        Self { x: s * cp, y: s * sp, z: c }
    }

    pub fn x(self) -> f64 {
        self.x
    }

    pub fn y(self) -> f64 {
        self.y
    }

    pub fn z(self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn as_point(self) -> Point3 {
        Point3::new(self.x, self.y, self.z)
    }

    pub fn dot(self, other: UnitVector3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn antipode(self) -> Self {
        Self { x: -self.x, y: -self.y, z: -self.z }
    }

    /// An orthonormal frame `(u, v, self)`.
    pub fn frame(self) -> (UnitVector3, UnitVector3) {
        // Branch-free construction (Duff et al. 2017).
        let sign = 1.0_f64.copysign(self.z);
        let a = -1.0 / (sign + self.z);
        let b = self.x * self.y * a;
        let u = Self {
            x: 1.0 + sign * self.x * self.x * a,
            y: sign * b,
            z: -sign * self.x,
        };
        let v = Self { x: b, y: sign + self.y * self.y * a, z: -self.y };
        (u, v)
    }

    /// The vector with local coordinates `(a, b, c)` in the frame `(u, v, self)`.
    pub fn from_local(self, a: f64, b: f64, c: f64) -> UnitVector3 {
        let (u, v) = self.frame();
        Self {
            x: a * u.x + b * v.x + c * self.x,
            y: a * u.y + b * v.y + c * self.y,
            z: a * u.z + b * v.z + c * self.z,
        }
    }
}

impl TryFrom<[f64; 3]> for UnitVector3 {
    type Error = Error;
    fn try_from(a: [f64; 3]) -> Result<Self> {
        UnitVector3::new(a[0], a[1], a[2])
    }
}

impl From<UnitVector3> for [f64; 3] {
    fn from(v: UnitVector3) -> Self {
        v.to_array()
    }
}

/// Geodesic (great-circle) distance `arccos⟨η, ξ⟩` in `[0, π]`.
///
/// Computed as `atan2(|η × ξ|, ⟨η, ξ⟩)`, which stays accurate for nearly
/// parallel or antipodal directions where `acos` loses half the digits.
pub fn geodesic_distance(eta: UnitVector3, xi: UnitVector3) -> f64 {
    let cx = eta.y * xi.z - eta.z * xi.y;
    let cy = eta.z * xi.x - eta.x * xi.z;
    let cz = eta.x * xi.y - eta.y * xi.x;
    (cx * cx + cy * cy + cz * cz).sqrt().atan2(eta.dot(xi))
}

/// Volume density function `θ_η(ξ) = |sin r| / r`, `r = d_g(η, ξ)`.
///
/// Equals 1 at `r = 0`. At `r = π` the value is 0 and its reciprocal, which
/// the kernel estimator needs, does not exist.
pub fn volume_density(eta: UnitVector3, xi: UnitVector3) -> Result<f64> {
    let r = geodesic_distance(eta, xi);
    volume_density_at(r)
}

/// [`volume_density`] as a function of the geodesic distance.
pub fn volume_density_at(r: f64) -> Result<f64> {
    if !(0.0..PI).contains(&r) {
        return Err(Error::Numerical(format!(
            "volume density undefined at geodesic distance {r}"
        )));
    }
    if r < 1e-8 {
        return Ok(1.0 - r * r / 6.0);
    }
    Ok(r.sin().abs() / r)
}

/// Closed axis-aligned cube `origin + [0, side]³`.
///
/// A zero side is allowed and acts as the identity for [`erode`] and [`dilate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub origin: Point3,
    pub side: f64,
}

impl Cube {
    pub fn new(origin: Point3, side: f64) -> Result<Self> {
        if !(side.is_finite() && side >= 0.0) || !origin.is_finite() {
            return Err(invalid(format!("cube side must be finite and >= 0, got {side}")));
        }
        Ok(Self { origin, side })
    }

    /// `[0, side]³`.
    pub fn at_origin(side: f64) -> Result<Self> {
        Self::new(Point3::ORIGIN, side)
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(3)
    }

    pub fn max_corner(&self) -> Point3 {
        self.origin + Point3::splat(self.side)
    }

    pub fn contains(&self, p: Point3) -> bool {
        let hi = self.max_corner();
        p.x >= self.origin.x
            && p.y >= self.origin.y
            && p.z >= self.origin.z
            && p.x <= hi.x
            && p.y <= hi.y
            && p.z <= hi.z
    }

    /// `self + t`.
    pub fn translate(&self, t: Point3) -> Cube {
        Cube { origin: self.origin + t, side: self.side }
    }

    /// True when `other ⊆ self`.
    pub fn contains_cube(&self, other: &Cube) -> bool {
        self.contains(other.origin) && self.contains(other.max_corner())
    }

    pub fn as_box(&self) -> Aabb {
        Aabb { min: self.origin, max: self.max_corner() }
    }

    /// Closed cubes that share at most boundary points are treated as disjoint.
    pub fn interiors_overlap(&self, other: &Cube) -> bool {
        self.as_box().intersection(&other.as_box()).is_some_and(|b| b.volume() > 0.0)
    }
}

impl fmt::Display for Cube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[0,{}]³ + {}", self.side, self.origin)
    }
}

/// Minkowski erosion `{x : x + structuring ⊆ outer}`.
///
/// Returns `None` when the structuring cube is at least as large as `outer`
/// (a zero-side structuring element leaves `outer` unchanged).
pub fn erode(outer: &Cube, structuring: &Cube) -> Option<Cube> {
    let side = outer.side - structuring.side;
    if structuring.side > 0.0 && side <= 0.0 {
        return None;
    }
    if side < 0.0 {
        return None;
    }
    Some(Cube { origin: outer.origin - structuring.origin, side })
}

/// Minkowski sum `inner ⊕ structuring`; sides add and origins add.
pub fn dilate(inner: &Cube, structuring: &Cube) -> Cube {
    Cube { origin: inner.origin + structuring.origin, side: inner.side + structuring.side }
}

/// Closed axis-aligned box. Intersections of cube windows are boxes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn volume(&self) -> f64 {
        (self.max.x - self.min.x).max(0.0)
            * (self.max.y - self.min.y).max(0.0)
            * (self.max.z - self.min.z).max(0.0)
    }

    pub fn contains(&self, p: Point3) -> bool {
        p.x >= self.min.x
            && p.y >= self.min.y
            && p.z >= self.min.z
            && p.x <= self.max.x
            && p.y <= self.max.y
            && p.z <= self.max.z
    }

    pub fn intersection(&self, other: &Aabb) -> Option<Aabb> {
        let min = Point3::new(
            self.min.x.max(other.min.x),
            self.min.y.max(other.min.y),
            self.min.z.max(other.min.z),
        );
        let max = Point3::new(
            self.max.x.min(other.max.x),
            self.max.y.min(other.max.y),
            self.max.z.min(other.max.z),
        );
        (min.x <= max.x && min.y <= max.y && min.z <= max.z).then_some(Aabb { min, max })
    }
}

/// A region of ℝ³ in which fibre directions may follow a different law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Region {
    Cube(Cube),
    Ball { center: Point3, radius: f64 },
}

impl Region {
    pub fn contains(&self, p: Point3) -> bool {
        match self {
            Region::Cube(c) => c.contains(p),
            Region::Ball { center, radius } => (p - *center).norm() <= *radius,
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Region::Cube(c) => c.volume(),
            Region::Ball { radius, .. } => 4.0 / 3.0 * PI * radius.powi(3),
        }
    }

    pub fn bounding_box(&self) -> Aabb {
        match self {
            Region::Cube(c) => c.as_box(),
            Region::Ball { center, radius } => Aabb {
                min: *center - Point3::splat(*radius),
                max: *center + Point3::splat(*radius),
            },
        }
    }

    /// True when the window `anchor + [0, side]³` lies inside the region.
    pub fn contains_window(&self, anchor: Point3, side: f64) -> bool {
        let window = Cube { origin: anchor, side };
        match self {
            Region::Cube(c) => c.contains_cube(&window),
            // A ball is convex, so containing the eight corners suffices.
            Region::Ball { .. } => (0..8).all(|k| {
                let corner = anchor
                    + Point3::new(
                        side * (k & 1) as f64,
                        side * ((k >> 1) & 1) as f64,
                        side * ((k >> 2) & 1) as f64,
                    );
                self.contains(corner)
            }),
        }
    }

    /// True when the window `anchor + [0, side]³` meets the region.
    pub fn meets_window(&self, anchor: Point3, side: f64) -> bool {
        let window = Cube { origin: anchor, side }.as_box();
        match self {
            Region::Cube(c) => c.as_box().intersection(&window).is_some(),
            Region::Ball { center, radius } => {
                let nearest = Point3::new(
                    center.x.clamp(window.min.x, window.max.x),
                    center.y.clamp(window.min.y, window.max.y),
                    center.z.clamp(window.min.z, window.max.z),
                );
                (nearest - *center).norm() <= *radius
            }
        }
    }
}

impl From<Cube> for Region {
    fn from(c: Cube) -> Self {
        Region::Cube(c)
    }
}

/// Points of `rℤ³` inside a closed cube, enumerated lexicographically.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub bounds: Cube,
    pub mesh: f64,
}

/// Slack for lattice nodes that sit on the cube boundary up to rounding.
const LATTICE_SLACK: f64 = 1e-9;

impl Lattice {
    pub fn new(bounds: Cube, mesh: f64) -> Result<Self> {
        if !(mesh.is_finite() && mesh > 0.0) {
            return Err(invalid(format!("lattice mesh must be positive, got {mesh}")));
        }
        let lattice = Self { bounds, mesh };
        if lattice.len() == 0 {
            return Err(Error::EmptyRegion(format!(
                "no point of the lattice with mesh {mesh} lies in {bounds}"
            )));
        }
        Ok(lattice)
    }

    /// Lattice over an optional (possibly empty) bounding cube, as returned by [`erode`].
    pub fn over(bounds: Option<Cube>, mesh: f64) -> Result<Self> {
        let bounds = bounds
            .ok_or_else(|| Error::EmptyRegion("lattice bounding cube is empty".into()))?;
        Self::new(bounds, mesh)
    }

    fn axis_range(&self, lo: f64) -> (i64, i64) {
        let first = (lo / self.mesh - LATTICE_SLACK).ceil() as i64;
        let last = ((lo + self.bounds.side) / self.mesh + LATTICE_SLACK).floor() as i64;
        (first, last)
    }

    /// Index ranges `(first, count)` along x, y and z.
    pub fn axes(&self) -> [(i64, usize); 3] {
        let o = self.bounds.origin;
        [o.x, o.y, o.z].map(|lo| {
            let (a, b) = self.axis_range(lo);
            (a, if b >= a { (b - a + 1) as usize } else { 0 })
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.axes().map(|(_, n)| n)
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `i`-th point in lexicographic `(x, y, z)` order.
    pub fn point(&self, index: usize) -> Point3 {
        let [(ax, _), (ay, ny), (az, nz)] = self.axes();
        let k = index % nz;
        let j = (index / nz) % ny;
        let i = index / (ny * nz);
        Point3::new(
            (ax + i as i64) as f64 * self.mesh,
            (ay + j as i64) as f64 * self.mesh,
            (az + k as i64) as f64 * self.mesh,
        )
    }

    pub fn points(&self) -> Vec<Point3> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Volume represented by one lattice node.
    pub fn cell_volume(&self) -> f64 {
        self.mesh.powi(3)
    }
}

/// A quadrature grid on S².
///
/// Weights are positive and sum to 4π.
#[derive(Clone, Debug)]
pub struct SphereGrid {
    nodes: Vec<UnitVector3>,
    weights: Vec<f64>,
    bands: Vec<Band>,
}

/// One latitude band of an equal-area grid: `z ∈ [z_low, z_high]`, split into
/// `cells` equal azimuthal sectors starting at node index `first`.
#[derive(Clone, Copy, Debug)]
struct Band {
    z_low: f64,
    z_high: f64,
    cells: usize,
    first: usize,
}

/// A cell of an equal-area grid in `(z, φ)` coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphereCell {
    pub z_low: f64,
    pub z_high: f64,
    pub phi_low: f64,
    pub phi_high: f64,
}

impl SphereCell {
    pub fn area(&self) -> f64 {
        (self.z_high - self.z_low) * (self.phi_high - self.phi_low)
    }
}

/// Node count of [`SphereGrid::default`].
pub const DEFAULT_GRID_CELLS: usize = 4096;

impl Default for SphereGrid {
    fn default() -> Self {
        Self::equal_area(DEFAULT_GRID_CELLS)
    }
}

impl SphereGrid {
    /// Equal-area latitude-band grid with exactly `cells` cells of area `4π / cells`.
    ///
    /// Bands are cut so every cell spans the same area; the node of a cell is
    /// its midpoint in `(z, φ)`. Since area is uniform in `z`, the midpoint in
    /// `z` is the area centroid of the band.
    pub fn equal_area(cells: usize) -> Self {
        let cells = cells.max(2);
        let n_bands = ((cells as f64 * PI / 4.0).sqrt().round() as usize).clamp(1, cells);
        // Ideal counts from uniform polar-angle bands, rounded by largest remainder.
        let ideal: Vec<f64> = (0..n_bands)
            .map(|j| {
                let t0 = PI * j as f64 / n_bands as f64;
                let t1 = PI * (j + 1) as f64 / n_bands as f64;
                cells as f64 * (t0.cos() - t1.cos()) / 2.0
            })
            .collect();
        let mut counts: Vec<usize> = ideal.iter().map(|v| (v.floor() as usize).max(1)).collect();
        let mut assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..n_bands).collect();
        order.sort_by(|&a, &b| {
            let ra = ideal[a] - ideal[a].floor();
            let rb = ideal[b] - ideal[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut k = 0;
        while assigned < cells {
            counts[order[k % n_bands]] += 1;
            assigned += 1;
            k += 1;
        }
        while assigned > cells {
            // Only possible through the `max(1)` floor; trim the largest band.
            let j = (0..n_bands).max_by_key(|&j| counts[j]).unwrap();
            counts[j] -= 1;
            assigned -= 1;
        }

        let weight = 4.0 * PI / cells as f64;
        let mut nodes = Vec::with_capacity(cells);
        let mut bands = Vec::with_capacity(n_bands);
        let mut cumulative = 0usize;
        for &m in &counts {
            let z_high = 1.0 - 2.0 * cumulative as f64 / cells as f64;
            cumulative += m;
            let z_low = if cumulative == cells {
                -1.0
            } else {
                1.0 - 2.0 * cumulative as f64 / cells as f64
            };
            let z_mid = 0.5 * (z_low + z_high);
            bands.push(Band { z_low, z_high, cells: m, first: nodes.len() });
            for c in 0..m {
                let phi = 2.0 * PI * (c as f64 + 0.5) / m as f64;
                nodes.push(UnitVector3::from_polar(z_mid, phi));
            }
        }
        let weights = vec![weight; cells];
        Self { nodes, weights, bands }
    }

    /// Gauss–Legendre in `z` times the trapezoid rule in `φ`.
    ///
    /// Exact for polynomials of degree below `min(2 n_z, n_phi)`; used where
    /// an accurate quadrature oracle matters more than equal cell areas.
    pub fn gauss_product(n_z: usize, n_phi: usize) -> Self {
        let rule = GaussRule::new(n_z.max(1));
        let n_phi = n_phi.max(1);
        let mut nodes = Vec::with_capacity(n_z * n_phi);
        let mut weights = Vec::with_capacity(n_z * n_phi);
        for (z, wz) in rule.nodes().iter().zip(rule.weights()) {
            for c in 0..n_phi {
                let phi = 2.0 * PI * c as f64 / n_phi as f64;
                nodes.push(UnitVector3::from_polar(*z, phi));
                weights.push(wz * 2.0 * PI / n_phi as f64);
            }
        }
        Self { nodes, weights, bands: Vec::new() }
    }

    pub fn nodes(&self) -> &[UnitVector3] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// True for grids built by [`SphereGrid::equal_area`].
    pub fn has_cells(&self) -> bool {
        !self.bands.is_empty()
    }

    /// The cell of node `index` (equal-area grids only).
    pub fn cell(&self, index: usize) -> Option<SphereCell> {
        let band = self.bands.iter().find(|b| index >= b.first && index < b.first + b.cells)?;
        let c = index - band.first;
        let width = 2.0 * PI / band.cells as f64;
        Some(SphereCell {
            z_low: band.z_low,
            z_high: band.z_high,
            phi_low: c as f64 * width,
            phi_high: (c + 1) as f64 * width,
        })
    }

    /// Index of the cell containing `v` (equal-area grids only).
    pub fn locate(&self, v: UnitVector3) -> Option<usize> {
        if self.bands.is_empty() {
            return None;
        }
        let z = v.z();
        // Bands are ordered by decreasing z.
        let b = self.bands.partition_point(|b| b.z_low > z).min(self.bands.len() - 1);
        let band = &self.bands[b];
        let mut phi = v.y().atan2(v.x());
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        let c = ((phi / (2.0 * PI) * band.cells as f64) as usize).min(band.cells - 1);
        Some(band.first + c)
    }
}

/// `Σ wᵢ f(nodeᵢ)`.
pub fn sphere_integrate(f: impl Fn(UnitVector3) -> f64, grid: &SphereGrid) -> f64 {
    grid.nodes.iter().zip(&grid.weights).map(|(n, w)| w * f(*n)).sum()
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> impl Strategy<Value = UnitVector3> {
        (-1.0f64..1.0, 0.0f64..(2.0 * PI)).prop_map(|(z, phi)| UnitVector3::from_polar(z, phi))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn geodesic_distance_is_a_metric(a in unit(), b in unit(), c in unit()) {
            let ab = geodesic_distance(a, b);
            prop_assert!((ab - geodesic_distance(b, a)).abs() <= 1e-12);
            prop_assert!((0.0..=PI).contains(&ab));
            prop_assert!(ab <= geodesic_distance(a, c) + geodesic_distance(c, b) + 1e-9);
        }
    }

    proptest! {
        #[test]
        fn volume_density_decreases_on_open_interval(r1 in 0.0f64..3.14, r2 in 0.0f64..3.14) {
            let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
            let vlo = volume_density_at(lo).unwrap();
            let vhi = volume_density_at(hi).unwrap();
            prop_assert!(vhi > 0.0 && vlo <= 1.0);
            prop_assert!(vhi <= vlo + 1e-15);
        }

        #[test]
        fn erosion_undoes_dilation(o in -50.0f64..50.0, a in 0.01f64..20.0, b in 0.01f64..20.0) {
            let inner = Cube::new(Point3::new(o, -o, 0.5 * o), a).unwrap();
            let s = Cube::at_origin(b).unwrap();
            let back = erode(&dilate(&inner, &s), &s).unwrap();
            prop_assert!((back.side - a).abs() < 1e-9);
            prop_assert!((back.origin - inner.origin).norm() < 1e-12);
        }

        #[test]
        fn lattice_points_stay_in_bounds(o in -5.0f64..5.0, side in 0.5f64..6.0, mesh in 0.2f64..1.5) {
            let c = Cube::new(Point3::splat(o), side).unwrap();
            if let Ok(lat) = Lattice::new(c, mesh) {
                for p in lat.points() {
                    prop_assert!(c.as_box().contains(p) ||
                        (p - c.origin).to_array().iter().all(|d| *d >= -1e-8 && *d <= side + 1e-8));
                }
            }
        }
    }
}
