//! Vectorized evaluation of kernel sums on the sphere.
//!
//! A summand `K(d_g/h) / (h² θ)` depends only on the chord `u = |ξ − η|`, and
//! on `u < 2 sin(h/2)` it is an analytic function of `u`; for kernels that
//! are polynomials in `t²` it is even analytic in `s = u²`. That function is
//! replaced by a polynomial fitted to near machine precision, so sums over
//! many marks avoid `acos`/`sin` entirely and vectorize.

use std::f64::consts::PI;

use rayon::prelude::*;

use super::kernel::Kernel;
use crate::geometry::UnitVector3;

/// Relative accuracy required from the fitted polynomial.
const FIT_TOLERANCE: f64 = 1e-13;
const MAX_DEGREE: usize = 48;

/// The estimator summand as a function of geodesic distance, computed directly.
pub fn summand_exact(kernel: &Kernel, h: f64, r: f64) -> f64 {
    if !(r < h) {
        return 0.0;
    }
    let inv_theta = if r < 1e-6 { 1.0 + r * r / 6.0 } else { r / r.sin() };
    kernel.eval(r / h) * inv_theta / (h * h)
}

/// Fast evaluator of `g(η, ξ) = K(d_g(η, ξ)/h) / (h² θ_η(ξ))`.
#[derive(Clone, Debug)]
pub struct KernelEvaluator {
    kernel: Kernel,
    h: f64,
    /// Squared chord at the support edge, `4 sin²(h/2)`.
    s_max: f64,
    /// The polynomial variable is the chord `u` when set, `s = u²` otherwise.
    in_chord: bool,
    scale: f64,
    offset: f64,
    /// Monomial coefficients in `w = v·scale + offset`, highest degree first.
    coeffs: Vec<f64>,
    /// Set when no polynomial reaches the tolerance; sums then use the exact formula.
    exact: bool,
}

impl KernelEvaluator {
    pub fn new(kernel: Kernel, h: f64) -> Self {
        assert!(h > 0.0 && h < PI, "bandwidth must lie in (0, π)");
        let u_max = 2.0 * (0.5 * h).sin();
        let s_max = u_max * u_max;
        let in_chord = !kernel.kind().is_even();
        let v_max = if in_chord { u_max } else { s_max };
        let mut ev = Self {
            kernel,
            h,
            s_max,
            in_chord,
            scale: 2.0 / v_max,
            offset: -1.0,
            coeffs: Vec::new(),
            exact: true,
        };
        let mut degree = 4;
        while degree <= MAX_DEGREE {
            let coeffs = fit(&kernel, h, v_max, in_chord, degree);
            let candidate = Self { coeffs, exact: false, ..ev.clone() };
            if candidate.max_fit_error() <= FIT_TOLERANCE {
                ev = candidate;
                break;
            }
            degree += 1;
        }
        ev
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    /// Degree of the fitted polynomial, `None` when the exact formula is used.
    pub fn degree(&self) -> Option<usize> {
        (!self.exact).then(|| self.coeffs.len() - 1)
    }

    /// Squared chord length beyond which the summand vanishes.
    pub fn chord2_cutoff(&self) -> f64 {
        self.s_max
    }

    fn exact_at_chord2(&self, s: f64) -> f64 {
        if !(s < self.s_max) {
            return 0.0;
        }
        let r = 2.0 * (0.5 * s.sqrt()).asin();
        summand_exact(&self.kernel, self.h, r)
    }

    /// Relative sup error of the fit over a dense sample of `[0, s_max)`.
    pub fn max_fit_error(&self) -> f64 {
        let n = 4000;
        let mut peak: f64 = 0.0;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let s = self.s_max * (i as f64 / n as f64).powi(2);
            let want = self.exact_at_chord2(s);
            let got = self.eval_chord2(s);
            peak = peak.max(want.abs());
            worst = worst.max((want - got).abs());
        }
        if peak > 0.0 { worst / peak } else { worst }
    }

    /// Summand at squared chord `s`.
    pub fn eval_chord2(&self, s: f64) -> f64 {
        if self.exact {
            return self.exact_at_chord2(s);
        }
        if !(s < self.s_max) {
            return 0.0;
        }
        let v = if self.in_chord { s.sqrt() } else { s };
        let w = v * self.scale + self.offset;
        self.coeffs.iter().fold(0.0, |p, &c| p * w + c)
    }

    pub fn eval(&self, eta: UnitVector3, xi: UnitVector3) -> f64 {
        self.eval_chord2(chord2(eta, xi))
    }

    /// `Σⱼ g(η, ξⱼ)` over marks stored as coordinate columns.
    pub fn sum(&self, eta: UnitVector3, marks: &MarkColumns) -> f64 {
        self.sum_slices(eta.to_array(), &marks.x, &marks.y, &marks.z)
    }

    pub(crate) fn sum_slices(&self, e: [f64; 3], xs: &[f64], ys: &[f64], zs: &[f64]) -> f64 {
        debug_assert!(xs.len() == ys.len() && xs.len() == zs.len());
        if self.exact {
            return xs
                .iter()
                .zip(ys)
                .zip(zs)
                .map(|((x, y), z)| {
                    let s = (x - e[0]).powi(2) + (y - e[1]).powi(2) + (z - e[2]).powi(2);
                    self.exact_at_chord2(s)
                })
                .sum();
        }
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") && std::arch::is_x86_feature_detected!("fma") {
                // SAFETY: the required target features were detected at runtime.
                return unsafe { sum_avx512(self, e, xs, ys, zs) };
            }
            if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                // SAFETY: as above.
                return unsafe { sum_avx2(self, e, xs, ys, zs) };
            }
        }
        sum_generic::<16, false, false>(self, e, xs, ys, zs)
    }

    /// `Σⱼ g(e, ξⱼ)`, also adding every summand to `col[j]`.
    pub(crate) fn sum_scatter_slices(
        &self,
        e: [f64; 3],
        xs: &[f64],
        ys: &[f64],
        zs: &[f64],
        col: &mut [f64],
    ) -> f64 {
        debug_assert!(xs.len() == col.len());
        if self.exact {
            let mut total = 0.0;
            for j in 0..xs.len() {
                let s = (xs[j] - e[0]).powi(2) + (ys[j] - e[1]).powi(2) + (zs[j] - e[2]).powi(2);
                let v = self.exact_at_chord2(s);
                col[j] += v;
                total += v;
            }
            return total;
        }
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") && std::arch::is_x86_feature_detected!("fma") {
                // SAFETY: the required target features were detected at runtime.
                return unsafe { sum_scatter_avx512(self, e, xs, ys, zs, col) };
            }
            if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                // SAFETY: as above.
                return unsafe { sum_scatter_avx2(self, e, xs, ys, zs, col) };
            }
        }
        sum_scatter_generic::<16, false, false>(self, e, xs, ys, zs, col)
    }

    #[inline(always)]
    fn eval_lanes<const L: usize, const FMA: bool, const RSQRT: bool>(&self, s: &[f64; L]) -> [f64; L] {
        let mut w = if self.in_chord { chord_lengths::<L, RSQRT>(s) } else { *s };
        for l in 0..L {
            w[l] = w[l] * self.scale + self.offset;
        }
        let mut p = [self.coeffs[0]; L];
        for &c in &self.coeffs[1..] {
            for l in 0..L {
                p[l] = if FMA { p[l].mul_add(w[l], c) } else { p[l] * w[l] + c };
            }
        }
        for l in 0..L {
            p[l] = if s[l] < self.s_max { p[l] } else { 0.0 };
        }
        p
    }
}

/// `√s` lane-wise. With `RSQRT` the 14-bit hardware reciprocal square root is
/// refined by two Newton steps, which keeps the square-root unit off the
/// critical path.
#[inline(always)]
fn chord_lengths<const L: usize, const RSQRT: bool>(s: &[f64; L]) -> [f64; L] {
    let mut u = [0.0; L];
    #[cfg(target_arch = "x86_64")]
    if RSQRT && L % 8 == 0 {
        use std::arch::x86_64::{_mm512_loadu_pd, _mm512_rsqrt14_pd, _mm512_storeu_pd};
        let mut y = [0.0; L];
        let mut safe = [0.0; L];
        for l in 0..L {
            safe[l] = s[l].max(1e-300);
        }
        for g in (0..L).step_by(8) {
            // SAFETY: only instantiated from functions compiled with avx512f,
            // and `g + 8 <= L` keeps the unaligned load and store in bounds.
            unsafe {
                let v = _mm512_loadu_pd(safe.as_ptr().add(g));
                _mm512_storeu_pd(y.as_mut_ptr().add(g), _mm512_rsqrt14_pd(v));
            }
        }
        for _ in 0..2 {
            for l in 0..L {
                let half_sy = 0.5 * safe[l] * y[l];
                y[l] *= (-half_sy).mul_add(y[l], 1.5);
            }
        }
        for l in 0..L {
            u[l] = s[l] * y[l];
        }
        return u;
    }
    for l in 0..L {
        u[l] = s[l].sqrt();
    }
    u
}

#[inline(always)]
fn sum_generic<const L: usize, const FMA: bool, const RSQRT: bool>(
    ev: &KernelEvaluator,
    e: [f64; 3],
    xs: &[f64],
    ys: &[f64],
    zs: &[f64],
) -> f64 {
    let mut acc = [0.0; L];
    let mut s = [0.0; L];
    let cx = xs.chunks_exact(L);
    let cy = ys.chunks_exact(L);
    let cz = zs.chunks_exact(L);
    let (rx, ry, rz) = (cx.remainder(), cy.remainder(), cz.remainder());
    for ((x, y), z) in cx.zip(cy).zip(cz) {
        for l in 0..L {
            let dx = x[l] - e[0];
            let dy = y[l] - e[1];
            let dz = z[l] - e[2];
            s[l] = dx * dx + dy * dy + dz * dz;
        }
        let v = ev.eval_lanes::<L, FMA, RSQRT>(&s);
        for l in 0..L {
            acc[l] += v[l];
        }
    }
    if !rx.is_empty() {
        // Padding lanes use s = 4 (antipodal), outside every support.
        let mut s = [4.0; L];
        for l in 0..rx.len() {
            let dx = rx[l] - e[0];
            let dy = ry[l] - e[1];
            let dz = rz[l] - e[2];
            s[l] = dx * dx + dy * dy + dz * dz;
        }
        let v = ev.eval_lanes::<L, FMA, RSQRT>(&s);
        for l in 0..L {
            acc[l] += v[l];
        }
    }
    // Fixed pairwise reduction.
    let mut width = L / 2;
    while width > 0 {
        for l in 0..width {
            acc[l] += acc[l + width];
        }
        width /= 2;
    }
    acc[0]
}

/// Like [`sum_generic`], and additionally adds each summand to `col[j]`.
#[inline(always)]
fn sum_scatter_generic<const L: usize, const FMA: bool, const RSQRT: bool>(
    ev: &KernelEvaluator,
    e: [f64; 3],
    xs: &[f64],
    ys: &[f64],
    zs: &[f64],
    col: &mut [f64],
) -> f64 {
    let mut acc = [0.0; L];
    let mut s = [0.0; L];
    let n = xs.len();
    let full = n - n % L;
    let mut start = 0;
    while start < full {
        let (x, y, z) = (&xs[start..start + L], &ys[start..start + L], &zs[start..start + L]);
        for l in 0..L {
            let dx = x[l] - e[0];
            let dy = y[l] - e[1];
            let dz = z[l] - e[2];
            s[l] = dx * dx + dy * dy + dz * dz;
        }
        let v = ev.eval_lanes::<L, FMA, RSQRT>(&s);
        let c = &mut col[start..start + L];
        for l in 0..L {
            acc[l] += v[l];
            c[l] += v[l];
        }
        start += L;
    }
    if start < n {
        let rem = n - start;
        let mut s = [4.0; L];
        for l in 0..rem {
            let dx = xs[start + l] - e[0];
            let dy = ys[start + l] - e[1];
            let dz = zs[start + l] - e[2];
            s[l] = dx * dx + dy * dy + dz * dz;
        }
        let v = ev.eval_lanes::<L, FMA, RSQRT>(&s);
        for l in 0..L {
            acc[l] += v[l];
        }
        for l in 0..rem {
            col[start + l] += v[l];
        }
    }
    let mut width = L / 2;
    while width > 0 {
        for l in 0..width {
            acc[l] += acc[l + width];
        }
        width /= 2;
    }
    acc[0]
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx2,fma")]
unsafe fn sum_scatter_avx512(
    ev: &KernelEvaluator,
    e: [f64; 3],
    xs: &[f64],
    ys: &[f64],
    zs: &[f64],
    col: &mut [f64],
) -> f64 {
    sum_scatter_generic::<64, true, true>(ev, e, xs, ys, zs, col)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn sum_scatter_avx2(
    ev: &KernelEvaluator,
    e: [f64; 3],
    xs: &[f64],
    ys: &[f64],
    zs: &[f64],
    col: &mut [f64],
) -> f64 {
    sum_scatter_generic::<32, true, false>(ev, e, xs, ys, zs, col)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx2,fma")]
unsafe fn sum_avx512(ev: &KernelEvaluator, e: [f64; 3], xs: &[f64], ys: &[f64], zs: &[f64]) -> f64 {
    sum_generic::<64, true, true>(ev, e, xs, ys, zs)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn sum_avx2(ev: &KernelEvaluator, e: [f64; 3], xs: &[f64], ys: &[f64], zs: &[f64]) -> f64 {
    sum_generic::<32, true, false>(ev, e, xs, ys, zs)
}

/// `|η − ξ|²`.
pub fn chord2(eta: UnitVector3, xi: UnitVector3) -> f64 {
    let dx = eta.x() - xi.x();
    let dy = eta.y() - xi.y();
    let dz = eta.z() - xi.z();
    dx * dx + dy * dy + dz * dz
}

/// Chebyshev interpolation on `v ∈ [0, v_max]` (`v` the chord or its
/// square), returned as monomial coefficients in `w = 2v/v_max − 1`, highest first.
fn fit(kernel: &Kernel, h: f64, v_max: f64, in_chord: bool, degree: usize) -> Vec<f64> {
    let n = degree + 1;
    let nodes: Vec<f64> = (0..n).map(|k| (PI * (k as f64 + 0.5) / n as f64).cos()).collect();
    let values: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let v = 0.5 * (x + 1.0) * v_max;
            let u = if in_chord { v } else { v.sqrt() };
            summand_exact(kernel, h, 2.0 * (0.5 * u).asin())
        })
        .collect();
    chebyshev_to_monomial(&chebyshev_coefficients(&nodes, &values))
}

fn chebyshev_coefficients(nodes: &[f64], values: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|j| {
            let s: f64 = (0..n)
                .map(|k| values[k] * (PI * j as f64 * (k as f64 + 0.5) / n as f64).cos())
                .sum();
            let a = 2.0 * s / n as f64;
            if j == 0 { 0.5 * a } else { a }
        })
        .collect()
}

/// Converts `Σ aⱼ Tⱼ(w)` to monomial coefficients, highest degree first.
fn chebyshev_to_monomial(a: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut out = vec![0.0; n];
    let mut older = vec![0.0; n];
    older[0] = 1.0;
    let mut newer = vec![0.0; n];
    if n > 1 {
        newer[1] = 1.0;
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o += a[0] * older[i];
    }
    for k in 1..n {
        if k >= 2 {
            // T_k = 2w·T_{k−1} − T_{k−2}
            let mut next: Vec<f64> = older.iter().map(|v| -v).collect();
            for i in 0..n - 1 {
                next[i + 1] += 2.0 * newer[i];
            }
            older = std::mem::replace(&mut newer, next);
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += a[k] * newer[i];
        }
    }
    out.reverse();
    out
}

/// Unit vectors stored as three coordinate columns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MarkColumns {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl MarkColumns {
    pub fn with_capacity(n: usize) -> Self {
        Self { x: Vec::with_capacity(n), y: Vec::with_capacity(n), z: Vec::with_capacity(n) }
    }

    pub fn push(&mut self, v: UnitVector3) {
        self.x.push(v.x());
        self.y.push(v.y());
        self.z.push(v.z());
    }

    pub fn clear(&mut self) {
        self.x.clear();
        self.y.clear();
        self.z.clear();
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn get(&self, i: usize) -> UnitVector3 {
        UnitVector3::new_unchecked(self.x[i], self.y[i], self.z[i])
    }
}

impl FromIterator<UnitVector3> for MarkColumns {
    fn from_iter<I: IntoIterator<Item = UnitVector3>>(iter: I) -> Self {
        let mut m = MarkColumns::default();
        for v in iter {
            m.push(v);
        }
        m
    }
}

/// Marks per block, the unit of neighbour culling.
const BLOCK_TARGET: usize = 64;

/// Blocks whose results are merged together; any fixed value gives the same result.
const WAVE: usize = 256;

#[derive(Clone, Copy, Debug)]
struct Block {
    start: usize,
    end: usize,
    centre: UnitVector3,
    radius: f64,
}

/// Marks bucketed into small angular blocks so that kernel sums only visit
/// blocks that can lie within the bandwidth.
///
/// Marks are sorted by a coarse and a fine cube-map cell; each run of equal
/// cells forms a block with a bounding cap computed from its marks. Coarse
/// cells have edges on great circles (constant tangent angle on a cube face),
/// so they are geodesically convex and their farthest point from the centre
/// is a corner; they restrict the block pairs that are tested at all.
#[derive(Clone, Debug)]
pub struct MarkIndex {
    h: f64,
    sorted: MarkColumns,
    /// Original position of each sorted mark.
    order: Vec<usize>,
    blocks: Vec<Block>,
    coarse: usize,
    /// Block range of each coarse cell.
    coarse_blocks: Vec<(usize, usize)>,
    coarse_neighbours: Vec<Vec<usize>>,
}

impl MarkIndex {
    pub fn new(marks: &MarkColumns, h: f64) -> Self {
        let n = marks.len();
        let fine = ((n as f64 / (6.0 * BLOCK_TARGET as f64)).sqrt().round() as usize).max(1);
        let coarse = ((PI / h).ceil() as usize).clamp(1, fine);
        let keys: Vec<(usize, usize)> =
            (0..n).map(|i| (cell_of(marks.get(i), coarse), cell_of(marks.get(i), fine))).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (keys[i], i));
        let mut sorted = MarkColumns::with_capacity(n);
        for &i in &order {
            sorted.push(marks.get(i));
        }

        let n_coarse = 6 * coarse * coarse;
        let mut blocks = Vec::new();
        let mut coarse_blocks = vec![(0, 0); n_coarse];
        let mut start = 0;
        while start < n {
            let key = keys[order[start]];
            let mut end = start + 1;
            while end < n && keys[order[end]] == key {
                end += 1;
            }
            let (mut cx, mut cy, mut cz) = (0.0, 0.0, 0.0);
            for j in start..end {
                cx += sorted.x[j];
                cy += sorted.y[j];
                cz += sorted.z[j];
            }
            let centre = UnitVector3::normalize(cx, cy, cz).unwrap_or_else(|_| sorted.get(start));
            let radius = (start..end)
                .map(|j| crate::geometry::geodesic_distance(centre, sorted.get(j)))
                .fold(0.0, f64::max)
                + 1e-12;
            let b = blocks.len();
            let cell = &mut coarse_blocks[key.0];
            if cell.0 == cell.1 {
                *cell = (b, b + 1);
            } else {
                cell.1 = b + 1;
            }
            blocks.push(Block { start, end, centre, radius });
            start = end;
        }

        let geometry: Vec<(UnitVector3, f64)> = (0..n_coarse).map(|c| cell_geometry(c, coarse)).collect();
        let coarse_neighbours = (0..n_coarse)
            .map(|p| {
                let (cp, rp) = geometry[p];
                (0..n_coarse)
                    .filter(|&q| {
                        let (cq, rq) = geometry[q];
                        within(cp, cq, h + rp + rq + 1e-9)
                    })
                    .collect()
            })
            .collect();
        Self { h, sorted, order, blocks, coarse, coarse_blocks, coarse_neighbours }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Sorted-position ranges of the blocks that may hold marks within `h`
    /// of some point in the cap `(centre, radius)`, restricted to blocks `≥ first`.
    fn candidate_runs(&self, centre: UnitVector3, radius: f64, first: usize) -> Vec<(usize, usize, usize)> {
        let mut runs: Vec<(usize, usize, usize)> = Vec::new();
        for &q in &self.coarse_neighbours[cell_of(centre, self.coarse)] {
            let (a, b) = self.coarse_blocks[q];
            for j in a.max(first)..b {
                let blk = &self.blocks[j];
                if !within(centre, blk.centre, self.h + radius + blk.radius) {
                    continue;
                }
                match runs.last_mut() {
                    Some(last) if last.1 == blk.start => {
                        last.1 = blk.end;
                    }
                    _ => runs.push((blk.start, blk.end, j)),
                }
            }
        }
        runs
    }

    /// `Σⱼ g(η, ξⱼ)` over all indexed marks.
    pub fn sum(&self, ev: &KernelEvaluator, eta: UnitVector3) -> f64 {
        assert!((ev.bandwidth() - self.h).abs() <= 1e-12 * self.h, "index built for another bandwidth");
        if self.is_empty() {
            return 0.0;
        }
        let e = eta.to_array();
        self.candidate_runs(eta, 0.0, 0)
            .iter()
            .map(|&(a, b, _)| ev.sum_slices(e, &self.sorted.x[a..b], &self.sorted.y[a..b], &self.sorted.z[a..b]))
            .sum()
    }

    /// `Σⱼ g(ξᵢ, ξⱼ)` for every indexed mark `ξᵢ` (including `j = i`), in the
    /// original order.
    ///
    /// Each unordered pair of blocks is evaluated once and credited to both
    /// sides. Contributions are merged in increasing block order, so the
    /// result does not depend on the number of threads.
    pub fn self_sums(&self, ev: &KernelEvaluator) -> Vec<f64> {
        assert!((ev.bandwidth() - self.h).abs() <= 1e-12 * self.h, "index built for another bandwidth");
        let n = self.len();
        let mut acc = vec![0.0; n];
        for wave in (0..self.blocks.len()).collect::<Vec<_>>().chunks(WAVE) {
            let parts: Vec<(Vec<f64>, Vec<(usize, Vec<f64>)>)> = wave
                .par_iter()
                .map(|&bi| {
                    let blk = self.blocks[bi];
                    let mut rows = vec![0.0; blk.end - blk.start];
                    let mut cols = Vec::new();
                    for (a, b, first_block) in self.candidate_runs(blk.centre, blk.radius, bi) {
                        // The block itself is evaluated in full, later blocks symmetrically.
                        let (a, b) = if first_block == bi {
                            for i in blk.start..blk.end {
                                let e = [self.sorted.x[i], self.sorted.y[i], self.sorted.z[i]];
                                rows[i - blk.start] += ev.sum_slices(
                                    e,
                                    &self.sorted.x[blk.start..blk.end],
                                    &self.sorted.y[blk.start..blk.end],
                                    &self.sorted.z[blk.start..blk.end],
                                );
                            }
                            (blk.end, b)
                        } else {
                            (a, b)
                        };
                        if a == b {
                            continue;
                        }
                        let mut col = vec![0.0; b - a];
                        for i in blk.start..blk.end {
                            let e = [self.sorted.x[i], self.sorted.y[i], self.sorted.z[i]];
                            rows[i - blk.start] += ev.sum_scatter_slices(
                                e,
                                &self.sorted.x[a..b],
                                &self.sorted.y[a..b],
                                &self.sorted.z[a..b],
                                &mut col,
                            );
                        }
                        cols.push((a, col));
                    }
                    (rows, cols)
                })
                .collect();
            for (&bi, (rows, cols)) in wave.iter().zip(parts) {
                let start = self.blocks[bi].start;
                for (k, v) in rows.into_iter().enumerate() {
                    acc[start + k] += v;
                }
                for (a, col) in cols {
                    for (k, v) in col.into_iter().enumerate() {
                        acc[a + k] += v;
                    }
                }
            }
        }
        let mut out = vec![0.0; n];
        for (pos, v) in acc.into_iter().enumerate() {
            out[self.order[pos]] = v;
        }
        out
    }
}

/// `d_g(a, b) < reach`, treating reaches of π or more as always true.
fn within(a: UnitVector3, b: UnitVector3, reach: f64) -> bool {
    reach >= PI || a.dot(b) > reach.cos()
}

fn face_coordinates(v: UnitVector3) -> (usize, f64, f64) {
    let (x, y, z) = (v.x(), v.y(), v.z());
    let (ax, ay, az) = (x.abs(), y.abs(), z.abs());
    if ax >= ay && ax >= az {
        (if x >= 0.0 { 0 } else { 1 }, y / ax, z / ax)
    } else if ay >= az {
        (if y >= 0.0 { 2 } else { 3 }, z / ay, x / ay)
    } else {
        (if z >= 0.0 { 4 } else { 5 }, x / az, y / az)
    }
}

fn from_face(face: usize, a: f64, b: f64) -> UnitVector3 {
    let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
    let (x, y, z) = match face / 2 {
        0 => (sign, a, b),
        1 => (b, sign, a),
        _ => (a, b, sign),
    };
    UnitVector3::normalize(x, y, z).expect("cube-map point is nonzero")
}

fn cell_of(v: UnitVector3, m: usize) -> usize {
    let (face, a, b) = face_coordinates(v);
    let idx = |t: f64| {
        let f = (t.atan() + PI / 4.0) / (PI / 2.0) * m as f64;
        (f.max(0.0) as usize).min(m - 1)
    };
    (face * m + idx(a)) * m + idx(b)
}

/// Centre and corner radius of a cell.
fn cell_geometry(cell: usize, m: usize) -> (UnitVector3, f64) {
    let face = cell / (m * m);
    let i = (cell / m) % m;
    let j = cell % m;
    let angle = |k: f64| -PI / 4.0 + k * (PI / 2.0) / m as f64;
    let centre = from_face(face, angle(i as f64 + 0.5).tan(), angle(j as f64 + 0.5).tan());
    let mut radius: f64 = 0.0;
    for (di, dj) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        let corner = from_face(face, angle(i as f64 + di).tan(), angle(j as f64 + dj).tan());
        radius = radius.max(crate::geometry::geodesic_distance(centre, corner));
    }
    (centre, radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directional::{DirectionalModel, RandomStream};
    use crate::estimation::kernel::KernelKind;
    use crate::geometry::geodesic_distance;

    fn random_marks(n: usize, seed: u64) -> MarkColumns {
        let mut rng = RandomStream::new(seed, 0);
        let m = DirectionalModel::uniform();
        (0..n).map(|_| m.sample(&mut rng)).collect()
    }

    #[test]
    fn fit_matches_exact_formula() {
        for kind in KernelKind::ALL {
            for h in [0.1, 0.5, 0.7532, 1.1892, 2.0] {
                let k = Kernel::new(kind);
                let ev = KernelEvaluator::new(k, h);
                let peak = summand_exact(&k, h, 0.0).max(summand_exact(&k, h, h * 0.999_999));
                for i in 0..=1000 {
                    let r = h * 1.2 * i as f64 / 1000.0;
                    let s = (2.0 * (0.5 * r).sin()).powi(2);
                    let d = (ev.eval_chord2(s) - summand_exact(&k, h, r)).abs();
                    assert!(d <= 1e-12 * peak, "{kind} h={h} r={r}: {d}");
                }
            }
        }
    }

    #[test]
    fn vector_sum_matches_scalar_loop() {
        let marks = random_marks(1000, 4);
        let mut rng = RandomStream::new(5, 0);
        for kind in KernelKind::ALL {
            let k = Kernel::new(kind);
            let ev = KernelEvaluator::new(k, 0.8);
            for _ in 0..20 {
                let eta = DirectionalModel::uniform().sample(&mut rng);
                let fast = ev.sum(eta, &marks);
                let slow: f64 = (0..marks.len())
                    .map(|i| summand_exact(&k, 0.8, geodesic_distance(eta, marks.get(i))))
                    .sum();
                assert!((fast - slow).abs() <= 1e-11 * slow.abs().max(1.0), "{kind}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn index_sums_match_brute_force() {
        let marks = random_marks(20_000, 6);
        for h in [0.2, 0.75] {
            let ev = KernelEvaluator::new(Kernel::new(KernelKind::Tricube), h);
            let index = MarkIndex::new(&marks, h);
            assert!(index.blocks.len() > 100);
            let sums = index.self_sums(&ev);
            for i in (0..marks.len()).step_by(97) {
                let want = ev.sum(marks.get(i), &marks);
                assert!((sums[i] - want).abs() <= 1e-12 * want, "{i}: {} vs {want}", sums[i]);
            }
            let mut rng = RandomStream::new(7, 0);
            for _ in 0..50 {
                let eta = DirectionalModel::uniform().sample(&mut rng);
                let want = ev.sum(eta, &marks);
                assert!((index.sum(&ev, eta) - want).abs() <= 1e-12 * want.max(1.0));
            }
        }
    }

    #[test]
    fn cube_map_cells_are_consistent() {
        let m = 7;
        let mut rng = RandomStream::new(8, 0);
        for _ in 0..5000 {
            let v = DirectionalModel::uniform().sample(&mut rng);
            let c = cell_of(v, m);
            let (centre, radius) = cell_geometry(c, m);
            assert!(geodesic_distance(v, centre) <= radius + 1e-12);
        }
    }
}
