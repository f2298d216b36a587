//! Poincaré-disk geometry and the genus-2 octagon group.
//!
//! Isometries are stored as real 2x2 matrices of determinant one (the upper
//! half-plane picture); they act on the unit disk through the standard
//! Cayley correspondence, which for a real matrix [[a,b],[c,d]] is the
//! su(1,1) matrix with
//!   alpha = ((a+d) + i(b-c))/2,   beta = ((a-d) - i(b+c))/2,
//! acting as z -> (alpha z + beta) / (conj(beta) z + conj(alpha)).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

use crate::{Error, Result};

/// Conformal factor of the hyperbolic metric `sigma |dz|^2` in the disk chart.
pub fn sigma(z: Complex64) -> f64 {
    let t = 1.0 - z.norm_sqr();
    4.0 / (t * t)
}

/// A point strictly inside the unit disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskPoint {
    pub x: f64,
    pub y: f64,
}

impl DiskPoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        let r = (x * x + y * y).sqrt();
        if r >= 1.0 - 1e-12 {
            return Err(Error::PointOutsideDisk(r));
        }
        Ok(Self { x, y })
    }

    /// Internal constructor for points produced by operations that preserve
    /// the disk; skips the boundary check.
    pub(crate) fn raw(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn z(&self) -> Complex64 {
        Complex64::new(self.x, self.y)
    }

    pub fn from_z(z: Complex64) -> Result<Self> {
        Self::new(z.re, z.im)
    }

    pub fn origin() -> Self {
        Self { x: 0.0, y: 0.0 }
    }
}

/// Hyperbolic distance between two points of the disk.
pub fn dist(p: DiskPoint, q: DiskPoint) -> f64 {
    dist_z(p.z(), q.z())
}

pub fn dist_z(p: Complex64, q: Complex64) -> f64 {
    let num = 2.0 * (p - q).norm_sqr();
    let den = (1.0 - p.norm_sqr()) * (1.0 - q.norm_sqr());
    (1.0 + num / den).acosh()
}

/// Geodesic through `p` with unit tangent `dir` (Euclidean direction in the
/// chart), evaluated at hyperbolic arclength `s`.
pub fn geodesic_from(p: Complex64, dir: Complex64, s: f64) -> Complex64 {
    let tau = dir / dir.norm();
    let w = tau * (0.5 * s).tanh();
    (w + p) / (Complex64::new(1.0, 0.0) + p.conj() * w)
}

/// Real 2x2 matrix of determinant one, acting on the disk. Identified with
/// its negation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MobiusIsometry {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl MobiusIsometry {
    pub fn identity() -> Self {
        Self { a: 1.0, b: 0.0, c: 0.0, d: 1.0 }
    }

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }.renormalized()
    }

    /// Rescale so that det = 1 exactly (suppresses drift after products).
    pub fn renormalized(self) -> Self {
        let det = self.a * self.d - self.b * self.c;
        let s = 1.0 / det.abs().sqrt();
        Self { a: self.a * s, b: self.b * s, c: self.c * s, d: self.d * s }
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn compose(&self, rhs: &Self) -> Self {
        Self {
            a: self.a * rhs.a + self.b * rhs.c,
            b: self.a * rhs.b + self.b * rhs.d,
            c: self.c * rhs.a + self.d * rhs.c,
            d: self.c * rhs.b + self.d * rhs.d,
        }
        .renormalized()
    }

    pub fn inverse(&self) -> Self {
        Self { a: self.d, b: -self.b, c: -self.c, d: self.a }
    }

    /// su(1,1) form (alpha, beta) of the disk action.
    pub fn disk_form(&self) -> (Complex64, Complex64) {
        let alpha = Complex64::new(0.5 * (self.a + self.d), 0.5 * (self.b - self.c));
        let beta = Complex64::new(0.5 * (self.a - self.d), -0.5 * (self.b + self.c));
        (alpha, beta)
    }

    /// Action on the disk chart.
    pub fn apply_z(&self, z: Complex64) -> Complex64 {
        let (alpha, beta) = self.disk_form();
        (alpha * z + beta) / (beta.conj() * z + alpha.conj())
    }

    pub fn apply(&self, p: DiskPoint) -> DiskPoint {
        let w = self.apply_z(p.z());
        DiskPoint::raw(w.re, w.im)
    }

    /// Complex derivative of the disk action at `z`.
    pub fn deriv_z(&self, z: Complex64) -> Complex64 {
        let (alpha, beta) = self.disk_form();
        let den = beta.conj() * z + alpha.conj();
        let d2 = den * den;
        Complex64::new(1.0, 0.0) / d2
    }

    /// Second complex derivative of the disk action at `z`.
    pub fn deriv2_z(&self, z: Complex64) -> Complex64 {
        let (alpha, beta) = self.disk_form();
        let den = beta.conj() * z + alpha.conj();
        -2.0 * beta.conj() / (den * den * den)
    }

    /// Matrix distance to +/- identity.
    pub fn dist_to_identity(&self) -> f64 {
        let dp = (self.a - 1.0).abs().max((self.d - 1.0).abs()).max(self.b.abs()).max(self.c.abs());
        let dm = (self.a + 1.0).abs().max((self.d + 1.0).abs()).max(self.b.abs()).max(self.c.abs());
        dp.min(dm)
    }

    /// Entrywise distance modulo the projective sign.
    pub fn proj_dist(&self, other: &Self) -> f64 {
        let dp = (self.a - other.a)
            .abs()
            .max((self.b - other.b).abs())
            .max((self.c - other.c).abs())
            .max((self.d - other.d).abs());
        let dm = (self.a + other.a)
            .abs()
            .max((self.b + other.b).abs())
            .max((self.c + other.c).abs())
            .max((self.d + other.d).abs());
        dp.min(dm)
    }

    /// Canonical projective sign: the first entry larger than half the
    /// maximal modulus is made positive.
    fn sign_normalized(self) -> Self {
        let m = self.a.abs().max(self.b.abs()).max(self.c.abs()).max(self.d.abs());
        for v in [self.a, self.b, self.c, self.d] {
            if v.abs() > 0.5 * m {
                if v < 0.0 {
                    return Self { a: -self.a, b: -self.b, c: -self.c, d: -self.d };
                }
                return self;
            }
        }
        self
    }
}

/// Translation length `2 arccosh(|tr|/2)` of a hyperbolic element.
pub fn translation_length(g: &MobiusIsometry) -> Result<f64> {
    let t = g.trace().abs();
    if t <= 2.0 + 1e-12 {
        return Err(Error::EllipticOrParabolic(t));
    }
    Ok(2.0 * (t / 2.0).acosh())
}

/// Generator alphabet: `a b c d` are the four side pairings, upper case are
/// the inverses.
pub const LETTERS: [char; 8] = ['a', 'b', 'c', 'd', 'A', 'B', 'C', 'D'];

pub fn letter_index(ch: char) -> Option<usize> {
    LETTERS.iter().position(|&l| l == ch)
}

pub fn inverse_letter(idx: usize) -> usize {
    (idx + 4) % 8
}

/// The genus-2 Fuchsian group of the regular octagon, with opposite-side
/// pairings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FuchsianGroup {
    /// `a b c d A B C D`: four generators then their inverses.
    pub generators: [MobiusIsometry; 8],
    /// Reduced word whose ordered product is +/- identity.
    pub relation: String,
    /// Octagon corners, counterclockwise.
    pub octagon: [DiskPoint; 8],
}

/// Relation word of the opposite-side pairing (product verified to be
/// +/- identity in the constructor).
const RELATION: &str = "aBcDAbCd";

/// Builds the regular-octagon group: interior angle pi/4 at every corner,
/// generator k translating by twice the inradius along direction k*pi/4.
pub fn build_octagon_group() -> FuchsianGroup {
    // cosh(inradius) = cos(pi/8)/sin(pi/8); the pairing translation moves by
    // twice the inradius.
    let cosh_r = (PI / 8.0).cos() / (PI / 8.0).sin();
    let sinh_r = (cosh_r * cosh_r - 1.0).sqrt();
    let mut gens = [MobiusIsometry::identity(); 8];
    for (k, g) in gens.iter_mut().take(4).enumerate() {
        let half = 0.5 * (k as f64) * PI / 4.0;
        let rot = MobiusIsometry { a: half.cos(), b: half.sin(), c: -half.sin(), d: half.cos() };
        let trans = MobiusIsometry { a: cosh_r + sinh_r, b: 0.0, c: 0.0, d: cosh_r - sinh_r };
        *g = rot.compose(&trans).compose(&rot.inverse());
    }
    for k in 0..4 {
        gens[k + 4] = gens[k].inverse();
    }

    // Corners at chart radius tanh(R/2); hyperbolic Pythagoras for the
    // (center, side midpoint, corner) right triangle with equal legs gives
    // cosh(R) = cosh(r)^2 = cot^2(pi/8).
    let cosh_cr = cosh_r * cosh_r;
    let sinh_cr = (cosh_cr * cosh_cr - 1.0).sqrt();
    let re = sinh_cr / (1.0 + cosh_cr);
    let mut octagon = [DiskPoint::origin(); 8];
    for (j, v) in octagon.iter_mut().enumerate() {
        let ang = -PI / 8.0 + (j as f64) * PI / 4.0;
        *v = DiskPoint::raw(re * ang.cos(), re * ang.sin());
    }

    let group = FuchsianGroup { generators: gens, relation: RELATION.to_string(), octagon };
    debug_assert!(group.relation_product().dist_to_identity() < 1e-10);
    group
}

impl FuchsianGroup {
    pub fn generator(&self, idx: usize) -> &MobiusIsometry {
        &self.generators[idx]
    }

    /// Ordered product of the relation word.
    pub fn relation_product(&self) -> MobiusIsometry {
        self.word_matrix(&self.relation)
    }

    /// Matrix of a word over the generator alphabet.
    pub fn word_matrix(&self, word: &str) -> MobiusIsometry {
        let mut m = MobiusIsometry::identity();
        for ch in word.chars() {
            let idx = letter_index(ch).expect("invalid generator letter");
            m = m.compose(&self.generators[idx]);
        }
        m
    }

    /// True when `p` lies in the closed Dirichlet octagon about the origin.
    pub fn in_fundamental_domain(&self, z: Complex64, tol: f64) -> bool {
        let d0 = dist_z(Complex64::new(0.0, 0.0), z);
        self.generators
            .iter()
            .all(|g| dist_z(Complex64::new(0.0, 0.0), g.apply_z(z)) >= d0 - tol)
    }

    /// Maps `z` into the fundamental octagon; returns the reduced point and
    /// the isometry `t` with `t(z)` equal to the reduced point.
    pub fn reduce_to_fundamental(&self, z: Complex64) -> (Complex64, MobiusIsometry) {
        let mut cur = z;
        let mut acc = MobiusIsometry::identity();
        let origin = Complex64::new(0.0, 0.0);
        for _ in 0..512 {
            let d0 = dist_z(origin, cur);
            let mut best = d0;
            let mut best_idx = usize::MAX;
            for (i, g) in self.generators.iter().enumerate() {
                let d = dist_z(origin, g.apply_z(cur));
                if d < best - 1e-14 {
                    best = d;
                    best_idx = i;
                }
            }
            if best_idx == usize::MAX {
                return (cur, acc);
            }
            acc = self.generators[best_idx].compose(&acc);
            cur = self.generators[best_idx].apply_z(cur);
        }
        (cur, acc)
    }
}

/// A group element carrying its reduced word.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupElement {
    pub word: String,
    pub matrix: MobiusIsometry,
}

fn quant_key(m: &MobiusIsometry, grid: f64) -> [i64; 4] {
    let q = 1.0 / grid;
    [
        (m.a * q).round() as i64,
        (m.b * q).round() as i64,
        (m.c * q).round() as i64,
        (m.d * q).round() as i64,
    ]
}

/// Keys to probe for a match: the base key plus neighbours for entries that
/// sit near a quantization boundary (window covers the dedup tolerance).
fn probe_keys(m: &MobiusIsometry, grid: f64, window: f64) -> Vec<[i64; 4]> {
    let q = 1.0 / grid;
    let vals = [m.a, m.b, m.c, m.d];
    let base = quant_key(m, grid);
    let mut keys = vec![base];
    let w = window / grid;
    for (i, v) in vals.iter().enumerate() {
        let scaled = v * q;
        let frac = scaled - scaled.round();
        let shift = if frac > 0.5 - w {
            1
        } else if frac < -0.5 + w {
            -1
        } else {
            continue;
        };
        let n = keys.len();
        for j in 0..n {
            let mut k = keys[j];
            k[i] += shift;
            keys.push(k);
        }
    }
    keys
}

struct MatrixSet {
    buckets: HashMap<[i64; 4], Vec<usize>>,
    mats: Vec<MobiusIsometry>,
    grid: f64,
    tolerance: f64,
}

impl MatrixSet {
    /// Distinct elements of the groups handled here are separated by far
    /// more than any tolerance below; the tolerance only has to sit above
    /// the float drift of the matrix products that produced the entries.
    fn new(grid: f64, tolerance: f64) -> Self {
        Self { buckets: HashMap::new(), mats: Vec::new(), grid, tolerance }
    }

    /// Inserts if no element within the projective tolerance is present.
    /// Returns true when the matrix was new.
    fn insert(&mut self, m: &MobiusIsometry) -> bool {
        let nm = m.sign_normalized();
        for key in probe_keys(&nm, self.grid, 2.0 * self.tolerance) {
            if let Some(ids) = self.buckets.get(&key) {
                for &i in ids {
                    if self.mats[i].proj_dist(&nm) < self.tolerance {
                        return false;
                    }
                }
            }
        }
        let idx = self.mats.len();
        self.mats.push(nm);
        self.buckets.entry(quant_key(&nm, self.grid)).or_default().push(idx);
        true
    }
}

/// All distinct elements of reduced word length at most `max_word_length`,
/// breadth-first, deduplicated by matrix equality within 1e-10.
pub fn group_ball(
    group: &FuchsianGroup,
    max_word_length: usize,
    cap: usize,
) -> Result<Vec<GroupElement>> {
    let mut set = MatrixSet::new(1e-6, 1e-10);
    let id = MobiusIsometry::identity();
    set.insert(&id);
    let mut out = vec![GroupElement { word: String::new(), matrix: id }];
    let mut frontier: Vec<(String, MobiusIsometry, usize)> = vec![(String::new(), id, usize::MAX)];
    for _len in 1..=max_word_length {
        let mut next = Vec::new();
        for (word, mat, last) in &frontier {
            for idx in 0..8 {
                if *last != usize::MAX && idx == inverse_letter(*last) {
                    continue;
                }
                let m = mat.compose(&group.generators[idx]);
                if set.insert(&m) {
                    let mut w = word.clone();
                    w.push(LETTERS[idx]);
                    if out.len() + 1 > cap {
                        return Err(Error::BudgetExceeded { count: out.len() + 1, cap });
                    }
                    out.push(GroupElement { word: w.clone(), matrix: m });
                    next.push((w, m, idx));
                }
            }
        }
        frontier = next;
    }
    Ok(out)
}

/// Lean ball for series summation: su(1,1) pairs only, deduplicated the same
/// way as `group_ball`.
pub fn matrix_ball(
    group: &FuchsianGroup,
    max_word_length: usize,
    cap: usize,
) -> Result<Vec<(Complex64, Complex64)>> {
    let mut set = MatrixSet::new(1e-6, 1e-10);
    let id = MobiusIsometry::identity();
    set.insert(&id);
    let mut out = vec![id.disk_form()];
    let mut frontier: Vec<(MobiusIsometry, usize)> = vec![(id, usize::MAX)];
    for _len in 1..=max_word_length {
        let mut next = Vec::new();
        for (mat, last) in &frontier {
            for idx in 0..8 {
                if *last != usize::MAX && idx == inverse_letter(*last) {
                    continue;
                }
                let m = mat.compose(&group.generators[idx]);
                if set.insert(&m) {
                    if out.len() + 1 > cap {
                        return Err(Error::BudgetExceeded { count: out.len() + 1, cap });
                    }
                    out.push(m.disk_form());
                    next.push((m, idx));
                }
            }
        }
        frontier = next;
    }
    Ok(out)
}

/// All group elements whose orbit point of the origin lies within hyperbolic
/// distance `radius`. Enumerated breadth-first with displacement pruning:
/// the search keeps a shell of `margin` beyond the radius so that every
/// element of the ball is reached through in-shell prefixes (orbit points of
/// word prefixes stay within half an octagon diameter of the geodesic to the
/// endpoint).
pub fn displacement_ball(
    group: &FuchsianGroup,
    radius: f64,
    cap: usize,
) -> Result<Vec<(Complex64, Complex64)>> {
    let margin = 2.6;
    let origin = Complex64::new(0.0, 0.0);
    // Reduced words only, depth-capped at the geodesic spelling length:
    // product drift stays orders of magnitude below the dedup tolerance,
    // which itself sits far below the separation of distinct elements.
    let mut set = MatrixSet::new(1e-4, 1e-6);
    let id = MobiusIsometry::identity();
    set.insert(&id);
    let mut out = vec![id.disk_form()];
    let mut frontier: Vec<(MobiusIsometry, usize)> = vec![(id, usize::MAX)];
    let max_level = (radius / 0.75).ceil() as usize + 6;
    let mut level = 0usize;
    while !frontier.is_empty() && level < max_level {
        level += 1;
        let mut next = Vec::new();
        for (mat, last) in &frontier {
            for idx in 0..8 {
                if *last != usize::MAX && idx == inverse_letter(*last) {
                    continue;
                }
                let m = mat.compose(&group.generators[idx]);
                let d = dist_z(origin, m.apply_z(origin));
                if d > radius + margin {
                    continue;
                }
                if set.insert(&m) {
                    if d <= radius {
                        if out.len() + 1 > cap {
                            return Err(Error::BudgetExceeded { count: out.len() + 1, cap });
                        }
                        out.push(m.disk_form());
                    }
                    next.push((m, idx));
                }
            }
        }
        frontier = next;
    }
    Ok(out)
}

/// Axis data of a hyperbolic isometry: repelling and attracting endpoints on
/// the circle, the axis point closest to the origin, and the unit chart
/// direction of the axis there (pointing at the attracting endpoint).
#[derive(Debug, Clone, Copy)]
pub struct Axis {
    pub repelling: Complex64,
    pub attracting: Complex64,
    pub foot: Complex64,
    pub dir: Complex64,
}

pub fn axis(g: &MobiusIsometry) -> Result<Axis> {
    translation_length(g)?;
    let (alpha, beta) = g.disk_form();
    // Fixed points: conj(beta) z^2 + (conj(alpha) - alpha) z - beta = 0.
    let a = beta.conj();
    let b = alpha.conj() - alpha;
    let c = -beta;
    let (z1, z2) = if a.norm() < 1e-14 {
        // Rotation-free diagonal case: fixed points on the axis through 0.
        let dir = if b.norm() < 1e-14 { Complex64::new(1.0, 0.0) } else { c / b };
        let u = dir / dir.norm();
        (u, -u)
    } else {
        let disc = (b * b - 4.0 * a * c).sqrt();
        ((-b + disc) / (2.0 * a), (-b - disc) / (2.0 * a))
    };
    // Attracting endpoint: |g'| < 1 there.
    let d1 = g.deriv_z(z1).norm();
    let (rep, att) = if d1 < 1.0 { (z2, z1) } else { (z1, z2) };
    // Foot of the axis: closest point to origin.
    let s = rep + att;
    let (foot, dir) = if s.norm() < 1e-12 {
        (Complex64::new(0.0, 0.0), att)
    } else {
        // Chart circle through rep/att orthogonal to the unit circle: the
        // center sits on the chord bisector with Re(C conj(u)) = 1.
        let center = (rep + att) / (1.0 + (rep * att.conj()).re);
        let radius = (center.norm_sqr() - 1.0).max(0.0).sqrt();
        let foot = center - center / center.norm() * radius;
        // Tangent at the foot is orthogonal to the radius direction.
        let t = Complex64::new(0.0, 1.0) * center / center.norm();
        // Orient toward the attracting endpoint.
        let probe = geodesic_from(foot, t, 1e-3);
        let dir = if (probe - att).norm() < (foot - att).norm() { t } else { -t };
        (foot, dir)
    };
    Ok(Axis { repelling: rep, attracting: att, foot, dir })
}

impl Axis {
    /// Point at signed arclength `s` from the foot, positive toward the
    /// attracting endpoint.
    pub fn point(&self, s: f64) -> Complex64 {
        geodesic_from(self.foot, self.dir, s)
    }

    /// Signed arclength coordinate of a point assumed to lie on the axis.
    pub fn coordinate(&self, z: Complex64) -> f64 {
        // Pull back by the isometry sending foot -> 0, dir -> positive axis.
        let w = (z - self.foot) / (Complex64::new(1.0, 0.0) - self.foot.conj() * z);
        let u = w / self.dir;
        2.0 * u.re.clamp(-1.0, 1.0).atanh()
    }
}
