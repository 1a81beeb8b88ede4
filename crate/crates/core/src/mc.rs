//! Walk-on-spheres estimate of the Brownian hitting distribution of a union
//! of balls and spheres in ℝ³, the stochastic counterpart of the Newtonian
//! harmonic measure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{Point, ShapeSpec};
use crate::kernel::KernelParams;

/// Stored hit points are capped at this count.
pub const MAX_STORED_HITS: usize = 1_000_000;

/// Steps after which a walker is declared escaped; never reached in
/// practice since each step either absorbs or shrinks the distance
/// geometrically near the target.
const MAX_STEPS: usize = 100_000;

const BLOCK: usize = 1 << 16;

#[derive(Clone, Copy, Debug)]
enum Piece {
    Ball { c: [f64; 3], r: f64 },
    Sphere { c: [f64; 3], r: f64 },
}

impl Piece {
    fn center_radius(&self) -> ([f64; 3], f64) {
        match *self {
            Piece::Ball { c, r } | Piece::Sphere { c, r } => (c, r),
        }
    }

    fn distance(&self, x: &[f64; 3]) -> f64 {
        match *self {
            Piece::Ball { c, r } => (norm(&sub(x, &c)) - r).max(0.0),
            Piece::Sphere { c, r } => (norm(&sub(x, &c)) - r).abs(),
        }
    }

    fn nearest(&self, x: &[f64; 3]) -> [f64; 3] {
        let (c, r, solid) = match *self {
            Piece::Ball { c, r } => (c, r, true),
            Piece::Sphere { c, r } => (c, r, false),
        };
        let v = sub(x, &c);
        let d = norm(&v);
        if solid && d <= r {
            return *x;
        }
        if d == 0.0 {
            return [c[0] + r, c[1], c[2]];
        }
        [
            c[0] + r * v[0] / d,
            c[1] + r * v[1] / d,
            c[2] + r * v[2] / d,
        ]
    }
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: &[f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn as3(p: &Point) -> Result<[f64; 3]> {
    match p.coords() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(LabError::Unsupported(
            "walk on spheres runs in n = 3 only".into(),
        )),
    }
}

fn collect_pieces(shape: &ShapeSpec, out: &mut Vec<Piece>) -> Result<()> {
    match shape {
        ShapeSpec::Ball { center, radius } => out.push(Piece::Ball {
            c: as3(center)?,
            r: *radius,
        }),
        ShapeSpec::Sphere { center, radius } => out.push(Piece::Sphere {
            c: as3(center)?,
            r: *radius,
        }),
        ShapeSpec::Union { parts } => {
            for p in parts {
                collect_pieces(p, out)?;
            }
        }
        _ => {
            return Err(LabError::Unsupported(
                "walk on spheres targets must be unions of balls and spheres".into(),
            ))
        }
    }
    Ok(())
}

struct Target {
    pieces: Vec<Piece>,
    center: [f64; 3],
    radius: f64,
}

impl Target {
    fn new(shape: &ShapeSpec) -> Result<Self> {
        shape.validate()?;
        let mut pieces = Vec::new();
        collect_pieces(shape, &mut pieces)?;
        if pieces.is_empty() {
            return Err(LabError::param("empty target"));
        }
        let parts: Vec<([f64; 3], f64)> = pieces.iter().map(Piece::center_radius).collect();
        let mut center = [0.0; 3];
        for (c, _) in &parts {
            for i in 0..3 {
                center[i] += c[i] / parts.len() as f64;
            }
        }
        let radius = parts
            .iter()
            .map(|(c, r)| norm(&sub(c, &center)) + r)
            .fold(0.0, f64::max);
        Ok(Target {
            pieces,
            center,
            radius,
        })
    }

    fn diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for a in &self.pieces {
            for b in &self.pieces {
                let ((ca, ra), (cb, rb)) = (a.center_radius(), b.center_radius());
                d = d.max(norm(&sub(&ca, &cb)) + ra + rb);
            }
        }
        d
    }

    fn distance(&self, x: &[f64; 3]) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.pieces.iter().enumerate() {
            let d = p.distance(x);
            if d < best.0 {
                best = (d, i);
            }
        }
        best
    }
}

fn uniform_direction(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

/// Orthonormal pair completing the unit vector `e`.
fn complement(e: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let a = if e[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let d = a[0] * e[0] + a[1] * e[1] + a[2] * e[2];
    let u = [a[0] - d * e[0], a[1] - d * e[1], a[2] - d * e[2]];
    let nu = norm(&u);
    let u = [u[0] / nu, u[1] / nu, u[2] / nu];
    let v = [
        e[1] * u[2] - e[2] * u[1],
        e[2] * u[0] - e[0] * u[2],
        e[0] * u[1] - e[1] * u[0],
    ];
    (u, v)
}

/// Sample the first point of `S(center, r0)` hit by Brownian motion from
/// `x` (with `|x − center| > r0`), conditioned on hitting. The law is
/// `(R² − r0²) R / (4π r0² |x − z|³) dσ(z)`; in `u = |x − z|²` the value
/// `u^{−1/2}` is uniform on `[1/(R + r0), 1/(R − r0)]`.
pub fn sample_return(rng: &mut ChaCha8Rng, x: &[f64; 3], center: &[f64; 3], r0: f64) -> [f64; 3] {
    let v = sub(x, center);
    let r = norm(&v);
    let e = [v[0] / r, v[1] / r, v[2] / r];
    let lo = 1.0 / (r + r0);
    let hi = 1.0 / (r - r0);
    let s = lo + rng.random::<f64>() * (hi - lo);
    let u = 1.0 / (s * s);
    let t = ((r * r + r0 * r0 - u) / (2.0 * r * r0)).clamp(-1.0, 1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let st = (1.0 - t * t).max(0.0).sqrt();
    let (a, b) = complement(&e);
    let mut z = [0.0; 3];
    for i in 0..3 {
        z[i] = center[i] + r0 * (t * e[i] + st * (phi.cos() * a[i] + phi.sin() * b[i]));
    }
    z
}

fn walk(target: &Target, y: &[f64; 3], eps: f64, rng: &mut ChaCha8Rng) -> Option<[f64; 3]> {
    let mut x = *y;
    for _ in 0..MAX_STEPS {
        let (d, piece) = target.distance(&x);
        if d <= eps {
            return Some(target.pieces[piece].nearest(&x));
        }
        let rr = norm(&sub(&x, &target.center));
        if rr > target.radius * (1.0 + 1e-12) {
            if rng.random::<f64>() * rr >= target.radius {
                return None;
            }
            x = sample_return(rng, &x, &target.center, target.radius);
            continue;
        }
        let dir = uniform_direction(rng);
        for i in 0..3 {
            x[i] += d * dir[i];
        }
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WosOptions {
    /// Absorption distance; `None` means `1e−4 ·` target diameter.
    pub epsilon: Option<f64>,
    pub n_walkers: usize,
    pub seed: u64,
    pub record_hits: bool,
}

impl Default for WosOptions {
    fn default() -> Self {
        WosOptions {
            epsilon: None,
            n_walkers: 100_000,
            seed: 0,
            record_hits: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitStats {
    pub n_walkers: usize,
    pub hits: usize,
    pub hit_probability: f64,
    pub std_error: f64,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hit_points: Option<Vec<Point>>,
    /// Mean first-contact point of the walkers that hit.
    pub barycenter: Option<Point>,
    /// Standard error of each barycenter coordinate.
    pub barycenter_std_error: Option<Vec<f64>>,
    pub seed: u64,
}

/// Hitting probability of `target` from `y`. Each walker `i` draws from its
/// own ChaCha8 stream `(seed, i)`, so results do not depend on scheduling.
pub fn wos_hit(
    params: &KernelParams,
    y: &Point,
    target: &ShapeSpec,
    opts: &WosOptions,
) -> Result<HitStats> {
    if *params != KernelParams::newtonian() {
        return Err(LabError::Unsupported(
            "walk on spheres is only available for alpha = 2, n = 3".into(),
        ));
    }
    let target = Target::new(target)?;
    let y3 = as3(y)?;
    let eps = opts.epsilon.unwrap_or(1e-4 * target.diameter());
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(LabError::param(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    if opts.n_walkers == 0 {
        return Err(LabError::param("at least one walker is needed"));
    }
    let mut hits = 0usize;
    let mut sum = [0.0f64; 3];
    let mut sum_sq = [0.0f64; 3];
    let mut stored: Vec<Point> = Vec::new();
    let mut start = 0usize;
    while start < opts.n_walkers {
        let end = (start + BLOCK).min(opts.n_walkers);
        let block: Vec<Option<[f64; 3]>> = (start..end)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(i as u64);
                walk(&target, &y3, eps, &mut rng)
            })
            .collect();
        for h in block.into_iter().flatten() {
            hits += 1;
            for i in 0..3 {
                sum[i] += h[i];
                sum_sq[i] += h[i] * h[i];
            }
            if opts.record_hits && stored.len() < MAX_STORED_HITS {
                stored.push(Point::new(h.to_vec()));
            }
        }
        start = end;
    }
    let n = opts.n_walkers as f64;
    let p = hits as f64 / n;
    let (barycenter, barycenter_std_error) = if hits > 0 {
        let h = hits as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / h).collect();
        let se: Vec<f64> = (0..3)
            .map(|i| {
                let var = if hits > 1 {
                    ((sum_sq[i] - h * mean[i] * mean[i]) / (h - 1.0)).max(0.0)
                } else {
                    0.0
                };
                (var / h).sqrt()
            })
            .collect();
        (Some(Point::new(mean)), Some(se))
    } else {
        (None, None)
    };
    Ok(HitStats {
        n_walkers: opts.n_walkers,
        hits,
        hit_probability: p,
        std_error: (p * (1.0 - p) / n).sqrt(),
        epsilon: eps,
        hit_points: opts.record_hits.then_some(stored),
        barycenter,
        barycenter_std_error,
        seed: opts.seed,
    })
}
