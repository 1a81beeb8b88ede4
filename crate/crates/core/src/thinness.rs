//! Shell series for thinness at infinity and Wiener regularity, the
//! inversion that links the two, and the separated-union capacity bound.
//!
//! A series is judged from finitely many shells by the least-squares slope
//! of `ln t_k` over the last third of the shells. Geometric decay (slope
//! below `−max(δ, 2h)`) is read as convergence, where `h` is the slope that
//! a harmonic tail `t_k ∝ 1/k` would show on the same indices; slopes no
//! steeper than `−1.5 h` are read as divergence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{
    discretize, invert_discretization, shell_decompose, Discretization, Point, RotationBody,
    ShapeSpec, ShellDirection,
};
use crate::kernel::{kelvin_transform, KernelParams};
use crate::potential_ops::{equilibrium, Assembled};

/// Minimum number of shells the classifier accepts.
pub const MIN_SHELLS: usize = 6;

/// How shell pieces are resolved.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShellResolution {
    /// The same resolution for every piece.
    Fixed(usize),
    /// Per piece, the first resolution (scanned upward in 10% steps) giving
    /// a node count in `[min_nodes, max_nodes]`.
    Budget { min_nodes: usize, max_nodes: usize },
}

impl Default for ShellResolution {
    fn default() -> Self {
        ShellResolution::Budget {
            min_nodes: 200,
            max_nodes: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellCapacity {
    pub k: i32,
    pub capacity: f64,
    pub nodes: usize,
    pub resolution: usize,
    /// False when a piece that may be nonempty produced no nodes.
    pub reliable: bool,
}

/// Range of `|x − y|` over a shape, when cheaply known.
fn distance_range(shape: &ShapeSpec, y: &Point) -> Option<(f64, f64)> {
    match shape {
        ShapeSpec::Ball { center, radius } => {
            let d = center.dist(y);
            Some(((d - radius).max(0.0), d + radius))
        }
        ShapeSpec::Sphere { center, radius } => {
            let d = center.dist(y);
            Some(((d - radius).abs(), d + radius))
        }
        ShapeSpec::Box { lo, hi } => Some(box_range(lo.coords(), hi.coords(), y.coords())),
        ShapeSpec::RotationBody(b) => {
            let r = b.radius(b.x1_lo.max(f64::MIN_POSITIVE)).min(f64::MAX);
            Some(box_range(&[b.x1_lo, -r, -r], &[b.x1_hi, r, r], y.coords()))
        }
        ShapeSpec::Union { parts } => parts.iter().try_fold((f64::INFINITY, 0.0f64), |acc, p| {
            let (a, b) = distance_range(p, y)?;
            Some((acc.0.min(a), acc.1.max(b)))
        }),
        ShapeSpec::PointCloud { points, cell_radii } => Some(points.iter().zip(cell_radii).fold(
            (f64::INFINITY, 0.0f64),
            |acc, (p, r)| {
                let d = p.dist(y);
                (acc.0.min((d - r).max(0.0)), acc.1.max(d + r))
            },
        )),
        ShapeSpec::Restricted { base, .. } => distance_range(base, y),
        ShapeSpec::Inverted { base, center } if center == y => {
            let (a, b) = distance_range(base, y)?;
            Some((1.0 / b, if a > 0.0 { 1.0 / a } else { f64::INFINITY }))
        }
        ShapeSpec::Inverted { .. } => None,
    }
}

fn box_range(lo: &[f64], hi: &[f64], y: &[f64]) -> (f64, f64) {
    let mut near = 0.0;
    let mut far = 0.0;
    for ((a, b), c) in lo.iter().zip(hi).zip(y) {
        let n = (a - c).max(c - b).max(0.0);
        let f = (c - a).abs().max((b - c).abs());
        near += n * n;
        far += f * f;
    }
    (near.sqrt(), far.sqrt())
}

fn resolve_piece(piece: &ShapeSpec, res: ShellResolution) -> Result<(Discretization, usize)> {
    match res {
        ShellResolution::Fixed(r) => Ok((discretize(piece, r)?, r)),
        ShellResolution::Budget {
            min_nodes,
            max_nodes,
        } => {
            let mut r = 2usize;
            let mut best: Option<(Discretization, usize)> = None;
            let mut best_miss = usize::MAX;
            while r <= 1 << 16 {
                let d = discretize(piece, r)?;
                let n = d.len();
                if (min_nodes..=max_nodes).contains(&n) {
                    return Ok((d, r));
                }
                let miss = if n < min_nodes {
                    min_nodes - n
                } else {
                    n - max_nodes
                };
                if n > 0 && miss < best_miss {
                    best_miss = miss;
                    best = Some((d, r));
                }
                if n > max_nodes {
                    break;
                }
                // volume grids grow like r³; give up on pieces that stay empty
                if n == 0 && r > 256 {
                    break;
                }
                let growth = if n == 0 { 2.0 } else { 1.1 };
                r = ((r as f64 * growth).ceil() as usize).max(r + 1);
            }
            Ok(best.unwrap_or_else(|| (Discretization::empty(piece.clone()), r)))
        }
    }
}

/// Discretized shell pieces with their resolution and reliability flag.
pub fn shell_discretizations(
    shape: &ShapeSpec,
    y: &Point,
    q: f64,
    k_range: (i32, i32),
    direction: ShellDirection,
    res: ShellResolution,
) -> Result<Vec<(i32, Discretization, usize, bool)>> {
    let dec = shell_decompose(shape, y, q, k_range, direction)?;
    let range = distance_range(shape, y);
    dec.ks()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|k| {
            let piece = dec.piece(k).expect("k in range");
            let ShapeSpec::Restricted { shell, .. } = piece else {
                unreachable!("shell pieces are restrictions")
            };
            let (lo, hi) = shell.radii();
            let certainly_empty = range.is_some_and(|(a, b)| b <= lo || a >= hi);
            if certainly_empty {
                return Ok((k, Discretization::empty(piece.clone()), 0, true));
            }
            let (d, r) = resolve_piece(piece, res)?;
            let reliable = !d.is_empty();
            Ok((k, d, r, reliable))
        })
        .collect()
}

/// Capacity of each shell piece `A ∩ annulus_k`.
pub fn shell_capacities(
    params: &KernelParams,
    shape: &ShapeSpec,
    y: &Point,
    q: f64,
    k_range: (i32, i32),
    direction: ShellDirection,
    res: ShellResolution,
) -> Result<Vec<ShellCapacity>> {
    let pieces = shell_discretizations(shape, y, q, k_range, direction, res)?;
    capacities_of(params, &pieces)
}

fn capacities_of(
    params: &KernelParams,
    pieces: &[(i32, Discretization, usize, bool)],
) -> Result<Vec<ShellCapacity>> {
    pieces
        .par_iter()
        .map(|(k, d, r, reliable)| {
            Ok(ShellCapacity {
                k: *k,
                capacity: equilibrium(params, d)?.capacity_mass,
                nodes: d.len(),
                resolution: *r,
                reliable: *reliable,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinnessVerdict {
    NotThin,
    ThinNotUltrathin,
    Ultrathin,
    Inconclusive,
}

impl ThinnessVerdict {
    pub fn is_thin(self) -> bool {
        matches!(
            self,
            ThinnessVerdict::ThinNotUltrathin | ThinnessVerdict::Ultrathin
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesVerdict {
    Convergent,
    Divergent,
    Inconclusive,
}

/// Tail decision for a series of nonnegative terms indexed by `ks`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub slope: Option<f64>,
    pub threshold: f64,
    pub harmonic_slope: f64,
    pub verdict: SeriesVerdict,
}

fn slope_fit(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Decide convergence from the last third of the terms. `delta` is the
/// minimal decay rate per shell.
pub fn fit_tail(ks: &[i32], terms: &[f64], delta: f64) -> Result<TailFit> {
    if ks.len() != terms.len() || ks.len() < MIN_SHELLS {
        return Err(LabError::param(format!(
            "at least {MIN_SHELLS} shells are needed, got {}",
            ks.len()
        )));
    }
    let m = ks.len().div_ceil(3);
    let tail_k = &ks[ks.len() - m..];
    let tail_t = &terms[terms.len() - m..];
    let (k_lo, k_hi) = (
        tail_k[0].abs().max(1) as f64,
        tail_k[m - 1].abs().max(1) as f64,
    );
    let span = (tail_k[m - 1] - tail_k[0]).max(1) as f64;
    let harmonic_slope = (k_hi.ln() - k_lo.ln()).abs() / span;
    let threshold = delta.max(2.0 * harmonic_slope);
    let positive = tail_t.iter().filter(|t| **t > 0.0).count();
    if positive == 0 {
        return Ok(TailFit {
            slope: None,
            threshold,
            harmonic_slope,
            verdict: SeriesVerdict::Convergent,
        });
    }
    if positive < m {
        return Ok(TailFit {
            slope: None,
            threshold,
            harmonic_slope,
            verdict: SeriesVerdict::Inconclusive,
        });
    }
    let xs: Vec<f64> = tail_k.iter().map(|&k| k as f64).collect();
    let ys: Vec<f64> = tail_t.iter().map(|t| t.ln()).collect();
    let slope = slope_fit(&xs, &ys);
    let verdict = if slope < -threshold {
        SeriesVerdict::Convergent
    } else if slope >= -1.5 * harmonic_slope {
        SeriesVerdict::Divergent
    } else {
        SeriesVerdict::Inconclusive
    };
    Ok(TailFit {
        slope: Some(slope),
        threshold,
        harmonic_slope,
        verdict,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThinnessReport {
    pub shell_caps: Vec<(i32, f64)>,
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// Partial sums of the capacities themselves.
    pub capacity_sums: Vec<f64>,
    pub tail_slope: Option<f64>,
    pub capacity_tail_slope: Option<f64>,
    pub threshold: f64,
    pub verdict: ThinnessVerdict,
    pub q: f64,
    pub k_range: (i32, i32),
    pub reliable: bool,
}

impl ThinnessReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["k", "c_k", "t_k", "partial_sum"])?;
        for (i, (k, c)) in self.shell_caps.iter().enumerate() {
            w.write_record([
                k.to_string(),
                c.to_string(),
                self.terms[i].to_string(),
                self.partial_sums[i].to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| LabError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

fn partial_sums(terms: &[f64]) -> Vec<f64> {
    terms
        .iter()
        .scan(0.0, |s, t| {
            *s += t;
            Some(*s)
        })
        .collect()
}

fn default_delta(q: f64) -> f64 {
    0.05 * q.ln().abs()
}

/// Thinness at infinity from outer shell capacities:
/// `t_k = c(A_k) / q^{k(n−α)}`.
pub fn classify_thinness(
    shell_caps: &[ShellCapacity],
    params: &KernelParams,
    q: f64,
) -> Result<ThinnessReport> {
    if !(q > 1.0) {
        return Err(LabError::param(
            "thinness at infinity uses outer shells, q > 1",
        ));
    }
    let ks: Vec<i32> = shell_caps.iter().map(|s| s.k).collect();
    let caps: Vec<f64> = shell_caps.iter().map(|s| s.capacity).collect();
    let terms: Vec<f64> = ks
        .iter()
        .zip(&caps)
        .map(|(&k, c)| c / q.powf(k as f64 * params.degree()))
        .collect();
    let delta = default_delta(q);
    let fit = fit_tail(&ks, &terms, delta)?;
    let cap_fit = fit_tail(&ks, &caps, delta)?;
    let verdict = match fit.verdict {
        SeriesVerdict::Divergent => ThinnessVerdict::NotThin,
        SeriesVerdict::Inconclusive => ThinnessVerdict::Inconclusive,
        SeriesVerdict::Convergent => {
            if cap_fit.verdict == SeriesVerdict::Convergent {
                ThinnessVerdict::Ultrathin
            } else {
                ThinnessVerdict::ThinNotUltrathin
            }
        }
    };
    Ok(ThinnessReport {
        shell_caps: ks.iter().copied().zip(caps.iter().copied()).collect(),
        partial_sums: partial_sums(&terms),
        capacity_sums: partial_sums(&caps),
        terms,
        tail_slope: fit.slope,
        capacity_tail_slope: cap_fit.slope,
        threshold: fit.threshold,
        verdict,
        q,
        k_range: (ks[0], ks[ks.len() - 1]),
        reliable: shell_caps.iter().all(|s| s.reliable),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularity {
    Regular,
    Irregular,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityVerdict {
    pub y: Point,
    pub shell_caps: Vec<(i32, f64)>,
    /// `c(A_k) / q^{k(n−α)}` with `q < 1`.
    pub series_terms: Vec<f64>,
    pub partial_sum: f64,
    pub tail_slope: Option<f64>,
    pub threshold: f64,
    pub verdict: Regularity,
    pub reliable: bool,
}

pub fn regularity_from_caps(
    params: &KernelParams,
    y: &Point,
    q: f64,
    shell_caps: &[ShellCapacity],
) -> Result<RegularityVerdict> {
    if !(q > 0.0 && q < 1.0) {
        return Err(LabError::param("Wiener shells need 0 < q < 1"));
    }
    let ks: Vec<i32> = shell_caps.iter().map(|s| s.k).collect();
    let terms: Vec<f64> = shell_caps
        .iter()
        .map(|s| s.capacity / q.powf(s.k as f64 * params.degree()))
        .collect();
    let fit = fit_tail(&ks, &terms, default_delta(q))?;
    Ok(RegularityVerdict {
        y: y.clone(),
        shell_caps: shell_caps.iter().map(|s| (s.k, s.capacity)).collect(),
        partial_sum: terms.iter().fold(0.0, |a, t| a + t),
        series_terms: terms,
        tail_slope: fit.slope,
        threshold: fit.threshold,
        verdict: match fit.verdict {
            SeriesVerdict::Convergent => Regularity::Irregular,
            SeriesVerdict::Divergent => Regularity::Regular,
            SeriesVerdict::Inconclusive => Regularity::Inconclusive,
        },
        reliable: shell_caps.iter().all(|s| s.reliable),
    })
}

/// Wiener test at `y` with inner shells `q^{k+1} < |x − y| ≤ q^k`.
pub fn wiener_regularity(
    params: &KernelParams,
    shape: &ShapeSpec,
    y: &Point,
    q: f64,
    k_range: (i32, i32),
    res: ShellResolution,
) -> Result<RegularityVerdict> {
    let caps = shell_capacities(params, shape, y, q, k_range, ShellDirection::Inner, res)?;
    regularity_from_caps(params, y, q, &caps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub k: i32,
    pub capacity: f64,
    pub inverted_capacity: f64,
    pub lower: f64,
    pub upper: f64,
    pub within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionComparison {
    pub direct: ThinnessReport,
    pub inverted: RegularityVerdict,
    /// Thin at infinity exactly when `y` is irregular for the image.
    pub agree: bool,
    pub transfer: Vec<TransferRow>,
    pub transfer_ok: bool,
    /// Shell used for the Kelvin cross-check.
    pub kelvin_shell: Option<i32>,
    /// `max_i |ε_y^{K*}_i − (𝒦_y γ_K)_i|` on that shell.
    pub kelvin_max_deviation: Option<f64>,
    pub kelvin_interior: bool,
    /// No nonempty shell was available for the cross-check.
    pub inconclusive: bool,
}

/// Options shared by the inversion comparison and the example runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellOptions {
    pub q: f64,
    pub k_range: (i32, i32),
    pub resolution: ShellResolution,
    /// Relative slack on the capacity transfer bounds.
    pub transfer_slack: f64,
}

impl Default for ShellOptions {
    fn default() -> Self {
        ShellOptions {
            q: 2.0,
            k_range: (1, 12),
            resolution: ShellResolution::default(),
            transfer_slack: 0.1,
        }
    }
}

/// Thinness of `shape` at infinity against Wiener regularity of `y` for
/// `J_y(shape)`, plus the shell capacity transfer bounds and a Kelvin
/// cross-check `ε_y^{K*} = 𝒦_y γ_K` on the first nonempty shell `K`.
pub fn thinness_via_inversion(
    params: &KernelParams,
    shape: &ShapeSpec,
    y: &Point,
    opts: &ShellOptions,
) -> Result<InversionComparison> {
    if shape.contains(y) {
        return Err(LabError::domain(
            "the inversion centre must lie outside the shape",
        ));
    }
    let q = opts.q;
    let direct_pieces = shell_discretizations(
        shape,
        y,
        q,
        opts.k_range,
        ShellDirection::Outer,
        opts.resolution,
    )?;
    let direct_caps = capacities_of(params, &direct_pieces)?;
    let direct = classify_thinness(&direct_caps, params, q)?;

    let image = ShapeSpec::Inverted {
        base: Box::new(shape.clone()),
        center: y.clone(),
    };
    let inverted_caps = shell_capacities(
        params,
        &image,
        y,
        1.0 / q,
        opts.k_range,
        ShellDirection::Inner,
        opts.resolution,
    )?;
    let inverted = regularity_from_caps(params, y, 1.0 / q, &inverted_caps)?;

    let agree = match (direct.verdict, inverted.verdict) {
        (ThinnessVerdict::NotThin, Regularity::Regular) => true,
        (v, Regularity::Irregular) => v.is_thin(),
        _ => false,
    };

    let deg = params.degree();
    let slack = opts.transfer_slack;
    let transfer: Vec<TransferRow> = direct_caps
        .iter()
        .zip(&inverted_caps)
        .map(|(d, i)| {
            let k = d.k as f64;
            let lower = q.powf(-(2.0 * k + 2.0) * deg) * d.capacity;
            let upper = q.powf(-2.0 * k * deg) * d.capacity;
            let c = i.capacity;
            TransferRow {
                k: d.k,
                capacity: d.capacity,
                inverted_capacity: c,
                lower,
                upper,
                within: c >= (1.0 - slack) * lower && c <= (1.0 + slack) * upper,
            }
        })
        .collect();
    let transfer_ok = transfer.iter().all(|t| t.within);

    let first = direct_pieces.iter().find(|(_, d, _, _)| !d.is_empty());
    let (kelvin_shell, kelvin_max_deviation, kelvin_interior) = match first {
        None => (None, None, false),
        Some((k, disc, _, _)) => {
            let asm = Assembled::new(params, disc)?;
            let gamma = asm.equilibrium()?;
            let star = kelvin_transform(params, y, &gamma.measure)?;
            let image_disc = invert_discretization(disc, y)?;
            let image_asm = Assembled::new(params, &image_disc)?;
            let h = image_asm.harmonic_measure(y, &[])?;
            let dev = h
                .swept
                .weights()
                .iter()
                .zip(star.weights())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            (
                Some(*k),
                Some(dev),
                gamma.kkt.is_interior() && h.kkt.is_interior(),
            )
        }
    };

    Ok(InversionComparison {
        direct,
        inverted,
        agree,
        transfer,
        transfer_ok,
        kelvin_shell,
        kelvin_max_deviation,
        kelvin_interior,
        inconclusive: kelvin_shell.is_none(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubadditivityGap {
    pub cap_a: f64,
    pub cap_b: f64,
    pub cap_union: f64,
    /// Euclidean distance between the node sets.
    pub distance: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    /// `c(A) + c(B) − c(A ∪ B)`.
    pub plain_margin: f64,
}

/// `c(A) + c(B) ≤ c(A ∪ B)·[1 + max(c(A), c(B)) / d^{n−α}]` for node sets at
/// distance `d > 0`.
pub fn subadditivity_gap(
    params: &KernelParams,
    disc_a: &Discretization,
    disc_b: &Discretization,
) -> Result<SubadditivityGap> {
    let distance = disc_a
        .nodes
        .par_iter()
        .map(|x| {
            disc_b
                .nodes
                .iter()
                .map(|z| x.dist(z))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min);
    if disc_a.is_empty() || disc_b.is_empty() {
        let c = equilibrium(params, if disc_a.is_empty() { disc_b } else { disc_a })?.capacity_mass;
        return Ok(SubadditivityGap {
            cap_a: if disc_a.is_empty() { 0.0 } else { c },
            cap_b: if disc_b.is_empty() { 0.0 } else { c },
            cap_union: c,
            distance,
            lhs: c,
            rhs: c,
            margin: 0.0,
            plain_margin: 0.0,
        });
    }
    if !(distance > 0.0) {
        return Err(LabError::param(
            "node sets overlap, their distance is undefined",
        ));
    }
    let union = Discretization::concat(&[disc_a.clone(), disc_b.clone()]);
    let (ca, (cb, cu)) = rayon::join(
        || equilibrium(params, disc_a).map(|e| e.capacity_mass),
        || {
            rayon::join(
                || equilibrium(params, disc_b).map(|e| e.capacity_mass),
                || equilibrium(params, &union).map(|e| e.capacity_mass),
            )
        },
    );
    let (ca, cb, cu) = (ca?, cb?, cu?);
    let lhs = ca + cb;
    let rhs = cu * (1.0 + ca.max(cb) / distance.powf(params.degree()));
    Ok(SubadditivityGap {
        cap_a: ca,
        cap_b: cb,
        cap_union: cu,
        distance,
        lhs,
        rhs,
        margin: rhs - lhs,
        plain_margin: lhs - cu,
    })
}

/// The solid of revolution `x₂² + x₃² ≤ ϱ(x₁)²`, `x₁ ∈ [x1_lo, x1_hi]`.
pub fn rotation_body(family: u8, s: f64, x1_lo: f64, x1_hi: f64) -> Result<ShapeSpec> {
    Ok(ShapeSpec::RotationBody(RotationBody::new(
        family, s, x1_lo, x1_hi,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn newton() -> KernelParams {
        KernelParams::newtonian()
    }

    fn caps(values: &[f64]) -> Vec<ShellCapacity> {
        values
            .iter()
            .enumerate()
            .map(|(i, &c)| ShellCapacity {
                k: i as i32 + 1,
                capacity: c,
                nodes: 1,
                resolution: 1,
                reliable: true,
            })
            .collect()
    }

    #[test]
    fn synthetic_series_verdicts() {
        let q: f64 = 2.0;
        // c_k = q^k / k: terms 1/k, harmonic divergence
        let v: Vec<f64> = (1..=12).map(|k| q.powi(k) / k as f64).collect();
        assert_eq!(
            classify_thinness(&caps(&v), &newton(), q).unwrap().verdict,
            ThinnessVerdict::NotThin
        );
        // c_k = q^{k/2}: terms decay geometrically, caps grow
        let v: Vec<f64> = (1..=12).map(|k| q.powf(0.5 * k as f64)).collect();
        assert_eq!(
            classify_thinness(&caps(&v), &newton(), q).unwrap().verdict,
            ThinnessVerdict::ThinNotUltrathin
        );
        // c_k = q^{-k}
        let v: Vec<f64> = (1..=12).map(|k| q.powi(-k)).collect();
        let r = classify_thinness(&caps(&v), &newton(), q).unwrap();
        assert_eq!(r.verdict, ThinnessVerdict::Ultrathin);
        assert!(r.partial_sums.windows(2).all(|w| w[1] >= w[0]));
        // compact: empty tail
        let mut v = vec![1.0, 0.5];
        v.extend(std::iter::repeat_n(0.0, 10));
        assert_eq!(
            classify_thinness(&caps(&v), &newton(), q).unwrap().verdict,
            ThinnessVerdict::Ultrathin
        );
        assert!(classify_thinness(&caps(&[1.0; 5]), &newton(), q).is_err());
    }

    #[test]
    fn report_csv_has_one_row_per_shell() {
        let v: Vec<f64> = (1..=6).map(|k| k as f64).collect();
        let r = classify_thinness(&caps(&v), &newton(), 2.0).unwrap();
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with("k,c_k,t_k,partial_sum"));
    }

    #[test]
    fn unit_ball_has_empty_outer_shells() {
        let c = shell_capacities(
            &newton(),
            &ShapeSpec::ball([0.0; 3], 1.0),
            &Point::origin(3),
            2.0,
            (1, 12),
            ShellDirection::Outer,
            ShellResolution::default(),
        )
        .unwrap();
        assert!(c.iter().all(|s| s.capacity == 0.0 && s.reliable));
    }

    #[test]
    fn translated_sphere_in_a_shell_has_unit_capacity() {
        let k = 3;
        let center = [1.5 * 2f64.powi(k), 0.0, 0.0];
        let c = shell_capacities(
            &newton(),
            &ShapeSpec::sphere(center, 1.0),
            &Point::origin(3),
            2.0,
            (k, k),
            ShellDirection::Outer,
            ShellResolution::default(),
        )
        .unwrap();
        assert!((c[0].capacity - 1.0).abs() < 0.02, "{:?}", c[0]);
    }

    #[test]
    fn rotation_body_examples() {
        let ShapeSpec::RotationBody(b) = rotation_body(1, 0.0, 0.0, 5.0).unwrap() else {
            panic!()
        };
        assert_eq!(b.radius(3.0), 1.0);
        let ShapeSpec::RotationBody(b) = rotation_body(2, 1.0, 0.0, 5.0).unwrap() else {
            panic!()
        };
        assert!((b.radius(1.0) - 0.36787944117144233).abs() < 1e-15);
        let ShapeSpec::RotationBody(b) = rotation_body(3, 2.0, 0.0, 5.0).unwrap() else {
            panic!()
        };
        assert!((b.radius(3.0) - 1.2340980408667956e-4).abs() < 1e-18);
        assert!(rotation_body(2, 2.0, 0.0, 5.0).is_err());
    }

    #[test]
    fn wiener_at_ball_centre_and_far_point() {
        let ball = ShapeSpec::ball([0.0; 3], 1.0);
        let res = ShellResolution::Budget {
            min_nodes: 200,
            max_nodes: 800,
        };
        let v = wiener_regularity(&newton(), &ball, &Point::origin(3), 0.5, (1, 8), res).unwrap();
        assert_eq!(v.verdict, Regularity::Regular, "{v:?}");
        let v = wiener_regularity(
            &newton(),
            &ball,
            &Point::from([2.0, 0.0, 0.0]),
            0.5,
            (1, 8),
            res,
        )
        .unwrap();
        assert_eq!(v.verdict, Regularity::Irregular);
    }

    #[test]
    fn subadditivity_of_two_spheres() {
        let a = discretize(&ShapeSpec::sphere([0.0; 3], 1.0), 300).unwrap();
        let b = discretize(&ShapeSpec::sphere([4.0, 0.0, 0.0], 1.0), 300).unwrap();
        let g = subadditivity_gap(&newton(), &a, &b).unwrap();
        assert!((g.lhs - 2.0).abs() < 0.05);
        assert!(g.cap_union > 1.5 && g.cap_union < 2.0);
        assert!(g.margin >= 0.0);
        let empty = Discretization::empty(ShapeSpec::ball([9.0, 0.0, 0.0], 1.0));
        let g = subadditivity_gap(&newton(), &a, &empty).unwrap();
        assert_eq!(g.lhs, g.cap_union);
        assert!(subadditivity_gap(&newton(), &a, &a).is_err());
    }
}
