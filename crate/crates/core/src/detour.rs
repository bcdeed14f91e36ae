//! Detour-time machinery: realized detour matrices, the phase-1 approximation
//! and its tangent-cut linearization, and boundary-curve fitting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlexError, Result};

const CURVE_TOL: f64 = 1e-12;

/// τ̃_z: detour between the zone boundary and the closest served location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum BoundaryDetourCurve {
    /// a − b·y
    Linear { a: f64, b: f64 },
    /// a·e^{−b·y} + c
    Exponential { a: f64, b: f64, c: f64 },
    /// Linear interpolation through (y, value) points, flat beyond the ends.
    Piecewise { points: Vec<(f64, f64)> },
}

impl BoundaryDetourCurve {
    pub fn value(&self, y: f64) -> f64 {
        match self {
            BoundaryDetourCurve::Linear { a, b } => a - b * y,
            BoundaryDetourCurve::Exponential { a, b, c } => a * (-b * y).exp() + c,
            BoundaryDetourCurve::Piecewise { points } => interpolate(points, y),
        }
    }

    /// Convex and non-increasing on the integers of [0, 2·cap].
    pub fn validate(&self, cap: u32) -> Result<()> {
        let n = 2 * cap as usize;
        let v: Vec<f64> = (0..=n).map(|i| self.value(i as f64)).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(FlexError::InvalidCurve("non-finite value".into()));
        }
        if v.windows(2).any(|w| w[1] > w[0] + CURVE_TOL) {
            return Err(FlexError::InvalidCurve("curve increases".into()));
        }
        if v.windows(3).any(|w| w[2] - 2.0 * w[1] + w[0] < -CURVE_TOL) {
            return Err(FlexError::InvalidCurve("negative second difference".into()));
        }
        Ok(())
    }
}

fn interpolate(points: &[(f64, f64)], y: f64) -> f64 {
    match points {
        [] => 0.0,
        [p] => p.1,
        _ => {
            if y <= points[0].0 {
                return points[0].1;
            }
            for w in points.windows(2) {
                let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                if y <= x1 {
                    return y0 + (y1 - y0) * (y - x0) / (x1 - x0);
                }
            }
            points[points.len() - 1].1
        }
    }
}

/// How off-diagonal reductions of a detour matrix are derived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ReductionRule {
    /// τ_db = −min(τ_d, τ_b)/divisor; the divisor defaults to 2·cap.
    MinOverDivisor {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        divisor: Option<f64>,
    },
    /// τ_db = −min(τ_d, τ_b)·(1 − dist/max_distance), then scaled to satisfy the reduction bound.
    Proximity { max_distance: f64 },
}

impl Default for ReductionRule {
    fn default() -> Self {
        ReductionRule::MinOverDivisor { divisor: None }
    }
}

/// T_z over the requests of one scenario, dense row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetourMatrix {
    pub zone: usize,
    pub n: usize,
    pub data: Vec<f64>,
}

impl DetourMatrix {
    pub fn zeros(zone: usize, n: usize) -> Self {
        DetourMatrix { zone, n, data: vec![0.0; n * n] }
    }

    pub fn from_rows(zone: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut m = Self::zeros(zone, n);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(FlexError::DimensionMismatch { expected: n, got: r.len() });
            }
            m.data[i * n..(i + 1) * n].copy_from_slice(r);
        }
        Ok(m)
    }

    #[inline]
    pub fn get(&self, d: usize, b: usize) -> f64 {
        self.data[d * self.n + b]
    }

    pub fn set_pair(&mut self, d: usize, b: usize, v: f64) {
        self.data[d * self.n + b] = v;
        self.data[b * self.n + d] = v;
    }

    pub fn diag(&self, d: usize) -> f64 {
        self.get(d, d)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Σ of the `cap` largest reduction magnitudes in row d.
    pub fn row_reduction(&self, d: usize, cap: u32) -> f64 {
        let mut red: Vec<f64> =
            (0..self.n).filter(|&b| b != d).map(|b| -self.get(d, b)).filter(|&r| r > 0.0).collect();
        red.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        red.iter().take(cap as usize).sum()
    }

    /// Structural checks plus τ_d ≥ Σ_{cap smallest} −2τ_db for every row.
    pub fn satisfies_reduction_bound(&self, cap: u32) -> bool {
        self.is_symmetric()
            && (0..self.n).all(|d| {
                self.diag(d) >= 0.0
                    && (0..self.n).all(|b| b == d || self.get(d, b) <= 0.0)
                    && self.diag(d) + 1e-12 >= 2.0 * self.row_reduction(d, cap)
            })
    }
}

/// wᵀ T_z w.
pub fn zonal_detour(t: &DetourMatrix, w: &[bool]) -> Result<f64> {
    if w.len() != t.n {
        return Err(FlexError::DimensionMismatch { expected: t.n, got: w.len() });
    }
    let on: Vec<usize> = (0..t.n).filter(|&i| w[i]).collect();
    Ok(detour_of_set(t, &on))
}

/// Zonal detour of an explicit request set.
pub fn detour_of_set(t: &DetourMatrix, set: &[usize]) -> f64 {
    let mut s = 0.0;
    for (k, &d) in set.iter().enumerate() {
        s += t.get(d, d);
        for &b in &set[..k] {
            s += 2.0 * t.get(d, b);
        }
    }
    s
}

/// Per-request input to [`build_detour_matrix`]; `None` marks a request not touching the zone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RequestDetour {
    pub detour: f64,
    pub location: Option<(f64, f64)>,
}

pub fn build_detour_matrix(
    requests: &[Option<RequestDetour>],
    zone: usize,
    cap: u32,
    rule: &ReductionRule,
) -> Result<DetourMatrix> {
    let n = requests.len();
    let mut m = DetourMatrix::zeros(zone, n);
    for (d, r) in requests.iter().enumerate() {
        if let Some(r) = r {
            if !(r.detour >= 0.0) {
                return Err(FlexError::NegativeDetour(r.detour, d));
            }
            m.data[d * n + d] = r.detour;
        }
    }
    for d in 0..n {
        let Some(rd) = requests[d] else { continue };
        for b in 0..d {
            let Some(rb) = requests[b] else { continue };
            let base = rd.detour.min(rb.detour);
            let v = match rule {
                ReductionRule::MinOverDivisor { divisor } => {
                    let div = divisor.unwrap_or(2.0 * cap as f64);
                    -base / div
                }
                ReductionRule::Proximity { max_distance } => {
                    let (Some(p), Some(q)) = (rd.location, rb.location) else {
                        return Err(FlexError::InvalidInstance(
                            "proximity reductions need request coordinates".into(),
                        ));
                    };
                    let dist = (p.0 - q.0).hypot(p.1 - q.1);
                    -base * (1.0 - dist / max_distance).max(0.0)
                }
            };
            if v < 0.0 {
                m.set_pair(d, b, v);
            }
        }
    }
    normalize(&mut m, cap);
    Ok(m)
}

/// Scales every off-diagonal by the largest s ∈ (0, 1] satisfying the reduction bound.
fn normalize(m: &mut DetourMatrix, cap: u32) {
    let mut s: f64 = 1.0;
    for d in 0..m.n {
        let r = m.row_reduction(d, cap);
        if r > 0.0 {
            s = s.min(m.diag(d) / (2.0 * r));
        }
    }
    if s >= 1.0 {
        return;
    }
    let n = m.n;
    let mut factor = s;
    loop {
        let mut scaled = m.clone();
        for d in 0..n {
            for b in 0..n {
                if b != d {
                    scaled.data[d * n + b] = m.data[d * n + b] * factor;
                }
            }
        }
        if (0..n).all(|d| scaled.diag(d) >= 2.0 * scaled.row_reduction(d, cap)) {
            *m = scaled;
            return;
        }
        factor *= 1.0 - 1e-12;
    }
}

/// Per-zone segment detours τ^II used by phase 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedDetourParams {
    pub tau_ii: Vec<f64>,
    pub curves: Vec<BoundaryDetourCurve>,
}

/// t = 2τ̃(ỹ) + (ỹ−1)τ^II for ỹ ≥ 1, zero for an unvisited zone.
pub fn phase1_detour(y: u32, curve: &BoundaryDetourCurve, tau_ii: f64) -> f64 {
    if y == 0 {
        0.0
    } else {
        2.0 * curve.value(y as f64) + (y as f64 - 1.0) * tau_ii
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentCut {
    pub slope: f64,
    pub intercept: f64,
}

impl TangentCut {
    pub fn at(&self, y: f64) -> f64 {
        self.slope * y + self.intercept
    }
}

/// Chords of τ̃ between every pair of consecutive integers in [0, 2·cap].
pub fn tangent_cuts(curve: &BoundaryDetourCurve, cap: u32) -> Result<Vec<TangentCut>> {
    curve.validate(cap)?;
    Ok((0..2 * cap)
        .map(|i| {
            let (a, b) = (curve.value(i as f64), curve.value(i as f64 + 1.0));
            let slope = b - a;
            TangentCut { slope, intercept: a - slope * i as f64 }
        })
        .collect())
}

/// Largest ỹ ≤ 2·cap such that every 1..=ỹ satisfies phase1_detour ≤ limit.
pub fn max_requests_within(curve: &BoundaryDetourCurve, tau_ii: f64, limit: f64, cap: u32) -> u32 {
    let mut y = 0;
    while y < 2 * cap && phase1_detour(y + 1, curve, tau_ii) <= limit + 1e-9 {
        y += 1;
    }
    y
}

/// Outcome of [`fit_boundary_curve`].
#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub curve: BoundaryDetourCurve,
    /// (i, mean detour) points from the Monte Carlo stage.
    pub points: Vec<(f64, f64)>,
    /// Standard errors of the point means.
    pub std_errors: Vec<f64>,
    pub converged: bool,
}

/// Mean boundary gap of `i` sampled locations, in minutes.
fn boundary_gap(rect: &crate::domain::Rect, pts: &[(f64, f64)], per_meter: f64) -> f64 {
    let (mut px0, mut px1, mut py0, mut py1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        px0 = px0.min(x);
        px1 = px1.max(x);
        py0 = py0.min(y);
        py1 = py1.max(y);
    }
    let gap = (rect.x_max - px1) + (px0 - rect.x_min) + (rect.y_max - py1) + (py0 - rect.y_min);
    gap / 4.0 * per_meter
}

/// Monte Carlo boundary-gap estimation followed by an exponential least-squares fit.
///
/// Each count draws its trials from its own ChaCha stream of `seed`.
pub fn fit_boundary_curve<F>(
    rect: &crate::domain::Rect,
    sampler: F,
    counts: &[usize],
    trials: usize,
    per_meter: f64,
    seed: u64,
) -> Result<FitResult>
where
    F: Fn(&mut ChaCha8Rng) -> (f64, f64) + Sync,
{
    if rect.is_degenerate() {
        return Err(FlexError::InvalidInstance("degenerate zone rectangle".into()));
    }
    if counts.is_empty() || trials == 0 || counts.contains(&0) {
        return Err(FlexError::InvalidInstance("fit needs positive counts and trials".into()));
    }
    let stats: Vec<(f64, f64, f64)> = counts
        .par_iter()
        .map(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut sum = 0.0;
            let mut sq = 0.0;
            let mut pts = Vec::with_capacity(i);
            for _ in 0..trials {
                pts.clear();
                pts.extend((0..i).map(|_| sampler(&mut rng)));
                let d = boundary_gap(rect, &pts, per_meter);
                sum += d;
                sq += d * d;
            }
            let mean = sum / trials as f64;
            let var = (sq / trials as f64 - mean * mean).max(0.0);
            (i as f64, mean, (var / trials as f64).sqrt())
        })
        .collect();
    let points: Vec<(f64, f64)> = stats.iter().map(|s| (s.0, s.1)).collect();
    let std_errors = stats.iter().map(|s| s.2).collect();
    let (curve, converged) = match fit_exponential(&points) {
        Some(c) => (c, true),
        None => (BoundaryDetourCurve::Piecewise { points: points.clone() }, false),
    };
    Ok(FitResult { curve, points, std_errors, converged })
}

/// Draws points uniformly from a rectangle.
pub fn uniform_sampler(rect: crate::domain::Rect) -> impl Fn(&mut ChaCha8Rng) -> (f64, f64) + Sync {
    move |rng: &mut ChaCha8Rng| (rng.gen_range(rect.x_min..rect.x_max), rng.gen_range(rect.y_min..rect.y_max))
}

/// Gauss–Newton fit of a·e^{−b·x} + c, with step halving when the residual grows.
pub fn fit_exponential(points: &[(f64, f64)]) -> Option<BoundaryDetourCurve> {
    if points.len() < 3 {
        return None;
    }
    let sse = |p: [f64; 3]| -> f64 {
        points.iter().map(|&(x, y)| (p[0] * (-p[1] * x).exp() + p[2] - y).powi(2)).sum()
    };
    let ymin = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let xmin = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let y_at_min = points.iter().find(|p| p.0 == xmin).map(|p| p.1).unwrap_or(ymin);
    let b0 = 0.3;
    // value at zero extrapolated from the first point, minus the far-tail proxy
    let a0 = ((y_at_min - ymin) * (b0 * xmin).exp()).max(1e-3);
    let mut p = [a0, b0, ymin];
    let mut cur = sse(p);
    for _ in 0..200 {
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for &(x, y) in points {
            let e = (-p[1] * x).exp();
            let r = p[0] * e + p[2] - y;
            let j = [e, -p[0] * x * e, 1.0];
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let step = solve3(jtj, [-jtr[0], -jtr[1], -jtr[2]])?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = [p[0] + t * step[0], p[1] + t * step[1], p[2] + t * step[2]];
            let s = sse(cand);
            if s.is_finite() && s <= cur {
                accepted = Some((cand, s));
                break;
            }
            t *= 0.5;
        }
        let (cand, s) = accepted?;
        let moved = (0..3).map(|k| (cand[k] - p[k]).abs()).fold(0.0, f64::max);
        p = cand;
        cur = s;
        if moved < 1e-10 {
            return finite_curve(p);
        }
    }
    finite_curve(p)
}

fn finite_curve(p: [f64; 3]) -> Option<BoundaryDetourCurve> {
    p.iter()
        .all(|v| v.is_finite())
        .then_some(BoundaryDetourCurve::Exponential { a: p[0], b: p[1], c: p[2] })
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..3 {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some([b[0] / a[0][0], b[1] / a[1][1], b[2] / a[2][2]])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked_example_ta() -> DetourMatrix {
        DetourMatrix::from_rows(
            0,
            &[
                vec![1.0, -0.2, -0.2, 0.0],
                vec![-0.2, 2.0, -0.5, 0.0],
                vec![-0.2, -0.5, 3.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0],
            ],
        )
        .unwrap()
    }

    #[test]
    fn zone_a_detour_of_first_three_requests() {
        let v = zonal_detour(&worked_example_ta(), &[true, true, true, false]).unwrap();
        assert!((v - 4.2).abs() < 1e-12);
    }

    #[test]
    fn zone_c_detour_hand_expansion() {
        let tc = DetourMatrix::from_rows(
            2,
            &[
                vec![2.0, -0.2, 0.0, -0.5],
                vec![-0.2, 1.0, 0.0, -0.25],
                vec![0.0, 0.0, 0.0, 0.0],
                vec![-0.5, -0.25, 0.0, 2.0],
            ],
        )
        .unwrap();
        let v = zonal_detour(&tc, &[true, true, false, true]).unwrap();
        assert!((v - 3.1).abs() < 1e-12);
    }

    #[test]
    fn empty_selection_and_dimension_error() {
        assert_eq!(zonal_detour(&worked_example_ta(), &[false; 4]).unwrap(), 0.0);
        assert!(matches!(
            zonal_detour(&worked_example_ta(), &[true; 3]),
            Err(FlexError::DimensionMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn rule_a_uses_twice_capacity() {
        let reqs = [
            Some(RequestDetour { detour: 1.5, location: None }),
            Some(RequestDetour { detour: 1.0, location: None }),
        ];
        let m = build_detour_matrix(&reqs, 0, 12, &ReductionRule::default()).unwrap();
        assert!((m.get(0, 1) + 1.0 / 24.0).abs() < 1e-15);
        assert!(m.satisfies_reduction_bound(12));
    }

    #[test]
    fn single_request_and_negative_input() {
        let m = build_detour_matrix(
            &[Some(RequestDetour { detour: 2.0, location: None })],
            0,
            4,
            &ReductionRule::default(),
        )
        .unwrap();
        assert_eq!(m.n, 1);
        assert_eq!(m.diag(0), 2.0);
        let err = build_detour_matrix(
            &[Some(RequestDetour { detour: -1.0, location: None })],
            0,
            4,
            &ReductionRule::default(),
        );
        assert!(matches!(err, Err(FlexError::NegativeDetour(..))));
    }

    #[test]
    fn proximity_rule_coincident_points_is_normalized() {
        let loc = Some((10.0, 10.0));
        let reqs: Vec<_> =
            [2.0, 3.0, 1.0].iter().map(|&d| Some(RequestDetour { detour: d, location: loc })).collect();
        let m = build_detour_matrix(&reqs, 0, 2, &ReductionRule::Proximity { max_distance: 3830.28 }).unwrap();
        assert!(m.satisfies_reduction_bound(2));
        // raw reduction for the pair (0, 1) is −2; row 2 binds: 1 ≥ 2s(1 + 1) → s = 1/4
        assert!((m.get(0, 1) + 0.5).abs() < 1e-9);
    }

    #[test]
    fn phase1_detour_examples() {
        let lin = BoundaryDetourCurve::Linear { a: 0.7, b: 0.03 };
        assert!((phase1_detour(1, &lin, 0.9) - 1.34).abs() < 1e-12);
        assert_eq!(phase1_detour(0, &lin, 5.0), 0.0);
        let exp = BoundaryDetourCurve::Exponential { a: 0.6, b: 1.0 / 12.0, c: 0.0 };
        let want = 2.0 * 0.6 * (-1.0f64 / 6.0).exp() + 1.5;
        assert!((phase1_detour(2, &exp, 1.5) - want).abs() < 1e-12);
        assert!((want - 2.5156).abs() < 5e-4);
    }

    #[test]
    fn cuts_of_linear_curve_collapse() {
        let cuts = tangent_cuts(&BoundaryDetourCurve::Linear { a: 0.7, b: 0.03 }, 12).unwrap();
        assert_eq!(cuts.len(), 24);
        for c in cuts {
            assert!((c.slope + 0.03).abs() < 1e-12 && (c.intercept - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn first_exponential_cut() {
        let cuts = tangent_cuts(&BoundaryDetourCurve::Exponential { a: 0.6, b: 1.0 / 12.0, c: 0.0 }, 12).unwrap();
        assert!((cuts[0].slope - 0.6 * ((-1.0f64 / 12.0).exp() - 1.0)).abs() < 1e-15);
        assert!((cuts[0].slope + 0.047937).abs() < 1e-4);
        assert!((cuts[0].intercept - 0.6).abs() < 1e-15);
    }

    #[test]
    fn non_convex_curve_rejected() {
        let pw = BoundaryDetourCurve::Piecewise { points: vec![(0.0, 1.0), (1.0, 0.9), (2.0, 0.2), (3.0, 0.1)] };
        assert!(matches!(tangent_cuts(&pw, 2), Err(FlexError::InvalidCurve(_))));
    }

    #[test]
    fn noiseless_fit_recovers_generator() {
        let pts: Vec<(f64, f64)> =
            (1..=20).map(|i| (i as f64, 3.0 * (-0.3 * i as f64).exp() + 0.7)).collect();
        let BoundaryDetourCurve::Exponential { a, b, c } = fit_exponential(&pts).unwrap() else { panic!() };
        assert!((a - 3.0).abs() < 1e-6 && (b - 0.3).abs() < 1e-6 && (c - 0.7).abs() < 1e-6);
    }
}
