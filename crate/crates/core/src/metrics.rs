//! Overlap and surface-distance metrics for binary masks.
//!
//! Distances are Euclidean between voxel centres in millimetres, with voxel
//! `(z, y, x)` placed at `(z * sz, y * sy, x * sx)`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::volume::LabelMask;

fn check_pair(p: &LabelMask, g: &LabelMask) -> Result<()> {
    if p.shape() != g.shape() {
        return Err(Error::Shape(format!("prediction {} vs ground truth {}", p.shape(), g.shape())));
    }
    Ok(())
}

/// `2 |P & G| / (|P| + |G|)`.
pub fn dsc(p: &LabelMask, g: &LabelMask) -> Result<f64> {
    check_pair(p, g)?;
    let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (a, b) in p.data().iter().zip(g.data()) {
        inter += (a & b) as usize;
        np += *a as usize;
        ng += *b as usize;
    }
    if np + ng == 0 {
        return Err(Error::Degenerate("dice of two empty masks is undefined".into()));
    }
    Ok(2.0 * inter as f64 / (np + ng) as f64)
}

/// Boundary voxel centres in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    pub points: Vec<[f64; 3]>,
}

impl SurfacePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Whether foreground voxel `(z, y, x)` has a background 6-neighbour; the
/// outside of the grid counts as background.
pub fn is_surface_voxel(m: &LabelMask, z: usize, y: usize, x: usize) -> bool {
    let s = m.shape();
    let (z, y, x) = (z as isize, y as isize, x as isize);
    const N6: [[isize; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];
    N6.iter().any(|[dz, dy, dx]| match s.checked_index(z + dz, y + dy, x + dx) {
        Some(i) => m.data()[i] == 0,
        None => true,
    })
}

/// Surface voxel coordinates, as a mask.
pub fn surface_mask(m: &LabelMask) -> LabelMask {
    let s = m.shape();
    let data = (0..s.len())
        .map(|i| {
            let [z, y, x] = s.coords(i);
            (m.data()[i] == 1 && is_surface_voxel(m, z, y, x)) as u8
        })
        .collect();
    m.with_data(s, data).expect("same shape, binary values")
}

pub fn extract_surface(m: &LabelMask) -> Result<SurfacePointSet> {
    let s = m.shape();
    let sp = m.spacing().map(f64::from);
    let mut points = Vec::new();
    for z in 0..s.d {
        for y in 0..s.h {
            for x in 0..s.w {
                if m.get(z, y, x) && is_surface_voxel(m, z, y, x) {
                    points.push([z as f64 * sp[0], y as f64 * sp[1], x as f64 * sp[2]]);
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::Degenerate("mask has no foreground voxels".into()));
    }
    Ok(SurfacePointSet { points })
}

#[inline]
fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dz, dy, dx) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dz * dz + dy * dy + dx * dx
}

/// Static 3-d tree for exact nearest-neighbour distances.
///
/// Points are stored in median-split order; node `mid` of range `[lo, hi)`
/// splits on `axis[mid]`.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    axis: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[[f64; 3]]) -> Self {
        let mut t = Self { points: points.to_vec(), axis: vec![0; points.len()] };
        let n = t.points.len();
        t.build(0, n);
        t
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= 1 {
            return;
        }
        let slice = &self.points[lo..hi];
        let mut spread = [0.0f64; 3];
        for (a, s) in spread.iter_mut().enumerate() {
            let (mn, mx) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), p| (mn.min(p[a]), mx.max(p[a])));
            *s = mx - mn;
        }
        let axis = (0..3).max_by(|&a, &b| spread[a].total_cmp(&spread[b]).then(b.cmp(&a))).unwrap_or(0);
        let mid = lo + (hi - lo) / 2;
        self.points[lo..hi].select_nth_unstable_by(mid - lo, |p, q| p[axis].total_cmp(&q[axis]));
        self.axis[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    /// Smallest squared distance from `q` to any stored point.
    pub fn nearest_sq(&self, q: &[f64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        self.search(q, 0, self.points.len(), &mut best);
        best
    }

    fn search(&self, q: &[f64; 3], lo: usize, hi: usize, best: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = &self.points[mid];
        let d = sq_dist(q, p);
        if d < *best {
            *best = d;
        }
        if hi - lo == 1 {
            return;
        }
        let a = self.axis[mid] as usize;
        let diff = q[a] - p[a];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, best);
        // any point across the plane is at least |diff| away along this axis
        if diff * diff <= *best {
            self.search(q, far.0, far.1, best);
        }
    }
}

/// Distance from each point of `x` to its nearest neighbour in `y`.
pub fn directed_distances(x: &SurfacePointSet, y: &SurfacePointSet) -> Result<Vec<f64>> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Degenerate("surface distance needs two nonempty point sets".into()));
    }
    let tree = KdTree::new(&y.points);
    Ok(x.points.iter().map(|p| tree.nearest_sq(p).sqrt()).collect())
}

/// One-sided Hausdorff distance `max_x min_y |x - y|`.
pub fn directed_hd(x: &SurfacePointSet, y: &SurfacePointSet) -> Result<f64> {
    Ok(directed_distances(x, y)?.into_iter().fold(0.0, f64::max))
}

pub fn hd(x: &SurfacePointSet, y: &SurfacePointSet) -> Result<f64> {
    Ok(directed_hd(x, y)?.max(directed_hd(y, x)?))
}

/// `q`-quantile with linear interpolation between order statistics at
/// position `q (n - 1)`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Degenerate("percentile of an empty list".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Invalid(format!("quantile {q} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&v, q))
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Larger of the two directed 95th-percentile surface distances.
pub fn hd95(x: &SurfacePointSet, y: &SurfacePointSet) -> Result<f64> {
    let a = percentile(&directed_distances(x, y)?, 0.95)?;
    let b = percentile(&directed_distances(y, x)?, 0.95)?;
    Ok(a.max(b))
}

/// Hausdorff distance and HD95 from one pair of nearest-distance passes.
pub fn hd_and_hd95(x: &SurfacePointSet, y: &SurfacePointSet) -> Result<(f64, f64)> {
    let mut a = directed_distances(x, y)?;
    let mut b = directed_distances(y, x)?;
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let h = a[a.len() - 1].max(b[b.len() - 1]);
    Ok((h, quantile_sorted(&a, 0.95).max(quantile_sorted(&b, 0.95))))
}

/// Per-case evaluation row. Surface distances are `None` when the prediction
/// is empty and therefore has no surface.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub case_id: String,
    pub dsc: f64,
    pub hd_mm: Option<f64>,
    pub hd95_mm: Option<f64>,
    pub prediction_seconds: Option<f64>,
}

pub fn evaluate_case(case_id: &str, pred: &LabelMask, gt: &LabelMask, seconds: Option<f64>) -> Result<MetricsReport> {
    check_pair(pred, gt)?;
    if pred.spacing() != gt.spacing() {
        return Err(Error::Geometry(format!(
            "spacing differs: prediction {:?} vs ground truth {:?}",
            pred.spacing(),
            gt.spacing()
        )));
    }
    if let Some(s) = seconds {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::Invalid(format!("prediction time {s} must be a nonnegative number")));
        }
    }
    let d = dsc(pred, gt)?;
    let (hd_mm, hd95_mm) = if pred.count_foreground() == 0 || gt.count_foreground() == 0 {
        (None, None)
    } else {
        let (h, h95) = hd_and_hd95(&extract_surface(pred)?, &extract_surface(gt)?)?;
        (Some(h), Some(h95))
    };
    Ok(MetricsReport { case_id: case_id.to_string(), dsc: d, hd_mm, hd95_mm, prediction_seconds: seconds })
}

/// Mean, sample standard deviation and five-number summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            n,
            mean,
            sd,
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSummary {
    pub cases: usize,
    pub dsc: Option<Summary>,
    pub hd_mm: Option<Summary>,
    pub hd95_mm: Option<Summary>,
    pub seconds: Option<Summary>,
    /// Cases whose surface distances are undefined.
    pub undefined_hd: usize,
}

pub fn summarize(reports: &[MetricsReport]) -> CohortSummary {
    let dsc: Vec<f64> = reports.iter().map(|r| r.dsc).collect();
    let hd: Vec<f64> = reports.iter().filter_map(|r| r.hd_mm).collect();
    let hd95: Vec<f64> = reports.iter().filter_map(|r| r.hd95_mm).collect();
    let secs: Vec<f64> = reports.iter().filter_map(|r| r.prediction_seconds).collect();
    CohortSummary {
        cases: reports.len(),
        dsc: Summary::of(&dsc),
        hd_mm: Summary::of(&hd),
        hd95_mm: Summary::of(&hd95),
        seconds: Summary::of(&secs),
        undefined_hd: reports.iter().filter(|r| r.hd_mm.is_none()).count(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

/// Comma-separated per-case table followed by a `#`-prefixed summary block.
pub fn format_report(reports: &[MetricsReport]) -> String {
    let mut out = String::from("case_id,dsc,hd_mm,hd95_mm,seconds\n");
    for r in reports {
        let secs = r.prediction_seconds.map_or_else(|| "NA".to_string(), |s| format!("{s:.3}"));
        let _ = writeln!(out, "{},{:.6},{},{},{}", r.case_id, r.dsc, opt(r.hd_mm), opt(r.hd95_mm), secs);
    }
    let s = summarize(reports);
    let _ = writeln!(out, "# cases {} (undefined surface distance: {})", s.cases, s.undefined_hd);
    let _ = writeln!(out, "# metric,n,mean,sd,min,q1,median,q3,max");
    for (name, m) in [("dsc", s.dsc), ("hd_mm", s.hd_mm), ("hd95_mm", s.hd95_mm), ("seconds", s.seconds)] {
        if let Some(m) = m {
            let _ = writeln!(
                out,
                "# {name},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                m.n, m.mean, m.sd, m.min, m.q1, m.median, m.q3, m.max
            );
        }
    }
    out
}
