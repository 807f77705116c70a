//! Validation metrics: residual statistics, urethra landmark distances,
//! slice areas, surface differences and slice-count deltas.

use crate::distance_map::DistanceMap;
use crate::error::{Error, Result};
use crate::geometry::{ContourStack, Modality, PlanarContour, Point2, Point3, PointCloud, SPACING_TOLERANCE};
use crate::rigid::ResidualStats;
use crate::transform::FusionTransform;

/// Maximum distance (mm) between an MRI lumen centre and a transformed TRUS
/// plane for the two to be matched.
pub const LANDMARK_MATCH_TOLERANCE: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkEntry {
    pub slice_index: i32,
    pub z: f64,
    pub center: Point2,
}

/// Per-slice lumen centres in one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSeries {
    pub modality: Modality,
    entries: Vec<LandmarkEntry>,
}

impl LandmarkSeries {
    pub fn new(modality: Modality, entries: Vec<LandmarkEntry>) -> Result<Self> {
        if entries.windows(2).any(|w| w[1].slice_index <= w[0].slice_index) {
            return Err(Error::InvalidInput("landmark slice indices must be unique and increasing".into()));
        }
        Ok(Self { modality, entries })
    }

    pub fn entries(&self) -> &[LandmarkEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Residual distances of `f(source)` to the target behind `map`.
pub fn residual_stats(source: &PointCloud, map: &DistanceMap, f: &FusionTransform) -> Result<ResidualStats> {
    if source.is_empty() {
        return Err(Error::EmptyInput("source cloud"));
    }
    let d = crate::rigid::residual_distances(f, source, map, Default::default());
    ResidualStats::from_values(d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceDistance {
    pub slice_index: i32,
    /// 3-D distance in the MRI frame.
    pub distance: f64,
    /// Component within the TRUS image plane.
    pub in_plane: f64,
    /// Index of the matched MRI centre.
    pub mri_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrethraReport {
    pub per_slice: Vec<SliceDistance>,
    pub stats: ResidualStats,
    pub in_plane_stats: ResidualStats,
}

impl UrethraReport {
    pub fn series(&self) -> Vec<(i32, f64)> {
        self.per_slice.iter().map(|s| (s.slice_index, s.distance)).collect()
    }
}

/// Distance between each TRUS lumen centre, mapped by `f`, and the MRI
/// centre lying closest to that slice's transformed plane (ties go to the
/// lower index).
pub fn urethra_distance(trus: &LandmarkSeries, mri_centers: &[Point3], f: &FusionTransform) -> Result<UrethraReport> {
    if trus.is_empty() {
        return Err(Error::EmptyInput("TRUS landmarks"));
    }
    let pulled: Vec<Point3> = mri_centers.iter().map(|c| f.inverse_apply(c)).collect();
    let mut per_slice = Vec::with_capacity(trus.len());
    for e in trus.entries() {
        let best = pulled
            .iter()
            .enumerate()
            .map(|(i, q)| (i, (q.z - e.z).abs()))
            .fold(None::<(usize, f64)>, |best, cand| match best {
                Some(b) if b.1 <= cand.1 => Some(b),
                _ => Some(cand),
            });
        let Some((idx, _)) = best.filter(|b| b.1 <= LANDMARK_MATCH_TOLERANCE) else {
            return Err(Error::UnmatchedSlice(e.slice_index));
        };
        let p = trus.modality.embed(e.center.x, e.center.y, e.z);
        let distance = (f.apply(&p) - mri_centers[idx]).norm();
        let q = pulled[idx];
        let (pu, pv, _) = trus.modality.flatten(&p);
        let (qu, qv, _) = trus.modality.flatten(&q);
        let in_plane = (pu - qu).hypot(pv - qv);
        per_slice.push(SliceDistance {
            slice_index: e.slice_index,
            distance,
            in_plane,
            mri_index: idx,
        });
    }
    let stats = ResidualStats::from_values(per_slice.iter().map(|s| s.distance).collect())?;
    let in_plane_stats = ResidualStats::from_values(per_slice.iter().map(|s| s.in_plane).collect())?;
    Ok(UrethraReport {
        per_slice,
        stats,
        in_plane_stats,
    })
}

/// Least-squares slope (mm per slice) of distance against slice index,
/// ordered apex (low index) to base.
pub fn apical_gradient(series: &[(i32, f64)]) -> Result<f64> {
    if series.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: series.len(),
        });
    }
    let mut s = series.to_vec();
    s.sort_by_key(|e| e.0);
    let n = s.len() as f64;
    let mx = s.iter().map(|e| e.0 as f64).sum::<f64>() / n;
    let my = s.iter().map(|e| e.1).sum::<f64>() / n;
    let sxx: f64 = s.iter().map(|e| (e.0 as f64 - mx).powi(2)).sum();
    let sxy: f64 = s.iter().map(|e| (e.0 as f64 - mx) * (e.1 - my)).sum();
    Ok(sxy / sxx)
}

/// Shoelace area in cm².
pub fn slice_area(c: &PlanarContour) -> Result<f64> {
    let pts = c.points();
    if pts.len() < 3 {
        return Err(Error::DegeneratePolygon(format!("slice {}: {} vertices", c.slice_index, pts.len())));
    }
    let twice: f64 = (0..pts.len())
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            a.x * b.y - b.x * a.y
        })
        .sum();
    Ok(twice.abs() * 0.5 / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceDifference {
    pub slice_index: i32,
    pub signed: f64,
    pub absolute: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceDiff {
    pub per_slice: Vec<SliceDifference>,
    pub signed: ResidualStats,
    pub absolute: ResidualStats,
}

/// Per-slice `b − a` area differences (cm²), matched on slice index. A
/// slice present on one side only contributes its full area.
pub fn surface_diff(a: &ContourStack, b: &ContourStack) -> Result<SurfaceDiff> {
    let mut indices: Vec<i32> = a
        .contours()
        .iter()
        .chain(b.contours())
        .map(|c| c.slice_index)
        .collect();
    indices.sort_unstable();
    indices.dedup();
    if indices.is_empty() {
        return Err(Error::EmptyInput("contour stacks"));
    }
    let area = |s: &ContourStack, i: i32| -> Result<f64> { s.by_index(i).map(slice_area).unwrap_or(Ok(0.0)) };
    let per_slice = indices
        .into_iter()
        .map(|i| {
            let signed = area(b, i)? - area(a, i)?;
            Ok(SliceDifference {
                slice_index: i,
                signed,
                absolute: signed.abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SurfaceDiff {
        signed: ResidualStats::from_values(per_slice.iter().map(|d| d.signed).collect())?,
        absolute: ResidualStats::from_values(per_slice.iter().map(|d| d.absolute).collect())?,
        per_slice,
    })
}

/// Signed slice counts gained at the apex (below the original lowest plane)
/// and at the base (above the original highest plane); removals are
/// negative.
pub fn slice_count_delta(before: &ContourStack, after: &ContourStack) -> Result<(i32, i32)> {
    if (before.spacing() - after.spacing()).abs() > SPACING_TOLERANCE {
        return Err(Error::SpacingMismatch(before.spacing(), after.spacing()));
    }
    if before.modality != after.modality {
        return Err(Error::InvalidInput(format!(
            "modality mismatch: {} vs {}",
            before.modality, after.modality
        )));
    }
    let zs = |s: &ContourStack| s.contours().iter().map(|c| c.z).collect::<Vec<_>>();
    let (zb, za) = (zs(before), zs(after));
    let count = |v: &[f64], pred: &dyn Fn(f64) -> bool| v.iter().filter(|z| pred(**z)).count() as i32;
    let tol = SPACING_TOLERANCE;
    match (zb.first(), zb.last(), za.first(), za.last()) {
        (Some(&b0), Some(&b1), Some(&a0), Some(&a1)) => {
            let apex = count(&za, &|z| z < b0 - tol) - count(&zb, &|z| z < a0 - tol);
            let base = count(&za, &|z| z > b1 + tol) - count(&zb, &|z| z > a1 + tol);
            Ok((apex, base))
        }
        (None, None, Some(_), Some(_)) => Ok((za.len() as i32, 0)),
        (Some(_), Some(_), None, None) => Ok((-(zb.len() as i32), 0)),
        _ => Ok((0, 0)),
    }
}
