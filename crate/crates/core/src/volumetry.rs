//! Slice-stack volumetry and a deliberately simplified point-source dose
//! model feeding cumulative DVHs and D90.
//!
//! The dose kernel is NOT TG-43: `strength · exp(−μr) / r²` per seed with `r`
//! in cm. Only relative and directional DVH behaviour is meaningful.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{ContourStack, PlanarContour, Point2, Point3};
use crate::metrics::slice_area;

/// Banner carried by every dose report.
pub const SIMPLIFIED_KERNEL_BANNER: &str = "SIMPLIFIED KERNEL: point-source inverse-square with exponential attenuation, not TG-43";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VolumeFormula {
    /// `Σ (Sᵢ + Sᵢ₊₁ + √(Sᵢ Sᵢ₊₁)) / 3 · d`, exact for conical frusta.
    #[default]
    Frustum,
    /// `Σ (Sᵢ + Sᵢ₊₁) / 2 · d`.
    SimpleAverage,
}

/// Stack volume in cc (cm³).
pub fn stack_volume(stack: &ContourStack) -> Result<f64> {
    stack_volume_with(stack, VolumeFormula::Frustum)
}

pub fn stack_volume_with(stack: &ContourStack, formula: VolumeFormula) -> Result<f64> {
    if stack.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: stack.len(),
        });
    }
    let areas = stack
        .contours()
        .iter()
        .map(slice_area)
        .collect::<Result<Vec<_>>>()?;
    Ok(volume_from_areas(&areas, stack.spacing() / 10.0, formula))
}

/// Volume from consecutive slice areas (cm²) and spacing (cm).
pub fn volume_from_areas(areas: &[f64], spacing_cm: f64, formula: VolumeFormula) -> f64 {
    areas
        .windows(2)
        .map(|w| match formula {
            VolumeFormula::Frustum => (w[0] + w[1] + (w[0] * w[1]).sqrt()) / 3.0,
            VolumeFormula::SimpleAverage => (w[0] + w[1]) / 2.0,
        })
        .sum::<f64>()
        * spacing_cm
}

/// `100 · (v1 − v0) / v0`.
pub fn percent_change(v0: f64, v1: f64) -> Result<f64> {
    if !(v0 > 0.0) {
        return Err(Error::InvalidInput(format!("reference volume must be > 0, got {v0}")));
    }
    Ok(100.0 * (v1 - v0) / v0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seed {
    pub position: Point3,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeedImplant {
    seeds: Vec<Seed>,
}

impl SeedImplant {
    pub fn new(seeds: Vec<Seed>) -> Result<Self> {
        if let Some(s) = seeds.iter().find(|s| !(s.strength > 0.0) || !s.strength.is_finite()) {
            return Err(Error::InvalidInput(format!("seed strength must be > 0, got {}", s.strength)));
        }
        Ok(Self { seeds })
    }

    pub fn seeds(&self) -> &[Seed] {
        &self.seeds
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoseKernelConfig {
    pub attenuation_per_cm: f64,
    /// Radius below which the kernel is evaluated at this radius.
    pub min_radius_cm: f64,
}

impl Default for DoseKernelConfig {
    fn default() -> Self {
        Self {
            attenuation_per_cm: 0.10,
            min_radius_cm: 0.05,
        }
    }
}

/// Dose (Gy) at `p`, summed over seeds.
pub fn dose_at(implant: &SeedImplant, p: &Point3, kernel: &DoseKernelConfig) -> f64 {
    implant
        .seeds()
        .iter()
        .map(|s| {
            let r = ((p - s.position).norm() / 10.0).max(kernel.min_radius_cm);
            s.strength * (-kernel.attenuation_per_cm * r).exp() / (r * r)
        })
        .sum()
}

/// Anything that can report a dose at a point.
pub trait DoseModel: Sync {
    fn dose_at(&self, p: &Point3) -> f64;
}

#[derive(Debug, Clone)]
pub struct PointSourceDose {
    pub implant: SeedImplant,
    pub kernel: DoseKernelConfig,
}

impl DoseModel for PointSourceDose {
    fn dose_at(&self, p: &Point3) -> f64 {
        dose_at(&self.implant, p, &self.kernel)
    }
}

/// Same dose everywhere.
#[derive(Debug, Clone, Copy)]
pub struct UniformDose(pub f64);

impl DoseModel for UniformDose {
    fn dose_at(&self, _: &Point3) -> f64 {
        self.0
    }
}

/// Cumulative dose-volume histogram: fraction of the target receiving at
/// least each bin dose.
#[derive(Debug, Clone, PartialEq)]
pub struct DvhCurve {
    pub dose_bins: Vec<f64>,
    pub cumulative_fraction: Vec<f64>,
}

impl DvhCurve {
    pub fn new(dose_bins: Vec<f64>, cumulative_fraction: Vec<f64>) -> Result<Self> {
        if dose_bins.is_empty() || dose_bins.len() != cumulative_fraction.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} bins and {} fractions",
                dose_bins.len(),
                cumulative_fraction.len()
            )));
        }
        if dose_bins.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("dose bins must be strictly ascending".into()));
        }
        if cumulative_fraction.windows(2).any(|w| w[1] > w[0])
            || cumulative_fraction.iter().any(|f| !(0.0..=1.0).contains(f))
        {
            return Err(Error::InvalidInput("cumulative fractions must lie in [0,1] and not increase".into()));
        }
        Ok(Self {
            dose_bins,
            cumulative_fraction,
        })
    }

    /// Largest dose still covering `fraction` of the target, linearly
    /// interpolated between bins.
    pub fn dose_covering(&self, fraction: f64) -> f64 {
        let f = &self.cumulative_fraction;
        let d = &self.dose_bins;
        let Some(i) = f.iter().rposition(|&v| v >= fraction) else {
            return d[0];
        };
        if i + 1 == f.len() || f[i] == f[i + 1] {
            return d[i];
        }
        d[i] + (f[i] - fraction) / (f[i] - f[i + 1]) * (d[i + 1] - d[i])
    }

    /// Fraction of the target receiving at least `dose`, interpolated.
    pub fn fraction_at(&self, dose: f64) -> f64 {
        let d = &self.dose_bins;
        let f = &self.cumulative_fraction;
        if dose <= d[0] {
            return f[0];
        }
        match d.iter().position(|&b| b >= dose) {
            None => *f.last().unwrap(),
            Some(j) => {
                let t = (dose - d[j - 1]) / (d[j] - d[j - 1]);
                f[j - 1] + t * (f[j] - f[j - 1])
            }
        }
    }
}

pub fn d90(curve: &DvhCurve) -> f64 {
    curve.dose_covering(0.90)
}

/// Uniform bin grid `start, start+step, … ≤ stop`.
pub fn bin_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) {
        return Err(Error::InvalidInput(format!("bad bin grid {start}:{stop}:{step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

/// Sample points of the rasterized target: a regular lattice at `pitch`
/// covering the contours in-plane and the span `[z_first, z_last]` along
/// the stack axis, each sample taking the contour of its nearest slice.
pub fn rasterize_target(target: &ContourStack, pitch: f64, exec: Exec) -> Result<Vec<Point3>> {
    if target.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: target.len(),
        });
    }
    if !(pitch > 0.0) || !pitch.is_finite() {
        return Err(Error::InvalidInput(format!("sampling pitch must be > 0, got {pitch}")));
    }
    let contours = target.contours();
    let (mut lo, mut hi) = contours[0].bounds();
    for c in contours {
        let (l, h) = c.bounds();
        lo = lo.inf(&l);
        hi = hi.sup(&h);
    }
    let z0 = contours[0].z;
    let extent = contours[contours.len() - 1].z - z0;
    let nz = ((extent / pitch).round() as usize).max(1);
    let dz = extent / nz as f64;
    let nx = ((hi.x - lo.x) / pitch).ceil() as usize;
    let ny = ((hi.y - lo.y) / pitch).ceil() as usize;
    let modality = target.modality;
    let slabs = exec.map_range(nz, |k| {
        let z = z0 + (k as f64 + 0.5) * dz;
        let nearest = (((z - z0) / target.spacing()).round() as usize).min(contours.len() - 1);
        let c: &PlanarContour = &contours[nearest];
        let mut pts = Vec::new();
        for j in 0..ny {
            let y = lo.y + (j as f64 + 0.5) * pitch;
            for i in 0..nx {
                let x = lo.x + (i as f64 + 0.5) * pitch;
                if c.contains(x, y) {
                    pts.push(modality.embed(x, y, z));
                }
            }
        }
        pts
    });
    Ok(slabs.into_iter().flatten().collect())
}

/// Cumulative DVH of `dose` over the rasterized `target`. Bins must start at
/// 0 Gy and ascend strictly.
pub fn compute_dvh(dose: &dyn DoseModel, target: &ContourStack, bins: &[f64], pitch: f64, exec: Exec) -> Result<DvhCurve> {
    if bins.first() != Some(&0.0) {
        return Err(Error::InvalidInput("dose bins must start at 0 Gy".into()));
    }
    let samples = rasterize_target(target, pitch, exec)?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("rasterized target"));
    }
    let mut doses = exec.map_slice(&samples, |p| dose.dose_at(p));
    doses.sort_by(f64::total_cmp);
    let n = doses.len() as f64;
    let fractions = bins
        .iter()
        .map(|b| {
            let below = doses.partition_point(|d| d < b);
            (doses.len() - below) as f64 / n
        })
        .collect();
    DvhCurve::new(bins.to_vec(), fractions)
}

/// Outward offset of a simple polygon by `distance` mm: the Minkowski sum
/// with a disc, round joins. Pockets the offset closes off are filled.
pub fn offset_contour(c: &PlanarContour, distance: f64) -> Result<PlanarContour> {
    use geo::{Area, Buffer};
    if !(distance >= 0.0) || !distance.is_finite() {
        return Err(Error::InvalidInput(format!("dilation distance must be >= 0, got {distance}")));
    }
    if distance == 0.0 {
        return Ok(c.clone());
    }
    let ring: Vec<geo::Coord<f64>> = c.points().iter().map(|p| geo::coord! { x: p.x, y: p.y }).collect();
    let poly = geo::Polygon::new(geo::LineString::new(ring), vec![]);
    let grown = poly
        .buffer(distance)
        .0
        .into_iter()
        .max_by(|a, b| a.unsigned_area().total_cmp(&b.unsigned_area()))
        .ok_or_else(|| Error::DegeneratePolygon(format!("slice {}: empty offset", c.slice_index)))?;
    let mut out: Vec<Point2> = grown.exterior().coords().map(|q| Point2::new(q.x, q.y)).collect();
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    PlanarContour::new(c.slice_index, c.z, out)
}

/// Every contour offset outward by `distance` mm.
pub fn dilate_stack(stack: &ContourStack, distance: f64) -> Result<ContourStack> {
    let contours = stack
        .contours()
        .iter()
        .map(|c| offset_contour(c, distance))
        .collect::<Result<Vec<_>>>()?;
    ContourStack::new(stack.modality, stack.spacing(), contours)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Modality;
    use std::f64::consts::PI;

    fn circle(idx: i32, z: f64, r: f64, n: usize) -> PlanarContour {
        let pts = (0..n)
            .map(|i| {
                let t = i as f64 * std::f64::consts::TAU / n as f64;
                Point2::new(r * t.cos(), r * t.sin())
            })
            .collect();
        PlanarContour::new(idx, z, pts).unwrap()
    }

    fn rect(idx: i32, z: f64, w: f64, h: f64) -> PlanarContour {
        PlanarContour::new(
            idx,
            z,
            vec![Point2::new(0.0, 0.0), Point2::new(w, 0.0), Point2::new(w, h), Point2::new(0.0, h)],
        )
        .unwrap()
    }

    #[test]
    fn prism_volume() {
        // 10 cm² = 1000 mm², spacing 5 mm
        let s = ContourStack::new(
            Modality::Trus,
            5.0,
            vec![rect(0, 0.0, 40.0, 25.0), rect(1, 5.0, 40.0, 25.0)],
        )
        .unwrap();
        assert!((stack_volume(&s).unwrap() - 5.0).abs() < 1e-12);
        let one = ContourStack::new(Modality::Trus, 5.0, vec![rect(0, 0.0, 1.0, 1.0)]).unwrap();
        assert!(matches!(stack_volume(&one), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn frustum_rule_is_exact() {
        let v = volume_from_areas(&[PI, 4.0 * PI], 3.0, VolumeFormula::Frustum);
        assert!((v - 7.0 * PI).abs() / (7.0 * PI) < 1e-12);
        let v = volume_from_areas(&[2.0, 4.0], 1.0, VolumeFormula::SimpleAverage);
        assert_eq!(v, 3.0);
    }

    #[test]
    fn percent_changes() {
        assert_eq!(percent_change(10.0, 10.0).unwrap(), 0.0);
        let p = percent_change(65.92, 67.97).unwrap();
        assert_eq!(format!("{p:.2}"), "3.11");
        assert!((percent_change(100.0, 148.24).unwrap() - 48.24).abs() < 1e-9);
        assert!(percent_change(0.0, 1.0).is_err());
    }

    #[test]
    fn dose_kernel() {
        let none = SeedImplant::default();
        assert_eq!(dose_at(&none, &Point3::origin(), &DoseKernelConfig::default()), 0.0);
        let one = SeedImplant::new(vec![Seed {
            position: Point3::origin(),
            strength: 1.0,
        }])
        .unwrap();
        let k = DoseKernelConfig {
            attenuation_per_cm: 0.0,
            ..Default::default()
        };
        assert!((dose_at(&one, &Point3::new(20.0, 0.0, 0.0), &k) - 0.25).abs() < 1e-15);
        // capped at r_min
        let capped = dose_at(&one, &Point3::origin(), &k);
        assert!((capped - 1.0 / 0.0025).abs() < 1e-9);
        assert!(SeedImplant::new(vec![Seed {
            position: Point3::origin(),
            strength: 0.0
        }])
        .is_err());
    }

    #[test]
    fn d90_examples() {
        let bins = bin_grid(0.0, 300.0, 1.0).unwrap();
        let f: Vec<f64> = bins.iter().map(|d| (1.0 - d / 200.0).max(0.0)).collect();
        let curve = DvhCurve::new(bins.clone(), f).unwrap();
        assert!((d90(&curve) - 20.0).abs() < 1e-9);
        let coarse = DvhCurve::new(vec![0.0, 50.0, 100.0, 150.0], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(d90(&coarse), 150.0);
    }

    #[test]
    fn uniform_dose_dvh() {
        let stack = ContourStack::new(
            Modality::Trus,
            5.0,
            (0..4).map(|i| circle(i, i as f64 * 5.0, 15.0, 48)).collect(),
        )
        .unwrap();
        let bins = bin_grid(0.0, 300.0, 1.0).unwrap();
        let curve = compute_dvh(&UniformDose(150.0), &stack, &bins, 2.0, Exec::default()).unwrap();
        for (b, f) in curve.dose_bins.iter().zip(&curve.cumulative_fraction) {
            assert_eq!(*f, if *b <= 150.0 { 1.0 } else { 0.0 });
        }
        let d = d90(&curve);
        assert!((150.0..151.0).contains(&d), "{d}");
        assert!(compute_dvh(&UniformDose(1.0), &stack, &[1.0, 2.0], 2.0, Exec::default()).is_err());
    }

    #[test]
    fn offset_square() {
        let c = rect(0, 0.0, 10.0, 10.0);
        let big = offset_contour(&c, 1.0).unwrap();
        // 10×10 square grown by 1: 144 − (4 − π) mm²
        let expected = (144.0 - 4.0 + PI) / 100.0;
        assert!((slice_area(&big).unwrap() - expected).abs() < 2e-3);
        assert!(offset_contour(&c, -1.0).is_err());
    }
}
