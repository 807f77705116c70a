//! End-to-end steps shared by the command-line tool and the HTTP service,
//! so that both produce byte-identical outputs for the same inputs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::distance_map::DistanceMap;
use crate::elastic::{register_elastic, ElasticOutcome};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{
    cloud_from_stack, cloud_from_stack_with_sigma, ContourStack, Image2D, PlanarContour, Point3, PointCloud,
    VolumeGrid,
};
use crate::io::{self, Report, RunConfig, SessionFile};
use crate::metrics::{self, LandmarkSeries, SurfaceDiff, UrethraReport};
use crate::phantom::PhantomScene;
use crate::resample::{self, CrossPosition, Interp, OverlayPolyline, PlaneSpec};
use crate::rigid::{register_rigid, RigidOutcome};
use crate::transform::FusionTransform;
use crate::volumetry::{self, DvhCurve, PointSourceDose, Seed, SeedImplant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegistrationMode {
    Rigid,
    #[default]
    Elastic,
}

impl fmt::Display for RegistrationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rigid => "rigid",
            Self::Elastic => "elastic",
        })
    }
}

impl FromStr for RegistrationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rigid" => Ok(Self::Rigid),
            "elastic" => Ok(Self::Elastic),
            _ => Err(Error::InvalidInput(format!("mode must be rigid|elastic, got `{s}`"))),
        }
    }
}

/// Loaded session inputs.
#[derive(Debug, Clone)]
pub struct Scene {
    pub trus_stack: ContourStack,
    pub mri_stacks: [ContourStack; 3],
    pub mri_volume: VolumeGrid,
    pub trus_volume: Option<VolumeGrid>,
    pub trus_landmarks: Option<LandmarkSeries>,
    pub mri_landmarks: Option<Vec<Point3>>,
    pub seeds: Option<SeedImplant>,
}

impl Scene {
    pub fn load(s: &SessionFile) -> Result<Self> {
        let vol = |h: &Path| io::read_volume(h, &io::raw_path_for(h));
        Ok(Self {
            trus_stack: io::read_contour_stack(&s.trus_stack)?,
            mri_stacks: [
                io::read_contour_stack(&s.mri_stacks[0])?,
                io::read_contour_stack(&s.mri_stacks[1])?,
                io::read_contour_stack(&s.mri_stacks[2])?,
            ],
            mri_volume: vol(&s.mri_volume)?,
            trus_volume: s.trus_volume.as_deref().map(vol).transpose()?,
            trus_landmarks: s.trus_landmarks.as_deref().map(io::read_landmarks).transpose()?,
            mri_landmarks: s.mri_landmarks.as_deref().map(io::read_centers).transpose()?,
            seeds: s.seeds.as_deref().map(io::read_seeds).transpose()?,
        })
    }

    pub fn from_phantom(p: &PhantomScene, seeds: Option<SeedImplant>) -> Self {
        Self {
            trus_stack: p.trus_stack.clone(),
            mri_stacks: p.mri_stacks.clone(),
            mri_volume: p.mri_volume.clone(),
            trus_volume: Some(p.trus_volume.clone()),
            trus_landmarks: Some(p.trus_landmarks.clone()),
            mri_landmarks: Some(p.mri_landmarks.clone()),
            seeds,
        }
    }

    pub fn mri_cloud(&self) -> Result<PointCloud> {
        mri_cloud(&self.mri_stacks)
    }

    pub fn mri_stack_refs(&self) -> [&ContourStack; 3] {
        [&self.mri_stacks[0], &self.mri_stacks[1], &self.mri_stacks[2]]
    }
}

pub fn mri_cloud(stacks: &[ContourStack]) -> Result<PointCloud> {
    let clouds = stacks
        .iter()
        .map(|s| cloud_from_stack(s, 1.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(PointCloud::concat(&clouds))
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub rigid: RigidOutcome,
    pub elastic: Option<ElasticOutcome>,
}

impl RegistrationResult {
    /// Elastic result when available and requested, rigid otherwise.
    pub fn transform(&self, mode: RegistrationMode) -> FusionTransform {
        match (&self.elastic, mode) {
            (Some(e), RegistrationMode::Elastic) => e.transform.clone(),
            _ => FusionTransform::rigid(self.rigid.transform),
        }
    }

    pub fn report(&self, mode: RegistrationMode, source_points: usize, target_points: usize) -> Report {
        let mut r = Report::new("registration");
        r.push("mode", mode)
            .push("source_points", source_points)
            .push("target_points", target_points)
            .push("rigid_iterations", self.rigid.report.iterations)
            .push("rigid_termination", format!("{:?}", self.rigid.report.termination))
            .push("rigid_energy", self.rigid.report.final_energy());
        r.push_stats("rigid_", &self.rigid.stats);
        let final_stats = match (&self.elastic, mode) {
            (Some(e), RegistrationMode::Elastic) => {
                r.push("elastic_regularizer", "membrane_first_order")
                    .push("elastic_levels", e.reports.len())
                    .push("elastic_iterations", e.reports.iter().map(|x| x.iterations).sum::<usize>())
                    .push("elastic_data_energy", e.data_energy)
                    .push("elastic_membrane_energy", e.membrane_energy)
                    .push(
                        "elastic_leaves",
                        e.transform.ffd.as_ref().map_or(0, |f| f.leaf_count()),
                    );
                r.push_stats("elastic_", &e.stats);
                &e.stats
            }
            _ => &self.rigid.stats,
        };
        r.push_stats("", final_stats);
        r
    }

    pub fn table(&self) -> String {
        let mut rows = vec![("rigid", &self.rigid.stats)];
        if let Some(e) = &self.elastic {
            rows.push(("elastic", &e.stats));
        }
        io::stats_table_csv(&rows)
    }
}

/// Rigid registration of the TRUS stack onto the MRI cloud, followed by the
/// elastic stage in elastic mode.
pub fn register(trus: &ContourStack, target: &PointCloud, cfg: &RunConfig, mode: RegistrationMode) -> Result<RegistrationResult> {
    cfg.validate()?;
    let source = cloud_from_stack_with_sigma(trus, 1.0, cfg.sigma)?;
    let map = DistanceMap::build(target, cfg.cell_size, cfg.margin, cfg.registration.exec)?;
    let rigid = register_rigid(&source, &map, &cfg.registration)?;
    let elastic = match mode {
        RegistrationMode::Rigid => None,
        RegistrationMode::Elastic => Some(register_elastic(
            &source,
            &map,
            rigid.transform,
            &cfg.registration,
            &cfg.elastic,
        )?),
    };
    Ok(RegistrationResult { rigid, elastic })
}

/// In-plane pixel pitch of images rendered without a TRUS volume.
pub const DEFAULT_PIXEL_SPACING: f64 = 0.5;
const FIELD_MARGIN: f64 = 10.0;

/// Image grid for TRUS slice `slice_index`: the TRUS volume's in-plane grid
/// when one is loaded, otherwise the contour bounds plus a margin.
pub fn plane_for_slice(trus: &ContourStack, trus_volume: Option<&VolumeGrid>, slice_index: i32) -> Result<PlaneSpec> {
    let c = trus
        .by_index(slice_index)
        .ok_or_else(|| Error::InvalidInput(format!("no TRUS slice {slice_index}")))?;
    if let Some(v) = trus_volume {
        let s = v.spacing();
        if s[0] == s[1] {
            let o = v.origin();
            return PlaneSpec::new(slice_index, c.z, v.dims()[0], v.dims()[1], s[0], o.x, o.y);
        }
    }
    let (mut lo, mut hi) = c.bounds();
    for other in trus.contours() {
        let (l, h) = other.bounds();
        lo = lo.inf(&l);
        hi = hi.sup(&h);
    }
    let ox = (lo.x - FIELD_MARGIN).floor();
    let oy = (lo.y - FIELD_MARGIN).floor();
    let w = ((hi.x + FIELD_MARGIN - ox) / DEFAULT_PIXEL_SPACING).ceil() as usize + 1;
    let h = ((hi.y + FIELD_MARGIN - oy) / DEFAULT_PIXEL_SPACING).ceil() as usize + 1;
    PlaneSpec::new(slice_index, c.z, w, h, DEFAULT_PIXEL_SPACING, ox, oy)
}

/// TRUS image along `plane`: the TRUS volume when present, otherwise a
/// rendering of the contour (interior 160, exterior 40).
pub fn trus_image(plane: &PlaneSpec, trus_volume: Option<&VolumeGrid>, contour: Option<&PlanarContour>) -> Image2D {
    if let Some(v) = trus_volume {
        return resample::reslice(v, plane, &FusionTransform::identity(), Interp::Nearest);
    }
    let mut img = Image2D::filled(plane.width, plane.height, plane.pixel_spacing, 40);
    if let Some(c) = contour {
        for y in 0..plane.height {
            for x in 0..plane.width {
                let p = plane.pixel_position(x as f64, y as f64);
                if c.contains(p.x, p.y) {
                    img.set(x, y, 160);
                }
            }
        }
    }
    img
}

#[derive(Debug, Clone)]
pub struct RenderedSlice {
    pub plane: PlaneSpec,
    pub composite: Image2D,
    pub overlay: Vec<OverlayPolyline>,
}

/// Quadrant composite and MRI contour overlay of one TRUS slice. Without an
/// explicit cross it sits at the image centre.
pub fn render_slice(
    scene: &Scene,
    f: &FusionTransform,
    slice_index: i32,
    cross: Option<CrossPosition>,
    projection_tolerance: f64,
) -> Result<RenderedSlice> {
    let plane = plane_for_slice(&scene.trus_stack, scene.trus_volume.as_ref(), slice_index)?;
    let cross = match cross {
        Some(c) => CrossPosition::new(c.cx, c.cy, plane.width, plane.height)?,
        None => CrossPosition {
            cx: plane.width / 2,
            cy: plane.height / 2,
        },
    };
    let trus = trus_image(&plane, scene.trus_volume.as_ref(), scene.trus_stack.by_index(slice_index));
    let mri = resample::reslice(&scene.mri_volume, &plane, f, Interp::Trilinear);
    let composite = resample::compose_quadrants(&trus, &mri, cross)?;
    let overlay = resample::project_mri_contours(&scene.mri_stack_refs(), &plane, f, projection_tolerance);
    Ok(RenderedSlice {
        plane,
        composite,
        overlay,
    })
}

/// Residual statistics of the TRUS stack under `f` plus, when landmarks are
/// loaded, per-slice lumen distances.
pub fn metrics_report(
    trus: &ContourStack,
    target: &PointCloud,
    f: &FusionTransform,
    cfg: &RunConfig,
    landmarks: Option<(&LandmarkSeries, &[Point3])>,
) -> Result<(Report, Option<UrethraReport>)> {
    let source = cloud_from_stack_with_sigma(trus, 1.0, cfg.sigma)?;
    let map = DistanceMap::build(target, cfg.cell_size, cfg.margin, cfg.registration.exec)?;
    let stats = metrics::residual_stats(&source, &map, f)?;
    let mut r = Report::new("metrics");
    r.push("source_points", source.len());
    r.push_stats("residual_", &stats);
    let urethra = match landmarks {
        None => None,
        Some((series, centers)) => {
            let u = metrics::urethra_distance(series, centers, f)?;
            r.push("urethra_slices", u.per_slice.len());
            r.push_stats("urethra_", &u.stats);
            r.push_stats("urethra_in_plane_", &u.in_plane_stats);
            if u.per_slice.len() >= 3 {
                r.push("urethra_apical_gradient", metrics::apical_gradient(&u.series())?);
            }
            Some(u)
        }
    };
    Ok((r, urethra))
}

/// Volumes, deltas, slice-count changes and per-slice surface differences
/// between two TRUS stacks.
pub fn volume_report(
    before: &ContourStack,
    after: &ContourStack,
    formula: volumetry::VolumeFormula,
) -> Result<(Report, SurfaceDiff)> {
    let v0 = volumetry::stack_volume_with(before, formula)?;
    let v1 = volumetry::stack_volume_with(after, formula)?;
    let pct = volumetry::percent_change(v0, v1)?;
    let (apex, base) = metrics::slice_count_delta(before, after)?;
    let diff = metrics::surface_diff(before, after)?;
    let mut r = Report::new("volume");
    r.push("v_before_cc", v0)
        .push("v_after_cc", v1)
        .push("delta_cc", v1 - v0)
        .push("delta_pct", pct)
        .push("slices_added_apex", apex)
        .push("slices_added_base", base)
        .push("slice_count_before", before.len())
        .push("slice_count_after", after.len());
    r.push_stats("surface_signed_cm2_", &diff.signed);
    r.push_stats("surface_abs_cm2_", &diff.absolute);
    Ok((r, diff))
}

/// `start:stop:step` dose grid in Gy.
pub fn parse_bins(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::InvalidInput(format!("bins must be start:stop:step, got `{spec}`")))?;
    match nums.as_slice() {
        [a, b, c] => volumetry::bin_grid(*a, *b, *c),
        _ => Err(Error::InvalidInput(format!("bins must be start:stop:step, got `{spec}`"))),
    }
}

pub const DEFAULT_BINS: &str = "0:400:1";
pub const DEFAULT_PITCH: f64 = 1.0;

pub fn dvh(implant: &SeedImplant, target: &ContourStack, cfg: &RunConfig, bins: &[f64], pitch: f64, exec: Exec) -> Result<DvhCurve> {
    let model = PointSourceDose {
        implant: implant.clone(),
        kernel: cfg.kernel,
    };
    volumetry::compute_dvh(&model, target, bins, pitch, exec)
}

/// Seeds on a 10 mm in-plane lattice inside every other TRUS contour,
/// strength 5.
pub fn lattice_implant(trus: &ContourStack) -> Result<SeedImplant> {
    let mut seeds = Vec::new();
    for c in trus.contours().iter().step_by(2) {
        let (lo, hi) = c.bounds();
        let mut y = (lo.y / 10.0).ceil() * 10.0 - 5.0;
        while y <= hi.y {
            let mut x = (lo.x / 10.0).ceil() * 10.0 - 5.0;
            while x <= hi.x {
                if c.contains(x, y) {
                    seeds.push(Seed {
                        position: Point3::new(x, y, c.z),
                        strength: 5.0,
                    });
                }
                x += 10.0;
            }
            y += 10.0;
        }
    }
    SeedImplant::new(seeds)
}

/// Writes every file of a phantom scene into `dir` using the standard names
/// referenced by [`io::standard_session_text`], plus the ground truth.
pub fn export_phantom(p: &PhantomScene, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_contour_stack(&dir.join("trus.stack"), &p.trus_stack)?;
    for (s, name) in p.mri_stacks.iter().zip(["mri_transverse", "mri_sagittal", "mri_coronal"]) {
        io::write_contour_stack(&dir.join(format!("{name}.stack")), s)?;
    }
    io::write_volume(&dir.join("mri.hdr"), &dir.join("mri.raw"), &p.mri_volume)?;
    io::write_volume(&dir.join("trus.hdr"), &dir.join("trus.raw"), &p.trus_volume)?;
    io::write_landmarks(&dir.join("trus.landmarks"), &p.trus_landmarks)?;
    io::write_centers(&dir.join("mri.centers"), &p.mri_landmarks)?;
    io::write_seeds(&dir.join("implant.seeds"), &lattice_implant(&p.trus_stack)?)?;
    io::write_transform(&dir.join("ground_truth.transform"), &p.ground_truth)?;
    std::fs::write(dir.join("phantom.spec"), io::format_phantom_spec(&p.spec)).map_err(|e| Error::io(dir, e))?;
    std::fs::write(
        dir.join("session.txt"),
        io::standard_session_text(RegistrationMode::Elastic),
    )
    .map_err(|e| Error::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomSpec};

    #[test]
    fn bins_parse() {
        assert_eq!(parse_bins("0:2:1").unwrap(), vec![0.0, 1.0, 2.0]);
        assert!(parse_bins("0:2").is_err());
        assert!(parse_bins("0:x:1").is_err());
    }

    #[test]
    fn modes() {
        assert_eq!("rigid".parse::<RegistrationMode>().unwrap(), RegistrationMode::Rigid);
        assert!("affine".parse::<RegistrationMode>().is_err());
    }

    #[test]
    fn render_uses_volume_grid() {
        let p = generate_phantom(&PhantomSpec::default()).unwrap();
        let scene = Scene::from_phantom(&p, None);
        let r = render_slice(&scene, &p.ground_truth, 0, None, 1.5).unwrap();
        assert_eq!(r.composite.width, p.trus_volume.dims()[0]);
        assert!(!r.overlay.is_empty());
        assert!(render_slice(&scene, &p.ground_truth, 99, None, 1.5).is_err());
        let implant = lattice_implant(&p.trus_stack).unwrap();
        assert!(implant.seeds().len() >= 5);
    }
}
